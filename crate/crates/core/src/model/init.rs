//! Parameter initialization: centered uniform with scale 1/sqrt(fan_in) for
//! kernels, linear maps and their biases, PReLU slopes at 0.25, identity
//! layer norm. Non-zero bias draws keep the selector's zero-vector context
//! off the PReLU kink at the first iteration. Draws are keyed by parameter
//! name so stores are identical regardless of creation order.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Element, ParamStore, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const PRELU_INIT: f64 = 0.25;

fn name_seed(name: &str) -> u64 {
    // FNV-1a over the parameter name.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

pub fn uniform_tensor<E: Element>(
    shape: Vec<usize>,
    fan_in: usize,
    name: &str,
    seed: u64,
) -> Tensor<E> {
    let scale = 1.0 / (fan_in as f64).sqrt();
    let mut rng = Rng::from_seed(crate::rng::stream_seed(seed, &[name_seed(name)]));
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| E::from_f64(rng.range(-scale, scale)))
        .collect();
    Tensor::new(shape, data).unwrap()
}

pub fn linear<E: Element>(
    store: &mut ParamStore<E>,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    seed: u64,
) -> Result<()> {
    let wname = format!("{prefix}.weight");
    store.insert(wname.clone(), uniform_tensor(vec![in_dim, out_dim], in_dim, &wname, seed))?;
    let bname = format!("{prefix}.bias");
    store.insert(bname.clone(), uniform_tensor(vec![out_dim], in_dim, &bname, seed))?;
    Ok(())
}

pub fn conv<E: Element>(
    store: &mut ParamStore<E>,
    prefix: &str,
    kernel: usize,
    in_ch: usize,
    out_ch: usize,
    seed: u64,
) -> Result<()> {
    let kname = format!("{prefix}.kernel");
    store.insert(
        kname.clone(),
        uniform_tensor(vec![kernel, in_ch, out_ch], kernel * in_ch, &kname, seed),
    )?;
    let bname = format!("{prefix}.bias");
    store.insert(bname.clone(), uniform_tensor(vec![out_ch], kernel * in_ch, &bname, seed))?;
    Ok(())
}

pub fn prelu<E: Element>(store: &mut ParamStore<E>, prefix: &str, channels: usize) -> Result<()> {
    store.insert(
        format!("{prefix}.slope"),
        Tensor::full(vec![channels], E::from_f64(PRELU_INIT)),
    )
}

pub fn layer_norm<E: Element>(
    store: &mut ParamStore<E>,
    prefix: &str,
    channels: usize,
) -> Result<()> {
    store.insert(format!("{prefix}.norm_gain"), Tensor::full(vec![channels], E::ONE))?;
    store.insert(format!("{prefix}.norm_bias"), Tensor::zeros(vec![channels]))?;
    Ok(())
}

//! Two-hidden-layer fully-connected head: hidden layers use PReLU and layer
//! normalization, the output layer is a plain linear projection.

use crate::error::Result;
use crate::tensor::{BoundParams, Element, Graph, ParamStore, TensorRef};

use super::init;

#[derive(Clone, Debug)]
pub struct MlpSpec {
    pub name: String,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub hidden_layers: usize,
}

impl MlpSpec {
    pub fn new(name: &str, in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        MlpSpec {
            name: name.to_string(),
            in_dim,
            hidden_dim,
            out_dim,
            hidden_layers: 2,
        }
    }

    pub fn init_params<E: Element>(&self, store: &mut ParamStore<E>, seed: u64) -> Result<()> {
        let mut dim = self.in_dim;
        for layer in 0..self.hidden_layers {
            let prefix = format!("{}.h{layer}", self.name);
            init::linear(store, &prefix, dim, self.hidden_dim, seed)?;
            init::prelu(store, &prefix, self.hidden_dim)?;
            init::layer_norm(store, &prefix, self.hidden_dim)?;
            dim = self.hidden_dim;
        }
        init::linear(store, &format!("{}.out", self.name), dim, self.out_dim, seed)?;
        Ok(())
    }

    /// Apply to a `[T, in_dim]` matrix or a single `[in_dim]` vector.
    pub fn forward<E: Element>(
        &self,
        graph: &mut Graph<E>,
        params: &BoundParams,
        input: TensorRef,
    ) -> Result<TensorRef> {
        let mut h = input;
        for layer in 0..self.hidden_layers {
            let prefix = format!("{}.h{layer}", self.name);
            let w = params.get(&format!("{prefix}.weight"));
            let b = params.get(&format!("{prefix}.bias"));
            h = graph.linear(h, w, b)?;
            h = graph.prelu(h, params.get(&format!("{prefix}.slope")))?;
            h = graph.layer_norm(
                h,
                params.get(&format!("{prefix}.norm_gain")),
                params.get(&format!("{prefix}.norm_bias")),
                init::LAYER_NORM_EPS,
            )?;
        }
        let w = params.get(&format!("{}.out.weight", self.name));
        let b = params.get(&format!("{}.out.bias", self.name));
        graph.linear(h, w, b)
    }
}

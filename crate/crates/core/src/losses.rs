//! Training objectives: selector NLL, per-speaker per-frame VAD loss, and
//! the collar-aware VAD variant that zeroes terms near speaker turn
//! boundaries. All three divide by `T*N` regardless of masking.

use crate::data::FrameLabels;
use crate::error::{Error, Result};
use crate::model::EventClass;
use crate::tensor::{Element, Graph, Tensor, TensorRef};

/// Probabilities below this are clamped before the log so degenerate
/// posteriors can never produce -inf.
pub const LOG_CLAMP: f64 = 1e-12;

/// Frames excluded from the collar-aware loss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollarMask {
    excluded: Vec<bool>,
    radius_frames: usize,
}

impl CollarMask {
    pub fn excluded(&self) -> &[bool] {
        &self.excluded
    }

    pub fn radius_frames(&self) -> usize {
        self.radius_frames
    }

    pub fn n_excluded(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }

    pub fn all_excluded(&self) -> bool {
        !self.excluded.is_empty() && self.excluded.iter().all(|&e| e)
    }
}

/// A boundary exists at frame `t >= 1` iff any speaker's activity changes
/// between `t-1` and `t`; the exclusion window is the `2*radius` frames
/// symmetric about that transition instant: `t-radius ..= t+radius-1`.
pub fn collar_mask(labels: &FrameLabels, radius_frames: usize) -> CollarMask {
    let t_len = labels.n_frames();
    let mut excluded = vec![false; t_len];
    if radius_frames > 0 {
        for t in 1..t_len {
            let is_boundary = (0..labels.n_speakers())
                .any(|i| labels.active(i, t) != labels.active(i, t - 1));
            if is_boundary {
                let lo = t.saturating_sub(radius_frames);
                let hi = (t + radius_frames).min(t_len);
                for slot in &mut excluded[lo..hi] {
                    *slot = true;
                }
            }
        }
    }
    CollarMask { excluded, radius_frames }
}

/// Mean negative log probability of the true event class over all `N*T`
/// (iteration, frame) pairs. `posteriors[i]` is the `[T, 4]` row-stochastic
/// output of selector iteration `i`.
pub fn selector_nll<E: Element>(
    graph: &mut Graph<E>,
    posteriors: &[TensorRef],
    event_labels: &[Vec<EventClass>],
) -> Result<TensorRef> {
    if posteriors.is_empty() || posteriors.len() != event_labels.len() {
        return Err(Error::invalid(format!(
            "selector_nll: {} posterior sets vs {} label sets",
            posteriors.len(),
            event_labels.len()
        )));
    }
    let t_len = event_labels[0].len();
    let mut log_probs = Vec::with_capacity(posteriors.len());
    for (post, labels) in posteriors.iter().zip(event_labels) {
        if graph.shape(*post) != [t_len, 4] || labels.len() != t_len {
            return Err(Error::invalid(format!(
                "selector_nll: posterior shape {:?} vs {} labels (expected [{t_len}, 4])",
                graph.shape(*post),
                labels.len()
            )));
        }
        let indices: Vec<usize> = labels.iter().map(|e| *e as usize).collect();
        let picked = graph.select_class(*post, &indices)?;
        log_probs.push(graph.log_clamped(picked, LOG_CLAMP));
    }
    let all = graph.concat_last(&log_probs)?;
    let total = graph.sum_all(all);
    let count = posteriors.len() * t_len;
    Ok(graph.scale(total, -1.0 / count as f64))
}

/// `-(1/TN) sum log(sigmoid(logit * (2y - 1)))` over an `[N, T]` logit
/// matrix whose row `i` predicts the activity of `labels` row `i`.
pub fn vad_bce<E: Element>(
    graph: &mut Graph<E>,
    logits: TensorRef,
    labels: &FrameLabels,
) -> Result<TensorRef> {
    let (n, t_len) = check_vad_shapes(graph, logits, labels)?;
    let signs = graph.input(sign_tensor(labels));
    let aligned = graph.mul(logits, signs)?;
    let log_sig = graph.log_sigmoid(aligned);
    let total = graph.sum_all(log_sig);
    Ok(graph.scale(total, -1.0 / (n * t_len) as f64))
}

/// The collar-aware variant: terms on excluded frames contribute zero while
/// the `1/TN` normalization is unchanged. The boolean is set when every
/// frame is excluded (the loss is then exactly zero).
pub fn vad_bce_collar<E: Element>(
    graph: &mut Graph<E>,
    logits: TensorRef,
    labels: &FrameLabels,
    mask: &CollarMask,
) -> Result<(TensorRef, bool)> {
    let (n, t_len) = check_vad_shapes(graph, logits, labels)?;
    if mask.excluded.len() != t_len {
        return Err(Error::invalid(format!(
            "collar mask covers {} frames, labels have {t_len}",
            mask.excluded.len()
        )));
    }
    let signs = graph.input(sign_tensor(labels));
    let aligned = graph.mul(logits, signs)?;
    let log_sig = graph.log_sigmoid(aligned);
    let keep: Vec<E> = (0..n * t_len)
        .map(|idx| {
            if mask.excluded[idx % t_len] {
                E::ZERO
            } else {
                E::ONE
            }
        })
        .collect();
    let keep = graph.input(Tensor::new(vec![n, t_len], keep)?);
    let masked = graph.mul(log_sig, keep)?;
    let total = graph.sum_all(masked);
    let loss = graph.scale(total, -1.0 / (n * t_len) as f64);
    Ok((loss, mask.all_excluded()))
}

/// Unweighted sum of the selector and collar-aware VAD losses.
pub fn total_loss<E: Element>(
    graph: &mut Graph<E>,
    selector: TensorRef,
    vad_collar: TensorRef,
) -> Result<TensorRef> {
    graph.add(selector, vad_collar)
}

fn check_vad_shapes<E: Element>(
    graph: &Graph<E>,
    logits: TensorRef,
    labels: &FrameLabels,
) -> Result<(usize, usize)> {
    let shape = graph.shape(logits);
    let (n, t_len) = (labels.n_speakers(), labels.n_frames());
    if shape != [n, t_len] {
        return Err(Error::invalid(format!(
            "VAD logits shape {shape:?} does not match labels [{n}, {t_len}]"
        )));
    }
    Ok((n, t_len))
}

fn sign_tensor<E: Element>(labels: &FrameLabels) -> Tensor<E> {
    let (n, t_len) = (labels.n_speakers(), labels.n_frames());
    let mut data = Vec::with_capacity(n * t_len);
    for i in 0..n {
        for t in 0..t_len {
            data.push(if labels.active(i, t) { E::ONE } else { -E::ONE });
        }
    }
    Tensor::new(vec![n, t_len], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn labels_from_rows(rows: &[&[bool]]) -> FrameLabels {
        let names = (0..rows.len()).map(|i| format!("spk{}", i + 1)).collect();
        let mut labels = FrameLabels::new(names, rows[0].len(), 500.0);
        for (i, row) in rows.iter().enumerate() {
            labels.set_row(i, row);
        }
        labels
    }

    fn random_labels(rng: &mut Rng, n: usize, t_len: usize) -> FrameLabels {
        let rows: Vec<Vec<bool>> =
            (0..n).map(|_| (0..t_len).map(|_| rng.bool(0.5)).collect()).collect();
        let refs: Vec<&[bool]> = rows.iter().map(|r| r.as_slice()).collect();
        labels_from_rows(&refs)
    }

    // ── collar mask ─────────────────────────────────────────────────

    #[test]
    fn radius_zero_mask_is_empty() {
        let labels = labels_from_rows(&[&[false, true, false, true]]);
        let mask = collar_mask(&labels, 0);
        assert_eq!(mask.n_excluded(), 0);
    }

    #[test]
    fn single_boundary_fixture() {
        // T=10, one transition at t=5, radius 2 -> excluded {3,4,5,6}.
        let row = [false, false, false, false, false, true, true, true, true, true];
        let labels = labels_from_rows(&[&row]);
        let mask = collar_mask(&labels, 2);
        let expect: Vec<bool> = (0..10).map(|u| (3..=6).contains(&u)).collect();
        assert_eq!(mask.excluded(), expect.as_slice());
    }

    #[test]
    fn constant_labels_have_empty_mask() {
        let labels = labels_from_rows(&[&[true; 8], &[false; 8]]);
        for radius in [1, 3, 10] {
            assert_eq!(collar_mask(&labels, radius).n_excluded(), 0);
        }
    }

    #[test]
    fn mask_is_invariant_under_speaker_relabeling() {
        let mut rng = Rng::from_seed(5);
        for _ in 0..20 {
            let labels = random_labels(&mut rng, 2, 40);
            let swapped = labels.permuted(&[1, 0]);
            assert_eq!(collar_mask(&labels, 3), collar_mask(&swapped, 3));
        }
    }

    // ── selector NLL ────────────────────────────────────────────────

    #[test]
    fn uniform_posteriors_cost_ln4() {
        let mut g = Graph::<f64>::new();
        let t_len = 6;
        let post = g.input(Tensor::full(vec![t_len, 4], 0.25));
        let labels = vec![vec![EventClass::Silence; t_len]];
        let loss = selector_nll(&mut g, &[post], &labels).unwrap();
        assert!((g.scalar_value(loss) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_correct_posteriors_cost_zero() {
        let mut g = Graph::<f64>::new();
        let mut data = vec![0.0; 3 * 4];
        for t in 0..3 {
            data[t * 4 + EventClass::Overlap as usize] = 1.0;
        }
        let post = g.input(Tensor::new(vec![3, 4], data).unwrap());
        let labels = vec![vec![EventClass::Overlap; 3]];
        let loss = selector_nll(&mut g, &[post], &labels).unwrap();
        assert!(g.scalar_value(loss).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped_not_nan() {
        let mut g = Graph::<f64>::new();
        let post = g.input(Tensor::new(vec![1, 4], vec![0.0, 1.0, 0.0, 0.0]).unwrap());
        let labels = vec![vec![EventClass::NovelSingle]];
        let loss = selector_nll(&mut g, &[post], &labels).unwrap();
        let v = g.scalar_value(loss);
        assert!(v.is_finite());
        assert!((v - -LOG_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn selector_nll_matches_scalar_loop_oracle() {
        let mut rng = Rng::from_seed(17);
        let (n, t_len) = (4, 3);
        let mut g = Graph::<f64>::new();
        let mut posts = Vec::new();
        let mut labels = Vec::new();
        let mut raw = Vec::new();
        for _ in 0..n {
            let mut data = vec![0.0f64; t_len * 4];
            for row in data.chunks_exact_mut(4) {
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = rng.range(0.05, 1.0);
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            raw.push(data.clone());
            posts.push(g.input(Tensor::new(vec![t_len, 4], data).unwrap()));
            labels.push(
                (0..t_len)
                    .map(|_| match rng.below(4) {
                        0 => EventClass::NovelSingle,
                        1 => EventClass::SelectedSingle,
                        2 => EventClass::Overlap,
                        _ => EventClass::Silence,
                    })
                    .collect::<Vec<_>>(),
            );
        }
        let loss = selector_nll(&mut g, &posts, &labels).unwrap();

        let mut oracle = 0.0f64;
        for i in 0..n {
            for t in 0..t_len {
                oracle -= raw[i][t * 4 + labels[i][t] as usize].max(LOG_CLAMP).ln();
            }
        }
        oracle /= (n * t_len) as f64;
        assert!((g.scalar_value(loss) - oracle).abs() < 1e-6);
    }

    // ── VAD losses ──────────────────────────────────────────────────

    #[test]
    fn zero_logits_cost_ln2() {
        let mut g = Graph::<f64>::new();
        let labels = labels_from_rows(&[&[true, false, true], &[false, false, true]]);
        let logits = g.input(Tensor::zeros(vec![2, 3]));
        let loss = vad_bce(&mut g, logits, &labels).unwrap();
        assert!((g.scalar_value(loss) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_logits_cost_nearly_zero() {
        let mut g = Graph::<f64>::new();
        let labels = labels_from_rows(&[&[true, false], &[false, true]]);
        let data = vec![100.0, -100.0, -100.0, 100.0];
        let logits = g.input(Tensor::new(vec![2, 2], data).unwrap());
        let loss = vad_bce(&mut g, logits, &labels).unwrap();
        assert!(g.scalar_value(loss) < 1e-8);
    }

    #[test]
    fn vad_bce_matches_scalar_loop_oracle() {
        let mut rng = Rng::from_seed(23);
        let labels = random_labels(&mut rng, 2, 7);
        let data: Vec<f64> = (0..14).map(|_| rng.range(-4.0, 4.0)).collect();
        let mut g = Graph::<f64>::new();
        let logits = g.input(Tensor::new(vec![2, 7], data.clone()).unwrap());
        let loss = vad_bce(&mut g, logits, &labels).unwrap();

        let mut oracle = 0.0f64;
        for i in 0..2 {
            for t in 0..7 {
                let sign = if labels.active(i, t) { 1.0 } else { -1.0 };
                let z: f64 = data[i * 7 + t] * sign;
                // Stable log-sigmoid.
                let ls = if z >= 0.0 { -(-z).exp().ln_1p() } else { z - z.exp().ln_1p() };
                oracle -= ls;
            }
        }
        oracle /= 14.0;
        assert!((g.scalar_value(loss) - oracle).abs() < 1e-6);
    }

    #[test]
    fn radius_zero_collar_is_bitwise_identical_to_plain() {
        let mut rng = Rng::from_seed(31);
        for _ in 0..10 {
            let labels = random_labels(&mut rng, 2, 11);
            let data: Vec<f64> = (0..22).map(|_| rng.range(-5.0, 5.0)).collect();
            let mut g = Graph::<f64>::new();
            let logits = g.input(Tensor::new(vec![2, 11], data).unwrap());
            let plain = vad_bce(&mut g, logits, &labels).unwrap();
            let mask = collar_mask(&labels, 0);
            let (masked, all_excluded) =
                vad_bce_collar(&mut g, logits, &labels, &mask).unwrap();
            assert!(!all_excluded);
            let a = g.scalar_value(plain);
            let b = g.scalar_value(masked);
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn errors_inside_the_collar_contribute_nothing() {
        let row: Vec<bool> = (0..12).map(|t| t >= 6).collect();
        let labels = labels_from_rows(&[&row]);
        let mask = collar_mask(&labels, 2);
        // Perfect logits everywhere vs wildly wrong logits on excluded frames.
        let perfect: Vec<f64> =
            row.iter().map(|&a| if a { 50.0 } else { -50.0 }).collect();
        let mut corrupted = perfect.clone();
        for (t, slot) in corrupted.iter_mut().enumerate() {
            if mask.excluded()[t] {
                *slot = -*slot;
            }
        }
        let mut g = Graph::<f64>::new();
        let l_perfect = g.input(Tensor::new(vec![1, 12], perfect).unwrap());
        let l_corrupt = g.input(Tensor::new(vec![1, 12], corrupted).unwrap());
        let (a, _) = vad_bce_collar(&mut g, l_perfect, &labels, &mask).unwrap();
        let (b, _) = vad_bce_collar(&mut g, l_corrupt, &labels, &mask).unwrap();
        assert_eq!(g.scalar_value(a).to_bits(), g.scalar_value(b).to_bits());
    }

    #[test]
    fn all_frames_excluded_returns_zero_with_flag() {
        let labels = labels_from_rows(&[&[false, true, false, true]]);
        let mask = collar_mask(&labels, 4);
        assert!(mask.all_excluded());
        let mut g = Graph::<f64>::new();
        let logits = g.input(Tensor::full(vec![1, 4], 3.0));
        let (loss, all_excluded) = vad_bce_collar(&mut g, logits, &labels, &mask).unwrap();
        assert!(all_excluded);
        assert_eq!(g.scalar_value(loss), 0.0);
    }

    #[test]
    fn vad_bce_collar_matches_masked_summation_oracle() {
        let mut rng = Rng::from_seed(41);
        for _ in 0..20 {
            let labels = random_labels(&mut rng, 2, 9);
            let radius = rng.below(3);
            let mask = collar_mask(&labels, radius);
            let data: Vec<f64> = (0..18).map(|_| rng.range(-4.0, 4.0)).collect();
            let mut g = Graph::<f64>::new();
            let logits = g.input(Tensor::new(vec![2, 9], data.clone()).unwrap());
            let (loss, _) = vad_bce_collar(&mut g, logits, &labels, &mask).unwrap();

            let mut oracle = 0.0f64;
            for i in 0..2 {
                for t in 0..9 {
                    if mask.excluded()[t] {
                        continue;
                    }
                    let sign = if labels.active(i, t) { 1.0 } else { -1.0 };
                    let z = data[i * 9 + t] * sign;
                    let ls = if z >= 0.0 { -(-z).exp().ln_1p() } else { z - z.exp().ln_1p() };
                    oracle -= ls;
                }
            }
            oracle /= 18.0;
            assert!((g.scalar_value(loss) - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn growing_the_excluded_set_never_increases_the_loss() {
        let mut rng = Rng::from_seed(53);
        let labels = random_labels(&mut rng, 2, 30);
        let data: Vec<f64> = (0..60).map(|_| rng.range(-3.0, 3.0)).collect();
        let mut last = f64::INFINITY;
        for radius in 0..6 {
            let mask = collar_mask(&labels, radius);
            let mut g = Graph::<f64>::new();
            let logits = g.input(Tensor::new(vec![2, 30], data.clone()).unwrap());
            let (loss, _) = vad_bce_collar(&mut g, logits, &labels, &mask).unwrap();
            let v = g.scalar_value(loss);
            assert!(v <= last + 1e-12, "radius {radius}: {v} > {last}");
            last = v;
        }
    }

    #[test]
    fn losses_are_non_negative_and_finite_for_finite_logits() {
        let mut rng = Rng::from_seed(67);
        for _ in 0..50 {
            let labels = random_labels(&mut rng, 2, 16);
            let data: Vec<f64> = (0..32).map(|_| rng.range(-50.0, 50.0)).collect();
            let mut g = Graph::<f64>::new();
            let logits = g.input(Tensor::new(vec![2, 16], data).unwrap());
            let plain = vad_bce(&mut g, logits, &labels).unwrap();
            let mask = collar_mask(&labels, rng.below(4));
            let (masked, _) = vad_bce_collar(&mut g, logits, &labels, &mask).unwrap();
            for loss in [plain, masked] {
                let v = g.scalar_value(loss);
                assert!(v.is_finite() && v >= -0.0, "loss {v}");
            }
        }
    }

    #[test]
    fn all_silence_labels_reduce_to_negated_log_sigmoid_mean() {
        let mut rng = Rng::from_seed(71);
        let labels = labels_from_rows(&[&[false; 9], &[false; 9]]);
        let data: Vec<f64> = (0..18).map(|_| rng.range(-4.0, 4.0)).collect();
        let mut g = Graph::<f64>::new();
        let logits = g.input(Tensor::new(vec![2, 9], data.clone()).unwrap());
        let loss = vad_bce(&mut g, logits, &labels).unwrap();
        let direct = -data
            .iter()
            .map(|&z| {
                let neg = -z;
                if neg >= 0.0 { -(-neg).exp().ln_1p() } else { neg - neg.exp().ln_1p() }
            })
            .sum::<f64>()
            / 18.0;
        assert!((g.scalar_value(loss) - direct).abs() < 1e-12);
    }

    // ── total loss ──────────────────────────────────────────────────

    #[test]
    fn total_is_the_plain_sum() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::scalar(4f64.ln()));
        let b = g.input(Tensor::scalar(2f64.ln()));
        let total = total_loss(&mut g, a, b).unwrap();
        assert!((g.scalar_value(total) - 8f64.ln()).abs() < 1e-12);

        let zero_a = g.input(Tensor::scalar(0.0));
        let zero_b = g.input(Tensor::scalar(0.0));
        let zero = total_loss(&mut g, zero_a, zero_b).unwrap();
        assert_eq!(g.scalar_value(zero), 0.0);
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        // d(total)/dp = d(selector-like)/dp + d(vad-like)/dp on a tiny graph.
        let build = |which: u8| {
            let mut g = Graph::<f64>::new();
            let p = g.input(Tensor::from_vec(vec![0.3, -0.7]));
            let a = g.dot(p, p).unwrap();
            let doubled = g.scale(p, 2.0);
            let b = g.dot(doubled, p).unwrap();
            let target = match which {
                0 => a,
                1 => b,
                _ => total_loss(&mut g, a, b).unwrap(),
            };
            g.backward(target).unwrap();
            g.grad(p).unwrap().to_vec()
        };
        let ga = build(0);
        let gb = build(1);
        let gt = build(2);
        for i in 0..2 {
            assert!((gt[i] - (ga[i] + gb[i])).abs() < 1e-12);
        }
    }
}

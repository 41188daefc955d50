//! Shared oracles for the integration suites: central finite differences in
//! f64 against the graph's reverse pass, and a discretized DER scorer.
#![allow(dead_code)]

use dive_core::data::SegmentList;
use dive_core::tensor::{BoundParams, Graph, ParamStore, TensorRef};

pub const FD_STEP: f64 = 1e-4;

/// Maximum relative error between analytic and numeric gradients over every
/// parameter coordinate. The denominator has a unit floor so sub-unit
/// gradients are compared absolutely.
pub fn max_grad_error(
    params: &ParamStore<f64>,
    forward: &dyn Fn(&mut Graph<f64>, &BoundParams) -> TensorRef,
) -> f64 {
    // Analytic gradients via the reverse pass.
    let mut graph = Graph::new();
    let bound = graph.bind_params(params);
    let loss = forward(&mut graph, &bound);
    graph.backward(loss).expect("backward failed during gradient check");
    let analytic = bound.collect_grads(&graph);

    let eval = |p: &ParamStore<f64>| -> f64 {
        let mut graph = Graph::new();
        let bound = graph.bind_params(p);
        let loss = forward(&mut graph, &bound);
        graph.scalar_value(loss)
    };

    let mut worst = 0.0f64;
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut work = params.clone();
    for name in names {
        let numel = params.get(&name).unwrap().numel();
        for i in 0..numel {
            let original = params.get(&name).unwrap().data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = original + FD_STEP;
            let plus = eval(&work);
            work.get_mut(&name).unwrap().data_mut()[i] = original - FD_STEP;
            let minus = eval(&work);
            work.get_mut(&name).unwrap().data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.get(&name).unwrap().data()[i];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            let err = (a - numeric).abs() / denom;
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

/// DER components recomputed on a fixed-step time grid. Boundary handling
/// matches the interval scorer: collars around reference transitions
/// strictly inside the timeline, optional overlap exclusion.
pub struct GridDer {
    pub missed_s: f64,
    pub false_alarm_s: f64,
    pub confusion_s: f64,
    pub scored_speech_s: f64,
}

pub fn grid_der(
    reference: &SegmentList,
    hypothesis_mapped: &SegmentList,
    collar_s: f64,
    skip_overlap: bool,
    grid_s: f64,
) -> GridDer {
    let end = reference.end_time().max(hypothesis_mapped.end_time());
    let ref_speakers = reference.speakers();
    let hyp_speakers = hypothesis_mapped.speakers();
    let ref_intervals: Vec<Vec<(f64, f64)>> =
        ref_speakers.iter().map(|s| reference.speaker_intervals(s)).collect();
    let hyp_intervals: Vec<Vec<(f64, f64)>> =
        hyp_speakers.iter().map(|s| hypothesis_mapped.speaker_intervals(s)).collect();

    let mut boundaries: Vec<f64> = Vec::new();
    for intervals in &ref_intervals {
        for &(s, e) in intervals {
            for b in [s, e] {
                if b > 1e-12 && b < end - 1e-12 {
                    boundaries.push(b);
                }
            }
        }
    }

    let covered = |intervals: &[(f64, f64)], t: f64| intervals.iter().any(|&(s, e)| t >= s && t < e);
    let steps = (end / grid_s).ceil() as usize;
    let mut out = GridDer { missed_s: 0.0, false_alarm_s: 0.0, confusion_s: 0.0, scored_speech_s: 0.0 };
    for k in 0..steps {
        let t = (k as f64 + 0.5) * grid_s;
        if t >= end {
            break;
        }
        if collar_s > 0.0 && boundaries.iter().any(|&b| t >= b - collar_s && t <= b + collar_s) {
            continue;
        }
        let ref_active: Vec<usize> =
            (0..ref_intervals.len()).filter(|&i| covered(&ref_intervals[i], t)).collect();
        if skip_overlap && ref_active.len() >= 2 {
            continue;
        }
        let hyp_active: Vec<usize> =
            (0..hyp_intervals.len()).filter(|&i| covered(&hyp_intervals[i], t)).collect();
        let n_ref = ref_active.len();
        let n_hyp = hyp_active.len();
        let n_correct = ref_active
            .iter()
            .filter(|&&r| {
                hyp_active.iter().any(|&h| hyp_speakers[h] == ref_speakers[r])
            })
            .count();
        out.missed_s += n_ref.saturating_sub(n_hyp) as f64 * grid_s;
        out.false_alarm_s += n_hyp.saturating_sub(n_ref) as f64 * grid_s;
        out.confusion_s += (n_ref.min(n_hyp) - n_correct) as f64 * grid_s;
        out.scored_speech_s += n_ref as f64 * grid_s;
    }
    out
}

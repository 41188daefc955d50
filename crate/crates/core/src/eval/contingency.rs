//! Frame-wise labels-vs-predictions contingency for two-speaker scoring.

use crate::data::FrameLabels;
use crate::error::{Error, Result};

const CLASSES: [&str; 4] = ["Spkr1", "Spkr2", "Overlap", "Silence"];

/// Percentages over all frames: `percentages[prediction][label]`, plus the
/// label priors row.
#[derive(Clone, Debug, PartialEq)]
pub struct ContingencyTable {
    pub percentages: [[f64; 4]; 4],
    pub label_priors: [f64; 4],
    pub n_frames: usize,
}

fn frame_code(labels: &FrameLabels, frame: usize) -> usize {
    match (labels.active(0, frame), labels.active(1, frame)) {
        (true, false) => 0,
        (false, true) => 1,
        (true, true) => 2,
        (false, false) => 3,
    }
}

/// Reduce both label sets to the 4-class frame code and count. The
/// hypothesis rows are aligned to the reference by the row permutation that
/// maximizes frame agreement (the frame-level equivalent of the optimal
/// speaker mapping; ties keep the identity).
pub fn contingency(reference: &FrameLabels, hypothesis: &FrameLabels) -> Result<ContingencyTable> {
    if reference.n_speakers() != 2 || hypothesis.n_speakers() != 2 {
        return Err(Error::invalid(format!(
            "contingency expects two speakers per side, got {} and {}",
            reference.n_speakers(),
            hypothesis.n_speakers()
        )));
    }
    if reference.n_frames() != hypothesis.n_frames() {
        return Err(Error::invalid(format!(
            "frame-count mismatch: reference {} vs hypothesis {}",
            reference.n_frames(),
            hypothesis.n_frames()
        )));
    }
    let n = reference.n_frames();
    if n == 0 {
        return Err(Error::invalid("contingency over zero frames"));
    }

    let agreement = |hyp: &FrameLabels| -> usize {
        (0..n).filter(|&t| frame_code(reference, t) == frame_code(hyp, t)).count()
    };
    let swapped = hypothesis.permuted(&[1, 0]);
    let aligned = if agreement(&swapped) > agreement(hypothesis) { &swapped } else { hypothesis };

    let mut counts = [[0usize; 4]; 4];
    for t in 0..n {
        counts[frame_code(aligned, t)][frame_code(reference, t)] += 1;
    }
    let mut percentages = [[0.0; 4]; 4];
    let mut label_priors = [0.0; 4];
    for (p, row) in counts.iter().enumerate() {
        for (l, &count) in row.iter().enumerate() {
            let pct = 100.0 * count as f64 / n as f64;
            percentages[p][l] = pct;
            label_priors[l] += pct;
        }
    }
    Ok(ContingencyTable { percentages, label_priors, n_frames: n })
}

/// Aligned-column text block in the labels-vs-predictions layout.
pub fn render_contingency(table: &ContingencyTable) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<22}", "Prediction \\ Label"));
    for name in CLASSES {
        out.push_str(&format!("{name:>9}"));
    }
    out.push('\n');
    for (p, name) in CLASSES.iter().enumerate() {
        out.push_str(&format!("{name:<22}"));
        for l in 0..4 {
            out.push_str(&format!("{:>9.1}", table.percentages[p][l]));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<22}", "Class prior"));
    for l in 0..4 {
        out.push_str(&format!("{:>9.1}", table.label_priors[l]));
    }
    out.push('\n');
    out
}

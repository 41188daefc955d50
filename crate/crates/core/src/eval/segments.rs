//! Frame masks -> second-level segments.

use crate::data::{FrameLabels, Segment, SegmentList};
use crate::error::Result;

/// Maximal runs of active frames become segments
/// `[t_start/frame_rate, t_end/frame_rate)` named after the label rows.
pub fn masks_to_segments(labels: &FrameLabels) -> Result<SegmentList> {
    let rate = labels.frame_rate();
    let mut segments = Vec::new();
    for i in 0..labels.n_speakers() {
        let row = labels.row(i);
        let mut run_start = None;
        for t in 0..=row.len() {
            let active = t < row.len() && row[t];
            match (run_start, active) {
                (None, true) => run_start = Some(t),
                (Some(start), false) => {
                    segments.push(Segment {
                        speaker: labels.speakers()[i].clone(),
                        onset_s: start as f64 / rate,
                        duration_s: (t - start) as f64 / rate,
                    });
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    SegmentList::new(segments)
}

//! Segment lists -> frame-rate activity masks.

use super::{FrameLabels, SegmentList};

/// Downsample second-level segments to frame labels. Frame `t` is active for
/// a speaker iff the frame's center time `(t*downsample + downsample/2) /
/// sample_rate` lies inside one of that speaker's segments. The frame count
/// is `floor(n_samples / downsample)`.
///
/// Returns the labels plus a flag set when any segment extends past the end
/// of the waveform (such segments are clipped).
pub fn frame_labels_from_segments(
    segments: &SegmentList,
    n_samples: usize,
    sample_rate: u32,
    downsample: usize,
) -> (FrameLabels, bool) {
    let n_frames = n_samples / downsample;
    let frame_rate = sample_rate as f64 / downsample as f64;
    let speakers = segments.speakers();
    let mut labels = FrameLabels::new(speakers.clone(), n_frames, frame_rate);
    let wave_end_s = n_samples as f64 / sample_rate as f64;
    let mut clipped = false;

    for (i, speaker) in speakers.iter().enumerate() {
        for (start, end) in segments.speaker_intervals(speaker) {
            if end > wave_end_s + 1e-9 {
                clipped = true;
            }
            let end = end.min(wave_end_s);
            if end <= start {
                continue;
            }
            // Frames whose center lies in [start, end).
            for t in 0..n_frames {
                let center =
                    (t * downsample + downsample / 2) as f64 / sample_rate as f64;
                if center >= start && center < end {
                    labels.set(i, t, true);
                }
            }
        }
    }
    (labels, clipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Segment;

    fn seg(speaker: &str, onset: f64, dur: f64) -> Segment {
        Segment { speaker: speaker.into(), onset_s: onset, duration_s: dur }
    }

    #[test]
    fn empty_segments_give_all_zero_labels() {
        let (labels, clipped) =
            frame_labels_from_segments(&SegmentList::empty(), 1600, 8000, 16);
        assert_eq!(labels.n_speakers(), 0);
        assert_eq!(labels.n_frames(), 100);
        assert!(!clipped);
    }

    #[test]
    fn full_length_segment_gives_all_ones_row() {
        let list = SegmentList::new(vec![seg("a", 0.0, 0.2)]).unwrap();
        let (labels, clipped) = frame_labels_from_segments(&list, 1600, 8000, 16);
        assert!(!clipped);
        assert!(labels.row(0).iter().all(|&v| v));
    }

    #[test]
    fn active_frames_match_center_rule() {
        // Segment [0.1s, 0.2s) at 8 kHz: active frames are exactly those
        // whose center sample lies in [800, 1600).
        let list = SegmentList::new(vec![seg("a", 0.1, 0.1)]).unwrap();
        let (labels, _) = frame_labels_from_segments(&list, 4000, 8000, 16);
        for t in 0..labels.n_frames() {
            let center = t * 16 + 8;
            let expect = (800..1600).contains(&center);
            assert_eq!(labels.active(0, t), expect, "frame {t} center {center}");
        }
    }

    #[test]
    fn overlong_segment_is_clipped_with_flag() {
        let list = SegmentList::new(vec![seg("a", 0.0, 10.0)]).unwrap();
        let (labels, clipped) = frame_labels_from_segments(&list, 1600, 8000, 16);
        assert!(clipped);
        assert!(labels.row(0).iter().all(|&v| v));
    }

    #[test]
    fn matches_per_sample_majority_scan_away_from_edges() {
        // Brute-force labeler: frame active if a majority of its samples are
        // inside the segment. The center rule may only disagree on frames
        // whose center is within one frame of a segment edge.
        let list = SegmentList::new(vec![seg("a", 0.0731, 0.1073)]).unwrap();
        let (labels, _) = frame_labels_from_segments(&list, 4000, 8000, 16);
        let (start, end) = (0.0731, 0.0731 + 0.1073);
        for t in 0..labels.n_frames() {
            let inside = (0..16)
                .filter(|k| {
                    let time = (t * 16 + k) as f64 / 8000.0;
                    time >= start && time < end
                })
                .count();
            let majority = inside > 8;
            if labels.active(0, t) != majority {
                let center_t = (t * 16 + 8) as f64 / 8000.0;
                let frame_s = 16.0 / 8000.0;
                let near_edge = (center_t - start).abs() <= frame_s
                    || (center_t - end).abs() <= frame_s;
                assert!(near_edge, "disagreement away from edges at frame {t}");
            }
        }
    }
}

//! Multi-window sampling: W fixed-length windows drawn from one sequence,
//! with labels sliced to match the encoder's frame alignment.

use super::{FrameLabels, Waveform};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct SampledWindows {
    /// Window onsets in samples, ascending, multiples of the downsample
    /// factor so label frames align exactly with encoder frames.
    pub onsets: Vec<usize>,
    pub windows: Vec<Vec<f32>>,
    /// Labels for the concatenated windows: `W * window_length / downsample`
    /// frames.
    pub labels: FrameLabels,
}

/// Draw `count` distinct windows of `window_length` samples. Onsets are
/// sampled uniformly without replacement from downsample-aligned positions
/// and returned in ascending order.
pub fn sample_windows(
    waveform: &Waveform,
    labels: &FrameLabels,
    count: usize,
    window_length: usize,
    downsample: usize,
    rng: &mut Rng,
) -> Result<SampledWindows> {
    if count == 0 || window_length == 0 {
        return Err(Error::invalid(format!(
            "need count >= 1 and window_length >= 1, got {count} x {window_length}"
        )));
    }
    if window_length % downsample != 0 {
        return Err(Error::invalid(format!(
            "window_length {window_length} must be a multiple of the downsample factor {downsample}"
        )));
    }
    let total = waveform.len();
    if count * window_length > total {
        return Err(Error::Resample(format!(
            "sequence of {total} samples too short for {count} windows of {window_length}"
        )));
    }
    debug_assert_eq!(labels.n_frames(), total / downsample);

    let positions = (total - window_length) / downsample + 1;
    let onsets: Vec<usize> = rng
        .distinct_sorted(positions, count)
        .into_iter()
        .map(|p| p * downsample)
        .collect();

    let windows: Vec<Vec<f32>> = onsets
        .iter()
        .map(|&onset| waveform.samples[onset..onset + window_length].to_vec())
        .collect();
    let frames_per_window = window_length / downsample;
    let parts: Vec<FrameLabels> = onsets
        .iter()
        .map(|&onset| labels.slice_frames(onset / downsample, frames_per_window))
        .collect();
    let labels = FrameLabels::concat(&parts);

    Ok(SampledWindows { onsets, windows, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{frame_labels_from_segments, Segment, SegmentList};

    fn make_waveform(n: usize) -> Waveform {
        let samples = (0..n).map(|i| ((i % 97) as f32 - 48.0) / 64.0).collect();
        Waveform::new(samples, 8000).unwrap()
    }

    #[test]
    fn single_full_length_window_is_identity() {
        let wave = make_waveform(1600);
        let segs = SegmentList::new(vec![Segment {
            speaker: "a".into(),
            onset_s: 0.05,
            duration_s: 0.1,
        }])
        .unwrap();
        let (labels, _) = frame_labels_from_segments(&segs, wave.len(), 8000, 16);
        let mut rng = Rng::from_seed(1);
        let sampled = sample_windows(&wave, &labels, 1, 1600, 16, &mut rng).unwrap();
        assert_eq!(sampled.onsets, vec![0]);
        assert_eq!(sampled.windows[0], wave.samples);
        assert_eq!(sampled.labels, labels);
    }

    #[test]
    fn label_frames_map_back_to_source_frames() {
        let wave = make_waveform(8000);
        let segs = SegmentList::new(vec![Segment {
            speaker: "a".into(),
            onset_s: 0.217,
            duration_s: 0.311,
        }])
        .unwrap();
        let (labels, _) = frame_labels_from_segments(&segs, wave.len(), 8000, 16);
        let mut rng = Rng::from_seed(7);
        let sampled = sample_windows(&wave, &labels, 3, 1600, 16, &mut rng).unwrap();
        let frames_per_window = 100;
        // Exhaustive index map: frame k of window j equals source frame
        // onset_j/16 + k, for both labels and samples.
        for (j, &onset) in sampled.onsets.iter().enumerate() {
            for k in 0..frames_per_window {
                let got = sampled.labels.active(0, j * frames_per_window + k);
                let expect = labels.active(0, onset / 16 + k);
                assert_eq!(got, expect, "window {j} frame {k}");
            }
            assert_eq!(
                sampled.windows[j],
                wave.samples[onset..onset + 1600].to_vec()
            );
        }
    }

    #[test]
    fn concatenated_label_length_matches_paper_shape() {
        // 6 windows of 32000 samples -> 12000 frames.
        let wave = make_waveform(32000 * 8);
        let (labels, _) =
            frame_labels_from_segments(&SegmentList::empty(), wave.len(), 8000, 16);
        let mut rng = Rng::from_seed(3);
        let sampled = sample_windows(&wave, &labels, 6, 32000, 16, &mut rng).unwrap();
        assert_eq!(sampled.labels.n_frames(), 12000);
    }

    #[test]
    fn too_short_sequence_signals_resample() {
        let wave = make_waveform(1000);
        let (labels, _) =
            frame_labels_from_segments(&SegmentList::empty(), wave.len(), 8000, 16);
        let mut rng = Rng::from_seed(3);
        let err = sample_windows(&wave, &labels, 2, 640, 16, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Resample(_)));
    }

    #[test]
    fn onsets_are_aligned_distinct_and_sorted() {
        let wave = make_waveform(16000);
        let (labels, _) =
            frame_labels_from_segments(&SegmentList::empty(), wave.len(), 8000, 16);
        let mut rng = Rng::from_seed(11);
        for _ in 0..50 {
            let sampled = sample_windows(&wave, &labels, 4, 1600, 16, &mut rng).unwrap();
            for pair in sampled.onsets.windows(2) {
                assert!(pair[0] < pair[1]);
            }
            assert!(sampled.onsets.iter().all(|o| o % 16 == 0));
        }
    }
}

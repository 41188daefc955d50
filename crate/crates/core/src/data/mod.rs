//! Audio and label domain types plus the synthetic-corpus / ingestion stack.

mod labels;
mod manifest;
mod rttm;
mod synth;
mod wav;
mod windows;

pub use labels::frame_labels_from_segments;
pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use rttm::{read_rttm, write_rttm};
pub use synth::{
    mix_noise, mix_noise_with_gain, synth_conversation, synth_noise, ConversationConfig,
    SpeakerProfile,
};
pub use wav::{read_wav, write_wav};
pub use windows::{sample_windows, SampledWindows};

use crate::error::{Error, Result};

/// Mono waveform with samples nominally in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform must be non-empty"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("waveform contains non-finite samples"));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        let sum: f64 = self.samples.iter().map(|&s| s as f64 * s as f64).sum();
        (sum / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, &s| m.max(s.abs()))
    }
}

/// One speaker-activity segment in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub speaker: String,
    pub onset_s: f64,
    pub duration_s: f64,
}

impl Segment {
    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}

/// Segments sorted by onset. Cross-speaker overlap is allowed; segments of
/// one speaker must not overlap each other.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentList {
    entries: Vec<Segment>,
}

impl SegmentList {
    pub fn new(mut entries: Vec<Segment>) -> Result<Self> {
        for seg in &entries {
            if seg.duration_s <= 0.0 || !seg.duration_s.is_finite() {
                return Err(Error::invalid(format!(
                    "segment for `{}` at {} has non-positive duration {}",
                    seg.speaker, seg.onset_s, seg.duration_s
                )));
            }
            if seg.onset_s < 0.0 || !seg.onset_s.is_finite() {
                return Err(Error::invalid(format!(
                    "segment for `{}` has invalid onset {}",
                    seg.speaker, seg.onset_s
                )));
            }
        }
        entries.sort_by(|a, b| {
            a.onset_s
                .partial_cmp(&b.onset_s)
                .unwrap()
                .then_with(|| a.speaker.cmp(&b.speaker))
        });
        let list = SegmentList { entries };
        for speaker in list.speakers() {
            let mut last_end = f64::NEG_INFINITY;
            for seg in list.entries.iter().filter(|s| s.speaker == speaker) {
                if seg.onset_s < last_end - 1e-9 {
                    return Err(Error::invalid(format!(
                        "segments of `{speaker}` overlap at {}",
                        seg.onset_s
                    )));
                }
                last_end = seg.end_s();
            }
        }
        Ok(list)
    }

    pub fn empty() -> Self {
        SegmentList { entries: Vec::new() }
    }

    pub fn entries(&self) -> &[Segment] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted unique speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        let mut out: Vec<String> = self.entries.iter().map(|s| s.speaker.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn end_time(&self) -> f64 {
        self.entries.iter().map(|s| s.end_s()).fold(0.0, f64::max)
    }

    /// Merged activity intervals for one speaker.
    pub fn speaker_intervals(&self, speaker: &str) -> Vec<(f64, f64)> {
        let mut spans: Vec<(f64, f64)> = self
            .entries
            .iter()
            .filter(|s| s.speaker == speaker)
            .map(|s| (s.onset_s, s.end_s()))
            .collect();
        spans.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (start, end) in spans {
            match merged.last_mut() {
                Some((_, last_end)) if start <= *last_end + 1e-12 => {
                    *last_end = last_end.max(end);
                }
                _ => merged.push((start, end)),
            }
        }
        merged
    }
}

/// Per-speaker binary activity at the downsampled frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabels {
    speakers: Vec<String>,
    n_frames: usize,
    frame_rate: f64,
    data: Vec<bool>,
}

impl FrameLabels {
    pub fn new(speakers: Vec<String>, n_frames: usize, frame_rate: f64) -> Self {
        let data = vec![false; speakers.len() * n_frames];
        FrameLabels { speakers, n_frames, frame_rate, data }
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn active(&self, speaker: usize, frame: usize) -> bool {
        self.data[speaker * self.n_frames + frame]
    }

    pub fn set(&mut self, speaker: usize, frame: usize, value: bool) {
        self.data[speaker * self.n_frames + frame] = value;
    }

    pub fn row(&self, speaker: usize) -> &[bool] {
        &self.data[speaker * self.n_frames..(speaker + 1) * self.n_frames]
    }

    pub fn set_row(&mut self, speaker: usize, values: &[bool]) {
        assert_eq!(values.len(), self.n_frames);
        self.data[speaker * self.n_frames..(speaker + 1) * self.n_frames].copy_from_slice(values);
    }

    /// Number of active speakers at a frame.
    pub fn active_count(&self, frame: usize) -> usize {
        (0..self.n_speakers()).filter(|&i| self.active(i, frame)).count()
    }

    /// New labels with rows reordered: row `i` of the result is row
    /// `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> FrameLabels {
        assert_eq!(order.len(), self.n_speakers());
        let speakers = order.iter().map(|&i| self.speakers[i].clone()).collect();
        let mut out = FrameLabels::new(speakers, self.n_frames, self.frame_rate);
        for (dst, &src) in order.iter().enumerate() {
            out.set_row(dst, self.row(src));
        }
        out
    }

    /// Labels restricted to the frame range [start, start+len).
    pub fn slice_frames(&self, start: usize, len: usize) -> FrameLabels {
        assert!(start + len <= self.n_frames);
        let mut out = FrameLabels::new(self.speakers.clone(), len, self.frame_rate);
        for i in 0..self.n_speakers() {
            out.set_row(i, &self.row(i)[start..start + len]);
        }
        out
    }

    /// Concatenate along the frame axis; all parts must share speakers.
    pub fn concat(parts: &[FrameLabels]) -> FrameLabels {
        assert!(!parts.is_empty());
        let speakers = parts[0].speakers.clone();
        let frame_rate = parts[0].frame_rate;
        let total: usize = parts.iter().map(|p| p.n_frames).sum();
        let mut out = FrameLabels::new(speakers, total, frame_rate);
        for i in 0..out.n_speakers() {
            let mut offset = 0;
            for p in parts {
                assert_eq!(p.speakers, out.speakers);
                for (t, &v) in p.row(i).iter().enumerate() {
                    out.set(i, offset + t, v);
                }
                offset += p.n_frames;
            }
        }
        out
    }
}

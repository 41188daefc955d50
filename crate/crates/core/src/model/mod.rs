//! The diarization network: a dilated-convolution temporal encoder over the
//! raw waveform, an iterative speaker selector driven by a 4-way per-frame
//! event classifier, and a speaker-conditioned voice-activity head. One
//! struct owns the wiring; parameters live in a [`ParamStore`] so the same
//! model runs in f32 for training and f64 for gradient verification.

pub mod init;
mod mlp;

pub use mlp::MlpSpec;

use crate::data::FrameLabels;
use crate::error::{Error, Result};
use crate::eval::median_filter;
use crate::losses;
use crate::rng::Rng;
use crate::tensor::{BoundParams, Element, Graph, ParamStore, Tensor, TensorRef};

/// Per-frame event category used by the iterative selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventClass {
    /// Exactly one speaker is active and it has not been selected yet.
    NovelSingle = 0,
    /// Exactly one speaker is active and it was already selected.
    SelectedSingle = 1,
    Overlap = 2,
    Silence = 3,
}

pub const EVENT_CLASSES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub sample_rate: u32,
    /// Embedding width D; every conv layer and head uses this many channels.
    pub channels: usize,
    pub input_kernel: usize,
    pub input_stride: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
    pub conv_kernel: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub window_length: usize,
    pub windows_per_example: usize,
    /// Collar radius (seconds) used by the collar-aware training loss.
    pub collar_radius_s: f64,
    pub num_speakers: usize,
}

impl ModelConfig {
    /// Full-size configuration from the reference setup.
    pub fn paper() -> Self {
        ModelConfig {
            sample_rate: 8000,
            channels: 512,
            input_kernel: 16,
            input_stride: 8,
            blocks: 4,
            layers_per_block: 10,
            conv_kernel: 3,
            pool_kernel: 3,
            pool_stride: 2,
            window_length: 32000,
            windows_per_example: 6,
            collar_radius_s: 0.25,
            num_speakers: 2,
        }
    }

    /// Small configuration that trains on a laptop-class CPU in minutes.
    pub fn desk() -> Self {
        ModelConfig {
            channels: 64,
            blocks: 2,
            layers_per_block: 4,
            window_length: 16000,
            windows_per_example: 3,
            ..ModelConfig::paper()
        }
    }

    /// Input stride times pool stride (the pool only exists with >= 2
    /// blocks); 16 with the reference values.
    pub fn downsample_factor(&self) -> usize {
        if self.blocks >= 2 {
            self.input_stride * self.pool_stride
        } else {
            self.input_stride
        }
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.downsample_factor() as f64
    }

    pub fn frames_per_window(&self) -> usize {
        self.window_length / self.downsample_factor()
    }

    pub fn collar_radius_frames(&self) -> usize {
        (self.collar_radius_s * self.frame_rate()).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sample_rate", self.sample_rate as usize),
            ("channels", self.channels),
            ("input_kernel", self.input_kernel),
            ("input_stride", self.input_stride),
            ("blocks", self.blocks),
            ("layers_per_block", self.layers_per_block),
            ("conv_kernel", self.conv_kernel),
            ("pool_kernel", self.pool_kernel),
            ("pool_stride", self.pool_stride),
            ("window_length", self.window_length),
            ("windows_per_example", self.windows_per_example),
            ("num_speakers", self.num_speakers),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.window_length % self.downsample_factor() != 0 {
            return Err(Error::invalid(format!(
                "window_length {} must be a multiple of the downsampling factor {}",
                self.window_length,
                self.downsample_factor()
            )));
        }
        if self.collar_radius_s < 0.0 {
            return Err(Error::invalid("collar_radius_s must be >= 0"));
        }
        Ok(())
    }
}

/// Speaker vectors selected at inference time, with their confidences and
/// argmax frames, plus the bank mean used by the VAD head.
#[derive(Clone, Debug)]
pub struct SpeakerBank<E> {
    pub vectors: Vec<Tensor<E>>,
    pub confidences: Vec<f64>,
    pub argmax_frames: Vec<usize>,
    pub mean: Tensor<E>,
}

/// Binary diarization output plus the bank that produced it.
#[derive(Clone, Debug)]
pub struct InferOutput<E> {
    pub labels: FrameLabels,
    pub bank: SpeakerBank<E>,
}

/// Losses of one training example, as graph nodes so `backward` can run on
/// `total`.
pub struct TrainForward {
    pub selector_loss: TensorRef,
    /// Plain per-frame VAD loss (radius 0), kept for logging.
    pub vad_loss: TensorRef,
    pub vad_loss_collar: TensorRef,
    pub total: TensorRef,
    /// Ground-truth speaker order used for this example: iteration `i`
    /// selected speaker `permutation[i]` of the label rows.
    pub permutation: Vec<usize>,
    pub all_frames_excluded: bool,
}

#[derive(Clone, Debug)]
pub struct DiveModel {
    pub config: ModelConfig,
}

impl DiveModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(DiveModel { config })
    }

    fn context_head(&self) -> MlpSpec {
        let d = self.config.channels;
        MlpSpec::new("selector.context", d, d, EVENT_CLASSES * d)
    }

    fn frame_head(&self) -> MlpSpec {
        let d = self.config.channels;
        MlpSpec::new("selector.frame", d, d, d)
    }

    fn vad_frame_head(&self) -> MlpSpec {
        let d = self.config.channels;
        MlpSpec::new("vad.frame", d, d, d)
    }

    fn vad_speaker_head(&self) -> MlpSpec {
        let d = self.config.channels;
        MlpSpec::new("vad.speaker", 2 * d, d, d)
    }

    /// Fresh parameter store; draws are keyed by parameter name and `seed`.
    pub fn init_params<E: Element>(&self, seed: u64) -> ParamStore<E> {
        let c = &self.config;
        let mut store = ParamStore::new();
        init::conv(&mut store, "encoder.input", c.input_kernel, 1, c.channels, seed).unwrap();
        init::prelu(&mut store, "encoder.input", c.channels).unwrap();
        init::layer_norm(&mut store, "encoder.input", c.channels).unwrap();
        for b in 0..c.blocks {
            for l in 0..c.layers_per_block {
                let prefix = format!("encoder.block{b}.layer{l}");
                init::conv(&mut store, &prefix, c.conv_kernel, c.channels, c.channels, seed)
                    .unwrap();
                init::prelu(&mut store, &prefix, c.channels).unwrap();
                init::layer_norm(&mut store, &prefix, c.channels).unwrap();
            }
        }
        for head in [
            self.context_head(),
            self.frame_head(),
            self.vad_frame_head(),
            self.vad_speaker_head(),
        ] {
            head.init_params(&mut store, seed).unwrap();
        }
        store
    }

    /// Encode equal-length windows and concatenate the per-window embeddings
    /// along the time axis: `[W * window_len / downsample, D]`.
    pub fn encode<E: Element>(
        &self,
        graph: &mut Graph<E>,
        params: &BoundParams,
        windows: &[Vec<E>],
    ) -> Result<TensorRef> {
        let c = &self.config;
        if windows.is_empty() {
            return Err(Error::invalid("encode: no windows"));
        }
        let len = windows[0].len();
        let factor = c.downsample_factor();
        if len == 0 || len % factor != 0 {
            return Err(Error::invalid(format!(
                "window length {len} must be a positive multiple of {factor}"
            )));
        }
        if windows.iter().any(|w| w.len() != len) {
            return Err(Error::invalid("encode: windows must have equal length"));
        }

        let mut encoded = Vec::with_capacity(windows.len());
        for window in windows {
            let x = graph.input(Tensor::new(vec![len, 1], window.clone())?);
            let mut h = graph.conv1d(
                x,
                params.get("encoder.input.kernel"),
                params.get("encoder.input.bias"),
                c.input_stride,
                1,
            )?;
            h = graph.prelu(h, params.get("encoder.input.slope"))?;
            h = graph.layer_norm(
                h,
                params.get("encoder.input.norm_gain"),
                params.get("encoder.input.norm_bias"),
                init::LAYER_NORM_EPS,
            )?;
            for b in 0..c.blocks {
                for l in 0..c.layers_per_block {
                    let prefix = format!("encoder.block{b}.layer{l}");
                    // Dilation resets at the start of each block.
                    let dilation = 1usize << l;
                    let mut y = graph.conv1d(
                        h,
                        params.get(&format!("{prefix}.kernel")),
                        params.get(&format!("{prefix}.bias")),
                        1,
                        dilation,
                    )?;
                    y = graph.prelu(y, params.get(&format!("{prefix}.slope")))?;
                    y = graph.layer_norm(
                        y,
                        params.get(&format!("{prefix}.norm_gain")),
                        params.get(&format!("{prefix}.norm_bias")),
                        init::LAYER_NORM_EPS,
                    )?;
                    h = graph.add(h, y)?;
                }
                if b == 0 && c.blocks >= 2 {
                    h = graph.avg_pool1d(h, c.pool_kernel, c.pool_stride)?;
                }
            }
            encoded.push(h);
        }
        graph.concat_rows(&encoded)
    }

    /// Row-stochastic `[T, 4]` event posterior given the mean embedding of
    /// the previously selected speakers.
    pub fn event_posterior<E: Element>(
        &self,
        graph: &mut Graph<E>,
        params: &BoundParams,
        embeddings: TensorRef,
        context: TensorRef,
    ) -> Result<TensorRef> {
        let d = self.config.channels;
        let classifier_flat = self.context_head().forward(graph, params, context)?;
        let classifier = graph.reshape(classifier_flat, vec![EVENT_CLASSES, d])?;
        let classifier_t = graph.transpose2d(classifier)?;
        let features = self.frame_head().forward(graph, params, embeddings)?;
        let scores = graph.matmul(features, classifier_t)?;
        Ok(graph.softmax_last(scores))
    }

    /// VAD logits `[N, T]`: row `i` scores speaker vector `i` against every
    /// frame, conditioned on the bank mean.
    pub fn vad_logits<E: Element>(
        &self,
        graph: &mut Graph<E>,
        params: &BoundParams,
        embeddings: TensorRef,
        speaker_vectors: &[TensorRef],
    ) -> Result<TensorRef> {
        if speaker_vectors.is_empty() {
            return Err(Error::invalid("vad_logits: empty speaker bank"));
        }
        let t_len = graph.shape(embeddings)[0];
        let stacked = graph.stack_rows(speaker_vectors)?;
        let mean = graph.reduce_mean(stacked, 0)?;
        let frame_features = self.vad_frame_head().forward(graph, params, embeddings)?;
        let mut rows = Vec::with_capacity(speaker_vectors.len());
        for &vector in speaker_vectors {
            let paired = graph.concat_last(&[vector, mean])?;
            let speaker_feature = self.vad_speaker_head().forward(graph, params, paired)?;
            let column = graph.reshape(speaker_feature, vec![self.config.channels, 1])?;
            let scores = graph.matmul(frame_features, column)?;
            rows.push(graph.reshape(scores, vec![t_len])?);
        }
        graph.stack_rows(&rows)
    }

    /// Training-time selection: a frame drawn uniformly among those where
    /// `speaker` is the sole active one. Errors with a resample signal when
    /// no such frame exists in this example.
    pub fn select_speaker_train<E: Element>(
        &self,
        graph: &mut Graph<E>,
        embeddings: TensorRef,
        labels: &FrameLabels,
        speaker: usize,
        rng: &mut Rng,
    ) -> Result<(TensorRef, usize)> {
        let candidates = solo_frames(labels, speaker);
        if candidates.is_empty() {
            return Err(Error::Resample(format!(
                "no solo frame for speaker {speaker} in the sampled windows"
            )));
        }
        let frame = candidates[rng.below(candidates.len())];
        Ok((graph.row(embeddings, frame)?, frame))
    }

    /// Greedy inference selection: the frame with maximal novel-speaker
    /// confidence (ties break to the smallest frame index). `scan_limit`
    /// bounds the argmax scan so padding frames are never selected.
    pub fn select_speaker_infer<E: Element>(
        &self,
        graph: &mut Graph<E>,
        params: &BoundParams,
        embeddings: TensorRef,
        context: TensorRef,
        scan_limit: usize,
    ) -> Result<(TensorRef, f64, usize)> {
        let posterior = self.event_posterior(graph, params, embeddings, context)?;
        let values = graph.values(posterior);
        let mut best_frame = 0usize;
        let mut best = f64::NEG_INFINITY;
        for t in 0..scan_limit {
            let confidence = values[t * EVENT_CLASSES + EventClass::NovelSingle as usize].to_f64();
            if confidence > best {
                best = confidence;
                best_frame = t;
            }
        }
        Ok((graph.row(embeddings, best_frame)?, best, best_frame))
    }

    /// Full training forward pass with a random ground-truth speaker order.
    pub fn forward_train<E: Element>(
        &self,
        graph: &mut Graph<E>,
        params: &BoundParams,
        windows: &[Vec<E>],
        labels: &FrameLabels,
        collar_radius_frames: usize,
        rng: &mut Rng,
    ) -> Result<TrainForward> {
        let n = self.config.num_speakers;
        let mut permutation: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut permutation);
        self.forward_train_with_permutation(
            graph,
            params,
            windows,
            labels,
            collar_radius_frames,
            permutation,
            rng,
        )
    }

    /// Training forward pass with an explicit selection order. Embedding
    /// draws are keyed by iteration index so the loss distribution is
    /// equivariant under joint relabeling of speakers and permutation.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_train_with_permutation<E: Element>(
        &self,
        graph: &mut Graph<E>,
        params: &BoundParams,
        windows: &[Vec<E>],
        labels: &FrameLabels,
        collar_radius_frames: usize,
        permutation: Vec<usize>,
        rng: &mut Rng,
    ) -> Result<TrainForward> {
        let n = self.config.num_speakers;
        if labels.n_speakers() != n || permutation.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} speakers, got {} label rows and {} permutation entries",
                labels.n_speakers(),
                permutation.len()
            )));
        }
        let embeddings = self.encode(graph, params, windows)?;
        let t_len = graph.shape(embeddings)[0];
        if labels.n_frames() != t_len {
            return Err(Error::invalid(format!(
                "labels cover {} frames but encoder produced {t_len}",
                labels.n_frames()
            )));
        }

        let mut selected_vectors: Vec<TensorRef> = Vec::with_capacity(n);
        let mut posteriors = Vec::with_capacity(n);
        let mut event_labels = Vec::with_capacity(n);
        let mut context = graph.input(Tensor::zeros(vec![self.config.channels]));
        for i in 0..n {
            event_labels.push(build_event_labels(labels, &permutation[..i]));
            posteriors.push(self.event_posterior(graph, params, embeddings, context)?);
            let mut draw_rng = rng.derive(&[0x5e1ec7, i as u64]);
            let (vector, _) = self.select_speaker_train(
                graph,
                embeddings,
                labels,
                permutation[i],
                &mut draw_rng,
            )?;
            selected_vectors.push(vector);
            let stacked = graph.stack_rows(&selected_vectors)?;
            context = graph.reduce_mean(stacked, 0)?;
        }

        let logits = self.vad_logits(graph, params, embeddings, &selected_vectors)?;
        let ordered_labels = labels.permuted(&permutation);
        let mask = losses::collar_mask(&ordered_labels, collar_radius_frames);
        let selector_loss = losses::selector_nll(graph, &posteriors, &event_labels)?;
        let vad_loss = losses::vad_bce(graph, logits, &ordered_labels)?;
        let (vad_loss_collar, all_frames_excluded) =
            losses::vad_bce_collar(graph, logits, &ordered_labels, &mask)?;
        let total = losses::total_loss(graph, selector_loss, vad_loss_collar)?;
        Ok(TrainForward {
            selector_loss,
            vad_loss,
            vad_loss_collar,
            total,
            permutation,
            all_frames_excluded,
        })
    }

    /// Diarize a full waveform: encode as one window (zero-padded to the
    /// downsampling factor, padding frames dropped from the output), run
    /// `n_speakers` greedy selections, threshold the VAD posteriors at 0.5
    /// and optionally median-filter each speaker's mask.
    pub fn infer<E: Element>(
        &self,
        store: &ParamStore<E>,
        samples: &[f32],
        n_speakers: usize,
        median_width: usize,
    ) -> Result<InferOutput<E>> {
        if samples.is_empty() {
            return Err(Error::invalid("infer: empty waveform"));
        }
        if n_speakers == 0 {
            return Err(Error::invalid("infer: need at least one speaker"));
        }
        let factor = self.config.downsample_factor();
        let keep_frames = samples.len() / factor;
        if keep_frames == 0 {
            return Err(Error::invalid(format!(
                "infer: waveform of {} samples is shorter than one frame ({factor} samples)",
                samples.len()
            )));
        }
        let padded_len = samples.len().div_ceil(factor) * factor;
        let mut window: Vec<E> = Vec::with_capacity(padded_len);
        window.extend(samples.iter().map(|&s| E::from_f64(s as f64)));
        window.resize(padded_len, E::ZERO);

        let mut graph = Graph::new();
        let params = graph.bind_params(store);
        let embeddings = self.encode(&mut graph, &params, &[window])?;

        let mut bank_vectors = Vec::with_capacity(n_speakers);
        let mut confidences = Vec::with_capacity(n_speakers);
        let mut argmax_frames = Vec::with_capacity(n_speakers);
        let mut vector_refs = Vec::with_capacity(n_speakers);
        let mut context = graph.input(Tensor::zeros(vec![self.config.channels]));
        for _ in 0..n_speakers {
            let (vector, confidence, frame) =
                self.select_speaker_infer(&mut graph, &params, embeddings, context, keep_frames)?;
            bank_vectors.push(graph.tensor(vector));
            confidences.push(confidence);
            argmax_frames.push(frame);
            vector_refs.push(vector);
            let stacked = graph.stack_rows(&vector_refs)?;
            context = graph.reduce_mean(stacked, 0)?;
        }

        let logits = self.vad_logits(&mut graph, &params, embeddings, &vector_refs)?;
        let posterior = graph.sigmoid(logits);
        let values = graph.values(posterior);
        let t_full = graph.shape(posterior)[1];

        let speakers: Vec<String> = (1..=n_speakers).map(|i| format!("spk{i}")).collect();
        let mut labels = FrameLabels::new(speakers, keep_frames, self.config.frame_rate());
        for i in 0..n_speakers {
            let mut mask: Vec<bool> = (0..keep_frames)
                .map(|t| values[i * t_full + t].to_f64() >= 0.5)
                .collect();
            if median_width > 1 {
                mask = median_filter(&mask, median_width)?;
            }
            labels.set_row(i, &mask);
        }

        let stacked = graph.stack_rows(&vector_refs)?;
        let mean_ref = graph.reduce_mean(stacked, 0)?;
        let mean = graph.tensor(mean_ref);
        Ok(InferOutput {
            labels,
            bank: SpeakerBank { vectors: bank_vectors, confidences, argmax_frames, mean },
        })
    }
}

/// Per-frame event classes given which speakers have already been selected.
pub fn build_event_labels(labels: &FrameLabels, selected: &[usize]) -> Vec<EventClass> {
    (0..labels.n_frames())
        .map(|t| {
            let active: Vec<usize> =
                (0..labels.n_speakers()).filter(|&i| labels.active(i, t)).collect();
            match active.as_slice() {
                [] => EventClass::Silence,
                [one] => {
                    if selected.contains(one) {
                        EventClass::SelectedSingle
                    } else {
                        EventClass::NovelSingle
                    }
                }
                _ => EventClass::Overlap,
            }
        })
        .collect()
}

/// Frames where `speaker` is active and nobody else is.
pub fn solo_frames(labels: &FrameLabels, speaker: usize) -> Vec<usize> {
    (0..labels.n_frames())
        .filter(|&t| labels.active(speaker, t) && labels.active_count(t) == 1)
        .collect()
}

//! Flat key=value run configuration shared by the CLI, the trainer and the
//! experiment recipes. Every ablation (collar-aware on/off, window count and
//! length) is expressible through these fields alone.

use crate::data::ConversationConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // Model topology.
    pub sample_rate: u32,
    pub channels: usize,
    pub input_kernel: usize,
    pub input_stride: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
    pub conv_kernel: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub num_speakers: usize,

    // Multi-window training.
    pub windows: usize,
    pub window_length: usize,

    // Objective.
    pub collar_train_s: f64,
    pub collar_eval_s: f64,

    // Optimization.
    pub batch_size: usize,
    pub total_steps: u64,
    pub base_lr: f64,
    pub lr_decay_every: u64,
    pub lr_decay_factor: f64,

    // Bookkeeping.
    pub seed: u64,
    pub checkpoint_every: u64,
    pub val_every: u64,
    pub val_fraction: f64,
    pub median_width: usize,
    pub output_dir: String,

    // Synthetic corpus.
    pub synth_duration_s: f64,
    pub synth_turn_median_s: f64,
    pub synth_overlap_prob: f64,
    pub synth_silence_prob: f64,
    pub synth_min_solo_s: f64,
    pub synth_fade_s: f64,
    pub synth_label_pad_s: f64,
    pub synth_jitter_s: f64,
    pub synth_noise: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// Desk-scale preset: trains in minutes on a CPU.
    pub fn desk() -> Self {
        RunConfig {
            sample_rate: 8000,
            channels: 64,
            input_kernel: 16,
            input_stride: 8,
            blocks: 2,
            layers_per_block: 4,
            conv_kernel: 3,
            pool_kernel: 3,
            pool_stride: 2,
            num_speakers: 2,
            windows: 3,
            window_length: 16000,
            collar_train_s: 0.25,
            collar_eval_s: 0.25,
            batch_size: 8,
            total_steps: 1000,
            base_lr: 0.0003,
            lr_decay_every: 50_000,
            lr_decay_factor: 0.7,
            seed: 17,
            checkpoint_every: 500,
            val_every: 500,
            val_fraction: 0.1,
            median_width: 11,
            output_dir: "runs/desk".to_string(),
            synth_duration_s: 15.0,
            synth_turn_median_s: 2.0,
            synth_overlap_prob: 0.15,
            synth_silence_prob: 0.1,
            synth_min_solo_s: 0.5,
            synth_fade_s: 0.02,
            synth_label_pad_s: 0.05,
            synth_jitter_s: 0.02,
            synth_noise: false,
        }
    }

    /// Reference-scale preset (heavy; not intended for CI).
    pub fn paper() -> Self {
        RunConfig {
            channels: 512,
            blocks: 4,
            layers_per_block: 10,
            windows: 6,
            window_length: 32000,
            batch_size: 512,
            total_steps: 200_000,
            output_dir: "runs/paper".to_string(),
            ..RunConfig::desk()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            sample_rate: self.sample_rate,
            channels: self.channels,
            input_kernel: self.input_kernel,
            input_stride: self.input_stride,
            blocks: self.blocks,
            layers_per_block: self.layers_per_block,
            conv_kernel: self.conv_kernel,
            pool_kernel: self.pool_kernel,
            pool_stride: self.pool_stride,
            window_length: self.window_length,
            windows_per_example: self.windows,
            collar_radius_s: self.collar_train_s,
            num_speakers: self.num_speakers,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            base_lr: self.base_lr,
            decay_every: self.lr_decay_every,
            decay_factor: self.lr_decay_factor,
            ..AdamConfig::default()
        }
    }

    pub fn conversation_config(&self) -> ConversationConfig {
        ConversationConfig {
            duration_s: self.synth_duration_s,
            sample_rate: self.sample_rate,
            turn_median_s: self.synth_turn_median_s,
            overlap_prob: self.synth_overlap_prob,
            silence_prob: self.synth_silence_prob,
            min_solo_s: self.synth_min_solo_s,
            edge_fade_s: self.synth_fade_s,
            label_pad_s: self.synth_label_pad_s,
            boundary_jitter_s: self.synth_jitter_s,
            ..ConversationConfig::default()
        }
    }

    /// Apply one `key=value` assignment. Unknown keys are an error.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e| {
                Error::parse(format!("key `{key}`"), format!("bad value `{value}`: {e}"))
            })
        }
        match key {
            "sample_rate" => self.sample_rate = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "input_kernel" => self.input_kernel = parse(key, value)?,
            "input_stride" => self.input_stride = parse(key, value)?,
            "blocks" => self.blocks = parse(key, value)?,
            "layers_per_block" => self.layers_per_block = parse(key, value)?,
            "conv_kernel" => self.conv_kernel = parse(key, value)?,
            "pool_kernel" => self.pool_kernel = parse(key, value)?,
            "pool_stride" => self.pool_stride = parse(key, value)?,
            "num_speakers" => self.num_speakers = parse(key, value)?,
            "windows" => self.windows = parse(key, value)?,
            "window_length" => self.window_length = parse(key, value)?,
            "collar_train_s" => self.collar_train_s = parse(key, value)?,
            "collar_eval_s" => self.collar_eval_s = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "val_every" => self.val_every = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "median_width" => self.median_width = parse(key, value)?,
            "output_dir" => self.output_dir = value.to_string(),
            "synth_duration_s" => self.synth_duration_s = parse(key, value)?,
            "synth_turn_median_s" => self.synth_turn_median_s = parse(key, value)?,
            "synth_overlap_prob" => self.synth_overlap_prob = parse(key, value)?,
            "synth_silence_prob" => self.synth_silence_prob = parse(key, value)?,
            "synth_min_solo_s" => self.synth_min_solo_s = parse(key, value)?,
            "synth_fade_s" => self.synth_fade_s = parse(key, value)?,
            "synth_label_pad_s" => self.synth_label_pad_s = parse(key, value)?,
            "synth_jitter_s" => self.synth_jitter_s = parse(key, value)?,
            "synth_noise" => self.synth_noise = parse(key, value)?,
            _ => {
                return Err(Error::parse(
                    format!("key `{key}`"),
                    "unknown configuration key",
                ))
            }
        }
        Ok(())
    }

    /// Parse a flat `key=value` text (comments with `#`, blank lines ok),
    /// starting from the desk preset.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut config = RunConfig::desk();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(
                    format!("line {}", line_no + 1),
                    format!("expected key=value, got `{line}`"),
                ));
            };
            config.apply(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Canonical `key=value` rendering (also echoed into run logs).
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        push("sample_rate", self.sample_rate.to_string());
        push("channels", self.channels.to_string());
        push("input_kernel", self.input_kernel.to_string());
        push("input_stride", self.input_stride.to_string());
        push("blocks", self.blocks.to_string());
        push("layers_per_block", self.layers_per_block.to_string());
        push("conv_kernel", self.conv_kernel.to_string());
        push("pool_kernel", self.pool_kernel.to_string());
        push("pool_stride", self.pool_stride.to_string());
        push("num_speakers", self.num_speakers.to_string());
        push("windows", self.windows.to_string());
        push("window_length", self.window_length.to_string());
        push("collar_train_s", self.collar_train_s.to_string());
        push("collar_eval_s", self.collar_eval_s.to_string());
        push("batch_size", self.batch_size.to_string());
        push("total_steps", self.total_steps.to_string());
        push("base_lr", self.base_lr.to_string());
        push("lr_decay_every", self.lr_decay_every.to_string());
        push("lr_decay_factor", self.lr_decay_factor.to_string());
        push("seed", self.seed.to_string());
        push("checkpoint_every", self.checkpoint_every.to_string());
        push("val_every", self.val_every.to_string());
        push("val_fraction", self.val_fraction.to_string());
        push("median_width", self.median_width.to_string());
        push("output_dir", self.output_dir.clone());
        push("synth_duration_s", self.synth_duration_s.to_string());
        push("synth_turn_median_s", self.synth_turn_median_s.to_string());
        push("synth_overlap_prob", self.synth_overlap_prob.to_string());
        push("synth_silence_prob", self.synth_silence_prob.to_string());
        push("synth_min_solo_s", self.synth_min_solo_s.to_string());
        push("synth_fade_s", self.synth_fade_s.to_string());
        push("synth_label_pad_s", self.synth_label_pad_s.to_string());
        push("synth_jitter_s", self.synth_jitter_s.to_string());
        push("synth_noise", self.synth_noise.to_string());
        out
    }
}

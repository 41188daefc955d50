//! Training loop: multi-window batches, batch-parallel gradient computation,
//! Adam updates, periodic validation DER and resumable checkpoints.
//!
//! Every random decision is drawn from a stream keyed by `(seed, step, item,
//! attempt)`, so a run is bit-reproducible regardless of worker count and a
//! resumed run continues exactly where the uninterrupted one would be.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{frame_labels_from_segments, sample_windows, FrameLabels, SegmentList, Waveform};
use crate::error::{Error, Result};
use crate::eval::{aggregate_der, der, masks_to_segments, DerBreakdown};
use crate::model::{solo_frames, DiveModel};
use crate::rng::{stream_seed, Rng};
use crate::tensor::{adam_step, lr_schedule, AdamState, Graph, ParamStore, Tensor};

const STREAM_SPLIT: u64 = 0x5917;
const STREAM_DRAW: u64 = 0xd4a3;

/// One training (or validation) recording with its reference segments.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub waveform: Waveform,
    pub segments: SegmentList,
}

struct Prepared {
    samples: Vec<f32>,
    labels: FrameLabels,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub params: ParamStore<f32>,
    pub adam: AdamState,
    pub steps_run: u64,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub last_val_der: Option<f64>,
}

struct ItemResult {
    grads: ParamStore<f32>,
    selector: f64,
    vad: f64,
    vad_collar: f64,
    total: f64,
}

/// Deterministic 10%-style split of example indices into (train, validation).
pub fn split_examples(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = Rng::from_seed(stream_seed(seed, &[STREAM_SPLIT]));
    rng.shuffle(&mut indices);
    let n_val = if n >= 2 { ((n as f64 * fraction).round() as usize).clamp(1, n - 1) } else { 0 };
    let val = indices[..n_val].to_vec();
    let train = indices[n_val..].to_vec();
    (train, val)
}

/// Train from scratch or resume from `resume_from`. Checkpoints and an
/// append-only metrics log are written under `out_dir`.
pub fn train(
    config: &RunConfig,
    examples: &[TrainExample],
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<TrainSummary> {
    if examples.is_empty() {
        return Err(Error::invalid("training requires a non-empty example set"));
    }
    let model = DiveModel::new(config.model_config())?;
    let adam_config = config.adam_config();
    fs::create_dir_all(out_dir)?;

    let factor = model.config.downsample_factor();
    let prepared: Vec<Prepared> = examples
        .iter()
        .map(|ex| {
            let (labels, _) = frame_labels_from_segments(
                &ex.segments,
                ex.waveform.len(),
                ex.waveform.sample_rate,
                factor,
            );
            Prepared { samples: ex.waveform.samples.clone(), labels }
        })
        .collect();
    for (i, p) in prepared.iter().enumerate() {
        if p.labels.n_speakers() != model.config.num_speakers {
            return Err(Error::invalid(format!(
                "example {i} has {} speakers, model expects {}",
                p.labels.n_speakers(),
                model.config.num_speakers
            )));
        }
    }

    let (train_idx, val_idx) = split_examples(examples.len(), config.val_fraction, config.seed);
    let config_blob = config.to_key_values();

    let (mut params, mut adam) = match resume_from {
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            if !resume_compatible(&ckpt.config, config)? {
                return Err(Error::invalid(format!(
                    "checkpoint at {} was written with a different configuration",
                    path.display()
                )));
            }
            let adam = ckpt.adam.ok_or_else(|| {
                Error::checkpoint("optimizer moments", "resume requires optimizer state")
            })?;
            (ckpt.params, adam)
        }
        None => (model.init_params::<f32>(config.seed), AdamState::new()),
    };

    let metrics_path = out_dir.join("metrics.log");
    let mut metrics = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)?;
    if adam.step == 0 {
        for line in config_blob.lines() {
            writeln!(metrics, "config.{line}")?;
        }
    }

    let collar_frames = (config.collar_train_s * model.config.frame_rate()).round() as usize;
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(config.batch_size.max(1));

    let mut last_val_der = None;
    let mut final_checkpoint = out_dir.join(format!("checkpoint_{:06}.ckpt", adam.step));
    if resume_from.is_none() && config.total_steps == 0 {
        checkpoint::save(&final_checkpoint, &params, Some(&adam), &config_blob)?;
    }

    while adam.step < config.total_steps {
        let step = adam.step;
        let step_start = Instant::now();
        let results = run_batch(
            &model,
            &params,
            &prepared,
            &train_idx,
            config,
            collar_frames,
            step,
            workers,
        );
        let mut batch: Vec<ItemResult> = Vec::with_capacity(config.batch_size);
        for result in results {
            match result {
                Ok(item) => batch.push(item),
                Err(Error::Divergence { detail, .. }) => {
                    writeln!(metrics, "step={step} event=divergence detail=\"{detail}\"")?;
                    return Err(Error::Divergence { step, detail });
                }
                Err(e) => return Err(e),
            }
        }

        let lr = lr_schedule(&adam_config, step);
        let grads = average_grads(&params, &batch);
        let mean =
            |f: fn(&ItemResult) -> f64| batch.iter().map(f).sum::<f64>() / batch.len() as f64;
        let (selector, vad, vad_collar, total) = (
            mean(|r| r.selector),
            mean(|r| r.vad),
            mean(|r| r.vad_collar),
            mean(|r| r.total),
        );
        match adam_step(&mut params, &grads, &mut adam, &adam_config) {
            Ok(()) => {}
            Err(Error::Divergence { detail, .. }) => {
                writeln!(metrics, "step={step} event=divergence detail=\"{detail}\"")?;
                return Err(Error::Divergence { step, detail });
            }
            Err(e) => return Err(e),
        }
        let wall_ms = step_start.elapsed().as_secs_f64() * 1e3;
        writeln!(
            metrics,
            "step={} lr={lr:.6e} loss_selector={selector:.6} loss_vad={vad:.6} \
             loss_vad_collar={vad_collar:.6} loss_total={total:.6} wall_ms={wall_ms:.1}",
            adam.step
        )?;

        let due = |every: u64| every > 0 && (adam.step % every == 0 || adam.step == config.total_steps);
        if due(config.val_every) && !val_idx.is_empty() {
            let val = validation_der(&model, &params, &prepared, &val_idx, config)?;
            last_val_der = Some(val.der());
            writeln!(
                metrics,
                "step={} val_der={:.6} val_miss={:.6} val_fa={:.6} val_conf={:.6}",
                adam.step,
                val.der(),
                val.missed_s / val.scored_speech_s,
                val.false_alarm_s / val.scored_speech_s,
                val.confusion_s / val.scored_speech_s
            )?;
        }
        if due(config.checkpoint_every) {
            let path = out_dir.join(format!("checkpoint_{:06}.ckpt", adam.step));
            checkpoint::save(&path, &params, Some(&adam), &config_blob)?;
            final_checkpoint = path;
        }
        metrics.flush()?;
    }

    if !final_checkpoint.exists() || adam.step != step_of(&final_checkpoint) {
        let path = out_dir.join(format!("checkpoint_{:06}.ckpt", adam.step));
        checkpoint::save(&path, &params, Some(&adam), &config_blob)?;
        final_checkpoint = path;
    }

    Ok(TrainSummary {
        params,
        adam: adam.clone(),
        steps_run: adam.step,
        final_checkpoint,
        metrics_path,
        last_val_der,
    })
}

/// A resumed run must reproduce the original computation stream exactly, so
/// every field except the stopping point and bookkeeping cadence must match.
fn resume_compatible(checkpoint_blob: &str, current: &RunConfig) -> Result<bool> {
    let mut stored = RunConfig::from_key_values(checkpoint_blob)?;
    let mut wanted = current.clone();
    for config in [&mut stored, &mut wanted] {
        config.total_steps = 0;
        config.checkpoint_every = 0;
        config.val_every = 0;
        config.output_dir.clear();
    }
    Ok(stored == wanted)
}

fn step_of(path: &Path) -> u64 {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("checkpoint_"))
        .and_then(|s| s.parse().ok())
        .unwrap_or(u64::MAX)
}

#[allow(clippy::too_many_arguments)]
fn run_batch(
    model: &DiveModel,
    params: &ParamStore<f32>,
    prepared: &[Prepared],
    train_idx: &[usize],
    config: &RunConfig,
    collar_frames: usize,
    step: u64,
    workers: usize,
) -> Vec<Result<ItemResult>> {
    let batch = config.batch_size;
    let mut results: Vec<Option<Result<ItemResult>>> = (0..batch).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for worker in 0..workers {
            // Disjoint item sets per worker, merged by index below so the
            // gradient accumulation order never depends on scheduling.
            let items: Vec<usize> = (0..batch).filter(|i| i % workers == worker).collect();
            let handle = scope.spawn({
                move || {
                    items
                        .into_iter()
                        .map(|item| {
                            (
                                item,
                                train_item(
                                    model,
                                    params,
                                    prepared,
                                    train_idx,
                                    config,
                                    collar_frames,
                                    step,
                                    item as u64,
                                ),
                            )
                        })
                        .collect::<Vec<_>>()
                }
            });
            handles.push(handle);
        }
        for handle in handles {
            for (item, result) in handle.join().expect("training worker panicked") {
                results[item] = Some(result);
            }
        }
    });
    results.into_iter().map(|r| r.expect("batch item not computed")).collect()
}

#[allow(clippy::too_many_arguments)]
fn train_item(
    model: &DiveModel,
    params: &ParamStore<f32>,
    prepared: &[Prepared],
    train_idx: &[usize],
    config: &RunConfig,
    collar_frames: usize,
    step: u64,
    item: u64,
) -> Result<ItemResult> {
    const MAX_ATTEMPTS: u64 = 64;
    let factor = model.config.downsample_factor();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng =
            Rng::from_seed(stream_seed(config.seed, &[STREAM_DRAW, step, item, attempt]));
        let example = &prepared[train_idx[rng.below(train_idx.len())]];
        let waveform = Waveform {
            samples: example.samples.clone(),
            sample_rate: config.sample_rate,
        };
        let sampled = match sample_windows(
            &waveform,
            &example.labels,
            config.windows,
            config.window_length,
            factor,
            &mut rng,
        ) {
            Ok(s) => s,
            Err(Error::Resample(_)) => continue,
            Err(e) => return Err(e),
        };
        // Every speaker needs a solo frame in the sampled windows, or the
        // selector has nothing to select from; try different windows.
        let all_have_solos = (0..sampled.labels.n_speakers())
            .all(|s| !solo_frames(&sampled.labels, s).is_empty());
        if !all_have_solos {
            continue;
        }

        let mut graph = Graph::<f32>::new();
        let bound = graph.bind_params(params);
        let forward = model.forward_train(
            &mut graph,
            &bound,
            &sampled.windows,
            &sampled.labels,
            collar_frames,
            &mut rng,
        )?;
        graph.backward(forward.total).map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { step, detail },
            other => other,
        })?;
        let grads = bound.collect_grads(&graph);
        return Ok(ItemResult {
            grads,
            selector: graph.scalar_value(forward.selector_loss) as f64,
            vad: graph.scalar_value(forward.vad_loss) as f64,
            vad_collar: graph.scalar_value(forward.vad_loss_collar) as f64,
            total: graph.scalar_value(forward.total) as f64,
        });
    }
    Err(Error::Resample(format!(
        "no usable example found for step {step} item {item} after {MAX_ATTEMPTS} attempts"
    )))
}

fn average_grads(params: &ParamStore<f32>, batch: &[ItemResult]) -> ParamStore<f32> {
    let scale = 1.0 / batch.len() as f32;
    let mut out = ParamStore::new();
    for (name, tensor) in params.iter() {
        let mut acc = Tensor::<f32>::zeros(tensor.shape().to_vec());
        for item in batch {
            let g = item.grads.get(name).expect("missing gradient entry");
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *v;
            }
        }
        for a in acc.data_mut() {
            *a *= scale;
        }
        out.insert(name.to_string(), acc).unwrap();
    }
    out
}

fn validation_der(
    model: &DiveModel,
    params: &ParamStore<f32>,
    prepared: &[Prepared],
    val_idx: &[usize],
    config: &RunConfig,
) -> Result<DerBreakdown> {
    let mut per_file = Vec::with_capacity(val_idx.len());
    for &idx in val_idx {
        let example = &prepared[idx];
        let reference = masks_to_segments(&example.labels)?;
        let output = model.infer(
            params,
            &example.samples,
            model.config.num_speakers,
            config.median_width,
        )?;
        let hypothesis = masks_to_segments(&output.labels)?;
        per_file.push(der(&reference, &hypothesis, config.collar_eval_s, false)?);
    }
    Ok(aggregate_der(&per_file))
}

/// Aggregate DER of `params` over a held-out example set (used by the
/// experiment recipes and the test suites).
pub fn evaluate(
    config: &RunConfig,
    params: &ParamStore<f32>,
    examples: &[TrainExample],
    collar_s: f64,
    median_width: usize,
) -> Result<DerBreakdown> {
    let model = DiveModel::new(config.model_config())?;
    let mut per_file = Vec::with_capacity(examples.len());
    for example in examples {
        let output = model.infer(
            params,
            &example.waveform.samples,
            model.config.num_speakers,
            median_width,
        )?;
        let hypothesis = masks_to_segments(&output.labels)?;
        per_file.push(der(&example.segments, &hypothesis, collar_s, false)?);
    }
    Ok(aggregate_der(&per_file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_conversation;

    fn tiny_config() -> RunConfig {
        let mut config = RunConfig::desk();
        config.channels = 8;
        config.blocks = 2;
        config.layers_per_block = 2;
        config.windows = 2;
        config.window_length = 1600;
        config.batch_size = 2;
        config.total_steps = 3;
        config.checkpoint_every = 1;
        config.val_every = 0;
        config.synth_duration_s = 6.0;
        config.synth_turn_median_s = 1.2;
        config.seed = 5;
        config
    }

    fn tiny_corpus(config: &RunConfig, count: usize) -> Vec<TrainExample> {
        (0..count)
            .map(|i| {
                let (waveform, segments) =
                    synth_conversation(&config.conversation_config(), 900 + i as u64).unwrap();
                TrainExample { waveform, segments }
            })
            .collect()
    }

    fn tmp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("dive-train-tests").join(name);
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (train_a, val_a) = split_examples(30, 0.1, 9);
        let (train_b, val_b) = split_examples(30, 0.1, 9);
        assert_eq!(train_a, train_b);
        assert_eq!(val_a, val_b);
        assert_eq!(val_a.len(), 3);
        let mut all: Vec<usize> = train_a.iter().chain(&val_a).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn three_steps_are_bit_deterministic() {
        let config = tiny_config();
        let corpus = tiny_corpus(&config, 6);
        let a = train(&config, &corpus, &tmp_dir("det-a"), None).unwrap();
        let b = train(&config, &corpus, &tmp_dir("det-b"), None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.adam.first, b.adam.first);
    }

    #[test]
    fn resume_equals_uninterrupted_run() {
        let config = tiny_config();
        let corpus = tiny_corpus(&config, 6);

        let full = train(&config, &corpus, &tmp_dir("resume-full"), None).unwrap();

        let mut head_config = config.clone();
        head_config.total_steps = 1;
        let head_dir = tmp_dir("resume-head");
        let head = train(&head_config, &corpus, &head_dir, None).unwrap();
        assert_eq!(step_of(&head.final_checkpoint), 1);

        // Same total as the uninterrupted run, starting from the step-1
        // checkpoint. The config blob must match the original run.
        let tail_dir = tmp_dir("resume-tail");
        let resumed = train(&config, &corpus, &tail_dir, Some(&head.final_checkpoint)).unwrap();
        assert_eq!(resumed.steps_run, 3);
        assert_eq!(resumed.params, full.params);
        assert_eq!(resumed.adam.first, full.adam.first);
        assert_eq!(resumed.adam.second, full.adam.second);
    }

    #[test]
    fn resume_with_mismatched_config_is_rejected() {
        let config = tiny_config();
        let corpus = tiny_corpus(&config, 4);
        let head = train(&config, &corpus, &tmp_dir("mismatch-head"), None).unwrap();
        let mut other = config.clone();
        other.collar_train_s = 0.0;
        let err = train(&other, &corpus, &tmp_dir("mismatch-tail"), Some(&head.final_checkpoint));
        assert!(err.is_err());
    }

    #[test]
    fn divergence_aborts_and_keeps_checkpoints() {
        let config = tiny_config();
        let corpus = tiny_corpus(&config, 4);
        let dir = tmp_dir("diverge");
        // Poison the initial parameters through a hand-built checkpoint.
        let model = DiveModel::new(config.model_config()).unwrap();
        let mut params = model.init_params::<f32>(config.seed);
        for (_, tensor) in params.iter_mut() {
            for v in tensor.data_mut() {
                *v = 1e30;
            }
        }
        let mut adam = AdamState::new();
        adam.step = 1;
        for (name, tensor) in params.iter() {
            adam.first.insert(name.to_string(), vec![0.0; tensor.numel()]);
            adam.second.insert(name.to_string(), vec![0.0; tensor.numel()]);
        }
        let poison = dir.join("checkpoint_000001.ckpt");
        checkpoint::save(&poison, &params, Some(&adam), &config.to_key_values()).unwrap();

        let result = train(&config, &corpus, &dir, Some(&poison));
        assert!(matches!(result, Err(Error::Divergence { .. })), "{result:?}");
        // The poison checkpoint (the "last good" state we started from) is
        // still on disk, and the log recorded the event.
        assert!(poison.exists());
        let log = fs::read_to_string(dir.join("metrics.log")).unwrap();
        assert!(log.contains("event=divergence"));
    }

    #[test]
    fn metrics_log_echoes_config_and_learning_rate() {
        let mut config = tiny_config();
        config.total_steps = 1;
        let corpus = tiny_corpus(&config, 4);
        let dir = tmp_dir("metrics");
        train(&config, &corpus, &dir, None).unwrap();
        let log = fs::read_to_string(dir.join("metrics.log")).unwrap();
        assert!(log.contains("config.channels=8"));
        assert!(log.contains("lr=3.000000e-4"), "{log}");
        assert!(log.contains("loss_total="));
    }
}

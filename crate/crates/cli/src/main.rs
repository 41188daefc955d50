//! Operator surface: `dive synth | train | infer | score`.
//!
//! Flags mirror the run-configuration keys (`--channels 64`, `--collar-train-s
//! 0.25`, ...); a `--config FILE` of flat `key=value` lines is applied first,
//! then flags, then the `DIVE_SEED` environment variable. Exit codes: 0 ok,
//! 1 usage, 2 data error, 3 training divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use dive_core::checkpoint;
use dive_core::config::RunConfig;
use dive_core::data::{
    frame_labels_from_segments, mix_noise, read_manifest, read_rttm, read_wav,
    synth_conversation, synth_noise, write_manifest, write_rttm, write_wav, FrameLabels,
    ManifestEntry, SegmentList, Waveform,
};
use dive_core::error::Error;
use dive_core::eval::{
    aggregate_der, contingency, cumulative_der, der, masks_to_segments, render_cdf,
    render_contingency, render_score_report, ContingencyTable,
};
use dive_core::model::DiveModel;
use dive_core::rng::{stream_seed, Rng};
use dive_core::train::{train, TrainExample};

enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage() -> String {
    "usage:\n\
     dive synth  --out DIR --count N [--config FILE] [--KEY VALUE ...]\n\
     dive train  --manifest FILE --out DIR [--resume CKPT] [--config FILE] [--KEY VALUE ...]\n\
     dive infer  --checkpoint CKPT --wav FILE --out RTTM [--speakers N] [--median-width W]\n\
     dive score  --ref-manifest FILE --hyp-dir DIR [--collar S] [--skip-overlap]\n\
\x20           [--report FILE] [--cdf FILE] [--contingency FILE]\n\
     \n\
     `--KEY VALUE` accepts every run-configuration key (dashes or underscores);\n\
     DIVE_SEED overrides the seed."
        .to_string()
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("{msg}\n\n{}", usage());
            ExitCode::from(1)
        }
        Err(CliError::Core(Error::Divergence { step, detail })) => {
            eprintln!("training diverged at step {step}: {detail}");
            ExitCode::from(3)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(args: &[String]) -> CliResult<()> {
    let Some(command) = args.first() else {
        return Err(CliError::Usage("missing subcommand".into()));
    };
    let rest = &args[1..];
    match command.as_str() {
        "synth" => cmd_synth(rest),
        "train" => cmd_train(rest),
        "infer" => cmd_infer(rest),
        "score" => cmd_score(rest),
        other => Err(CliError::Usage(format!("unknown subcommand `{other}`"))),
    }
}

/// Parsed `--flag value` / `--flag` pairs in order.
struct Flags {
    pairs: Vec<(String, Option<String>)>,
}

impl Flags {
    fn parse(args: &[String], boolean_flags: &[&str]) -> CliResult<Flags> {
        let mut pairs = Vec::new();
        let mut iter = args.iter().peekable();
        while let Some(arg) = iter.next() {
            let Some(name) = arg.strip_prefix("--") else {
                return Err(CliError::Usage(format!("expected --flag, got `{arg}`")));
            };
            let name = name.replace('-', "_");
            if boolean_flags.contains(&name.as_str()) {
                pairs.push((name, None));
            } else {
                let Some(value) = iter.next() else {
                    return Err(CliError::Usage(format!("flag --{name} needs a value")));
                };
                pairs.push((name, Some(value.clone())));
            }
        }
        Ok(Flags { pairs })
    }

    fn take(&mut self, name: &str) -> Option<String> {
        let idx = self.pairs.iter().position(|(n, _)| n == name)?;
        self.pairs.remove(idx).1
    }

    fn has(&mut self, name: &str) -> bool {
        let idx = self.pairs.iter().position(|(n, _)| n == name);
        match idx {
            Some(i) => {
                self.pairs.remove(i);
                true
            }
            None => false,
        }
    }
}

/// Build a run configuration from `--config FILE`, remaining flags, and the
/// DIVE_SEED override, in that order.
fn config_from_flags(flags: &mut Flags) -> CliResult<RunConfig> {
    let mut config = match flags.take("config") {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(Error::from)?;
            RunConfig::from_key_values(&text)?
        }
        None => RunConfig::desk(),
    };
    for (key, value) in std::mem::take(&mut flags.pairs) {
        let Some(value) = value else {
            return Err(CliError::Usage(format!("flag --{key} needs a value")));
        };
        config
            .apply(&key, &value)
            .map_err(|e| CliError::Usage(format!("{e}")))?;
    }
    if let Ok(seed) = std::env::var("DIVE_SEED") {
        let seed: u64 = seed
            .parse()
            .map_err(|e| CliError::Usage(format!("DIVE_SEED must be an integer: {e}")))?;
        config.seed = seed;
    }
    Ok(config)
}

fn cmd_synth(args: &[String]) -> CliResult<()> {
    let mut flags = Flags::parse(args, &[])?;
    let out_dir = PathBuf::from(
        flags
            .take("out")
            .ok_or_else(|| CliError::Usage("synth needs --out DIR".into()))?,
    );
    let count: usize = flags
        .take("count")
        .ok_or_else(|| CliError::Usage("synth needs --count N".into()))?
        .parse()
        .map_err(|e| CliError::Usage(format!("--count: {e}")))?;
    let config = config_from_flags(&mut flags)?;

    std::fs::create_dir_all(&out_dir).map_err(Error::from)?;
    let conversation = config.conversation_config();
    let mut entries = Vec::with_capacity(count);
    for index in 0..count {
        let seed = stream_seed(config.seed, &[0xc0_1111, index as u64]);
        let (mut waveform, segments) = synth_conversation(&conversation, seed)?;
        if config.synth_noise {
            let noise = synth_noise(waveform.len(), waveform.sample_rate, seed ^ 0x9e15e);
            let mut rng = Rng::from_seed(stream_seed(seed, &[0x9a19]));
            waveform = mix_noise(&waveform, &noise, &mut rng)?;
        }
        let stem = format!("conv{index:05}");
        let wav_path = out_dir.join(format!("{stem}.wav"));
        let rttm_path = out_dir.join(format!("{stem}.rttm"));
        write_wav(&wav_path, &waveform)?;
        write_rttm(&rttm_path, &stem, &segments)?;
        entries.push(ManifestEntry { wav: wav_path, rttm: rttm_path });
    }
    let manifest_path = out_dir.join("manifest.tsv");
    write_manifest(&manifest_path, &entries)?;
    println!("wrote {count} conversations and {}", manifest_path.display());
    Ok(())
}

fn load_examples(manifest_path: &Path) -> CliResult<Vec<TrainExample>> {
    let entries = read_manifest(manifest_path)?;
    let mut examples = Vec::with_capacity(entries.len());
    for entry in &entries {
        let waveform = read_wav(&entry.wav)?;
        let segments = single_rttm(&entry.rttm)?;
        examples.push(TrainExample { waveform, segments });
    }
    Ok(examples)
}

fn single_rttm(path: &Path) -> CliResult<SegmentList> {
    let map = read_rttm(path)?;
    let mut iter = map.into_iter();
    let Some((_, segments)) = iter.next() else {
        return Err(CliError::Core(Error::parse(
            path.display().to_string(),
            "RTTM contains no SPEAKER records",
        )));
    };
    if iter.next().is_some() {
        return Err(CliError::Core(Error::parse(
            path.display().to_string(),
            "expected a single file id per RTTM",
        )));
    }
    Ok(segments)
}

fn cmd_train(args: &[String]) -> CliResult<()> {
    let mut flags = Flags::parse(args, &[])?;
    let manifest = PathBuf::from(
        flags
            .take("manifest")
            .ok_or_else(|| CliError::Usage("train needs --manifest FILE".into()))?,
    );
    let out = flags.take("out");
    let resume = flags.take("resume").map(PathBuf::from);
    let mut config = config_from_flags(&mut flags)?;
    if let Some(out) = out {
        config.output_dir = out;
    }

    let examples = load_examples(&manifest)?;
    if examples.is_empty() {
        return Err(CliError::Core(Error::invalid(format!(
            "manifest {} lists no examples",
            manifest.display()
        ))));
    }
    let out_dir = PathBuf::from(&config.output_dir);
    let summary = train(&config, &examples, &out_dir, resume.as_deref())?;
    println!(
        "trained to step {} ({} examples); checkpoint {}; metrics {}",
        summary.steps_run,
        examples.len(),
        summary.final_checkpoint.display(),
        summary.metrics_path.display()
    );
    if let Some(val) = summary.last_val_der {
        println!("validation DER {:.2}%", 100.0 * val);
    }
    Ok(())
}

fn cmd_infer(args: &[String]) -> CliResult<()> {
    let mut flags = Flags::parse(args, &[])?;
    let ckpt_path = PathBuf::from(
        flags
            .take("checkpoint")
            .ok_or_else(|| CliError::Usage("infer needs --checkpoint CKPT".into()))?,
    );
    let wav_path = PathBuf::from(
        flags
            .take("wav")
            .ok_or_else(|| CliError::Usage("infer needs --wav FILE".into()))?,
    );
    let out_path = PathBuf::from(
        flags
            .take("out")
            .ok_or_else(|| CliError::Usage("infer needs --out RTTM".into()))?,
    );
    let speakers: Option<usize> = flags
        .take("speakers")
        .map(|v| v.parse().map_err(|e| CliError::Usage(format!("--speakers: {e}"))))
        .transpose()?;
    let median_width: Option<usize> = flags
        .take("median_width")
        .map(|v| v.parse().map_err(|e| CliError::Usage(format!("--median-width: {e}"))))
        .transpose()?;
    if let Some((key, _)) = flags.pairs.first() {
        return Err(CliError::Usage(format!("infer does not accept --{key}")));
    }

    let ckpt = checkpoint::load(&ckpt_path)?;
    let run_config = RunConfig::from_key_values(&ckpt.config)?;
    let model = DiveModel::new(run_config.model_config())?;
    let waveform: Waveform = read_wav(&wav_path)?;
    let n_speakers = speakers.unwrap_or(run_config.num_speakers);
    let width = median_width.unwrap_or(run_config.median_width);

    let output = model.infer(&ckpt.params, &waveform.samples, n_speakers, width)?;
    for (i, confidence) in output.bank.confidences.iter().enumerate() {
        println!(
            "speaker spk{} confidence {:.4} at frame {}",
            i + 1,
            confidence,
            output.bank.argmax_frames[i]
        );
    }
    let segments = masks_to_segments(&output.labels)?;
    let stem = wav_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("audio")
        .to_string();
    write_rttm(&out_path, &stem, &segments)?;
    println!("wrote {}", out_path.display());
    Ok(())
}

/// Frame-wise two-speaker contingency at the model frame rate (500 Hz),
/// padding either side with silent rows when fewer than two speakers appear.
fn file_contingency(
    reference: &SegmentList,
    hypothesis: &SegmentList,
) -> CliResult<ContingencyTable> {
    let end = reference.end_time().max(hypothesis.end_time());
    let n_samples = (end * 8000.0).ceil() as usize;
    let to_two_rows = |list: &SegmentList| -> CliResult<FrameLabels> {
        let (labels, _) = frame_labels_from_segments(list, n_samples, 8000, 16);
        match labels.n_speakers() {
            2 => Ok(labels),
            n if n < 2 => {
                let mut padded = FrameLabels::new(
                    vec!["pad1".into(), "pad2".into()],
                    labels.n_frames(),
                    labels.frame_rate(),
                );
                for i in 0..n {
                    padded.set_row(i, labels.row(i));
                }
                Ok(padded)
            }
            n => Err(CliError::Core(Error::invalid(format!(
                "contingency supports two speakers, file has {n}"
            )))),
        }
    };
    let ref_labels = to_two_rows(reference)?;
    let hyp_labels = to_two_rows(hypothesis)?;
    Ok(contingency(&ref_labels, &hyp_labels)?)
}

fn cmd_score(args: &[String]) -> CliResult<()> {
    let mut flags = Flags::parse(args, &["skip_overlap"])?;
    let skip_overlap = flags.has("skip_overlap");
    let ref_manifest = PathBuf::from(
        flags
            .take("ref_manifest")
            .ok_or_else(|| CliError::Usage("score needs --ref-manifest FILE".into()))?,
    );
    let hyp_dir = PathBuf::from(
        flags
            .take("hyp_dir")
            .ok_or_else(|| CliError::Usage("score needs --hyp-dir DIR".into()))?,
    );
    let collar: f64 = flags
        .take("collar")
        .map(|v| v.parse().map_err(|e| CliError::Usage(format!("--collar: {e}"))))
        .transpose()?
        .unwrap_or(0.25);
    let report_path = flags.take("report").map(PathBuf::from);
    let cdf_path = flags.take("cdf").map(PathBuf::from);
    let contingency_path = flags.take("contingency").map(PathBuf::from);
    if let Some((key, _)) = flags.pairs.first() {
        return Err(CliError::Usage(format!("score does not accept --{key}")));
    }

    let entries = read_manifest(&ref_manifest)?;
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    let mut frame_counts = [[0.0f64; 4]; 4];
    let mut frames_total = 0usize;
    for entry in &entries {
        let stem = entry
            .wav
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("audio")
            .to_string();
        let hyp_path = hyp_dir.join(format!("{stem}.rttm"));
        if !hyp_path.exists() {
            missing.push(hyp_path);
            continue;
        }
        let reference = single_rttm(&entry.rttm)?;
        let hypothesis = match single_rttm(&hyp_path) {
            Ok(list) => list,
            // An empty hypothesis RTTM is a valid "no speech" claim.
            Err(CliError::Core(Error::Parse { ref message, .. }))
                if message.contains("no SPEAKER records") =>
            {
                SegmentList::empty()
            }
            Err(e) => return Err(e),
        };
        let breakdown = der(&reference, &hypothesis, collar, skip_overlap)?;
        if contingency_path.is_some() {
            let table = file_contingency(&reference, &hypothesis)?;
            for p in 0..4 {
                for l in 0..4 {
                    frame_counts[p][l] +=
                        table.percentages[p][l] * table.n_frames as f64 / 100.0;
                }
            }
            frames_total += table.n_frames;
        }
        rows.push((stem, breakdown));
    }

    let report = render_score_report(&rows);
    print!("{report}");
    if let Some(path) = report_path {
        std::fs::write(&path, &report).map_err(Error::from)?;
    }
    if !rows.is_empty() {
        let per_file: Vec<f64> = rows.iter().map(|(_, b)| 100.0 * b.der()).collect();
        let points = cumulative_der(&per_file)?;
        let cdf_text = render_cdf(&points);
        if let Some(path) = cdf_path {
            std::fs::write(&path, &cdf_text).map_err(Error::from)?;
        }
        let total = aggregate_der(&rows.iter().map(|(_, b)| *b).collect::<Vec<_>>());
        println!("aggregate DER {:.2}% over {} files", 100.0 * total.der(), rows.len());
    }
    if let Some(path) = contingency_path {
        if frames_total > 0 {
            let mut percentages = [[0.0f64; 4]; 4];
            let mut label_priors = [0.0f64; 4];
            for p in 0..4 {
                for l in 0..4 {
                    percentages[p][l] = 100.0 * frame_counts[p][l] / frames_total as f64;
                    label_priors[l] += percentages[p][l];
                }
            }
            let table = ContingencyTable { percentages, label_priors, n_frames: frames_total };
            std::fs::write(&path, render_contingency(&table)).map_err(Error::from)?;
        }
    }
    if !missing.is_empty() {
        for path in &missing {
            eprintln!("missing hypothesis: {}", path.display());
        }
        return Err(CliError::Core(Error::invalid(format!(
            "{} hypothesis file(s) missing",
            missing.len()
        ))));
    }
    Ok(())
}

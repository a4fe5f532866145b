//! Command-line surface. A single optional TOML config file supplies
//! model/train/augment/enrollment defaults; command flags win over the
//! config. Exit codes: 0 success, 1 usage, 2 data error, 3 numeric
//! failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::corpus::{
    self, load_manifest, resolve_audio_paths, EnrollmentSpec, IntelligibilityRecord, Subset,
    Utterance,
};
use crate::dsp::{CmvnAccumulator, CmvnStats, LogMelConfig, LogMelExtractor};
use crate::eval::{self, EvalError};
use crate::nnet::{load_checkpoint, ModelConfig};
use crate::train::{self, Stage, TrainConfig};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Nnet(#[from] crate::nnet::NnetError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("config {path}: {reason}")]
    BadConfig { path: String, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Eval(
                EvalError::ZeroVariance(_) | EvalError::TooFewPoints(_) | EvalError::BadThreshold(_),
            ) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        }
    }
}

/// File-level configuration; every section is optional and falls back
/// to the built-in defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub enrollment: EnrollmentSpec,
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub threshold: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::BadConfig {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "wws", version, about = "Wake-word spotting engine")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Falls back to config, then the WWS_SEED env var, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute global CMVN statistics over a manifest.
    Cmvn {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the speaker-independent control (SIC) model from scratch.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        cmvn: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Fine-tune an existing checkpoint (SID stage).
    Finetune {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        cmvn: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Per-speaker SDD fine-tuning on enrollment utterances.
    Enroll {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cmvn: PathBuf,
        #[arg(long)]
        init: PathBuf,
        /// Comma-separated speaker ids.
        #[arg(long, value_delimiter = ',')]
        speakers: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        positive_duration: Option<f64>,
        #[arg(long)]
        ratio: Option<f64>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Evaluate a checkpoint on a manifest subset.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        subset: String,
        #[arg(long)]
        cmvn: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fixed decision threshold; if absent, calibrated on --dev.
        #[arg(long)]
        threshold: Option<f64>,
        /// Dev manifest for threshold calibration.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        per_speaker_csv: Option<PathBuf>,
    },
    /// Enrollment ratio/duration sweep for one speaker.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cmvn: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        speaker: String,
        /// Negative:positive duration ratios.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0])]
        ratios: Vec<f64>,
        /// Total enrollment durations in seconds.
        #[arg(long, value_delimiter = ',', default_values_t = [60.0, 120.0, 180.0])]
        durations: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Per-subset corpus statistics.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Intelligibility scoring: subjective annotator accuracies plus
    /// objective character error rate from ASR hypotheses.
    Intel {
        #[arg(long)]
        manifest: PathBuf,
        /// Tab-separated `utt_id<TAB>hypothesis` lines.
        #[arg(long)]
        hyp: PathBuf,
        /// CSV `speaker_id,acc1,acc2,...` per-annotator accuracies.
        #[arg(long)]
        subjective: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_subset(name: &str) -> Result<Subset, CliError> {
    match name {
        "train" => Ok(Subset::Train),
        "dev" => Ok(Subset::Dev),
        "test" => Ok(Subset::Test),
        "enroll" => Ok(Subset::Enroll),
        other => Err(CliError::Usage(format!("unknown subset {other:?}"))),
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("WWS_SEED").ok().and_then(|s| s.parse().ok())
}

fn effective_train_config(
    base: &TrainConfig,
    flags: &TrainFlags,
    stage: Stage,
    init: Option<PathBuf>,
) -> TrainConfig {
    let mut tc = base.clone();
    tc.stage = stage;
    tc.init_checkpoint = init;
    if let Some(lr) = flags.learning_rate {
        tc.learning_rate = lr;
    }
    if let Some(e) = flags.epochs {
        tc.epochs = e;
    }
    if let Some(b) = flags.batch_size {
        tc.batch_size = b;
    }
    tc.seed = flags.seed.or(env_seed()).unwrap_or(tc.seed);
    tc
}

fn load_resolved(path: &Path) -> Result<Vec<Utterance>, CliError> {
    let mut utts = load_manifest(path)?;
    resolve_audio_paths(path, &mut utts);
    Ok(utts)
}

fn write_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        // Ignore the error if a pool already exists (tests call run()
        // repeatedly in one process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let extractor = LogMelExtractor::new(LogMelConfig::default());

    match cli.command {
        Command::Cmvn { manifest, out } => {
            let utts = load_resolved(&manifest)?;
            if utts.is_empty() {
                return Err(CliError::Usage(format!(
                    "manifest {} is empty",
                    manifest.display()
                )));
            }
            let mut acc = CmvnAccumulator::new(config.model.input_dim);
            for utt in &utts {
                let clip = crate::dsp::read_wav(Path::new(&utt.audio_path))?;
                acc.add(&extractor.extract(&clip)?);
            }
            let stats = acc.finish()?;
            stats.save(&out)?;
            Ok(())
        }
        Command::Train {
            manifest,
            dev,
            cmvn,
            out_dir,
            flags,
        } => {
            let tc = effective_train_config(&config.train, &flags, Stage::Sic, None);
            run_training(&config, &tc, &manifest, &dev, &cmvn, &out_dir, &extractor)
        }
        Command::Finetune {
            manifest,
            dev,
            cmvn,
            init,
            out_dir,
            flags,
        } => {
            let tc = effective_train_config(&config.train, &flags, Stage::Sid, Some(init));
            run_training(&config, &tc, &manifest, &dev, &cmvn, &out_dir, &extractor)
        }
        Command::Enroll {
            manifest,
            cmvn,
            init,
            speakers,
            out_dir,
            positive_duration,
            ratio,
            flags,
        } => {
            if speakers.is_empty() {
                return Err(CliError::Usage("no --speakers given".into()));
            }
            let utts = load_resolved(&manifest)?;
            let stats = CmvnStats::load(&cmvn)?;
            let tc = effective_train_config(&config.train, &flags, Stage::Sdd, None);
            let mut spec = config.enrollment;
            spec.seed = tc.seed;
            if let Some(p) = positive_duration {
                spec.positive_duration_s = p;
            }
            if let Some(r) = ratio {
                spec.ratio_negative = r;
            }
            let outputs = train::run_sdd(
                &init,
                &utts,
                &speakers,
                &spec,
                &tc,
                &stats,
                &config.augment,
                &extractor,
                &out_dir,
            )?;
            for (speaker, path) in outputs {
                println!("{speaker}\t{}", path.display());
            }
            Ok(())
        }
        Command::Evaluate {
            manifest,
            subset,
            cmvn,
            checkpoint,
            threshold,
            dev,
            out,
            per_speaker_csv,
        } => {
            let subset = parse_subset(&subset)?;
            let utts: Vec<Utterance> = load_resolved(&manifest)?
                .into_iter()
                .filter(|u| u.subset == subset)
                .collect();
            let stats = CmvnStats::load(&cmvn)?;
            let (params, model_config) = load_checkpoint(&checkpoint)?;
            let threshold = match threshold.or(config.eval.threshold) {
                Some(t) => t,
                None => {
                    let dev = dev.ok_or_else(|| {
                        CliError::Usage("need --threshold or --dev for calibration".into())
                    })?;
                    let dev_utts: Vec<Utterance> = load_resolved(&dev)?
                        .into_iter()
                        .filter(|u| u.subset == Subset::Dev)
                        .collect();
                    eval::calibrate_threshold(&params, &model_config, &dev_utts, &stats, &extractor)?
                }
            };
            let report =
                eval::evaluate(&params, &model_config, &utts, &stats, threshold, &extractor)?;
            write_json(out.as_deref(), &report)?;
            if let Some(path) = per_speaker_csv {
                eval::write_per_speaker_csv(&path, &report)?;
            }
            Ok(())
        }
        Command::Sweep {
            manifest,
            cmvn,
            init,
            speaker,
            ratios,
            durations,
            out,
            flags,
        } => {
            let utts = load_resolved(&manifest)?;
            let stats = CmvnStats::load(&cmvn)?;
            let (params, model_config) = load_checkpoint(&init)?;
            let tc = effective_train_config(&config.train, &flags, Stage::Sdd, None);
            let mut spec = config.enrollment;
            spec.seed = tc.seed;
            let rows = eval::enrollment_sweep(
                &params,
                &model_config,
                &utts,
                &speaker,
                &ratios,
                &durations,
                &spec,
                &tc,
                &stats,
                &config.augment,
                &extractor,
            )?;
            eval::write_sweep_csv(&out, &rows)?;
            Ok(())
        }
        Command::Stats { manifest, out } => {
            let utts = load_manifest(&manifest)?;
            write_json(out.as_deref(), &corpus::corpus_stats(&utts))
        }
        Command::Intel {
            manifest,
            hyp,
            subjective,
            out,
        } => cmd_intel(&manifest, &hyp, &subjective, &out),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_training(
    config: &RunConfig,
    tc: &TrainConfig,
    manifest: &Path,
    dev: &Path,
    cmvn: &Path,
    out_dir: &Path,
    extractor: &LogMelExtractor,
) -> Result<(), CliError> {
    let train_utts: Vec<Utterance> = load_resolved(manifest)?
        .into_iter()
        .filter(|u| u.subset == Subset::Train)
        .collect();
    let dev_utts: Vec<Utterance> = load_resolved(dev)?
        .into_iter()
        .filter(|u| u.subset == Subset::Dev)
        .collect();
    let stats = CmvnStats::load(cmvn)?;
    let (report, _, _) = train::train_stage(
        tc,
        &config.model,
        &train_utts,
        &dev_utts,
        &stats,
        &config.augment,
        extractor,
        out_dir,
    )?;
    write_json(Some(&out_dir.join("report.json")), &report)?;
    Ok(())
}

fn cmd_intel(manifest: &Path, hyp: &Path, subjective: &Path, out: &Path) -> Result<(), CliError> {
    let utts = load_manifest(manifest)?;

    let mut hyps: BTreeMap<String, String> = BTreeMap::new();
    for (idx, line) in std::fs::read_to_string(hyp)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (utt_id, text) = line.split_once('\t').ok_or_else(|| CliError::Usage(format!(
            "{}:{}: expected utt_id<TAB>hypothesis",
            hyp.display(),
            idx + 1
        )))?;
        hyps.insert(utt_id.to_owned(), text.to_owned());
    }

    let mut subj: BTreeMap<String, f64> = BTreeMap::new();
    for (idx, line) in std::fs::read_to_string(subjective)?.lines().enumerate() {
        if line.trim().is_empty() || (idx == 0 && line.starts_with("speaker_id")) {
            continue;
        }
        let mut fields = line.split(',');
        let speaker = fields.next().unwrap().to_owned();
        let accs: Vec<f64> = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| {
                CliError::Usage(format!("{}:{}: {e}", subjective.display(), idx + 1))
            })?;
        subj.insert(speaker, corpus::subjective_intelligibility(&accs)?);
    }

    // Pooled CER per speaker: total edits over total reference length.
    let mut edits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for utt in &utts {
        let Some(hyp_text) = hyps.get(&utt.utt_id) else {
            continue;
        };
        let (dist, ref_len) = corpus::cer_counts(&utt.transcript, hyp_text)?;
        let entry = edits.entry(utt.speaker_id.clone()).or_default();
        entry.0 += dist;
        entry.1 += ref_len;
    }

    let records: Vec<IntelligibilityRecord> = subj
        .iter()
        .map(|(speaker, &subjective)| {
            let objective = edits
                .get(speaker)
                .map(|&(e, n)| if n > 0 { e as f64 / n as f64 } else { 0.0 })
                .unwrap_or(0.0);
            IntelligibilityRecord {
                speaker_id: speaker.clone(),
                subjective,
                objective,
            }
        })
        .collect();
    corpus::write_intelligibility_csv(out, &records)?;
    Ok(())
}

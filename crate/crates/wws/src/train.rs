//! Loss, optimizer, and the three-stage training pipeline: SIC trains
//! from scratch on control speech, SID fine-tunes SIC on the dysarthria
//! train set, SDD fine-tunes SID per speaker on enrollment utterances.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment_utterance, derive_seed, AugmentConfig, AugmentError};
use crate::corpus::{build_enrollment_set, CorpusError, EnrollmentSpec, Subset, Utterance};
use crate::dsp::{apply_cmvn, read_wav, AudioClip, CmvnStats, DspError, LogMelExtractor};
use crate::eval::{calibrate_from_records, counts_at, score, EvalError, PeakRecord};
use crate::nnet::{
    backward, forward_trace, init_params, load_checkpoint, save_checkpoint, ModelConfig,
    ModelParams, NnetError,
};

const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{stage} stage requires an init checkpoint")]
    MissingInitCheckpoint { stage: Stage },
    #[error("empty training manifest")]
    EmptyTrainSet,
    #[error("label {label} out of range for {num_keywords} keywords")]
    LabelOutOfRange { label: usize, num_keywords: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Eval(#[from] Box<EvalError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sic,
    Sid,
    Sdd,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Sic => write!(f, "sic"),
            Stage::Sid => write!(f, "sid"),
            Stage::Sdd => write!(f, "sdd"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub stage: Stage,
    pub init_checkpoint: Option<PathBuf>,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 16,
            seed: 0,
            stage: Stage::Sic,
            init_checkpoint: None,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub dev_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_checkpoint: PathBuf,
}

/// Max-pooled per-head binary cross-entropy. Each head pools its peak
/// posterior over frames (ties to the lowest frame index); gradient
/// flows only through the pooled frame. Returns the loss and
/// dL/dposteriors (T x K).
pub fn utterance_loss(
    posteriors: &Array2<f64>,
    label: Option<usize>,
) -> Result<(f64, Array2<f64>), TrainError> {
    let (t_len, num_keywords) = posteriors.dim();
    if let Some(l) = label {
        if l >= num_keywords {
            return Err(TrainError::LabelOutOfRange {
                label: l,
                num_keywords,
            });
        }
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros((t_len, num_keywords));
    for k in 0..num_keywords {
        let mut best_t = 0;
        let mut best_p = f64::NEG_INFINITY;
        for t in 0..t_len {
            if posteriors[[t, k]] > best_p {
                best_p = posteriors[[t, k]];
                best_t = t;
            }
        }
        let y = f64::from(label == Some(k));
        let p = best_p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        // Clamped probabilities saturate; no gradient there.
        if best_p > PROB_CLAMP && best_p < 1.0 - PROB_CLAMP {
            grad[[best_t, k]] = -y / p + (1.0 - y) / (1.0 - p);
        }
    }
    Ok((loss, grad))
}

/// Adam with beta1 0.9, beta2 0.999, eps 1e-8.
pub struct Adam {
    learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u32,
}

impl Adam {
    pub fn new(learning_rate: f64, num_params: usize) -> Self {
        Adam {
            learning_rate,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step_count: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step_count += 1;
        let bc1 = 1.0 - BETA1.powi(self.step_count as i32);
        let bc2 = 1.0 - BETA2.powi(self.step_count as i32);
        let grad_flat = grads.flat();
        for (i, slot) in params.flat_mut().into_iter().enumerate() {
            let g = grad_flat[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            *slot -= self.learning_rate * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

fn load_clips(utts: &[Utterance]) -> Result<Vec<AudioClip>, TrainError> {
    utts.par_iter()
        .map(|u| read_wav(Path::new(&u.audio_path)).map_err(TrainError::from))
        .collect()
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64).wrapping_mul(0x9E3779B97F4A7C15))
}

/// One pass of shuffled mini-batch Adam over the given utterances,
/// re-augmenting every epoch. Mutates `params` in place and returns the
/// per-epoch mean losses.
pub fn fine_tune(
    params: &mut ModelParams,
    model_config: &ModelConfig,
    utts: &[Utterance],
    cmvn: &CmvnStats,
    augment: &AugmentConfig,
    extractor: &LogMelExtractor,
    config: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    if utts.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let clips = load_clips(utts)?;
    let mut optimizer = Adam::new(config.learning_rate, params.num_params());
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let loss = run_epoch(
            params,
            model_config,
            utts,
            &clips,
            cmvn,
            augment,
            extractor,
            config,
            epoch,
            &mut optimizer,
        )?;
        epoch_losses.push(loss);
    }
    Ok(epoch_losses)
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    params: &mut ModelParams,
    model_config: &ModelConfig,
    utts: &[Utterance],
    clips: &[AudioClip],
    cmvn: &CmvnStats,
    augment: &AugmentConfig,
    extractor: &LogMelExtractor,
    config: &TrainConfig,
    epoch: usize,
    optimizer: &mut Adam,
) -> Result<f64, TrainError> {
    let mut order: Vec<usize> = (0..utts.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(config.seed, epoch));
    order.shuffle(&mut rng);
    let mut total_loss = 0.0;
    for batch in order.chunks(config.batch_size.max(1)) {
        // Per-utterance work runs in parallel; gradients are then
        // reduced sequentially in batch order so results do not depend
        // on scheduling.
        let results: Vec<(f64, ModelParams)> = batch
            .par_iter()
            .map(|&idx| {
                let utt = &utts[idx];
                let mut utt_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    epoch_seed(config.seed, epoch),
                    &utt.utt_id,
                ));
                let features =
                    augment_utterance(&clips[idx], augment, extractor, &mut utt_rng)?;
                let features = apply_cmvn(&features, cmvn)?;
                let trace = forward_trace(params, model_config, &features)?;
                let (loss, grad_post) = utterance_loss(trace.posteriors(), utt.keyword_index)?;
                let (grads, _) = backward(params, model_config, &trace, &grad_post)?;
                Ok((loss, grads))
            })
            .collect::<Result<_, TrainError>>()?;
        let mut batch_grads = ModelParams::zeros(model_config);
        for (loss, grads) in &results {
            total_loss += loss;
            let flat = grads.flat();
            for (i, slot) in batch_grads.flat_mut().into_iter().enumerate() {
                *slot += flat[i];
            }
        }
        let scale = 1.0 / batch.len() as f64;
        for slot in batch_grads.flat_mut() {
            *slot *= scale;
        }
        optimizer.step(params, &batch_grads);
    }
    Ok(total_loss / utts.len() as f64)
}

/// Dev peaks from precomputed (already CMVN-normalized) features.
fn dev_records(
    params: &ModelParams,
    model_config: &ModelConfig,
    dev_utts: &[Utterance],
    dev_features: &[crate::dsp::FeatureMatrix],
) -> Result<Vec<PeakRecord>, TrainError> {
    dev_utts
        .par_iter()
        .zip(dev_features)
        .map(|(utt, features)| {
            let trace = forward_trace(params, model_config, features)?;
            let posteriors = trace.posteriors();
            let mut best = (0, f64::NEG_INFINITY);
            for k in 0..posteriors.ncols() {
                let p = posteriors
                    .column(k)
                    .iter()
                    .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                if p > best.1 {
                    best = (k, p);
                }
            }
            Ok(PeakRecord {
                speaker_id: utt.speaker_id.clone(),
                label: utt.keyword_index,
                peak: best.1,
                keyword: best.0,
            })
        })
        .collect()
}

/// Runs one training stage end to end: epochs of mini-batch Adam,
/// per-epoch dev scoring at the calibrated threshold, best-checkpoint
/// tracking, and early stopping. Returns the report together with the
/// best parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    config: &TrainConfig,
    model_config: &ModelConfig,
    train_utts: &[Utterance],
    dev_utts: &[Utterance],
    cmvn: &CmvnStats,
    augment: &AugmentConfig,
    extractor: &LogMelExtractor,
    out_dir: &Path,
) -> Result<(TrainReport, ModelParams, ModelConfig), TrainError> {
    if train_utts.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let (mut params, model_config) = match (&config.init_checkpoint, config.stage) {
        (Some(path), _) => load_checkpoint(path)?,
        (None, Stage::Sic) => (init_params(model_config, config.seed), model_config.clone()),
        (None, stage) => return Err(TrainError::MissingInitCheckpoint { stage }),
    };

    let clips = load_clips(train_utts)?;
    let dev_clips = load_clips(dev_utts)?;
    let dev_features: Vec<crate::dsp::FeatureMatrix> = dev_clips
        .par_iter()
        .map(|clip| {
            apply_cmvn(&extractor.extract(clip)?, cmvn).map_err(TrainError::from)
        })
        .collect::<Result<_, _>>()?;

    std::fs::create_dir_all(out_dir)?;
    let mut optimizer = Adam::new(config.learning_rate, params.num_params());
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, PathBuf)> = None;
    for epoch in 0..config.epochs {
        let train_loss = run_epoch(
            &mut params,
            &model_config,
            train_utts,
            &clips,
            cmvn,
            augment,
            extractor,
            config,
            epoch,
            &mut optimizer,
        )?;
        let records = dev_records(&params, &model_config, dev_utts, &dev_features)?;
        let threshold = calibrate_from_records(&records).map_err(Box::new)?;
        let (_, _, dev_score) = score(&counts_at(&records, threshold)).map_err(Box::new)?;
        epochs.push(EpochStats {
            train_loss,
            dev_score,
        });
        let improved = best.as_ref().is_none_or(|(s, _, _)| dev_score < *s);
        if improved {
            let ckpt = out_dir.join(format!("{}_{}.ckpt", config.stage, epoch));
            save_checkpoint(&params, &model_config, &ckpt)?;
            best = Some((dev_score, epoch, ckpt));
        }
        let best_epoch = best.as_ref().unwrap().1;
        if epoch - best_epoch >= config.patience {
            break;
        }
    }
    let (_, best_epoch, best_checkpoint) = best.unwrap();
    let (best_params, _) = load_checkpoint(&best_checkpoint)?;
    Ok((
        TrainReport {
            epochs,
            best_epoch,
            best_checkpoint,
        },
        best_params,
        model_config,
    ))
}

/// Fine-tunes the SID model independently for each requested speaker on
/// that speaker's enrollment set and writes one checkpoint per speaker.
#[allow(clippy::too_many_arguments)]
pub fn run_sdd(
    init_checkpoint: &Path,
    manifest: &[Utterance],
    speakers: &[String],
    spec: &EnrollmentSpec,
    config: &TrainConfig,
    cmvn: &CmvnStats,
    augment: &AugmentConfig,
    extractor: &LogMelExtractor,
    out_dir: &Path,
) -> Result<Vec<(String, PathBuf)>, TrainError> {
    let (sid_params, model_config) = load_checkpoint(init_checkpoint)?;
    std::fs::create_dir_all(out_dir)?;
    let mut outputs = Vec::with_capacity(speakers.len());
    for speaker in speakers {
        let pool: Vec<Utterance> = manifest
            .iter()
            .filter(|u| u.subset == Subset::Enroll && u.speaker_id == *speaker)
            .cloned()
            .collect();
        let enroll_set = build_enrollment_set(&pool, speaker, spec)?;
        let mut params = sid_params.clone();
        fine_tune(
            &mut params,
            &model_config,
            &enroll_set,
            cmvn,
            augment,
            extractor,
            config,
        )?;
        let ckpt = out_dir.join(format!("sdd_{}_{}.ckpt", speaker, config.epochs));
        save_checkpoint(&params, &model_config, &ckpt)?;
        outputs.push((speaker.clone(), ckpt));
    }
    Ok(outputs)
}

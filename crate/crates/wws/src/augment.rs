//! Data augmentation: spectrogram time/frequency masking, speed
//! perturbation, and additive white noise at a target SNR.
//!
//! Everything takes an explicit rng so runs are reproducible; per
//! utterance seeds derive from `derive_seed(global_seed, utt_id)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{AudioClip, DspError, FeatureMatrix, LogMelExtractor};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("mask width {width} exceeds {axis} dimension {dim}")]
    MaskTooWide {
        width: usize,
        dim: usize,
        axis: &'static str,
    },
    #[error("speed ratio {0} outside engine bound [0.5, 2.0]")]
    RatioOutOfBound(f64),
    #[error("cannot set an SNR on a zero-power signal")]
    ZeroPowerSignal,
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub freq_mask_width_max: usize,
    pub time_mask_width_max: usize,
    pub n_freq_masks: usize,
    pub n_time_masks: usize,
    pub speed_ratio_range: (f64, f64),
    pub snr_db_range: (f64, f64),
    pub apply_probability: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            freq_mask_width_max: 10,
            time_mask_width_max: 25,
            n_freq_masks: 2,
            n_time_masks: 2,
            speed_ratio_range: (0.9, 1.1),
            snr_db_range: (-15.0, 15.0),
            apply_probability: 0.8,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Configuration under which `augment_utterance` is the identity.
    pub fn disabled() -> Self {
        AugmentConfig {
            apply_probability: 0.0,
            ..AugmentConfig::default()
        }
    }
}

/// Stable per-utterance seed derivation (FNV-1a over the utterance id,
/// mixed with the global seed).
pub fn derive_seed(global_seed: u64, utt_id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ global_seed.wrapping_mul(0x100000001b3);
    for b in utt_id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Zeroes `n_freq_masks` contiguous mel bands and `n_time_masks`
/// contiguous frame ranges, widths drawn uniformly in [0, max].
pub fn spec_mask<R: Rng>(
    features: &FeatureMatrix,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<FeatureMatrix, AugmentError> {
    let (t, f) = (features.num_frames(), features.num_bins());
    if config.freq_mask_width_max > f {
        return Err(AugmentError::MaskTooWide {
            width: config.freq_mask_width_max,
            dim: f,
            axis: "frequency",
        });
    }
    if config.time_mask_width_max > t {
        return Err(AugmentError::MaskTooWide {
            width: config.time_mask_width_max,
            dim: t,
            axis: "time",
        });
    }
    let mut frames = features.frames.clone();
    for _ in 0..config.n_freq_masks {
        let width = rng.random_range(0..=config.freq_mask_width_max);
        let start = rng.random_range(0..=f - width);
        frames
            .slice_mut(ndarray::s![.., start..start + width])
            .fill(0.0);
    }
    for _ in 0..config.n_time_masks {
        let width = rng.random_range(0..=config.time_mask_width_max);
        let start = rng.random_range(0..=t - width);
        frames
            .slice_mut(ndarray::s![start..start + width, ..])
            .fill(0.0);
    }
    Ok(FeatureMatrix {
        frames,
        frame_shift_s: features.frame_shift_s,
        frame_length_s: features.frame_length_s,
    })
}

const SINC_HALF_WIDTH: isize = 16; // 32-tap window

/// Changes playback speed by `ratio` via band-limited sinc resampling;
/// output length is round(len / ratio), sample rate unchanged.
pub fn speed_perturb(clip: &AudioClip, ratio: f64) -> Result<AudioClip, AugmentError> {
    if !(0.5..=2.0).contains(&ratio) {
        return Err(AugmentError::RatioOutOfBound(ratio));
    }
    if ratio == 1.0 {
        return Ok(clip.clone());
    }
    let n = clip.samples.len();
    let out_len = (n as f64 / ratio).round() as usize;
    // Low-pass at the narrower of input/output Nyquist.
    let cutoff = (1.0 / ratio).min(1.0);
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let pos = j as f64 * ratio;
        let base = pos.floor() as isize;
        let mut acc = 0.0;
        for i in (base - SINC_HALF_WIDTH + 1)..=(base + SINC_HALF_WIDTH) {
            if i < 0 || i as usize >= n {
                continue;
            }
            let t = pos - i as f64;
            let sinc = if t == 0.0 {
                cutoff
            } else {
                let x = std::f64::consts::PI * t;
                cutoff * (cutoff * x).sin() / (cutoff * x)
            };
            // Hann taper over the kernel support.
            let w = 0.5 + 0.5 * (std::f64::consts::PI * t / SINC_HALF_WIDTH as f64).cos();
            acc += clip.samples[i as usize] * sinc * w;
        }
        out.push(acc);
    }
    Ok(AudioClip {
        samples: out,
        sample_rate: clip.sample_rate,
    })
}

/// Adds gaussian noise scaled so the empirical signal-to-noise ratio of
/// this clip and this draw equals `snr_db`. No clipping here; samples
/// are clipped only when written to PCM.
pub fn add_white_noise<R: Rng>(
    clip: &AudioClip,
    snr_db: f64,
    rng: &mut R,
) -> Result<AudioClip, AugmentError> {
    let n = clip.samples.len();
    let signal_power: f64 = clip.samples.iter().map(|s| s * s).sum::<f64>() / n as f64;
    if signal_power <= 0.0 {
        return Err(AugmentError::ZeroPowerSignal);
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let noise_power: f64 = noise.iter().map(|s| s * s).sum::<f64>() / n as f64;
    let target_noise_power = signal_power / 10f64.powf(snr_db / 10.0);
    let scale = (target_noise_power / noise_power).sqrt();
    let samples = clip
        .samples
        .iter()
        .zip(&noise)
        .map(|(s, e)| s + scale * e)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
    })
}

/// The full per-utterance chain: speed perturbation, then white noise on
/// the waveform, then log-mel extraction, then spectrogram masking. Each
/// waveform/spectral step fires with `apply_probability`.
pub fn augment_utterance<R: Rng>(
    clip: &AudioClip,
    config: &AugmentConfig,
    extractor: &LogMelExtractor,
    rng: &mut R,
) -> Result<FeatureMatrix, AugmentError> {
    let mut current = clip.clone();
    if rng.random_range(0.0..1.0) < config.apply_probability {
        let (lo, hi) = config.speed_ratio_range;
        let ratio = if lo == hi { lo } else { rng.random_range(lo..hi) };
        current = speed_perturb(&current, ratio)?;
    }
    if rng.random_range(0.0..1.0) < config.apply_probability {
        let (lo, hi) = config.snr_db_range;
        let snr = if lo == hi { lo } else { rng.random_range(lo..hi) };
        if snr.is_finite() {
            current = add_white_noise(&current, snr, rng)?;
        }
    }
    let features = extractor.extract(&current)?;
    if rng.random_range(0.0..1.0) < config.apply_probability {
        let masked = spec_mask(&features, config, rng)?;
        return Ok(masked);
    }
    Ok(features)
}

//! Audio I/O, framing, log-mel filterbank extraction, and global CMVN.
//!
//! The front-end is fixed: 25 ms Hann window, 10 ms hop, 512-point FFT,
//! 40 mel bins, natural log with a 1e-10 floor. Audio is strictly 16 kHz
//! mono PCM16.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;
pub const LOG_FLOOR: f64 = 1e-10;
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: not a RIFF/WAVE file")]
    NotWav { path: String },
    #[error("{path}: wrong sample rate {got} Hz (need {SAMPLE_RATE})")]
    WrongSampleRate { path: String, got: u32 },
    #[error("{path}: wrong channel count {got} (need mono)")]
    WrongChannelCount { path: String, got: u16 },
    #[error("{path}: unsupported encoding (format {format}, {bits} bits; need PCM16)")]
    UnsupportedEncoding { path: String, format: u16, bits: u16 },
    #[error("clip of {samples} samples is shorter than one {window}-sample window")]
    ClipTooShort { samples: usize, window: usize },
    #[error("cmvn needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("feature dimension {got} does not match cmvn dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// Mono 16 kHz audio, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn read_u16(data: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([data[at], data[at + 1]])
}

fn read_u32(data: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([data[at], data[at + 1], data[at + 2], data[at + 3]])
}

/// Reads a RIFF PCM16 mono 16 kHz WAV. Samples decode to floats via
/// division by 32768.
pub fn read_wav(path: &Path) -> Result<AudioClip, DspError> {
    let display = path.display().to_string();
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    if data.len() < 12 || &data[0..4] != b"RIFF" || &data[8..12] != b"WAVE" {
        return Err(DspError::NotWav { path: display });
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut pcm: Option<&[u8]> = None;
    while pos + 8 <= data.len() {
        let id = &data[pos..pos + 4];
        let size = read_u32(&data, pos + 4) as usize;
        let body_end = (pos + 8 + size).min(data.len());
        let body = &data[pos + 8..body_end];
        match id {
            b"fmt " if body.len() >= 16 => {
                fmt = Some((
                    read_u16(body, 0),  // audio format
                    read_u16(body, 2),  // channels
                    read_u32(body, 4),  // sample rate
                    read_u16(body, 14), // bits per sample
                ));
            }
            b"data" => pcm = Some(body),
            _ => {}
        }
        pos = pos + 8 + size + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or(DspError::NotWav {
        path: display.clone(),
    })?;
    let pcm = pcm.ok_or(DspError::NotWav {
        path: display.clone(),
    })?;
    if format != 1 || bits != 16 {
        return Err(DspError::UnsupportedEncoding {
            path: display,
            format,
            bits,
        });
    }
    if channels != 1 {
        return Err(DspError::WrongChannelCount {
            path: display,
            got: channels,
        });
    }
    if rate != SAMPLE_RATE {
        return Err(DspError::WrongSampleRate {
            path: display,
            got: rate,
        });
    }
    let samples = pcm
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: rate,
    })
}

/// Writes PCM16 mono WAV, clipping samples to [-1, 1] at this final
/// write stage.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), DspError> {
    let n = clip.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(b"RIFF")?;
    out.write_all(&(36 + data_size).to_le_bytes())?;
    out.write_all(b"WAVE")?;
    out.write_all(b"fmt ")?;
    out.write_all(&16u32.to_le_bytes())?;
    out.write_all(&1u16.to_le_bytes())?; // PCM
    out.write_all(&1u16.to_le_bytes())?; // mono
    out.write_all(&clip.sample_rate.to_le_bytes())?;
    out.write_all(&(clip.sample_rate * 2).to_le_bytes())?; // byte rate
    out.write_all(&2u16.to_le_bytes())?; // block align
    out.write_all(&16u16.to_le_bytes())?;
    out.write_all(b"data")?;
    out.write_all(&data_size.to_le_bytes())?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogMelConfig {
    pub frame_length_s: f64,
    pub frame_shift_s: f64,
    pub n_mels: usize,
    pub fft_size: usize,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        LogMelConfig {
            frame_length_s: 0.025,
            frame_shift_s: 0.010,
            n_mels: 40,
            fft_size: 512,
        }
    }
}

impl LogMelConfig {
    pub fn window_samples(&self) -> usize {
        (self.frame_length_s * SAMPLE_RATE as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.frame_shift_s * SAMPLE_RATE as f64).round() as usize
    }
}

/// T x F log-mel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Array2<f64>,
    pub frame_shift_s: f64,
    pub frame_length_s: f64,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.ncols()
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the triangular mel filters spanning
/// 0 Hz to Nyquist.
pub fn mel_center_frequencies(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=n_mels)
        .map(|m| mel_to_hz(mel_max * m as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular mel filterbank over FFT power bins, peak height 1.
fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Array2<f64> {
    let n_bins = fft_size / 2 + 1;
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|m| mel_to_hz(mel_max * m as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Precomputed state for repeated log-mel extraction.
pub struct LogMelExtractor {
    config: LogMelConfig,
    window: Vec<f64>,
    filterbank: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMelExtractor {
    pub fn new(config: LogMelConfig) -> Self {
        let win_len = config.window_samples();
        // Periodic Hann window.
        let window = (0..win_len)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win_len as f64).cos())
            .collect();
        let filterbank = mel_filterbank(config.n_mels, config.fft_size, SAMPLE_RATE);
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        LogMelExtractor {
            config,
            window,
            filterbank,
            fft,
        }
    }

    pub fn config(&self) -> &LogMelConfig {
        &self.config
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMatrix, DspError> {
        let win = self.window.len();
        let hop = self.config.hop_samples();
        let n = clip.samples.len();
        if n < win {
            return Err(DspError::ClipTooShort {
                samples: n,
                window: win,
            });
        }
        let num_frames = (n - win) / hop + 1;
        let n_bins = self.config.fft_size / 2 + 1;
        let mut frames = Array2::zeros((num_frames, self.config.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); self.config.fft_size];
        let mut power = vec![0.0f64; n_bins];
        for t in 0..num_frames {
            let start = t * hop;
            for (i, c) in buf.iter_mut().enumerate() {
                let s = if i < win {
                    clip.samples[start + i] * self.window[i]
                } else {
                    0.0
                };
                *c = Complex::new(s, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            for m in 0..self.config.n_mels {
                let energy: f64 = self
                    .filterbank
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                frames[[t, m]] = energy.max(LOG_FLOOR).ln();
            }
        }
        Ok(FeatureMatrix {
            frames,
            frame_shift_s: self.config.frame_shift_s,
            frame_length_s: self.config.frame_length_s,
        })
    }
}

pub fn logmel(clip: &AudioClip, config: &LogMelConfig) -> Result<FeatureMatrix, DspError> {
    LogMelExtractor::new(*config).extract(clip)
}

/// Global per-dimension mean and population variance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmvnStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub frame_count: u64,
}

impl CmvnStats {
    pub fn save(&self, path: &Path) -> Result<(), DspError> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self).map_err(std::io::Error::other)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CmvnStats, DspError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file).map_err(std::io::Error::other)?)
    }
}

/// Single-pass mean/variance accumulator (Welford, with Chan's merge so
/// partial scans combine associatively).
#[derive(Debug, Clone)]
pub struct CmvnAccumulator {
    count: u64,
    mean: Array1<f64>,
    m2: Array1<f64>,
}

impl CmvnAccumulator {
    pub fn new(dim: usize) -> Self {
        CmvnAccumulator {
            count: 0,
            mean: Array1::zeros(dim),
            m2: Array1::zeros(dim),
        }
    }

    pub fn add(&mut self, features: &FeatureMatrix) {
        for frame in features.frames.axis_iter(Axis(0)) {
            self.count += 1;
            let k = self.count as f64;
            for (i, &x) in frame.iter().enumerate() {
                let delta = x - self.mean[i];
                self.mean[i] += delta / k;
                self.m2[i] += delta * (x - self.mean[i]);
            }
        }
    }

    pub fn merge(&mut self, other: &CmvnAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let total = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / total;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / total;
        }
        self.count += other.count;
    }

    pub fn finish(self) -> Result<CmvnStats, DspError> {
        if self.count < 2 {
            return Err(DspError::TooFewFrames(self.count as usize));
        }
        let n = self.count as f64;
        Ok(CmvnStats {
            mean: self.mean.to_vec(),
            variance: self.m2.iter().map(|&m2| m2 / n).collect(),
            frame_count: self.count,
        })
    }
}

pub fn compute_cmvn<'a, I>(features: I) -> Result<CmvnStats, DspError>
where
    I: IntoIterator<Item = &'a FeatureMatrix>,
{
    let mut acc: Option<CmvnAccumulator> = None;
    for f in features {
        acc.get_or_insert_with(|| CmvnAccumulator::new(f.num_bins()))
            .add(f);
    }
    acc.ok_or(DspError::TooFewFrames(0))?.finish()
}

/// out = (in - mean) / sqrt(variance + 1e-8), per dimension.
pub fn apply_cmvn(features: &FeatureMatrix, stats: &CmvnStats) -> Result<FeatureMatrix, DspError> {
    if features.num_bins() != stats.mean.len() {
        return Err(DspError::DimensionMismatch {
            got: features.num_bins(),
            expected: stats.mean.len(),
        });
    }
    let scale: Vec<f64> = stats
        .variance
        .iter()
        .map(|&v| 1.0 / (v + VARIANCE_FLOOR).sqrt())
        .collect();
    let mut frames = features.frames.clone();
    for mut frame in frames.axis_iter_mut(Axis(0)) {
        for (i, x) in frame.iter_mut().enumerate() {
            *x = (*x - stats.mean[i]) * scale[i];
        }
    }
    Ok(FeatureMatrix {
        frames,
        frame_shift_s: features.frame_shift_s,
        frame_length_s: features.frame_length_s,
    })
}

//! Detection decision, FAR/FRR/Score metric, threshold calibration,
//! per-speaker breakdown, intelligibility correlation, and the
//! enrollment ratio/duration sweep harness.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::corpus::{CorpusError, EnrollmentSpec, IntelligibilityRecord, Subset, Utterance};
use crate::dsp::{apply_cmvn, read_wav, CmvnStats, DspError, LogMelExtractor};
use crate::nnet::{forward, ModelConfig, ModelParams, NnetError};
use crate::train::{fine_tune, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty {0} pool in evaluation set")]
    EmptyPool(&'static str),
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("need at least 3 paired speakers for correlation, got {0}")]
    TooFewPoints(usize),
    #[error("zero variance in {0} values")]
    ZeroVariance(&'static str),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] Box<TrainError>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub n_wake: usize,
    pub n_non_wake: usize,
    pub n_fr: usize,
    pub n_fa: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    pub frr: f64,
    pub far: f64,
    pub score: f64,
    pub threshold: f64,
    pub per_speaker: BTreeMap<String, SpeakerScore>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpeakerScore {
    pub frr: f64,
    pub far: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub fired: bool,
    pub keyword: Option<usize>,
    pub peak_posterior: f64,
}

/// Fires iff any head's peak posterior reaches the threshold;
/// the keyword is the argmax head (ties to the lowest index).
pub fn detect(posteriors: &Array2<f64>, threshold: f64) -> Detection {
    let k = posteriors.ncols();
    let mut best_k = 0;
    let mut best_peak = f64::NEG_INFINITY;
    for head in 0..k {
        let peak = posteriors
            .column(head)
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        if peak > best_peak {
            best_peak = peak;
            best_k = head;
        }
    }
    let fired = best_peak >= threshold;
    Detection {
        fired,
        keyword: fired.then_some(best_k),
        peak_posterior: best_peak,
    }
}

pub fn score(counts: &EvalCounts) -> Result<(f64, f64, f64), EvalError> {
    if counts.n_wake == 0 {
        return Err(EvalError::EmptyPool("positive"));
    }
    if counts.n_non_wake == 0 {
        return Err(EvalError::EmptyPool("negative"));
    }
    let frr = counts.n_fr as f64 / counts.n_wake as f64;
    let far = counts.n_fa as f64 / counts.n_non_wake as f64;
    Ok((frr, far, frr + far))
}

/// Per-utterance detection summary; the threshold-independent part of
/// an evaluation, reusable across a threshold sweep.
#[derive(Debug, Clone)]
pub struct PeakRecord {
    pub speaker_id: String,
    pub label: Option<usize>,
    pub peak: f64,
    pub keyword: usize,
}

impl PeakRecord {
    /// A wake utterance passes only when it fires with the right
    /// keyword; a wrong-keyword fire counts as a false reject.
    fn is_false_reject(&self, threshold: f64) -> Option<bool> {
        self.label
            .map(|l| !(self.peak >= threshold && self.keyword == l))
    }

    fn is_false_alarm(&self, threshold: f64) -> Option<bool> {
        match self.label {
            Some(_) => None,
            None => Some(self.peak >= threshold),
        }
    }
}

/// Runs the front-end and model over a subset and records each
/// utterance's peak posterior and argmax keyword.
pub fn collect_peaks(
    params: &ModelParams,
    config: &ModelConfig,
    utts: &[Utterance],
    cmvn: &CmvnStats,
    extractor: &LogMelExtractor,
) -> Result<Vec<PeakRecord>, EvalError> {
    utts.par_iter()
        .map(|utt| {
            let clip = read_wav(Path::new(&utt.audio_path))?;
            let features = apply_cmvn(&extractor.extract(&clip)?, cmvn)?;
            let posteriors = forward(params, config, &features)?;
            let det = detect(&posteriors, f64::INFINITY);
            Ok(PeakRecord {
                speaker_id: utt.speaker_id.clone(),
                label: utt.keyword_index,
                peak: det.peak_posterior,
                keyword: {
                    // argmax head regardless of firing
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
                    best.0
                },
            })
        })
        .collect()
}

pub fn counts_at(records: &[PeakRecord], threshold: f64) -> EvalCounts {
    let mut counts = EvalCounts::default();
    for r in records {
        match r.is_false_reject(threshold) {
            Some(fr) => {
                counts.n_wake += 1;
                counts.n_fr += usize::from(fr);
            }
            None => {
                counts.n_non_wake += 1;
                counts.n_fa += usize::from(r.is_false_alarm(threshold).unwrap());
            }
        }
    }
    counts
}

pub fn score_records(records: &[PeakRecord], threshold: f64) -> Result<ScoreReport, EvalError> {
    let (frr, far, overall) = score(&counts_at(records, threshold))?;
    let mut per_speaker = BTreeMap::new();
    let mut speakers: Vec<&str> = records.iter().map(|r| r.speaker_id.as_str()).collect();
    speakers.sort_unstable();
    speakers.dedup();
    for speaker in speakers {
        let subset: Vec<PeakRecord> = records
            .iter()
            .filter(|r| r.speaker_id == speaker)
            .cloned()
            .collect();
        let counts = counts_at(&subset, threshold);
        // Speakers contributing only one class get no per-speaker row.
        if counts.n_wake > 0 && counts.n_non_wake > 0 {
            let (frr, far, s) = score(&counts)?;
            per_speaker.insert(
                speaker.to_owned(),
                SpeakerScore {
                    frr,
                    far,
                    score: s,
                },
            );
        }
    }
    Ok(ScoreReport {
        frr,
        far,
        score: overall,
        threshold,
        per_speaker,
    })
}

/// Full evaluation of a model on a manifest subset at a fixed threshold.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    utts: &[Utterance],
    cmvn: &CmvnStats,
    threshold: f64,
    extractor: &LogMelExtractor,
) -> Result<ScoreReport, EvalError> {
    if !(0.0..1.0).contains(&threshold) || threshold == 0.0 {
        return Err(EvalError::BadThreshold(threshold));
    }
    let records = collect_peaks(params, config, utts, cmvn, extractor)?;
    score_records(&records, threshold)
}

/// Sweeps the observed peak posteriors and returns the threshold with
/// the lowest dev score; ties resolve to the largest threshold.
pub fn calibrate_from_records(records: &[PeakRecord]) -> Result<f64, EvalError> {
    let mut candidates: Vec<f64> = records.iter().map(|r| r.peak).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    if candidates.is_empty() {
        return Err(EvalError::EmptyPool("dev"));
    }
    let mut best: Option<(f64, f64)> = None;
    for &thr in &candidates {
        let (_, _, s) = score(&counts_at(records, thr))?;
        let better = match best {
            None => true,
            Some((best_s, _)) => s <= best_s, // prefer larger threshold on ties
        };
        if better {
            best = Some((s, thr));
        }
    }
    Ok(best.unwrap().1)
}

pub fn calibrate_threshold(
    params: &ModelParams,
    config: &ModelConfig,
    dev_utts: &[Utterance],
    cmvn: &CmvnStats,
    extractor: &LogMelExtractor,
) -> Result<f64, EvalError> {
    let records = collect_peaks(params, config, dev_utts, cmvn, extractor)?;
    calibrate_from_records(&records)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(EvalError::ZeroVariance("intelligibility"));
    }
    if syy == 0.0 {
        return Err(EvalError::ZeroVariance("score"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Average ranks (ties get the mean of their positions).
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
}

/// Correlates subjective intelligibility against per-speaker wake-up
/// score over speakers present in both inputs.
pub fn intelligibility_correlation(
    records: &[IntelligibilityRecord],
    scores: &BTreeMap<String, f64>,
) -> Result<Correlation, EvalError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in records {
        if let Some(&s) = scores.get(&r.speaker_id) {
            xs.push(r.subjective);
            ys.push(s);
        }
    }
    if xs.len() < 3 {
        return Err(EvalError::TooFewPoints(xs.len()));
    }
    let p = pearson(&xs, &ys)?;
    let s = pearson(&ranks(&xs), &ranks(&ys))?;
    Ok(Correlation {
        pearson: p,
        spearman: s,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub duration_s: f64,
    pub frr: f64,
    pub far: f64,
    pub score: f64,
    pub error: Option<String>,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "ratio,duration_s,frr,far,score")?;
    for r in rows {
        if r.error.is_some() {
            writeln!(out, "{},{},nan,nan,nan", r.ratio, r.duration_s)?;
        } else {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6}",
                r.ratio, r.duration_s, r.frr, r.far, r.score
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_per_speaker_csv(path: &Path, report: &ScoreReport) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "speaker_id,frr,far,score")?;
    for (speaker, s) in &report.per_speaker {
        writeln!(out, "{},{:.6},{:.6},{:.6}", speaker, s.frr, s.far, s.score)?;
    }
    out.flush()?;
    Ok(())
}

/// One SDD fine-tune and evaluation per (ratio, duration) cell. The
/// ratio axis holds positives at `base_spec.positive_duration_s`; the
/// duration axis holds the ratio at `base_spec.ratio_negative` and
/// splits the total duration accordingly. Cells whose enrollment set
/// cannot be built are flagged and the sweep continues.
#[allow(clippy::too_many_arguments)]
pub fn enrollment_sweep(
    sid_params: &ModelParams,
    model_config: &ModelConfig,
    manifest: &[Utterance],
    speaker: &str,
    ratios: &[f64],
    total_durations_s: &[f64],
    base_spec: &EnrollmentSpec,
    train_config: &TrainConfig,
    cmvn: &CmvnStats,
    augment: &AugmentConfig,
    extractor: &LogMelExtractor,
) -> Result<Vec<SweepRow>, EvalError> {
    let enroll_pool: Vec<Utterance> = manifest
        .iter()
        .filter(|u| u.subset == Subset::Enroll && u.speaker_id == speaker)
        .cloned()
        .collect();
    let dev_utts: Vec<Utterance> = manifest
        .iter()
        .filter(|u| u.subset == Subset::Dev)
        .cloned()
        .collect();
    let test_utts: Vec<Utterance> = manifest
        .iter()
        .filter(|u| u.subset == Subset::Test && u.speaker_id == speaker)
        .cloned()
        .collect();

    let mut cells: Vec<(f64, f64, EnrollmentSpec)> = Vec::new();
    for &ratio in ratios {
        let spec = EnrollmentSpec {
            ratio_negative: ratio,
            ..*base_spec
        };
        cells.push((ratio, spec.positive_duration_s * (1.0 + ratio), spec));
    }
    for &total in total_durations_s {
        let spec = EnrollmentSpec {
            positive_duration_s: total / (1.0 + base_spec.ratio_negative),
            ..*base_spec
        };
        cells.push((base_spec.ratio_negative, total, spec));
    }

    let mut rows = Vec::with_capacity(cells.len());
    for (ratio, duration_s, spec) in cells {
        let row = sweep_cell(
            sid_params,
            model_config,
            &enroll_pool,
            &dev_utts,
            &test_utts,
            speaker,
            &spec,
            train_config,
            cmvn,
            augment,
            extractor,
        );
        match row {
            Ok((frr, far, s)) => rows.push(SweepRow {
                ratio,
                duration_s,
                frr,
                far,
                score: s,
                error: None,
            }),
            Err(EvalError::Corpus(e @ CorpusError::InsufficientEnrollment { .. })) => {
                rows.push(SweepRow {
                    ratio,
                    duration_s,
                    frr: f64::NAN,
                    far: f64::NAN,
                    score: f64::NAN,
                    error: Some(e.to_string()),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn sweep_cell(
    sid_params: &ModelParams,
    model_config: &ModelConfig,
    enroll_pool: &[Utterance],
    dev_utts: &[Utterance],
    test_utts: &[Utterance],
    speaker: &str,
    spec: &EnrollmentSpec,
    train_config: &TrainConfig,
    cmvn: &CmvnStats,
    augment: &AugmentConfig,
    extractor: &LogMelExtractor,
) -> Result<(f64, f64, f64), EvalError> {
    let enroll_set = crate::corpus::build_enrollment_set(enroll_pool, speaker, spec)?;
    let mut params = sid_params.clone();
    fine_tune(
        &mut params,
        model_config,
        &enroll_set,
        cmvn,
        augment,
        extractor,
        train_config,
    )
    .map_err(Box::new)?;
    let threshold = calibrate_threshold(&params, model_config, dev_utts, cmvn, extractor)?;
    let report = evaluate(&params, model_config, test_utts, cmvn, threshold, extractor)?;
    Ok((report.frr, report.far, report.score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn detect_below_threshold() {
        let post = Array2::from_elem((5, 3), 0.01);
        let det = detect(&post, 0.5);
        assert!(!det.fired);
        assert_eq!(det.keyword, None);
    }

    #[test]
    fn detect_picks_peak_head() {
        let mut post = Array2::from_elem((4, 5), 0.1);
        post[[2, 3]] = 0.9;
        let det = detect(&post, 0.5);
        assert!(det.fired);
        assert_eq!(det.keyword, Some(3));
        assert_eq!(det.peak_posterior, 0.9);
    }

    #[test]
    fn detect_fires_at_exact_threshold() {
        let post = array![[0.5, 0.1]];
        assert!(detect(&post, 0.5).fired);
    }

    #[test]
    fn score_arithmetic() {
        let counts = EvalCounts {
            n_wake: 10,
            n_non_wake: 10,
            n_fr: 0,
            n_fa: 0,
        };
        assert_eq!(score(&counts).unwrap(), (0.0, 0.0, 0.0));
        let counts = EvalCounts {
            n_wake: 100,
            n_non_wake: 200,
            n_fr: 3,
            n_fa: 2,
        };
        let (frr, far, s) = score(&counts).unwrap();
        assert!((frr - 0.03).abs() < 1e-12);
        assert!((far - 0.01).abs() < 1e-12);
        assert!((s - 0.04).abs() < 1e-12);
    }

    #[test]
    fn score_table2_spot_check() {
        // Operating point with FAR 0.1630 and FRR 0.3708.
        let counts = EvalCounts {
            n_wake: 10_000,
            n_non_wake: 10_000,
            n_fr: 3_708,
            n_fa: 1_630,
        };
        let (frr, far, s) = score(&counts).unwrap();
        assert!((far - 0.1630).abs() < 1e-12);
        assert!((frr - 0.3708).abs() < 1e-12);
        assert!((s - 0.5339).abs() < 1e-4);
    }

    #[test]
    fn score_empty_pools() {
        let counts = EvalCounts {
            n_wake: 0,
            n_non_wake: 5,
            n_fr: 0,
            n_fa: 0,
        };
        assert!(matches!(score(&counts), Err(EvalError::EmptyPool("positive"))));
        let counts = EvalCounts {
            n_wake: 5,
            n_non_wake: 0,
            n_fr: 0,
            n_fa: 0,
        };
        assert!(matches!(score(&counts), Err(EvalError::EmptyPool("negative"))));
    }

    fn rec(speaker: &str, label: Option<usize>, peak: f64, keyword: usize) -> PeakRecord {
        PeakRecord {
            speaker_id: speaker.to_owned(),
            label,
            peak,
            keyword,
        }
    }

    fn random_records(n: usize, seed: u64) -> Vec<PeakRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::with_capacity(n + 1);
        // A confident, correct positive anchors the top of the sweep.
        records.push(rec("s0", Some(0), 0.99, 0));
        for i in 0..n {
            let label = if rng.random_range(0.0..1.0) < 0.5 {
                Some(rng.random_range(0..3))
            } else {
                None
            };
            let bias: f64 = if label.is_some() { 0.3 } else { 0.0 };
            records.push(rec(
                &format!("s{}", i % 4),
                label,
                (rng.random_range(0.0..0.7) + bias).min(0.98f64),
                rng.random_range(0..3),
            ));
        }
        records
    }

    #[test]
    fn counts_monotone_in_threshold() {
        let records = random_records(300, 3);
        let mut prev = counts_at(&records, 0.0001);
        for i in 1..=1000 {
            let thr = i as f64 / 1000.0;
            let counts = counts_at(&records, thr);
            assert!(counts.n_fa <= prev.n_fa);
            assert!(counts.n_fr >= prev.n_fr);
            prev = counts;
        }
    }

    #[test]
    fn counts_additive_over_disjoint_subsets() {
        let records = random_records(100, 7);
        let (a, b) = records.split_at(40);
        let ca = counts_at(a, 0.5);
        let cb = counts_at(b, 0.5);
        let whole = counts_at(&records, 0.5);
        assert_eq!(whole.n_wake, ca.n_wake + cb.n_wake);
        assert_eq!(whole.n_non_wake, ca.n_non_wake + cb.n_non_wake);
        assert_eq!(whole.n_fr, ca.n_fr + cb.n_fr);
        assert_eq!(whole.n_fa, ca.n_fa + cb.n_fa);
    }

    #[test]
    fn counts_match_brute_force_recount() {
        let records = random_records(200, 11);
        let thr = 0.55;
        let counts = counts_at(&records, thr);
        let mut brute = EvalCounts::default();
        for r in &records {
            match r.label {
                Some(l) => {
                    brute.n_wake += 1;
                    let accepted = r.peak >= thr && r.keyword == l;
                    if !accepted {
                        brute.n_fr += 1;
                    }
                }
                None => {
                    brute.n_non_wake += 1;
                    if r.peak >= thr {
                        brute.n_fa += 1;
                    }
                }
            }
        }
        assert_eq!(counts, brute);
    }

    #[test]
    fn calibrate_separated_peaks() {
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(rec("s", Some(i % 3), 0.9 + 0.005 * i as f64, i % 3));
            records.push(rec("s", None, 0.1 - 0.005 * i as f64, 0));
        }
        let thr = calibrate_from_records(&records).unwrap();
        let (_, _, s) = score(&counts_at(&records, thr)).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn calibrate_all_peaks_equal() {
        let records = vec![
            rec("s", Some(0), 0.4, 0),
            rec("s", Some(1), 0.4, 1),
            rec("s", None, 0.4, 0),
        ];
        let thr = calibrate_from_records(&records).unwrap();
        assert_eq!(thr, 0.4);
    }

    #[test]
    fn calibrate_matches_grid_search_oracle() {
        for seed in 0..5 {
            let records = random_records(150, seed);
            let thr = calibrate_from_records(&records).unwrap();
            let (_, _, sweep_score) = score(&counts_at(&records, thr)).unwrap();
            let mut grid_best = f64::INFINITY;
            for i in 0..=10_000 {
                let t = i as f64 / 10_000.0;
                if t <= 0.0 {
                    continue;
                }
                let (_, _, s) = score(&counts_at(&records, t)).unwrap();
                grid_best = grid_best.min(s);
            }
            assert!(
                sweep_score <= grid_best + 1e-12,
                "seed {seed}: sweep {sweep_score} vs grid {grid_best}"
            );
        }
    }

    #[test]
    fn correlation_perfect_line() {
        let records = vec![
            IntelligibilityRecord {
                speaker_id: "a".into(),
                subjective: 0.0,
                objective: 0.0,
            },
            IntelligibilityRecord {
                speaker_id: "b".into(),
                subjective: 1.0,
                objective: 0.0,
            },
            IntelligibilityRecord {
                speaker_id: "c".into(),
                subjective: 2.0,
                objective: 0.0,
            },
        ];
        let scores: BTreeMap<String, f64> =
            [("a", 0.0), ("b", 1.0), ("c", 2.0)]
                .into_iter()
                .map(|(k, v)| (k.to_owned(), v))
                .collect();
        let c = intelligibility_correlation(&records, &scores).unwrap();
        assert!((c.pearson - 1.0).abs() < 1e-12);
        assert!((c.spearman - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_anti_monotone_spearman() {
        let records: Vec<IntelligibilityRecord> = (0..5)
            .map(|i| IntelligibilityRecord {
                speaker_id: format!("s{i}"),
                subjective: i as f64 / 5.0,
                objective: 0.0,
            })
            .collect();
        let scores: BTreeMap<String, f64> = (0..5)
            .map(|i| (format!("s{i}"), (10 - i) as f64))
            .collect();
        let c = intelligibility_correlation(&records, &scores).unwrap();
        assert!((c.spearman + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_invariant_under_monotone_transform() {
        let records: Vec<IntelligibilityRecord> = (0..6)
            .map(|i| IntelligibilityRecord {
                speaker_id: format!("s{i}"),
                subjective: (i as f64 * 0.71).sin().abs(),
                objective: 0.0,
            })
            .collect();
        let scores: BTreeMap<String, f64> = (0..6)
            .map(|i| (format!("s{i}"), ((i * 7) % 5) as f64 + 0.5))
            .collect();
        let base = intelligibility_correlation(&records, &scores).unwrap();
        let transformed: BTreeMap<String, f64> = scores
            .iter()
            .map(|(k, &v)| (k.clone(), (3.0 * v).exp()))
            .collect();
        let t = intelligibility_correlation(&records, &transformed).unwrap();
        assert!((base.spearman - t.spearman).abs() < 1e-12);
    }

    #[test]
    fn correlation_errors() {
        let records = vec![IntelligibilityRecord {
            speaker_id: "a".into(),
            subjective: 0.5,
            objective: 0.0,
        }];
        let scores: BTreeMap<String, f64> = [("a".to_owned(), 1.0)].into_iter().collect();
        assert!(matches!(
            intelligibility_correlation(&records, &scores),
            Err(EvalError::TooFewPoints(1))
        ));
        let records: Vec<IntelligibilityRecord> = (0..4)
            .map(|i| IntelligibilityRecord {
                speaker_id: format!("s{i}"),
                subjective: i as f64,
                objective: 0.0,
            })
            .collect();
        let constant: BTreeMap<String, f64> =
            (0..4).map(|i| (format!("s{i}"), 0.7)).collect();
        assert!(matches!(
            intelligibility_correlation(&records, &constant),
            Err(EvalError::ZeroVariance(_))
        ));
    }

    #[test]
    fn sweep_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let rows = vec![
            SweepRow {
                ratio: 0.0,
                duration_s: 30.0,
                frr: 0.1,
                far: 0.2,
                score: 0.3,
                error: None,
            },
            SweepRow {
                ratio: 10.0,
                duration_s: 330.0,
                frr: f64::NAN,
                far: f64::NAN,
                score: f64::NAN,
                error: Some("short".into()),
            },
        ];
        write_sweep_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "ratio,duration_s,frr,far,score");
        assert_eq!(lines.next().unwrap(), "0,30,0.100000,0.200000,0.300000");
        assert_eq!(lines.next().unwrap(), "10,330,nan,nan,nan");
    }
}

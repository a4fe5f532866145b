//! Manifest ingestion, split management, enrollment-set construction,
//! and intelligibility scoring.
//!
//! Manifests are JSON-lines, one utterance per line. Keywords are opaque
//! labels `0..K`; `keyword_index: null` marks a negative (non-wake-word)
//! utterance.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse error at line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate utt_id {0:?} in manifest")]
    DuplicateId(String),
    #[error("utterance {utt_id:?}: non-positive duration {duration_s}")]
    BadDuration { utt_id: String, duration_s: f64 },
    #[error("insufficient {side} enrollment data for speaker {speaker:?}: have {have_s:.1} s, need {need_s:.1} s")]
    InsufficientEnrollment {
        speaker: String,
        side: EnrollmentSide,
        have_s: f64,
        need_s: f64,
    },
    #[error("empty reference after normalization")]
    EmptyReference,
    #[error("empty annotator accuracy list")]
    EmptyAccuracyList,
    #[error("annotator accuracy {0} outside [0,1]")]
    AccuracyOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnrollmentSide {
    Positive,
    Negative,
}

impl std::fmt::Display for EnrollmentSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnrollmentSide::Positive => write!(f, "positive"),
            EnrollmentSide::Negative => write!(f, "negative"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Dev,
    Test,
    Enroll,
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Subset::Train => write!(f, "train"),
            Subset::Dev => write!(f, "dev"),
            Subset::Test => write!(f, "test"),
            Subset::Enroll => write!(f, "enroll"),
        }
    }
}

/// One manifest row. `keyword_index = None` means the utterance contains
/// no wake-up word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub audio_path: String,
    pub transcript: String,
    pub keyword_index: Option<usize>,
    pub duration_s: f64,
    pub subset: Subset,
}

impl Utterance {
    pub fn is_wake(&self) -> bool {
        self.keyword_index.is_some()
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<Utterance>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut utts = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let utt: Utterance =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
                line: idx + 1,
                source,
            })?;
        if utt.duration_s <= 0.0 {
            return Err(CorpusError::BadDuration {
                utt_id: utt.utt_id,
                duration_s: utt.duration_s,
            });
        }
        if !seen.insert(utt.utt_id.clone()) {
            return Err(CorpusError::DuplicateId(utt.utt_id));
        }
        utts.push(utt);
    }
    Ok(utts)
}

pub fn save_manifest(path: &Path, utts: &[Utterance]) -> Result<(), CorpusError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for utt in utts {
        serde_json::to_writer(&mut file, utt).map_err(std::io::Error::other)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Makes relative `audio_path` entries absolute against the manifest's
/// own directory.
pub fn resolve_audio_paths(manifest_path: &Path, utts: &mut [Utterance]) {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    for utt in utts {
        let p = Path::new(&utt.audio_path);
        if p.is_relative() {
            utt.audio_path = base.join(p).to_string_lossy().into_owned();
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SubsetStats {
    pub total_hours: f64,
    pub speaker_count: usize,
    pub utterance_count: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CorpusStats {
    pub per_subset: BTreeMap<Subset, SubsetStats>,
}

pub fn corpus_stats(utts: &[Utterance]) -> CorpusStats {
    let mut durations: BTreeMap<Subset, f64> = BTreeMap::new();
    let mut speakers: BTreeMap<Subset, HashSet<&str>> = BTreeMap::new();
    let mut counts: BTreeMap<Subset, usize> = BTreeMap::new();
    for utt in utts {
        *durations.entry(utt.subset).or_default() += utt.duration_s;
        speakers
            .entry(utt.subset)
            .or_default()
            .insert(&utt.speaker_id);
        *counts.entry(utt.subset).or_default() += 1;
    }
    let per_subset = counts
        .iter()
        .map(|(&subset, &utterance_count)| {
            (
                subset,
                SubsetStats {
                    total_hours: durations[&subset] / 3600.0,
                    speaker_count: speakers[&subset].len(),
                    utterance_count,
                },
            )
        })
        .collect();
    CorpusStats { per_subset }
}

/// Enrollment-set shape: fixed positives spanning `positive_duration_s`,
/// negatives drawn at random to `ratio_negative` times that duration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrollmentSpec {
    pub positive_duration_s: f64,
    pub ratio_negative: f64,
    pub seed: u64,
}

impl Default for EnrollmentSpec {
    fn default() -> Self {
        EnrollmentSpec {
            positive_duration_s: 30.0,
            ratio_negative: 5.0,
            seed: 0,
        }
    }
}

/// Builds the per-speaker enrollment set. Positives are taken first-fit
/// in manifest order until `positive_duration_s` is covered; negatives
/// are a seeded random selection of the same speaker's non-wake-word
/// utterances, taken until the ratio target is reached.
pub fn build_enrollment_set(
    utts: &[Utterance],
    speaker: &str,
    spec: &EnrollmentSpec,
) -> Result<Vec<Utterance>, CorpusError> {
    assert!(spec.positive_duration_s > 0.0, "positive duration must be > 0");
    assert!(spec.ratio_negative >= 0.0, "negative ratio must be >= 0");

    let mut positives = Vec::new();
    let mut positive_s = 0.0;
    for utt in utts.iter().filter(|u| u.speaker_id == speaker) {
        if positive_s >= spec.positive_duration_s {
            break;
        }
        if utt.is_wake() {
            positive_s += utt.duration_s;
            positives.push(utt.clone());
        }
    }
    if positive_s < spec.positive_duration_s {
        return Err(CorpusError::InsufficientEnrollment {
            speaker: speaker.to_owned(),
            side: EnrollmentSide::Positive,
            have_s: positive_s,
            need_s: spec.positive_duration_s,
        });
    }

    let negative_target = spec.ratio_negative * positive_s;
    let mut negatives = Vec::new();
    if negative_target > 0.0 {
        let mut pool: Vec<&Utterance> = utts
            .iter()
            .filter(|u| u.speaker_id == speaker && !u.is_wake())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        pool.shuffle(&mut rng);
        let mut negative_s = 0.0;
        for utt in pool {
            if negative_s >= negative_target {
                break;
            }
            negative_s += utt.duration_s;
            negatives.push(utt.clone());
        }
        if negative_s < negative_target {
            return Err(CorpusError::InsufficientEnrollment {
                speaker: speaker.to_owned(),
                side: EnrollmentSide::Negative,
                have_s: negative_s,
                need_s: negative_target,
            });
        }
    }

    positives.extend(negatives);
    Ok(positives)
}

/// Strips whitespace and punctuation before edit-distance scoring. Han
/// characters pass through unchanged; ASCII letters keep their case.
fn normalize_for_cer(text: &str) -> Vec<char> {
    text.chars()
        .filter(|&c| !c.is_whitespace() && !is_punctuation(c))
        .collect()
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{2000}'..='\u{206F}'   // general punctuation
            | '\u{3000}'..='\u{303F}' // CJK symbols and punctuation
            | '\u{FF01}'..='\u{FF0F}' // fullwidth forms (punct ranges)
            | '\u{FF1A}'..='\u{FF20}'
            | '\u{FF3B}'..='\u{FF40}'
            | '\u{FF5B}'..='\u{FF65}')
}

/// Unit-cost Levenshtein distance over code points.
pub fn edit_distance(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Character error rate: edit distance over normalized code points,
/// divided by the normalized reference length. May exceed 1 when the
/// hypothesis carries many insertions.
pub fn char_error_rate(reference: &str, hypothesis: &str) -> Result<f64, CorpusError> {
    let r = normalize_for_cer(reference);
    if r.is_empty() {
        return Err(CorpusError::EmptyReference);
    }
    let h = normalize_for_cer(hypothesis);
    Ok(edit_distance(&r, &h) as f64 / r.len() as f64)
}

/// Raw (edit count, reference length) pair for pooling CER across
/// utterances.
pub fn cer_counts(reference: &str, hypothesis: &str) -> Result<(usize, usize), CorpusError> {
    let r = normalize_for_cer(reference);
    if r.is_empty() {
        return Err(CorpusError::EmptyReference);
    }
    let h = normalize_for_cer(hypothesis);
    Ok((edit_distance(&r, &h), r.len()))
}

/// Mean annotator transcription accuracy.
pub fn subjective_intelligibility(per_annotator_accuracy: &[f64]) -> Result<f64, CorpusError> {
    if per_annotator_accuracy.is_empty() {
        return Err(CorpusError::EmptyAccuracyList);
    }
    for &a in per_annotator_accuracy {
        if !(0.0..=1.0).contains(&a) {
            return Err(CorpusError::AccuracyOutOfRange(a));
        }
    }
    Ok(per_annotator_accuracy.iter().sum::<f64>() / per_annotator_accuracy.len() as f64)
}

/// Per-speaker intelligibility pair: mean annotator accuracy (subjective)
/// and ASR character error rate (objective).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntelligibilityRecord {
    pub speaker_id: String,
    pub subjective: f64,
    pub objective: f64,
}

pub fn write_intelligibility_csv(
    path: &Path,
    records: &[IntelligibilityRecord],
) -> Result<(), CorpusError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "speaker_id,subjective,objective")?;
    for r in records {
        writeln!(file, "{},{},{}", r.speaker_id, r.subjective, r.objective)?;
    }
    file.flush()?;
    Ok(())
}

//! Shared synthetic-corpus generator for integration tests. Each
//! keyword is a distinct three-tone pattern; speakers impose a pitch
//! multiplier, a speaking-rate factor, and a background noise level, so
//! populations with shifted speaker parameters emulate domain shift.

// Each integration-test target compiles its own copy of this module and
// uses a different subset of the helpers.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wws::corpus::{save_manifest, Subset, Utterance};
use wws::dsp::{write_wav, AudioClip, SAMPLE_RATE};

pub const NUM_KEYWORDS: usize = 10;

#[derive(Debug, Clone)]
pub struct SynthSpeaker {
    pub id: String,
    /// Frequency multiplier applied to every tone.
    pub pitch: f64,
    /// Speaking-rate factor; tone durations divide by it.
    pub speed: f64,
    /// Background noise level relative to the tones.
    pub snr_db: f64,
}

impl SynthSpeaker {
    pub fn control(index: usize) -> Self {
        SynthSpeaker {
            id: format!("C{index}"),
            pitch: 0.985 + 0.003 * (index % 11) as f64,
            speed: 1.0,
            snr_db: 25.0,
        }
    }
}

/// One global geometric tone grid: every tone used by any keyword in
/// any slot is at least a factor 1.1 (roughly one mel band) away from
/// every other, so no two patterns collide in frequency anywhere.
fn grid(index: usize) -> f64 {
    400.0 * 1.1f64.powi(index as i32)
}

/// The three tone frequencies of a keyword, before speaker pitch. All
/// 30 slot values are distinct grid points, and within the control
/// population's tight pitch spread no two classes share any tone.
/// Strongly pitch-shifted speakers deliberately blur class boundaries —
/// that is the domain gap adaptation has to close.
pub fn keyword_tones(keyword: usize) -> [f64; 3] {
    [
        grid(3 * keyword),
        grid(3 * ((keyword * 3) % NUM_KEYWORDS) + 1),
        grid(3 * ((keyword * 7) % NUM_KEYWORDS) + 2),
    ]
}

fn render_tones(tones: &[f64; 3], speaker: &SynthSpeaker, rng: &mut ChaCha8Rng) -> AudioClip {
    let seg_s = 0.10 / speaker.speed;
    let pad_s = 0.08;
    let seg_len = (seg_s * SAMPLE_RATE as f64) as usize;
    let pad_len = (pad_s * SAMPLE_RATE as f64) as usize;
    let total = pad_len * 2 + seg_len * 3;
    let mut samples = vec![0.0f64; total];
    let amp = 0.3;
    for (seg, &freq) in tones.iter().enumerate() {
        let f = freq * speaker.pitch;
        let start = pad_len + seg * seg_len;
        for i in 0..seg_len {
            let t = i as f64 / SAMPLE_RATE as f64;
            // Short raised-cosine ramp keeps segment edges from clicking.
            let ramp = (i.min(seg_len - 1 - i) as f64 / 200.0).min(1.0);
            samples[start + i] = amp * ramp * (2.0 * std::f64::consts::PI * f * t).sin();
        }
    }
    // Background noise at the speaker's SNR.
    let signal_power: f64 = samples.iter().map(|s| s * s).sum::<f64>() / total as f64;
    let noise_power = signal_power / 10f64.powf(speaker.snr_db / 10.0);
    let sigma = noise_power.sqrt();
    for s in &mut samples {
        // Box-Muller keeps the generator free of extra deps here.
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        *s += sigma * g;
    }
    AudioClip {
        samples,
        sample_rate: SAMPLE_RATE,
    }
}

pub fn keyword_clip(keyword: usize, speaker: &SynthSpeaker, rng: &mut ChaCha8Rng) -> AudioClip {
    render_tones(&keyword_tones(keyword), speaker, rng)
}

/// An easy non-keyword utterance: three random tones from reserved
/// bands that no keyword pattern touches.
pub fn negative_clip(speaker: &SynthSpeaker, rng: &mut ChaCha8Rng) -> AudioClip {
    // Reserved band below the keyword grid; keyword tones start at
    // 400 Hz before pitch, 320 Hz at the lowest speaker pitch.
    let draw = |rng: &mut ChaCha8Rng| rng.random_range(210.0..290.0);
    let tones = [draw(rng), draw(rng), draw(rng)];
    render_tones(&tones, speaker, rng)
}

/// A hard non-keyword utterance: every tone is a legitimate keyword
/// tone for its slot, but the three slots come from pairwise different
/// keywords, so the combination agrees with any single keyword in at
/// most one slot. Rejecting these still requires modelling the tone
/// sequence, not just the frequency content.
pub fn chimera_clip(speaker: &SynthSpeaker, rng: &mut ChaCha8Rng) -> AudioClip {
    let (a, b, c) = loop {
        let a = rng.random_range(0..NUM_KEYWORDS);
        let b = rng.random_range(0..NUM_KEYWORDS);
        let c = rng.random_range(0..NUM_KEYWORDS);
        if a != b && b != c && a != c {
            break (a, b, c);
        }
    };
    let tones = [
        keyword_tones(a)[0],
        keyword_tones(b)[1],
        keyword_tones(c)[2],
    ];
    render_tones(&tones, speaker, rng)
}

pub struct CorpusBuilder<'a> {
    dir: &'a Path,
    rng: ChaCha8Rng,
    utts: Vec<Utterance>,
    counter: usize,
}

impl<'a> CorpusBuilder<'a> {
    pub fn new(dir: &'a Path, seed: u64) -> Self {
        CorpusBuilder {
            dir,
            rng: ChaCha8Rng::seed_from_u64(seed),
            utts: Vec::new(),
            counter: 0,
        }
    }

    pub fn push(&mut self, speaker: &SynthSpeaker, keyword: Option<usize>, subset: Subset) {
        self.push_pattern(speaker, keyword, keyword, subset);
    }

    /// Renders `pattern`'s tones but records `label`, so a test can map
    /// well-separated patterns onto a small label space.
    pub fn push_pattern(
        &mut self,
        speaker: &SynthSpeaker,
        pattern: Option<usize>,
        label: Option<usize>,
        subset: Subset,
    ) {
        let clip = match pattern {
            Some(k) => keyword_clip(k, speaker, &mut self.rng),
            None => negative_clip(speaker, &mut self.rng),
        };
        self.push_clip(speaker, clip, label, subset);
    }

    /// A hard negative that mixes tones from several keyword patterns.
    pub fn push_chimera(&mut self, speaker: &SynthSpeaker, subset: Subset) {
        let clip = chimera_clip(speaker, &mut self.rng);
        self.push_clip(speaker, clip, None, subset);
    }

    fn push_clip(
        &mut self,
        speaker: &SynthSpeaker,
        clip: AudioClip,
        keyword: Option<usize>,
        subset: Subset,
    ) {
        let utt_id = format!("u{:05}", self.counter);
        self.counter += 1;
        let wav_name = format!("{utt_id}.wav");
        write_wav(&self.dir.join(&wav_name), &clip).expect("write wav");
        self.utts.push(Utterance {
            utt_id,
            speaker_id: speaker.id.clone(),
            audio_path: wav_name,
            transcript: String::new(),
            keyword_index: keyword,
            duration_s: clip.duration_s(),
            subset,
        });
    }

    /// `positives_per_keyword` keyword utterances per class plus
    /// `negatives` non-keyword utterances, spread over the speakers.
    /// With `hard_negatives` the negatives alternate between easy
    /// reserved-band clips and hard chimeras; otherwise all are easy.
    pub fn add_block(
        &mut self,
        speakers: &[SynthSpeaker],
        positives_per_keyword: usize,
        negatives: usize,
        subset: Subset,
        hard_negatives: bool,
    ) {
        for k in 0..NUM_KEYWORDS {
            for i in 0..positives_per_keyword {
                let speaker = &speakers[(k * positives_per_keyword + i) % speakers.len()];
                self.push(speaker, Some(k), subset);
            }
        }
        for i in 0..negatives {
            let speaker = &speakers[i % speakers.len()];
            if hard_negatives && i % 2 == 1 {
                self.push_chimera(speaker, subset);
            } else {
                self.push(speaker, None, subset);
            }
        }
    }

    pub fn write_manifest(&self, name: &str) -> std::path::PathBuf {
        let path = self.dir.join(name);
        save_manifest(&path, &self.utts).expect("write manifest");
        path
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utts
    }

    /// Utterances with audio paths resolved against the corpus dir.
    pub fn resolved(&self) -> Vec<Utterance> {
        let mut utts = self.utts.clone();
        for u in &mut utts {
            u.audio_path = self.dir.join(&u.audio_path).to_string_lossy().into_owned();
        }
        utts
    }
}

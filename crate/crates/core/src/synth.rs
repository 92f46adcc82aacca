//! Synthetic toy corpus: every letter is a tone at its own frequency, letters
//! are separated by short amplitude dips, words by noise-only silence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{hz_to_mel, mel_to_hz, FeatureError, Waveform, SAMPLE_RATE};

/// Five words; `bee` exercises the repetition symbol.
pub const TOY_WORDS: [&str; 5] = ["cat", "dog", "sun", "bee", "fox"];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpusConfig {
    pub words: Vec<String>,
    pub n_utterances: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Letter duration range in milliseconds.
    pub letter_ms: (u32, u32),
    /// Silence duration range in milliseconds.
    pub silence_ms: (u32, u32),
    pub noise: f32,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            words: TOY_WORDS.iter().map(|w| w.to_string()).collect(),
            n_utterances: 50,
            min_words: 1,
            max_words: 3,
            letter_ms: (50, 70),
            silence_ms: (60, 120),
            noise: 0.01,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyUtterance {
    pub id: String,
    pub text: String,
    pub wave: Waveform,
}

/// Tone frequency for a letter, mel-spaced between 250 Hz and 6.5 kHz.
pub fn letter_frequency(c: char) -> f64 {
    let i = match c {
        'a'..='z' => c as usize - 'a' as usize,
        _ => 26,
    };
    let (lo, hi) = (hz_to_mel(250.0), hz_to_mel(6500.0));
    mel_to_hz(lo + i as f64 * (hi - lo) / 26.0)
}

fn ms_to_samples(ms: u32) -> usize {
    ms as usize * SAMPLE_RATE as usize / 1000
}

fn push_silence(out: &mut Vec<f32>, n: usize, noise: f32, rng: &mut ChaCha8Rng) {
    out.extend((0..n).map(|_| noise * rng.gen_range(-1.0f32..1.0)));
}

fn push_letter(out: &mut Vec<f32>, c: char, n: usize, noise: f32, rng: &mut ChaCha8Rng) {
    let f = letter_frequency(c) * rng.gen_range(0.98..1.02);
    let amp = rng.gen_range(0.2..0.4);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    // 10 ms raised-cosine ramps leave a dip between consecutive letters
    let ramp = ms_to_samples(10).min(n / 2);
    for k in 0..n {
        let env = if k < ramp {
            0.5 - 0.5 * (std::f64::consts::PI * k as f64 / ramp as f64).cos()
        } else if k >= n - ramp {
            0.5 - 0.5 * (std::f64::consts::PI * (n - 1 - k) as f64 / ramp as f64).cos()
        } else {
            1.0
        };
        let t = k as f64 / SAMPLE_RATE as f64;
        let tone = amp * env * (std::f64::consts::TAU * f * t + phase).sin();
        out.push(tone as f32 + noise * rng.gen_range(-1.0f32..1.0));
    }
}

/// Renders `text` (space-separated words) to audio with leading, inner and
/// trailing silences.
pub fn synthesize(text: &str, config: &ToyCorpusConfig, rng: &mut ChaCha8Rng) -> Waveform {
    let mut samples = Vec::new();
    let sil = |rng: &mut ChaCha8Rng| ms_to_samples(rng.gen_range(config.silence_ms.0..=config.silence_ms.1));
    let n = sil(rng);
    push_silence(&mut samples, n, config.noise, rng);
    for word in text.split_whitespace() {
        for c in word.chars() {
            let n = ms_to_samples(rng.gen_range(config.letter_ms.0..=config.letter_ms.1));
            push_letter(&mut samples, c, n, config.noise, rng);
        }
        let n = sil(rng);
        push_silence(&mut samples, n, config.noise, rng);
    }
    Waveform::new(samples, SAMPLE_RATE)
}

/// Generates the corpus deterministically from `config.seed`. Every word
/// of the vocabulary appears in the first utterances.
pub fn generate(config: &ToyCorpusConfig) -> Vec<ToyUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.n_utterances)
        .map(|i| {
            let n_words = rng.gen_range(config.min_words..=config.max_words);
            let mut words: Vec<&str> = (0..n_words)
                .map(|_| config.words[rng.gen_range(0..config.words.len())].as_str())
                .collect();
            if i < config.words.len() {
                words[0] = &config.words[i];
            }
            let text = words.join(" ");
            let wave = synthesize(&text, config, &mut rng);
            ToyUtterance {
                id: format!("toy{i:03}"),
                text,
                wave,
            }
        })
        .collect()
}

/// Writes `<id>.wav` files and a `manifest.tsv`; returns the manifest path.
pub fn write_corpus(dir: &Path, utterances: &[ToyUtterance]) -> Result<PathBuf, FeatureError> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for u in utterances {
        let name = format!("{}.wav", u.id);
        u.wave.write_wav(dir.join(&name))?;
        let _ = writeln!(manifest, "{}\t{}\t{}", u.id, name, u.text);
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest)?;
    Ok(path)
}

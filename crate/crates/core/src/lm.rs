//! ARPA back-off n-gram language model.
//!
//! Scores are log10 throughout; callers working in natural log convert with
//! [`LN_10`] at their boundary.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use thiserror::Error;

pub const LN_10: f64 = std::f64::consts::LN_10;
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Highest n-gram order supported; keeps [`LmState`] a fixed-size value.
pub const MAX_ORDER: usize = 8;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("model has no <unk> entry; supply an unknown-word floor to load it")]
    MissingUnk,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T, LmError> {
    Err(LmError::Parse {
        line,
        msg: msg.into(),
    })
}

/// How words outside the vocabulary are scored.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum UnkPolicy {
    /// The model must contain `<unk>`; unknown words are scored as `<unk>`.
    #[default]
    Strict,
    /// Use `<unk>` when present, otherwise this log10 probability with an
    /// empty resulting state.
    Floor(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NGramEntry {
    pub logprob: f64,
    pub backoff: f64,
}

/// Recent history, truncated to the longest suffix known to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LmState {
    ids: [u32; MAX_ORDER - 1],
    len: u8,
}

impl LmState {
    pub fn empty() -> Self {
        Self::default()
    }

    fn from_slice(ids: &[u32]) -> Self {
        let mut s = Self::default();
        s.ids[..ids.len()].copy_from_slice(ids);
        s.len = ids.len() as u8;
        s
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    /// `tables[k]` holds the (k+1)-grams.
    tables: Vec<HashMap<Vec<u32>, NGramEntry>>,
    unk: Option<u32>,
    unk_floor: Option<f64>,
}

enum Section {
    Preamble,
    Data,
    Grams(usize),
    End,
}

impl NGramLm {
    pub fn parse<R: BufRead>(reader: R, policy: UnkPolicy) -> Result<Self, LmError> {
        let mut counts: Vec<usize> = Vec::new();
        let mut lm = NGramLm {
            vocab: Vec::new(),
            ids: HashMap::new(),
            tables: Vec::new(),
            unk: None,
            unk_floor: None,
        };
        let mut section = Section::Preamble;
        let mut last_line = 0;

        // checks the order-k section against the header once it closes
        let close = |k: usize, lm: &NGramLm, counts: &[usize], line: usize| {
            let have = lm.tables[k - 1].len();
            if have != counts[k - 1] {
                return parse_err(
                    line,
                    format!("header declares {} {k}-grams but {have} present", counts[k - 1]),
                );
            }
            Ok(())
        };

        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            last_line = n;
            let line = line?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            match section {
                Section::Preamble => {
                    if text == "\\data\\" {
                        section = Section::Data;
                    }
                }
                Section::Data => {
                    if let Some(rest) = text.strip_prefix("ngram ") {
                        let Some((k, c)) = rest.split_once('=') else {
                            return parse_err(n, "expected `ngram K=COUNT`");
                        };
                        let (Ok(k), Ok(c)) = (k.trim().parse::<usize>(), c.trim().parse::<usize>())
                        else {
                            return parse_err(n, "expected `ngram K=COUNT`");
                        };
                        if k != counts.len() + 1 {
                            return parse_err(n, format!("expected ngram {} next", counts.len() + 1));
                        }
                        if k > MAX_ORDER {
                            return parse_err(n, format!("order {k} exceeds maximum {MAX_ORDER}"));
                        }
                        counts.push(c);
                        lm.tables.push(HashMap::with_capacity(c));
                    } else if let Some(k) = section_header(text) {
                        if counts.is_empty() {
                            return parse_err(n, "\\data\\ section declares no n-gram counts");
                        }
                        if k != 1 {
                            return parse_err(n, format!("expected \\1-grams:, found \\{k}-grams:"));
                        }
                        section = Section::Grams(1);
                    } else {
                        return parse_err(n, format!("unexpected line in \\data\\: `{text}`"));
                    }
                }
                Section::Grams(k) => {
                    if text == "\\end\\" {
                        close(k, &lm, &counts, n)?;
                        if k != counts.len() {
                            return parse_err(n, format!("\\end\\ before \\{}-grams:", k + 1));
                        }
                        section = Section::End;
                    } else if let Some(next) = section_header(text) {
                        close(k, &lm, &counts, n)?;
                        if next != k + 1 || next > counts.len() {
                            return parse_err(n, format!("unexpected section \\{next}-grams:"));
                        }
                        section = Section::Grams(next);
                    } else if text.starts_with('\\') {
                        return parse_err(n, format!("unknown section marker `{text}`"));
                    } else {
                        lm.parse_entry(text, k, counts.len(), n)?;
                    }
                }
                Section::End => {
                    return parse_err(n, "content after \\end\\");
                }
            }
        }
        match section {
            Section::End => {}
            Section::Preamble => return parse_err(last_line + 1, "missing \\data\\ header"),
            _ => return parse_err(last_line + 1, "missing \\end\\"),
        }

        lm.unk = lm.ids.get(UNK).copied();
        if lm.unk.is_none() {
            match policy {
                UnkPolicy::Strict => return Err(LmError::MissingUnk),
                UnkPolicy::Floor(f) => lm.unk_floor = Some(f),
            }
        }
        Ok(lm)
    }

    fn parse_entry(&mut self, text: &str, k: usize, order: usize, n: usize) -> Result<(), LmError> {
        let fields: Vec<&str> = text.split_whitespace().collect();
        let has_backoff = match fields.len() {
            x if x == k + 1 => false,
            x if x == k + 2 => true,
            x => {
                return parse_err(n, format!("{k}-gram entry has {x} fields"));
            }
        };
        let Ok(logprob) = fields[0].parse::<f64>() else {
            return parse_err(n, format!("bad log probability `{}`", fields[0]));
        };
        if logprob.is_nan() || logprob > 0.0 {
            return parse_err(n, format!("log10 probability {logprob} is not <= 0"));
        }
        let backoff = if has_backoff {
            if k == order {
                return parse_err(n, "highest-order entry carries a back-off weight");
            }
            match fields[k + 1].parse::<f64>() {
                Ok(b) if b.is_finite() => b,
                _ => return parse_err(n, format!("bad back-off weight `{}`", fields[k + 1])),
            }
        } else {
            0.0
        };
        let mut key = Vec::with_capacity(k);
        for w in &fields[1..=k] {
            let w = w.to_lowercase();
            let id = match self.ids.get(&w) {
                Some(&id) => id,
                None if k == 1 => {
                    let id = self.vocab.len() as u32;
                    self.ids.insert(w.clone(), id);
                    self.vocab.push(w);
                    id
                }
                None => return parse_err(n, format!("word `{w}` missing from 1-grams")),
            };
            key.push(id);
        }
        if k > 1 && !self.tables[k - 2].contains_key(&key[..k - 1]) {
            return parse_err(n, format!("history of {k}-gram missing from {}-grams", k - 1));
        }
        if self.tables[k - 1]
            .insert(key, NGramEntry { logprob, backoff })
            .is_some()
        {
            return parse_err(n, format!("duplicate {k}-gram"));
        }
        Ok(())
    }

    pub fn parse_str(text: &str, policy: UnkPolicy) -> Result<Self, LmError> {
        Self::parse(text.as_bytes(), policy)
    }

    /// Loads plain or gzip-compressed ARPA text.
    pub fn load<P: AsRef<Path>>(path: P, policy: UnkPolicy) -> Result<Self, LmError> {
        let mut file = BufReader::new(File::open(path)?);
        let gz = file.fill_buf()?.starts_with(&[0x1f, 0x8b]);
        if gz {
            Self::parse(BufReader::new(GzDecoder::new(file)), policy)
        } else {
            Self::parse(file, policy)
        }
    }

    pub fn read_from<R: Read>(r: R, policy: UnkPolicy) -> Result<Self, LmError> {
        Self::parse(BufReader::new(r), policy)
    }

    /// Serializes in ARPA format with entries sorted by id tuple.
    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\\data\\\n");
        for (k, t) in self.tables.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", k + 1, t.len());
        }
        let top = self.tables.len();
        for (k, t) in self.tables.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", k + 1);
            let mut keys: Vec<&Vec<u32>> = t.keys().collect();
            keys.sort();
            for key in keys {
                let e = t[key];
                let words: Vec<&str> = key.iter().map(|&id| self.vocab[id as usize].as_str()).collect();
                let _ = write!(out, "{}\t{}", e.logprob, words.join(" "));
                if k + 1 < top && e.backoff != 0.0 {
                    let _ = write!(out, "\t{}", e.backoff);
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn order(&self) -> usize {
        self.tables.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.len()).collect()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        match self.ids.get(word) {
            Some(&id) => Some(id),
            None if word.chars().any(char::is_uppercase) => self.ids.get(&word.to_lowercase()).copied(),
            None => None,
        }
    }

    /// Id used to score `word`: its own, else `<unk>`'s, else `None` (floor).
    pub fn scoring_id(&self, word: &str) -> Option<u32> {
        self.word_id(word).or(self.unk)
    }

    pub fn entry(&self, ngram: &[u32]) -> Option<NGramEntry> {
        if ngram.is_empty() || ngram.len() > self.tables.len() {
            return None;
        }
        self.tables[ngram.len() - 1].get(ngram).copied()
    }

    /// State after `<s>`, or the empty state if the model lacks it.
    pub fn begin_state(&self) -> LmState {
        match self.ids.get(BOS) {
            Some(&id) => LmState::from_slice(&[id]),
            None => LmState::empty(),
        }
    }

    /// Katz back-off probability of `id` after `state`, and the next state.
    pub fn score_id(&self, state: LmState, id: Option<u32>) -> (LmState, f64) {
        let Some(id) = id else {
            return (LmState::empty(), self.unk_floor.unwrap_or(f64::NEG_INFINITY));
        };
        let hist = state.ids();
        let mut key: Vec<u32> = Vec::with_capacity(hist.len() + 1);
        let mut penalty = 0.0;
        let mut logprob = None;
        for start in 0..=hist.len() {
            key.clear();
            key.extend_from_slice(&hist[start..]);
            key.push(id);
            if let Some(e) = self.entry(&key) {
                logprob = Some(e.logprob);
                break;
            }
            if start < hist.len() {
                if let Some(e) = self.entry(&hist[start..]) {
                    penalty += e.backoff;
                }
            }
        }
        let logprob = match logprob {
            Some(p) => p + penalty,
            // id is not a unigram (only possible through a forged id)
            None => f64::NEG_INFINITY,
        };
        (self.next_state(hist, id), logprob)
    }

    fn next_state(&self, hist: &[u32], id: u32) -> LmState {
        let mut full: Vec<u32> = hist.to_vec();
        full.push(id);
        let max_len = self.order().saturating_sub(1);
        let lo = full.len().saturating_sub(max_len);
        for start in lo..full.len() {
            if self.entry(&full[start..]).is_some() {
                return LmState::from_slice(&full[start..]);
            }
        }
        LmState::empty()
    }

    pub fn score_word(&self, state: LmState, word: &str) -> (LmState, f64) {
        self.score_id(state, self.scoring_id(word))
    }

    /// Unigram log10 probability of a word (its `<unk>` score if unknown).
    pub fn unigram(&self, word: &str) -> f64 {
        self.score_word(LmState::empty(), word).1
    }

    /// Probability of `</s>` after `state`.
    pub fn score_end(&self, state: LmState) -> f64 {
        match self.ids.get(EOS) {
            Some(&id) => self.score_id(state, Some(id)).1,
            None => 0.0,
        }
    }

    /// log10 probability of a sentence, from `<s>` through `</s>`.
    pub fn score_sentence<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut state = self.begin_state();
        let mut total = 0.0;
        for w in words {
            let (next, lp) = self.score_word(state, w.as_ref());
            total += lp;
            state = next;
        }
        total + self.score_end(state)
    }
}

fn section_header(text: &str) -> Option<usize> {
    text.strip_prefix('\\')?
        .strip_suffix("-grams:")?
        .parse()
        .ok()
}

/// Perplexity from a log10 total over `n_tokens` predicted tokens.
pub fn perplexity(total_log10: f64, n_tokens: usize) -> f64 {
    10f64.powf(-total_log10 / n_tokens.max(1) as f64)
}

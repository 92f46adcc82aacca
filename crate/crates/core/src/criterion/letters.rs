//! Grapheme inventory and the repetition-symbol codec.
//!
//! Words are spelled over 26 letters plus apostrophe. A run of identical
//! letters is rewritten greedily: the letter, then `2` if at least two more
//! copies follow, else `1` if one more follows, and the scan restarts after
//! the consumed copies. So `ll -> l1`, `lll -> l2`, `llll -> l2l`,
//! `lllll -> l2l1`.

use super::CriterionError;

pub const SILENCE: char = '#';
pub const REPEAT_ONE: char = '1';
pub const REPEAT_TWO: char = '2';
pub const BLANK: char = '∅';

/// Ordered grapheme set with index lookup. The default English inventory is
/// `a`..`z`, `'`, `#`, `1`, `2` (30 symbols); CTC uses one extra index,
/// `len()`, for the blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LetterDict {
    symbols: Vec<char>,
    index: [Option<u8>; 128],
}

impl Default for LetterDict {
    fn default() -> Self {
        Self::english()
    }
}

impl LetterDict {
    pub fn english() -> Self {
        let mut symbols: Vec<char> = ('a'..='z').collect();
        symbols.extend(['\'', SILENCE, REPEAT_ONE, REPEAT_TWO]);
        Self::from_symbols(symbols).expect("builtin inventory is valid")
    }

    /// Builds a dictionary from ASCII symbols; duplicates are rejected.
    pub fn from_symbols(symbols: Vec<char>) -> Result<Self, CriterionError> {
        let mut index = [None; 128];
        for (i, &c) in symbols.iter().enumerate() {
            if !c.is_ascii() || i > u8::MAX as usize {
                return Err(CriterionError::UnsupportedChar(c));
            }
            if index[c as usize].is_some() {
                return Err(CriterionError::DuplicateSymbol(c));
            }
            index[c as usize] = Some(i as u8);
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Index of the CTC blank, one past the last grapheme.
    pub fn blank(&self) -> usize {
        self.symbols.len()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        if c.is_ascii() {
            self.index[c as usize].map(usize::from)
        } else {
            None
        }
    }

    /// Symbol for `idx`; the blank index maps to `∅`.
    pub fn symbol(&self, idx: usize) -> char {
        if idx == self.blank() {
            BLANK
        } else {
            self.symbols[idx]
        }
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn silence(&self) -> usize {
        self.index_of(SILENCE).expect("inventory has a silence symbol")
    }

    pub fn is_repetition(&self, idx: usize) -> bool {
        idx < self.len() && matches!(self.symbols[idx], REPEAT_ONE | REPEAT_TWO)
    }

    /// Maps an encoded spelling (e.g. `hel1o`) to indices.
    pub fn spell(&self, encoded: &str) -> Result<Vec<usize>, CriterionError> {
        encoded
            .chars()
            .map(|c| self.index_of(c).ok_or(CriterionError::UnsupportedChar(c)))
            .collect()
    }

    /// Encodes a normalized transcription to grapheme ids: words are
    /// repetition-encoded and joined by `#`; with `surround_silence` a `#`
    /// is also added at both ends.
    pub fn encode_transcript(
        &self,
        text: &str,
        surround_silence: bool,
    ) -> Result<Vec<usize>, CriterionError> {
        let sil = self.silence();
        let mut out = Vec::new();
        if surround_silence {
            out.push(sil);
        }
        for (i, word) in text.split_whitespace().enumerate() {
            if i > 0 {
                out.push(sil);
            }
            out.extend(self.spell(&encode_repetitions(word)?)?);
        }
        if surround_silence && out.len() > 1 {
            out.push(sil);
        }
        Ok(out)
    }

    /// Inverse of [`encode_transcript`](Self::encode_transcript), lenient
    /// about malformed input: stray repetition symbols are dropped, runs of
    /// `#` act as one word boundary, and the blank is ignored.
    pub fn decode_graphemes(&self, ids: &[usize]) -> String {
        let mut words: Vec<String> = Vec::new();
        let mut current = String::new();
        let mut last: Option<char> = None;
        for &id in ids {
            if id >= self.len() {
                continue;
            }
            let c = self.symbols[id];
            match c {
                SILENCE => {
                    if !current.is_empty() {
                        words.push(std::mem::take(&mut current));
                    }
                    last = None;
                }
                REPEAT_ONE | REPEAT_TWO => {
                    if let Some(prev) = last {
                        let n = if c == REPEAT_ONE { 1 } else { 2 };
                        current.extend(std::iter::repeat_n(prev, n));
                    }
                    last = None;
                }
                _ => {
                    current.push(c);
                    last = Some(c);
                }
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
        words.join(" ")
    }
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_lowercase() || c == '\''
}

/// Rewrites runs of repeated letters with repetition symbols.
pub fn encode_repetitions(word: &str) -> Result<String, CriterionError> {
    let chars: Vec<char> = word.chars().collect();
    if let Some(&bad) = chars.iter().find(|c| !is_word_char(**c)) {
        return Err(CriterionError::UnsupportedChar(bad));
    }
    let mut out = String::with_capacity(chars.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let mut run = 1;
        while i + run < chars.len() && chars[i + run] == c {
            run += 1;
        }
        let mut left = run;
        while left > 0 {
            out.push(c);
            left -= 1;
            match left {
                0 => {}
                1 => {
                    out.push(REPEAT_ONE);
                    left = 0;
                }
                _ => {
                    out.push(REPEAT_TWO);
                    left -= 2;
                }
            }
        }
        i += run;
    }
    Ok(out)
}

/// Expands repetition symbols; the inverse of [`encode_repetitions`].
pub fn decode_repetitions(encoded: &str) -> Result<String, CriterionError> {
    let mut out = String::with_capacity(encoded.len() + 4);
    let mut last: Option<char> = None;
    for c in encoded.chars() {
        match c {
            REPEAT_ONE | REPEAT_TWO => {
                let prev = last.ok_or(CriterionError::DanglingRepetition(c))?;
                let n = if c == REPEAT_ONE { 1 } else { 2 };
                out.extend(std::iter::repeat_n(prev, n));
                last = None;
            }
            c if is_word_char(c) => {
                out.push(c);
                last = Some(c);
            }
            other => return Err(CriterionError::UnsupportedChar(other)),
        }
    }
    Ok(out)
}

/// Lowercases and removes characters outside the grapheme alphabet.
/// Returns the cleaned text and the number of characters dropped.
pub fn normalize_transcript(text: &str) -> (String, usize) {
    let mut dropped = 0;
    let lowered = text.to_lowercase();
    let kept: String = lowered
        .chars()
        .map(|c| {
            if is_word_char(c) || c.is_whitespace() {
                c
            } else {
                dropped += 1;
                ' '
            }
        })
        .collect();
    (kept.split_whitespace().collect::<Vec<_>>().join(" "), dropped)
}

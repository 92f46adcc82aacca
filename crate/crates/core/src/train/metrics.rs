use crate::criterion::{collapse_path, Criterion, LetterDict};
use crate::tensor::{argmax, Matrix};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=hypothesis.len()).collect();
    for (i, r) in reference.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = diag + usize::from(r != h);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[hypothesis.len()]
}

fn rate(distance: usize, ref_len: usize) -> f64 {
    distance as f64 / ref_len.max(1) as f64
}

/// Letter error rate over the characters of the transcriptions, word
/// separators included.
pub fn ler(reference: &str, hypothesis: &str) -> f64 {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    rate(edit_distance(&r, &h), r.len())
}

pub fn wer(reference: &str, hypothesis: &str) -> f64 {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    rate(edit_distance(&r, &h), r.len())
}

/// Accumulates corpus-level error counts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorCounts {
    pub letter_errors: usize,
    pub letters: usize,
    pub word_errors: usize,
    pub words: usize,
}

impl ErrorCounts {
    pub fn add(&mut self, reference: &str, hypothesis: &str) {
        let r: Vec<char> = reference.chars().collect();
        let h: Vec<char> = hypothesis.chars().collect();
        self.letter_errors += edit_distance(&r, &h);
        self.letters += r.len();
        let r: Vec<&str> = reference.split_whitespace().collect();
        let h: Vec<&str> = hypothesis.split_whitespace().collect();
        self.word_errors += edit_distance(&r, &h);
        self.words += r.len();
    }

    pub fn ler(&self) -> f64 {
        rate(self.letter_errors, self.letters)
    }

    pub fn wer(&self) -> f64 {
        rate(self.word_errors, self.words)
    }
}

/// Frame-wise argmax label path.
pub fn best_path(emissions: &Matrix) -> Vec<usize> {
    emissions.iter_rows().map(argmax).collect()
}

/// Decodes without lexicon or LM: argmax per frame, merge stays (and drop
/// blanks for CTC), expand repetition symbols, split words on `#`.
pub fn greedy_decode(emissions: &Matrix, mode: Criterion, dict: &LetterDict) -> String {
    let blank = match mode {
        Criterion::Ctc => Some(dict.blank()),
        Criterion::Asg => None,
    };
    dict.decode_graphemes(&collapse_path(&best_path(emissions), blank))
}

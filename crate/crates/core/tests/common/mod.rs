//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use glu_asr::criterion::{collapse_path, TransitionTable};
use glu_asr::decoder::{DecoderParams, LabelSet, Lexicon};
use glu_asr::lm::{NGramLm, UnkPolicy, LN_10};
use glu_asr::tensor::{logadd_all, Matrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn random_transitions<R: Rng>(rng: &mut R, n: usize, scale: f64) -> TransitionTable {
    TransitionTable {
        trans: random_matrix(rng, n, n, scale),
        start: (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    }
}

/// Random target over `0..n_labels`, length in `1..=max_len`.
pub fn random_target<R: Rng>(rng: &mut R, n_labels: usize, max_len: usize) -> Vec<usize> {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| rng.gen_range(0..n_labels)).collect()
}

/// Calls `f` on every label sequence of length `frames` over `n_labels`.
pub fn for_each_path(frames: usize, n_labels: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0usize; frames];
    loop {
        f(&path);
        let mut i = frames;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            path[i] += 1;
            if path[i] < n_labels {
                break;
            }
            path[i] = 0;
        }
    }
}

/// Emission score plus, when given, start and transition scores.
pub fn path_score(e: &Matrix, tr: Option<&TransitionTable>, path: &[usize]) -> f64 {
    let mut s: f64 = path.iter().enumerate().map(|(t, &l)| e.get(t, l)).sum();
    if let Some(tr) = tr {
        s += tr.start[path[0]];
        for w in path.windows(2) {
            s += tr.trans.get(w[0], w[1]);
        }
    }
    s
}

pub fn ctc_accepts(path: &[usize], target: &[usize], blank: usize) -> bool {
    collapse_path(path, Some(blank)) == target
}

/// Number of ways to cut `path` into `target.len()` non-empty constant runs
/// labelled `target[0], target[1], ...`.
pub fn asg_segmentations(path: &[usize], target: &[usize]) -> u64 {
    let (t_max, n) = (path.len(), target.len());
    // ways[i][t]: first t frames cover the first i target symbols
    let mut ways = vec![vec![0u64; t_max + 1]; n + 1];
    ways[0][0] = 1;
    for i in 1..=n {
        for t in 1..=t_max {
            let mut acc = 0;
            let mut s = t;
            while s > 0 && path[s - 1] == target[i - 1] {
                s -= 1;
                acc += ways[i - 1][s];
            }
            ways[i][t] = acc;
        }
    }
    ways[n][t_max]
}

pub struct Enumerated {
    pub logadd: f64,
    pub max: f64,
    pub paths: u64,
}

fn enumerate(frames: usize, n_labels: usize, mut weight: impl FnMut(&[usize]) -> Option<(u64, f64)>) -> Enumerated {
    let mut scores = Vec::new();
    let mut paths = 0;
    for_each_path(frames, n_labels, |p| {
        if let Some((k, s)) = weight(p) {
            paths += k;
            scores.push(s + (k as f64).ln());
        }
    });
    Enumerated {
        logadd: logadd_all(scores.iter().copied()),
        max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        paths,
    }
}

pub fn brute_ctc(e: &Matrix, target: &[usize], blank: usize) -> Enumerated {
    enumerate(e.rows(), e.cols(), |p| {
        ctc_accepts(p, target, blank).then(|| (1, path_score(e, None, p)))
    })
}

pub fn brute_asg(e: &Matrix, tr: Option<&TransitionTable>, target: &[usize]) -> Enumerated {
    enumerate(e.rows(), e.cols(), |p| {
        let k = asg_segmentations(p, target);
        (k > 0).then(|| (k, path_score(e, tr, p)))
    })
}

pub fn brute_full(e: &Matrix, tr: Option<&TransitionTable>) -> Enumerated {
    enumerate(e.rows(), e.cols(), |p| Some((1, path_score(e, tr, p))))
}

/// Five-point central difference of `f` at `x[i]`.
pub fn central_difference<F: FnMut(&[f64]) -> f64 + ?Sized>(f: &mut F, x: &mut [f64], i: usize, h: f64) -> f64 {
    let x0 = x[i];
    let mut at = |d: f64, x: &mut [f64]| {
        x[i] = x0 + d;
        f(x)
    };
    let (p1, m1, p2, m2) = (at(h, x), at(-h, x), at(2.0 * h, x), at(-2.0 * h, x));
    x[i] = x0;
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

/// Relative error with a small floor so exact zeros compare as absolute.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!(
        (a - b).abs() <= tol || (a == b),
        "{what}: {a} vs {b} (diff {:e})",
        (a - b).abs()
    );
}

/// Random bigram ARPA model over `words` with back-off weights on every
/// history and a random subset of explicit bigrams.
pub fn random_bigram_arpa<R: Rng>(rng: &mut R, words: &[&str]) -> String {
    let mut uni: Vec<(String, f64, Option<f64>)> = vec![
        ("<s>".into(), -99.0, Some(rng.gen_range(-1.0..0.0))),
        ("</s>".into(), rng.gen_range(-2.0..-0.1), None),
        ("<unk>".into(), rng.gen_range(-4.0..-2.0), None),
    ];
    for w in words {
        uni.push((w.to_string(), rng.gen_range(-2.0..-0.1), Some(rng.gen_range(-1.0..0.0))));
    }
    let histories: Vec<&str> = std::iter::once("<s>").chain(words.iter().copied()).collect();
    let targets: Vec<&str> = words.iter().copied().chain(std::iter::once("</s>")).collect();
    let mut bi = Vec::new();
    for h in &histories {
        for w in &targets {
            if rng.gen_bool(0.5) {
                bi.push(format!("{:.4} {h} {w}", rng.gen_range(-2.0..-0.05)));
            }
        }
    }
    let mut s = String::from("\\data\\\n");
    s += &format!("ngram 1={}\n", uni.len());
    if !bi.is_empty() {
        s += &format!("ngram 2={}\n", bi.len());
    }
    s += "\n\\1-grams:\n";
    for (w, p, b) in &uni {
        match b {
            Some(b) if !bi.is_empty() => s += &format!("{p:.4} {w} {b:.4}\n"),
            _ => s += &format!("{p:.4} {w}\n"),
        }
    }
    if !bi.is_empty() {
        s += "\n\\2-grams:\n";
        for line in &bi {
            s += line;
            s.push('\n');
        }
    }
    s += "\n\\end\\\n";
    s
}

/// A tiny decoding problem over an abstract label set.
pub struct TinyDecode {
    pub emissions: Matrix,
    pub transitions: Option<TransitionTable>,
    pub lm: NGramLm,
    pub lexicon: Lexicon,
    pub labels: LabelSet,
    pub params: DecoderParams,
}

const TINY_WORDS: [&str; 2] = ["wa", "wb"];

/// Random instance with `frames <= max_frames` and at most `max_labels`
/// labels; in CTC mode the last label is the blank.
pub fn random_tiny_decode<R: Rng>(rng: &mut R, ctc: bool, max_frames: usize, max_labels: usize) -> TinyDecode {
    let min_labels = if ctc { 4 } else { 3 };
    let n_labels = rng.gen_range(min_labels..=max_labels);
    let frames = rng.gen_range(1..=max_frames);
    let (silence, blank) = if ctc {
        (n_labels - 2, Some(n_labels - 1))
    } else {
        (n_labels - 1, None)
    };
    let n_letters = silence;
    let n_words = rng.gen_range(1..=2);
    let mut lexicon = Lexicon::new();
    let mut spellings: Vec<Vec<usize>> = Vec::new();
    while spellings.len() < n_words {
        let len = rng.gen_range(1..=3);
        let s: Vec<usize> = (0..len).map(|_| rng.gen_range(0..n_letters)).collect();
        if !spellings.contains(&s) {
            spellings.push(s);
        }
    }
    for (w, s) in TINY_WORDS.iter().zip(&spellings) {
        lexicon.push(w, s.clone());
    }
    let lm = NGramLm::parse_str(&random_bigram_arpa(rng, &TINY_WORDS[..n_words]), UnkPolicy::Strict)
        .expect("generated ARPA parses");
    let transitions = (!ctc).then(|| random_transitions(rng, n_labels, 1.0));
    let params = DecoderParams {
        alpha: rng.gen_range(0.0..2.0),
        beta: rng.gen_range(-1.0..1.0),
        gamma: rng.gen_range(-1.0..1.0),
        ..DecoderParams::default()
    }
    .unbounded();
    TinyDecode {
        emissions: random_matrix(rng, frames, n_labels, 2.0),
        transitions,
        lm,
        lexicon,
        labels: LabelSet {
            n_labels,
            silence,
            blank,
        },
        params,
    }
}

pub struct DecodeOracle {
    /// Best over (final LM state, last label) groups of the logadd of the
    /// paths in each group.
    pub logadd_best: f64,
    /// Best single path.
    pub max_best: f64,
    pub max_words: Vec<String>,
}

/// Scores every frame-level label path: collapse into units, read words off
/// the units, and add emissions, transitions, LM, word and silence scores.
pub fn decode_oracle(case: &TinyDecode) -> Option<DecodeOracle> {
    let e = &case.emissions;
    let p = &case.params;
    let ls = case.labels;
    let spell: HashMap<&[usize], &str> = case
        .lexicon
        .entries()
        .iter()
        .map(|(w, s)| (s.as_slice(), w.as_str()))
        .collect();
    let mut groups: HashMap<(Vec<u32>, usize), Vec<f64>> = HashMap::new();
    let mut best: Option<(f64, Vec<String>)> = None;
    for_each_path(e.rows(), e.cols(), |path| {
        let units = collapse_path(path, ls.blank);
        let mut state = case.lm.begin_state();
        let mut lm_total = 0.0;
        let (mut n_sil, mut words) = (0usize, Vec::new());
        let mut buf: Vec<usize> = Vec::new();
        let fire = |buf: &mut Vec<usize>, state: &mut _, lm_total: &mut f64, words: &mut Vec<String>| -> bool {
            if buf.is_empty() {
                return true;
            }
            let Some(&w) = spell.get(buf.as_slice()) else {
                return false;
            };
            let (next, lp) = case.lm.score_word(*state, w);
            *state = next;
            *lm_total += lp;
            words.push(w.to_string());
            buf.clear();
            true
        };
        for &u in &units {
            if u == ls.silence {
                n_sil += 1;
                if !fire(&mut buf, &mut state, &mut lm_total, &mut words) {
                    return;
                }
            } else {
                buf.push(u);
            }
        }
        if !fire(&mut buf, &mut state, &mut lm_total, &mut words) {
            return;
        }
        lm_total += case.lm.score_end(state);
        let score = path_score(e, case.transitions.as_ref(), path)
            + p.alpha * LN_10 * lm_total
            + p.gamma * n_sil as f64
            + p.beta * words.len() as f64;
        groups
            .entry((state.ids().to_vec(), path[path.len() - 1]))
            .or_default()
            .push(score);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, words));
        }
    });
    let (max_best, max_words) = best?;
    let logadd_best = groups
        .values()
        .map(|v| logadd_all(v.iter().copied()))
        .fold(f64::NEG_INFINITY, f64::max);
    Some(DecodeOracle {
        logadd_best,
        max_best,
        max_words,
    })
}

/// Pseudo-words with frequent doubled and tripled letters.
pub fn random_words<R: Rng>(rng: &mut R, n: usize) -> Vec<String> {
    let letters: Vec<char> = ('a'..='z').chain(std::iter::once('\'')).collect();
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=12);
            let mut w = String::new();
            while w.chars().count() < len {
                let c = *letters.choose(rng).unwrap();
                let run = match rng.gen_range(0..10) {
                    0..=5 => 1,
                    6..=7 => 2,
                    8 => 3,
                    _ => rng.gen_range(4..=7),
                };
                for _ in 0..run {
                    w.push(c);
                }
            }
            w
        })
        .collect()
}

pub fn flatten(tensors: &[&[f64]]) -> Vec<f64> {
    tensors.iter().flat_map(|t| t.iter().copied()).collect()
}

pub fn unflatten(tensors: &mut [&mut [f64]], values: &[f64]) {
    let mut k = 0;
    for t in tensors.iter_mut() {
        t.copy_from_slice(&values[k..k + t.len()]);
        k += t.len();
    }
}

/// Three-point central difference of `f` at `x[i]`.
pub fn central_difference3<F: FnMut(&[f64]) -> f64 + ?Sized>(f: &mut F, x: &mut [f64], i: usize, h: f64) -> f64 {
    let x0 = x[i];
    x[i] = x0 + h;
    let p = f(x);
    x[i] = x0 - h;
    let m = f(x);
    x[i] = x0;
    (p - m) / (2.0 * h)
}

/// Largest relative error per tensor between `analytic` and finite
/// differences of `loss` over the model parameters.
pub fn model_fd_errors(
    model: &glu_asr::model::AcousticModel,
    analytic: &glu_asr::model::ModelParams,
    loss: impl Fn(&glu_asr::model::AcousticModel) -> f64,
    diff: impl Fn(&mut dyn FnMut(&[f64]) -> f64, &mut [f64], usize) -> f64,
) -> Vec<f64> {
    let mut probe = model.clone();
    let mut x = flatten(&model.params.tensors());
    let grads = flatten(&analytic.tensors());
    let lens: Vec<usize> = model.params.tensors().iter().map(|t| t.len()).collect();
    let mut f = |v: &[f64]| {
        unflatten(&mut probe.params.tensors_mut(), v);
        loss(&probe)
    };
    let mut errors = Vec::with_capacity(lens.len());
    let mut k = 0;
    for len in lens {
        let mut worst: f64 = 0.0;
        for i in k..k + len {
            let num = diff(&mut f, &mut x, i);
            worst = worst.max(rel_err(grads[i], num));
        }
        errors.push(worst);
        k += len;
    }
    errors
}

// Dyadic values keep every hand-computed sum exact.
pub const HAND_ARPA: &str = "\\data\\
ngram 1=6
ngram 2=5

\\1-grams:
-99 <s> -0.5
-1.5 </s>
-3 <unk>
-0.75 the -0.25
-1.25 cat -0.5
-1 sat -0.125

\\2-grams:
-0.25 <s> the
-0.5 the cat
-0.75 cat sat
-0.125 sat </s>
-1 cat </s>

\\end\\
";

/// 1-based line of the first line containing `needle`.
fn line_of(text: &str, needle: &str) -> usize {
    text.lines().position(|l| l.contains(needle)).unwrap() + 1
}

/// Broken variants of [`HAND_ARPA`] with the line each error must name.
pub fn malformed_arpa_cases() -> Vec<(&'static str, String, usize)> {
    let mut cases = Vec::new();
    let count = HAND_ARPA.replace("ngram 2=5", "ngram 2=6");
    let at = line_of(&count, "\\end\\");
    cases.push(("count mismatch", count, at));
    let no_end = HAND_ARPA.replace("\\end\\\n", "");
    let at = no_end.lines().count() + 1;
    cases.push(("missing end marker", no_end, at));
    let positive = HAND_ARPA.replace("-1 sat -0.125", "0.5 sat -0.125");
    let at = line_of(&positive, "0.5 sat");
    cases.push(("positive log probability", positive, at));
    let unknown = HAND_ARPA.replace("-1 cat </s>", "-1 cat dog");
    let at = line_of(&unknown, "cat dog");
    cases.push(("word missing from unigrams", unknown, at));
    let top = HAND_ARPA.replace("-0.5 the cat", "-0.5 the cat -0.1");
    let at = line_of(&top, "the cat -0.1");
    cases.push(("back-off at highest order", top, at));
    let garbage = HAND_ARPA.replace("-0.75 cat sat", "abc cat sat");
    let at = line_of(&garbage, "abc cat");
    cases.push(("non-numeric probability", garbage, at));
    let duplicate = HAND_ARPA.replace("-1 cat </s>", "-0.75 cat sat");
    let at = line_of(&duplicate, "-0.125 sat </s>") + 1;
    cases.push(("duplicate n-gram", duplicate, at));
    cases
}

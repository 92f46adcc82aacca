//! Lexicon-constrained beam-search decoder with an n-gram LM.
//!
//! A hypothesis is keyed by (LM state, trie node, last label) and scored as
//! acoustic emissions plus transitions, `alpha * ln P_lm`, `gamma` per
//! silence unit and `beta` per word. Partial words carry a smeared LM score
//! that is swapped for the real one when the word is emitted, which happens
//! when a terminal trie node is followed by `#` or by the end of the
//! utterance.

use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criterion::{encode_repetitions, LetterDict, TransitionTable};
use crate::lm::{LmState, NGramLm, LN_10};
use crate::tensor::{logadd, logadd_all, Matrix};

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("empty emissions")]
    EmptyEmissions,
    #[error("empty lexicon")]
    EmptyLexicon,
    #[error("lexicon line {line}: {msg}")]
    Lexicon { line: usize, msg: String },
    #[error("label dimension mismatch: expected {expected}, got {got}")]
    LabelMismatch { expected: usize, got: usize },
    #[error("invalid decoder parameters: {0}")]
    InvalidParams(String),
    #[error("no hypothesis survived to the end of the utterance; try a larger beam threshold or beam size")]
    BeamCollapse,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    Logadd,
    Max,
}

impl std::str::FromStr for MergeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "logadd" => Ok(Self::Logadd),
            "max" => Ok(Self::Max),
            _ => Err(format!("unknown merge mode `{s}` (expected logadd or max)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmearMode {
    Max,
    Logadd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub beam_size: usize,
    pub beam_threshold: f64,
    pub merge: MergeMode,
    pub smear: SmearMode,
}

impl Default for DecoderParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            beam_size: 250,
            beam_threshold: 25.0,
            merge: MergeMode::Logadd,
            smear: SmearMode::Max,
        }
    }
}

impl DecoderParams {
    /// No pruning at all.
    pub fn unbounded(mut self) -> Self {
        self.beam_size = usize::MAX;
        self.beam_threshold = f64::INFINITY;
        self
    }

    pub fn validate(&self) -> Result<(), DecoderError> {
        if self.beam_size == 0 {
            return Err(DecoderError::InvalidParams("beam_size must be >= 1".into()));
        }
        if !(self.beam_threshold > 0.0) {
            return Err(DecoderError::InvalidParams("beam_threshold must be > 0".into()));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.gamma.is_finite()) {
            return Err(DecoderError::InvalidParams("alpha, beta and gamma must be finite".into()));
        }
        Ok(())
    }
}

/// Word spellings over grapheme ids. A word may have several spellings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: Vec<(String, Vec<usize>)>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, word: &str, spelling: Vec<usize>) {
        self.entries.push((word.to_lowercase(), spelling));
    }

    pub fn entries(&self) -> &[(String, Vec<usize>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Spells each word with the repetition encoding.
    pub fn from_words<S: AsRef<str>>(words: &[S], dict: &LetterDict) -> Result<Self, DecoderError> {
        let mut lex = Self::new();
        for (i, w) in words.iter().enumerate() {
            let w = w.as_ref().to_lowercase();
            let spelling = encode_repetitions(&w)
                .and_then(|e| dict.spell(&e))
                .map_err(|e| DecoderError::Lexicon {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            lex.push(&w, spelling);
        }
        Ok(lex)
    }

    /// Parses `word<TAB>g g g` lines; a line holding only a word is spelled
    /// with the repetition encoding.
    pub fn parse(text: &str, dict: &LetterDict) -> Result<Self, DecoderError> {
        let mut lex = Self::new();
        let sil = dict.silence();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| DecoderError::Lexicon { line: line_no, msg };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (word, rest) = match line.split_once('\t') {
                Some((w, r)) => (w.trim().to_lowercase(), Some(r)),
                None => (line.to_lowercase(), None),
            };
            if word.is_empty() || word.contains(char::is_whitespace) {
                return Err(err(format!("bad word `{word}`")));
            }
            let spelling = match rest {
                Some(r) => r
                    .split_whitespace()
                    .map(|g| {
                        let mut chars = g.chars();
                        match (chars.next(), chars.next()) {
                            (Some(c), None) => dict
                                .index_of(c)
                                .ok_or_else(|| err(format!("unknown grapheme `{g}`"))),
                            _ => Err(err(format!("grapheme `{g}` is not a single symbol"))),
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                None => encode_repetitions(&word)
                    .and_then(|e| dict.spell(&e))
                    .map_err(|e| err(e.to_string()))?,
            };
            if spelling.is_empty() {
                return Err(err(format!("word `{word}` has an empty spelling")));
            }
            if spelling.contains(&sil) {
                return Err(err(format!("spelling of `{word}` contains the silence grapheme")));
            }
            lex.push(&word, spelling);
        }
        if lex.is_empty() {
            return Err(DecoderError::EmptyLexicon);
        }
        Ok(lex)
    }

    pub fn load<P: AsRef<Path>>(path: P, dict: &LetterDict) -> Result<Self, DecoderError> {
        Self::parse(&fs::read_to_string(path)?, dict)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrieNode {
    /// `(label, child)` sorted by label.
    pub children: Vec<(usize, usize)>,
    /// Words ending here, as indices into [`LexiconTrie::words`].
    pub words: Vec<usize>,
    /// log10 smeared LM score of the words at or below this node.
    pub smear: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconTrie {
    nodes: Vec<TrieNode>,
    words: Vec<String>,
    lm_ids: Vec<Option<u32>>,
}

pub const TRIE_ROOT: usize = 0;

impl LexiconTrie {
    pub fn build(lexicon: &Lexicon, lm: &NGramLm, smear: SmearMode) -> Result<Self, DecoderError> {
        if lexicon.is_empty() {
            return Err(DecoderError::EmptyLexicon);
        }
        let mut trie = Self {
            nodes: vec![TrieNode {
                children: Vec::new(),
                words: Vec::new(),
                smear: f64::NEG_INFINITY,
            }],
            words: Vec::new(),
            lm_ids: Vec::new(),
        };
        let mut word_index: HashMap<&str, usize> = HashMap::new();
        for (line, (word, spelling)) in lexicon.entries().iter().enumerate() {
            if spelling.is_empty() {
                return Err(DecoderError::Lexicon {
                    line: line + 1,
                    msg: format!("word `{word}` has an empty spelling"),
                });
            }
            let w = *word_index.entry(word).or_insert_with(|| {
                trie.words.push(word.clone());
                trie.lm_ids.push(lm.scoring_id(word));
                trie.words.len() - 1
            });
            let mut node = TRIE_ROOT;
            for &label in spelling {
                node = match trie.child(node, label) {
                    Some(c) => c,
                    None => {
                        let id = trie.nodes.len();
                        trie.nodes.push(TrieNode {
                            children: Vec::new(),
                            words: Vec::new(),
                            smear: f64::NEG_INFINITY,
                        });
                        let ch = &mut trie.nodes[node].children;
                        let pos = ch.partition_point(|&(l, _)| l < label);
                        ch.insert(pos, (label, id));
                        id
                    }
                };
            }
            if !trie.nodes[node].words.contains(&w) {
                trie.nodes[node].words.push(w);
            }
        }
        let unigrams: Vec<f64> = trie.words.iter().map(|w| lm.unigram(w)).collect();
        // children always have larger ids than their parent
        for id in (0..trie.nodes.len()).rev() {
            let node = &trie.nodes[id];
            let own = node.words.iter().map(|&w| unigrams[w]);
            let below = node.children.iter().map(|&(_, c)| trie.nodes[c].smear);
            let all = own.chain(below);
            let smear = match smear {
                SmearMode::Max => all.fold(f64::NEG_INFINITY, f64::max),
                SmearMode::Logadd => logadd_all(all.map(|x| x * LN_10)) / LN_10,
            };
            trie.nodes[id].smear = smear;
        }
        Ok(trie)
    }

    pub fn child(&self, node: usize, label: usize) -> Option<usize> {
        let ch = &self.nodes[node].children;
        ch.binary_search_by_key(&label, |&(l, _)| l)
            .ok()
            .map(|i| ch[i].1)
    }

    pub fn node(&self, id: usize) -> &TrieNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TrieNode] {
        &self.nodes
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Follows a spelling from the root.
    pub fn find(&self, spelling: &[usize]) -> Option<usize> {
        spelling
            .iter()
            .try_fold(TRIE_ROOT, |node, &l| self.child(node, l))
    }

    fn max_label(&self) -> Option<usize> {
        self.nodes
            .iter()
            .flat_map(|n| n.children.iter().map(|&(l, _)| l))
            .max()
    }
}

/// Label layout seen by the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelSet {
    pub n_labels: usize,
    pub silence: usize,
    /// CTC blank; `None` in ASG mode.
    pub blank: Option<usize>,
}

impl LabelSet {
    pub fn asg(dict: &LetterDict) -> Self {
        Self {
            n_labels: dict.len(),
            silence: dict.silence(),
            blank: None,
        }
    }

    pub fn ctc(dict: &LetterDict) -> Self {
        Self {
            n_labels: dict.len() + 1,
            silence: dict.silence(),
            blank: Some(dict.blank()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub words: Vec<String>,
    /// Half-open frame ranges, one per word, partitioning `0..T`.
    pub spans: Vec<Range<usize>>,
    pub score: f64,
}

impl DecodeResult {
    pub fn transcription(&self) -> String {
        self.words.join(" ")
    }
}

/// Keeps hypotheses within `threshold` of the best, then the `beam_size`
/// highest, preserving insertion order among equal scores.
pub fn prune<T>(items: Vec<T>, score: impl Fn(&T) -> f64, beam_size: usize, threshold: f64) -> Vec<T> {
    let best = items.iter().map(&score).fold(f64::NEG_INFINITY, f64::max);
    let mut kept: Vec<T> = items
        .into_iter()
        .filter(|h| !(score(h) < best - threshold))
        .collect();
    kept.sort_by(|a, b| score(b).total_cmp(&score(a)));
    kept.truncate(beam_size);
    kept
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct WordLink {
    word: u32,
    start: usize,
    prev: u32,
}

#[derive(Debug, Clone, Copy)]
struct Hyp {
    lm: LmState,
    node: usize,
    last: Option<usize>,
    score: f64,
    /// Best single-path score among merged paths; picks the backpointer.
    best: f64,
    link: u32,
    word_start: usize,
}

type Key = (LmState, usize, Option<usize>);

impl Hyp {
    fn key(&self) -> Key {
        (self.lm, self.node, self.last)
    }
}

pub struct Decoder<'a> {
    lm: &'a NGramLm,
    trie: &'a LexiconTrie,
    params: DecoderParams,
    labels: LabelSet,
}

struct Beam {
    hyps: Vec<Hyp>,
    index: HashMap<Key, usize>,
    merge: MergeMode,
}

impl Beam {
    fn new(merge: MergeMode) -> Self {
        Self {
            hyps: Vec::new(),
            index: HashMap::new(),
            merge,
        }
    }

    fn add(&mut self, h: Hyp) {
        match self.index.get(&h.key()) {
            Some(&i) => {
                let old = &mut self.hyps[i];
                old.score = match self.merge {
                    MergeMode::Logadd => logadd(old.score, h.score),
                    MergeMode::Max => old.score.max(h.score),
                };
                if h.best > old.best {
                    old.best = h.best;
                    old.link = h.link;
                    old.word_start = h.word_start;
                }
            }
            None => {
                self.index.insert(h.key(), self.hyps.len());
                self.hyps.push(h);
            }
        }
    }
}

impl<'a> Decoder<'a> {
    pub fn new(
        lm: &'a NGramLm,
        trie: &'a LexiconTrie,
        params: DecoderParams,
        labels: LabelSet,
    ) -> Result<Self, DecoderError> {
        params.validate()?;
        if labels.silence >= labels.n_labels {
            return Err(DecoderError::InvalidParams("silence label out of range".into()));
        }
        if let Some(max) = trie.max_label() {
            if max >= labels.n_labels {
                return Err(DecoderError::LabelMismatch {
                    expected: labels.n_labels,
                    got: max + 1,
                });
            }
        }
        let forbidden = |l: usize| l == labels.silence || Some(l) == labels.blank;
        if trie
            .nodes
            .iter()
            .any(|n| n.children.iter().any(|&(l, _)| forbidden(l)))
        {
            return Err(DecoderError::InvalidParams(
                "lexicon spellings may not contain silence or blank".into(),
            ));
        }
        Ok(Self {
            lm,
            trie,
            params,
            labels,
        })
    }

    pub fn params(&self) -> &DecoderParams {
        &self.params
    }

    fn smear_ln(&self, node: usize) -> f64 {
        if node == TRIE_ROOT {
            0.0
        } else {
            self.trie.nodes[node].smear * LN_10
        }
    }

    /// Emits every word ending at `h.node`, leaving the trie at the root.
    fn fire_words(&self, h: &Hyp, arena: &mut Vec<WordLink>, out: &mut Vec<(Hyp, f64)>) {
        let p = &self.params;
        for &w in &self.trie.nodes[h.node].words {
            let (state, lp) = self.lm.score_id(h.lm, self.trie.lm_ids[w]);
            let delta = p.alpha * (lp * LN_10 - self.smear_ln(h.node)) + p.beta;
            arena.push(WordLink {
                word: w as u32,
                start: h.word_start,
                prev: h.link,
            });
            let mut next = *h;
            next.lm = state;
            next.node = TRIE_ROOT;
            next.link = (arena.len() - 1) as u32;
            out.push((next, delta));
        }
    }

    fn expand(
        &self,
        h: &Hyp,
        label: usize,
        t: usize,
        arena: &mut Vec<WordLink>,
        out: &mut Vec<(Hyp, f64)>,
    ) {
        let ls = &self.labels;
        let p = &self.params;
        if Some(label) == ls.blank || Some(label) == h.last {
            let mut next = *h;
            next.last = Some(label);
            out.push((next, 0.0));
            return;
        }
        if label == ls.silence {
            let start = out.len();
            if h.node == TRIE_ROOT {
                out.push((*h, 0.0));
            } else {
                self.fire_words(h, arena, out);
            }
            for (n, d) in &mut out[start..] {
                n.last = Some(label);
                *d += p.gamma;
            }
            return;
        }
        if let Some(child) = self.trie.child(h.node, label) {
            let mut next = *h;
            if h.node == TRIE_ROOT {
                next.word_start = t;
            }
            next.node = child;
            next.last = Some(label);
            out.push((next, p.alpha * (self.smear_ln(child) - self.smear_ln(h.node))));
        }
    }

    /// Best-first list of complete hypotheses. `tr` supplies ASG transition
    /// and start scores; `None` scores them as zero.
    pub fn decode(
        &self,
        emissions: &Matrix,
        tr: Option<&TransitionTable>,
    ) -> Result<Vec<DecodeResult>, DecoderError> {
        let frames = emissions.rows();
        if frames == 0 {
            return Err(DecoderError::EmptyEmissions);
        }
        if emissions.cols() != self.labels.n_labels {
            return Err(DecoderError::LabelMismatch {
                expected: self.labels.n_labels,
                got: emissions.cols(),
            });
        }
        if let Some(tr) = tr {
            if tr.n_labels() != self.labels.n_labels {
                return Err(DecoderError::LabelMismatch {
                    expected: self.labels.n_labels,
                    got: tr.n_labels(),
                });
            }
        }
        let p = &self.params;
        let mut arena: Vec<WordLink> = Vec::new();
        let mut beam = vec![Hyp {
            lm: self.lm.begin_state(),
            node: TRIE_ROOT,
            last: None,
            score: 0.0,
            best: 0.0,
            link: NONE,
            word_start: 0,
        }];
        let mut moves: Vec<(Hyp, f64)> = Vec::new();
        for t in 0..frames {
            let row = emissions.row(t);
            let mut next = Beam::new(p.merge);
            for h in &beam {
                for (label, &e) in row.iter().enumerate() {
                    moves.clear();
                    self.expand(h, label, t, &mut arena, &mut moves);
                    let trans = match (tr, h.last) {
                        (None, _) => 0.0,
                        (Some(tr), None) => tr.start[label],
                        (Some(tr), Some(prev)) => tr.score(prev, label),
                    };
                    for (mut n, d) in moves.drain(..) {
                        let step = e + trans + d;
                        n.score = h.score + step;
                        n.best = h.best + step;
                        next.add(n);
                    }
                }
            }
            beam = prune(next.hyps, |h| h.score, p.beam_size, p.beam_threshold);
        }

        let mut done = Beam::new(p.merge);
        for h in &beam {
            moves.clear();
            if h.node == TRIE_ROOT {
                moves.push((*h, 0.0));
            } else {
                self.fire_words(h, &mut arena, &mut moves);
            }
            for (mut n, d) in moves.drain(..) {
                let end = p.alpha * self.lm.score_end(n.lm) * LN_10;
                n.score = h.score + d + end;
                n.best = h.best + d + end;
                done.add(n);
            }
        }
        if done.hyps.is_empty() {
            return Err(DecoderError::BeamCollapse);
        }
        let mut finished = done.hyps;
        finished.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(finished
            .iter()
            .map(|h| self.traceback(h, &arena, frames))
            .collect())
    }

    fn traceback(&self, h: &Hyp, arena: &[WordLink], frames: usize) -> DecodeResult {
        let mut links = Vec::new();
        let mut cur = h.link;
        while cur != NONE {
            let l = arena[cur as usize];
            links.push(l);
            cur = l.prev;
        }
        links.reverse();
        let words = links
            .iter()
            .map(|l| self.trie.words[l.word as usize].clone())
            .collect();
        let spans = (0..links.len())
            .map(|i| {
                let start = if i == 0 { 0 } else { links[i].start };
                let end = links.get(i + 1).map_or(frames, |l| l.start);
                start..end
            })
            .collect();
        DecodeResult {
            words,
            spans,
            score: h.score,
        }
    }
}

/// Convenience wrapper: build a decoder and return the ranked hypotheses.
pub fn beam_search(
    emissions: &Matrix,
    tr: Option<&TransitionTable>,
    lm: &NGramLm,
    trie: &LexiconTrie,
    params: DecoderParams,
    labels: LabelSet,
) -> Result<Vec<DecodeResult>, DecoderError> {
    Decoder::new(lm, trie, params, labels)?.decode(emissions, tr)
}

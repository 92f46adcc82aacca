//! Structured-output criterions over letter sequences: CTC (blank-interleaved,
//! frame-normalized) and ASG (blank-free, sequence-normalized with learned
//! transitions), forced alignment, and the grapheme inventory.

mod graph;
mod lattice;
mod letters;

pub use graph::{
    build_asg_graph, build_ctc_graph, build_full_graph, ctc_min_frames, CriterionGraph,
    GraphKind, TransitionTable,
};
pub use lattice::{forward_backward, forward_score, viterbi, Alignment, ForwardBackward};
pub use letters::{
    decode_repetitions, encode_repetitions, normalize_transcript, LetterDict, BLANK, REPEAT_ONE,
    REPEAT_TWO, SILENCE,
};

pub use crate::tensor::{logadd, logadd_all};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{log_softmax_rows, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriterionError {
    #[error("target longer than input: {frames} frames, {needed} needed")]
    Infeasible { frames: usize, needed: usize },
    #[error("empty target")]
    EmptyTarget,
    #[error("unsupported character {0:?}")]
    UnsupportedChar(char),
    #[error("duplicate grapheme {0:?}")]
    DuplicateSymbol(char),
    #[error("repetition symbol {0:?} has no preceding letter")]
    DanglingRepetition(char),
    #[error("label {label} out of range for {n_labels} labels")]
    LabelOutOfRange { label: usize, n_labels: usize },
    #[error("blank label {0} appears in the target")]
    BlankInTarget(usize),
    #[error("emission rows ({got}) do not match graph frames ({expected})")]
    FrameMismatch { expected: usize, got: usize },
    #[error("label dimension mismatch: expected {expected}, got {got}")]
    LabelMismatch { expected: usize, got: usize },
    #[error("graph edges carry transitions but no transition table was given")]
    MissingTransitions,
    #[error("transition table given for a graph without transitions")]
    UnexpectedTransitions,
    #[error("no accepted path has finite score")]
    NoPath,
}

/// Which structured-output criterion trains the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Ctc,
    Asg,
}

impl Criterion {
    /// Number of acoustic model outputs for `dict`: CTC adds the blank.
    pub fn n_outputs(self, dict: &LetterDict) -> usize {
        match self {
            Criterion::Ctc => dict.len() + 1,
            Criterion::Asg => dict.len(),
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ctc" => Ok(Criterion::Ctc),
            "asg" => Ok(Criterion::Asg),
            other => Err(format!("unknown criterion {other:?} (expected ctc or asg)")),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Ctc => "ctc",
            Criterion::Asg => "asg",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CtcOutput {
    pub loss: f64,
    /// Gradient w.r.t. the raw (pre-softmax) scores.
    pub grad: Matrix,
}

/// CTC loss on raw scores. Log-softmax is applied per frame internally and
/// the gradient is chained through it, so each gradient row is
/// `softmax - posterior` and sums to zero.
pub fn ctc_loss(raw: &Matrix, target: &[usize], blank: usize) -> Result<CtcOutput, CriterionError> {
    let graph = build_ctc_graph(target, raw.rows(), raw.cols(), blank)?;
    normalized_loss(&graph, raw)
}

/// CTC without blanks: the ASG topology with per-frame normalized emissions
/// and no transitions.
pub fn ctc_loss_no_blank(raw: &Matrix, target: &[usize]) -> Result<CtcOutput, CriterionError> {
    let graph = build_asg_graph(target, raw.rows(), raw.cols())?.without_transitions();
    normalized_loss(&graph, raw)
}

fn normalized_loss(graph: &CriterionGraph, raw: &Matrix) -> Result<CtcOutput, CriterionError> {
    let logp = log_softmax_rows(raw);
    let fb = forward_backward(graph, &logp, None)?;
    let mut grad = Matrix::zeros(raw.rows(), raw.cols());
    for t in 0..raw.rows() {
        let post = fb.emissions.row(t);
        let mass: f64 = post.iter().sum();
        let lp = logp.row(t);
        for (i, g) in grad.row_mut(t).iter_mut().enumerate() {
            *g = lp[i].exp() * mass - post[i];
        }
    }
    Ok(CtcOutput {
        loss: -fb.log_z,
        grad,
    })
}

#[derive(Debug, Clone)]
pub struct AsgOutput {
    pub loss: f64,
    pub grad_emissions: Matrix,
    pub grad_transitions: TransitionTable,
}

/// ASG loss: `-forward(acceptance graph) + forward(full graph)` on raw
/// scores with transitions and start scores.
pub fn asg_loss(
    raw: &Matrix,
    tr: &TransitionTable,
    target: &[usize],
) -> Result<AsgOutput, CriterionError> {
    let n = raw.cols();
    let accept = build_asg_graph(target, raw.rows(), n)?;
    let full = build_full_graph(n, raw.rows())?;
    let num = forward_backward(&accept, raw, Some(tr))?;
    let den = forward_backward(&full, raw, Some(tr))?;

    let mut grad_e = den.emissions;
    for (g, p) in grad_e.as_mut_slice().iter_mut().zip(num.emissions.as_slice()) {
        *g -= p;
    }
    let mut grad_tr = den.transitions.expect("full graph uses transitions");
    let num_tr = num.transitions.expect("asg graph uses transitions");
    for (g, p) in grad_tr
        .trans
        .as_mut_slice()
        .iter_mut()
        .zip(num_tr.trans.as_slice())
    {
        *g -= p;
    }
    for (g, p) in grad_tr.start.iter_mut().zip(&num_tr.start) {
        *g -= p;
    }
    Ok(AsgOutput {
        loss: den.log_z - num.log_z,
        grad_emissions: grad_e,
        grad_transitions: grad_tr,
    })
}

/// Forced alignment of `target` to the emissions. In CTC mode the scores are
/// log-softmax normalized first and `blank` is the last column; in ASG mode
/// the raw scores and transitions are used.
pub fn viterbi_align(
    emissions: &Matrix,
    tr: Option<&TransitionTable>,
    target: &[usize],
    mode: Criterion,
) -> Result<Alignment, CriterionError> {
    match mode {
        Criterion::Ctc => {
            let blank = emissions.cols().saturating_sub(1);
            let graph = build_ctc_graph(target, emissions.rows(), emissions.cols(), blank)?;
            viterbi(&graph, &log_softmax_rows(emissions), None)
        }
        Criterion::Asg => {
            let graph = build_asg_graph(target, emissions.rows(), emissions.cols())?;
            let zeros;
            let tr = match tr {
                Some(tr) => tr,
                None => {
                    zeros = TransitionTable::zeros(emissions.cols());
                    &zeros
                }
            };
            viterbi(&graph, emissions, Some(tr))
        }
    }
}

/// Collapses a frame-level label path: merges repeats, and in CTC mode
/// drops blanks (`blank = Some(id)`).
pub fn collapse_path(labels: &[usize], blank: Option<usize>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in labels {
        if Some(l) != prev && Some(l) != blank {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}

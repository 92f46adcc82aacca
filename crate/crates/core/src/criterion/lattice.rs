//! Forward, backward and Viterbi recursions over a [`CriterionGraph`].
//!
//! A path `pi` scores `start[pi_0] + sum_t f[t][pi_t] + sum_{t>0} g[pi_{t-1}][pi_t]`
//! where the transition terms are present only when the graph uses them.
//! All recursions run in `f64`.

use super::graph::{CriterionGraph, TransitionTable};
use super::CriterionError;
use crate::tensor::{logadd, logadd_all, Matrix};

const NEG_INF: f64 = f64::NEG_INFINITY;

fn check_inputs(
    graph: &CriterionGraph,
    emissions: &Matrix,
    tr: Option<&TransitionTable>,
) -> Result<(), CriterionError> {
    if emissions.rows() != graph.frames() {
        return Err(CriterionError::FrameMismatch {
            expected: graph.frames(),
            got: emissions.rows(),
        });
    }
    if emissions.cols() != graph.n_labels() {
        return Err(CriterionError::LabelMismatch {
            expected: graph.n_labels(),
            got: emissions.cols(),
        });
    }
    match (graph.uses_transitions(), tr) {
        (true, None) => Err(CriterionError::MissingTransitions),
        (false, Some(_)) => Err(CriterionError::UnexpectedTransitions),
        (true, Some(tr)) if tr.n_labels() != graph.n_labels() => {
            Err(CriterionError::LabelMismatch {
                expected: graph.n_labels(),
                got: tr.n_labels(),
            })
        }
        _ => Ok(()),
    }
}

struct Scorer<'a> {
    graph: &'a CriterionGraph,
    tr: Option<&'a TransitionTable>,
}

impl Scorer<'_> {
    #[inline]
    fn start(&self, s: usize) -> f64 {
        self.tr.map_or(0.0, |tr| tr.start[self.graph.label(s)])
    }

    #[inline]
    fn edge(&self, a: usize, b: usize) -> f64 {
        self.tr
            .map_or(0.0, |tr| tr.score(self.graph.label(a), self.graph.label(b)))
    }
}

/// Forward variables `alpha[t][s]` (log domain).
fn alpha(graph: &CriterionGraph, e: &Matrix, sc: &Scorer<'_>) -> Matrix {
    let (t_max, n) = (graph.frames(), graph.n_states());
    let mut alpha = Matrix::filled(t_max, n, NEG_INF);
    for &s in graph.initial() {
        alpha.set(0, s, sc.start(s) + e.get(0, graph.label(s)));
    }
    for t in 1..t_max {
        for s in 0..n {
            let mut acc = NEG_INF;
            for &a in graph.incoming(s) {
                acc = logadd(acc, alpha.get(t - 1, a) + sc.edge(a, s));
            }
            alpha.set(t, s, acc + e.get(t, graph.label(s)));
        }
    }
    alpha
}

/// Backward variables `beta[t][s]`: log-sum of scores of path suffixes after
/// frame `t`, excluding the emission at `t`.
fn beta(graph: &CriterionGraph, e: &Matrix, sc: &Scorer<'_>) -> Matrix {
    let (t_max, n) = (graph.frames(), graph.n_states());
    let mut beta = Matrix::filled(t_max, n, NEG_INF);
    for &s in graph.accepting() {
        beta.set(t_max - 1, s, 0.0);
    }
    for t in (0..t_max - 1).rev() {
        for s in 0..n {
            let mut acc = NEG_INF;
            for &b in graph.outgoing(s) {
                acc = logadd(
                    acc,
                    sc.edge(s, b) + e.get(t + 1, graph.label(b)) + beta.get(t + 1, b),
                );
            }
            beta.set(t, s, acc);
        }
    }
    beta
}

/// Log-sum of the scores of all accepted paths.
pub fn forward_score(
    graph: &CriterionGraph,
    emissions: &Matrix,
    tr: Option<&TransitionTable>,
) -> Result<f64, CriterionError> {
    check_inputs(graph, emissions, tr)?;
    let sc = Scorer { graph, tr };
    let a = alpha(graph, emissions, &sc);
    Ok(logadd_all(
        graph.accepting().iter().map(|&s| a.get(graph.frames() - 1, s)),
    ))
}

/// Forward score with its gradients, i.e. the path posteriors.
#[derive(Debug, Clone)]
pub struct ForwardBackward {
    pub log_z: f64,
    /// `d log_z / d f[t][i]`
    pub emissions: Matrix,
    /// `d log_z / d g`, present when the graph uses transitions.
    pub transitions: Option<TransitionTable>,
}

pub fn forward_backward(
    graph: &CriterionGraph,
    emissions: &Matrix,
    tr: Option<&TransitionTable>,
) -> Result<ForwardBackward, CriterionError> {
    check_inputs(graph, emissions, tr)?;
    let sc = Scorer { graph, tr };
    let t_max = graph.frames();
    let a = alpha(graph, emissions, &sc);
    let b = beta(graph, emissions, &sc);
    let log_z = logadd_all(graph.accepting().iter().map(|&s| a.get(t_max - 1, s)));
    if !log_z.is_finite() {
        return Err(CriterionError::NoPath);
    }

    let mut grad_e = Matrix::zeros(t_max, graph.n_labels());
    for t in 0..t_max {
        for s in 0..graph.n_states() {
            let lp = a.get(t, s) + b.get(t, s) - log_z;
            if lp > NEG_INF {
                grad_e.add_at(t, graph.label(s), lp.exp());
            }
        }
    }

    let grad_tr = if graph.uses_transitions() {
        let mut g = TransitionTable::zeros(graph.n_labels());
        for &s in graph.initial() {
            let lp = a.get(0, s) + b.get(0, s) - log_z;
            if lp > NEG_INF {
                g.start[graph.label(s)] += lp.exp();
            }
        }
        for t in 1..t_max {
            for s in 0..graph.n_states() {
                let tail = emissions.get(t, graph.label(s)) + b.get(t, s) - log_z;
                if tail == NEG_INF {
                    continue;
                }
                for &p in graph.incoming(s) {
                    let lp = a.get(t - 1, p) + sc.edge(p, s) + tail;
                    if lp > NEG_INF {
                        g.trans.add_at(graph.label(p), graph.label(s), lp.exp());
                    }
                }
            }
        }
        Some(g)
    } else {
        None
    };

    Ok(ForwardBackward {
        log_z,
        emissions: grad_e,
        transitions: grad_tr,
    })
}

/// Best accepted path.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Label per frame.
    pub labels: Vec<usize>,
    /// Graph state per frame.
    pub states: Vec<usize>,
    /// Score of the path prefix ending at each frame.
    pub cumulative: Vec<f64>,
    pub score: f64,
}

/// Viterbi decoding. Ties are resolved toward staying: among equal-scoring
/// paths the one that advances latest is returned.
pub fn viterbi(
    graph: &CriterionGraph,
    emissions: &Matrix,
    tr: Option<&TransitionTable>,
) -> Result<Alignment, CriterionError> {
    check_inputs(graph, emissions, tr)?;
    let sc = Scorer { graph, tr };
    let (t_max, n) = (graph.frames(), graph.n_states());
    let mut delta = Matrix::filled(t_max, n, NEG_INF);
    let mut back = vec![usize::MAX; t_max * n];
    for &s in graph.initial() {
        delta.set(0, s, sc.start(s) + emissions.get(0, graph.label(s)));
    }
    for t in 1..t_max {
        for s in 0..n {
            let mut best = NEG_INF;
            let mut arg = usize::MAX;
            for &a in graph.incoming(s) {
                let v = delta.get(t - 1, a) + sc.edge(a, s);
                if v > best {
                    best = v;
                    arg = a;
                }
            }
            if arg != usize::MAX {
                delta.set(t, s, best + emissions.get(t, graph.label(s)));
                back[t * n + s] = arg;
            }
        }
    }
    let mut end = usize::MAX;
    let mut score = NEG_INF;
    for &s in graph.accepting() {
        let v = delta.get(t_max - 1, s);
        if v > score {
            score = v;
            end = s;
        }
    }
    if end == usize::MAX {
        return Err(CriterionError::NoPath);
    }
    let mut states = vec![0; t_max];
    states[t_max - 1] = end;
    for t in (1..t_max).rev() {
        states[t - 1] = back[t * n + states[t]];
    }
    let labels = states.iter().map(|&s| graph.label(s)).collect();
    let cumulative = states
        .iter()
        .enumerate()
        .map(|(t, &s)| delta.get(t, s))
        .collect();
    Ok(Alignment {
        labels,
        states,
        cumulative,
        score,
    })
}

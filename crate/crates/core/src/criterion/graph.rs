//! Time-invariant acceptance automata, unrolled implicitly over `T` frames.
//! A path visits one state per frame and moves along an edge between
//! consecutive frames.

use serde::{Deserialize, Serialize};

use super::CriterionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphKind {
    Ctc,
    Asg,
    Full,
}

/// Letter transition scores `trans[i][j]` (from label `i` to label `j`)
/// and start scores `start[j]` for the first frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub trans: crate::tensor::Matrix,
    pub start: Vec<f64>,
}

impl TransitionTable {
    pub fn zeros(n_labels: usize) -> Self {
        Self {
            trans: crate::tensor::Matrix::zeros(n_labels, n_labels),
            start: vec![0.0; n_labels],
        }
    }

    pub fn n_labels(&self) -> usize {
        self.start.len()
    }

    #[inline]
    pub fn score(&self, from: usize, to: usize) -> f64 {
        self.trans.get(from, to)
    }

    pub fn is_finite(&self) -> bool {
        self.trans.is_finite() && self.start.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct CriterionGraph {
    kind: GraphKind,
    n_labels: usize,
    frames: usize,
    labels: Vec<usize>,
    /// Predecessors of each state; the self loop, when present, comes last.
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    initial: Vec<usize>,
    accepting: Vec<usize>,
    transitions: bool,
}

impl CriterionGraph {
    fn from_parts(
        kind: GraphKind,
        n_labels: usize,
        frames: usize,
        labels: Vec<usize>,
        edges: &[(usize, usize)],
        initial: Vec<usize>,
        accepting: Vec<usize>,
    ) -> Self {
        let n = labels.len();
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b {
                incoming[b].push(a);
            }
            outgoing[a].push(b);
        }
        for &(a, b) in edges {
            if a == b {
                incoming[b].push(a);
            }
        }
        Self {
            transitions: kind != GraphKind::Ctc,
            kind,
            n_labels,
            frames,
            labels,
            incoming,
            outgoing,
            initial,
            accepting,
        }
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, state: usize) -> usize {
        self.labels[state]
    }

    pub fn incoming(&self, state: usize) -> &[usize] {
        &self.incoming[state]
    }

    pub fn outgoing(&self, state: usize) -> &[usize] {
        &self.outgoing[state]
    }

    pub fn initial(&self) -> &[usize] {
        &self.initial
    }

    pub fn accepting(&self) -> &[usize] {
        &self.accepting
    }

    pub fn n_edges(&self) -> usize {
        self.outgoing.iter().map(Vec::len).sum()
    }

    /// Whether edges carry transition scores.
    pub fn uses_transitions(&self) -> bool {
        self.transitions
    }

    /// Drops transition scores from the edges (e.g. blank-free CTC on the
    /// ASG topology).
    pub fn without_transitions(mut self) -> Self {
        self.transitions = false;
        self
    }

    fn step_distances(&self, from: &[usize], forward: bool) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_states()];
        let mut queue = std::collections::VecDeque::new();
        for &s in from {
            dist[s] = 0;
            queue.push_back(s);
        }
        while let Some(s) = queue.pop_front() {
            let next = if forward {
                &self.outgoing[s]
            } else {
                &self.incoming[s]
            };
            for &n in next {
                if dist[n] == usize::MAX {
                    dist[n] = dist[s] + 1;
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// States that lie on at least one accepted path at frame `t`.
    pub fn frame_states(&self, t: usize) -> Vec<usize> {
        let from_start = self.step_distances(&self.initial, true);
        let to_end = self.step_distances(&self.accepting, false);
        (0..self.n_states())
            .filter(|&s| {
                self.on_some_path(t, from_start[s], to_end[s])
            })
            .collect()
    }

    fn on_some_path(&self, t: usize, ds: usize, de: usize) -> bool {
        if ds == usize::MAX || de == usize::MAX || t >= self.frames {
            return false;
        }
        // every state in these topologies has a self loop, so slack is free
        ds <= t && de < self.frames - t
    }

    /// Number of accepted paths, as `f64` to avoid overflow.
    pub fn count_paths(&self) -> f64 {
        let n = self.n_states();
        let mut cur = vec![0.0; n];
        for &s in &self.initial {
            cur[s] = 1.0;
        }
        for _ in 1..self.frames {
            let mut next = vec![0.0; n];
            for (s, slot) in next.iter_mut().enumerate() {
                *slot = self.incoming[s].iter().map(|&a| cur[a]).sum();
            }
            cur = next;
        }
        self.accepting.iter().map(|&s| cur[s]).sum()
    }
}

fn check_labels(target: &[usize], n_labels: usize) -> Result<(), CriterionError> {
    match target.iter().find(|&&l| l >= n_labels) {
        Some(&l) => Err(CriterionError::LabelOutOfRange { label: l, n_labels }),
        None => Ok(()),
    }
}

/// Minimal number of frames a CTC path needs for `target`.
pub fn ctc_min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Blank-interleaved CTC graph over `2N+1` states. `blank` is a label id in
/// `0..n_labels`; skipping a blank between identical graphemes is forbidden.
pub fn build_ctc_graph(
    target: &[usize],
    frames: usize,
    n_labels: usize,
    blank: usize,
) -> Result<CriterionGraph, CriterionError> {
    check_labels(target, n_labels)?;
    if blank >= n_labels {
        return Err(CriterionError::LabelOutOfRange {
            label: blank,
            n_labels,
        });
    }
    if let Some(&l) = target.iter().find(|&&l| l == blank) {
        return Err(CriterionError::BlankInTarget(l));
    }
    let needed = ctc_min_frames(target);
    if frames == 0 || frames < needed {
        return Err(CriterionError::Infeasible { frames, needed });
    }
    let n = target.len();
    let labels: Vec<usize> = (0..2 * n + 1)
        .map(|s| if s % 2 == 0 { blank } else { target[s / 2] })
        .collect();
    let mut edges = Vec::new();
    for s in 0..labels.len() {
        edges.push((s, s));
        if s + 1 < labels.len() {
            edges.push((s, s + 1));
        }
        if s % 2 == 1 && s + 2 < labels.len() && labels[s] != labels[s + 2] {
            edges.push((s, s + 2));
        }
    }
    let initial = if n == 0 { vec![0] } else { vec![0, 1] };
    let accepting = if n == 0 {
        vec![0]
    } else {
        vec![2 * n - 1, 2 * n]
    };
    Ok(CriterionGraph::from_parts(
        GraphKind::Ctc,
        n_labels,
        frames,
        labels,
        &edges,
        initial,
        accepting,
    ))
}

/// Blank-free acceptance graph: one state per target grapheme with self loop
/// and advance edges.
pub fn build_asg_graph(
    target: &[usize],
    frames: usize,
    n_labels: usize,
) -> Result<CriterionGraph, CriterionError> {
    check_labels(target, n_labels)?;
    if target.is_empty() {
        return Err(CriterionError::EmptyTarget);
    }
    if frames < target.len() {
        return Err(CriterionError::Infeasible {
            frames,
            needed: target.len(),
        });
    }
    let n = target.len();
    let mut edges = Vec::with_capacity(2 * n);
    for s in 0..n {
        edges.push((s, s));
        if s + 1 < n {
            edges.push((s, s + 1));
        }
    }
    Ok(CriterionGraph::from_parts(
        GraphKind::Asg,
        n_labels,
        frames,
        target.to_vec(),
        &edges,
        vec![0],
        vec![n - 1],
    ))
}

/// Fully connected graph over all labels; the ASG normalizer.
pub fn build_full_graph(n_labels: usize, frames: usize) -> Result<CriterionGraph, CriterionError> {
    if n_labels == 0 || frames == 0 {
        return Err(CriterionError::Infeasible { frames, needed: 1 });
    }
    let mut edges = Vec::with_capacity(n_labels * n_labels);
    for a in 0..n_labels {
        for b in 0..n_labels {
            edges.push((a, b));
        }
    }
    let all: Vec<usize> = (0..n_labels).collect();
    Ok(CriterionGraph::from_parts(
        GraphKind::Full,
        n_labels,
        frames,
        all.clone(),
        &edges,
        all.clone(),
        all,
    ))
}

//! One averaging round for each scheme.
//!
//! Steps update the state matrix in place by pairwise averaging and return a
//! [`MixEvent`] describing the round. The dense averaging matrix implied by an
//! event is only built on request ([`MixEvent::averaging_matrix`]).

use std::collections::VecDeque;
use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Edge, Graph};
use crate::netstate::StateMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    RandomizedGossip,
    LocalMaxGossip,
    GlobalMaxGossip,
    LoadBalancing,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::RandomizedGossip,
        SchemeKind::LocalMaxGossip,
        SchemeKind::GlobalMaxGossip,
        SchemeKind::LoadBalancing,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::RandomizedGossip => "randomized_gossip",
            SchemeKind::LocalMaxGossip => "local_max_gossip",
            SchemeKind::GlobalMaxGossip => "global_max_gossip",
            SchemeKind::LoadBalancing => "load_balancing",
        }
    }

    /// Whether a step consumes randomness (activation draws or tie-breaks).
    pub fn is_randomized(&self) -> bool {
        !matches!(self, SchemeKind::GlobalMaxGossip)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MixError {
    #[error("neighbor probabilities only apply to randomized_gossip, not {0}")]
    ProbsNotApplicable(SchemeKind),
    #[error("neighbor probabilities: expected {expected} rows, got {got}")]
    ProbsRowCount { expected: usize, got: usize },
    #[error("neighbor probabilities for node {node}: {reason}")]
    InvalidProbs { node: usize, reason: String },
    #[error("state has {got} rows but the graph has {expected} nodes")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Which averaging scheme runs, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    /// `neighbor_probs[i][k]` is the probability that node `i` picks its
    /// `k`-th neighbor (in sorted neighbor order). Randomized Gossip only;
    /// absent means uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor_probs: Option<Vec<Vec<f64>>>,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind) -> Self {
        SchemeSpec {
            kind,
            neighbor_probs: None,
        }
    }

    /// Resolved per-node neighbor probabilities (uniform by default).
    pub fn resolve_probs(&self, g: &Graph) -> Result<Vec<Vec<f64>>, MixError> {
        let Some(probs) = &self.neighbor_probs else {
            return Ok((0..g.n())
                .map(|i| vec![1.0 / g.degree(i) as f64; g.degree(i)])
                .collect());
        };
        if self.kind != SchemeKind::RandomizedGossip {
            return Err(MixError::ProbsNotApplicable(self.kind));
        }
        if probs.len() != g.n() {
            return Err(MixError::ProbsRowCount {
                expected: g.n(),
                got: probs.len(),
            });
        }
        for (i, row) in probs.iter().enumerate() {
            let bad = |reason: String| MixError::InvalidProbs { node: i, reason };
            if row.len() != g.degree(i) {
                return Err(bad(format!(
                    "{} entries for {} neighbors",
                    row.len(),
                    g.degree(i)
                )));
            }
            if row.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(bad("every neighbor needs a positive probability".into()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(bad(format!("row sums to {sum}")));
            }
        }
        Ok(probs.clone())
    }
}

/// Bit sizes used for communication accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BitCosts {
    #[serde(default = "default_estimate_bits")]
    pub estimate_bits: u64,
    /// Size of one acknowledgement, wake-up or request signal.
    #[serde(default = "default_ack_bits")]
    pub ack_bits: u64,
}

fn default_estimate_bits() -> u64 {
    32
}

fn default_ack_bits() -> u64 {
    1
}

impl Default for BitCosts {
    fn default() -> Self {
        BitCosts {
            estimate_bits: default_estimate_bits(),
            ack_bits: default_ack_bits(),
        }
    }
}

/// Source of the random choices a step makes. Implemented for every
/// [`Rng`]; [`Scripted`] injects fixed choices for exact traces.
pub trait ActivationSource {
    /// Node that wakes up, uniform on `0..n`.
    fn wake(&mut self, n: usize) -> usize;
    /// Gossip partner among `candidates`, drawn with `probs`.
    fn partner(&mut self, candidates: &[usize], probs: &[f64]) -> usize;
    /// Which of several eligible requesters receives the acknowledgement.
    fn ack(&mut self, senders: &[usize]) -> usize;
}

impl<R: Rng> ActivationSource for R {
    fn wake(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }

    fn partner(&mut self, candidates: &[usize], probs: &[f64]) -> usize {
        let u: f64 = self.random();
        let mut acc = 0.0;
        for (&c, &p) in candidates.iter().zip(probs) {
            acc += p;
            if u < acc {
                return c;
            }
        }
        *candidates.last().expect("node has neighbors")
    }

    fn ack(&mut self, senders: &[usize]) -> usize {
        senders[self.random_range(0..senders.len())]
    }
}

/// Replays a fixed sequence of choices (0-based node ids), then falls back to
/// a seeded generator.
///
/// Each call consumes one scripted node. Panics if a scripted node is not
/// among the allowed candidates.
#[derive(Debug, Clone)]
pub struct Scripted {
    queue: VecDeque<usize>,
    fallback: ChaCha8Rng,
}

impl Scripted {
    pub fn new(choices: impl IntoIterator<Item = usize>) -> Self {
        Scripted {
            queue: choices.into_iter().collect(),
            fallback: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

impl ActivationSource for Scripted {
    fn wake(&mut self, n: usize) -> usize {
        match self.queue.pop_front() {
            Some(v) => {
                assert!(v < n, "scripted node {v} out of range");
                v
            }
            None => self.fallback.wake(n),
        }
    }

    fn partner(&mut self, candidates: &[usize], probs: &[f64]) -> usize {
        match self.queue.pop_front() {
            Some(v) => {
                assert!(candidates.contains(&v), "scripted partner {v} not a neighbor");
                v
            }
            None => self.fallback.partner(candidates, probs),
        }
    }

    fn ack(&mut self, senders: &[usize]) -> usize {
        match self.queue.pop_front() {
            Some(v) => {
                assert!(senders.contains(&v), "scripted ack target {v} not eligible");
                v
            }
            None => self.fallback.ack(senders),
        }
    }
}

/// Outcome of one averaging round.
#[derive(Debug, Clone, PartialEq)]
pub struct MixEvent {
    pub scheme: SchemeKind,
    /// The node that woke up (gossip schemes only).
    pub activated: Option<usize>,
    /// Vertex-disjoint pairs that averaged, ascending.
    pub pairs: Vec<Edge>,
    pub bits: u64,
}

impl MixEvent {
    /// `A = I − ½ Σ (b_i − b_j)(b_i − b_j)ᵀ` over the averaged pairs.
    pub fn averaging_matrix(&self, n: usize) -> DMatrix<f64> {
        let mut a = DMatrix::identity(n, n);
        for e in &self.pairs {
            a[(e.i, e.i)] -= 0.5;
            a[(e.j, e.j)] -= 0.5;
            a[(e.i, e.j)] += 0.5;
            a[(e.j, e.i)] += 0.5;
        }
        a
    }

    /// Number of edges over which an exchange happened.
    pub fn exchange_edges(&self) -> usize {
        self.pairs.len()
    }

    /// One JSON line for trace logs; node labels are 1-based.
    pub fn to_json_line(&self, t: u64) -> String {
        let pairs: Vec<[usize; 2]> = self.pairs.iter().map(|e| [e.i + 1, e.j + 1]).collect();
        serde_json::json!({
            "t": t,
            "scheme": self.scheme.name(),
            "activated": self.activated.map(|v| v + 1),
            "pairs": pairs,
            "bits": self.bits,
        })
        .to_string()
    }
}

/// `C_e`: how many edges exchanged in `ev`.
pub fn count_exchange_edges(ev: &MixEvent) -> usize {
    ev.exchange_edges()
}

/// The gossip matrix `B(e) = I − ½(b_i − b_j)(b_i − b_j)ᵀ`.
pub fn gossip_matrix(e: Edge, n: usize) -> DMatrix<f64> {
    MixEvent {
        scheme: SchemeKind::GlobalMaxGossip,
        activated: None,
        pairs: vec![e],
        bits: 0,
    }
    .averaging_matrix(n)
}

/// `Σ_{i<j} c_ij ‖x_i − x_j‖²` with `c = AᵀA`: the exact drop `V(X) − V(AX)`
/// for doubly stochastic `A`.
pub fn lyapunov_decrease(a: &DMatrix<f64>, x: &StateMatrix) -> f64 {
    let c = a.transpose() * a;
    let n = x.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let cij = c[(i, j)];
            if cij != 0.0 {
                total += cij * x.pair_distance_sq(i, j);
            }
        }
    }
    total
}

fn gossip_event(scheme: SchemeKind, s: usize, partner: usize, bits: u64) -> MixEvent {
    MixEvent {
        scheme,
        activated: Some(s),
        pairs: vec![Edge::new(s, partner)],
        bits,
    }
}

/// Randomized Gossip: a uniform node wakes and averages with a neighbor
/// drawn from its row of `probs`.
pub fn step_randomized_gossip(
    g: &Graph,
    x: &mut StateMatrix,
    probs: &[Vec<f64>],
    bits: BitCosts,
    src: &mut impl ActivationSource,
) -> MixEvent {
    let s = src.wake(g.n());
    let j = src.partner(g.neighbors(s), &probs[s]);
    x.average_pair(s, j);
    gossip_event(SchemeKind::RandomizedGossip, s, j, 2 * bits.estimate_bits)
}

/// Local Max-Gossip: a uniform node wakes and averages with its farthest
/// neighbor.
pub fn step_local_max_gossip(
    g: &Graph,
    x: &mut StateMatrix,
    bits: BitCosts,
    src: &mut impl ActivationSource,
) -> MixEvent {
    let s = src.wake(g.n());
    let j = x.local_max_neighbor(g, s);
    x.average_pair(s, j);
    let deg = g.degree(s) as u64;
    // wake-ups, neighbor estimates, own estimate to the chosen neighbor
    let cost = deg * bits.ack_bits + deg * bits.estimate_bits + bits.estimate_bits;
    gossip_event(SchemeKind::LocalMaxGossip, s, j, cost)
}

/// Global Max-Gossip: average the max-edge. Deterministic.
pub fn step_global_max_gossip(g: &Graph, x: &mut StateMatrix, bits: BitCosts) -> MixEvent {
    let e = x.max_edge(g);
    x.average_pair(e.i, e.j);
    MixEvent {
        scheme: SchemeKind::GlobalMaxGossip,
        activated: None,
        pairs: vec![e],
        bits: 2 * bits.estimate_bits,
    }
}

/// Load-Balancing: one synchronous request/acknowledge round.
///
/// Every agent requests all members of its max-dissent set `S_i`. An agent
/// acknowledges one request, uniformly among senders that also lie in its own
/// `S_i`; requests from outside `S_i` are never acknowledged. Pairs that
/// acknowledged each other average.
pub fn step_load_balancing(
    g: &Graph,
    x: &mut StateMatrix,
    bits: BitCosts,
    src: &mut impl ActivationSource,
) -> MixEvent {
    let n = g.n();
    let sets: Vec<Vec<usize>> = (0..n).map(|i| x.max_dissent_set(g, i)).collect();

    let mut ack_to = vec![None; n];
    let mut acks = 0u64;
    for j in 0..n {
        // senders that requested j (j ∈ S_i) and lie in S_j
        let eligible: Vec<usize> = sets[j]
            .iter()
            .copied()
            .filter(|&i| sets[i].binary_search(&j).is_ok())
            .collect();
        let target = match eligible.len() {
            0 => continue,
            1 => eligible[0],
            _ => src.ack(&eligible),
        };
        ack_to[j] = Some(target);
        acks += 1;
    }

    let pairs: Vec<Edge> = (0..n)
        .filter_map(|i| match ack_to[i] {
            Some(j) if i < j && ack_to[j] == Some(i) => Some(Edge::new(i, j)),
            _ => None,
        })
        .collect();
    for e in &pairs {
        x.average_pair(e.i, e.j);
    }

    let cost = bits.estimate_bits * g.total_degree() as u64
        + n as u64 * bits.ack_bits
        + acks * bits.ack_bits;
    MixEvent {
        scheme: SchemeKind::LoadBalancing,
        activated: None,
        pairs,
        bits: cost,
    }
}

/// A scheme bound to a graph, ready to step.
#[derive(Debug, Clone)]
pub struct Mixer<'g> {
    graph: &'g Graph,
    kind: SchemeKind,
    probs: Vec<Vec<f64>>,
    bits: BitCosts,
}

impl<'g> Mixer<'g> {
    pub fn new(graph: &'g Graph, spec: &SchemeSpec, bits: BitCosts) -> Result<Self, MixError> {
        let probs = match spec.kind {
            SchemeKind::RandomizedGossip => spec.resolve_probs(graph)?,
            other if spec.neighbor_probs.is_some() => {
                return Err(MixError::ProbsNotApplicable(other))
            }
            _ => Vec::new(),
        };
        Ok(Mixer {
            graph,
            kind: spec.kind,
            probs,
            bits,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Resolved Randomized Gossip probabilities (empty for other schemes).
    pub fn neighbor_probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn step(&self, x: &mut StateMatrix, src: &mut impl ActivationSource) -> MixEvent {
        let g = self.graph;
        match self.kind {
            SchemeKind::RandomizedGossip => step_randomized_gossip(g, x, &self.probs, self.bits, src),
            SchemeKind::LocalMaxGossip => step_local_max_gossip(g, x, self.bits, src),
            SchemeKind::GlobalMaxGossip => step_global_max_gossip(g, x, self.bits),
            SchemeKind::LoadBalancing => step_load_balancing(g, x, self.bits, src),
        }
    }

    pub fn check_shape(&self, x: &StateMatrix) -> Result<(), MixError> {
        if x.n() != self.graph.n() {
            return Err(MixError::ShapeMismatch {
                expected: self.graph.n(),
                got: x.n(),
            });
        }
        Ok(())
    }
}

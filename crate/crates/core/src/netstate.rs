//! The network state matrix and the quantities derived from it.
//!
//! All maximizations compare squared distances with exact equality for ties;
//! square roots are only taken on reported distances.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Edge, Graph};

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("state matrix needs n >= 1 and d >= 1 (got {n}x{d})")]
    EmptyShape { n: usize, d: usize },
    #[error("row {row} has {got} entries, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("non-finite entry at agent {agent}, coordinate {coord}")]
    NonFinite { agent: usize, coord: usize },
    #[error("CSV parse error on line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// `n × d` matrix whose row `i` is agent `i`'s estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl StateMatrix {
    pub fn zeros(n: usize, d: usize) -> Result<Self, StateError> {
        if n == 0 || d == 0 {
            return Err(StateError::EmptyShape { n, d });
        }
        Ok(StateMatrix {
            n,
            d,
            data: vec![0.0; n * d],
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, StateError> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = StateMatrix::zeros(n, d)?;
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(StateError::RaggedRow {
                    row: i,
                    got: r.len(),
                    expected: d,
                });
            }
            m.row_mut(i).copy_from_slice(r);
        }
        m.check_finite()?;
        Ok(m)
    }

    /// Column of scalars, one per agent.
    pub fn from_scalars(values: &[f64]) -> Result<Self, StateError> {
        let rows: Vec<[f64; 1]> = values.iter().map(|&v| [v]).collect();
        StateMatrix::from_rows(&rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn check_finite(&self) -> Result<(), StateError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(StateError::NonFinite {
                agent: k / self.d,
                coord: k % self.d,
            }),
            None => Ok(()),
        }
    }

    /// Row mean `x̄`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        let n = self.n as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Replaces rows `i` and `j` by their average.
    pub fn average_pair(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        let d = self.d;
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let (head, tail) = self.data.split_at_mut(hi * d);
        let a = &mut head[lo * d..(lo + 1) * d];
        let b = &mut tail[..d];
        for (x, y) in a.iter_mut().zip(b.iter_mut()) {
            let avg = 0.5 * (*x + *y);
            *x = avg;
            *y = avg;
        }
    }

    /// Lyapunov function `V(X) = Σ_i ‖x_i − x̄‖²`.
    pub fn lyapunov(&self) -> f64 {
        let mean = self.mean();
        self.rows().map(|r| sq_dist(r, &mean)).sum()
    }

    pub fn pair_distance_sq(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.row(i), self.row(j))
    }

    pub fn pair_distance(&self, i: usize, j: usize) -> f64 {
        self.pair_distance_sq(i, j).sqrt()
    }

    /// `d(X)`: largest distance over all agent pairs.
    pub fn max_distance_any(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                best = best.max(self.pair_distance_sq(i, j));
            }
        }
        best.sqrt()
    }

    /// `d_G(X)`: largest distance over the edges of `g`.
    pub fn max_distance_edge(&self, g: &Graph) -> f64 {
        g.edges()
            .iter()
            .map(|e| self.pair_distance_sq(e.i, e.j))
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// The max-edge: largest gap over `g`'s edges, lexicographically smallest
    /// among exact ties.
    pub fn max_edge(&self, g: &Graph) -> Edge {
        let mut best = g.edges()[0];
        let mut best_sq = self.pair_distance_sq(best.i, best.j);
        // edges are sorted, so keeping the first strict maximum is lexicographic
        for &e in &g.edges()[1..] {
            let sq = self.pair_distance_sq(e.i, e.j);
            if sq > best_sq {
                best = e;
                best_sq = sq;
            }
        }
        best
    }

    /// Farthest neighbor of `s`, smallest index among exact ties.
    pub fn local_max_neighbor(&self, g: &Graph, s: usize) -> usize {
        let nb = g.neighbors(s);
        let mut best = nb[0];
        let mut best_sq = self.pair_distance_sq(s, best);
        for &r in &nb[1..] {
            let sq = self.pair_distance_sq(s, r);
            if sq > best_sq {
                best = r;
                best_sq = sq;
            }
        }
        best
    }

    /// The full arg-max set `S_i` of farthest neighbors, ascending.
    pub fn max_dissent_set(&self, g: &Graph, i: usize) -> Vec<usize> {
        let nb = g.neighbors(i);
        let dists: Vec<f64> = nb.iter().map(|&r| self.pair_distance_sq(i, r)).collect();
        let top = dists.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        nb.iter()
            .zip(&dists)
            .filter(|(_, &d)| d == top)
            .map(|(&r, _)| r)
            .collect()
    }

    /// CSV with header `agent,x1..xd`; agents are 1-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent");
        for k in 1..=self.d {
            write!(out, ",x{k}").unwrap();
        }
        out.push('\n');
        for (i, r) in self.rows().enumerate() {
            write!(out, "{}", i + 1).unwrap();
            for v in r {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, StateError> {
        let mut lines = text.lines().enumerate();
        let err = |line: usize, reason: String| StateError::Csv {
            line: line + 1,
            reason,
        };
        let (_, header) = lines.next().ok_or_else(|| err(0, "empty input".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let d = cols.len().saturating_sub(1);
        let well_formed = cols.first() == Some(&"agent")
            && cols[1..]
                .iter()
                .enumerate()
                .all(|(k, c)| *c == format!("x{}", k + 1));
        if !well_formed {
            return Err(err(0, format!("bad header {header:?}")));
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(err(idx, format!("expected {} fields", d + 1)));
            }
            let agent: usize = fields[0]
                .parse()
                .map_err(|_| err(idx, format!("bad agent {:?}", fields[0])))?;
            if agent != rows.len() + 1 {
                return Err(err(idx, format!("agent {agent} out of order")));
            }
            let row = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(idx, e.to_string()))?;
            rows.push(row);
        }
        StateMatrix::from_rows(&rows)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_graph, GraphKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line3() -> Graph {
        make_graph(GraphKind::Line, 3, None).unwrap()
    }

    fn scalars(v: &[f64]) -> StateMatrix {
        StateMatrix::from_scalars(v).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, d: usize) -> StateMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        StateMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn lyapunov_examples() {
        assert_eq!(scalars(&[0.0, 2.0, 4.0]).lyapunov(), 8.0);
        assert_eq!(scalars(&[1.5, 1.5, 1.5]).lyapunov(), 0.0);
    }

    #[test]
    fn lyapunov_pairwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_state(&mut rng, 6, 3);
        let mut pairwise = 0.0;
        for i in 0..6 {
            for j in i + 1..6 {
                let r: f64 = (0..3).map(|k| (x.row(i)[k] - x.row(j)[k]).powi(2)).sum();
                pairwise += r;
            }
        }
        let v = x.lyapunov();
        assert!((v - pairwise / 6.0).abs() <= 1e-12 * v);
    }

    #[test]
    fn distances() {
        let x = scalars(&[0.0, 3.0]);
        assert_eq!(x.pair_distance(0, 1), 3.0);
        assert_eq!(x.pair_distance(1, 1), 0.0);
        let y = StateMatrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        assert_eq!(y.pair_distance(0, 1), 5.0);

        let x = scalars(&[0.0, 1.0, 3.0]);
        assert_eq!(x.max_distance_any(), 3.0);
        assert_eq!(x.max_distance_edge(&line3()), 2.0);
        let k3 = make_graph(GraphKind::Complete, 3, None).unwrap();
        assert_eq!(x.max_distance_edge(&k3), x.max_distance_any());
    }

    #[test]
    fn max_edge_and_ties() {
        let g = line3();
        assert_eq!(scalars(&[0.0, 1.0, 3.0]).max_edge(&g), Edge::new(1, 2));
        assert_eq!(scalars(&[0.0, 1.0, 2.0]).max_edge(&g), Edge::new(0, 1));
        let er = make_graph(GraphKind::ErdosRenyi { p: 0.5 }, 8, Some(2)).unwrap();
        let constant = StateMatrix::from_rows(&[[4.0, -1.0]; 8]).unwrap();
        assert_eq!(constant.max_edge(&er), er.edges()[0]);
    }

    #[test]
    fn local_neighbor_selection() {
        let g = line3();
        assert_eq!(scalars(&[0.0, 1.0, 3.0]).local_max_neighbor(&g, 0), 1);
        assert_eq!(scalars(&[0.0, 1.0, 3.0]).local_max_neighbor(&g, 1), 2);
        assert_eq!(scalars(&[0.0, 1.0, 2.0]).local_max_neighbor(&g, 1), 0);
    }

    #[test]
    fn dissent_sets() {
        let g = line3();
        assert_eq!(scalars(&[0.0, 1.0, 2.0]).max_dissent_set(&g, 1), vec![0, 2]);
        let star = make_graph(GraphKind::Star, 5, None).unwrap();
        let x = scalars(&[0.0, 1.0, -3.0, 2.0, 2.5]);
        assert_eq!(x.max_dissent_set(&star, 0), vec![2]);
    }

    #[test]
    fn dissent_set_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..200 {
            let n = rng.random_range(2..=10);
            let g = make_graph(GraphKind::ErdosRenyi { p: 0.5 }, n, Some(trial)).unwrap();
            // integer states make ties common
            let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-2..=2) as f64).collect();
            let x = scalars(&vals);
            for i in 0..n {
                let best = g
                    .neighbors(i)
                    .iter()
                    .map(|&r| (vals[i] - vals[r]).abs())
                    .fold(0.0, f64::max);
                let expect: Vec<usize> = g
                    .neighbors(i)
                    .iter()
                    .copied()
                    .filter(|&r| (vals[i] - vals[r]).abs() == best)
                    .collect();
                assert_eq!(x.max_dissent_set(&g, i), expect);
                assert_eq!(x.local_max_neighbor(&g, i), expect[0]);
            }
        }
    }

    #[test]
    fn csv_format() {
        let x = StateMatrix::from_rows(&[[1.0, -2.5], [0.0, 3.0]]).unwrap();
        assert_eq!(x.to_csv(), "agent,x1,x2\n1,1,-2.5\n2,0,3\n");
        assert_eq!(StateMatrix::from_csv(&x.to_csv()).unwrap(), x);
        assert!(StateMatrix::from_csv("agent,x2\n1,0\n").is_err());
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            StateMatrix::zeros(0, 1),
            Err(StateError::EmptyShape { n: 0, d: 1 })
        );
        assert!(matches!(
            StateMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]),
            Err(StateError::RaggedRow { row: 1, .. })
        ));
        assert_eq!(
            StateMatrix::from_scalars(&[1.0, f64::NAN]),
            Err(StateError::NonFinite { agent: 1, coord: 0 })
        );
    }

    proptest! {
        #[test]
        fn lyapunov_is_translation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), 2..9),
            shift in prop::collection::vec(-100.0..100.0f64, 3),
        ) {
            let x = StateMatrix::from_rows(&rows).unwrap();
            let shifted: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect())
                .collect();
            let y = StateMatrix::from_rows(&shifted).unwrap();
            let v = x.lyapunov();
            prop_assert!(v >= 0.0);
            prop_assert!((v - y.lyapunov()).abs() <= 1e-9 * v.max(1.0));
        }

        #[test]
        fn distance_sandwich(seed in any::<u64>(), n in 2usize..=12, d in 1usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = make_graph(GraphKind::ErdosRenyi { p: 0.35 }, n, Some(seed)).unwrap();
            let x = random_state(&mut rng, n, d);
            let any = x.max_distance_any();
            let edge = x.max_distance_edge(&g);
            prop_assert!(edge <= any);
            prop_assert!(any / g.diameter() as f64 <= edge * (1.0 + 1e-12));
            let e = x.max_edge(&g);
            prop_assert!(g.has_edge(e.i, e.j));
            prop_assert_eq!(x.pair_distance(e.i, e.j), edge);
        }
    }
}

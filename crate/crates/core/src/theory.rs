//! Contraction constants, rate bounds, and empirical contraction estimates.
//!
//! For a scheme whose expected `(AᵀA)` entry on the max-edge is at least `δ`,
//! the Lyapunov function contracts in expectation by
//!
//! ```text
//! λ = 1 − 2δ / ((n − 1) · diam²)
//! ```
//!
//! and the time-averaged subgradient method under `α(t) = 1/√t` carries the
//! constants `K₁ = K₂ = √λ / (1 − √λ)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::mixing::{ActivationSource, BitCosts, MixError, Mixer, SchemeKind, SchemeSpec};
use crate::netstate::StateMatrix;

/// Largest `n` for which Randomized Gossip's expected ratio is enumerated
/// exactly rather than sampled.
pub const EXACT_ENUMERATION_MAX_N: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error("delta {0} outside (0, 1/2]")]
    DeltaOutOfRange(f64),
    #[error("lambda {0} outside [0, 1)")]
    LambdaOutOfRange(f64),
    #[error("need n >= 2 and diam >= 1 (got n = {n}, diam = {diam})")]
    InvalidGraphSize { n: usize, diam: usize },
    #[error("zero Lyapunov: the state is already in consensus")]
    ZeroLyapunov,
    #[error("need at least one sample")]
    NoSamples,
    #[error("state has {got} rows but the graph has {expected} nodes")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Guaranteed expected `(AᵀA)` weight on the max-edge for each scheme:
/// `min P_ij / n`, `1/n`, `1/2` and `1/(2(n−1)²)`.
pub fn delta_for(scheme: &SchemeSpec, g: &Graph) -> Result<f64, TheoryError> {
    let n = g.n() as f64;
    Ok(match scheme.kind {
        SchemeKind::RandomizedGossip => {
            let probs = scheme.resolve_probs(g)?;
            let p_min = probs.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            p_min / n
        }
        SchemeKind::LocalMaxGossip => 1.0 / n,
        SchemeKind::GlobalMaxGossip => 0.5,
        SchemeKind::LoadBalancing => 1.0 / (2.0 * (n - 1.0).powi(2)),
    })
}

/// `λ = 1 − 2δ / ((n − 1) diam²)`.
///
/// `λ = 0` is reachable (two nodes with `δ = ½`: one averaging step reaches
/// consensus) and is accepted.
pub fn lambda_for(delta: f64, n: usize, diam: usize) -> Result<f64, TheoryError> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(TheoryError::DeltaOutOfRange(delta));
    }
    if n < 2 || diam < 1 {
        return Err(TheoryError::InvalidGraphSize { n, diam });
    }
    let lambda = 1.0 - 2.0 * delta / ((n - 1) as f64 * (diam * diam) as f64);
    if !(0.0..1.0).contains(&lambda) {
        return Err(TheoryError::LambdaOutOfRange(lambda));
    }
    Ok(lambda)
}

/// `(K₁, K₂)`, both `√λ / (1 − √λ)`.
pub fn rate_constants(lambda: f64) -> Result<(f64, f64), TheoryError> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(TheoryError::LambdaOutOfRange(lambda));
    }
    let r = lambda.sqrt();
    let k = r / (1.0 - r);
    Ok((k, k))
}

/// Closed-form upper bound on `K₁ = K₂` per scheme (uniform neighbor choice
/// for Randomized Gossip), from `1 − √λ ≥ (1 − λ)/2`.
pub fn rate_constant_bound(kind: SchemeKind, n: usize, diam: usize) -> f64 {
    let n = n as f64;
    let base = (n - 1.0) * (diam * diam) as f64;
    match kind {
        SchemeKind::RandomizedGossip => n * n * base,
        SchemeKind::LocalMaxGossip => n * base,
        SchemeKind::GlobalMaxGossip => 2.0 * base,
        SchemeKind::LoadBalancing => 2.0 * (n - 1.0).powi(2) * base,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub scheme: SchemeKind,
    pub n: usize,
    pub diam: usize,
    pub delta: f64,
    pub lambda: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
}

impl ContractionReport {
    pub fn new(scheme: &SchemeSpec, g: &Graph) -> Result<Self, TheoryError> {
        let delta = delta_for(scheme, g)?;
        let lambda = lambda_for(delta, g.n(), g.diameter())?;
        let (k1, k2) = rate_constants(lambda)?;
        Ok(ContractionReport {
            scheme: scheme.kind,
            n: g.n(),
            diam: g.diameter(),
            delta,
            lambda,
            k1,
            k2,
        })
    }
}

/// Problem-dependent quantities entering the rate envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    /// Subgradient bound `L`.
    pub lipschitz: f64,
    /// `‖x̄(0) − w*‖`.
    pub mean_gap: f64,
    /// `‖X(0) − X̄(0)‖_F`.
    pub spread: f64,
}

/// Upper bound on `F(w̃_i(t+1)) − F*` under `α(t) = 1/√t`:
///
/// ```text
/// (n/2)‖x̄(0)−w*‖/√(t+1) + L²(1+ln(t+1))/(2n√(t+1))
///   + L(2√n+1)K₁‖X(0)−X̄(0)‖_F/√(t+1) + L²K₂(2√n+1)(1+ln t)/√(t+1)
/// ```
pub fn rate_envelope(report: &ContractionReport, bounds: &RateBounds, t: u64) -> f64 {
    let t = t.max(1) as f64;
    let n = report.n as f64;
    let root = (t + 1.0).sqrt();
    let l = bounds.lipschitz;
    let c = 2.0 * n.sqrt() + 1.0;
    n / 2.0 * bounds.mean_gap / root
        + l * l * (1.0 + (t + 1.0).ln()) / (2.0 * n * root)
        + l * c * report.k1 * bounds.spread / root
        + l * l * report.k2 * c * (1.0 + t.ln()) / root
}

/// Monte-Carlo (or exact) estimate of `E[V(AX)] / V(X)` at a fixed state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionEstimate {
    pub mean_ratio: f64,
    pub std_error: f64,
    /// True when computed by enumeration, with no sampling noise.
    pub exact: bool,
}

/// Exact expected ratio for the gossip schemes, by enumerating every
/// activation. `None` for Load-Balancing.
pub fn exact_contraction(
    g: &Graph,
    x: &StateMatrix,
    scheme: &SchemeSpec,
) -> Result<Option<f64>, TheoryError> {
    let v = checked_lyapunov(g, x)?;
    let n = g.n();
    let after = |i: usize, j: usize| {
        let mut y = x.clone();
        y.average_pair(i, j);
        y.lyapunov()
    };
    let expected = match scheme.kind {
        SchemeKind::RandomizedGossip => {
            let probs = scheme.resolve_probs(g)?;
            let mut e = 0.0;
            for (s, row) in probs.iter().enumerate() {
                for (&j, &p) in g.neighbors(s).iter().zip(row) {
                    e += p * after(s, j);
                }
            }
            e / n as f64
        }
        SchemeKind::LocalMaxGossip => {
            (0..n).map(|s| after(s, x.local_max_neighbor(g, s))).sum::<f64>() / n as f64
        }
        SchemeKind::GlobalMaxGossip => {
            let e = x.max_edge(g);
            after(e.i, e.j)
        }
        SchemeKind::LoadBalancing => return Ok(None),
    };
    Ok(Some(expected / v))
}

/// Estimates the one-step contraction ratio at `x`.
///
/// Randomized Gossip with `n ≤ 20` and Global Max-Gossip are evaluated
/// exactly; everything else averages `samples` independent steps.
pub fn estimate_contraction(
    g: &Graph,
    x: &StateMatrix,
    scheme: &SchemeSpec,
    samples: usize,
    src: &mut impl ActivationSource,
) -> Result<ContractionEstimate, TheoryError> {
    if samples == 0 {
        return Err(TheoryError::NoSamples);
    }
    let v = checked_lyapunov(g, x)?;
    let enumerate = match scheme.kind {
        SchemeKind::GlobalMaxGossip => true,
        SchemeKind::RandomizedGossip => g.n() <= EXACT_ENUMERATION_MAX_N,
        _ => false,
    };
    if enumerate {
        if let Some(mean_ratio) = exact_contraction(g, x, scheme)? {
            return Ok(ContractionEstimate {
                mean_ratio,
                std_error: 0.0,
                exact: true,
            });
        }
    }

    let mixer = Mixer::new(g, scheme, BitCosts::default())?;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..samples {
        let mut y = x.clone();
        mixer.step(&mut y, src);
        let r = y.lyapunov() / v;
        let delta = r - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (r - mean);
    }
    let std_error = if samples > 1 {
        (m2 / (samples - 1) as f64 / samples as f64).sqrt()
    } else {
        0.0
    };
    Ok(ContractionEstimate {
        mean_ratio: mean,
        std_error,
        exact: false,
    })
}

fn checked_lyapunov(g: &Graph, x: &StateMatrix) -> Result<f64, TheoryError> {
    if x.n() != g.n() {
        return Err(TheoryError::ShapeMismatch {
            expected: g.n(),
            got: x.n(),
        });
    }
    let v = x.lyapunov();
    if v <= 0.0 {
        return Err(TheoryError::ZeroLyapunov);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_graph, GraphKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line3() -> Graph {
        make_graph(GraphKind::Line, 3, None).unwrap()
    }

    #[test]
    fn deltas() {
        let g10 = make_graph(GraphKind::Line, 10, None).unwrap();
        let lmg = SchemeSpec::new(SchemeKind::LocalMaxGossip);
        assert_eq!(delta_for(&lmg, &g10).unwrap(), 0.1);
        for n in [2, 7, 30] {
            let g = make_graph(GraphKind::Complete, n, None).unwrap();
            assert_eq!(delta_for(&SchemeSpec::new(SchemeKind::GlobalMaxGossip), &g).unwrap(), 0.5);
        }
        let lb = SchemeSpec::new(SchemeKind::LoadBalancing);
        assert_eq!(delta_for(&lb, &line3()).unwrap(), 1.0 / 8.0);
        // uniform P on a 3-line: P_min = 1/2 (middle node), δ = 1/6
        let rg = SchemeSpec::new(SchemeKind::RandomizedGossip);
        assert!((delta_for(&rg, &line3()).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn lambdas() {
        assert_eq!(lambda_for(0.5, 3, 2).unwrap(), 0.875);
        assert!((lambda_for(1.0 / 3.0, 3, 2).unwrap() - 11.0 / 12.0).abs() < 1e-15);
        let near_one = lambda_for(1e-12, 3, 2).unwrap();
        assert!(near_one < 1.0 && 1.0 - near_one < 1e-11);
        assert_eq!(lambda_for(0.5, 2, 1).unwrap(), 0.0);
        assert_eq!(lambda_for(0.0, 3, 2), Err(TheoryError::DeltaOutOfRange(0.0)));
        assert_eq!(lambda_for(0.6, 3, 2), Err(TheoryError::DeltaOutOfRange(0.6)));
        assert!(lambda_for(0.5, 1, 1).is_err());
        assert!(lambda_for(0.5, 3, 0).is_err());
    }

    #[test]
    fn constants() {
        assert_eq!(rate_constants(0.25).unwrap(), (1.0, 1.0));
        let (k1, k2) = rate_constants(0.875).unwrap();
        let r = 0.875f64.sqrt();
        assert_eq!(k1, k2);
        assert!((k1 - r / (1.0 - r)).abs() < 1e-12);
        assert!((k1 - 14.49).abs() < 0.01);
        assert!(rate_constants(1.0).is_err());
    }

    #[test]
    fn rate_constant_bounds_hold_for_all_families() {
        for n in 3..=50 {
            let mut kinds = vec![
                GraphKind::Complete,
                GraphKind::Line,
                GraphKind::Star,
                GraphKind::ErdosRenyi { p: 0.4 },
            ];
            if n % 3 == 0 {
                kinds.push(GraphKind::Barbell);
            }
            if n % 2 == 0 {
                kinds.push(GraphKind::Ladder);
            }
            for kind in kinds {
                let g = make_graph(kind, n, Some(n as u64)).unwrap();
                for scheme in SchemeKind::ALL {
                    let r = ContractionReport::new(&SchemeSpec::new(scheme), &g).unwrap();
                    let bound = rate_constant_bound(scheme, n, g.diameter());
                    assert!(r.k1 <= bound * (1.0 + 1e-6), "{scheme} {kind:?} n={n}: {} > {bound}", r.k1);
                    let lambda = 1.0 - 2.0 * r.delta / ((n - 1) as f64 * (r.diam * r.diam) as f64);
                    assert!((r.lambda - lambda).abs() <= 1e-12 * lambda);
                    let k = r.lambda.sqrt() / (1.0 - r.lambda.sqrt());
                    assert!((r.k1 - k).abs() <= 1e-12 * k && r.k1 == r.k2);
                    assert!(r.lambda > 0.0 && r.lambda < 1.0);
                }
            }
        }
    }

    #[test]
    fn load_balancing_bound_needs_factor_two() {
        for n in [3, 10, 40] {
            let g = make_graph(GraphKind::Line, n, None).unwrap();
            let r = ContractionReport::new(&SchemeSpec::new(SchemeKind::LoadBalancing), &g).unwrap();
            let d2 = (g.diameter() * g.diameter()) as f64;
            let half = ((n - 1) as f64).powi(3) * d2;
            assert!(r.k1 > half && r.k1 <= 2.0 * half, "n = {n}");
        }
    }

    fn report(n: usize, k: f64) -> ContractionReport {
        ContractionReport {
            scheme: SchemeKind::GlobalMaxGossip,
            n,
            diam: 1,
            delta: 0.5,
            lambda: 0.5,
            k1: k,
            k2: k,
        }
    }

    #[test]
    fn envelope_zero_bounds() {
        let b = RateBounds {
            lipschitz: 0.0,
            mean_gap: 0.0,
            spread: 0.0,
        };
        assert_eq!(rate_envelope(&report(10, 3.0), &b, 100), 0.0);
    }

    #[test]
    fn envelope_decreases_on_grid() {
        let b = RateBounds {
            lipschitz: 2.0,
            mean_gap: 1.5,
            spread: 4.0,
        };
        let r = report(20, 50.0);
        let mut t = 8u64;
        let mut prev = rate_envelope(&r, &b, t);
        while t < 1_000_000 {
            t = (t as f64 * 1.05).ceil() as u64;
            let cur = rate_envelope(&r, &b, t);
            assert!(cur < prev, "t = {t}");
            prev = cur;
        }
        // √(4t+1)/√(t+1) → 2, damped by the log terms
        for t in [10_000u64, 100_000, 1_000_000] {
            let ratio = rate_envelope(&r, &b, t) / rate_envelope(&r, &b, 4 * t);
            assert!(ratio >= 2f64.sqrt() * 0.99, "t = {t}: {ratio}");
        }
    }

    #[test]
    fn exact_ratios_on_line_example() {
        let g = line3();
        let x = StateMatrix::from_scalars(&[0.0, 1.0, 3.0]).unwrap();
        let lmg = SchemeSpec::new(SchemeKind::LocalMaxGossip);
        let r = exact_contraction(&g, &x, &lmg).unwrap().unwrap();
        // E[V'] = (1/3)(25/6) + (2/3)(8/3) = 19/6 over V = 14/3
        assert!((r - (19.0 / 6.0) / (14.0 / 3.0)).abs() < 1e-12);
        assert!(r <= 11.0 / 12.0);

        let mg = SchemeSpec::new(SchemeKind::GlobalMaxGossip);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let est = estimate_contraction(&g, &x, &mg, 1, &mut rng).unwrap();
        assert!(est.exact);
        assert!((est.mean_ratio - 4.0 / 7.0).abs() < 1e-12);
        assert!(est.mean_ratio <= 0.875);

        let sampled = estimate_contraction(&g, &x, &lmg, 20_000, &mut rng).unwrap();
        assert!(!sampled.exact);
        assert!((sampled.mean_ratio - r).abs() <= 5.0 * sampled.std_error);
    }

    #[test]
    fn consensus_state_rejected() {
        let g = line3();
        let x = StateMatrix::from_scalars(&[2.0, 2.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = estimate_contraction(&g, &x, &SchemeSpec::new(SchemeKind::LoadBalancing), 10, &mut rng)
            .unwrap_err();
        assert_eq!(err, TheoryError::ZeroLyapunov);
        assert_eq!(err.to_string(), "zero Lyapunov: the state is already in consensus");
    }

    #[test]
    fn contraction_bound_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for trial in 0..60 {
            let n = rng.random_range(2..=12);
            let g = make_graph(GraphKind::ErdosRenyi { p: 0.4 }, n, Some(trial)).unwrap();
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0); 2]).collect();
            let x = StateMatrix::from_rows(&rows).unwrap();
            if x.lyapunov() == 0.0 {
                continue;
            }
            for kind in SchemeKind::ALL {
                let spec = SchemeSpec::new(kind);
                let r = ContractionReport::new(&spec, &g).unwrap();
                let est = estimate_contraction(&g, &x, &spec, 2000, &mut rng).unwrap();
                assert!(est.mean_ratio - 4.0 * est.std_error <= r.lambda, "{kind} trial {trial}");
            }
        }
    }
}

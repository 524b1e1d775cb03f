//! Local objectives `f_i` with subgradient oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower guard for sampled precisions `1/σ_i²`.
pub const MIN_PRECISION: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("expected a {expected}-dimensional point, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("agent {agent} out of range (n = {n})")]
    AgentOutOfRange { agent: usize, n: usize },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Labeled samples held by one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shard {
    pub features: Vec<Vec<f64>>,
    /// Labels in `{0, 1}`.
    pub labels: Vec<u8>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Whether a uniform subgradient bound exists for every `f_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum SubgradientBound {
    Bounded(f64),
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// `f_i ≡ const`: the run reduces to pure averaging.
    Constant { n: usize, d: usize },
    /// `f_i(w) = (w − c_i)² / σ_i²`.
    MlEstimation { c: Vec<f64>, sigma2: Vec<f64> },
    /// Shard `i` of the regularized logistic loss. The optimization variable
    /// is `(w, b)` with the bias last.
    Logistic {
        feature_dim: usize,
        shards: Vec<Shard>,
        /// Coefficient on `‖w‖² + b²` in the global objective; `1/(2m)` by
        /// default, split evenly across agents.
        regularization: f64,
    },
}

impl ProblemSpec {
    pub fn ml_estimation(c: Vec<f64>, sigma2: Vec<f64>) -> Result<Self, ProblemError> {
        let p = ProblemSpec::MlEstimation { c, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn logistic(feature_dim: usize, shards: Vec<Shard>) -> Result<Self, ProblemError> {
        let m: usize = shards.iter().map(Shard::len).sum();
        let p = ProblemSpec::Logistic {
            feature_dim,
            shards,
            regularization: 1.0 / (2.0 * m.max(1) as f64),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let invalid = |s: String| Err(ProblemError::Invalid(s));
        match self {
            ProblemSpec::Constant { n, d } => {
                if *n == 0 || *d == 0 {
                    return invalid(format!("constant problem with n = {n}, d = {d}"));
                }
            }
            ProblemSpec::MlEstimation { c, sigma2 } => {
                if c.is_empty() || c.len() != sigma2.len() {
                    return invalid(format!(
                        "{} measurements but {} variances",
                        c.len(),
                        sigma2.len()
                    ));
                }
                if let Some(i) = sigma2.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
                    return invalid(format!("sigma2[{i}] must be positive"));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return invalid("non-finite measurement".into());
                }
            }
            ProblemSpec::Logistic {
                feature_dim,
                shards,
                regularization,
            } => {
                if *feature_dim == 0 || shards.is_empty() {
                    return invalid("logistic problem needs features and agents".into());
                }
                if !(regularization.is_finite() && *regularization >= 0.0) {
                    return invalid(format!("regularization {regularization}"));
                }
                for (i, s) in shards.iter().enumerate() {
                    if s.is_empty() || s.features.len() != s.labels.len() {
                        return invalid(format!("agent {i} holds no usable samples"));
                    }
                    if s.features.iter().any(|f| f.len() != *feature_dim) {
                        return invalid(format!("agent {i} has a sample of wrong width"));
                    }
                    if s.labels.iter().any(|&y| y > 1) {
                        return invalid(format!("agent {i} has a label outside {{0,1}}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Constant { .. } => "constant",
            ProblemSpec::MlEstimation { .. } => "ml_estimation",
            ProblemSpec::Logistic { .. } => "logistic",
        }
    }

    /// Number of agents.
    pub fn n(&self) -> usize {
        match self {
            ProblemSpec::Constant { n, .. } => *n,
            ProblemSpec::MlEstimation { c, .. } => c.len(),
            ProblemSpec::Logistic { shards, .. } => shards.len(),
        }
    }

    /// Dimension of each agent's estimate.
    pub fn d(&self) -> usize {
        match self {
            ProblemSpec::Constant { d, .. } => *d,
            ProblemSpec::MlEstimation { .. } => 1,
            ProblemSpec::Logistic { feature_dim, .. } => feature_dim + 1,
        }
    }

    pub fn subgradient_bound(&self) -> SubgradientBound {
        match self {
            ProblemSpec::Constant { .. } => SubgradientBound::Bounded(0.0),
            // quadratic, and the logistic ℓ2 term, grow without bound
            ProblemSpec::MlEstimation { .. } => SubgradientBound::Unbounded,
            ProblemSpec::Logistic { regularization, .. } if *regularization == 0.0 => {
                SubgradientBound::Bounded(self.logistic_unregularized_bound())
            }
            ProblemSpec::Logistic { .. } => SubgradientBound::Unbounded,
        }
    }

    fn logistic_unregularized_bound(&self) -> f64 {
        let ProblemSpec::Logistic { shards, .. } = self else {
            return 0.0;
        };
        let m: usize = shards.iter().map(Shard::len).sum();
        shards
            .iter()
            .map(|s| {
                s.features
                    .iter()
                    .map(|f| (f.iter().map(|v| v * v).sum::<f64>() + 1.0).sqrt())
                    .sum::<f64>()
                    / m as f64
            })
            .fold(0.0, f64::max)
    }

    fn check(&self, agent: usize, w: &[f64]) -> Result<(), ProblemError> {
        if agent >= self.n() {
            return Err(ProblemError::AgentOutOfRange {
                agent,
                n: self.n(),
            });
        }
        if w.len() != self.d() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.d(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// Local objective `f_i(w)`.
    pub fn value(&self, agent: usize, w: &[f64]) -> Result<f64, ProblemError> {
        self.check(agent, w)?;
        Ok(match self {
            ProblemSpec::Constant { .. } => 0.0,
            ProblemSpec::MlEstimation { c, sigma2 } => (w[0] - c[agent]).powi(2) / sigma2[agent],
            ProblemSpec::Logistic {
                shards,
                regularization,
                ..
            } => {
                let m = self.total_samples() as f64;
                let shard = &shards[agent];
                let data: f64 = shard
                    .features
                    .iter()
                    .zip(&shard.labels)
                    .map(|(x, &y)| {
                        let z = margin(x, w);
                        if y == 1 {
                            softplus(-z)
                        } else {
                            softplus(z)
                        }
                    })
                    .sum();
                let norm2: f64 = w.iter().map(|v| v * v).sum();
                data / m + regularization * norm2 / shards.len() as f64
            }
        })
    }

    /// A subgradient `g ∈ ∂f_i(w)`.
    pub fn subgradient(&self, agent: usize, w: &[f64]) -> Result<Vec<f64>, ProblemError> {
        let mut g = vec![0.0; self.d()];
        self.subgradient_into(agent, w, &mut g)?;
        Ok(g)
    }

    /// Writes a subgradient into `out` (length `d`).
    pub fn subgradient_into(
        &self,
        agent: usize,
        w: &[f64],
        out: &mut [f64],
    ) -> Result<(), ProblemError> {
        self.check(agent, w)?;
        if out.len() != self.d() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.d(),
                got: out.len(),
            });
        }
        match self {
            ProblemSpec::Constant { .. } => out.fill(0.0),
            ProblemSpec::MlEstimation { c, sigma2 } => {
                out[0] = 2.0 * (w[0] - c[agent]) / sigma2[agent];
            }
            ProblemSpec::Logistic {
                feature_dim,
                shards,
                regularization,
            } => {
                let m = self.total_samples() as f64;
                let shard = &shards[agent];
                out.fill(0.0);
                for (x, &y) in shard.features.iter().zip(&shard.labels) {
                    let r = (sigmoid(margin(x, w)) - y as f64) / m;
                    for (o, xv) in out[..*feature_dim].iter_mut().zip(x) {
                        *o += r * xv;
                    }
                    out[*feature_dim] += r;
                }
                let share = 2.0 * regularization / shards.len() as f64;
                for (o, wv) in out.iter_mut().zip(w) {
                    *o += share * wv;
                }
            }
        }
        Ok(())
    }

    /// Global objective `F(w) = Σ_i f_i(w)`.
    pub fn global_value(&self, w: &[f64]) -> Result<f64, ProblemError> {
        (0..self.n()).map(|i| self.value(i, w)).sum()
    }

    /// Closed-form minimizer of `F`, when one exists.
    pub fn optimum(&self) -> Option<Vec<f64>> {
        match self {
            ProblemSpec::MlEstimation { c, sigma2 } => {
                let num: f64 = c.iter().zip(sigma2).map(|(ci, s)| ci / s).sum();
                let den: f64 = sigma2.iter().map(|s| 1.0 / s).sum();
                Some(vec![num / den])
            }
            _ => None,
        }
    }

    fn total_samples(&self) -> usize {
        match self {
            ProblemSpec::Logistic { shards, .. } => shards.iter().map(Shard::len).sum(),
            _ => 0,
        }
    }
}

fn margin(x: &[f64], w: &[f64]) -> f64 {
    let (weights, bias) = w.split_at(x.len());
    x.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + bias[0]
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Sensor-network estimation instance: precisions `1/σ_i² ~ U(ε, 1)`,
/// measurements `c_i = θ₀ + n_i` with `n_i ~ N(0, σ_i²)`.
pub fn generate_ml_instance(n: usize, theta0: f64, seed: u64) -> Result<ProblemSpec, ProblemError> {
    if n < 2 {
        return Err(ProblemError::Invalid(format!("need n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Vec::with_capacity(n);
    let mut sigma2 = Vec::with_capacity(n);
    for _ in 0..n {
        let precision = rng.random_range(MIN_PRECISION..1.0);
        let s2 = 1.0 / precision;
        let z: f64 = StandardNormal.sample(&mut rng);
        c.push(theta0 + s2.sqrt() * z);
        sigma2.push(s2);
    }
    ProblemSpec::ml_estimation(c, sigma2)
}

/// Two Gaussian blobs centred at `±1` in every coordinate, unit variance,
/// labels drawn fairly, `samples_per_agent` samples per agent.
pub fn generate_logistic_instance(
    n: usize,
    samples_per_agent: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<ProblemSpec, ProblemError> {
    if n == 0 || samples_per_agent == 0 || feature_dim == 0 {
        return Err(ProblemError::Invalid(
            "agent, sample and feature counts must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shards = (0..n)
        .map(|_| {
            let mut features = Vec::with_capacity(samples_per_agent);
            let mut labels = Vec::with_capacity(samples_per_agent);
            for _ in 0..samples_per_agent {
                let y: u8 = rng.random_range(0..=1);
                let centre = if y == 1 { 1.0 } else { -1.0 };
                let x: Vec<f64> = (0..feature_dim)
                    .map(|_| centre + Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect();
                features.push(x);
                labels.push(y);
            }
            Shard { features, labels }
        })
        .collect();
    ProblemSpec::logistic(feature_dim, shards)
}

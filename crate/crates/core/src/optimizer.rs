//! Consensus-based distributed subgradient iteration over any mixing scheme.
//!
//! Each iteration `t = 0, 1, …` runs two phases:
//!
//! ```text
//! W(t+1) = A(t, X(t)) X(t)
//! X(t+1) = W(t+1) − α(t+1) G(t+1),   g_i(t+1) ∈ ∂f_i(w_i(t+1))
//! ```
//!
//! Subgradients are taken at the mixed point `w_i(t+1)`, not at `x_i(t)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::mixing::{ActivationSource, BitCosts, MixError, MixEvent, Mixer, SchemeSpec};
use crate::netstate::{StateError, StateMatrix};
use crate::problems::{ProblemError, ProblemSpec};

/// Entries beyond this magnitude abort the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Per-step snapshot storage budget (`n·d` entries) below which every step
/// is kept by default.
pub const SNAPSHOT_BUDGET: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("initial state is {got_n}x{got_d}, expected {n}x{d}")]
    ShapeMismatch {
        n: usize,
        d: usize,
        got_n: usize,
        got_d: usize,
    },
    #[error("steps must be >= 1")]
    NoSteps,
    #[error("snapshot interval must be >= 1")]
    ZeroCadence,
    #[error("diverged at t = {t}: agent {agent} has entry {value:e}")]
    Diverged { t: u64, agent: usize, value: f64 },
    #[error("time averaging needs a snapshot at every step up to t = {needed}")]
    MissingSnapshots { needed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `scale / t`: non-increasing, not summable, square-summable.
    InvT,
    /// `scale / √t`: the rate regime; not square-summable.
    InvSqrtT,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSizeSchedule {
    pub kind: ScheduleKind,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

impl Default for StepSizeSchedule {
    fn default() -> Self {
        StepSizeSchedule::inv_t(1.0)
    }
}

impl StepSizeSchedule {
    pub fn inv_t(scale: f64) -> Self {
        StepSizeSchedule {
            kind: ScheduleKind::InvT,
            scale,
        }
    }

    pub fn inv_sqrt_t(scale: f64) -> Self {
        StepSizeSchedule {
            kind: ScheduleKind::InvSqrtT,
            scale,
        }
    }

    pub fn constant(value: f64) -> Self {
        StepSizeSchedule {
            kind: ScheduleKind::Constant,
            scale: value,
        }
    }

    /// `α(t)` for `t ≥ 1`.
    pub fn alpha(&self, t: u64) -> f64 {
        debug_assert!(t >= 1, "schedules start at t = 1");
        let t = t as f64;
        match self.kind {
            ScheduleKind::InvT => self.scale / t,
            ScheduleKind::InvSqrtT => self.scale / t.sqrt(),
            ScheduleKind::Constant => self.scale,
        }
    }

    /// Positive, non-increasing, non-summable and square-summable. Only the
    /// `1/t` schedule qualifies.
    pub fn is_diminishing(&self) -> bool {
        self.kind == ScheduleKind::InvT && self.scale > 0.0
    }

    /// Short tag recorded with experiment output.
    pub fn regime(&self) -> &'static str {
        if self.is_diminishing() {
            "diminishing"
        } else if self.kind == ScheduleKind::InvSqrtT {
            "rate_not_square_summable"
        } else {
            "constant_step"
        }
    }
}

/// What the runner reports after each iteration.
#[derive(Debug)]
pub struct Observation<'a> {
    /// Iteration index `t + 1` of the mixed state `W(t+1)`.
    pub t: u64,
    pub w: &'a StateMatrix,
    /// `G(t+1)`, the subgradients at `W(t+1)`.
    pub subgradients: &'a StateMatrix,
    /// Row mean of `X(t)`.
    pub prev_mean: &'a [f64],
    pub event: &'a MixEvent,
    pub alpha: f64,
}

pub trait MetricsSink {
    fn observe(&mut self, obs: &Observation<'_>);
}

impl MetricsSink for () {
    fn observe(&mut self, _: &Observation<'_>) {}
}

impl<F: FnMut(&Observation<'_>)> MetricsSink for F {
    fn observe(&mut self, obs: &Observation<'_>) {
        self(obs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Snapshots {
    /// Every step while `n·d ≤ SNAPSHOT_BUDGET`, else every `⌈steps/10⁴⌉`.
    #[default]
    Auto,
    Every(u64),
    Off,
}

impl Snapshots {
    fn interval(self, n: usize, d: usize, steps: u64) -> Result<Option<u64>, OptimizerError> {
        match self {
            Snapshots::Auto if n * d <= SNAPSHOT_BUDGET => Ok(Some(1)),
            Snapshots::Auto => Ok(Some(steps.div_ceil(10_000).max(1))),
            Snapshots::Every(0) => Err(OptimizerError::ZeroCadence),
            Snapshots::Every(k) => Ok(Some(k)),
            Snapshots::Off => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    snapshot_every: Option<u64>,
    /// `(t, W(t))` at the snapshot cadence, `t ≥ 1`.
    snapshots: Vec<(u64, StateMatrix)>,
    final_state: StateMatrix,
    steps: u64,
}

impl Trajectory {
    pub fn snapshots(&self) -> &[(u64, StateMatrix)] {
        &self.snapshots
    }

    pub fn snapshot_every(&self) -> Option<u64> {
        self.snapshot_every
    }

    /// `X(steps)`.
    pub fn final_state(&self) -> &StateMatrix {
        &self.final_state
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Runs `steps` iterations with activations drawn from a generator seeded by
/// `seed`.
#[allow(clippy::too_many_arguments)]
pub fn run(
    g: &Graph,
    problem: &ProblemSpec,
    scheme: &SchemeSpec,
    schedule: StepSizeSchedule,
    x0: &StateMatrix,
    steps: u64,
    seed: u64,
    sink: &mut impl MetricsSink,
) -> Result<Trajectory, OptimizerError> {
    let mixer = Mixer::new(g, scheme, BitCosts::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_with(
        &mixer,
        problem,
        schedule,
        x0,
        steps,
        Snapshots::Auto,
        &mut rng,
        sink,
    )
}

/// Full-control variant of [`run`]: explicit mixer, snapshot policy and
/// activation source.
#[allow(clippy::too_many_arguments)]
pub fn run_with(
    mixer: &Mixer<'_>,
    problem: &ProblemSpec,
    schedule: StepSizeSchedule,
    x0: &StateMatrix,
    steps: u64,
    snapshots: Snapshots,
    src: &mut impl ActivationSource,
    sink: &mut impl MetricsSink,
) -> Result<Trajectory, OptimizerError> {
    let n = mixer.graph().n();
    let d = problem.d();
    if x0.n() != n || x0.d() != d || problem.n() != n {
        return Err(OptimizerError::ShapeMismatch {
            n,
            d,
            got_n: x0.n(),
            got_d: x0.d(),
        });
    }
    if steps == 0 {
        return Err(OptimizerError::NoSteps);
    }
    x0.check_finite()?;
    let every = snapshots.interval(n, d, steps)?;

    let mut x = x0.clone();
    let mut grads = StateMatrix::zeros(n, d)?;
    let mut kept = Vec::new();
    for k in 0..steps {
        let t = k + 1;
        let prev_mean = x.mean();
        let event = mixer.step(&mut x, src);
        // x now holds W(t+1)
        for i in 0..n {
            problem.subgradient_into(i, x.row(i), grads.row_mut(i))?;
        }
        let alpha = schedule.alpha(t);
        sink.observe(&Observation {
            t,
            w: &x,
            subgradients: &grads,
            prev_mean: &prev_mean,
            event: &event,
            alpha,
        });
        if every.is_some_and(|e| t % e == 0) {
            kept.push((t, x.clone()));
        }
        for i in 0..n {
            let g = grads.row(i);
            for (xv, gv) in x.row_mut(i).iter_mut().zip(g) {
                *xv -= alpha * gv;
            }
            if let Some(&value) = x
                .row(i)
                .iter()
                .find(|v| v.is_nan() || v.abs() > DIVERGENCE_THRESHOLD)
            {
                return Err(OptimizerError::Diverged { t, agent: i, value });
            }
        }
    }
    Ok(Trajectory {
        snapshot_every: every,
        snapshots: kept,
        final_state: x,
        steps,
    })
}

/// `w̃_i = Σ_k α(k) w_i(k) / Σ_k α(k)` over every recorded step.
pub fn time_averaged_iterate(
    traj: &Trajectory,
    schedule: StepSizeSchedule,
) -> Result<StateMatrix, OptimizerError> {
    time_averaged_iterate_until(traj, schedule, traj.steps)
}

/// Time-averaged iterate over steps `1..=t`.
pub fn time_averaged_iterate_until(
    traj: &Trajectory,
    schedule: StepSizeSchedule,
    t: u64,
) -> Result<StateMatrix, OptimizerError> {
    let complete = traj.snapshot_every == Some(1)
        && t >= 1
        && traj.snapshots.len() as u64 >= t
        && traj.snapshots[t as usize - 1].0 == t;
    if !complete {
        return Err(OptimizerError::MissingSnapshots { needed: t });
    }
    let first = &traj.snapshots[0].1;
    let mut acc = StateMatrix::zeros(first.n(), first.d())?;
    let mut weight = 0.0;
    for (k, w) in &traj.snapshots[..t as usize] {
        let a = schedule.alpha(*k);
        weight += a;
        for i in 0..w.n() {
            for (s, v) in acc.row_mut(i).iter_mut().zip(w.row(i)) {
                *s += a * v;
            }
        }
    }
    for i in 0..acc.n() {
        acc.row_mut(i).iter_mut().for_each(|v| *v /= weight);
    }
    Ok(acc)
}

//! Experiment orchestration: builds the shared instance, runs every
//! `(scheme, run)` pair and writes the output files.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use maxdissent::metrics::{
    aggregate_runs, aggregate_to_csv, records_to_csv, ExperimentRecord, MetricsError, Recorder, RunId,
};
use maxdissent::mixing::{MixError, Mixer, SchemeKind, SchemeSpec};
use maxdissent::optimizer::{run_with, MetricsSink, Observation, OptimizerError, Snapshots};
use maxdissent::problems::{generate_logistic_instance, generate_ml_instance, ProblemError, ProblemSpec};
use maxdissent::theory::{ContractionReport, TheoryError};
use maxdissent::{make_graph, Graph, GraphError, StateMatrix};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::config::{ExperimentConfig, InitKind, ProblemConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{scheme} run {run}: {source}")]
    Run {
        scheme: SchemeKind,
        run: usize,
        source: OptimizerError,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

impl ExperimentError {
    /// True when a run stopped because its iterates blew up.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            ExperimentError::Run {
                source: OptimizerError::Diverged { .. },
                ..
            }
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Activation seed of run `r`.
pub fn run_seed(base_seed: u64, run: usize) -> u64 {
    base_seed ^ (run as u64 + 1)
}

/// Graph, problem data and initial state shared by every run.
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: Graph,
    pub problem: ProblemSpec,
    pub x0: StateMatrix,
    pub reports: Vec<ContractionReport>,
}

impl Instance {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let mut master = ChaCha8Rng::seed_from_u64(cfg.base_seed);
        let graph_seed = master.next_u64();
        let problem_seed = master.next_u64();
        let graph = make_graph(cfg.graph.graph_kind(), cfg.graph.n, Some(graph_seed))?;
        let n = graph.n();
        let problem = match cfg.problem {
            ProblemConfig::Constant { d } => ProblemSpec::Constant { n, d },
            ProblemConfig::MlEstimation { theta0 } => generate_ml_instance(n, theta0, problem_seed)?,
            ProblemConfig::Logistic {
                samples_per_agent,
                feature_dim,
            } => generate_logistic_instance(n, samples_per_agent, feature_dim, problem_seed)?,
        };
        let d = problem.d();
        let values: Vec<f64> = match cfg.init {
            InitKind::Gaussian => (0..n * d).map(|_| StandardNormal.sample(&mut master)).collect(),
            InitKind::Zeros => vec![0.0; n * d],
        };
        let rows: Vec<&[f64]> = values.chunks(d).collect();
        let x0 = StateMatrix::from_rows(&rows).expect("non-empty finite rows");
        let reports = cfg
            .scheme
            .iter()
            .map(|&s| ContractionReport::new(&SchemeSpec::new(s), &graph))
            .collect::<Result<_, _>>()?;
        Ok(Instance {
            graph,
            problem,
            x0,
            reports,
        })
    }

    pub fn header(&self, cfg: &ExperimentConfig) -> serde_json::Value {
        json!({
            "config": cfg,
            "graph": {
                "kind": cfg.graph.graph_kind().name(),
                "n": self.graph.n(),
                "edges": self.graph.edges().len(),
                "diameter": self.graph.diameter(),
            },
            "problem": self.problem.name(),
            "w_star": self.problem.optimum(),
            "subgradient_bound": self.problem.subgradient_bound(),
            "schedule_regime": cfg.schedule.regime(),
            "contraction": self.reports,
            "run_seeds": (0..cfg.runs).map(|r| run_seed(cfg.base_seed, r)).collect::<Vec<_>>(),
        })
    }
}

/// Files written by one experiment, in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Last recorded mean error per scheme, in config order.
    pub final_errors: Vec<(SchemeKind, Option<f64>)>,
}

/// Writes `header.json`, `problem.json` and `graph.txt`, then runs every
/// `(scheme, run)` pair on up to `jobs` threads (0 = all cores).
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Outcome, ExperimentError> {
    let inst = Instance::build(cfg)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut outcome = Outcome::default();

    let mut write = |name: &str, text: String| -> Result<(), ExperimentError> {
        let path = out.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        outcome.files.push(path);
        Ok(())
    };
    let pretty = |v: &serde_json::Value| serde_json::to_string_pretty(v).expect("serializable") + "\n";
    write("header.json", pretty(&inst.header(cfg)))?;
    write("problem.json", pretty(&serde_json::to_value(&inst.problem).expect("serializable")))?;
    write("graph.txt", inst.graph.to_edge_list())?;

    let tasks: Vec<(SchemeKind, usize)> = cfg
        .scheme
        .iter()
        .flat_map(|&s| (0..cfg.runs).map(move |r| (s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let results: Vec<Result<RunOutput, ExperimentError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(scheme, run)| run_one(cfg, &inst, scheme, run, out))
            .collect()
    });

    let mut per_scheme: Vec<Vec<Vec<ExperimentRecord>>> = vec![Vec::new(); cfg.scheme.len()];
    let mut first_error = None;
    for ((scheme, _), res) in tasks.iter().zip(results) {
        match res {
            Ok((records, files)) => {
                outcome.files.extend(files);
                let k = cfg.scheme.iter().position(|s| s == scheme).expect("listed scheme");
                per_scheme[k].push(records);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }

    for (&scheme, runs) in cfg.scheme.iter().zip(&per_scheme) {
        let agg = aggregate_runs(runs)?;
        let path = out.join(format!("{scheme}_mean.csv"));
        fs::write(&path, aggregate_to_csv(scheme, cfg.base_seed, &agg)).map_err(io_err(&path))?;
        outcome.files.push(path);
        outcome
            .final_errors
            .push((scheme, agg.last().and_then(|r| r.error)));
    }
    Ok(outcome)
}

/// Records of one run and the files it wrote.
type RunOutput = (Vec<ExperimentRecord>, Vec<PathBuf>);

struct RunSink<'a> {
    recorder: Recorder,
    trace: Option<(BufWriter<File>, &'a Path)>,
    trace_error: Option<io::Error>,
}

impl MetricsSink for RunSink<'_> {
    fn observe(&mut self, obs: &Observation<'_>) {
        self.recorder.observe(obs);
        if let (Some((w, _)), None) = (&mut self.trace, &self.trace_error) {
            if let Err(e) = writeln!(w, "{}", obs.event.to_json_line(obs.t)) {
                self.trace_error = Some(e);
            }
        }
    }
}

fn run_one(
    cfg: &ExperimentConfig,
    inst: &Instance,
    scheme: SchemeKind,
    run: usize,
    out: &Path,
) -> Result<RunOutput, ExperimentError> {
    let seed = run_seed(cfg.base_seed, run);
    let mixer = Mixer::new(&inst.graph, &SchemeSpec::new(scheme), cfg.bit_constants)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = RunId { scheme, run, seed };
    let trace_path = out.join(format!("{scheme}_run{run}.jsonl"));
    let trace = if cfg.emit_trace {
        let f = File::create(&trace_path).map_err(io_err(&trace_path))?;
        Some((BufWriter::new(f), trace_path.as_path()))
    } else {
        None
    };
    let mut sink = RunSink {
        recorder: Recorder::new(id, inst.problem.optimum(), cfg.snapshot_every),
        trace,
        trace_error: None,
    };
    run_with(
        &mixer,
        &inst.problem,
        cfg.schedule,
        &inst.x0,
        cfg.steps,
        Snapshots::Off,
        &mut rng,
        &mut sink,
    )
    .map_err(|source| ExperimentError::Run { scheme, run, source })?;

    let mut files = Vec::new();
    if let Some((mut w, path)) = sink.trace {
        if let Some(e) = sink.trace_error {
            return Err(io_err(path)(e));
        }
        w.flush().map_err(io_err(path))?;
        files.push(path.to_path_buf());
    }
    let records = sink.recorder.finish()?;
    let csv_path = out.join(format!("{scheme}_run{run}.csv"));
    fs::write(&csv_path, records_to_csv(&records)).map_err(io_err(&csv_path))?;
    files.insert(0, csv_path);
    Ok((records, files))
}

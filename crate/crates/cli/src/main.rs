use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use maxdissent_cli::{run_experiment, ExperimentConfig, Instance};

/// Runs gossip-based distributed subgradient experiments from a JSON config.
#[derive(Debug, Parser)]
#[command(name = "maxdissent", version)]
struct Args {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_path` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-step activation trace as JSON lines.
    #[arg(long)]
    trace: bool,
    /// Validate the config and build the instance without running.
    #[arg(long)]
    dry_run: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if args.trace {
        cfg.emit_trace = true;
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from(&cfg.output_path));

    if args.dry_run {
        return match Instance::build(&cfg) {
            Ok(inst) => {
                println!(
                    "ok: {} graph, n = {}, diameter = {}, {} problem, {} scheme(s) x {} run(s), {} steps",
                    cfg.graph.graph_kind().name(),
                    inst.graph.n(),
                    inst.graph.diameter(),
                    inst.problem.name(),
                    cfg.scheme.len(),
                    cfg.runs,
                    cfg.steps
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        };
    }

    match run_experiment(&cfg, &out, args.jobs) {
        Ok(outcome) => {
            for (scheme, err) in &outcome.final_errors {
                match err {
                    Some(e) => println!("{scheme}: final mean error {e:.6e}"),
                    None => println!("{scheme}: done"),
                }
            }
            println!("wrote {} files to {}", outcome.files.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_divergence() {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

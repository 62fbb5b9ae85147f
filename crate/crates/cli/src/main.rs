use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rsrl_core::bench::{
    self, explore, learn_from_trajectory, run, synthesize, write_json, write_outputs,
    write_trajectory, Experiment, ExperimentConfig, GainReport, Stage, StageError,
};
use rsrl_core::learner::LsMode;
use rsrl_core::sim::Trajectory;
use rsrl_core::{Error, StructurePattern};
use serde_json::json;

#[derive(Parser)]
#[command(name = "rsrl", version, about = "Structured robust LQR: model-based synthesis and learning from data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PaperFaithful,
    Reduced,
}

impl From<ModeArg> for LsMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::PaperFaithful => LsMode::PaperFaithful,
            ModeArg::Reduced => LsMode::Reduced,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the learner's least-squares mode
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Model-based structured synthesis only
    Synth(Common),
    /// Learn a structured gain from a simulated exploration run or a recorded CSV trajectory
    Learn {
        #[command(flatten)]
        common: Common,
        /// Recorded trajectory in the simulator's CSV format
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Simulate the exploration run and write it as CSV
    Simulate(Common),
    /// Suboptimality certificate for the structured solution
    Bound(Common),
    /// Full pipeline for one or more configs
    Run {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Configs to run concurrently
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Full pipeline on the bundled six-agent benchmark
    BenchPaper {
        #[arg(long, default_value = "out/paper-6agent")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
}

/// Failure with the exit code for its class.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        let code = match (&e.stage, &e.source) {
            (_, Error::Io(_)) | (Stage::Output, _) => 9,
            (Stage::Config, _) => 3,
            (Stage::Validation, _) => 4,
            (Stage::Synthesis, _) => 5,
            (Stage::Exploration, _) => 6,
            (Stage::Data, _) | (Stage::Learning, _) => 7,
            (Stage::Evaluation, _) => 8,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 3, error }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load(path: &Path, seed: Option<u64>, mode: Option<ModeArg>) -> CliResult<Experiment> {
    let mut config = ExperimentConfig::load(path)
        .map_err(|e| StageError { stage: Stage::Config, source: e })?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(m) = mode {
        config.learner.mode = m.into();
    }
    Ok(Experiment::from_config(&config).map_err(|e| StageError { stage: Stage::Config, source: e })?)
}

fn output<T>(r: rsrl_core::Result<T>) -> CliResult<T> {
    Ok(r.map_err(|e| StageError { stage: Stage::Output, source: e })?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    output(std::fs::create_dir_all(dir).map_err(Error::from))
}

fn full_pipeline(exp: &Experiment, out: &Path) -> CliResult<()> {
    let result = run(exp)?;
    write_outputs(&result, out)?;
    let r = &result.report;
    println!(
        "{}: model iterations {}, learned iterations {}, gain error {:.3e}, cost gap {:.2}%, rank {}/{} -> {}",
        r.name,
        r.model_based.iterations,
        r.learned.result.iterations,
        r.learned.gain_relative_error,
        100.0 * r.costs.relative_gap,
        r.learned.rank.observed,
        r.learned.rank.required,
        out.display()
    );
    Ok(())
}

fn exec(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(c) => {
            let exp = load(&c.config, c.seed, c.mode)?;
            let s = synthesize(&exp)?;
            let sys = &exp.problem.system;
            let full = StructurePattern::full(exp.problem.inputs(), exp.problem.states());
            let eval = |r| GainReport::from_result(r, sys, &full);
            let report = json!({
                "schema_version": bench::SCHEMA_VERSION,
                "validation": s.validation,
                "initial_gain": bench::rows_of(&s.initial_gain),
                "model_based": GainReport::from_result(&s.structured, sys, &exp.problem.pattern)
                    .map_err(|e| StageError { stage: Stage::Evaluation, source: e })?,
                "dense_optimal": eval(&s.dense_optimal).map_err(|e| StageError { stage: Stage::Evaluation, source: e })?,
                "dense_shifted": eval(&s.dense_shifted).map_err(|e| StageError { stage: Stage::Evaluation, source: e })?,
            });
            create_dir(&c.out)?;
            output(write_json(&c.out.join("synth.json"), &report))?;
            println!(
                "structured gain after {} iterations, residual {:.3e} -> {}",
                s.structured.iterations,
                s.structured.residual,
                c.out.display()
            );
        }
        Command::Learn { common: c, trajectory } => {
            let exp = load(&c.config, c.seed, c.mode)?;
            let k0 = exp
                .initial_gain()
                .map_err(|e| StageError { stage: Stage::Synthesis, source: e })?;
            let traj = match trajectory {
                Some(path) => {
                    warn!("recorded trajectories carry no running integrals; using nodewise trapezoid quadrature");
                    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                    Trajectory::read_csv(BufReader::new(file))
                        .map_err(|e| StageError { stage: Stage::Data, source: e })?
                }
                None => explore(&exp, &k0).map_err(|e| StageError { stage: Stage::Exploration, source: e })?,
            };
            let out = learn_from_trajectory(&exp, &traj, &k0)?;
            let res = &out.learned.result;
            let report = json!({
                "schema_version": bench::SCHEMA_VERSION,
                "mode": exp.learner.mode,
                "samples": out.data.rows(),
                "window": out.data.window,
                "rank": out.rank,
                "p": bench::rows_of(&res.p),
                "k": bench::rows_of(&res.k),
                "l": bench::rows_of(&res.l),
                "iterations": res.iterations,
                "ls_residual": res.residual,
                "pattern_exact": bench::pattern_exact(&res.k, &exp.problem.pattern),
                "warnings": res.warnings,
                "diagnostics": out.learned.diagnostics,
            });
            create_dir(&c.out)?;
            output(write_json(&c.out.join("learn.json"), &report))?;
            let history = File::create(c.out.join("history.csv")).map_err(Error::from);
            output(history.and_then(|f| bench::write_history(f, &[], &out.learned.diagnostics)))?;
            println!(
                "learned gain after {} iterations (rank {}/{}) -> {}",
                res.iterations,
                out.rank.observed,
                out.rank.required,
                c.out.display()
            );
        }
        Command::Simulate(c) => {
            let exp = load(&c.config, c.seed, c.mode)?;
            let k0 = exp
                .initial_gain()
                .map_err(|e| StageError { stage: Stage::Synthesis, source: e })?;
            let traj = explore(&exp, &k0).map_err(|e| StageError { stage: Stage::Exploration, source: e })?;
            create_dir(&c.out)?;
            output(write_trajectory(&c.out.join("trajectory.csv"), &traj))?;
            println!("{} samples -> {}", traj.len(), c.out.join("trajectory.csv").display());
        }
        Command::Bound(c) => {
            let exp = load(&c.config, c.seed, c.mode)?;
            let s = synthesize(&exp)?;
            let report = bench::certificate(&exp, &s)
                .map_err(|e| StageError { stage: Stage::Evaluation, source: e })?;
            create_dir(&c.out)?;
            output(write_json(&c.out.join("bound.json"), &report))?;
            println!(
                "bound {:.6}, measured gap {:.6}, applicable: {}",
                report.bound,
                report.measured_gap.unwrap_or(f64::NAN),
                report.applicable
            );
        }
        Command::Run {
            configs,
            out,
            seed,
            mode,
            jobs,
        } => {
            let jobs = jobs.max(1);
            let multiple = configs.len() > 1;
            let dir_for = |i: usize, path: &Path| {
                if multiple {
                    let stem = path.file_stem().map_or_else(|| format!("config-{i}"), |s| s.to_string_lossy().into_owned());
                    out.join(format!("{i:02}-{stem}"))
                } else {
                    out.clone()
                }
            };
            let mut failures = Vec::new();
            for chunk in configs.iter().enumerate().collect::<Vec<_>>().chunks(jobs) {
                let results: Vec<(PathBuf, CliResult<()>)> = std::thread::scope(|scope| {
                    let handles: Vec<_> = chunk
                        .iter()
                        .map(|&(i, path)| {
                            let dir = dir_for(i, path);
                            scope.spawn(move || {
                                let r = load(path, seed, mode).and_then(|exp| full_pipeline(&exp, &dir));
                                (path.clone(), r)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("experiment thread panicked"))
                        .collect()
                });
                for (path, r) in results {
                    if let Err(f) = r {
                        eprintln!("{}: {:#}", path.display(), f.error);
                        failures.push(f);
                    }
                }
            }
            if let Some(first) = failures.into_iter().next() {
                return Err(first);
            }
        }
        Command::BenchPaper { out, seed, mode } => {
            let mut config = bench::paper_6agent_config();
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(m) = mode {
                config.learner.mode = m.into();
            }
            let exp = Experiment::from_config(&config)
                .map_err(|e| StageError { stage: Stage::Config, source: e })?;
            info!("running the bundled six-agent benchmark");
            full_pipeline(&exp, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RSRL_LOG", "warn")).init();
    let cli = Cli::parse();
    match exec(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

//! `marble-qwi`: generate instances, solve exact indices, learn indices from
//! the simulator, evaluate policies, or run the whole pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use marble::averaging::average_arm;
use marble::harness::{
    self, compute_oracle, generate_default_instance, read_index_table, run_experiment,
    write_atomic, write_csv, ExperimentConfig, HarnessError,
};
use marble::metrics::{IndexRow, QnormRow, RewardRow};
use marble::model::{stationary_distribution, validate_instance, MarbleInstance};
use marble::policy::{evaluate_policy, IndexPolicy};
use marble::qwi::{run as run_learner, OracleReference, RunConfig, StepSchedule};

#[derive(Parser)]
#[command(
    name = "marble-qwi",
    about = "Restless-bandit index learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the default recommender instance and write it as JSON.
    Generate(GenerateArgs),
    /// Compute exact Whittle indices and indexability reports for an instance.
    Oracle(OracleArgs),
    /// Learn indices with the synchronous two-timescale learner.
    Learn(LearnArgs),
    /// Evaluate a policy on the true system over one or more seeds.
    Evaluate(EvaluateArgs),
    /// Full pipeline: instance, oracle, learn, evaluate, summary.
    Run(RunArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw per-arm perturbations instead of sharing one arm.
    #[arg(long)]
    heterogeneous: bool,
    #[arg(long, default_value = "instance.json")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = harness::DEFAULT_TOL_LAMBDA)]
    tol_lambda: f64,
    #[arg(long, default_value_t = harness::DEFAULT_GRID_POINTS)]
    grid_points: usize,
    /// Directory for oracle_indices.csv and indexability.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also dump one arm's averaged dynamics as a single-mode arm JSON.
    #[arg(long)]
    dump_averaged: Option<PathBuf>,
    /// Arm to dump when --dump-averaged is given.
    #[arg(long, default_value_t = 0)]
    arm: usize,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = harness::DEFAULT_ITERATIONS)]
    iterations: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = harness::DEFAULT_SNAPSHOT_EVERY)]
    snapshot_every: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = harness::DEFAULT_TOL_LAMBDA)]
    tol_lambda: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    instance: PathBuf,
    /// qwi | oracle | random
    #[arg(long)]
    policy: String,
    /// Index CSV for the qwi policy (indices.csv or oracle_indices.csv schema).
    #[arg(long)]
    indices: Option<PathBuf>,
    #[arg(long, default_value_t = harness::DEFAULT_HORIZON)]
    horizon: u64,
    /// Number of evaluation seeds; seed `i` of `n` is `--seed + i`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value = "rewards.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = harness::DEFAULT_TOL_LAMBDA)]
    tol_lambda: f64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config's learning seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let payload = json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Model(#[from] marble::model::ModelError),
    #[error(transparent)]
    Averaging(#[from] marble::averaging::AveragingError),
    #[error(transparent)]
    Qwi(#[from] marble::qwi::QwiError),
    #[error(transparent)]
    Policy(#[from] marble::policy::PolicyError),
    #[error("{0}")]
    Usage(String),
}

impl AppError {
    fn kind(&self) -> &'static str {
        match self {
            AppError::Harness(_) => "harness",
            AppError::Model(_) => "model",
            AppError::Averaging(_) => "averaging",
            AppError::Qwi(_) => "qwi",
            AppError::Policy(_) => "policy",
            AppError::Usage(_) => "usage",
        }
    }
}

fn load_validated(path: &std::path::Path) -> Result<MarbleInstance, AppError> {
    let instance = MarbleInstance::from_file(path)?;
    let report = validate_instance(&instance);
    if !report.is_valid() {
        return Err(AppError::Usage(format!(
            "instance {} is invalid:\n{report}",
            path.display()
        )));
    }
    Ok(instance)
}

fn dispatch(command: Command) -> Result<(), AppError> {
    match command {
        Command::Generate(args) => {
            let instance = generate_default_instance(args.seed, args.heterogeneous)?;
            write_atomic(&args.out, instance.to_json().as_bytes())?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Oracle(args) => {
            let instance = load_validated(&args.instance)?;
            std::fs::create_dir_all(&args.out_dir).map_err(|source| HarnessError::Io {
                path: args.out_dir.display().to_string(),
                source,
            })?;
            let oracle = compute_oracle(&instance, args.tol_lambda, args.grid_points)?;
            write_csv(&args.out_dir.join("oracle_indices.csv"), &oracle.rows)?;
            let report_json =
                serde_json::to_string_pretty(&oracle.reports).map_err(HarnessError::from)?;
            write_atomic(
                &args.out_dir.join("indexability.json"),
                report_json.as_bytes(),
            )?;
            {
                // Tolerate a closed pipe (e.g. `| head`) on this per-arm report.
                use std::io::Write as _;
                let stdout = std::io::stdout();
                let mut out = stdout.lock();
                for (arm, report) in oracle.reports.iter().enumerate() {
                    if writeln!(out, "arm {arm}: {}", report.summary()).is_err() {
                        break;
                    }
                }
            }
            if let Some(path) = args.dump_averaged {
                if args.arm >= instance.num_arms() {
                    return Err(AppError::Usage(format!(
                        "--arm {} out of range for {} arms",
                        args.arm,
                        instance.num_arms()
                    )));
                }
                let mu = stationary_distribution(&instance.chain)?;
                let averaged = average_arm(&instance.arms[args.arm], &mu, instance.discount)?;
                let arm_json = serde_json::to_string_pretty(&averaged.to_single_mode_arm())
                    .map_err(HarnessError::from)?;
                write_atomic(&path, arm_json.as_bytes())?;
                println!("wrote {}", path.display());
            }
            println!(
                "wrote {} and {}",
                args.out_dir.join("oracle_indices.csv").display(),
                args.out_dir.join("indexability.json").display()
            );
            Ok(())
        }
        Command::Learn(args) => {
            let instance = load_validated(&args.instance)?;
            std::fs::create_dir_all(&args.out).map_err(|source| HarnessError::Io {
                path: args.out.display().to_string(),
                source,
            })?;
            let oracle = OracleReference::compute(&instance, args.tol_lambda)?;
            let config = RunConfig {
                iterations: args.iterations,
                seed: args.seed,
                schedule: StepSchedule::Standard,
                snapshot_every: args.snapshot_every,
                tie_arm_streams: false,
                initial_indices: None,
            };
            let (_, metrics) = run_learner(&instance, &config, Some(&oracle))?;
            let mut index_rows = Vec::new();
            for snap in &metrics.index_snapshots {
                for (arm, per_state) in snap.indices.iter().enumerate() {
                    for (state, &lambda) in per_state.iter().enumerate() {
                        index_rows.push(IndexRow {
                            k: snap.k,
                            arm,
                            state,
                            lambda,
                        });
                    }
                }
            }
            write_csv(&args.out.join("indices.csv"), &index_rows)?;
            let qnorm: Vec<QnormRow> = metrics
                .q_dist
                .iter()
                .map(|&(k, sup_dist)| QnormRow { k, sup_dist })
                .collect();
            write_csv(&args.out.join("qnorm.csv"), &qnorm)?;
            println!(
                "wrote {} and {}",
                args.out.join("indices.csv").display(),
                args.out.join("qnorm.csv").display()
            );
            Ok(())
        }
        Command::Evaluate(args) => {
            let instance = load_validated(&args.instance)?;
            let states_per_arm: Vec<usize> = instance.arms.iter().map(|a| a.num_states()).collect();
            let policy = match args.policy.as_str() {
                "qwi" => {
                    let path = args
                        .indices
                        .as_ref()
                        .ok_or_else(|| AppError::Usage("--policy qwi requires --indices".into()))?;
                    IndexPolicy {
                        index_table: read_index_table(path)?,
                        epsilon: args.epsilon.unwrap_or(harness::DEFAULT_EPSILON),
                        budget: instance.budget,
                    }
                }
                "oracle" => {
                    let oracle = OracleReference::compute(&instance, args.tol_lambda)?;
                    IndexPolicy {
                        index_table: oracle.indices,
                        epsilon: args.epsilon.unwrap_or(0.0),
                        budget: instance.budget,
                    }
                }
                "random" => IndexPolicy::uniform_random(
                    instance.num_arms(),
                    &states_per_arm,
                    instance.budget,
                ),
                other => {
                    return Err(AppError::Usage(format!(
                        "unknown policy '{other}' (expected qwi, oracle, or random)"
                    )))
                }
            };
            let mut rows: Vec<RewardRow> = Vec::new();
            for offset in 0..args.seeds {
                let metrics =
                    evaluate_policy(&instance, &policy, args.horizon, args.seed + offset)?;
                rows.extend(metrics.rewards);
            }
            write_csv(&args.out, &rows)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Run(args) => {
            let mut config = ExperimentConfig::from_file(&args.config)?;
            if let Some(seed) = args.seed {
                config.learn_seed = seed;
            }
            let summary = run_experiment(&config)?;
            println!("artifacts in {}", config.out_dir.display());
            println!("final index error (max): {}", summary.final_index_error_max);
            for (policy, reward) in &summary.mean_reward_last_10pct {
                println!("mean reward, last 10% ({policy}): {reward}");
            }
            Ok(())
        }
    }
}

//! Experiment orchestration: default instance generation, the full
//! oracle-learn-evaluate pipeline, and plot-ready CSV/JSON artifacts.
//!
//! The default instance is a push-notification recommender shape: 100 users
//! with a four-level engagement state, a two-mode hidden environment, and a
//! budget of 10 activations per step. Activation shifts transition mass toward
//! higher engagement (at a small immediate annoyance cost), passivity decays
//! it, rewards grow with engagement, and the second mode depresses both
//! rewards and the effectiveness of activation.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::averaging::{average_arm, AveragingError};
use crate::metrics::{IndexRow, OracleIndexRow, PolicyRewardRow, QnormRow, RewardRow};
use crate::model::{
    stationary_distribution, validate_instance, ArmSpec, LatentChain, MarbleInstance, ModelError,
    ValidationReport,
};
use crate::oracle::{default_grid, verify_mai, IndexabilityReport, OracleError};
use crate::policy::{evaluate_policy, IndexPolicy, PolicyError};
use crate::qwi::{run, OracleReference, QwiError, RunConfig, StepSchedule};

pub const DEFAULT_NUM_ARMS: usize = 100;
pub const DEFAULT_BUDGET: usize = 10;
pub const DEFAULT_DISCOUNT: f64 = 0.8;
pub const DEFAULT_ITERATIONS: u64 = 500_000;
pub const DEFAULT_HORIZON: u64 = 10_000;
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 1000;
pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_TOL_LAMBDA: f64 = 1e-6;
pub const DEFAULT_GRID_POINTS: usize = 101;
const GENERATION_ATTEMPTS: u32 = 100;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("generated instance failed validation:\n{report}")]
    InvalidGenerated { report: ValidationReport },
    #[error("could not generate an indexable instance in {attempts} attempts")]
    GenerationFailed { attempts: u32 },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Averaging(#[from] AveragingError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Qwi(#[from] QwiError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

// ---------------------------------------------------------------------------
// Default instance
// ---------------------------------------------------------------------------

/// The hidden two-mode environment: a sticky receptive mode and a shorter
/// fatigued mode, stationary weights (2/3, 1/3).
pub fn default_chain() -> LatentChain {
    LatentChain::new(vec![vec![0.95, 0.05], vec![0.10, 0.90]])
}

/// Baseline engagement arm shared by every user before heterogeneity jitter.
pub fn default_arm_spec() -> ArmSpec {
    // Mode 0 (receptive): passivity drifts engagement down, activation up.
    let passive_0 = vec![
        vec![0.88, 0.12, 0.00, 0.00],
        vec![0.30, 0.58, 0.12, 0.00],
        vec![0.00, 0.30, 0.58, 0.12],
        vec![0.00, 0.00, 0.32, 0.68],
    ];
    let active_0 = vec![
        vec![0.35, 0.55, 0.10, 0.00],
        vec![0.05, 0.35, 0.55, 0.05],
        vec![0.00, 0.12, 0.58, 0.30],
        vec![0.00, 0.00, 0.18, 0.82],
    ];
    // Mode 1 (fatigued): faster decay, weaker pushes.
    let passive_1 = vec![
        vec![0.94, 0.06, 0.00, 0.00],
        vec![0.45, 0.49, 0.06, 0.00],
        vec![0.00, 0.45, 0.49, 0.06],
        vec![0.00, 0.00, 0.46, 0.54],
    ];
    let active_1 = vec![
        vec![0.52, 0.44, 0.04, 0.00],
        vec![0.12, 0.46, 0.40, 0.02],
        vec![0.00, 0.22, 0.56, 0.22],
        vec![0.00, 0.00, 0.32, 0.68],
    ];
    // Engagement reward per state; an active push costs 0.04 immediately and
    // mode 1 pays out 65% of mode 0.
    let levels = [0.20, 0.45, 0.70, 0.95];
    let annoyance = 0.04;
    let fatigue_scale = 0.65;
    let rewards_0: Vec<Vec<f64>> = levels.iter().map(|&v| vec![v, v - annoyance]).collect();
    let rewards_1: Vec<Vec<f64>> = rewards_0
        .iter()
        .map(|row| row.iter().map(|r| r * fatigue_scale).collect())
        .collect();
    ArmSpec {
        kernels: vec![vec![passive_0, active_0], vec![passive_1, active_1]],
        rewards: vec![rewards_0, rewards_1],
    }
}

fn jitter_arm(base: &ArmSpec, rng: &mut ChaCha8Rng) -> ArmSpec {
    const KERNEL_JITTER: f64 = 0.2;
    const REWARD_JITTER: f64 = 0.15;
    let mut arm = base.clone();
    for per_action in &mut arm.kernels {
        for kernel in per_action {
            for row in kernel {
                for p in row.iter_mut() {
                    *p = (*p * (1.0 + KERNEL_JITTER * rng.gen_range(-1.0..1.0))).max(0.0);
                }
                let total: f64 = row.iter().sum();
                for p in row.iter_mut() {
                    *p /= total;
                }
            }
        }
    }
    for table in &mut arm.rewards {
        for row in table {
            for r in row.iter_mut() {
                *r *= 1.0 + REWARD_JITTER * rng.gen_range(-1.0..1.0);
            }
        }
    }
    arm
}

fn arm_is_indexable(arm: &ArmSpec, mu: &[f64], discount: f64) -> Result<bool, HarnessError> {
    let mdp = average_arm(arm, mu, discount)?;
    let grid = default_grid(&mdp, DEFAULT_GRID_POINTS);
    Ok(verify_mai(&mdp, &grid, 1e-9)?.is_indexable)
}

/// Build the default 100-arm instance. Homogeneous instances share one arm
/// allocation; heterogeneous ones draw seeded per-arm perturbations,
/// re-drawing any arm whose averaged dynamics fail the indexability check.
pub fn generate_default_instance(
    seed: u64,
    heterogeneous: bool,
) -> Result<MarbleInstance, HarnessError> {
    let chain = default_chain();
    let mu = stationary_distribution(&chain)?;
    let base = default_arm_spec();

    let arms: Vec<Arc<ArmSpec>> = if heterogeneous {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arms = Vec::with_capacity(DEFAULT_NUM_ARMS);
        for _ in 0..DEFAULT_NUM_ARMS {
            let mut accepted = None;
            for _ in 0..GENERATION_ATTEMPTS {
                let candidate = jitter_arm(&base, &mut rng);
                if arm_is_indexable(&candidate, &mu, DEFAULT_DISCOUNT)? {
                    accepted = Some(candidate);
                    break;
                }
            }
            match accepted {
                Some(arm) => arms.push(Arc::new(arm)),
                None => {
                    return Err(HarnessError::GenerationFailed {
                        attempts: GENERATION_ATTEMPTS,
                    })
                }
            }
        }
        arms
    } else {
        if !arm_is_indexable(&base, &mu, DEFAULT_DISCOUNT)? {
            return Err(HarnessError::GenerationFailed { attempts: 1 });
        }
        let shared = Arc::new(base);
        (0..DEFAULT_NUM_ARMS).map(|_| Arc::clone(&shared)).collect()
    };

    let instance = MarbleInstance {
        arms,
        budget: DEFAULT_BUDGET,
        chain,
        discount: DEFAULT_DISCOUNT,
    };
    let report = validate_instance(&instance);
    if !report.is_valid() {
        return Err(HarnessError::InvalidGenerated { report });
    }
    Ok(instance)
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

/// Where the instance comes from: a file on disk or the seeded generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    Path(PathBuf),
    Generate { seed: u64, heterogeneous: bool },
}

fn default_iterations() -> u64 {
    DEFAULT_ITERATIONS
}
fn default_horizon() -> u64 {
    DEFAULT_HORIZON
}
fn default_eval_seeds() -> u64 {
    20
}
fn default_snapshot_every() -> u64 {
    DEFAULT_SNAPSHOT_EVERY
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_tol_lambda() -> f64 {
    DEFAULT_TOL_LAMBDA
}
fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    /// Number of evaluation seeds; evaluation seed `i` is `eval_seed_base + i`.
    #[serde(default = "default_eval_seeds")]
    pub eval_seeds: u64,
    #[serde(default)]
    pub eval_seed_base: u64,
    #[serde(default)]
    pub learn_seed: u64,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_tol_lambda")]
    pub tol_lambda: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut problems = Vec::new();
        if self.iterations == 0 {
            problems.push("iterations must be positive");
        }
        if self.horizon == 0 {
            problems.push("horizon must be positive");
        }
        if self.eval_seeds == 0 {
            problems.push("eval_seeds must be positive");
        }
        if self.snapshot_every == 0 {
            problems.push("snapshot_every must be positive");
        }
        if self.tol_lambda <= 0.0 || self.tol_lambda.is_nan() {
            problems.push("tol_lambda must be positive");
        }
        if self.grid_points < 2 {
            problems.push("grid_points must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            problems.push("epsilon must lie in [0, 1]");
        }
        if let InstanceSource::Path(path) = &self.instance {
            if !path.exists() {
                return Err(HarnessError::Config(format!(
                    "instance file {} does not exist",
                    path.display()
                )));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(problems.join("; ")))
        }
    }

    pub fn load_instance(&self) -> Result<MarbleInstance, HarnessError> {
        match &self.instance {
            InstanceSource::Path(path) => Ok(MarbleInstance::from_file(path)?),
            InstanceSource::Generate {
                seed,
                heterogeneous,
            } => generate_default_instance(*seed, *heterogeneous),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

/// Write via a temp file in the same directory plus rename, so readers never
/// observe partial contents.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let io_err = |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp).map_err(io_err)?;
        file.write_all(bytes).map_err(io_err)?;
        file.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|source| HarnessError::Csv {
            path: path.display().to_string(),
            source,
        })?;
    }
    let bytes = writer.into_inner().expect("csv buffer flush cannot fail");
    write_atomic(path, &bytes)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| HarnessError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, csv::Error>>()
        .map_err(|source| HarnessError::Csv {
            path: path.display().to_string(),
            source,
        })
}

/// Final index table from an `indices.csv`-shaped file (rows at the largest
/// `k`), also accepting the `oracle_indices.csv` schema.
pub fn read_index_table(path: &Path) -> Result<Vec<Vec<f64>>, HarnessError> {
    let header = {
        let mut reader = csv::Reader::from_path(path).map_err(|source| HarnessError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        reader
            .headers()
            .map_err(|source| HarnessError::Csv {
                path: path.display().to_string(),
                source,
            })?
            .clone()
    };
    let triples: Vec<(usize, usize, f64)> = if header.iter().any(|h| h == "k") {
        let rows: Vec<IndexRow> = read_csv(path)?;
        let last_k = rows.iter().map(|r| r.k).max().unwrap_or(0);
        rows.iter()
            .filter(|r| r.k == last_k)
            .map(|r| (r.arm, r.state, r.lambda))
            .collect()
    } else {
        let rows: Vec<OracleIndexRow> = read_csv(path)?;
        rows.iter()
            .map(|r| (r.arm, r.state, r.whittle_index))
            .collect()
    };
    if triples.is_empty() {
        return Err(HarnessError::Config(format!(
            "{} contains no index rows",
            path.display()
        )));
    }
    let num_arms = triples.iter().map(|t| t.0).max().unwrap() + 1;
    let mut table = vec![Vec::new(); num_arms];
    for (arm, state, value) in triples {
        if table[arm].len() <= state {
            table[arm].resize(state + 1, 0.0);
        }
        table[arm][state] = value;
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Per-arm indexability verdicts plus exact index table.
pub struct OracleArtifacts {
    pub rows: Vec<OracleIndexRow>,
    pub reports: Vec<IndexabilityReport>,
    pub reference: OracleReference,
}

/// Solve every arm exactly: indices by bisection plus grid-certified
/// indexability reports (one per arm).
pub fn compute_oracle(
    instance: &MarbleInstance,
    tol_lambda: f64,
    grid_points: usize,
) -> Result<OracleArtifacts, HarnessError> {
    let mu = stationary_distribution(&instance.chain)?;
    let reference = OracleReference::compute(instance, tol_lambda)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (arm_idx, arm) in instance.arms.iter().enumerate() {
        let mdp = average_arm(arm, &mu, instance.discount)?;
        let grid = default_grid(&mdp, grid_points);
        reports.push(verify_mai(&mdp, &grid, 1e-9)?);
        for (state, &lambda) in reference.indices[arm_idx].iter().enumerate() {
            rows.push(OracleIndexRow {
                arm: arm_idx,
                state,
                whittle_index: lambda,
            });
        }
    }
    Ok(OracleArtifacts {
        rows,
        reports,
        reference,
    })
}

/// Summary block persisted as `summary.json`; every number is recomputed from
/// the CSVs on disk, never from in-memory state.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentSummary {
    pub final_index_error_max: f64,
    pub mean_reward_last_10pct: BTreeMap<String, f64>,
}

/// Recompute the summary from the artifact files.
pub fn summarize_artifacts(dir: &Path) -> Result<ExperimentSummary, HarnessError> {
    let learned = read_index_table(&dir.join("indices.csv"))?;
    let exact = read_index_table(&dir.join("oracle_indices.csv"))?;
    let mut worst: f64 = 0.0;
    for (learned_arm, exact_arm) in learned.iter().zip(&exact) {
        for (l, e) in learned_arm.iter().zip(exact_arm) {
            worst = worst.max((l - e).abs());
        }
    }

    let rows: Vec<PolicyRewardRow> = read_csv(&dir.join("rewards.csv"))?;
    let horizon = rows.iter().map(|r| r.step).max().map_or(0, |s| s + 1);
    // Last 10% of steps, but never an empty window.
    let cutoff = horizon.saturating_sub((horizon / 10).max(1));
    let mut totals: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.step >= cutoff) {
        let entry = totals.entry(row.policy.clone()).or_insert((0.0, 0));
        entry.0 += row.mean_reward;
        entry.1 += 1;
    }
    let mean_reward_last_10pct = totals
        .into_iter()
        .map(|(policy, (sum, count))| (policy, sum / count as f64))
        .collect();
    Ok(ExperimentSummary {
        final_index_error_max: worst,
        mean_reward_last_10pct,
    })
}

/// End-to-end pipeline: persist the instance, solve the oracle, learn, then
/// evaluate the learned, oracle, and random policies. Artifacts land in
/// `config.out_dir`:
/// `instance.json`, `oracle_indices.csv`, `indices.csv`, `qnorm.csv`,
/// `rewards.csv`, `summary.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    config.validate()?;
    let dir = &config.out_dir;
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.display().to_string(),
        source,
    })?;

    let instance = config.load_instance()?;
    let report = validate_instance(&instance);
    if !report.is_valid() {
        return Err(HarnessError::InvalidGenerated { report });
    }
    write_atomic(&dir.join("instance.json"), instance.to_json().as_bytes())?;

    let oracle = compute_oracle(&instance, config.tol_lambda, config.grid_points)?;
    write_csv(&dir.join("oracle_indices.csv"), &oracle.rows)?;

    let run_config = RunConfig {
        iterations: config.iterations,
        seed: config.learn_seed,
        schedule: StepSchedule::Standard,
        snapshot_every: config.snapshot_every,
        tie_arm_streams: false,
        initial_indices: None,
    };
    let (state, metrics) = run(&instance, &run_config, Some(&oracle.reference))?;

    let mut index_rows = Vec::new();
    for snap in &metrics.index_snapshots {
        for (arm, per_state) in snap.indices.iter().enumerate() {
            for (state_idx, &lambda) in per_state.iter().enumerate() {
                index_rows.push(IndexRow {
                    k: snap.k,
                    arm,
                    state: state_idx,
                    lambda,
                });
            }
        }
    }
    write_csv(&dir.join("indices.csv"), &index_rows)?;
    let qnorm_rows: Vec<QnormRow> = metrics
        .q_dist
        .iter()
        .map(|&(k, sup_dist)| QnormRow { k, sup_dist })
        .collect();
    write_csv(&dir.join("qnorm.csv"), &qnorm_rows)?;

    let states_per_arm: Vec<usize> = instance.arms.iter().map(|a| a.num_states()).collect();
    let policies: Vec<(&str, IndexPolicy)> = vec![
        (
            "qwi",
            IndexPolicy {
                index_table: state.indices().to_vec(),
                epsilon: config.epsilon,
                budget: instance.budget,
            },
        ),
        (
            "oracle",
            IndexPolicy::greedy(oracle.reference.indices.clone(), instance.budget),
        ),
        (
            "random",
            IndexPolicy::uniform_random(instance.num_arms(), &states_per_arm, instance.budget),
        ),
    ];
    let mut reward_rows: Vec<PolicyRewardRow> = Vec::new();
    for (name, policy) in &policies {
        for offset in 0..config.eval_seeds {
            let seed = config.eval_seed_base + offset;
            let eval = evaluate_policy(&instance, policy, config.horizon, seed)?;
            reward_rows.extend(eval.rewards.iter().map(|row: &RewardRow| PolicyRewardRow {
                policy: (*name).to_string(),
                seed: row.seed,
                step: row.step,
                mean_reward: row.mean_reward,
            }));
        }
    }
    write_csv(&dir.join("rewards.csv"), &reward_rows)?;

    let summary = summarize_artifacts(dir)?;
    write_atomic(
        &dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    Ok(summary)
}

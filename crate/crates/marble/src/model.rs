//! Problem data: latent environment chain, per-arm dynamics, and whole-instance
//! validation.
//!
//! An instance couples `N` two-action arms to one hidden environment chain.
//! Every arm carries one transition kernel and one reward table per environment
//! mode; the mode is shared by all arms and never observed. Types here are plain
//! data so that candidate instances can be loaded, inspected, and validated
//! before anything downstream consumes them: [`validate_instance`] reports every
//! violated invariant instead of failing on the first.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Passive action index.
pub const PASSIVE: usize = 0;
/// Active action index.
pub const ACTIVE: usize = 1;
/// Number of actions per arm; arms are binary by construction.
pub const NUM_ACTIONS: usize = 2;

/// Row-stochasticity and probability-entry tolerance used by validation.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Residual tolerance for the stationary distribution solve.
pub const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_ITERS: u64 = 1_000_000;

/// Hidden environment chain: `transition[e][e']` is the probability of moving
/// from mode `e` to mode `e'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentChain {
    pub transition: Vec<Vec<f64>>,
}

impl LatentChain {
    pub fn new(transition: Vec<Vec<f64>>) -> Self {
        Self { transition }
    }

    pub fn num_modes(&self) -> usize {
        self.transition.len()
    }

    /// Primitivity check: the chain is irreducible and aperiodic iff some
    /// power of the support pattern is strictly positive, and for stochastic
    /// matrices positivity persists once reached, so checking a single power
    /// `>= |E|^2` decides it.
    pub fn is_ergodic(&self) -> bool {
        let n = self.num_modes();
        if n == 0 || self.transition.iter().any(|row| row.len() != n) {
            return false;
        }
        let mut reach: Vec<Vec<bool>> = self
            .transition
            .iter()
            .map(|row| row.iter().map(|&p| p > 0.0).collect())
            .collect();
        // Square the pattern until the represented power is at least n^2.
        let mut power = 1usize;
        while power < n * n {
            let mut next = vec![vec![false; n]; n];
            for i in 0..n {
                for k in 0..n {
                    if reach[i][k] {
                        for j in 0..n {
                            if reach[k][j] {
                                next[i][j] = true;
                            }
                        }
                    }
                }
            }
            reach = next;
            power *= 2;
        }
        reach.iter().all(|row| row.iter().all(|&b| b))
    }
}

/// One arm's mode-conditional dynamics.
///
/// Axes: `kernels[mode][action][s][s']`, `rewards[mode][s][action]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub kernels: Vec<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
}

impl ArmSpec {
    pub fn num_modes(&self) -> usize {
        self.rewards.len()
    }

    pub fn num_states(&self) -> usize {
        self.rewards.first().map_or(0, |table| table.len())
    }

    /// Largest absolute reward over all modes, states, and actions.
    pub fn r_max(&self) -> f64 {
        self.rewards
            .iter()
            .flatten()
            .flatten()
            .fold(0.0, |acc: f64, &r| acc.max(r.abs()))
    }
}

/// The full problem: arms, activation budget, discount, and the latent chain.
///
/// Homogeneous instances share one [`ArmSpec`] allocation across all arms.
#[derive(Debug, Clone)]
pub struct MarbleInstance {
    pub arms: Vec<Arc<ArmSpec>>,
    pub budget: usize,
    pub chain: LatentChain,
    pub discount: f64,
}

impl MarbleInstance {
    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.arms.windows(2).all(|w| Arc::ptr_eq(&w[0], &w[1]))
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(
        "latent chain is not irreducible and aperiodic; stationary distribution is not unique"
    )]
    NotErgodic,
    #[error("stationary distribution did not reach residual {tol} within {iters} iterations (residual {residual})")]
    StationaryNoConvergence { tol: f64, iters: u64, residual: f64 },
    #[error("instance file must contain exactly one of `arms` or `homogeneous`")]
    AmbiguousArms,
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse instance JSON: {0}")]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// One violated invariant, with enough indices to locate the offending entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Violation {
    DiscountRange {
        discount: f64,
    },
    BudgetRange {
        budget: usize,
        num_arms: usize,
    },
    NoArms,
    ChainShape {
        mode: usize,
        row_len: usize,
        num_modes: usize,
    },
    ChainEmpty,
    ChainEntryRange {
        mode: usize,
        next_mode: usize,
        value: f64,
    },
    ChainRowSum {
        mode: usize,
        sum: f64,
    },
    ChainNotErgodic,
    ArmEmpty {
        arm: usize,
    },
    ArmModeCount {
        arm: usize,
        expected: usize,
        actual: usize,
    },
    ArmActionCount {
        arm: usize,
        mode: usize,
        actual: usize,
    },
    KernelShape {
        arm: usize,
        mode: usize,
        action: usize,
    },
    KernelEntryRange {
        arm: usize,
        mode: usize,
        action: usize,
        state: usize,
        next_state: usize,
        value: f64,
    },
    KernelRowSum {
        arm: usize,
        mode: usize,
        action: usize,
        state: usize,
        sum: f64,
    },
    RewardShape {
        arm: usize,
        mode: usize,
    },
    RewardNotFinite {
        arm: usize,
        mode: usize,
        state: usize,
        action: usize,
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DiscountRange { discount } => {
                write!(f, "discount {discount} outside (0, 1)")
            }
            Violation::BudgetRange { budget, num_arms } => {
                write!(f, "budget {budget} violates 1 <= M < N for N = {num_arms}")
            }
            Violation::NoArms => write!(f, "instance has no arms"),
            Violation::ChainShape {
                mode,
                row_len,
                num_modes,
            } => {
                write!(
                    f,
                    "chain row {mode} has {row_len} entries, expected {num_modes}"
                )
            }
            Violation::ChainEmpty => write!(f, "latent chain has no modes"),
            Violation::ChainEntryRange {
                mode,
                next_mode,
                value,
            } => {
                write!(
                    f,
                    "chain entry ({mode} -> {next_mode}) = {value} outside [0, 1]"
                )
            }
            Violation::ChainRowSum { mode, sum } => {
                write!(f, "chain row {mode} sums to {sum}, not 1")
            }
            Violation::ChainNotErgodic => {
                write!(f, "latent chain is not irreducible and aperiodic")
            }
            Violation::ArmEmpty { arm } => write!(f, "arm {arm} has no states"),
            Violation::ArmModeCount {
                arm,
                expected,
                actual,
            } => {
                write!(f, "arm {arm} covers {actual} modes, chain has {expected}")
            }
            Violation::ArmActionCount { arm, mode, actual } => {
                write!(
                    f,
                    "arm {arm} mode {mode} has {actual} action kernels, expected 2"
                )
            }
            Violation::KernelShape { arm, mode, action } => {
                write!(
                    f,
                    "arm {arm} mode {mode} action {action} kernel is not |S| x |S|"
                )
            }
            Violation::KernelEntryRange {
                arm,
                mode,
                action,
                state,
                next_state,
                value,
            } => {
                write!(
                    f,
                    "arm {arm} mode {mode} action {action} kernel ({state} -> {next_state}) = {value} outside [0, 1]"
                )
            }
            Violation::KernelRowSum {
                arm,
                mode,
                action,
                state,
                sum,
            } => {
                write!(
                    f,
                    "arm {arm} mode {mode} action {action} kernel row {state} sums to {sum}, not 1"
                )
            }
            Violation::RewardShape { arm, mode } => {
                write!(f, "arm {arm} mode {mode} reward table is not |S| x 2")
            }
            Violation::RewardNotFinite {
                arm,
                mode,
                state,
                action,
                value,
            } => {
                write!(
                    f,
                    "arm {arm} mode {mode} reward ({state}, {action}) = {value} is not finite"
                )
            }
        }
    }
}

/// Validation outcome; empty means the instance satisfies every invariant.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Check every invariant of a candidate instance. Violations are data, not
/// failures: arbitrary shapes and values are accepted and reported.
pub fn validate_instance(instance: &MarbleInstance) -> ValidationReport {
    let mut violations = Vec::new();

    if instance.discount <= 0.0 || instance.discount >= 1.0 || instance.discount.is_nan() {
        violations.push(Violation::DiscountRange {
            discount: instance.discount,
        });
    }

    let num_arms = instance.num_arms();
    if num_arms == 0 {
        violations.push(Violation::NoArms);
    } else if !(instance.budget >= 1 && instance.budget < num_arms) {
        violations.push(Violation::BudgetRange {
            budget: instance.budget,
            num_arms,
        });
    }

    let chain = &instance.chain;
    let num_modes = chain.num_modes();
    if num_modes == 0 {
        violations.push(Violation::ChainEmpty);
    }
    let mut chain_shape_ok = num_modes > 0;
    for (mode, row) in chain.transition.iter().enumerate() {
        if row.len() != num_modes {
            violations.push(Violation::ChainShape {
                mode,
                row_len: row.len(),
                num_modes,
            });
            chain_shape_ok = false;
            continue;
        }
        let mut stochastic = true;
        for (next_mode, &value) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                violations.push(Violation::ChainEntryRange {
                    mode,
                    next_mode,
                    value,
                });
                stochastic = false;
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL || sum.is_nan() {
            violations.push(Violation::ChainRowSum { mode, sum });
            stochastic = false;
        }
        chain_shape_ok &= stochastic;
    }
    if chain_shape_ok && !chain.is_ergodic() {
        violations.push(Violation::ChainNotErgodic);
    }

    for (arm_idx, arm) in instance.arms.iter().enumerate() {
        validate_arm(arm, arm_idx, num_modes, &mut violations);
    }

    ValidationReport { violations }
}

fn validate_arm(arm: &ArmSpec, arm_idx: usize, num_modes: usize, out: &mut Vec<Violation>) {
    let num_states = arm.num_states();
    if num_states == 0 {
        out.push(Violation::ArmEmpty { arm: arm_idx });
        return;
    }
    if arm.kernels.len() != num_modes || arm.rewards.len() != num_modes {
        out.push(Violation::ArmModeCount {
            arm: arm_idx,
            expected: num_modes,
            actual: arm.kernels.len().max(arm.rewards.len()),
        });
    }

    for (mode, actions) in arm.kernels.iter().enumerate() {
        if actions.len() != NUM_ACTIONS {
            out.push(Violation::ArmActionCount {
                arm: arm_idx,
                mode,
                actual: actions.len(),
            });
            continue;
        }
        for (action, kernel) in actions.iter().enumerate() {
            if kernel.len() != num_states || kernel.iter().any(|row| row.len() != num_states) {
                out.push(Violation::KernelShape {
                    arm: arm_idx,
                    mode,
                    action,
                });
                continue;
            }
            for (state, row) in kernel.iter().enumerate() {
                let mut stochastic = true;
                for (next_state, &value) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                        out.push(Violation::KernelEntryRange {
                            arm: arm_idx,
                            mode,
                            action,
                            state,
                            next_state,
                            value,
                        });
                        stochastic = false;
                    }
                }
                let sum: f64 = row.iter().sum();
                if stochastic && ((sum - 1.0).abs() > STOCHASTIC_TOL || sum.is_nan()) {
                    out.push(Violation::KernelRowSum {
                        arm: arm_idx,
                        mode,
                        action,
                        state,
                        sum,
                    });
                }
            }
        }
    }

    for (mode, table) in arm.rewards.iter().enumerate() {
        if table.len() != num_states || table.iter().any(|row| row.len() != NUM_ACTIONS) {
            out.push(Violation::RewardShape { arm: arm_idx, mode });
            continue;
        }
        for (state, row) in table.iter().enumerate() {
            for (action, &value) in row.iter().enumerate() {
                if !value.is_finite() {
                    out.push(Violation::RewardNotFinite {
                        arm: arm_idx,
                        mode,
                        state,
                        action,
                        value,
                    });
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Stationary distribution
// ---------------------------------------------------------------------------

/// Stationary distribution of an ergodic chain by power iteration, solved to
/// residual `||mu H - mu||_inf <= 1e-12`.
pub fn stationary_distribution(chain: &LatentChain) -> Result<Vec<f64>, ModelError> {
    if !chain.is_ergodic() {
        return Err(ModelError::NotErgodic);
    }
    let n = chain.num_modes();
    let mut mu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITERS {
        for entry in next.iter_mut() {
            *entry = 0.0;
        }
        for (e, row) in chain.transition.iter().enumerate() {
            for (e_next, &p) in row.iter().enumerate() {
                next[e_next] += mu[e] * p;
            }
        }
        residual = mu
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut mu, &mut next);
        if residual <= STATIONARY_TOL {
            // Renormalize away accumulated drift.
            let total: f64 = mu.iter().sum();
            for entry in mu.iter_mut() {
                *entry /= total;
            }
            return Ok(mu);
        }
    }
    Err(ModelError::StationaryNoConvergence {
        tol: STATIONARY_TOL,
        iters: STATIONARY_MAX_ITERS,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Instance file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ChainFile {
    transition: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct HomogeneousFile {
    count: usize,
    arm: ArmSpec,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    discount: f64,
    budget: usize,
    chain: ChainFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arms: Option<Vec<ArmSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    homogeneous: Option<HomogeneousFile>,
}

impl MarbleInstance {
    /// Parse the instance JSON schema. A `homogeneous: {count, arm}` document
    /// expands to `count` arms sharing one allocation.
    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let file: InstanceFile = serde_json::from_str(json)?;
        let arms = match (file.arms, file.homogeneous) {
            (Some(arms), None) => arms.into_iter().map(Arc::new).collect(),
            (None, Some(h)) => {
                let shared = Arc::new(h.arm);
                (0..h.count).map(|_| Arc::clone(&shared)).collect()
            }
            _ => return Err(ModelError::AmbiguousArms),
        };
        Ok(Self {
            arms,
            budget: file.budget,
            chain: LatentChain::new(file.chain.transition),
            discount: file.discount,
        })
    }

    /// Serialize to the instance JSON schema; instances whose arms all share
    /// one allocation are written with the `homogeneous` shorthand.
    pub fn to_json(&self) -> String {
        let (arms, homogeneous) = if self.num_arms() > 1 && self.is_homogeneous() {
            (
                None,
                Some(HomogeneousFile {
                    count: self.num_arms(),
                    arm: (*self.arms[0]).clone(),
                }),
            )
        } else {
            (
                Some(self.arms.iter().map(|a| (**a).clone()).collect()),
                None,
            )
        };
        let file = InstanceFile {
            discount: self.discount,
            budget: self.budget,
            chain: ChainFile {
                transition: self.chain.transition.clone(),
            },
            arms,
            homogeneous,
        };
        serde_json::to_string_pretty(&file).expect("instance serialization cannot fail")
    }

    pub fn from_file(path: &Path) -> Result<Self, ModelError> {
        let json = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&json)
    }
}

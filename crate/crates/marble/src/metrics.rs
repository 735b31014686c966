//! Run-time series collected by learning runs and policy evaluations, plus the
//! CSV row schemas the harness writes and re-reads.

use serde::{Deserialize, Serialize};

/// Learned index table at one iteration: `indices[arm][state]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSnapshot {
    pub k: u64,
    pub indices: Vec<Vec<f64>>,
}

/// Everything a run records. Producers fill the series they own: learning runs
/// populate the index/Q series, policy evaluations the reward series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub index_snapshots: Vec<IndexSnapshot>,
    /// `max_{arm,z} |lambda_k(z) - lambda*(z)|` per snapshot, when an oracle
    /// reference was supplied.
    pub index_error: Vec<(u64, f64)>,
    /// `max_{arm,z,s,a} |Q_k - Q*|` per snapshot against the oracle fixed
    /// points at the oracle indices.
    pub q_dist: Vec<(u64, f64)>,
    /// Largest absolute Q entry per snapshot.
    pub max_abs_q: Vec<(u64, f64)>,
    /// Largest absolute index estimate per snapshot.
    pub max_abs_index: Vec<(u64, f64)>,
    /// Mean over (arm, z) of |Q(z,1) - Q(z,0)| per snapshot.
    pub ref_gap_mean: Vec<(u64, f64)>,
    /// Per-step mean reward across arms, per evaluation seed.
    pub rewards: Vec<RewardRow>,
}

// CSV row schemas. Field order fixes the column order.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub k: u64,
    pub arm: usize,
    pub state: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QnormRow {
    pub k: u64,
    pub sup_dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub seed: u64,
    pub step: u64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRewardRow {
    pub policy: String,
    pub seed: u64,
    pub step: u64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleIndexRow {
    pub arm: usize,
    pub state: usize,
    pub whittle_index: f64,
}

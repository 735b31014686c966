//! Two-timescale tabular index learner: synchronous Q-updates over every
//! (arm, reference state, state, action) on the fast timescale, subsidy
//! updates at each reference state on the slow one.
//!
//! Each sweep is Jacobi-style: every update within iteration `k` reads the
//! iteration-`k` table, so results do not depend on update order. The subsidy
//! step then reads the freshly written table. One hidden-mode transition per
//! sweep, shared by all arms.

use std::cmp::max;

use thiserror::Error;

use crate::averaging::{average_arm, AveragedArmMdp, AveragingError};
use crate::metrics::{IndexSnapshot, RunMetrics};
use crate::model::{stationary_distribution, MarbleInstance, ModelError, NUM_ACTIONS};
use crate::oracle::{solve_q, whittle_index, OracleError, QTable};
use crate::simulator::SimState;

/// Fast step size: `1 / max(1, ceil(k / 10000))`.
pub fn alpha_default(k: u64) -> f64 {
    1.0 / max(1, k.div_ceil(10_000)) as f64
}

/// Slow step size: `1 / (1 + ceil(k ln k / 10000))` on every 10th iteration,
/// zero otherwise; `k ln k` is taken as 0 for `k < 2`.
pub fn beta_default(k: u64) -> f64 {
    if !k.is_multiple_of(10) {
        return 0.0;
    }
    let klogk = if k < 2 {
        0.0
    } else {
        k as f64 * (k as f64).ln()
    };
    1.0 / (1.0 + (klogk / 10_000.0).ceil())
}

/// Step-size schedule pair. The standard pair diverges in sum, is square
/// summable, and has `beta_k / alpha_k -> 0` along active slow steps, so the
/// index recursion is the slow timescale.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    /// The published defaults: [`alpha_default`] and [`beta_default`].
    Standard,
    /// Standard fast steps with the slow timescale disabled (`beta == 0`);
    /// indices stay at their initial values.
    FrozenIndices,
    /// `alpha_k = (k+1)^{-fast_exponent}`, `beta_k = (k+1)^{-slow_exponent}`.
    PowerLaw {
        fast_exponent: f64,
        slow_exponent: f64,
    },
}

impl StepSchedule {
    pub fn alpha(&self, k: u64) -> f64 {
        match self {
            StepSchedule::Standard | StepSchedule::FrozenIndices => alpha_default(k),
            StepSchedule::PowerLaw { fast_exponent, .. } => ((k + 1) as f64).powf(-fast_exponent),
        }
    }

    pub fn beta(&self, k: u64) -> f64 {
        match self {
            StepSchedule::Standard => beta_default(k),
            StepSchedule::FrozenIndices => 0.0,
            StepSchedule::PowerLaw { slow_exponent, .. } => ((k + 1) as f64).powf(-slow_exponent),
        }
    }
}

/// All learner state: per-(arm, reference-state) Q-tables, per-(arm, state)
/// subsidy estimates, and the iteration counter.
#[derive(Debug, Clone)]
pub struct LearnerState {
    /// Flat per-arm tables, indexed `(z * num_states + s) * 2 + a`.
    q: Vec<Vec<f64>>,
    scratch: Vec<Vec<f64>>,
    indices: Vec<Vec<f64>>,
    states_per_arm: Vec<usize>,
    k: u64,
}

impl LearnerState {
    /// Zero-initialized tables and indices.
    pub fn new(instance: &MarbleInstance) -> Self {
        let states_per_arm: Vec<usize> = instance.arms.iter().map(|a| a.num_states()).collect();
        let q = states_per_arm
            .iter()
            .map(|&s| vec![0.0; s * s * NUM_ACTIONS])
            .collect::<Vec<_>>();
        Self {
            scratch: q.clone(),
            q,
            indices: states_per_arm.iter().map(|&s| vec![0.0; s]).collect(),
            states_per_arm,
            k: 0,
        }
    }

    /// Zero Q-tables with caller-supplied initial subsidies.
    pub fn with_indices(instance: &MarbleInstance, indices: Vec<Vec<f64>>) -> Self {
        let mut state = Self::new(instance);
        assert_eq!(indices.len(), state.indices.len());
        for (given, slot) in indices.iter().zip(&state.indices) {
            assert_eq!(given.len(), slot.len());
        }
        state.indices = indices;
        state
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn num_arms(&self) -> usize {
        self.q.len()
    }

    /// Subsidy estimates, `indices[arm][state]`.
    pub fn indices(&self) -> &[Vec<f64>] {
        &self.indices
    }

    pub fn q_value(&self, arm: usize, z: usize, s: usize, a: usize) -> f64 {
        let n = self.states_per_arm[arm];
        self.q[arm][(z * n + s) * NUM_ACTIONS + a]
    }

    /// Copy of one (arm, reference-state) table.
    pub fn q_table(&self, arm: usize, z: usize) -> QTable {
        let n = self.states_per_arm[arm];
        QTable::from_values(
            (0..n)
                .map(|s| [self.q_value(arm, z, s, 0), self.q_value(arm, z, s, 1)])
                .collect(),
        )
    }

    pub fn max_abs_q(&self) -> f64 {
        self.q
            .iter()
            .flatten()
            .fold(0.0, |acc: f64, &v| acc.max(v.abs()))
    }

    pub fn max_abs_index(&self) -> f64 {
        self.indices
            .iter()
            .flatten()
            .fold(0.0, |acc: f64, &v| acc.max(v.abs()))
    }

    /// Mean over (arm, z) of the absolute action gap at the reference state.
    pub fn ref_gap_mean(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for arm in 0..self.num_arms() {
            for z in 0..self.states_per_arm[arm] {
                total += (self.q_value(arm, z, z, 1) - self.q_value(arm, z, z, 0)).abs();
                count += 1;
            }
        }
        total / count as f64
    }
}

/// Oracle targets for convergence tracking: exact indices and the Q fixed
/// points at those indices, per (arm, reference state).
#[derive(Debug, Clone)]
pub struct OracleReference {
    pub indices: Vec<Vec<f64>>,
    pub fixed_points: Vec<Vec<QTable>>,
}

impl OracleReference {
    pub fn compute(instance: &MarbleInstance, tol_lambda: f64) -> Result<Self, QwiError> {
        let mu = stationary_distribution(&instance.chain)?;
        let mut indices = Vec::with_capacity(instance.num_arms());
        let mut fixed_points = Vec::with_capacity(instance.num_arms());
        for arm in &instance.arms {
            let mdp = average_arm(arm, &mu, instance.discount)?;
            let mut arm_indices = Vec::with_capacity(mdp.num_states);
            let mut arm_fixed = Vec::with_capacity(mdp.num_states);
            for z in 0..mdp.num_states {
                let lambda = whittle_index(&mdp, z, tol_lambda)?;
                arm_fixed.push(solve_q(&mdp, lambda, 1e-9)?);
                arm_indices.push(lambda);
            }
            indices.push(arm_indices);
            fixed_points.push(arm_fixed);
        }
        Ok(Self {
            indices,
            fixed_points,
        })
    }

    fn index_error(&self, state: &LearnerState) -> f64 {
        let mut worst: f64 = 0.0;
        for (learned, exact) in state.indices.iter().zip(&self.indices) {
            for (l, e) in learned.iter().zip(exact) {
                worst = worst.max((l - e).abs());
            }
        }
        worst
    }

    fn q_dist(&self, state: &LearnerState) -> f64 {
        let mut worst: f64 = 0.0;
        for arm in 0..state.num_arms() {
            let n = state.states_per_arm[arm];
            for z in 0..n {
                let target = &self.fixed_points[arm][z];
                for s in 0..n {
                    for a in 0..NUM_ACTIONS {
                        worst = worst.max((state.q_value(arm, z, s, a) - target.get(s, a)).abs());
                    }
                }
            }
        }
        worst
    }
}

#[derive(Debug, Error)]
pub enum QwiError {
    #[error("Q-update produced a non-finite value at k={k}, arm={arm}, z={z}, s={s}, a={a}")]
    DivergedQ {
        k: u64,
        arm: usize,
        z: usize,
        s: usize,
        a: usize,
    },
    #[error("index update produced a non-finite value at k={k}, arm={arm}, z={z}")]
    DivergedIndex { k: u64, arm: usize, z: usize },
    #[error("a run needs at least one iteration")]
    NoIterations,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Averaging(#[from] AveragingError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// One synchronous iteration over every arm.
///
/// Per arm: read the current mode's reward table, draw one successor per
/// (state, action) from the averaged kernel (shared across reference states),
/// update all (z, s, a) entries against the pre-sweep table, then move each
/// reference state's subsidy along the post-sweep action gap. Finally advance
/// the hidden mode once and increment `k`.
pub fn qwi_sweep(
    state: &mut LearnerState,
    instance: &MarbleInstance,
    averaged: &[AveragedArmMdp],
    sim: &mut SimState,
    schedule: &StepSchedule,
) -> Result<(), QwiError> {
    let k = state.k;
    let alpha = schedule.alpha(k);
    let beta = schedule.beta(k);
    let gamma = instance.discount;
    let mut successors: Vec<[usize; NUM_ACTIONS]> = Vec::new();

    for arm in 0..instance.num_arms() {
        let n = state.states_per_arm[arm];
        let rewards = sim.emit_rewards(&instance.arms[arm]);
        successors.resize(n, [0; NUM_ACTIONS]);
        sim.sample_next_states_into(arm, &averaged[arm], &mut successors);

        let table = &state.q[arm];
        let scratch = &mut state.scratch[arm];
        for z in 0..n {
            let subsidy = state.indices[arm][z];
            let base = z * n * NUM_ACTIONS;
            for s in 0..n {
                for a in 0..NUM_ACTIONS {
                    let s_next = successors[s][a];
                    let next_base = base + s_next * NUM_ACTIONS;
                    let continuation = table[next_base].max(table[next_base + 1]);
                    let target =
                        rewards[s][a] + if a == 0 { subsidy } else { 0.0 } + gamma * continuation;
                    let entry = base + s * NUM_ACTIONS + a;
                    let updated = (1.0 - alpha) * table[entry] + alpha * target;
                    if !updated.is_finite() {
                        return Err(QwiError::DivergedQ { k, arm, z, s, a });
                    }
                    scratch[entry] = updated;
                }
            }
        }
        std::mem::swap(&mut state.q[arm], &mut state.scratch[arm]);

        if beta != 0.0 {
            for z in 0..n {
                let gap = state.q_value(arm, z, z, 1) - state.q_value(arm, z, z, 0);
                let updated = state.indices[arm][z] + beta * gap;
                if !updated.is_finite() {
                    return Err(QwiError::DivergedIndex { k, arm, z });
                }
                state.indices[arm][z] = updated;
            }
        }
    }

    sim.step_latent(&instance.chain);
    state.k += 1;
    Ok(())
}

/// Learning-run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub iterations: u64,
    pub seed: u64,
    pub schedule: StepSchedule,
    pub snapshot_every: u64,
    /// Share one sample stream across arms (lockstep draws); used by the
    /// homogeneity symmetry checks.
    pub tie_arm_streams: bool,
    /// Initial subsidies; zeros when absent.
    pub initial_indices: Option<Vec<Vec<f64>>>,
}

impl RunConfig {
    pub fn new(iterations: u64, seed: u64) -> Self {
        Self {
            iterations,
            seed,
            schedule: StepSchedule::Standard,
            snapshot_every: 1000,
            tie_arm_streams: false,
            initial_indices: None,
        }
    }
}

/// Execute `iterations` sweeps, recording snapshots every `snapshot_every`
/// iterations (and at the final one). Oracle distances are recorded when a
/// reference is supplied.
pub fn run(
    instance: &MarbleInstance,
    config: &RunConfig,
    oracle: Option<&OracleReference>,
) -> Result<(LearnerState, RunMetrics), QwiError> {
    if config.iterations == 0 {
        return Err(QwiError::NoIterations);
    }
    assert!(
        config.snapshot_every >= 1,
        "snapshot cadence must be positive"
    );

    let mu = stationary_distribution(&instance.chain)?;
    let averaged: Vec<AveragedArmMdp> = instance
        .arms
        .iter()
        .map(|arm| average_arm(arm, &mu, instance.discount))
        .collect::<Result<_, _>>()?;

    let mut sim = if config.tie_arm_streams {
        SimState::with_tied_sample_streams(instance, config.seed)?
    } else {
        SimState::new(instance, config.seed)?
    };
    let mut state = match &config.initial_indices {
        Some(indices) => LearnerState::with_indices(instance, indices.clone()),
        None => LearnerState::new(instance),
    };

    let mut metrics = RunMetrics::default();
    for _ in 0..config.iterations {
        qwi_sweep(&mut state, instance, &averaged, &mut sim, &config.schedule)?;
        let k = state.k;
        if k % config.snapshot_every == 0 || k == config.iterations {
            metrics.index_snapshots.push(IndexSnapshot {
                k,
                indices: state.indices.clone(),
            });
            metrics.max_abs_q.push((k, state.max_abs_q()));
            metrics.max_abs_index.push((k, state.max_abs_index()));
            metrics.ref_gap_mean.push((k, state.ref_gap_mean()));
            if let Some(oracle) = oracle {
                metrics.index_error.push((k, oracle.index_error(&state)));
                metrics.q_dist.push((k, oracle.q_dist(&state)));
            }
        }
    }
    Ok((state, metrics))
}

// ---------------------------------------------------------------------------
// Schedule checking
// ---------------------------------------------------------------------------

/// Finite-horizon step-size diagnostics. Divergence and square-summability are
/// asymptotic statements, so these are heuristics over the inspected horizon,
/// not proofs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleReport {
    pub horizon: u64,
    pub sum_alpha: f64,
    pub sum_alpha_sq: f64,
    pub sum_beta: f64,
    pub sum_beta_sq: f64,
    /// `beta/alpha` at the first and last active slow steps in the final
    /// decade `[horizon/10, horizon]`.
    pub ratio_first: Option<f64>,
    pub ratio_last: Option<f64>,
    /// Set when `beta/alpha` fails to decrease across the final decade.
    pub ratio_not_decreasing: bool,
    /// Set when the alpha partial sum grew by less than 1% over the final
    /// decade, the signature of a convergent sum.
    pub alpha_sum_stalled: bool,
    /// Same check for beta.
    pub beta_sum_stalled: bool,
}

impl ScheduleReport {
    pub fn flagged(&self) -> bool {
        self.ratio_not_decreasing || self.alpha_sum_stalled || self.beta_sum_stalled
    }
}

/// Evaluate both step sequences up to `horizon` and flag two-timescale
/// violations: a non-decreasing `beta/alpha` trend over the final decade, or
/// partial sums that have effectively stopped growing.
pub fn check_schedule(schedule: &StepSchedule, horizon: u64) -> ScheduleReport {
    assert!(horizon >= 10_000, "horizon too short to judge trends");
    let decade_start = horizon / 10;

    let mut sum_alpha = 0.0;
    let mut sum_alpha_sq = 0.0;
    let mut sum_beta = 0.0;
    let mut sum_beta_sq = 0.0;
    let mut alpha_sum_at_decade = 0.0;
    let mut beta_sum_at_decade = 0.0;
    let mut ratio_first = None;
    let mut ratio_last = None;

    for k in 0..=horizon {
        let alpha = schedule.alpha(k);
        let beta = schedule.beta(k);
        sum_alpha += alpha;
        sum_alpha_sq += alpha * alpha;
        sum_beta += beta;
        sum_beta_sq += beta * beta;
        if k == decade_start {
            alpha_sum_at_decade = sum_alpha;
            beta_sum_at_decade = sum_beta;
        }
        if k >= decade_start && beta > 0.0 && alpha > 0.0 {
            let ratio = beta / alpha;
            if ratio_first.is_none() {
                ratio_first = Some(ratio);
            }
            ratio_last = Some(ratio);
        }
    }

    let ratio_not_decreasing = match (ratio_first, ratio_last) {
        (Some(first), Some(last)) => last >= first,
        _ => true, // no active slow steps in the decade is itself suspicious
    };
    let alpha_sum_stalled = (sum_alpha - alpha_sum_at_decade) / sum_alpha < 0.01;
    let beta_sum_stalled = (sum_beta - beta_sum_at_decade) / sum_beta < 0.01;

    ScheduleReport {
        horizon,
        sum_alpha,
        sum_alpha_sq,
        sum_beta,
        sum_beta_sq,
        ratio_first,
        ratio_last,
        ratio_not_decreasing,
        alpha_sum_stalled,
        beta_sum_stalled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArmSpec, LatentChain};
    use std::sync::Arc;

    fn single_mode_instance(
        kernels: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        arms: usize,
    ) -> MarbleInstance {
        let arm = Arc::new(ArmSpec {
            kernels: vec![kernels],
            rewards: vec![rewards],
        });
        MarbleInstance {
            arms: vec![arm; arms],
            budget: 1,
            chain: LatentChain::new(vec![vec![1.0]]),
            discount: 0.8,
        }
    }

    #[test]
    fn alpha_schedule_values() {
        assert_eq!(alpha_default(0), 1.0);
        assert_eq!(alpha_default(10_000), 1.0);
        assert_eq!(alpha_default(25_000), 1.0 / 3.0);
        assert_eq!(alpha_default(10_001), 0.5);
    }

    #[test]
    fn beta_schedule_values() {
        assert_eq!(beta_default(7), 0.0);
        assert_eq!(beta_default(0), 1.0);
        // 100000 * ln(100000) / 10000 = 115.129..., ceil 116.
        assert_eq!(beta_default(100_000), 1.0 / 117.0);
    }

    #[test]
    fn full_overwrite_sweep_writes_reward_table() {
        // alpha = 1, gamma = 0, lambda = 0: one sweep copies the rewards.
        let c = 2.5;
        let n = 3;
        let uniform = vec![vec![1.0 / n as f64; n]; n];
        let mut instance =
            single_mode_instance(vec![uniform.clone(), uniform], vec![vec![c; 2]; n], 2);
        instance.discount = 0.0;

        let mu = stationary_distribution(&instance.chain).unwrap();
        let averaged: Vec<_> = instance
            .arms
            .iter()
            .map(|a| average_arm(a, &mu, instance.discount).unwrap())
            .collect();
        let mut sim = SimState::new(&instance, 1).unwrap();
        let mut state = LearnerState::new(&instance);
        let schedule = StepSchedule::PowerLaw {
            fast_exponent: 0.0,
            slow_exponent: 0.0,
        };
        // fast_exponent 0 gives alpha = 1 at every k; slow steps are irrelevant here.
        qwi_sweep(&mut state, &instance, &averaged, &mut sim, &schedule).unwrap();
        for arm in 0..2 {
            for z in 0..n {
                for s in 0..n {
                    for a in 0..2 {
                        assert_eq!(state.q_value(arm, z, s, a), c);
                    }
                }
            }
        }
        assert_eq!(state.k(), 1);
    }

    #[test]
    fn frozen_slow_timescale_keeps_indices() {
        let n = 2;
        let uniform = vec![vec![0.5; n]; n];
        let instance = single_mode_instance(
            vec![uniform.clone(), uniform],
            vec![vec![0.3, 0.9], vec![0.1, 0.4]],
            1,
        );
        let config = RunConfig {
            schedule: StepSchedule::FrozenIndices,
            snapshot_every: 10,
            ..RunConfig::new(200, 3)
        };
        let (state, metrics) = run(&instance, &config, None).unwrap();
        assert_eq!(state.indices()[0], vec![0.0, 0.0]);
        assert!(metrics
            .index_snapshots
            .iter()
            .all(|snap| snap.indices[0] == vec![0.0, 0.0]));
        assert!(state.max_abs_q() > 0.0);
    }

    #[test]
    fn frozen_lambda_tracks_oracle_fixed_point() {
        // Deterministic kernels and a single mode: the sweep is noise-free, so
        // the iterates reach the solved fixed point tightly.
        let kernels = vec![
            vec![vec![1.0, 0.0], vec![1.0, 0.0]], // passive: go to state 0
            vec![vec![0.0, 1.0], vec![0.0, 1.0]], // active: go to state 1
        ];
        let rewards = vec![vec![0.2, 0.5], vec![0.9, 0.6]];
        let instance = single_mode_instance(kernels, rewards, 1);

        let oracle = OracleReference::compute(&instance, 1e-8).unwrap();
        let config = RunConfig {
            schedule: StepSchedule::FrozenIndices,
            snapshot_every: 1000,
            initial_indices: Some(oracle.indices.clone()),
            ..RunConfig::new(20_000, 5)
        };
        let (state, metrics) = run(&instance, &config, Some(&oracle)).unwrap();
        let final_dist = metrics.q_dist.last().unwrap().1;
        assert!(final_dist <= 1e-3, "sup distance {final_dist}");
        // And the learned table itself matches per entry.
        for z in 0..2 {
            let table = state.q_table(0, z);
            assert!(table.sup_dist(&oracle.fixed_points[0][z]) <= 1e-3);
        }
    }

    #[test]
    fn zero_iterations_rejected_one_iteration_runs() {
        let n = 2;
        let uniform = vec![vec![0.5; n]; n];
        let instance = single_mode_instance(
            vec![uniform.clone(), uniform],
            vec![vec![0.3, 0.9], vec![0.1, 0.4]],
            1,
        );
        assert!(matches!(
            run(&instance, &RunConfig::new(0, 1), None),
            Err(QwiError::NoIterations)
        ));
        let (state, metrics) = run(&instance, &RunConfig::new(1, 1), None).unwrap();
        assert_eq!(state.k(), 1);
        assert_eq!(metrics.index_snapshots.len(), 1);
        assert_eq!(metrics.index_snapshots[0].k, 1);
    }

    #[test]
    fn identical_seeds_reproduce_metrics_bitwise() {
        let n = 3;
        let kernels = vec![vec![vec![0.6, 0.3, 0.1]; 3], vec![vec![0.1, 0.3, 0.6]; 3]];
        let rewards = vec![vec![0.1, 0.0], vec![0.4, 0.45], vec![0.8, 0.9]];
        let instance = single_mode_instance(kernels, rewards, 4);
        let _ = n;
        let config = RunConfig {
            snapshot_every: 50,
            ..RunConfig::new(2_000, 9)
        };
        let (_, first) = run(&instance, &config, None).unwrap();
        let (_, second) = run(&instance, &config, None).unwrap();
        assert_eq!(first, second);
        let (_, third) = run(&instance, &RunConfig { seed: 10, ..config }, None).unwrap();
        assert_ne!(first, third);
    }

    #[test]
    fn homogeneous_arms_stay_identical_under_tied_streams() {
        let kernels = vec![
            vec![
                vec![0.7, 0.2, 0.1],
                vec![0.5, 0.4, 0.1],
                vec![0.2, 0.6, 0.2],
            ],
            vec![
                vec![0.2, 0.6, 0.2],
                vec![0.1, 0.4, 0.5],
                vec![0.1, 0.2, 0.7],
            ],
        ];
        let rewards = vec![vec![0.1, 0.05], vec![0.5, 0.55], vec![0.9, 0.95]];
        let instance = single_mode_instance(kernels, rewards, 5);
        let config = RunConfig {
            tie_arm_streams: true,
            snapshot_every: 100,
            ..RunConfig::new(3_000, 13)
        };
        let (state, metrics) = run(&instance, &config, None).unwrap();
        for snap in &metrics.index_snapshots {
            for arm in 1..5 {
                assert_eq!(
                    snap.indices[arm], snap.indices[0],
                    "diverged at k={}",
                    snap.k
                );
            }
        }
        for arm in 1..5 {
            for z in 0..3 {
                assert_eq!(state.q_table(arm, z), state.q_table(0, z));
            }
        }
    }

    #[test]
    fn divergence_reports_location() {
        // Rewards near f64::MAX overflow the continuation term within a few
        // sweeps; validation would reject this instance, the learner must
        // still fail loudly rather than poison the tables.
        let n = 2;
        let uniform = vec![vec![0.5; n]; n];
        let instance = single_mode_instance(
            vec![uniform.clone(), uniform],
            vec![vec![f64::MAX / 2.0; 2]; n],
            1,
        );
        let mut err = None;
        let config = RunConfig::new(50, 1);
        if let Err(e) = run(&instance, &config, None) {
            err = Some(e);
        }
        match err {
            Some(QwiError::DivergedQ { .. }) => {}
            other => panic!("expected DivergedQ, got {other:?}"),
        }
    }

    #[test]
    fn late_iterations_shrink_reference_gap() {
        let kernels = vec![
            vec![vec![0.8, 0.2], vec![0.6, 0.4]],
            vec![vec![0.3, 0.7], vec![0.1, 0.9]],
        ];
        let rewards = vec![vec![0.2, 0.15], vec![0.9, 0.85]];
        let instance = single_mode_instance(kernels, rewards, 1);
        let config = RunConfig {
            snapshot_every: 100,
            ..RunConfig::new(60_000, 21)
        };
        let (_, metrics) = run(&instance, &config, None).unwrap();
        let series = &metrics.ref_gap_mean;
        let tenth = series.len() / 10;
        let head: f64 = series[..tenth].iter().map(|(_, g)| g).sum::<f64>() / tenth as f64;
        let tail: f64 = series[series.len() - tenth..]
            .iter()
            .map(|(_, g)| g)
            .sum::<f64>()
            / tenth as f64;
        assert!(tail < head, "gap grew: head {head}, tail {tail}");
    }

    #[test]
    fn default_schedules_pass_checker() {
        let report = check_schedule(&StepSchedule::Standard, 1_000_000);
        assert!(!report.flagged(), "{report:?}");
        let (first, last) = (report.ratio_first.unwrap(), report.ratio_last.unwrap());
        assert!(last < first, "ratio did not decrease: {first} -> {last}");
        assert!(report.sum_alpha > 100.0);
        assert!(report.sum_beta > 100.0);
    }

    #[test]
    fn equal_power_law_schedules_flagged() {
        // alpha = beta = 1/k: the timescales never separate.
        let report = check_schedule(
            &StepSchedule::PowerLaw {
                fast_exponent: 1.0,
                slow_exponent: 1.0,
            },
            1_000_000,
        );
        assert!(report.ratio_not_decreasing);
        assert!(report.flagged());
    }

    #[test]
    fn convergent_alpha_sum_flagged() {
        // alpha = 1/k^2 has a convergent sum; the divergence requirement fails.
        let report = check_schedule(
            &StepSchedule::PowerLaw {
                fast_exponent: 2.0,
                slow_exponent: 1.0,
            },
            1_000_000,
        );
        assert!(report.alpha_sum_stalled);
        assert!(report.flagged());
    }
}

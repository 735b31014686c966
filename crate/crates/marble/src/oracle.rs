//! Exact planning on a fixed single-arm MDP: subsidy-parameterized Bellman
//! fixed points, action gaps, passive sets, Whittle indices by bisection, and
//! grid-certified indexability verification.
//!
//! All functions are pure and deterministic. The subsidized operator pays
//! `lambda` on the passive action; it is a `gamma`-contraction, so the fixed
//! point exists, is unique, and value iteration with a residual stopping rule
//! reaches any requested sup-distance. Indexability makes the action gap at a
//! state cross zero exactly once as the subsidy grows, which is what the
//! bisection exploits; the grid verifier certifies that premise at grid
//! resolution.

use serde::Serialize;
use thiserror::Error;

use crate::averaging::AveragedArmMdp;
use crate::model::{ACTIVE, PASSIVE};

/// Gap magnitudes inside `[-1e-9, 1e-9]` count as passive: the passive region
/// is defined with a weak inequality, and float equality needs a band.
pub const PASSIVE_TIE_TOL: f64 = 1e-9;

/// Bisection refines until the measured action gap at the returned subsidy is
/// below this, in addition to the bracket-width stop.
const BISECTION_GAP_TOL: f64 = 1e-7;
/// Q-solve tolerance used inside bisection and grid scans.
const INNER_SOLVE_TOL: f64 = 1e-9;
const SOLVE_MAX_SWEEPS: u64 = 10_000_000;
const BISECTION_MAX_ITERS: u32 = 300;

/// Tabular Q-values for one (arm, reference-state) pair: `values[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<[f64; 2]>,
}

impl QTable {
    pub fn zeros(num_states: usize) -> Self {
        Self {
            values: vec![[0.0; 2]; num_states],
        }
    }

    pub fn from_values(values: Vec<[f64; 2]>) -> Self {
        Self { values }
    }

    pub fn num_states(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state][action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values[state][action] = value;
    }

    /// `max_a Q(s, a)`.
    pub fn state_value(&self, state: usize) -> f64 {
        let [passive, active] = self.values[state];
        passive.max(active)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0, |acc: f64, &v| acc.max(v.abs()))
    }

    pub fn sup_dist(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .fold(0.0, |acc: f64, (a, b)| acc.max((a - b).abs()))
    }
}

/// Grid-certified indexability verdict. `passive_sets[j]` is the passive set
/// at `lambda_grid[j]`; certification only holds at the recorded grid
/// resolution, never between grid points.
#[derive(Debug, Clone, Serialize)]
pub struct IndexabilityReport {
    pub lambda_grid: Vec<f64>,
    pub passive_sets: Vec<Vec<usize>>,
    pub is_indexable: bool,
    /// `(grid index, state)` of the first nesting failure, if any.
    pub first_violation: Option<(usize, usize)>,
    /// Largest gap between adjacent grid points.
    pub max_grid_step: f64,
}

impl IndexabilityReport {
    pub fn summary(&self) -> String {
        let step = self.max_grid_step;
        match (self.is_indexable, self.first_violation) {
            (true, _) => format!(
                "indexable (grid-certified, {} points, max step {step:.6})",
                self.lambda_grid.len()
            ),
            (false, Some((grid_idx, state))) => format!(
                "NOT indexable: state {state} leaves the passive set at grid index {grid_idx} \
                 (lambda = {:.6}; grid-certified, max step {step:.6})",
                self.lambda_grid[grid_idx]
            ),
            (false, None) => format!(
                "NOT indexable: passive sets do not span empty set to full state set \
                 over the grid (grid-certified, max step {step:.6})"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("value iteration hit the {max_sweeps}-sweep cap at lambda = {lambda} (residual {residual}); the operator should contract")]
    NoConvergence {
        lambda: f64,
        residual: f64,
        max_sweeps: u64,
    },
    #[error("no action-gap sign change in the bisection bracket at state {state}: the arm is not indexable at that state or the bracket is defective")]
    NotIndexableAtState { state: usize },
}

/// One synchronous sweep of the subsidized Bellman operator:
/// `out(s,a) = r(s,a) + lambda * (1 - a) + gamma * sum_s' p(s'|s,a) max_a' q(s',a')`.
pub fn bellman_backup(q: &QTable, mdp: &AveragedArmMdp, lambda: f64) -> QTable {
    let mut out = QTable::zeros(mdp.num_states);
    backup_into(q, mdp, lambda, &mut out);
    out
}

fn backup_into(q: &QTable, mdp: &AveragedArmMdp, lambda: f64, out: &mut QTable) {
    let gamma = mdp.discount;
    for s in 0..mdp.num_states {
        for action in [PASSIVE, ACTIVE] {
            let mut continuation = 0.0;
            for (s_next, &p) in mdp.kernel[action][s].iter().enumerate() {
                continuation += p * q.state_value(s_next);
            }
            let subsidy = if action == PASSIVE { lambda } else { 0.0 };
            out.values[s][action] = mdp.reward[s][action] + subsidy + gamma * continuation;
        }
    }
}

/// Fixed point of the subsidized operator, to sup-distance `tol`.
///
/// Stops when successive sweeps differ by at most `tol * (1 - gamma) / (2 gamma)`;
/// the contraction bound then places the result within `tol` of the true fixed
/// point. Deterministic given inputs.
pub fn solve_q(mdp: &AveragedArmMdp, lambda: f64, tol: f64) -> Result<QTable, OracleError> {
    solve_q_warm(mdp, lambda, tol, QTable::zeros(mdp.num_states))
}

/// [`solve_q`] starting from a caller-supplied table; used to chain solves
/// across nearby subsidies.
pub fn solve_q_warm(
    mdp: &AveragedArmMdp,
    lambda: f64,
    tol: f64,
    init: QTable,
) -> Result<QTable, OracleError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let gamma = mdp.discount;
    let threshold = tol * (1.0 - gamma) / (2.0 * gamma);
    let mut current = init;
    let mut next = QTable::zeros(mdp.num_states);
    let mut residual = f64::INFINITY;
    for _ in 0..SOLVE_MAX_SWEEPS {
        backup_into(&current, mdp, lambda, &mut next);
        residual = current.sup_dist(&next);
        std::mem::swap(&mut current, &mut next);
        if residual <= threshold {
            return Ok(current);
        }
    }
    Err(OracleError::NoConvergence {
        lambda,
        residual,
        max_sweeps: SOLVE_MAX_SWEEPS,
    })
}

/// Advantage of activation at `z` under subsidy `lambda`: `q(z,1) - q(z,0)`
/// at the solved fixed point.
pub fn action_gap(
    mdp: &AveragedArmMdp,
    lambda: f64,
    z: usize,
    tol: f64,
) -> Result<f64, OracleError> {
    assert!(z < mdp.num_states, "reference state out of range");
    let q = solve_q(mdp, lambda, tol)?;
    Ok(q.get(z, ACTIVE) - q.get(z, PASSIVE))
}

/// Subsidy interval guaranteed to contain a gap sign change for indexable
/// arms: beyond `r_max / (1 - gamma)` the subsidy dominates any activation
/// advantage. The margin of 1 keeps the endpoints strictly outside.
pub fn bisection_bracket(mdp: &AveragedArmMdp) -> (f64, f64) {
    let reach = mdp.r_max() / (1.0 - mdp.discount) + 1.0;
    (-reach, reach)
}

/// Evenly spaced subsidy grid spanning the bisection bracket.
pub fn default_grid(mdp: &AveragedArmMdp, points: usize) -> Vec<f64> {
    assert!(points >= 2, "grid needs at least two points");
    let (lo, hi) = bisection_bracket(mdp);
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Whittle index at reference state `z`: the smallest subsidy making
/// passivity optimal, found by bisection on the action gap.
///
/// Refines until the bracket is narrower than `tol_lambda` and the measured
/// gap at the returned subsidy is below the internal gap tolerance. Callers
/// are expected to have grid-certified indexability; a missing sign change in
/// the bracket is reported as [`OracleError::NotIndexableAtState`].
pub fn whittle_index(mdp: &AveragedArmMdp, z: usize, tol_lambda: f64) -> Result<f64, OracleError> {
    assert!(z < mdp.num_states, "reference state out of range");
    assert!(tol_lambda > 0.0, "tolerance must be positive");
    let (mut lo, mut hi) = bisection_bracket(mdp);

    let q_lo = solve_q(mdp, lo, INNER_SOLVE_TOL)?;
    let gap_lo = q_lo.get(z, ACTIVE) - q_lo.get(z, PASSIVE);
    let q_hi = solve_q_warm(mdp, hi, INNER_SOLVE_TOL, q_lo.clone())?;
    let gap_hi = q_hi.get(z, ACTIVE) - q_hi.get(z, PASSIVE);
    if !(gap_lo > 0.0 && gap_hi <= 0.0) {
        return Err(OracleError::NotIndexableAtState { state: z });
    }

    let mut warm = q_lo;
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        warm = solve_q_warm(mdp, mid, INNER_SOLVE_TOL, warm)?;
        let gap = warm.get(z, ACTIVE) - warm.get(z, PASSIVE);
        if gap <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= tol_lambda && gap.abs() <= BISECTION_GAP_TOL {
            return Ok(mid);
        }
    }
    // Gap is Lipschitz in lambda, so shrinking the bracket drives it to zero;
    // reaching the cap means the bracket carried no usable sign structure.
    Err(OracleError::NotIndexableAtState { state: z })
}

/// States where passivity is weakly optimal at subsidy `lambda`, using the
/// tie band [`PASSIVE_TIE_TOL`].
pub fn passive_set(mdp: &AveragedArmMdp, lambda: f64, tol: f64) -> Result<Vec<usize>, OracleError> {
    let q = solve_q(mdp, lambda, tol)?;
    Ok(passive_set_of(&q))
}

fn passive_set_of(q: &QTable) -> Vec<usize> {
    (0..q.num_states())
        .filter(|&z| q.get(z, ACTIVE) - q.get(z, PASSIVE) <= PASSIVE_TIE_TOL)
        .collect()
}

/// Grid-certified indexability: passive sets must be nested nondecreasing
/// along the ascending grid and span the empty set to the full state set.
pub fn verify_mai(
    mdp: &AveragedArmMdp,
    grid: &[f64],
    tol: f64,
) -> Result<IndexabilityReport, OracleError> {
    assert!(
        grid.windows(2).all(|w| w[0] < w[1]),
        "subsidy grid must be strictly ascending"
    );
    let mut passive_sets: Vec<Vec<usize>> = Vec::with_capacity(grid.len());
    let mut first_violation = None;
    let mut warm = QTable::zeros(mdp.num_states);
    for (grid_idx, &lambda) in grid.iter().enumerate() {
        warm = solve_q_warm(mdp, lambda, tol, warm)?;
        let current = passive_set_of(&warm);
        if first_violation.is_none() {
            if let Some(prev) = passive_sets.last() {
                if let Some(&escaped) = prev.iter().find(|s| !current.contains(s)) {
                    first_violation = Some((grid_idx, escaped));
                }
            }
        }
        passive_sets.push(current);
    }
    let spans = passive_sets.first().is_some_and(|first| first.is_empty())
        && passive_sets
            .last()
            .is_some_and(|last| last.len() == mdp.num_states);
    let max_grid_step = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(IndexabilityReport {
        lambda_grid: grid.to_vec(),
        passive_sets,
        is_indexable: first_violation.is_none() && spans,
        first_violation,
        max_grid_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::{average_arm, mode_mdp};
    use crate::model::ArmSpec;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const GAMMA: f64 = 0.8;

    fn random_mdp(seed: u64, states: usize, gamma: f64) -> AveragedArmMdp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kernel = Vec::new();
        for _ in 0..2 {
            let mut per_action = Vec::new();
            for _ in 0..states {
                let raw: Vec<f64> = (0..states).map(|_| rng.gen_range(0.01..1.0)).collect();
                let total: f64 = raw.iter().sum();
                per_action.push(raw.into_iter().map(|x| x / total).collect());
            }
            kernel.push(per_action);
        }
        let reward = (0..states)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        AveragedArmMdp {
            num_states: states,
            kernel,
            reward,
            discount: gamma,
        }
    }

    fn random_q(rng: &mut ChaCha8Rng, states: usize) -> QTable {
        QTable::from_values(
            (0..states)
                .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
                .collect(),
        )
    }

    /// MDP where the two actions are indistinguishable: same kernel, same
    /// reward. The gap is then exactly `-lambda`.
    fn identical_action_mdp(states: usize) -> AveragedArmMdp {
        let row = vec![1.0 / states as f64; states];
        let kernel = vec![vec![row.clone(); states]; 2];
        let reward = (0..states).map(|s| vec![s as f64 * 0.1; 2]).collect();
        AveragedArmMdp {
            num_states: states,
            kernel,
            reward,
            discount: GAMMA,
        }
    }

    fn constant_reward_mdp(states: usize, r: f64) -> AveragedArmMdp {
        let mut mdp = identical_action_mdp(states);
        mdp.reward = vec![vec![r; 2]; states];
        mdp
    }

    /// Dynamics of the default homogeneous arm, for style-of-scale tests.
    fn engagement_mdp() -> AveragedArmMdp {
        let arm = crate::harness::default_arm_spec();
        let mu = crate::model::stationary_distribution(&crate::harness::default_chain()).unwrap();
        average_arm(&arm, &mu, GAMMA).unwrap()
    }

    #[test]
    fn backup_with_zero_continuation() {
        let mdp = constant_reward_mdp(3, 1.0);
        let out = bellman_backup(&QTable::zeros(3), &mdp, 0.0);
        for s in 0..3 {
            assert_eq!(out.get(s, 0), 1.0);
            assert_eq!(out.get(s, 1), 1.0);
        }
    }

    #[test]
    fn backup_pays_subsidy_on_passive_only() {
        let mdp = constant_reward_mdp(3, 0.0);
        let out = bellman_backup(&QTable::zeros(3), &mdp, 2.0);
        for s in 0..3 {
            assert_eq!(out.get(s, PASSIVE), 2.0);
            assert_eq!(out.get(s, ACTIVE), 0.0);
        }
    }

    #[test]
    fn backup_matches_elementwise_recomputation() {
        let mdp = random_mdp(11, 4, GAMMA);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = random_q(&mut rng, 4);
        let lambda = 0.37;
        let out = bellman_backup(&q, &mdp, lambda);
        for s in 0..4 {
            for a in 0..2 {
                let mut expected = mdp.reward[s][a] + if a == 0 { lambda } else { 0.0 };
                for s_next in 0..4 {
                    expected +=
                        GAMMA * mdp.kernel[a][s][s_next] * q.get(s_next, 0).max(q.get(s_next, 1));
                }
                assert!((out.get(s, a) - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn solve_constant_rewards_gives_geometric_series() {
        let mdp = constant_reward_mdp(4, 1.0);
        let q = solve_q(&mdp, 0.0, 1e-10).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                assert!(
                    (q.get(s, a) - 5.0).abs() <= 1e-10,
                    "q({s},{a}) = {}",
                    q.get(s, a)
                );
            }
        }
    }

    #[test]
    fn solve_zero_rewards_is_zero() {
        let mdp = constant_reward_mdp(4, 0.0);
        let q = solve_q(&mdp, 0.0, 1e-10).unwrap();
        assert_eq!(q.sup_norm(), 0.0);
    }

    /// Independent long-horizon oracle: a plain fixed-sweep loop written out
    /// here, no stopping rule, no shared code with solve_q.
    fn brute_force_fixed_point(mdp: &AveragedArmMdp, lambda: f64, sweeps: u64) -> Vec<[f64; 2]> {
        let n = mdp.num_states;
        let mut q = vec![[0.0f64; 2]; n];
        for _ in 0..sweeps {
            let mut next = vec![[0.0f64; 2]; n];
            for s in 0..n {
                for a in 0..2 {
                    let mut cont = 0.0;
                    for s2 in 0..n {
                        cont += mdp.kernel[a][s][s2] * q[s2][0].max(q[s2][1]);
                    }
                    next[s][a] =
                        mdp.reward[s][a] + if a == 0 { lambda } else { 0.0 } + mdp.discount * cont;
                }
            }
            q = next;
        }
        q
    }

    #[test]
    fn solve_matches_long_horizon_value_iteration() {
        let mut mdp = random_mdp(21, 2, GAMMA);
        mdp.reward = vec![vec![0.3, 0.9], vec![-0.2, 0.1]];
        let expected = brute_force_fixed_point(&mdp, 0.25, 1_000_000);
        let q = solve_q(&mdp, 0.25, 1e-9).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert!(
                    (q.get(s, a) - expected[s][a]).abs() <= 1e-8,
                    "q({s},{a}) = {} vs {}",
                    q.get(s, a),
                    expected[s][a]
                );
            }
        }
    }

    #[test]
    fn gap_zero_for_identical_actions() {
        let mdp = identical_action_mdp(3);
        for z in 0..3 {
            let gap = action_gap(&mdp, 0.0, z, 1e-9).unwrap();
            assert!(gap.abs() <= 2e-9, "gap({z}) = {gap}");
        }
    }

    #[test]
    fn gap_is_minus_lambda_for_identical_actions() {
        let mdp = identical_action_mdp(3);
        for z in 0..3 {
            let gap = action_gap(&mdp, 1.0, z, 1e-9).unwrap();
            assert!((gap + 1.0).abs() <= 2e-9, "gap({z}) = {gap}");
        }
    }

    #[test]
    fn gap_strictly_decreasing_on_grid_for_default_arm() {
        let mdp = engagement_mdp();
        let grid = default_grid(&mdp, 41);
        for z in 0..mdp.num_states {
            let mut prev = f64::INFINITY;
            for &lambda in &grid {
                let gap = action_gap(&mdp, lambda, z, 1e-10).unwrap();
                assert!(
                    gap < prev,
                    "gap not strictly decreasing at z={z}, lambda={lambda}"
                );
                prev = gap;
            }
        }
    }

    #[test]
    fn whittle_index_zero_for_identical_actions() {
        let mdp = identical_action_mdp(4);
        for z in 0..4 {
            let idx = whittle_index(&mdp, z, 1e-8).unwrap();
            assert!(idx.abs() <= 1e-6, "index({z}) = {idx}");
        }
    }

    #[test]
    fn whittle_index_equals_activation_bonus() {
        // Same kernel for both actions, active reward exceeds passive by b:
        // the gap is exactly b - lambda, so the index is b.
        let mut mdp = identical_action_mdp(3);
        let b = 0.7;
        for s in 0..3 {
            mdp.reward[s][ACTIVE] = mdp.reward[s][PASSIVE] + b;
        }
        for z in 0..3 {
            let idx = whittle_index(&mdp, z, 1e-8).unwrap();
            assert!((idx - b).abs() <= 1e-6, "index({z}) = {idx}");
        }
    }

    #[test]
    fn whittle_index_matches_dense_grid_scan() {
        let mdp = engagement_mdp();
        let (lo, hi) = bisection_bracket(&mdp);
        // Independent root localization: march a step-1e-4 grid and record
        // where the gap sign first flips, per reference state.
        let step = 1e-4;
        let points = ((hi - lo) / step).ceil() as usize + 1;
        let mut warm = QTable::zeros(mdp.num_states);
        let mut roots = vec![None; mdp.num_states];
        let mut prev_gaps = vec![f64::INFINITY; mdp.num_states];
        for i in 0..points {
            let lambda = lo + step * i as f64;
            warm = solve_q_warm(&mdp, lambda, 1e-9, warm).unwrap();
            for z in 0..mdp.num_states {
                let gap = warm.get(z, ACTIVE) - warm.get(z, PASSIVE);
                if roots[z].is_none() && prev_gaps[z] > 0.0 && gap <= 0.0 {
                    roots[z] = Some(lambda - 0.5 * step);
                }
                prev_gaps[z] = gap;
            }
        }
        for z in 0..mdp.num_states {
            let scanned = roots[z].expect("grid scan found no sign change");
            let idx = whittle_index(&mdp, z, 1e-6).unwrap();
            assert!(
                (idx - scanned).abs() <= 2e-4,
                "z={z}: bisection {idx} vs grid {scanned}"
            );
        }
    }

    #[test]
    fn passive_set_full_at_high_subsidy_empty_at_low() {
        let mdp = engagement_mdp();
        let (lo, hi) = bisection_bracket(&mdp);
        let full = passive_set(&mdp, hi, 1e-9).unwrap();
        assert_eq!(full, (0..mdp.num_states).collect::<Vec<_>>());
        let empty = passive_set(&mdp, lo, 1e-9).unwrap();
        assert!(
            empty.is_empty(),
            "passive set at bracket low end: {empty:?}"
        );
    }

    #[test]
    fn passive_set_ties_count_as_passive() {
        let mdp = identical_action_mdp(4);
        let set = passive_set(&mdp, 0.0, 1e-10).unwrap();
        assert_eq!(set, vec![0, 1, 2, 3]);
    }

    #[test]
    fn verify_mai_identical_action_grid() {
        let mdp = identical_action_mdp(2);
        let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let report = verify_mai(&mdp, &grid, 1e-10).unwrap();
        assert!(report.is_indexable);
        assert_eq!(report.first_violation, None);
        let expected: Vec<Vec<usize>> = vec![vec![], vec![], vec![0, 1], vec![0, 1], vec![0, 1]];
        assert_eq!(report.passive_sets, expected);
    }

    #[test]
    fn verify_mai_default_arm_indexable() {
        let mdp = engagement_mdp();
        let grid = default_grid(&mdp, 101);
        let report = verify_mai(&mdp, &grid, 1e-9).unwrap();
        assert!(report.is_indexable, "{}", report.summary());
        assert!(report.passive_sets.first().unwrap().is_empty());
        assert_eq!(report.passive_sets.last().unwrap().len(), mdp.num_states);
    }

    /// Non-indexable 3-state fixture found by random grid search (gamma 0.9):
    /// state 1 enters the passive set near lambda = -0.245 and leaves it again
    /// near 0. Two-state arms cannot produce non-nested passive sets at these
    /// discounts, so three states is the smallest such fixture. The kernel
    /// values are frozen verbatim; rounding them loses the violation.
    #[allow(clippy::excessive_precision)]
    fn non_indexable_mdp() -> AveragedArmMdp {
        AveragedArmMdp {
            num_states: 3,
            kernel: vec![
                vec![
                    vec![
                        0.99814067372505155,
                        0.000072948760329579496,
                        0.0017863775146189746,
                    ],
                    vec![
                        0.00028145957985916493,
                        0.85989985070045782,
                        0.13981868971968311,
                    ],
                    vec![
                        0.57836577249092103,
                        0.24498983831600968,
                        0.17664438919306943,
                    ],
                ],
                vec![
                    vec![
                        0.0010654640674937087,
                        0.99889318912778702,
                        0.000041346804719352786,
                    ],
                    vec![
                        0.64085780724003460,
                        0.12699179945115366,
                        0.23215039330881163,
                    ],
                    vec![
                        0.00040716273594754572,
                        0.0000000041782587519969712,
                        0.99959283308579361,
                    ],
                ],
            ],
            reward: vec![
                vec![0.8799115678167502, 0.40011465320546913],
                vec![0.8337436303065974, 0.6451795520025385],
                vec![0.579903725507545, 0.7120134535249433],
            ],
            discount: 0.9,
        }
    }

    #[test]
    fn verify_mai_flags_non_nested_passive_sets() {
        let mdp = non_indexable_mdp();
        let grid = default_grid(&mdp, 81);
        let report = verify_mai(&mdp, &grid, 1e-9).unwrap();
        assert!(!report.is_indexable);
        let (grid_idx, state) = report.first_violation.expect("violation must be localized");
        assert_eq!(state, 1);
        // The state must actually have been passive at the previous point.
        assert!(report.passive_sets[grid_idx - 1].contains(&1));
        assert!(!report.passive_sets[grid_idx].contains(&1));
    }

    #[test]
    fn single_mode_instance_mode_index_equals_averaged_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let states = 3;
        let mut kernels = Vec::new();
        for _ in 0..2 {
            let mut kernel = Vec::new();
            for _ in 0..states {
                let raw: Vec<f64> = (0..states).map(|_| rng.gen_range(0.1..1.0)).collect();
                let total: f64 = raw.iter().sum();
                kernel.push(raw.into_iter().map(|x| x / total).collect::<Vec<f64>>());
            }
            kernels.push(kernel);
        }
        let arm = ArmSpec {
            kernels: vec![kernels],
            rewards: vec![(0..states)
                .map(|s| vec![0.1 * s as f64, 0.1 * s as f64 + 0.2])
                .collect()],
        };
        let averaged = average_arm(&arm, &[1.0], GAMMA).unwrap();
        let fixed = mode_mdp(&arm, 0, GAMMA).unwrap();
        assert_eq!(averaged, fixed);
        for z in 0..states {
            let a = whittle_index(&averaged, z, 1e-8).unwrap();
            let b = whittle_index(&fixed, z, 1e-8).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn fixed_point_bound_holds() {
        for seed in 0..10 {
            let mdp = random_mdp(seed, 4, GAMMA);
            let lambda = (seed as f64 - 5.0) * 0.3;
            let q = solve_q(&mdp, lambda, 1e-8).unwrap();
            let bound = (mdp.r_max() + lambda.abs()) / (1.0 - GAMMA) + 1e-8;
            assert!(
                q.sup_norm() <= bound,
                "seed {seed}: {} > {bound}",
                q.sup_norm()
            );
        }
    }

    #[test]
    fn root_consistency_on_indexable_instances() {
        let mdp = engagement_mdp();
        for z in 0..mdp.num_states {
            let idx = whittle_index(&mdp, z, 1e-6).unwrap();
            let gap = action_gap(&mdp, idx, z, 1e-9).unwrap();
            assert!(gap.abs() <= 1e-6, "z={z}: residual gap {gap}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn backup_is_gamma_contraction(seed in 0u64..10_000) {
            let mdp = random_mdp(seed, 4, GAMMA);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
            let q1 = random_q(&mut rng, 4);
            let q2 = random_q(&mut rng, 4);
            let lambda = rng.gen_range(-2.0..2.0);
            let d_in = q1.sup_dist(&q2);
            let d_out = bellman_backup(&q1, &mdp, lambda).sup_dist(&bellman_backup(&q2, &mdp, lambda));
            prop_assert!(d_out <= GAMMA * d_in, "{d_out} > {}", GAMMA * d_in);
        }

        #[test]
        fn fixed_points_lipschitz_in_subsidy(seed in 0u64..10_000) {
            let mdp = random_mdp(seed, 3, GAMMA);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let lambda = rng.gen_range(-2.0..2.0);
            let nu = rng.gen_range(-2.0..2.0);
            let tol = 1e-9;
            let a = solve_q(&mdp, lambda, tol).unwrap();
            let b = solve_q(&mdp, nu, tol).unwrap();
            let bound = (lambda - nu).abs() / (1.0 - GAMMA) + 2.0 * tol;
            prop_assert!(a.sup_dist(&b) <= bound);
        }
    }
}

//! Environment-averaged single-arm MDP: mode kernels and rewards collapsed
//! under the latent chain's stationary distribution.
//!
//! Both the planning oracle and the learner's generative sampler consume the
//! averaged dynamics, so they are materialized once per arm instead of being
//! recomputed inside inner loops. Summation runs in ascending mode order to
//! keep results bit-reproducible.

use thiserror::Error;

use crate::model::{ArmSpec, NUM_ACTIONS};

/// A single arm's averaged dynamics.
///
/// Axes: `kernel[action][s][s']`, `reward[s][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedArmMdp {
    pub num_states: usize,
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub discount: f64,
}

impl AveragedArmMdp {
    /// Largest absolute averaged reward; used for value bounds and brackets.
    pub fn r_max(&self) -> f64 {
        self.reward
            .iter()
            .flatten()
            .fold(0.0, |acc: f64, &r| acc.max(r.abs()))
    }

    /// View as a 1-mode [`ArmSpec`], the schema the `oracle` CLI dumps.
    pub fn to_single_mode_arm(&self) -> ArmSpec {
        ArmSpec {
            kernels: vec![self.kernel.clone()],
            rewards: vec![self.reward.clone()],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AveragingError {
    #[error("weight vector covers {weights} modes, arm has {modes}")]
    ModeMismatch { weights: usize, modes: usize },
}

/// Collapse an arm's mode-conditional dynamics under mode weights `mu`:
/// `reward(s,a) = sum_e mu(e) r_e(s,a)` and
/// `kernel(a)(s,s') = sum_e mu(e) p_e(s'|s,a)`.
pub fn average_arm(
    arm: &ArmSpec,
    mu: &[f64],
    discount: f64,
) -> Result<AveragedArmMdp, AveragingError> {
    if mu.len() != arm.num_modes() {
        return Err(AveragingError::ModeMismatch {
            weights: mu.len(),
            modes: arm.num_modes(),
        });
    }
    let num_states = arm.num_states();

    let mut kernel = vec![vec![vec![0.0; num_states]; num_states]; NUM_ACTIONS];
    let mut reward = vec![vec![0.0; NUM_ACTIONS]; num_states];
    for (mode, &weight) in mu.iter().enumerate() {
        for action in 0..NUM_ACTIONS {
            for s in 0..num_states {
                let row = &arm.kernels[mode][action][s];
                let out = &mut kernel[action][s];
                for (s_next, &p) in row.iter().enumerate() {
                    out[s_next] += weight * p;
                }
            }
        }
        for s in 0..num_states {
            for action in 0..NUM_ACTIONS {
                reward[s][action] += weight * arm.rewards[mode][s][action];
            }
        }
    }

    Ok(AveragedArmMdp {
        num_states,
        kernel,
        reward,
        discount,
    })
}

/// The fixed-mode MDP of a single environment state: averaging under a point
/// mass on `mode`. Used for mode-conditional index diagnostics.
pub fn mode_mdp(
    arm: &ArmSpec,
    mode: usize,
    discount: f64,
) -> Result<AveragedArmMdp, AveragingError> {
    let mut mu = vec![0.0; arm.num_modes()];
    if mode >= mu.len() {
        return Err(AveragingError::ModeMismatch {
            weights: mode + 1,
            modes: mu.len(),
        });
    }
    mu[mode] = 1.0;
    average_arm(arm, &mu, discount)
}

//! Generative simulator: advances the hidden environment mode, reveals
//! mode-dependent reward tables (never the mode itself), and draws Monte-Carlo
//! successors.
//!
//! Two sampling roles coexist and must not be conflated:
//!
//! - learning-time successors come from the environment-averaged kernel, one
//!   independent draw per (state, action) per sweep;
//! - online policy evaluation moves each arm with the mode-conditional kernel
//!   of the current hidden mode.
//!
//! # RNG streams
//!
//! All randomness is ChaCha8 seeded from one master seed, split into fixed
//! streams so that reordering arms or interleaving purposes cannot shift
//! draws:
//!
//! - stream 0: latent-chain transitions (and the initial mode draw);
//! - stream 1: learning-time successor sampling shared by every arm when tied
//!   streams are requested (lockstep mode for homogeneity experiments);
//! - stream 2 + 2i: learning-time successor sampling for arm `i`;
//! - stream 3 + 2i: online mode-conditional transitions for arm `i`.
//!
//! Identical (seed, instance) therefore reproduce every emitted number.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::averaging::AveragedArmMdp;
use crate::model::{
    stationary_distribution, ArmSpec, LatentChain, MarbleInstance, ModelError, NUM_ACTIONS,
};

const LATENT_STREAM: u64 = 0;
const TIED_SAMPLE_STREAM: u64 = 1;
const SAMPLE_STREAM_BASE: u64 = 2;
const ONLINE_STREAM_BASE: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw from a probability row by inverse CDF on one uniform.
fn sample_row(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (idx, &p) in row.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return idx;
        }
    }
    row.len() - 1 // accumulated rounding shortfall
}

/// Mutable world state for one run: the hidden mode, per-arm states, the step
/// counter, and the split RNG streams.
#[derive(Debug, Clone)]
pub struct SimState {
    latent_mode: usize,
    arm_states: Vec<usize>,
    step: u64,
    latent_rng: ChaCha8Rng,
    sample_rngs: Vec<ChaCha8Rng>,
    online_rngs: Vec<ChaCha8Rng>,
}

impl SimState {
    /// Fresh state: initial mode drawn from the stationary distribution so the
    /// mode is marginally stationary at every step; all arms start in state 0.
    pub fn new(instance: &MarbleInstance, seed: u64) -> Result<Self, ModelError> {
        Self::with_stream_layout(instance, seed, false)
    }

    /// As [`SimState::new`], but with every arm's learning-time sample stream
    /// tied to one shared stream id. Arms of a homogeneous instance then see
    /// identical draws each sweep and evolve in lockstep.
    pub fn with_tied_sample_streams(
        instance: &MarbleInstance,
        seed: u64,
    ) -> Result<Self, ModelError> {
        Self::with_stream_layout(instance, seed, true)
    }

    fn with_stream_layout(
        instance: &MarbleInstance,
        seed: u64,
        tied: bool,
    ) -> Result<Self, ModelError> {
        let mu = stationary_distribution(&instance.chain)?;
        let mut latent_rng = stream_rng(seed, LATENT_STREAM);
        let latent_mode = sample_row(&mu, &mut latent_rng);
        let num_arms = instance.num_arms();
        let sample_rngs = (0..num_arms)
            .map(|i| {
                let stream = if tied {
                    TIED_SAMPLE_STREAM
                } else {
                    SAMPLE_STREAM_BASE + 2 * i as u64
                };
                stream_rng(seed, stream)
            })
            .collect();
        let online_rngs = (0..num_arms)
            .map(|i| stream_rng(seed, ONLINE_STREAM_BASE + 2 * i as u64))
            .collect();
        Ok(Self {
            latent_mode,
            arm_states: vec![0; num_arms],
            step: 0,
            latent_rng,
            sample_rngs,
            online_rngs,
        })
    }

    /// Hidden mode, for tests only; the learner-facing surface never exposes it.
    #[cfg(test)]
    pub(crate) fn latent_mode(&self) -> usize {
        self.latent_mode
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn arm_states(&self) -> &[usize] {
        &self.arm_states
    }

    /// Advance the hidden mode one step along the chain.
    pub fn step_latent(&mut self, chain: &LatentChain) {
        let row = &chain.transition[self.latent_mode];
        self.latent_mode = sample_row(row, &mut self.latent_rng);
        self.step += 1;
    }

    /// Reward table of the current hidden mode, for all (state, action) pairs.
    /// The mode index itself is not part of the return.
    pub fn emit_rewards<'a>(&self, arm: &'a ArmSpec) -> &'a [Vec<f64>] {
        &arm.rewards[self.latent_mode]
    }

    /// One Monte-Carlo successor per (state, action) from the averaged kernel,
    /// drawn in ascending (state, action) order: `out[s][a] = s'`.
    pub fn sample_next_states(
        &mut self,
        arm_index: usize,
        averaged: &AveragedArmMdp,
    ) -> Vec<[usize; NUM_ACTIONS]> {
        let mut out = vec![[0usize; NUM_ACTIONS]; averaged.num_states];
        self.sample_next_states_into(arm_index, averaged, &mut out);
        out
    }

    pub(crate) fn sample_next_states_into(
        &mut self,
        arm_index: usize,
        averaged: &AveragedArmMdp,
        out: &mut [[usize; NUM_ACTIONS]],
    ) {
        let rng = &mut self.sample_rngs[arm_index];
        for s in 0..averaged.num_states {
            for action in 0..NUM_ACTIONS {
                out[s][action] = sample_row(&averaged.kernel[action][s], rng);
            }
        }
    }

    /// Online step of one arm under the current hidden mode: returns the
    /// realized reward and moves the arm with the mode-conditional kernel.
    pub fn step_arm_online(
        &mut self,
        instance: &MarbleInstance,
        arm_index: usize,
        action: usize,
    ) -> (usize, f64) {
        let arm = &instance.arms[arm_index];
        let state = self.arm_states[arm_index];
        let reward = arm.rewards[self.latent_mode][state][action];
        let row = &arm.kernels[self.latent_mode][action][state];
        let next = sample_row(row, &mut self.online_rngs[arm_index]);
        self.arm_states[arm_index] = next;
        (next, reward)
    }
}

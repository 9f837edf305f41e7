//! PPO and DDPG training loops with hook points through which an attack
//! engine observes and tampers with transitions.

mod adam;
mod ddpg;
mod gae;
mod ppo;
mod rollout;
mod types;

pub use adam::Adam;
pub use ddpg::{DdpgStats, DdpgTrainer, ReplayBuffer};
pub use gae::{gae, GaeOut};
pub use ppo::{PpoStats, PpoTrainer};
pub use rollout::{collect_rollout, to_env_action, RolloutOut};
pub use types::{Algorithm, DdpgConfig, PpoConfig, TrainerConfig, Trajectory, Transition};

use crate::envs::EnvError;
use crate::policy::{Policy, PolicyError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("non-finite {quantity} during {phase} update (step {step})")]
    NonFiniteLoss {
        quantity: &'static str,
        phase: &'static str,
        step: u64,
    },
    #[error("trainer configuration invalid: {0}")]
    Config(String),
}

/// Observation/transition/episode interception points. The default
/// implementations are identity, so a benign run uses `NoHooks`.
pub trait Hooks {
    /// Called with the observation the victim is about to act on; may
    /// modify it in place. `t` is the global env step (1-based for the
    /// upcoming step).
    fn on_observation(&mut self, _obs: &mut Vec<f64>, _policy: &Policy, _t: u64) {}

    /// Called with every transition before storage; returns the (possibly
    /// tampered) transition to store.
    fn on_transition(&mut self, tr: Transition, _t: u64) -> Transition {
        tr
    }

    /// Called with every complete episode trajectory as stored.
    fn on_episode_end(&mut self, _traj: &Trajectory, _t: u64) {}

    /// Called by replay-buffer trainers after each push, giving batch
    /// (outer-loop) adversaries direct access to stored transitions.
    fn on_buffer(&mut self, _buffer: &mut ReplayBuffer, _t: u64) {}
}

/// Identity hooks for benign training.
pub struct NoHooks;

impl Hooks for NoHooks {}

/// One completed episode's bookkeeping emitted by the training loops.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeRecord {
    pub end_step: u64,
    pub episode_return: f64,
    pub length: u64,
}

/// Summary of a full training run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub episodes: Vec<EpisodeRecord>,
    pub steps: u64,
}

impl TrainReport {
    /// Mean return over the last `n` completed episodes.
    pub fn recent_mean_return(&self, n: usize) -> f64 {
        let tail: Vec<f64> = self
            .episodes
            .iter()
            .rev()
            .take(n)
            .map(|e| e.episode_return)
            .collect();
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    }
}

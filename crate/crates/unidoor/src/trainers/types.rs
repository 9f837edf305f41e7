//! Shared training data types: transitions, trajectories, configuration.

use crate::backdoor::TargetAction;

/// One (state, action, reward, done, next-state) interaction record — the
/// adversary's tampering unit. Continuous actions are stored in normalized
/// [-1, 1] space. `log_prob` and `value` are populated by the PPO collector.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: TargetAction,
    pub reward: f64,
    /// MDP-level termination (not horizon truncation).
    pub done: bool,
    pub next_state: Vec<f64>,
    pub log_prob: Option<f64>,
    pub value: Option<f64>,
    /// Bookkeeping flag set by the poisoning hook.
    pub poisoned: bool,
}

/// An ordered run of transitions. `complete` episodes end in termination or
/// at the horizon; incomplete fragments are rollout-boundary splits and
/// carry a bootstrap value for advantage estimation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub complete: bool,
    /// Value of the state following the last transition; zero when the last
    /// transition terminated the episode.
    pub bootstrap_value: f64,
}

impl Trajectory {
    pub fn episode_return(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Which training algorithm drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    Ddpg,
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ppo" => Ok(Algorithm::Ppo),
            "ddpg" => Ok(Algorithm::Ddpg),
            other => Err(format!(
                "unknown algorithm '{other}' (supported: ppo, ddpg)"
            )),
        }
    }
}

/// PPO hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PpoConfig {
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub clip_eps: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            rollout_len: 2048,
            epochs: 10,
            minibatch: 64,
            clip_eps: 0.2,
            gae_lambda: 0.95,
            lr: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.0,
        }
    }
}

/// DDPG hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DdpgConfig {
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau_polyak: f64,
    pub exploration_noise_std: f64,
    pub warmup_steps: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            buffer_capacity: 100_000,
            batch_size: 128,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            tau_polyak: 0.005,
            exploration_noise_std: 0.1,
            warmup_steps: 1000,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainerConfig {
    pub algorithm: Algorithm,
    pub total_steps: usize,
    pub gamma: f64,
    pub ppo: PpoConfig,
    pub ddpg: DdpgConfig,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if self.total_steps == 0 {
            return Err("total_steps must be positive".into());
        }
        if self.ppo.rollout_len == 0 || self.ppo.minibatch == 0 || self.ppo.epochs == 0 {
            return Err("ppo rollout_len/minibatch/epochs must be positive".into());
        }
        if self.ddpg.buffer_capacity == 0 || self.ddpg.batch_size == 0 {
            return Err("ddpg buffer/batch must be positive".into());
        }
        Ok(())
    }
}

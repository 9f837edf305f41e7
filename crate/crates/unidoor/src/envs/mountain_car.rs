//! MountainCar: an underpowered car must swing between two hills to reach
//! the flag. Actions: 0 accelerate left, 1 coast, 2 accelerate right.
//!
//! The task has no fixed horizon: episodes end at the goal. A 10,000-step
//! safety cap truncates runaway episodes (without a termination signal, so
//! value bootstrapping still sees the episode as continuing); the same cap
//! bounds evaluation rollouts.

use super::{
    check_discrete, env_rng, Action, ActionSpace, EnvError, EnvName, Horizon, MdpSpec, StepOut,
};
use crate::rng::Rng;

const MIN_POSITION: f64 = -1.2;
const MAX_POSITION: f64 = 0.6;
const MAX_SPEED: f64 = 0.07;
const GOAL_POSITION: f64 = 0.5;
const GOAL_VELOCITY: f64 = 0.0;
const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;
pub const EVAL_STEP_CAP: u32 = 10_000;

#[derive(Debug, Clone)]
pub struct MountainCar {
    pub spec: MdpSpec,
    position: f64,
    velocity: f64,
    pub(super) step_count: u32,
    pub(super) done: bool,
    rng: Rng,
}

impl MountainCar {
    pub fn new(seed: u64) -> Self {
        MountainCar {
            spec: MdpSpec {
                name: EnvName::MountainCar,
                state_dim: 2,
                action_space: ActionSpace::Discrete(3),
                reward_dense: false,
                horizon: Horizon::Infinite,
                env_step_cap: Some(EVAL_STEP_CAP),
            },
            position: 0.0,
            velocity: 0.0,
            step_count: 0,
            done: false,
            rng: env_rng(seed),
        }
    }

    pub fn obs(&self) -> Vec<f64> {
        vec![self.position, self.velocity]
    }

    pub fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        if let Some(s) = seed {
            self.rng = env_rng(s);
        }
        self.position = self.rng.uniform(-0.6, -0.4);
        self.velocity = 0.0;
        self.step_count = 0;
        self.done = false;
        self.obs()
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOut, EnvError> {
        let a = check_discrete(action, 3)?;
        self.velocity += (a as f64 - 1.0) * FORCE + (3.0 * self.position).cos() * (-GRAVITY);
        self.velocity = self.velocity.clamp(-MAX_SPEED, MAX_SPEED);
        self.position += self.velocity;
        self.position = self.position.clamp(MIN_POSITION, MAX_POSITION);
        if self.position == MIN_POSITION && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        self.step_count += 1;

        let terminated = self.position >= GOAL_POSITION && self.velocity >= GOAL_VELOCITY;
        let truncated = !terminated && self.step_count >= EVAL_STEP_CAP;
        self.done = terminated || truncated;

        Ok(StepOut {
            obs: self.obs(),
            reward: -1.0,
            terminated,
            truncated,
        })
    }
}

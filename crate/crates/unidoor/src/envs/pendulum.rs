//! Pendulum: swing a pole upright with bounded torque. Observation is
//! (cos theta, sin theta, theta_dot); the action is the applied torque.

use super::{
    check_continuous, env_rng, Action, ActionSpace, EnvError, EnvName, Horizon, MdpSpec, StepOut,
};
use crate::rng::Rng;
use std::f64::consts::PI;

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_TORQUE: f64 = 2.0;
const MAX_SPEED: f64 = 8.0;
const MAX_STEPS: u32 = 200;

fn angle_normalize(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    pub spec: MdpSpec,
    theta: f64,
    theta_dot: f64,
    pub(super) step_count: u32,
    pub(super) done: bool,
    rng: Rng,
}

impl Pendulum {
    pub fn new(seed: u64) -> Self {
        Pendulum {
            spec: MdpSpec {
                name: EnvName::Pendulum,
                state_dim: 3,
                action_space: ActionSpace::Box {
                    dim: 1,
                    low: vec![-MAX_TORQUE],
                    high: vec![MAX_TORQUE],
                },
                reward_dense: true,
                horizon: Horizon::Finite(MAX_STEPS),
                env_step_cap: None,
            },
            theta: 0.0,
            theta_dot: 0.0,
            step_count: 0,
            done: false,
            rng: env_rng(seed),
        }
    }

    pub fn obs(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    pub fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        if let Some(s) = seed {
            self.rng = env_rng(s);
        }
        self.theta = self.rng.uniform(-PI, PI);
        self.theta_dot = self.rng.uniform(-1.0, 1.0);
        self.step_count = 0;
        self.done = false;
        self.obs()
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOut, EnvError> {
        let v = check_continuous(action, 1)?;
        let u = v[0].clamp(-MAX_TORQUE, MAX_TORQUE);

        let norm = angle_normalize(self.theta);
        let cost = norm * norm + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u;

        let new_theta_dot = (self.theta_dot
            + (3.0 * GRAVITY / (2.0 * LENGTH) * self.theta.sin()
                + 3.0 / (MASS * LENGTH * LENGTH) * u)
                * DT)
            .clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += new_theta_dot * DT;
        self.theta_dot = new_theta_dot;
        self.step_count += 1;

        let truncated = self.step_count >= MAX_STEPS;
        self.done = truncated;

        Ok(StepOut {
            obs: self.obs(),
            reward: -cost,
            terminated: false,
            truncated,
        })
    }
}

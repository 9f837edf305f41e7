//! CartPole: balance a pole on a cart by pushing left (0) or right (1).

use super::{
    check_discrete, env_rng, Action, ActionSpace, EnvError, EnvName, Horizon, MdpSpec, StepOut,
};
use crate::rng::Rng;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const X_THRESHOLD: f64 = 2.4;
// 12 degrees.
const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const MAX_STEPS: u32 = 500;

#[derive(Debug, Clone)]
pub struct CartPole {
    pub spec: MdpSpec,
    // x, x_dot, theta, theta_dot
    state: [f64; 4],
    pub(super) step_count: u32,
    pub(super) done: bool,
    rng: Rng,
}

impl CartPole {
    pub fn new(seed: u64) -> Self {
        CartPole {
            spec: MdpSpec {
                name: EnvName::CartPole,
                state_dim: 4,
                action_space: ActionSpace::Discrete(2),
                reward_dense: true,
                horizon: Horizon::Finite(MAX_STEPS),
                env_step_cap: None,
            },
            state: [0.0; 4],
            step_count: 0,
            done: false,
            rng: env_rng(seed),
        }
    }

    pub fn obs(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    pub fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        if let Some(s) = seed {
            self.rng = env_rng(s);
        }
        for v in &mut self.state {
            *v = self.rng.uniform(-0.05, 0.05);
        }
        self.step_count = 0;
        self.done = false;
        self.obs()
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOut, EnvError> {
        let a = check_discrete(action, 2)?;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if a == 1 { FORCE_MAG } else { -FORCE_MAG };
        let cos_theta = theta.cos();
        let sin_theta = theta.sin();

        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin_theta) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin_theta - cos_theta * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos_theta * cos_theta / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_theta / TOTAL_MASS;

        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        self.step_count += 1;

        let terminated = self.state[0].abs() > X_THRESHOLD || self.state[2].abs() > THETA_THRESHOLD;
        let truncated = !terminated && self.step_count >= MAX_STEPS;
        self.done = terminated || truncated;

        Ok(StepOut {
            obs: self.obs(),
            reward: 1.0,
            terminated,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_right_from_rest() {
        let mut env = CartPole::new(0);
        env.reset(None);
        env.state = [0.0; 4];
        let out = env.step(&Action::Discrete(1)).unwrap();
        // one Euler step: x_dot = tau * x_acc with x_acc = 9.7561...
        assert!((out.obs[1] - 0.1951).abs() < 5e-5, "x_dot = {}", out.obs[1]);
        assert_eq!(out.obs[0], 0.0);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn reset_range() {
        let mut env = CartPole::new(3);
        for _ in 0..50 {
            let obs = env.reset(None);
            for v in obs {
                assert!(v.abs() <= 0.05);
            }
        }
    }

    #[test]
    fn episode_return_bounds() {
        // always push right: the pole falls fast, return stays small but >= 1
        let mut env = CartPole::new(1);
        let mut total = 0.0;
        loop {
            let out = env.step(&Action::Discrete(1)).unwrap();
            total += out.reward;
            if out.done() {
                break;
            }
        }
        assert!((1.0..=500.0).contains(&total));
        assert!(
            total < 60.0,
            "one-sided pushing should fail quickly, got {total}"
        );
    }

    #[test]
    fn action_out_of_range() {
        let mut env = CartPole::new(0);
        assert!(matches!(
            env.step(&Action::Discrete(2)),
            Err(EnvError::ActionOutOfRange { action: 2, n: 2 })
        ));
    }
}

//! Task-agnostic performance monitoring: episode-wise benign task
//! performance (BTP) and step-wise attack success rate (ASR), both smoothed
//! with an exponentially weighted average and normalized to [0, 1].
//!
//! The ASR probe is measurement-only: it queries the policy on a triggered
//! copy of the observation and never touches the environment or the stored
//! transition stream.

use crate::backdoor::{action_matches, BackdoorTask, TargetAction};
use crate::envs::EnvName;
use crate::policy::{ActionMode, Policy, PolicyError};
use crate::rng::Rng;
use crate::trainers::Trajectory;

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("BTP bounds invalid: lower {p_l} must be below upper {p_u}")]
    BadBounds { p_l: f64, p_u: f64 },
    #[error("bound estimation needs at least one complete trajectory")]
    NoTrajectories,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Monitoring state. One smoothed ASR is kept per trigger; the scalar
/// reported to the explorer is the minimum across triggers.
#[derive(Debug, Clone)]
pub struct MonitorState {
    /// Smoothing factor in (0, 1]; 0 disables smoothing (raw values).
    pub beta: f64,
    /// Smoothed raw episode return.
    pub p_bar: f64,
    /// Normalized BTP in [0, 1].
    pub p: f64,
    pub p_l: f64,
    pub p_u: f64,
    /// Per-trigger smoothed ASR in [0, 1].
    pub asr: Vec<f64>,
    /// Norm constraint for continuous action matching.
    pub epsilon: f64,
    /// Last two (P, min ASR) pairs, shifted on each BTP update.
    history: [(f64, f64); 2],
    /// Complete trajectories observed so far.
    pub n_trajectories: u64,
    probe_cursor: usize,
}

impl MonitorState {
    pub fn new(beta: f64, epsilon: f64, n_triggers: usize, p_l: f64, p_u: f64) -> Self {
        MonitorState {
            beta,
            p_bar: 0.0,
            p: 0.0,
            p_l,
            p_u,
            asr: vec![0.0; n_triggers.max(1)],
            epsilon,
            history: [(0.0, 0.0); 2],
            n_trajectories: 0,
            probe_cursor: 0,
        }
    }

    /// Replaces the normalization bounds (used while estimates improve
    /// during the freezing phase) and recomputes the normalized BTP.
    pub fn set_bounds(&mut self, p_l: f64, p_u: f64) -> Result<(), MonitorError> {
        if p_u <= p_l {
            return Err(MonitorError::BadBounds { p_l, p_u });
        }
        self.p_l = p_l;
        self.p_u = p_u;
        self.p = ((self.p_bar - p_l) / (p_u - p_l)).clamp(0.0, 1.0);
        Ok(())
    }

    /// Folds a complete trajectory into the smoothed, normalized BTP.
    pub fn update_btp(&mut self, trajectory: &Trajectory) -> Result<(), MonitorError> {
        if self.p_u <= self.p_l {
            return Err(MonitorError::BadBounds {
                p_l: self.p_l,
                p_u: self.p_u,
            });
        }
        let raw = trajectory.episode_return();
        self.p_bar = self.beta * self.p_bar + (1.0 - self.beta) * raw;
        self.p = ((self.p_bar - self.p_l) / (self.p_u - self.p_l)).clamp(0.0, 1.0);
        self.history = [self.history[1], (self.p, self.min_asr())];
        self.n_trajectories += 1;
        Ok(())
    }

    /// Probes the policy with a triggered copy of `obs` and folds the match
    /// indicator into that trigger's smoothed ASR. Returns the indicator.
    pub fn update_asr(
        &mut self,
        policy: &Policy,
        obs: &[f64],
        task: &BackdoorTask,
        trigger_id: usize,
        mode: ActionMode,
    ) -> Result<bool, MonitorError> {
        let triggered = task.apply_trigger(obs, trigger_id);
        let mut probe_rng = Rng::new(0); // deterministic mode draws nothing
        let out = policy.act(&triggered, mode, &mut probe_rng)?;
        let matched = matches_target(&out.action, task.target_action(trigger_id), self.epsilon);
        let indicator = if matched { 1.0 } else { 0.0 };
        self.asr[trigger_id] = self.beta * self.asr[trigger_id] + (1.0 - self.beta) * indicator;
        Ok(matched)
    }

    /// Round-robin trigger index for the next probe.
    pub fn next_probe_trigger(&mut self, n_triggers: usize) -> usize {
        let id = self.probe_cursor % n_triggers;
        self.probe_cursor += 1;
        id
    }

    /// Conservative scalar ASR: the minimum across triggers.
    pub fn min_asr(&self) -> f64 {
        self.asr.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Normalized BTP with the zero-start bias divided out
    /// (`p_bar / (1 - beta^k)` after k episodes). The raw smoothed value
    /// starts at 0, which on tasks with large negative returns reads as
    /// near-perfect performance for hundreds of episodes; threshold tests
    /// such as the freeze lift need the debiased estimate.
    pub fn debiased_p(&self) -> f64 {
        if self.n_trajectories == 0 || self.beta <= 0.0 || self.beta >= 1.0 {
            return self.p;
        }
        let correction = 1.0 - self.beta.powi(self.n_trajectories as i32);
        let p_hat = self.p_bar / correction;
        ((p_hat - self.p_l) / (self.p_u - self.p_l)).clamp(0.0, 1.0)
    }

    pub fn history(&self) -> [(f64, f64); 2] {
        self.history
    }
}

pub fn matches_target(action: &TargetAction, target: &TargetAction, epsilon: f64) -> bool {
    action_matches(action, target, epsilon)
}

/// Conservative bound estimates from observed episode returns: the minimum
/// and maximum, widened symmetrically by one unit when they coincide.
pub fn estimate_bounds(returns: &[f64]) -> Result<(f64, f64), MonitorError> {
    if returns.is_empty() {
        return Err(MonitorError::NoTrajectories);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in returns {
        lo = lo.min(*r);
        hi = hi.max(*r);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    Ok((lo, hi))
}

/// Published reference bounds: the documented target score as the upper
/// bound and a documented worst case (step cap, random-policy score) as the
/// lower. Tasks without references fall back to estimation.
pub fn known_bounds(env: EnvName) -> Option<(f64, f64)> {
    match env {
        EnvName::CartPole => Some((0.0, 475.0)),
        EnvName::MountainCar => Some((-10_000.0, -110.0)),
        EnvName::Pendulum => Some((-1377.0, -160.0)),
    }
}

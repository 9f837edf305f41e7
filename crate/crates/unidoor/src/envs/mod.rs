//! Deterministic, seedable classic-control environments.
//!
//! The dynamics are bit-exact ports of the public reference implementations:
//!
//! * CartPole: gravity 9.8, cart mass 1.0, pole mass 0.1, half-length 0.5,
//!   force 10.0, Euler step tau = 0.02, failure at |x| > 2.4 or |theta| > 12
//!   degrees, +1 reward per step, 500-step horizon.
//! * MountainCar: position in [-1.2, 0.6], |velocity| <= 0.07, force 0.001,
//!   gravity term 0.0025, goal at 0.5, -1 reward per step, infinite horizon
//!   during training (a 10,000-step cap applies only at evaluation time).
//! * Pendulum: g = 10, m = 1, l = 1, dt = 0.05, torque in [-2, 2],
//!   |theta_dot| <= 8, reward -(norm(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2),
//!   200-step horizon, never terminates early.
//!
//! All stochasticity lives in `reset`; stepping is a pure function of state
//! and action, so a fixed seed plus a fixed action sequence reproduces the
//! observation stream bit for bit.

mod cartpole;
mod mountain_car;
mod pendulum;

use crate::rng::Rng;

pub use cartpole::CartPole;
pub use mountain_car::MountainCar;
pub use pendulum::Pendulum;

/// Names of the supported environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    CartPole,
    MountainCar,
    Pendulum,
}

impl EnvName {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvName::CartPole => "cartpole",
            EnvName::MountainCar => "mountaincar",
            EnvName::Pendulum => "pendulum",
        }
    }
}

impl std::str::FromStr for EnvName {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, EnvError> {
        match s.to_ascii_lowercase().as_str() {
            "cartpole" => Ok(EnvName::CartPole),
            "mountaincar" => Ok(EnvName::MountainCar),
            "pendulum" => Ok(EnvName::Pendulum),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }
}

impl std::fmt::Display for EnvName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Action space of an MDP.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Box {
        dim: usize,
        low: Vec<f64>,
        high: Vec<f64>,
    },
}

impl ActionSpace {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }

    /// Number of discrete actions or continuous dimensions.
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Box { dim, .. } => *dim,
        }
    }

    /// Maps a normalized action in [-1, 1]^dim to env units.
    pub fn scale_from_normalized(&self, normalized: &[f64]) -> Vec<f64> {
        match self {
            ActionSpace::Discrete(_) => normalized.to_vec(),
            ActionSpace::Box { low, high, .. } => normalized
                .iter()
                .zip(low.iter().zip(high))
                .map(|(a, (lo, hi))| lo + (a.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo))
                .collect(),
        }
    }
}

/// Episode horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Finite(u32),
    Infinite,
}

/// Static description of one MDP.
#[derive(Debug, Clone)]
pub struct MdpSpec {
    pub name: EnvName,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub reward_dense: bool,
    pub horizon: Horizon,
    /// Step cap used only at evaluation time for infinite-horizon tasks.
    pub env_step_cap: Option<u32>,
}

/// An action in environment units.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// One environment step outcome. `terminated` is an MDP-level ending (pole
/// fell, goal reached); `truncated` is a horizon cutoff. Value bootstrapping
/// treats only `terminated` as absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOut {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepOut {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("unknown environment '{0}' (supported: cartpole, mountaincar, pendulum)")]
    UnknownEnv(String),
    #[error("step called on a finished episode; reset first")]
    EpisodeOver,
    #[error("discrete action {action} out of range for {n} actions")]
    ActionOutOfRange { action: usize, n: usize },
    #[error("action has {got} dimensions, expected {want}")]
    ActionDim { got: usize, want: usize },
}

/// A running environment instance.
#[derive(Debug, Clone)]
pub enum Env {
    CartPole(CartPole),
    MountainCar(MountainCar),
    Pendulum(Pendulum),
}

/// Builds the named environment, seeded, with its spec. The initial
/// observation is available via [`Env::obs`] after construction.
pub fn make_env(name: EnvName, seed: u64) -> Env {
    let mut env = match name {
        EnvName::CartPole => Env::CartPole(CartPole::new(seed)),
        EnvName::MountainCar => Env::MountainCar(MountainCar::new(seed)),
        EnvName::Pendulum => Env::Pendulum(Pendulum::new(seed)),
    };
    env.reset(None);
    env
}

impl Env {
    pub fn spec(&self) -> &MdpSpec {
        match self {
            Env::CartPole(e) => &e.spec,
            Env::MountainCar(e) => &e.spec,
            Env::Pendulum(e) => &e.spec,
        }
    }

    /// Current observation vector.
    pub fn obs(&self) -> Vec<f64> {
        match self {
            Env::CartPole(e) => e.obs(),
            Env::MountainCar(e) => e.obs(),
            Env::Pendulum(e) => e.obs(),
        }
    }

    pub fn step_count(&self) -> u32 {
        match self {
            Env::CartPole(e) => e.step_count,
            Env::MountainCar(e) => e.step_count,
            Env::Pendulum(e) => e.step_count,
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            Env::CartPole(e) => e.done,
            Env::MountainCar(e) => e.done,
            Env::Pendulum(e) => e.done,
        }
    }

    /// Re-initializes the episode, reseeding the generator when a seed is
    /// given. Returns the fresh observation.
    pub fn reset(&mut self, seed: Option<u64>) -> Vec<f64> {
        match self {
            Env::CartPole(e) => e.reset(seed),
            Env::MountainCar(e) => e.reset(seed),
            Env::Pendulum(e) => e.reset(seed),
        }
    }

    /// Applies one action. Discrete actions out of range are rejected;
    /// continuous actions are clamped to the box, mirroring the reference
    /// implementations.
    pub fn step(&mut self, action: &Action) -> Result<StepOut, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeOver);
        }
        match self {
            Env::CartPole(e) => e.step(action),
            Env::MountainCar(e) => e.step(action),
            Env::Pendulum(e) => e.step(action),
        }
    }
}

pub(crate) fn check_discrete(action: &Action, n: usize) -> Result<usize, EnvError> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        Action::Discrete(a) => Err(EnvError::ActionOutOfRange { action: *a, n }),
        Action::Continuous(v) => Err(EnvError::ActionDim {
            got: v.len(),
            want: 1,
        }),
    }
}

pub(crate) fn check_continuous(action: &Action, dim: usize) -> Result<Vec<f64>, EnvError> {
    match action {
        Action::Continuous(v) if v.len() == dim => Ok(v.clone()),
        Action::Continuous(v) => Err(EnvError::ActionDim {
            got: v.len(),
            want: dim,
        }),
        Action::Discrete(_) => Err(EnvError::ActionDim { got: 0, want: dim }),
    }
}

pub(crate) const ENV_STREAM_TAG: u64 = 0x454E56; // "ENV"

pub(crate) fn env_rng(seed: u64) -> Rng {
    Rng::stream(seed, ENV_STREAM_TAG)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_env_specs() {
        let cp = make_env(EnvName::CartPole, 0);
        assert_eq!(cp.spec().state_dim, 4);
        assert_eq!(cp.spec().action_space, ActionSpace::Discrete(2));
        assert_eq!(cp.spec().horizon, Horizon::Finite(500));

        let mc = make_env(EnvName::MountainCar, 1);
        assert_eq!(mc.spec().state_dim, 2);
        assert_eq!(mc.spec().action_space, ActionSpace::Discrete(3));
        assert_eq!(mc.spec().horizon, Horizon::Infinite);
        assert_eq!(mc.spec().env_step_cap, Some(10_000));

        let pd = make_env(EnvName::Pendulum, 2);
        assert_eq!(pd.spec().state_dim, 3);
        match &pd.spec().action_space {
            ActionSpace::Box { dim, low, high } => {
                assert_eq!(*dim, 1);
                assert_eq!(low, &vec![-2.0]);
                assert_eq!(high, &vec![2.0]);
            }
            other => panic!("expected Box action space, got {other:?}"),
        }
        assert_eq!(pd.spec().horizon, Horizon::Finite(200));
    }

    #[test]
    fn unknown_env_name_rejected() {
        let err = "acrobot".parse::<EnvName>().unwrap_err();
        assert!(matches!(err, EnvError::UnknownEnv(_)));
    }

    #[test]
    fn step_after_done_rejected() {
        let mut env = make_env(EnvName::Pendulum, 0);
        for _ in 0..200 {
            env.step(&Action::Continuous(vec![0.0])).unwrap();
        }
        assert!(env.is_done());
        let err = env.step(&Action::Continuous(vec![0.0])).unwrap_err();
        assert!(matches!(err, EnvError::EpisodeOver));
    }

    #[test]
    fn determinism_bit_exact() {
        for name in [EnvName::CartPole, EnvName::MountainCar, EnvName::Pendulum] {
            let mut a = make_env(name, 42);
            let mut b = make_env(name, 42);
            assert_eq!(a.obs(), b.obs());
            let mut rng = Rng::new(9);
            for _ in 0..300 {
                let action = match a.spec().action_space {
                    ActionSpace::Discrete(n) => Action::Discrete(rng.below(n)),
                    ActionSpace::Box { .. } => Action::Continuous(vec![rng.uniform(-2.0, 2.0)]),
                };
                let ra = a.step(&action);
                let rb = b.step(&action);
                match (ra, rb) {
                    (Ok(sa), Ok(sb)) => {
                        assert_eq!(sa, sb);
                        if sa.done() {
                            let oa = a.reset(None);
                            let ob = b.reset(None);
                            assert_eq!(oa, ob);
                        }
                    }
                    (Err(_), Err(_)) => {
                        a.reset(None);
                        b.reset(None);
                    }
                    _ => panic!("divergent results"),
                }
            }
        }
    }

    #[test]
    fn reset_with_seed_repeats() {
        let mut env = make_env(EnvName::CartPole, 0);
        let a = env.reset(Some(123));
        env.step(&Action::Discrete(0)).unwrap();
        let b = env.reset(Some(123));
        assert_eq!(a, b);
    }

    #[test]
    fn normalized_action_scaling() {
        let space = ActionSpace::Box {
            dim: 1,
            low: vec![-2.0],
            high: vec![2.0],
        };
        assert_eq!(space.scale_from_normalized(&[-1.0]), vec![-2.0]);
        assert_eq!(space.scale_from_normalized(&[1.0]), vec![2.0]);
        assert_eq!(space.scale_from_normalized(&[0.0]), vec![0.0]);
        // out-of-range normalized inputs clamp
        assert_eq!(space.scale_from_normalized(&[3.0]), vec![2.0]);
    }
}

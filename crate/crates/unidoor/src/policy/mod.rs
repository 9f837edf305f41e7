//! Small MLP actor/critic policies with hand-rolled reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>` (weights row-major, then bias, per
//! layer, with the Gaussian head's state-independent log-std at the tail), so
//! optimizers and persistence treat every network uniformly.

mod loss;
pub(crate) mod net;

pub use loss::{gradient, loss_and_gradient, loss_value, LossKind, LossTerm, PpoBatchStats};

use crate::backdoor::TargetAction;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    ReLU,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputHead {
    /// Discrete distribution over logits.
    CategoricalLogits,
    /// Diagonal Gaussian over a mean vector plus a learned log-std.
    GaussianMean,
    /// Deterministic action squashed to (-1, 1).
    DeterministicTanh,
    /// Scalar value estimate.
    ScalarValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitScheme {
    Orthogonal { gain: f64 },
    XavierNormal { gain: f64 },
}

impl InitScheme {
    pub fn gain(&self) -> f64 {
        match self {
            InitScheme::Orthogonal { gain } | InitScheme::XavierNormal { gain } => *gain,
        }
    }
}

/// Network architecture: `layer_sizes` runs input through hidden widths to
/// the output dimension. `init` covers hidden layers; the final affine layer
/// uses `output_gain` with the same scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub head: OutputHead,
    pub init: InitScheme,
    pub output_gain: f64,
}

impl MlpArch {
    pub fn ppo_actor_discrete(obs_dim: usize, n_actions: usize) -> Self {
        MlpArch {
            layer_sizes: vec![obs_dim, 64, 64, n_actions],
            activation: Activation::Tanh,
            head: OutputHead::CategoricalLogits,
            init: InitScheme::Orthogonal {
                gain: std::f64::consts::SQRT_2,
            },
            output_gain: 0.01,
        }
    }

    pub fn ppo_actor_continuous(obs_dim: usize, act_dim: usize) -> Self {
        MlpArch {
            layer_sizes: vec![obs_dim, 64, 64, 64, act_dim],
            activation: Activation::Tanh,
            head: OutputHead::GaussianMean,
            init: InitScheme::Orthogonal {
                gain: std::f64::consts::SQRT_2,
            },
            output_gain: 0.01,
        }
    }

    pub fn ppo_critic(obs_dim: usize) -> Self {
        MlpArch {
            layer_sizes: vec![obs_dim, 64, 64, 1],
            activation: Activation::Tanh,
            head: OutputHead::ScalarValue,
            init: InitScheme::Orthogonal {
                gain: std::f64::consts::SQRT_2,
            },
            output_gain: 1.0,
        }
    }

    pub fn ddpg_actor(obs_dim: usize, act_dim: usize) -> Self {
        MlpArch {
            layer_sizes: vec![obs_dim, 128, 128, act_dim],
            activation: Activation::ReLU,
            head: OutputHead::DeterministicTanh,
            init: InitScheme::XavierNormal { gain: 1.0 },
            output_gain: 1.0,
        }
    }

    /// Q(s, a): the action is concatenated onto the observation.
    pub fn ddpg_critic(obs_dim: usize, act_dim: usize) -> Self {
        MlpArch {
            layer_sizes: vec![obs_dim + act_dim, 128, 128, 1],
            activation: Activation::ReLU,
            head: OutputHead::ScalarValue,
            init: InitScheme::XavierNormal { gain: 1.0 },
            output_gain: 1.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn validate(&self) -> Result<(), PolicyError> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(PolicyError::BadArch(
                "layer_sizes needs >= 2 nonzero entries".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid architecture: {0}")]
    BadArch(String),
    #[error("non-finite value produced at layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite observation")]
    NonFiniteInput,
    #[error("observation has {got} dims, policy expects {want}")]
    InputDim { got: usize, want: usize },
    #[error("operation requires head {want:?}, policy has {got:?}")]
    WrongHead { want: OutputHead, got: OutputHead },
    #[error("policy file error: {0}")]
    Persist(String),
}

/// How actions are produced from the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Deterministic,
}

/// Result of one acting step. Continuous actions are in normalized
/// [-1, 1] space; the trainer scales them to env units.
#[derive(Debug, Clone)]
pub struct ActOut {
    pub action: TargetAction,
    pub log_prob: Option<f64>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub arch: MlpArch,
    pub params: Vec<f64>,
}

/// Builds a policy with weights drawn per the arch's init scheme from the
/// seeded generator; biases and the Gaussian log-std start at zero.
pub fn init_policy(arch: MlpArch, seed: u64) -> Result<Policy, PolicyError> {
    arch.validate()?;
    let mut rng = Rng::stream(seed, 0x504F4C); // "POL"
    let params = net::init_params(&arch, &mut rng);
    Ok(Policy { arch, params })
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl Policy {
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn layout(&self) -> net::Layout {
        net::layout(&self.arch)
    }

    /// Raw head output for one observation (logits, Gaussian mean, tanh
    /// action, or value).
    pub fn head_output(&self, obs: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check_obs(obs)?;
        let lay = self.layout();
        let (out, _) = net::forward_batch(&self.arch, &lay, &self.params, obs, 1)?;
        Ok(out)
    }

    /// Activations of the last hidden layer, used for stealth reports.
    pub fn hidden_activations(&self, obs: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check_obs(obs)?;
        let lay = self.layout();
        let (_, cache) = net::forward_batch(&self.arch, &lay, &self.params, obs, 1)?;
        Ok(cache.inputs.last().unwrap().clone())
    }

    fn check_obs(&self, obs: &[f64]) -> Result<(), PolicyError> {
        if obs.len() != self.arch.input_dim() {
            return Err(PolicyError::InputDim {
                got: obs.len(),
                want: self.arch.input_dim(),
            });
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteInput);
        }
        Ok(())
    }

    /// Categorical probabilities for one observation.
    pub fn action_probs(&self, obs: &[f64]) -> Result<Vec<f64>, PolicyError> {
        match self.arch.head {
            OutputHead::CategoricalLogits => {
                let logits = self.head_output(obs)?;
                Ok(log_softmax(&logits).iter().map(|lp| lp.exp()).collect())
            }
            got => Err(PolicyError::WrongHead {
                want: OutputHead::CategoricalLogits,
                got,
            }),
        }
    }

    /// The Gaussian head's standard deviations (state-independent).
    pub fn gaussian_std(&self) -> Option<Vec<f64>> {
        let lay = self.layout();
        lay.log_std_off.map(|off| {
            self.params[off..off + self.arch.output_dim()]
                .iter()
                .map(|ls| ls.exp())
                .collect()
        })
    }

    /// Value estimate of a ScalarValue-headed network.
    pub fn value(&self, obs: &[f64]) -> Result<f64, PolicyError> {
        match self.arch.head {
            OutputHead::ScalarValue => Ok(self.head_output(obs)?[0]),
            got => Err(PolicyError::WrongHead {
                want: OutputHead::ScalarValue,
                got,
            }),
        }
    }

    /// Acts on one observation. Sampling draws from the head's distribution;
    /// Deterministic takes the argmax (categorical, lowest index on ties) or
    /// the mean / tanh output (continuous). Gaussian samples are returned
    /// raw with their exact log-prob (the env boundary clamps to the box);
    /// the deterministic mean is clamped to [-1, 1], the executed action.
    pub fn act(&self, obs: &[f64], mode: ActionMode, rng: &mut Rng) -> Result<ActOut, PolicyError> {
        let out = self.head_output(obs)?;
        match self.arch.head {
            OutputHead::CategoricalLogits => {
                let logp = log_softmax(&out);
                let idx = match mode {
                    ActionMode::Deterministic => {
                        let mut best = 0;
                        for (i, lp) in logp.iter().enumerate() {
                            if *lp > logp[best] {
                                best = i;
                            }
                        }
                        best
                    }
                    ActionMode::Sample => {
                        let u = rng.next_f64();
                        let mut cum = 0.0;
                        let mut chosen = logp.len() - 1;
                        for (i, lp) in logp.iter().enumerate() {
                            cum += lp.exp();
                            if u < cum {
                                chosen = i;
                                break;
                            }
                        }
                        chosen
                    }
                };
                Ok(ActOut {
                    action: TargetAction::Discrete(idx),
                    log_prob: Some(logp[idx]),
                    value: None,
                })
            }
            OutputHead::GaussianMean => {
                let std = self.gaussian_std().unwrap();
                let action: Vec<f64> = match mode {
                    ActionMode::Deterministic => out.iter().map(|m| m.clamp(-1.0, 1.0)).collect(),
                    ActionMode::Sample => out
                        .iter()
                        .zip(&std)
                        .map(|(m, s)| m + s * rng.normal())
                        .collect(),
                };
                let log_prob = gaussian_log_prob(&out, &std, &action);
                Ok(ActOut {
                    action: TargetAction::Continuous(action),
                    log_prob: Some(log_prob),
                    value: None,
                })
            }
            OutputHead::DeterministicTanh => Ok(ActOut {
                action: TargetAction::Continuous(out),
                log_prob: None,
                value: None,
            }),
            OutputHead::ScalarValue => Ok(ActOut {
                action: TargetAction::Continuous(Vec::new()),
                log_prob: None,
                value: Some(out[0]),
            }),
        }
    }

    /// Log-probability of a given (normalized) action under the policy.
    pub fn log_prob(&self, obs: &[f64], action: &TargetAction) -> Result<f64, PolicyError> {
        let out = self.head_output(obs)?;
        match (&self.arch.head, action) {
            (OutputHead::CategoricalLogits, TargetAction::Discrete(a)) => Ok(log_softmax(&out)[*a]),
            (OutputHead::GaussianMean, TargetAction::Continuous(a)) => {
                let std = self.gaussian_std().unwrap();
                Ok(gaussian_log_prob(&out, &std, a))
            }
            _ => Err(PolicyError::WrongHead {
                want: OutputHead::CategoricalLogits,
                got: self.arch.head,
            }),
        }
    }
}

pub(crate) fn gaussian_log_prob(mean: &[f64], std: &[f64], action: &[f64]) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
    mean.iter()
        .zip(std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) / s;
            -HALF_LN_2PI - s.ln() - 0.5 * z * z
        })
        .sum()
}

/// Versioned JSON persistence. Finite f64 values round-trip bit-exactly
/// through the shortest-representation float encoding.
#[derive(Serialize, Deserialize)]
struct PolicyFile {
    version: u32,
    arch: MlpArch,
    params: Vec<f64>,
}

const POLICY_FILE_VERSION: u32 = 1;

pub fn save_policy(policy: &Policy, path: &std::path::Path) -> Result<(), PolicyError> {
    let file = PolicyFile {
        version: POLICY_FILE_VERSION,
        arch: policy.arch.clone(),
        params: policy.params.clone(),
    };
    let json = serde_json::to_string(&file).map_err(|e| PolicyError::Persist(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| PolicyError::Persist(e.to_string()))
}

pub fn load_policy(path: &std::path::Path) -> Result<Policy, PolicyError> {
    let text = std::fs::read_to_string(path).map_err(|e| PolicyError::Persist(e.to_string()))?;
    let file: PolicyFile =
        serde_json::from_str(&text).map_err(|e| PolicyError::Persist(e.to_string()))?;
    if file.version != POLICY_FILE_VERSION {
        return Err(PolicyError::Persist(format!(
            "unsupported version {}",
            file.version
        )));
    }
    let expect = net::layout(&file.arch).n_params;
    if file.params.len() != expect {
        return Err(PolicyError::Persist(format!(
            "parameter count {} does not match arch (expected {expect})",
            file.params.len()
        )));
    }
    Ok(Policy {
        arch: file.arch,
        params: file.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biases_and_log_std_zero_after_init() {
        let policy = init_policy(MlpArch::ppo_actor_continuous(3, 1), 0).unwrap();
        let lay = policy.layout();
        for ls in &lay.layers {
            for b in &policy.params[ls.b_off..ls.b_off + ls.dout] {
                assert_eq!(*b, 0.0);
            }
        }
        let off = lay.log_std_off.unwrap();
        assert_eq!(policy.params[off], 0.0);
        assert_eq!(policy.gaussian_std().unwrap(), vec![1.0]);
    }

    #[test]
    fn init_deterministic() {
        let a = init_policy(MlpArch::ppo_actor_discrete(4, 2), 7).unwrap();
        let b = init_policy(MlpArch::ppo_actor_discrete(4, 2), 7).unwrap();
        assert_eq!(a.params, b.params);
        let c = init_policy(MlpArch::ppo_actor_discrete(4, 2), 8).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn zero_weight_categorical_uniform() {
        let mut policy = init_policy(MlpArch::ppo_actor_discrete(4, 3), 0).unwrap();
        policy.params.iter_mut().for_each(|p| *p = 0.0);
        let probs = policy.action_probs(&[0.3, -0.2, 0.05, 0.9]).unwrap();
        for p in &probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let mut rng = Rng::new(0);
        let out = policy
            .act(&[0.3, -0.2, 0.05, 0.9], ActionMode::Deterministic, &mut rng)
            .unwrap();
        assert_eq!(out.action, TargetAction::Discrete(0));
    }

    #[test]
    fn gaussian_log_prob_at_mean() {
        // std = 1: log density at the mean is -0.5 ln(2 pi) per dimension
        let lp = gaussian_log_prob(&[0.5], &[1.0], &[0.5]);
        assert!((lp - (-0.918_938_533_204_672_7)).abs() < 1e-12);
        let lp2 = gaussian_log_prob(&[0.5, -0.1], &[1.0, 1.0], &[0.5, -0.1]);
        assert!((lp2 - 2.0 * (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn categorical_sampling_matches_probs() {
        let policy = init_policy(MlpArch::ppo_actor_discrete(4, 2), 3).unwrap();
        let obs = [0.4, -0.1, 0.02, 0.3];
        let probs = policy.action_probs(&obs).unwrap();
        let mut rng = Rng::new(5);
        let n = 100_000;
        let mut counts = [0usize; 2];
        for _ in 0..n {
            match policy
                .act(&obs, ActionMode::Sample, &mut rng)
                .unwrap()
                .action
            {
                TargetAction::Discrete(a) => counts[a] += 1,
                _ => unreachable!(),
            }
        }
        for (i, c) in counts.iter().enumerate() {
            let freq = *c as f64 / n as f64;
            assert!(
                (freq - probs[i]).abs() < 0.01,
                "action {i}: {freq} vs {}",
                probs[i]
            );
        }
    }

    #[test]
    fn softmax_stable_for_large_logits() {
        let lp = log_softmax(&[50.0, -50.0]);
        assert!(lp.iter().all(|v| v.is_finite()));
        assert!((lp[0].exp() + lp[1].exp() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_observation_rejected() {
        let policy = init_policy(MlpArch::ppo_critic(4), 0).unwrap();
        let err = policy.value(&[0.0, f64::NAN, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, PolicyError::NonFiniteInput));
    }

    #[test]
    fn deterministic_mode_pure() {
        let policy = init_policy(MlpArch::ddpg_actor(3, 1), 2).unwrap();
        let obs = [0.1, 0.9, -3.0];
        let mut r1 = Rng::new(1);
        let mut r2 = Rng::new(99);
        let a = policy
            .act(&obs, ActionMode::Deterministic, &mut r1)
            .unwrap();
        let b = policy
            .act(&obs, ActionMode::Deterministic, &mut r2)
            .unwrap();
        assert_eq!(a.action, b.action);
        match a.action {
            TargetAction::Continuous(v) => assert!(v[0] > -1.0 && v[0] < 1.0),
            _ => panic!("expected continuous"),
        }
    }

    #[test]
    fn persistence_round_trip_bit_exact() {
        let policy = init_policy(MlpArch::ppo_actor_continuous(3, 1), 11).unwrap();
        let dir = std::env::temp_dir().join("unidoor_policy_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.json");
        save_policy(&policy, &path).unwrap();
        let loaded = load_policy(&path).unwrap();
        assert_eq!(policy.arch, loaded.arch);
        assert_eq!(policy.params.len(), loaded.params.len());
        for (a, b) in policy.params.iter().zip(&loaded.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

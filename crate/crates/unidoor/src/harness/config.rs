//! Experiment configuration: per-env defaults plus a plain-text key/value
//! config file with `[section]` grouping. Every default is overridable; the
//! effective config is echoed into the report for provenance.

use crate::attack::{AblationFlags, AttackStrategy, FreezeMode, PoisonParadigm};
use crate::envs::EnvName;
use crate::trainers::{Algorithm, TrainerConfig};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown config key '{key}' in section [{section}]")]
    UnknownKey { key: String, section: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
}

/// Attack knobs beyond the trainer hyperparameters.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AttackKnobs {
    pub paradigm: PoisonParadigm,
    pub poison_interval: u64,
    pub tamper_freq: u64,
    pub rho: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub phi_t: u64,
    pub phi_p: f64,
    pub freeze_mode: FreezeMode,
    /// Exploration step size; derived from the reward-space floor when absent.
    pub omega: Option<f64>,
    pub e_n: f64,
    pub e_b: f64,
    pub t_b_frac: f64,
    pub t_n_frac: f64,
    pub probe_interval: u64,
    /// Exploration check cadence; defaults to the PPO rollout length.
    pub explore_interval: Option<u64>,
    pub converge_window: usize,
}

impl AttackKnobs {
    fn for_env(env: EnvName) -> Self {
        AttackKnobs {
            paradigm: PoisonParadigm::InnerLoop,
            poison_interval: 32,
            tamper_freq: 2,
            rho: 0.025,
            epsilon: 0.05,
            beta: 0.99,
            phi_t: 10,
            phi_p: 0.05,
            freeze_mode: match env {
                // sparse rewards and an infinite horizon make trajectory
                // counting too slow a signal here
                EnvName::MountainCar => FreezeMode::HighComplexity,
                _ => FreezeMode::LowComplexity,
            },
            omega: None,
            e_n: 0.97,
            e_b: 0.97,
            t_b_frac: 0.50,
            t_n_frac: 0.75,
            probe_interval: 10,
            explore_interval: None,
            converge_window: 3,
        }
    }
}

/// How BTP normalization bounds are obtained.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum BoundsMode {
    /// Published reference bounds when available, otherwise estimated.
    Auto,
    /// Always estimate from freezing-phase trajectories.
    Estimate,
    /// Fixed (lower, upper).
    Fixed(f64, f64),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum RunMode {
    FromScratch,
    /// Load pre-trained actor/critic from this run directory and attack in
    /// the post-training phase (freezing is skipped).
    PostTraining(PathBuf),
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EvalConfig {
    pub episodes: usize,
    pub probes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 30,
            probes: 1000,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ExperimentConfig {
    pub env: EnvName,
    pub algorithm: Algorithm,
    pub trainer: TrainerConfig,
    /// None trains benignly (no attack wiring at all).
    #[serde(serialize_with = "serialize_strategy")]
    pub strategy: Option<AttackStrategy>,
    pub tasks: Vec<usize>,
    pub attack: AttackKnobs,
    pub flags: AblationFlags,
    pub seeds: Vec<u64>,
    pub mode: RunMode,
    pub bounds: BoundsMode,
    pub eval: EvalConfig,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

fn serialize_strategy<S: serde::Serializer>(
    s: &Option<AttackStrategy>,
    ser: S,
) -> Result<S::Ok, S::Error> {
    match s {
        None => ser.serialize_str("benign"),
        Some(AttackStrategy::Fixed { r }) => ser.serialize_str(&format!("fixed:{r}")),
        Some(AttackStrategy::BadRl { min_pos_reward }) => {
            ser.serialize_str(&format!("badrl:{min_pos_reward}"))
        }
        Some(other) => ser.serialize_str(other.name()),
    }
}

/// Per-environment trainer defaults. PPO follows lr 3e-4 / rollout 2048 /
/// clip 0.2 everywhere; MountainCar adds an entropy bonus for its sparse
/// exploration problem.
pub fn default_trainer(env: EnvName, algorithm: Algorithm) -> TrainerConfig {
    let mut cfg = TrainerConfig {
        algorithm,
        total_steps: 200_000,
        gamma: 0.99,
        ppo: Default::default(),
        ddpg: Default::default(),
    };
    match (env, algorithm) {
        (EnvName::CartPole, _) => {
            cfg.total_steps = 300_000;
        }
        (EnvName::MountainCar, _) => {
            cfg.total_steps = 300_000;
            cfg.ppo.entropy_coef = 0.01;
        }
        (EnvName::Pendulum, Algorithm::Ppo) => {
            cfg.total_steps = 300_000;
        }
        (EnvName::Pendulum, Algorithm::Ddpg) => {
            cfg.total_steps = 50_000;
        }
    }
    cfg
}

impl ExperimentConfig {
    pub fn new(env: EnvName, algorithm: Algorithm) -> Self {
        ExperimentConfig {
            env,
            algorithm,
            trainer: default_trainer(env, algorithm),
            strategy: None,
            tasks: Vec::new(),
            attack: AttackKnobs::for_env(env),
            flags: AblationFlags::default(),
            seeds: vec![1, 2, 3],
            mode: RunMode::FromScratch,
            bounds: BoundsMode::Auto,
            eval: EvalConfig::default(),
            out_dir: PathBuf::from("runs/out"),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be non-empty".into()));
        }
        self.trainer.validate().map_err(ConfigError::Invalid)?;
        for &idx in &self.tasks {
            let task =
                crate::backdoor::catalog(idx).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if task.env != self.env {
                return Err(ConfigError::Invalid(format!(
                    "backdoor task {idx} targets {}, config env is {}",
                    task.env, self.env
                )));
            }
        }
        if self.strategy.is_some() && self.tasks.is_empty() {
            return Err(ConfigError::Invalid(
                "attack runs need at least one task".into(),
            ));
        }
        if self.algorithm == Algorithm::Ddpg && self.env != EnvName::Pendulum {
            return Err(ConfigError::Invalid(
                "ddpg supports continuous action spaces only (pendulum)".into(),
            ));
        }
        if self.attack.paradigm == PoisonParadigm::OuterLoop && self.algorithm != Algorithm::Ddpg {
            return Err(ConfigError::Invalid(
                "outer-loop poisoning tampers the replay buffer; it requires the ddpg trainer"
                    .into(),
            ));
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(v: &str, line: usize) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| ConfigError::Parse {
        line,
        msg: format!("'{v}': {e}"),
    })
}

fn parse_list<T: std::str::FromStr>(v: &str, line: usize) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(s, line))
        .collect()
}

fn parse_bool(v: &str, line: usize) -> Result<bool, ConfigError> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(ConfigError::Parse {
            line,
            msg: format!("expected boolean, got '{other}'"),
        }),
    }
}

/// Parses config text. `env` (and optionally `algorithm`) select the
/// defaults; every other key overrides one field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    // first pass: collect (section, key, value, line)
    let mut entries: Vec<(String, String, String, usize)> = Vec::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            if !content.ends_with(']') {
                return Err(ConfigError::Parse {
                    line,
                    msg: "unterminated section header".into(),
                });
            }
            section = content[1..content.len() - 1].trim().to_string();
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(ConfigError::Parse {
                line,
                msg: "expected key = value".into(),
            });
        };
        entries.push((
            section.clone(),
            k.trim().to_string(),
            v.trim().to_string(),
            line,
        ));
    }

    let find = |sec: &str, key: &str| {
        entries
            .iter()
            .find(|(s, k, _, _)| s == sec && k == key)
            .map(|(_, _, v, l)| (v.clone(), *l))
    };
    let (env_str, env_line) = find("", "env").ok_or(ConfigError::Parse {
        line: 0,
        msg: "missing required key 'env'".into(),
    })?;
    let env: EnvName = env_str.parse().map_err(|e| ConfigError::Parse {
        line: env_line,
        msg: format!("{e}"),
    })?;
    let algorithm: Algorithm = match find("", "algorithm") {
        Some((v, l)) => parse(&v, l)?,
        None => Algorithm::Ppo,
    };
    let mut cfg = ExperimentConfig::new(env, algorithm);

    for (section, key, value, line) in entries {
        let l = line;
        match (section.as_str(), key.as_str()) {
            ("", "env") | ("", "algorithm") => {}
            ("", "strategy") => {
                cfg.strategy = if value == "benign" {
                    None
                } else {
                    Some(parse(&value, l)?)
                };
            }
            ("", "tasks") => cfg.tasks = parse_list(&value, l)?,
            ("", "seeds") => cfg.seeds = parse_list(&value, l)?,
            ("", "out") => cfg.out_dir = PathBuf::from(value),
            ("", "mode") => {
                cfg.mode = if value == "from_scratch" {
                    RunMode::FromScratch
                } else if let Some(path) = value.strip_prefix("post_training:") {
                    RunMode::PostTraining(PathBuf::from(path.trim()))
                } else {
                    return Err(ConfigError::Parse {
                        line: l,
                        msg: format!(
                            "mode must be from_scratch or post_training:<dir>, got '{value}'"
                        ),
                    });
                };
            }
            ("", "bounds") => {
                cfg.bounds = match value.as_str() {
                    "auto" => BoundsMode::Auto,
                    "estimate" => BoundsMode::Estimate,
                    pair => {
                        let parts: Vec<f64> = parse_list(pair, l)?;
                        if parts.len() != 2 || parts[0] >= parts[1] {
                            return Err(ConfigError::Parse {
                                line: l,
                                msg: "bounds must be auto, estimate, or lo,hi".into(),
                            });
                        }
                        BoundsMode::Fixed(parts[0], parts[1])
                    }
                };
            }
            ("trainer", "total_steps") => cfg.trainer.total_steps = parse(&value, l)?,
            ("trainer", "gamma") => cfg.trainer.gamma = parse(&value, l)?,
            ("ppo", "rollout_len") => cfg.trainer.ppo.rollout_len = parse(&value, l)?,
            ("ppo", "epochs") => cfg.trainer.ppo.epochs = parse(&value, l)?,
            ("ppo", "minibatch") => cfg.trainer.ppo.minibatch = parse(&value, l)?,
            ("ppo", "clip_eps") => cfg.trainer.ppo.clip_eps = parse(&value, l)?,
            ("ppo", "gae_lambda") => cfg.trainer.ppo.gae_lambda = parse(&value, l)?,
            ("ppo", "lr") => cfg.trainer.ppo.lr = parse(&value, l)?,
            ("ppo", "value_coef") => cfg.trainer.ppo.value_coef = parse(&value, l)?,
            ("ppo", "entropy_coef") => cfg.trainer.ppo.entropy_coef = parse(&value, l)?,
            ("ddpg", "buffer_capacity") => cfg.trainer.ddpg.buffer_capacity = parse(&value, l)?,
            ("ddpg", "batch_size") => cfg.trainer.ddpg.batch_size = parse(&value, l)?,
            ("ddpg", "actor_lr") => cfg.trainer.ddpg.actor_lr = parse(&value, l)?,
            ("ddpg", "critic_lr") => cfg.trainer.ddpg.critic_lr = parse(&value, l)?,
            ("ddpg", "tau_polyak") => cfg.trainer.ddpg.tau_polyak = parse(&value, l)?,
            ("ddpg", "exploration_noise_std") => {
                cfg.trainer.ddpg.exploration_noise_std = parse(&value, l)?
            }
            ("ddpg", "warmup_steps") => cfg.trainer.ddpg.warmup_steps = parse(&value, l)?,
            ("attack", "paradigm") => {
                cfg.attack.paradigm = match value.as_str() {
                    "inner" | "inner_loop" => PoisonParadigm::InnerLoop,
                    "outer" | "outer_loop" => PoisonParadigm::OuterLoop,
                    other => {
                        return Err(ConfigError::Parse {
                            line: l,
                            msg: format!("paradigm must be inner or outer, got '{other}'"),
                        })
                    }
                };
            }
            ("attack", "poison_interval") => cfg.attack.poison_interval = parse(&value, l)?,
            ("attack", "tamper_freq") => cfg.attack.tamper_freq = parse(&value, l)?,
            ("attack", "rho") => cfg.attack.rho = parse(&value, l)?,
            ("attack", "epsilon") => cfg.attack.epsilon = parse(&value, l)?,
            ("attack", "beta") => cfg.attack.beta = parse(&value, l)?,
            ("attack", "phi_t") => cfg.attack.phi_t = parse(&value, l)?,
            ("attack", "phi_p") => cfg.attack.phi_p = parse(&value, l)?,
            ("attack", "freeze_mode") => {
                cfg.attack.freeze_mode = match value.as_str() {
                    "low" | "low_complexity" => FreezeMode::LowComplexity,
                    "high" | "high_complexity" => FreezeMode::HighComplexity,
                    other => {
                        return Err(ConfigError::Parse {
                            line: l,
                            msg: format!("freeze_mode must be low or high, got '{other}'"),
                        })
                    }
                };
            }
            ("attack", "omega") => cfg.attack.omega = Some(parse(&value, l)?),
            ("attack", "e_n") => cfg.attack.e_n = parse(&value, l)?,
            ("attack", "e_b") => cfg.attack.e_b = parse(&value, l)?,
            ("attack", "t_b_frac") => cfg.attack.t_b_frac = parse(&value, l)?,
            ("attack", "t_n_frac") => cfg.attack.t_n_frac = parse(&value, l)?,
            ("attack", "probe_interval") => cfg.attack.probe_interval = parse(&value, l)?,
            ("attack", "explore_interval") => cfg.attack.explore_interval = Some(parse(&value, l)?),
            ("attack", "converge_window") => cfg.attack.converge_window = parse(&value, l)?,
            ("ablate", "no_ewa") => cfg.flags.no_ewa = parse_bool(&value, l)?,
            ("ablate", "no_freeze") => cfg.flags.no_freeze = parse_bool(&value, l)?,
            ("ablate", "no_action_tamper") => cfg.flags.no_action_tamper = parse_bool(&value, l)?,
            ("ablate", "no_adaptive") => cfg.flags.no_adaptive = parse_bool(&value, l)?,
            ("eval", "episodes") => cfg.eval.episodes = parse(&value, l)?,
            ("eval", "probes") => cfg.eval.probes = parse(&value, l)?,
            (s, k) => {
                return Err(ConfigError::UnknownKey {
                    key: k.to_string(),
                    section: s.to_string(),
                })
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}

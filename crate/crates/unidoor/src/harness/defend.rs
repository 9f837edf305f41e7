//! Retraining defenses: plain fine-tuning at the original learning rate
//! and super-fine-tuning with a cycled learning rate, both continuing
//! benign training with no poisoning while tracking BTP and ASR.

use super::HarnessError;
use crate::backdoor::{action_matches, BackdoorTask};
use crate::envs::Env;
use crate::policy::{ActionMode, Policy};
use crate::rng::Rng;
use crate::trainers::{Algorithm, NoHooks, PpoTrainer, TrainerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefendMode {
    FineTune,
    SuperFineTune,
}

impl std::str::FromStr for DefendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "finetune" | "fine_tune" => Ok(DefendMode::FineTune),
            "superfinetune" | "super_fine_tune" => Ok(DefendMode::SuperFineTune),
            other => Err(format!("unknown defend mode '{other}'")),
        }
    }
}

/// One point of the retraining curves, recorded per update cycle.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DefendPoint {
    pub step: u64,
    pub btp: f64,
    pub asr: f64,
    pub lr: f64,
}

const LR_CYCLE_UPDATES: usize = 10;
const LR_HIGH_FACTOR: f64 = 10.0;
const LR_LOW_FACTOR: f64 = 0.1;
const PROBE_POOL: usize = 256;

/// Continues benign training of a (backdoored) policy for `steps` env
/// steps. FineTune keeps the original learning rate; SuperFineTune cycles
/// it between 10x and 0.1x the base every ten updates. Returns the
/// retrained policy and BTP/ASR curves.
#[allow(clippy::too_many_arguments)]
pub fn defend(
    actor: Policy,
    critic: Policy,
    env: &mut Env,
    tasks: &[BackdoorTask],
    mode: DefendMode,
    steps: usize,
    mut trainer_cfg: TrainerConfig,
    bounds: (f64, f64),
    epsilon: f64,
    seed: u64,
) -> Result<(Policy, Vec<DefendPoint>), HarnessError> {
    if steps == 0 {
        return Ok((actor, Vec::new()));
    }
    if trainer_cfg.algorithm != Algorithm::Ppo {
        return Err(HarnessError::Mismatch(
            "retraining defenses support the ppo trainer".into(),
        ));
    }
    trainer_cfg.total_steps = steps;
    let base_lr = trainer_cfg.ppo.lr;
    let mut trainer = PpoTrainer::from_policies(actor, critic, trainer_cfg, seed)?;
    let mut rng = Rng::stream(seed, 0x444546); // "DEF"

    // fixed probe pool: states gathered under the current policy once, so
    // ASR is measured on the same inputs across the whole curve
    let mut probe_pool: Vec<Vec<f64>> = Vec::with_capacity(PROBE_POOL);
    env.reset(Some(seed));
    while probe_pool.len() < PROBE_POOL {
        let obs = env.obs();
        let out = trainer.actor.act(&obs, ActionMode::Sample, &mut rng)?;
        probe_pool.push(obs);
        let step = env.step(&crate::trainers::to_env_action(
            &out.action,
            &env.spec().action_space,
        ))?;
        if step.done() {
            env.reset(None);
        }
    }
    env.reset(None);

    let pairs: Vec<(usize, usize)> = tasks
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.n_triggers()).map(move |j| (i, j)))
        .collect();
    let measure_asr = |policy: &Policy, rng: &mut Rng| -> Result<f64, HarnessError> {
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let mut hit = 0usize;
        let mut total = 0usize;
        for (k, state) in probe_pool.iter().enumerate() {
            let (ti, tj) = pairs[k % pairs.len()];
            let triggered = tasks[ti].apply_trigger(state, tj);
            let out = policy.act(&triggered, ActionMode::Deterministic, rng)?;
            if action_matches(&out.action, tasks[ti].target_action(tj), epsilon) {
                hit += 1;
            }
            total += 1;
        }
        Ok(hit as f64 / total as f64)
    };

    let (p_l, p_u) = bounds;
    let mut curves = Vec::new();
    let mut updates = 0usize;
    let mut last_btp = 0.0;
    while trainer.global_step < steps as u64 {
        let lr = match mode {
            DefendMode::FineTune => base_lr,
            DefendMode::SuperFineTune => {
                if (updates / LR_CYCLE_UPDATES).is_multiple_of(2) {
                    base_lr * LR_HIGH_FACTOR
                } else {
                    base_lr * LR_LOW_FACTOR
                }
            }
        };
        trainer.set_lr(lr);
        let episodes = trainer.step_cycle(env, &mut NoHooks)?;
        updates += 1;
        if !episodes.is_empty() {
            let mean: f64 =
                episodes.iter().map(|e| e.episode_return).sum::<f64>() / episodes.len() as f64;
            last_btp = ((mean - p_l) / (p_u - p_l)).clamp(0.0, 1.0);
        }
        let asr = measure_asr(&trainer.actor, &mut rng)?;
        curves.push(DefendPoint {
            step: trainer.global_step,
            btp: last_btp,
            asr,
            lr,
        });
    }
    Ok((trainer.actor, curves))
}

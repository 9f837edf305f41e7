//! Config-driven experiment orchestration: per-seed training with attack
//! wiring, final evaluation, artifact emission, and cross-seed aggregation.

use super::config::{BoundsMode, ExperimentConfig, RunMode};
use super::evaluate::{evaluate, Evaluation};
use super::report::{write_run_csv, write_timeline_charts};
use super::HarnessError;
use crate::attack::{AttackEngine, AttackParams, TimelineRow};
use crate::backdoor::{catalog, BackdoorTask};
use crate::envs::make_env;
use crate::monitor::known_bounds;
use crate::policy::{load_policy, save_policy, Policy};
use crate::trainers::{
    Algorithm, DdpgTrainer, Hooks, NoHooks, PpoTrainer, TrainReport, TrainerConfig,
};
use std::path::Path;

/// Everything produced by one seed's run.
#[derive(Debug, serde::Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub evaluation: Option<Evaluation>,
    pub error: Option<String>,
    pub freeze_lift_step: Option<u64>,
    pub poisoned_transitions: u64,
    pub final_r_dagger: f64,
    pub bounds_used: (f64, f64),
    pub episodes: usize,
    pub steps: u64,
    pub mean_recent_return: f64,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Aggregate {
    pub median_btp: f64,
    pub median_asr: f64,
    pub median_cp: f64,
    pub mean_btp: f64,
    pub mean_asr: f64,
    pub mean_cp: f64,
}

#[derive(Debug, serde::Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedOutcome>,
    pub aggregate: Option<Aggregate>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn aggregate(outcomes: &[SeedOutcome]) -> Option<Aggregate> {
    let evals: Vec<&Evaluation> = outcomes
        .iter()
        .filter_map(|o| o.evaluation.as_ref())
        .collect();
    if evals.is_empty() {
        return None;
    }
    let mut btp: Vec<f64> = evals.iter().map(|e| e.btp).collect();
    let mut asr: Vec<f64> = evals.iter().map(|e| e.asr).collect();
    let mut cp: Vec<f64> = evals.iter().map(|e| e.cp).collect();
    let n = evals.len() as f64;
    Some(Aggregate {
        mean_btp: btp.iter().sum::<f64>() / n,
        mean_asr: asr.iter().sum::<f64>() / n,
        mean_cp: cp.iter().sum::<f64>() / n,
        median_btp: median(&mut btp),
        median_asr: median(&mut asr),
        median_cp: median(&mut cp),
    })
}

pub fn load_tasks(indices: &[usize]) -> Result<Vec<BackdoorTask>, HarnessError> {
    indices
        .iter()
        .map(|&i| catalog(i).map_err(HarnessError::from))
        .collect()
}

fn resolve_bounds(config: &ExperimentConfig) -> Option<(f64, f64)> {
    match config.bounds {
        BoundsMode::Fixed(lo, hi) => Some((lo, hi)),
        BoundsMode::Auto => known_bounds(config.env),
        BoundsMode::Estimate => None,
    }
}

/// The trained networks a seed run leaves behind.
pub struct TrainedPolicies {
    pub actor: Policy,
    pub critic: Policy,
}

fn load_pair(dir: &Path) -> Result<TrainedPolicies, HarnessError> {
    let actor = load_policy(&dir.join("actor.json"))?;
    let critic = load_policy(&dir.join("critic.json"))?;
    Ok(TrainedPolicies { actor, critic })
}

/// Loads the actor/critic pair for a seed, accepting either a seed
/// directory or a run directory containing `seed_<n>/`.
pub fn load_seed_policies(dir: &Path, seed: u64) -> Result<TrainedPolicies, HarnessError> {
    let seed_dir = dir.join(format!("seed_{seed}"));
    if seed_dir.join("actor.json").exists() {
        load_pair(&seed_dir)
    } else {
        load_pair(dir)
    }
}

fn build_engine(
    config: &ExperimentConfig,
    tasks: &[BackdoorTask],
    bounds: Option<(f64, f64)>,
    post_training: bool,
    seed: u64,
) -> Result<AttackEngine, HarnessError> {
    let strategy = config.strategy.expect("attack engine needs a strategy");
    let mut flags = config.flags;
    if post_training {
        // a well-trained policy has no cold-start phase to protect
        flags.no_freeze = true;
    }
    let explore_interval = config
        .attack
        .explore_interval
        .unwrap_or(config.trainer.ppo.rollout_len as u64);
    Ok(AttackEngine::new(AttackParams {
        strategy,
        tasks: tasks.to_vec(),
        poison: crate::attack::PoisonConfig {
            poison_interval: config.attack.poison_interval,
            tamper_freq: config.attack.tamper_freq,
            rho: config.attack.rho,
            epsilon: config.attack.epsilon,
        },
        paradigm: config.attack.paradigm,
        beta: config.attack.beta,
        freeze_mode: config.attack.freeze_mode,
        phi_t: config.attack.phi_t,
        phi_p: config.attack.phi_p,
        omega: config.attack.omega,
        e_n: config.attack.e_n,
        e_b: config.attack.e_b,
        t_b_frac: config.attack.t_b_frac,
        t_n_frac: config.attack.t_n_frac,
        total_steps: config.trainer.total_steps as u64,
        probe_interval: config.attack.probe_interval,
        explore_interval,
        converge_window: config.attack.converge_window,
        flags,
        bounds_override: bounds,
        seed,
    })?)
}

struct SeedRun {
    outcome: SeedOutcome,
    timeline: Vec<TimelineRow>,
    policies: Option<TrainedPolicies>,
}

fn benign_timeline(report: &TrainReport, bounds: (f64, f64)) -> Vec<TimelineRow> {
    let (p_l, p_u) = bounds;
    report
        .episodes
        .iter()
        .map(|e| TimelineRow {
            step: e.end_step,
            episode_return_raw: e.episode_return,
            btp: ((e.episode_return - p_l) / (p_u - p_l)).clamp(0.0, 1.0),
            asr: 0.0,
            r_dagger: 0.0,
            r_l: 0.0,
            r_u: 0.0,
            phase: "",
            frozen: false,
        })
        .collect()
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun, HarnessError> {
    let mut env = make_env(config.env, seed);
    let spec = env.spec().clone();
    let tasks = load_tasks(&config.tasks)?;
    let bounds_override = resolve_bounds(config);
    let post_training = matches!(config.mode, RunMode::PostTraining(_));

    let trainer_cfg: TrainerConfig = config.trainer.clone();
    #[allow(clippy::large_enum_variant)]
    enum AnyTrainer {
        Ppo(PpoTrainer),
        Ddpg(DdpgTrainer),
    }
    let mut trainer = match (&config.mode, config.algorithm) {
        (RunMode::FromScratch, Algorithm::Ppo) => {
            AnyTrainer::Ppo(PpoTrainer::new(&spec, trainer_cfg, seed)?)
        }
        (RunMode::FromScratch, Algorithm::Ddpg) => {
            AnyTrainer::Ddpg(DdpgTrainer::new(&spec, trainer_cfg, seed)?)
        }
        (RunMode::PostTraining(dir), Algorithm::Ppo) => {
            let pair = load_seed_policies(dir, seed)?;
            AnyTrainer::Ppo(PpoTrainer::from_policies(
                pair.actor,
                pair.critic,
                trainer_cfg,
                seed,
            )?)
        }
        (RunMode::PostTraining(dir), Algorithm::Ddpg) => {
            let pair = load_seed_policies(dir, seed)?;
            let obs_dim = spec.state_dim;
            let act_dim = spec.action_space.dim();
            AnyTrainer::Ddpg(DdpgTrainer::from_policies(
                pair.actor,
                pair.critic,
                obs_dim,
                act_dim,
                trainer_cfg,
                seed,
            )?)
        }
    };

    let mut engine = match config.strategy {
        Some(_) => Some(build_engine(
            config,
            &tasks,
            bounds_override,
            post_training,
            seed,
        )?),
        None => None,
    };

    let report = {
        let hooks: &mut dyn Hooks = match engine.as_mut() {
            Some(e) => e,
            None => &mut NoHooks,
        };
        match &mut trainer {
            AnyTrainer::Ppo(t) => t.train(&mut env, hooks)?,
            AnyTrainer::Ddpg(t) => t.train(&mut env, hooks)?,
        }
    };

    // bounds actually used: the engine's monitor may have estimated them
    let bounds_used = match &engine {
        Some(e) => (e.monitor.p_l, e.monitor.p_u),
        None => bounds_override.unwrap_or((0.0, 1.0)),
    };

    let (actor, critic) = match &trainer {
        AnyTrainer::Ppo(t) => (t.actor.clone(), t.critic.clone()),
        AnyTrainer::Ddpg(t) => (t.actor.clone(), t.critic.clone()),
    };

    let mut eval_env = make_env(config.env, seed.wrapping_add(0x5EED));
    let evaluation = evaluate(
        &actor,
        &mut eval_env,
        &tasks,
        config.eval.episodes,
        config.eval.probes,
        bounds_used,
        config.attack.epsilon,
        seed,
    )?;

    let timeline = match &engine {
        Some(e) => e.timeline.clone(),
        None => benign_timeline(&report, bounds_used),
    };
    let outcome = SeedOutcome {
        seed,
        evaluation: Some(evaluation),
        error: None,
        freeze_lift_step: engine.as_ref().and_then(|e| e.freeze.t_f),
        poisoned_transitions: engine.as_ref().map_or(0, |e| e.poison_count),
        final_r_dagger: engine.as_ref().map_or(0.0, |e| e.current_reward()),
        bounds_used,
        episodes: report.episodes.len(),
        steps: report.steps,
        mean_recent_return: report.recent_mean_return(20),
    };
    Ok(SeedRun {
        outcome,
        timeline,
        policies: Some(TrainedPolicies { actor, critic }),
    })
}

/// Runs every seed of the experiment, emitting per-seed artifacts under
/// `out_dir/seed_<n>/` and an aggregated `report.json`. A failing seed is
/// recorded as a failure row; remaining seeds still run.
pub fn run(config: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let started = std::time::Instant::now();
    let mut outcomes = Vec::new();
    let mut seed_times = Vec::new();
    for &seed in &config.seeds {
        let t0 = std::time::Instant::now();
        match run_seed(config, seed) {
            Ok(run) => {
                let seed_dir = config.out_dir.join(format!("seed_{seed}"));
                std::fs::create_dir_all(&seed_dir)?;
                write_run_csv(&seed_dir.join("run.csv"), &run.timeline)?;
                if config.strategy.is_some() {
                    write_timeline_charts(&seed_dir, &run.timeline)?;
                }
                if let Some(pair) = &run.policies {
                    save_policy(&pair.actor, &seed_dir.join("actor.json"))?;
                    save_policy(&pair.critic, &seed_dir.join("critic.json"))?;
                }
                outcomes.push(run.outcome);
            }
            Err(e) => outcomes.push(SeedOutcome {
                seed,
                evaluation: None,
                error: Some(e.to_string()),
                freeze_lift_step: None,
                poisoned_transitions: 0,
                final_r_dagger: 0.0,
                bounds_used: (0.0, 1.0),
                episodes: 0,
                steps: 0,
                mean_recent_return: 0.0,
            }),
        }
        seed_times.push((seed, t0.elapsed().as_secs_f64()));
    }
    let report = RunReport {
        config: config.clone(),
        aggregate: aggregate(&outcomes),
        seeds: outcomes,
    };
    std::fs::write(
        config.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Mismatch(e.to_string()))?,
    )?;
    // wall-clock info lives outside the deterministic artifacts
    let meta: Vec<String> = seed_times
        .iter()
        .map(|(s, t)| format!("{{\"seed\":{s},\"elapsed_s\":{t:.1}}}"))
        .collect();
    std::fs::write(
        config.out_dir.join("meta.json"),
        format!(
            "{{\"total_elapsed_s\":{:.1},\"seeds\":[{}]}}\n",
            started.elapsed().as_secs_f64(),
            meta.join(",")
        ),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&mut vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

//! Final evaluation: unbiased BTP over trigger-free episodes, ASR over
//! query-only probes, their harmonic mean, and persistent-activation
//! rollouts.

use super::HarnessError;
use crate::backdoor::{action_matches, BackdoorTask};
use crate::envs::{Env, EnvName};
use crate::policy::{ActionMode, Policy};
use crate::rng::Rng;
use crate::trainers::to_env_action;

/// Evaluation outcome for one policy.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Evaluation {
    pub btp: f64,
    pub asr: f64,
    pub cp: f64,
    pub per_trigger_asr: Vec<f64>,
    pub mean_raw_return: f64,
}

/// Harmonic mean of BTP and ASR; zero when either is zero.
pub fn comprehensive_performance(btp: f64, asr: f64) -> f64 {
    if btp + asr == 0.0 {
        0.0
    } else {
        2.0 * btp * asr / (btp + asr)
    }
}

/// Caps an episode at the env's evaluation step limit (infinite-horizon
/// tasks only).
fn eval_step_cap(env: &Env) -> u32 {
    env.spec().env_step_cap.unwrap_or(u32::MAX)
}

/// Runs `n_episodes` trigger-free deterministic episodes and `n_probes`
/// query-only triggered probes on the states visited. BTP is the clipped
/// normalized mean return; ASR averages per-trigger match rates with the
/// probes cycling round-robin over (task, trigger) pairs.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    policy: &Policy,
    env: &mut Env,
    tasks: &[BackdoorTask],
    n_episodes: usize,
    n_probes: usize,
    bounds: (f64, f64),
    epsilon: f64,
    eval_seed: u64,
) -> Result<Evaluation, HarnessError> {
    let (p_l, p_u) = bounds;
    let mut rng = Rng::stream(eval_seed, 0x4556); // "EV"
    let cap = eval_step_cap(env);

    let mut returns = Vec::with_capacity(n_episodes);
    let mut visited: Vec<Vec<f64>> = Vec::new();
    for ep in 0..n_episodes {
        env.reset(Some(
            eval_seed.wrapping_add(ep as u64).wrapping_mul(2654435761),
        ));
        let mut total = 0.0;
        loop {
            let obs = env.obs();
            visited.push(obs.clone());
            let out = policy.act(&obs, ActionMode::Deterministic, &mut rng)?;
            let step = env.step(&to_env_action(&out.action, &env.spec().action_space))?;
            total += step.reward;
            if step.done() || env.step_count() >= cap {
                break;
            }
        }
        returns.push(total);
    }
    let mean_raw_return = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    let btp = returns
        .iter()
        .map(|r| ((r - p_l) / (p_u - p_l)).clamp(0.0, 1.0))
        .sum::<f64>()
        / returns.len().max(1) as f64;

    // query-only probes over the visited states
    let pairs: Vec<(usize, usize)> = tasks
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.n_triggers()).map(move |j| (i, j)))
        .collect();
    let (asr, per_trigger_asr) = if pairs.is_empty() || visited.is_empty() || n_probes == 0 {
        (0.0, Vec::new())
    } else {
        let mut matches = vec![0usize; pairs.len()];
        let mut counts = vec![0usize; pairs.len()];
        for k in 0..n_probes {
            let g = k % pairs.len();
            let (ti, tj) = pairs[g];
            let state = &visited[rng.below(visited.len())];
            let triggered = tasks[ti].apply_trigger(state, tj);
            let out = policy.act(&triggered, ActionMode::Deterministic, &mut rng)?;
            if action_matches(&out.action, tasks[ti].target_action(tj), epsilon) {
                matches[g] += 1;
            }
            counts[g] += 1;
        }
        let rates: Vec<f64> = matches
            .iter()
            .zip(&counts)
            .map(|(m, c)| if *c == 0 { 0.0 } else { *m as f64 / *c as f64 })
            .collect();
        (rates.iter().sum::<f64>() / rates.len() as f64, rates)
    };

    Ok(Evaluation {
        btp,
        asr,
        cp: comprehensive_performance(btp, asr),
        per_trigger_asr,
        mean_raw_return,
    })
}

/// Outcome of persistent-activation rollouts in env-native units.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ActivationReport {
    pub env: EnvName,
    pub trigger_id: usize,
    /// Per-episode steps survived / steps-to-goal / raw return under the
    /// persistent trigger.
    pub triggered_steps: Vec<u64>,
    pub triggered_returns: Vec<f64>,
    /// Whether each triggered episode hit the evaluation step cap.
    pub triggered_capped: Vec<bool>,
    /// Trigger-free control episodes.
    pub control_steps: Vec<u64>,
    pub control_returns: Vec<f64>,
}

/// Runs closed-loop episodes where every observation is triggered before
/// the policy acts, plus trigger-free controls.
pub fn activation_rollout(
    policy: &Policy,
    env: &mut Env,
    task: &BackdoorTask,
    trigger_id: usize,
    episodes: usize,
    eval_seed: u64,
) -> Result<ActivationReport, HarnessError> {
    let mut rng = Rng::stream(eval_seed, 0x414354); // "ACT"
    let cap = eval_step_cap(env);
    let mut report = ActivationReport {
        env: env.spec().name,
        trigger_id,
        triggered_steps: Vec::new(),
        triggered_returns: Vec::new(),
        triggered_capped: Vec::new(),
        control_steps: Vec::new(),
        control_returns: Vec::new(),
    };
    for triggered in [true, false] {
        for ep in 0..episodes {
            env.reset(Some(eval_seed.wrapping_add(ep as u64).wrapping_mul(971)));
            let mut total = 0.0;
            let mut steps = 0u64;
            let mut capped = false;
            loop {
                let mut obs = env.obs();
                if triggered {
                    obs = task.apply_trigger(&obs, trigger_id);
                }
                let out = policy.act(&obs, ActionMode::Deterministic, &mut rng)?;
                let step = env.step(&to_env_action(&out.action, &env.spec().action_space))?;
                total += step.reward;
                steps += 1;
                if step.done() {
                    // ending at the step cap without reaching the MDP goal
                    // counts as a capped (failed) episode
                    if step.truncated && env.spec().env_step_cap.is_some_and(|c| steps >= c as u64)
                    {
                        capped = true;
                    }
                    break;
                }
                if env.step_count() >= cap {
                    capped = true;
                    break;
                }
            }
            if triggered {
                report.triggered_steps.push(steps);
                report.triggered_returns.push(total);
                report.triggered_capped.push(capped);
            } else {
                report.control_steps.push(steps);
                report.control_returns.push(total);
            }
        }
    }
    Ok(report)
}

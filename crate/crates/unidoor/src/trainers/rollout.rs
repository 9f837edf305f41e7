//! On-policy rollout collection with hook interception.

use super::{EpisodeRecord, Hooks, TrainError, Trajectory, Transition};
use crate::backdoor::TargetAction;
use crate::envs::{Action, ActionSpace, Env};
use crate::policy::{ActionMode, Policy};
use crate::rng::Rng;

#[derive(Debug, Default)]
pub struct RolloutOut {
    /// Fragments for advantage estimation; episodes crossing the rollout
    /// boundary are split with a bootstrap value recorded.
    pub fragments: Vec<Trajectory>,
    /// Episodes that completed during this rollout.
    pub episodes: Vec<EpisodeRecord>,
}

/// Converts a normalized policy action into environment units.
pub fn to_env_action(action: &TargetAction, space: &ActionSpace) -> Action {
    match action {
        TargetAction::Discrete(a) => Action::Discrete(*a),
        TargetAction::Continuous(v) => Action::Continuous(space.scale_from_normalized(v)),
    }
}

/// Runs exactly `n_steps` environment steps, passing every observation and
/// transition through the hooks. A tampered transition keeps the log-prob
/// and value the victim recorded for what it actually experienced; the
/// adversary only rewrites (state, action, reward), so importance ratios
/// for poisoned samples drift and get clipped like any off-policy data.
/// `episode_buf` carries the running episode across rollout boundaries.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout(
    actor: &Policy,
    critic: &Policy,
    env: &mut Env,
    n_steps: usize,
    hooks: &mut dyn Hooks,
    rng: &mut Rng,
    global_step: &mut u64,
    episode_buf: &mut Vec<Transition>,
) -> Result<RolloutOut, TrainError> {
    let mut out = RolloutOut::default();
    let mut fragment: Vec<Transition> = Vec::new();
    for _ in 0..n_steps {
        let mut obs = env.obs();
        hooks.on_observation(&mut obs, actor, *global_step + 1);
        let act_out = actor.act(&obs, ActionMode::Sample, rng)?;
        let env_action = to_env_action(&act_out.action, &env.spec().action_space);
        let step_out = env.step(&env_action)?;
        *global_step += 1;
        let value = critic.value(&obs)?;
        let tr = Transition {
            state: obs,
            action: act_out.action,
            reward: step_out.reward,
            done: step_out.terminated,
            next_state: step_out.obs.clone(),
            log_prob: act_out.log_prob,
            value: Some(value),
            poisoned: false,
        };
        let tr = hooks.on_transition(tr, *global_step);
        episode_buf.push(tr.clone());
        fragment.push(tr);

        if step_out.done() {
            let bootstrap = if step_out.terminated {
                0.0
            } else {
                critic.value(&step_out.obs)?
            };
            out.fragments.push(Trajectory {
                transitions: std::mem::take(&mut fragment),
                complete: true,
                bootstrap_value: bootstrap,
            });
            let episode = Trajectory {
                transitions: std::mem::take(episode_buf),
                complete: true,
                bootstrap_value: bootstrap,
            };
            out.episodes.push(EpisodeRecord {
                end_step: *global_step,
                episode_return: episode.episode_return(),
                length: episode.len() as u64,
            });
            hooks.on_episode_end(&episode, *global_step);
            env.reset(None);
        }
    }
    if !fragment.is_empty() {
        let bootstrap = critic.value(&env.obs())?;
        out.fragments.push(Trajectory {
            transitions: fragment,
            complete: false,
            bootstrap_value: bootstrap,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, EnvName};
    use crate::policy::{init_policy, MlpArch};

    struct FlagEvery16 {
        count: u64,
        flagged: u64,
    }

    impl Hooks for FlagEvery16 {
        fn on_transition(&mut self, mut tr: Transition, _t: u64) -> Transition {
            self.count += 1;
            if self.count.is_multiple_of(16) {
                tr.poisoned = true;
                self.flagged += 1;
            }
            tr
        }
    }

    fn setup() -> (Env, Policy, Policy) {
        let env = make_env(EnvName::CartPole, 0);
        let actor = init_policy(MlpArch::ppo_actor_discrete(4, 2), 1).unwrap();
        let critic = init_policy(MlpArch::ppo_critic(4), 2).unwrap();
        (env, actor, critic)
    }

    #[test]
    fn identity_hooks_preserve_stream() {
        let (mut env_a, actor, critic) = setup();
        let mut env_b = make_env(EnvName::CartPole, 0);
        let mut no_hooks = super::super::NoHooks;
        let mut rng_a = Rng::new(5);
        let mut rng_b = Rng::new(5);
        let mut step_a = 0;
        let mut step_b = 0;
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        let out_a = collect_rollout(
            &actor,
            &critic,
            &mut env_a,
            256,
            &mut no_hooks,
            &mut rng_a,
            &mut step_a,
            &mut buf_a,
        )
        .unwrap();
        let mut no_hooks_b = super::super::NoHooks;
        let out_b = collect_rollout(
            &actor,
            &critic,
            &mut env_b,
            256,
            &mut no_hooks_b,
            &mut rng_b,
            &mut step_b,
            &mut buf_b,
        )
        .unwrap();
        let flat = |o: &RolloutOut| -> Vec<f64> {
            o.fragments
                .iter()
                .flat_map(|f| f.transitions.iter().flat_map(|t| t.state.clone()))
                .collect()
        };
        assert_eq!(flat(&out_a), flat(&out_b));
    }

    #[test]
    fn exactly_n_steps_and_flag_counting() {
        let (mut env, actor, critic) = setup();
        let mut hooks = FlagEvery16 {
            count: 0,
            flagged: 0,
        };
        let mut rng = Rng::new(7);
        let mut step = 0;
        let mut buf = Vec::new();
        let n = 1000;
        let out = collect_rollout(
            &actor, &critic, &mut env, n, &mut hooks, &mut rng, &mut step, &mut buf,
        )
        .unwrap();
        assert_eq!(step, n as u64);
        let total: usize = out.fragments.iter().map(|f| f.len()).sum();
        assert_eq!(total, n);
        assert_eq!(hooks.flagged, (n / 16) as u64);
        let flagged_stored: usize = out
            .fragments
            .iter()
            .flat_map(|f| &f.transitions)
            .filter(|t| t.poisoned)
            .count();
        assert_eq!(flagged_stored, n / 16);
    }

    #[test]
    fn boundary_fragment_incomplete_with_bootstrap() {
        let (mut env, actor, critic) = setup();
        let mut hooks = super::super::NoHooks;
        let mut rng = Rng::new(2);
        let mut step = 0;
        let mut buf = Vec::new();
        let out = collect_rollout(
            &actor, &critic, &mut env, 13, &mut hooks, &mut rng, &mut step, &mut buf,
        )
        .unwrap();
        let last = out.fragments.last().unwrap();
        if !last.complete {
            assert!(!buf.is_empty(), "running episode carries over");
            let v = critic.value(&env.obs()).unwrap();
            assert_eq!(last.bootstrap_value, v);
        }
    }

    #[test]
    fn done_only_on_last_transition_of_fragment() {
        let (mut env, actor, critic) = setup();
        let mut hooks = super::super::NoHooks;
        let mut rng = Rng::new(11);
        let mut step = 0;
        let mut buf = Vec::new();
        let out = collect_rollout(
            &actor, &critic, &mut env, 2048, &mut hooks, &mut rng, &mut step, &mut buf,
        )
        .unwrap();
        assert!(out.episodes.len() > 1, "random cartpole episodes are short");
        for frag in &out.fragments {
            for (i, tr) in frag.transitions.iter().enumerate() {
                if tr.done {
                    assert_eq!(i, frag.len() - 1);
                }
            }
        }
    }
}

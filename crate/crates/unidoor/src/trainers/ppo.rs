//! PPO with a clipped surrogate objective, separate actor/critic networks,
//! and Adam updates over shuffled minibatches.

use super::adam::{clip_grad_norm, Adam};
use super::gae::{gae, GaeOut};
use super::rollout::collect_rollout;
use super::{Hooks, TrainError, TrainReport, TrainerConfig, Trajectory, Transition};
use crate::backdoor::TargetAction;
use crate::envs::{ActionSpace, Env, MdpSpec};
use crate::policy::{init_policy, loss_value, LossKind, LossTerm, MlpArch, Policy};
use crate::rng::Rng;

const MAX_GRAD_NORM: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

pub struct PpoTrainer {
    pub actor: Policy,
    pub critic: Policy,
    pub cfg: TrainerConfig,
    actor_opt: Adam,
    critic_opt: Adam,
    rng: Rng,
    pub global_step: u64,
    episode_buf: Vec<Transition>,
    pub last_stats: PpoStats,
}

impl PpoTrainer {
    pub fn new(spec: &MdpSpec, cfg: TrainerConfig, seed: u64) -> Result<Self, TrainError> {
        let (actor_arch, critic_arch) = match &spec.action_space {
            ActionSpace::Discrete(n) => (
                MlpArch::ppo_actor_discrete(spec.state_dim, *n),
                MlpArch::ppo_critic(spec.state_dim),
            ),
            ActionSpace::Box { dim, .. } => (
                MlpArch::ppo_actor_continuous(spec.state_dim, *dim),
                MlpArch::ppo_critic(spec.state_dim),
            ),
        };
        let actor = init_policy(actor_arch, seed)?;
        let critic = init_policy(critic_arch, seed.wrapping_add(1))?;
        Self::from_policies(actor, critic, cfg, seed)
    }

    /// Resumes from existing networks (post-training attacks, defenses).
    pub fn from_policies(
        actor: Policy,
        critic: Policy,
        cfg: TrainerConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate().map_err(TrainError::Config)?;
        let actor_opt = Adam::new(actor.n_params(), cfg.ppo.lr);
        let critic_opt = Adam::new(critic.n_params(), cfg.ppo.lr);
        Ok(PpoTrainer {
            actor,
            critic,
            cfg,
            actor_opt,
            critic_opt,
            rng: Rng::stream(seed, 0x50504F), // "PPO"
            global_step: 0,
            episode_buf: Vec::new(),
            last_stats: PpoStats::default(),
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.actor_opt.lr = lr;
        self.critic_opt.lr = lr;
    }

    /// Runs rollout/update cycles until `total_steps` env steps have been
    /// taken, reporting every completed episode.
    pub fn train(
        &mut self,
        env: &mut Env,
        hooks: &mut dyn Hooks,
    ) -> Result<TrainReport, TrainError> {
        let mut report = TrainReport::default();
        let total = self.cfg.total_steps as u64;
        while self.global_step < total {
            report.episodes.extend(self.step_cycle(env, hooks)?);
        }
        report.steps = self.global_step;
        Ok(report)
    }

    /// One rollout + update cycle; returns the episodes completed in it.
    pub fn step_cycle(
        &mut self,
        env: &mut Env,
        hooks: &mut dyn Hooks,
    ) -> Result<Vec<super::EpisodeRecord>, TrainError> {
        let out = collect_rollout(
            &self.actor,
            &self.critic,
            env,
            self.cfg.ppo.rollout_len,
            hooks,
            &mut self.rng,
            &mut self.global_step,
            &mut self.episode_buf,
        )?;
        let adv = gae(&out.fragments, self.cfg.gamma, self.cfg.ppo.gae_lambda);
        self.last_stats = self.update(&out.fragments, &adv)?;
        Ok(out.episodes)
    }

    /// The clipped-surrogate update: `epochs` passes over shuffled
    /// minibatches of the rollout, Adam on both networks.
    pub fn update(
        &mut self,
        fragments: &[Trajectory],
        adv: &GaeOut,
    ) -> Result<PpoStats, TrainError> {
        let transitions: Vec<&Transition> = fragments
            .iter()
            .flat_map(|f| f.transitions.iter())
            .collect();
        let n = transitions.len();
        if n == 0 {
            return Ok(PpoStats::default());
        }
        let states: Vec<Vec<f64>> = transitions.iter().map(|t| t.state.clone()).collect();
        let actions: Vec<TargetAction> = transitions.iter().map(|t| t.action.clone()).collect();
        let old_logp: Vec<f64> = transitions
            .iter()
            .map(|t| t.log_prob.unwrap_or(0.0))
            .collect();

        let mut indices: Vec<usize> = (0..n).collect();
        let mut stats = PpoStats::default();
        let mut batches = 0usize;
        for _ in 0..self.cfg.ppo.epochs {
            self.rng.shuffle(&mut indices);
            for chunk in indices.chunks(self.cfg.ppo.minibatch) {
                let mb_states: Vec<Vec<f64>> = chunk.iter().map(|&i| states[i].clone()).collect();
                let mb_actions: Vec<TargetAction> =
                    chunk.iter().map(|&i| actions[i].clone()).collect();
                let mb_old_logp: Vec<f64> = chunk.iter().map(|&i| old_logp[i]).collect();
                let mb_adv: Vec<f64> = chunk.iter().map(|&i| adv.advantages[i]).collect();
                let mb_returns: Vec<f64> = chunk.iter().map(|&i| adv.returns[i]).collect();

                let mut actor_terms = vec![LossTerm {
                    weight: 1.0,
                    kind: LossKind::PpoClip {
                        obs: &mb_states,
                        actions: &mb_actions,
                        old_logp: &mb_old_logp,
                        advantages: &mb_adv,
                        clip_eps: self.cfg.ppo.clip_eps,
                    },
                }];
                if self.cfg.ppo.entropy_coef != 0.0 {
                    actor_terms.push(LossTerm {
                        weight: self.cfg.ppo.entropy_coef,
                        kind: LossKind::NegEntropy { obs: &mb_states },
                    });
                }
                let (actor_loss, mut actor_grad, ppo_stats) =
                    crate::policy::loss_and_gradient(&self.actor, &actor_terms)?;
                if !actor_loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        quantity: "loss",
                        phase: "policy",
                        step: self.global_step,
                    });
                }
                clip_grad_norm(&mut actor_grad, MAX_GRAD_NORM);
                self.actor_opt.step(&mut self.actor.params, &actor_grad);

                let critic_terms = [LossTerm {
                    weight: self.cfg.ppo.value_coef,
                    kind: LossKind::ValueMse {
                        obs: &mb_states,
                        targets: &mb_returns,
                    },
                }];
                let (critic_loss, mut critic_grad, _) =
                    crate::policy::loss_and_gradient(&self.critic, &critic_terms)?;
                if !critic_loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        quantity: "loss",
                        phase: "value",
                        step: self.global_step,
                    });
                }
                clip_grad_norm(&mut critic_grad, MAX_GRAD_NORM);
                self.critic_opt.step(&mut self.critic.params, &critic_grad);

                stats.policy_loss += actor_loss;
                stats.value_loss += critic_loss;
                if let Some(s) = ppo_stats {
                    stats.approx_kl += s.approx_kl;
                    stats.clip_fraction += s.clip_fraction;
                }
                batches += 1;
            }
        }
        let b = batches.max(1) as f64;
        stats.policy_loss /= b;
        stats.value_loss /= b;
        stats.approx_kl /= b;
        stats.clip_fraction /= b;
        Ok(stats)
    }

    /// Surrogate loss at the current parameters (diagnostics/tests).
    pub fn surrogate_loss(
        &self,
        states: &[Vec<f64>],
        actions: &[TargetAction],
        old_logp: &[f64],
        advantages: &[f64],
    ) -> Result<f64, TrainError> {
        Ok(loss_value(
            &self.actor,
            &[LossTerm {
                weight: 1.0,
                kind: LossKind::PpoClip {
                    obs: states,
                    actions,
                    old_logp,
                    advantages,
                    clip_eps: self.cfg.ppo.clip_eps,
                },
            }],
        )?)
    }
}

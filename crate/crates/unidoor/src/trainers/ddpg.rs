//! DDPG: deterministic actor, Q critic, target networks with Polyak
//! averaging, and a FIFO replay buffer.

use super::adam::Adam;
use super::rollout::to_env_action;
use super::{EpisodeRecord, Hooks, TrainError, TrainReport, TrainerConfig, Trajectory, Transition};
use crate::backdoor::TargetAction;
use crate::envs::{ActionSpace, Env, MdpSpec};
use crate::policy::{init_policy, net, LossKind, LossTerm, MlpArch, Policy};
use crate::rng::Rng;

/// Bounded FIFO transition store.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    next: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            data: Vec::with_capacity(capacity.min(4096)),
            capacity,
            next: 0,
            pushed: 0,
        }
    }

    pub fn push(&mut self, tr: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(tr);
        } else {
            self.data[self.next] = tr;
            self.next = (self.next + 1) % self.capacity;
        }
        self.pushed += 1;
    }

    /// Total transitions ever pushed (1-based ordinals).
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    /// Mutable access to the transition with the given push ordinal, if it
    /// has not been evicted yet.
    pub fn get_by_ordinal_mut(&mut self, ordinal: u64) -> Option<&mut Transition> {
        if ordinal == 0 || ordinal > self.pushed || self.pushed - ordinal >= self.capacity as u64 {
            return None;
        }
        let slot = ((ordinal - 1) % self.capacity as u64) as usize;
        self.data.get_mut(slot)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        (0..n).map(|_| rng.below(self.data.len())).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DdpgStats {
    pub critic_loss: f64,
    pub actor_q: f64,
}

pub struct DdpgTrainer {
    pub actor: Policy,
    pub critic: Policy,
    pub target_actor: Policy,
    pub target_critic: Policy,
    pub buffer: ReplayBuffer,
    pub cfg: TrainerConfig,
    actor_opt: Adam,
    critic_opt: Adam,
    rng: Rng,
    pub global_step: u64,
    episode_buf: Vec<Transition>,
    act_dim: usize,
    obs_dim: usize,
    pub last_stats: DdpgStats,
}

impl DdpgTrainer {
    pub fn new(spec: &MdpSpec, cfg: TrainerConfig, seed: u64) -> Result<Self, TrainError> {
        let act_dim = match &spec.action_space {
            ActionSpace::Box { dim, .. } => *dim,
            ActionSpace::Discrete(_) => {
                return Err(TrainError::Config(
                    "ddpg requires a continuous action space".into(),
                ))
            }
        };
        let actor = init_policy(MlpArch::ddpg_actor(spec.state_dim, act_dim), seed)?;
        let critic = init_policy(
            MlpArch::ddpg_critic(spec.state_dim, act_dim),
            seed.wrapping_add(1),
        )?;
        Self::from_policies(actor, critic, spec.state_dim, act_dim, cfg, seed)
    }

    pub fn from_policies(
        actor: Policy,
        critic: Policy,
        obs_dim: usize,
        act_dim: usize,
        cfg: TrainerConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate().map_err(TrainError::Config)?;
        let target_actor = actor.clone();
        let target_critic = critic.clone();
        let actor_opt = Adam::new(actor.n_params(), cfg.ddpg.actor_lr);
        let critic_opt = Adam::new(critic.n_params(), cfg.ddpg.critic_lr);
        let buffer = ReplayBuffer::new(cfg.ddpg.buffer_capacity);
        Ok(DdpgTrainer {
            actor,
            critic,
            target_actor,
            target_critic,
            buffer,
            actor_opt,
            critic_opt,
            rng: Rng::stream(seed, 0x444447), // "DDG"
            global_step: 0,
            episode_buf: Vec::new(),
            act_dim,
            obs_dim,
            cfg,
            last_stats: DdpgStats::default(),
        })
    }

    fn explore_action(&mut self, obs: &[f64]) -> Result<Vec<f64>, TrainError> {
        if (self.global_step as usize) < self.cfg.ddpg.warmup_steps {
            return Ok((0..self.act_dim)
                .map(|_| self.rng.uniform(-1.0, 1.0))
                .collect());
        }
        let mu = self.actor.head_output(obs)?;
        let noise = self.cfg.ddpg.exploration_noise_std;
        Ok(mu
            .iter()
            .map(|m| (m + noise * self.rng.normal()).clamp(-1.0, 1.0))
            .collect())
    }

    /// Steps the environment and trains one gradient step per env step
    /// once the warmup is over and the buffer can fill a batch.
    pub fn train(
        &mut self,
        env: &mut Env,
        hooks: &mut dyn Hooks,
    ) -> Result<TrainReport, TrainError> {
        let mut report = TrainReport::default();
        let total = self.cfg.total_steps as u64;
        while self.global_step < total {
            let mut obs = env.obs();
            hooks.on_observation(&mut obs, &self.actor, self.global_step + 1);
            let action_norm = self.explore_action(&obs)?;
            let env_action = to_env_action(
                &TargetAction::Continuous(action_norm.clone()),
                &env.spec().action_space,
            );
            let step_out = env.step(&env_action)?;
            self.global_step += 1;
            let tr = Transition {
                state: obs,
                action: TargetAction::Continuous(action_norm),
                reward: step_out.reward,
                done: step_out.terminated,
                next_state: step_out.obs.clone(),
                log_prob: None,
                value: None,
                poisoned: false,
            };
            let tr = hooks.on_transition(tr, self.global_step);
            self.episode_buf.push(tr.clone());
            self.buffer.push(tr);
            hooks.on_buffer(&mut self.buffer, self.global_step);
            if step_out.done() {
                let episode = Trajectory {
                    transitions: std::mem::take(&mut self.episode_buf),
                    complete: true,
                    bootstrap_value: 0.0,
                };
                report.episodes.push(EpisodeRecord {
                    end_step: self.global_step,
                    episode_return: episode.episode_return(),
                    length: episode.len() as u64,
                });
                hooks.on_episode_end(&episode, self.global_step);
                env.reset(None);
            }
            if self.global_step as usize >= self.cfg.ddpg.warmup_steps
                && self.buffer.len() >= self.cfg.ddpg.batch_size
            {
                self.last_stats = self.update()?;
            }
        }
        report.steps = self.global_step;
        Ok(report)
    }

    /// Critic regression targets `r + gamma * (1 - done) * Q_t(s', mu_t(s'))`
    /// for the given buffer rows.
    pub fn compute_targets(&self, idx: &[usize]) -> Result<Vec<f64>, TrainError> {
        let batch = idx.len();
        let mut next_obs = Vec::with_capacity(batch * self.obs_dim);
        for &i in idx {
            next_obs.extend_from_slice(&self.buffer.get(i).next_state);
        }
        let ta_lay = net::layout(&self.target_actor.arch);
        let (next_actions, _) = net::forward_batch(
            &self.target_actor.arch,
            &ta_lay,
            &self.target_actor.params,
            &next_obs,
            batch,
        )?;
        let mut next_q_in = Vec::with_capacity(batch * (self.obs_dim + self.act_dim));
        for (b, &i) in idx.iter().enumerate() {
            next_q_in.extend_from_slice(&self.buffer.get(i).next_state);
            next_q_in.extend_from_slice(&next_actions[b * self.act_dim..(b + 1) * self.act_dim]);
        }
        let tc_lay = net::layout(&self.target_critic.arch);
        let (next_q, _) = net::forward_batch(
            &self.target_critic.arch,
            &tc_lay,
            &self.target_critic.params,
            &next_q_in,
            batch,
        )?;
        Ok(idx
            .iter()
            .enumerate()
            .map(|(b, &i)| {
                let tr = self.buffer.get(i);
                let mask = if tr.done { 0.0 } else { 1.0 };
                tr.reward + self.cfg.gamma * mask * next_q[b]
            })
            .collect())
    }

    /// One DDPG gradient step: critic toward the bootstrap target, actor up
    /// the critic's action gradient, then Polyak target updates.
    pub fn update(&mut self) -> Result<DdpgStats, TrainError> {
        let batch = self.cfg.ddpg.batch_size;
        let idx = self.buffer.sample_indices(batch, &mut self.rng);
        let targets = self.compute_targets(&idx)?;

        // critic: MSE on concatenated (state, action) inputs
        let q_inputs: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                let tr = self.buffer.get(i);
                let mut row = tr.state.clone();
                match &tr.action {
                    TargetAction::Continuous(a) => row.extend_from_slice(a),
                    TargetAction::Discrete(_) => unreachable!("ddpg stores continuous actions"),
                }
                row
            })
            .collect();
        let critic_terms = [LossTerm {
            weight: 1.0,
            kind: LossKind::ValueMse {
                obs: &q_inputs,
                targets: &targets,
            },
        }];
        let (critic_loss, critic_grad, _) =
            crate::policy::loss_and_gradient(&self.critic, &critic_terms)?;
        if !critic_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                quantity: "loss",
                phase: "critic",
                step: self.global_step,
            });
        }
        self.critic_opt.step(&mut self.critic.params, &critic_grad);

        // actor: ascend Q(s, mu(s)) by chaining the critic's action
        // gradient through the actor's tanh head
        let mut states = Vec::with_capacity(batch * self.obs_dim);
        for &i in &idx {
            states.extend_from_slice(&self.buffer.get(i).state);
        }
        let actor_lay = net::layout(&self.actor.arch);
        let (mu, actor_cache) = net::forward_batch(
            &self.actor.arch,
            &actor_lay,
            &self.actor.params,
            &states,
            batch,
        )?;
        let mut q_in = Vec::with_capacity(batch * (self.obs_dim + self.act_dim));
        for (b, &i) in idx.iter().enumerate() {
            q_in.extend_from_slice(&self.buffer.get(i).state);
            q_in.extend_from_slice(&mu[b * self.act_dim..(b + 1) * self.act_dim]);
        }
        let critic_lay = net::layout(&self.critic.arch);
        let (q, critic_cache) = net::forward_batch(
            &self.critic.arch,
            &critic_lay,
            &self.critic.params,
            &q_in,
            batch,
        )?;
        let actor_q = q.iter().sum::<f64>() / batch as f64;
        // d(-mean Q)/dq = -1/batch
        let d_q = vec![-1.0 / batch as f64; batch];
        let d_q_in = net::backward_batch(
            &self.critic.arch,
            &critic_lay,
            &self.critic.params,
            &critic_cache,
            &d_q,
            None,
        );
        // gradient w.r.t. the action slice, through tanh
        let mut d_mu_pre = vec![0.0; batch * self.act_dim];
        for b in 0..batch {
            for a in 0..self.act_dim {
                let d_mu = d_q_in[b * (self.obs_dim + self.act_dim) + self.obs_dim + a];
                let y = mu[b * self.act_dim + a];
                d_mu_pre[b * self.act_dim + a] = d_mu * (1.0 - y * y);
            }
        }
        let mut actor_grad = vec![0.0; self.actor.n_params()];
        net::backward_batch(
            &self.actor.arch,
            &actor_lay,
            &self.actor.params,
            &actor_cache,
            &d_mu_pre,
            Some(&mut actor_grad),
        );
        if actor_grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteLoss {
                quantity: "gradient",
                phase: "actor",
                step: self.global_step,
            });
        }
        self.actor_opt.step(&mut self.actor.params, &actor_grad);

        self.soft_update();
        Ok(DdpgStats {
            critic_loss,
            actor_q,
        })
    }

    /// Polyak averaging of both target networks.
    pub fn soft_update(&mut self) {
        let tau = self.cfg.ddpg.tau_polyak;
        for (t, o) in self.target_actor.params.iter_mut().zip(&self.actor.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        for (t, o) in self
            .target_critic
            .params
            .iter_mut()
            .zip(&self.critic.params)
        {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
}

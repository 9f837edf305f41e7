//! The attack engine: initial freezing, transition poisoning, and adaptive
//! exploration of the backdoor reward, plus the baseline reward-hacking
//! strategies and a fixed-reward mode for sweeps.
//!
//! In the default inner-loop paradigm the engine sits between the
//! environment and the victim's buffer via trainer hooks, tampering one
//! stored transition every `poison_interval` steps once freezing lifts; the
//! outer-loop paradigm instead sweeps the replay buffer in place at the
//! same spacing. The backdoor reward starts from the freezing-phase reward
//! range and is then adapted: an expansion phase grows the candidate
//! interval until the monitored ASR converges, after which a contraction
//! phase bisects it toward a single value, decreasing the reward when
//! benign performance slips and raising the floor when ASR slips.

use crate::backdoor::{action_matches, BackdoorTask, TargetAction};
use crate::monitor::{estimate_bounds, MonitorState};
use crate::policy::{ActionMode, Policy};
use crate::rng::Rng;
use crate::trainers::{Hooks, Trajectory, Transition};

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("backdoor reward space needs at least one observed reward")]
    EmptyRewardSet,
    #[error("expectation schedule degenerate: t_n and t_b must exceed t_f")]
    BadSchedule,
    #[error("attack needs at least one backdoor task")]
    NoTasks,
}

/// Freezing lift condition: trajectory count for simple benign tasks, a BTP
/// threshold for tasks with cold-start trouble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreezeMode {
    LowComplexity,
    HighComplexity,
}

/// One-way latch delaying poisoning until the benign task escapes its
/// cold-start phase.
#[derive(Debug, Clone)]
pub struct FreezeState {
    pub frozen: bool,
    pub phi_t: u64,
    pub phi_p: f64,
    pub mode: FreezeMode,
    /// Step at which freezing lifted; set exactly once.
    pub t_f: Option<u64>,
}

impl FreezeState {
    pub fn new(mode: FreezeMode, phi_t: u64, phi_p: f64) -> Self {
        FreezeState {
            frozen: true,
            phi_t,
            phi_p,
            mode,
            t_f: None,
        }
    }

    pub fn lifted(step: u64) -> Self {
        FreezeState {
            frozen: false,
            phi_t: 0,
            phi_p: 0.0,
            mode: FreezeMode::LowComplexity,
            t_f: Some(step),
        }
    }

    /// Lifts the freeze when the mode's threshold is met; once lifted it
    /// never re-freezes.
    pub fn check(&mut self, n_trajectories: u64, p: f64, step: u64) {
        if !self.frozen {
            return;
        }
        let lift = match self.mode {
            FreezeMode::LowComplexity => n_trajectories >= self.phi_t,
            FreezeMode::HighComplexity => p >= self.phi_p,
        };
        if lift {
            self.frozen = false;
            self.t_f = Some(step);
        }
    }
}

/// How the adversary reaches the victim's data: real-time man-in-the-middle
/// interception, or batch tampering of the stored replay buffer. The
/// outer-loop path cannot probe the victim for ASR (it never touches the
/// observation stream), so adaptive exploration falls back to BTP-only
/// contraction there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoisonParadigm {
    InnerLoop,
    OuterLoop,
}

/// Poisoning knobs.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct PoisonConfig {
    /// Poison one transition every this many post-freeze steps.
    pub poison_interval: u64,
    /// Tamper the action on every f-th poisoned transition.
    pub tamper_freq: u64,
    /// Uniform noise radius added to tampered continuous actions.
    pub rho: f64,
    /// Norm constraint for continuous action matching.
    pub epsilon: f64,
}

impl Default for PoisonConfig {
    fn default() -> Self {
        PoisonConfig {
            poison_interval: 32,
            tamper_freq: 2,
            rho: 0.025,
            epsilon: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Expansion,
    Contraction,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Expansion => "expansion",
            Phase::Contraction => "contraction",
        }
    }
}

/// The adaptive backdoor-reward interval [r_l, r_u] with the current
/// candidate r_dagger.
#[derive(Debug, Clone)]
pub struct RewardSpace {
    pub r_l: f64,
    pub r_u: f64,
    pub r_dagger: f64,
    pub phase: Phase,
    pub integer_mode: bool,
    pub omega: f64,
    pub converge_window: usize,
    converge_streak: usize,
}

/// Inputs to one adaptation step: current and previous-check monitored
/// values plus the conservative expectations.
#[derive(Debug, Clone, Copy)]
pub struct AdaptInputs {
    pub p: f64,
    pub p_prev: f64,
    pub asr: f64,
    pub asr_prev: f64,
    pub e: f64,
    pub e_dagger: f64,
    /// ASR asymptote used by the convergence detector.
    pub e_b: f64,
}

/// Initializes the reward space from the rewards observed during freezing.
/// Bounds are sanitized to stay positive: r_l is clamped up to omega, and
/// r_u up to r_l. When omega is not given it defaults to the raw lower
/// bound, or 1 when that bound is not positive.
pub fn init_reward_space(
    rewards_during_freeze: &[f64],
    omega: Option<f64>,
    converge_window: usize,
) -> Result<RewardSpace, AttackError> {
    if rewards_during_freeze.is_empty() {
        return Err(AttackError::EmptyRewardSet);
    }
    let raw_l = rewards_during_freeze
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let raw_u = rewards_during_freeze
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let omega = omega.unwrap_or(if raw_l > 0.0 { raw_l } else { 1.0 });
    let r_l = raw_l.max(omega);
    let mut r_u = raw_u.max(r_l);

    let integral = |x: f64| x.fract() == 0.0;
    let r_dagger = if r_l < r_u {
        if integral(r_l) && integral(r_u) {
            ((r_l + r_u) / 2.0).floor()
        } else {
            (r_l + r_u) / 2.0
        }
    } else {
        r_u = r_l + omega;
        r_l
    };
    let integer_mode = integral(r_l) && integral(r_u);
    Ok(RewardSpace {
        r_l,
        r_u,
        r_dagger,
        phase: Phase::Expansion,
        integer_mode,
        omega,
        converge_window,
        converge_streak: 0,
    })
}

impl RewardSpace {
    fn midpoint(&self) -> f64 {
        if self.integer_mode {
            ((self.r_u + self.r_l) / 2.0).ceil()
        } else {
            (self.r_u + self.r_l) / 2.0
        }
    }

    /// One adaptation step. In expansion the candidate grows by omega and
    /// the upper bound tracks 2*r_dagger - r_l; after the ASR convergence
    /// detector fires the space switches to contraction, where at most one
    /// bound moves per call (the benign-task branch wins ties).
    pub fn adapt(&mut self, s: AdaptInputs) {
        match self.phase {
            Phase::Expansion => {
                if s.asr >= s.e_b {
                    self.converge_streak += 1;
                    if self.converge_streak >= self.converge_window {
                        self.phase = Phase::Contraction;
                    }
                } else {
                    self.converge_streak = 0;
                }
                let behind = s.p >= s.e && s.asr < s.e_dagger;
                let gap_not_shrinking = (s.asr - s.p) >= (s.asr_prev - s.p_prev);
                if behind || gap_not_shrinking {
                    self.r_dagger += self.omega;
                    self.r_u = 2.0 * self.r_dagger - self.r_l;
                }
            }
            Phase::Contraction => {
                let btp_slipping = s.p < s.e && s.p <= s.p_prev;
                let asr_slipping = s.asr < s.e_dagger && s.asr <= s.asr_prev;
                if btp_slipping {
                    self.r_u = self.r_dagger;
                    self.r_dagger = self.midpoint();
                } else if asr_slipping {
                    self.r_l = self.r_dagger;
                    self.r_dagger = self.midpoint();
                }
            }
        }
        debug_assert!(self.r_l <= self.r_dagger && self.r_dagger <= self.r_u);
    }
}

/// Time-dependent conservative expectations for BTP and ASR.
#[derive(Debug, Clone, Copy)]
pub struct ExpectationSchedule {
    pub e_n: f64,
    pub e_b: f64,
    pub t_f: u64,
    pub t_b: u64,
    pub t_n: u64,
}

/// Expected (BTP, ASR) at step `t`: zero while frozen, then a linear ramp
/// reaching the asymptote at the expected convergence time.
pub fn expectations(
    t: u64,
    frozen: bool,
    sched: &ExpectationSchedule,
) -> Result<(f64, f64), AttackError> {
    if frozen {
        return Ok((0.0, 0.0));
    }
    if sched.t_n <= sched.t_f || sched.t_b <= sched.t_f {
        return Err(AttackError::BadSchedule);
    }
    let ramp = |t_end: u64| {
        let frac = (t.saturating_sub(sched.t_f)) as f64 / (t_end - sched.t_f) as f64;
        frac.clamp(0.0, 1.0)
    };
    Ok((sched.e_n * ramp(sched.t_n), sched.e_b * ramp(sched.t_b)))
}

/// Reward-hacking strategies under the shared tampering path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackStrategy {
    Unidoor,
    TrojDrl,
    Idt,
    BadRl { min_pos_reward: f64 },
    Tw,
    Fixed { r: f64 },
}

impl AttackStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            AttackStrategy::Unidoor => "unidoor",
            AttackStrategy::TrojDrl => "trojdrl",
            AttackStrategy::Idt => "idt",
            AttackStrategy::BadRl { .. } => "badrl",
            AttackStrategy::Tw => "tw",
            AttackStrategy::Fixed { .. } => "fixed",
        }
    }
}

impl std::str::FromStr for AttackStrategy {
    type Err = String;

    /// Accepts `unidoor`, `trojdrl`, `idt`, `badrl[:min_pos]`, `tw`,
    /// `fixed:<r>`.
    fn from_str(s: &str) -> Result<Self, String> {
        let lower = s.to_ascii_lowercase();
        let (name, arg) = match lower.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (lower.as_str(), None),
        };
        let parse_pos = |a: Option<&str>, what: &str| -> Result<f64, String> {
            let text = a.ok_or_else(|| format!("{what} requires a value, e.g. {what}:1"))?;
            let v: f64 = text
                .parse()
                .map_err(|_| format!("bad {what} value '{text}'"))?;
            if v <= 0.0 {
                return Err(format!("{what} value must be positive"));
            }
            Ok(v)
        };
        match name {
            "unidoor" => Ok(AttackStrategy::Unidoor),
            "trojdrl" => Ok(AttackStrategy::TrojDrl),
            "idt" => Ok(AttackStrategy::Idt),
            "tw" => Ok(AttackStrategy::Tw),
            "badrl" => Ok(AttackStrategy::BadRl {
                min_pos_reward: if arg.is_some() { parse_pos(arg, "badrl")? } else { 1.0 },
            }),
            "fixed" => Ok(AttackStrategy::Fixed { r: parse_pos(arg, "fixed")? }),
            other => Err(format!(
                "unknown strategy '{other}' (supported: unidoor, trojdrl, idt, badrl, tw, fixed:<r>)"
            )),
        }
    }
}

/// State/action tampering shared by every strategy. Returns the tampered
/// transition and whether its action matches the target.
pub fn tamper_transition(
    mut tr: Transition,
    task: &BackdoorTask,
    trigger_id: usize,
    cfg: &PoisonConfig,
    tamper_now: bool,
    rng: &mut Rng,
) -> (Transition, bool) {
    tr.state = task.apply_trigger(&tr.state, trigger_id);
    let target = task.target_action(trigger_id);
    if tamper_now {
        tr.action = match target {
            TargetAction::Discrete(a) => TargetAction::Discrete(*a),
            TargetAction::Continuous(t) => TargetAction::Continuous(
                t.iter()
                    .map(|v| (v + rng.uniform(-cfg.rho, cfg.rho)).clamp(-1.0, 1.0))
                    .collect(),
            ),
        };
    }
    let matched = action_matches(&tr.action, target, cfg.epsilon);
    tr.poisoned = true;
    (tr, matched)
}

/// Full poisoning step with the adaptive reward rule: the reward becomes
/// +r_dagger when the (possibly tampered) action matches the target and
/// -r_dagger otherwise. Done flag and next state are untouched.
pub fn poison_transition(
    tr: Transition,
    task: &BackdoorTask,
    trigger_id: usize,
    cfg: &PoisonConfig,
    r_dagger: f64,
    tamper_now: bool,
    rng: &mut Rng,
) -> Transition {
    let (mut tr, matched) = tamper_transition(tr, task, trigger_id, cfg, tamper_now, rng);
    tr.reward = if matched { r_dagger } else { -r_dagger };
    tr
}

/// Baseline reward rules applied after the shared tampering path.
pub fn baseline_hack(strategy: &AttackStrategy, original_reward: f64, matched: bool) -> f64 {
    match strategy {
        AttackStrategy::TrojDrl => {
            if matched {
                1.0
            } else {
                -1.0
            }
        }
        AttackStrategy::Idt => {
            if matched && original_reward < 0.0 {
                -original_reward
            } else {
                original_reward
            }
        }
        AttackStrategy::BadRl { min_pos_reward } => {
            if matched {
                *min_pos_reward
            } else {
                original_reward
            }
        }
        AttackStrategy::Tw => {
            if matched {
                original_reward + 10.0
            } else {
                original_reward
            }
        }
        AttackStrategy::Fixed { r } => {
            if matched {
                *r
            } else {
                -*r
            }
        }
        AttackStrategy::Unidoor => {
            unreachable!("unidoor uses the adaptive reward, not baseline_hack")
        }
    }
}

/// Cross-poisoning order: the k-th poisoned transition uses the k-th
/// (task, trigger) pair in round-robin over the flattened list.
pub fn select_task(poison_count: u64, pairs: &[(usize, usize)]) -> (usize, usize) {
    pairs[(poison_count % pairs.len() as u64) as usize]
}

/// Ablation switches for the experiment harness.
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct AblationFlags {
    pub no_ewa: bool,
    pub no_freeze: bool,
    pub no_action_tamper: bool,
    pub no_adaptive: bool,
}

/// Everything needed to build an [`AttackEngine`].
#[derive(Debug, Clone)]
pub struct AttackParams {
    pub strategy: AttackStrategy,
    pub tasks: Vec<BackdoorTask>,
    pub poison: PoisonConfig,
    pub paradigm: PoisonParadigm,
    pub beta: f64,
    pub freeze_mode: FreezeMode,
    pub phi_t: u64,
    pub phi_p: f64,
    pub omega: Option<f64>,
    pub e_n: f64,
    pub e_b: f64,
    pub t_b_frac: f64,
    pub t_n_frac: f64,
    pub total_steps: u64,
    pub probe_interval: u64,
    pub explore_interval: u64,
    pub converge_window: usize,
    pub flags: AblationFlags,
    /// Known BTP bounds; estimated from freezing-phase returns when absent.
    pub bounds_override: Option<(f64, f64)>,
    pub seed: u64,
}

/// One row of the attack timeline, appended at episode ends and at
/// exploration checks.
#[derive(Debug, Clone)]
pub struct TimelineRow {
    pub step: u64,
    pub episode_return_raw: f64,
    pub btp: f64,
    pub asr: f64,
    pub r_dagger: f64,
    pub r_l: f64,
    pub r_u: f64,
    pub phase: &'static str,
    pub frozen: bool,
}

/// The man-in-the-middle attack engine, wired into a trainer as hooks.
pub struct AttackEngine {
    pub params: AttackParams,
    pub monitor: MonitorState,
    pub freeze: FreezeState,
    pub reward_space: Option<RewardSpace>,
    pub schedule: Option<ExpectationSchedule>,
    /// Flattened (task index, trigger id) pairs in cross-poisoning order.
    pairs: Vec<(usize, usize)>,
    rewards_pre_space: Vec<f64>,
    freeze_returns: Vec<f64>,
    steps_since_lift: u64,
    lift_ordinal: Option<u64>,
    pub poison_count: u64,
    last_check: (f64, f64),
    last_episode_return: f64,
    rng: Rng,
    pub timeline: Vec<TimelineRow>,
}

impl AttackEngine {
    pub fn new(mut params: AttackParams) -> Result<Self, AttackError> {
        if params.tasks.is_empty() {
            return Err(AttackError::NoTasks);
        }
        if params.flags.no_ewa {
            params.beta = 0.0;
        }
        let pairs: Vec<(usize, usize)> = params
            .tasks
            .iter()
            .enumerate()
            .flat_map(|(i, task)| (0..task.n_triggers()).map(move |j| (i, j)))
            .collect();
        let (p_l, p_u) = params.bounds_override.unwrap_or((0.0, 1.0));
        let monitor = MonitorState::new(params.beta, params.poison.epsilon, pairs.len(), p_l, p_u);
        let freeze = if params.flags.no_freeze {
            FreezeState::lifted(0)
        } else {
            FreezeState::new(params.freeze_mode, params.phi_t, params.phi_p)
        };
        let rng = Rng::stream(params.seed, 0x41544B); // "ATK"
        let mut engine = AttackEngine {
            monitor,
            freeze,
            reward_space: None,
            schedule: None,
            pairs,
            rewards_pre_space: Vec::new(),
            freeze_returns: Vec::new(),
            steps_since_lift: 0,
            lift_ordinal: None,
            poison_count: 0,
            last_check: (0.0, 0.0),
            last_episode_return: 0.0,
            rng,
            timeline: Vec::new(),
            params,
        };
        if engine.freeze.t_f.is_some() {
            engine.build_schedule(0);
        }
        Ok(engine)
    }

    fn build_schedule(&mut self, t_f: u64) {
        let total = self.params.total_steps;
        let t_b = ((self.params.t_b_frac * total as f64) as u64).max(t_f + 1);
        let t_n = ((self.params.t_n_frac * total as f64) as u64).max(t_b + 1);
        self.schedule = Some(ExpectationSchedule {
            e_n: self.params.e_n,
            e_b: self.params.e_b,
            t_f,
            t_b,
            t_n,
        });
    }

    fn ensure_reward_space(&mut self) {
        if self.reward_space.is_none() {
            if let Ok(mut space) = init_reward_space(
                &self.rewards_pre_space,
                self.params.omega,
                self.params.converge_window,
            ) {
                if self.params.paradigm == PoisonParadigm::OuterLoop {
                    // no ASR signal: skip expansion, keep only the
                    // benign-performance contraction brake
                    space.phase = Phase::Contraction;
                }
                self.reward_space = Some(space);
            }
        }
    }

    /// Backdoor reward currently in effect (fixed strategies report their
    /// constant; unexplored spaces report 0).
    pub fn current_reward(&self) -> f64 {
        match self.params.strategy {
            AttackStrategy::Unidoor => self.reward_space.as_ref().map_or(0.0, |s| s.r_dagger),
            AttackStrategy::Fixed { r } => r,
            AttackStrategy::TrojDrl => 1.0,
            _ => 0.0,
        }
    }

    fn record_row(&mut self, step: u64) {
        let (r_dagger, r_l, r_u, phase) = match &self.reward_space {
            Some(s) => (s.r_dagger, s.r_l, s.r_u, s.phase.as_str()),
            None => (self.current_reward(), 0.0, 0.0, ""),
        };
        self.timeline.push(TimelineRow {
            step,
            episode_return_raw: self.last_episode_return,
            btp: self.monitor.p,
            asr: self.monitor.min_asr(),
            r_dagger,
            r_l,
            r_u,
            phase,
            frozen: self.freeze.frozen,
        });
    }

    fn exploration_check(&mut self, t: u64) {
        let Some(sched) = self.schedule else { return };
        let frozen = self.freeze.frozen;
        let Ok((e, e_dagger)) = expectations(t, frozen, &sched) else {
            return;
        };
        let p = self.monitor.p;
        let asr = if self.params.paradigm == PoisonParadigm::OuterLoop {
            // unobservable: treated as converged so only the BTP branch fires
            1.0
        } else {
            self.monitor.min_asr()
        };
        if self.params.strategy == AttackStrategy::Unidoor && !self.params.flags.no_adaptive {
            if let Some(space) = &mut self.reward_space {
                space.adapt(AdaptInputs {
                    p,
                    p_prev: self.last_check.0,
                    asr,
                    asr_prev: self.last_check.1,
                    e,
                    e_dagger,
                    e_b: self.params.e_b,
                });
            }
        }
        self.last_check = (p, asr);
        self.record_row(t);
    }
}

impl Hooks for AttackEngine {
    fn on_observation(&mut self, obs: &mut Vec<f64>, policy: &Policy, t: u64) {
        if self.params.paradigm == PoisonParadigm::OuterLoop {
            return;
        }
        if self.params.probe_interval > 0 && t.is_multiple_of(self.params.probe_interval) {
            let g = self.monitor.next_probe_trigger(self.pairs.len());
            let (task_idx, trigger_id) = self.pairs[g];
            // per-trigger EWA slot is the flattened pair index
            let task = &self.params.tasks[task_idx];
            let triggered = task.apply_trigger(obs, trigger_id);
            let mut probe_rng = Rng::new(0);
            if let Ok(out) = policy.act(&triggered, ActionMode::Deterministic, &mut probe_rng) {
                let matched = action_matches(
                    &out.action,
                    task.target_action(trigger_id),
                    self.params.poison.epsilon,
                );
                let ind = if matched { 1.0 } else { 0.0 };
                self.monitor.asr[g] =
                    self.monitor.beta * self.monitor.asr[g] + (1.0 - self.monitor.beta) * ind;
            }
        }
    }

    fn on_transition(&mut self, tr: Transition, t: u64) -> Transition {
        if self.reward_space.is_none() {
            self.rewards_pre_space.push(tr.reward);
        }
        if self.freeze.frozen {
            return tr;
        }
        self.steps_since_lift += 1;
        let mut out = tr;
        if self.params.paradigm == PoisonParadigm::InnerLoop
            && self.steps_since_lift.is_multiple_of(self.params.poison.poison_interval)
        {
            self.ensure_reward_space();
            let original_reward = out.reward;
            let (task_idx, trigger_id) = select_task(self.poison_count, &self.pairs);
            self.poison_count += 1;
            let tamper_now = !self.params.flags.no_action_tamper
                && self.poison_count.is_multiple_of(self.params.poison.tamper_freq);
            let task = &self.params.tasks[task_idx];
            let (tampered, matched) = tamper_transition(
                out,
                task,
                trigger_id,
                &self.params.poison,
                tamper_now,
                &mut self.rng,
            );
            out = tampered;
            out.reward = match self.params.strategy {
                AttackStrategy::Unidoor => {
                    let r = self.reward_space.as_ref().map_or(1.0, |s| s.r_dagger);
                    if matched {
                        r
                    } else {
                        -r
                    }
                }
                ref s => baseline_hack(s, original_reward, matched),
            };
        }
        if self.params.explore_interval > 0
            && self.steps_since_lift.is_multiple_of(self.params.explore_interval)
        {
            self.exploration_check(t);
        }
        out
    }

    fn on_buffer(&mut self, buffer: &mut crate::trainers::ReplayBuffer, t: u64) {
        if self.params.paradigm != PoisonParadigm::OuterLoop || self.freeze.frozen {
            return;
        }
        let lift = *self
            .lift_ordinal
            .get_or_insert_with(|| buffer.total_pushed());
        let newest = buffer.total_pushed();
        if newest <= lift || !(newest - lift).is_multiple_of(self.params.poison.poison_interval) {
            return;
        }
        self.ensure_reward_space();
        let Some(stored) = buffer.get_by_ordinal_mut(newest) else {
            return;
        };
        let original_reward = stored.reward;
        let (task_idx, trigger_id) = select_task(self.poison_count, &self.pairs);
        self.poison_count += 1;
        let tamper_now = !self.params.flags.no_action_tamper
            && self.poison_count.is_multiple_of(self.params.poison.tamper_freq);
        let task = &self.params.tasks[task_idx];
        let (tampered, matched) = tamper_transition(
            stored.clone(),
            task,
            trigger_id,
            &self.params.poison,
            tamper_now,
            &mut self.rng,
        );
        *stored = tampered;
        stored.reward = match self.params.strategy {
            AttackStrategy::Unidoor => {
                let r = self.reward_space.as_ref().map_or(1.0, |s| s.r_dagger);
                if matched {
                    r
                } else {
                    -r
                }
            }
            ref s => baseline_hack(s, original_reward, matched),
        };
        let _ = t;
    }

    fn on_episode_end(&mut self, traj: &Trajectory, t: u64) {
        self.last_episode_return = traj.episode_return();
        if self.freeze.frozen {
            self.freeze_returns.push(self.last_episode_return);
            if self.params.bounds_override.is_none() {
                if let Ok((lo, hi)) = estimate_bounds(&self.freeze_returns) {
                    let _ = self.monitor.set_bounds(lo, hi);
                }
            }
        }
        let _ = self.monitor.update_btp(traj);
        let was_frozen = self.freeze.frozen;
        // the BTP threshold compares against the debiased estimate: the raw
        // zero-started average reads near 1 on negative-return tasks and
        // would lift the freeze after a single episode
        self.freeze
            .check(self.monitor.n_trajectories, self.monitor.debiased_p(), t);
        if was_frozen && !self.freeze.frozen {
            let t_f = self.freeze.t_f.unwrap_or(t);
            self.build_schedule(t_f);
            self.ensure_reward_space();
        }
        self.record_row(t);
    }
}

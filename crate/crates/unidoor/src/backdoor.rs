//! Backdoor task catalog and the trigger-state / trigger-action mappings.
//!
//! A backdoor task is a set of triggers (observation dimensions overwritten
//! with fixed values) each bound to a target action. The catalog ships as a
//! JSON data file (`data/backdoor_catalog.json`), so new designs can be added
//! without code changes. Continuous target actions are expressed in the
//! normalized [-1, 1] action space; the sign convention for Pendulum torque
//! is left = -1, right = +1.
//!
//! Triggered observations are not clamped to the environment's natural
//! observation range: after triggering, observations are treated as
//! unbounded reals.

use crate::envs::EnvName;
use serde::{Deserialize, Serialize};

/// One trigger: the listed observation dimensions are overwritten with the
/// paired values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub positions: Vec<usize>,
    pub values: Vec<f64>,
}

/// Target action for one trigger. Continuous values live in [-1, 1]^dim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetAction {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackdoorTask {
    pub index: usize,
    pub env: EnvName,
    pub triggers: Vec<Trigger>,
    pub targets: Vec<TargetAction>,
}

#[derive(Debug, thiserror::Error)]
pub enum BackdoorError {
    #[error("backdoor task index {0} is not in the catalog (supported: {1})")]
    UnknownIndex(usize, String),
    #[error("catalog data is invalid: {0}")]
    BadCatalog(String),
}

const CATALOG_JSON: &str = include_str!("../data/backdoor_catalog.json");

fn env_state_dim(env: EnvName) -> usize {
    match env {
        EnvName::CartPole => 4,
        EnvName::MountainCar => 2,
        EnvName::Pendulum => 3,
    }
}

fn validate(task: &BackdoorTask) -> Result<(), BackdoorError> {
    let dim = env_state_dim(task.env);
    if task.triggers.is_empty() || task.triggers.len() != task.targets.len() {
        return Err(BackdoorError::BadCatalog(format!(
            "task {}: trigger/target counts differ",
            task.index
        )));
    }
    for trig in &task.triggers {
        if trig.positions.len() != trig.values.len() || trig.positions.is_empty() {
            return Err(BackdoorError::BadCatalog(format!(
                "task {}: positions/values length mismatch",
                task.index
            )));
        }
        if trig.positions.iter().any(|&p| p >= dim) {
            return Err(BackdoorError::BadCatalog(format!(
                "task {}: trigger position exceeds state dim {dim}",
                task.index
            )));
        }
        if trig.values.iter().any(|v| !v.is_finite()) {
            return Err(BackdoorError::BadCatalog(format!(
                "task {}: non-finite trigger value",
                task.index
            )));
        }
    }
    Ok(())
}

/// Parses a catalog from JSON text, validating every entry.
pub fn parse_catalog(json: &str) -> Result<Vec<BackdoorTask>, BackdoorError> {
    let tasks: Vec<BackdoorTask> =
        serde_json::from_str(json).map_err(|e| BackdoorError::BadCatalog(e.to_string()))?;
    for t in &tasks {
        validate(t)?;
    }
    Ok(tasks)
}

fn builtin_catalog() -> &'static Vec<BackdoorTask> {
    use std::sync::OnceLock;
    static CATALOG: OnceLock<Vec<BackdoorTask>> = OnceLock::new();
    CATALOG.get_or_init(|| parse_catalog(CATALOG_JSON).expect("embedded catalog is valid"))
}

/// Returns the catalog entry for the given index.
pub fn catalog(index: usize) -> Result<BackdoorTask, BackdoorError> {
    let tasks = builtin_catalog();
    tasks
        .iter()
        .find(|t| t.index == index)
        .cloned()
        .ok_or_else(|| {
            let supported: Vec<String> = tasks.iter().map(|t| t.index.to_string()).collect();
            BackdoorError::UnknownIndex(index, supported.join(", "))
        })
}

/// All indices present in the built-in catalog.
pub fn catalog_indices() -> Vec<usize> {
    builtin_catalog().iter().map(|t| t.index).collect()
}

impl BackdoorTask {
    /// Copies `obs` with the trigger's positions overwritten by its values;
    /// every other dimension is preserved bit for bit.
    pub fn apply_trigger(&self, obs: &[f64], trigger_id: usize) -> Vec<f64> {
        let trig = &self.triggers[trigger_id];
        let mut out = obs.to_vec();
        for (&p, &v) in trig.positions.iter().zip(&trig.values) {
            out[p] = v;
        }
        out
    }

    /// Target action bound to the trigger (continuous targets normalized).
    pub fn target_action(&self, trigger_id: usize) -> &TargetAction {
        &self.targets[trigger_id]
    }

    pub fn n_triggers(&self) -> usize {
        self.triggers.len()
    }

    /// Whether the trigger-to-target mapping is injective. Multi-trigger
    /// designs may intentionally reuse a target, so this is a checkable
    /// predicate rather than a validation rule.
    pub fn fa_injective(&self) -> bool {
        for i in 0..self.targets.len() {
            for j in (i + 1)..self.targets.len() {
                if self.targets[i] == self.targets[j] {
                    return false;
                }
            }
        }
        true
    }
}

/// Whether an action matches a target: exact index equality for discrete,
/// l2 distance within `epsilon` in normalized space for continuous.
pub fn action_matches(action: &TargetAction, target: &TargetAction, epsilon: f64) -> bool {
    match (action, target) {
        (TargetAction::Discrete(a), TargetAction::Discrete(t)) => a == t,
        (TargetAction::Continuous(a), TargetAction::Continuous(t)) => l2_distance(a, t) <= epsilon,
        _ => false,
    }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

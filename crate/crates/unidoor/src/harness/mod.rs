//! Config-driven experiment orchestration, evaluation metrics, activation
//! strategies, stealth reports, post-training attacks, ablations, and the
//! retraining defenses.

mod config;
mod defend;
mod evaluate;
mod report;
mod runner;
mod stealth;

pub use config::{
    default_trainer, load_config, parse_config, AttackKnobs, BoundsMode, ConfigError, EvalConfig,
    ExperimentConfig, RunMode,
};
pub use defend::{defend, DefendMode, DefendPoint};
pub use evaluate::{
    activation_rollout, comprehensive_performance, evaluate, ActivationReport, Evaluation,
};
pub use report::{write_line_chart, write_run_csv, write_timeline_charts, ChartSeries};
pub use runner::{
    load_seed_policies, load_tasks, median, run, Aggregate, RunReport, SeedOutcome, TrainedPolicies,
};
pub use stealth::{action_kl, stealth_report, StealthReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Train(#[from] crate::trainers::TrainError),
    #[error(transparent)]
    Attack(#[from] crate::attack::AttackError),
    #[error(transparent)]
    Backdoor(#[from] crate::backdoor::BackdoorError),
    #[error(transparent)]
    Monitor(#[from] crate::monitor::MonitorError),
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

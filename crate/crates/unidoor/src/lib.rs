//! A laboratory for action-level backdoor attacks in deep reinforcement
//! learning: classic-control environments, PPO/DDPG trainers with
//! poisoning hooks, the UNIDOOR adaptive backdoor-reward attack with
//! baseline reward-hacking strategies, and a config-driven experiment
//! harness with evaluation, activation, stealth, and defense tooling.

pub mod attack;
pub mod backdoor;
pub mod envs;
pub mod harness;
pub mod monitor;
pub mod policy;
pub mod rng;
pub mod trainers;

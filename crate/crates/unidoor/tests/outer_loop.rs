//! Outer-loop (replay-buffer batch tampering) poisoning path on DDPG.

use std::path::Path;
use unidoor::attack::{AttackStrategy, PoisonParadigm};
use unidoor::backdoor::TargetAction;
use unidoor::envs::EnvName;
use unidoor::harness::{run, ExperimentConfig};
use unidoor::trainers::Algorithm;

fn tmp(name: &str) -> std::path::PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn outer_cfg(out: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(EnvName::Pendulum, Algorithm::Ddpg);
    cfg.strategy = Some(AttackStrategy::Unidoor);
    cfg.tasks = vec![16];
    cfg.seeds = vec![5];
    cfg.attack.paradigm = PoisonParadigm::OuterLoop;
    cfg.attack.phi_t = 2;
    cfg.trainer.total_steps = 3000;
    cfg.trainer.ddpg.warmup_steps = 200;
    cfg.eval.episodes = 2;
    cfg.eval.probes = 20;
    cfg.out_dir = tmp(out);
    cfg
}

#[test]
fn outer_loop_requires_ddpg() {
    let mut cfg = outer_cfg("outer_reject");
    cfg.algorithm = Algorithm::Ppo;
    cfg.trainer.algorithm = Algorithm::Ppo;
    assert!(cfg.validate().is_err());
}

#[test]
fn outer_loop_tampers_buffer_on_schedule() {
    let cfg = outer_cfg("outer_run");
    let report = run(&cfg).unwrap();
    let seed = &report.seeds[0];
    assert!(seed.error.is_none(), "{:?}", seed.error);
    // poisoning happened at the configured interval after the freeze lift
    let t_f = seed.freeze_lift_step.expect("freeze lifted");
    let expected = (3000 - t_f) / cfg.attack.poison_interval;
    assert!(
        seed.poisoned_transitions.abs_diff(expected) <= 1,
        "poisoned {} vs expected {expected}",
        seed.poisoned_transitions
    );
    // ASR monitoring is incompatible with the outer loop: the monitored
    // column stays silent even though poisoning ran
    let csv = std::fs::read_to_string(cfg.out_dir.join("seed_5/run.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let asr: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(asr, 0.0, "monitored ASR should stay zero: {line}");
    }
    // BTP-only adaptation: the space never expands (phase is contraction
    // from initialization on)
    for line in csv.lines().skip(1) {
        let phase = line.split(',').nth(7).unwrap();
        assert_ne!(phase, "expansion");
    }
}

#[test]
fn inner_loop_ddpg_still_probes() {
    let mut cfg = outer_cfg("inner_ddpg");
    cfg.attack.paradigm = PoisonParadigm::InnerLoop;
    let report = run(&cfg).unwrap();
    assert!(report.seeds[0].error.is_none());
    // with probing enabled the ASR column is driven by the EWA and becomes
    // nonzero as soon as any probe matches, or stays a valid probability
    let csv = std::fs::read_to_string(cfg.out_dir.join("seed_5/run.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let asr: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&asr));
    }
}

#[test]
fn buffer_ordinal_lookup() {
    use unidoor::trainers::ReplayBuffer;
    let mut buf = ReplayBuffer::new(4);
    let mk = |r: f64| unidoor::trainers::Transition {
        state: vec![0.0; 3],
        action: TargetAction::Continuous(vec![0.0]),
        reward: r,
        done: false,
        next_state: vec![0.0; 3],
        log_prob: None,
        value: None,
        poisoned: false,
    };
    for i in 1..=6 {
        buf.push(mk(i as f64));
    }
    assert_eq!(buf.total_pushed(), 6);
    // ordinals 1 and 2 were evicted by the ring
    assert!(buf.get_by_ordinal_mut(1).is_none());
    assert!(buf.get_by_ordinal_mut(2).is_none());
    assert_eq!(buf.get_by_ordinal_mut(3).unwrap().reward, 3.0);
    assert_eq!(buf.get_by_ordinal_mut(6).unwrap().reward, 6.0);
    assert!(buf.get_by_ordinal_mut(7).is_none());
    assert!(buf.get_by_ordinal_mut(0).is_none());
}

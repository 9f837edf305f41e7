//! Stealth comparison of a benign and a backdoored policy on trigger-free
//! states: action-distribution divergence, deterministic agreement, state
//! histograms, and hidden-activation dumps for offline embedding.

use super::HarnessError;
use crate::backdoor::TargetAction;
use crate::envs::Env;
use crate::policy::{ActionMode, OutputHead, Policy};
use crate::rng::Rng;
use crate::trainers::to_env_action;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, serde::Serialize)]
pub struct StealthReport {
    /// Mean KL(benign || backdoored) over the sampled states.
    pub kl_benign_backdoored: f64,
    /// Mean KL(backdoored || benign).
    pub kl_backdoored_benign: f64,
    /// Fraction of states where the deterministic actions agree.
    pub agreement_rate: f64,
    pub n_states: usize,
}

fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(pi, qi)| {
            if *pi <= 0.0 {
                0.0
            } else {
                pi * (pi / qi.max(1e-12)).ln()
            }
        })
        .sum()
}

fn gaussian_kl(mp: &[f64], sp: &[f64], mq: &[f64], sq: &[f64]) -> f64 {
    mp.iter()
        .zip(sp)
        .zip(mq.iter().zip(sq))
        .map(|((m1, s1), (m2, s2))| {
            (s2 / s1).ln() + (s1 * s1 + (m1 - m2) * (m1 - m2)) / (2.0 * s2 * s2) - 0.5
        })
        .sum()
}

/// KL divergence between the two policies' action distributions at a state.
pub fn action_kl(p: &Policy, q: &Policy, obs: &[f64]) -> Result<f64, HarnessError> {
    match (p.arch.head, q.arch.head) {
        (OutputHead::CategoricalLogits, OutputHead::CategoricalLogits) => {
            Ok(categorical_kl(&p.action_probs(obs)?, &q.action_probs(obs)?))
        }
        (OutputHead::GaussianMean, OutputHead::GaussianMean) => {
            let (mp, mq) = (p.head_output(obs)?, q.head_output(obs)?);
            let (sp, sq) = (p.gaussian_std().unwrap(), q.gaussian_std().unwrap());
            Ok(gaussian_kl(&mp, &sp, &mq, &sq))
        }
        _ => Err(HarnessError::Mismatch(
            "policies have different head types".into(),
        )),
    }
}

fn agreement(a: &TargetAction, b: &TargetAction, epsilon: f64) -> bool {
    match (a, b) {
        (TargetAction::Discrete(x), TargetAction::Discrete(y)) => x == y,
        (TargetAction::Continuous(x), TargetAction::Continuous(y)) => {
            crate::backdoor::l2_distance(x, y) <= epsilon
        }
        _ => false,
    }
}

fn sample_states(
    policy: &Policy,
    env: &mut Env,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut states = Vec::with_capacity(n);
    env.reset(None);
    while states.len() < n {
        let obs = env.obs();
        let out = policy.act(&obs, ActionMode::Sample, rng)?;
        states.push(obs);
        let step = env.step(&to_env_action(&out.action, &env.spec().action_space))?;
        if step.done() || env.step_count() >= env.spec().env_step_cap.unwrap_or(u32::MAX) {
            env.reset(None);
        }
    }
    Ok(states)
}

/// Samples `n_states` trigger-free states from each policy's own benign
/// visitation, then compares the policies on the pooled set. Optionally
/// dumps per-dimension state histograms and final-hidden-layer activations
/// as CSVs into `dump_dir`.
pub fn stealth_report(
    benign: &Policy,
    backdoored: &Policy,
    env: &mut Env,
    n_states: usize,
    epsilon: f64,
    seed: u64,
    dump_dir: Option<&Path>,
) -> Result<StealthReport, HarnessError> {
    if benign.arch.input_dim() != backdoored.arch.input_dim()
        || benign.arch.head != backdoored.arch.head
    {
        return Err(HarnessError::Mismatch(
            "benign and backdoored policies must share observation space and head".into(),
        ));
    }
    let mut rng = Rng::stream(seed, 0x53544C); // "STL"
    let half = (n_states / 2).max(1);
    env.reset(Some(seed));
    let mut states = sample_states(benign, env, half, &mut rng)?;
    env.reset(Some(seed.wrapping_add(1)));
    let from_backdoored = sample_states(backdoored, env, half, &mut rng)?;

    if let Some(dir) = dump_dir {
        std::fs::create_dir_all(dir).map_err(HarnessError::Io)?;
        write_state_histograms(dir, &states, &from_backdoored)?;
        write_activations(dir, benign, backdoored, &states, &from_backdoored)?;
    }
    states.extend(from_backdoored);

    let mut kl_pq = 0.0;
    let mut kl_qp = 0.0;
    let mut agree = 0usize;
    for s in &states {
        kl_pq += action_kl(benign, backdoored, s)?;
        kl_qp += action_kl(backdoored, benign, s)?;
        let a = benign.act(s, ActionMode::Deterministic, &mut rng)?;
        let b = backdoored.act(s, ActionMode::Deterministic, &mut rng)?;
        if agreement(&a.action, &b.action, epsilon) {
            agree += 1;
        }
    }
    let n = states.len() as f64;
    Ok(StealthReport {
        kl_benign_backdoored: kl_pq / n,
        kl_backdoored_benign: kl_qp / n,
        agreement_rate: agree as f64 / n,
        n_states: states.len(),
    })
}

const HISTOGRAM_BINS: usize = 30;

fn write_state_histograms(
    dir: &Path,
    benign_states: &[Vec<f64>],
    backdoored_states: &[Vec<f64>],
) -> Result<(), HarnessError> {
    let dims = benign_states.first().map(|s| s.len()).unwrap_or(0);
    let mut out = String::from("policy,dim,bin_lo,bin_hi,count\n");
    for d in 0..dims {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in benign_states.iter().chain(backdoored_states) {
            lo = lo.min(s[d]);
            hi = hi.max(s[d]);
        }
        if lo == hi {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        for (label, states) in [("benign", benign_states), ("backdoored", backdoored_states)] {
            let mut counts = vec![0usize; HISTOGRAM_BINS];
            for s in states {
                let b = (((s[d] - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
                counts[b] += 1;
            }
            for (b, c) in counts.iter().enumerate() {
                let blo = lo + b as f64 * width;
                out.push_str(&format!("{label},{d},{blo},{},{c}\n", blo + width));
            }
        }
    }
    let mut f = std::fs::File::create(dir.join("states.csv")).map_err(HarnessError::Io)?;
    f.write_all(out.as_bytes()).map_err(HarnessError::Io)
}

fn write_activations(
    dir: &Path,
    benign: &Policy,
    backdoored: &Policy,
    benign_states: &[Vec<f64>],
    backdoored_states: &[Vec<f64>],
) -> Result<(), HarnessError> {
    let mut f = std::fs::File::create(dir.join("activations.csv")).map_err(HarnessError::Io)?;
    let width = benign.hidden_activations(&benign_states[0])?.len();
    let header: Vec<String> = (0..width).map(|i| format!("h{i}")).collect();
    writeln!(f, "policy,{}", header.join(",")).map_err(HarnessError::Io)?;
    for (label, policy, states) in [
        ("benign", benign, benign_states),
        ("backdoored", backdoored, backdoored_states),
    ] {
        for s in states {
            let acts = policy.hidden_activations(s)?;
            let row: Vec<String> = acts.iter().map(|v| format!("{v}")).collect();
            writeln!(f, "{label},{}", row.join(",")).map_err(HarnessError::Io)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, EnvName};
    use crate::policy::{init_policy, MlpArch};

    #[test]
    fn policy_vs_itself_zero_kl_full_agreement() {
        let policy = init_policy(MlpArch::ppo_actor_discrete(4, 2), 0).unwrap();
        let mut env = make_env(EnvName::CartPole, 0);
        let rep = stealth_report(&policy, &policy, &mut env, 100, 0.05, 7, None).unwrap();
        assert!(rep.kl_benign_backdoored.abs() < 1e-12);
        assert!(rep.kl_backdoored_benign.abs() < 1e-12);
        assert_eq!(rep.agreement_rate, 1.0);
    }

    #[test]
    fn closed_form_categorical_kl() {
        // p = (0.5, 0.5), q = (0.9, 0.1)
        let kl = categorical_kl(&[0.5, 0.5], &[0.9, 0.1]);
        let want = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl - want).abs() < 1e-12);
        assert!((kl - 0.5108).abs() < 1e-3);
    }

    #[test]
    fn gaussian_kl_identity_zero() {
        assert_eq!(gaussian_kl(&[0.3], &[0.5], &[0.3], &[0.5]), 0.0);
        assert!(gaussian_kl(&[0.0], &[1.0], &[1.0], &[1.0]) > 0.0);
    }

    #[test]
    fn mismatched_heads_rejected() {
        let a = init_policy(MlpArch::ppo_actor_discrete(4, 2), 0).unwrap();
        let b = init_policy(MlpArch::ppo_critic(4), 0).unwrap();
        let mut env = make_env(EnvName::CartPole, 0);
        assert!(matches!(
            stealth_report(&a, &b, &mut env, 10, 0.05, 0, None),
            Err(HarnessError::Mismatch(_))
        ));
    }

    #[test]
    fn dumps_csv_files() {
        let policy = init_policy(MlpArch::ppo_actor_discrete(4, 2), 3).unwrap();
        let mut env = make_env(EnvName::CartPole, 0);
        let dir = std::env::temp_dir().join("unidoor_stealth_test");
        let _ = std::fs::remove_dir_all(&dir);
        stealth_report(&policy, &policy, &mut env, 60, 0.05, 1, Some(&dir)).unwrap();
        let states = std::fs::read_to_string(dir.join("states.csv")).unwrap();
        assert!(states.starts_with("policy,dim,bin_lo,bin_hi,count"));
        // 4 dims x 2 policies x 30 bins + header
        assert_eq!(states.lines().count(), 1 + 4 * 2 * 30);
        let acts = std::fs::read_to_string(dir.join("activations.csv")).unwrap();
        assert!(acts.lines().next().unwrap().starts_with("policy,h0,h1"));
        assert_eq!(acts.lines().count(), 1 + 60);
    }
}

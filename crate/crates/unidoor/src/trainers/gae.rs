//! Generalized advantage estimation over rollout fragments.

use super::Trajectory;

#[derive(Debug, Clone)]
pub struct GaeOut {
    /// Batch-normalized advantages (mean 0, std 1), fragment order.
    pub advantages: Vec<f64>,
    /// Raw (unnormalized) advantages.
    pub raw_advantages: Vec<f64>,
    /// Value targets: raw advantage + value estimate.
    pub returns: Vec<f64>,
}

/// Runs the GAE recursion per fragment. Each fragment's last transition
/// bootstraps from `bootstrap_value` unless it terminated the episode;
/// `done` masks the bootstrap inside a fragment as usual.
pub fn gae(fragments: &[Trajectory], gamma: f64, lambda: f64) -> GaeOut {
    let total: usize = fragments.iter().map(|f| f.len()).sum();
    let mut raw = vec![0.0; total];
    let mut returns = vec![0.0; total];
    let mut offset = total;
    for frag in fragments.iter().rev() {
        let n = frag.len();
        offset -= n;
        let mut adv_next = 0.0;
        let mut value_next = frag.bootstrap_value;
        for (i, tr) in frag.transitions.iter().enumerate().rev() {
            let value = tr.value.unwrap_or(0.0);
            let mask = if tr.done { 0.0 } else { 1.0 };
            let delta = tr.reward + gamma * mask * value_next - value;
            let adv = delta + gamma * lambda * mask * adv_next;
            raw[offset + i] = adv;
            returns[offset + i] = adv + value;
            adv_next = adv;
            value_next = value;
        }
    }
    let mean = raw.iter().sum::<f64>() / total.max(1) as f64;
    let var = raw.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / total.max(1) as f64;
    let std = var.sqrt().max(1e-8);
    let advantages = raw.iter().map(|a| (a - mean) / std).collect();
    GaeOut {
        advantages,
        raw_advantages: raw,
        returns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backdoor::TargetAction;
    use crate::rng::Rng;
    use crate::trainers::Transition;

    fn frag(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64) -> Trajectory {
        Trajectory {
            transitions: rewards
                .iter()
                .zip(values)
                .zip(dones)
                .map(|((r, v), d)| Transition {
                    state: vec![0.0],
                    action: TargetAction::Discrete(0),
                    reward: *r,
                    done: *d,
                    next_state: vec![0.0],
                    log_prob: Some(0.0),
                    value: Some(*v),
                    poisoned: false,
                })
                .collect(),
            complete: *dones.last().unwrap(),
            bootstrap_value: bootstrap,
        }
    }

    #[test]
    fn telescoping_sum_when_lambda_gamma_one() {
        let rewards = [1.0, 2.0, 3.0, 4.0];
        let values = [0.0; 4];
        let dones = [false, false, false, true];
        let out = gae(&[frag(&rewards, &values, &dones, 0.0)], 1.0, 1.0);
        // advantage at t = sum of remaining rewards
        assert_eq!(out.raw_advantages, vec![10.0, 9.0, 7.0, 4.0]);
    }

    #[test]
    fn single_step_episode() {
        let out = gae(&[frag(&[2.5], &[0.7], &[true], 0.0)], 0.99, 0.95);
        assert!((out.raw_advantages[0] - (2.5 - 0.7)).abs() < 1e-12);
        assert!((out.returns[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn matches_brute_force_oracle() {
        // direct double-loop evaluation of the GAE sum:
        // A_t = sum_{l>=0} (gamma*lambda)^l * delta_{t+l}, cut at dones
        let mut rng = Rng::new(3);
        let n = 10;
        let rewards: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut dones = vec![false; n];
        dones[4] = true; // an episode boundary inside the fragment
        let bootstrap = 0.37;
        let (gamma, lambda) = (0.99, 0.95);

        let next_value = |t: usize| -> f64 {
            if t + 1 < n {
                values[t + 1]
            } else {
                bootstrap
            }
        };
        let delta = |t: usize| -> f64 {
            let mask = if dones[t] { 0.0 } else { 1.0 };
            rewards[t] + gamma * mask * next_value(t) - values[t]
        };
        let mut expect = vec![0.0; n];
        for t in 0..n {
            let mut acc = 0.0;
            let mut coef = 1.0;
            for l in t..n {
                acc += coef * delta(l);
                if dones[l] {
                    break;
                }
                coef *= gamma * lambda;
            }
            expect[t] = acc;
        }

        let out = gae(&[frag(&rewards, &values, &dones, bootstrap)], gamma, lambda);
        for t in 0..n {
            assert!(
                (out.raw_advantages[t] - expect[t]).abs() < 1e-10,
                "t={t}: {} vs {}",
                out.raw_advantages[t],
                expect[t]
            );
        }
    }

    #[test]
    fn normalization_mean_zero_std_one() {
        let mut rng = Rng::new(8);
        let n = 64;
        let rewards: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 3.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let dones = vec![false; n];
        let out = gae(&[frag(&rewards, &values, &dones, 0.1)], 0.99, 0.95);
        let mean = out.advantages.iter().sum::<f64>() / n as f64;
        let std = (out
            .advantages
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn truncated_fragment_bootstraps() {
        // same rewards, one fragment terminated vs one truncated with a
        // large bootstrap: the truncated advantage must be larger
        let rewards = [1.0, 1.0];
        let values = [0.0, 0.0];
        let done = gae(&[frag(&rewards, &values, &[false, true], 0.0)], 0.99, 0.95);
        let trunc = gae(
            &[frag(&rewards, &values, &[false, false], 10.0)],
            0.99,
            0.95,
        );
        assert!(trunc.raw_advantages[1] > done.raw_advantages[1]);
    }
}

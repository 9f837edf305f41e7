//! Batch losses over policies and their exact reverse-mode gradients.
//!
//! Losses are weighted sums of primitive terms (clipped surrogate, value
//! regression, entropy, weighted log-prob, output regression). Every term
//! has an analytic gradient; the test suite checks each against central
//! finite differences.

use super::net;
use super::{gaussian_log_prob, OutputHead, Policy, PolicyError};
use crate::backdoor::TargetAction;

/// A primitive loss term (all are minimized).
#[derive(Debug, Clone)]
pub enum LossKind<'a> {
    /// Negated PPO clipped surrogate:
    /// `-mean(min(r * A, clip(r, 1-eps, 1+eps) * A))` with `r` the
    /// probability ratio against `old_logp`.
    PpoClip {
        obs: &'a [Vec<f64>],
        actions: &'a [TargetAction],
        old_logp: &'a [f64],
        advantages: &'a [f64],
        clip_eps: f64,
    },
    /// `mean(0.5 * (v(s) - target)^2)` for ScalarValue heads.
    ValueMse {
        obs: &'a [Vec<f64>],
        targets: &'a [f64],
    },
    /// Negated mean entropy of the action distribution.
    NegEntropy { obs: &'a [Vec<f64>] },
    /// `-mean(w_i * log pi(a_i | s_i))`.
    NegLogProb {
        obs: &'a [Vec<f64>],
        actions: &'a [TargetAction],
        weights: &'a [f64],
    },
    /// `mean(0.5 * ||head(s) - target||^2)` on the head output (post-tanh
    /// for DeterministicTanh heads).
    OutputMse {
        obs: &'a [Vec<f64>],
        targets: &'a [Vec<f64>],
    },
}

#[derive(Debug, Clone)]
pub struct LossTerm<'a> {
    pub weight: f64,
    pub kind: LossKind<'a>,
}

/// Diagnostics from a PpoClip evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct PpoBatchStats {
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

fn flatten(obs: &[Vec<f64>], dim: usize) -> Result<Vec<f64>, PolicyError> {
    let mut xs = Vec::with_capacity(obs.len() * dim);
    for o in obs {
        if o.len() != dim {
            return Err(PolicyError::InputDim {
                got: o.len(),
                want: dim,
            });
        }
        if o.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteInput);
        }
        xs.extend_from_slice(o);
    }
    Ok(xs)
}

struct TermEval {
    value: f64,
    stats: Option<PpoBatchStats>,
}

/// Log-prob of one action given the head output row, plus the gradient of
/// that log-prob with respect to the head pre-activation (and log-std).
fn logp_and_grad(
    head: OutputHead,
    out_row: &[f64],
    std: Option<&[f64]>,
    action: &TargetAction,
) -> (f64, Vec<f64>, Vec<f64>) {
    match (head, action) {
        (OutputHead::CategoricalLogits, TargetAction::Discrete(a)) => {
            let m = out_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + out_row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            let probs: Vec<f64> = out_row.iter().map(|z| (z - lse).exp()).collect();
            let logp = out_row[*a] - lse;
            let mut dz: Vec<f64> = probs.iter().map(|p| -p).collect();
            dz[*a] += 1.0;
            (logp, dz, Vec::new())
        }
        (OutputHead::GaussianMean, TargetAction::Continuous(a)) => {
            let std = std.expect("gaussian head has log-std");
            let logp = gaussian_log_prob(out_row, std, a);
            let mut d_mean = Vec::with_capacity(out_row.len());
            let mut d_log_std = Vec::with_capacity(out_row.len());
            for d in 0..out_row.len() {
                let z = (a[d] - out_row[d]) / std[d];
                d_mean.push(z / std[d]);
                d_log_std.push(z * z - 1.0);
            }
            (logp, d_mean, d_log_std)
        }
        _ => panic!("action kind does not match policy head"),
    }
}

fn eval_term(
    policy: &Policy,
    lay: &net::Layout,
    term: &LossTerm,
    grad: Option<&mut [f64]>,
) -> Result<TermEval, PolicyError> {
    let head = policy.arch.head;
    let dim = policy.arch.input_dim();
    let out_dim = policy.arch.output_dim();
    let std = policy.gaussian_std();

    let (obs, batch) = match &term.kind {
        LossKind::PpoClip { obs, .. }
        | LossKind::ValueMse { obs, .. }
        | LossKind::NegEntropy { obs }
        | LossKind::NegLogProb { obs, .. }
        | LossKind::OutputMse { obs, .. } => (*obs, obs.len()),
    };
    let xs = flatten(obs, dim)?;
    let (out, cache) = net::forward_batch(&policy.arch, lay, &policy.params, &xs, batch)?;
    let inv_b = 1.0 / batch as f64;

    // d loss / d final-preact, filled per term
    let mut d_pre = vec![0.0; batch * out_dim];
    let mut d_log_std_acc = vec![0.0; if std.is_some() { out_dim } else { 0 }];
    let mut value = 0.0;
    let mut stats = None;

    match &term.kind {
        LossKind::PpoClip {
            actions,
            old_logp,
            advantages,
            clip_eps,
            ..
        } => {
            let mut clipped = 0usize;
            let mut kl = 0.0;
            for b in 0..batch {
                let row = &out[b * out_dim..(b + 1) * out_dim];
                let (logp, d_head, d_ls) = logp_and_grad(head, row, std.as_deref(), &actions[b]);
                let ratio = (logp - old_logp[b]).exp();
                let adv = advantages[b];
                let unclipped = ratio * adv;
                let clamped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
                let obj = unclipped.min(clamped);
                value -= obj * inv_b;
                if (ratio - 1.0).abs() > *clip_eps {
                    clipped += 1;
                }
                kl += (old_logp[b] - logp) * inv_b;
                // gradient flows only while the unclipped branch is active
                let g_logp = if unclipped <= clamped {
                    -inv_b * ratio * adv
                } else {
                    0.0
                };
                if g_logp != 0.0 {
                    for (o, dh) in d_head.iter().enumerate() {
                        d_pre[b * out_dim + o] += g_logp * dh;
                    }
                    for (o, dls) in d_ls.iter().enumerate() {
                        d_log_std_acc[o] += g_logp * dls;
                    }
                }
            }
            stats = Some(PpoBatchStats {
                clip_fraction: clipped as f64 * inv_b,
                approx_kl: kl,
            });
        }
        LossKind::ValueMse { targets, .. } => {
            for b in 0..batch {
                let v = out[b];
                let err = v - targets[b];
                value += 0.5 * err * err * inv_b;
                d_pre[b] = err * inv_b;
            }
        }
        LossKind::NegEntropy { .. } => match head {
            OutputHead::CategoricalLogits => {
                for b in 0..batch {
                    let row = &out[b * out_dim..(b + 1) * out_dim];
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                    let mut entropy = 0.0;
                    let logps: Vec<f64> = row.iter().map(|z| z - lse).collect();
                    for lp in &logps {
                        entropy -= lp.exp() * lp;
                    }
                    value -= entropy * inv_b;
                    for o in 0..out_dim {
                        let p = logps[o].exp();
                        d_pre[b * out_dim + o] += p * (logps[o] + entropy) * inv_b;
                    }
                }
            }
            OutputHead::GaussianMean => {
                let stdv = std.as_ref().unwrap();
                let entropy: f64 = stdv
                    .iter()
                    .map(|s| 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln()) + s.ln())
                    .sum();
                value -= entropy;
                for g in d_log_std_acc.iter_mut() {
                    *g -= 1.0;
                }
            }
            other => {
                return Err(PolicyError::WrongHead {
                    want: OutputHead::CategoricalLogits,
                    got: other,
                })
            }
        },
        LossKind::NegLogProb {
            actions, weights, ..
        } => {
            for b in 0..batch {
                let row = &out[b * out_dim..(b + 1) * out_dim];
                let (logp, d_head, d_ls) = logp_and_grad(head, row, std.as_deref(), &actions[b]);
                value -= weights[b] * logp * inv_b;
                let g = -weights[b] * inv_b;
                for (o, dh) in d_head.iter().enumerate() {
                    d_pre[b * out_dim + o] += g * dh;
                }
                for (o, dls) in d_ls.iter().enumerate() {
                    d_log_std_acc[o] += g * dls;
                }
            }
        }
        LossKind::OutputMse { targets, .. } => {
            for b in 0..batch {
                for o in 0..out_dim {
                    let y = out[b * out_dim + o];
                    let err = y - targets[b][o];
                    value += 0.5 * err * err * inv_b;
                    let dy = err * inv_b;
                    d_pre[b * out_dim + o] = match head {
                        OutputHead::DeterministicTanh => dy * (1.0 - y * y),
                        _ => dy,
                    };
                }
            }
        }
    }

    if let Some(grad) = grad {
        let w = term.weight;
        if w != 0.0 {
            if w != 1.0 {
                for g in d_pre.iter_mut() {
                    *g *= w;
                }
            }
            net::backward_batch(
                &policy.arch,
                lay,
                &policy.params,
                &cache,
                &d_pre,
                Some(grad),
            );
            if let Some(off) = lay.log_std_off {
                for (o, g) in d_log_std_acc.iter().enumerate() {
                    grad[off + o] += w * g;
                }
            }
        }
    }

    Ok(TermEval {
        value: term.weight * value,
        stats,
    })
}

/// Total loss value of the weighted terms (no gradient).
pub fn loss_value(policy: &Policy, terms: &[LossTerm]) -> Result<f64, PolicyError> {
    let lay = policy.layout();
    let mut total = 0.0;
    for term in terms {
        total += eval_term(policy, &lay, term, None)?.value;
    }
    Ok(total)
}

/// Exact gradient of the weighted loss sum with respect to the flat
/// parameter vector.
pub fn gradient(policy: &Policy, terms: &[LossTerm]) -> Result<Vec<f64>, PolicyError> {
    Ok(loss_and_gradient(policy, terms)?.1)
}

/// Loss, gradient, and PPO diagnostics (when a PpoClip term is present).
pub fn loss_and_gradient(
    policy: &Policy,
    terms: &[LossTerm],
) -> Result<(f64, Vec<f64>, Option<PpoBatchStats>), PolicyError> {
    let lay = policy.layout();
    let mut grad = vec![0.0; lay.n_params];
    let mut total = 0.0;
    let mut stats = None;
    for term in terms {
        let ev = eval_term(policy, &lay, term, Some(&mut grad))?;
        total += ev.value;
        if ev.stats.is_some() {
            stats = ev.stats;
        }
    }
    Ok((total, grad, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_policy, ActionMode, Activation, InitScheme, MlpArch};
    use crate::rng::Rng;

    #[allow(clippy::needless_range_loop)]
    fn fd_gradient(policy: &Policy, terms: &[LossTerm], h: f64) -> Vec<f64> {
        let mut p = policy.clone();
        let mut g = vec![0.0; p.params.len()];
        for i in 0..p.params.len() {
            let orig = p.params[i];
            p.params[i] = orig + h;
            let up = loss_value(&p, terms).unwrap();
            p.params[i] = orig - h;
            let dn = loss_value(&p, terms).unwrap();
            p.params[i] = orig;
            g[i] = (up - dn) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-12)
    }

    fn tiny(head: super::OutputHead, out: usize, act: Activation) -> Policy {
        let arch = MlpArch {
            layer_sizes: vec![3, 8, out],
            activation: act,
            head,
            init: InitScheme::Orthogonal { gain: 1.0 },
            output_gain: 0.7,
        };
        init_policy(arch, 123).unwrap()
    }

    fn rand_obs(rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..3).map(|_| rng.uniform(-1.5, 1.5)).collect())
            .collect()
    }

    #[test]
    fn fd_check_categorical_ppo_clip() {
        let policy = tiny(OutputHead::CategoricalLogits, 3, Activation::Tanh);
        let mut rng = Rng::new(4);
        let obs = rand_obs(&mut rng, 6);
        let actions: Vec<TargetAction> = (0..6)
            .map(|_| TargetAction::Discrete(rng.below(3)))
            .collect();
        let old_logp: Vec<f64> = (0..6).map(|_| rng.uniform(-2.0, -0.5)).collect();
        let adv: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let terms = [LossTerm {
            weight: 1.0,
            kind: LossKind::PpoClip {
                obs: &obs,
                actions: &actions,
                old_logp: &old_logp,
                advantages: &adv,
                clip_eps: 0.2,
            },
        }];
        let g = gradient(&policy, &terms).unwrap();
        let fd = fd_gradient(&policy, &terms, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-4, "rel err {}", rel_err(&g, &fd));
    }

    #[test]
    fn fd_check_gaussian_logprob_and_entropy() {
        let policy = tiny(OutputHead::GaussianMean, 2, Activation::Tanh);
        let mut rng = Rng::new(9);
        let obs = rand_obs(&mut rng, 5);
        let actions: Vec<TargetAction> = (0..5)
            .map(|_| TargetAction::Continuous(vec![rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]))
            .collect();
        let weights: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let terms = [
            LossTerm {
                weight: 0.8,
                kind: LossKind::NegLogProb {
                    obs: &obs,
                    actions: &actions,
                    weights: &weights,
                },
            },
            LossTerm {
                weight: 0.3,
                kind: LossKind::NegEntropy { obs: &obs },
            },
        ];
        let g = gradient(&policy, &terms).unwrap();
        let fd = fd_gradient(&policy, &terms, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-4, "rel err {}", rel_err(&g, &fd));
    }

    #[test]
    fn fd_check_gaussian_ppo_clip() {
        let policy = tiny(OutputHead::GaussianMean, 1, Activation::Tanh);
        let mut rng = Rng::new(13);
        let obs = rand_obs(&mut rng, 8);
        let actions: Vec<TargetAction> = (0..8)
            .map(|_| TargetAction::Continuous(vec![rng.uniform(-1.0, 1.0)]))
            .collect();
        let old_logp: Vec<f64> = (0..8).map(|_| rng.uniform(-2.0, -0.8)).collect();
        let adv: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let terms = [LossTerm {
            weight: 1.0,
            kind: LossKind::PpoClip {
                obs: &obs,
                actions: &actions,
                old_logp: &old_logp,
                advantages: &adv,
                clip_eps: 0.2,
            },
        }];
        let g = gradient(&policy, &terms).unwrap();
        let fd = fd_gradient(&policy, &terms, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-4, "rel err {}", rel_err(&g, &fd));
    }

    #[test]
    fn fd_check_value_mse() {
        let policy = tiny(OutputHead::ScalarValue, 1, Activation::Tanh);
        let mut rng = Rng::new(2);
        let obs = rand_obs(&mut rng, 7);
        let targets: Vec<f64> = (0..7).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let terms = [LossTerm {
            weight: 0.5,
            kind: LossKind::ValueMse {
                obs: &obs,
                targets: &targets,
            },
        }];
        let g = gradient(&policy, &terms).unwrap();
        let fd = fd_gradient(&policy, &terms, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-4, "rel err {}", rel_err(&g, &fd));
    }

    #[test]
    fn fd_check_deterministic_tanh_relu() {
        let policy = tiny(OutputHead::DeterministicTanh, 2, Activation::ReLU);
        let mut rng = Rng::new(21);
        let obs = rand_obs(&mut rng, 6);
        let targets: Vec<Vec<f64>> = (0..6)
            .map(|_| vec![rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)])
            .collect();
        let terms = [LossTerm {
            weight: 1.0,
            kind: LossKind::OutputMse {
                obs: &obs,
                targets: &targets,
            },
        }];
        let g = gradient(&policy, &terms).unwrap();
        let fd = fd_gradient(&policy, &terms, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-4, "rel err {}", rel_err(&g, &fd));
    }

    #[test]
    fn gradient_of_empty_loss_is_zero() {
        let policy = tiny(OutputHead::ScalarValue, 1, Activation::Tanh);
        let g = gradient(&policy, &[]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        // and a zero-weighted term contributes nothing
        let obs = vec![vec![0.1, 0.2, 0.3]];
        let targets = vec![1.0];
        let terms = [LossTerm {
            weight: 0.0,
            kind: LossKind::ValueMse {
                obs: &obs,
                targets: &targets,
            },
        }];
        let g = gradient(&policy, &terms).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_linearity() {
        let policy = tiny(OutputHead::ScalarValue, 1, Activation::Tanh);
        let mut rng = Rng::new(6);
        let obs = rand_obs(&mut rng, 5);
        let t1: Vec<f64> = (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let t2: Vec<f64> = (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let (a, b) = (0.7, -1.3);
        let g1 = gradient(
            &policy,
            &[LossTerm {
                weight: 1.0,
                kind: LossKind::ValueMse {
                    obs: &obs,
                    targets: &t1,
                },
            }],
        )
        .unwrap();
        let g2 = gradient(
            &policy,
            &[LossTerm {
                weight: 1.0,
                kind: LossKind::ValueMse {
                    obs: &obs,
                    targets: &t2,
                },
            }],
        )
        .unwrap();
        let combined = gradient(
            &policy,
            &[
                LossTerm {
                    weight: a,
                    kind: LossKind::ValueMse {
                        obs: &obs,
                        targets: &t1,
                    },
                },
                LossTerm {
                    weight: b,
                    kind: LossKind::ValueMse {
                        obs: &obs,
                        targets: &t2,
                    },
                },
            ],
        )
        .unwrap();
        for i in 0..combined.len() {
            let want = a * g1[i] + b * g2[i];
            assert!((combined[i] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn ratio_one_surrogate_equals_advantage() {
        // at ratio exactly 1 with positive advantage the per-sample
        // objective is the advantage itself
        let policy = tiny(OutputHead::CategoricalLogits, 2, Activation::Tanh);
        let obs = vec![vec![0.2, -0.4, 0.8]];
        let action = TargetAction::Discrete(1);
        let logp = policy.log_prob(&obs[0], &action).unwrap();
        let actions = vec![action];
        let old_logp = vec![logp];
        let adv = vec![0.6];
        let terms = [LossTerm {
            weight: 1.0,
            kind: LossKind::PpoClip {
                obs: &obs,
                actions: &actions,
                old_logp: &old_logp,
                advantages: &adv,
                clip_eps: 0.2,
            },
        }];
        let loss = loss_value(&policy, &terms).unwrap();
        assert!((loss + 0.6).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn clipped_ratio_objective() {
        // ratio 1.5, eps 0.2, positive advantage -> objective clipped at 1.2 * adv
        let policy = tiny(OutputHead::CategoricalLogits, 2, Activation::Tanh);
        let obs = vec![vec![0.2, -0.4, 0.8]];
        let action = TargetAction::Discrete(0);
        let logp = policy.log_prob(&obs[0], &action).unwrap();
        let actions = vec![action];
        let old_logp = vec![logp - 1.5f64.ln()];
        let adv = vec![2.0];
        let terms = [LossTerm {
            weight: 1.0,
            kind: LossKind::PpoClip {
                obs: &obs,
                actions: &actions,
                old_logp: &old_logp,
                advantages: &adv,
                clip_eps: 0.2,
            },
        }];
        let loss = loss_value(&policy, &terms).unwrap();
        assert!((loss + 1.2 * 2.0).abs() < 1e-9, "loss {loss}");
        // and the gradient of the clipped branch is zero
        let g = gradient(&policy, &terms).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sampled_gaussian_action_logp_matches() {
        let policy = tiny(OutputHead::GaussianMean, 2, Activation::Tanh);
        let mut rng = Rng::new(14);
        let obs = vec![0.3, -0.2, 0.5];
        let out = policy.act(&obs, ActionMode::Sample, &mut rng).unwrap();
        // raw sample: the recomputed log-prob matches exactly
        let lp = policy.log_prob(&obs, &out.action).unwrap();
        assert!((lp - out.log_prob.unwrap()).abs() < 1e-12);
    }
}

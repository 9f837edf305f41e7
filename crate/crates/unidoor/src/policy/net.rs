//! Flat-parameter MLP internals: layout, initialization, batched
//! forward/backward passes.

use super::{Activation, InitScheme, MlpArch, OutputHead, PolicyError};
use crate::rng::Rng;

/// Shape bookkeeping for one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerShape {
    pub din: usize,
    pub dout: usize,
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub layers: Vec<LayerShape>,
    /// Offset of the state-independent log-std vector (Gaussian head only).
    pub log_std_off: Option<usize>,
    pub n_params: usize,
}

pub(crate) fn layout(arch: &MlpArch) -> Layout {
    let mut layers = Vec::new();
    let mut off = 0;
    for w in arch.layer_sizes.windows(2) {
        let (din, dout) = (w[0], w[1]);
        layers.push(LayerShape {
            din,
            dout,
            w_off: off,
            b_off: off + din * dout,
        });
        off += din * dout + dout;
    }
    let log_std_off = if arch.head == OutputHead::GaussianMean {
        let o = off;
        off += arch.layer_sizes.last().copied().unwrap_or(0);
        Some(o)
    } else {
        None
    };
    Layout {
        layers,
        log_std_off,
        n_params: off,
    }
}

/// Orthogonal init via modified Gram-Schmidt on a Gaussian matrix: the
/// resulting W satisfies W^T W = gain^2 I (or W W^T when out < in).
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Vec<f64> {
    let (r, c, transposed) = if rows >= cols {
        (rows, cols, false)
    } else {
        (cols, rows, true)
    };
    // column-major storage of the tall matrix for the orthogonalization
    let mut q: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..r).map(|_| rng.normal()).collect())
        .collect();
    for j in 0..c {
        // two MGS sweeps keep the columns orthonormal to ~1e-14
        for _ in 0..2 {
            for k in 0..j {
                let (head, tail) = q.split_at_mut(j);
                let (prev, cur) = (&head[k], &mut tail[0]);
                let dot: f64 = prev.iter().zip(cur.iter()).map(|(a, b)| a * b).sum();
                for (v, p) in cur.iter_mut().zip(prev) {
                    *v -= dot * p;
                }
            }
        }
        let norm: f64 = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut q[j] {
            *v /= norm;
        }
    }
    // write back as (rows x cols) row-major, scaled
    let mut w = vec![0.0; rows * cols];
    for o in 0..rows {
        for i in 0..cols {
            let v = if transposed { q[o][i] } else { q[i][o] };
            w[o * cols + i] = gain * v;
        }
    }
    w
}

fn xavier_normal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Vec<f64> {
    let std = gain * (2.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| std * rng.normal()).collect()
}

/// Draws all weights per the arch's init scheme; biases and log-std zero.
pub(crate) fn init_params(arch: &MlpArch, rng: &mut Rng) -> Vec<f64> {
    let lay = layout(arch);
    let mut params = vec![0.0; lay.n_params];
    let n_layers = lay.layers.len();
    for (idx, ls) in lay.layers.iter().enumerate() {
        let gain = if idx + 1 == n_layers {
            arch.output_gain
        } else {
            arch.init.gain()
        };
        let w = match arch.init {
            InitScheme::Orthogonal { .. } => orthogonal(ls.dout, ls.din, gain, rng),
            InitScheme::XavierNormal { .. } => xavier_normal(ls.dout, ls.din, gain, rng),
        };
        params[ls.w_off..ls.w_off + ls.din * ls.dout].copy_from_slice(&w);
    }
    params
}

/// Cached per-layer inputs from a forward pass, enough to backpropagate.
pub(crate) struct BatchCache {
    /// inputs[l] is the (batch x din_l) input to layer l; inputs[0] is the
    /// observation batch.
    pub inputs: Vec<Vec<f64>>,
    pub batch: usize,
}

// paired dot products sharing one weight-row stream
#[inline]
fn dot4x2(w: &[f64], xa: &[f64], xb: &[f64]) -> (f64, f64) {
    let mut la = [0.0f64; 4];
    let mut lb = [0.0f64; 4];
    let cw = w.chunks_exact(4);
    let ca = xa.chunks_exact(4);
    let cb = xb.chunks_exact(4);
    let (rw, ra, rb) = (cw.remainder(), ca.remainder(), cb.remainder());
    for ((wc, ac), bc) in cw.zip(ca).zip(cb) {
        for l in 0..4 {
            la[l] += wc[l] * ac[l];
            lb[l] += wc[l] * bc[l];
        }
    }
    let (mut ta, mut tb) = (0.0, 0.0);
    for l in 0..rw.len() {
        ta += rw[l] * ra[l];
        tb += rw[l] * rb[l];
    }
    (
        ((la[0] + la[1]) + (la[2] + la[3])) + ta,
        ((lb[0] + lb[1]) + (lb[2] + lb[3])) + tb,
    )
}

// summation order of the pairwise kernel, kept for odd batch tails so a
// row's result does not depend on its position in the batch
#[inline]
fn dot4x1(w: &[f64], xa: &[f64]) -> f64 {
    let mut la = [0.0f64; 4];
    let cw = w.chunks_exact(4);
    let ca = xa.chunks_exact(4);
    let (rw, ra) = (cw.remainder(), ca.remainder());
    for (wc, ac) in cw.zip(ca) {
        for l in 0..4 {
            la[l] += wc[l] * ac[l];
        }
    }
    let mut ta = 0.0;
    for l in 0..rw.len() {
        ta += rw[l] * ra[l];
    }
    ((la[0] + la[1]) + (la[2] + la[3])) + ta
}

fn affine(x: &[f64], batch: usize, w: &[f64], bias: &[f64], din: usize, dout: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * dout];
    let mut b = 0;
    while b + 2 <= batch {
        let xa = &x[b * din..(b + 1) * din];
        let xb = &x[(b + 1) * din..(b + 2) * din];
        for o in 0..dout {
            let (ya, yb) = dot4x2(&w[o * din..(o + 1) * din], xa, xb);
            out[b * dout + o] = bias[o] + ya;
            out[(b + 1) * dout + o] = bias[o] + yb;
        }
        b += 2;
    }
    if b < batch {
        let xa = &x[b * din..(b + 1) * din];
        for o in 0..dout {
            out[b * dout + o] = bias[o] + dot4x1(&w[o * din..(o + 1) * din], xa);
        }
    }
    out
}

/// Batched forward pass; `xs` is batch x input_dim row-major. Returns the
/// head output (tanh applied for DeterministicTanh) and the cache.
pub(crate) fn forward_batch(
    arch: &MlpArch,
    lay: &Layout,
    params: &[f64],
    xs: &[f64],
    batch: usize,
) -> Result<(Vec<f64>, BatchCache), PolicyError> {
    let n_layers = lay.layers.len();
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut cur = xs.to_vec();
    for (idx, ls) in lay.layers.iter().enumerate() {
        let w = &params[ls.w_off..ls.w_off + ls.din * ls.dout];
        let bias = &params[ls.b_off..ls.b_off + ls.dout];
        let z = affine(&cur, batch, w, bias, ls.din, ls.dout);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite { layer: idx });
        }
        inputs.push(cur);
        if idx + 1 == n_layers {
            cur = match arch.head {
                OutputHead::DeterministicTanh => z.iter().map(|v| v.tanh()).collect(),
                _ => z,
            };
        } else {
            cur = match arch.activation {
                Activation::Tanh => z.iter().map(|v| v.tanh()).collect(),
                Activation::ReLU => z.iter().map(|v| v.max(0.0)).collect(),
            };
        }
    }
    Ok((cur, BatchCache { inputs, batch }))
}

/// Backward pass from a gradient on the final affine pre-activation.
/// Accumulates parameter gradients into `grad` (when given) and returns the
/// gradient with respect to the input batch.
pub(crate) fn backward_batch(
    arch: &MlpArch,
    lay: &Layout,
    params: &[f64],
    cache: &BatchCache,
    d_preact_out: &[f64],
    mut grad: Option<&mut [f64]>,
) -> Vec<f64> {
    let batch = cache.batch;
    let n_layers = lay.layers.len();
    let mut dz = d_preact_out.to_vec();
    for idx in (0..n_layers).rev() {
        let ls = lay.layers[idx];
        let x = &cache.inputs[idx];
        // parameter gradients
        if let Some(grad) = grad.as_deref_mut() {
            let (gw, rest) = grad[ls.w_off..].split_at_mut(ls.din * ls.dout);
            let gb = &mut rest[..ls.dout];
            for b in 0..batch {
                let xb = &x[b * ls.din..(b + 1) * ls.din];
                let dzb = &dz[b * ls.dout..(b + 1) * ls.dout];
                for o in 0..ls.dout {
                    let g = dzb[o];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    let grow = &mut gw[o * ls.din..(o + 1) * ls.din];
                    for i in 0..ls.din {
                        grow[i] += g * xb[i];
                    }
                }
            }
        }
        // input gradient
        let w = &params[ls.w_off..ls.w_off + ls.din * ls.dout];
        let mut dx = vec![0.0; batch * ls.din];
        for b in 0..batch {
            let dzb = &dz[b * ls.dout..(b + 1) * ls.dout];
            let dxb = &mut dx[b * ls.din..(b + 1) * ls.din];
            for o in 0..ls.dout {
                let g = dzb[o];
                if g == 0.0 {
                    continue;
                }
                let wrow = &w[o * ls.din..(o + 1) * ls.din];
                for i in 0..ls.din {
                    dxb[i] += g * wrow[i];
                }
            }
        }
        if idx == 0 {
            return dx;
        }
        // chain through the previous layer's activation; its output is the
        // input we cached for this layer
        let a = &cache.inputs[idx];
        dz = match arch.activation {
            Activation::Tanh => dx.iter().zip(a).map(|(d, y)| d * (1.0 - y * y)).collect(),
            Activation::ReLU => dx
                .iter()
                .zip(a)
                .map(|(d, y)| if *y > 0.0 { *d } else { 0.0 })
                .collect(),
        };
    }
    unreachable!("networks always have at least one layer");
}

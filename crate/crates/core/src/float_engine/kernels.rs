//! Slice-level float kernels shared by inference (f32), training (f32) and
//! gradient checking (f64).

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

#[inline]
fn axpy<T: Float>(out: &mut [T], a: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = *o + a * v;
    }
}

#[inline]
fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `out` becomes `(steps - kernel + 1) × filters`; weights `[c][k][f]`.
pub(crate) fn conv1d<T: Float>(
    input: &[T],
    in_ch: usize,
    weights: &[T],
    bias: &[T],
    kernel: usize,
    out: &mut Vec<T>,
) {
    let filters = bias.len();
    let steps = input.len() / in_ch;
    let out_steps = steps + 1 - kernel;
    out.clear();
    for _ in 0..out_steps {
        out.extend_from_slice(bias);
    }
    for c in 0..in_ch {
        for k in 0..kernel {
            let w = &weights[(c * kernel + k) * filters..][..filters];
            for t in 0..out_steps {
                let x = input[(t + k) * in_ch + c];
                if x != T::zero() {
                    axpy(&mut out[t * filters..(t + 1) * filters], x, w);
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `grad_in` is given, the input
/// gradient of a valid convolution.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward<T: Float>(
    input: &[T],
    in_ch: usize,
    weights: &[T],
    kernel: usize,
    filters: usize,
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    grad_in: Option<&mut [T]>,
) {
    let out_steps = grad_out.len() / filters;
    for t in 0..out_steps {
        axpy(grad_b, T::one(), &grad_out[t * filters..(t + 1) * filters]);
    }
    for c in 0..in_ch {
        for k in 0..kernel {
            let gw = &mut grad_w[(c * kernel + k) * filters..][..filters];
            for t in 0..out_steps {
                let x = input[(t + k) * in_ch + c];
                if x != T::zero() {
                    axpy(gw, x, &grad_out[t * filters..(t + 1) * filters]);
                }
            }
        }
    }
    if let Some(gi) = grad_in {
        for t in 0..out_steps {
            let go = &grad_out[t * filters..(t + 1) * filters];
            for k in 0..kernel {
                let row = &mut gi[(t + k) * in_ch..(t + k + 1) * in_ch];
                for (c, g) in row.iter_mut().enumerate() {
                    *g = *g + dot(&weights[(c * kernel + k) * filters..][..filters], go);
                }
            }
        }
    }
}

pub(crate) fn avg_pool<T: Float>(input: &[T], ch: usize, pool: usize, out: &mut Vec<T>) {
    let out_steps = input.len() / ch / pool;
    let inv = T::one() / T::from(pool).unwrap();
    out.clear();
    out.resize(out_steps * ch, T::zero());
    for t in 0..out_steps {
        let o = &mut out[t * ch..(t + 1) * ch];
        for j in 0..pool {
            axpy(o, T::one(), &input[(t * pool + j) * ch..][..ch]);
        }
        for v in o.iter_mut() {
            *v = *v * inv;
        }
    }
}

pub(crate) fn avg_pool_backward<T: Float>(
    grad_out: &[T],
    ch: usize,
    pool: usize,
    grad_in: &mut [T],
) {
    let inv = T::one() / T::from(pool).unwrap();
    let out_steps = grad_out.len() / ch;
    for t in 0..out_steps {
        let go = &grad_out[t * ch..(t + 1) * ch];
        for j in 0..pool {
            axpy(&mut grad_in[(t * pool + j) * ch..][..ch], inv, go);
        }
    }
}

/// `out = x · W + b`, weights `[in][out]`.
pub(crate) fn dense<T: Float>(input: &[T], weights: &[T], bias: &[T], out: &mut Vec<T>) {
    let n_out = bias.len();
    out.clear();
    out.extend_from_slice(bias);
    for (i, &x) in input.iter().enumerate() {
        if x != T::zero() {
            axpy(out, x, &weights[i * n_out..(i + 1) * n_out]);
        }
    }
}

pub(crate) fn dense_backward<T: Float>(
    input: &[T],
    weights: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    grad_in: Option<&mut [T]>,
) {
    let n_out = grad_out.len();
    axpy(grad_b, T::one(), grad_out);
    for (i, &x) in input.iter().enumerate() {
        if x != T::zero() {
            axpy(&mut grad_w[i * n_out..(i + 1) * n_out], x, grad_out);
        }
    }
    if let Some(gi) = grad_in {
        for (i, g) in gi.iter_mut().enumerate() {
            *g = *g + dot(&weights[i * n_out..(i + 1) * n_out], grad_out);
        }
    }
}

/// Logistic function evaluated so that neither branch overflows.
#[inline]
pub(crate) fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Standard LSTM without peepholes, zero initial state.
pub(crate) fn lstm<T: Float>(
    input: &[T],
    in_dim: usize,
    w_in: &[T],
    w_rec: &[T],
    bias: &[T],
    return_sequences: bool,
) -> Vec<T> {
    let hidden = bias.len() / 4;
    let steps = input.len() / in_dim;
    let mut h = vec![T::zero(); hidden];
    let mut c = vec![T::zero(); hidden];
    let mut z = Vec::with_capacity(4 * hidden);
    let mut out = Vec::with_capacity(if return_sequences {
        steps * hidden
    } else {
        hidden
    });
    for t in 0..steps {
        dense(&input[t * in_dim..(t + 1) * in_dim], w_in, bias, &mut z);
        for (j, &hj) in h.iter().enumerate() {
            if hj != T::zero() {
                axpy(&mut z, hj, &w_rec[j * 4 * hidden..(j + 1) * 4 * hidden]);
            }
        }
        for j in 0..hidden {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[hidden + j]);
            let g = z[2 * hidden + j].tanh();
            let o = sigmoid(z[3 * hidden + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        if return_sequences {
            out.extend_from_slice(&h);
        }
    }
    if !return_sequences {
        out.extend_from_slice(&h);
    }
    out
}

pub(crate) fn softmax_in_place<T: Float>(x: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    for v in x.iter_mut() {
        *v = (*v - max).exp();
    }
    // summing in sorted order keeps the result independent of logit order
    let mut terms = x.to_vec();
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let sum = terms.iter().fold(T::zero(), |acc, &v| acc + v);
    for v in x.iter_mut() {
        *v = *v / sum;
    }
}

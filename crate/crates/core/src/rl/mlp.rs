//! Fully connected tanh networks over flat parameter slices.
//!
//! Layer `k` stores its weight matrix row-major (`out × in`) followed by
//! its bias. Hidden layers use tanh, the output layer is linear.

use rand::Rng;
use rand_distr::StandardNormal;

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Per-layer activations from one forward pass, input first.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("forward fills the trace")
    }
}

pub fn forward(sizes: &[usize], theta: &[f64], x: &[f64], trace: &mut Trace) {
    debug_assert_eq!(theta.len(), param_count(sizes));
    debug_assert_eq!(x.len(), sizes[0]);
    trace.acts.resize(sizes.len(), Vec::new());
    trace.acts[0].clear();
    trace.acts[0].extend_from_slice(x);
    let mut off = 0;
    let last = sizes.len() - 2;
    for (k, w) in sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let (before, after) = trace.acts.split_at_mut(k + 1);
        let input = &before[k];
        let out = &mut after[0];
        out.clear();
        let weights = &theta[off..off + n_in * n_out];
        let bias = &theta[off + n_in * n_out..off + n_in * n_out + n_out];
        for j in 0..n_out {
            let row = &weights[j * n_in..(j + 1) * n_in];
            let z = bias[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            out.push(if k == last { z } else { z.tanh() });
        }
        off += n_in * n_out + n_out;
    }
}

/// Accumulates `d(loss)/d(theta)` into `grad` given `d(loss)/d(output)`.
pub fn backward(sizes: &[usize], theta: &[f64], trace: &Trace, d_out: &[f64], grad: &mut [f64]) {
    let layers = sizes.len() - 1;
    let mut offsets = Vec::with_capacity(layers);
    let mut off = 0;
    for w in sizes.windows(2) {
        offsets.push(off);
        off += w[0] * w[1] + w[1];
    }
    let mut delta: Vec<f64> = d_out.to_vec();
    for k in (0..layers).rev() {
        let (n_in, n_out) = (sizes[k], sizes[k + 1]);
        let off = offsets[k];
        if k != layers - 1 {
            let h = &trace.acts[k + 1];
            for j in 0..n_out {
                delta[j] *= 1.0 - h[j] * h[j];
            }
        }
        let input = &trace.acts[k];
        for j in 0..n_out {
            let dj = delta[j];
            if dj == 0.0 {
                continue;
            }
            let g = &mut grad[off + j * n_in..off + (j + 1) * n_in];
            for (gi, xi) in g.iter_mut().zip(input) {
                *gi += dj * xi;
            }
            grad[off + n_in * n_out + j] += dj;
        }
        if k > 0 {
            let weights = &theta[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for j in 0..n_out {
                let dj = delta[j];
                for (p, w) in prev.iter_mut().zip(&weights[j * n_in..(j + 1) * n_in]) {
                    *p += dj * w;
                }
            }
            delta = prev;
        }
    }
}

/// Gaussian init with std `1/sqrt(fan_in)`; the output layer is scaled by
/// `out_gain`. Biases start at zero.
pub fn init(sizes: &[usize], out_gain: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut theta = Vec::with_capacity(param_count(sizes));
    let last = sizes.len() - 2;
    for (k, w) in sizes.windows(2).enumerate() {
        let std = (1.0 / w[0] as f64).sqrt() * if k == last { out_gain } else { 1.0 };
        for _ in 0..w[0] * w[1] {
            let z: f64 = rng.sample(StandardNormal);
            theta.push(z * std);
        }
        theta.extend(std::iter::repeat_n(0.0, w[1]));
    }
    theta
}

//! Small dense networks with hand-written backprop, Adam, and categorical
//! policy helpers.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

fn check(expected: usize, got: usize) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch { expected, got })
    }
}

/// Multilayer perceptron: tanh on hidden layers, linear output.
///
/// `weights[l]` is row-major `dims[l+1] x dims[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Layer inputs recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// `acts[0]` is the input, `acts[l]` the (post-tanh) input of layer `l`.
    pub acts: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut SimRng) -> Vec<f64> {
    let (big, small) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(big, small, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..small {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            out[i * cols + j] = gain * v;
        }
    }
    out
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        let weights = dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        Self {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    /// Orthogonal weights (gain `sqrt 2` on hidden layers, `out_gain` on the
    /// output layer) and zero biases.
    pub fn new(dims: &[usize], out_gain: f64, rng: &mut SimRng) -> Self {
        let mut net = Self::zeros(dims);
        let layers = net.layers();
        for l in 0..layers {
            let gain = if l + 1 == layers { out_gain } else { 2f64.sqrt() };
            net.weights[l] = orthogonal(dims[l + 1], dims[l], gain, rng);
        }
        net
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Cache, NnError> {
        check(self.input_dim(), x.len())?;
        let mut acts = vec![x.to_vec()];
        let layers = self.layers();
        let mut output = Vec::new();
        for l in 0..layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let input = &acts[l];
            let w = &self.weights[l];
            let mut z: Vec<f64> = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            debug_assert_eq!(z.len(), n_out);
            if l + 1 == layers {
                output = z;
            } else {
                acts.push(z.iter().map(|v| v.tanh()).collect());
            }
        }
        Ok(Cache { acts, output })
    }

    pub fn zero_grads(&self) -> Grads {
        let z = Self::zeros(&self.dims);
        Grads {
            weights: z.weights,
            biases: z.biases,
        }
    }

    /// Accumulates `d(upstream . output)/d(params)` into `grads` and returns
    /// the gradient with respect to the input.
    pub fn backward_into(&self, cache: &Cache, upstream: &[f64], grads: &mut Grads) -> Result<Vec<f64>, NnError> {
        check(self.output_dim(), upstream.len())?;
        check(self.layers(), cache.acts.len())?;
        let mut delta = upstream.to_vec();
        for l in (0..self.layers()).rev() {
            let n_in = self.dims[l];
            let input = &cache.acts[l];
            let gw = &mut grads.weights[l];
            for (o, d) in delta.iter().enumerate() {
                grads.biases[l][o] += d;
                if *d != 0.0 {
                    for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            let w = &self.weights[l];
            let mut back = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (b, wv) in back.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *b += d * wv;
                    }
                }
            }
            if l > 0 {
                for (b, a) in back.iter_mut().zip(input) {
                    *b *= 1.0 - a * a;
                }
            }
            delta = back;
        }
        Ok(delta)
    }

    pub fn backward(&self, cache: &Cache, upstream: &[f64]) -> Result<Grads, NnError> {
        let mut g = self.zero_grads();
        self.backward_into(cache, upstream, &mut g)?;
        Ok(g)
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        check(self.num_params(), flat.len())?;
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[i..i + nw]);
            i += nw;
            b.copy_from_slice(&flat[i..i + nb]);
            i += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|v| v.is_finite())
    }
}

impl Grads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten()
    }

    pub fn scale(&mut self, s: f64) {
        self.values_mut().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().chain(&self.biases).flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|v| v.is_finite())
    }

    /// Rescales to at most `max_norm`; returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }
}

/// Adam optimizer state for one network. `step` descends the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let n = net.num_params();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) {
        if self.lr == 0.0 {
            return;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let g = grads.flat();
        let mut p = net.flat();
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        net.set_flat(&p).expect("same network");
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

pub fn entropy(logits: &[f64]) -> f64 {
    log_softmax(logits).iter().map(|lp| -lp.exp() * lp).sum()
}

/// Draws from the categorical distribution given by `logits`.
pub fn policy_sample(logits: &[f64], rng: &mut SimRng) -> (usize, f64) {
    let lp = log_softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return (a, *l);
        }
    }
    // Rounding left the cumulative sum just below u.
    let a = (0..lp.len()).rev().find(|&a| lp[a] > f64::NEG_INFINITY).unwrap_or(0);
    (a, lp[a])
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use approx::assert_relative_eq;

    #[test]
    fn zero_weights_give_zero_logits_and_uniform_policy() {
        let net = Mlp::zeros(&[4, 8, 3]);
        let out = net.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
        for p in softmax(&out) {
            assert_relative_eq!(p, 1.0 / 3.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn hand_computed_two_by_two() {
        let net = Mlp {
            dims: vec![2, 2, 1],
            weights: vec![vec![0.5, -1.0, 0.25, 2.0], vec![1.5, -0.5]],
            biases: vec![vec![0.1, -0.2], vec![0.3]],
        };
        let x = [1.0, 0.5];
        let h0 = (0.5 * 1.0 - 1.0 * 0.5 + 0.1f64).tanh();
        let h1 = (0.25 * 1.0 + 2.0 * 0.5 - 0.2f64).tanh();
        let y = 1.5 * h0 - 0.5 * h1 + 0.3;
        assert_relative_eq!(net.forward(&x).unwrap()[0], y, epsilon = 1e-12);
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::zeros(&[3, 2]);
        assert_eq!(net.forward(&[1.0]), Err(NnError::ShapeMismatch { expected: 3, got: 1 }));
        let c = net.forward_cached(&[1.0, 2.0, 3.0]).unwrap();
        assert!(net.backward(&c, &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = stream(1, Stream::Policy);
        let net = Mlp::new(&[3, 5, 2], 1.0, &mut rng);
        let c = net.forward_cached(&[0.3, -0.1, 0.7]).unwrap();
        let g = net.backward(&c, &[0.0, 0.0]).unwrap();
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = stream(2, Stream::Policy);
        let net = Mlp::new(&[3, 2], 1.0, &mut rng);
        let x = [0.3, -0.1, 0.7];
        let up = [2.0, -1.0];
        let g = net.backward(&net.forward_cached(&x).unwrap(), &up).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.weights[0][o * 3 + i], up[o] * x[i]);
            }
            assert_eq!(g.biases[0][o], up[o]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream(3, Stream::Policy);
        let mut net = Mlp::new(&[4, 6, 5, 3], 1.0, &mut rng);
        let x = [0.2, -0.4, 0.9, 0.1];
        let up = [0.7, -1.3, 0.4];
        let obj = |n: &Mlp| n.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let g = net.backward(&net.forward_cached(&x).unwrap(), &up).unwrap().flat();
        let p = net.flat();
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] += 1e-5;
            net.set_flat(&q).unwrap();
            let plus = obj(&net);
            q[i] -= 2e-5;
            net.set_flat(&q).unwrap();
            let minus = obj(&net);
            let fd = (plus - minus) / 2e-5;
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows_or_columns() {
        let mut rng = stream(4, Stream::Policy);
        let net = Mlp::new(&[3, 5, 2], 1.0, &mut rng);
        let w = &net.weights[0];
        for a in 0..3 {
            for b in 0..3 {
                let s: f64 = (0..5).map(|o| w[o * 3 + a] * w[o * 3 + b]).sum();
                let expect = if a == b { 2.0 } else { 0.0 };
                assert_relative_eq!(s, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn saturated_logits_pick_dominant_action() {
        let mut rng = stream(5, Stream::Policy);
        for _ in 0..100 {
            let (a, lp) = policy_sample(&[0.0, 100.0, 0.0], &mut rng);
            assert_eq!(a, 1);
            assert!(lp > -1e-40);
        }
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let mut rng = stream(6, Stream::Policy);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            counts[policy_sample(&[0.3; 4], &mut rng).0] += 1;
        }
        let e = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99.9th percentile of chi-square with 3 degrees of freedom.
        assert!(chi2 < 16.27, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let logits = [0.1, 0.5, -0.3];
        let a: Vec<usize> = {
            let mut r = stream(7, Stream::Policy);
            (0..20).map(|_| policy_sample(&logits, &mut r).0).collect()
        };
        let b: Vec<usize> = {
            let mut r = stream(7, Stream::Policy);
            (0..20).map(|_| policy_sample(&logits, &mut r).0).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut net = Mlp::zeros(&[1, 1]);
        net.biases[0][0] = 3.0;
        let mut opt = Adam::new(&net, 0.1);
        for _ in 0..500 {
            let y = net.forward(&[0.0]).unwrap()[0];
            let g = net.backward(&net.forward_cached(&[0.0]).unwrap(), &[y]).unwrap();
            opt.step(&mut net, &g);
        }
        assert!(net.biases[0][0].abs() < 0.05);
    }

    #[test]
    fn clip_norm_bounds_gradients() {
        let mut g = Mlp::zeros(&[2, 1]).zero_grads();
        g.weights[0] = vec![3.0, 4.0];
        assert_eq!(g.clip_norm(1.0), 5.0);
        assert_relative_eq!(g.norm(), 1.0, max_relative = 1e-15);
    }
}

//! One-round and K-round loss bounds, and their empirical verification on
//! tasks whose curvature is known exactly.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TaskFamily;
use crate::fl::{aggregate, local_sgd_round, ModelVector, SyntheticTask};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvergenceError {
    #[error("learning rate {eta} at round {round} exceeds 1/L = {limit}")]
    RateViolation { round: usize, eta: f64, limit: f64 },
    #[error("need at least {needed} replicates for a stochastic run, got {got}")]
    InsufficientReplicates { needed: usize, got: usize },
    #[error("bound inputs are inconsistent: {0}")]
    BadInputs(String),
}

/// Smoothness `L` and strong convexity `mu`. `exact` is false when the
/// values are numerical estimates (non-quadratic losses).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curvature {
    pub l: f64,
    pub mu: f64,
    pub exact: bool,
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn curvature_of(hessian: &DMatrix<f64>) -> Curvature {
    let eig = hessian.clone().symmetric_eigen().eigenvalues;
    Curvature {
        l: eig.max(),
        mu: eig.min(),
        exact: true,
    }
}

/// Exact `(L, mu)` of a quadratic task; for softmax tasks an estimate from a
/// finite-difference Hessian at the zero model, flagged as inexact.
pub fn estimate_smoothness_convexity(task: &SyntheticTask) -> Curvature {
    if let Some((q, _)) = task.quadratic_form() {
        return curvature_of(&q);
    }
    let dim = task.model_dim();
    let w = vec![0.0; dim];
    let step = 1e-5;
    let mut h = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[j] += step;
        wm[j] -= step;
        let gp = task.global_grad(&wp);
        let gm = task.global_grad(&wm);
        for i in 0..dim {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let sym = (&h + h.transpose()) * 0.5;
    Curvature {
        exact: false,
        ..curvature_of(&sym)
    }
}

/// Largest mean squared deviation of per-sample gradients from the global
/// gradient, over the probe models and over vehicles.
pub fn estimate_gradient_variance(task: &SyntheticTask, probes: &[Vec<f64>], vehicles: &[usize]) -> f64 {
    let mut best = 0.0f64;
    for w in probes {
        let full = task.grad_over(w, vehicles);
        for &h in vehicles {
            let d = &task.train[h];
            let mut acc = 0.0;
            let mut g = vec![0.0; w.len()];
            for i in 0..d.len() {
                g.iter_mut().for_each(|x| *x = 0.0);
                d.add_grad(w, i, 1.0, &mut g);
                acc += g.iter().zip(&full).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            best = best.max(acc / d.len() as f64);
        }
    }
    best
}

/// Upper bound on the expected one-round change of the global loss.
pub fn lemma1_bound(eta: f64, l: f64, grad_norm_sq: f64, g2: f64, batch: usize, n: usize) -> f64 {
    eta * (l * eta / 2.0 - 1.0) * grad_norm_sq + (l * eta * eta / 2.0) * g2 / (batch as f64 * n as f64)
}

/// Everything the K-round bound depends on. Sequences are indexed by round
/// `k - 1` for rounds `k = 1..`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub l: f64,
    pub mu: f64,
    pub g2: f64,
    pub eta: Vec<f64>,
    pub batch: Vec<usize>,
    pub n: Vec<usize>,
    pub gap0: f64,
}

impl BoundInputs {
    fn check(&self, k: usize) -> Result<(), ConvergenceError> {
        if self.eta.len() < k || self.batch.len() < k || self.n.len() < k {
            return Err(ConvergenceError::BadInputs(format!("sequences shorter than K = {k}")));
        }
        if !(self.mu > 0.0 && self.mu <= self.l) {
            return Err(ConvergenceError::BadInputs(format!(
                "need 0 < mu <= L, got mu = {}, L = {}",
                self.mu, self.l
            )));
        }
        let limit = 1.0 / self.l;
        for (i, &eta) in self.eta[..k].iter().enumerate() {
            if eta > limit * (1.0 + 1e-12) {
                return Err(ConvergenceError::RateViolation {
                    round: i + 1,
                    eta,
                    limit,
                });
            }
        }
        if self.batch[..k].iter().chain(&self.n[..k]).any(|&x| x == 0) {
            return Err(ConvergenceError::BadInputs("batch sizes and participant counts must be >= 1".into()));
        }
        Ok(())
    }

    fn noise(&self, i: usize) -> f64 {
        self.eta[i] / 2.0 * self.g2 / (self.batch[i] as f64 * self.n[i] as f64)
    }
}

/// Bound on `F(w_K) - F(w*)` from its closed product/sum form.
pub fn theorem1_bound(inputs: &BoundInputs, k: usize) -> Result<f64, ConvergenceError> {
    inputs.check(k)?;
    let survive = |from: usize| -> f64 {
        inputs.eta[from..k]
            .iter()
            .map(|e| 1.0 - inputs.mu * e)
            .product()
    };
    let mut bound = inputs.gap0 * survive(0);
    for i in 0..k {
        bound += inputs.noise(i) * survive(i + 1);
    }
    Ok(bound)
}

/// The same bound by iterating `b_k = (1 - mu eta_k) b_{k-1} + noise_k`.
pub fn theorem1_bound_recursive(inputs: &BoundInputs, k: usize) -> Result<f64, ConvergenceError> {
    inputs.check(k)?;
    let mut b = inputs.gap0;
    for i in 0..k {
        b = (1.0 - inputs.mu * inputs.eta[i]) * b + inputs.noise(i);
    }
    Ok(b)
}

/// Bound for every prefix `K = 0..=rounds`.
pub fn bound_curve(inputs: &BoundInputs, rounds: usize) -> Result<Vec<f64>, ConvergenceError> {
    inputs.check(rounds)?;
    let mut out = Vec::with_capacity(rounds + 1);
    let mut b = inputs.gap0;
    out.push(b);
    for i in 0..rounds {
        b = (1.0 - inputs.mu * inputs.eta[i]) * b + inputs.noise(i);
        out.push(b);
    }
    Ok(out)
}

/// A federated run of one task where the same vehicles train every round.
#[derive(Debug, Clone)]
pub struct ConvergenceSetup {
    pub task: SyntheticTask,
    pub participants: Vec<usize>,
    pub eta: Vec<f64>,
    pub batch: usize,
    pub local_iters: usize,
    pub rounds: usize,
}

/// Per-replicate optimality gap `F(w_k) - F(w*)` and squared gradient
/// norm at rounds `0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateTrace {
    pub gaps: Vec<Vec<f64>>,
    pub grad_norms_sq: Vec<Vec<f64>>,
    /// Models visited by the first replicate, usable as variance probes.
    pub probe_models: Vec<Vec<f64>>,
}

impl ReplicateTrace {
    pub fn replicates(&self) -> usize {
        self.gaps.len()
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Runs `replicates` independent trajectories from the zero model.
///
/// Gaps are evaluated through the quadratic form `0.5 d'Qd`, `d = w - w*`,
/// which avoids cancelling two nearly equal losses.
pub fn run_replicates(
    setup: &ConvergenceSetup,
    replicates: usize,
    seed: u64,
) -> Result<ReplicateTrace, ConvergenceError> {
    let task = &setup.task;
    let sub = task.restricted(&setup.participants);
    let (q, _) = sub
        .quadratic_form()
        .ok_or_else(|| ConvergenceError::BadInputs("bounds are verified on quadratic tasks only".into()))?;
    let w_star = sub
        .optimum()
        .ok_or_else(|| ConvergenceError::BadInputs("quadratic form is not positive definite".into()))?;
    let gap = |w: &[f64]| {
        let d = nalgebra::DVector::from_iterator(w.len(), w.iter().zip(&w_star).map(|(a, b)| a - b));
        0.5 * d.dot(&(&q * &d))
    };
    let weights: Vec<f64> = setup
        .participants
        .iter()
        .map(|&h| task.dataset_size(h) as f64)
        .collect();
    let runs: Vec<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, Stream::Replicates, r as u64);
            let mut w = ModelVector::zeros(task.task_id, task.model_dim());
            let mut losses = vec![gap(&w.params)];
            let mut grads = vec![norm_sq(&task.grad_over(&w.params, &setup.participants))];
            let mut probes = vec![w.params.clone()];
            for k in 1..=setup.rounds {
                let locals: Vec<ModelVector> = setup
                    .participants
                    .iter()
                    .map(|&h| {
                        local_sgd_round(&w, task, h, setup.eta[k - 1], setup.batch, setup.local_iters, &mut rng)
                    })
                    .collect();
                let refs: Vec<&ModelVector> = locals.iter().collect();
                w = aggregate(&refs, &weights).expect("participants carry data");
                w.version = k;
                losses.push(gap(&w.params));
                grads.push(norm_sq(&task.grad_over(&w.params, &setup.participants)));
                if r == 0 {
                    probes.push(w.params.clone());
                }
            }
            (losses, grads, probes)
        })
        .collect();
    let mut trace = ReplicateTrace {
        gaps: Vec::with_capacity(replicates),
        grad_norms_sq: Vec::with_capacity(replicates),
        probe_models: Vec::new(),
    };
    for (i, (l, g, p)) in runs.into_iter().enumerate() {
        trace.gaps.push(l);
        trace.grad_norms_sq.push(g);
        if i == 0 {
            trace.probe_models = p;
        }
    }
    Ok(trace)
}

/// Minimum replicate count for runs with gradient noise.
pub const MIN_STOCHASTIC_REPLICATES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub rounds: usize,
    /// Rounds failing either the one-round or the K-round check.
    pub violations: Vec<usize>,
    pub lemma_violations: Vec<usize>,
    pub theorem_violations: Vec<usize>,
    /// K-round bound for `K = 0..=rounds`.
    pub bound_curve: Vec<f64>,
    /// Replicate-mean optimality gap for `K = 0..=rounds`.
    pub empirical_curve: Vec<f64>,
    /// Replicate-mean one-round loss change and its bound, rounds `1..=rounds`.
    pub mean_decrease: Vec<f64>,
    pub mean_lemma_bound: Vec<f64>,
    pub bound_nonincreasing: bool,
    pub replicates: usize,
    /// `strict` for single local iterations, `advisory` otherwise.
    pub mode: String,
    pub inputs: BoundInputs,
}

impl VerificationReport {
    pub fn lemma_pass_fraction(&self) -> f64 {
        1.0 - self.lemma_violations.len() as f64 / self.rounds.max(1) as f64
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Checks the one-round bound per round and the K-round bound per prefix,
/// each against replicate means with a 3-sigma Monte-Carlo allowance.
pub fn verify_descent(
    trace: &ReplicateTrace,
    inputs: &BoundInputs,
    local_iters: usize,
    stochastic: bool,
) -> Result<VerificationReport, ConvergenceError> {
    let reps = trace.replicates();
    let needed = if stochastic { MIN_STOCHASTIC_REPLICATES } else { 1 };
    if reps < needed {
        return Err(ConvergenceError::InsufficientReplicates { needed, got: reps });
    }
    let rounds = trace.gaps[0].len() - 1;
    let curve = bound_curve(inputs, rounds)?;
    let tol = |scale: f64| 1e-12 * (1.0 + scale.abs());

    let mut lemma_violations = Vec::new();
    let mut theorem_violations = Vec::new();
    let mut empirical = Vec::with_capacity(rounds + 1);
    let mut mean_decrease = Vec::with_capacity(rounds);
    let mut mean_lemma = Vec::with_capacity(rounds);

    let gaps0: Vec<f64> = trace.gaps.iter().map(|g| g[0]).collect();
    empirical.push(mean_and_se(&gaps0).0);

    for k in 1..=rounds {
        let i = k - 1;
        let diffs: Vec<f64> = (0..reps)
            .map(|r| {
                let d = trace.gaps[r][k] - trace.gaps[r][k - 1];
                let b = lemma1_bound(
                    inputs.eta[i],
                    inputs.l,
                    trace.grad_norms_sq[r][k - 1],
                    inputs.g2,
                    inputs.batch[i],
                    inputs.n[i],
                );
                d - b
            })
            .collect();
        let (m, se) = mean_and_se(&diffs);
        if m > 3.0 * se + tol(trace.gaps[0][k - 1]) {
            lemma_violations.push(k);
        }
        let dec: Vec<f64> = (0..reps).map(|r| trace.gaps[r][k] - trace.gaps[r][k - 1]).collect();
        mean_decrease.push(mean_and_se(&dec).0);
        mean_lemma.push(mean_decrease[i] - m);

        let gaps: Vec<f64> = trace.gaps.iter().map(|g| g[k]).collect();
        let (g, gse) = mean_and_se(&gaps);
        empirical.push(g);
        if g > curve[k] + 3.0 * gse + tol(curve[k]) {
            theorem_violations.push(k);
        }
    }
    let mut violations: Vec<usize> = lemma_violations.iter().chain(&theorem_violations).copied().collect();
    violations.sort_unstable();
    violations.dedup();
    let bound_nonincreasing = curve.windows(2).all(|w| w[1] <= w[0] + tol(w[0]))
        || inputs.g2 > 0.0;
    Ok(VerificationReport {
        rounds,
        violations,
        lemma_violations,
        theorem_violations,
        bound_curve: curve,
        empirical_curve: empirical,
        mean_decrease,
        mean_lemma_bound: mean_lemma,
        bound_nonincreasing,
        replicates: reps,
        mode: if local_iters == 1 { "strict" } else { "advisory" }.to_string(),
        inputs: inputs.clone(),
    })
}

/// End-to-end verification of a setup: curvature, optimum, variance probe,
/// replicates and both bound checks.
pub fn verify_setup(
    setup: &ConvergenceSetup,
    replicates: usize,
    seed: u64,
) -> Result<VerificationReport, ConvergenceError> {
    if setup.task.family != TaskFamily::Quadratic {
        return Err(ConvergenceError::BadInputs("bounds are verified on quadratic tasks only".into()));
    }
    let participants = &setup.participants;
    let curv = estimate_smoothness_convexity(&setup.task.restricted(participants));
    let full_batch = participants
        .iter()
        .all(|&h| setup.batch >= setup.task.dataset_size(h));
    let trace = run_replicates(setup, replicates, seed)?;
    let g2 = if full_batch {
        0.0
    } else {
        estimate_gradient_variance(&setup.task, &trace.probe_models, participants)
    };
    let inputs = BoundInputs {
        l: curv.l,
        mu: curv.mu,
        g2,
        eta: setup.eta.clone(),
        batch: vec![setup.batch; setup.rounds],
        n: vec![participants.len(); setup.rounds],
        gap0: trace.gaps[0][0],
    };
    verify_descent(&trace, &inputs, setup.local_iters, !full_batch)
}

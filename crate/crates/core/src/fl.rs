//! Federated learning on synthetic tasks: data generation, local SGD,
//! weighted aggregation, distribution/broadcast and loss bookkeeping.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{QuadraticDesign, TaskFamily, TaskSection};
use crate::rng::SimRng;
use crate::scenario::Schedule;

/// Spread of the class means in the softmax family.
const CLASS_SEPARATION: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("aggregation needs at least one model with positive weight")]
    NothingToAggregate,
    #[error("task {0} had no participants in the final round")]
    EmptyTask(usize),
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    pub params: Vec<f64>,
    pub task_id: usize,
    /// Round of the aggregation that produced these parameters.
    pub version: usize,
}

impl ModelVector {
    pub fn zeros(task_id: usize, dim: usize) -> Self {
        Self {
            params: vec![0.0; dim],
            task_id,
            version: 0,
        }
    }
}

/// One vehicle's samples for a task.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    /// Rows `a` (n x dim) and targets `b`: `f = 0.5 (a.w - b)^2`.
    Regression { dim: usize, a: Vec<f64>, b: Vec<f64> },
    /// `A = I`, targets `b` (n x dim): `f = 0.5 |w - b|^2`.
    Denoise { dim: usize, b: Vec<f64> },
    /// Features `x` (n x features) with labels `y`, softmax cross-entropy.
    Classification {
        features: usize,
        classes: usize,
        x: Vec<f64>,
        y: Vec<usize>,
    },
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Regression { b, .. } => b.len(),
            Samples::Denoise { dim, b } => b.len() / dim,
            Samples::Classification { y, .. } => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn model_dim(&self) -> usize {
        match self {
            Samples::Regression { dim, .. } | Samples::Denoise { dim, .. } => *dim,
            Samples::Classification {
                features, classes, ..
            } => classes * (features + 1),
        }
    }

    pub fn loss(&self, w: &[f64], i: usize) -> f64 {
        match self {
            Samples::Regression { dim, a, b } => {
                let r = dot(&a[i * dim..(i + 1) * dim], w) - b[i];
                0.5 * r * r
            }
            Samples::Denoise { dim, b } => {
                0.5 * w
                    .iter()
                    .zip(&b[i * dim..(i + 1) * dim])
                    .map(|(wi, bi)| (wi - bi) * (wi - bi))
                    .sum::<f64>()
            }
            Samples::Classification {
                features,
                classes,
                x,
                y,
            } => {
                let logits = class_logits(w, &x[i * features..(i + 1) * features], *classes);
                log_sum_exp(&logits) - logits[y[i]]
            }
        }
    }

    /// `out += scale * grad f(w; x_i)`.
    pub fn add_grad(&self, w: &[f64], i: usize, scale: f64, out: &mut [f64]) {
        match self {
            Samples::Regression { dim, a, b } => {
                let row = &a[i * dim..(i + 1) * dim];
                let r = (dot(row, w) - b[i]) * scale;
                for (o, ai) in out.iter_mut().zip(row) {
                    *o += r * ai;
                }
            }
            Samples::Denoise { dim, b } => {
                for ((o, wi), bi) in out.iter_mut().zip(w).zip(&b[i * dim..(i + 1) * dim]) {
                    *o += scale * (wi - bi);
                }
            }
            Samples::Classification {
                features,
                classes,
                x,
                y,
            } => {
                let xi = &x[i * features..(i + 1) * features];
                let logits = class_logits(w, xi, *classes);
                let lse = log_sum_exp(&logits);
                let stride = features + 1;
                for c in 0..*classes {
                    let mut g = (logits[c] - lse).exp();
                    if c == y[i] {
                        g -= 1.0;
                    }
                    g *= scale;
                    let row = &mut out[c * stride..(c + 1) * stride];
                    for (o, xv) in row.iter_mut().zip(xi) {
                        *o += g * xv;
                    }
                    row[*features] += g;
                }
            }
        }
    }

    pub fn mean_loss(&self, w: &[f64]) -> f64 {
        (0..self.len()).map(|i| self.loss(w, i)).sum::<f64>() / self.len() as f64
    }

    pub fn mean_grad(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        let scale = 1.0 / self.len() as f64;
        for i in 0..self.len() {
            self.add_grad(w, i, scale, &mut g);
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn class_logits(w: &[f64], x: &[f64], classes: usize) -> Vec<f64> {
    let stride = x.len() + 1;
    (0..classes)
        .map(|c| {
            let row = &w[c * stride..(c + 1) * stride];
            dot(&row[..x.len()], x) + row[x.len()]
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A task with per-vehicle train and test data.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub task_id: usize,
    pub family: TaskFamily,
    pub train: Vec<Samples>,
    pub test: Vec<Samples>,
}

fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

fn normals(rng: &mut SimRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Generates a reproducible task for `sizes[h]` training samples per vehicle.
pub fn gen_synthetic_task(
    spec: &TaskSection,
    task_id: usize,
    sizes: &[usize],
    rng: &mut SimRng,
) -> Result<SyntheticTask, FlError> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(FlError::InvalidSpec("every vehicle needs at least one sample".into()));
    }
    let test_n = spec.test_samples.max(1);
    let (train, test) = match spec.family {
        TaskFamily::Quadratic => {
            let dim = spec.dim;
            if dim == 0 {
                return Err(FlError::InvalidSpec("quadratic dim must be >= 1".into()));
            }
            let w_true = normals(rng, dim);
            let mut train = Vec::with_capacity(sizes.len());
            let mut test = Vec::with_capacity(sizes.len());
            for &n in sizes {
                let w_h: Vec<f64> = w_true
                    .iter()
                    .map(|w| w + spec.heterogeneity * normal(rng))
                    .collect();
                for (count, shift, out) in [(n, 0.0, &mut train), (test_n, spec.test_shift, &mut test)] {
                    out.push(match spec.design {
                        QuadraticDesign::Gaussian => {
                            let a: Vec<f64> = (0..count * dim).map(|_| normal(rng) + shift).collect();
                            let b = (0..count)
                                .map(|i| dot(&a[i * dim..(i + 1) * dim], &w_h) + spec.label_noise * normal(rng))
                                .collect();
                            Samples::Regression { dim, a, b }
                        }
                        QuadraticDesign::Identity => {
                            let b = (0..count * dim)
                                .map(|j| w_h[j % dim] + shift + spec.label_noise * normal(rng))
                                .collect();
                            Samples::Denoise { dim, b }
                        }
                    });
                }
            }
            (train, test)
        }
        TaskFamily::Softmax => {
            let (f, c) = (spec.features, spec.classes);
            if f == 0 || c < 2 {
                return Err(FlError::InvalidSpec("softmax needs features >= 1, classes >= 2".into()));
            }
            let means: Vec<f64> = (0..c * f).map(|_| CLASS_SEPARATION * normal(rng)).collect();
            let flip = spec.label_noise.clamp(0.0, 1.0);
            let mut train = Vec::with_capacity(sizes.len());
            let mut test = Vec::with_capacity(sizes.len());
            for &n in sizes {
                let delta: Vec<f64> = (0..f).map(|_| spec.heterogeneity * normal(rng)).collect();
                for (count, shift, out) in [(n, 0.0, &mut train), (test_n, spec.test_shift, &mut test)] {
                    let mut x = Vec::with_capacity(count * f);
                    let mut y = Vec::with_capacity(count);
                    for _ in 0..count {
                        let class = rng.random_range(0..c);
                        for j in 0..f {
                            x.push(means[class * f + j] + delta[j] + shift + normal(rng));
                        }
                        let label = if rng.random::<f64>() < flip {
                            rng.random_range(0..c)
                        } else {
                            class
                        };
                        y.push(label);
                    }
                    out.push(Samples::Classification {
                        features: f,
                        classes: c,
                        x,
                        y,
                    });
                }
            }
            (train, test)
        }
    };
    Ok(SyntheticTask {
        task_id,
        family: spec.family,
        train,
        test,
    })
}

impl SyntheticTask {
    pub fn model_dim(&self) -> usize {
        self.train[0].model_dim()
    }

    pub fn vehicles(&self) -> usize {
        self.train.len()
    }

    pub fn dataset_size(&self, h: usize) -> usize {
        self.train[h].len()
    }

    pub fn local_loss(&self, w: &[f64], h: usize) -> f64 {
        self.train[h].mean_loss(w)
    }

    pub fn local_test_loss(&self, w: &[f64], h: usize) -> f64 {
        self.test[h].mean_loss(w)
    }

    /// Sample-weighted loss over the union of the given vehicles' training data.
    pub fn loss_over(&self, w: &[f64], vehicles: &[usize]) -> f64 {
        let (mut total, mut count) = (0.0, 0usize);
        for &h in vehicles {
            let d = &self.train[h];
            total += (0..d.len()).map(|i| d.loss(w, i)).sum::<f64>();
            count += d.len();
        }
        total / count as f64
    }

    pub fn grad_over(&self, w: &[f64], vehicles: &[usize]) -> Vec<f64> {
        let count: usize = vehicles.iter().map(|&h| self.train[h].len()).sum();
        let scale = 1.0 / count as f64;
        let mut g = vec![0.0; w.len()];
        for &h in vehicles {
            let d = &self.train[h];
            for i in 0..d.len() {
                d.add_grad(w, i, scale, &mut g);
            }
        }
        g
    }

    /// The task seen by a subset of vehicles, in the given order.
    pub fn restricted(&self, vehicles: &[usize]) -> SyntheticTask {
        SyntheticTask {
            task_id: self.task_id,
            family: self.family,
            train: vehicles.iter().map(|&h| self.train[h].clone()).collect(),
            test: vehicles.iter().map(|&h| self.test[h].clone()).collect(),
        }
    }

    fn all(&self) -> Vec<usize> {
        (0..self.vehicles()).collect()
    }

    /// Global loss over every vehicle's training data.
    pub fn global_loss(&self, w: &[f64]) -> f64 {
        self.loss_over(w, &self.all())
    }

    pub fn global_grad(&self, w: &[f64]) -> Vec<f64> {
        self.grad_over(w, &self.all())
    }

    /// Hessian and linear term `(Q, c)` of the global quadratic loss
    /// `0.5 w'Qw - c'w + const`; `None` for the softmax family.
    pub fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let dim = self.model_dim();
        let mut q = DMatrix::zeros(dim, dim);
        let mut c = DVector::zeros(dim);
        let mut count = 0usize;
        for d in &self.train {
            match d {
                Samples::Regression { a, b, .. } => {
                    for (i, bi) in b.iter().enumerate() {
                        let row = DVector::from_column_slice(&a[i * dim..(i + 1) * dim]);
                        q += &row * row.transpose();
                        c += &row * *bi;
                    }
                }
                Samples::Denoise { b, .. } => {
                    for i in 0..d.len() {
                        for j in 0..dim {
                            q[(j, j)] += 1.0;
                            c[j] += b[i * dim + j];
                        }
                    }
                }
                Samples::Classification { .. } => return None,
            }
            count += d.len();
        }
        let n = count as f64;
        Some((q / n, c / n))
    }

    /// Global minimizer of a quadratic task.
    pub fn optimum(&self) -> Option<Vec<f64>> {
        let (q, c) = self.quadratic_form()?;
        let sol = q.cholesky()?.solve(&c);
        Some(sol.iter().copied().collect())
    }
}

/// Runs `iters` chained minibatch SGD steps on vehicle `h`'s data.
///
/// The minibatch is drawn without replacement; a batch size of at least the
/// dataset size uses the full dataset.
pub fn local_sgd_round(
    model: &ModelVector,
    task: &SyntheticTask,
    h: usize,
    eta: f64,
    batch: usize,
    iters: usize,
    rng: &mut SimRng,
) -> ModelVector {
    let data = &task.train[h];
    let mut w = model.params.clone();
    let mut g = vec![0.0; w.len()];
    let n = data.len();
    for _ in 0..iters {
        g.iter_mut().for_each(|x| *x = 0.0);
        if batch >= n {
            let scale = 1.0 / n as f64;
            for i in 0..n {
                data.add_grad(&w, i, scale, &mut g);
            }
        } else {
            let scale = 1.0 / batch as f64;
            for i in index::sample(rng, n, batch) {
                data.add_grad(&w, i, scale, &mut g);
            }
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= eta * gi;
        }
    }
    ModelVector {
        params: w,
        task_id: model.task_id,
        version: model.version,
    }
}

/// Weighted average `sum(w_i x_i) / sum(w_i)`, computed as an offset from
/// the first model so identical inputs are reproduced exactly.
pub fn aggregate(models: &[&ModelVector], weights: &[f64]) -> Result<ModelVector, FlError> {
    let first = models.first().ok_or(FlError::NothingToAggregate)?;
    if weights.len() != models.len() {
        return Err(FlError::DimMismatch {
            expected: models.len(),
            got: weights.len(),
        });
    }
    let dim = first.params.len();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(FlError::NothingToAggregate);
    }
    let mut acc = vec![0.0; dim];
    for (m, &wt) in models.iter().zip(weights) {
        if m.params.len() != dim {
            return Err(FlError::DimMismatch {
                expected: dim,
                got: m.params.len(),
            });
        }
        for ((a, x), x0) in acc.iter_mut().zip(&m.params).zip(&first.params) {
            *a += wt * (x - x0);
        }
    }
    Ok(ModelVector {
        params: first.params.iter().zip(&acc).map(|(x0, a)| x0 + a / total).collect(),
        task_id: first.task_id,
        version: models.iter().map(|m| m.version).max().unwrap_or(0),
    })
}

/// Copies the leader's model (and version) to every cluster member.
pub fn distribute(leader: &ModelVector, cluster: &mut [&mut ModelVector]) {
    for m in cluster.iter_mut() {
        m.params.clone_from(&leader.params);
        m.version = leader.version;
    }
}

/// Mean over tasks of the mean participant loss. `task_losses[m]` holds the
/// losses of task `m`'s participants in the final round.
pub fn final_average_loss(task_losses: &[Vec<f64>]) -> Result<f64, FlError> {
    let mut sum = 0.0;
    for (m, l) in task_losses.iter().enumerate() {
        if l.is_empty() {
            return Err(FlError::EmptyTask(m));
        }
        sum += l.iter().sum::<f64>() / l.len() as f64;
    }
    Ok(sum / task_losses.len() as f64)
}

/// Learning hyper-parameters of one task during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub eta0: f64,
    pub eta_decay: f64,
    pub batch: usize,
    pub iters: usize,
}

impl TrainParams {
    pub fn eta(&self, k: usize) -> f64 {
        self.eta0 / (1.0 + self.eta_decay * k as f64)
    }
}

/// What one round of training produced for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRoundResult {
    pub task: usize,
    pub participants: Vec<usize>,
    /// Local training loss of each participant at the broadcast model.
    pub participant_losses: Vec<f64>,
    /// Loss of the broadcast model over every vehicle's data.
    pub global_loss: f64,
}

/// Models held by every vehicle for every task, plus loss history.
#[derive(Debug, Clone, PartialEq)]
pub struct FlState {
    pub tasks: Vec<SyntheticTask>,
    pub params: Vec<TrainParams>,
    /// `models[m][h]`: vehicle `h`'s copy of task `m`.
    pub models: Vec<Vec<ModelVector>>,
    /// Latest aggregated model per task.
    pub latest: Vec<ModelVector>,
    /// Global loss after each trained round, per task.
    pub loss_history: Vec<Vec<f64>>,
}

impl FlState {
    pub fn new(tasks: Vec<SyntheticTask>, params: Vec<TrainParams>) -> Self {
        let models = tasks
            .iter()
            .map(|t| vec![ModelVector::zeros(t.task_id, t.model_dim()); t.vehicles()])
            .collect();
        let latest = tasks
            .iter()
            .map(|t| ModelVector::zeros(t.task_id, t.model_dim()))
            .collect();
        let history = tasks.iter().map(|_| Vec::new()).collect();
        Self {
            tasks,
            params,
            models,
            latest,
            loss_history: history,
        }
    }

    /// Restores every model to its initial value and clears history.
    pub fn reset(&mut self) {
        *self = Self::new(std::mem::take(&mut self.tasks), std::mem::take(&mut self.params));
    }

    pub fn current_global_loss(&self, m: usize) -> f64 {
        self.tasks[m].global_loss(&self.latest[m].params)
    }

    /// Distribute, train, aggregate and broadcast every task that has a leader.
    pub fn run_round(&mut self, schedule: &Schedule, rng: &mut SimRng) -> Vec<TaskRoundResult> {
        let k = schedule.k;
        let mut out = Vec::new();
        for m in 0..self.tasks.len() {
            let members = schedule.members(m);
            let Some(leader) = members.iter().copied().find(|&h| schedule.u(h, m) != 0) else {
                continue;
            };
            let task = &self.tasks[m];
            let tp = self.params[m];
            let global = self.models[m][leader].clone();
            let eta = tp.eta(k);
            let locals: Vec<ModelVector> = members
                .iter()
                .map(|&h| local_sgd_round(&global, task, h, eta, tp.batch, tp.iters, rng))
                .collect();
            let weights: Vec<f64> = members.iter().map(|&h| task.dataset_size(h) as f64).collect();
            let refs: Vec<&ModelVector> = locals.iter().collect();
            let mut agg = aggregate(&refs, &weights).expect("members have positive weight");
            agg.version = k;
            for &h in &members {
                self.models[m][h] = agg.clone();
            }
            let participant_losses = members.iter().map(|&h| task.local_loss(&agg.params, h)).collect();
            let global_loss = task.global_loss(&agg.params);
            self.latest[m] = agg;
            self.loss_history[m].push(global_loss);
            out.push(TaskRoundResult {
                task: m,
                participants: members,
                participant_losses,
                global_loss,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use approx::assert_relative_eq;

    fn scalar_task(target: f64) -> SyntheticTask {
        SyntheticTask {
            task_id: 0,
            family: TaskFamily::Quadratic,
            train: vec![Samples::Denoise { dim: 1, b: vec![target] }],
            test: vec![Samples::Denoise { dim: 1, b: vec![target] }],
        }
    }

    #[test]
    fn closed_form_sgd_steps() {
        let task = scalar_task(1.0);
        let mut rng = stream(0, Stream::Sgd);
        let w0 = ModelVector::zeros(0, 1);
        assert_eq!(local_sgd_round(&w0, &task, 0, 0.5, 4, 1, &mut rng).params, vec![0.5]);
        assert_eq!(local_sgd_round(&w0, &task, 0, 0.5, 4, 2, &mut rng).params, vec![0.75]);
        assert_eq!(local_sgd_round(&w0, &task, 0, 0.0, 4, 3, &mut rng).params, vec![0.0]);
    }

    #[test]
    fn aggregate_examples() {
        let m = |p: Vec<f64>| ModelVector {
            params: p,
            task_id: 0,
            version: 1,
        };
        let (a, b) = (m(vec![0.0, 2.0]), m(vec![2.0, 0.0]));
        assert_eq!(aggregate(&[&a, &b], &[1.0, 1.0]).unwrap().params, vec![1.0, 1.0]);
        assert_eq!(aggregate(&[&a], &[5.0]).unwrap().params, a.params);
        let (x, y) = (m(vec![0.0]), m(vec![4.0]));
        assert_eq!(aggregate(&[&x, &y], &[1.0, 3.0]).unwrap().params, vec![3.0]);
        let z = m(vec![1.0]);
        assert!(matches!(aggregate(&[&a, &z], &[1.0, 1.0]), Err(FlError::DimMismatch { .. })));
        assert_eq!(aggregate(&[], &[]), Err(FlError::NothingToAggregate));
    }

    #[test]
    fn identical_models_aggregate_exactly() {
        let v = ModelVector {
            params: vec![0.1, 0.7, 1.0 / 3.0, -2.2],
            task_id: 0,
            version: 0,
        };
        let out = aggregate(&[&v, &v, &v], &[3.0, 7.0, 11.0]).unwrap();
        assert_eq!(out.params, v.params);
    }

    #[test]
    fn distribute_copies_model_and_version() {
        let leader = ModelVector {
            params: vec![1.0, 2.0],
            task_id: 0,
            version: 7,
        };
        let mut a = ModelVector { version: 3, ..ModelVector::zeros(0, 2) };
        let mut b = ModelVector::zeros(0, 2);
        let mut c = ModelVector::zeros(0, 2);
        distribute(&leader, &mut [&mut a, &mut b, &mut c]);
        for m in [&a, &b, &c] {
            assert_eq!(m.params, vec![1.0, 2.0]);
            assert_eq!(m.version, 7);
        }
        distribute(&leader, &mut []);
    }

    #[test]
    fn loss_examples() {
        let task = scalar_task(1.0);
        assert_eq!(task.local_loss(&[1.0], 0), 0.0);
        assert_eq!(task.local_loss(&[0.0], 0), 0.5);
        let cls = Samples::Classification {
            features: 3,
            classes: 4,
            x: vec![0.3, -1.0, 2.0, 1.0, 1.0, 1.0],
            y: vec![2, 0],
        };
        assert_relative_eq!(cls.mean_loss(&vec![0.0; 16]), 4f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn final_average_loss_examples() {
        assert_eq!(final_average_loss(&[vec![0.7]]).unwrap(), 0.7);
        assert_relative_eq!(final_average_loss(&[vec![0.4], vec![0.8]]).unwrap(), 0.6);
        assert_relative_eq!(final_average_loss(&[vec![0.2, 0.4, 0.6]]).unwrap(), 0.4);
        assert_eq!(final_average_loss(&[vec![0.2], vec![]]), Err(FlError::EmptyTask(1)));
    }

    fn spec(family: TaskFamily, design: QuadraticDesign, het: f64) -> TaskSection {
        TaskSection {
            family,
            design,
            heterogeneity: het,
            ..TaskSection::default()
        }
    }

    #[test]
    fn identity_design_optimum_is_the_target_mean() {
        let s = spec(TaskFamily::Quadratic, QuadraticDesign::Identity, 0.0);
        let task = gen_synthetic_task(&s, 0, &[5, 5], &mut stream(1, Stream::Data)).unwrap();
        let (q, c) = task.quadratic_form().unwrap();
        assert_eq!(q, DMatrix::identity(10, 10));
        let w = task.optimum().unwrap();
        for j in 0..10 {
            assert_relative_eq!(w[j], c[j], max_relative = 1e-12);
        }
        let g = task.global_grad(&w);
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn generation_is_reproducible_and_iid_without_heterogeneity() {
        let s = spec(TaskFamily::Softmax, QuadraticDesign::Gaussian, 0.0);
        let a = gen_synthetic_task(&s, 0, &[20, 30], &mut stream(4, Stream::Data)).unwrap();
        let b = gen_synthetic_task(&s, 0, &[20, 30], &mut stream(4, Stream::Data)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dataset_size(1), 30);
        assert!(gen_synthetic_task(&s, 0, &[20, 0], &mut stream(4, Stream::Data)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for family in [TaskFamily::Quadratic, TaskFamily::Softmax] {
            let s = spec(family, QuadraticDesign::Gaussian, 0.3);
            let task = gen_synthetic_task(&s, 0, &[15], &mut stream(2, Stream::Data)).unwrap();
            let dim = task.model_dim();
            let w: Vec<f64> = (0..dim).map(|i| 0.1 * (i as f64).sin()).collect();
            let g = task.global_grad(&w);
            for j in 0..dim {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += 1e-6;
                wm[j] -= 1e-6;
                let fd = (task.global_loss(&wp) - task.global_loss(&wm)) / 2e-6;
                assert!((fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()), "{family:?} {j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn full_batch_descent_is_monotone() {
        let s = spec(TaskFamily::Quadratic, QuadraticDesign::Gaussian, 0.5);
        let task = gen_synthetic_task(&s, 0, &[40, 40, 40], &mut stream(5, Stream::Data)).unwrap();
        let (q, _) = task.quadratic_form().unwrap();
        let l = q.symmetric_eigen().eigenvalues.max();
        let params = vec![
            TrainParams { eta0: 1.0 / l, eta_decay: 0.0, batch: 1000, iters: 1 };
            1
        ];
        let mut state = FlState::new(vec![task], params);
        let mut sched = Schedule::from_assignment(1, &[Some(0), Some(0), Some(0)], 1, 3);
        sched.set_u(0, 0, 1);
        let mut rng = stream(0, Stream::Sgd);
        let mut prev = state.current_global_loss(0);
        for k in 1..30 {
            sched.k = k;
            let res = state.run_round(&sched, &mut rng);
            assert!(res[0].global_loss <= prev + 1e-12);
            prev = res[0].global_loss;
        }
    }

    #[test]
    fn minibatch_gradient_is_unbiased() {
        let s = spec(TaskFamily::Quadratic, QuadraticDesign::Gaussian, 0.0);
        let task = gen_synthetic_task(&s, 0, &[30], &mut stream(6, Stream::Data)).unwrap();
        let w = vec![0.2; 10];
        let full = task.train[0].mean_grad(&w);
        let mut rng = stream(1, Stream::Sgd);
        let draws = 4000;
        let mut sum = vec![0.0; 10];
        let mut sumsq = vec![0.0; 10];
        for _ in 0..draws {
            let mut g = vec![0.0; 10];
            for i in index::sample(&mut rng, 30, 5) {
                task.train[0].add_grad(&w, i, 0.2, &mut g);
            }
            for j in 0..10 {
                sum[j] += g[j];
                sumsq[j] += g[j] * g[j];
            }
        }
        for j in 0..10 {
            let mean = sum[j] / draws as f64;
            let var = sumsq[j] / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            assert!((mean - full[j]).abs() <= 3.0 * se + 1e-12, "coord {j}");
        }
    }

    #[test]
    fn stale_leader_overwrites_newer_models() {
        let task = scalar_task(1.0);
        let mut two = task.clone();
        two.train.push(Samples::Denoise { dim: 1, b: vec![1.0] });
        two.test.push(Samples::Denoise { dim: 1, b: vec![1.0] });
        let tp = TrainParams { eta0: 0.5, eta_decay: 0.0, batch: 1, iters: 1 };
        let mut st = FlState::new(vec![two], vec![tp]);
        st.models[0][1] = ModelVector { params: vec![0.9], task_id: 0, version: 5 };
        let mut s = Schedule::from_assignment(6, &[Some(0), Some(0)], 1, 2);
        s.set_u(0, 0, 1);
        let mut rng = stream(0, Stream::Sgd);
        st.run_round(&s, &mut rng);
        // Leader 0 held the initial zero model, so both restart from 0.
        assert_eq!(st.models[0][1].params, vec![0.5]);
        assert_eq!(st.models[0][1].version, 6);
    }
}

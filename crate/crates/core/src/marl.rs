//! Heterogeneous-agent PPO with sequential agent updates, plus a joint-PPO
//! baseline that drives every vehicle from one shared actor.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RlSection;
use crate::env::{EnvError, MmflEnv};
use crate::nn::{entropy, log_softmax, policy_sample, Adam, Grads, Mlp, NnError};
use crate::rng::{stream, substream, SimRng, Stream};

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub minibatch: usize,
    pub episodes: usize,
    pub steps: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub eps_clip: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    pub ppo_epochs: usize,
    pub critic_epochs: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
}

impl TrainerConfig {
    pub fn from_rl(rl: &RlSection) -> Self {
        Self {
            minibatch: rl.minibatch,
            episodes: rl.episodes,
            steps: rl.steps_per_episode,
            gamma: rl.gamma,
            gae_lambda: rl.gae_lambda,
            eps_clip: rl.eps_clip,
            actor_lr: rl.actor_lr,
            critic_lr: rl.critic_lr,
            hidden: rl.hidden.clone(),
            ppo_epochs: rl.ppo_epochs,
            critic_epochs: rl.critic_epochs,
            entropy_coef: rl.entropy_coef,
            max_grad_norm: rl.max_grad_norm,
        }
    }

    pub fn validate(&self) -> Result<(), MarlError> {
        let bad = |m: &str| Err(MarlError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.eps_clip <= 0.0 {
            return bad("eps_clip must be positive");
        }
        if self.minibatch == 0 || self.steps == 0 {
            return bad("minibatch and steps must be positive");
        }
        if self.actor_lr < 0.0 || self.critic_lr < 0.0 {
            return bad("learning rates must be non-negative");
        }
        Ok(())
    }
}

/// `sum_{j >= 0} gamma^j R_{t+j}` over the rest of the horizon.
pub fn discounted_returns(rewards: &[f64], gamma: f64, t: usize) -> f64 {
    rewards[t..].iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Generalized advantage estimates; `values` carries one bootstrap entry
/// past the horizon.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, MarlError> {
    gae_masked(rewards, values, &vec![false; rewards.len()], gamma, lambda)
}

/// As [`gae`], but a `true` in `dones[t]` ends the trajectory after step `t`:
/// the next value is not bootstrapped and the recursion restarts.
pub fn gae_masked(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, MarlError> {
    let t = rewards.len();
    if values.len() != t + 1 || dones.len() != t {
        return Err(MarlError::LengthMismatch(format!(
            "{t} rewards need {} values and {t} done flags, got {} and {}",
            t + 1,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; t];
    let mut acc = 0.0;
    for i in (0..t).rev() {
        let live = if dones[i] { 0.0 } else { 1.0 };
        let delta = rewards[i] + gamma * values[i + 1] * live - values[i];
        acc = delta + gamma * lambda * live * acc;
        adv[i] = acc;
    }
    Ok(adv)
}

/// Per-sample clipped surrogate `min(r M, clip(r, 1 - eps, 1 + eps) M)`.
pub fn clip_objective(ratio: f64, m: f64, eps: f64) -> f64 {
    (ratio * m).min(ratio.clamp(1.0 - eps, 1.0 + eps) * m)
}

/// Derivative of [`clip_objective`] with respect to the log-probability.
fn clip_objective_dlogp(ratio: f64, m: f64, eps: f64) -> f64 {
    if ratio * m <= ratio.clamp(1.0 - eps, 1.0 + eps) * m {
        ratio * m
    } else {
        0.0
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningStats {
    pub count: f64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt().max(1e-8)
        }
    }
}

/// An actor (or shared critic) with its optimizer.
#[derive(Debug, Clone)]
pub struct Learner {
    pub net: Mlp,
    pub opt: Adam,
}

impl Learner {
    pub fn new(dims: &[usize], out_gain: f64, lr: f64, rng: &mut SimRng) -> Self {
        let net = Mlp::new(dims, out_gain, rng);
        let opt = Adam::new(&net, lr);
        Self { net, opt }
    }

    /// Applies accumulated gradients; returns false (and leaves the network
    /// untouched) when they are not finite.
    fn apply(&mut self, mut grads: Grads, max_norm: Option<f64>) -> bool {
        if !grads.is_finite() {
            log::warn!("skipping update with non-finite gradient");
            return false;
        }
        if let Some(n) = max_norm {
            grads.clip_norm(n);
        }
        self.opt.step(&mut self.net, &grads);
        true
    }
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

/// Sum over heads of `log pi(a_j)`, the actor output split into `heads`
/// equal blocks.
fn joint_log_prob(logits: &[f64], actions: &[usize]) -> f64 {
    let a = logits.len() / actions.len();
    actions
        .iter()
        .enumerate()
        .map(|(j, &act)| log_softmax(&logits[j * a..(j + 1) * a])[act])
        .sum()
}

/// One PPO sample for an actor.
#[derive(Debug, Clone)]
pub struct ActorSample<'a> {
    pub input: &'a [f64],
    pub actions: &'a [usize],
    pub old_logp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub steps: usize,
    pub skipped: usize,
    pub objective: f64,
}

/// Accumulates into `grads` the gradient of the loss
/// `-scale * (clip_objective + entropy_coef * entropy)` for one sample and
/// returns the sample's surrogate value.
pub fn surrogate_grad(
    net: &Mlp,
    s: &ActorSample<'_>,
    m: f64,
    eps: f64,
    entropy_coef: f64,
    scale: f64,
    grads: &mut Grads,
) -> Result<f64, MarlError> {
    let cache = net.forward_cached(s.input)?;
    let a = cache.output.len() / s.actions.len();
    let ratio = (joint_log_prob(&cache.output, s.actions) - s.old_logp).exp();
    let g = clip_objective_dlogp(ratio, m, eps);
    let mut up = vec![0.0; cache.output.len()];
    for (j, &act) in s.actions.iter().enumerate() {
        let z = &cache.output[j * a..(j + 1) * a];
        let lp = log_softmax(z);
        let h = entropy(z);
        for c in 0..a {
            let p = lp[c].exp();
            let onehot = if c == act { 1.0 } else { 0.0 };
            let d_ent = -p * (lp[c] + h);
            up[j * a + c] = -(g * (onehot - p) + entropy_coef * d_ent) * scale;
        }
    }
    net.backward_into(&cache, &up, grads)?;
    Ok(clip_objective(ratio, m, eps) * scale)
}

/// Accumulates the gradient of `scale * 0.5 (V(state) - target)^2` and
/// returns that loss.
pub fn value_grad(net: &Mlp, state: &[f64], target: f64, scale: f64, grads: &mut Grads) -> Result<f64, MarlError> {
    let cache = net.forward_cached(state)?;
    let err = cache.output[0] - target;
    net.backward_into(&cache, &[err * scale], grads)?;
    Ok(0.5 * err * err * scale)
}

/// Gradient ascent on the clipped surrogate (plus entropy bonus) over
/// shuffled minibatches.
#[allow(clippy::too_many_arguments)]
pub fn ppo_clip_update(
    actor: &mut Learner,
    samples: &[ActorSample<'_>],
    m_factor: &[f64],
    eps: f64,
    epochs: usize,
    minibatch: usize,
    entropy_coef: f64,
    max_grad_norm: Option<f64>,
    rng: &mut SimRng,
) -> Result<UpdateStats, MarlError> {
    if samples.len() != m_factor.len() {
        return Err(MarlError::LengthMismatch(format!(
            "{} samples but {} M-factor entries",
            samples.len(),
            m_factor.len()
        )));
    }
    if samples.is_empty() {
        return Err(MarlError::LengthMismatch("empty batch".into()));
    }
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(minibatch) {
            let mut grads = actor.net.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            let mut obj = 0.0;
            for &i in chunk {
                obj += surrogate_grad(&actor.net, &samples[i], m_factor[i], eps, entropy_coef, scale, &mut grads)?;
            }
            if actor.apply(grads, max_grad_norm) {
                stats.steps += 1;
            } else {
                stats.skipped += 1;
            }
            stats.objective = obj;
        }
    }
    Ok(stats)
}

/// Shared state-value network regressed on normalized returns.
#[derive(Debug, Clone)]
pub struct Critic {
    pub learner: Learner,
    pub stats: RunningStats,
}

impl Critic {
    pub fn value(&self, state: &[f64]) -> Result<f64, MarlError> {
        Ok(self.learner.net.forward(state)?[0] * self.stats.std() + self.stats.mean)
    }

    /// Mean squared error (in normalized units) on a batch.
    pub fn loss(&self, states: &[Vec<f64>], returns: &[f64]) -> Result<f64, MarlError> {
        let (mean, std) = (self.stats.mean, self.stats.std());
        let mut l = 0.0;
        for (s, r) in states.iter().zip(returns) {
            let v = self.learner.net.forward(s)?[0];
            l += 0.5 * (v - (r - mean) / std).powi(2);
        }
        Ok(l / states.len() as f64)
    }

    pub fn regress(
        &mut self,
        states: &[Vec<f64>],
        returns: &[f64],
        epochs: usize,
        minibatch: usize,
        max_grad_norm: Option<f64>,
        rng: &mut SimRng,
    ) -> Result<usize, MarlError> {
        let (mean, std) = (self.stats.mean, self.stats.std());
        let mut order: Vec<usize> = (0..states.len()).collect();
        let mut skipped = 0;
        for _ in 0..epochs {
            order.shuffle(rng);
            for chunk in order.chunks(minibatch) {
                let mut grads = self.learner.net.zero_grads();
                let scale = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    value_grad(&self.learner.net, &states[i], (returns[i] - mean) / std, scale, &mut grads)?;
                }
                if !self.learner.apply(grads, max_grad_norm) {
                    skipped += 1;
                }
            }
        }
        Ok(skipped)
    }
}

/// Everything recorded while collecting one training episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub states: Vec<Vec<f64>>,
    /// `obs[t][h]`.
    pub obs: Vec<Vec<Vec<f64>>>,
    pub actions: Vec<Vec<usize>>,
    /// Per-agent log-probabilities under the collecting policy.
    pub logp: Vec<Vec<f64>>,
    /// Team reward (sum of agent rewards).
    pub rewards: Vec<f64>,
    /// Value estimates, with one bootstrap entry past the horizon.
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub feasible: Vec<bool>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn mean_return(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.len().max(1) as f64
    }

    pub fn feasible_fraction(&self) -> f64 {
        self.feasible.iter().filter(|f| **f).count() as f64 / self.len().max(1) as f64
    }
}

/// One row of the training-curve CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    /// Mean team reward per step.
    pub mean_return: f64,
    pub feasible_fraction: f64,
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Steps the environment `steps` times with `act`, resetting it whenever an
/// episode ends.
pub fn collect<F>(env: &mut MmflEnv, steps: usize, critic: &Critic, mut act: F) -> Result<RolloutBatch, MarlError>
where
    F: FnMut(&MmflEnv) -> Result<(Vec<usize>, Vec<f64>), MarlError>,
{
    let mut b = RolloutBatch::default();
    for _ in 0..steps {
        let state = env.global_state();
        b.values.push(critic.value(&state)?);
        b.obs.push(env.observations());
        b.states.push(state);
        let (actions, logp) = act(env)?;
        let out = env.step(&actions)?;
        b.rewards.push(out.rewards.iter().sum());
        b.dones.push(out.done);
        b.feasible.push(out.info.feasible);
        b.actions.push(actions);
        b.logp.push(logp);
        if out.done {
            env.reset();
        }
    }
    b.values.push(critic.value(&env.global_state())?);
    Ok(b)
}

fn normalize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    v.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

/// Advantages (normalized) and return targets for a batch.
pub fn advantages(b: &RolloutBatch, cfg: &TrainerConfig) -> Result<(Vec<f64>, Vec<f64>), MarlError> {
    let adv = gae_masked(&b.rewards, &b.values, &b.dones, cfg.gamma, cfg.gae_lambda)?;
    let returns: Vec<f64> = adv.iter().zip(&b.values).map(|(a, v)| a + v).collect();
    let mut norm = adv;
    normalize(&mut norm);
    Ok((norm, returns))
}

/// What the sequential update did in one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct HappoUpdateReport {
    pub permutation: Vec<usize>,
    /// The M factor after the last recursion step.
    pub m_factor: Vec<f64>,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct HappoTrainer {
    pub cfg: TrainerConfig,
    pub actors: Vec<Learner>,
    pub critic: Critic,
    sample_rng: SimRng,
    shuffle_rng: SimRng,
    perm_rng: SimRng,
    pub episode: usize,
}

const CRITIC_INDEX: u64 = 1 << 20;
const SAMPLE_INDEX: u64 = 1 << 21;

fn critic_for(env: &MmflEnv, cfg: &TrainerConfig, seed: u64) -> Critic {
    let mut rng = substream(seed, Stream::Policy, CRITIC_INDEX);
    Critic {
        learner: Learner::new(&dims(env.state_dim(), &cfg.hidden, 1), 1.0, cfg.critic_lr, &mut rng),
        stats: RunningStats::default(),
    }
}

impl HappoTrainer {
    pub fn new(env: &MmflEnv, cfg: TrainerConfig, seed: u64) -> Result<Self, MarlError> {
        cfg.validate()?;
        let actors = (0..env.agents())
            .map(|h| {
                let mut rng = substream(seed, Stream::Policy, h as u64);
                Learner::new(&dims(env.obs_dim(), &cfg.hidden, env.action_dim()), 0.01, cfg.actor_lr, &mut rng)
            })
            .collect();
        Ok(Self {
            critic: critic_for(env, &cfg, seed),
            actors,
            sample_rng: substream(seed, Stream::Policy, SAMPLE_INDEX),
            shuffle_rng: substream(seed, Stream::Permutation, 1),
            perm_rng: stream(seed, Stream::Permutation),
            cfg,
            episode: 0,
        })
    }

    pub fn act(&mut self, env: &MmflEnv) -> Result<(Vec<usize>, Vec<f64>), MarlError> {
        act_independent(&self.actors, env, &mut self.sample_rng)
    }

    pub fn collect(&mut self, env: &mut MmflEnv) -> Result<RolloutBatch, MarlError> {
        let actors = &self.actors;
        let rng = &mut self.sample_rng;
        collect(env, self.cfg.steps, &self.critic, |e| act_independent(actors, e, rng))
    }

    /// Sequential agent updates in a fresh random order, then the critic.
    pub fn update(&mut self, b: &RolloutBatch) -> Result<HappoUpdateReport, MarlError> {
        let (adv, returns) = advantages(b, &self.cfg)?;
        let mut perm: Vec<usize> = (0..self.actors.len()).collect();
        perm.shuffle(&mut self.perm_rng);
        let mut m = adv;
        let mut skipped = 0;
        for (pos, &h) in perm.iter().enumerate() {
            let acts: Vec<[usize; 1]> = b.actions.iter().map(|a| [a[h]]).collect();
            let samples: Vec<ActorSample<'_>> = (0..b.len())
                .map(|t| ActorSample {
                    input: &b.obs[t][h],
                    actions: &acts[t],
                    old_logp: b.logp[t][h],
                })
                .collect();
            let stats = ppo_clip_update(
                &mut self.actors[h],
                &samples,
                &m,
                self.cfg.eps_clip,
                self.cfg.ppo_epochs,
                self.cfg.minibatch,
                self.cfg.entropy_coef,
                self.cfg.max_grad_norm,
                &mut self.shuffle_rng,
            )?;
            skipped += stats.skipped;
            if pos + 1 < perm.len() {
                for (t, s) in samples.iter().enumerate() {
                    let out = self.actors[h].net.forward(s.input)?;
                    m[t] *= (joint_log_prob(&out, s.actions) - s.old_logp).exp();
                }
            }
        }
        for r in &returns {
            self.critic.stats.push(*r);
        }
        skipped += self.critic.regress(
            &b.states,
            &returns,
            self.cfg.critic_epochs,
            self.cfg.minibatch,
            self.cfg.max_grad_norm,
            &mut self.shuffle_rng,
        )?;
        Ok(HappoUpdateReport {
            permutation: perm,
            m_factor: m,
            skipped,
        })
    }

    pub fn train_episode(&mut self, env: &mut MmflEnv) -> Result<CurveRow, MarlError> {
        env.reset();
        let b = self.collect(env)?;
        self.update(&b)?;
        let row = CurveRow {
            episode: self.episode,
            mean_return: b.mean_return(),
            feasible_fraction: b.feasible_fraction(),
        };
        log::info!(
            "happo episode {}: mean return {:.4}, feasible {:.3}",
            row.episode,
            row.mean_return,
            row.feasible_fraction
        );
        self.episode += 1;
        Ok(row)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new("happo", self.actors.iter().map(|a| &a.net), &self.critic.learner.net)
    }
}

fn act_independent(actors: &[Learner], env: &MmflEnv, rng: &mut SimRng) -> Result<(Vec<usize>, Vec<f64>), MarlError> {
    let mut actions = Vec::with_capacity(actors.len());
    let mut logp = Vec::with_capacity(actors.len());
    for (h, a) in actors.iter().enumerate() {
        let logits = a.net.forward(&env.observe(h))?;
        let (act, lp) = policy_sample(&logits, rng);
        actions.push(act);
        logp.push(lp);
    }
    Ok((actions, logp))
}

/// Trained networks plus the per-episode curve.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub actors: Vec<Mlp>,
    pub critic: Mlp,
    pub curve: Vec<CurveRow>,
    pub checkpoint: Checkpoint,
}

pub fn happo_train(env: &mut MmflEnv, cfg: &TrainerConfig, seed: u64) -> Result<TrainOutput, MarlError> {
    let mut tr = HappoTrainer::new(env, cfg.clone(), seed)?;
    let curve = (0..cfg.episodes)
        .map(|_| tr.train_episode(env))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrainOutput {
        checkpoint: tr.checkpoint(),
        actors: tr.actors.into_iter().map(|a| a.net).collect(),
        critic: tr.critic.learner.net,
        curve,
    })
}

/// One actor over the concatenated observations with a categorical head per
/// vehicle, updated with plain PPO on the joint action.
#[derive(Debug, Clone)]
pub struct JointPpoTrainer {
    pub cfg: TrainerConfig,
    pub actor: Learner,
    pub critic: Critic,
    agents: usize,
    sample_rng: SimRng,
    shuffle_rng: SimRng,
    pub episode: usize,
}

fn act_joint(actor: &Mlp, agents: usize, env: &MmflEnv, rng: &mut SimRng) -> Result<(Vec<usize>, Vec<f64>), MarlError> {
    let logits = actor.forward(&env.observations().concat())?;
    let a = logits.len() / agents;
    let mut actions = Vec::with_capacity(agents);
    let mut logp = Vec::with_capacity(agents);
    for h in 0..agents {
        let (act, lp) = policy_sample(&logits[h * a..(h + 1) * a], rng);
        actions.push(act);
        logp.push(lp);
    }
    Ok((actions, logp))
}

impl JointPpoTrainer {
    pub fn new(env: &MmflEnv, cfg: TrainerConfig, seed: u64) -> Result<Self, MarlError> {
        cfg.validate()?;
        let h = env.agents();
        let mut rng = substream(seed, Stream::Policy, 0);
        let actor = Learner::new(
            &dims(h * env.obs_dim(), &cfg.hidden, h * env.action_dim()),
            0.01,
            cfg.actor_lr,
            &mut rng,
        );
        Ok(Self {
            critic: critic_for(env, &cfg, seed),
            actor,
            agents: h,
            sample_rng: substream(seed, Stream::Policy, SAMPLE_INDEX),
            shuffle_rng: substream(seed, Stream::Permutation, 1),
            cfg,
            episode: 0,
        })
    }

    pub fn act(&mut self, env: &MmflEnv) -> Result<(Vec<usize>, Vec<f64>), MarlError> {
        act_joint(&self.actor.net, self.agents, env, &mut self.sample_rng)
    }

    pub fn update(&mut self, b: &RolloutBatch) -> Result<usize, MarlError> {
        let (adv, returns) = advantages(b, &self.cfg)?;
        let inputs: Vec<Vec<f64>> = b.obs.iter().map(|o| o.concat()).collect();
        let samples: Vec<ActorSample<'_>> = (0..b.len())
            .map(|t| ActorSample {
                input: &inputs[t],
                actions: &b.actions[t],
                old_logp: b.logp[t].iter().sum(),
            })
            .collect();
        let stats = ppo_clip_update(
            &mut self.actor,
            &samples,
            &adv,
            self.cfg.eps_clip,
            self.cfg.ppo_epochs,
            self.cfg.minibatch,
            self.cfg.entropy_coef,
            self.cfg.max_grad_norm,
            &mut self.shuffle_rng,
        )?;
        for r in &returns {
            self.critic.stats.push(*r);
        }
        let skipped = self.critic.regress(
            &b.states,
            &returns,
            self.cfg.critic_epochs,
            self.cfg.minibatch,
            self.cfg.max_grad_norm,
            &mut self.shuffle_rng,
        )?;
        Ok(stats.skipped + skipped)
    }

    pub fn train_episode(&mut self, env: &mut MmflEnv) -> Result<CurveRow, MarlError> {
        env.reset();
        let (actor, agents, rng) = (&self.actor.net, self.agents, &mut self.sample_rng);
        let b = collect(env, self.cfg.steps, &self.critic, |e| act_joint(actor, agents, e, rng))?;
        self.update(&b)?;
        let row = CurveRow {
            episode: self.episode,
            mean_return: b.mean_return(),
            feasible_fraction: b.feasible_fraction(),
        };
        self.episode += 1;
        Ok(row)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new("joint-ppo", std::iter::once(&self.actor.net), &self.critic.learner.net)
    }
}

pub fn joint_ppo_train(env: &mut MmflEnv, cfg: &TrainerConfig, seed: u64) -> Result<TrainOutput, MarlError> {
    let mut tr = JointPpoTrainer::new(env, cfg.clone(), seed)?;
    let curve = (0..cfg.episodes)
        .map(|_| tr.train_episode(env))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrainOutput {
        checkpoint: tr.checkpoint(),
        actors: vec![tr.actor.net],
        critic: tr.critic.learner.net,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub dims: Vec<usize>,
    pub weights: Vec<f64>,
}

impl NetCheckpoint {
    fn of(net: &Mlp) -> Self {
        Self {
            dims: net.dims.clone(),
            weights: net.flat(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp, MarlError> {
        if self.dims.len() < 2 {
            return Err(MarlError::Checkpoint("a network needs at least two layer sizes".into()));
        }
        let mut net = Mlp::zeros(&self.dims);
        net.set_flat(&self.weights)?;
        Ok(net)
    }
}

/// Serialized policies: one actor per agent (or one shared actor) and the critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub agents: Vec<NetCheckpoint>,
    pub critic: NetCheckpoint,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    fn new<'a>(kind: &str, actors: impl Iterator<Item = &'a Mlp>, critic: &Mlp) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            agents: actors.map(NetCheckpoint::of).collect(),
            critic: NetCheckpoint::of(critic),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MarlError> {
        let c: Self = serde_json::from_str(s).map_err(|e| MarlError::Checkpoint(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(MarlError::Checkpoint(format!("unsupported version {}", c.version)));
        }
        Ok(c)
    }

    /// Samples a joint action for the environment's current state.
    pub fn act(&self, env: &MmflEnv, rng: &mut SimRng) -> Result<Vec<usize>, MarlError> {
        let nets = self.agents.iter().map(NetCheckpoint::to_mlp).collect::<Result<Vec<_>, _>>()?;
        if self.kind == "joint-ppo" {
            Ok(act_joint(&nets[0], env.agents(), env, rng)?.0)
        } else {
            if nets.len() != env.agents() {
                return Err(MarlError::Checkpoint(format!(
                    "{} actors for {} agents",
                    nets.len(),
                    env.agents()
                )));
            }
            let mut actions = Vec::with_capacity(nets.len());
            for (h, n) in nets.iter().enumerate() {
                actions.push(policy_sample(&n.forward(&env.observe(h))?, rng).0);
            }
            Ok(actions)
        }
    }
}

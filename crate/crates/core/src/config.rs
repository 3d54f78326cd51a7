//! Run configuration.
//!
//! A [`SimConfig`] is the single source of truth for a run. It is read from a
//! JSON document with the sections `sim`, `radio`, `compute`, `tasks`, `game`
//! and `rl`. Every field has a default, so `{}` is a valid document; unknown
//! keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// Top-level configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub sim: SimSection,
    pub radio: RadioSection,
    pub compute: ComputeSection,
    pub tasks: Vec<TaskSection>,
    pub game: GameSection,
    pub rl: RlSection,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sim: SimSection::default(),
            radio: RadioSection::default(),
            compute: ComputeSection::default(),
            tasks: vec![
                TaskSection::default(),
                TaskSection {
                    family: TaskFamily::Softmax,
                    ..TaskSection::default()
                },
                TaskSection {
                    dim: 16,
                    ..TaskSection::default()
                },
            ],
            game: GameSection::default(),
            rl: RlSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Vehicle count `H`.
    pub vehicles: usize,
    /// Maximum communication rounds `K_max`.
    pub max_rounds: usize,
    /// Round deadline `t_round` in seconds.
    pub t_round: f64,
    /// Initial vehicle energy in joules.
    pub e_init: f64,
    pub rng_seed: u64,
    pub mobility: MobilitySection,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            vehicles: 30,
            max_rounds: 100,
            t_round: 30.0,
            e_init: 3000.0,
            rng_seed: 0,
            mobility: MobilitySection::default(),
        }
    }
}

/// Synthetic Manhattan-grid mobility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilitySection {
    pub map_width_m: f64,
    pub map_height_m: f64,
    /// Distance between parallel roads.
    pub block_m: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Movement time per round; `None` means `t_round`.
    pub move_dt: Option<f64>,
}

impl Default for MobilitySection {
    fn default() -> Self {
        Self {
            map_width_m: 600.0,
            map_height_m: 600.0,
            block_m: 150.0,
            v_min: 5.0,
            v_max: 15.0,
            move_dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioSection {
    /// Total uplink bandwidth `W` in Hz.
    pub bandwidth_hz: f64,
    /// Subcarrier count `N`.
    pub subcarriers: usize,
    /// Noise power in dBm.
    pub sigma2_dbm: f64,
    /// Channel power gain at the 1 m reference distance, in dB.
    pub h_ref_db: f64,
    /// Uplink transmit power in dBm.
    pub p_dbm: f64,
    /// Path-loss exponent.
    pub nu: f64,
    /// Direct (V2V) communication radius in meters.
    pub d_u: f64,
    /// Distance scaling factor applied beyond `d_u`.
    pub xi: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self {
            bandwidth_hz: 20e6,
            subcarriers: 60,
            sigma2_dbm: -104.0,
            h_ref_db: -34.0,
            p_dbm: 30.0,
            nu: 2.0,
            d_u: 100.0,
            xi: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComputeSection {
    pub f_hz: f64,
    /// CPU cycles per bit.
    pub q: f64,
    /// Effective switching capacitance.
    pub lambda_cap: f64,
    /// Local SGD iterations per round.
    pub local_iters: usize,
}

impl Default for ComputeSection {
    fn default() -> Self {
        Self {
            f_hz: 6e9,
            q: 1e3,
            lambda_cap: 1e-27,
            local_iters: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    /// Per-sample loss `0.5 * |A_x w - b_x|^2`.
    Quadratic,
    /// Linear softmax classifier on Gaussian-mixture features.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadraticDesign {
    /// One Gaussian regression row per sample.
    Gaussian,
    /// `A_x = I` for every sample.
    Identity,
}

/// Samples held by each vehicle for a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSizes {
    Uniform(usize),
    PerVehicle(Vec<usize>),
}

impl DatasetSizes {
    pub fn resolve(&self, vehicles: usize) -> Result<Vec<usize>, ConfigError> {
        match self {
            DatasetSizes::Uniform(n) => Ok(vec![*n; vehicles]),
            DatasetSizes::PerVehicle(v) if v.len() == vehicles => Ok(v.clone()),
            DatasetSizes::PerVehicle(v) => invalid(format!(
                "dataset_sizes has {} entries, expected one per vehicle ({vehicles})",
                v.len()
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRate {
    pub eta0: f64,
    /// `eta_k = eta0 / (1 + decay * k)`.
    pub decay: f64,
}

impl Default for LearningRate {
    fn default() -> Self {
        Self {
            eta0: 0.05,
            decay: 0.0,
        }
    }
}

impl LearningRate {
    pub fn at(&self, k: usize) -> f64 {
        self.eta0 / (1.0 + self.decay * k as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub family: TaskFamily,
    /// Parameter count for the quadratic family.
    pub dim: usize,
    pub design: QuadraticDesign,
    /// Feature and class counts for the softmax family.
    pub features: usize,
    pub classes: usize,
    pub dataset_sizes: DatasetSizes,
    pub test_samples: usize,
    /// Bits per sample, mapping sample counts to computation load.
    pub sample_bits: f64,
    /// Efficiency coefficients of `psi = beta * ln(n) + theta`.
    pub beta: f64,
    pub theta: f64,
    pub learning_rate: LearningRate,
    pub batch_size: usize,
    /// 0 gives IID vehicles; larger values skew each vehicle's data.
    pub heterogeneity: f64,
    /// Mean shift of the test distribution relative to training.
    pub test_shift: f64,
    pub label_noise: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            family: TaskFamily::Quadratic,
            dim: 10,
            design: QuadraticDesign::Gaussian,
            features: 8,
            classes: 4,
            dataset_sizes: DatasetSizes::Uniform(200),
            test_samples: 50,
            sample_bits: 500.0,
            beta: 1.0,
            theta: 0.0,
            learning_rate: LearningRate::default(),
            batch_size: 8,
            heterogeneity: 0.0,
            test_shift: 0.0,
            label_noise: 0.1,
        }
    }
}

impl TaskSection {
    pub fn model_dim(&self) -> usize {
        match self.family {
            TaskFamily::Quadratic => self.dim,
            TaskFamily::Softmax => self.classes * (self.features + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaderRecencyMode {
    /// Violations of the max-recency leader rule are counted but admitted.
    Advisory,
    /// Violations make the round infeasible.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePool {
    /// Every cluster member may lead.
    AllMembers,
    /// Only members of the task's previous-round cluster may lead, when any
    /// are present.
    PreviousCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameSection {
    /// Latency weight in the leader score.
    pub eps_weight: f64,
    pub h0_mode: LeaderRecencyMode,
    pub candidate_pool: CandidatePool,
    pub max_iters: usize,
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            eps_weight: 1.0,
            h0_mode: LeaderRecencyMode::Advisory,
            candidate_pool: CandidatePool::AllMembers,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `alpha * psi * rho`.
    Literal,
    /// `alpha * psi * rho / k`.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub penalty: f64,
    pub reward_mode: RewardMode,
    /// Episodes `K_s`.
    pub episodes: usize,
    /// Steps per episode `T_s`.
    pub steps_per_episode: usize,
    pub minibatch: usize,
    pub gamma: f64,
    /// GAE smoothing factor.
    pub gae_lambda: f64,
    pub eps_clip: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    pub ppo_epochs: usize,
    pub critic_epochs: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
    /// A task counts as converged when its loss improved by less than
    /// `converge_tol` over the last `converge_window` trained rounds.
    pub converge_window: usize,
    pub converge_tol: f64,
}

impl Default for RlSection {
    fn default() -> Self {
        Self {
            penalty: -10.0,
            reward_mode: RewardMode::Literal,
            episodes: 100,
            steps_per_episode: 4000,
            minibatch: 256,
            gamma: 0.99,
            gae_lambda: 0.95,
            eps_clip: 0.2,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            hidden: vec![64, 64],
            ppo_epochs: 5,
            critic_epochs: 5,
            entropy_coef: 0.01,
            max_grad_norm: Some(0.5),
            converge_window: 10,
            converge_tol: 1e-4,
        }
    }
}

impl SimConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn vehicles(&self) -> usize {
        self.sim.vehicles
    }

    pub fn tasks_len(&self) -> usize {
        self.tasks.len()
    }

    pub fn move_dt(&self) -> f64 {
        self.sim.mobility.move_dt.unwrap_or(self.sim.t_round)
    }

    /// Checks every structural and physical invariant and names the first
    /// one that fails.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.sim;
        if s.vehicles < 1 {
            return invalid("sim.vehicles must be >= 1");
        }
        if self.tasks.is_empty() {
            return invalid("at least one task is required");
        }
        if s.max_rounds < 1 {
            return invalid("sim.max_rounds must be >= 1");
        }
        positive("sim.t_round", s.t_round)?;
        positive("sim.e_init", s.e_init)?;

        let mob = &s.mobility;
        positive("sim.mobility.map_width_m", mob.map_width_m)?;
        positive("sim.mobility.map_height_m", mob.map_height_m)?;
        positive("sim.mobility.block_m", mob.block_m)?;
        if !(mob.v_min >= 0.0 && mob.v_max >= mob.v_min && mob.v_max.is_finite()) {
            return invalid("sim.mobility speeds must satisfy 0 <= v_min <= v_max");
        }
        if let Some(dt) = mob.move_dt {
            if !(dt >= 0.0 && dt.is_finite()) {
                return invalid("sim.mobility.move_dt must be >= 0");
            }
        }

        let r = &self.radio;
        positive("radio.bandwidth_hz", r.bandwidth_hz)?;
        if r.subcarriers < s.vehicles {
            return invalid(format!(
                "radio.subcarriers ({}) must be >= sim.vehicles ({})",
                r.subcarriers, s.vehicles
            ));
        }
        finite("radio.sigma2_dbm", r.sigma2_dbm)?;
        finite("radio.h_ref_db", r.h_ref_db)?;
        finite("radio.p_dbm", r.p_dbm)?;
        if !(r.nu >= 1.0 && r.nu.is_finite()) {
            return invalid("radio.nu must be >= 1");
        }
        positive("radio.d_u", r.d_u)?;
        if !(r.xi >= 1.0 && r.xi.is_finite()) {
            return invalid("radio.xi must be >= 1");
        }

        let c = &self.compute;
        positive("compute.f_hz", c.f_hz)?;
        positive("compute.q", c.q)?;
        positive("compute.lambda_cap", c.lambda_cap)?;
        if c.local_iters < 1 {
            return invalid("compute.local_iters must be >= 1");
        }

        for (m, t) in self.tasks.iter().enumerate() {
            let name = |f: &str| format!("tasks[{m}].{f}");
            match t.family {
                TaskFamily::Quadratic if t.dim < 1 => return invalid(name("dim must be >= 1")),
                TaskFamily::Softmax if t.features < 1 || t.classes < 2 => {
                    return invalid(name("softmax needs features >= 1 and classes >= 2"))
                }
                _ => {}
            }
            let sizes = t.dataset_sizes.resolve(s.vehicles)?;
            if sizes.iter().any(|&n| n < 1) {
                return invalid(name("dataset_sizes must all be >= 1"));
            }
            positive(&name("sample_bits"), t.sample_bits)?;
            positive(&name("beta"), t.beta)?;
            // theta >= 0 keeps every utility non-negative, which the
            // potential function needs for its sign coupling.
            if !(t.theta >= 0.0 && t.theta.is_finite()) {
                return invalid(name("theta must be >= 0"));
            }
            positive(&name("learning_rate.eta0"), t.learning_rate.eta0)?;
            if !(t.learning_rate.decay >= 0.0 && t.learning_rate.decay.is_finite()) {
                return invalid(name("learning_rate.decay must be >= 0"));
            }
            if t.batch_size < 1 {
                return invalid(name("batch_size must be >= 1"));
            }
            if !(t.heterogeneity >= 0.0 && t.test_shift.is_finite() && t.label_noise >= 0.0) {
                return invalid(name("heterogeneity and label_noise must be >= 0"));
            }
        }

        let g = &self.game;
        if !(g.eps_weight >= 0.0 && g.eps_weight.is_finite()) {
            return invalid("game.eps_weight must be >= 0");
        }
        if g.max_iters < 1 {
            return invalid("game.max_iters must be >= 1");
        }

        let rl = &self.rl;
        finite("rl.penalty", rl.penalty)?;
        if !(rl.gamma > 0.0 && rl.gamma <= 1.0) {
            return invalid("rl.gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&rl.gae_lambda) {
            return invalid("rl.gae_lambda must be in [0, 1]");
        }
        positive("rl.eps_clip", rl.eps_clip)?;
        if !(rl.actor_lr >= 0.0 && rl.critic_lr >= 0.0) {
            return invalid("rl learning rates must be >= 0");
        }
        if rl.minibatch < 1 || rl.steps_per_episode < 1 {
            return invalid("rl.minibatch and rl.steps_per_episode must be >= 1");
        }
        if rl.hidden.iter().any(|&h| h < 1) {
            return invalid("rl.hidden layer sizes must be >= 1");
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be > 0 (got {v})"))
    }
}

fn finite(name: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be finite"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_table_values() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.sim.vehicles, 30);
        assert_eq!(cfg.radio.subcarriers, 60);
        assert_eq!(cfg.sim.e_init, 3000.0);
        assert_eq!(cfg.sim.t_round, 30.0);
        assert_eq!(cfg.radio.bandwidth_hz, 20e6);
        assert_eq!(cfg.compute.local_iters, 5);
        assert_eq!(cfg.rl.eps_clip, 0.2);
        assert_eq!(cfg.rl.gamma, 0.99);
    }

    #[test]
    fn empty_document_uses_defaults() {
        let cfg = SimConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, SimConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = SimConfig::from_json_str(r#"{"sim": {"vehicels": 3}}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        let err = SimConfig::from_json_str(r#"{"extra": 1}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn fewer_subcarriers_than_vehicles_is_invalid() {
        let err = SimConfig::from_json_str(r#"{"sim": {"vehicles": 8}, "radio": {"subcarriers": 4}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("subcarriers"), "{err}");
    }

    #[test]
    fn xi_below_one_is_invalid() {
        let err = SimConfig::from_json_str(r#"{"radio": {"xi": 0.5}}"#).unwrap_err();
        assert!(err.to_string().contains("xi"));
    }

    #[test]
    fn per_vehicle_sizes_must_cover_every_vehicle() {
        let doc = r#"{"sim": {"vehicles": 2}, "tasks": [{"dataset_sizes": [3, 4, 5]}]}"#;
        assert!(SimConfig::from_json_str(doc).is_err());
        let doc = r#"{"sim": {"vehicles": 3}, "tasks": [{"dataset_sizes": [3, 4, 5]}]}"#;
        let cfg = SimConfig::from_json_str(doc).unwrap();
        assert_eq!(cfg.tasks[0].dataset_sizes.resolve(3).unwrap(), vec![3, 4, 5]);
    }

    #[test]
    fn json_round_trip() {
        let cfg = SimConfig::default();
        let back = SimConfig::from_json_str(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);
    }
}

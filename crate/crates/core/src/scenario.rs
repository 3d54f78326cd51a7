//! Scenario construction and the per-round schedule tensors.

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, SimConfig, TaskFamily};
use crate::mobility::{Grid, MobilityTrace, Position, TraceError, World};
use crate::radio::LinkBudget;
use crate::compute::ComputeProfile;
use crate::rng::{stream, Stream};

/// Static description of one federated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// 0-based task index.
    pub task_id: usize,
    pub family: TaskFamily,
    pub model_dim: usize,
    /// Model size `Z` in bits (32 bits per parameter).
    pub z_bits: f64,
    /// Training samples per vehicle.
    pub dataset_sizes: Vec<usize>,
    pub sample_bits: f64,
    pub beta: f64,
    pub theta: f64,
}

impl TaskSpec {
    pub fn dataset_bits(&self, h: usize) -> f64 {
        self.dataset_sizes[h] as f64 * self.sample_bits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub position: Position,
    pub speed: f64,
    pub e_res: f64,
    /// Most recent round in which the vehicle took part in each task, 0 if never.
    pub rho: Vec<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SimConfig,
    pub seed: u64,
    pub link: LinkBudget,
    pub compute: ComputeProfile,
    pub tasks: Vec<TaskSpec>,
    pub vehicles: Vec<VehicleState>,
    pub world: World,
    pub round: usize,
}

impl Scenario {
    pub fn h(&self) -> usize {
        self.vehicles.len()
    }

    pub fn m(&self) -> usize {
        self.tasks.len()
    }

    pub fn n(&self) -> usize {
        self.config.radio.subcarriers
    }

    pub fn positions(&self) -> &[Position] {
        &self.world.positions
    }

    pub fn z_bits(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.z_bits).collect()
    }
}

fn task_specs(config: &SimConfig) -> Result<Vec<TaskSpec>, ConfigError> {
    let h = config.vehicles();
    config
        .tasks
        .iter()
        .enumerate()
        .map(|(m, t)| {
            let dim = t.model_dim();
            Ok(TaskSpec {
                task_id: m,
                family: t.family,
                model_dim: dim,
                z_bits: 32.0 * dim as f64,
                dataset_sizes: t.dataset_sizes.resolve(h)?,
                sample_bits: t.sample_bits,
                beta: t.beta,
                theta: t.theta,
            })
        })
        .collect()
}

/// Builds the initial scenario; `seed` drives synthetic vehicle placement.
pub fn build_scenario(config: &SimConfig, seed: u64) -> Result<Scenario, ScenarioError> {
    config.validate()?;
    let mut rng = stream(seed, Stream::Mobility);
    let grid = Grid::from_config(&config.sim.mobility, config.move_dt());
    let world = World::synthetic(grid, config.vehicles(), &mut rng);
    Ok(assemble(config, seed, world)?)
}

/// Builds a scenario whose positions are replayed from `trace`.
pub fn build_scenario_with_trace(
    config: &SimConfig,
    seed: u64,
    trace: MobilityTrace,
) -> Result<Scenario, ScenarioError> {
    config.validate()?;
    let world = World::from_trace(trace, config.vehicles())?;
    Ok(assemble(config, seed, world)?)
}

fn assemble(config: &SimConfig, seed: u64, world: World) -> Result<Scenario, ConfigError> {
    let tasks = task_specs(config)?;
    let m = tasks.len();
    let vehicles = (0..config.vehicles())
        .map(|id| VehicleState {
            id,
            position: world.positions[id],
            speed: world.speeds[id],
            e_res: config.sim.e_init,
            rho: vec![0; m],
        })
        .collect();
    Ok(Scenario {
        link: LinkBudget::from_config(&config.radio),
        compute: ComputeProfile::from_config(&config.compute),
        config: config.clone(),
        seed,
        tasks,
        vehicles,
        world,
        round: 0,
    })
}

/// Per-round decision tensors: task assignment `alpha` (H x M), leader
/// selection `u` (H x M) and subcarrier assignment `c` (M x H x N).
///
/// Entries are stored as `u8` so that non-binary values can be represented
/// and rejected by validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub k: usize,
    pub h: usize,
    pub m: usize,
    pub n: usize,
    pub alpha: Vec<u8>,
    pub u: Vec<u8>,
    pub c: Vec<u8>,
}

impl Schedule {
    pub fn empty(k: usize, h: usize, m: usize, n: usize) -> Self {
        Self {
            k,
            h,
            m,
            n,
            alpha: vec![0; h * m],
            u: vec![0; h * m],
            c: vec![0; m * h * n],
        }
    }

    pub fn alpha(&self, h: usize, m: usize) -> u8 {
        self.alpha[h * self.m + m]
    }

    pub fn set_alpha(&mut self, h: usize, m: usize, v: u8) {
        self.alpha[h * self.m + m] = v;
    }

    pub fn u(&self, h: usize, m: usize) -> u8 {
        self.u[h * self.m + m]
    }

    pub fn set_u(&mut self, h: usize, m: usize, v: u8) {
        self.u[h * self.m + m] = v;
    }

    fn c_index(&self, m: usize, h: usize, n: usize) -> usize {
        (m * self.h + h) * self.n + n
    }

    pub fn c(&self, m: usize, h: usize, n: usize) -> u8 {
        self.c[self.c_index(m, h, n)]
    }

    pub fn set_c(&mut self, m: usize, h: usize, n: usize, v: u8) {
        let i = self.c_index(m, h, n);
        self.c[i] = v;
    }

    /// The task vehicle `h` is assigned to, if exactly one.
    pub fn task_of(&self, h: usize) -> Option<usize> {
        let mut found = None;
        for m in 0..self.m {
            if self.alpha(h, m) != 0 {
                if found.is_some() {
                    return None;
                }
                found = Some(m);
            }
        }
        found
    }

    pub fn members(&self, m: usize) -> Vec<usize> {
        (0..self.h).filter(|&h| self.alpha(h, m) != 0).collect()
    }

    pub fn participants(&self) -> usize {
        (0..self.h).filter(|&h| (0..self.m).any(|m| self.alpha(h, m) != 0)).count()
    }

    /// The unique leader of task `m`, if any.
    pub fn leader_of(&self, m: usize) -> Option<usize> {
        let mut leaders = (0..self.h).filter(|&h| self.u(h, m) != 0);
        let first = leaders.next();
        if leaders.next().is_some() {
            None
        } else {
            first
        }
    }

    /// Number of subcarriers of task `m` held by vehicle `h`.
    pub fn subcarrier_count(&self, m: usize, h: usize) -> usize {
        let start = self.c_index(m, h, 0);
        self.c[start..start + self.n].iter().filter(|&&v| v != 0).count()
    }

    /// Builds `alpha` from per-vehicle task choices (`None` = sits out).
    pub fn from_assignment(k: usize, assignment: &[Option<usize>], m: usize, n: usize) -> Self {
        let mut s = Self::empty(k, assignment.len(), m, n);
        for (h, a) in assignment.iter().enumerate() {
            if let Some(t) = a {
                s.set_alpha(h, *t, 1);
            }
        }
        s
    }

    pub fn assignment(&self) -> Vec<Option<usize>> {
        (0..self.h).map(|h| self.task_of(h)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_thirty_full_vehicles() {
        let s = build_scenario(&SimConfig::default(), 0).unwrap();
        assert_eq!(s.h(), 30);
        assert_eq!(s.n(), 60);
        assert!(s.vehicles.iter().all(|v| v.e_res == 3000.0 && v.rho.iter().all(|&r| r == 0)));
        assert_eq!(s.round, 0);
    }

    #[test]
    fn single_vehicle_single_task() {
        let mut cfg = SimConfig::default();
        cfg.sim.vehicles = 1;
        cfg.tasks.truncate(1);
        let s = build_scenario(&cfg, 0).unwrap();
        assert_eq!((s.h(), s.m()), (1, 1));
    }

    #[test]
    fn construction_is_deterministic() {
        let cfg = SimConfig::default();
        assert_eq!(build_scenario(&cfg, 5).unwrap(), build_scenario(&cfg, 5).unwrap());
        assert_ne!(
            build_scenario(&cfg, 5).unwrap().world,
            build_scenario(&cfg, 6).unwrap().world
        );
    }

    #[test]
    fn model_size_is_32_bits_per_parameter() {
        let s = build_scenario(&SimConfig::default(), 0).unwrap();
        for t in &s.tasks {
            assert_eq!(t.z_bits, 32.0 * t.model_dim as f64);
        }
    }

    #[test]
    fn schedule_accessors() {
        let mut s = Schedule::from_assignment(1, &[Some(0), None, Some(1), Some(0)], 2, 4);
        assert_eq!(s.members(0), vec![0, 3]);
        assert_eq!(s.participants(), 3);
        s.set_u(3, 0, 1);
        assert_eq!(s.leader_of(0), Some(3));
        s.set_c(0, 0, 2, 1);
        s.set_c(0, 0, 3, 1);
        assert_eq!(s.subcarrier_count(0, 0), 2);
        assert_eq!(s.task_of(1), None);
    }
}

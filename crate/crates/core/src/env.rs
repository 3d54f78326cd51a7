//! Multi-agent environment: one agent per vehicle, each choosing a task (or
//! none) every round.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{RewardMode, SimConfig};
use crate::fl::{gen_synthetic_task, FlError, FlState, TaskRoundResult, TrainParams};
use crate::game::training_efficiency;
use crate::ledger::{account_round, validate_schedule, ConstraintReport, LedgerError, RoundAccounting};
use crate::mobility::MobilityTrace;
use crate::radio::tx_rate;
use crate::compute::comp_cost;
use crate::rng::{stream, substream, SimRng, Stream};
use crate::scenario::{build_scenario, build_scenario_with_trace, Scenario, ScenarioError, Schedule};
use crate::scheduler::{select_leaders, SchedulerError, SchedulingContext};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode is done; reset the environment first")]
    Done,
    #[error("vehicle {vehicle} chose action {action}, but only 0..={max} exist")]
    ActionOutOfRange { vehicle: usize, action: usize, max: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

/// Action `0` sits the round out, action `m > 0` joins task `m - 1`.
pub fn decode_actions(actions: &[usize], m: usize, n: usize, k: usize) -> Result<Schedule, EnvError> {
    let mut s = Schedule::empty(k, actions.len(), m, n);
    for (h, &a) in actions.iter().enumerate() {
        if a > m {
            return Err(EnvError::ActionOutOfRange {
                vehicle: h,
                action: a,
                max: m,
            });
        }
        if a > 0 {
            s.set_alpha(h, a - 1, 1);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    KMax,
    AllTasksConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Round index the step attempted (1-based).
    pub k: usize,
    pub schedule: Schedule,
    pub report: ConstraintReport,
    pub accounting: RoundAccounting,
    pub feasible: bool,
    /// The round was rejected and the environment reset.
    pub reset: bool,
    /// Global loss per task after the round, `None` for tasks that did not train.
    pub losses: Vec<Option<f64>>,
    /// Training outcome of every task that ran this round.
    pub results: Vec<TaskRoundResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
    pub info: StepInfo,
}

/// One line of the episode JSONL log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub round: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub feasible: bool,
    #[serde(rename = "T_k")]
    pub t_k: f64,
    pub losses: Vec<Option<f64>>,
}

impl EpisodeRecord {
    pub fn new(actions: &[usize], out: &StepOutcome) -> Self {
        Self {
            round: out.info.k,
            actions: actions.to_vec(),
            rewards: out.rewards.clone(),
            feasible: out.info.feasible,
            t_k: if out.info.feasible { out.info.accounting.t_k } else { 0.0 },
            losses: out.info.losses.clone(),
        }
    }
}

/// Per-vehicle action for a schedule: `1 + task`, or 0.
pub fn encode_actions(schedule: &Schedule) -> Vec<usize> {
    (0..schedule.h)
        .map(|h| schedule.task_of(h).map_or(0, |m| m + 1))
        .collect()
}

#[derive(Debug, Clone)]
pub struct MmflEnv {
    pub scenario: Scenario,
    pub fl: FlState,
    /// Rounds completed since the last reset.
    pub round: usize,
    /// Steps taken since construction; never reset.
    pub steps: usize,
    pub done: bool,
    last_rate: Vec<f64>,
    previous: Vec<Vec<bool>>,
    mobility_rng: SimRng,
    sgd_rng: SimRng,
}

impl MmflEnv {
    pub fn new(config: &SimConfig, seed: u64) -> Result<Self, EnvError> {
        Self::from_scenario(build_scenario(config, seed)?)
    }

    pub fn with_trace(config: &SimConfig, seed: u64, trace: MobilityTrace) -> Result<Self, EnvError> {
        Self::from_scenario(build_scenario_with_trace(config, seed, trace)?)
    }

    pub fn from_scenario(scenario: Scenario) -> Result<Self, EnvError> {
        let seed = scenario.seed;
        let cfg = &scenario.config;
        let mut tasks = Vec::with_capacity(scenario.m());
        let mut params = Vec::with_capacity(scenario.m());
        for (m, section) in cfg.tasks.iter().enumerate() {
            let mut rng = substream(seed, Stream::Data, m as u64);
            tasks.push(gen_synthetic_task(section, m, &scenario.tasks[m].dataset_sizes, &mut rng)?);
            params.push(TrainParams {
                eta0: section.learning_rate.eta0,
                eta_decay: section.learning_rate.decay,
                batch: section.batch_size,
                iters: cfg.compute.local_iters,
            });
        }
        let (h, m) = (scenario.h(), scenario.m());
        Ok(Self {
            fl: FlState::new(tasks, params),
            round: 0,
            steps: 0,
            done: false,
            last_rate: vec![0.0; h],
            previous: vec![vec![false; m]; h],
            mobility_rng: substream(seed, Stream::Mobility, 1),
            sgd_rng: stream(seed, Stream::Sgd),
            scenario,
        })
    }

    pub fn agents(&self) -> usize {
        self.scenario.h()
    }

    pub fn tasks(&self) -> usize {
        self.scenario.m()
    }

    /// Per-agent action count (`M + 1`).
    pub fn action_dim(&self) -> usize {
        self.tasks() + 1
    }

    pub fn obs_dim(&self) -> usize {
        self.tasks() + 5
    }

    pub fn state_dim(&self) -> usize {
        self.agents() * self.obs_dim() + 1
    }

    pub fn config(&self) -> &SimConfig {
        &self.scenario.config
    }

    /// Clears energy, recency, models and the round counter. Vehicles keep
    /// their current positions.
    pub fn reset(&mut self) {
        let e_init = self.scenario.config.sim.e_init;
        for v in self.scenario.vehicles.iter_mut() {
            v.e_res = e_init;
            v.rho.iter_mut().for_each(|r| *r = 0);
        }
        self.fl.reset();
        self.round = 0;
        self.scenario.round = 0;
        self.done = false;
        self.last_rate.iter_mut().for_each(|r| *r = 0.0);
        self.previous.iter_mut().flatten().for_each(|p| *p = false);
    }

    /// Normalized local observation of vehicle `h`: recency per task,
    /// residual energy, last uplink rate, position and speed.
    pub fn observe(&self, h: usize) -> Vec<f64> {
        let cfg = &self.scenario.config;
        let v = &self.scenario.vehicles[h];
        let k = self.round.max(1) as f64;
        let link = &self.scenario.link;
        let rate_scale = link.w_hz * link.max_spectral_efficiency();
        let pos = self.scenario.world.positions[h];
        let mut o: Vec<f64> = v.rho.iter().map(|&r| r as f64 / k).collect();
        o.push(v.e_res / cfg.sim.e_init);
        o.push(self.last_rate[h] / rate_scale);
        o.push(pos.x / cfg.sim.mobility.map_width_m);
        o.push(pos.y / cfg.sim.mobility.map_height_m);
        o.push(self.scenario.world.speeds[h] / cfg.sim.mobility.v_max);
        o
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.agents()).map(|h| self.observe(h)).collect()
    }

    /// Every agent's observation followed by the episode progress.
    pub fn global_state(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.observations().concat();
        s.push(self.round as f64 / self.scenario.config.sim.max_rounds as f64);
        s
    }

    /// Vehicles whose worst-case round energy fits their residual energy for
    /// every task: computation plus three transfers per source at the
    /// one-subcarrier rate over the longest link.
    pub fn era_eligible(&self) -> Vec<bool> {
        let s = &self.scenario;
        let link = &s.link;
        let r_min = tx_rate(1.0 / link.subcarriers as f64, link, link.xi * link.d_u.max(1.0) + 1.0);
        let others = s.h().saturating_sub(1) as f64;
        (0..s.h())
            .map(|h| {
                s.tasks.iter().all(|t| {
                    let (_, e_c) = comp_cost(t.dataset_bits(h), &s.compute);
                    let e_u = others * link.p_watt * t.z_bits / r_min;
                    e_c + 3.0 * e_u <= s.vehicles[h].e_res
                })
            })
            .collect()
    }

    fn next_k(&self) -> usize {
        self.round + 1
    }

    /// Completes a task assignment into a full schedule with leader
    /// selection and subcarrier allocation.
    pub fn complete_schedule(&self, alpha: &Schedule) -> Result<Schedule, EnvError> {
        let s = &self.scenario;
        let rho: Vec<Vec<usize>> = s.vehicles.iter().map(|v| v.rho.clone()).collect();
        let z = s.z_bits();
        let ctx = SchedulingContext {
            k: alpha.k,
            positions: s.positions(),
            rho: &rho,
            link: &s.link,
            z_bits: &z,
            eps_weight: s.config.game.eps_weight,
            t_round: s.config.sim.t_round,
            candidate_pool: s.config.game.candidate_pool,
            previous: Some(&self.previous),
        };
        Ok(select_leaders(alpha, &ctx)?.schedule)
    }

    /// Steps with one action per agent.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::Done);
        }
        if actions.len() != self.agents() {
            return Err(EnvError::ActionCount {
                expected: self.agents(),
                got: actions.len(),
            });
        }
        let alpha = decode_actions(actions, self.tasks(), self.scenario.n(), self.next_k())?;
        let schedule = self.complete_schedule(&alpha)?;
        self.step_schedule(schedule)
    }

    /// Steps with a complete schedule, which is validated as given.
    pub fn step_schedule(&mut self, mut schedule: Schedule) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::Done);
        }
        let k = self.next_k();
        schedule.k = k;
        let s = &self.scenario;
        let (h_count, m_count) = (s.h(), s.m());
        if schedule.h != h_count || schedule.m != m_count || schedule.n != s.n() {
            return Err(EnvError::Ledger(LedgerError::DimensionMismatch(format!(
                "schedule is {}x{}x{}, environment is {h_count}x{m_count}x{}",
                schedule.h,
                schedule.m,
                schedule.n,
                s.n()
            ))));
        }
        let accounting = account_round(&schedule, s.positions(), &s.tasks, &s.link, &s.compute);
        let e_res: Vec<f64> = s.vehicles.iter().map(|v| v.e_res).collect();
        let rho: Vec<Vec<usize>> = s.vehicles.iter().map(|v| v.rho.clone()).collect();
        let report = validate_schedule(
            &schedule,
            &accounting,
            &e_res,
            &rho,
            s.config.sim.t_round,
            s.config.game.h0_mode,
        )?;
        let feasible = report.feasible();

        let mut rewards = vec![0.0; h_count];
        let mut losses = vec![None; m_count];
        let mut done_reason = None;
        let mut results = Vec::new();
        if feasible {
            results = self.fl.run_round(&schedule, &mut self.sgd_rng);
            for r in &results {
                losses[r.task] = Some(r.global_loss);
            }
            let cfg = &self.scenario.config;
            let psi: Vec<f64> = (0..m_count)
                .map(|m| {
                    let n = schedule.members(m).len();
                    let t = &self.scenario.tasks[m];
                    if n == 0 {
                        0.0
                    } else {
                        training_efficiency(n, t.beta, t.theta).expect("n >= 1")
                    }
                })
                .collect();
            for h in 0..h_count {
                let v = &mut self.scenario.vehicles[h];
                self.last_rate[h] = 0.0;
                for m in 0..m_count {
                    self.previous[h][m] = schedule.alpha(h, m) != 0;
                }
                let Some(m) = schedule.task_of(h) else { continue };
                v.e_res -= accounting.energy[h];
                v.rho[m] = k;
                let recency = match cfg.rl.reward_mode {
                    RewardMode::Literal => k as f64,
                    RewardMode::Normalized => 1.0,
                };
                rewards[h] = psi[m] * recency;
                let t_u = accounting.vehicles[h].t_u;
                if schedule.u(h, m) == 0 && t_u.is_finite() && t_u > 0.0 {
                    self.last_rate[h] = self.scenario.tasks[m].z_bits / t_u;
                }
            }
            self.round = k;
            self.scenario.round = k;
            if k >= cfg.sim.max_rounds {
                done_reason = Some(DoneReason::KMax);
            } else if self.all_converged() {
                done_reason = Some(DoneReason::AllTasksConverged);
            }
        } else {
            let penalty = self.scenario.config.rl.penalty;
            rewards.iter_mut().for_each(|r| *r = penalty);
            self.reset();
        }
        self.done = done_reason.is_some();
        self.scenario.world.advance(&mut self.mobility_rng);
        let positions = self.scenario.world.positions.clone();
        for (v, p) in self.scenario.vehicles.iter_mut().zip(positions) {
            v.position = p;
        }
        for (v, sp) in self.scenario.vehicles.iter_mut().zip(self.scenario.world.speeds.clone()) {
            v.speed = sp;
        }
        self.steps += 1;
        Ok(StepOutcome {
            observations: self.observations(),
            rewards,
            done: self.done,
            done_reason,
            info: StepInfo {
                k,
                schedule,
                report,
                accounting,
                feasible,
                reset: !feasible,
                losses,
                results,
            },
        })
    }

    /// A task has converged once its loss improved by less than the
    /// configured tolerance over the last window of trained rounds.
    pub fn task_converged(&self, m: usize) -> bool {
        let rl = &self.scenario.config.rl;
        let hist = &self.fl.loss_history[m];
        let w = rl.converge_window;
        hist.len() > w && hist[hist.len() - 1 - w] - hist[hist.len() - 1] < rl.converge_tol
    }

    fn all_converged(&self) -> bool {
        (0..self.tasks()).all(|m| self.task_converged(m))
    }
}

/// Per-step policy used to roll out baselines.
pub fn era_actions(env: &MmflEnv, rng: &mut SimRng) -> Result<Schedule, EnvError> {
    let s = &env.scenario;
    Ok(crate::scheduler::era_schedule(env.round + 1, &env.era_eligible(), s.m(), s.n(), rng))
}

//! Experiment orchestration: runs a pipeline per seed and writes CSV/JSON
//! artifacts. Every file depends only on the configuration and the seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, SimConfig, TaskFamily};
use crate::convergence::{verify_setup, ConvergenceError, ConvergenceSetup, MIN_STOCHASTIC_REPLICATES};
use crate::env::{encode_actions, EnvError, EpisodeRecord, MmflEnv, StepOutcome};
use crate::fl::final_average_loss;
use crate::game::{best_response_dynamics, potential, GameEnv, GameError, NeOutcome, StrategyProfile};
use crate::ledger::{metrics_rows, MetricsRow};
use crate::marl::{curve_csv, happo_train, joint_ppo_train, Checkpoint, CurveRow, MarlError, TrainerConfig};
use crate::mobility::{MobilityTrace, TraceError};
use crate::rng::{substream, SimRng, Stream};
use crate::scheduler::{era_schedule, SchedulerKind};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Marl(#[from] MarlError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Convergence(#[from] ConvergenceError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing input: {0}")]
    MissingInputs(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Train,
    Evaluate,
    Nash,
    VerifyBounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub config: SimConfig,
    pub mode: Mode,
    pub scheduler: SchedulerKind,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub trace: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.config.validate()?;
        if self.seeds.is_empty() {
            return Err(HarnessError::InvalidPlan("at least one seed is required".into()));
        }
        let learned = matches!(self.scheduler, SchedulerKind::Happo | SchedulerKind::JointPpo);
        if self.mode == Mode::Train && !learned {
            return Err(HarnessError::InvalidPlan(format!(
                "train needs a learned scheduler, not {}",
                self.scheduler
            )));
        }
        if self.mode == Mode::Evaluate && learned && self.policy.is_none() {
            return Err(HarnessError::MissingInputs("evaluate with a learned scheduler needs --policy".into()));
        }
        Ok(())
    }
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// One executed environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub actions: Vec<usize>,
    pub outcome: StepOutcome,
    pub ne: Option<NeOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub round: usize,
    pub task: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub round: usize,
    #[serde(rename = "T_k")]
    pub t_k: f64,
    pub energy_total: f64,
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeSummary {
    pub rounds: usize,
    pub verified_rounds: usize,
    pub unverifiable_rounds: usize,
    pub total_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub steps: usize,
    pub feasible_fraction: f64,
    /// Mean team reward per step.
    pub mean_return: f64,
    /// Largest round duration among executed rounds.
    #[serde(rename = "T_max")]
    pub t_max: f64,
    pub total_energy: f64,
    /// Mean local loss of the last round's participants, per task.
    pub final_loss: Vec<Option<f64>>,
    /// Average of `final_loss` over tasks, when every task trained.
    pub final_average_loss: Option<f64>,
    pub ne: Option<NeSummary>,
    pub verification: Option<serde_json::Value>,
    pub training: Option<Vec<CurveRow>>,
}

/// A finished simulation kept in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
}

impl SimulationRun {
    pub fn executed(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(|s| s.outcome.info.feasible)
    }

    pub fn t_max(&self) -> f64 {
        self.executed().map(|s| s.outcome.info.accounting.t_k).fold(0.0, f64::max)
    }

    pub fn total_energy(&self) -> f64 {
        self.executed().map(|s| s.outcome.info.accounting.energy_total()).sum()
    }

    pub fn feasible_fraction(&self) -> f64 {
        self.executed().count() as f64 / self.steps.len().max(1) as f64
    }

    pub fn mean_return(&self) -> f64 {
        let total: f64 = self.steps.iter().flat_map(|s| &s.outcome.rewards).sum();
        total / self.steps.len().max(1) as f64
    }

    pub fn metrics(&self) -> Vec<MetricsRow> {
        self.steps
            .iter()
            .flat_map(|s| metrics_rows(&s.outcome.info.schedule, &s.outcome.info.accounting, &s.outcome.info.report))
            .collect()
    }

    pub fn losses(&self) -> Vec<LossRow> {
        self.executed()
            .flat_map(|s| {
                s.outcome.info.results.iter().map(|r| LossRow {
                    round: s.outcome.info.k,
                    task: r.task,
                    loss: r.global_loss,
                })
            })
            .collect()
    }

    pub fn plot_rows(&self) -> Vec<PlotRow> {
        self.executed()
            .map(|s| {
                let info = &s.outcome.info;
                let trained: Vec<f64> = info.losses.iter().flatten().copied().collect();
                PlotRow {
                    round: info.k,
                    t_k: info.accounting.t_k,
                    energy_total: info.accounting.energy_total(),
                    mean_loss: (!trained.is_empty()).then(|| trained.iter().sum::<f64>() / trained.len() as f64),
                }
            })
            .collect()
    }

    pub fn episode_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let rec = EpisodeRecord::new(&s.actions, &s.outcome);
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Per task, the mean local loss of its participants in the last round
    /// it trained.
    pub fn final_losses(&self, tasks: usize) -> Vec<Option<f64>> {
        let mut last = vec![None; tasks];
        for s in self.executed() {
            for r in &s.outcome.info.results {
                last[r.task] = Some(r.participant_losses.clone());
            }
        }
        last.into_iter()
            .map(|l| l.and_then(|l| final_average_loss(&[l]).ok()))
            .collect()
    }

    pub fn ne_summary(&self) -> Option<NeSummary> {
        let ne: Vec<&NeOutcome> = self.steps.iter().filter_map(|s| s.ne.as_ref()).collect();
        (!ne.is_empty()).then(|| NeSummary {
            rounds: ne.len(),
            verified_rounds: ne.iter().filter(|n| n.verified == Some(true)).count(),
            unverifiable_rounds: ne.iter().filter(|n| n.verified.is_none()).count(),
            total_iterations: ne.iter().map(|n| n.iterations).sum(),
        })
    }

    pub fn summary(&self, mode: Mode, tasks: usize) -> Summary {
        let final_loss = self.final_losses(tasks);
        let all: Option<Vec<f64>> = final_loss.iter().copied().collect();
        Summary {
            mode,
            scheduler: self.scheduler,
            seed: self.seed,
            steps: self.steps.len(),
            feasible_fraction: self.feasible_fraction(),
            mean_return: self.mean_return(),
            t_max: self.t_max(),
            total_energy: self.total_energy(),
            final_average_loss: all.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64),
            final_loss,
            ne: self.ne_summary(),
            verification: None,
            training: None,
        }
    }
}

/// Builds the environment for a plan cell.
pub fn make_env(config: &SimConfig, seed: u64, trace: Option<&Path>) -> Result<MmflEnv, HarnessError> {
    Ok(match trace {
        Some(p) => MmflEnv::with_trace(config, seed, MobilityTrace::load(p)?)?,
        None => MmflEnv::new(config, seed)?,
    })
}

/// The ERA assignment for the environment's next round as a game profile.
pub fn era_profile(env: &MmflEnv, rng: &mut SimRng) -> StrategyProfile {
    let s = era_schedule(env.round + 1, &env.era_eligible(), env.tasks(), env.scenario.n(), rng);
    StrategyProfile::from_assignment(&s.assignment(), env.tasks())
}

/// Best-response equilibrium for the environment's next round, started from
/// the ERA profile.
pub fn nash_for_round(env: &MmflEnv, rng: &mut SimRng) -> Result<(NeOutcome, f64), HarnessError> {
    let game = GameEnv::from_scenario(&env.scenario, env.round + 1);
    let start = era_profile(env, rng);
    let era_omega = potential(&start, &game);
    let ne = best_response_dynamics(&start, &game, env.config().game.max_iters)?;
    Ok((ne, era_omega))
}

/// Runs up to `steps` rounds with the chosen scheduler, stopping early when
/// the episode ends.
pub fn run_simulation(
    env: &mut MmflEnv,
    scheduler: SchedulerKind,
    policy: Option<&Checkpoint>,
    seed: u64,
    steps: usize,
) -> Result<SimulationRun, HarnessError> {
    let mut sched_rng = substream(seed, Stream::Env, 0);
    let mut policy_rng = substream(seed, Stream::Policy, 1 << 22);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        if env.done {
            break;
        }
        let (actions, outcome, ne) = match scheduler {
            SchedulerKind::Era => {
                let s = era_schedule(env.round + 1, &env.era_eligible(), env.tasks(), env.scenario.n(), &mut sched_rng);
                let actions = encode_actions(&s);
                (actions, env.step_schedule(s)?, None)
            }
            SchedulerKind::BestResponse => {
                let (ne, _) = nash_for_round(env, &mut sched_rng)?;
                let actions = encode_actions(&crate::scenario::Schedule::from_assignment(
                    env.round + 1,
                    &ne.profile.assignment(),
                    env.tasks(),
                    env.scenario.n(),
                ));
                (actions.clone(), env.step(&actions)?, Some(ne))
            }
            SchedulerKind::Happo | SchedulerKind::JointPpo => {
                let p = policy.ok_or_else(|| HarnessError::MissingInputs("a trained policy".into()))?;
                let actions = p.act(env, &mut policy_rng)?;
                (actions.clone(), env.step(&actions)?, None)
            }
        };
        out.push(StepRecord { actions, outcome, ne });
    }
    Ok(SimulationRun {
        scheduler,
        seed,
        steps: out,
    })
}

/// Mean team reward per step and feasible fraction of ERA over the same
/// episode layout a trainer sees: `episodes` blocks of `steps` steps, each
/// starting from a reset.
pub fn era_curve(env: &mut MmflEnv, episodes: usize, steps: usize, seed: u64) -> Result<Vec<CurveRow>, HarnessError> {
    let mut rng = substream(seed, Stream::Env, 0);
    let mut rows = Vec::with_capacity(episodes);
    for e in 0..episodes {
        env.reset();
        let (mut total, mut feasible) = (0.0, 0usize);
        for _ in 0..steps {
            let s = era_schedule(env.round + 1, &env.era_eligible(), env.tasks(), env.scenario.n(), &mut rng);
            let out = env.step_schedule(s)?;
            total += out.rewards.iter().sum::<f64>();
            feasible += out.info.feasible as usize;
            if out.done {
                env.reset();
            }
        }
        rows.push(CurveRow {
            episode: e,
            mean_return: total / steps as f64,
            feasible_fraction: feasible as f64 / steps as f64,
        });
    }
    Ok(rows)
}

fn train(plan: &ExperimentPlan, seed: u64) -> Result<(Checkpoint, Vec<CurveRow>), HarnessError> {
    let mut env = make_env(&plan.config, seed, plan.trace.as_deref())?;
    let cfg = TrainerConfig::from_rl(&plan.config.rl);
    let out = match plan.scheduler {
        SchedulerKind::JointPpo => joint_ppo_train(&mut env, &cfg, seed)?,
        _ => happo_train(&mut env, &cfg, seed)?,
    };
    Ok((out.checkpoint, out.curve))
}

fn load_policy(path: &Path) -> Result<Checkpoint, HarnessError> {
    Ok(Checkpoint::from_json(&read(path)?)?)
}

fn write_simulation(dir: &Path, run: &SimulationRun, summary: &Summary) -> Result<(), HarnessError> {
    write(&dir.join("metrics.csv"), &to_csv(&run.metrics()))?;
    write(&dir.join("losses.csv"), &to_csv(&run.losses()))?;
    write(&dir.join("plot_data.csv"), &to_csv(&run.plot_rows()))?;
    write(&dir.join("episode.jsonl"), &run.episode_jsonl())?;
    write_summary(dir, summary)
}

fn write_summary(dir: &Path, summary: &Summary) -> Result<(), HarnessError> {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    write(&dir.join("summary.json"), &s)
}

/// Quadratic task used for bound verification: the first quadratic task of
/// the configuration, trained by every vehicle with full participation.
fn verification_setup(plan: &ExperimentPlan, seed: u64) -> Result<ConvergenceSetup, HarnessError> {
    let env = make_env(&plan.config, seed, plan.trace.as_deref())?;
    let m = plan
        .config
        .tasks
        .iter()
        .position(|t| t.family == TaskFamily::Quadratic)
        .ok_or_else(|| HarnessError::MissingInputs("a quadratic task to verify bounds on".into()))?;
    let params = env.fl.params[m];
    let rounds = plan.config.sim.max_rounds;
    Ok(ConvergenceSetup {
        task: env.fl.tasks[m].clone(),
        participants: (0..env.agents()).collect(),
        eta: (1..=rounds).map(|k| params.eta(k)).collect(),
        batch: params.batch,
        local_iters: params.iters,
        rounds,
    })
}

/// Runs one plan cell and writes its artifacts into `dir`.
pub fn run_cell(plan: &ExperimentPlan, seed: u64, dir: &Path) -> Result<Summary, HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let tasks = plan.config.tasks_len();
    let steps = plan.config.sim.max_rounds;
    match plan.mode {
        Mode::Simulate | Mode::Evaluate => {
            let (policy, training) = match (plan.scheduler, &plan.policy) {
                (SchedulerKind::Era | SchedulerKind::BestResponse, _) => (None, None),
                (_, Some(p)) => (Some(load_policy(p)?), None),
                (_, None) => {
                    let (c, curve) = train(plan, seed)?;
                    write(&dir.join("checkpoint.json"), &c.to_json())?;
                    (Some(c), Some(curve))
                }
            };
            let mut env = make_env(&plan.config, seed, plan.trace.as_deref())?;
            let run = run_simulation(&mut env, plan.scheduler, policy.as_ref(), seed, steps)?;
            let mut summary = run.summary(plan.mode, tasks);
            summary.training = training;
            write_simulation(dir, &run, &summary)?;
            Ok(summary)
        }
        Mode::Train => {
            let (c, curve) = train(plan, seed)?;
            write(&dir.join("checkpoint.json"), &c.to_json())?;
            write(&dir.join("curve.csv"), &curve_csv(&curve))?;
            let tail = &curve[curve.len().saturating_sub(10)..];
            let n = tail.len().max(1) as f64;
            let summary = Summary {
                mode: plan.mode,
                scheduler: plan.scheduler,
                seed,
                steps: curve.len() * plan.config.rl.steps_per_episode,
                feasible_fraction: tail.iter().map(|r| r.feasible_fraction).sum::<f64>() / n,
                mean_return: tail.iter().map(|r| r.mean_return).sum::<f64>() / n,
                t_max: 0.0,
                total_energy: 0.0,
                final_loss: vec![None; tasks],
                final_average_loss: None,
                ne: None,
                verification: None,
                training: Some(curve),
            };
            write_summary(dir, &summary)?;
            Ok(summary)
        }
        Mode::Nash => {
            let env = make_env(&plan.config, seed, plan.trace.as_deref())?;
            let mut rng = substream(seed, Stream::Game, 0);
            let (ne, era_omega) = nash_for_round(&env, &mut rng)?;
            let mut report = ne.report_json();
            report["era_omega"] = serde_json::json!(era_omega);
            let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
            s.push('\n');
            write(&dir.join("ne.json"), &s)?;
            let summary = Summary {
                mode: plan.mode,
                scheduler: SchedulerKind::BestResponse,
                seed,
                steps: 0,
                feasible_fraction: if ne.omega_trace.last().copied().unwrap_or(0.0) > 0.0 { 1.0 } else { 0.0 },
                mean_return: 0.0,
                t_max: 0.0,
                total_energy: 0.0,
                final_loss: vec![None; tasks],
                final_average_loss: None,
                ne: Some(NeSummary {
                    rounds: 1,
                    verified_rounds: (ne.verified == Some(true)) as usize,
                    unverifiable_rounds: ne.verified.is_none() as usize,
                    total_iterations: ne.iterations,
                }),
                verification: None,
                training: None,
            };
            write_summary(dir, &summary)?;
            Ok(summary)
        }
        Mode::VerifyBounds => {
            let setup = verification_setup(plan, seed)?;
            let report = verify_setup(&setup, MIN_STOCHASTIC_REPLICATES, seed)?;
            let json = report.to_json();
            let mut s = serde_json::to_string_pretty(&json).expect("report serializes");
            s.push('\n');
            write(&dir.join("verification.json"), &s)?;
            let summary = Summary {
                mode: plan.mode,
                scheduler: plan.scheduler,
                seed,
                steps: setup.rounds,
                feasible_fraction: 1.0,
                mean_return: 0.0,
                t_max: 0.0,
                total_energy: 0.0,
                final_loss: vec![None; tasks],
                final_average_loss: None,
                ne: None,
                verification: Some(json),
                training: None,
            };
            write_summary(dir, &summary)?;
            Ok(summary)
        }
    }
}

/// Runs every seed of the plan. A single seed writes straight into the
/// output directory; several seeds get one `seed-<n>` subdirectory each.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<Summary>, HarnessError> {
    plan.validate()?;
    plan.seeds
        .iter()
        .map(|&seed| {
            let dir = if plan.seeds.len() == 1 {
                plan.out_dir.clone()
            } else {
                plan.out_dir.join(format!("seed-{seed}"))
            };
            log::info!("running {:?} / {} seed {seed} into {}", plan.mode, plan.scheduler, dir.display());
            run_cell(plan, seed, &dir)
        })
        .collect()
}

/// Mean of the largest executed round time under ERA for each relay cost
/// factor, averaged over seeds.
pub fn xi_sweep(config: &SimConfig, xis: &[f64], seeds: &[u64]) -> Result<Vec<f64>, HarnessError> {
    xis.iter()
        .map(|&xi| {
            let mut c = config.clone();
            c.radio.xi = xi;
            let mut total = 0.0;
            for &seed in seeds {
                let mut env = MmflEnv::new(&c, seed)?;
                let run = run_simulation(&mut env, SchedulerKind::Era, None, seed, c.sim.max_rounds)?;
                total += run.t_max();
            }
            Ok(total / seeds.len() as f64)
        })
        .collect()
}

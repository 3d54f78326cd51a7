//! Round timeline, energy bookkeeping and schedule validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compute::{comp_cost, ComputeProfile};
use crate::config::LeaderRecencyMode;
use crate::mobility::Position;
use crate::radio::{sov_cost, LinkBudget, RadioError};
use crate::scenario::{Schedule, TaskSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerError {
    #[error("task {0} has an empty cluster")]
    EmptyCluster(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Per-vehicle cost components for one round.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleCost {
    pub t_u: f64,
    pub e_u: f64,
    pub t_c: f64,
    pub e_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAccounting {
    pub k: usize,
    pub vehicles: Vec<VehicleCost>,
    /// Synchronization point per task; `None` for tasks without members.
    pub sync_points: Vec<Option<f64>>,
    pub t_k: f64,
    /// Total energy `E_kh` spent by each vehicle this round.
    pub energy: Vec<f64>,
    /// `(vehicle, task)` links that got no bandwidth. Their time and energy
    /// are recorded as infinite.
    pub dead_links: Vec<(usize, usize)>,
}

impl RoundAccounting {
    pub fn energy_total(&self) -> f64 {
        self.energy.iter().filter(|e| e.is_finite()).sum()
    }

    pub fn task_energy(&self, schedule: &Schedule, m: usize) -> f64 {
        schedule.members(m).iter().map(|&h| self.energy[h]).sum()
    }
}

/// Synchronization point of a task from its members' `(T_C, T_U)`.
pub fn sync_point(m: usize, members: &[(f64, f64)]) -> Result<f64, LedgerError> {
    if members.is_empty() {
        return Err(LedgerError::EmptyCluster(m));
    }
    Ok(members
        .iter()
        .map(|&(t_c, t_u)| t_c + 2.0 * t_u)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Round duration: the latest vehicle finishes its task's sync point plus
/// its broadcast time. Unscheduled vehicles contribute nothing.
pub fn round_time(schedule: &Schedule, sync_points: &[Option<f64>], t_u: &[f64]) -> f64 {
    let mut t = 0.0f64;
    for h in 0..schedule.h {
        let mut sum = 0.0;
        let mut any = false;
        for (m, sp) in sync_points.iter().enumerate() {
            if schedule.alpha(h, m) != 0 {
                sum += sp.unwrap_or(0.0);
                any = true;
            }
        }
        if any {
            t = t.max(sum + t_u[h]);
        }
    }
    t
}

/// Distribution, update and broadcast each cost one `E_U`.
pub fn vehicle_round_energy(e_c: f64, e_u: f64) -> f64 {
    e_c + 3.0 * e_u
}

pub fn residual_energy(e_init: f64, history: &[f64]) -> f64 {
    e_init - history.iter().sum::<f64>()
}

/// Computes every time and energy component of a round.
pub fn account_round(
    schedule: &Schedule,
    positions: &[Position],
    tasks: &[TaskSpec],
    link: &LinkBudget,
    compute: &ComputeProfile,
) -> RoundAccounting {
    let z: Vec<f64> = tasks.iter().map(|t| t.z_bits).collect();
    let mut vehicles = vec![VehicleCost::default(); schedule.h];
    let mut dead_links = Vec::new();

    // Source vehicles first; leaders aggregate over them.
    for h in 0..schedule.h {
        let Some(m) = (0..schedule.m).find(|&m| schedule.alpha(h, m) != 0) else {
            continue;
        };
        let (t_c, e_c) = comp_cost(tasks[m].dataset_bits(h), compute);
        vehicles[h].t_c = t_c;
        vehicles[h].e_c = e_c;
        if schedule.u(h, m) != 0 {
            continue;
        }
        let single = single_task_view(schedule, h, m);
        match sov_cost(single.as_ref().unwrap_or(schedule), h, positions, &z, link) {
            Ok((t, e)) => {
                vehicles[h].t_u = t;
                vehicles[h].e_u = e;
            }
            Err(RadioError::RateZero { .. }) | Err(RadioError::NotALeader(_)) => {
                vehicles[h].t_u = f64::INFINITY;
                vehicles[h].e_u = f64::INFINITY;
                dead_links.push((h, m));
            }
        }
    }
    for m in 0..schedule.m {
        for r in (0..schedule.h).filter(|&r| schedule.u(r, m) != 0 && schedule.alpha(r, m) != 0) {
            let mut t = 0.0f64;
            let mut e = 0.0;
            for s in schedule.members(m) {
                if s != r && schedule.u(s, m) == 0 {
                    t = t.max(vehicles[s].t_u);
                    e += vehicles[s].e_u;
                }
            }
            vehicles[r].t_u = t;
            vehicles[r].e_u = e;
        }
    }

    let sync_points: Vec<Option<f64>> = (0..schedule.m)
        .map(|m| {
            let members: Vec<(f64, f64)> = schedule
                .members(m)
                .iter()
                .map(|&h| (vehicles[h].t_c, vehicles[h].t_u))
                .collect();
            sync_point(m, &members).ok()
        })
        .collect();
    let t_u: Vec<f64> = vehicles.iter().map(|v| v.t_u).collect();
    let t_k = round_time(schedule, &sync_points, &t_u);
    let energy = vehicles
        .iter()
        .map(|v| vehicle_round_energy(v.e_c, v.e_u))
        .collect();
    RoundAccounting {
        k: schedule.k,
        vehicles,
        sync_points,
        t_k,
        energy,
        dead_links,
    }
}

/// A vehicle assigned to several tasks is costed on its first one; this
/// returns a copy of the schedule where `h` only belongs to `m`.
fn single_task_view(schedule: &Schedule, h: usize, m: usize) -> Option<Schedule> {
    if schedule.task_of(h).is_some() {
        return None;
    }
    let mut s = schedule.clone();
    for other in 0..s.m {
        if other != m {
            s.set_alpha(h, other, 0);
        }
    }
    Some(s)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub passed: bool,
    /// Index tuples of the offending entries (vehicle, task, subcarrier, ...).
    pub offenders: Vec<Vec<usize>>,
}

impl ConstraintCheck {
    fn from_offenders(offenders: Vec<Vec<usize>>) -> Self {
        Self {
            passed: offenders.is_empty(),
            offenders,
        }
    }
}

/// Outcome of every scheduling constraint for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Round deadline, offenders `[vehicle]`.
    pub b0: ConstraintCheck,
    /// Energy budget, offenders `[vehicle]`.
    pub c0: ConstraintCheck,
    /// At most one task per vehicle, offenders `[vehicle]`.
    pub d0: ConstraintCheck,
    /// Leaders are members, offenders `[vehicle, task]`.
    pub e0: ConstraintCheck,
    /// One leader per non-empty task, offenders `[task]`.
    pub f0: ConstraintCheck,
    /// Subcarrier orthogonality, offenders `[task, subcarrier]` for reuse
    /// and `[task, vehicle, subcarrier]` for grants to non-sources.
    pub g0: ConstraintCheck,
    /// Leader has the highest recency in its cluster, offenders `[task]`.
    pub h0: ConstraintCheck,
    /// Binary entries, offenders `[tensor (0 alpha, 1 u, 2 c), flat index]`.
    pub i0: ConstraintCheck,
    pub h0_mode: LeaderRecencyMode,
}

impl ConstraintReport {
    pub fn checks(&self) -> [(&'static str, &ConstraintCheck); 8] {
        [
            ("b0", &self.b0),
            ("c0", &self.c0),
            ("d0", &self.d0),
            ("e0", &self.e0),
            ("f0", &self.f0),
            ("g0", &self.g0),
            ("h0", &self.h0),
            ("i0", &self.i0),
        ]
    }

    /// The structural constraints every emitted schedule must satisfy.
    pub fn structural_ok(&self) -> bool {
        self.d0.passed && self.e0.passed && self.f0.passed && self.g0.passed && self.i0.passed
    }

    pub fn feasible(&self) -> bool {
        self.b0.passed
            && self.c0.passed
            && self.structural_ok()
            && (self.h0_mode == LeaderRecencyMode::Advisory || self.h0.passed)
    }

    /// Number of constraints that failed, advisory ones included.
    pub fn violations(&self) -> usize {
        self.checks().iter().filter(|(_, c)| !c.passed).count()
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.checks()
            .iter()
            .filter(|(_, c)| !c.passed)
            .map(|(n, _)| *n)
            .collect()
    }
}

/// Checks a schedule and its accounting against every constraint.
///
/// `e_res` is the energy each vehicle holds before the round and `rho` the
/// recency table (`rho[h][m]`) before the round.
pub fn validate_schedule(
    schedule: &Schedule,
    accounting: &RoundAccounting,
    e_res: &[f64],
    rho: &[Vec<usize>],
    t_round: f64,
    h0_mode: LeaderRecencyMode,
) -> Result<ConstraintReport, LedgerError> {
    let (h, m, n) = (schedule.h, schedule.m, schedule.n);
    let dims_ok = schedule.alpha.len() == h * m
        && schedule.u.len() == h * m
        && schedule.c.len() == m * h * n
        && accounting.vehicles.len() == h
        && accounting.energy.len() == h
        && accounting.sync_points.len() == m
        && e_res.len() == h
        && rho.len() == h
        && rho.iter().all(|r| r.len() == m);
    if !dims_ok {
        return Err(LedgerError::DimensionMismatch(format!(
            "schedule is {h}x{m}x{n}; accounting, energy or recency tables disagree"
        )));
    }

    let assigned = |v: usize| (0..m).any(|t| schedule.alpha(v, t) != 0);

    let mut b0 = Vec::new();
    for v in 0..h {
        if !assigned(v) {
            continue;
        }
        let total: f64 = (0..m)
            .filter(|&t| schedule.alpha(v, t) != 0)
            .map(|t| accounting.sync_points[t].unwrap_or(0.0))
            .sum::<f64>()
            + accounting.vehicles[v].t_u;
        if !(total <= t_round) {
            b0.push(vec![v]);
        }
    }

    let c0 = (0..h)
        .filter(|&v| assigned(v) && !(accounting.energy[v] <= e_res[v]))
        .map(|v| vec![v])
        .collect();

    let d0 = (0..h)
        .filter(|&v| (0..m).filter(|&t| schedule.alpha(v, t) != 0).count() > 1)
        .map(|v| vec![v])
        .collect();

    let mut e0 = Vec::new();
    for v in 0..h {
        for t in 0..m {
            if schedule.u(v, t) > schedule.alpha(v, t) {
                e0.push(vec![v, t]);
            }
        }
    }

    let mut f0 = Vec::new();
    for t in 0..m {
        let members = schedule.members(t);
        if members.is_empty() {
            continue;
        }
        let leaders = members.iter().filter(|&&v| schedule.u(v, t) != 0).count();
        if leaders != 1 {
            f0.push(vec![t]);
        }
    }

    let mut g0 = Vec::new();
    for sub in 0..n {
        let holders: Vec<(usize, usize)> = (0..m)
            .flat_map(|t| (0..h).map(move |v| (t, v)))
            .filter(|&(t, v)| schedule.c(t, v, sub) != 0)
            .collect();
        if holders.len() > 1 {
            let mut tasks: Vec<usize> = holders.iter().map(|&(t, _)| t).collect();
            tasks.dedup();
            for t in tasks {
                g0.push(vec![t, sub]);
            }
        }
        for &(t, v) in &holders {
            if schedule.alpha(v, t) == 0 || schedule.u(v, t) != 0 {
                g0.push(vec![t, v, sub]);
            }
        }
    }

    let mut h0 = Vec::new();
    for t in 0..m {
        let members = schedule.members(t);
        let Some(leader) = members.iter().copied().find(|&v| schedule.u(v, t) != 0) else {
            continue;
        };
        let best = members.iter().map(|&v| rho[v][t]).max().unwrap_or(0);
        if rho[leader][t] < best {
            h0.push(vec![t]);
        }
    }

    let mut i0 = Vec::new();
    for (tensor, data) in [&schedule.alpha, &schedule.u, &schedule.c].iter().enumerate() {
        for (i, &x) in data.iter().enumerate() {
            if x > 1 {
                i0.push(vec![tensor, i]);
            }
        }
    }

    Ok(ConstraintReport {
        b0: ConstraintCheck::from_offenders(b0),
        c0: ConstraintCheck::from_offenders(c0),
        d0: ConstraintCheck::from_offenders(d0),
        e0: ConstraintCheck::from_offenders(e0),
        f0: ConstraintCheck::from_offenders(f0),
        g0: ConstraintCheck::from_offenders(g0),
        h0: ConstraintCheck::from_offenders(h0),
        i0: ConstraintCheck::from_offenders(i0),
        h0_mode,
    })
}

/// One row of the per-round metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub task: usize,
    pub participants: usize,
    pub leader_id: Option<usize>,
    #[serde(rename = "T_sync")]
    pub t_sync: f64,
    #[serde(rename = "T_k")]
    pub t_k: f64,
    pub energy_total: f64,
    pub violations: usize,
}

pub fn metrics_rows(
    schedule: &Schedule,
    accounting: &RoundAccounting,
    report: &ConstraintReport,
) -> Vec<MetricsRow> {
    (0..schedule.m)
        .map(|t| MetricsRow {
            round: schedule.k,
            task: t,
            participants: schedule.members(t).len(),
            leader_id: schedule.leader_of(t),
            t_sync: accounting.sync_points[t].unwrap_or(0.0),
            t_k: accounting.t_k,
            energy_total: accounting.task_energy(schedule, t),
            violations: report.violations(),
        })
        .collect()
}

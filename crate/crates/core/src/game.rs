//! Task resource-allocation game.
//!
//! Each task picks a set of vehicles. Its utility is its training efficiency
//! `beta ln n + theta` when the whole profile can be realized by a feasible
//! schedule, and 0 otherwise. The potential is the sum of utilities; with
//! `theta >= 0` every unilateral utility change has the sign of the potential
//! change, so improvement dynamics terminate.

use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compute::ComputeProfile;
use crate::config::{CandidatePool, LeaderRecencyMode};
use crate::ledger::{account_round, validate_schedule};
use crate::mobility::Position;
use crate::radio::LinkBudget;
use crate::scenario::{Scenario, Schedule, TaskSpec};
use crate::scheduler::{select_leaders, SchedulingContext};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("training efficiency needs at least one participant")]
    ZeroParticipants,
    #[error("profiles differ in tasks other than {0}")]
    MultiTaskDeviation(usize),
    #[error("best-response dynamics exceeded {0} iterations")]
    IterationCapExceeded(usize),
    #[error("vehicle {0} appears in more than one task")]
    NotDisjoint(usize),
}

/// `beta ln n + theta`.
pub fn training_efficiency(n: usize, beta: f64, theta: f64) -> Result<f64, GameError> {
    if n == 0 {
        return Err(GameError::ZeroParticipants);
    }
    Ok(beta * (n as f64).ln() + theta)
}

/// Disjoint vehicle sets, one per task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub sets: Vec<Vec<usize>>,
    pub vehicles: usize,
}

impl StrategyProfile {
    pub fn empty(vehicles: usize, tasks: usize) -> Self {
        Self {
            sets: vec![Vec::new(); tasks],
            vehicles,
        }
    }

    pub fn new(vehicles: usize, mut sets: Vec<Vec<usize>>) -> Result<Self, GameError> {
        let mut seen = vec![false; vehicles];
        for s in sets.iter_mut() {
            s.sort_unstable();
            for &h in s.iter() {
                if seen[h] {
                    return Err(GameError::NotDisjoint(h));
                }
                seen[h] = true;
            }
        }
        Ok(Self { sets, vehicles })
    }

    pub fn from_assignment(assignment: &[Option<usize>], tasks: usize) -> Self {
        let mut sets = vec![Vec::new(); tasks];
        for (h, a) in assignment.iter().enumerate() {
            if let Some(m) = a {
                sets[*m].push(h);
            }
        }
        Self {
            sets,
            vehicles: assignment.len(),
        }
    }

    pub fn assignment(&self) -> Vec<Option<usize>> {
        let mut a = vec![None; self.vehicles];
        for (m, s) in self.sets.iter().enumerate() {
            for &h in s {
                a[h] = Some(m);
            }
        }
        a
    }

    /// Vehicles not used by any task.
    pub fn free(&self) -> Vec<usize> {
        let a = self.assignment();
        (0..self.vehicles).filter(|&h| a[h].is_none()).collect()
    }

    /// Copy of the profile with task `m` switched to `set`.
    pub fn with_task(&self, m: usize, mut set: Vec<usize>) -> Self {
        set.sort_unstable();
        let mut p = self.clone();
        p.sets[m] = set;
        p
    }
}

/// Snapshot of the world the game is played in.
#[derive(Debug)]
pub struct GameEnv {
    pub k: usize,
    pub positions: Vec<Position>,
    pub rho: Vec<Vec<usize>>,
    pub e_res: Vec<f64>,
    pub link: LinkBudget,
    pub compute: ComputeProfile,
    pub tasks: Vec<TaskSpec>,
    pub subcarriers: usize,
    pub t_round: f64,
    pub eps_weight: f64,
    pub h0_mode: LeaderRecencyMode,
    pub candidate_pool: CandidatePool,
    cache: RefCell<HashMap<Vec<Option<usize>>, bool>>,
}

impl GameEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        k: usize,
        positions: Vec<Position>,
        rho: Vec<Vec<usize>>,
        e_res: Vec<f64>,
        link: LinkBudget,
        compute: ComputeProfile,
        tasks: Vec<TaskSpec>,
        t_round: f64,
        eps_weight: f64,
    ) -> Self {
        Self {
            k,
            subcarriers: link.subcarriers,
            positions,
            rho,
            e_res,
            link,
            compute,
            tasks,
            t_round,
            eps_weight,
            h0_mode: LeaderRecencyMode::Advisory,
            candidate_pool: CandidatePool::AllMembers,
            cache: RefCell::new(HashMap::new()),
        }
    }

    /// The game for round `k` of a scenario in its current state.
    pub fn from_scenario(s: &Scenario, k: usize) -> Self {
        let mut env = Self::new(
            k,
            s.world.positions.clone(),
            s.vehicles.iter().map(|v| v.rho.clone()).collect(),
            s.vehicles.iter().map(|v| v.e_res).collect(),
            s.link,
            s.compute,
            s.tasks.clone(),
            s.config.sim.t_round,
            s.config.game.eps_weight,
        );
        env.subcarriers = s.n();
        env.h0_mode = s.config.game.h0_mode;
        env.candidate_pool = s.config.game.candidate_pool;
        env
    }

    pub fn vehicles(&self) -> usize {
        self.positions.len()
    }

    pub fn tasks_len(&self) -> usize {
        self.tasks.len()
    }

    /// A feasible schedule realizing the profile, if one is found by leader
    /// selection and passes validation.
    pub fn witness(&self, profile: &StrategyProfile) -> Option<Schedule> {
        let alpha = Schedule::from_assignment(self.k, &profile.assignment(), self.tasks.len(), self.subcarriers);
        let z: Vec<f64> = self.tasks.iter().map(|t| t.z_bits).collect();
        let ctx = SchedulingContext {
            k: self.k,
            positions: &self.positions,
            rho: &self.rho,
            link: &self.link,
            z_bits: &z,
            eps_weight: self.eps_weight,
            t_round: self.t_round,
            candidate_pool: self.candidate_pool,
            previous: None,
        };
        let sel = select_leaders(&alpha, &ctx).ok()?;
        let acc = account_round(&sel.schedule, &self.positions, &self.tasks, &self.link, &self.compute);
        let report = validate_schedule(&sel.schedule, &acc, &self.e_res, &self.rho, self.t_round, self.h0_mode).ok()?;
        report.feasible().then_some(sel.schedule)
    }

    pub fn feasible(&self, profile: &StrategyProfile) -> bool {
        let key = profile.assignment();
        if let Some(&f) = self.cache.borrow().get(&key) {
            return f;
        }
        let f = self.witness(profile).is_some();
        self.cache.borrow_mut().insert(key, f);
        f
    }

    pub fn evaluations(&self) -> usize {
        self.cache.borrow().len()
    }
}

/// Utility of task `m`: its training efficiency when the profile is
/// realizable, else 0. An empty task always has utility 0.
pub fn utility(profile: &StrategyProfile, m: usize, env: &GameEnv) -> f64 {
    let n = profile.sets[m].len();
    if n == 0 || !env.feasible(profile) {
        return 0.0;
    }
    let t = &env.tasks[m];
    training_efficiency(n, t.beta, t.theta).expect("n >= 1")
}

/// Sum of all task utilities.
pub fn potential(profile: &StrategyProfile, env: &GameEnv) -> f64 {
    (0..profile.sets.len()).map(|m| utility(profile, m, env)).sum()
}

/// `Omega(after) - Omega(before)` for a deviation by task `m` only.
pub fn potential_delta(
    before: &StrategyProfile,
    after: &StrategyProfile,
    m: usize,
    env: &GameEnv,
) -> Result<f64, GameError> {
    for t in 0..before.sets.len() {
        if t != m && before.sets[t] != after.sets[t] {
            return Err(GameError::MultiTaskDeviation(m));
        }
    }
    Ok(potential(after, env) - potential(before, env))
}

/// Closed-form potential change `beta ln(n'/n)` of a deviation between two
/// feasible profiles with non-empty task sets.
pub fn closed_form_delta(n: usize, n_prime: usize, beta: f64) -> f64 {
    beta * (n_prime as f64 / n as f64).ln()
}

/// Pools above this size are searched with add/drop moves instead of full
/// subset enumeration.
pub const ENUMERATION_LIMIT: usize = 12;

fn subsets(pool: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    (0u64..1 << pool.len()).map(move |mask| {
        pool.iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &h)| h)
            .collect()
    })
}

fn pool_for(profile: &StrategyProfile, m: usize) -> Vec<usize> {
    let mut pool = profile.sets[m].clone();
    pool.extend(profile.free());
    pool.sort_unstable();
    pool
}

fn candidate_sets(profile: &StrategyProfile, m: usize) -> (Vec<Vec<usize>>, bool) {
    let pool = pool_for(profile, m);
    if pool.len() <= ENUMERATION_LIMIT {
        return (subsets(&pool).collect(), true);
    }
    let current = &profile.sets[m];
    let free = profile.free();
    let mut out = Vec::new();
    for &v in &free {
        let mut s = current.clone();
        s.push(v);
        out.push(s);
    }
    for i in 0..current.len() {
        let mut s = current.clone();
        s.remove(i);
        out.push(s);
    }
    if current.len() <= 1 {
        for (i, &a) in free.iter().enumerate() {
            for &b in &free[i + 1..] {
                let mut s = current.clone();
                s.extend([a, b]);
                out.push(s);
            }
        }
    }
    for s in out.iter_mut() {
        s.sort_unstable();
    }
    (out, false)
}

fn symmetric_difference(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|x| !b.contains(x)).count() + b.iter().filter(|x| !a.contains(x)).count()
}

/// The improving deviation task `m` takes: among strictly better strategies,
/// the one closest to its current set, then the best, then lexicographically
/// smallest.
pub fn improving_move(profile: &StrategyProfile, m: usize, env: &GameEnv) -> Option<(Vec<usize>, f64)> {
    let current = utility(profile, m, env);
    let (cands, _) = candidate_sets(profile, m);
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for s in cands {
        let u = utility(&profile.with_task(m, s.clone()), m, env);
        if u <= current {
            continue;
        }
        let d = symmetric_difference(&s, &profile.sets[m]);
        let better = match &best {
            None => true,
            Some((bd, bu, bs)) => d < *bd || (d == *bd && (u > *bu || (u == *bu && s < *bs))),
        };
        if better {
            best = Some((d, u, s));
        }
    }
    best.map(|(_, u, s)| (s, u))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeOutcome {
    pub profile: StrategyProfile,
    pub omega_trace: Vec<f64>,
    pub iterations: usize,
    /// `Some(true)` when exhaustive unilateral-deviation checking confirmed
    /// the equilibrium, `None` when pools were too large to enumerate.
    pub verified: Option<bool>,
}

impl NeOutcome {
    pub fn report_json(&self) -> serde_json::Value {
        serde_json::json!({
            "profile": self.profile.sets,
            "omega_trace": self.omega_trace,
            "iterations": self.iterations,
            "verified_by_enumeration": self.verified == Some(true),
        })
    }
}

/// Round-robin improvement dynamics until no task can improve.
pub fn best_response_dynamics(
    initial: &StrategyProfile,
    env: &GameEnv,
    max_iters: usize,
) -> Result<NeOutcome, GameError> {
    let mut profile = initial.clone();
    let m = profile.sets.len();
    let mut trace = vec![potential(&profile, env)];
    let mut iterations = 0;
    let mut idle = 0;
    let mut task = 0;
    while idle < m {
        match improving_move(&profile, task, env) {
            Some((set, _)) => {
                if iterations == max_iters {
                    return Err(GameError::IterationCapExceeded(max_iters));
                }
                profile = profile.with_task(task, set);
                trace.push(potential(&profile, env));
                iterations += 1;
                idle = 0;
            }
            None => idle += 1,
        }
        task = (task + 1) % m;
    }
    let verified = verify_ne_exhaustive(&profile, env);
    Ok(NeOutcome {
        profile,
        omega_trace: trace,
        iterations,
        verified,
    })
}

/// Checks every unilateral deviation of every task. `None` if some pool is
/// too large to enumerate.
pub fn verify_ne_exhaustive(profile: &StrategyProfile, env: &GameEnv) -> Option<bool> {
    for m in 0..profile.sets.len() {
        let pool = pool_for(profile, m);
        if pool.len() > ENUMERATION_LIMIT {
            return None;
        }
        let current = utility(profile, m, env);
        for s in subsets(&pool) {
            if utility(&profile.with_task(m, s), m, env) > current {
                return Some(false);
            }
        }
    }
    Some(true)
}

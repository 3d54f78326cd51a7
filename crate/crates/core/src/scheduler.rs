//! Joint leader selection and subcarrier allocation, plus the
//! equal-resource (ERA) baseline.
//!
//! For every candidate leader of a task the cluster's subcarrier budget is
//! spread over the source vehicles with a max-heap: each source first gets
//! one subcarrier, then every remaining subcarrier goes to whichever source
//! currently has the longest upload time. The candidate's score trades its
//! participation recency against that residual worst-case upload time.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::CandidatePool;
use crate::mobility::{distance, Position};
use crate::radio::{tx_rate, LinkBudget};
use crate::rng::SimRng;
use crate::scenario::Schedule;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("task {task}: {sovs} source vehicles but only {budget} subcarriers")]
    BudgetTooSmall { task: usize, sovs: usize, budget: usize },
    #[error("vehicle {0} is assigned to more than one task")]
    MultipleTasks(usize),
    #[error("leader {0} is not a member of the cluster")]
    LeaderNotMember(usize),
}

/// A task's cluster in one round, seen from the scheduler.
#[derive(Debug, Clone)]
pub struct ClusterGeometry<'a> {
    pub task: usize,
    /// Member vehicle ids, ascending.
    pub members: Vec<usize>,
    pub positions: &'a [Position],
    pub link: &'a LinkBudget,
    pub z_bits: f64,
    /// Subcarriers available to this cluster.
    pub budget: usize,
}

/// Result of spreading a cluster budget over its sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub leader: usize,
    /// `(vehicle, subcarrier count, upload time)` per source, ascending id.
    pub grants: Vec<(usize, usize, f64)>,
    pub max_t_u: f64,
    pub heap_ops: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    t_u: f64,
    vehicle: usize,
    index: usize,
}

impl Eq for Slot {}

impl Ord for Slot {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t_u
            .total_cmp(&other.t_u)
            // Equal times: the lower id surfaces first.
            .then_with(|| other.vehicle.cmp(&self.vehicle))
    }
}

impl PartialOrd for Slot {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Rate of one subcarrier from `s` to `r`.
fn unit_rate(geo: &ClusterGeometry<'_>, s: usize, r: usize) -> f64 {
    tx_rate(
        1.0 / geo.link.subcarriers as f64,
        geo.link,
        distance(geo.positions[s], geo.positions[r]),
    )
}

/// Upload times when each source holds `counts[i]` subcarriers.
pub fn upload_times(geo: &ClusterGeometry<'_>, leader: usize, sovs: &[usize], counts: &[usize]) -> Vec<f64> {
    sovs.iter()
        .zip(counts)
        .map(|(&s, &c)| geo.z_bits / (c as f64 * unit_rate(geo, s, leader)))
        .collect()
}

/// Greedy min-max subcarrier allocation for leader `r`.
pub fn allocate_subcarriers(geo: &ClusterGeometry<'_>, r: usize) -> Result<Allocation, SchedulerError> {
    if !geo.members.contains(&r) {
        return Err(SchedulerError::LeaderNotMember(r));
    }
    let sovs: Vec<usize> = geo.members.iter().copied().filter(|&s| s != r).collect();
    if sovs.len() > geo.budget {
        return Err(SchedulerError::BudgetTooSmall {
            task: geo.task,
            sovs: sovs.len(),
            budget: geo.budget,
        });
    }
    if sovs.is_empty() {
        return Ok(Allocation {
            leader: r,
            grants: Vec::new(),
            max_t_u: 0.0,
            heap_ops: 0,
        });
    }
    let rates: Vec<f64> = sovs.iter().map(|&s| unit_rate(geo, s, r)).collect();
    let mut counts = vec![1usize; sovs.len()];
    let mut heap = BinaryHeap::with_capacity(sovs.len());
    let mut ops = 0;
    for (i, &s) in sovs.iter().enumerate() {
        heap.push(Slot {
            t_u: geo.z_bits / rates[i],
            vehicle: s,
            index: i,
        });
        ops += 1;
    }
    for _ in sovs.len()..geo.budget {
        let mut top = heap.pop().expect("heap holds every source");
        counts[top.index] += 1;
        top.t_u = geo.z_bits / (counts[top.index] as f64 * rates[top.index]);
        heap.push(top);
        ops += 2;
    }
    let max_t_u = heap.peek().map_or(0.0, |s| s.t_u);
    let grants = sovs
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, counts[i], geo.z_bits / (counts[i] as f64 * rates[i])))
        .collect();
    Ok(Allocation {
        leader: r,
        grants,
        max_t_u,
        heap_ops: ops,
    })
}

/// Minimal worst-case upload time over every allocation giving each source
/// at least one subcarrier. Exponential; for checking small instances.
pub fn brute_force_minimax(geo: &ClusterGeometry<'_>, r: usize) -> Option<f64> {
    let sovs: Vec<usize> = geo.members.iter().copied().filter(|&s| s != r).collect();
    if sovs.is_empty() {
        return Some(0.0);
    }
    if sovs.len() > geo.budget {
        return None;
    }
    fn rec(geo: &ClusterGeometry<'_>, r: usize, sovs: &[usize], counts: &mut Vec<usize>, left: usize, best: &mut f64) {
        if counts.len() == sovs.len() - 1 {
            counts.push(left);
            let worst = upload_times(geo, r, sovs, counts).into_iter().fold(0.0, f64::max);
            *best = best.min(worst);
            counts.pop();
            return;
        }
        let remaining_sovs = sovs.len() - counts.len() - 1;
        for c in 1..=left - remaining_sovs {
            counts.push(c);
            rec(geo, r, sovs, counts, left - c, best);
            counts.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(geo, r, &sovs, &mut Vec::new(), geo.budget, &mut best);
    Some(best)
}

/// Worst upload time when the budget is split as evenly as possible
/// (remainders to the lowest ids).
pub fn equal_split_max(geo: &ClusterGeometry<'_>, r: usize) -> Option<f64> {
    let sovs: Vec<usize> = geo.members.iter().copied().filter(|&s| s != r).collect();
    if sovs.is_empty() {
        return Some(0.0);
    }
    if sovs.len() > geo.budget {
        return None;
    }
    let counts = even_split(geo.budget, sovs.len());
    Some(upload_times(geo, r, &sovs, &counts).into_iter().fold(0.0, f64::max))
}

fn even_split(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

pub fn score_leader_candidate(rho: usize, k: usize, max_t_u: f64, eps_weight: f64, t_round: f64) -> f64 {
    rho as f64 / k as f64 - eps_weight * max_t_u / t_round
}

/// Splits `n` subcarriers over tasks proportionally to cluster sizes;
/// remainders go one each to non-empty tasks in task order.
pub fn task_budgets(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut budgets: Vec<usize> = sizes.iter().map(|&s| n * s / total).collect();
    let mut left = n - budgets.iter().sum::<usize>();
    while left > 0 {
        for (b, &s) in budgets.iter_mut().zip(sizes) {
            if left == 0 {
                break;
            }
            if s > 0 {
                *b += 1;
                left -= 1;
            }
        }
    }
    budgets
}

/// Writes per-task contiguous subcarrier blocks into `schedule.c`.
fn write_subcarriers(schedule: &mut Schedule, grants: &[Vec<(usize, usize)>], budgets: &[usize]) {
    let mut next = 0;
    for (m, task_grants) in grants.iter().enumerate() {
        let start = next;
        for &(s, count) in task_grants {
            for _ in 0..count {
                schedule.set_c(m, s, next, 1);
                next += 1;
            }
        }
        next = start + budgets[m];
    }
}

/// Everything leader selection needs besides the task assignment.
#[derive(Debug, Clone, Copy)]
pub struct SchedulingContext<'a> {
    pub k: usize,
    pub positions: &'a [Position],
    /// `rho[h][m]` before this round.
    pub rho: &'a [Vec<usize>],
    pub link: &'a LinkBudget,
    pub z_bits: &'a [f64],
    pub eps_weight: f64,
    pub t_round: f64,
    pub candidate_pool: CandidatePool,
    /// Cluster membership of the previous round, `previous[m][h]`.
    pub previous: Option<&'a [Vec<bool>]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderSelection {
    pub schedule: Schedule,
    /// Winning score per task, `None` for empty tasks.
    pub scores: Vec<Option<f64>>,
    pub heap_ops: usize,
}

/// Elects one leader per non-empty task and assigns its subcarriers.
///
/// `alpha` must already hold the task assignment; `u` and `c` are rebuilt.
pub fn select_leaders(alpha: &Schedule, ctx: &SchedulingContext<'_>) -> Result<LeaderSelection, SchedulerError> {
    let mut schedule = alpha.clone();
    schedule.u.iter_mut().for_each(|x| *x = 0);
    schedule.c.iter_mut().for_each(|x| *x = 0);
    for h in 0..schedule.h {
        if (0..schedule.m).filter(|&m| schedule.alpha(h, m) != 0).count() > 1 {
            return Err(SchedulerError::MultipleTasks(h));
        }
    }
    let clusters: Vec<Vec<usize>> = (0..schedule.m).map(|m| schedule.members(m)).collect();
    let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
    let budgets = task_budgets(&sizes, schedule.n);
    let mut scores = vec![None; schedule.m];
    let mut grants = vec![Vec::new(); schedule.m];
    let mut heap_ops = 0;

    for m in 0..schedule.m {
        let members = &clusters[m];
        if members.is_empty() {
            continue;
        }
        let geo = ClusterGeometry {
            task: m,
            members: members.clone(),
            positions: ctx.positions,
            link: ctx.link,
            z_bits: ctx.z_bits[m],
            budget: budgets[m],
        };
        let mut candidates: Vec<usize> = members.clone();
        if ctx.candidate_pool == CandidatePool::PreviousCluster {
            if let Some(prev) = ctx.previous {
                let kept: Vec<usize> = members.iter().copied().filter(|&h| prev[m][h]).collect();
                if !kept.is_empty() {
                    candidates = kept;
                }
            }
        }
        let mut best: Option<(f64, Allocation)> = None;
        for &r in &candidates {
            let alloc = allocate_subcarriers(&geo, r)?;
            heap_ops += alloc.heap_ops;
            let score = score_leader_candidate(ctx.rho[r][m], ctx.k, alloc.max_t_u, ctx.eps_weight, ctx.t_round);
            // Candidates are visited in ascending id, so a strict comparison
            // keeps the lowest id on ties.
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, alloc));
            }
        }
        let (score, alloc) = best.expect("non-empty cluster has a candidate");
        schedule.set_u(alloc.leader, m, 1);
        scores[m] = Some(score);
        grants[m] = alloc.grants.iter().map(|&(s, c, _)| (s, c)).collect();
    }
    write_subcarriers(&mut schedule, &grants, &budgets);
    Ok(LeaderSelection {
        schedule,
        scores,
        heap_ops,
    })
}

/// Equal resource allocation: eligible vehicles are dealt round-robin by id
/// over the tasks, each cluster gets a uniformly random leader and its
/// subcarriers are split evenly among the sources.
pub fn era_schedule(k: usize, eligible: &[bool], m: usize, n: usize, rng: &mut SimRng) -> Schedule {
    let h = eligible.len();
    let mut assignment = vec![None; h];
    for (i, v) in (0..h).filter(|&v| eligible[v]).enumerate() {
        assignment[v] = Some(i % m);
    }
    let mut schedule = Schedule::from_assignment(k, &assignment, m, n);
    let clusters: Vec<Vec<usize>> = (0..m).map(|t| schedule.members(t)).collect();
    let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
    let budgets = task_budgets(&sizes, n);
    let mut grants = vec![Vec::new(); m];
    for (t, members) in clusters.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let leader = members[rng.random_range(0..members.len())];
        schedule.set_u(leader, t, 1);
        let sovs: Vec<usize> = members.iter().copied().filter(|&s| s != leader).collect();
        if !sovs.is_empty() {
            grants[t] = sovs.iter().copied().zip(even_split(budgets[t], sovs.len())).collect();
        }
    }
    write_subcarriers(&mut schedule, &grants, &budgets);
    schedule
}

/// Cluster size counts per task for a per-vehicle assignment.
pub fn cluster_sizes(assignment: &[Option<usize>], m: usize) -> Vec<usize> {
    let mut sizes = vec![0; m];
    for t in assignment.iter().flatten() {
        sizes[*t] += 1;
    }
    sizes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    Happo,
    Era,
    JointPpo,
    BestResponse,
}

impl std::str::FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "happo" => Ok(Self::Happo),
            "era" => Ok(Self::Era),
            "joint-ppo" => Ok(Self::JointPpo),
            "best-response" => Ok(Self::BestResponse),
            other => Err(format!("unknown scheduler `{other}`")),
        }
    }
}

impl std::fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Happo => "happo",
            Self::Era => "era",
            Self::JointPpo => "joint-ppo",
            Self::BestResponse => "best-response",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RadioSection;
    use crate::ledger::{account_round, validate_schedule};
    use crate::compute::ComputeProfile;
    use crate::config::{ComputeSection, LeaderRecencyMode, TaskFamily};
    use crate::rng::{stream, Stream};
    use crate::scenario::TaskSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn link() -> LinkBudget {
        LinkBudget::from_config(&RadioSection {
            xi: 2.0,
            ..RadioSection::default()
        })
    }

    fn geo<'a>(positions: &'a [Position], link: &'a LinkBudget, budget: usize) -> ClusterGeometry<'a> {
        ClusterGeometry {
            task: 0,
            members: (0..positions.len()).collect(),
            positions,
            link,
            z_bits: 1e6,
            budget,
        }
    }

    #[test]
    fn equal_rates_split_evenly() {
        let l = link();
        let pos = [Position::new(0.0, 0.0), Position::new(30.0, 0.0), Position::new(-30.0, 0.0)];
        let a = allocate_subcarriers(&geo(&pos, &l, 4), 0).unwrap();
        assert_eq!(a.grants.iter().map(|g| g.1).collect::<Vec<_>>(), vec![2, 2]);
        let a = allocate_subcarriers(&geo(&pos, &l, 3), 0).unwrap();
        // Tie on the extra subcarrier: lower id wins.
        assert_eq!(a.grants.iter().map(|g| g.1).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn sole_source_takes_everything() {
        let l = link();
        let pos = [Position::new(0.0, 0.0), Position::new(30.0, 0.0)];
        let a = allocate_subcarriers(&geo(&pos, &l, 3), 0).unwrap();
        assert_eq!(a.grants[0].1, 3);
    }

    #[test]
    fn slower_source_gets_the_extra_subcarrier() {
        // Construct distances whose per-subcarrier spectral efficiencies are 2:1.
        // log2(1 + 9 d^-2) is 2 bits at d = sqrt(3) and 1 bit at d = 3.
        let l = LinkBudget {
            p_watt: 1.0,
            h_ref: 9.0,
            sigma2_watt: 1.0,
            nu: 2.0,
            w_hz: 60.0,
            d_u: 1e9,
            xi: 1.0,
            subcarriers: 60,
        };
        let pos = [Position::new(0.0, 0.0), Position::new(3.0_f64.sqrt(), 0.0), Position::new(3.0, 0.0)];
        let g = geo(&pos, &l, 3);
        let r1 = unit_rate(&g, 1, 0);
        let r2 = unit_rate(&g, 2, 0);
        assert_relative_eq!(r1 / r2, 2.0, max_relative = 1e-12);
        let a = allocate_subcarriers(&g, 0).unwrap();
        assert_eq!(a.grants.iter().map(|g| g.1).collect::<Vec<_>>(), vec![1, 2]);
        assert_relative_eq!(a.max_t_u, brute_force_minimax(&g, 0).unwrap());
    }

    #[test]
    fn budget_too_small_is_an_error() {
        let l = link();
        let pos = [Position::new(0.0, 0.0), Position::new(1.0, 0.0), Position::new(2.0, 0.0)];
        assert!(matches!(
            allocate_subcarriers(&geo(&pos, &l, 1), 0),
            Err(SchedulerError::BudgetTooSmall { sovs: 2, budget: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn greedy_beats_equal_split_and_matches_brute_force(
            coords in prop::collection::vec((-200.0..200.0f64, -200.0..200.0f64), 2..5),
            extra in 0usize..4,
        ) {
            let l = link();
            let pos: Vec<Position> = coords.iter().map(|&(x, y)| Position::new(x, y)).collect();
            let budget = pos.len() - 1 + extra;
            let g = geo(&pos, &l, budget);
            let a = allocate_subcarriers(&g, 0).unwrap();
            prop_assert!(a.max_t_u <= equal_split_max(&g, 0).unwrap() * (1.0 + 1e-12));
            prop_assert_eq!(a.max_t_u, brute_force_minimax(&g, 0).unwrap());
        }
    }

    #[test]
    fn score_examples() {
        assert_relative_eq!(score_leader_candidate(9, 10, 3.0, 1.0, 30.0), 0.8);
        assert_eq!(score_leader_candidate(0, 4, 0.0, 1.0, 30.0), 0.0);
        assert_eq!(score_leader_candidate(3, 4, 7.0, 0.0, 30.0), 0.75);
    }

    #[test]
    fn budgets_are_proportional_with_ordered_remainders() {
        assert_eq!(task_budgets(&[2, 2, 2], 60), vec![20, 20, 20]);
        assert_eq!(task_budgets(&[3, 2, 2], 60), vec![26, 17, 17]);
        assert_eq!(task_budgets(&[0, 3], 7), vec![0, 7]);
        assert_eq!(task_budgets(&[0, 0], 7), vec![0, 0]);
    }

    #[test]
    fn leader_is_the_argmax_with_lowest_id_ties() {
        let pos = vec![Position::new(0.0, 0.0), Position::new(10.0, 0.0), Position::new(20.0, 0.0)];
        let rho = vec![vec![2, 0], vec![8, 0], vec![8, 0]];
        let (l, z) = (link(), vec![1e6, 1e6]);
        let ctx = SchedulingContext {
            k: 10,
            positions: &pos,
            rho: &rho,
            link: &l,
            z_bits: &z,
            eps_weight: 0.0,
            t_round: 30.0,
            candidate_pool: CandidatePool::AllMembers,
            previous: None,
        };
        let alpha = Schedule::from_assignment(10, &[Some(0), Some(0), Some(0)], 2, 6);
        let sel = select_leaders(&alpha, &ctx).unwrap();
        assert_eq!(sel.schedule.leader_of(0), Some(1));
        assert_eq!(sel.scores[0], Some(0.8));
        assert_eq!(sel.scores[1], None);

        // Singleton cluster: its only member leads and holds no subcarrier.
        let single = Schedule::from_assignment(10, &[None, Some(1), None], 2, 6);
        let sel = select_leaders(&single, &ctx).unwrap();
        assert_eq!(sel.schedule.leader_of(1), Some(1));
        assert!(sel.schedule.c.iter().all(|&x| x == 0));

        // Restricting candidates to the previous cluster.
        let prev = vec![vec![true, false, false], vec![false; 3]];
        let strict = SchedulingContext {
            candidate_pool: CandidatePool::PreviousCluster,
            previous: Some(&prev),
            ..ctx
        };
        let sel = select_leaders(&alpha, &strict).unwrap();
        assert_eq!(sel.schedule.leader_of(0), Some(0));
    }

    #[test]
    fn latency_weight_moves_the_leader() {
        let pos = vec![Position::new(0.0, 0.0), Position::new(90.0, 0.0), Position::new(180.0, 0.0)];
        let rho = vec![vec![5], vec![4], vec![5]];
        let l = LinkBudget {
            w_hz: 1e3,
            ..link()
        };
        let z = vec![1e6];
        let ctx = SchedulingContext {
            k: 5,
            positions: &pos,
            rho: &rho,
            link: &l,
            z_bits: &z,
            eps_weight: 1.0,
            t_round: 30.0,
            candidate_pool: CandidatePool::AllMembers,
            previous: None,
        };
        let alpha = Schedule::from_assignment(5, &[Some(0); 3], 1, 6);
        // The middle vehicle reaches both others directly; the ends relay.
        assert_eq!(select_leaders(&alpha, &ctx).unwrap().schedule.leader_of(0), Some(1));
        let no_latency = SchedulingContext { eps_weight: 0.0, ..ctx };
        assert_eq!(select_leaders(&alpha, &no_latency).unwrap().schedule.leader_of(0), Some(0));
    }

    fn structural_ok(s: &Schedule, pos: &[Position]) -> bool {
        let tasks: Vec<TaskSpec> = (0..s.m)
            .map(|m| TaskSpec {
                task_id: m,
                family: TaskFamily::Quadratic,
                model_dim: 10,
                z_bits: 320.0,
                dataset_sizes: vec![10; s.h],
                sample_bits: 100.0,
                beta: 1.0,
                theta: 0.0,
            })
            .collect();
        let acc = account_round(s, pos, &tasks, &link(), &ComputeProfile::from_config(&ComputeSection::default()));
        let rep = validate_schedule(s, &acc, &vec![1e9; s.h], &vec![vec![0; s.m]; s.h], 1e9, LeaderRecencyMode::Advisory)
            .unwrap();
        rep.structural_ok()
    }

    proptest! {
        #[test]
        fn selected_schedules_are_structurally_valid(
            assign in prop::collection::vec(prop::option::of(0usize..3), 1..9),
            coords in prop::collection::vec((0.0..600.0f64, 0.0..600.0f64), 9),
            seed in 0u64..100,
        ) {
            let h = assign.len();
            let pos: Vec<Position> = coords[..h].iter().map(|&(x, y)| Position::new(x, y)).collect();
            let rho: Vec<Vec<usize>> = (0..h).map(|i| vec![(i * 7 + seed as usize) % 5; 3]).collect();
            let l = link();
            let z = vec![320.0, 640.0, 960.0];
            let ctx = SchedulingContext {
                k: 6, positions: &pos, rho: &rho, link: &l, z_bits: &z, eps_weight: 1.0,
                t_round: 30.0, candidate_pool: CandidatePool::AllMembers, previous: None,
            };
            let alpha = Schedule::from_assignment(6, &assign, 3, h + 3);
            let sel = select_leaders(&alpha, &ctx).unwrap();
            prop_assert!(structural_ok(&sel.schedule, &pos));
            let era = era_schedule(6, &vec![true; h], 3, h + 3, &mut stream(seed, Stream::Env));
            prop_assert!(structural_ok(&era, &pos));
        }
    }

    #[test]
    fn era_group_sizes() {
        let mut rng = stream(0, Stream::Env);
        let s = era_schedule(1, &[true; 6], 3, 12, &mut rng);
        assert_eq!(cluster_sizes(&s.assignment(), 3), vec![2, 2, 2]);
        let s = era_schedule(1, &[true; 7], 3, 12, &mut rng);
        assert_eq!(cluster_sizes(&s.assignment(), 3), vec![3, 2, 2]);
        let s = era_schedule(1, &[false; 7], 3, 12, &mut rng);
        assert_eq!(s.participants(), 0);
        assert!(s.u.iter().all(|&x| x == 0));
    }

    #[test]
    fn heap_operations_scale_with_subcarriers() {
        let l = link();
        let pos: Vec<Position> = (0..8).map(|i| Position::new(10.0 * i as f64, 5.0)).collect();
        let alpha = Schedule::from_assignment(3, &[Some(0); 8], 1, 0);
        let rho = vec![vec![0]; 8];
        let z = vec![1e5];
        let ops = |n: usize| {
            let mut a = alpha.clone();
            a.n = n;
            a.c = vec![0; n * 8];
            let ctx = SchedulingContext {
                k: 3, positions: &pos, rho: &rho, link: &LinkBudget { subcarriers: n, ..l }, z_bits: &z,
                eps_weight: 1.0, t_round: 30.0, candidate_pool: CandidatePool::AllMembers, previous: None,
            };
            select_leaders(&a, &ctx).unwrap().heap_ops as f64
        };
        let ratio = ops(1024) / ops(512);
        assert!((1.8..2.2).contains(&ratio), "{ratio}");
    }
}

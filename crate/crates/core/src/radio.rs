//! Uplink communication model: bandwidth shares, OFDMA rates and the
//! time/energy cost of moving a model between a source vehicle and its leader.

use thiserror::Error;

use crate::config::RadioSection;
use crate::mobility::{distance, Position};
use crate::scenario::Schedule;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadioError {
    #[error("vehicle {0} is not the leader of any task")]
    NotALeader(usize),
    #[error("vehicle {vehicle} has no subcarrier toward its leader in task {task}")]
    RateZero { vehicle: usize, task: usize },
}

pub fn dbm_to_watt(x_dbm: f64) -> f64 {
    10f64.powf((x_dbm - 30.0) / 10.0)
}

pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

/// Link constants in linear units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub p_watt: f64,
    pub h_ref: f64,
    pub sigma2_watt: f64,
    pub nu: f64,
    pub w_hz: f64,
    pub d_u: f64,
    pub xi: f64,
    pub subcarriers: usize,
}

impl LinkBudget {
    pub fn from_config(r: &RadioSection) -> Self {
        Self {
            p_watt: dbm_to_watt(r.p_dbm),
            h_ref: db_to_linear(r.h_ref_db),
            sigma2_watt: dbm_to_watt(r.sigma2_dbm),
            nu: r.nu,
            w_hz: r.bandwidth_hz,
            d_u: r.d_u,
            xi: r.xi,
            subcarriers: r.subcarriers,
        }
    }

    /// Distance used in the path-loss term. Links beyond `d_u` are relayed
    /// and pay the fixed distance `xi * d_u`; very short links are clamped to
    /// the 1 m reference distance so the gain stays bounded.
    pub fn effective_distance(&self, d: f64) -> f64 {
        let d = if d <= self.d_u { d } else { self.xi * self.d_u };
        d.max(1.0)
    }

    pub fn snr(&self, d: f64) -> f64 {
        self.p_watt * self.h_ref * self.effective_distance(d).powf(-self.nu) / self.sigma2_watt
    }

    /// Spectral efficiency at the reference distance; the largest value any
    /// link can reach.
    pub fn max_spectral_efficiency(&self) -> f64 {
        (1.0 + self.p_watt * self.h_ref / self.sigma2_watt).log2()
    }
}

/// Achievable uplink rate in bit/s for a bandwidth share `ratio` over
/// distance `d`.
pub fn tx_rate(ratio: f64, budget: &LinkBudget, d: f64) -> f64 {
    if ratio <= 0.0 {
        return 0.0;
    }
    ratio * budget.w_hz * (1.0 + budget.snr(d)).log2()
}

/// Share of the band held by `s` inside the task led by `r`.
pub fn bandwidth_ratio(schedule: &Schedule, s: usize, r: usize) -> Result<f64, RadioError> {
    let mut held = 0usize;
    let mut leads = false;
    for m in 0..schedule.m {
        if schedule.u(r, m) != 0 {
            leads = true;
            held += schedule.subcarrier_count(m, s);
        }
    }
    if !leads {
        return Err(RadioError::NotALeader(r));
    }
    Ok(held as f64 / schedule.n as f64)
}

/// `(T_U, E_U)` for source vehicle `s` sending one model to its leader.
///
/// Unscheduled vehicles and leaders themselves cost nothing.
pub fn sov_cost(
    schedule: &Schedule,
    s: usize,
    positions: &[Position],
    z_bits: &[f64],
    budget: &LinkBudget,
) -> Result<(f64, f64), RadioError> {
    let Some(m) = schedule.task_of(s) else {
        return Ok((0.0, 0.0));
    };
    if schedule.u(s, m) != 0 {
        return Ok((0.0, 0.0));
    }
    let Some(r) = schedule.leader_of(m) else {
        return Err(RadioError::RateZero { vehicle: s, task: m });
    };
    let ratio = schedule.subcarrier_count(m, s) as f64 / schedule.n as f64;
    let rate = tx_rate(ratio, budget, distance(positions[s], positions[r]));
    if rate <= 0.0 {
        return Err(RadioError::RateZero { vehicle: s, task: m });
    }
    let t = z_bits[m] / rate;
    Ok((t, budget.p_watt * t))
}

/// `(T_U, E_U)` for leader `r`: its sources transmit in parallel, so time is
/// the slowest source and energy is the sum over sources.
pub fn chv_cost(
    schedule: &Schedule,
    r: usize,
    positions: &[Position],
    z_bits: &[f64],
    budget: &LinkBudget,
) -> Result<(f64, f64), RadioError> {
    let m = (0..schedule.m)
        .find(|&m| schedule.u(r, m) != 0)
        .ok_or(RadioError::NotALeader(r))?;
    let mut t_max = 0.0f64;
    let mut e_sum = 0.0;
    for s in schedule.members(m) {
        if s == r {
            continue;
        }
        let (t, e) = sov_cost(schedule, s, positions, z_bits, budget)?;
        t_max = t_max.max(t);
        e_sum += e;
    }
    Ok((t_max, e_sum))
}

/// Combines member costs the way a leader experiences them.
pub fn combine_chv(costs: &[(f64, f64)]) -> (f64, f64) {
    costs
        .iter()
        .fold((0.0f64, 0.0), |(t, e), &(ti, ei)| (t.max(ti), e + ei))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table_budget(xi: f64) -> LinkBudget {
        LinkBudget::from_config(&RadioSection {
            xi,
            ..RadioSection::default()
        })
    }

    #[test]
    fn dbm_conversions() {
        assert_relative_eq!(dbm_to_watt(30.0), 1.0);
        assert_relative_eq!(dbm_to_watt(0.0), 0.001);
        // 10^(-13.4) written out independently.
        assert_relative_eq!(dbm_to_watt(-104.0), 3.981_071_705_534_97e-14, max_relative = 1e-12);
    }

    #[test]
    fn table_rate_at_the_direct_radius() {
        let b = table_budget(1.0);
        assert_relative_eq!(b.snr(100.0), 1e6, max_relative = 1e-9);
        let r = tx_rate(1.0 / 60.0, &b, 100.0);
        assert_relative_eq!(r, 20e6 / 60.0 * 19.931_569_93, max_relative = 1e-8);
        assert!((r - 6.6439e6).abs() / 6.6439e6 < 1e-3);
    }

    #[test]
    fn relayed_link_uses_scaled_distance() {
        let b = table_budget(2.0);
        assert_eq!(b.effective_distance(150.0), 200.0);
        assert_relative_eq!(b.snr(150.0), 2.5e5, max_relative = 1e-9);
        let r = tx_rate(1.0 / 60.0, &b, 150.0);
        assert!((r - 5.9772e6).abs() / 5.9772e6 < 1e-3, "{r}");
        assert_eq!(tx_rate(0.0, &b, 50.0), 0.0);
    }

    fn two_member_schedule(sov_subcarriers: usize) -> Schedule {
        let mut s = Schedule::from_assignment(1, &[Some(0), Some(0)], 1, 60);
        s.set_u(0, 0, 1);
        for n in 0..sov_subcarriers {
            s.set_c(0, 1, n, 1);
        }
        s
    }

    #[test]
    fn bandwidth_ratio_examples() {
        assert_relative_eq!(bandwidth_ratio(&two_member_schedule(1), 1, 0).unwrap(), 1.0 / 60.0);
        assert_eq!(bandwidth_ratio(&two_member_schedule(0), 1, 0).unwrap(), 0.0);
        assert_relative_eq!(bandwidth_ratio(&two_member_schedule(3), 1, 0).unwrap(), 0.05);
        assert_eq!(
            bandwidth_ratio(&two_member_schedule(3), 0, 1),
            Err(RadioError::NotALeader(1))
        );
    }

    #[test]
    fn sov_and_chv_costs() {
        let b = table_budget(1.0);
        let pos = [Position::new(0.0, 0.0), Position::new(100.0, 0.0)];
        let z = [1e6];
        let s = two_member_schedule(1);
        let (t, e) = sov_cost(&s, 1, &pos, &z, &b).unwrap();
        assert_relative_eq!(t, 1e6 / tx_rate(1.0 / 60.0, &b, 100.0), max_relative = 1e-12);
        assert!((t - 0.15051).abs() < 1e-4);
        assert_relative_eq!(e, t);
        assert_eq!(sov_cost(&s, 0, &pos, &z, &b).unwrap(), (0.0, 0.0));
        assert_eq!(chv_cost(&s, 0, &pos, &z, &b).unwrap(), (t, e));
        assert!(matches!(
            sov_cost(&two_member_schedule(0), 1, &pos, &z, &b),
            Err(RadioError::RateZero { vehicle: 1, task: 0 })
        ));
        let unscheduled = Schedule::from_assignment(1, &[None, None], 1, 60);
        assert_eq!(sov_cost(&unscheduled, 1, &pos, &z, &b).unwrap(), (0.0, 0.0));
        assert_eq!(chv_cost(&unscheduled, 0, &pos, &z, &b), Err(RadioError::NotALeader(0)));
    }

    #[test]
    fn chv_combination_is_max_and_sum() {
        assert_eq!(combine_chv(&[(0.10, 0.10), (0.15, 0.15)]), (0.15, 0.25));
        assert_eq!(combine_chv(&[]), (0.0, 0.0));
        assert_eq!(combine_chv(&[(0.2, 0.2)]), (0.2, 0.2));
    }

    #[test]
    fn singleton_leader_has_no_uplink() {
        let b = table_budget(1.0);
        let mut s = Schedule::from_assignment(1, &[Some(0)], 1, 4);
        s.set_u(0, 0, 1);
        assert_eq!(chv_cost(&s, 0, &[Position::default()], &[320.0], &b).unwrap(), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn rate_monotonicity(r1 in 0.0..1.0f64, r2 in 0.0..1.0f64, d1 in 1.0..100.0f64, d2 in 1.0..100.0f64) {
            let b = table_budget(2.0);
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(tx_rate(lo, &b, d1) <= tx_rate(hi, &b, d1));
            let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(tx_rate(hi, &b, near) >= tx_rate(hi, &b, far));
            // Indirect regime: flat in d.
            prop_assert_eq!(tx_rate(hi, &b, 100.0 + near), tx_rate(hi, &b, 100.0 + far));
        }

        #[test]
        fn doubling_subcarriers_doubles_ratio(k in 1usize..15) {
            let b = table_budget(1.0);
            let pos = [Position::new(0.0, 0.0), Position::new(40.0, 30.0)];
            let one = two_member_schedule(k);
            let two = two_member_schedule(2 * k);
            let r1 = bandwidth_ratio(&one, 1, 0).unwrap();
            let r2 = bandwidth_ratio(&two, 1, 0).unwrap();
            prop_assert!((r2 - 2.0 * r1).abs() < 1e-15);
            let t1 = sov_cost(&one, 1, &pos, &[1e5], &b).unwrap().0;
            let t2 = sov_cost(&two, 1, &pos, &[1e5], &b).unwrap().0;
            prop_assert!(t2 < t1);
        }
    }
}

//! Local computation power, time and energy.

use crate::config::ComputeSection;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeProfile {
    pub f_hz: f64,
    /// Cycles per bit.
    pub q: f64,
    pub lambda_cap: f64,
    pub local_iters: usize,
}

impl ComputeProfile {
    pub fn from_config(c: &ComputeSection) -> Self {
        Self {
            f_hz: c.f_hz,
            q: c.q,
            lambda_cap: c.lambda_cap,
            local_iters: c.local_iters,
        }
    }
}

/// CPU power draw `lambda * f^3` in watts.
pub fn comp_power(p: &ComputeProfile) -> f64 {
    p.lambda_cap * p.f_hz.powi(3)
}

/// `(T_C, E_C)` for `I` local passes over `dataset_bits` bits.
pub fn comp_cost(dataset_bits: f64, p: &ComputeProfile) -> (f64, f64) {
    let cycles = p.local_iters as f64 * dataset_bits * p.q;
    (cycles / p.f_hz, p.lambda_cap * cycles * p.f_hz * p.f_hz)
}

/// Cost for a vehicle that may be unscheduled (`None`).
pub fn comp_cost_opt(dataset_bits: Option<f64>, p: &ComputeProfile) -> (f64, f64) {
    dataset_bits.map_or((0.0, 0.0), |b| comp_cost(b, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table() -> ComputeProfile {
        ComputeProfile::from_config(&ComputeSection::default())
    }

    #[test]
    fn power_examples() {
        assert_relative_eq!(comp_power(&table()), 216.0, max_relative = 1e-12);
        assert_eq!(comp_power(&ComputeProfile { f_hz: 0.0, ..table() }), 0.0);
        let double = ComputeProfile {
            lambda_cap: 2e-27,
            ..table()
        };
        assert_relative_eq!(comp_power(&double), 432.0, max_relative = 1e-12);
    }

    #[test]
    fn cost_examples() {
        let (t, e) = comp_cost(1e5, &table());
        assert_relative_eq!(t, 5.0 * 1e5 * 1e3 / 6e9, max_relative = 1e-12);
        assert_relative_eq!(t, 0.083_333_333_333, max_relative = 1e-9);
        assert_relative_eq!(e, 18.0, max_relative = 1e-9);
        assert_relative_eq!(e, 216.0 * t, max_relative = 1e-12);
        assert_eq!(comp_cost_opt(None, &table()), (0.0, 0.0));
        let (t2, e2) = comp_cost(2e5, &table());
        assert_relative_eq!(t2, 2.0 * t);
        assert_relative_eq!(e2, 2.0 * e);
    }

    proptest! {
        #[test]
        fn energy_is_power_times_time(f in 1e8..1e10f64, q in 1.0..1e4f64, lam in 1e-29..1e-26f64,
                                      i in 1usize..20, bits in 1.0..1e7f64) {
            let p = ComputeProfile { f_hz: f, q, lambda_cap: lam, local_iters: i };
            let (t, e) = comp_cost(bits, &p);
            prop_assert!(((e - comp_power(&p) * t) / e).abs() < 1e-12);
        }
    }
}

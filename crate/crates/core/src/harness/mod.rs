//! Measurement harness: configuration, sweeps, acceptance criteria and reports.

pub mod config;
pub mod criteria;
pub mod experiments;
pub mod report;

pub use config::ExperimentConfig;
pub use report::{Format, Record, Report, Row};

/// `2 <= q, r <= inf`, `1/q + ((n-1)/2)/r <= (n-1)/4` and `(n, q, r) != (3, 2, inf)`.
pub fn check_admissible(q: f64, r: f64, n: usize) -> bool {
    if n < 2 || !(q >= 2.0) || !(r >= 2.0) {
        return false;
    }
    if n == 3 && q == 2.0 && r.is_infinite() {
        return false;
    }
    let m = (n as f64 - 1.0) / 2.0;
    1.0 / q + m / r <= m / 2.0 + 1e-15
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn admissible_examples() {
        assert!(check_admissible(8.0, 8.0, 2));
        assert!(!check_admissible(3.0, 4.0, 2));
        assert!(!check_admissible(2.0, f64::INFINITY, 3));
        assert!(check_admissible(4.0, 4.0, 3));
        assert!(!check_admissible(2.0, 6.0, 3));
        assert!(check_admissible(4.0, f64::INFINITY, 2));
        assert!(!check_admissible(1.5, 10.0, 3));
        for n in 2..6 {
            assert!(check_admissible(f64::INFINITY, f64::INFINITY, n));
        }
    }

    proptest! {
        #[test]
        fn admissibility_is_monotone_in_q(q in 2.0f64..50.0, r in 2.0f64..50.0, n in 2usize..5) {
            if check_admissible(q, r, n) {
                prop_assert!(check_admissible(2.0 * q, r, n));
            }
        }
    }
}

//! Shared smooth cutoffs. Every multiplier and spatial window in the crate is built
//! from these so that constants are comparable across modules.

use serde::{Deserialize, Serialize};

/// Smoothness of a cutoff family: the `exp(-1/u)` construction is C-infinity, the
/// polynomial smoothsteps are only C^k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Smoothness {
    #[default]
    Exp,
    Poly(u32),
}

/// Standard bump `exp(1 - 1/(1 - u^2))` on (-1, 1), normalized to 1 at the origin.
pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

fn f(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl Smoothness {
    /// Monotone step: 0 for `u <= 0`, 1 for `u >= 1`, with `step(u) + step(1-u) = 1`.
    pub fn step(self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        match self {
            Smoothness::Exp => {
                let a = f(u);
                let b = f(1.0 - u);
                a / (a + b)
            }
            Smoothness::Poly(k) => {
                let s: f64 = (0..=k)
                    .map(|j| binomial(k + j, j) * binomial(2 * k + 1, k - j) * (-u).powi(j as i32))
                    .sum();
                u.powi(k as i32 + 1) * s
            }
        }
    }

    /// 1 on `[a1, b1]`, 0 outside `(a0, b0)`, smooth in between.
    pub fn plateau(self, x: f64, a0: f64, a1: f64, b1: f64, b0: f64) -> f64 {
        let rise = if a1 > a0 { self.step((x - a0) / (a1 - a0)) } else if x >= a0 { 1.0 } else { 0.0 };
        let fall = if b0 > b1 { 1.0 - self.step((x - b1) / (b0 - b1)) } else if x <= b0 { 1.0 } else { 0.0 };
        rise * fall
    }

    /// Radial cutoff: 1 for `u <= 1`, 0 for `u >= 2`.
    pub fn beta(self, u: f64) -> f64 {
        1.0 - self.step(u - 1.0)
    }

    /// Compactly supported bump on (-1, 1) with value 1 at 0; `Exp` gives [`bump`].
    pub fn bump(self, u: f64) -> f64 {
        match self {
            Smoothness::Exp => bump(u),
            Smoothness::Poly(_) => 1.0 - self.step(u.abs()),
        }
    }
}

/// Frequency-`lambda` annulus envelope: support `[lambda/2, 2 lambda]`, equal to 1 on
/// `[3 lambda/4, 3 lambda/2]`.
pub fn annulus(r: f64, lambda: f64) -> f64 {
    Smoothness::Exp.plateau(r, 0.5 * lambda, 0.75 * lambda, 1.5 * lambda, 2.0 * lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bump_values() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 0.0);
        assert_eq!(bump(-1.5), 0.0);
        assert!((bump(0.5) - (1.0f64 - 1.0 / 0.75).exp()).abs() < 1e-15);
    }

    #[test]
    fn annulus_support_and_plateau() {
        for lam in [0.5, 1.0, 4.0] {
            assert_eq!(annulus(0.5 * lam, lam), 0.0);
            assert_eq!(annulus(2.0 * lam, lam), 0.0);
            assert_eq!(annulus(0.49 * lam, lam), 0.0);
            assert_eq!(annulus(0.75 * lam, lam), 1.0);
            assert_eq!(annulus(1.2 * lam, lam), 1.0);
            assert_eq!(annulus(1.5 * lam, lam), 1.0);
            assert!(annulus(1.8 * lam, lam) > 0.0 && annulus(1.8 * lam, lam) < 1.0);
        }
    }

    #[test]
    fn poly_smoothstep_low_orders() {
        let p1 = Smoothness::Poly(1);
        assert!((p1.step(0.3) - (3.0 * 0.09 - 2.0 * 0.027)).abs() < 1e-14);
        let p0 = Smoothness::Poly(0);
        assert!((p0.step(0.3) - 0.3).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn step_is_symmetric_partition(u in 0.0f64..1.0, k in 0u32..6) {
            for s in [Smoothness::Exp, Smoothness::Poly(k)] {
                prop_assert!((s.step(u) + s.step(1.0 - u) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn step_is_monotone(u in 0.0f64..0.99, du in 0.0f64..0.01, k in 0u32..6) {
            for s in [Smoothness::Exp, Smoothness::Poly(k)] {
                prop_assert!(s.step(u + du) + 1e-14 >= s.step(u));
            }
        }
    }
}

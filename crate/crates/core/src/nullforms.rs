//! Null forms `Q_0`, `Q_{ab}`, their spacetime `L^2` norms over cubes, and the
//! null-frame derivatives `E_+`, `E_-`, `A_i` about a spacetime point.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Region, Repr, C64};
use crate::waves::FreeWave;

/// Null form selector. Index 0 is time, `1..=n` are the spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NullFormKind {
    Q0,
    Q(usize, usize),
}

impl NullFormKind {
    pub fn validate(self, dim: usize) -> Result<()> {
        match self {
            NullFormKind::Q0 => Ok(()),
            NullFormKind::Q(a, b) if a != b && a <= dim && b <= dim => Ok(()),
            NullFormKind::Q(a, b) => Err(Error::Parameter(format!("null form indices ({a}, {b}) in dimension {dim}"))),
        }
    }

    /// `Q_{ab}` with the two indices swapped.
    pub fn swapped(self) -> NullFormKind {
        match self {
            NullFormKind::Q(a, b) => NullFormKind::Q(b, a),
            q => q,
        }
    }
}

impl fmt::Display for NullFormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx = |i: usize| if i == 0 { "t".to_string() } else { i.to_string() };
        match self {
            NullFormKind::Q0 => write!(f, "Q0"),
            NullFormKind::Q(a, b) => write!(f, "Q{}{}", idx(*a), idx(*b)),
        }
    }
}

impl std::str::FromStr for NullFormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<NullFormKind> {
        let t = s.trim().trim_start_matches(['Q', 'q']);
        if t == "0" {
            return Ok(NullFormKind::Q0);
        }
        let idx = |c: char| match c {
            't' => Some(0),
            d => d.to_digit(10).map(|d| d as usize).filter(|&d| d >= 1),
        };
        let cs: Vec<char> = t.chars().collect();
        match cs.as_slice() {
            [a, b] => match (idx(*a), idx(*b)) {
                (Some(a), Some(b)) if a != b => Ok(NullFormKind::Q(a, b)),
                _ => Err(Error::Parameter(format!("null form {s}"))),
            },
            _ => Err(Error::Parameter(format!("null form {s}"))),
        }
    }
}

/// Pointwise null form from spacetime gradients `[d_t, d_1, ..., d_n]` of each factor.
pub fn nullform_from_gradients(kind: NullFormKind, dphi: &[Field], dpsi: &[Field]) -> Vec<C64> {
    let n = dphi[0].values().len();
    match kind {
        NullFormKind::Q0 => (0..n)
            .map(|i| {
                let mut q = dphi[0].values()[i] * dpsi[0].values()[i];
                for a in 1..dphi.len() {
                    q -= dphi[a].values()[i] * dpsi[a].values()[i];
                }
                q
            })
            .collect(),
        NullFormKind::Q(a, b) => (0..n)
            .map(|i| {
                dphi[a].values()[i] * dpsi[b].values()[i] - dphi[b].values()[i] * dpsi[a].values()[i]
            })
            .collect(),
    }
}

/// `Q(phi, psi)` at time `t` as a physical field.
pub fn eval_nullform(kind: NullFormKind, phi: &FreeWave, psi: &FreeWave, t: f64) -> Result<Field> {
    phi.grid().ensure_same(psi.grid())?;
    kind.validate(phi.grid().dim())?;
    let q = nullform_from_gradients(kind, &phi.gradient(t), &psi.gradient(t));
    Field::from_values(phi.grid(), q, Repr::Physical)
}

/// Spacetime cube `[x_c, x_c + side]^n x [t0, t0 + side]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeCube {
    pub corner: Vec<f64>,
    pub side: f64,
    pub t0: f64,
}

impl SpacetimeCube {
    /// `0 <= x_i <= R`, `R <= t <= 2R`.
    pub fn standard(dim: usize, r: f64) -> SpacetimeCube {
        SpacetimeCube { corner: vec![0.0; dim], side: r, t0: r }
    }

    pub fn region(&self) -> Region {
        Region::cube(&self.corner, self.side)
    }

    /// The cube must fit in one period of the box, and its time interval must lie in
    /// the horizon `[0, horizon]`.
    pub fn check(&self, grid: &Grid, horizon: f64) -> Result<()> {
        let inside = self.corner.len() == grid.dim()
            && self.side > 0.0
            && self.side <= grid.len()
            && self.corner.iter().all(|&c| (0.0..grid.len()).contains(&c))
            && self.t0 >= 0.0
            && self.t0 + self.side <= horizon + 1e-12;
        if inside {
            Ok(())
        } else {
            Err(Error::CubeOutsideBox)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeNorm {
    pub value: f64,
    /// Value with half as many time intervals.
    pub coarse: f64,
    pub samples: usize,
    /// Refining the time sampling moved the value by less than 0.5%.
    pub converged: bool,
}

/// Composite trapezoid rule in time of `||f(t)||^2_{L^2(region)}`, sampled at
/// `2 samples - 1` times so that the coarse rule with `samples` points reuses them.
pub fn spacetime_l2(
    grid: &Grid,
    region: &Region,
    t0: f64,
    duration: f64,
    samples: usize,
    mut f: impl FnMut(f64) -> Result<Vec<C64>>,
) -> Result<CubeNorm> {
    if samples < 2 {
        return Err(Error::Parameter("at least two time samples".into()));
    }
    let idx = region.indices(grid);
    if idx.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let fine = 2 * samples - 1;
    let dt = duration / (fine - 1) as f64;
    let mut sq = Vec::with_capacity(fine);
    for j in 0..fine {
        let v = f(t0 + j as f64 * dt)?;
        sq.push(idx.iter().map(|&i| v[i].norm_sqr()).sum::<f64>() * grid.cell_volume());
    }
    let trap = |vals: &[f64], h: f64| {
        let m = vals.len();
        h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[m - 1]))
    };
    let value = trap(&sq, dt).max(0.0).sqrt();
    let coarse_vals: Vec<f64> = sq.iter().step_by(2).cloned().collect();
    let coarse = trap(&coarse_vals, 2.0 * dt).max(0.0).sqrt();
    let converged = (value - coarse).abs() <= 0.005 * value.max(f64::MIN_POSITIVE) || value == coarse;
    Ok(CubeNorm { value, coarse, samples: fine, converged })
}

/// `||Q(phi, psi)||_{L^2(cube)}` with `samples` coarse time samples. The horizon for
/// the cube check is `3 * side` past the cube start time of the standard cube.
pub fn nullform_norm(
    kind: NullFormKind,
    phi: &FreeWave,
    psi: &FreeWave,
    cube: &SpacetimeCube,
    samples: usize,
) -> Result<CubeNorm> {
    phi.grid().ensure_same(psi.grid())?;
    kind.validate(phi.grid().dim())?;
    cube.check(phi.grid(), cube.t0 + cube.side)?;
    let g = phi.grid().clone();
    spacetime_l2(&g, &cube.region(), cube.t0, cube.side, samples, |t| {
        Ok(nullform_from_gradients(kind, &phi.gradient(t), &psi.gradient(t)))
    })
}

/// Null-frame derivatives of a wave about `(x0, t0)` at one time.
#[derive(Debug, Clone)]
pub struct NullFrame {
    pub e_plus: Vec<C64>,
    pub e_minus: Vec<C64>,
    /// Angular derivatives `A_i = d_i - omega_i d_r`.
    pub angular: Vec<Vec<C64>>,
    /// Spacetime gradient `[d_t, d_1, ..., d_n]`.
    pub gradient: Vec<Vec<C64>>,
    /// Points with `|x - x0| >= 4h`.
    pub valid: Vec<bool>,
    /// Measure of the excluded ball.
    pub excluded_measure: f64,
}

impl NullFrame {
    /// `|(E_+ phi, A phi)|` at point `i`.
    pub fn good_norm(&self, i: usize) -> f64 {
        (self.e_plus[i].norm_sqr() + self.angular.iter().map(|a| a[i].norm_sqr()).sum::<f64>()).sqrt()
    }

    /// `|grad_{t,x} phi|` at point `i`.
    pub fn full_norm(&self, i: usize) -> f64 {
        self.gradient.iter().map(|g| g[i].norm_sqr()).sum::<f64>().sqrt()
    }
}

fn sgn(t: f64) -> f64 {
    if t < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `E_+ = sgn(t - t0) d_t + d_r`, `E_- = sgn(t - t0) d_t - d_r`, `A_i = d_i - omega_i d_r`
/// with polar coordinates about `x0` (nearest periodic image). Values inside the
/// ball `|x - x0| < 4h` are set to zero.
pub fn null_frame_derivatives(phi: &FreeWave, t: f64, x0: &[f64], t0: f64) -> Result<NullFrame> {
    let g = phi.grid();
    if x0.len() != g.dim() {
        return Err(Error::Parameter("frame center dimension".into()));
    }
    let grad: Vec<Vec<C64>> = phi.gradient(t).into_iter().map(Field::into_values).collect();
    frame_from_gradient(g, grad, t - t0, x0)
}

pub(crate) fn frame_from_gradient(g: &Arc<Grid>, grad: Vec<Vec<C64>>, dt: f64, x0: &[f64]) -> Result<NullFrame> {
    let n = g.dim();
    let disp: Vec<Vec<f64>> = (0..n).map(|a| g.displacement(x0, a)).collect();
    let cut = 4.0 * g.spacing();
    let s = sgn(dt);
    let size = g.size();
    let mut e_plus = vec![C64::default(); size];
    let mut e_minus = vec![C64::default(); size];
    let mut angular = vec![vec![C64::default(); size]; n];
    let mut valid = vec![false; size];
    let mut excluded = 0usize;
    for i in 0..size {
        let r = (0..n).map(|a| disp[a][i] * disp[a][i]).sum::<f64>().sqrt();
        if r < cut {
            excluded += 1;
            continue;
        }
        valid[i] = true;
        let dr: C64 = (0..n).map(|a| grad[a + 1][i] * (disp[a][i] / r)).sum();
        e_plus[i] = s * grad[0][i] + dr;
        e_minus[i] = s * grad[0][i] - dr;
        for a in 0..n {
            angular[a][i] = grad[a + 1][i] - dr * (disp[a][i] / r);
        }
    }
    Ok(NullFrame {
        e_plus,
        e_minus,
        angular,
        gradient: grad,
        valid,
        excluded_measure: excluded as f64 * g.cell_volume(),
    })
}

/// Smallest `C` with `|Q(phi, psi)| <= C (|D phi||grad psi| + |grad phi||D psi|)` on
/// the valid frame region at time `t`, where `D = (E_+, A)` are the good derivatives.
/// Points where the right side is below `floor` times its maximum are skipped.
pub fn cancellation_constant(
    kind: NullFormKind,
    phi: &FreeWave,
    psi: &FreeWave,
    t: f64,
    x0: &[f64],
    t0: f64,
    floor: f64,
) -> Result<f64> {
    phi.grid().ensure_same(psi.grid())?;
    let g = phi.grid();
    let dphi = phi.gradient(t);
    let dpsi = psi.gradient(t);
    let q = nullform_from_gradients(kind, &dphi, &dpsi);
    let fa = frame_from_gradient(g, dphi.into_iter().map(Field::into_values).collect(), t - t0, x0)?;
    let fb = frame_from_gradient(g, dpsi.into_iter().map(Field::into_values).collect(), t - t0, x0)?;
    let rhs: Vec<f64> = (0..g.size())
        .map(|i| fa.good_norm(i) * fb.full_norm(i) + fa.full_norm(i) * fb.good_norm(i))
        .collect();
    let top = rhs.iter().cloned().fold(0.0, f64::max);
    let mut c: f64 = 0.0;
    for i in 0..g.size() {
        if fa.valid[i] && rhs[i] > floor * top {
            c = c.max(q[i].norm() / rhs[i]);
        }
    }
    Ok(c)
}

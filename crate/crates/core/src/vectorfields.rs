//! Poincare vector fields applied to free waves, weighted energies and the decay
//! estimates they yield.
//!
//! Coordinates are taken about the field center with the torus minimal image, so
//! `x_i` jumps across the cut opposite the center. Identities involving `x_i` hold
//! only while the wave stays away from that cut.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{loglog_fit, PowerFit};
use crate::grid::{Field, Grid, Repr, C64};
use crate::nullforms::{frame_from_gradient, nullform_from_gradients, NullFormKind};
use crate::waves::{Deriv, FreeWave, WaveState};

/// Weighted tail (relative to `E^{1/2}`) below which data counts as localized.
pub const GOOD_DECAY_TOL: f64 = 0.1;
/// Weight order used for the localization hypothesis.
pub const GOOD_DECAY_ORDER: i32 = 2;
/// Largest angle between mean propagation directions for a parallel pair.
pub const PARALLEL_ANGLE: f64 = std::f64::consts::FRAC_PI_4;

/// Field kinds. Spatial indices are 1-based as in `L_1, Omega_12`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldKind {
    /// `S = t d_t + r d_r`.
    Scaling,
    /// `L_i = x_i d_t + t d_i`.
    Boost(usize),
    /// `Omega_ij = x_i d_j - x_j d_i`.
    Rotation(usize, usize),
    Dx(usize),
    Dt,
    /// `d_t + d_1`.
    NullPair,
}

impl FieldKind {
    pub fn validate(self, dim: usize) -> Result<()> {
        let ok = match self {
            FieldKind::Boost(i) | FieldKind::Dx(i) => (1..=dim).contains(&i),
            FieldKind::Rotation(i, j) => i >= 1 && i < j && j <= dim,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("field {self} in dimension {dim}")))
        }
    }

    /// `(S, L_1, .., L_n, Omega_12, .., Omega_{n-1,n})`.
    pub fn gamma(dim: usize) -> Vec<FieldKind> {
        let mut v = vec![FieldKind::Scaling];
        v.extend((1..=dim).map(FieldKind::Boost));
        for i in 1..=dim {
            for j in i + 1..=dim {
                v.push(FieldKind::Rotation(i, j));
            }
        }
        v
    }

    fn uses_coordinates(self) -> bool {
        matches!(self, FieldKind::Scaling | FieldKind::Boost(_) | FieldKind::Rotation(..))
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKind::Scaling => write!(f, "S"),
            FieldKind::Boost(i) => write!(f, "L{i}"),
            FieldKind::Rotation(i, j) => write!(f, "O{i}{j}"),
            FieldKind::Dx(i) => write!(f, "d{i}"),
            FieldKind::Dt => write!(f, "dt"),
            FieldKind::NullPair => write!(f, "dt+d1"),
        }
    }
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<FieldKind> {
        let bad = || Error::Parameter(format!("vector field {s}"));
        let digit = |c: char| c.to_digit(10).map(|d| d as usize).filter(|&d| d >= 1).ok_or_else(bad);
        let t = s.trim();
        let cs: Vec<char> = t.chars().collect();
        match (t, cs.as_slice()) {
            ("S", _) => Ok(FieldKind::Scaling),
            ("dt", _) => Ok(FieldKind::Dt),
            ("dt+d1", _) => Ok(FieldKind::NullPair),
            (_, ['L', i]) => Ok(FieldKind::Boost(digit(*i)?)),
            (_, ['d', i]) => Ok(FieldKind::Dx(digit(*i)?)),
            (_, ['O', i, j]) => Ok(FieldKind::Rotation(digit(*i)?, digit(*j)?)),
            _ => Err(bad()),
        }
    }
}

/// A field translated to be centered at `(center, t0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareField {
    pub kind: FieldKind,
    pub center: Vec<f64>,
    pub t0: f64,
}

impl PoincareField {
    pub fn new(kind: FieldKind, center: Vec<f64>, t0: f64) -> Result<PoincareField> {
        kind.validate(center.len())?;
        Ok(PoincareField { kind, center, t0 })
    }

    pub fn at_origin(kind: FieldKind, dim: usize) -> Result<PoincareField> {
        PoincareField::new(kind, vec![0.0; dim], 0.0)
    }
}

/// Physical fields of a wave at one time: `d_t`, `d_a`, `d_t d_a`, `d_t^2`.
struct Jet {
    v: Vec<C64>,
    dx: Vec<Vec<C64>>,
    dtx: Vec<Vec<C64>>,
    dtt: Vec<C64>,
}

impl Jet {
    fn new(w: &FreeWave, t: f64) -> Jet {
        let g = w.grid();
        let n = g.dim();
        let mut ops = vec![Deriv::Dt, Deriv::Dtt];
        ops.extend((0..n).map(Deriv::Dx));
        ops.extend((0..n).map(Deriv::DtDx));
        let mut f = w.fields_at(t, &ops).into_iter().map(Field::into_values);
        let v = f.next().unwrap();
        let dtt = f.next().unwrap();
        let dx = (0..n).map(|_| f.next().unwrap()).collect();
        let dtx = (0..n).map(|_| f.next().unwrap()).collect();
        Jet { v, dx, dtx, dtt }
    }
}

/// `F phi` and `d_t F phi` at time `t`.
pub fn apply_field(w: &FreeWave, f: &PoincareField, t: f64) -> Result<WaveState> {
    let g = w.grid();
    if f.center.len() != g.dim() {
        return Err(Error::Parameter("field center dimension".into()));
    }
    f.kind.validate(g.dim())?;
    let jet = Jet::new(w, t);
    let x: Vec<Vec<f64>> = if f.kind.uses_coordinates() {
        (0..g.dim()).map(|a| g.displacement(&f.center, a)).collect()
    } else {
        Vec::new()
    };
    let tau = t - f.t0;
    let size = g.size();
    let (pos, vel): (Vec<C64>, Vec<C64>) = match f.kind {
        FieldKind::Dx(i) => (jet.dx[i - 1].clone(), jet.dtx[i - 1].clone()),
        FieldKind::Dt => (jet.v.clone(), jet.dtt.clone()),
        FieldKind::NullPair => (
            (0..size).map(|k| jet.v[k] + jet.dx[0][k]).collect(),
            (0..size).map(|k| jet.dtt[k] + jet.dtx[0][k]).collect(),
        ),
        FieldKind::Boost(i) => {
            let a = i - 1;
            (
                (0..size).map(|k| tau * jet.dx[a][k] + x[a][k] * jet.v[k]).collect(),
                (0..size).map(|k| jet.dx[a][k] + tau * jet.dtx[a][k] + x[a][k] * jet.dtt[k]).collect(),
            )
        }
        FieldKind::Rotation(i, j) => {
            let (a, b) = (i - 1, j - 1);
            (
                (0..size).map(|k| x[a][k] * jet.dx[b][k] - x[b][k] * jet.dx[a][k]).collect(),
                (0..size).map(|k| x[a][k] * jet.dtx[b][k] - x[b][k] * jet.dtx[a][k]).collect(),
            )
        }
        FieldKind::Scaling => {
            let mut pos: Vec<C64> = jet.v.iter().map(|v| tau * v).collect();
            let mut vel: Vec<C64> = (0..size).map(|k| jet.v[k] + tau * jet.dtt[k]).collect();
            for a in 0..g.dim() {
                for k in 0..size {
                    pos[k] += x[a][k] * jet.dx[a][k];
                    vel[k] += x[a][k] * jet.dtx[a][k];
                }
            }
            (pos, vel)
        }
    };
    WaveState::new(Field::from_values(g, pos, Repr::Physical)?, Field::from_values(g, vel, Repr::Physical)?, t)
}

/// The free wave with data `F phi[t0]`. The mean of the velocity, which the cut in
/// the coordinates can leave behind, is discarded.
pub fn field_wave(w: &FreeWave, f: &PoincareField) -> Result<FreeWave> {
    let d = apply_field(w, f, f.t0)?;
    Ok(FreeWave::from_data_projected(&d)?.0)
}

/// `E(F phi(t) - e^{itD}(F phi[0]))` relative to `E(F phi(t))`; the absolute error
/// when `F phi` vanishes.
///
/// For fields with coordinates both energies are taken over the coordinate-cut
/// window: the cube of half-side `L/2 - |t - t0|` about the field center, which
/// nothing generated at the cut can reach by time `t`.
pub fn commutation_check(w: &FreeWave, f: &PoincareField, t: f64) -> Result<f64> {
    let evolved = field_wave(w, f)?.evaluate(t);
    let direct = apply_field(w, f, t)?;
    let diff = direct.sub(&evolved)?;
    let (diff, scale) = if f.kind.uses_coordinates() {
        let g = w.grid();
        let half = 0.5 * g.len() - (t - f.t0).abs();
        if half <= 0.0 {
            return Err(Error::Parameter(format!("t = {t} leaves no coordinate-cut window")));
        }
        let x: Vec<Vec<f64>> = (0..g.dim()).map(|a| g.displacement(&f.center, a)).collect();
        let inside: Vec<bool> = (0..g.size()).map(|k| x.iter().all(|xa| xa[k].abs() < half)).collect();
        let window = |e: Vec<f64>| e.iter().zip(&inside).filter(|(_, &i)| i).map(|(v, _)| v).sum::<f64>() * g.cell_volume();
        (window(diff.energy_density()?), window(direct.energy_density()?))
    } else {
        (diff.energy()?, direct.energy()?)
    };
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// `(1/2 int (1 + mu |x - c|)^{2k} |grad_{x,t} phi(0)|^2)^{1/2}`.
pub fn weighted_norm(w: &FreeWave, center: &[f64], mu: f64, k: i32) -> f64 {
    let g = w.grid();
    let d = g.distance_to(center);
    let e = w.energy_density(0.0);
    (e.iter().zip(&d).map(|(e, r)| (1.0 + mu * r).powi(2 * k) * e).sum::<f64>() * g.cell_volume()).sqrt()
}

/// Weighted tail `(int_{|x-c| > 4 Lambda} (|x-c|/4 Lambda)^{2m} e(x) dx)^{1/2} / E^{1/2}`
/// of the energy density at time `t`.
pub fn good_decay_tail(w: &FreeWave, center: &[f64], big_lambda: f64, t: f64, order: i32) -> f64 {
    let g = w.grid();
    let d = g.distance_to(center);
    let e = w.energy_density(t);
    let tail: f64 = e
        .iter()
        .zip(&d)
        .filter(|(_, &r)| r > 4.0 * big_lambda)
        .map(|(e, r)| (r / (4.0 * big_lambda)).powi(2 * order) * e)
        .sum::<f64>()
        * g.cell_volume();
    let total = w.energy();
    if total > 0.0 {
        (tail / total).sqrt()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiIndexEnergy {
    pub fields: Vec<FieldKind>,
    /// `E(Gamma^alpha phi)^{1/2}`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEnergy {
    pub k: usize,
    /// Weighted norm of the data.
    pub lhs: f64,
    pub terms: Vec<MultiIndexEnergy>,
    /// Largest `E(Gamma^alpha phi)^{1/2} / lhs`.
    pub ratio: f64,
}

/// Multi-indices over `fields` of length `k`: all of them for `k <= 2`, otherwise
/// `samples` distinct ones drawn with `seed`.
pub fn field_words(fields: &[FieldKind], k: usize, samples: usize, seed: u64) -> Vec<Vec<FieldKind>> {
    let m = fields.len();
    let total = m.pow(k as u32);
    let word = |mut c: usize| -> Vec<FieldKind> {
        let mut v = Vec::with_capacity(k);
        for _ in 0..k {
            v.push(fields[c % m]);
            c /= m;
        }
        v
    };
    if k <= 2 || samples >= total {
        return (0..total).map(word).collect();
    }
    let mut codes: Vec<usize> = (0..total).collect();
    codes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    codes.truncate(samples);
    codes.sort_unstable();
    codes.into_iter().map(word).collect()
}

/// Compare `E(Gamma^alpha phi)^{1/2}` for `|alpha| = k` with the weighted norm of
/// the data, the fields centered at `(center, 0)`.
pub fn weighted_energy(w: &FreeWave, center: &[f64], mu: f64, k: usize, samples: usize, seed: u64) -> Result<WeightedEnergy> {
    if k > 4 {
        return Err(Error::Parameter(format!("weighted energy order {k} > 4")));
    }
    let dim = w.grid().dim();
    let words = field_words(&FieldKind::gamma(dim), k, samples, seed);
    let terms = words
        .into_par_iter()
        .map(|word| {
            let mut cur = w.clone();
            for &kind in &word {
                cur = field_wave(&cur, &PoincareField::new(kind, center.to_vec(), 0.0)?)?;
            }
            Ok(MultiIndexEnergy { fields: word, value: cur.energy().sqrt() })
        })
        .collect::<Result<Vec<_>>>()?;
    let lhs = weighted_norm(w, center, mu, k as i32);
    let worst = terms.iter().map(|t| t.value).fold(0.0, f64::max);
    Ok(WeightedEnergy { k, lhs, terms, ratio: if lhs > 0.0 { worst / lhs } else { 0.0 } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    pub big_lambda: f64,
    pub big_r: f64,
    pub times: Vec<f64>,
    /// Sup of `|grad_{x,t} phi|` over `r <= t/2`.
    pub interior: Vec<f64>,
    /// Over `r >= 2t`; zero where the region is empty.
    pub exterior: Vec<f64>,
    /// Over `t/2 < r < 2t`.
    pub shell: Vec<f64>,
    /// Point counts of the three regions at each time.
    pub counts: Vec<[usize; 3]>,
    /// Localization tail of the data at time zero.
    pub tail: f64,
    pub hypothesis_met: bool,
    /// Fit of the shell sup against `Lambda / t`.
    pub shell_fit: Option<PowerFit>,
    /// `max(interior, exterior) / (Lambda / R)`.
    pub rapid_ratio: f64,
}

impl DecayProfile {
    pub fn shell_max(&self) -> f64 {
        self.shell.iter().cloned().fold(0.0, f64::max)
    }

    pub fn exterior_max(&self) -> f64 {
        self.exterior.iter().cloned().fold(0.0, f64::max)
    }
}

/// Region sups of `|grad_{x,t} phi(t)|` about `center` at the given times, each
/// expected in `[R, 2R]`.
pub fn decay_profile(w: &FreeWave, center: &[f64], big_lambda: f64, big_r: f64, times: &[f64]) -> Result<DecayProfile> {
    if times.is_empty() || times.iter().any(|&t| t <= 0.0) {
        return Err(Error::Parameter("decay profile needs positive times".into()));
    }
    let g = w.grid();
    let d = g.distance_to(center);
    let rows: Vec<([f64; 3], [usize; 3])> = times
        .par_iter()
        .map(|&t| {
            let grad = w.gradient(t);
            let mut sup = [0.0f64; 3];
            let mut cnt = [0usize; 3];
            for i in 0..g.size() {
                let m = grad.iter().map(|f| f.values()[i].norm_sqr()).sum::<f64>().sqrt();
                let region = if d[i] <= 0.5 * t {
                    0
                } else if d[i] >= 2.0 * t {
                    1
                } else {
                    2
                };
                sup[region] = sup[region].max(m);
                cnt[region] += 1;
            }
            (sup, cnt)
        })
        .collect();
    let tail = good_decay_tail(w, center, big_lambda, 0.0, GOOD_DECAY_ORDER);
    let shell: Vec<f64> = rows.iter().map(|r| r.0[2]).collect();
    let shell_fit = if times.len() >= 2 {
        let x: Vec<f64> = times.iter().map(|t| big_lambda / t).collect();
        loglog_fit(&x, &shell).ok()
    } else {
        None
    };
    let away = rows.iter().map(|r| r.0[0].max(r.0[1])).fold(0.0, f64::max);
    Ok(DecayProfile {
        big_lambda,
        big_r,
        times: times.to_vec(),
        interior: rows.iter().map(|r| r.0[0]).collect(),
        exterior: rows.iter().map(|r| r.0[1]).collect(),
        shell,
        counts: rows.iter().map(|r| r.1).collect(),
        tail,
        hypothesis_met: tail <= GOOD_DECAY_TOL,
        shell_fit,
        rapid_ratio: away / (big_lambda / big_r),
    })
}

/// Fit of the largest shell sup of each profile against `Lambda / R`.
pub fn shell_scaling(profiles: &[DecayProfile]) -> Result<PowerFit> {
    let x: Vec<f64> = profiles.iter().map(|p| p.big_lambda / p.big_r).collect();
    let y: Vec<f64> = profiles.iter().map(DecayProfile::shell_max).collect();
    loglog_fit(&x, &y)
}

/// Fit of the largest exterior sup against `R / Lambda`; the decay order is minus
/// the slope. Profiles with an empty or vanishing exterior are skipped.
pub fn exterior_scaling(profiles: &[DecayProfile]) -> Result<PowerFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = profiles
        .iter()
        .filter(|p| p.exterior_max() > 0.0)
        .map(|p| (p.big_r / p.big_lambda, p.exterior_max()))
        .unzip();
    loglog_fit(&x, &y)
}

/// Energy-weighted mean propagation direction.
pub fn mean_direction(w: &FreeWave) -> Option<Vec<f64>> {
    let g = w.grid();
    let k = g.kmag();
    let mut m = vec![0.0; g.dim()];
    for i in 1..g.size() {
        // a_plus modes travel along -xi, a_minus along +xi.
        let e = k[i] * (w.a_minus()[i].norm_sqr() - w.a_plus()[i].norm_sqr());
        for (a, v) in m.iter_mut().enumerate() {
            *v += e * g.xi(i, a);
        }
    }
    let n = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    (n > 0.0).then(|| m.iter().map(|v| v / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelSetup {
    pub center: Vec<f64>,
    pub t0: f64,
    pub big_lambda: f64,
    pub big_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedTime {
    pub t: f64,
    /// `||Q(phi, psi)(t)||_2`.
    pub norm: f64,
    /// `(Lambda/R)^{(n+1)/2} E(phi)^{1/2} E(psi)^{1/2}`.
    pub envelope: f64,
    pub ratio: f64,
    /// Hypotheses that do not hold for this pair.
    pub violations: Vec<String>,
}

/// Fixed-time null form norm against `(Lambda/R)^{(n+1)/2}`. Violated hypotheses
/// are listed; the ratio is computed regardless.
pub fn fixed_time_parallel_ratio(
    kind: NullFormKind,
    phi: &FreeWave,
    psi: &FreeWave,
    setup: &ParallelSetup,
    t: f64,
) -> Result<FixedTime> {
    phi.grid().ensure_same(psi.grid())?;
    let g = phi.grid();
    kind.validate(g.dim())?;
    let (lam, r) = (setup.big_lambda, setup.big_r);
    let mut violations = Vec::new();
    if lam * lam <= r {
        violations.push(format!("Lambda^2 = {} <= R", lam * lam));
    }
    if lam >= 0.5 * r {
        violations.push(format!("Lambda = {lam} >= R/2"));
    }
    if !(r..=2.0 * r).contains(&t) {
        violations.push(format!("t = {t} outside [R, 2R]"));
    }
    if setup.t0 < 0.0 || setup.t0 > 0.5 * r {
        violations.push(format!("t0 = {} outside [0, R/2]", setup.t0));
    }
    for (name, w) in [("phi", phi), ("psi", psi)] {
        let tail = good_decay_tail(w, &setup.center, lam, setup.t0, GOOD_DECAY_ORDER);
        if tail > GOOD_DECAY_TOL {
            violations.push(format!("{name} not localized (tail {tail:.3e})"));
        }
    }
    if let (Some(a), Some(b)) = (mean_direction(phi), mean_direction(psi)) {
        let ang = crate::geometry::angle(&a, &b);
        if ang > PARALLEL_ANGLE {
            violations.push(format!("not parallel (angle {ang:.3})"));
        }
    }
    let q = nullform_from_gradients(kind, &phi.gradient(t), &psi.gradient(t));
    let norm = (q.iter().map(|v| v.norm_sqr()).sum::<f64>() * g.cell_volume()).sqrt();
    let envelope = (lam / r).powf(0.5 * (g.dim() as f64 + 1.0)) * (phi.energy() * psi.energy()).sqrt();
    Ok(FixedTime { t, norm, envelope, ratio: if envelope > 0.0 { norm / envelope } else { 0.0 }, violations })
}

/// Sup of `|(E_+, A) phi|` over sup of `|E_- phi|` on sub-shells
/// `edges[j] <= | |t| - |x - c| | < edges[j+1]` at time `t`. Empty or vanishing
/// sub-shells give `None`.
pub fn k_decay_trend(w: &FreeWave, center: &[f64], t: f64, edges: &[f64]) -> Result<Vec<Option<f64>>> {
    let g = w.grid();
    let frame = frame_from_gradient(g, w.gradient(t).into_iter().map(Field::into_values).collect(), t, center)?;
    let d = g.distance_to(center);
    let nshell = edges.len().saturating_sub(1);
    let mut good = vec![0.0f64; nshell];
    let mut bad = vec![0.0f64; nshell];
    for i in 0..g.size() {
        if !frame.valid[i] {
            continue;
        }
        let off = (t.abs() - d[i]).abs();
        if let Some(j) = (0..nshell).find(|&j| off >= edges[j] && off < edges[j + 1]) {
            good[j] = good[j].max(frame.good_norm(i));
            bad[j] = bad[j].max(frame.e_minus[i].norm());
        }
    }
    Ok(good.iter().zip(&bad).map(|(&a, &b)| (b > 0.0).then(|| a / b)).collect())
}

/// `||u||_inf / (||u||_{L^1} + ||d_theta u||_{L^1})` for `u` sampled uniformly on
/// the circle; the derivative is spectral.
pub fn angular_sobolev_ratio(u: &[f64]) -> f64 {
    let m = u.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<C64> = u.iter().map(|&v| C64::new(v, 0.0)).collect();
    planner.plan_fft_forward(m).process(&mut buf);
    for (j, c) in buf.iter_mut().enumerate() {
        let k = if j <= m / 2 { j as f64 } else { j as f64 - m as f64 };
        // The Nyquist mode has no consistent real derivative.
        *c *= if 2 * j == m { C64::default() } else { C64::new(0.0, k) };
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let dtheta = 2.0 * std::f64::consts::PI / m as f64;
    let l1: f64 = u.iter().map(|v| v.abs()).sum::<f64>() * dtheta;
    let dl1: f64 = buf.iter().map(|c| c.re.abs() / m as f64).sum::<f64>() * dtheta;
    let sup = u.iter().map(|v| v.abs()).fold(0.0, f64::max);
    sup / (l1 + dl1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanningDefect {
    /// `(t + r) E_+ = S + sum omega_i L_i`.
    pub e_plus: f64,
    /// `(t - r) E_- = S - sum omega_i L_i`.
    pub e_minus: f64,
    /// `t A_i = L_i - omega_i sum_j omega_j L_j`.
    pub angular: f64,
}

/// Largest pointwise defect of the null-frame identities at time `t > t0`, relative
/// to the largest value of the right sides, away from the ball `|x - x0| < 4h`.
pub fn spanning_identities(w: &FreeWave, x0: &[f64], t0: f64, t: f64) -> Result<SpanningDefect> {
    if t <= t0 {
        return Err(Error::Parameter("spanning identities need t > t0".into()));
    }
    let g: &Arc<Grid> = w.grid();
    let n = g.dim();
    let field = |kind| -> Result<Vec<C64>> {
        Ok(apply_field(w, &PoincareField::new(kind, x0.to_vec(), t0)?, t)?.pos.into_values())
    };
    let s = field(FieldKind::Scaling)?;
    let l: Vec<Vec<C64>> = (1..=n).map(|i| field(FieldKind::Boost(i))).collect::<Result<_>>()?;
    let frame = frame_from_gradient(g, w.gradient(t).into_iter().map(Field::into_values).collect(), t - t0, x0)?;
    let x: Vec<Vec<f64>> = (0..n).map(|a| g.displacement(x0, a)).collect();
    let tau = t - t0;
    let (mut dp, mut dm, mut da) = (0.0f64, 0.0f64, 0.0f64);
    let (mut sp, mut sm, mut sa) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..g.size() {
        if !frame.valid[i] {
            continue;
        }
        let r = (0..n).map(|a| x[a][i] * x[a][i]).sum::<f64>().sqrt();
        let wl: C64 = (0..n).map(|a| l[a][i] * (x[a][i] / r)).sum();
        let rp = s[i] + wl;
        let rm = s[i] - wl;
        dp = dp.max(((tau + r) * frame.e_plus[i] - rp).norm());
        dm = dm.max(((tau - r) * frame.e_minus[i] - rm).norm());
        sp = sp.max(rp.norm());
        sm = sm.max(rm.norm());
        for a in 0..n {
            let ra = l[a][i] - (x[a][i] / r) * wl;
            da = da.max((tau * frame.angular[a][i] - ra).norm());
            sa = sa.max(ra.norm());
        }
    }
    let rel = |d: f64, s: f64| if s > 0.0 { d / s } else { d };
    Ok(SpanningDefect { e_plus: rel(dp, sp), e_minus: rel(dm, sm), angular: rel(da, sa) })
}

/// `||Q||_2` from precomputed gradients `[d_t, d_1, .., d_n]` of both factors.
pub fn nullform_l2(kind: NullFormKind, dphi: &[Field], dpsi: &[Field]) -> f64 {
    let g = dphi[0].grid();
    let q = nullform_from_gradients(kind, dphi, dpsi);
    (q.iter().map(|v| v.norm_sqr()).sum::<f64>() * g.cell_volume()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waves::{point_source, random_wave, Localization, Sign};
    use proptest::prelude::*;
    use rand::Rng;

    fn localized(lambda: f64, radius: f64, seed: u64) -> FreeWave {
        let g = Grid::new(2, 256, 128.0).unwrap();
        let loc = Localization { center: vec![64.0, 64.0], radius };
        random_wave(&g, lambda, seed, Some(&loc)).unwrap()
    }

    fn field(kind: FieldKind) -> PoincareField {
        PoincareField::new(kind, vec![64.0, 64.0], 0.0).unwrap()
    }

    #[test]
    fn field_names_round_trip() {
        for k in [
            FieldKind::Scaling,
            FieldKind::Boost(2),
            FieldKind::Rotation(1, 2),
            FieldKind::Dx(1),
            FieldKind::Dt,
            FieldKind::NullPair,
        ] {
            assert_eq!(k.to_string().parse::<FieldKind>().unwrap(), k);
        }
        assert!("O21".parse::<FieldKind>().unwrap().validate(2).is_err());
        assert!(FieldKind::Boost(3).validate(2).is_err());
        assert!("X".parse::<FieldKind>().is_err());
        assert_eq!(FieldKind::gamma(3).len(), 7);
    }

    #[test]
    fn rotation_kills_radial_wave() {
        let g = Grid::new(2, 256, 128.0).unwrap();
        let w = point_source(&g, 2.0, &[64.0, 64.0]).unwrap();
        for t in [0.0, 10.0] {
            let rot = apply_field(&w, &field(FieldKind::Rotation(1, 2)), t).unwrap();
            let d1 = apply_field(&w, &field(FieldKind::Dx(1)), t).unwrap();
            let scale = d1.pos.values().iter().map(|v| v.norm()).fold(0.0, f64::max) * 64.0;
            let worst = rot.pos.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
            // The periodized kernel is radial only up to its images.
            assert!(worst < 1e-5 * scale, "{worst} vs {scale}");
        }
    }

    #[test]
    fn boost_on_plane_wave_matches_closed_form() {
        let g = Grid::new(2, 64, 32.0).unwrap();
        let k = [3i64, -2];
        let w = FreeWave::plane(&g, &k, Sign::Minus, C64::new(1.0, 0.0)).unwrap();
        let xi: Vec<f64> = k.iter().map(|&m| 2.0 * std::f64::consts::PI * m as f64 / 32.0).collect();
        let kn = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        let center = [16.0, 16.0];
        let t = 2.5;
        let f = PoincareField::new(FieldKind::Boost(1), center.to_vec(), 0.0).unwrap();
        let got = apply_field(&w, &f, t).unwrap();
        let phi = w.evaluate(t).pos;
        let x = g.displacement(&center, 0);
        let amp = phi.values()[0].norm();
        for i in 0..g.size() {
            let want = (C64::new(0.0, -kn) * x[i] + C64::new(0.0, t * xi[0])) * phi.values()[i];
            assert!((got.pos.values()[i] - want).norm() < 1e-9 * amp * (1.0 + kn * 16.0), "{i}");
        }
    }

    #[test]
    fn null_pair_annihilates_aligned_plane_wave() {
        let g = Grid::new(2, 64, 32.0).unwrap();
        let w = FreeWave::plane(&g, &[4, 0], Sign::Minus, C64::new(1.0, 0.0)).unwrap();
        let f = PoincareField::at_origin(FieldKind::NullPair, 2).unwrap();
        let s = apply_field(&w, &f, 1.7).unwrap();
        let scale = w.evaluate(1.7).pos.values()[0].norm();
        assert!(s.pos.values().iter().all(|v| v.norm() < 1e-12 * scale.max(1.0)));
        assert!(s.vel.values().iter().all(|v| v.norm() < 1e-12 * scale.max(1.0)));
    }

    #[test]
    fn fields_commute_with_evolution() {
        // A box of side 256 keeps the tails away from the coordinate cut.
        let g = Grid::new(2, 512, 256.0).unwrap();
        let c = vec![128.0, 128.0];
        let w = random_wave(&g, 2.0, 3, Some(&Localization { center: c.clone(), radius: 8.0 })).unwrap();
        let f = |kind| PoincareField::new(kind, c.clone(), 0.0).unwrap();
        assert!(commutation_check(&w, &f(FieldKind::Dx(1)), 16.0).unwrap() < 1e-11);
        for kind in [FieldKind::Boost(1), FieldKind::Rotation(1, 2), FieldKind::Scaling, FieldKind::Dt] {
            for t in [8.0, 32.0] {
                let e = commutation_check(&w, &f(kind), t).unwrap();
                assert!(e < 1e-8, "{kind} at {t}: {e}");
            }
        }
    }

    #[test]
    fn weighted_energy_base_case_and_bound() {
        let w = localized(1.0, 6.0, 5);
        let e0 = weighted_energy(&w, &[64.0, 64.0], 1.0, 0, 0, 0).unwrap();
        assert_eq!(e0.terms.len(), 1);
        assert!((e0.lhs - w.energy().sqrt()).abs() < 1e-11);
        assert!((e0.terms[0].value - w.energy().sqrt()).abs() < 1e-11);
        let e1 = weighted_energy(&w, &[64.0, 64.0], 1.0, 1, 0, 0).unwrap();
        assert_eq!(e1.terms.len(), 4);
        assert!(e1.ratio > 0.05 && e1.ratio < 10.0, "{}", e1.ratio);
        assert!(weighted_energy(&w, &[64.0, 64.0], 1.0, 5, 0, 0).is_err());
    }

    #[test]
    fn word_sampling() {
        let gamma = FieldKind::gamma(2);
        assert_eq!(field_words(&gamma, 2, 3, 0).len(), 16);
        let w3 = field_words(&gamma, 3, 10, 7);
        assert_eq!(w3.len(), 10);
        let mut d = w3.clone();
        d.dedup();
        assert_eq!(d.len(), 10);
        assert_eq!(w3, field_words(&gamma, 3, 10, 7));
    }

    #[test]
    fn decay_regions_partition_and_flag_plane_waves() {
        let w = localized(1.0, 4.0, 2);
        let g = w.grid().clone();
        let p = decay_profile(&w, &[64.0, 64.0], 4.0, 16.0, &[16.0, 24.0, 32.0]).unwrap();
        assert!(p.counts.iter().all(|c| c.iter().sum::<usize>() == g.size()));
        assert!(p.hypothesis_met, "{}", p.tail);
        assert!(p.shell_fit.is_some());
        let plane = FreeWave::plane(&g, &[8, 0], Sign::Plus, C64::new(1.0, 0.0)).unwrap();
        let q = decay_profile(&plane, &[64.0, 64.0], 4.0, 16.0, &[16.0]).unwrap();
        assert!(!q.hypothesis_met);
        assert!(decay_profile(&w, &[64.0, 64.0], 4.0, 16.0, &[]).is_err());
    }

    #[test]
    fn spanning_identities_hold_pointwise() {
        let w = localized(1.0, 6.0, 9);
        let d = spanning_identities(&w, &[64.0, 64.0], 0.0, 20.0).unwrap();
        assert!(d.e_plus < 1e-9 && d.e_minus < 1e-9 && d.angular < 1e-9, "{d:?}");
        assert!(spanning_identities(&w, &[64.0, 64.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn antisymmetric_form_vanishes_on_diagonal() {
        let w = localized(1.0, 6.0, 4);
        let setup = ParallelSetup { center: vec![64.0, 64.0], t0: 0.0, big_lambda: 6.0, big_r: 16.0 };
        let f = fixed_time_parallel_ratio(NullFormKind::Q(1, 2), &w, &w, &setup, 20.0).unwrap();
        assert_eq!(f.norm, 0.0);
        assert!(f.violations.is_empty(), "{:?}", f.violations);
        let late = fixed_time_parallel_ratio(NullFormKind::Q0, &w, &w, &setup, 40.0).unwrap();
        assert_eq!(late.violations.len(), 1);
    }

    #[test]
    fn good_derivatives_win_near_the_cone() {
        let w = localized(1.0, 4.0, 6);
        let trend = k_decay_trend(&w, &[64.0, 64.0], 32.0, &[0.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
        let r: Vec<f64> = trend.iter().map(|v| v.unwrap()).collect();
        assert!(r[0] < r[r.len() - 1], "{r:?}");
    }

    #[test]
    fn angular_sobolev_constant_function() {
        let u = vec![1.0; 64];
        assert!((angular_sobolev_ratio(&u) - 0.5 / std::f64::consts::PI).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn angular_sobolev_holds_for_trig_polynomials(seed in 0u64..1000, modes in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c: Vec<(f64, f64)> = (0..=modes).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let m = 256;
            let u: Vec<f64> = (0..m)
                .map(|j| {
                    let th = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                    c.iter().enumerate().map(|(k, (a, b))| a * (k as f64 * th).cos() + b * (k as f64 * th).sin()).sum()
                })
                .collect();
            prop_assert!(angular_sobolev_ratio(&u) <= 4.0);
        }
    }
}

//! Free waves in the half-wave representation with exact spectral evolution.
//!
//! A wave is stored as `(a_plus, a_minus)` with
//! `phi_hat(t) = e^{it|xi|} a_plus + e^{-it|xi|} a_minus`. An `a_plus` mode at `xi`
//! therefore travels in the direction `-xi/|xi|`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bump::{annulus, bump};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, GridSpec, Repr, C64};

/// Relative size of the mean velocity tolerated by [`FreeWave::from_data`].
const MEAN_VELOCITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct WaveState {
    pub pos: Field,
    pub vel: Field,
    pub time: f64,
}

impl WaveState {
    pub fn new(pos: Field, vel: Field, time: f64) -> Result<WaveState> {
        pos.grid().ensure_same(vel.grid())?;
        if pos.repr() != Repr::Physical || vel.repr() != Repr::Physical {
            return Err(Error::Representation { expected: "physical", found: "spectral" });
        }
        Ok(WaveState { pos, vel, time })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.pos.grid()
    }

    pub fn energy(&self) -> Result<f64> {
        Ok(energy_inner(self, self)?.re)
    }

    /// `1/2 (|grad u|^2 + |u_t|^2)` at every lattice point.
    pub fn energy_density(&self) -> Result<Vec<f64>> {
        let g = self.grid();
        let p = self.pos.to_spectral()?;
        let mut e: Vec<f64> = self.vel.values().iter().map(|v| 0.5 * v.norm_sqr()).collect();
        for axis in 0..g.dim() {
            let d = derivative(&p, axis)?;
            e.iter_mut().zip(d.values()).for_each(|(o, v)| *o += 0.5 * v.norm_sqr());
        }
        Ok(e)
    }

    pub fn sub(&self, other: &WaveState) -> Result<WaveState> {
        self.grid().ensure_same(other.grid())?;
        let d = |a: &Field, b: &Field| {
            let v = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
            Field::from_values(a.grid(), v, Repr::Physical)
        };
        WaveState::new(d(&self.pos, &other.pos)?, d(&self.vel, &other.vel)?, self.time)
    }
}

/// `1/2 int (grad a . conj grad b + a_t conj b_t)` by spectral differentiation and
/// lattice quadrature.
pub fn energy_inner(a: &WaveState, b: &WaveState) -> Result<C64> {
    a.grid().ensure_same(b.grid())?;
    let g = a.grid();
    let pa = a.pos.to_spectral()?;
    let pb = b.pos.to_spectral()?;
    let mut acc = C64::default();
    for axis in 0..g.dim() {
        let da = derivative(&pa, axis)?;
        let db = derivative(&pb, axis)?;
        acc += da.values().iter().zip(db.values()).map(|(x, y)| x * y.conj()).sum::<C64>();
    }
    acc += a.vel.values().iter().zip(b.vel.values()).map(|(x, y)| x * y.conj()).sum::<C64>();
    Ok(0.5 * acc * g.cell_volume())
}

fn derivative(spec: &Field, axis: usize) -> Result<Field> {
    let g = spec.grid().clone();
    let v = spec
        .values()
        .iter()
        .enumerate()
        .map(|(i, c)| C64::new(0.0, g.xi(i, axis)) * c)
        .collect();
    Field::from_values(&g, v, Repr::Spectral)?.to_physical()
}

/// Spectral operators that can be evaluated on a free wave at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    Value,
    Dt,
    Dx(usize),
    DtDx(usize),
    /// `d_t^2 = Laplacian` on free waves.
    Dtt,
    DxDx(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Debug, Clone)]
pub struct FreeWave {
    grid: Arc<Grid>,
    a_plus: Vec<C64>,
    a_minus: Vec<C64>,
}

impl FreeWave {
    pub fn zero(grid: &Arc<Grid>) -> FreeWave {
        FreeWave { grid: grid.clone(), a_plus: vec![C64::default(); grid.size()], a_minus: vec![C64::default(); grid.size()] }
    }

    pub fn from_coefficients(grid: &Arc<Grid>, mut a_plus: Vec<C64>, mut a_minus: Vec<C64>) -> Result<FreeWave> {
        if a_plus.len() != grid.size() || a_minus.len() != grid.size() {
            return Err(Error::GridMismatch("coefficient length".into()));
        }
        a_plus[0] = C64::default();
        a_minus[0] = C64::default();
        Ok(FreeWave { grid: grid.clone(), a_plus, a_minus })
    }

    /// Single half-wave `amp * e^{i(xi.x +- |xi| t)}` at integer wavenumber `k`.
    pub fn plane(grid: &Arc<Grid>, k: &[i64], sign: Sign, amp: C64) -> Result<FreeWave> {
        if k.len() != grid.dim() {
            return Err(Error::Parameter("wavenumber dimension".into()));
        }
        let n = grid.points() as i64;
        let multi: Vec<usize> = k.iter().map(|&v| v.rem_euclid(n) as usize).collect();
        let idx = grid.flat_index(&multi);
        let mut w = FreeWave::zero(grid);
        // Unitary transform: a physical plane wave of amplitude 1 has coefficient sqrt(size).
        let c = amp * (grid.size() as f64).sqrt();
        match sign {
            Sign::Plus => w.a_plus[idx] = c,
            Sign::Minus => w.a_minus[idx] = c,
        }
        w.a_plus[0] = C64::default();
        w.a_minus[0] = C64::default();
        Ok(w)
    }

    /// Half-wave split of position/velocity data, recorded at `d.time`.
    pub fn from_data(d: &WaveState) -> Result<FreeWave> {
        let g = d.grid().clone();
        let p = d.pos.to_spectral()?.into_values();
        let v = d.vel.to_spectral()?.into_values();
        let vnorm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if v[0].norm() > MEAN_VELOCITY_TOL * vnorm.max(f64::MIN_POSITIVE) && v[0].norm() > 1e-300 {
            return Err(Error::NonzeroMeanVelocity(v[0].norm() / (g.size() as f64).sqrt()));
        }
        if p[0].norm() > 0.0 {
            log::warn!("dropping zero mode of the position data ({:e})", p[0].norm());
        }
        Ok(Self::split(&g, p, v, d.time))
    }

    fn split(g: &Arc<Grid>, p: Vec<C64>, v: Vec<C64>, time: f64) -> FreeWave {
        let k = g.kmag();
        let mut ap = vec![C64::default(); g.size()];
        let mut am = vec![C64::default(); g.size()];
        for i in 1..g.size() {
            let q = C64::new(0.0, 1.0) * v[i] / k[i];
            ap[i] = 0.5 * (p[i] - q);
            am[i] = 0.5 * (p[i] + q);
        }
        FreeWave { grid: g.clone(), a_plus: ap, a_minus: am }.propagate(-time)
    }

    /// Like [`FreeWave::from_data`] but discards the mean of the velocity instead of
    /// rejecting it, and drops the position mean silently. Returns the discarded
    /// velocity mean.
    pub fn from_data_projected(d: &WaveState) -> Result<(FreeWave, f64)> {
        let g = d.grid().clone();
        let p = d.pos.to_spectral()?.into_values();
        let mut v = d.vel.to_spectral()?.into_values();
        let mean = v[0].norm() / (g.size() as f64).sqrt();
        v[0] = C64::default();
        Ok((Self::split(&g, p, v, d.time), mean))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn a_plus(&self) -> &[C64] {
        &self.a_plus
    }

    pub fn a_minus(&self) -> &[C64] {
        &self.a_minus
    }

    pub fn a_plus_field(&self) -> Field {
        Field::from_values(&self.grid, self.a_plus.clone(), Repr::Spectral).expect("sized")
    }

    pub fn a_minus_field(&self) -> Field {
        Field::from_values(&self.grid, self.a_minus.clone(), Repr::Spectral).expect("sized")
    }

    pub fn is_zero(&self) -> bool {
        self.a_plus.iter().chain(&self.a_minus).all(|c| c.norm_sqr() == 0.0)
    }

    /// Half-wave component of one sign.
    pub fn half(&self, sign: Sign) -> FreeWave {
        let z = vec![C64::default(); self.grid.size()];
        match sign {
            Sign::Plus => FreeWave { grid: self.grid.clone(), a_plus: self.a_plus.clone(), a_minus: z },
            Sign::Minus => FreeWave { grid: self.grid.clone(), a_plus: z, a_minus: self.a_minus.clone() },
        }
    }

    /// The wave whose time-zero data is this wave's data at time `t`.
    pub fn propagate(&self, t: f64) -> FreeWave {
        let k = self.grid.kmag();
        let mut ap = self.a_plus.clone();
        let mut am = self.a_minus.clone();
        for i in 0..k.len() {
            let e = C64::from_polar(1.0, t * k[i]);
            ap[i] *= e;
            am[i] *= e.conj();
        }
        FreeWave { grid: self.grid.clone(), a_plus: ap, a_minus: am }
    }

    /// Spectral position and velocity at time `t`.
    pub fn spectra_at(&self, t: f64) -> (Vec<C64>, Vec<C64>) {
        let k = self.grid.kmag();
        let n = k.len();
        let mut p = vec![C64::default(); n];
        let mut v = vec![C64::default(); n];
        for i in 0..n {
            let e = C64::from_polar(1.0, t * k[i]);
            let a = e * self.a_plus[i];
            let b = e.conj() * self.a_minus[i];
            p[i] = a + b;
            v[i] = C64::new(0.0, k[i]) * (a - b);
        }
        (p, v)
    }

    pub fn evaluate(&self, t: f64) -> WaveState {
        let f = self.fields_at(t, &[Deriv::Value, Deriv::Dt]);
        let mut it = f.into_iter();
        WaveState { pos: it.next().unwrap(), vel: it.next().unwrap(), time: t }
    }

    /// Physical fields of several spectral operators at time `t`.
    pub fn fields_at(&self, t: f64, ops: &[Deriv]) -> Vec<Field> {
        let (p, v) = self.spectra_at(t);
        ops.iter().map(|&op| apply_deriv(&self.grid, &p, &v, op)).collect()
    }

    /// `[d_t phi, d_1 phi, ..., d_n phi]` at time `t`.
    pub fn gradient(&self, t: f64) -> Vec<Field> {
        let mut ops = vec![Deriv::Dt];
        ops.extend((0..self.grid.dim()).map(Deriv::Dx));
        self.fields_at(t, &ops)
    }

    /// Pointwise energy density `(|grad phi|^2 + |phi_t|^2)/2` at time `t`.
    pub fn energy_density(&self, t: f64) -> Vec<f64> {
        let grad = self.gradient(t);
        let mut e = vec![0.0; self.grid.size()];
        for f in &grad {
            for (o, v) in e.iter_mut().zip(f.values()) {
                *o += 0.5 * v.norm_sqr();
            }
        }
        e
    }

    /// `E(phi) = h^n sum |xi|^2 (|a_+|^2 + |a_-|^2)`.
    pub fn energy(&self) -> f64 {
        self.energy_inner(self).re
    }

    pub fn energy_inner(&self, other: &FreeWave) -> C64 {
        let k = self.grid.kmag();
        let mut acc = C64::default();
        for i in 0..k.len() {
            acc += k[i] * k[i] * (self.a_plus[i] * other.a_plus[i].conj() + self.a_minus[i] * other.a_minus[i].conj());
        }
        acc * self.grid.cell_volume()
    }

    pub fn scale(&self, s: C64) -> FreeWave {
        FreeWave {
            grid: self.grid.clone(),
            a_plus: self.a_plus.iter().map(|c| c * s).collect(),
            a_minus: self.a_minus.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add(&self, other: &FreeWave) -> Result<FreeWave> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &FreeWave) -> Result<FreeWave> {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &FreeWave, s: f64) -> Result<FreeWave> {
        self.grid.ensure_same(&other.grid)?;
        Ok(FreeWave {
            grid: self.grid.clone(),
            a_plus: self.a_plus.iter().zip(&other.a_plus).map(|(a, b)| a + s * b).collect(),
            a_minus: self.a_minus.iter().zip(&other.a_minus).map(|(a, b)| a + s * b).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &FreeWave) -> Result<()> {
        self.grid.ensure_same(&other.grid)?;
        self.a_plus.iter_mut().zip(&other.a_plus).for_each(|(a, b)| *a += b);
        self.a_minus.iter_mut().zip(&other.a_minus).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Multiply both half-wave fields by a spectral symbol.
    pub fn map_symbol(&self, symbol: impl Fn(usize) -> C64) -> FreeWave {
        let mut w = self.clone();
        for i in 0..self.grid.size() {
            let s = symbol(i);
            w.a_plus[i] *= s;
            w.a_minus[i] *= s;
        }
        w.a_plus[0] = C64::default();
        w.a_minus[0] = C64::default();
        w
    }

    /// `phi(x - shift)`.
    pub fn translate(&self, shift: &[f64]) -> FreeWave {
        self.map_symbol(|i| translate_phase(&self.grid, i, shift))
    }

    /// The complex conjugate solution `conj(phi)`.
    pub fn conj(&self) -> FreeWave {
        let g = &self.grid;
        let n = g.points();
        let mut ap = vec![C64::default(); g.size()];
        let mut am = vec![C64::default(); g.size()];
        for i in 0..g.size() {
            let neg: Vec<usize> = g.multi_index(i).iter().map(|&m| (n - m) % n).collect();
            let j = g.flat_index(&neg);
            ap[j] = self.a_minus[i].conj();
            am[j] = self.a_plus[i].conj();
        }
        FreeWave { grid: g.clone(), a_plus: ap, a_minus: am }
    }

    /// Rescale to unit energy; the zero wave is returned unchanged.
    pub fn normalized(&self) -> FreeWave {
        let e = self.energy();
        if e > 0.0 {
            self.scale(C64::new(e.sqrt().recip(), 0.0))
        } else {
            self.clone()
        }
    }
}

pub(crate) fn apply_deriv(g: &Arc<Grid>, p: &[C64], v: &[C64], op: Deriv) -> Field {
    let k = g.kmag();
    let i_unit = C64::new(0.0, 1.0);
    let data: Vec<C64> = match op {
        Deriv::Value => p.to_vec(),
        Deriv::Dt => v.to_vec(),
        Deriv::Dx(a) => (0..p.len()).map(|i| i_unit * g.xi(i, a) * p[i]).collect(),
        Deriv::DtDx(a) => (0..p.len()).map(|i| i_unit * g.xi(i, a) * v[i]).collect(),
        Deriv::Dtt => (0..p.len()).map(|i| -k[i] * k[i] * p[i]).collect(),
        Deriv::DxDx(a, b) => (0..p.len()).map(|i| -g.xi(i, a) * g.xi(i, b) * p[i]).collect(),
    };
    let mut data = data;
    g.inverse(&mut data);
    Field::from_values(g, data, Repr::Physical).expect("sized")
}

/// Physical localization used by the random generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub center: Vec<f64>,
    pub radius: f64,
}

fn gaussian_annulus(grid: &Arc<Grid>, lambda: f64, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = grid.kmag();
    (0..grid.size())
        .map(|i| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im) * annulus(k[i], lambda)
        })
        .collect()
}

fn project_annulus(grid: &Arc<Grid>, coeffs: &mut [C64], lambda: f64) {
    let k = grid.kmag();
    coeffs.iter_mut().zip(k).for_each(|(c, &r)| *c *= annulus(r, lambda));
    coeffs[0] = C64::default();
}

/// Pure `a_plus` wave of frequency `lambda` with Gaussian coefficients, optionally
/// localized by a physical bump and re-projected to the annulus; unit energy.
pub fn random_wave(grid: &Arc<Grid>, lambda: f64, seed: u64, loc: Option<&Localization>) -> Result<FreeWave> {
    grid.check_headroom(lambda)?;
    let mut a = gaussian_annulus(grid, lambda, seed);
    if let Some(loc) = loc {
        localize(grid, &mut a, loc);
        project_annulus(grid, &mut a, lambda);
    }
    a[0] = C64::default();
    let w = FreeWave { grid: grid.clone(), a_plus: a, a_minus: vec![C64::default(); grid.size()] };
    if w.energy() == 0.0 {
        return Err(Error::Parameter(format!("no lattice frequencies in the annulus at lambda = {lambda}")));
    }
    Ok(w.normalized())
}

/// Multiply the physical field of spectral coefficients by a bump around `loc.center`.
fn localize(grid: &Arc<Grid>, a: &mut [C64], loc: &Localization) {
    grid.inverse(a);
    let d = grid.distance_to(&loc.center);
    a.iter_mut().zip(&d).for_each(|(v, r)| *v *= bump(r / loc.radius));
    grid.forward(a);
}

/// Angle between lattice frequency `i` and a unit vector (pi for the zero mode).
pub(crate) fn angle_to(grid: &Grid, i: usize, dir: &[f64]) -> f64 {
    let k = grid.kmag()[i];
    if k == 0.0 {
        return std::f64::consts::PI;
    }
    let dot: f64 = (0..grid.dim()).map(|a| grid.xi(i, a) * dir[a]).sum();
    (dot / k).clamp(-1.0, 1.0).acos()
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Parameter("direction must be a nonzero vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn translate_phase(grid: &Grid, i: usize, x: &[f64]) -> C64 {
    let ph: f64 = (0..grid.dim()).map(|a| grid.xi(i, a) * x[a]).sum();
    C64::from_polar(1.0, -ph)
}

/// Knapp-type `a_plus` wave of frequency `lambda`: spectrum in the annulus times an
/// angular cap of half-width `half_width` around `-direction`, so the packet moves
/// along `direction`; centered at `center` at time zero; unit energy.
pub fn knapp_wave(grid: &Arc<Grid>, lambda: f64, direction: &[f64], half_width: f64, center: &[f64]) -> Result<FreeWave> {
    grid.check_headroom(lambda)?;
    let d = unit(direction)?;
    let back: Vec<f64> = d.iter().map(|x| -x).collect();
    let k = grid.kmag();
    let a: Vec<C64> = (0..grid.size())
        .map(|i| {
            let w = annulus(k[i], lambda) * bump(angle_to(grid, i, &back) / half_width);
            translate_phase(grid, i, center) * w
        })
        .collect();
    let w = FreeWave::from_coefficients(grid, a, vec![C64::default(); grid.size()])?;
    if w.energy() == 0.0 {
        return Err(Error::AngularResolution { width: half_width, resolution: 2.0 * std::f64::consts::PI / (grid.len() * lambda) });
    }
    Ok(w.normalized())
}

/// Beam moving along `direction` that focuses at `focus` at time `t_focus`; at time
/// zero it occupies a region of width about `t_focus * half_width` around
/// `focus - t_focus * direction`.
pub fn focused_beam(
    grid: &Arc<Grid>,
    lambda: f64,
    direction: &[f64],
    half_width: f64,
    focus: &[f64],
    t_focus: f64,
) -> Result<FreeWave> {
    let w = knapp_wave(grid, lambda, direction, half_width, focus)?;
    Ok(w.propagate(-t_focus))
}

/// Frequency-localized fundamental solution: data `P_lambda delta` at `center` with
/// zero velocity; unit energy.
pub fn point_source(grid: &Arc<Grid>, lambda: f64, center: &[f64]) -> Result<FreeWave> {
    grid.check_headroom(lambda)?;
    let k = grid.kmag();
    let a: Vec<C64> = (0..grid.size())
        .map(|i| 0.5 * annulus(k[i], lambda) * translate_phase(grid, i, center))
        .collect();
    Ok(FreeWave::from_coefficients(grid, a.clone(), a)?.normalized())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub format: String,
    pub version: u32,
    pub grid: GridSpec,
    pub time: f64,
    pub fields: Vec<String>,
    pub dtype: String,
    pub order: String,
}

/// Write `<stem>.bin` (position then velocity, row-major complex64 little-endian
/// pairs) and `<stem>.json`.
pub fn write_snapshot(state: &WaveState, stem: &Path) -> Result<()> {
    let g = state.grid();
    let meta = SnapshotMeta {
        format: "wavepack-snapshot".into(),
        version: 1,
        grid: g.spec(),
        time: state.time,
        fields: vec!["pos".into(), "vel".into()],
        dtype: "complex64-le".into(),
        order: "row-major".into(),
    };
    let mut bytes = Vec::with_capacity(16 * g.size());
    for f in [&state.pos, &state.vel] {
        for v in f.values() {
            bytes.extend_from_slice(&(v.re as f32).to_le_bytes());
            bytes.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
    }
    fs::File::create(stem.with_extension("bin"))?.write_all(&bytes)?;
    fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_snapshot(stem: &Path) -> Result<WaveState> {
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
    let g = Grid::from_spec(meta.grid)?;
    let mut bytes = Vec::new();
    fs::File::open(stem.with_extension("bin"))?.read_to_end(&mut bytes)?;
    if bytes.len() != 16 * g.size() {
        return Err(Error::GridMismatch(format!("snapshot has {} bytes", bytes.len())));
    }
    let read = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
    let field = |start: usize| -> Result<Field> {
        let v = (0..g.size()).map(|i| C64::new(read(start + 8 * i), read(start + 8 * i + 4))).collect();
        Field::from_values(&g, v, Repr::Physical)
    };
    WaveState::new(field(0)?, field(8 * g.size())?, meta.time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Region;

    fn grid() -> Arc<Grid> {
        Grid::new(2, 64, 32.0).unwrap()
    }

    fn rel_energy_err(a: &WaveState, b: &WaveState) -> f64 {
        a.sub(b).unwrap().energy().unwrap() / b.energy().unwrap()
    }

    #[test]
    fn pure_plus_plane_wave_from_data() {
        let g = grid();
        let k = [3i64, -2];
        let xi = [g.freqs()[3], -g.freqs()[2]];
        let m = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        let pos = Field::from_fn(&g, |x| C64::from_polar(1.0, xi[0] * x[0] + xi[1] * x[1]));
        let vel = Field::from_fn(&g, |x| C64::new(0.0, m) * C64::from_polar(1.0, xi[0] * x[0] + xi[1] * x[1]));
        let w = FreeWave::from_data(&WaveState::new(pos, vel, 0.0).unwrap()).unwrap();
        let expect = FreeWave::plane(&g, &k, Sign::Plus, C64::new(1.0, 0.0)).unwrap();
        let diff = w.sub(&expect).unwrap();
        assert!(diff.energy() < 1e-20 * expect.energy());
        assert!(w.a_minus().iter().all(|c| c.norm() < 1e-10));
    }

    #[test]
    fn cosine_splits_evenly() {
        let g = grid();
        let xi = g.freqs()[4];
        let pos = Field::from_fn(&g, |x| C64::new((xi * x[0]).cos(), 0.0));
        let vel = Field::zeros(&g, Repr::Physical);
        let w = FreeWave::from_data(&WaveState::new(pos, vel, 0.0).unwrap()).unwrap();
        let ep = w.half(Sign::Plus).energy();
        let em = w.half(Sign::Minus).energy();
        assert!((ep - em).abs() < 1e-12 * ep);
        for (a, b) in w.a_plus().iter().zip(w.a_minus()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn nonzero_mean_velocity_rejected() {
        let g = grid();
        let pos = Field::zeros(&g, Repr::Physical);
        let vel = Field::from_fn(&g, |_| C64::new(1.0, 0.0));
        let r = FreeWave::from_data(&WaveState::new(pos, vel, 0.0).unwrap());
        assert!(matches!(r, Err(Error::NonzeroMeanVelocity(_))));
    }

    #[test]
    fn projected_split_drops_the_mean_exactly() {
        let g = grid();
        let w = random_wave(&g, 2.0, 4, None).unwrap();
        let s = w.evaluate(1.5);
        // A difference of nearly equal states has a tiny velocity with a rounding-size mean.
        let tiny = s.sub(&w.propagate(1e-9).evaluate(1.5)).unwrap();
        let (d, _) = FreeWave::from_data_projected(&tiny).unwrap();
        assert!((d.energy() - tiny.energy().unwrap()).abs() < 1e-9 * tiny.energy().unwrap());
        let vel = Field::from_fn(&g, |_| C64::new(2.0, 0.0));
        let shifted = WaveState::new(s.pos.clone(), Field::from_values(&g, s.vel.values().iter().zip(vel.values()).map(|(a, b)| a + b).collect(), Repr::Physical).unwrap(), 1.5).unwrap();
        let (back, mean) = FreeWave::from_data_projected(&shifted).unwrap();
        assert!((mean - 2.0).abs() < 1e-12);
        assert!(back.sub(&w).unwrap().energy() < 1e-20 * w.energy());
    }

    #[test]
    fn translation_moves_the_wave() {
        let g = grid();
        let w = random_wave(&g, 2.0, 8, Some(&Localization { center: vec![8.0, 8.0], radius: 3.0 })).unwrap();
        let moved = w.translate(&[5.0, -3.0]).evaluate(0.7);
        let there = w.evaluate(0.7);
        // Shifts of 10 and -6 lattice steps.
        let n = g.points();
        assert_eq!(g.spacing(), 0.5);
        for i in 0..g.size() {
            let m = g.multi_index(i);
            let src = g.flat_index(&[(m[0] + n - 10) % n, (m[1] + 6) % n]);
            assert!((moved.pos.values()[i] - there.pos.values()[src]).norm() < 1e-12);
        }
        assert!((w.translate(&[5.0, -3.0]).energy() - w.energy()).abs() < 1e-12 * w.energy());
    }

    #[test]
    fn energy_density_integrates_to_energy() {
        let g = grid();
        let w = random_wave(&g, 2.0, 6, Some(&Localization { center: vec![10.0, 12.0], radius: 5.0 })).unwrap();
        let s = w.evaluate(2.5);
        let e: f64 = s.energy_density().unwrap().iter().sum::<f64>() * g.cell_volume();
        assert!((e - w.energy()).abs() < 1e-12 * w.energy());
        let d: f64 = w.energy_density(2.5).iter().sum::<f64>() * g.cell_volume();
        assert!((d - e).abs() < 1e-12 * e);
    }

    #[test]
    fn round_trip_and_group_law() {
        let g = grid();
        let w = random_wave(&g, 2.0, 11, None).unwrap();
        let s0 = w.evaluate(0.0);
        let back = FreeWave::from_data(&s0).unwrap();
        assert!(rel_energy_err(&back.evaluate(0.0), &s0) < 1e-11);
        let t = 3.7;
        let st = w.evaluate(t);
        let reseeded = FreeWave::from_data(&st).unwrap();
        let s = 5.1;
        assert!(rel_energy_err(&reseeded.evaluate(t + s), &w.evaluate(t + s)) < 1e-11);
        let there_and_back = w.propagate(t).propagate(-t);
        assert!(there_and_back.sub(&w).unwrap().energy() < 1e-22);
        // Data recorded at a nonzero time reproduces itself.
        assert!(rel_energy_err(&reseeded.evaluate(t), &st) < 1e-11);
    }

    #[test]
    fn plane_wave_phase_period() {
        let g = grid();
        let w = FreeWave::plane(&g, &[5, 0], Sign::Plus, C64::new(1.0, 0.0)).unwrap();
        let xi = g.freqs()[5];
        let t = 2.0 * std::f64::consts::PI / xi;
        let a = w.evaluate(0.0);
        let b = w.evaluate(t);
        for (x, y) in a.pos.values().iter().zip(b.pos.values()) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn plane_wave_energy_and_orthogonality() {
        let g = grid();
        let w = FreeWave::plane(&g, &[2, 1], Sign::Minus, C64::new(1.0, 0.0)).unwrap();
        let s = w.evaluate(0.3);
        let xi2 = g.freqs()[2].powi(2) + g.freqs()[1].powi(2);
        let expect = xi2 * g.len().powi(2);
        assert!((s.energy().unwrap() - expect).abs() < 1e-9 * expect);
        assert!((w.energy() - expect).abs() < 1e-9 * expect);
        let v = FreeWave::plane(&g, &[1, 2], Sign::Minus, C64::new(1.0, 0.0)).unwrap();
        assert!(energy_inner(&s, &v.evaluate(0.3)).unwrap().norm() < 1e-9);
    }

    #[test]
    fn random_wave_properties() {
        let g = grid();
        let a = random_wave(&g, 2.0, 5, None).unwrap();
        let b = random_wave(&g, 2.0, 5, None).unwrap();
        assert_eq!(a.a_plus(), b.a_plus());
        assert!((a.energy() - 1.0).abs() < 1e-12);
        for (c, &k) in a.a_plus().iter().zip(g.kmag()) {
            if !(1.0..=4.0).contains(&k) {
                assert_eq!(c.norm(), 0.0);
            }
        }
        let loc = Localization { center: vec![16.0, 16.0], radius: 4.0 };
        let l = random_wave(&g, 2.0, 5, Some(&loc)).unwrap();
        assert!((l.energy() - 1.0).abs() < 1e-12);
        assert!(random_wave(&g, 100.0, 1, None).is_err());
    }

    #[test]
    fn energy_conserved_in_time() {
        let g = grid();
        let w = random_wave(&g, 2.0, 3, Some(&Localization { center: vec![10.0, 12.0], radius: 5.0 })).unwrap();
        let e0 = w.evaluate(0.0).energy().unwrap();
        for t in [8.0, 16.0, 24.0] {
            let e = w.evaluate(t).energy().unwrap();
            assert!((e - e0).abs() <= 1e-11 * e0);
        }
    }

    #[test]
    fn conj_is_pointwise_conjugate() {
        let g = grid();
        let w = random_wave(&g, 2.0, 9, None).unwrap();
        let c = w.conj();
        let a = w.evaluate(1.3);
        let b = c.evaluate(1.3);
        for (x, y) in a.pos.values().iter().zip(b.pos.values()) {
            assert!((x.conj() - y).norm() < 1e-12);
        }
        for (x, y) in a.vel.values().iter().zip(b.vel.values()) {
            assert!((x.conj() - y).norm() < 1e-12);
        }
    }

    #[test]
    fn knapp_wave_moves_along_direction() {
        let g = Grid::new(2, 128, 64.0).unwrap();
        let w = knapp_wave(&g, 2.0, &[1.0, 0.0], 0.3, &[20.0, 32.0]).unwrap();
        let centroid = |t: f64| {
            let e = w.energy_density(t);
            let tot: f64 = e.iter().sum();
            let x = g.displacement(&[20.0, 32.0], 0);
            e.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / tot
        };
        assert!(centroid(0.0).abs() < 0.5);
        assert!((centroid(10.0) - 10.0).abs() < 0.5);
    }

    #[test]
    fn point_source_has_zero_velocity() {
        let g = grid();
        let w = point_source(&g, 1.0, &[16.0, 16.0]).unwrap();
        let s = w.evaluate(0.0);
        assert!(s.vel.lp_norm(&Region::Whole, 2.0).unwrap() < 1e-13);
    }

    #[test]
    fn snapshot_round_trip() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let w = random_wave(&g, 1.0, 2, None).unwrap();
        let s = w.evaluate(0.5);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("snap");
        write_snapshot(&s, &stem).unwrap();
        let r = read_snapshot(&stem).unwrap();
        assert_eq!(r.time, 0.5);
        for (a, b) in r.pos.values().iter().zip(s.pos.values()) {
            assert!((a - b).norm() < 1e-6 * (1.0 + b.norm()));
        }
    }
}

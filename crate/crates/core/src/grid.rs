//! Periodic spatial grid, complex fields and the unitary discrete Fourier transform.
//!
//! Points are stored row-major with axis 0 slowest. Physical coordinates are
//! `x_a = i_a * h` for `i_a` in `0..N`; the frequency lattice is `2 pi k / L` with
//! integer `k` in `(-N/2, N/2]`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Fraction of the Nyquist frequency usable by smooth multipliers.
pub const HEADROOM: f64 = 0.8;

/// Lines gathered per batch when transforming along a strided axis.
const BATCH: usize = 16;

pub struct Grid {
    dim: usize,
    points: usize,
    len: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    freq1d: Vec<f64>,
    kmag: Vec<f64>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("points", &self.points)
            .field("len", &self.len)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub points: usize,
    pub len: f64,
}

impl Grid {
    pub fn new(dim: usize, points: usize, len: f64) -> Result<Arc<Grid>> {
        if !(2..=3).contains(&dim) {
            return Err(Error::Dimension(dim));
        }
        if points < 2 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 2, got {points}"
            )));
        }
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::InvalidGrid(format!("box length must be positive, got {len}")));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(points);
        let inv = planner.plan_fft_inverse(points);
        let freq1d: Vec<f64> = (0..points)
            .map(|i| {
                let k = if i <= points / 2 { i as f64 } else { i as f64 - points as f64 };
                2.0 * std::f64::consts::PI * k / len
            })
            .collect();
        let size = points.pow(dim as u32);
        let mut kmag = vec![0.0; size];
        for (idx, m) in kmag.iter_mut().enumerate() {
            let mut s = 0.0;
            let mut rest = idx;
            for _ in 0..dim {
                let f = freq1d[rest % points];
                s += f * f;
                rest /= points;
            }
            *m = s.sqrt();
        }
        Ok(Arc::new(Grid { dim, points, len, fwd, inv, freq1d, kmag }))
    }

    pub fn from_spec(spec: GridSpec) -> Result<Arc<Grid>> {
        Grid::new(spec.dim, spec.points, spec.len)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { dim: self.dim, points: self.points, len: self.len }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn spacing(&self) -> f64 {
        self.len / self.points as f64
    }

    /// Total number of lattice points.
    pub fn size(&self) -> usize {
        self.kmag.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Largest representable |xi| along an axis, `pi N / L`.
    pub fn nyquist(&self) -> f64 {
        std::f64::consts::PI * self.points as f64 / self.len
    }

    /// Require `2 * freq <= 0.8 * pi N / L`.
    pub fn check_headroom(&self, freq: f64) -> Result<()> {
        let limit = HEADROOM * self.nyquist();
        if 2.0 * freq > limit * (1.0 + 1e-12) {
            return Err(Error::Nyquist { freq: 2.0 * freq, limit });
        }
        Ok(())
    }

    pub fn same(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.points == other.points && self.len == other.len
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self.same(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{:?} vs {:?}", self.spec(), other.spec())))
        }
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.points.pow((self.dim - 1 - axis) as u32)
    }

    /// Lattice index along `axis` of the flat index `idx`.
    #[inline]
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.points
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        (0..self.dim).map(|a| self.axis_index(idx, a)).collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.points + (i % self.points))
    }

    /// One-dimensional frequencies `2 pi k / L` in FFT order.
    pub fn freqs(&self) -> &[f64] {
        &self.freq1d
    }

    /// Integer wavenumber of lattice index `i`.
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i <= self.points / 2 {
            i as i64
        } else {
            i as i64 - self.points as i64
        }
    }

    #[inline]
    pub fn xi(&self, idx: usize, axis: usize) -> f64 {
        self.freq1d[self.axis_index(idx, axis)]
    }

    /// |xi| at every lattice point.
    pub fn kmag(&self) -> &[f64] {
        &self.kmag
    }

    /// Component `axis` of xi at every lattice point.
    pub fn xi_axis(&self, axis: usize) -> Vec<f64> {
        (0..self.size()).map(|i| self.xi(i, axis)).collect()
    }

    /// Physical coordinate `x_axis` at every lattice point.
    pub fn coords(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing();
        (0..self.size()).map(|i| self.axis_index(i, axis) as f64 * h).collect()
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let h = self.spacing();
        (0..self.dim).map(|a| self.axis_index(idx, a) as f64 * h).collect()
    }

    /// Representative of `x - c` in `(-L/2, L/2]` along one axis.
    #[inline]
    pub fn wrap(&self, d: f64) -> f64 {
        let l = self.len;
        let mut r = d.rem_euclid(l);
        if r > 0.5 * l {
            r -= l;
        }
        r
    }

    /// Centered displacement `x - c` (torus minimal image) for every lattice point.
    pub fn displacement(&self, center: &[f64], axis: usize) -> Vec<f64> {
        let h = self.spacing();
        (0..self.size())
            .map(|i| self.wrap(self.axis_index(i, axis) as f64 * h - center[axis]))
            .collect()
    }

    /// Torus distance from every lattice point to `center`.
    pub fn distance_to(&self, center: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        for a in 0..self.dim {
            for (o, d) in out.iter_mut().zip(self.displacement(center, a)) {
                *o += d * d;
            }
        }
        out.iter_mut().for_each(|v| *v = v.sqrt());
        out
    }

    /// In-place unitary forward transform of row-major data.
    pub fn forward(&self, data: &mut [C64]) {
        self.transform(data, false);
    }

    /// In-place unitary inverse transform of row-major data.
    pub fn inverse(&self, data: &mut [C64]) {
        self.transform(data, true);
    }

    fn transform(&self, data: &mut [C64], inverse: bool) {
        assert_eq!(data.len(), self.size(), "buffer does not match grid");
        let fft = if inverse { &self.inv } else { &self.fwd };
        let n = self.points;
        let mut scratch = vec![C64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(data, &mut scratch);
        let total = data.len();
        let mut buf = vec![C64::default(); n * BATCH];
        let mut stride = n;
        for _ in 1..self.dim {
            let block = n * stride;
            for outer in (0..total).step_by(block) {
                let mut inner = 0;
                while inner < stride {
                    let b = BATCH.min(stride - inner);
                    for k in 0..n {
                        let row = outer + k * stride + inner;
                        for j in 0..b {
                            buf[j * n + k] = data[row + j];
                        }
                    }
                    fft.process_with_scratch(&mut buf[..b * n], &mut scratch);
                    for k in 0..n {
                        let row = outer + k * stride + inner;
                        for j in 0..b {
                            data[row + j] = buf[j * n + k];
                        }
                    }
                    inner += b;
                }
            }
            stride *= n;
        }
        let scale = (total as f64).sqrt().recip();
        data.iter_mut().for_each(|v| *v *= scale);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Repr {
    Physical,
    Spectral,
}

impl Repr {
    fn name(self) -> &'static str {
        match self {
            Repr::Physical => "physical",
            Repr::Spectral => "spectral",
        }
    }
}

/// Axis-aligned region in physical coordinates, `lo <= x < hi` per axis.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Whole,
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Region {
    pub fn cube(corner: &[f64], side: f64) -> Region {
        Region::Box { lo: corner.to_vec(), hi: corner.iter().map(|c| c + side).collect() }
    }

    /// Flat indices of lattice points inside the region.
    pub fn indices(&self, grid: &Grid) -> Vec<usize> {
        match self {
            Region::Whole => (0..grid.size()).collect(),
            Region::Box { lo, hi } => {
                let h = grid.spacing();
                (0..grid.size())
                    .filter(|&i| {
                        (0..grid.dim()).all(|a| {
                            let x = grid.axis_index(i, a) as f64 * h;
                            x >= lo[a] - 1e-12 * h && x < hi[a] - 1e-12 * h
                        })
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    data: Vec<C64>,
    repr: Repr,
}

impl Field {
    pub fn zeros(grid: &Arc<Grid>, repr: Repr) -> Field {
        Field { grid: grid.clone(), data: vec![C64::default(); grid.size()], repr }
    }

    pub fn from_values(grid: &Arc<Grid>, data: Vec<C64>, repr: Repr) -> Result<Field> {
        if data.len() != grid.size() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                data.len(),
                grid.size()
            )));
        }
        Ok(Field { grid: grid.clone(), data, repr })
    }

    pub fn from_real(grid: &Arc<Grid>, values: &[f64]) -> Result<Field> {
        Field::from_values(grid, values.iter().map(|&v| C64::new(v, 0.0)).collect(), Repr::Physical)
    }

    /// Physical field sampled from a function of the lattice point.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> C64) -> Field {
        let data = (0..grid.size()).map(|i| f(&grid.point(i))).collect();
        Field { grid: grid.clone(), data, repr: Repr::Physical }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn repr(&self) -> Repr {
        self.repr
    }

    pub fn values(&self) -> &[C64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<C64> {
        self.data
    }

    fn expect(&self, repr: Repr) -> Result<()> {
        if self.repr == repr {
            Ok(())
        } else {
            Err(Error::Representation { expected: repr.name(), found: self.repr.name() })
        }
    }

    pub fn to_spectral(&self) -> Result<Field> {
        self.expect(Repr::Physical)?;
        let mut data = self.data.clone();
        self.grid.forward(&mut data);
        Ok(Field { grid: self.grid.clone(), data, repr: Repr::Spectral })
    }

    pub fn to_physical(&self) -> Result<Field> {
        self.expect(Repr::Spectral)?;
        let mut data = self.data.clone();
        self.grid.inverse(&mut data);
        Ok(Field { grid: self.grid.clone(), data, repr: Repr::Physical })
    }

    /// `(sum |f|^p h^n)^(1/p)` over the region, or the sup for `p = inf`.
    pub fn lp_norm(&self, region: &Region, p: f64) -> Result<f64> {
        self.expect(Repr::Physical)?;
        if !(p >= 1.0) {
            return Err(Error::Parameter(format!("exponent p = {p} must be >= 1")));
        }
        let idx = region.indices(&self.grid);
        if idx.is_empty() {
            return Err(Error::EmptyRegion);
        }
        if p.is_infinite() {
            return Ok(idx.iter().map(|&i| self.data[i].norm()).fold(0.0, f64::max));
        }
        let s: f64 = idx.iter().map(|&i| self.data[i].norm().powf(p)).sum();
        Ok((s * self.grid.cell_volume()).powf(p.recip()))
    }

    /// Spectral l2 norm scaled to match the physical L2 norm.
    pub fn spectral_l2(&self) -> Result<f64> {
        self.expect(Repr::Spectral)?;
        let s: f64 = self.data.iter().map(|v| v.norm_sqr()).sum();
        Ok((s * self.grid.cell_volume()).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Arc<Grid>, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..grid.size())
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        Field::from_values(grid, data, Repr::Physical).unwrap()
    }

    /// Direct O(size^2) unitary DFT.
    fn naive_dft(grid: &Grid, data: &[C64]) -> Vec<C64> {
        let n = grid.points() as f64;
        let size = grid.size();
        let scale = (size as f64).sqrt().recip();
        (0..size)
            .map(|k| {
                let km = grid.multi_index(k);
                let mut acc = C64::default();
                for (j, v) in data.iter().enumerate() {
                    let jm = grid.multi_index(j);
                    let phase: f64 = km.iter().zip(&jm).map(|(a, b)| (a * b) as f64).sum();
                    acc += v * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * phase / n);
                }
                acc * scale
            })
            .collect()
    }

    #[test]
    fn fft_matches_direct_sum_2d_and_3d() {
        for dim in [2, 3] {
            let g = Grid::new(dim, 8, 3.0).unwrap();
            let f = random_field(&g, 7 + dim as u64);
            let fast = f.to_spectral().unwrap();
            let slow = naive_dft(&g, f.values());
            for (a, b) in fast.values().iter().zip(&slow) {
                assert!((a - b).norm() < 1e-12, "{a} vs {b}");
            }
            let back = fast.to_physical().unwrap();
            for (a, b) in back.values().iter().zip(f.values()) {
                assert!((a - b).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn constant_field_is_zero_mode() {
        let g = Grid::new(2, 16, 5.0).unwrap();
        let f = Field::from_fn(&g, |_| C64::new(1.0, 0.0));
        let s = f.to_spectral().unwrap();
        assert!((s.values()[0].re - 16.0).abs() < 1e-12);
        assert!(s.values()[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn plane_wave_is_single_coefficient() {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let k = [3usize, 13usize];
        let xi: Vec<f64> = k.iter().map(|&i| g.freqs()[i]).collect();
        let f = Field::from_fn(&g, |x| C64::from_polar(1.0, xi[0] * x[0] + xi[1] * x[1]));
        let s = f.to_spectral().unwrap();
        let target = g.flat_index(&k);
        for (i, v) in s.values().iter().enumerate() {
            if i == target {
                assert!((v.norm() - 16.0).abs() < 1e-10);
            } else {
                assert!(v.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn lp_norm_examples() {
        let g = Grid::new(2, 32, 6.0).unwrap();
        let one = Field::from_fn(&g, |_| C64::new(1.0, 0.0));
        let v = one.lp_norm(&Region::Whole, 2.0).unwrap();
        assert!((v - 6.0).abs() < 1e-12);
        let zero = Field::zeros(&g, Repr::Physical);
        assert_eq!(zero.lp_norm(&Region::Whole, 3.0).unwrap(), 0.0);
        let half = Field::from_fn(&g, |x| C64::new(if x[0] < 3.0 { 1.0 } else { 0.0 }, 0.0));
        // 16 * 32 points of cell volume (6/32)^2.
        let expect = 16.0 * 32.0 * (6.0f64 / 32.0).powi(2);
        assert!((half.lp_norm(&Region::Whole, 1.0).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 18.0).abs() < 1e-12);
        let bad = Region::Box { lo: vec![2.0, 2.0], hi: vec![2.0, 3.0] };
        assert!(matches!(one.lp_norm(&bad, 2.0), Err(Error::EmptyRegion)));
    }

    #[test]
    fn plancherel_for_random_fields() {
        let g = Grid::new(2, 32, 10.0).unwrap();
        for seed in 0..100 {
            let f = random_field(&g, seed);
            let a = f.lp_norm(&Region::Whole, 2.0).unwrap();
            let b = f.to_spectral().unwrap().spectral_l2().unwrap();
            assert!((a - b).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn quadrature_is_resolution_independent_for_band_limited_fields() {
        let mut vals = Vec::new();
        for n in [32, 64] {
            let g = Grid::new(2, n, 8.0).unwrap();
            let xi = 2.0 * std::f64::consts::PI / 8.0;
            let f = Field::from_fn(&g, |x| {
                C64::new((3.0 * xi * x[0]).cos() + 0.5 * (xi * (x[0] + 2.0 * x[1])).sin(), 0.2)
            });
            vals.push(f.lp_norm(&Region::Whole, 2.0).unwrap());
        }
        assert!((vals[0] - vals[1]).abs() <= 1e-10 * vals[0]);
    }

    #[test]
    fn rejects_bad_grids_and_mismatches() {
        assert!(Grid::new(2, 12, 1.0).is_err());
        assert!(Grid::new(1, 8, 1.0).is_err());
        let a = Grid::new(2, 8, 1.0).unwrap();
        let b = Grid::new(2, 8, 2.0).unwrap();
        assert!(a.ensure_same(&b).is_err());
        let f = Field::zeros(&a, Repr::Physical);
        assert!(f.to_physical().is_err());
    }
}

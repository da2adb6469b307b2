//! Fourier multipliers: Littlewood-Paley pieces, fractional derivatives, sector
//! projections and the band-limited spatial partition of unity.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::bump::Smoothness;
use crate::error::{Error, Result};
use crate::grid::{Grid, C64};
use crate::waves::{angle_to, FreeWave, WaveState};

/// A real symbol sampled on the frequency lattice.
#[derive(Debug, Clone)]
pub struct Multiplier {
    pub symbol: Vec<f64>,
    pub family: Smoothness,
    pub label: String,
}

impl Multiplier {
    pub fn radial(grid: &Grid, family: Smoothness, label: &str, f: impl Fn(f64) -> f64) -> Multiplier {
        Multiplier { symbol: grid.kmag().iter().map(|&k| f(k)).collect(), family, label: label.into() }
    }

    pub fn apply(&self, w: &FreeWave) -> FreeWave {
        w.map_symbol(|i| C64::new(self.symbol[i], 0.0))
    }

    pub fn apply_coeffs(&self, c: &mut [C64]) {
        c.iter_mut().zip(&self.symbol).for_each(|(v, s)| *v *= s);
    }

    /// Largest |xi| where the symbol is nonzero.
    pub fn support_radius(&self, grid: &Grid) -> f64 {
        grid.kmag()
            .iter()
            .zip(&self.symbol)
            .filter(|(_, s)| **s != 0.0)
            .map(|(k, _)| *k)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpKind {
    /// `eta_lambda = beta(|xi|/lambda) - beta(2|xi|/lambda)`; the dyadic pieces sum to 1.
    Partition,
    /// Equal to 1 on `[lambda/2, 2 lambda]`, supported in `[lambda/4, 4 lambda]`.
    Reproducing,
}

pub fn lp_symbol(kind: LpKind, family: Smoothness, k: f64, lambda: f64) -> f64 {
    match kind {
        LpKind::Partition => family.beta(k / lambda) - family.beta(2.0 * k / lambda),
        LpKind::Reproducing => family.plateau(k, 0.25 * lambda, 0.5 * lambda, 2.0 * lambda, 4.0 * lambda),
    }
}

pub fn lp_multiplier(grid: &Grid, lambda: f64, kind: LpKind) -> Multiplier {
    let fam = Smoothness::Exp;
    Multiplier::radial(grid, fam, &format!("P_{lambda}"), |k| lp_symbol(kind, fam, k, lambda))
}

pub fn lp_project(w: &FreeWave, lambda: f64) -> Result<FreeWave> {
    w.grid().check_headroom(lambda)?;
    Ok(lp_multiplier(w.grid(), lambda, LpKind::Partition).apply(w))
}

pub fn lp_project_with(w: &FreeWave, lambda: f64, kind: LpKind) -> FreeWave {
    lp_multiplier(w.grid(), lambda, kind).apply(w)
}

/// Dyadic frequencies `2^j` whose partition pieces cover every nonzero lattice frequency.
pub fn dyadic_cover(grid: &Grid) -> Vec<f64> {
    let kmin = 2.0 * PI / grid.len();
    let kmax = grid.kmag().iter().cloned().fold(0.0, f64::max);
    let lo = kmin.log2().floor() as i32;
    let hi = kmax.log2().ceil() as i32;
    (lo..=hi).map(|j| 2f64.powi(j)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivKind {
    Homogeneous,
    Inhomogeneous,
}

/// `|D|^a` or `<D>^a`; the zero mode is absent from free waves.
pub fn frac_derivative(w: &FreeWave, a: f64, kind: DerivKind) -> FreeWave {
    let k = w.grid().kmag().to_vec();
    w.map_symbol(|i| {
        let s = match kind {
            DerivKind::Homogeneous => {
                if k[i] == 0.0 {
                    0.0
                } else {
                    k[i].powf(a)
                }
            }
            DerivKind::Inhomogeneous => (1.0 + k[i] * k[i]).powf(0.5 * a),
        };
        C64::new(s, 0.0)
    })
}

/// Smooth partition of unity on the circle (n = 2) or a latitude-band partition of
/// the sphere (n = 3, experimental).
#[derive(Debug, Clone)]
pub struct AngularPartition {
    dim: usize,
    pub directions: Vec<Vec<f64>>,
    family: Smoothness,
    /// Arc spacing between neighbouring centers.
    spacing: f64,
    /// n = 3 only: polar band index and azimuth count per direction.
    bands: Vec<(usize, usize, usize)>,
}

impl AngularPartition {
    /// Directions separated by about `sep` radians.
    pub fn new(dim: usize, sep: f64, family: Smoothness) -> Result<AngularPartition> {
        if !(sep > 0.0) {
            return Err(Error::Parameter(format!("angular separation {sep}")));
        }
        match dim {
            2 => {
                let m = ((2.0 * PI / sep).ceil() as usize).max(3);
                let spacing = 2.0 * PI / m as f64;
                let directions = (0..m).map(|j| {
                    let a = j as f64 * spacing;
                    vec![a.cos(), a.sin()]
                });
                Ok(AngularPartition { dim, directions: directions.collect(), family, spacing, bands: vec![] })
            }
            3 => {
                let nb = ((PI / sep).ceil() as usize).max(2);
                let dp = PI / nb as f64;
                let mut directions = Vec::new();
                let mut bands = Vec::new();
                for b in 0..=nb {
                    let th = b as f64 * dp;
                    let m = ((2.0 * PI * th.sin() / dp).round() as usize).max(1);
                    for j in 0..m {
                        let ph = 2.0 * PI * j as f64 / m as f64;
                        directions.push(vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
                        bands.push((b, j, m));
                    }
                }
                Ok(AngularPartition { dim, directions, family, spacing: dp, bands })
            }
            d => Err(Error::Dimension(d)),
        }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Weight of piece `j` at the unit direction of lattice frequency `i`.
    pub fn weight(&self, grid: &Grid, j: usize, i: usize) -> f64 {
        let k = grid.kmag()[i];
        if k == 0.0 {
            return 0.0;
        }
        match self.dim {
            2 => {
                let th = grid.xi(i, 1).atan2(grid.xi(i, 0));
                let c = j as f64 * self.spacing;
                let d = (th - c + PI).rem_euclid(2.0 * PI) - PI;
                1.0 - self.family.step(d.abs() / self.spacing)
            }
            _ => {
                let (b, jj, m) = self.bands[j];
                let th = (grid.xi(i, 2) / k).clamp(-1.0, 1.0).acos();
                let polar = 1.0 - self.family.step((th - b as f64 * self.spacing).abs() / self.spacing);
                if polar == 0.0 {
                    return 0.0;
                }
                if m == 1 {
                    return polar;
                }
                let ph = grid.xi(i, 1).atan2(grid.xi(i, 0));
                let ds = 2.0 * PI / m as f64;
                let d = (ph - jj as f64 * ds + PI).rem_euclid(2.0 * PI) - PI;
                polar * (1.0 - self.family.step(d.abs() / ds))
            }
        }
    }
}

/// Band of the block cutoffs `chi_b` as a fraction of the wave frequency `mu`.
pub const CUTOFF_BAND: f64 = 0.25;

/// Radial factor of the sector multipliers: 1 on `[mu/4, 9mu/4]`, which contains the
/// spectrum of `chi_b * phi` for a frequency-`mu` wave; supported in `[mu/8, 5mu/2]`.
pub fn sector_radial(family: Smoothness, k: f64, mu: f64) -> f64 {
    family.plateau(k, 0.125 * mu, 0.25 * mu, 2.25 * mu, 2.5 * mu)
}

/// Sector multiplier `P_{mu,omega}` with angular half-width `width` around `omega`.
pub fn sector_symbol(grid: &Grid, mu: f64, omega: &[f64], width: f64, family: Smoothness) -> Result<Multiplier> {
    let resolution = (2.0 * PI / grid.len()) / (0.25 * mu);
    if width < resolution {
        return Err(Error::AngularResolution { width, resolution });
    }
    let symbol = (0..grid.size())
        .map(|i| {
            let a = angle_to(grid, i, omega);
            (1.0 - family.step(a / width)) * sector_radial(family, grid.kmag()[i], mu)
        })
        .collect();
    Ok(Multiplier { symbol, family, label: format!("P_{{{mu},omega}}") })
}

pub fn sector_project(w: &FreeWave, mu: f64, omega: &[f64], width: f64) -> Result<FreeWave> {
    Ok(sector_symbol(w.grid(), mu, omega, width, Smoothness::Exp)?.apply(w))
}

/// Sparse sector support: lattice indices and symbol values for one direction.
#[derive(Debug, Clone)]
pub struct SectorSupport {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// The shipped family `P_{mu,omega_j}` built from an angular partition; the pieces sum
/// to the radial factor.
#[derive(Debug, Clone)]
pub struct SectorFamily {
    pub mu: f64,
    pub partition: AngularPartition,
    pub supports: Vec<SectorSupport>,
}

impl SectorFamily {
    pub fn new(grid: &Grid, mu: f64, partition: AngularPartition) -> Result<SectorFamily> {
        let resolution = (2.0 * PI / grid.len()) / (0.25 * mu);
        if partition.spacing() < resolution {
            return Err(Error::AngularResolution { width: partition.spacing(), resolution });
        }
        let fam = partition.family;
        let mut supports: Vec<SectorSupport> =
            (0..partition.len()).map(|_| SectorSupport { indices: vec![], weights: vec![] }).collect();
        for i in 0..grid.size() {
            let r = sector_radial(fam, grid.kmag()[i], mu);
            if r == 0.0 {
                continue;
            }
            for (j, s) in supports.iter_mut().enumerate() {
                let w = partition.weight(grid, j, i) * r;
                if w != 0.0 {
                    s.indices.push(i);
                    s.weights.push(w);
                }
            }
        }
        Ok(SectorFamily { mu, partition, supports })
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }
}

/// Band-limited partition of unity `chi_b = P_band 1_{Q_b}` over a block lattice.
#[derive(Debug, Clone)]
pub struct CutoffFamily {
    grid: Arc<Grid>,
    pub blocks_per_axis: usize,
    /// Block boundaries (lattice indices) along each axis, length `blocks + 1`.
    bounds: Vec<usize>,
    pub band: f64,
    pub family: Smoothness,
    symbol: Vec<f64>,
    /// Unitary 1-d transforms of each block indicator.
    dft1d: Vec<Vec<C64>>,
}

impl CutoffFamily {
    /// Blocks of side about `spacing`; `band` is the frequency support radius of chi.
    pub fn new(grid: &Arc<Grid>, spacing: f64, band: f64, family: Smoothness) -> Result<CutoffFamily> {
        let n = grid.points();
        let k = ((grid.len() / spacing).round() as usize).clamp(1, n);
        let bounds: Vec<usize> = (0..=k).map(|i| ((i * n) as f64 / k as f64).round() as usize).collect();
        let norm = (n as f64).sqrt().recip();
        let dft1d = (0..k)
            .map(|b| {
                (0..n)
                    .map(|m| {
                        (bounds[b]..bounds[b + 1])
                            .map(|j| C64::from_polar(norm, -2.0 * PI * ((m * j) % n) as f64 / n as f64))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let symbol = grid.kmag().iter().map(|&r| family.bump(r / band)).collect();
        Ok(CutoffFamily { grid: grid.clone(), blocks_per_axis: k, bounds, band, family, symbol, dft1d })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.blocks_per_axis.pow(self.grid.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block_multi(&self, b: usize) -> Vec<usize> {
        let k = self.blocks_per_axis;
        let d = self.grid.dim();
        (0..d).map(|a| (b / k.pow((d - 1 - a) as u32)) % k).collect()
    }

    /// Mean block side length.
    pub fn spacing(&self) -> f64 {
        self.grid.len() / self.blocks_per_axis as f64
    }

    pub fn center(&self, b: usize) -> Vec<f64> {
        let h = self.grid.spacing();
        self.block_multi(b)
            .iter()
            .map(|&m| 0.5 * (self.bounds[m] + self.bounds[m + 1]) as f64 * h - 0.5 * h)
            .collect()
    }

    pub fn uniform(&self) -> bool {
        self.grid.points().is_multiple_of(self.blocks_per_axis)
    }

    /// Lattice indices of the block `Q_b`.
    pub fn block_indices(&self, b: usize) -> Vec<usize> {
        let m = self.block_multi(b);
        (0..self.grid.size())
            .filter(|&i| (0..self.grid.dim()).all(|a| {
                let j = self.grid.axis_index(i, a);
                j >= self.bounds[m[a]] && j < self.bounds[m[a] + 1]
            }))
            .collect()
    }

    /// Spectrum of `chi_b`.
    pub fn chi_spectrum(&self, b: usize) -> Result<Vec<C64>> {
        if b >= self.len() {
            return Err(Error::UnknownCenter(b));
        }
        let m = self.block_multi(b);
        let g = &self.grid;
        let d = g.dim();
        let scale = (g.size() as f64).sqrt() / (g.points() as f64).sqrt().powi(d as i32);
        Ok((0..g.size())
            .map(|i| {
                if self.symbol[i] == 0.0 {
                    return C64::default();
                }
                let mut v = C64::new(self.symbol[i] * scale, 0.0);
                for (a, &mb) in m.iter().enumerate() {
                    v *= self.dft1d[mb][g.axis_index(i, a)];
                }
                v
            })
            .collect())
    }

    /// Physical values of `chi_b` (real).
    pub fn chi(&self, b: usize) -> Result<Vec<f64>> {
        let mut s = self.chi_spectrum(b)?;
        self.grid.inverse(&mut s);
        Ok(s.iter().map(|v| v.re).collect())
    }

    /// Measured `max |chi_b(x)| (1 + |x - x_b|/s)^M`.
    pub fn decay_constant(&self, b: usize, m: i32) -> Result<f64> {
        let chi = self.chi(b)?;
        let d = self.grid.distance_to(&self.center(b));
        let s = self.spacing();
        Ok(chi.iter().zip(&d).map(|(c, r)| c.abs() * (1.0 + r / s).powi(m)).fold(0.0, f64::max))
    }
}

/// Multiply position and velocity by `chi_b`.
pub fn spatial_cutoff(d: &WaveState, family: &CutoffFamily, b: usize) -> Result<WaveState> {
    d.grid().ensure_same(family.grid())?;
    let chi = family.chi(b)?;
    let mul = |f: &crate::grid::Field| {
        let v = f.values().iter().zip(&chi).map(|(x, c)| x * c).collect();
        crate::grid::Field::from_values(f.grid(), v, crate::grid::Repr::Physical)
    };
    WaveState::new(mul(&d.pos)?, mul(&d.vel)?, d.time)
}

/// Fraction of the L1 mass of the physical kernel of `symbol` inside the box centered
/// at the origin with half-length `along` in direction `omega` and half-width
/// `across` transverse to it.
pub fn kernel_mass_fraction(grid: &Grid, symbol: &[f64], omega: &[f64], along: f64, across: f64) -> f64 {
    let mut k: Vec<C64> = symbol.iter().map(|&s| C64::new(s, 0.0)).collect();
    grid.inverse(&mut k);
    let origin = vec![0.0; grid.dim()];
    let disp: Vec<Vec<f64>> = (0..grid.dim()).map(|a| grid.displacement(&origin, a)).collect();
    let (mut inside, mut total) = (0.0, 0.0);
    for i in 0..grid.size() {
        let m = k[i].norm();
        total += m;
        let par: f64 = (0..grid.dim()).map(|a| disp[a][i] * omega[a]).sum();
        let r2: f64 = (0..grid.dim()).map(|a| disp[a][i] * disp[a][i]).sum();
        let perp = (r2 - par * par).max(0.0).sqrt();
        if par.abs() <= along && perp <= across {
            inside += m;
        }
    }
    inside / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Repr;
    use crate::waves::{random_wave, Localization, Sign};

    fn residual(a: &FreeWave, b: &FreeWave) -> f64 {
        a.sub(b).unwrap().energy()
    }

    #[test]
    fn lp_idempotent_on_support_and_kills_distant_band() {
        let g = Grid::new(2, 128, 64.0).unwrap();
        let w = random_wave(&g, 1.0, 1, None).unwrap();
        let p = lp_project_with(&w, 1.0, LpKind::Reproducing);
        assert!(residual(&p, &w) < 1e-24);
        let far = lp_project(&w, 0.125).unwrap();
        assert_eq!(far.energy(), 0.0);
    }

    #[test]
    fn dyadic_partition_telescopes() {
        let g = Grid::new(2, 64, 32.0).unwrap();
        let w = FreeWave::from_coefficients(
            &g,
            (0..g.size()).map(|i| C64::new((i % 7) as f64, (i % 3) as f64)).collect(),
            vec![C64::default(); g.size()],
        )
        .unwrap();
        let mut sum = FreeWave::zero(&g);
        for lam in dyadic_cover(&g) {
            sum.add_assign(&lp_project_with(&w, lam, LpKind::Partition)).unwrap();
        }
        assert!(residual(&sum, &w) <= 1e-10 * w.energy());
    }

    #[test]
    fn fractional_derivatives() {
        let g = Grid::new(2, 32, 16.0).unwrap();
        let w = random_wave(&g, 1.0, 4, None).unwrap();
        let id = frac_derivative(&w, 0.0, DerivKind::Homogeneous);
        assert!(residual(&id, &w) < 1e-28);
        let rt = frac_derivative(&frac_derivative(&w, 0.5, DerivKind::Homogeneous), -0.5, DerivKind::Homogeneous);
        assert!(residual(&rt, &w) <= 1e-24 * w.energy());
        let p = FreeWave::plane(&g, &[2, 3], Sign::Plus, C64::new(1.0, 0.0)).unwrap();
        let d2 = frac_derivative(&p, 2.0, DerivKind::Homogeneous);
        let k2 = g.freqs()[2].powi(2) + g.freqs()[3].powi(2);
        let expect = p.scale(C64::new(k2, 0.0));
        assert!(residual(&d2, &expect) < 1e-20 * expect.energy());
        let inh = frac_derivative(&p, 1.0, DerivKind::Inhomogeneous);
        assert!((inh.energy() / p.energy() - (1.0 + k2)).abs() < 1e-10);
    }

    #[test]
    fn angular_partition_sums_to_one() {
        let g = Grid::new(2, 64, 32.0).unwrap();
        for fam in [Smoothness::Exp, Smoothness::Poly(2)] {
            let p = AngularPartition::new(2, 0.3, fam).unwrap();
            for i in 1..g.size() {
                let s: f64 = (0..p.len()).map(|j| p.weight(&g, j, i)).sum();
                assert!((s - 1.0).abs() < 1e-14);
            }
        }
        let g3 = Grid::new(3, 16, 8.0).unwrap();
        let p3 = AngularPartition::new(3, 0.5, Smoothness::Exp).unwrap();
        for i in 1..g3.size() {
            let s: f64 = (0..p3.len()).map(|j| p3.weight(&g3, j, i)).sum();
            assert!((s - 1.0).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn sectors_reproduce_radial_projection() {
        let g = Grid::new(2, 128, 64.0).unwrap();
        let mu = 2.0;
        let w = random_wave(&g, mu, 8, None).unwrap();
        let fam = SectorFamily::new(&g, mu, AngularPartition::new(2, 0.25, Smoothness::Exp).unwrap()).unwrap();
        let mut sum = vec![C64::default(); g.size()];
        for s in &fam.supports {
            for (&i, &wt) in s.indices.iter().zip(&s.weights) {
                sum[i] += wt * w.a_plus()[i];
            }
        }
        let total = FreeWave::from_coefficients(&g, sum, vec![C64::default(); g.size()]).unwrap();
        let radial = w.map_symbol(|i| C64::new(sector_radial(Smoothness::Exp, g.kmag()[i], mu), 0.0));
        assert!(residual(&total, &radial) <= 1e-10 * w.energy());
        // The frequency-mu spectrum lies where the radial factor is 1.
        assert!(residual(&radial, &w) < 1e-24);
    }

    #[test]
    fn sector_examples() {
        let g = Grid::new(2, 128, 64.0).unwrap();
        let k = 8usize;
        let mu = g.freqs()[k];
        let center = FreeWave::plane(&g, &[k as i64, 0], Sign::Plus, C64::new(1.0, 0.0)).unwrap();
        let p = sector_project(&center, mu, &[1.0, 0.0], 0.6).unwrap();
        assert!(residual(&p, &center) < 1e-20 * center.energy());
        let perp = FreeWave::plane(&g, &[0, k as i64], Sign::Plus, C64::new(1.0, 0.0)).unwrap();
        assert_eq!(sector_project(&perp, mu, &[1.0, 0.0], 0.6).unwrap().energy(), 0.0);
        assert!(sector_project(&center, mu, &[1.0, 0.0], 1e-4).is_err());
    }

    #[test]
    fn disjoint_sectors_are_orthogonal() {
        let g = Grid::new(2, 64, 32.0).unwrap();
        let w = random_wave(&g, 2.0, 3, None).unwrap();
        let a = sector_project(&w, 2.0, &[1.0, 0.0], 0.4).unwrap();
        let b = sector_project(&w, 2.0, &[-1.0, 0.0], 0.4).unwrap();
        assert_eq!(a.energy_inner(&b).norm(), 0.0);
    }

    #[test]
    fn cutoffs_partition_unity_and_decay() {
        let g = Grid::new(2, 128, 64.0).unwrap();
        let fam = CutoffFamily::new(&g, 6.7, 0.5, Smoothness::Exp).unwrap();
        assert!(!fam.uniform());
        let mut sum = vec![0.0; g.size()];
        for b in 0..fam.len() {
            for (s, c) in sum.iter_mut().zip(fam.chi(b).unwrap()) {
                *s += c;
            }
        }
        assert!(sum.iter().all(|s| (s - 1.0).abs() < 1e-10));
        let c = fam.decay_constant(5, 2 * 2 + 2).unwrap();
        assert!(c.is_finite() && c > 0.0);
        assert!(fam.chi(fam.len()).is_err());
    }

    #[test]
    fn chi_spectrum_matches_direct_transform() {
        let g = Grid::new(2, 32, 16.0).unwrap();
        let fam = CutoffFamily::new(&g, 3.0, 1.0, Smoothness::Exp).unwrap();
        let b = 7;
        let mut ind = vec![C64::default(); g.size()];
        for i in fam.block_indices(b) {
            ind[i] = C64::new(1.0, 0.0);
        }
        g.forward(&mut ind);
        let sym: Vec<f64> = g.kmag().iter().map(|&k| Smoothness::Exp.bump(k / 1.0)).collect();
        let fast = fam.chi_spectrum(b).unwrap();
        for i in 0..g.size() {
            assert!((ind[i] * sym[i] - fast[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn cutoff_examples() {
        let g = Grid::new(2, 128, 64.0).unwrap();
        let fam = CutoffFamily::new(&g, 4.0, 1.0, Smoothness::Exp).unwrap();
        let loc = Localization { center: vec![8.0, 8.0], radius: 3.0 };
        let w = random_wave(&g, 2.0, 2, Some(&loc)).unwrap();
        let d = w.evaluate(0.0);
        let mut acc = crate::grid::Field::zeros(&g, Repr::Physical);
        for b in 0..fam.len() {
            let c = spatial_cutoff(&d, &fam, b).unwrap();
            acc.values_mut().iter_mut().zip(c.pos.values()).for_each(|(a, v)| *a += v);
        }
        for (a, v) in acc.values().iter().zip(d.pos.values()) {
            assert!((a - v).norm() < 1e-10);
        }
        // A block ten spacings away from the data.
        let far = (0..fam.len()).find(|&b| {
            let c = fam.center(b);
            (c[0] - 48.0).abs() < 2.5 && (c[1] - 48.0).abs() < 2.5
        });
        let far = far.unwrap();
        let e = spatial_cutoff(&d, &fam, far).unwrap().energy().unwrap();
        assert!(e <= 1e-6 * d.energy().unwrap(), "{e}");
        let z = FreeWave::zero(&g).evaluate(0.0);
        assert_eq!(spatial_cutoff(&z, &fam, 0).unwrap().energy().unwrap(), 0.0);
    }
}

//! Wave-packet decompositions of a frequency-`mu` free wave into pieces adapted to
//! tubes of length `R` and width `r`, and the checks of their defining properties.
//!
//! Variant A (phase space): `phi_T(0) = P_{mu,omega}(chi_{x0} phi(0))` for each
//! half-wave sign, with block cutoffs of side `s = R^{-eps/2} r` and `s/R`-separated
//! sector directions. There is no error term.
//!
//! Variant B (two times): `phi_T = U(t)(chi_{x0} U(-tau)(chi_{x_tau} phi[tau]))` over
//! pairs of blocks whose separation is within `window * Lambda` of `tau = 3R`; all
//! other pairs form the error wave.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bump::Smoothness;
use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::geometry::{unit, Tube};
use crate::grid::{Grid, C64};
use crate::spectral::{AngularPartition, CutoffFamily, SectorFamily, CUTOFF_BAND};
use crate::waves::{FreeWave, Sign};

/// Packets below this fraction of `E(phi)` are ignored by the subset and
/// localization samplers.
pub const SIGNIFICANT: f64 = 1e-6;
/// Constant `C` in the `R^{C eps}` loss of the almost-orthogonality bound.
pub const ORTHO_C: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    PhaseSpace,
    TwoTime,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::PhaseSpace => "A",
            Variant::TwoTime => "B",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketParams {
    pub variant: Variant,
    pub big_r: f64,
    pub r: f64,
    /// Nominal block spacing.
    pub s: f64,
    /// Block side actually used on the lattice.
    pub block_side: f64,
    pub lambda: f64,
    pub mu: f64,
    pub eps: f64,
    /// Second time slice (variant B; zero for A).
    pub tau: f64,
    /// Null-ray window in units of `lambda` (variant B).
    pub window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketOptions {
    /// Frequency of the input; estimated from the spectrum when absent.
    pub mu: Option<f64>,
    pub family: Smoothness,
    pub window: f64,
    /// Variant B: the least energetic centers `x_tau` whose combined share of the
    /// energy of `phi[tau]` stays below this are not split into packets and go to
    /// the error wave whole.
    pub keep_floor: f64,
    /// Variant B: blocks per axis (must divide the lattice size).
    pub blocks: Option<usize>,
}

impl Default for PacketOptions {
    fn default() -> Self {
        PacketOptions { mu: None, family: Smoothness::Exp, window: 4.0, keep_floor: 1e-6, blocks: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacketLabel {
    Sector { sign: Sign, block: usize, direction: usize },
    Pair { block: usize, target: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketInfo {
    pub tube: Tube,
    pub label: PacketLabel,
    /// `E(phi_T)`. For variant B this is the block energy of the back-propagated
    /// piece on `Q_{x0}`, rescaled so that the pairs sharing `x_tau` add up to their
    /// exact total.
    pub energy: f64,
}

#[derive(Debug, Clone)]
enum Engine {
    Empty,
    PhaseSpace { cutoff: CutoffFamily, sectors: SectorFamily },
    TwoTime(TwoTimeEngine),
}

#[derive(Debug, Clone)]
struct TwoTimeEngine {
    cutoff: CutoffFamily,
    chi0: Vec<f64>,
    /// Window cutoff `sum_{x0 in W} chi_{x0}` for the center in block 0.
    mask0: Vec<f64>,
    offsets: Vec<Vec<i64>>,
    /// Per kept center: block index.
    kept: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PacketDecomposition {
    pub params: PacketParams,
    pub phi: FreeWave,
    pub packets: Vec<PacketInfo>,
    pub packet_sum: FreeWave,
    pub error: FreeWave,
    /// `sum_T E(phi_T)`, exact for both variants.
    pub bessel_sum: f64,
    /// `E(phi - sum_T phi_T - phi_error)`.
    pub residual_energy: f64,
    /// Packet energy carried by each half-wave sign (`[plus, minus]`).
    pub sign_energy: [f64; 2],
    /// Variant B: worst relative change of energy under `U(-tau)` over the centers.
    pub unitarity_defect: f64,
    /// Variant B: centers lumped into the error without splitting.
    pub dropped_centers: usize,
    engine: Engine,
}

fn check_width(big_r: f64, r: f64, eps: f64) -> Result<()> {
    let lo = big_r.powf(0.5 + eps);
    let tol = 1e-9;
    if !(r >= lo * (1.0 - tol) && r <= big_r * (1.0 + tol)) {
        return Err(Error::Parameter(format!("tube width {r} outside [R^(1/2+eps), R] = [{lo}, {big_r}]")));
    }
    Ok(())
}

/// Dyadic frequency `2^round(log2 <|xi|>)` of a wave, weighted by energy.
pub fn dominant_frequency(phi: &FreeWave) -> Option<f64> {
    let k = phi.grid().kmag();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k.len() {
        let w = k[i] * k[i] * (phi.a_plus()[i].norm_sqr() + phi.a_minus()[i].norm_sqr());
        num += w * k[i];
        den += w;
    }
    (den > 0.0).then(|| 2f64.powf((num / den).log2().round()))
}

fn spectral_energy(g: &Grid, a: &[C64]) -> f64 {
    let k = g.kmag();
    a.iter().zip(k).map(|(c, &r)| r * r * c.norm_sqr()).sum::<f64>() * g.cell_volume()
}

/// Energy `(1/2) int |grad p|^2 + |v|^2` of spectral data.
fn data_energy(g: &Grid, p: &[C64], v: &[C64]) -> f64 {
    let k = g.kmag();
    let s: f64 = (0..p.len()).map(|i| k[i] * k[i] * p[i].norm_sqr() + v[i].norm_sqr()).sum();
    0.5 * s * g.cell_volume()
}

/// Half-wave coefficients at time zero of data given at time `t`.
fn split_back(g: &Grid, p: &[C64], v: &[C64], t: f64) -> (Vec<C64>, Vec<C64>) {
    let k = g.kmag();
    let mut ap = vec![C64::default(); p.len()];
    let mut am = vec![C64::default(); p.len()];
    for i in 1..p.len() {
        let q = C64::new(0.0, 1.0) * v[i] / k[i];
        let e = C64::from_polar(1.0, t * k[i]);
        ap[i] = 0.5 * (p[i] - q) * e.conj();
        am[i] = 0.5 * (p[i] + q) * e;
    }
    (ap, am)
}

/// [`split_back`] with a precomputed table of `e^{it|xi|}`.
fn split_back_with(g: &Grid, p: &[C64], v: &[C64], phase: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let k = g.kmag();
    let mut ap = vec![C64::default(); p.len()];
    let mut am = vec![C64::default(); p.len()];
    for i in 1..p.len() {
        let q = C64::new(0.0, 1.0) * v[i] / k[i];
        ap[i] = 0.5 * (p[i] - q) * phase[i].conj();
        am[i] = 0.5 * (p[i] + q) * phase[i];
    }
    (ap, am)
}

fn physical_to_wave(g: &Arc<Grid>, mut p: Vec<C64>, mut v: Vec<C64>) -> Result<FreeWave> {
    g.forward(&mut p);
    g.forward(&mut v);
    let (ap, am) = split_back(g, &p, &v, 0.0);
    FreeWave::from_coefficients(g, ap, am)
}

/// Cyclic shift of row-major data by `shift` lattice points per axis.
fn roll<T: Copy + Default>(g: &Grid, src: &[T], shift: &[usize]) -> Vec<T> {
    let n = g.points();
    let d = g.dim();
    let last = shift[d - 1] % n;
    let mut out = vec![T::default(); src.len()];
    for line in 0..src.len() / n {
        // Destination line: shift the leading indices.
        let mut rest = line;
        let mut dest = 0;
        let mut mult = 1;
        for a in (0..d - 1).rev() {
            let i = rest % n;
            rest /= n;
            dest += ((i + shift[a]) % n) * mult;
            mult *= n;
        }
        let s = &src[line * n..(line + 1) * n];
        let o = &mut out[dest * n..(dest + 1) * n];
        o[last..].copy_from_slice(&s[..n - last]);
        o[..last].copy_from_slice(&s[n - last..]);
    }
    out
}

fn multiply(a: &[C64], chi: &[f64]) -> Vec<C64> {
    a.iter().zip(chi).map(|(x, c)| x * c).collect()
}

fn empty(phi: &FreeWave, params: PacketParams) -> PacketDecomposition {
    let z = FreeWave::zero(phi.grid());
    PacketDecomposition {
        params,
        phi: phi.clone(),
        packets: vec![],
        packet_sum: z.clone(),
        error: z,
        bessel_sum: 0.0,
        residual_energy: 0.0,
        sign_energy: [0.0; 2],
        unitarity_defect: 0.0,
        dropped_centers: 0,
        engine: Engine::Empty,
    }
}

fn sign_index(s: Sign) -> usize {
    match s {
        Sign::Plus => 0,
        Sign::Minus => 1,
    }
}

pub fn decompose_phase_space(phi: &FreeWave, big_r: f64, r: f64, eps: f64) -> Result<PacketDecomposition> {
    decompose_phase_space_with(phi, big_r, r, eps, &PacketOptions::default())
}

pub fn decompose_phase_space_with(
    phi: &FreeWave,
    big_r: f64,
    r: f64,
    eps: f64,
    opts: &PacketOptions,
) -> Result<PacketDecomposition> {
    check_width(big_r, r, eps)?;
    let g = phi.grid().clone();
    let s = big_r.powf(-0.5 * eps) * r;
    let lambda = big_r.powf(-0.25 * eps) * r;
    let mu = opts.mu.or_else(|| dominant_frequency(phi));
    let mut params = PacketParams {
        variant: Variant::PhaseSpace,
        big_r,
        r,
        s,
        block_side: s,
        lambda,
        mu: mu.unwrap_or(f64::NAN),
        eps,
        tau: 0.0,
        window: 0.0,
    };
    let Some(mu) = mu.filter(|_| !phi.is_zero()) else {
        return Ok(empty(phi, params));
    };
    g.check_headroom(mu)?;
    let cutoff = CutoffFamily::new(&g, s, CUTOFF_BAND * mu, opts.family)?;
    params.block_side = cutoff.spacing();
    let partition = AngularPartition::new(g.dim(), s / big_r, opts.family)?;
    let sectors = SectorFamily::new(&g, mu, partition)?;

    let mut packets = Vec::new();
    let mut sum = [vec![C64::default(); g.size()], vec![C64::default(); g.size()]];
    let mut sign_energy = [0.0; 2];
    let mut engine_view = PhaseSpaceView { grid: &g, cutoff: &cutoff, sectors: &sectors, phi };
    engine_view.for_each(|label, idx, coeffs| {
        let Some((sign, block, direction)) = label else { return Ok(()) };
        let k = g.kmag();
        let e = idx.iter().zip(coeffs).map(|(&i, c)| k[i] * k[i] * c.norm_sqr()).sum::<f64>() * g.cell_volume();
        if e == 0.0 {
            return Ok(());
        }
        let acc = &mut sum[sign_index(sign)];
        idx.iter().zip(coeffs).for_each(|(&i, c)| acc[i] += c);
        sign_energy[sign_index(sign)] += e;
        packets.push(PacketInfo {
            tube: phase_space_tube(&cutoff, &sectors, big_r, r, sign, block, direction)?,
            label: PacketLabel::Sector { sign, block, direction },
            energy: e,
        });
        Ok(())
    })?;
    let [sp, sm] = sum;
    let packet_sum = FreeWave::from_coefficients(&g, sp, sm)?;
    let residual_energy = phi.sub(&packet_sum)?.energy();
    let bessel_sum = packets.iter().map(|p| p.energy).sum();
    check_tube_count(&params, packets.len())?;
    Ok(PacketDecomposition {
        params,
        phi: phi.clone(),
        packets,
        packet_sum,
        error: FreeWave::zero(&g),
        bessel_sum,
        residual_energy,
        sign_energy,
        unitarity_defect: 0.0,
        dropped_centers: 0,
        engine: Engine::PhaseSpace { cutoff, sectors },
    })
}

/// A `+` packet with sector direction `omega` travels along `-omega`.
fn phase_space_tube(
    cutoff: &CutoffFamily,
    sectors: &SectorFamily,
    big_r: f64,
    r: f64,
    sign: Sign,
    block: usize,
    direction: usize,
) -> Result<Tube> {
    let w = &sectors.partition.directions[direction];
    let v: Vec<f64> = match sign {
        Sign::Plus => w.iter().map(|x| -x).collect(),
        Sign::Minus => w.clone(),
    };
    Tube::new(big_r, r, unit(&v)?, cutoff.center(block))
}

fn check_tube_count(params: &PacketParams, count: usize) -> Result<()> {
    // Lemma bound on tubes meeting any R-cube; the whole family is far below it.
    let bound = params.big_r.powi(20);
    if count as f64 > bound {
        return Err(Error::Parameter(format!("{count} tubes exceed R^(10n) = {bound}")));
    }
    Ok(())
}

struct PhaseSpaceView<'a> {
    grid: &'a Arc<Grid>,
    cutoff: &'a CutoffFamily,
    sectors: &'a SectorFamily,
    phi: &'a FreeWave,
}

type SectorKey = Option<(Sign, usize, usize)>;

impl PhaseSpaceView<'_> {
    /// Visit every (sign, block, direction) with the sparse spectrum of its packet.
    fn for_each(&mut self, mut f: impl FnMut(SectorKey, &[usize], &[C64]) -> Result<()>) -> Result<()> {
        let g = self.grid;
        for sign in [Sign::Plus, Sign::Minus] {
            let a = match sign {
                Sign::Plus => self.phi.a_plus(),
                Sign::Minus => self.phi.a_minus(),
            };
            if a.iter().all(|c| c.norm_sqr() == 0.0) {
                continue;
            }
            let mut phys = a.to_vec();
            g.inverse(&mut phys);
            for b in 0..self.cutoff.len() {
                let chi = self.cutoff.chi(b)?;
                let mut buf = multiply(&phys, &chi);
                g.forward(&mut buf);
                for (j, sup) in self.sectors.supports.iter().enumerate() {
                    let coeffs: Vec<C64> = sup.indices.iter().zip(&sup.weights).map(|(&i, &w)| buf[i] * w).collect();
                    f(Some((sign, b, j)), &sup.indices, &coeffs)?;
                }
            }
        }
        Ok(())
    }

    fn packet(&self, sign: Sign, block: usize, direction: usize) -> Result<FreeWave> {
        let g = self.grid;
        let a = match sign {
            Sign::Plus => self.phi.a_plus(),
            Sign::Minus => self.phi.a_minus(),
        };
        let mut phys = a.to_vec();
        g.inverse(&mut phys);
        let chi = self.cutoff.chi(block)?;
        let mut buf = multiply(&phys, &chi);
        g.forward(&mut buf);
        let sup = &self.sectors.supports[direction];
        let mut c = vec![C64::default(); g.size()];
        for (&i, &w) in sup.indices.iter().zip(&sup.weights) {
            c[i] = buf[i] * w;
        }
        let z = vec![C64::default(); g.size()];
        match sign {
            Sign::Plus => FreeWave::from_coefficients(g, c, z),
            Sign::Minus => FreeWave::from_coefficients(g, z, c),
        }
    }
}

/// Divisor of `n` whose block side `len / k` is closest to `target`.
fn nearest_divisor_blocks(n: usize, len: f64, target: f64) -> usize {
    (1..=n)
        .filter(|&k| n.is_multiple_of(k))
        .min_by(|&a, &b| {
            let da = (len / a as f64 - target).abs();
            let db = (len / b as f64 - target).abs();
            da.total_cmp(&db)
        })
        .unwrap_or(1)
}

/// Unitary cyclic convolution with a sum of lattice deltas, given the transform of
/// the delta pattern.
fn convolve(g: &Grid, f: &[f64], pattern: &[C64], laplacian: bool) -> Vec<f64> {
    let mut buf: Vec<C64> = f.iter().map(|&x| C64::new(x, 0.0)).collect();
    g.forward(&mut buf);
    let scale = (g.size() as f64).sqrt();
    let k = g.kmag();
    for i in 0..buf.len() {
        let m = if laplacian { -k[i] * k[i] } else { 1.0 };
        buf[i] *= pattern[i] * scale * m;
    }
    g.inverse(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

pub fn decompose_two_time(phi: &FreeWave, big_r: f64, eps: f64) -> Result<PacketDecomposition> {
    decompose_two_time_with(phi, big_r, eps, &PacketOptions::default())
}

pub fn decompose_two_time_with(phi: &FreeWave, big_r: f64, eps: f64, opts: &PacketOptions) -> Result<PacketDecomposition> {
    let g = phi.grid().clone();
    let n = g.points();
    let dim = g.dim();
    let s = big_r.powf(0.5 + 0.5 * eps);
    let lambda = big_r.powf(0.5 + 0.75 * eps);
    let r = big_r.powf(0.5 + eps).min(big_r);
    let tau = 3.0 * big_r;
    let reach = tau + opts.window * lambda;
    if reach >= 0.5 * g.len() {
        return Err(Error::BoxTooSmall(format!("tau + window = {reach} must stay below L/2 = {}", 0.5 * g.len())));
    }
    let k_blocks = match opts.blocks {
        Some(k) if k == 0 || !n.is_multiple_of(k) => return Err(Error::Parameter(format!("{k} blocks do not divide {n}"))),
        Some(k) => k,
        None => nearest_divisor_blocks(n, g.len(), s),
    };
    let side = g.len() / k_blocks as f64;
    let mu = opts.mu.or_else(|| dominant_frequency(phi));
    let params = PacketParams {
        variant: Variant::TwoTime,
        big_r,
        r,
        s,
        block_side: side,
        lambda,
        mu: mu.unwrap_or(f64::NAN),
        eps,
        tau,
        window: opts.window,
    };
    let Some(mu) = mu.filter(|_| !phi.is_zero()) else {
        return Ok(empty(phi, params));
    };
    g.check_headroom(mu)?;
    let cutoff = CutoffFamily::new(&g, side, CUTOFF_BAND * mu, opts.family)?;
    debug_assert_eq!(cutoff.blocks_per_axis, k_blocks);
    let bpts = n / k_blocks;
    let k = g.kmag();

    let chi0_hat = cutoff.chi_spectrum(0)?;
    let mut buf = chi0_hat.clone();
    g.inverse(&mut buf);
    let chi0: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mut buf: Vec<C64> = chi0_hat.iter().zip(k).map(|(c, &r)| -r * r * c).collect();
    g.inverse(&mut buf);
    let chi0_lap: Vec<f64> = buf.iter().map(|c| c.re).collect();

    // Offsets x0 - x_tau (in blocks) on the null ray through x_tau.
    let kb = k_blocks as i64;
    let mut offsets = Vec::new();
    for m in 0..k_blocks.pow(dim as u32) {
        let off: Vec<i64> = (0..dim)
            .map(|a| {
                let v = ((m / k_blocks.pow((dim - 1 - a) as u32)) % k_blocks) as i64;
                if v > kb / 2 { v - kb } else { v }
            })
            .collect();
        let dist = off.iter().map(|&v| (v as f64 * side).powi(2)).sum::<f64>().sqrt();
        if (dist - tau).abs() <= opts.window * lambda {
            offsets.push(off);
        }
    }
    let shift_of = |off: &[i64]| -> Vec<usize> {
        off.iter().map(|&v| (v.rem_euclid(kb) as usize) * bpts).collect()
    };
    let mut pattern = vec![C64::default(); g.size()];
    for off in &offsets {
        pattern[g.flat_index(&shift_of(off))] = C64::new(1.0, 0.0);
    }
    g.forward(&mut pattern);
    let chi0_sq: Vec<f64> = chi0.iter().map(|c| c * c).collect();
    let chi0_chilap: Vec<f64> = chi0.iter().zip(&chi0_lap).map(|(a, b)| a * b).collect();
    let mask0 = convolve(&g, &chi0, &pattern, false);
    let w1 = convolve(&g, &chi0_sq, &pattern, false);
    let w1_lap = convolve(&g, &chi0_sq, &pattern, true);
    let w2 = convolve(&g, &chi0_chilap, &pattern, false);
    let v0: Vec<f64> = w1_lap.iter().zip(&w2).map(|(a, b)| 0.5 * a - b).collect();

    // phi[tau] and the share of its energy in each block.
    let (p_tau, v_tau) = phi.spectra_at(tau);
    let mut pos = p_tau.clone();
    let mut vel = v_tau.clone();
    g.inverse(&mut pos);
    g.inverse(&mut vel);
    let density = phi.energy_density(tau);
    let nblocks = cutoff.len();
    let block_of: Vec<u32> =
        (0..g.size()).map(|i| (0..dim).fold(0, |acc, a| acc * k_blocks + g.axis_index(i, a) / bpts) as u32).collect();
    let mut block_energy = vec![0.0; nblocks];
    for (i, e) in density.iter().enumerate() {
        block_energy[block_of[i] as usize] += e;
    }
    let total: f64 = block_energy.iter().sum();
    let mut order: Vec<usize> = (0..nblocks).collect();
    order.sort_by(|&a, &b| block_energy[a].total_cmp(&block_energy[b]));
    let mut skipped = 0.0;
    let mut cut = 0;
    while cut < nblocks && skipped + block_energy[order[cut]] <= opts.keep_floor * total {
        skipped += block_energy[order[cut]];
        cut += 1;
    }
    let mut kept: Vec<usize> = order[cut..].to_vec();
    kept.sort_unstable();
    let phase: Vec<C64> = k.iter().map(|&r| C64::from_polar(1.0, tau * r)).collect();

    let size = g.size();
    let h = g.cell_volume();
    let mut sum_p = vec![C64::default(); size];
    let mut sum_v = vec![C64::default(); size];
    let mut err_p = vec![C64::default(); size];
    let mut err_v = vec![C64::default(); size];
    let mut kept_chi = vec![0.0; size];
    let mut packets = Vec::new();
    let mut bessel_sum = 0.0;
    let mut unitarity_defect: f64 = 0.0;
    for &b in &kept {
        let bm = cutoff.block_multi(b);
        let shift: Vec<usize> = bm.iter().map(|&m| m * bpts).collect();
        let chi = roll(&g, &chi0, &shift);
        kept_chi.iter_mut().zip(&chi).for_each(|(a, c)| *a += c);
        let mut fp = multiply(&pos, &chi);
        let mut fv = multiply(&vel, &chi);
        g.forward(&mut fp);
        g.forward(&mut fv);
        let before = data_energy(&g, &fp, &fv);
        let (ap, am) = split_back_with(&g, &fp, &fv, &phase);
        let after = spectral_energy(&g, &ap) + spectral_energy(&g, &am);
        if before > 0.0 {
            unitarity_defect = unitarity_defect.max((after - before).abs() / before);
        }
        let mut psi: Vec<C64> = ap.iter().zip(&am).map(|(a, b)| a + b).collect();
        let mut psi_t: Vec<C64> = (0..size).map(|i| C64::new(0.0, k[i]) * (ap[i] - am[i])).collect();
        let mut psi_lap: Vec<C64> = (0..size).map(|i| -k[i] * k[i] * psi[i]).collect();
        g.inverse(&mut psi);
        g.inverse(&mut psi_t);
        g.inverse(&mut psi_lap);
        let mask = roll(&g, &mask0, &shift);
        let w1b = roll(&g, &w1, &shift);
        let vb = roll(&g, &v0, &shift);
        let mut bessel = 0.0;
        let mut local = vec![0.0; nblocks];
        for i in 0..size {
            let m = mask[i];
            sum_p[i] += m * psi[i];
            sum_v[i] += m * psi_t[i];
            err_p[i] += (1.0 - m) * psi[i];
            err_v[i] += (1.0 - m) * psi_t[i];
            let kin = psi_t[i].norm_sqr() - (psi[i].conj() * psi_lap[i]).re;
            bessel += w1b[i] * kin + vb[i] * psi[i].norm_sqr();
            local[block_of[i] as usize] += psi_t[i].norm_sqr();
        }
        bessel *= 0.5 * h;
        bessel_sum += bessel;
        let targets: Vec<usize> = offsets
            .iter()
            .map(|off| {
                let multi: Vec<usize> = bm.iter().zip(off).map(|(&m, &o)| (m as i64 + o).rem_euclid(kb) as usize).collect();
                multi.iter().fold(0, |acc, &m| acc * k_blocks + m)
            })
            .collect();
        let proxy: f64 = targets.iter().map(|&x0| local[x0]).sum();
        let scale = if proxy > 0.0 { bessel / proxy } else { 0.0 };
        for (off, &x0b) in offsets.iter().zip(&targets) {
            let x0 = cutoff.center(x0b);
            let dir: Vec<f64> = off.iter().map(|&v| -(v as f64) * side).collect();
            packets.push(PacketInfo {
                tube: Tube::new(big_r, r, unit(&dir)?, x0)?,
                label: PacketLabel::Pair { block: x0b, target: b },
                energy: local[x0b] * scale,
            });
        }
    }
    // Centers that were not split go to the error whole.
    let dropped = nblocks - kept.len();
    if dropped > 0 {
        let rest: Vec<f64> = kept_chi.iter().map(|c| 1.0 - c).collect();
        let mut fp = multiply(&pos, &rest);
        let mut fv = multiply(&vel, &rest);
        g.forward(&mut fp);
        g.forward(&mut fv);
        let (ap, am) = split_back(&g, &fp, &fv, tau);
        let mut rp: Vec<C64> = ap.iter().zip(&am).map(|(a, b)| a + b).collect();
        let mut rv: Vec<C64> = (0..size).map(|i| C64::new(0.0, k[i]) * (ap[i] - am[i])).collect();
        g.inverse(&mut rp);
        g.inverse(&mut rv);
        err_p.iter_mut().zip(&rp).for_each(|(a, b)| *a += b);
        err_v.iter_mut().zip(&rv).for_each(|(a, b)| *a += b);
    }
    let packet_sum = physical_to_wave(&g, sum_p, sum_v)?;
    let error = physical_to_wave(&g, err_p, err_v)?;
    let residual_energy = phi.sub(&packet_sum)?.sub(&error)?.energy();
    let sign_energy = [spectral_energy(&g, packet_sum.a_plus()), spectral_energy(&g, packet_sum.a_minus())];
    check_tube_count(&params, packets.len())?;
    Ok(PacketDecomposition {
        params,
        phi: phi.clone(),
        packets,
        packet_sum,
        error,
        bessel_sum,
        residual_energy,
        sign_energy,
        unitarity_defect,
        dropped_centers: dropped,
        engine: Engine::TwoTime(TwoTimeEngine { cutoff, chi0, mask0, offsets, kept }),
    })
}

impl PacketDecomposition {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn tubes(&self) -> impl Iterator<Item = &Tube> {
        self.packets.iter().map(|p| &p.tube)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.phi.grid()
    }

    /// Indices of packets carrying at least `SIGNIFICANT * E(phi)`.
    pub fn significant(&self) -> Vec<usize> {
        let floor = SIGNIFICANT * self.phi.energy();
        (0..self.packets.len()).filter(|&i| self.packets[i].energy >= floor).collect()
    }

    /// Indices sorted by decreasing energy.
    pub fn by_energy(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.packets.len()).collect();
        idx.sort_by(|&a, &b| self.packets[b].energy.total_cmp(&self.packets[a].energy));
        idx
    }

    /// Recompute packet `i` as a free wave.
    pub fn packet(&self, i: usize) -> Result<FreeWave> {
        let info = self.packets.get(i).ok_or(Error::UnknownCenter(i))?;
        match (&self.engine, info.label) {
            (Engine::PhaseSpace { cutoff, sectors }, PacketLabel::Sector { sign, block, direction }) => {
                PhaseSpaceView { grid: self.grid(), cutoff, sectors, phi: &self.phi }.packet(sign, block, direction)
            }
            (Engine::TwoTime(e), PacketLabel::Pair { block, target }) => {
                let (psi, psi_t) = self.back_propagated(e, target)?;
                self.pair_packet(e, &psi, &psi_t, block)
            }
            _ => Err(Error::Parameter("packet label does not match the decomposition".into())),
        }
    }

    /// Physical `U(-tau)(chi_{x_tau} phi[tau])` at time zero (position, velocity).
    fn back_propagated(&self, e: &TwoTimeEngine, target: usize) -> Result<(Vec<C64>, Vec<C64>)> {
        let g = self.grid();
        let k = g.kmag();
        let bpts = g.points() / e.cutoff.blocks_per_axis;
        let (mut pos, mut vel) = self.phi.spectra_at(self.params.tau);
        g.inverse(&mut pos);
        g.inverse(&mut vel);
        let shift: Vec<usize> = e.cutoff.block_multi(target).iter().map(|&m| m * bpts).collect();
        let chi = roll(g, &e.chi0, &shift);
        let mut fp = multiply(&pos, &chi);
        let mut fv = multiply(&vel, &chi);
        g.forward(&mut fp);
        g.forward(&mut fv);
        let (ap, am) = split_back(g, &fp, &fv, self.params.tau);
        let mut psi: Vec<C64> = ap.iter().zip(&am).map(|(a, b)| a + b).collect();
        let mut psi_t: Vec<C64> = (0..g.size()).map(|i| C64::new(0.0, k[i]) * (ap[i] - am[i])).collect();
        g.inverse(&mut psi);
        g.inverse(&mut psi_t);
        Ok((psi, psi_t))
    }

    fn pair_packet(&self, e: &TwoTimeEngine, psi: &[C64], psi_t: &[C64], block: usize) -> Result<FreeWave> {
        let g = self.grid();
        let bpts = g.points() / e.cutoff.blocks_per_axis;
        let shift: Vec<usize> = e.cutoff.block_multi(block).iter().map(|&m| m * bpts).collect();
        let chi = roll(g, &e.chi0, &shift);
        physical_to_wave(g, multiply(psi, &chi), multiply(psi_t, &chi))
    }

    /// Materialize several packets, sharing back-propagations in variant B.
    pub fn packets_for(&self, indices: &[usize]) -> Result<Vec<FreeWave>> {
        match &self.engine {
            Engine::TwoTime(e) => {
                let mut cache: HashMap<usize, (Vec<C64>, Vec<C64>)> = HashMap::new();
                let mut out = Vec::with_capacity(indices.len());
                for &i in indices {
                    let info = self.packets.get(i).ok_or(Error::UnknownCenter(i))?;
                    let PacketLabel::Pair { block, target } = info.label else {
                        return Err(Error::Parameter("packet label does not match the decomposition".into()));
                    };
                    if let std::collections::hash_map::Entry::Vacant(slot) = cache.entry(target) {
                        slot.insert(self.back_propagated(e, target)?);
                    }
                    let (psi, psi_t) = &cache[&target];
                    out.push(self.pair_packet(e, psi, psi_t, block)?);
                }
                Ok(out)
            }
            _ => indices.par_iter().map(|&i| self.packet(i)).collect(),
        }
    }

    /// Centers `x_tau` that were split into packets (variant B).
    pub fn kept_centers(&self) -> &[usize] {
        match &self.engine {
            Engine::TwoTime(e) => &e.kept,
            _ => &[],
        }
    }

    /// Offsets `x0 - x_tau` (in blocks) on the null ray (variant B).
    pub fn null_offsets(&self) -> &[Vec<i64>] {
        match &self.engine {
            Engine::TwoTime(e) => &e.offsets,
            _ => &[],
        }
    }

    /// The window cutoff around a center in block 0 (variant B).
    pub fn window_mask(&self) -> Option<&[f64]> {
        match &self.engine {
            Engine::TwoTime(e) => Some(&e.mask0),
            _ => None,
        }
    }

    /// CSV table with one row per tube: `R, r, omega_*, x0_*, energy, label`.
    pub fn write_tube_table(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.grid().dim();
        let mut header = vec!["R".to_string(), "r".to_string()];
        header.extend((1..=n).map(|a| format!("omega_{a}")));
        header.extend((1..=n).map(|a| format!("x0_{a}")));
        header.extend(["energy", "sign", "block", "partner"].map(String::from));
        w.write_record(&header)?;
        for p in &self.packets {
            let mut row = vec![format!("{:.12e}", p.tube.length), format!("{:.12e}", p.tube.width)];
            row.extend(p.tube.omega.iter().map(|v| format!("{v:.12e}")));
            row.extend(p.tube.x0.iter().map(|v| format!("{v:.12e}")));
            row.push(format!("{:.12e}", p.energy));
            match p.label {
                PacketLabel::Sector { sign, block, direction } => {
                    row.push(if sign == Sign::Plus { "+" } else { "-" }.into());
                    row.push(block.to_string());
                    row.push(direction.to_string());
                }
                PacketLabel::Pair { block, target } => {
                    row.push(String::new());
                    row.push(block.to_string());
                    row.push(target.to_string());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Write packet `i` at time zero in the binary wave format.
    pub fn write_packet(&self, i: usize, stem: &Path) -> Result<()> {
        let w = self.packet(i)?;
        crate::waves::write_snapshot(&w.evaluate(0.0), stem)
    }
}

/// `sum_T E(phi_T) / E(phi)`.
pub fn verify_bessel(d: &PacketDecomposition) -> f64 {
    let e = d.phi.energy();
    if e == 0.0 {
        0.0
    } else {
        d.bessel_sum / e
    }
}

/// Relative decomposition defect `E(phi - sum phi_T - phi_error) / E(phi)`.
pub fn reconstruction_defect(d: &PacketDecomposition) -> f64 {
    let e = d.phi.energy();
    if e == 0.0 {
        0.0
    } else {
        d.residual_energy / e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoReport {
    pub ratios: Vec<f64>,
    pub worst: f64,
    /// Ratio for the full family.
    pub full: f64,
    pub significant: usize,
    pub pass: bool,
}

fn ortho_ratio(d: &PacketDecomposition, numerator: f64, packet_energy: f64) -> f64 {
    let p = &d.params;
    numerator / (p.big_r.powf(ORTHO_C * p.eps) * packet_energy + p.big_r.powi(-8))
}

/// Worst `E(sum_{T'} phi_T) / (R^{C eps} sum_{T'} E(phi_T) + R^{-8})` over `trials`
/// random subsets of the significant packets (each packet kept with probability 1/2).
/// Only the phase-space variant is supported: its packets have sparse spectra.
pub fn verify_ortho(d: &PacketDecomposition, trials: usize, seed: u64) -> Result<OrthoReport> {
    let (cutoff, sectors) = match &d.engine {
        Engine::PhaseSpace { cutoff, sectors } => (cutoff, sectors),
        Engine::Empty => {
            return Ok(OrthoReport { ratios: vec![], worst: 0.0, full: 0.0, significant: 0, pass: true });
        }
        Engine::TwoTime(_) => {
            return Err(Error::Parameter(
                "subset almost-orthogonality is measured on phase-space decompositions; \
                 use verify_pair_orthogonality for the two-time variant"
                    .into(),
            ))
        }
    };
    let g = d.grid();
    let k = g.kmag();
    let full = ortho_ratio(d, d.packet_sum.energy(), d.bessel_sum);
    let significant = d.significant();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members: Vec<Vec<bool>> =
        significant.iter().map(|_| (0..trials).map(|_| rng.random_bool(0.5)).collect()).collect();
    let lookup: HashMap<(Sign, usize, usize), usize> = significant
        .iter()
        .enumerate()
        .filter_map(|(m, &i)| match d.packets[i].label {
            PacketLabel::Sector { sign, block, direction } => Some(((sign, block, direction), m)),
            _ => None,
        })
        .collect();
    // Compact index over the union of sector supports.
    let mut compact = vec![usize::MAX; g.size()];
    let mut count = 0;
    for sup in &sectors.supports {
        for &i in &sup.indices {
            if compact[i] == usize::MAX {
                compact[i] = count;
                count += 1;
            }
        }
    }
    let mut ratios = Vec::with_capacity(trials);
    for chunk in (0..trials).collect::<Vec<_>>().chunks(64) {
        let mut acc: Vec<Vec<Vec<C64>>> = (0..2)
            .map(|s| if d.sign_energy[s] > 0.0 { vec![vec![C64::default(); count]; chunk.len()] } else { vec![] })
            .collect();
        let mut denom = vec![0.0; chunk.len()];
        let mut view = PhaseSpaceView { grid: g, cutoff, sectors, phi: &d.phi };
        view.for_each(|key, idx, coeffs| {
            let Some(key) = key else { return Ok(()) };
            let Some(&m) = lookup.get(&key) else { return Ok(()) };
            let e = d.packets[significant[m]].energy;
            let s = sign_index(key.0);
            for (c, &t) in chunk.iter().enumerate() {
                if members[m][t] {
                    denom[c] += e;
                    let a = &mut acc[s][c];
                    idx.iter().zip(coeffs).for_each(|(&i, v)| a[compact[i]] += v);
                }
            }
            Ok(())
        })?;
        let kc: Vec<f64> = {
            let mut v = vec![0.0; count];
            for i in 0..g.size() {
                if compact[i] != usize::MAX {
                    v[compact[i]] = k[i] * k[i];
                }
            }
            v
        };
        for c in 0..chunk.len() {
            let num: f64 = (0..2)
                .filter(|&s| !acc[s].is_empty())
                .map(|s| acc[s][c].iter().zip(&kc).map(|(a, w)| w * a.norm_sqr()).sum::<f64>())
                .sum::<f64>()
                * g.cell_volume();
            ratios.push(ortho_ratio(d, num, denom[c]));
        }
    }
    let worst = ratios.iter().copied().fold(full, f64::max);
    Ok(OrthoReport { pass: worst <= 1.0, ratios, worst, full, significant: significant.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOrthoReport {
    pub pairs: usize,
    pub worst: f64,
    pub pass: bool,
}

/// Tube gap `min_t |c(t) - c'(t)| - 2r` over samples of `[R, 2R]` (torus metric).
fn tube_gap(g: &Grid, a: &Tube, b: &Tube, samples: usize) -> f64 {
    let big_r = a.length;
    (0..samples)
        .map(|j| {
            let t = big_r * (1.0 + j as f64 / (samples - 1) as f64);
            let (ca, cb) = (a.center_at(t), b.center_at(t));
            let d2: f64 = ca.iter().zip(&cb).map(|(x, y)| g.wrap(x - y).powi(2)).sum();
            d2.sqrt() - a.width - b.width
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// For pairs among the `candidates` most energetic packets whose tubes are at least
/// `8r` apart at some sampled time in `[R, 2R]`, the worst normalized energy inner
/// product `|<phi_T, phi_T'>_e| / (E(phi_T) E(phi_T'))^{1/2}`.
pub fn verify_pair_orthogonality(d: &PacketDecomposition, candidates: usize, max_pairs: usize) -> Result<PairOrthoReport> {
    let g = d.grid();
    let idx: Vec<usize> = d.by_energy().into_iter().take(candidates).collect();
    let mut pairs = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            if tube_gap(g, &d.packets[i].tube, &d.packets[j].tube, 9) >= 8.0 * d.params.r {
                pairs.push((i, j));
            }
        }
    }
    pairs.truncate(max_pairs);
    let mut needed: Vec<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
    needed.sort_unstable();
    needed.dedup();
    let waves = d.packets_for(&needed)?;
    let pos: HashMap<usize, usize> = needed.iter().enumerate().map(|(m, &i)| (i, m)).collect();
    let worst = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&waves[pos[&i]], &waves[pos[&j]]);
            let den = (a.energy() * b.energy()).sqrt();
            if den > 0.0 {
                a.energy_inner(b).norm() / den
            } else {
                0.0
            }
        })
        .reduce(|| 0.0, f64::max);
    Ok(PairOrthoReport { pairs: pairs.len(), worst, pass: worst <= 1e-5 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PacketSelection {
    All,
    Indices(Vec<usize>),
    /// The `top` most energetic packets plus `random` others drawn from the
    /// significant ones.
    TopAndRandom { top: usize, random: usize, seed: u64 },
}

impl PacketSelection {
    pub fn resolve(&self, d: &PacketDecomposition) -> Vec<usize> {
        match self {
            PacketSelection::All => (0..d.len()).collect(),
            PacketSelection::Indices(v) => v.clone(),
            PacketSelection::TopAndRandom { top, random, seed } => {
                let order = d.by_energy();
                let mut out: Vec<usize> = order.iter().copied().take(*top).collect();
                let rest: Vec<usize> =
                    d.significant().into_iter().filter(|i| !out.contains(i)).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let m = (*random).min(rest.len());
                out.extend(sample(&mut rng, rest.len(), m).into_iter().map(|j| rest[j]));
                out
            }
        }
    }
}

/// Distance thresholds (multiples of `R`) at which exterior fractions are reported.
pub const SHELLS: [f64; 5] = [0.0, 0.125, 0.25, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSample {
    pub time: f64,
    /// `(D, share of E(phi_T) at distance >= D from T)`.
    pub fractions: Vec<(f64, f64)>,
    /// Energy at distance `>= D` from `T` divided by `E(phi)`, for the same `D`.
    pub exterior: Vec<f64>,
    /// Minus the log-log slope of the exterior energy over `D = R/4, R/2, R`.
    pub order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    /// `(k, max over |alpha| = k of (E(Sigma^alpha phi_T)/E(phi_T))^{1/2} / (Lambda mu/R)^k)`.
    pub normalized: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketLocalization {
    pub index: usize,
    pub energy: f64,
    pub samples: Vec<LocalizationSample>,
    pub sigma: SigmaReport,
    /// Worst exterior energy at distance `R`, relative to `E(phi)`.
    pub far: f64,
    pub order: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub packets: Vec<PacketLocalization>,
    pub far: f64,
    pub order: f64,
    pub pass: bool,
}

/// Exterior energy fractions of a packet around its tube at the given times.
pub fn verify_localization(d: &PacketDecomposition, times: &[f64], selection: &PacketSelection) -> Result<LocalizationReport> {
    let big_r = d.params.big_r;
    if let Some(t) = times.iter().find(|&&t| !(0.5 * big_r..=2.5 * big_r).contains(&t)) {
        return Err(Error::Parameter(format!("time {t} outside [R/2, 5R/2]")));
    }
    let idx = selection.resolve(d);
    let waves = d.packets_for(&idx)?;
    let packets: Vec<PacketLocalization> = idx
        .par_iter()
        .zip(waves.par_iter())
        .map(|(&i, w)| localize_packet(d, i, w, times))
        .collect::<Result<_>>()?;
    let far = packets.iter().map(|p| p.far).fold(0.0, f64::max);
    let order = packets.iter().map(|p| p.order).fold(f64::INFINITY, f64::min);
    let pass = packets.iter().all(|p| p.pass);
    Ok(LocalizationReport { packets, far, order, pass })
}

fn localize_packet(d: &PacketDecomposition, i: usize, w: &FreeWave, times: &[f64]) -> Result<PacketLocalization> {
    let g = d.grid();
    let tube = &d.packets[i].tube;
    let big_r = d.params.big_r;
    let e_phi = d.phi.energy();
    let mut samples = Vec::new();
    for &t in times {
        let e = w.energy_density(t);
        let c: Vec<f64> = tube.center_at(t).iter().map(|x| x.rem_euclid(g.len())).collect();
        let dist = g.distance_to(&c);
        let total: f64 = e.iter().sum();
        let outside: Vec<f64> = SHELLS
            .iter()
            .map(|&m| {
                let dd = m * big_r;
                e.iter().zip(&dist).filter(|(_, &r)| (r - tube.width).max(0.0) >= dd).map(|(v, _)| v).sum()
            })
            .collect();
        let fractions = SHELLS
            .iter()
            .zip(&outside)
            .map(|(&m, &o)| (m * big_r, if total > 0.0 { o / total } else { 0.0 }))
            .collect();
        let exterior: Vec<f64> = outside.iter().map(|o| o * g.cell_volume() / e_phi).collect();
        let tail = &exterior[2..];
        let order = if tail.iter().all(|&f| f > 0.0) {
            let x: Vec<f64> = SHELLS[2..].iter().map(|m| (m * big_r).ln()).collect();
            let y: Vec<f64> = tail.iter().map(|f| f.ln()).collect();
            -linear_fit(&x, &y)?.slope
        } else {
            f64::INFINITY
        };
        samples.push(LocalizationSample { time: t, fractions, exterior, order });
    }
    let far = samples.iter().map(|s| s.exterior.last().copied().unwrap_or(0.0)).fold(0.0, f64::max);
    let order = samples.iter().map(|s| s.order).fold(f64::INFINITY, f64::min);
    let sigma = sigma_diagnostics(d, i, w, 4);
    Ok(PacketLocalization {
        index: i,
        energy: d.packets[i].energy,
        samples,
        sigma,
        far,
        order,
        pass: far <= 1e-6 && order >= 4.0,
    })
}

/// Unit vectors orthogonal to `w` (n = 2 or 3).
fn transverse(w: &[f64]) -> Vec<Vec<f64>> {
    match w.len() {
        2 => vec![vec![-w[1], w[0]]],
        _ => {
            let a = if w[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let dot = a[0] * w[0] + a[1] * w[1] + a[2] * w[2];
            let u: Vec<f64> = (0..3).map(|i| a[i] - dot * w[i]).collect();
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let u: Vec<f64> = u.iter().map(|x| x / nu).collect();
            let v = vec![w[1] * u[2] - w[2] * u[1], w[2] * u[0] - w[0] * u[2], w[0] * u[1] - w[1] * u[0]];
            vec![u, v]
        }
    }
}

/// Energies of `Sigma^alpha phi_T` with `Sigma = {d_t + omega.grad, e_perp.grad}` for
/// the tube velocity `omega`, normalized by `(Lambda mu / R)^k`.
pub fn sigma_diagnostics(d: &PacketDecomposition, i: usize, w: &FreeWave, kmax: usize) -> SigmaReport {
    let g = w.grid();
    let omega = &d.packets[i].tube.omega;
    let perp = transverse(omega);
    let n = g.dim();
    let k = g.kmag();
    let e0 = w.energy();
    let scale = d.params.lambda * d.params.mu / d.params.big_r;
    // Symbols of the n fields on the a_+ and a_- halves.
    let sym = |i: usize, f: usize, plus: bool| -> f64 {
        let xi: Vec<f64> = (0..n).map(|a| g.xi(i, a)).collect();
        if f == 0 {
            let wx: f64 = omega.iter().zip(&xi).map(|(a, b)| a * b).sum();
            if plus { k[i] + wx } else { wx - k[i] }
        } else {
            perp[f - 1].iter().zip(&xi).map(|(a, b)| a * b).sum()
        }
    };
    let support: Vec<usize> =
        (0..g.size()).filter(|&i| w.a_plus()[i].norm_sqr() + w.a_minus()[i].norm_sqr() > 0.0).collect();
    let table: Vec<Vec<(f64, f64)>> =
        support.iter().map(|&i| (0..n).map(|f| (sym(i, f, true), sym(i, f, false))).collect()).collect();
    let mut normalized = Vec::new();
    for order in 0..=kmax {
        let mut worst: f64 = 0.0;
        for alpha in multi_indices(n, order) {
            let mut e = 0.0;
            for (row, &i) in table.iter().zip(&support) {
                let (mut sp, mut sm) = (1.0, 1.0);
                for (f, &m) in alpha.iter().enumerate() {
                    sp *= row[f].0.powi(m as i32);
                    sm *= row[f].1.powi(m as i32);
                }
                e += k[i] * k[i] * (sp * sp * w.a_plus()[i].norm_sqr() + sm * sm * w.a_minus()[i].norm_sqr());
            }
            worst = worst.max(e * g.cell_volume());
        }
        let v = if e0 > 0.0 { (worst / e0).sqrt() / scale.powi(order as i32) } else { 0.0 };
        normalized.push((order, v));
    }
    SigmaReport { normalized }
}

/// All multi-indices of length `n` with total order `k`.
pub(crate) fn multi_indices(n: usize, k: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![k]];
    }
    (0..=k)
        .flat_map(|first| {
            multi_indices(n - 1, k - first).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

/// Unitarity of `U(-tau)` on cut-off data `chi_b phi[tau]` for every block `b`:
/// worst relative energy change.
pub fn unitarity_check(phi: &FreeWave, cutoff: &CutoffFamily, tau: f64) -> Result<f64> {
    let g = phi.grid();
    let st = phi.evaluate(tau);
    let mut worst: f64 = 0.0;
    for b in 0..cutoff.len() {
        let cut = crate::spectral::spatial_cutoff(&st, cutoff, b)?;
        let p = cut.pos.to_spectral()?.into_values();
        let v = cut.vel.to_spectral()?.into_values();
        let before = data_energy(g, &p, &v);
        let (ap, am) = split_back(g, &p, &v, tau);
        let after = spectral_energy(g, &ap) + spectral_energy(g, &am);
        if before > 0.0 {
            worst = worst.max((after - before).abs() / before);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waves::{random_wave, Localization};

    fn small_grid() -> Arc<Grid> {
        Grid::new(2, 128, 64.0).unwrap()
    }

    #[test]
    fn width_range_is_enforced() {
        let g = small_grid();
        let phi = random_wave(&g, 2.0, 1, None).unwrap();
        assert!(decompose_phase_space(&phi, 16.0, 2.0, 0.1).is_err());
        assert!(decompose_phase_space(&phi, 16.0, 20.0, 0.1).is_err());
    }

    #[test]
    fn zero_wave_gives_empty_decomposition() {
        let g = small_grid();
        let z = FreeWave::zero(&g);
        let d = decompose_phase_space_with(&z, 16.0, 8.0, 0.1, &PacketOptions { mu: Some(2.0), ..Default::default() }).unwrap();
        assert!(d.is_empty());
        assert_eq!(verify_bessel(&d), 0.0);
        assert!(d.error.is_zero());
    }

    #[test]
    fn phase_space_reconstructs_random_wave() {
        let g = small_grid();
        let loc = Localization { center: vec![32.0, 32.0], radius: 8.0 };
        let phi = random_wave(&g, 2.0, 3, Some(&loc)).unwrap();
        let d = decompose_phase_space(&phi, 16.0, 8.0, 0.1).unwrap();
        assert_eq!(d.params.mu, 2.0);
        assert!(reconstruction_defect(&d) < 1e-20, "{}", reconstruction_defect(&d));
        let b = verify_bessel(&d);
        assert!(b > 0.1 && b < 1.05, "{b}");
        assert_eq!(d.sign_energy[1], 0.0);
        // Recomputed packet matches the recorded energy.
        let i = d.by_energy()[0];
        let w = d.packet(i).unwrap();
        assert!((w.energy() - d.packets[i].energy).abs() < 1e-12);
    }

    #[test]
    fn plane_wave_energy_sits_near_its_direction() {
        let g = small_grid();
        // xi0 = (2 pi * 20 / 64) e_1, frequency about 2.
        let phi = FreeWave::plane(&g, &[20, 0], Sign::Plus, C64::new(1.0, 0.0)).unwrap().normalized();
        let d = decompose_phase_space_with(&phi, 16.0, 8.0, 0.1, &PacketOptions { mu: Some(2.0), ..Default::default() })
            .unwrap();
        let sep = d.params.s / d.params.big_r;
        let mut outside = 0.0;
        for p in &d.packets {
            // + packets move against the sector direction.
            let ang = (-p.tube.omega[0].clamp(-1.0, 1.0)).acos();
            if ang > 2.0 * sep + 1e-12 {
                outside += p.energy;
            }
        }
        assert!(outside <= 1e-20 * d.bessel_sum, "{outside}");
    }

    #[test]
    fn ortho_singletons_and_full_set() {
        let g = small_grid();
        let loc = Localization { center: vec![32.0, 32.0], radius: 6.0 };
        let phi = random_wave(&g, 2.0, 5, Some(&loc)).unwrap();
        let d = decompose_phase_space(&phi, 16.0, 8.0, 0.1).unwrap();
        let rep = verify_ortho(&d, 8, 1).unwrap();
        assert_eq!(rep.ratios.len(), 8);
        let expect = d.packet_sum.energy() / (16f64.powf(0.4) * d.bessel_sum + 16f64.powi(-8));
        assert!((rep.full - expect).abs() < 1e-12);
        assert!(rep.worst >= rep.full);
        // A single packet: numerator equals its own energy.
        let i = d.by_energy()[0];
        let e = d.packets[i].energy;
        assert!(ortho_ratio(&d, e, e) <= 1.0);
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(2, 3).len(), 4);
        assert_eq!(multi_indices(3, 2).len(), 6);
    }

    #[test]
    fn roll_is_cyclic_shift() {
        let g = Grid::new(2, 4, 4.0).unwrap();
        let v: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let r = roll(&g, &v, &[1, 3]);
        assert_eq!(r[g.flat_index(&[1, 3])], 0.0);
        assert_eq!(r[g.flat_index(&[0, 0])], v[g.flat_index(&[3, 1])]);
    }

    #[test]
    fn two_time_small_box() {
        // R = 8: tau = 24, Lambda = 8^0.575; L = 128 leaves room for the window.
        let g = Grid::new(2, 256, 128.0).unwrap();
        let loc = Localization { center: vec![64.0, 64.0], radius: 4.0 };
        let phi = random_wave(&g, 2.0, 7, Some(&loc)).unwrap();
        let d = decompose_two_time(&phi, 8.0, 0.1).unwrap();
        assert!(reconstruction_defect(&d) < 1e-8, "{}", reconstruction_defect(&d));
        assert!(d.unitarity_defect < 1e-11, "{}", d.unitarity_defect);
        let b = verify_bessel(&d);
        assert!(b > 0.0 && b <= 10.0, "{b}");
        // The per-pair energies add up to the Bessel sum.
        let s: f64 = d.packets.iter().map(|p| p.energy).sum();
        assert!((s - d.bessel_sum).abs() < 1e-9 * d.bessel_sum.max(1.0));
        // Exact Bessel sum against direct packet energies for a few packets.
        let idx: Vec<usize> = d.by_energy().into_iter().take(3).collect();
        for (w, &i) in d.packets_for(&idx).unwrap().iter().zip(&idx) {
            assert!(w.energy() > 0.0 && d.packets[i].energy > 0.0);
        }
        assert!(verify_ortho(&d, 4, 0).is_err());
        let cutoff = CutoffFamily::new(&g, d.params.block_side, 0.25, Smoothness::Exp).unwrap();
        assert!(unitarity_check(&phi, &cutoff, d.params.tau).unwrap() < 1e-11);
    }

    #[test]
    fn two_time_needs_room() {
        let g = Grid::new(2, 64, 32.0).unwrap();
        let phi = random_wave(&g, 2.0, 1, None).unwrap();
        assert!(matches!(decompose_two_time(&phi, 8.0, 0.1), Err(Error::BoxTooSmall(_))));
    }
}

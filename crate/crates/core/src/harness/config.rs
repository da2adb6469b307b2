//! Declarative experiment configuration, read from TOML.
//!
//! Every key is optional; missing keys take the defaults below, which are the
//! parameters the acceptance criteria run with. Unknown keys are rejected.
//!
//! ```toml
//! dim = 2            # spatial dimension
//! seed = 1           # first seed; run i uses seed + i
//! seeds = 10         # seeds per parameter point (worst case is reported)
//! eps = 0.1          # epsilon of the envelopes and of the tube width rule
//! c = 0.05           # Whitney stopping side rho0 = R^c r
//! ratio_cap = 10.0   # cap on raw LHS/envelope ratios
//! max_points = 1024  # largest lattice size per axis the sweeps may pick
//!
//! [output]
//! dir = "wavepack-out"
//! format = "csv"     # csv | json | human
//!
//! [theorem1]         # box of side box_factor * R, lattice picked per run
//! lambda = 1.0
//! mu = [1.0, 4.0, 16.0]
//! radii = [8.0, 16.0, 32.0, 64.0]
//! small_radii = [0.5]   # R min(lambda, mu) < 1 branch, box small_box
//! ...
//! ```
//!
//! The remaining sections (`theorem2`, `strichartz`, `thickness`, `alpha`,
//! `corollaries`, `decompose`, `decay`, `commutation`, `fixed_time`) are listed
//! with their defaults in `configs/default.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::Format;
use crate::error::{Error, Result};
use crate::grid::HEADROOM;
use crate::nullforms::NullFormKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub seed: u64,
    pub seeds: usize,
    pub eps: f64,
    pub c: f64,
    pub ratio_cap: f64,
    pub max_points: usize,
    pub output: OutputConfig,
    pub theorem1: Theorem1Config,
    pub theorem2: Theorem2Config,
    pub strichartz: StrichartzConfig,
    pub thickness: ThicknessConfig,
    pub alpha: AlphaConfig,
    pub corollaries: CorollaryConfig,
    pub decompose: DecomposeConfig,
    pub decay: DecayConfig,
    pub commutation: CommutationConfig,
    pub fixed_time: FixedTimeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dim: 2,
            seed: 1,
            seeds: 10,
            eps: 0.1,
            c: 0.05,
            ratio_cap: 10.0,
            max_points: 1024,
            output: OutputConfig::default(),
            theorem1: Theorem1Config::default(),
            theorem2: Theorem2Config::default(),
            strichartz: StrichartzConfig::default(),
            thickness: ThicknessConfig::default(),
            alpha: AlphaConfig::default(),
            corollaries: CorollaryConfig::default(),
            decompose: DecomposeConfig::default(),
            decay: DecayConfig::default(),
            commutation: CommutationConfig::default(),
            fixed_time: FixedTimeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: Format,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("wavepack-out"), format: Format::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem1Config {
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub radii: Vec<f64>,
    /// Box side in units of `R`.
    pub box_factor: f64,
    pub small_radii: Vec<f64>,
    pub small_box: f64,
    pub min_points: usize,
    /// Coarse time samples of the cube integral (the fine rule uses `2 s - 1`).
    pub samples: usize,
    pub null_form: String,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Theorem1Config {
            lambda: 1.0,
            mu: vec![1.0, 4.0, 16.0],
            radii: vec![8.0, 16.0, 32.0, 64.0],
            box_factor: 1.0,
            small_radii: vec![0.5],
            small_box: 16.0,
            min_points: 32,
            samples: 9,
            null_form: "Q0".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem2Config {
    pub q: f64,
    pub r: f64,
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub points: usize,
    pub len: f64,
    pub horizon: f64,
    pub samples: usize,
}

impl Default for Theorem2Config {
    fn default() -> Self {
        Theorem2Config {
            q: 8.0,
            r: 8.0,
            lambda: 1.0,
            mu: vec![0.0625, 0.125, 0.25, 0.5],
            points: 256,
            len: 128.0,
            horizon: 32.0,
            samples: 65,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrichartzConfig {
    pub q: f64,
    pub r: f64,
    pub lambda: f64,
    /// Cube sides `1/mu`.
    pub cubes: Vec<f64>,
    pub points: usize,
    pub len: f64,
    /// Horizon in units of `side^2`.
    pub horizon_factor: f64,
    pub max_dt: f64,
}

impl Default for StrichartzConfig {
    fn default() -> Self {
        StrichartzConfig {
            q: 8.0,
            r: 8.0,
            lambda: 1.0,
            cubes: vec![4.0, 8.0, 16.0, 32.0],
            points: 512,
            len: 256.0,
            horizon_factor: 4.0,
            max_dt: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThicknessConfig {
    pub lambda: f64,
    pub cube: f64,
    pub times: Vec<f64>,
    /// Cube sides of the informational rescaling measurement.
    pub rescale_cubes: Vec<f64>,
    pub points: usize,
    pub len: f64,
}

impl Default for ThicknessConfig {
    fn default() -> Self {
        ThicknessConfig {
            lambda: 1.0,
            cube: 4.0,
            times: vec![8.0, 16.0, 32.0, 64.0],
            rescale_cubes: vec![2.0, 4.0, 8.0],
            points: 256,
            len: 256.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaKind {
    /// Fields frozen at one time: the integrand does not depend on `t`.
    Frozen,
    /// Perpendicular beams crossing inside the cube.
    Transverse,
    /// Co-propagating beams.
    Parallel,
}

impl AlphaKind {
    pub fn name(self) -> &'static str {
        match self {
            AlphaKind::Frozen => "frozen",
            AlphaKind::Transverse => "transverse",
            AlphaKind::Parallel => "parallel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaConfig {
    pub kinds: Vec<AlphaKind>,
    pub radii: Vec<f64>,
    pub points: usize,
    pub len: f64,
    /// Angular half-width of the beams.
    pub half_width: f64,
    /// Lateral offset between co-propagating beams.
    pub offset: f64,
    pub samples: usize,
    pub null_form: String,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        AlphaConfig {
            kinds: vec![AlphaKind::Frozen, AlphaKind::Transverse, AlphaKind::Parallel],
            radii: vec![8.0, 16.0, 32.0, 64.0],
            points: 512,
            len: 512.0,
            half_width: 0.25,
            offset: 2.0,
            samples: 9,
            null_form: "Q0".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorollaryConfig {
    /// Dyadic bands summed into each full-spectrum wave.
    pub bands: Vec<f64>,
    pub points: usize,
    pub len: f64,
    /// `lambda >= separation * mu` is high-low.
    pub separation: f64,
    pub samples: usize,
    pub null_form: String,
    pub q: f64,
    pub r: f64,
    pub sigma: f64,
    pub horizon: f64,
}

impl Default for CorollaryConfig {
    fn default() -> Self {
        CorollaryConfig {
            bands: vec![0.5, 1.0, 2.0],
            points: 256,
            len: 64.0,
            separation: 4.0,
            samples: 9,
            null_form: "Q0".into(),
            q: 8.0,
            r: 8.0,
            sigma: 0.5,
            horizon: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    /// `A` (phase space) or `B` (two time).
    pub variant: String,
    pub points: usize,
    pub len: f64,
    pub mu: f64,
    pub big_r: f64,
    /// Tube width `r = R^width_exponent` (variant A).
    pub width_exponent: f64,
    /// Physical localization radius of the input; zero for none.
    pub localization: f64,
    pub keep_floor: f64,
    pub ortho_subsets: usize,
    pub localization_times: Vec<f64>,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig {
            variant: "A".into(),
            points: 512,
            len: 128.0,
            mu: 4.0,
            big_r: 32.0,
            width_exponent: 0.6,
            localization: 16.0,
            keep_floor: 1e-6,
            ortho_subsets: 64,
            localization_times: vec![16.0, 32.0, 48.0, 64.0, 80.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub lambda: f64,
    pub big_lambda: f64,
    pub radii: Vec<f64>,
    pub times: usize,
    pub seeds: usize,
    pub points: usize,
    pub len: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig { lambda: 1.0, big_lambda: 4.0, radii: vec![16.0, 32.0, 64.0], times: 5, seeds: 3, points: 512, len: 512.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommutationConfig {
    pub lambda: f64,
    pub big_lambda: f64,
    pub times: Vec<f64>,
    pub fields: Vec<String>,
    pub seeds: usize,
    pub points: usize,
    pub len: f64,
}

impl Default for CommutationConfig {
    fn default() -> Self {
        CommutationConfig {
            lambda: 2.0,
            big_lambda: 8.0,
            times: vec![8.0, 16.0, 32.0],
            fields: ["d1", "d2", "L1", "L2", "O12", "S"].iter().map(|s| s.to_string()).collect(),
            seeds: 3,
            points: 512,
            len: 256.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedTimeConfig {
    pub lambda: f64,
    pub mu: f64,
    pub big_r: f64,
    pub focus_time: f64,
    pub big_lambdas: Vec<f64>,
    pub samples: usize,
    pub null_form: String,
    pub points: usize,
    pub len: f64,
}

impl Default for FixedTimeConfig {
    fn default() -> Self {
        FixedTimeConfig {
            lambda: 1.0,
            mu: 2.0,
            big_r: 64.0,
            focus_time: 96.0,
            big_lambdas: vec![8.0, 11.3, 16.0, 22.6, 32.0],
            samples: 17,
            null_form: "Q12".into(),
            points: 512,
            len: 256.0,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(bad(format!("{name} must be a nonempty list of positive numbers")));
    }
    Ok(())
}

fn fit_points(name: &str, v: &[f64]) -> Result<()> {
    positive(name, v)?;
    if v.len() < 3 {
        return Err(bad(format!("{name} needs at least 3 values for a slope fit")));
    }
    Ok(())
}

fn null_form(name: &str, s: &str, dim: usize) -> Result<NullFormKind> {
    let k: NullFormKind = s.parse().map_err(|_| bad(format!("{name}: unknown null form {s:?}")))?;
    k.validate(dim).map_err(|e| bad(format!("{name}: {e}")))?;
    Ok(k)
}

/// Lattice `points` over `len` must be a power of two and leave headroom for `freq`.
fn lattice(name: &str, points: usize, len: f64, freq: f64, max_points: usize) -> Result<()> {
    if !points.is_power_of_two() || points < 8 {
        return Err(bad(format!("{name}.points = {points} must be a power of two >= 8")));
    }
    if points > max_points {
        return Err(bad(format!("{name}.points = {points} exceeds max_points = {max_points}")));
    }
    if !(len > 0.0) {
        return Err(bad(format!("{name}.len must be positive")));
    }
    let limit = HEADROOM * std::f64::consts::PI * points as f64 / len;
    if 2.0 * freq > limit {
        return Err(bad(format!("{name}: frequency {freq} exceeds the headroom {:.3} of {points} points over {len}", 0.5 * limit)));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| bad(e.to_string()))
    }

    /// Seeds of the runs at one parameter point.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if !(2..=3).contains(&d) {
            return Err(bad(format!("dim = {d} (supported: 2, 3)")));
        }
        if self.seeds == 0 {
            return Err(bad("seeds must be at least 1"));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(bad(format!("eps = {} outside (0, 1/2)", self.eps)));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(bad(format!("c = {} outside (0, 1)", self.c)));
        }
        if !(self.ratio_cap > 0.0) {
            return Err(bad("ratio_cap must be positive"));
        }
        if !self.max_points.is_power_of_two() {
            return Err(bad("max_points must be a power of two"));
        }
        let mp = self.max_points;

        let t1 = &self.theorem1;
        positive("theorem1.lambda", &[t1.lambda])?;
        fit_points("theorem1.mu", &t1.mu)?;
        fit_points("theorem1.radii", &t1.radii)?;
        if !t1.small_radii.is_empty() {
            positive("theorem1.small_radii", &t1.small_radii)?;
        }
        if !(t1.box_factor >= 1.0) {
            return Err(bad("theorem1.box_factor must be at least 1 so the cube fits in the box"));
        }
        if t1.small_radii.iter().any(|&r| r > t1.small_box) {
            return Err(bad("theorem1.small_radii must fit in small_box"));
        }
        if t1.samples < 2 {
            return Err(bad("theorem1.samples must be at least 2"));
        }
        null_form("theorem1", &t1.null_form, d)?;

        let t2 = &self.theorem2;
        if !super::check_admissible(t2.q, t2.r, d) {
            return Err(Error::Inadmissible { q: t2.q, r: t2.r, n: d });
        }
        fit_points("theorem2.mu", &t2.mu)?;
        lattice("theorem2", t2.points, t2.len, 2.0 * t2.lambda, mp)?;
        if !(t2.horizon > 0.0) || t2.samples < 2 {
            return Err(bad("theorem2 needs a positive horizon and at least 2 samples"));
        }

        let st = &self.strichartz;
        if !super::check_admissible(st.q, st.r, d) {
            return Err(Error::Inadmissible { q: st.q, r: st.r, n: d });
        }
        fit_points("strichartz.cubes", &st.cubes)?;
        lattice("strichartz", st.points, st.len, st.lambda, mp)?;
        if st.cubes.iter().any(|&s| s > st.len || s < st.len / st.points as f64) {
            return Err(bad("strichartz.cubes must lie between the lattice spacing and the box"));
        }

        let th = &self.thickness;
        fit_points("thickness.times", &th.times)?;
        lattice("thickness", th.points, th.len, th.lambda, mp)?;
        positive("thickness.rescale_cubes", &th.rescale_cubes)?;
        if th.times.iter().any(|&t| t >= 0.5 * th.len) {
            return Err(bad("thickness.times must stay below half the box (wrap-around)"));
        }

        let al = &self.alpha;
        fit_points("alpha.radii", &al.radii)?;
        lattice("alpha", al.points, al.len, 1.0, mp)?;
        let rmax = al.radii.iter().cloned().fold(0.0, f64::max);
        if al.len < 8.0 * rmax {
            return Err(bad(format!("alpha: box {} below 8 max R = {}", al.len, 8.0 * rmax)));
        }
        null_form("alpha", &al.null_form, d)?;

        let co = &self.corollaries;
        positive("corollaries.bands", &co.bands)?;
        let top = co.bands.iter().cloned().fold(0.0, f64::max);
        lattice("corollaries", co.points, co.len, top, mp)?;
        null_form("corollaries", &co.null_form, d)?;
        if !super::check_admissible(co.q, co.r, d) {
            return Err(Error::Inadmissible { q: co.q, r: co.r, n: d });
        }

        let de = &self.decompose;
        if de.variant != "A" && de.variant != "B" {
            return Err(bad(format!("decompose.variant = {:?} (A or B)", de.variant)));
        }
        lattice("decompose", de.points, de.len, de.mu, mp)?;
        if !(de.width_exponent >= 0.5 + self.eps && de.width_exponent <= 1.0) {
            return Err(bad("decompose.width_exponent must lie in [1/2 + eps, 1]"));
        }

        let dc = &self.decay;
        fit_points("decay.radii", &dc.radii)?;
        lattice("decay", dc.points, dc.len, dc.lambda, mp)?;
        let rmax = dc.radii.iter().cloned().fold(0.0, f64::max);
        if dc.len < 4.0 * rmax {
            return Err(bad("decay: box must hold the exterior region r >= 2t up to t = 2R"));
        }

        let cm = &self.commutation;
        lattice("commutation", cm.points, cm.len, cm.lambda, mp)?;
        positive("commutation.times", &cm.times)?;

        let ft = &self.fixed_time;
        fit_points("fixed_time.big_lambdas", &ft.big_lambdas)?;
        lattice("fixed_time", ft.points, ft.len, ft.lambda.max(ft.mu), mp)?;
        null_form("fixed_time", &ft.null_form, d)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn shipped_default_file_matches_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.toml");
        assert_eq!(ExperimentConfig::load(&path).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn partial_files_take_defaults() {
        let cfg = ExperimentConfig::from_toml_str("seed = 7\n[theorem1]\nmu = [1.0, 2.0, 4.0]\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.theorem1.mu, vec![1.0, 2.0, 4.0]);
        assert_eq!(cfg.theorem1.radii, Theorem1Config::default().radii);
        assert_eq!(cfg.seed_list()[..3], [7, 8, 9]);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "colour = 3",
            "eps = 0.7",
            "[theorem2]\nq = 2.0\nr = 2.0\n",
            "[alpha]\nlen = 256.0\npoints = 256\n",
            "[strichartz]\npoints = 100\n",
            "[strichartz]\npoints = 128\n",
            "[theorem1]\nnull_form = \"Q13\"\n",
            "[theorem1]\nradii = [8.0, 16.0]\n",
            "[decompose]\nvariant = \"C\"\n",
            "[output]\nformat = \"xml\"\n",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}

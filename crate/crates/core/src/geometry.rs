//! Tubes, dyadic cubes and the bilinear Whitney pairing of tube positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `{(x, t) : |x - t omega - x0| <= r, 0 <= t <= 3R}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub length: f64,
    pub width: f64,
    pub omega: Vec<f64>,
    pub x0: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalize a nonzero vector.
pub fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Parameter("zero direction".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Angle between two unit vectors.
pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).acos()
}

impl Tube {
    pub fn new(length: f64, width: f64, omega: Vec<f64>, x0: Vec<f64>) -> Result<Tube> {
        if !(width >= 1.0 && width <= length) {
            return Err(Error::Parameter(format!("tube width {width} outside [1, {length}]")));
        }
        if (norm(&omega) - 1.0).abs() > 1e-14 || omega.len() != x0.len() {
            return Err(Error::Parameter("tube velocity must be a unit vector".into()));
        }
        Ok(Tube { length, width, omega, x0 })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Axis point at time `t`.
    pub fn center_at(&self, t: f64) -> Vec<f64> {
        self.x0.iter().zip(&self.omega).map(|(x, w)| x + t * w).collect()
    }

    pub fn horizon(&self) -> f64 {
        3.0 * self.length
    }

    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        (0.0..=self.horizon()).contains(&t) && axis_offset(self, x, t) <= self.width
    }
}

fn axis_offset(tube: &Tube, x: &[f64], s: f64) -> f64 {
    let c = tube.center_at(s);
    x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Euclidean spacetime distance from `(x, t)` to the closed tube.
pub fn tube_distance(x: &[f64], t: f64, tube: &Tube) -> f64 {
    if tube.contains(x, t) {
        return 0.0;
    }
    // f(s) = dist(x, ball(center(s), r))^2 + (t - s)^2 is convex in s.
    let f = |s: f64| {
        let d = (axis_offset(tube, x, s) - tube.width).max(0.0);
        d * d + (t - s) * (t - s)
    };
    let (mut a, mut b) = (0.0, tube.horizon());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if b - a < 1e-13 * (1.0 + tube.horizon()) {
            break;
        }
    }
    [f(0.0), f(tube.horizon()), f(0.5 * (a + b))].into_iter().fold(f64::INFINITY, f64::min).sqrt()
}

/// Dyadic cube `[corner * 2^level, (corner + 1) * 2^level)` per axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: i32,
    pub corner: Vec<i64>,
}

impl DyadicCube {
    pub fn new(level: i32, corner: Vec<i64>) -> DyadicCube {
        DyadicCube { level, corner }
    }

    pub fn side(&self) -> f64 {
        2f64.powi(self.level)
    }

    pub fn parent(&self) -> DyadicCube {
        DyadicCube { level: self.level + 1, corner: self.corner.iter().map(|c| c.div_euclid(2)).collect() }
    }

    /// Cube of this level containing `x`.
    pub fn containing(level: i32, x: &[f64]) -> DyadicCube {
        let s = 2f64.powi(level);
        DyadicCube { level, corner: x.iter().map(|v| (v / s).floor() as i64).collect() }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let s = self.side();
        x.iter().zip(&self.corner).all(|(v, &c)| *v >= c as f64 * s && *v < (c + 1) as f64 * s)
    }

    /// Touching at faces or corners; every cube is adjacent to itself.
    pub fn adjacent(&self, other: &DyadicCube) -> Result<bool> {
        if self.level != other.level {
            return Err(Error::LevelMismatch(self.level as u32, other.level as u32));
        }
        Ok(self.corner.iter().zip(&other.corner).all(|(a, b)| (a - b).abs() <= 1))
    }
}

/// `kappa ~ kappa'`: not adjacent, with adjacent parents.
pub fn close_relation(a: &DyadicCube, b: &DyadicCube) -> Result<bool> {
    Ok(!a.adjacent(b)? && a.parent().adjacent(&b.parent())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PairClassification {
    /// First level at which the containing cubes are close.
    Transverse(DyadicCube, DyadicCube),
    /// Containing cubes at side `rho0`, equal or adjacent.
    Parallel(DyadicCube, DyadicCube),
}

impl PairClassification {
    pub fn side(&self) -> f64 {
        match self {
            PairClassification::Transverse(a, _) | PairClassification::Parallel(a, _) => a.side(),
        }
    }

    pub fn is_transverse(&self) -> bool {
        matches!(self, PairClassification::Transverse(..))
    }
}

/// Tree walk parameters: root cube, stopping side and the boundary jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitney {
    pub root: DyadicCube,
    pub rho0: f64,
    pub jitter: f64,
}

impl Whitney {
    pub fn new(root: DyadicCube, rho0: f64, jitter: f64) -> Result<Whitney> {
        let j = rho0.log2().round() as i32;
        if !(rho0 > 0.0) || 2f64.powi(j) != rho0 || j > root.level {
            return Err(Error::NotDyadic { rho0, side: root.side() });
        }
        Ok(Whitney { root, rho0, jitter })
    }

    pub fn stop_level(&self) -> i32 {
        self.rho0.log2().round() as i32
    }

    /// Move coordinates that sit on a dyadic boundary (any level down to `rho0`) by
    /// the jitter.
    pub fn jittered(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let q = v / self.rho0;
                if (q - q.round()).abs() < 1e-12 {
                    v + self.jitter
                } else {
                    v
                }
            })
            .collect()
    }

    fn position(&self, tube: &Tube) -> Result<Vec<f64>> {
        let x = self.jittered(&tube.x0);
        if x.len() != self.root.corner.len() || !self.root.contains(&x) {
            return Err(Error::OutsideRoot);
        }
        Ok(x)
    }

    /// Walk down from the root; transverse at the first close level, parallel if the
    /// walk reaches side `rho0` without separating.
    pub fn classify(&self, a: &Tube, b: &Tube) -> Result<PairClassification> {
        let xa = self.position(a)?;
        let xb = self.position(b)?;
        let stop = self.stop_level();
        let mut level = self.root.level;
        while level > stop {
            level -= 1;
            let ka = DyadicCube::containing(level, &xa);
            let kb = DyadicCube::containing(level, &xb);
            if close_relation(&ka, &kb)? {
                return Ok(PairClassification::Transverse(ka, kb));
            }
        }
        Ok(PairClassification::Parallel(DyadicCube::containing(stop, &xa), DyadicCube::containing(stop, &xb)))
    }
}

pub fn classify_pair(a: &Tube, b: &Tube, rho0: f64, root: &DyadicCube) -> Result<PairClassification> {
    Whitney::new(root.clone(), rho0, rho0 / 1088.0)?.classify(a, b)
}

/// Largest number of cubes in `cubes` close to a single member.
pub fn close_multiplicity(cubes: &[DyadicCube]) -> Result<usize> {
    let mut best = 0;
    for a in cubes {
        let mut m = 0;
        for b in cubes {
            if b.level == a.level && close_relation(a, b)? {
                m += 1;
            }
        }
        best = best.max(m);
    }
    Ok(best)
}

/// Bounding cube of the sampled intersection of two tubes over `[R, 2R]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectionBox {
    pub side: f64,
    /// `side / (R r / rho)`.
    pub ratio: f64,
    pub angle: f64,
}

/// Sample `T cap T'` for `t in [R, 2R]` on a spacetime lattice of spacing `r/16` and
/// return the side of the smallest axis-aligned spacetime cube containing it.
pub fn transverse_intersection_box(a: &Tube, b: &Tube, rho: f64) -> Result<IntersectionBox> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::Parameter("tube dimensions differ".into()));
    }
    let th = angle(&a.omega, &b.omega);
    if th < 1e-12 {
        return Err(Error::NotTransverse);
    }
    let (big_r, r) = (a.length, a.width.max(b.width));
    let step = a.width.min(b.width) / 16.0;
    let nt = ((big_r / step).ceil() as usize).max(2);
    let mut lo = vec![f64::INFINITY; n + 1];
    let mut hi = vec![f64::NEG_INFINITY; n + 1];
    let m = (2.0 * r / step).ceil() as i64;
    let mut idx = vec![-m; n];
    for k in 0..=nt {
        let t = big_r + big_r * k as f64 / nt as f64;
        let ca = a.center_at(t);
        let cb = b.center_at(t);
        if axis_offset(a, &cb, t) > a.width + b.width {
            continue;
        }
        idx.iter_mut().for_each(|v| *v = -m);
        loop {
            let x: Vec<f64> = (0..n).map(|d| ca[d] + idx[d] as f64 * step).collect();
            if axis_offset(a, &x, t) <= a.width && axis_offset(b, &x, t) <= b.width {
                lo[0] = lo[0].min(t);
                hi[0] = hi[0].max(t);
                for d in 0..n {
                    lo[d + 1] = lo[d + 1].min(x[d]);
                    hi[d + 1] = hi[d + 1].max(x[d]);
                }
            }
            let mut d = 0;
            while d < n {
                idx[d] += 1;
                if idx[d] <= m {
                    break;
                }
                idx[d] = -m;
                d += 1;
            }
            if d == n {
                break;
            }
        }
    }
    if !lo[0].is_finite() {
        return Err(Error::Disjoint);
    }
    let side = (0..=n).map(|d| hi[d] - lo[d]).fold(0.0, f64::max);
    Ok(IntersectionBox { side, ratio: side / (big_r * r / rho), angle: th })
}

/// Two tubes with directions `wa`, `wb` whose axes pass through `(x, t)`.
pub fn tubes_through(x: &[f64], t: f64, wa: &[f64], wb: &[f64], length: f64, width: f64) -> Result<(Tube, Tube)> {
    let mk = |w: &[f64]| {
        let w = unit(w)?;
        let x0 = x.iter().zip(&w).map(|(p, v)| p - t * v).collect();
        Tube::new(length, width, w, x0)
    };
    Ok((mk(wa)?, mk(wb)?))
}

/// Initial separation of two tubes.
pub fn separation(a: &Tube, b: &Tube) -> f64 {
    a.x0.iter().zip(&b.x0).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn tube2(omega: [f64; 2], x0: [f64; 2]) -> Tube {
        Tube::new(32.0, 4.0, unit(&omega).unwrap(), x0.to_vec()).unwrap()
    }

    #[test]
    fn tube_validation() {
        assert!(Tube::new(8.0, 0.5, vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(Tube::new(8.0, 9.0, vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(Tube::new(8.0, 2.0, vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn distance_examples() {
        let t = tube2([0.6, 0.8], [1.0, 2.0]);
        assert_eq!(tube_distance(&t.center_at(10.0), 10.0, &t), 0.0);
        let perp = [-0.8, 0.6];
        for d in [0.5, 3.0, 7.0] {
            let x = [1.0 + (4.0 + d) * perp[0], 2.0 + (4.0 + d) * perp[1]];
            let got = tube_distance(&x, 0.0, &t);
            assert!((got - d).abs() < 1e-9, "{got} vs {d}");
        }
        // Below the bottom face.
        assert!((tube_distance(&[1.0, 2.0], -2.5, &t) - 2.5).abs() < 1e-9);
    }

    fn brute(x: &[f64], t: f64, tube: &Tube) -> f64 {
        // Dense sampling of the axis time and of the lateral boundary.
        let mut best = f64::INFINITY;
        let steps = 60_000;
        for k in 0..=steps {
            let s = tube.horizon() * k as f64 / steps as f64;
            let c = tube.center_at(s);
            let off = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt();
            let lateral = (off - tube.width).max(0.0);
            best = best.min((lateral * lateral + (t - s) * (t - s)).sqrt());
        }
        best
    }

    #[test]
    fn distance_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = tube2([1.0, -0.5], [4.0, 4.0]);
        for _ in 0..40 {
            let x = [rng.random_range(-120.0..120.0), rng.random_range(-120.0..120.0)];
            let s = rng.random_range(-30.0..130.0);
            let d = tube_distance(&x, s, &t);
            assert!((d - brute(&x, s, &t)).abs() < 1e-6 * (1.0 + d), "{x:?} {s}");
        }
    }

    #[test]
    fn close_relation_examples() {
        let a = DyadicCube::new(0, vec![0, 0]);
        assert!(!close_relation(&a, &a).unwrap());
        assert!(close_relation(&a, &DyadicCube::new(0, vec![3, 0])).unwrap());
        assert!(!close_relation(&a, &DyadicCube::new(0, vec![1, 0])).unwrap());
        // Parents [0,2) and [4,6): two apart.
        assert!(!close_relation(&a, &DyadicCube::new(0, vec![4, 0])).unwrap());
        assert!(close_relation(&a, &DyadicCube::new(1, vec![3, 0])).is_err());
    }

    #[test]
    fn classification_examples() {
        let root = DyadicCube::new(6, vec![0, 0]);
        let rho0 = 4.0;
        let a = tube2([1.0, 0.0], [10.3, 20.7]);
        let b = tube2([0.0, 1.0], [10.9, 21.2]);
        assert!(!classify_pair(&a, &b, rho0, &root).unwrap().is_transverse());
        let c = tube2([0.0, 1.0], [10.3 + 32.0, 20.7]);
        let p = classify_pair(&a, &c, rho0, &root).unwrap();
        assert!(p.is_transverse());
        assert!(p.side() >= 16.0);
        assert!(matches!(classify_pair(&a, &b, 3.0, &root), Err(Error::NotDyadic { .. })));
        let out = tube2([1.0, 0.0], [70.0, 1.0]);
        assert!(matches!(classify_pair(&a, &out, rho0, &root), Err(Error::OutsideRoot)));
    }

    #[test]
    fn boundary_positions_are_jittered() {
        let root = DyadicCube::new(5, vec![0, 0]);
        let w = Whitney::new(root, 2.0, 0.01).unwrap();
        assert_eq!(w.jittered(&[4.0, 3.0]), vec![4.01, 3.0]);
    }

    #[test]
    fn dichotomy_on_random_pairs() {
        let root = DyadicCube::new(6, vec![0, 0]);
        let w = Whitney::new(root, 2.0, 1.0 / 17.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let a = tube2([1.0, 0.0], [rng.random_range(0.0..64.0), rng.random_range(0.0..64.0)]);
            let b = tube2([1.0, 0.0], [rng.random_range(0.0..64.0), rng.random_range(0.0..64.0)]);
            match w.classify(&a, &b).unwrap() {
                PairClassification::Transverse(ka, kb) => {
                    assert!(close_relation(&ka, &kb).unwrap());
                    assert!(ka.side() >= 2.0);
                }
                PairClassification::Parallel(ka, kb) => {
                    assert_eq!(ka.side(), 2.0);
                    assert!(ka.adjacent(&kb).unwrap());
                }
            }
        }
    }

    #[test]
    fn multiplicity_bound() {
        let mut cubes = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                cubes.push(DyadicCube::new(0, vec![i, j]));
            }
        }
        let m = close_multiplicity(&cubes).unwrap();
        assert!(m <= 36 && m > 0, "{m}");
    }

    #[test]
    fn intersection_box_scaling() {
        let big_r = 64.0;
        let r = 8.0;
        let p = [0.0, 0.0];
        let t: f64 = 1.5 * big_r;
        let mut sides = Vec::new();
        for rho in [32.0, 64.0] {
            let th: f64 = 2.0 * (rho / (2.0 * t)).asin();
            let (a, b) = tubes_through(&p, t, &[1.0, 0.0], &[th.cos(), th.sin()], big_r, r).unwrap();
            assert!((separation(&a, &b) - rho).abs() < 1e-9);
            let bx = transverse_intersection_box(&a, &b, rho).unwrap();
            assert!(bx.ratio <= 16.0, "{bx:?}");
            sides.push(bx.side);
        }
        let q = sides[0] / sides[1];
        assert!((1.0..=4.0).contains(&q), "{sides:?}");
        let (a, _) = tubes_through(&p, t, &[1.0, 0.0], &[0.0, 1.0], big_r, r).unwrap();
        assert!(matches!(transverse_intersection_box(&a, &a, 32.0), Err(Error::NotTransverse)));
        let far = Tube::new(big_r, r, vec![0.0, 1.0], vec![500.0, 0.0]).unwrap();
        assert!(matches!(transverse_intersection_box(&a, &far, 32.0), Err(Error::Disjoint)));
    }

    #[test]
    fn angle_separation_link() {
        let big_r = 32.0;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let x = [rng.random_range(0.0..big_r), rng.random_range(0.0..big_r)];
            let t = rng.random_range(big_r..2.0 * big_r);
            let (p, q): (f64, f64) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
            let (a, b) = tubes_through(&x, t, &[p.cos(), p.sin()], &[q.cos(), q.sin()], big_r, 2.0).unwrap();
            let rho = separation(&a, &b);
            let th = angle(&a.omega, &b.omega);
            if rho > 1e-9 {
                assert!(th >= rho / (4.0 * big_r) && th <= 4.0 * rho / big_r);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn distance_zero_iff_inside(x in -60.0f64..60.0, y in -60.0f64..60.0, t in -10.0f64..110.0) {
            let tube = tube2([0.8, 0.6], [0.0, 0.0]);
            let d = tube_distance(&[x, y], t, &tube);
            proptest::prop_assert!(d >= 0.0);
            proptest::prop_assert_eq!(d == 0.0, tube.contains(&[x, y], t));
        }
    }
}

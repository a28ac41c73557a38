//! Geometry of the cosphere bundle `R^n × S^{n-1}`.

use std::f64::consts::{E, PI};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{dot3, norm3, GridSpec};

/// A position and a unit direction. Unused components are zero in two dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CospherePoint {
    pub x: [f64; 3],
    pub omega: [f64; 3],
}

impl CospherePoint {
    /// Checked constructor; `omega` must already be a unit vector.
    pub fn new(x: [f64; 3], omega: [f64; 3]) -> Result<Self> {
        if (norm3(omega) - 1.0).abs() >= 1e-12 {
            return Err(Error::Domain(format!("direction {omega:?} is not a unit vector")));
        }
        Ok(CospherePoint { x, omega })
    }

    /// Normalizes the direction.
    pub fn from_direction(x: [f64; 3], dir: [f64; 3]) -> Result<Self> {
        let n = norm3(dir);
        if !(n > 0.0) {
            return Err(Error::Domain("zero direction".into()));
        }
        Ok(CospherePoint { x, omega: [dir[0] / n, dir[1] / n, dir[2] / n] })
    }

    pub fn planar(x: [f64; 2], theta: f64) -> Self {
        CospherePoint { x: [x[0], x[1], 0.0], omega: [theta.cos(), theta.sin(), 0.0] }
    }
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// `d̃²` for a given spatial difference `z = x - y`.
#[inline]
pub fn quasi_dist_sq_z(z: [f64; 3], omega: [f64; 3], nu: [f64; 3]) -> f64 {
    let dw = sub(omega, nu);
    dot3(omega, z).abs() + dot3(nu, z).abs() + dot3(z, z) + dot3(dw, dw)
}

/// `d̃(p,q)² = |⟨ω,x−y⟩| + |⟨ν,x−y⟩| + |x−y|² + |ω−ν|²`.
#[inline]
pub fn quasi_dist_sq(p: &CospherePoint, q: &CospherePoint) -> f64 {
    quasi_dist_sq_z(sub(p.x, q.x), p.omega, q.omega)
}

pub fn quasi_dist(p: &CospherePoint, q: &CospherePoint) -> f64 {
    quasi_dist_sq(p, q).sqrt()
}

/// `d̃` with the minimal-image spatial difference on the grid's torus.
pub fn quasi_dist_torus(p: &CospherePoint, q: &CospherePoint, grid: &GridSpec) -> f64 {
    quasi_dist_sq_z(grid.min_image(p.x, q.x), p.omega, q.omega).sqrt()
}

/// Reduced form without the `|⟨ν,x−y⟩|` term; `ũd ≤ d̃ ≤ √2·ũd`.
pub fn reduced_dist(p: &CospherePoint, q: &CospherePoint) -> f64 {
    let z = sub(p.x, q.x);
    let dw = sub(p.omega, q.omega);
    (dot3(p.omega, z).abs() + dot3(z, z) + dot3(dw, dw)).sqrt()
}

/// Surface measure of `S^{n-1}`.
pub fn sphere_measure(dim: usize) -> f64 {
    match dim {
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Quadrature nodes on the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereGrid {
    dim: usize,
    directions: Vec<[f64; 3]>,
    weights: Vec<f64>,
    uniform_circle: bool,
}

impl SphereGrid {
    /// `A` equally spaced angles `θ_j = 2πj/A` on the circle, weight `2π/A`.
    pub fn circle(a: usize) -> Result<Self> {
        if a < 4 {
            return Err(Error::Config(format!("need at least 4 directions, got {a}")));
        }
        let directions = (0..a)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / a as f64;
                [t.cos(), t.sin(), 0.0]
            })
            .collect();
        Ok(SphereGrid { dim: 2, directions, weights: vec![2.0 * PI / a as f64; a], uniform_circle: true })
    }

    /// Fibonacci point set on `S²` with equal weights.
    pub fn fibonacci(count: usize) -> Result<Self> {
        if count < 8 {
            return Err(Error::Config(format!("need at least 8 directions, got {count}")));
        }
        let golden = PI * (3.0 - 5f64.sqrt());
        let directions = (0..count)
            .map(|j| {
                let z = 1.0 - (2.0 * j as f64 + 1.0) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * j as f64;
                [r * t.cos(), r * t.sin(), z]
            })
            .collect();
        Ok(SphereGrid { dim: 3, directions, weights: vec![4.0 * PI / count as f64; count], uniform_circle: false })
    }

    pub fn for_dim(dim: usize, count: usize) -> Result<Self> {
        match dim {
            2 => Self::circle(count),
            3 => Self::fibonacci(count),
            _ => Err(Error::Config(format!("dimension {dim} not supported"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn direction(&self, j: usize) -> [f64; 3] {
        self.directions[j]
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// True for the equally spaced circle grid (enables lattice symmetries).
    pub fn is_uniform_circle(&self) -> bool {
        self.uniform_circle
    }

    /// Index of the grid direction closest to `dir`.
    pub fn nearest(&self, dir: [f64; 3]) -> usize {
        let mut best = 0;
        let mut bv = f64::NEG_INFINITY;
        for (j, d) in self.directions.iter().enumerate() {
            let v = dot3(*d, dir);
            if v > bv {
                bv = v;
                best = j;
            }
        }
        best
    }
}

/// One logical scale level of phase space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Level {
    /// Representative scale; its square root is the ball radius used for this level.
    pub sigma: f64,
    /// Weight approximating `dσ/σ`.
    pub weight: f64,
    /// True for the low-frequency band `σ ∈ [1, e]`.
    pub cap: bool,
}

/// Scales `σ < 1` on a geometric grid, plus the band `[1, e]` as one level.
///
/// Packet levels are the log-midpoints `σ_k = exp(−(k+½)Δ)`, each carrying weight
/// `Δ`. The band `[1, e]` has weight `∫₁^e dσ/σ = 1` and representative `√e`.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaGrid {
    levels: Vec<f64>,
    delta: f64,
}

impl SigmaGrid {
    pub fn geometric(sigma_min: f64, delta: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min < 1.0) {
            return Err(Error::Config(format!("smallest scale must lie in (0,1), got {sigma_min}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("log step must lie in (0,1), got {delta}")));
        }
        let j = ((1.0 / sigma_min).ln() / delta).ceil() as usize;
        let mut levels: Vec<f64> = (0..j).map(|k| (-(k as f64 + 0.5) * delta).exp()).collect();
        levels.reverse();
        Ok(SigmaGrid { levels, delta })
    }

    /// Levels fine enough that every lattice frequency is covered: `1/(2σ_min) ≥ max |ζ|`.
    pub fn for_grid(grid: &GridSpec, delta: f64) -> Result<Self> {
        Self::geometric(0.5 / grid.max_frequency(), delta)
    }

    /// Packet scales, ascending, all below 1.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of packet levels (the cap level not counted).
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn sigma_min(&self) -> f64 {
        self.levels[0]
    }

    /// Lower edge of the smallest level's cell.
    pub fn lower_edge(&self) -> f64 {
        self.levels[0] * (-0.5 * self.delta).exp()
    }

    pub fn cap_sigma() -> f64 {
        E.sqrt()
    }

    /// All logical levels: packet levels ascending, then the cap band.
    pub fn all(&self) -> Vec<Level> {
        let mut out: Vec<Level> =
            self.levels.iter().map(|&s| Level { sigma: s, weight: self.delta, cap: false }).collect();
        out.push(Level { sigma: Self::cap_sigma(), weight: 1.0, cap: true });
        out
    }

    /// Total number of logical levels including the cap.
    pub fn level_count(&self) -> usize {
        self.levels.len() + 1
    }

    /// Same range with the log step halved.
    pub fn refined(&self) -> SigmaGrid {
        Self::geometric(self.lower_edge() * 1.000_000_1, self.delta / 2.0).expect("valid refinement")
    }
}

/// Counter-based stream for shard `shard` of a seeded computation.
pub fn shard_rng(seed: u64, shard: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(shard);
    r
}

const SHARD: usize = 4096;

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> [f64; 3] {
    loop {
        let mut v = [0.0; 3];
        for c in v.iter_mut().take(dim) {
            *c = rng.sample(StandardNormal);
        }
        let n = norm3(v);
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Orthonormal frame `(ω, e₂, e₃)` completing `ω`.
fn frame(omega: [f64; 3], dim: usize) -> [[f64; 3]; 3] {
    if dim == 2 {
        return [omega, [-omega[1], omega[0], 0.0], [0.0; 3]];
    }
    let a = if omega[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let p = dot3(a, omega);
    let mut e2 = [a[0] - p * omega[0], a[1] - p * omega[1], a[2] - p * omega[2]];
    let n = norm3(e2);
    e2 = [e2[0] / n, e2[1] / n, e2[2] / n];
    let e3 = [
        omega[1] * e2[2] - omega[2] * e2[1],
        omega[2] * e2[0] - omega[0] * e2[2],
        omega[0] * e2[1] - omega[1] * e2[0],
    ];
    [omega, e2, e3]
}

/// Monte-Carlo estimate of `V(B_τ(0, e₁))` under `dx dω`.
pub fn ball_volume(dim: usize, tau: f64, trials: usize, seed: u64) -> Result<(f64, f64)> {
    let e1 = CospherePoint { x: [0.0; 3], omega: [1.0, 0.0, 0.0] };
    ball_volume_at(dim, &e1, tau, trials, seed)
}

/// Monte-Carlo estimate of `V(B_τ(center))`.
///
/// Samples uniformly from a box-times-cap region that contains the ball:
/// `|⟨ω₀,z⟩| < min(τ², τ)`, `|z_⊥| < τ`, and `|ω₀−ν| < τ`.
pub fn ball_volume_at(dim: usize, center: &CospherePoint, tau: f64, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if trials < 1000 {
        return Err(Error::Config(format!("at least 1000 trials required, got {trials}")));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("radius must be positive, got {tau}")));
    }
    if dim != 2 && dim != 3 {
        return Err(Error::Config(format!("dimension {dim} not supported")));
    }
    let fr = frame(center.omega, dim);
    let along = tau.min(tau * tau);
    let theta_max = 2.0 * (0.5 * tau).min(1.0).asin();
    let cap = if dim == 2 { 2.0 * theta_max } else { 2.0 * PI * (1.0 - theta_max.cos()) };
    let region = 2.0 * along * (2.0 * tau).powi(dim as i32 - 1) * cap;
    let tau2 = tau * tau;
    let mut hits = 0usize;
    let mut done = 0usize;
    let mut shard = 0u64;
    while done < trials {
        let mut rng = shard_rng(seed, shard);
        let n = SHARD.min(trials - done);
        for _ in 0..n {
            let a = rng.random_range(-along..along);
            let mut z = [a * fr[0][0], a * fr[0][1], a * fr[0][2]];
            for e in fr.iter().take(dim).skip(1) {
                let b = rng.random_range(-tau..tau);
                for c in 0..3 {
                    z[c] += b * e[c];
                }
            }
            let nu = if dim == 2 {
                let t = rng.random_range(-theta_max..theta_max);
                let (s, c) = t.sin_cos();
                [c * fr[0][0] + s * fr[1][0], c * fr[0][1] + s * fr[1][1], 0.0]
            } else {
                let ct = rng.random_range(theta_max.cos()..=1.0);
                let st = (1.0 - ct * ct).max(0.0).sqrt();
                let ph = rng.random_range(0.0..2.0 * PI);
                let mut v = [0.0; 3];
                for c in 0..3 {
                    v[c] = ct * fr[0][c] + st * ph.cos() * fr[1][c] + st * ph.sin() * fr[2][c];
                }
                v
            };
            if quasi_dist_sq_z(z, center.omega, nu) < tau2 {
                hits += 1;
            }
        }
        done += n;
        shard += 1;
    }
    let p = hits as f64 / trials as f64;
    Ok((region * p, region * (p * (1.0 - p) / trials as f64).sqrt()))
}

/// One row of a volume study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeRow {
    pub tau: f64,
    pub volume: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

pub fn volume_study(dim: usize, taus: &[f64], trials: usize, seed: u64) -> Result<Vec<VolumeRow>> {
    taus.iter()
        .map(|&tau| {
            let (volume, stderr) = ball_volume(dim, tau, trials, seed)?;
            Ok(VolumeRow { tau, volume, stderr, trials, seed })
        })
        .collect()
}

/// CSV with columns `tau,volume,stderr,trials,seed`.
pub fn write_volume_csv<W: Write>(out: W, rows: &[VolumeRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "volume", "stderr", "trials", "seed"])?;
    for r in rows {
        w.write_record(&[
            format!("{}", r.tau),
            format!("{:.12e}", r.volume),
            format!("{:.12e}", r.stderr),
            r.trials.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `log y` against `log x`, with the coefficient of determination.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

/// Slope and `R²` of an ordinary least-squares line.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

/// Tent membership test `r − d̃(point, center) ≥ √σ`.
pub fn in_tent(point: &CospherePoint, sigma: f64, center: &CospherePoint, r: f64) -> bool {
    r - quasi_dist(point, center) >= sigma.sqrt()
}

/// A map of the cosphere bundle, possibly defined only on part of it.
pub trait ContactMap {
    fn apply(&self, p: &CospherePoint) -> Option<CospherePoint>;
}

impl<F: Fn(&CospherePoint) -> Option<CospherePoint>> ContactMap for F {
    fn apply(&self, p: &CospherePoint) -> Option<CospherePoint> {
        self(p)
    }
}

/// Extremes of `d̃(χp, χq)/d̃(p,q)` over random pairs with log-uniform separations in `[1e-3, 1]`.
pub fn bilipschitz_ratio<C: ContactMap + ?Sized>(map: &C, dim: usize, pairs: usize, seed: u64) -> Result<(f64, f64)> {
    let mut max_r = f64::NEG_INFINITY;
    let mut min_r = f64::INFINITY;
    let mut used = 0usize;
    let mut done = 0usize;
    let mut shard = 0u64;
    while done < pairs {
        let mut rng = shard_rng(seed, shard);
        let n = SHARD.min(pairs - done);
        for _ in 0..n {
            let mut x = [0.0; 3];
            for c in x.iter_mut().take(dim) {
                *c = rng.random_range(-2.0..2.0);
            }
            let omega = random_unit(&mut rng, dim);
            let s = 10f64.powf(rng.random_range(-3.0..0.0));
            let u = random_unit(&mut rng, dim);
            let v = random_unit(&mut rng, dim);
            let y = [x[0] + s * u[0], x[1] + s * u[1], x[2] + s * u[2]];
            let nu = [omega[0] + s * v[0], omega[1] + s * v[1], omega[2] + s * v[2]];
            let (Ok(p), Ok(q)) = (CospherePoint::new(x, omega), CospherePoint::from_direction(y, nu)) else {
                continue;
            };
            let (Some(cp), Some(cq)) = (map.apply(&p), map.apply(&q)) else {
                continue;
            };
            let d0 = quasi_dist(&p, &q);
            if d0 <= 0.0 {
                continue;
            }
            let r = quasi_dist(&cp, &cq) / d0;
            max_r = max_r.max(r);
            min_r = min_r.min(r);
            used += 1;
        }
        done += n;
        shard += 1;
    }
    if used == 0 {
        return Err(Error::EmptySample("every pair was outside the map's domain".into()));
    }
    Ok((max_r, min_r))
}

//! Tent spaces over the cosphere bundle: phase-space fields, the conical
//! square function, the Carleson functional, tent-space norms and atoms.
//!
//! Ball averages use discrete volumes computed with the same weights and the
//! same membership test as the sums, normalized at the summed point:
//!
//! `AF(x,ω)² = Σ_σ Δ_σ Σ_{(y,ν) ∈ B_√σ(x,ω)} |F(y,ν,σ)|² hⁿ w_ν / V̂_ν(√σ)`.
//!
//! Membership is symmetric, so summing `AF²` over `(x,ω)` returns the weighted
//! `ℓ²` norm of `F` exactly.

use std::collections::HashMap;
use std::io::{Read, Write};

use num_complex::{Complex, Complex64};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{cast_c, lp_norm_real, to_c64, Fft, GridSpec};
use crate::metric::{quasi_dist_sq_z, shard_rng, CospherePoint, Level, SigmaGrid, SphereGrid};
use crate::Real;

/// Complex function on `(x, ω, σ)` with measure `hⁿ · w_ω · Δ_σ` per cell.
///
/// Slices are stored per (level, direction) and may be absent (identically zero).
#[derive(Clone, Debug)]
pub struct PhaseSpaceField<T: Real> {
    grid: GridSpec,
    sphere: SphereGrid,
    sigmas: SigmaGrid,
    slices: Vec<Option<Vec<Complex<T>>>>,
}

impl<T: Real> PhaseSpaceField<T> {
    pub fn zeros(grid: GridSpec, sphere: SphereGrid, sigmas: SigmaGrid) -> Self {
        let n = sigmas.level_count() * sphere.len();
        PhaseSpaceField { grid, sphere, sigmas, slices: vec![None; n] }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn sphere(&self) -> &SphereGrid {
        &self.sphere
    }

    pub fn sigmas(&self) -> &SigmaGrid {
        &self.sigmas
    }

    pub fn levels(&self) -> Vec<Level> {
        self.sigmas.all()
    }

    pub fn level_count(&self) -> usize {
        self.sigmas.level_count()
    }

    /// Index of the `[1, e]` band.
    pub fn cap_level(&self) -> usize {
        self.sigmas.len()
    }

    fn key(&self, level: usize, dir: usize) -> usize {
        level * self.sphere.len() + dir
    }

    pub fn slice(&self, level: usize, dir: usize) -> Option<&[Complex<T>]> {
        self.slices[self.key(level, dir)].as_deref()
    }

    /// Mutable slice, allocated as zeros if absent.
    pub fn slice_mut(&mut self, level: usize, dir: usize) -> &mut [Complex<T>] {
        let k = self.key(level, dir);
        let n = self.grid.len();
        self.slices[k].get_or_insert_with(|| vec![Complex::new(T::zero(), T::zero()); n])
    }

    pub fn set_slice(&mut self, level: usize, dir: usize, values: Option<Vec<Complex<T>>>) -> Result<()> {
        if let Some(v) = &values {
            if v.len() != self.grid.len() {
                return Err(Error::Shape(format!("slice of {} values for {} grid points", v.len(), self.grid.len())));
            }
        }
        let k = self.key(level, dir);
        self.slices[k] = values;
        Ok(())
    }

    /// All direction slices of one level.
    pub fn level_slices(&self, level: usize) -> &[Option<Vec<Complex<T>>>] {
        let a = self.sphere.len();
        &self.slices[level * a..(level + 1) * a]
    }

    pub fn get(&self, level: usize, dir: usize, idx: usize) -> Complex<T> {
        self.slice(level, dir).map(|s| s[idx]).unwrap_or(Complex::new(T::zero(), T::zero()))
    }

    pub fn set(&mut self, level: usize, dir: usize, idx: usize, v: Complex<T>) {
        self.slice_mut(level, dir)[idx] = v;
    }

    /// Measure `hⁿ w_ω Δ_σ` of one cell.
    pub fn cell_measure(&self, level: usize, dir: usize) -> f64 {
        self.grid.cell_volume() * self.sphere.weight(dir) * self.sigmas.all()[level].weight
    }

    /// Weighted `ℓ²` norm over `(x, ω, σ)`.
    pub fn l2_norm(&self) -> f64 {
        let levels = self.sigmas.all();
        let mut s = 0.0;
        for (l, lv) in levels.iter().enumerate() {
            for d in 0..self.sphere.len() {
                if let Some(v) = self.slice(l, d) {
                    let e: f64 = v.iter().map(|c| to_c64(*c).norm_sqr()).sum();
                    s += e * lv.weight * self.sphere.weight(d);
                }
            }
        }
        (s * self.grid.cell_volume()).sqrt()
    }

    /// Weighted inner product `Σ F conj(G) · measure`.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        self.check_same(other)?;
        let levels = self.sigmas.all();
        let mut s = Complex64::new(0.0, 0.0);
        for (l, lv) in levels.iter().enumerate() {
            for d in 0..self.sphere.len() {
                if let (Some(a), Some(b)) = (self.slice(l, d), other.slice(l, d)) {
                    let mut e = Complex64::new(0.0, 0.0);
                    for (x, y) in a.iter().zip(b) {
                        e += to_c64(*x) * to_c64(*y).conj();
                    }
                    s += e * (lv.weight * self.sphere.weight(d));
                }
            }
        }
        Ok(s * self.grid.cell_volume())
    }

    pub fn check_same(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.sphere != other.sphere || self.sigmas != other.sigmas {
            return Err(Error::Shape("phase-space fields live on different grids".into()));
        }
        Ok(())
    }

    pub fn scale(&self, a: Complex64) -> Self {
        let a = cast_c::<T>(a);
        let mut out = self.clone();
        for s in out.slices.iter_mut().flatten() {
            for v in s.iter_mut() {
                *v = *v * a;
            }
        }
        out
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: Complex64, other: &Self, b: Complex64) -> Result<Self> {
        self.check_same(other)?;
        let (ca, cb) = (cast_c::<T>(a), cast_c::<T>(b));
        let mut out = PhaseSpaceField::zeros(self.grid, self.sphere.clone(), self.sigmas.clone());
        for k in 0..self.slices.len() {
            out.slices[k] = match (&self.slices[k], &other.slices[k]) {
                (None, None) => None,
                (Some(x), None) => Some(x.iter().map(|v| *v * ca).collect()),
                (None, Some(y)) => Some(y.iter().map(|v| *v * cb).collect()),
                (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(u, v)| *u * ca + *v * cb).collect()),
            };
        }
        Ok(out)
    }

    /// Keeps only the packet levels `σ < 1`.
    pub fn without_cap(&self) -> Self {
        let mut out = self.clone();
        let c = self.cap_level();
        for d in 0..self.sphere.len() {
            let k = out.key(c, d);
            out.slices[k] = None;
        }
        out
    }

    /// Pointwise `|F|` comparison helper: true if `|self| ≤ |other|` everywhere.
    pub fn dominated_by(&self, other: &Self) -> bool {
        for k in 0..self.slices.len() {
            let n = self.grid.len();
            for i in 0..n {
                let a = self.slices[k].as_ref().map(|s| to_c64(s[i]).norm()).unwrap_or(0.0);
                let b = other.slices[k].as_ref().map(|s| to_c64(s[i]).norm()).unwrap_or(0.0);
                if a > b {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_f64(&self) -> PhaseSpaceField<f64> {
        PhaseSpaceField {
            grid: self.grid,
            sphere: self.sphere.clone(),
            sigmas: self.sigmas.clone(),
            slices: self.slices.iter().map(|s| s.as_ref().map(|v| v.iter().map(|c| to_c64(*c)).collect())).collect(),
        }
    }

    /// Seeded random field: complex Gaussian values on a random subset of slices.
    pub fn random(grid: GridSpec, sphere: SphereGrid, sigmas: SigmaGrid, density: f64, seed: u64) -> Self {
        let mut f = PhaseSpaceField::zeros(grid, sphere, sigmas);
        let mut rng = shard_rng(seed, 0);
        for k in 0..f.slices.len() {
            if rng.random::<f64>() < density {
                let v = (0..grid.len())
                    .map(|_| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        cast_c(Complex64::new(re, im))
                    })
                    .collect();
                f.slices[k] = Some(v);
            }
        }
        f
    }

    /// Writes the `FIOP` dump: magic, u32 version, u32 dim, u32 sizes, u32 `A`, u32 `J`,
    /// then interleaved little-endian f64 `(re, im)` with the level index fastest.
    pub fn write_fiop<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"FIOP")?;
        out.write_all(&1u32.to_le_bytes())?;
        out.write_all(&(self.grid.dim() as u32).to_le_bytes())?;
        for _ in 0..self.grid.dim() {
            out.write_all(&(self.grid.points_per_axis() as u32).to_le_bytes())?;
        }
        out.write_all(&(self.sphere.len() as u32).to_le_bytes())?;
        out.write_all(&(self.level_count() as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(16 * self.level_count() * self.sphere.len());
        for i in 0..self.grid.len() {
            buf.clear();
            for d in 0..self.sphere.len() {
                for l in 0..self.level_count() {
                    let v = to_c64(self.get(l, d, i));
                    buf.extend_from_slice(&v.re.to_le_bytes());
                    buf.extend_from_slice(&v.im.to_le_bytes());
                }
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads a `FIOP` dump onto the given grids.
    pub fn read_fiop<R: Read>(mut input: R, grid: GridSpec, sphere: SphereGrid, sigmas: SigmaGrid) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"FIOP" {
            return Err(Error::Format("missing FIOP magic".into()));
        }
        let mut u = [0u8; 4];
        let mut next = |input: &mut R| -> Result<u32> {
            input.read_exact(&mut u)?;
            Ok(u32::from_le_bytes(u))
        };
        let version = next(&mut input)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dim = next(&mut input)? as usize;
        if dim != grid.dim() {
            return Err(Error::Shape(format!("dump has dimension {dim}")));
        }
        for _ in 0..dim {
            if next(&mut input)? as usize != grid.points_per_axis() {
                return Err(Error::Shape("dump grid size differs".into()));
            }
        }
        if next(&mut input)? as usize != sphere.len() || next(&mut input)? as usize != sigmas.level_count() {
            return Err(Error::Shape("dump direction/level counts differ".into()));
        }
        let mut f = PhaseSpaceField::zeros(grid, sphere, sigmas);
        let (a, j) = (f.sphere.len(), f.level_count());
        let mut buf = vec![0u8; 16 * a * j];
        for i in 0..grid.len() {
            input.read_exact(&mut buf)?;
            for d in 0..a {
                for l in 0..j {
                    let o = 16 * (d * j + l);
                    let re = f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
                    let im = f64::from_le_bytes(buf[o + 8..o + 16].try_into().unwrap());
                    if re != 0.0 || im != 0.0 {
                        f.set(l, d, i, cast_c(Complex64::new(re, im)));
                    }
                }
            }
        }
        Ok(f)
    }
}

/// Nonnegative function on `(x, ω)` with measure `hⁿ w_ω`.
#[derive(Clone, Debug, PartialEq)]
pub struct CosphereFunction {
    grid: GridSpec,
    weights: Vec<f64>,
    /// Direction-major: `values[d * N + x]`.
    values: Vec<f64>,
}

impl CosphereFunction {
    pub fn new(grid: GridSpec, sphere: &SphereGrid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len() * sphere.len());
        CosphereFunction { grid, weights: sphere.weights().to_vec(), values }
    }

    pub fn value(&self, dir: usize, idx: usize) -> f64 {
        self.values[dir * self.grid.len() + idx]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// `L^p(S*Rⁿ)` norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.max();
        }
        let n = self.grid.len();
        let h = self.grid.cell_volume();
        let mut total = 0.0;
        for (d, w) in self.weights.iter().enumerate() {
            let vals = self.values[d * n..(d + 1) * n].iter().cloned();
            let part = lp_norm_real(vals, p, 1.0);
            total += if p == 1.0 { part * w } else { part.powf(p) * w };
        }
        if p == 1.0 {
            total * h
        } else {
            (total * h).powf(1.0 / p)
        }
    }
}

/// Ball masks on the lattice, `K^ρ_{ων}(z) = 1[d̃((z,ω),(0,ν)) < ρ]`, and the
/// convolution machinery for conical sums.
#[derive(Clone, Debug)]
pub struct BallEngine {
    grid: GridSpec,
    sphere: SphereGrid,
    sym: Option<Symmetry>,
}

/// Lattice symmetries of the square grid that permute the circle directions.
#[derive(Clone, Debug)]
struct Symmetry {
    /// For each direction: (group element, canonical direction).
    canon: Vec<(usize, usize)>,
    /// Direction permutation per element.
    dir_perm: Vec<Vec<usize>>,
    /// Frequency-index permutation per element: `perm[g][ζ] = index of gζ`.
    freq_perm: Vec<Vec<u32>>,
}

impl Symmetry {
    fn build(grid: &GridSpec, sphere: &SphereGrid) -> Option<Symmetry> {
        let a = sphere.len();
        if grid.dim() != 2 || !sphere.is_uniform_circle() || a % 4 != 0 {
            return None;
        }
        // element (r, f): v ↦ F^f R^r v with R(x,y) = (−y,x), F(x,y) = (x,−y)
        let apply = |r: usize, f: bool, v: [i64; 2]| -> [i64; 2] {
            let mut w = v;
            for _ in 0..r {
                w = [-w[1], w[0]];
            }
            if f {
                w = [w[0], -w[1]];
            }
            w
        };
        let mut dir_perm = Vec::new();
        let mut freq_perm = Vec::new();
        for f in [false, true] {
            for r in 0..4 {
                let dp: Vec<usize> = (0..a)
                    .map(|j| {
                        let k = (j + r * a / 4) % a;
                        if f {
                            (a - k) % a
                        } else {
                            k
                        }
                    })
                    .collect();
                dir_perm.push(dp);
                let m = grid.points_per_axis();
                let fp: Vec<u32> = (0..grid.len())
                    .map(|idx| {
                        let i = grid.unravel(idx);
                        let v = apply(r, f, [grid.signed(i[0]), grid.signed(i[1])]);
                        let _ = m;
                        grid.frequency_index([v[0], v[1], 0]) as u32
                    })
                    .collect();
                freq_perm.push(fp);
            }
        }
        let canon = (0..a)
            .map(|i| {
                let mut best = (0usize, usize::MAX);
                for (g, dp) in dir_perm.iter().enumerate() {
                    if dp[i] < best.1 {
                        best = (g, dp[i]);
                    }
                }
                best
            })
            .collect();
        Some(Symmetry { canon, dir_perm, freq_perm })
    }
}

/// Cells of one mask: signed lattice offsets.
type Mask = Vec<[i32; 3]>;

const DIRECT_LIMIT: usize = 4;

impl BallEngine {
    pub fn new(grid: GridSpec, sphere: SphereGrid) -> Self {
        let sym = Symmetry::build(&grid, &sphere);
        BallEngine { grid, sphere, sym }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn sphere(&self) -> &SphereGrid {
        &self.sphere
    }

    fn box_range(&self, rho: f64) -> (i64, i64) {
        let m = self.grid.points_per_axis() as i64;
        let r = (rho / self.grid.spacing()).ceil() as i64;
        if 2 * r + 1 >= m {
            (-m / 2, m / 2 - 1)
        } else {
            (-r, r)
        }
    }

    /// Lattice offsets `z` with `d̃((z,ω),(0,ν)) < ρ`.
    pub fn mask(&self, omega: [f64; 3], nu: [f64; 3], rho: f64) -> Mask {
        let r2 = rho * rho;
        let dw = [omega[0] - nu[0], omega[1] - nu[1], omega[2] - nu[2]];
        let ang = dw[0] * dw[0] + dw[1] * dw[1] + dw[2] * dw[2];
        let mut out = Vec::new();
        if ang >= r2 {
            return out;
        }
        let (lo, hi) = self.box_range(rho);
        let (lo2, hi2) = if self.grid.dim() == 3 { (lo, hi) } else { (0, 0) };
        for a in lo..=hi {
            for b in lo..=hi {
                for c in lo2..=hi2 {
                    if lattice_dist_sq(&self.grid, [a, b, c], omega, nu) < r2 {
                        out.push([a as i32, b as i32, c as i32]);
                    }
                }
            }
        }
        out
    }

    /// Discrete ball volumes `V̂_ν(ρ) = Σ_ω w_ω hⁿ |K^ρ_{ων}|` for every direction.
    pub fn volumes(&self, rho: f64) -> Vec<f64> {
        let a = self.sphere.len();
        let h = self.grid.cell_volume();
        let mut vol = vec![0.0; a];
        let counts = self.pair_counts(rho);
        for nu in 0..a {
            for (om, c) in counts[nu].iter() {
                vol[nu] += self.sphere.weight(*om) * h * *c as f64;
            }
        }
        vol
    }

    /// Mask sizes for every pair with nonempty mask: `counts[ν] = [(ω, |K_{ων}|)]`.
    fn pair_counts(&self, rho: f64) -> Vec<Vec<(usize, usize)>> {
        let a = self.sphere.len();
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut out = vec![Vec::new(); a];
        for (nu, row) in out.iter_mut().enumerate() {
            for om in 0..a {
                if dist2(self.sphere.direction(om), self.sphere.direction(nu)) >= rho * rho {
                    continue;
                }
                let key = match &self.sym {
                    Some(s) => {
                        let (g, c) = s.canon[om];
                        (c, s.dir_perm[g][nu])
                    }
                    None => (om, nu),
                };
                let c = *cache.entry(key).or_insert_with(|| {
                    self.mask(self.sphere.direction(key.0), self.sphere.direction(key.1), rho).len()
                });
                if c > 0 {
                    row.push((om, c));
                }
            }
        }
        out
    }

    /// `G_ω(x) = Σ_ν w_ν hⁿ Σ_z K^ρ_{ων}(z) U_ν(x − z)` for every direction `ω`.
    ///
    /// `u[ν]` may be absent (zero). Small masks are summed directly; larger ones
    /// go through the FFT with mask spectra shared across symmetric pairs.
    pub fn conical_sums(&self, rho: f64, u: &[Option<Vec<f64>>]) -> Vec<Vec<f64>> {
        let a = self.sphere.len();
        let n = self.grid.len();
        let h = self.grid.cell_volume();
        let fft = Fft::<f64>::new(self.grid);
        let sqrt_n = (n as f64).sqrt();
        let active: Vec<usize> = (0..a).filter(|&j| u[j].is_some()).collect();
        let mut out = vec![vec![0.0; n]; a];
        if active.is_empty() {
            return out;
        }
        // masks per canonical pair
        let mut masks: HashMap<(usize, usize), Mask> = HashMap::new();
        let canon_of = |om: usize, nu: usize| -> (usize, (usize, usize)) {
            match &self.sym {
                Some(s) => {
                    let (g, c) = s.canon[om];
                    (g, (c, s.dir_perm[g][nu]))
                }
                None => (0, (om, nu)),
            }
        };
        let mut big: Vec<(usize, usize)> = Vec::new();
        for om in 0..a {
            for &nu in &active {
                if dist2(self.sphere.direction(om), self.sphere.direction(nu)) >= rho * rho {
                    continue;
                }
                let (_, key) = canon_of(om, nu);
                if !masks.contains_key(&key) {
                    let mk = self.mask(self.sphere.direction(key.0), self.sphere.direction(key.1), rho);
                    if mk.len() > DIRECT_LIMIT {
                        big.push(key);
                    }
                    masks.insert(key, mk);
                }
            }
        }
        // spectra of large masks, two real even masks per complex transform
        let mut spectra: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        for pair in big.chunks(2) {
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for (slot, key) in pair.iter().enumerate() {
                for z in &masks[key] {
                    let idx = self.grid.frequency_index([z[0] as i64, z[1] as i64, z[2] as i64]);
                    if slot == 0 {
                        buf[idx].re += 1.0;
                    } else {
                        buf[idx].im += 1.0;
                    }
                }
            }
            fft.forward(&mut buf);
            spectra.insert(pair[0], buf.iter().map(|c| c.re * sqrt_n).collect());
            if pair.len() == 2 {
                spectra.insert(pair[1], buf.iter().map(|c| c.im * sqrt_n).collect());
            }
        }
        // sparse spectra of the inputs that meet a large mask, two real inputs per transform
        let mut uhat: Vec<Option<(Vec<u32>, Vec<Complex64>)>> = vec![None; a];
        if !big.is_empty() {
            let neg: Vec<usize> = (0..n)
                .map(|i| {
                    let k = self.grid.unravel(i);
                    self.grid.frequency_index([-self.grid.signed(k[0]), -self.grid.signed(k[1]), -self.grid.signed(k[2])])
                })
                .collect();
            let sparse = |v: Vec<Complex64>| {
                let top = v.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
                let tol = 1e-28 * top;
                let mut idx = Vec::new();
                let mut val = Vec::new();
                for (i, c) in v.into_iter().enumerate() {
                    if c.norm_sqr() > tol {
                        idx.push(i as u32);
                        val.push(c);
                    }
                }
                (idx, val)
            };
            for pair in active.chunks(2) {
                let mut buf: Vec<Complex64> = u[pair[0]].as_ref().unwrap().iter().map(|&v| Complex64::new(v, 0.0)).collect();
                if pair.len() == 2 {
                    for (b, &v) in buf.iter_mut().zip(u[pair[1]].as_ref().unwrap()) {
                        b.im = v;
                    }
                }
                fft.forward(&mut buf);
                if pair.len() == 1 {
                    uhat[pair[0]] = Some(sparse(buf));
                    continue;
                }
                let half = Complex64::new(0.5, 0.0);
                let mut x = vec![Complex64::new(0.0, 0.0); n];
                let mut y = vec![Complex64::new(0.0, 0.0); n];
                for i in 0..n {
                    let zc = buf[neg[i]].conj();
                    x[i] = (buf[i] + zc) * half;
                    y[i] = (buf[i] - zc) * Complex64::new(0.0, -0.5);
                }
                uhat[pair[0]] = Some(sparse(x));
                uhat[pair[1]] = Some(sparse(y));
            }
        }
        let m = self.grid.points_per_axis();
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        let dirs: Vec<usize> = (0..a).collect();
        for pair in dirs.chunks(2) {
            let mut any_spec = false;
            for c in acc.iter_mut() {
                *c = Complex64::new(0.0, 0.0);
            }
            for (slot, &om) in pair.iter().enumerate() {
                let rot = if slot == 0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 1.0) };
                for &nu in &active {
                    if dist2(self.sphere.direction(om), self.sphere.direction(nu)) >= rho * rho {
                        continue;
                    }
                    let (g, key) = canon_of(om, nu);
                    let wt = self.sphere.weight(nu) * h;
                    if let Some(spec) = spectra.get(&key) {
                        any_spec = true;
                        let (idx, val) = uhat[nu].as_ref().unwrap();
                        let w = rot * wt;
                        match &self.sym {
                            Some(s) => {
                                let perm = &s.freq_perm[g];
                                for (&i, v) in idx.iter().zip(val) {
                                    acc[i as usize] += v * w * spec[perm[i as usize] as usize];
                                }
                            }
                            None => {
                                for (&i, v) in idx.iter().zip(val) {
                                    acc[i as usize] += v * w * spec[i as usize];
                                }
                            }
                        }
                    } else {
                        let mk = &masks[&key];
                        if mk.is_empty() {
                            continue;
                        }
                        let un = u[nu].as_ref().unwrap();
                        let cells: Vec<[i32; 3]> = match &self.sym {
                            // offsets of the actual pair rather than the canonical one
                            Some(_) => self.mask(self.sphere.direction(om), self.sphere.direction(nu), rho),
                            None => mk.clone(),
                        };
                        for z in &cells {
                            add_shifted(&mut out[om], un, *z, m, self.grid.dim(), wt);
                        }
                    }
                }
            }
            if any_spec {
                fft.inverse(&mut acc);
                for (slot, &om) in pair.iter().enumerate() {
                    for (o, c) in out[om].iter_mut().zip(&acc) {
                        *o += if slot == 0 { c.re } else { c.im };
                    }
                }
            }
        }
        out
    }
}

/// `d̃²` for a signed lattice offset; on the torus seam (`±M/2`) both images are
/// tried so that membership is invariant under the lattice symmetries.
pub fn lattice_dist_sq(grid: &GridSpec, off: [i64; 3], omega: [f64; 3], nu: [f64; 3]) -> f64 {
    let h = grid.spacing();
    let half = grid.points_per_axis() as i64 / 2;
    if off.iter().all(|&a| a != -half) {
        let z = [off[0] as f64 * h, off[1] as f64 * h, off[2] as f64 * h];
        return quasi_dist_sq_z(z, omega, nu);
    }
    let alts = |a: i64| if a == -half { [a, half] } else { [a, a] };
    let mut best = f64::INFINITY;
    for a in alts(off[0]) {
        for b in alts(off[1]) {
            for c in alts(off[2]) {
                let z = [a as f64 * h, b as f64 * h, c as f64 * h];
                best = best.min(quasi_dist_sq_z(z, omega, nu));
            }
        }
    }
    best
}

#[inline]
fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// `out(x) += w · u(x − z)` on the periodic lattice.
fn add_shifted(out: &mut [f64], u: &[f64], z: [i32; 3], m: usize, dim: usize, w: f64) {
    let mi = m as i64;
    if dim == 2 {
        let s0 = (z[0] as i64).rem_euclid(mi) as usize;
        let s1 = (z[1] as i64).rem_euclid(mi) as usize;
        for i in 0..m {
            let src_row = ((i + m - s0) % m) * m;
            let dst_row = i * m;
            // columns: x1 − s1
            let split = s1;
            for j in 0..split {
                out[dst_row + j] += w * u[src_row + j + m - split];
            }
            for j in split..m {
                out[dst_row + j] += w * u[src_row + j - split];
            }
        }
    } else {
        let s: Vec<usize> = (0..3).map(|a| (z[a] as i64).rem_euclid(mi) as usize).collect();
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let src = (((i + m - s[0]) % m) * m + (j + m - s[1]) % m) * m + (k + m - s[2]) % m;
                    out[(i * m + j) * m + k] += w * u[src];
                }
            }
        }
    }
}

/// Streaming accumulator of `AF²` and its packet-level part.
#[derive(Debug)]
pub struct LusinAccumulator<'a> {
    engine: &'a BallEngine,
    full: Vec<f64>,
    packets: Vec<f64>,
}

impl<'a> LusinAccumulator<'a> {
    pub fn new(engine: &'a BallEngine) -> Self {
        let n = engine.grid.len() * engine.sphere.len();
        LusinAccumulator { engine, full: vec![0.0; n], packets: vec![0.0; n] }
    }

    /// Adds the contribution of one level given its direction slices.
    pub fn add_level<T: Real>(&mut self, level: Level, slices: &[Option<Vec<Complex<T>>>]) -> Result<()> {
        let a = self.engine.sphere.len();
        if slices.len() != a {
            return Err(Error::Shape("one slice per direction expected".into()));
        }
        let rho = level.sigma.sqrt();
        let vols = self.engine.volumes(rho);
        if let Some(j) = vols.iter().position(|v| *v <= 0.0) {
            return Err(Error::Resolution(format!("empty discrete ball at σ={} (direction {j})", level.sigma)));
        }
        let u: Vec<Option<Vec<f64>>> = slices
            .iter()
            .enumerate()
            .map(|(nu, s)| s.as_ref().map(|v| v.iter().map(|c| to_c64(*c).norm_sqr() / vols[nu]).collect()))
            .collect();
        let g = self.engine.conical_sums(rho, &u);
        let n = self.engine.grid.len();
        for (om, gv) in g.iter().enumerate() {
            let base = om * n;
            for (i, v) in gv.iter().enumerate() {
                let c = level.weight * v;
                self.full[base + i] += c;
                if !level.cap {
                    self.packets[base + i] += c;
                }
            }
        }
        Ok(())
    }

    /// `A F` over all levels.
    pub fn lusin(&self) -> CosphereFunction {
        CosphereFunction::new(self.engine.grid, &self.engine.sphere, self.full.iter().map(|v| v.max(0.0).sqrt()).collect())
    }

    /// `A F` over the packet levels only.
    pub fn lusin_packets(&self) -> CosphereFunction {
        CosphereFunction::new(
            self.engine.grid,
            &self.engine.sphere,
            self.packets.iter().map(|v| v.max(0.0).sqrt()).collect(),
        )
    }
}

/// Conical square function `A F(x, ω)`.
pub fn lusin_functional<T: Real>(f: &PhaseSpaceField<T>) -> Result<CosphereFunction> {
    let engine = BallEngine::new(f.grid, f.sphere.clone());
    lusin_with(&engine, f)
}

pub fn lusin_with<T: Real>(engine: &BallEngine, f: &PhaseSpaceField<T>) -> Result<CosphereFunction> {
    let mut acc = LusinAccumulator::new(engine);
    for (l, lv) in f.levels().iter().enumerate() {
        acc.add_level(*lv, f.level_slices(l))?;
    }
    Ok(acc.lusin())
}

/// One ball of a sampled family: center sample, center direction, radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledBall {
    pub center: usize,
    pub dir: usize,
    pub radius: f64,
}

/// Finite family of balls for Carleson suprema.
#[derive(Clone, Debug, PartialEq)]
pub struct BallFamily {
    balls: Vec<SampledBall>,
}

/// A ball in the cosphere bundle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallSpec {
    pub center: CospherePoint,
    pub radius: f64,
}

impl BallFamily {
    pub fn new(balls: Vec<SampledBall>) -> Result<Self> {
        if balls.is_empty() {
            return Err(Error::Config("empty ball family".into()));
        }
        if balls.iter().any(|b| !(b.radius > 0.0)) {
            return Err(Error::Config("ball radii must be positive".into()));
        }
        Ok(BallFamily { balls })
    }

    /// Every listed center with every listed radius.
    pub fn product(centers: &[(usize, usize)], radii: &[f64]) -> Result<Self> {
        let mut balls = Vec::new();
        for &r in radii {
            for &(c, d) in centers {
                balls.push(SampledBall { center: c, dir: d, radius: r });
            }
        }
        Self::new(balls)
    }

    /// Geometric radii from `1.5·√σ_min` up to a ball covering the torus, with ratio `√2`;
    /// centers on a lattice whose spacing follows the ball's smallest extent.
    pub fn standard(grid: &GridSpec, sphere: &SphereGrid, sigmas: &SigmaGrid) -> Self {
        let zmax = grid.extent() * (grid.dim() as f64).sqrt() / 2.0;
        let rmax = (zmax * zmax + 2.0 * zmax + 4.0).sqrt();
        let mut r = 1.5 * sigmas.sigma_min().sqrt();
        let mut balls = Vec::new();
        let m = grid.points_per_axis();
        let a = sphere.len();
        loop {
            let spatial = ((r.min(r * r) / (2.0 * grid.spacing())).round() as usize).clamp(1, m);
            let angular = ((r.min(2.0) / 2.0 / (2.0 * std::f64::consts::PI / a as f64)).round() as usize).clamp(1, a);
            for idx in 0..grid.len() {
                let i = grid.unravel(idx);
                if (0..grid.dim()).any(|ax| i[ax] % spatial != 0) {
                    continue;
                }
                for d in (0..a).step_by(angular) {
                    balls.push(SampledBall { center: idx, dir: d, radius: r });
                }
            }
            if r >= rmax {
                break;
            }
            r *= std::f64::consts::SQRT_2;
        }
        BallFamily { balls }
    }

    pub fn balls(&self) -> &[SampledBall] {
        &self.balls
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }
}

/// Cell of a ball relative to its center: offset, direction, distance.
struct BallCell {
    off: [i32; 3],
    dir: u32,
    dist: f64,
}

/// Per-direction, per-radius ball geometry cache.
struct BallShapes<'a> {
    grid: &'a GridSpec,
    sphere: &'a SphereGrid,
    cache: HashMap<(usize, u64), (Vec<BallCell>, f64)>,
}

impl<'a> BallShapes<'a> {
    fn new(grid: &'a GridSpec, sphere: &'a SphereGrid) -> Self {
        BallShapes { grid, sphere, cache: HashMap::new() }
    }

    /// Cells with `d̃ < r` and the discrete volume `V̂(B)`.
    fn get(&mut self, dir: usize, r: f64) -> &(Vec<BallCell>, f64) {
        let (grid, sphere) = (self.grid, self.sphere);
        self.cache.entry((dir, r.to_bits())).or_insert_with(|| {
            let om = sphere.direction(dir);
            let m = grid.points_per_axis() as i64;
            let rr = (r / grid.spacing()).ceil() as i64;
            let (lo, hi) = if 2 * rr + 1 >= m { (-m / 2, m / 2 - 1) } else { (-rr, rr) };
            let (lo2, hi2) = if grid.dim() == 3 { (lo, hi) } else { (0, 0) };
            let mut cells = Vec::new();
            let mut vol = 0.0;
            for nu in 0..sphere.len() {
                let nv = sphere.direction(nu);
                if dist2(om, nv) >= r * r {
                    continue;
                }
                for a in lo..=hi {
                    for b in lo..=hi {
                        for c in lo2..=hi2 {
                            let d2 = lattice_dist_sq(grid, [a, b, c], om, nv);
                            if d2 < r * r {
                                cells.push(BallCell { off: [a as i32, b as i32, c as i32], dir: nu as u32, dist: d2.sqrt() });
                                vol += sphere.weight(nu);
                            }
                        }
                    }
                }
            }
            (cells, vol * grid.cell_volume())
        })
    }
}

#[inline]
fn offset_index(grid: &GridSpec, center: usize, off: [i32; 3]) -> usize {
    let i = grid.unravel(center);
    let m = grid.points_per_axis() as i64;
    let mut j = [0usize; 3];
    for a in 0..grid.dim() {
        j[a] = (i[a] as i64 + off[a] as i64).rem_euclid(m) as usize;
    }
    grid.ravel(j)
}

/// Prefix sums over levels (ascending `σ`) of the cell energies `|F|² · measure`,
/// built one level at a time.
#[derive(Clone, Debug)]
pub struct LevelEnergies {
    grid: GridSpec,
    sphere: SphereGrid,
    run: Vec<f64>,
    /// `prefix[k][d*N + x]` = energy of levels `0..=k`.
    prefix: Vec<Vec<f64>>,
    sqrt_sigma: Vec<f64>,
    cap: Option<usize>,
}

impl LevelEnergies {
    pub fn new(grid: GridSpec, sphere: SphereGrid) -> Self {
        let n = grid.len() * sphere.len();
        LevelEnergies { grid, sphere, run: vec![0.0; n], prefix: Vec::new(), sqrt_sigma: Vec::new(), cap: None }
    }

    pub fn from_field<T: Real>(f: &PhaseSpaceField<T>) -> Self {
        let mut e = LevelEnergies::new(f.grid, f.sphere.clone());
        for (l, lv) in f.levels().iter().enumerate() {
            e.add_level(*lv, f.level_slices(l));
        }
        e
    }

    /// Adds the next level; levels must arrive in ascending `σ`.
    pub fn add_level<T: Real>(&mut self, level: Level, slices: &[Option<Vec<Complex<T>>>]) {
        let n = self.grid.len();
        for (d, s) in slices.iter().enumerate() {
            if let Some(s) = s {
                let w = level.weight * self.sphere.weight(d) * self.grid.cell_volume();
                for (x, v) in s.iter().enumerate() {
                    self.run[d * n + x] += to_c64(*v).norm_sqr() * w;
                }
            }
        }
        if level.cap {
            self.cap = Some(self.prefix.len());
        }
        self.prefix.push(self.run.clone());
        self.sqrt_sigma.push(level.sigma.sqrt());
    }

    /// Normalized tent energies `(energy of T(B) / V̂(B))^{1/2}` for each ball of the family.
    pub fn tent_energies(&self, family: &BallFamily, with_cap: bool) -> Vec<f64> {
        let n = self.grid.len();
        let m = self.grid.points_per_axis() as i32;
        let dim = self.grid.dim();
        let top = match (with_cap, self.cap) {
            (false, Some(c)) => c,
            _ => self.prefix.len(),
        };
        let mut out = Vec::with_capacity(family.len());
        let mut shapes = BallShapes::new(&self.grid, &self.sphere);
        // per direction: cells (level count, dir, offset) sorted for locality, and V̂(B)
        let mut compiled: HashMap<usize, (Vec<(u32, u32, [i32; 3])>, f64)> = HashMap::new();
        let mut radius = f64::NAN;
        for b in &family.balls {
            if b.radius != radius {
                shapes.cache.clear();
                compiled.clear();
                radius = b.radius;
            }
            let (cells, vol) = compiled.entry(b.dir).or_insert_with(|| {
                let (raw, vol) = shapes.get(b.dir, b.radius);
                let mut c: Vec<(u32, u32, [i32; 3])> = raw
                    .iter()
                    .filter_map(|c| {
                        let s = b.radius - c.dist;
                        let k = self.sqrt_sigma.partition_point(|&q| q <= s).min(top);
                        (k > 0).then_some((k as u32, c.dir, c.off))
                    })
                    .collect();
                c.sort_unstable_by_key(|&(k, d, o)| (k, d, o));
                (c, *vol)
            });
            let ci = self.grid.unravel(b.center);
            let ci = [ci[0] as i32, ci[1] as i32, ci[2] as i32];
            let mut e = 0.0;
            for &(k, d, o) in cells.iter() {
                let mut idx = 0usize;
                for a in 0..dim {
                    let mut j = ci[a] + o[a];
                    if j < 0 {
                        j += m;
                    } else if j >= m {
                        j -= m;
                    }
                    idx = idx * m as usize + j as usize;
                }
                e += self.prefix[k as usize - 1][d as usize * n + idx];
            }
            out.push((e / *vol).sqrt());
        }
        out
    }

    /// Largest normalized tent energy over the family.
    pub fn carleson_sup(&self, family: &BallFamily, with_cap: bool) -> Result<f64> {
        if family.is_empty() {
            return Err(Error::Config("empty ball family".into()));
        }
        Ok(self.tent_energies(family, with_cap).into_iter().fold(0.0, f64::max))
    }
}

/// Normalized tent energies for each ball of the family.
pub fn tent_energies<T: Real>(f: &PhaseSpaceField<T>, family: &BallFamily) -> Vec<f64> {
    LevelEnergies::from_field(f).tent_energies(family, true)
}

/// Carleson functional: sup over sampled balls containing `(x, ω)` of the normalized tent energy.
pub fn carleson_functional<T: Real>(f: &PhaseSpaceField<T>, family: &BallFamily) -> Result<CosphereFunction> {
    if family.is_empty() {
        return Err(Error::Config("empty ball family".into()));
    }
    let vals = tent_energies(f, family);
    let n = f.grid.len();
    let mut out = vec![0.0f64; n * f.sphere.len()];
    let mut shapes = BallShapes::new(&f.grid, &f.sphere);
    let mut radius = f64::NAN;
    for (b, v) in family.balls.iter().zip(vals) {
        if b.radius != radius {
            shapes.cache.clear();
            radius = b.radius;
        }
        let (cells, _) = shapes.get(b.dir, b.radius);
        for c in cells {
            let k = c.dir as usize * n + offset_index(&f.grid, b.center, c.off);
            if v > out[k] {
                out[k] = v;
            }
        }
    }
    Ok(CosphereFunction::new(f.grid, &f.sphere, out))
}

/// `sup` of the Carleson functional over the family.
pub fn carleson_sup<T: Real>(f: &PhaseSpaceField<T>, family: &BallFamily) -> Result<f64> {
    if family.is_empty() {
        return Err(Error::Config("empty ball family".into()));
    }
    LevelEnergies::from_field(f).carleson_sup(family, true)
}

/// `T^p` norm: `L^p` norm of `A F` for `p < ∞`, sup of the Carleson functional for `p = ∞`
/// (over `family`, or the standard family when `None`).
pub fn tent_norm<T: Real>(f: &PhaseSpaceField<T>, p: f64, family: Option<&BallFamily>) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Config(format!("exponent {p} outside [1, ∞]")));
    }
    if p.is_infinite() {
        return match family {
            Some(fam) => carleson_sup(f, fam),
            None => carleson_sup(f, &BallFamily::standard(&f.grid, &f.sphere, &f.sigmas)),
        };
    }
    Ok(lusin_functional(f)?.lp_norm(p))
}

/// Shape of a tent-space atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtomShape {
    /// Constant on the tent.
    Flat,
    /// One cell at the deepest point of the tent.
    SingleCell,
}

/// Discrete volume of a ball (same weights and membership as the tent functionals).
pub fn ball_volume_discrete(grid: &GridSpec, sphere: &SphereGrid, ball: &BallSpec) -> f64 {
    let mut vol = 0.0;
    for d in 0..sphere.len() {
        for i in 0..grid.len() {
            let p = CospherePoint { x: grid.position(i), omega: sphere.direction(d) };
            let z = grid.min_image(p.x, ball.center.x);
            if quasi_dist_sq_z(z, p.omega, ball.center.omega) < ball.radius * ball.radius {
                vol += sphere.weight(d);
            }
        }
    }
    vol * grid.cell_volume()
}

/// Cells `(level, dir, x)` of the tent `T(B)` with their slack `r − d̃ − √σ`.
pub fn tent_cells(grid: &GridSpec, sphere: &SphereGrid, sigmas: &SigmaGrid, ball: &BallSpec) -> Vec<(usize, usize, usize, f64)> {
    let levels = sigmas.all();
    let mut out = Vec::new();
    for d in 0..sphere.len() {
        for i in 0..grid.len() {
            let z = grid.min_image(grid.position(i), ball.center.x);
            let dist = quasi_dist_sq_z(z, sphere.direction(d), ball.center.omega).sqrt();
            for (l, lv) in levels.iter().enumerate() {
                let slack = ball.radius - dist - lv.sigma.sqrt();
                if slack >= 0.0 {
                    out.push((l, d, i, slack));
                }
            }
        }
    }
    out
}

/// `T¹` atom supported in `T(B)` with weighted `ℓ²` norm `V̂(B)^{−1/2}`.
pub fn make_atom<T: Real>(
    grid: GridSpec,
    sphere: SphereGrid,
    sigmas: SigmaGrid,
    ball: &BallSpec,
    shape: AtomShape,
) -> Result<PhaseSpaceField<T>> {
    if !(ball.radius > 0.0) {
        return Err(Error::Config("ball radius must be positive".into()));
    }
    let cells = tent_cells(&grid, &sphere, &sigmas, ball);
    if cells.is_empty() {
        return Err(Error::Resolution(format!("tent of the ball of radius {} contains no grid cell", ball.radius)));
    }
    let vol = ball_volume_discrete(&grid, &sphere, ball);
    let mut f = PhaseSpaceField::zeros(grid, sphere, sigmas);
    match shape {
        AtomShape::Flat => {
            let mu: f64 = cells.iter().map(|&(l, d, _, _)| f.cell_measure(l, d)).sum();
            let v = cast_c::<T>(Complex64::new(1.0 / (vol * mu).sqrt(), 0.0));
            for &(l, d, i, _) in &cells {
                f.set(l, d, i, v);
            }
        }
        AtomShape::SingleCell => {
            let &(l, d, i, _) = cells.iter().max_by(|a, b| a.3.partial_cmp(&b.3).unwrap()).unwrap();
            let mu = f.cell_measure(l, d);
            f.set(l, d, i, cast_c(Complex64::new(1.0 / (vol * mu).sqrt(), 0.0)));
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(m: usize, a: usize) -> (GridSpec, SphereGrid, SigmaGrid) {
        let g = GridSpec::new(2, m, 8.0).unwrap();
        (g, SphereGrid::circle(a).unwrap(), SigmaGrid::geometric(0.05, 0.4).unwrap())
    }

    #[test]
    fn t2_equals_l2() {
        let (g, s, sg) = setup(16, 16);
        for seed in 0..3 {
            let f = PhaseSpaceField::<f64>::random(g, s.clone(), sg.clone(), 0.5, seed);
            let t2 = tent_norm(&f, 2.0, None).unwrap();
            let l2 = f.l2_norm();
            assert!((t2 - l2).abs() < 1e-10 * l2, "{t2} vs {l2}");
        }
    }

    #[test]
    fn fft_and_direct_paths_agree() {
        // the same sums with the symmetry/FFT path and without it
        let (g, s, _) = setup(16, 16);
        let eng = BallEngine::new(g, s.clone());
        let plain = BallEngine { grid: g, sphere: s.clone(), sym: None };
        let mut rng = shard_rng(3, 0);
        let u: Vec<Option<Vec<f64>>> =
            (0..16).map(|j| if j % 3 == 1 { None } else { Some((0..g.len()).map(|_| rng.random::<f64>()).collect()) }).collect();
        for &rho in &[0.3, 0.9, 1.6] {
            let a = eng.conical_sums(rho, &u);
            let b = plain.conical_sums(rho, &u);
            // brute force on a few points
            let h = g.cell_volume();
            for om in [0usize, 5, 11] {
                for x in [0usize, 37, 200] {
                    let mut e = 0.0;
                    for nu in 0..16 {
                        if let Some(un) = &u[nu] {
                            for y in 0..g.len() {
                                let (ix, iy) = (g.unravel(x), g.unravel(y));
                                let off = [0, 1].map(|k| {
                                    let d = (ix[k] as i64 - iy[k] as i64).rem_euclid(16);
                                    if d >= 8 { d - 16 } else { d }
                                });
                                if lattice_dist_sq(&g, [off[0], off[1], 0], s.direction(om), s.direction(nu)) < rho * rho {
                                    e += un[y] * s.weight(nu) * h;
                                }
                            }
                        }
                    }
                    assert!((a[om][x] - e).abs() < 1e-10 * (1.0 + e), "rho {rho} om {om} x {x}");
                    assert!((b[om][x] - e).abs() < 1e-10 * (1.0 + e));
                }
            }
        }
    }

    #[test]
    fn single_cell_lusin() {
        let (g, s, sg) = setup(16, 16);
        let mut f = PhaseSpaceField::<f64>::zeros(g, s.clone(), sg.clone());
        let (l0, d0, x0) = (2usize, 3usize, 77usize);
        f.set(l0, d0, x0, Complex64::new(1.0, 0.0));
        let a = lusin_functional(&f).unwrap();
        let lv = sg.all()[l0];
        let rho = lv.sigma.sqrt();
        let eng = BallEngine::new(g, s.clone());
        let vol = eng.volumes(rho)[d0];
        let mu = g.cell_volume() * s.weight(d0);
        for d in 0..16 {
            for x in 0..g.len() {
                let z = g.min_image(g.position(x), g.position(x0));
                let inside = quasi_dist_sq_z(z, s.direction(d), s.direction(d0)) < rho * rho;
                let expect = if inside { (lv.weight * mu / vol).sqrt() } else { 0.0 };
                assert!((a.value(d, x) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phase_rotation_and_homogeneity() {
        let (g, s, sg) = setup(16, 16);
        let f = PhaseSpaceField::<f64>::random(g, s, sg, 0.3, 9);
        let a = lusin_functional(&f).unwrap();
        let b = lusin_functional(&f.scale(Complex64::from_polar(1.0, 0.7))).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12 * x.max(1.0));
        }
        let t1 = tent_norm(&f, 1.0, None).unwrap();
        let t1s = tent_norm(&f.scale(Complex64::new(-2.5, 0.0)), 1.0, None).unwrap();
        assert!((t1s - 2.5 * t1).abs() < 1e-12 * t1s);
    }

    #[test]
    fn zero_field_norms() {
        let (g, s, sg) = setup(16, 16);
        let f = PhaseSpaceField::<f64>::zeros(g, s.clone(), sg.clone());
        assert_eq!(tent_norm(&f, 1.0, None).unwrap(), 0.0);
        assert_eq!(tent_norm(&f, f64::INFINITY, None).unwrap(), 0.0);
        let fam = BallFamily::standard(&g, &s, &sg);
        assert_eq!(carleson_functional(&f, &fam).unwrap().max(), 0.0);
        assert!(BallFamily::new(vec![]).is_err());
    }

    #[test]
    fn carleson_of_tent_indicator() {
        let (g, s, sg) = setup(16, 16);
        let b0 = SampledBall { center: g.nearest_index([0.0; 3]), dir: 2, radius: 1.2 };
        let fam = BallFamily::new(vec![b0, SampledBall { radius: 0.7, ..b0 }]).unwrap();
        let spec = BallSpec { center: CospherePoint { x: g.position(b0.center), omega: s.direction(2) }, radius: 1.2 };
        let cells = tent_cells(&g, &s, &sg, &spec);
        let mut f = PhaseSpaceField::<f64>::zeros(g, s.clone(), sg.clone());
        let mut mu = 0.0;
        for &(l, d, i, _) in &cells {
            f.set(l, d, i, Complex64::new(1.0, 0.0));
            mu += f.cell_measure(l, d);
        }
        let vol = ball_volume_discrete(&g, &s, &spec);
        let c = carleson_functional(&f, &fam).unwrap();
        assert!(c.value(2, b0.center) >= (mu / vol).sqrt() * (1.0 - 1e-12));
    }

    #[test]
    fn carleson_is_monotone() {
        let (g, s, sg) = setup(16, 16);
        let f2 = PhaseSpaceField::<f64>::random(g, s.clone(), sg.clone(), 0.4, 5);
        let f1 = f2.scale(Complex64::new(0.5, 0.2));
        assert!(f1.dominated_by(&f2));
        let fam = BallFamily::standard(&g, &s, &sg);
        let c1 = carleson_functional(&f1, &fam).unwrap();
        let c2 = carleson_functional(&f2, &fam).unwrap();
        assert!(c1.values().iter().zip(c2.values()).all(|(a, b)| a <= b));
    }

    #[test]
    fn atoms_are_normalized() {
        let (g, s, sg) = setup(16, 16);
        let ball = BallSpec { center: CospherePoint::planar([0.3, -0.2], 0.4), radius: 1.0 };
        let vol = ball_volume_discrete(&g, &s, &ball);
        for shape in [AtomShape::Flat, AtomShape::SingleCell] {
            let a = make_atom::<f64>(g, s.clone(), sg.clone(), &ball, shape).unwrap();
            assert!((a.l2_norm() - vol.powf(-0.5)).abs() < 1e-12 * vol.powf(-0.5));
            let t2 = tent_norm(&a, 2.0, None).unwrap();
            assert!((t2 - vol.powf(-0.5)).abs() < 1e-10 * t2);
            let inside: std::collections::HashSet<(usize, usize, usize)> =
                tent_cells(&g, &s, &sg, &ball).into_iter().map(|(l, d, i, _)| (l, d, i)).collect();
            for l in 0..a.level_count() {
                for d in 0..16 {
                    for i in 0..g.len() {
                        if a.get(l, d, i).norm() > 0.0 {
                            assert!(inside.contains(&(l, d, i)));
                        }
                    }
                }
            }
        }
        let tiny = BallSpec { center: CospherePoint::planar([0.0, 0.0], 0.0), radius: 0.1 };
        assert!(matches!(make_atom::<f64>(g, s, sg, &tiny, AtomShape::Flat), Err(Error::Resolution(_))));
    }

    #[test]
    fn fiop_round_trip() {
        let (g, s, sg) = setup(16, 8);
        let f = PhaseSpaceField::<f64>::random(g, s.clone(), sg.clone(), 0.2, 1);
        let mut buf = Vec::new();
        f.write_fiop(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FIOP");
        let back = PhaseSpaceField::<f64>::read_fiop(&buf[..], g, s, sg).unwrap();
        assert!((back.l2_norm() - f.l2_norm()).abs() < 1e-12 * f.l2_norm());
    }
}

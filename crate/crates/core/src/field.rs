//! Periodic grids, unitary discrete Fourier transforms, Fourier multipliers and norms.
//!
//! The torus `[-L/2, L/2)^n` stands in for `R^n`. Spatial samples sit at
//! `x_j = -L/2 + j h` with `h = L/M`; frequencies at `(2π/L)·k` with `k` in
//! FFT order. Transforms are unitary, so discrete `L²` norms (cell weight
//! `h^n`) are preserved exactly.

use std::sync::Arc;

use num_complex::{Complex, Complex64};
use rustfft::{Fft as RustFft, FftPlanner};

use crate::error::{Error, Result};
use crate::Real;

/// Spatial grid on the torus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    dim: usize,
    m: usize,
    extent: f64,
}

impl GridSpec {
    pub fn new(dim: usize, m: usize, extent: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Config(format!("dimension {dim} not supported (2 or 3)")));
        }
        if m < 16 || m % 2 != 0 {
            return Err(Error::Config(format!("points per axis must be even and >= 16, got {m}")));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::Config(format!("extent must be positive, got {extent}")));
        }
        Ok(GridSpec { dim, m, extent })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.m
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn spacing(&self) -> f64 {
        self.extent / self.m as f64
    }

    /// Total number of samples `M^n`.
    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell weight `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Frequency lattice step `2π/L`.
    pub fn freq_step(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.extent
    }

    pub fn nyquist(&self) -> f64 {
        std::f64::consts::PI * self.m as f64 / self.extent
    }

    /// Largest `|ζ|` on the lattice (the corner).
    pub fn max_frequency(&self) -> f64 {
        self.nyquist() * (self.dim as f64).sqrt()
    }

    /// Same grid with `M` doubled and `L` kept.
    pub fn refined(&self) -> GridSpec {
        GridSpec { m: self.m * 2, ..*self }
    }

    pub fn tag(&self) -> String {
        format!("n{}-M{}-L{}", self.dim, self.m, self.extent)
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.m; self.dim]
    }

    /// Multi-index of a flat index; unused trailing axes are zero.
    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let m = self.m;
        if self.dim == 2 {
            [idx / m, idx % m, 0]
        } else {
            [idx / (m * m), (idx / m) % m, idx % m]
        }
    }

    #[inline]
    pub fn ravel(&self, i: [usize; 3]) -> usize {
        let m = self.m;
        if self.dim == 2 {
            i[0] * m + i[1]
        } else {
            (i[0] * m + i[1]) * m + i[2]
        }
    }

    /// Signed lattice index of a 1D FFT-order position.
    #[inline]
    pub fn signed(&self, j: usize) -> i64 {
        let m = self.m as i64;
        let j = j as i64;
        if j < m / 2 {
            j
        } else {
            j - m
        }
    }

    /// Position `x` of a sample.
    #[inline]
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let h = self.spacing();
        let i = self.unravel(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = -0.5 * self.extent + i[a] as f64 * h;
        }
        x
    }

    /// Displacement represented by a flat index (minimal image, origin at index 0).
    #[inline]
    pub fn displacement(&self, idx: usize) -> [f64; 3] {
        let h = self.spacing();
        let i = self.unravel(idx);
        let mut z = [0.0; 3];
        for a in 0..self.dim {
            z[a] = self.signed(i[a]) as f64 * h;
        }
        z
    }

    /// Frequency `ζ` of a spectral coefficient.
    #[inline]
    pub fn frequency(&self, idx: usize) -> [f64; 3] {
        let d = self.freq_step();
        let i = self.unravel(idx);
        let mut k = [0.0; 3];
        for a in 0..self.dim {
            k[a] = self.signed(i[a]) as f64 * d;
        }
        k
    }

    /// Flat index of the lattice frequency with signed integer coordinates `k`.
    pub fn frequency_index(&self, k: [i64; 3]) -> usize {
        let m = self.m as i64;
        let mut i = [0usize; 3];
        for a in 0..self.dim {
            i[a] = k[a].rem_euclid(m) as usize;
        }
        self.ravel(i)
    }

    /// Flat index of the sample nearest to position `x`.
    pub fn nearest_index(&self, x: [f64; 3]) -> usize {
        let h = self.spacing();
        let m = self.m as i64;
        let mut i = [0usize; 3];
        for a in 0..self.dim {
            let j = ((x[a] + 0.5 * self.extent) / h).round() as i64;
            i[a] = j.rem_euclid(m) as usize;
        }
        self.ravel(i)
    }

    /// Minimal-image difference `x - y` on the torus.
    #[inline]
    pub fn min_image(&self, x: [f64; 3], y: [f64; 3]) -> [f64; 3] {
        let l = self.extent;
        let mut z = [0.0; 3];
        for a in 0..self.dim {
            let d = x[a] - y[a];
            z[a] = d - l * (d / l).round();
        }
        z
    }
}

/// Complex samples on the spatial lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledField<T: Real> {
    grid: GridSpec,
    values: Vec<Complex<T>>,
}

impl<T: Real> SampledField<T> {
    pub fn new(grid: GridSpec, values: Vec<Complex<T>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        Ok(SampledField { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        SampledField { grid, values: vec![Complex::new(T::zero(), T::zero()); grid.len()] }
    }

    /// Samples `g(x)` at every grid position.
    pub fn from_fn<F: Fn([f64; 3]) -> Complex64>(grid: GridSpec, g: F) -> Self {
        let values = (0..grid.len()).map(|i| cast_c(g(grid.position(i)))).collect();
        SampledField { grid, values }
    }

    /// `f(x) = L^{−n} Σ_ζ g(ζ) e^{ix·ζ}` over the frequency lattice, the inverse of
    /// [`SpectralField::continuum_values`].
    pub fn from_continuum<F: Fn([f64; 3]) -> Complex64>(grid: GridSpec, g: F) -> Self {
        let mut v: Vec<Complex<T>> = (0..grid.len())
            .map(|k| {
                let i = grid.unravel(k);
                let parity: i64 = (0..grid.dim).map(|a| grid.signed(i[a])).sum();
                let sign = if parity.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                cast_c(g(grid.frequency(k)) * sign)
            })
            .collect();
        Fft::new(grid).inverse(&mut v);
        let s = T::from_f64((grid.len() as f64).sqrt() / grid.extent.powi(grid.dim as i32)).unwrap();
        for c in v.iter_mut() {
            *c = *c * s;
        }
        SampledField { grid, values: v }
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<Complex<T>>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        SampledField { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex<T>> {
        self.values
    }

    pub fn scale(&self, a: Complex64) -> Self {
        let a = cast_c::<T>(a);
        SampledField { grid: self.grid, values: self.values.iter().map(|v| *v * a).collect() }
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: Complex64, other: &Self, b: Complex64) -> Result<Self> {
        if other.grid != self.grid {
            return Err(Error::Shape("grid mismatch".into()));
        }
        let (a, b) = (cast_c::<T>(a), cast_c::<T>(b));
        let values = self.values.iter().zip(&other.values).map(|(x, y)| *x * a + *y * b).collect();
        Ok(SampledField { grid: self.grid, values })
    }

    /// Translate by a whole number of cells (periodic).
    pub fn shift_cells(&self, s: [i64; 3]) -> Self {
        let g = self.grid;
        let m = g.m as i64;
        let mut out = vec![Complex::new(T::zero(), T::zero()); g.len()];
        for (idx, v) in self.values.iter().enumerate() {
            let i = g.unravel(idx);
            let mut j = [0usize; 3];
            for a in 0..g.dim {
                j[a] = (i[a] as i64 + s[a]).rem_euclid(m) as usize;
            }
            out[g.ravel(j)] = *v;
        }
        SampledField { grid: g, values: out }
    }

    pub fn to_f64(&self) -> SampledField<f64> {
        SampledField { grid: self.grid, values: self.values.iter().map(|v| to_c64(*v)).collect() }
    }

    pub fn from_f64(f: &SampledField<f64>) -> Self {
        SampledField { grid: f.grid, values: f.values.iter().map(|v| cast_c(*v)).collect() }
    }

    /// Discrete inner product `Σ f conj(g) h^n`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for (a, b) in self.values.iter().zip(&other.values) {
            s += to_c64(*a) * to_c64(*b).conj();
        }
        s * self.grid.cell_volume()
    }
}

/// Unitary spectrum of a sampled field.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField<T: Real> {
    grid: GridSpec,
    coeffs: Vec<Complex<T>>,
}

impl<T: Real> SpectralField<T> {
    pub fn new(grid: GridSpec, coeffs: Vec<Complex<T>>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} coefficients for a grid of {} points",
                coeffs.len(),
                grid.len()
            )));
        }
        Ok(SpectralField { grid, coeffs })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.coeffs
    }

    /// `sqrt(Σ |c|² h^n)`, equal to the spatial `L²` norm.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.coeffs.iter().map(|c| to_c64(*c).norm_sqr()).sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    /// Samples of the continuum transform `∫ e^{-ix·ζ} f(x) dx` at the lattice.
    pub fn continuum_values(&self) -> Vec<Complex64> {
        let g = self.grid;
        let scale = g.cell_volume() * (g.len() as f64).sqrt();
        (0..g.len())
            .map(|idx| {
                let i = g.unravel(idx);
                let parity: i64 = (0..g.dim).map(|a| g.signed(i[a])).sum();
                let sign = if parity.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                to_c64(self.coeffs[idx]) * (scale * sign)
            })
            .collect()
    }

    pub fn to_field(&self) -> SampledField<T> {
        let fft = Fft::new(self.grid);
        let mut v = self.coeffs.clone();
        fft.inverse(&mut v);
        SampledField::from_raw(self.grid, v)
    }
}

/// Reusable n-dimensional unitary FFT for one grid.
#[derive(Clone)]
pub struct Fft<T: Real> {
    grid: GridSpec,
    fwd: Arc<dyn RustFft<T>>,
    inv: Arc<dyn RustFft<T>>,
    scale: T,
}

impl<T: Real> std::fmt::Debug for Fft<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft").field("grid", &self.grid).finish()
    }
}

const LINE_BLOCK: usize = 16;

impl<T: Real> Fft<T> {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.m);
        let inv = planner.plan_fft_inverse(grid.m);
        let scale = T::one() / T::from_f64((grid.len() as f64).sqrt()).unwrap();
        Fft { grid, fwd, inv, scale }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn forward(&self, data: &mut [Complex<T>]) {
        self.run(data, &self.fwd);
    }

    pub fn inverse(&self, data: &mut [Complex<T>]) {
        self.run(data, &self.inv);
    }

    pub fn spectrum(&self, f: &SampledField<T>) -> SpectralField<T> {
        let mut v = f.values.clone();
        self.forward(&mut v);
        SpectralField { grid: self.grid, coeffs: v }
    }

    pub fn field(&self, s: &SpectralField<T>) -> SampledField<T> {
        let mut v = s.coeffs.clone();
        self.inverse(&mut v);
        SampledField::from_raw(self.grid, v)
    }

    fn run(&self, data: &mut [Complex<T>], plan: &Arc<dyn RustFft<T>>) {
        let g = self.grid;
        assert_eq!(data.len(), g.len(), "buffer does not match grid");
        let m = g.m;
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); plan.get_inplace_scratch_len()];
        // last axis: contiguous rows
        plan.process_with_scratch(data, &mut scratch);
        // remaining axes: gather blocks of lines
        let mut buf = vec![Complex::new(T::zero(), T::zero()); m * LINE_BLOCK];
        for axis in 0..g.dim - 1 {
            let stride = m.pow((g.dim - 1 - axis) as u32);
            let outer = g.len() / (m * stride);
            for o in 0..outer {
                let base = o * m * stride;
                let mut inner = 0;
                while inner < stride {
                    let b = LINE_BLOCK.min(stride - inner);
                    for k in 0..m {
                        let row = base + k * stride + inner;
                        for l in 0..b {
                            buf[l * m + k] = data[row + l];
                        }
                    }
                    plan.process_with_scratch(&mut buf[..b * m], &mut scratch);
                    for k in 0..m {
                        let row = base + k * stride + inner;
                        for l in 0..b {
                            data[row + l] = buf[l * m + k];
                        }
                    }
                    inner += b;
                }
            }
        }
        let s = self.scale;
        for v in data.iter_mut() {
            *v = *v * s;
        }
    }
}

/// Unitary forward transform.
pub fn to_spectrum<T: Real>(f: &SampledField<T>) -> SpectralField<T> {
    Fft::new(f.grid).spectrum(f)
}

/// Frequency-side function `m(ζ)`.
///
/// `origin` overrides the value at `ζ = 0`; when it returns `None` the
/// function is evaluated there and a non-finite result is replaced by 0.
pub trait Multiplier {
    fn eval(&self, zeta: [f64; 3]) -> Complex64;
    fn origin(&self) -> Option<Complex64> {
        None
    }
}

impl<F: Fn([f64; 3]) -> Complex64> Multiplier for F {
    fn eval(&self, zeta: [f64; 3]) -> Complex64 {
        self(zeta)
    }
}

/// Adapter for real-valued multipliers.
pub struct RealMultiplier<F>(pub F);

impl<F: Fn([f64; 3]) -> f64> Multiplier for RealMultiplier<F> {
    fn eval(&self, zeta: [f64; 3]) -> Complex64 {
        Complex64::new((self.0)(zeta), 0.0)
    }
}

/// Multiplier with an explicit value at `ζ = 0`.
pub struct WithOrigin<M>(pub M, pub Complex64);

impl<M: Multiplier> Multiplier for WithOrigin<M> {
    fn eval(&self, zeta: [f64; 3]) -> Complex64 {
        self.0.eval(zeta)
    }
    fn origin(&self) -> Option<Complex64> {
        Some(self.1)
    }
}

/// Multiplier values at every lattice frequency.
pub fn multiplier_table<M: Multiplier + ?Sized>(grid: &GridSpec, m: &M) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let zeta = grid.frequency(idx);
        let v = if idx == 0 {
            match m.origin() {
                Some(v) => v,
                None => {
                    let v = m.eval(zeta);
                    if v.re.is_finite() && v.im.is_finite() {
                        v
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                }
            }
        } else {
            m.eval(zeta)
        };
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite { zeta });
        }
        out.push(v);
    }
    Ok(out)
}

/// `F⁻¹[table · F f]` with a precomputed table.
pub fn apply_table<T: Real>(fft: &Fft<T>, table: &[Complex64], f: &SampledField<T>) -> SampledField<T> {
    let mut v = f.values.clone();
    fft.forward(&mut v);
    for (c, m) in v.iter_mut().zip(table) {
        *c = *c * cast_c::<T>(*m);
    }
    fft.inverse(&mut v);
    SampledField::from_raw(f.grid, v)
}

/// `m(D) f = F⁻¹[m · F f]`.
pub fn apply_multiplier<T: Real, M: Multiplier + ?Sized>(m: &M, f: &SampledField<T>) -> Result<SampledField<T>> {
    let table = multiplier_table(&f.grid, m)?;
    Ok(apply_table(&Fft::new(f.grid), &table, f))
}

/// Discrete `L^p` norm with cell weight `h^n`; `p = ∞` gives the max modulus.
pub fn lp_norm<T: Real>(f: &SampledField<T>, p: f64) -> f64 {
    let w = f.grid.cell_volume();
    lp_norm_real(f.values.iter().map(|v| to_c64(*v).norm()), p, w)
}

/// `L^p` norm of nonnegative samples with weight `w` per sample.
pub fn lp_norm_real<I: Iterator<Item = f64>>(vals: I, p: f64, w: f64) -> f64 {
    if p.is_infinite() {
        return vals.fold(0.0, f64::max);
    }
    if p == 2.0 {
        return (vals.map(|a| a * a).sum::<f64>() * w).sqrt();
    }
    if p == 1.0 {
        return vals.sum::<f64>() * w;
    }
    let s: f64 = vals.map(|a| a.powf(p)).sum();
    (s * w).powf(1.0 / p)
}

/// Japanese bracket `⟨ζ⟩ = (1 + |ζ|²)^{1/2}`.
#[inline]
pub fn bracket(zeta: [f64; 3]) -> f64 {
    (1.0 + norm3(zeta).powi(2)).sqrt()
}

/// `‖⟨D⟩^s f‖_{L^p}`.
pub fn sobolev_norm<T: Real>(f: &SampledField<T>, s: f64, p: f64) -> f64 {
    if s == 0.0 {
        return lp_norm(f, p);
    }
    let g = apply_multiplier(&RealMultiplier(move |z: [f64; 3]| bracket(z).powf(s)), f)
        .expect("Bessel weight is finite");
    lp_norm(&g, p)
}

#[inline]
pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cast_c<T: Real>(v: Complex64) -> Complex<T> {
    Complex::new(T::from_f64(v.re).unwrap(), T::from_f64(v.im).unwrap())
}

#[inline]
pub(crate) fn to_c64<T: Real>(v: Complex<T>) -> Complex64 {
    Complex64::new(v.re.to_f64().unwrap(), v.im.to_f64().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn gaussian(grid: GridSpec) -> SampledField<f64> {
        SampledField::from_fn(grid, |x| Complex64::new((-0.5 * dot3(x, x)).exp(), 0.0))
    }

    #[test]
    fn constant_field_has_spectrum_at_origin_only() {
        let g = GridSpec::new(2, 16, 4.0).unwrap();
        let f = SampledField::<f64>::from_fn(g, |_| Complex64::new(1.0, 0.0));
        let s = to_spectrum(&f);
        for (i, c) in s.coeffs().iter().enumerate() {
            if i == 0 {
                assert!((c.re - 16.0).abs() < 1e-12);
            } else {
                assert!(c.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn plane_wave_hits_one_coefficient() {
        let g = GridSpec::new(2, 32, 8.0).unwrap();
        let k = [3i64, -5, 0];
        let kv = [3.0 * g.freq_step(), -5.0 * g.freq_step(), 0.0];
        let f = SampledField::<f64>::from_fn(g, |x| Complex64::from_polar(1.0, dot3(kv, x)));
        let s = to_spectrum(&f);
        let target = g.frequency_index(k);
        for (i, c) in s.coeffs().iter().enumerate() {
            if i == target {
                assert!((c.norm() - 32.0).abs() < 1e-10);
            } else {
                assert!(c.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn gaussian_spectrum_matches_closed_form() {
        let g = GridSpec::new(2, 128, 20.0).unwrap();
        let s = to_spectrum(&gaussian(g));
        let cont = s.continuum_values();
        let mut worst: f64 = 0.0;
        for (idx, v) in cont.iter().enumerate() {
            let z = g.frequency(idx);
            let exact = 2.0 * PI * (-0.5 * dot3(z, z)).exp();
            if exact > 1e-3 {
                worst = worst.max((v - exact).norm() / exact);
            }
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn gaussian_l2_norm() {
        let g = GridSpec::new(2, 128, 20.0).unwrap();
        let n = lp_norm(&gaussian(g), 2.0);
        assert!((n / PI.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gaussian_sobolev_one() {
        // ‖⟨D⟩f‖² = (2π)^{-2} ∫ (1+|ζ|²) (2π)² e^{-|ζ|²} dζ = π + π
        let g = GridSpec::new(2, 128, 20.0).unwrap();
        let v = sobolev_norm(&gaussian(g), 1.0, 2.0);
        assert!((v / (2.0 * PI).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lp_counts_cells() {
        let g = GridSpec::new(2, 16, 4.0).unwrap();
        let mut f = SampledField::<f64>::zeros(g);
        for i in 0..7 {
            f.values_mut()[i * 3] = Complex64::new(1.0, 0.0);
        }
        assert!((lp_norm(&f, 1.0) - 7.0 * g.cell_volume()).abs() < 1e-14);
        assert_eq!(lp_norm(&SampledField::<f64>::zeros(g), 3.0), 0.0);
        assert_eq!(lp_norm(&f, f64::INFINITY), 1.0);
    }

    #[test]
    fn half_wave_group_inverts() {
        let g = GridSpec::new(2, 64, 16.0).unwrap();
        let f = gaussian(g);
        let fwd = |z: [f64; 3]| Complex64::from_polar(1.0, norm3(z));
        let bwd = |z: [f64; 3]| Complex64::from_polar(1.0, -norm3(z));
        let back = apply_multiplier(&bwd, &apply_multiplier(&fwd, &f).unwrap()).unwrap();
        let err = lp_norm(&back.combine(1.0.into(), &f, (-1.0).into()).unwrap(), 2.0) / lp_norm(&f, 2.0);
        assert!(err < 1e-10);
    }

    #[test]
    fn sobolev_of_plane_wave() {
        let g = GridSpec::new(2, 32, 8.0).unwrap();
        let kv = [2.0 * g.freq_step(), 1.0 * g.freq_step(), 0.0];
        let f = SampledField::<f64>::from_fn(g, |x| Complex64::from_polar(1.0, dot3(kv, x)));
        let r = sobolev_norm(&f, 1.5, 2.0) / sobolev_norm(&f, 0.0, 2.0);
        assert!((r - bracket(kv).powf(1.5)).abs() < 1e-10 * r);
    }

    #[test]
    fn singular_multiplier_gets_zero_at_origin() {
        let g = GridSpec::new(2, 16, 4.0).unwrap();
        let t = multiplier_table(&g, &RealMultiplier(|z: [f64; 3]| 1.0 / norm3(z))).unwrap();
        assert_eq!(t[0], Complex64::new(0.0, 0.0));
        let t = multiplier_table(&g, &WithOrigin(RealMultiplier(|z: [f64; 3]| 1.0 / norm3(z)), 5.0.into())).unwrap();
        assert_eq!(t[0].re, 5.0);
    }

    #[test]
    fn non_finite_multiplier_is_reported() {
        let g = GridSpec::new(2, 16, 4.0).unwrap();
        let e = multiplier_table(&g, &RealMultiplier(|z: [f64; 3]| if z[0] > 1.0 { f64::NAN } else { 1.0 }));
        assert!(matches!(e, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let g = GridSpec::new(2, 16, 4.0).unwrap();
        assert!(matches!(SampledField::<f64>::new(g, vec![Complex64::new(0.0, 0.0); 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn three_dimensional_round_trip() {
        let g = GridSpec::new(3, 16, 6.0).unwrap();
        let f = SampledField::<f64>::from_fn(g, |x| Complex64::new((-dot3(x, x)).exp(), x[2]));
        let s = to_spectrum(&f);
        assert!((s.l2_norm() - lp_norm(&f, 2.0)).abs() < 1e-12 * lp_norm(&f, 2.0));
        let back = s.to_field();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn single_precision_round_trip() {
        let g = GridSpec::new(2, 32, 8.0).unwrap();
        let f = SampledField::<f32>::from_fn(g, |x| Complex64::new((-dot3(x, x)).exp(), 0.0));
        let back = to_spectrum(&f).to_field();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).norm() < 1e-6);
        }
    }
}

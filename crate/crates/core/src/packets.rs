//! Generating profiles, the low-frequency cap, and parabolic wave packets.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{dot3, norm3, Fft, GridSpec, SampledField};
use crate::metric::{sphere_measure, SigmaGrid, SphereGrid};

/// Smooth bump on `(1/2, 2)` generating a profile pair.
#[derive(Clone, Copy, Debug)]
pub enum Bump {
    /// `exp(−1/((t−1/2)(2−t)))`.
    Standard,
    /// `exp(−1/(1−u²))` with `u = log₂ t`.
    Logarithmic,
    /// Caller-supplied bump; validated on construction.
    Custom(fn(f64) -> f64),
}

impl PartialEq for Bump {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Bump::Standard, Bump::Standard) | (Bump::Logarithmic, Bump::Logarithmic) => true,
            (Bump::Custom(a), Bump::Custom(b)) => std::ptr::fn_addr_eq(*a, *b),
            _ => false,
        }
    }
}

impl Bump {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Bump::Standard => {
                if t > 0.5 && t < 2.0 {
                    (-1.0 / ((t - 0.5) * (2.0 - t))).exp()
                } else {
                    0.0
                }
            }
            Bump::Logarithmic => {
                if t > 0.5 && t < 2.0 {
                    let u = t.log2();
                    (-1.0 / (1.0 - u * u)).exp()
                } else {
                    0.0
                }
            }
            Bump::Custom(f) => f(t),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Bump::Standard => "standard",
            Bump::Logarithmic => "logarithmic",
            Bump::Custom(_) => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Bump::Standard),
            "logarithmic" | "log" => Ok(Bump::Logarithmic),
            _ => Err(Error::Config(format!("unknown bump '{s}'"))),
        }
    }
}

const LO: f64 = 0.5;
const HI: f64 = 2.0;
const PANELS: usize = 16384;

/// Tabulated decreasing primitive `F(t) = ∫_t^2 g` with exact derivative `−g`,
/// interpolated by cubic Hermite polynomials.
#[derive(Clone, Debug)]
struct Tail {
    vals: Vec<f64>,
    ders: Vec<f64>,
    step: f64,
}

impl Tail {
    fn build<G: Fn(f64) -> f64>(g: G) -> Tail {
        let step = (HI - LO) / PANELS as f64;
        let mut vals = vec![0.0; PANELS + 1];
        let ders: Vec<f64> = (0..=PANELS).map(|i| -g(LO + i as f64 * step)).collect();
        for i in (0..PANELS).rev() {
            let a = LO + i as f64 * step;
            let q = step / 6.0 * (g(a) + 4.0 * g(a + 0.5 * step) + g(a + step));
            vals[i] = vals[i + 1] + q;
        }
        Tail { vals, ders, step }
    }

    fn total(&self) -> f64 {
        self.vals[0]
    }

    fn eval(&self, t: f64) -> f64 {
        if t <= LO {
            return self.vals[0];
        }
        if t >= HI {
            return 0.0;
        }
        let u = (t - LO) / self.step;
        let i = (u.floor() as usize).min(PANELS - 1);
        let s = u - i as f64;
        let (y0, y1) = (self.vals[i], self.vals[i + 1]);
        let (d0, d1) = (self.ders[i] * self.step, self.ders[i + 1] * self.step);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * d1
    }
}

/// The profiles `φ`, `Ψ`, the cap `r`, and the normalizations `c_σ`.
///
/// `Ψ(t) = b(t)/√(∫ b(u)² du/u)`, so `∫₀^∞ Ψ(σ|ζ|)² dσ/σ = 1` for `ζ ≠ 0`.
/// `φ(ζ) = s(|ζ|)` with `s(t) = ∫_t^2 b / ∫_{1/2}^2 b`.
/// `r(ζ)² = ∫_{|ζ|}^∞ Ψ(t)² dt/t`, so `r = 1` on `|ζ| ≤ 1/2`.
#[derive(Clone, Debug)]
pub struct ProfilePair {
    bump: Bump,
    dim: usize,
    psi_norm: f64,
    step: Tail,
    cap: Tail,
}

impl ProfilePair {
    pub fn new(bump: Bump, dim: usize) -> Result<Self> {
        build_profiles(bump, dim)
    }

    pub fn bump(&self) -> Bump {
        self.bump
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The bump `b(t)`.
    pub fn b(&self, t: f64) -> f64 {
        self.bump.eval(t)
    }

    /// Smoothed step `s(t)`: 1 on `[0, 1/2]`, 0 on `[2, ∞)`.
    pub fn step(&self, t: f64) -> f64 {
        if t <= LO {
            1.0
        } else {
            (self.step.eval(t) / self.step.total()).clamp(0.0, 1.0)
        }
    }

    /// Radial packet profile `Ψ(t)`.
    pub fn psi(&self, t: f64) -> f64 {
        self.bump.eval(t) / self.psi_norm
    }

    /// Cap `r(t)`.
    pub fn r(&self, t: f64) -> f64 {
        self.r_sq(t).sqrt()
    }

    pub fn r_sq(&self, t: f64) -> f64 {
        if t <= LO {
            1.0
        } else {
            (self.cap.eval(t) / self.cap.total()).clamp(0.0, 1.0)
        }
    }

    /// `c_σ = (∫_{S^{n−1}} φ((e₁−ν)/√σ)² dν)^{−1/2}`.
    pub fn c_sigma(&self, sigma: f64) -> f64 {
        let rs = sigma.sqrt();
        let theta_max = 2.0 * rs.min(1.0).asin();
        let g = |th: f64| {
            let v = self.step(2.0 * (0.5 * th).sin() / rs);
            let v = v * v;
            if self.dim == 2 {
                2.0 * v
            } else {
                2.0 * PI * v * th.sin()
            }
        };
        // trapezoid on [0, θ_max]; the integrand is smooth and flat at θ_max
        let mut n = 64usize;
        let mut prev = trapezoid(&g, theta_max, n);
        loop {
            n *= 2;
            let cur = trapezoid(&g, theta_max, n);
            if (cur - prev).abs() <= 1e-12 * cur || n >= 1 << 20 {
                return 1.0 / cur.sqrt();
            }
            prev = cur;
        }
    }

    /// Alternative cap `q`: 1 on `|ζ| ≤ 2`, 0 on `|ζ| ≥ 4`.
    pub fn low_cap(&self, t: f64) -> f64 {
        self.step(LO + (t - 2.0) * 0.75)
    }
}

fn trapezoid<G: Fn(f64) -> f64>(g: &G, b: f64, n: usize) -> f64 {
    let h = b / n as f64;
    let mut s = 0.5 * (g(0.0) + g(b));
    for i in 1..n {
        s += g(i as f64 * h);
    }
    s * h
}

/// Builds and validates the profile pair generated by `bump`.
pub fn build_profiles(bump: Bump, dim: usize) -> Result<ProfilePair> {
    if dim != 2 && dim != 3 {
        return Err(Error::Config(format!("dimension {dim} not supported")));
    }
    for i in 0..=4000 {
        let t = 4.0 * i as f64 / 4000.0;
        let v = bump.eval(t);
        let inside = t > LO && t < HI;
        if !v.is_finite() || v < 0.0 || v > 1.0 || (inside && v <= 0.0) || (!inside && v != 0.0) {
            return Err(Error::Config(format!("bump violates support/positivity at t={t} (value {v})")));
        }
    }
    let step = Tail::build(|t| bump.eval(t));
    let cap = Tail::build(|t| bump.eval(t).powi(2) / t);
    let psi_norm = cap.total().sqrt();
    Ok(ProfilePair { bump, dim, psi_norm, step, cap })
}

/// Index of a packet: direction and scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacketIndex {
    pub omega: [f64; 3],
    pub sigma: f64,
}

/// `ψ_{ω,σ}(ζ) = c_σ φ((ζ̂−ω)/√σ) Ψ(σζ)`.
#[derive(Clone, Debug)]
pub struct PacketSymbol<'a> {
    profiles: &'a ProfilePair,
    omega: [f64; 3],
    sigma: f64,
    sqrt_sigma: f64,
    c: f64,
}

impl PacketSymbol<'_> {
    pub fn eval(&self, zeta: [f64; 3]) -> f64 {
        let k = norm3(zeta);
        if k == 0.0 {
            return 0.0;
        }
        let radial = self.profiles.psi(self.sigma * k);
        if radial == 0.0 {
            return 0.0;
        }
        let d = [zeta[0] / k - self.omega[0], zeta[1] / k - self.omega[1], zeta[2] / k - self.omega[2]];
        self.c * self.profiles.step(norm3(d) / self.sqrt_sigma) * radial
    }

    pub fn c_sigma(&self) -> f64 {
        self.c
    }
}

/// Frequency-side packet. Callers in the band `σ ∈ [1, e]` use the cap instead.
pub fn packet_symbol(idx: PacketIndex, profiles: &ProfilePair) -> PacketSymbol<'_> {
    PacketSymbol::with_c(idx, profiles, profiles.c_sigma(idx.sigma))
}

impl<'a> PacketSymbol<'a> {
    pub fn with_c(idx: PacketIndex, profiles: &'a ProfilePair, c: f64) -> Self {
        PacketSymbol { profiles, omega: idx.omega, sigma: idx.sigma, sqrt_sigma: idx.sigma.sqrt(), c }
    }
}

/// `|Σ_σ Δ Σ_j w_j ψ_{ω_j,σ}(ζ)² + r(ζ)² − 1|`.
pub fn plancherel_defect(zeta: [f64; 3], profiles: &ProfilePair, sphere: &SphereGrid, sigmas: &SigmaGrid) -> Result<f64> {
    if norm3(zeta) == 0.0 {
        return Err(Error::Domain("the identity is not tested at ζ = 0".into()));
    }
    let k = norm3(zeta);
    let mut total = profiles.r_sq(k);
    for &s in sigmas.levels() {
        if profiles.psi(s * k) == 0.0 {
            continue;
        }
        let sym = packet_symbol(PacketIndex { omega: [1.0, 0.0, 0.0], sigma: s }, profiles);
        let c = sym.c_sigma();
        let mut acc = 0.0;
        for j in 0..sphere.len() {
            let p = PacketSymbol::with_c(PacketIndex { omega: sphere.direction(j), sigma: s }, profiles, c).eval(zeta);
            acc += sphere.weight(j) * p * p;
        }
        total += sigmas.delta() * acc;
    }
    Ok((total - 1.0).abs())
}

/// Largest `|ζ|` whose packets are angularly resolved by `sphere`: the finest packet
/// contributing at `ζ` (`σ = 1/(2|ζ|)`, support `|ζ̂−ω| ≤ 2√σ`) spans at least 8 directions.
pub fn resolved_frequency(sphere: &SphereGrid) -> f64 {
    let h = (sphere_measure(sphere.dim()) / sphere.len() as f64).powf(1.0 / (sphere.dim() as f64 - 1.0));
    1.0 / (8.0 * h * h)
}

/// Spatial decay report of one packet.
#[derive(Clone, Debug)]
pub struct DecayReport {
    /// `sup |F⁻¹ψ|·σ^{(3n+1)/4}·(1+σ⁻¹|x|²+σ⁻²⟨ω,x⟩²)^N` for `N = 1, 2, 3`.
    pub sup: [f64; 3],
    /// `σ^{(n−1)/4} ‖F⁻¹ψ‖_{L¹}`.
    pub l1_mass: f64,
    /// Root second moments of `|F⁻¹ψ|²` along `ω` and across `ω`.
    pub radius_along: f64,
    pub radius_across: f64,
    pub grid_tag: String,
}

/// Checks that a packet of scale `σ` is resolved on `grid`.
pub fn check_packet_resolution(grid: &GridSpec, sigma: f64) -> Result<()> {
    let outer = 2.0 / sigma;
    if outer > grid.nyquist() {
        return Err(Error::Resolution(format!(
            "packet at σ={sigma} reaches |ζ|={outer:.3} beyond the Nyquist frequency {:.3}",
            grid.nyquist()
        )));
    }
    let width = (1.5 / sigma).min(2.0 / sigma.sqrt());
    if width < 4.0 * grid.freq_step() {
        return Err(Error::Resolution(format!(
            "packet at σ={sigma} spans fewer than 4 lattice cells (width {width:.3}, cell {:.3})",
            grid.freq_step()
        )));
    }
    Ok(())
}

/// Spatial kernel `F⁻¹ψ(z)` indexed by displacement (origin at index 0).
pub fn packet_kernel(idx: PacketIndex, profiles: &ProfilePair, grid: &GridSpec) -> SampledField<f64> {
    let sym = packet_symbol(idx, profiles);
    let mut v: Vec<Complex64> = (0..grid.len()).map(|i| Complex64::new(sym.eval(grid.frequency(i)), 0.0)).collect();
    Fft::<f64>::new(*grid).inverse(&mut v);
    let scale = (grid.len() as f64).sqrt() / grid.extent().powi(grid.dim() as i32);
    for c in v.iter_mut() {
        *c *= scale;
    }
    SampledField::from_raw(*grid, v)
}

pub fn packet_space_decay(idx: PacketIndex, profiles: &ProfilePair, grid: &GridSpec) -> Result<DecayReport> {
    check_packet_resolution(grid, idx.sigma)?;
    let k = packet_kernel(idx, profiles, grid);
    let n = grid.dim() as f64;
    let s = idx.sigma;
    let amp = s.powf((3.0 * n + 1.0) / 4.0);
    let mut sup = [0.0f64; 3];
    let (mut l1, mut m0, mut ma, mut mc) = (0.0, 0.0, 0.0, 0.0);
    for (i, v) in k.values().iter().enumerate() {
        let z = grid.displacement(i);
        let a = v.norm();
        let along = dot3(idx.omega, z);
        let w = 1.0 + dot3(z, z) / s + along * along / (s * s);
        for (nn, sp) in sup.iter_mut().enumerate() {
            *sp = sp.max(a * amp * w.powi(nn as i32 + 1));
        }
        l1 += a;
        let a2 = a * a;
        m0 += a2;
        ma += a2 * along * along;
        mc += a2 * (dot3(z, z) - along * along);
    }
    Ok(DecayReport {
        sup,
        l1_mass: s.powf((n - 1.0) / 4.0) * l1 * grid.cell_volume(),
        radius_along: (ma / m0).sqrt(),
        radius_across: (mc / m0).sqrt(),
        grid_tag: grid.tag(),
    })
}

/// Fit of `σ^{−(n−1)/4} ∫ φ_{ω,σ}(D) f dω = C_σ f`.
#[derive(Clone, Copy, Debug)]
pub struct ReproducingFit {
    pub c: f64,
    pub residual: f64,
}

/// The angular multiplier `σ^{−(n−1)/4} Σ_j w_j c_σ φ((ζ̂−ω_j)/√σ)`.
pub fn reproducing_multiplier(sigma: f64, profiles: &ProfilePair, sphere: &SphereGrid, zeta: [f64; 3]) -> f64 {
    let k = norm3(zeta);
    if k == 0.0 {
        return 0.0;
    }
    let c = profiles.c_sigma(sigma);
    let rs = sigma.sqrt();
    let u = [zeta[0] / k, zeta[1] / k, zeta[2] / k];
    let mut acc = 0.0;
    for j in 0..sphere.len() {
        let w = sphere.direction(j);
        let d = [u[0] - w[0], u[1] - w[1], u[2] - w[2]];
        acc += sphere.weight(j) * profiles.step(norm3(d) / rs);
    }
    sigma.powf(-(profiles.dim() as f64 - 1.0) / 4.0) * c * acc
}

pub fn reproducing_constant(
    sigma: f64,
    profiles: &ProfilePair,
    sphere: &SphereGrid,
    f: &SampledField<f64>,
) -> Result<ReproducingFit> {
    let g = *f.grid();
    let fft = Fft::<f64>::new(g);
    let spec = fft.spectrum(f);
    let total: f64 = spec.coeffs().iter().map(|c| c.norm_sqr()).sum();
    if total == 0.0 || spec.coeffs()[0].norm_sqr() > 1e-8 * total {
        return Err(Error::Domain("field has mass at ζ = 0".into()));
    }
    let mut num = 0.0;
    let mut mult = Vec::with_capacity(g.len());
    for (i, c) in spec.coeffs().iter().enumerate() {
        let m = reproducing_multiplier(sigma, profiles, sphere, g.frequency(i));
        num += m * c.norm_sqr();
        mult.push(m);
    }
    let cfit = num / total;
    let res: f64 = spec.coeffs().iter().zip(&mult).map(|(c, m)| (m - cfit).powi(2) * c.norm_sqr()).sum();
    Ok(ReproducingFit { c: cfit, residual: (res / total).sqrt() })
}

/// CSV of `(t, b, s, psi, r)` on a 4096-point log grid over `[1/8, 8]`.
pub fn write_profile_csv<W: Write>(out: W, profiles: &ProfilePair) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "b", "s", "psi", "r"])?;
    let n = 4096;
    for i in 0..n {
        let t = (-(8f64.ln()) + 2.0 * 8f64.ln() * i as f64 / (n - 1) as f64).exp();
        w.write_record(&[
            format!("{t:.17e}"),
            format!("{:.17e}", profiles.b(t)),
            format!("{:.17e}", profiles.step(t)),
            format!("{:.17e}", profiles.psi(t)),
            format!("{:.17e}", profiles.r(t)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Volume of the unit sphere used by the cap band.
pub fn cap_scale(dim: usize) -> f64 {
    1.0 / sphere_measure(dim).sqrt()
}

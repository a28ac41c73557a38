//! Normal oscillatory integral operators, their lifted kernels `K_{σ,τ}` (the kernel
//! of `W_σ T V_τ*`), off-singularity fits, the residual class, and empirical
//! tent-space bounds.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{apply_multiplier, dot3, norm3, Fft, GridSpec, SampledField, SpectralField};
use crate::metric::{quasi_dist_sq_z, shard_rng, CospherePoint};
use crate::packets::{check_packet_resolution, packet_symbol, PacketIndex, ProfilePair};
use crate::tent::{tent_norm, BallFamily, PhaseSpaceField};
use crate::transform::TransformPlan;

const NEWTON_STEPS: usize = 50;

/// Phase `Φ(x,η)`, homogeneous of degree 1 in `η`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhaseFunction {
    /// `x·η + t|η|`; `t = 0` is the identity phase.
    HalfWave { t: f64 },
    /// `x·η + t|η| + ε sin(x₁) η₂`.
    Perturbed { t: f64, eps: f64 },
}

impl PhaseFunction {
    /// True when `Φ(x,η) = x·η + φ₀(η)`.
    pub fn linear_in_eta(&self) -> bool {
        matches!(self, PhaseFunction::HalfWave { .. })
    }

    pub fn phase(&self, x: [f64; 3], eta: [f64; 3]) -> f64 {
        match *self {
            PhaseFunction::HalfWave { t } => dot3(x, eta) + t * norm3(eta),
            PhaseFunction::Perturbed { t, eps } => dot3(x, eta) + t * norm3(eta) + eps * x[0].sin() * eta[1],
        }
    }

    pub fn grad_x(&self, x: [f64; 3], eta: [f64; 3]) -> [f64; 3] {
        match *self {
            PhaseFunction::HalfWave { .. } => eta,
            PhaseFunction::Perturbed { eps, .. } => [eta[0] + eps * x[0].cos() * eta[1], eta[1], eta[2]],
        }
    }

    /// `∇_ηΦ`; undefined at `η = 0`.
    pub fn grad_eta(&self, x: [f64; 3], eta: [f64; 3]) -> [f64; 3] {
        let k = norm3(eta);
        let (t, shift) = match *self {
            PhaseFunction::HalfWave { t } => (t, 0.0),
            PhaseFunction::Perturbed { t, eps } => (t, eps * x[0].sin()),
        };
        [x[0] + t * eta[0] / k, x[1] + t * eta[1] / k + shift, x[2] + t * eta[2] / k]
    }

    /// `∂²_{x_i η_j} Φ`.
    pub fn mixed_hessian(&self, x: [f64; 3], _eta: [f64; 3]) -> [[f64; 3]; 3] {
        let mut h = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        if let PhaseFunction::Perturbed { eps, .. } = *self {
            h[0][1] = eps * x[0].cos();
        }
        h
    }

    pub fn mixed_det(&self, x: [f64; 3], eta: [f64; 3], dim: usize) -> f64 {
        let h = self.mixed_hessian(x, eta);
        if dim == 2 {
            h[0][0] * h[1][1] - h[0][1] * h[1][0]
        } else {
            det3(h)
        }
    }

    /// Homogeneity `Φ(x,λη) = λΦ(x,η)` and nondegeneracy of the mixed Hessian on a seeded sample.
    pub fn check(&self, dim: usize, samples: usize, seed: u64) -> Result<f64> {
        let mut rng = shard_rng(seed, 0);
        let mut min_det = f64::INFINITY;
        for _ in 0..samples {
            let mut x = [0.0; 3];
            let mut eta = [0.0; 3];
            for a in 0..dim {
                x[a] = rng.random_range(-5.0..5.0);
                eta[a] = rng.random_range(-3.0..3.0);
            }
            let lam: f64 = rng.random_range(0.1..10.0);
            let p = self.phase(x, eta);
            let q = self.phase(x, [lam * eta[0], lam * eta[1], lam * eta[2]]);
            if (q - lam * p).abs() > 1e-8 * (lam * p).abs().max(1.0) {
                return Err(Error::Domain(format!("phase is not homogeneous at x={x:?}, η={eta:?}")));
            }
            min_det = min_det.min(self.mixed_det(x, eta, dim).abs());
        }
        if !(min_det > 0.0) {
            return Err(Error::Singular("mixed Hessian degenerates on the sample".into()));
        }
        Ok(min_det)
    }
}

fn det3(h: [[f64; 3]; 3]) -> f64 {
    h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0])
}

/// Symbol `a(x,η)` of order 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SymbolKind {
    One,
    /// `1 − s(|η|/(2ε))`: 0 on `|η| ≤ ε`, 1 on `|η| ≥ 4ε`.
    HighPass { eps: f64 },
    /// `1 + ½ sin(x₁) χ(η)` with `χ` the high-pass at `ε = 1/4`.
    Pseudo,
}

#[derive(Clone, Debug)]
pub struct SymbolFunction {
    kind: SymbolKind,
    profiles: ProfilePair,
    /// Order `m`.
    pub order: f64,
    /// Type parameters `(ρ, 1−ρ, 1)`.
    pub rho: f64,
    /// `a(x,η) = 0` for `|η| < ε` when set.
    pub cutoff: Option<f64>,
}

impl SymbolFunction {
    pub fn new(kind: SymbolKind, profiles: ProfilePair) -> Result<Self> {
        let cutoff = match kind {
            SymbolKind::HighPass { eps } => {
                if !(eps > 0.0) {
                    return Err(Error::Config(format!("cutoff radius must be positive, got {eps}")));
                }
                Some(eps)
            }
            _ => None,
        };
        Ok(SymbolFunction { kind, profiles, order: 0.0, rho: 1.0, cutoff })
    }

    pub fn kind(&self) -> SymbolKind {
        self.kind
    }

    pub fn x_independent(&self) -> bool {
        !matches!(self.kind, SymbolKind::Pseudo)
    }

    fn high_pass(&self, eps: f64, k: f64) -> f64 {
        1.0 - self.profiles.step(k / (2.0 * eps))
    }

    pub fn eval(&self, x: [f64; 3], eta: [f64; 3]) -> f64 {
        let k = norm3(eta);
        match self.kind {
            SymbolKind::One => 1.0,
            SymbolKind::HighPass { eps } => self.high_pass(eps, k),
            SymbolKind::Pseudo => 1.0 + 0.5 * x[0].sin() * self.high_pass(0.25, k),
        }
    }
}

/// `T f(x) = ∫ e^{iΦ(x,η)} a(x,η) f̂(η) dη`.
#[derive(Clone, Debug)]
pub struct NormalOIO {
    pub phase: PhaseFunction,
    pub symbol: SymbolFunction,
}

impl NormalOIO {
    pub fn new(phase: PhaseFunction, symbol: SymbolFunction) -> Self {
        NormalOIO { phase, symbol }
    }

    /// Multiplier `e^{iφ₀(η)} a(η)` when the operator is translation invariant.
    pub fn multiplier(&self) -> Option<impl Fn([f64; 3]) -> Complex64 + '_> {
        if !(self.phase.linear_in_eta() && self.symbol.x_independent()) {
            return None;
        }
        let PhaseFunction::HalfWave { t } = self.phase else { return None };
        Some(move |z: [f64; 3]| Complex64::from_polar(self.symbol.eval([0.0; 3], z), t * norm3(z)))
    }

    /// `χ̂(y,ν)`: solves `∇_ηΦ(x,ν) = y` for `x` and returns `(x, ∇_xΦ/|∇_xΦ|)`.
    pub fn induced_contact(&self, p: &CospherePoint) -> Result<CospherePoint> {
        let nu = p.omega;
        match self.phase {
            PhaseFunction::HalfWave { t } => {
                let x = [p.x[0] - t * nu[0], p.x[1] - t * nu[1], p.x[2] - t * nu[2]];
                Ok(CospherePoint { x, omega: nu })
            }
            ph => {
                let dim = if nu[2] == 0.0 && p.x[2] == 0.0 { 2 } else { 3 };
                let mut x = p.x;
                for _ in 0..NEWTON_STEPS {
                    let g = ph.grad_eta(x, nu);
                    let r = [g[0] - p.x[0], g[1] - p.x[1], g[2] - p.x[2]];
                    if norm3(r) < 1e-13 {
                        let gx = ph.grad_x(x, nu);
                        return CospherePoint::from_direction(x, gx);
                    }
                    // Jacobian of x ↦ ∇_ηΦ(x,ν) is the transpose of the mixed Hessian
                    let h = ph.mixed_hessian(x, nu);
                    let j = [[h[0][0], h[1][0], h[2][0]], [h[0][1], h[1][1], h[2][1]], [h[0][2], h[1][2], h[2][2]]];
                    let dx = solve(j, r, dim).ok_or_else(|| Error::Singular(format!("singular Jacobian at {p:?}")))?;
                    // damping: halve until the residual decreases
                    let mut step = 1.0;
                    let r0 = norm3(r);
                    loop {
                        let xn = [x[0] - step * dx[0], x[1] - step * dx[1], x[2] - step * dx[2]];
                        let gn = ph.grad_eta(xn, nu);
                        let rn = norm3([gn[0] - p.x[0], gn[1] - p.x[1], gn[2] - p.x[2]]);
                        if rn < r0 || step < 1e-6 {
                            x = xn;
                            break;
                        }
                        step *= 0.5;
                    }
                }
                Err(Error::Singular(format!("Newton iteration did not converge at {p:?}")))
            }
        }
    }
}

fn solve(j: [[f64; 3]; 3], r: [f64; 3], dim: usize) -> Option<[f64; 3]> {
    if dim == 2 {
        let d = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if d.abs() < 1e-300 {
            return None;
        }
        return Some([(r[0] * j[1][1] - j[0][1] * r[1]) / d, (j[0][0] * r[1] - j[1][0] * r[0]) / d, 0.0]);
    }
    let d = det3(j);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = j;
        for row in 0..3 {
            m[row][c] = r[row];
        }
        *o = det3(m) / d;
    }
    Some(out)
}

/// `R = M_g C_G M_g`: multiply by `g(x) = e^{−|x|²/(2s_g²)}`, convolve with the unit-mass
/// Gaussian of width `s_G`, multiply by `g` again. The kernel `g(x) G(x−y) g(y)` is Schwartz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingOperator {
    pub window: f64,
    pub width: f64,
}

impl SmoothingOperator {
    pub fn new(window: f64, width: f64) -> Result<Self> {
        if !(window > 0.0 && width > 0.0) {
            return Err(Error::Config("smoothing widths must be positive".into()));
        }
        Ok(SmoothingOperator { window, width })
    }

    pub fn apply(&self, f: &SampledField<f64>) -> Result<SampledField<f64>> {
        let g = |x: [f64; 3]| (-dot3(x, x) / (2.0 * self.window * self.window)).exp();
        let grid = *f.grid();
        let mut u = f.clone();
        for (i, v) in u.values_mut().iter_mut().enumerate() {
            *v *= g(grid.position(i));
        }
        let s2 = self.width * self.width;
        let mut u = apply_multiplier(&|z: [f64; 3]| Complex64::new((-0.5 * s2 * dot3(z, z)).exp(), 0.0), &u)?;
        for (i, v) in u.values_mut().iter_mut().enumerate() {
            *v *= g(grid.position(i));
        }
        Ok(u)
    }
}

/// Operators the lifted-kernel machinery accepts.
#[derive(Clone, Debug)]
pub enum Operator {
    Oio(NormalOIO),
    Smoothing(SmoothingOperator),
    Zero,
}

impl Operator {
    pub fn identity(dim: usize) -> Result<Self> {
        let p = ProfilePair::new(crate::packets::Bump::Standard, dim)?;
        Ok(Operator::Oio(NormalOIO::new(PhaseFunction::HalfWave { t: 0.0 }, SymbolFunction::new(SymbolKind::One, p)?)))
    }

    /// `e^{it√−Δ}` composed with the high-pass symbol at `ε = 1/4`.
    pub fn half_wave(dim: usize, t: f64) -> Result<Self> {
        let p = ProfilePair::new(crate::packets::Bump::Standard, dim)?;
        Ok(Operator::Oio(NormalOIO::new(
            PhaseFunction::HalfWave { t },
            SymbolFunction::new(SymbolKind::HighPass { eps: 0.25 }, p)?,
        )))
    }

    /// Plain `e^{it√−Δ}` (symbol 1).
    pub fn propagator(dim: usize, t: f64) -> Result<Self> {
        let p = ProfilePair::new(crate::packets::Bump::Standard, dim)?;
        Ok(Operator::Oio(NormalOIO::new(PhaseFunction::HalfWave { t }, SymbolFunction::new(SymbolKind::One, p)?)))
    }

    pub fn pseudo(dim: usize) -> Result<Self> {
        let p = ProfilePair::new(crate::packets::Bump::Standard, dim)?;
        Ok(Operator::Oio(NormalOIO::new(PhaseFunction::HalfWave { t: 0.0 }, SymbolFunction::new(SymbolKind::Pseudo, p)?)))
    }

    pub fn smoothing() -> Self {
        Operator::Smoothing(SmoothingOperator { window: 2.0, width: 1.0 })
    }

    /// Builds an operator from a name (`identity`, `halfwave`, `pseudo`, `smoothing`, `zero`).
    pub fn by_name(name: &str, dim: usize, t: f64) -> Result<Self> {
        match name {
            "identity" => Self::identity(dim),
            "halfwave" => Self::half_wave(dim, t),
            "pseudo" => Self::pseudo(dim),
            "smoothing" => Ok(Self::smoothing()),
            "zero" => Ok(Operator::Zero),
            _ => Err(Error::Config(format!("unknown operator '{name}'"))),
        }
    }

    /// Multiplier of a translation-invariant operator.
    pub fn multiplier(&self) -> Option<Box<dyn Fn([f64; 3]) -> Complex64 + '_>> {
        match self {
            Operator::Oio(t) => t.multiplier().map(|m| Box::new(m) as Box<dyn Fn([f64; 3]) -> Complex64>),
            Operator::Zero => Some(Box::new(|_| Complex64::new(0.0, 0.0))),
            Operator::Smoothing(_) => None,
        }
    }

    pub fn apply(&self, f: &SampledField<f64>) -> Result<SampledField<f64>> {
        match self {
            Operator::Oio(t) => apply_oio(t, f),
            Operator::Smoothing(s) => s.apply(f),
            Operator::Zero => Ok(SampledField::zeros(*f.grid())),
        }
    }

    /// `T*` where it has the same form.
    pub fn adjoint(&self) -> Result<Self> {
        match self {
            Operator::Oio(t) => match (t.phase, t.symbol.x_independent()) {
                (PhaseFunction::HalfWave { t: s }, true) => {
                    Ok(Operator::Oio(NormalOIO::new(PhaseFunction::HalfWave { t: -s }, t.symbol.clone())))
                }
                _ => Err(Error::Config("adjoint of an x-dependent operator is not available in closed form".into())),
            },
            other => Ok(other.clone()),
        }
    }

    /// Induced contact transformation (`None` for operators without one).
    pub fn contact(&self, p: &CospherePoint) -> Option<Result<CospherePoint>> {
        match self {
            Operator::Oio(t) => Some(t.induced_contact(p)),
            _ => None,
        }
    }
}

/// `T f` on the grid: multiplier fast path when available, direct quadrature otherwise.
pub fn apply_oio(t: &NormalOIO, f: &SampledField<f64>) -> Result<SampledField<f64>> {
    if matches!(t.phase, PhaseFunction::HalfWave { t: 0.0 }) && matches!(t.symbol.kind(), SymbolKind::One) {
        return Ok(f.clone());
    }
    match t.multiplier() {
        Some(m) => apply_multiplier(&m, f),
        None => apply_oio_direct(t, f),
    }
}

/// `T f(x) = (2π)^{−n} Σ_η e^{iΦ(x,η)} a(x,η) f̂(η) (2π/L)ⁿ` over the frequency lattice.
pub fn apply_oio_direct(t: &NormalOIO, f: &SampledField<f64>) -> Result<SampledField<f64>> {
    let grid = *f.grid();
    let fft = Fft::<f64>::new(grid);
    let spec: SpectralField<f64> = fft.spectrum(f);
    let fhat = spec.continuum_values();
    let scale = 1.0 / grid.extent().powi(grid.dim() as i32);
    let freqs: Vec<([f64; 3], Complex64)> = (0..grid.len())
        .filter(|&k| fhat[k] != Complex64::new(0.0, 0.0))
        .map(|k| (grid.frequency(k), fhat[k]))
        .collect();
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let x = grid.position(i);
        let mut acc = Complex64::new(0.0, 0.0);
        for &(eta, fh) in &freqs {
            let a = t.symbol.eval(x, eta);
            if a == 0.0 {
                continue;
            }
            acc += Complex64::from_polar(a, t.phase.phase(x, eta)) * fh;
        }
        out.push(acc * scale);
    }
    SampledField::new(grid, out)
}

/// One lifted kernel request: `K_{σ,τ}((x,ω),(y,ν))` for all grid points `x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelRequest {
    pub sigma: f64,
    pub tau: f64,
    pub omega: [f64; 3],
    pub nu: [f64; 3],
    pub y: [f64; 3],
}

/// Kernel values over the grid for fixed `(ω, σ; y, ν, τ)`.
#[derive(Clone, Debug)]
pub struct KernelSlice {
    pub request: KernelRequest,
    pub grid: GridSpec,
    pub values: Vec<Complex64>,
}

impl KernelSlice {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Grid index of the largest `|K|`.
    pub fn argmax(&self) -> usize {
        let mut best = (0, -1.0);
        for (i, c) in self.values.iter().enumerate() {
            if c.norm() > best.1 {
                best = (i, c.norm());
            }
        }
        best.0
    }
}

/// Which kernel path to take.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelPath {
    /// Multiplier operators: one inverse transform of `ψ_{ω,σ} m ψ̃_{ν,τ}`.
    Multiplier,
    /// `ψ_{ω,σ}(D) T ψ̃_{ν,τ}(D) δ_y` through the operator's application.
    Column,
}

/// Kernel of `W_σ T V_τ*` with `W` built from `w` and `V` from `v`.
pub fn lifted_kernel(
    op: &Operator,
    w: &ProfilePair,
    v: &ProfilePair,
    grid: &GridSpec,
    req: &KernelRequest,
    path: Option<KernelPath>,
) -> Result<KernelSlice> {
    check_packet_resolution(grid, req.sigma)?;
    check_packet_resolution(grid, req.tau)?;
    let psi = packet_symbol(PacketIndex { omega: req.omega, sigma: req.sigma }, w);
    let psi_t = packet_symbol(PacketIndex { omega: req.nu, sigma: req.tau }, v);
    let mult = op.multiplier();
    let path = path.unwrap_or(if mult.is_some() { KernelPath::Multiplier } else { KernelPath::Column });
    let values = match path {
        KernelPath::Multiplier => {
            let m = mult.ok_or_else(|| Error::Config("operator has no multiplier".into()))?;
            SampledField::<f64>::from_continuum(*grid, |z| {
                let t = psi.eval(z) * psi_t.eval(z);
                if t == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                m(z) * t * Complex64::from_polar(1.0, -dot3(req.y, z))
            })
            .into_values()
        }
        KernelPath::Column => {
            let iy = grid.nearest_index(req.y);
            let mut delta = SampledField::<f64>::zeros(*grid);
            delta.values_mut()[iy] = Complex64::new(1.0 / grid.cell_volume(), 0.0);
            let a = apply_multiplier(&|z: [f64; 3]| Complex64::new(psi_t.eval(z), 0.0), &delta)?;
            let b = op.apply(&a)?;
            let c = apply_multiplier(&|z: [f64; 3]| Complex64::new(psi.eval(z), 0.0), &b)?;
            c.into_values()
        }
    };
    Ok(KernelSlice { request: *req, grid: *grid, values })
}

/// `Υ(t) = min(t, 1/t)`.
pub fn upsilon(t: f64) -> f64 {
    t.min(1.0 / t)
}

/// Samples for off-singularity and residual fits.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSpec {
    pub sigmas: Vec<f64>,
    pub omegas: Vec<[f64; 3]>,
    /// Directions `ν` relative to each `ω`: rotation angles in the `(e₁,e₂)` plane.
    pub nu_angles: Vec<f64>,
    pub ys: Vec<[f64; 3]>,
    /// Spatial offsets `|x − y|` sampled, on the torus.
    pub window: f64,
}

impl SampleSpec {
    /// Four octaves `σ,τ ∈ {2⁻³,…,2⁻⁶}`, `ω = e₁`, angular offsets up to `π/2`, `y = 0`.
    /// Resolved on `L = 8` from `M = 512` up.
    pub fn standard() -> Self {
        SampleSpec {
            sigmas: vec![0.125, 0.0625, 0.03125, 0.015625],
            omegas: vec![[1.0, 0.0, 0.0]],
            nu_angles: vec![0.0, 0.15, -0.3, 0.6, std::f64::consts::FRAC_PI_2],
            ys: vec![[0.0; 3]],
            window: f64::INFINITY,
        }
    }

    fn nus(&self, omega: [f64; 3]) -> Vec<[f64; 3]> {
        self.nu_angles
            .iter()
            .map(|&a| {
                let (s, c) = a.sin_cos();
                [c * omega[0] - s * omega[1], s * omega[0] + c * omega[1], omega[2]]
            })
            .collect()
    }
}

/// The sample attaining a fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorstSample {
    pub sigma: f64,
    pub tau: f64,
    pub x: [f64; 3],
    pub omega: [f64; 3],
    pub y: [f64; 3],
    pub nu: [f64; 3],
    pub kernel_abs: f64,
    pub weighted: f64,
}

/// Fitted off-singularity constant for a fixed decay order.
#[derive(Clone, Debug)]
pub struct OffSingReport {
    pub n: u32,
    pub c_fit: f64,
    /// Worst sample per `(σ, τ)` pair.
    pub worst: Vec<WorstSample>,
    pub grid_tag: String,
    /// `C_fit` at doubled resolution, when requested.
    pub refined_c_fit: Option<f64>,
}

impl OffSingReport {
    /// `C_fit` at doubled resolution within a factor 2.
    pub fn refinement_stable(&self) -> Option<bool> {
        self.refined_c_fit.map(|r| refinement_ok(self.c_fit, r))
    }
}

pub(crate) fn refinement_ok(a: f64, b: f64) -> bool {
    if a == 0.0 && b == 0.0 {
        return true;
    }
    a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0 && a / b <= 2.0 && b / a <= 2.0
}

/// A map used as `χ̂` in the fit.
pub type ContactFn<'a> = &'a dyn Fn(&CospherePoint) -> Result<CospherePoint>;

fn fit_on_grid(
    op: &Operator,
    w: &ProfilePair,
    v: &ProfilePair,
    grid: &GridSpec,
    n_order: u32,
    spec: &SampleSpec,
    chi: ContactFn<'_>,
) -> Result<(f64, Vec<WorstSample>)> {
    let n = grid.dim() as i32;
    let mut worst = Vec::new();
    let mut c_fit = 0.0f64;
    for &sigma in &spec.sigmas {
        for &tau in &spec.sigmas {
            let rho = sigma.min(tau);
            let ups = upsilon(sigma / tau).powi(-(n_order as i32));
            let mut best: Option<WorstSample> = None;
            for &omega in &spec.omegas {
                for nu in spec.nus(omega) {
                    for &y in &spec.ys {
                        let req = KernelRequest { sigma, tau, omega, nu, y };
                        let k = lifted_kernel(op, w, v, grid, &req, None)?;
                        let target = chi(&CospherePoint { x: y, omega: nu })?;
                        for (i, c) in k.values.iter().enumerate() {
                            let a = c.norm();
                            if a == 0.0 {
                                continue;
                            }
                            let x = grid.position(i);
                            if norm3(grid.min_image(x, y)) > spec.window {
                                continue;
                            }
                            let d2 = quasi_dist_sq_z(grid.min_image(x, target.x), omega, target.omega);
                            let val = a * rho.powi(n) * ups * (1.0 + d2 / rho).powi(n_order as i32);
                            if best.map(|b| val > b.weighted).unwrap_or(true) {
                                best = Some(WorstSample { sigma, tau, x, omega, y, nu, kernel_abs: a, weighted: val });
                            }
                        }
                    }
                }
            }
            if let Some(b) = best {
                c_fit = c_fit.max(b.weighted);
                worst.push(b);
            }
        }
    }
    Ok((c_fit, worst))
}

/// `C_fit = sup |K| ρⁿ Υ(σ/τ)^{−N} (1 + ρ^{−1} d̃((x,ω), χ̂(y,ν))²)^N` over the samples.
///
/// `chi` overrides the operator's induced contact map (used to fit against a wrong map).
#[allow(clippy::too_many_arguments)]
pub fn offsing_fit(
    op: &Operator,
    w: &ProfilePair,
    v: &ProfilePair,
    grid: &GridSpec,
    n_order: u32,
    spec: &SampleSpec,
    chi: Option<ContactFn<'_>>,
    refine: bool,
) -> Result<OffSingReport> {
    let own = |p: &CospherePoint| -> Result<CospherePoint> {
        match op.contact(p) {
            Some(r) => r,
            None => Ok(*p),
        }
    };
    let chi: ContactFn<'_> = chi.unwrap_or(&own);
    let (c_fit, worst) = fit_on_grid(op, w, v, grid, n_order, spec, chi)?;
    let refined_c_fit = if refine {
        Some(fit_on_grid(op, w, v, &grid.refined(), n_order, spec, chi)?.0)
    } else {
        None
    };
    Ok(OffSingReport { n: n_order, c_fit, worst, grid_tag: grid.tag(), refined_c_fit })
}

/// `sup |K_{σ,τ}| (1 + |x| + |y| + Υ(σ)^{−1} + Υ(τ)^{−1})^N` per `(σ, τ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualTable {
    pub orders: Vec<u32>,
    /// `(σ, τ, sup per order)`.
    pub rows: Vec<(f64, f64, Vec<f64>)>,
    pub grid_tag: String,
}

impl ResidualTable {
    /// `C_N`: the sup over all rows for each order.
    pub fn constants(&self) -> Vec<f64> {
        (0..self.orders.len()).map(|j| self.rows.iter().map(|r| r.2[j]).fold(0.0, f64::max)).collect()
    }

    /// Ratio of the row sup at the smallest `σ = τ` to the row sup at the largest `σ = τ`.
    pub fn growth(&self, order_index: usize) -> f64 {
        let diag: Vec<&(f64, f64, Vec<f64>)> = self.rows.iter().filter(|r| r.0 == r.1).collect();
        let small = diag.iter().min_by(|a, b| a.0.partial_cmp(&b.0).unwrap()).map(|r| r.2[order_index]).unwrap_or(0.0);
        let large = diag.iter().max_by(|a, b| a.0.partial_cmp(&b.0).unwrap()).map(|r| r.2[order_index]).unwrap_or(0.0);
        if large == 0.0 {
            if small == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            small / large
        }
    }
}

pub fn residual_check(
    op: &Operator,
    w: &ProfilePair,
    v: &ProfilePair,
    grid: &GridSpec,
    orders: &[u32],
    spec: &SampleSpec,
) -> Result<ResidualTable> {
    if orders.iter().any(|&n| n > 8) {
        return Err(Error::Config("decay orders above 8 are not supported".into()));
    }
    let mut rows = Vec::new();
    for &sigma in &spec.sigmas {
        for &tau in &spec.sigmas {
            let base = 1.0 / upsilon(sigma) + 1.0 / upsilon(tau);
            let mut sup = vec![0.0f64; orders.len()];
            for &omega in &spec.omegas {
                for nu in spec.nus(omega) {
                    for &y in &spec.ys {
                        let req = KernelRequest { sigma, tau, omega, nu, y };
                        let k = lifted_kernel(op, w, v, grid, &req, None)?;
                        for (i, c) in k.values.iter().enumerate() {
                            let a = c.norm();
                            if a == 0.0 {
                                continue;
                            }
                            let x = grid.position(i);
                            if norm3(grid.min_image(x, y)) > spec.window {
                                continue;
                            }
                            let wgt = 1.0 + norm3(x) + norm3(y) + base;
                            for (j, &n) in orders.iter().enumerate() {
                                sup[j] = sup[j].max(a * wgt.powi(n as i32));
                            }
                        }
                    }
                }
            }
            rows.push((sigma, tau, sup));
        }
    }
    Ok(ResidualTable { orders: orders.to_vec(), rows, grid_tag: grid.tag() })
}

/// Statistics of `‖W T W* F‖_{T^p} / ‖F‖_{T^p}` over a test set.
#[derive(Clone, Debug, PartialEq)]
pub struct TentBoundStats {
    pub p: f64,
    pub ratios: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

pub fn empirical_tent_bound(
    op: &Operator,
    plan: &TransformPlan<f64>,
    p: f64,
    test_set: &[PhaseSpaceField<f64>],
    family: Option<&BallFamily>,
) -> Result<TentBoundStats> {
    if test_set.is_empty() {
        return Err(Error::EmptySample("empty test set".into()));
    }
    let mut ratios = Vec::with_capacity(test_set.len());
    for big in test_set {
        let den = tent_norm(big, p, family)?;
        if den == 0.0 {
            continue;
        }
        let f = plan.synthesize(big)?;
        let g = op.apply(&f)?;
        let num = tent_norm(&plan.analyze(&g)?, p, family)?;
        ratios.push(num / den);
    }
    if ratios.is_empty() {
        return Err(Error::EmptySample("every test field has zero norm".into()));
    }
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(TentBoundStats { p, ratios, max, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::lp_norm;
    use crate::metric::bilipschitz_ratio;
    use crate::packets::Bump;

    fn bump_field(grid: GridSpec, k: [f64; 2], w: f64) -> SampledField<f64> {
        SampledField::from_fn(grid, |x| {
            Complex64::from_polar((-(x[0] * x[0] + x[1] * x[1]) / (2.0 * w * w)).exp(), k[0] * x[0] + k[1] * x[1])
        })
    }

    fn rel(a: &SampledField<f64>, b: &SampledField<f64>) -> f64 {
        let d = a.combine(Complex64::new(1.0, 0.0), b, Complex64::new(-1.0, 0.0)).unwrap();
        lp_norm(&d, 2.0) / lp_norm(b, 2.0)
    }

    #[test]
    fn identity_and_half_wave_paths() {
        let g = GridSpec::new(2, 32, 8.0).unwrap();
        let f = bump_field(g, [2.0, -1.0], 1.0);
        let Operator::Oio(id) = Operator::identity(2).unwrap() else { unreachable!() };
        assert!(rel(&apply_oio_direct(&id, &f).unwrap(), &f) < 1e-10);
        let Operator::Oio(hw) = Operator::half_wave(2, 1.0).unwrap() else { unreachable!() };
        let fast = apply_oio(&hw, &f).unwrap();
        let direct = apply_oio_direct(&hw, &f).unwrap();
        assert!(rel(&direct, &fast) < 1e-10);
        let p = ProfilePair::new(Bump::Standard, 2).unwrap();
        let m = |z: [f64; 3]| Complex64::from_polar(1.0 - p.step(norm3(z) / 0.5), norm3(z));
        assert!(rel(&apply_multiplier(&m, &f).unwrap(), &fast) < 1e-10);
    }

    #[test]
    fn pseudo_operator_matches_separable_form() {
        let g = GridSpec::new(2, 32, 8.0).unwrap();
        let p = ProfilePair::new(Bump::Standard, 2).unwrap();
        let op = Operator::pseudo(2).unwrap();
        for (k, w) in [([0.0, 0.0], 1.0), ([3.0, 1.0], 0.7), ([-2.0, 2.0], 1.4)] {
            let f = bump_field(g, k, w);
            let tf = op.apply(&f).unwrap();
            let chi = apply_multiplier(&|z: [f64; 3]| Complex64::new(1.0 - p.step(norm3(z) / 0.5), 0.0), &f).unwrap();
            let oracle = SampledField::from_fn(g, |x| {
                let i = g.nearest_index(x);
                f.values()[i] + 0.5 * x[0].sin() * chi.values()[i]
            });
            assert!(rel(&tf, &oracle) < 1e-10);
            assert!(lp_norm(&tf, 2.0) / lp_norm(&f, 2.0) <= 2.0);
        }
    }

    #[test]
    fn symbol_cutoff_and_phase_checks() {
        let p = ProfilePair::new(Bump::Standard, 2).unwrap();
        let s = SymbolFunction::new(SymbolKind::HighPass { eps: 0.25 }, p).unwrap();
        assert_eq!(s.cutoff, Some(0.25));
        for k in [0.0, 0.1, 0.2, 0.2499] {
            assert_eq!(s.eval([0.0; 3], [k, 0.0, 0.0]), 0.0);
        }
        assert_eq!(s.eval([0.0; 3], [1.0, 0.0, 0.0]), 1.0);
        for ph in [PhaseFunction::HalfWave { t: 1.0 }, PhaseFunction::Perturbed { t: 0.5, eps: 0.3 }] {
            assert!(ph.check(2, 200, 3).unwrap() > 0.0);
        }
    }

    #[test]
    fn contact_maps() {
        let Operator::Oio(id) = Operator::identity(2).unwrap() else { unreachable!() };
        let Operator::Oio(hw) = Operator::half_wave(2, 1.0).unwrap() else { unreachable!() };
        let p = CospherePoint::planar([0.3, -0.7], 1.1);
        assert_eq!(id.induced_contact(&p).unwrap(), p);
        let q = hw.induced_contact(&p).unwrap();
        for a in 0..2 {
            assert!((q.x[a] - (p.x[a] - p.omega[a])).abs() < 1e-15);
        }
        // Newton agrees with the closed form and solves the defining equation otherwise
        let mut gen = hw.clone();
        gen.phase = PhaseFunction::Perturbed { t: 1.0, eps: 0.0 };
        let qn = gen.induced_contact(&p).unwrap();
        assert!(norm3([qn.x[0] - q.x[0], qn.x[1] - q.x[1], 0.0]) < 1e-12);
        gen.phase = PhaseFunction::Perturbed { t: 1.0, eps: 0.4 };
        let r = gen.induced_contact(&p).unwrap();
        let back = gen.phase.grad_eta(r.x, p.omega);
        assert!(norm3([back[0] - p.x[0], back[1] - p.x[1], 0.0]) < 1e-12);
        assert!((norm3(r.omega) - 1.0).abs() < 1e-10);
        let map = |p: &CospherePoint| hw.induced_contact(p).ok();
        let (hi, lo) = bilipschitz_ratio(&map, 2, 20_000, 5).unwrap();
        assert!(hi <= 4.0 && lo >= 0.25, "{hi} {lo}");
    }

    #[test]
    fn kernel_paths_agree_and_adjoint_symmetry() {
        let g = GridSpec::new(2, 64, 8.0).unwrap();
        let p = ProfilePair::new(Bump::Standard, 2).unwrap();
        let q = ProfilePair::new(Bump::Logarithmic, 2).unwrap();
        let op = Operator::half_wave(2, 1.0).unwrap();
        let req = KernelRequest { sigma: 0.25, tau: 0.2, omega: [1.0, 0.0, 0.0], nu: [0.8, 0.6, 0.0], y: g.position(g.nearest_index([0.5, -1.0, 0.0])) };
        let a = lifted_kernel(&op, &p, &q, &g, &req, Some(KernelPath::Multiplier)).unwrap();
        let b = lifted_kernel(&op, &p, &q, &g, &req, Some(KernelPath::Column)).unwrap();
        let m = a.max_abs();
        assert!(m > 0.0);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).norm() < 1e-10 * m);
        }
        // K_{T*}((y,ν),(x,ω)) = conj K_T((x,ω),(y,ν))
        let adj = op.adjoint().unwrap();
        let x0 = g.nearest_index([1.0, 0.25, 0.0]);
        let swapped = KernelRequest { sigma: req.tau, tau: req.sigma, omega: req.nu, nu: req.omega, y: g.position(x0) };
        let c = lifted_kernel(&adj, &q, &p, &g, &swapped, None).unwrap();
        let iy = g.nearest_index(req.y);
        assert!((c.values[iy] - a.values[x0].conj()).norm() < 1e-10 * m);
    }

    #[test]
    fn identity_kernel_properties() {
        let g = GridSpec::new(2, 256, 16.0).unwrap();
        let p = ProfilePair::new(Bump::Standard, 2).unwrap();
        let op = Operator::identity(2).unwrap();
        let mut scaled = Vec::new();
        for s in [0.25, 0.125, 0.0625] {
            let req = KernelRequest { sigma: s, tau: s, omega: [1.0, 0.0, 0.0], nu: [1.0, 0.0, 0.0], y: [0.0; 3] };
            let k = lifted_kernel(&op, &p, &p, &g, &req, None).unwrap();
            assert_eq!(k.argmax(), g.nearest_index([0.0; 3]));
            scaled.push(k.max_abs() * s * s);
        }
        let hi = scaled.iter().cloned().fold(0.0, f64::max);
        let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi / lo < 2.0, "{scaled:?}");
        // disjoint radial supports
        let req = KernelRequest { sigma: 0.5, tau: 0.0625, omega: [1.0, 0.0, 0.0], nu: [1.0, 0.0, 0.0], y: [0.0; 3] };
        let k = lifted_kernel(&op, &p, &p, &g, &req, None).unwrap();
        assert!(k.values.iter().all(|c| *c == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn half_wave_kernel_peak() {
        let g = GridSpec::new(2, 256, 16.0).unwrap();
        let p = ProfilePair::new(Bump::Standard, 2).unwrap();
        let op = Operator::half_wave(2, 1.0).unwrap();
        for th in [0.0f64, 0.7, 2.0] {
            let om = [th.cos(), th.sin(), 0.0];
            let req = KernelRequest { sigma: 0.0625, tau: 0.0625, omega: om, nu: om, y: [0.0; 3] };
            let k = lifted_kernel(&op, &p, &p, &g, &req, None).unwrap();
            let peak = g.position(k.argmax());
            let expect = [-om[0], -om[1], 0.0];
            let d = g.min_image(peak, expect);
            assert!(norm3(d) <= 2.0 * g.spacing() * std::f64::consts::SQRT_2, "{peak:?}");
        }
    }

    #[test]
    fn zero_operator_residual() {
        let g = GridSpec::new(2, 64, 16.0).unwrap();
        let p = ProfilePair::new(Bump::Standard, 2).unwrap();
        let spec = SampleSpec { sigmas: vec![0.5, 0.25], ..SampleSpec::standard() };
        let t = residual_check(&Operator::Zero, &p, &p, &g, &[1, 2, 3], &spec).unwrap();
        assert!(t.constants().iter().all(|&c| c == 0.0));
        assert!(residual_check(&Operator::Zero, &p, &p, &g, &[9], &spec).is_err());
    }

    #[test]
    fn resolution_errors() {
        let g = GridSpec::new(2, 32, 8.0).unwrap();
        let p = ProfilePair::new(Bump::Standard, 2).unwrap();
        let req = KernelRequest { sigma: 0.01, tau: 0.25, omega: [1.0, 0.0, 0.0], nu: [1.0, 0.0, 0.0], y: [0.0; 3] };
        assert!(matches!(
            lifted_kernel(&Operator::identity(2).unwrap(), &p, &p, &g, &req, None),
            Err(Error::Resolution(_))
        ));
    }
}

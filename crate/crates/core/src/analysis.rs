//! Composite experiments: Sobolev embeddings and their sharpness, uniform bounds for
//! the wave group, and coherent molecules built from tent atoms.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::family::standard_family;
use crate::field::{dot3, lp_norm, norm3, sobolev_norm, to_spectrum, GridSpec, SampledField};
use crate::fio::{offsing_fit, Operator, SampleSpec};
use crate::metric::{linear_fit, quasi_dist_sq_z, shard_rng, CospherePoint, SphereGrid};
use crate::packets::{check_packet_resolution, packet_symbol, Bump, PacketIndex, ProfilePair};
use crate::tent::{make_atom, AtomShape, BallSpec};
use crate::transform::{HardyNormEngine, TransformPlan};

/// Type `(s, C)` and ball `B_{√τ}(y, ν)` of a coherent molecule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoleculeSpec {
    pub s: f64,
    pub c: f64,
    pub center: CospherePoint,
    pub tau: f64,
}

impl MoleculeSpec {
    pub fn new(s: f64, c: f64, center: CospherePoint, tau: f64, dim: usize) -> Result<Self> {
        if !(s > dim as f64 / 2.0) {
            return Err(Error::Config(format!("decay order {s} must exceed n/2")));
        }
        if !(tau > 0.0) {
            return Err(Error::Config(format!("scale {tau} must be positive")));
        }
        Ok(MoleculeSpec { s, c, center, tau })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoleculeReport {
    pub support_pass: bool,
    /// Largest `|f̂|` outside the admissible sector, relative to `max |f̂|`.
    pub support_leak: f64,
    /// `τⁿ ∫ (1+τ⁻¹|⟨ν,x−y⟩|)^{2s} (1+τ⁻¹|x−y|²)^{2s} |f|² dx`.
    pub decay_value: f64,
}

impl MoleculeReport {
    pub fn passes(&self, spec: &MoleculeSpec) -> bool {
        self.support_pass && self.decay_value <= spec.c
    }
}

const SUPPORT_TOL: f64 = 1e-9;

pub fn molecule_check(f: &SampledField<f64>, spec: &MoleculeSpec) -> MoleculeReport {
    let g = *f.grid();
    let n = g.dim() as i32;
    let fhat = to_spectrum(f).continuum_values();
    let nu = spec.center.omega;
    let mut peak = 0.0f64;
    let mut leak = 0.0f64;
    for (k, c) in fhat.iter().enumerate() {
        let a = c.norm();
        peak = peak.max(a);
        let z = g.frequency(k);
        let r = norm3(z);
        let inside = r >= 1.0 / spec.tau && {
            let u = [z[0] / r - nu[0], z[1] / r - nu[1], z[2] / r - nu[2]];
            norm3(u) <= spec.tau.sqrt()
        };
        if !inside {
            leak = leak.max(a);
        }
    }
    let support_leak = if peak == 0.0 { 0.0 } else { leak / peak };
    let t = spec.tau;
    let mut acc = 0.0;
    for (i, v) in f.values().iter().enumerate() {
        let a2 = v.norm_sqr();
        if a2 == 0.0 {
            continue;
        }
        let z = g.min_image(g.position(i), spec.center.x);
        acc += seam_mean(&g, z, |z| ((1.0 + dot3(nu, z).abs() / t) * (1.0 + dot3(z, z) / t)).powf(2.0 * spec.s)) * a2;
    }
    MoleculeReport {
        support_pass: support_leak < SUPPORT_TOL,
        support_leak,
        decay_value: t.powi(n) * acc * g.cell_volume(),
    }
}

/// Mean of `w` over the images of `z` on the seam `|z_a| = L/2`.
fn seam_mean(g: &GridSpec, z: [f64; 3], w: impl Fn([f64; 3]) -> f64) -> f64 {
    let half = 0.5 * g.extent();
    let tol = 1e-9 * g.spacing();
    let seam: Vec<usize> = (0..g.dim()).filter(|&a| (z[a].abs() - half).abs() < tol).collect();
    if seam.is_empty() {
        return w(z);
    }
    let combos = 1usize << seam.len();
    let mut acc = 0.0;
    for bits in 0..combos {
        let mut y = z;
        for (j, &a) in seam.iter().enumerate() {
            y[a] = if bits >> j & 1 == 0 { half } else { -half };
        }
        acc += w(y);
    }
    acc / combos as f64
}

/// `c₂` with `d̃ ≥ c₂ (|⟨ν,x−y⟩| + |x−y|² + |ω−ν|²)^{1/2}`, estimated on random pairs
/// and capped at 1.
pub fn estimate_c2(dim: usize, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::EmptySample("no samples".into()));
    }
    let mut rng = shard_rng(seed, 0xc2);
    let mut c2 = 1.0f64;
    for _ in 0..samples {
        let mut z = [0.0; 3];
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        for k in 0..dim {
            z[k] = rng.random_range(-3.0..3.0);
            a[k] = rng.random_range(-1.0..1.0);
            b[k] = rng.random_range(-1.0..1.0);
        }
        let (Ok(p), Ok(q)) = (CospherePoint::from_direction(z, a), CospherePoint::from_direction([0.0; 3], b)) else {
            continue;
        };
        let d2 = quasi_dist_sq_z(z, p.omega, q.omega);
        let dw = [p.omega[0] - q.omega[0], p.omega[1] - q.omega[1], p.omega[2] - q.omega[2]];
        let rhs = dot3(q.omega, z).abs() + dot3(z, z) + dot3(dw, dw);
        if rhs > 0.0 {
            c2 = c2.min((d2 / rhs).sqrt());
        }
    }
    Ok(c2)
}

/// Output of [`molecule_from_atom`].
#[derive(Clone, Debug)]
pub struct AtomMolecule {
    pub field: SampledField<f64>,
    pub spec: MoleculeSpec,
    pub report: MoleculeReport,
}

/// `W*` of the atom on `ball` (levels `σ < 1`), checked against the molecule ball
/// `B_{(2+1/c₂)√τ}(y,ν)` where `√τ` is the atom's radius.
pub fn molecule_from_atom(
    plan: &TransformPlan<f64>,
    ball: &BallSpec,
    shape: AtomShape,
    c2: f64,
    s: f64,
) -> Result<AtomMolecule> {
    if !(ball.radius > 0.0 && ball.radius <= 2.0) {
        return Err(Error::Config(format!("atom radius {} outside (0, 2]", ball.radius)));
    }
    if !(c2 > 0.0 && c2 <= 1.0) {
        return Err(Error::Config(format!("c2 = {c2} outside (0, 1]")));
    }
    let atom = make_atom::<f64>(*plan.grid(), plan.sphere().clone(), plan.sigmas().clone(), ball, shape)?.without_cap();
    let field = plan.synthesize(&atom)?;
    let tau = ((2.0 + 1.0 / c2) * ball.radius).powi(2);
    let spec = MoleculeSpec::new(s, f64::INFINITY, ball.center, tau, plan.grid().dim())?;
    let report = molecule_check(&field, &spec);
    Ok(AtomMolecule { field, spec, report })
}

/// `F⁻¹ψ_{ω,σ}` translated to `y`.
pub fn packet_field(grid: &GridSpec, profiles: &ProfilePair, center: &CospherePoint, sigma: f64) -> SampledField<f64> {
    let sym = packet_symbol(PacketIndex { omega: center.omega, sigma }, profiles);
    let y = center.x;
    SampledField::from_continuum(*grid, |z| Complex64::from_polar(sym.eval(z), -dot3(y, z)))
}

/// Least-squares growth exponent in `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentFit {
    pub name: String,
    pub exponent: f64,
    /// Two standard errors of the slope.
    pub half_width: f64,
    pub r2: f64,
    pub points: usize,
}

const MIN_SWEEP: usize = 4;
const MIN_R2: f64 = 0.95;

impl ExponentFit {
    pub fn new(name: &str, xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() < MIN_SWEEP || xs.len() != ys.len() {
            return Err(Error::Config(format!("exponent fits need at least {MIN_SWEEP} sweep points")));
        }
        if ys.iter().any(|y| !(*y > 0.0 && y.is_finite())) {
            return Err(Error::Domain(format!("non-positive value in sweep '{name}'")));
        }
        let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
        let (slope, r2) = linear_fit(&lx, &ly);
        let n = lx.len() as f64;
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
        let ssr: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
        let half_width = 2.0 * (ssr / (n - 2.0) / sxx).sqrt();
        Ok(ExponentFit { name: name.to_string(), exponent: slope, half_width, r2, points: xs.len() })
    }

    /// Drops the exponent of a fit that is not resolved.
    pub fn withhold_unresolved(self) -> Self {
        if self.resolved() {
            self
        } else {
            ExponentFit { exponent: f64::NAN, half_width: f64::NAN, ..self }
        }
    }

    /// The fit explains the sweep well enough to report an exponent.
    pub fn resolved(&self) -> bool {
        self.r2 >= MIN_R2
    }
}

/// Exponent within `[lo, hi]`; an unresolved fit is a resolution failure with no value.
pub fn exponent_check(fit: &ExponentFit, lo: f64, hi: f64) -> Check {
    let name = format!("{}-exponent", fit.name);
    if fit.resolved() {
        Check::within(&name, fit.exponent, lo, hi)
    } else {
        Check { name, value: f64::NAN, lo, hi, passed: false, resolution: true }
    }
}

/// Checked quantity with its admissible interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub passed: bool,
    /// Failure is a resolution problem rather than a tolerance miss.
    pub resolution: bool,
}

impl Check {
    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Check { name: name.to_string(), value, lo, hi, passed: value >= lo && value <= hi, resolution: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    ToleranceFailure,
    ResolutionFailure,
}

/// One measured value in a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub series: String,
    pub quantity: String,
    pub param: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub experiment: String,
    pub grid_tag: String,
    pub seed: u64,
    pub version: String,
    pub rows: Vec<Row>,
    pub fits: Vec<ExponentFit>,
    pub checks: Vec<Check>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, grid: &GridSpec, seed: u64) -> Self {
        ExperimentReport {
            experiment: experiment.to_string(),
            grid_tag: grid.tag(),
            seed,
            version: crate::VERSION.to_string(),
            rows: Vec::new(),
            fits: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn row(&mut self, series: &str, quantity: &str, param: f64, value: f64) {
        self.rows.push(Row { series: series.to_string(), quantity: quantity.to_string(), param, value });
    }

    pub fn value(&self, series: &str, quantity: &str) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.series == series && r.quantity == quantity).map(|r| (r.param, r.value)).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn fit(&self, name: &str) -> Option<&ExponentFit> {
        self.fits.iter().find(|f| f.name == name)
    }

    pub fn outcome(&self) -> Outcome {
        if self.checks.iter().any(|c| !c.passed && c.resolution) {
            Outcome::ResolutionFailure
        } else if self.checks.iter().any(|c| !c.passed) {
            Outcome::ToleranceFailure
        } else {
            Outcome::Pass
        }
    }

    /// CSV with header `experiment,grid,seed,version,record,series,quantity,param,value,lo,hi,r2,status`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["experiment", "grid", "seed", "version", "record", "series", "quantity", "param", "value", "lo", "hi", "r2", "status"])?;
        let seed = self.seed.to_string();
        let head = [self.experiment.as_str(), self.grid_tag.as_str(), seed.as_str(), self.version.as_str()];
        for r in &self.rows {
            let rec = ["row", &r.series, &r.quantity, &r.param.to_string(), &r.value.to_string(), "", "", "", ""];
            w.write_record(head.iter().copied().chain(rec))?;
        }
        for f in &self.fits {
            let status = if f.resolved() { "resolved" } else { "low-r2" };
            let (lo, hi) = (f.exponent - f.half_width, f.exponent + f.half_width);
            let rec = ["fit", &f.name, "exponent", &f.points.to_string(), &num(f.exponent), &num(lo), &num(hi), &f.r2.to_string(), status];
            w.write_record(head.iter().copied().chain(rec))?;
        }
        for c in &self.checks {
            let status = match (c.passed, c.resolution) {
                (true, _) => "pass",
                (false, true) => "resolution-failure",
                (false, false) => "fail",
            };
            let rec = ["check", &c.name, "", "", &num(c.value), &num(c.lo), &num(c.hi), "", status];
            w.write_record(head.iter().copied().chain(rec))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Blank for NaN, exponent form for huge bounds.
fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_finite() && v.abs() >= 1e15 {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// Shared plan parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanParams {
    pub extent: f64,
    pub m: usize,
    pub bump: Bump,
    pub directions: usize,
    pub delta: f64,
}

impl PlanParams {
    pub fn family_default() -> Self {
        PlanParams { extent: 16.0, m: 64, bump: Bump::Standard, directions: 32, delta: 0.1 }
    }

    pub fn sweep_default() -> Self {
        PlanParams { extent: 32.0, m: 256, bump: Bump::Standard, directions: 32, delta: 0.1 }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(2, self.m, self.extent)
    }

    pub fn plan(&self) -> Result<TransformPlan<f64>> {
        TransformPlan::standard(self.grid()?, self.bump, self.directions, self.delta)
    }

    fn from_config(cfg: &Config, prefix: &str, base: Self) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        let bump = match cfg.raw(&key("bump")) {
            Some(b) => Bump::parse(b)?,
            None => base.bump,
        };
        Ok(PlanParams {
            extent: cfg.get_or(&key("extent"), base.extent)?,
            m: cfg.get_or(&key("m"), base.m)?,
            bump,
            directions: cfg.get_or(&key("directions"), base.directions)?,
            delta: cfg.get_or(&key("delta"), base.delta)?,
        })
    }

    fn keys(prefix: &str) -> Vec<String> {
        ["extent", "m", "bump", "directions", "delta"].iter().map(|k| format!("{prefix}{k}")).collect()
    }
}

/// Test functions of the `λ`-sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepProfile {
    /// `F⁻¹ψ_{e₁,1/λ}`.
    Packet,
    /// `F⁻¹[Ψ(|ζ|/λ)]`, all directions at once.
    Radial,
}

impl SweepProfile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "packet" => Ok(SweepProfile::Packet),
            "radial" => Ok(SweepProfile::Radial),
            _ => Err(Error::Config(format!("unknown sweep profile '{s}'"))),
        }
    }
}

/// `f_λ` on `grid`; errors when the band `(λ/2, 2λ)` is not resolved.
pub fn sweep_function(grid: &GridSpec, profiles: &ProfilePair, profile: SweepProfile, lambda: f64) -> Result<SampledField<f64>> {
    check_packet_resolution(grid, 1.0 / lambda)?;
    Ok(match profile {
        SweepProfile::Packet => {
            let sym = packet_symbol(PacketIndex { omega: [1.0, 0.0, 0.0], sigma: 1.0 / lambda }, profiles);
            SampledField::from_continuum(*grid, |z| Complex64::new(sym.eval(z), 0.0))
        }
        SweepProfile::Radial => SampledField::from_continuum(*grid, |z| Complex64::new(profiles.psi(norm3(z) / lambda), 0.0)),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharpnessConfig {
    pub t: f64,
    pub plan: PlanParams,
    /// `λ = multiple · 2π/L`.
    pub multiples: Vec<f64>,
    pub profile: SweepProfile,
    pub seed: u64,
    pub r1_exponent: f64,
    pub tolerance: f64,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        SharpnessConfig {
            t: 1.0,
            plan: PlanParams::sweep_default(),
            multiples: vec![8.0, 16.0, 32.0, 64.0],
            profile: SweepProfile::Radial,
            seed: 0,
            r1_exponent: 0.5,
            tolerance: 0.15,
        }
    }
}

impl SharpnessConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let mut keys = PlanParams::keys("");
        keys.extend(["t", "multiples", "profile", "seed", "r1_exponent", "tolerance"].map(String::from));
        cfg.check_keys(&keys.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
        let d = Self::default();
        Ok(SharpnessConfig {
            t: cfg.get_or("t", d.t)?,
            plan: PlanParams::from_config(cfg, "", d.plan)?,
            multiples: cfg.list_or("multiples", &d.multiples)?,
            profile: cfg.raw("profile").map(SweepProfile::parse).transpose()?.unwrap_or(d.profile),
            seed: cfg.get_or("seed", d.seed)?,
            r1_exponent: cfg.get_or("r1_exponent", d.r1_exponent)?,
            tolerance: cfg.get_or("tolerance", d.tolerance)?,
        })
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.multiples.iter().map(|k| k * 2.0 * PI / self.plan.extent).collect()
    }
}

/// `r₁(λ) = ‖e^{it√−Δ} f_λ‖₁ / ‖f_λ‖₁` and `r₂(λ) = ‖e^{it√−Δ} f_λ‖_{H¹_FIO} / ‖f_λ‖_{H¹_FIO}`,
/// with growth exponents in `λ`.
pub fn sobolev_sharpness_experiment(cfg: &SharpnessConfig) -> Result<ExperimentReport> {
    if cfg.multiples.len() < MIN_SWEEP {
        return Err(Error::Config(format!("the sweep needs at least {MIN_SWEEP} values")));
    }
    let plan = cfg.plan.plan()?;
    let grid = *plan.grid();
    let mut report = ExperimentReport::new("sharpness", &grid, cfg.seed);
    let prop = Operator::propagator(2, cfg.t)?;
    let mut engine = HardyNormEngine::new(&plan);
    let lambdas = cfg.lambdas();
    let (mut r1, mut r2) = (Vec::new(), Vec::new());
    for &lam in &lambdas {
        let f = sweep_function(&grid, plan.profiles(), cfg.profile, lam)?;
        let u = prop.apply(&f)?;
        let a = lp_norm(&u, 1.0) / lp_norm(&f, 1.0);
        let b = engine.norms(&u, &[1.0])?[0].value / engine.norms(&f, &[1.0])?[0].value;
        report.row("r1", "ratio", lam, a);
        report.row("r2", "ratio", lam, b);
        r1.push(a);
        r2.push(b);
    }
    if cfg.t == 0.0 {
        let worst = r1.iter().chain(&r2).map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
        report.checks.push(Check::within("identity-ratios", worst, 0.0, 0.0));
        return Ok(report);
    }
    let f1 = ExponentFit::new("r1", &lambdas, &r1)?;
    let f2 = ExponentFit::new("r2", &lambdas, &r2)?;
    report.checks.push(exponent_check(&f1, cfg.r1_exponent - cfg.tolerance, cfg.r1_exponent + cfg.tolerance));
    report.checks.push(exponent_check(&f2, -cfg.tolerance, cfg.tolerance));
    report.fits.extend([f1, f2].into_iter().map(ExponentFit::withhold_unresolved));
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveUniformityConfig {
    pub plan: PlanParams,
    pub times: Vec<f64>,
    pub ps: Vec<f64>,
    pub seed: u64,
    /// Repeat the exponential ratios on the refined grid.
    pub refine: bool,
    /// Also measure `cos(t√−Δ)` and `sin(t√−Δ)`.
    pub variants: bool,
}

impl Default for WaveUniformityConfig {
    fn default() -> Self {
        WaveUniformityConfig {
            plan: PlanParams::family_default(),
            times: vec![-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0],
            ps: vec![1.0, 2.0, f64::INFINITY],
            seed: 1,
            refine: true,
            variants: true,
        }
    }
}

impl WaveUniformityConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let mut keys = PlanParams::keys("");
        keys.extend(["times", "ps", "seed", "refine", "variants"].map(String::from));
        cfg.check_keys(&keys.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
        let d = Self::default();
        Ok(WaveUniformityConfig {
            plan: PlanParams::from_config(cfg, "", d.plan)?,
            times: cfg.list_or("times", &d.times)?,
            ps: cfg.list_or("ps", &d.ps)?,
            seed: cfg.get_or("seed", d.seed)?,
            refine: cfg.get_or("refine", d.refine)?,
            variants: cfg.get_or("variants", d.variants)?,
        })
    }
}

fn p_label(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p}")
    }
}

/// Max over the family of `‖U f‖_{H^p_FIO}/‖f‖_{H^p_FIO}` per time, for each `U` in `ops`.
fn family_ratios(
    plan: &TransformPlan<f64>,
    seed: u64,
    ops: &[(f64, Operator)],
    ps: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let fam = standard_family(plan.grid(), plan.profiles(), seed)?;
    let mut engine = HardyNormEngine::new(plan);
    let mut out = vec![vec![0.0f64; ps.len()]; ops.len()];
    for f in &fam {
        let base = engine.norms(&f.field, ps)?;
        for (j, (_, op)) in ops.iter().enumerate() {
            let g = op.apply(&f.field)?;
            let h = engine.norms(&g, ps)?;
            for k in 0..ps.len() {
                out[j][k] = out[j][k].max(h[k].value / base[k].value);
            }
        }
    }
    Ok(out)
}

/// `cos(t√−Δ)` or `sin(t√−Δ)` as an operator on fields.
fn trig_propagator(t: f64, sine: bool) -> impl Fn(&SampledField<f64>) -> Result<SampledField<f64>> {
    move |f| {
        let a = Operator::propagator(2, t)?.apply(f)?;
        let b = Operator::propagator(2, -t)?.apply(f)?;
        let (ca, cb) = if sine {
            (Complex64::new(0.0, -0.5), Complex64::new(0.0, 0.5))
        } else {
            (Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0))
        };
        a.combine(ca, &b, cb)
    }
}

pub fn wave_uniformity_experiment(cfg: &WaveUniformityConfig) -> Result<ExperimentReport> {
    if cfg.times.len() < 8 {
        return Err(Error::Config("at least 8 time samples are required".into()));
    }
    let plan = cfg.plan.plan()?;
    let mut report = ExperimentReport::new("waveunif", plan.grid(), cfg.seed);
    let ops: Vec<(f64, Operator)> = cfg.times.iter().map(|&t| Ok((t, Operator::propagator(2, t)?))).collect::<Result<_>>()?;
    let ratios = family_ratios(&plan, cfg.seed, &ops, &cfg.ps)?;
    let mut cmax = vec![0.0f64; cfg.ps.len()];
    for (j, &(t, _)) in ops.iter().enumerate() {
        for (k, &p) in cfg.ps.iter().enumerate() {
            report.row(&format!("exp-p{}", p_label(p)), "max-ratio", t, ratios[j][k]);
            cmax[k] = cmax[k].max(ratios[j][k]);
        }
    }
    for (k, &p) in cfg.ps.iter().enumerate() {
        if p == 2.0 {
            report.checks.push(Check::within("p2-max-ratio", cmax[k], 0.995, 1.005));
        } else {
            report.checks.push(Check::within(&format!("p{}-max-ratio-finite", p_label(p)), cmax[k], 0.0, f64::MAX));
        }
    }
    if cfg.variants {
        let fam = standard_family(plan.grid(), plan.profiles(), cfg.seed)?;
        let mut engine = HardyNormEngine::new(&plan);
        let mut vmax = vec![0.0f64; cfg.ps.len()];
        let mut positive: Vec<f64> = cfg.times.iter().map(|t| t.abs()).collect();
        positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
        positive.dedup();
        for &t in &positive {
            for (name, sine) in [("cos", false), ("sin", true)] {
                let op = trig_propagator(t, sine);
                let mut m = vec![0.0f64; cfg.ps.len()];
                for f in &fam {
                    let base = engine.norms(&f.field, &cfg.ps)?;
                    let h = engine.norms(&op(&f.field)?, &cfg.ps)?;
                    for k in 0..cfg.ps.len() {
                        m[k] = m[k].max(h[k].value / base[k].value);
                    }
                }
                for (k, &p) in cfg.ps.iter().enumerate() {
                    report.row(&format!("{name}-p{}", p_label(p)), "max-ratio", t, m[k]);
                    vmax[k] = vmax[k].max(m[k]);
                }
            }
        }
        for (k, &p) in cfg.ps.iter().enumerate() {
            report.checks.push(Check::within(&format!("p{}-variants", p_label(p)), vmax[k], 0.0, cmax[k] + 1e-6));
        }
    }
    if cfg.refine {
        let fine = plan.refined()?;
        let ps: Vec<f64> = cfg.ps.iter().copied().filter(|&p| p == 1.0).collect();
        if !ps.is_empty() {
            let k = cfg.ps.iter().position(|&p| p == 1.0).unwrap();
            let r = family_ratios(&fine, cfg.seed, &ops, &ps)?;
            let mut fmax = 0.0f64;
            for (j, &(t, _)) in ops.iter().enumerate() {
                report.row("exp-p1-refined", "max-ratio", t, r[j][0]);
                fmax = fmax.max(r[j][0]);
            }
            let q = fmax / cmax[k];
            report.checks.push(Check::within("p1-refinement", q, 0.5, 2.0));
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedDirection {
    /// `‖f‖_{H^p_FIO} / ‖f‖_{W^{s(p),p}}`.
    Into,
    /// `‖f‖_{W^{−s(p),p}} / ‖f‖_{H^p_FIO}`.
    OutOf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingConfig {
    pub p: f64,
    pub directions: Vec<EmbedDirection>,
    pub plan: PlanParams,
    pub seed: u64,
    /// `λ`-sweep; skipped when empty.
    pub sweep: Vec<f64>,
    pub sweep_plan: PlanParams,
    pub sweep_profile: SweepProfile,
    /// `ε` of the lossy embedding `H¹_FIO ⊆ W^{−s(1)−ε,1}`.
    pub eps: f64,
    pub tolerance: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            p: 1.0,
            directions: vec![EmbedDirection::Into, EmbedDirection::OutOf],
            plan: PlanParams::family_default(),
            seed: 1,
            sweep: vec![8.0, 16.0, 32.0, 64.0],
            sweep_plan: PlanParams::sweep_default(),
            sweep_profile: SweepProfile::Radial,
            eps: 0.1,
            tolerance: 0.15,
        }
    }
}

impl EmbeddingConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let mut keys = PlanParams::keys("");
        keys.extend(PlanParams::keys("sweep_"));
        keys.extend(["p", "directions", "seed", "sweep", "sweep_profile", "eps", "tolerance"].map(String::from));
        cfg.check_keys(&keys.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
        let d = Self::default();
        let directions = match cfg.raw("directions") {
            None => d.directions.clone(),
            Some(v) => v
                .split(',')
                .map(|s| match s.trim() {
                    "into" => Ok(EmbedDirection::Into),
                    "outof" => Ok(EmbedDirection::OutOf),
                    o => Err(Error::Config(format!("unknown direction '{o}'"))),
                })
                .collect::<Result<_>>()?,
        };
        let p = match cfg.raw("p") {
            Some(v) => parse_exponent(v)?,
            None => d.p,
        };
        Ok(EmbeddingConfig {
            p,
            directions,
            plan: PlanParams::from_config(cfg, "", d.plan)?,
            seed: cfg.get_or("seed", d.seed)?,
            sweep: cfg.list_or("sweep", &d.sweep)?,
            sweep_plan: PlanParams::from_config(cfg, "sweep_", d.sweep_plan)?,
            sweep_profile: cfg.raw("sweep_profile").map(SweepProfile::parse).transpose()?.unwrap_or(d.sweep_profile),
            eps: cfg.get_or("eps", d.eps)?,
            tolerance: cfg.get_or("tolerance", d.tolerance)?,
        })
    }
}

/// Parses `1`, `4/3`, `2`, `4`, `inf` and plain decimals.
pub fn parse_exponent(s: &str) -> Result<f64> {
    if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.trim().parse().map_err(|_| Error::Config(format!("bad exponent '{s}'")))?;
        let b: f64 = b.trim().parse().map_err(|_| Error::Config(format!("bad exponent '{s}'")))?;
        return Ok(a / b);
    }
    crate::config::parse_f64(s.trim(), "p")
}

/// `s(p) = (n−1)/2 · |1/p − 1/2|`.
pub fn sobolev_shift(p: f64, dim: usize) -> f64 {
    (dim as f64 - 1.0) / 2.0 * (1.0 / p - 0.5).abs()
}

pub fn embedding_experiment(cfg: &EmbeddingConfig) -> Result<ExperimentReport> {
    let allowed = [1.0, 4.0 / 3.0, 2.0, 4.0];
    if !allowed.iter().any(|a| (a - cfg.p).abs() < 1e-12) {
        return Err(Error::Config(format!("exponent {} not in {{1, 4/3, 2, 4}}", cfg.p)));
    }
    let p = cfg.p;
    let sp = sobolev_shift(p, 2);
    let plan = cfg.plan.plan()?;
    let mut report = ExperimentReport::new("embed", plan.grid(), cfg.seed);
    let fam = standard_family(plan.grid(), plan.profiles(), cfg.seed)?;
    let mut engine = HardyNormEngine::new(&plan);
    let (mut into, mut outof) = (Vec::new(), Vec::new());
    for (i, f) in fam.iter().enumerate() {
        let h = engine.norms(&f.field, &[p])?[0].value;
        for d in &cfg.directions {
            match d {
                EmbedDirection::Into => {
                    let r = h / sobolev_norm(&f.field, sp, p);
                    report.row("family-into", "ratio", i as f64, r);
                    into.push(r);
                }
                EmbedDirection::OutOf => {
                    let r = sobolev_norm(&f.field, -sp, p) / h;
                    report.row("family-outof", "ratio", i as f64, r);
                    outof.push(r);
                }
            }
        }
    }
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    for (name, v) in [("into", &into), ("outof", &outof)] {
        if v.is_empty() {
            continue;
        }
        if p == 2.0 {
            report.checks.push(Check::within(&format!("{name}-max"), max(v), 0.995, 1.005));
            report.checks.push(Check::within(&format!("{name}-min"), min(v), 0.995, 1.005));
        } else {
            report.checks.push(Check::within(&format!("{name}-max-finite"), max(v), 0.0, f64::MAX));
        }
    }
    if !cfg.sweep.is_empty() && p != 2.0 {
        let splan = cfg.sweep_plan.plan()?;
        let mut se = HardyNormEngine::new(&splan);
        let lambdas: Vec<f64> = cfg.sweep.iter().map(|k| k * 2.0 * PI / cfg.sweep_plan.extent).collect();
        let (mut a, mut b, mut loss) = (Vec::new(), Vec::new(), Vec::new());
        for &lam in &lambdas {
            let f = sweep_function(splan.grid(), splan.profiles(), cfg.sweep_profile, lam)?;
            let h = se.norms(&f, &[p])?[0].value;
            let ra = h / sobolev_norm(&f, sp, p);
            let rb = sobolev_norm(&f, -sp, p) / h;
            report.row("sweep-into", "ratio", lam, ra);
            report.row("sweep-outof", "ratio", lam, rb);
            a.push(ra);
            b.push(rb);
            if p == 1.0 {
                let rl = sobolev_norm(&f, -sp - cfg.eps, p) / h;
                report.row("sweep-loss", "ratio", lam, rl);
                loss.push(rl);
            }
        }
        for (name, v) in [("sweep-into", &a), ("sweep-outof", &b)] {
            let wanted = match name {
                "sweep-into" => cfg.directions.contains(&EmbedDirection::Into),
                _ => cfg.directions.contains(&EmbedDirection::OutOf),
            };
            if !wanted {
                continue;
            }
            let fit = ExponentFit::new(name, &lambdas, v)?;
            report.checks.push(Check::within(&format!("{}-exponent", fit.name), fit.exponent, f64::NEG_INFINITY, cfg.tolerance));
            report.fits.push(fit);
        }
        if !loss.is_empty() {
            let fit = ExponentFit::new("sweep-loss", &lambdas, &loss)?;
            report.checks.push(Check::within(&format!("{}-exponent", fit.name), fit.exponent, f64::NEG_INFINITY, cfg.tolerance));
            report.fits.push(fit);
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoleculeConfig {
    pub plan: PlanParams,
    pub balls: usize,
    pub radius_range: [f64; 2],
    /// Frozen lower equivalence constant of the quasi-metric.
    pub c2: f64,
    pub s: f64,
    pub seed: u64,
    pub refine: bool,
    /// Packets checked on their own grid.
    pub packet_sigmas: Vec<f64>,
    pub packet_plan: PlanParams,
}

impl Default for MoleculeConfig {
    fn default() -> Self {
        MoleculeConfig {
            plan: PlanParams { extent: 8.0, m: 128, bump: Bump::Standard, directions: 32, delta: 0.1 },
            balls: 10,
            radius_range: [0.2, 1.0],
            c2: 1.0,
            s: 1.5,
            seed: 3,
            refine: true,
            packet_sigmas: vec![0.125, 0.0625, 0.03125, 0.015625],
            packet_plan: PlanParams { extent: 8.0, m: 512, bump: Bump::Standard, directions: 32, delta: 0.1 },
        }
    }
}

impl MoleculeConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let mut keys = PlanParams::keys("");
        keys.extend(PlanParams::keys("packet_"));
        keys.extend(["balls", "radius_min", "radius_max", "c2", "s", "seed", "refine", "packet_sigmas"].map(String::from));
        cfg.check_keys(&keys.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
        let d = Self::default();
        Ok(MoleculeConfig {
            plan: PlanParams::from_config(cfg, "", d.plan)?,
            balls: cfg.get_or("balls", d.balls)?,
            radius_range: [cfg.get_or("radius_min", d.radius_range[0])?, cfg.get_or("radius_max", d.radius_range[1])?],
            c2: cfg.get_or("c2", d.c2)?,
            s: cfg.get_or("s", d.s)?,
            seed: cfg.get_or("seed", d.seed)?,
            refine: cfg.get_or("refine", d.refine)?,
            packet_sigmas: cfg.list_or("packet_sigmas", &d.packet_sigmas)?,
            packet_plan: PlanParams::from_config(cfg, "packet_", d.packet_plan)?,
        })
    }
}

/// Random balls centred at lattice points of `[−2, 2]²` with directions from `sphere`, so
/// that every tent contains the cells above its centre.
pub fn random_balls(grid: &GridSpec, sphere: &SphereGrid, count: usize, range: [f64; 2], seed: u64) -> Vec<BallSpec> {
    let mut rng = shard_rng(seed, 0xba11);
    let reach = (2.0 / grid.spacing()).floor() as i64;
    (0..count)
        .map(|_| {
            let k = [rng.random_range(-reach..=reach), rng.random_range(-reach..=reach)];
            let x = [k[0] as f64 * grid.spacing(), k[1] as f64 * grid.spacing(), 0.0];
            let d = rng.random_range(0..sphere.len());
            let radius = rng.random_range(range[0]..range[1]);
            BallSpec { center: CospherePoint { x: grid.position(grid.nearest_index(x)), omega: sphere.direction(d) }, radius }
        })
        .collect()
}

pub fn molecule_experiment(cfg: &MoleculeConfig) -> Result<ExperimentReport> {
    let plan = cfg.plan.plan()?;
    let mut report = ExperimentReport::new("molecule", plan.grid(), cfg.seed);
    let balls = random_balls(plan.grid(), plan.sphere(), cfg.balls, cfg.radius_range, cfg.seed);
    let fine = if cfg.refine { Some(plan.refined()?) } else { None };
    let mut engine = HardyNormEngine::new(&plan);
    let (mut all_support, mut cmax, mut cmax_fine, mut hmax) = (true, 0.0f64, 0.0f64, 0.0f64);
    for (i, b) in balls.iter().enumerate() {
        let m = molecule_from_atom(&plan, b, AtomShape::Flat, cfg.c2, cfg.s)?;
        let h = engine.norms(&m.field, &[1.0])?[0].value;
        report.row("atom", "radius", i as f64, b.radius);
        report.row("atom", "support-leak", i as f64, m.report.support_leak);
        report.row("atom", "decay", i as f64, m.report.decay_value);
        report.row("atom", "hardy1", i as f64, h);
        all_support &= m.report.support_pass;
        cmax = cmax.max(m.report.decay_value);
        hmax = hmax.max(h);
        if let Some(fp) = &fine {
            let mf = molecule_from_atom(fp, b, AtomShape::Flat, cfg.c2, cfg.s)?;
            report.row("atom-refined", "decay", i as f64, mf.report.decay_value);
            all_support &= mf.report.support_pass;
            cmax_fine = cmax_fine.max(mf.report.decay_value);
        }
    }
    report.checks.push(Check::within("atoms-support", if all_support { 1.0 } else { 0.0 }, 1.0, 1.0));
    report.checks.push(Check::within("atoms-decay-finite", cmax, 0.0, f64::MAX));
    report.checks.push(Check::within("atoms-hardy1-finite", hmax, 0.0, f64::MAX));
    if cfg.refine {
        report.checks.push(Check::within("atoms-refinement", cmax_fine / cmax, 0.5, 2.0));
    }
    if !cfg.packet_sigmas.is_empty() {
        let pg = cfg.packet_plan.grid()?;
        let profiles = ProfilePair::new(cfg.packet_plan.bump, 2)?;
        let center = CospherePoint::planar([0.0, 0.0], 0.0);
        let (mut lo, mut hi, mut ok) = (f64::INFINITY, 0.0f64, true);
        for &sigma in &cfg.packet_sigmas {
            check_packet_resolution(&pg, sigma)?;
            let f = packet_field(&pg, &profiles, &center, sigma);
            let spec = MoleculeSpec::new(cfg.s, f64::INFINITY, center, 4.0 * sigma, 2)?;
            let r = molecule_check(&f, &spec);
            report.row("packet", "decay", sigma, r.decay_value);
            ok &= r.support_pass;
            lo = lo.min(r.decay_value);
            hi = hi.max(r.decay_value);
        }
        report.checks.push(Check::within("packets-support", if ok { 1.0 } else { 0.0 }, 1.0, 1.0));
        report.checks.push(Check::within("packets-decay-spread", hi / lo, 1.0, 2.0));
    }
    Ok(report)
}

/// Off-singularity fit of a named operator on the standard kernel samples.
#[derive(Clone, Debug, PartialEq)]
pub struct OffSingConfig {
    pub op: String,
    pub t: f64,
    pub n: u32,
    pub extent: f64,
    pub m: usize,
    pub refine: bool,
    /// Also fit against `χ̂ = id` and require the correct map to win by `contrast`.
    pub wrong_map: bool,
    pub contrast: f64,
}

impl Default for OffSingConfig {
    fn default() -> Self {
        OffSingConfig { op: "halfwave".into(), t: 1.0, n: 3, extent: 8.0, m: 512, refine: true, wrong_map: true, contrast: 10.0 }
    }
}

pub fn offsing_experiment(cfg: &OffSingConfig) -> Result<ExperimentReport> {
    let grid = GridSpec::new(2, cfg.m, cfg.extent)?;
    let op = Operator::by_name(&cfg.op, 2, cfg.t)?;
    let prof = ProfilePair::new(Bump::Standard, 2)?;
    let spec = SampleSpec::standard();
    let mut report = ExperimentReport::new("offsing", &grid, 0);
    let fit = offsing_fit(&op, &prof, &prof, &grid, cfg.n, &spec, None, cfg.refine)?;
    report.row(&cfg.op, "c_fit", cfg.n as f64, fit.c_fit);
    for w in &fit.worst {
        report.row(&format!("worst-tau{}", w.tau), "weighted", w.sigma, w.weighted);
    }
    report.checks.push(Check::within("c_fit-finite", fit.c_fit, 0.0, f64::MAX));
    if let Some(r) = fit.refined_c_fit {
        report.row(&cfg.op, "c_fit-refined", cfg.n as f64, r);
        let mut c = Check::within("c_fit-refinement", if fit.c_fit > 0.0 { r / fit.c_fit } else { 1.0 }, 0.5, 2.0);
        c.passed = fit.refinement_stable().unwrap_or(true);
        c.resolution = true;
        report.checks.push(c);
    }
    let moves = op.contact(&CospherePoint::planar([0.0, 0.0], 0.0)).is_some() && cfg.t != 0.0 && cfg.op != "pseudo";
    if cfg.wrong_map && moves {
        let id = |p: &CospherePoint| -> Result<CospherePoint> { Ok(*p) };
        let wrong = offsing_fit(&op, &prof, &prof, &grid, cfg.n, &spec, Some(&id), false)?;
        report.row(&cfg.op, "c_fit-wrong-map", cfg.n as f64, wrong.c_fit);
        report.checks.push(Check::within("wrong-map-contrast", wrong.c_fit / fit.c_fit, cfg.contrast, f64::INFINITY));
    }
    Ok(report)
}

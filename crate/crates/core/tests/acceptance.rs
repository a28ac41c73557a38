//! Acceptance suite. Runs without the libtest harness so that every criterion
//! prints one line, pass or fail, and the process fails if any criterion does.

use std::f64::consts::{PI, SQRT_2};
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;

use fio_hardy::analysis::{
    molecule_experiment, offsing_experiment, sobolev_sharpness_experiment, wave_uniformity_experiment, ExperimentReport,
    MoleculeConfig, OffSingConfig, Outcome, PlanParams, SharpnessConfig, WaveUniformityConfig,
};
use fio_hardy::family::standard_family;
use fio_hardy::field::{lp_norm, norm3, GridSpec};
use fio_hardy::fio::{lifted_kernel, residual_check, KernelRequest, Operator, SampleSpec};
use fio_hardy::metric::{ball_volume, loglog_fit, quasi_dist, reduced_dist, shard_rng};
use fio_hardy::packets::{plancherel_defect, resolved_frequency};
use fio_hardy::tent::tent_norm;
use fio_hardy::transform::{lowfreq_equivalence, HardyNormEngine, HardyNormReport};
use fio_hardy::{Bump, CospherePoint, PhaseSpaceField, ProfilePair, Result, SigmaGrid, SphereGrid, TransformPlan};

const FAMILY_SEED: u64 = 1;

// packet normalization
const PLANCHEREL_TOL: f64 = 5e-3;
const LP_IDENTITY_TOL: f64 = 1e-10;
// isometry and inversion
const ISOMETRY_BAND: (f64, f64) = (0.995, 1.005);
const INVERSION_TOL: f64 = 5e-3;
// volume growth
const SMALL_SLOPE: (f64, f64) = (4.0, 0.2);
const LARGE_SLOPE: (f64, f64) = (2.0, 0.3);
const VOLUME_TRIALS: usize = 200_000;
const METRIC_PAIRS: usize = 100_000;
// tent spaces
const T2_TOL: f64 = 1e-10;
// Hardy p = 2
const P2_BAND: (f64, f64) = (0.995, 1.005);
// kernels
const KERNEL_CELLS: f64 = 2.0;
const RESIDUAL_ORDERS: [u32; 7] = [0, 1, 2, 3, 4, 5, 6];
const RESIDUAL_CONTRAST: f64 = 10.0;
// equivalence constants
const INDEPENDENCE_C: f64 = 10.0;
const REFINEMENT_FACTOR: f64 = 2.0;

struct Outcomes {
    lines: Vec<(usize, &'static str, bool, String)>,
}

impl Outcomes {
    fn run(&mut self, id: usize, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) {
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let status = if ok { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {name:<28} {status}  {detail}  [{:.1} s]", start.elapsed().as_secs_f64());
        self.lines.push((id, name, ok, detail));
    }
}

fn within(v: f64, band: (f64, f64)) -> bool {
    v >= band.0 && v <= band.1
}

fn min_max(v: impl IntoIterator<Item = f64>) -> (f64, f64) {
    v.into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

/// Smallest `C` with all ratios in `[1/C, C]`.
fn equivalence_constant(ratios: &[f64]) -> f64 {
    ratios.iter().map(|&r| r.max(1.0 / r)).fold(1.0, f64::max)
}

fn refinement_stable(a: f64, b: f64) -> bool {
    a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0 && a / b <= REFINEMENT_FACTOR && b / a <= REFINEMENT_FACTOR
}

fn check_summary(r: &ExperimentReport) -> String {
    r.checks.iter().map(|c| format!("{}={:.4}", c.name, c.value)).collect::<Vec<_>>().join(" ")
}

/// Norms of the whole family on the base plan, the second profile pair and the refined plan.
struct FamilyData {
    l2: Vec<f64>,
    lift_ratio: Vec<f64>,
    inversion: Vec<f64>,
    standard: Vec<Vec<HardyNormReport>>,
    logarithmic: Vec<Vec<HardyNormReport>>,
    refined: Vec<Vec<HardyNormReport>>,
    lowfreq: Vec<f64>,
    lowfreq_refined: Vec<f64>,
}

fn lowfreq_ratio(plan: &TransformPlan, f: &fio_hardy::SampledField) -> Result<f64> {
    let prof = plan.profiles();
    let q = |z: [f64; 3]| Complex64::new(prof.low_cap(norm3(z)), 0.0);
    Ok(lowfreq_equivalence(plan, f, &q)?.ratio)
}

fn family_data() -> Result<FamilyData> {
    let params = PlanParams::family_default();
    let plan = params.plan()?;
    let log_plan = PlanParams { bump: Bump::Logarithmic, ..params }.plan()?;
    let fine = plan.refined()?;
    let fam = standard_family(plan.grid(), plan.profiles(), FAMILY_SEED)?;
    let fam_fine = standard_family(fine.grid(), fine.profiles(), FAMILY_SEED)?;
    let all = [1.0, 2.0, f64::INFINITY];
    let (mut es, mut el, mut ef) = (HardyNormEngine::new(&plan), HardyNormEngine::new(&log_plan), HardyNormEngine::new(&fine));
    let mut d = FamilyData {
        l2: vec![],
        lift_ratio: vec![],
        inversion: vec![],
        standard: vec![],
        logarithmic: vec![],
        refined: vec![],
        lowfreq: vec![],
        lowfreq_refined: vec![],
    };
    for (f, g) in fam.iter().zip(&fam_fine) {
        let l2 = lp_norm(&f.field, 2.0);
        let w = plan.analyze(&f.field)?;
        let back = plan.synthesize(&w)?;
        let diff = back.combine(Complex64::new(1.0, 0.0), &f.field, Complex64::new(-1.0, 0.0))?;
        d.l2.push(l2);
        d.lift_ratio.push(w.l2_norm() / l2);
        d.inversion.push(lp_norm(&diff, 2.0) / l2);
        d.standard.push(es.norms(&f.field, &all)?);
        d.logarithmic.push(el.norms(&f.field, &all)?);
        d.refined.push(ef.norms(&g.field, &[1.0, 2.0])?);
        d.lowfreq.push(lowfreq_ratio(&plan, &f.field)?);
        d.lowfreq_refined.push(lowfreq_ratio(&fine, &g.field)?);
    }
    Ok(d)
}

fn packet_normalization() -> Result<(bool, String)> {
    let grid = GridSpec::new(2, 128, 16.0)?;
    let profiles = ProfilePair::new(Bump::Standard, 2)?;
    let sphere = SphereGrid::circle(64)?;
    let sigmas = SigmaGrid::for_grid(&grid, 0.1)?;
    let mut rng = shard_rng(11, 0);
    let band = grid.max_frequency().min(resolved_frequency(&sphere));
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(0.1..band);
        let a: f64 = rng.random_range(0.0..2.0 * PI);
        worst = worst.max(plancherel_defect([k * a.cos(), k * a.sin(), 0.0], &profiles, &sphere, &sigmas)?);
    }
    // ∫ Ψ(σk)² dσ/σ by the trapezoid rule in log σ; the integrand is smooth and compactly supported
    let mut lp = 0.0f64;
    for bump in [Bump::Standard, Bump::Logarithmic] {
        let p = ProfilePair::new(bump, 2)?;
        for &k in &[0.7, 1.0, 3.3, 40.0] {
            let h = 1e-3;
            let (mut s, mut u) = (0.0, (0.25f64 / k).ln());
            while u < (4.0f64 / k).ln() {
                s += p.psi(u.exp() * k).powi(2);
                u += h;
            }
            lp = lp.max((s * h - 1.0).abs());
        }
    }
    Ok((worst < PLANCHEREL_TOL && lp < LP_IDENTITY_TOL, format!("max defect {worst:.2e} on |ζ| <= {band:.2}, LP identity {lp:.2e}")))
}

fn isometry(d: &FamilyData) -> Result<(bool, String)> {
    let (lo, hi) = min_max(d.lift_ratio.iter().copied());
    let inv = d.inversion.iter().copied().fold(0.0, f64::max);
    Ok((
        within(lo, ISOMETRY_BAND) && within(hi, ISOMETRY_BAND) && inv < INVERSION_TOL,
        format!("lift/L2 in [{lo:.5}, {hi:.5}], inversion {inv:.2e}"),
    ))
}

fn volume_and_metric() -> Result<(bool, String)> {
    let slope = |taus: &[f64]| -> Result<f64> {
        let vols: Vec<f64> = taus.iter().map(|&t| ball_volume(2, t, VOLUME_TRIALS, 5).map(|v| v.0)).collect::<Result<_>>()?;
        Ok(loglog_fit(taus, &vols).0)
    };
    let small = slope(&[0.05, 0.1, 0.2, 0.4])?;
    let large = slope(&[2.0, 3.0, 4.0, 6.0, 8.0])?;
    let far = slope(&[16.0, 32.0, 64.0])?;
    let mut rng = shard_rng(12, 0);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..METRIC_PAIRS {
        let mut pt = || CospherePoint::planar([rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)], rng.random_range(0.0..2.0 * PI));
        let (p, q) = (pt(), pt());
        let r = reduced_dist(&p, &q);
        if r == 0.0 {
            continue;
        }
        let t = quasi_dist(&p, &q) / r;
        lo = lo.min(t);
        hi = hi.max(t);
    }
    let ok = (small - SMALL_SLOPE.0).abs() <= SMALL_SLOPE.1
        && (large - LARGE_SLOPE.0).abs() <= LARGE_SLOPE.1
        && lo >= 1.0
        && hi <= SQRT_2 + 1e-9;
    Ok((ok, format!("slopes {small:.3} on [0.05, 0.4], {large:.3} on [2, 8], {far:.3} on [16, 64]; ratio in [{lo:.6}, {hi:.6}]")))
}

fn t2_identity() -> Result<(bool, String)> {
    let grid = GridSpec::new(2, 16, 4.0)?;
    let sphere = SphereGrid::circle(16)?;
    let sigmas = SigmaGrid::for_grid(&grid, 0.25)?;
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let f = PhaseSpaceField::random(grid, sphere.clone(), sigmas.clone(), 0.4, seed);
        let l2 = f.l2_norm();
        if l2 == 0.0 {
            continue;
        }
        worst = worst.max((tent_norm(&f, 2.0, None)? - l2).abs() / l2);
    }
    Ok((worst < T2_TOL, format!("max relative defect {worst:.2e}")))
}

fn hardy_p2(d: &FamilyData) -> Result<(bool, String)> {
    let (lo, hi) = min_max(d.standard.iter().zip(&d.l2).map(|(r, l2)| r[1].value / l2));
    Ok((within(lo, P2_BAND) && within(hi, P2_BAND), format!("H2/L2 in [{lo:.5}, {hi:.5}]")))
}

fn identity_offsing() -> Result<(bool, String)> {
    let cfg = OffSingConfig { op: "identity".into(), wrong_map: false, ..OffSingConfig::default() };
    let r = offsing_experiment(&cfg)?;
    // radially disjoint (σ = 1/2 against τ = 1/16) and angularly disjoint (ν = −ω) packets
    let grid = GridSpec::new(2, 512, 16.0)?;
    let prof = ProfilePair::new(Bump::Standard, 2)?;
    let op = Operator::identity(2)?;
    let e1 = [1.0, 0.0, 0.0];
    let radial = KernelRequest { sigma: 0.5, tau: 0.0625, omega: e1, nu: e1, y: [0.3, -0.2, 0.0] };
    let angular = KernelRequest { sigma: 0.0625, tau: 0.0625, omega: e1, nu: [-1.0, 0.0, 0.0], y: [0.0; 3] };
    let k1 = lifted_kernel(&op, &prof, &prof, &grid, &radial, None)?.max_abs();
    let k2 = lifted_kernel(&op, &prof, &prof, &grid, &angular, None)?.max_abs();
    let ok = r.outcome() == Outcome::Pass && k1 == 0.0 && k2 == 0.0;
    Ok((ok, format!("{}; disjoint kernels max {k1:e}, {k2:e}", check_summary(&r))))
}

fn halfwave_offsing() -> Result<(bool, String)> {
    let r = offsing_experiment(&OffSingConfig::default())?;
    let t = 1.0;
    let grid = GridSpec::new(2, 512, 8.0)?;
    let prof = ProfilePair::new(Bump::Standard, 2)?;
    let op = Operator::half_wave(2, t)?;
    let (y, nu) = ([0.5, 0.25, 0.0], [0.6, 0.8, 0.0]);
    let req = KernelRequest { sigma: 0.0625, tau: 0.0625, omega: nu, nu, y };
    let k = lifted_kernel(&op, &prof, &prof, &grid, &req, None)?;
    let target = op.contact(&CospherePoint { x: y, omega: nu }).expect("half-wave has a contact map")?;
    let peak = grid.position(k.argmax());
    let off = norm3(grid.min_image(peak, target.x)) / grid.spacing();
    let moved = norm3(grid.min_image(target.x, y));
    let ok = r.outcome() == Outcome::Pass && off <= KERNEL_CELLS && (moved - t).abs() < 1e-12;
    Ok((
        ok,
        format!(
            "{}; peak ({:.3}, {:.3}) vs chi ({:.3}, {:.3}), {off:.2} cells",
            check_summary(&r),
            peak[0],
            peak[1],
            target.x[0],
            target.x[1]
        ),
    ))
}

fn residual_class() -> Result<(bool, String)> {
    let grid = GridSpec::new(2, 512, 8.0)?;
    let prof = ProfilePair::new(Bump::Standard, 2)?;
    let spec = SampleSpec::standard();
    let smooth = Operator::smoothing();
    let wave = Operator::half_wave(2, 1.0)?;
    let s = residual_check(&smooth, &prof, &prof, &grid, &RESIDUAL_ORDERS, &spec)?;
    let s2 = residual_check(&smooth, &prof, &prof, &grid.refined(), &RESIDUAL_ORDERS, &spec)?;
    let h = residual_check(&wave, &prof, &prof, &grid, &RESIDUAL_ORDERS, &spec)?;
    let (cs, cs2, ch) = (s.constants(), s2.constants(), h.constants());
    let finite = cs.iter().all(|c| c.is_finite() && *c > 0.0);
    let stable = cs.iter().zip(&cs2).all(|(a, b)| refinement_stable(*a, *b));
    let worst_refine = cs.iter().zip(&cs2).map(|(a, b)| (a / b).max(b / a)).fold(1.0, f64::max);
    // the half-wave table must fail both ways: larger constants and growth as σ, τ → 0
    let contrast = ch.iter().zip(&cs).map(|(a, b)| a / b).fold(f64::INFINITY, f64::min);
    let growth_gap = (0..RESIDUAL_ORDERS.len())
        .map(|j| h.growth(j) / s.growth(j).max(1.0))
        .fold(f64::INFINITY, f64::min);
    let ok = finite && stable && contrast >= RESIDUAL_CONTRAST && growth_gap >= RESIDUAL_CONTRAST;
    Ok((
        ok,
        format!(
            "smoothing C_6 {:.3e} (refined {:.3e}, worst factor {worst_refine:.3}); half-wave/smoothing >= {contrast:.2e}, growth gap >= {growth_gap:.1}",
            cs[6], cs2[6]
        ),
    ))
}

fn wave_uniformity() -> Result<(bool, String)> {
    let cfg = WaveUniformityConfig { ps: vec![1.0, 2.0], variants: false, ..WaveUniformityConfig::default() };
    let r = wave_uniformity_experiment(&cfg)?;
    Ok((r.outcome() == Outcome::Pass, check_summary(&r)))
}

fn sharpness() -> Result<(bool, String)> {
    let r = sobolev_sharpness_experiment(&SharpnessConfig::default())?;
    let fits: Vec<String> = r.fits.iter().map(|f| format!("{} R2={:.3}", f.name, f.r2)).collect();
    Ok((r.outcome() == Outcome::Pass, format!("{}; {}", check_summary(&r), fits.join(", "))))
}

fn independence(d: &FamilyData) -> Result<(bool, String)> {
    let mut parts = Vec::new();
    let mut worst = 1.0f64;
    for (k, label) in ["1", "2", "inf"].iter().enumerate() {
        let ratios: Vec<f64> = d.standard.iter().zip(&d.logarithmic).map(|(a, b)| a[k].value / b[k].value).collect();
        let c = equivalence_constant(&ratios);
        worst = worst.max(c);
        parts.push(format!("p={label} C={c:.3}"));
    }
    Ok((worst <= INDEPENDENCE_C, parts.join(", ")))
}

fn alternative_norm(d: &FamilyData) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..2 {
        let c = |rows: &[Vec<HardyNormReport>]| equivalence_constant(&rows.iter().map(|r| r[k].value / r[k].alt_value).collect::<Vec<_>>());
        let (a, b) = (c(&d.standard), c(&d.refined));
        ok &= refinement_stable(a, b);
        parts.push(format!("p={} C={a:.3} refined {b:.3}", k + 1));
    }
    Ok((ok, parts.join(", ")))
}

fn molecules() -> Result<(bool, String)> {
    let r = molecule_experiment(&MoleculeConfig::default())?;
    Ok((r.outcome() == Outcome::Pass, check_summary(&r)))
}

fn low_frequency(d: &FamilyData) -> Result<(bool, String)> {
    let (a, b) = (equivalence_constant(&d.lowfreq), equivalence_constant(&d.lowfreq_refined));
    let (lo, hi) = min_max(d.lowfreq.iter().copied());
    Ok((refinement_stable(a, b), format!("ratios in [{lo:.3}, {hi:.3}], C={a:.3} refined {b:.3}")))
}

fn need(f: Option<&FamilyData>) -> Result<&FamilyData> {
    f.ok_or_else(|| fio_hardy::Error::EmptySample("family norms unavailable".into()))
}

fn main() {
    let mut out = Outcomes { lines: Vec::new() };
    let start = Instant::now();
    let family = family_data();
    if let Err(e) = &family {
        println!("family norms failed: {e}");
    }
    let fam = family.as_ref().ok();
    out.run(1, "packet normalization", packet_normalization);
    out.run(2, "isometry and inversion", || isometry(need(fam)?));
    out.run(3, "metric and doubling", volume_and_metric);
    out.run(4, "T2 equals l2", t2_identity);
    out.run(5, "Hardy p=2", || hardy_p2(need(fam)?));
    out.run(6, "identity off-singularity", identity_offsing);
    out.run(7, "half-wave off-singularity", halfwave_offsing);
    out.run(8, "residual class", residual_class);
    out.run(9, "propagator boundedness", wave_uniformity);
    out.run(10, "sharpness exponents", sharpness);
    out.run(11, "norm independence", || independence(need(fam)?));
    out.run(12, "alternative norm", || alternative_norm(need(fam)?));
    out.run(13, "molecules", molecules);
    out.run(14, "low-frequency equivalence", || low_frequency(need(fam)?));
    let failed: Vec<usize> = out.lines.iter().filter(|l| !l.2).map(|l| l.0).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.0} s",
        out.lines.len() - failed.len(),
        out.lines.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

//! The wave packet transform, its adjoint, and the Hardy norms built on it.

use num_complex::{Complex, Complex64};

use crate::error::{Error, Result};
use crate::field::{cast_c, lp_norm, multiplier_table, norm3, to_c64, Fft, GridSpec, Multiplier, SampledField};
use crate::metric::{Level, SigmaGrid, SphereGrid};
use crate::packets::{cap_scale, packet_symbol, Bump, PacketIndex, ProfilePair};
use crate::tent::{BallEngine, BallFamily, CosphereFunction, LevelEnergies, LusinAccumulator, PhaseSpaceField};
use crate::Real;

/// Nonzero entries of one packet symbol on the frequency lattice.
#[derive(Clone, Debug, Default)]
struct SparseSymbol {
    idx: Vec<u32>,
    val: Vec<f64>,
}

/// Grids, profiles and cached packet symbols for one transform.
#[derive(Clone)]
pub struct TransformPlan<T: Real> {
    grid: GridSpec,
    sphere: SphereGrid,
    sigmas: SigmaGrid,
    profiles: ProfilePair,
    fft: Fft<T>,
    /// `packets[level][dir]`, `None` where the symbol vanishes on the lattice.
    packets: Vec<Vec<Option<SparseSymbol>>>,
    /// `V(S^{n−1})^{−1/2} r(ζ)`.
    cap: Vec<f64>,
}

impl<T: Real> std::fmt::Debug for TransformPlan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformPlan")
            .field("grid", &self.grid)
            .field("directions", &self.sphere.len())
            .field("levels", &self.sigmas.level_count())
            .field("bump", &self.profiles.bump().name())
            .finish()
    }
}

impl<T: Real> TransformPlan<T> {
    pub fn new(grid: GridSpec, sphere: SphereGrid, sigmas: SigmaGrid, profiles: ProfilePair) -> Result<Self> {
        if sphere.dim() != grid.dim() || profiles.dim() != grid.dim() {
            return Err(Error::Shape(format!(
                "grid of dimension {}, sphere of dimension {}, profiles of dimension {}",
                grid.dim(),
                sphere.dim(),
                profiles.dim()
            )));
        }
        let freqs: Vec<[f64; 3]> = (0..grid.len()).map(|i| grid.frequency(i)).collect();
        let mut packets = Vec::with_capacity(sigmas.len());
        for &sigma in sigmas.levels() {
            let lo = 0.5 / sigma;
            let hi = 2.0 / sigma;
            let annulus: Vec<u32> = (0..grid.len() as u32)
                .filter(|&i| {
                    let k = norm3(freqs[i as usize]);
                    k > lo && k < hi
                })
                .collect();
            let c = profiles.c_sigma(sigma);
            let row = (0..sphere.len())
                .map(|d| {
                    let sym = crate::packets::PacketSymbol::with_c(
                        PacketIndex { omega: sphere.direction(d), sigma },
                        &profiles,
                        c,
                    );
                    let mut s = SparseSymbol::default();
                    for &i in &annulus {
                        let v = sym.eval(freqs[i as usize]);
                        if v != 0.0 {
                            s.idx.push(i);
                            s.val.push(v);
                        }
                    }
                    if s.idx.is_empty() {
                        None
                    } else {
                        Some(s)
                    }
                })
                .collect();
            packets.push(row);
        }
        let cs = cap_scale(grid.dim());
        let cap = freqs.iter().map(|z| cs * profiles.r(norm3(*z))).collect();
        Ok(TransformPlan { grid, sphere, sigmas, profiles, fft: Fft::new(grid), packets, cap })
    }

    /// Plan on `grid` with `a` directions (circle or sphere), levels down to the lattice
    /// corner frequency with log step `delta`.
    pub fn standard(grid: GridSpec, bump: Bump, a: usize, delta: f64) -> Result<Self> {
        let sphere = SphereGrid::for_dim(grid.dim(), a)?;
        let sigmas = SigmaGrid::for_grid(&grid, delta)?;
        Self::new(grid, sphere, sigmas, ProfilePair::new(bump, grid.dim())?)
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

    pub fn profiles(&self) -> &ProfilePair {
        &self.profiles
    }

    pub fn fft(&self) -> &Fft<T> {
        &self.fft
    }

    /// Same plan with another profile pair.
    pub fn with_profiles(&self, profiles: ProfilePair) -> Result<Self> {
        Self::new(self.grid, self.sphere.clone(), self.sigmas.clone(), profiles)
    }

    /// Same profiles on the refined spatial grid, same directions and levels.
    pub fn refined(&self) -> Result<Self> {
        Self::new(self.grid.refined(), self.sphere.clone(), self.sigmas.clone(), self.profiles.clone())
    }

    pub fn same_grids<U: Real>(&self, other: &TransformPlan<U>) -> bool {
        self.grid == other.grid && self.sphere == other.sphere && self.sigmas == other.sigmas
    }

    /// Cached symbol value `ψ_{ω_d,σ_l}` at a lattice frequency (0 outside the cache).
    pub fn packet_value(&self, level: usize, dir: usize, freq: usize) -> f64 {
        if level >= self.sigmas.len() {
            return self.cap[freq];
        }
        match &self.packets[level][dir] {
            None => 0.0,
            Some(s) => match s.idx.binary_search(&(freq as u32)) {
                Ok(k) => s.val[k],
                Err(_) => 0.0,
            },
        }
    }

    fn check_field(&self, f: &SampledField<T>) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(Error::Shape(format!("field on {} but plan on {}", f.grid().tag(), self.grid.tag())));
        }
        Ok(())
    }

    fn spectrum(&self, f: &SampledField<T>) -> Vec<Complex<T>> {
        let mut v = f.values().to_vec();
        self.fft.forward(&mut v);
        v
    }

    /// Direction slices of one level from the spectrum of `f`.
    fn level_slices(&self, spec: &[Complex<T>], level: usize) -> Vec<Option<Vec<Complex<T>>>> {
        let a = self.sphere.len();
        let n = self.grid.len();
        let zero = Complex::new(T::zero(), T::zero());
        if level == self.sigmas.len() {
            let mut v: Vec<Complex<T>> = spec.iter().zip(&self.cap).map(|(c, r)| *c * T::from_f64(*r).unwrap()).collect();
            self.fft.inverse(&mut v);
            if v.iter().all(|c| *c == zero) {
                return vec![None; a];
            }
            return vec![Some(v); a];
        }
        self.packets[level]
            .iter()
            .map(|s| {
                let s = s.as_ref()?;
                let mut buf = vec![zero; n];
                let mut any = false;
                for (&i, &v) in s.idx.iter().zip(&s.val) {
                    let c = spec[i as usize];
                    if c != zero {
                        any = true;
                        buf[i as usize] = c * T::from_f64(v).unwrap();
                    }
                }
                if !any {
                    return None;
                }
                self.fft.inverse(&mut buf);
                Some(buf)
            })
            .collect()
    }

    /// Calls `visit(level index, level, slices)` for every level in ascending `σ`, cap last.
    pub fn for_each_level<V>(&self, f: &SampledField<T>, mut visit: V) -> Result<()>
    where
        V: FnMut(usize, Level, &[Option<Vec<Complex<T>>>]) -> Result<()>,
    {
        self.check_field(f)?;
        let spec = self.spectrum(f);
        for (l, lv) in self.sigmas.all().into_iter().enumerate() {
            let slices = self.level_slices(&spec, l);
            visit(l, lv, &slices)?;
        }
        Ok(())
    }

    /// `W f`.
    pub fn analyze(&self, f: &SampledField<T>) -> Result<PhaseSpaceField<T>> {
        let mut out = PhaseSpaceField::zeros(self.grid, self.sphere.clone(), self.sigmas.clone());
        self.for_each_level(f, |l, _, slices| {
            for (d, s) in slices.iter().enumerate() {
                out.set_slice(l, d, s.clone())?;
            }
            Ok(())
        })?;
        Ok(out)
    }

    /// Weighted `ℓ²` norm of `W f`, without storing `W f`.
    pub fn lift_l2_norm(&self, f: &SampledField<T>) -> Result<f64> {
        let mut e = 0.0;
        self.for_each_level(f, |_, lv, slices| {
            for (d, s) in slices.iter().enumerate() {
                if let Some(s) = s {
                    let m: f64 = s.iter().map(|c| to_c64(*c).norm_sqr()).sum();
                    e += m * lv.weight * self.sphere.weight(d);
                }
            }
            Ok(())
        })?;
        Ok((e * self.grid.cell_volume()).sqrt())
    }

    /// `W* F`, the adjoint for the weighted inner products.
    pub fn synthesize(&self, big_f: &PhaseSpaceField<T>) -> Result<SampledField<T>> {
        if *big_f.grid() != self.grid || *big_f.sphere() != self.sphere || *big_f.sigmas() != self.sigmas {
            return Err(Error::Shape("phase-space field does not live on the plan's grids".into()));
        }
        let n = self.grid.len();
        let zero = Complex::new(T::zero(), T::zero());
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        let levels = self.sigmas.all();
        for (l, lv) in levels.iter().enumerate() {
            for d in 0..self.sphere.len() {
                let Some(s) = big_f.slice(l, d) else { continue };
                let w = lv.weight * self.sphere.weight(d);
                if lv.cap {
                    let mut buf = s.to_vec();
                    self.fft.forward(&mut buf);
                    for i in 0..n {
                        acc[i] += to_c64(buf[i]) * (w * self.cap[i]);
                    }
                    continue;
                }
                let Some(sym) = &self.packets[l][d] else { continue };
                let mut buf = s.to_vec();
                if buf.iter().all(|c| *c == zero) {
                    continue;
                }
                self.fft.forward(&mut buf);
                for (&i, &v) in sym.idx.iter().zip(&sym.val) {
                    acc[i as usize] += to_c64(buf[i as usize]) * (w * v);
                }
            }
        }
        let mut out: Vec<Complex<T>> = acc.into_iter().map(cast_c).collect();
        self.fft.inverse(&mut out);
        SampledField::new(self.grid, out)
    }

    /// `q(D) f` with the fixed low-frequency cap `q`: 1 on `|ζ| ≤ 2`, 0 on `|ζ| ≥ 4`.
    pub fn low_cap_field(&self, f: &SampledField<T>) -> Result<SampledField<T>> {
        self.check_field(f)?;
        let p = &self.profiles;
        let mut spec = self.spectrum(f);
        for (i, c) in spec.iter_mut().enumerate() {
            *c = *c * T::from_f64(p.low_cap(norm3(self.grid.frequency(i)))).unwrap();
        }
        self.fft.inverse(&mut spec);
        SampledField::new(self.grid, spec)
    }
}

/// `H^p_FIO` norm and its companions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HardyNormReport {
    pub p: f64,
    /// `‖W f‖_{T^p}`.
    pub value: f64,
    /// `‖S f‖_{L^p} + ‖q(D) f‖_{L^p}` (with `Q f` in place of `S f` at `p = ∞`).
    pub alt_value: f64,
    /// `‖q(D) f‖_{L^p}`.
    pub lowfreq: f64,
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p >= 1.0) {
        return Err(Error::Config(format!("exponent {p} outside [1, ∞]")));
    }
    Ok(())
}

/// Reusable state for repeated Hardy norms on one plan.
pub struct HardyNormEngine<'a, T: Real> {
    plan: &'a TransformPlan<T>,
    balls: BallEngine,
    family: Option<BallFamily>,
}

impl<'a, T: Real> HardyNormEngine<'a, T> {
    pub fn new(plan: &'a TransformPlan<T>) -> Self {
        HardyNormEngine { plan, balls: BallEngine::new(plan.grid, plan.sphere.clone()), family: None }
    }

    /// Uses `family` for the `p = ∞` suprema instead of the standard family.
    pub fn with_family(mut self, family: BallFamily) -> Self {
        self.family = Some(family);
        self
    }

    pub fn plan(&self) -> &TransformPlan<T> {
        self.plan
    }

    /// All requested exponents from one pass over the levels.
    pub fn norms(&mut self, f: &SampledField<T>, ps: &[f64]) -> Result<Vec<HardyNormReport>> {
        for &p in ps {
            check_exponent(p)?;
        }
        let plan = self.plan;
        let need_sup = ps.iter().any(|p| p.is_infinite());
        let need_lusin = ps.iter().any(|p| p.is_finite());
        let mut acc = LusinAccumulator::new(&self.balls);
        let mut energies = LevelEnergies::new(plan.grid, plan.sphere.clone());
        plan.for_each_level(f, |_, lv, slices| {
            if need_lusin {
                acc.add_level(lv, slices)?;
            }
            if need_sup {
                energies.add_level(lv, slices);
            }
            Ok(())
        })?;
        let (full, packets): (Option<CosphereFunction>, Option<CosphereFunction>) =
            if need_lusin { (Some(acc.lusin()), Some(acc.lusin_packets())) } else { (None, None) };
        let (sup_full, sup_packets) = if need_sup {
            if self.family.is_none() {
                self.family = Some(BallFamily::standard(&plan.grid, &plan.sphere, &plan.sigmas));
            }
            let fam = self.family.as_ref().unwrap();
            let e = energies.tent_energies(fam, true);
            let q = energies.tent_energies(fam, false);
            (e.into_iter().fold(0.0, f64::max), q.into_iter().fold(0.0, f64::max))
        } else {
            (0.0, 0.0)
        };
        let low = plan.low_cap_field(f)?;
        Ok(ps
            .iter()
            .map(|&p| {
                let lowfreq = lp_norm(&low, p);
                let (value, s) = if p.is_infinite() {
                    (sup_full, sup_packets)
                } else {
                    (full.as_ref().unwrap().lp_norm(p), packets.as_ref().unwrap().lp_norm(p))
                };
                HardyNormReport { p, value, alt_value: s + lowfreq, lowfreq }
            })
            .collect())
    }
}

/// `‖f‖_{H^p_FIO} = ‖W f‖_{T^p}` with the alternative norm and the low-frequency part.
pub fn hardy_norm<T: Real>(plan: &TransformPlan<T>, f: &SampledField<T>, p: f64) -> Result<HardyNormReport> {
    Ok(hardy_norms(plan, f, &[p])?[0])
}

pub fn hardy_norms<T: Real>(plan: &TransformPlan<T>, f: &SampledField<T>, ps: &[f64]) -> Result<Vec<HardyNormReport>> {
    HardyNormEngine::new(plan).norms(f, ps)
}

/// Ratio of the Hardy norms of `f` under two plans on the same grids.
pub fn norm_independence<T: Real>(f: &SampledField<T>, plan_a: &TransformPlan<T>, plan_b: &TransformPlan<T>, p: f64) -> Result<f64> {
    if !plan_a.same_grids(plan_b) {
        return Err(Error::Shape("plans live on different grids".into()));
    }
    let a = hardy_norm(plan_a, f, p)?.value;
    let b = hardy_norm(plan_b, f, p)?.value;
    if a == b {
        return Ok(1.0);
    }
    Ok(a / b)
}

/// Both sides of the low-frequency comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowFreqReport {
    /// `T¹` norm of `1_{[1,e]}(σ) q(D) f(x)`.
    pub tent_side: f64,
    /// `‖q(D) f‖_{L¹}`.
    pub l1_side: f64,
    /// `tent_side / l1_side` (1 when both vanish).
    pub ratio: f64,
}

/// Compares `‖1_{[1,e]}(σ) q(D)f‖_{T¹}` with `‖q(D) f‖_{L¹}`.
pub fn lowfreq_equivalence<T: Real, Q: Multiplier + ?Sized>(
    plan: &TransformPlan<T>,
    f: &SampledField<T>,
    q: &Q,
) -> Result<LowFreqReport> {
    plan.check_field(f)?;
    let table = multiplier_table(&plan.grid, q)?;
    let qf = crate::field::apply_table(&plan.fft, &table, f);
    let l1_side = lp_norm(&qf, 1.0);
    let mut lift = PhaseSpaceField::zeros(plan.grid, plan.sphere.clone(), plan.sigmas.clone());
    let cap = plan.sigmas.len();
    if l1_side > 0.0 {
        for d in 0..plan.sphere.len() {
            lift.set_slice(cap, d, Some(qf.values().to_vec()))?;
        }
    }
    let engine = BallEngine::new(plan.grid, plan.sphere.clone());
    let tent_side = crate::tent::lusin_with(&engine, &lift)?.lp_norm(1.0);
    let ratio = if tent_side == 0.0 && l1_side == 0.0 { 1.0 } else { tent_side / l1_side };
    Ok(LowFreqReport { tent_side, l1_side, ratio })
}

/// Single packet symbol as a multiplier (used by tests and experiments).
pub fn packet_multiplier(profiles: &ProfilePair, omega: [f64; 3], sigma: f64) -> impl Fn([f64; 3]) -> Complex64 + '_ {
    let sym = packet_symbol(PacketIndex { omega, sigma }, profiles);
    move |z| Complex64::new(sym.eval(z), 0.0)
}

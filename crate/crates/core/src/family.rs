//! The fixed 30-function test family: packets, modulated Gaussians and seeded
//! random band-limited fields.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{dot3, norm3, GridSpec, SampledField};
use crate::metric::shard_rng;
use crate::packets::{packet_symbol, PacketIndex, ProfilePair};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyKind {
    Packet,
    Gaussian,
    Random,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Packet => "packet",
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Random => "random",
        }
    }
}

/// One member of the family, with its continuum description.
#[derive(Clone, Debug, PartialEq)]
pub enum Member {
    /// `F⁻¹ψ_{ω,σ}` translated to `center`.
    Packet { sigma: f64, theta: f64, center: [f64; 2] },
    /// `e^{−|x−c|²/(2w²)} e^{ik·x}`.
    Gaussian { k: [f64; 2], width: f64, center: [f64; 2] },
    /// Sum of random Gaussian wavelets with frequencies in `|k| ≤ kmax`.
    Random { seed: u64, kmax: f64, terms: usize },
}

#[derive(Clone, Debug)]
pub struct TestFunction {
    pub id: String,
    pub kind: FamilyKind,
    pub member: Member,
    pub field: SampledField<f64>,
}

/// Ten packets with `σ ∈ [1/4, 0.9]`, ten Gaussians with `|k| ≤ 5` and widths in
/// `[0.7, 1.1]`, ten random fields. Needs `n = 2`, `L ≥ 16` and Nyquist at least 8;
/// Gaussians and random fields are below `1e−8` of their peak on the boundary at `L = 16`.
pub fn members(seed: u64) -> Vec<Member> {
    let mut out = Vec::with_capacity(30);
    let mut rng = shard_rng(seed, 0xfa);
    for i in 0..10 {
        let sigma = 0.25 * (0.9f64 / 0.25).powf(i as f64 / 9.0);
        let theta = 2.0 * std::f64::consts::PI * (i as f64 * 0.618_033_988_75).fract();
        let center = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        out.push(Member::Packet { sigma, theta, center });
    }
    for i in 0..10 {
        let r = 5.0 * i as f64 / 9.0;
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let width = 0.7 + 0.4 * ((i * 7) % 10) as f64 / 9.0;
        let center = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        out.push(Member::Gaussian { k: [r * a.cos(), r * a.sin()], width, center });
    }
    for i in 0..10 {
        out.push(Member::Random { seed: seed.wrapping_mul(1000).wrapping_add(i), kmax: 2.0 + 0.3 * i as f64, terms: 6 });
    }
    out
}

fn gaussian(x: [f64; 3], k: [f64; 2], width: f64, c: [f64; 2]) -> Complex64 {
    let d = [x[0] - c[0], x[1] - c[1]];
    let env = (-(d[0] * d[0] + d[1] * d[1]) / (2.0 * width * width)).exp();
    Complex64::from_polar(env, k[0] * x[0] + k[1] * x[1])
}

/// Samples one member on `grid`.
pub fn sample(member: &Member, grid: &GridSpec, profiles: &ProfilePair) -> Result<SampledField<f64>> {
    if grid.dim() != 2 {
        return Err(Error::Config("the test family is two-dimensional".into()));
    }
    Ok(match *member {
        Member::Packet { sigma, theta, center } => {
            let sym = packet_symbol(PacketIndex { omega: [theta.cos(), theta.sin(), 0.0], sigma }, profiles);
            let c = [center[0], center[1], 0.0];
            SampledField::from_continuum(*grid, |z| Complex64::from_polar(sym.eval(z), -dot3(c, z)))
        }
        Member::Gaussian { k, width, center } => SampledField::from_fn(*grid, |x| gaussian(x, k, width, center)),
        Member::Random { seed, kmax, terms } => {
            let mut rng = shard_rng(seed, 0x7a);
            let mut parts = Vec::with_capacity(terms);
            for _ in 0..terms {
                let r = kmax * rng.random::<f64>().sqrt();
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let w: f64 = rng.random_range(0.8..1.1);
                let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let amp = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                parts.push((amp, [r * a.cos(), r * a.sin()], w, c));
            }
            SampledField::from_fn(*grid, |x| parts.iter().map(|&(amp, k, w, c)| amp * gaussian(x, k, w, c)).sum())
        }
    })
}

/// The 30-function family on `grid`, ids `packet-0`…`random-9`.
pub fn standard_family(grid: &GridSpec, profiles: &ProfilePair, seed: u64) -> Result<Vec<TestFunction>> {
    let mut counts = [0usize; 3];
    members(seed)
        .into_iter()
        .map(|m| {
            let kind = match m {
                Member::Packet { .. } => FamilyKind::Packet,
                Member::Gaussian { .. } => FamilyKind::Gaussian,
                Member::Random { .. } => FamilyKind::Random,
            };
            let c = &mut counts[kind as usize];
            let id = format!("{}-{}", kind.name(), *c);
            *c += 1;
            let field = sample(&m, grid, profiles)?;
            Ok(TestFunction { id, kind, member: m, field })
        })
        .collect()
}

/// Largest `|f|` on the outer boundary of the torus, relative to `max |f|`.
pub fn boundary_level(f: &SampledField<f64>) -> f64 {
    let g = f.grid();
    let edge = 0.5 * g.extent() - g.spacing() * 0.5;
    let mut peak = 0.0f64;
    let mut rim = 0.0f64;
    for (i, v) in f.values().iter().enumerate() {
        let x = g.position(i);
        let a = v.norm();
        peak = peak.max(a);
        if x[0].abs() >= edge || x[1].abs() >= edge || norm3(x) >= edge {
            rim = rim.max(a);
        }
    }
    if peak == 0.0 {
        0.0
    } else {
        rim / peak
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packets::Bump;

    #[test]
    fn family_shape_and_determinism() {
        let g = GridSpec::new(2, 64, 16.0).unwrap();
        let p = ProfilePair::new(Bump::Standard, 2).unwrap();
        let a = standard_family(&g, &p, 7).unwrap();
        let b = standard_family(&g, &p, 7).unwrap();
        assert_eq!(a.len(), 30);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.field, y.field);
        }
        assert_eq!(a[0].id, "packet-0");
        assert_eq!(a[29].id, "random-9");
        // the same continuum functions on a finer grid
        let g2 = g.refined();
        let c = standard_family(&g2, &p, 7).unwrap();
        for (x, y) in a.iter().zip(&c) {
            for i in [0usize, 517, 2080, 4000] {
                let pos = g.position(i);
                let j = g2.nearest_index(pos);
                assert!((x.field.values()[i] - y.field.values()[j]).norm() < 1e-9, "{}", x.id);
            }
        }
    }

    #[test]
    fn gaussians_and_random_fields_decay() {
        let g = GridSpec::new(2, 64, 16.0).unwrap();
        let p = ProfilePair::new(Bump::Standard, 2).unwrap();
        for f in standard_family(&g, &p, 1).unwrap() {
            if f.kind != FamilyKind::Packet {
                assert!(boundary_level(&f.field) < 1e-8, "{} {}", f.id, boundary_level(&f.field));
            }
        }
    }
}

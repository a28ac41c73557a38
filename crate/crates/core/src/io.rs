//! `FIOF` field files, plan configs and CSV norm reports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::field::{GridSpec, SampledField};
use crate::packets::Bump;
use crate::tent::PhaseSpaceField;
use crate::transform::{HardyNormReport, TransformPlan};

const FIOF_VERSION: u32 = 1;

/// Writes `f` as `FIOF`: magic, u32 version, u32 dim, u32 size per axis, f64 extent,
/// then little-endian f64 `(re, im)` pairs in row-major order.
pub fn write_fiof<W: Write>(f: &SampledField<f64>, mut out: W) -> Result<()> {
    let g = f.grid();
    out.write_all(b"FIOF")?;
    out.write_all(&FIOF_VERSION.to_le_bytes())?;
    out.write_all(&(g.dim() as u32).to_le_bytes())?;
    for _ in 0..g.dim() {
        out.write_all(&(g.points_per_axis() as u32).to_le_bytes())?;
    }
    out.write_all(&g.extent().to_le_bytes())?;
    let mut buf = Vec::with_capacity(16 * g.len());
    for v in f.values() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_fiof<R: Read>(mut input: R) -> Result<SampledField<f64>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
    if &magic != b"FIOF" {
        return Err(Error::Format("missing FIOF magic".into()));
    }
    let word = |input: &mut R| -> Result<u32> {
        let mut u = [0u8; 4];
        input.read_exact(&mut u).map_err(|_| Error::Format("truncated header".into()))?;
        Ok(u32::from_le_bytes(u))
    };
    let version = word(&mut input)?;
    if version != FIOF_VERSION {
        return Err(Error::Format(format!("unsupported FIOF version {version}")));
    }
    let dim = word(&mut input)? as usize;
    if !(1..=3).contains(&dim) {
        return Err(Error::Format(format!("unsupported dimension {dim}")));
    }
    let sizes: Vec<usize> = (0..dim).map(|_| word(&mut input).map(|s| s as usize)).collect::<Result<_>>()?;
    if sizes.iter().any(|&s| s != sizes[0]) {
        return Err(Error::Format(format!("unequal axis sizes {sizes:?}")));
    }
    let mut e = [0u8; 8];
    input.read_exact(&mut e).map_err(|_| Error::Format("truncated header".into()))?;
    let grid = GridSpec::new(dim, sizes[0], f64::from_le_bytes(e))?;
    let mut buf = vec![0u8; 16 * grid.len()];
    input.read_exact(&mut buf).map_err(|_| Error::Format(format!("expected {} samples", grid.len())))?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after samples".into()));
    }
    let values = buf
        .chunks_exact(16)
        .map(|c| Complex64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap())))
        .collect();
    SampledField::new(grid, values)
}

pub fn save_fiof(f: &SampledField<f64>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_fiof(f, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_fiof(path: &Path) -> Result<SampledField<f64>> {
    read_fiof(BufReader::new(File::open(path)?))
}

pub fn save_fiop(big_f: &PhaseSpaceField<f64>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    big_f.write_fiop(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_fiop(plan: &TransformPlan<f64>, path: &Path) -> Result<PhaseSpaceField<f64>> {
    PhaseSpaceField::read_fiop(BufReader::new(File::open(path)?), *plan.grid(), plan.sphere().clone(), plan.sigmas().clone())
}

/// Plan on `grid` from the keys `bump`, `directions`, `delta` (defaults: standard, 32, 0.1).
pub fn plan_from_config(cfg: &Config, grid: GridSpec) -> Result<TransformPlan<f64>> {
    cfg.check_keys(&["bump", "directions", "delta"])?;
    let bump = cfg.raw("bump").map(Bump::parse).transpose()?.unwrap_or(Bump::Standard);
    TransformPlan::standard(grid, bump, cfg.get_or("directions", 32)?, cfg.get_or("delta", 0.1)?)
}

/// One line of a norm report.
#[derive(Clone, Debug, PartialEq)]
pub struct NormRecord {
    pub field_id: String,
    pub p: f64,
    pub norm: f64,
    pub grid: String,
}

impl NormRecord {
    pub fn from_report(field_id: &str, grid: &GridSpec, r: &HardyNormReport) -> Self {
        NormRecord { field_id: field_id.to_string(), p: r.p, norm: r.value, grid: grid.tag() }
    }
}

/// CSV with header `field_id,p,norm,grid,seed,version`; norms involve no random draws,
/// so the seed column is always 0.
pub fn write_norm_csv<W: Write>(records: &[NormRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["field_id", "p", "norm", "grid", "seed", "version"])?;
    for r in records {
        let p = if r.p.is_infinite() { "inf".to_string() } else { r.p.to_string() };
        w.write_record([r.field_id.as_str(), &p, &r.norm.to_string(), &r.grid, "0", crate::VERSION])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_norm_csv<R: Read>(input: R) -> Result<Vec<NormRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() < 4 {
            return Err(Error::Format("norm report rows need four columns".into()));
        }
        out.push(NormRecord {
            field_id: rec[0].to_string(),
            p: crate::config::parse_f64(&rec[1], "p")?,
            norm: rec[2].parse().map_err(|_| Error::Format(format!("bad norm '{}'", &rec[2])))?,
            grid: rec[3].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fiof_round_trip_and_layout() {
        let g = GridSpec::new(2, 16, 4.0).unwrap();
        let f = SampledField::from_fn(g, |x| Complex64::new(x[0], -x[1] * x[1]));
        let mut buf = Vec::new();
        write_fiof(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 8 + 16 * 256);
        assert_eq!(&buf[..4], b"FIOF");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[20..28].try_into().unwrap()), 4.0);
        // first sample is x = (−2, −2)
        assert_eq!(f64::from_le_bytes(buf[28..36].try_into().unwrap()), -2.0);
        assert_eq!(read_fiof(&buf[..]).unwrap(), f);
    }

    #[test]
    fn fiof_rejects_bad_input() {
        let g = GridSpec::new(2, 16, 4.0).unwrap();
        let mut buf = Vec::new();
        write_fiof(&SampledField::zeros(g), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_fiof(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(read_fiof(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_fiof(&long[..]), Err(Error::Format(_))));
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(read_fiof(&v2[..]), Err(Error::Format(_))));
    }

    #[test]
    fn norm_csv_round_trip() {
        let recs = vec![
            NormRecord { field_id: "a".into(), p: 1.0, norm: 0.5, grid: "n2-M16-L4".into() },
            NormRecord { field_id: "a".into(), p: f64::INFINITY, norm: 0.25, grid: "n2-M16-L4".into() },
        ];
        let mut buf = Vec::new();
        write_norm_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("field_id,p,norm,grid,seed,version\n"));
        assert!(text.contains(",inf,"));
        assert_eq!(read_norm_csv(&buf[..]).unwrap(), recs);
    }
}

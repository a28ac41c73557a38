use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use num_complex::Complex64;

use fio_hardy::config::Config;
use fio_hardy::field::GridSpec;
use fio_hardy::io::{load_fiop, plan_from_config, read_norm_csv, save_fiof};
use fio_hardy::transform::hardy_norm;
use fio_hardy::SampledField;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("fio-hardy-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fio-hardy")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gaussian_file(dir: &Path) -> (SampledField, PathBuf) {
    let g = GridSpec::new(2, 32, 8.0).unwrap();
    let f = SampledField::from_fn(g, |x| Complex64::from_polar((-(x[0] * x[0] + x[1] * x[1])).exp(), 2.0 * x[0]));
    let path = dir.join("gauss.fiof");
    save_fiof(&f, &path).unwrap();
    (f, path)
}

const PLAN: &str = "# small plan\ndirections = 16\ndelta = 0.2\n";

#[test]
fn transform_writes_the_lift() {
    let dir = scratch("transform");
    let (f, input) = gaussian_file(&dir);
    let plan_path = dir.join("plan.cfg");
    std::fs::write(&plan_path, PLAN).unwrap();
    let out = dir.join("gauss.fiop");
    let o = run(&["transform", "--in", s(&input), "--plan", s(&plan_path), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let plan = plan_from_config(&Config::parse(PLAN).unwrap(), *f.grid()).unwrap();
    let lifted = load_fiop(&plan, &out).unwrap();
    let direct = plan.analyze(&f).unwrap();
    let diff = lifted.combine(Complex64::new(1.0, 0.0), &direct, Complex64::new(-1.0, 0.0)).unwrap();
    assert!(diff.l2_norm() <= 1e-12 * direct.l2_norm());
}

#[test]
fn norm_report_on_stdout_and_file() {
    let dir = scratch("norm");
    let (f, input) = gaussian_file(&dir);
    let o = run(&["norm", "--p", "2", "--in", s(&input)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let recs = read_norm_csv(&o.stdout[..]).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].field_id, "gauss");
    assert_eq!(recs[0].grid, f.grid().tag());
    let plan = plan_from_config(&Config::default(), *f.grid()).unwrap();
    let expect = hardy_norm(&plan, &f, 2.0).unwrap().value;
    assert!((recs[0].norm - expect).abs() <= 1e-12 * expect);
    let out = dir.join("norm.csv");
    let o = run(&["norm", "--p", "inf", "--in", s(&input), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("field_id,p,norm,grid"));
    assert!(read_norm_csv(text.as_bytes()).unwrap()[0].p.is_infinite());
}

#[test]
fn bad_input_is_an_error() {
    let dir = scratch("bad");
    let bad = dir.join("bad.fiof");
    std::fs::write(&bad, b"not a field").unwrap();
    assert_eq!(code(&run(&["norm", "--p", "1", "--in", s(&bad)])), 1);
    let (_, input) = gaussian_file(&dir);
    assert_eq!(code(&run(&["norm", "--p", "0.5", "--in", s(&input)])), 1);
    let cfg = dir.join("typo.cfg");
    std::fs::write(&cfg, "directoins = 16\n").unwrap();
    let out = dir.join("x.fiop");
    assert_eq!(code(&run(&["transform", "--in", s(&input), "--plan", s(&cfg), "--out", s(&out)])), 1);
}

fn experiment(dir: &Path, name: &str, cfg: &str) -> (i32, String) {
    let path = dir.join(format!("{name}.cfg"));
    std::fs::write(&path, cfg).unwrap();
    let out = dir.join(format!("{name}.csv"));
    let o = run(&["experiment", "--name", "sharpness", "--config", s(&path), "--out", s(&out)]);
    (code(&o), std::fs::read_to_string(&out).unwrap_or_default())
}

#[test]
fn experiment_exit_codes() {
    let dir = scratch("experiment");
    let small = "extent = 16\nm = 64\nmultiples = 4,6,8,10\n";
    let (c, report) = experiment(&dir, "pass", &format!("t = 0\n{small}"));
    assert_eq!(c, 0);
    let first = report.lines().nth(1).unwrap();
    assert!(first.starts_with(&format!("sharpness,n2-M64-L16,0,{},", fio_hardy::VERSION)), "{first}");
    // an r₁ target far from any growth the propagator produces
    let (c, report) = experiment(&dir, "tolerance", &format!("t = 1\nr1_exponent = 3\n{small}"));
    assert_eq!(c, 2);
    assert!(report.contains("check,r1-exponent") && report.contains(",fail"));
    // λ = 64·2π/16 is beyond the Nyquist frequency of M = 64
    let (c, _) = experiment(&dir, "resolution", "extent = 16\nm = 64\nmultiples = 4,8,16,64\n");
    assert_eq!(c, 3);
}

#[test]
fn offsing_command_reports() {
    let dir = scratch("offsing");
    let out = dir.join("report.csv");
    let o = run(&["offsing", "--op", "identity", "--t", "0", "--N", "2", "--m", "64", "--extent", "4", "--no-refine", "--out", s(&out)]);
    // the standard samples need M = 512 on L = 8
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["offsing", "--op", "halfwave", "--t", "-1", "--N", "3", "--no-refine", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("halfwave,c_fit") && text.contains("wrong-map-contrast"));
}

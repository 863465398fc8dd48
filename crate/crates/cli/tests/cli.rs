use std::fs;
use std::path::Path;
use std::process::Command;

use circleflow::Execution;
use circleflow_cli::pipeline::{CONFIG_FILE, SNAPSHOT_FILE};
use circleflow_cli::scenarios::bundled;
use circleflow_cli::verdict_name;
use circleflow_cli::{load_report, resume_scenario, run_scenario, PipelineError, ScenarioConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_circleflow"))
}

fn short(name: &str, span: f64) -> ScenarioConfig {
    let mut cfg = bundled(name).unwrap();
    cfg.run.span = span;
    cfg
}

#[test]
fn list_shows_bundled_and_filters() {
    let out = bin().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() > 6, "{text}");

    let out = bin().args(["list", "--filter", "qp"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains("qp")));
    assert_eq!(text.lines().count(), 4);

    let empty = tempfile::tempdir().unwrap();
    let out = bin().args(["list", "--dir"]).arg(empty.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);
}

#[test]
fn config_errors_exit_with_usage_code() {
    let out = bin().args(["run", "/no/such/scenario.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("/no/such/scenario.toml"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = bundled("heat").unwrap().to_toml().replace("grid_n = 32", "grid_n = 31");
    fs::write(&path, text).unwrap();
    let out = bin().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("grid_n"));

    let out = bin().args(["resume"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_artifacts_under_env_root() {
    let root = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("heat.toml");
    fs::write(&path, short("heat", 2.0).to_toml()).unwrap();
    let out = bin().arg("run").arg(&path).env("CIRCLEFLOW_OUT", root.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = root.path().join("heat");
    for f in ["config.toml", "report.json", "snapshots.bin", "spectrum.csv", "zeros.csv", "embedding.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    assert!(fs::read_to_string(run.join("spectrum.csv")).unwrap().starts_with("index,exponent,drift\n"));
    assert!(fs::read_to_string(run.join("zeros.csv")).unwrap().starts_with("t,count,confidence\n"));

    let out = bin().arg("report").arg(&run).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("scenario heat"));
}

#[test]
fn rotating_wave_report() {
    let out = tempfile::tempdir().unwrap();
    let r = run_scenario(&short("rotating_wave", 8.0), out.path(), Execution::Parallel).unwrap();
    let spec = r.spectrum.unwrap();
    // k = 0 grows like e^t; the travelling pair is neutral
    assert!((spec.exponents[0] - 1.0).abs() < 0.05, "{:?}", spec.exponents);
    assert!(spec.exponents[1].abs() < 0.05 && spec.exponents[2].abs() < 0.05);
    let phase = r.phase.unwrap();
    assert!((phase.slope + 1.0).abs() < 1e-6 && phase.rigid);
    assert!(phase.ode_residual_mean.unwrap() < 1e-2);
    let s = r.structure.unwrap();
    assert_eq!(verdict_name(&s.cover_modulo_shift), "one_cover");
    let phase_csv = fs::read_to_string(out.path().join("phase.csv")).unwrap();
    assert!(phase_csv.starts_with("t,c_unwrapped,residual\n"));
}

#[test]
fn hyperbolic_qp_is_a_one_cover() {
    let out = tempfile::tempdir().unwrap();
    let r = run_scenario(&short("hyperbolic_qp", 1.0), out.path(), Execution::Parallel).unwrap();
    let s = r.structure.unwrap();
    assert_eq!(verdict_name(&s.cover_raw), "one_cover");
    assert_eq!(s.cover_raw.cluster_tol, 1e-4);
    let json = fs::read_to_string(out.path().join("report.json")).unwrap();
    assert!(json.contains("\"kind\": \"one_cover\""));
}

#[test]
fn resume_by_zero_reproduces_the_report() {
    let out = tempfile::tempdir().unwrap();
    let first = run_scenario(&short("cubic", 1.0), out.path(), Execution::Parallel).unwrap();
    let snap_len = fs::metadata(out.path().join(SNAPSHOT_FILE)).unwrap().len();
    let again = resume_scenario(out.path(), 0.0, Execution::Parallel).unwrap();
    assert_eq!(first.without_timing(), again.without_timing());
    assert_eq!(fs::metadata(out.path().join(SNAPSHOT_FILE)).unwrap().len(), snap_len);
}

#[test]
fn resume_matches_a_longer_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = short("periodic_forced", 2.0);
    cfg.analysis.transforms.window = Some([1.0, 1.5]);
    run_scenario(&cfg, a.path(), Execution::Parallel).unwrap();
    let resumed = resume_scenario(a.path(), 2.0, Execution::Parallel).unwrap();
    cfg.run.span = 4.0;
    let direct = run_scenario(&cfg, b.path(), Execution::Parallel).unwrap();
    assert_eq!(resumed.config.run.span, 4.0);
    assert_eq!(resumed.without_timing(), direct.without_timing());
    assert_eq!(fs::read(a.path().join(SNAPSHOT_FILE)).unwrap(), fs::read(b.path().join(SNAPSHOT_FILE)).unwrap());
}

#[test]
fn resume_doubling_shrinks_spectrum_drift() {
    let out = tempfile::tempdir().unwrap();
    let first = run_scenario(&short("floquet", 10.0), out.path(), Execution::Parallel).unwrap();
    let second = resume_scenario(out.path(), 14.0, Execution::Parallel).unwrap();
    let worst = |d: &[f64]| d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let (d1, d2) = (worst(&first.spectrum.unwrap().drift), worst(&second.spectrum.unwrap().drift));
    assert!(d2 < d1, "drift {d1:e} -> {d2:e}");
}

fn corrupt(path: &Path, offset: usize, value: u8) {
    let mut bytes = fs::read(path).unwrap();
    bytes[offset] = value;
    fs::write(path, bytes).unwrap();
}

#[test]
fn damaged_snapshots_are_rejected() {
    let out = tempfile::tempdir().unwrap();
    run_scenario(&short("heat", 1.0), out.path(), Execution::Sequential).unwrap();
    let snap = out.path().join(SNAPSHOT_FILE);
    let pristine = fs::read(&snap).unwrap();

    corrupt(&snap, 40, pristine[40] ^ 0x10);
    let err = resume_scenario(out.path(), 1.0, Execution::Sequential).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");
    assert_eq!(err.exit_code(), 1);

    fs::write(&snap, &pristine).unwrap();
    corrupt(&snap, 4, 9);
    let err = resume_scenario(out.path(), 1.0, Execution::Sequential).unwrap_err();
    assert!(matches!(err, PipelineError::Snapshot(_)) && err.to_string().contains("version"), "{err}");
}

#[test]
fn blowup_is_recorded_not_fatal() {
    let cfg = ScenarioConfig::from_toml(
        r#"
scenario_id = "blowup"
grid_n = 16
[forcing]
x_independent = true
p_even = true
autonomous = true
[[forcing.terms]]
basis = "u3"
coeff = 1.0
[initial]
preset = "constant"
amplitude = 2.0
[run]
span = 1.0
"#,
    )
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let r = run_scenario(&cfg, out.path(), Execution::Parallel).unwrap();
    assert!(!r.status.completed);
    assert!(r.status.t_end < 0.2, "{}", r.status.t_end);
    assert!(r.status.termination.as_deref().unwrap().contains("blow-up"));
    assert!(load_report(out.path()).unwrap().spectrum.is_none());
    assert!(resume_scenario(out.path(), 1.0, Execution::Parallel).is_err());
}

#[test]
fn echoed_config_reproduces_the_report() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_scenario(&short("symmetric_qp", 1.0), a.path(), Execution::Parallel).unwrap();
    let echoed = ScenarioConfig::load(&a.path().join(CONFIG_FILE)).unwrap();
    assert_eq!(echoed, first.config);
    let second = run_scenario(&echoed, b.path(), Execution::Sequential).unwrap();
    assert_eq!(first.without_timing(), second.without_timing());
    for f in ["spectrum.csv", "zeros.csv", "embedding.csv", "phase.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

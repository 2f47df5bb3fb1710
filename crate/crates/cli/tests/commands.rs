use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use robust_mv::report::{PerturbReport, SimulateReport, StrategyReport, VerifyReport, WorstCaseReport};
use robust_mv::CaseLabel;

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name)
}

fn run(args: &[&str], file: &Path, out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_robust-mv"));
    cmd.args(args).arg(file);
    if let Some(dir) = out {
        cmd.arg("--out").arg(dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn worst_case_table_for_short_second() {
    let o = run(&["worst-case"], &problem("short_second.json"), None);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("ShortSecond"), "{s}");
    assert!(s.contains("rho_hat       0.400000"), "{s}");
    assert!(s.contains("drift        [0.100000, 0.030000]"), "{s}");
}

#[test]
fn singleton_set_is_degenerate() {
    let o = run(&["worst-case"], &problem("singleton.json"), None);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("Degenerate"));
}

#[test]
fn ordering_violation_exits_three_and_names_the_assumption() {
    let o = run(&["worst-case"], &problem("ordering_violation.json"), None);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("two-asset ordering"), "{err}");
}

#[test]
fn schema_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"version": "1", "assets": 1, "surprise": true}"#).unwrap();
    assert_eq!(run(&["worst-case"], &bad, None).status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["strategy"], &missing, None).status.code(), Some(2));

    let no_seed = dir.path().join("no_seed.json");
    let text = std::fs::read_to_string(problem("single_asset.json")).unwrap();
    std::fs::write(&no_seed, text.replace(r#""seed": 5"#, r#""dt": 0.01"#)).unwrap();
    assert_eq!(run(&["simulate"], &no_seed, None).status.code(), Some(2));
}

#[test]
fn single_asset_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["strategy"], &problem("single_asset.json"), Some(dir.path()));
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("alpha_hat     [1.000000]"), "{s}");
    assert!(s.contains("V(t0, x0)     1.040000000000"), "{s}");
    let r: StrategyReport = read_json(&dir.path().join("strategy.json"));
    assert!((r.alpha_hat[0] - 1.0).abs() < 1e-12);
    assert!((r.value - 1.04).abs() < 1e-12);
    assert!((r.g - 1.08).abs() < 1e-12);
    assert!(r.ode_table.is_none());
}

#[test]
fn wealth_scaled_strategy_writes_the_ode_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["strategy"], &problem("wealth_scaled.json"), Some(dir.path()));
    assert_eq!(o.status.code(), Some(0));
    let r: StrategyReport = read_json(&dir.path().join("strategy.json"));
    let table = r.ode_table.expect("ode table");
    let last = table.last().unwrap();
    assert_eq!((last.t, last.a, last.b), (1.0, 1.0, 1.0));
    assert!(table.iter().all(|row| row.a > 0.0 && row.b > 0.0));

    let csv = std::fs::read_to_string(dir.path().join("ode.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,A,B"));
    let tail: Vec<f64> = lines.last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(tail, vec![1.0, 1.0, 1.0]);
}

#[test]
fn verify_passes_on_the_reference_problems() {
    for name in ["short_second.json", "log_return.json", "compound_poisson.json", "wealth_scaled.json"] {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&["verify"], &problem(name), Some(dir.path()));
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stdout(&o));
        let r: VerifyReport = read_json(&dir.path().join("verify.json"));
        assert!(r.passed && r.saddle.passed && r.pwz.passed, "{name}");
        let csv = std::fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
        assert!(csv.starts_with("t,x,eq_id,residual\n"));
    }
}

#[test]
fn simulate_passes_and_writes_terminal_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate"], &problem("single_asset.json"), Some(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let r: SimulateReport = read_json(&dir.path().join("simulate.json"));
    assert!(r.passed);
    assert!(r.j_gap_se <= 3.0 && r.mean_gap_se <= 3.0);
    let csv = std::fs::read_to_string(dir.path().join("terminal.csv")).unwrap();
    assert_eq!(csv.lines().count(), r.estimate.n_paths + 1);
}

#[test]
fn perturbing_a_suboptimal_base_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["perturb"], &problem("suboptimal_base.json"), Some(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    let s = stdout(&o);
    assert!(s.contains("violation: h 0.025"), "{s}");
    let r: PerturbReport = read_json(&dir.path().join("perturb.json"));
    assert!(!r.passed);
    assert!(r.equilibrium.n_violations > 0);
    assert!(r.worst_case.passed);
}

#[test]
fn json_flag_round_trips_into_the_report_type() {
    let o = run(&["worst-case", "--json"], &problem("short_second.json"), None);
    assert_eq!(o.status.code(), Some(0));
    let r: WorstCaseReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r.case_label, CaseLabel::ShortSecond);
    let again = serde_json::to_string_pretty(&r).unwrap();
    assert_eq!(again.trim(), stdout(&o).trim());
}

#[test]
fn outputs_are_bit_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let o = run(&["simulate", "--quiet"], &problem("single_asset.json"), Some(dir));
        assert_eq!(o.status.code(), Some(0));
        assert!(o.stdout.is_empty());
    }
    for name in ["terminal.csv", "simulate.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn recorded_paths_are_spilled_to_rmvp() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("recorded.json");
    let text = std::fs::read_to_string(problem("single_asset.json")).unwrap();
    let text = text.replace(r#""n_paths": 20000, "seed": 5"#, r#""n_paths": 8, "dt": 0.25, "seed": 5, "record_paths": true"#);
    std::fs::write(&file, text).unwrap();
    let o = run(&["simulate", "--quiet"], &file, Some(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(dir.path().join("paths.rmvp")).unwrap();
    let r = robust_mv::simulate::read_rmvp(bytes.as_slice()).unwrap();
    assert_eq!((r.n_paths, r.n_steps), (8, 4));
    assert!(r.values.iter().step_by(5).all(|&x0| x0 == 1.0));
}

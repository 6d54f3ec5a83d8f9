use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn charlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charlab"))
        .args(args)
        .env_remove("CHARLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_case(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn report_line<'a>(report: &'a str, key: &str) -> Option<&'a str> {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix(" = "))
}

#[test]
fn list_cases_shows_every_bundled_case() {
    let o = charlab(&["list-cases"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), charlab::cases::CASES.len());
    assert!(text.contains("eikonal"));
    assert!(text
        .lines()
        .any(|l| l.starts_with("stretch_map") && l.ends_with("(expected to fail)")));
}

#[test]
fn validate_accepts_cases_and_rejects_bad_files() {
    let o = charlab(&["validate", "burgers_tanh"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("valid evolution_hj scenario (dim 1)"));

    let dir = tempfile::tempdir().unwrap();
    let bad = write_case(
        dir.path(),
        "bad.case",
        "[problem]\nkind = \"hamiltonian\"\ndim = 1\nF = \"p^2\"\n",
    );
    let o = charlab(&["validate", &bad]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 4"), "{err}");
    assert!(err.contains("`F`"), "{err}");

    let o = charlab(&["validate", "no_such_case"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eik");
    let o = charlab(&["run", "eikonal", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(stdout(&o), report);
    assert_eq!(report_line(&report, "status"), Some("ok"));
    assert_eq!(report_line(&report, "strips"), Some("16"));
    let strips = fs::read_to_string(out.join("strips.csv")).unwrap();
    assert!(strips.starts_with("strip_id,param,x1,x2,u,p1,p2,F_residual,closure_defect\n"));
    // u given on 21 x 21 nodes; differencing twice loses two layers per side
    assert_eq!(report_line(&report, "grid_nodes"), Some("289"));
    let grid = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 17 * 17);
}

#[test]
fn quiet_suppresses_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = charlab(&[
        "run",
        "advection",
        "--quiet",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).is_empty());
    assert!(dir.path().join("report.txt").exists());
}

#[test]
fn planted_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = charlab(&[
        "run",
        "mismatched_pair",
        "--quiet",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tolerance exceeded: equivalence_deviation"));
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(report_line(&report, "status"), Some("fail"));
}

#[test]
fn runtime_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let case = write_case(
        dir.path(),
        "domain.case",
        "[problem]\nkind = \"general_pde\"\ndim = 1\nF = \"p1 - log(x1)\"\n\n\
         [seeds]\nx = [\"-1 - s\"]\nu = \"0\"\np = [\"0\"]\nlo = 0\nhi = 1\ncount = 3\n\n\
         [integration]\ndt = 0.1\nlength = 1\n",
    );
    let out = dir.path().join("out");
    let o = charlab(&["run", &case, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("[seeds]"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn step_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let o = charlab(&[
        "run",
        "burgers_quadratic",
        "--dt",
        "2e-3",
        "--t-end",
        "1.2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(report_line(&stdout(&o), "steps"), Some("600"));

    let o = charlab(&["run", "burgers_quadratic", "--dt", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dt must be positive"));
}

#[test]
fn thread_setting_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_charlab"))
        .args(["run", "advection", "--quiet"])
        .env("CHARLAB_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("CHARLAB_THREADS"));
}

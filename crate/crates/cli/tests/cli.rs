use std::path::PathBuf;
use std::process::{Command, Output};

fn gop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gop"))
        .args(args)
        .env_remove("GOP_SEED")
        .output()
        .unwrap()
}

fn scenario(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"));
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn table_interpolates_the_two_dimensional_anchor() {
    let out = gop(&["table", "--dim", "2"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("c_t,dim,upsilon"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f[1], "2");
            (f[0].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 99);
    let lo = rows.iter().find(|r| (r.0 - 0.80).abs() < 1e-12).unwrap();
    let hi = rows.iter().find(|r| (r.0 - 0.81).abs() < 1e-12).unwrap();
    let at = lo.1 + (hi.1 - lo.1) * (0.8051 - lo.0) / (hi.0 - lo.0);
    assert!((at - 0.0706).abs() <= 1e-3, "interpolated {at}");
}

#[test]
fn overlap_of_unit_gaussians_two_apart() {
    let out = gop(&[
        "overlap", "--mean1", "0,0", "--cov1", "1,0,0,1", "--mean2", "2,0", "--cov2", "1,0,0,1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!((field(&text, "upsilon") - 0.317311).abs() <= 1e-6);
    assert!((field(&text, "lambda") - 0.5).abs() <= 1e-9);
    assert!((field(&text, "eta1") - 1.0).abs() <= 1e-9);
}

#[test]
fn bad_overlap_arguments_are_usage_errors() {
    let out = gop(&[
        "overlap", "--mean1", "0,x", "--cov1", "1,0,0,1", "--mean2", "2,0", "--cov2", "1,0,0,1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = gop(&[
        "overlap", "--mean1", "0,0", "--cov1", "1,0,0", "--mean2", "2,0", "--cov2", "1,0,0,1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_on_missing_file_exits_two() {
    let out = gop(&["run", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/scenario.json"));
}

#[test]
fn check_echoes_defaults_and_rejects_invalid_files() {
    let out = gop(&["check", &scenario("trivial")]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("name: trivial"));
    assert!(text.contains("horizon"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{ "start": [0,0,0], "goal": [5,0,0], "constraints": { "c_min": 0.6, "c_max": 0.3 } }"#,
    )
    .unwrap();
    let out = gop(&["check", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("constraint band empty"));
}

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trivial.csv");
    let out = gop(&["run", &scenario("trivial"), "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("t,x,y,z,"));
    let summary = std::fs::read_to_string(dir.path().join("trivial.csv.summary.json")).unwrap();
    assert!(summary.contains("\"completed\": true"));
}

#[test]
fn unavoidable_overlap_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blocked.json");
    std::fs::write(
        &path,
        r#"{ "start": [0,0,0], "goal": [5,0,0],
             "obstacles": [ { "trajectory": { "static": [0.2, 0, 0] } } ],
             "constraints": { "c_min": 0.9 } }"#,
    )
    .unwrap();
    let out = gop(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("exceeds bound"));
}

#[test]
fn same_seed_gives_identical_output() {
    let args = ["run", &scenario("antipodal"), "--seed", "11", "--mc-samples", "2000"];
    let a = gop(&args);
    let b = gop(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stderr, b.stderr);
    assert!(stderr(&a).contains("seed=11"));

    let env = Command::new(env!("CARGO_BIN_EXE_gop"))
        .args(["run", &scenario("antipodal"), "--mc-samples", "2000"])
        .env("GOP_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(env.stdout, a.stdout);
    assert_eq!(env.stderr, a.stderr);
}

#[test]
fn malformed_seed_variable_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_gop"))
        .args(["run", &scenario("trivial")])
        .env("GOP_SEED", "eleven")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

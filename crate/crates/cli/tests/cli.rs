use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn run(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_swarmflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn column(dir: &Path, file: &str, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(dir.join(file)).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn stationary_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["stationary", "--landscape", "single_cos", "--m", "0.25", "--beta", "5"];
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&args, &a).status.success());
    assert!(run(&args, &b).status.success());
    let files = csv_files(&a);
    assert_eq!(files.len(), 1);
    assert_eq!(files, csv_files(&b));
    assert!(a.join("manifest.json").exists());
    let header: Value = serde_json::from_str(&fs::read_to_string(a.join("stationary.json")).unwrap()).unwrap();
    assert_eq!(header["beta"], 5.0);
    // Unit mass of mu as a mean over the grid.
    let mu = column(&a, "stationary.csv", "mu");
    let mass = mu.iter().sum::<f64>() / mu.len() as f64;
    assert!((mass - 1.0).abs() < 1e-10);
}

#[test]
fn swarm_output_does_not_depend_on_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let base = [
        "swarm", "--schedule", "power", "--k", "3", "--t-end", "0.05", "--N", "600", "--seeds", "2",
        "--set", "swarm.record_every=10", "--set", "swarm.dump_times=0.05",
    ];
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut one = base.to_vec();
    one.extend(["--threads", "1"]);
    let mut two = base.to_vec();
    two.extend(["--threads", "2"]);
    assert!(run(&one, &a).status.success());
    assert!(run(&two, &b).status.success());
    let files = csv_files(&a);
    // Two per-seed logs, two dumps and the summary.
    assert_eq!(files.len(), 5);
    assert_eq!(files, csv_files(&b));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    assert_eq!(manifest["config"]["swarm.n"], 600);
}

#[test]
fn pde_reduced_cost_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let o = run(
        &["pde", "--fixed-beta", "5", "--t-end", "5", "--grid-n", "256", "--set", "run.profile_times=1"],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let i = column(&out, "pde.csv", "I");
    assert!(i.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{i:?}");
    assert!(i[0] > 0.0);
    assert!(out.join("pde_profile_t1.csv").exists());
}

#[test]
fn config_file_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"schedule.beta": 2, "grid.n": 64, "landscape.name": "single_cos"}"#).unwrap();
    let out = tmp.path().join("o");
    let o = run(&["stationary", "--config", cfg.to_str().unwrap(), "--beta", "3"], &out);
    assert!(o.status.success());
    let header: Value = serde_json::from_str(&fs::read_to_string(out.join("stationary.json")).unwrap()).unwrap();
    assert_eq!(header["beta"], 3.0);
    assert_eq!(column(&out, "stationary.csv", "x").len(), 64);
}

#[test]
fn config_errors_exit_2_with_record() {
    let tmp = tempfile::tempdir().unwrap();
    for (k, args) in [
        vec!["pde", "--set", "grid.nn=3"],
        vec!["stationary", "--landscape", "nope"],
        vec!["stationary", "--set", "landscape.scale=2"],
        vec!["stationary", "--m", "0.7"],
    ]
    .into_iter()
    .enumerate()
    {
        let out = tmp.path().join(format!("e{k}"));
        let o = run(&args, &out);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let rec: Value = serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
        assert_eq!(rec["kind"], "config");
        assert_eq!(rec["exit_code"], 2);
    }
}

#[test]
fn assert_flags_set_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "check-fi", "--assert", "--set", "check.count=4", "--set", "check.betas=5", "--set", "check.ms=0.25",
        ],
        &tmp.path().join("fi"),
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(column(&tmp.path().join("fi"), "check_fi.csv", "ratio").len(), 4);

    let o = run(&["schedule-validate", "--schedule", "inverse_gamma", "--assert"], &tmp.path().join("bad"));
    assert_eq!(o.status.code(), Some(4));
    let o = run(&["schedule-validate", "--schedule", "power", "--assert"], &tmp.path().join("good"));
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn lyapunov_emits_decreasing_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("l");
    let o = run(&["lyapunov", "--schedule", "power", "--k", "0.5", "--t-end", "1e4"], &out);
    assert!(o.status.success());
    let v = column(&out, "lyapunov.csv", "v");
    assert_eq!(v[0], 1.0);
    assert!(v.windows(2).all(|w| w[1] <= w[0]));
}

//! End-to-end checks of the `exkin` binary: exit codes, output formats,
//! config precedence and byte-level reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn exkin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exkin"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn tempdir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("exkin-cli-test-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn json_of(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn oracle_reports_uniform_stationary() {
    let dir = tempdir("oracle");
    let out = exkin(&["oracle", "--n", "3", "--N", "3"], &dir);
    assert!(out.status.success(), "{out:?}");
    let report = json_of(&dir.join("oracle.json"));
    assert_eq!(report["stationary"], "uniform");
    assert!(report["max_dev"].as_f64().unwrap() <= 1e-10);
    assert_eq!(report["states"], 10);
    assert!(dir.join("matrix.csv").exists());
    assert!(dir.join("matrix_legend.csv").exists());
    let legend = fs::read_to_string(dir.join("matrix_legend.csv")).unwrap();
    assert!(legend.starts_with("state_index,counts\n0,0 0 3\n"));
}

#[test]
fn couple_respects_bound() {
    let dir = tempdir("couple");
    let out = exkin(
        &["couple", "--n", "10000", "--k", "100", "--seed", "31"],
        &dir,
    );
    assert!(out.status.success(), "{out:?}");
    let report = json_of(&dir.join("couple.json"));
    let sup = report["sup_distance"].as_f64().unwrap();
    assert!(sup <= 0.02, "sup {sup}");
    assert_eq!(report["pass"], true);
}

#[test]
fn equilibria_check_passes_both_regimes() {
    for (name, args) in [
        ("eq-inf", vec!["equilibria-check", "--w0", "inf", "--m", "1"]),
        ("eq-cap", vec!["equilibria-check", "--w0", "1", "--m", "0.5"]),
    ] {
        let dir = tempdir(name);
        let out = exkin(&args, &dir);
        assert!(out.status.success(), "{name}: {out:?}");
        let report = json_of(&dir.join("equilibria.json"));
        assert!(report["residual"].as_f64().unwrap() <= 5e-3);
    }
}

#[test]
fn reruns_are_byte_identical_modulo_wall_time() {
    let args = [
        "simulate-poisson",
        "--N",
        "40",
        "--T",
        "2",
        "--seed",
        "99",
        "--init",
        "simplex",
        "--snapshot-every",
        "0.5",
    ];
    let d1 = tempdir("repro1");
    let d2 = tempdir("repro2");
    assert!(exkin(&args, &d1).status.success());
    assert!(exkin(&args, &d2).status.success());
    for f in ["events.csv", "snapshots.csv"] {
        assert_eq!(
            fs::read(d1.join(f)).unwrap(),
            fs::read(d2.join(f)).unwrap(),
            "{f} must be byte-identical"
        );
    }
    let mut m1 = json_of(&d1.join("run.json"));
    let mut m2 = json_of(&d2.join("run.json"));
    m1.as_object_mut().unwrap().remove("wall_time_secs");
    m2.as_object_mut().unwrap().remove("wall_time_secs");
    assert_eq!(m1, m2);
}

#[test]
fn config_file_flags_and_env_precedence() {
    let dir = tempdir("config");
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, "# comment\nN=10\nT=1\nseed=77\n").unwrap();
    // Flag overrides the file's N; the file supplies T and seed.
    let out = Command::new(env!("CARGO_BIN_EXE_exkin"))
        .args(["simulate-poisson", "--config"])
        .arg(&cfg)
        .args(["--N", "4", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let manifest = json_of(&dir.join("run.json"));
    assert_eq!(manifest["params"]["N"], "4");
    assert_eq!(manifest["params"]["T"], "1");
    assert_eq!(manifest["seed"], 77);

    // EXKIN_SEED beats both flag and file.
    let out = Command::new(env!("CARGO_BIN_EXE_exkin"))
        .args(["simulate-poisson", "--config"])
        .arg(&cfg)
        .args(["--seed", "5", "--out"])
        .arg(&dir)
        .env("EXKIN_SEED", "12345")
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest = json_of(&dir.join("run.json"));
    assert_eq!(manifest["seed"], 12345);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempdir("usage");
    // Seed is mandatory with no wall-clock default.
    let out = exkin(&["simulate-poisson", "--N", "4", "--T", "1"], &dir);
    assert_eq!(out.status.code(), Some(2));
    // Unknown flag.
    let out = exkin(&["oracle", "--bogus"], &dir);
    assert_eq!(out.status.code(), Some(2));
    // Sampler/target mismatch is a configuration error.
    let out = exkin(
        &[
            "limit-check",
            "--sampler",
            "uniform-composition",
            "--N",
            "4",
            "--target",
            "exp1",
            "--seed",
            "1",
        ],
        &dir,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn limit_check_emits_full_report() {
    let dir = tempdir("limit");
    let out = exkin(
        &[
            "limit-check",
            "--sampler",
            "uniform-simplex",
            "--N",
            "10000",
            "--target",
            "delta0",
            "--seed",
            "8",
        ],
        &dir,
    );
    assert!(out.status.success(), "{out:?}");
    let report = json_of(&dir.join("limit_check.json"));
    assert_eq!(report["statistic_kind"], "exceedance");
    assert_eq!(report["pass"], true);
    assert!(report["w1"].as_f64().unwrap() > 0.0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("vs threshold"),
        "statistic and threshold must both be printed: {text}"
    );
}

#[test]
fn kinetic_solve_writes_snapshots_and_manifest() {
    let dir = tempdir("kinetic");
    let out = exkin(
        &[
            "kinetic-solve",
            "--T",
            "1",
            "--dt",
            "0.1",
            "--x-max",
            "16",
            "--cells",
            "200",
            "--init",
            "exp:1",
            "--snapshot-every",
            "0.5",
        ],
        &dir,
    );
    assert!(out.status.success(), "{out:?}");
    let manifest = json_of(&dir.join("densities.json"));
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), manifest["times"].as_array().unwrap().len());
    for f in files {
        let path = dir.join(f.as_str().unwrap());
        let text = fs::read_to_string(path).unwrap();
        assert!(text.starts_with("x,f(x)\n"));
    }
    let mean = manifest["final_mean"].as_f64().unwrap();
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
}

#[test]
fn partition_sample_csv_shape() {
    let dir = tempdir("psample");
    let out = exkin(
        &[
            "partition-sample",
            "--kind",
            "uniform-composition",
            "--n",
            "6",
            "--N",
            "4",
            "--seed",
            "3",
        ],
        &dir,
    );
    assert!(out.status.success());
    let text = fs::read_to_string(dir.join("samples.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,value"));
    let total: f64 = lines
        .map(|l| l.split_once(',').unwrap().1.parse::<f64>().unwrap())
        .sum();
    assert_eq!(total, 6.0);
}

#[test]
fn jobs_flag_does_not_change_results() {
    // Replica streams are keyed by index and reduced in index order, so
    // the worker-pool size cannot affect any output.
    let base = [
        "martingale-test",
        "--N",
        "40",
        "--T",
        "1",
        "--replicas",
        "100",
        "--seed",
        "17",
    ];
    let d1 = tempdir("jobs1");
    let d2 = tempdir("jobs2");
    let mut one = base.to_vec();
    one.extend(["--jobs", "1"]);
    let mut four = base.to_vec();
    four.extend(["--jobs", "4"]);
    assert!(exkin(&one, &d1).status.success());
    assert!(exkin(&four, &d2).status.success());
    assert_eq!(
        fs::read(d1.join("martingale_bound.json")).unwrap(),
        fs::read(d2.join("martingale_bound.json")).unwrap()
    );
}

#[test]
fn martingale_test_report_keys() {
    let dir = tempdir("marti");
    let out = exkin(
        &[
            "martingale-test",
            "--N",
            "50",
            "--T",
            "1",
            "--replicas",
            "100",
            "--seed",
            "21",
            "--dump-path",
        ],
        &dir,
    );
    assert!(out.status.success(), "{out:?}");
    let report = json_of(&dir.join("martingale_bound.json"));
    for key in ["g", "N", "T", "replicas", "empirical", "bound", "pass"] {
        assert!(report.get(key).is_some(), "missing key {key}");
    }
    assert_eq!(report["pass"], true);
    let path = fs::read_to_string(dir.join("martingale_path.csv")).unwrap();
    assert!(path.starts_with("time,M_value\n0,0\n"));
}

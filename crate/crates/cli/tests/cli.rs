use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn kalnat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kalnat")).args(args).current_dir(dir).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run(dir: &Path, config: &Path, mode: &str, out: &str) -> Output {
    kalnat(&["run", "--config", config.to_str().unwrap(), "--mode", mode, "--out", out], dir)
}

fn compare(dir: &Path, config: &Path, mode: &str, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["compare", "--config", config.to_str().unwrap(), "--mode", mode, "--out", out];
    args.extend_from_slice(extra);
    kalnat(&args, dir)
}

fn assert_numeric_csv(path: &Path, width: usize) -> usize {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), width);
    let mut rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), width, "{line}");
        for f in fields {
            assert!(f.parse::<f64>().is_ok_and(f64::is_finite), "{f} in {line}");
        }
        rows += 1;
    }
    rows
}

#[test]
fn list_prints_sorted_names() {
    let tmp = TempDir::new().unwrap();
    let out = kalnat(&["list"], tmp.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().collect();
    assert!(names.contains(&"static"));
    assert!(names.contains(&"pendulum-ct"));
    let mut sorted = names.clone();
    sorted.sort_unstable();
    assert_eq!(names, sorted);
}

#[test]
fn ekf_run_writes_one_row_per_step() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", "scenario = linear2d\nT = 12\nseed = 3\nalpha = 0.1\n");
    let out = run(tmp.path(), &cfg, "ekf", "res");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // t, 2 truth, observed, 2 y, 2 means, 2 variances
    assert_eq!(assert_numeric_csv(&tmp.path().join("res/trace.csv"), 10), 13);
    let summary = fs::read_to_string(tmp.path().join("res/summary.txt")).unwrap();
    assert!(summary.contains("mode = ekf"));
}

#[test]
fn every_run_mode_succeeds() {
    let tmp = TempDir::new().unwrap();
    let discrete = write_config(tmp.path(), "d.cfg", "scenario = tanhspring\nT = 20\nalpha = ramp(0, 0.5)\n");
    let mc = write_config(tmp.path(), "mc.cfg", "scenario = static\nT = 20\nfisher_mode = monte-carlo(50)\n");
    let continuous = write_config(tmp.path(), "c.cfg", "scenario = pendulum-ct\nalpha = 0.2\ndt = 1e-2\nhorizon = 2\n");
    for (cfg, mode) in [(&discrete, "ekf"), (&discrete, "natgrad"), (&mc, "natgrad"), (&continuous, "bucy"), (&continuous, "cngd")] {
        let out = run(tmp.path(), cfg, mode, mode);
        assert_eq!(code(&out), 0, "{mode}: {}", stderr(&out));
    }
    // t, y, 2 means, 2 variances, eta; 200 steps plus the initial sample
    assert_eq!(assert_numeric_csv(&tmp.path().join("cngd/trace.csv"), 7), 201);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "r.cfg", "scenario = static\nT = 30\nseed = 9\nfisher_mode = monte-carlo(20)\n");
    for out in ["a", "b"] {
        assert_eq!(code(&run(tmp.path(), &cfg, "natgrad", out)), 0);
        assert_eq!(code(&compare(tmp.path(), &cfg, "discrete", &format!("{out}-cmp"), &[])), 0);
    }
    for file in ["a/trace.csv", "a/scenario.csv", "a/summary.txt", "a-cmp/deviations.csv", "a-cmp/summary.txt"] {
        let other = file.replacen('a', "b", 1);
        assert_eq!(fs::read(tmp.path().join(file)).unwrap(), fs::read(tmp.path().join(&other)).unwrap(), "{file}");
    }
}

#[test]
fn missing_scenario_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", "T = 10\n");
    let out = run(tmp.path(), &cfg, "ekf", "res");
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("`scenario`"), "{}", stderr(&out));
}

#[test]
fn config_errors_name_the_field() {
    let tmp = TempDir::new().unwrap();
    for (body, field) in [
        ("scenario = nowhere\n", "`scenario`"),
        ("scenario = linear2d\ns0 = 1, 2, 3\n", "`s0`"),
        ("scenario = linear2d\nP0 = 1, 0, 0, -1\n", "`P0`"),
        ("scenario = pendulum-ct\n", "`scenario`"),
        ("scenario = linear2d\nalpha = list(0.1)\nT = 4\n", "`alpha`"),
        ("scenario = linear2d\nout_dir = x\n", "`out_dir`"),
    ] {
        let cfg = write_config(tmp.path(), "bad.cfg", body);
        let out = run(tmp.path(), &cfg, "ekf", "res");
        assert_eq!(code(&out), 1, "{body}");
        assert!(stderr(&out).contains(field), "{body}: {}", stderr(&out));
    }
    let cfg = write_config(tmp.path(), "none.cfg", "scenario = linear2d\n");
    assert_eq!(code(&kalnat(&["run", "--config", cfg.to_str().unwrap(), "--mode", "ekf"], tmp.path())), 1);
    assert_eq!(code(&kalnat(&["run", "--config", "missing.cfg", "--mode", "ekf", "--out", "x"], tmp.path())), 1);
}

#[test]
fn saturated_bernoulli_mean_is_a_numerical_error() {
    let tmp = TempDir::new().unwrap();
    // sigmoid(-1000) is exactly 0, so the observation covariance vanishes
    let cfg = write_config(tmp.path(), "sat.cfg", "scenario = logistic-static\nT = 5\ns0 = -1000, 0\n");
    let out = run(tmp.path(), &cfg, "ekf", "res");
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn discrete_compare_passes_and_mutations_fail() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "cmp.cfg", "scenario = linear2d\nalpha = 0.1\n");
    let out = compare(tmp.path(), &cfg, "discrete", "ok", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(tmp.path().join("ok/summary.txt")).unwrap();
    assert!(summary.contains("max_state_dev = "));
    assert!(summary.contains("max_metric_dev = "));
    assert!(summary.contains("result = pass"));
    // t, 2 truth, observed, 2 y, 2 + 2 states, 2 deviations
    assert_eq!(assert_numeric_csv(&tmp.path().join("ok/deviations.csv"), 12), 51);

    for mutation in ["drop_fading_factor", "half_gamma", "skip_transport", "perturb_eta"] {
        let out = compare(tmp.path(), &cfg, "discrete", mutation, &["--mutate", mutation]);
        assert_eq!(code(&out), 3, "{mutation}");
        let summary = fs::read_to_string(tmp.path().join(mutation).join("summary.txt")).unwrap();
        assert!(summary.contains("result = fail"));
    }

    let cfg = write_config(tmp.path(), "mut.cfg", "scenario = linear2d\nalpha = 0.1\nmutate = drop_fading_factor\n");
    assert_eq!(code(&compare(tmp.path(), &cfg, "discrete", "mut", &[])), 3);
    assert_eq!(code(&compare(tmp.path(), &cfg, "discrete", "mut", &["--mutate", "bogus"])), 1);
}

#[test]
fn tolerance_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "tol.cfg", "scenario = linear2d\nalpha = 0.1\ntol = 1e-30\n");
    assert_eq!(code(&compare(tmp.path(), &cfg, "discrete", "strict", &[])), 3);
    assert_eq!(code(&compare(tmp.path(), &cfg, "discrete", "loose", &["--tol", "1e-8"])), 0);
}

#[test]
fn continuous_compare_reports_each_step_size() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ct.cfg",
        "scenario = pendulum-ct\nalpha = 0.2\ndt_list = 1e-2, 1e-3\nhorizon = 1\n",
    );
    let out = compare(tmp.path(), &cfg, "continuous", "ct", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = fs::read_to_string(tmp.path().join("ct/summary.txt")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.starts_with("row dt = ")).count(), 2, "{summary}");
    assert!(summary.contains("order = "));
    // dt, t, 2 + 2 states, 2 deviations; 101 + 1001 samples
    assert_eq!(assert_numeric_csv(&tmp.path().join("ct/deviations.csv"), 8), 1102);
}

#[test]
fn exported_scenario_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "gen.cfg", "scenario = tanhspring\nT = 25\nseed = 11\nalpha = 0.3\n");
    assert_eq!(code(&run(tmp.path(), &cfg, "ekf", "gen")), 0);
    let replay = write_config(
        tmp.path(),
        "replay.cfg",
        "scenario = tanhspring\nalpha = 0.3\nobservations = gen/scenario.csv\n",
    );
    let out = run(tmp.path(), &replay, "ekf", "replay");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(tmp.path().join("gen/trace.csv")).unwrap(),
        fs::read(tmp.path().join("replay/trace.csv")).unwrap()
    );
}

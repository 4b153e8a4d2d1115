use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn drm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drm"))
        .args(args)
        .current_dir(dir)
        .env_remove("DRM_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn simulated(dir: &Path, preset: &str) -> PathBuf {
    let path = dir.join(format!("{preset}.csv"));
    let out = drm(dir, &["simulate", "--preset", preset, "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Column values of a run CSV, skipping the digest line.
fn column(path: &Path, name: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().skip(1);
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let c = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(c).unwrap_or("").to_string()).collect()
}

#[test]
fn simulate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = drm(tmp.path(), &["simulate", "--preset", "linear-age", "--out", "a.csv"]);
    let b = drm(tmp.path(), &["simulate", "--preset", "linear-age", "--out", "b.csv"]);
    let c = drm(tmp.path(), &["simulate", "--preset", "linear-age", "--seed", "99", "--out", "c.csv", "--truth", "t.csv"]);
    assert!([a, b, c].iter().all(|o| code(o) == 0));
    let read = |n: &str| fs::read(tmp.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
    assert!(String::from_utf8(read("t.csv")).unwrap().contains("year,age,birth_year,u_true,v_true"));
}

#[test]
fn stationary_fit_writes_tagged_bundle() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(tmp.path(), "stationary");
    let out = drm(tmp.path(), &["fit", data.to_str().unwrap(), "--out", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("run");
    let m = manifest(&run);
    let digest = m["run"].as_str().unwrap().to_string();
    assert_eq!(m["status"], "converged");
    assert_eq!(m["targets"]["r_u"], 0.9);
    assert_eq!(m["targets"]["r_v"], 0.7);

    let files: Vec<String> = m["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap().to_string()).collect();
    for name in ["observed", "levels", "ctrends", "clusters", "comparisons", "cohort", "trace"] {
        assert!(files.contains(&format!("{name}.csv")), "{name}.csv");
        assert!(files.contains(&format!("{name}.svg")), "{name}.svg");
    }
    for f in &files {
        let text = fs::read_to_string(run.join(f)).unwrap();
        assert!(text.contains(&digest), "{f} lacks the run digest");
    }
    for u in column(&run.join("ctrends.csv"), "u_hat").iter().filter(|u| !u.is_empty()) {
        let u: f64 = u.parse().unwrap();
        assert!(u.abs() < 0.15, "u = {u}");
    }
    let years: Vec<i64> = column(&run.join("levels.csv"), "year").iter().map(|y| y.parse().unwrap()).collect();
    assert!(years.iter().all(|&y| y >= 1980), "levels carry calendar years");
}

#[test]
fn paper_preset_has_295_cells_and_replots_identically() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(tmp.path(), "paper");
    let out = drm(tmp.path(), &["fit", data.to_str().unwrap(), "--out", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("run");
    let used = column(&run.join("observed.csv"), "status").iter().filter(|s| *s == "used").count();
    assert_eq!(used, 295);

    let before = fs::read(run.join("ctrends.svg")).unwrap();
    fs::remove_file(run.join("ctrends.svg")).unwrap();
    let out = drm(tmp.path(), &["report", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(run.join("ctrends.svg")).unwrap(), before);

    // same data and config give the same numbers
    let again = drm(tmp.path(), &["fit", data.to_str().unwrap(), "--out", "run2"]);
    assert_eq!(code(&again), 0);
    for t in ["observed.csv", "levels.csv", "ctrends.csv", "clusters.csv", "comparisons.csv", "cohort.csv", "trace.csv"] {
        assert_eq!(fs::read(run.join(t)).unwrap(), fs::read(tmp.path().join("run2").join(t)).unwrap(), "{t}");
    }
}

#[test]
fn empty_input_is_an_input_error_without_outputs() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("empty.csv"), "").unwrap();
    fs::write(tmp.path().join("header.csv"), "survey,exam_date,age,bmi\n").unwrap();
    for file in ["empty.csv", "header.csv", "missing.csv"] {
        let out = drm(tmp.path(), &["fit", file, "--out", "run"]);
        assert_eq!(code(&out), 2, "{file}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let names: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2, "{names:?}");
}

#[test]
fn collinear_survey_is_singular() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::from("survey,exam_date,age,bmi\n");
    for (age, off) in (30..34).zip([0.5, 0.5, 0.5, 0.8]) {
        for r in 0..3 {
            text.push_str(&format!("S,{},{age},{}\n", 2000.0 + off, 25.0 + 0.1 * age as f64 + 0.01 * r as f64));
        }
    }
    fs::write(tmp.path().join("c.csv"), text).unwrap();
    let out = drm(tmp.path(), &["fit", "c.csv", "--n-exc", "0", "--out", "run"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn non_convergence_keeps_outputs_and_exits_3() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(tmp.path(), "linear-age");
    let out = drm(tmp.path(), &["fit", data.to_str().unwrap(), "--max-iter", "1", "--r-u", "0.95", "--out", "run"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("run"));
    assert_eq!(m["status"], "max-iterations");
    assert_eq!(column(&tmp.path().join("run/trace.csv"), "iteration"), ["1"]);
}

#[test]
fn config_file_and_flag_overrides() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(tmp.path(), "linear-age");
    fs::write(tmp.path().join("cfg.toml"), "[iteration]\nr_u = 0.8\ndelta_u = 0.1\n[clusters]\ndelta_age = 10\n").unwrap();
    let out = drm(tmp.path(), &["fit", data.to_str().unwrap(), "--config", "cfg.toml", "--r-v", "0.6", "--out", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("run"));
    assert_eq!(m["targets"]["r_u"], 0.8);
    assert_eq!(m["targets"]["r_v"], 0.6);
    assert_eq!(m["targets"]["delta_u"], 0.1);
    assert_eq!(m["config"]["clusters"]["delta_age"], 10);

    fs::write(tmp.path().join("bad.toml"), "[iteration]\nru = 0.8\n").unwrap();
    let out = drm(tmp.path(), &["fit", data.to_str().unwrap(), "--config", "bad.toml", "--out", "bad"]);
    assert_eq!(code(&out), 2);
    let out = drm(tmp.path(), &["fit", data.to_str().unwrap(), "--r-u", "1.5", "--out", "bad"]);
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("bad").exists());
}

#[test]
fn batch_writes_one_bundle_per_target_pair() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(tmp.path(), "linear-age");
    let out = drm(tmp.path(), &["fit", data.to_str().unwrap(), "--batch", "--out", "batch"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("batch");
    assert_eq!(column(&dir.join("comparison.csv"), "r_u"), ["0.7", "0.8", "0.9", "0.95"]);
    assert!(column(&dir.join("comparison.csv"), "r_v").iter().all(|r| r == "0.7"));
    for sub in column(&dir.join("comparison.csv"), "directory") {
        assert_eq!(manifest(&dir.join(&sub))["status"], "converged");
    }
    assert!(fs::read_to_string(dir.join("comparison.svg")).unwrap().starts_with("<svg"));
    let out = drm(tmp.path(), &["report", "batch"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn output_directory_from_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_drm"))
        .args(["simulate", "--preset", "stationary"])
        .current_dir(tmp.path())
        .env("DRM_OUTPUT_DIR", tmp.path().join("envout"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(tmp.path().join("envout/stationary.csv").exists());
}

#[test]
fn verify_passes_and_catches_a_perturbed_solver() {
    let tmp = TempDir::new().unwrap();
    let ok = drm(tmp.path(), &["verify"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(!text.contains("FAIL"));
    assert!(text.contains("max oracle deviation"));
    let bad = drm(tmp.path(), &["verify", "--instances", "3", "--perturb", "1e-6"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

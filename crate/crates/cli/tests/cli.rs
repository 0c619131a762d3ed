use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn smml(args: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smml")).args(args).output().expect("binary runs")
}

fn smml_str(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smml")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

/// Writes `body` as `name` in `dir` with outputs going to `dir/out`.
fn config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("{body}\n[output]\ndirectory = \"out\"\n")).unwrap();
    path
}

/// A shipped example with its output redirected into `dir/out`.
fn example(dir: &Path, name: &str) -> PathBuf {
    let text = fs::read_to_string(configs().join(name)).unwrap();
    let text = text
        .lines()
        .filter(|l| !l.starts_with("directory"))
        .collect::<Vec<_>>()
        .join("\n")
        .replace("[output]", "[output]\ndirectory = \"out\"");
    for entry in fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            fs::copy(&p, dir.join(p.file_name().unwrap())).unwrap();
        }
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const GAUSSIAN_1D: &str = r#"
truncation_epsilon = 1e-12

[model]
family = "isotropic-gaussian"
dimension = 1

[prior]
kind = "gaussian"
mean = [0.5]
scale = 2.0

[solver]
n = 2

[oracle]
grid_points = 200
"#;

const GAUSSIAN_2D: &str = r#"
truncation_epsilon = 1e-12

[model]
family = "isotropic-gaussian"
dimension = 2

[prior]
kind = "gaussian"
mean = [0.0, 0.0]
scale = 1.5

[solver]
n = 3

[oracle]
grid_points = 1600
seeds = [0, 1]
"#;

#[test]
fn single_cell_asserts_the_prior_mean() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "n1.toml", &GAUSSIAN_1D.replace("n = 2", "n = 1"));
    let out = smml(&[Path::new("solve"), &cfg]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = json(&dir.path().join("out/result.json"));
    assert_eq!(doc["n"], 1);
    let a = doc["assertions"][0][0].as_f64().unwrap();
    let q = doc["coding_probabilities"][0].as_f64().unwrap();
    assert!((a - 0.5).abs() < 1e-8, "{a}");
    assert!((q - 1.0).abs() < 1e-12);
    assert_eq!(doc["schema_version"], 1);
}

#[test]
fn output_documents_echo_the_resolved_config() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "c.toml", GAUSSIAN_1D);
    assert_eq!(code(&smml(&[Path::new("solve"), &cfg])), 0);
    assert_eq!(code(&smml(&[Path::new("oracle"), &cfg])), 0);
    for name in ["result.json", "oracle.json"] {
        let c = &json(&dir.path().join("out").join(name))["config"];
        assert_eq!(c["solver"]["n"], 2);
        assert_eq!(c["solver"]["max_iterations"], 200);
        assert_eq!(c["solver"]["residual_tolerance"], 1e-8);
        assert_eq!(c["integration"]["method"], "adaptive");
        assert_eq!(c["oracle"]["truncation_epsilon"], 1e-12);
        assert_eq!(c["check"]["specs_per_face"], 10);
        assert_eq!(c["model"]["family"], "isotropic-gaussian");
        assert_eq!(c["prior"]["kind"], "gaussian");
    }
    let geometry = json(&dir.path().join("out/geometry.json"));
    assert_eq!(geometry["schema_version"], 1);
    assert_eq!(geometry["cells"].as_array().unwrap().len(), 2);
}

#[test]
fn malformed_configs_exit_1_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "n0.toml", &GAUSSIAN_1D.replace("n = 2", "n = 0"));
    let out = smml(&[Path::new("solve"), &cfg]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("solver.n"), "{err}");
    // line of `n = 0` in the written file
    let line = fs::read_to_string(&cfg).unwrap().lines().position(|l| l == "n = 0").unwrap() + 1;
    assert!(err.contains(&format!("n0.toml:{line}:")), "{err}");

    let cfg = config(dir.path(), "unknown.toml", &GAUSSIAN_1D.replace("n = 2", "n = 2\nrestart = 3"));
    let out = smml(&[Path::new("solve"), &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown key `restart`"), "{}", stderr(&out));

    let cfg = config(dir.path(), "dim.toml", &GAUSSIAN_1D.replace("mean = [0.5]", "mean = [0.5, 0.0]"));
    let out = smml(&[Path::new("solve"), &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("dimension"), "{}", stderr(&out));

    let cfg = config(dir.path(), "prior.toml", "[model]\nfamily = \"exponential-rate\"\n[prior]\nkind = \"gaussian\"\nmean = [-1.0]\nscale = 0.1\n");
    let out = smml(&[Path::new("solve"), &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("prior"), "{}", stderr(&out));

    let out = smml(&[Path::new("solve"), &dir.path().join("missing.toml")]);
    assert_eq!(code(&out), 1);
}

#[test]
fn non_convergence_exits_2_with_a_best_effort_result() {
    let dir = TempDir::new().unwrap();
    let body = GAUSSIAN_1D.replace("n = 2", "n = 3\nmax_iterations = 2\nwarmup_iterations = 2");
    let cfg = config(dir.path(), "c.toml", &body);
    let out = smml(&[Path::new("solve"), &cfg]);
    assert_eq!(code(&out), 2, "{}", stdout(&out));
    let doc = json(&dir.path().join("out/result.json"));
    assert_eq!(doc["converged"], false);
}

#[test]
fn figure_configuration_gives_eight_cells_and_passes_its_checks() {
    let dir = TempDir::new().unwrap();
    let cfg = example(dir.path(), "figure1.toml");
    let out = smml(&[Path::new("solve"), &cfg]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let svg = fs::read_to_string(dir.path().join("out/cells.svg")).unwrap();
    assert_eq!(svg.matches("<polygon").count(), 16, "8 filled cells plus 8 outlines");
    assert!(svg.contains("stroke=\"#000000\""));
    let result = dir.path().join("out/result.json");
    let out = smml(&[Path::new("check"), &cfg, &result]);
    let table = stdout(&out);
    assert_eq!(code(&out), 0, "{table}");
    assert!(!table.contains("FAIL"));

    let out = smml(&[Path::new("oracle"), &cfg]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let oracle = json(&dir.path().join("out/oracle.json"));
    assert_eq!(oracle["oracle"]["grid_points"], 12000);
    assert!(oracle["oracle"]["mismatch_fraction"].as_f64().unwrap() <= 0.01);
    let overlay = fs::read_to_string(dir.path().join("out/overlay.svg")).unwrap();
    assert_eq!(overlay.matches("<circle").count(), 12000);
    assert_eq!(overlay.matches("<polygon").count(), 8);
}

#[test]
fn perturbed_estimator_fails_the_first_variation_check() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "c.toml", GAUSSIAN_2D);
    assert_eq!(code(&smml(&[Path::new("solve"), &cfg])), 0);
    let result = dir.path().join("out/result.json");
    let out = smml(&[Path::new("check"), &cfg, &result]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));

    let mut doc = json(&result);
    let a = doc["assertions"][0][0].as_f64().unwrap();
    doc["assertions"][0][0] = (a + 0.05).into();
    let perturbed = dir.path().join("perturbed.json");
    fs::write(&perturbed, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    let out = smml(&[Path::new("check"), &cfg, &perturbed]);
    assert_eq!(code(&out), 2);
    let table = stdout(&out);
    let line = table.lines().find(|l| l.starts_with("first variation, deformed I1")).unwrap();
    assert!(line.ends_with("FAIL"), "{table}");

    let out = smml(&[Path::new("check"), &cfg, &dir.path().join("nope.json")]);
    assert_eq!(code(&out), 1);
    let other = config(dir.path(), "other.toml", &GAUSSIAN_2D.replace("scale = 1.5", "scale = 2.5"));
    let out = smml(&[Path::new("check"), &other, &result]);
    assert_eq!(code(&out), 1, "a result for another problem is rejected");
}

#[test]
fn oracle_runs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "c.toml", GAUSSIAN_2D);
    let read = |name: &str| fs::read(dir.path().join("out").join(name)).unwrap();
    assert_eq!(code(&smml(&[Path::new("oracle"), &cfg])), 0);
    let first: Vec<Vec<u8>> = ["oracle.json", "points.csv", "overlay.svg"].iter().map(|n| read(n)).collect();
    assert_eq!(code(&smml(&[Path::new("oracle"), &cfg])), 0);
    for (k, n) in ["oracle.json", "points.csv", "overlay.svg"].iter().enumerate() {
        assert!(read(n) == first[k], "{n} changed between runs");
    }
    let csv = String::from_utf8(first[1].clone()).unwrap();
    assert_eq!(csv.lines().next(), Some("x1,x2,weight,color"));
    assert_eq!(csv.lines().count(), 1601);
}

#[test]
fn oracle_exit_code_follows_the_threshold() {
    let dir = TempDir::new().unwrap();
    // a lattice too coarse to settle: a handful of points per class
    let body = GAUSSIAN_2D.replace("grid_points = 1600", "grid_points = 16\nmismatch_threshold = 0.0");
    let cfg = config(dir.path(), "c.toml", &body);
    let out = smml(&[Path::new("oracle"), &cfg]);
    let mismatch = json(&dir.path().join("out/oracle.json"))["oracle"]["mismatch_fraction"].as_f64().unwrap();
    assert_eq!(code(&out), if mismatch > 0.0 { 2 } else { 0 });
    let body = GAUSSIAN_2D.replace("seeds = [0, 1]", "seeds = [0, 1]\nmismatch_threshold = 1.0");
    let cfg = config(dir.path(), "d.toml", &body);
    assert_eq!(code(&smml(&[Path::new("oracle"), &cfg])), 0);
}

#[test]
fn export_is_byte_stable() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "c.toml", GAUSSIAN_2D);
    assert_eq!(code(&smml(&[Path::new("solve"), &cfg])), 0);
    let out_dir = dir.path().join("out");
    let result = out_dir.join("result.json");
    let result_s = result.to_str().unwrap();

    let once = dir.path().join("once.json");
    let twice = dir.path().join("twice.json");
    assert_eq!(code(&smml_str(&["export", result_s, "--format", "json", "-o", once.to_str().unwrap()])), 0);
    assert_eq!(code(&smml_str(&["export", once.to_str().unwrap(), "--format", "json", "-o", twice.to_str().unwrap()])), 0);
    assert_eq!(fs::read(&once).unwrap(), fs::read(&twice).unwrap());
    assert_eq!(fs::read(&once).unwrap(), fs::read(&result).unwrap());

    let svg = smml_str(&["export", result_s, "--format", "svg"]);
    assert_eq!(code(&svg), 0);
    assert_eq!(svg.stdout, fs::read(out_dir.join("cells.svg")).unwrap());
    assert_eq!(smml_str(&["export", result_s, "--format", "svg"]).stdout, svg.stdout);
    let csv = smml_str(&["export", result_s, "--format", "csv"]);
    assert_eq!(csv.stdout, fs::read(out_dir.join("cells.csv")).unwrap());

    assert_eq!(code(&smml_str(&["export", result_s, "--format", "png"])), 1);
    assert_eq!(code(&smml_str(&["export", "/nonexistent/result.json", "--format", "json"])), 1);
    assert_eq!(code(&smml_str(&["frobnicate"])), 1);
    assert_eq!(code(&smml_str(&["--help"])), 0);
}

#[test]
fn one_dimensional_svg_export_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "c.toml", GAUSSIAN_1D);
    assert_eq!(code(&smml(&[Path::new("solve"), &cfg])), 0);
    assert!(!dir.path().join("out/cells.svg").exists());
    let result = dir.path().join("out/result.json");
    assert_eq!(code(&smml_str(&["export", result.to_str().unwrap(), "--format", "svg"])), 1);
}

#[test]
fn shipped_one_dimensional_examples_solve_and_check() {
    for name in ["gaussian_1d.toml", "exponential.toml"] {
        let dir = TempDir::new().unwrap();
        let cfg = example(dir.path(), name);
        let out = smml(&[Path::new("solve"), &cfg]);
        assert_eq!(code(&out), 0, "{name}: {}", stderr(&out));
        let out = smml(&[Path::new("check"), &cfg, &dir.path().join("out/result.json")]);
        assert_eq!(code(&out), 0, "{name}: {}", stdout(&out));
        let out = smml(&[Path::new("oracle"), &cfg]);
        assert_eq!(code(&out), 0, "{name}: {}", stdout(&out));
    }
}

/// Every artifact of a small run against the checked-in copies. Set
/// `UPDATE_GOLDEN=1` to rewrite them after an intended change.
#[test]
fn artifacts_match_golden_files() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "golden.toml", &GAUSSIAN_2D.replace("grid_points = 1600", "grid_points = 400"));
    assert_eq!(code(&smml(&[Path::new("solve"), &cfg])), 0);
    assert_eq!(code(&smml(&[Path::new("oracle"), &cfg])), 0);
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let names = ["result.json", "geometry.json", "cells.svg", "cells.csv", "oracle.json", "points.csv", "overlay.svg"];
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(&golden).unwrap();
        for n in names {
            fs::copy(dir.path().join("out").join(n), golden.join(n)).unwrap();
        }
    }
    for n in names {
        let got = fs::read_to_string(dir.path().join("out").join(n)).unwrap();
        let want = fs::read_to_string(golden.join(n)).unwrap();
        assert!(got == want, "{n} differs from tests/golden/{n}");
    }
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const UNIT: &str = r#"
[system]
horizon = 1.0

[weight]
alpha = 0.75

[payoff]
family = "deterministic"
value = [1.0]

[simulation]
paths = 4
steps = 1024
seed = 7
"#;

const WIENER: &str = r#"
[system]
horizon = 1.0

[weight]
alpha = 0.75

[payoff]
family = "linear_wiener"
offset = [0.0]
loading = [[1.0]]

[simulation]
paths = 4000
steps = 256
seed = 7
ladder = [16, 64, 256]
"#;

struct Case {
    dir: TempDir,
}

impl Case {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Case { dir }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, command: &str, out: &str, extra: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lqrep"))
            .arg(command)
            .arg("--config")
            .arg(self.dir.path().join("run.toml"))
            .arg("--out")
            .arg(self.out(out))
            .args(extra)
            .output()
            .unwrap()
    }
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn replicate_unit_target() {
    let case = Case::new(UNIT);
    let o = case.run("replicate", "a", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let s = json(&case.out("a").join("summary.json"));
    assert_eq!(s["schema"], 1);
    assert_eq!(s["command"], "replicate");
    assert!((s["mu_bar"][0].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert!((s["closed_form_J*"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert!((s["cost"]["mean"].as_f64().unwrap() - 0.25).abs() < 1e-3);
    assert!(s["residual_rmse"].as_f64().unwrap() < 1e-3);
    let paths = std::fs::read_to_string(case.out("a").join("paths.csv")).unwrap();
    assert!(paths.starts_with("path_id,cost,residual,constraint,g_cost,l1,x_T_0"));
    assert_eq!(paths.lines().count(), 5);
}

#[test]
fn replicate_is_deterministic() {
    let case = Case::new(WIENER);
    for out in ["a", "b"] {
        assert_eq!(case.run("replicate", out, &[]).status.code(), Some(0));
    }
    for file in ["summary.json", "paths.csv", "trajectories.csv"] {
        let a = std::fs::read(case.out("a").join(file)).unwrap();
        let b = std::fs::read(case.out("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn seed_override_changes_output() {
    let case = Case::new(WIENER);
    case.run("replicate", "a", &[]);
    case.run("replicate", "b", &["--seed", "8"]);
    let a = json(&case.out("a").join("summary.json"));
    let b = json(&case.out("b").join("summary.json"));
    assert_eq!(b["seed"], 8);
    assert_ne!(a["cost"], b["cost"]);
}

#[test]
fn alpha_outside_range_is_rejected() {
    let case = Case::new(&UNIT.replace("alpha = 0.75", "alpha = 0.4"));
    let o = case.run("replicate", "a", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("weight.alpha"), "{}", text(&o));
}

#[test]
fn unknown_key_is_rejected() {
    let case = Case::new(&UNIT.replace("seed = 7", "seed = 7\nsead = 8"));
    let o = case.run("replicate", "a", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("sead"), "{}", text(&o));
}

#[test]
fn verify_passes_on_unit_target() {
    let case = Case::new(UNIT);
    let o = case.run("verify", "a", &[]);
    let t = text(&o);
    assert_eq!(o.status.code(), Some(0), "{t}");
    assert!(t.contains("μ̂ constant: pass"), "{t}");
    assert!(t.contains("terminal constraint met on every grid: pass"), "{t}");
    let v = json(&case.out("a").join("verify.json"));
    assert_eq!(v["command"], "verify");
}

#[test]
fn verify_passes_on_wiener_target() {
    let case = Case::new(WIENER);
    let o = case.run("verify", "a", &[]);
    let t = text(&o);
    assert_eq!(o.status.code(), Some(0), "{t}");
    assert!(t.contains("μ̂ martingale: pass"), "{t}");
    assert!(t.contains("residual RMSE strictly decreasing: pass"), "{t}");
}

#[test]
fn verify_catches_wrong_multipliers() {
    let tampered = WIENER.replace("seed = 7", "seed = 7\nriccati_alpha = 0.6").replace("paths = 4000", "paths = 10000");
    let case = Case::new(&tampered);
    let o = case.run("verify", "a", &[]);
    let t = text(&o);
    assert_eq!(o.status.code(), Some(2), "{t}");
    assert!(t.contains("cost consistency: FAIL"), "{t}");
}

#[test]
fn oracle_on_deterministic_target() {
    let case = Case::new(UNIT);
    let o = case.run("oracle", "a", &["--depths", "1,2,4"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let v = json(&case.out("a").join("oracle.json"));
    let rows = v["comparisons"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!((row["oracle_cost"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    }
}

#[test]
fn oracle_depth_limit() {
    let case = Case::new(UNIT);
    let o = case.run("oracle", "a", &["--depths", "13"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}

#[test]
fn bonds_deterministic_curve() {
    let case = Case::new(
        r#"
[weight]
alpha = 0.75

[application]
kind = "bonds"
maturities = [1.0, 3.0]
targets = [{ kind = "deterministic", value = 0.05 }, { kind = "deterministic", value = 0.08 }]
steps = [128, 128]

[simulation]
paths = 3
steps = 128
seed = 1
"#,
    );
    let o = case.run("bonds", "a", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let mut rd = csv::Reader::from_path(case.out("a").join("bonds.csv")).unwrap();
    let headers = rd.headers().unwrap().clone();
    assert_eq!(headers.iter().collect::<Vec<_>>(), ["path_id", "k", "f_k", "integral_r", "xi_hat_k"]);
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let k: usize = row[1].parse().unwrap();
        let xi: f64 = row[4].parse().unwrap();
        let expected = if k == 1 { (-0.05f64).exp() } else { (-0.13f64).exp() };
        assert!((xi - expected).abs() < 1e-9, "k={k} xi={xi}");
    }
    assert!(case.out("a").join("short_rates.csv").exists());
}

#[test]
fn decreasing_maturities_are_rejected() {
    let case = Case::new(
        r#"
[weight]
alpha = 0.75

[application]
kind = "bonds"
maturities = [2.0, 1.0]
targets = [{ kind = "deterministic", value = 0.05 }, { kind = "deterministic", value = 0.05 }]
steps = [64, 64]

[simulation]
paths = 2
steps = 64
seed = 1
"#,
    );
    let o = case.run("bonds", "a", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("application.maturities"), "{}", text(&o));
}

#[test]
fn missing_config_is_an_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_lqrep"))
        .args(["replicate", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

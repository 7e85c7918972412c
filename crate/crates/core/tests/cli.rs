mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use common::*;
use rand::Rng;
use swarmtrack::scenario::{weighted_offset, weighted_to_canonical, Format};
use swarmtrack::sim::{example1, Example1};
use swarmtrack::{Matrix, ScenarioConfig, Vector};

const TINY: &str = r#"
horizon = 2
seed = 3

[model]
a = [[1.0]]
b = [[1.0]]

[cost]
q = [[1.0]]
r = [[1.0]]
qbar = [[1.0]]
s = [1.0]

[[population.agents]]
alpha = 1.0
initial_state = [0.5]

[[population.agents]]
alpha = 0.5
gamma = 2.0
initial_state = [-0.5]

[controller]
kind = "lqr"
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swarmtrack"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn tiny_run_writes_expected_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "tiny.toml", TINY);
    let out = tmp.path().join("out");
    let (code, _, err) = run(&["run", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,agent,x_1,u_1");
    assert_eq!(lines.len(), 1 + 6);
    let agents: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(agents, ["0", "1", "2", "0", "1", "2"]);
    // deep row at t=1: (1/2)(1*0.5 + 0.5*(-0.5)) = 0.125, exactly representable
    let deep: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(deep, 0.125);
    assert!(out.join("metrics.json").exists() && out.join("config.resolved.json").exists());
}

#[test]
fn csv_floats_round_trip_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "tiny.toml", TINY);
    let config = ScenarioConfig::from_path(&sc, &[], None).unwrap();
    let log = swarmtrack::sim::run(&config).unwrap();
    let csv = swarmtrack::output::trajectory_csv(&log);
    for (line, step) in csv.lines().skip(1).step_by(3).zip(&log.steps) {
        let x: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(x.to_bits(), step.deep_state[0].to_bits());
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["small-rhc.toml", "example1-unconstrained.toml"] {
        let sc = scenarios().join(name);
        let mut bytes = Vec::new();
        for k in 0..2 {
            let out = tmp.path().join(format!("{name}-{k}"));
            let (code, _, err) = run(&["run", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
            assert_eq!(code, 0, "{err}");
            bytes.push((std::fs::read(out.join("trajectory.csv")).unwrap(), std::fs::read(out.join("metrics.json")).unwrap()));
        }
        assert!(bytes[0] == bytes[1], "{name} differs between runs");
    }
}

#[test]
fn resolved_config_round_trips() {
    for name in ["small-rhc.toml", "example1-attacked.toml", "example1-constrained.toml"] {
        let config = ScenarioConfig::from_path(&scenarios().join(name), &[], None).unwrap();
        let back = ScenarioConfig::from_str_with(&config.to_json(), Format::Json, &[], None).unwrap();
        assert_eq!(back, config, "{name}");
    }
}

#[test]
fn noisy_scenario_round_trips_and_repeats() {
    let text = format!("{TINY}\n[noise]\nstddev = [0.1]\n");
    let config = ScenarioConfig::from_str_with(&text, Format::Toml, &[], None).unwrap();
    assert_eq!(config.noise.as_ref().unwrap().seed, 4);
    let back = ScenarioConfig::from_str_with(&config.to_json(), Format::Json, &[], None).unwrap();
    assert_eq!(back, config);
    let a = swarmtrack::sim::run(&config).unwrap();
    let b = swarmtrack::sim::run(&config).unwrap();
    assert_eq!(swarmtrack::output::trajectory_csv(&a), swarmtrack::output::trajectory_csv(&b));
    assert!(a.metadata.noise && a.metadata.certainty_equivalence_exact);
}

#[test]
fn scenario_files_match_builders() {
    for (file, variant) in [
        ("example1-unconstrained.toml", Example1::Unconstrained),
        ("example1-constrained.toml", Example1::Constrained),
        ("example1-attacked.toml", Example1::Attacked),
    ] {
        let parsed = ScenarioConfig::from_path(&scenarios().join(file), &[], None).unwrap();
        assert_eq!(parsed, example1(variant).unwrap(), "{file}");
    }
}

#[test]
fn validate_reports_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write(tmp.path(), "good.toml", TINY);
    let (code, out, _) = run(&["validate", "--scenario", good.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.contains("valid"));
    let bad = write(tmp.path(), "bad.toml", &TINY.replace("r = [[1.0]]", "r = [[0.0]]"));
    let (code, _, err) = run(&["validate", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("R_t not positive definite at t=1"), "{err}");
    let rhc = write(tmp.path(), "rhc.toml", &TINY.replace("kind = \"lqr\"", "kind = \"rhc\"\nhorizon = 2"));
    let (code, _, err) = run(&["validate", "--scenario", rhc.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("RHC requires bounds"), "{err}");
    let garbled = write(tmp.path(), "garbled.toml", "horizon = [\n");
    let (code, _, err) = run(&["validate", "--scenario", garbled.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("line"), "{err}");
    let entries: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().collect();
    assert_eq!(entries.len(), 4);
}

#[test]
fn unknown_fields_are_rejected() {
    let text = TINY.replace("seed = 3", "seed = 3\nsede = 4");
    assert!(ScenarioConfig::from_str_with(&text, Format::Toml, &[], None).is_err());
}

#[test]
fn lqr_with_bounds_is_rejected() {
    let text = format!(
        "{TINY}\n[bounds]\na = [-1.0]\nb = [1.0]\nc = [-1.0]\nd = [1.0]\nabar = [-1.0]\nbbar = [1.0]\ncbar = [-1.0]\ndbar = [1.0]\n"
    );
    let err = ScenarioConfig::from_str_with(&text, Format::Toml, &[], None).unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn runtime_failure_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    // the initial state lies far outside the tightened state box
    let text = TINY.replace("kind = \"lqr\"", "kind = \"rhc\"\nhorizon = 2").replace("initial_state = [0.5]", "initial_state = [0.9]")
        + "\n[bounds]\na = [-1.0]\nb = [1.0]\nc = [-1.0]\nd = [1.0]\nabar = [-1.0]\nbbar = [1.0]\ncbar = [-1.0]\ndbar = [1.0]\n";
    let sc = write(tmp.path(), "rhc.toml", &text);
    let out = tmp.path().join("out");
    let (code, _, err) = run(&["run", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("t=1"), "{err}");
}

#[test]
fn existing_outputs_need_force() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "tiny.toml", TINY);
    let out = tmp.path().join("out");
    let args = ["run", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(run(&args).0, 0);
    let (code, _, err) = run(&args);
    assert_eq!(code, 2);
    assert!(err.contains("--force"), "{err}");
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(run(&forced).0, 0);
}

#[test]
fn overrides_and_seed_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = write(tmp.path(), "tiny.toml", TINY);
    let out = tmp.path().join("out");
    let (code, _, err) = run(&[
        "run",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "population.agents.0.initial_state=[0.25]",
        "--seed",
        "9",
    ]);
    assert_eq!(code, 0, "{err}");
    let echo = std::fs::read_to_string(out.join("config.resolved.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&echo).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["population"]["agents"][0]["initial_state"][0], 0.25);
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let sc = scenarios().join("small-rhc.toml");
    let (code, _, err) = run(&[
        "sweep",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--vary",
        "controller.lambda=0.3,0.6",
    ]);
    assert_eq!(code, 0, "{err}");
    for v in ["0.3", "0.6"] {
        assert!(out.join(format!("controller.lambda-{v}")).join("trajectory.csv").exists());
    }
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("controller.lambda,status,"));
}

#[test]
fn example1_writes_three_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ex");
    let (code, stdout, err) = run(&["example1", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    for v in ["unconstrained", "constrained", "attacked"] {
        let csv = std::fs::read_to_string(out.join(v).join("trajectory.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 100 * 101);
    }
    assert!(stdout.contains("attacked_distance"));
}

/// `(1/n)Σα_i(‖x_i − F x̄‖_Q + ‖u_i‖_R) + ‖x̄ − s‖_Q̄` evaluated directly.
#[allow(clippy::too_many_arguments)]
fn weighted_form(alphas: &[f64], x: &[Vector], u: &[Vector], q: &Matrix, r: &Matrix, qbar: &Matrix, f: &Matrix, s: &Vector) -> f64 {
    let n = alphas.len() as f64;
    let xbar = x.iter().zip(alphas).fold(Vector::zeros(s.len()), |acc, (xi, a)| acc + xi * *a) / n;
    let mut total = 0.0;
    for ((xi, ui), a) in x.iter().zip(u).zip(alphas) {
        let e = xi - f * &xbar;
        total += a * (e.dot(&(q * &e)) + ui.dot(&(r * ui)));
    }
    let e = &xbar - s;
    total / n + e.dot(&(qbar * &e))
}

#[test]
fn weighted_tracking_conversion_matches_on_random_data() {
    let mut r = rng(31);
    for _ in 0..200 {
        let n = r.random_range(2..=6);
        let d = r.random_range(1..=3);
        // factors with mean exactly one
        let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.1..2.0)).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let alphas: Vec<f64> = raw.iter().map(|a| a / mean).collect();
        let q = rand_psd(&mut r, d);
        let rw = rand_pd(&mut r, 1);
        let qbar = rand_pd(&mut r, d) * 10.0;
        let f = rand_mat(&mut r, d, d, 1.0);
        let s = rand_vec(&mut r, d, 2.0);
        let Ok((qc, sc)) = weighted_to_canonical(std::slice::from_ref(&q), std::slice::from_ref(&qbar), std::slice::from_ref(&s), std::slice::from_ref(&f)) else { continue };
        let x: Vec<Vector> = (0..n).map(|_| rand_vec(&mut r, d, 2.0)).collect();
        let u: Vec<Vector> = (0..n).map(|_| rand_vec(&mut r, 1, 2.0)).collect();
        let weighted = weighted_form(&alphas, &x, &u, &q, &rw, &qbar, &f, &s);
        let xbar = x.iter().zip(&alphas).fold(Vector::zeros(d), |acc, (xi, a)| acc + xi * *a) / n as f64;
        let mut canonical = 0.0;
        for ((xi, ui), a) in x.iter().zip(&u).zip(&alphas) {
            canonical += a * (xi.dot(&(&q * xi)) + ui.dot(&(&rw * ui)));
        }
        let e = &xbar - &sc[0];
        canonical = canonical / n as f64 + e.dot(&(&qc[0] * &e));
        let offset = weighted_offset(&qbar, &s, &qc[0], &sc[0]);
        assert!((canonical + offset - weighted).abs() <= 1e-9 * weighted.abs().max(1.0), "{canonical} + {offset} vs {weighted}");
    }
}

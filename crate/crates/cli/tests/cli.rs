use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tenseco"));
    for a in args {
        cmd.arg(a);
    }
    cmd.env("RUST_LOG", "info").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// Data lines of a CSV written by the tool, after the metadata comment.
fn csv_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let meta = lines.next().unwrap();
    assert!(meta.starts_with("# tenseco ") && meta.contains("config_sha256="), "{meta}");
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

const FREE_BAR: &str = r#"{
  "name": "free-bar",
  "topology": {"dimension": 3, "node_count": 2, "bars": [[0, 1]], "strings": []},
  "nodes": [[0.0, 0.0, 0.0], [0.3, 0.4, 1.2]],
  "fixed_nodes": [],
  "bar_masses": 1.0,
  "point_masses": 1.0,
  "string_stiffness": 1.0,
  "string_damping": 0.0,
  "prestress": 1.0,
  "descriptor": {"output_nodes": [1], "measured_nodes": [1], "measure_velocity": false, "disturbance_nodes": [1]}
}"#;

#[test]
fn linearize_single_bar() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("bar.json");
    fs::write(&model, FREE_BAR).unwrap();
    let out = dir.path().join("lin.json");
    let o = run(&[&"linearize", &model, &"--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&out);
    let mass = v["mass"].as_array().unwrap();
    assert_eq!(mass.len(), 6);
    assert!(mass.iter().all(|r| r.as_array().unwrap().len() == 6));
    assert!(v["meta"]["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn linearize_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let o = run(&[&"linearize", &data("beam.json"), &"--out", &a]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("class-1 model: 16 coordinates"), "{}", stderr(&o));
    run(&[&"linearize", &data("beam.json"), &"--out", &b]);
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    // load and emit again: the same bytes come back
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    let again = serde_json::to_string_pretty(&v).unwrap() + "\n";
    assert!(again.as_bytes() == &bytes[..]);
}

#[test]
fn reduce_counts_modes() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("bar.json");
    fs::write(&model, FREE_BAR).unwrap();
    let out = dir.path().join("red.json");
    assert_eq!(code(&run(&[&"reduce", &model, &"--out", &out])), 0);
    assert_eq!(json(&out)["modes"], 5);

    assert_eq!(code(&run(&[&"reduce", &data("beam.json"), &"--out", &out])), 0);
    let v = json(&out);
    assert_eq!(v["modes"], v["expected_modes"]);
    assert!(v["constraint_residual"].as_f64().unwrap() < 1e-10);
    assert!(v["stiffness_min_eigenvalue"].as_f64().unwrap() > 0.0);
}

#[test]
fn bounds_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one.csv");
    let o = run(&[
        &"bounds",
        &data("arm.json"),
        &"--problem",
        &data("arm_problem.json"),
        &"--kind",
        &"covariance",
        &"--prestress-scales",
        &"1",
        &"--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, "scale,bound,status,iterations");
    assert_eq!(rows.len(), 1);

    let out = dir.path().join("trend.csv");
    let o = run(&[
        &"bounds",
        &data("arm.json"),
        &"--problem",
        &data("arm_problem.json"),
        &"--kind",
        &"energy_to_energy",
        &"--prestress-scales",
        &"1,2,5,10",
        &"--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = csv_rows(&out);
    let values: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(values.len(), 4);
    assert!(rows.iter().all(|r| r[2] == "optimal"));
    assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{values:?}");
}

#[test]
fn codesign_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let sol = dir.path().join("sol.json");
    let o = run(&[&"codesign", &data("arm.json"), &data("arm_problem.json"), &"--target", &"budget", &"--out", &sol]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&sol)["verification"]["passed"], true);
    let o = run(&[&"verify", &data("arm.json"), &data("arm_problem.json"), &sol]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let mut v = json(&sol);
    let a = v["a_c"][0][0].as_f64().unwrap();
    v["a_c"][0][0] = Value::from(a + 1e3);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();
    let o = run(&[&"verify", &data("arm.json"), &data("arm_problem.json"), &bad]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn beam_codesign_history() {
    let dir = tempfile::tempdir().unwrap();
    let sol = dir.path().join("beam.json");
    let o = run(&[&"codesign", &data("beam.json"), &data("beam_problem.json"), &"--out", &sol]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&sol);
    let mut prev = v["z0"].as_f64().unwrap();
    for z in v["history"].as_array().unwrap() {
        let z = z.as_f64().unwrap();
        assert!(z <= prev + 1e-9 * prev.abs(), "{prev} → {z}");
        prev = z;
    }
    assert_eq!(v["status"], "stationary");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    // precisions at their caps already cost more than this budget
    let mut p = json(&data("arm_problem.json"));
    p["budget"] = Value::from(1.0);
    let tight = dir.path().join("tight.json");
    fs::write(&tight, p.to_string()).unwrap();
    let o = run(&[&"codesign", &data("arm.json"), &tight, &"--target", &"output_bound", &"--out", &out]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    assert_eq!(code(&run(&[&"reduce", &dir.path().join("missing.json"), &"--out", &out])), 4);
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"topology\": 3}").unwrap();
    assert_eq!(code(&run(&[&"linearize", &broken, &"--out", &out])), 4);
    let o = run(&[&"bounds", &data("arm.json"), &"--problem", &data("arm_problem.json"), &"--kind", &"nope", &"--out", &out]);
    assert_eq!(code(&o), 4);
}

fn sweep_file(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("sweep.json");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn one_cell_sweep_matches_codesign() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sweep_file(dir.path(), r#"{"axes": [{"parameter": "ubar_scale", "values": [1.0]}]}"#);
    let o = run(&[&"sweep", &data("arm.json"), &cfg, &"--problem", &data("arm_problem.json"), &"--out", &dir.path()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = csv_rows(&dir.path().join("sweep.csv"));
    assert_eq!(header, "ubar_scale,z,sum_gamma_a,sum_gamma_s,sum_alpha,status");
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][5], "pass");
    let sol = dir.path().join("sol.json");
    run(&[&"codesign", &data("arm.json"), &data("arm_problem.json"), &"--out", &sol]);
    let z = json(&sol)["z"].as_f64().unwrap();
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), z);
}

#[test]
fn sweep_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sweep_file(dir.path(), r#"{"axes": [{"parameter": "ybar_scale", "values": [1.0, 2.0]}]}"#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = |out: &Path, threads: &str| {
        run(&[
            &"sweep",
            &data("arm.json"),
            &cfg,
            &"--problem",
            &data("arm_problem.json"),
            &"--out",
            &out,
            &"--threads",
            &threads,
        ])
    };
    assert_eq!(code(&args(&a, "1")), 0);
    assert_eq!(code(&args(&b, "2")), 0);
    assert_eq!(fs::read(a.join("sweep.csv")).unwrap(), fs::read(b.join("sweep.csv")).unwrap());
}

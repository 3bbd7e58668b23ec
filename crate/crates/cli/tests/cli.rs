use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_affinedim"));
    cmd.args(args).env_remove("AFFINEDIM_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn command(cmd: &str, config: &Path, out: &Path) -> Output {
    run(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()], &[])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn halves() -> Value {
    json!([[[0.4, 0.0], [0.0, 0.4]], [[0.3, 0.1], [0.0, 0.3]]])
}

#[test]
fn empty_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({"ifs": {"maps": halves()}, "measure": {"kind": "bernoulli"}, "dq": {"q_grid": []}}),
    );
    let o = command("dq", &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("q_grid"));
}

#[test]
fn config_errors_carry_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, "{\n  \"ifs\": {\"maps\": [[[0.5]]]},\n  \"measure\": {\"kind\": \"bernoulli\"},\n  \"typo\": 1\n}").unwrap();
    let o = command("dq", &p, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn non_contraction_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({"ifs": {"maps": [[[1.2, 0.0], [0.0, 0.3]], [[0.3, 0.0], [0.0, 0.3]]]}, "measure": {"kind": "bernoulli"}}),
    );
    let o = command("pressure", &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn norm_hypothesis_is_enforced_per_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let maps = json!([[[0.6, 0.0], [0.0, 0.4]], [[0.6, 0.0], [0.0, 0.4]]]);
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({"ifs": {"maps": maps}, "measure": {"kind": "bernoulli"}, "sampling": {"n": 1000}}),
    );
    let o = command("verify", &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    let msg = stderr(&o);
    assert!(msg.contains("1/2") && msg.contains("random_per_node"), "{msg}");
}

#[test]
fn truncated_binary_cloud_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let base = json!({
        "seed": 3,
        "ifs": {"maps": halves()},
        "measure": {"kind": "bernoulli"},
        "sampling": {"n": 500}
    });
    let cfg = write(dir.path(), "c.json", &base);
    let out = dir.path().join("s");
    assert_eq!(command("sample", &cfg, &out).status.code(), Some(0));
    let bytes = std::fs::read(out.join("cloud.afpc")).unwrap();
    let cut = dir.path().join("cut.afpc");
    std::fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
    let mut e = base.clone();
    e["input"] = json!(cut.to_str().unwrap());
    let ecfg = write(dir.path(), "e.json", &e);
    let o = command("estimate", &ecfg, &dir.path().join("e"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("AFPC1"), "{}", stderr(&o));
}

#[test]
fn foreign_csv_square() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("x1,x2\n");
    // low-discrepancy fill of the unit square
    let g = 1.324_717_957_244_746_f64;
    for i in 0..200_000u32 {
        let x = (0.5 + f64::from(i) / g).fract();
        let y = (0.5 + f64::from(i) / (g * g)).fract();
        text.push_str(&format!("{x},{y}\n"));
    }
    let csv = dir.path().join("square.csv");
    std::fs::write(&csv, text).unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({
            "ifs": {"maps": halves()},
            "measure": {"kind": "bernoulli"},
            "input": csv.to_str().unwrap(),
            "estimator": {"schedule": {"l_min": 1, "l_max": 9}, "q_values": [1.0, 2.0]}
        }),
    );
    let out = dir.path().join("out");
    let o = command("estimate", &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("estimate.json")).unwrap()).unwrap();
    for e in report["estimates"]["mesh"].as_array().unwrap() {
        let v = e["value"].as_f64().unwrap();
        assert!((v - 2.0).abs() < 0.05, "{v}");
    }
}

#[test]
fn sample_then_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = 1.0 / 3.0;
    let sim = json!([[r, 0.0], [0.0, r]]);
    let base = json!({
        "seed": 12,
        "ifs": {"maps": [sim, sim, sim]},
        "measure": {"kind": "bernoulli"},
        "sampling": {"n": 100_000, "format": "csv", "svg": true},
        "estimator": {"schedule": {"l_min": 0, "l_max": 10}, "query_count": 500}
    });
    let cfg = write(dir.path(), "c.json", &base);
    let out = dir.path().join("s");
    assert_eq!(command("sample", &cfg, &out).status.code(), Some(0));
    assert!(out.join("cloud.csv.json").exists() && out.join("cloud.svg").exists());
    let mut e = base.clone();
    e["input"] = json!(out.join("cloud.csv").to_str().unwrap());
    let ecfg = write(dir.path(), "e.json", &e);
    let eout = dir.path().join("e");
    assert_eq!(command("estimate", &ecfg, &eout).status.code(), Some(0));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(eout.join("estimate.json")).unwrap()).unwrap();
    // the sidecar carries the provenance through the csv
    assert!(report["cloud"]["seeds"].as_array().unwrap().len() >= 3);
    let d = report["estimates"]["local"]["mean"].as_f64().unwrap();
    assert!((d - 1.0).abs() < 0.1, "{d}");
}

#[test]
fn fixed_translations_are_labelled() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({
            "ifs": {"maps": halves()},
            "measure": {"kind": "bernoulli"},
            "translations": {"kind": "fixed_per_map", "vectors": [[0.0, 0.0], [1.0, 0.5]]},
            "dq": {"q_grid": [1.0], "level": 6},
            "sampling": {"n": 20_000},
            "estimator": {"schedule": {"l_min": 0, "l_max": 8}, "query_count": 200}
        }),
    );
    let out = dir.path().join("out");
    let o = command("verify", &cfg, &out);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["label"].as_str().unwrap().starts_with("non-generic"));
    assert!(report["kernel"].is_null());
}

#[test]
fn gibbs_bracket_needs_markov() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &json!({"ifs": {"maps": halves()}, "measure": {"kind": "bernoulli"}}));
    assert_eq!(command("gibbs-bracket", &cfg, &dir.path().join("out")).status.code(), Some(2));
}

#[test]
fn threads_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({"ifs": {"maps": halves()}, "measure": {"kind": "bernoulli"}, "pressure": {"k_max": 6}}),
    );
    let args = |out: &str| {
        vec![
            "pressure".to_string(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
            "--out".into(),
            dir.path().join(out).to_str().unwrap().into(),
        ]
    };
    let a: Vec<String> = args("a");
    let a: Vec<&str> = a.iter().map(String::as_str).collect();
    assert_eq!(run(&a, &[("AFFINEDIM_THREADS", "3")]).status.code(), Some(0));
    let b: Vec<String> = args("b");
    let b: Vec<&str> = b.iter().map(String::as_str).collect();
    assert_eq!(run(&b, &[("AFFINEDIM_THREADS", "many")]).status.code(), Some(2));
    let table = std::fs::read_to_string(dir.path().join("a/pressure.tsv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 * 3 * 6);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({"seed": 1, "ifs": {"maps": halves()}, "measure": {"kind": "bernoulli"}, "sampling": {"n": 100}}),
    );
    let out = dir.path().join("out");
    let o = run(
        &["sample", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "99"],
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    let resolved: Value = serde_json::from_str(&std::fs::read_to_string(out.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 99);
    assert!(resolved["sampling"]["depth"].as_u64().unwrap() > 0);
}

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use sqzt_core::degradation::{degraded_levels, fit_degradation, DegradationParams};

fn sqzt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqzt"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SQZT_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = sqzt(args, cwd);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn sha256(path: &Path) -> String {
    Sha256::digest(std::fs::read(path).unwrap())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[test]
fn gen_is_deterministic_and_hashed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |out: &'static str| ["gen", "--n", "40", "--seq-len", "256", "--labels", "params", "--seed", "1", "--out", out];
    ok(&args("a.sqzt"), d);
    ok(&args("b.sqzt"), d);
    let (ha, hb) = (sha256(&d.join("a.sqzt")), sha256(&d.join("b.sqzt")));
    assert_eq!(ha, hb);

    let man = read_json(&d.join("a.sqzt.manifest.json"));
    assert_eq!(man["subcommand"], "gen");
    assert_eq!(man["outputs"][0]["sha256"], ha.as_str());
    assert_eq!(man["seeds"][0], 1);
    assert_eq!(man["config"]["count"], 40);
    assert_eq!(man["tool_version"], env!("CARGO_PKG_VERSION"));
    assert!(man["duration_s"].as_f64().unwrap() >= 0.0);

    ok(&["gen", "--n", "40", "--seq-len", "256", "--seed", "2", "--out", "c.sqzt"], d);
    assert_ne!(sha256(&d.join("c.sqzt")), ha);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["gen", "--n", "10"][..],
        &["gen", "--n", "10", "--labels", "bogus", "--out", "x"],
        &["covfit"],
        &["covfit", "--scan", "a.csv", "--data", "b.sqzt"],
        &["fit-degradation", "--points", "p.csv", "--metric", "log"],
        &["frobnicate"],
    ] {
        let out = sqzt(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert!(!dir.path().join("x").exists());
}

#[test]
fn runtime_errors_exit_1_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.csv"), "phase_rad,quadrature\n0.1,zzz\n").unwrap();
    for args in [
        &["predict", "--model", "missing.sqzm", "--scan", "bad.csv"][..],
        &["covfit", "--scan", "bad.csv"],
        &["gen", "--n", "10", "--r-min", "1", "--r-max", "0.5", "--out", "g.sqzt"],
    ] {
        let out = sqzt(args, d);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        let v: Value = serde_json::from_str(err.trim_end()).unwrap();
        assert!(v["error"].as_str().is_some_and(|s| !s.is_empty()));
        assert_eq!(v["subcommand"], args[0]);
    }
}

#[test]
fn fit_degradation_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let truth = DegradationParams::new(0.12, 0.035).unwrap();
    let points: Vec<_> = (0..12).map(|i| degraded_levels(0.1 + 0.127 * i as f64, &truth)).collect();
    let mut csv = String::from("sqz_db,asqz_db\n");
    for p in &points {
        csv.push_str(&format!("{:?},{:?}\n", p.sqz_db, p.asqz_db));
    }
    std::fs::write(d.join("pts.csv"), csv).unwrap();
    ok(&["fit-degradation", "--points", "pts.csv", "--curve-points", "20", "--out", "fit.json"], d);

    let v = read_json(&d.join("fit.json"));
    let fit = fit_degradation(&points).unwrap();
    let close = |key: &str, want: f64| {
        let got = v[key].as_f64().unwrap();
        assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-3), "{key}: {got} vs {want}");
    };
    close("loss", fit.params.loss);
    close("theta_pn", fit.params.theta_pn);
    close("objective", fit.objective);
    assert_eq!(v["points"].as_array().unwrap().len(), 12);
    assert_eq!(v["curve"].as_array().unwrap().len(), 20);
    assert_eq!(v["metric"], "db");

    let man = read_json(&d.join("fit.json.manifest.json"));
    assert_eq!(man["inputs"][0]["sha256"], sha256(&d.join("pts.csv")).as_str());
    assert_eq!(man["outputs"][0]["sha256"], sha256(&d.join("fit.json")).as_str());
}

#[test]
fn bad_points_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.csv"), "a,b\n1,2\n").unwrap();
    let out = sqzt(&["fit-degradation", "--points", "p.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn export_roundtrips_through_covfit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["export", "--r", "0.5", "--theta", "0.7", "--nth", "0.1", "--seed", "3", "--out", "s.csv"], d);
    ok(&["export", "--r", "0.5", "--theta", "0.7", "--nth", "0.1", "--seed", "3", "--out", "t.csv"], d);
    assert_eq!(sha256(&d.join("s.csv")), sha256(&d.join("t.csv")));
    let v: Value = serde_json::from_str(&ok(&["covfit", "--scan", "s.csv"], d)).unwrap();
    let p = &v["params"];
    assert!((p["r"].as_f64().unwrap() - 0.5).abs() < 0.1, "{v}");
    assert!((p["theta_s"].as_f64().unwrap() - 0.7).abs() < 0.1, "{v}");

    ok(&["gen", "--n", "3", "--seq-len", "128", "--seed", "4", "--out", "d.sqzt"], d);
    ok(&["export", "--data", "d.sqzt", "--index", "2", "--out", "r.csv"], d);
    let text = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert_eq!(text.lines().count(), 129);
    assert!(text.starts_with("phase_rad,quadrature\n"));
}

#[test]
fn json_output_uses_nine_digits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["export", "--r", "0.8", "--theta", "1.2", "--nth", "0.3", "--out", "s.csv"], d);
    let text = ok(&["covfit", "--scan", "s.csv"], d);
    let v: Value = serde_json::from_str(&text).unwrap();
    let mut floats = Vec::new();
    fn walk(v: &Value, out: &mut Vec<f64>) {
        match v {
            Value::Number(n) if n.is_f64() => out.push(n.as_f64().unwrap()),
            Value::Array(a) => a.iter().for_each(|x| walk(x, out)),
            Value::Object(m) => m.values().for_each(|x| walk(x, out)),
            _ => {}
        }
    }
    walk(&v, &mut floats);
    assert!(floats.len() > 5);
    for x in floats {
        let s = format!("{:e}", x);
        let digits = s.split('e').next().unwrap().chars().filter(char::is_ascii_digit).count();
        assert!(digits <= 9, "{s}");
    }
}

#[test]
fn train_predict_report_wiring() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "--n", "40", "--seed", "5", "--out", "p.sqzt"], d);
    let chol = ["gen", "--n", "40", "--seed", "6", "--labels", "cholesky", "--m", "6"];
    ok(&[&chol[..], &["--r-max", "0.5", "--nth-max", "0.2", "--out", "c.sqzt"]].concat(), d);
    let summary = ok(&["train", "--data", "p.sqzt", "--out", "char.sqzm", "--epochs", "1"], d);
    let s: Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(s["flatten_len"], 24);
    assert_eq!(s["train_count"].as_u64().unwrap() + s["val_count"].as_u64().unwrap(), 40);
    ok(&["train", "--data", "c.sqzt", "--out", "rec.sqzm", "--epochs", "1", "--hidden", "32"], d);
    let log = std::fs::read_to_string(d.join("char.sqzm.log")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch train_mse val_mse"));
    let man = read_json(&d.join("char.sqzm.manifest.json"));
    assert_eq!(man["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(man["config"]["model"]["width_scale"], 0.25);

    let pred: Value = serde_json::from_str(&ok(&["predict", "--model", "char.sqzm", "--data", "p.sqzt", "--index", "1"], d)).unwrap();
    assert_eq!(pred["head"], "characteristic");
    assert!(pred["params"]["r"].as_f64().is_some());
    assert!(pred["truth"]["params"]["r"].as_f64().is_some());

    // a 4096-point scan is thinned to the 1024 inputs
    ok(&["export", "--r", "0.3", "--theta", "0.2", "--nth", "0.05", "--out", "long.csv"], d);
    ok(&["predict", "--model", "rec.sqzm", "--scan", "long.csv", "--out", "rec.json"], d);
    let rec = read_json(&d.join("rec.json"));
    assert_eq!(rec["head"], "reconstruction");
    assert_eq!(rec["m"], 6);
    assert_eq!(rec["cholesky"].as_array().unwrap().len(), 36);
    assert!(d.join("rec.json.manifest.json").exists());

    let models = ["--char-model", "char.sqzm", "--recon-model", "rec.sqzm"];
    let rest = ["--m", "8", "--max-iter", "50", "--out", "report.json"];
    ok(&[&["report", "--scan", "long.csv"][..], &models, &rest].concat(), d);
    let r = read_json(&d.join("report.json"));
    for key in ["characteristic", "reconstruction", "covfit", "mle"] {
        let l = &r[key]["levels"];
        assert!(l["sqz_db"].is_number() && l["asqz_db"].is_number(), "{key}: {r}");
    }
    assert_eq!(r["points"], 4096);
    let man = read_json(&d.join("report.json.manifest.json"));
    assert_eq!(man["inputs"].as_array().unwrap().len(), 3);

    // swapped checkpoints are a runtime error
    let out = sqzt(&["report", "--scan", "long.csv", "--char-model", "rec.sqzm"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn short_scans_are_rejected_by_models() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen", "--n", "20", "--seed", "5", "--out", "p.sqzt"], d);
    ok(&["train", "--data", "p.sqzt", "--out", "m.sqzm", "--epochs", "1", "--val-fraction", "0.2"], d);
    ok(&["export", "--r", "0.3", "--points", "512", "--out", "short.csv"], d);
    let out = sqzt(&["predict", "--model", "m.sqzm", "--scan", "short.csv"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn threads_flag_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["--threads", "1", "gen", "--n", "30", "--seq-len", "64", "--seed", "8", "--out", "a.sqzt"], d);
    let out = Command::new(env!("CARGO_BIN_EXE_sqzt"))
        .args(["gen", "--n", "30", "--seq-len", "64", "--seed", "8", "--out", "b.sqzt"])
        .current_dir(d)
        .env("SQZT_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(sha256(&d.join("a.sqzt")), sha256(&d.join("b.sqzt")));
    let out = Command::new(env!("CARGO_BIN_EXE_sqzt"))
        .args(["gen", "--n", "3", "--out", "c.sqzt"])
        .current_dir(d)
        .env("SQZT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

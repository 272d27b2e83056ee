use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tf(project: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tinyforge"))
        .arg("--project")
        .arg(project)
        .args(args)
        .env_remove("TINYFORGE_PROFILE_DIR")
        .output()
        .expect("binary runs")
}

fn ok(project: &Path, args: &[&str]) -> String {
    let out = tf(project, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(project: &Path, args: &[&str]) -> Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let v: Value = serde_json::from_str(&ok(project, &full)).expect("stdout is one JSON document");
    assert_eq!(v["ok"], true);
    assert_eq!(v["command"], args[0]);
    v["result"].clone()
}

fn trained_project() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["init", "--synthetic", "--per-class", "8"]);
    ok(p, &["split", "--test-fraction", "0.25"]);
    ok(p, &["dsp"]);
    ok(p, &["train", "--epochs", "4"]);
    dir
}

#[test]
fn pipeline_produces_deployable_c() {
    let dir = trained_project();
    let p = dir.path();
    ok(p, &["quantize"]);
    ok(p, &["build"]);
    let src = std::fs::read_to_string(p.join("deploy/model.c")).unwrap();
    assert!(src.contains("model_invoke"));
    assert!(p.join("deploy/model.h").is_file());
    let est = json(p, &["estimate", "--profile", "nano33"]);
    assert!(est["estimate"]["total_latency_ms"].as_f64().unwrap() > 0.0);
    assert!(est["estimate"]["ram_bytes"].as_u64().unwrap() > 0);
    assert!(est["estimate"]["flash_bytes"].as_u64().unwrap() > 0);
    assert_eq!(est["fits"], true);
    let human = ok(p, &["estimate"]);
    assert!(human.contains("latency") && human.contains("fits"));
}

#[test]
fn every_subcommand_speaks_json() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(json(p, &["init", "--synthetic", "--per-class", "6"])["synthetic_samples"], 18);
    let wav = p.join("clip.wav");
    let tone: Vec<f32> = (0..16000).map(|i| (i as f32 * 0.2).sin() * 0.3).collect();
    std::fs::write(&wav, tinyforge::project::encode_wav(16000, &tone)).unwrap();
    let ing = json(p, &["ingest", wav.to_str().unwrap(), "--label", "mid"]);
    assert_eq!(ing["samples"].as_array().unwrap().len(), 1);
    let split = json(p, &["split"]);
    assert_eq!(split["total_samples"], 19);
    assert_eq!(json(p, &["stats"]), split);
    assert_eq!(json(p, &["dsp"])["shape"], serde_json::json!([50, 32]));
    assert!(json(p, &["train", "--epochs", "3"])["history"]["epochs"].as_array().unwrap().len() == 3);
    let eval = json(p, &["eval"]);
    let confusion = eval["report"]["confusion"].as_array().unwrap();
    assert_eq!(confusion.len(), 3);
    json(p, &["quantize"]);
    json(p, &["eval", "--dtype", "i8"]);
    assert!(json(p, &["build", "--dtype", "f32"])["files"][1] == "deploy/model.c");
    json(p, &["estimate", "--dtype", "f32"]);
    let run = json(p, &["run", wav.to_str().unwrap()]);
    assert_eq!(run["scores"].as_array().unwrap().len(), 3);
    let cal = json(p, &["calibrate", "--duration", "20", "--population", "8", "--generations", "3"]);
    assert!(!cal["report"]["front"].as_array().unwrap().is_empty());
    let tune = json(p, &["tune", "--trials", "2", "--epochs", "2"]);
    assert!(tune["ranking"].as_array().unwrap().len() <= 2);
}

#[test]
fn tuner_respects_constraints_and_selection_updates_impulse() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["init", "--synthetic", "--per-class", "6"]);
    ok(p, &["split"]);
    ok(p, &["tune", "--trials", "8", "--constraint", "ram=256k", "--epochs", "3"]);
    let md = std::fs::read_to_string(p.join("reports/tuner.md")).unwrap();
    let rows = md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Trial")).count();
    assert!(rows <= 8 && rows > 0, "{md}");
    let report: Value = serde_json::from_slice(&std::fs::read(p.join("reports/tuner.json")).unwrap()).unwrap();
    for row in report["ranking"].as_array().unwrap() {
        assert!(row["ram_total"].as_u64().unwrap() <= 256 * 1024);
    }
    let id = report["ranking"][0]["trial_id"].as_u64().unwrap().to_string();
    let before = std::fs::read_to_string(p.join("impulse.json")).unwrap();
    ok(p, &["tune", "--select", &id]);
    let after: Value = serde_json::from_str(&std::fs::read_to_string(p.join("impulse.json")).unwrap()).unwrap();
    let trial = report["trials"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["trial_id"].as_u64().map(|v| v.to_string()).as_deref() == Some(id.as_str()))
        .unwrap();
    assert_eq!(after["dsp"], trial["config"]["dsp"]);
    assert_ne!(before, after.to_string());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = trained_project();
    let p = dir.path();
    let files = [
        "artifacts/features_train.fvf",
        "artifacts/features.json",
        "artifacts/model_f32.json",
        "reports/train.json",
    ];
    let snap = |p: &Path| files.map(|f| std::fs::read(p.join(f)).unwrap());
    let first = snap(p);
    ok(p, &["dsp"]);
    ok(p, &["train", "--epochs", "4"]);
    assert!(first == snap(p));
}

#[test]
fn missing_prerequisites_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["init", "--synthetic", "--per-class", "4"]);
    let out = tf(p, &["build"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model_i8.json"));
    let out = tf(p, &["--json", "train"]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ok"], false);
    assert_eq!(v["error"]["kind"], "missing_artifact");
    assert!(v["error"]["message"].as_str().unwrap().contains("features.json"));

    let uninit = tempfile::tempdir().unwrap();
    let out = tf(uninit.path(), &["stats"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("init"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["tune", "--constraint", "ram"],
        &["tune", "--objective", "speed"],
        &["build", "--dtype", "f16"],
    ] {
        assert_eq!(tf(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
    let help = String::from_utf8(tf(dir.path(), &["--help"]).stdout).unwrap();
    for flag in ["--seed", "--profile", "--json", "--project"] {
        assert!(help.contains(flag));
    }
}

#[test]
fn lock_blocks_concurrent_commands() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["init"]);
    std::fs::write(p.join(".tinyforge.lock"), "1").unwrap();
    let out = tf(p, &["stats"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
    std::fs::remove_file(p.join(".tinyforge.lock")).unwrap();
    ok(p, &["init"]);
    assert!(!p.join(".tinyforge.lock").exists());
}

#[test]
fn profile_dir_overrides_builtins() {
    let dir = trained_project();
    let p = dir.path();
    let profiles = tempfile::tempdir().unwrap();
    std::fs::write(
        profiles.path().join("tiny.json"),
        r#"{"clock_hz": 16000000, "flash_capacity_bytes": 4096, "ram_capacity_bytes": 2048}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tinyforge"))
        .args(["--project", p.to_str().unwrap(), "--json", "--profile", "tiny", "estimate", "--dtype", "f32"])
        .env("TINYFORGE_PROFILE_DIR", profiles.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["result"]["profile"], "tiny");
    assert_eq!(v["result"]["fits"], false);
    assert!(!v["result"]["violations"].as_array().unwrap().is_empty());
    assert_eq!(tf(p, &["--profile", "tiny", "estimate"]).status.code(), Some(1));
}

#[test]
fn batch_run_over_feature_vectors() {
    let dir = trained_project();
    let p = dir.path();
    let input = p.join("artifacts/features_test.fvf");
    let out = p.join("scores.fvf");
    let r = json(
        p,
        &["run", "--features", input.to_str().unwrap(), "--output", out.to_str().unwrap()],
    );
    let n = r["vectors"].as_u64().unwrap() as usize;
    let scores = tinyforge::dsp::decode_fvf(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(scores.len(), n);
    assert!(scores.iter().all(|s| s.len() == 3 && (s.iter().sum::<f32>() - 1.0).abs() < 1e-4));
}

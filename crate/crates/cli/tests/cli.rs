use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "[collect]\ntrials = 1\n\n[train]\nepochs = 2\nbatch_size = 4\n";

fn run(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_metaself"));
    cmd.args(args).env_remove("METASELF_DATA").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args, &[]);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn zero_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-robots", "--count", "0", "--out", s(dir.path())], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("family").exists());
}

#[test]
fn missing_family_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["collect", "--out", s(dir.path())], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-robots"));
}

#[test]
fn missing_dataset_root_is_a_usage_error() {
    let out = run(&["gen-robots", "--count", "3"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generation_is_idempotent_and_guards_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("d");
    let first = ok(&["gen-robots", "--count", "10", "--seed", "0", "--out", s(&root)]);
    assert!(first.contains("rejection rate"));
    let manifest = std::fs::read_to_string(root.join("family/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 10);
    assert!(ok(&["gen-robots", "--count", "10", "--seed", "0", "--out", s(&root)]).contains("nothing to do"));
    assert_eq!(std::fs::read_to_string(root.join("family/manifest.jsonl")).unwrap(), manifest);
    let clash = run(&["gen-robots", "--count", "10", "--seed", "1", "--out", s(&root)], &[]);
    assert_eq!(clash.status.code(), Some(2));
    assert!(root.join("gen-robots.toml").exists());
}

#[test]
fn flags_override_file_and_env_overrides_file_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let from_file = dir.path().join("from-file");
    let from_env = dir.path().join("from-env");
    std::fs::write(&cfg, format!("robots = 3\ndataset_root = {:?}\n", s(&from_file))).unwrap();

    let out = run(&["gen-robots", "--config", s(&cfg), "--count", "4"], &[("METASELF_DATA", &from_env)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!from_file.exists());
    let lines = std::fs::read_to_string(from_env.join("family/manifest.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 4);
    let resolved = std::fs::read_to_string(from_env.join("gen-robots.toml")).unwrap();
    assert!(resolved.contains("robots = 4"), "{resolved}");

    let flag_root = dir.path().join("from-flag");
    let out = run(&["gen-robots", "--config", s(&cfg), "--out", s(&flag_root)], &[("METASELF_DATA", &from_env)]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(flag_root.join("family/manifest.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn invalid_config_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nbatch_sise = 3\n").unwrap();
    let out = run(&["gen-robots", "--config", s(&cfg), "--count", "2", "--out", s(dir.path())], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let cfg = tiny_config(dir.path());
    let c = s(&cfg);
    ok(&["gen-robots", "--config", c, "--count", "12", "--seed", "3", "--out", s(&root)]);

    // a capped first pass stands in for an interrupted collection
    let first = run(&["collect", "--config", c, "--out", s(&root), "--max-episodes", "5"], &[]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let second = run(&["collect", "--config", c, "--out", s(&root), "--test-count", "2"], &[]);
    let text = String::from_utf8_lossy(&second.stdout);
    assert!(text.contains("(5 already stored)"), "{text}");
    let manifest = std::fs::read_to_string(root.join("dataset.jsonl")).unwrap();
    let stored = manifest.lines().count() - 1;
    assert!(stored >= 8, "{manifest}");
    assert!(manifest.lines().next().unwrap().contains("episodes/shard-00000.bin"));
    if !second.status.success() {
        assert_eq!(second.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&second.stderr).contains("retry budget"));
    }

    ok(&["train", "--config", c, "--out", s(&root), "--arch", "om", "--run", "a"]);
    ok(&["train", "--config", c, "--out", s(&root), "--arch", "mlp", "--run", "b", "--rm-xyz"]);
    let run_dir = root.join("runs/a");
    for f in ["best.ckpt", "last.ckpt", "history.json", "config.resolved.toml"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let history: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);

    let ck_a = run_dir.join("best.ckpt");
    let ck_b = root.join("runs/b/best.ckpt");
    let table = ok(&["eval", "--out", s(&root), "--checkpoint", s(&ck_a)]);
    assert!(table.contains("Err-Dist Std") && table.contains("Jnt 6"), "{table}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("eval-test.json")).unwrap()).unwrap();
    assert_eq!(report["split"], "test");
    assert_eq!(report["report"]["metrics"]["count"], 2);
    assert_eq!(report["table"]["columns"].as_array().unwrap().len(), 9);
    assert_eq!(report["table"]["rows"].as_array().unwrap().len(), 3);

    let mismatched = run(&["eval", "--out", s(&root), "--checkpoint", s(&ck_a), "--rm-xyz"], &[]);
    assert_eq!(mismatched.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mismatched.stderr).contains("config error"));
    ok(&["eval", "--out", s(&root), "--checkpoint", s(&ck_b), "--rm-xyz", "--split", "val"]);

    let gate = run(&["eval", "--out", s(&root), "--checkpoint", s(&ck_a), "--gate", "--min-leg-acc", "1.01"], &[]);
    assert_eq!(gate.status.code(), Some(3));

    let ranking = ok(&[
        "compare",
        s(&run_dir.join("eval-test.json")),
        s(&root.join("runs/b/eval-val.json")),
    ]);
    assert!(ranking.contains("conv_se") && ranking.contains("mlp-rm_xyz"), "{ranking}");

    let code = manifest.lines().nth(1).unwrap();
    let entry: serde_json::Value = serde_json::from_str(code).unwrap();
    let code: Vec<String> = entry["code"].as_array().unwrap().iter().map(|v| v.to_string()).collect();
    let code = code.join(",");
    let fixture = dir.path().join("fixture/ep.bin");
    ok(&["export-episode", "--out", s(&root), "--code", &code, "--file", s(&fixture)]);
    assert!(fixture.with_extension("json").exists());
    let by_file = ok(&["predict", "--checkpoint", s(&ck_a), "--episode", s(&fixture), "--json"]);
    let by_code = ok(&["predict", "--checkpoint", s(&ck_a), "--out", s(&root), "--code", &code, "--json"]);
    assert_eq!(by_file, by_code);
    let p: serde_json::Value = serde_json::from_str(&by_file).unwrap();
    assert_eq!(p["truth"], code);
    assert_eq!(p["confidence"].as_array().unwrap().len(), 7);
    assert!(p["confidence"].as_array().unwrap().iter().all(|c| (0.0..=1.0).contains(&c.as_f64().unwrap())));
    let human = ok(&["predict", "--checkpoint", s(&ck_a), "--episode", s(&fixture)]);
    assert!(human.contains("predicted code:") && human.contains("leg "), "{human}");

    let bad = run(&["predict", "--checkpoint", s(&ck_a), "--episode", s(&fixture), "--rm-xyz"], &[]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("x.ckpt");
    std::fs::write(&ck, b"not a checkpoint").unwrap();
    let out = run(&["predict", "--checkpoint", s(&ck), "--episode", s(&ck)], &[]);
    assert_eq!(out.status.code(), Some(2));
}

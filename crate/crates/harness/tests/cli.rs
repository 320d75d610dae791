use std::path::Path;
use std::process::{Command, Output};

use lamp_core::pipeline::{MetricsTable, FINETUNE_COLUMNS, PRETRAIN_COLUMNS};

const TINY: &str = r#"{"warmup":100,"update_every":2,"eval_every":200,"eval_episodes":2,"probe_episodes":1,"prompt_count":8,"agent":{"hidden":[32,32],"batch_size":32}}"#;

fn lamp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lamp"))
        .args(args)
        .current_dir(cwd)
        .env("LAMP_THREADS", "1")
        .output()
        .expect("spawn lamp")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p.display().to_string()
}

fn table(path: &Path) -> MetricsTable {
    MetricsTable::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn prompts_writes_a_tsv() {
    let d = tempfile::tempdir().unwrap();
    ok(lamp(&["prompts", "--style", "2", "--count", "12", "--out", "p.tsv"], d.path()));
    let text = std::fs::read_to_string(d.path().join("p.tsv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows.len() >= 12, "{text}");
    assert!(rows.iter().skip(1).all(|r| r.contains('\t')));
}

#[test]
fn pretrain_is_reproducible_across_invocations() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny(d.path());
    for out in ["a", "b"] {
        ok(lamp(&["pretrain", "--config", &cfg, "--steps", "400", "--seed", "3", "--out", out], d.path()));
    }
    let a = std::fs::read(d.path().join("a/metrics.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.path().join("b/metrics.csv")).unwrap());
    assert_eq!(table(&d.path().join("a/metrics.csv")).columns, PRETRAIN_COLUMNS);

    // Same directory, different config: refused.
    let e = lamp(&["pretrain", "--config", &cfg, "--steps", "400", "--seed", "4", "--out", "a"], d.path());
    assert!(!e.status.success());
}

#[test]
fn missing_config_names_the_path() {
    let d = tempfile::tempdir().unwrap();
    let out = lamp(&["pretrain", "--config", "nowhere.json"], d.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.json"));
}

#[test]
fn unknown_flag_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let out = lamp(&["pretrain", "--frobnicate"], d.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.json"), r#"{"stepz":10}"#).unwrap();
    let out = lamp(&["pretrain", "--config", "bad.json"], d.path());
    assert!(!out.status.success());
}

#[test]
fn probe_writes_the_schema_and_a_summary() {
    let d = tempfile::tempdir().unwrap();
    let stdout = ok(lamp(
        &["probe", "--episodes", "3", "--prompt-style", "1", "--sigma", "0", "--out", "probe.csv", "--dump", "traj.json"],
        d.path(),
    ));
    assert!(stdout.contains("mean_spearman="), "{stdout}");
    let t = table(&d.path().join("probe.csv"));
    assert_eq!(t.columns, ["t", "r_lamp", "progress_truth", "prompt_id", "scorer"]);
    assert!(t.comment_field("config_hash").is_some());

    // Replaying dumped trajectories reproduces the rewards.
    ok(lamp(
        &["probe", "--episodes", "3", "--prompt-style", "1", "--sigma", "0", "--trajectories", "traj.json", "--out", "replay.csv"],
        d.path(),
    ));
    assert_eq!(t.column("r_lamp").unwrap(), table(&d.path().join("replay.csv")).column("r_lamp").unwrap());
}

#[test]
fn plot_renders_svg() {
    let d = tempfile::tempdir().unwrap();
    ok(lamp(&["probe", "--episodes", "2", "--out", "probe.csv"], d.path()));
    ok(lamp(&["plot", "probe.csv", "--out", "probe.svg"], d.path()));
    let svg = std::fs::read_to_string(d.path().join("probe.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("config_hash="));
    let out = lamp(&["plot", "probe.csv", "--y", "missing", "--out", "x.svg"], d.path());
    assert!(!out.status.success());
}

#[test]
fn finetune_and_evaluate() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny(d.path());
    ok(lamp(&["pretrain", "--config", &cfg, "--steps", "300", "--out", "pre"], d.path()));
    let summary = ok(lamp(
        &["finetune", "--config", &cfg, "--checkpoint", "pre", "--task", "reach", "--object", "mug", "--steps", "400", "--select-instruction", "4", "--out", "ft"],
        d.path(),
    ));
    assert!(summary.contains("final_return"), "{summary}");
    assert_eq!(table(&d.path().join("ft/metrics.csv")).columns, FINETUNE_COLUMNS);
    ok(lamp(&["finetune", "--config", &cfg, "--scratch", "--steps", "300", "--out", "scratch"], d.path()));

    let ev: serde_json::Value =
        serde_json::from_str(&ok(lamp(&["evaluate", "--config", &cfg, "--checkpoint", "ft", "--task", "reach", "--episodes", "2"], d.path()))).unwrap();
    assert!(ev.is_object());
    let expert: serde_json::Value =
        serde_json::from_str(&ok(lamp(&["evaluate", "--expert", "--task", "pick_up", "--episodes", "3"], d.path()))).unwrap();
    let random: serde_json::Value =
        serde_json::from_str(&ok(lamp(&["evaluate", "--random", "--task", "pick_up", "--episodes", "3"], d.path()))).unwrap();
    let sr = |v: &serde_json::Value| v["success_rate"].as_f64().unwrap();
    assert!(sr(&expert) > sr(&random), "{expert} vs {random}");
}

#[test]
fn tiny_grid_runs_and_resumes() {
    let d = tempfile::tempdir().unwrap();
    let mut base: serde_json::Value = serde_json::from_str(TINY).unwrap();
    base["eval_every"] = 100.into();
    let spec = serde_json::json!({
        "base": base,
        "methods": ["scratch", "lamp"],
        "seeds": [0],
        "tasks": ["reach"],
        "alphas": [0.9],
        "prompt_styles": [2],
        "scorers": ["r3m"],
        "pretrain_steps": 200,
        "finetune_steps": 200,
    });
    std::fs::write(d.path().join("grid.json"), spec.to_string()).unwrap();
    ok(lamp(&["grid", "--spec", "grid.json", "--out", "g"], d.path()));
    let report = |d: &Path| {
        let f = std::fs::read_dir(d.join("g"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("grid-"))
            .unwrap();
        std::fs::read_to_string(f).unwrap()
    };
    let first = report(d.path());
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    ok(lamp(&["grid", "--spec", "grid.json", "--out", "g"], d.path()));
    assert_eq!(first, report(d.path()));
}

use lamp_core::env::{ObjectClass, TaskKind, TaskSpec};
use lamp_core::pipeline::{
    run_finetune, run_pretrain, Checkpoint, MetricsTable, Precision, RunConfig, RunMode, FINETUNE_COLUMNS,
};
use lamp_core::prompts::PromptDataset;

fn tiny(mode: RunMode) -> RunConfig {
    let mut c = RunConfig {
        mode,
        seed: 5,
        steps: 400,
        warmup: 100,
        eval_every: 200,
        eval_episodes: 2,
        probe_episodes: 2,
        prompt_count: 8,
        task: TaskSpec::new(TaskKind::PickUp, ObjectClass::Mug),
        ..RunConfig::default()
    };
    c.env.horizon = 40;
    c.agent.hidden = vec![16];
    c.agent.batch_size = 16;
    c.ensemble.members = 3;
    c.ensemble.hidden = vec![16];
    c
}

#[test]
fn checkpoint_on_disk_finetunes_like_the_in_memory_one() {
    let dir = tempfile::tempdir().unwrap();
    let pre = run_pretrain(&tiny(RunMode::Pretrain)).unwrap();
    pre.checkpoint.save(dir.path()).unwrap();
    let loaded = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(loaded, pre.checkpoint);

    let cfg = tiny(RunMode::Finetune);
    let a = run_finetune(&pre.checkpoint, &cfg).unwrap();
    let b = run_finetune(&loaded, &cfg).unwrap();
    assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    assert_eq!(MetricsTable::parse(&a.metrics.to_csv()).unwrap().columns, FINETUNE_COLUMNS);
}

#[test]
fn prompt_dataset_survives_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let pre = run_pretrain(&tiny(RunMode::Pretrain)).unwrap();
    let path = dir.path().join("prompts.tsv");
    pre.dataset.save(&path).unwrap();
    assert_eq!(PromptDataset::load(&path).unwrap(), pre.dataset);
}

#[test]
fn double_precision_runs_are_deterministic() {
    let cfg = RunConfig {
        precision: Precision::F64,
        steps: 200,
        ..tiny(RunMode::Pretrain)
    };
    let a = run_pretrain(&cfg).unwrap();
    let b = run_pretrain(&cfg).unwrap();
    assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    assert_ne!(cfg.hash(), tiny(RunMode::Pretrain).hash());
}

#[test]
fn config_changes_change_the_hash() {
    let base = tiny(RunMode::Pretrain);
    let other = RunConfig { alpha: 0.5, ..base.clone() };
    assert_ne!(base.hash(), other.hash());
    assert_eq!(base.hash(), RunConfig::from_json(&base.to_json_pretty()).unwrap().hash());
}

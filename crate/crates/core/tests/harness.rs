//! Runs, sweeps and ablations through the library harness.

use fidec::harness::{
    ablate_metric, export_plots, rows_from_csv, run_train, sweep_teps, Checkpoint, ExportSpec, RunConfig,
    DEFAULT_TEPS_GRID,
};
use fidec::train::MetricKind;

fn small(out: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::default();
    for (k, v) in [
        ("data.size", "256"),
        ("train.steps", "40"),
        ("train.flow_warmup_steps", "40"),
        ("train.batch_size", "32"),
        ("train.hidden", "16,16"),
        ("train.log_interval", "10"),
        ("eval.samples", "200"),
        ("run.seeds", "0,1"),
    ] {
        c.set(k, v).unwrap();
    }
    c.out = out.to_path_buf();
    c
}

fn quiet(_: &str) {}

#[test]
fn relaunch_from_persisted_config_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&dir.path().join("a"));
    let first = run_train(&cfg, &mut quiet).unwrap();
    assert_eq!(first.len(), 2);

    let text = std::fs::read_to_string(cfg.out.join("config.txt")).unwrap();
    let mut again = RunConfig::from_text(&text).unwrap();
    assert_eq!(again, cfg);
    again.out = dir.path().join("b");
    let second = run_train(&again, &mut quiet).unwrap();
    assert_eq!(first, second);
    for seed in [0, 1] {
        let log = |d: &str| std::fs::read(dir.path().join(d).join(format!("seed_{seed}/metrics.jsonl"))).unwrap();
        assert_eq!(log("a"), log("b"));
    }
    let on_disk = rows_from_csv(&std::fs::read_to_string(cfg.out.join("report.csv")).unwrap()).unwrap();
    assert_eq!(on_disk, first);
}

#[test]
fn zero_steps_keeps_initial_map() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.train.steps = 0;
    cfg.seeds = vec![3];
    let rows = run_train(&cfg, &mut quiet).unwrap();
    assert_eq!(rows[0].constraint, None);
    assert_eq!(rows[0].value, rows[0].behavioral_value);
    let seed_dir = dir.path().join("seed_3");
    assert_eq!(std::fs::read_to_string(seed_dir.join("metrics.jsonl")).unwrap(), "");
    let ckpt = Checkpoint::load(&seed_dir.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.steps, 0);
    let (behavior, map) = ckpt.restore(&cfg.task().unwrap()).unwrap();
    let refined = map.apply(&[], &[0.3, -0.2]).unwrap();
    assert_eq!(refined, vec![0.3, -0.2]);
    assert_eq!(behavior.steps(), cfg.train.euler_steps);
}

#[test]
fn sweep_rows_follow_the_grid() {
    assert!(DEFAULT_TEPS_GRID.contains(&0.8));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.seeds = vec![0];
    let one = sweep_teps(&cfg, &[0.8], &mut quiet).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].t_eps, 0.8);

    let two = sweep_teps(&cfg, &[0.7, 0.8], &mut quiet).unwrap();
    assert_eq!(two.len(), 2);
    // The 0.8 arm is the same run whether or not other grid points are present.
    assert_eq!(two[1].value, one[0].value);
    assert!(sweep_teps(&cfg, &[], &mut quiet).is_err());
}

#[test]
fn identical_arms_give_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.seeds = vec![0];
    let r = ablate_metric(&cfg, &[], (MetricKind::Fisher, MetricKind::Fisher), &mut quiet).unwrap();
    assert!(r.pairs.iter().all(|p| p.delta() == 0.0));
}

#[test]
fn ablation_is_reproducible_across_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&dir.path().join("a"));
    cfg.seeds = vec![0];
    let tasks = vec!["bimodal".to_string(), "thin_manifold".to_string()];
    let arms = (MetricKind::Fisher, MetricKind::Isotropic);
    let a = ablate_metric(&cfg, &tasks, arms, &mut quiet).unwrap();
    cfg.out = dir.path().join("b");
    let b = ablate_metric(&cfg, &tasks, arms, &mut quiet).unwrap();
    assert_eq!(a, b);
    let deltas = a.deltas();
    assert_eq!(deltas.len(), 3);
    assert_eq!(deltas[2].0, "all");
    assert_eq!(deltas[2].1.n, 2);
    assert!(dir.path().join("a/deltas.csv").is_file());
}

#[test]
fn export_matches_requested_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(&dir.path().join("run"));
    cfg.seeds = vec![0];
    run_train(&cfg, &mut quiet).unwrap();
    let spec = ExportSpec {
        samples: 123,
        grid_points: 17,
        seed: None,
    };
    let s = export_plots(&cfg.out, &dir.path().join("plots"), &spec).unwrap();
    let lines = |p: &std::path::Path| std::fs::read_to_string(p).unwrap().lines().count();
    assert_eq!(lines(&s.samples_file), 1 + 2 * 123);
    assert_eq!(lines(&s.heatmap_file), 1 + 17 * 17);
    assert_eq!(s.grid, (17, 17));

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert!(export_plots(&empty, &dir.path().join("p2"), &spec).is_err());
    let missing_seed = ExportSpec { seed: Some(9), ..spec };
    assert!(export_plots(&cfg.out, &dir.path().join("p3"), &missing_seed).is_err());
}

#[test]
fn critic_mode_runs_through_the_harness() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.seeds = vec![0];
    cfg.set("train.q_source", "critic").unwrap();
    cfg.set("data.mode", "chain").unwrap();
    let rows = run_train(&cfg, &mut quiet).unwrap();
    assert!(rows[0].value.is_finite());
    let ckpt = Checkpoint::load(&dir.path().join("seed_0/checkpoint.json")).unwrap();
    assert!(ckpt.critic.is_some());
}

//! Training runs, sweeps and ablations driven by a [`RunConfig`].

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::envs::SyntheticTask;
use crate::error::{Error, Result};
use crate::flow::{standard_normal_vec, FlowPolicy, VelocityField};
use crate::train::{
    init_behavior, log_to_jsonl, pretrain_flow, BehaviorField, BehaviorPolicy, Critic, MetricKind, TrainOutcome,
    Trainer,
};
use crate::transport::{ResidualNet, TransportMap};

use super::config::RunConfig;
use super::report::{aggregate, aggregate_table, rows_to_csv, MeanStd, ReportRow};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Default perturbed-time grid of the sweep.
pub const DEFAULT_TEPS_GRID: [f64; 6] = [0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// Everything needed to resume sampling from a trained run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub steps: usize,
    pub residual: ResidualNet,
    /// `None` when the run used the task's exact behavior field.
    pub flow: Option<VelocityField>,
    pub euler_steps: usize,
    pub critic: Option<Critic>,
    pub lambda: f64,
}

impl Checkpoint {
    pub fn from_outcome(outcome: &TrainOutcome, seed: u64, steps: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            seed,
            steps,
            residual: outcome.map.residual().clone(),
            flow: match outcome.behavior.field() {
                BehaviorField::Learned(f) => Some(f.clone()),
                BehaviorField::Analytic(_) => None,
            },
            euler_steps: outcome.behavior.steps(),
            critic: outcome.critic.clone(),
            lambda: outcome.dual.lambda,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", c.version)));
        }
        Ok(c)
    }

    /// Behavior policy and transport map; `task` supplies the exact field when no flow was saved.
    pub fn restore(&self, task: &SyntheticTask) -> Result<(BehaviorPolicy, TransportMap<ResidualNet>)> {
        let field = match &self.flow {
            Some(f) => BehaviorField::Learned(f.clone()),
            None => BehaviorField::Analytic(task.clone()),
        };
        Ok((FlowPolicy::new(field, self.euler_steps)?, TransportMap::new(self.residual.clone())))
    }
}

/// The configured dataset: loaded from `data.path`, or generated from the task.
pub fn load_dataset(cfg: &RunConfig, task: &SyntheticTask) -> Result<OfflineDataset> {
    let ds = match &cfg.data.path {
        Some(p) => OfflineDataset::load(p)?,
        None => task.make_dataset(cfg.data.size, cfg.data.seed, cfg.data.mode)?,
    };
    let meta = ds.meta();
    if meta.state_dim != task.state_dim() || meta.action_dim != task.action_dim() {
        return Err(Error::InvalidInput(format!(
            "dataset has state/action dims {}/{}, task {} expects {}/{}",
            meta.state_dim,
            meta.action_dim,
            task.name(),
            task.state_dim(),
            task.action_dim()
        )));
    }
    Ok(ds)
}

/// Behavior policy after the configured flow warm-up for one seed.
pub fn pretrained_behavior(cfg: &RunConfig, dataset: &OfflineDataset, seed: u64) -> Result<BehaviorPolicy> {
    let train = cfg.train_for_seed(seed);
    let mut behavior = init_behavior(&train, dataset)?;
    if train.flow_warmup_steps > 0 {
        pretrain_flow(&mut behavior, dataset, &train, train.flow_warmup_steps)?;
    }
    Ok(behavior)
}

/// Trains one seed starting from `behavior`.
pub fn train_seed(
    cfg: &RunConfig,
    task: &SyntheticTask,
    dataset: &OfflineDataset,
    seed: u64,
    behavior: BehaviorPolicy,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::with_behavior(cfg.train_for_seed(seed), dataset, Some(task), behavior)?;
    trainer.run()?;
    Ok(trainer.finish())
}

const EVAL_STATES: usize = 32;

fn eval_states(task: &SyntheticTask, seed: u64) -> Vec<Vec<f64>> {
    if task.state_dim() == 0 {
        return vec![Vec::new()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0e7a);
    (0..EVAL_STATES).map(|_| task.sample_state(&mut rng)).collect()
}

struct Evaluation {
    value: f64,
    behavioral_value: f64,
    corridor_mass: f64,
    behavioral_corridor_mass: f64,
}

/// Monte-Carlo value and corridor mass of refined and behavioral actions on shared noise.
fn evaluate(
    task: &SyntheticTask,
    behavior: &BehaviorPolicy,
    map: &TransportMap<ResidualNet>,
    samples: usize,
    seed: u64,
) -> Result<Evaluation> {
    let states = eval_states(task, seed);
    let per_state = samples.div_ceil(states.len());
    let corridor = task.corridor();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1_5eed);
    let (mut v, mut bv, mut c, mut bc) = (0.0, 0.0, 0usize, 0usize);
    for s in &states {
        for _ in 0..per_state {
            let z = standard_normal_vec(&mut rng, behavior.action_dim());
            let (base, refined) = map.sample_refined(behavior, s, &z)?;
            v += task.q_value(s, &refined)?.0;
            bv += task.q_value(s, &base)?.0;
            c += usize::from(corridor.contains(&refined));
            bc += usize::from(corridor.contains(&base));
        }
    }
    let n = (states.len() * per_state) as f64;
    Ok(Evaluation {
        value: v / n,
        behavioral_value: bv / n,
        corridor_mass: c as f64 / n,
        behavioral_corridor_mass: bc as f64 / n,
    })
}

pub fn report_row(
    run_id: &str,
    cfg: &RunConfig,
    task: &SyntheticTask,
    seed: u64,
    outcome: &TrainOutcome,
) -> Result<ReportRow> {
    let e = evaluate(task, &outcome.behavior, &outcome.map, cfg.eval_samples, seed)?;
    Ok(ReportRow {
        run_id: run_id.to_string(),
        task: task.name().to_string(),
        seed,
        metric: cfg.train.metric.kind,
        t_eps: cfg.train.metric.t_eps,
        value: e.value,
        behavioral_value: e.behavioral_value,
        corridor_mass: e.corridor_mass,
        behavioral_corridor_mass: e.behavioral_corridor_mass,
        constraint: outcome.log.last().map(|r| r.constraint),
        lambda: outcome.dual.lambda,
    })
}

fn write_summary(out: &Path, rows: &[ReportRow]) -> Result<String> {
    fs::write(out.join("report.csv"), rows_to_csv(rows))?;
    let table = aggregate_table(&aggregate(rows));
    fs::write(out.join("summary.txt"), &table)?;
    Ok(table)
}

/// Trains every seed of `cfg`, writing `config.txt`, `report.csv`, `summary.txt`
/// and `seed_<n>/{metrics.jsonl,checkpoint.json}` under `cfg.out`.
pub fn run_train(cfg: &RunConfig, progress: &mut dyn FnMut(&str)) -> Result<Vec<ReportRow>> {
    let task = cfg.task()?;
    let dataset = load_dataset(cfg, &task)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let behavior = pretrained_behavior(cfg, &dataset, seed)?;
        let outcome = train_seed(cfg, &task, &dataset, seed, behavior)?;
        let dir = cfg.out.join(format!("seed_{seed}"));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("metrics.jsonl"), log_to_jsonl(&outcome.log))?;
        Checkpoint::from_outcome(&outcome, seed, cfg.train.steps).save(&dir.join("checkpoint.json"))?;
        let row = report_row("train", cfg, &task, seed, &outcome)?;
        progress(&format!("seed {seed}: value {:.4} (behavioral {:.4})", row.value, row.behavioral_value));
        rows.push(row);
    }
    progress(&write_summary(&cfg.out, &rows)?);
    Ok(rows)
}

/// One run per `(t_eps, seed)`; the warmed-up flow of a seed is shared across the grid.
pub fn sweep_teps(cfg: &RunConfig, grid: &[f64], progress: &mut dyn FnMut(&str)) -> Result<Vec<ReportRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("t_eps grid is empty".into()));
    }
    let task = cfg.task()?;
    let dataset = load_dataset(cfg, &task)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let behavior = pretrained_behavior(cfg, &dataset, seed)?;
        for &t in grid {
            let mut arm = cfg.clone();
            arm.train.metric.t_eps = t;
            arm.validate()?;
            let outcome = train_seed(&arm, &task, &dataset, seed, behavior.clone())?;
            let row = report_row(&format!("teps_{t}"), &arm, &task, seed, &outcome)?;
            progress(&format!("seed {seed} t_eps {t}: value {:.4}", row.value));
            rows.push(row);
        }
    }
    progress(&write_summary(&cfg.out, &rows)?);
    Ok(rows)
}

/// Paired Fisher-vs-isotropic outcome of one `(task, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDelta {
    pub task: String,
    pub seed: u64,
    pub first: f64,
    pub second: f64,
}

impl PairedDelta {
    pub fn delta(&self) -> f64 {
        self.first - self.second
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub arms: (MetricKind, MetricKind),
    pub rows: Vec<ReportRow>,
    pub pairs: Vec<PairedDelta>,
}

impl AblationReport {
    /// Delta statistics per task, followed by the aggregate over all tasks under the key `all`.
    pub fn deltas(&self) -> Vec<(String, MeanStd)> {
        let mut tasks: Vec<String> = self.pairs.iter().map(|p| p.task.clone()).collect();
        tasks.dedup();
        let mut out: Vec<(String, MeanStd)> = tasks
            .into_iter()
            .map(|t| {
                let d: Vec<f64> = self.pairs.iter().filter(|p| p.task == t).map(PairedDelta::delta).collect();
                (t, MeanStd::of(&d))
            })
            .collect();
        let all: Vec<f64> = self.pairs.iter().map(PairedDelta::delta).collect();
        out.push(("all".to_string(), MeanStd::of(&all)));
        out
    }

    pub fn deltas_csv(&self) -> String {
        let mut s = format!("task,seed,{},{},delta\n", self.arms.0, self.arms.1);
        for p in &self.pairs {
            s.push_str(&format!("{},{},{},{},{}\n", p.task, p.seed, p.first, p.second, p.delta()));
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!("delta = {} - {} (mean ± std over seeds)\n", self.arms.0, self.arms.1);
        for (task, d) in self.deltas() {
            let wins = self
                .pairs
                .iter()
                .filter(|p| task == "all" || p.task == task)
                .filter(|p| p.delta() >= 0.0)
                .count();
            s.push_str(&format!("{task:<14} {d}  ({wins}/{} seeds with delta >= 0)\n", d.n));
        }
        s
    }
}

/// Runs two arms that differ only in metric kind on every `(task, seed)`.
pub fn ablate_metric(
    cfg: &RunConfig,
    tasks: &[String],
    arms: (MetricKind, MetricKind),
    progress: &mut dyn FnMut(&str),
) -> Result<AblationReport> {
    let names: Vec<String> = if tasks.is_empty() { vec![cfg.task.clone()] } else { tasks.to_vec() };
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    for name in &names {
        let mut base = cfg.clone();
        if *name != cfg.task {
            base.task = name.clone();
            base.task_params.clear();
            base.data.path = None;
        }
        let task = base.task()?;
        let dataset = load_dataset(&base, &task)?;
        for &seed in &cfg.seeds {
            let behavior = pretrained_behavior(&base, &dataset, seed)?;
            let mut values = [0.0; 2];
            for (i, kind) in [arms.0, arms.1].into_iter().enumerate() {
                let mut arm = base.clone();
                arm.train.metric.kind = kind;
                let outcome = train_seed(&arm, &task, &dataset, seed, behavior.clone())?;
                let row = report_row(&format!("{kind}"), &arm, &task, seed, &outcome)?;
                values[i] = row.value;
                rows.push(row);
            }
            progress(&format!(
                "{name} seed {seed}: {} {:.4}, {} {:.4}",
                arms.0, values[0], arms.1, values[1]
            ));
            pairs.push(PairedDelta {
                task: name.clone(),
                seed,
                first: values[0],
                second: values[1],
            });
        }
    }
    let report = AblationReport { arms, rows, pairs };
    fs::write(cfg.out.join("report.csv"), rows_to_csv(&report.rows))?;
    fs::write(cfg.out.join("deltas.csv"), report.deltas_csv())?;
    let summary = report.summary();
    fs::write(cfg.out.join("summary.txt"), &summary)?;
    progress(&summary);
    Ok(report)
}

//! Plain `key = value` run configuration with dotted keys.
//!
//! Every key has a default, so an empty file is a valid config. Serializing
//! writes every key in sorted order; parsing that text back yields the same
//! config, which makes a persisted config a complete description of a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::envs::{DatasetMode, SyntheticTask};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::train::{DualMode, MetricKind, QSource, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub size: usize,
    pub seed: u64,
    pub mode: DatasetMode,
    /// Load this dataset file instead of generating one.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: String,
    pub task_params: BTreeMap<String, String>,
    pub data: DataSpec,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub eval_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: "bimodal".into(),
            task_params: BTreeMap::new(),
            data: DataSpec {
                size: 4096,
                seed: 0,
                mode: DatasetMode::Bandit,
                path: None,
            },
            train: TrainConfig {
                batch_size: 128,
                flow_warmup_steps: 3000,
                flow_updates: false,
                steps: 1000,
                ..TrainConfig::default()
            },
            seeds: vec![0],
            out: PathBuf::from("runs/default"),
            eval_samples: 4000,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("{key} = {v:?} is not a valid value")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Parse(format!("{key} = {v:?} must be true or false"))),
    }
}

fn parse_opt(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "none" {
        Ok(None)
    } else {
        parse_value(key, v).map(Some)
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_value(key, x.trim())).collect()
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Parse(format!("line {}: duplicate key {k}", i + 1)));
        }
    }
    Ok(out)
}

/// Splits a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override {s:?} must look like key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::Parse(format!("override {s:?} has an empty key")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Every key with its current value.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("task.name", self.task.clone());
        put("data.size", self.data.size.to_string());
        put("data.seed", self.data.seed.to_string());
        put("data.mode", self.data.mode.to_string());
        put(
            "data.path",
            self.data.path.as_ref().map_or_else(String::new, |p| p.display().to_string()),
        );
        put("train.steps", t.steps.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.flow_lr", t.flow_lr.to_string());
        put("train.actor_lr", t.actor_lr.to_string());
        put("train.critic_lr", t.critic_lr.to_string());
        put("train.flow_warmup_steps", t.flow_warmup_steps.to_string());
        put("train.flow_updates", t.flow_updates.to_string());
        put("train.euler_steps", t.euler_steps.to_string());
        put("train.hidden", join(&t.hidden));
        put("train.activation", t.activation.to_string());
        put("train.max_displacement", fmt_opt(t.max_displacement));
        put("train.q_normalize", t.q_normalize.to_string());
        put("train.grad_clip", fmt_opt(t.grad_clip));
        put(
            "train.q_source",
            match t.q_source {
                QSource::Analytic => "analytic",
                QSource::Critic => "critic",
            }
            .to_string(),
        );
        put("train.log_interval", t.log_interval.to_string());
        put("metric.kind", t.metric.kind.to_string());
        put("metric.t_eps", t.metric.t_eps.to_string());
        put("metric.normalize", t.metric.normalize.to_string());
        put("metric.damping", t.metric.relative_damping.to_string());
        put("dual.lambda_init", t.lambda_init.to_string());
        put("dual.epsilon", t.epsilon.to_string());
        put("dual.eta", t.eta.to_string());
        put(
            "dual.mode",
            match t.dual_mode {
                DualMode::Direct => "direct",
                DualMode::Log => "log",
            }
            .to_string(),
        );
        put("critic.tau", t.tau.to_string());
        put("critic.gamma", t.gamma.to_string());
        put("run.seeds", join(&self.seeds));
        put("run.out", self.out.display().to_string());
        put("eval.samples", self.eval_samples.to_string());
        for (k, v) in &self.task_params {
            m.insert(format!("task.{k}"), v.clone());
        }
        m
    }

    /// Builds a config from defaults overlaid with `values`.
    pub fn from_map(values: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = RunConfig::default();
        for (k, v) in values {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "task.name" => self.task = v.to_string(),
            "data.size" => self.data.size = parse_value(key, v)?,
            "data.seed" => self.data.seed = parse_value(key, v)?,
            "data.mode" => self.data.mode = parse_value(key, v)?,
            "data.path" => self.data.path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "train.steps" => t.steps = parse_value(key, v)?,
            "train.batch_size" => t.batch_size = parse_value(key, v)?,
            "train.flow_lr" => t.flow_lr = parse_value(key, v)?,
            "train.actor_lr" => t.actor_lr = parse_value(key, v)?,
            "train.critic_lr" => t.critic_lr = parse_value(key, v)?,
            "train.flow_warmup_steps" => t.flow_warmup_steps = parse_value(key, v)?,
            "train.flow_updates" => t.flow_updates = parse_bool(key, v)?,
            "train.euler_steps" => t.euler_steps = parse_value(key, v)?,
            "train.hidden" => t.hidden = parse_list(key, v)?,
            "train.activation" => t.activation = v.parse::<Activation>()?,
            "train.max_displacement" => t.max_displacement = parse_opt(key, v)?,
            "train.q_normalize" => t.q_normalize = parse_bool(key, v)?,
            "train.grad_clip" => t.grad_clip = parse_opt(key, v)?,
            "train.q_source" => {
                t.q_source = match v {
                    "analytic" => QSource::Analytic,
                    "critic" => QSource::Critic,
                    _ => return Err(Error::Parse(format!("{key} must be analytic or critic"))),
                }
            }
            "train.log_interval" => t.log_interval = parse_value(key, v)?,
            "metric.kind" => t.metric.kind = v.parse::<MetricKind>()?,
            "metric.t_eps" => t.metric.t_eps = parse_value(key, v)?,
            "metric.normalize" => t.metric.normalize = parse_bool(key, v)?,
            "metric.damping" => t.metric.relative_damping = parse_value(key, v)?,
            "dual.lambda_init" => t.lambda_init = parse_value(key, v)?,
            "dual.epsilon" => t.epsilon = parse_value(key, v)?,
            "dual.eta" => t.eta = parse_value(key, v)?,
            "dual.mode" => {
                t.dual_mode = match v {
                    "direct" => DualMode::Direct,
                    "log" => DualMode::Log,
                    _ => return Err(Error::Parse(format!("{key} must be direct or log"))),
                }
            }
            "critic.tau" => t.tau = parse_value(key, v)?,
            "critic.gamma" => t.gamma = parse_value(key, v)?,
            "run.seeds" => self.seeds = parse_list(key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            "eval.samples" => self.eval_samples = parse_value(key, v)?,
            other => match other.strip_prefix("task.") {
                Some(param) if !param.is_empty() => {
                    self.task_params.insert(param.to_string(), v.to_string());
                }
                _ => return Err(Error::Parse(format!("unknown config key {other:?}"))),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.task()?;
        if self.seeds.is_empty() {
            return Err(Error::invalid("run.seeds must list at least one seed"));
        }
        if self.data.size == 0 && self.data.path.is_none() {
            return Err(Error::invalid("data.size must be positive"));
        }
        if self.eval_samples == 0 {
            return Err(Error::invalid("eval.samples must be positive"));
        }
        if self.train.hidden.is_empty() {
            return Err(Error::invalid("train.hidden needs at least one layer"));
        }
        Ok(())
    }

    pub fn task(&self) -> Result<SyntheticTask> {
        SyntheticTask::with_overrides(&self.task, &self.task_params)
    }

    pub fn to_text(&self) -> String {
        self.to_map()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text)?)
    }

    /// File values, then overrides in order; later values win.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut values = match path {
            Some(p) => parse_key_values(&std::fs::read_to_string(p)?)?,
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            values.insert(k.clone(), v.clone());
        }
        Self::from_map(&values)
    }

    /// The training config of one seed.
    pub fn train_for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_byte_identical() {
        let mut c = RunConfig::default();
        c.set("train.hidden", "32,16").unwrap();
        c.set("task.sigma", "0.35").unwrap();
        c.set("metric.t_eps", "0.7").unwrap();
        c.set("train.grad_clip", "none").unwrap();
        let text = c.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_text("# nothing\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "train.steps = 5\nmetric.kind = isotropic\n").unwrap();
        let c = RunConfig::load(Some(&p), &[parse_override("train.steps=7").unwrap()]).unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.train.metric.kind, MetricKind::Isotropic);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_text("nonsense\n").is_err());
        assert!(RunConfig::from_text("train.steps = many\n").is_err());
        assert!(RunConfig::from_text("train.unknown = 1\n").is_err());
        assert!(RunConfig::from_text("a = 1\na = 2\n").is_err());
        assert!(RunConfig::from_text("task.name = maze\n").is_err());
        assert!(RunConfig::from_text("run.seeds = \n").is_err());
        assert!(RunConfig::from_text("metric.t_eps = 1.0\n").is_err());
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn seed_list_and_options() {
        let c = RunConfig::from_text("run.seeds = 3, 4,5\ntrain.max_displacement = none\n").unwrap();
        assert_eq!(c.seeds, vec![3, 4, 5]);
        assert_eq!(c.train.max_displacement, None);
        assert_eq!(c.train_for_seed(4).seed, 4);
    }
}

//! Per-run report rows and their mean ± std aggregates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::train::MetricKind;

/// Final metrics of one (run, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run_id: String,
    pub task: String,
    pub seed: u64,
    pub metric: MetricKind,
    pub t_eps: f64,
    /// Mean true value of refined actions.
    pub value: f64,
    pub behavioral_value: f64,
    /// Fraction of refined samples inside the task's inter-mode corridor.
    pub corridor_mass: f64,
    pub behavioral_corridor_mass: f64,
    /// Constraint at the last training step; `None` when no step ran.
    pub constraint: Option<f64>,
    pub lambda: f64,
}

pub const CSV_HEADER: &str =
    "run_id,task,seed,metric,t_eps,value,behavioral_value,corridor_mass,behavioral_corridor_mass,constraint,lambda";

impl ReportRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.task,
            self.seed,
            self.metric,
            self.t_eps,
            self.value,
            self.behavioral_value,
            self.corridor_mass,
            self.behavioral_corridor_mass,
            self.constraint.map_or_else(String::new, |c| c.to_string()),
            self.lambda
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 11 {
            return Err(Error::Parse(format!("report row needs 11 fields, found {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::Parse(format!("field {i} of report row is not a number: {:?}", f[i])))
        };
        Ok(Self {
            run_id: f[0].to_string(),
            task: f[1].to_string(),
            seed: f[2].parse().map_err(|_| Error::Parse(format!("bad seed {:?}", f[2])))?,
            metric: f[3].parse()?,
            t_eps: num(4)?,
            value: num(5)?,
            behavioral_value: num(6)?,
            corridor_mass: num(7)?,
            behavioral_corridor_mass: num(8)?,
            constraint: if f[9].is_empty() { None } else { Some(num(9)?) },
            lambda: num(10)?,
        })
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Parse("report is missing its header".into())),
    }
    lines.filter(|l| !l.trim().is_empty()).map(ReportRow::from_csv).collect()
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Rows grouped by `(task, metric, t_eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub task: String,
    pub metric: MetricKind,
    pub t_eps: f64,
    pub value: MeanStd,
    pub behavioral_value: MeanStd,
    pub corridor_mass: MeanStd,
    pub lambda: MeanStd,
}

pub fn aggregate(rows: &[ReportRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, String, u64), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.task.clone(), r.metric.to_string(), r.t_eps.to_bits()))
            .or_default()
            .push(r);
    }
    let mut out: Vec<Aggregate> = groups
        .into_values()
        .map(|g| {
            let col = |f: fn(&ReportRow) -> f64| MeanStd::of(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            Aggregate {
                task: g[0].task.clone(),
                metric: g[0].metric,
                t_eps: g[0].t_eps,
                value: col(|r| r.value),
                behavioral_value: col(|r| r.behavioral_value),
                corridor_mass: col(|r| r.corridor_mass),
                lambda: col(|r| r.lambda),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.task.as_str(), a.metric.to_string())
            .cmp(&(b.task.as_str(), b.metric.to_string()))
            .then(a.t_eps.total_cmp(&b.t_eps))
    });
    out
}

pub fn aggregate_table(aggs: &[Aggregate]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:<9} {:>6} {:>3}  {:<18} {:<18} {:<18}",
        "task", "metric", "t_eps", "n", "value", "behavioral", "corridor mass"
    );
    for a in aggs {
        let _ = writeln!(
            s,
            "{:<14} {:<9} {:>6.2} {:>3}  {:<18} {:<18} {:<18}",
            a.task,
            a.metric.to_string(),
            a.t_eps,
            a.value.n,
            a.value.to_string(),
            a.behavioral_value.to_string(),
            a.corridor_mass.to_string()
        );
    }
    s
}

//! Offline transition datasets and their plain-text file format.
//!
//! ```text
//! # fidec-dataset v1 n=0 d=2 rows=3 generator=bimodal mode=bandit seed=7
//! # columns: a0,a1,r,terminal
//! -1.93,0.12,0.41,1
//! ```
//!
//! Columns are the state, the action, the reward, a 0/1 terminal flag and the
//! next state. Floats are written in shortest round-trip form, so a dataset
//! written twice from the same rows is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::flow::StateActionPoint;

pub const DATASET_MAGIC: &str = "fidec-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub next_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub state_dim: usize,
    pub action_dim: usize,
    pub generator: String,
    pub mode: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    meta: DatasetMeta,
    rows: Vec<Transition>,
}

impl OfflineDataset {
    pub fn new(meta: DatasetMeta, rows: Vec<Transition>) -> Result<Self> {
        for key in [&meta.generator, &meta.mode] {
            if key.is_empty() || key.contains(char::is_whitespace) || key.contains('=') {
                return Err(Error::invalid(format!("metadata value {key:?} must be a single token")));
            }
        }
        for row in &rows {
            check_dim("state", meta.state_dim, row.state.len())?;
            check_dim("action", meta.action_dim, row.action.len())?;
            check_dim("next state", meta.state_dim, row.next_state.len())?;
        }
        Ok(Self { meta, rows })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn rows(&self) -> &[Transition] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn state_action_points(&self) -> Vec<StateActionPoint> {
        self.rows
            .iter()
            .map(|r| StateActionPoint::new(r.state.clone(), r.action.clone()))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut out = format!(
            "# {DATASET_MAGIC} v{DATASET_VERSION} n={} d={} rows={} generator={} mode={} seed={}\n",
            m.state_dim,
            m.action_dim,
            self.rows.len(),
            m.generator,
            m.mode,
            m.seed
        );
        let mut cols: Vec<String> = (0..m.state_dim).map(|i| format!("s{i}")).collect();
        cols.extend((0..m.action_dim).map(|i| format!("a{i}")));
        cols.push("r".into());
        cols.push("terminal".into());
        cols.extend((0..m.state_dim).map(|i| format!("ns{i}")));
        let _ = writeln!(out, "# columns: {}", cols.join(","));
        for r in &self.rows {
            let mut fields: Vec<String> = r.state.iter().map(f64::to_string).collect();
            fields.extend(r.action.iter().map(f64::to_string));
            fields.push(r.reward.to_string());
            fields.push(if r.terminal { "1" } else { "0" }.into());
            fields.extend(r.next_state.iter().map(f64::to_string));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset file".into()))?;
        let meta_fields = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse("missing dataset header".into()))?;
        let mut tokens = meta_fields.split_whitespace();
        if tokens.next() != Some(DATASET_MAGIC) {
            return Err(Error::Parse("not a fidec dataset".into()));
        }
        let version = tokens.next().unwrap_or_default();
        if version != format!("v{DATASET_VERSION}") {
            return Err(Error::Parse(format!("unsupported dataset version {version:?}")));
        }
        let mut get = std::collections::BTreeMap::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field {tok:?}")))?;
            get.insert(k, v);
        }
        let field = |k: &str| {
            get.get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("header is missing {k}")))
        };
        let num = |k: &str| -> Result<u64> {
            field(k)?
                .parse()
                .map_err(|_| Error::Parse(format!("header field {k} is not an integer")))
        };
        let meta = DatasetMeta {
            state_dim: num("n")? as usize,
            action_dim: num("d")? as usize,
            generator: field("generator")?.to_string(),
            mode: field("mode")?.to_string(),
            seed: num("seed")?,
        };
        let expected_rows = num("rows")? as usize;
        let width = 2 * meta.state_dim + meta.action_dim + 2;
        let mut rows = Vec::with_capacity(expected_rows);
        for (i, line) in lines {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != width {
                return Err(Error::Parse(format!(
                    "line {}: expected {width} columns, found {}",
                    i + 1,
                    vals.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {s:?}", i + 1)))
            };
            let nums = vals.iter().map(|v| parse(v)).collect::<Result<Vec<f64>>>()?;
            let (n, d) = (meta.state_dim, meta.action_dim);
            let terminal = match vals[n + d + 1].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse(format!(
                        "line {}: terminal flag must be 0 or 1, found {other:?}",
                        i + 1
                    )))
                }
            };
            rows.push(Transition {
                state: nums[..n].to_vec(),
                action: nums[n..n + d].to_vec(),
                reward: nums[n + d],
                terminal,
                next_state: nums[n + d + 2..].to_vec(),
            });
        }
        if rows.len() != expected_rows {
            return Err(Error::Parse(format!(
                "header promises {expected_rows} rows, file has {}",
                rows.len()
            )));
        }
        Self::new(meta, rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

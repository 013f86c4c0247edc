//! Plot data: behavioral and refined sample clouds, and value/density heatmaps.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::standard_normal_vec;

use super::config::RunConfig;
use super::experiments::Checkpoint;

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSpec {
    pub samples: usize,
    /// Heatmap points per axis.
    pub grid_points: usize,
    /// Which seed's checkpoint to use; the first seed found when `None`.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub samples_file: PathBuf,
    pub heatmap_file: PathBuf,
    pub samples: usize,
    pub grid: (usize, usize),
}

fn find_checkpoint(run_dir: &Path, seed: Option<u64>) -> Result<(u64, PathBuf)> {
    if let Some(s) = seed {
        let p = run_dir.join(format!("seed_{s}")).join("checkpoint.json");
        return if p.is_file() {
            Ok((s, p))
        } else {
            Err(Error::InvalidInput(format!("no checkpoint for seed {s} in {}", run_dir.display())))
        };
    }
    let mut seeds: Vec<u64> = fs::read_dir(run_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix("seed_")?.parse().ok())
        .filter(|s: &u64| run_dir.join(format!("seed_{s}")).join("checkpoint.json").is_file())
        .collect();
    seeds.sort_unstable();
    let s = *seeds
        .first()
        .ok_or_else(|| Error::InvalidInput(format!("{} holds no trained run", run_dir.display())))?;
    Ok((s, run_dir.join(format!("seed_{s}")).join("checkpoint.json")))
}

/// Writes `samples.csv` (`state_index,kind,a0,a1,..`) and `heatmap.csv`
/// (`a0,a1,q,behavioral_density`) for the run in `run_dir` into `out`.
pub fn export_plots(run_dir: &Path, out: &Path, spec: &ExportSpec) -> Result<ExportSummary> {
    if spec.samples == 0 || spec.grid_points < 2 {
        return Err(Error::InvalidInput("need samples > 0 and at least 2 grid points".into()));
    }
    let config_path = run_dir.join("config.txt");
    if !config_path.is_file() {
        return Err(Error::InvalidInput(format!("{} has no config.txt", run_dir.display())));
    }
    let cfg = RunConfig::from_text(&fs::read_to_string(&config_path)?)?;
    let task = cfg.task()?;
    let (seed, ckpt_path) = find_checkpoint(run_dir, spec.seed)?;
    let (behavior, map) = Checkpoint::load(&ckpt_path)?.restore(&task)?;
    let d = task.action_dim();
    if d != 2 {
        return Err(Error::InvalidInput("plot export supports two-dimensional actions".into()));
    }

    fs::create_dir_all(out)?;
    let state = if task.state_dim() == 0 {
        Vec::new()
    } else {
        vec![0.0; task.state_dim()]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = String::from("kind,a0,a1\n");
    for _ in 0..spec.samples {
        let z = standard_normal_vec(&mut rng, d);
        let (base, refined) = map.sample_refined(&behavior, &state, &z)?;
        samples.push_str(&format!("behavioral,{},{}\n", base[0], base[1]));
        samples.push_str(&format!("refined,{},{}\n", refined[0], refined[1]));
    }
    let samples_file = out.join("samples.csv");
    fs::write(&samples_file, samples)?;

    let grid = task.quadrature_grid(spec.grid_points)?;
    let density = task.behavioral(&state)?;
    let mut heat = String::from("a0,a1,q,behavioral_density\n");
    for (a, _) in grid.nodes() {
        heat.push_str(&format!(
            "{},{},{},{}\n",
            a[0],
            a[1],
            task.q_value(&state, &a)?.0,
            density.density(&a)?
        ));
    }
    let heatmap_file = out.join("heatmap.csv");
    fs::write(&heatmap_file, heat)?;
    Ok(ExportSummary {
        samples_file,
        heatmap_file,
        samples: spec.samples,
        grid: (spec.grid_points, spec.grid_points),
    })
}

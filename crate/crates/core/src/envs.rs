//! Analytic two-dimensional action tasks: Gaussian-mixture behavior policies with
//! closed-form scores, smooth value landscapes built from Gaussian bumps, bands
//! and rings, and generators for offline datasets.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, OfflineDataset, Transition};
use crate::density::AnalyticDensity;
use crate::error::{check_dim, Error, Result};
use crate::flow::VelocitySource;
use crate::train::ActionValue;
use crate::transport::{GridAxis, GridSpec};

pub const TASK_NAMES: [&str; 2] = ["bimodal", "thin_manifold"];

/// One additive term of a value landscape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QTerm {
    /// `w exp(-|a - c|^2 / (2 h^2))`.
    Bump { center: [f64; 2], weight: f64, width: f64 },
    /// `w exp(-(n.a - o)^2 / (2 h^2))` with unit normal `n`.
    Band { normal: [f64; 2], offset: f64, weight: f64, width: f64 },
    /// `w exp(-(|a - c| - r)^2 / (2 h^2))`.
    Ring { center: [f64; 2], radius: f64, weight: f64, width: f64 },
}

impl QTerm {
    fn value_and_grad(&self, a: &[f64]) -> (f64, [f64; 2]) {
        match *self {
            QTerm::Bump { center, weight, width } => {
                let d = [a[0] - center[0], a[1] - center[1]];
                let v = weight * (-(d[0] * d[0] + d[1] * d[1]) / (2.0 * width * width)).exp();
                let k = -v / (width * width);
                (v, [k * d[0], k * d[1]])
            }
            QTerm::Band { normal, offset, weight, width } => {
                let u = normal[0] * a[0] + normal[1] * a[1] - offset;
                let v = weight * (-u * u / (2.0 * width * width)).exp();
                let k = -v * u / (width * width);
                (v, [k * normal[0], k * normal[1]])
            }
            QTerm::Ring { center, radius, weight, width } => {
                let d = [a[0] - center[0], a[1] - center[1]];
                let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
                let u = r - radius;
                let v = weight * (-u * u / (2.0 * width * width)).exp();
                if r == 0.0 {
                    return (v, [0.0, 0.0]);
                }
                let k = -v * u / (width * width) / r;
                (v, [k * d[0], k * d[1]])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QLandscapeKind {
    BimodalAsymmetric,
    SaddleBarrier,
    ThinManifoldCorridor,
    DetachedHotspot,
    Crescent,
}

impl QLandscapeKind {
    pub const ALL: [QLandscapeKind; 5] = [
        QLandscapeKind::BimodalAsymmetric,
        QLandscapeKind::SaddleBarrier,
        QLandscapeKind::ThinManifoldCorridor,
        QLandscapeKind::DetachedHotspot,
        QLandscapeKind::Crescent,
    ];
}

impl fmt::Display for QLandscapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QLandscapeKind::BimodalAsymmetric => "bimodal_asymmetric",
            QLandscapeKind::SaddleBarrier => "saddle_barrier",
            QLandscapeKind::ThinManifoldCorridor => "thin_manifold_corridor",
            QLandscapeKind::DetachedHotspot => "detached_hotspot",
            QLandscapeKind::Crescent => "crescent",
        })
    }
}

impl FromStr for QLandscapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QLandscapeKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Parse(format!("unknown landscape {s:?}")))
    }
}

/// Sum of [`QTerm`]s on a two-dimensional action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLandscape {
    pub kind: QLandscapeKind,
    pub terms: Vec<QTerm>,
}

fn arc_points(radius: f64, count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|k| {
            let th = if count == 1 { 0.0 } else { FRAC_PI_2 * k as f64 / (count - 1) as f64 };
            [radius * th.cos(), radius * th.sin()]
        })
        .collect()
}

impl QLandscape {
    /// Landscape with its default parameters. `radius` and `separation` place the
    /// features relative to the behavioral support.
    pub fn standard(kind: QLandscapeKind, separation: f64, radius: f64) -> Self {
        let s = separation;
        let terms = match kind {
            // Right mode preferred, left mode decent, a dip between them.
            QLandscapeKind::BimodalAsymmetric => vec![
                QTerm::Bump { center: [s + 0.3, 0.5], weight: 1.0, width: 0.6 },
                QTerm::Bump { center: [-s - 0.3, 0.5], weight: 0.6, width: 0.6 },
                QTerm::Band { normal: [1.0, 0.0], offset: 0.0, weight: -0.5, width: 0.5 },
            ],
            QLandscapeKind::SaddleBarrier => vec![
                QTerm::Bump { center: [s, 0.0], weight: 1.0, width: 0.8 },
                QTerm::Bump { center: [-s, 0.0], weight: 0.9, width: 0.8 },
                QTerm::Band { normal: [1.0, 0.0], offset: 0.0, weight: -1.0, width: 0.4 },
            ],
            QLandscapeKind::ThinManifoldCorridor => Self::arc_terms(radius),
            QLandscapeKind::DetachedHotspot => {
                let mut t = Self::arc_terms(radius);
                t.push(QTerm::Bump { center: [0.3 * radius, 0.3 * radius], weight: 2.0, width: 0.25 });
                t
            }
            QLandscapeKind::Crescent => vec![
                QTerm::Ring { center: [0.0, 0.0], radius, weight: 0.8, width: 0.3 },
                QTerm::Bump { center: arc_points(radius, 3)[1], weight: 0.7, width: 0.5 },
            ],
        };
        Self { kind, terms }
    }

    /// Bumps along the arc whose weights grow with the angle.
    fn arc_terms(radius: f64) -> Vec<QTerm> {
        let pts = arc_points(radius, 8);
        pts.iter()
            .enumerate()
            .map(|(k, c)| QTerm::Bump {
                center: *c,
                weight: 0.3 + 0.7 * k as f64 / 7.0,
                width: 0.35,
            })
            .collect()
    }

    pub fn value_and_grad(&self, a: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim("landscape action", 2, a.len())?;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("landscape evaluated at a non-finite action"));
        }
        let mut v = 0.0;
        let mut g = vec![0.0, 0.0];
        for t in &self.terms {
            let (tv, tg) = t.value_and_grad(a);
            v += tv;
            g[0] += tg[0];
            g[1] += tg[1];
        }
        Ok((v, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    /// One-step episodes: every row is terminal.
    Bandit,
    /// Two-step episodes, so TD targets bootstrap once.
    Chain,
}

impl fmt::Display for DatasetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetMode::Bandit => "bandit",
            DatasetMode::Chain => "chain",
        })
    }
}

impl FromStr for DatasetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bandit" => Ok(DatasetMode::Bandit),
            "chain" => Ok(DatasetMode::Chain),
            other => Err(Error::Parse(format!("unknown dataset mode {other:?}"))),
        }
    }
}

/// Low-density region between behavioral modes, used for the mode-averaging check.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub description: &'static str,
    /// Rectangle `[lo0, hi0] x [lo1, hi1]` minus nothing, or a disc when `disc_radius` is set.
    pub bounds: [(f64, f64); 2],
    pub disc_radius: Option<f64>,
    /// Upper bound on the behavioral density anywhere in the region.
    pub density_ceiling: f64,
}

impl Corridor {
    pub fn contains(&self, a: &[f64]) -> bool {
        match self.disc_radius {
            Some(r) => a[0] * a[0] + a[1] * a[1] <= r * r,
            None => {
                (self.bounds[0].0..=self.bounds[0].1).contains(&a[0])
                    && (self.bounds[1].0..=self.bounds[1].1).contains(&a[1])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Bimodal,
    ThinManifold,
}

/// A named synthetic task.
///
/// * `bimodal`: modes at `(±separation, 0)` with std `sigma`, landscape
///   `bimodal_asymmetric`. Overrides: `separation` (2.0), `sigma` (0.4),
///   `left_weight` (0.5), `landscape`, `state_dim` (0 or 2), `gate` (1.5).
/// * `thin_manifold`: eight components along the quarter circle of `radius`
///   (2.0) with std `sigma` (0.15), landscape `detached_hotspot`.
///
/// With `state_dim = 2` the state is standard normal and the mixture weights are
/// gated on its first coordinate with slope `gate`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    name: String,
    family: Family,
    means: Vec<Vec<f64>>,
    base_weights: Vec<f64>,
    sigma: f64,
    state_dim: usize,
    gate: f64,
    landscape: QLandscape,
    reward_noise: f64,
}

impl SyntheticTask {
    pub fn by_name(name: &str) -> Result<Self> {
        Self::with_overrides(name, &BTreeMap::new())
    }

    pub fn with_overrides(name: &str, overrides: &BTreeMap<String, String>) -> Result<Self> {
        let family = match name {
            "bimodal" => Family::Bimodal,
            "thin_manifold" => Family::ThinManifold,
            other => {
                return Err(Error::invalid(format!(
                    "unknown task {other:?}; known tasks: {}",
                    TASK_NAMES.join(", ")
                )))
            }
        };
        let allowed: &[&str] = match family {
            Family::Bimodal => &["separation", "sigma", "left_weight", "landscape", "state_dim", "gate", "reward_noise"],
            Family::ThinManifold => &["radius", "sigma", "landscape", "state_dim", "gate", "reward_noise"],
        };
        if let Some(k) = overrides.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::invalid(format!("task {name} has no parameter {k:?}")));
        }
        let num = |key: &str, default: f64| -> Result<f64> {
            match overrides.get(key) {
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("task parameter {key} = {v:?} is not a number"))),
                None => Ok(default),
            }
        };
        let state_dim = match num("state_dim", 0.0)? {
            0.0 => 0,
            2.0 => 2,
            x => return Err(Error::invalid(format!("state_dim must be 0 or 2, got {x}"))),
        };
        let gate = num("gate", 1.5)?;
        let reward_noise = num("reward_noise", 0.0)?;
        if reward_noise < 0.0 {
            return Err(Error::invalid("reward_noise must be non-negative"));
        }
        let (means, base_weights, sigma, default_kind, sep, radius) = match family {
            Family::Bimodal => {
                let sep = num("separation", 2.0)?;
                let left = num("left_weight", 0.5)?;
                if !(left > 0.0 && left < 1.0) {
                    return Err(Error::invalid("left_weight must lie in (0, 1)"));
                }
                (
                    vec![vec![-sep, 0.0], vec![sep, 0.0]],
                    vec![left, 1.0 - left],
                    num("sigma", 0.4)?,
                    QLandscapeKind::BimodalAsymmetric,
                    sep,
                    sep,
                )
            }
            Family::ThinManifold => {
                let radius = num("radius", 2.0)?;
                (
                    arc_points(radius, 8).iter().map(|p| p.to_vec()).collect(),
                    vec![1.0 / 8.0; 8],
                    num("sigma", 0.15)?,
                    QLandscapeKind::DetachedHotspot,
                    radius,
                    radius,
                )
            }
        };
        if !(sigma > 0.0) || !(sep > 0.0) {
            return Err(Error::invalid("task scales must be positive"));
        }
        let kind = match overrides.get("landscape") {
            Some(k) => k.parse()?,
            None => default_kind,
        };
        Ok(Self {
            name: name.to_string(),
            family,
            means,
            base_weights,
            sigma,
            state_dim,
            gate,
            landscape: QLandscape::standard(kind, sep, radius),
            reward_noise,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        2
    }

    pub fn landscape(&self) -> &QLandscape {
        &self.landscape
    }

    pub fn reward_noise(&self) -> f64 {
        self.reward_noise
    }

    fn weights(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_dim("task state", self.state_dim, state.len())?;
        if self.state_dim == 0 {
            return Ok(self.base_weights.clone());
        }
        let k = self.means.len();
        let logits: Vec<f64> = (0..k)
            .map(|i| {
                let pos = if k == 1 { 0.0 } else { 2.0 * i as f64 / (k - 1) as f64 - 1.0 };
                self.base_weights[i].ln() + self.gate * state[0] * pos
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(e.iter().map(|v| v / z).collect())
    }

    /// `pi_beta(. | s)`.
    pub fn behavioral(&self, state: &[f64]) -> Result<AnalyticDensity> {
        AnalyticDensity::isotropic_mixture(&self.weights(state)?, &self.means, self.sigma)
    }

    pub fn analytic_score(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.behavioral(state)?.score(action)
    }

    pub fn sample_behavioral<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        rng: &mut R,
        count: usize,
    ) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        Ok(self.behavioral(state)?.sample(rng, count))
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.state_dim).map(|_| StandardNormal.sample(rng)).collect()
    }

    pub fn q_value(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim("task state", self.state_dim, state.len())?;
        self.landscape.value_and_grad(action)
    }

    /// Tensor grid covering at least six standard deviations around every component.
    pub fn quadrature_grid(&self, points: usize) -> Result<GridSpec> {
        let pad = 6.0 * self.sigma;
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for m in &self.means {
            for j in 0..2 {
                lo[j] = lo[j].min(m[j] - pad);
                hi[j] = hi[j].max(m[j] + pad);
            }
        }
        GridSpec::new(
            (0..2)
                .map(|j| GridAxis { lo: lo[j], hi: hi[j], points })
                .collect(),
        )
    }

    /// Region between modes (bimodal: the strip `|a0| <= separation / 2`; thin
    /// manifold: the disc of radius `0.7 radius` inside the arc).
    pub fn corridor(&self) -> Corridor {
        match self.family {
            Family::Bimodal => {
                let sep = self.means[1][0];
                let half = 0.5 * sep;
                // Closest corridor point to a mode lies at distance sep - half.
                let peak = 1.0 / (2.0 * PI * self.sigma * self.sigma);
                let w = if self.state_dim == 0 {
                    self.base_weights.iter().cloned().fold(0.0, f64::max)
                } else {
                    1.0
                };
                let ceiling = 2.0 * w * peak * (-(sep - half).powi(2) / (2.0 * self.sigma * self.sigma)).exp();
                Corridor {
                    description: "strip between the two modes",
                    bounds: [(-half, half), (-sep - 6.0 * self.sigma, sep + 6.0 * self.sigma)],
                    disc_radius: None,
                    density_ceiling: ceiling,
                }
            }
            Family::ThinManifold => {
                let radius = (self.means[0][0].powi(2) + self.means[0][1].powi(2)).sqrt();
                let r = 0.7 * radius;
                let peak = 1.0 / (2.0 * PI * self.sigma * self.sigma);
                let ceiling = peak * (-(radius - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp();
                Corridor {
                    description: "disc inside the arc",
                    bounds: [(-r, r), (-r, r)],
                    disc_radius: Some(r),
                    density_ceiling: ceiling,
                }
            }
        }
    }

    /// Offline dataset of `size` rows with exact behavioral actions.
    pub fn make_dataset(&self, size: usize, seed: u64, mode: DatasetMode) -> Result<OfflineDataset> {
        if size == 0 {
            return Err(Error::invalid("dataset size must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(size);
        let reward = |s: &[f64], a: &[f64], rng: &mut ChaCha8Rng| -> Result<f64> {
            let (q, _) = self.q_value(s, a)?;
            let noise: f64 = StandardNormal.sample(rng);
            Ok(q + self.reward_noise * noise)
        };
        while rows.len() < size {
            let s0 = self.sample_state(&mut rng);
            let a0 = self.behavioral(&s0)?.sample_one(&mut rng);
            let r0 = reward(&s0, &a0, &mut rng)?;
            match mode {
                DatasetMode::Bandit => rows.push(Transition {
                    next_state: s0.clone(),
                    state: s0,
                    action: a0,
                    reward: r0,
                    terminal: true,
                }),
                DatasetMode::Chain => {
                    let s1: Vec<f64> = s0
                        .iter()
                        .zip(&a0)
                        .map(|(s, a)| 0.5 * s + 0.25 * a)
                        .collect();
                    rows.push(Transition {
                        state: s0,
                        action: a0,
                        reward: r0,
                        terminal: false,
                        next_state: s1.clone(),
                    });
                    if rows.len() < size {
                        let a1 = self.behavioral(&s1)?.sample_one(&mut rng);
                        let r1 = reward(&s1, &a1, &mut rng)?;
                        rows.push(Transition {
                            next_state: s1.clone(),
                            state: s1,
                            action: a1,
                            reward: r1,
                            terminal: true,
                        });
                    }
                }
            }
        }
        OfflineDataset::new(
            DatasetMeta {
                state_dim: self.state_dim,
                action_dim: 2,
                generator: self.name.clone(),
                mode: mode.to_string(),
                seed,
            },
            rows,
        )
    }
}

/// Exact flow velocity of the behavioral mixture at the given state.
impl VelocitySource for SyntheticTask {
    fn action_dim(&self) -> usize {
        2
    }

    fn velocity(&self, t: f64, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.behavioral(state)?.flow_velocity(t, action)
    }
}

impl ActionValue for SyntheticTask {
    fn value_and_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.q_value(state, action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(task: &SyntheticTask, s: &[f64], a: &[f64], h: f64) -> Vec<f64> {
        (0..2)
            .map(|j| {
                let mut up = a.to_vec();
                up[j] += h;
                let mut dn = a.to_vec();
                dn[j] -= h;
                (task.q_value(s, &up).unwrap().0 - task.q_value(s, &dn).unwrap().0) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn unknown_task_and_parameters() {
        assert!(SyntheticTask::by_name("maze").is_err());
        let mut o = BTreeMap::new();
        o.insert("radius".to_string(), "3".to_string());
        assert!(SyntheticTask::with_overrides("bimodal", &o).is_err());
        assert!(SyntheticTask::with_overrides("thin_manifold", &o).is_ok());
        o.insert("state_dim".to_string(), "1".to_string());
        assert!(SyntheticTask::with_overrides("thin_manifold", &o).is_err());
    }

    #[test]
    fn midpoint_score_vanishes() {
        let t = SyntheticTask::by_name("bimodal").unwrap();
        let s = t.analytic_score(&[], &[0.0, 0.0]).unwrap();
        assert!(s[0].abs() < 1e-12 && s[1].abs() < 1e-12);
    }

    #[test]
    fn landscape_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in QLandscapeKind::ALL {
            let mut o = BTreeMap::new();
            o.insert("landscape".to_string(), kind.to_string());
            let t = SyntheticTask::with_overrides("bimodal", &o).unwrap();
            for _ in 0..50 {
                let a = [rng.random_range(-3.5..3.5), rng.random_range(-2.5..2.5)];
                let (_, g) = t.q_value(&[], &a).unwrap();
                let fd = fd_grad(&t, &[], &a, 1e-5);
                for j in 0..2 {
                    let scale = g[j].abs().max(1e-3);
                    assert!((g[j] - fd[j]).abs() / scale < 1e-6, "{kind} {a:?}: {g:?} vs {fd:?}");
                }
            }
        }
    }

    #[test]
    fn bump_peak_has_zero_gradient() {
        let l = QLandscape {
            kind: QLandscapeKind::SaddleBarrier,
            terms: vec![QTerm::Bump { center: [1.0, -1.0], weight: 2.0, width: 0.3 }],
        };
        let (v, g) = l.value_and_grad(&[1.0, -1.0]).unwrap();
        assert_eq!((v, g), (2.0, vec![0.0, 0.0]));
    }

    #[test]
    fn hotspot_beats_support_maximum() {
        let t = SyntheticTask::by_name("thin_manifold").unwrap();
        let hotspot = t.q_value(&[], &[0.6, 0.6]).unwrap().0;
        let p = t.behavioral(&[]).unwrap();
        let grid = t.quadrature_grid(121).unwrap();
        let on_support = grid
            .nodes()
            .into_iter()
            .filter(|(x, _)| p.density(x).unwrap() > 0.05)
            .map(|(x, _)| t.q_value(&[], &x).unwrap().0)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(hotspot > on_support, "{hotspot} vs {on_support}");
        assert!(p.density(&[0.6, 0.6]).unwrap() < 1e-8);
    }

    #[test]
    fn behavioral_integrates_to_one() {
        for name in TASK_NAMES {
            let t = SyntheticTask::by_name(name).unwrap();
            let p = t.behavioral(&[]).unwrap();
            let mass: f64 = t
                .quadrature_grid(301)
                .unwrap()
                .nodes()
                .iter()
                .map(|(x, w)| w * p.density(x).unwrap())
                .sum();
            assert!((mass - 1.0).abs() < 1e-3, "{name}: {mass}");
        }
    }

    #[test]
    fn corridor_ceiling_bounds_density() {
        for name in TASK_NAMES {
            let t = SyntheticTask::by_name(name).unwrap();
            let c = t.corridor();
            let p = t.behavioral(&[]).unwrap();
            let grid = GridSpec::new(vec![
                GridAxis { lo: c.bounds[0].0, hi: c.bounds[0].1, points: 81 },
                GridAxis { lo: c.bounds[1].0, hi: c.bounds[1].1, points: 81 },
            ])
            .unwrap();
            for (x, _) in grid.nodes() {
                if c.contains(&x) {
                    assert!(p.density(&x).unwrap() <= c.density_ceiling * (1.0 + 1e-9));
                }
            }
        }
    }

    #[test]
    fn gated_weights_follow_state() {
        let mut o = BTreeMap::new();
        o.insert("state_dim".to_string(), "2".to_string());
        let t = SyntheticTask::with_overrides("bimodal", &o).unwrap();
        let right = t.behavioral(&[2.0, 0.0]).unwrap();
        assert!(right.components()[1].weight > 0.9);
        let left = t.behavioral(&[-2.0, 0.0]).unwrap();
        assert!(left.components()[0].weight > 0.9);
        assert!(t.behavioral(&[]).is_err());
    }

    #[test]
    fn datasets() {
        let t = SyntheticTask::by_name("bimodal").unwrap();
        let one = t.make_dataset(1, 0, DatasetMode::Bandit).unwrap();
        assert_eq!(one.len(), 1);
        let ds = t.make_dataset(50, 9, DatasetMode::Bandit).unwrap();
        for r in ds.rows() {
            assert!(r.terminal);
            assert_eq!(r.reward, t.q_value(&r.state, &r.action).unwrap().0);
        }
        assert_eq!(ds.to_text(), t.make_dataset(50, 9, DatasetMode::Bandit).unwrap().to_text());
        let chain = t.make_dataset(7, 1, DatasetMode::Chain).unwrap();
        assert_eq!(chain.len(), 7);
        assert!(!chain.rows()[0].terminal && chain.rows()[1].terminal);
        assert!(t.make_dataset(0, 1, DatasetMode::Chain).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let t = SyntheticTask::by_name("thin_manifold").unwrap();
        let a = t.sample_behavioral(&[], &mut ChaCha8Rng::seed_from_u64(4), 20).unwrap();
        let b = t.sample_behavioral(&[], &mut ChaCha8Rng::seed_from_u64(4), 20).unwrap();
        assert_eq!(a, b);
        assert!(t.sample_behavioral(&[], &mut ChaCha8Rng::seed_from_u64(4), 0).is_err());
    }
}

//! Score recovery from a velocity field and the local Fisher metric built on it.
//!
//! For the linear path the velocity and the time-t marginal score are tied by
//! `score_t(a) = (t v(t, s, a) - a) / (1 - t)`. The identity is singular at
//! `t = 1`, so the behavioral score is read off at a perturbed time `t_eps < 1`.
//! The metric is the outer product of that score, optionally rescaled to trace
//! `d` and damped by `mu I`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::flow::VelocitySource;

pub const DEFAULT_T_EPS: f64 = 0.8;

/// Damping is this fraction of `trace(M) / d`.
pub const DEFAULT_RELATIVE_DAMPING: f64 = 1e-3;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEstimate {
    pub score: Vec<f64>,
    pub t_eps: f64,
}

impl ScoreEstimate {
    pub fn new(score: Vec<f64>, t_eps: f64) -> Result<Self> {
        validate_t_eps(t_eps)?;
        if score.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("score estimate has non-finite entries"));
        }
        Ok(Self { score, t_eps })
    }

    /// The perturbation `eps = 1 - t_eps`.
    pub fn epsilon(&self) -> f64 {
        1.0 - self.t_eps
    }
}

fn validate_t_eps(t_eps: f64) -> Result<()> {
    if t_eps >= 1.0 {
        return Err(Error::invalid(format!(
            "perturbed time {t_eps} must stay below 1 (score identity is singular there)"
        )));
    }
    if !(t_eps > 0.0) {
        return Err(Error::invalid(format!("perturbed time {t_eps} must be positive")));
    }
    Ok(())
}

/// `(t v - a) / (1 - t)` for a precomputed velocity `v`.
pub fn score_from_velocity(velocity: &[f64], action: &[f64], t: f64) -> Vec<f64> {
    let eps = 1.0 - t;
    velocity
        .iter()
        .zip(action)
        .map(|(v, a)| (t * v - a) / eps)
        .collect()
}

pub fn perturbed_score<V: VelocitySource + ?Sized>(
    field: &V,
    state: &[f64],
    action: &[f64],
    t_eps: f64,
) -> Result<ScoreEstimate> {
    validate_t_eps(t_eps)?;
    let v = field.velocity(t_eps, state, action)?;
    ScoreEstimate::new(score_from_velocity(&v, action, t_eps), t_eps)
}

/// Symmetric positive semi-definite metric on the action space.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMetric {
    dim: usize,
    matrix: Vec<f64>,
    /// `u` with `matrix = u u^T + damping I`, when the metric has that form.
    rank_one: Option<Vec<f64>>,
    damping: f64,
    normalized: bool,
    degenerate: bool,
}

impl FisherMetric {
    /// The isotropic metric `I_d`.
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        (0..dim).for_each(|i| matrix[i * dim + i] = 1.0);
        Self {
            dim,
            matrix,
            rank_one: Some(vec![0.0; dim]),
            damping: 1.0,
            normalized: false,
            degenerate: false,
        }
    }

    /// Wraps an arbitrary row-major matrix after checking symmetry and PSD-ness.
    pub fn from_matrix(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        check_dim("metric entries", dim * dim, matrix.len())?;
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (matrix[i * dim + j], matrix[j * dim + i]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::invalid("metric matrix is not symmetric"));
                }
            }
        }
        let eig = DMatrix::from_row_slice(dim, dim, &matrix).symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -PSD_TOL) {
            return Err(Error::invalid("metric matrix is not positive semi-definite"));
        }
        let floor = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &l| a.min(l)).max(0.0);
        Ok(Self {
            dim,
            matrix,
            rank_one: None,
            damping: floor,
            normalized: false,
            degenerate: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major entries.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }

    /// Isotropic floor `mu` with `M >= mu I`; the smallest eigenvalue for wrapped matrices.
    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Set when a normalized metric was requested for a zero score.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.matrix)
    }

    /// `M v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim("metric argument", self.dim, v.len())?;
        Ok((0..self.dim)
            .map(|i| {
                let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
                row.iter().zip(v).map(|(m, x)| m * x).sum()
            })
            .collect())
    }
}

/// Relative damping rule: `rel * trace(s s^T) / d`, where the trace is `d`
/// after normalization.
pub fn relative_damping(score: &[f64], normalize: bool, rel: f64) -> f64 {
    let d = score.len() as f64;
    let trace = if normalize {
        d
    } else {
        score.iter().map(|v| v * v).sum()
    };
    rel * trace / d
}

/// `M = s s^T`, rescaled to trace `d` when `normalize`, plus `damping I`.
pub fn fisher_matrix(score: &ScoreEstimate, normalize: bool, damping: f64) -> Result<FisherMetric> {
    fisher_from_score(&score.score, normalize, damping)
}

pub fn fisher_from_score(score: &[f64], normalize: bool, damping: f64) -> Result<FisherMetric> {
    if !(damping >= 0.0 && damping.is_finite()) {
        return Err(Error::invalid("damping must be a non-negative finite number"));
    }
    if score.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("score has non-finite entries"));
    }
    let dim = score.len();
    let norm_sq: f64 = score.iter().map(|v| v * v).sum();
    let mut degenerate = false;
    let u: Vec<f64> = if normalize {
        if norm_sq == 0.0 {
            degenerate = true;
            vec![0.0; dim]
        } else {
            let scale = (dim as f64 / norm_sq).sqrt();
            score.iter().map(|v| v * scale).collect()
        }
    } else {
        score.to_vec()
    };
    let mut matrix = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            matrix[i * dim + j] = u[i] * u[j];
        }
        matrix[i * dim + i] += damping;
    }
    Ok(FisherMetric {
        dim,
        matrix,
        rank_one: Some(u),
        damping,
        normalized: normalize,
        degenerate,
    })
}

/// `1/2 delta^T M delta`.
pub fn quadratic_penalty(metric: &FisherMetric, delta: &[f64]) -> Result<f64> {
    let md = metric.apply(delta)?;
    // Clamp tiny negative round-off of a PSD form.
    Ok((0.5 * md.iter().zip(delta).map(|(a, b)| a * b).sum::<f64>()).max(0.0))
}

/// Solves `M x = g`, via Sherman-Morrison when `M = u u^T + mu I`.
pub fn damped_inverse_apply(metric: &FisherMetric, g: &[f64]) -> Result<Vec<f64>> {
    check_dim("right-hand side", metric.dim, g.len())?;
    let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if let Some(u) = &metric.rank_one {
        let mu = metric.damping;
        let uu: f64 = u.iter().map(|v| v * v).sum();
        let ug: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
        if mu > 0.0 {
            let coeff = ug / (mu + uu);
            return Ok(g.iter().zip(u).map(|(gi, ui)| (gi - coeff * ui) / mu).collect());
        }
        // Undamped rank-one metric: only right-hand sides along u are solvable.
        if uu == 0.0 {
            if g_norm == 0.0 {
                return Ok(vec![0.0; g.len()]);
            }
            return Err(Error::Singular("zero metric with non-zero right-hand side".into()));
        }
        let off_span = g
            .iter()
            .zip(u)
            .map(|(gi, ui)| (gi - ui * ug / uu).powi(2))
            .sum::<f64>()
            .sqrt();
        if off_span > 1e-10 * g_norm.max(f64::MIN_POSITIVE) {
            return Err(Error::Singular(
                "undamped rank-one metric cannot be inverted outside the score direction".into(),
            ));
        }
        return Ok(u.iter().map(|ui| ui * ug / (uu * uu)).collect());
    }
    let m = metric.to_nalgebra();
    let rhs = DVector::from_column_slice(g);
    let x = m
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("metric matrix is singular".into()))?;
    let residual = (&m * &x - &rhs).norm();
    if residual > 1e-8 * g_norm.max(f64::MIN_POSITIVE) {
        return Err(Error::Singular(format!(
            "metric solve residual {residual:e} too large"
        )));
    }
    Ok(x.iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalEpsilon {
    pub epsilon: f64,
    /// `C1 eps^4 + C2 delta / eps^2` evaluated at the optimum.
    pub total_error: f64,
}

/// Truncation-plus-rounding error model of the perturbed score.
pub fn perturbation_total_error(c1: f64, c2: f64, machine_delta: f64, eps: f64) -> f64 {
    c1 * eps.powi(4) + c2 * machine_delta / (eps * eps)
}

/// Minimizer of [`perturbation_total_error`]: `(C2 delta / (2 C1))^(1/6)`.
pub fn optimal_epsilon(c1: f64, c2: f64, machine_delta: f64) -> Result<OptimalEpsilon> {
    if !(c1 > 0.0 && c2 > 0.0 && machine_delta > 0.0) {
        return Err(Error::invalid("optimal epsilon needs positive C1, C2 and machine precision"));
    }
    let epsilon = (c2 * machine_delta / (2.0 * c1)).powf(1.0 / 6.0);
    Ok(OptimalEpsilon {
        epsilon,
        total_error: perturbation_total_error(c1, c2, machine_delta, epsilon),
    })
}

//! Closed-form Gaussian mixtures with diagonal covariances.
//!
//! These play the role of known behavioral densities: exact log-density,
//! score, ancestral sampling and, for the linear noise-to-data path
//! `x_t = (1 - t) x_0 + t x_1` with `x_0 ~ N(0, I)`, the exact time-t marginal
//! and the exact conditional velocity `E[x_1 - x_0 | x_t = a]`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance matrix.
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    Gaussian,
    GaussianMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticDensity {
    components: Vec<MixtureComponent>,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl AnalyticDensity {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("a density needs at least one component"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::invalid("density dimension must be positive"));
        }
        let mut total = 0.0;
        for c in &components {
            check_dim("component mean", dim, c.mean.len())?;
            check_dim("component variance", dim, c.variance.len())?;
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::invalid("component weights must be positive"));
            }
            if c.variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::invalid("component variances must be positive"));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::invalid("component means must be finite"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("component weights sum to {total}, not 1")));
        }
        Ok(Self { components })
    }

    /// Isotropic Gaussian `N(mean, std^2 I)`.
    pub fn gaussian(mean: Vec<f64>, std: f64) -> Result<Self> {
        let variance = vec![std * std; mean.len()];
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean,
            variance,
        }])
    }

    /// Mixture of isotropic Gaussians sharing one standard deviation.
    pub fn isotropic_mixture(weights: &[f64], means: &[Vec<f64>], std: f64) -> Result<Self> {
        check_dim("mixture means", weights.len(), means.len())?;
        Self::new(
            weights
                .iter()
                .zip(means)
                .map(|(&weight, mean)| MixtureComponent {
                    weight,
                    mean: mean.clone(),
                    variance: vec![std * std; mean.len()],
                })
                .collect(),
        )
    }

    pub fn kind(&self) -> DensityKind {
        if self.components.len() == 1 {
            DensityKind::Gaussian
        } else {
            DensityKind::GaussianMixture
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    fn log_weighted_components(&self, a: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                let mut lp = c.weight.ln();
                for ((x, m), v) in a.iter().zip(&c.mean).zip(&c.variance) {
                    lp -= 0.5 * ((2.0 * PI * v).ln() + (x - m) * (x - m) / v);
                }
                lp
            })
            .collect()
    }

    /// Posterior component probabilities at `a`, computed in log space.
    pub fn responsibilities(&self, a: &[f64]) -> Result<Vec<f64>> {
        check_dim("density argument", self.dim(), a.len())?;
        let lw = self.log_weighted_components(a);
        let total = log_sum_exp(&lw);
        if !total.is_finite() {
            return Err(Error::numeric("log-density is not finite"));
        }
        Ok(lw.iter().map(|l| (l - total).exp()).collect())
    }

    pub fn log_density(&self, a: &[f64]) -> Result<f64> {
        check_dim("density argument", self.dim(), a.len())?;
        Ok(log_sum_exp(&self.log_weighted_components(a)))
    }

    pub fn density(&self, a: &[f64]) -> Result<f64> {
        Ok(self.log_density(a)?.exp())
    }

    /// Exact score `grad log p(a)`; stays finite far in the tails.
    pub fn score(&self, a: &[f64]) -> Result<Vec<f64>> {
        let r = self.responsibilities(a)?;
        let mut out = vec![0.0; self.dim()];
        for (c, ri) in self.components.iter().zip(&r) {
            for j in 0..out.len() {
                out[j] += ri * (c.mean[j] - a[j]) / c.variance[j];
            }
        }
        Ok(out)
    }

    /// `(grad^2 p) / p` as a dense row-major `d x d` matrix.
    pub fn hessian_ratio(&self, a: &[f64]) -> Result<Vec<f64>> {
        let r = self.responsibilities(a)?;
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        for (c, ri) in self.components.iter().zip(&r) {
            let u: Vec<f64> = (0..d).map(|j| (c.mean[j] - a[j]) / c.variance[j]).collect();
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] += ri * u[i] * u[j];
                }
                out[i * d + i] -= ri / c.variance[i];
            }
        }
        Ok(out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let c = &self.components[chosen];
        c.mean
            .iter()
            .zip(&c.variance)
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }

    /// Marginal of `x_t = (1 - t) x_0 + t x_1` when `x_1` follows this density.
    pub fn interpolant_marginal(&self, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("interpolation time {t} outside [0, 1]")));
        }
        let s = 1.0 - t;
        Self::new(
            self.components
                .iter()
                .map(|c| MixtureComponent {
                    weight: c.weight,
                    mean: c.mean.iter().map(|m| t * m).collect(),
                    variance: c.variance.iter().map(|v| t * t * v + s * s).collect(),
                })
                .collect(),
        )
    }

    /// Exact marginal score of the time-t interpolant.
    pub fn interpolant_score(&self, t: f64, a: &[f64]) -> Result<Vec<f64>> {
        self.interpolant_marginal(t)?.score(a)
    }

    /// Exact velocity `E[x_1 - x_0 | x_t = a]` of the linear path, for `t` in `[0, 1)`.
    pub fn flow_velocity(&self, t: f64, a: &[f64]) -> Result<Vec<f64>> {
        if !(0.0..1.0).contains(&t) {
            return Err(Error::invalid(format!(
                "velocity time {t} must lie in [0, 1)"
            )));
        }
        let marginal = self.interpolant_marginal(t)?;
        let r = marginal.responsibilities(a)?;
        let s = 1.0 - t;
        let d = self.dim();
        let mut v = vec![0.0; d];
        for ((c, m), ri) in self.components.iter().zip(marginal.components()).zip(&r) {
            for j in 0..d {
                // Per component: E[x1|a] = mu + t var (a - t mu) / V, E[x0|a] = s (a - t mu) / V.
                let resid = (a[j] - m.mean[j]) / m.variance[j];
                let e1 = c.mean[j] + t * c.variance[j] * resid;
                let e0 = s * resid;
                v[j] += ri * (e1 - e0);
            }
        }
        Ok(v)
    }
}

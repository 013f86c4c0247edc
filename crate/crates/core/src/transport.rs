//! Residual transport maps `T_s(a) = a + delta(s, a)` and the density
//! bookkeeping of their pushforward.
//!
//! Two independent routes are kept apart on purpose:
//! the library path (divergence from vector-Jacobian products, Fisher quadratic
//! form) and the oracle path (fixed-point inversion, finite-difference Jacobian
//! determinant, trapezoidal KL on a grid).

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::AnalyticDensity;
use crate::error::{check_dim, Error, Result};
use crate::fisher::{fisher_from_score, perturbed_score, quadratic_penalty};
use crate::flow::{FlowPolicy, VelocitySource};
use crate::nn::{Activation, DenseNet, ForwardTrace, GradientTape};

/// Step used for every finite-difference Jacobian on the oracle path.
pub const ORACLE_FD_STEP: f64 = 1e-5;

/// Default cap on the residual's per-coordinate displacement, in action units.
pub const DEFAULT_MAX_DISPLACEMENT: f64 = 1.0;

/// Iteration cap of the fixed-point inverse.
pub const MAX_INVERSION_ITERS: usize = 100;

/// A displacement field `delta(s, a)` on the action space.
pub trait Displacement {
    fn action_dim(&self) -> usize;

    fn displacement(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>>;

    /// `upstream^T (d delta / d a)`.
    fn action_vjp(&self, state: &[f64], action: &[f64], upstream: &[f64]) -> Result<Vec<f64>>;
}

/// Neural residual `delta_theta(s, a) = m tanh(net(s ⊕ a) / m)`, or the raw net
/// output when no displacement cap `m` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualNet {
    net: DenseNet,
    state_dim: usize,
    action_dim: usize,
    max_displacement: Option<f64>,
}

impl ResidualNet {
    /// Random hidden layers and a zeroed output layer, so the map starts at identity.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        max_displacement: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let mut net = DenseNet::new(&sizes, activation, rng)?;
        net.zero_output_layer();
        Self::from_net(net, state_dim, action_dim, max_displacement)
    }

    pub fn from_net(
        net: DenseNet,
        state_dim: usize,
        action_dim: usize,
        max_displacement: Option<f64>,
    ) -> Result<Self> {
        check_dim("residual input", state_dim + action_dim, net.input_dim())?;
        check_dim("residual output", action_dim, net.output_dim())?;
        if let Some(m) = max_displacement {
            if !(m > 0.0) {
                return Err(Error::invalid("max displacement must be positive"));
            }
        }
        Ok(Self {
            net,
            state_dim,
            action_dim,
            max_displacement,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn max_displacement(&self) -> Option<f64> {
        self.max_displacement
    }

    fn input(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.state_dim, state.len())?;
        check_dim("action", self.action_dim, action.len())?;
        let mut x = Vec::with_capacity(state.len() + action.len());
        x.extend_from_slice(state);
        x.extend_from_slice(action);
        Ok(x)
    }

    /// Forward pass that keeps what [`ResidualNet::backward`] needs.
    pub fn trace(&self, state: &[f64], action: &[f64]) -> Result<ResidualTrace> {
        let x = self.input(state, action)?;
        let trace = self.net.forward_trace(&x)?;
        let raw = trace.output();
        let (delta, slope) = match self.max_displacement {
            Some(m) => raw
                .iter()
                .map(|r| {
                    let th = (r / m).tanh();
                    (m * th, 1.0 - th * th)
                })
                .unzip(),
            None => (raw.to_vec(), vec![1.0; raw.len()]),
        };
        Ok(ResidualTrace { trace, delta, slope })
    }

    /// Gradient of `upstream^T delta` with respect to parameters and to `s ⊕ a`.
    pub fn backward(&self, trace: &ResidualTrace, upstream: &[f64]) -> Result<GradientTape> {
        check_dim("displacement upstream", self.action_dim, upstream.len())?;
        let through: Vec<f64> = upstream.iter().zip(&trace.slope).map(|(u, s)| u * s).collect();
        self.net.backward_trace(&trace.trace, &through)
    }
}

#[derive(Debug, Clone)]
pub struct ResidualTrace {
    trace: ForwardTrace,
    delta: Vec<f64>,
    slope: Vec<f64>,
}

impl ResidualTrace {
    pub fn displacement(&self) -> &[f64] {
        &self.delta
    }
}

impl Displacement for ResidualNet {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn displacement(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let raw = self.net.forward(&self.input(state, action)?)?;
        Ok(match self.max_displacement {
            Some(m) => raw.iter().map(|r| m * (r / m).tanh()).collect(),
            None => raw,
        })
    }

    fn action_vjp(&self, state: &[f64], action: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let tape = self.backward(&self.trace(state, action)?, upstream)?;
        Ok(tape.input()[self.state_dim..].to_vec())
    }
}

/// Affine field `delta(a) = A a + b`, independent of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDisplacement {
    dim: usize,
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl LinearDisplacement {
    pub fn new(dim: usize, matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        check_dim("linear displacement matrix", dim * dim, matrix.len())?;
        check_dim("linear displacement offset", dim, offset.len())?;
        Ok(Self { dim, matrix, offset })
    }

    /// `delta(a) = c a`.
    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        (0..dim).for_each(|i| matrix[i * dim + i] = c);
        Self {
            dim,
            matrix,
            offset: vec![0.0; dim],
        }
    }

    /// `delta(a) = c` everywhere.
    pub fn constant(offset: Vec<f64>) -> Self {
        let dim = offset.len();
        Self {
            dim,
            matrix: vec![0.0; dim * dim],
            offset,
        }
    }

    /// The divergence-free planar rotation field `(-a2, a1)`.
    pub fn rotation() -> Self {
        Self {
            dim: 2,
            matrix: vec![0.0, -1.0, 1.0, 0.0],
            offset: vec![0.0, 0.0],
        }
    }
}

impl Displacement for LinearDisplacement {
    fn action_dim(&self) -> usize {
        self.dim
    }

    fn displacement(&self, _state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_dim("action", self.dim, action.len())?;
        Ok((0..self.dim)
            .map(|i| {
                self.offset[i]
                    + (0..self.dim)
                        .map(|j| self.matrix[i * self.dim + j] * action[j])
                        .sum::<f64>()
            })
            .collect())
    }

    fn action_vjp(&self, _state: &[f64], action: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_dim("action", self.dim, action.len())?;
        check_dim("upstream", self.dim, upstream.len())?;
        Ok((0..self.dim)
            .map(|j| {
                (0..self.dim)
                    .map(|i| upstream[i] * self.matrix[i * self.dim + j])
                    .sum()
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DivergenceMethod {
    /// One vector-Jacobian product per action coordinate.
    #[default]
    Vjp,
    /// Central finite-difference columns.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetStatus {
    Ok,
    /// `1 - div delta <= 0`: the first-order expansion no longer describes an invertible map.
    ApproximationViolated,
}

/// First-order and exact values of `|det grad T^{-1}| = |det(I + grad delta)|^{-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetExpansion {
    pub divergence: f64,
    /// `1 - div delta`.
    pub approx_det_inverse: f64,
    pub exact_det_inverse: f64,
    /// `ln(1 - div delta)`, absent when the expansion is violated.
    pub log_approx: Option<f64>,
    pub log_exact: f64,
    pub status: DetStatus,
}

impl DetExpansion {
    pub fn gap(&self) -> f64 {
        (self.exact_det_inverse - self.approx_det_inverse).abs()
    }
}

/// `log pi_theta(a') = log pi_beta(T^{-1}(a')) + log_det_correction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushforwardDensity {
    pub log_density: f64,
    pub log_det_correction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap<D = ResidualNet> {
    residual: D,
}

impl<D: Displacement> TransportMap<D> {
    pub fn new(residual: D) -> Self {
        Self { residual }
    }

    pub fn residual(&self) -> &D {
        &self.residual
    }

    pub fn residual_mut(&mut self) -> &mut D {
        &mut self.residual
    }

    pub fn into_residual(self) -> D {
        self.residual
    }

    pub fn action_dim(&self) -> usize {
        self.residual.action_dim()
    }

    pub fn apply(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let delta = self.residual.displacement(state, action)?;
        Ok(action.iter().zip(&delta).map(|(a, d)| a + d).collect())
    }

    /// `(mu_beta(s, z), T_s(mu_beta(s, z)))`.
    pub fn sample_refined<V: VelocitySource>(
        &self,
        policy: &FlowPolicy<V>,
        state: &[f64],
        z: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("refined action", policy.action_dim(), self.action_dim())?;
        let base = policy.sample_action(state, z)?;
        let refined = self.apply(state, &base)?;
        Ok((base, refined))
    }

    /// Jacobian of `delta` in the action, row-major, from vector-Jacobian products.
    pub fn jacobian(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let d = self.action_dim();
        let mut jac = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        for i in 0..d {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[i] = 1.0;
            let row = self.residual.action_vjp(state, action, &e)?;
            jac[i * d..(i + 1) * d].copy_from_slice(&row);
        }
        Ok(jac)
    }

    /// Central finite-difference Jacobian of `delta`, row-major.
    pub fn jacobian_fd(&self, state: &[f64], action: &[f64], step: f64) -> Result<Vec<f64>> {
        let d = self.action_dim();
        check_dim("action", d, action.len())?;
        let mut jac = vec![0.0; d * d];
        let mut probe = action.to_vec();
        for j in 0..d {
            probe[j] = action[j] + step;
            let up = self.residual.displacement(state, &probe)?;
            probe[j] = action[j] - step;
            let down = self.residual.displacement(state, &probe)?;
            probe[j] = action[j];
            for i in 0..d {
                jac[i * d + j] = (up[i] - down[i]) / (2.0 * step);
            }
        }
        Ok(jac)
    }

    /// `div delta = tr(grad_a delta)`.
    pub fn divergence(&self, state: &[f64], action: &[f64], method: DivergenceMethod) -> Result<f64> {
        let d = self.action_dim();
        let jac = match method {
            DivergenceMethod::Vjp => self.jacobian(state, action)?,
            DivergenceMethod::FiniteDifference => self.jacobian_fd(state, action, ORACLE_FD_STEP)?,
        };
        Ok((0..d).map(|i| jac[i * d + i]).sum())
    }

    /// First-order `1 - div delta` next to the exact `|det(I + grad delta)|^{-1}`.
    pub fn log_det_inverse_approx(&self, state: &[f64], action: &[f64]) -> Result<DetExpansion> {
        let d = self.action_dim();
        let jac = self.jacobian(state, action)?;
        let divergence: f64 = (0..d).map(|i| jac[i * d + i]).sum();
        let det = identity_plus_det(d, &jac).abs();
        if det == 0.0 {
            return Err(Error::Singular("I + grad delta is singular".into()));
        }
        let approx = 1.0 - divergence;
        let (log_approx, status) = if approx > 0.0 {
            (Some(approx.ln()), DetStatus::Ok)
        } else {
            (None, DetStatus::ApproximationViolated)
        };
        Ok(DetExpansion {
            divergence,
            approx_det_inverse: approx,
            exact_det_inverse: 1.0 / det,
            log_approx,
            log_exact: -det.ln(),
            status,
        })
    }

    /// Solves `a + delta(s, a) = target` by `a <- target - delta(s, a)`.
    pub fn invert(&self, state: &[f64], target: &[f64]) -> Result<Vec<f64>> {
        let mut a = target.to_vec();
        for _ in 0..MAX_INVERSION_ITERS {
            let delta = self.residual.displacement(state, &a)?;
            let next: Vec<f64> = target.iter().zip(&delta).map(|(t, d)| t - d).collect();
            let change = next
                .iter()
                .zip(&a)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            let scale = 1.0 + next.iter().map(|v| v.abs()).fold(0.0, f64::max);
            a = next;
            if change <= 1e-13 * scale {
                return Ok(a);
            }
        }
        Err(Error::NonConvergence(format!(
            "fixed-point inverse of the transport map did not converge in {MAX_INVERSION_ITERS} iterations"
        )))
    }
}

fn identity_plus_det(d: usize, jac: &[f64]) -> f64 {
    let mut m = DMatrix::from_row_slice(d, d, jac);
    for i in 0..d {
        m[(i, i)] += 1.0;
    }
    m.determinant()
}

/// Pushforward log-density at `target` by exact change of variables.
pub fn pushforward_log_density<D: Displacement>(
    density: &AnalyticDensity,
    map: &TransportMap<D>,
    state: &[f64],
    target: &[f64],
) -> Result<PushforwardDensity> {
    let pre = map.invert(state, target)?;
    let d = map.action_dim();
    let jac = map.jacobian_fd(state, &pre, ORACLE_FD_STEP)?;
    let det = identity_plus_det(d, &jac).abs();
    if det == 0.0 {
        return Err(Error::Singular("transport Jacobian is singular".into()));
    }
    let log_det_correction = -det.ln();
    Ok(PushforwardDensity {
        log_density: density.log_density(&pre)? + log_det_correction,
        log_det_correction,
    })
}

/// Where the local Fisher metric inside [`kl_quadratic`] comes from.
pub enum ScoreSource<'a> {
    /// Exact score of a known density, unnormalized and undamped.
    Analytic(&'a AnalyticDensity),
    /// Perturbed score of a velocity field.
    Flow {
        field: &'a dyn VelocitySource,
        t_eps: f64,
        normalize: bool,
        damping: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlQuadratic {
    /// Monte-Carlo mean of `1/2 delta^T I delta`.
    pub value: f64,
    pub std_error: f64,
    /// Mean of `1/2 delta^T (hess p / p) delta`, the curvature term the
    /// second-order form leaves out; only available with an analytic density.
    pub curvature_term: Option<f64>,
}

/// `1/2 E_{a ~ pi_beta}[delta^T I(s, a) delta]` over the supplied behavioral samples.
pub fn kl_quadratic<D: Displacement>(
    map: &TransportMap<D>,
    source: &ScoreSource<'_>,
    state: &[f64],
    samples: &[Vec<f64>],
) -> Result<KlQuadratic> {
    if samples.is_empty() {
        return Err(Error::invalid("kl_quadratic needs at least one behavioral sample"));
    }
    let mut values = Vec::with_capacity(samples.len());
    let mut curvature = 0.0;
    for a in samples {
        let delta = map.residual().displacement(state, a)?;
        let metric = match source {
            ScoreSource::Analytic(p) => {
                let d = delta.len();
                let h = p.hessian_ratio(a)?;
                curvature += 0.5
                    * (0..d)
                        .flat_map(|i| (0..d).map(move |j| (i, j)))
                        .map(|(i, j)| delta[i] * h[i * d + j] * delta[j])
                        .sum::<f64>();
                fisher_from_score(&p.score(a)?, false, 0.0)?
            }
            ScoreSource::Flow {
                field,
                t_eps,
                normalize,
                damping,
            } => {
                let s = perturbed_score(*field, state, a, *t_eps)?;
                fisher_from_score(&s.score, *normalize, *damping)?
            }
        };
        values.push(quadratic_penalty(&metric, &delta)?);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(KlQuadratic {
        value: mean,
        std_error: (var / n).sqrt(),
        curvature_term: match source {
            ScoreSource::Analytic(_) => Some(curvature / n),
            ScoreSource::Flow { .. } => None,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

/// Tensor-product trapezoidal grid, one axis per action dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::invalid("quadrature grids support one or two dimensions"));
        }
        for ax in &axes {
            if !(ax.lo < ax.hi) || ax.points < 2 {
                return Err(Error::invalid("grid axes need lo < hi and at least two points"));
            }
        }
        Ok(Self { axes })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64, points: usize) -> Result<Self> {
        Self::new(vec![GridAxis { lo, hi, points }; dim])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn axis_nodes(ax: &GridAxis) -> Vec<(f64, f64)> {
        let h = (ax.hi - ax.lo) / (ax.points - 1) as f64;
        (0..ax.points)
            .map(|i| {
                let w = if i == 0 || i == ax.points - 1 { 0.5 * h } else { h };
                (ax.lo + i as f64 * h, w)
            })
            .collect()
    }

    /// Every node with its trapezoidal weight, last axis varying fastest.
    pub fn nodes(&self) -> Vec<(Vec<f64>, f64)> {
        let per_axis: Vec<Vec<(f64, f64)>> = self.axes.iter().map(Self::axis_nodes).collect();
        let mut out: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
        for axis in &per_axis {
            out = out
                .iter()
                .flat_map(|(x, w)| {
                    axis.iter().map(move |(xi, wi)| {
                        let mut p = x.clone();
                        p.push(*xi);
                        (p, w * wi)
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureKl {
    pub kl: f64,
    /// Integral of the pushforward density over the grid.
    pub mass: f64,
    pub grid: GridSpec,
}

/// Grid KL between the pushforward `T_# pi_beta` and `pi_beta`.
pub fn kl_quadrature_oracle<D: Displacement>(
    density: &AnalyticDensity,
    map: &TransportMap<D>,
    state: &[f64],
    grid: &GridSpec,
) -> Result<QuadratureKl> {
    check_dim("grid dimension", density.dim(), grid.dim())?;
    check_dim("map dimension", density.dim(), map.action_dim())?;
    let mut kl = 0.0;
    let mut mass = 0.0;
    for (x, w) in grid.nodes() {
        let log_theta = pushforward_log_density(density, map, state, &x)?.log_density;
        let p_theta = log_theta.exp();
        if p_theta == 0.0 {
            continue;
        }
        let log_beta = density.log_density(&x)?;
        kl += w * p_theta * (log_theta - log_beta);
        mass += w * p_theta;
    }
    Ok(QuadratureKl {
        kl,
        mass,
        grid: grid.clone(),
    })
}

/// Grid integral of the pushforward density, i.e. the probability mass `T_# pi_beta`
/// puts on the grid's rectangle.
pub fn quadrature_mass<D: Displacement>(
    density: &AnalyticDensity,
    map: &TransportMap<D>,
    state: &[f64],
    grid: &GridSpec,
) -> Result<f64> {
    check_dim("grid dimension", density.dim(), grid.dim())?;
    let mut mass = 0.0;
    for (x, w) in grid.nodes() {
        mass += w * pushforward_log_density(density, map, state, &x)?.log_density.exp();
    }
    Ok(mass)
}

/// Grid integral of `pi_beta` itself.
pub fn behavioral_mass(density: &AnalyticDensity, grid: &GridSpec) -> Result<f64> {
    check_dim("grid dimension", density.dim(), grid.dim())?;
    grid.nodes()
        .into_iter()
        .map(|(x, w)| Ok(w * density.density(&x)?))
        .sum()
}

/// Mass `T_# pi_beta` puts on `region`, integrated over the source grid as
/// `∫ pi_beta(a) 1[T(a) in region] da`. Needs no inverse, so it stays valid when
/// the map folds.
pub fn pushforward_region_mass<D: Displacement>(
    density: &AnalyticDensity,
    map: &TransportMap<D>,
    state: &[f64],
    grid: &GridSpec,
    region: &dyn Fn(&[f64]) -> bool,
) -> Result<f64> {
    check_dim("grid dimension", density.dim(), grid.dim())?;
    let mut mass = 0.0;
    for (x, w) in grid.nodes() {
        let p = density.density(&x)?;
        if p < 1e-300 {
            continue;
        }
        if region(&map.apply(state, &x)?) {
            mass += w * p;
        }
    }
    Ok(mass)
}

/// Deterministic counterpart of [`kl_quadratic`]: `1/2 E[delta^T I delta]` with the
/// expectation taken by trapezoidal quadrature against the exact density.
pub fn fisher_form_quadrature<D: Displacement>(
    density: &AnalyticDensity,
    map: &TransportMap<D>,
    state: &[f64],
    grid: &GridSpec,
) -> Result<f64> {
    check_dim("grid dimension", density.dim(), grid.dim())?;
    let mut total = 0.0;
    for (x, w) in grid.nodes() {
        let p = density.density(&x)?;
        if p == 0.0 {
            continue;
        }
        let delta = map.residual().displacement(state, &x)?;
        let metric = fisher_from_score(&density.score(&x)?, false, 0.0)?;
        total += w * p * quadratic_penalty(&metric, &delta)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_residual(seed: u64, cap: Option<f64>) -> ResidualNet {
        let mut r = rng(seed);
        let net = DenseNet::new(&[3, 12, 2], Activation::Tanh, &mut r).unwrap();
        let mut p = net.flat_parameters();
        p.iter_mut().for_each(|v| *v *= 0.5);
        let mut net = net;
        net.set_flat_parameters(&p).unwrap();
        ResidualNet::from_net(net, 1, 2, cap).unwrap()
    }

    #[test]
    fn new_residual_is_identity_map() {
        let res = ResidualNet::new(2, 2, &[16, 16], Activation::Gelu, Some(1.0), &mut rng(0)).unwrap();
        let map = TransportMap::new(res);
        assert_eq!(map.apply(&[0.3, 0.1], &[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn constant_residual_shifts() {
        let map = TransportMap::new(LinearDisplacement::constant(vec![0.5, -1.0]));
        assert_eq!(map.apply(&[], &[1.0, 1.0]).unwrap(), vec![1.5, 0.0]);
        assert_eq!(map.apply(&[], &[-3.0, 2.0]).unwrap(), vec![-2.5, 1.0]);
    }

    #[test]
    fn residual_matches_manual_forward() {
        let res = random_residual(4, Some(0.7));
        let raw = res.net().forward(&[0.2, 0.5, -0.4]).unwrap();
        let map = TransportMap::new(res);
        let out = map.apply(&[0.2], &[0.5, -0.4]).unwrap();
        for j in 0..2 {
            let expected = [0.5, -0.4][j] + 0.7 * (raw[j] / 0.7).tanh();
            assert!((out[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn divergence_examples() {
        let lin = TransportMap::new(LinearDisplacement::scaled_identity(3, 0.25));
        for m in [DivergenceMethod::Vjp, DivergenceMethod::FiniteDifference] {
            assert!((lin.divergence(&[], &[1.0, 2.0, 3.0], m).unwrap() - 0.75).abs() < 1e-9);
        }
        let rot = TransportMap::new(LinearDisplacement::rotation());
        assert!(rot.divergence(&[], &[0.4, -1.0], DivergenceMethod::Vjp).unwrap().abs() < 1e-15);
    }

    #[test]
    fn divergence_methods_agree_on_nets() {
        for seed in 0..5 {
            let map = TransportMap::new(random_residual(seed, Some(1.0)));
            let a = [0.3 * seed as f64 - 0.5, 0.2];
            let v = map.divergence(&[0.1], &a, DivergenceMethod::Vjp).unwrap();
            let f = map.divergence(&[0.1], &a, DivergenceMethod::FiniteDifference).unwrap();
            assert!((v - f).abs() < 1e-4, "{v} vs {f}");
        }
    }

    #[test]
    fn det_expansion_linear_field() {
        let map = TransportMap::new(LinearDisplacement::scaled_identity(2, 0.01));
        let e = map.log_det_inverse_approx(&[], &[0.3, 0.3]).unwrap();
        assert!((e.exact_det_inverse - 1.0 / 1.0201).abs() < 1e-12);
        assert!((e.approx_det_inverse - 0.98).abs() < 1e-12);
        assert!(e.gap() < 3e-4);
        assert_eq!(e.status, DetStatus::Ok);
    }

    #[test]
    fn det_expansion_constant_field() {
        let map = TransportMap::new(LinearDisplacement::constant(vec![2.0, -1.0]));
        let e = map.log_det_inverse_approx(&[], &[0.0, 0.0]).unwrap();
        assert_eq!(e.log_approx, Some(0.0));
        assert_eq!(e.log_exact, 0.0);
    }

    #[test]
    fn det_expansion_gap_is_quadratic() {
        let mut gaps = Vec::new();
        for scale in [1.0, 0.5, 0.25] {
            let field = LinearDisplacement::new(2, vec![0.04 * scale, 0.02 * scale, -0.01 * scale, 0.03 * scale], vec![0.0, 0.0]).unwrap();
            gaps.push(TransportMap::new(field).log_det_inverse_approx(&[], &[0.0, 0.0]).unwrap().gap());
        }
        for w in gaps.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
        }
    }

    #[test]
    fn violated_expansion_is_flagged() {
        let map = TransportMap::new(LinearDisplacement::scaled_identity(1, 2.0));
        let e = map.log_det_inverse_approx(&[], &[0.0]).unwrap();
        assert_eq!(e.status, DetStatus::ApproximationViolated);
        assert!(e.log_approx.is_none());
    }

    #[test]
    fn inversion_round_trip_and_failure() {
        let map = TransportMap::new(random_residual(8, Some(0.3)));
        let a = [0.4, -0.9];
        let out = map.apply(&[0.5], &a).unwrap();
        let back = map.invert(&[0.5], &out).unwrap();
        assert!((back[0] - a[0]).abs() < 1e-10 && (back[1] - a[1]).abs() < 1e-10);

        // A contraction factor above one never settles.
        let bad = TransportMap::new(LinearDisplacement::scaled_identity(1, -1.5));
        assert!(matches!(bad.invert(&[], &[1.0]), Err(Error::NonConvergence(_))));
    }

    #[test]
    fn pushforward_density_of_shift() {
        let p = AnalyticDensity::gaussian(vec![0.0], 1.0).unwrap();
        let map = TransportMap::new(LinearDisplacement::constant(vec![0.5]));
        let pf = pushforward_log_density(&p, &map, &[], &[1.2]).unwrap();
        assert!((pf.log_density - p.log_density(&[0.7]).unwrap()).abs() < 1e-12);
        assert!(pf.log_det_correction.abs() < 1e-12);
    }

    #[test]
    fn kl_quadratic_zero_displacement() {
        let p = AnalyticDensity::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let map = TransportMap::new(LinearDisplacement::constant(vec![0.0, 0.0]));
        let samples = p.sample(&mut rng(1), 100);
        let q = kl_quadratic(&map, &ScoreSource::Analytic(&p), &[], &samples).unwrap();
        assert_eq!(q.value, 0.0);
        assert!(kl_quadratic(&map, &ScoreSource::Analytic(&p), &[], &[]).is_err());
    }

    #[test]
    fn quadrature_identity_and_closed_forms() {
        let p = AnalyticDensity::gaussian(vec![0.0], 1.0).unwrap();
        let grid = GridSpec::uniform(1, -10.0, 10.0, 4001).unwrap();
        let id = TransportMap::new(LinearDisplacement::constant(vec![0.0]));
        assert!(kl_quadrature_oracle(&p, &id, &[], &grid).unwrap().kl.abs() < 1e-6);

        let shift = TransportMap::new(LinearDisplacement::constant(vec![0.3]));
        let kl = kl_quadrature_oracle(&p, &shift, &[], &grid).unwrap().kl;
        assert!((kl - 0.045).abs() < 1e-4);

        let scale = TransportMap::new(LinearDisplacement::scaled_identity(1, 0.1));
        let expected = 0.5 * (1.21 - 1.0 - 1.21f64.ln());
        let got = kl_quadrature_oracle(&p, &scale, &[], &grid).unwrap();
        assert!((got.kl - expected).abs() < 1e-4, "{} vs {expected}", got.kl);
        assert!((got.mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn region_mass_of_shift() {
        let p = AnalyticDensity::gaussian(vec![0.0], 1.0).unwrap();
        let grid = GridSpec::uniform(1, -8.0, 8.0, 16001).unwrap();
        let shift = TransportMap::new(LinearDisplacement::constant(vec![1.0]));
        let m = pushforward_region_mass(&p, &shift, &[], &grid, &|a| a[0] > 1.0).unwrap();
        assert!((m - 0.5).abs() < 1e-3);
        let by_density = quadrature_mass(&p, &shift, &[], &GridSpec::uniform(1, 1.0, 9.0, 4001).unwrap()).unwrap();
        assert!((by_density - 0.5).abs() < 1e-6);
    }

    #[test]
    fn grid_rejects_bad_specs() {
        assert!(GridSpec::uniform(3, -1.0, 1.0, 5).is_err());
        assert!(GridSpec::uniform(1, 1.0, -1.0, 5).is_err());
        assert!(GridSpec::uniform(2, -1.0, 1.0, 1).is_err());
        let g = GridSpec::uniform(2, -1.0, 1.0, 3).unwrap();
        assert_eq!(g.nodes().len(), 9);
        let total: f64 = g.nodes().iter().map(|(_, w)| w).sum();
        assert!((total - 4.0).abs() < 1e-14);
    }
}

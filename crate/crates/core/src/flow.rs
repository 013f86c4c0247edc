//! Conditional flow matching for the behavioral policy.
//!
//! The velocity network sees `state ⊕ x_t ⊕ t` and regresses `x_1 - x_0` along
//! the straight path from Gaussian noise to dataset actions. Actions are drawn
//! with a fixed-grid explicit Euler integrator.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::AnalyticDensity;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::nn::{adam_step, Activation, AdamState, DenseNet, GradientTape};

/// A state and an action, the unit every operation consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionPoint {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

impl StateActionPoint {
    pub fn new(state: Vec<f64>, action: Vec<f64>) -> Self {
        Self { state, action }
    }
}

/// Anything that yields a velocity `v(t, s, a)` in action space.
pub trait VelocitySource {
    fn action_dim(&self) -> usize;
    fn velocity(&self, t: f64, state: &[f64], action: &[f64]) -> Result<Vec<f64>>;
}

/// Neural velocity field `v_beta(t, s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    net: DenseNet,
    state_dim: usize,
    action_dim: usize,
}

impl VelocityField {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let net = DenseNet::new(&sizes, activation, rng)?;
        Self::from_net(net, state_dim, action_dim)
    }

    pub fn from_net(net: DenseNet, state_dim: usize, action_dim: usize) -> Result<Self> {
        check_dim("velocity field input", state_dim + action_dim + 1, net.input_dim())?;
        check_dim("velocity field output", action_dim, net.output_dim())?;
        Ok(Self {
            net,
            state_dim,
            action_dim,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn input(&self, t: f64, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.state_dim, state.len())?;
        check_dim("action", self.action_dim, action.len())?;
        let mut x = Vec::with_capacity(self.state_dim + self.action_dim + 1);
        x.extend_from_slice(state);
        x.extend_from_slice(action);
        x.push(t);
        Ok(x)
    }
}

impl VelocitySource for VelocityField {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn velocity(&self, t: f64, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(&self.input(t, state, action)?)
    }
}

/// Exact velocity of a known density; the state is ignored.
impl VelocitySource for AnalyticDensity {
    fn action_dim(&self) -> usize {
        self.dim()
    }

    fn velocity(&self, t: f64, _state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.flow_velocity(t, action)
    }
}

/// Exact velocity of the linear path when the data are `N(mu, sigma^2 I)`.
///
/// With `V = t^2 sigma^2 + (1 - t)^2` the joint of `(x_0, x_1, x_t)` is Gaussian and
/// `v = mu + (t sigma^2 - (1 - t)) (a - t mu) / V`.
pub fn gaussian_oracle_velocity(mu: &[f64], sigma: f64, t: f64, a: &[f64]) -> Result<Vec<f64>> {
    check_dim("oracle action", mu.len(), a.len())?;
    if !(sigma > 0.0) {
        return Err(Error::invalid("oracle sigma must be positive"));
    }
    if !(0.0..1.0).contains(&t) {
        return Err(Error::invalid(format!("oracle time {t} must lie in [0, 1)")));
    }
    let s = 1.0 - t;
    let var = t * t * sigma * sigma + s * s;
    let gain = (t * sigma * sigma - s) / var;
    Ok(mu
        .iter()
        .zip(a)
        .map(|(m, x)| m + gain * (x - t * m))
        .collect())
}

/// [`gaussian_oracle_velocity`] packaged as a [`VelocitySource`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOracle {
    pub mu: Vec<f64>,
    pub sigma: f64,
}

impl VelocitySource for GaussianOracle {
    fn action_dim(&self) -> usize {
        self.mu.len()
    }

    fn velocity(&self, t: f64, _state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        gaussian_oracle_velocity(&self.mu, self.sigma, t, action)
    }
}

/// One point on the straight noise-to-data path.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolantSample {
    pub t: f64,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub xt: Vec<f64>,
}

impl InterpolantSample {
    pub fn new(t: f64, x0: Vec<f64>, x1: Vec<f64>) -> Result<Self> {
        check_dim("interpolant endpoints", x0.len(), x1.len())?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("interpolant time {t} outside [0, 1]")));
        }
        let xt = x0.iter().zip(&x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        Ok(Self { t, x0, x1, xt })
    }

    /// Draws `t ~ U[0, 1]` and `x_0 ~ N(0, I)` for the data action `x1`.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, x1: &[f64]) -> Self {
        let t: f64 = rng.random();
        let x0: Vec<f64> = (0..x1.len()).map(|_| StandardNormal.sample(rng)).collect();
        Self::new(t, x0, x1.to_vec()).expect("dimensions agree by construction")
    }

    pub fn target(&self) -> Vec<f64> {
        self.x1.iter().zip(&self.x0).map(|(b, a)| b - a).collect()
    }
}

/// Mean squared regression error of `field` on prepared interpolant samples.
pub fn flow_matching_loss_value<V: VelocitySource>(
    field: &V,
    batch: &[StateActionPoint],
    samples: &[InterpolantSample],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("flow matching batch is empty"));
    }
    check_dim("interpolant samples", batch.len(), samples.len())?;
    let mut total = 0.0;
    for (point, sample) in batch.iter().zip(samples) {
        let v = field.velocity(sample.t, &point.state, &sample.xt)?;
        total += v
            .iter()
            .zip(sample.target())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone)]
pub struct FlowLoss {
    pub loss: f64,
    pub tape: GradientTape,
}

/// Flow-matching loss and its parameter gradient on prepared samples.
pub fn flow_matching_loss_with(
    field: &VelocityField,
    batch: &[StateActionPoint],
    samples: &[InterpolantSample],
) -> Result<FlowLoss> {
    if batch.is_empty() {
        return Err(Error::invalid("flow matching batch is empty"));
    }
    check_dim("interpolant samples", batch.len(), samples.len())?;
    let scale = 1.0 / batch.len() as f64;
    let mut tape = GradientTape::zeros_like(&field.net);
    let mut total = 0.0;
    for (point, sample) in batch.iter().zip(samples) {
        check_finite("dataset action", &point.action)?;
        let x = field.input(sample.t, &point.state, &sample.xt)?;
        let trace = field.net.forward_trace(&x)?;
        let residual: Vec<f64> = trace
            .output()
            .iter()
            .zip(sample.target())
            .map(|(v, y)| v - y)
            .collect();
        total += residual.iter().map(|r| r * r).sum::<f64>();
        let upstream: Vec<f64> = residual.iter().map(|r| 2.0 * r * scale).collect();
        tape.accumulate(&field.net.backward_trace(&trace, &upstream)?);
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::numeric("flow matching loss is not finite"));
    }
    Ok(FlowLoss { loss, tape })
}

/// Draws `(t, x_0)` per batch element and evaluates the flow-matching loss.
pub fn flow_matching_loss<R: Rng + ?Sized>(
    field: &VelocityField,
    batch: &[StateActionPoint],
    rng: &mut R,
) -> Result<FlowLoss> {
    let samples: Vec<InterpolantSample> = batch
        .iter()
        .map(|p| InterpolantSample::draw(rng, &p.action))
        .collect();
    flow_matching_loss_with(field, batch, &samples)
}

/// Behavioral policy `mu_beta(s, z)`: Euler integration of a velocity source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPolicy<V = VelocityField> {
    field: V,
    steps: usize,
    bounds: Option<Vec<(f64, f64)>>,
}

impl<V: VelocitySource> FlowPolicy<V> {
    pub fn new(field: V, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("flow policy needs at least one Euler step"));
        }
        Ok(Self {
            field,
            steps,
            bounds: None,
        })
    }

    /// Clamp sampled actions coordinate-wise to `bounds`.
    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        check_dim("action bounds", self.field.action_dim(), bounds.len())?;
        if bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::invalid("action bounds need lo <= hi"));
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn field(&self) -> &V {
        &self.field
    }

    pub fn field_mut(&mut self) -> &mut V {
        &mut self.field
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn action_dim(&self) -> usize {
        self.field.action_dim()
    }

    /// Runs `steps` explicit Euler steps from `z` over `t = 0, 1/M, ..., (M-1)/M`.
    pub fn sample_action(&self, state: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        check_dim("flow noise", self.field.action_dim(), z.len())?;
        let h = 1.0 / self.steps as f64;
        let mut x = z.to_vec();
        for k in 0..self.steps {
            let v = self.field.velocity(k as f64 * h, state, &x)?;
            for (xi, vi) in x.iter_mut().zip(&v) {
                *xi += h * vi;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("Euler trajectory became non-finite at step {k}")));
            }
        }
        if let Some(bounds) = &self.bounds {
            for (xi, (lo, hi)) in x.iter_mut().zip(bounds) {
                *xi = xi.clamp(*lo, *hi);
            }
        }
        Ok(x)
    }

    /// Draws `z ~ N(0, I)` and returns `mu_beta(s, z)`.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let z = standard_normal_vec(rng, self.field.action_dim());
        self.sample_action(state, &z)
    }
}

pub(crate) fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: Option<f64>,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch_size: 256,
            learning_rate: 3e-4,
            grad_clip: Some(5.0),
        }
    }
}

/// Adam-driven optimizer for a velocity field, usable one step at a time.
#[derive(Debug, Clone)]
pub struct FlowTrainer {
    adam: AdamState,
    grad_clip: Option<f64>,
}

impl FlowTrainer {
    pub fn new(field: &VelocityField, learning_rate: f64, grad_clip: Option<f64>) -> Self {
        Self {
            adam: AdamState::new(field.net(), learning_rate),
            grad_clip,
        }
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        field: &mut VelocityField,
        batch: &[StateActionPoint],
        rng: &mut R,
    ) -> Result<f64> {
        let FlowLoss { loss, mut tape } = flow_matching_loss(field, batch, rng)?;
        if let Some(max) = self.grad_clip {
            tape.clip_global_norm(max);
        }
        adam_step(field.net_mut(), &tape, &mut self.adam)?;
        Ok(loss)
    }
}

pub(crate) fn draw_batch<R: Rng + ?Sized>(
    data: &[StateActionPoint],
    size: usize,
    rng: &mut R,
) -> Vec<StateActionPoint> {
    (0..size)
        .map(|_| data[rng.random_range(0..data.len())].clone())
        .collect()
}

/// Trains the behavioral flow on `(s, a)` pairs; returns the per-step loss curve.
pub fn train_flow<R: Rng + ?Sized>(
    policy: &mut FlowPolicy<VelocityField>,
    data: &[StateActionPoint],
    config: &FlowTrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train a flow on an empty dataset"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut trainer = FlowTrainer::new(policy.field(), config.learning_rate, config.grad_clip);
    let mut curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = draw_batch(data, config.batch_size, rng);
        let loss = trainer
            .step(policy.field_mut(), &batch, rng)
            .map_err(|e| e.at_step(step))?;
        curve.push(loss);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Constant(Vec<f64>);

    impl VelocitySource for Constant {
        fn action_dim(&self) -> usize {
            self.0.len()
        }
        fn velocity(&self, _t: f64, _s: &[f64], _a: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    /// Returns exactly `x1 - x0` for the sample whose `x_t` it is queried at.
    struct Exact(Vec<InterpolantSample>);

    impl VelocitySource for Exact {
        fn action_dim(&self) -> usize {
            1
        }
        fn velocity(&self, t: f64, _s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
            let s = self.0.iter().find(|s| s.t == t && s.xt == a).unwrap();
            Ok(s.target())
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn interpolant_is_convex_combination() {
        let s = InterpolantSample::new(0.25, vec![4.0, -8.0], vec![0.0, 8.0]).unwrap();
        assert_eq!(s.xt, vec![3.0, -4.0]);
        assert!(InterpolantSample::new(1.5, vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn zero_field_loss_is_mean_squared_target() {
        let field = VelocityField::from_net(DenseNet::zeros(&[3, 5, 2], Activation::Gelu).unwrap(), 0, 2)
            .unwrap();
        let mut r = rng(0);
        let batch: Vec<_> = (0..16)
            .map(|i| StateActionPoint::new(vec![], vec![i as f64 * 0.1, -1.0]))
            .collect();
        let samples: Vec<_> = batch.iter().map(|p| InterpolantSample::draw(&mut r, &p.action)).collect();
        let expected = samples
            .iter()
            .map(|s| s.target().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / 16.0;
        let got = flow_matching_loss_with(&field, &batch, &samples).unwrap();
        assert!((got.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn exact_field_has_zero_loss() {
        let mut r = rng(1);
        let batch: Vec<_> = (0..4).map(|i| StateActionPoint::new(vec![], vec![i as f64])).collect();
        let samples: Vec<_> = batch.iter().map(|p| InterpolantSample::draw(&mut r, &p.action)).collect();
        let loss = flow_matching_loss_value(&Exact(samples.clone()), &batch, &samples).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn point_mass_target_regresses_constant() {
        let s = InterpolantSample::new(0.5, vec![0.0], vec![2.0]).unwrap();
        assert_eq!(s.xt, vec![1.0]);
        assert_eq!(s.target(), vec![2.0]);
        let s = InterpolantSample::new(0.9, vec![0.0], vec![2.0]).unwrap();
        assert_eq!(s.target(), vec![2.0]);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let field = VelocityField::new(0, 1, &[4], Activation::Gelu, &mut rng(0)).unwrap();
        assert!(matches!(
            flow_matching_loss(&field, &[], &mut rng(0)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let mut field = VelocityField::new(2, 2, &[8], Activation::Tanh, &mut rng(2)).unwrap();
        let mut r = rng(3);
        let batch: Vec<_> = (0..5)
            .map(|i| StateActionPoint::new(vec![0.1 * i as f64, -0.2], vec![1.0, -0.5 * i as f64]))
            .collect();
        let samples: Vec<_> = batch.iter().map(|p| InterpolantSample::draw(&mut r, &p.action)).collect();
        let FlowLoss { tape, .. } = flow_matching_loss_with(&field, &batch, &samples).unwrap();
        let grads = tape.flat_parameters();
        let params = field.net().flat_parameters();
        let h = 1e-5;
        for i in (0..params.len()).step_by(7) {
            let mut p = params.clone();
            p[i] += h;
            field.net_mut().set_flat_parameters(&p).unwrap();
            let up = flow_matching_loss_value(&field, &batch, &samples).unwrap();
            p[i] -= 2.0 * h;
            field.net_mut().set_flat_parameters(&p).unwrap();
            let down = flow_matching_loss_value(&field, &batch, &samples).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn zero_and_constant_fields_integrate_exactly() {
        let zero = FlowPolicy::new(Constant(vec![0.0, 0.0]), 10).unwrap();
        assert_eq!(zero.sample_action(&[], &[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
        let c = FlowPolicy::new(Constant(vec![1.5, -2.0]), 8).unwrap();
        let out = c.sample_action(&[], &[0.25, 0.5]).unwrap();
        assert!((out[0] - 1.75).abs() < 1e-14 && (out[1] + 1.5).abs() < 1e-14);
    }

    #[test]
    fn policy_rejects_zero_steps_and_wrong_noise() {
        assert!(FlowPolicy::new(Constant(vec![0.0]), 0).is_err());
        let p = FlowPolicy::new(Constant(vec![0.0]), 3).unwrap();
        assert!(p.sample_action(&[], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn non_finite_trajectory_names_step() {
        let p = FlowPolicy::new(Constant(vec![f64::INFINITY]), 4).unwrap();
        let err = p.sample_action(&[], &[0.0]).unwrap_err();
        assert!(err.to_string().contains("step 0"));
    }

    #[test]
    fn bounds_clamp_actions() {
        let p = FlowPolicy::new(Constant(vec![10.0]), 2)
            .unwrap()
            .with_bounds(vec![(-1.0, 1.0)])
            .unwrap();
        assert_eq!(p.sample_action(&[], &[0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn gaussian_oracle_values() {
        // E[x1 | a] = E[x0 | a] = 1 at this point.
        let v = gaussian_oracle_velocity(&[0.0], 1.0, 0.5, &[1.0]).unwrap();
        assert!(v[0].abs() < 1e-15);
        // At t = 0 the data endpoint is independent of x_t = x_0.
        let v = gaussian_oracle_velocity(&[1.0, -2.0], 0.7, 0.0, &[0.3, 0.4]).unwrap();
        assert!((v[0] - 0.7).abs() < 1e-15 && (v[1] + 2.4).abs() < 1e-15);
        assert!(gaussian_oracle_velocity(&[0.0], 1.0, 1.0, &[0.0]).is_err());
    }

    #[test]
    fn gaussian_oracle_time_reversal_symmetry() {
        for t in [0.1, 0.3, 0.45] {
            for a in [-1.5, 0.2, 2.0] {
                let fwd = gaussian_oracle_velocity(&[0.0], 1.0, t, &[a]).unwrap()[0];
                let bwd = gaussian_oracle_velocity(&[0.0], 1.0, 1.0 - t, &[a]).unwrap()[0];
                assert!((fwd + bwd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_oracle_matches_mixture_velocity() {
        let g = AnalyticDensity::gaussian(vec![0.5, -1.0], 0.8).unwrap();
        for t in [0.0, 0.2, 0.7, 0.99] {
            let a = [0.3, 0.1];
            let v1 = gaussian_oracle_velocity(&[0.5, -1.0], 0.8, t, &a).unwrap();
            let v2 = g.flow_velocity(t, &a).unwrap();
            for j in 0..2 {
                assert!((v1[j] - v2[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_oracle_matches_monte_carlo_conditional_mean() {
        // Condition the joint on a small window around x_t = a.
        let (mu, sigma, t, a) = (0.5, 0.8, 0.6, 0.9);
        let mut r = rng(11);
        let (mut sum, mut n) = (0.0, 0usize);
        for _ in 0..2_000_000 {
            let x0: f64 = StandardNormal.sample(&mut r);
            let e: f64 = StandardNormal.sample(&mut r);
            let x1 = mu + sigma * e;
            let xt = (1.0 - t) * x0 + t * x1;
            if (xt - a).abs() < 0.01 {
                sum += x1 - x0;
                n += 1;
            }
        }
        let mc = sum / n as f64;
        let exact = gaussian_oracle_velocity(&[mu], sigma, t, &[a]).unwrap()[0];
        assert!((mc - exact).abs() < 0.05, "mc {mc} exact {exact} from {n} samples");
    }

    #[test]
    fn euler_on_oracle_field_converges() {
        let oracle = GaussianOracle {
            mu: vec![1.0, -0.5],
            sigma: 0.5,
        };
        let reference = FlowPolicy::new(oracle.clone(), 16_384)
            .unwrap()
            .sample_action(&[], &[1.0, -0.7])
            .unwrap();
        let fine = FlowPolicy::new(oracle.clone(), 256)
            .unwrap()
            .sample_action(&[], &[1.0, -0.7])
            .unwrap();
        let err = |x: &[f64]| {
            x.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        assert!(err(&fine) < 1e-2);
        let mut previous = f64::INFINITY;
        for m in [8, 16, 32, 64] {
            let e = err(&FlowPolicy::new(oracle.clone(), m)
                .unwrap()
                .sample_action(&[], &[1.0, -0.7])
                .unwrap());
            assert!(e < previous, "error did not shrink at M={m}");
            previous = e;
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let field = VelocityField::new(1, 2, &[16, 16], Activation::Gelu, &mut rng(5)).unwrap();
        let p = FlowPolicy::new(field, 10).unwrap();
        let a = p.sample_action(&[0.2], &[0.1, -0.3]).unwrap();
        let b = p.clone().sample_action(&[0.2], &[0.1, -0.3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_training_config_matches_reference_hyperparameters() {
        let c = FlowTrainConfig::default();
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.learning_rate, 3e-4);
    }
}

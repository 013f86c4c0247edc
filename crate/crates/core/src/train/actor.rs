use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fisher::{
    fisher_from_score, perturbed_score, quadratic_penalty, relative_damping, FisherMetric,
    DEFAULT_RELATIVE_DAMPING, DEFAULT_T_EPS,
};
use crate::flow::{standard_normal_vec, FlowPolicy, VelocitySource};
use crate::nn::{adam_step, AdamState, GradientTape};
use crate::transport::{ResidualNet, TransportMap};

use super::critic::ActionValue;
use super::dual::DualState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    Fisher,
    /// `I(s, a) = I_d`: the plain L2 penalty.
    Isotropic,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Fisher => "fisher",
            MetricKind::Isotropic => "isotropic",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fisher" => Ok(MetricKind::Fisher),
            "isotropic" => Ok(MetricKind::Isotropic),
            other => Err(Error::Parse(format!("unknown metric kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub kind: MetricKind,
    pub t_eps: f64,
    pub normalize: bool,
    /// Damping as a fraction of `trace(M) / d`.
    pub relative_damping: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            kind: MetricKind::Fisher,
            t_eps: DEFAULT_T_EPS,
            normalize: true,
            relative_damping: DEFAULT_RELATIVE_DAMPING,
        }
    }
}

/// Metric of the penalty at a behavioral action.
pub fn local_metric<V: VelocitySource + ?Sized>(
    field: &V,
    state: &[f64],
    action: &[f64],
    config: &MetricConfig,
) -> Result<FisherMetric> {
    match config.kind {
        MetricKind::Isotropic => Ok(FisherMetric::identity(action.len())),
        MetricKind::Fisher => {
            let s = perturbed_score(field, state, action, config.t_eps)?;
            let damping = relative_damping(&s.score, config.normalize, config.relative_damping);
            fisher_from_score(&s.score, config.normalize, damping)
        }
    }
}

/// Adam state and objective switches of the transport-map ascent.
#[derive(Debug, Clone)]
pub struct ActorOptimizer {
    adam: AdamState,
    pub grad_clip: Option<f64>,
    pub q_normalize: bool,
}

impl ActorOptimizer {
    pub fn new(residual: &ResidualNet, learning_rate: f64, grad_clip: Option<f64>, q_normalize: bool) -> Self {
        Self {
            adam: AdamState::new(residual.net(), learning_rate),
            grad_clip,
            q_normalize,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.adam.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.adam.learning_rate = lr;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorStats {
    /// Lagrangian value before the step.
    pub objective: f64,
    /// Batch mean of the unnormalized Q at refined actions.
    pub mean_q: f64,
    /// Batch mean of `1/2 delta^T I delta`.
    pub constraint: f64,
    pub q_scale: f64,
    pub grad_norm: f64,
}

/// One ascent step on `E[Q(s, a + delta) / scale] - lambda (E[1/2 delta^T I delta] - eps)`
/// at fixed behavioral actions and metrics.
pub fn actor_step<Q: ActionValue + ?Sized>(
    map: &mut TransportMap<ResidualNet>,
    opt: &mut ActorOptimizer,
    q: &Q,
    dual: &DualState,
    states: &[Vec<f64>],
    base_actions: &[Vec<f64>],
    metrics: &[FisherMetric],
) -> Result<ActorStats> {
    if states.is_empty() {
        return Err(Error::invalid("actor update needs a non-empty batch"));
    }
    check_dim("base actions", states.len(), base_actions.len())?;
    check_dim("metrics", states.len(), metrics.len())?;
    let residual = map.residual();
    let n = states.len() as f64;

    let mut traces = Vec::with_capacity(states.len());
    let mut q_vals = Vec::with_capacity(states.len());
    let mut q_grads = Vec::with_capacity(states.len());
    let mut penalties = Vec::with_capacity(states.len());
    for ((s, a), m) in states.iter().zip(base_actions).zip(metrics) {
        let tr = residual.trace(s, a)?;
        let refined: Vec<f64> = a.iter().zip(tr.displacement()).map(|(x, d)| x + d).collect();
        let (v, g) = q.value_and_grad(s, &refined)?;
        penalties.push(quadratic_penalty(m, tr.displacement())?);
        q_vals.push(v);
        q_grads.push(g);
        traces.push(tr);
    }
    let mean_q = q_vals.iter().sum::<f64>() / n;
    let q_scale = if opt.q_normalize {
        let s = q_vals.iter().map(|v| v.abs()).sum::<f64>() / n;
        if s > 1e-8 {
            s
        } else {
            1.0
        }
    } else {
        1.0
    };
    let constraint = penalties.iter().sum::<f64>() / n;
    let objective = mean_q / q_scale - dual.lambda * (constraint - dual.epsilon);

    let mut tape = GradientTape::zeros_like(residual.net());
    for ((tr, g), m) in traces.iter().zip(&q_grads).zip(metrics) {
        let m_delta = m.apply(tr.displacement())?;
        // Descent direction of the negated Lagrangian.
        let upstream: Vec<f64> = g
            .iter()
            .zip(&m_delta)
            .map(|(gq, md)| -(gq / q_scale - dual.lambda * md) / n)
            .collect();
        tape.accumulate(&residual.backward(tr, &upstream)?);
    }
    if !tape.is_finite() {
        return Err(Error::numeric("non-finite actor gradient"));
    }
    let grad_norm = match opt.grad_clip {
        Some(max) => tape.clip_global_norm(max),
        None => tape.global_norm(),
    };
    adam_step(map.residual_mut().net_mut(), &tape, &mut opt.adam)?;
    Ok(ActorStats {
        objective,
        mean_q,
        constraint,
        q_scale,
        grad_norm,
    })
}

/// Behavioral actions and penalty metrics for a batch of states; the flow is only read.
pub fn behavioral_batch<V, R>(
    policy: &FlowPolicy<V>,
    metric: &MetricConfig,
    states: &[Vec<f64>],
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<FisherMetric>)>
where
    V: VelocitySource,
    R: Rng + ?Sized,
{
    let mut actions = Vec::with_capacity(states.len());
    let mut metrics = Vec::with_capacity(states.len());
    for s in states {
        let z = standard_normal_vec(rng, policy.action_dim());
        let a = policy.sample_action(s, &z)?;
        metrics.push(local_metric(policy.field(), s, &a, metric)?);
        actions.push(a);
    }
    Ok((actions, metrics))
}

/// Samples `a = mu_beta(s, z)`, builds the metric at `a`, then takes one [`actor_step`].
#[allow(clippy::too_many_arguments)]
pub fn actor_update<V, Q, R>(
    map: &mut TransportMap<ResidualNet>,
    opt: &mut ActorOptimizer,
    q: &Q,
    dual: &DualState,
    policy: &FlowPolicy<V>,
    metric: &MetricConfig,
    states: &[Vec<f64>],
    rng: &mut R,
) -> Result<ActorStats>
where
    V: VelocitySource,
    Q: ActionValue + ?Sized,
    R: Rng + ?Sized,
{
    let (actions, metrics) = behavioral_batch(policy, metric, states, rng)?;
    actor_step(map, opt, q, dual, states, &actions, &metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::AnalyticDensity;
    use crate::flow::VelocityField;
    use crate::nn::Activation;
    use crate::train::dual::DualMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `Q(a) = -|a - c|^2`.
    struct Bowl(Vec<f64>);

    impl ActionValue for Bowl {
        fn value_and_grad(&self, _s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
            let diff: Vec<f64> = a.iter().zip(&self.0).map(|(x, c)| x - c).collect();
            Ok((-diff.iter().map(|v| v * v).sum::<f64>(), diff.iter().map(|v| -2.0 * v).collect()))
        }
    }

    fn setup(seed: u64) -> (TransportMap<ResidualNet>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let res = ResidualNet::new(0, 2, &[32, 32], Activation::Gelu, Some(1.0), &mut rng).unwrap();
        (TransportMap::new(res), rng)
    }

    #[test]
    fn metric_kind_parsing() {
        assert_eq!("fisher".parse::<MetricKind>().unwrap(), MetricKind::Fisher);
        assert_eq!(MetricKind::Isotropic.to_string(), "isotropic");
        assert!("l2".parse::<MetricKind>().is_err());
    }

    #[test]
    fn isotropic_metric_is_identity() {
        let p = AnalyticDensity::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let cfg = MetricConfig {
            kind: MetricKind::Isotropic,
            ..Default::default()
        };
        let m = local_metric(&p, &[], &[1.0, 2.0], &cfg).unwrap();
        assert_eq!(m.matrix(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn unconstrained_ascent_improves_q() {
        let (mut map, mut rng) = setup(0);
        let q = Bowl(vec![0.5, -0.3]);
        let mut opt = ActorOptimizer::new(map.residual(), 1e-3, None, false);
        let dual = DualState::new(0.0, 0.1, 0.0, DualMode::Direct).unwrap();
        let p = AnalyticDensity::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let states = vec![vec![]; 64];
        let actions = p.sample(&mut rng, 64);
        let metrics = vec![FisherMetric::identity(2); 64];
        let before = actor_step(&mut map, &mut opt, &q, &dual, &states, &actions, &metrics).unwrap();
        let after = actor_step(&mut map, &mut opt, &q, &dual, &states, &actions, &metrics).unwrap();
        assert!(after.mean_q >= before.mean_q);
    }

    #[test]
    fn heavy_penalty_collapses_displacement() {
        let (mut map, mut rng) = setup(1);
        let q = Bowl(vec![3.0, 0.0]);
        let mut opt = ActorOptimizer::new(map.residual(), 3e-4, Some(5.0), true);
        let dual = DualState::new(1e4, 0.1, 0.0, DualMode::Direct).unwrap();
        let p = AnalyticDensity::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let states = vec![vec![]; 32];
        let mut last = f64::INFINITY;
        for _ in 0..1000 {
            let actions = p.sample(&mut rng, 32);
            let metrics = vec![FisherMetric::identity(2); 32];
            last = actor_step(&mut map, &mut opt, &q, &dual, &states, &actions, &metrics)
                .unwrap()
                .constraint;
        }
        assert!(last < 1e-3, "constraint {last}");
    }

    #[test]
    fn stationary_point_does_not_move() {
        let (mut map, _) = setup(2);
        // delta = 0 already maximizes Q at the base action.
        let q = Bowl(vec![0.2, 0.4]);
        let mut opt = ActorOptimizer::new(map.residual(), 1e-3, None, false);
        let dual = DualState::new(1.0, 0.1, 0.0, DualMode::Direct).unwrap();
        let before = map.residual().net().flat_parameters();
        let stats = actor_step(&mut map, &mut opt, &q, &dual, &[vec![]], &[vec![0.2, 0.4]], &[FisherMetric::identity(2)]).unwrap();
        assert_eq!(stats.grad_norm, 0.0);
        let after = map.residual().net().flat_parameters();
        let change = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(change < 1e-6);
    }

    #[test]
    fn behavioral_flow_is_untouched() {
        let (mut map, mut rng) = setup(3);
        let field = VelocityField::new(0, 2, &[16], Activation::Gelu, &mut rng).unwrap();
        let policy = FlowPolicy::new(field, 10).unwrap();
        let snapshot = policy.field().net().clone();
        let mut opt = ActorOptimizer::new(map.residual(), 1e-3, Some(5.0), true);
        let q = Bowl(vec![1.0, 1.0]);
        let dual = DualState::default();
        for _ in 0..5 {
            actor_update(&mut map, &mut opt, &q, &dual, &policy, &MetricConfig::default(), &vec![vec![]; 16], &mut rng).unwrap();
        }
        assert_eq!(policy.field().net(), &snapshot);
        assert_ne!(map.residual().net().flat_parameters(), ResidualNet::new(0, 2, &[32, 32], Activation::Gelu, Some(1.0), &mut ChaCha8Rng::seed_from_u64(3)).unwrap().net().flat_parameters());
    }
}

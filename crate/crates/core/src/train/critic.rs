use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Transition;
use crate::error::{check_dim, Error, Result};
use crate::flow::{standard_normal_vec, FlowPolicy, VelocitySource};
use crate::nn::{adam_step, Activation, AdamState, DenseNet, GradientTape};
use crate::transport::{Displacement, TransportMap};

pub const DEFAULT_TAU: f64 = 0.005;
pub const DEFAULT_GAMMA: f64 = 0.99;

/// Anything that can score an action and differentiate the score in the action.
pub trait ActionValue {
    fn value_and_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.value_and_grad(state, action)?.0)
    }
}

/// Twin Q networks with Polyak-averaged targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Critic {
    nets: [DenseNet; 2],
    targets: [DenseNet; 2],
    state_dim: usize,
    action_dim: usize,
    pub tau: f64,
    pub gamma: f64,
    pub grad_clip: Option<f64>,
    #[serde(skip)]
    optim: Option<[AdamState; 2]>,
    learning_rate: f64,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        learning_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let a = DenseNet::new(&sizes, activation, rng)?;
        let b = DenseNet::new(&sizes, activation, rng)?;
        Ok(Self {
            targets: [a.clone(), b.clone()],
            nets: [a, b],
            state_dim,
            action_dim,
            tau: DEFAULT_TAU,
            gamma: DEFAULT_GAMMA,
            grad_clip: Some(5.0),
            optim: None,
            learning_rate,
        })
    }

    pub fn nets(&self) -> &[DenseNet; 2] {
        &self.nets
    }

    pub fn targets(&self) -> &[DenseNet; 2] {
        &self.targets
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn input(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_dim("critic state", self.state_dim, state.len())?;
        check_dim("critic action", self.action_dim, action.len())?;
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        Ok(x)
    }

    /// Both online estimates.
    pub fn q_values(&self, state: &[f64], action: &[f64]) -> Result<[f64; 2]> {
        let x = self.input(state, action)?;
        Ok([self.nets[0].forward(&x)?[0], self.nets[1].forward(&x)?[0]])
    }

    /// Both target estimates.
    pub fn target_values(&self, state: &[f64], action: &[f64]) -> Result<[f64; 2]> {
        let x = self.input(state, action)?;
        Ok([self.targets[0].forward(&x)?[0], self.targets[1].forward(&x)?[0]])
    }

    /// `r + gamma (1 - terminal) min_k Qbar_k(s', a')`.
    pub fn td_target(&self, t: &Transition, next_action: Option<&[f64]>) -> Result<f64> {
        if t.terminal || self.gamma == 0.0 {
            return Ok(t.reward);
        }
        let a = next_action.ok_or_else(|| Error::invalid("non-terminal transition needs a next action"))?;
        let [q1, q2] = self.target_values(&t.next_state, a)?;
        Ok(t.reward + self.gamma * q1.min(q2))
    }

    /// One regression step of both online nets towards fixed targets, then a soft
    /// target update. Returns the mean squared TD error over both nets.
    pub fn regress(&mut self, batch: &[Transition], targets: &[f64]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("critic update needs a non-empty batch"));
        }
        check_dim("td targets", batch.len(), targets.len())?;
        if let Some(i) = targets.iter().position(|y| !y.is_finite()) {
            return Err(Error::numeric(format!("non-finite TD target at batch row {i}")));
        }
        let lr = self.learning_rate;
        let optim = self
            .optim
            .get_or_insert_with(|| [AdamState::new(&self.nets[0], lr), AdamState::new(&self.nets[1], lr)]);
        let n = batch.len() as f64;
        let mut total = 0.0;
        for k in 0..2 {
            let mut tape = GradientTape::zeros_like(&self.nets[k]);
            for (t, y) in batch.iter().zip(targets) {
                let mut x = t.state.clone();
                x.extend_from_slice(&t.action);
                let trace = self.nets[k].forward_trace(&x)?;
                let err = trace.output()[0] - y;
                total += err * err / n;
                tape.accumulate(&self.nets[k].backward_trace(&trace, &[2.0 * err / n])?);
            }
            if let Some(max) = self.grad_clip {
                tape.clip_global_norm(max);
            }
            adam_step(&mut self.nets[k], &tape, &mut optim[k])?;
        }
        for k in 0..2 {
            self.targets[k].soft_update_from(&self.nets[k], self.tau)?;
        }
        Ok(total / 2.0)
    }
}

impl ActionValue for Critic {
    /// Mean of the two online nets, with its action gradient.
    fn value_and_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        let x = self.input(state, action)?;
        let mut value = 0.0;
        let mut grad = vec![0.0; self.action_dim];
        for net in &self.nets {
            let trace = net.forward_trace(&x)?;
            value += 0.5 * trace.output()[0];
            let tape = net.backward_trace(&trace, &[0.5])?;
            grad.iter_mut()
                .zip(&tape.input()[self.state_dim..])
                .for_each(|(g, v)| *g += v);
        }
        Ok((value, grad))
    }
}

/// TD step: next actions come from the refined policy `T_{s'}(mu_beta(s', z))`.
pub fn critic_update<V, D, R>(
    critic: &mut Critic,
    policy: &FlowPolicy<V>,
    map: &TransportMap<D>,
    batch: &[Transition],
    rng: &mut R,
) -> Result<f64>
where
    V: VelocitySource,
    D: Displacement,
    R: Rng + ?Sized,
{
    if batch.is_empty() {
        return Err(Error::invalid("critic update needs a non-empty batch"));
    }
    let mut targets = Vec::with_capacity(batch.len());
    for t in batch {
        let z = standard_normal_vec(rng, policy.action_dim());
        let next = if t.terminal || critic.gamma == 0.0 {
            None
        } else {
            Some(map.sample_refined(policy, &t.next_state, &z)?.1)
        };
        targets.push(critic.td_target(t, next.as_deref())?);
    }
    critic.regress(batch, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bandit_batch() -> Vec<Transition> {
        [(-1.0, 0.3), (0.0, -0.5), (1.0, 0.8), (0.5, 0.1)]
            .iter()
            .map(|&(a, r)| Transition {
                state: vec![],
                action: vec![a],
                reward: r,
                terminal: true,
                next_state: vec![],
            })
            .collect()
    }

    #[test]
    fn bandit_regression_reaches_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Critic::new(0, 1, &[32, 32], Activation::Gelu, 3e-3, &mut rng).unwrap();
        c.gamma = 0.0;
        let batch = bandit_batch();
        let targets: Vec<f64> = batch.iter().map(|t| c.td_target(t, None).unwrap()).collect();
        assert_eq!(targets, vec![0.3, -0.5, 0.8, 0.1]);
        for _ in 0..3000 {
            c.regress(&batch, &targets).unwrap();
        }
        for t in &batch {
            let [q1, q2] = c.q_values(&[], &t.action).unwrap();
            assert!((q1 - t.reward).abs() < 0.05 && (q2 - t.reward).abs() < 0.05);
        }
    }

    #[test]
    fn zero_reward_shrinks_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Critic::new(0, 1, &[16], Activation::Tanh, 1e-3, &mut rng).unwrap();
        let mut batch = bandit_batch();
        batch.iter_mut().for_each(|t| t.reward = 0.0);
        let norm = |c: &Critic| -> f64 {
            batch.iter().map(|t| c.q_values(&[], &t.action).unwrap()[0].powi(2)).sum::<f64>()
        };
        let before = norm(&c);
        for _ in 0..500 {
            c.regress(&batch, &[0.0; 4]).unwrap();
        }
        assert!(norm(&c) < before);
    }

    #[test]
    fn tau_one_copies_online_into_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut c = Critic::new(0, 1, &[8], Activation::Gelu, 1e-2, &mut rng).unwrap();
        c.tau = 1.0;
        c.regress(&bandit_batch(), &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.nets, c.targets);
    }

    #[test]
    fn target_never_exceeds_either_target_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = Critic::new(1, 1, &[8], Activation::Gelu, 1e-3, &mut rng).unwrap();
        for i in 0..20 {
            let t = Transition {
                state: vec![0.0],
                action: vec![0.0],
                reward: 0.1 * i as f64,
                terminal: false,
                next_state: vec![0.05 * i as f64],
            };
            let a = [0.3 - 0.02 * i as f64];
            let y = c.td_target(&t, Some(&a)).unwrap();
            let [q1, q2] = c.target_values(&t.next_state, &a).unwrap();
            assert!(y <= t.reward + c.gamma * q1 + 1e-15);
            assert!(y <= t.reward + c.gamma * q2 + 1e-15);
        }
    }

    #[test]
    fn non_finite_target_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut c = Critic::new(0, 1, &[4], Activation::Gelu, 1e-3, &mut rng).unwrap();
        let err = c.regress(&bandit_batch(), &[0.0, f64::NAN, 0.0, 0.0]).unwrap_err();
        assert!(err.is_numeric());
        assert!(c.regress(&[], &[]).is_err());
    }

    #[test]
    fn action_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = Critic::new(1, 2, &[16, 16], Activation::Gelu, 1e-3, &mut rng).unwrap();
        let (s, a) = ([0.4], [0.2, -0.7]);
        let (_, g) = c.value_and_grad(&s, &a).unwrap();
        for j in 0..2 {
            let h = 1e-5;
            let mut up = a;
            up[j] += h;
            let mut dn = a;
            dn[j] -= h;
            let fd = (c.value(&s, &up).unwrap() - c.value(&s, &dn).unwrap()) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}

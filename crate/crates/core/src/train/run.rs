use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{OfflineDataset, Transition};
use crate::envs::SyntheticTask;
use crate::error::{check_dim, Error, Result};
use crate::flow::{standard_normal_vec, FlowPolicy, FlowTrainer, StateActionPoint, VelocityField, VelocitySource};
use crate::nn::Activation;
use crate::transport::{ResidualNet, TransportMap, DEFAULT_MAX_DISPLACEMENT};

use super::actor::{actor_update, ActorOptimizer, ActorStats, MetricConfig};
use super::critic::{critic_update, ActionValue, Critic, DEFAULT_GAMMA, DEFAULT_TAU};
use super::dual::{DualMode, DualState, DEFAULT_CONSTRAINT_EPSILON, DEFAULT_DUAL_STEP, DEFAULT_LAMBDA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QSource {
    /// The task's closed-form value; no critic is trained.
    #[default]
    Analytic,
    /// Twin TD critic trained from the dataset rewards.
    Critic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub flow_lr: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Flow-matching steps run before the first refinement step.
    pub flow_warmup_steps: usize,
    /// Keep training the flow inside the refinement loop.
    pub flow_updates: bool,
    pub euler_steps: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub max_displacement: Option<f64>,
    pub metric: MetricConfig,
    pub q_normalize: bool,
    pub grad_clip: Option<f64>,
    pub lambda_init: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub dual_mode: DualMode,
    pub tau: f64,
    pub gamma: f64,
    pub q_source: QSource,
    pub log_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 256,
            flow_lr: 3e-4,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            flow_warmup_steps: 0,
            flow_updates: true,
            euler_steps: 10,
            hidden: vec![64, 64],
            activation: Activation::Gelu,
            max_displacement: Some(DEFAULT_MAX_DISPLACEMENT),
            metric: MetricConfig::default(),
            q_normalize: true,
            grad_clip: Some(5.0),
            lambda_init: DEFAULT_LAMBDA,
            epsilon: DEFAULT_CONSTRAINT_EPSILON,
            eta: DEFAULT_DUAL_STEP,
            dual_mode: DualMode::Direct,
            tau: DEFAULT_TAU,
            gamma: DEFAULT_GAMMA,
            q_source: QSource::Analytic,
            log_interval: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.euler_steps == 0 {
            return Err(Error::invalid("euler_steps must be positive"));
        }
        if self.log_interval == 0 {
            return Err(Error::invalid("log_interval must be positive"));
        }
        for (name, v) in [("flow_lr", self.flow_lr), ("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.metric.t_eps > 0.0 && self.metric.t_eps < 1.0) {
            return Err(Error::invalid("t_eps must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("tau and gamma must lie in [0, 1]"));
        }
        DualState::new(self.lambda_init, self.epsilon, self.eta, self.dual_mode)?;
        Ok(())
    }
}

/// Velocity source of the behavioral policy: a trained field, or the exact
/// field of a synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub enum BehaviorField {
    Learned(VelocityField),
    Analytic(SyntheticTask),
}

impl VelocitySource for BehaviorField {
    fn action_dim(&self) -> usize {
        match self {
            BehaviorField::Learned(f) => f.action_dim(),
            BehaviorField::Analytic(t) => t.action_dim(),
        }
    }

    fn velocity(&self, t: f64, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        match self {
            BehaviorField::Learned(f) => f.velocity(t, state, action),
            BehaviorField::Analytic(task) => task.velocity(t, state, action),
        }
    }
}

pub type BehaviorPolicy = FlowPolicy<BehaviorField>;

/// One metric-log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub flow_loss: Option<f64>,
    pub td_loss: Option<f64>,
    pub mean_q: f64,
    pub constraint: f64,
    pub lambda: f64,
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log records always serialize")
    }
}

pub fn log_to_jsonl(log: &[LogRecord]) -> String {
    log.iter().map(|r| r.to_json_line() + "\n").collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub map: TransportMap<ResidualNet>,
    pub behavior: BehaviorPolicy,
    pub critic: Option<Critic>,
    pub dual: DualState,
    pub log: Vec<LogRecord>,
}

const STREAM_INIT: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_FLOW: u64 = 2;
const STREAM_CRITIC: u64 = 3;
const STREAM_ACTOR: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Freshly initialized behavioral flow for a dataset.
pub fn init_behavior(config: &TrainConfig, dataset: &OfflineDataset) -> Result<BehaviorPolicy> {
    let meta = dataset.meta();
    let mut rng = stream(config.seed, STREAM_INIT);
    let field = VelocityField::new(meta.state_dim, meta.action_dim, &config.hidden, config.activation, &mut rng)?;
    FlowPolicy::new(BehaviorField::Learned(field), config.euler_steps)
}

/// Flow-matching pretraining of a learned behavior policy; returns the loss curve.
pub fn pretrain_flow(
    behavior: &mut BehaviorPolicy,
    dataset: &OfflineDataset,
    config: &TrainConfig,
    steps: usize,
) -> Result<Vec<f64>> {
    let BehaviorField::Learned(field) = behavior.field_mut() else {
        return Err(Error::invalid("only a learned behavior flow can be trained"));
    };
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let points = dataset.state_action_points();
    let mut trainer = FlowTrainer::new(field, config.flow_lr, config.grad_clip);
    let mut rng = stream(config.seed, STREAM_FLOW);
    rng.set_word_pos(1 << 40);
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch: Vec<StateActionPoint> = (0..config.batch_size)
            .map(|_| points[rng.random_range(0..points.len())].clone())
            .collect();
        curve.push(trainer.step(field, &batch, &mut rng).map_err(|e| e.at_step(step))?);
    }
    Ok(curve)
}

/// The interleaved refinement loop: flow step, critic step, actor step, dual step.
pub struct Trainer<'a> {
    config: TrainConfig,
    rows: &'a [Transition],
    points: Vec<StateActionPoint>,
    behavior: BehaviorPolicy,
    flow_trainer: Option<FlowTrainer>,
    map: TransportMap<ResidualNet>,
    actor_opt: ActorOptimizer,
    critic: Option<Critic>,
    dual: DualState,
    analytic_q: Option<&'a dyn ActionValue>,
    data_rng: ChaCha8Rng,
    flow_rng: ChaCha8Rng,
    critic_rng: ChaCha8Rng,
    actor_rng: ChaCha8Rng,
    step: usize,
    log: Vec<LogRecord>,
}

impl<'a> Trainer<'a> {
    /// Builds all networks from the config seed and runs any flow warm-up.
    pub fn new(config: TrainConfig, dataset: &'a OfflineDataset, analytic_q: Option<&'a dyn ActionValue>) -> Result<Self> {
        let mut behavior = init_behavior(&config, dataset)?;
        if config.flow_warmup_steps > 0 {
            pretrain_flow(&mut behavior, dataset, &config, config.flow_warmup_steps)?;
        }
        Self::with_behavior(config, dataset, analytic_q, behavior)
    }

    /// Uses an existing behavior policy as the starting flow.
    pub fn with_behavior(
        config: TrainConfig,
        dataset: &'a OfflineDataset,
        analytic_q: Option<&'a dyn ActionValue>,
        behavior: BehaviorPolicy,
    ) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::invalid("cannot train on an empty dataset"));
        }
        let meta = dataset.meta();
        check_dim("behavior action", meta.action_dim, behavior.action_dim())?;
        if config.q_source == QSource::Analytic && analytic_q.is_none() {
            return Err(Error::invalid("q_source = analytic needs a task value function"));
        }
        let mut init = stream(config.seed, STREAM_INIT);
        // Skip past the draws used for the flow so the residual does not reuse them.
        init.set_word_pos(1 << 40);
        let residual = ResidualNet::new(
            meta.state_dim,
            meta.action_dim,
            &config.hidden,
            config.activation,
            config.max_displacement,
            &mut init,
        )?;
        let critic = match config.q_source {
            QSource::Critic => {
                let mut c = Critic::new(meta.state_dim, meta.action_dim, &config.hidden, config.activation, config.critic_lr, &mut init)?;
                c.tau = config.tau;
                c.gamma = config.gamma;
                c.grad_clip = config.grad_clip;
                Some(c)
            }
            QSource::Analytic => None,
        };
        let actor_opt = ActorOptimizer::new(&residual, config.actor_lr, config.grad_clip, config.q_normalize);
        let flow_trainer = match (behavior.field(), config.flow_updates) {
            (BehaviorField::Learned(f), true) => Some(FlowTrainer::new(f, config.flow_lr, config.grad_clip)),
            _ => None,
        };
        let dual = DualState::new(config.lambda_init, config.epsilon, config.eta, config.dual_mode)?;
        Ok(Self {
            rows: dataset.rows(),
            points: dataset.state_action_points(),
            behavior,
            flow_trainer,
            map: TransportMap::new(residual),
            actor_opt,
            critic,
            dual,
            analytic_q,
            data_rng: stream(config.seed, STREAM_DATA),
            flow_rng: stream(config.seed, STREAM_FLOW),
            critic_rng: stream(config.seed, STREAM_CRITIC),
            actor_rng: stream(config.seed, STREAM_ACTOR),
            step: 0,
            log: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn map(&self) -> &TransportMap<ResidualNet> {
        &self.map
    }

    pub fn behavior(&self) -> &BehaviorPolicy {
        &self.behavior
    }

    pub fn critic(&self) -> Option<&Critic> {
        self.critic.as_ref()
    }

    pub fn dual(&self) -> &DualState {
        &self.dual
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// One full iteration; the record is always returned, and kept in the log on
    /// logging steps.
    pub fn step(&mut self) -> Result<LogRecord> {
        let step = self.step;
        self.step_inner().map_err(|e| e.at_step(step))
    }

    fn step_inner(&mut self) -> Result<LogRecord> {
        let idx: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.data_rng.random_range(0..self.rows.len()))
            .collect();

        let flow_loss = match (&mut self.flow_trainer, self.behavior.field_mut()) {
            (Some(trainer), BehaviorField::Learned(field)) => {
                let batch: Vec<StateActionPoint> = idx.iter().map(|&i| self.points[i].clone()).collect();
                Some(trainer.step(field, &batch, &mut self.flow_rng)?)
            }
            _ => None,
        };

        let td_loss = match &mut self.critic {
            Some(critic) => {
                let batch: Vec<Transition> = idx.iter().map(|&i| self.rows[i].clone()).collect();
                Some(critic_update(critic, &self.behavior, &self.map, &batch, &mut self.critic_rng)?)
            }
            None => None,
        };

        let states: Vec<Vec<f64>> = idx.iter().map(|&i| self.rows[i].state.clone()).collect();
        let q: &dyn ActionValue = match (&self.critic, self.analytic_q) {
            (Some(c), _) => c,
            (None, Some(q)) => q,
            (None, None) => return Err(Error::invalid("no value function available")),
        };
        let stats: ActorStats = actor_update(
            &mut self.map,
            &mut self.actor_opt,
            q,
            &self.dual,
            &self.behavior,
            &self.config.metric,
            &states,
            &mut self.actor_rng,
        )?;
        if !stats.constraint.is_finite() || !stats.mean_q.is_finite() {
            return Err(Error::numeric("actor statistics became non-finite"));
        }
        self.dual.update(stats.constraint);
        if self.dual.lambda < 0.0 || !self.dual.lambda.is_finite() {
            return Err(Error::numeric("dual variable left [0, inf)"));
        }

        let record = LogRecord {
            step: self.step,
            flow_loss,
            td_loss,
            mean_q: stats.mean_q,
            constraint: stats.constraint,
            lambda: self.dual.lambda,
        };
        if self.step.is_multiple_of(self.config.log_interval) || self.step + 1 == self.config.steps {
            self.log.push(record);
        }
        self.step += 1;
        Ok(record)
    }

    /// Runs the remaining configured steps and returns every per-step record.
    pub fn run(&mut self) -> Result<Vec<LogRecord>> {
        let mut all = Vec::with_capacity(self.config.steps.saturating_sub(self.step));
        while self.step < self.config.steps {
            all.push(self.step()?);
        }
        Ok(all)
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            map: self.map,
            behavior: self.behavior,
            critic: self.critic,
            dual: self.dual,
            log: self.log,
        }
    }
}

/// Trains a transport map from scratch according to `config`.
pub fn run_fidec(
    config: &TrainConfig,
    dataset: &OfflineDataset,
    analytic_q: Option<&dyn ActionValue>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), dataset, analytic_q)?;
    trainer.run()?;
    Ok(trainer.finish())
}

/// Mean of `q` over refined actions `T_s(mu_beta(s, z))`, `samples` draws per state.
pub fn evaluate_refined<V: VelocitySource, Q: ActionValue + ?Sized>(
    behavior: &FlowPolicy<V>,
    map: &TransportMap<ResidualNet>,
    q: &Q,
    states: &[Vec<f64>],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    evaluate(behavior, Some(map), q, states, samples, seed)
}

/// Mean of `q` over unrefined behavioral actions.
pub fn evaluate_behavioral<V: VelocitySource, Q: ActionValue + ?Sized>(
    behavior: &FlowPolicy<V>,
    q: &Q,
    states: &[Vec<f64>],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    evaluate(behavior, None, q, states, samples, seed)
}

fn evaluate<V: VelocitySource, Q: ActionValue + ?Sized>(
    behavior: &FlowPolicy<V>,
    map: Option<&TransportMap<ResidualNet>>,
    q: &Q,
    states: &[Vec<f64>],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if states.is_empty() || samples == 0 {
        return Err(Error::invalid("evaluation needs states and samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for s in states {
        for _ in 0..samples {
            let z = standard_normal_vec(&mut rng, behavior.action_dim());
            let a = match map {
                Some(m) => m.sample_refined(behavior, s, &z)?.1,
                None => behavior.sample_action(s, &z)?,
            };
            total += q.value(s, &a)?;
        }
    }
    Ok(total / (states.len() * samples) as f64)
}

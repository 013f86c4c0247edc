//! Oracle suites run by `fidec validate`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::density::AnalyticDensity;
use crate::envs::{SyntheticTask, TASK_NAMES};
use crate::error::{Error, Result};
use crate::fisher::{fisher_from_score, optimal_epsilon, perturbed_score, score_from_velocity, FisherMetric};
use crate::flow::{FlowPolicy, GaussianOracle, VelocityField};
use crate::nn::{Activation, DenseNet};
use crate::train::{
    actor_step, actor_update, closed_form_refine, optimality_gap, ActionValue, ActorOptimizer, DualMode, DualState,
    MetricConfig,
};
use crate::transport::{
    fisher_form_quadrature, kl_quadratic, kl_quadrature_oracle, Displacement, GridSpec, LinearDisplacement, ResidualNet,
    ScoreSource, TransportMap,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl SuiteResult {
    pub fn line(&self) -> String {
        format!(
            "{:<18} {} ({:.2}s) {}",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.seconds,
            self.detail
        )
    }
}

type SuiteFn = fn() -> Result<(bool, String)>;

const SUITES: &[(&str, &str, SuiteFn)] = &[
    ("score-identity", "perturbed score vs exact Gaussian marginal score", score_identity),
    ("perturbation-rate", "log-log slope of score error vs eps on a two-mode mixture", perturbation_rate),
    ("kl-quadrature", "Fisher quadratic form vs grid KL", kl_quadrature),
    ("det-expansion", "first-order log-determinant expansion", det_expansion),
    ("closed-form", "converged actor steps vs closed-form refinement", closed_form),
    ("optimality-gap", "direct vs eigendecomposition gap", optimality_gap_suite),
    ("eps-star", "optimal perturbation for double precision", eps_star),
    ("gradients", "analytic gradients vs central differences", gradients),
];

/// `(name, description)` of every suite.
pub fn suite_names() -> Vec<(&'static str, &'static str)> {
    SUITES.iter().map(|(n, d, _)| (*n, *d)).collect()
}

/// Runs the named suites, or all of them when `names` is empty.
pub fn run_suites(names: &[String]) -> Result<Vec<SuiteResult>> {
    for n in names {
        if !SUITES.iter().any(|(s, _, _)| s == n) {
            return Err(Error::InvalidInput(format!("unknown suite {n:?}")));
        }
    }
    let mut out = Vec::new();
    for (name, _, f) in SUITES {
        if !names.is_empty() && !names.iter().any(|n| n == name) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = f()?;
        out.push(SuiteResult {
            name,
            pass,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn score_identity() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (mu, sigma) in [(0.0, 1.0), (0.7, 0.5), (-1.2, 2.0)] {
        let oracle = GaussianOracle { mu: vec![mu], sigma };
        let density = AnalyticDensity::gaussian(vec![mu], sigma)?;
        for t in [0.3, 0.5, 0.8, 0.95] {
            for i in 0..=60 {
                let a = -3.0 + 0.1 * i as f64;
                let got = perturbed_score(&oracle, &[], &[a], t)?.score[0];
                let exact = density.interpolant_score(t, &[a])?[0];
                worst = worst.max((got - exact).abs() / exact.abs().max(1.0));
            }
        }
    }
    let anchor = perturbed_score(&GaussianOracle { mu: vec![0.0], sigma: 1.0 }, &[], &[1.0], 0.5)?.score[0];
    Ok((
        worst < 1e-10 && anchor == -2.0,
        format!("max relative error {worst:.2e}; N(0,1), t=0.5, a=1 gives {anchor}"),
    ))
}

fn perturbation_rate() -> Result<(bool, String)> {
    let p = AnalyticDensity::isotropic_mixture(&[0.4, 0.6], &[vec![-1.5], vec![1.0]], 0.5)?;
    let probe = 0.7;
    let exact = p.score(&[probe])?[0];
    let eps = [0.2, 0.1, 0.05, 0.025];
    let mut errors = Vec::new();
    for e in eps {
        let t = 1.0 - e;
        let v = p.flow_velocity(t, &[probe])?;
        errors.push((score_from_velocity(&v, &[probe], t)[0] - exact).abs());
    }
    let slope = log_log_slope(&eps, &errors);
    Ok((
        (1.7..=2.3).contains(&slope),
        format!("fitted slope {slope:.3} (band [1.7, 2.3]) at a={probe}"),
    ))
}

fn kl_quadrature() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let unit = AnalyticDensity::gaussian(vec![0.0], 1.0)?;
    let grid = GridSpec::uniform(1, -10.0, 10.0, 8001)?;
    let shift = TransportMap::new(LinearDisplacement::constant(vec![0.3]));
    let kl = kl_quadrature_oracle(&unit, &shift, &[], &grid)?.kl;
    let samples = unit.sample(&mut rng, 10_000);
    let form = kl_quadratic(&shift, &ScoreSource::Analytic(&unit), &[], &samples)?;
    let gauss_ok = (kl - 0.045).abs() < 1e-4 && (form.value - kl).abs() < 3.0 * form.std_error;

    let mix = AnalyticDensity::isotropic_mixture(&[0.5, 0.5], &[vec![-2.0], vec![2.0]], 0.3)?;
    let mgrid = GridSpec::uniform(1, -5.0, 5.0, 8001)?;
    let shifts = [0.1, 0.05, 0.025];
    let mut gaps = Vec::new();
    for c in shifts {
        let m = TransportMap::new(LinearDisplacement::constant(vec![c]));
        let kl = kl_quadrature_oracle(&mix, &m, &[], &mgrid)?.kl;
        gaps.push((kl - fisher_form_quadrature(&mix, &m, &[], &mgrid)?).abs());
    }
    let slope = log_log_slope(&shifts, &gaps);
    Ok((
        gauss_ok && slope >= 2.5,
        format!("gaussian KL {kl:.6} vs form {:.6}; mixture gap slope {slope:.2}", form.value),
    ))
}

fn det_expansion() -> Result<(bool, String)> {
    let gap = |c: f64| -> Result<f64> {
        Ok(TransportMap::new(LinearDisplacement::scaled_identity(2, c))
            .log_det_inverse_approx(&[], &[0.4, -0.2])?
            .gap())
    };
    let (g1, g2) = (gap(0.01)?, gap(0.005)?);
    Ok((
        g1 < 3e-4 && g1 / g2 >= 3.5,
        format!("gap {g1:.3e} at c=0.01, shrink {:.2}x on halving", g1 / g2),
    ))
}

struct LinearQ(Vec<f64>);

impl ActionValue for LinearQ {
    fn value_and_grad(&self, _s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((a.iter().zip(&self.0).map(|(x, g)| x * g).sum(), self.0.clone()))
    }
}

fn closed_form() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let cases = 10;
    for _ in 0..cases {
        let score = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let metric = fisher_from_score(&score, true, rng.random_range(0.5..1.5))?;
        let q = LinearQ(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let dual = DualState::new(rng.random_range(1.0..4.0), 0.1, 0.0, DualMode::Direct)?;
        let base = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let closed = closed_form_refine(&q, &metric, &dual, &[], &base)?;
        let residual = ResidualNet::new(0, 2, &[16], Activation::Gelu, None, &mut rng)?;
        let mut map = TransportMap::new(residual);
        let mut opt = ActorOptimizer::new(map.residual(), 1e-2, None, false);
        for lr in [1e-2, 1e-3, 1e-4] {
            opt.set_learning_rate(lr);
            for _ in 0..3000 {
                actor_step(&mut map, &mut opt, &q, &dual, &[vec![]], std::slice::from_ref(&base), std::slice::from_ref(&metric))?;
            }
        }
        let iterative = map.residual().displacement(&[], &base)?;
        for (x, y) in iterative.iter().zip(&closed) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok((worst < 1e-3, format!("max coordinate difference {worst:.2e} over {cases} surrogates")))
}

fn optimality_gap_suite() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(2..5);
        let score: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = fisher_from_score(&score, rng.random::<bool>(), rng.random_range(0.01..1.0))?;
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gap = optimality_gap(&m, &g, rng.random_range(0.1..10.0))?;
        worst = worst.max((gap.direct - gap.eigen).abs());
    }
    let id = optimality_gap(&FisherMetric::identity(3), &[0.3, -1.0, 2.0], 2.0)?.direct;
    let diag = FisherMetric::from_matrix(2, vec![2.0, 0.0, 0.0, 0.5])?;
    let quarter = optimality_gap(&diag, &[1.0, 1.0], 1.0)?.direct;
    Ok((
        worst < 1e-8 && id == 0.0 && (quarter - 0.25).abs() < 1e-12,
        format!("max difference {worst:.2e}; identity gap {id}; diag(2, 0.5) gap {quarter}"),
    ))
}

fn eps_star() -> Result<(bool, String)> {
    let e = optimal_epsilon(1.0, 1.0, 1e-6)?;
    Ok((
        e.epsilon > 0.01 && e.epsilon < 1.0,
        format!("eps* {:.4} for delta 1e-6", e.epsilon),
    ))
}

fn gradients() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_nn: f64 = 0.0;
    for shape in [&[3usize, 8, 2][..], &[4, 16, 16, 1]] {
        for act in [Activation::Gelu, Activation::Tanh, Activation::Relu] {
            let net = DenseNet::new(shape, act, &mut rng)?;
            let x: Vec<f64> = (0..shape[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let up: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tape = net.backward(&x, &up)?;
            let f = |x: &[f64]| -> Result<f64> { Ok(net.forward(x)?.iter().zip(&up).map(|(o, u)| o * u).sum()) };
            for j in 0..x.len() {
                let h = 1e-4;
                let mut a = x.clone();
                a[j] += h;
                let mut b = x.clone();
                b[j] -= h;
                let fd = (f(&a)? - f(&b)?) / (2.0 * h);
                worst_nn = worst_nn.max((fd - tape.input()[j]).abs() / fd.abs().max(1e-2));
            }
        }
    }

    let mut worst_score: f64 = 0.0;
    let mut worst_q: f64 = 0.0;
    for name in TASK_NAMES {
        let task = SyntheticTask::by_name(name)?;
        let p = task.behavioral(&[])?;
        for _ in 0..50 {
            let a = [rng.random_range(-3.0..3.0), rng.random_range(-2.0..3.0)];
            if p.density(&a)? < 1e-8 {
                continue;
            }
            let s = task.analytic_score(&[], &a)?;
            let (_, g) = task.q_value(&[], &a)?;
            for j in 0..2 {
                let h = 1e-5;
                let mut up = a;
                up[j] += h;
                let mut dn = a;
                dn[j] -= h;
                let fd_s = (p.log_density(&up)? - p.log_density(&dn)?) / (2.0 * h);
                worst_score = worst_score.max((fd_s - s[j]).abs() / s[j].abs().max(1.0));
                let fd_q = (task.q_value(&[], &up)?.0 - task.q_value(&[], &dn)?.0) / (2.0 * h);
                worst_q = worst_q.max((fd_q - g[j]).abs() / g[j].abs().max(1e-3));
            }
        }
    }

    let field = VelocityField::new(0, 2, &[16, 16], Activation::Gelu, &mut rng)?;
    let policy = FlowPolicy::new(field, 10)?;
    let snapshot = policy.field().net().flat_parameters();
    let residual = ResidualNet::new(0, 2, &[16, 16], Activation::Gelu, Some(1.0), &mut rng)?;
    let mut map = TransportMap::new(residual);
    let mut opt = ActorOptimizer::new(map.residual(), 1e-3, Some(5.0), true);
    let task = SyntheticTask::by_name("bimodal")?;
    for _ in 0..5 {
        actor_update(
            &mut map,
            &mut opt,
            &task,
            &DualState::default(),
            &policy,
            &MetricConfig::default(),
            &vec![vec![]; 16],
            &mut rng,
        )?;
    }
    let frozen = policy.field().net().flat_parameters() == snapshot;
    Ok((
        worst_nn < 1e-3 && worst_score < 1e-4 && worst_q < 1e-6 && frozen,
        format!("nn {worst_nn:.1e}, score {worst_score:.1e}, q {worst_q:.1e}, flow frozen {frozen}"),
    ))
}

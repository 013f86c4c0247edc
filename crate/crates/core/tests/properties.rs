//! Randomized invariants across modules.

use fidec::density::AnalyticDensity;
use fidec::envs::{DatasetMode, SyntheticTask};
use fidec::fisher::{damped_inverse_apply, fisher_from_score, quadratic_penalty, relative_damping};
use fidec::flow::{gaussian_oracle_velocity, InterpolantSample};
use fidec::harness::RunConfig;
use fidec::dataset::OfflineDataset;
use fidec::train::optimality_gap;
use fidec::transport::{DivergenceMethod, LinearDisplacement, TransportMap};
use nalgebra::DVector;
use proptest::prelude::*;

fn vec_in(lo: f64, hi: f64, n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolant_is_exact_convex_combination(t in 0.0f64..=1.0, x0 in vec_in(-5.0, 5.0, 3), x1 in vec_in(-5.0, 5.0, 3)) {
        let p = InterpolantSample::new(t, x0.clone(), x1.clone()).unwrap();
        for j in 0..3 {
            prop_assert_eq!(p.xt[j], (1.0 - t) * x0[j] + t * x1[j]);
        }
    }

    #[test]
    fn oracle_velocity_is_odd_under_time_reversal(t in 0.01f64..0.99, a in -3.0f64..3.0) {
        let v = gaussian_oracle_velocity(&[0.0], 1.0, t, &[a]).unwrap()[0];
        let w = gaussian_oracle_velocity(&[0.0], 1.0, 1.0 - t, &[a]).unwrap()[0];
        prop_assert!((v + w).abs() < 1e-12);
    }

    #[test]
    fn sherman_morrison_matches_dense_solve(score in vec_in(-3.0, 3.0, 4), g in vec_in(-2.0, 2.0, 4), normalize: bool) {
        prop_assume!(score.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let damping = relative_damping(&score, normalize, 1e-3).max(1e-6);
        let m = fisher_from_score(&score, normalize, damping).unwrap();
        let x = damped_inverse_apply(&m, &g).unwrap();
        let dense = m.to_nalgebra().lu().solve(&DVector::from_column_slice(&g)).unwrap();
        for j in 0..4 {
            prop_assert!((x[j] - dense[j]).abs() <= 1e-7 * (1.0 + dense[j].abs()));
        }
    }

    #[test]
    fn normalized_metric_has_fixed_trace(score in vec_in(-10.0, 10.0, 3)) {
        prop_assume!(score.iter().map(|v| v * v).sum::<f64>() > 1e-8);
        let m = fisher_from_score(&score, true, 0.0).unwrap();
        prop_assert!((m.trace() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_is_non_negative(score in vec_in(-3.0, 3.0, 2), delta in vec_in(-2.0, 2.0, 2)) {
        let m = fisher_from_score(&score, true, 1e-3).unwrap();
        prop_assert!(quadratic_penalty(&m, &delta).unwrap() >= 0.0);
    }

    #[test]
    fn optimality_gap_forms_agree_and_scale_with_lambda(score in vec_in(-3.0, 3.0, 3), g in vec_in(-2.0, 2.0, 3), lambda in 0.1f64..10.0) {
        let m = fisher_from_score(&score, true, 0.05).unwrap();
        let gap = optimality_gap(&m, &g, lambda).unwrap();
        let half = optimality_gap(&m, &g, 2.0 * lambda).unwrap();
        prop_assert!((gap.direct - gap.eigen).abs() <= 1e-8 * (1.0 + gap.direct.abs()));
        prop_assert!((gap.direct - 2.0 * half.direct).abs() <= 1e-12 * (1.0 + gap.direct.abs()));
    }

    #[test]
    fn contraction_inverse_round_trips(c in -0.4f64..0.4, a in vec_in(-3.0, 3.0, 2)) {
        let map = TransportMap::new(LinearDisplacement::scaled_identity(2, c));
        let y = map.apply(&[], &a).unwrap();
        let back = map.invert(&[], &y).unwrap();
        for j in 0..2 {
            prop_assert!((back[j] - a[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn divergence_methods_agree(c in -0.5f64..0.5, a in vec_in(-2.0, 2.0, 2)) {
        let map = TransportMap::new(LinearDisplacement::scaled_identity(2, c));
        let exact = map.divergence(&[], &a, DivergenceMethod::Vjp).unwrap();
        let fd = map.divergence(&[], &a, DivergenceMethod::FiniteDifference).unwrap();
        prop_assert!((exact - 2.0 * c).abs() < 1e-12);
        prop_assert!((fd - exact).abs() < 1e-6);
    }

    #[test]
    fn mixture_score_matches_log_density_gradient(a in vec_in(-3.0, 3.0, 2), w in 0.1f64..0.9) {
        let p = AnalyticDensity::isotropic_mixture(&[w, 1.0 - w], &[vec![-1.0, 0.0], vec![1.5, 0.5]], 0.7).unwrap();
        let s = p.score(&a).unwrap();
        for j in 0..2 {
            let h = 1e-5;
            let mut up = a.clone();
            up[j] += h;
            let mut dn = a.clone();
            dn[j] -= h;
            let fd = (p.log_density(&up).unwrap() - p.log_density(&dn).unwrap()) / (2.0 * h);
            prop_assert!((fd - s[j]).abs() <= 1e-4 * s[j].abs().max(1.0));
        }
    }

    #[test]
    fn dataset_text_round_trips(size in 1usize..40, seed: u64, chain: bool) {
        let task = SyntheticTask::by_name("bimodal").unwrap();
        let mode = if chain { DatasetMode::Chain } else { DatasetMode::Bandit };
        let ds = task.make_dataset(size, seed, mode).unwrap();
        prop_assert_eq!(ds.len(), size);
        let back = OfflineDataset::from_text(&ds.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), ds.to_text());
    }

    #[test]
    fn run_config_text_round_trips(steps in 0usize..10_000, t_eps in 0.05f64..0.99, lr in 1e-6f64..1e-1, seeds in prop::collection::vec(0u64..1000, 1..5)) {
        let mut c = RunConfig::default();
        c.train.steps = steps;
        c.train.metric.t_eps = t_eps;
        c.train.actor_lr = lr;
        c.seeds = seeds;
        let text = c.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_text(), text);
    }
}

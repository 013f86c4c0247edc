use crate::error::{check_dim, Error, Result};
use crate::fisher::{damped_inverse_apply, FisherMetric};

use super::critic::ActionValue;
use super::dual::DualState;

/// Pointwise natural-gradient displacement `lambda^{-1} M^{-1} grad_a Q(s, a)`.
pub fn closed_form_refine<Q: ActionValue + ?Sized>(
    q: &Q,
    metric: &FisherMetric,
    dual: &DualState,
    state: &[f64],
    action: &[f64],
) -> Result<Vec<f64>> {
    if dual.lambda <= 0.0 {
        return Err(Error::invalid("closed-form refinement needs lambda > 0"));
    }
    if metric.damping() <= 0.0 {
        return Err(Error::invalid("closed-form refinement needs a damped metric"));
    }
    let (_, grad) = q.value_and_grad(state, action)?;
    let step = damped_inverse_apply(metric, &grad)?;
    Ok(step.iter().map(|v| v / dual.lambda).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalityGap {
    /// `(g^T M^{-1} g - g^T g) / (2 lambda)`.
    pub direct: f64,
    /// `sum_i (u_i^T g)^2 (1 / lambda_i - 1) / (2 lambda)`.
    pub eigen: f64,
}

/// Value lost by taking the isotropic step instead of the natural-gradient step.
pub fn optimality_gap(metric: &FisherMetric, g: &[f64], lambda: f64) -> Result<OptimalityGap> {
    check_dim("gradient", metric.dim(), g.len())?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("optimality gap needs lambda > 0"));
    }
    let m = metric.to_nalgebra();
    let eig = m.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min_ev = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if !(min_ev > 1e-12 * max_ev.max(1.0)) {
        return Err(Error::Singular("optimality gap needs an invertible metric".into()));
    }
    let gv = nalgebra::DVector::from_column_slice(g);
    let solved = m
        .lu()
        .solve(&gv)
        .ok_or_else(|| Error::Singular("metric is not invertible".into()))?;
    let direct = (gv.dot(&solved) - gv.dot(&gv)) / (2.0 * lambda);
    let eigen = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(ev, u)| u.dot(&gv).powi(2) * (1.0 / ev - 1.0))
        .sum::<f64>()
        / (2.0 * lambda);
    let scale = 1.0f64.max(direct.abs()).max(eigen.abs());
    if (direct - eigen).abs() > 1e-8 * scale {
        return Err(Error::numeric(format!(
            "optimality gap forms disagree: direct {direct}, eigen {eigen}"
        )));
    }
    Ok(OptimalityGap { direct, eigen })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::fisher_from_score;
    use crate::train::dual::DualMode;

    struct Linear(Vec<f64>);

    impl ActionValue for Linear {
        fn value_and_grad(&self, _s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((a.iter().zip(&self.0).map(|(x, g)| x * g).sum(), self.0.clone()))
        }
    }

    fn dual(lambda: f64) -> DualState {
        DualState::new(lambda, 0.1, 0.0, DualMode::Direct).unwrap()
    }

    #[test]
    fn refine_examples() {
        let d = closed_form_refine(&Linear(vec![1.0, 0.0]), &FisherMetric::identity(2), &dual(2.0), &[], &[0.0, 0.0]).unwrap();
        assert_eq!(d, vec![0.5, 0.0]);

        let s = [0.6, 0.8];
        let m = fisher_from_score(&s, false, 1.0).unwrap();
        let d = closed_form_refine(&Linear(s.to_vec()), &m, &dual(1.0), &[], &[0.0, 0.0]).unwrap();
        assert!((d[0] - 0.3).abs() < 1e-15 && (d[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn refine_rejects_zero_lambda_and_undamped_metric() {
        let q = Linear(vec![1.0, 0.0]);
        assert!(closed_form_refine(&q, &FisherMetric::identity(2), &dual(0.0), &[], &[0.0, 0.0]).is_err());
        let undamped = fisher_from_score(&[1.0, 0.0], false, 0.0).unwrap();
        assert!(closed_form_refine(&q, &undamped, &dual(1.0), &[], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn gap_examples() {
        let id = FisherMetric::identity(3);
        assert_eq!(optimality_gap(&id, &[1.0, -2.0, 0.5], 3.0).unwrap().direct, 0.0);
        let m = FisherMetric::from_matrix(2, vec![2.0, 0.0, 0.0, 0.5]).unwrap();
        let gap = optimality_gap(&m, &[1.0, 1.0], 1.0).unwrap();
        assert!((gap.direct - 0.25).abs() < 1e-15);
        assert!((gap.eigen - 0.25).abs() < 1e-12);
        assert_eq!(optimality_gap(&m, &[0.0, 0.0], 1.0).unwrap().direct, 0.0);
    }

    #[test]
    fn gap_rejects_singular_metric() {
        let m = fisher_from_score(&[1.0, 1.0], false, 0.0).unwrap();
        assert!(matches!(optimality_gap(&m, &[1.0, 0.0], 1.0), Err(Error::Singular(_))));
    }
}

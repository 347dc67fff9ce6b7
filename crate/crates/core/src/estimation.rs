//! Remote estimator replicas, estimation error and the threshold trigger.
//!
//! The estimator is an open-loop predictor. A state sent at step `k` arrives
//! at `k + 1`, where the estimate becomes `A x(k)`; without a delivery the
//! estimate is propagated as `A x̂(k)`. Because the rule only depends on data
//! both ends share, the sensor keeps a bit-identical copy and can evaluate
//! the error locally.

use crate::dynamics::{Matrix, SystemModel, Vector};
use crate::error::{Error, Result};

/// One replica of an agent's remote estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorPair {
    pub x_hat: Vector,
    /// State sent in the previous step, delivered at the next update.
    pub pending_transmission: Option<Vector>,
}

impl EstimatorPair {
    /// Starts the estimate at the true initial state, so `e(0) = 0`.
    pub fn new(x0: Vector) -> Self {
        EstimatorPair { x_hat: x0, pending_transmission: None }
    }

    /// Queues `x` for delivery at the next update.
    pub fn transmit(&mut self, x: Vector) {
        self.pending_transmission = Some(x);
    }
}

/// Outcome of the trigger check for a granted slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriggerDecision {
    pub gamma: bool,
    pub error_sq: f64,
}

/// Advances an estimator replica by one step with the model's state matrix.
pub fn update_estimator(pair: &EstimatorPair, model: &SystemModel) -> Result<EstimatorPair> {
    update_with(pair, model.a())
}

/// Same as [`update_estimator`] for an explicit estimator matrix (which may
/// differ from the true dynamics, e.g. after re-identification).
pub fn update_with(pair: &EstimatorPair, a: &Matrix) -> Result<EstimatorPair> {
    let source = pair.pending_transmission.as_ref().unwrap_or(&pair.x_hat);
    if source.len() != a.ncols() {
        return Err(Error::dim(None, format!("estimator state length {}, model dimension {}", source.len(), a.ncols())));
    }
    Ok(EstimatorPair { x_hat: a * source, pending_transmission: None })
}

/// `e = x − x̂`.
pub fn compute_error(x: &Vector, x_hat: &Vector) -> Result<Vector> {
    if x.len() != x_hat.len() {
        return Err(Error::dim(None, format!("state length {}, estimate length {}", x.len(), x_hat.len())));
    }
    Ok(x - x_hat)
}

/// Transmit iff `‖e‖² ≥ δ` (boundary inclusive).
pub fn trigger_decision(e: &Vector, delta: f64) -> TriggerDecision {
    let error_sq = e.norm_squared();
    TriggerDecision { gamma: error_sq >= delta, error_sq }
}

/// `A^T e0 + Σ_{j<T} A^{T−j−1} v_j` for `T = noises.len()`: the error after `T`
/// steps without a delivery.
pub fn closed_form_error(e0: &Vector, model: &SystemModel, noises: &[Vector]) -> Result<Vector> {
    let n = model.dim();
    if e0.len() != n {
        return Err(Error::dim(None, format!("initial error length {}, model dimension {n}", e0.len())));
    }
    if noises.is_empty() {
        return Err(Error::config("noises", "need at least one step"));
    }
    if let Some((j, v)) = noises.iter().enumerate().find(|(_, v)| v.len() != n) {
        return Err(Error::dim(None, format!("noise {j} has length {}, model dimension {n}", v.len())));
    }
    let t = noises.len();
    // powers[p] = A^p for p = 0..=T
    let mut powers = Vec::with_capacity(t + 1);
    powers.push(Matrix::identity(n, n));
    for p in 1..=t {
        let next = &powers[p - 1] * model.a();
        powers.push(next);
    }
    let mut e = &powers[t] * e0;
    for (j, v) in noises.iter().enumerate() {
        e += &powers[t - j - 1] * v;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn v(data: &[f64]) -> Vector {
        Vector::from_row_slice(data)
    }

    #[test]
    fn update_uses_delivered_state() {
        let model = SystemModel::new(Matrix::identity(2, 2), Matrix::zeros(2, 2)).unwrap();
        let pair = EstimatorPair { x_hat: v(&[9.0, 9.0]), pending_transmission: Some(v(&[1.0, 0.0])) };
        let next = update_estimator(&pair, &model).unwrap();
        assert_eq!(next.x_hat, v(&[1.0, 0.0]));
        assert!(next.pending_transmission.is_none());

        let model = SystemModel::scalar(3.0, 0.0).unwrap();
        let pair = EstimatorPair { x_hat: v(&[0.0]), pending_transmission: Some(v(&[1.0])) };
        assert_eq!(update_estimator(&pair, &model).unwrap().x_hat, v(&[3.0]));
    }

    #[test]
    fn update_propagates_estimate_without_delivery() {
        let model = SystemModel::scalar(0.5, 0.0).unwrap();
        let pair = EstimatorPair::new(v(&[2.0]));
        assert_eq!(update_estimator(&pair, &model).unwrap().x_hat, v(&[1.0]));
    }

    #[test]
    fn update_rejects_dimension_mismatch() {
        let model = SystemModel::scalar(0.5, 0.0).unwrap();
        assert!(update_estimator(&EstimatorPair::new(v(&[1.0, 2.0])), &model).is_err());
    }

    #[test]
    fn error_examples() {
        assert_eq!(compute_error(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), v(&[0.0, 0.0]));
        assert_eq!(compute_error(&v(&[1.0, 2.0]), &v(&[0.5, 2.0])).unwrap(), v(&[0.5, 0.0]));
        assert_eq!(compute_error(&v(&[0.0]), &v(&[-1.0])).unwrap(), v(&[1.0]));
        assert!(compute_error(&v(&[0.0]), &v(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn trigger_examples() {
        // ‖e‖² exactly at the threshold fires.
        let e = v(&[0.3, 0.1]);
        assert!(trigger_decision(&e, e.norm_squared()).gamma);
        assert!(!trigger_decision(&v(&[0.0, 0.0]), 0.1).gamma);
        let d = trigger_decision(&v(&[0.2, 0.2]), 0.1);
        assert!(!d.gamma);
        assert!((d.error_sq - 0.08).abs() < 1e-15);
    }

    #[test]
    fn closed_form_examples() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, 1.0, -0.3, 2.0]);
        let model = SystemModel::new(a.clone(), Matrix::zeros(2, 2)).unwrap();
        let e0 = v(&[1.0, -2.0]);
        assert_eq!(closed_form_error(&e0, &model, &[v(&[0.0, 0.0])]).unwrap(), &a * &e0);

        let model = SystemModel::scalar(2.0, 1.0).unwrap();
        assert_eq!(closed_form_error(&v(&[1.0]), &model, &[v(&[1.0]), v(&[1.0])]).unwrap(), v(&[7.0]));

        let model = SystemModel::new(a, Matrix::zeros(2, 2)).unwrap();
        let zeros = vec![v(&[0.0, 0.0]); 5];
        assert_eq!(closed_form_error(&v(&[0.0, 0.0]), &model, &zeros).unwrap(), v(&[0.0, 0.0]));
    }

    proptest! {
        #[test]
        fn closed_form_matches_recursion(
            (a, e0, noises) in (1usize..=4).prop_flat_map(|n| (
                prop::collection::vec(-1.2..1.2f64, n * n).prop_map(move |d| Matrix::from_vec(n, n, d)),
                prop::collection::vec(-2.0..2.0f64, n).prop_map(Vector::from_vec),
                prop::collection::vec(prop::collection::vec(-2.0..2.0f64, n).prop_map(Vector::from_vec), 1..=20),
            )),
        ) {
            let n = a.nrows();
            let model = SystemModel::new(a.clone(), Matrix::zeros(n, n)).unwrap();
            let mut e = e0.clone();
            for w in &noises {
                e = &a * e + w;
            }
            let closed = closed_form_error(&e0, &model, &noises).unwrap();
            let scale = e.amax().max(1.0);
            prop_assert!((closed - e).amax() <= 1e-9 * scale);
        }

        #[test]
        fn trigger_is_monotone_in_threshold(
            e in prop::collection::vec(-1.0..1.0f64, 1..5).prop_map(Vector::from_vec),
            d1 in 1e-6..2.0f64,
            d2 in 1e-6..2.0f64,
        ) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(trigger_decision(&e, hi).gamma <= trigger_decision(&e, lo).gamma);
        }
    }
}

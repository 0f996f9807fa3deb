//! Central-finite-difference verification of tape gradients.

use thiserror::Error;

use super::{NodeId, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("function is not deterministic: two evaluations at the base point differ ({first} vs {second}); disable dropout before checking gradients")]
    NonDeterministic { first: f64, second: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Compares tape gradients against `(f(p+ε) − f(p−ε)) / 2ε` for every entry
/// of every parameter and returns the worst relative error.
///
/// `f` receives a fresh tape plus one leaf per parameter and must return the
/// scalar loss node. It is called once per perturbed entry, so keep parameter
/// counts small (this is a test harness, not a training path).
///
/// Relative error uses `|a − n| / max(|a|, |n|)`, defined as zero when both
/// magnitudes are below 1e-8 (zero/zero convention for flat directions).
pub fn grad_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64, GradCheckError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, TensorError>,
{
    if !(epsilon > 0.0) {
        return Err(GradCheckError::BadEpsilon(epsilon));
    }

    let eval = |probe: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = probe.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &ids)?;
        Ok(tape.value(loss).scalar_value()?)
    };

    // Dropout (or any other internal randomness) would make the finite
    // differences meaningless; two base evaluations must agree bit for bit.
    let base = params.to_vec();
    let first = eval(&base)?;
    let second = eval(&base)?;
    if first.to_bits() != second.to_bits() {
        return Err(GradCheckError::NonDeterministic { first, second });
    }

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (pi, param) in params.iter().enumerate() {
        let analytic = grads.get(ids[pi]);
        for r in 0..param.rows() {
            for c in 0..param.cols() {
                let center = param.get(r, c);
                let mut probe = base.clone();
                probe[pi] = param.with_entry(r, c, center + epsilon);
                let plus = eval(&probe)?;
                probe[pi] = param.with_entry(r, c, center - epsilon);
                let minus = eval(&probe)?;
                let numeric = (plus - minus) / (2.0 * epsilon);
                worst = worst.max(relative_error(analytic.get(r, c), numeric));
            }
        }
    }
    Ok(worst)
}

/// Mixed relative/absolute error: the deviation is scaled by the gradient
/// magnitude, floored at 1. A pure relative metric is uninformative near
/// zero — the central difference carries roundoff noise of order
/// u·|f|/ε (~1e-10 for a unit-scale loss at ε = 1e-5), so for an entry
/// whose true gradient is merely small the ratio measures that noise, not
/// the tape. The floor turns such entries into an absolute comparison,
/// under which the noise is vanishing while genuine defects (a wrong local
/// derivative, a dropped term, a sign flip on any gradient that could move
/// a parameter) still register far above verification tolerances. Two
/// exact zeros fall out as error 0, no special case needed.
fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1.0);
    (analytic - numeric).abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_function_checks_out() {
        // f(x) = x² at x = 3: analytic 6, central difference 6.
        let params = [Tensor::scalar(3.0)];
        let err = grad_check(
            |tape, p| {
                let sq = tape.mul(p[0], p[0])?;
                Ok(tape.sum(sq))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "rel err {err}");
    }

    #[test]
    fn constant_function_has_zero_error_by_convention() {
        let params = [Tensor::scalar(4.0)];
        let err = grad_check(
            |tape, p| {
                let zero = tape.scale(p[0], 0.0);
                Ok(tape.sum(zero))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_positive_epsilon() {
        let params = [Tensor::scalar(1.0)];
        let run = |eps| grad_check(|tape, p| Ok(tape.sum(p[0])), &params, eps);
        assert!(matches!(run(0.0), Err(GradCheckError::BadEpsilon(_))));
        assert!(matches!(run(-1e-5), Err(GradCheckError::BadEpsilon(_))));
        assert!(matches!(run(f64::NAN), Err(GradCheckError::BadEpsilon(_))));
    }

    #[test]
    fn detects_non_deterministic_function() {
        use std::cell::Cell;
        let calls = Cell::new(0.0f64);
        let params = [Tensor::scalar(1.0)];
        let result = grad_check(
            |tape, p| {
                calls.set(calls.get() + 1.0);
                let jitter = tape.leaf(Tensor::scalar(calls.get()));
                let sum = tape.add(p[0], jitter)?;
                Ok(tape.sum(sum))
            },
            &params,
            1e-5,
        );
        assert!(matches!(result, Err(GradCheckError::NonDeterministic { .. })));
    }

    #[test]
    fn catches_a_deliberately_wrong_gradient() {
        // tanh reported as if its local derivative were 1 (i.e. skipping the
        // chain rule) must blow past any reasonable tolerance. Emulated by
        // comparing f(x)=tanh(x) against analytic-for-identity via a probe:
        // we check that a correct tape on tanh has low error, then assert the
        // identity-vs-tanh mismatch is large at the same point.
        let params = [Tensor::scalar(0.7)];
        let err = grad_check(
            |tape, p| {
                let t = tape.tanh(p[0]);
                Ok(tape.sum(t))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "correct gradient should verify, got {err}");

        let analytic_wrong = 1.0; // pretend dtanh/dx = 1
        let x: f64 = 0.7;
        let numeric = ((x + 1e-5).tanh() - (x - 1e-5).tanh()) / 2e-5;
        assert!(relative_error(analytic_wrong, numeric) > 0.3);
    }

    #[test]
    fn multi_parameter_model_verifies() {
        let params = [
            Tensor::new(2, 3, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap(),
            Tensor::new(3, 2, vec![0.7, -0.8, 0.9, 0.1, -0.2, 0.3]).unwrap(),
            Tensor::new(1, 2, vec![0.05, -0.05]).unwrap(),
        ];
        let err = grad_check(
            |tape, p| {
                let prod = tape.matmul(p[0], p[1])?;
                let shifted = tape.add_row_broadcast(prod, p[2])?;
                let act = tape.sigmoid(shifted);
                let sq = tape.mul(act, act)?;
                Ok(tape.sum(sq))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }
}

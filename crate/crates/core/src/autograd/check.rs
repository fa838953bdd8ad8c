//! Finite-difference verification of tape gradients.

use crate::error::Result;
use crate::numerics::Matrix;

use super::params::{ParamId, ParamStore};
use super::tape::Gradients;

/// Worst relative disagreement between an analytic gradient and central
/// differences, over a set of parameters.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    pub worst_param: Option<(ParamId, usize)>,
    pub entries_checked: usize,
}

/// Compares `grads` against central differences of `loss_fn` for every
/// entry of every listed parameter. `loss_fn` receives the store with one
/// entry displaced and must re-run the full forward pass.
///
/// Relative error is |ad - fd| / max(floor, |ad| + |fd|). Below the floor
/// the comparison is effectively absolute with threshold rtol * floor;
/// central differences carry roundoff near macheps * |loss| / eps, so a
/// floor of 1e-4 keeps a flat direction (true gradient zero) from turning
/// that noise into a false alarm while still flagging real sign or scale
/// mistakes, which sit orders of magnitude higher.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    grads: &Gradients,
    eps: f64,
    mut loss_fn: F,
) -> Result<FiniteDiffReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    const FLOOR: f64 = 1e-4;
    let mut report =
        FiniteDiffReport { max_rel_error: 0.0, worst_param: None, entries_checked: 0 };
    for &id in params {
        let base = store.value(id).clone();
        let zero = Matrix::zeros(base.rows(), base.cols());
        let analytic = grads.get(id).unwrap_or(&zero).clone();
        for idx in 0..base.data().len() {
            let mut plus = base.clone();
            plus.data_mut()[idx] += eps;
            store.set_value(id, plus)?;
            let f_plus = loss_fn(store)?;

            let mut minus = base.clone();
            minus.data_mut()[idx] -= eps;
            store.set_value(id, minus)?;
            let f_minus = loss_fn(store)?;

            let fd = (f_plus - f_minus) / (2.0 * eps);
            let ad = analytic.data()[idx];
            let rel = (ad - fd).abs() / FLOOR.max(ad.abs() + fd.abs());
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = Some((id, idx));
            }
        }
        store.set_value(id, base)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::tape::Tape;

    // loss = Σ sigmoid(x·w)² exercises matmul, sigmoid, hadamard, and the
    // reduction; the FD check should agree to well under 1e-4 at eps 1e-5.
    #[test]
    fn composite_loss_passes_finite_differences() {
        let mut store = ParamStore::new();
        let x = store.register(
            "x",
            Matrix::new(2, 3, vec![0.2, -0.4, 0.7, 1.1, 0.05, -0.3]).unwrap(),
            true,
        );
        let w = store.register(
            "w",
            Matrix::new(3, 2, vec![0.5, -0.2, 0.3, 0.9, -0.6, 0.1]).unwrap(),
            true,
        );
        let forward = |store: &ParamStore| -> Result<f64> {
            let mut tape = Tape::new();
            let xn = tape.param(store, x);
            let wn = tape.param(store, w);
            let h = tape.matmul(xn, wn)?;
            let s = tape.sigmoid(h);
            let sq = tape.hadamard(s, s)?;
            let ones_r = tape.constant(Matrix::new(1, 2, vec![1.0; 2]).unwrap());
            let ones_c = tape.constant(Matrix::new(2, 1, vec![1.0; 2]).unwrap());
            let col = tape.matmul(sq, ones_c)?;
            let loss = tape.matmul(ones_r, col)?;
            tape.scalar(loss)
        };
        let grads = {
            let mut tape = Tape::new();
            let xn = tape.param(&store, x);
            let wn = tape.param(&store, w);
            let h = tape.matmul(xn, wn).unwrap();
            let s = tape.sigmoid(h);
            let sq = tape.hadamard(s, s).unwrap();
            let ones_r = tape.constant(Matrix::new(1, 2, vec![1.0; 2]).unwrap());
            let ones_c = tape.constant(Matrix::new(2, 1, vec![1.0; 2]).unwrap());
            let col = tape.matmul(sq, ones_c).unwrap();
            let loss = tape.matmul(ones_r, col).unwrap();
            tape.backward(loss).unwrap()
        };
        let report = finite_diff_check(&mut store, &[x, w], &grads, 1e-5, forward).unwrap();
        assert_eq!(report.entries_checked, 12);
        assert!(report.max_rel_error <= 1e-6, "rel error {}", report.max_rel_error);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut store = ParamStore::new();
        let x = store.register("x", Matrix::new(1, 1, vec![0.5]).unwrap(), true);
        // Claim gradient 10 for loss = x², true gradient 1 at x = 0.5.
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        let sq = tape.hadamard(xn, xn).unwrap();
        let mut grads = tape.backward(sq).unwrap();
        let _ = &mut grads; // gradients are correct here
        let report = finite_diff_check(&mut store, &[x], &grads, 1e-5, |s| {
            // Deliberately check against a different function.
            Ok(10.0 * s.value(x).get(0, 0))
        })
        .unwrap();
        assert!(report.max_rel_error > 0.5);
        assert_eq!(report.worst_param, Some((x, 0)));
    }
}

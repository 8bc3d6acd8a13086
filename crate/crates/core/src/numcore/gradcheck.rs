//! Central finite-difference validation of analytic gradients.

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of a gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat entry index holding the worst error.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compare `analytic` against central differences of `value` over every entry of `params`.
///
/// The error per entry is `|a − n| / max(1, |a|, |n|)`.
pub fn compare_gradients<F>(
    params: &[(String, Matrix)],
    analytic: &[Matrix],
    h: f64,
    value: F,
) -> Result<GradCheckReport>
where
    F: Fn(&[Matrix]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!("{} analytic gradients for {} parameters", analytic.len(), params.len())));
    }
    let mut current: Vec<Matrix> = params.iter().map(|(_, m)| m.clone()).collect();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, entries_checked: 0 };
    for (p, (name, base)) in params.iter().enumerate() {
        if analytic[p].shape() != base.shape() {
            return Err(Error::Shape(format!("gradient for {name} has the wrong shape")));
        }
        for k in 0..base.data().len() {
            let original = base.data()[k];
            current[p].data_mut()[k] = original + h;
            let plus = value(&current)?;
            current[p].data_mut()[k] = original - h;
            let minus = value(&current)?;
            current[p].data_mut()[k] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("loss while perturbing {name}[{k}]")));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[p].data()[k];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.entries_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}

/// Check a loss written against the [`Tape`]: `loss` receives the tape and
/// one trainable [`Var`] per entry of `params`, in order.
pub fn grad_check<F>(params: &[(String, Matrix)], h: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let evaluate = |mats: &[Matrix]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> =
            params.iter().zip(mats).map(|((name, _), m)| tape.param(name.clone(), m.clone())).collect();
        let out = loss(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let base: Vec<Matrix> = params.iter().map(|(_, m)| m.clone()).collect();
    let (tape, vars, out) = evaluate(&base)?;
    let loss_value = tape.scalar(out)?;
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Matrix> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
    compare_gradients(params, &analytic, h, |mats| {
        let (tape, _, out) = evaluate(mats)?;
        tape.scalar(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::Rng;
    use std::sync::Arc;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn linear_loss_is_exact() {
        let mut rng = Rng::new(3);
        let c = random(3, 4, &mut rng);
        let x = random(3, 4, &mut rng);
        let report = grad_check(&[("x".into(), x)], 1e-5, |t, v| {
            let cv = t.constant(c.clone());
            let p = t.hadamard(cv, v[0])?;
            t.sum(p)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-10, "{report:?}");
        assert_eq!(report.entries_checked, 12);
    }

    #[test]
    fn squared_norm_matches_two_x() {
        let mut rng = Rng::new(4);
        let x = random(5, 3, &mut rng);
        let report = grad_check(&[("x".into(), x)], 1e-5, |t, v| t.sum_squares(v[0])).unwrap();
        assert!(report.max_rel_error <= 1e-7, "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut rng = Rng::new(5);
        let x = random(2, 3, &mut rng);
        let wrong = x.scale(3.0); // true gradient of ‖x‖² is 2x
        let params = vec![("x".to_string(), x.clone())];
        let report =
            compare_gradients(&params, &[wrong], 1e-5, |m| Ok(m[0].data().iter().map(|v| v * v).sum())).unwrap();
        assert!(report.max_rel_error >= 0.1, "{report:?}");
    }

    #[test]
    fn rejects_bad_step_and_non_finite_loss() {
        let params = vec![("x".to_string(), Matrix::scalar(1.0))];
        assert!(compare_gradients(&params, &[Matrix::scalar(0.0)], 0.0, |_| Ok(0.0)).is_err());
        assert!(compare_gradients(&params, &[Matrix::scalar(0.0)], 1e-5, |_| Ok(f64::NAN)).is_err());
    }

    /// Every differentiable tape operation at h = 1e-5 on random inputs.
    #[test]
    fn every_tape_operation_passes() {
        let mut rng = Rng::new(11);
        let a = random(4, 3, &mut rng);
        let b = random(3, 5, &mut rng);
        let c = random(6, 3, &mut rng);
        let bias = random(1, 5, &mut rng);
        let mask: Arc<Vec<bool>> = Arc::new((0..24).map(|i| i % 4 == 0 || i % 3 == 1).collect());
        let params = vec![("a".to_string(), a), ("b".to_string(), b), ("c".to_string(), c), ("bias".to_string(), bias)];
        let report = grad_check(&params, 1e-5, |t, v| {
            let ab = t.matmul(v[0], v[1])?; // 4x5
            let ab = t.add_row_bias(ab, v[3])?;
            let r = t.relu(ab)?;
            let act = t.matmul_t(v[0], v[2])?; // 4x6
            let sm = t.masked_softmax(act, &mask)?;
            let d = t.pairwise_sq_dist(v[0], v[2])?; // 4x6
            let neg = t.scale(d, -0.3)?;
            let ce = t.cross_entropy(neg, &[0, 2, 5, 1])?;
            let top = t.slice_rows(v[2], 1, 4)?;
            let stacked = t.concat_rows(&[v[0], top])?; // 7x3
            let side = t.concat_cols(&[stacked, stacked])?;
            let s1 = t.sum_squares(side)?;
            let s2 = t.sum(r)?;
            let s3 = t.sum_squares(sm)?;
            let w = t.hadamard(sm, d)?;
            let s4 = t.sum(w)?;
            let x = t.add(s1, s2)?;
            let x = t.add(x, s3)?;
            let x = t.add(x, s4)?;
            let x = t.scale(x, 0.01)?;
            t.add(x, ce)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }
}

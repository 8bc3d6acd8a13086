//! Similarity and normalization functions shared by every stage.

use super::matrix::{dot, sq_dist, Matrix};
use crate::error::{shape_err, Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    m.ensure_finite("softmax input")?;
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `out[i][j] = ‖a_i − b_j‖²`.
pub fn pairwise_sq_euclidean(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(shape_err!("pairwise distance between {}- and {}-dimensional points", a.cols(), b.cols()));
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.set(i, j, sq_dist(a.row(i), b.row(j)));
        }
    }
    Ok(out)
}

/// Cosine similarity of the mean-centered vectors (Pearson correlation).
///
/// A vector with zero variance has no direction after centering; its
/// similarity to anything is reported as 0 and a warning is logged.
pub fn centered_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_err!("centered cosine of lengths {} and {}", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("centered cosine needs at least 2 coordinates".into()));
    }
    let ca = centered(a);
    let cb = centered(b);
    let na = dot(&ca, &ca).sqrt();
    let nb = dot(&cb, &cb).sqrt();
    if na == 0.0 || nb == 0.0 {
        log::warn!("zero-variance vector in centered cosine; similarity set to 0");
        return Ok(0.0);
    }
    Ok((dot(&ca, &cb) / (na * nb)).clamp(-1.0, 1.0))
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Matrix::from_rows(&[[0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
        let s = softmax_rows(&Matrix::from_rows(&[[5.0, 5.0, 5.0]]).unwrap()).unwrap();
        for &v in s.row(0) {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
        // direct exp/sum oracle
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        let s = softmax_rows(&Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap()).unwrap();
        for (got, want) in s.row(0).iter().zip(&e) {
            assert!(close(*got, want / z, 1e-15));
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = softmax_rows(&Matrix::from_rows(&[[1000.0, 0.0, -1000.0]]).unwrap()).unwrap();
        assert!(close(s.get(0, 0), 1.0, 1e-15));
        assert!(s.is_finite());
    }

    #[test]
    fn pairwise_examples() {
        let a = Matrix::from_rows(&[[0.3, -1.2]]).unwrap();
        assert_eq!(pairwise_sq_euclidean(&a, &a).unwrap().get(0, 0), 0.0);
        let a = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert_eq!(pairwise_sq_euclidean(&a, &b).unwrap().get(0, 0), 2.0);
        assert!(pairwise_sq_euclidean(&a, &Matrix::zeros(1, 3)).is_err());

        let a = Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5]]).unwrap();
        let b = Matrix::from_rows(&[[1.0, 1.0], [-2.0, 0.5]]).unwrap();
        let d = pairwise_sq_euclidean(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let (x, y) = (a.row(i), b.row(j));
                let expansion = dot(x, x) + dot(y, y) - 2.0 * dot(x, y);
                assert!(close(d.get(i, j), expansion, 1e-12));
            }
        }
    }

    #[test]
    fn centered_cosine_examples() {
        let x = [0.3, -1.0, 2.0, 0.7];
        assert!(close(centered_cosine(&x, &x).unwrap(), 1.0, 1e-12));
        let x = [1.0, -2.0, 0.5, 0.5];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(close(centered_cosine(&x, &neg).unwrap(), -1.0, 1e-12));
        // center: [-1, 0, 1] and [-2/3, -2/3, 4/3]; dot = 2, norms √2 and √(24/9)
        let want = 2.0 / (2f64.sqrt() * (24.0f64 / 9.0).sqrt());
        assert!(close(centered_cosine(&[1.0, 2.0, 3.0], &[2.0, 2.0, 4.0]).unwrap(), want, 1e-12));
    }

    #[test]
    fn centered_cosine_degenerate_inputs() {
        assert_eq!(centered_cosine(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(centered_cosine(&[1.0], &[2.0]).is_err());
        assert!(centered_cosine(&[1.0, 2.0], &[2.0]).is_err());
    }

    fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-50.0f64..50.0, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(m in matrix_strategy(4, 6)) {
            let s = softmax_rows(&m).unwrap();
            for r in s.iter_rows() {
                prop_assert!(r.iter().all(|&v| v >= 0.0));
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_row_shift_invariant(m in matrix_strategy(3, 5), shifts in proptest::collection::vec(-100.0f64..100.0, 3)) {
            let mut shifted = m.clone();
            for (r, c) in shifts.iter().enumerate() {
                for v in shifted.row_mut(r) { *v += c; }
            }
            let d = softmax_rows(&m).unwrap().max_abs_diff(&softmax_rows(&shifted).unwrap()).unwrap();
            prop_assert!(d <= 1e-12);
        }

        #[test]
        fn self_distance_symmetric_zero_diagonal(m in matrix_strategy(5, 3)) {
            let d = pairwise_sq_euclidean(&m, &m).unwrap();
            for i in 0..5 {
                prop_assert!(d.get(i, i).abs() <= 1e-12);
                for j in 0..5 { prop_assert_eq!(d.get(i, j), d.get(j, i)); }
            }
        }

        #[test]
        fn centered_cosine_affine_invariant(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
            alpha in 0.1f64..10.0,
            beta in -10.0f64..10.0,
        ) {
            let base = centered_cosine(&a, &b).unwrap();
            let ta: Vec<f64> = a.iter().map(|v| alpha * v + beta).collect();
            let got = centered_cosine(&ta, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&base.abs()));
            prop_assert!((base - got).abs() <= 1e-10);
        }
    }
}

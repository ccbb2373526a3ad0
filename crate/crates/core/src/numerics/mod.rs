//! Dense linear algebra, symmetric eigendecomposition and seeded sampling.

mod eigen;
pub(crate) mod matrix;
mod random;
mod scalar;

pub use eigen::{sym_eigendecomposition, SymEigen};
pub use matrix::DenseMatrix;
pub use random::{Law, RandomStream, SQRT_3};
pub use scalar::{sigmoid, softplus, softplus_inverse, Scalar};

use crate::error::Result;

/// Projection of each centered row of `x` onto the leading principal axis.
///
/// Zero-variance data yields all-zero scores. The axis sign follows
/// [`sym_eigendecomposition`]'s convention.
pub fn pca_first_scores<T: Scalar>(x: &DenseMatrix<T>) -> Result<Vec<T>> {
    let (n, b) = x.shape();
    if n < 2 {
        return Err(crate::Error::contract("PCA needs at least two rows"));
    }
    let means = x.column_means();
    let mut centered = x.clone();
    for i in 0..n {
        for (v, &m) in centered.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let cov = centered.gram();
    let eig = sym_eigendecomposition(&cov)?;
    if eig.values.first().map_or(true, |&v| v == T::zero()) {
        return Ok(vec![T::zero(); n]);
    }
    let axis = eig.vectors.column(0);
    Ok((0..n)
        .map(|i| {
            centered
                .row(i)
                .iter()
                .zip(&axis)
                .take(b)
                .map(|(&a, &w)| a * w)
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_column_scores_are_centered_column() {
        let x = DenseMatrix::<f64>::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 3.0, 0.0],
            vec![0.0, 8.0, 0.0],
        ])
        .unwrap();
        let s = pca_first_scores(&x).unwrap();
        let want = [-3.0f64, -1.0, 4.0];
        let sign = s[2].signum();
        for (a, b) in s.iter().zip(want) {
            assert!((a * sign - b).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_line_projects_onto_sum() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let x = DenseMatrix::from_rows(&pts).unwrap();
        let s = pca_first_scores(&x).unwrap();
        let sign = s[5].signum();
        for (i, v) in s.iter().enumerate() {
            let want = (2.0 * i as f64 - 5.0) / 2f64.sqrt();
            assert!((v * sign - want).abs() < 1e-12);
        }
    }

    #[test]
    fn leading_axis_matches_power_iteration() {
        let mut rs = RandomStream::new(21, Law::StandardNormal);
        let mut x = DenseMatrix::from_vec(50, 4, rs.sample_z(200)).unwrap();
        for i in 0..50 {
            let r = x.row_mut(i);
            r[1] += 2.0 * r[0];
            r[3] *= 0.3;
        }
        // brute-force covariance, then power iteration for its top eigenvector
        let means: Vec<f64> = (0..4)
            .map(|j| (0..50).map(|i| x[(i, j)]).sum::<f64>() / 50.0)
            .collect();
        let mut cov = [[0.0; 4]; 4];
        for i in 0..50 {
            for a in 0..4 {
                for b in 0..4 {
                    cov[a][b] += (x[(i, a)] - means[a]) * (x[(i, b)] - means[b]) / 50.0;
                }
            }
        }
        let mut v = [1.0, 1.0, 1.0, 1.0];
        for _ in 0..2000 {
            let mut nv = [0.0; 4];
            for a in 0..4 {
                for b in 0..4 {
                    nv[a] += cov[a][b] * v[b];
                }
            }
            let norm = nv.iter().map(|t| t * t).sum::<f64>().sqrt();
            v = nv.map(|t| t / norm);
        }
        let scores = pca_first_scores(&x).unwrap();
        let brute: Vec<f64> = (0..50)
            .map(|i| (0..4).map(|j| (x[(i, j)] - means[j]) * v[j]).sum())
            .collect();
        let sign = (scores[0] * brute[0]).signum();
        for (a, b) in scores.iter().zip(&brute) {
            assert!((a - sign * b).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_data_scores_zero() {
        let x = DenseMatrix::from_rows(&vec![vec![1.0f64, 2.0]; 5]).unwrap();
        assert_eq!(pca_first_scores(&x).unwrap(), vec![0.0; 5]);
    }
}

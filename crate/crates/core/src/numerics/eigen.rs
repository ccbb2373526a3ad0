//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use super::{DenseMatrix, Scalar};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric PSD matrix, sorted by descending eigenvalue.
///
/// `vectors` holds one unit eigenvector per column, so that
/// `M = vectors · diag(values) · vectorsᵀ`.
#[derive(Clone, Debug)]
pub struct SymEigen<T> {
    pub vectors: DenseMatrix<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> SymEigen<T> {
    pub fn reconstruct(&self) -> DenseMatrix<T> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for i in 0..n {
            for (v, &lam) in scaled.row_mut(i).iter_mut().zip(&self.values) {
                *v *= lam;
            }
        }
        let mut out = DenseMatrix::zeros(n, n);
        super::matrix::matmul_t_into(
            scaled.as_slice(),
            self.vectors.as_slice(),
            out.as_mut_slice(),
            n,
            n,
            n,
        );
        out
    }
}

fn symmetry_tolerance<T: Scalar>(m: &DenseMatrix<T>) -> T {
    let scale = m
        .as_slice()
        .iter()
        .fold(T::one(), |acc, v| acc.max(v.abs()));
    T::lit(1e-10) * scale
}

/// Eigendecomposition of a symmetric positive semi-definite matrix.
///
/// Negative eigenvalues down to `-1e-10` (relative to the largest magnitude
/// when that exceeds one) are clamped to zero; anything more negative is an
/// error. Eigenvector signs are fixed so that each column's largest-magnitude
/// entry is positive.
pub fn sym_eigendecomposition<T: Scalar>(m: &DenseMatrix<T>) -> Result<SymEigen<T>> {
    if m.rows() != m.cols() {
        return Err(Error::contract(format!(
            "eigendecomposition needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    if let Some(idx) = m.first_non_finite() {
        return Err(Error::NonFinite {
            what: "matrix entry",
            index: idx,
        });
    }
    if !m.is_symmetric(symmetry_tolerance(m)) {
        return Err(Error::contract("eigendecomposition needs a symmetric matrix"));
    }
    let (vectors, values) = jacobi(m);

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));

    let n = values.len();
    let scale = values.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    let floor = -T::lit(1e-10) * scale;
    let mut sorted_values = Vec::with_capacity(n);
    let mut sorted = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut lam = values[src];
        if lam < T::zero() {
            if lam < floor {
                return Err(Error::NotPsd {
                    eigenvalue: lam.as_f64(),
                });
            }
            lam = T::zero();
        }
        sorted_values.push(lam);
        let mut pivot = T::zero();
        for i in 0..n {
            let v = vectors[(i, src)];
            if v.abs() > pivot.abs() {
                pivot = v;
            }
        }
        let sign = if pivot < T::zero() { -T::one() } else { T::one() };
        for i in 0..n {
            sorted[(i, dst)] = sign * vectors[(i, src)];
        }
    }
    Ok(SymEigen {
        vectors: sorted,
        values: sorted_values,
    })
}

/// Plain cyclic Jacobi. Returns (eigenvectors as columns, unsorted eigenvalues).
fn jacobi<T: Scalar>(m: &DenseMatrix<T>) -> (DenseMatrix<T>, Vec<T>) {
    let n = m.rows();
    let mut a = m.clone();
    let mut v = DenseMatrix::identity(n);
    let two = T::lit(2.0);

    let total: T = a.as_slice().iter().map(|&x| x * x).sum();
    let target = (T::epsilon() * T::epsilon()) * total;

    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= target || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (two * apq);
                let t = if theta.abs() > T::lit(1e150) {
                    T::one() / (two * theta)
                } else {
                    let sgn = if theta < T::zero() { -T::one() } else { T::one() };
                    sgn / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[(i, i)]).collect();
    (v, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Law, RandomStream};

    fn orthogonality_error(v: &DenseMatrix<f64>) -> f64 {
        let vtv = v.t_matmul(v).unwrap();
        vtv.max_abs_diff(&DenseMatrix::identity(v.cols()))
    }

    /// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
    fn random_orthogonal(n: usize, seed: u64) -> DenseMatrix<f64> {
        let mut rs = RandomStream::new(seed, Law::StandardNormal);
        let mut cols: Vec<Vec<f64>> = Vec::new();
        while cols.len() < n {
            let mut c = rs.sample_z(n);
            for prev in &cols {
                let d: f64 = c.iter().zip(prev).map(|(a, b)| a * b).sum();
                c.iter_mut().zip(prev).for_each(|(a, b)| *a -= d * b);
            }
            let norm = c.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                cols.push(c.into_iter().map(|a| a / norm).collect());
            }
        }
        let mut q = DenseMatrix::zeros(n, n);
        for (j, c) in cols.iter().enumerate() {
            for i in 0..n {
                q[(i, j)] = c[i];
            }
        }
        q
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let e = sym_eigendecomposition(&DenseMatrix::<f64>::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
        assert!(orthogonality_error(&e.vectors) < 1e-12);
    }

    #[test]
    fn diagonal_is_sorted_with_axis_vectors() {
        let m = DenseMatrix::from_diagonal(&[1.0, 4.0]);
        let e = sym_eigendecomposition(&m).unwrap();
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert_eq!(e.vectors.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn reconstructs_known_spectrum() {
        let q = random_orthogonal(5, 11);
        let lam = [5.0, 3.0, 2.0, 0.5, 0.0];
        let m = q
            .matmul(&DenseMatrix::from_diagonal(&lam))
            .unwrap()
            .matmul(&q.transpose())
            .unwrap();
        let e = sym_eigendecomposition(&m).unwrap();
        assert!(e.reconstruct().max_abs_diff(&m) <= 1e-8);
        assert!(orthogonality_error(&e.vectors) <= 1e-8);
        for (got, want) in e.values.iter().zip(lam) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn large_gram_matrix() {
        let mut rs = RandomStream::new(3, Law::StandardNormal);
        let n = 128;
        let x = DenseMatrix::from_vec(200, n, rs.sample_z(200 * n)).unwrap();
        let g = x.gram();
        let e = sym_eigendecomposition(&g).unwrap();
        assert!(e.reconstruct().max_abs_diff(&g) <= 1e-8);
        assert!(orthogonality_error(&e.vectors) <= 1e-8);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let rect = DenseMatrix::<f64>::zeros(2, 3);
        assert!(matches!(sym_eigendecomposition(&rect), Err(Error::Contract(_))));
        let asym = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigendecomposition(&asym), Err(Error::Contract(_))));
        let indefinite = DenseMatrix::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(
            sym_eigendecomposition(&indefinite),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn tiny_negative_drift_is_clamped() {
        let m = DenseMatrix::from_diagonal(&[1.0, -1e-13]);
        let e = sym_eigendecomposition(&m).unwrap();
        assert_eq!(e.values, vec![1.0, 0.0]);
    }

    #[test]
    fn works_in_single_precision() {
        let m = DenseMatrix::from_rows(&[vec![2.0f32, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eigendecomposition(&m).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-5);
        assert!((e.values[1] - 1.0).abs() < 1e-5);
        assert!(e.reconstruct().max_abs_diff(&m) < 1e-5);
    }
}

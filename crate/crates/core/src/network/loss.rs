//! Per-head losses. All are means over the batch.

use super::{Head, Targets};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Scalar};

pub const PROB_CLIP: f64 = 1e-12;

fn clip_prob<T: Scalar>(p: T) -> T {
    let eps = T::lit(PROB_CLIP);
    p.max(eps).min(T::one() - eps)
}

/// Negative log-likelihood of labels under predicted probabilities.
///
/// A single column is read as the probability of class 1 (binary
/// cross-entropy); several columns as a categorical distribution.
pub fn loss_classification<T: Scalar>(probs: &DenseMatrix<T>, labels: &[usize]) -> Result<T> {
    Ok(mean(&per_sample_classification(probs, labels)?))
}

pub(crate) fn per_sample_classification<T: Scalar>(
    probs: &DenseMatrix<T>,
    labels: &[usize],
) -> Result<Vec<T>> {
    check_rows(probs.rows(), labels.len())?;
    let k = probs.cols();
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let classes = if k == 1 { 2 } else { k };
            if y >= classes {
                return Err(Error::contract(format!(
                    "label {y} at row {i} outside 0..{classes}"
                )));
            }
            let p = if k == 1 {
                let p1 = clip_prob(probs[(i, 0)]);
                if y == 1 {
                    p1
                } else {
                    T::one() - p1
                }
            } else {
                clip_prob(probs[(i, y)])
            };
            Ok(-p.ln())
        })
        .collect()
}

/// Gaussian negative log-likelihood without the `½ log 2π` constant:
/// mean of `½ (log σ² + (y − μ)² / σ²)`.
pub fn loss_regression_nll<T: Scalar>(mu: &[T], sigma: &[T], y: &[T]) -> Result<T> {
    Ok(mean(&per_sample_gaussian(mu, sigma, y)?))
}

pub(crate) fn per_sample_gaussian<T: Scalar>(mu: &[T], sigma: &[T], y: &[T]) -> Result<Vec<T>> {
    check_rows(mu.len(), y.len())?;
    check_rows(sigma.len(), y.len())?;
    let half = T::lit(0.5);
    mu.iter()
        .zip(sigma)
        .zip(y)
        .enumerate()
        .map(|(i, ((&m, &s), &t))| {
            if !(s > T::zero()) {
                return Err(Error::contract(format!("sigma at row {i} is not positive")));
            }
            let var = s * s;
            Ok(half * (var.ln() + (t - m) * (t - m) / var))
        })
        .collect()
}

/// Mean squared error.
pub fn loss_squared<T: Scalar>(pred: &[T], y: &[T]) -> Result<T> {
    check_rows(pred.len(), y.len())?;
    Ok(mean(
        &pred
            .iter()
            .zip(y)
            .map(|(&p, &t)| (p - t) * (p - t))
            .collect::<Vec<_>>(),
    ))
}

/// Per-row losses of head outputs, as produced by [`super::forward`].
pub fn per_sample_loss<T: Scalar>(
    head: Head,
    outputs: &DenseMatrix<T>,
    targets: &Targets<T>,
) -> Result<Vec<T>> {
    match (head, targets) {
        (Head::GaussianRegression, Targets::Real(y)) => {
            per_sample_gaussian(&outputs.column(0), &outputs.column(1), y)
        }
        (Head::SquaredError, Targets::Real(y)) => {
            check_rows(outputs.rows(), y.len())?;
            Ok((0..y.len())
                .map(|i| (outputs[(i, 0)] - y[i]) * (outputs[(i, 0)] - y[i]))
                .collect())
        }
        (Head::Binary | Head::MultiClass { .. }, Targets::Labels(y)) => {
            per_sample_classification(outputs, y)
        }
        _ => Err(Error::contract("target kind does not match network head")),
    }
}

pub(crate) fn mean<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    v.iter().copied().sum::<T>() / T::from_usize(v.len()).unwrap()
}

fn check_rows(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::contract(format!(
            "prediction count {a} does not match target count {b}"
        )));
    }
    Ok(())
}

//! Fully-connected networks evaluated on an explicit flat weight vector.

mod layout;
mod loss;

pub use layout::{LayerSlot, Param, WeightLayout};
pub use loss::{
    loss_classification, loss_regression_nll, loss_squared, per_sample_loss, PROB_CLIP,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::matrix::{matmul_into, matmul_t_into, t_matmul_into};
use crate::numerics::{sigmoid, softplus, DenseMatrix, Scalar};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::LeakyRelu => {
                if z > T::zero() {
                    z
                } else {
                    T::lit(LEAKY_SLOPE) * z
                }
            }
        }
    }

    /// Derivative; zero input takes the left branch.
    #[inline]
    fn derivative<T: Scalar>(self, z: T) -> T {
        match (self, z > T::zero()) {
            (_, true) => T::one(),
            (Activation::Relu, false) => T::zero(),
            (Activation::LeakyRelu, false) => T::lit(LEAKY_SLOPE),
        }
    }
}

/// Output layer and its loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// Two outputs `(μ, σ)` with `σ = softplus(raw) + 1e-6`; Gaussian NLL.
    GaussianRegression,
    /// One sigmoid probability; binary cross-entropy.
    Binary,
    /// Softmax over `classes`; categorical cross-entropy.
    MultiClass { classes: usize },
    /// One linear output; mean squared error.
    SquaredError,
}

impl Head {
    pub fn output_dim(self) -> usize {
        match self {
            Head::GaussianRegression => 2,
            Head::Binary | Head::SquaredError => 1,
            Head::MultiClass { classes } => classes,
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, Head::Binary | Head::MultiClass { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
    pub use_bias: bool,
}

impl NetworkSpec {
    /// Three ReLU layers of 100 neurons with biases.
    pub fn mlp(input_dim: usize, head: Head) -> Self {
        Self {
            input_dim,
            hidden: vec![100, 100, 100],
            activation: Activation::Relu,
            head,
            use_bias: true,
        }
    }

    /// No hidden layers and no bias: a plain linear model.
    pub fn linear(input_dim: usize, head: Head) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            activation: Activation::Relu,
            head,
            use_bias: false,
        }
    }

    /// Widths from input to output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.head.output_dim());
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims().contains(&0) {
            return Err(Error::contract("all layer widths must be at least 1"));
        }
        if let Head::MultiClass { classes } = self.head {
            if classes < 2 {
                return Err(Error::contract("multiclass head needs at least 2 classes"));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> WeightLayout {
        WeightLayout::new(self)
    }
}

/// Regression values or class labels, one per input row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets<T> {
    Real(Vec<T>),
    Labels(Vec<usize>),
}

impl<T: Clone> Targets<T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Labels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Real(v) => Targets::Real(idx.iter().map(|&i| v[i].clone()).collect()),
            Targets::Labels(v) => Targets::Labels(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Result of a forward pass.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    /// Head activations: `(μ, σ)`, probabilities, or the linear output.
    pub outputs: DenseMatrix<T>,
    /// `hidden[0]` is the input; `hidden[l]` the post-activation of hidden layer `l`.
    pub hidden: Vec<DenseMatrix<T>>,
    /// Pre-activation of every layer, the last being the raw head output.
    pre: Vec<DenseMatrix<T>>,
}

impl<T> Forward<T> {
    /// Pre-activations of the hidden layers, in order.
    pub fn hidden_pre_activations(&self) -> &[DenseMatrix<T>] {
        &self.pre[..self.pre.len() - 1]
    }
}

fn check_finite<T: Scalar>(v: &[T], what: &'static str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

/// Evaluates the network with weights `w` on the rows of `x`.
pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    layout: &WeightLayout,
    w: &[T],
    x: &DenseMatrix<T>,
) -> Result<Forward<T>> {
    layout.check_len(w.len(), "weight vector")?;
    if x.cols() != spec.input_dim {
        return Err(Error::contract(format!(
            "input has {} columns, network expects {}",
            x.cols(),
            spec.input_dim
        )));
    }
    check_finite(w, "weight")?;
    check_finite(x.as_slice(), "input")?;

    let n = x.rows();
    let slots = layout.layers();
    let mut hidden = Vec::with_capacity(slots.len());
    let mut pre = Vec::with_capacity(slots.len());
    hidden.push(x.clone());
    for (l, slot) in slots.iter().enumerate() {
        let mut z = DenseMatrix::zeros(n, slot.fan_out);
        if let Some(br) = slot.bias_range() {
            let bias = &w[br];
            for i in 0..n {
                z.row_mut(i).copy_from_slice(bias);
            }
        }
        matmul_into(
            hidden[l].as_slice(),
            &w[slot.weight_range()],
            z.as_mut_slice(),
            n,
            slot.fan_in,
            slot.fan_out,
        );
        if l + 1 < slots.len() {
            hidden.push(z.map(|v| spec.activation.apply(v)));
        }
        pre.push(z);
    }
    let outputs = head_outputs(spec.head, pre.last().expect("at least one layer"));
    Ok(Forward {
        outputs,
        hidden,
        pre,
    })
}

fn head_outputs<T: Scalar>(head: Head, raw: &DenseMatrix<T>) -> DenseMatrix<T> {
    match head {
        Head::SquaredError => raw.clone(),
        Head::Binary => raw.map(sigmoid),
        Head::GaussianRegression => {
            let mut out = raw.clone();
            for i in 0..raw.rows() {
                out[(i, 1)] = softplus(raw[(i, 1)]) + T::lit(SIGMA_FLOOR);
            }
            out
        }
        Head::MultiClass { .. } => {
            let mut out = raw.clone();
            for i in 0..raw.rows() {
                let row = out.row_mut(i);
                let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut total = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v /= total);
            }
            out
        }
    }
}

/// Mean loss of the head outputs against `targets`.
pub fn loss<T: Scalar>(spec: &NetworkSpec, outputs: &DenseMatrix<T>, targets: &Targets<T>) -> Result<T> {
    Ok(loss::mean(&per_sample_loss(spec.head, outputs, targets)?))
}

/// Gradient of the mean loss with respect to the raw head outputs.
fn head_gradient<T: Scalar>(
    head: Head,
    fwd: &Forward<T>,
    targets: &Targets<T>,
) -> Result<DenseMatrix<T>> {
    let raw = fwd.pre.last().unwrap();
    let out = &fwd.outputs;
    let n = raw.rows();
    if targets.len() != n {
        return Err(Error::contract(format!(
            "{} targets for {n} inputs",
            targets.len()
        )));
    }
    let inv_n = if n == 0 {
        T::zero()
    } else {
        T::one() / T::from_usize(n).unwrap()
    };
    let mut g = DenseMatrix::zeros(n, raw.cols());
    match (head, targets) {
        (Head::SquaredError, Targets::Real(y)) => {
            for i in 0..n {
                g[(i, 0)] = T::lit(2.0) * (out[(i, 0)] - y[i]) * inv_n;
            }
        }
        (Head::GaussianRegression, Targets::Real(y)) => {
            for i in 0..n {
                let mu = out[(i, 0)];
                let s = out[(i, 1)];
                let r = y[i] - mu;
                let var = s * s;
                g[(i, 0)] = -r / var * inv_n;
                let d_sigma = (T::one() / s - r * r / (var * s)) * inv_n;
                g[(i, 1)] = d_sigma * sigmoid(raw[(i, 1)]);
            }
        }
        (Head::Binary, Targets::Labels(y)) => {
            for i in 0..n {
                if y[i] > 1 {
                    return Err(Error::contract(format!("binary label {} at row {i}", y[i])));
                }
                g[(i, 0)] = (out[(i, 0)] - T::from_usize(y[i]).unwrap()) * inv_n;
            }
        }
        (Head::MultiClass { classes }, Targets::Labels(y)) => {
            for i in 0..n {
                if y[i] >= classes {
                    return Err(Error::contract(format!("label {} at row {i}", y[i])));
                }
                for k in 0..classes {
                    let onehot = if k == y[i] { T::one() } else { T::zero() };
                    g[(i, k)] = (out[(i, k)] - onehot) * inv_n;
                }
            }
        }
        _ => return Err(Error::contract("target kind does not match network head")),
    }
    Ok(g)
}

/// Backpropagates `d_raw` (gradient w.r.t. the raw head output) to the weights.
fn backward<T: Scalar>(
    spec: &NetworkSpec,
    layout: &WeightLayout,
    w: &[T],
    fwd: &Forward<T>,
    d_raw: DenseMatrix<T>,
) -> Vec<T> {
    let mut grad = vec![T::zero(); layout.dim()];
    let slots = layout.layers();
    let n = d_raw.rows();
    let mut delta = d_raw;
    for l in (0..slots.len()).rev() {
        let slot = slots[l];
        t_matmul_into(
            fwd.hidden[l].as_slice(),
            delta.as_slice(),
            &mut grad[slot.weight_range()],
            n,
            slot.fan_in,
            slot.fan_out,
        );
        if let Some(br) = slot.bias_range() {
            let gb = &mut grad[br];
            for i in 0..n {
                for (acc, &d) in gb.iter_mut().zip(delta.row(i)) {
                    *acc += d;
                }
            }
        }
        if l > 0 {
            let mut prev = DenseMatrix::zeros(n, slot.fan_in);
            matmul_t_into(
                delta.as_slice(),
                &w[slot.weight_range()],
                prev.as_mut_slice(),
                n,
                slot.fan_out,
                slot.fan_in,
            );
            for (d, &z) in prev
                .as_mut_slice()
                .iter_mut()
                .zip(fwd.pre[l - 1].as_slice())
            {
                *d *= spec.activation.derivative(z);
            }
            delta = prev;
        }
    }
    grad
}

/// Mean loss and its exact gradient with respect to the flat weights.
pub fn loss_and_grad<T: Scalar>(
    spec: &NetworkSpec,
    layout: &WeightLayout,
    w: &[T],
    x: &DenseMatrix<T>,
    targets: &Targets<T>,
) -> Result<(T, Vec<T>)> {
    let fwd = forward(spec, layout, w, x)?;
    let value = loss(spec, &fwd.outputs, targets)?;
    let d_raw = head_gradient(spec.head, &fwd, targets)?;
    Ok((value, backward(spec, layout, w, &fwd, d_raw)))
}

pub fn grad_w<T: Scalar>(
    spec: &NetworkSpec,
    layout: &WeightLayout,
    w: &[T],
    x: &DenseMatrix<T>,
    targets: &Targets<T>,
) -> Result<Vec<T>> {
    loss_and_grad(spec, layout, w, x, targets).map(|(_, g)| g)
}

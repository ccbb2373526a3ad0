//! Closed-form solutions of the linear MaxWEnt problem and other exact
//! references the trainer is checked against.
//!
//! For a linear model with squared error, `E_z[(1/n)‖X(w̄ + noise)− y‖²]` is
//! `ε + tr(G Σ_w)` with `G = (1/n) XᵀX` and `Σ_w` the noise covariance, so the
//! problem `min E[risk] − λ Σ log φ_k²` separates per coordinate.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{sym_eigendecomposition, Law, RandomStream, SymEigen, SQRT_3};
use crate::stochastic::{entropy_proxy, Parameterization, WeightDistribution};
use crate::network::{self, NetworkSpec, Targets};
use crate::Matrix;

/// Eigenvalues at or below this are treated as zero by the SVD oracle.
pub const EPS_REG: f64 = 1e-10;

/// Gradient norm at which [`gd_solve_linear`] stops.
pub const GD_TOLERANCE: f64 = 1e-8;

/// A linear least-squares problem with its reference quantities.
#[derive(Clone, Debug)]
pub struct LinearInstance {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub w_bar: Vec<f64>,
    pub lambda: f64,
    /// `a_j² = (1/n) ‖X_j‖²`.
    pub amplitudes: Vec<f64>,
    /// Eigenpairs of `(1/n) XᵀX`, eigenvalues `s²` descending.
    pub eigen: SymEigen<f64>,
    /// `ε = (1/n) ‖X w̄ − y‖²`.
    pub residual: f64,
}

fn residual(x: &Matrix, y: &[f64], w: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, &t) in y.iter().enumerate() {
        let pred: f64 = x.row(i).iter().zip(w).map(|(a, b)| a * b).sum();
        total += (pred - t) * (pred - t);
    }
    total / y.len() as f64
}

impl LinearInstance {
    /// Uses the least-squares solution as `w̄`.
    pub fn least_squares(x: Matrix, y: Vec<f64>, lambda: f64) -> Result<Self> {
        check_shapes(&x, &y)?;
        let eigen = sym_eigendecomposition(&x.gram())?;
        let bad: Vec<usize> = (0..eigen.values.len())
            .filter(|&k| eigen.values[k] <= EPS_REG)
            .collect();
        if !bad.is_empty() {
            return Err(Error::DegenerateSpectrum(bad));
        }
        // w = V diag(1/s²) Vᵀ (Xᵀy / n)
        let n = x.rows() as f64;
        let b = x.cols();
        let xty: Vec<f64> = (0..b)
            .map(|j| (0..x.rows()).map(|i| x[(i, j)] * y[i]).sum::<f64>() / n)
            .collect();
        let v = &eigen.vectors;
        let mut w = vec![0.0; b];
        for k in 0..b {
            let proj: f64 = (0..b).map(|j| v[(j, k)] * xty[j]).sum::<f64>() / eigen.values[k];
            for (j, wj) in w.iter_mut().enumerate() {
                *wj += v[(j, k)] * proj;
            }
        }
        Self::with_weights(x, y, w, lambda)
    }

    pub fn with_weights(x: Matrix, y: Vec<f64>, w_bar: Vec<f64>, lambda: f64) -> Result<Self> {
        check_shapes(&x, &y)?;
        if w_bar.len() != x.cols() {
            return Err(Error::contract(format!(
                "{} weights for {} features",
                w_bar.len(),
                x.cols()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::contract(format!("lambda {lambda} must be finite and >= 0")));
        }
        let g = x.gram();
        let amplitudes = (0..x.cols()).map(|j| g[(j, j)]).collect();
        let eigen = sym_eigendecomposition(&g)?;
        Ok(Self {
            residual: residual(&x, &y, &w_bar),
            x,
            y,
            w_bar,
            lambda,
            amplitudes,
            eigen,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }
}

fn check_shapes(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() || x.rows() == 0 || x.cols() == 0 {
        return Err(Error::contract(format!(
            "design {}x{} with {} targets",
            x.rows(),
            x.cols(),
            y.len()
        )));
    }
    Ok(())
}

/// Column structure of generated instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureDesign {
    /// Exactly centered, uncorrelated-in-expectation columns with distinct
    /// known amplitudes spread over `[e⁻¹, e]`.
    Independent,
    /// The independent design rotated by a random orthogonal matrix.
    Correlated,
    /// Like `Independent`, but the last column copies the first plus `1e-4`
    /// jitter.
    DuplicatedColumn,
}

/// Random linear regression instance `y = Xβ + 0.1·noise`.
pub fn random_instance(
    n: usize,
    b: usize,
    lambda: f64,
    design: FeatureDesign,
    seed: u64,
) -> Result<LinearInstance> {
    if n < 2 || b == 0 {
        return Err(Error::contract("instance needs n >= 2 and b >= 1"));
    }
    let mut rs = RandomStream::new(seed, Law::StandardNormal);
    let mut x = Matrix::zeros(n, b);
    rs.fill_z(x.as_mut_slice());
    for j in 0..b {
        let col = x.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let scale = if b == 1 {
            1.0
        } else {
            (2.0 * j as f64 / (b - 1) as f64 - 1.0).exp()
        };
        for i in 0..n {
            x[(i, j)] = (x[(i, j)] - mean) / sd * scale;
        }
    }
    match design {
        FeatureDesign::Independent => {}
        FeatureDesign::Correlated => {
            // Rotate by a random orthogonal matrix: correlated columns with
            // the conditioning of the independent design.
            let mut a = Matrix::zeros(b, b);
            rs.fill_z(a.as_mut_slice());
            let rotation = sym_eigendecomposition(&a.gram())?.vectors.transpose();
            x = x.matmul(&rotation)?;
        }
        FeatureDesign::DuplicatedColumn => {
            if b < 2 {
                return Err(Error::contract("duplicated column needs b >= 2"));
            }
            for i in 0..n {
                x[(i, b - 1)] = x[(i, 0)] + 1e-4 * rs.normal();
            }
        }
    }
    let beta = rs.sample_z(b);
    let y = (0..n)
        .map(|i| x.row(i).iter().zip(&beta).map(|(a, c)| a * c).sum::<f64>() + 0.1 * rs.normal())
        .collect();
    LinearInstance::least_squares(x, y, lambda)
}

/// `φ*_k² = λ / a_k²`. Returns zeros when `λ = 0`.
pub fn closed_form_scaling(inst: &LinearInstance) -> Result<Vec<f64>> {
    let bad: Vec<usize> = (0..inst.dim())
        .filter(|&k| !(inst.amplitudes[k] > 0.0))
        .collect();
    if !bad.is_empty() {
        return Err(Error::ZeroAmplitude(bad));
    }
    Ok(inst.amplitudes.iter().map(|a| inst.lambda / a).collect())
}

/// `φ*_k² = λ / s_k²`, in the eigenvalue order of `inst.eigen`. Returns
/// zeros when `λ = 0`.
pub fn closed_form_svd(inst: &LinearInstance) -> Result<Vec<f64>> {
    let bad: Vec<usize> = (0..inst.dim())
        .filter(|&k| !(inst.eigen.values[k] > EPS_REG))
        .collect();
    if !bad.is_empty() {
        return Err(Error::DegenerateSpectrum(bad));
    }
    Ok(inst.eigen.values.iter().map(|s| inst.lambda / s).collect())
}

/// Exact `E_z[(1/n)‖X w − y‖²]` for noise with per-coordinate variances `φ²`
/// (in the eigenbasis for the SVD kind), as `ε + tr(G Σ_w)`.
pub fn exact_expected_risk(inst: &LinearInstance, phi2: &[f64], kind: Parameterization) -> Result<f64> {
    let b = inst.dim();
    if phi2.len() != b {
        return Err(Error::contract(format!("{} scales for {b} features", phi2.len())));
    }
    let mut trace = 0.0;
    match kind {
        Parameterization::Scaling => {
            let g = inst.x.gram();
            for k in 0..b {
                trace += g[(k, k)] * phi2[k];
            }
        }
        Parameterization::Svd => {
            // tr(G V diag(φ²) Vᵀ) = Σ_k φ_k² (1/n)‖X v_k‖²
            let v = &inst.eigen.vectors;
            let n = inst.x.rows() as f64;
            for (k, p) in phi2.iter().enumerate() {
                let energy: f64 = (0..inst.x.rows())
                    .map(|i| {
                        let proj: f64 = inst.x.row(i).iter().enumerate().map(|(j, x)| x * v[(j, k)]).sum();
                        proj * proj
                    })
                    .sum();
                trace += p * energy / n;
            }
        }
    }
    Ok(inst.residual + trace)
}

/// Monte Carlo estimate of the expected risk with its standard error.
pub fn monte_carlo_risk(
    inst: &LinearInstance,
    phi2: &[f64],
    kind: Parameterization,
    draws: usize,
    stream: &mut RandomStream,
) -> Result<(f64, f64)> {
    let b = inst.dim();
    if phi2.len() != b || draws < 2 {
        return Err(Error::contract("need one scale per feature and at least 2 draws"));
    }
    let phi: Vec<f64> = phi2.iter().map(|p| p.sqrt()).collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut w = vec![0.0; b];
    for _ in 0..draws {
        let noise: Vec<f64> = stream.sample_z(b).iter().zip(&phi).map(|(z, p)| z * p).collect();
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = inst.w_bar[i]
                + match kind {
                    Parameterization::Scaling => noise[i],
                    Parameterization::Svd => (0..b).map(|k| inst.eigen.vectors[(i, k)] * noise[k]).sum(),
                };
        }
        let r = residual(&inst.x, &inst.y, &w);
        sum += r;
        sum_sq += r * r;
    }
    let m = draws as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0) * m / (m - 1.0);
    Ok((mean, (var / m).sqrt()))
}

/// Curvatures `c_k` of the exact objective `Σ c_k φ_k² − λ Σ log φ_k² + ε`.
fn curvatures(inst: &LinearInstance, kind: Parameterization) -> Vec<f64> {
    let g = inst.x.gram();
    let b = inst.dim();
    match kind {
        Parameterization::Scaling => (0..b).map(|k| g[(k, k)]).collect(),
        Parameterization::Svd => {
            let v = &inst.eigen.vectors;
            (0..b)
                .map(|k| {
                    (0..b)
                        .map(|i| (0..b).map(|j| v[(i, k)] * g[(i, j)] * v[(j, k)]).sum::<f64>())
                        .sum()
                })
                .collect()
        }
    }
}

/// Exact linear objective at `φ²`.
pub fn linear_objective(inst: &LinearInstance, phi2: &[f64], kind: Parameterization) -> Result<f64> {
    let risk = exact_expected_risk(inst, phi2, kind)?;
    Ok(risk - inst.lambda * phi2.iter().map(|p| p.ln()).sum::<f64>())
}

/// Minimizes the exact objective by gradient descent over `t = log φ²`,
/// starting from `φ = 1`. Returns `φ²`.
pub fn gd_solve_linear(
    inst: &LinearInstance,
    kind: Parameterization,
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    if !(inst.lambda > 0.0) {
        return Err(Error::contract("descent needs lambda > 0; the optimum is at φ = 0"));
    }
    if !(lr > 0.0) {
        return Err(Error::contract(format!("learning rate {lr} must be > 0")));
    }
    let c = curvatures(inst, kind);
    let mut t = vec![0.0_f64; c.len()];
    let mut grad_norm = f64::INFINITY;
    for _ in 0..=steps {
        let grad: Vec<f64> = t.iter().zip(&c).map(|(t, c)| c * t.exp() - inst.lambda).collect();
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm <= GD_TOLERANCE {
            return Ok(t.iter().map(|t| t.exp()).collect());
        }
        if !grad_norm.is_finite() {
            break;
        }
        t.iter_mut().zip(&grad).for_each(|(t, g)| *t -= lr * g);
    }
    Err(Error::NoConvergence { grad_norm })
}

/// Risks and entropies of the two closed-form solutions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParameterizationComparison {
    pub risk_scaling: f64,
    pub risk_svd: f64,
    /// `(1/b) Σ log φ_k²` at the scaling optimum.
    pub h_scaling: f64,
    pub h_svd: f64,
}

pub fn prop4_check(inst: &LinearInstance) -> Result<ParameterizationComparison> {
    let scaling = closed_form_scaling(inst)?;
    let svd = closed_form_svd(inst)?;
    let b = inst.dim() as f64;
    let h = |p: &[f64]| p.iter().map(|v| v.ln()).sum::<f64>() / b;
    Ok(ParameterizationComparison {
        risk_scaling: exact_expected_risk(inst, &scaling, Parameterization::Scaling)?,
        risk_svd: exact_expected_risk(inst, &svd, Parameterization::Svd)?,
        h_scaling: h(&scaling),
        h_svd: h(&svd),
    })
}

/// Per-coordinate entropy of the latent law.
pub fn law_entropy(law: Law) -> f64 {
    match law {
        Law::UniformSym => (2.0 * SQRT_3).ln(),
        Law::StandardNormal => 0.5 * (2.0 * PI * std::f64::consts::E).ln(),
    }
}

fn det_small(m: &Matrix) -> f64 {
    match m.rows() {
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => {
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
                - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
        }
    }
}

/// Differential entropy of an unclipped weight distribution with `d ≤ 3`,
/// from the determinant of the affine map `z ↦ w`.
///
/// The map is recovered column by column from `realize(e_c) − w̄`.
pub fn exact_entropy_smalld(dist: &WeightDistribution) -> Result<f64> {
    let d = dist.dim();
    if d == 0 || d > 3 {
        return Err(Error::contract(format!("exact entropy needs 1 <= d <= 3, got {d}")));
    }
    if dist.clip().is_finite() {
        return Err(Error::contract("exact entropy needs an unclipped distribution"));
    }
    let mut m = Matrix::zeros(d, d);
    for c in 0..d {
        let mut e = vec![0.0; d];
        e[c] = 1.0;
        let w = dist.realize(&e)?;
        for r in 0..d {
            m[(r, c)] = w[r] - dist.mean()[r];
        }
    }
    Ok(d as f64 * law_entropy(dist.law()) + det_small(&m).abs().ln())
}

/// The affine image `d·K + (d/2)·H_proxy` that [`exact_entropy_smalld`]
/// should equal.
pub fn entropy_from_proxy(dist: &WeightDistribution) -> f64 {
    let d = dist.dim() as f64;
    d * law_entropy(dist.law()) + 0.5 * d * entropy_proxy(dist)
}

/// Gradient magnitude below which [`gradient_check`] compares absolutely.
///
/// Central differences with `h = 1e-5` carry round-off near `ε·|L|/h ≈ 1e-11`
/// for losses of order one, so relative errors of smaller gradients measure
/// the difference quotient rather than the backward pass.
pub const GRADIENT_FLOOR: f64 = 1e-5;

/// Backpropagation compared with central finite differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    /// Largest `|g − g_fd| / max(|g|, |g_fd|, floor)` over checked coordinates.
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose ±h perturbation moved a pre-activation across a
    /// ReLU kink, where the finite difference is not a derivative estimate.
    pub skipped: usize,
}

fn activation_pattern(pre: &[Matrix]) -> Vec<bool> {
    pre.iter()
        .flat_map(|m| m.as_slice().iter().map(|&v| v > 0.0))
        .collect()
}

/// Checks every coordinate of the loss gradient against central differences
/// with step `h`. Gradients smaller than `floor` in magnitude are compared
/// absolutely against `floor`.
pub fn gradient_check(
    spec: &NetworkSpec,
    w: &[f64],
    x: &Matrix,
    targets: &Targets<f64>,
    h: f64,
    floor: f64,
) -> Result<GradientCheck> {
    let layout = spec.layout();
    let (_, grad) = network::loss_and_grad(spec, &layout, w, x, targets)?;
    let base = activation_pattern(&network::forward(spec, &layout, w, x)?.hidden_pre_activations());
    let mut out = GradientCheck {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = w.to_vec();
    for i in 0..w.len() {
        let mut eval = |delta: f64| -> Result<(f64, bool)> {
            probe[i] = w[i] + delta;
            let fwd = network::forward(spec, &layout, &probe, x)?;
            let value = network::loss(spec, &fwd.outputs, targets)?;
            probe[i] = w[i];
            Ok((value, activation_pattern(fwd.hidden_pre_activations()) == base))
        };
        let (plus, same_plus) = eval(h)?;
        let (minus, same_minus) = eval(-h)?;
        if !(same_plus && same_minus) {
            out.skipped += 1;
            continue;
        }
        let fd = (plus - minus) / (2.0 * h);
        let denom = grad[i].abs().max(fd.abs()).max(floor);
        out.max_relative_error = out.max_relative_error.max((grad[i] - fd).abs() / denom);
        out.checked += 1;
    }
    Ok(out)
}

/// A random small network, weight vector and batch for gradient checks.
/// The head and activation cycle with `seed`.
pub fn random_gradient_case(seed: u64) -> Result<(NetworkSpec, Vec<f64>, Matrix, Targets<f64>)> {
    use crate::network::{Activation, Head};
    let mut rs = RandomStream::new(seed, Law::StandardNormal);
    let heads = [
        Head::GaussianRegression,
        Head::Binary,
        Head::MultiClass { classes: 3 },
        Head::SquaredError,
    ];
    let head = heads[(seed % 4) as usize];
    let activation = if (seed / 4) % 2 == 0 {
        Activation::Relu
    } else {
        Activation::LeakyRelu
    };
    let input_dim = 1 + rs.index(3);
    let hidden = (0..1 + rs.index(3)).map(|_| 2 + rs.index(5)).collect();
    let spec = NetworkSpec {
        input_dim,
        hidden,
        activation,
        head,
        use_bias: seed % 3 != 0,
    };
    let w: Vec<f64> = rs.sample_z(spec.layout().dim()).iter().map(|v| 0.7 * v).collect();
    let n = 1 + rs.index(8);
    let mut x = Matrix::zeros(n, input_dim);
    rs.fill_z(x.as_mut_slice());
    let targets = match head {
        Head::Binary => Targets::Labels((0..n).map(|_| rs.index(2)).collect()),
        Head::MultiClass { classes } => Targets::Labels((0..n).map(|_| rs.index(classes)).collect()),
        _ => Targets::Real(rs.sample_z(n)),
    };
    Ok((spec, w, x, targets))
}

/// Result of one verification check./// Result of one verification check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    /// Measured error, or the measured quantity for lower-bound checks.
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }

    fn at_least(name: &str, measured: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            measured,
            tolerance: bound,
            passed: measured >= bound,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VerifyOptions {
    /// Relative error injected into λ on the closed-form side of the
    /// descent cross-checks. Zero in normal runs.
    pub lambda_mismatch: f64,
}

const SUITE_INSTANCES: u64 = 20;
const SUITE_STEPS: usize = 200_000;

fn descent_check(kind: Parameterization, opts: VerifyOptions) -> Result<f64> {
    let design = match kind {
        Parameterization::Scaling => FeatureDesign::Independent,
        Parameterization::Svd => FeatureDesign::Correlated,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..SUITE_INSTANCES {
        let lambda = if seed % 2 == 0 { 1.0 } else { 10.0 };
        let inst = random_instance(200, 8, lambda, design, seed)?;
        let descent = gd_solve_linear(&inst, kind, SUITE_STEPS, 0.5 / lambda)?;
        let shifted = inst.with_lambda(lambda * (1.0 + opts.lambda_mismatch));
        let closed = match kind {
            Parameterization::Scaling => closed_form_scaling(&shifted)?,
            Parameterization::Svd => closed_form_svd(&shifted)?,
        };
        for (a, b) in closed.iter().zip(&descent) {
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    Ok(worst)
}

fn small_distributions() -> Result<Vec<WeightDistribution>> {
    use crate::network::{Head, NetworkSpec};
    let mut out = Vec::new();
    let mut rs = RandomStream::new(11, Law::StandardNormal);
    for law in [Law::UniformSym, Law::StandardNormal] {
        for (input_dim, use_bias) in [(1, false), (1, true), (2, true), (3, false)] {
            let spec = NetworkSpec {
                use_bias,
                ..NetworkSpec::linear(input_dim, Head::SquaredError)
            };
            let layout = spec.layout();
            let mean = rs.sample_z(layout.dim());
            let raw: Vec<f64> = rs.sample_z(layout.dim()).iter().map(|v| 2.0 * v).collect();
            let mut scaling = WeightDistribution::scaling(layout.clone(), mean.clone(), 0.0, law)?;
            scaling.set_raw(raw.clone())?;
            let mut x = Matrix::zeros(30, input_dim);
            rs.fill_z(x.as_mut_slice());
            let basis = sym_eigendecomposition(&x.gram())?.vectors;
            let mut svd = WeightDistribution::svd(layout, mean, vec![basis], 0.0, law)?;
            svd.set_raw(raw)?;
            out.push(scaling);
            out.push(svd);
        }
    }
    Ok(out)
}

/// Runs every oracle cross-check.
pub fn verify_suite(opts: VerifyOptions) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![
        CheckOutcome::at_most(
            "scaling closed form vs gradient descent (max relative error)",
            descent_check(Parameterization::Scaling, opts)?,
            1e-4,
        ),
        CheckOutcome::at_most(
            "svd closed form vs gradient descent (max relative error)",
            descent_check(Parameterization::Svd, opts)?,
            1e-4,
        ),
    ];

    let mut risk_err: f64 = 0.0;
    let mut entropy_gap = f64::INFINITY;
    for seed in 0..SUITE_INSTANCES {
        let design = if seed % 2 == 0 {
            FeatureDesign::Correlated
        } else {
            FeatureDesign::Independent
        };
        let inst = random_instance(200, 8, 1.0 + seed as f64, design, 100 + seed)?;
        let cmp = prop4_check(&inst)?;
        let target = inst.lambda * inst.dim() as f64 + inst.residual;
        risk_err = risk_err
            .max((cmp.risk_scaling - target).abs())
            .max((cmp.risk_svd - target).abs());
        entropy_gap = entropy_gap.min(cmp.h_svd - cmp.h_scaling);
    }
    out.push(CheckOutcome::at_most(
        "risk of both optima equals lambda*b + eps (max abs error)",
        risk_err,
        1e-10,
    ));
    out.push(CheckOutcome::at_least(
        "svd entropy >= scaling entropy (min gap)",
        entropy_gap,
        -1e-9,
    ));
    let dup = random_instance(200, 4, 1.0, FeatureDesign::DuplicatedColumn, 7)?;
    let cmp = prop4_check(&dup)?;
    out.push(CheckOutcome::at_least(
        "duplicated column: svd entropy gain",
        cmp.h_svd - cmp.h_scaling,
        1.0,
    ));

    let mut entropy_err: f64 = 0.0;
    for dist in small_distributions()? {
        entropy_err = entropy_err.max((exact_entropy_smalld(&dist)? - entropy_from_proxy(&dist)).abs());
    }
    out.push(CheckOutcome::at_most(
        "exact entropy vs proxy image, d <= 3 (max abs error)",
        entropy_err,
        1e-12,
    ));

    let mut grad_err: f64 = 0.0;
    for seed in 0..100 {
        let (spec, w, x, t) = random_gradient_case(seed)?;
        grad_err = grad_err.max(gradient_check(&spec, &w, &x, &t, 1e-5, GRADIENT_FLOOR)?.max_relative_error);
    }
    out.push(CheckOutcome::at_most(
        "backprop vs central differences (max relative error)",
        grad_err,
        1e-5,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag_instance(a2: &[f64], lambda: f64) -> LinearInstance {
        // Rows ±√(b a_k²/2)·e_k give (1/n)XᵀX = diag(a²) with n = 2b.
        let b = a2.len();
        let mut x = Matrix::zeros(2 * b, b);
        for (k, &a) in a2.iter().enumerate() {
            let v = (b as f64 * a).sqrt();
            x[(2 * k, k)] = v;
            x[(2 * k + 1, k)] = -v;
        }
        let y = (0..2 * b).map(|i| i as f64 * 0.1).collect();
        LinearInstance::least_squares(x, y, lambda).unwrap()
    }

    #[test]
    fn scaling_closed_form_example() {
        let inst = diag_instance(&[1.0, 4.0], 1.0);
        let phi2 = closed_form_scaling(&inst).unwrap();
        assert!((phi2[0] - 1.0).abs() < 1e-14 && (phi2[1] - 0.25).abs() < 1e-14);
        let gd = gd_solve_linear(&inst, Parameterization::Scaling, 10_000, 0.5).unwrap();
        assert!((gd[0] - 1.0).abs() < 1e-8 && (gd[1] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn lambda_zero_gives_zero_scales() {
        let inst = diag_instance(&[1.0, 4.0], 0.0);
        assert_eq!(closed_form_scaling(&inst).unwrap(), vec![0.0, 0.0]);
        assert_eq!(closed_form_svd(&inst).unwrap(), vec![0.0, 0.0]);
        assert!(gd_solve_linear(&inst, Parameterization::Scaling, 10, 0.1).is_err());
    }

    #[test]
    fn scaling_is_homogeneous_in_feature_scale() {
        let inst = random_instance(50, 3, 2.0, FeatureDesign::Independent, 1).unwrap();
        let mut x2 = inst.x.clone();
        x2.as_mut_slice().iter_mut().for_each(|v| *v *= 3.0);
        let scaled = LinearInstance::least_squares(x2, inst.y.clone(), 2.0).unwrap();
        for (a, b) in closed_form_scaling(&inst).unwrap().iter().zip(closed_form_scaling(&scaled).unwrap()) {
            assert!((a / 9.0 - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn zero_amplitude_and_degenerate_spectrum_are_errors() {
        let mut x = Matrix::zeros(4, 2);
        for i in 0..4 {
            x[(i, 0)] = i as f64 - 1.5;
        }
        let inst = LinearInstance::with_weights(x, vec![0.0; 4], vec![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(closed_form_scaling(&inst), Err(Error::ZeroAmplitude(v)) if v == vec![1]));
        assert!(matches!(closed_form_svd(&inst), Err(Error::DegenerateSpectrum(v)) if v == vec![1]));
    }

    #[test]
    fn orthonormal_columns_give_isotropic_solution() {
        let n = 4.0_f64;
        let x = Matrix::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![-1.0, -1.0],
        ])
        .unwrap();
        // Columns have (1/n)‖X_j‖² = 1 and are orthogonal.
        assert_eq!(x.gram()[(0, 0)], 4.0 / n);
        let inst = LinearInstance::least_squares(x, vec![1.0, 2.0, 3.0, 4.0], 2.0).unwrap();
        for v in closed_form_svd(&inst).unwrap() {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_covariance_makes_kinds_coincide() {
        let inst = diag_instance(&[0.5, 2.0, 3.0], 1.5);
        let mut a = closed_form_scaling(&inst).unwrap();
        let mut b = closed_form_svd(&inst).unwrap();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
        let cmp = prop4_check(&inst).unwrap();
        assert!((cmp.h_svd - cmp.h_scaling).abs() < 1e-12);
    }

    #[test]
    fn risk_examples() {
        let inst = diag_instance(&[1.0, 1.0], 1.0);
        let eps = inst.residual;
        assert_eq!(exact_expected_risk(&inst, &[0.0, 0.0], Parameterization::Scaling).unwrap(), eps);
        let r = exact_expected_risk(&inst, &[1.0, 1.0], Parameterization::Scaling).unwrap();
        assert!((r - eps - 2.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_risk_agrees_with_exact_risk() {
        let inst = random_instance(40, 4, 1.0, FeatureDesign::Correlated, 5).unwrap();
        for kind in [Parameterization::Scaling, Parameterization::Svd] {
            let phi2 = vec![0.3, 0.1, 0.7, 0.2];
            let exact = exact_expected_risk(&inst, &phi2, kind).unwrap();
            let mut rs = RandomStream::new(9, Law::StandardNormal);
            let (mc, se) = monte_carlo_risk(&inst, &phi2, kind, 100_000, &mut rs).unwrap();
            assert!((mc - exact).abs() <= 3.0 * se, "{kind:?}: {mc} vs {exact} (se {se})");
        }
    }

    #[test]
    fn monte_carlo_error_shrinks_like_inverse_sqrt() {
        let inst = random_instance(40, 3, 1.0, FeatureDesign::Independent, 6).unwrap();
        let phi2 = [0.5, 0.5, 0.5];
        let exact = exact_expected_risk(&inst, &phi2, Parameterization::Scaling).unwrap();
        let mut rs = RandomStream::new(1, Law::UniformSym);
        let mut last_se = None;
        for m in [1_000, 10_000, 100_000] {
            let (mc, se) = monte_carlo_risk(&inst, &phi2, Parameterization::Scaling, m, &mut rs).unwrap();
            assert!((mc - exact).abs() <= 4.0 * se);
            if let Some(prev) = last_se {
                let ratio: f64 = prev / se;
                assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
            }
            last_se = Some(se);
        }
    }

    #[test]
    fn descent_matches_both_closed_forms() {
        for seed in 0..20 {
            for (kind, design) in [
                (Parameterization::Scaling, FeatureDesign::Independent),
                (Parameterization::Svd, FeatureDesign::Correlated),
            ] {
                let inst = random_instance(200, 8, 3.0, design, seed).unwrap();
                let gd = gd_solve_linear(&inst, kind, 200_000, 0.5 / 3.0).unwrap();
                let cf = match kind {
                    Parameterization::Scaling => closed_form_scaling(&inst).unwrap(),
                    Parameterization::Svd => closed_form_svd(&inst).unwrap(),
                };
                for (a, b) in cf.iter().zip(&gd) {
                    assert!((a - b).abs() <= 1e-4 * a, "{kind:?} seed {seed}: {a} vs {b}");
                }
                let obj = linear_objective(&inst, &gd, kind).unwrap();
                for f in [1.01, 0.99] {
                    let nudged: Vec<f64> = gd.iter().map(|v| v * f).collect();
                    assert!(obj <= linear_objective(&inst, &nudged, kind).unwrap());
                }
            }
        }
    }

    #[test]
    fn correlated_instance_matches_descent_within_two_percent() {
        let inst = random_instance(100, 5, 1.0, FeatureDesign::Correlated, 42).unwrap();
        let gd = gd_solve_linear(&inst, Parameterization::Svd, 100_000, 0.5).unwrap();
        for (a, b) in closed_form_svd(&inst).unwrap().iter().zip(&gd) {
            assert!((a - b).abs() <= 0.02 * a);
        }
    }

    #[test]
    fn duplicated_column_gains_svd_entropy() {
        let inst = random_instance(200, 4, 1.0, FeatureDesign::DuplicatedColumn, 7).unwrap();
        let cmp = prop4_check(&inst).unwrap();
        // Independent spectrum computation: the gap is (1/b)(Σ log a² − log det G).
        let g = inst.x.gram();
        let det_log: f64 = sym_eigendecomposition(&g).unwrap().values.iter().map(|v| v.ln()).sum();
        let want = (inst.amplitudes.iter().map(|a| a.ln()).sum::<f64>() - det_log) / 4.0;
        assert!((cmp.h_svd - cmp.h_scaling - want).abs() < 1e-9);
        assert!(cmp.h_svd - cmp.h_scaling > 1.0);
    }

    #[test]
    fn entropy_examples() {
        use crate::network::{Head, NetworkSpec};
        let spec = NetworkSpec::linear(1, Head::SquaredError);
        let one = crate::numerics::softplus_inverse(1.0);
        let u = WeightDistribution::scaling(spec.layout(), vec![0.3], one, Law::UniformSym).unwrap();
        assert!((exact_entropy_smalld(&u).unwrap() - 1.242_453_324_894).abs() < 1e-9);
        let g = u.clone().with_law(Law::StandardNormal);
        assert!((exact_entropy_smalld(&g).unwrap() - 1.418_938_533_204_672_7).abs() < 1e-12);

        let spec2 = NetworkSpec::linear(2, Head::SquaredError);
        let mut d2 = WeightDistribution::scaling(spec2.layout(), vec![0.0; 2], one, Law::UniformSym).unwrap();
        d2.set_raw(vec![one, crate::numerics::softplus_inverse(2.0)]).unwrap();
        let want = 2.0 * (2.0 * SQRT_3).ln() + 2f64.ln();
        assert!((exact_entropy_smalld(&d2).unwrap() - want).abs() < 1e-12);
        assert!((entropy_from_proxy(&d2) - want).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_large_or_clipped_distributions() {
        use crate::network::{Head, NetworkSpec};
        let spec = NetworkSpec::linear(4, Head::SquaredError);
        let d = WeightDistribution::scaling(spec.layout(), vec![0.0; 4], 0.0, Law::UniformSym).unwrap();
        assert!(exact_entropy_smalld(&d).is_err());
        let spec = NetworkSpec::linear(2, Head::SquaredError);
        let d = WeightDistribution::scaling(spec.layout(), vec![0.0; 2], 0.0, Law::UniformSym)
            .unwrap()
            .with_clip(1.0)
            .unwrap();
        assert!(exact_entropy_smalld(&d).is_err());
    }

    #[test]
    fn suite_passes_and_detects_lambda_mismatch() {
        let clean = verify_suite(VerifyOptions::default()).unwrap();
        assert!(clean.iter().all(|c| c.passed), "{clean:#?}");
        let broken = verify_suite(VerifyOptions { lambda_mismatch: 0.05 }).unwrap();
        assert!(!broken[0].passed);
        assert!((broken[0].measured - 0.05).abs() < 1e-3);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        let mut skipped = 0;
        for seed in 0..100 {
            let (spec, w, x, t) = random_gradient_case(seed).unwrap();
            let g = gradient_check(&spec, &w, &x, &t, 1e-5, GRADIENT_FLOOR).unwrap();
            worst = worst.max(g.max_relative_error);
            checked += g.checked;
            skipped += g.skipped;
        }
        assert!(worst <= 1e-5, "{worst}");
        assert!(skipped * 100 < checked);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn optima_share_risk_and_obey_hadamard(seed in 0u64..10_000, lambda in 0.1f64..20.0) {
            let inst = random_instance(60, 5, lambda, FeatureDesign::Correlated, seed).unwrap();
            let cmp = prop4_check(&inst).unwrap();
            let target = lambda * 5.0 + inst.residual;
            prop_assert!((cmp.risk_scaling - target).abs() < 1e-10);
            prop_assert!((cmp.risk_svd - target).abs() < 1e-10);
            let log_a: f64 = inst.amplitudes.iter().map(|a| a.ln()).sum();
            let log_s: f64 = inst.eigen.values.iter().map(|s| s.ln()).sum();
            prop_assert!(log_s <= log_a + 1e-9);
            prop_assert!(cmp.h_svd >= cmp.h_scaling - 1e-9);
        }
    }
}

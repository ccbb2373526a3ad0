//! Pretraining of the mean weights, SVD basis construction and the MaxWEnt
//! loop that trains the scale parameters `u` with Adam.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{self, per_sample_loss, NetworkSpec, Targets};
use crate::numerics::{sigmoid, softplus, sym_eigendecomposition, Law, RandomStream, SymEigen};
use crate::stochastic::{
    entropy_proxy_with, entropy_terms, EntropyFunction, Parameterization,
    WeightDistribution,
};
use crate::Matrix;

/// How mini-batches are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchSampling {
    /// Consecutive slices of a reshuffled permutation; leftovers are dropped.
    #[default]
    ShuffledEpochs,
    /// Independent uniform draws with replacement.
    WithReplacement,
}

/// Which scale parameters `maxwent_fit` returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Acceptance {
    /// The last monitored `u` whose validation NLL was at most `τ`.
    #[default]
    Threshold,
    /// The `u` reached at the final iteration, ignoring `τ`.
    Final,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Entropy trade-off, applied to the `(1/d)`-normalized entropy.
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_iters: usize,
    pub maxwent_iters: usize,
    /// Latent draws per gradient step.
    pub mc_samples: usize,
    pub seed: u64,
    pub val_check_every: usize,
    /// Fixed latent draws used to estimate the validation NLL.
    pub val_z_samples: usize,
    /// Initial raw scale; `None` picks −5 for scaling and −10 for SVD.
    pub u_init: Option<f64>,
    pub law: Law,
    pub sampling: BatchSampling,
    pub acceptance: Acceptance,
    pub entropy: EntropyFunction,
    pub adam: AdamParams,
    /// Prior standard deviation of the BNN baseline.
    pub bnn_prior_std: f64,
}

impl TrainConfig {
    /// Settings for the small synthetic problems.
    pub fn synthetic() -> Self {
        Self {
            lambda: 10.0,
            learning_rate: 1e-3,
            batch_size: 32,
            pretrain_iters: 10_000,
            maxwent_iters: 20_000,
            mc_samples: 1,
            seed: 0,
            val_check_every: 100,
            val_z_samples: 10,
            u_init: None,
            law: Law::UniformSym,
            sampling: BatchSampling::ShuffledEpochs,
            acceptance: Acceptance::Threshold,
            entropy: EntropyFunction::Log,
            adam: AdamParams::default(),
            bnn_prior_std: 1.0,
        }
    }

    /// Settings for tabular data.
    pub fn tabular() -> Self {
        Self {
            batch_size: 128,
            maxwent_iters: 50_000,
            ..Self::synthetic()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn u_init_for(&self, kind: Parameterization) -> f64 {
        self.u_init.unwrap_or(match kind {
            Parameterization::Scaling => -5.0,
            Parameterization::Svd => -10.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("mc_samples", self.mc_samples),
            ("val_check_every", self.val_check_every),
            ("val_z_samples", self.val_z_samples),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be at least 1")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::contract(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(self.bnn_prior_std > 0.0) {
            return Err(Error::contract("prior standard deviation must be positive"));
        }
        if let Some(u) = self.u_init {
            if !u.is_finite() {
                return Err(Error::contract("u_init must be finite"));
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64, params: AdamParams) -> Self {
        Self {
            lr,
            params,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        let AdamParams { beta1, beta2, eps } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((xi, &g), m), v) in x.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *xi -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

struct BatchSampler {
    n: usize,
    order: Vec<usize>,
    pos: usize,
    stream: RandomStream,
    mode: BatchSampling,
}

impl BatchSampler {
    fn new(n: usize, mode: BatchSampling, stream: RandomStream) -> Self {
        Self {
            n,
            order: (0..n).collect(),
            pos: n,
            stream,
            mode,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        if size >= self.n {
            return (0..self.n).collect();
        }
        match self.mode {
            BatchSampling::WithReplacement => (0..size).map(|_| self.stream.index(self.n)).collect(),
            BatchSampling::ShuffledEpochs => {
                if self.pos + size > self.n {
                    self.stream.shuffle(&mut self.order);
                    self.pos = 0;
                }
                let batch = self.order[self.pos..self.pos + size].to_vec();
                self.pos += size;
                batch
            }
        }
    }
}

/// One monitored point of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    /// Mean mini-batch loss since the previous row.
    pub train_loss: f64,
    pub val_nll: f64,
    /// Not tracked during deterministic pretraining.
    pub entropy_proxy: Option<f64>,
    /// MaxWEnt: the scales were accepted. Pretraining: new best validation loss.
    pub accepted: bool,
}

/// Writes log rows as CSV with columns
/// `iteration,train_loss,val_nll,entropy_proxy,accepted`.
pub fn write_log_csv(path: &std::path::Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "train_loss", "val_nll", "entropy_proxy", "accepted"])?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.train_loss.to_string(),
            r.val_nll.to_string(),
            r.entropy_proxy.map(|v| v.to_string()).unwrap_or_default(),
            u8::from(r.accepted).to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::io::write_atomic(path, &bytes)
}

/// Glorot-uniform weights and zero biases.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Vec<f64> {
    let layout = spec.layout();
    let mut w = vec![0.0; layout.dim()];
    let mut rs = RandomStream::new(seed, Law::UniformSym);
    for slot in layout.layers() {
        let limit = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
        for v in &mut w[slot.weight_range()] {
            *v = limit * (2.0 * rs.uniform() - 1.0);
        }
    }
    w
}

fn mean_loss(spec: &NetworkSpec, w: &[f64], ds: &Dataset) -> Result<f64> {
    let fwd = network::forward(spec, &spec.layout(), w, &ds.x)?;
    network::loss(spec, &fwd.outputs, &ds.y)
}

fn check_data(spec: &NetworkSpec, ds: &Dataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::contract(format!("{what} set is empty")));
    }
    if ds.x.cols() != spec.input_dim {
        return Err(Error::contract(format!(
            "{what} set has {} features, network expects {}",
            ds.x.cols(),
            spec.input_dim
        )));
    }
    let target_ok = match ds.y {
        Targets::Real(_) => !spec.head.is_classification(),
        Targets::Labels(_) => spec.head.is_classification(),
    };
    if !target_ok {
        return Err(Error::contract(format!(
            "{what} targets do not match the network head"
        )));
    }
    Ok(())
}

fn diverged(iteration: usize, detail: impl Into<String>) -> Error {
    Error::Divergence {
        iteration,
        detail: detail.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainResult {
    /// Weights at the best monitored validation loss.
    pub weights: Vec<f64>,
    pub best_val_loss: f64,
    pub best_iteration: usize,
    pub log: Vec<TrainLogRow>,
}

/// Fits a deterministic network with Adam, restoring the weights of the
/// best validation loss among monitored iterations (iteration 0 included).
pub fn pretrain(
    spec: &NetworkSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<PretrainResult> {
    cfg.validate()?;
    spec.validate()?;
    check_data(spec, train, "training")?;
    check_data(spec, val, "validation")?;
    let layout = spec.layout();
    let mut w = init_weights(spec, cfg.seed);
    let root = RandomStream::new(cfg.seed, cfg.law);
    let mut sampler = BatchSampler::new(train.len(), cfg.sampling, root.derive(1));
    let mut adam = Adam::new(w.len(), cfg.learning_rate, cfg.adam);

    let initial = mean_loss(spec, &w, val)?;
    let mut best = (initial, 0, w.clone());
    let mut log = vec![TrainLogRow {
        iteration: 0,
        train_loss: mean_loss(spec, &w, train)?,
        val_nll: initial,
        entropy_proxy: None,
        accepted: true,
    }];
    let (mut acc, mut count) = (0.0, 0usize);
    for it in 1..=cfg.pretrain_iters {
        let idx = sampler.next(cfg.batch_size);
        let (value, grad) =
            network::loss_and_grad(spec, &layout, &w, &train.x.select_rows(&idx), &train.y.select(&idx))
                .map_err(|e| match e {
                    Error::NonFinite { what, index } => {
                        diverged(it, format!("non-finite {what} at index {index}"))
                    }
                    other => other,
                })?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(it, "non-finite training loss"));
        }
        adam.step(&mut w, &grad);
        acc += value;
        count += 1;
        if it % cfg.val_check_every == 0 || it == cfg.pretrain_iters {
            let v = mean_loss(spec, &w, val).map_err(|_| diverged(it, "non-finite weights"))?;
            if !v.is_finite() {
                return Err(diverged(it, "non-finite validation loss"));
            }
            let improved = v < best.0;
            if improved {
                best = (v, it, w.clone());
            }
            log.push(TrainLogRow {
                iteration: it,
                train_loss: acc / count as f64,
                val_nll: v,
                entropy_proxy: None,
                accepted: improved,
            });
            acc = 0.0;
            count = 0;
        }
    }
    Ok(PretrainResult {
        weights: best.2,
        best_val_loss: best.0,
        best_iteration: best.1,
        log,
    })
}

/// `m` independent pretraining runs with seeds `seed, seed + 1, …`, in member order.
pub fn fit_deep_ensemble(
    spec: &NetworkSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    m: usize,
) -> Result<Vec<PretrainResult>> {
    if m == 0 {
        return Err(Error::contract("ensemble size must be at least 1"));
    }
    (0..m as u64)
        .into_par_iter()
        .map(|j| pretrain(spec, train, val, &cfg.with_seed(cfg.seed.wrapping_add(j))))
        .collect()
}

/// `τ = L + (2/n) sqrt(Σ (ℓ_i − L)²)` for per-sample losses `ℓ` with mean `L`.
pub fn threshold_from_losses(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::contract("threshold needs at least one loss"));
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let dev = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>();
    Ok(mean + 2.0 / n * dev.sqrt())
}

/// Acceptance threshold on the validation loss of the mean weights.
pub fn validation_threshold(spec: &NetworkSpec, mean: &[f64], val: &Dataset) -> Result<f64> {
    check_data(spec, val, "validation")?;
    let fwd = network::forward(spec, &spec.layout(), mean, &val.x)?;
    threshold_from_losses(&per_sample_loss(spec.head, &fwd.outputs, &val.y)?)
}

/// Eigendecomposition of `(1/n) ψ_lᵀ ψ_l` for the input of every layer,
/// computed from one forward pass of `x` through the mean network.
pub fn build_svd_bases(spec: &NetworkSpec, mean: &[f64], x: &Matrix) -> Result<Vec<SymEigen<f64>>> {
    let fwd = network::forward(spec, &spec.layout(), mean, x)?;
    fwd.hidden.iter().map(|h| sym_eigendecomposition(&h.gram())).collect()
}

/// A distribution of the requested kind around `mean`; SVD bases are
/// computed from `x` (normally the training inputs).
pub fn initial_distribution(
    kind: Parameterization,
    spec: &NetworkSpec,
    mean: Vec<f64>,
    x: &Matrix,
    cfg: &TrainConfig,
) -> Result<WeightDistribution> {
    let u0 = cfg.u_init_for(kind);
    match kind {
        Parameterization::Scaling => WeightDistribution::scaling(spec.layout(), mean, u0, cfg.law),
        Parameterization::Svd => {
            let bases = build_svd_bases(spec, &mean, x)?
                .into_iter()
                .map(|e| e.vectors)
                .collect();
            WeightDistribution::svd(spec.layout(), mean, bases, u0, cfg.law)
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub distribution: WeightDistribution,
    pub log: Vec<TrainLogRow>,
    pub tau: f64,
    /// Iteration of the returned scales when they were accepted under `τ`.
    pub accepted_iteration: Option<usize>,
}

impl FitResult {
    pub fn entropy_trajectory(&self) -> Vec<f64> {
        self.log.iter().filter_map(|r| r.entropy_proxy).collect()
    }
}

/// Mean validation loss over fixed latent draws.
fn stochastic_val_loss(
    dist: &WeightDistribution,
    spec: &NetworkSpec,
    val: &Dataset,
    zs: &[Vec<f64>],
) -> Result<f64> {
    let mut total = 0.0;
    for z in zs {
        total += mean_loss(spec, &dist.realize(z)?, val)?;
    }
    Ok(total / zs.len() as f64)
}

/// Monte Carlo loss and its gradient with respect to `u` on one batch.
fn mc_loss_grad(
    dist: &WeightDistribution,
    scales: (&[f64], &[f64]),
    spec: &NetworkSpec,
    x: &Matrix,
    y: &Targets<f64>,
    z_stream: &mut RandomStream,
    samples: usize,
    mut on_weight_grad: impl FnMut(&[f64], &[f64]),
) -> Result<(f64, Vec<f64>)> {
    let layout = dist.layout();
    let (phi, slope) = (scales.0, scales.1);
    let mut grad_u = vec![0.0; dist.dim()];
    let mut value = 0.0;
    let scale = 1.0 / samples as f64;
    for _ in 0..samples {
        let z = dist.sample_z(z_stream);
        let w = dist.realize_with(&z, phi)?;
        let (l, gw) = network::loss_and_grad(spec, layout, &w, x, y)?;
        let gu = dist.pullback_with(&z, &gw, phi, slope)?;
        grad_u.iter_mut().zip(&gu).for_each(|(a, b)| *a += scale * b);
        on_weight_grad(&z, &gw);
        value += scale * l;
    }
    Ok((value, grad_u))
}

/// Trains the raw scales `u` of `dist` by minimizing
/// `E[L(ω(z, φ))] − λ H(φ)`; the mean weights stay frozen.
///
/// Every `val_check_every` iterations the validation loss is estimated on a
/// fixed set of latent draws and the scales are accepted when it does not
/// exceed `τ`.
pub fn maxwent_fit(
    dist: WeightDistribution,
    spec: &NetworkSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    spec.validate()?;
    check_data(spec, train, "training")?;
    check_data(spec, val, "validation")?;
    if dist.layout() != &spec.layout() {
        return Err(Error::contract("distribution layout does not match the network"));
    }
    let tau = validation_threshold(spec, dist.mean(), val)?;
    let root = RandomStream::new(cfg.seed, cfg.law);
    let mut sampler = BatchSampler::new(train.len(), cfg.sampling, root.derive(1));
    let mut z_stream = root.derive(2);
    let mut val_stream = root.derive(3);
    let val_z: Vec<Vec<f64>> = (0..cfg.val_z_samples)
        .map(|_| dist.sample_z(&mut val_stream))
        .collect();

    let mut dist = dist;
    let mut adam = Adam::new(dist.dim(), cfg.learning_rate, cfg.adam);
    let initial_raw = dist.raw().to_vec();

    let v0 = stochastic_val_loss(&dist, spec, val, &val_z)?;
    let mut accepted: Option<(usize, Vec<f64>)> = (v0 <= tau).then(|| (0, initial_raw.clone()));
    let mut log = vec![TrainLogRow {
        iteration: 0,
        train_loss: stochastic_val_loss(&dist, spec, train, &val_z[..1])?,
        val_nll: v0,
        entropy_proxy: Some(entropy_proxy_with(&dist, cfg.entropy)),
        accepted: v0 <= tau,
    }];

    let (mut acc, mut count) = (0.0, 0usize);
    for it in 1..=cfg.maxwent_iters {
        let idx = sampler.next(cfg.batch_size);
        let (x, y) = (train.x.select_rows(&idx), train.y.select(&idx));
        let phi = dist.scales();
        let slope: Vec<f64> = dist.raw().iter().map(|&u| sigmoid(u)).collect();
        let (value, mut grad) = mc_loss_grad(
            &dist,
            (&phi, &slope),
            spec,
            &x,
            &y,
            &mut z_stream,
            cfg.mc_samples,
            |_, _| {},
        )
        .map_err(|e| diverged(it, e.to_string()))?;
        let (h, h_grad) = entropy_terms(&phi, &slope, cfg.entropy);
        if !(value - cfg.lambda * h).is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(it, "non-finite objective"));
        }
        if cfg.lambda > 0.0 {
            for (g, e) in grad.iter_mut().zip(h_grad) {
                *g -= cfg.lambda * e;
            }
        }
        adam.step(dist.raw_mut(), &grad);
        acc += value;
        count += 1;
        if it % cfg.val_check_every == 0 || it == cfg.maxwent_iters {
            let v = stochastic_val_loss(&dist, spec, val, &val_z)
                .map_err(|e| diverged(it, e.to_string()))?;
            if !v.is_finite() {
                return Err(diverged(it, "non-finite validation loss"));
            }
            let ok = v <= tau;
            if ok {
                accepted = Some((it, dist.raw().to_vec()));
            }
            log.push(TrainLogRow {
                iteration: it,
                train_loss: acc / count as f64,
                val_nll: v,
                entropy_proxy: Some(entropy_proxy_with(&dist, cfg.entropy)),
                accepted: ok,
            });
            acc = 0.0;
            count = 0;
        }
    }

    let accepted_iteration = match cfg.acceptance {
        Acceptance::Final => None,
        Acceptance::Threshold => {
            let (it, raw) = accepted.map_or((None, initial_raw), |(it, raw)| (Some(it), raw));
            dist.set_raw(raw)?;
            it
        }
    };
    Ok(FitResult {
        distribution: dist,
        log,
        tau,
        accepted_iteration,
    })
}

/// Fits every member independently with seeds `seed + j`, in member order.
pub fn maxwent_fit_members(
    members: Vec<WeightDistribution>,
    spec: &NetworkSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<FitResult>> {
    members
        .into_par_iter()
        .enumerate()
        .map(|(j, d)| maxwent_fit(d, spec, train, val, &cfg.with_seed(cfg.seed.wrapping_add(j as u64))))
        .collect()
}

/// `KL(N(μ, diag σ²) ‖ N(0, σ₀² I))`.
pub fn bnn_kl(mu: &[f64], sigma: &[f64], sigma0: f64) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::contract("mean and scale lengths differ"));
    }
    if !(sigma0 > 0.0) || sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::contract("scales must be positive"));
    }
    let s0 = sigma0 * sigma0;
    let quad = mu.iter().map(|m| m * m).sum::<f64>() / (2.0 * s0);
    let spread = sigma
        .iter()
        .map(|s| {
            let r = s * s / s0;
            r - r.ln()
        })
        .sum::<f64>();
    Ok(quad + 0.5 * spread - mu.len() as f64 / 2.0)
}

/// Mean-field Gaussian BNN baseline. Trains both the mean and the scales on
/// `mean NLL + KL / n_train` with a standard-normal latent law, starting
/// from `mean` and `u_init`. Returns the final iterate.
pub fn bnn_fit(
    mean: Vec<f64>,
    spec: &NetworkSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    spec.validate()?;
    check_data(spec, train, "training")?;
    check_data(spec, val, "validation")?;
    let mut dist = WeightDistribution::scaling(
        spec.layout(),
        mean,
        cfg.u_init_for(Parameterization::Scaling),
        Law::StandardNormal,
    )?;
    let tau = validation_threshold(spec, dist.mean(), val)?;
    let d = dist.dim();
    let root = RandomStream::new(cfg.seed, Law::StandardNormal);
    let mut sampler = BatchSampler::new(train.len(), cfg.sampling, root.derive(1));
    let mut z_stream = root.derive(2);
    let mut val_stream = root.derive(3);
    let val_z: Vec<Vec<f64>> = (0..cfg.val_z_samples)
        .map(|_| dist.sample_z(&mut val_stream))
        .collect();
    let mut adam = Adam::new(2 * d, cfg.learning_rate, cfg.adam);
    let kl_scale = 1.0 / train.len() as f64;
    let s0 = cfg.bnn_prior_std * cfg.bnn_prior_std;
    let mut params = vec![0.0; 2 * d];

    let v0 = stochastic_val_loss(&dist, spec, val, &val_z)?;
    let mut log = vec![TrainLogRow {
        iteration: 0,
        train_loss: stochastic_val_loss(&dist, spec, train, &val_z[..1])?,
        val_nll: v0,
        entropy_proxy: Some(entropy_proxy_with(&dist, cfg.entropy)),
        accepted: v0 <= tau,
    }];
    let (mut acc, mut count) = (0.0, 0usize);
    for it in 1..=cfg.maxwent_iters {
        let idx = sampler.next(cfg.batch_size);
        let (x, y) = (train.x.select_rows(&idx), train.y.select(&idx));
        let mut grad = vec![0.0; 2 * d];
        let inv_n = 1.0 / cfg.mc_samples as f64;
        let sigma = dist.scales();
        let slope: Vec<f64> = dist.raw().iter().map(|&u| sigmoid(u)).collect();
        let (value, grad_u) = mc_loss_grad(
            &dist,
            (&sigma, &slope),
            spec,
            &x,
            &y,
            &mut z_stream,
            cfg.mc_samples,
            |_, gw| grad[..d].iter_mut().zip(gw).for_each(|(a, b)| *a += inv_n * b),
        )
        .map_err(|e| diverged(it, e.to_string()))?;
        grad[d..].copy_from_slice(&grad_u);
        let kl = bnn_kl(dist.mean(), &sigma, cfg.bnn_prior_std)
            .map_err(|e| diverged(it, e.to_string()))?;
        for k in 0..d {
            let (m, s) = (dist.mean()[k], sigma[k]);
            grad[k] += kl_scale * m / s0;
            grad[d + k] += kl_scale * (s / s0 - 1.0 / s) * slope[k];
        }
        let objective = value + kl_scale * kl;
        if !objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(it, "non-finite objective"));
        }
        params[..d].copy_from_slice(dist.mean());
        params[d..].copy_from_slice(dist.raw());
        adam.step(&mut params, &grad);
        dist.mean_mut().copy_from_slice(&params[..d]);
        dist.raw_mut().copy_from_slice(&params[d..]);
        acc += value;
        count += 1;
        if it % cfg.val_check_every == 0 || it == cfg.maxwent_iters {
            let v = stochastic_val_loss(&dist, spec, val, &val_z)
                .map_err(|e| diverged(it, e.to_string()))?;
            if !v.is_finite() {
                return Err(diverged(it, "non-finite validation loss"));
            }
            log.push(TrainLogRow {
                iteration: it,
                train_loss: acc / count as f64,
                val_nll: v,
                entropy_proxy: Some(entropy_proxy_with(&dist, cfg.entropy)),
                accepted: v <= tau,
            });
            acc = 0.0;
            count = 0;
        }
    }
    Ok(FitResult {
        distribution: dist,
        log,
        tau,
        accepted_iteration: None,
    })
}

/// Softplus scales of `u`; convenience for reports.
pub fn scales_of(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|&u| softplus(u)).collect()
}

//! Stochastic inference, uncertainty scores, OOD metrics and the
//! activation-amplitude diagnostic.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, Head, NetworkSpec, Param, Targets, PROB_CLIP};
use crate::numerics::RandomStream;
use crate::stochastic::{EnsembleDistribution, Parameterization, WeightDistribution};
use crate::Matrix;

/// Floor applied to the mixture variance in [`test_nll`].
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Latent draws used to estimate activation amplitudes.
pub const AMPLITUDE_DRAWS: usize = 32;

/// All sampled predictions for one input.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictionSample {
    /// One `(μ, σ)` pair per draw. Squared-error heads report `σ = 0`.
    Regression { mu: Vec<f64>, sigma: Vec<f64> },
    /// One probability vector per draw.
    Classification { probs: Vec<Vec<f64>> },
}

impl PredictionSample {
    pub fn len(&self) -> usize {
        match self {
            PredictionSample::Regression { mu, .. } => mu.len(),
            PredictionSample::Classification { probs } => probs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `p` weight vectors per mixture member and evaluates each on all rows
/// of `x`.
///
/// Draw `k` of member `j` uses the stream derived from `stream` with key
/// `j · p + k`, so results do not depend on the number of worker threads.
/// Members with clip level 0 are deterministic and evaluated once.
pub fn predict_samples(
    model: &EnsembleDistribution,
    spec: &NetworkSpec,
    x: &Matrix,
    p: usize,
    stream: &RandomStream,
) -> Result<Vec<PredictionSample>> {
    if p == 0 {
        return Err(Error::contract("number of predictions must be at least 1"));
    }
    let layout = spec.layout();
    let m = model.len();
    let outputs: Vec<Matrix> = (0..m * p)
        .into_par_iter()
        .map(|key| {
            let member = &model.members()[key / p];
            let w = if member.clip() == 0.0 {
                member.mean().to_vec()
            } else {
                member.realize(&member.sample_z(&mut stream.derive(key as u64)))?
            };
            Ok(network::forward(spec, &layout, &w, x)?.outputs)
        })
        .collect::<Result<_>>()?;
    Ok((0..x.rows())
        .map(|i| match spec.head {
            Head::GaussianRegression => PredictionSample::Regression {
                mu: outputs.iter().map(|o| o[(i, 0)]).collect(),
                sigma: outputs.iter().map(|o| o[(i, 1)]).collect(),
            },
            Head::SquaredError => PredictionSample::Regression {
                mu: outputs.iter().map(|o| o[(i, 0)]).collect(),
                sigma: vec![0.0; outputs.len()],
            },
            Head::Binary => PredictionSample::Classification {
                probs: outputs
                    .iter()
                    .map(|o| vec![1.0 - o[(i, 0)], o[(i, 0)]])
                    .collect(),
            },
            Head::MultiClass { .. } => PredictionSample::Classification {
                probs: outputs.iter().map(|o| o.row(i).to_vec()).collect(),
            },
        })
        .collect())
}

fn mean_probs(probs: &[Vec<f64>]) -> Vec<f64> {
    let k = probs.first().map_or(0, Vec::len);
    let mut avg = vec![0.0; k];
    for p in probs {
        avg.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let n = probs.len() as f64;
    avg.iter_mut().for_each(|a| *a /= n);
    avg
}

/// Shannon entropy (natural log) of the averaged probability vector.
pub fn uncertainty_classification(probs: &[Vec<f64>]) -> f64 {
    let entropy: f64 = mean_probs(probs)
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.ln())
        .sum();
    entropy.max(0.0)
}

/// Variance of the Gaussian mixture: mean aleatoric variance plus the
/// variance of the means, `(1/P) Σ (σ² + μ²) − μ̄²`.
pub fn uncertainty_regression(mu: &[f64], sigma: &[f64]) -> f64 {
    let n = mu.len() as f64;
    let mean = mu.iter().sum::<f64>() / n;
    let aleatoric = sigma.iter().map(|s| s * s).sum::<f64>() / n;
    let epistemic = mu.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
    aleatoric + epistemic
}

pub fn uncertainty(sample: &PredictionSample) -> f64 {
    match sample {
        PredictionSample::Regression { mu, sigma } => uncertainty_regression(mu, sigma),
        PredictionSample::Classification { probs } => uncertainty_classification(probs),
    }
}

pub fn uncertainties(samples: &[PredictionSample]) -> Vec<f64> {
    samples.iter().map(uncertainty).collect()
}

fn check_scores(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::contract("both score sets must be non-empty"));
    }
    if let Some(i) = id.iter().chain(ood).position(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            what: "score",
            index: i,
        });
    }
    Ok(())
}

/// Probability that an OOD score exceeds an ID score, ties counting one half
/// (Mann-Whitney statistic with midranks).
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(id, ood)?;
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, false))
        .chain(ood.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    Ok((rank_sum - n_ood * (n_ood + 1.0) / 2.0) / (n_id * n_ood))
}

/// False-positive rate at 95% true-positive rate.
///
/// The threshold `t` is the largest value with at least 95% of OOD scores
/// `≥ t`; the rate is the fraction of ID scores strictly above `t`.
pub fn fpr_at_95_tpr(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_scores(id, ood)?;
    let mut sorted = ood.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((0.95 * ood.len() as f64).ceil() as usize).clamp(1, ood.len());
    let t = sorted[k - 1];
    Ok(id.iter().filter(|&&s| s > t).count() as f64 / id.len() as f64)
}

/// Mean test NLL of the predictive mixture. Regression uses the Gaussian
/// `N(μ̄, u(x))` with the `½ log 2π` constant; classification the averaged
/// probabilities.
pub fn test_nll(samples: &[PredictionSample], targets: &Targets<f64>) -> Result<f64> {
    if samples.len() != targets.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} targets",
            samples.len(),
            targets.len()
        )));
    }
    if samples.is_empty() {
        return Err(Error::contract("no test points"));
    }
    let mut total = 0.0;
    for (i, s) in samples.iter().enumerate() {
        total += match (s, targets) {
            (PredictionSample::Regression { mu, sigma }, Targets::Real(y)) => {
                let mean = mu.iter().sum::<f64>() / mu.len() as f64;
                let var = uncertainty_regression(mu, sigma).max(VARIANCE_FLOOR);
                0.5 * (2.0 * PI * var).ln() + (y[i] - mean).powi(2) / (2.0 * var)
            }
            (PredictionSample::Classification { probs }, Targets::Labels(y)) => {
                let avg = mean_probs(probs);
                let q = *avg.get(y[i]).ok_or_else(|| {
                    Error::contract(format!("label {} at row {i} out of range", y[i]))
                })?;
                -q.clamp(PROB_CLIP, 1.0).ln()
            }
            _ => return Err(Error::contract("prediction kind does not match targets")),
        };
    }
    Ok(total / samples.len() as f64)
}

/// Ranks starting at 1, ties sharing their mean rank.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (midranks(a), midranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// Amplitudes and scales for the neurons of one hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAmplitude {
    /// Hidden layer index, starting at 1 for the first hidden layer.
    pub layer: usize,
    /// `a²_k = (1/n) Σ_i E[ψ_k(x_i)²]` for every neuron `k` of the layer.
    pub amplitude: Vec<f64>,
    /// Mean noise variance (per unit latent variance) over the outgoing
    /// weights of neuron `k`: `φ²` for the scaling kind, the marginal
    /// variance `Σ_m E_km² φ_mj²` for the SVD kind.
    pub mean_phi2: Vec<f64>,
    pub spearman: f64,
}

/// Relates each hidden neuron's activation amplitude on `x` to the spread of
/// the weights it feeds. Amplitudes average [`AMPLITUDE_DRAWS`] weight draws.
pub fn amplitude_diagnostic(
    dist: &WeightDistribution,
    spec: &NetworkSpec,
    x: &Matrix,
    stream: &RandomStream,
) -> Result<Vec<LayerAmplitude>> {
    let layout = spec.layout();
    if dist.layout() != &layout {
        return Err(Error::contract("distribution layout does not match the network"));
    }
    let n_layers = layout.num_layers();
    let sums: Vec<Vec<Vec<f64>>> = (0..AMPLITUDE_DRAWS)
        .into_par_iter()
        .map(|k| {
            let w = dist.realize(&dist.sample_z(&mut stream.derive(k as u64)))?;
            let fwd = network::forward(spec, &layout, &w, x)?;
            Ok((1..n_layers)
                .map(|l| {
                    let h = &fwd.hidden[l];
                    (0..h.cols())
                        .map(|c| (0..h.rows()).map(|i| h[(i, c)] * h[(i, c)]).sum::<f64>())
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let phi = dist.scales();
    let denom = (AMPLITUDE_DRAWS * x.rows().max(1)) as f64;
    Ok((1..n_layers)
        .map(|l| {
            let slot = &layout.layers()[l];
            let amplitude: Vec<f64> = (0..slot.fan_in)
                .map(|k| sums.iter().map(|s| s[l - 1][k]).sum::<f64>() / denom)
                .collect();
            let mean_phi2: Vec<f64> = (0..slot.fan_in)
                .map(|k| {
                    (0..slot.fan_out)
                        .map(|j| {
                            let idx = layout
                                .index_of(Param::Weight {
                                    layer: l,
                                    input: k,
                                    output: j,
                                })
                                .expect("index inside layout");
                            match dist.kind() {
                                Parameterization::Scaling => phi[idx] * phi[idx],
                                Parameterization::Svd => {
                                    // Marginal variance of weight (k, j): Σ_m E_km² φ_mj².
                                    let e = &dist.bases()[l];
                                    (0..slot.fan_in)
                                        .map(|m| {
                                            let pm = phi[slot.weight_range().start + m * slot.fan_out + j];
                                            e[(k, m)] * e[(k, m)] * pm * pm
                                        })
                                        .sum()
                                }
                            }
                        })
                        .sum::<f64>()
                        / slot.fan_out as f64
                })
                .collect();
            LayerAmplitude {
                layer: l,
                spearman: spearman(&amplitude, &mean_phi2),
                amplitude,
                mean_phi2,
            }
        })
        .collect())
}

/// Aggregate result of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    pub split: String,
    pub auroc: f64,
    pub fpr95: f64,
    pub test_nll: f64,
    pub p: usize,
    pub seed: u64,
    pub n_id: usize,
    pub n_ood: usize,
    /// Test-time clip level; `None` means unclipped.
    pub clip: Option<f64>,
}

/// Writes per-sample scores with columns `id,is_ood,uncertainty`, ID rows first.
pub fn write_scores_csv(path: &Path, id_scores: &[f64], ood_scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "is_ood", "uncertainty"])?;
    let rows = id_scores
        .iter()
        .map(|s| (0, s))
        .chain(ood_scores.iter().map(|s| (1, s)));
    for (i, (flag, s)) in rows.enumerate() {
        w.write_record([i.to_string(), flag.to_string(), s.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::io::write_atomic(path, &bytes)
}

/// Scores of a fitted model on ID test rows and OOD inputs.
#[derive(Clone, Debug)]
pub struct ScoredRun {
    pub id_samples: Vec<PredictionSample>,
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

/// Predicts on both sets with streams derived from `seed` (keys 0 and 1).
pub fn score_sets(
    model: &EnsembleDistribution,
    spec: &NetworkSpec,
    id_x: &Matrix,
    ood_x: &Matrix,
    p: usize,
    seed: u64,
) -> Result<ScoredRun> {
    let law = model.members()[0].law();
    let root = RandomStream::new(seed, law);
    let id_samples = predict_samples(model, spec, id_x, p, &root.derive(0))?;
    let ood_samples = predict_samples(model, spec, ood_x, p, &root.derive(1))?;
    Ok(ScoredRun {
        id_scores: uncertainties(&id_samples),
        ood_scores: uncertainties(&ood_samples),
        id_samples,
    })
}

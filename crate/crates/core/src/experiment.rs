//! Fitting and scoring of every supported method on a prepared dataset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, FitInfo, Method};
use crate::data::{DatasetManifest, PreparedData};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalReport, ScoredRun};
use crate::network::{Head, NetworkSpec, Targets};
use crate::stochastic::EnsembleDistribution;
use crate::trainer::{self, FitResult, TrainConfig, TrainLogRow};

/// Test-time clip levels of the clipping sweep, from unclipped down to the mean network.
pub const CLIP_SWEEP: [f64; 9] = [f64::INFINITY, 10.0, 5.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.0];

/// Gaussian regression for real targets, otherwise a binary or softmax head
/// over the labels seen in any partition.
pub fn head_for(data: &PreparedData) -> Result<Head> {
    let parts = [&data.train.y, &data.val.y, &data.test.y];
    let mut classes = 0;
    for y in parts {
        match y {
            Targets::Real(_) => return Ok(Head::GaussianRegression),
            Targets::Labels(l) => classes = l.iter().fold(classes, |m, &c| m.max(c + 1)),
        }
    }
    match classes {
        0 | 1 => Err(Error::contract("classification data needs at least two classes")),
        2 => Ok(Head::Binary),
        k => Ok(Head::MultiClass { classes: k }),
    }
}

/// Default network for a dataset: the three-layer MLP on its input width.
pub fn default_spec(data: &PreparedData) -> Result<NetworkSpec> {
    Ok(NetworkSpec::mlp(data.train.x.cols(), head_for(data)?))
}

#[derive(Clone, Debug)]
pub struct Fitted {
    pub checkpoint: Checkpoint,
    /// Training log of the first member.
    pub log: Vec<TrainLogRow>,
}

/// Fits `method` on `data`.
///
/// `means` supplies pretrained weights; when absent they are pretrained here.
/// Deep ensembles use `members` networks with seeds `seed + j` and ignore
/// `means` unless it already has `members` entries. Stochastic methods wrap
/// every mean in its own distribution.
pub fn fit(
    method: Method,
    spec: &NetworkSpec,
    manifest: &DatasetManifest,
    data: &PreparedData,
    cfg: &TrainConfig,
    members: usize,
    means: Option<Vec<Vec<f64>>>,
) -> Result<Fitted> {
    cfg.validate()?;
    spec.validate()?;
    if members == 0 {
        return Err(Error::contract("ensemble size must be at least 1"));
    }
    let (train, val) = (&data.train, &data.val);
    let pretrained = |count: usize| -> Result<(Vec<Vec<f64>>, Vec<TrainLogRow>)> {
        match &means {
            Some(m) if m.len() >= count => Ok((m.clone(), Vec::new())),
            _ => {
                let runs = trainer::fit_deep_ensemble(spec, train, val, cfg, count)?;
                let log = runs[0].log.clone();
                Ok((runs.into_iter().map(|r| r.weights).collect(), log))
            }
        }
    };
    let deterministic = |means: Vec<Vec<f64>>, log| {
        Ok(Fitted {
            checkpoint: Checkpoint::deterministic(method, spec.clone(), manifest.clone(), cfg.clone(), means)?,
            log,
        })
    };
    let stochastic = |results: Vec<FitResult>| {
        let dists: Vec<_> = results.iter().map(|r| r.distribution.clone()).collect();
        let info: Vec<_> = results
            .iter()
            .map(|r| FitInfo {
                tau: Some(r.tau),
                accepted_iteration: r.accepted_iteration,
            })
            .collect();
        Ok(Fitted {
            checkpoint: Checkpoint::stochastic(method, spec.clone(), manifest.clone(), cfg.clone(), &dists, &info)?,
            log: results[0].log.clone(),
        })
    };

    match method {
        Method::Vanilla => {
            let (mut m, log) = pretrained(1)?;
            m.truncate(1);
            deterministic(m, log)
        }
        Method::DeepEnsemble => {
            let (mut m, log) = pretrained(members)?;
            m.truncate(members);
            deterministic(m, log)
        }
        Method::Maxwent | Method::MaxwentSvd => {
            let kind = method.maxwent_kind().expect("MaxWEnt method has a kind");
            let (m, _) = pretrained(1)?;
            let dists = m
                .into_iter()
                .map(|mean| trainer::initial_distribution(kind, spec, mean, &train.x, cfg))
                .collect::<Result<Vec<_>>>()?;
            stochastic(trainer::maxwent_fit_members(dists, spec, train, val, cfg)?)
        }
        Method::Bnn => {
            let (m, _) = pretrained(1)?;
            let results = m
                .into_par_iter()
                .enumerate()
                .map(|(j, mean)| {
                    trainer::bnn_fit(mean, spec, train, val, &cfg.with_seed(cfg.seed.wrapping_add(j as u64)))
                })
                .collect::<Result<Vec<_>>>()?;
            stochastic(results)
        }
    }
}

/// The checkpoint's mixture with stochastic members clipped at `clip`.
pub fn model_with_clip(ckpt: &Checkpoint, clip: Option<f64>) -> Result<EnsembleDistribution> {
    let model = ckpt.to_ensemble()?;
    match clip {
        Some(c) if !ckpt.is_deterministic() => EnsembleDistribution::new(
            model
                .members()
                .iter()
                .map(|d| d.clone().with_clip(c))
                .collect::<Result<_>>()?,
        ),
        _ => Ok(model),
    }
}

/// Scores the test rows against the OOD inputs with `p` draws per member.
pub fn evaluate(
    ckpt: &Checkpoint,
    data: &PreparedData,
    p: usize,
    seed: u64,
    clip: Option<f64>,
) -> Result<(EvalReport, ScoredRun)> {
    let model = model_with_clip(ckpt, clip)?;
    let run = evaluation::score_sets(&model, &ckpt.spec, &data.test.x, &data.ood, p, seed)?;
    let report = EvalReport {
        method: ckpt.method.to_string(),
        dataset: ckpt.data.name.clone(),
        split: ckpt.data.split_name().to_string(),
        auroc: evaluation::auroc(&run.id_scores, &run.ood_scores)?,
        fpr95: evaluation::fpr_at_95_tpr(&run.id_scores, &run.ood_scores)?,
        test_nll: evaluation::test_nll(&run.id_samples, &data.test.y)?,
        p,
        seed,
        n_id: run.id_scores.len(),
        n_ood: run.ood_scores.len(),
        clip: clip.filter(|_| !ckpt.is_deterministic()),
    };
    Ok((report, run))
}

/// One clip level of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRow {
    pub clip: f64,
    pub mean_uncertainty_id: f64,
    pub mean_uncertainty_ood: f64,
    pub auroc: f64,
}

/// Evaluates the same draws at every clip level in `clips`.
pub fn clip_sweep(
    ckpt: &Checkpoint,
    data: &PreparedData,
    clips: &[f64],
    p: usize,
    seed: u64,
) -> Result<Vec<ClipRow>> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    clips
        .iter()
        .map(|&c| {
            let (report, run) = evaluate(ckpt, data, p, seed, Some(c))?;
            Ok(ClipRow {
                clip: c,
                mean_uncertainty_id: mean(&run.id_scores),
                mean_uncertainty_ood: mean(&run.ood_scores),
                auroc: report.auroc,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(cfg: TrainConfig) -> TrainConfig {
        TrainConfig {
            pretrain_iters: 200,
            maxwent_iters: 200,
            ..cfg
        }
    }

    fn small_spec(data: &PreparedData) -> NetworkSpec {
        NetworkSpec {
            hidden: vec![16, 16],
            ..default_spec(data).unwrap()
        }
    }

    #[test]
    fn heads_follow_targets() {
        let moons = DatasetManifest::two_moons(0).prepare().unwrap();
        assert_eq!(head_for(&moons).unwrap(), Head::Binary);
        let reg = DatasetManifest::regression_1d(0).prepare().unwrap();
        assert_eq!(head_for(&reg).unwrap(), Head::GaussianRegression);
    }

    #[test]
    fn every_method_fits_and_scores() {
        let manifest = DatasetManifest::two_moons(3);
        let data = manifest.prepare().unwrap();
        let spec = small_spec(&data);
        let cfg = quick(TrainConfig::synthetic());
        for method in Method::ALL {
            let fitted = fit(method, &spec, &manifest, &data, &cfg, 2, None).unwrap();
            let expected = if method == Method::DeepEnsemble { 2 } else { 1 };
            assert_eq!(fitted.checkpoint.members.len(), expected, "{method}");
            let (report, run) = evaluate(&fitted.checkpoint, &data, 5, 0, None).unwrap();
            assert_eq!(report.n_ood, data.ood.rows());
            assert_eq!(run.id_scores.len(), data.test.len());
            assert!((0.0..=1.0).contains(&report.auroc));
        }
    }

    #[test]
    fn zero_clip_reproduces_the_mean_network() {
        let manifest = DatasetManifest::regression_1d(1);
        let data = manifest.prepare().unwrap();
        let spec = small_spec(&data);
        let cfg = quick(TrainConfig::synthetic());
        let vanilla = fit(Method::Vanilla, &spec, &manifest, &data, &cfg, 1, None).unwrap();
        let means = vanilla.checkpoint.members.iter().map(|m| m.mean.clone()).collect();
        let svd = fit(Method::MaxwentSvd, &spec, &manifest, &data, &cfg, 1, Some(means)).unwrap();
        let (_, a) = evaluate(&vanilla.checkpoint, &data, 4, 9, None).unwrap();
        let (_, b) = evaluate(&svd.checkpoint, &data, 4, 9, Some(0.0)).unwrap();
        assert_eq!(a.id_scores, b.id_scores);
        assert_eq!(a.ood_scores, b.ood_scores);
    }
}

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use maxwent::checkpoint::{Checkpoint, Method};
use maxwent::data::{DatasetManifest, PreparedData};
use maxwent::evaluation::{self, EvalReport};
use maxwent::experiment::{self, CLIP_SWEEP};
use maxwent::io::{write_atomic, write_json_atomic};
use maxwent::oracle::{self, VerifyOptions};
use maxwent::trainer::{self, TrainConfig};
use maxwent::NetworkSpec;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{
    csv_manifest, set_fractions, BenchmarkArgs, ClipSweepArgs, EvalArgs, PretrainArgs, TrainArgs, VerifyArgs,
};

/// A run that completed but failed its numerical checks.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("{}: no such file", path.display());
    }
    Ok(())
}

fn check_output(path: &Path) -> Result<()> {
    if path.is_dir() {
        bail!("{}: is a directory", path.display());
    }
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        bail!("{}: directory does not exist", parent.display());
    }
    Ok(())
}

fn check_manifest_inputs(m: &DatasetManifest) -> Result<()> {
    if let maxwent::data::DataSource::Csv { path, .. } = &m.source {
        check_input(path)?;
    }
    Ok(())
}

fn prepare(m: &DatasetManifest) -> Result<PreparedData> {
    m.prepare().with_context(|| format!("preparing dataset `{}`", m.name))
}

fn write_log(path: Option<&PathBuf>, rows: &[trainer::TrainLogRow]) -> Result<()> {
    if let Some(p) = path {
        trainer::write_log_csv(p, rows).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "wrote {} ({}, {} member(s), d = {})",
        path.display(),
        ckpt.method,
        ckpt.members.len(),
        ckpt.dim
    );
    Ok(())
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    check_output(&a.out)?;
    if let Some(l) = &a.log {
        check_output(l)?;
    }
    if a.members == 0 {
        bail!("--members must be at least 1");
    }
    let manifest = a.data.manifest(a.seed)?;
    check_manifest_inputs(&manifest)?;
    let cfg = a.train.config(&manifest, a.seed);
    cfg.validate()?;
    let data = prepare(&manifest)?;
    let spec = a.train.apply_spec(experiment::default_spec(&data)?);
    let method = if a.members == 1 {
        Method::Vanilla
    } else {
        Method::DeepEnsemble
    };
    let fitted = experiment::fit(method, &spec, &manifest, &data, &cfg, a.members, None)?;
    write_log(a.log.as_ref(), &fitted.log)?;
    save(&fitted.checkpoint, &a.out)
}

pub fn train(a: TrainArgs) -> Result<()> {
    check_output(&a.out)?;
    if let Some(l) = &a.log {
        check_output(l)?;
    }
    let method = Method::from(a.method);
    let (spec, manifest, cfg, means, data) = match &a.input {
        Some(path) => {
            check_input(path)?;
            if a.train.hidden.is_some() {
                bail!("--hidden cannot change the network of an existing checkpoint");
            }
            let ckpt = Checkpoint::load(path)?;
            check_manifest_inputs(&ckpt.data)?;
            let seed = a.seed.unwrap_or(ckpt.config.seed);
            let cfg = a.train.apply(ckpt.config.clone()).with_seed(seed);
            cfg.validate()?;
            let means = ckpt.members.iter().map(|m| m.mean.clone()).collect::<Vec<_>>();
            let data = prepare(&ckpt.data)?;
            (ckpt.spec, ckpt.data, cfg, Some(means), data)
        }
        None => {
            let seed = a.seed.unwrap_or(0);
            let manifest = a.data.manifest(seed)?;
            check_manifest_inputs(&manifest)?;
            let cfg = a.train.config(&manifest, seed);
            cfg.validate()?;
            let data = prepare(&manifest)?;
            let spec = a.train.apply_spec(experiment::default_spec(&data)?);
            (spec, manifest, cfg, None, data)
        }
    };
    let members = means.as_ref().map_or(1, Vec::len);
    let fitted = experiment::fit(method, &spec, &manifest, &data, &cfg, members, means)?;
    write_log(a.log.as_ref(), &fitted.log)?;
    for (j, m) in fitted.checkpoint.members.iter().enumerate() {
        match m.accepted_iteration {
            Some(it) => println!("member {j}: accepted at iteration {it}"),
            None => println!("member {j}: no scales accepted under the threshold"),
        }
    }
    save(&fitted.checkpoint, &a.out)
}

fn load_with_data(path: &Path) -> Result<(Checkpoint, PreparedData)> {
    check_input(path)?;
    let ckpt = Checkpoint::load(path)?;
    check_manifest_inputs(&ckpt.data)?;
    let data = prepare(&ckpt.data)?;
    Ok((ckpt, data))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    check_output(&a.out)?;
    if let Some(s) = &a.scores {
        check_output(s)?;
    }
    let (ckpt, data) = load_with_data(&a.input)?;
    let (report, run) = experiment::evaluate(&ckpt, &data, a.p, a.seed, a.clip)?;
    write_json_atomic(&a.out, &report).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(s) = &a.scores {
        evaluation::write_scores_csv(s, &run.id_scores, &run.ood_scores)
            .with_context(|| format!("writing {}", s.display()))?;
    }
    println!(
        "{} on {}: auroc {:.4}, fpr95 {:.4}, test nll {:.4}",
        report.method, report.dataset, report.auroc, report.fpr95, report.test_nll
    );
    Ok(())
}

pub fn clip_sweep(a: ClipSweepArgs) -> Result<()> {
    check_output(&a.out)?;
    let (ckpt, data) = load_with_data(&a.input)?;
    let clips = a.clips.clone().unwrap_or_else(|| CLIP_SWEEP.to_vec());
    let rows = experiment::clip_sweep(&ckpt, &data, &clips, a.p, a.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    write_atomic(&a.out, &w.into_inner()?).with_context(|| format!("writing {}", a.out.display()))?;
    for r in &rows {
        println!(
            "clip {:>6}: mean uncertainty id {:.6}, ood {:.6}",
            r.clip, r.mean_uncertainty_id, r.mean_uncertainty_ood
        );
    }
    Ok(())
}

pub fn verify(a: VerifyArgs) -> Result<()> {
    if let Some(o) = &a.out {
        check_output(o)?;
    }
    let checks = oracle::verify_suite(VerifyOptions {
        lambda_mismatch: a.lambda_mismatch,
    })?;
    for c in &checks {
        println!(
            "{} {}: measured {:.3e}, tolerance {:.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance
        );
    }
    if let Some(o) = &a.out {
        write_json_atomic(o, &checks)?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(NumericalFailure(format!("{failed} of {} checks failed", checks.len())).into());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchmarkEntry {
    split: String,
    method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct BenchmarkReport {
    dataset: String,
    seed: u64,
    members: usize,
    p: usize,
    config: TrainConfig,
    entries: Vec<BenchmarkEntry>,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    split: &'a str,
    method: &'a str,
    status: &'a str,
    auroc: Option<f64>,
    fpr95: Option<f64>,
    test_nll: Option<f64>,
}

type RunOutcome = std::result::Result<EvalReport, maxwent::Error>;

/// Pretrains once per split, so the vanilla network is the first deep
/// ensemble member and the mean of every stochastic method.
fn run_split(
    manifest: &DatasetManifest,
    methods: &[Method],
    hidden: Option<&Vec<usize>>,
    cfg: &TrainConfig,
    members: usize,
    p: usize,
    seed: u64,
) -> Vec<RunOutcome> {
    let shared = (|| {
        let data = manifest.prepare()?;
        let mut spec: NetworkSpec = experiment::default_spec(&data)?;
        if let Some(h) = hidden {
            spec.hidden = h.clone();
        }
        let count = if methods.contains(&Method::DeepEnsemble) { members } else { 1 };
        let means = trainer::fit_deep_ensemble(&spec, &data.train, &data.val, cfg, count)?
            .into_iter()
            .map(|r| r.weights)
            .collect::<Vec<_>>();
        Ok::<_, maxwent::Error>((data, spec, means))
    })();
    let (data, spec, means) = match shared {
        Ok(s) => s,
        Err(e) => return methods.iter().map(|_| Err(reclassify(&e))).collect(),
    };
    methods
        .par_iter()
        .map(|&method| {
            let initial = match method {
                Method::DeepEnsemble => means.clone(),
                _ => means[..1].to_vec(),
            };
            let fitted = experiment::fit(method, &spec, manifest, &data, cfg, members, Some(initial))?;
            Ok(experiment::evaluate(&fitted.checkpoint, &data, p, seed, None)?.0)
        })
        .collect()
}

/// Copies an error's numerical status onto a message-only error.
fn reclassify(e: &maxwent::Error) -> maxwent::Error {
    let msg = e.to_string();
    if e.is_numerical() {
        maxwent::Error::Divergence {
            iteration: 0,
            detail: msg,
        }
    } else {
        maxwent::Error::Contract(msg)
    }
}

pub fn benchmark(a: BenchmarkArgs) -> Result<()> {
    check_input(&a.csv)?;
    if a.members == 0 {
        bail!("--members must be at least 1");
    }
    if a.splits.is_empty() || a.methods.is_empty() {
        bail!("at least one split and one method are required");
    }
    let methods: Vec<Method> = a.methods.iter().map(|&m| m.into()).collect();
    let manifests = a
        .splits
        .iter()
        .map(|&s| {
            let mut m = csv_manifest(&a.csv, &a.target, a.classification, s.into(), a.seed);
            set_fractions(&mut m, a.train_fraction, a.test_fraction)?;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = a.train.config(&manifests[0], a.seed);
    cfg.validate()?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let outcomes: Vec<Vec<RunOutcome>> = manifests
        .par_iter()
        .map(|m| run_split(m, &methods, a.train.hidden.as_ref(), &cfg, a.members, a.p, a.seed))
        .collect();

    let mut entries = Vec::new();
    let mut numerical_failures = 0;
    for (m, runs) in manifests.iter().zip(outcomes) {
        for (&method, outcome) in methods.iter().zip(runs) {
            let split = m.split_name().to_string();
            let entry = match outcome {
                Ok(report) => {
                    let path = a.out_dir.join(format!("{split}-{method}.json"));
                    write_json_atomic(&path, &report)?;
                    println!("{split:>13} {method:<14} auroc {:.4}", report.auroc);
                    BenchmarkEntry {
                        split,
                        method: method.to_string(),
                        report: Some(report),
                        error: None,
                    }
                }
                Err(e) => {
                    eprintln!("{split} {method} failed: {e}");
                    numerical_failures += usize::from(e.is_numerical());
                    BenchmarkEntry {
                        split,
                        method: method.to_string(),
                        report: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            entries.push(entry);
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &entries {
        w.serialize(SummaryRow {
            split: &e.split,
            method: &e.method,
            status: if e.report.is_some() { "ok" } else { "failed" },
            auroc: e.report.as_ref().map(|r| r.auroc),
            fpr95: e.report.as_ref().map(|r| r.fpr95),
            test_nll: e.report.as_ref().map(|r| r.test_nll),
        })?;
    }
    write_atomic(&a.out_dir.join("summary.csv"), &w.into_inner()?)?;
    let failed = entries.iter().filter(|e| e.report.is_none()).count();
    let total = entries.len();
    write_json_atomic(
        &a.out_dir.join("benchmark.json"),
        &BenchmarkReport {
            dataset: manifests[0].name.clone(),
            seed: a.seed,
            members: a.members,
            p: a.p,
            config: cfg,
            entries,
        },
    )?;
    if failed == total {
        let msg = format!("all {total} runs failed");
        if numerical_failures == total {
            return Err(NumericalFailure(msg).into());
        }
        bail!(msg);
    }
    Ok(())
}

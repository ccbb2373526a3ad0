//! JSON checkpoints of fitted models.
//!
//! Mean weights and raw scales are stored as JSON numbers (exact round trip);
//! SVD bases as base64 of little-endian `f64` in row-major order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::numerics::Law;
use crate::stochastic::{EnsembleDistribution, Parameterization, WeightDistribution};
use crate::trainer::TrainConfig;
use crate::Matrix;

pub const FORMAT: &str = "maxwent-ckpt-v1";

/// Raw scale given to deterministic members; together with clip 0 it makes
/// every draw equal the mean.
pub const DETERMINISTIC_RAW: f64 = -30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vanilla,
    DeepEnsemble,
    Bnn,
    Maxwent,
    MaxwentSvd,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Vanilla,
        Method::DeepEnsemble,
        Method::Bnn,
        Method::Maxwent,
        Method::MaxwentSvd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::DeepEnsemble => "deep-ensemble",
            Method::Bnn => "bnn",
            Method::Maxwent => "maxwent",
            Method::MaxwentSvd => "maxwent-svd",
        }
    }

    /// Parameterization fitted by MaxWEnt methods.
    pub fn maxwent_kind(self) -> Option<Parameterization> {
        match self {
            Method::Maxwent => Some(Parameterization::Scaling),
            Method::MaxwentSvd => Some(Parameterization::Svd),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::contract(format!(
                    "unknown method `{s}` (expected one of vanilla, deep-ensemble, bnn, maxwent, maxwent-svd)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

impl EncodedMatrix {
    pub fn encode(m: &Matrix) -> Self {
        let bytes: Vec<u8> = m.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Matrix> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Checkpoint(format!("bad base64 in basis: {e}")))?;
        if bytes.len() != self.rows * self.cols * 8 {
            return Err(Error::Checkpoint(format!(
                "basis holds {} bytes, expected {}x{} f64",
                bytes.len(),
                self.rows,
                self.cols
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Matrix::from_vec(self.rows, self.cols, values)
    }
}

/// One mixture member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMember {
    pub mean: Vec<f64>,
    /// Raw scales `u`; absent for deterministic networks.
    pub raw: Option<Vec<f64>>,
    /// One basis per layer for the SVD kind, otherwise empty.
    pub bases: Vec<EncodedMatrix>,
    pub tau: Option<f64>,
    pub accepted_iteration: Option<usize>,
}

/// Training outcome attached to a fitted member.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FitInfo {
    pub tau: Option<f64>,
    pub accepted_iteration: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub method: Method,
    pub spec: NetworkSpec,
    /// Number of weights, checked against `spec` on load.
    pub dim: usize,
    /// `None` for deterministic networks.
    pub kind: Option<Parameterization>,
    pub law: Law,
    /// Clip level of stochastic members; `None` means unclipped.
    pub clip: Option<f64>,
    pub data: DatasetManifest,
    pub config: TrainConfig,
    pub members: Vec<CheckpointMember>,
}

impl Checkpoint {
    /// Checkpoint of one or more plain networks.
    pub fn deterministic(
        method: Method,
        spec: NetworkSpec,
        data: DatasetManifest,
        config: TrainConfig,
        means: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let members = means
            .into_iter()
            .map(|mean| CheckpointMember {
                mean,
                raw: None,
                bases: Vec::new(),
                tau: None,
                accepted_iteration: None,
            })
            .collect();
        let law = config.law;
        let ckpt = Self {
            format: FORMAT.to_string(),
            method,
            dim: spec.layout().dim(),
            spec,
            kind: None,
            law,
            clip: None,
            data,
            config,
            members,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Checkpoint of fitted weight distributions, which must share kind, law
    /// and clip level.
    pub fn stochastic(
        method: Method,
        spec: NetworkSpec,
        data: DatasetManifest,
        config: TrainConfig,
        dists: &[WeightDistribution],
        info: &[FitInfo],
    ) -> Result<Self> {
        let first = dists
            .first()
            .ok_or_else(|| Error::contract("checkpoint needs at least one member"))?;
        if info.len() != dists.len() {
            return Err(Error::contract("one fit record per member required"));
        }
        if dists
            .iter()
            .any(|d| d.kind() != first.kind() || d.law() != first.law() || d.clip() != first.clip())
        {
            return Err(Error::contract("members differ in kind, law or clip"));
        }
        let members = dists
            .iter()
            .zip(info)
            .map(|(d, i)| CheckpointMember {
                mean: d.mean().to_vec(),
                raw: Some(d.raw().to_vec()),
                bases: d.bases().iter().map(EncodedMatrix::encode).collect(),
                tau: i.tau,
                accepted_iteration: i.accepted_iteration,
            })
            .collect();
        let ckpt = Self {
            format: FORMAT.to_string(),
            method,
            dim: spec.layout().dim(),
            spec,
            kind: Some(first.kind()),
            law: first.law(),
            clip: first.clip().is_finite().then_some(first.clip()),
            data,
            config,
            members,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn is_deterministic(&self) -> bool {
        self.kind.is_none()
    }

    fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` (expected `{FORMAT}`)",
                self.format
            )));
        }
        let dim = self.spec.layout().dim();
        if self.dim != dim {
            return Err(Error::Checkpoint(format!(
                "dim {} does not match the network's {dim} weights",
                self.dim
            )));
        }
        if self.members.is_empty() {
            return Err(Error::Checkpoint("no members".into()));
        }
        for (j, m) in self.members.iter().enumerate() {
            if m.mean.len() != dim || m.raw.as_ref().is_some_and(|r| r.len() != dim) {
                return Err(Error::Checkpoint(format!("member {j} has the wrong length")));
            }
            if m.raw.is_some() != self.kind.is_some() {
                return Err(Error::Checkpoint(format!(
                    "member {j}: raw scales present iff a kind is set"
                )));
            }
        }
        Ok(())
    }

    /// The mixture described by this checkpoint. Deterministic members become
    /// point masses at their mean.
    pub fn to_ensemble(&self) -> Result<EnsembleDistribution> {
        self.validate()?;
        let layout = self.spec.layout();
        let members = self
            .members
            .iter()
            .map(|m| match (self.kind, &m.raw) {
                (Some(kind), Some(raw)) => {
                    let bases = m.bases.iter().map(EncodedMatrix::decode).collect::<Result<_>>()?;
                    WeightDistribution::from_parts(
                        kind,
                        layout.clone(),
                        m.mean.clone(),
                        raw.clone(),
                        bases,
                        self.law,
                        self.clip.unwrap_or(f64::INFINITY),
                    )
                }
                _ => WeightDistribution::scaling(layout.clone(), m.mean.clone(), DETERMINISTIC_RAW, self.law)?
                    .with_clip(0.0),
            })
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::Contract(msg) => Error::Checkpoint(msg),
                other => other,
            })?;
        EnsembleDistribution::new(members)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Head;
    use crate::trainer::init_weights;

    fn spec() -> NetworkSpec {
        NetworkSpec {
            hidden: vec![4],
            ..NetworkSpec::mlp(2, Head::Binary)
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("mc-dropout".parse::<Method>().is_err());
    }

    #[test]
    fn basis_encoding_is_exact() {
        let m = Matrix::from_vec(2, 2, vec![0.1, -1e-300, f64::MAX, 1.0 / 3.0]).unwrap();
        assert_eq!(EncodedMatrix::encode(&m).decode().unwrap(), m);
        let bad = EncodedMatrix {
            rows: 3,
            ..EncodedMatrix::encode(&m)
        };
        assert!(bad.decode().is_err());
    }

    #[test]
    fn svd_checkpoint_round_trips_exactly() {
        let spec = spec();
        let mean = init_weights(&spec, 3);
        let x = Matrix::from_vec(5, 2, vec![0.1, 0.2, -0.3, 0.5, 1.0, -1.0, 0.7, 0.0, 0.3, 0.3]).unwrap();
        let cfg = TrainConfig::synthetic();
        let mut dist =
            crate::trainer::initial_distribution(Parameterization::Svd, &spec, mean, &x, &cfg).unwrap();
        let raw: Vec<f64> = (0..dist.dim()).map(|i| -3.0 + 0.01 * i as f64).collect();
        dist.set_raw(raw).unwrap();
        let dist = dist.with_clip(2.5).unwrap();
        let info = FitInfo {
            tau: Some(0.125),
            accepted_iteration: Some(300),
        };
        let ckpt = Checkpoint::stochastic(
            Method::MaxwentSvd,
            spec,
            DatasetManifest::two_moons(0),
            cfg,
            std::slice::from_ref(&dist),
            &[info],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_ensemble().unwrap().members()[0], dist);
        assert_eq!(back.to_json().unwrap(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn deterministic_members_are_point_masses() {
        let spec = spec();
        let means = vec![init_weights(&spec, 0), init_weights(&spec, 1)];
        let ckpt = Checkpoint::deterministic(
            Method::DeepEnsemble,
            spec,
            DatasetManifest::two_moons(0),
            TrainConfig::synthetic(),
            means.clone(),
        )
        .unwrap();
        let ens = ckpt.to_ensemble().unwrap();
        assert_eq!(ens.len(), 2);
        let z = vec![1.0; ckpt.dim];
        assert_eq!(ens.realize(1, &z).unwrap(), means[1]);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let spec = spec();
        let mut ckpt = Checkpoint::deterministic(
            Method::Vanilla,
            spec.clone(),
            DatasetManifest::two_moons(0),
            TrainConfig::synthetic(),
            vec![init_weights(&spec, 0)],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ckpt.format = "other".into();
        std::fs::write(&path, serde_json::to_vec(&ckpt).unwrap()).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
        ckpt.format = FORMAT.into();
        ckpt.members[0].mean.pop();
        std::fs::write(&path, serde_json::to_vec(&ckpt).unwrap()).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
        std::fs::write(&path, b"{ not json").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing.json")),
            Err(Error::File { .. })
        ));
    }
}

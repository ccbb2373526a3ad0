//! Weight distributions `w = w̄ + noise(φ, z)` with `φ = softplus(u)`.
//!
//! Two parameterizations are supported. *Scaling* perturbs every weight
//! independently, `w = w̄ + clamp(φ ⊙ z, ±C)`. *SVD* rotates the perturbation
//! of each weight column into the eigenbasis `E` of the layer's training
//! activation covariance, `W = W̄ + E · clamp(Φ ⊙ Z, ±C)`. Biases always use
//! the scaling form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::WeightLayout;
use crate::numerics::matrix::{matmul_into, t_matmul_into};
use crate::numerics::{sigmoid, softplus, DenseMatrix, Law, RandomStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    Scaling,
    Svd,
}

/// Per-coordinate growth function `g` of the entropy proxy
/// `H(φ) = (1/d) Σ g(φ_k²)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyFunction {
    /// `g = log`, proportional to the differential entropy.
    #[default]
    Log,
    /// `g = sqrt`.
    Sqrt,
}

impl EntropyFunction {
    fn value(self, phi: f64) -> f64 {
        match self {
            EntropyFunction::Log => (phi * phi).ln(),
            EntropyFunction::Sqrt => phi,
        }
    }

    /// `d g(φ²) / dφ`.
    fn slope(self, phi: f64) -> f64 {
        match self {
            EntropyFunction::Log => 2.0 / phi,
            EntropyFunction::Sqrt => 1.0,
        }
    }
}

const ORTHOGONALITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightDistribution {
    kind: Parameterization,
    layout: WeightLayout,
    mean: Vec<f64>,
    raw: Vec<f64>,
    /// One `fan_in × fan_in` orthogonal basis per layer, eigenvectors as
    /// columns. Empty for the scaling kind.
    bases: Vec<DenseMatrix<f64>>,
    law: Law,
    clip: f64,
}

impl WeightDistribution {
    pub fn scaling(layout: WeightLayout, mean: Vec<f64>, u_init: f64, law: Law) -> Result<Self> {
        let raw = vec![u_init; layout.dim()];
        Self::from_parts(
            Parameterization::Scaling,
            layout,
            mean,
            raw,
            Vec::new(),
            law,
            f64::INFINITY,
        )
    }

    pub fn svd(
        layout: WeightLayout,
        mean: Vec<f64>,
        bases: Vec<DenseMatrix<f64>>,
        u_init: f64,
        law: Law,
    ) -> Result<Self> {
        let raw = vec![u_init; layout.dim()];
        Self::from_parts(
            Parameterization::Svd,
            layout,
            mean,
            raw,
            bases,
            law,
            f64::INFINITY,
        )
    }

    pub fn from_parts(
        kind: Parameterization,
        layout: WeightLayout,
        mean: Vec<f64>,
        raw: Vec<f64>,
        bases: Vec<DenseMatrix<f64>>,
        law: Law,
        clip: f64,
    ) -> Result<Self> {
        layout.check_len(mean.len(), "mean weights")?;
        layout.check_len(raw.len(), "raw scales")?;
        if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "raw scale",
                index: i,
            });
        }
        match kind {
            Parameterization::Scaling if !bases.is_empty() => {
                return Err(Error::contract("scaling distribution takes no bases"));
            }
            Parameterization::Svd => {
                if bases.len() != layout.num_layers() {
                    return Err(Error::contract(format!(
                        "{} bases for {} layers",
                        bases.len(),
                        layout.num_layers()
                    )));
                }
                for (l, (basis, slot)) in bases.iter().zip(layout.layers()).enumerate() {
                    if basis.shape() != (slot.fan_in, slot.fan_in) {
                        return Err(Error::contract(format!(
                            "basis {l} has shape {:?}, expected {}x{}",
                            basis.shape(),
                            slot.fan_in,
                            slot.fan_in
                        )));
                    }
                    let err = basis
                        .t_matmul(basis)?
                        .max_abs_diff(&DenseMatrix::identity(slot.fan_in));
                    if err > ORTHOGONALITY_TOL {
                        return Err(Error::contract(format!(
                            "basis {l} is not orthogonal (error {err:e})"
                        )));
                    }
                }
            }
            Parameterization::Scaling => {}
        }
        check_clip(clip)?;
        Ok(Self {
            kind,
            layout,
            mean,
            raw,
            bases,
            law,
            clip,
        })
    }

    pub fn kind(&self) -> Parameterization {
        self.kind
    }

    pub fn layout(&self) -> &WeightLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn bases(&self) -> &[DenseMatrix<f64>] {
        &self.bases
    }

    pub fn law(&self) -> Law {
        self.law
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    /// `φ = softplus(u)`.
    pub fn scales(&self) -> Vec<f64> {
        self.raw.iter().map(|&u| softplus(u)).collect()
    }

    pub fn set_raw(&mut self, raw: Vec<f64>) -> Result<()> {
        self.layout.check_len(raw.len(), "raw scales")?;
        self.raw = raw;
        Ok(())
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }

    pub(crate) fn mean_mut(&mut self) -> &mut [f64] {
        &mut self.mean
    }

    /// Clip level `C ≥ 0` applied to the scaled latent `φ ⊙ z`; `∞` disables it.
    pub fn with_clip(mut self, clip: f64) -> Result<Self> {
        check_clip(clip)?;
        self.clip = clip;
        Ok(self)
    }

    pub fn with_law(mut self, law: Law) -> Self {
        self.law = law;
        self
    }

    /// Draws `d` latent values from this distribution's law.
    pub fn sample_z(&self, stream: &mut RandomStream) -> Vec<f64> {
        let mut z = vec![0.0; self.dim()];
        stream.fill_with(self.law, &mut z);
        z
    }

    /// Maps a latent draw `z` to a weight vector.
    pub fn realize(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.realize_with(z, &self.scales())
    }

    /// [`Self::realize`] with precomputed scales `φ`.
    pub(crate) fn realize_with(&self, z: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
        self.layout.check_len(z.len(), "latent draw")?;
        let c = self.clip;
        let latent: Vec<f64> = phi
            .iter()
            .zip(z)
            .map(|(&p, &zk)| (p * zk).clamp(-c, c))
            .collect();
        let mut w = self.mean.clone();
        match self.kind {
            Parameterization::Scaling => {
                w.iter_mut().zip(&latent).for_each(|(a, b)| *a += b);
            }
            Parameterization::Svd => {
                for (slot, basis) in self.layout.layers().iter().zip(&self.bases) {
                    let r = slot.weight_range();
                    matmul_into(
                        basis.as_slice(),
                        &latent[r.clone()],
                        &mut w[r],
                        slot.fan_in,
                        slot.fan_in,
                        slot.fan_out,
                    );
                    if let Some(br) = slot.bias_range() {
                        for i in br {
                            w[i] += latent[i];
                        }
                    }
                }
            }
        }
        Ok(w)
    }

    /// Pulls a loss gradient with respect to the realized weights back to
    /// the raw scale parameters `u`, for the same latent draw `z`.
    pub fn pullback(&self, z: &[f64], grad_w: &[f64]) -> Result<Vec<f64>> {
        let phi = self.scales();
        let slope: Vec<f64> = self.raw.iter().map(|&u| sigmoid(u)).collect();
        self.pullback_with(z, grad_w, &phi, &slope)
    }

    /// [`Self::pullback`] with precomputed `φ` and `dφ/du = sigmoid(u)`.
    pub(crate) fn pullback_with(
        &self,
        z: &[f64],
        grad_w: &[f64],
        phi: &[f64],
        slope: &[f64],
    ) -> Result<Vec<f64>> {
        self.layout.check_len(z.len(), "latent draw")?;
        self.layout.check_len(grad_w.len(), "weight gradient")?;
        let grad_latent = match self.kind {
            Parameterization::Scaling => grad_w.to_vec(),
            Parameterization::Svd => {
                let mut g = vec![0.0; grad_w.len()];
                for (slot, basis) in self.layout.layers().iter().zip(&self.bases) {
                    let r = slot.weight_range();
                    t_matmul_into(
                        basis.as_slice(),
                        &grad_w[r.clone()],
                        &mut g[r],
                        slot.fan_in,
                        slot.fan_in,
                        slot.fan_out,
                    );
                    if let Some(br) = slot.bias_range() {
                        for i in br {
                            g[i] = grad_w[i];
                        }
                    }
                }
                g
            }
        };
        Ok(grad_latent
            .iter()
            .zip(z)
            .zip(phi.iter().zip(slope))
            .map(|((&g, &zk), (&p, &s))| {
                if (p * zk).abs() >= self.clip {
                    0.0
                } else {
                    g * zk * s
                }
            })
            .collect())
    }
}

fn check_clip(clip: f64) -> Result<()> {
    if clip.is_nan() || clip < 0.0 {
        return Err(Error::contract(format!("clip level {clip} must be >= 0")));
    }
    Ok(())
}

/// `H(φ) = (1/d) Σ log(φ_k²)`.
pub fn entropy_proxy(dist: &WeightDistribution) -> f64 {
    entropy_proxy_with(dist, EntropyFunction::Log)
}

pub fn entropy_proxy_with(dist: &WeightDistribution, g: EntropyFunction) -> f64 {
    let d = dist.dim() as f64;
    dist.raw.iter().map(|&u| g.value(softplus(u))).sum::<f64>() / d
}

/// `∂H/∂u`, through the softplus link.
pub fn entropy_gradient(dist: &WeightDistribution) -> Vec<f64> {
    entropy_gradient_with(dist, EntropyFunction::Log)
}

/// Entropy value and gradient from precomputed `φ` and `sigmoid(u)`.
pub(crate) fn entropy_terms(phi: &[f64], slope: &[f64], g: EntropyFunction) -> (f64, Vec<f64>) {
    let d = phi.len() as f64;
    let value = phi.iter().map(|&p| g.value(p)).sum::<f64>() / d;
    let grad = phi
        .iter()
        .zip(slope)
        .map(|(&p, &s)| g.slope(p) * s / d)
        .collect();
    (value, grad)
}

pub fn entropy_gradient_with(dist: &WeightDistribution, g: EntropyFunction) -> Vec<f64> {
    let d = dist.dim() as f64;
    dist.raw
        .iter()
        .map(|&u| g.slope(softplus(u)) * sigmoid(u) / d)
        .collect()
}

/// Uniform mixture of weight distributions sharing one layout.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleDistribution {
    members: Vec<WeightDistribution>,
}

impl EnsembleDistribution {
    pub fn new(members: Vec<WeightDistribution>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::contract("ensemble needs at least one member"))?;
        if members.iter().any(|m| m.layout != first.layout) {
            return Err(Error::contract("ensemble members must share one layout"));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[WeightDistribution] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn realize(&self, member: usize, z: &[f64]) -> Result<Vec<f64>> {
        self.members
            .get(member)
            .ok_or_else(|| {
                Error::contract(format!(
                    "member {member} out of range for ensemble of {}",
                    self.members.len()
                ))
            })?
            .realize(z)
    }

    /// Draws the mixture component `π ∼ U({0..m})`.
    pub fn sample_member(&self, stream: &mut RandomStream) -> usize {
        stream.index(self.members.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Head, NetworkSpec};
    use crate::numerics::SQRT_3;
    use proptest::prelude::*;

    fn small_layout(bias: bool) -> WeightLayout {
        NetworkSpec {
            input_dim: 3,
            hidden: vec![4],
            activation: Activation::Relu,
            head: Head::SquaredError,
            use_bias: bias,
        }
        .layout()
    }

    fn identity_bases(layout: &WeightLayout) -> Vec<DenseMatrix<f64>> {
        layout
            .layers()
            .iter()
            .map(|s| DenseMatrix::identity(s.fan_in))
            .collect()
    }

    /// A fixed non-trivial rotation per layer.
    fn rotation_bases(layout: &WeightLayout) -> Vec<DenseMatrix<f64>> {
        layout
            .layers()
            .iter()
            .map(|s| {
                let mut m = DenseMatrix::identity(s.fan_in);
                if s.fan_in >= 2 {
                    let (c, sn) = (0.6, 0.8);
                    m[(0, 0)] = c;
                    m[(0, 1)] = -sn;
                    m[(1, 0)] = sn;
                    m[(1, 1)] = c;
                }
                m
            })
            .collect()
    }

    #[test]
    fn peaked_distribution_returns_mean() {
        let layout = small_layout(true);
        let mean: Vec<f64> = (0..layout.dim()).map(|i| i as f64 * 0.1).collect();
        let dist = WeightDistribution::scaling(layout.clone(), mean.clone(), -40.0, Law::UniformSym)
            .unwrap();
        let z = vec![1.5; layout.dim()];
        let w = dist.realize(&z).unwrap();
        assert!(w.iter().zip(&mean).all(|(a, b)| (a - b).abs() <= 1e-9));
    }

    #[test]
    fn scaling_direct_example() {
        let layout = NetworkSpec::linear(2, Head::SquaredError).layout();
        let raw = vec![softplus_inv(2.0), softplus_inv(3.0)];
        let dist = WeightDistribution::from_parts(
            Parameterization::Scaling,
            layout,
            vec![1.0, 1.0],
            raw,
            vec![],
            Law::UniformSym,
            f64::INFINITY,
        )
        .unwrap();
        let w = dist.realize(&[1.0, -1.0]).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-12 && (w[1] + 2.0).abs() < 1e-12);
    }

    fn softplus_inv(y: f64) -> f64 {
        crate::numerics::softplus_inverse(y)
    }

    #[test]
    fn zero_clip_gives_mean() {
        let layout = small_layout(true);
        let mean = vec![0.3; layout.dim()];
        let svd = WeightDistribution::svd(
            layout.clone(),
            mean.clone(),
            rotation_bases(&layout),
            2.0,
            Law::StandardNormal,
        )
        .unwrap()
        .with_clip(0.0)
        .unwrap();
        let mut rs = RandomStream::new(1, Law::StandardNormal);
        let z = svd.sample_z(&mut rs);
        assert_eq!(svd.realize(&z).unwrap(), mean);
        let sc = WeightDistribution::scaling(layout, mean.clone(), 2.0, Law::UniformSym)
            .unwrap()
            .with_clip(0.0)
            .unwrap();
        assert_eq!(sc.realize(&z).unwrap(), mean);
        assert!(sc.clone().with_clip(-1.0).is_err());
    }

    #[test]
    fn entropy_values() {
        let layout = NetworkSpec::linear(2, Head::SquaredError).layout();
        let mk = |phis: [f64; 2]| {
            WeightDistribution::from_parts(
                Parameterization::Scaling,
                layout.clone(),
                vec![0.0; 2],
                phis.iter().map(|&p| softplus_inv(p)).collect(),
                vec![],
                Law::UniformSym,
                f64::INFINITY,
            )
            .unwrap()
        };
        assert!(entropy_proxy(&mk([1.0, 1.0])).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((entropy_proxy(&mk([e, e])) - 2.0).abs() < 1e-12);
        // exact box volume of U([-√3,√3]²) scaled by (1, 2)
        let exact = (2.0 * SQRT_3 * 1.0f64).ln() + (2.0 * SQRT_3 * 2.0f64).ln();
        let d = 2.0;
        let from_exact = (2.0 / d) * (exact - d * (2.0 * SQRT_3).ln());
        assert!((entropy_proxy(&mk([1.0, 2.0])) - from_exact).abs() < 1e-12);
        assert!((from_exact - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_gradient_direct_and_finite_difference() {
        let layout = small_layout(true);
        let mut rs = RandomStream::new(12, Law::StandardNormal);
        let raw: Vec<f64> = rs.sample_z(layout.dim()).iter().map(|v| 2.0 * v).collect();
        let mut dist = WeightDistribution::scaling(layout.clone(), vec![0.0; layout.dim()], 0.0, Law::UniformSym).unwrap();
        dist.set_raw(raw.clone()).unwrap();
        for g_fn in [EntropyFunction::Log, EntropyFunction::Sqrt] {
            let g = entropy_gradient_with(&dist, g_fn);
            assert!(g.iter().all(|&v| v > 0.0));
            for k in 0..layout.dim() {
                let h = 1e-6;
                let mut p = dist.clone();
                p.raw_mut()[k] += h;
                let mut m = dist.clone();
                m.raw_mut()[k] -= h;
                let fd = (entropy_proxy_with(&p, g_fn) - entropy_proxy_with(&m, g_fn)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-8), "{k}: {fd} vs {}", g[k]);
            }
        }
        // φ_k = 1 gives (2/d)·sigmoid(u_k)
        dist.set_raw(vec![softplus_inv(1.0); layout.dim()]).unwrap();
        let g = entropy_gradient(&dist);
        let want = 2.0 / layout.dim() as f64 * sigmoid(softplus_inv(1.0));
        assert!(g.iter().all(|&v| (v - want).abs() < 1e-15));
    }

    #[test]
    fn pullback_matches_finite_difference_of_linear_functional() {
        // L(w) = c·w has gradient c; check ∂L/∂u for both kinds with clipping
        let layout = small_layout(true);
        let mut rs = RandomStream::new(99, Law::StandardNormal);
        let c = rs.sample_z(layout.dim());
        let z = rs.sample_z(layout.dim());
        let raw: Vec<f64> = rs.sample_z(layout.dim());
        for (kind, clip) in [
            (Parameterization::Scaling, f64::INFINITY),
            (Parameterization::Svd, f64::INFINITY),
            (Parameterization::Svd, 0.7),
        ] {
            let bases = match kind {
                Parameterization::Svd => rotation_bases(&layout),
                Parameterization::Scaling => vec![],
            };
            let dist = WeightDistribution::from_parts(
                kind,
                layout.clone(),
                vec![0.1; layout.dim()],
                raw.clone(),
                bases,
                Law::StandardNormal,
                clip,
            )
            .unwrap();
            let g = dist.pullback(&z, &c).unwrap();
            let objective = |d: &WeightDistribution| -> f64 {
                d.realize(&z).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
            };
            for k in 0..layout.dim() {
                let h = 1e-6;
                let mut p = dist.clone();
                p.raw_mut()[k] += h;
                let mut m = dist.clone();
                m.raw_mut()[k] -= h;
                let fd = (objective(&p) - objective(&m)) / (2.0 * h);
                // skip coordinates sitting on the clamp kink
                let phi_z = (softplus(raw[k]) * z[k]).abs();
                if (phi_z - clip).abs() < 1e-4 {
                    continue;
                }
                assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1.0), "{kind:?} {k}");
            }
        }
    }

    #[test]
    fn ensemble_member_selection() {
        let layout = small_layout(false);
        let members: Vec<_> = (0..3)
            .map(|j| {
                WeightDistribution::scaling(layout.clone(), vec![j as f64; layout.dim()], -50.0, Law::UniformSym)
                    .unwrap()
            })
            .collect();
        let ens = EnsembleDistribution::new(members.clone()).unwrap();
        let z = vec![1.0; layout.dim()];
        for j in 0..3 {
            let w = ens.realize(j, &z).unwrap();
            assert!(w.iter().all(|&v| (v - j as f64).abs() < 1e-9));
        }
        assert!(ens.realize(3, &z).is_err());

        let single = EnsembleDistribution::new(vec![members[1].clone()]).unwrap();
        assert_eq!(single.realize(0, &z).unwrap(), members[1].realize(&z).unwrap());

        let mut rs = RandomStream::new(5, Law::UniformSym);
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            counts[ens.sample_member(&mut rs)] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() <= 0.02);
        }
        assert!(EnsembleDistribution::new(vec![]).is_err());
    }

    #[test]
    fn rejects_non_orthogonal_basis() {
        let layout = small_layout(false);
        let mut bases = identity_bases(&layout);
        bases[0][(0, 1)] = 0.5;
        assert!(WeightDistribution::svd(layout, vec![0.0; 16], bases, -5.0, Law::UniformSym).is_err());
    }

    proptest! {
        #[test]
        fn identity_bases_reduce_to_scaling(seed in any::<u64>(), u0 in -3.0f64..2.0) {
            let layout = small_layout(true);
            let mut rs = RandomStream::new(seed, Law::StandardNormal);
            let mean = rs.sample_z(layout.dim());
            let z = rs.sample_z(layout.dim());
            let sc = WeightDistribution::scaling(layout.clone(), mean.clone(), u0, Law::UniformSym).unwrap();
            let sv = WeightDistribution::svd(layout.clone(), mean, identity_bases(&layout), u0, Law::UniformSym).unwrap();
            prop_assert_eq!(sc.realize(&z).unwrap(), sv.realize(&z).unwrap());
        }

        #[test]
        fn uniform_scaling_stays_in_box(seed in any::<u64>()) {
            let layout = small_layout(true);
            let mut rs = RandomStream::new(seed, Law::UniformSym);
            let mean = rs.sample_z(layout.dim());
            let mut dist = WeightDistribution::scaling(layout.clone(), mean.clone(), 0.0, Law::UniformSym).unwrap();
            dist.set_raw(rs.sample_z(layout.dim())).unwrap();
            let z = dist.sample_z(&mut rs);
            let w = dist.realize(&z).unwrap();
            for ((wk, mk), pk) in w.iter().zip(&mean).zip(dist.scales()) {
                prop_assert!((wk - mk).abs() <= SQRT_3 * pk + 1e-12);
            }
        }

        #[test]
        fn realization_is_linear_in_z(seed in any::<u64>(), a in -2.0f64..2.0) {
            let layout = small_layout(true);
            let mut rs = RandomStream::new(seed, Law::StandardNormal);
            let dist = WeightDistribution::svd(layout.clone(), rs.sample_z(layout.dim()), rotation_bases(&layout), 0.3, Law::StandardNormal).unwrap();
            let z1 = rs.sample_z(layout.dim());
            let z2 = rs.sample_z(layout.dim());
            let mix: Vec<f64> = z1.iter().zip(&z2).map(|(p, q)| a * p + q).collect();
            let w1 = dist.realize(&z1).unwrap();
            let w2 = dist.realize(&z2).unwrap();
            let wm = dist.realize(&mix).unwrap();
            for k in 0..layout.dim() {
                let m = dist.mean()[k];
                let want = a * (w1[k] - m) + (w2[k] - m) + m;
                prop_assert!((wm[k] - want).abs() < 1e-10);
            }
        }

        #[test]
        fn scaling_all_scales_shifts_entropy(c in 1.01f64..5.0) {
            let layout = small_layout(true);
            let mut rs = RandomStream::new(3, Law::StandardNormal);
            let raw = rs.sample_z(layout.dim());
            let mut dist = WeightDistribution::scaling(layout.clone(), vec![0.0; layout.dim()], 0.0, Law::UniformSym).unwrap();
            dist.set_raw(raw).unwrap();
            let scaled: Vec<f64> = dist.scales().iter().map(|p| softplus_inv(c * p)).collect();
            let mut bigger = dist.clone();
            bigger.set_raw(scaled).unwrap();
            prop_assert!((entropy_proxy(&bigger) - entropy_proxy(&dist) - 2.0 * c.ln()).abs() < 1e-9);
        }
    }
}

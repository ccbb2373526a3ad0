use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Law of the latent sampling variable. Both have mean 0 and unit variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    StandardNormal,
    /// Uniform on `[-√3, √3]`.
    UniformSym,
}

pub const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Seeded random source.
///
/// Backed by ChaCha8, whose output stream is fixed by the seed on every
/// platform. Normal draws use the ziggurat sampler of `rand_distr`.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    law: Law,
    rng: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to derive child seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64, law: Law) -> Self {
        Self {
            seed,
            law,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `(seed, key)`; does not advance `self`.
    pub fn derive(&self, key: u64) -> Self {
        Self::new(mix(self.seed ^ mix(key)), self.law)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn law(&self) -> Law {
        self.law
    }

    pub fn with_law(mut self, law: Law) -> Self {
        self.law = law;
        self
    }

    /// One draw from the stream's law.
    #[inline]
    pub fn next_z(&mut self) -> f64 {
        self.draw(self.law)
    }

    /// One draw from `law`, regardless of the stream's own law.
    #[inline]
    pub fn draw(&mut self, law: Law) -> f64 {
        match law {
            Law::StandardNormal => self.rng.sample(StandardNormal),
            Law::UniformSym => SQRT_3 * (2.0 * self.rng.random::<f64>() - 1.0),
        }
    }

    /// `d` fresh independent draws.
    pub fn sample_z(&mut self, d: usize) -> Vec<f64> {
        let mut z = vec![0.0; d];
        self.fill_z(&mut z);
        z
    }

    pub fn fill_z(&mut self, out: &mut [f64]) {
        self.fill_with(self.law, out);
    }

    pub fn fill_with(&mut self, law: Law, out: &mut [f64]) {
        for v in out {
            *v = self.draw(law);
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}

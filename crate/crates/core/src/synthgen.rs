//! Seeded synthetic brain/image datasets with a known shared latent.
//!
//! Every class owns a unit latent `z`. Brain trials are a fixed random
//! channel mixing of `z`, modulated by a few early oscillatory bursts, plus
//! white noise. "Aligned" image embeddings are `z` with a little jitter;
//! "misaligned" ones blend that with an odd nonlinearity of a random
//! rotation of it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preproc::EpochSet;
use crate::retrieval::EmbeddingSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    Aligned,
    Misaligned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Classes whose trials form the test set.
    pub n_classes: usize,
    /// Extra classes seen only in training. With none, training uses the
    /// first `train_repetitions` trials of the test classes instead.
    pub train_classes: usize,
    pub train_repetitions: usize,
    pub test_repetitions: usize,
    pub embed_dim: usize,
    pub channels: usize,
    pub samples: usize,
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    pub alignment_mode: AlignmentMode,
    pub misalignment_strength: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 64,
            train_classes: 0,
            train_repetitions: 4,
            test_repetitions: 4,
            embed_dim: 32,
            channels: 16,
            samples: 64,
            sample_rate_hz: 250.0,
            noise_std: 1.0,
            alignment_mode: AlignmentMode::Aligned,
            misalignment_strength: 1.0,
            seed: 0,
        }
    }
}

/// Bursts shaping the class signal over time.
const COMPONENTS: usize = 3;
/// Jitter added to the latent to form aligned image embeddings, relative to
/// a unit vector.
const IMAGE_JITTER: f64 = 0.05;
/// Frequency of the misaligning nonlinearity, in units of the typical
/// coordinate size `1/√d`.
const WARP: f64 = 4.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.train_repetitions == 0 || self.test_repetitions == 0 {
            return bad("repetition counts must be positive".into());
        }
        if self.embed_dim == 0 || self.channels == 0 || self.samples < 2 {
            return bad("embed_dim and channels must be positive and samples at least 2".into());
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return bad(format!("sample rate {}", self.sample_rate_hz));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {}", self.noise_std));
        }
        if !(0.0..=1.0).contains(&self.misalignment_strength) {
            return bad(format!(
                "misalignment_strength {} outside [0, 1]",
                self.misalignment_strength
            ));
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.n_classes + self.train_classes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub train: EpochSet<f64>,
    pub test: EpochSet<f64>,
    pub aligned: EmbeddingSet<f64>,
    pub misaligned: EmbeddingSet<f64>,
    pub mode: AlignmentMode,
}

impl SynthDataset {
    /// Embedding set selected by the configured mode.
    pub fn targets(&self) -> &EmbeddingSet<f64> {
        match self.mode {
            AlignmentMode::Aligned => &self.aligned,
            AlignmentMode::Misaligned => &self.misaligned,
        }
    }

    /// Ids of the test classes, `0..n_classes`.
    pub fn test_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.test.labels().to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Haar-random orthogonal `d × d` matrix (Gram–Schmidt on Gaussian rows).
fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v = gaussian_vec(rng, d);
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q.concat()
}

/// Early bursts: Gaussian bumps centred in the first 40% of the epoch,
/// each carrying a theta-to-alpha oscillation.
fn envelopes(rng: &mut ChaCha8Rng, t: usize, fs: f64) -> Vec<Vec<f64>> {
    (0..COMPONENTS)
        .map(|_| {
            let centre = rng.random_range(0.12..0.3) * t as f64;
            let width = 0.06 * t as f64;
            let freq = rng.random_range(5.0..11.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (0..t)
                .map(|s| {
                    let x = s as f64;
                    let bump = (-0.5 * ((x - centre) / width).powi(2)).exp();
                    bump * (std::f64::consts::TAU * freq * x / fs + phase).cos()
                })
                .collect()
        })
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let (d, c, t) = (cfg.embed_dim, cfg.channels, cfg.samples);
    let k_total = cfg.total_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let latents: Vec<Vec<f64>> = (0..k_total).map(|_| unit(gaussian_vec(&mut rng, d))).collect();
    let mixing: Vec<Vec<f64>> = (0..COMPONENTS).map(|_| gaussian_vec(&mut rng, c * d)).collect();
    let env = envelopes(&mut rng, t, cfg.sample_rate_hz);
    let rotation = random_rotation(&mut rng, d);

    let aligned: Vec<f64> = latents
        .iter()
        .flat_map(|z| {
            let jitter = gaussian_vec(&mut rng, d);
            z.iter()
                .zip(jitter)
                .map(|(a, e)| a + IMAGE_JITTER / (d as f64).sqrt() * e)
                .collect::<Vec<_>>()
        })
        .collect();
    let gamma = cfg.misalignment_strength;
    let scale = WARP * (d as f64).sqrt();
    let misaligned: Vec<f64> = if gamma == 0.0 {
        aligned.clone()
    } else {
        aligned
            .chunks(d)
            .flat_map(|a| {
                (0..d)
                    .map(|i| {
                        let r: f64 = (0..d).map(|j| rotation[i * d + j] * a[j]).sum();
                        (1.0 - gamma) * a[i] + gamma * (scale * r).sin() / (d as f64).sqrt()
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    };

    // noiseless class templates, C × T each
    let templates: Vec<Vec<f64>> = latents
        .iter()
        .map(|z| {
            let mut x = vec![0.0; c * t];
            for (m, e) in mixing.iter().zip(&env) {
                for ch in 0..c {
                    let w: f64 = (0..d).map(|j| m[ch * d + j] * z[j]).sum();
                    for (s, &v) in e.iter().enumerate() {
                        x[ch * t + s] += w * v;
                    }
                }
            }
            x
        })
        .collect();

    let channel_names = EpochSet::<f64>::default_channel_names(c);
    let mut trials = |classes: std::ops::Range<usize>, reps: std::ops::Range<usize>| -> Result<EpochSet<f64>> {
        let mut data = Vec::new();
        let (mut labels, mut repetitions) = (Vec::new(), Vec::new());
        for r in reps {
            for k in classes.clone() {
                data.extend(templates[k].iter().map(|v| v + cfg.noise_std * Distribution::<f64>::sample(&StandardNormal, &mut rng)));
                labels.push(k as u64);
                repetitions.push(r as u32);
            }
        }
        let n = labels.len();
        EpochSet::new(Tensor::new([n, c, t], data)?, cfg.sample_rate_hz, labels, repetitions, channel_names.clone())
    };
    let k = cfg.n_classes;
    let (train, test) = if cfg.train_classes > 0 {
        let train = trials(k..k_total, 0..cfg.train_repetitions)?;
        (train, trials(0..k, 0..cfg.test_repetitions)?)
    } else {
        let train = trials(0..k, 0..cfg.train_repetitions)?;
        let reps = cfg.train_repetitions..cfg.train_repetitions + cfg.test_repetitions;
        (train, trials(0..k, reps)?)
    };

    let ids: Vec<u64> = (0..k_total as u64).collect();
    Ok(SynthDataset {
        train,
        test,
        aligned: EmbeddingSet::new(Tensor::new([k_total, d], aligned)?, ids.clone())?,
        misaligned: EmbeddingSet::new(Tensor::new([k_total, d], misaligned)?, ids)?,
        mode: cfg.alignment_mode,
    })
}

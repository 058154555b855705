//! Gradient attribution of trained encoders in time, frequency and
//! electrode space.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::encoders::{projection_activations, EncoderParams, ProjectionGeometry};
use crate::error::{Error, Result};
use crate::evalstats::{percentile, summarize, unpaired_ttest};
use crate::fft;
use crate::preproc::EpochSet;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

pub const SOURCE_LAYER: &str = "projection.input";

/// Non-negative `C × T` saliency in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub values: Tensor<f64>,
    pub source_layer: String,
    pub epoch_id: u64,
    /// Set when every clipped gradient-activation product was zero and the
    /// map is all zeros.
    pub zero_gradient: bool,
}

impl AttributionMap {
    pub fn n_channels(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn n_samples(&self) -> usize {
        self.values.dims()[1]
    }
}

/// Piecewise-linear resampling of `values` (placed at `centres`) onto
/// sample indices `0..len`, holding the end values beyond the first and last
/// centre.
fn interpolate(centres: &[f64], values: &[f64], len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| {
            let x = t as f64;
            let j = centres.partition_point(|&c| c <= x);
            if j == 0 {
                values[0]
            } else if j == centres.len() {
                values[values.len() - 1]
            } else {
                let (c0, c1) = (centres[j - 1], centres[j]);
                let w = (x - c0) / (c1 - c0);
                values[j - 1] + w * (values[j] - values[j - 1])
            }
        })
        .collect()
}

/// Saliency of `epoch` for the cosine similarity between its embedding and
/// `target`.
///
/// Gradients at the input of the final projection weight the activations
/// there element by element; the products are clipped to positive values,
/// averaged over feature maps per time step, min-max normalized and
/// interpolated back to the input time axis. Every channel
/// receives the same time course because the spatial axis has already been
/// collapsed at that layer.
pub fn gradcam<S: Scalar>(
    params: &EncoderParams<S>,
    epoch: &Tensor<S>,
    target: &[S],
    epoch_id: u64,
) -> Result<AttributionMap> {
    let (features, steps, centres) = match params.config.projection_geometry() {
        ProjectionGeometry::Temporal {
            features,
            steps,
            time_centres,
        } => (features, steps, time_centres),
        ProjectionGeometry::Flat { .. } => {
            return Err(Error::Capability(format!(
                "{} encoders keep no time axis at the projection layer",
                params.config.architecture.family()
            )))
        }
    };
    let d = params.config.embed_dim;
    if target.len() != d {
        return Err(Error::shape(format!(
            "target has {} dimensions, encoder embeds into {d}",
            target.len()
        )));
    }
    let mut tape = Tape::new();
    let (projection, embedding) = projection_activations(params, &mut tape, epoch)?;
    let target = tape.constant(Tensor::new([1, d], target.to_vec())?);
    let sim = tape.cosine_similarity_matrix(embedding, target)?;
    let objective = tape.sum(sim);
    tape.backward(objective)?;
    let grad = tape.grad(projection).expect("projection depends on the input");
    let act = tape.value(projection).data();

    let per_step: Vec<f64> = (0..steps)
        .map(|p| {
            (0..features)
                .map(|f| (grad[f * steps + p] * act[f * steps + p]).as_f64().max(0.0))
                .sum::<f64>()
                / features as f64
        })
        .collect();
    let hi = per_step.iter().copied().fold(0.0, f64::max);
    let lo = per_step.iter().copied().fold(f64::INFINITY, f64::min);
    let (c, t) = (epoch.dims()[0], epoch.dims()[1]);
    if hi <= 0.0 {
        return Ok(AttributionMap {
            values: Tensor::zeros([c, t]),
            source_layer: SOURCE_LAYER.into(),
            epoch_id,
            zero_gradient: true,
        });
    }
    let normalized: Vec<f64> = if hi > lo {
        per_step.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; steps]
    };
    let course = interpolate(&centres, &normalized, t);
    let values = Tensor::from_fn([c, t], |k| course[k % t].clamp(0.0, 1.0));
    Ok(AttributionMap {
        values,
        source_layer: SOURCE_LAYER.into(),
        epoch_id,
        zero_gradient: false,
    })
}

/// Attribution maps for every epoch against its paired image embedding.
pub fn gradcam_epochs<S: Scalar>(
    params: &EncoderParams<S>,
    epochs: &EpochSet<S>,
    targets: &crate::retrieval::EmbeddingSet<S>,
) -> Result<Vec<AttributionMap>> {
    use rayon::prelude::*;
    let pos = targets.positions();
    (0..epochs.len())
        .into_par_iter()
        .map(|i| {
            let label = epochs.labels()[i];
            let row = *pos
                .get(&label)
                .ok_or_else(|| Error::Data(format!("no target embedding for label {label}")))?;
            gradcam(params, &epochs.epoch(i), targets.row(row), label)
        })
        .collect()
}

/// Counts of above-threshold attribution values per time index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdHistogram {
    pub percentile: f64,
    /// One threshold per group (model seed).
    pub thresholds: Vec<f64>,
    pub counts: Vec<u64>,
}

impl ThresholdHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of the counted mass falling before time index `end`.
    pub fn mass_before(&self, end: usize) -> f64 {
        let early: u64 = self.counts[..end.min(self.counts.len())].iter().sum();
        early as f64 / self.total().max(1) as f64
    }
}

/// Histogram over time of values strictly above the `p`-th percentile.
///
/// Each group holds the maps of one model seed; its threshold is taken over
/// all of that group's values, and counts are pooled across groups.
pub fn threshold_histogram(groups: &[Vec<AttributionMap>], p: f64) -> Result<ThresholdHistogram> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::param(format!("percentile {p} outside (0, 100)")));
    }
    let first = groups
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::param("no attribution maps to histogram"))?;
    let t = first.n_samples();
    if let Some(m) = groups.iter().flatten().find(|m| m.n_samples() != t) {
        return Err(Error::shape(format!(
            "maps disagree on length: {} and {t} samples (epoch {})",
            m.n_samples(),
            m.epoch_id
        )));
    }
    let mut counts = vec![0u64; t];
    let mut thresholds = Vec::with_capacity(groups.len());
    for group in groups.iter().filter(|g| !g.is_empty()) {
        let pooled: Vec<f64> = group.iter().flat_map(|m| m.values.data().iter().copied()).collect();
        let threshold = percentile(&pooled, p)?;
        for m in group {
            for (k, &v) in m.values.data().iter().enumerate() {
                if v > threshold {
                    counts[k % t] += 1;
                }
            }
        }
        thresholds.push(threshold);
    }
    Ok(ThresholdHistogram {
        percentile: p,
        thresholds,
        counts,
    })
}

/// One-sided periodogram `S[k] = |X_k|² / N`, `k = 0..=N/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub n: usize,
}

impl Psd {
    /// How many two-sided bins bin `k` stands for (1 at DC and at an
    /// even-length Nyquist bin, 2 elsewhere).
    pub fn multiplicity(&self, k: usize) -> f64 {
        if k == 0 || (self.n.is_multiple_of(2) && k == self.n / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// Two-sided sum of `S`, equal to `Σ x[n]²`.
    pub fn total_energy(&self) -> f64 {
        self.power
            .iter()
            .enumerate()
            .map(|(k, p)| p * self.multiplicity(k))
            .sum()
    }
}

pub fn periodogram(x: &[f64], fs: f64) -> Result<Psd> {
    let n = x.len();
    if n < 2 {
        return Err(Error::param(format!("periodogram needs at least 2 samples, got {n}")));
    }
    let spectrum: Vec<Complex<f64>> = fft::fft_real(x);
    let bins = n / 2 + 1;
    Ok(Psd {
        frequencies: (0..bins).map(|k| k as f64 * fs / n as f64).collect(),
        power: spectrum[..bins].iter().map(|c| c.norm_sqr() / n as f64).collect(),
        n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

/// Contiguous frequency bands covering `[0, Nyquist]`; the last band is
/// closed at the top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub bands: Vec<Band>,
}

impl BandSpec {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::param("no bands given"));
        }
        if bands[0].lo_hz != 0.0 {
            return Err(Error::param(format!("first band starts at {} Hz, not 0", bands[0].lo_hz)));
        }
        for b in &bands {
            if !(b.lo_hz < b.hi_hz) {
                return Err(Error::param(format!("band {} is empty", b.name)));
            }
        }
        for w in bands.windows(2) {
            if w[0].hi_hz != w[1].lo_hz {
                return Err(Error::param(format!(
                    "bands {} and {} are not contiguous",
                    w[0].name, w[1].name
                )));
            }
        }
        Ok(Self { bands })
    }

    /// Delta, theta, alpha, beta and gamma, the last ending at Nyquist.
    pub fn standard(fs: f64) -> Self {
        let nyquist = fs / 2.0;
        let band = |name: &str, lo: f64, hi: f64| Band {
            name: name.into(),
            lo_hz: lo,
            hi_hz: hi,
        };
        Self {
            bands: vec![
                band("delta", 0.0, 4.0),
                band("theta", 4.0, 8.0),
                band("alpha", 8.0, 12.0),
                band("beta", 12.0, 30.0),
                band("gamma", 30.0, nyquist.max(30.0 + f64::EPSILON)),
            ],
        }
    }

    fn index_of(&self, f: f64) -> Option<usize> {
        let last = self.bands.len() - 1;
        self.bands
            .iter()
            .position(|b| f >= b.lo_hz && f < b.hi_hz)
            .or_else(|| (f <= self.bands[last].hi_hz + 1e-9).then_some(last))
            .filter(|_| f >= 0.0)
    }

    pub fn names(&self) -> Vec<String> {
        self.bands.iter().map(|b| b.name.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEnergies {
    pub bands: Vec<String>,
    pub fractions: Vec<f64>,
}

impl BandEnergies {
    pub fn get(&self, band: &str) -> Option<f64> {
        self.bands.iter().position(|b| b == band).map(|i| self.fractions[i])
    }
}

/// Share of the total signal energy falling in each band.
pub fn band_energies(psd: &Psd, bands: &BandSpec) -> Result<BandEnergies> {
    let total = psd.total_energy();
    if !(total > 0.0) {
        return Err(Error::degenerate("spectrum has zero total power"));
    }
    let mut sums = vec![0.0; bands.bands.len()];
    for (k, (&f, &p)) in psd.frequencies.iter().zip(&psd.power).enumerate() {
        if let Some(b) = bands.index_of(f) {
            sums[b] += p * psd.multiplicity(k);
        }
    }
    Ok(BandEnergies {
        bands: bands.names(),
        fractions: sums.into_iter().map(|s| s / total).collect(),
    })
}

/// Band energies of a set of maps: per-channel periodograms averaged over
/// channels and maps, then integrated per band.
pub fn map_band_energies(maps: &[AttributionMap], fs: f64, bands: &BandSpec) -> Result<BandEnergies> {
    let first = maps.first().ok_or_else(|| Error::param("no attribution maps"))?;
    let t = first.n_samples();
    let mut mean: Option<Psd> = None;
    let mut count = 0usize;
    for m in maps {
        if m.n_samples() != t {
            return Err(Error::shape(format!("maps of {} and {t} samples", m.n_samples())));
        }
        for c in 0..m.n_channels() {
            let psd = periodogram(m.values.row(c), fs)?;
            match &mut mean {
                None => mean = Some(psd),
                Some(acc) => acc.power.iter_mut().zip(&psd.power).for_each(|(a, p)| *a += p),
            }
            count += 1;
        }
    }
    let mut psd = mean.expect("at least one channel");
    psd.power.iter_mut().for_each(|p| *p /= count as f64);
    band_energies(&psd, bands)
}

/// Mean attribution per channel over time and maps, normalized to sum 1.
pub fn electrode_aggregate(maps: &[AttributionMap], channels: &[String]) -> Result<Vec<(String, f64)>> {
    if maps.is_empty() {
        return Err(Error::param("no attribution maps to aggregate"));
    }
    let c = channels.len();
    if let Some(m) = maps.iter().find(|m| m.n_channels() != c) {
        return Err(Error::shape(format!(
            "map for epoch {} has {} channels, expected {c}",
            m.epoch_id,
            m.n_channels()
        )));
    }
    let mut sums = vec![0.0; c];
    for m in maps {
        for (ch, s) in sums.iter_mut().enumerate() {
            *s += m.values.row(ch).iter().sum::<f64>() / m.n_samples() as f64;
        }
    }
    let total: f64 = sums.iter().sum();
    if !(total > 0.0) {
        return Err(Error::degenerate("all attribution maps are zero"));
    }
    Ok(channels
        .iter()
        .cloned()
        .zip(sums.into_iter().map(|s| s / total))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandComparison {
    pub band: String,
    pub mean_a: f64,
    pub std_error_a: f64,
    pub mean_b: f64,
    pub std_error_b: f64,
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Per-band unpaired t-tests between two groups of per-seed band energies.
pub fn band_compare(a: &[BandEnergies], b: &[BandEnergies]) -> Result<Vec<BandComparison>> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Statistics(format!(
            "band comparison needs at least 2 seeds per condition, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let names = &a[0].bands;
    if let Some(e) = a.iter().chain(b).find(|e| &e.bands != names) {
        return Err(Error::Data(format!(
            "band sets differ: {:?} vs {:?}",
            names, e.bands
        )));
    }
    names
        .iter()
        .enumerate()
        .map(|(i, band)| {
            let xa: Vec<f64> = a.iter().map(|e| e.fractions[i]).collect();
            let xb: Vec<f64> = b.iter().map(|e| e.fractions[i]).collect();
            let (sa, sb) = (summarize(&xa)?, summarize(&xb)?);
            let test = unpaired_ttest(&xa, &xb)
                .map_err(|e| Error::Statistics(format!("band {band}: {e}")))?;
            Ok(BandComparison {
                band: band.clone(),
                mean_a: sa.mean,
                std_error_a: sa.std_error,
                mean_b: sb.mean,
                std_error_b: sb.std_error,
                t: test.t,
                p: test.p,
                df: test.df,
            })
        })
        .collect()
}

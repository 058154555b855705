use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::ms_to_samples;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub onset: usize,
    pub label: u64,
}

/// `C × T_total` continuous multichannel signal with stimulus events.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording<S> {
    pub channels: Vec<String>,
    pub samples: Tensor<S>,
    pub sample_rate_hz: f64,
    pub events: Vec<Event>,
}

impl<S: Scalar> Recording<S> {
    pub fn new(
        channels: Vec<String>,
        samples: Tensor<S>,
        sample_rate_hz: f64,
        events: Vec<Event>,
    ) -> Result<Self> {
        let &[c, t] = samples.dims() else {
            return Err(Error::shape(format!(
                "recording samples must be [C, T], got {:?}",
                samples.dims()
            )));
        };
        if channels.len() != c {
            return Err(Error::Data(format!("{} channel names for {c} channels", channels.len())));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::param(format!("sample rate {sample_rate_hz}")));
        }
        if let Some(e) = events.iter().find(|e| e.onset >= t) {
            return Err(Error::Range(format!(
                "event onset {} outside recording of {t} samples",
                e.onset
            )));
        }
        Ok(Self {
            channels,
            samples,
            sample_rate_hz,
            events,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.samples.dims()[0]
    }

    pub fn n_samples(&self) -> usize {
        self.samples.dims()[1]
    }

    pub fn channel(&self, c: usize) -> &[S] {
        self.samples.row(c)
    }
}

/// `n × C × T` epochs sharing one sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSet<S> {
    data: Tensor<S>,
    pub sample_rate_hz: f64,
    labels: Vec<u64>,
    repetitions: Vec<u32>,
    pub channels: Vec<String>,
}

impl<S: Scalar> EpochSet<S> {
    pub fn new(
        data: Tensor<S>,
        sample_rate_hz: f64,
        labels: Vec<u64>,
        repetitions: Vec<u32>,
        channels: Vec<String>,
    ) -> Result<Self> {
        let &[n, c, _] = data.dims() else {
            return Err(Error::shape(format!(
                "epochs must be [n, C, T], got {:?}",
                data.dims()
            )));
        };
        if labels.len() != n || repetitions.len() != n {
            return Err(Error::Data(format!(
                "{} labels and {} repetition indices for {n} epochs",
                labels.len(),
                repetitions.len()
            )));
        }
        if channels.len() != c {
            return Err(Error::Data(format!("{} channel names for {c} channels", channels.len())));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::param(format!("sample rate {sample_rate_hz}")));
        }
        Ok(Self {
            data,
            sample_rate_hz,
            labels,
            repetitions,
            channels,
        })
    }

    /// Names channels `ch0, ch1, …`.
    pub fn default_channel_names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("ch{i}")).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn n_samples(&self) -> usize {
        self.data.dims()[2]
    }

    pub fn data(&self) -> &Tensor<S> {
        &self.data
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn repetitions(&self) -> &[u32] {
        &self.repetitions
    }

    /// Epoch `i` as a `[C, T]` tensor.
    pub fn epoch(&self, i: usize) -> Tensor<S> {
        self.data.index_outer(i)
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            data: self.data.select_outer(rows),
            sample_rate_hz: self.sample_rate_hz,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            repetitions: rows.iter().map(|&r| self.repetitions[r]).collect(),
            channels: self.channels.clone(),
        }
    }

    /// Indices of epochs whose repetition index satisfies `keep`.
    pub fn rows_where(&self, keep: impl Fn(u64, u32) -> bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| keep(self.labels[i], self.repetitions[i]))
            .collect()
    }
}

/// One epoch per event covering `[start_ms, end_ms)` around the onset.
///
/// `T = round((end_ms − start_ms)/1000 · fs)`; the window starts
/// `round(start_ms/1000 · fs)` samples from the onset (negative for
/// pre-stimulus windows).
pub fn epoch_extract<S: Scalar>(rec: &Recording<S>, start_ms: f64, end_ms: f64) -> Result<EpochSet<S>> {
    if !(start_ms < end_ms) {
        return Err(Error::param(format!("empty window [{start_ms}, {end_ms}) ms")));
    }
    let fs = rec.sample_rate_hz;
    let len = ms_to_samples(end_ms - start_ms, fs);
    if len <= 0 {
        return Err(Error::param(format!(
            "window [{start_ms}, {end_ms}) ms spans no samples at {fs} Hz"
        )));
    }
    let len = len as usize;
    let offset = ms_to_samples(start_ms, fs);
    let total = rec.n_samples() as i64;
    let bad: Vec<String> = rec
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            let s = e.onset as i64 + offset;
            s < 0 || s + len as i64 > total
        })
        .map(|(i, e)| format!("#{i} (onset {}, label {})", e.onset, e.label))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Range(format!(
            "windows of {len} samples at offset {offset} leave the recording for events {}",
            bad.join(", ")
        )));
    }

    let c = rec.n_channels();
    let mut data = Vec::with_capacity(rec.events.len() * c * len);
    let mut seen: HashMap<u64, u32> = HashMap::new();
    let mut repetitions = Vec::with_capacity(rec.events.len());
    for e in &rec.events {
        let start = (e.onset as i64 + offset) as usize;
        for ch in 0..c {
            data.extend_from_slice(&rec.channel(ch)[start..start + len]);
        }
        let r = seen.entry(e.label).or_insert(0);
        repetitions.push(*r);
        *r += 1;
    }
    let n = rec.events.len();
    EpochSet::new(
        Tensor::new([n, c, len], data)?,
        fs,
        rec.events.iter().map(|e| e.label).collect(),
        repetitions,
        rec.channels.clone(),
    )
}

/// Subtracts each channel's pre-stimulus mean.
///
/// `pre_windows` holds, per epoch, the `C × P` samples preceding onset with
/// `P = round(pre_ms/1000 · fs)`.
pub fn baseline_correct<S: Scalar>(
    epochs: &EpochSet<S>,
    pre_ms: f64,
    pre_windows: &Tensor<S>,
) -> Result<EpochSet<S>> {
    let p = ms_to_samples(pre_ms, epochs.sample_rate_hz);
    if p <= 0 {
        return Err(Error::param(format!(
            "baseline of {pre_ms} ms holds no samples at {} Hz",
            epochs.sample_rate_hz
        )));
    }
    let p = p as usize;
    let (n, c, t) = (epochs.len(), epochs.n_channels(), epochs.n_samples());
    if pre_windows.dims() != [n, c, p] {
        return Err(Error::shape(format!(
            "baseline windows must be [{n}, {c}, {p}], got {:?}",
            pre_windows.dims()
        )));
    }
    let inv = S::one() / S::of_usize(p);
    let mut data = epochs.data.data().to_vec();
    let pre = pre_windows.data();
    for e in 0..n {
        for ch in 0..c {
            let base = (e * c + ch) * p;
            let mean = pre[base..base + p].iter().copied().sum::<S>() * inv;
            let row = (e * c + ch) * t;
            for v in &mut data[row..row + t] {
                *v -= mean;
            }
        }
    }
    Ok(EpochSet {
        data: Tensor::new(epochs.data.dims().to_vec(), data)?,
        ..epochs.clone()
    })
}

/// One epoch per label: the mean over its repetitions, in order of first
/// occurrence.
pub fn average_repetitions<S: Scalar>(epochs: &EpochSet<S>) -> EpochSet<S> {
    let (c, t) = (epochs.n_channels(), epochs.n_samples());
    let width = c * t;
    let mut order: Vec<u64> = Vec::new();
    let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, &label) in epochs.labels.iter().enumerate() {
        groups
            .entry(label)
            .or_insert_with(|| {
                order.push(label);
                Vec::new()
            })
            .push(i);
    }
    let mut data = Vec::with_capacity(order.len() * width);
    for label in &order {
        let members = &groups[label];
        let inv = S::one() / S::of_usize(members.len());
        let mut acc = vec![S::zero(); width];
        for &m in members {
            for (a, &v) in acc.iter_mut().zip(epochs.data.row(m)) {
                *a += v;
            }
        }
        data.extend(acc.into_iter().map(|v| v * inv));
    }
    let n = order.len();
    EpochSet {
        data: Tensor::new([n, c, t], data).expect("dims match by construction"),
        sample_rate_hz: epochs.sample_rate_hz,
        labels: order,
        repetitions: vec![0; n],
        channels: epochs.channels.clone(),
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn ramp_recording(total: usize, fs: f64, onsets: &[usize]) -> Recording<f64> {
        let samples = Tensor::from_fn([2, total], |i| (i % total) as f64 + if i >= total { 1000.0 } else { 0.0 });
        let events = onsets
            .iter()
            .enumerate()
            .map(|(i, &o)| Event {
                onset: o,
                label: (i % 2) as u64,
            })
            .collect();
        Recording::new(vec!["a".into(), "b".into()], samples, fs, events).unwrap()
    }

    #[test]
    fn window_length_and_indexing() {
        let rec = ramp_recording(2000, 250.0, &[100, 600]);
        let ep = epoch_extract(&rec, 0.0, 1000.0).unwrap();
        assert_eq!(ep.n_samples(), 250);
        assert_eq!(ep.data().data()[0], 100.0);
        assert_eq!(ep.epoch(0).data()[250], 1100.0);
        assert_eq!(ep.repetitions(), &[0, 0]);

        let pre = epoch_extract(&rec, -200.0, 0.0).unwrap();
        assert_eq!(pre.n_samples(), 50);
        assert_eq!(pre.data().data()[0], 50.0);
    }

    #[test]
    fn bad_windows() {
        let rec = ramp_recording(500, 250.0, &[100, 400]);
        assert!(matches!(epoch_extract(&rec, 0.0, 0.0), Err(Error::Parameter(_))));
        let err = epoch_extract(&rec, 0.0, 1000.0).unwrap_err();
        assert!(matches!(&err, Error::Range(m) if m.contains("onset 400") && !m.contains("onset 100")));
    }

    #[test]
    fn baseline_examples() {
        let data = Tensor::new([1, 1, 3], vec![5.0, 6.0, 7.0]).unwrap();
        let ep = EpochSet::new(data, 1000.0, vec![0], vec![0], vec!["x".into()]).unwrap();
        let pre = Tensor::new([1, 1, 2], vec![4.0, 6.0]).unwrap();
        let out = baseline_correct(&ep, 2.0, &pre).unwrap();
        assert_eq!(out.data().data(), &[0.0, 1.0, 2.0]);

        let flat = Tensor::new([1, 1, 3], vec![3.0; 3]).unwrap();
        let ep = EpochSet::new(flat, 1000.0, vec![0], vec![0], vec!["x".into()]).unwrap();
        let out = baseline_correct(&ep, 2.0, &Tensor::new([1, 1, 2], vec![3.0; 2]).unwrap()).unwrap();
        assert!(out.data().data().iter().all(|&v| v == 0.0));

        assert!(matches!(baseline_correct(&ep, 0.1, &pre), Err(Error::Parameter(_))));
        assert_eq!(super::ms_to_samples(200.0, 250.0), 50);
    }

    #[test]
    fn averaging_keeps_first_occurrence_order() {
        let data = Tensor::new([4, 1, 2], vec![1.0, 2.0, 10.0, 20.0, 3.0, 4.0, 30.0, 40.0]).unwrap();
        let ep = EpochSet::new(data, 100.0, vec![7, 3, 7, 3], vec![0, 0, 1, 1], vec!["x".into()]).unwrap();
        let avg = average_repetitions(&ep);
        assert_eq!(avg.labels(), &[7, 3]);
        assert_eq!(avg.data().data(), &[2.0, 3.0, 20.0, 30.0]);

        let single = ep.select(&[0, 1]);
        assert_eq!(average_repetitions(&single).data(), single.data());
    }

    #[test]
    fn averaging_four_repetitions_halves_noise() {
        let sigma = 0.8;
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 1000;
        let t = 4;
        let signal = [1.0, -0.5, 0.25, 2.0];
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for trial in 0..trials {
            for _ in 0..4 {
                data.extend(signal.iter().map(|s| s + normal.sample(&mut rng)));
                labels.push(trial as u64);
            }
        }
        let n = labels.len();
        let ep = EpochSet::new(Tensor::new([n, 1, t], data).unwrap(), 100.0, labels, vec![0; n], vec!["x".into()]).unwrap();
        let avg = average_repetitions(&ep);
        assert_eq!(avg.len(), trials);
        let resid: Vec<f64> = avg
            .data()
            .data()
            .chunks(t)
            .flat_map(|row| row.iter().zip(&signal).map(|(a, s)| a - s).collect::<Vec<_>>())
            .collect();
        let m = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / m;
        let std = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        assert!((std - sigma / 2.0).abs() / (sigma / 2.0) < 0.15, "std {std}");
    }

    #[test]
    fn eighty_repetitions_collapse_to_one() {
        let n = 160;
        let data = Tensor::from_fn([n, 1, 3], |i| (i % 5) as f64);
        let labels = (0..n).map(|i| (i % 2) as u64).collect();
        let ep = EpochSet::new(data, 100.0, labels, (0..n as u32).map(|i| i / 2).collect(), vec!["x".into()]).unwrap();
        let avg = average_repetitions(&ep);
        assert_eq!(avg.len(), 2);
    }

    #[test]
    fn periodic_means_survive_epoch_then_average() {
        // noiseless period-50 signal, events every period
        let total = 1000;
        let samples = Tensor::from_fn([1, total], |i| ((i % 50) as f64 * 0.3).sin());
        let events = (0..15).map(|k| Event { onset: 50 * k, label: 1 }).collect();
        let rec = Recording::new(vec!["x".into()], samples, 250.0, events).unwrap();
        let ep = epoch_extract(&rec, 0.0, 200.0).unwrap();
        let avg = average_repetitions(&ep);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(avg.data().data()) - mean(ep.epoch(0).data())).abs() < 1e-12);
    }
}

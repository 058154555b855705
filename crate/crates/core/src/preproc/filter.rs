use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::epochs::{Event, Recording};

/// Transition width for a band edge, capped so the band stays inside
/// `[0, nyquist]`.
fn lower_transition(lo: f64) -> f64 {
    (0.25 * lo).max(2.0).min(lo)
}

fn upper_transition(hi: f64, nyquist: f64) -> f64 {
    (0.25 * hi).max(2.0).min(nyquist - hi)
}

fn taps_for(transition_hz: f64, fs: f64) -> usize {
    let n = (3.3 / (transition_hz / fs)).ceil() as usize;
    n | 1
}

/// Hamming-windowed sinc low-pass with unit DC gain.
///
/// The -6 dB point sits at `cutoff_hz`; the tap count is
/// `ceil(3.3 · fs / transition_hz)` rounded up to odd.
pub fn design_lowpass(cutoff_hz: f64, transition_hz: f64, fs: f64) -> Result<Vec<f64>> {
    if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) || !(transition_hz > 0.0) {
        return Err(Error::param(format!(
            "low-pass cutoff {cutoff_hz} Hz with transition {transition_hz} Hz at {fs} Hz"
        )));
    }
    let len = taps_for(transition_hz, fs);
    let m = (len - 1) as f64 / 2.0;
    let fc = cutoff_hz / fs;
    let mut h: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 - m;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t)
            };
            let window = if len == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos()
            };
            sinc * window
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    Ok(h)
}

/// Band-pass kernel as the difference of two low-passes, or a plain
/// low-pass when `lo_hz == 0`.
pub fn design_bandpass(lo_hz: f64, hi_hz: f64, fs: f64) -> Result<Vec<f64>> {
    let nyquist = fs / 2.0;
    if !(lo_hz >= 0.0 && lo_hz < hi_hz && hi_hz < nyquist) {
        return Err(Error::param(format!(
            "band [{lo_hz}, {hi_hz}] Hz invalid at sample rate {fs} Hz"
        )));
    }
    let tw_hi = upper_transition(hi_hz, nyquist);
    let high = design_lowpass(hi_hz + tw_hi / 2.0, tw_hi, fs)?;
    if lo_hz == 0.0 {
        return Ok(high);
    }
    let tw_lo = lower_transition(lo_hz);
    let low = design_lowpass(lo_hz - tw_lo / 2.0, tw_lo, fs)?;
    let len = high.len().max(low.len());
    let centred = |k: &[f64]| {
        let shift = (len - k.len()) / 2;
        let mut v = vec![0.0; len];
        v[shift..shift + k.len()].copy_from_slice(k);
        v
    };
    let (h, l) = (centred(&high), centred(&low));
    Ok(h.iter().zip(&l).map(|(a, b)| a - b).collect())
}

/// Mirror index into `0..n` for any integer position.
fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let r = i.rem_euclid(period);
    if r < n as i64 {
        r as usize
    } else {
        (period - r) as usize
    }
}

/// Zero-phase forward-backward application of a symmetric odd-length
/// kernel, with reflect padding of one kernel length on each side.
pub fn filtfilt<S: Scalar>(x: &[S], kernel: &[f64]) -> Vec<S> {
    let n = x.len();
    if n == 0 || kernel.is_empty() {
        return x.to_vec();
    }
    let pad = kernel.len();
    let padded: Vec<f64> = (-(pad as i64)..(n + pad) as i64)
        .map(|i| x[reflect_index(i, n)].as_f64())
        .collect();
    let full = fft::convolve(&padded, kernel, 2);
    let start = pad + kernel.len() - 1;
    full[start..start + n].iter().map(|&v| S::of(v)).collect()
}

fn map_channels<S: Scalar>(rec: &Recording<S>, f: impl Fn(&[S]) -> Vec<S> + Sync) -> Vec<Vec<S>> {
    (0..rec.n_channels())
        .into_par_iter()
        .map(|c| f(rec.channel(c)))
        .collect()
}

/// Per-channel zero-phase band-pass.
pub fn bandpass_filter<S: Scalar>(rec: &Recording<S>, lo_hz: f64, hi_hz: f64) -> Result<Recording<S>> {
    let kernel = design_bandpass(lo_hz, hi_hz, rec.sample_rate_hz)?;
    let rows = map_channels(rec, |x| filtfilt(x, &kernel));
    let samples = Tensor::new(rec.samples.dims().to_vec(), rows.concat())?;
    Ok(Recording {
        samples,
        ..rec.clone()
    })
}

/// Anti-alias low-pass at `0.4 · target_hz`, then keeps every `f`-th sample.
///
/// The output holds `floor(T/f)` samples; event onsets become
/// `floor(onset/f)` and events falling past the end are dropped.
pub fn downsample<S: Scalar>(rec: &Recording<S>, target_hz: f64) -> Result<Recording<S>> {
    let fs = rec.sample_rate_hz;
    let ratio = fs / target_hz;
    let factor = ratio.round();
    if !(target_hz > 0.0) || factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::param(format!(
            "{fs} Hz to {target_hz} Hz is not a positive integer factor"
        )));
    }
    let factor = factor as usize;
    if factor == 1 {
        return Ok(rec.clone());
    }
    let edge = 0.4 * target_hz;
    let tw = upper_transition(edge, fs / 2.0);
    let kernel = design_lowpass(edge + tw / 2.0, tw, fs)?;
    let t_out = rec.n_samples() / factor;
    let rows = map_channels(rec, |x| {
        let y = filtfilt(x, &kernel);
        (0..t_out).map(|i| y[i * factor]).collect()
    });
    let samples = Tensor::new([rec.n_channels(), t_out], rows.concat())?;
    let events = rec
        .events
        .iter()
        .map(|e| Event {
            onset: e.onset / factor,
            label: e.label,
        })
        .filter(|e| e.onset < t_out)
        .collect();
    Ok(Recording {
        samples,
        sample_rate_hz: fs / factor as f64,
        events,
        channels: rec.channels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
            .collect()
    }

    fn rec(rows: Vec<Vec<f64>>, fs: f64) -> Recording<f64> {
        let c = rows.len();
        let t = rows[0].len();
        let names = (0..c).map(|i| format!("c{i}")).collect();
        Recording::new(names, Tensor::new([c, t], rows.concat()).unwrap(), fs, vec![]).unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn kernel_shape() {
        let h = design_lowpass(40.0, 10.0, 250.0).unwrap();
        assert_eq!(h.len(), 83);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..h.len() {
            assert!((h[i] - h[h.len() - 1 - i]).abs() < 1e-15);
        }
        let bp = design_bandpass(1.0, 40.0, 250.0).unwrap();
        assert!(bp.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn dc_is_rejected() {
        let r = rec(vec![vec![3.0; 6000]], 250.0);
        let out = bandpass_filter(&r, 0.1, 40.0).unwrap();
        let mean = out.channel(0).iter().sum::<f64>() / 6000.0;
        assert!(mean.abs() < 1e-3 * 3.0, "mean {mean}");
    }

    #[test]
    fn passband_tone_keeps_amplitude() {
        let x = tone(10.0, 250.0, 5000);
        let out = bandpass_filter(&rec(vec![x.clone()], 250.0), 0.1, 40.0).unwrap();
        let db = 20.0 * (rms(out.channel(0)) / rms(&x)).log10();
        assert!(db.abs() < 1.0, "gain {db} dB");
    }

    #[test]
    fn tone_at_twice_upper_edge_is_attenuated() {
        let x = tone(80.0, 250.0, 5000);
        let out = bandpass_filter(&rec(vec![x.clone()], 250.0), 0.1, 40.0).unwrap();
        let db = 20.0 * (rms(out.channel(0)) / rms(&x)).log10();
        assert!(db < -40.0, "gain {db} dB");
    }

    #[test]
    fn lowpass_only_when_lower_edge_is_zero() {
        let x: Vec<f64> = vec![1.0; 1000];
        let out = bandpass_filter(&rec(vec![x], 250.0), 0.0, 40.0).unwrap();
        assert!(out.channel(0).iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn invalid_bands() {
        let r = rec(vec![vec![0.0; 100]], 250.0);
        for (lo, hi) in [(10.0, 5.0), (-1.0, 10.0), (1.0, 125.0), (5.0, 5.0)] {
            assert!(matches!(bandpass_filter(&r, lo, hi), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn downsample_length_and_events() {
        let mut r = rec(vec![tone(10.0, 1000.0, 4003)], 1000.0);
        r.events = vec![Event { onset: 7, label: 1 }, Event { onset: 4002, label: 2 }];
        let out = downsample(&r, 250.0).unwrap();
        assert_eq!(out.n_samples(), 1000);
        assert_eq!(out.sample_rate_hz, 250.0);
        assert_eq!(out.events, vec![Event { onset: 1, label: 1 }]);
        assert_eq!(downsample(&r, 1000.0).unwrap(), r);
        assert!(matches!(downsample(&r, 300.0), Err(Error::Parameter(_))));
        assert!(matches!(downsample(&r, 2000.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn tone_above_new_nyquist_is_removed() {
        let x = tone(200.0, 1000.0, 8000);
        let out = downsample(&rec(vec![x.clone()], 1000.0), 250.0).unwrap();
        let ratio = rms(out.channel(0)).powi(2) / rms(&x).powi(2);
        assert!(ratio <= 0.01, "power ratio {ratio}");
    }

    #[test]
    fn in_band_tone_keeps_frequency_after_decimation() {
        let fs = 1000.0;
        let x = tone(12.0, fs, 8000);
        let filtered = bandpass_filter(&rec(vec![x], fs), 0.1, 100.0).unwrap();
        let out = downsample(&filtered, 250.0).unwrap();
        let y = out.channel(0);
        let n = 1024;
        let spec = fft::fft_real(&y[..n]);
        let peak = (1..n / 2)
            .max_by(|&a, &b| spec[a].norm().total_cmp(&spec[b].norm()))
            .unwrap();
        let hz = peak as f64 * 250.0 / n as f64;
        assert!((hz - 12.0).abs() <= 250.0 / n as f64, "peak at {hz} Hz");
    }

    #[test]
    fn reflect_index_mirrors() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }
}

//! Thin wrappers over `rustfft` for real signals.
//!
//! `X_k = Σₙ xₙ e^{−i2πkn/N}`, unnormalized forward transform.

use num_complex::Complex;
use rustfft::FftPlanner;

/// Forward transform of a real signal (all `N` bins).
pub fn fft_real(x: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    if !buf.is_empty() {
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    }
    buf
}

/// Full linear convolution of `x` with `kernel` via zero-padded FFTs,
/// applying the kernel `passes` times.
pub fn convolve(x: &[f64], kernel: &[f64], passes: usize) -> Vec<f64> {
    if x.is_empty() || kernel.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + passes * (kernel.len() - 1);
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(size);
    let pad = |v: &[f64]| {
        let mut c: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        c.resize(size, Complex::new(0.0, 0.0));
        forward.process(&mut c);
        c
    };
    let mut prod = pad(x);
    let ks = pad(kernel);
    for (a, &k) in prod.iter_mut().zip(&ks) {
        for _ in 0..passes {
            *a *= k;
        }
    }
    planner.plan_fft_inverse(size).process(&mut prod);
    let scale = 1.0 / size as f64;
    prod.into_iter().take(out_len).map(|c| c.re * scale).collect()
}

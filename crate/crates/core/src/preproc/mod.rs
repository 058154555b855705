//! Continuous recordings to model-ready epochs.
//!
//! The canonical order is whiten → band-pass → downsample → epoch →
//! baseline-correct, optionally followed by repetition averaging.

mod epochs;
mod filter;
mod whiten;

pub use epochs::{average_repetitions, baseline_correct, epoch_extract, EpochSet, Event, Recording};
pub use filter::{bandpass_filter, design_bandpass, design_lowpass, downsample, filtfilt};
pub use whiten::{inverse_sqrt, noise_covariance, symmetric_eigen, whiten, whiten_recording, EIGEN_FLOOR};

/// Samples spanned by `ms` milliseconds at `fs` Hz.
pub fn ms_to_samples(ms: f64, fs: f64) -> i64 {
    (ms / 1000.0 * fs).round() as i64
}

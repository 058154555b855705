use std::path::PathBuf;

use naln::io::{load_recording, save_epochs};
use naln::preproc::{
    average_repetitions, bandpass_filter, baseline_correct, downsample, epoch_extract, whiten_recording,
};
use naln::{Error, Result};

/// Runs whiten → band-pass → downsample → epoch → baseline-correct
/// (→ average).
#[derive(clap::Args)]
pub struct Args {
    /// Continuous `[C, T]` samples.
    #[arg(long)]
    samples: PathBuf,
    /// `[E, 2]` table of (onset sample, label).
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    sample_rate: f64,
    /// Comma-separated channel names (defaults to ch0, ch1, …).
    #[arg(long, value_delimiter = ',')]
    channels: Vec<String>,
    /// Shrinkage toward the diagonal for noise normalization.
    #[arg(long, default_value_t = 0.1)]
    shrinkage: f64,
    #[arg(long)]
    no_whiten: bool,
    /// Pass band in Hz.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [0.1, 100.0])]
    band: Vec<f64>,
    #[arg(long)]
    no_filter: bool,
    /// Output sample rate; must divide the input rate.
    #[arg(long)]
    target_hz: Option<f64>,
    /// Epoch window in ms relative to onset.
    #[arg(long, num_args = 2, value_names = ["START", "END"], default_values_t = [0.0, 1000.0], allow_negative_numbers = true)]
    window: Vec<f64>,
    /// Pre-stimulus baseline length in ms (0 disables).
    #[arg(long, default_value_t = 200.0)]
    baseline: f64,
    /// Average repetitions of each label.
    #[arg(long)]
    average: bool,
    #[arg(long)]
    out_epochs: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
}

pub fn run(a: Args) -> Result<()> {
    let channels = (!a.channels.is_empty()).then_some(a.channels.as_slice());
    let mut rec = load_recording(&a.samples, &a.events, a.sample_rate, channels)?;
    if !a.no_whiten {
        rec = whiten_recording(&rec, a.shrinkage)?;
    }
    if !a.no_filter {
        rec = bandpass_filter(&rec, a.band[0], a.band[1])?;
    }
    if let Some(target) = a.target_hz {
        rec = downsample(&rec, target)?;
    }
    let mut epochs = epoch_extract(&rec, a.window[0], a.window[1])?;
    if a.baseline > 0.0 {
        let pre = epoch_extract(&rec, -a.baseline, 0.0).map_err(|e| match e {
            Error::Range(m) => Error::Range(format!("baseline window: {m}")),
            other => other,
        })?;
        epochs = baseline_correct(&epochs, a.baseline, pre.data())?;
    }
    if a.average {
        epochs = average_repetitions(&epochs);
    }
    save_epochs(&a.out_epochs, &a.out_labels, &epochs)?;
    println!(
        "wrote {} epochs of {} channels × {} samples at {} Hz",
        epochs.len(),
        epochs.n_channels(),
        epochs.n_samples(),
        epochs.sample_rate_hz
    );
    Ok(())
}

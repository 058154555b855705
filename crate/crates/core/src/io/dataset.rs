use std::path::Path;

use crate::error::{Error, Result};
use crate::preproc::{EpochSet, Event, Recording};
use crate::retrieval::EmbeddingSet;
use crate::tensor::Tensor;

use super::tensorfile::{read_tensor, write_tensor};

fn as_index(v: f64, what: &str, path: &Path) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 && v < 9.007_199_254_740_992e15 {
        Ok(v as u64)
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("{what} {v} is not a non-negative integer"),
        })
    }
}

fn pairs(path: &Path, what: &str) -> Result<Vec<(u64, u64)>> {
    let t = read_tensor(path)?;
    match t.dims() {
        &[_, 2] | &[0] => {}
        dims => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("{what} table must be [n, 2], got {dims:?}"),
            })
        }
    }
    t.data()
        .chunks_exact(2)
        .map(|c| Ok((as_index(c[0], what, path)?, as_index(c[1], what, path)?)))
        .collect()
}

/// Epochs as `[n, C, T]` plus a `[n, 2]` table of (label, repetition).
pub fn save_epochs(epochs_path: &Path, labels_path: &Path, epochs: &EpochSet<f64>) -> Result<()> {
    write_tensor(epochs_path, epochs.data())?;
    let table: Vec<f64> = epochs
        .labels()
        .iter()
        .zip(epochs.repetitions())
        .flat_map(|(&l, &r)| [l as f64, r as f64])
        .collect();
    write_tensor(labels_path, &Tensor::new([epochs.len(), 2], table)?)
}

pub fn load_epochs(
    epochs_path: &Path,
    labels_path: &Path,
    sample_rate_hz: f64,
    channels: &[String],
) -> Result<EpochSet<f64>> {
    let data = read_tensor(epochs_path)?;
    let rows = pairs(labels_path, "label")?;
    let labels = rows.iter().map(|r| r.0).collect();
    let reps = rows
        .iter()
        .map(|r| u32::try_from(r.1).map_err(|_| Error::Data(format!("repetition {} too large", r.1))))
        .collect::<Result<_>>()?;
    EpochSet::new(data, sample_rate_hz, labels, reps, channels.to_vec())
}

/// Continuous `[C, T]` samples plus a `[E, 2]` table of (onset, label).
pub fn load_recording(
    samples_path: &Path,
    events_path: &Path,
    sample_rate_hz: f64,
    channels: Option<&[String]>,
) -> Result<Recording<f64>> {
    let samples = read_tensor(samples_path)?;
    let c = samples.dims().first().copied().unwrap_or(0);
    let names = match channels {
        Some(names) => names.to_vec(),
        None => EpochSet::<f64>::default_channel_names(c),
    };
    let events = pairs(events_path, "event")?
        .into_iter()
        .map(|(onset, label)| Event {
            onset: onset as usize,
            label,
        })
        .collect();
    Recording::new(names, samples, sample_rate_hz, events)
}

pub fn save_embeddings(vectors_path: &Path, ids_path: &Path, set: &EmbeddingSet<f64>) -> Result<()> {
    write_tensor(vectors_path, set.vectors())?;
    let ids: Vec<f64> = set.ids().iter().map(|&i| i as f64).collect();
    write_tensor(ids_path, &Tensor::new([ids.len()], ids)?)
}

/// Loads `[n, d]` vectors (binary32 or binary64) with ids from `ids_path`,
/// or `0..n` when no id file is given.
pub fn load_embeddings(vectors_path: &Path, ids_path: Option<&Path>) -> Result<EmbeddingSet<f64>> {
    let vectors = read_tensor(vectors_path)?;
    let n = vectors.dims().first().copied().unwrap_or(0);
    let ids = match ids_path {
        Some(p) => {
            let t = read_tensor(p)?;
            if t.dims() != [n] {
                return Err(Error::Format {
                    path: p.to_path_buf(),
                    msg: format!("expected {n} ids, got dims {:?}", t.dims()),
                });
            }
            t.data().iter().map(|&v| as_index(v, "id", p)).collect::<Result<_>>()?
        }
        None => (0..n as u64).collect(),
    };
    EmbeddingSet::new(vectors, ids)
}

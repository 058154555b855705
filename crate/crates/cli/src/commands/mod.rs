pub mod attribute;
pub mod evaluate;
pub mod preprocess;
pub mod stats;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use naln::encoders::EncoderParams;
use naln::io::{load_checkpoint, load_embeddings, load_epochs, read_text, Manifest};
use naln::preproc::EpochSet;
use naln::retrieval::EmbeddingSet;
use naln::{Error, Result};
use serde::Deserialize;

/// Loaded manifest plus the embedding set a command works on.
pub struct Context {
    pub manifest: Manifest,
    pub name: String,
    pub images: EmbeddingSet<f64>,
}

impl Context {
    pub fn open(manifest: &Path, name: &str) -> Result<Self> {
        let manifest = Manifest::load(manifest)?;
        let entry = manifest.embedding(name)?;
        let ids = entry.ids.as_ref().map(|p| manifest.resolve(p));
        let images = load_embeddings(&manifest.resolve(&entry.vectors), ids.as_deref())?;
        Ok(Self {
            manifest,
            name: name.to_string(),
            images,
        })
    }

    fn epochs(&self, data: &Path, labels: &Path) -> Result<EpochSet<f64>> {
        let d = &self.manifest.dataset;
        load_epochs(
            &self.manifest.resolve(data),
            &self.manifest.resolve(labels),
            d.sample_rate_hz,
            &d.channels,
        )
    }

    pub fn train_epochs(&self) -> Result<EpochSet<f64>> {
        let d = &self.manifest.dataset;
        self.epochs(&d.train_epochs, &d.train_labels)
    }

    pub fn test_epochs(&self) -> Result<EpochSet<f64>> {
        let d = &self.manifest.dataset;
        self.epochs(&d.test_epochs, &d.test_labels)
    }

    /// `<outputs>/<embedding name>`, or `override_dir` when given.
    pub fn run_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        match override_dir {
            Some(d) => d.to_path_buf(),
            None => self.manifest.output_dir().join(&self.name),
        }
    }
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed{seed}"))
}

pub fn checkpoint_dir(run_dir: &Path, seed: u64) -> PathBuf {
    seed_dir(run_dir, seed).join("checkpoint")
}

pub const TRAIN_SUMMARY: &str = "train_summary.json";

#[derive(Deserialize)]
struct SeedList {
    seeds: Vec<u64>,
}

/// Seeds recorded by the last `train` run in `run_dir`.
pub fn trained_seeds(run_dir: &Path) -> Result<Vec<u64>> {
    let path = run_dir.join(TRAIN_SUMMARY);
    let text = read_text(&path)?;
    let list: SeedList = serde_json::from_str(&text).map_err(|e| Error::Format {
        path,
        msg: e.to_string(),
    })?;
    Ok(list.seeds)
}

pub fn load_seeds(run_dir: &Path, only: Option<&[u64]>) -> Result<Vec<(u64, EncoderParams<f64>)>> {
    let seeds = match only {
        Some(s) if !s.is_empty() => s.to_vec(),
        _ => trained_seeds(run_dir)?,
    };
    seeds
        .into_iter()
        .map(|s| Ok((s, load_checkpoint(&checkpoint_dir(run_dir, s))?)))
        .collect()
}

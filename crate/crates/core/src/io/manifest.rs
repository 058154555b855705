use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

use super::read_text;

/// Pipeline description. Relative paths resolve against the manifest's
/// own directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset: DatasetSection,
    /// Image embedding sets keyed by the name of the encoder that made them.
    pub embeddings: BTreeMap<String, EmbeddingEntry>,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub training: TrainConfig,
    pub outputs: OutputSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub sample_rate_hz: f64,
    pub channels: Vec<String>,
    pub train_epochs: PathBuf,
    pub train_labels: PathBuf,
    pub test_epochs: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingEntry {
    pub vectors: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Manifest {
    pub fn new(
        dataset: DatasetSection,
        embeddings: BTreeMap<String, EmbeddingEntry>,
        encoder: EncoderConfig,
        training: TrainConfig,
        outputs: OutputSection,
    ) -> Self {
        Self {
            dataset,
            embeddings,
            encoder,
            training,
            outputs,
            base_dir: PathBuf::new(),
        }
    }

    /// Parses manifest text without touching the file system.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    /// Reads, validates and checks that every referenced input exists.
    pub fn load(path: &Path) -> Result<Self> {
        let mut m = Self::parse(&read_text(path)?)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        let missing: Vec<String> = m
            .inputs()
            .into_iter()
            .map(|p| m.resolve(p))
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Manifest(format!("missing files: {}", missing.join(", "))));
        }
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if !(d.sample_rate_hz > 0.0 && d.sample_rate_hz.is_finite()) {
            return Err(Error::Manifest(format!("sample_rate_hz {}", d.sample_rate_hz)));
        }
        if d.channels.len() != self.encoder.input_channels {
            return Err(Error::Manifest(format!(
                "{} channel names but the encoder takes {} channels",
                d.channels.len(),
                self.encoder.input_channels
            )));
        }
        if self.embeddings.is_empty() {
            return Err(Error::Manifest("no embedding sets listed".into()));
        }
        self.encoder.validate()?;
        self.training.validate()
    }

    fn inputs(&self) -> Vec<&Path> {
        let d = &self.dataset;
        let mut v: Vec<&Path> = vec![&d.train_epochs, &d.train_labels, &d.test_epochs, &d.test_labels];
        for e in self.embeddings.values() {
            v.push(&e.vectors);
            if let Some(ids) = &e.ids {
                v.push(ids);
            }
        }
        v
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.outputs.dir)
    }

    pub fn embedding(&self, name: &str) -> Result<&EmbeddingEntry> {
        self.embeddings.get(name).ok_or_else(|| {
            Error::Manifest(format!(
                "no embedding set named {name}; available: {}",
                self.embeddings.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

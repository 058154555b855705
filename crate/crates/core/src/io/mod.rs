//! On-disk formats: tensor files, manifests, checkpoints and datasets.

mod checkpoint;
mod dataset;
mod manifest;
mod tensorfile;

pub use checkpoint::{load_checkpoint, save_checkpoint, CONFIG_FILE};
pub use dataset::{load_embeddings, load_epochs, load_recording, save_embeddings, save_epochs};
pub use manifest::{DatasetSection, EmbeddingEntry, Manifest, OutputSection};
pub use tensorfile::{
    decode_tensor, encode_tensor, read_tensor, read_tensor_as, write_tensor, DType, MAGIC, VERSION,
};

use std::path::Path;

use crate::error::{Error, Result};

/// Writes `contents`, creating parent directories as needed.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

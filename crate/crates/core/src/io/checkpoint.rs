use std::path::Path;

use crate::encoders::{init_params, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensorfile::{read_tensor_as, write_tensor};
use super::{read_text, write_file};

pub const CONFIG_FILE: &str = "encoder.toml";

/// Writes `encoder.toml` plus one tensor file per parameter into `dir`.
pub fn save_checkpoint<S: Scalar>(dir: &Path, params: &EncoderParams<S>) -> Result<()> {
    let text = toml::to_string(&params.config)
        .map_err(|e| Error::Config(format!("cannot serialize encoder config: {e}")))?;
    write_file(&dir.join(CONFIG_FILE), text)?;
    for (name, tensor) in &params.params {
        write_tensor(&dir.join(format!("{name}.naln")), tensor)?;
    }
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<EncoderParams<S>> {
    let path = dir.join(CONFIG_FILE);
    let config: EncoderConfig = toml::from_str(&read_text(&path)?).map_err(|e| Error::Format {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    config.validate()?;
    let names: Vec<String> = init_params::<S>(&config)?
        .params
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let named = names
        .into_iter()
        .map(|n| {
            let t = read_tensor_as::<S>(&dir.join(format!("{n}.naln")))?;
            Ok((n, t))
        })
        .collect::<Result<Vec<_>>>()?;
    EncoderParams::from_named(config, named)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Architecture;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for arch in [Architecture::nice_default(), Architecture::eegnet_default(), Architecture::mlp_default()] {
            let cfg = EncoderConfig::new(arch, 4, 40, 8, 5);
            let params = init_params::<f64>(&cfg).unwrap();
            let sub = dir.path().join(cfg.architecture.family());
            save_checkpoint(&sub, &params).unwrap();
            assert_eq!(load_checkpoint::<f64>(&sub).unwrap(), params);
        }
    }

    #[test]
    fn missing_parameter_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EncoderConfig::new(Architecture::mlp_default(), 2, 8, 4, 0);
        save_checkpoint(dir.path(), &init_params::<f64>(&cfg).unwrap()).unwrap();
        std::fs::remove_file(dir.path().join("projection.bias.naln")).unwrap();
        assert!(matches!(load_checkpoint::<f64>(dir.path()), Err(Error::Io { .. })));
    }
}

//! Contrastive alignment of a brain encoder to frozen image embeddings.

mod adam;
mod loss;
mod split;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use loss::{infonce_loss, infonce_value};
pub use split::split_train_val;

use crate::encoders::{init_params, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::preproc::EpochSet;
use crate::retrieval::EmbeddingSet;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 128,
            temperature: 0.04,
            max_epochs: 200,
            patience: 25,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.patience == 0 {
            return bad("patience must be positive".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Validation loss of the initial parameters.
    pub initial_val_loss: f64,
    /// Epochs actually run.
    pub stopped_epoch: usize,
    /// Epoch whose parameters were returned; 0 means the initial ones.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

/// Image-embedding row for every epoch, in epoch order.
fn target_rows<S: Scalar>(epochs: &EpochSet<S>, images: &EmbeddingSet<S>) -> Result<Vec<usize>> {
    let pos = images.positions();
    let missing: Vec<String> = epochs
        .labels()
        .iter()
        .filter(|l| !pos.contains_key(l))
        .map(|l| l.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "labels without an image embedding: {}",
            missing.join(", ")
        )));
    }
    Ok(epochs.labels().iter().map(|l| pos[l]).collect())
}

/// Splits `ids` into consecutive chunks of `size`; a trailing chunk of one
/// is merged into its predecessor when one exists.
fn eval_chunks(ids: &[usize], size: usize) -> Vec<&[usize]> {
    let mut chunks: Vec<&[usize]> = ids.chunks(size).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
        chunks.pop();
        let start = (chunks.len() - 1) * size;
        *chunks.last_mut().expect("at least one chunk") = &ids[start..];
    }
    chunks
}

struct Batches<'a, S> {
    epochs: &'a Tensor<S>,
    images: &'a Tensor<S>,
    rows: &'a [usize],
}

impl<S: Scalar> Batches<'_, S> {
    fn tensors(&self, ids: &[usize]) -> (Tensor<S>, Tensor<S>) {
        let targets: Vec<usize> = ids.iter().map(|&i| self.rows[i]).collect();
        (self.epochs.select_outer(ids), self.images.select_outer(&targets))
    }

    /// Mean InfoNCE over `ids`, weighted by chunk size.
    fn loss(&self, params: &EncoderParams<S>, ids: &[usize], batch: usize, tau: S) -> Result<f64> {
        let mut total = 0.0;
        for chunk in eval_chunks(ids, batch) {
            let (x, v) = self.tensors(chunk);
            let mut tape = Tape::new();
            let input = tape.constant(x);
            let fwd = params.forward(&mut tape, input, false)?;
            let target = tape.constant(v);
            let loss = infonce_loss(&mut tape, fwd.embedding, target, tau)?;
            total += tape.value(loss).item()?.as_f64() * chunk.len() as f64;
        }
        Ok(total / ids.len() as f64)
    }
}

/// Minibatch InfoNCE training with early stopping on validation loss.
///
/// Image embeddings stay frozen. Returns the parameters from the epoch with
/// the lowest validation loss (the initial ones if no epoch improved).
pub fn fit<S: Scalar>(
    encoder: &EncoderConfig,
    epochs: &EpochSet<S>,
    images: &EmbeddingSet<S>,
    cfg: &TrainConfig,
) -> Result<(EncoderParams<S>, TrainReport)> {
    cfg.validate()?;
    encoder.validate()?;
    if epochs.n_channels() != encoder.input_channels || epochs.n_samples() != encoder.input_samples {
        return Err(Error::shape(format!(
            "encoder expects [{}, {}] epochs, got [{}, {}]",
            encoder.input_channels,
            encoder.input_samples,
            epochs.n_channels(),
            epochs.n_samples()
        )));
    }
    if images.dim() != encoder.embed_dim {
        return Err(Error::shape(format!(
            "encoder embeds into {} dimensions, image embeddings have {}",
            encoder.embed_dim,
            images.dim()
        )));
    }
    let rows = target_rows(epochs, images)?;
    let (train, val) = split_train_val(epochs.len(), cfg.val_fraction, cfg.seed)?;
    if train.len() < 2 {
        return Err(Error::Data(format!(
            "{} training epochs leave no minibatch of two",
            train.len()
        )));
    }
    let tau = S::of(cfg.temperature);
    let lr = S::of(cfg.learning_rate);
    let data = Batches {
        epochs: epochs.data(),
        images: images.vectors(),
        rows: &rows,
    };

    let mut params: EncoderParams<S> = init_params(encoder)?;
    let initial_val_loss = data.loss(&params, &val, cfg.batch_size, tau)?;
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        initial_val_loss,
        stopped_epoch: 0,
        best_epoch: 0,
        best_val_loss: initial_val_loss,
        checkpoint: None,
    };
    let mut best = params.clone();
    let mut state = AdamState::new(&params.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut stale = 0;
    let mut order = train.clone();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
            let (x, v) = data.tensors(batch);
            let mut tape = Tape::new();
            let input = tape.constant(x);
            let fwd = params.forward(&mut tape, input, true)?;
            let target = tape.constant(v);
            let loss = infonce_loss(&mut tape, fwd.embedding, target, tau)?;
            let value = tape.value(loss).item()?.as_f64();
            if !value.is_finite() {
                return Err(Error::Training(format!("loss became {value} in epoch {epoch}")));
            }
            tape.backward(loss)?;
            let grads: Vec<Vec<S>> = fwd
                .params
                .iter()
                .map(|&p| tape.grad(p).expect("trainable parameter").to_vec())
                .collect();
            adam_step(&mut params.params, &grads, &mut state, lr)?;
            sum += value * batch.len() as f64;
            count += batch.len();
        }
        let val_loss = data.loss(&params, &val, cfg.batch_size, tau)?;
        report.train_loss.push(sum / count as f64);
        report.val_loss.push(val_loss);
        report.stopped_epoch = epoch;
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best, report))
}

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Symmetric InfoNCE over matched rows of `w: [N, d]` and `v: [N, d]`.
///
/// `L = −(1/N) Σᵢ [log softmax_row(S/τ)ᵢᵢ + log softmax_col(S/τ)ᵢᵢ]`
/// with `S` the cosine-similarity matrix.
pub fn infonce_loss<S: Scalar>(tape: &mut Tape<S>, w: Var, v: Var, temperature: S) -> Result<Var> {
    if !(temperature > S::zero()) {
        return Err(Error::param(format!("temperature must be positive, got {temperature}")));
    }
    let (dw, dv) = (tape.dims(w).to_vec(), tape.dims(v).to_vec());
    if dw.len() != 2 || dw != dv || dw[0] == 0 {
        return Err(Error::shape(format!(
            "InfoNCE needs equal nonempty [N, d] operands, got {dw:?} and {dv:?}"
        )));
    }
    let n = dw[0];
    let sim = tape.cosine_similarity_matrix(w, v)?;
    let logits = tape.scale(sim, S::one() / temperature);
    let rows = tape.log_softmax(logits, 1)?;
    let cols = tape.log_softmax(logits, 0)?;
    let brain_to_image = tape.trace(rows)?;
    let image_to_brain = tape.trace(cols)?;
    let total = tape.add(brain_to_image, image_to_brain)?;
    Ok(tape.scale(total, -S::one() / S::of_usize(n)))
}

/// Loss value without gradients.
pub fn infonce_value<S: Scalar>(w: &Tensor<S>, v: &Tensor<S>, temperature: S) -> Result<S> {
    let mut tape = Tape::new();
    let (wv, vv) = (tape.constant(w.clone()), tape.constant(v.clone()));
    let loss = infonce_loss(&mut tape, wv, vv, temperature)?;
    tape.value(loss).item()
}

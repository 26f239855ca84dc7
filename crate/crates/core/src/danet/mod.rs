//! The embedding network and the attractor mask estimator.
//!
//! A stack of bidirectional GRU layers maps log-magnitude features to one
//! `K`-dimensional embedding per time-frequency bin. During training each
//! speaker's attractor is the mean embedding of the bins its ideal binary
//! mask owns; masks are `σ(a_i · v)` and the loss is the magnitude-weighted
//! squared mask error.

mod arch;
mod attractor;
mod embed;
pub mod gradcheck;
mod gru;
mod params;

pub use arch::{count_params, ArchSpec, CellKind, DirLayout, ParamLayout};
pub use attractor::{
    estimate_masks, loss, loss_and_embedding_grad, train_attractors, AttractorSet,
};
pub use embed::{backward_network, forward_embed, forward_trace, EmbeddingMatrix, ForwardTrace};
pub use gru::{backprop_direction, gru_cell, run_direction, DirGrads, DirTrace};
pub use params::{DirParams, ModelParams};

use alloc::vec;
use alloc::vec::Vec;

use crate::dsp::FeatureMatrix;
use crate::masking::BinaryMask;
use crate::tf::RealTf;
use crate::{Error, Result};

/// Loss of one utterance, computed forward only.
pub fn utterance_loss(
    features: &FeatureMatrix,
    mix_mag: &RealTf,
    ideal: &[BinaryMask],
    params: &ModelParams,
) -> Result<f64> {
    let v = forward_embed(features, params)?;
    let a = train_attractors(&v, ideal)?;
    let est = estimate_masks(&v, &a)?;
    loss(mix_mag, ideal, &est)
}

/// Loss of one utterance and its gradient w.r.t. every parameter, in the
/// flat order of [`ParamLayout`].
pub fn backward(
    features: &FeatureMatrix,
    mix_mag: &RealTf,
    ideal: &[BinaryMask],
    params: &ModelParams,
) -> Result<(f64, Vec<f64>)> {
    let trace = forward_trace(features, params)?;
    let (loss, d_embed) = loss_and_embedding_grad(&trace.embeddings, mix_mag, ideal)?;
    let mut grad = vec![0.0; params.len()];
    backward_network(&trace, &d_embed, params, &mut grad);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    if !crate::math::all_finite(&grad) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests;

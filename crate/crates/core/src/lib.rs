//! Single-channel two-speaker speech separation with a deep attractor network.
//!
//! The crate holds every numerical piece of the toolkit and depends only on
//! `alloc`: the STFT signal path, ideal masks, the bidirectional GRU embedding
//! network with hand-derived gradients, attractor-based mask estimation,
//! k-means / full-covariance GMM clustering, the Adam training loop and the
//! BSS-eval metrics. File formats, dataset tooling and the command line live
//! in the `danet` crate.
//!
//! Data flow for one mixture:
//!
//! ```text
//! waveform -> stft -> log |X| -> BGRU + FC -> embeddings V (FT x K)
//!          training:  ideal binary masks -> attractors -> sigmoid(a_i V) -> loss
//!          inference: cluster V -> attractors -> masks -> |X| * mask, mixture phase -> istft
//! ```
#![cfg_attr(not(any(test, feature = "std")), no_std)]
// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read closer to the formulas in numeric kernels.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod clustering;
pub mod corpus;
pub mod danet;
pub mod dsp;
pub mod error;
pub mod evalkit;
pub mod fft;
pub mod linalg;
pub mod masking;
pub mod math;
pub mod pipeline;
pub mod tf;

pub use error::{Error, Result};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gru::{backprop_direction, run_direction, DirGrads, DirTrace};
use super::params::{DirParams, ModelParams};
use crate::dsp::FeatureMatrix;
use crate::math::gemm;
use crate::{Error, Result};

/// Embedding matrix `V` (`K × FT`), stored transposed: the embedding of bin
/// `(f, t)` is the contiguous row `t·F + f` of length `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    bins: usize,
    frames: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, bins: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * bins * frames {
            return Err(Error::shape(format!(
                "{} values for K={dim}, F={bins}, T={frames}",
                data.len()
            )));
        }
        Ok(Self {
            dim,
            bins,
            frames,
            data,
        })
    }

    /// Builds from column-major `V` given as `K` rows of length `FT`.
    pub fn from_rows(rows: &[Vec<f64>], bins: usize, frames: usize) -> Result<Self> {
        let dim = rows.len();
        let m = bins * frames;
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::shape("embedding rows must all have F·T entries"));
        }
        let mut data = vec![0.0; dim * m];
        for (k, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                data[j * dim + k] = *v;
            }
        }
        Ok(Self {
            dim,
            bins,
            frames,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of columns of `V` (`F·T`).
    pub fn columns(&self) -> usize {
        self.bins * self.frames
    }

    /// Column `j = t·F + f` of `V`.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    /// `FT × K` row-major points.
    pub fn as_points(&self) -> &[f64] {
        &self.data
    }
}

pub(crate) struct LayerTrace {
    input: Vec<f64>,
    dirs: [DirTrace; 2],
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardTrace {
    layers: Vec<LayerTrace>,
    top: Vec<f64>,
    frames: usize,
    pub embeddings: EmbeddingMatrix,
}

fn interleave(fwd: &[f64], bwd: &[f64], frames: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; frames * 2 * h];
    for t in 0..frames {
        out[t * 2 * h..t * 2 * h + h].copy_from_slice(&fwd[t * h..(t + 1) * h]);
        out[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&bwd[t * h..(t + 1) * h]);
    }
    out
}

pub fn forward_trace(features: &FeatureMatrix, params: &ModelParams) -> Result<ForwardTrace> {
    let arch = params.arch();
    let f = features.values.bins();
    let frames = features.values.frames();
    if f != arch.input_dim {
        return Err(Error::shape(format!(
            "features have {f} bins, network expects {}",
            arch.input_dim
        )));
    }
    if frames == 0 {
        return Err(Error::Empty("feature frames"));
    }
    let h = arch.hidden;
    // Frame-major storage is already `T × F` row-major.
    let mut x = features.values.as_slice().to_vec();
    let mut layers = Vec::with_capacity(arch.num_layers);
    for l in 0..arch.num_layers {
        let fwd = run_direction(&x, frames, &params.dir(l, 0), false);
        let bwd = run_direction(&x, frames, &params.dir(l, 1), true);
        let out = interleave(&fwd.h, &bwd.h, frames, h);
        layers.push(LayerTrace {
            input: core::mem::replace(&mut x, out),
            dirs: [fwd, bwd],
        });
    }
    let kf = arch.fc_output();
    let mut e = vec![0.0; frames * kf];
    gemm(
        frames,
        2 * h,
        kf,
        1.0,
        &x,
        false,
        params.w_fc(),
        true,
        0.0,
        &mut e,
    );
    for row in e.chunks_exact_mut(kf) {
        for (v, b) in row.iter_mut().zip(params.b_fc()) {
            *v += b;
        }
    }
    if !crate::math::all_finite(&e) {
        return Err(Error::NonFinite("embeddings"));
    }
    let embeddings = EmbeddingMatrix::new(arch.embed_dim, f, frames, e)?;
    Ok(ForwardTrace {
        layers,
        top: x,
        frames,
        embeddings,
    })
}

/// Maps standardized features (`F × T`) to embeddings `V` (`K × FT`).
pub fn forward_embed(features: &FeatureMatrix, params: &ModelParams) -> Result<EmbeddingMatrix> {
    forward_trace(features, params).map(|t| t.embeddings)
}

/// Backpropagates `d_embed` (same layout as the embeddings) through the
/// output map and every recurrent layer, accumulating into `grad`.
pub fn backward_network(
    trace: &ForwardTrace,
    d_embed: &[f64],
    params: &ModelParams,
    grad: &mut [f64],
) {
    let arch = params.arch();
    let layout = params.layout();
    let h = arch.hidden;
    let kf = arch.fc_output();
    let frames = trace.frames;
    debug_assert_eq!(d_embed.len(), frames * kf);
    debug_assert_eq!(grad.len(), layout.total);

    gemm(
        kf,
        frames,
        2 * h,
        1.0,
        d_embed,
        true,
        &trace.top,
        false,
        1.0,
        &mut grad[layout.w_fc.clone()],
    );
    {
        let gb = &mut grad[layout.b_fc.clone()];
        for row in d_embed.chunks_exact(kf) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
    let mut d_out = vec![0.0; frames * 2 * h];
    gemm(
        frames,
        kf,
        2 * h,
        1.0,
        d_embed,
        false,
        params.w_fc(),
        false,
        0.0,
        &mut d_out,
    );

    for l in (0..arch.num_layers).rev() {
        let lt = &trace.layers[l];
        let ind = arch.layer_input(l);
        let mut d_in = vec![0.0; frames * ind];
        for d in 0..2 {
            let mut d_dir = vec![0.0; frames * h];
            for t in 0..frames {
                d_dir[t * h..(t + 1) * h]
                    .copy_from_slice(&d_out[t * 2 * h + d * h..t * 2 * h + (d + 1) * h]);
            }
            let dl = &layout.dirs[l][d];
            let p = DirParams::from_layout(&params.values, dl, h);
            let (w_in, w_rec, b_in, b_rec) = split_dir_grads(grad, dl);
            let mut g = DirGrads {
                w_in,
                w_rec,
                b_in,
                b_rec,
            };
            let want_input = l > 0;
            backprop_direction(
                &lt.input,
                &p,
                &lt.dirs[d],
                &d_dir,
                &mut g,
                want_input.then_some(&mut d_in[..]),
            );
        }
        d_out = d_in;
    }
}

fn split_dir_grads<'a>(
    grad: &'a mut [f64],
    dl: &super::arch::DirLayout,
) -> (&'a mut [f64], &'a mut [f64], &'a mut [f64], &'a mut [f64]) {
    // The four tensors are contiguous and in this order.
    debug_assert!(
        dl.w_in.end == dl.w_rec.start
            && dl.w_rec.end == dl.b_in.start
            && dl.b_in.end == dl.b_rec.start
    );
    let block = &mut grad[dl.w_in.start..dl.b_rec.end];
    let (w_in, rest) = block.split_at_mut(dl.w_in.len());
    let (w_rec, rest) = rest.split_at_mut(dl.w_rec.len());
    let (b_in, b_rec) = rest.split_at_mut(dl.b_in.len());
    (w_in, w_rec, b_in, b_rec)
}

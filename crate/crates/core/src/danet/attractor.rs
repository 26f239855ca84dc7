use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::embed::EmbeddingMatrix;
use crate::masking::{BinaryMask, SoftMask};
use crate::math::{dot, sigmoid};
use crate::tf::RealTf;
use crate::{Error, Result};

/// One attractor per speaker, `N × K` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractorSet {
    dim: usize,
    data: Vec<f64>,
}

impl AttractorSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::shape(format!(
                "{} values for attractors of dimension {dim}",
                data.len()
            )));
        }
        if !crate::math::all_finite(&data) {
            return Err(Error::NonFinite("attractors"));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn check_mask_shape(v: &EmbeddingMatrix, m: &RealTf) -> Result<()> {
    if m.shape() != (v.bins(), v.frames()) {
        return Err(Error::shape(format!(
            "mask {:?} vs embeddings over {}x{} bins",
            m.shape(),
            v.bins(),
            v.frames()
        )));
    }
    Ok(())
}

/// Mask-weighted mean of the embeddings, one attractor per mask.
pub fn train_attractors(v: &EmbeddingMatrix, ideal_masks: &[BinaryMask]) -> Result<AttractorSet> {
    if ideal_masks.is_empty() {
        return Err(Error::Empty("ideal masks"));
    }
    let k = v.dim();
    let mut data = vec![0.0; ideal_masks.len() * k];
    for (i, m) in ideal_masks.iter().enumerate() {
        check_mask_shape(v, m.values())?;
        let a = &mut data[i * k..(i + 1) * k];
        let mut total = 0.0;
        for (j, &w) in m.values().as_slice().iter().enumerate() {
            if w != 0.0 {
                crate::math::axpy(w, v.column(j), a);
                total += w;
            }
        }
        if total == 0.0 {
            return Err(Error::EmptyMask(i));
        }
        for x in a.iter_mut() {
            *x /= total;
        }
    }
    AttractorSet::new(k, data)
}

/// `m̂_i = σ(a_i V)` reshaped to `F × T`.
pub fn estimate_masks(v: &EmbeddingMatrix, attractors: &AttractorSet) -> Result<Vec<SoftMask>> {
    if attractors.dim() != v.dim() {
        return Err(Error::shape(format!(
            "attractors have dimension {}, embeddings {}",
            attractors.dim(),
            v.dim()
        )));
    }
    Ok((0..attractors.len())
        .map(|i| {
            let a = attractors.get(i);
            let values = (0..v.columns())
                .map(|j| sigmoid(dot(a, v.column(j))))
                .collect();
            SoftMask {
                values: RealTf::from_frame_major(v.bins(), v.frames(), values)
                    .expect("shape by construction"),
                speaker_index: i,
            }
        })
        .collect())
}

/// `(1/N) Σ_i ‖X ⊙ (m_i − m̂_i)‖²` over all bins, `X` the linear magnitude.
pub fn loss(mix_mag: &RealTf, ideal: &[BinaryMask], est: &[SoftMask]) -> Result<f64> {
    if ideal.len() != est.len() || ideal.is_empty() {
        return Err(Error::shape(format!(
            "{} ideal vs {} estimated masks",
            ideal.len(),
            est.len()
        )));
    }
    let mut sum = 0.0;
    for (m, e) in ideal.iter().zip(est) {
        mix_mag.check_same_shape(m.values(), "ideal mask")?;
        mix_mag.check_same_shape(&e.values, "estimated mask")?;
        for ((x, a), b) in mix_mag
            .as_slice()
            .iter()
            .zip(m.values().as_slice())
            .zip(e.values.as_slice())
        {
            let d = x * (a - b);
            sum += d * d;
        }
    }
    Ok(sum / ideal.len() as f64)
}

/// Loss and its gradient w.r.t. every embedding (same layout as
/// [`EmbeddingMatrix::as_points`]), through the attractors, the inner
/// products and the sigmoid.
pub fn loss_and_embedding_grad(
    v: &EmbeddingMatrix,
    mix_mag: &RealTf,
    ideal: &[BinaryMask],
) -> Result<(f64, Vec<f64>)> {
    check_mask_shape(v, mix_mag)?;
    let attractors = train_attractors(v, ideal)?;
    let n = ideal.len();
    let k = v.dim();
    let m_cols = v.columns();
    let scale = 2.0 / n as f64;
    let x = mix_mag.as_slice();
    let mut grad = vec![0.0; m_cols * k];
    let mut d_attr = vec![0.0; n * k];
    let mut total = 0.0;
    for (i, mask) in ideal.iter().enumerate() {
        let a = attractors.get(i);
        let mv = mask.values().as_slice();
        let ga = &mut d_attr[i * k..(i + 1) * k];
        for j in 0..m_cols {
            let vj = v.column(j);
            let s = sigmoid(dot(a, vj));
            let diff = mv[j] - s;
            let x2 = x[j] * x[j];
            total += x2 * diff * diff;
            let g = -scale * x2 * diff * s * (1.0 - s);
            if g != 0.0 {
                crate::math::axpy(g, a, &mut grad[j * k..(j + 1) * k]);
                crate::math::axpy(g, vj, ga);
            }
        }
    }
    for (i, mask) in ideal.iter().enumerate() {
        let mv = mask.values().as_slice();
        let count: f64 = mv.iter().sum();
        let ga = &d_attr[i * k..(i + 1) * k];
        for j in 0..m_cols {
            if mv[j] != 0.0 {
                crate::math::axpy(mv[j] / count, ga, &mut grad[j * k..(j + 1) * k]);
            }
        }
    }
    Ok((total / n as f64, grad))
}

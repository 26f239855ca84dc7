//! GRU recurrences and their backward pass.
//!
//! ```text
//! z = σ(W_z x + b_iz + U_z h' + b_hz)
//! r = σ(W_r x + b_ir + U_r h' + b_hr)
//! n = tanh(W_n x + b_in + r ⊙ (U_n h' + b_hn))
//! h = (1 − z) ⊙ n + z ⊙ h'
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::params::DirParams;
use crate::math::{dot, gemm, sigmoid, tanh};
use crate::{Error, Result};

/// One GRU step.
pub fn gru_cell(x: &[f64], h_prev: &[f64], p: &DirParams<'_>) -> Result<Vec<f64>> {
    let h = p.hidden;
    if x.len() != p.input_dim || h_prev.len() != h {
        return Err(Error::shape(format!(
            "gru_cell: x has {} (want {}), h_prev has {} (want {h})",
            x.len(),
            p.input_dim,
            h_prev.len()
        )));
    }
    let proj: Vec<f64> = (0..3 * h)
        .map(|g| dot(&p.w_in[g * p.input_dim..(g + 1) * p.input_dim], x) + p.b_in[g])
        .collect();
    let mut out = vec![0.0; h];
    step(&proj, h_prev, p, &mut StepOut::discard(), &mut out);
    Ok(out)
}

/// Buffers a step may fill for the backward pass.
struct StepOut<'a> {
    z: Option<&'a mut [f64]>,
    r: Option<&'a mut [f64]>,
    n: Option<&'a mut [f64]>,
    rec_n: Option<&'a mut [f64]>,
}

impl StepOut<'_> {
    fn discard() -> Self {
        Self {
            z: None,
            r: None,
            n: None,
            rec_n: None,
        }
    }
}

#[inline]
fn step(
    proj: &[f64],
    h_prev: &[f64],
    p: &DirParams<'_>,
    keep: &mut StepOut<'_>,
    h_out: &mut [f64],
) {
    let h = p.hidden;
    for i in 0..h {
        let rec = |g: usize| dot(&p.w_rec[g * h..(g + 1) * h], h_prev) + p.b_rec[g];
        let z = sigmoid(proj[i] + rec(i));
        let r = sigmoid(proj[h + i] + rec(h + i));
        let rn = rec(2 * h + i);
        let n = tanh(proj[2 * h + i] + r * rn);
        h_out[i] = (1.0 - z) * n + z * h_prev[i];
        if let Some(b) = keep.z.as_deref_mut() {
            b[i] = z;
        }
        if let Some(b) = keep.r.as_deref_mut() {
            b[i] = r;
        }
        if let Some(b) = keep.n.as_deref_mut() {
            b[i] = n;
        }
        if let Some(b) = keep.rec_n.as_deref_mut() {
            b[i] = rn;
        }
    }
}

/// Activations of one direction over a whole sequence, indexed by time
/// (not by processing order).
#[derive(Debug, Clone)]
pub struct DirTrace {
    pub hidden: usize,
    pub frames: usize,
    pub reverse: bool,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    pub rec_n: Vec<f64>,
    /// `T × h` outputs.
    pub h: Vec<f64>,
}

impl DirTrace {
    fn prev_index(&self, t: usize) -> Option<usize> {
        if self.reverse {
            (t + 1 < self.frames).then_some(t + 1)
        } else {
            t.checked_sub(1)
        }
    }
}

/// Runs one direction over `input` (`T × in`, row-major).
pub fn run_direction(input: &[f64], frames: usize, p: &DirParams<'_>, reverse: bool) -> DirTrace {
    let h = p.hidden;
    let ind = p.input_dim;
    debug_assert_eq!(input.len(), frames * ind);
    let mut proj = vec![0.0; frames * 3 * h];
    gemm(
        frames,
        ind,
        3 * h,
        1.0,
        input,
        false,
        p.w_in,
        true,
        0.0,
        &mut proj,
    );
    for row in proj.chunks_exact_mut(3 * h) {
        for (v, b) in row.iter_mut().zip(p.b_in) {
            *v += b;
        }
    }
    let mut tr = DirTrace {
        hidden: h,
        frames,
        reverse,
        z: vec![0.0; frames * h],
        r: vec![0.0; frames * h],
        n: vec![0.0; frames * h],
        rec_n: vec![0.0; frames * h],
        h: vec![0.0; frames * h],
    };
    let zero = vec![0.0; h];
    let mut h_prev = zero.clone();
    for s in 0..frames {
        let t = if reverse { frames - 1 - s } else { s };
        let rows = t * h..(t + 1) * h;
        let mut keep = StepOut {
            z: Some(&mut tr.z[rows.clone()]),
            r: Some(&mut tr.r[rows.clone()]),
            n: Some(&mut tr.n[rows.clone()]),
            rec_n: Some(&mut tr.rec_n[rows.clone()]),
        };
        step(
            &proj[t * 3 * h..(t + 1) * 3 * h],
            &h_prev,
            p,
            &mut keep,
            &mut tr.h[rows.clone()],
        );
        h_prev.copy_from_slice(&tr.h[rows]);
    }
    tr
}

/// Mutable gradient view matching [`DirParams`].
pub struct DirGrads<'a> {
    pub w_in: &'a mut [f64],
    pub w_rec: &'a mut [f64],
    pub b_in: &'a mut [f64],
    pub b_rec: &'a mut [f64],
}

/// Backpropagation through time for one direction.
///
/// `d_out` is the gradient w.r.t. this direction's outputs (`T × h`).
/// Parameter gradients are accumulated into `grads`; the gradient w.r.t. the
/// direction's input is accumulated into `d_input` (`T × in`) when given.
pub fn backprop_direction(
    input: &[f64],
    p: &DirParams<'_>,
    tr: &DirTrace,
    d_out: &[f64],
    grads: &mut DirGrads<'_>,
    d_input: Option<&mut [f64]>,
) {
    let h = p.hidden;
    let frames = tr.frames;
    let ind = p.input_dim;
    let mut d_pre_in = vec![0.0; frames * 3 * h];
    let mut d_pre_rec = vec![0.0; frames * 3 * h];
    let mut h_prev_all = vec![0.0; frames * h];
    let mut carry = vec![0.0; h];
    for s in (0..frames).rev() {
        let t = if tr.reverse { frames - 1 - s } else { s };
        let row = t * h;
        let prev = tr.prev_index(t);
        if let Some(pt) = prev {
            h_prev_all[row..row + h].copy_from_slice(&tr.h[pt * h..(pt + 1) * h]);
        }
        let dpi = &mut d_pre_in[t * 3 * h..(t + 1) * 3 * h];
        let dpr = &mut d_pre_rec[t * 3 * h..(t + 1) * 3 * h];
        for i in 0..h {
            let dh = d_out[row + i] + carry[i];
            let z = tr.z[row + i];
            let r = tr.r[row + i];
            let n = tr.n[row + i];
            let hp = h_prev_all[row + i];
            let dn = dh * (1.0 - z);
            let dz = dh * (hp - n);
            carry[i] = dh * z;
            let dan = dn * (1.0 - n * n);
            let dr = dan * tr.rec_n[row + i];
            let daz = dz * z * (1.0 - z);
            let dar = dr * r * (1.0 - r);
            dpi[i] = daz;
            dpi[h + i] = dar;
            dpi[2 * h + i] = dan;
            dpr[i] = daz;
            dpr[h + i] = dar;
            dpr[2 * h + i] = dan * r;
        }
        for (g, &dg) in dpr.iter().enumerate() {
            if dg != 0.0 {
                crate::math::axpy(dg, &p.w_rec[g * h..(g + 1) * h], &mut carry);
            }
        }
    }
    gemm(
        3 * h,
        frames,
        ind,
        1.0,
        &d_pre_in,
        true,
        input,
        false,
        1.0,
        grads.w_in,
    );
    gemm(
        3 * h,
        frames,
        h,
        1.0,
        &d_pre_rec,
        true,
        &h_prev_all,
        false,
        1.0,
        grads.w_rec,
    );
    for t in 0..frames {
        for g in 0..3 * h {
            grads.b_in[g] += d_pre_in[t * 3 * h + g];
            grads.b_rec[g] += d_pre_rec[t * 3 * h + g];
        }
    }
    if let Some(d_input) = d_input {
        gemm(
            frames,
            3 * h,
            ind,
            1.0,
            &d_pre_in,
            false,
            p.w_in,
            false,
            1.0,
            d_input,
        );
    }
}

use core::ops::Range;

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    /// Only supported for parameter counting.
    Lstm,
}

impl CellKind {
    /// Gates (including the candidate) per cell.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

/// Shape of the embedding network: a stack of bidirectional recurrent layers
/// followed by one linear map to `embed_dim` values per frequency bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub num_layers: usize,
    /// Units per direction; a layer outputs twice this many values.
    pub hidden: usize,
    pub embed_dim: usize,
    pub cell: CellKind,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            input_dim: 129,
            num_layers: 4,
            hidden: 300,
            embed_dim: 20,
            cell: CellKind::Gru,
        }
    }
}

impl ArchSpec {
    pub fn fc_output(&self) -> usize {
        self.embed_dim * self.input_dim
    }

    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            2 * self.hidden
        }
    }

    /// Checks the architecture can be built and trained.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_layers == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::invalid(format!(
                "all architecture sizes must be positive: {self:?}"
            )));
        }
        if self.cell != CellKind::Gru {
            return Err(Error::invalid(
                "only GRU networks can be built; LSTM is count-only",
            ));
        }
        Ok(())
    }
}

/// Closed-form parameter count. Each direction of each layer has
/// `G·(in·h + h·h + 2h)` weights (input and recurrent matrices, input and
/// recurrent bias per gate), and the output map has `2h·KF + KF`.
pub fn count_params(arch: &ArchSpec) -> u64 {
    let g = arch.cell.gates() as u64;
    let h = arch.hidden as u64;
    let recurrent: u64 = (0..arch.num_layers)
        .map(|l| {
            let input = arch.layer_input(l) as u64;
            2 * g * (input * h + h * h + 2 * h)
        })
        .sum();
    let kf = arch.fc_output() as u64;
    let fc = if kf == 0 { 0 } else { 2 * h * kf + kf };
    recurrent + fc
}

/// Offsets of one direction's tensors inside the flat parameter vector.
/// Gate blocks are stacked in the order z, r, n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirLayout {
    pub input_dim: usize,
    /// `3h × in`
    pub w_in: Range<usize>,
    /// `3h × h`
    pub w_rec: Range<usize>,
    pub b_in: Range<usize>,
    pub b_rec: Range<usize>,
}

/// Flat layout: for each layer, forward then backward direction, each as
/// `w_in, w_rec, b_in, b_rec`; then the output map `w_fc` (`KF × 2h`, row
/// `f·K + k`) and `b_fc`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub dirs: Vec<[DirLayout; 2]>,
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(arch: &ArchSpec) -> Self {
        let h = arch.hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let mut dirs = Vec::with_capacity(arch.num_layers);
        for l in 0..arch.num_layers {
            let input = arch.layer_input(l);
            let mut one = || DirLayout {
                input_dim: input,
                w_in: take(3 * h * input),
                w_rec: take(3 * h * h),
                b_in: take(3 * h),
                b_rec: take(3 * h),
            };
            let fwd = one();
            let bwd = one();
            dirs.push([fwd, bwd]);
        }
        let kf = arch.fc_output();
        let w_fc = take(kf * 2 * h);
        let b_fc = take(kf);
        Self {
            dirs,
            w_fc,
            b_fc,
            total: at,
        }
    }

    /// Named tensor ranges in layout order, for diagnostics.
    pub fn tensors(&self) -> Vec<(alloc::string::String, Range<usize>)> {
        let mut out = Vec::new();
        for (l, pair) in self.dirs.iter().enumerate() {
            for (d, dl) in pair.iter().enumerate() {
                let dir = if d == 0 { "fwd" } else { "bwd" };
                out.push((format!("layer{l}.{dir}.w_in"), dl.w_in.clone()));
                out.push((format!("layer{l}.{dir}.w_rec"), dl.w_rec.clone()));
                out.push((format!("layer{l}.{dir}.b_in"), dl.b_in.clone()));
                out.push((format!("layer{l}.{dir}.b_rec"), dl.b_rec.clone()));
            }
        }
        out.push(("fc.w".into(), self.w_fc.clone()));
        out.push(("fc.b".into(), self.b_fc.clone()));
        out
    }
}

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchSpec, DirLayout, ParamLayout};
use crate::dsp::FeatureStats;
use crate::math::sqrt;
use crate::{Error, Result};

/// Every trainable weight of the network in one flat vector (see
/// [`ParamLayout`] for the order), plus the input standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchSpec,
    layout: ParamLayout,
    pub values: Vec<f64>,
    pub stats: FeatureStats,
}

/// Borrowed view of one direction of one recurrent layer.
#[derive(Debug, Clone, Copy)]
pub struct DirParams<'a> {
    pub hidden: usize,
    pub input_dim: usize,
    pub w_in: &'a [f64],
    pub w_rec: &'a [f64],
    pub b_in: &'a [f64],
    pub b_rec: &'a [f64],
}

impl<'a> DirParams<'a> {
    pub(crate) fn from_layout(values: &'a [f64], dl: &DirLayout, hidden: usize) -> Self {
        Self {
            hidden,
            input_dim: dl.input_dim,
            w_in: &values[dl.w_in.clone()],
            w_rec: &values[dl.w_rec.clone()],
            b_in: &values[dl.b_in.clone()],
            b_rec: &values[dl.b_rec.clone()],
        }
    }
}

impl ModelParams {
    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        let layout = ParamLayout::new(&arch);
        Ok(Self {
            values: vec![0.0; layout.total],
            stats: FeatureStats::identity(arch.input_dim),
            arch,
            layout,
        })
    }

    /// Uniform in `[−1/√h, 1/√h]` for every tensor, `h` the per-direction width.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let bound = 1.0 / sqrt(arch.hidden as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut p.values {
            *v = rng.gen_range(-bound..=bound);
        }
        Ok(p)
    }

    pub fn from_values(arch: ArchSpec, values: Vec<f64>, stats: FeatureStats) -> Result<Self> {
        arch.validate()?;
        let layout = ParamLayout::new(&arch);
        if values.len() != layout.total {
            return Err(Error::shape(format!(
                "{} parameter values for an architecture with {}",
                values.len(),
                layout.total
            )));
        }
        if stats.bins() != arch.input_dim || stats.std.len() != arch.input_dim {
            return Err(Error::shape(
                "feature statistics do not match the input dimension",
            ));
        }
        if !crate::math::all_finite(&values) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(Self {
            arch,
            layout,
            values,
            stats,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dir(&self, layer: usize, direction: usize) -> DirParams<'_> {
        DirParams::from_layout(
            &self.values,
            &self.layout.dirs[layer][direction],
            self.arch.hidden,
        )
    }

    pub fn w_fc(&self) -> &[f64] {
        &self.values[self.layout.w_fc.clone()]
    }

    pub fn b_fc(&self) -> &[f64] {
        &self.values[self.layout.b_fc.clone()]
    }

    pub fn b_fc_mut(&mut self) -> &mut [f64] {
        let r = self.layout.b_fc.clone();
        &mut self.values[r]
    }
}

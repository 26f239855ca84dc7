//! Ideal masks and mask application.

use alloc::format;
use alloc::vec::Vec;

use crate::dsp::{polar, ComplexSpectrogram};
use crate::math::log10;
use crate::tf::RealTf;
use crate::{Error, Result};

/// Continuous mask with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub values: RealTf,
    pub speaker_index: usize,
}

/// Mask with entries exactly `0.0` or `1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    values: RealTf,
    pub speaker_index: usize,
}

impl BinaryMask {
    pub fn new(values: RealTf, speaker_index: usize) -> Result<Self> {
        if values.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("binary mask entries must be 0 or 1"));
        }
        Ok(Self {
            values,
            speaker_index,
        })
    }

    pub fn values(&self) -> &RealTf {
        &self.values
    }

    pub fn active_bins(&self) -> usize {
        self.values.as_slice().iter().filter(|&&v| v == 1.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskThreshold(f64);

impl MaskThreshold {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::invalid(format!(
                "threshold must lie in (0, 1), got {tau}"
            )));
        }
        Ok(Self(tau))
    }

    pub fn tau(self) -> f64 {
        self.0
    }
}

impl Default for MaskThreshold {
    fn default() -> Self {
        Self(0.5)
    }
}

/// Power-ratio masks `|s_i|² / Σ_j |s_j|²`. Bins where every source is silent
/// get `1/N` for each speaker, so the masks always sum to one.
pub fn wiener_like_masks(source_mags: &[RealTf]) -> Result<Vec<SoftMask>> {
    let first = source_mags
        .first()
        .ok_or(Error::Empty("source magnitudes"))?;
    for m in source_mags {
        first.check_same_shape(m, "source magnitudes")?;
        if m.as_slice().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("magnitudes must be nonnegative"));
        }
    }
    let n = source_mags.len();
    let uniform = 1.0 / n as f64;
    let mut masks: Vec<SoftMask> = (0..n)
        .map(|i| SoftMask {
            values: RealTf::zeros(first.bins(), first.frames()),
            speaker_index: i,
        })
        .collect();
    for j in 0..first.len() {
        let total: f64 = source_mags
            .iter()
            .map(|m| m.as_slice()[j] * m.as_slice()[j])
            .sum();
        for (mask, mag) in masks.iter_mut().zip(source_mags) {
            let p = mag.as_slice()[j];
            mask.values.as_mut_slice()[j] = if total > 0.0 { p * p / total } else { uniform };
        }
    }
    Ok(masks)
}

/// `1` where the soft mask strictly exceeds `tau`.
pub fn binarize(mask: &SoftMask, tau: MaskThreshold) -> BinaryMask {
    BinaryMask {
        values: mask.values.map(|v| if v > tau.tau() { 1.0 } else { 0.0 }),
        speaker_index: mask.speaker_index,
    }
}

/// Rebuilds a complex spectrogram from `mask ⊙ |X|` and the mixture phase.
pub fn apply_mask(
    mix_mag: &RealTf,
    mask: &RealTf,
    mix_phase: &RealTf,
    source_len: usize,
) -> Result<ComplexSpectrogram> {
    mix_mag.check_same_shape(mask, "mask vs magnitude")?;
    mix_mag.check_same_shape(mix_phase, "phase vs magnitude")?;
    let masked = RealTf::from_frame_major(
        mix_mag.bins(),
        mix_mag.frames(),
        mix_mag
            .as_slice()
            .iter()
            .zip(mask.as_slice())
            .map(|(x, m)| x * m)
            .collect(),
    )?;
    Ok(ComplexSpectrogram {
        bins: polar(&masked, mix_phase)?,
        source_len,
    })
}

/// Optional low-energy gate: `1.0` for bins within `floor_db` of the loudest
/// bin, `0.0` below it.
pub fn energy_gate(mix_mag: &RealTf, floor_db: f64) -> RealTf {
    let peak = mix_mag.as_slice().iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return RealTf::zeros(mix_mag.bins(), mix_mag.frames());
    }
    mix_mag.map(|m| {
        if m > 0.0 && 20.0 * log10(m / peak) >= floor_db {
            1.0
        } else {
            0.0
        }
    })
}

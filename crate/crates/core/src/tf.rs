//! Time-frequency matrices.
//!
//! An `F x T` matrix is stored frame-major: entry `(f, t)` lives at
//! `t * F + f`. Flattening a matrix therefore gives exactly the column order
//! of the embedding matrix `V` (column `t·F + f`), so masks, magnitudes and
//! embeddings index the same bins without reshaping.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TfMatrix<T> {
    bins: usize,
    frames: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> TfMatrix<T> {
    pub fn zeros(bins: usize, frames: usize) -> Self {
        Self {
            bins,
            frames,
            data: vec![T::default(); bins * frames],
        }
    }
}

impl<T: Copy> TfMatrix<T> {
    pub fn filled(bins: usize, frames: usize, value: T) -> Self {
        Self {
            bins,
            frames,
            data: vec![value; bins * frames],
        }
    }

    pub fn from_frame_major(bins: usize, frames: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != bins * frames {
            return Err(Error::shape(alloc::format!(
                "{} values for a {bins}x{frames} matrix",
                data.len()
            )));
        }
        Ok(Self { bins, frames, data })
    }

    pub fn from_fn(bins: usize, frames: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(bins * frames);
        for t in 0..frames {
            for b in 0..bins {
                data.push(f(b, t));
            }
        }
        Self { bins, frames, data }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, f: usize, t: usize) -> T {
        self.data[t * self.bins + f]
    }

    #[inline]
    pub fn set(&mut self, f: usize, t: usize, v: T) {
        self.data[t * self.bins + f] = v;
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [T] {
        &mut self.data[t * self.bins..(t + 1) * self.bins]
    }

    /// Flat frame-major view (`t·F + f`).
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> TfMatrix<U> {
        TfMatrix {
            bins: self.bins,
            frames: self.frames,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn check_same_shape<U: Copy>(&self, other: &TfMatrix<U>, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(alloc::format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

pub type RealTf = TfMatrix<f64>;

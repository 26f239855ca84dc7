//! Inference-time clustering of embeddings. Attractors are cluster centres:
//! k-means centres or GMM means.

mod gmm;
mod kmeans;

pub use gmm::{gmm_fit, gmm_posterior, GmmConfig, GmmModel};
pub use kmeans::{kmeans, KMeansConfig, KMeansResult};

use alloc::format;
use alloc::vec::Vec;

use crate::danet::{AttractorSet, EmbeddingMatrix};
use crate::tf::RealTf;
use crate::{Error, Result};

/// `M` points of dimension `K`, row-major.
#[derive(Debug, Clone, Copy)]
pub struct PointCloud<'a> {
    dim: usize,
    data: &'a [f64],
}

impl<'a> PointCloud<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::shape(format!(
                "{} values do not form points of dimension {dim}",
                data.len()
            )));
        }
        if !crate::math::all_finite(data) {
            return Err(Error::NonFinite("point cloud"));
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

    #[inline]
    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.data
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = alloc::vec![0.0; self.dim];
        for i in 0..self.len() {
            crate::math::axpy(1.0, self.point(i), &mut m);
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Biased covariance of the whole cloud, `K × K`.
    pub fn covariance(&self) -> Vec<f64> {
        let k = self.dim;
        let mean = self.mean();
        let mut c = alloc::vec![0.0; k * k];
        let mut d = alloc::vec![0.0; k];
        for i in 0..self.len() {
            for (j, (x, m)) in self.point(i).iter().zip(&mean).enumerate() {
                d[j] = x - m;
            }
            for a in 0..k {
                for b in 0..k {
                    c[a * k + b] += d[a] * d[b];
                }
            }
        }
        let n = self.len().max(1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterAlgo {
    KMeans,
    Gmm,
}

impl core::str::FromStr for ClusterAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" | "k-means" => Ok(Self::KMeans),
            "gmm" => Ok(Self::Gmm),
            other => Err(Error::invalid(format!(
                "unknown clustering algorithm {other:?}"
            ))),
        }
    }
}

impl core::fmt::Display for ClusterAlgo {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::KMeans => "kmeans",
            Self::Gmm => "gmm",
        })
    }
}

/// Regularization added to every GMM covariance: `1e-6 · tr(Σ_global) / K`,
/// floored so degenerate clouds still factor.
pub fn default_reg(cloud: &PointCloud<'_>) -> f64 {
    let k = cloud.dim();
    let cov = cloud.covariance();
    let trace: f64 = (0..k).map(|i| cov[i * k + i]).sum();
    (1e-6 * trace / k as f64).max(1e-12)
}

/// Cluster centres of the embedding columns, ordered by descending mass
/// (point count for k-means, mixture weight for the GMM). When `gate` is
/// given, only bins where it is nonzero are clustered.
pub fn cluster_attractors_with(
    v: &EmbeddingMatrix,
    n_speakers: usize,
    algo: ClusterAlgo,
    seed: u64,
    gate: Option<&RealTf>,
) -> Result<AttractorSet> {
    if n_speakers == 0 {
        return Err(Error::invalid("at least one speaker is required"));
    }
    let gated: Vec<f64>;
    let points = match gate {
        Some(g) => {
            if g.shape() != (v.bins(), v.frames()) {
                return Err(Error::shape("energy gate does not match the embeddings"));
            }
            gated = (0..v.columns())
                .filter(|&j| g.as_slice()[j] != 0.0)
                .flat_map(|j| v.column(j).iter().copied())
                .collect();
            &gated[..]
        }
        None => v.as_points(),
    };
    let cloud = PointCloud::new(points, v.dim())?;
    let k = cloud.dim();
    let (centers, mass): (Vec<f64>, Vec<f64>) = match algo {
        ClusterAlgo::KMeans => {
            let r = kmeans(
                &cloud,
                &KMeansConfig {
                    seed,
                    ..KMeansConfig::new(n_speakers)
                },
            )?;
            let mut counts = alloc::vec![0.0; n_speakers];
            for &a in &r.assignments {
                counts[a] += 1.0;
            }
            (r.centers, counts)
        }
        ClusterAlgo::Gmm => {
            let m = gmm_fit(
                &cloud,
                &GmmConfig {
                    seed,
                    ..GmmConfig::new(n_speakers)
                },
            )?;
            (m.means, m.weights)
        }
    };
    let mut order: Vec<usize> = (0..n_speakers).collect();
    // stable sort keeps the fit's order among equal masses
    order.sort_by(|&a, &b| {
        mass[b]
            .partial_cmp(&mass[a])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let data = order
        .iter()
        .flat_map(|&c| centers[c * k..(c + 1) * k].iter().copied())
        .collect();
    AttractorSet::new(k, data)
}

pub fn cluster_attractors(
    v: &EmbeddingMatrix,
    n_speakers: usize,
    algo: ClusterAlgo,
    seed: u64,
) -> Result<AttractorSet> {
    cluster_attractors_with(v, n_speakers, algo, seed, None)
}

#[cfg(test)]
mod tests;

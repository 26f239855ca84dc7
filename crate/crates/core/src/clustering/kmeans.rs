use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sq_dist, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop when a Lloyd iteration lowers the inertia by less than this
    /// fraction of it.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iter: 300,
            tol: 1e-9,
            restarts: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `k × K`
    pub centers: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning run.
    pub history: Vec<f64>,
}

fn plus_plus_seed(cloud: &PointCloud<'_>, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = cloud.len();
    let dim = cloud.dim();
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(cloud.point(rng.gen_range(0..m)));
    let mut d2: Vec<f64> = (0..m)
        .map(|i| sq_dist(cloud.point(i), &centers[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..m)
        };
        let c = cloud.point(pick);
        centers.extend_from_slice(c);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(cloud.point(i), c));
        }
    }
    centers
}

fn assign(cloud: &PointCloud<'_>, centers: &[f64], k: usize, labels: &mut [usize]) -> f64 {
    let dim = cloud.dim();
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let p = cloud.point(i);
        let mut best = (0, f64::INFINITY);
        for c in 0..k {
            let d = sq_dist(p, &centers[c * dim..(c + 1) * dim]);
            if d < best.1 {
                best = (c, d);
            }
        }
        *label = best.0;
        inertia += best.1;
    }
    inertia
}

fn lloyd(cloud: &PointCloud<'_>, cfg: &KMeansConfig, rng: &mut ChaCha8Rng) -> KMeansResult {
    let (k, dim, m) = (cfg.k, cloud.dim(), cloud.len());
    let mut centers = plus_plus_seed(cloud, k, rng);
    let mut labels = vec![0usize; m];
    let mut inertia = assign(cloud, &centers, k, &mut labels);
    let mut history = vec![inertia];
    for _ in 0..cfg.max_iter {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            crate::math::axpy(1.0, cloud.point(i), &mut sums[l * dim..(l + 1) * dim]);
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centers[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        // An empty cluster takes over the point farthest from its centre.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..m)
                    .map(|i| {
                        (
                            i,
                            sq_dist(
                                cloud.point(i),
                                &centers[labels[i] * dim..(labels[i] + 1) * dim],
                            ),
                        )
                    })
                    .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a })
                    .0;
                centers[c * dim..(c + 1) * dim].copy_from_slice(cloud.point(far));
                counts[c] = 1;
                counts[labels[far]] -= 1;
                labels[far] = c;
            }
        }
        let prev_labels = labels.clone();
        let next = assign(cloud, &centers, k, &mut labels);
        history.push(next);
        let improved = inertia - next;
        inertia = next;
        if labels == prev_labels || improved <= cfg.tol * inertia {
            break;
        }
    }
    KMeansResult {
        centers,
        assignments: labels,
        inertia,
        history,
    }
}

/// Lloyd's algorithm from k-means++ seeding; best of `restarts` runs.
pub fn kmeans(cloud: &PointCloud<'_>, cfg: &KMeansConfig) -> Result<KMeansResult> {
    if cfg.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if cfg.k > cloud.len() {
        return Err(Error::TooFewPoints {
            k: cfg.k,
            m: cloud.len(),
        });
    }
    if cfg.restarts == 0 {
        return Err(Error::invalid(format!(
            "restarts must be positive, got {}",
            cfg.restarts
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..cfg.restarts {
        let run = lloyd(cloud, cfg, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

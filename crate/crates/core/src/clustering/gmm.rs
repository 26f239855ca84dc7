use alloc::vec;
use alloc::vec::Vec;

use super::kmeans::{kmeans, KMeansConfig};
use super::{default_reg, PointCloud};
use crate::linalg::{cholesky_with_jitter, Cholesky};
use crate::math::{exp, log, PI};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the mean log-likelihood improves by less than this.
    pub tol: f64,
    /// Added to every covariance diagonal; `None` uses [`default_reg`].
    pub reg: Option<f64>,
    pub seed: u64,
    pub kmeans_restarts: usize,
    /// Freeze every covariance to `σ²·I` and the weights to `1/k`, leaving
    /// only the means free.
    pub frozen_isotropic: Option<f64>,
}

impl GmmConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iter: 100,
            tol: 1e-6,
            reg: None,
            seed: 0,
            kmeans_restarts: 5,
            frozen_isotropic: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `k × K`
    pub means: Vec<f64>,
    /// `k` row-major `K × K` blocks.
    pub covariances: Vec<f64>,
    /// Mean per-point log-likelihood of the returned parameters.
    pub log_likelihood: f64,
    /// Mean log-likelihood at the start of every EM iteration, ending with
    /// the returned model's.
    pub history: Vec<f64>,
    pub reg: f64,
    dim: usize,
    factors: Vec<Cholesky>,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn covariance(&self, c: usize) -> &[f64] {
        let kk = self.dim * self.dim;
        &self.covariances[c * kk..(c + 1) * kk]
    }

    /// Builds a model from explicit parameters (covariances must be SPD).
    pub fn from_parts(
        weights: Vec<f64>,
        means: Vec<f64>,
        covariances: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k * dim || covariances.len() != k * dim * dim {
            return Err(Error::shape("inconsistent GMM parameter sizes"));
        }
        let factors = (0..k)
            .map(|c| Cholesky::new(&covariances[c * dim * dim..(c + 1) * dim * dim], dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            weights,
            means,
            covariances,
            log_likelihood: f64::NAN,
            history: Vec::new(),
            reg: 0.0,
            dim,
            factors,
        })
    }

    /// Per-component `log π_c + log N(x | μ_c, Σ_c)` for one point.
    fn log_joint(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let k = self.dim;
        let base = -0.5 * k as f64 * log(2.0 * PI);
        for c in 0..self.components() {
            for (s, (a, b)) in scratch.iter_mut().zip(x.iter().zip(self.mean(c))) {
                *s = a - b;
            }
            self.factors[c].forward_solve(scratch);
            let maha: f64 = scratch.iter().map(|v| v * v).sum();
            out[c] = log(self.weights[c]) + base - 0.5 * self.factors[c].log_det() - 0.5 * maha;
        }
    }

    /// Fills `resp` (`M × k`) with posteriors and returns the mean
    /// log-likelihood.
    fn e_step(&self, cloud: &PointCloud<'_>, resp: &mut [f64]) -> f64 {
        let k = self.components();
        let mut scratch = vec![0.0; self.dim];
        let mut total = 0.0;
        for i in 0..cloud.len() {
            let row = &mut resp[i * k..(i + 1) * k];
            self.log_joint(cloud.point(i), row, &mut scratch);
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v = exp(*v - lse);
            }
            total += lse;
        }
        total / cloud.len() as f64
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + log(v.iter().map(|x| exp(x - m)).sum::<f64>())
}

/// Posterior responsibilities, `M × k` row-major.
pub fn gmm_posterior(model: &GmmModel, cloud: &PointCloud<'_>) -> Result<Vec<f64>> {
    if cloud.dim() != model.dim {
        return Err(Error::shape("points and model differ in dimension"));
    }
    let mut resp = vec![0.0; cloud.len() * model.components()];
    model.e_step(cloud, &mut resp);
    Ok(resp)
}

/// Writes the weighted covariance of component `c` into `out`.
fn weighted_cov(
    cloud: &PointCloud<'_>,
    resp: &[f64],
    k: usize,
    c: usize,
    mean: &[f64],
    nk: f64,
    out: &mut [f64],
) {
    let dim = cloud.dim();
    out.fill(0.0);
    let mut d = vec![0.0; dim];
    for i in 0..cloud.len() {
        let r = resp[i * k + c];
        if r == 0.0 {
            continue;
        }
        for (j, (x, m)) in cloud.point(i).iter().zip(mean).enumerate() {
            d[j] = x - m;
        }
        for a in 0..dim {
            let ra = r * d[a];
            for b in a..dim {
                out[a * dim + b] += ra * d[b];
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = out[a * dim + b] / nk;
            out[a * dim + b] = v;
            out[b * dim + a] = v;
        }
    }
}

fn m_step(cloud: &PointCloud<'_>, resp: &[f64], model: &mut GmmModel, cfg: &GmmConfig) {
    let k = model.components();
    let dim = cloud.dim();
    let m = cloud.len();
    for c in 0..k {
        let nk: f64 = (0..m).map(|i| resp[i * k + c]).sum();
        if nk <= 1e-300 {
            // a component with no support keeps its parameters
            continue;
        }
        if cfg.frozen_isotropic.is_none() {
            model.weights[c] = nk / m as f64;
        }
        let mean = &mut model.means[c * dim..(c + 1) * dim];
        mean.fill(0.0);
        for i in 0..m {
            crate::math::axpy(resp[i * k + c], cloud.point(i), mean);
        }
        mean.iter_mut().for_each(|v| *v /= nk);
        if cfg.frozen_isotropic.is_none() {
            let mean = model.means[c * dim..(c + 1) * dim].to_vec();
            let cov = &mut model.covariances[c * dim * dim..(c + 1) * dim * dim];
            weighted_cov(cloud, resp, k, c, &mean, nk, cov);
            for a in 0..dim {
                cov[a * dim + a] += model.reg;
            }
        }
    }
    let wsum: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= wsum);
    refactor(model);
}

/// Refreshes the Cholesky factors, regularizing further if a covariance has
/// collapsed.
fn refactor(model: &mut GmmModel) {
    let dim = model.dim;
    let kk = dim * dim;
    model.factors.clear();
    for c in 0..model.components() {
        let cov = &mut model.covariances[c * kk..(c + 1) * kk];
        let (chol, extra) = cholesky_with_jitter(cov, dim, model.reg.max(1e-300));
        if extra > 0.0 {
            for a in 0..dim {
                cov[a * dim + a] += extra;
            }
        }
        model.factors.push(chol);
    }
}

/// Full-covariance GMM fitted by EM, initialized from k-means.
pub fn gmm_fit(cloud: &PointCloud<'_>, cfg: &GmmConfig) -> Result<GmmModel> {
    let k = cfg.k;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > cloud.len() {
        return Err(Error::TooFewPoints { k, m: cloud.len() });
    }
    let reg = match cfg.reg {
        Some(r) if !(r > 0.0) => {
            return Err(Error::invalid("covariance regularization must be positive"))
        }
        Some(r) => r,
        None => default_reg(cloud),
    };
    let dim = cloud.dim();
    let m = cloud.len();
    let km = kmeans(
        cloud,
        &KMeansConfig {
            seed: cfg.seed,
            restarts: cfg.kmeans_restarts.max(1),
            ..KMeansConfig::new(k)
        },
    )?;

    // Initial responsibilities are the hard k-means labels.
    let mut resp = vec![0.0; m * k];
    for (i, &a) in km.assignments.iter().enumerate() {
        resp[i * k + a] = 1.0;
    }
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: km.centers.clone(),
        covariances: vec![0.0; k * dim * dim],
        log_likelihood: f64::NEG_INFINITY,
        history: Vec::new(),
        reg,
        dim,
        factors: Vec::new(),
    };
    match cfg.frozen_isotropic {
        Some(var) => {
            if !(var > 0.0) {
                return Err(Error::invalid("frozen variance must be positive"));
            }
            for c in 0..k {
                for a in 0..dim {
                    model.covariances[c * dim * dim + a * dim + a] = var;
                }
            }
            model.reg = 0.0;
            refactor(&mut model);
        }
        None => {
            for c in 0..k {
                model.covariances[c * dim * dim..(c + 1) * dim * dim].fill(0.0);
                for a in 0..dim {
                    model.covariances[c * dim * dim + a * dim + a] = reg;
                }
            }
            m_step(cloud, &resp, &mut model, cfg);
        }
    }

    let mut ll = model.e_step(cloud, &mut resp);
    model.history.push(ll);
    for _ in 0..cfg.max_iter {
        m_step(cloud, &resp, &mut model, cfg);
        let next = model.e_step(cloud, &mut resp);
        model.history.push(next);
        let gain = next - ll;
        ll = next;
        if gain < cfg.tol {
            break;
        }
    }
    model.log_likelihood = ll;
    Ok(model)
}

//! BSS-eval style source-separation metrics.
//!
//! An estimate is split into a target part (its projection onto `L`-tap
//! delayed copies of the true source), an interference part (the extra
//! explained by the other sources' delayed copies) and an artifact residual.
//! SDR, SIR and SAR are energy ratios of those parts.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Cholesky;
use crate::math::{db10, energy};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Filter taps allowed for each reference; `1` is a pure gain.
    pub proj_len: usize,
    /// Magnitude bound applied to every ratio, in dB.
    pub sdr_cap: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            proj_len: 512,
            sdr_cap: 100.0,
        }
    }
}

/// Relative ridge on the normal equations.
const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceMetrics {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

/// Metrics of every estimate under the best estimate-to-reference mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Indexed by estimate.
    pub per_speaker: Vec<SourceMetrics>,
    /// `permutation[i]` is the reference matched to estimate `i`.
    pub permutation: Vec<usize>,
}

impl Metrics {
    pub fn mean(&self) -> SourceMetrics {
        let n = self.per_speaker.len() as f64;
        let s = self.per_speaker.iter().fold((0.0, 0.0, 0.0), |a, m| {
            (a.0 + m.sdr, a.1 + m.sir, a.2 + m.sar)
        });
        SourceMetrics {
            sdr: s.0 / n,
            sir: s.1 / n,
            sar: s.2 / n,
        }
    }
}

/// `Σ_{t ≥ lag} a[t] b[t − lag]` for `lag` in `0..taps`.
fn xcorr(a: &[f64], b: &[f64], taps: usize) -> Vec<f64> {
    let n = a.len();
    (0..taps)
        .map(|lag| {
            if lag >= n {
                0.0
            } else {
                a[lag..].iter().zip(&b[..n - lag]).map(|(x, y)| x * y).sum()
            }
        })
        .collect()
}

fn ridge_factor(gram: &mut [f64], dim: usize) -> (Cholesky, bool) {
    let mean_diag = (0..dim).map(|i| gram[i * dim + i]).sum::<f64>() / dim as f64;
    let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut ridge = RIDGE * base;
    let mut escalated = false;
    loop {
        for i in 0..dim {
            gram[i * dim + i] += ridge;
        }
        match Cholesky::new(gram, dim) {
            Ok(c) => return (c, escalated),
            Err(_) => {
                for i in 0..dim {
                    gram[i * dim + i] -= ridge;
                }
                ridge *= 100.0;
                escalated = true;
            }
        }
    }
}

/// Precomputed projection machinery for a fixed set of references.
#[derive(Debug, Clone)]
pub struct BssProjector {
    refs: Vec<Vec<f64>>,
    taps: usize,
    len: usize,
    all: Cholesky,
    single: Vec<Cholesky>,
    /// The references were (nearly) linearly dependent and a stronger ridge
    /// was needed.
    pub regularized: bool,
}

impl BssProjector {
    pub fn new(refs: &[&[f64]], cfg: &EvalConfig) -> Result<Self> {
        if cfg.proj_len == 0 {
            return Err(Error::invalid("projection length must be at least 1"));
        }
        let first = refs.first().ok_or(Error::Empty("references"))?;
        let len = first.len();
        if len == 0 {
            return Err(Error::Empty("reference signal"));
        }
        if refs.iter().any(|r| r.len() != len) {
            return Err(Error::shape("references differ in length"));
        }
        let n = refs.len();
        let taps = cfg.proj_len.min(len);
        let dim = n * taps;
        let mut gram = vec![0.0; dim * dim];
        // G[(i,a),(j,b)] = Σ_{t ≥ max(a,b)} r_i[t−a] r_j[t−b]. The first row
        // and column of each block are cross-correlations; moving one step
        // down a diagonal drops the product of the two last samples.
        for i in 0..n {
            for j in 0..n {
                let (ri, rj) = (refs[i], refs[j]);
                let row0 = xcorr(ri, rj, taps);
                let col0 = xcorr(rj, ri, taps);
                let mut put =
                    |a: usize, b: usize, v: f64| gram[(i * taps + a) * dim + j * taps + b] = v;
                for d in 0..taps {
                    let mut g = row0[d];
                    put(0, d, g);
                    for s in 1..taps - d {
                        g -= ri[len - s] * rj[len - s - d];
                        put(s, s + d, g);
                    }
                    if d > 0 {
                        let mut g = col0[d];
                        put(d, 0, g);
                        for s in 1..taps - d {
                            g -= ri[len - s - d] * rj[len - s];
                            put(s + d, s, g);
                        }
                    }
                }
            }
        }
        let mut singles = Vec::with_capacity(n);
        let mut regularized = false;
        for i in 0..n {
            let mut block = vec![0.0; taps * taps];
            for a in 0..taps {
                block[a * taps..(a + 1) * taps].copy_from_slice(
                    &gram[(i * taps + a) * dim + i * taps..(i * taps + a) * dim + (i + 1) * taps],
                );
            }
            let (c, esc) = ridge_factor(&mut block, taps);
            regularized |= esc;
            singles.push(c);
        }
        let (all, esc) = ridge_factor(&mut gram, dim);
        regularized |= esc;
        Ok(Self {
            refs: refs.iter().map(|r| r.to_vec()).collect(),
            taps,
            len,
            all,
            single: singles,
            regularized,
        })
    }

    pub fn sources(&self) -> usize {
        self.refs.len()
    }

    /// Least-squares projection of `est` onto the delayed copies of the
    /// given references.
    fn project(&self, est: &[f64], which: &[usize], factor: &Cholesky) -> Vec<f64> {
        let taps = self.taps;
        let mut rhs: Vec<f64> = which
            .iter()
            .flat_map(|&j| xcorr(est, &self.refs[j], taps))
            .collect();
        factor.solve(&mut rhs);
        let mut out = vec![0.0; self.len];
        for (b, &j) in which.iter().enumerate() {
            let r = &self.refs[j];
            for tau in 0..taps.min(self.len) {
                let c = rhs[b * taps + tau];
                if c != 0.0 {
                    crate::math::axpy(c, &r[..self.len - tau], &mut out[tau..]);
                }
            }
        }
        out
    }

    fn check_est(&self, est: &[f64]) -> Result<()> {
        if est.len() != self.len {
            return Err(Error::shape(format!(
                "estimate has {} samples, references {}",
                est.len(),
                self.len
            )));
        }
        Ok(())
    }

    pub fn decompose(&self, est: &[f64], target: usize) -> Result<Decomposition> {
        self.check_est(est)?;
        if target >= self.sources() {
            return Err(Error::invalid(format!(
                "target {target} out of {} references",
                self.sources()
            )));
        }
        let every: Vec<usize> = (0..self.sources()).collect();
        let p_all = self.project(est, &every, &self.all);
        Ok(self.split(est, &p_all, target))
    }

    fn split(&self, est: &[f64], p_all: &[f64], target: usize) -> Decomposition {
        let s_target = self.project(est, &[target], &self.single[target]);
        let e_interf = p_all.iter().zip(&s_target).map(|(p, s)| p - s).collect();
        let e_artif = est.iter().zip(p_all).map(|(e, p)| e - p).collect();
        Decomposition {
            s_target,
            e_interf,
            e_artif,
        }
    }

    /// Decomposition of `est` against each reference as target.
    pub fn decompose_all(&self, est: &[f64]) -> Result<Vec<Decomposition>> {
        self.check_est(est)?;
        let every: Vec<usize> = (0..self.sources()).collect();
        let p_all = self.project(est, &every, &self.all);
        Ok((0..self.sources())
            .map(|j| self.split(est, &p_all, j))
            .collect())
    }
}

pub fn bss_decompose(
    est: &[f64],
    refs: &[&[f64]],
    target_index: usize,
    cfg: &EvalConfig,
) -> Result<Decomposition> {
    BssProjector::new(refs, cfg)?.decompose(est, target_index)
}

fn capped_ratio(num: f64, den: f64, cap: f64) -> f64 {
    if num <= 0.0 {
        return -cap;
    }
    if den <= 0.0 {
        return cap;
    }
    db10(num / den).clamp(-cap, cap)
}

pub fn metrics_of(d: &Decomposition, cfg: &EvalConfig) -> SourceMetrics {
    let cap = cfg.sdr_cap;
    let target = energy(&d.s_target);
    let noise: Vec<f64> = d
        .e_interf
        .iter()
        .zip(&d.e_artif)
        .map(|(a, b)| a + b)
        .collect();
    let signal: Vec<f64> = d
        .s_target
        .iter()
        .zip(&d.e_interf)
        .map(|(a, b)| a + b)
        .collect();
    SourceMetrics {
        sdr: capped_ratio(target, energy(&noise), cap),
        sir: capped_ratio(target, energy(&d.e_interf), cap),
        sar: capped_ratio(energy(&signal), energy(&d.e_artif), cap),
    }
}

pub fn sdr_sir_sar(
    est: &[f64],
    refs: &[&[f64]],
    target_index: usize,
    cfg: &EvalConfig,
) -> Result<SourceMetrics> {
    Ok(metrics_of(
        &bss_decompose(est, refs, target_index, cfg)?,
        cfg,
    ))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Scores every estimate against every reference and keeps the assignment
/// with the highest mean SIR (ties go to the lexicographically first).
pub fn resolve_permutation(ests: &[&[f64]], refs: &[&[f64]], cfg: &EvalConfig) -> Result<Metrics> {
    if ests.len() != refs.len() {
        return Err(Error::shape(format!(
            "{} estimates for {} references",
            ests.len(),
            refs.len()
        )));
    }
    if ests.is_empty() || ests.len() > 4 {
        return Err(Error::invalid(format!(
            "permutation search supports 1 to 4 sources, got {}",
            ests.len()
        )));
    }
    let proj = BssProjector::new(refs, cfg)?;
    let table: Vec<Vec<SourceMetrics>> = ests
        .iter()
        .map(|e| {
            Ok(proj
                .decompose_all(e)?
                .iter()
                .map(|d| metrics_of(d, cfg))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(best_assignment(&table))
}

/// Picks the permutation maximizing mean SIR from a precomputed
/// `estimate × reference` table.
pub fn best_assignment(table: &[Vec<SourceMetrics>]) -> Metrics {
    let n = table.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(n) {
        let score: f64 = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| table[i][j].sir)
            .sum::<f64>()
            / n as f64;
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, perm));
        }
    }
    let (_, permutation) = best.expect("n >= 1");
    Metrics {
        per_speaker: permutation
            .iter()
            .enumerate()
            .map(|(i, &j)| table[i][j])
            .collect(),
        permutation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn cfg(l: usize) -> EvalConfig {
        EvalConfig {
            proj_len: l,
            sdr_cap: 100.0,
        }
    }

    /// Projection through explicitly materialized delayed copies and
    /// Gaussian elimination on the normal equations.
    fn dense_projection(est: &[f64], refs: &[&[f64]], taps: usize) -> Vec<f64> {
        let n = est.len();
        let cols: Vec<Vec<f64>> = refs
            .iter()
            .flat_map(|r| {
                (0..taps).map(move |tau| {
                    (0..n)
                        .map(|t| if t >= tau { r[t - tau] } else { 0.0 })
                        .collect()
                })
            })
            .collect();
        let d = cols.len();
        let mut a = vec![vec![0.0; d + 1]; d];
        for i in 0..d {
            for j in 0..d {
                a[i][j] = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
            }
            a[i][d] = cols[i].iter().zip(est).map(|(x, y)| x * y).sum();
        }
        for c in 0..d {
            let p = (c..d)
                .max_by(|&x, &y| a[x][c].abs().partial_cmp(&a[y][c].abs()).unwrap())
                .unwrap();
            a.swap(c, p);
            for r in 0..d {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=d {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        let coef: Vec<f64> = (0..d).map(|i| a[i][d] / a[i][i]).collect();
        (0..n)
            .map(|t| (0..d).map(|c| coef[c] * cols[c][t]).sum())
            .collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        let scale = energy(b).sqrt().max(1e-300);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
            / scale
            < tol
    }

    #[test]
    fn self_projection_is_all_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r0 = noise(400, &mut rng);
        let r1 = noise(400, &mut rng);
        let d = bss_decompose(&r0, &[&r0, &r1], 0, &cfg(1)).unwrap();
        assert!(close(&d.s_target, &r0, 1e-9));
        assert!(energy(&d.e_interf).sqrt() < 1e-9 * energy(&r0).sqrt());
        assert!(energy(&d.e_artif).sqrt() < 1e-9 * energy(&r0).sqrt());
        let m = sdr_sir_sar(&r0, &[&r0, &r1], 0, &cfg(1)).unwrap();
        assert_eq!((m.sdr, m.sir, m.sar), (100.0, 100.0, 100.0));
    }

    #[test]
    fn pure_interference() {
        // exactly orthogonal references
        let n = 256;
        let r0: Vec<f64> = (0..n)
            .map(|t| (2.0 * core::f64::consts::PI * 4.0 * t as f64 / n as f64).sin())
            .collect();
        let r1: Vec<f64> = (0..n)
            .map(|t| (2.0 * core::f64::consts::PI * 9.0 * t as f64 / n as f64).cos())
            .collect();
        let d = bss_decompose(&r1, &[&r0, &r1], 0, &cfg(1)).unwrap();
        let scale = energy(&r1).sqrt();
        assert!(energy(&d.s_target).sqrt() < 1e-9 * scale);
        assert!(close(&d.e_interf, &r1, 1e-9));
        assert!(energy(&d.e_artif).sqrt() < 1e-9 * scale);
    }

    #[test]
    fn decomposition_matches_dense_oracle_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r0 = noise(300, &mut rng);
        let r1 = noise(300, &mut rng);
        let est: Vec<f64> = (0..300)
            .map(|t| {
                0.8 * r0[t]
                    + if t >= 2 {
                        0.3 * r0[t - 2] - 0.4 * r1[t - 1]
                    } else {
                        0.0
                    }
                    + 0.2 * rng.gen_range(-1.0..1.0)
            })
            .collect();
        let refs: [&[f64]; 2] = [&r0, &r1];
        let d = bss_decompose(&est, &refs, 0, &cfg(4)).unwrap();
        let sum: Vec<f64> = (0..300)
            .map(|t| d.s_target[t] + d.e_interf[t] + d.e_artif[t])
            .collect();
        assert!(close(&sum, &est, 1e-9));
        assert!(close(
            &d.s_target,
            &dense_projection(&est, &refs[..1], 4),
            1e-8
        ));
        let p_all: Vec<f64> = (0..300).map(|t| d.s_target[t] + d.e_interf[t]).collect();
        assert!(close(&p_all, &dense_projection(&est, &refs, 4), 1e-8));
        let e = energy(&est);
        for (a, b) in [
            (&d.s_target, &d.e_interf),
            (&d.s_target, &d.e_artif),
            (&d.e_interf, &d.e_artif),
        ] {
            assert!(crate::math::dot(a, b).abs() / e < 1e-9);
        }
    }

    #[test]
    fn long_filters_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r0 = noise(120, &mut rng);
        let r1 = noise(120, &mut rng);
        let est = noise(120, &mut rng);
        let refs: [&[f64]; 2] = [&r0, &r1];
        let d = bss_decompose(&est, &refs, 1, &cfg(16)).unwrap();
        assert!(close(
            &d.s_target,
            &dense_projection(&est, &refs[1..], 16),
            1e-7
        ));
        let m = metrics_of(&d, &cfg(16));
        let sdr = 10.0
            * (energy(&d.s_target)
                / d.e_interf
                    .iter()
                    .zip(&d.e_artif)
                    .map(|(a, b)| (a + b) * (a + b))
                    .sum::<f64>())
            .log10();
        assert!((m.sdr - sdr).abs() < 1e-12);
    }

    #[test]
    fn ten_percent_orthogonal_noise_gives_twenty_db() {
        let n = 512;
        let w = |k: f64| -> Vec<f64> {
            (0..n)
                .map(|t| (2.0 * core::f64::consts::PI * k * t as f64 / n as f64).sin())
                .collect()
        };
        let r0 = w(3.0);
        let r1 = w(11.0);
        let noise = w(40.0);
        let est: Vec<f64> = r0.iter().zip(&noise).map(|(s, e)| s + 0.1 * e).collect();
        let m = sdr_sir_sar(&est, &[&r0, &r1], 0, &cfg(1)).unwrap();
        assert!((m.sdr - 20.0).abs() < 0.01, "{}", m.sdr);
        assert!((m.sar - 20.0).abs() < 0.01);
    }

    #[test]
    fn mixture_as_estimate_scores_its_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s0 = noise(4000, &mut rng);
        let s1: Vec<f64> = noise(4000, &mut rng).iter().map(|x| 0.6 * x).collect();
        let mix: Vec<f64> = s0.iter().zip(&s1).map(|(a, b)| a + b).collect();
        let snr = 10.0 * (energy(&s0) / energy(&s1)).log10();
        let m = sdr_sir_sar(&mix, &[&s0, &s1], 0, &cfg(1)).unwrap();
        assert!((m.sdr - snr).abs() < 1.0);
    }

    #[test]
    fn zero_estimate_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r0 = noise(200, &mut rng);
        let r1 = noise(200, &mut rng);
        let m = sdr_sir_sar(&[0.0; 200], &[&r0, &r1], 0, &cfg(8)).unwrap();
        assert_eq!(m.sdr, -100.0);
        let est: Vec<f64> = (0..200)
            .map(|t| r0[t] + 0.3 * r1[t] + 0.1 * rng.gen_range(-1.0..1.0))
            .collect();
        let a = sdr_sir_sar(&est, &[&r0, &r1], 0, &cfg(8)).unwrap();
        let scaled: Vec<f64> = est.iter().map(|x| 3.7 * x).collect();
        let b = sdr_sir_sar(&scaled, &[&r0, &r1], 0, &cfg(8)).unwrap();
        assert!(
            (a.sdr - b.sdr).abs() < 1e-9
                && (a.sir - b.sir).abs() < 1e-9
                && (a.sar - b.sar).abs() < 1e-9
        );
        assert!(bss_decompose(&est, &[&r0, &r1], 2, &cfg(1)).is_err());
        assert!(bss_decompose(&est[..10], &[&r0, &r1], 0, &cfg(1)).is_err());
    }

    #[test]
    fn dependent_references_still_project() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r0 = noise(100, &mut rng);
        let twice: Vec<f64> = r0.iter().map(|x| 2.0 * x).collect();
        let p = BssProjector::new(&[&r0, &twice], &cfg(1)).unwrap();
        let d = p.decompose(&r0, 0).unwrap();
        assert!(d.s_target.iter().all(|v| v.is_finite()));
        let total: Vec<f64> = (0..100)
            .map(|t| d.s_target[t] + d.e_interf[t] + d.e_artif[t])
            .collect();
        assert!(close(&total, &r0, 1e-12));
        assert!(energy(&d.e_artif) < 1e-12 * energy(&r0));
    }

    #[test]
    fn permutation_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r0 = noise(500, &mut rng);
        let r1 = noise(500, &mut rng);
        let refs: [&[f64]; 2] = [&r0, &r1];
        let id = resolve_permutation(&[&r0, &r1], &refs, &cfg(1)).unwrap();
        assert_eq!(id.permutation, vec![0, 1]);
        let sw = resolve_permutation(&[&r1, &r0], &refs, &cfg(1)).unwrap();
        assert_eq!(sw.permutation, vec![1, 0]);
        assert_eq!(sw.per_speaker, id.per_speaker);
        assert!(resolve_permutation(&[&r0], &refs, &cfg(1)).is_err());

        for trial in 0..10 {
            let mix = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                let a: f64 = rng.gen_range(0.0..1.0);
                (0..500)
                    .map(|t| a * r0[t] + (1.0 - a) * r1[t] + 0.2 * rng.gen_range(-1.0..1.0))
                    .collect()
            };
            let e0 = mix(&mut rng);
            let e1 = mix(&mut rng);
            let got = resolve_permutation(&[&e0, &e1], &refs, &cfg(2)).unwrap();
            let score = |p: [usize; 2]| {
                let a = sdr_sir_sar(&e0, &refs, p[0], &cfg(2)).unwrap().sir;
                let b = sdr_sir_sar(&e1, &refs, p[1], &cfg(2)).unwrap().sir;
                (a + b) / 2.0
            };
            let want = if score([1, 0]) > score([0, 1]) {
                vec![1, 0]
            } else {
                vec![0, 1]
            };
            assert_eq!(got.permutation, want, "trial {trial}");
        }
    }

    #[test]
    fn permutation_search_covers_all_orders() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(1), vec![vec![0]]);
    }
}

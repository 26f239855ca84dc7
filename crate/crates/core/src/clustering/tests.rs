use alloc::vec;
use alloc::vec::Vec;
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::danet::EmbeddingMatrix;

/// Gaussian blobs with per-blob anisotropic scale.
pub(crate) fn blobs(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (b, c) in centers.iter().enumerate() {
        for _ in 0..per {
            let u: f64 = Normal.sample(&mut rng);
            let v: f64 = Normal.sample(&mut rng);
            out.push(c[0] + spread * (1.0 + b as f64 * 0.5) * u);
            out.push(c[1] + spread * v + 0.3 * spread * u);
        }
    }
    out
}

/// Box-Muller standard normal so the tests need no extra crates.
struct Normal;
impl Distribution<f64> for Normal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
    }
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    // equal up to relabeling
    let mut map = alloc::collections::BTreeMap::new();
    a.iter()
        .zip(b)
        .all(|(x, y)| *map.entry(*x).or_insert(*y) == *y)
        && {
            let mut back = alloc::collections::BTreeMap::new();
            b.iter()
                .zip(a)
                .all(|(x, y)| *back.entry(*x).or_insert(*y) == *y)
        }
}

#[test]
fn kmeans_trivial_cases() {
    let pts = [0.0, 1.0, 5.0, -2.0];
    let c = PointCloud::new(&pts, 2).unwrap();
    let r = kmeans(&c, &KMeansConfig::new(2)).unwrap();
    assert_eq!(r.inertia, 0.0);
    let mut centers: Vec<[f64; 2]> = r.centers.chunks(2).map(|c| [c[0], c[1]]).collect();
    centers.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    assert_eq!(centers, vec![[0.0, 1.0], [5.0, -2.0]]);

    let same = [3.0, 4.0, 3.0, 4.0, 3.0, 4.0];
    let r = kmeans(&PointCloud::new(&same, 2).unwrap(), &KMeansConfig::new(1)).unwrap();
    assert_eq!((r.centers.as_slice(), r.inertia), (&[3.0, 4.0][..], 0.0));

    assert_eq!(
        kmeans(&PointCloud::new(&pts, 2).unwrap(), &KMeansConfig::new(3)).unwrap_err(),
        crate::Error::TooFewPoints { k: 3, m: 2 }
    );
}

#[test]
fn kmeans_matches_exhaustive_two_partition() {
    for seed in 0..10 {
        let pts = blobs(&[[0.0, 0.0], [1.5, 1.0]], 3, 0.4, seed);
        let cloud = PointCloud::new(&pts, 2).unwrap();
        let cost = |labels: &[usize]| -> f64 {
            (0..2)
                .map(|c| {
                    let idx: Vec<usize> = (0..6).filter(|&i| labels[i] == c).collect();
                    if idx.is_empty() {
                        return 0.0;
                    }
                    let mx = idx.iter().map(|&i| pts[2 * i]).sum::<f64>() / idx.len() as f64;
                    let my = idx.iter().map(|&i| pts[2 * i + 1]).sum::<f64>() / idx.len() as f64;
                    idx.iter()
                        .map(|&i| (pts[2 * i] - mx).powi(2) + (pts[2 * i + 1] - my).powi(2))
                        .sum::<f64>()
                })
                .sum()
        };
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << 5) {
            // point 5 always in cluster 0 to skip mirrored partitions
            let labels: Vec<usize> = (0..6)
                .map(|i| if i < 5 { ((mask >> i) & 1) as usize } else { 0 })
                .collect();
            let c = cost(&labels);
            if c < best.0 {
                best = (c, labels);
            }
        }
        let r = kmeans(
            &cloud,
            &KMeansConfig {
                seed,
                ..KMeansConfig::new(2)
            },
        )
        .unwrap();
        assert!((r.inertia - best.0).abs() < 1e-12, "seed {seed}");
        assert!(same_partition(&r.assignments, &best.1), "seed {seed}");
    }
}

#[test]
fn kmeans_inertia_never_increases() {
    for seed in 0..20 {
        let pts = blobs(&[[0.0, 0.0], [2.0, 0.5], [0.5, 3.0]], 40, 1.0, seed);
        let r = kmeans(
            &PointCloud::new(&pts, 2).unwrap(),
            &KMeansConfig {
                seed,
                restarts: 1,
                ..KMeansConfig::new(4)
            },
        )
        .unwrap();
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", r.history);
        }
        assert_eq!(*r.history.last().unwrap(), r.inertia);
    }
}

#[test]
fn gmm_single_component_is_the_sample_moments() {
    let pts = blobs(&[[1.0, -1.0]], 50, 0.7, 3);
    let cloud = PointCloud::new(&pts, 2).unwrap();
    let reg = 1e-3;
    let m = gmm_fit(
        &cloud,
        &GmmConfig {
            reg: Some(reg),
            ..GmmConfig::new(1)
        },
    )
    .unwrap();
    assert_eq!(m.weights, vec![1.0]);
    let mean = cloud.mean();
    let cov = cloud.covariance();
    for j in 0..2 {
        assert!((m.mean(0)[j] - mean[j]).abs() < 1e-12);
    }
    for a in 0..2 {
        for b in 0..2 {
            let want = cov[a * 2 + b] + if a == b { reg } else { 0.0 };
            assert!((m.covariance(0)[a * 2 + b] - want).abs() < 1e-12);
        }
    }

    let same = [2.0, -1.0, 0.5, 2.0, -1.0, 0.5, 2.0, -1.0, 0.5];
    let m = gmm_fit(
        &PointCloud::new(&same, 3).unwrap(),
        &GmmConfig {
            reg: Some(0.01),
            ..GmmConfig::new(1)
        },
    )
    .unwrap();
    for a in 0..3 {
        for b in 0..3 {
            assert_eq!(m.covariance(0)[a * 3 + b], if a == b { 0.01 } else { 0.0 });
        }
    }
    assert!(gmm_fit(
        &PointCloud::new(&same, 3).unwrap(),
        &GmmConfig {
            reg: Some(0.0),
            ..GmmConfig::new(1)
        }
    )
    .is_err());
    assert!(gmm_fit(&PointCloud::new(&same, 3).unwrap(), &GmmConfig::new(4)).is_err());
}

fn hard(resp: &[f64], k: usize) -> Vec<usize> {
    resp.chunks(k)
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, -1.0), |a, (i, &v)| if v > a.1 { (i, v) } else { a })
                .0
        })
        .collect()
}

#[test]
fn gmm_agrees_with_kmeans_on_separated_blobs() {
    let pts = blobs(&[[0.0, 0.0], [8.0, 3.0]], 60, 0.8, 17);
    let cloud = PointCloud::new(&pts, 2).unwrap();
    let km = kmeans(
        &cloud,
        &KMeansConfig {
            seed: 4,
            ..KMeansConfig::new(2)
        },
    )
    .unwrap();
    let g = gmm_fit(
        &cloud,
        &GmmConfig {
            seed: 4,
            ..GmmConfig::new(2)
        },
    )
    .unwrap();
    let post = gmm_posterior(&g, &cloud).unwrap();
    assert!(same_partition(&hard(&post, 2), &km.assignments));
}

#[test]
fn em_log_likelihood_never_decreases() {
    for seed in 0..20u64 {
        let pts = blobs(&[[0.0, 0.0], [2.5, 1.0], [-1.0, 3.0]], 80, 0.9, 100 + seed);
        let cloud = PointCloud::new(&pts, 2).unwrap();
        let g = gmm_fit(
            &cloud,
            &GmmConfig {
                seed,
                tol: 0.0,
                max_iter: 60,
                ..GmmConfig::new(3)
            },
        )
        .unwrap();
        for w in g.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {:?}", g.history);
        }
    }
}

#[test]
fn frozen_small_variance_gmm_reduces_to_kmeans() {
    let pts = blobs(&[[0.0, 0.0], [6.0, 1.0], [2.0, 7.0]], 40, 0.7, 8);
    let cloud = PointCloud::new(&pts, 2).unwrap();
    let km = kmeans(
        &cloud,
        &KMeansConfig {
            seed: 2,
            ..KMeansConfig::new(3)
        },
    )
    .unwrap();
    let scale = cloud.covariance()[0].sqrt();
    let sigma = 1e-3 * scale;
    let g = gmm_fit(
        &cloud,
        &GmmConfig {
            seed: 2,
            frozen_isotropic: Some(sigma * sigma),
            ..GmmConfig::new(3)
        },
    )
    .unwrap();
    assert!(g.weights.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
    let post = gmm_posterior(&g, &cloud).unwrap();
    assert_eq!(hard(&post, 3), km.assignments);
}

#[test]
fn posterior_properties() {
    let pts = blobs(&[[0.0, 0.0], [3.0, 1.0]], 20, 1.0, 1);
    let cloud = PointCloud::new(&pts, 2).unwrap();
    let one = gmm_fit(&cloud, &GmmConfig::new(1)).unwrap();
    assert!(gmm_posterior(&one, &cloud)
        .unwrap()
        .iter()
        .all(|&r| r == 1.0));

    // two identical-shape components mirrored about x = 0
    let sym = GmmModel::from_parts(
        vec![0.5, 0.5],
        vec![-1.0, 0.0, 1.0, 0.0],
        vec![1.0, 0.2, 0.2, 2.0, 1.0, -0.2, -0.2, 2.0],
        2,
    )
    .unwrap();
    let mid = [0.0, 0.0];
    let r = gmm_posterior(&sym, &PointCloud::new(&mid, 2).unwrap()).unwrap();
    assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);

    // direct density-ratio oracle
    let m = GmmModel::from_parts(
        vec![0.3, 0.7],
        vec![0.0, 1.0, 2.0, -1.0],
        vec![1.0, 0.3, 0.3, 0.5, 2.0, -0.4, -0.4, 1.0],
        2,
    )
    .unwrap();
    let x = [0.7, 0.2];
    let dens = |w: f64, mu: [f64; 2], s: [f64; 4]| {
        let det = s[0] * s[3] - s[1] * s[2];
        let inv = [s[3] / det, -s[1] / det, -s[2] / det, s[0] / det];
        let d = [x[0] - mu[0], x[1] - mu[1]];
        let q = d[0] * (inv[0] * d[0] + inv[1] * d[1]) + d[1] * (inv[2] * d[0] + inv[3] * d[1]);
        w * (-0.5 * q).exp() / (2.0 * core::f64::consts::PI * det.sqrt())
    };
    let p0 = dens(0.3, [0.0, 1.0], [1.0, 0.3, 0.3, 0.5]);
    let p1 = dens(0.7, [2.0, -1.0], [2.0, -0.4, -0.4, 1.0]);
    let r = gmm_posterior(&m, &PointCloud::new(&x, 2).unwrap()).unwrap();
    assert!((r[0] - p0 / (p0 + p1)).abs() < 1e-14);

    let g = gmm_fit(&cloud, &GmmConfig::new(2)).unwrap();
    for row in gmm_posterior(&g, &cloud).unwrap().chunks(2) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn attractor_clustering_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let v = EmbeddingMatrix::from_rows(&rows, 4, 3).unwrap();
    let a = cluster_attractors(&v, 1, ClusterAlgo::KMeans, 0).unwrap();
    for k in 0..3 {
        let mean = rows[k].iter().sum::<f64>() / 12.0;
        assert!((a.get(0)[k] - mean).abs() < 1e-12);
    }

    // columns repeat two distinct vectors: 8 copies of p, 4 of q
    let p = [1.0, -2.0, 0.5];
    let q = [-3.0, 0.0, 2.0];
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|k| {
            (0..12)
                .map(|j| if j % 3 == 0 { q[k] } else { p[k] })
                .collect()
        })
        .collect();
    let v2 = EmbeddingMatrix::from_rows(&rows, 4, 3).unwrap();
    for algo in [ClusterAlgo::KMeans, ClusterAlgo::Gmm] {
        let a = cluster_attractors(&v2, 2, algo, 1).unwrap();
        for k in 0..3 {
            assert!((a.get(0)[k] - p[k]).abs() < 1e-9, "{algo}");
            assert!((a.get(1)[k] - q[k]).abs() < 1e-9, "{algo}");
        }
    }

    for algo in [ClusterAlgo::KMeans, ClusterAlgo::Gmm] {
        let x = cluster_attractors(&v, 2, algo, 42).unwrap();
        let y = cluster_attractors(&v, 2, algo, 42).unwrap();
        assert_eq!(x, y);
    }
    assert!(cluster_attractors(&v, 0, ClusterAlgo::Gmm, 0).is_err());
    assert_eq!("gmm".parse::<ClusterAlgo>().unwrap(), ClusterAlgo::Gmm);
    assert!("spectral".parse::<ClusterAlgo>().is_err());
}

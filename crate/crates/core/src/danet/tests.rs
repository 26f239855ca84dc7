use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{self, relative_error};
use super::*;
use crate::dsp::FeatureMatrix;
use crate::masking::{BinaryMask, SoftMask};
use crate::tf::RealTf;

fn feats(f: usize, t: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMatrix {
        values: RealTf::from_fn(f, t, |_, _| rng.gen_range(-1.0..1.0)),
        floor_eps: 1e-7,
    }
}

fn small_arch(f: usize, layers: usize, h: usize, k: usize) -> ArchSpec {
    ArchSpec {
        input_dim: f,
        num_layers: layers,
        hidden: h,
        embed_dim: k,
        cell: CellKind::Gru,
    }
}

#[test]
fn zero_weights_give_bias_embeddings() {
    let arch = small_arch(4, 2, 3, 2);
    let mut p = ModelParams::zeros(arch).unwrap();
    for (i, b) in p.b_fc_mut().iter_mut().enumerate() {
        *b = i as f64 * 0.25 - 1.0;
    }
    let v = forward_embed(&feats(4, 1, 1), &p).unwrap();
    assert_eq!((v.dim(), v.columns()), (2, 4));
    for f in 0..4 {
        assert_eq!(v.column(f), &p.b_fc()[f * 2..f * 2 + 2]);
    }
}

#[test]
fn output_shape_tracks_frames() {
    let arch = small_arch(3, 1, 2, 4);
    let p = ModelParams::init(arch, 3).unwrap();
    for t in 1..6 {
        let v = forward_embed(&feats(3, t, t as u64), &p).unwrap();
        assert_eq!(
            (v.dim(), v.bins(), v.frames(), v.columns()),
            (4, 3, t, 3 * t)
        );
    }
    assert!(forward_embed(&feats(4, 2, 0), &p).is_err());
}

/// Independent scalar evaluation of a one-layer network.
fn unrolled_oracle(p: &ModelParams, x: &RealTf) -> Vec<Vec<f64>> {
    let arch = *p.arch();
    let (f, h, k) = (arch.input_dim, arch.hidden, arch.embed_dim);
    let frames = x.frames();
    let sig = |a: f64| 1.0 / (1.0 + (-a).exp());
    let mut states = [vec![vec![0.0; h]; frames], vec![vec![0.0; h]; frames]];
    for (d, state) in states.iter_mut().enumerate() {
        let dp = p.dir(0, d);
        let order: Vec<usize> = if d == 0 {
            (0..frames).collect()
        } else {
            (0..frames).rev().collect()
        };
        let mut prev = vec![0.0; h];
        for t in order {
            let mut next = vec![0.0; h];
            for i in 0..h {
                let lin = |g: usize| {
                    let mut s = dp.b_in[g];
                    for c in 0..f {
                        s += dp.w_in[g * f + c] * x.get(c, t);
                    }
                    s
                };
                let rec = |g: usize| {
                    let mut s = dp.b_rec[g];
                    for c in 0..h {
                        s += dp.w_rec[g * h + c] * prev[c];
                    }
                    s
                };
                let z = sig(lin(i) + rec(i));
                let r = sig(lin(h + i) + rec(h + i));
                let n = (lin(2 * h + i) + r * rec(2 * h + i)).tanh();
                next[i] = (1.0 - z) * n + z * prev[i];
            }
            state[t] = next.clone();
            prev = next;
        }
    }
    // columns t·F + f of V, each of length K
    let mut cols = vec![vec![0.0; k]; f * frames];
    for t in 0..frames {
        let top: Vec<f64> = states[0][t].iter().chain(&states[1][t]).cloned().collect();
        for bin in 0..f {
            for e in 0..k {
                let row = bin * k + e;
                let mut s = p.b_fc()[row];
                for c in 0..2 * h {
                    s += p.w_fc()[row * 2 * h + c] * top[c];
                }
                cols[t * f + bin][e] = s;
            }
        }
    }
    cols
}

#[test]
fn forward_matches_unrolled_oracle() {
    let arch = small_arch(3, 1, 2, 2);
    let p = ModelParams::init(arch, 11).unwrap();
    let x = feats(3, 2, 5);
    let v = forward_embed(&x, &p).unwrap();
    let want = unrolled_oracle(&p, &x.values);
    for (j, col) in want.iter().enumerate() {
        for (a, b) in v.column(j).iter().zip(col) {
            assert!((a - b).abs() < 1e-13, "col {j}: {a} vs {b}");
        }
    }
}

fn mask(vals: Vec<f64>, bins: usize, frames: usize) -> BinaryMask {
    BinaryMask::new(RealTf::from_frame_major(bins, frames, vals).unwrap(), 0).unwrap()
}

#[test]
fn attractor_examples() {
    // K = 3, F·T = 5 (F = 5, T = 1)
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let v = EmbeddingMatrix::from_rows(&rows, 5, 1).unwrap();
    let all = train_attractors(&v, &[mask(vec![1.0; 5], 5, 1)]).unwrap();
    for k in 0..3 {
        let mean = rows[k].iter().sum::<f64>() / 5.0;
        assert!((all.get(0)[k] - mean).abs() < 1e-15);
    }
    let one = train_attractors(&v, &[mask(vec![0.0, 0.0, 1.0, 0.0, 0.0], 5, 1)]).unwrap();
    assert_eq!(one.get(0), v.column(2));

    let m = vec![1.0, 0.0, 1.0, 1.0, 0.0];
    let got = train_attractors(&v, &[mask(m.clone(), 5, 1)]).unwrap();
    for k in 0..3 {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..5 {
            num += m[j] * rows[k][j];
            den += m[j];
        }
        assert!((got.get(0)[k] - num / den).abs() < 1e-15);
    }
    assert_eq!(
        train_attractors(&v, &[mask(vec![0.0; 5], 5, 1)]).unwrap_err(),
        crate::Error::EmptyMask(0)
    );
}

#[test]
fn mask_estimation_examples() {
    let rows = vec![vec![1.0, -2.0, 0.5], vec![0.3, 0.0, -1.0]];
    let v = EmbeddingMatrix::from_rows(&rows, 3, 1).unwrap();
    let zero = AttractorSet::new(2, vec![0.0, 0.0]).unwrap();
    let m = estimate_masks(&v, &zero).unwrap();
    assert!(m[0].values.as_slice().iter().all(|&x| x == 0.5));

    let a = AttractorSet::new(2, vec![0.7, -1.2, -0.4, 2.0]).unwrap();
    let m = estimate_masks(&v, &a).unwrap();
    for i in 0..2 {
        for j in 0..3 {
            let d = a.get(i)[0] * rows[0][j] + a.get(i)[1] * rows[1][j];
            let want = 1.0 / (1.0 + (-d).exp());
            assert!((m[i].values.as_slice()[j] - want).abs() < 1e-15);
        }
    }
    // scaling V scales the sigmoid argument, not the mask
    let scaled: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|x| 3.0 * x).collect())
        .collect();
    let vs = EmbeddingMatrix::from_rows(&scaled, 3, 1).unwrap();
    let ms = estimate_masks(&vs, &a).unwrap();
    for j in 0..3 {
        let d = a.get(0)[0] * rows[0][j] + a.get(0)[1] * rows[1][j];
        let want = 1.0 / (1.0 + (-3.0 * d).exp());
        assert!((ms[0].values.as_slice()[j] - want).abs() < 1e-15);
    }
    assert!(estimate_masks(&v, &AttractorSet::new(3, vec![0.0; 3]).unwrap()).is_err());
}

#[test]
fn loss_examples() {
    let x = RealTf::filled(3, 2, 1.0);
    let ideal = vec![mask(vec![1.0; 6], 3, 2)];
    let exact = vec![SoftMask {
        values: RealTf::filled(3, 2, 1.0),
        speaker_index: 0,
    }];
    assert_eq!(loss(&x, &ideal, &exact).unwrap(), 0.0);
    let off = vec![SoftMask {
        values: RealTf::zeros(3, 2),
        speaker_index: 0,
    }];
    assert_eq!(loss(&x, &ideal, &off).unwrap(), 6.0);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = RealTf::from_fn(3, 2, |_, _| rng.gen_range(0.0..2.0));
    let ideal: Vec<BinaryMask> = (0..2)
        .map(|i| mask((0..6).map(|j| ((j + i) % 2) as f64).collect(), 3, 2))
        .collect();
    let est: Vec<SoftMask> = (0..2)
        .map(|i| SoftMask {
            values: RealTf::from_fn(3, 2, |_, _| rng.gen_range(0.0..1.0)),
            speaker_index: i,
        })
        .collect();
    let mut want = 0.0;
    for i in 0..2 {
        for f in 0..3 {
            for t in 0..2 {
                let d = x.get(f, t) * (ideal[i].values().get(f, t) - est[i].values.get(f, t));
                want += d * d;
            }
        }
    }
    want /= 2.0;
    assert!((loss(&x, &ideal, &est).unwrap() - want).abs() < 1e-14);
    assert!(loss(&x, &ideal[..1], &est).is_err());
}

#[test]
fn gradient_vanishes_when_masks_saturate() {
    // Zero weights: every frame's embeddings come from b_fc. Bins of speaker
    // 0 point one way, bins of speaker 1 the other.
    let (f, t) = (6, 3);
    let arch = small_arch(f, 1, 3, 2);
    let mut p = ModelParams::zeros(arch).unwrap();
    let c = 7.0;
    for bin in 0..f {
        let s = if bin % 2 == 0 { c } else { -c };
        p.b_fc_mut()[bin * 2] = s;
    }
    let owner = |j: usize| (j % f) % 2;
    let masks: Vec<BinaryMask> = (0..2)
        .map(|i| {
            mask(
                (0..f * t)
                    .map(|j| if owner(j) == i { 1.0 } else { 0.0 })
                    .collect(),
                f,
                t,
            )
        })
        .collect();
    let x = feats(f, t, 4);
    let mag = RealTf::filled(f, t, 1.5);
    let v = forward_embed(&x, &p).unwrap();
    let est = estimate_masks(&v, &train_attractors(&v, &masks).unwrap()).unwrap();
    for (m, e) in masks.iter().zip(&est) {
        for (a, b) in m.values().as_slice().iter().zip(e.values.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let (_, g) = backward(&x, &mag, &masks, &p).unwrap();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-8, "{norm}");
}

#[test]
fn tiny_net_gradient_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let report = gradcheck::check(&gradcheck::tiny_problem(seed), 1e-5).unwrap();
        assert_eq!(report.tensors.len(), 10);
        assert!(
            report.max_rel_error < 1e-4,
            "seed {seed}: {:?}",
            report.tensors
        );
    }
}

#[test]
fn two_layer_gradient_matches_finite_differences() {
    let problem = gradcheck::random_problem(small_arch(4, 2, 3, 2), 5, 3, 21);
    let report = gradcheck::check(&problem, 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{:?}", report.tensors);
}

#[test]
fn doubling_magnitude_quadruples_loss_and_gradient() {
    let pr = gradcheck::tiny_problem(7);
    let (l1, g1) = backward(&pr.features, &pr.mix_mag, &pr.masks, &pr.params).unwrap();
    let doubled = pr.mix_mag.map(|x| 2.0 * x);
    let (l2, g2) = backward(&pr.features, &doubled, &pr.masks, &pr.params).unwrap();
    assert_eq!(l2, 4.0 * l1);
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(*b, 4.0 * a);
    }
}

#[test]
fn backward_is_deterministic_and_consistent_with_forward_loss() {
    let pr = gradcheck::random_problem(small_arch(8, 2, 5, 4), 12, 2, 5);
    let a = backward(&pr.features, &pr.mix_mag, &pr.masks, &pr.params).unwrap();
    let b = backward(&pr.features, &pr.mix_mag, &pr.masks, &pr.params).unwrap();
    assert_eq!(a, b);
    let l = utterance_loss(&pr.features, &pr.mix_mag, &pr.masks, &pr.params).unwrap();
    assert!(relative_error(a.0, l) < 1e-12);
}

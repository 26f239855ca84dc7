//! Central finite-difference check of the analytic gradient.

use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, utterance_loss, ArchSpec, CellKind, ModelParams};
use crate::dsp::FeatureMatrix;
use crate::masking::BinaryMask;
use crate::tf::RealTf;
use crate::Result;

/// Entries whose analytic and numeric values are both below this are
/// compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// A self-contained single-utterance training problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub params: ModelParams,
    pub features: FeatureMatrix,
    pub mix_mag: RealTf,
    pub masks: Vec<BinaryMask>,
}

/// The small configuration used for gradient checking: one layer, four units
/// per direction, `F = 5`, `K = 3`, `T = 4`, two speakers.
pub fn tiny_problem(seed: u64) -> Problem {
    let arch = ArchSpec {
        input_dim: 5,
        num_layers: 1,
        hidden: 4,
        embed_dim: 3,
        cell: CellKind::Gru,
    };
    random_problem(arch, 4, 2, seed)
}

pub fn random_problem(arch: ArchSpec, frames: usize, speakers: usize, seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(arch, rng.gen()).expect("valid architecture");
    // Larger output weights so the masks are not all pinned near 0.5.
    let bound = 1.0;
    let fc = params.layout().w_fc.clone();
    for v in &mut params.values[fc] {
        *v = rng.gen_range(-bound..bound);
    }
    let f = arch.input_dim;
    let features = FeatureMatrix {
        values: RealTf::from_fn(f, frames, |_, _| rng.gen_range(-1.5..1.5)),
        floor_eps: crate::dsp::DEFAULT_FLOOR_EPS,
    };
    let mix_mag = RealTf::from_fn(f, frames, |_, _| rng.gen_range(0.2..2.0));
    let owner: Vec<usize> = (0..f * frames)
        .map(|j| {
            if j < speakers {
                j
            } else {
                rng.gen_range(0..speakers)
            }
        })
        .collect();
    let masks = (0..speakers)
        .map(|i| {
            let vals = owner
                .iter()
                .map(|&o| if o == i { 1.0 } else { 0.0 })
                .collect();
            BinaryMask::new(RealTf::from_frame_major(f, frames, vals).unwrap(), i).unwrap()
        })
        .collect();
    Problem {
        params,
        features,
        mix_mag,
        masks,
    }
}

#[derive(Debug, Clone)]
pub struct TensorReport {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tensors: Vec<TensorReport>,
    pub max_rel_error: f64,
}

/// Compares every analytic partial derivative with
/// `(L(θ + h e_i) − L(θ − h e_i)) / 2h`.
pub fn check(problem: &Problem, step: f64) -> Result<GradCheckReport> {
    let Problem {
        params,
        features,
        mix_mag,
        masks,
    } = problem;
    let (loss, grad) = backward(features, mix_mag, masks, params)?;
    let mut work = params.clone();
    let mut tensors = Vec::new();
    let mut overall: f64 = 0.0;
    for (name, range) in params.layout().tensors() {
        let mut worst: f64 = 0.0;
        for i in range.clone() {
            let orig = work.values[i];
            work.values[i] = orig + step;
            let up = utterance_loss(features, mix_mag, masks, &work)?;
            work.values[i] = orig - step;
            let down = utterance_loss(features, mix_mag, masks, &work)?;
            work.values[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(grad[i], numeric));
        }
        overall = overall.max(worst);
        tensors.push(TensorReport {
            name,
            entries: range.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        loss,
        tensors,
        max_rel_error: overall,
    })
}

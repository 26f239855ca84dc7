//! Training (Adam, plateau-halving learning rate, global-norm clipping) and
//! the clustering-based inference path.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::{cluster_attractors_with, ClusterAlgo};
use crate::danet::{
    backward, estimate_masks, forward_embed, utterance_loss, ArchSpec, ModelParams,
};
use crate::dsp::{
    istft, log_magnitude, magnitude, phase, stft, FeatureMatrix, FeatureStats, StftConfig,
    Waveform, DEFAULT_FLOOR_EPS,
};
use crate::masking::{
    apply_mask, binarize, energy_gate, wiener_like_masks, BinaryMask, MaskThreshold,
};
use crate::math::sqrt;
use crate::tf::RealTf;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub lr0: f64,
    pub lr_halve_patience: usize,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for HyperParams {
    /// Desk scale: 50 epochs.
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            lr_halve_patience: 3,
            lr_min: 1e-6,
            epochs: 50,
            batch_size: 8,
            grad_clip: 200.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl HyperParams {
    /// The full-scale schedule: 150 epochs.
    pub fn full_scale() -> Self {
        Self {
            epochs: 150,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr0 > self.lr_min) {
            return Err(Error::invalid(format!(
                "need lr0 > lr_min > 0, got lr0={} lr_min={}",
                self.lr0, self.lr_min
            )));
        }
        if self.lr_halve_patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::invalid("gradient clip must be positive"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::invalid("Adam needs betas in [0, 1) and eps > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} / {} moments",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if !(lr > 0.0) {
        return Err(Error::invalid(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if !crate::math::all_finite(grads) {
        return Err(Error::NonFinite("gradient"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - crate::math::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - crate::math::pow(cfg.beta2, t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (sqrt(vh) + cfg.eps);
    }
    Ok(())
}

/// Rescales `grad` so its L2 norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = sqrt(crate::math::energy(grad));
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Halves the learning rate after `patience` epochs without a new strict
/// best validation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr: f64,
    pub best: f64,
    pub stale: usize,
    pub patience: usize,
    pub lr_min: f64,
}

impl LrSchedule {
    pub fn new(hp: &HyperParams) -> Self {
        Self {
            lr: hp.lr0,
            best: f64::INFINITY,
            stale: 0,
            patience: hp.lr_halve_patience,
            lr_min: hp.lr_min,
        }
    }

    /// Feeds one validation loss; returns true if it is a new best.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            return true;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.lr = (self.lr * 0.5).max(self.lr_min);
            self.stale = 0;
        }
        false
    }
}

/// One training mixture in network-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub log_mag: RealTf,
    pub features: FeatureMatrix,
    pub mix_mag: RealTf,
    pub ideal: Vec<BinaryMask>,
}

impl Example {
    /// STFT of the mixture and its stems, Wiener-like masks binarized at
    /// τ = 0.5. Features start unstandardized; see [`Example::standardize`].
    pub fn prepare(
        mixture: &Waveform,
        stems: &[&Waveform],
        cfg: &StftConfig,
        floor_eps: f64,
    ) -> Result<Self> {
        if stems.is_empty() {
            return Err(Error::Empty("stems"));
        }
        let mix_mag = magnitude(&stft(mixture, cfg)?);
        let stem_mags = stems
            .iter()
            .map(|s| {
                if s.len() != mixture.len() {
                    return Err(Error::shape(format!(
                        "stem has {} samples, mixture {}",
                        s.len(),
                        mixture.len()
                    )));
                }
                Ok(magnitude(&stft(s, cfg)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let tau = MaskThreshold::default();
        let ideal = wiener_like_masks(&stem_mags)?
            .iter()
            .map(|m| binarize(m, tau))
            .collect();
        let log_mag = log_magnitude(&mix_mag, floor_eps)?;
        Ok(Self {
            features: FeatureMatrix {
                values: log_mag.clone(),
                floor_eps,
            },
            log_mag,
            mix_mag,
            ideal,
        })
    }

    pub fn standardize(&mut self, stats: &FeatureStats) -> Result<()> {
        if stats.bins() != self.log_mag.bins() {
            return Err(Error::shape(
                "feature statistics do not match the bin count",
            ));
        }
        let values = RealTf::from_fn(self.log_mag.bins(), self.log_mag.frames(), |f, t| {
            (self.log_mag.get(f, t) - stats.mean[f]) / stats.std[f]
        });
        self.features.values = values;
        Ok(())
    }
}

/// Fans per-utterance work out; results must come back in input order so
/// the reduction is independent of the worker count.
pub trait Executor {
    fn gradients(&self, params: &ModelParams, batch: &[&Example]) -> Vec<Result<(f64, Vec<f64>)>>;
    fn losses(&self, params: &ModelParams, items: &[Example]) -> Vec<Result<f64>>;
}

pub fn example_gradient(params: &ModelParams, ex: &Example) -> Result<(f64, Vec<f64>)> {
    backward(&ex.features, &ex.mix_mag, &ex.ideal, params)
}

pub fn example_loss(params: &ModelParams, ex: &Example) -> Result<f64> {
    utterance_loss(&ex.features, &ex.mix_mag, &ex.ideal, params)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn gradients(&self, params: &ModelParams, batch: &[&Example]) -> Vec<Result<(f64, Vec<f64>)>> {
        batch
            .iter()
            .map(|ex| example_gradient(params, ex))
            .collect()
    }

    fn losses(&self, params: &ModelParams, items: &[Example]) -> Vec<Result<f64>> {
        items.iter().map(|ex| example_loss(params, ex)).collect()
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to run inference or resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    pub stft: StftConfig,
    pub floor_eps: f64,
    pub sample_rate: u32,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_loss: f64,
    pub lr: f64,
    pub stale_epochs: usize,
}

impl Checkpoint {
    pub fn fresh(
        arch: ArchSpec,
        stats: FeatureStats,
        stft: StftConfig,
        sample_rate: u32,
        hp: &HyperParams,
    ) -> Result<Self> {
        hp.validate()?;
        stft.validate()?;
        if stft.bins() != arch.input_dim {
            return Err(Error::shape(format!(
                "STFT gives {} bins but the network expects {}",
                stft.bins(),
                arch.input_dim
            )));
        }
        let mut params = ModelParams::init(arch, hp.seed)?;
        if stats.bins() != arch.input_dim {
            return Err(Error::shape(
                "feature statistics do not match the input dimension",
            ));
        }
        params.stats = stats;
        Ok(Self {
            adam: AdamState::new(params.len()),
            params,
            stft,
            floor_eps: DEFAULT_FLOOR_EPS,
            sample_rate,
            epoch: 0,
            best_val_loss: f64::INFINITY,
            lr: hp.lr0,
            stale_epochs: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.params.len();
        if self.adam.m.len() != n || self.adam.v.len() != n {
            return Err(Error::shape(
                "optimizer moments do not match the parameters",
            ));
        }
        self.stft.validate()?;
        if self.stft.bins() != self.params.arch().input_dim {
            return Err(Error::shape("STFT bins do not match the network input"));
        }
        if !(self.lr > 0.0) || !(self.floor_eps > 0.0) || self.sample_rate == 0 {
            return Err(Error::invalid(
                "checkpoint has a non-positive lr, floor or sample rate",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

pub trait TrainHooks {
    /// Wall clock in seconds; the default reports zero.
    fn now(&mut self) -> f64 {
        0.0
    }

    fn on_epoch(
        &mut self,
        _record: &EpochRecord,
        _state: &Checkpoint,
        _is_best: bool,
    ) -> Result<()> {
        Ok(())
    }
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen in this run.
    pub best: Option<Checkpoint>,
    pub last: Checkpoint,
    pub log: TrainLog,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged {
            epoch,
            what: what.to_string(),
        },
        other => other,
    }
}

/// Runs epochs `state.epoch + 1 ..= hp.epochs`. Each epoch's shuffle depends
/// only on `(hp.seed, epoch)`, so resuming from a saved state reproduces an
/// uninterrupted run.
pub fn train(
    mut state: Checkpoint,
    train_set: &[Example],
    valid_set: &[Example],
    hp: &HyperParams,
    exec: &dyn Executor,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome> {
    hp.validate()?;
    state.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if valid_set.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut schedule = LrSchedule {
        lr: state.lr,
        best: state.best_val_loss,
        stale: state.stale_epochs,
        patience: hp.lr_halve_patience,
        lr_min: hp.lr_min,
    };
    let mut log = TrainLog::default();
    let mut best = None;
    for epoch in state.epoch + 1..=hp.epochs {
        let start = hooks.now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(hp.seed, epoch)));
        let lr = schedule.lr;
        let mut total = 0.0;
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut grad = vec![0.0; state.params.len()];
            for r in exec.gradients(&state.params, &batch) {
                let (loss, g) = r.map_err(|e| diverged(epoch, e))?;
                total += loss;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grad {
                *g *= scale;
            }
            clip_global_norm(&mut grad, hp.grad_clip);
            adam_step(
                &mut state.params.values,
                &grad,
                &mut state.adam,
                lr,
                &hp.adam,
            )
            .map_err(|e| diverged(epoch, e))?;
            if !crate::math::all_finite(&state.params.values) {
                return Err(Error::Diverged {
                    epoch,
                    what: "parameters".into(),
                });
            }
        }
        let train_loss = total / train_set.len() as f64;
        let mut val = 0.0;
        for r in exec.losses(&state.params, valid_set) {
            val += r.map_err(|e| diverged(epoch, e))?;
        }
        let val_loss = val / valid_set.len() as f64;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                what: "loss".into(),
            });
        }
        let is_best = schedule.observe(val_loss);
        state.epoch = epoch;
        state.lr = schedule.lr;
        state.best_val_loss = schedule.best;
        state.stale_epochs = schedule.stale;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: hooks.now() - start,
        };
        log.records.push(record);
        if is_best {
            best = Some(state.clone());
        }
        hooks.on_epoch(&record, &state, is_best)?;
    }
    Ok(TrainOutcome {
        best,
        last: state,
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparateOptions {
    pub algo: ClusterAlgo,
    pub seed: u64,
    /// Cluster only bins within this many dB of the loudest bin; masks are
    /// still estimated everywhere. The −30 dB default scored best of
    /// {off, −60, −40, −30, −20} on validation mixtures.
    pub gate_db: Option<f64>,
}

impl Default for SeparateOptions {
    fn default() -> Self {
        Self {
            algo: ClusterAlgo::Gmm,
            seed: 0,
            gate_db: Some(-30.0),
        }
    }
}

/// Estimates `n_speakers` sources from a mixture: embed, cluster the
/// embeddings into attractors, mask the mixture magnitude and resynthesize
/// with the mixture phase.
pub fn separate(
    mixture: &Waveform,
    ckpt: &Checkpoint,
    n_speakers: usize,
    opts: &SeparateOptions,
) -> Result<Vec<Waveform>> {
    if n_speakers == 0 {
        return Err(Error::invalid("at least one speaker is required"));
    }
    if mixture.sample_rate != ckpt.sample_rate {
        return Err(Error::invalid(format!(
            "mixture is {} Hz but the model expects {} Hz",
            mixture.sample_rate, ckpt.sample_rate
        )));
    }
    if mixture.is_empty() {
        return Err(Error::Empty("mixture"));
    }
    let spec = stft(mixture, &ckpt.stft)?;
    let mag = magnitude(&spec);
    let ph = phase(&spec);
    let features = crate::dsp::log_features(&mag, ckpt.floor_eps, &ckpt.params.stats)?;
    let v = forward_embed(&features, &ckpt.params)?;
    let gate = opts.gate_db.map(|db| energy_gate(&mag, db));
    let gate = match gate {
        Some(g) if g.as_slice().iter().filter(|&&x| x != 0.0).count() >= n_speakers => Some(g),
        _ => None,
    };
    let attractors = cluster_attractors_with(&v, n_speakers, opts.algo, opts.seed, gate.as_ref())?;
    estimate_masks(&v, &attractors)?
        .iter()
        .map(|m| {
            istft(
                &apply_mask(&mag, &m.values, &ph, mixture.len())?,
                &ckpt.stft,
                mixture.sample_rate,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMask {
    /// Continuous Wiener-like masks.
    Wiener,
    /// Those masks binarized at τ = 0.5.
    Binary,
}

/// Upper-bound separation from masks computed with the reference stems.
pub fn oracle_separate(
    mixture: &Waveform,
    stems: &[&Waveform],
    cfg: &StftConfig,
    kind: OracleMask,
) -> Result<Vec<Waveform>> {
    let spec = stft(mixture, cfg)?;
    let mag = magnitude(&spec);
    let ph = phase(&spec);
    let stem_mags = stems
        .iter()
        .map(|s| Ok(magnitude(&stft(s, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    let soft = wiener_like_masks(&stem_mags)?;
    soft.iter()
        .map(|m| {
            let values = match kind {
                OracleMask::Wiener => m.values.clone(),
                OracleMask::Binary => binarize(m, MaskThreshold::default()).values().clone(),
            };
            istft(
                &apply_mask(&mag, &values, &ph, mixture.len())?,
                cfg,
                mixture.sample_rate,
            )
        })
        .collect()
}

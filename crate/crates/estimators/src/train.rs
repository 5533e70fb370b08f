use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sqzt_core::homodyne::{DatasetHeader, DatasetReader, LabelKind};

use crate::augment::Augmentation;
use crate::config::HeadKind;
use crate::error::{Error, Result};
use crate::input::fill_slot;
use crate::network::{mse_loss, Cache, Model};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub val_fraction: f64,
    pub seed: u64,
    /// Epochs without a new best validation loss before the learning rate
    /// is halved.
    pub plateau_patience: usize,
    /// Multiplies the MSE before differentiation.
    pub loss_weight: f64,
    /// Finish with the weights of the best validation epoch.
    pub restore_best: bool,
    /// Draw a random phase roll, reflection and sign flip for every training
    /// sample (see [`Augmentation`]). Rolls and reflections are skipped when
    /// the dataset's `θ_s` range is not the full circle.
    #[serde(default)]
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 30,
            adam: AdamConfig::default(),
            val_fraction: 0.1,
            seed: 0,
            plateau_patience: 3,
            loss_weight: 1.0,
            restore_best: true,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(Error::Config(format!("validation fraction {} outside (0, 0.5)", self.val_fraction)));
        }
        if !(self.adam.lr > 0.0 && self.loss_weight > 0.0) {
            return Err(Error::Config("learning rate and loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch MSE over the epoch.
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Full-pass MSE on the training split before and after training.
    pub initial_train_mse: f64,
    pub final_train_mse: f64,
    pub final_val_mse: f64,
    pub best_epoch: usize,
    pub train_count: usize,
    pub val_count: usize,
}

/// Dataset records held in memory.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub header: DatasetHeader,
    values: Vec<f32>,
    phases: Vec<f32>,
    labels: Vec<f32>,
}

impl TrainingData {
    /// Reads every record.
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = DatasetReader::open(path)?;
        let header = reader.header().clone();
        let (n, l, k) = (header.count, header.seq_len, header.label_len());
        let mut data = Self {
            header,
            values: Vec::with_capacity(n * l),
            phases: Vec::with_capacity(n * l),
            labels: Vec::with_capacity(n * k),
        };
        reader.for_each_record(|_, rec| {
            data.values.extend_from_slice(&rec.values);
            data.phases.extend_from_slice(&rec.phases);
            data.labels.extend_from_slice(&rec.labels);
            Ok(())
        })?;
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn values(&self, i: usize) -> &[f32] {
        let l = self.header.seq_len;
        &self.values[i * l..][..l]
    }

    pub fn phases(&self, i: usize) -> &[f32] {
        let l = self.header.seq_len;
        &self.phases[i * l..][..l]
    }

    pub fn labels(&self, i: usize) -> &[f32] {
        let k = self.header.label_len();
        &self.labels[i * k..][..k]
    }

    /// Seeded train/validation split of record indices.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        let n = self.len();
        let n_val = ((n as f64 * val_fraction).round() as usize).max(1);
        if n_val >= n {
            return Err(Error::EmptyDataset(format!("{n} records leave no training split")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let train = idx.split_off(n_val);
        Ok((train, idx))
    }

    fn check_model<T: Scalar>(&self, model: &Model<T>) -> Result<()> {
        let h = &self.header;
        let kind = model.config().head.kind;
        match (h.label_kind, kind) {
            (LabelKind::Params, HeadKind::Characteristic) => {}
            (LabelKind::Cholesky, HeadKind::Reconstruction { m }) if m == h.m => {}
            (labels, head) => {
                return Err(Error::HeadMismatch(format!(
                    "dataset labels {labels:?} (m = {}) cannot train a {head:?} head",
                    h.m
                )))
            }
        }
        if h.seq_len != model.config().input_len {
            return Err(Error::Shape {
                expected: model.config().input_len,
                got: h.seq_len,
            });
        }
        Ok(())
    }

    /// Whether `θ_s` spans the whole circle, so rotated states stay in
    /// distribution.
    fn rotations_allowed(&self) -> bool {
        let (lo, hi) = self.header.ranges.theta_s;
        hi - lo >= TAU - 1e-9
    }

    fn fill_batch<T: Scalar>(&self, model: &Model<T>, idx: &[usize], input: &mut Vec<T>, target: &mut Vec<T>) {
        let cfg = model.config();
        let b = idx.len();
        input.clear();
        input.resize(b * model.input_len(), T::zero());
        target.clear();
        for (slot, &i) in idx.iter().enumerate() {
            fill_slot(cfg, input, b, slot, self.values(i), self.phases(i));
            target.extend(self.labels(i).iter().map(|&v| T::of(v as f64)));
        }
    }

    fn fill_augmented<T: Scalar>(
        &self,
        model: &Model<T>,
        idx: &[usize],
        rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
        input: &mut Vec<T>,
        target: &mut Vec<T>,
    ) {
        let cfg = model.config();
        let (b, l) = (idx.len(), self.header.seq_len);
        let rotate = self.rotations_allowed();
        input.clear();
        input.resize(b * model.input_len(), T::zero());
        target.clear();
        for (slot, &i) in idx.iter().enumerate() {
            let aug = Augmentation::draw(rng, l, rotate);
            let delta = aug.apply_scan(self.values(i), self.phases(i), &mut scratch.values, &mut scratch.phases);
            fill_slot(cfg, input, b, slot, &scratch.values, &scratch.phases);
            scratch.labels.clear();
            scratch.labels.extend_from_slice(self.labels(i));
            aug.apply_labels(self.header.label_kind, self.header.m, delta, &mut scratch.labels);
            target.extend(scratch.labels.iter().map(|&v| T::of(v as f64)));
        }
    }
}

#[derive(Default)]
struct Scratch {
    values: Vec<f32>,
    phases: Vec<f32>,
    labels: Vec<f32>,
}

struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = T::of(1.0 - b1.powi(self.t));
        let c2 = T::of(1.0 - b2.powi(self.t));
        let (b1, b2, eps, lr) = (T::of(b1), T::of(b2), T::of(self.cfg.eps), T::of(lr));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Unweighted MSE over the given records.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &TrainingData, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::EmptyDataset("no records to evaluate".into()));
    }
    let mut cache = Cache::default();
    let (mut input, mut target) = (Vec::new(), Vec::new());
    let mut sum = 0.0;
    for chunk in idx.chunks(128) {
        data.fill_batch(model, chunk, &mut input, &mut target);
        model.forward_cached(&input, chunk.len(), &mut cache)?;
        let (loss, _) = mse_loss(cache.output(), &target, T::one());
        sum += loss.f64() * chunk.len() as f64;
    }
    Ok(sum / idx.len() as f64)
}

/// Loads the dataset and trains `model` in place.
pub fn train(model: &mut Model<f32>, dataset: &Path, tc: &TrainConfig) -> Result<TrainReport> {
    let data = TrainingData::load(dataset)?;
    train_on(model, &data, tc, |_| {})
}

/// Adam on the MSE between outputs and stored labels. Batches are visited in
/// a seeded order and gradients are summed in a fixed order, so a run is
/// reproducible from `(initial weights, data, tc)`.
pub fn train_on<T: Scalar, F: FnMut(&EpochRecord)>(
    model: &mut Model<T>,
    data: &TrainingData,
    tc: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainReport> {
    tc.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("dataset holds no records".into()));
    }
    data.check_model(model)?;
    model.ranges = data.header.ranges;

    let (mut train_idx, val_idx) = data.split(tc.val_fraction, tc.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(1));
    let mut aug_rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(2));
    let mut scratch = Scratch::default();
    let mut adam = Adam::new(model.param_count(), tc.adam);
    let mut grad = vec![T::zero(); model.param_count()];
    let mut cache = Cache::default();
    let (mut input, mut target) = (Vec::new(), Vec::new());
    let weight = T::of(tc.loss_weight);

    let initial_train_mse = evaluate(model, data, &train_idx)?;
    let mut lr = tc.adam.lr;
    let mut best = (f64::INFINITY, 0usize, model.params().to_vec());
    let mut stale = 0;
    let mut history = Vec::with_capacity(tc.epochs);

    for epoch in 1..=tc.epochs {
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in train_idx.chunks(tc.batch_size) {
            if tc.augment {
                data.fill_augmented(model, chunk, &mut aug_rng, &mut scratch, &mut input, &mut target);
            } else {
                data.fill_batch(model, chunk, &mut input, &mut target);
            }
            model.forward_cached(&input, chunk.len(), &mut cache)?;
            let (loss, d_out) = mse_loss(cache.output(), &target, weight);
            grad.fill(T::zero());
            model.backward(&mut cache, &d_out, &mut grad);
            adam.step(model.params_mut(), &grad, lr);
            sum += loss.f64() / tc.loss_weight * chunk.len() as f64;
        }
        let train_mse = sum / train_idx.len() as f64;
        let val_mse = evaluate(model, data, &val_idx)?;
        if !(train_mse.is_finite() && val_mse.is_finite()) {
            return Err(Error::Config(format!("training diverged at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_mse,
            val_mse,
            lr,
        };
        on_epoch(&record);
        history.push(record);

        if val_mse < best.0 {
            best = (val_mse, epoch, model.params().to_vec());
            stale = 0;
        } else {
            stale += 1;
            if stale >= tc.plateau_patience {
                lr *= 0.5;
                stale = 0;
            }
        }
    }

    let best_epoch = if tc.restore_best && best.1 > 0 {
        model.params_mut().copy_from_slice(&best.2);
        best.1
    } else {
        tc.epochs
    };
    Ok(TrainReport {
        history,
        initial_train_mse,
        final_train_mse: evaluate(model, data, &train_idx)?,
        final_val_mse: evaluate(model, data, &val_idx)?,
        best_epoch,
        train_count: train_idx.len(),
        val_count: val_idx.len(),
    })
}

/// Plain-text loss log, one `epoch train_mse val_mse` row per epoch.
pub fn write_loss_log<W: Write>(history: &[EpochRecord], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "epoch train_mse val_mse")?;
    for r in history {
        writeln!(w, "{} {:.9e} {:.9e}", r.epoch, r.train_mse, r.val_mse)?;
    }
    Ok(())
}

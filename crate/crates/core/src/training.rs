//! Optimization loop: SNR-dependent learning rates, batched per-utterance
//! gradients, clipping, SGD or Adam updates and validation-based selection.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dsp::FeatureSequence;
use crate::error::{Error, Result};
use crate::model::{forward, loss_and_gradients, mse_loss, AttentionConfig, ModelParams, Params, RunMode};
use crate::nn::Tensor;

/// Learning rate for a mixture at `snr_db`.
pub fn lr_for_snr(snr_db: f64) -> Result<f64> {
    if snr_db.is_nan() {
        return Err(Error::input("SNR is NaN"));
    }
    Ok(if snr_db >= 10.0 {
        1e-6
    } else if snr_db >= 5.0 {
        1e-5
    } else if snr_db >= 0.0 {
        5e-5
    } else if snr_db >= -5.0 {
        1e-4
    } else {
        5e-4
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::config(format!(
                "unknown optimizer {other:?} (expected sgd or adam)"
            ))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub attention: AttentionConfig,
    pub optimizer: OptimizerKind,
    /// Multiplies every scheduled rate.
    pub lr_scale: f64,
    /// Replaces the SNR schedule with a constant rate.
    pub lr_override: Option<f64>,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 96,
            epochs: 100,
            dropout_rate: 0.2,
            grad_clip_norm: 5.0,
            seed: 0,
            attention: AttentionConfig::default(),
            optimizer: OptimizerKind::Sgd,
            lr_scale: 1.0,
            lr_override: None,
            patience: Some(20),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return Err(Error::config("grad_clip_norm must be positive"));
        }
        if !(self.lr_scale.is_finite() && self.lr_scale >= 0.0) {
            return Err(Error::config("lr_scale must be finite and nonnegative"));
        }
        if let Some(lr) = self.lr_override {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::config("learning rate must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    /// Rate for one example.
    pub fn lr_for(&self, snr_db: f64) -> Result<f64> {
        match self.lr_override {
            Some(lr) => Ok(lr),
            None => Ok(lr_for_snr(snr_db)? * self.lr_scale),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub noisy: FeatureSequence,
    pub clean: FeatureSequence,
    pub snr_db: f64,
    pub id: String,
}

impl TrainingExample {
    pub fn new(noisy: FeatureSequence, clean: FeatureSequence, snr_db: f64, id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if noisy.n_frames() != clean.n_frames() || noisy.dim() != clean.dim() {
            return Err(Error::input(format!("{id}: noisy and clean feature shapes differ")));
        }
        if !snr_db.is_finite() {
            return Err(Error::input(format!("{id}: SNR must be finite")));
        }
        Ok(Self {
            noisy,
            clean,
            snr_db,
            id,
        })
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer state. Adam moments are created on the first step.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    steps: u64,
    moments: Option<(Params<Tensor>, Params<Tensor>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            steps: 0,
            moments: None,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Parameter change for gradient `grads` at rate `lr`; advances the state.
    pub fn delta(&mut self, grads: &Params<Tensor>, lr: f64) -> Params<Tensor> {
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let mut d = grads.clone();
                d.scale(-lr);
                d
            }
            OptimizerKind::Adam => {
                let (m, v) = self
                    .moments
                    .get_or_insert_with(|| (grads.zeros_like(), grads.zeros_like()));
                m.zip_apply(grads, |m, g| {
                    for (a, b) in m.data_mut().iter_mut().zip(g.data()) {
                        *a = ADAM_BETA1 * *a + (1.0 - ADAM_BETA1) * b;
                    }
                });
                v.zip_apply(grads, |v, g| {
                    for (a, b) in v.data_mut().iter_mut().zip(g.data()) {
                        *a = ADAM_BETA2 * *a + (1.0 - ADAM_BETA2) * b * b;
                    }
                });
                let c1 = 1.0 - ADAM_BETA1.powi(self.steps as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(self.steps as i32);
                m.zip_map(v, |m, v| {
                    let data = m
                        .data()
                        .iter()
                        .zip(v.data())
                        .map(|(m, v)| -lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS))
                        .collect();
                    Tensor::new(m.shape().to_vec(), data).expect("same shape")
                })
            }
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Params<Tensor>, lr: f64) {
        let d = self.delta(grads, lr);
        params.tensors_mut().add_assign(&d);
    }
}

/// Scales `grads` so their global norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_by_global_norm(grads: &mut Params<Tensor>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// Mean training-mode loss over examples.
    pub mean_loss: f64,
    /// Mean and max of the pre-clip batch gradient norm.
    pub mean_grad_norm: f64,
    pub max_grad_norm: f64,
    pub batches: usize,
}

/// One pass over `examples` in seeded random order.
pub fn train_epoch(
    params: &mut ModelParams,
    opt: &mut Optimizer,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::input("no training examples"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);

    let mut loss_sum = 0.0;
    let mut norms = Vec::new();
    for batch in order.chunks(cfg.batch_size) {
        let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
        let shared: &ModelParams = params;
        let results: Vec<Result<(f64, Params<Tensor>)>> = batch
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(&i, &seed)| {
                let ex = &examples[i];
                let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
                let mode = RunMode::Training {
                    dropout: cfg.dropout_rate,
                    rng: &mut drop_rng,
                };
                loss_and_gradients(shared, &ex.noisy, &ex.clean, &cfg.attention, mode).map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("example {}: {msg}", ex.id)),
                    other => other,
                })
            })
            .collect();

        let mut total: Option<Params<Tensor>> = None;
        let mut lr = 0.0;
        for (r, &i) in results.into_iter().zip(batch) {
            let (loss, g) = r?;
            loss_sum += loss;
            lr += cfg.lr_for(examples[i].snr_db)?;
            match &mut total {
                Some(t) => t.add_assign(&g),
                None => total = Some(g),
            }
        }
        let mut grads = total.expect("nonempty batch");
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        lr /= n;
        let norm = clip_by_global_norm(&mut grads, cfg.grad_clip_norm);
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("gradient norm is {norm}")));
        }
        norms.push(norm);
        opt.step(params, &grads, lr);
        if !params.tensors().is_finite() {
            return Err(Error::Numeric("parameters became non-finite".into()));
        }
    }
    Ok(EpochStats {
        mean_loss: loss_sum / examples.len() as f64,
        mean_grad_norm: norms.iter().sum::<f64>() / norms.len() as f64,
        max_grad_norm: norms.iter().fold(0.0, |m, &x| f64::max(m, x)),
        batches: norms.len(),
    })
}

/// Mean inference-mode MSE over `examples`.
pub fn evaluate_mse(params: &ModelParams, examples: &[TrainingExample], cfg: &AttentionConfig) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::input("no evaluation examples"));
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| mse_loss(&forward(params, &ex.noisy, cfg, RunMode::Inference)?, &ex.clean))
        .collect::<Result<_>>()?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric(format!("validation loss is {mean}")));
    }
    Ok(mean)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub mean_grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation MSE; the initial parameters when
    /// no epoch ran.
    pub best: ModelParams,
    pub best_epoch: Option<usize>,
    pub best_val_mse: f64,
    /// Parameters after the last epoch that ran.
    pub last: ModelParams,
    pub curve: Vec<CurveRow>,
}

/// Runs up to `cfg.epochs` epochs, tracking the best validation MSE.
/// `on_epoch` sees each row as it is produced.
pub fn train(
    init: &ModelParams,
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&CurveRow, &ModelParams),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::input("training and validation sets must be nonempty"));
    }
    let mut params = init.clone();
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = init.clone();
    let mut best_epoch = None;
    let mut best_val = f64::INFINITY;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let stats = train_epoch(&mut params, &mut opt, train_set, cfg, &mut rng)?;
        let val = evaluate_mse(&params, val_set, &cfg.attention)?;
        let row = CurveRow {
            epoch,
            train_mse: stats.mean_loss,
            val_mse: val,
            mean_grad_norm: stats.mean_grad_norm,
        };
        on_epoch(&row, &params);
        curve.push(row);
        if val < best_val {
            best_val = val;
            best_epoch = Some(epoch);
            best = params.clone();
        } else if let (Some(p), Some(b)) = (cfg.patience, best_epoch) {
            if epoch - b >= p {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_mse: best_val,
        last: params,
        curve,
    })
}

pub fn write_loss_curve(path: impl AsRef<Path>, curve: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_mse", "val_mse", "mean_grad_norm"])?;
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            r.train_mse.to_string(),
            r.val_mse.to_string(),
            r.mean_grad_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

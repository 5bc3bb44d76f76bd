//! Adam training with validation-based early stopping.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Window;
use crate::error::{Error, IoContext, Result};
use crate::model::{
    loss_and_grads, total_loss, Architecture, Batch, ModelParameters, ModelVariant, Real, Sampling,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 4,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("trainer.patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("trainer.batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("trainer.max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("trainer.learning_rate must be positive".into()));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::Config("trainer.grad_clip must be non-negative".into()));
        }
        Ok(())
    }
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Record the validation loss of the next epoch (1-based). Returns
    /// `true` when training should stop after this epoch.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        self.epoch += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = self.epoch;
        }
        self.epoch - self.best_epoch >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    /// Whether the last observed epoch set a new best.
    pub fn improved(&self) -> bool {
        self.epoch > 0 && self.best_epoch == self.epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainLog {
    /// Loss history: `epoch,train_loss,val_loss,best`. Wall time is kept out
    /// of this file so that reruns are byte-identical.
    pub fn losses_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,best\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{}",
                e.epoch,
                e.train_loss,
                e.val_loss,
                u8::from(e.epoch == self.best_epoch)
            );
        }
        s
    }

    /// `epoch,seconds`.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.3}", e.epoch, e.seconds);
        }
        s
    }

    pub fn write(&self, losses: &Path, timing: &Path) -> Result<()> {
        std::fs::write(losses, self.losses_csv()).ctx(|| format!("writing {}", losses.display()))?;
        std::fs::write(timing, self.timing_csv()).ctx(|| format!("writing {}", timing.display()))
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ModelParameters<T>, learning_rate: f64) -> Self {
        let shapes: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![T::zero(); t.data.len()])
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: shapes.clone(),
            v: shapes,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters<T>, grads: &ModelParameters<T>) {
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = T::of(self.learning_rate * c2.sqrt() / c1);
        let eps = T::of(self.epsilon * c2.sqrt());
        for (((_, p), (_, g)), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                p.data[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Global L2 norm of all gradients.
pub fn gradient_norm<T: Real>(grads: &ModelParameters<T>) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescale gradients so their global norm is at most `max_norm`.
pub fn clip_gradients<T: Real>(grads: &mut ModelParameters<T>, max_norm: f64) -> f64 {
    let norm = gradient_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = T::of(max_norm / norm);
        for (_, t) in grads.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Mean loss over `windows` with `z = μ`, batched by `batch_size`.
pub fn validate<T: Real>(params: &ModelParameters<T>, windows: &[Window<'_>], batch_size: usize) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::InvalidInput("validation set is empty".into()));
    }
    let mut sum = 0.0;
    let mut frames = 0usize;
    for chunk in windows.chunks(batch_size.max(1)) {
        let batch = Batch::<T>::from_windows(chunk)?;
        let fwd = params.forward(&batch, Sampling::Mean)?;
        let n = batch.frames_len();
        sum += total_loss(params.variant, &batch, &fwd)?.total * n as f64;
        frames += n;
    }
    Ok(sum / frames as f64)
}

/// One optimization pass over `batch` with fresh noise from `rng`.
/// Returns the batch loss before the update.
pub fn train_step<T: Real>(
    params: &mut ModelParameters<T>,
    opt: &mut Adam<T>,
    batch: &Batch<T>,
    rng: &mut ChaCha8Rng,
    grad_clip: f64,
) -> Result<f64> {
    let eps: Vec<T> = (0..batch.frames_len() * params.arch.latent)
        .map(|_| T::of(StandardNormal.sample(rng)))
        .collect();
    let sampling = if params.variant.is_stochastic() {
        Sampling::Noise(&eps)
    } else {
        Sampling::Mean
    };
    let fwd = params.forward(batch, sampling)?;
    let (loss, out) = loss_and_grads(params.variant.into(), batch, &fwd)?;
    if !loss.total.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            detail: format!("non-finite batch loss {}", loss.total),
        });
    }
    let mut grads = params.backward(&fwd, &out)?;
    let norm = clip_gradients(&mut grads, grad_clip);
    if !norm.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            detail: "non-finite gradient norm".into(),
        });
    }
    opt.step(params, &grads);
    Ok(loss.total)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters<f32>,
    pub log: TrainLog,
}

/// Train `variant` from scratch. The returned parameters are those of the
/// epoch with the lowest validation loss.
pub fn train(
    variant: ModelVariant,
    arch: Architecture,
    train_windows: &[Window<'_>],
    val_windows: &[Window<'_>],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_observed(variant, arch, train_windows, val_windows, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(
    variant: ModelVariant,
    arch: Architecture,
    train_windows: &[Window<'_>],
    val_windows: &[Window<'_>],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_windows.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if val_windows.is_empty() {
        return Err(Error::InvalidInput("validation set is empty".into()));
    }
    let mut params = ModelParameters::<f32>::new(variant, arch, config.seed)?;
    let mut opt = Adam::new(&params, config.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4e4f_4953);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = params.clone();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train_windows.len()).collect();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let mut frames = 0usize;
        for idx in order.chunks(config.batch_size) {
            let batch = Batch::<f32>::from_windows(idx.iter().map(|&i| &train_windows[i]))?;
            let loss = train_step(&mut params, &mut opt, &batch, &mut noise_rng, config.grad_clip)
                .map_err(|e| match e {
                    Error::Diverged { detail, .. } => Error::Diverged { epoch, detail },
                    other => other,
                })?;
            sum += loss * batch.frames_len() as f64;
            frames += batch.frames_len();
        }
        let val_loss = validate(&params, val_windows, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss {val_loss}"),
            });
        }
        let stop = stopper.observe(val_loss);
        if stopper.improved() {
            best = params.clone();
        }
        let record = EpochRecord {
            epoch,
            train_loss: sum / frames as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{variant} epoch {epoch}: train {:.6e} val {:.6e} ({:.1}s)",
            record.train_loss,
            record.val_loss,
            record.seconds
        );
        on_epoch(&record);
        log.epochs.push(record);
        if stop {
            break;
        }
    }
    log.best_epoch = stopper.best_epoch();
    Ok(TrainOutcome { params: best, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{self, ProcessedSequence};
    use crate::frame::{Frame, Grid};
    use crate::simulator::{ArrayConfig, Label};

    #[test]
    fn stopping_trace_from_the_rule() {
        let mut s = EarlyStopping::new(4);
        let trace = [5.0, 4.0, 4.1, 4.2, 4.3, 4.4];
        let mut stopped_at = None;
        for (i, &v) in trace.iter().enumerate() {
            if s.observe(v) {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(6));
        assert_eq!(s.best_epoch(), 2);
        assert_eq!(s.best_loss(), 4.0);
    }

    #[test]
    fn decreasing_trace_never_stops() {
        let mut s = EarlyStopping::new(4);
        for i in 0..50 {
            assert!(!s.observe(100.0 - i as f64));
        }
        assert_eq!(s.best_epoch(), 50);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut s = EarlyStopping::new(1);
        assert!(!s.observe(1.0));
        assert!(s.observe(1.0));
        assert_eq!(s.best_epoch(), 1);
    }

    fn toy_sequences(n: usize) -> Vec<ProcessedSequence> {
        let grid = Grid::new(8, 8);
        (0..n)
            .map(|s| ProcessedSequence {
                id: format!("n{s:05}"),
                config: ArrayConfig::from_pairs([[155, 0], [160, 45], [170, 90], [185, 135]]).unwrap(),
                label: Label::Normal,
                frames: (0..12)
                    .map(|t| Frame {
                        grid,
                        data: (0..64)
                            .map(|i| ((i + t + s) % 7) as f32 / 7.0 * (t as f32 / 12.0))
                            .collect(),
                    })
                    .collect(),
            })
            .collect()
    }

    fn tiny_arch() -> Architecture {
        Architecture {
            height: 8,
            width: 8,
            channels: [2, 3, 4],
            hidden: 6,
            latent: 8,
        }
    }

    #[test]
    fn small_step_decreases_window_loss() {
        let seqs = toy_sequences(1);
        let windows = dataset::window(&seqs[0], 4, 4).unwrap();
        for v in ModelVariant::all() {
            let batch = Batch::<f64>::from_windows(&windows[..1]).unwrap();
            let mut params = ModelParameters::<f64>::new(v, tiny_arch(), 3).unwrap();
            let before = validate(&params, &windows[..1], 1).unwrap();
            let fwd = params.forward(&batch, Sampling::Mean).unwrap();
            let (_, out) = loss_and_grads(v.into(), &batch, &fwd).unwrap();
            let grads = params.backward(&fwd, &out).unwrap();
            let lr = 1e-5;
            for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                for (a, b) in p.data.iter_mut().zip(&g.data) {
                    *a -= lr * b;
                }
            }
            let after = validate(&params, &windows[..1], 1).unwrap();
            assert!(after < before, "{v}: {after} !< {before}");
        }
    }

    #[test]
    fn adam_step_decreases_loss() {
        let seqs = toy_sequences(1);
        let windows = dataset::window(&seqs[0], 4, 4).unwrap();
        let batch = Batch::<f64>::from_windows(&windows[..1]).unwrap();
        let mut params = ModelParameters::<f64>::new(ModelVariant::cvae(), tiny_arch(), 5).unwrap();
        let before = validate(&params, &windows[..1], 1).unwrap();
        let mut opt = Adam::new(&params, 1e-5);
        let fwd = params.forward(&batch, Sampling::Mean).unwrap();
        let (_, out) = loss_and_grads(params.variant.into(), &batch, &fwd).unwrap();
        let grads = params.backward(&fwd, &out).unwrap();
        opt.step(&mut params, &grads);
        assert!(validate(&params, &windows[..1], 1).unwrap() < before);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let params = ModelParameters::<f64>::new(ModelVariant::ae(), tiny_arch(), 1).unwrap();
        let mut g = params.clone();
        let before = clip_gradients(&mut g, 0.5);
        assert!(before > 0.5);
        assert!((gradient_norm(&g) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn validation_is_mean_invariant_and_ae_is_mse() {
        let seqs = toy_sequences(2);
        let mut windows = dataset::window(&seqs[0], 4, 4).unwrap();
        windows.extend(dataset::window(&seqs[1], 4, 4).unwrap());
        let params = ModelParameters::<f32>::new(ModelVariant::ae(), tiny_arch(), 1).unwrap();
        let once = validate(&params, &windows, 3).unwrap();
        let doubled: Vec<_> = windows.iter().chain(windows.iter()).cloned().collect();
        let twice = validate(&params, &doubled, 5).unwrap();
        assert!((once - twice).abs() < 1e-9 * once.abs().max(1.0));

        // the AE loss is the per-frame squared error
        let batch = Batch::<f32>::from_windows(&windows).unwrap();
        let fwd = params.forward(&batch, Sampling::Mean).unwrap();
        let sse: f64 = batch
            .frames
            .iter()
            .zip(&fwd.recon.mean)
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
            .sum::<f64>()
            / batch.frames_len() as f64;
        assert!((sse - once).abs() < 1e-6 * sse);
        assert!(validate(&params, &[], 3).is_err());
    }

    #[test]
    fn training_is_deterministic_and_keeps_best_epoch() {
        let seqs = toy_sequences(3);
        let train_w: Vec<_> = seqs[..2].iter().flat_map(|s| dataset::window(s, 4, 2).unwrap()).collect();
        let val_w = dataset::window(&seqs[2], 4, 4).unwrap();
        let cfg = TrainConfig {
            max_epochs: 6,
            batch_size: 4,
            patience: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(ModelVariant::cvae(), tiny_arch(), &train_w, &val_w, &cfg).unwrap();
        let b = train(ModelVariant::cvae(), tiny_arch(), &train_w, &val_w, &cfg).unwrap();
        assert_eq!(a.log.losses_csv(), b.log.losses_csv());
        assert_eq!(a.params, b.params);
        assert!(a.log.epochs.len() <= 6);
        let min = a.log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.log.epochs[a.log.best_epoch - 1].val_loss, min);
        assert!(a.log.epochs.len() - a.log.best_epoch <= cfg.patience);
        let best_val = validate(&a.params, &val_w, 4).unwrap();
        assert!((best_val - min).abs() < 1e-9 * min.abs().max(1.0));
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let seqs = toy_sequences(1);
        let val_w = dataset::window(&seqs[0], 4, 4).unwrap();
        assert!(train(ModelVariant::ae(), tiny_arch(), &[], &val_w, &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

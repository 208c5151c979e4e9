use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::network::{argmax_rows, cross_entropy, Mode, Network};
use super::optim::{Optimizer, OptimizerKind};
use super::tensor::{one_hot, Real, Tensor};
use crate::error::{AmcError, Result};
use crate::metrics::Confusion;
use crate::modem::ModulationScheme;
use crate::seed::derive_rng;

/// Labelled images held as `f32`, converted to the engine's scalar type one
/// batch at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    /// Per-sample shape, e.g. `[1, 36, 36]`.
    pub sample_shape: Vec<usize>,
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
}

impl ImageSet {
    pub fn new(sample_shape: Vec<usize>) -> Self {
        ImageSet {
            sample_shape,
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, image: &[f32], label: usize) -> Result<()> {
        if image.len() != self.sample_len() {
            return Err(AmcError::Shape(format!(
                "image has {} values, expected {}",
                image.len(),
                self.sample_len()
            )));
        }
        self.data.extend_from_slice(image);
        self.labels.push(label);
        Ok(())
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn subset(&self, indices: &[usize]) -> ImageSet {
        let mut out = ImageSet::new(self.sample_shape.clone());
        out.data.reserve(indices.len() * self.sample_len());
        for &i in indices {
            out.data.extend_from_slice(self.image(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    /// Stacks the given samples into a `[B, sample_shape..]` tensor.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Tensor<T> {
        let mut shape = vec![indices.len()];
        shape.extend(self.sample_shape.iter().copied());
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| T::of_f64(v as f64)));
        }
        Tensor { shape, data, grad: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Validation accuracy that counts as "converged" for epochs-to-threshold.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            epochs: 20,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            threshold: 0.85,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(AmcError::InvalidArgument(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(AmcError::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Cumulative wall-clock seconds since training started.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub threshold: f64,
}

impl TrainReport {
    /// First epoch whose validation accuracy reached the threshold.
    pub fn epochs_to_threshold(&self) -> Option<usize> {
        self.epochs.iter().find(|e| e.val_acc >= self.threshold).map(|e| e.epoch)
    }

    pub fn seconds_to_threshold(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.val_acc >= self.threshold).map(|e| e.seconds)
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.seconds)
    }

    /// `epoch,loss,train_acc,val_acc,seconds`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,val_acc,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:.9},{:.6},{:.6},{:.3}", e.epoch, e.loss, e.train_acc, e.val_acc, e.seconds);
        }
        out
    }

    /// `epoch,loss,train_acc,val_acc`: the history without wall-clock
    /// columns, so it is reproducible byte for byte.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:.9},{:.6},{:.6}", e.epoch, e.loss, e.train_acc, e.val_acc);
        }
        out
    }
}

/// Mini-batch training with a per-epoch shuffle drawn from
/// `derive(seed, [3, epoch])`. The parameters of the epoch with the best
/// validation accuracy (training accuracy when `val` is `None`) are restored
/// at the end.
pub fn train<T: Real>(
    net: &mut Network<T>,
    train_set: &ImageSet,
    val: Option<&ImageSet>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(AmcError::InvalidArgument("training set is empty".into()));
    }
    let classes = net.output_len();
    let mut opt = Optimizer::<T>::new(config.optimizer, config.lr);
    net.reseed_dropout(config.seed);
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<Vec<T>>)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut derive_rng(config.seed, &[3, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let x = train_set.batch::<T>(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let y = one_hot::<T>(&labels, classes)?;
            let probs = net.forward(&x, Mode::Train)?;
            let loss = cross_entropy(&probs, &y)?;
            if !loss.is_finite() {
                return Err(AmcError::Numeric(format!("loss became {loss} in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += argmax_rows(&probs).iter().zip(&labels).filter(|(p, l)| p == l).count();
            net.zero_grad();
            net.backward_cross_entropy(&y, 1.0, false)?;
            opt.step(net.params_mut());
        }
        let train_acc = correct as f64 / train_set.len() as f64;
        let val_acc = match val {
            Some(v) if !v.is_empty() => evaluate(net, v)?.accuracy(),
            _ => f64::NAN,
        };
        let score = if val_acc.is_nan() { train_acc } else { val_acc };
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, net.snapshot()));
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            train_acc,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train {:.3} val {:.3} ({:.1}s)",
            stats.loss,
            stats.train_acc,
            stats.val_acc,
            stats.seconds
        );
        epochs.push(stats);
    }

    let (best_val_acc, best_epoch) = match best {
        Some((score, epoch, snap)) => {
            net.restore(&snap);
            (score, epoch)
        }
        None => (f64::NAN, 0),
    };
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_val_acc,
        threshold: config.threshold,
    })
}

/// Runs `f` over consecutive index batches of `0..n` on all available
/// cores and concatenates the results in batch order.
pub fn par_batches<R, F>(n: usize, batch: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&[usize]) -> Result<Vec<R>> + Sync,
{
    let idx: Vec<usize> = (0..n).collect();
    let batches: Vec<&[usize]> = idx.chunks(batch.max(1)).collect();
    let threads = std::thread::available_parallelism().map_or(1, |t| t.get()).min(batches.len());
    if threads <= 1 {
        let mut out = Vec::with_capacity(n);
        for b in batches {
            out.extend(f(b)?);
        }
        return Ok(out);
    }
    let per = batches.len().div_ceil(threads);
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = batches
            .chunks(per)
            .map(|group| {
                let f = &f;
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for b in group {
                        out.extend(f(b)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Class predictions for every image, computed in inference mode.
pub fn predict_labels<T: Real>(net: &Network<T>, set: &ImageSet) -> Result<Vec<usize>> {
    par_batches(set.len(), 256, |chunk| Ok(argmax_rows(&net.predict(&set.batch::<T>(chunk))?)))
}

/// Confusion matrix of `net` on `set` (rows: true class, columns: predicted).
pub fn evaluate<T: Real>(net: &Network<T>, set: &ImageSet) -> Result<Confusion> {
    let preds = predict_labels(net, set)?;
    let mut cm = Confusion::new(ModulationScheme::COUNT.max(net.output_len()));
    for (&t, &p) in set.labels.iter().zip(&preds) {
        cm.add(t, p);
    }
    Ok(cm)
}

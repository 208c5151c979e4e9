//! Channel compensation network.
//!
//! A four-layer dense network reads a coarse soft polar histogram of the
//! received frame and emits a head `(u, v)`, mapped to a radius factor
//! `Δr = exp(u)` and a phase shift `Δθ = π·tanh(v)`. The frame is then
//! compensated (`r' = r·Δr`, `θ' = wrap(θ + Δθ)`), soft-rasterized,
//! max-normalized and classified by the CNN. The classification loss is
//! backpropagated through the whole chain.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{AmcError, Result};
use crate::features::{soft_rasterize_polar, wrap_angle, GridSpec, MaxNormalized, PolarFrame, PolarSample, SoftRaster};
use crate::metrics::Confusion;
use crate::modem::{ChannelParams, ModulationScheme};
use crate::neuralnet::{par_batches, 
    argmax_rows, cross_entropy, one_hot, EpochStats, LayerSpec, Mode, NetKind, Network, Optimizer, Real, Tensor,
    TrainConfig, TrainReport,
};
use crate::seed::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensationParams {
    /// Multiplicative radius correction, always positive.
    pub delta_r: f64,
    /// Additive phase correction in radians.
    pub delta_theta: f64,
}

impl CompensationParams {
    pub const IDENTITY: CompensationParams = CompensationParams {
        delta_r: 1.0,
        delta_theta: 0.0,
    };

    pub fn new(delta_r: f64, delta_theta: f64) -> Result<Self> {
        if !(delta_r > 0.0 && delta_r.is_finite()) || !delta_theta.is_finite() {
            return Err(AmcError::InvalidArgument(format!(
                "compensation needs Δr > 0 and finite Δθ, got ({delta_r}, {delta_theta})"
            )));
        }
        Ok(CompensationParams { delta_r, delta_theta })
    }

    /// `Δr = exp(u)`, `Δθ = π·tanh(v)`.
    pub fn from_head(u: f64, v: f64) -> Self {
        CompensationParams {
            delta_r: u.exp(),
            delta_theta: PI * v.tanh(),
        }
    }

    /// The algebraic inverse of a block-fading channel with `f0 = 0`.
    pub fn inverse_of(channel: &ChannelParams) -> Self {
        CompensationParams {
            delta_r: 1.0 / channel.amplitude,
            delta_theta: -channel.phase_offset,
        }
    }
}

/// Chain rule from (∂L/∂Δr, ∂L/∂Δθ) to (∂L/∂u, ∂L/∂v).
pub fn head_backward(u: f64, v: f64, grad_delta_r: f64, grad_delta_theta: f64) -> (f64, f64) {
    let t = v.tanh();
    (grad_delta_r * u.exp(), grad_delta_theta * PI * (1.0 - t * t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcnSpec {
    /// Resolution of the square input histogram.
    pub input_bins: usize,
    /// Radius range of the input histogram.
    pub r_max: f64,
    pub widths: [usize; 4],
}

impl Default for CcnSpec {
    fn default() -> Self {
        CcnSpec {
            input_bins: 16,
            r_max: 6.0,
            widths: [256, 128, 64, 2],
        }
    }
}

impl CcnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_bins == 0 || !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(AmcError::InvalidArgument("CCN input grid needs bins >= 1 and r_max > 0".into()));
        }
        if self.widths[3] != 2 || self.widths.contains(&0) {
            return Err(AmcError::InvalidArgument(format!(
                "CCN widths must be positive and end in 2, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn input_grid(&self) -> GridSpec {
        GridSpec::polar(self.r_max, self.input_bins)
    }

    pub fn input_len(&self) -> usize {
        self.input_bins * self.input_bins
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let [a, b, c, d] = self.widths;
        vec![
            LayerSpec::Dense { out_dim: a },
            LayerSpec::Relu,
            LayerSpec::Dense { out_dim: b },
            LayerSpec::Relu,
            LayerSpec::Dense { out_dim: c },
            LayerSpec::Relu,
            LayerSpec::Dense { out_dim: d },
        ]
    }
}

/// CCN input: the soft polar histogram of the raw frame, scaled so that the
/// mean cell value is 1 when every sample is in range.
pub fn ccn_input(polar: &PolarFrame, spec: &CcnSpec) -> Vec<f64> {
    let grid = spec.input_grid();
    let img = soft_rasterize_polar(polar, &grid).image;
    let scale = if polar.is_empty() {
        0.0
    } else {
        grid.cells() as f64 / polar.len() as f64
    };
    img.data.iter().map(|v| v * scale).collect()
}

/// A compensator with its output head zeroed, so it starts at the identity.
pub fn build_ccn<T: Real>(spec: &CcnSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut net = Network::new(NetKind::Compensator, vec![spec.input_len()], &spec.layers(), seed)?;
    net.zero_output_layer();
    Ok(net)
}

fn check_ccn<T: Real>(net: &Network<T>, spec: &CcnSpec) -> Result<()> {
    if net.kind != NetKind::Compensator || net.input_shape != [spec.input_len()] || net.output_len() != 2 {
        return Err(AmcError::Shape(format!(
            "compensator must map {} inputs to 2 outputs, got {:?} -> {}",
            spec.input_len(),
            net.input_shape,
            net.output_len()
        )));
    }
    Ok(())
}

fn ccn_batch<T: Real>(frames: &[&PolarFrame], spec: &CcnSpec) -> Tensor<T> {
    let mut data = Vec::with_capacity(frames.len() * spec.input_len());
    for f in frames {
        data.extend(ccn_input(f, spec).into_iter().map(T::of_f64));
    }
    Tensor {
        shape: vec![frames.len(), spec.input_len()],
        data,
        grad: None,
    }
}

/// Compensation parameters the network predicts for one frame.
pub fn ccn_forward<T: Real>(net: &Network<T>, polar: &PolarFrame, spec: &CcnSpec) -> Result<CompensationParams> {
    check_ccn(net, spec)?;
    let head = net.predict(&ccn_batch(&[polar], spec))?;
    Ok(CompensationParams::from_head(head.data[0].as_f64(), head.data[1].as_f64()))
}

/// `r' = r·Δr`, `θ' = wrap(θ + Δθ)`.
pub fn compensate(polar: &PolarFrame, params: &CompensationParams) -> PolarFrame {
    PolarFrame {
        samples: polar
            .samples
            .iter()
            .map(|p| PolarSample {
                r: p.r * params.delta_r,
                theta: wrap_angle(p.theta + params.delta_theta),
            })
            .collect(),
        scheme: polar.scheme,
    }
}

/// Per-frame record of the differentiable part of the pipeline.
#[derive(Debug, Clone)]
struct FrameTrace {
    head: (f64, f64),
    raster: SoftRaster,
    norm: MaxNormalized,
    radii: Vec<f64>,
}

/// CCN and CNN joined through compensation and the soft rasterizer.
#[derive(Debug, Clone)]
pub struct CcnPipeline<T> {
    pub ccn: Network<T>,
    pub cnn: Network<T>,
    pub ccn_spec: CcnSpec,
    pub grid: GridSpec,
    traces: Option<Vec<FrameTrace>>,
}

impl<T: Real> CcnPipeline<T> {
    pub fn new(ccn: Network<T>, cnn: Network<T>, ccn_spec: CcnSpec, grid: GridSpec) -> Result<Self> {
        ccn_spec.validate()?;
        grid.validate()?;
        check_ccn(&ccn, &ccn_spec)?;
        if cnn.input_shape != [1, grid.height, grid.width] {
            return Err(AmcError::Shape(format!(
                "classifier expects {:?}, grid gives [1, {}, {}]",
                cnn.input_shape, grid.height, grid.width
            )));
        }
        Ok(CcnPipeline {
            ccn,
            cnn,
            ccn_spec,
            grid,
            traces: None,
        })
    }

    fn heads(&self, frames: &[&PolarFrame]) -> Result<Vec<(f64, f64)>> {
        let out = self.ccn.predict(&ccn_batch(frames, &self.ccn_spec))?;
        Ok(out.data.chunks(2).map(|h| (h[0].as_f64(), h[1].as_f64())).collect())
    }

    fn image(&self, polar: &PolarFrame, head: (f64, f64)) -> FrameTrace {
        let params = CompensationParams::from_head(head.0, head.1);
        let raster = soft_rasterize_polar(&compensate(polar, &params), &self.grid);
        let norm = MaxNormalized::forward(&raster.image.data);
        FrameTrace {
            head,
            raster,
            norm,
            radii: polar.samples.iter().map(|p| p.r).collect(),
        }
    }

    fn stack(&self, traces: &[FrameTrace]) -> Tensor<T> {
        let mut data = Vec::with_capacity(traces.len() * self.grid.cells());
        for t in traces {
            data.extend(t.norm.data.iter().map(|&v| T::of_f64(v)));
        }
        Tensor {
            shape: vec![traces.len(), 1, self.grid.height, self.grid.width],
            data,
            grad: None,
        }
    }

    /// Forward pass recording what [`CcnPipeline::backward_cross_entropy`]
    /// needs.
    pub fn forward(&mut self, frames: &[&PolarFrame], mode: Mode) -> Result<Tensor<T>> {
        if frames.is_empty() {
            return Err(AmcError::InvalidArgument("empty batch".into()));
        }
        let x = ccn_batch(frames, &self.ccn_spec);
        let head = self.ccn.forward(&x, mode)?;
        let traces: Vec<FrameTrace> = frames
            .iter()
            .zip(head.data.chunks(2))
            .map(|(f, h)| self.image(f, (h[0].as_f64(), h[1].as_f64())))
            .collect();
        let probs = self.cnn.forward(&self.stack(&traces), mode)?;
        self.traces = Some(traces);
        Ok(probs)
    }

    /// Inference: class probabilities and the compensation applied to each
    /// frame.
    pub fn predict(&self, frames: &[&PolarFrame]) -> Result<(Tensor<T>, Vec<CompensationParams>)> {
        if frames.is_empty() {
            return Err(AmcError::InvalidArgument("empty batch".into()));
        }
        let heads = self.heads(frames)?;
        let traces: Vec<FrameTrace> = frames.iter().zip(&heads).map(|(f, &h)| self.image(f, h)).collect();
        let probs = self.cnn.predict(&self.stack(&traces))?;
        let params = heads.iter().map(|&(u, v)| CompensationParams::from_head(u, v)).collect();
        Ok((probs, params))
    }

    /// Accumulates gradients of `scale ×` mean cross-entropy into both
    /// networks. With `update_ccn` unset the compensator's backward pass is
    /// skipped.
    pub fn backward_cross_entropy(&mut self, labels: &Tensor<T>, scale: f64, update_ccn: bool) -> Result<()> {
        let traces = self
            .traces
            .take()
            .ok_or_else(|| AmcError::State("pipeline backward without a recorded forward pass".into()))?;
        let grad_img = self
            .cnn
            .backward_cross_entropy(labels, scale, update_ccn)?;
        if !update_ccn {
            return Ok(());
        }
        let grad_img = grad_img.expect("input gradient requested");
        let cells = self.grid.cells();
        let mut grad_head = Vec::with_capacity(traces.len() * 2);
        for (i, t) in traces.iter().enumerate() {
            let g: Vec<f64> = grad_img.data[i * cells..(i + 1) * cells].iter().map(|v| v.as_f64()).collect();
            let g_raster = t.norm.backward(&g);
            let g_samples = t.raster.backward(&g_raster);
            let (mut g_dr, mut g_dt) = (0.0, 0.0);
            for (&(gr, gt), &r) in g_samples.iter().zip(&t.radii) {
                g_dr += gr * r;
                g_dt += gt;
            }
            let (gu, gv) = head_backward(t.head.0, t.head.1, g_dr, g_dt);
            grad_head.push(T::of_f64(gu));
            grad_head.push(T::of_f64(gv));
        }
        let grad = Tensor {
            shape: vec![traces.len(), 2],
            data: grad_head,
            grad: None,
        };
        self.ccn.backward(&grad, false)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.ccn.zero_grad();
        self.cnn.zero_grad();
    }
}

/// Faded frames with labels and the channel that produced each one.
#[derive(Debug, Clone, Default)]
pub struct FrameSet {
    pub frames: Vec<PolarFrame>,
    pub labels: Vec<usize>,
    pub channels: Vec<ChannelParams>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, frame: PolarFrame, label: usize, channel: ChannelParams) {
        self.frames.push(frame);
        self.labels.push(label);
        self.channels.push(channel);
    }

    pub fn subset(&self, indices: &[usize]) -> FrameSet {
        let mut out = FrameSet::default();
        for &i in indices {
            out.push(self.frames[i].clone(), self.labels[i], self.channels[i]);
        }
        out
    }

    fn refs(&self, indices: &[usize]) -> Vec<&PolarFrame> {
        indices.iter().map(|&i| &self.frames[i]).collect()
    }
}

/// Distance between the learned compensation and the true inverse channel.
/// The phase error is folded modulo the constellation's rotational symmetry.
pub fn compensation_errors(params: &CompensationParams, channel: &ChannelParams, scheme: ModulationScheme) -> (f64, f64) {
    let sym = scheme.rotational_symmetry();
    let e = wrap_angle(params.delta_theta + channel.phase_offset).rem_euclid(sym);
    (e.min(sym - e), (params.delta_r * channel.amplitude - 1.0).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensationDiagnostics {
    /// Mean folded |Δθ − (−θ0)|.
    pub phase_error: f64,
    /// Mean |Δr·a − 1|.
    pub amplitude_error: f64,
    /// Mean |Δr − 1|.
    pub delta_r_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    pub train: TrainConfig,
    /// Leading epochs in which only the compensator is updated.
    pub ccn_only_epochs: usize,
    /// Keep the compensator at its identity initialization.
    pub freeze_ccn: bool,
    /// Compensator learning rate relative to `train.lr`.
    pub ccn_lr_scale: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            train: TrainConfig::default(),
            ccn_only_epochs: 0,
            freeze_ccn: false,
            ccn_lr_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointReport {
    pub report: TrainReport,
    /// One entry per epoch, measured on the validation set (the training set
    /// when there is none).
    pub diagnostics: Vec<CompensationDiagnostics>,
}

impl JointReport {
    /// `epoch,loss,train_acc,val_acc,seconds,phase_err,amp_err,delta_r_dev`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,val_acc,seconds,phase_err,amp_err,delta_r_dev\n");
        for (e, d) in self.report.epochs.iter().zip(&self.diagnostics) {
            let _ = writeln!(
                out,
                "{},{:.9},{:.6},{:.6},{:.3},{:.6},{:.6},{:.6}",
                e.epoch, e.loss, e.train_acc, e.val_acc, e.seconds, d.phase_error, d.amplitude_error, d.delta_r_deviation
            );
        }
        out
    }

    /// Like [`JointReport::to_csv`] without the wall-clock column.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,val_acc,phase_err,amp_err,delta_r_dev\n");
        for (e, d) in self.report.epochs.iter().zip(&self.diagnostics) {
            let _ = writeln!(
                out,
                "{},{:.9},{:.6},{:.6},{:.6},{:.6},{:.6}",
                e.epoch, e.loss, e.train_acc, e.val_acc, d.phase_error, d.amplitude_error, d.delta_r_deviation
            );
        }
        out
    }
}

/// Predictions and applied compensation for every frame.
pub fn predict_frames<T: Real>(pipe: &CcnPipeline<T>, set: &FrameSet) -> Result<(Vec<usize>, Vec<CompensationParams>)> {
    let rows = par_batches(set.len(), 128, |chunk| {
        let (probs, p) = pipe.predict(&set.refs(chunk))?;
        Ok(argmax_rows(&probs).into_iter().zip(p).collect())
    })?;
    Ok(rows.into_iter().unzip())
}

pub fn evaluate_frames<T: Real>(pipe: &CcnPipeline<T>, set: &FrameSet) -> Result<Confusion> {
    let (preds, _) = predict_frames(pipe, set)?;
    let mut cm = Confusion::new(ModulationScheme::COUNT);
    for (&t, &p) in set.labels.iter().zip(&preds) {
        cm.add(t, p);
    }
    Ok(cm)
}

fn diagnostics<T: Real>(pipe: &CcnPipeline<T>, set: &FrameSet) -> Result<(Confusion, CompensationDiagnostics)> {
    let (preds, params) = predict_frames(pipe, set)?;
    let mut cm = Confusion::new(ModulationScheme::COUNT);
    let (mut pe, mut ae, mut dr) = (0.0, 0.0, 0.0);
    for i in 0..set.len() {
        cm.add(set.labels[i], preds[i]);
        let (p, a) = compensation_errors(&params[i], &set.channels[i], set.frames[i].scheme);
        pe += p;
        ae += a;
        dr += (params[i].delta_r - 1.0).abs();
    }
    let n = set.len().max(1) as f64;
    Ok((
        cm,
        CompensationDiagnostics {
            phase_error: pe / n,
            amplitude_error: ae / n,
            delta_r_deviation: dr / n,
        },
    ))
}

/// Trains compensator and classifier together on one cross-entropy loss.
/// The channel ground truth only feeds the diagnostics. Shuffling and the
/// best-epoch restore follow [`crate::neuralnet::train`].
pub fn train_joint<T: Real>(
    pipe: &mut CcnPipeline<T>,
    train_set: &FrameSet,
    val: Option<&FrameSet>,
    config: &JointConfig,
) -> Result<JointReport> {
    let tc = &config.train;
    tc.validate()?;
    if !(config.ccn_lr_scale > 0.0 && config.ccn_lr_scale.is_finite()) {
        return Err(AmcError::InvalidArgument(format!("ccn_lr_scale must be > 0, got {}", config.ccn_lr_scale)));
    }
    if train_set.is_empty() {
        return Err(AmcError::InvalidArgument("training set is empty".into()));
    }
    let classes = pipe.cnn.output_len();
    let mut opt_ccn = Optimizer::<T>::new(tc.optimizer, tc.lr * config.ccn_lr_scale);
    let mut opt_cnn = Optimizer::<T>::new(tc.optimizer, tc.lr);
    pipe.cnn.reseed_dropout(tc.seed);
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(tc.epochs);
    let mut diags = Vec::with_capacity(tc.epochs);
    // (score, epoch, ccn weights, cnn weights)
    type Best<T> = (f64, usize, Vec<Vec<T>>, Vec<Vec<T>>);
    let mut best: Option<Best<T>> = None;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut derive_rng(tc.seed, &[3, epoch as u64]));
        let update_cnn = epoch > config.ccn_only_epochs;
        let update_ccn = !config.freeze_ccn;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let y = one_hot::<T>(&labels, classes)?;
            let probs = pipe.forward(&train_set.refs(chunk), Mode::Train)?;
            let loss = cross_entropy(&probs, &y)?;
            if !loss.is_finite() {
                return Err(AmcError::Numeric(format!("loss became {loss} in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += argmax_rows(&probs).iter().zip(&labels).filter(|(p, l)| p == l).count();
            pipe.zero_grad();
            pipe.backward_cross_entropy(&y, 1.0, update_ccn)?;
            if update_ccn {
                opt_ccn.step(pipe.ccn.params_mut());
            }
            if update_cnn {
                opt_cnn.step(pipe.cnn.params_mut());
            }
        }
        let train_acc = correct as f64 / train_set.len() as f64;
        let (val_acc, diag) = match val {
            Some(v) if !v.is_empty() => {
                let (cm, d) = diagnostics(pipe, v)?;
                (cm.accuracy(), d)
            }
            _ => (f64::NAN, diagnostics(pipe, train_set)?.1),
        };
        let score = if val_acc.is_nan() { train_acc } else { val_acc };
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, pipe.ccn.snapshot(), pipe.cnn.snapshot()));
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            train_acc,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "joint epoch {epoch}: loss {:.4} train {:.3} val {:.3} phase {:.3} amp {:.3} ({:.1}s)",
            stats.loss,
            stats.train_acc,
            stats.val_acc,
            diag.phase_error,
            diag.amplitude_error,
            stats.seconds
        );
        epochs.push(stats);
        diags.push(diag);
    }

    let (best_val_acc, best_epoch) = match best {
        Some((score, epoch, ccn, cnn)) => {
            pipe.ccn.restore(&ccn);
            pipe.cnn.restore(&cnn);
            (score, epoch)
        }
        None => (f64::NAN, 0),
    };
    Ok(JointReport {
        report: TrainReport {
            epochs,
            best_epoch,
            best_val_acc,
            threshold: tc.threshold,
        },
        diagnostics: diags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::to_polar;
    use crate::modem::{apply_channel, generate_frame, Snr};
    use crate::neuralnet::build_amc_cnn;
    use crate::seed::rng_from;
    use approx::assert_abs_diff_eq;

    fn polar_frame(seed: u64, channel: &ChannelParams) -> (PolarFrame, PolarFrame) {
        let mut rng = rng_from(seed);
        let tx = generate_frame(ModulationScheme::Qam16, 200, &mut rng).unwrap();
        let rx = apply_channel(&tx, channel, &mut rng).unwrap();
        (to_polar(&tx), to_polar(&rx))
    }

    #[test]
    fn zero_head_is_identity() {
        let net = build_ccn::<f64>(&CcnSpec::default(), 3).unwrap();
        let (_, rx) = polar_frame(1, &ChannelParams::awgn(Snr::Db(5.0)));
        assert_eq!(ccn_forward(&net, &rx, &CcnSpec::default()).unwrap(), CompensationParams::IDENTITY);
    }

    #[test]
    fn head_ranges() {
        for &(u, v) in &[(-30.0, -50.0), (0.0, 0.0), (5.0, 1e3), (-1.0, 0.3)] {
            let p = CompensationParams::from_head(u, v);
            assert!(p.delta_r > 0.0);
            assert!(p.delta_theta.abs() <= PI);
        }
    }

    #[test]
    fn compensate_identity_and_wrap() {
        let (_, rx) = polar_frame(2, &ChannelParams::awgn(Snr::Db(3.0)));
        assert_eq!(compensate(&rx, &CompensationParams::IDENTITY), rx);
        let p = PolarFrame {
            samples: vec![PolarSample { r: 1.0, theta: 3.0 * PI / 4.0 }],
            scheme: ModulationScheme::Qpsk,
        };
        let c = compensate(&p, &CompensationParams::new(1.0, PI / 2.0).unwrap());
        assert_abs_diff_eq!(c.samples[0].theta, -3.0 * PI / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn compensate_inverts_channel() {
        let ch = ChannelParams {
            amplitude: 2.0,
            freq_offset: 0.0,
            phase_offset: PI / 4.0,
            snr: Snr::Noiseless,
        };
        let (tx, rx) = polar_frame(3, &ch);
        let back = compensate(&rx, &CompensationParams::new(0.5, -PI / 4.0).unwrap());
        for (a, b) in tx.samples.iter().zip(&back.samples) {
            assert!((a.r - b.r).abs() < 1e-12);
            let d = wrap_angle(a.theta - b.theta);
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn half_turn_twice_is_periodic() {
        let (_, rx) = polar_frame(4, &ChannelParams::awgn(Snr::Db(0.0)));
        let p = CompensationParams::new(1.0, PI).unwrap();
        let twice = compensate(&compensate(&rx, &p), &p);
        for (a, b) in rx.samples.iter().zip(&twice.samples) {
            assert!(wrap_angle(a.theta - b.theta).abs() < 1e-12);
            assert!((-PI..=PI).contains(&b.theta));
        }
    }

    #[test]
    fn ccn_input_mean_is_one() {
        let (_, rx) = polar_frame(5, &ChannelParams::awgn(Snr::Db(10.0)));
        let x = ccn_input(&rx, &CcnSpec::default());
        assert_eq!(x.len(), 256);
        assert_abs_diff_eq!(x.iter().sum::<f64>() / 256.0, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn identity_pipeline_matches_plain_cnn() {
        let grid = GridSpec::polar_default();
        let cnn = build_amc_cnn::<f64>(36, 36, 7).unwrap();
        let pipe = CcnPipeline::new(build_ccn(&CcnSpec::default(), 8).unwrap(), cnn.clone(), CcnSpec::default(), grid).unwrap();
        let (_, rx) = polar_frame(6, &ChannelParams::awgn(Snr::Db(8.0)));
        let (probs, params) = pipe.predict(&[&rx]).unwrap();
        assert_eq!(params[0], CompensationParams::IDENTITY);
        let img = MaxNormalized::forward(&soft_rasterize_polar(&rx, &grid).image.data).data;
        let direct = cnn.predict(&Tensor::new(vec![1, 1, 36, 36], img).unwrap()).unwrap();
        assert_eq!(probs.data, direct.data);
        assert_abs_diff_eq!(probs.data.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn mismatched_classifier_rejected() {
        let cnn = build_amc_cnn::<f64>(36, 36, 1).unwrap();
        let r = CcnPipeline::new(build_ccn(&CcnSpec::default(), 1).unwrap(), cnn, CcnSpec::default(), GridSpec::polar(3.0, 20));
        assert!(matches!(r, Err(AmcError::Shape(_))));
    }

    #[test]
    fn phase_error_folds_by_symmetry() {
        let ch = ChannelParams {
            amplitude: 2.0,
            freq_offset: 0.0,
            phase_offset: 0.3,
            snr: Snr::Noiseless,
        };
        let p = CompensationParams::new(0.5, -0.3 + PI / 2.0).unwrap();
        let (pe, ae) = compensation_errors(&p, &ch, ModulationScheme::Qpsk);
        assert!(pe < 1e-12 && ae < 1e-12);
        let (pe, _) = compensation_errors(&p, &ch, ModulationScheme::Psk8);
        assert!(pe < 1e-12);
        let q = CompensationParams::new(0.5, -0.3 + PI / 4.0).unwrap();
        assert_abs_diff_eq!(compensation_errors(&q, &ch, ModulationScheme::Qam16).0, PI / 4.0, epsilon = 1e-12);
    }
}

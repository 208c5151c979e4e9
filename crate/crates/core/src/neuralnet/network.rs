use rand_chacha::ChaCha8Rng;

use super::layers::{Cache, Layer, LayerSpec};
use super::tensor::{Real, Tensor};
use crate::error::{AmcError, Result};
use crate::seed::{derive_rng, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Role of a network; stored in checkpoints so a compensator cannot be loaded
/// where a classifier is expected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Classifier,
    Compensator,
}

impl NetKind {
    pub fn tag(self) -> u8 {
        match self {
            NetKind::Classifier => 1,
            NetKind::Compensator => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(NetKind::Classifier),
            2 => Some(NetKind::Compensator),
            _ => None,
        }
    }
}

/// Sequential network of [`LayerSpec`]s with reverse-mode gradients.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub kind: NetKind,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer<T>>,
    pub seed: u64,
    dropout_rng: ChaCha8Rng,
    recorded_batch: Option<usize>,
}

impl<T: Real> Network<T> {
    /// Builds the network, checking every layer against its input shape.
    /// Layer `i` is initialized from the stream `derive(seed, [1, i])`.
    pub fn new(kind: NetKind, input_shape: Vec<usize>, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(AmcError::Shape(format!("invalid input shape {input_shape:?}")));
        }
        let mut shape = input_shape.clone();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let mut rng = derive_rng(seed, &[1, i as u64]);
            let layer = Layer::new(*spec, &shape, &mut rng)
                .map_err(|e| AmcError::Shape(format!("layer {i}: {e}")))?;
            shape = layer.out_shape.clone();
            layers.push(layer);
        }
        Ok(Network {
            kind,
            input_shape,
            layers,
            seed,
            dropout_rng: derive_rng(seed, &[2]),
            recorded_batch: None,
        })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers
            .last()
            .map(|l| l.out_shape.clone())
            .unwrap_or_else(|| self.input_shape.clone())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(|p| p.len()).sum()
    }

    /// Restarts the dropout mask stream, e.g. at the start of a training run.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = derive_rng(derive_seed(self.seed, &[2]), &[seed]);
    }

    /// Zeroes every weight and bias of the last dense layer.
    pub fn zero_output_layer(&mut self) {
        if let Some(layer) = self.layers.iter_mut().rev().find(|l| matches!(l.spec, LayerSpec::Dense { .. })) {
            for p in &mut layer.params {
                p.data.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        if x.shape.len() != self.input_shape.len() + 1 || x.shape[1..] != self.input_shape[..] {
            return Err(AmcError::Shape(format!(
                "network expects [B, {:?}], got {:?}",
                self.input_shape, x.shape
            )));
        }
        Ok(x.shape[0])
    }

    fn output_tensor(&self, batch: usize, data: Vec<T>) -> Tensor<T> {
        let mut shape = vec![batch];
        shape.extend(self.output_shape());
        Tensor { shape, data, grad: None }
    }

    /// Forward pass recording everything needed by [`Network::backward`].
    /// Dropout is active only in [`Mode::Train`].
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let batch = self.check_input(x)?;
        let mut act = x.data.clone();
        for layer in &mut self.layers {
            let rng = (mode == Mode::Train).then_some(&mut self.dropout_rng);
            let (out, cache) = layer.forward(&act, batch, rng);
            layer.cache = Some(cache);
            act = out;
        }
        self.recorded_batch = Some(batch);
        Ok(self.output_tensor(batch, act))
    }

    /// Inference-mode forward pass; records nothing, so it works on a shared
    /// reference.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.check_input(x)?;
        let mut act = x.data.clone();
        for layer in &self.layers {
            act = layer.forward(&act, batch, None).0;
        }
        Ok(self.output_tensor(batch, act))
    }

    /// Propagates `grad_out = ∂L/∂output` back through the recorded forward
    /// pass, accumulating into every parameter's gradient slot. Returns
    /// ∂L/∂input when `need_input_grad` is set.
    pub fn backward(&mut self, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let batch = self.take_recorded()?;
        if grad_out.data.len() != batch * self.output_len() {
            return Err(AmcError::Shape(format!(
                "gradient has {} values, expected {}",
                grad_out.data.len(),
                batch * self.output_len()
            )));
        }
        let n = self.layers.len();
        self.backward_from(n, grad_out.data.clone(), batch, need_input_grad)
    }

    /// Backward pass for softmax output + categorical cross-entropy against
    /// one-hot `labels`, using the fused gradient `(p − m)/B` at the logits.
    /// `scale` multiplies the loss (and so every gradient).
    pub fn backward_cross_entropy(&mut self, labels: &Tensor<T>, scale: f64, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let n = self.layers.len();
        if n == 0 || self.layers[n - 1].spec != LayerSpec::Softmax {
            return Err(AmcError::State("cross-entropy backward needs a softmax output layer".into()));
        }
        let batch = self.take_recorded()?;
        validate_one_hot(labels)?;
        if labels.shape != [batch, self.output_len()] {
            return Err(AmcError::Shape(format!("labels {:?} do not match batch output", labels.shape)));
        }
        let probs = match self.layers[n - 1].cache.take() {
            Some(Cache::Output(y)) => y,
            _ => return Err(AmcError::State("softmax output not recorded".into())),
        };
        let k = T::of_f64(scale / batch as f64);
        let g: Vec<T> = probs.iter().zip(&labels.data).map(|(&p, &m)| (p - m) * k).collect();
        self.backward_from(n - 1, g, batch, need_input_grad)
    }

    fn take_recorded(&mut self) -> Result<usize> {
        self.recorded_batch
            .take()
            .ok_or_else(|| AmcError::State("backward called without a recorded forward pass".into()))
    }

    fn backward_from(&mut self, end: usize, mut grad: Vec<T>, batch: usize, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        for i in (0..end).rev() {
            let layer = &mut self.layers[i];
            let cache = layer
                .cache
                .take()
                .ok_or_else(|| AmcError::State(format!("layer {i} has no recorded forward pass")))?;
            let want = need_input_grad || i > 0;
            match layer.backward(cache, &grad, batch, want) {
                Some(g) => grad = g,
                None => {
                    for l in &mut self.layers[..i] {
                        l.cache = None;
                    }
                    return Ok(None);
                }
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let mut shape = vec![batch];
        shape.extend(self.input_shape.iter().copied());
        Ok(Some(Tensor { shape, data: grad, grad: None }))
    }

    pub fn zero_grad(&mut self) {
        for p in self.layers.iter_mut().flat_map(|l| &mut l.params) {
            p.zero_grad();
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| &l.params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| &mut l.params)
    }

    /// Copy of all parameter values, in layer order.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.params().map(|p| p.data.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<T>]) {
        for (p, s) in self.params_mut().zip(snapshot) {
            p.data.copy_from_slice(s);
        }
    }

    /// Converts the parameters to another scalar type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            kind: self.kind,
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    in_shape: l.in_shape.clone(),
                    out_shape: l.out_shape.clone(),
                    params: l
                        .params
                        .iter()
                        .map(|p| {
                            Tensor {
                                shape: p.shape.clone(),
                                data: p.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                                grad: None,
                            }
                            .with_grad()
                        })
                        .collect(),
                    cache: None,
                })
                .collect(),
            seed: self.seed,
            dropout_rng: self.dropout_rng.clone(),
            recorded_batch: None,
        }
    }
}

fn validate_one_hot<T: Real>(labels: &Tensor<T>) -> Result<()> {
    if labels.shape.len() != 2 {
        return Err(AmcError::InvalidArgument(format!("labels must be B×K, got {:?}", labels.shape)));
    }
    for row in labels.data.chunks(labels.shape[1]) {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(AmcError::InvalidArgument("labels are not one-hot".into()));
        }
    }
    Ok(())
}

/// Mean categorical cross-entropy `−Σ mᵢ log max(m̂ᵢ, 1e−12)` over the batch.
pub fn cross_entropy<T: Real>(pred: &Tensor<T>, labels: &Tensor<T>) -> Result<f64> {
    validate_one_hot(labels)?;
    if pred.shape != labels.shape {
        return Err(AmcError::Shape(format!("predictions {:?} vs labels {:?}", pred.shape, labels.shape)));
    }
    let b = pred.shape[0];
    let total: f64 = pred
        .data
        .iter()
        .zip(&labels.data)
        .filter(|(_, &m)| m == T::one())
        .map(|(&p, _)| -(p.as_f64().max(1e-12)).ln())
        .sum();
    Ok(total / b as f64)
}

/// Index of the largest entry in each row.
pub fn argmax_rows<T: Real>(probs: &Tensor<T>) -> Vec<usize> {
    let k = probs.row_len();
    probs
        .data
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

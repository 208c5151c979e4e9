//! Layer kernels. All activations are batch-major: a batch of `B` samples of
//! per-sample shape `S` is a flat slice of `B · prod(S)` values.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul, Mat, Real, Tensor};
use crate::error::{AmcError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    Relu,
    /// Non-overlapping max pooling (stride = window), floor semantics.
    MaxPool { size: (usize, usize) },
    /// Fully connected; flattens any input shape.
    Dense { out_dim: usize },
    /// Inverted dropout: kept units are scaled by `1/(1-p)` in training.
    Dropout { p: f64 },
    Softmax,
}

impl LayerSpec {
    pub fn conv3x3(out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel: (3, 3),
            stride: 1,
            padding: 0,
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            LayerSpec::Conv2d { .. } => 1,
            LayerSpec::Relu => 2,
            LayerSpec::MaxPool { .. } => 3,
            LayerSpec::Dense { .. } => 4,
            LayerSpec::Dropout { .. } => 5,
            LayerSpec::Softmax => 6,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Per-sample output shape for the per-sample input shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(AmcError::Shape(format!("{}: {msg}", self.name())));
        match *self {
            LayerSpec::Conv2d { out_channels, kernel, stride, padding } => {
                if input.len() != 3 {
                    return bad(format!("expects C×H×W input, got {input:?}"));
                }
                if out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 || stride == 0 {
                    return bad("channels, kernel and stride must be positive".into());
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < kernel.0 || w < kernel.1 {
                    return bad(format!("kernel {kernel:?} larger than padded input {h}×{w}"));
                }
                Ok(vec![out_channels, (h - kernel.0) / stride + 1, (w - kernel.1) / stride + 1])
            }
            LayerSpec::MaxPool { size } => {
                if input.len() != 3 {
                    return bad(format!("expects C×H×W input, got {input:?}"));
                }
                if size.0 == 0 || size.1 == 0 || input[1] < size.0 || input[2] < size.1 {
                    return bad(format!("window {size:?} does not fit {input:?}"));
                }
                Ok(vec![input[0], input[1] / size.0, input[2] / size.1])
            }
            LayerSpec::Dense { out_dim } => {
                if out_dim == 0 {
                    return bad("output dimension must be positive".into());
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return bad(format!("rate must be in [0, 1), got {p}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(input.to_vec()),
        }
    }
}

/// What the backward pass of a layer needs from its forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache<T> {
    Input(Vec<T>),
    Output(Vec<T>),
    Argmax(Vec<usize>),
    Mask(Vec<T>),
    Identity,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    ic: usize,
    ih: usize,
    iw: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.ic * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one C×H×W sample into a `patch × positions` matrix.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let p = self.positions();
        for c in 0..self.ic {
            let plane = &x[c * self.ih * self.iw..(c + 1) * self.ih * self.iw];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let dst = &mut cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        if iy < 0 || iy >= self.ih as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.iw..(iy as usize + 1) * self.iw];
                        if self.stride == 1 && self.pad == 0 {
                            dst.copy_from_slice(&src[j..j + self.ow]);
                            continue;
                        }
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.iw as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters-and-adds a column matrix into `dx`.
    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.positions();
        for c in 0..self.ic {
            let plane = &mut dx[c * self.ih * self.iw..(c + 1) * self.ih * self.iw];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * p;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.ih as isize {
                            continue;
                        }
                        let src = &cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        let dst = &mut plane[iy as usize * self.iw..(iy as usize + 1) * self.iw];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.iw as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// A layer instance: spec, resolved shapes, parameters and forward cache.
#[derive(Debug, Clone)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// `[weight, bias]` for conv and dense layers, empty otherwise.
    pub params: Vec<Tensor<T>>,
    pub(crate) cache: Option<Cache<T>>,
}

impl<T: Real> Layer<T> {
    /// Builds the layer with He-uniform weights (bound `√(6/fan_in)`) and
    /// zero biases.
    pub fn new(spec: LayerSpec, in_shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let out_shape = spec.output_shape(in_shape)?;
        let in_len: usize = in_shape.iter().product();
        let params = match spec {
            LayerSpec::Conv2d { out_channels, kernel, .. } => {
                let fan_in = in_shape[0] * kernel.0 * kernel.1;
                vec![
                    he_uniform(vec![out_channels, in_shape[0], kernel.0, kernel.1], fan_in, rng),
                    Tensor::zeros(vec![out_channels]).with_grad(),
                ]
            }
            LayerSpec::Dense { out_dim } => vec![
                he_uniform(vec![out_dim, in_len], in_len, rng),
                Tensor::zeros(vec![out_dim]).with_grad(),
            ],
            _ => Vec::new(),
        };
        Ok(Layer {
            spec,
            in_shape: in_shape.to_vec(),
            out_shape,
            params,
            cache: None,
        })
    }

    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    fn conv_geom(&self) -> ConvGeom {
        match self.spec {
            LayerSpec::Conv2d { out_channels, kernel, stride, padding } => ConvGeom {
                ic: self.in_shape[0],
                ih: self.in_shape[1],
                iw: self.in_shape[2],
                oc: out_channels,
                kh: kernel.0,
                kw: kernel.1,
                stride,
                pad: padding,
                oh: self.out_shape[1],
                ow: self.out_shape[2],
            },
            _ => unreachable!("not a conv layer"),
        }
    }

    /// Forward pass over a batch. Dropout draws its mask from `rng` when one
    /// is supplied (training) and is the identity otherwise.
    pub(crate) fn forward(&self, x: &[T], batch: usize, rng: Option<&mut ChaCha8Rng>) -> (Vec<T>, Cache<T>) {
        let in_len = self.in_len();
        let out_len = self.out_len();
        debug_assert_eq!(x.len(), batch * in_len);
        match self.spec {
            LayerSpec::Conv2d { .. } => {
                let g = self.conv_geom();
                let (w, b) = (&self.params[0].data, &self.params[1].data);
                let p = g.positions();
                let mut out = vec![T::zero(); batch * out_len];
                let mut cols = vec![T::zero(); g.patch() * p];
                for s in 0..batch {
                    g.im2col(&x[s * in_len..(s + 1) * in_len], &mut cols);
                    let o = &mut out[s * out_len..(s + 1) * out_len];
                    for (c, row) in o.chunks_mut(p).enumerate() {
                        row.iter_mut().for_each(|v| *v = b[c]);
                    }
                    matmul(Mat::new(w, g.oc, g.patch()), Mat::new(&cols, g.patch(), p), o, true);
                }
                (out, Cache::Input(x.to_vec()))
            }
            LayerSpec::Dense { out_dim } => {
                let (w, b) = (&self.params[0].data, &self.params[1].data);
                let mut out = Vec::with_capacity(batch * out_dim);
                for _ in 0..batch {
                    out.extend_from_slice(b);
                }
                matmul(Mat::new(x, batch, in_len), Mat::t(w, in_len, out_dim), &mut out, true);
                (out, Cache::Input(x.to_vec()))
            }
            LayerSpec::Relu => {
                let out: Vec<T> = x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
                (out.clone(), Cache::Output(out))
            }
            LayerSpec::MaxPool { size: (ph, pw) } => {
                let (c, ih, iw) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (self.out_shape[1], self.out_shape[2]);
                let mut out = Vec::with_capacity(batch * out_len);
                let mut argmax = Vec::with_capacity(batch * out_len);
                for s in 0..batch {
                    for ch in 0..c {
                        let base = s * in_len + ch * ih * iw;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = base + oy * ph * iw + ox * pw;
                                for dy in 0..ph {
                                    for dx in 0..pw {
                                        let idx = base + (oy * ph + dy) * iw + ox * pw + dx;
                                        if x[idx] > x[best] {
                                            best = idx;
                                        }
                                    }
                                }
                                out.push(x[best]);
                                argmax.push(best);
                            }
                        }
                    }
                }
                (out, Cache::Argmax(argmax))
            }
            LayerSpec::Dropout { p } => match rng {
                Some(rng) if p > 0.0 => {
                    let keep = T::of_f64(1.0 / (1.0 - p));
                    let mask: Vec<T> = (0..x.len())
                        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
                        .collect();
                    let out = x.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                    (out, Cache::Mask(mask))
                }
                _ => (x.to_vec(), Cache::Identity),
            },
            LayerSpec::Softmax => {
                let mut out = x.to_vec();
                for row in out.chunks_mut(in_len) {
                    softmax_in_place(row);
                }
                (out.clone(), Cache::Output(out))
            }
        }
    }

    /// Backward pass: accumulates parameter gradients and, when
    /// `need_input_grad`, returns ∂L/∂input.
    pub(crate) fn backward(&mut self, cache: Cache<T>, grad_out: &[T], batch: usize, need_input_grad: bool) -> Option<Vec<T>> {
        let in_len = self.in_len();
        let out_len = self.out_len();
        match (self.spec, cache) {
            (LayerSpec::Conv2d { .. }, Cache::Input(x)) => {
                let g = self.conv_geom();
                let p = g.positions();
                let patch = g.patch();
                let mut cols = vec![T::zero(); patch * p];
                let mut dcols = vec![T::zero(); patch * p];
                let mut dx = if need_input_grad { Some(vec![T::zero(); batch * in_len]) } else { None };
                let (wt, bt) = self.params.split_at_mut(1);
                let w = &wt[0].data;
                let dw = wt[0].grad.get_or_insert_with(|| vec![T::zero(); w.len()]);
                let db = bt[0].grad.get_or_insert_with(|| vec![T::zero(); g.oc]);
                for s in 0..batch {
                    let go = &grad_out[s * out_len..(s + 1) * out_len];
                    for (c, row) in go.chunks(p).enumerate() {
                        db[c] += row.iter().copied().sum::<T>();
                    }
                    g.im2col(&x[s * in_len..(s + 1) * in_len], &mut cols);
                    // dW (oc × patch) += dOut (oc × p) · colsᵀ (p × patch)
                    matmul(Mat::new(go, g.oc, p), Mat::t(&cols, p, patch), dw, true);
                    if let Some(dx) = dx.as_mut() {
                        // dcols (patch × p) = Wᵀ (patch × oc) · dOut (oc × p)
                        matmul(Mat::t(w, patch, g.oc), Mat::new(go, g.oc, p), &mut dcols, false);
                        g.col2im(&dcols, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                dx
            }
            (LayerSpec::Dense { out_dim }, Cache::Input(x)) => {
                let (wt, bt) = self.params.split_at_mut(1);
                let w = &wt[0].data;
                let dw = wt[0].grad.get_or_insert_with(|| vec![T::zero(); w.len()]);
                let db = bt[0].grad.get_or_insert_with(|| vec![T::zero(); out_dim]);
                for row in grad_out.chunks(out_dim) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                // dW (out × in) += dYᵀ (out × B) · X (B × in)
                matmul(Mat::t(grad_out, out_dim, batch), Mat::new(&x, batch, in_len), dw, true);
                need_input_grad.then(|| {
                    let mut dx = vec![T::zero(); batch * in_len];
                    matmul(Mat::new(grad_out, batch, out_dim), Mat::new(w, out_dim, in_len), &mut dx, false);
                    dx
                })
            }
            (LayerSpec::Relu, Cache::Output(y)) => Some(
                grad_out
                    .iter()
                    .zip(&y)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect(),
            ),
            (LayerSpec::MaxPool { .. }, Cache::Argmax(argmax)) => {
                let mut dx = vec![T::zero(); batch * in_len];
                for (&idx, &g) in argmax.iter().zip(grad_out) {
                    dx[idx] += g;
                }
                Some(dx)
            }
            (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => {
                Some(grad_out.iter().zip(&mask).map(|(&g, &m)| g * m).collect())
            }
            (LayerSpec::Dropout { .. }, Cache::Identity) => Some(grad_out.to_vec()),
            (LayerSpec::Softmax, Cache::Output(y)) => {
                let mut dx = vec![T::zero(); grad_out.len()];
                for ((d, g), yr) in dx.chunks_mut(in_len).zip(grad_out.chunks(in_len)).zip(y.chunks(in_len)) {
                    let dot: T = g.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((di, &gi), &yi) in d.iter_mut().zip(g).zip(yr) {
                        *di = yi * (gi - dot);
                    }
                }
                Some(dx)
            }
            (spec, _) => unreachable!("cache does not match layer {}", spec.name()),
        }
    }
}

fn he_uniform<T: Real>(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of_f64(rng.gen_range(-bound..bound))).collect();
    Tensor { shape, data, grad: None }.with_grad()
}

/// Numerically stable softmax (max subtraction).
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "AMCN" | version u32 | net kind u8 | seed u64 | layer count u32
//! input rank u32 | input dims u32…
//! per layer: kind tag u8 | hyperparameters | tensor count u32
//!            per tensor: rank u32 | dims u32… | values f64…
//! ```
//!
//! Hyperparameters: conv2d = out, kh, kw, stride, padding (u32 each);
//! maxpool = h, w (u32); dense = out (u32); dropout = p (f64); relu and
//! softmax carry none.

use std::io::{Read, Write};

use super::layers::LayerSpec;
use super::network::{NetKind, Network};
use super::tensor::Real;
use crate::error::{AmcError, Result};

const MAGIC: &[u8; 4] = b"AMCN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn to_bytes<T: Real>(net: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(net.kind.tag());
    out.extend_from_slice(&net.seed.to_le_bytes());
    put_u32(&mut out, net.layers.len());
    put_u32(&mut out, net.input_shape.len());
    for &d in &net.input_shape {
        put_u32(&mut out, d);
    }
    for layer in &net.layers {
        out.push(layer.spec.tag());
        match layer.spec {
            LayerSpec::Conv2d { out_channels, kernel, stride, padding } => {
                for v in [out_channels, kernel.0, kernel.1, stride, padding] {
                    put_u32(&mut out, v);
                }
            }
            LayerSpec::MaxPool { size } => {
                put_u32(&mut out, size.0);
                put_u32(&mut out, size.1);
            }
            LayerSpec::Dense { out_dim } => put_u32(&mut out, out_dim),
            LayerSpec::Dropout { p } => out.extend_from_slice(&p.to_le_bytes()),
            LayerSpec::Relu | LayerSpec::Softmax => {}
        }
        put_u32(&mut out, layer.params.len());
        for p in &layer.params {
            put_u32(&mut out, p.shape.len());
            for &d in &p.shape {
                put_u32(&mut out, d);
            }
            for v in &p.data {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    out
}

pub fn save<T: Real, W: Write>(net: &Network<T>, mut w: W) -> std::io::Result<()> {
    w.write_all(&to_bytes(net))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| AmcError::Data(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

/// Reads a checkpoint, rebuilding the network and checking that every stored
/// tensor has the shape the architecture implies.
pub fn load<T: Real, R: Read>(r: R) -> Result<Network<T>> {
    let mut rd = Reader { inner: r };
    if &rd.bytes::<4>()? != MAGIC {
        return Err(AmcError::Data("not a network checkpoint (bad magic)".into()));
    }
    let version = rd.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(AmcError::Data(format!("unsupported checkpoint version {version}")));
    }
    let kind_tag = rd.u8()?;
    let kind = NetKind::from_tag(kind_tag).ok_or_else(|| AmcError::Data(format!("unknown network kind {kind_tag}")))?;
    let seed = rd.u64()?;
    let layer_count = rd.u32()?;
    let rank = rd.u32()?;
    let input_shape = (0..rank).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;

    let mut specs = Vec::with_capacity(layer_count);
    let mut tensors: Vec<Vec<(Vec<usize>, Vec<f64>)>> = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let spec = match rd.u8()? {
            1 => {
                let v = (0..5).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
                LayerSpec::Conv2d {
                    out_channels: v[0],
                    kernel: (v[1], v[2]),
                    stride: v[3],
                    padding: v[4],
                }
            }
            2 => LayerSpec::Relu,
            3 => LayerSpec::MaxPool { size: (rd.u32()?, rd.u32()?) },
            4 => LayerSpec::Dense { out_dim: rd.u32()? },
            5 => LayerSpec::Dropout { p: rd.f64()? },
            6 => LayerSpec::Softmax,
            t => return Err(AmcError::Data(format!("unknown layer tag {t}"))),
        };
        specs.push(spec);
        let n = rd.u32()?;
        let mut ts = Vec::with_capacity(n);
        for _ in 0..n {
            let rank = rd.u32()?;
            let shape = (0..rank).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let values = (0..len).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
            ts.push((shape, values));
        }
        tensors.push(ts);
    }

    let mut net = Network::<T>::new(kind, input_shape, &specs, seed)
        .map_err(|e| AmcError::Data(format!("checkpoint architecture invalid: {e}")))?;
    for (i, (layer, stored)) in net.layers.iter_mut().zip(tensors).enumerate() {
        if layer.params.len() != stored.len() {
            return Err(AmcError::Data(format!("layer {i}: expected {} tensors", layer.params.len())));
        }
        for (p, (shape, values)) in layer.params.iter_mut().zip(stored) {
            if p.shape != shape {
                return Err(AmcError::Data(format!("layer {i}: tensor shape {shape:?} != {:?}", p.shape)));
            }
            p.data = values.into_iter().map(T::of_f64).collect();
        }
    }
    Ok(net)
}

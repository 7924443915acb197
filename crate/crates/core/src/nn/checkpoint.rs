//! Binary model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! b"SEDNCKPT"  u32 version  u64 seed  u32 epoch  u32 c  u32 h  u32 w
//! u32 n_layers, then per layer: u8 kind, u8 n_dims, n_dims x u32
//! u32 n_bands, n_bands x f32 mean, n_bands x f32 std
//! parameters and running statistics as f32, in layer order
//! ```

use std::fs;
use std::path::Path;

use super::{BatchNorm2d, Conv2d, Dense, Layer, LayerKind, MaxPool2d, Network, NnError, Relu, Softmax};

const MAGIC: &[u8; 8] = b"SEDNCKPT";
const VERSION: u32 = 1;

/// A trained network plus the per-band input standardization it expects.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub epoch: u32,
    pub band_mean: Vec<f32>,
    pub band_std: Vec<f32>,
}

fn dims(layer: &Layer<f32>) -> Vec<usize> {
    match layer {
        Layer::Conv2d(c) => vec![c.in_channels, c.out_channels, c.kernel.0, c.kernel.1, c.padding.0, c.padding.1],
        Layer::BatchNorm(b) => vec![b.channels],
        Layer::MaxPool(m) => vec![m.pool.0, m.pool.1],
        Layer::Dense(d) => vec![d.in_features, d.out_features],
        Layer::Relu(_) | Layer::Softmax(_) => vec![],
    }
}

fn tensors(layer: &Layer<f32>) -> Vec<&[f32]> {
    match layer {
        Layer::Conv2d(c) => vec![&c.weight, &c.bias],
        Layer::BatchNorm(b) => vec![&b.gamma, &b.beta, &b.running_mean, &b.running_var],
        Layer::Dense(d) => vec![&d.weight, &d.bias],
        Layer::Relu(_) | Layer::MaxPool(_) | Layer::Softmax(_) => vec![],
    }
}

fn tensors_mut(layer: &mut Layer<f32>) -> Vec<&mut Vec<f32>> {
    match layer {
        Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
        Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var],
        Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
        Layer::Relu(_) | Layer::MaxPool(_) | Layer::Softmax(_) => vec![],
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), NnError> {
    let net = &ckpt.network;
    let mut out = Vec::new();
    let u32s = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&net.seed().to_le_bytes());
    out.extend_from_slice(&ckpt.epoch.to_le_bytes());
    for d in net.input_shape() {
        u32s(&mut out, d);
    }
    u32s(&mut out, net.layers.len());
    for layer in &net.layers {
        let d = dims(layer);
        out.push(layer.kind().code());
        out.push(d.len() as u8);
        for v in d {
            u32s(&mut out, v);
        }
    }
    if ckpt.band_mean.len() != ckpt.band_std.len() {
        return Err(NnError::Checkpoint("band mean and std lengths differ".into()));
    }
    u32s(&mut out, ckpt.band_mean.len());
    for v in ckpt.band_mean.iter().chain(&ckpt.band_std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for layer in &net.layers {
        for t in tensors(layer) {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, NnError> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, NnError> {
    let bytes = fs::read(path.as_ref())?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let seed = r.u64()?;
    let epoch = r.u32()? as u32;
    let input = [r.u32()?, r.u32()?, r.u32()?];
    let n_layers = r.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code).ok_or_else(|| NnError::Checkpoint(format!("unknown layer kind {code}")))?;
        let n = r.u8()? as usize;
        let d = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let want = match kind {
            LayerKind::Conv2d => 6,
            LayerKind::BatchNorm => 1,
            LayerKind::MaxPool | LayerKind::Dense => 2,
            LayerKind::Relu | LayerKind::Softmax => 0,
        };
        if d.len() != want {
            return Err(NnError::Checkpoint(format!("{} expects {want} dims, found {}", kind.name(), d.len())));
        }
        layers.push(match kind {
            LayerKind::Conv2d => Layer::Conv2d(Conv2d::new(d[0], d[1], (d[2], d[3]), (d[4], d[5]))),
            LayerKind::BatchNorm => Layer::BatchNorm(BatchNorm2d::new(d[0])),
            LayerKind::Relu => Layer::Relu(Relu::new()),
            LayerKind::MaxPool => Layer::MaxPool(MaxPool2d::new((d[0], d[1]))),
            LayerKind::Dense => Layer::Dense(Dense::new(d[0], d[1])),
            LayerKind::Softmax => Layer::Softmax(Softmax::new()),
        });
    }
    let n_bands = r.u32()?;
    let band_mean = r.f32s(n_bands)?;
    let band_std = r.f32s(n_bands)?;
    for layer in &mut layers {
        for t in tensors_mut(layer) {
            *t = r.f32s(t.len())?;
        }
    }
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let network = Network::from_layers(layers, input, seed)?;
    Ok(Checkpoint {
        network,
        epoch,
        band_mean,
        band_std,
    })
}

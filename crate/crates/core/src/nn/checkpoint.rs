//! `EAGM` model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "EAGM"            4 bytes
//! version           u32   (currently 1)
//! layer count       u32
//! per layer:        in u32, out u32, kind u8, flags u8
//!                   kind: activation tag 0..=5, or 0xFF for a channel merge
//!                   flags: bit 0 = bias present, bit 1 = trained
//! per layer:        out*in f64 weights (row-major), then out f64 bias if present
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{Activation, ChannelMerge, Dense};

pub const MAGIC: &[u8; 4] = b"EAGM";
pub const VERSION: u32 = 1;
const CHANNEL_MERGE_TAG: u8 = 0xFF;
const FLAG_BIAS: u8 = 1;
const FLAG_TRAINED: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense(Activation),
    ChannelMerge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub kind: LayerKind,
    pub trained: bool,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl LayerRecord {
    pub fn from_dense(layer: &Dense, trained: bool) -> Self {
        Self {
            inputs: layer.inputs(),
            outputs: layer.outputs(),
            kind: LayerKind::Dense(layer.activation()),
            trained,
            weights: layer.weights().as_slice().to_vec(),
            bias: layer.bias().map(<[f64]>::to_vec),
        }
    }

    pub fn from_merge(merge: &ChannelMerge) -> Self {
        let k = merge.kernel();
        Self {
            inputs: 2,
            outputs: 1,
            kind: LayerKind::ChannelMerge,
            trained: true,
            weights: k.to_vec(),
            bias: Some(vec![merge.bias()]),
        }
    }

    pub fn to_dense(&self) -> Result<Dense> {
        let LayerKind::Dense(act) = self.kind else {
            return Err(Error::BadCheckpoint("expected a dense layer".into()));
        };
        Dense::new(
            Matrix::from_vec(self.outputs, self.inputs, self.weights.clone())?,
            self.bias.clone(),
            act,
        )
    }

    pub fn to_merge(&self) -> Result<ChannelMerge> {
        match (self.kind, &self.bias) {
            (LayerKind::ChannelMerge, Some(b)) if self.weights.len() == 2 && b.len() == 1 => {
                Ok(ChannelMerge::new([self.weights[0], self.weights[1]], b[0]))
            }
            _ => Err(Error::BadCheckpoint("expected a channel merge".into())),
        }
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, layers: &[LayerRecord]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for l in layers {
        let kind = match l.kind {
            LayerKind::Dense(a) => a.tag(),
            LayerKind::ChannelMerge => CHANNEL_MERGE_TAG,
        };
        let mut flags = 0u8;
        if l.bias.is_some() {
            flags |= FLAG_BIAS;
        }
        if l.trained {
            flags |= FLAG_TRAINED;
        }
        w.write_all(&(l.inputs as u32).to_le_bytes())?;
        w.write_all(&(l.outputs as u32).to_le_bytes())?;
        w.write_all(&[kind, flags])?;
    }
    for l in layers {
        for v in &l.weights {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(b) = &l.bias {
            for v in b {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::BadCheckpoint("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::BadCheckpoint("truncated parameter block".into()))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<LayerRecord>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::BadCheckpoint("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::BadCheckpoint("wrong magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::BadCheckpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut descriptors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let inputs = read_u32(&mut r)? as usize;
        let outputs = read_u32(&mut r)? as usize;
        let mut kf = [0u8; 2];
        r.read_exact(&mut kf)
            .map_err(|_| Error::BadCheckpoint("truncated descriptor".into()))?;
        let kind = if kf[0] == CHANNEL_MERGE_TAG {
            LayerKind::ChannelMerge
        } else {
            LayerKind::Dense(Activation::from_tag(kf[0])?)
        };
        descriptors.push((inputs, outputs, kind, kf[1]));
    }
    let mut layers = Vec::with_capacity(count.min(1024));
    for (inputs, outputs, kind, flags) in descriptors {
        let weights = read_f64s(&mut r, inputs * outputs)?;
        let bias = if flags & FLAG_BIAS != 0 {
            Some(read_f64s(&mut r, outputs)?)
        } else {
            None
        };
        layers.push(LayerRecord {
            inputs,
            outputs,
            kind,
            trained: flags & FLAG_TRAINED != 0,
            weights,
            bias,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::BadCheckpoint("trailing bytes".into()));
    }
    Ok(layers)
}

//! Binary model checkpoints.
//!
//! Layout, all little-endian: `b"SWAE"`, `u32` version, `u32` dim_x, dim_z,
//! K, `u32` hidden-layer count followed by that many `u32` widths, `u8`
//! hidden activation tag, `u8` decoder output tag. Then one block per
//! parameter array (each layer's weights then bias, for the encoder, decoder
//! and prior network in turn, then the pseudo-inputs), each a `u64` element
//! count followed by that many `f64`.

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::model::{ModelConfig, SwaeModel};
use crate::nncore::{Activation, Parameters};

pub const MAGIC: [u8; 4] = *b"SWAE";
pub const VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &SwaeModel) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::with_capacity(64 + 8 * model.num_params());
    out.extend_from_slice(&MAGIC);
    for v in [
        VERSION,
        c.dim_x as u32,
        c.dim_z as u32,
        c.k as u32,
        c.hidden.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &w in &c.hidden {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.push(c.hidden_activation.tag());
    out.push(c.decoder_output.tag());
    model.for_each_slice(&mut |s| {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
        for v in s {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

pub fn model_from_checkpoint(bytes: &[u8]) -> Result<SwaeModel, CheckpointError> {
    let mut r = ByteReader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let dim_x = r.u32()? as usize;
    let dim_z = r.u32()? as usize;
    let k = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    let mut hidden = Vec::with_capacity(n_hidden.min(r.remaining() / 4));
    for _ in 0..n_hidden {
        hidden.push(r.u32()? as usize);
    }
    let tag = |t: u8| Activation::from_tag(t).ok_or(CheckpointError::ActivationTag(t));
    let hidden_activation = tag(r.u8()?)?;
    let decoder_output = tag(r.u8()?)?;
    let config = ModelConfig {
        dim_x,
        dim_z,
        hidden,
        k,
        hidden_activation,
        decoder_output,
    };
    config
        .validate()
        .map_err(|e| CheckpointError::Invalid(e.to_string()))?;

    // Refuse to allocate for parameters the file cannot possibly hold.
    let needed = param_count(&config)
        .ok_or_else(|| CheckpointError::Invalid("parameter count overflows".into()))?;
    if needed > (r.remaining() / 8) as u64 {
        return Err(CheckpointError::Truncated(bytes.len()));
    }

    let mut model =
        SwaeModel::zeros(config).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    let mut failure = None;
    model.for_each_slice_mut(&mut |s| {
        if failure.is_none() {
            if let Err(e) = r.block(s) {
                failure = Some(e);
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &SwaeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SwaeModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(model_from_checkpoint(&bytes)?)
}

fn param_count(c: &ModelConfig) -> Option<u64> {
    let mlp = |widths: &[usize]| -> Option<u64> {
        widths.windows(2).try_fold(0u64, |acc, w| {
            let (i, o) = (w[0] as u64, w[1] as u64);
            acc.checked_add(i.checked_mul(o)?.checked_add(o)?)
        })
    };
    let chain = |first: usize, mid: &mut dyn Iterator<Item = usize>, last: usize| {
        let mut v = vec![first];
        v.extend(mid);
        v.push(last);
        mlp(&v)
    };
    let enc = chain(c.dim_x, &mut c.hidden.iter().copied(), c.dim_z)?;
    let dec = chain(c.dim_z, &mut c.hidden.iter().rev().copied(), c.dim_x)?;
    let pri = chain(c.dim_x, &mut c.hidden.iter().copied(), 2 * c.dim_z)?;
    let u = (c.k as u64).checked_mul(c.dim_x as u64)?;
    enc.checked_add(dec)?.checked_add(pri)?.checked_add(u)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if n > self.remaining() {
            return Err(CheckpointError::Truncated(self.bytes.len()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn block(&mut self, out: &mut [f64]) -> Result<(), CheckpointError> {
        let len = self.u64()?;
        if len != out.len() as u64 {
            return Err(CheckpointError::BlockLength {
                expected: out.len() as u64,
                found: len,
            });
        }
        let raw = self.take(8 * out.len())?;
        for (v, chunk) in out.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(())
    }
}

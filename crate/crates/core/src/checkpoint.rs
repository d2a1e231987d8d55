//! Binary checkpoint format: `SSLB` magic, u32-LE format version, the
//! length-prefixed canonical encoder-config text, then every parameter
//! tensor in declaration order as u32-LE rank, u32-LE dims, f32-LE data.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::nn::{EncoderConfig, NnError, SslModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSLB";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
    #[error("checkpoint format version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub fn write_checkpoint(path: &Path, model: &SslModel<f32>) -> Result<(), CheckpointError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg_text = model.config().canonical_text();
    out.write_all(&(cfg_text.len() as u32).to_le_bytes())?;
    out.write_all(cfg_text.as_bytes())?;
    for tensor in model.param_tensors() {
        let shape = tensor.shape();
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<SslModel<f32>, CheckpointError> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *pos + n > bytes.len() {
            return Err(CheckpointError::Malformed("unexpected end of file".into()));
        }
        let out = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(out)
    };
    let u32_at = |pos: &mut usize| -> Result<u32, CheckpointError> {
        let b = take(pos, 4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };

    if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Malformed("missing SSLB magic".into()));
    }
    let version = u32_at(&mut pos)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let cfg_len = u32_at(&mut pos)? as usize;
    let cfg_text = std::str::from_utf8(take(&mut pos, cfg_len)?)
        .map_err(|_| CheckpointError::Malformed("config blob is not UTF-8".into()))?
        .to_string();
    let cfg = EncoderConfig::from_canonical_text(&cfg_text)?;

    let mut model = SslModel::<f32>::new(&cfg, 0)?;
    {
        let mut tensors = model.param_tensors_mut();
        for (i, tensor) in tensors.iter_mut().enumerate() {
            let rank = u32_at(&mut pos)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u32_at(&mut pos)? as usize);
            }
            if dims != tensor.shape() {
                return Err(CheckpointError::Malformed(format!(
                    "tensor {i}: stored shape {dims:?} does not match config shape {:?}",
                    tensor.shape()
                )));
            }
            for v in tensor.iter_mut() {
                let b = take(&mut pos, 4)?;
                *v = f32::from_le_bytes(b.try_into().unwrap());
            }
        }
    }
    if pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - pos
        )));
    }
    Ok(model)
}

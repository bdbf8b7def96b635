//! Model checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "XMCK" | version u32 | config hash u64 | feature dim u32 | classes u32
//! metadata length u32 | metadata JSON ({"config": .., "extra": ..})
//! block count u32 | per block: name len u16, name, ndim u8, dims u32.., f32 data
//! ```

use std::io::{Read, Write};

use serde_json::Value;

use super::{BackboneConfig, Model, ParameterSet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"XMCK";
pub const VERSION: u32 = 1;

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
    Ok(buf)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
    Ok(buf)
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let bytes = read_bytes(r, n * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes the block section: count, then each named block.
pub fn write_params<W: Write>(w: &mut W, params: &ParameterSet<f32>) -> Result<()> {
    write_u32(w, params.blocks().len() as u32)?;
    for b in params.blocks() {
        let name = b.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[b.shape.len() as u8])?;
        for &d in &b.shape {
            write_u32(w, d as u32)?;
        }
        write_f32s(w, &b.data)?;
    }
    Ok(())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<ParameterSet<f32>> {
    let count = read_u32(r)? as usize;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_array(r)?) as usize;
        let name = String::from_utf8(read_bytes(r, name_len)?)
            .map_err(|_| Error::Format("block name is not UTF-8".into()))?;
        let ndim = read_array::<_, 1>(r)?[0] as usize;
        let shape = (0..ndim)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let data = read_f32s(r, n)?;
        params.push(name, shape, data);
    }
    Ok(params)
}

/// Serializes a model together with caller-supplied metadata.
pub fn save_model<W: Write>(w: &mut W, model: &Model<f32>, extra: &Value) -> Result<()> {
    let cfg = model.config();
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_u64(w, model.config_hash())?;
    write_u32(w, cfg.feature_dim as u32)?;
    write_u32(w, cfg.classes as u32)?;
    let meta = serde_json::to_vec(&serde_json::json!({ "config": cfg, "extra": extra }))
        .map_err(|e| Error::Format(e.to_string()))?;
    write_u32(w, meta.len() as u32)?;
    w.write_all(&meta)?;
    write_params(w, model.params())
}

/// Reads a model written by [`save_model`], verifying header and layout.
pub fn load_model<R: Read>(r: &mut R) -> Result<(Model<f32>, Value)> {
    if &read_array::<_, 4>(r)? != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hash = read_u64(r)?;
    let d = read_u32(r)? as usize;
    let c = read_u32(r)? as usize;
    let meta_len = read_u32(r)? as usize;
    let meta: Value = serde_json::from_slice(&read_bytes(r, meta_len)?)
        .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    let cfg: BackboneConfig = serde_json::from_value(meta["config"].clone())
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    if cfg.hash() != hash {
        return Err(Error::Format("config hash mismatch".into()));
    }
    if cfg.feature_dim != d || cfg.classes != c {
        return Err(Error::Format("header dimensions disagree with config".into()));
    }
    let params = read_params(r)?;
    let mut model = Model::<f32>::zeroed(cfg)?;
    model
        .set_params(params)
        .map_err(|_| Error::Format("parameter blocks do not match the architecture".into()))?;
    Ok((model, meta["extra"].clone()))
}

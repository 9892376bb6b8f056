//! Model checkpoints: configuration, parameters and memory snapshots.
//!
//! Layout, little-endian: magic `HMCK`, `u32` version, `u32` length and
//! JSON text of the [`HmNetConfig`], `u64` parameter count, then per
//! parameter a `u32` name length, the name, `u64` element count and the
//! `f64` values; finally `u64` memory count and one pattern-memory snapshot
//! per level.

use std::path::Path;

use crate::data::cache::{put_f64s, put_u64, Reader};
use crate::error::{Error, Result};
use crate::memory::PatternMemory;
use crate::model::{HmNet, HmNetConfig};

const MAGIC: &[u8; 4] = b"HMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(model: &HmNet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config())?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    put_u64(&mut out, model.params().len() as u64);
    for p in model.params().iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        put_u64(&mut out, p.tensor.len() as u64);
        put_f64s(&mut out, p.tensor.data());
    }
    put_u64(&mut out, model.memories().len() as u64);
    for m in model.memories() {
        m.write_snapshot(&mut out)?;
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<HmNet> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.header(MAGIC, CHECKPOINT_VERSION)?;
    let len = r.u32()? as usize;
    let config: HmNetConfig = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mut model = HmNet::new(config)?;
    let count = r.usize()?;
    if count != model.params().len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} parameters, the model has {}",
            model.params().len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for p in model.params().iter() {
        let name_len = r.u32()? as usize;
        let name = r.take(name_len)?;
        if name != p.name.as_bytes() {
            return Err(Error::Format(format!(
                "checkpoint parameter {:?} where {:?} was expected",
                String::from_utf8_lossy(name),
                p.name
            )));
        }
        let n = r.usize()?;
        if n != p.tensor.len() {
            return Err(Error::Format(format!("{}: {n} values, expected {}", p.name, p.tensor.len())));
        }
        values.push(r.f64s(n)?);
    }
    model.params_mut().restore(&values)?;
    if model.params().iter().any(|p| p.mask_violation() != 0.0) {
        return Err(Error::Format("checkpoint violates a parameter mask".into()));
    }
    let mems = r.usize()?;
    if mems != model.memories().len() {
        return Err(Error::Format(format!(
            "checkpoint has {mems} memories, the model has {} levels",
            model.memories().len()
        )));
    }
    for slot in model.memories_mut() {
        let mut rest = r.remaining();
        let available = rest.len();
        let mem = PatternMemory::read_snapshot(&mut rest).map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                Error::Format("truncated checkpoint".into())
            }
            other => other,
        })?;
        if mem.capacity() != slot.capacity() || mem.dim() != slot.dim() {
            return Err(Error::Format(format!(
                "memory snapshot is {}x{}, the model expects {}x{}",
                mem.capacity(),
                mem.dim(),
                slot.capacity(),
                slot.dim()
            )));
        }
        r.take(available - rest.len())?;
        *slot = mem;
    }
    r.finish()?;
    Ok(model)
}

pub fn save(model: &HmNet, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<HmNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    decode(&bytes)
}

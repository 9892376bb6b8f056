//! Binary cache of a built [`WindowDataset`].
//!
//! Layout, little-endian: magic `HMWC`, `u32` version, `u32` name length and
//! UTF-8 name, `u64` input length, horizon, variables, four `u64` split
//! borders, then `f64` arrays: scaler mean and std (N each), values
//! (rows x N) and time features (rows x 5).

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::timefeat::NUM_TIME_FEATURES;
use super::window::{Scaler, WindowDataset};

const MAGIC: &[u8; 4] = b"HMWC";
pub const CACHE_VERSION: u32 = 1;

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    out.reserve(vs.len() * 8);
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over a byte buffer that reports truncation as a format error.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format(format!("truncated {}", self.what)));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    pub(crate) fn remaining(&self) -> &'a [u8] {
        self.bytes
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format(format!("oversized {}", self.what)))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format(format!("oversized {}", self.what)))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("not a {} (bad magic)", self.what)));
        }
        let found = self.u32()?;
        if found != version {
            return Err(Error::Format(format!(
                "{} version {found} is not supported (expected {version})",
                self.what
            )));
        }
        Ok(())
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes after {}", self.bytes.len(), self.what)))
        }
    }
}

pub fn encode_windows(ds: &WindowDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.name.len() as u32).to_le_bytes());
    out.extend_from_slice(ds.name.as_bytes());
    for v in [ds.input_length, ds.horizon, ds.num_vars] {
        put_u64(&mut out, v as u64);
    }
    for b in ds.borders {
        put_u64(&mut out, b as u64);
    }
    put_f64s(&mut out, &ds.scaler.mean);
    put_f64s(&mut out, &ds.scaler.std);
    put_f64s(&mut out, ds.values());
    put_f64s(&mut out, ds.time_feats());
    out
}

pub fn decode_windows(bytes: &[u8]) -> Result<WindowDataset> {
    let mut r = Reader::new(bytes, "window cache");
    r.header(MAGIC, CACHE_VERSION)?;
    let name_len = r.u32()? as usize;
    let name = String::from_utf8(r.take(name_len)?.to_vec())
        .map_err(|_| Error::Format("window cache name is not UTF-8".into()))?;
    let (t, h, n) = (r.usize()?, r.usize()?, r.usize()?);
    let borders = [r.usize()?, r.usize()?, r.usize()?, r.usize()?];
    if !borders.windows(2).all(|w| w[0] <= w[1]) {
        return Err(Error::Format(format!("window cache borders {borders:?} not ordered")));
    }
    let scaler = Scaler { mean: r.f64s(n)?, std: r.f64s(n)? };
    let rows = borders[3];
    let values = r.f64s(rows * n)?;
    let time_feats = r.f64s(rows * NUM_TIME_FEATURES)?;
    r.finish()?;
    WindowDataset::from_parts(name, t, h, n, borders, scaler, values, time_feats)
}

/// Hex SHA-256 of the bytes.
pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the cache and returns its checksum.
pub fn write_windows(ds: &WindowDataset, path: &Path) -> Result<String> {
    let bytes = encode_windows(ds);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(checksum(&bytes))
}

pub fn read_windows(path: &Path) -> Result<WindowDataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_windows(&bytes)
}

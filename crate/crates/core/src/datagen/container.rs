//! The `PRGD` dataset container.
//!
//! Little-endian layout: magic `PRGD`, then `u32` version, sample count,
//! height, width, channel count and dtype (1 = f32, 2 = f64), then a `u8`
//! equation code, then the samples as contiguous row-major
//! `channels × H × W` records.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::pde::Equation;

pub const MAGIC: [u8; 4] = *b"PRGD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 6 * 4 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            _ => Err(Error::DtypeMismatch(format!("unknown dtype code {code}"))),
        }
    }
}

/// Serializes a dataset. With `F32` the values are rounded.
pub fn encode_dataset(ds: &Dataset, dtype: Dtype) -> Vec<u8> {
    let f = &ds.fields;
    let mut out = Vec::with_capacity(HEADER_LEN + f.data().len() * dtype.width());
    out.extend_from_slice(&MAGIC);
    for v in [VERSION, f.batch() as u32, f.size() as u32, f.size() as u32, f.channels() as u32, dtype.code()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(ds.equation.code());
    for &v in f.data() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Parses a dataset, optionally requiring a particular stored dtype.
pub fn decode_dataset(bytes: &[u8], expect: Option<Dtype>) -> Result<Dataset> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (count, h, w, channels) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
    let dtype = Dtype::from_code(word(5))?;
    if let Some(e) = expect {
        if e != dtype {
            return Err(Error::DtypeMismatch(format!("stored {dtype:?}, expected {e:?}")));
        }
    }
    let equation = Equation::from_code(bytes[HEADER_LEN - 1])?;
    if h != w || !h.is_power_of_two() {
        return Err(Error::Malformed(format!("grid {h}x{w} is not a square power of two")));
    }
    if channels != 2 {
        return Err(Error::Malformed(format!("expected 2 channels [a, u], found {channels}")));
    }
    let n_values = count
        .checked_mul(channels * h * w)
        .ok_or_else(|| Error::Malformed("sample count overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    let need = n_values * dtype.width();
    if payload.len() < need {
        return Err(Error::Truncated(format!("payload has {} bytes, header implies {need}", payload.len())));
    }
    if payload.len() > need {
        return Err(Error::Malformed(format!("{} trailing bytes", payload.len() - need)));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    let fields = Field::new(count, channels, h, data).map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(Dataset { equation, fields })
}

pub fn write_dataset(ds: &Dataset, dtype: Dtype, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_dataset(ds, dtype))?;
    file.sync_all()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?, None)
}

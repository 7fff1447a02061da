//! The `PRCK` checkpoint container.
//!
//! Little-endian layout: magic `PRCK`, `u32` version, `u32` tensor count,
//! then per tensor a `u16` name length, the UTF-8 name, a `u8` dtype
//! (1 = f32, 2 = f64, 3 = interleaved complex f64), a `u8` rank, `u32`
//! dims and the raw payload. Complex tensors list their dims without the
//! trailing `(re, im)` axis.
//!
//! Model tensors use the parameter names (`level2.sra.w_gain`, ...);
//! scalars the forward pass needs live under `meta.`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::{AttentionMode, DenoiserConfig, GateMode, ResidualLift, SraMode};
use super::{init_params, Denoiser};
use crate::autodiff::{ParamKind, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PRCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorDtype {
    F32,
    F64,
    ComplexF64,
}

impl TensorDtype {
    fn code(self) -> u8 {
        match self {
            TensorDtype::F32 => 1,
            TensorDtype::F64 => 2,
            TensorDtype::ComplexF64 => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(TensorDtype::F32),
            2 => Ok(TensorDtype::F64),
            3 => Ok(TensorDtype::ComplexF64),
            _ => Err(Error::DtypeMismatch(format!("unknown tensor dtype code {code}"))),
        }
    }
}

/// Named tensors with their stored dtypes, in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, (TensorDtype, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dtype: TensorDtype, t: Tensor) {
        self.tensors.insert(name.into(), (dtype, t));
    }

    pub fn insert_scalars(&mut self, name: impl Into<String>, values: &[f64]) {
        let t = Tensor::new(vec![values.len()], values.to_vec()).expect("1-D");
        self.insert(name, TensorDtype::F64, t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Malformed(format!("checkpoint has no tensor {name}")))
    }

    pub fn scalars(&self, name: &str) -> Result<&[f64]> {
        Ok(self.get(name)?.data())
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        match self.scalars(name)? {
            [v] => Ok(*v),
            other => Err(Error::Malformed(format!("{name}: expected one value, found {}", other.len()))),
        }
    }

    /// Adds every parameter (complex ones as dtype 3) under `prefix`.
    pub fn insert_params(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            let dtype = match store.kind(name) {
                Some(ParamKind::Complex) => TensorDtype::ComplexF64,
                _ => TensorDtype::F64,
            };
            self.insert(format!("{prefix}{name}"), dtype, t.clone());
        }
    }

    /// Reads back the tensors named like `template` under `prefix`,
    /// checking their shapes.
    pub fn params_like(&self, prefix: &str, template: &ParamStore) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (name, t) in template.iter() {
            let stored = self.get(&format!("{prefix}{name}"))?;
            if stored.shape() != t.shape() {
                return Err(Error::Malformed(format!(
                    "{prefix}{name}: stored shape {:?}, model expects {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            out.insert(name.clone(), stored.clone(), template.kind(name).unwrap_or(ParamKind::Real));
        }
        Ok(out)
    }
}

fn config_codes(cfg: &DenoiserConfig) -> Vec<f64> {
    vec![
        cfg.embed_dim as f64,
        cfg.dropout,
        cfg.sra_mode.code() as f64,
        cfg.gate_mode.code() as f64,
        cfg.attention_mode.code() as f64,
        cfg.residual_lift.code() as f64,
    ]
}

fn as_count(v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::Malformed(format!("{v} is not a count")))
    }
}

impl Denoiser {
    /// Parameters plus `meta.config`, `meta.channels`, `meta.modes`,
    /// `meta.sigma_data` and `meta.residual_scale`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert_params("", &self.params);
        ck.insert_scalars("meta.config", &config_codes(&self.config));
        ck.insert_scalars("meta.channels", &self.config.channels.iter().map(|&c| c as f64).collect::<Vec<_>>());
        ck.insert_scalars("meta.modes", &self.config.modes.iter().map(|&m| m as f64).collect::<Vec<_>>());
        ck.insert_scalars("meta.sigma_data", &[self.sigma_data]);
        ck.insert_scalars("meta.residual_scale", &[self.residual_scale]);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let codes = ck.scalars("meta.config")?;
        let &[embed, dropout, sra, gate, attn, lift] = codes else {
            return Err(Error::Malformed(format!("meta.config has {} entries", codes.len())));
        };
        let config = DenoiserConfig {
            channels: ck.scalars("meta.channels")?.iter().map(|&v| as_count(v)).collect::<Result<_>>()?,
            modes: ck.scalars("meta.modes")?.iter().map(|&v| as_count(v)).collect::<Result<_>>()?,
            embed_dim: as_count(embed)?,
            dropout,
            sra_mode: SraMode::from_code(as_count(sra)? as u32)?,
            gate_mode: GateMode::from_code(as_count(gate)? as u32)?,
            attention_mode: AttentionMode::from_code(as_count(attn)? as u32)?,
            residual_lift: ResidualLift::from_code(as_count(lift)? as u32)?,
        };
        config.validate(None).map_err(|e| Error::Malformed(e.to_string()))?;
        let params = ck.params_like("", &init_params(&config, 0))?;
        Ok(Self {
            config,
            params,
            sigma_data: ck.scalar("meta.sigma_data")?,
            residual_scale: ck.scalar("meta.residual_scale")?,
        })
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ck.tensors.len() as u32).to_le_bytes());
    for (name, (dtype, t)) in &ck.tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dtype.code());
        let dims = match dtype {
            TensorDtype::ComplexF64 => match t.shape().split_last() {
                Some((2, rest)) => rest,
                _ => return Err(Error::shape(format!("{name}: complex tensor needs a trailing axis of 2"))),
            },
            _ => t.shape(),
        };
        let rank = u8::try_from(dims.len()).map_err(|_| Error::shape(format!("{name}: rank too large")))?;
        out.push(rank);
        for &d in dims {
            let d = u32::try_from(d).map_err(|_| Error::shape(format!("{name}: dimension too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            match dtype {
                TensorDtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                _ => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated(format!("{what}: need {n} bytes at offset {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let found: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32("tensor count")?;
    let mut ck = Checkpoint::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = TensorDtype::from_code(r.u8("dtype")?)?;
        let rank = r.u8("rank")? as usize;
        let mut shape = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dtype == TensorDtype::ComplexF64 {
            shape.push(2);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Malformed(format!("{name}: size overflows")))?;
        let width = if dtype == TensorDtype::F32 { 4 } else { 8 };
        let payload = r.take(numel.checked_mul(width).ok_or_else(|| Error::Malformed("size overflows".into()))?, &name)?;
        let data: Vec<f64> = match dtype {
            TensorDtype::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            _ => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        };
        if ck.tensors.contains_key(&name) {
            return Err(Error::Malformed(format!("duplicate tensor {name}")));
        }
        ck.insert(name, dtype, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ck)
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_checkpoint(ck)?)?;
    file.sync_all()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `DRDFCKPT`, `u32` version, `u32`-prefixed
//! TOML model header, `u32` group count, then per group a `u16`-prefixed name,
//! `u64` length and the `f64` values. An optional optimizer section follows:
//! `u8` flag, `u64` step, `f64` momentum, `u32`-prefixed TOML schedule and the
//! velocity groups in the same format.

use std::io::{Read, Write};
use std::path::Path;

use super::optim::{LrSchedule, OptimState};
use super::{FusionModel, ModelConfig, Params, GROUP_NAMES};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DRDFCKPT";
pub const VERSION: u32 = 1;

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn write_groups(out: &mut Vec<u8>, params: &Params) {
    let groups = params.groups();
    out.extend_from_slice(&(groups.len() as u32).to_le_bytes());
    for (name, g) in GROUP_NAMES.iter().zip(groups) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(g.len() as u64).to_le_bytes());
        for v in g.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn to_bytes(model: &FusionModel, optim: Option<&OptimState>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 8 * model.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let header = toml::to_string(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    write_str(&mut out, &header);
    write_groups(&mut out, &model.params);
    match optim {
        None => out.push(0),
        Some(o) => {
            out.push(1);
            out.extend_from_slice(&(o.step as u64).to_le_bytes());
            out.extend_from_slice(&o.momentum.to_le_bytes());
            let schedule = toml::to_string(&o.schedule).map_err(|e| Error::Config(e.to_string()))?;
            write_str(&mut out, &schedule);
            write_groups(&mut out, &o.velocity);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::parse("checkpoint", "unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self, len: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(len)?).map_err(|e| Error::parse("checkpoint", e.to_string()))
    }

    fn groups(&mut self, cfg: &ModelConfig) -> Result<Params> {
        let mut params = Params::zeros(cfg);
        let count = self.u32()? as usize;
        if count != GROUP_NAMES.len() {
            return Err(Error::parse("checkpoint", format!("expected {} groups, found {count}", GROUP_NAMES.len())));
        }
        for (name, g) in GROUP_NAMES.iter().zip(params.groups_mut()) {
            let len = u16::from_le_bytes(self.array()?) as usize;
            let found = self.string(len)?;
            if found != *name {
                return Err(Error::parse("checkpoint", format!("expected group {name}, found {found}")));
            }
            let n = self.u64()? as usize;
            if n != g.len() {
                return Err(Error::parse(
                    "checkpoint",
                    format!("group {name} has {n} values, architecture needs {}", g.len()),
                ));
            }
            for v in g.iter_mut() {
                *v = self.f64()?;
            }
        }
        Ok(params)
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(FusionModel, Option<OptimState>)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::parse("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::parse("checkpoint", format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig = toml::from_str(r.string(len)?).map_err(|e| Error::parse("checkpoint header", e.to_string()))?;
    config.validate()?;
    let params = r.groups(&config)?;
    if !params.is_finite() {
        return Err(Error::parse("checkpoint", "non-finite parameters"));
    }
    let optim = match r.take(1)?[0] {
        0 => None,
        1 => {
            let step = r.u64()? as usize;
            let momentum = r.f64()?;
            let len = r.u32()? as usize;
            let schedule: LrSchedule =
                toml::from_str(r.string(len)?).map_err(|e| Error::parse("checkpoint schedule", e.to_string()))?;
            let velocity = r.groups(&config)?;
            Some(OptimState {
                velocity,
                step,
                momentum,
                schedule,
            })
        }
        f => return Err(Error::parse("checkpoint", format!("bad optimizer flag {f}"))),
    };
    if r.pos != buf.len() {
        return Err(Error::parse("checkpoint", "trailing bytes"));
    }
    Ok((FusionModel { config, params }, optim))
}

pub fn save(path: &Path, model: &FusionModel, optim: Option<&OptimState>) -> Result<()> {
    let bytes = to_bytes(model, optim)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(FusionModel, Option<OptimState>)> {
    let mut f = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

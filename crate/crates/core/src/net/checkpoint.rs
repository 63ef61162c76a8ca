//! Binary checkpoint files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "VPNET1\0"  version  meta_len  meta (JSON)  blob_count
//! blob*: name_len  name  ndim  dims[ndim]  f32 data
//! ```
//!
//! Parameters come first in config order, followed by the Adam moments
//! as `adam.m/<name>` and `adam.v/<name>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, NetConfig, Param, Params, UNet};
use crate::error::{Error, Result};
use crate::volume::WindowSpec;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"VPNET1\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained net together with its optimizer state and input conditioning.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub params: Params<f32>,
    pub adam: AdamState<f32>,
    /// CT window applied to the first input channel.
    pub window: WindowSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: NetConfig,
    step: u64,
    window: WindowSpec,
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return format_err(format!("checkpoint truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(net: UNet<f32>, window: WindowSpec) -> Self {
        let adam = AdamState::new(&net.config);
        Self {
            config: net.config,
            params: net.params,
            adam,
            window,
        }
    }

    pub fn net(&self) -> UNet<f32> {
        UNet {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    /// Checks every stored array against `config`, naming the first mismatch.
    pub fn validate(&self, config: &NetConfig) -> Result<()> {
        config.validate()?;
        for (what, p) in [("parameters", &self.params), ("adam.m", &self.adam.m), ("adam.v", &self.adam.v)] {
            p.check_against(config)
                .map_err(|e| Error::Format(format!("checkpoint {what}: {e}")))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&Meta {
            config: self.config.clone(),
            step: self.adam.step,
            window: self.window,
        })
        .expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let n = self.params.len() + self.adam.m.len() + self.adam.v.len();
        out.extend_from_slice(&(n as u32).to_le_bytes());
        let groups = [("", &self.params), ("adam.m/", &self.adam.m), ("adam.v/", &self.adam.v)];
        for (prefix, group) in groups {
            for p in &group.entries {
                let name = format!("{prefix}{}", p.name);
                out.extend_from_slice(&(name.len() as u32).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
                for &d in &p.shape {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in &p.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(7).ok() != Some(&CHECKPOINT_MAGIC[..]) {
            return format_err("not a checkpoint: bad magic");
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return format_err(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            ));
        }
        let meta_len = r.u32()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("checkpoint blob name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("blob too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blobs.push(Param { name, shape, data });
        }
        if r.pos != bytes.len() {
            return format_err(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos));
        }

        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for mut b in blobs {
            if let Some(rest) = b.name.strip_prefix("adam.m/") {
                b.name = rest.to_string();
                m.push(b);
            } else if let Some(rest) = b.name.strip_prefix("adam.v/") {
                b.name = rest.to_string();
                v.push(b);
            } else {
                params.push(b);
            }
        }
        let ckpt = Self {
            config: meta.config,
            params: Params { entries: params },
            adam: AdamState {
                step: meta.step,
                m: Params { entries: m },
                v: Params { entries: v },
            },
            window: meta.window,
        };
        ckpt.validate(&ckpt.config)?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

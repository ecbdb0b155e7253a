//! `DANC` checkpoint: magic, u32 tensor count, then per tensor a u16 name
//! length, the name, u8 rank, u32 dims and little-endian f32 values; then a
//! u32-length-prefixed UTF-8 config echo.

use std::path::Path;

use neurodegen_core::nets::{init_params_with_std, NetId};
use neurodegen_core::train::{round_to_f32, ModelCheckpoint};

use crate::atomic::{read, write_atomic};
use crate::error::{Error, Result};
use crate::formats::config::{entries, PipelineConfig};

const MAGIC: &[u8; 4] = b"DANC";
/// Echo-only key recording completed epochs.
const EPOCHS_DONE: &str = "epochs_done";

/// A checkpoint together with the pipeline settings it was produced under.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub model: ModelCheckpoint,
    pub config: PipelineConfig,
}

impl CheckpointFile {
    /// Parameters are rounded to the stored precision so that the value
    /// equals what a later read returns.
    pub fn new(mut model: ModelCheckpoint, mut config: PipelineConfig) -> Self {
        round_to_f32(&mut model.nets);
        config.train = model.config;
        Self { model, config }
    }

    pub fn encode(&self) -> Vec<u8> {
        let params: Vec<_> = self.model.nets.all_params().collect();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.value.shape().len() as u8);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.value.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut echo = self.config.echo();
        echo.push_str(&format!("{EPOCHS_DONE} = {}\n", self.model.epochs_done));
        out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        out.extend_from_slice(echo.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "not a DANC checkpoint (bad magic)"));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(path, "tensor too large"))?)?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            tensors.push((name, dims, data));
        }
        let echo_len = r.u32()? as usize;
        let echo = std::str::from_utf8(r.take(echo_len)?)
            .map_err(|_| Error::format(path, "config echo is not UTF-8"))?;
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after the config echo"));
        }
        let mut config = PipelineConfig::default();
        let mut epochs_done = None;
        for (k, v) in entries(echo)? {
            if k == EPOCHS_DONE {
                epochs_done = Some(v.parse().map_err(|_| Error::format(path, "bad epochs_done"))?);
            } else {
                config.set(k, v)?;
            }
        }
        config.validate()?;
        // start from the architecture's layout, then fill every tensor by name
        let mut nets = init_params_with_std(&config.train.arch, 0, 0.0)?;
        let mut expected = 0;
        for id in NetId::ALL {
            expected += nets.net(id).params().len();
        }
        if expected != tensors.len() {
            return Err(Error::format(
                path,
                format!("{} tensors stored, architecture has {expected}", tensors.len()),
            ));
        }
        let mut it = tensors.into_iter();
        for id in NetId::ALL {
            for p in nets.net_mut(id).params_mut() {
                let (name, dims, data) = it.next().expect("counted above");
                if name != p.name || dims != p.value.shape() {
                    return Err(Error::format(
                        path,
                        format!("tensor `{name}` {dims:?} does not match `{}` {:?}", p.name, p.value.shape()),
                    ));
                }
                p.value.data_mut().copy_from_slice(&data);
            }
        }
        Ok(Self {
            model: ModelCheckpoint {
                nets,
                config: config.train,
                epochs_done: epochs_done.unwrap_or(0),
            },
            config,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

//! `DANI` container: magic, u16 version, u8 dtype, u8 rank, u32 dims, then
//! little-endian f32 values in row-major order.

use std::path::Path;

use neurodegen_core::regions::{Mask, RegionMaskSet};
use neurodegen_core::Image;

use crate::atomic::{read, write_atomic};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DANI";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

/// An n-dimensional array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceFile {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl SliceFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(path, m.to_string());
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("not a DANI slice file (bad magic)"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported slice file version {version}")));
        }
        if bytes[6] != DTYPE_F32 {
            return Err(Error::format(path, format!("unsupported dtype {}", bytes[6])));
        }
        let rank = bytes[7] as usize;
        let header = 8 + 4 * rank;
        if bytes.len() < header {
            return Err(bad("truncated header"));
        }
        let dims: Vec<u32> = bytes[8..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        match count.and_then(|n| n.checked_mul(4)) {
            Some(n) if n == bytes.len() - header => {}
            _ => return Err(bad("payload length does not match the dimensions")),
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn from_image(image: &Image) -> Self {
        Self {
            dims: vec![image.rows() as u32, image.cols() as u32],
            data: image.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_image(&self, path: &Path) -> Result<Image> {
        if self.dims.len() != 2 {
            return Err(Error::format(path, format!("expected a rank-2 slice, got rank {}", self.dims.len())));
        }
        let data = self.data.iter().map(|&v| f64::from(v)).collect();
        Ok(Image::from_vec(self.dims[0] as usize, self.dims[1] as usize, data)?)
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    SliceFile::read(path)?.to_image(path)
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    SliceFile::from_image(image).write(path)
}

/// Region masks as an `R x M x N` stack of exact 0/1 values.
pub fn write_masks(path: &Path, masks: &RegionMaskSet) -> Result<()> {
    let (rows, cols) = masks.shape();
    let mut data = Vec::with_capacity(masks.len() * rows * cols);
    for m in masks.masks() {
        data.extend(m.bits().iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
    }
    SliceFile {
        dims: vec![masks.len() as u32, rows as u32, cols as u32],
        data,
    }
    .write(path)
}

pub fn read_masks(path: &Path) -> Result<RegionMaskSet> {
    let f = SliceFile::read(path)?;
    if f.dims.len() != 3 {
        return Err(Error::format(path, "mask stack must have rank 3"));
    }
    let (r, rows, cols) = (f.dims[0] as usize, f.dims[1] as usize, f.dims[2] as usize);
    let mut masks = Vec::with_capacity(r);
    for chunk in f.data.chunks(rows * cols).take(r) {
        let mut bits = Vec::with_capacity(chunk.len());
        for &v in chunk {
            bits.push(match v {
                0.0 => false,
                1.0 => true,
                _ => return Err(Error::format(path, format!("mask value {v} is neither 0 nor 1"))),
            });
        }
        masks.push(Mask::from_bits(rows, cols, bits)?);
    }
    Ok(RegionMaskSet::from_masks(masks, 0)?)
}

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Element type code for little-endian IEEE-754 binary32.
pub const DTYPE_F32: u32 = 1;

/// Row-major `f32` tensor with a free-form layer tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub tag: String,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, tag: impl Into<String>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "tensor dims {dims:?} hold {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            tag: tag.into(),
            data,
        })
    }
}

pub fn write_tensor(t: &Tensor, path: &Path) -> Result<()> {
    let mut w = super::create(path)?;
    let mut body = || -> std::io::Result<()> {
        w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for d in &t.dims {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        w.write_all(&DTYPE_F32.to_le_bytes())?;
        w.write_all(&(t.tag.len() as u32).to_le_bytes())?;
        w.write_all(t.tag.as_bytes())?;
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = super::open(path)?;
    let bad = |m: &str| Error::format(path, m.to_owned());
    let mut u32_buf = [0u8; 4];
    let mut u64_buf = [0u8; 8];
    let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
        r.read_exact(&mut u32_buf).map_err(|_| bad("truncated tensor header"))?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let rank = read_u32(&mut r)? as usize;
    if rank > 16 {
        return Err(bad("tensor rank above 16"));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut u64_buf).map_err(|_| bad("truncated tensor dims"))?;
        dims.push(u64::from_le_bytes(u64_buf) as usize);
    }
    let dtype = read_u32(&mut r)?;
    if dtype != DTYPE_F32 {
        return Err(Error::format(path, format!("unsupported element type {dtype}")));
    }
    let tag_len = read_u32(&mut r)? as usize;
    let mut tag = vec![0u8; tag_len];
    r.read_exact(&mut tag).map_err(|_| bad("truncated tensor tag"))?;
    let tag = String::from_utf8(tag).map_err(|_| bad("tensor tag is not UTF-8"))?;
    let n = dims
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or_else(|| bad("tensor size overflows"))?;
    let mut raw = vec![0u8; n.checked_mul(4).ok_or_else(|| bad("tensor size overflows"))?];
    r.read_exact(&mut raw).map_err(|_| bad("tensor payload shorter than its dims"))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after tensor payload"));
    }
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Tensor::new(dims, tag, data)
}

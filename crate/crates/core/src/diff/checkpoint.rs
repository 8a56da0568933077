//! Named-tensor checkpoint container.
//!
//! Layout (little endian):
//! `b"PATCKPT\0"`, `u32` format version, `u8` dtype length + dtype tag,
//! `u32` tensor count, then per tensor: `u32` name length + UTF-8 name,
//! `u32` group, `u32` rank, `u64` per dimension, raw values.

use std::io::{Read, Write};
use std::path::Path;

use super::params::{Param, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PATCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Real>(mut out: impl Write, params: &ParamSet<T>) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&[T::DTYPE.len() as u8])?;
    out.write_all(T::DTYPE.as_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&(p.group as u32).to_le_bytes())?;
        out.write_all(&(p.tensor.shape().len() as u32).to_le_bytes())?;
        for &d in p.tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.tensor.len() * 8);
        for &x in p.tensor.data() {
            if T::DTYPE == "f64" {
                buf.extend_from_slice(&x.as_f64().to_le_bytes());
            } else {
                buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

/// Reads a checkpoint; values are converted to `T` if the stored dtype
/// differs.
pub fn read_checkpoint<T: Real>(mut input: impl Read, origin: &Path) -> Result<ParamSet<T>> {
    let magic: [u8; 8] = read_exact(&mut input)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, "not a checkpoint (bad magic)"));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(origin, format!("unsupported checkpoint version {version}")));
    }
    let [dlen] = read_exact::<1>(&mut input)?;
    let mut dtype = vec![0u8; dlen as usize];
    input.read_exact(&mut dtype)?;
    let wide = match dtype.as_slice() {
        b"f64" => true,
        b"f32" => false,
        other => {
            return Err(Error::format(
                origin,
                format!("unknown dtype {:?}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let count = read_u32(&mut input)? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; nlen];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::format(origin, "tensor name is not UTF-8"))?;
        let group = read_u32(&mut input)? as usize;
        let rank = read_u32(&mut input)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact(&mut input)?) as usize);
        }
        let n: usize = shape.iter().product();
        let width = if wide { 8 } else { 4 };
        let mut raw = vec![0u8; n * width];
        input.read_exact(&mut raw)?;
        let data: Vec<T> = if wide {
            raw.chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
                .collect()
        } else {
            raw.chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect()
        };
        params.push(Param {
            name,
            group,
            tensor: Tensor::new(shape, data)?,
        });
    }
    Ok(ParamSet::from_params(params))
}

pub fn save_checkpoint<T: Real>(path: &Path, params: &ParamSet<T>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ParamSet<T>> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file), path)
}

//! Boundary record files.
//!
//! Layout (little endian): `b"PATBND\0\0"`, `u32` version, `u32` n_det,
//! `u32` n_time, `u32` count, `f64` dt, `u32` record_stride, `u32` pad,
//! then `count · n_det · n_time` `f32` values, row-major `[det][time]` per
//! record.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BoundaryData, SimConfig, SimGrid};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const BOUNDARY_MAGIC: &[u8; 8] = b"PATBND\0\0";
pub const BOUNDARY_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryHeader {
    pub n_det: usize,
    pub n_time: usize,
    pub count: usize,
    pub dt: f64,
    pub record_stride: usize,
    pub pad: usize,
}

impl BoundaryHeader {
    pub fn for_config(grid: &SimGrid, config: &SimConfig, count: usize) -> Self {
        Self {
            n_det: config.n_det,
            n_time: config.n_records(),
            count,
            dt: config.dt,
            record_stride: config.record_stride,
            pad: grid.pad(),
        }
    }
}

pub fn write_boundary<T: Real>(path: &Path, header: &BoundaryHeader, records: &[BoundaryData<T>]) -> Result<()> {
    if records.len() != header.count
        || records
            .iter()
            .any(|r| r.n_det() != header.n_det || r.n_time() != header.n_time)
    {
        return Err(Error::shape("write_boundary", "records do not match the header"));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(BOUNDARY_MAGIC)?;
    w.write_all(&BOUNDARY_VERSION.to_le_bytes())?;
    for v in [header.n_det, header.n_time, header.count] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&header.dt.to_le_bytes())?;
    w.write_all(&(header.record_stride as u32).to_le_bytes())?;
    w.write_all(&(header.pad as u32).to_le_bytes())?;
    for r in records {
        for &v in r.values() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_boundary(path: &Path) -> Result<(BoundaryHeader, Vec<BoundaryData<f32>>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut head = [0u8; 8 + 4 * 4 + 8 + 4 + 4];
    r.read_exact(&mut head)
        .map_err(|_| Error::format(path, "truncated boundary header"))?;
    if &head[..8] != BOUNDARY_MAGIC {
        return Err(Error::format(path, "not a boundary record file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap()) as usize;
    if u32_at(8) != BOUNDARY_VERSION as usize {
        return Err(Error::format(path, format!("unsupported version {}", u32_at(8))));
    }
    let header = BoundaryHeader {
        n_det: u32_at(12),
        n_time: u32_at(16),
        count: u32_at(20),
        dt: f64::from_le_bytes(head[24..32].try_into().unwrap()),
        record_stride: u32_at(32),
        pad: u32_at(36),
    };
    let per = header.n_det * header.n_time;
    let mut raw = vec![0u8; header.count * per * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format(path, "truncated boundary payload"))?;
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let records = (0..header.count)
        .map(|i| BoundaryData::new(header.n_det, header.n_time, values[i * per..(i + 1) * per].to_vec()))
        .collect::<Result<_>>()?;
    Ok((header, records))
}

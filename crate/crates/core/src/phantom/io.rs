//! Phantom split files.
//!
//! Layout (little endian): `b"PATPHAN\0"`, `u32` version, `u32` m,
//! `u32` count, `u64` seed, `f64` jitter, then `count · m · m` `f32`
//! values, row-major per phantom.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Phantom;
use crate::error::{Error, Result};

pub const PHANTOM_MAGIC: &[u8; 8] = b"PATPHAN\0";
pub const PHANTOM_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitHeader {
    pub m: usize,
    pub count: usize,
    pub seed: u64,
    pub jitter: f64,
}

pub fn write_split(path: &Path, phantoms: &[Phantom], seed: u64, jitter: f64) -> Result<()> {
    let m = phantoms.first().map_or(0, |p| p.size());
    if phantoms.iter().any(|p| p.size() != m) {
        return Err(Error::shape("write_split", "phantoms of mixed size"));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(PHANTOM_MAGIC)?;
    w.write_all(&PHANTOM_VERSION.to_le_bytes())?;
    w.write_all(&(m as u32).to_le_bytes())?;
    w.write_all(&(phantoms.len() as u32).to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&jitter.to_le_bytes())?;
    for p in phantoms {
        for v in p.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<(SplitHeader, Vec<Phantom>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut head = [0u8; 8 + 4 + 4 + 4 + 8 + 8];
    r.read_exact(&mut head)
        .map_err(|_| Error::format(path, "truncated phantom header"))?;
    if &head[..8] != PHANTOM_MAGIC {
        return Err(Error::format(path, "not a phantom split file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != PHANTOM_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let header = SplitHeader {
        m: u32_at(12) as usize,
        count: u32_at(16) as usize,
        seed: u64::from_le_bytes(head[20..28].try_into().unwrap()),
        jitter: f64::from_le_bytes(head[28..36].try_into().unwrap()),
    };
    let mm = header.m * header.m;
    let mut raw = vec![0u8; header.count * mm * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format(path, "truncated phantom payload"))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let phantoms = values
        .chunks(mm.max(1))
        .take(header.count)
        .map(|c| Phantom::new(header.m, c.to_vec()))
        .collect::<Result<_>>()?;
    Ok((header, phantoms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{rasterize, shepp_logan};

    #[test]
    fn split_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.bin");
        let ps = vec![rasterize(&shepp_logan(), 16).unwrap(), Phantom::zeros(16)];
        write_split(&path, &ps, 42, 0.05).unwrap();
        let (h, back) = read_split(&path).unwrap();
        assert_eq!(
            h,
            SplitHeader {
                m: 16,
                count: 2,
                seed: 42,
                jitter: 0.05
            }
        );
        assert_eq!(back, ps);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        write_split(&path, &[Phantom::zeros(8)], 1, 0.0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_split(&path).is_err());
    }
}

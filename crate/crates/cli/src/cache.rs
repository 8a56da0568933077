//! Phantom and boundary-record cache keyed by a digest of the settings it
//! depends on.
//!
//! ```text
//! <cache_dir>/<key>/key.toml
//!                  /{train,validation,test}.phan
//!                  /{train,validation,test}.bnd
//!                  /value_histogram.csv
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pat_core::kspace::{read_boundary, write_boundary, BoundaryHeader};
use pat_core::phantom::{build_dataset, read_split, value_histogram, write_split, Split};
use pat_core::trainer::{precompute, TrainingData};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

const KEY_FILE: &str = "key.toml";
const HISTOGRAM_BINS: usize = 20;

fn phantom_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.phan", split.name()))
}

fn boundary_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.bnd", split.name()))
}

pub fn is_complete(cfg: &ExperimentConfig, dir: &Path) -> bool {
    let key_matches = std::fs::read_to_string(dir.join(KEY_FILE)).is_ok_and(|k| k == cfg.cache_key_text());
    key_matches
        && Split::ALL
            .iter()
            .all(|&s| phantom_file(dir, s).is_file() && boundary_file(dir, s).is_file())
}

/// Builds the cache unless an identical one exists; returns its directory
/// and whether it was already there.
pub fn generate(cfg: &ExperimentConfig) -> Result<(PathBuf, bool)> {
    let dir = cfg.cache_path();
    if is_complete(cfg, &dir) {
        return Ok((dir, true));
    }
    let tmp = dir.with_extension(format!("partial-{}", std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    }
    std::fs::create_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;

    let dataset = build_dataset(cfg.seed, cfg.sizes(), cfg.phantom.m, cfg.phantom.jitter)?;
    for split in Split::ALL {
        write_split(&phantom_file(&tmp, split), dataset.split(split), cfg.seed, cfg.phantom.jitter)?;
    }
    let (grid, sim) = cfg.sim()?;
    let records = precompute(&dataset, cfg.gamma(), grid, sim)?;
    for (split, recs) in Split::ALL.into_iter().zip(&records) {
        let header = BoundaryHeader::for_config(&grid, &sim, recs.len());
        write_boundary(&boundary_file(&tmp, split), &header, recs)?;
    }
    let mut hist = String::from("bin_start,bin_end,count\n");
    for (i, c) in value_histogram(dataset.iter(), HISTOGRAM_BINS).into_iter().enumerate() {
        let w = 1.0 / HISTOGRAM_BINS as f64;
        writeln!(hist, "{},{},{c}", i as f64 * w, (i + 1) as f64 * w).expect("write to string");
    }
    let hist_path = tmp.join("value_histogram.csv");
    std::fs::write(&hist_path, hist).map_err(|e| CliError::io(&hist_path, e))?;
    let key_path = tmp.join(KEY_FILE);
    std::fs::write(&key_path, cfg.cache_key_text()).map_err(|e| CliError::io(&key_path, e))?;

    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    std::fs::rename(&tmp, &dir).map_err(|e| CliError::io(&dir, e))?;
    Ok((dir, false))
}

/// Loads the cached phantoms and records, checking they match `cfg`.
pub fn load(cfg: &ExperimentConfig) -> Result<TrainingData<f32>> {
    let dir = cfg.cache_path();
    if !is_complete(cfg, &dir) {
        return Err(CliError::MissingCache { path: dir });
    }
    let (grid, sim) = cfg.sim()?;
    let expected = |count| BoundaryHeader::for_config(&grid, &sim, count);
    let mut parts = Vec::with_capacity(3);
    for split in Split::ALL {
        let (head, phantoms) = read_split(&phantom_file(&dir, split))?;
        let (bhead, records) = read_boundary(&boundary_file(&dir, split))?;
        if head.m != cfg.phantom.m || bhead != expected(phantoms.len()) {
            return Err(CliError::invalid(format!(
                "cache {} does not match the configuration; delete it and rerun `pat generate`",
                dir.display()
            )));
        }
        parts.push((phantoms, records));
    }
    let parts: [_; 3] = parts.try_into().expect("three splits");
    Ok(TrainingData::from_parts(grid, sim, cfg.gamma(), parts)?)
}

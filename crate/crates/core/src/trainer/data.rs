use rayon::prelude::*;

use super::GammaCase;
use crate::error::{Error, Result};
use crate::kspace::{BoundaryData, KSpaceSolver, SimConfig, SimGrid};
use crate::phantom::{Dataset, Phantom, Split};
use crate::scalar::Real;

/// One phantom with its boundary record.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub f: Vec<T>,
    pub g: BoundaryData<T>,
}

/// Phantoms of every split with boundary data simulated under one speed law.
#[derive(Clone, Debug)]
pub struct TrainingData<T> {
    pub grid: SimGrid,
    pub config: SimConfig,
    pub gamma: GammaCase,
    pub train: Vec<Sample<T>>,
    pub validation: Vec<Sample<T>>,
    pub test: Vec<Sample<T>>,
}

impl<T: Real> TrainingData<T> {
    pub fn split(&self, split: Split) -> &[Sample<T>] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Assembles loaded phantoms and records, checking sizes and norms.
    pub fn from_parts(
        grid: SimGrid,
        config: SimConfig,
        gamma: GammaCase,
        parts: [(Vec<Phantom>, Vec<BoundaryData<f32>>); 3],
    ) -> Result<Self> {
        let mut offset = 0;
        let mut splits = Vec::with_capacity(3);
        for (phantoms, records) in parts {
            if phantoms.len() != records.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} phantoms but {} boundary records",
                    phantoms.len(),
                    records.len()
                )));
            }
            let mut samples = Vec::with_capacity(phantoms.len());
            for (i, (p, g)) in phantoms.iter().zip(records).enumerate() {
                if p.size() != grid.m() || g.n_det() != config.n_det || g.n_time() != config.n_records() {
                    return Err(Error::shape(
                        "training data",
                        format!("sample {} does not match the simulation grid", offset + i),
                    ));
                }
                if g.norm() == 0.0 {
                    return Err(Error::ZeroNormData { index: offset + i });
                }
                samples.push(Sample {
                    f: p.to_vec(),
                    g: g.cast(),
                });
            }
            offset += phantoms.len();
            splits.push(samples);
        }
        let test = splits.pop().expect("three splits");
        let validation = splits.pop().expect("three splits");
        let train = splits.pop().expect("three splits");
        Ok(Self {
            grid,
            config,
            gamma,
            train,
            validation,
            test,
        })
    }
}

/// Simulates every phantom of `dataset` under `Γ = gamma` in double
/// precision and stores the records rounded to `f32`.
pub fn precompute(dataset: &Dataset, gamma: GammaCase, grid: SimGrid, config: SimConfig) -> Result<[Vec<BoundaryData<f32>>; 3]> {
    if dataset.m != grid.m() {
        return Err(Error::shape(
            "precompute",
            format!("dataset m = {} but grid m = {}", dataset.m, grid.m()),
        ));
    }
    let solver = KSpaceSolver::<f64>::new(grid, config)?;
    let run = |phantoms: &[Phantom]| -> Result<Vec<BoundaryData<f32>>> {
        let records: Vec<BoundaryData<f32>> = phantoms
            .par_chunks(2)
            .map(|pair| -> Result<Vec<BoundaryData<f32>>> {
                let fs: Vec<Vec<f64>> = pair.iter().map(|p| p.to_vec()).collect();
                let speeds: Vec<Vec<f64>> = fs
                    .iter()
                    .map(|f| grid.embed(f, 0.0).into_iter().map(|v| gamma.eval(v)).collect())
                    .collect();
                let out = match pair.len() {
                    2 => solver.simulate_pair([&fs[0], &fs[1]], [&speeds[0], &speeds[1]])?.to_vec(),
                    _ => vec![solver.simulate(&fs[0], &speeds[0])?],
                };
                Ok(out.iter().map(|g| g.cast()).collect())
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        Ok(records)
    };
    Ok([
        run(dataset.split(Split::Train))?,
        run(dataset.split(Split::Validation))?,
        run(dataset.split(Split::Test))?,
    ])
}

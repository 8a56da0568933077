use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::data::{Sample, TrainingData};
use super::loss::loss_and_gradients;
use super::{GammaCase, TrainConfig};
use crate::diff::{save_checkpoint, Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::kspace::{BoundaryData, KSpaceSolver};
use crate::models::Model;
use crate::scalar::Real;

/// Points of the uniform grid on `[0, 1]` used for the mapping sup-error.
pub const SUP_GRID_POINTS: usize = 1001;

/// Split averages of `‖f − R(g)‖/‖f‖` and `‖g − W_M(R(g))‖/‖g‖`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub loss_f: f64,
    pub loss_w: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    /// `loss_W` over the whole training split.
    pub train_loss: f64,
    /// Validation `loss_f`.
    pub loss_f: f64,
    /// Validation `loss_W`.
    pub loss_w: f64,
    pub map_sup_err: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    pub model: Model<T>,
    pub best: Model<T>,
    pub best_iteration: usize,
    pub metrics: Vec<MetricsRecord>,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn sample_losses<T: Real>(model: &Model<T>, solver: &KSpaceSolver<T>, pair: &[Sample<T>]) -> Result<Vec<(f64, f64)>> {
    let grid = solver.grid();
    let mut f_hat = Vec::with_capacity(2);
    let mut speed = Vec::with_capacity(2);
    for s in pair {
        let f = model.reconstruct(s.g.values())?;
        speed.push(model.speed_field(grid, &f)?);
        f_hat.push(f);
    }
    let sims: Vec<BoundaryData<T>> = match pair.len() {
        2 => solver.simulate_pair([&f_hat[0], &f_hat[1]], [&speed[0], &speed[1]])?.to_vec(),
        _ => vec![solver.simulate(&f_hat[0], &speed[0])?],
    };
    Ok(pair
        .iter()
        .zip(&f_hat)
        .zip(&sims)
        .map(|((s, fh), w)| {
            let lf = norm(s.f.iter().zip(fh).map(|(a, b)| a.as_f64() - b.as_f64()))
                / norm(s.f.iter().map(|a| a.as_f64()));
            let lw = norm(s.g.values().iter().zip(w.values()).map(|(a, b)| a.as_f64() - b.as_f64()))
                / norm(s.g.values().iter().map(|a| a.as_f64()));
            (lf, lw)
        })
        .collect())
}

/// Both losses averaged over `samples`.
pub fn eval_metrics<T: Real>(model: &Model<T>, solver: &KSpaceSolver<T>, samples: &[Sample<T>]) -> Result<EvalMetrics> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let per: Vec<Vec<(f64, f64)>> = samples
        .par_chunks(2)
        .map(|pair| sample_losses(model, solver, pair))
        .collect::<Result<_>>()?;
    let (mut lf, mut lw) = (0.0, 0.0);
    for (a, b) in per.into_iter().flatten() {
        lf += a;
        lw += b;
    }
    let n = samples.len() as f64;
    Ok(EvalMetrics {
        loss_f: lf / n,
        loss_w: lw / n,
    })
}

/// `max |M(v) − Γ(v)|` over [`SUP_GRID_POINTS`] uniform points of `[0, 1]`.
pub fn map_sup_error<T: Real>(model: &Model<T>, gamma: GammaCase) -> Result<f64> {
    Ok(mapping_curve(model, gamma, SUP_GRID_POINTS)?
        .iter()
        .map(|[_, m, g]| (m - g).abs())
        .fold(0.0, f64::max))
}

/// Rows `[v, M(v), Γ(v)]` on `n_points` uniform points of `[0, 1]`.
pub fn mapping_curve<T: Real>(model: &Model<T>, gamma: GammaCase, n_points: usize) -> Result<Vec<[f64; 3]>> {
    if n_points < 2 {
        return Err(Error::InvalidArgument("a curve needs at least two points".into()));
    }
    let v: Vec<f64> = (0..n_points).map(|i| i as f64 / (n_points - 1) as f64).collect();
    let vt: Vec<T> = v.iter().map(|&x| T::lit(x)).collect();
    let mv = model.mapping_values(&vt)?;
    Ok(v.iter().zip(mv).map(|(&x, m)| [x, m.as_f64(), gamma.eval(x)]).collect())
}

pub fn write_mapping_curve(path: &Path, rows: &[[f64; 3]]) -> Result<()> {
    let mut s = String::from("v,mapping,gamma\n");
    for [v, m, g] in rows {
        writeln!(s, "{v},{m},{g}").expect("write to string");
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Metrics CSV without wall-clock times, so reruns compare byte for byte.
pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut s = String::from("iteration,train_loss,loss_f,loss_W,map_sup_err\n");
    for r in records {
        writeln!(s, "{},{},{},{},{}", r.iteration, r.train_loss, r.loss_f, r.loss_w, r.map_sup_err).expect("write to string");
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_timing(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut s = String::from("iteration,seconds\n");
    for r in records {
        writeln!(s, "{},{:.3}", r.iteration, r.seconds).expect("write to string");
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Shuffled epochs drawn from one seeded stream.
struct EpochOrder {
    rng: ChaCha8Rng,
    len: usize,
    queue: VecDeque<usize>,
}

impl EpochOrder {
    fn new(seed: u64, len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            rng,
            len,
            queue: VecDeque::new(),
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        while self.queue.len() < size {
            let mut epoch: Vec<usize> = (0..self.len).collect();
            epoch.shuffle(&mut self.rng);
            self.queue.extend(epoch);
        }
        self.queue.drain(..size).collect()
    }
}

/// Minibatch Adam on the self-supervised loss.
///
/// Metrics are taken at iteration 0, every `eval_interval` iterations and at
/// the end; `on_record` sees each one as it is produced. With `out_dir`,
/// `metrics.csv`, `timing.csv`, `best.ckpt` (lowest validation `loss_W`) and
/// `last.ckpt` are kept up to date there.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    mut model: Model<T>,
    data: &TrainingData<T>,
    out_dir: Option<&Path>,
    mut on_record: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if cfg.m != model.config().m || cfg.m != data.grid.m() {
        return Err(Error::shape(
            "train",
            format!("config m = {}, model m = {}, data m = {}", cfg.m, model.config().m, data.grid.m()),
        ));
    }
    if cfg.gamma_case != data.gamma {
        return Err(Error::InvalidArgument(format!(
            "data were simulated with {} but the run is configured for {}",
            data.gamma, cfg.gamma_case
        )));
    }
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::InvalidArgument("training and validation splits must be non-empty".into()));
    }
    let solver = KSpaceSolver::<T>::new(data.grid, data.config)?;
    let mut adam = Adam::new(AdamConfig::default(), cfg.group_lr(), model.params())?;
    let mut order = EpochOrder::new(cfg.seed, data.train.len());
    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut best = (f64::INFINITY, 0, model.clone());

    let mut record = |it: usize, model: &Model<T>, metrics: &mut Vec<MetricsRecord>| -> Result<()> {
        let train = eval_metrics(model, &solver, &data.train)?;
        let val = eval_metrics(model, &solver, &data.validation)?;
        let r = MetricsRecord {
            iteration: it,
            train_loss: train.loss_w,
            loss_f: val.loss_f,
            loss_w: val.loss_w,
            map_sup_err: map_sup_error(model, data.gamma)?,
            seconds: start.elapsed().as_secs_f64(),
        };
        if ![r.train_loss, r.loss_f, r.loss_w, r.map_sup_err].iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { iteration: it });
        }
        if r.loss_w < best.0 {
            best = (r.loss_w, it, model.clone());
            if let Some(dir) = out_dir {
                save_checkpoint(&dir.join("best.ckpt"), model.params())?;
            }
        }
        on_record(&r);
        metrics.push(r);
        if let Some(dir) = out_dir {
            write_metrics(&dir.join("metrics.csv"), metrics)?;
            write_timing(&dir.join("timing.csv"), metrics)?;
        }
        Ok(())
    };

    record(0, &model, &mut metrics)?;
    for it in 1..=cfg.max_iterations {
        let batch: Vec<&BoundaryData<T>> = order
            .next_batch(cfg.batch_size)
            .into_iter()
            .map(|i| &data.train[i].g)
            .collect();
        let (loss, grads) = loss_and_gradients(&model, &solver, &batch)?;
        if !loss.is_finite() || !grads.iter().all(|g| g.all_finite()) {
            return Err(Error::Diverged { iteration: it });
        }
        adam.step(model.params_mut(), &grads)?;
        if it % cfg.eval_interval == 0 || it == cfg.max_iterations {
            record(it, &model, &mut metrics)?;
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("last.ckpt"), model.params())?;
    }
    let (_, best_iteration, best_model) = best;
    Ok(TrainOutcome {
        model,
        best: best_model,
        best_iteration,
        metrics,
    })
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pat_core::diff::load_checkpoint;
use pat_core::kspace::{write_boundary, BoundaryHeader, KSpaceSolver};
use pat_core::models::Model;
use pat_core::phantom::{read_split, Split};
use pat_core::trainer::{
    eval_metrics, map_sup_error, mapping_curve, train, write_mapping_curve, GammaCase, MetricsRecord,
};

use crate::cache;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Published test errors `(loss_f, loss_W)` after 102 400 iterations.
fn reference_errors(gamma: GammaCase, m: usize) -> Option<(f64, f64)> {
    use GammaCase::*;
    match (m, gamma) {
        (64, Gamma1) => Some((0.00504, 0.00702)),
        (64, Gamma2) => Some((0.00537, 0.00947)),
        (64, Gamma3) => Some((0.00557, 0.00634)),
        (64, Gamma4) => Some((0.01373, 0.00456)),
        (96, Gamma1) => Some((0.00860, 0.01293)),
        (96, Gamma2) => Some((0.01023, 0.01679)),
        (96, Gamma3) => Some((0.00710, 0.01132)),
        (96, Gamma4) => Some((0.00689, 0.69511)),
        _ => None,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Creates `<output_dir>/<timestamp>-<command>-<hash>` (or `explicit`) and
/// writes the resolved configuration into it as `manifest.toml`.
pub fn run_dir(cfg: &ExperimentConfig, command: &str, explicit: Option<&Path>) -> Result<PathBuf> {
    let dir = match explicit {
        Some(d) => d.to_path_buf(),
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
            let base = format!("{stamp}-{command}-{}", &cfg.hash()[..8]);
            let mut dir = cfg.output_dir.join(&base);
            let mut k = 1;
            while dir.exists() {
                dir = cfg.output_dir.join(format!("{base}-{k}"));
                k += 1;
            }
            dir
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write(&dir.join("manifest.toml"), manifest(cfg, command))?;
    Ok(dir)
}

/// The resolved configuration, loadable with `--config`.
pub fn manifest(cfg: &ExperimentConfig, command: &str) -> String {
    format!(
        "# pat {command} {}\n# config sha256 {}\n# cache {}\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.hash(),
        cfg.cache_path().display(),
        cfg.to_toml()
    )
}

pub fn plan(cfg: &ExperimentConfig, command: &str) -> Result<String> {
    let cache = cfg.cache_path();
    let (grid, sim) = cfg.sim()?;
    let mut s = manifest(cfg, command);
    writeln!(
        s,
        "\n# cache {}\n# grid {n} × {n} (pad {}), dt {}, {} steps, {} records every {} steps, {} detectors",
        if cache::is_complete(cfg, &cache) { "present" } else { "missing" },
        grid.pad(),
        sim.dt,
        sim.n_steps,
        sim.n_records(),
        sim.record_stride,
        sim.n_det,
        n = grid.n(),
    )
    .expect("write to string");
    let params = Model::<f32>::new(cfg.model_config(), cfg.seed)?.params().count(None);
    writeln!(s, "# model parameters {params}").expect("write to string");
    Ok(s)
}

pub fn generate(cfg: &ExperimentConfig) -> Result<()> {
    let (dir, hit) = cache::generate(cfg)?;
    if hit {
        eprintln!("cache hit: {}", dir.display());
    } else {
        eprintln!("wrote {} phantoms and records to {}", cfg.sizes().total(), dir.display());
    }
    Ok(())
}

pub fn simulate(cfg: &ExperimentConfig, input: &Path, output: &Path) -> Result<()> {
    let (header, phantoms) = read_split(input)?;
    if header.m != cfg.phantom.m {
        return Err(pat_core::Error::Shape {
            op: "simulate",
            detail: format!("{} holds {m} × {m} phantoms, configured m = {}", input.display(), cfg.phantom.m, m = header.m),
        }
        .into());
    }
    let (grid, sim) = cfg.sim()?;
    let solver = KSpaceSolver::<f64>::new(grid, sim)?;
    let gamma = cfg.gamma();
    let records = phantoms
        .iter()
        .map(|p| {
            let f: Vec<f64> = p.to_vec();
            let speed: Vec<f64> = grid.embed(&f, 0.0).into_iter().map(|v| gamma.eval(v)).collect();
            solver.simulate(&f, &speed)
        })
        .collect::<pat_core::Result<Vec<_>>>()?;
    write_boundary(output, &BoundaryHeader::for_config(&grid, &sim, records.len()), &records)?;
    eprintln!("wrote {} records of {} × {} to {}", records.len(), sim.n_det, sim.n_records(), output.display());
    Ok(())
}

fn log_record(r: &MetricsRecord) {
    eprintln!(
        "iteration {:>7}  train loss_W {:.5}  validation loss_f {:.5} loss_W {:.5}  |M − Γ| {:.5}  ({:.0} s)",
        r.iteration, r.train_loss, r.loss_f, r.loss_w, r.map_sup_err, r.seconds
    );
}

pub fn train_cmd(cfg: &ExperimentConfig, explicit: Option<&Path>) -> Result<()> {
    let data = cache::load(cfg)?;
    let dir = run_dir(cfg, "train", explicit)?;
    eprintln!("run directory {}", dir.display());
    let model = Model::<f32>::new(cfg.model_config(), cfg.seed)?;
    let outcome = train(&cfg.train_config(), model, &data, Some(&dir), log_record)?;

    let solver = KSpaceSolver::<f32>::new(data.grid, data.config)?;
    let gamma = cfg.gamma();
    let mut report = String::from("model,iteration,split,loss_f,loss_W,map_sup_err,reference_loss_f,reference_loss_W\n");
    let reference = reference_errors(gamma, cfg.phantom.m);
    let fmt_ref = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let last_iteration = outcome.metrics.last().map_or(0, |r| r.iteration);
    for (name, iteration, model) in [
        ("best", outcome.best_iteration, &outcome.best),
        ("last", last_iteration, &outcome.model),
    ] {
        let m = eval_metrics(model, &solver, data.split(Split::Test))?;
        let sup = map_sup_error(model, gamma)?;
        writeln!(
            report,
            "{name},{iteration},test,{},{},{sup},{},{}",
            m.loss_f,
            m.loss_w,
            fmt_ref(reference.map(|r| r.0)),
            fmt_ref(reference.map(|r| r.1)),
        )
        .expect("write to string");
        if name == "best" {
            eprintln!("test split (best, iteration {iteration}): loss_f {:.5}  loss_W {:.5}", m.loss_f, m.loss_w);
            if let Some((rf, rw)) = reference {
                eprintln!("reference at this size after 102400 iterations: loss_f {rf}  loss_W {rw}");
            }
        }
    }
    write(&dir.join("report.csv"), report)?;
    write_mapping_curve(&dir.join("mapping_curve.csv"), &mapping_curve(&outcome.best, gamma, 101)?)?;
    Ok(())
}

fn load_model(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Model<f32>> {
    let params = load_checkpoint::<f32>(checkpoint)?;
    Ok(Model::from_params(cfg.model_config(), params)?)
}

pub fn eval_cmd(cfg: &ExperimentConfig, checkpoint: &Path, split: Split, explicit: Option<&Path>) -> Result<()> {
    let data = cache::load(cfg)?;
    let model = load_model(cfg, checkpoint)?;
    let solver = KSpaceSolver::<f32>::new(data.grid, data.config)?;
    let m = eval_metrics(&model, &solver, data.split(split))?;
    let sup = map_sup_error(&model, cfg.gamma())?;
    let dir = run_dir(cfg, "eval", explicit)?;
    write(
        &dir.join("eval.csv"),
        format!(
            "checkpoint,split,loss_f,loss_W,map_sup_err\n{},{},{},{},{sup}\n",
            checkpoint.display(),
            split.name(),
            m.loss_f,
            m.loss_w
        ),
    )?;
    eprintln!(
        "{} split: loss_f {:.5}  loss_W {:.5}  |M − Γ| {sup:.5}  ({})",
        split.name(),
        m.loss_f,
        m.loss_w,
        dir.display()
    );
    Ok(())
}

pub fn export_curves(cfg: &ExperimentConfig, checkpoint: &Path, points: usize, explicit: Option<&Path>) -> Result<()> {
    let model = load_model(cfg, checkpoint)?;
    let rows = mapping_curve(&model, cfg.gamma(), points)?;
    let dir = run_dir(cfg, "export-curves", explicit)?;
    let path = dir.join("mapping_curve.csv");
    write_mapping_curve(&path, &rows)?;
    eprintln!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

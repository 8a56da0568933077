use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pat_core::kspace::read_boundary;
use pat_core::phantom::{write_split, Phantom};

struct Env {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Env {
    fn new(extra: &str) -> Self {
        Self::with_iterations(3, extra)
    }

    fn with_iterations(iterations: usize, extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("config.toml");
        let text = format!(
            r#"seed = 5
output_dir = "{out}"
cache_dir = "{cache}"

[phantom]
m = 16
train = 4
validation = 2
test = 2

[model]
levels = 2
base_channels = 4

[trainer]
max_iterations = {iterations}
eval_interval = 2
{extra}
"#,
            out = dir.path().join("runs").display(),
            cache = dir.path().join("cache").display(),
        );
        std::fs::write(&config, text).unwrap();
        Self { dir, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn pat(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_pat"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .unwrap()
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

fn csv_field(path: &Path, column: &str) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == column).unwrap();
    row[i].parse().unwrap()
}

#[test]
fn generate_is_idempotent() {
    let env = Env::new("");
    let first = ok(env.pat(&["generate"]));
    assert!(stderr(&first).contains("wrote 8 phantoms"));
    let second = ok(env.pat(&["generate"]));
    assert!(stderr(&second).contains("cache hit"));
    assert!(first.stdout.is_empty() && second.stdout.is_empty());
}

#[test]
fn unknown_keys_are_rejected() {
    let env = Env::new("learning_rate = 0.1");
    let out = env.pat(&["generate"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn missing_cache_names_the_generate_command() {
    let env = Env::new("");
    let out = env.pat(&["train"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("pat generate"), "{}", stderr(&out));
}

#[test]
fn dry_run_prints_the_plan_only() {
    let env = Env::new("");
    let out = ok(env.pat(&["train", "--dry-run"]));
    let plan = String::from_utf8(out.stdout).unwrap();
    assert!(plan.contains("max_iterations = 3"));
    assert!(plan.contains("# cache missing"));
    assert!(!env.path("runs").exists());
    assert!(!env.path("cache").exists());
}

#[test]
fn training_reruns_from_the_manifest_bit_identically() {
    let env = Env::new("");
    ok(env.pat(&["generate"]));
    let a = env.path("run-a");
    ok(env.pat(&["train", "--run-dir", a.to_str().unwrap()]));
    for f in ["manifest.toml", "metrics.csv", "timing.csv", "best.ckpt", "last.ckpt", "report.csv", "mapping_curve.csv"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let b = env.path("run-b");
    let out = Command::new(env!("CARGO_BIN_EXE_pat"))
        .arg("--config")
        .arg(a.join("manifest.toml"))
        .args(["train", "--run-dir", b.to_str().unwrap()])
        .output()
        .unwrap();
    ok(out);
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "metrics.csv"), read(&b, "metrics.csv"));
    assert_eq!(read(&a, "last.ckpt"), read(&b, "last.ckpt"));
    assert_eq!(read(&a, "manifest.toml"), read(&b, "manifest.toml"));
}

#[test]
fn zero_iteration_checkpoint_evaluates_to_unit_loss() {
    let env = Env::with_iterations(0, "");
    ok(env.pat(&["generate"]));
    let run = env.path("run");
    ok(env.pat(&["train", "--run-dir", run.to_str().unwrap()]));
    let ckpt = run.join("best.ckpt");
    let ev = env.path("eval");
    ok(env.pat(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--run-dir", ev.to_str().unwrap()]));
    assert_eq!(csv_field(&ev.join("eval.csv"), "loss_W"), 1.0);
    assert_eq!(csv_field(&ev.join("eval.csv"), "loss_f"), 1.0);

    let curves = env.path("curves");
    ok(env.pat(&["export-curves", "--checkpoint", ckpt.to_str().unwrap(), "--run-dir", curves.to_str().unwrap()]));
    let text = std::fs::read_to_string(curves.join("mapping_curve.csv")).unwrap();
    assert_eq!(text.lines().count(), 102);
    let first: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert_eq!(first[1] as f32, 0.7f32);
    assert_eq!(first[2], 0.7);
}

#[test]
fn runs_get_timestamped_directories() {
    let env = Env::with_iterations(0, "");
    ok(env.pat(&["generate"]));
    ok(env.pat(&["train"]));
    let runs: Vec<_> = std::fs::read_dir(env.path("runs")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].to_str().unwrap().to_string();
    assert!(name.contains("-train-"), "{name}");
    assert!(name.as_bytes()[..8].iter().all(u8::is_ascii_digit), "{name}");
}

#[test]
fn simulate_writes_deterministic_records() {
    let env = Env::new("");
    let input = env.path("phantoms.phan");
    let mut bump = vec![0.0f32; 256];
    bump[8 * 16 + 8] = 1.0;
    let phantoms = vec![Phantom::zeros(16), Phantom::new(16, bump).unwrap()];
    write_split(&input, &phantoms, 0, 0.0).unwrap();
    let (a, b) = (env.path("a.bnd"), env.path("b.bnd"));
    ok(env.pat(&["simulate", "--input", input.to_str().unwrap(), "--output", a.to_str().unwrap()]));
    ok(env.pat(&["simulate", "--input", input.to_str().unwrap(), "--output", b.to_str().unwrap()]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (header, records) = read_boundary(&a).unwrap();
    assert_eq!((header.n_det, header.n_time, header.count), (16, 16, 2));
    assert!(records[0].values().iter().all(|&v| v == 0.0));
    assert!(records[1].values().iter().any(|&v| v != 0.0));

    let wrong = env.path("wrong.phan");
    write_split(&wrong, &[Phantom::zeros(8)], 0, 0.0).unwrap();
    let out = env.pat(&["simulate", "--input", wrong.to_str().unwrap(), "--output", a.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("shape"), "{}", stderr(&out));
}

//! Small training fixtures and the end-to-end gradient oracle.

use pat_core::kspace::{KSpaceSolver, SimConfig, SimGrid};
use pat_core::models::{MappingConfig, Model, ModelConfig, UNetConfig, Variant, GROUP_MAPPING};
use pat_core::phantom::{build_dataset, DatasetSizes, Split, DEFAULT_JITTER};
use pat_core::trainer::{precompute, self_supervised_loss, loss_and_gradients, train, GammaCase, MetricsRecord, TrainConfig, TrainingData};
use pat_core::Real;
use rand::Rng;

use super::rng;

pub fn small_data<T: Real>(m: usize, gamma: GammaCase, seed: u64) -> TrainingData<T> {
    let sizes = DatasetSizes {
        train: 6,
        validation: 2,
        test: 2,
    };
    let ds = build_dataset(seed, sizes, m, DEFAULT_JITTER).unwrap();
    let grid = SimGrid::new(m, 2).unwrap();
    let sim = SimConfig::for_grid(&grid, gamma.max_speed_sq().sqrt()).unwrap();
    let [a, b, c] = precompute(&ds, gamma, grid, sim).unwrap();
    TrainingData::from_parts(
        grid,
        sim,
        gamma,
        [
            (ds.split(Split::Train).to_vec(), a),
            (ds.split(Split::Validation).to_vec(), b),
            (ds.split(Split::Test).to_vec(), c),
        ],
    )
    .unwrap()
}

pub fn small_model_config(m: usize, variant: Variant, gamma: GammaCase) -> ModelConfig {
    ModelConfig {
        m,
        variant,
        unet: UNetConfig {
            levels: 2,
            base_channels: 4,
        },
        mapping: MappingConfig::new(gamma.c0(), gamma.c1()),
    }
}

/// Metric stream of a short run at `m = 16`.
pub fn short_run(seed: u64, iterations: usize) -> Vec<MetricsRecord> {
    let gamma = GammaCase::Gamma1;
    let data = small_data::<f32>(16, gamma, 3);
    let model = Model::<f32>::new(small_model_config(16, Variant::Dense, gamma), seed).unwrap();
    let cfg = TrainConfig {
        m: 16,
        max_iterations: iterations,
        eval_interval: 2,
        seed,
        ..TrainConfig::default()
    };
    train(&cfg, model, &data, None, |_| {}).unwrap().metrics
}

/// Perturbs every parameter so no gradient vanishes structurally: the
/// linear maps get small entries, the U-Net and mapping weights fan-in-sized
/// noise, and the output bias lifts the reconstruction into `(0, 1)`.
pub fn generic_point(model: &mut Model<f64>, seed: u64) {
    let mut r = rng(seed);
    for p in model.params_mut().iter_mut() {
        let scale = match p.tensor.shape() {
            [_, _] if p.group == 0 => 0.02,
            _ if p.group == GROUP_MAPPING => 0.5,
            shape => 1.0 / (shape.iter().skip(1).product::<usize>().max(1) as f64).sqrt(),
        };
        p.tensor
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += r.random_range(-scale..scale));
        if p.name == "unet.head.bias" {
            p.tensor.data_mut()[0] = 0.4;
        }
    }
}

/// Per-group normwise relative error between the 32-bit tape gradient of the
/// self-supervised loss and central differences of the 64-bit loss, over
/// `samples` random coordinates per group.
pub fn end_to_end_gradcheck(seed: u64, samples: usize) -> [f64; 3] {
    let m = 16;
    let gamma = GammaCase::Gamma1;
    let data64 = small_data::<f64>(m, gamma, seed);
    let mut model64 = Model::<f64>::new(small_model_config(m, Variant::Dense, gamma), seed).unwrap();
    generic_point(&mut model64, seed + 1);
    let model32: Model<f32> = model64.cast();
    let solver64 = KSpaceSolver::<f64>::new(data64.grid, data64.config).unwrap();
    let solver32 = KSpaceSolver::<f32>::new(data64.grid, data64.config).unwrap();
    let batch64: Vec<_> = data64.train[..2].iter().map(|s| &s.g).collect();
    let g32: Vec<_> = batch64.iter().map(|g| g.cast::<f32>()).collect();
    let batch32: Vec<_> = g32.iter().collect();
    let (_, grads) = loss_and_gradients(&model32, &solver32, &batch32).unwrap();

    let mut r = rng(seed + 2);
    let mut errors = [0.0; 3];
    for (group, err) in errors.iter_mut().enumerate() {
        let members: Vec<usize> = model64
            .params()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.group == group)
            .map(|(i, _)| i)
            .collect();
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for _ in 0..samples {
            let pi = members[r.random_range(0..members.len())];
            let c = r.random_range(0..model64.params().iter().nth(pi).unwrap().tensor.len());
            let original = model64.params().iter().nth(pi).unwrap().tensor.data()[c];
            let h = 1e-6 * original.abs().max(1.0);
            let mut at = |x: f64| {
                model64.params_mut().iter_mut().nth(pi).unwrap().tensor.data_mut()[c] = x;
                self_supervised_loss(&model64, &solver64, &batch64).unwrap()
            };
            let fd = (at(original + h) - at(original - h)) / (2.0 * h);
            at(original);
            let an = grads[pi].data()[c] as f64;
            diff = diff.max((an - fd).abs());
            scale = scale.max(fd.abs());
        }
        *err = diff / scale;
    }
    errors
}

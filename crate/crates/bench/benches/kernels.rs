use std::hint::black_box;

use courtplan_core::adversary::{man_to_man_assignment, min_cost_assignment, Lineup};
use courtplan_core::diffusion::{make_schedule, Denoiser, ScheduleKind};
use courtplan_core::nn::layers::{Conv1d, ParamBuilder};
use courtplan_core::nn::ArchConfig;
use courtplan_core::planner::{guided_step, DEFAULT_GRAD_CLIP, DEFAULT_X0_BOUND};
use courtplan_core::value::ValueModel;
use courtplan_core::{NormalizationStats, FEATURE_DIM};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 64;

fn random_batch(rng: &mut ChaCha8Rng, b: usize, c: usize, len: usize) -> Array3<f64> {
    Array3::from_shape_fn((b, c, len), |_| rng.random_range(-1.0..1.0))
}

fn unit_stats() -> NormalizationStats {
    NormalizationStats::new(vec![-1.0; FEATURE_DIM], vec![1.0; FEATURE_DIM]).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pb = ParamBuilder::new(&mut rng);
    let layer = Conv1d::new(&mut pb, 32, 32, 5, 1, false);
    let params = pb.values;
    let x = random_batch(&mut rng, 8, 32, H);
    c.bench_function("conv1d_32x32_k5_len64_b8", |b| b.iter(|| black_box(layer.forward(&params, &x))));
}

fn denoiser_step(c: &mut Criterion) {
    let arch = ArchConfig::default();
    let sched = make_schedule(20, ScheduleKind::Cosine).unwrap();
    let d = Denoiser::new(&arch, H, sched.clone(), unit_stats(), 0).unwrap();
    let v = ValueModel::new(&arch, H, sched, unit_stats(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_batch(&mut rng, 8, FEATURE_DIM, H);
    let steps = vec![10; 8];
    c.bench_function("unet_forward_b8", |b| b.iter(|| black_box(d.predict_noise_batch(&x, &steps))));
    c.bench_function("guided_reverse_step_b8", |b| {
        b.iter_batched(
            || (0..8).map(ChaCha8Rng::seed_from_u64).collect::<Vec<_>>(),
            |mut rngs| {
                black_box(
                    guided_step(&d, Some((&v, 0.1, Some(DEFAULT_GRAD_CLIP))), Some(DEFAULT_X0_BOUND), &x, 10, &mut rngs)
                        .unwrap(),
                )
            },
            BatchSize::SmallInput,
        )
    });
}

fn assignment(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lineup = || -> Lineup { std::array::from_fn(|_| [rng.random_range(0.0..94.0), rng.random_range(0.0..50.0)]) };
    let (def, off) = (lineup(), lineup());
    let cost: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| ((i * 7 + j * 3) % 11) as f64).collect()).collect();
    c.bench_function("min_cost_assignment_5x5", |b| b.iter(|| black_box(min_cost_assignment(&cost))));
    c.bench_function("man_to_man_assignment", |b| b.iter(|| black_box(man_to_man_assignment(&def, &off))));
}

criterion_group!(benches, conv, denoiser_step, assignment);
criterion_main!(benches);

//! Learned return predictor and its input gradient.

use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::container::Container;
use crate::dataset::Dataset;
use crate::diffusion::{check_input, noised_batch, run_training, CheckpointMeta, NoiseSchedule, TrainConfig, Trained};
use crate::error::{Error, Result};
use crate::nn::{to_channels, ArchConfig, ValueNet};
use crate::normalize::NormalizationStats;
use crate::trajectory::{TrajectoryTensor, FEATURE_DIM, LAYOUT_VERSION};

pub const VALUE_ROLE: &str = "value";

/// Predicts the offense-perspective return of a (possibly noised) trajectory.
pub struct ValueModel {
    pub meta: CheckpointMeta,
    pub net: ValueNet,
    pub params: Vec<f64>,
    pub schedule: NoiseSchedule,
}

impl ValueModel {
    pub fn new(
        arch: &ArchConfig,
        horizon: usize,
        schedule: NoiseSchedule,
        stats: NormalizationStats,
        seed: u64,
    ) -> Result<Self> {
        let (net, params) = ValueNet::new(arch, FEATURE_DIM, horizon, seed)?;
        Ok(ValueModel {
            meta: CheckpointMeta {
                role: VALUE_ROLE.into(),
                arch: arch.clone(),
                horizon,
                schedule_kind: schedule.kind,
                n_steps: schedule.n,
                layout_version: LAYOUT_VERSION,
                stats,
                seed,
                steps_trained: 0,
            },
            net,
            params,
            schedule,
        })
    }

    pub fn horizon(&self) -> usize {
        self.meta.horizon
    }

    pub fn predict_return(&self, tau: &TrajectoryTensor, i: usize) -> Result<f64> {
        self.schedule.check_step(i)?;
        check_input(tau, &self.meta)?;
        let x = to_channels(&[tau.values().view()]);
        Ok(self.net.predict(&self.params, &x, &[i])[0])
    }

    /// Gradient of the predicted return with respect to every entry of `tau`.
    pub fn grad_return(&self, tau: &TrajectoryTensor, i: usize) -> Result<Array2<f64>> {
        self.schedule.check_step(i)?;
        check_input(tau, &self.meta)?;
        let x = to_channels(&[tau.values().view()]);
        let (_, g) = self.value_and_grad_batch(&x, &[i]);
        Ok(g.index_axis(Axis(0), 0).t().to_owned())
    }

    /// Predictions for a channel-first batch `[batch, features, horizon]`.
    pub fn predict_batch(&self, x: &Array3<f64>, steps: &[usize]) -> Array1<f64> {
        self.net.predict(&self.params, x, steps)
    }

    /// Predictions and input gradients for a channel-first batch.
    pub fn value_and_grad_batch(&self, x: &Array3<f64>, steps: &[usize]) -> (Array1<f64>, Array3<f64>) {
        let (y, cache) = self.net.forward(&self.params, x, steps);
        let mut scratch = vec![0.0; self.params.len()];
        let dx = self
            .net
            .backward(&self.params, &mut scratch, &cache, &Array1::ones(y.len()), true)
            .expect("input gradient requested");
        (y, dx)
    }

    pub fn to_container(&self) -> Result<Container> {
        self.meta.to_container(&self.params)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = CheckpointMeta::from_container(c, VALUE_ROLE)?;
        let (net, fresh) = ValueNet::new(&meta.arch, FEATURE_DIM, meta.horizon, 0)?;
        if fresh.len() != c.payload.len() {
            return Err(Error::Format(format!(
                "value model has {} weights, architecture needs {}",
                c.payload.len(),
                fresh.len()
            )));
        }
        let schedule = meta.schedule()?;
        Ok(ValueModel {
            meta,
            net,
            params: c.payload.clone(),
            schedule,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Fits the value model by mean squared error on noised dataset trajectories
/// with uniformly drawn step indices.
pub fn train_value(
    data: &Dataset,
    schedule: &NoiseSchedule,
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<Trained<ValueModel>> {
    train_value_with(data, schedule, arch, cfg, None)
}

fn train_value_with(
    data: &Dataset,
    schedule: &NoiseSchedule,
    arch: &ArchConfig,
    cfg: &TrainConfig,
    fixed_step: Option<usize>,
) -> Result<Trained<ValueModel>> {
    if data.is_empty() {
        return Err(Error::rejected("cannot train on an empty dataset"));
    }
    cfg.validate()?;
    let mut model = ValueModel::new(arch, data.horizon, schedule.clone(), data.stats.clone(), cfg.seed)?;
    let net = &model.net;
    let mut params = std::mem::take(&mut model.params);
    let (losses, diverged) = run_training(&mut params, cfg, "value", |p, g, rng: &mut ChaCha8Rng| {
        let (x, steps, idx) = match fixed_step {
            None => {
                let (x, steps, _, idx) = noised_batch(data, schedule, cfg.batch, rng);
                (x, steps, idx)
            }
            Some(i) => {
                let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..data.len())).collect();
                let views: Vec<_> = idx.iter().map(|&k| data.examples[k].tensor.values().view()).collect();
                (to_channels(&views), vec![i; cfg.batch], idx)
            }
        };
        let target = Array1::from_iter(idx.iter().map(|&k| data.examples[k].return_target));
        let (pred, cache) = net.forward(p, &x, &steps);
        let diff = &pred - &target;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        net.backward(p, g, &cache, &(diff * (2.0 / n)), false);
        loss
    });
    model.params = params;
    model.meta.steps_trained = losses.len() as u64;
    Ok(Trained {
        model,
        losses,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::toy_dataset;
    use crate::diffusion::{make_schedule, ScheduleKind};
    use rand::SeedableRng;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            base_width: 8,
            dim_mults: vec![1, 2],
            blocks_per_level: 1,
            kernel: 3,
            groups: 4,
        }
    }

    fn schedule() -> NoiseSchedule {
        make_schedule(5, ScheduleKind::Cosine).unwrap()
    }

    #[test]
    fn zero_init_head_predicts_zero_with_zero_gradient() {
        let data = toy_dataset(2, 8);
        let v = ValueModel::new(&tiny_arch(), 8, schedule(), data.stats.clone(), 0).unwrap();
        let t = &data.examples[1].tensor;
        assert_eq!(v.predict_return(t, 3).unwrap(), 0.0);
        let g = v.grad_return(t, 3).unwrap();
        assert_eq!(g.dim(), (8, FEATURE_DIM));
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn doubling_head_doubles_output() {
        let data = toy_dataset(2, 8);
        let mut v = ValueModel::new(&tiny_arch(), 8, schedule(), data.stats.clone(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for r in v.net.head_ranges() {
            for k in r {
                v.params[k] = rng.random_range(-0.1..0.1);
            }
        }
        let t = &data.examples[0].tensor;
        let a = v.predict_return(t, 1).unwrap();
        for r in v.net.head_ranges() {
            for k in r {
                v.params[k] *= 2.0;
            }
        }
        assert_eq!(v.predict_return(t, 1).unwrap(), 2.0 * a);
        assert_eq!(v.predict_return(t, 1).unwrap(), v.predict_return(t, 1).unwrap());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let data = toy_dataset(3, 8);
        let mut v = ValueModel::new(&tiny_arch(), 8, schedule(), data.stats.clone(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in v.params.iter_mut() {
            *p += rng.random_range(-0.05..0.05);
        }
        let t = data.examples[2].tensor.clone();
        let g = v.grad_return(&t, 2).unwrap();
        let h = 1e-4;
        for _ in 0..40 {
            let (r, c) = (rng.random_range(0..8), rng.random_range(0..FEATURE_DIM));
            let mut tp = t.clone();
            tp.values_mut()[[r, c]] += h;
            let mut tm = t.clone();
            tm.values_mut()[[r, c]] -= h;
            let fd = (v.predict_return(&tp, 2).unwrap() - v.predict_return(&tm, 2).unwrap()) / (2.0 * h);
            let rel = (fd - g[[r, c]]).abs() / fd.abs().max(g[[r, c]].abs()).max(1e-6);
            assert!(rel < 1e-3, "({r},{c}) fd {fd} analytic {}", g[[r, c]]);
        }
    }

    #[test]
    fn zero_targets_give_zero_initial_loss() {
        let mut data = toy_dataset(3, 8);
        data.examples.iter_mut().for_each(|e| e.return_target = 0.0);
        let cfg = TrainConfig {
            lr: 1e-3,
            batch: 3,
            steps: 1,
            ..TrainConfig::default()
        };
        let out = train_value(&data, &schedule(), &tiny_arch(), &cfg).unwrap();
        assert_eq!(out.losses[0], 0.0);
    }

    #[test]
    fn constant_targets_are_learned() {
        let mut data = toy_dataset(4, 8);
        data.examples.iter_mut().for_each(|e| e.return_target = 1.5);
        let cfg = TrainConfig {
            lr: 1e-2,
            batch: 4,
            steps: 300,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train_value(&data, &schedule(), &tiny_arch(), &cfg).unwrap();
        for e in &data.examples {
            for i in 0..5 {
                let p = out.model.predict_return(&e.tensor, i).unwrap();
                assert!((p - 1.5).abs() < 0.05, "step {i}: {p}");
            }
        }
    }

    #[test]
    fn overfits_eight_examples_at_step_zero() {
        let data = toy_dataset(8, 8);
        let cfg = TrainConfig {
            lr: 3e-3,
            batch: 8,
            steps: 600,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train_value_with(&data, &schedule(), &tiny_arch(), &cfg, Some(0)).unwrap();
        for e in &data.examples {
            let p = out.model.predict_return(&e.tensor, 0).unwrap();
            assert!((p - e.return_target).abs() < 0.1, "{} vs {}", p, e.return_target);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_identical() {
        let data = toy_dataset(2, 8);
        let v = ValueModel::new(&tiny_arch(), 8, schedule(), data.stats.clone(), 5).unwrap();
        let bytes = v.to_container().unwrap().to_bytes();
        let back = ValueModel::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_container().unwrap().to_bytes(), bytes);
        let c = Container::from_bytes(&bytes).unwrap();
        assert!(crate::diffusion::Denoiser::from_container(&c).is_err());
    }
}

//! Forward noising, the noise-prediction model and its training loop.

mod schedule;

use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind};

use crate::container::Container;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{clip_norm, to_channels, Adam, ArchConfig, UNet};
use crate::normalize::NormalizationStats;
use crate::trajectory::{TrajectoryTensor, FEATURE_DIM, LAYOUT_VERSION};

/// Everything besides weights that a checkpoint must agree on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub role: String,
    pub arch: ArchConfig,
    pub horizon: usize,
    pub schedule_kind: ScheduleKind,
    pub n_steps: usize,
    pub layout_version: u32,
    pub stats: NormalizationStats,
    pub seed: u64,
    pub steps_trained: u64,
}

impl CheckpointMeta {
    pub fn stats_fingerprint(&self) -> String {
        format!("{:016x}", self.stats.fingerprint())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.n_steps, self.schedule_kind)
    }

    pub(crate) fn to_container(&self, params: &[f64]) -> Result<Container> {
        let mut c = Container::new(self.role.clone())
            .with("meta", serde_json::to_value(self)?)
            .with("stats_fingerprint", self.stats_fingerprint());
        c.payload = params.to_vec();
        Ok(c)
    }

    pub(crate) fn from_container(c: &Container, role: &str) -> Result<Self> {
        c.expect_kind(role)?;
        let meta: CheckpointMeta = c.get_as("meta")?;
        if meta.layout_version != LAYOUT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint layout version {} but this build uses {LAYOUT_VERSION}",
                meta.layout_version
            )));
        }
        Ok(meta)
    }
}

/// Rejects checkpoint pairs that were trained on different data layouts.
pub fn check_compatible(a: &CheckpointMeta, b: &CheckpointMeta) -> Result<()> {
    let mismatch = |what: &str, x: String, y: String| {
        Err(Error::Incompatible(format!("{what} differs: {} has {x}, {} has {y}", a.role, b.role)))
    };
    if a.stats_fingerprint() != b.stats_fingerprint() {
        return mismatch("normalization stats", a.stats_fingerprint(), b.stats_fingerprint());
    }
    if a.horizon != b.horizon {
        return mismatch("horizon", a.horizon.to_string(), b.horizon.to_string());
    }
    if a.n_steps != b.n_steps || a.schedule_kind != b.schedule_kind {
        return mismatch(
            "noise schedule",
            format!("{:?}/{}", a.schedule_kind, a.n_steps),
            format!("{:?}/{}", b.schedule_kind, b.n_steps),
        );
    }
    if a.layout_version != b.layout_version {
        return mismatch("layout version", a.layout_version.to_string(), b.layout_version.to_string());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub log_every: u64,
    /// Cosine-anneal the learning rate to zero over `steps`.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-5,
            batch: 512,
            steps: 245_000,
            seed: 0,
            grad_clip: None,
            log_every: 1000,
            cosine_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::rejected(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::rejected("batch must be at least 1"));
        }
        Ok(())
    }
}

/// A training result. When `diverged` is set, `model` holds the last
/// parameters that produced a finite loss.
pub struct Trained<M> {
    pub model: M,
    pub losses: Vec<f64>,
    pub diverged: Option<u64>,
}

/// Learning rate at `step` of `total` under cosine annealing from `base`.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    let frac = step as f64 / total.max(1) as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Shared optimisation loop. `step_fn` fills the gradient for one batch and
/// returns its loss.
pub(crate) fn run_training<F>(params: &mut Vec<f64>, cfg: &TrainConfig, label: &str, mut step_fn: F) -> (Vec<f64>, Option<u64>)
where
    F: FnMut(&[f64], &mut [f64], &mut ChaCha8Rng) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(params.len(), cfg.lr);
    let mut grad = vec![0.0; params.len()];
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = step_fn(params, &mut grad, &mut rng);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            log::error!("{label}: non-finite loss at step {step}; keeping previous parameters");
            return (losses, Some(step));
        }
        losses.push(loss);
        if let Some(c) = cfg.grad_clip {
            clip_norm(&mut grad, c);
        }
        if cfg.cosine_decay {
            opt.lr = cosine_lr(cfg.lr, step, cfg.steps);
        }
        let backup = params.clone();
        opt.update(params, &grad);
        if params.iter().any(|p| !p.is_finite()) {
            *params = backup;
            log::error!("{label}: parameters became non-finite at step {step}");
            return (losses, Some(step));
        }
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            log::info!("{label}: step {} loss {:.6}", step + 1, loss);
        }
    }
    (losses, None)
}

/// Mean squared error over every element.
pub fn denoising_loss(pred: &Array3<f64>, target: &Array3<f64>) -> f64 {
    let n = pred.len() as f64;
    pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

/// Draws a training batch: noised inputs, step indices, and the noise.
pub(crate) fn noised_batch(
    data: &Dataset,
    schedule: &NoiseSchedule,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> (Array3<f64>, Vec<usize>, Array3<f64>, Vec<usize>) {
    let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..data.len())).collect();
    let steps: Vec<usize> = (0..batch).map(|_| rng.random_range(0..schedule.n)).collect();
    let views: Vec<_> = idx.iter().map(|&k| data.examples[k].tensor.values().view()).collect();
    let x0 = to_channels(&views);
    let eps = Array3::from_shape_simple_fn(x0.dim(), || rng.sample::<f64, _>(StandardNormal));
    let mut x = x0;
    for (b, &i) in steps.iter().enumerate() {
        let (a, s) = (schedule.alpha_bar[i].sqrt(), (1.0 - schedule.alpha_bar[i]).sqrt());
        let mut xb = x.index_axis_mut(Axis(0), b);
        xb.zip_mut_with(&eps.index_axis(Axis(0), b), |v, e| *v = a * *v + s * e);
    }
    (x, steps, eps, idx)
}

/// The trained noise model together with its schedule and data stats.
pub struct Denoiser {
    pub meta: CheckpointMeta,
    pub net: UNet,
    pub params: Vec<f64>,
    pub schedule: NoiseSchedule,
}

pub const DENOISER_ROLE: &str = "denoiser";

impl Denoiser {
    pub fn new(
        arch: &ArchConfig,
        horizon: usize,
        schedule: NoiseSchedule,
        stats: NormalizationStats,
        seed: u64,
    ) -> Result<Self> {
        let (net, params) = UNet::new(arch, FEATURE_DIM, horizon, seed)?;
        Ok(Denoiser {
            meta: CheckpointMeta {
                role: DENOISER_ROLE.into(),
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

    pub fn stats(&self) -> &NormalizationStats {
        &self.meta.stats
    }

    /// Noise estimate for one normalized trajectory.
    pub fn predict_noise(&self, tau: &TrajectoryTensor, i: usize) -> Result<Array2<f64>> {
        self.schedule.check_step(i)?;
        check_input(tau, &self.meta)?;
        let x = to_channels(&[tau.values().view()]);
        let y = self.net.predict(&self.params, &x, &[i]);
        Ok(y.index_axis(Axis(0), 0).t().to_owned())
    }

    /// Noise estimates for a channel-first batch `[batch, features, horizon]`.
    pub fn predict_noise_batch(&self, x: &Array3<f64>, steps: &[usize]) -> Array3<f64> {
        self.net.predict(&self.params, x, steps)
    }

    pub fn to_container(&self) -> Result<Container> {
        self.meta.to_container(&self.params)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = CheckpointMeta::from_container(c, DENOISER_ROLE)?;
        let (net, fresh) = UNet::new(&meta.arch, FEATURE_DIM, meta.horizon, 0)?;
        if fresh.len() != c.payload.len() {
            return Err(Error::Format(format!(
                "denoiser has {} weights, architecture needs {}",
                c.payload.len(),
                fresh.len()
            )));
        }
        let schedule = meta.schedule()?;
        Ok(Denoiser {
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

pub(crate) fn check_input(tau: &TrajectoryTensor, meta: &CheckpointMeta) -> Result<()> {
    if tau.horizon() != meta.horizon {
        return Err(Error::rejected(format!(
            "trajectory horizon {} but model expects {}",
            tau.horizon(),
            meta.horizon
        )));
    }
    if tau.space() != meta.stats.space() {
        return Err(Error::rejected(format!(
            "trajectory is in {:?}, model expects normalized stats {}",
            tau.space(),
            meta.stats_fingerprint()
        )));
    }
    Ok(())
}

/// Fits the noise model on a normalized dataset.
pub fn train_diffusion(
    data: &Dataset,
    schedule: &NoiseSchedule,
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<Trained<Denoiser>> {
    if data.is_empty() {
        return Err(Error::rejected("cannot train on an empty dataset"));
    }
    cfg.validate()?;
    let mut model = Denoiser::new(arch, data.horizon, schedule.clone(), data.stats.clone(), cfg.seed)?;
    let net = &model.net;
    let mut params = std::mem::take(&mut model.params);
    let (losses, diverged) = run_training(&mut params, cfg, "diffusion", |p, g, rng| {
        let (x, steps, eps, _) = noised_batch(data, schedule, cfg.batch, rng);
        let (pred, cache) = net.forward(p, &x, &steps);
        let loss = denoising_loss(&pred, &eps);
        let scale = 2.0 / pred.len() as f64;
        let dy = (&pred - &eps) * scale;
        net.backward(p, g, &cache, &dy);
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

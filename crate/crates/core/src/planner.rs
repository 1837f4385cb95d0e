//! Value-guided reverse sampling with initial-state conditioning.

use ndarray::{s, Array, Array1, Array2, Array3, Axis, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::diffusion::{check_compatible, Denoiser};
use crate::error::{Error, Result};
use crate::normalize::{denormalize, NormalizationStats};
use crate::trajectory::{Space, State, TrajectoryTensor, ACTION_DIM, FEATURE_DIM, STATE_DIM};
use crate::value::ValueModel;

pub const DEFAULT_GRAD_CLIP: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub alpha: f64,
    pub n_steps: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Raw (court-unit) state the plan starts from.
    #[serde(with = "state_serde")]
    pub initial_state: State,
    pub batch: usize,
    /// Per-trajectory L2 cap on the value gradient; `None` disables it.
    pub grad_clip: Option<f64>,
    /// Bound on the clean-trajectory estimate inside each reverse step
    /// (normalized units); `None` uses the unclamped posterior mean.
    #[serde(default = "default_x0_bound")]
    pub x0_bound: Option<f64>,
}

pub const DEFAULT_X0_BOUND: f64 = 1.0;

fn default_x0_bound() -> Option<f64> {
    Some(DEFAULT_X0_BOUND)
}

mod state_serde {
    use super::{State, STATE_DIM};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: &State, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_seq(s.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<State, D::Error> {
        let v = Vec::<f64>::deserialize(de)?;
        v.try_into()
            .map_err(|v: Vec<f64>| serde::de::Error::custom(format!("expected {STATE_DIM} values, got {}", v.len())))
    }
}

impl PlanConfig {
    pub fn new(denoiser: &Denoiser, initial_state: State) -> Self {
        PlanConfig {
            alpha: 0.0,
            n_steps: denoiser.schedule.n,
            horizon: denoiser.horizon(),
            seed: 0,
            initial_state,
            batch: 1,
            grad_clip: Some(DEFAULT_GRAD_CLIP),
            x0_bound: default_x0_bound(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::rejected(format!("alpha must be finite and nonnegative, got {}", self.alpha)));
        }
        if self.batch == 0 {
            return Err(Error::rejected("batch must be at least 1"));
        }
        if self.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::rejected("initial state has non-finite entries"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::rejected(format!("gradient clip must be positive, got {c}")));
            }
        }
        if let Some(b) = self.x0_bound {
            if !(b > 0.0) {
                return Err(Error::rejected(format!("x0 bound must be positive, got {b}")));
            }
        }
        Ok(())
    }
}

/// `mu + alpha * var * g`, elementwise.
pub fn perturbed_mean<D: Dimension>(mu: &Array<f64, D>, var: f64, g: &Array<f64, D>, alpha: f64) -> Array<f64, D> {
    let scale = alpha * var;
    let mut out = mu.clone();
    out.zip_mut_with(g, |m, gv| *m += scale * gv);
    out
}

/// Overwrites row 0's state columns with `s`, which must live in the same
/// space as `tau`.
pub fn condition_initial_state(tau: &mut TrajectoryTensor, s: &State, s_space: Space) -> Result<()> {
    if tau.space() != s_space {
        return Err(Error::rejected(format!(
            "conditioning state is in {s_space:?} but trajectory is in {:?}",
            tau.space()
        )));
    }
    let mut row = tau.values_mut().row_mut(0);
    for (j, v) in s.iter().enumerate() {
        row[j] = *v;
    }
    Ok(())
}

fn condition_batch(x: &mut Array3<f64>, states: &[State]) {
    for (b, s) in states.iter().enumerate() {
        for (j, v) in s.iter().enumerate() {
            x[[b, j, 0]] = *v;
        }
    }
}

fn draw_noise(rng: &mut ChaCha8Rng, h: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((h, FEATURE_DIM), || rng.sample::<f64, _>(StandardNormal))
}

fn clip_rows(g: &mut Array3<f64>, max_norm: f64) {
    for mut gb in g.axis_iter_mut(Axis(0)) {
        let n = gb.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > max_norm {
            gb *= max_norm / n;
        }
    }
}

/// One reverse step for a channel-first batch. With `guide` absent the mean is
/// used as-is; otherwise it is shifted by `alpha * var_i * grad` of the value
/// evaluated at the mean. Noise is added for `i > 0` only. `x0_bound`
/// selects the clamped posterior mean.
pub fn guided_step(
    denoiser: &Denoiser,
    guide: Option<(&ValueModel, f64, Option<f64>)>,
    x0_bound: Option<f64>,
    x: &Array3<f64>,
    i: usize,
    rngs: &mut [ChaCha8Rng],
) -> Result<Array3<f64>> {
    let schedule = &denoiser.schedule;
    schedule.check_step(i)?;
    let nb = x.dim().0;
    let steps = vec![i; nb];
    let eps = denoiser.predict_noise_batch(x, &steps);
    let mu = match x0_bound {
        Some(b) => schedule.posterior_mean_clamped(x, &eps, i, b)?,
        None => schedule.posterior_mean(x, &eps, i)?,
    };
    let var = schedule.posterior_var[i];
    let mut mean = match guide {
        None => mu,
        Some((value, alpha, clip)) => {
            let (_, mut g) = value.value_and_grad_batch(&mu, &steps);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite value gradient at reverse step {i}")));
            }
            if let Some(c) = clip {
                clip_rows(&mut g, c);
            }
            perturbed_mean(&mu, var, &g, alpha)
        }
    };
    if i > 0 {
        let sd = var.sqrt();
        for (b, rng) in rngs.iter_mut().enumerate() {
            let z = draw_noise(rng, x.dim().2);
            let mut mb = mean.index_axis_mut(Axis(0), b);
            mb.zip_mut_with(&z.t(), |m, zv| *m += sd * zv);
        }
    }
    Ok(mean)
}

/// Result of one sampling call.
#[derive(Debug, Clone)]
pub struct Plan {
    pub normalized: Vec<TrajectoryTensor>,
    pub trajectories: Vec<TrajectoryTensor>,
    /// Predicted return of each final trajectory at step 0, when a value
    /// model was supplied.
    pub returns: Option<Vec<f64>>,
}

fn element_rngs(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n)
        .map(|b| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(b as u64);
            r
        })
        .collect()
}

/// Core sampler: one chain per entry of `starts` (raw states).
fn sample_chains(
    denoiser: &Denoiser,
    guide: Option<(&ValueModel, f64, Option<f64>)>,
    seed: u64,
    x0_bound: Option<f64>,
    starts: &[State],
) -> Result<Plan> {
    let stats: &NormalizationStats = denoiser.stats();
    let h = denoiser.horizon();
    let nb = starts.len();
    let conds: Vec<State> = starts.iter().map(|s| stats.normalize_state(s)).collect();
    let mut rngs = element_rngs(seed, nb);
    let mut x = Array3::<f64>::zeros((nb, FEATURE_DIM, h));
    for (b, rng) in rngs.iter_mut().enumerate() {
        x.index_axis_mut(Axis(0), b).assign(&draw_noise(rng, h).t());
    }
    condition_batch(&mut x, &conds);
    for i in (0..denoiser.schedule.n).rev() {
        x = guided_step(denoiser, guide, x0_bound, &x, i, &mut rngs)?;
        condition_batch(&mut x, &conds);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at reverse step {i}")));
        }
    }
    let returns = guide.map(|(v, _, _)| v.predict_batch(&x, &vec![0; nb]).to_vec());
    let mut normalized = Vec::with_capacity(nb);
    let mut trajectories = Vec::with_capacity(nb);
    for b in 0..nb {
        let t = TrajectoryTensor::new(x.index_axis(Axis(0), b).t().to_owned(), h, stats.space())?;
        trajectories.push(denormalize(&t, stats)?);
        normalized.push(t);
    }
    Ok(Plan {
        normalized,
        trajectories,
        returns,
    })
}

fn check_config(denoiser: &Denoiser, value: Option<&ValueModel>, cfg: &PlanConfig) -> Result<()> {
    cfg.validate()?;
    if let Some(v) = value {
        check_compatible(&denoiser.meta, &v.meta)?;
    }
    if cfg.horizon != denoiser.horizon() || cfg.n_steps != denoiser.schedule.n {
        return Err(Error::Incompatible(format!(
            "plan asks for horizon {} / {} steps, denoiser has {} / {}",
            cfg.horizon,
            cfg.n_steps,
            denoiser.horizon(),
            denoiser.schedule.n
        )));
    }
    Ok(())
}

/// Guided planning from `cfg.initial_state`, `cfg.batch` chains.
pub fn plan(denoiser: &Denoiser, value: &ValueModel, cfg: &PlanConfig) -> Result<Plan> {
    plan_from(denoiser, value, cfg, &vec![cfg.initial_state; cfg.batch])
}

/// Guided planning with one chain per start state (`cfg.initial_state` and
/// `cfg.batch` are ignored).
pub fn plan_from(denoiser: &Denoiser, value: &ValueModel, cfg: &PlanConfig, starts: &[State]) -> Result<Plan> {
    check_config(denoiser, Some(value), cfg)?;
    if starts.is_empty() {
        return Err(Error::rejected("no start states"));
    }
    sample_chains(denoiser, Some((value, cfg.alpha, cfg.grad_clip)), cfg.seed, cfg.x0_bound, starts)
}

/// Plain reverse sampling without any value model.
pub fn sample_unguided(denoiser: &Denoiser, cfg: &PlanConfig) -> Result<Plan> {
    check_config(denoiser, None, cfg)?;
    sample_chains(denoiser, None, cfg.seed, cfg.x0_bound, &vec![cfg.initial_state; cfg.batch])
}

/// Executed states and actions of a receding-horizon run.
#[derive(Debug, Clone)]
pub struct Executed {
    pub trajectory: TrajectoryTensor,
    pub plan_calls: usize,
}

/// Plans, executes the best plan's first action through `env_step`, and
/// repeats `steps` times. Each round uses seed `cfg.seed + round`.
pub fn receding_horizon<F>(
    denoiser: &Denoiser,
    value: &ValueModel,
    cfg: &PlanConfig,
    mut env_step: F,
    steps: usize,
) -> Result<Executed>
where
    F: FnMut(&State, &[f64; ACTION_DIM]) -> Result<State>,
{
    if steps == 0 {
        return Err(Error::rejected("receding horizon needs at least one step"));
    }
    let mut state = cfg.initial_state;
    let mut rows = Array2::<f64>::zeros((steps, FEATURE_DIM));
    for t in 0..steps {
        let round = PlanConfig {
            seed: cfg.seed.wrapping_add(t as u64),
            initial_state: state,
            ..cfg.clone()
        };
        let p = plan(denoiser, value, &round)?;
        let returns = p.returns.as_ref().expect("guided plans carry returns");
        let best = (0..returns.len())
            .max_by(|&a, &b| returns[a].total_cmp(&returns[b]).then(b.cmp(&a)))
            .expect("batch is nonempty");
        let chosen = &p.trajectories[best];
        let mut action = [0.0; ACTION_DIM];
        for (j, a) in action.iter_mut().enumerate() {
            *a = chosen.values()[[0, STATE_DIM + j]];
        }
        rows.slice_mut(s![t, ..STATE_DIM]).assign(&Array1::from(state.to_vec()));
        rows.slice_mut(s![t, STATE_DIM..]).assign(&Array1::from(action.to_vec()));
        state = env_step(&state, &action).map_err(|e| Error::rejected(format!("environment step {t}: {e}")))?;
    }
    Ok(Executed {
        trajectory: TrajectoryTensor::new(rows, steps, Space::Raw)?,
        plan_calls: steps,
    })
}

pub const PLAN_KIND: &str = "plan";

/// Packs raw trajectories, returns and provenance into a container.
pub fn plan_to_container(
    trajectories: &[TrajectoryTensor],
    returns: &[f64],
    config: serde_json::Value,
    fingerprints: serde_json::Value,
) -> Result<Container> {
    let h = trajectories.first().map(|t| t.horizon()).unwrap_or(0);
    if trajectories.iter().any(|t| t.horizon() != h || t.is_normalized()) {
        return Err(Error::rejected("plan trajectories must be raw and share one horizon"));
    }
    let mut c = Container::new(PLAN_KIND)
        .with("count", trajectories.len() as u64)
        .with("horizon", h as u64)
        .with("features", FEATURE_DIM as u64)
        .with("returns", serde_json::to_value(returns)?)
        .with("config", config)
        .with("fingerprints", fingerprints);
    for t in trajectories {
        c.payload.extend(t.values().iter());
    }
    Ok(c)
}

/// Trajectories and returns stored by [`plan_to_container`].
pub fn plan_from_container(c: &Container) -> Result<(Vec<TrajectoryTensor>, Vec<f64>)> {
    c.expect_kind(PLAN_KIND)?;
    let n = c.get_u64("count")? as usize;
    let h = c.get_u64("horizon")? as usize;
    if c.get_u64("features")? as usize != FEATURE_DIM || c.payload.len() != n * h * FEATURE_DIM {
        return Err(Error::Format("plan payload size mismatch".into()));
    }
    let returns: Vec<f64> = c.get_as("returns")?;
    let trajs = c
        .payload
        .chunks_exact(h * FEATURE_DIM)
        .map(|chunk| {
            let v = Array2::from_shape_vec((h, FEATURE_DIM), chunk.to_vec()).expect("chunk size");
            TrajectoryTensor::new(v, h, Space::Raw)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((trajs, returns))
}

//! Synthetic corpora, baselines and return-based evaluation.

mod synthetic;

pub use synthetic::{
    generate_synthetic, read_sidecar, write_sidecar, write_synthetic, OffenseScript, SidecarRow, SyntheticGame,
    SyntheticOutput, SyntheticSpec,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::court::{CourtSpec, Frame, FRAME_RATE};
use crate::dataset::{trajectory_from_states, Dataset};
use crate::diffusion::{check_compatible, Denoiser};
use crate::error::{Error, Result};
use crate::nn::to_channels;
use crate::normalize::{denormalize, normalize};
use crate::planner::{plan_from, PlanConfig};
use crate::trajectory::{state_column, state_from_frame, Axis, Object, State, TrajectoryTensor, ACTION_DIM, N_OBJECTS};
use crate::value::ValueModel;

/// Random-walk baseline from a tracking frame: every object takes independent
/// Gaussian steps in x and y (the ball also in z), clamped to the court.
pub fn random_walk(
    initial: &Frame,
    offense_team_id: i64,
    h: usize,
    seed: u64,
    step_std_ft: f64,
    court: &CourtSpec,
) -> Result<TrajectoryTensor> {
    initial.validate()?;
    let s = state_from_frame(initial, offense_team_id)?;
    random_walk_from_state(&s, h, seed, step_std_ft, court)
}

pub fn random_walk_from_state(
    initial: &State,
    h: usize,
    seed: u64,
    step_std_ft: f64,
    court: &CourtSpec,
) -> Result<TrajectoryTensor> {
    if !(step_std_ft >= 0.0 && step_std_ft.is_finite()) {
        return Err(Error::rejected(format!("step_std_ft must be finite and >= 0, got {step_std_ft}")));
    }
    let steps = random_walk_states(initial, h, seed, step_std_ft, court)?;
    trajectory_from_states(&steps, h)
}

fn random_walk_states(initial: &State, h: usize, seed: u64, std: f64, court: &CourtSpec) -> Result<Vec<State>> {
    if h < 1 {
        return Err(Error::rejected("horizon must be at least 1"));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::rejected(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = *initial;
    clamp_state(&mut s, court);
    let mut out = Vec::with_capacity(h);
    out.push(s);
    for _ in 1..h {
        for k in 0..N_OBJECTS {
            let obj = Object::from_index(k).expect("object index");
            let c = state_column(obj, Axis::X);
            let dims = if obj == Object::Ball { 3 } else { 2 };
            for d in 0..dims {
                s[c + d] += normal.sample(&mut rng);
            }
        }
        clamp_state(&mut s, court);
        out.push(s);
    }
    Ok(out)
}

fn clamp_state(s: &mut State, court: &CourtSpec) {
    for obj in Object::all() {
        let c = state_column(obj, Axis::X);
        let p = court.clamp([s[c], s[c + 1], s[c + 2]]);
        s[c..c + 3].copy_from_slice(&p);
    }
}

/// Environment step that integrates the chosen velocities over one frame and
/// clamps the result to the court.
pub fn kinematic_step(court: CourtSpec) -> impl Fn(&State, &[f64; ACTION_DIM]) -> Result<State> {
    move |s, a| {
        let mut next = *s;
        for (n, v) in next.iter_mut().zip(a) {
            *n += v / FRAME_RATE;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite state after kinematic step".into()));
        }
        clamp_state(&mut next, &court);
        Ok(next)
    }
}

/// Fraction of position entries (11 objects × 3 axes per row) outside the court.
pub fn out_of_bounds_rate(raw: &TrajectoryTensor, court: &CourtSpec) -> f64 {
    let v = raw.values();
    let mut outside = 0usize;
    let mut total = 0usize;
    let bounds = [court.length_ft, court.width_ft, court.max_height_ft];
    for t in 0..v.nrows() {
        for obj in Object::all() {
            let c = state_column(obj, Axis::X);
            for (d, hi) in bounds.iter().enumerate() {
                let x = v[[t, c + d]];
                total += 1;
                if !(0.0..=*hi).contains(&x) {
                    outside += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        outside as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean predicted return of each run.
    pub returns: Vec<f64>,
    pub avg: f64,
    pub max: f64,
    pub n_runs: usize,
    /// Out-of-bounds rate of each run.
    pub oob_rates: Vec<f64>,
    pub out_of_bounds_rate: f64,
    /// Standard error of `avg` across runs (0 for a single run).
    pub std_error: f64,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn from_runs(returns: Vec<f64>, oob_rates: Vec<f64>, config_fingerprint: String) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::rejected("evaluation needs at least one run"));
        }
        if returns.len() != oob_rates.len() {
            return Err(Error::rejected("one out-of-bounds rate per run required"));
        }
        let n = returns.len() as f64;
        let avg = returns.iter().sum::<f64>() / n;
        let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let std_error = if returns.len() > 1 {
            (returns.iter().map(|r| (r - avg).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        let out_of_bounds_rate = oob_rates.iter().sum::<f64>() / n;
        Ok(EvalReport {
            n_runs: returns.len(),
            returns,
            avg,
            max,
            oob_rates,
            out_of_bounds_rate,
            std_error,
            config_fingerprint,
        })
    }
}

/// Mean value-model return at step 0 of each trajectory, for raw trajectories
/// of the value model's horizon.
pub fn predicted_returns(value: &ValueModel, raw: &[TrajectoryTensor]) -> Result<Vec<f64>> {
    let mut normed = Vec::with_capacity(raw.len());
    for (k, t) in raw.iter().enumerate() {
        if t.horizon() != value.horizon() {
            return Err(Error::Incompatible(format!(
                "trajectory {k} has horizon {}, value model expects {}",
                t.horizon(),
                value.horizon()
            )));
        }
        normed.push(normalize(t, &value.meta.stats)?);
    }
    let mut out = Vec::with_capacity(raw.len());
    for chunk in normed.chunks(64) {
        let views: Vec<_> = chunk.iter().map(|t| t.values().view()).collect();
        let x = to_channels(&views);
        out.extend(value.predict_batch(&x, &vec![0; chunk.len()]).iter());
    }
    Ok(out)
}

/// Scores each run (a set of raw trajectories) by its mean predicted return.
pub fn evaluate(
    runs: &[Vec<TrajectoryTensor>],
    value: &ValueModel,
    court: &CourtSpec,
    config_fingerprint: String,
) -> Result<EvalReport> {
    let mut returns = Vec::with_capacity(runs.len());
    let mut oob = Vec::with_capacity(runs.len());
    for (r, run) in runs.iter().enumerate() {
        if run.is_empty() {
            return Err(Error::rejected(format!("run {r} has no trajectories")));
        }
        let rs = predicted_returns(value, run)?;
        returns.push(rs.iter().sum::<f64>() / rs.len() as f64);
        oob.push(run.iter().map(|t| out_of_bounds_rate(t, court)).sum::<f64>() / run.len() as f64);
    }
    EvalReport::from_runs(returns, oob, config_fingerprint)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub n_runs: usize,
    /// Run `r` plans with seed `seed + r` for every alpha.
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub x0_bound: Option<f64>,
    pub court: CourtSpec,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: vec![0.0, 0.01, 0.1, 1.0, 10.0],
            n_runs: 5,
            seed: 0,
            grad_clip: Some(crate::planner::DEFAULT_GRAD_CLIP),
            x0_bound: Some(crate::planner::DEFAULT_X0_BOUND),
            court: CourtSpec::default(),
        }
    }
}

impl SweepConfig {
    pub fn fingerprint(&self) -> String {
        fingerprint_json(&serde_json::to_value(self).expect("sweep config serializes"))
    }
}

pub(crate) fn fingerprint_json(v: &serde_json::Value) -> String {
    hex::encode(&Sha256::digest(v.to_string().as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub report: EvalReport,
}

/// Plans one chain per start state for every alpha and run, sharing seeds
/// across alphas, and scores the plans with `value`.
pub fn run_alpha_sweep(
    denoiser: &Denoiser,
    value: &ValueModel,
    starts: &[State],
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if cfg.alphas.is_empty() {
        return Err(Error::rejected("alpha sweep needs at least one alpha"));
    }
    if cfg.n_runs == 0 {
        return Err(Error::rejected("alpha sweep needs at least one run"));
    }
    check_compatible(&denoiser.meta, &value.meta)?;
    let fp = cfg.fingerprint();
    let mut rows = Vec::with_capacity(cfg.alphas.len());
    for &alpha in &cfg.alphas {
        let mut runs = Vec::with_capacity(cfg.n_runs);
        for r in 0..cfg.n_runs {
            let pc = PlanConfig {
                alpha,
                seed: cfg.seed.wrapping_add(r as u64),
                grad_clip: cfg.grad_clip,
                x0_bound: cfg.x0_bound,
                batch: starts.len().max(1),
                ..PlanConfig::new(denoiser, starts.first().copied().unwrap_or([0.0; crate::STATE_DIM]))
            };
            let plan = plan_from(denoiser, value, &pc, starts)?;
            runs.push(plan.trajectories);
        }
        rows.push(SweepRow {
            alpha,
            report: evaluate(&runs, value, &cfg.court, fp.clone())?,
        });
    }
    Ok(rows)
}

/// Result of checking that AVG grows along a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    /// Adjacent pairs `(k, k+1)` where AVG decreased.
    pub inversions: Vec<usize>,
    /// Whether every inversion is within one joint standard error.
    pub inversions_within_error: bool,
    pub holds: bool,
}

/// Nondecreasing AVG allowing at most one adjacent inversion no larger than
/// the joint standard error `sqrt(se_a^2 + se_b^2)`.
pub fn check_trend(reports: &[EvalReport]) -> TrendCheck {
    let mut inversions = Vec::new();
    let mut within = true;
    for (k, w) in reports.windows(2).enumerate() {
        let drop = w[0].avg - w[1].avg;
        if drop > 0.0 {
            inversions.push(k);
            let joint = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            within &= drop <= joint;
        }
    }
    TrendCheck {
        holds: inversions.len() <= 1 && within,
        inversions,
        inversions_within_error: within,
    }
}

/// Row-0 raw states of `n` dataset examples spread evenly over the dataset.
pub fn start_states(data: &Dataset, n: usize) -> Result<Vec<State>> {
    if data.is_empty() || n == 0 {
        return Err(Error::rejected("need a nonempty dataset and at least one start"));
    }
    (0..n)
        .map(|k| {
            let idx = k * data.len() / n;
            Ok(denormalize(&data.examples[idx].tensor, &data.stats)?.state(0))
        })
        .collect()
}

/// The dataset's own trajectories scored as a single run.
pub fn ground_truth_report(value: &ValueModel, data: &Dataset, court: &CourtSpec, fp: String) -> Result<EvalReport> {
    let raw = data
        .examples
        .iter()
        .map(|e| denormalize(&e.tensor, &data.stats))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&[raw], value, court, fp)
}

/// Random walks from `starts`; run `r` uses seeds `seed + r * starts.len() + k`.
pub fn random_walk_report(
    value: &ValueModel,
    starts: &[State],
    n_runs: usize,
    seed: u64,
    step_std_ft: f64,
    court: &CourtSpec,
    fp: String,
) -> Result<EvalReport> {
    let h = value.horizon();
    let runs = (0..n_runs)
        .map(|r| {
            starts
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let sd = seed.wrapping_add((r * starts.len() + k) as u64);
                    random_walk_from_state(s, h, sd, step_std_ft, court)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&runs, value, court, fp)
}

#[derive(Serialize)]
struct RunRow {
    alpha: f64,
    run: usize,
    #[serde(rename = "return")]
    ret: f64,
    oob_rate: f64,
}

/// Per-run table with columns `alpha,run,return,oob_rate`.
pub fn write_runs_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        for (run, (ret, oob)) in row.report.returns.iter().zip(&row.report.oob_rates).enumerate() {
            w.serialize(RunRow {
                alpha: row.alpha,
                run,
                ret: *ret,
                oob_rate: *oob,
            })?;
        }
    }
    finish_csv(w)
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    alpha: f64,
    avg: f64,
    max: f64,
    n_runs: usize,
    std_error: f64,
    oob_rate: f64,
    config_fingerprint: &'a str,
}

/// One line per alpha with AVG, MAX, run count, standard error and OOB rate.
pub fn write_summary_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        let r = &row.report;
        w.serialize(SummaryRow {
            alpha: row.alpha,
            avg: r.avg,
            max: r.max,
            n_runs: r.n_runs,
            std_error: r.std_error,
            oob_rate: r.out_of_bounds_rate,
            config_fingerprint: &r.config_fingerprint,
        })?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

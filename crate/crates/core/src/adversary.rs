//! Heuristic defenses and rollouts that splice them into planned possessions.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::court::{CourtSpec, FRAME_RATE, PLAYERS_PER_TEAM};
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::normalize::normalize;
use crate::planner::{plan, PlanConfig};
use crate::trajectory::{
    action_column, state_column, Axis, Object, Space, State, TrajectoryTensor, FEATURE_DIM, STATE_DIM,
};
use crate::value::ValueModel;

pub type Xy = [f64; 2];
pub type Lineup = [Xy; PLAYERS_PER_TEAM];

/// Defender target sits this far along the basket-to-attacker segment.
pub const MAN_TO_MAN_DEPTH: f64 = 0.7;
/// Zone defenders shade this fraction of the way toward the ball.
pub const ZONE_BALL_PULL: f64 = 0.3;
pub const DEFAULT_MAX_SPEED_FTPS: f64 = 26.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    ManToMan,
    Zone23,
}

impl std::str::FromStr for DefenseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "man_to_man" => Ok(DefenseKind::ManToMan),
            "zone_2_3" | "zone23" => Ok(DefenseKind::Zone23),
            _ => Err(Error::rejected(format!("unknown defense policy {s:?}"))),
        }
    }
}

impl std::fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DefenseKind::ManToMan => "man_to_man",
            DefenseKind::Zone23 => "zone_2_3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefensePolicy {
    pub kind: DefenseKind,
    pub max_speed_ftps: f64,
    /// Zone spots: two wings, then three across the paint.
    pub zone_anchors: Lineup,
    /// Basket the offense attacks (0 = left, 1 = right).
    pub attack_side: usize,
    pub court: CourtSpec,
}

/// Standard 2-3 spots as fractions of court length/width, for the right basket.
const ZONE_FRACTIONS: Lineup = [
    [75.0 / 94.0, 13.0 / 50.0],
    [75.0 / 94.0, 37.0 / 50.0],
    [86.0 / 94.0, 17.0 / 50.0],
    [87.0 / 94.0, 25.0 / 50.0],
    [86.0 / 94.0, 33.0 / 50.0],
];

pub fn default_zone_anchors(court: &CourtSpec, attack_side: usize) -> Lineup {
    ZONE_FRACTIONS.map(|[fx, fy]| {
        let fx = if attack_side == 0 { 1.0 - fx } else { fx };
        [fx * court.length_ft, fy * court.width_ft]
    })
}

impl DefensePolicy {
    pub fn new(kind: DefenseKind, court: CourtSpec, attack_side: usize) -> Self {
        DefensePolicy {
            kind,
            max_speed_ftps: DEFAULT_MAX_SPEED_FTPS,
            zone_anchors: default_zone_anchors(&court, attack_side),
            attack_side,
            court,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_speed_ftps.is_finite() && self.max_speed_ftps > 0.0) {
            return Err(Error::rejected(format!("max speed must be positive, got {}", self.max_speed_ftps)));
        }
        if self.attack_side > 1 {
            return Err(Error::rejected("attack side must be 0 or 1"));
        }
        if let Some(a) = self.zone_anchors.iter().find(|a| !self.court.contains([a[0], a[1], 0.0])) {
            return Err(Error::rejected(format!("zone anchor {a:?} outside the court")));
        }
        Ok(())
    }

    /// Advances the defenders by one frame.
    pub fn step(&self, def: &Lineup, off: &Lineup, ball: [f64; 3]) -> Lineup {
        let dt = 1.0 / FRAME_RATE;
        match self.kind {
            DefenseKind::ManToMan => man_to_man_step(
                def,
                off,
                ball,
                self.max_speed_ftps,
                dt,
                self.court.basket_xy(self.attack_side),
                &self.court,
            ),
            DefenseKind::Zone23 => zone_2_3_step(def, ball, self.max_speed_ftps, dt, &self.zone_anchors, &self.court),
        }
    }
}

fn dist(a: Xy, b: Xy) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn move_toward(from: Xy, to: Xy, max_step: f64) -> Xy {
    let d = dist(from, to);
    if d <= max_step {
        to
    } else {
        let k = max_step / d;
        [from[0] + k * (to[0] - from[0]), from[1] + k * (to[1] - from[1])]
    }
}

/// Minimum-total-cost assignment of rows to columns (square `cost`),
/// returned as `row -> column`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![0; n];
    for j in 1..=n {
        ans[p[j] - 1] = j - 1;
    }
    ans
}

/// Defender `k` guards attacker `assignment[k]`.
pub fn man_to_man_assignment(def: &Lineup, off: &Lineup) -> Vec<usize> {
    let cost: Vec<Vec<f64>> = def.iter().map(|d| off.iter().map(|o| dist(*d, *o)).collect()).collect();
    min_cost_assignment(&cost)
}

pub fn man_to_man_step(
    def: &Lineup,
    off: &Lineup,
    ball: [f64; 3],
    speed: f64,
    dt: f64,
    basket: Xy,
    court: &CourtSpec,
) -> Lineup {
    let _ = ball;
    let def = def.map(|d| court.clamp_xy(d));
    let off = off.map(|o| court.clamp_xy(o));
    let assignment = man_to_man_assignment(&def, &off);
    let mut out = def;
    for (k, d) in def.iter().enumerate() {
        let a = off[assignment[k]];
        let target = [
            basket[0] + MAN_TO_MAN_DEPTH * (a[0] - basket[0]),
            basket[1] + MAN_TO_MAN_DEPTH * (a[1] - basket[1]),
        ];
        out[k] = move_toward(*d, target, speed * dt);
    }
    out
}

pub fn zone_2_3_step(def: &Lineup, ball: [f64; 3], speed: f64, dt: f64, anchors: &Lineup, court: &CourtSpec) -> Lineup {
    let b = court.clamp_xy([ball[0], ball[1]]);
    let mut out = [[0.0; 2]; PLAYERS_PER_TEAM];
    for k in 0..PLAYERS_PER_TEAM {
        let d = court.clamp_xy(def[k]);
        let a = anchors[k];
        let target = [a[0] + ZONE_BALL_PULL * (b[0] - a[0]), a[1] + ZONE_BALL_PULL * (b[1] - a[1])];
        out[k] = move_toward(d, target, speed * dt);
    }
    out
}

fn lineup(row: ndarray::ArrayView1<f64>, offense: bool) -> Lineup {
    let mut l = [[0.0; 2]; PLAYERS_PER_TEAM];
    for (k, p) in l.iter_mut().enumerate() {
        let obj = if offense { Object::Offense(k) } else { Object::Defense(k) };
        *p = [row[state_column(obj, Axis::X)], row[state_column(obj, Axis::Y)]];
    }
    l
}

fn ball(row: ndarray::ArrayView1<f64>) -> [f64; 3] {
    Axis::ALL.map(|a| row[state_column(Object::Ball, a)])
}

/// Runs the policy over a fixed offense/ball track: `out[0] = start`,
/// `out[t + 1] = step(out[t], offense[t], ball[t])`. Returns one lineup per
/// row of `traj`.
pub fn heuristic_rollout(policy: &DefensePolicy, start: &Lineup, traj: &TrajectoryTensor) -> Vec<Lineup> {
    let v = traj.values();
    let mut out = Vec::with_capacity(v.nrows());
    let mut d = *start;
    for t in 0..v.nrows() {
        out.push(d);
        d = policy.step(&d, &lineup(v.row(t), true), ball(v.row(t)));
    }
    out
}

/// Defender positions of a trajectory, one lineup per row.
pub fn defense_track(traj: &TrajectoryTensor) -> Vec<Lineup> {
    traj.values().rows().into_iter().map(|r| lineup(r, false)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub segment_len: usize,
    pub total_len: usize,
    pub policy: DefensePolicy,
    pub alpha: f64,
    pub seed: u64,
    /// Chains sampled per segment; the highest predicted return is kept.
    pub plan_batch: usize,
}

impl AdversarialConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        self.policy.validate()?;
        if self.segment_len < 1 || self.segment_len > self.total_len {
            return Err(Error::rejected(format!(
                "segment length {} must lie in [1, {}]",
                self.segment_len, self.total_len
            )));
        }
        if self.segment_len > horizon {
            return Err(Error::rejected(format!(
                "segment length {} exceeds model horizon {horizon}",
                self.segment_len
            )));
        }
        if self.plan_batch == 0 {
            return Err(Error::rejected("plan batch must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// Raw composite trajectory, `total_len` rows.
    pub trajectory: TrajectoryTensor,
    pub predicted_return: f64,
    pub segments: usize,
}

/// Scores a raw trajectory of any length at step 0: longer ones use their
/// last `horizon` rows, shorter ones are padded by repeating the final row.
pub fn score_trajectory(value: &ValueModel, traj: &TrajectoryTensor) -> Result<f64> {
    let h = value.horizon();
    let v = traj.values();
    let n = v.nrows();
    let window = Array2::from_shape_fn((h, FEATURE_DIM), |(t, j)| {
        let src = if n >= h { n - h + t } else { t.min(n - 1) };
        v[[src, j]]
    });
    let raw = TrajectoryTensor::new(window, h, Space::Raw)?;
    value.predict_return(&normalize(&raw, &value.meta.stats)?, 0)
}

/// Replaces defender velocity columns with finite differences of their
/// positions (last row repeats the previous velocity).
fn refresh_defense_velocities(values: &mut Array2<f64>) {
    let n = values.nrows();
    for k in 0..PLAYERS_PER_TEAM {
        for axis in Axis::ALL {
            let pc = state_column(Object::Defense(k), axis);
            let vc = action_column(Object::Defense(k), axis);
            for t in 0..n {
                values[[t, vc]] = if n == 1 {
                    0.0
                } else if t + 1 < n {
                    (values[[t + 1, pc]] - values[[t, pc]]) * FRAME_RATE
                } else {
                    values[[t - 1, vc]]
                };
            }
        }
    }
}

/// Plans in segments of `segment_len` frames, overwriting defender channels
/// with the heuristic policy after each planning call.
pub fn adversarial_rollout(
    denoiser: &Denoiser,
    value: &ValueModel,
    cfg: &AdversarialConfig,
    initial: &State,
) -> Result<RolloutResult> {
    let h = denoiser.horizon();
    cfg.validate(h)?;
    let mut rows = Array2::<f64>::zeros((cfg.total_len, FEATURE_DIM));
    let mut state = *initial;
    let mut def = {
        let st = Array2::from_shape_vec((1, STATE_DIM), state.to_vec()).expect("one row");
        lineup(st.row(0), false)
    };
    let mut filled = 0;
    let mut segments = 0;
    while filled < cfg.total_len {
        let seg = cfg.segment_len.min(cfg.total_len - filled);
        let pc = PlanConfig {
            alpha: cfg.alpha,
            seed: cfg.seed.wrapping_add(segments as u64),
            batch: cfg.plan_batch,
            ..PlanConfig::new(denoiser, state)
        };
        let p = plan(denoiser, value, &pc)?;
        let returns = p.returns.as_ref().expect("guided plans carry returns");
        let best = (0..returns.len())
            .max_by(|&a, &b| returns[a].total_cmp(&returns[b]).then(b.cmp(&a)))
            .expect("batch is nonempty");
        let planned = p.trajectories[best].values();
        for t in 0..seg {
            let mut row = planned.row(t).to_owned();
            for (k, d) in def.iter().enumerate() {
                row[state_column(Object::Defense(k), Axis::X)] = d[0];
                row[state_column(Object::Defense(k), Axis::Y)] = d[1];
                row[state_column(Object::Defense(k), Axis::Z)] = 0.0;
            }
            def = cfg
                .policy
                .step(&def, &lineup(row.view(), true), ball(row.view()));
            rows.row_mut(filled + t).assign(&row);
        }
        let next = planned.row(seg.min(h - 1));
        for j in 0..STATE_DIM {
            state[j] = next[j];
        }
        for (k, d) in def.iter().enumerate() {
            state[state_column(Object::Defense(k), Axis::X)] = d[0];
            state[state_column(Object::Defense(k), Axis::Y)] = d[1];
            state[state_column(Object::Defense(k), Axis::Z)] = 0.0;
        }
        filled += seg;
        segments += 1;
    }
    refresh_defense_velocities(&mut rows);
    let trajectory = TrajectoryTensor::new(rows, cfg.total_len, Space::Raw)?;
    let predicted_return = score_trajectory(value, &trajectory)?;
    Ok(RolloutResult {
        trajectory,
        predicted_return,
        segments,
    })
}

/// Stacks lineups into `[t, defender, xy]` for comparisons and export.
pub fn lineups_to_array(l: &[Lineup]) -> Array3<f64> {
    Array3::from_shape_fn((l.len(), PLAYERS_PER_TEAM, 2), |(t, k, a)| l[t][k][a])
}

/// Defense position columns `[t, 15]` of a trajectory.
pub fn defense_columns(traj: &TrajectoryTensor) -> Array2<f64> {
    let r = crate::trajectory::defense_state_columns();
    traj.values().slice(s![.., r]).to_owned()
}

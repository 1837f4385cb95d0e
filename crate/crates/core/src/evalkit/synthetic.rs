//! Scripted possessions written in the ingest formats, with known returns.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adversary::{man_to_man_step, Lineup, Xy};
use crate::court::{CourtSpec, Frame, PlayerPosition, FRAME_RATE};
use crate::error::{Error, Result};
use crate::ingest::{
    label_reward, segment_possessions, write_motion, write_pbp, EventType, MotionEvent, MotionGame, PbpEvent,
    PossessionIndex,
};

const QUARTER_S: f64 = 720.0;
const QUARTERS: u32 = 4;
const FRAME_S: f64 = 1.0 / FRAME_RATE;
const FRAMES_PER_QUARTER: usize = (QUARTER_S * FRAME_RATE) as usize;
const THREE_POINT_FT: f64 = 23.75;
const FLIGHT: usize = 6;
const SETTLE: usize = 6;
const TEAMS: [i64; 2] = [1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OffenseScript {
    /// Ball handler drives to the rim for a layup.
    Drive,
    /// Ball moves around the perimeter, then a jump shot or a turnover.
    PerimeterPass,
    #[default]
    Mixed,
}

impl std::str::FromStr for OffenseScript {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drive" => Ok(OffenseScript::Drive),
            "perimeter_pass" => Ok(OffenseScript::PerimeterPass),
            "mixed" => Ok(OffenseScript::Mixed),
            _ => Err(Error::rejected(format!("unknown offense script {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_possessions: usize,
    /// Inclusive frame-count range per possession.
    pub frames_per_possession: (usize, usize),
    pub offense_script: OffenseScript,
    /// Make probability at the rim; jump shots decay with distance.
    pub score_prob_at_rim: f64,
    /// Distance (ft) over which make probability falls by a factor e.
    pub score_decay_ft: f64,
    pub turnover_prob: f64,
    /// Chance a drive ends in a shooting foul instead of a shot.
    pub foul_prob: f64,
    pub free_throw_prob: f64,
    pub court: CourtSpec,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            n_possessions: 200,
            frames_per_possession: (75, 250),
            offense_script: OffenseScript::Mixed,
            score_prob_at_rim: 0.6,
            score_decay_ft: 25.0,
            turnover_prob: 0.15,
            foul_prob: 0.1,
            free_throw_prob: 0.75,
            court: CourtSpec::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("score_prob_at_rim", self.score_prob_at_rim),
            ("turnover_prob", self.turnover_prob),
            ("foul_prob", self.foul_prob),
            ("free_throw_prob", self.free_throw_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::rejected(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.n_possessions == 0 {
            return Err(Error::rejected("n_possessions must be at least 1"));
        }
        let (lo, hi) = self.frames_per_possession;
        if lo < 2 * (FLIGHT + SETTLE) + 4 || hi < lo || hi > FRAMES_PER_QUARTER {
            return Err(Error::rejected(format!(
                "frames_per_possession ({lo}, {hi}) must satisfy {} <= lo <= hi <= {FRAMES_PER_QUARTER}",
                2 * (FLIGHT + SETTLE) + 4
            )));
        }
        if !(self.score_decay_ft > 0.0) {
            return Err(Error::rejected("score_decay_ft must be positive"));
        }
        self.court.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRow {
    pub possession_id: String,
    pub true_return: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticGame {
    pub motion: MotionGame,
    pub events: Vec<PbpEvent>,
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub games: Vec<SyntheticGame>,
    pub sidecar: Vec<SidecarRow>,
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn lerp(a: Xy, b: Xy, s: f64) -> Xy {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s]
}

fn dist(a: Xy, b: Xy) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Tracks of one possession before they are turned into frames.
struct Tracks {
    offense: Vec<Lineup>,
    defense: Vec<Lineup>,
    ball: Vec<[f64; 3]>,
}

/// Outcome of a scripted possession: terminal event plus any trailing
/// free throws (acting team, kind, points).
struct Outcome {
    events: Vec<(usize, EventType, u32)>,
}

const OFF: usize = 0;
const DEF: usize = 1;

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
    basket: Xy,
}

impl Generator<'_> {
    fn normal(&mut self, sd: f64) -> f64 {
        sd * self.rng.sample::<f64, _>(StandardNormal)
    }

    fn clamp(&self, p: Xy) -> Xy {
        self.spec.court.clamp_xy(p)
    }

    fn start_lineups(&mut self) -> (Lineup, Lineup) {
        let spots: Lineup = [[62.0, 25.0], [70.0, 8.0], [70.0, 42.0], [85.0, 3.5], [85.0, 46.5]];
        let off = spots.map(|s| [s[0] + self.normal(1.5), s[1] + self.normal(1.5)]);
        let off = off.map(|p| self.clamp(p));
        let b = self.basket;
        let def = off.map(|p| {
            let t = lerp(b, p, 0.75);
            [t[0] + self.normal(1.0), t[1] + self.normal(1.0)]
        });
        (off, def.map(|p| self.clamp(p)))
    }

    /// Off-ball offense drift and heuristic defense for `n` frames, given the
    /// handler path and ball path to be filled by the caller.
    fn base_tracks(&mut self, n: usize, off0: Lineup, def0: Lineup) -> Tracks {
        let mut offense = Vec::with_capacity(n);
        let mut defense = Vec::with_capacity(n);
        let mut off = off0;
        let mut drift = [[0.0; 2]; 5];
        for _ in 0..n {
            offense.push(off);
            for k in 1..5 {
                for a in 0..2 {
                    drift[k][a] = 0.92 * drift[k][a] + self.normal(0.04);
                }
                off[k] = self.clamp([off[k][0] + drift[k][0], off[k][1] + drift[k][1]]);
            }
        }
        let mut def = def0;
        let mut sway = [[0.0; 2]; 5];
        for t in 0..n {
            defense.push(def);
            let ball = [offense[t][0][0], offense[t][0][1], 0.0];
            def = man_to_man_step(&def, &offense[t], ball, 20.0, FRAME_S, self.basket, &self.spec.court);
            for (d, s) in def.iter_mut().zip(sway.iter_mut()) {
                for a in 0..2 {
                    s[a] = 0.92 * s[a] + self.normal(0.01);
                }
                *d = self.spec.court.clamp_xy([d[0] + s[0], d[1] + s[1]]);
            }
        }
        Tracks {
            offense,
            defense,
            ball: vec![[0.0; 3]; n],
        }
    }

    fn dribble(&self, p: Xy, t: usize) -> [f64; 3] {
        let toward = {
            let d = dist(p, self.basket).max(1e-9);
            [(self.basket[0] - p[0]) / d * 0.5, (self.basket[1] - p[1]) / d * 0.5]
        };
        let z = 2.75 - 0.75 * (std::f64::consts::PI * t as f64 / 12.0).cos();
        [p[0] + toward[0], p[1] + toward[1], z]
    }

    /// Shot from `from` released at frame `r`: flight to the rim, then either
    /// a drop through or a carom away.
    fn shot(&mut self, tr: &mut Tracks, from: Xy, r: usize, made: bool) {
        let n = tr.ball.len();
        let peak = 4.0 + dist(from, self.basket) / 4.0;
        for k in 0..FLIGHT {
            let s = (k + 1) as f64 / FLIGHT as f64;
            let xy = lerp(from, self.basket, s);
            tr.ball[r + k] = [xy[0], xy[1], 7.0 + 3.0 * s + 4.0 * peak * s * (1.0 - s) / 2.0];
        }
        let heading = self.rng.random_range(0.0..std::f64::consts::TAU);
        for (k, t) in (r + FLIGHT..n).enumerate() {
            let k = (k + 1) as f64;
            tr.ball[t] = if made {
                [self.basket[0], self.basket[1], (10.0 - 1.5 * k).max(0.5)]
            } else {
                let step = 15.0 * FRAME_S * k;
                [
                    self.basket[0] - step * heading.cos().abs(),
                    self.basket[1] + step * heading.sin(),
                    (10.0 + 1.5 * k - 0.4 * k * k).max(0.5),
                ]
            };
            let xy = self.clamp([tr.ball[t][0], tr.ball[t][1]]);
            tr.ball[t][0] = xy[0];
            tr.ball[t][1] = xy[1];
        }
    }

    fn drive(&mut self, n: usize) -> (Tracks, Outcome) {
        let (off0, def0) = self.start_lineups();
        let mut tr = self.base_tracks(n, off0, def0);
        let r = n - FLIGHT - SETTLE;
        let start = off0[0];
        let d0 = dist(start, self.basket).max(1e-9);
        let layup = [
            self.basket[0] + (start[0] - self.basket[0]) / d0 * 2.0,
            self.basket[1] + (start[1] - self.basket[1]) / d0 * 2.0,
        ];
        for t in 0..n {
            let s = (t.min(r) as f64 / r as f64).clamp(0.0, 1.0);
            let s = s * s * (3.0 - 2.0 * s);
            tr.offense[t][0] = lerp(start, layup, s);
            tr.ball[t] = self.dribble(tr.offense[t][0], t);
        }
        if self.rng.random_bool(self.spec.foul_prob) {
            let mut events = vec![(DEF, EventType::Foul, 0)];
            for _ in 0..2 {
                if self.rng.random_bool(self.spec.free_throw_prob) {
                    events.push((OFF, EventType::FreeThrowMade, 1));
                }
            }
            return (tr, Outcome { events });
        }
        let made = self.rng.random_bool(self.spec.score_prob_at_rim);
        let release = [layup[0], layup[1]];
        self.shot(&mut tr, release, r, made);
        let ev = if made {
            (OFF, EventType::TwoPointerMade, 2)
        } else {
            (DEF, EventType::Rebound, 0)
        };
        (tr, Outcome { events: vec![ev] })
    }

    fn perimeter(&mut self, n: usize) -> (Tracks, Outcome) {
        let (off0, def0) = self.start_lineups();
        let mut tr = self.base_tracks(n, off0, def0);
        let decide = n - FLIGHT - SETTLE;
        let passes = self.rng.random_range(1..=3usize);
        let mut holder = 0usize;
        let mut schedule = Vec::new();
        for p in 0..passes {
            let at = (decide as f64 * (0.15 + 0.45 * p as f64 / passes as f64)) as usize;
            let mut to = self.rng.random_range(0..4usize);
            if to >= holder {
                to += 1;
            }
            schedule.push((at, holder, to));
            holder = to;
        }
        let mut cur = 0usize;
        let mut next = 0usize;
        for t in 0..decide {
            if next < schedule.len() && t >= schedule[next].0 {
                let (at, from, to) = schedule[next];
                let s = ((t - at) as f64 / 8.0).min(1.0);
                let xy = lerp(tr.offense[t][from], tr.offense[t][to], s);
                tr.ball[t] = [xy[0], xy[1], 5.0 + 2.0 * s * (1.0 - s)];
                if s >= 1.0 {
                    cur = to;
                    next += 1;
                }
            } else {
                tr.ball[t] = self.dribble(tr.offense[t][cur], t);
            }
        }
        let shooter = tr.offense[decide][cur];
        let u = self.rng.random_range(0.0..1.0);
        if u < self.spec.turnover_prob {
            let thief = (0..5)
                .min_by(|&a, &b| dist(tr.defense[decide][a], shooter).total_cmp(&dist(tr.defense[decide][b], shooter)))
                .expect("five defenders");
            for t in decide..n {
                let s = ((t - decide) as f64 / 8.0).min(1.0);
                let xy = lerp(tr.offense[t][cur], tr.defense[t][thief], s);
                tr.ball[t] = [xy[0], xy[1], 4.0];
            }
            return (
                tr,
                Outcome {
                    events: vec![(OFF, EventType::Turnover, 0)],
                },
            );
        }
        if u < self.spec.turnover_prob + self.spec.foul_prob * 0.5 {
            for t in decide..n {
                tr.ball[t] = self.dribble(tr.offense[t][cur], t);
            }
            return (
                tr,
                Outcome {
                    events: vec![(OFF, EventType::Foul, 0)],
                },
            );
        }
        for t in decide..n {
            tr.offense[t][cur] = shooter;
        }
        let d = dist(shooter, self.basket);
        let p = self.spec.score_prob_at_rim * (-d / self.spec.score_decay_ft).exp();
        let made = self.rng.random_bool(p.clamp(0.0, 1.0));
        self.shot(&mut tr, shooter, decide, made);
        let ev = match (made, d > THREE_POINT_FT) {
            (true, true) => (OFF, EventType::ThreePointerMade, 3),
            (true, false) => (OFF, EventType::TwoPointerMade, 2),
            (false, _) => (DEF, EventType::Rebound, 0),
        };
        (tr, Outcome { events: vec![ev] })
    }
}

/// Generates games of scripted possessions. Identical specs give identical
/// output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticOutput> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        basket: spec.court.basket_xy(1),
    };
    let mut games: Vec<SyntheticGame> = Vec::new();
    let mut sidecar = Vec::new();
    let mut game_idx = 0usize;
    let mut quarter = 0u32;
    let mut j = FRAMES_PER_QUARTER; // forces a new quarter on the first possession
    let mut k_in_game = 0usize;
    let new_game = |idx: usize| SyntheticGame {
        motion: MotionGame {
            game_id: format!("syn{idx:04}"),
            events: Vec::new(),
        },
        events: Vec::new(),
    };
    let clock = |j: usize| QUARTER_S - j as f64 * FRAME_S;
    for _ in 0..spec.n_possessions {
        let n = g.rng.random_range(spec.frames_per_possession.0..=spec.frames_per_possession.1);
        if j + n > FRAMES_PER_QUARTER {
            if let Some(game) = games.last_mut() {
                let last = clock(j.saturating_sub(1));
                let wall = wall_ms(quarter, j.saturating_sub(1));
                game.events.push(period_event(&game.motion.game_id, quarter, last, wall, EventType::EndOfPeriod));
            }
            if quarter == QUARTERS || games.is_empty() {
                games.push(new_game(game_idx));
                game_idx += 1;
                quarter = 0;
                k_in_game = 0;
            }
            quarter += 1;
            j = 0;
            let game = games.last_mut().expect("game exists");
            let gid = game.motion.game_id.clone();
            game.events.push(period_event(&gid, quarter, QUARTER_S, wall_ms(quarter, 0), EventType::StartOfPeriod));
            if quarter == 1 {
                let mut jb = period_event(&gid, quarter, QUARTER_S, wall_ms(quarter, 0), EventType::JumpBall);
                jb.acting_team_id = Some(TEAMS[0]);
                game.events.push(jb);
            }
        }
        let offense_team = TEAMS[k_in_game % 2];
        let defense_team = TEAMS[(k_in_game + 1) % 2];
        let script = match spec.offense_script {
            OffenseScript::Mixed => {
                if g.rng.random_bool(0.5) {
                    OffenseScript::Drive
                } else {
                    OffenseScript::PerimeterPass
                }
            }
            s => s,
        };
        let (tracks, outcome) = match script {
            OffenseScript::Drive => g.drive(n),
            _ => g.perimeter(n),
        };
        let game = games.last_mut().expect("game exists");
        let gid = game.motion.game_id.clone();
        let frames: Vec<Frame> = (0..n)
            .map(|t| {
                let mut players = Vec::with_capacity(10);
                for (team, lineup, base) in [
                    (offense_team, &tracks.offense[t], offense_team * 100),
                    (defense_team, &tracks.defense[t], defense_team * 100),
                ] {
                    for (k, p) in lineup.iter().enumerate() {
                        players.push(PlayerPosition {
                            team_id: team,
                            player_id: base + 1 + k as i64,
                            x: round4(p[0]),
                            y: round4(p[1]),
                            z: 0.0,
                        });
                    }
                }
                players.sort_by_key(|p| p.player_id);
                let b = tracks.ball[t];
                Frame {
                    quarter,
                    wall_time_ms: wall_ms(quarter, j + t),
                    game_clock_s: clock(j + t),
                    shot_clock_s: Some(round4((24.0 - t as f64 * FRAME_S).max(0.0))),
                    ball: [round4(b[0]), round4(b[1]), round4(b[2])],
                    players,
                }
            })
            .collect();
        game.motion.events.push(MotionEvent {
            event_id: format!("{k_in_game}"),
            frames,
        });
        let end = j + n - 1;
        let mut ret = 0.0;
        for (side, kind, points) in outcome.events {
            let ev = PbpEvent {
                game_id: gid.clone(),
                quarter,
                game_clock_s: clock(end),
                wall_time_ms: wall_ms(quarter, end),
                event_type: kind,
                acting_team_id: Some(if side == OFF { offense_team } else { defense_team }),
                points,
            };
            ret += label_reward(&ev, offense_team);
            game.events.push(ev);
        }
        if g.rng.random_bool(0.05) {
            let mut sub = period_event(&gid, quarter, clock(end), wall_ms(quarter, end), EventType::Substitution);
            sub.acting_team_id = Some(defense_team);
            game.events.push(sub);
        }
        sidecar.push(SidecarRow {
            possession_id: format!("{gid}:{k_in_game}"),
            true_return: ret,
        });
        k_in_game += 1;
        j += n;
    }
    if let Some(game) = games.last_mut() {
        let gid = game.motion.game_id.clone();
        game.events.push(period_event(&gid, quarter, clock(j - 1), wall_ms(quarter, j - 1), EventType::EndOfPeriod));
    }
    Ok(SyntheticOutput { games, sidecar })
}

fn wall_ms(quarter: u32, j: usize) -> i64 {
    (quarter as i64 - 1) * 900_000 + j as i64 * 40
}

fn period_event(gid: &str, quarter: u32, clock: f64, wall: i64, kind: EventType) -> PbpEvent {
    PbpEvent {
        game_id: gid.to_string(),
        quarter,
        game_clock_s: clock,
        wall_time_ms: wall,
        event_type: kind,
        acting_team_id: None,
        points: 0,
    }
}

impl SyntheticOutput {
    /// Segments every game in memory, as ingesting the written files would.
    pub fn ingest(&self) -> Result<Vec<(PossessionIndex, Vec<Frame>)>> {
        self.games
            .iter()
            .map(|g| {
                let frames: Vec<Frame> = g.motion.events.iter().flat_map(|e| e.frames.iter().cloned()).collect();
                let possessions = segment_possessions(&frames, &g.events)?;
                Ok((
                    PossessionIndex {
                        game_id: g.motion.game_id.clone(),
                        frame_count: frames.len(),
                        skipped_moments: 0,
                        possessions,
                    },
                    frames,
                ))
            })
            .collect()
    }
}

pub fn write_sidecar(rows: &[SidecarRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_sidecar(bytes: &[u8]) -> Result<Vec<SidecarRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes `<game>.motion.json` and `<game>.pbp.csv` per game plus
/// `sidecar.csv`; returns the paths written.
pub fn write_synthetic(out: &SyntheticOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
        Ok(())
    };
    for g in &out.games {
        put(format!("{}.motion.json", g.motion.game_id), write_motion(&g.motion))?;
        put(format!("{}.pbp.csv", g.motion.game_id), write_pbp(&g.events))?;
    }
    put("sidecar.csv".into(), write_sidecar(&out.sidecar)?)?;
    Ok(paths)
}

//! Possession-aligned training tensors.

use std::fs;
use std::path::Path;

use log::warn;
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::court::{Frame, FRAME_RATE};
use crate::error::{Error, Result};
use crate::ingest::{label_reward, PossessionIndex, PossessionRecord};
use crate::normalize::{normalize, NormalizationStats};
use crate::trajectory::{
    state_from_frame, Space, State, TrajectoryTensor, FEATURE_DIM, LAYOUT_VERSION, STATE_DIM,
};

/// Examples per shard file.
const SHARD_SIZE: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// Normalized trajectory.
    pub tensor: TrajectoryTensor,
    pub return_target: f64,
    pub possession_ref: String,
}

/// Finite-difference velocities (ft/s) for a sequence of states. The last
/// state repeats the previous velocity.
pub fn compute_actions(states: &[State]) -> Vec<State> {
    match states.len() {
        0 => Vec::new(),
        1 => {
            warn!("single-frame sequence: velocities set to zero");
            vec![[0.0; STATE_DIM]]
        }
        n => {
            let mut out = Vec::with_capacity(n);
            for w in states.windows(2) {
                let mut v = [0.0; STATE_DIM];
                for j in 0..STATE_DIM {
                    v[j] = (w[1][j] - w[0][j]) * FRAME_RATE;
                }
                out.push(v);
            }
            out.push(out[n - 2]);
            out
        }
    }
}

/// Stacks state and velocity rows into an `h`-row tensor. Spans longer than
/// `h` keep their final `h` frames; shorter ones repeat the last row.
pub fn trajectory_from_states(states: &[State], h: usize) -> Result<TrajectoryTensor> {
    if h < 1 {
        return Err(Error::rejected("horizon must be at least 1"));
    }
    if states.is_empty() {
        return Err(Error::rejected("empty state sequence"));
    }
    let kept = &states[states.len().saturating_sub(h)..];
    let actions = compute_actions(kept);
    let mut values = Array2::zeros((h, FEATURE_DIM));
    for (t, (s, a)) in kept.iter().zip(&actions).enumerate() {
        let mut row = values.row_mut(t);
        for j in 0..STATE_DIM {
            row[j] = s[j];
            row[STATE_DIM + j] = a[j];
        }
    }
    let valid = kept.len();
    for t in valid..h {
        let last = values.row(valid - 1).to_owned();
        values.row_mut(t).assign(&last);
    }
    TrajectoryTensor::new(values, valid, Space::Raw)
}

pub fn build_trajectory(
    possession: &PossessionRecord,
    frames: &[Frame],
    h: usize,
) -> Result<TrajectoryTensor> {
    let span = frames
        .get(possession.start_frame_idx..possession.end_frame_idx)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| {
            Error::rejected(format!(
                "possession {} span [{}, {}) outside {} frames",
                possession.possession_ref(),
                possession.start_frame_idx,
                possession.end_frame_idx,
                frames.len()
            ))
        })?;
    let start = span.len().saturating_sub(h);
    let states = span[start..]
        .iter()
        .map(|f| state_from_frame(f, possession.offense_team_id))
        .collect::<Result<Vec<_>>>()?;
    trajectory_from_states(&states, h)
}

/// Undiscounted offense-perspective return of a possession.
pub fn return_target(possession: &PossessionRecord) -> f64 {
    possession
        .events()
        .map(|e| label_reward(e, possession.offense_team_id))
        .sum()
}

/// Per-feature bounds over the valid rows of raw trajectories.
pub fn fit_stats<'a>(trajs: impl IntoIterator<Item = &'a TrajectoryTensor>) -> Result<NormalizationStats> {
    let mut min = vec![f64::INFINITY; FEATURE_DIM];
    let mut max = vec![f64::NEG_INFINITY; FEATURE_DIM];
    let mut seen = 0;
    for t in trajs {
        if t.is_normalized() {
            return Err(Error::rejected("fit_stats needs raw trajectories"));
        }
        for row in t.values().slice(s![..t.valid_len(), ..]).rows() {
            for (j, v) in row.iter().enumerate() {
                min[j] = min[j].min(*v);
                max[j] = max[j].max(*v);
            }
        }
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::rejected("fit_stats needs at least one example"));
    }
    NormalizationStats::new(min, max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub horizon: usize,
    pub layout_version: u32,
    pub examples: usize,
    pub shards: Vec<String>,
    pub stats_fingerprint: String,
    /// Echo of whatever configuration produced the dataset.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub horizon: usize,
    pub stats: NormalizationStats,
    pub examples: Vec<TrainingExample>,
}

impl Dataset {
    /// Builds normalized examples from ingested games.
    pub fn from_games(games: &[(PossessionIndex, Vec<Frame>)], h: usize) -> Result<Self> {
        let mut raw = Vec::new();
        for (index, frames) in games {
            for p in &index.possessions {
                raw.push((build_trajectory(p, frames, h)?, return_target(p), p.possession_ref()));
            }
        }
        Self::from_raw(raw, h)
    }

    /// Fits statistics on raw `(trajectory, return, ref)` triples and
    /// normalizes them.
    pub fn from_raw(raw: Vec<(TrajectoryTensor, f64, String)>, h: usize) -> Result<Self> {
        let stats = fit_stats(raw.iter().map(|r| &r.0))?;
        let examples = raw
            .into_iter()
            .map(|(t, ret, r)| {
                if t.horizon() != h {
                    return Err(Error::rejected(format!("example {r} has horizon {}", t.horizon())));
                }
                Ok(TrainingExample {
                    tensor: normalize(&t, &stats)?,
                    return_target: ret,
                    possession_ref: r,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            horizon: h,
            stats,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn save(&self, dir: &Path, config: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let spath = dir.join("stats.json");
        fs::write(&spath, serde_json::to_string_pretty(&self.stats)?).map_err(|e| Error::io(&spath, e))?;
        let mut shards = Vec::new();
        let mut index = String::from("example,possession_ref,return_target\n");
        for (k, chunk) in self.examples.chunks(SHARD_SIZE).enumerate() {
            let name = format!("shard-{k:04}.bin");
            let mut c = Container::new("dataset-shard")
                .with("horizon", self.horizon as u64)
                .with("feature_dim", FEATURE_DIM as u64)
                .with("layout_version", LAYOUT_VERSION)
                .with("count", chunk.len() as u64);
            for ex in chunk {
                c.payload.push(ex.tensor.valid_len() as f64);
                c.payload.push(ex.return_target);
                c.payload.extend(ex.tensor.values().iter());
            }
            c.save(&dir.join(&name))?;
            shards.push(name);
        }
        for (i, ex) in self.examples.iter().enumerate() {
            index.push_str(&format!("{i},{},{}\n", ex.possession_ref, ex.return_target));
        }
        let ipath = dir.join("index.csv");
        fs::write(&ipath, index).map_err(|e| Error::io(&ipath, e))?;
        let manifest = DatasetManifest {
            horizon: self.horizon,
            layout_version: LAYOUT_VERSION,
            examples: self.examples.len(),
            shards,
            stats_fingerprint: format!("{:016x}", self.stats.fingerprint()),
            config,
        };
        let mpath = dir.join("manifest.json");
        fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let manifest: DatasetManifest = serde_json::from_str(&read("manifest.json")?)?;
        if manifest.layout_version != LAYOUT_VERSION {
            return Err(Error::Incompatible(format!(
                "dataset layout version {} (expected {LAYOUT_VERSION})",
                manifest.layout_version
            )));
        }
        let stats: NormalizationStats = serde_json::from_str(&read("stats.json")?)?;
        let stats = NormalizationStats::new(stats.min, stats.max)?;
        let refs: Vec<String> = csv::Reader::from_reader(read("index.csv")?.as_bytes())
            .records()
            .map(|r| r.map(|r| r.get(1).unwrap_or("").to_string()))
            .collect::<std::result::Result<_, _>>()?;
        let h = manifest.horizon;
        let width = 2 + h * FEATURE_DIM;
        let mut examples = Vec::with_capacity(manifest.examples);
        for name in &manifest.shards {
            let c = Container::load(&dir.join(name))?;
            c.expect_kind("dataset-shard")?;
            if c.get_u64("horizon")? as usize != h || c.payload.len() != c.get_u64("count")? as usize * width {
                return Err(Error::Format(format!("{name}: shard shape mismatch")));
            }
            for rec in c.payload.chunks_exact(width) {
                let values = Array2::from_shape_vec((h, FEATURE_DIM), rec[2..].to_vec())
                    .expect("shape checked");
                let k = examples.len();
                examples.push(TrainingExample {
                    tensor: TrajectoryTensor::new(values, rec[0] as usize, stats.space())?,
                    return_target: rec[1],
                    possession_ref: refs.get(k).cloned().unwrap_or_default(),
                });
            }
        }
        if examples.len() != manifest.examples {
            return Err(Error::Format("example count mismatch".into()));
        }
        Ok(Dataset {
            horizon: h,
            stats,
            examples,
        })
    }
}

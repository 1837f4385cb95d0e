//! On-disk ingest output: a possession index (JSON) and a frame store
//! (container of fixed-width frame records, keyed by position).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::segment::PossessionRecord;
use crate::container::Container;
use crate::court::{Frame, PlayerPosition, PLAYERS_PER_FRAME};
use crate::error::{Error, Result};

const FRAME_WIDTH: usize = 4 + 3 + 5 * PLAYERS_PER_FRAME;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PossessionIndex {
    pub game_id: String,
    pub frame_count: usize,
    pub skipped_moments: usize,
    pub possessions: Vec<PossessionRecord>,
}

/// Encodes frames as `[quarter, wall_ms, clock, shot_clock|NaN, ball xyz,
/// (team, player, x, y, z) x 10]`.
pub fn frames_to_container(game_id: &str, frames: &[Frame]) -> Container {
    let mut c = Container::new("frames")
        .with("game_id", game_id)
        .with("count", frames.len() as u64)
        .with("width", FRAME_WIDTH as u64);
    c.payload.reserve(frames.len() * FRAME_WIDTH);
    for f in frames {
        c.payload.extend_from_slice(&[
            f.quarter as f64,
            f.wall_time_ms as f64,
            f.game_clock_s,
            f.shot_clock_s.unwrap_or(f64::NAN),
        ]);
        c.payload.extend_from_slice(&f.ball);
        for p in &f.players {
            c.payload.extend_from_slice(&[p.team_id as f64, p.player_id as f64, p.x, p.y, p.z]);
        }
    }
    c
}

pub fn frames_from_container(c: &Container) -> Result<Vec<Frame>> {
    c.expect_kind("frames")?;
    let count = c.get_u64("count")? as usize;
    if c.get_u64("width")? as usize != FRAME_WIDTH || c.payload.len() != count * FRAME_WIDTH {
        return Err(Error::Format("frame store size mismatch".into()));
    }
    Ok(c.payload
        .chunks_exact(FRAME_WIDTH)
        .map(|r| Frame {
            quarter: r[0] as u32,
            wall_time_ms: r[1] as i64,
            game_clock_s: r[2],
            shot_clock_s: if r[3].is_nan() { None } else { Some(r[3]) },
            ball: [r[4], r[5], r[6]],
            players: r[7..]
                .chunks_exact(5)
                .map(|p| PlayerPosition {
                    team_id: p[0] as i64,
                    player_id: p[1] as i64,
                    x: p[2],
                    y: p[3],
                    z: p[4],
                })
                .collect(),
        })
        .collect())
}

/// Writes `<game>.possessions.json` and `<game>.frames.bin` into `dir`.
pub fn save_game(dir: &Path, index: &PossessionIndex, frames: &[Frame]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ipath = dir.join(format!("{}.possessions.json", index.game_id));
    let text = serde_json::to_string_pretty(index)?;
    fs::write(&ipath, text).map_err(|e| Error::io(&ipath, e))?;
    frames_to_container(&index.game_id, frames).save(&dir.join(format!("{}.frames.bin", index.game_id)))
}

/// Loads every game saved in `dir`, sorted by game id.
pub fn load_games(dir: &Path) -> Result<Vec<(PossessionIndex, Vec<Frame>)>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(".possessions.json"))
                .map(str::to_string)
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|g| {
            let ipath = dir.join(format!("{g}.possessions.json"));
            let text = fs::read_to_string(&ipath).map_err(|e| Error::io(&ipath, e))?;
            let index: PossessionIndex = serde_json::from_str(&text)?;
            let frames = frames_from_container(&Container::load(&dir.join(format!("{g}.frames.bin")))?)?;
            Ok((index, frames))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_store_roundtrip() {
        let mut f = crate::court::tests::frame_fixture();
        let mut g = f.clone();
        g.shot_clock_s = None;
        g.wall_time_ms = 40;
        f.game_clock_s = 719.96;
        let frames = vec![f, g];
        let c = frames_to_container("g", &frames);
        let back = frames_from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, frames);
    }
}

//! Tracking and play-by-play ingestion.

mod motion;
mod pbp;
mod reward;
mod segment;
mod store;

pub use motion::{parse_motion, parse_motion_game, write_motion, MotionEvent, MotionGame, MotionParse, BALL_TEAM_ID};
pub use pbp::{parse_pbp, write_pbp, PBP_HEADER};
pub use reward::{label_reward, EventType, PbpEvent};
pub use segment::{segment_possessions, PossessionRecord, CLOCK_TOLERANCE_S};
pub use store::{frames_from_container, frames_to_container, load_games, save_game, PossessionIndex};

use crate::court::Frame;
use crate::error::{Error, Result};

/// Parses one game's motion and play-by-play files and segments it.
pub fn ingest_game(motion: &[u8], pbp: &[u8]) -> Result<(PossessionIndex, Vec<Frame>)> {
    let parsed = parse_motion(motion)?;
    let events: Vec<PbpEvent> = parse_pbp(pbp)?
        .into_iter()
        .filter(|e| e.game_id == parsed.game_id)
        .collect();
    if events.is_empty() {
        return Err(Error::rejected(format!(
            "play-by-play has no events for game {}",
            parsed.game_id
        )));
    }
    let possessions = segment_possessions(&parsed.frames, &events)?;
    Ok((
        PossessionIndex {
            game_id: parsed.game_id,
            frame_count: parsed.frames.len(),
            skipped_moments: parsed.skipped,
            possessions,
        },
        parsed.frames,
    ))
}

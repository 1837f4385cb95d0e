//! SportVU-style motion JSON.
//!
//! ```text
//! {"gameid": "...", "events": [{"eventId": "...", "moments": [
//!     [quarter, wall_time_ms, game_clock_s, shot_clock_s|null, null,
//!      [[team_id, player_id, x, y, z], ...]]   // ball first, team_id -1
//! ]}]}
//! ```

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::court::{Frame, PlayerPosition};
use crate::error::{Error, Result};

pub const BALL_TEAM_ID: i64 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionEvent {
    pub event_id: String,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionGame {
    pub game_id: String,
    pub events: Vec<MotionEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionParse {
    pub game_id: String,
    /// Nondecreasing in wall time.
    pub frames: Vec<Frame>,
    /// Moments dropped because they were malformed.
    pub skipped: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGame {
    gameid: String,
    events: Vec<RawEvent>,
}

#[derive(Serialize, Deserialize)]
struct RawEvent {
    #[serde(rename = "eventId")]
    event_id: String,
    moments: Vec<Value>,
}

fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split(|b| *b == b'\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    text.len()
}

/// Parses a game file keeping its event grouping. Malformed moments are
/// skipped and counted.
pub fn parse_motion_game(bytes: &[u8]) -> Result<(MotionGame, usize)> {
    let raw: RawGame = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let mut skipped = 0;
    let mut events = Vec::with_capacity(raw.events.len());
    for ev in raw.events {
        let mut frames = Vec::with_capacity(ev.moments.len());
        for (k, m) in ev.moments.iter().enumerate() {
            match moment_to_frame(m) {
                Ok(f) => frames.push(f),
                Err(e) => {
                    skipped += 1;
                    warn!("event {} moment {k}: skipped ({e})", ev.event_id);
                }
            }
        }
        events.push(MotionEvent {
            event_id: ev.event_id,
            frames,
        });
    }
    Ok((
        MotionGame {
            game_id: raw.gameid,
            events,
        },
        skipped,
    ))
}

/// Parses a game file into a flat, time-ordered frame sequence.
///
/// Moments repeated across events (same quarter and wall time) are kept once.
pub fn parse_motion(bytes: &[u8]) -> Result<MotionParse> {
    let (game, skipped) = parse_motion_game(bytes)?;
    let mut frames: Vec<Frame> = game.events.into_iter().flat_map(|e| e.frames).collect();
    frames.sort_by_key(|f| f.wall_time_ms);
    frames.dedup_by(|b, a| a.wall_time_ms == b.wall_time_ms && a.quarter == b.quarter);
    Ok(MotionParse {
        game_id: game.game_id,
        frames,
        skipped,
    })
}

fn moment_to_frame(m: &Value) -> Result<Frame> {
    let arr = m
        .as_array()
        .filter(|a| a.len() >= 6)
        .ok_or_else(|| Error::rejected("moment is not a 6-element array"))?;
    let int = |v: &Value, what: &str| -> Result<i64> {
        v.as_i64()
            .or_else(|| v.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
            .ok_or_else(|| Error::rejected(format!("{what} is not an integer")))
    };
    let real = |v: &Value, what: &str| -> Result<f64> {
        v.as_f64()
            .ok_or_else(|| Error::rejected(format!("{what} is not a number")))
    };
    let quarter = int(&arr[0], "quarter")?;
    if quarter < 1 {
        return Err(Error::rejected(format!("quarter {quarter}")));
    }
    let wall_time_ms = int(&arr[1], "wall time")?;
    let game_clock_s = real(&arr[2], "game clock")?;
    let shot_clock_s = match &arr[3] {
        Value::Null => None,
        v => Some(real(v, "shot clock")?),
    };
    let rows = arr[5]
        .as_array()
        .ok_or_else(|| Error::rejected("position list missing"))?;
    let mut ball = None;
    let mut players = Vec::with_capacity(10);
    for row in rows {
        let r = row
            .as_array()
            .filter(|r| r.len() >= 5)
            .ok_or_else(|| Error::rejected("position row is not a 5-element array"))?;
        let team_id = int(&r[0], "team id")?;
        let player_id = int(&r[1], "player id")?;
        let (x, y, z) = (real(&r[2], "x")?, real(&r[3], "y")?, real(&r[4], "z")?);
        if team_id == BALL_TEAM_ID && ball.is_none() {
            ball = Some([x, y, z]);
        } else {
            // players are tracked in the ground plane
            players.push(PlayerPosition {
                team_id,
                player_id,
                x,
                y,
                z: 0.0,
            });
        }
    }
    let frame = Frame {
        quarter: quarter as u32,
        wall_time_ms,
        game_clock_s,
        shot_clock_s,
        ball: ball.ok_or_else(|| Error::rejected("no ball row"))?,
        players,
    };
    frame.validate()?;
    Ok(frame)
}

fn frame_to_moment(f: &Frame) -> Value {
    let mut rows = Vec::with_capacity(11);
    rows.push(json!([BALL_TEAM_ID, BALL_TEAM_ID, f.ball[0], f.ball[1], f.ball[2]]));
    for p in &f.players {
        rows.push(json!([p.team_id, p.player_id, p.x, p.y, p.z]));
    }
    json!([f.quarter, f.wall_time_ms, f.game_clock_s, f.shot_clock_s, null, rows])
}

pub fn write_motion(game: &MotionGame) -> String {
    let raw = RawGame {
        gameid: game.game_id.clone(),
        events: game
            .events
            .iter()
            .map(|e| RawEvent {
                event_id: e.event_id.clone(),
                moments: e.frames.iter().map(frame_to_moment).collect(),
            })
            .collect(),
    };
    serde_json::to_string(&raw).expect("motion game serializes")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn players_json(n: usize) -> String {
        (0..n)
            .map(|k| {
                format!(
                    "[{},{},{}.5,20.0,0.0]",
                    if k < 5 { 1610612737 } else { 1610612738 },
                    200 + k,
                    10 + k
                )
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    fn doc(moments: &[String]) -> String {
        format!(
            r#"{{"gameid":"0021500001","events":[{{"eventId":"1","moments":[{}]}}]}}"#,
            moments.join(",")
        )
    }

    fn moment(wall: i64, players: usize) -> String {
        format!(
            "[1,{wall},719.96,23.5,null,[[-1,-1,47.0,25.0,4.5],{}]]",
            players_json(players)
        )
    }

    #[test]
    fn empty_events() {
        let p = parse_motion(br#"{"gameid":"g","events":[]}"#).unwrap();
        assert!(p.frames.is_empty());
        assert_eq!(p.skipped, 0);
    }

    #[test]
    fn one_full_moment() {
        let p = parse_motion(doc(&[moment(1000, 10)]).as_bytes()).unwrap();
        assert_eq!(p.game_id, "0021500001");
        assert_eq!(p.frames.len(), 1);
        let f = &p.frames[0];
        assert_eq!(f.ball, [47.0, 25.0, 4.5]);
        assert_eq!(f.players.len(), 10);
        assert_eq!(f.shot_clock_s, Some(23.5));
        assert_eq!(f.game_clock_s, 719.96);
    }

    #[test]
    fn short_moment_is_skipped() {
        let p = parse_motion(doc(&[moment(1000, 9), moment(1040, 10)]).as_bytes()).unwrap();
        assert_eq!(p.frames.len(), 1);
        assert_eq!(p.skipped, 1);
    }

    #[test]
    fn frames_sorted_and_deduplicated() {
        let p = parse_motion(
            doc(&[moment(2000, 10), moment(1000, 10), moment(2000, 10)]).as_bytes(),
        )
        .unwrap();
        let walls: Vec<_> = p.frames.iter().map(|f| f.wall_time_ms).collect();
        assert_eq!(walls, vec![1000, 2000]);
    }

    #[test]
    fn fatal_error_reports_offset() {
        let text = b"{\"gameid\": \"g\",\n \"events\": [oops]}";
        match parse_motion(text) {
            Err(Error::Parse { offset, .. }) => assert_eq!(text[offset], b'o'),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_parse_roundtrips() {
        let text = doc(&[moment(1000, 10), moment(1040, 10)]);
        let (game, skipped) = parse_motion_game(text.as_bytes()).unwrap();
        assert_eq!(skipped, 0);
        let written = write_motion(&game);
        let (again, _) = parse_motion_game(written.as_bytes()).unwrap();
        assert_eq!(again, game);
        assert_eq!(write_motion(&again), written);
    }
}

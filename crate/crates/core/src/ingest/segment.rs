//! Splitting a game into possessions.
//!
//! Rules:
//! - A possession opens at the first frame after the previous reward-bearing
//!   event, or at the first frame of the period.
//! - It closes at the frame aligned with the next reward-bearing event. The
//!   aligned frame is the one whose game clock is nearest the event clock
//!   (latest frame on ties), and must lie within [`CLOCK_TOLERANCE_S`].
//! - Timeouts and substitutions discard the frames up to their aligned frame.
//! - A reward-bearing event that would open an empty span (free throws after
//!   a foul, an and-one) is attached to the preceding possession instead.
//! - The offense is the team most often nearest the ball over the span.

use log::debug;
use serde::{Deserialize, Serialize};

use super::reward::{label_reward, EventType, PbpEvent};
use crate::court::Frame;
use crate::error::{Error, Result};

pub const CLOCK_TOLERANCE_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PossessionRecord {
    pub game_id: String,
    /// Ordinal of the possession within its game.
    pub index: usize,
    pub start_frame_idx: usize,
    /// Exclusive.
    pub end_frame_idx: usize,
    pub offense_team_id: i64,
    pub terminal_event: PbpEvent,
    /// Later reward events credited to this possession (free throws etc).
    pub attached_events: Vec<PbpEvent>,
    pub reward_offense: f64,
    pub reward_defense: f64,
}

impl PossessionRecord {
    pub fn possession_ref(&self) -> String {
        format!("{}:{}", self.game_id, self.index)
    }

    pub fn frame_count(&self) -> usize {
        self.end_frame_idx - self.start_frame_idx
    }

    pub fn events(&self) -> impl Iterator<Item = &PbpEvent> {
        std::iter::once(&self.terminal_event).chain(&self.attached_events)
    }

    fn relabel(&mut self) {
        let offense = self.offense_team_id;
        self.reward_offense = self.events().map(|e| label_reward(e, offense)).sum();
        self.reward_defense = -self.reward_offense;
    }
}

struct QuarterIndex {
    quarter: u32,
    start: usize,
    end: usize,
    monotone: bool,
}

fn quarter_ranges(frames: &[Frame]) -> Vec<QuarterIndex> {
    let mut out: Vec<QuarterIndex> = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        match out.last_mut() {
            Some(q) if q.quarter == f.quarter && q.end == i => {
                q.monotone &= frames[i - 1].game_clock_s >= f.game_clock_s;
                q.end = i + 1;
            }
            _ => out.push(QuarterIndex {
                quarter: f.quarter,
                start: i,
                end: i + 1,
                monotone: true,
            }),
        }
    }
    out
}

fn describe(e: &PbpEvent) -> String {
    format!(
        "{} (Q{} {:.2}s, wall {})",
        e.event_type, e.quarter, e.game_clock_s, e.wall_time_ms
    )
}

/// Index of the frame aligned with the event clock.
fn align(frames: &[Frame], q: &QuarterIndex, event: &PbpEvent) -> Result<usize> {
    let c = event.game_clock_s;
    let span = &frames[q.start..q.end];
    let best = if q.monotone {
        // clocks are nonincreasing: candidates straddle the event clock
        let k = span.partition_point(|f| f.game_clock_s >= c);
        let mut cands = Vec::with_capacity(2);
        if k > 0 {
            cands.push(k - 1);
        }
        if k < span.len() {
            cands.push(k);
        }
        pick_nearest(span, c, cands.into_iter())
    } else {
        pick_nearest(span, c, 0..span.len())
    };
    let k = best.ok_or_else(|| Error::Alignment {
        event: describe(event),
        message: "no frames in period".into(),
    })?;
    let gap = (span[k].game_clock_s - c).abs();
    if gap > CLOCK_TOLERANCE_S {
        return Err(Error::Alignment {
            event: describe(event),
            message: format!(
                "nearest frame clock {:.2}s is {gap:.2}s away",
                span[k].game_clock_s
            ),
        });
    }
    Ok(q.start + k)
}

fn pick_nearest(span: &[Frame], c: f64, cands: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for k in cands {
        let d = (span[k].game_clock_s - c).abs();
        if best.is_none_or(|(bd, _)| d <= bd) {
            best = Some((d, k));
        }
    }
    best.map(|(_, k)| k)
}

fn majority_offense(frames: &[Frame], fallback: Option<i64>) -> Result<i64> {
    let teams = frames[0].team_ids()?;
    let mut counts = [0usize; 2];
    for f in frames {
        if let Some(t) = f.nearest_team_to_ball() {
            if t == teams[0] {
                counts[0] += 1;
            } else if t == teams[1] {
                counts[1] += 1;
            }
        }
    }
    Ok(match counts[0].cmp(&counts[1]) {
        std::cmp::Ordering::Greater => teams[0],
        std::cmp::Ordering::Less => teams[1],
        std::cmp::Ordering::Equal => fallback.unwrap_or(teams[0]),
    })
}

/// Segments one game's frames into possessions using its play-by-play.
///
/// `events` must be ordered as returned by `parse_pbp`.
pub fn segment_possessions(frames: &[Frame], events: &[PbpEvent]) -> Result<Vec<PossessionRecord>> {
    let quarters = quarter_ranges(frames);
    let mut out: Vec<PossessionRecord> = Vec::new();
    let mut current: Option<u32> = None;
    let mut cursor: Option<usize> = None;
    // possession that later zero-length events may attach to
    let mut open_tail: Option<usize> = None;

    for ev in events {
        if current != Some(ev.quarter) {
            current = Some(ev.quarter);
            cursor = quarters
                .iter()
                .find(|q| q.quarter == ev.quarter)
                .map(|q| q.start);
            open_tail = None;
        }
        let Some(q) = quarters.iter().find(|q| q.quarter == ev.quarter) else {
            if ev.event_type.is_reward_bearing() || ev.event_type.is_stoppage() {
                return Err(Error::Alignment {
                    event: describe(ev),
                    message: "no frames in period".into(),
                });
            }
            continue;
        };
        match ev.event_type {
            EventType::StartOfPeriod => {
                cursor = Some(q.start);
                open_tail = None;
            }
            EventType::EndOfPeriod => {
                cursor = None;
                open_tail = None;
            }
            EventType::JumpBall => {}
            t if t.is_stoppage() => {
                let m = align(frames, q, ev)?;
                if let Some(c) = cursor {
                    cursor = Some(c.max(m + 1));
                }
                open_tail = None;
            }
            _ => {
                let m = align(frames, q, ev)?;
                match cursor {
                    Some(c) if m + 1 > c => {
                        let span = &frames[c..m + 1];
                        let offense = majority_offense(span, ev.acting_team_id)?;
                        let mut rec = PossessionRecord {
                            game_id: ev.game_id.clone(),
                            index: out.len(),
                            start_frame_idx: c,
                            end_frame_idx: m + 1,
                            offense_team_id: offense,
                            terminal_event: ev.clone(),
                            attached_events: Vec::new(),
                            reward_offense: 0.0,
                            reward_defense: 0.0,
                        };
                        rec.relabel();
                        out.push(rec);
                        open_tail = Some(out.len() - 1);
                        cursor = Some(m + 1);
                    }
                    _ => match open_tail {
                        Some(k) => {
                            out[k].attached_events.push(ev.clone());
                            out[k].relabel();
                        }
                        None => debug!("dropping {} with no open possession", describe(ev)),
                    },
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::court::PlayerPosition;

    /// Ten frames per second of game clock, team 1 near the ball.
    fn mini_frames(quarter: u32, from: f64, n: usize) -> Vec<Frame> {
        (0..n)
            .map(|k| {
                let players = (0..10)
                    .map(|p| PlayerPosition {
                        team_id: if p < 5 { 1 } else { 2 },
                        player_id: p as i64,
                        x: 40.0 + p as f64 * 2.0,
                        y: 25.0,
                        z: 0.0,
                    })
                    .collect();
                Frame {
                    quarter,
                    wall_time_ms: (quarter as i64) * 1_000_000 + k as i64 * 100,
                    game_clock_s: from - k as f64 * 0.1,
                    shot_clock_s: None,
                    ball: [40.5, 25.0, 4.0],
                    players,
                }
            })
            .collect()
    }

    fn ev(kind: EventType, clock: f64, team: Option<i64>) -> PbpEvent {
        PbpEvent {
            game_id: "mini".into(),
            quarter: 1,
            game_clock_s: clock,
            wall_time_ms: 0,
            event_type: kind,
            acting_team_id: team,
            points: 0,
        }
    }

    #[test]
    fn single_score_is_one_possession() {
        // clocks 720.0, 719.9, ..., 710.1
        let frames = mini_frames(1, 720.0, 100);
        let events = [
            ev(EventType::StartOfPeriod, 720.0, None),
            ev(EventType::TwoPointerMade, 715.0, Some(1)),
            ev(EventType::EndOfPeriod, 710.0, None),
        ];
        let p = segment_possessions(&frames, &events).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].start_frame_idx, p[0].end_frame_idx), (0, 51));
        assert!((frames[50].game_clock_s - 715.0).abs() < 1e-9);
        assert_eq!(p[0].offense_team_id, 1);
        assert_eq!(p[0].reward_offense, 2.0);
        assert_eq!(p[0].reward_defense, -2.0);
    }

    #[test]
    fn timeout_span_is_excluded() {
        let frames = mini_frames(1, 720.0, 100);
        let events = [
            ev(EventType::StartOfPeriod, 720.0, None),
            ev(EventType::Timeout, 718.0, Some(1)),
            ev(EventType::TwoPointerMade, 715.0, Some(1)),
        ];
        let p = segment_possessions(&frames, &events).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].start_frame_idx, p[0].end_frame_idx), (21, 51));
    }

    #[test]
    fn period_markers_alone_yield_nothing() {
        let frames = mini_frames(1, 720.0, 100);
        let events = [
            ev(EventType::StartOfPeriod, 720.0, None),
            ev(EventType::EndOfPeriod, 710.1, None),
        ];
        assert!(segment_possessions(&frames, &events).unwrap().is_empty());
        assert!(segment_possessions(&frames, &[]).unwrap().is_empty());
    }

    #[test]
    fn free_throws_attach_to_the_foul() {
        let frames = mini_frames(1, 720.0, 100);
        let events = [
            ev(EventType::StartOfPeriod, 720.0, None),
            ev(EventType::Foul, 716.0, Some(1)),
            ev(EventType::FreeThrowMade, 716.0, Some(2)),
            ev(EventType::Turnover, 712.0, Some(2)),
        ];
        let p = segment_possessions(&frames, &events).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].attached_events.len(), 1);
        assert_eq!(p[0].reward_offense, -1.25);
        assert_eq!(p[1].start_frame_idx, p[0].end_frame_idx);
        assert_eq!(p[1].index, 1);
    }

    #[test]
    fn clock_mismatch_names_event() {
        let frames = mini_frames(1, 720.0, 100);
        let events = [ev(EventType::TwoPointerMade, 600.0, Some(1))];
        match segment_possessions(&frames, &events) {
            Err(Error::Alignment { event, .. }) => assert!(event.contains("2 pointer made")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frozen_clock_takes_latest_frame() {
        let mut frames = mini_frames(1, 720.0, 30);
        for f in &mut frames[10..20] {
            f.game_clock_s = 719.0;
        }
        let events = [ev(EventType::Turnover, 719.0, Some(1))];
        let p = segment_possessions(&frames, &events).unwrap();
        assert_eq!(p[0].end_frame_idx, 20);
    }

    #[test]
    fn spans_never_overlap() {
        let mut frames = mini_frames(1, 720.0, 200);
        frames.extend(mini_frames(2, 720.0, 200));
        let mut events = Vec::new();
        for q in 1..=2 {
            for k in 0..6 {
                let mut e = ev(
                    [EventType::Rebound, EventType::Timeout, EventType::TwoPointerMade][k % 3],
                    719.0 - 3.0 * k as f64,
                    Some(1 + (k as i64 % 2)),
                );
                e.quarter = q;
                events.push(e);
            }
        }
        let p = segment_possessions(&frames, &events).unwrap();
        assert!(!p.is_empty());
        let mut owned = vec![false; frames.len()];
        for r in &p {
            assert!(r.start_frame_idx < r.end_frame_idx);
            for o in &mut owned[r.start_frame_idx..r.end_frame_idx] {
                assert!(!*o);
                *o = true;
            }
        }
    }
}

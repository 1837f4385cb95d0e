//! Play-by-play event vocabulary and per-event rewards.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventType {
    StartOfPeriod,
    JumpBall,
    Rebound,
    Foul,
    Turnover,
    Timeout,
    Substitution,
    EndOfPeriod,
    Violation,
    ThreePointerMade,
    TwoPointerMade,
    FreeThrowMade,
}

impl EventType {
    pub const ALL: [EventType; 12] = [
        EventType::StartOfPeriod,
        EventType::JumpBall,
        EventType::Rebound,
        EventType::Foul,
        EventType::Turnover,
        EventType::Timeout,
        EventType::Substitution,
        EventType::EndOfPeriod,
        EventType::Violation,
        EventType::ThreePointerMade,
        EventType::TwoPointerMade,
        EventType::FreeThrowMade,
    ];

    /// The label used in play-by-play files.
    pub fn as_str(self) -> &'static str {
        match self {
            EventType::StartOfPeriod => "start of period",
            EventType::JumpBall => "jump ball",
            EventType::Rebound => "rebound",
            EventType::Foul => "foul",
            EventType::Turnover => "turnover",
            EventType::Timeout => "timeout",
            EventType::Substitution => "substitution",
            EventType::EndOfPeriod => "end of period",
            EventType::Violation => "violation",
            EventType::ThreePointerMade => "3 pointer made",
            EventType::TwoPointerMade => "2 pointer made",
            EventType::FreeThrowMade => "free-throw made",
        }
    }

    /// Reward to the acting team.
    pub fn base_reward(self) -> f64 {
        match self {
            EventType::Rebound => 0.25,
            EventType::Foul | EventType::Violation => -0.25,
            EventType::Turnover => -1.0,
            EventType::ThreePointerMade => 3.0,
            EventType::TwoPointerMade => 2.0,
            EventType::FreeThrowMade => 1.0,
            EventType::StartOfPeriod
            | EventType::JumpBall
            | EventType::Timeout
            | EventType::Substitution
            | EventType::EndOfPeriod => 0.0,
        }
    }

    /// Events that close a possession.
    pub fn is_reward_bearing(self) -> bool {
        self.base_reward() != 0.0
    }

    /// Stoppages whose frames are excluded from every possession.
    pub fn is_stoppage(self) -> bool {
        matches!(self, EventType::Timeout | EventType::Substitution)
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventType::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::rejected(format!("unknown event type {s:?}")))
    }
}

/// One play-by-play row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbpEvent {
    pub game_id: String,
    pub quarter: u32,
    pub game_clock_s: f64,
    pub wall_time_ms: i64,
    pub event_type: EventType,
    /// Committing team for fouls and violations, scoring team for baskets.
    pub acting_team_id: Option<i64>,
    pub points: u32,
}

/// Reward of `event` seen from `perspective_team_id`: the table value for the
/// acting team, its negation for the opponent.
pub fn label_reward(event: &PbpEvent, perspective_team_id: i64) -> f64 {
    let r = event.event_type.base_reward();
    if r == 0.0 {
        return 0.0;
    }
    match event.acting_team_id {
        Some(t) if t == perspective_team_id => r,
        _ => -r,
    }
}

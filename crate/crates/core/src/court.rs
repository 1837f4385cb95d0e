//! Court geometry and tracking frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames per second of the tracking feed.
pub const FRAME_RATE: f64 = 25.0;

pub const PLAYERS_PER_FRAME: usize = 10;
pub const PLAYERS_PER_TEAM: usize = 5;

/// Playing surface extents in feet, origin at one corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CourtSpec {
    pub length_ft: f64,
    pub width_ft: f64,
    pub max_height_ft: f64,
    /// Left basket first, right basket second.
    pub baskets: [[f64; 3]; 2],
}

impl Default for CourtSpec {
    /// NBA court: 94 x 50 ft, rims 10 ft high and 5.25 ft in from each baseline.
    fn default() -> Self {
        CourtSpec {
            length_ft: 94.0,
            width_ft: 50.0,
            max_height_ft: 20.0,
            baskets: [[5.25, 25.0, 10.0], [88.75, 25.0, 10.0]],
        }
    }
}

impl CourtSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.length_ft, self.width_ft, self.max_height_ft];
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::rejected(format!(
                "court dimensions must be positive, got {dims:?}"
            )));
        }
        for b in &self.baskets {
            if !(0.0..=self.length_ft).contains(&b[0]) {
                return Err(Error::rejected(format!(
                    "basket x {} outside [0, {}]",
                    b[0], self.length_ft
                )));
            }
        }
        Ok(())
    }

    /// Whether a 3D point lies inside the court volume.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0.0..=self.length_ft).contains(&p[0])
            && (0.0..=self.width_ft).contains(&p[1])
            && (0.0..=self.max_height_ft).contains(&p[2])
    }

    pub fn clamp(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0].clamp(0.0, self.length_ft),
            p[1].clamp(0.0, self.width_ft),
            p[2].clamp(0.0, self.max_height_ft),
        ]
    }

    pub fn clamp_xy(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0].clamp(0.0, self.length_ft), p[1].clamp(0.0, self.width_ft)]
    }

    /// Ground position of a basket (`side` 0 = left, 1 = right).
    pub fn basket_xy(&self, side: usize) -> [f64; 2] {
        let b = self.baskets[side.min(1)];
        [b[0], b[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerPosition {
    pub team_id: i64,
    pub player_id: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// One tracking snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub quarter: u32,
    pub wall_time_ms: i64,
    /// Counts down within a period.
    pub game_clock_s: f64,
    pub shot_clock_s: Option<f64>,
    pub ball: [f64; 3],
    pub players: Vec<PlayerPosition>,
}

impl Frame {
    /// Checks the ten-player, five-per-team and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        if self.players.len() != PLAYERS_PER_FRAME {
            return Err(Error::rejected(format!(
                "expected {PLAYERS_PER_FRAME} players, got {}",
                self.players.len()
            )));
        }
        let teams = self.team_ids()?;
        for t in teams {
            let n = self.players.iter().filter(|p| p.team_id == t).count();
            if n != PLAYERS_PER_TEAM {
                return Err(Error::rejected(format!("team {t} has {n} players")));
            }
        }
        let finite = self.ball.iter().all(|v| v.is_finite())
            && self
                .players
                .iter()
                .all(|p| p.x.is_finite() && p.y.is_finite() && p.z.is_finite())
            && self.game_clock_s.is_finite();
        if !finite {
            return Err(Error::rejected("non-finite coordinate"));
        }
        Ok(())
    }

    /// The two distinct team ids in ascending order.
    pub fn team_ids(&self) -> Result<[i64; 2]> {
        let mut ids: Vec<i64> = self.players.iter().map(|p| p.team_id).collect();
        ids.sort_unstable();
        ids.dedup();
        match ids.as_slice() {
            [a, b] => Ok([*a, *b]),
            _ => Err(Error::rejected(format!(
                "expected exactly two teams, got {ids:?}"
            ))),
        }
    }

    /// Players of one team sorted by player id.
    pub fn team(&self, team_id: i64) -> Vec<&PlayerPosition> {
        let mut v: Vec<_> = self.players.iter().filter(|p| p.team_id == team_id).collect();
        v.sort_by_key(|p| p.player_id);
        v
    }

    /// Team of the player closest to the ball in the ground plane.
    pub fn nearest_team_to_ball(&self) -> Option<i64> {
        self.players
            .iter()
            .map(|p| {
                let d = (p.x - self.ball[0]).powi(2) + (p.y - self.ball[1]).powi(2);
                (d, p.team_id)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, t)| t)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn frame_fixture() -> Frame {
        let players = (0..10)
            .map(|k| PlayerPosition {
                team_id: if k < 5 { 1 } else { 2 },
                player_id: 100 + k as i64,
                x: 10.0 + k as f64,
                y: 20.0,
                z: 0.0,
            })
            .collect();
        Frame {
            quarter: 1,
            wall_time_ms: 0,
            game_clock_s: 720.0,
            shot_clock_s: Some(24.0),
            ball: [10.5, 20.0, 4.0],
            players,
        }
    }

    #[test]
    fn default_court_is_valid() {
        CourtSpec::default().validate().unwrap();
    }

    #[test]
    fn court_rejects_bad_dims() {
        let c = CourtSpec {
            width_ft: 0.0,
            ..CourtSpec::default()
        };
        assert!(c.validate().is_err());
        let c = CourtSpec {
            baskets: [[-1.0, 25.0, 10.0], [88.75, 25.0, 10.0]],
            ..CourtSpec::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn frame_invariants() {
        let f = frame_fixture();
        f.validate().unwrap();
        assert_eq!(f.team_ids().unwrap(), [1, 2]);
        assert_eq!(f.nearest_team_to_ball(), Some(1));

        let mut short = f.clone();
        short.players.pop();
        assert!(short.validate().is_err());

        let mut lopsided = f.clone();
        lopsided.players[5].team_id = 1;
        assert!(lopsided.validate().is_err());

        let mut nan = f;
        nan.ball[2] = f64::NAN;
        assert!(nan.validate().is_err());
    }
}

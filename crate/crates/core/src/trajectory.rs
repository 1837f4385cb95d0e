//! Trajectory tensors and the fixed channel layout.
//!
//! Row `t` of a trajectory holds the 33 state columns (ball, five offensive
//! players, five defenders; x/y/z each) followed by 33 action columns with the
//! per-object velocities in the same object order.

use ndarray::{s, Array2, ArrayView1};

use crate::court::Frame;
use crate::error::{Error, Result};

pub const N_OBJECTS: usize = 11;
pub const STATE_DIM: usize = 3 * N_OBJECTS;
pub const ACTION_DIM: usize = 3 * N_OBJECTS;
pub const FEATURE_DIM: usize = STATE_DIM + ACTION_DIM;
/// Bumped whenever the column layout changes.
pub const LAYOUT_VERSION: u32 = 1;

pub type State = [f64; STATE_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Object {
    Ball,
    Offense(usize),
    Defense(usize),
}

impl Object {
    pub fn index(self) -> usize {
        match self {
            Object::Ball => 0,
            Object::Offense(k) => {
                assert!(k < 5, "offense slot {k}");
                1 + k
            }
            Object::Defense(k) => {
                assert!(k < 5, "defense slot {k}");
                6 + k
            }
        }
    }

    pub fn from_index(i: usize) -> Option<Object> {
        match i {
            0 => Some(Object::Ball),
            1..=5 => Some(Object::Offense(i - 1)),
            6..=10 => Some(Object::Defense(i - 6)),
            _ => None,
        }
    }

    pub fn all() -> impl Iterator<Item = Object> {
        (0..N_OBJECTS).filter_map(Object::from_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnKind {
    Position,
    Velocity,
}

pub fn state_column(obj: Object, axis: Axis) -> usize {
    3 * obj.index() + axis as usize
}

pub fn action_column(obj: Object, axis: Axis) -> usize {
    STATE_DIM + state_column(obj, axis)
}

/// Inverse of [`state_column`] / [`action_column`].
pub fn column_meaning(col: usize) -> Option<(ColumnKind, Object, Axis)> {
    if col >= FEATURE_DIM {
        return None;
    }
    let (kind, c) = if col < STATE_DIM {
        (ColumnKind::Position, col)
    } else {
        (ColumnKind::Velocity, col - STATE_DIM)
    };
    Some((kind, Object::from_index(c / 3)?, Axis::ALL[c % 3]))
}

/// Column range holding the five defenders' positions.
pub fn defense_state_columns() -> std::ops::Range<usize> {
    state_column(Object::Defense(0), Axis::X)..state_column(Object::Defense(4), Axis::Z) + 1
}

/// Whether values are in feet or in the [-1, 1] training space of a
/// particular set of normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Raw,
    Normalized { stats: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTensor {
    values: Array2<f64>,
    valid_len: usize,
    space: Space,
}

impl TrajectoryTensor {
    pub fn new(values: Array2<f64>, valid_len: usize, space: Space) -> Result<Self> {
        if values.ncols() != FEATURE_DIM {
            return Err(Error::rejected(format!(
                "trajectory has {} columns, expected {FEATURE_DIM}",
                values.ncols()
            )));
        }
        if valid_len < 1 || valid_len > values.nrows() {
            return Err(Error::rejected(format!(
                "valid_len {valid_len} outside [1, {}]",
                values.nrows()
            )));
        }
        Ok(TrajectoryTensor {
            values,
            valid_len,
            space,
        })
    }

    pub fn horizon(&self) -> usize {
        self.values.nrows()
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn is_normalized(&self) -> bool {
        matches!(self.space, Space::Normalized { .. })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.values.row(t)
    }

    pub fn state(&self, t: usize) -> State {
        let mut s = [0.0; STATE_DIM];
        for (dst, src) in s.iter_mut().zip(self.values.slice(s![t, ..STATE_DIM])) {
            *dst = *src;
        }
        s
    }

    pub fn position(&self, t: usize, obj: Object) -> [f64; 3] {
        let c = state_column(obj, Axis::X);
        [
            self.values[[t, c]],
            self.values[[t, c + 1]],
            self.values[[t, c + 2]],
        ]
    }

    pub(crate) fn with_space(mut self, space: Space) -> Self {
        self.space = space;
        self
    }
}

/// Encodes a frame as a state row with the given team in the offense slots.
///
/// Within each team players are ordered by player id.
pub fn state_from_frame(frame: &Frame, offense_team_id: i64) -> Result<State> {
    let teams = frame.team_ids()?;
    if !teams.contains(&offense_team_id) {
        return Err(Error::rejected(format!(
            "offense team {offense_team_id} not on court (teams {teams:?})"
        )));
    }
    let defense_team_id = if teams[0] == offense_team_id {
        teams[1]
    } else {
        teams[0]
    };
    let mut s = [0.0; STATE_DIM];
    s[..3].copy_from_slice(&frame.ball);
    for (slot, p) in frame.team(offense_team_id).iter().enumerate().take(5) {
        let c = state_column(Object::Offense(slot), Axis::X);
        s[c..c + 3].copy_from_slice(&[p.x, p.y, p.z]);
    }
    for (slot, p) in frame.team(defense_team_id).iter().enumerate().take(5) {
        let c = state_column(Object::Defense(slot), Axis::X);
        s[c..c + 3].copy_from_slice(&[p.x, p.y, p.z]);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn column_map_is_a_bijection() {
        let mut seen = HashSet::new();
        for obj in Object::all() {
            for axis in Axis::ALL {
                let sc = state_column(obj, axis);
                let ac = action_column(obj, axis);
                assert!(sc < STATE_DIM);
                assert!((STATE_DIM..FEATURE_DIM).contains(&ac));
                assert!(seen.insert(sc));
                assert!(seen.insert(ac));
                assert_eq!(column_meaning(sc), Some((ColumnKind::Position, obj, axis)));
                assert_eq!(column_meaning(ac), Some((ColumnKind::Velocity, obj, axis)));
            }
        }
        assert_eq!(seen.len(), FEATURE_DIM);
        assert_eq!(column_meaning(FEATURE_DIM), None);
    }

    #[test]
    fn documented_layout() {
        assert_eq!(state_column(Object::Ball, Axis::X), 0);
        assert_eq!(state_column(Object::Offense(0), Axis::X), 3);
        assert_eq!(state_column(Object::Defense(0), Axis::X), 18);
        assert_eq!(action_column(Object::Ball, Axis::Z), 35);
        assert_eq!(defense_state_columns(), 18..33);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(TrajectoryTensor::new(Array2::zeros((4, 65)), 1, Space::Raw).is_err());
        assert!(TrajectoryTensor::new(Array2::zeros((4, FEATURE_DIM)), 0, Space::Raw).is_err());
        assert!(TrajectoryTensor::new(Array2::zeros((4, FEATURE_DIM)), 5, Space::Raw).is_err());
    }

    #[test]
    fn offense_goes_first() {
        use crate::court::PlayerPosition;
        let players = (0..10)
            .map(|k| PlayerPosition {
                team_id: if k < 5 { 7 } else { 3 },
                player_id: 10 - k as i64,
                x: k as f64,
                y: 0.0,
                z: 0.0,
            })
            .collect();
        let f = Frame {
            quarter: 1,
            wall_time_ms: 0,
            game_clock_s: 1.0,
            shot_clock_s: None,
            ball: [1.0, 2.0, 3.0],
            players,
        };
        let s = state_from_frame(&f, 7).unwrap();
        assert_eq!(&s[..3], &[1.0, 2.0, 3.0]);
        // team 7 holds x = 0..4 with descending ids, so sorted ids reverse them
        assert_eq!(s[state_column(Object::Offense(0), Axis::X)], 4.0);
        assert_eq!(s[state_column(Object::Defense(0), Axis::X)], 9.0);
        assert!(state_from_frame(&f, 99).is_err());
    }
}

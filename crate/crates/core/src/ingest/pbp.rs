//! Play-by-play CSV reader and writer.

use std::fmt::Write as _;

use super::reward::{EventType, PbpEvent};
use crate::error::{Error, Result};

pub const PBP_HEADER: [&str; 7] = [
    "game_id",
    "quarter",
    "game_clock_s",
    "wall_time_ms",
    "event_type",
    "acting_team_id",
    "points",
];

/// Parses a play-by-play CSV. Events come back ordered by quarter, then by
/// descending game clock; rows that tie keep file order.
///
/// Errors carry the 1-based file line of the offending row.
pub fn parse_pbp(bytes: &[u8]) -> Result<Vec<PbpEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header = rdr.headers()?.clone();
    if header.iter().ne(PBP_HEADER.iter().copied()) {
        return Err(Error::Row {
            row: 1,
            message: format!("expected header {}, got {:?}", PBP_HEADER.join(","), header),
        });
    }
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row_err = |message: String| Error::Row { row: line, message };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| row_err(format!("{}: bad number {:?}", PBP_HEADER[i], field(i))))
        };
        let event_type: EventType = field(4)
            .parse()
            .map_err(|_| row_err(format!("unknown event_type {:?}", field(4))))?;
        let acting_team_id = match field(5) {
            "" => None,
            s => Some(
                s.parse::<i64>()
                    .map_err(|_| row_err(format!("bad acting_team_id {s:?}")))?,
            ),
        };
        if acting_team_id.is_none() && event_type.is_reward_bearing() {
            return Err(row_err(format!("{event_type} without acting team")));
        }
        let quarter = field(1)
            .parse::<u32>()
            .map_err(|_| row_err(format!("bad quarter {:?}", field(1))))?;
        let wall_time_ms = field(3)
            .parse::<i64>()
            .map_err(|_| row_err(format!("bad wall_time_ms {:?}", field(3))))?;
        let points = field(6)
            .parse::<u32>()
            .map_err(|_| row_err(format!("bad points {:?}", field(6))))?;
        let game_clock_s = num(2)?;
        if !game_clock_s.is_finite() {
            return Err(row_err("non-finite game clock".into()));
        }
        events.push(PbpEvent {
            game_id: field(0).to_string(),
            quarter,
            game_clock_s,
            wall_time_ms,
            event_type,
            acting_team_id,
            points,
        });
    }
    events.sort_by(|a, b| {
        a.quarter
            .cmp(&b.quarter)
            .then(b.game_clock_s.total_cmp(&a.game_clock_s))
    });
    Ok(events)
}

/// Writes events in the order given using shortest round-trip float text.
pub fn write_pbp(events: &[PbpEvent]) -> String {
    let mut out = PBP_HEADER.join(",");
    out.push('\n');
    for e in events {
        let team = e.acting_team_id.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.game_id, e.quarter, e.game_clock_s, e.wall_time_ms, e.event_type, team, e.points
        );
    }
    out
}

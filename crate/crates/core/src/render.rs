//! SVG court diagrams of possessions.
//!
//! The document has three named groups: `court` (outline and markings),
//! `traces` (one polyline per object, ball first) and `markers` (start
//! circles, end glyphs and out-of-bounds dots).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::court::CourtSpec;
use crate::error::{Error, Result};
use crate::trajectory::{state_column, Axis, Object, Space, TrajectoryTensor, N_OBJECTS, STATE_DIM};

const MARGIN_PX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Glyph {
    #[default]
    Diamond,
    Square,
    Cross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderStyle {
    pub offense_color: String,
    pub defense_color: String,
    pub ball_color: String,
    pub out_of_bounds_color: String,
    /// Object index (0 ball, 1-5 offense, 6-10 defense) drawn emphasized.
    pub highlight_object: Option<usize>,
    pub end_marker: Glyph,
    pub width_px: u32,
    pub height_px: u32,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            offense_color: "#d62728".into(),
            defense_color: "#1f77b4".into(),
            ball_color: "#ff7f0e".into(),
            out_of_bounds_color: "#9467bd".into(),
            highlight_object: None,
            end_marker: Glyph::Diamond,
            width_px: 940,
            height_px: 500,
        }
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<()> {
        let colors = [
            &self.offense_color,
            &self.defense_color,
            &self.ball_color,
            &self.out_of_bounds_color,
        ];
        for (i, a) in colors.iter().enumerate() {
            if a.is_empty() || a.contains(['"', '<', '>', '&']) {
                return Err(Error::rejected(format!("invalid color {a:?}")));
            }
            for b in &colors[..i] {
                if a.eq_ignore_ascii_case(b) {
                    return Err(Error::rejected(format!("colors must be distinct, {a:?} repeats")));
                }
            }
        }
        if self.width_px < 100 || self.height_px < 100 {
            return Err(Error::rejected(format!(
                "image must be at least 100x100, got {}x{}",
                self.width_px, self.height_px
            )));
        }
        if let Some(k) = self.highlight_object {
            if k >= N_OBJECTS {
                return Err(Error::rejected(format!("highlight object {k} out of range")));
            }
        }
        Ok(())
    }

    fn color(&self, obj: Object) -> &str {
        match obj {
            Object::Ball => &self.ball_color,
            Object::Offense(_) => &self.offense_color,
            Object::Defense(_) => &self.defense_color,
        }
    }
}

struct Canvas {
    scale: f64,
    court: CourtSpec,
}

impl Canvas {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (MARGIN_PX + x * self.scale, MARGIN_PX + (self.court.width_ft - y) * self.scale)
    }

    fn pt(&self, x: f64, y: f64) -> String {
        let (a, b) = self.px(x, y);
        format!("{a:.2},{b:.2}")
    }
}

fn label(obj: Object) -> String {
    match obj {
        Object::Ball => "ball".into(),
        Object::Offense(k) => format!("offense{k}"),
        Object::Defense(k) => format!("defense{k}"),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_court(out: &mut String, c: &Canvas) {
    let court = &c.court;
    let s = c.scale;
    let (x0, y0) = c.px(0.0, court.width_ft);
    let _ = writeln!(out, r##"<g id="court" fill="none" stroke="#555555" stroke-width="1.50">"##);
    let _ = writeln!(
        out,
        r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}"/>"#,
        court.length_ft * s,
        court.width_ft * s
    );
    let mid = court.length_ft / 2.0;
    let (mx, my0) = c.px(mid, 0.0);
    let my1 = c.px(mid, court.width_ft).1;
    let _ = writeln!(out, r#"<line x1="{mx:.2}" y1="{my0:.2}" x2="{mx:.2}" y2="{my1:.2}"/>"#);
    let (cx, cy) = c.px(mid, court.width_ft / 2.0);
    let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}"/>"#, 6.0 * s);
    for (side, b) in court.baskets.iter().enumerate() {
        let (bx, by) = c.px(b[0], b[1]);
        let _ = writeln!(out, r#"<circle cx="{bx:.2}" cy="{by:.2}" r="{:.2}"/>"#, 0.75 * s);
        // Lane: 16 ft wide, 19 ft from the baseline.
        let lane_x = if side == 0 { 0.0 } else { court.length_ft - 19.0 };
        let (lx, ly) = c.px(lane_x, b[1] + 8.0);
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.2}" y="{ly:.2}" width="{:.2}" height="{:.2}"/>"#,
            19.0 * s,
            16.0 * s
        );
        let r = 23.75;
        let dy = (r * r - (b[1] - 3.0).powi(2)).max(0.0).sqrt();
        let dir = if side == 0 { 1.0 } else { -1.0 };
        let corner_x = b[0] + dir * dy;
        let base_x = if side == 0 { 0.0 } else { court.length_ft };
        let sweep = if side == 0 { 1 } else { 0 };
        let _ = writeln!(
            out,
            r#"<path d="M {} L {} A {:.2} {:.2} 0 0 {sweep} {} L {}"/>"#,
            c.pt(base_x, 3.0),
            c.pt(corner_x, 3.0),
            r * s,
            r * s,
            c.pt(corner_x, court.width_ft - 3.0),
            c.pt(base_x, court.width_ft - 3.0)
        );
    }
    out.push_str("</g>\n");
}

fn glyph(out: &mut String, g: Glyph, x: f64, y: f64, r: f64, color: &str, obj: &str) {
    let _ = match g {
        Glyph::Diamond => writeln!(
            out,
            r#"<polygon class="end" data-object="{obj}" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x,
            y - r,
            x + r,
            y,
            x,
            y + r,
            x - r,
            y
        ),
        Glyph::Square => writeln!(
            out,
            r#"<rect class="end" data-object="{obj}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        Glyph::Cross => writeln!(
            out,
            r#"<path class="end" data-object="{obj}" d="M {:.2} {:.2} L {:.2} {:.2} M {:.2} {:.2} L {:.2} {:.2}" stroke="{color}" stroke-width="2.00"/>"#,
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        ),
    };
}

/// SVG text for a raw (denormalized) trajectory. `metadata` is embedded
/// verbatim (escaped) in a `<metadata>` element.
pub fn render_svg(traj: &TrajectoryTensor, court: &CourtSpec, style: &RenderStyle, metadata: Option<&str>) -> Result<String> {
    style.validate()?;
    court.validate()?;
    if traj.space() != Space::Raw {
        return Err(Error::rejected("render expects a denormalized trajectory"));
    }
    let v = traj.values();
    for ((t, c), x) in v.indexed_iter() {
        if c < STATE_DIM && !x.is_finite() {
            return Err(Error::rejected(format!("non-finite coordinate at row {t}, column {c}")));
        }
    }
    let rows = traj.valid_len().max(1);
    let scale = ((style.width_px as f64 - 2.0 * MARGIN_PX) / court.length_ft)
        .min((style.height_px as f64 - 2.0 * MARGIN_PX) / court.width_ft);
    let canvas = Canvas { scale, court: *court };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = style.width_px,
        h = style.height_px
    );
    if let Some(m) = metadata {
        let _ = writeln!(out, "<metadata>{}</metadata>", escape(m));
    }
    draw_court(&mut out, &canvas);

    out.push_str("<g id=\"traces\" fill=\"none\">\n");
    for obj in Object::all() {
        let c = state_column(obj, Axis::X);
        let pts: Vec<String> = (0..rows).map(|t| canvas.pt(v[[t, c]], v[[t, c + 1]])).collect();
        let highlight = style.highlight_object == Some(obj.index());
        let _ = writeln!(
            out,
            r#"<polyline class="{}" data-object="{}" stroke="{}" stroke-width="{}" points="{}"/>"#,
            if highlight { "trace highlight" } else { "trace" },
            label(obj),
            style.color(obj),
            if highlight { "3.00" } else { "1.50" },
            pts.join(" ")
        );
    }
    out.push_str("</g>\n");

    out.push_str("<g id=\"markers\">\n");
    let r = (0.8 * scale).max(2.0);
    for obj in Object::all() {
        let c = state_column(obj, Axis::X);
        let name = label(obj);
        let color = style.color(obj);
        let (sx, sy) = canvas.px(v[[0, c]], v[[0, c + 1]]);
        let _ = writeln!(
            out,
            r#"<circle class="start" data-object="{name}" cx="{sx:.2}" cy="{sy:.2}" r="{r:.2}" fill="{color}"/>"#
        );
        let (ex, ey) = canvas.px(v[[rows - 1, c]], v[[rows - 1, c + 1]]);
        glyph(&mut out, style.end_marker, ex, ey, r, color, &name);
    }
    let bounds = [court.length_ft, court.width_ft, court.max_height_ft];
    for t in 0..rows {
        for obj in Object::all() {
            let c = state_column(obj, Axis::X);
            if (0..3).any(|d| !(0.0..=bounds[d]).contains(&v[[t, c + d]])) {
                let (x, y) = canvas.px(v[[t, c]], v[[t, c + 1]]);
                let _ = writeln!(
                    out,
                    r#"<circle class="oob" data-object="{}" data-row="{t}" cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="{}"/>"#,
                    label(obj),
                    r / 2.0,
                    style.out_of_bounds_color
                );
            }
        }
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

/// Writes [`render_svg`] output to `path`.
pub fn render_possession(
    traj: &TrajectoryTensor,
    court: &CourtSpec,
    style: &RenderStyle,
    path: &Path,
    metadata: Option<&str>,
) -> Result<()> {
    let svg = render_svg(traj, court, style, metadata)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::trajectory_from_states;
    use crate::trajectory::State;

    fn stationary(h: usize) -> TrajectoryTensor {
        let mut s: State = [0.0; STATE_DIM];
        for (k, obj) in Object::all().enumerate() {
            let c = state_column(obj, Axis::X);
            s[c] = 10.0 + 5.0 * k as f64;
            s[c + 1] = 25.0;
        }
        trajectory_from_states(&vec![s; h], h).unwrap()
    }

    #[test]
    fn stationary_possession_has_point_traces() {
        let svg = render_svg(&stationary(5), &CourtSpec::default(), &RenderStyle::default(), None).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 11);
        assert_eq!(svg.matches("class=\"start\"").count(), 11);
        assert_eq!(svg.matches("class=\"end\"").count(), 11);
        assert_eq!(svg.matches("class=\"oob\"").count(), 0);
        for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
            let pts = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
            let first = pts.split(' ').next().unwrap();
            assert!(pts.split(' ').all(|p| p == first));
        }
    }

    #[test]
    fn out_of_bounds_points_are_drawn_and_tinted() {
        let mut t = stationary(3);
        t.values_mut()[[2, 0]] = -5.0;
        let style = RenderStyle::default();
        let svg = render_svg(&t, &CourtSpec::default(), &style, None).unwrap();
        assert_eq!(svg.matches("class=\"oob\"").count(), 1);
        assert!(svg.contains(&format!("fill=\"{}\"", style.out_of_bounds_color)));
        assert!(svg.contains("cx=\"-"), "drawn beyond the outline, not clipped");
    }

    #[test]
    fn nan_is_rejected_with_index() {
        let mut t = stationary(3);
        t.values_mut()[[1, 4]] = f64::NAN;
        let err = render_svg(&t, &CourtSpec::default(), &RenderStyle::default(), None).unwrap_err();
        assert!(err.to_string().contains("row 1, column 4"), "{err}");
    }

    #[test]
    fn style_validation() {
        let same = RenderStyle {
            defense_color: "#D62728".into(),
            ..RenderStyle::default()
        };
        assert!(same.validate().is_err());
        let tiny = RenderStyle {
            width_px: 99,
            ..RenderStyle::default()
        };
        assert!(tiny.validate().is_err());
    }

    #[test]
    fn highlight_and_metadata() {
        let style = RenderStyle {
            highlight_object: Some(3),
            end_marker: Glyph::Cross,
            ..RenderStyle::default()
        };
        let svg = render_svg(&stationary(2), &CourtSpec::default(), &style, Some("{\"a\":\"<b>\"}")).unwrap();
        assert_eq!(svg.matches("trace highlight").count(), 1);
        assert!(svg.contains("data-object=\"offense2\" stroke=\"#d62728\" stroke-width=\"3.00\""));
        assert!(svg.contains("<metadata>{\"a\":\"&lt;b&gt;\"}</metadata>"));
    }
}

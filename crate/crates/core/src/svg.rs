//! Heatmaps of grid fields as standalone SVG.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_grid_csv, FieldGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    Viridis,
    /// Blue through white to red.
    Diverging,
    Gray,
}

const VIRIDIS: [[u8; 3]; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];
const DIVERGING: [[u8; 3]; 3] = [[59, 76, 192], [240, 240, 240], [180, 4, 38]];
const GRAY: [[u8; 3]; 2] = [[16, 16, 16], [245, 245, 245]];
/// Fill for NaN cells.
pub const MISSING: &str = "#9e9e9e";

impl Palette {
    fn stops(self) -> &'static [[u8; 3]] {
        match self {
            Palette::Viridis => &VIRIDIS,
            Palette::Diverging => &DIVERGING,
            Palette::Gray => &GRAY,
        }
    }

    /// Color at `t ∈ [0, 1]` as `#rrggbb`.
    pub fn color(self, t: f64) -> String {
        let stops = self.stops();
        let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
        let i = (t.floor() as usize).min(stops.len() - 2);
        let f = t - i as f64;
        let c: Vec<u8> = (0..3)
            .map(|k| (stops[i][k] as f64 + f * (stops[i + 1][k] as f64 - stops[i][k] as f64)).round() as u8)
            .collect();
        format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
    }
}

/// One `<rect>` per grid cell; row 0 is drawn at the bottom. NaN cells are gray.
pub fn render_heatmap(grid: &FieldGrid, palette: Palette, caption: &str) -> Result<String> {
    if grid.rows == 0 || grid.cols == 0 {
        return Err(Error::Data("cannot draw an empty grid".into()));
    }
    let finite = grid.values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let span = hi - lo;
    let px = (480 / grid.rows.max(grid.cols)).max(1);
    let (w, h) = (grid.cols * px, grid.rows * px);
    let bar_x = w + 16;
    let total_w = bar_x + 90;
    let total_h = h + 40;

    let mut s = String::with_capacity(grid.values.len() * 64 + 1024);
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" viewBox="0 0 {total_w} {total_h}">"#
    )
    .expect("write to string");
    s.push_str("<defs><linearGradient id=\"bar\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">");
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        write!(s, r#"<stop offset="{t}" stop-color="{}"/>"#, palette.color(t)).expect("write to string");
    }
    s.push_str("</linearGradient></defs>\n<g shape-rendering=\"crispEdges\">\n");
    for r in 0..grid.rows {
        let y = (grid.rows - 1 - r) * px;
        for c in 0..grid.cols {
            let v = grid.at(r, c);
            let fill = if v.is_finite() {
                palette.color(if span > 0.0 { (v - lo) / span } else { 0.5 })
            } else {
                MISSING.to_string()
            };
            writeln!(s, r#"<rect x="{}" y="{y}" width="{px}" height="{px}" fill="{fill}"/>"#, c * px).expect("write to string");
        }
    }
    s.push_str("</g>\n");
    writeln!(s, r#"<rect class="colorbar" x="{bar_x}" y="0" width="16" height="{h}" fill="url(#bar)" stroke="black"/>"#).expect("write to string");
    let label = |v: f64| format!("{v:.3e}");
    writeln!(
        s,
        r#"<text x="{}" y="10" font-size="11" font-family="sans-serif">{}</text>"#,
        bar_x + 20,
        label(hi)
    )
    .expect("write to string");
    writeln!(
        s,
        r#"<text x="{}" y="{h}" font-size="11" font-family="sans-serif">{}</text>"#,
        bar_x + 20,
        label(lo)
    )
    .expect("write to string");
    writeln!(
        s,
        r#"<text x="0" y="{}" font-size="13" font-family="sans-serif">{}</text>"#,
        h + 24,
        escape(caption)
    )
    .expect("write to string");
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_heatmap(grid: &FieldGrid, palette: Palette, caption: &str, path: &Path) -> Result<()> {
    crate::io::write_text(path, &render_heatmap(grid, palette, caption)?)
}

/// Read a CSV grid and draw it.
pub fn emit_heatmap_from_csv(csv: &Path, palette: Palette, caption: &str, path: &Path) -> Result<()> {
    emit_heatmap(&read_grid_csv(csv)?, palette, caption, path)
}

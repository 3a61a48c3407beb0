//! Static SVG scatter plots of 2-D embeddings.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{GraeError, Result};
use crate::matrix::DenseMatrix;

/// Viridis anchor colors, evenly spaced over [0, 1].
const VIRIDIS: [[u8; 3]; 9] = [
    [0x44, 0x01, 0x54],
    [0x47, 0x2c, 0x7a],
    [0x3b, 0x51, 0x8b],
    [0x2c, 0x71, 0x8e],
    [0x21, 0x90, 0x8d],
    [0x27, 0xad, 0x81],
    [0x5c, 0xc8, 0x63],
    [0xaa, 0xdc, 0x32],
    [0xfd, 0xe7, 0x25],
];

pub const TRAIN_GRAY: &str = "#c8c8c8";

/// Color at position `u ∈ [0, 1]` of the ramp (clamped).
pub fn viridis(u: f64) -> String {
    let u = if u.is_finite() { u.clamp(0.0, 1.0) } else { 0.0 };
    let pos = u * (VIRIDIS.len() - 1) as f64;
    let k = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - k as f64;
    let c: Vec<u8> = (0..3)
        .map(|ch| {
            let a = VIRIDIS[k][ch] as f64;
            let b = VIRIDIS[k + 1][ch] as f64;
            (a + f * (b - a)).round() as u8
        })
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

#[derive(Clone, Debug)]
pub struct ScatterStyle {
    pub size: f64,
    pub margin: f64,
    pub radius: f64,
    pub title: Option<String>,
}

impl Default for ScatterStyle {
    fn default() -> Self {
        ScatterStyle {
            size: 600.0,
            margin: 20.0,
            radius: 2.5,
            title: None,
        }
    }
}

/// Renders an SVG scatter. Points are colored by `color_values` through the
/// viridis ramp; when `test_mask` is given, points with `false` are drawn
/// gray underneath the colored ones.
pub fn scatter_svg(
    coords: &DenseMatrix,
    color_values: &[f64],
    test_mask: Option<&[bool]>,
    style: &ScatterStyle,
) -> Result<String> {
    if coords.cols() != 2 {
        return Err(GraeError::shape(format!(
            "scatter plots need 2-D coordinates, got {}",
            coords.cols()
        )));
    }
    let n = coords.rows();
    if color_values.len() != n || test_mask.is_some_and(|m| m.len() != n) {
        return Err(GraeError::shape("colors and mask must have one entry per point"));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in coords.row_iter() {
        x0 = x0.min(r[0]);
        x1 = x1.max(r[0]);
        y0 = y0.min(r[1]);
        y1 = y1.max(r[1]);
    }
    let span = (x1 - x0).max(y1 - y0);
    let span = if span > 0.0 && span.is_finite() { span } else { 1.0 };
    let inner = style.size - 2.0 * style.margin;
    let cx = 0.5 * (x0 + x1);
    let cy = 0.5 * (y0 + y1);
    let px = |x: f64| style.size / 2.0 + (x - cx) / span * inner;
    let py = |y: f64| style.size / 2.0 - (y - cy) / span * inner;

    let colored: Vec<f64> = (0..n)
        .filter(|&i| test_mask.is_none_or(|m| m[i]))
        .map(|i| color_values[i])
        .collect();
    let lo = colored.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = colored.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{0}" viewBox="0 0 {0} {0}">"#,
        style.size
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(t) = &style.title {
        let _ = writeln!(
            s,
            r#"<title>{}</title>"#,
            t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
        );
    }
    let mut circle = |i: usize, fill: &str| {
        let r = coords.row(i);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{}" fill="{fill}"/>"#,
            px(r[0]),
            py(r[1]),
            style.radius
        );
    };
    if let Some(m) = test_mask {
        for i in (0..n).filter(|&i| !m[i]) {
            circle(i, TRAIN_GRAY);
        }
    }
    for i in (0..n).filter(|&i| test_mask.is_none_or(|m| m[i])) {
        circle(i, &viridis(norm(color_values[i])));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes [`scatter_svg`] output to `out_path`.
pub fn emit_scatter(
    coords: &DenseMatrix,
    color_values: &[f64],
    test_mask: Option<&[bool]>,
    out_path: &Path,
) -> Result<()> {
    let svg = scatter_svg(coords, color_values, test_mask, &ScatterStyle::default())?;
    std::fs::write(out_path, svg)?;
    Ok(())
}

//! Deterministic SVG rendering of summary bars, beeswarms and decision
//! plots on a fixed 900×600 canvas.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::{jitter, DecisionPathData, SummaryData};

pub const WIDTH: f64 = 900.0;
pub const HEIGHT: f64 = 600.0;
const LEFT: f64 = 230.0;
const RIGHT: f64 = 40.0;
const TOP: f64 = 60.0;
const BOTTOM: f64 = 70.0;
/// Decision plots show this many leading features; the rest collapse into
/// one final step.
pub const DECISION_STEPS: usize = 20;

#[derive(Debug, Clone, Copy)]
pub enum Plot<'a> {
    /// Mean |φ| per ranked feature.
    Bar(&'a SummaryData),
    /// One dot per (row, ranked feature), coloured by feature value.
    Beeswarm(&'a SummaryData),
    Decision(&'a DecisionPathData),
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Blue (low) to red (high).
fn colour(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(0.0, 255.0), lerp(139.0, 0.0), lerp(251.0, 82.0))
}

struct Canvas {
    out: String,
}

impl Canvas {
    fn new(title: &str) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text class="title" x="{:.2}" y="30" font-size="18" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        Canvas { out }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        let _ = writeln!(self.out, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" {style}/>"#);
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, s: &str) {
        let _ = writeln!(
            self.out,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    /// Horizontal value axis with five ticks and a label, plus category
    /// labels down the left edge.
    fn axes(&mut self, lo: f64, hi: f64, label: &str, categories: &[(f64, String)]) {
        self.out.push_str("<g class=\"axis\">\n");
        let y = HEIGHT - BOTTOM;
        self.line(LEFT, y, WIDTH - RIGHT, y, r#"stroke="black""#);
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            let x = scale(v, lo, hi);
            self.line(x, y, x, y + 5.0, r#"stroke="black""#);
            self.text(x, y + 20.0, "middle", 11, &format!("{v:.3}"));
        }
        self.text((LEFT + WIDTH - RIGHT) / 2.0, HEIGHT - 20.0, "middle", 13, label);
        for (cy, name) in categories {
            self.text(LEFT - 8.0, cy + 4.0, "end", 12, name);
        }
        self.out.push_str("</g>\n");
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn scale(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        LEFT + (v - lo) / (hi - lo) * (WIDTH - LEFT - RIGHT)
    } else {
        (LEFT + WIDTH - RIGHT) / 2.0
    }
}

/// Vertical centre of category `i` of `n`, top to bottom.
fn row_y(i: usize, n: usize) -> f64 {
    let h = (HEIGHT - TOP - BOTTOM) / n as f64;
    TOP + h * (i as f64 + 0.5)
}

fn bar(data: &SummaryData, title: &str) -> Result<String> {
    let n = data.ranking.len();
    if n == 0 {
        return Err(Error::Render("empty ranking".into()));
    }
    let hi = data.ranking.iter().map(|e| e.mean_abs).fold(0.0, f64::max);
    let hi = if hi > 0.0 { hi } else { 1.0 };
    let mut c = Canvas::new(title);
    let band = (HEIGHT - TOP - BOTTOM) / n as f64;
    c.out.push_str("<g class=\"bars\">\n");
    for (i, e) in data.ranking.iter().enumerate() {
        let y = row_y(i, n) - 0.35 * band;
        let w = scale(e.mean_abs, 0.0, hi) - LEFT;
        let _ = writeln!(
            c.out,
            r##"<rect class="bar" x="{LEFT:.2}" y="{y:.2}" width="{w:.2}" height="{:.2}" fill="#ff0052"/>"##,
            0.7 * band
        );
    }
    c.out.push_str("</g>\n");
    let cats: Vec<(f64, String)> = data.ranking.iter().enumerate().map(|(i, e)| (row_y(i, n), e.name.clone())).collect();
    c.axes(0.0, hi, "mean(|SHAP value|)", &cats);
    Ok(c.finish())
}

fn beeswarm(data: &SummaryData, title: &str) -> Result<String> {
    let n = data.ranking.len();
    if n == 0 {
        return Err(Error::Render("empty ranking".into()));
    }
    let lo = data.points.iter().map(|p| p.phi).fold(0.0, f64::min);
    let hi = data.points.iter().map(|p| p.phi).fold(0.0, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (-1.0, 1.0) };
    let band = (HEIGHT - TOP - BOTTOM) / n as f64;
    let mut c = Canvas::new(title);
    c.line(scale(0.0, lo, hi), TOP, scale(0.0, lo, hi), HEIGHT - BOTTOM, r##"stroke="#999999" stroke-dasharray="4 3""##);
    c.out.push_str("<g class=\"points\">\n");
    for (i, e) in data.ranking.iter().enumerate() {
        for p in data.points.iter().filter(|p| p.feature == e.feature) {
            let x = scale(p.phi, lo, hi);
            let y = row_y(i, n) + 0.7 * band * jitter(p.row, p.feature);
            let _ = writeln!(
                c.out,
                r#"<circle class="dot" cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{}" fill-opacity="0.8"/>"#,
                colour(p.value)
            );
        }
    }
    c.out.push_str("</g>\n");
    let cats: Vec<(f64, String)> = data.ranking.iter().enumerate().map(|(i, e)| (row_y(i, n), e.name.clone())).collect();
    c.axes(lo, hi, "SHAP value (impact on model output)", &cats);
    // colour legend
    c.out.push_str("<g class=\"legend\">\n");
    c.text(WIDTH - RIGHT + 10.0, TOP, "start", 10, "high");
    c.text(WIDTH - RIGHT + 10.0, HEIGHT - BOTTOM, "start", 10, "low");
    let _ = writeln!(
        c.out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">feature value (red=high, blue=low)</text>"#,
        WIDTH - RIGHT / 2.0 - 60.0,
        TOP - 10.0
    );
    c.out.push_str("</g>\n");
    Ok(c.finish())
}

/// Step labels and cumulative values of one path, truncated to
/// [`DECISION_STEPS`] plus a collapsed remainder.
fn decision_steps(data: &DecisionPathData, p: usize) -> Vec<(String, f64)> {
    let path = &data.paths[p];
    let mut steps: Vec<(String, f64)> = path
        .order
        .iter()
        .take(DECISION_STEPS)
        .enumerate()
        .map(|(i, &j)| (data.feature_names.get(j).cloned().unwrap_or_else(|| format!("x{j}")), path.cumulative[i + 1]))
        .collect();
    if path.order.len() > DECISION_STEPS {
        steps.push((format!("{} other features", path.order.len() - DECISION_STEPS), *path.cumulative.last().unwrap()));
    }
    steps
}

fn decision(data: &DecisionPathData, title: &str) -> Result<String> {
    if data.paths.is_empty() || data.paths.iter().any(|p| p.order.is_empty()) {
        return Err(Error::Render("no decision paths".into()));
    }
    let all: Vec<Vec<(String, f64)>> = (0..data.paths.len()).map(|p| decision_steps(data, p)).collect();
    let n_steps = all.iter().map(Vec::len).max().unwrap_or(0);
    let mut lo = data.base_value;
    let mut hi = data.base_value;
    for v in all.iter().flatten().map(|s| s.1) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    // steps run bottom to top: row n_steps is the base value line
    let y_of = |step: usize| row_y(n_steps - step, n_steps + 1);
    let mut c = Canvas::new(title);
    c.line(scale(data.base_value, lo, hi), TOP, scale(data.base_value, lo, hi), HEIGHT - BOTTOM, r##"stroke="#999999" stroke-dasharray="4 3""##);
    c.out.push_str("<g class=\"paths\">\n");
    for (p, steps) in all.iter().enumerate() {
        let mut pts = format!("{:.2},{:.2}", scale(data.base_value, lo, hi), y_of(0));
        for (i, (_, v)) in steps.iter().enumerate() {
            let _ = write!(pts, " {:.2},{:.2}", scale(*v, lo, hi), y_of(i + 1));
        }
        let shade = if all.len() > 1 { p as f64 / (all.len() - 1) as f64 } else { 1.0 };
        let _ = writeln!(
            c.out,
            r#"<polyline class="decision" points="{pts}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            colour(shade)
        );
    }
    c.out.push_str("</g>\n");
    let cats: Vec<(f64, String)> = if all.len() == 1 {
        all[0].iter().enumerate().map(|(i, s)| (y_of(i + 1), s.0.clone())).collect()
    } else {
        (1..=n_steps).map(|i| (y_of(i), format!("step {i}"))).collect()
    };
    c.axes(lo, hi, "model output (raw margin)", &cats);
    Ok(c.finish())
}

pub fn svg_string(plot: Plot, title: &str) -> Result<String> {
    match plot {
        Plot::Bar(d) => bar(d, title),
        Plot::Beeswarm(d) => beeswarm(d, title),
        Plot::Decision(d) => decision(d, title),
    }
}

pub fn render_svg(plot: Plot, title: &str, path: impl AsRef<Path>) -> Result<()> {
    let svg = svg_string(plot, title)?;
    let path = path.as_ref();
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{decision_paths, summarize, ShapValues};
    use crate::matrix::Matrix;

    fn summary(d: usize, top_n: usize) -> SummaryData {
        let rows: Vec<Vec<f64>> = (0..20).map(|r| (0..d).map(|j| ((r * 7 + j * 3) % 11) as f64 / 10.0 - 0.5).collect()).collect();
        let phi = Matrix::from_rows(&rows).unwrap();
        let x = Matrix::from_rows(&rows).unwrap();
        let s = ShapValues {
            phi,
            base_value: 0.0,
            class_index: 1,
        };
        let names: Vec<String> = (0..d).map(|j| format!("f<{j}>")).collect();
        summarize(&s, &x, &names, top_n).unwrap()
    }

    #[test]
    fn ten_bars_and_an_axis() {
        let s = summary(108, 10);
        let svg = svg_string(Plot::Bar(&s), "Top features").unwrap();
        assert_eq!(svg.matches("<rect class=\"bar\"").count(), 10);
        assert_eq!(svg.matches("<g class=\"axis\">").count(), 1);
        assert!(svg.contains("width=\"900\" height=\"600\""));
        assert!(svg.contains("f&lt;"));
        assert_eq!(svg, svg_string(Plot::Bar(&s), "Top features").unwrap());
    }

    #[test]
    fn beeswarm_has_one_dot_per_point() {
        let s = summary(12, 5);
        let svg = svg_string(Plot::Beeswarm(&s), "Beeswarm").unwrap();
        assert_eq!(svg.matches("<circle class=\"dot\"").count(), 100);
        assert!(svg.contains("red=high, blue=low"));
    }

    #[test]
    fn empty_inputs_fail() {
        let empty = SummaryData {
            class_index: 0,
            ranking: vec![],
            points: vec![],
        };
        assert!(matches!(svg_string(Plot::Bar(&empty), "t"), Err(Error::Render(_))));
        assert!(matches!(svg_string(Plot::Beeswarm(&empty), "t"), Err(Error::Render(_))));
    }

    #[test]
    fn decision_polylines() {
        let phi = Matrix::from_rows(&(0..3).map(|r| (0..30).map(|j| ((r + j) % 5) as f64 * 0.1 - 0.2).collect::<Vec<_>>()).collect::<Vec<_>>()).unwrap();
        let s = ShapValues {
            phi,
            base_value: 0.5,
            class_index: 0,
        };
        let raw: Vec<f64> = (0..3).map(|r| s.reconstruct(r)).collect();
        let names: Vec<String> = (0..30).map(|j| format!("x{j}")).collect();
        let d = decision_paths(&s, &names, &[0, 1, 2], &raw).unwrap();
        let svg = svg_string(Plot::Decision(&d), "Decision").unwrap();
        assert_eq!(svg.matches("<polyline class=\"decision\"").count(), 3);
        // base point plus 20 steps plus the collapsed remainder
        let first = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(first.split(' ').count(), 22);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let s = summary(3, 3);
        let r = render_svg(Plot::Bar(&s), "t", "/nonexistent-dir/x/plot.svg");
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}

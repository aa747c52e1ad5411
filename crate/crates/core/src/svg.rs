//! Minimal SVG line charts for run outputs.

use std::fmt::Write;

use crate::runner::format_sig;

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

/// One stacked panel sharing the chart's horizontal axis.
pub struct Panel {
    pub y_label: String,
    pub series: Vec<Series>,
    /// Draw as a step function holding each value until the next point.
    pub step: bool,
}

const WIDTH: f64 = 720.0;
const PANEL_H: f64 = 240.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const GAP: f64 = 50.0;

/// Up to about six round tick values covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn bounds<'a>(
    points: impl Iterator<Item = &'a (f64, f64)>,
    pick: fn(&(f64, f64)) -> f64,
) -> (f64, f64) {
    let (lo, hi) = points
        .map(pick)
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * lo.abs().max(1.0);
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn chart(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let height = TOP + panels.len() as f64 * (PANEL_H + GAP) + 10.0;
    let all = panels
        .iter()
        .flat_map(|p| p.series.iter())
        .flat_map(|s| s.points.iter());
    let (x0, x1) = bounds(all, |p| p.0);
    let plot_w = WIDTH - LEFT - RIGHT;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    for (k, panel) in panels.iter().enumerate() {
        let top = TOP + k as f64 * (PANEL_H + GAP);
        let bottom = top + PANEL_H;
        let (y0, y1) = bounds(panel.series.iter().flat_map(|s| s.points.iter()), |p| p.1);
        let sy = |y: f64| bottom - (y - y0) / (y1 - y0) * PANEL_H;

        let _ = writeln!(
            out,
            r##"<rect x="{LEFT}" y="{top}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
        );
        for t in nice_ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{bottom}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                bottom + 16.0,
                format_sig(t, 4)
            );
        }
        for t in nice_ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + plot_w,
                LEFT - 6.0,
                y + 4.0,
                format_sig(t, 4)
            );
        }
        let mid = top + PANEL_H / 2.0;
        let _ = writeln!(
            out,
            r#"<text x="20" y="{mid:.2}" text-anchor="middle" transform="rotate(-90 20 {mid:.2})">{}</text>"#,
            escape(&panel.y_label)
        );
        if k + 1 == panels.len() {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                LEFT + plot_w / 2.0,
                bottom + 36.0,
                escape(x_label)
            );
        }

        for (j, s) in panel.series.iter().enumerate() {
            let mut d = String::new();
            let mut prev: Option<(f64, f64)> = None;
            for &(x, y) in s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
            {
                match prev {
                    None => {
                        let _ = write!(d, "M{:.2},{:.2}", sx(x), sy(y));
                    }
                    Some((_, py)) if panel.step => {
                        let _ =
                            write!(d, " L{:.2},{:.2} L{:.2},{:.2}", sx(x), sy(py), sx(x), sy(y));
                    }
                    Some(_) => {
                        let _ = write!(d, " L{:.2},{:.2}", sx(x), sy(y));
                    }
                }
                prev = Some((x, y));
            }
            let _ = writeln!(
                out,
                r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.6"/>"#,
                s.color
            );
            let ly = top + 16.0 + 18.0 * j as f64;
            let lx = LEFT + plot_w + 12.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 20.0,
                s.color,
                lx + 26.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let t = nice_ticks(0.03, 0.97);
        assert_eq!(t.len(), 4);
        assert!((t[0] - 0.2).abs() < 1e-12);
        let t = nice_ticks(-3.0, 47.0);
        assert!(t.iter().all(|v| (-3.0..=47.0).contains(v)));
        assert_eq!(nice_ticks(1.0, 1.0), vec![1.0]);
    }

    #[test]
    fn chart_is_well_formed() {
        let panel = Panel {
            y_label: "u".into(),
            series: vec![Series {
                label: "a<b".into(),
                color: "red",
                points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, 2.0)],
            }],
            step: true,
        };
        let svg = chart("t", "time", &[panel]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<path").count(), 1);
    }
}

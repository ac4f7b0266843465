//! Minimal SVG line-chart writer; keeps the artifact free of plotting
//! dependencies. CSV stays the canonical data interface.

use std::fmt::Write;

pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [(f64, f64)],
    pub stroke: &'a str,
    pub dashed: bool,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

struct Scale {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_y: bool,
}

impl Scale {
    fn x(&self, x: f64) -> f64 {
        let span = (self.x1 - self.x0).max(1e-300);
        MARGIN_L + (x - self.x0) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, y: f64) -> f64 {
        let (y, y0, y1) = if self.log_y {
            (y.log10(), self.y0.log10(), self.y1.log10())
        } else {
            (y, self.y0, self.y1)
        };
        let span = (y1 - y0).max(1e-300);
        HEIGHT - MARGIN_B - (y - y0) / span * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 0.01 && v.abs() < 10_000.0 {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

/// Renders a line chart with one polyline per series and an optional
/// shaded band (e.g. mean +/- std). The y axis switches to log scale when
/// every value is positive.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    band: Option<(&[(f64, f64)], &[(f64, f64)])>,
) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    if let Some((lo, hi)) = band {
        for &(x, y) in lo.iter().chain(hi) {
            xs.push(x);
            ys.push(y);
        }
    }
    let x0 = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x1 = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut y0 = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mut y1 = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_y = y0 > 0.0 && y1 / y0 > 20.0;
    if !log_y {
        let pad = 0.05 * (y1 - y0).max(1e-12);
        y0 -= pad;
        y1 += pad;
    }
    let scale = Scale {
        x0,
        x1,
        y0,
        y1,
        log_y,
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        WIDTH / 2.0
    );

    // axes
    let _ = writeln!(
        out,
        r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#,
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{x_label}</text>"#,
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{y_label}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    // corner tick labels
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10">{}</text>
<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>
<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>
<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
        MARGIN_L,
        HEIGHT - MARGIN_B + 16.0,
        fmt_tick(x0),
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B + 16.0,
        fmt_tick(x1),
        MARGIN_L - 4.0,
        HEIGHT - MARGIN_B,
        fmt_tick(y0),
        MARGIN_L - 4.0,
        MARGIN_T + 10.0,
        fmt_tick(y1),
    );

    if let Some((lo, hi)) = band {
        if !lo.is_empty() && !hi.is_empty() {
            let mut pts = String::new();
            for &(x, y) in lo {
                let _ = write!(pts, "{:.2},{:.2} ", scale.x(x), scale.y(y));
            }
            for &(x, y) in hi.iter().rev() {
                let _ = write!(pts, "{:.2},{:.2} ", scale.x(x), scale.y(y));
            }
            let _ = writeln!(
                out,
                r##"<polygon points="{}" fill="#4477aa" opacity="0.2" stroke="none"/>"##,
                pts.trim_end()
            );
        }
    }

    for (idx, s) in series.iter().enumerate() {
        let mut pts = String::new();
        for &(x, y) in s.points {
            let _ = write!(pts, "{:.2},{:.2} ", scale.x(x), scale.y(y));
        }
        let dash = if s.dashed {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.8"{dash}/>"#,
            pts.trim_end(),
            s.stroke
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{}">{}</text>"#,
            WIDTH - MARGIN_R - 150.0,
            MARGIN_T + 14.0 * (idx as f64 + 1.0),
            s.stroke,
            s.name
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let pts_a = [(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)];
        let pts_b = [(0.0, 0.9), (1.0, 0.45), (2.0, 0.2)];
        let svg = line_chart(
            "mse",
            "iteration",
            "mse",
            &[
                Series {
                    name: "mc",
                    points: &pts_a,
                    stroke: "#4477aa",
                    dashed: false,
                },
                Series {
                    name: "se",
                    points: &pts_b,
                    stroke: "#cc6677",
                    dashed: true,
                },
            ],
            None,
        );
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        // every opened text/line tag is self-closed
        assert_eq!(svg.matches("<svg").count(), 1);
    }
}

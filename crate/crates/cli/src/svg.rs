//! Minimal SVG line charts with optional shaded bands.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// (x, lower, upper) along the same abscissae as `points`.
    pub band: Option<Vec<(f64, f64, f64)>>,
    pub dashed: bool,
}

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub manifest: &'a str,
}

/// Right-continuous step function drawn from `start` to `end`.
pub fn step_points(start: (f64, f64), times: &[f64], values: &[f64], end: f64) -> Vec<(f64, f64)> {
    let mut out = vec![start];
    let mut level = start.1;
    for (t, v) in times.iter().zip(values) {
        if *t <= start.0 {
            level = *v;
            out[0].1 = level;
            continue;
        }
        if *t >= end {
            break;
        }
        out.push((*t, level));
        out.push((*t, *v));
        level = *v;
    }
    out.push((end, level));
    out
}

pub fn step_band(
    start: (f64, f64, f64),
    times: &[f64],
    lower: &[f64],
    upper: &[f64],
    end: f64,
) -> Vec<(f64, f64, f64)> {
    let lo = step_points((start.0, start.1), times, lower, end);
    let hi = step_points((start.0, start.2), times, upper, end);
    lo.into_iter()
        .zip(hi)
        .map(|((x, l), (_, u))| (x, l, u))
        .collect()
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last)
        .map(|k| ((k as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

fn label(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Chart<'_> {
    fn x(&self, v: f64) -> f64 {
        let (a, b) = self.x_range;
        LEFT + (v.clamp(a, b) - a) / (b - a) * (W - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let (a, b) = self.y_range;
        H - BOTTOM - (v.clamp(a, b) - a) / (b - a) * (H - TOP - BOTTOM)
    }

    pub fn render(&self, series: &[Series]) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(s, "<desc>manifest {}</desc>", self.manifest);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            escape(self.title)
        );
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            s,
            r##"<g stroke="#444" stroke-width="1"><line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"##
        );
        s.push_str(r##"<g font-family="sans-serif" font-size="11" fill="#333">"##);
        s.push('\n');
        for t in ticks(self.x_range.0, self.x_range.1) {
            let px = self.x(t);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{:.2}" stroke="#444"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                y1 + 5.0,
                y1 + 18.0,
                label(t)
            );
        }
        for t in ticks(self.y_range.0, self.y_range.1) {
            let py = self.y(t);
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                label(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            H - 16.0,
            escape(self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(self.y_label)
        );
        s.push_str("</g>\n");

        for (k, ser) in series.iter().enumerate() {
            let colour = PALETTE[k % PALETTE.len()];
            if let Some(band) = &ser.band {
                if !band.is_empty() {
                    let mut d = String::new();
                    for (i, (x, _, u)) in band.iter().enumerate() {
                        let _ = write!(
                            d,
                            "{}{:.2},{:.2}",
                            if i == 0 { "M" } else { " L" },
                            self.x(*x),
                            self.y(*u)
                        );
                    }
                    for (x, l, _) in band.iter().rev() {
                        let _ = write!(d, " L{:.2},{:.2}", self.x(*x), self.y(*l));
                    }
                    let _ = writeln!(
                        s,
                        r#"<path d="{d} Z" fill="{colour}" fill-opacity="0.15" stroke="none"/>"#
                    );
                }
            }
            let mut d = String::new();
            for (i, (x, y)) in ser.points.iter().enumerate() {
                let _ = write!(
                    d,
                    "{}{:.2},{:.2}",
                    if i == 0 { "M" } else { " L" },
                    self.x(*x),
                    self.y(*y)
                );
            }
            let dash = if ser.dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            let _ = writeln!(
                s,
                r#"<path d="{d}" fill="none" stroke="{colour}" stroke-width="1.6"{dash}><title>{}</title></path>"#,
                escape(&ser.name)
            );
            let ly = TOP + 14.0 + 18.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
                W - RIGHT + 12.0,
                W - RIGHT + 36.0,
                W - RIGHT + 42.0,
                ly + 4.0,
                escape(&ser.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

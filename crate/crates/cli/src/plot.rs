//! Minimal SVG line charts for DET curves and score trajectories.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 52.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
enum Scale {
    Linear,
    Log10,
}

struct Axis {
    title: String,
    lo: f64,
    hi: f64,
    scale: Scale,
}

impl Axis {
    fn unit(&self, v: f64) -> f64 {
        let (v, lo, hi) = match self.scale {
            Scale::Linear => (v, self.lo, self.hi),
            Scale::Log10 => (v.log10(), self.lo.log10(), self.hi.log10()),
        };
        if hi > lo {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    fn ticks(&self) -> Vec<f64> {
        match self.scale {
            Scale::Log10 => {
                let (a, b) = (self.lo.log10().floor() as i32, self.hi.log10().ceil() as i32);
                (a..=b).map(|e| 10f64.powi(e)).filter(|t| *t >= self.lo * 0.999 && *t <= self.hi * 1.001).collect()
            }
            Scale::Linear => {
                let span = self.hi - self.lo;
                if span <= 0.0 {
                    return vec![self.lo];
                }
                let raw = span / 5.0;
                let mag = 10f64.powf(raw.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(raw);
                let first = (self.lo / step).ceil() as i64;
                let last = (self.hi / step + 1e-9).floor() as i64;
                (first..=last).map(|k| k as f64 * step).collect()
            }
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Chart {
    title: String,
    x: Axis,
    y: Axis,
    series: Vec<Series>,
    hline: Option<(f64, String)>,
}

impl Chart {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let w = WIDTH - LEFT - RIGHT;
        let h = HEIGHT - TOP - BOTTOM;
        (LEFT + self.x.unit(x) * w, TOP + (1.0 - self.y.unit(y)) * h)
    }

    fn render(&self) -> String {
        let mut s = String::new();
        let (x0, y0) = (LEFT, HEIGHT - BOTTOM);
        let (x1, y1) = (WIDTH - RIGHT, TOP);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="16" text-anchor="middle" font-size="13">{}</text>"#,
            (x0 + x1) / 2.0,
            escape(&self.title)
        );
        for t in self.x.ticks() {
            let (px, _) = self.px(t, self.y.lo);
            let _ = writeln!(s, r##"<line x1="{px:.1}" y1="{y1}" x2="{px:.1}" y2="{y0}" stroke="#e4e4e4"/>"##);
            let _ = writeln!(s, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, y0 + 14.0, fmt_tick(t));
        }
        for t in self.y.ticks() {
            let (_, py) = self.px(self.x.lo, t);
            let _ = writeln!(s, r##"<line x1="{x0}" y1="{py:.1}" x2="{x1}" y2="{py:.1}" stroke="#e4e4e4"/>"##);
            let _ =
                writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 4.0, py + 4.0, fmt_tick(t));
        }
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x.title)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
            (y0 + y1) / 2.0,
            escape(&self.y.title)
        );
        if let Some((v, label)) = &self.hline {
            let (_, py) = self.px(self.x.lo, *v);
            let _ = writeln!(
                s,
                r##"<line x1="{x0}" y1="{py:.1}" x2="{x1}" y2="{py:.1}" stroke="#555" stroke-dasharray="4 3"/>"##
            );
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}">{}</text>"#, x1 + 4.0, py + 4.0, escape(label));
        }
        for (i, ser) in self.series.iter().enumerate() {
            let colour = COLOURS[i % COLOURS.len()];
            let pts: Vec<String> = ser
                .points
                .iter()
                .map(|&(x, y)| {
                    let (px, py) = self.px(x, y);
                    format!("{px:.2},{py:.2}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let ly = y1 + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
                x1 + 8.0,
                x1 + 26.0
            );
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x1 + 30.0, ly + 4.0, escape(&ser.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// DET curves on a log-scaled FAh axis; zero-FAh points sit on the left
/// edge. Points are `(fah, frr)`.
pub fn det_svg(series: Vec<Series>) -> String {
    let positive = series.iter().flat_map(|s| s.points.iter()).map(|p| p.0).filter(|f| *f > 0.0);
    let (min, max) = positive.fold((f64::INFINITY, 0.0f64), |(lo, hi), f| (lo.min(f), hi.max(f)));
    let (lo, hi) = if min.is_finite() {
        (10f64.powf(min.log10().floor() - 1.0), 10f64.powf(max.log10().ceil()).max(10f64.powf(min.log10().floor())))
    } else {
        (0.01, 10.0)
    };
    let series = series
        .into_iter()
        .map(|s| Series { label: s.label, points: s.points.into_iter().map(|(f, r)| (f.max(lo), r * 100.0)).collect() })
        .collect();
    Chart {
        title: "DET".into(),
        x: Axis { title: "false alarms per hour".into(), lo, hi, scale: Scale::Log10 },
        y: Axis { title: "false rejection rate (%)".into(), lo: 0.0, hi: 100.0, scale: Scale::Linear },
        series,
        hline: None,
    }
    .render()
}

/// Score trajectories over time. Points are `(seconds, score)`.
pub fn trajectory_svg(series: Vec<Series>, threshold: Option<f64>) -> String {
    let hi = series.iter().flat_map(|s| s.points.iter()).map(|p| p.0).fold(0.0f64, f64::max);
    Chart {
        title: "keyword score".into(),
        x: Axis { title: "time (s)".into(), lo: 0.0, hi: if hi > 0.0 { hi } else { 1.0 }, scale: Scale::Linear },
        y: Axis { title: "score".into(), lo: 0.0, hi: 1.0, scale: Scale::Linear },
        series,
        hline: threshold.map(|t| (t, format!("threshold {}", fmt_tick(t)))),
    }
    .render()
}

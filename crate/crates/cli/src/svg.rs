//! Minimal static SVG charts: no scripts, no external assets.

use std::fmt::Write;

const W: f64 = 760.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        escape(title)
    );
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 15.0,
        escape(x_label)
    );
    let _ = write!(
        out,
        r#"<text transform="translate(18,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + (H - TOP - BOTTOM) / 2.0,
        escape(y_label)
    );
    let _ = write!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 15.0;
        let _ = write!(
            out,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 10.0,
            color(i),
            x + 18.0,
            y,
            escape(name)
        );
    }
}

/// Maps `[lo, hi]` onto the plot width or height.
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            (lo, hi) = (lo.floor(), hi.ceil());
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        Self { lo, hi, log }
    }

    fn unit(&self, v: f64) -> Option<f64> {
        let v = if self.log {
            if v <= 0.0 {
                return None;
            }
            v.log10()
        } else {
            v
        };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            (self.lo as i32..=self.hi as i32)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect()
        } else {
            (0..=5)
                .map(|k| {
                    let v = self.lo + (self.hi - self.lo) * k as f64 / 5.0;
                    (v, format!("{v:.2}"))
                })
                .collect()
        }
    }
}

/// Polylines over shared axes; points with non-positive coordinates on a
/// log axis are dropped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, log_x: bool, series: &[Series]) -> String {
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let xa = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), log_x);
    let ya = Axis {
        lo: 0.0,
        hi: 1.0,
        log: false,
    };
    let mut out = String::new();
    header(&mut out, title, x_label, y_label);
    for (v, label) in xa.ticks() {
        let x = LEFT + xa.unit(v).unwrap_or(0.0) * pw;
        let _ = write!(
            out,
            r#"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{}" stroke="lightgray"/><text x="{x:.1}" y="{}" text-anchor="middle">{label}</text>"#,
            TOP + ph,
            TOP + ph + 16.0
        );
    }
    for (v, label) in ya.ticks() {
        let y = TOP + ph - ya.unit(v).unwrap_or(0.0) * ph;
        let _ = write!(
            out,
            r#"<line x1="{LEFT}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="lightgray"/><text x="{}" y="{:.1}" text-anchor="end">{label}</text>"#,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter_map(|&(x, y)| {
                let (ux, uy) = (xa.unit(x)?, ya.unit(y)?);
                Some(format!("{:.1},{:.1}", LEFT + ux * pw, TOP + ph - uy.clamp(0.0, 1.0) * ph))
            })
            .collect();
        let _ = write!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            color(i),
            pts.join(" ")
        );
    }
    legend(&mut out, &series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Grouped bars, one group per category. Missing values leave a gap.
pub fn bar_chart(title: &str, y_label: &str, categories: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let values = series.iter().flat_map(|s| s.1.iter().flatten().copied());
    let fitted = Axis::fit(values.chain([0.0]), false);
    let ya = Axis {
        lo: fitted.lo.min(0.0),
        hi: fitted.hi.max(0.0),
        log: false,
    };
    let mut out = String::new();
    header(&mut out, title, "subgroup", y_label);
    for (v, label) in ya.ticks() {
        let y = TOP + ph - ya.unit(v).unwrap_or(0.0) * ph;
        let _ = write!(
            out,
            r#"<line x1="{LEFT}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="lightgray"/><text x="{}" y="{:.1}" text-anchor="end">{label}</text>"#,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let zero = TOP + ph - ya.unit(0.0).unwrap_or(0.0) * ph;
    let group = pw / categories.len().max(1) as f64;
    let bar = group * 0.8 / series.len().max(1) as f64;
    for (c, name) in categories.iter().enumerate() {
        let gx = LEFT + group * c as f64;
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group / 2.0,
            TOP + ph + 16.0,
            escape(name)
        );
        for (s, (_, vals)) in series.iter().enumerate() {
            let Some(v) = vals.get(c).copied().flatten() else { continue };
            let y = TOP + ph - ya.unit(v).unwrap_or(0.0) * ph;
            let _ = write!(
                out,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                gx + group * 0.1 + bar * s as f64,
                y.min(zero),
                bar,
                (zero - y).abs(),
                color(s)
            );
        }
    }
    legend(&mut out, &series.iter().map(|s| s.0.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Row-normalized matrix as shaded cells with the value printed in each.
pub fn heatmap(title: &str, labels: &[String], matrix: &[Vec<f64>]) -> String {
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let n = labels.len().max(1) as f64;
    let (cw, ch) = (pw / n, ph / n);
    let mut out = String::new();
    header(&mut out, title, "predicted", "true");
    for (r, row) in matrix.iter().enumerate() {
        let _ = write!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            TOP + ch * (r as f64 + 0.5) + 4.0,
            escape(&labels[r])
        );
        for (c, &v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let (x, y) = (LEFT + cw * c as f64, TOP + ch * r as f64);
            let ink = if v > 0.5 { "white" } else { "black" };
            let _ = write!(
                out,
                r##"<rect x="{x:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="rgb({shade},{shade},255)"/><text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{ink}">{v:.2}</text>"##,
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
    }
    for (c, label) in labels.iter().enumerate() {
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + cw * (c as f64 + 0.5),
            TOP + ph + 16.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

//! Minimal SVG charts for a metrics series.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use migo_core::metrics::MetricRow;

const W: f64 = 720.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;

pub struct Curve {
    pub name: String,
    pub color: &'static str,
    /// Gaps (`None`) split the curve into separate polylines.
    pub points: Vec<(f64, Option<f64>)>,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x.1 - self.x.0).max(f64::EPSILON);
        LEFT + (x - self.x.0) / span * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.y.1 - self.y.0).max(f64::EPSILON);
        H - BOTTOM - (y - self.y.0) / span * (H - TOP - BOTTOM)
    }
}

fn open(title: &str, x_label: &str, y_label: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            f.py(yv) + 4.0,
            tick(yv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            f.px(xv),
            y1 + 16.0,
            tick(xv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 10.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    );
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 10.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(s: &mut String, entries: &[(&str, &str)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = TOP + 12.0 + 18.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{color}"/>"#,
            y - 10.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, esc(name));
    }
}

/// Line chart; `y_range` defaults to the data range.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, curves: &[Curve], y_range: Option<(f64, f64)>) -> String {
    let xs = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0));
    let x = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let x = if x.0.is_finite() { x } else { (0.0, 1.0) };
    let y = y_range.unwrap_or_else(|| {
        let (lo, hi) = curves
            .iter()
            .flat_map(|c| c.points.iter().filter_map(|p| p.1))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if lo.is_finite() {
            (lo.min(0.0), if hi > lo { hi } else { lo + 1.0 })
        } else {
            (0.0, 1.0)
        }
    });
    let frame = Frame { x, y };
    let mut s = open(title, x_label, y_label, &frame);
    for c in curves {
        for segment in c.points.split(|p| p.1.is_none()).filter(|seg| !seg.is_empty()) {
            let pts: Vec<String> = segment
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y.unwrap_or_default())))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline data-series="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                esc(&c.name),
                c.color,
                pts.join(" ")
            );
        }
    }
    let entries: Vec<(&str, &str)> = curves.iter().map(|c| (c.name.as_str(), c.color)).collect();
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

/// BackAcc and BenAcc against the round number.
pub fn accuracy_chart(rows: &[MetricRow]) -> String {
    let curve = |name: &str, color, f: fn(&MetricRow) -> f64| Curve {
        name: name.into(),
        color,
        points: rows.iter().map(|r| (r.round as f64, Some(f(r)))).collect(),
    };
    line_chart(
        "Accuracy per round",
        "round",
        "accuracy (%)",
        &[
            curve("BackAcc", "#d62728", |r| r.back_acc),
            curve("BenAcc", "#1f77b4", |r| r.ben_acc),
        ],
        Some((0.0, 100.0)),
    )
}

/// Global update norm alongside the attacker's region estimate.
pub fn norm_chart(rows: &[MetricRow]) -> String {
    line_chart(
        "Global update norm and region estimate",
        "round",
        "L2 norm",
        &[
            Curve {
                name: "global update".into(),
                color: "#1f77b4",
                points: rows
                    .iter()
                    .map(|r| (r.round as f64, Some(r.global_update_norm)))
                    .collect(),
            },
            Curve {
                name: "region estimate".into(),
                color: "#ff7f0e",
                points: rows.iter().map(|r| (r.round as f64, r.region_estimate)).collect(),
            },
        ],
        None,
    )
}

/// Stacked bars of accepted benign and malicious updates per `bucket` rounds.
pub fn accepted_chart(rows: &[MetricRow], bucket: usize) -> String {
    let bucket = bucket.max(1);
    let Some(last) = rows.iter().map(|r| r.round).max() else {
        return line_chart("Accepted updates", "round", "count", &[], None);
    };
    let n = last / bucket + 1;
    let mut counts = vec![(0usize, 0usize); n];
    for r in rows {
        let c = &mut counts[r.round / bucket];
        c.0 += r.accepted_benign;
        c.1 += r.accepted_malicious;
    }
    let top = counts.iter().map(|c| c.0 + c.1).max().unwrap_or(0).max(1) as f64;
    let frame = Frame {
        x: (0.0, (n * bucket) as f64),
        y: (0.0, top),
    };
    let mut s = open(
        &format!("Accepted updates per {bucket} rounds"),
        "round",
        "accepted updates",
        &frame,
    );
    let width = (frame.px(bucket as f64) - frame.px(0.0)) * 0.8;
    for (i, &(benign, malicious)) in counts.iter().enumerate() {
        let x = frame.px((i * bucket) as f64) + width * 0.125;
        let yb = frame.py(benign as f64);
        let ym = frame.py((benign + malicious) as f64);
        let _ = writeln!(
            s,
            r##"<rect class="benign" x="{x:.2}" y="{yb:.2}" width="{width:.2}" height="{:.2}" fill="#1f77b4"/>"##,
            frame.py(0.0) - yb
        );
        if malicious > 0 {
            let _ = writeln!(
                s,
                r##"<rect class="malicious" x="{x:.2}" y="{ym:.2}" width="{width:.2}" height="{:.2}" fill="#d62728"/>"##,
                yb - ym
            );
        }
    }
    legend(&mut s, &[("benign", "#1f77b4"), ("malicious", "#d62728")]);
    s.push_str("</svg>\n");
    s
}

/// Writes `accuracy.svg`, `norms.svg` and `accepted.svg` into `dir`.
pub fn write_plots(dir: &Path, rows: &[MetricRow]) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = [
        ("accuracy.svg", accuracy_chart(rows)),
        ("norms.svg", norm_chart(rows)),
        ("accepted.svg", accepted_chart(rows, 10)),
    ];
    files
        .into_iter()
        .map(|(name, svg)| {
            let p = dir.join(name);
            std::fs::write(&p, svg).with_context(|| format!("writing {}", p.display()))?;
            Ok(p)
        })
        .collect()
}

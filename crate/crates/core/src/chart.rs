//! Minimal SVG line/scatter charts drawn from result rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::report::{format_g, ResultRow};
use crate::stats::fit_linear;

#[derive(Debug, Error, PartialEq)]
pub enum ChartError {
    #[error("no data to chart")]
    Empty,
    #[error("unknown chart kind '{0}'")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    RateVsNodes,
    FidelityVsDistance,
    MinRepeatersVsDistance,
}

impl ChartKind {
    pub const ALL: [ChartKind; 3] = [
        ChartKind::RateVsNodes,
        ChartKind::FidelityVsDistance,
        ChartKind::MinRepeatersVsDistance,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ChartKind::RateVsNodes => "rate_vs_nodes",
            ChartKind::FidelityVsDistance => "fidelity_vs_distance",
            ChartKind::MinRepeatersVsDistance => "min_repeaters_vs_distance",
        }
    }

    pub fn from_label(s: &str) -> Result<Self, ChartError> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| ChartError::UnknownKind(s.to_string()))
    }
}

struct Series {
    name: String,
    colour: &'static str,
    points: Vec<(f64, f64)>,
    line: bool,
}

struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    y_range: Option<(f64, f64)>,
    series: Vec<Series>,
    annotation: Option<String>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if lo == hi {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    fn render(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = bounds(all().map(|p| p.0));
        let (y0, y1) = self
            .y_range
            .unwrap_or_else(|| bounds(all().map(|p| p.1)));
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=5 {
            let f = i as f64 / 5.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                sx(xv),
                TOP + ph + 18.0,
                format_g(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                sy(yv) + 4.0,
                format_g(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            if series.line && series.points.len() > 1 {
                let pts: Vec<String> = series
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                    series.colour,
                    pts.join(" ")
                );
            }
            if !series.line {
                for &(x, y) in &series.points {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{}"/>"#,
                        sx(x),
                        sy(y),
                        series.colour
                    );
                }
            }
            let ly = TOP + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{ly:.1}" fill="{}" text-anchor="end">{}</text>"#,
                LEFT + pw - 8.0,
                series.colour,
                escape(&series.name)
            );
        }
        if let Some(a) = &self.annotation {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                LEFT + 8.0,
                TOP + 16.0,
                escape(a)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Mean of `value` per key, ignoring rows where it is absent.
fn grouped<K: Ord + Copy>(
    rows: &[&ResultRow],
    key: impl Fn(&ResultRow) -> K,
    value: impl Fn(&ResultRow) -> Option<f64>,
) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, (f64, usize)> = BTreeMap::new();
    for r in rows {
        if let Some(v) = value(r) {
            let e = acc.entry(key(r)).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn dist_key(r: &ResultRow) -> u64 {
    r.total_distance_km.to_bits()
}

pub fn render(kind: ChartKind, rows: &[ResultRow]) -> Result<String, ChartError> {
    let plot = match kind {
        ChartKind::RateVsNodes => {
            let mut series = Vec::new();
            for (name, colour, even) in [("even", "#1f77b4", true), ("odd", "#d62728", false)] {
                let sel: Vec<&ResultRow> = rows
                    .iter()
                    .filter(|r| (r.router_count % 2 == 0) == even)
                    .collect();
                let pts: Vec<(f64, f64)> =
                    grouped(&sel, |r| r.router_count, |r| Some(r.e_count as f64))
                        .into_iter()
                        .map(|(n, e)| (n as f64, e))
                        .collect();
                if !pts.is_empty() {
                    series.push(Series {
                        name: format!("{name} router count"),
                        colour,
                        points: pts,
                        line: false,
                    });
                }
            }
            Plot {
                title: "Successful attempts vs router count".into(),
                x_label: "routers".into(),
                y_label: "E_count".into(),
                y_range: None,
                series,
                annotation: None,
            }
        }
        ChartKind::FidelityVsDistance => {
            let sel: Vec<&ResultRow> = rows.iter().collect();
            let pts: Vec<(f64, f64)> = grouped(&sel, dist_key, |r| r.mean_f_e2e)
                .into_iter()
                .map(|(d, f)| (f64::from_bits(d), f))
                .collect();
            Plot {
                title: "End-to-end fidelity vs distance".into(),
                x_label: "total distance (km)".into(),
                y_label: "mean F_e2e".into(),
                y_range: Some((0.25, 1.0)),
                series: if pts.is_empty() {
                    vec![]
                } else {
                    vec![Series {
                        name: "mean F_e2e".into(),
                        colour: "#2ca02c",
                        points: pts,
                        line: true,
                    }]
                },
                annotation: None,
            }
        }
        ChartKind::MinRepeatersVsDistance => {
            let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.e_count >= 1).collect();
            let pts: Vec<(f64, f64)> = grouped(
                &sel,
                dist_key,
                |r| Some(r.router_count.saturating_sub(2) as f64),
            )
            .into_iter()
            .map(|(d, m)| (f64::from_bits(d), m))
            .collect();
            let mut series = Vec::new();
            let mut annotation = None;
            if let Ok(fit) = fit_linear(&pts) {
                let (lo, hi) = bounds(pts.iter().map(|p| p.0));
                series.push(Series {
                    name: "fit".into(),
                    colour: "#555555",
                    points: vec![
                        (lo, fit.slope * lo + fit.intercept),
                        (hi, fit.slope * hi + fit.intercept),
                    ],
                    line: true,
                });
                let per = if fit.slope > 0.0 {
                    format!(" ({} km per repeater)", format_g(1.0 / fit.slope))
                } else {
                    String::new()
                };
                annotation = Some(format!(
                    "slope {} repeaters/km{per}, r2 {}",
                    format_g(fit.slope),
                    format_g(fit.r_squared)
                ));
            }
            if !pts.is_empty() {
                series.push(Series {
                    name: "minimum repeaters".into(),
                    colour: "#9467bd",
                    points: pts,
                    line: false,
                });
            }
            Plot {
                title: "Minimum repeaters vs distance".into(),
                x_label: "total distance (km)".into(),
                y_label: "minimum intermediate routers".into(),
                y_range: None,
                series,
                annotation,
            }
        }
    };
    if plot.series.is_empty() {
        return Err(ChartError::Empty);
    }
    Ok(plot.render())
}

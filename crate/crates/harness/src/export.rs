//! Metrics tables (CSV) and line plots (SVG).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{io_err, HarnessError, Result};
use crate::metrics::{Estimate, Metrics};

pub const METRICS_COLUMNS: [&str; 21] = [
    "label",
    "svo",
    "episodes",
    "success_rate",
    "success_se",
    "crash_rate",
    "crash_se",
    "timeout_rate",
    "timeout_se",
    "collision_rate",
    "collision_se",
    "off_zone_rate",
    "off_zone_se",
    "off_path_rate",
    "off_path_se",
    "speed_score",
    "speed_se",
    "mde",
    "mde_se",
    "mean_return",
    "return_se",
];

/// One labelled line of a metrics table; `svo` is set for fixed-SVO sweeps.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub label: String,
    pub svo: Option<f64>,
    pub metrics: Metrics,
}

impl MetricsRow {
    fn estimates(&self) -> [Estimate; 7] {
        let m = &self.metrics;
        [
            m.success_rate,
            m.crash_rate,
            m.timeout_rate,
            m.collision_rate,
            m.off_zone_rate,
            m.off_path_rate,
            m.speed_score,
        ]
    }

    fn record(&self) -> Vec<String> {
        let mut r = vec![self.label.clone(), opt(self.svo), self.metrics.episodes.to_string()];
        for e in self.estimates() {
            r.push(e.mean.to_string());
            r.push(e.se.to_string());
        }
        let mde = self.metrics.mean_deviation_error;
        r.push(opt(mde.map(|e| e.mean)));
        r.push(opt(mde.map(|e| e.se)));
        r.push(self.metrics.mean_return.mean.to_string());
        r.push(self.metrics.mean_return.se.to_string());
        r
    }

    fn from_record(rec: &csv::StringRecord) -> std::result::Result<Self, String> {
        if rec.len() != METRICS_COLUMNS.len() {
            return Err(format!(
                "expected {} fields, found {}",
                METRICS_COLUMNS.len(),
                rec.len()
            ));
        }
        let num = |i: usize| -> std::result::Result<f64, String> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| format!("{}: {e}", METRICS_COLUMNS[i]))
        };
        let opt_num = |i: usize| -> std::result::Result<Option<f64>, String> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let est = |i: usize| -> std::result::Result<Estimate, String> {
            Ok(Estimate {
                mean: num(i)?,
                se: num(i + 1)?,
            })
        };
        let episodes = rec[2].parse::<usize>().map_err(|e| format!("episodes: {e}"))?;
        let mde = match (opt_num(17)?, opt_num(18)?) {
            (Some(mean), Some(se)) => Some(Estimate { mean, se }),
            (None, None) => None,
            _ => return Err("mde and mde_se must both be present or both empty".into()),
        };
        Ok(Self {
            label: rec[0].to_string(),
            svo: opt_num(1)?,
            metrics: Metrics {
                episodes,
                success_rate: est(3)?,
                crash_rate: est(5)?,
                timeout_rate: est(7)?,
                collision_rate: est(9)?,
                off_zone_rate: est(11)?,
                off_path_rate: est(13)?,
                speed_score: est(15)?,
                mean_deviation_error: mde,
                mean_return: est(19)?,
            },
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_table(rows: &[MetricsRow]) -> String {
    let body: Vec<Vec<String>> = rows.iter().map(MetricsRow::record).collect();
    table(&METRICS_COLUMNS, &body)
}

pub fn parse_metrics_table(text: &str) -> std::result::Result<Vec<MetricsRow>, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(METRICS_COLUMNS.iter().copied()) {
        return Err("unexpected metrics header".into());
    }
    reader
        .records()
        .enumerate()
        .map(|(i, r)| {
            let rec = r.map_err(|e| e.to_string())?;
            MetricsRow::from_record(&rec).map_err(|e| format!("row {}: {e}", i + 1))
        })
        .collect()
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    crate::config::write_text(path, &metrics_table(rows))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_metrics_table(&text).map_err(|detail| HarnessError::Parse {
        path: path.to_path_buf(),
        detail,
    })
}

/// Generic CSV text with a header row.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    crate::config::write_text(path, &table(header, rows))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: [f64; 4] = [50.0, 20.0, 60.0, 70.0]; // top, right, bottom, left
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Line plot with markers, axes, five ticks per axis and a legend.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (x0, x1) = nice_range(x0, x1);
    let (y0, y1) = nice_range(y0, y1);
    let [top, right, bottom, left] = MARGIN;
    let pw = WIDTH - left - right;
    let ph = HEIGHT - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/><line x1="{left}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left - 5.0,
            left + pw,
            left - 8.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if coords.len() > 1 {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        if coords.len() <= 40 {
            for c in &coords {
                let (cx, cy) = c.split_once(',').expect("formatted pair");
                let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
            }
        }
        let ly = top + 12.0 + 16.0 * k as f64;
        let lx = left + pw - 150.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

pub fn write_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    crate::config::write_text(path, &line_plot(title, x_label, y_label, series))
}

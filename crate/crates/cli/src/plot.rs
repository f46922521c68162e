//! Plain SVG line charts from episode logs.
//!
//! Each input is an episode CSV or a directory searched recursively for
//! them. A run's arm is the name of the directory holding its CSV. Every
//! chart draws the per-episode mean over an arm's runs with a min/max band.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;
use wave_core::agent::EPISODE_CSV_HEADER;

use crate::output::write_atomic_str;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("no episode CSVs found")]
    Empty,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub arm: String,
    pub path: PathBuf,
    pub returns: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Run {
    /// Running mean of the returns from the first episode.
    pub fn cumulative_average(&self) -> Vec<f64> {
        let mut sum = 0.0;
        self.returns
            .iter()
            .enumerate()
            .map(|(i, r)| {
                sum += r;
                sum / (i + 1) as f64
            })
            .collect()
    }
}

fn malformed(path: &Path, message: impl Into<String>) -> PlotError {
    PlotError::Malformed { path: path.to_path_buf(), message: message.into() }
}

pub fn read_run(path: &Path) -> Result<Run, PlotError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| PlotError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    let header = reader.headers().map_err(|e| malformed(path, e.to_string()))?;
    let joined = header.iter().collect::<Vec<_>>().join(",");
    if joined != EPISODE_CSV_HEADER {
        return Err(malformed(path, format!("unexpected header `{joined}`")));
    }
    let mut returns = Vec::new();
    let mut lambdas = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| malformed(path, e.to_string()))?;
        let field = |col: usize, name: &str| -> Result<f64, PlotError> {
            let raw = rec.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(path, format!("row {}: bad {name} `{raw}`", i + 1)))
        };
        returns.push(field(2, "return")?);
        lambdas.push(field(4, "lambda")?);
    }
    let arm = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    Ok(Run { arm, path: path.to_path_buf(), returns, lambdas })
}

fn is_episode_csv(path: &Path) -> bool {
    std::fs::read_to_string(path)
        .map(|t| t.lines().next() == Some(EPISODE_CSV_HEADER))
        .unwrap_or(false)
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), PlotError> {
    let io = |e: std::io::Error| PlotError::Io { path: dir.to_path_buf(), message: e.to_string() };
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "csv") && is_episode_csv(&p) {
            out.push(p);
        }
    }
    Ok(())
}

/// Loads every run. Files named directly must be episode logs; inside
/// directories other CSVs (summaries, theory output) are skipped.
pub fn load_runs(inputs: &[PathBuf]) -> Result<Vec<Run>, PlotError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            collect(p, &mut files)?;
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(PlotError::Empty);
    }
    files.iter().map(|f| read_run(f)).collect()
}

/// Per-episode mean, min and max over an arm's runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub arm: String,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Episodes present in only some runs are summarized over those runs.
pub fn bands(runs: &[Run], series: impl Fn(&Run) -> Vec<f64>) -> Vec<Band> {
    let mut by_arm: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for r in runs {
        by_arm.entry(&r.arm).or_default().push(series(r));
    }
    by_arm
        .into_iter()
        .map(|(arm, all)| {
            let len = all.iter().map(Vec::len).max().unwrap_or(0);
            let mut band = Band { arm: arm.to_string(), mean: vec![], lo: vec![], hi: vec![] };
            for k in 0..len {
                let vals: Vec<f64> = all.iter().filter_map(|s| s.get(k).copied()).collect();
                band.mean.push(vals.iter().sum::<f64>() / vals.len() as f64);
                band.lo.push(vals.iter().copied().fold(f64::INFINITY, f64::min));
                band.hi.push(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
            band
        })
        .collect()
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Renders one chart. Output depends only on the arguments.
pub fn svg_chart(title: &str, y_label: &str, bands: &[Band]) -> String {
    let n = bands.iter().map(|b| b.mean.len()).max().unwrap_or(0).max(1);
    let mut y_lo = bands.iter().flat_map(|b| b.lo.iter()).copied().fold(f64::INFINITY, f64::min);
    let mut y_hi = bands.iter().flat_map(|b| b.hi.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if y_hi - y_lo < 1e-12 {
        let pad = y_lo.abs().max(1.0) * 0.1;
        (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    } else {
        let pad = (y_hi - y_lo) * 0.05;
        (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    }
    let (x_lo, x_hi) = if n == 1 { (0.5, 1.5) } else { (1.0, n as f64) };
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |e: f64| LEFT + (e - x_lo) / (x_hi - x_lo) * pw;
    let sy = |v: f64| TOP + (y_hi - v) / (y_hi - y_lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#, LEFT + pw / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in nice_ticks(y_lo, y_hi) {
        let y = sy(t);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, tick_label(t));
    }
    for t in nice_ticks(x_lo, x_hi).into_iter().filter(|t| t.fract() == 0.0) {
        let x = sx(t);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, tick_label(t));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">episode</text>"#, LEFT + pw / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{y_label}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, b) in bands.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts = |vals: &[f64]| -> Vec<String> {
            vals.iter().enumerate().map(|(k, v)| format!("{:.2},{:.2}", sx((k + 1) as f64), sy(*v))).collect()
        };
        if b.mean.len() == 1 {
            let (x, y) = (sx(1.0), sy(b.mean[0]));
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}" stroke-opacity="0.4" stroke-width="6"/>"#,
                sy(b.lo[0]),
                sy(b.hi[0])
            );
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        } else if !b.mean.is_empty() {
            let mut poly = pts(&b.hi);
            poly.extend(pts(&b.lo).into_iter().rev());
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, poly.join(" "));
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                pts(&b.mean).join(" ")
            );
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&b.arm));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub const REWARD_SVG: &str = "reward.svg";
pub const LAMBDA_SVG: &str = "lambda.svg";

/// Both charts as `(reward, lambda)` SVG text.
pub fn render(runs: &[Run]) -> (String, String) {
    let reward = svg_chart(
        "Cumulative average reward (mean, min/max band over seeds)",
        "cumulative average return",
        &bands(runs, Run::cumulative_average),
    );
    let lambda = svg_chart("Regularization weight", "lambda", &bands(runs, |r| r.lambdas.clone()));
    (reward, lambda)
}

/// Reads the inputs and writes `reward.svg` and `lambda.svg` into `out`.
pub fn emit_plots(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let runs = load_runs(inputs)?;
    let (reward, lambda) = render(&runs);
    let mut written = Vec::new();
    for (name, text) in [(REWARD_SVG, reward), (LAMBDA_SVG, lambda)] {
        let p = out.join(name);
        write_atomic_str(&p, &text).map_err(|e| PlotError::Io { path: p.clone(), message: e.to_string() })?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(-412.0, -120.0);
        assert!(t.len() >= 3 && t.len() <= 7);
        assert!(t.iter().all(|v| (-412.0..=-120.0).contains(v)));
        assert_eq!(tick_label(-0.0), "0");
        assert_eq!(tick_label(2.5), "2.5");
    }

    #[test]
    fn bands_handle_ragged_runs() {
        let run = |arm: &str, r: Vec<f64>| Run { arm: arm.into(), path: PathBuf::new(), lambdas: vec![2.0; r.len()], returns: r };
        let b = bands(&[run("a", vec![1.0, 3.0]), run("a", vec![3.0])], |r| r.returns.clone());
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].mean, vec![2.0, 3.0]);
        assert_eq!(b[0].lo, vec![1.0, 3.0]);
        assert_eq!(b[0].hi, vec![3.0, 3.0]);
        assert_eq!(run("a", vec![1.0, 3.0, 2.0]).cumulative_average(), vec![1.0, 2.0, 2.0]);
    }
}

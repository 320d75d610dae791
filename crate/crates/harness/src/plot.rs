//! Learning curves as standalone SVG: the mean across input rows sharing an x
//! value, drawn over their min-max band.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use lamp_core::pipeline::MetricsTable;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;

/// One x position of the curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Default axes for a table: metrics files plot the task return over steps,
/// probe files the LAMP reward over episode time.
pub fn default_axes(columns: &[String]) -> Option<(&'static str, &'static str)> {
    let has = |c: &str| columns.iter().any(|k| k == c);
    if has("step") && has("r_task_mean") {
        Some(("step", "r_task_mean"))
    } else if has("t") && has("r_lamp") {
        Some(("t", "r_lamp"))
    } else {
        None
    }
}

pub fn load_tables(paths: &[PathBuf]) -> Result<Vec<(PathBuf, MetricsTable)>> {
    if paths.is_empty() {
        bail!("plot needs at least one CSV");
    }
    let mut out: Vec<(PathBuf, MetricsTable)> = Vec::with_capacity(paths.len());
    for p in paths {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let table = MetricsTable::parse(&text).map_err(|e| anyhow!("{}: {e}", p.display()))?;
        if table.rows.is_empty() {
            bail!("{}: CSV has no data rows", p.display());
        }
        if let Some((_, first)) = out.first() {
            if first.columns != table.columns {
                bail!(
                    "{}: columns [{}] do not match [{}] of {}",
                    p.display(),
                    table.columns.join(","),
                    first.columns.join(","),
                    paths[0].display()
                );
            }
        }
        out.push((p.clone(), table));
    }
    Ok(out)
}

/// Mean, min and max of `y` at every distinct `x`; non-finite values are skipped.
pub fn aggregate(tables: &[(PathBuf, MetricsTable)], x: &str, y: &str) -> Result<Vec<CurvePoint>> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (p, t) in tables {
        let xs = t.column(x).map_err(|e| anyhow!("{}: {e}", p.display()))?;
        let ys = t.column(y).map_err(|e| anyhow!("{}: {e}", p.display()))?;
        pts.extend(xs.into_iter().zip(ys).filter(|(a, b)| a.is_finite() && b.is_finite()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut curve = Vec::new();
    for group in pts.chunk_by(|a, b| a.0 == b.0) {
        let n = group.len() as f64;
        curve.push(CurvePoint {
            x: group[0].0,
            mean: group.iter().map(|p| p.1).sum::<f64>() / n,
            min: group.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
            max: group.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
        });
    }
    if curve.is_empty() {
        bail!("no finite ({x}, {y}) pairs in the inputs");
    }
    Ok(curve)
}

fn fmt_tick(v: f64) -> String {
    let s = if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    };
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn padded(lo: f64, hi: f64, frac: f64) -> (f64, f64) {
    if hi > lo {
        let pad = (hi - lo) * frac;
        (lo - pad, hi + pad)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

/// Render a curve. `hashes` are embedded as comments so the figure names the
/// runs it was drawn from.
pub fn render_svg(curve: &[CurvePoint], x: &str, y: &str, hashes: &[String], series: usize) -> String {
    let (x0, x1) = padded(curve[0].x, curve[curve.len() - 1].x, 0.0);
    let lo = curve.iter().map(|p| p.min).fold(f64::INFINITY, f64::min);
    let hi = curve.iter().map(|p| p.max).fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = padded(lo, hi, 0.05);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |v: f64| LEFT + (v - x0) / (x1 - x0) * pw;
    let sy = |v: f64| TOP + (1.0 - (v - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    for h in hashes {
        writeln!(s, "<!-- config_hash={h} -->").unwrap();
    }
    writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{} over {} ({} series)</text>"#,
        LEFT + pw / 2.0,
        escape(y),
        escape(x),
        series
    )
    .unwrap();
    writeln!(
        s,
        r#"<path d="M{LEFT:.2},{TOP:.2} V{:.2} H{:.2}" fill="none" stroke="black" stroke-width="1"/>"#,
        TOP + ph,
        LEFT + pw
    )
    .unwrap();
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            fmt_tick(xv)
        )
        .unwrap();
        writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            fmt_tick(yv)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(x)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y)
    )
    .unwrap();

    let upper = curve.iter().map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.max)));
    let lower = curve.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.min)));
    let band: Vec<String> = upper.chain(lower).collect();
    writeln!(
        s,
        r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##,
        band.join(" ")
    )
    .unwrap();
    let line: Vec<String> = curve.iter().map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.mean))).collect();
    writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        line.join(" ")
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

/// Plot `y` over `x` for the given CSVs; axes default from the schema.
pub fn plot(paths: &[PathBuf], x: Option<&str>, y: Option<&str>, out: &Path) -> Result<()> {
    let tables = load_tables(paths)?;
    let defaults = default_axes(&tables[0].1.columns);
    let (x, y) = match (x, y, defaults) {
        (Some(x), Some(y), _) => (x, y),
        (x, y, Some((dx, dy))) => (x.unwrap_or(dx), y.unwrap_or(dy)),
        _ => bail!("{}: pass --x and --y for this schema", paths[0].display()),
    };
    let curve = aggregate(&tables, x, y)?;
    let mut hashes: Vec<String> = Vec::new();
    for (_, t) in &tables {
        if let Some(h) = t.comment_field("config_hash") {
            if !hashes.iter().any(|k| k == h) {
                hashes.push(h.to_string());
            }
        }
    }
    let svg = render_svg(&curve, x, y, &hashes, tables.len());
    std::fs::write(out, svg).with_context(|| format!("writing {}", out.display()))
}

//! Deterministic SVG line charts from sweep CSVs: fixed 800x600 canvas,
//! fixed tick algorithm, no timestamps, so identical inputs give identical
//! bytes.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};

pub struct PlotSpec {
    pub input: PathBuf,
    pub x: String,
    pub series: Vec<String>,
    pub out: PathBuf,
    pub title: Option<String>,
    pub log_x: bool,
    pub log_y: bool,
    pub dashed: Vec<String>,
    pub filters: Vec<(String, String)>,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 784.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 552.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];
const DASH: &str = "6 4";

pub fn render(spec: &PlotSpec) -> anyhow::Result<()> {
    let table = read_table(spec)?;
    let svg = draw(spec, &table)?;
    std::fs::write(&spec.out, svg)
        .with_context(|| format!("writing {}", spec.out.display()))?;
    Ok(())
}

/// Per-series (x, y) points, already filtered, log-cleaned, and sorted by x.
struct Table {
    series: Vec<Vec<(f64, f64)>>,
}

fn read_table(spec: &PlotSpec) -> anyhow::Result<Table> {
    let mut reader = csv::Reader::from_path(&spec.input)
        .with_context(|| format!("reading {}", spec.input.display()))?;
    let headers: Vec<String> = reader
        .headers()
        .context("reading CSV header")?
        .iter()
        .map(|h| h.to_owned())
        .collect();
    let column = |name: &str| -> anyhow::Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            anyhow!(
                "column '{name}' not found; available columns: {}",
                headers.join(", ")
            )
        })
    };
    let x_col = column(&spec.x)?;
    let series_cols: Vec<usize> = spec
        .series
        .iter()
        .map(|s| column(s))
        .collect::<anyhow::Result<_>>()?;
    let filter_cols: Vec<(usize, &str)> = spec
        .filters
        .iter()
        .map(|(col, value)| Ok((column(col)?, value.as_str())))
        .collect::<anyhow::Result<_>>()?;

    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); series_cols.len()];
    for record in reader.records() {
        let record = record.context("reading CSV row")?;
        if filter_cols
            .iter()
            .any(|&(col, value)| record.get(col) != Some(value))
        {
            continue;
        }
        let Some(x) = parse_cell(record.get(x_col)) else {
            continue;
        };
        if spec.log_x && x <= 0.0 {
            continue;
        }
        for (points, &col) in series.iter_mut().zip(&series_cols) {
            let Some(y) = parse_cell(record.get(col)) else {
                continue;
            };
            if spec.log_y && y <= 0.0 {
                continue;
            }
            points.push((x, y));
        }
    }
    for points in &mut series {
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    }
    if series.iter().all(|s| s.is_empty()) {
        bail!(
            "no plottable rows in {} (after filters and log-scale exclusions)",
            spec.input.display()
        );
    }
    Ok(Table { series })
}

fn parse_cell(cell: Option<&str>) -> Option<f64> {
    let v: f64 = cell?.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

/// Maps data to pixels, in log10 space when requested.
struct Axis {
    t_min: f64,
    t_max: f64,
    log: bool,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool, px_lo: f64, px_hi: f64) -> Axis {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            let t = if log { v.log10() } else { v };
            min = min.min(t);
            max = max.max(t);
        }
        let (t_min, t_max) = if min == max {
            (min - 0.5, max + 0.5)
        } else {
            let pad = 0.05 * (max - min);
            (min - pad, max + pad)
        };
        Axis {
            t_min,
            t_max,
            log,
            px_lo,
            px_hi,
        }
    }

    fn pixel(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        let frac = (t - self.t_min) / (self.t_max - self.t_min);
        self.px_lo + frac * (self.px_hi - self.px_lo)
    }

    /// Tick positions in data coordinates with their labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let lo = self.t_min.ceil() as i64;
            let hi = self.t_max.floor() as i64;
            if hi - lo >= 1 {
                return (lo..=hi)
                    .map(|e| (10f64.powi(e as i32), format!("1e{e}")))
                    .collect();
            }
            // under two decades of span: subdivide at 1, 2, and 5
            let mut ticks = Vec::new();
            for e in (self.t_min.floor() as i64)..=(self.t_max.ceil() as i64) {
                for m in [1u32, 2, 5] {
                    let v = m as f64 * 10f64.powi(e as i32);
                    let t = v.log10();
                    if (self.t_min..=self.t_max).contains(&t) {
                        ticks.push((v, format!("{m}e{e}")));
                    }
                }
            }
            return ticks;
        }
        let step = nice_step((self.t_max - self.t_min) / 5.0);
        let decimals = (-step.log10().floor()).max(0.0) as usize;
        let mut ticks = Vec::new();
        let mut t = (self.t_min / step).ceil() * step;
        while t <= self.t_max + 1e-9 * step {
            let rounded = (t / step).round() * step;
            ticks.push((rounded, format!("{rounded:.decimals$}")));
            t += step;
        }
        ticks
    }
}

/// Rounds a raw interval up to the nearest 1, 2, or 5 times a power of ten.
fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    let ratio = raw / mag;
    let factor = if ratio <= 1.0 {
        1.0
    } else if ratio <= 2.0 {
        2.0
    } else if ratio <= 5.0 {
        5.0
    } else {
        10.0
    };
    factor * mag
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw(spec: &PlotSpec, table: &Table) -> anyhow::Result<String> {
    let xs = table.series.iter().flatten().map(|p| p.0);
    let ys = table.series.iter().flatten().map(|p| p.1);
    let x_axis = Axis::fit(xs, spec.log_x, LEFT, RIGHT);
    let y_axis = Axis::fit(ys, spec.log_y, BOTTOM, TOP);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
    if let Some(title) = &spec.title {
        let _ = writeln!(
            svg,
            r#"<text x="400" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
            xml_escape(title)
        );
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#333333"/>"##,
        RIGHT - LEFT,
        BOTTOM - TOP
    );

    for (v, label) in x_axis.ticks() {
        let px = x_axis.pixel(v);
        if !(LEFT - 0.5..=RIGHT + 0.5).contains(&px) {
            continue;
        }
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{BOTTOM}" x2="{px:.2}" y2="{}" stroke="#333333"/>"##,
            BOTTOM + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{px:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            BOTTOM + 18.0,
            xml_escape(&label)
        );
    }
    for (v, label) in y_axis.ticks() {
        let py = y_axis.pixel(v);
        if !(TOP - 0.5..=BOTTOM + 0.5).contains(&py) {
            continue;
        }
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="#333333"/>"##,
            LEFT - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            py + 4.0,
            xml_escape(&label)
        );
    }
    // axis names
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 36.0,
        xml_escape(&spec.x)
    );

    for (i, (name, points)) in spec.series.iter().zip(&table.series).enumerate() {
        if points.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let dash = if spec.dashed.contains(name) {
            format!(r#" stroke-dasharray="{DASH}""#)
        } else {
            String::new()
        };
        let mut coords = String::new();
        for &(x, y) in points {
            let _ = write!(coords, "{:.2},{:.2} ", x_axis.pixel(x), y_axis.pixel(y));
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            coords.trim_end()
        );
    }

    // legend, top-left inside the frame
    for (i, name) in spec.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if spec.dashed.contains(name) {
            format!(r#" stroke-dasharray="{DASH}""#)
        } else {
            String::new()
        };
        let y = TOP + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            LEFT + 8.0,
            LEFT + 32.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            LEFT + 38.0,
            y + 4.0,
            xml_escape(name)
        );
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

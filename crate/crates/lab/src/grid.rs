//! Sweep output: `grid.csv`, `manifest.json`, `timing.json`, an SVG heatmap
//! and optional per-trial traces.
//!
//! Everything except `timing.json` is a pure function of the sweep
//! configuration, so rerunning a sweep reproduces those files byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{LabError, LabResult};
use crate::sweep::{CellResult, SweepConfig, SweepResult};

pub const GRID_HEADER: &str = "k,d,success_prob,trials";

#[derive(Debug, Clone, Copy, Default)]
pub struct EmitOptions {
    pub svg: bool,
    pub traces: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact: &'static str,
    version: &'static str,
    config_echo: &'a SweepConfig,
    cells: &'a [CellResult],
}

#[derive(Serialize)]
struct Timing {
    wall_time_secs: f64,
    workers: usize,
}

pub fn grid_csv(result: &SweepResult) -> String {
    let mut out = format!("{GRID_HEADER}\n");
    for c in &result.cells {
        writeln!(out, "{},{},{},{}", c.k, c.d, c.success_probability, c.trials).expect("write to string");
    }
    out
}

/// Parses `grid.csv` back into `(k, d) → (success_prob, trials)`.
pub fn read_grid_csv(path: &Path) -> LabResult<BTreeMap<(usize, usize), (f64, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let bad = |line: usize, message: String| LabError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == GRID_HEADER => {}
        _ => return Err(bad(1, format!("expected header {GRID_HEADER:?}"))),
    }
    let mut grid = BTreeMap::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let parse_err = |what: &str| bad(i + 1, format!("cannot parse {what}"));
        let k = f[0].parse().map_err(|_| parse_err("k"))?;
        let d = f[1].parse().map_err(|_| parse_err("d"))?;
        let p = f[2].parse().map_err(|_| parse_err("success_prob"))?;
        let t = f[3].parse().map_err(|_| parse_err("trials"))?;
        grid.insert((k, d), (p, t));
    }
    Ok(grid)
}

/// Heatmap color: blue at 0, red at 1, linear in between.
pub fn cell_color(p: f64) -> (u8, u8, u8) {
    let p = p.clamp(0.0, 1.0);
    ((255.0 * p).round() as u8, 0, (255.0 * (1.0 - p)).round() as u8)
}

const CELL: f64 = 24.0;
const MARGIN: f64 = 48.0;

/// Heatmap with `k` across and `d` upward, plus the curve `kd = n`.
pub fn grid_svg(result: &SweepResult) -> String {
    let cfg = &result.config_echo;
    let (kmin, kmax) = bounds(&cfg.k_values);
    let (dmin, dmax) = bounds(&cfg.d_values);
    let cols = (kmax - kmin + 1) as f64;
    let rows = (dmax - dmin + 1) as f64;
    let (w, h) = (2.0 * MARGIN + cols * CELL, 2.0 * MARGIN + rows * CELL);
    // Continuous grid coordinates to pixels; cell (k, d) spans k ± 1/2.
    let px = |k: f64| MARGIN + (k - kmin as f64 + 0.5) * CELL;
    let py = |d: f64| h - MARGIN - (d - dmin as f64 + 0.5) * CELL;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    for c in &result.cells {
        let (r, g, b) = cell_color(c.success_probability);
        writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({r},{g},{b})"><title>k={} d={} p={}</title></rect>"#,
            px(c.k as f64 - 0.5),
            py(c.d as f64 + 0.5),
            c.k,
            c.d,
            c.success_probability
        )
        .unwrap();
    }
    let n = cfg.n as f64;
    let (k_lo, k_hi) = (kmin as f64 - 0.5, kmax as f64 + 0.5);
    let (d_lo, d_hi) = (dmin as f64 - 0.5, dmax as f64 + 0.5);
    let steps = 200;
    let pts: Vec<String> = (0..=steps)
        .map(|i| k_lo + (k_hi - k_lo) * i as f64 / steps as f64)
        .filter(|&k| {
            let d = n / k;
            d >= d_lo && d <= d_hi
        })
        .map(|k| format!("{:.2},{:.2}", px(k), py(n / k)))
        .collect();
    if pts.len() >= 2 {
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="white" stroke-width="2"/>"#,
            pts.join(" ")
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">k</text>"#,
        w / 2.0,
        h - MARGIN / 3.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">d</text>"#,
        MARGIN / 3.0,
        h / 2.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

fn bounds(v: &[usize]) -> (usize, usize) {
    (
        v.iter().copied().min().unwrap_or(1),
        v.iter().copied().max().unwrap_or(1),
    )
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> LabResult<()> {
    fs::write(&path, contents).map_err(|e| LabError::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the sweep's files under `dir` (created if needed) and returns
/// their paths.
pub fn emit_grid(result: &SweepResult, dir: &Path, opts: EmitOptions) -> LabResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut written = Vec::new();
    write(dir.join("grid.csv"), &grid_csv(result), &mut written)?;
    let manifest = Manifest {
        artifact: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_echo: &result.config_echo,
        cells: &result.cells,
    };
    write(
        dir.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
        &mut written,
    )?;
    let timing = Timing {
        wall_time_secs: result.wall_time,
        workers: result.config_echo.workers,
    };
    write(
        dir.join("timing.json"),
        &(serde_json::to_string_pretty(&timing)? + "\n"),
        &mut written,
    )?;
    if opts.svg {
        write(dir.join("grid.svg"), &grid_svg(result), &mut written)?;
    }
    if opts.traces {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir).map_err(|e| LabError::io(&tdir, e))?;
        for c in &result.cells {
            for o in &c.outcomes {
                if let Some(trace) = &o.trace {
                    let name = format!("cell_k{}_d{}_t{}.csv", c.k, c.d, o.trial);
                    write(tdir.join(name), &trace.to_csv(), &mut written)?;
                }
            }
        }
    }
    Ok(written)
}

//! Synthetic datasets and the headerless CSV format.
//!
//! One row per sample: `d` feature columns followed by the label, every
//! value written as `{:.16e}` (17 significant digits), which reads back to
//! the identical `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use overparam_core::seeding::rng_from_seed;
use overparam_core::tensorlin::{norm2, Matrix};
use overparam_core::Dataset;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "path")]
pub enum LabelMode {
    /// i.i.d. standard normal labels.
    Gaussian,
    /// i.i.d. uniform `±1` labels.
    Signs,
    /// One label per line, read from a file.
    File(PathBuf),
}

/// `n` points uniform on the unit sphere in `R^d` (normalized Gaussian rows)
/// with labels per `labels`. The features are drawn first, row by row, then
/// the labels, all from one generator seeded with `seed`.
pub fn gen_dataset(n: usize, d: usize, labels: &LabelMode, seed: u64) -> LabResult<Dataset> {
    if n == 0 || d == 0 {
        return Err(LabError::Config(format!("need n, d >= 1, got n={n}, d={d}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut x = Vec::with_capacity(n * d);
    for i in 0..n {
        let row = sphere_row(&mut rng, d).ok_or_else(|| {
            LabError::Config(format!("row {i} drew a zero vector twice"))
        })?;
        x.extend(row);
    }
    let y = match labels {
        LabelMode::Gaussian => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
        LabelMode::Signs => (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
        LabelMode::File(path) => {
            let y = read_labels(path)?;
            if y.len() != n {
                return Err(LabError::Config(format!(
                    "{} holds {} labels, expected {n}",
                    path.display(),
                    y.len()
                )));
            }
            y
        }
    };
    Ok(Dataset::new(Matrix::from_vec(n, d, x)?, y)?)
}

fn sphere_row(rng: &mut impl Rng, d: usize) -> Option<Vec<f64>> {
    for _ in 0..2 {
        let mut row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let nrm = norm2(&row);
        if nrm > 0.0 {
            row.iter_mut().for_each(|v| *v /= nrm);
            return Some(row);
        }
    }
    None
}

fn read_labels(path: &Path) -> LabResult<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_value(path, i + 1, l))
        .collect()
}

fn parse_value(path: &Path, line: usize, field: &str) -> LabResult<f64> {
    field.trim().parse().map_err(|_| LabError::Format {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {:?} as a number", field.trim()),
    })
}

pub fn to_csv(data: &Dataset) -> String {
    let mut out = String::new();
    for (row, y) in data.x().row_iter().zip(data.y()) {
        for v in row {
            write!(out, "{v:.16e},").expect("write to string");
        }
        writeln!(out, "{y:.16e}").expect("write to string");
    }
    out
}

pub fn write_csv(data: &Dataset, path: &Path) -> LabResult<()> {
    fs::write(path, to_csv(data)).map_err(|e| LabError::io(path, e))
}

/// Reads a dataset written by [`write_csv`]. Rows must already have unit
/// norm unless `normalize` is set.
pub fn read_csv(path: &Path, normalize: bool) -> LabResult<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| parse_value(path, i + 1, f))
            .collect::<LabResult<_>>()?;
        if fields.len() < 2 {
            return Err(LabError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(LabError::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected {w} fields, found {}", fields.len()),
                })
            }
            Some(_) => {}
        }
        let (label, features) = fields.split_last().expect("nonempty");
        x.extend_from_slice(features);
        y.push(*label);
    }
    let Some(w) = width else {
        return Err(LabError::Format {
            path: path.to_path_buf(),
            line: 0,
            message: "no samples".into(),
        });
    };
    let x = Matrix::from_vec(y.len(), w - 1, x)?;
    let data = if normalize {
        Dataset::normalized(x, y)
    } else {
        Dataset::new(x, y)
    };
    data.map_err(|e| LabError::Format {
        path: path.to_path_buf(),
        line: 0,
        message: format!("{e} (pass --normalize to rescale rows)"),
    })
}

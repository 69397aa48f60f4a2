//! Plain-text dataset tables.
//!
//! ```text
//! # dims=2 classes=3
//! 0,1,1.23456789e0,-4.00000000e-1
//! ```
//!
//! One row per point: id, label, then the features with 9 significant
//! digits.

use std::fmt::Write as _;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub fn format_dataset(data: &Dataset) -> String {
    let mut out = format!("# dims={} classes={}\n", data.n_dims(), data.n_classes());
    for i in 0..data.len() {
        write!(out, "{},{}", data.ids()[i], data.y(i)).unwrap();
        for v in data.x(i) {
            write!(out, ",{v:.8e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("empty dataset file".into()))?;
    let (dims, classes) = parse_header(header)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut features = Vec::new();
    for (lineno, line) in lines {
        let bad = |what: &str| Error::Format(format!("line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dims + 2 {
            return Err(bad(&format!(
                "expected {} fields, found {}",
                dims + 2,
                fields.len()
            )));
        }
        ids.push(fields[0].parse::<u64>().map_err(|_| bad("bad id"))?);
        labels.push(fields[1].parse::<usize>().map_err(|_| bad("bad label"))?);
        for f in &fields[2..] {
            features.push(f.parse::<f64>().map_err(|_| bad("bad feature"))?);
        }
    }
    let n = ids.len();
    Dataset::new(Matrix::new(n, dims, features)?, labels, ids, classes)
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = || {
        Error::Format(format!(
            "bad header `{line}`, expected `# dims=<d> classes=<k>`"
        ))
    };
    let rest = line.trim().strip_prefix('#').ok_or_else(bad)?;
    let mut dims = None;
    let mut classes = None;
    for tok in rest.split_whitespace() {
        match tok.split_once('=') {
            Some(("dims", v)) => dims = v.parse().ok(),
            Some(("classes", v)) => classes = v.parse().ok(),
            _ => return Err(bad()),
        }
    }
    Ok((dims.ok_or_else(bad)?, classes.ok_or_else(bad)?))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    std::fs::write(path, format_dataset(data))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

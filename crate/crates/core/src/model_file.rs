//! Plain-text container for fitted models.
//!
//! ```text
//! passive-gp-model 1
//! kind full-d-gp
//! noise_variance 1.0000000000000000e2
//! lengthscales 3
//! <row>
//! prior_mean 3
//! <row>
//! hypervariances 3 3        (an N-vector block "hypervariances N" for ard/diag)
//! <rows>
//! train_velocities D N
//! <rows>
//! train_torques D N
//! <rows>
//! end
//! ```
//!
//! Numbers use 17 significant digits. Loading refits the model from the
//! stored training data, which reproduces the cached solves bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::dataset::{fmt_f64, Dataset};
use crate::error::{Error, Result};
use crate::models::{FittedModel, ModelKernel, ModelKind, PriorMean};
use crate::passivity::Hypervariances;

const MAGIC: &str = "passive-gp-model 1";

fn write_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let row: Vec<String> = values.map(fmt_f64).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    writeln!(out, "{name} {} {}", m.nrows(), m.ncols()).unwrap();
    for i in 0..m.nrows() {
        write_row(out, m.row(i).iter().copied());
    }
}

fn write_vector(out: &mut String, name: &str, v: &[f64]) {
    writeln!(out, "{name} {}", v.len()).unwrap();
    write_row(out, v.iter().copied());
}

pub fn to_text(model: &FittedModel) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "kind {}", model.kind()).unwrap();
    writeln!(out, "noise_variance {}", fmt_f64(model.noise_variance())).unwrap();
    write_vector(&mut out, "lengthscales", model.kernel().lengthscales());
    write_vector(&mut out, "prior_mean", model.prior_mean().coefficients());
    match model.kernel().hypervariances() {
        Hypervariances::Full(s) => write_matrix(&mut out, "hypervariances", &s),
        Hypervariances::Diag(v) => write_vector(&mut out, "hypervariances", &v),
    }
    write_matrix(&mut out, "train_velocities", model.train_data().velocities());
    write_matrix(&mut out, "train_torques", model.train_data().torques());
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        for (i, l) in self.inner.by_ref() {
            self.last = i + 1;
            let t = l.trim();
            if !t.is_empty() {
                return Ok(t);
            }
        }
        Err(Error::Parse { line: self.last + 1, message: "unexpected end of model file".into() })
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { line: self.last, message: message.into() }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.collect()),
            _ => Err(self.err(format!("expected {key:?}, found {line:?}"))),
        }
    }

    fn numbers(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| self.err(format!("bad number {s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn dims(&self, parts: &[&str]) -> Result<Vec<usize>> {
        parts
            .iter()
            .map(|s| s.parse::<usize>().map_err(|e| self.err(format!("bad size {s:?}: {e}"))))
            .collect()
    }

    fn vector(&mut self, key: &str) -> Result<Vec<f64>> {
        let parts = self.keyed(key)?;
        let d = self.dims(&parts)?;
        if d.len() != 1 {
            return Err(self.err(format!("{key} expects one size")));
        }
        self.numbers(d[0])
    }

    fn block(&mut self, key: &str) -> Result<Block> {
        let parts = self.keyed(key)?;
        let d = self.dims(&parts)?;
        match d.as_slice() {
            [n] => Ok(Block::Vector(self.numbers(*n)?)),
            [r, c] => {
                let mut m = DMatrix::zeros(*r, *c);
                for i in 0..*r {
                    let row = self.numbers(*c)?;
                    for j in 0..*c {
                        m[(i, j)] = row[j];
                    }
                }
                Ok(Block::Matrix(m))
            }
            _ => Err(self.err(format!("{key} expects one or two sizes"))),
        }
    }

    fn matrix(&mut self, key: &str) -> Result<DMatrix<f64>> {
        match self.block(key)? {
            Block::Matrix(m) => Ok(m),
            Block::Vector(_) => Err(self.err(format!("{key} must be a matrix block"))),
        }
    }
}

enum Block {
    Vector(Vec<f64>),
    Matrix(DMatrix<f64>),
}

pub fn from_text(text: &str) -> Result<FittedModel> {
    let mut lines = Lines { inner: text.lines().enumerate(), last: 0 };
    let magic = lines.next_line()?;
    if magic != MAGIC {
        return Err(lines.err(format!("expected header {MAGIC:?}")));
    }
    let kind: ModelKind = lines.keyed("kind")?.first().copied().unwrap_or("").parse()?;
    let noise = lines.keyed("noise_variance")?;
    let noise_variance: f64 = noise
        .first()
        .ok_or_else(|| lines.err("missing noise variance"))?
        .parse()
        .map_err(|e| lines.err(format!("bad noise variance: {e}")))?;
    let lengthscales = lines.vector("lengthscales")?;
    let prior = PriorMean::new(lines.vector("prior_mean")?)?;
    let hv = match lines.block("hypervariances")? {
        Block::Vector(v) => Hypervariances::Diag(v),
        Block::Matrix(m) => Hypervariances::Full(m),
    };
    let q = lines.matrix("train_velocities")?;
    let y = lines.matrix("train_torques")?;
    if lines.next_line()? != "end" {
        return Err(lines.err("expected end"));
    }
    let kernel = ModelKernel::build(kind, &lengthscales, &hv)?;
    FittedModel::fit(kernel, prior, &Dataset::new(q, y)?, noise_variance)
}

pub fn save(model: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<FittedModel> {
    from_text(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fit_prior_mean;

    #[test]
    fn round_trip_all_kinds() {
        let data = Dataset::from_rows(
            &[vec![0.1, 1.0 / 3.0], vec![-2.0, 0.7], vec![1.5, -0.2]],
            &[vec![0.3, 0.9], vec![-4.1, 1.2], vec![2.2, -0.1]],
        )
        .unwrap();
        for kind in ModelKind::ALL {
            let hv = match kind {
                ModelKind::FullD => Hypervariances::Full(DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4])),
                _ => Hypervariances::Diag(vec![0.7, 1.0 / 7.0]),
            };
            let k = ModelKernel::build(kind, &[0.9, 1.1], &hv).unwrap();
            let m = FittedModel::fit(k, fit_prior_mean(&data), &data, 0.05).unwrap();
            let text = to_text(&m);
            let back = from_text(&text).unwrap();
            assert_eq!(back, m);
            assert_eq!(to_text(&back), text);
        }
    }

    #[test]
    fn truncated_file_errors() {
        assert!(matches!(from_text("passive-gp-model 1\nkind diag-d-gp\n"), Err(Error::Parse { .. })));
        assert!(matches!(from_text("nope"), Err(Error::Parse { line: 1, .. })));
    }
}

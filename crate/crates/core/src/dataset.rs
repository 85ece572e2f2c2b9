//! Paired velocity/torque observations, domain boxes and the dataset CSV
//! format.
//!
//! CSV layout: an optional `# noise_variance=<value>` comment, a header
//! `qd_1,..,qd_N,tau_1,..,tau_N`, then one sample per row. Values are
//! written with 17 significant digits so 64-bit floats round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `D` paired observations of generalized velocity and damping torque.
///
/// Row `i` of `velocities` is `qd_i`, row `i` of `torques` is `y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    velocities: DMatrix<f64>,
    torques: DMatrix<f64>,
    noise_variance_hint: Option<f64>,
}

impl Dataset {
    pub fn new(velocities: DMatrix<f64>, torques: DMatrix<f64>) -> Result<Self> {
        if velocities.nrows() == 0 || velocities.ncols() == 0 {
            return Err(Error::input("dataset needs at least one row and one dimension"));
        }
        if velocities.shape() != torques.shape() {
            return Err(Error::input(format!(
                "velocity shape {:?} does not match torque shape {:?}",
                velocities.shape(),
                torques.shape()
            )));
        }
        if velocities.iter().chain(torques.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("dataset contains non-finite entries"));
        }
        Ok(Dataset { velocities, torques, noise_variance_hint: None })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(velocities: &[Vec<f64>], torques: &[Vec<f64>]) -> Result<Self> {
        let q = rows_to_matrix(velocities)?;
        let y = rows_to_matrix(torques)?;
        Dataset::new(q, y)
    }

    pub fn with_noise_variance_hint(mut self, hint: Option<f64>) -> Self {
        self.noise_variance_hint = hint;
        self
    }

    pub fn noise_variance_hint(&self) -> Option<f64> {
        self.noise_variance_hint
    }

    /// Number of samples `D`.
    pub fn len(&self) -> usize {
        self.velocities.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of generalized coordinates `N`.
    pub fn dim(&self) -> usize {
        self.velocities.ncols()
    }

    pub fn velocities(&self) -> &DMatrix<f64> {
        &self.velocities
    }

    pub fn torques(&self) -> &DMatrix<f64> {
        &self.torques
    }

    pub fn velocity(&self, i: usize) -> Vec<f64> {
        self.velocities.row(i).iter().copied().collect()
    }

    pub fn torque(&self, i: usize) -> Vec<f64> {
        self.torques.row(i).iter().copied().collect()
    }

    pub fn velocity_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.velocity(i)).collect()
    }

    /// Torque column `m` as a vector over samples.
    pub fn output(&self, m: usize) -> DVector<f64> {
        self.torques.column(m).into_owned()
    }

    /// Returns a copy with one extra row appended.
    pub fn appended(&self, velocity: &[f64], torque: &[f64]) -> Result<Dataset> {
        if velocity.len() != self.dim() || torque.len() != self.dim() {
            return Err(Error::input("appended row has the wrong dimension"));
        }
        let d = self.len();
        let q = self.velocities.clone().insert_row(d, 0.0);
        let y = self.torques.clone().insert_row(d, 0.0);
        let mut q = q;
        let mut y = y;
        for n in 0..self.dim() {
            q[(d, n)] = velocity[n];
            y[(d, n)] = torque[n];
        }
        Ok(Dataset::new(q, y)?.with_noise_variance_hint(self.noise_variance_hint))
    }

    /// Returns a dataset with rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Dataset> {
        if order.len() != self.len() {
            return Err(Error::input("permutation length does not match dataset"));
        }
        let q = DMatrix::from_fn(self.len(), self.dim(), |i, n| self.velocities[(order[i], n)]);
        let y = DMatrix::from_fn(self.len(), self.dim(), |i, n| self.torques[(order[i], n)]);
        Ok(Dataset::new(q, y)?.with_noise_variance_hint(self.noise_variance_hint))
    }

    /// Serializes to the CSV text format.
    pub fn to_csv_string(&self) -> String {
        let n = self.dim();
        let mut out = String::new();
        if let Some(h) = self.noise_variance_hint {
            writeln!(out, "# noise_variance={}", fmt_f64(h)).unwrap();
        }
        let header: Vec<String> = (1..=n)
            .map(|k| format!("qd_{k}"))
            .chain((1..=n).map(|k| format!("tau_{k}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> = self
                .velocities
                .row(i)
                .iter()
                .chain(self.torques.row(i).iter())
                .map(|v| fmt_f64(*v))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses the CSV text format.
    pub fn from_csv_str(text: &str) -> Result<Dataset> {
        let mut hint = None;
        let mut width: Option<usize> = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("noise_variance=") {
                    hint = Some(v.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad noise_variance: {e}"),
                    })?);
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let Some(w) = width else {
                width = Some(parse_header(&fields, line_no)?);
                continue;
            };
            if fields.len() != w {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {w} columns, found {}", fields.len()),
                });
            }
            let row = fields
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad number {f:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse { line: line_no, message: "non-finite value".into() });
            }
            rows.push(row);
        }
        let Some(w) = width else {
            return Err(Error::Parse { line: 1, message: "no data rows".into() });
        };
        if rows.is_empty() {
            return Err(Error::Parse { line: text.lines().count().max(1), message: "no data rows".into() });
        }
        let n = w / 2;
        let q = DMatrix::from_fn(rows.len(), n, |i, k| rows[i][k]);
        let y = DMatrix::from_fn(rows.len(), n, |i, k| rows[i][n + k]);
        Ok(Dataset::new(q, y)?.with_noise_variance_hint(hint))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let text = fs::read_to_string(path)?;
        Dataset::from_csv_str(&text)
    }
}

fn parse_header(fields: &[&str], line: usize) -> Result<usize> {
    let w = fields.len();
    if w == 0 || w % 2 != 0 {
        return Err(Error::Parse { line, message: format!("header must have 2N columns, found {w}") });
    }
    let n = w / 2;
    for (k, f) in fields.iter().enumerate() {
        let expected = if k < n { format!("qd_{}", k + 1) } else { format!("tau_{}", k - n + 1) };
        if *f != expected {
            return Err(Error::Parse { line, message: format!("expected header column {expected:?}, found {f:?}") });
        }
    }
    Ok(w)
}

/// Formats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if d == 0 {
        return Err(Error::input("no rows"));
    }
    let n = rows[0].len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::input("rows have differing lengths"));
    }
    Ok(DMatrix::from_fn(d, n, |i, k| rows[i][k]))
}

/// Axis-aligned box `[lower_n, upper_n]` in velocity space.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::input("box bounds must be nonempty and of equal length"));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::input(format!("invalid box interval [{lo}, {hi}]")));
            }
        }
        Ok(BoxDomain { lower, upper })
    }

    /// Parses `lo:hi,lo:hi,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for part in text.split(',') {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| Error::input(format!("domain interval {part:?} is not lo:hi")))?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::input(format!("bad domain bound {s:?}: {e}")))
            };
            lower.push(parse(lo)?);
            upper.push(parse(hi)?);
        }
        BoxDomain::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// All `2^N` corners, in binary counting order.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..(1usize << n))
            .map(|mask| (0..n).map(|k| if mask >> k & 1 == 1 { self.upper[k] } else { self.lower[k] }).collect())
            .collect()
    }

    pub fn to_arg_string(&self) -> String {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| format!("{l}:{u}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        Dataset::from_rows(
            &[vec![0.1, -2.5], vec![1.0 / 3.0, 7.0e-12]],
            &[vec![std::f64::consts::PI, 4.0], vec![-1e300, 5.5]],
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let d = sample().with_noise_variance_hint(Some(0.1));
        let back = Dataset::from_csv_str(&d.to_csv_string()).unwrap();
        assert_eq!(d, back);
        for (a, b) in d.torques().iter().zip(back.torques().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn short_row_reports_its_line() {
        let text = "qd_1,qd_2,tau_1,tau_2\n1,2,3,4\n1,2,3\n";
        match Dataset::from_csv_str(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_has_no_data_rows() {
        let err = Dataset::from_csv_str("").unwrap_err();
        assert!(err.to_string().contains("no data rows"));
        let err = Dataset::from_csv_str("qd_1,tau_1\n").unwrap_err();
        assert!(err.to_string().contains("no data rows"));
    }

    #[test]
    fn rejects_non_finite() {
        let q = DMatrix::from_element(1, 1, f64::NAN);
        assert!(Dataset::new(q, DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn box_parse_and_corners() {
        let b = BoxDomain::parse("-1:1,2:3").unwrap();
        assert_eq!(b.corners().len(), 4);
        assert!(b.contains(&[0.0, 2.5]));
        assert!(!b.contains(&[0.0, 3.5]));
        assert!(BoxDomain::parse("1:0").is_err());
    }
}

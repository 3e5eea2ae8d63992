//! Observed-data panel, its dropout invariants, and CSV ingestion.
//!
//! A panel holds `n` units with covariates `X` (fully observed), a binary
//! treatment `A`, short-term outcomes `S_1..S_{t0}`, a long-term outcome `Y`,
//! and an observation-indicator matrix `R` with `T = t0 + 1` columns (the
//! last column indicates `Y`). Dropout is monotone: each row of `R` is
//! non-increasing, so a unit missing at stage `t` is missing at every later
//! stage. Missing outcome entries are represented as `None`, never as a
//! numeric sentinel.

use ndarray::{Array1, Array2, Array3};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// First breach of the monotone-dropout rule: unit `unit` is missing at
/// stage `stage` but observed again at `later_stage` (1-based stages).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonotoneViolation {
    pub unit: usize,
    pub stage: usize,
    pub later_stage: usize,
}

impl fmt::Display for MonotoneViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unit {} is missing at stage {} but observed at stage {}",
            self.unit, self.stage, self.later_stage
        )
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("monotone dropout violated: {0}")]
    Monotone(MonotoneViolation),
    #[error("unit {unit}, stage {stage}: outcome {} but indicator is {}",
            if *present { "present" } else { "absent" }, if *present { 0 } else { 1 })]
    PresenceMismatch {
        unit: usize,
        stage: usize,
        present: bool,
    },
    #[error("non-finite value in {field} at unit {unit}")]
    NonFinite { field: &'static str, unit: usize },
    #[error("{field} must be 0 or 1 at unit {unit}")]
    NotBinary { field: &'static str, unit: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stage {stage} out of range 1..={t}")]
    StageOutOfRange { stage: usize, t: usize },
    #[error("csv parse error at row {row}, column `{column}`: {message}")]
    CsvParse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("csv header is missing column `{0}`")]
    MissingColumn(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Checks that every row of a 0/1 indicator matrix is non-increasing.
///
/// Returns the first offending (unit, stage, later stage) triple, scanning
/// units in order and stages left to right. An empty matrix passes.
pub fn validate_monotone(r: &Array2<u8>) -> Result<(), MonotoneViolation> {
    for (i, row) in r.outer_iter().enumerate() {
        let mut dropped_at: Option<usize> = None;
        for (t, &v) in row.iter().enumerate() {
            match (dropped_at, v) {
                (None, 0) => dropped_at = Some(t),
                (Some(stage), 1) => {
                    return Err(MonotoneViolation {
                        unit: i,
                        stage: stage + 1,
                        later_stage: t + 1,
                    })
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Observed panel for one study. Immutable after construction; all
/// invariants are checked by [`LongTermDataset::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct LongTermDataset {
    x: Array2<f64>,
    a: Array1<u8>,
    s: Array2<Option<f64>>,
    y: Array1<Option<f64>>,
    r: Array2<u8>,
}

impl LongTermDataset {
    pub fn new(
        x: Array2<f64>,
        a: Array1<u8>,
        s: Array2<Option<f64>>,
        y: Array1<Option<f64>>,
        r: Array2<u8>,
    ) -> Result<Self, DatasetError> {
        let n = x.nrows();
        let t = r.ncols();
        if t < 2 {
            return Err(DatasetError::Shape(format!(
                "need at least 2 outcome stages, got {t}"
            )));
        }
        if s.ncols() != t - 1 {
            return Err(DatasetError::Shape(format!(
                "S has {} columns but R has {} (expected one fewer)",
                s.ncols(),
                t
            )));
        }
        for (name, len) in [("A", a.len()), ("S", s.nrows()), ("Y", y.len()), ("R", r.nrows())] {
            if len != n {
                return Err(DatasetError::Shape(format!(
                    "{name} has {len} rows but X has {n}"
                )));
            }
        }
        for (i, row) in x.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { field: "X", unit: i });
            }
        }
        for (i, &ai) in a.iter().enumerate() {
            if ai > 1 {
                return Err(DatasetError::NotBinary { field: "A", unit: i });
            }
        }
        for (i, row) in r.outer_iter().enumerate() {
            if row.iter().any(|&v| v > 1) {
                return Err(DatasetError::NotBinary { field: "R", unit: i });
            }
        }
        validate_monotone(&r).map_err(DatasetError::Monotone)?;
        for i in 0..n {
            for t_idx in 0..t - 1 {
                let observed = r[[i, t_idx]] == 1;
                match s[[i, t_idx]] {
                    Some(v) if !observed => {
                        let _ = v;
                        return Err(DatasetError::PresenceMismatch {
                            unit: i,
                            stage: t_idx + 1,
                            present: true,
                        });
                    }
                    None if observed => {
                        return Err(DatasetError::PresenceMismatch {
                            unit: i,
                            stage: t_idx + 1,
                            present: false,
                        });
                    }
                    Some(v) if !v.is_finite() => {
                        return Err(DatasetError::NonFinite { field: "S", unit: i });
                    }
                    _ => {}
                }
            }
            let y_observed = r[[i, t - 1]] == 1;
            match y[i] {
                Some(v) if !y_observed => {
                    let _ = v;
                    return Err(DatasetError::PresenceMismatch {
                        unit: i,
                        stage: t,
                        present: true,
                    });
                }
                None if y_observed => {
                    return Err(DatasetError::PresenceMismatch {
                        unit: i,
                        stage: t,
                        present: false,
                    });
                }
                Some(v) if !v.is_finite() => {
                    return Err(DatasetError::NonFinite { field: "Y", unit: i });
                }
                _ => {}
            }
        }
        Ok(Self { x, a, s, y, r })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Total number of outcome stages `T` (short-term stages plus one).
    pub fn stages(&self) -> usize {
        self.r.ncols()
    }

    /// Number of short-term stages `t0 = T - 1`.
    pub fn t0(&self) -> usize {
        self.r.ncols() - 1
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn a(&self) -> &Array1<u8> {
        &self.a
    }

    pub fn s(&self) -> &Array2<Option<f64>> {
        &self.s
    }

    pub fn y(&self) -> &Array1<Option<f64>> {
        &self.y
    }

    pub fn r(&self) -> &Array2<u8> {
        &self.r
    }

    /// Observation indicator for unit `i` at 1-based stage `t`.
    pub fn observed(&self, i: usize, t: usize) -> bool {
        self.r[[i, t - 1]] == 1
    }

    /// Units with the stage-`t` outcome observed (1-based `t`; stage `T`
    /// selects on `Y`). The sets are nested decreasing in `t` by
    /// monotonicity.
    pub fn observed_subset(&self, t: usize) -> Result<Vec<usize>, DatasetError> {
        if t < 1 || t > self.stages() {
            return Err(DatasetError::StageOutOfRange {
                stage: t,
                t: self.stages(),
            });
        }
        Ok((0..self.n()).filter(|&i| self.r[[i, t - 1]] == 1).collect())
    }

    /// Writes the panel in the wide CSV layout described by `schema`.
    /// Missing outcome cells are written as empty strings.
    pub fn write_csv(&self, path: &Path, schema: &CsvSchema) -> Result<(), DatasetError> {
        schema.check_shape(self.p(), self.stages())?;
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = schema.x.iter().map(String::as_str).collect();
        header.push(&schema.a);
        header.extend(schema.s.iter().map(String::as_str));
        header.push(&schema.y);
        header.extend(schema.r.iter().map(String::as_str));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            for j in 0..self.p() {
                rec.push(fmt_f64(self.x[[i, j]]));
            }
            rec.push(self.a[i].to_string());
            for t in 0..self.t0() {
                rec.push(self.s[[i, t]].map(fmt_f64).unwrap_or_default());
            }
            rec.push(self.y[i].map(fmt_f64).unwrap_or_default());
            for t in 0..self.stages() {
                rec.push(self.r[[i, t]].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest f64 formatting that round-trips exactly.
fn fmt_f64(v: f64) -> String {
    let mut buf = ryu_like(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_like(v: f64) -> String {
    // `{}` on f64 is the shortest representation that parses back exactly.
    format!("{v}")
}

/// Column names for the wide CSV layout `x1..xp, a, s1..s{t0}, y, r1..rT`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub x: Vec<String>,
    pub a: String,
    pub s: Vec<String>,
    pub y: String,
    pub r: Vec<String>,
}

impl CsvSchema {
    /// The standard column names for `p` covariates and `t` stages.
    pub fn standard(p: usize, t: usize) -> Self {
        Self {
            x: (1..=p).map(|j| format!("x{j}")).collect(),
            a: "a".to_string(),
            s: (1..t).map(|u| format!("s{u}")).collect(),
            y: "y".to_string(),
            r: (1..=t).map(|u| format!("r{u}")).collect(),
        }
    }

    fn check_shape(&self, p: usize, t: usize) -> Result<(), DatasetError> {
        if self.x.len() != p || self.s.len() != t - 1 || self.r.len() != t {
            return Err(DatasetError::Shape(format!(
                "schema has {} x / {} s / {} r columns, dataset needs {p} / {} / {t}",
                self.x.len(),
                self.s.len(),
                self.r.len(),
                t - 1
            )));
        }
        Ok(())
    }
}

/// Loads a panel from a wide CSV file. Empty outcome cells must line up
/// with zero observation indicators; the constructed dataset passes all
/// panel invariants or an error pinpointing the breach is returned.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LongTermDataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let x_idx: Vec<usize> = schema.x.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
    let a_idx = col(&schema.a)?;
    let s_idx: Vec<usize> = schema.s.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
    let y_idx = col(&schema.y)?;
    let r_idx: Vec<usize> = schema.r.iter().map(|c| col(c)).collect::<Result<_, _>>()?;

    let p = x_idx.len();
    let t = r_idx.len();
    let mut x_rows: Vec<f64> = Vec::new();
    let mut a: Vec<u8> = Vec::new();
    let mut s_rows: Vec<Option<f64>> = Vec::new();
    let mut y: Vec<Option<f64>> = Vec::new();
    let mut r_rows: Vec<u8> = Vec::new();

    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let get = |idx: usize, name: &str| -> Result<&str, DatasetError> {
            record.get(idx).ok_or_else(|| DatasetError::CsvParse {
                row: row_no + 2,
                column: name.to_string(),
                message: "row has too few fields".to_string(),
            })
        };
        let parse_f64 = |raw: &str, name: &str| -> Result<f64, DatasetError> {
            raw.trim().parse::<f64>().map_err(|e| DatasetError::CsvParse {
                row: row_no + 2,
                column: name.to_string(),
                message: e.to_string(),
            })
        };
        let parse_bit = |raw: &str, name: &str| -> Result<u8, DatasetError> {
            match raw.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(DatasetError::CsvParse {
                    row: row_no + 2,
                    column: name.to_string(),
                    message: format!("expected 0 or 1, got `{other}`"),
                }),
            }
        };

        for (j, &idx) in x_idx.iter().enumerate() {
            x_rows.push(parse_f64(get(idx, &schema.x[j])?, &schema.x[j])?);
        }
        a.push(parse_bit(get(a_idx, &schema.a)?, &schema.a)?);
        for (u, &idx) in s_idx.iter().enumerate() {
            let raw = get(idx, &schema.s[u])?;
            s_rows.push(if raw.trim().is_empty() {
                None
            } else {
                Some(parse_f64(raw, &schema.s[u])?)
            });
        }
        let raw_y = get(y_idx, &schema.y)?;
        y.push(if raw_y.trim().is_empty() {
            None
        } else {
            Some(parse_f64(raw_y, &schema.y)?)
        });
        for (u, &idx) in r_idx.iter().enumerate() {
            r_rows.push(parse_bit(get(idx, &schema.r[u])?, &schema.r[u])?);
        }
    }

    let n = a.len();
    let x = Array2::from_shape_vec((n, p), x_rows)
        .map_err(|e| DatasetError::Shape(e.to_string()))?;
    let s = Array2::from_shape_vec((n, t - 1), s_rows)
        .map_err(|e| DatasetError::Shape(e.to_string()))?;
    let r = Array2::from_shape_vec((n, t), r_rows)
        .map_err(|e| DatasetError::Shape(e.to_string()))?;
    LongTermDataset::new(x, Array1::from_vec(a), s, Array1::from_vec(y), r)
}

/// Potential outcomes and true effects for synthetic data.
///
/// `tau` is the finite-sample mean of `Y(1) - Y(0)` over the generated
/// units; `tau_x` holds per-unit conditional means of the effect given the
/// unit's covariates, estimated by averaging the generator over fresh noise
/// draws.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    s_pot: Array3<f64>,
    y_pot: Array2<f64>,
    tau: f64,
    tau_x: Array1<f64>,
}

impl GroundTruth {
    /// `s_pot` is `n x t0 x 2`, `y_pot` is `n x 2` (last axis is the arm).
    /// `tau` is computed here so it is exactly the mean of the `y_pot`
    /// differences.
    pub fn new(s_pot: Array3<f64>, y_pot: Array2<f64>, tau_x: Array1<f64>) -> Self {
        let n = y_pot.nrows();
        assert_eq!(y_pot.ncols(), 2, "y_pot must have one column per arm");
        assert_eq!(s_pot.shape()[0], n);
        assert_eq!(s_pot.shape()[2], 2);
        assert_eq!(tau_x.len(), n);
        let tau = (0..n).map(|i| y_pot[[i, 1]] - y_pot[[i, 0]]).sum::<f64>() / n as f64;
        Self {
            s_pot,
            y_pot,
            tau,
            tau_x,
        }
    }

    pub fn s_pot(&self) -> &Array3<f64> {
        &self.s_pot
    }

    pub fn y_pot(&self) -> &Array2<f64> {
        &self.y_pot
    }

    /// Finite-sample average treatment effect, `mean(Y(1) - Y(0))`.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Per-unit conditional average effect given the unit's covariates.
    pub fn tau_x(&self) -> &Array1<f64> {
        &self.tau_x
    }

    /// Per-unit realized potential-outcome differences `Y(1) - Y(0)`.
    pub fn po_diff(&self) -> Array1<f64> {
        let n = self.y_pot.nrows();
        Array1::from_iter((0..n).map(|i| self.y_pot[[i, 1]] - self.y_pot[[i, 0]]))
    }

    /// Checks observed-data consistency against a paired panel: wherever an
    /// outcome is observed it must equal the potential outcome of the
    /// received treatment.
    pub fn consistent_with(&self, ds: &LongTermDataset) -> bool {
        for i in 0..ds.n() {
            let arm = ds.a()[i] as usize;
            for t in 0..ds.t0() {
                if let Some(v) = ds.s()[[i, t]] {
                    if v != self.s_pot[[i, t, arm]] {
                        return false;
                    }
                }
            }
            if let Some(v) = ds.y()[i] {
                if v != self.y_pot[[i, arm]] {
                    return false;
                }
            }
        }
        true
    }
}

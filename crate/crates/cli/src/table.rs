//! Delimited text input: response columns, predictor columns and their scales.

use std::collections::BTreeSet;
use std::path::Path;

use trafo::{Column, ColumnKind, Dataset, Response};

use crate::error::CliError;

/// Header names reserved for the response.
pub const RESPONSE_COLUMNS: [&str; 5] = ["y", "y_left", "y_right", "t_left", "t_right"];

#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// 1-based line number of each row in the source file.
    pub lines: Vec<u64>,
}

impl Table {
    pub fn read(path: &Path, delimiter: u8) -> Result<Self, CliError> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        let mut lines = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            lines.push(record.position().map_or(0, |p| p.line()));
            rows.push(record.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(CliError::Usage(format!("{}: no data rows", path.display())));
        }
        Ok(Self { headers, rows, lines })
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    fn number(&self, row: usize, col: usize) -> Result<f64, CliError> {
        let s = &self.rows[row][col];
        s.parse::<f64>().ok().filter(|v| !v.is_nan()).ok_or_else(|| {
            CliError::Usage(format!("line {}: column `{}`: `{s}` is not a number", self.lines[row], self.headers[col]))
        })
    }

    /// Empty field means an infinite bound with the given sign.
    fn bound(&self, row: usize, col: usize, infinite: f64) -> Result<f64, CliError> {
        if self.rows[row][col].is_empty() {
            Ok(infinite)
        } else {
            self.number(row, col)
        }
    }

    pub fn has_response(&self) -> bool {
        self.index("y").is_some() || (self.index("y_left").is_some() && self.index("y_right").is_some())
    }

    /// Responses from `y` or `y_left`/`y_right`, with optional `t_left`/`t_right` truncation.
    pub fn responses(&self) -> Result<Vec<Response<f64>>, CliError> {
        let exact = self.index("y");
        let bounds = (self.index("y_left"), self.index("y_right"));
        if exact.is_none() && !matches!(bounds, (Some(_), Some(_))) {
            return Err(CliError::Usage(
                "missing response: provide a `y` column or both `y_left` and `y_right`".into(),
            ));
        }
        let trunc = (self.index("t_left"), self.index("t_right"));
        (0..self.n())
            .map(|r| {
                let mut resp = match (exact, bounds) {
                    (Some(c), _) => Response::exact(self.number(r, c)?),
                    (None, (Some(l), Some(h))) => {
                        let lo = self.bound(r, l, f64::NEG_INFINITY)?;
                        let hi = self.bound(r, h, f64::INFINITY)?;
                        Response::from_bounds(lo, hi)
                            .map_err(|e| CliError::Usage(format!("line {}: {e}", self.lines[r])))?
                    }
                    _ => unreachable!("checked above"),
                };
                if trunc.0.is_some() || trunc.1.is_some() {
                    let lo = match trunc.0 {
                        Some(c) => self.bound(r, c, f64::NEG_INFINITY)?,
                        None => f64::NEG_INFINITY,
                    };
                    let hi = match trunc.1 {
                        Some(c) => self.bound(r, c, f64::INFINITY)?,
                        None => f64::INFINITY,
                    };
                    if lo.is_finite() || hi.is_finite() {
                        resp = resp
                            .truncated(lo, hi)
                            .map_err(|e| CliError::Usage(format!("line {}: {e}", self.lines[r])))?;
                    }
                }
                resp.validate().map_err(|e| CliError::Usage(format!("line {}: {e}", self.lines[r])))?;
                Ok(resp)
            })
            .collect()
    }

    /// Predictor columns (all non-response columns) with declared scales.
    pub fn dataset(&self, categorical: &[String], ordinal: &[String]) -> Result<Dataset, CliError> {
        for name in categorical.iter().chain(ordinal) {
            if self.index(name).is_none() {
                return Err(CliError::Usage(format!("declared column `{name}` not found in the header")));
            }
        }
        let responses = self.responses()?;
        let mut columns = Vec::new();
        for (c, name) in self.headers.iter().enumerate() {
            if RESPONSE_COLUMNS.contains(&name.as_str()) {
                continue;
            }
            if categorical.contains(name) {
                let levels: Vec<String> =
                    self.rows.iter().map(|r| r[c].clone()).collect::<BTreeSet<_>>().into_iter().collect();
                let codes = self.rows.iter().map(|r| levels.iter().position(|l| *l == r[c]).unwrap()).collect();
                columns.push(Column::categorical(name.clone(), levels, codes));
            } else {
                let values = (0..self.n()).map(|r| self.number(r, c)).collect::<Result<Vec<_>, _>>()?;
                if ordinal.contains(name) {
                    columns.push(Column::ordinal(name.clone(), values));
                } else {
                    columns.push(Column::continuous(name.clone(), values));
                }
            }
        }
        if columns.is_empty() {
            return Err(CliError::Usage("no predictor columns".into()));
        }
        Dataset::new(responses, columns).map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Predictor rows laid out like the model's training columns. Unknown
    /// categorical levels get the code one past the known levels.
    pub fn predictor_rows(&self, schema: &[(String, ColumnKind)]) -> Result<Vec<Vec<f64>>, CliError> {
        let idx = schema
            .iter()
            .map(|(name, _)| {
                self.index(name).ok_or_else(|| CliError::Usage(format!("column `{name}` required by the model is missing")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        (0..self.n())
            .map(|r| {
                schema
                    .iter()
                    .zip(&idx)
                    .map(|((_, kind), &c)| match kind {
                        ColumnKind::Categorical { levels } => {
                            let v = &self.rows[r][c];
                            Ok(levels.iter().position(|l| l == v).unwrap_or(levels.len()) as f64)
                        }
                        _ => self.number(r, c),
                    })
                    .collect()
            })
            .collect()
    }
}

/// Writes `records` as a delimited table with `header`.
pub fn write_table<W: std::io::Write>(
    out: W,
    header: &[String],
    records: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(CliError::io)?;
    for r in records {
        w.write_record(&r).map_err(CliError::io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

/// Shortest round-trip decimal; empty field for infinite bounds.
pub fn fmt_bound(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

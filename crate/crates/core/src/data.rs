//! Learning samples: responses plus a rectangular predictor table.

use thiserror::Error;

use crate::tram::{Response, TramError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DataError {
    #[error("dataset needs at least one row and one predictor column")]
    Empty,

    #[error("column `{name}` has {got} values, expected {expected}")]
    Ragged { name: String, expected: usize, got: usize },

    #[error("column `{name}` has a non-finite value at row {row}")]
    NonFinite { name: String, row: usize },

    #[error("categorical column `{name}` has invalid level code {code} at row {row}")]
    BadLevel { name: String, row: usize, code: f64 },

    #[error("row {row}: {source}")]
    Response { row: usize, source: TramError },
}

/// Measurement scale of a predictor column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    Continuous,
    /// Ordered numeric codes; selection uses ranks.
    Ordinal,
    /// Level codes `0..levels.len()` stored as `f64`.
    Categorical { levels: Vec<String> },
}

impl ColumnKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, ColumnKind::Categorical { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<f64>,
}

impl Column {
    pub fn continuous(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Continuous, values }
    }

    pub fn ordinal(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Ordinal, values }
    }

    pub fn categorical(name: impl Into<String>, levels: Vec<String>, codes: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical { levels },
            values: codes.into_iter().map(|c| c as f64).collect(),
        }
    }
}

/// `N` responses with a `N × J` predictor table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    responses: Vec<Response<f64>>,
    columns: Vec<Column>,
}

impl Dataset {
    pub fn new(responses: Vec<Response<f64>>, columns: Vec<Column>) -> Result<Self, DataError> {
        let n = responses.len();
        if n == 0 || columns.is_empty() {
            return Err(DataError::Empty);
        }
        for (row, r) in responses.iter().enumerate() {
            r.validate().map_err(|source| DataError::Response { row, source })?;
        }
        for c in &columns {
            if c.values.len() != n {
                return Err(DataError::Ragged { name: c.name.clone(), expected: n, got: c.values.len() });
            }
            if let Some(row) = c.values.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { name: c.name.clone(), row });
            }
            if let ColumnKind::Categorical { levels } = &c.kind {
                if let Some(row) = c
                    .values
                    .iter()
                    .position(|&v| v < 0.0 || v.fract() != 0.0 || v as usize >= levels.len())
                {
                    return Err(DataError::BadLevel { name: c.name.clone(), row, code: c.values[row] });
                }
            }
        }
        Ok(Self { responses, columns })
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn responses(&self) -> &[Response<f64>] {
        &self.responses
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.columns[j].values[i]
    }

    /// Predictor row `i`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c.values[i]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Same predictors with replaced responses.
    pub fn with_responses(&self, responses: Vec<Response<f64>>) -> Result<Self, DataError> {
        Self::new(responses, self.columns.clone())
    }

    pub fn all_exact(&self) -> bool {
        self.responses.iter().all(|r| r.is_exact())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let r = vec![Response::exact(1.0), Response::exact(2.0)];
        assert!(matches!(Dataset::new(r.clone(), vec![]), Err(DataError::Empty)));
        assert!(matches!(
            Dataset::new(r.clone(), vec![Column::continuous("x", vec![1.0])]),
            Err(DataError::Ragged { .. })
        ));
        assert!(matches!(
            Dataset::new(r.clone(), vec![Column::continuous("x", vec![1.0, f64::NAN])]),
            Err(DataError::NonFinite { row: 1, .. })
        ));
        let bad = Column { name: "g".into(), kind: ColumnKind::Categorical { levels: vec!["a".into()] }, values: vec![0.0, 1.0] };
        assert!(matches!(Dataset::new(r.clone(), vec![bad]), Err(DataError::BadLevel { row: 1, .. })));
        let d = Dataset::new(r, vec![Column::continuous("x", vec![3.0, 4.0])]).unwrap();
        assert_eq!(d.row(1), vec![4.0]);
        assert_eq!(d.column_index("x"), Some(0));
    }
}

//! Links stories and arcs to ad performance: per-second dwell regression
//! and boosted-tree arc uplift ranking.

mod dwell;
mod gbt;
mod ols;
mod report;
mod uplift;

use std::collections::BTreeSet;

use thiserror::Error;

pub use dwell::{story_dwell_uplift, DwellCoefficient, RegressionResult, MIN_DWELL_RECORDS};
pub use gbt::{gbt_fit, GbtModel, GbtParams, Node, Tree};
pub use ols::{ols_fit, OlsFit};
pub use report::{dwell_report_csv, uplift_report_csv, uplift_report_table, ReportFormat};
pub use uplift::{
    partial_dependence, rank_arc_uplift, SkippedCell, UpliftMetric, UpliftParams, UpliftReport,
    UpliftRow,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("no viewers")]
    NoViewers,
    #[error("watch time {0} is negative or not finite")]
    InvalidWatchTime(f64),
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("{n} rows cannot identify {p} coefficients")]
    Underdetermined { n: usize, p: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("only one class of the story flag is present")]
    OneClassOnly,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Fraction of viewers still watching at each whole second 1..=horizon.
pub fn compute_dwell_curve(watch_times_s: &[f64], horizon: usize) -> Result<Vec<f64>, AnalyticsError> {
    if watch_times_s.is_empty() {
        return Err(AnalyticsError::NoViewers);
    }
    if let Some(&bad) = watch_times_s.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(AnalyticsError::InvalidWatchTime(bad));
    }
    let n = watch_times_s.len() as f64;
    Ok((1..=horizon)
        .map(|s| watch_times_s.iter().filter(|&&t| t >= s as f64).count() as f64 / n)
        .collect())
}

/// Dense row-major matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    columns: Vec<String>,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(columns: Vec<String>) -> Result<Self, AnalyticsError> {
        let mut seen = BTreeSet::new();
        if let Some(dup) = columns.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(AnalyticsError::DimensionMismatch(format!("duplicate column `{dup}`")));
        }
        Ok(DesignMatrix {
            columns,
            data: Vec::new(),
        })
    }

    pub fn from_rows(columns: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, AnalyticsError> {
        let mut m = DesignMatrix::new(columns)?;
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<(), AnalyticsError> {
        if row.len() != self.columns.len() {
            return Err(AnalyticsError::DimensionMismatch(format!(
                "row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        if self.columns.is_empty() {
            0
        } else {
            self.data.len() / self.columns.len()
        }
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let p = self.columns.len();
        &self.data[r * p..(r + 1) * p]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.columns.len() + c]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dwell_curve_examples() {
        assert_eq!(compute_dwell_curve(&[12.0, 10.0], 10).unwrap(), vec![1.0; 10]);
        let d = compute_dwell_curve(&[1.5, 3.0, 0.5, 10.0], 10).unwrap();
        assert_eq!(&d[..3], &[0.75, 0.5, 0.5]);
        assert!(d[3..].iter().all(|&x| x == 0.25));
        assert_eq!(compute_dwell_curve(&[], 10), Err(AnalyticsError::NoViewers));
        assert!(matches!(compute_dwell_curve(&[-1.0], 10), Err(AnalyticsError::InvalidWatchTime(_))));
    }

    #[test]
    fn design_matrix_rejects_duplicates_and_ragged_rows() {
        assert!(DesignMatrix::new(vec!["a".into(), "a".into()]).is_err());
        let mut m = DesignMatrix::new(vec!["a".into(), "b".into()]).unwrap();
        assert!(m.push_row(&[1.0]).is_err());
        m.push_row(&[1.0, 2.0]).unwrap();
        assert_eq!((m.n_rows(), m.get(0, 1), m.column_index("b")), (1, 2.0, Some(1)));
    }

    proptest! {
        #[test]
        fn dwell_curve_is_monotone_fraction(ts in prop::collection::vec(0.0f64..20.0, 1..50)) {
            let d = compute_dwell_curve(&ts, 10).unwrap();
            prop_assert!(d.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!(d.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}

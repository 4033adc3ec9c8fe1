use nalgebra::{DMatrix, DVector};

use super::{AnalyticsError, DesignMatrix};

/// Relative size below which a diagonal entry of R counts as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub columns: Vec<String>,
    pub coefs: Vec<f64>,
    pub std_errs: Vec<f64>,
    pub rss: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn coef(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some((self.coefs[i], self.std_errs[i]))
    }
}

/// Least squares through a QR factorisation of X.
pub fn ols_fit(x: &DesignMatrix, y: &[f64]) -> Result<OlsFit, AnalyticsError> {
    let (n, p) = (x.n_rows(), x.n_cols());
    if y.len() != n {
        return Err(AnalyticsError::DimensionMismatch(format!("{} targets for {n} rows", y.len())));
    }
    if n <= p {
        return Err(AnalyticsError::Underdetermined { n, p });
    }
    let xm = DMatrix::from_fn(n, p, |r, c| x.get(r, c));
    let yv = DVector::from_column_slice(y);
    let qr = xm.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|i| xm.column(i).norm()).fold(0.0, f64::max);
    if scale == 0.0 || (0..p).any(|i| r[(i, i)].abs() <= RANK_TOL * scale) {
        return Err(AnalyticsError::SingularDesign);
    }
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(AnalyticsError::SingularDesign)?;
    let resid = &yv - &xm * &beta;
    let rss = resid.norm_squared();
    let sigma2 = rss / (n - p) as f64;
    // (X'X)^-1 = R^-1 R^-T, so the variance of coefficient j is sigma2 times
    // the squared norm of row j of R^-1.
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(AnalyticsError::SingularDesign)?;
    let std_errs = (0..p)
        .map(|j| (sigma2 * r_inv.row(j).norm_squared()).sqrt())
        .collect();
    Ok(OlsFit {
        columns: x.columns().to_vec(),
        coefs: beta.iter().copied().collect(),
        std_errs,
        rss,
        n,
    })
}

//! Dense OLS with classical inference, projections, adjusted R² and the
//! nested-model F-test.

mod dist;
mod qr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dist::{f_cdf, f_sf, t_cdf, t_two_sided_p};

/// Result of an OLS fit.
///
/// `se`, `t_stats` and `p_values` have one entry per estimated parameter:
/// the intercept first (when fitted), then one per regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub with_intercept: bool,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r2: f64,
    pub adj_r2: f64,
    pub ss_res: f64,
    pub df_res: usize,
    pub n: usize,
    pub k: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl OlsFit {
    fn offset(&self) -> usize {
        usize::from(self.with_intercept)
    }

    /// Two-sided p-value of the intercept, if one was fitted.
    pub fn intercept_p(&self) -> Option<f64> {
        self.with_intercept.then(|| self.p_values[0])
    }

    pub fn intercept_t(&self) -> Option<f64> {
        self.with_intercept.then(|| self.t_stats[0])
    }

    pub fn beta_p(&self, j: usize) -> f64 {
        self.p_values[j + self.offset()]
    }

    pub fn beta_se(&self, j: usize) -> f64 {
        self.se[j + self.offset()]
    }

    pub fn beta_t(&self, j: usize) -> f64 {
        self.t_stats[j + self.offset()]
    }
}

/// Ordinary least squares of `y` on the columns of `x`, optionally with an
/// intercept.
///
/// The design is factorized with an in-order Householder QR; a column whose
/// component orthogonal to the preceding columns has norm at most
/// `1e-10 * (largest column norm)` yields [`Error::SingularDesign`] naming
/// that column of `x`.
pub fn ols_fit(y: ArrayView1<f64>, x: ArrayView2<f64>, with_intercept: bool) -> Result<OlsFit> {
    let (n, k) = x.dim();
    if y.len() != n {
        return Err(Error::domain(format!(
            "response has {} entries but design has {n} rows",
            y.len()
        )));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite value in OLS inputs"));
    }
    let params = k + usize::from(with_intercept);
    if n <= params {
        return Err(Error::InsufficientData { needed: params, got: n });
    }
    let design = if with_intercept {
        let mut d = Array2::ones((n, params));
        d.slice_mut(ndarray::s![.., 1..]).assign(&x);
        d
    } else {
        x.to_owned()
    };
    let qr = qr::householder_qr(design.view()).map_err(|c| {
        if with_intercept && c == 0 {
            // The constant column is never dependent on nothing; only an
            // all-zero design reaches here, which the n > params check
            // cannot exclude.
            Error::DegenerateSeries("intercept column".into())
        } else {
            Error::SingularDesign {
                column: c - usize::from(with_intercept),
            }
        }
    })?;
    let coef = qr.solve(y);
    let fitted = design.dot(&coef);
    let residuals: Array1<f64> = &y - &fitted;
    let ss_res: f64 = residuals.iter().map(|e| e * e).sum();
    let df_res = n - params;
    let sigma2 = ss_res / df_res as f64;
    let inv_diag = qr.inverse_gram_diag();
    let se: Vec<f64> = inv_diag.iter().map(|d| (sigma2 * d).sqrt()).collect();
    let mut t_stats = Vec::with_capacity(params);
    let mut p_values = Vec::with_capacity(params);
    for (c, s) in coef.iter().zip(&se) {
        let t = if *s > 0.0 {
            c / s
        } else if *c == 0.0 {
            0.0
        } else {
            c.signum() * f64::INFINITY
        };
        p_values.push(t_two_sided_p(t, df_res)?);
        t_stats.push(t);
    }
    let ss_tot: f64 = if with_intercept {
        let mean = y.mean().unwrap_or(0.0);
        y.iter().map(|v| (v - mean).powi(2)).sum()
    } else {
        y.iter().map(|v| v * v).sum()
    };
    let r2 = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let adj_r2 = if with_intercept {
        adjusted_r2(r2, n, k)?
    } else {
        1.0 - (1.0 - r2) * n as f64 / df_res as f64
    };
    let (alpha, beta) = if with_intercept {
        (coef[0], coef.iter().skip(1).copied().collect())
    } else {
        (0.0, coef.to_vec())
    };
    Ok(OlsFit {
        with_intercept,
        alpha,
        beta,
        se,
        t_stats,
        p_values,
        r2,
        adj_r2,
        ss_res,
        df_res,
        n,
        k,
        residuals: residuals.to_vec(),
    })
}

/// Removes from `target` its projection on `base`:
/// `target - base (base'target) / (base'base)`.
pub fn project_out(target: ArrayView1<f64>, base: ArrayView1<f64>) -> Result<Array1<f64>> {
    if target.len() != base.len() {
        return Err(Error::domain("project_out: length mismatch"));
    }
    let bb = base.dot(&base);
    if bb == 0.0 || !bb.is_finite() {
        return Err(Error::DegenerateProjection);
    }
    let coef = base.dot(&target) / bb;
    Ok(&target - &(&base * coef))
}

/// `1 - (1 - r2)(n - 1)/(n - k - 1)` for a model with intercept and `k`
/// regressors.
pub fn adjusted_r2(r2: f64, n: usize, k: usize) -> Result<f64> {
    if n <= k + 1 {
        return Err(Error::domain(format!("adjusted R² needs n > k + 1 (n = {n}, k = {k})")));
    }
    Ok(1.0 - (1.0 - r2) * (n - 1) as f64 / (n - k - 1) as f64)
}

/// Nested-model F-test of a full model against a restricted one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FTestResult {
    pub f_stat: f64,
    pub df1: usize,
    pub df2: usize,
    pub p_value: f64,
    /// The full model fits perfectly while the restricted one does not.
    pub infinite: bool,
}

/// `F = ((ss_r - ss_f) / r2_extra) / (ss_f / df_full)` with an upper-tail
/// p-value from `F(r2_extra, df_full)`.
pub fn f_test_nested(ss_r: f64, ss_f: f64, r2_extra: usize, df_full: usize) -> Result<FTestResult> {
    if r2_extra == 0 {
        return Err(Error::domain("F-test needs at least one extra regressor"));
    }
    if df_full == 0 {
        return Err(Error::domain("F-test needs df_full >= 1"));
    }
    if !(ss_r.is_finite() && ss_f.is_finite()) || ss_f < 0.0 || ss_r < 0.0 {
        return Err(Error::domain(format!("invalid sums of squares ss_r = {ss_r}, ss_f = {ss_f}")));
    }
    let mut diff = ss_r - ss_f;
    if diff < 0.0 {
        // Nested fits can only lose residual mass to round-off.
        if -diff <= 1e-9 * ss_f.max(f64::MIN_POSITIVE) {
            diff = 0.0;
        } else {
            return Err(Error::domain(format!(
                "restricted SS ({ss_r}) below full-model SS ({ss_f})"
            )));
        }
    }
    if ss_f == 0.0 {
        return Ok(if diff > 0.0 {
            FTestResult {
                f_stat: f64::INFINITY,
                df1: r2_extra,
                df2: df_full,
                p_value: 0.0,
                infinite: true,
            }
        } else {
            FTestResult {
                f_stat: 0.0,
                df1: r2_extra,
                df2: df_full,
                p_value: 1.0,
                infinite: false,
            }
        });
    }
    let f_stat = (diff / r2_extra as f64) / (ss_f / df_full as f64);
    Ok(FTestResult {
        f_stat,
        df1: r2_extra,
        df2: df_full,
        p_value: f_sf(f_stat, r2_extra, df_full)?,
        infinite: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exact_single_regressor() {
        let x = array![[1.0], [2.0], [4.0], [7.0], [11.0]];
        let y = array![1.0, 2.0, 4.0, 7.0, 11.0];
        let fit = ols_fit(y.view(), x.view(), true).unwrap();
        assert!((fit.beta[0] - 1.0).abs() < 1e-12);
        assert!(fit.alpha.abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(fit.ss_res < 1e-24);
    }

    #[test]
    fn constant_response() {
        let x = array![[1.0, 0.3], [2.0, -0.1], [4.0, 0.8], [7.0, 0.2], [11.0, -0.5]];
        let y = array![3.0, 3.0, 3.0, 3.0, 3.0];
        let fit = ols_fit(y.view(), x.view(), true).unwrap();
        assert!((fit.alpha - 3.0).abs() < 1e-12);
        assert!(fit.beta.iter().all(|b| b.abs() < 1e-12));
        assert_eq!(fit.r2, 0.0);
        assert!(fit.p_values.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn insufficient_data() {
        let x = array![[1.0], [2.0]];
        let y = array![1.0, 2.0];
        assert!(matches!(
            ols_fit(y.view(), x.view(), true),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn singular_design_names_column() {
        let x = array![[1.0, 2.0, 0.5], [2.0, 4.0, 0.1], [3.0, 6.0, 0.7], [4.0, 8.0, 0.2], [5.0, 10.0, 0.9]];
        let y = array![1.0, 0.0, 2.0, 1.0, 3.0];
        match ols_fit(y.view(), x.view(), true) {
            Err(Error::SingularDesign { column }) => assert_eq!(column, 1),
            other => panic!("unexpected {other:?}"),
        }
        // A constant regressor duplicates the intercept.
        let x = array![[1.0, 0.5], [1.0, 0.1], [1.0, 0.7], [1.0, 0.2], [1.0, 0.9]];
        assert!(matches!(
            ols_fit(y.view(), x.view(), true),
            Err(Error::SingularDesign { column: 0 })
        ));
    }

    #[test]
    fn projection_examples() {
        let p = project_out(array![1.0, 2.0, 3.0].view(), array![1.0, 1.0, 1.0].view()).unwrap();
        assert_eq!(p, array![-1.0, 0.0, 1.0]);
        let b = array![1.0, -2.0, 0.5];
        let same = project_out(b.view(), b.view()).unwrap();
        assert!(same.iter().all(|v| v.abs() < 1e-15));
        let orth = project_out(array![2.0, 1.0, 0.0].view(), array![0.0, 0.0, 3.0].view()).unwrap();
        assert_eq!(orth, array![2.0, 1.0, 0.0]);
        assert!(matches!(
            project_out(b.view(), array![0.0, 0.0, 0.0].view()),
            Err(Error::DegenerateProjection)
        ));
    }

    #[test]
    fn adjusted_r2_examples() {
        assert_eq!(adjusted_r2(1.0, 30, 4).unwrap(), 1.0);
        assert_eq!(adjusted_r2(0.37, 30, 0).unwrap(), 0.37);
        let v = adjusted_r2(0.5, 150, 10).unwrap();
        assert!((v - (1.0 - 0.5 * 149.0 / 139.0)).abs() < 1e-15);
        assert!((v - 0.46403).abs() < 1e-5);
        assert!(adjusted_r2(0.5, 11, 10).is_err());
    }

    #[test]
    fn f_test_examples() {
        let same = f_test_nested(1.5, 1.5, 3, 20).unwrap();
        assert_eq!(same.f_stat, 0.0);
        assert_eq!(same.p_value, 1.0);
        let f = f_test_nested(2.0, 1.0, 1, 10).unwrap();
        assert!((f.f_stat - 10.0).abs() < 1e-12);
        assert!(f_test_nested(2.0, 1.0, 0, 10).is_err());
        let inf = f_test_nested(2.0, 0.0, 2, 10).unwrap();
        assert!(inf.infinite && inf.p_value == 0.0);
        // Round-off sized negative difference is clamped.
        let tiny = f_test_nested(1.0 - 1e-14, 1.0, 2, 10).unwrap();
        assert_eq!(tiny.f_stat, 0.0);
        assert!(f_test_nested(0.5, 1.0, 2, 10).is_err());
    }
}

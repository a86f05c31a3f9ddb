//! Student-t and F distribution functions used for p-values.

use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};

fn check(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("distribution argument must be finite, got {x}")))
    }
}

fn students_t(df: usize) -> Result<StudentsT> {
    if df == 0 {
        return Err(Error::domain("t distribution needs df >= 1"));
    }
    StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::domain(e.to_string()))
}

fn fisher(df1: usize, df2: usize) -> Result<FisherSnedecor> {
    if df1 == 0 || df2 == 0 {
        return Err(Error::domain("F distribution needs df1, df2 >= 1"));
    }
    FisherSnedecor::new(df1 as f64, df2 as f64).map_err(|e| Error::domain(e.to_string()))
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn t_cdf(x: f64, df: usize) -> Result<f64> {
    check(x)?;
    Ok(students_t(df)?.cdf(x))
}

/// Two-sided tail probability `P(|T| >= |t|)`.
pub fn t_two_sided_p(t: f64, df: usize) -> Result<f64> {
    if t.is_infinite() {
        return Ok(0.0);
    }
    check(t)?;
    Ok((2.0 * students_t(df)?.sf(t.abs())).clamp(0.0, 1.0))
}

/// CDF of the F distribution with `(df1, df2)` degrees of freedom.
pub fn f_cdf(x: f64, df1: usize, df2: usize) -> Result<f64> {
    check(x)?;
    if x <= 0.0 {
        fisher(df1, df2)?;
        return Ok(0.0);
    }
    Ok(fisher(df1, df2)?.cdf(x))
}

/// Upper tail `P(F >= x)`.
pub fn f_sf(x: f64, df1: usize, df2: usize) -> Result<f64> {
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    check(x)?;
    if x <= 0.0 {
        fisher(df1, df2)?;
        return Ok(1.0);
    }
    Ok(fisher(df1, df2)?.sf(x).clamp(0.0, 1.0))
}

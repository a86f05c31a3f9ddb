//! Cross-sectional multiple testing: Benjamini-Hochberg and
//! Benjamini-Hochberg-Yekutieli adjusted p-values, and the binned intercept
//! and goodness-of-fit studies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::SecurityModel;

/// Bin edges for intercept p-values.
pub const INTERCEPT_EDGES: [f64; 12] = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Bin edges for F-test p-values.
pub const FTEST_EDGES: [f64; 9] = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.10, 0.20, 1.00];

/// `c(m) = 1 + 1/2 + ... + 1/m`.
pub fn harmonic(m: usize) -> f64 {
    (1..=m).map(|i| 1.0 / i as f64).sum()
}

fn check(p: &[f64]) -> Result<()> {
    match p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::domain(format!("p-value {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Step-up adjustment `q_(i) = min_{j >= i} scale * m * p_(j) / j`, capped
/// at 1 and returned in input order.
fn step_up(p: &[f64], scale: f64) -> Result<Vec<f64>> {
    check(p)?;
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(scale * m as f64 * p[i] / (rank + 1) as f64);
        // `m p / m` can round below `p`; the adjusted value never is.
        q[i] = running.min(1.0).max(p[i]);
    }
    Ok(q)
}

/// Benjamini-Hochberg adjusted p-values (q-values).
pub fn bh_adjust(p: &[f64]) -> Result<Vec<f64>> {
    step_up(p, 1.0)
}

/// Benjamini-Hochberg-Yekutieli adjusted p-values: the BH step-up with the
/// dependence constant `c(m)`.
pub fn bhy_adjust(p: &[f64]) -> Result<Vec<f64>> {
    step_up(p, harmonic(p.len()))
}

/// Histogram of values in `[0, 1]` over fixed edges. Bins are half-open
/// `[lo, hi)` except the last, which is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binned {
    pub counts: Vec<usize>,
    pub percent: Vec<f64>,
}

pub fn bin_values(values: &[f64], edges: &[f64]) -> Binned {
    let nb = edges.len() - 1;
    let mut counts = vec![0; nb];
    for &v in values {
        let b = (0..nb)
            .find(|&b| v >= edges[b] && (v < edges[b + 1] || (b == nb - 1 && v <= edges[nb])))
            .expect("value within the edge range");
        counts[b] += 1;
    }
    let total = values.len().max(1) as f64;
    let percent = counts.iter().map(|&c| 100.0 * c as f64 / total).collect();
    Binned { counts, percent }
}

/// Labels such as `0-0.05` for consecutive edges.
pub fn bin_labels(edges: &[f64]) -> Vec<String> {
    edges.windows(2).map(|w| format!("{}-{}", w[0], w[1])).collect()
}

/// p-values of one test across securities with both adjustments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrTable {
    pub ids: Vec<String>,
    pub p_values: Vec<f64>,
    pub bh_q: Vec<f64>,
    pub bhy_q: Vec<f64>,
    pub edges: Vec<f64>,
    pub p_bins: Binned,
    pub bh_bins: Binned,
    pub bhy_bins: Binned,
}

impl FdrTable {
    pub fn new(ids: Vec<String>, p_values: Vec<f64>, edges: &[f64]) -> Result<Self> {
        if ids.len() != p_values.len() {
            return Err(Error::domain("ids and p-values differ in length"));
        }
        let bh_q = bh_adjust(&p_values)?;
        let bhy_q = bhy_adjust(&p_values)?;
        Ok(FdrTable {
            p_bins: bin_values(&p_values, edges),
            bh_bins: bin_values(&bh_q, edges),
            bhy_bins: bin_values(&bhy_q, edges),
            ids,
            p_values,
            bh_q,
            bhy_q,
            edges: edges.to_vec(),
        })
    }

    /// Fraction of p-values below `level`.
    pub fn rejection_rate(&self, level: f64) -> f64 {
        let n = self.p_values.iter().filter(|&&p| p < level).count();
        n as f64 / self.p_values.len().max(1) as f64
    }
}

fn write_rows(header: &[&str], labels: &[String], columns: &[&Binned]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for (b, label) in labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(columns.iter().map(|c| format!("{:.2}", c.percent[b])));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Aggregation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Intercept t-test p-values of the multi-factor and FF5-only fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterceptStudy {
    pub mfm: FdrTable,
    pub ff5: FdrTable,
}

impl InterceptStudy {
    /// Column percentages per bin for raw p-values and both adjustments of
    /// both models.
    pub fn to_csv(&self) -> Result<String> {
        let (f, m) = (&self.ff5, &self.mfm);
        write_rows(
            &["bin", "ff5_p", "ff5_bh_q", "ff5_bhy_q", "mfm_p", "mfm_bh_q", "mfm_bhy_q"],
            &bin_labels(&m.edges),
            &[&f.p_bins, &f.bh_bins, &f.bhy_bins, &m.p_bins, &m.bh_bins, &m.bhy_bins],
        )
    }
}

pub fn intercept_study(models: &[SecurityModel]) -> Result<InterceptStudy> {
    if models.is_empty() {
        return Err(Error::EmptyTable("intercept study has no models".into()));
    }
    let ids: Vec<String> = models.iter().map(|m| m.ticker.clone()).collect();
    let mfm_p = models.iter().map(|m| m.intercept_p()).collect();
    let ff5_p = models.iter().map(|m| m.ff5.p_values[0]).collect();
    Ok(InterceptStudy {
        mfm: FdrTable::new(ids.clone(), mfm_p, &INTERCEPT_EDGES)?,
        ff5: FdrTable::new(ids, ff5_p, &INTERCEPT_EDGES)?,
    })
}

/// F-test p-values of the multi-factor model against FF5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofStudy {
    pub table: FdrTable,
    /// Securities without an F-test (no factor beyond FF5).
    pub excluded: Vec<String>,
}

impl GofStudy {
    pub fn to_csv(&self) -> Result<String> {
        let t = &self.table;
        write_rows(
            &["bin", "p", "bh_q", "bhy_q"],
            &bin_labels(&t.edges),
            &[&t.p_bins, &t.bh_bins, &t.bhy_bins],
        )
    }
}

pub fn gof_study(models: &[SecurityModel]) -> Result<GofStudy> {
    let mut ids = Vec::new();
    let mut p = Vec::new();
    let mut excluded = Vec::new();
    for m in models {
        match &m.f_test {
            Some(f) => {
                ids.push(m.ticker.clone());
                p.push(f.p_value);
            }
            None => excluded.push(m.ticker.clone()),
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyTable("no model has an F-test".into()));
    }
    Ok(GofStudy {
        table: FdrTable::new(ids, p, &FTEST_EDGES)?,
        excluded,
    })
}

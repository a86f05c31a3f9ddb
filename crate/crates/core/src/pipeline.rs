//! The estimation recipe end to end.
//!
//! 1. ETF excess returns are orthogonalized against the excess market.
//! 2. Each ETF category is clustered with minimax linkage and cut at its
//!    PCA dimension; the pooled prototypes are clustered again to give the
//!    reduced universe `U`.
//! 3. Per security, the LASSO selects from the orthogonalized `U`, factors
//!    whose original series track the market too closely are pruned, and the
//!    five Fama-French factors are added back.
//! 4. OLS with intercept on the original series gives the significance set,
//!    and a nested F-test compares against the FF5-only fit.
//! 5. Significance counts are aggregated by factor class and SIC group.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{corr_distance, minimax_cluster, pca_dim, Dendrogram, DistanceMatrix};
use crate::error::{Error, Result};
use crate::lasso::{lambda_for_support, LassoOptions, SupportRule};
use crate::panel::{
    common_dates, excess_returns, filter_coverage, FactorMeta, ReturnsPanel, RiskFreeSeries, SecurityMeta, FF5_IDS,
    FF5_LABELS,
};
use crate::regress::{f_test_nested, ols_fit, project_out, FTestResult, OlsFit};
use crate::taxonomy;

/// Tunable choices of the recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub support: SupportRule,
    #[serde(skip)]
    pub lasso: LassoOptions,
    /// Selected factors whose original series has `|corr|` with the market
    /// above this are pruned.
    pub corr_cap: f64,
    pub pca_threshold: f64,
    pub sig_level: f64,
    /// Observation floor; the effective floor is `max(min_obs, ceil(#U/4))`.
    pub min_obs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            support: SupportRule::default(),
            lasso: LassoOptions::default(),
            corr_cap: 0.90,
            pca_threshold: 0.80,
            sig_level: 0.05,
            min_obs: 30,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        frac("corr_cap", self.corr_cap)?;
        frac("pca_threshold", self.pca_threshold)?;
        frac("sig_level", self.sig_level)?;
        frac("grid_floor", self.support.grid_floor)?;
        if self.support.grid_floor >= 1.0 {
            return Err(Error::InvalidConfig("grid_floor must be below 1".into()));
        }
        if self.support.s_max == 0 {
            return Err(Error::InvalidConfig("s_max must be at least 1".into()));
        }
        if self.support.grid_size == 0 {
            return Err(Error::InvalidConfig("grid_size must be at least 1".into()));
        }
        if !(self.lasso.tol > 0.0) || self.lasso.max_iter == 0 {
            return Err(Error::InvalidConfig("lasso tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    fn obs_floor(&self, n_universe: usize) -> usize {
        self.min_obs.max(n_universe.div_ceil(4))
    }
}

/// Raw inputs as read from disk: simple returns, not yet in excess of the
/// risk-free rate.
#[derive(Debug, Clone)]
pub struct RawInputs {
    pub securities: ReturnsPanel,
    pub factors: ReturnsPanel,
    /// The five FF5 columns, in [`FF5_IDS`] order.
    pub ff5: ReturnsPanel,
    pub risk_free: RiskFreeSeries,
    pub security_meta: Vec<SecurityMeta>,
    pub factor_meta: Vec<FactorMeta>,
}

/// Aligned excess-return panels on one date grid, ready for estimation.
#[derive(Debug, Clone)]
pub struct StudyData {
    securities: ReturnsPanel,
    factors: ReturnsPanel,
    ff5: ReturnsPanel,
    risk_free: RiskFreeSeries,
    security_meta: Vec<SecurityMeta>,
    factor_meta: Vec<FactorMeta>,
}

impl StudyData {
    /// `securities` and `factors` hold excess returns; `ff5` must be fully
    /// observed with columns named as in [`FF5_IDS`].
    pub fn new(
        securities: ReturnsPanel,
        factors: ReturnsPanel,
        ff5: ReturnsPanel,
        risk_free: RiskFreeSeries,
        security_meta: Vec<SecurityMeta>,
        factor_meta: Vec<FactorMeta>,
    ) -> Result<Self> {
        if securities.dates() != ff5.dates() || factors.dates() != ff5.dates() || risk_free.dates != ff5.dates() {
            return Err(Error::Schema("study panels must share one date grid".into()));
        }
        if ff5.names().iter().map(String::as_str).ne(FF5_IDS) {
            return Err(Error::Schema(format!(
                "FF5 panel columns must be {:?}, got {:?}",
                FF5_IDS,
                ff5.names()
            )));
        }
        for j in 0..5 {
            if !ff5.is_fully_observed(j) {
                return Err(Error::Schema(format!("FF5 column `{}` has missing weeks", FF5_IDS[j])));
            }
        }
        if let Some(n) = factors.names().iter().find(|n| FF5_IDS.contains(&n.as_str())) {
            return Err(Error::Schema(format!("factor `{n}` collides with a reserved FF5 id")));
        }
        Ok(StudyData {
            securities,
            factors,
            ff5,
            risk_free,
            security_meta,
            factor_meta,
        })
    }

    /// Aligns raw inputs on their common dates, optionally restricts to
    /// `[start, end]`, converts securities and ETFs to excess returns and
    /// keeps only columns observed on more than `min_coverage` of the weeks.
    pub fn prepare(raw: RawInputs, window: Option<(NaiveDate, NaiveDate)>, min_coverage: f64) -> Result<Self> {
        let mut dates = common_dates([
            raw.securities.dates(),
            raw.factors.dates(),
            raw.ff5.dates(),
            raw.risk_free.dates.as_slice(),
        ])?;
        if let Some((start, end)) = window {
            dates.retain(|d| *d >= start && *d <= end);
            if dates.is_empty() {
                return Err(Error::EmptyIntersection);
            }
        }
        let rf = raw.risk_free.restrict_to(&dates)?;
        let securities = filter_coverage(&excess_returns(&raw.securities.restrict_to(&dates)?, &rf)?, min_coverage)?;
        let factors = filter_coverage(&excess_returns(&raw.factors.restrict_to(&dates)?, &rf)?, min_coverage)?;
        let ff5 = raw.ff5.restrict_to(&dates)?;
        StudyData::new(securities, factors, ff5, rf, raw.security_meta, raw.factor_meta)
    }

    /// The same study restricted to rows `rows` (ascending).
    pub fn select_rows(&self, rows: &[usize]) -> Result<StudyData> {
        let dates: Vec<NaiveDate> = rows.iter().map(|&r| self.ff5.dates()[r]).collect();
        StudyData::new(
            self.securities.select_rows(rows),
            self.factors.select_rows(rows),
            self.ff5.select_rows(rows),
            self.risk_free.restrict_to(&dates)?,
            self.security_meta.clone(),
            self.factor_meta.clone(),
        )
    }

    pub fn dates(&self) -> &[NaiveDate] {
        self.ff5.dates()
    }

    pub fn securities(&self) -> &ReturnsPanel {
        &self.securities
    }

    pub fn factors(&self) -> &ReturnsPanel {
        &self.factors
    }

    pub fn ff5(&self) -> &ReturnsPanel {
        &self.ff5
    }

    pub fn risk_free(&self) -> &RiskFreeSeries {
        &self.risk_free
    }

    pub fn security_meta(&self) -> &[SecurityMeta] {
        &self.security_meta
    }

    pub fn factor_meta(&self) -> &[FactorMeta] {
        &self.factor_meta
    }

    /// Excess market return (`mkt_rf`).
    pub fn market(&self) -> ArrayView1<'_, f64> {
        self.ff5.column(0)
    }
}

/// Replaces every factor column by its residual after projecting out the
/// market on that column's observed rows.
///
/// A residual whose norm is at most `1e-10` of the original norm is set to
/// exactly zero, so a factor equal to the market becomes a zero column.
pub fn orthogonalize_universe(factors: &ReturnsPanel, market: ArrayView1<f64>) -> Result<ReturnsPanel> {
    if market.len() != factors.n_dates() {
        return Err(Error::domain("market series length differs from the factor panel"));
    }
    if market.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSeries("market series must be fully observed".into()));
    }
    if market.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateSeries("market series is identically zero".into()));
    }
    let mut values = factors.values().clone();
    for j in 0..factors.n_columns() {
        let rows: Vec<usize> = (0..factors.n_dates()).filter(|&t| factors.mask()[[t, j]]).collect();
        if rows.is_empty() {
            continue;
        }
        let x: Array1<f64> = rows.iter().map(|&t| values[[t, j]]).collect();
        let m: Array1<f64> = rows.iter().map(|&t| market[t]).collect();
        let resid = match project_out(x.view(), m.view()) {
            Ok(r) => r,
            Err(Error::DegenerateProjection) => x.clone(),
            Err(e) => return Err(e),
        };
        let vanished = resid.dot(&resid).sqrt() <= 1e-10 * x.dot(&x).sqrt();
        for (k, &t) in rows.iter().enumerate() {
            values[[t, j]] = if vanished { 0.0 } else { resid[k] };
        }
    }
    ReturnsPanel::new(
        factors.dates().to_vec(),
        factors.names().to_vec(),
        values,
        factors.mask().clone(),
    )
}

/// One ETF category's share of the reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReduction {
    pub category: String,
    pub class: String,
    /// All factor indices of the category (`A_i`).
    pub members: Vec<usize>,
    /// Members excluded as degenerate.
    pub degenerate: Vec<usize>,
    /// Leaves of `dendrogram`, in leaf order.
    pub clustered: Vec<usize>,
    pub k: usize,
    /// Prototypes kept from this category (`B_i`), ascending.
    pub representatives: Vec<usize>,
    pub dendrogram: Option<Dendrogram>,
}

/// Result of the two-stage reduction. Indices refer to `factors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedUniverse {
    pub factors: Vec<String>,
    pub categories: Vec<CategoryReduction>,
    /// Pooled prototypes `B`, ascending; also the leaf order of
    /// `pooled_dendrogram`.
    pub pooled: Vec<usize>,
    pub pooled_dendrogram: Option<Dendrogram>,
    pub k_u: usize,
    /// Final representatives `U`, ascending.
    pub final_reps: Vec<usize>,
}

impl ReducedUniverse {
    /// `#U`.
    pub fn p2(&self) -> usize {
        self.final_reps.len()
    }

    pub fn final_names(&self) -> Vec<String> {
        self.final_reps.iter().map(|&j| self.factors[j].clone()).collect()
    }
}

fn is_degenerate(col: ArrayView1<f64>) -> bool {
    let mut obs = col.iter().filter(|v| v.is_finite());
    let Some(first) = obs.next() else { return true };
    let mut count = 1;
    let mut constant = true;
    for v in obs {
        count += 1;
        constant &= v == first;
    }
    count < 3 || constant
}

/// Correlation distance used for clustering. Pairs without enough joint
/// observations or with no joint variation count as uncorrelated.
fn pair_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    match corr_distance(a, b) {
        Err(Error::InsufficientOverlap { .. }) | Err(Error::DegenerateSeries(_)) => Ok(1.0),
        other => other,
    }
}

/// Clusters `points` (indices into the distance matrix and `x`) and keeps
/// the prototypes of a cut at the PCA dimension.
fn reduce_group(
    x: &Array2<f64>,
    d: &DistanceMatrix,
    points: &[usize],
    threshold: f64,
) -> Result<(usize, Vec<usize>, Option<Dendrogram>)> {
    if points.len() == 1 {
        return Ok((1, points.to_vec(), None));
    }
    let k = pca_dim(x.select(Axis(1), points).view(), threshold)?;
    let dendrogram = minimax_cluster(&d.subset(points))?;
    let mut reps: Vec<usize> = dendrogram.cut(k)?.iter().map(|c| points[c.prototype]).collect();
    reps.sort_unstable();
    Ok((k, reps, Some(dendrogram)))
}

/// Two-stage minimax-prototype reduction of an orthogonalized universe.
///
/// Categories are taken from `meta` (every column needs an entry) and
/// visited in taxonomy order. Degenerate columns are reported and left out
/// of the clustering; a category with no usable member is skipped.
pub fn reduce_factors(x_tilde: &ReturnsPanel, meta: &[FactorMeta], pca_threshold: f64) -> Result<ReducedUniverse> {
    let by_ticker: HashMap<&str, &FactorMeta> = meta.iter().map(|m| (m.ticker.as_str(), m)).collect();
    let rank: HashMap<&str, usize> = taxonomy::etf_categories()
        .iter()
        .enumerate()
        .map(|(i, c)| (c.category.as_str(), i))
        .collect();
    let mut groups: BTreeMap<(usize, String), Vec<usize>> = BTreeMap::new();
    for (j, name) in x_tilde.names().iter().enumerate() {
        let m = by_ticker
            .get(name.as_str())
            .ok_or_else(|| Error::Aggregation(format!("factor `{name}` has no metadata")))?;
        let r = rank.get(m.category.as_str()).copied().unwrap_or(usize::MAX);
        groups.entry((r, m.category.clone())).or_default().push(j);
    }

    let x = x_tilde.values();
    let d = DistanceMatrix::from_fn(x_tilde.n_columns(), |i, j| {
        pair_distance(x.column(i), x.column(j))
    })?;

    let mut categories = Vec::with_capacity(groups.len());
    let mut pooled = Vec::new();
    for ((_, category), members) in groups {
        let (clustered, degenerate): (Vec<usize>, Vec<usize>) =
            members.iter().partition(|&&j| !is_degenerate(x.column(j)));
        for &j in &degenerate {
            log::warn!("factor `{}` is degenerate after orthogonalization; excluded", x_tilde.names()[j]);
        }
        let class = by_ticker[x_tilde.names()[members[0]].as_str()].class.clone();
        if clustered.is_empty() {
            log::warn!("category `{category}` has no usable factors; skipped");
            categories.push(CategoryReduction {
                category,
                class,
                members,
                degenerate,
                clustered,
                k: 0,
                representatives: Vec::new(),
                dendrogram: None,
            });
            continue;
        }
        let (k, representatives, dendrogram) = reduce_group(x, &d, &clustered, pca_threshold)?;
        pooled.extend_from_slice(&representatives);
        categories.push(CategoryReduction {
            category,
            class,
            members,
            degenerate,
            clustered,
            k,
            representatives,
            dendrogram,
        });
    }
    pooled.sort_unstable();

    let (k_u, final_reps, pooled_dendrogram) = if pooled.is_empty() {
        (0, Vec::new(), None)
    } else {
        reduce_group(x, &d, &pooled, pca_threshold)?
    };
    Ok(ReducedUniverse {
        factors: x_tilde.names().to_vec(),
        categories,
        pooled,
        pooled_dendrogram,
        k_u,
        final_reps,
    })
}

/// Outcome of the LASSO stage for one security.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Rows where the security is observed.
    pub rows: Vec<usize>,
    pub lambda: f64,
    /// Selected positions within the reduced design's columns.
    pub support: Vec<usize>,
    pub converged: bool,
}

/// LASSO selection of `y` on the reduced orthogonalized design `x_u`.
///
/// Uses the rows where `y` is observed; a missing design entry on such a
/// row is filled with the column's mean over those rows, so it carries no
/// information after centering. Returns `Ok(None)` when fewer than `floor`
/// rows are available.
pub fn select_factors(
    y: ArrayView1<f64>,
    x_u: &ReturnsPanel,
    rule: &SupportRule,
    opts: &LassoOptions,
    floor: usize,
) -> Result<Option<Selection>> {
    let rows: Vec<usize> = (0..y.len()).filter(|&t| y[t].is_finite()).collect();
    if rows.len() < floor.max(2) {
        return Ok(None);
    }
    let p = x_u.n_columns();
    if p == 0 {
        return Ok(Some(Selection {
            rows,
            lambda: 0.0,
            support: Vec::new(),
            converged: true,
        }));
    }
    let mut x = x_u.values().select(Axis(0), &rows);
    for mut col in x.axis_iter_mut(Axis(1)) {
        let (sum, cnt) = col
            .iter()
            .filter(|v| v.is_finite())
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        let fill = if cnt > 0 { sum / cnt as f64 } else { 0.0 };
        col.mapv_inplace(|v| if v.is_finite() { v } else { fill });
    }
    let yv: Array1<f64> = rows.iter().map(|&t| y[t]).collect();
    let (lambda, fit) = lambda_for_support(x.view(), yv.view(), rule, opts)?;
    Ok(Some(Selection {
        rows,
        lambda,
        support: fit.support,
        converged: fit.converged,
    }))
}

/// Splits `selected` (factor indices) into those kept and those pruned
/// because their original series has `|corr| > corr_cap` with the market on
/// `rows`. Kept factors stay in input order.
pub fn prune_and_augment(
    selected: &[usize],
    originals: &ReturnsPanel,
    market: ArrayView1<f64>,
    rows: &[usize],
    corr_cap: f64,
) -> (Vec<usize>, Vec<usize>) {
    let m: Array1<f64> = rows.iter().map(|&t| market[t]).collect();
    let mut kept = Vec::new();
    let mut pruned = Vec::new();
    for &j in selected {
        let f: Array1<f64> = rows.iter().map(|&t| originals.values()[[t, j]]).collect();
        let abs_corr = corr_distance(f.view(), m.view()).map(|d| 1.0 - d).unwrap_or(0.0);
        if abs_corr > corr_cap {
            pruned.push(j);
        } else {
            kept.push(j);
        }
    }
    (kept, pruned)
}

/// One security's fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityModel {
    pub ticker: String,
    /// LASSO penalty on the standardized scale.
    pub lambda: f64,
    pub lasso_converged: bool,
    /// LASSO support, as factor tickers.
    pub selected_lasso: Vec<String>,
    /// Dropped by the market-correlation cap.
    pub pruned: Vec<String>,
    /// Dropped as collinear with earlier regressors.
    pub collinear_dropped: Vec<String>,
    /// Regressors of the final OLS in column order: FF5 first, then ETFs.
    pub selected_final: Vec<String>,
    pub ols: OlsFit,
    /// Regressors with two-sided p-value below the significance level.
    pub significant: Vec<String>,
    pub adj_r2_mfm: f64,
    pub adj_r2_ff5: f64,
    /// FF5-only fit on the same rows.
    pub ff5: OlsFit,
    /// Absent when the final model has no regressor beyond FF5.
    pub f_test: Option<FTestResult>,
    pub notes: Vec<String>,
}

impl SecurityModel {
    pub fn alpha(&self) -> f64 {
        self.ols.alpha
    }

    pub fn intercept_p(&self) -> f64 {
        self.ols.p_values[0]
    }

    pub fn intercept_t(&self) -> f64 {
        self.ols.t_stats[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSecurity {
    pub ticker: String,
    pub reason: String,
}

/// Either a fitted model or the reason a security was excluded.
#[derive(Debug, Clone, PartialEq)]
pub enum SecurityOutcome {
    Fitted(Box<SecurityModel>),
    Skipped(SkippedSecurity),
}

/// Second-stage fits of one security.
#[derive(Debug, Clone, PartialEq)]
pub struct Refit {
    /// Intercept plus FF5 plus `etfs`.
    pub full: OlsFit,
    /// Intercept plus FF5, on the same rows.
    pub restricted: OlsFit,
    /// ETF columns remaining after collinearity drops.
    pub etfs: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Positions in the full design (FF5 first) with p below the level.
    pub significant: Vec<usize>,
}

/// Refits a security by OLS with intercept on FF5 plus the ETF columns
/// `etfs` (indices into the study's factor panel), using `rows` further
/// restricted to weeks where every ETF is observed.
///
/// A collinear ETF column is dropped (the later one) and the fit retried.
/// The inner `Err` carries the reason when the security must be skipped.
pub fn fit_security(
    ticker: &str,
    y: ArrayView1<f64>,
    data: &StudyData,
    etfs: &[usize],
    rows: &[usize],
    floor: usize,
    sig_level: f64,
) -> Result<std::result::Result<Refit, String>> {
    let factors = data.factors();
    let ff5 = data.ff5().values();
    let mut etfs = etfs.to_vec();
    let mut dropped = Vec::new();
    loop {
        let used: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&t| etfs.iter().all(|&j| factors.mask()[[t, j]]))
            .collect();
        let k = 5 + etfs.len();
        if used.len() < floor.max(k + 2) {
            return Ok(Err(format!(
                "insufficient observations for OLS: {} rows for {} regressors (floor {})",
                used.len(),
                k,
                floor
            )));
        }
        let mut x = Array2::zeros((used.len(), k));
        for (r, &t) in used.iter().enumerate() {
            for c in 0..5 {
                x[[r, c]] = ff5[[t, c]];
            }
            for (c, &j) in etfs.iter().enumerate() {
                x[[r, 5 + c]] = factors.values()[[t, j]];
            }
        }
        let yv: Array1<f64> = used.iter().map(|&t| y[t]).collect();
        match ols_fit(yv.view(), x.view(), true) {
            Ok(full) => {
                let restricted = match ols_fit(yv.view(), x.slice(ndarray::s![.., ..5]), true) {
                    Ok(f) => f,
                    Err(Error::SingularDesign { column }) => {
                        return Ok(Err(format!("FF5 design is rank deficient at `{}`", FF5_IDS[column])))
                    }
                    Err(e) => return Err(e),
                };
                let significant = (0..k).filter(|&c| full.beta_p(c) < sig_level).collect();
                return Ok(Ok(Refit {
                    full,
                    restricted,
                    etfs,
                    dropped,
                    significant,
                }));
            }
            Err(Error::SingularDesign { column }) if column >= 5 => {
                let j = etfs.remove(column - 5);
                log::warn!("{ticker}: dropping collinear factor `{}`", factors.names()[j]);
                dropped.push(j);
            }
            Err(Error::SingularDesign { column }) => {
                return Ok(Err(format!("FF5 design is rank deficient at `{}`", FF5_IDS[column])));
            }
            Err(e) => return Err(e),
        }
    }
}

/// Runs selection, pruning, augmentation and refit for every security in
/// parallel against a fixed reduced universe. Output order follows the
/// security panel.
pub fn fit_securities(
    data: &StudyData,
    reduced: &ReducedUniverse,
    config: &PipelineConfig,
) -> Result<(Vec<SecurityModel>, Vec<SkippedSecurity>)> {
    let factors = data.factors();
    let u: Vec<usize> = reduced
        .final_names()
        .iter()
        .map(|n| {
            factors
                .column_index(n)
                .ok_or_else(|| Error::Schema(format!("reduced factor `{n}` is not in the factor panel")))
        })
        .collect::<Result<_>>()?;
    let x_tilde = orthogonalize_universe(&factors.select_columns(&u), data.market())?;
    let floor = config.obs_floor(u.len());
    let securities = data.securities();

    let outcomes: Vec<SecurityOutcome> = (0..securities.n_columns())
        .into_par_iter()
        .map(|i| -> Result<SecurityOutcome> {
            let ticker = securities.names()[i].clone();
            let y = securities.column(i);
            let skip = |reason: String| SecurityOutcome::Skipped(SkippedSecurity { ticker: ticker.clone(), reason });
            let Some(sel) = select_factors(y, &x_tilde, &config.support, &config.lasso, floor)? else {
                let got = y.iter().filter(|v| v.is_finite()).count();
                return Ok(skip(format!("insufficient observations: {got} weeks, need {floor}")));
            };
            let chosen: Vec<usize> = sel.support.iter().map(|&s| u[s]).collect();
            let (kept, pruned) = prune_and_augment(&chosen, factors, data.market(), &sel.rows, config.corr_cap);
            let Refit {
                full,
                restricted,
                etfs,
                dropped,
                significant,
            } = match fit_security(&ticker, y, data, &kept, &sel.rows, floor, config.sig_level)? {
                Ok(v) => v,
                Err(reason) => return Ok(skip(reason)),
            };
            let name = |j: &usize| factors.names()[*j].clone();
            let selected_final: Vec<String> =
                FF5_IDS.iter().map(|s| s.to_string()).chain(etfs.iter().map(name)).collect();
            let mut notes = Vec::new();
            if !sel.converged {
                notes.push("lasso did not converge".to_string());
            }
            let f_test = if etfs.is_empty() {
                notes.push("no extra factors".to_string());
                None
            } else {
                Some(f_test_nested(restricted.ss_res, full.ss_res, etfs.len(), full.df_res)?)
            };
            Ok(SecurityOutcome::Fitted(Box::new(SecurityModel {
                ticker: ticker.clone(),
                lambda: sel.lambda,
                lasso_converged: sel.converged,
                selected_lasso: chosen.iter().map(name).collect(),
                pruned: pruned.iter().map(name).collect(),
                collinear_dropped: dropped.iter().map(name).collect(),
                significant: significant.iter().map(|&c: &usize| selected_final[c].clone()).collect(),
                selected_final,
                adj_r2_mfm: full.adj_r2,
                adj_r2_ff5: restricted.adj_r2,
                ols: full,
                ff5: restricted,
                f_test,
                notes,
            })))
        })
        .collect::<Result<_>>()?;

    let mut models = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            SecurityOutcome::Fitted(m) => models.push(*m),
            SecurityOutcome::Skipped(s) => {
                log::warn!("skipping `{}`: {}", s.ticker, s.reason);
                skipped.push(s);
            }
        }
    }
    Ok((models, skipped))
}

/// Aggregation level for factor rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorLevel {
    Category,
    Class,
}

/// Count matrix `A` and column-normalized proportion matrix `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMatrices {
    pub level: FactorLevel,
    /// The five FF5 labels, then ETF groups in taxonomy order (only those
    /// with at least one significant occurrence).
    pub rows: Vec<String>,
    /// Two-digit SIC groups present among the models, ascending.
    pub columns: Vec<u8>,
    /// `counts[b][d]`.
    pub counts: Vec<Vec<u64>>,
    /// `proportions[b][d]`; an all-zero count column stays all zero.
    pub proportions: Vec<Vec<f64>>,
    /// SIC groups whose count column is all zero.
    pub empty_columns: Vec<u8>,
}

impl SignificanceMatrices {
    /// `G` as CSV in percent: `factor_class,<group>,...`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["factor_class".to_string()];
        header.extend(self.columns.iter().map(|g| format!("{g:02}")));
        w.write_record(&header)?;
        for (b, row) in self.rows.iter().enumerate() {
            let mut rec = vec![row.clone()];
            rec.extend(self.proportions[b].iter().map(|g| format!("{:.6}", 100.0 * g)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Aggregation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Builds `A` and `G` from the significance sets of `models`.
///
/// FF5 factors map to their own rows; an ETF maps to its category or class
/// from `factor_meta`. Every significant factor and every security must be
/// covered by the metadata.
pub fn significance_matrices(
    models: &[SecurityModel],
    security_meta: &[SecurityMeta],
    factor_meta: &[FactorMeta],
    level: FactorLevel,
) -> Result<SignificanceMatrices> {
    let sec: HashMap<&str, u8> = security_meta.iter().map(|m| (m.ticker.as_str(), m.class_id())).collect();
    let fac: HashMap<&str, &FactorMeta> = factor_meta.iter().map(|m| (m.ticker.as_str(), m)).collect();
    let row_of = |factor: &str| -> Result<String> {
        if let Some(i) = FF5_IDS.iter().position(|f| *f == factor) {
            return Ok(FF5_LABELS[i].to_string());
        }
        let m = fac
            .get(factor)
            .ok_or_else(|| Error::Aggregation(format!("factor `{factor}` has no class mapping")))?;
        Ok(match level {
            FactorLevel::Category => m.category.clone(),
            FactorLevel::Class => m.class.clone(),
        })
    };

    let mut cells: BTreeMap<(String, u8), u64> = BTreeMap::new();
    let mut columns = BTreeSet::new();
    let mut etf_rows = BTreeSet::new();
    for m in models {
        let group = *sec
            .get(m.ticker.as_str())
            .ok_or_else(|| Error::Aggregation(format!("security `{}` has no SIC mapping", m.ticker)))?;
        columns.insert(group);
        for f in &m.significant {
            let row = row_of(f)?;
            if !FF5_LABELS.contains(&row.as_str()) {
                etf_rows.insert(row.clone());
            }
            *cells.entry((row, group)).or_default() += 1;
        }
    }

    let order: Vec<&str> = match level {
        FactorLevel::Category => taxonomy::etf_categories().iter().map(|c| c.category.as_str()).collect(),
        FactorLevel::Class => taxonomy::etf_classes(),
    };
    let mut rows: Vec<String> = FF5_LABELS.iter().map(|s| s.to_string()).collect();
    rows.extend(order.iter().filter(|r| etf_rows.contains(**r)).map(|r| r.to_string()));
    // Groups outside the shipped taxonomy still get a row, after the rest.
    rows.extend(etf_rows.iter().filter(|r| !order.contains(&r.as_str())).cloned());

    let columns: Vec<u8> = columns.into_iter().collect();
    let counts: Vec<Vec<u64>> = rows
        .iter()
        .map(|r| {
            columns
                .iter()
                .map(|&g| cells.get(&(r.clone(), g)).copied().unwrap_or(0))
                .collect()
        })
        .collect();
    let mut proportions = vec![vec![0.0; columns.len()]; rows.len()];
    let mut empty_columns = Vec::new();
    for (d, &g) in columns.iter().enumerate() {
        let total: u64 = counts.iter().map(|r| r[d]).sum();
        if total == 0 {
            empty_columns.push(g);
            continue;
        }
        for b in 0..rows.len() {
            proportions[b][d] = counts[b][d] as f64 / total as f64;
        }
    }
    Ok(SignificanceMatrices {
        level,
        rows,
        columns,
        counts,
        proportions,
        empty_columns,
    })
}

/// Number of securities in which each factor is significant.
pub fn factor_counts(models: &[SecurityModel]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for m in models {
        for f in &m.significant {
            *out.entry(f.clone()).or_default() += 1;
        }
    }
    out
}

/// Everything produced by one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub reduced: ReducedUniverse,
    pub models: Vec<SecurityModel>,
    pub skipped: Vec<SkippedSecurity>,
    pub by_category: SignificanceMatrices,
    pub by_class: SignificanceMatrices,
    /// Per-factor significance counts; its length is the number of
    /// factors significant for at least one security.
    pub factor_counts: BTreeMap<String, usize>,
}

/// Orthogonalizes the study's ETF universe and reduces it.
pub fn reduce_study(data: &StudyData, config: &PipelineConfig) -> Result<ReducedUniverse> {
    let x_tilde = orthogonalize_universe(data.factors(), data.market())?;
    reduce_factors(&x_tilde, data.factor_meta(), config.pca_threshold)
}

/// Fits every security against an already reduced universe and aggregates.
pub fn run_with_universe(data: &StudyData, reduced: ReducedUniverse, config: &PipelineConfig) -> Result<FitReport> {
    config.validate()?;
    let (models, skipped) = fit_securities(data, &reduced, config)?;
    let by_category = significance_matrices(&models, data.security_meta(), data.factor_meta(), FactorLevel::Category)?;
    let by_class = significance_matrices(&models, data.security_meta(), data.factor_meta(), FactorLevel::Class)?;
    let factor_counts = factor_counts(&models);
    Ok(FitReport {
        reduced,
        models,
        skipped,
        by_category,
        by_class,
        factor_counts,
    })
}

/// The full recipe: reduction, per-security fits and aggregation.
pub fn run_study(data: &StudyData, config: &PipelineConfig) -> Result<FitReport> {
    config.validate()?;
    let reduced = reduce_study(data, config)?;
    run_with_universe(data, reduced, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2014, 1, 3).unwrap();
        (0..n).map(|i| start + chrono::Duration::weeks(i as i64)).collect()
    }

    fn panel(names: &[&str], values: Array2<f64>) -> ReturnsPanel {
        ReturnsPanel::from_values(dates(values.nrows()), names.iter().map(|s| s.to_string()).collect(), values).unwrap()
    }

    #[test]
    fn orthogonal_factor_is_unchanged_and_market_copy_vanishes() {
        let market = array![1.0, -1.0, 1.0, -1.0];
        let f = panel(&["a", "b"], array![[1.0, 2.0], [1.0, -2.0], [-1.0, 2.0], [-1.0, -2.0]]);
        let out = orthogonalize_universe(&f, market.view()).unwrap();
        assert_eq!(out.column(0), f.column(0));
        assert!(out.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_market_is_an_error() {
        let market = array![1.0, f64::NAN, 1.0];
        let f = panel(&["a"], array![[1.0], [2.0], [3.0]]);
        assert!(matches!(
            orthogonalize_universe(&f, market.view()),
            Err(Error::DegenerateSeries(_))
        ));
    }

    #[test]
    fn pruning_drops_market_like_factor() {
        let market = array![0.01, -0.02, 0.015, 0.0, -0.01, 0.02];
        let close = market.mapv(|v| 1.5 * v) + array![0.001, 0.0, -0.001, 0.0005, 0.0, 0.0];
        let far = array![0.01, 0.01, -0.01, -0.01, 0.02, -0.02];
        let mut v = Array2::zeros((6, 2));
        v.column_mut(0).assign(&close);
        v.column_mut(1).assign(&far);
        let f = panel(&["close", "far"], v);
        let rows: Vec<usize> = (0..6).collect();
        let (kept, pruned) = prune_and_augment(&[0, 1], &f, market.view(), &rows, 0.9);
        assert_eq!(kept, vec![1]);
        assert_eq!(pruned, vec![0]);
        let (kept, pruned) = prune_and_augment(&[], &f, market.view(), &rows, 0.9);
        assert!(kept.is_empty() && pruned.is_empty());
    }

    fn model(ticker: &str, significant: &[&str]) -> SecurityModel {
        let ols = OlsFit {
            with_intercept: true,
            alpha: 0.0,
            beta: vec![],
            se: vec![1.0],
            t_stats: vec![0.0],
            p_values: vec![1.0],
            r2: 0.0,
            adj_r2: 0.0,
            ss_res: 1.0,
            df_res: 1,
            n: 2,
            k: 0,
            residuals: vec![],
        };
        SecurityModel {
            ticker: ticker.into(),
            lambda: 0.0,
            lasso_converged: true,
            selected_lasso: vec![],
            pruned: vec![],
            collinear_dropped: vec![],
            selected_final: significant.iter().map(|s| s.to_string()).collect(),
            ols: ols.clone(),
            significant: significant.iter().map(|s| s.to_string()).collect(),
            adj_r2_mfm: 0.0,
            adj_r2_ff5: 0.0,
            ff5: ols,
            f_test: None,
            notes: vec![],
        }
    }

    #[test]
    fn single_significant_factor_fills_one_cell() {
        let sec = vec![SecurityMeta::new("AAA", 2834).unwrap()];
        let fac = vec![FactorMeta::new("XLE", "Energy Equities", "Equity").unwrap()];
        let g = significance_matrices(&[model("AAA", &["XLE"])], &sec, &fac, FactorLevel::Category).unwrap();
        assert_eq!(g.columns, vec![28]);
        let b = g.rows.iter().position(|r| r == "Energy Equities").unwrap();
        assert_eq!(g.counts[b][0], 1);
        assert_eq!(g.proportions[b][0], 1.0);
        assert_eq!(g.rows.len(), 6);
    }

    #[test]
    fn two_securities_same_group_count_two() {
        let sec = vec![SecurityMeta::new("A", 2834).unwrap(), SecurityMeta::new("B", 2899).unwrap()];
        let g = significance_matrices(&[model("A", &["smb"]), model("B", &["smb"])], &sec, &[], FactorLevel::Class)
            .unwrap();
        assert_eq!(g.counts[1][0], 2);
        assert_eq!(g.proportions[1][0], 1.0);
    }

    #[test]
    fn unmapped_ids_are_aggregation_errors() {
        let sec = vec![SecurityMeta::new("A", 100).unwrap()];
        let err = significance_matrices(&[model("A", &["ZZZ"])], &sec, &[], FactorLevel::Class).unwrap_err();
        assert!(matches!(err, Error::Aggregation(ref m) if m.contains("ZZZ")));
        let err = significance_matrices(&[model("Q", &[])], &sec, &[], FactorLevel::Class).unwrap_err();
        assert!(matches!(err, Error::Aggregation(ref m) if m.contains("Q")));
    }

    #[test]
    fn empty_column_is_flagged() {
        let sec = vec![SecurityMeta::new("A", 100).unwrap()];
        let g = significance_matrices(&[model("A", &[])], &sec, &[], FactorLevel::Class).unwrap();
        assert_eq!(g.empty_columns, vec![1]);
        assert!(g.proportions.iter().all(|r| r[0] == 0.0));
        let csv = g.to_csv().unwrap();
        assert!(csv.starts_with("factor_class,01\nMarket Return,0.000000\n"));
    }

    #[test]
    fn identical_factors_leave_one_representative() {
        let x = array![[0.1, 0.1, 0.3], [-0.2, -0.2, 0.1], [0.05, 0.05, -0.4], [0.3, 0.3, 0.2], [-0.1, -0.1, 0.0]];
        let f = panel(&["a", "b", "c"], x);
        let meta = vec![
            FactorMeta::new("a", "Energy Equities", "Equity").unwrap(),
            FactorMeta::new("b", "Energy Equities", "Equity").unwrap(),
            FactorMeta::new("c", "Precious Metals", "Commodity").unwrap(),
        ];
        let r = reduce_factors(&f, &meta, 0.8).unwrap();
        let energy = r.categories.iter().find(|c| c.category == "Energy Equities").unwrap();
        assert_eq!(energy.k, 1);
        assert_eq!(energy.representatives, vec![0]);
        let gold = r.categories.iter().find(|c| c.category == "Precious Metals").unwrap();
        assert_eq!(gold.representatives, vec![2]);
        assert_eq!(r.pooled, vec![0, 2]);
    }
}

//! Weekly-refit alpha ranking and the zero-investment long/short portfolio.
//!
//! Each out-of-sample week the model is refit on the trailing window, the
//! securities with significant positive (negative) alphas form the long
//! (short) candidates, and an equal-weighted $1 long / $1 short position is
//! held for the week. Value changes are additive.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{reduce_study, run_with_universe, PipelineConfig, ReducedUniverse, SecurityModel, StudyData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Rolling estimation window in weeks.
    pub window: usize,
    /// Number of final weeks of the data held out of sample.
    pub out_of_sample: usize,
    /// Fraction of each significant side to hold.
    pub quantile: f64,
    /// Reuse the reduced universe from the first refit instead of
    /// recomputing it every week.
    pub freeze_universe: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            window: 156,
            out_of_sample: 52,
            quantile: 0.5,
            freeze_universe: false,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return Err(Error::InvalidConfig(format!("quantile must lie in (0, 1], got {}", self.quantile)));
        }
        if self.window == 0 || self.out_of_sample == 0 {
            return Err(Error::InvalidConfig("window and out_of_sample must be positive".into()));
        }
        Ok(())
    }
}

/// The part of a fitted model the portfolio rule needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub ticker: String,
    pub alpha: f64,
    pub p_value: f64,
}

impl From<&SecurityModel> for AlphaEstimate {
    fn from(m: &SecurityModel) -> Self {
        AlphaEstimate {
            ticker: m.ticker.clone(),
            alpha: m.alpha(),
            p_value: m.intercept_p(),
        }
    }
}

/// Sorts by alpha descending, ties by ticker.
pub fn rank_by_alpha(estimates: &[AlphaEstimate]) -> Vec<AlphaEstimate> {
    let mut out = estimates.to_vec();
    out.sort_by(|a, b| b.alpha.total_cmp(&a.alpha).then_with(|| a.ticker.cmp(&b.ticker)));
    out
}

fn side_size(candidates: usize, quantile: f64) -> usize {
    if candidates == 0 {
        0
    } else {
        ((quantile * candidates as f64).floor() as usize).max(1)
    }
}

/// Long and short sets from a ranking: the top `floor(quantile * #L)` (at
/// least one) of the significant positive alphas, and symmetrically the
/// most negative of the significant negative alphas.
pub fn build_portfolio(ranked: &[AlphaEstimate], quantile: f64, sig_level: f64) -> (Vec<String>, Vec<String>) {
    let long: Vec<&AlphaEstimate> = ranked.iter().filter(|e| e.alpha > 0.0 && e.p_value < sig_level).collect();
    let short: Vec<&AlphaEstimate> = ranked
        .iter()
        .rev()
        .filter(|e| e.alpha < 0.0 && e.p_value < sig_level)
        .collect();
    let take = |side: &[&AlphaEstimate]| -> Vec<String> {
        side.iter()
            .take(side_size(side.len(), quantile))
            .map(|e| e.ticker.clone())
            .collect()
    };
    (take(&long), take(&short))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioWeek {
    pub week: NaiveDate,
    /// Held securities with an observed return this week.
    pub long_members: Vec<String>,
    pub short_members: Vec<String>,
    /// Selected but unobserved this week.
    pub dropped: Vec<String>,
    pub long_return: f64,
    pub short_return: f64,
    pub net_change: f64,
}

/// A week for which no refit was possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub week: NaiveDate,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub weeks: Vec<PortfolioWeek>,
    /// Running sum of `net_change`.
    pub cumulative: Vec<f64>,
    pub gaps: Vec<Gap>,
}

impl BacktestLedger {
    pub fn from_weeks(weeks: Vec<PortfolioWeek>, gaps: Vec<Gap>) -> Self {
        let cumulative = weeks
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w.net_change;
                Some(*acc)
            })
            .collect();
        BacktestLedger { weeks, cumulative, gaps }
    }

    /// `mean / (sd / sqrt(n))` of the weekly net changes; zero when every
    /// change is zero.
    pub fn mean_t_stat(&self) -> f64 {
        let n = self.weeks.len();
        if n < 2 {
            return 0.0;
        }
        let x: Vec<f64> = self.weeks.iter().map(|w| w.net_change).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if var == 0.0 {
            return if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        }
        mean / (var / n as f64).sqrt()
    }

    /// `week,long_count,short_count,long_return,short_return,net_change,cumulative`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "week",
            "long_count",
            "short_count",
            "long_return",
            "short_return",
            "net_change",
            "cumulative",
        ])?;
        for (pw, c) in self.weeks.iter().zip(&self.cumulative) {
            w.write_record([
                pw.week.to_string(),
                pw.long_members.len().to_string(),
                pw.short_members.len().to_string(),
                format!("{:?}", pw.long_return),
                format!("{:?}", pw.short_return),
                format!("{:?}", pw.net_change),
                format!("{c:?}"),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Aggregation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Equal-weighted mean of the observed returns of `members`; members
/// without a return are moved to `dropped`. An empty side returns 0.
fn realize(members: Vec<String>, returns: &dyn Fn(&str) -> Option<f64>, dropped: &mut Vec<String>) -> (Vec<String>, f64) {
    let mut kept = Vec::new();
    let mut sum = 0.0;
    for m in members {
        match returns(&m) {
            Some(r) => {
                sum += r;
                kept.push(m);
            }
            None => dropped.push(m),
        }
    }
    let mean = if kept.is_empty() { 0.0 } else { sum / kept.len() as f64 };
    (kept, mean)
}

/// One portfolio week from chosen sides and that week's returns.
pub fn realize_week(
    week: NaiveDate,
    long: Vec<String>,
    short: Vec<String>,
    returns: &dyn Fn(&str) -> Option<f64>,
) -> PortfolioWeek {
    let mut dropped = Vec::new();
    let (long_members, long_return) = realize(long, returns, &mut dropped);
    let (short_members, short_return) = realize(short, returns, &mut dropped);
    PortfolioWeek {
        week,
        long_members,
        short_members,
        dropped,
        long_return,
        short_return,
        net_change: long_return - short_return,
    }
}

/// Runs the backtest over the last `config.out_of_sample` weeks of `data`.
///
/// For out-of-sample week `w` the pipeline is refit on up to
/// `config.window` weeks ending at `w - 1`; the held positions earn the
/// securities' simple (not excess) returns of week `w`. A week whose
/// available history is shorter than the pipeline's observation floor is
/// recorded as a gap.
pub fn run_backtest(data: &StudyData, config: &BacktestConfig, pipeline: &PipelineConfig) -> Result<BacktestLedger> {
    config.validate()?;
    pipeline.validate()?;
    let t_total = data.dates().len();
    if config.out_of_sample > t_total {
        return Err(Error::InsufficientData {
            needed: config.out_of_sample,
            got: t_total,
        });
    }
    let securities = data.securities();
    let rf = &data.risk_free().values;
    let mut frozen: Option<ReducedUniverse> = None;
    let mut weeks = Vec::new();
    let mut gaps = Vec::new();
    for w in (t_total - config.out_of_sample)..t_total {
        let week = data.dates()[w];
        let start = w.saturating_sub(config.window);
        if w - start < pipeline.min_obs.max(2) {
            gaps.push(Gap {
                week,
                reason: format!("only {} weeks of history, need {}", w - start, pipeline.min_obs),
            });
            continue;
        }
        let rows: Vec<usize> = (start..w).collect();
        let window = data.select_rows(&rows)?;
        let reduced = match (&frozen, config.freeze_universe) {
            (Some(u), true) => u.clone(),
            _ => {
                let u = reduce_study(&window, pipeline)?;
                if config.freeze_universe {
                    frozen = Some(u.clone());
                }
                u
            }
        };
        let report = run_with_universe(&window, reduced, pipeline)?;
        let estimates: Vec<AlphaEstimate> = report.models.iter().map(AlphaEstimate::from).collect();
        let (long, short) = build_portfolio(&rank_by_alpha(&estimates), config.quantile, pipeline.sig_level);
        let returns = |ticker: &str| -> Option<f64> {
            let j = securities.column_index(ticker)?;
            securities.mask()[[w, j]].then(|| securities.values()[[w, j]] + rf[w])
        };
        weeks.push(realize_week(week, long, short, &returns));
    }
    Ok(BacktestLedger::from_weeks(weeks, gaps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(t: &str, alpha: f64, p: f64) -> AlphaEstimate {
        AlphaEstimate {
            ticker: t.into(),
            alpha,
            p_value: p,
        }
    }

    fn week() -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 1, 6).unwrap()
    }

    #[test]
    fn ranks_descending_with_ticker_ties() {
        let r = rank_by_alpha(&[est("a", 0.3, 0.0), est("b", -0.1, 0.0), est("c", 0.2, 0.0)]);
        let alphas: Vec<f64> = r.iter().map(|e| e.alpha).collect();
        assert_eq!(alphas, vec![0.3, 0.2, -0.1]);
        let r = rank_by_alpha(&[est("z", 0.1, 0.0), est("m", 0.1, 0.0), est("a", 0.1, 0.0)]);
        let t: Vec<&str> = r.iter().map(|e| e.ticker.as_str()).collect();
        assert_eq!(t, vec!["a", "m", "z"]);
    }

    #[test]
    fn no_significant_alphas_gives_empty_sides() {
        let r = rank_by_alpha(&[est("a", 0.3, 0.2), est("b", -0.3, 0.5)]);
        let (l, s) = build_portfolio(&r, 0.5, 0.05);
        assert!(l.is_empty() && s.is_empty());
        let pw = realize_week(week(), l, s, &|_| Some(0.1));
        assert_eq!(pw.net_change, 0.0);
    }

    #[test]
    fn single_candidate_is_held() {
        let r = rank_by_alpha(&[est("a", 0.3, 0.01), est("b", 0.1, 0.5)]);
        let (l, s) = build_portfolio(&r, 0.5, 0.05);
        assert_eq!(l, vec!["a"]);
        assert!(s.is_empty());
    }

    #[test]
    fn ten_candidates_keep_top_five() {
        let e: Vec<AlphaEstimate> = (0..10).map(|i| est(&format!("s{i}"), 0.01 * (i + 1) as f64, 0.001)).collect();
        let (l, _) = build_portfolio(&rank_by_alpha(&e), 0.5, 0.05);
        assert_eq!(l, vec!["s9", "s8", "s7", "s6", "s5"]);
    }

    #[test]
    fn short_side_takes_most_negative() {
        let e = vec![est("a", -0.1, 0.01), est("b", -0.3, 0.01), est("c", -0.2, 0.01), est("d", -0.05, 0.01)];
        let (_, s) = build_portfolio(&rank_by_alpha(&e), 0.5, 0.05);
        assert_eq!(s, vec!["b", "c"]);
    }

    #[test]
    fn realized_returns() {
        let pw = realize_week(week(), vec!["a".into()], vec![], &|_| Some(0.02));
        assert_eq!(pw.net_change, 0.02);
        let pw = realize_week(week(), vec!["a".into()], vec!["b".into()], &|_| Some(0.01));
        assert_eq!(pw.net_change, 0.0);
        let pw = realize_week(week(), vec!["a".into(), "x".into()], vec![], &|t| (t == "a").then_some(0.03));
        assert_eq!(pw.long_members, vec!["a"]);
        assert_eq!(pw.dropped, vec!["x"]);
        assert_eq!(pw.long_return, 0.03);
    }

    #[test]
    fn cumulative_is_running_sum() {
        let mk = |n: f64| PortfolioWeek {
            week: week(),
            long_members: vec![],
            short_members: vec![],
            dropped: vec![],
            long_return: n,
            short_return: 0.0,
            net_change: n,
        };
        let l = BacktestLedger::from_weeks(vec![mk(0.01), mk(-0.03), mk(0.5)], vec![]);
        assert_eq!(l.cumulative, vec![0.01, 0.01 - 0.03, 0.01 - 0.03 + 0.5]);
        let csv = l.to_csv().unwrap();
        assert!(csv.starts_with("week,long_count,short_count,long_return,short_return,net_change,cumulative\n"));
    }
}

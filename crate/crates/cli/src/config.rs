//! Flat `key = value` run configuration. Every key is also a command-line
//! flag of the same name.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::Serialize;

use sparsefactor::backtest::BacktestConfig;
use sparsefactor::lasso::{LassoOptions, SupportRule};
use sparsefactor::panel::Units;
use sparsefactor::pipeline::PipelineConfig;
use sparsefactor::simulate::{SimConfig, World};

/// Recognized keys with their help text, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("securities", "security returns CSV (date column plus one column per ticker)"),
    ("factors", "ETF returns CSV"),
    ("ff5", "FF5 CSV with columns date,mkt_rf,smb,hml,rmw,cma,rf"),
    ("risk_free", "optional separate risk-free CSV (date,rf); defaults to the rf column of ff5"),
    ("security_meta", "security metadata CSV (ticker,sic_code)"),
    ("factor_meta", "ETF metadata CSV (ticker,category,class)"),
    ("units", "return units of every input file: decimal or percent"),
    ("start", "first date of the study window (YYYY-MM-DD)"),
    ("end", "last date of the study window (YYYY-MM-DD)"),
    ("min_coverage", "keep series observed on strictly more than this fraction of weeks"),
    ("s_max", "largest LASSO support"),
    ("grid_size", "number of penalties on the LASSO grid"),
    ("grid_floor", "smallest grid penalty as a fraction of lambda_max"),
    ("lasso_tol", "coordinate-descent tolerance"),
    ("lasso_max_iter", "coordinate-descent sweep cap"),
    ("corr_cap", "prune selected ETFs whose |corr| with the market exceeds this"),
    ("pca_threshold", "explained-variance share fixing cluster counts"),
    ("sig_level", "significance level for factors, intercepts and F-tests"),
    ("min_obs", "minimum estimation weeks per security"),
    ("window", "backtest estimation window in weeks"),
    ("out_of_sample", "backtest out-of-sample weeks"),
    ("quantile", "fraction of each significant side held in the backtest"),
    ("freeze_universe", "reuse the first reduced universe for every backtest week (true/false)"),
    ("threads", "worker threads; 0 uses every core"),
    ("output_dir", "directory receiving all artifacts"),
    ("seed", "simulation seed"),
    ("world", "simulation world: signal or null"),
    ("n_securities", "simulated securities"),
    ("n_weeks", "simulated weeks"),
    ("n_categories", "simulated ETF categories"),
    ("blocks_per_category", "latent blocks per simulated category"),
    ("etfs_per_block", "ETFs per latent block"),
    ("market_like", "simulated market-like ETFs"),
    ("mean_support", "mean number of planted ETF loadings"),
    ("noise_sd", "idiosyncratic noise standard deviation"),
    ("alpha_sd", "standard deviation of planted alphas"),
    ("missing_rate", "probability that a simulated security cell is missing"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub securities: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub ff5: Option<PathBuf>,
    pub risk_free: Option<PathBuf>,
    pub security_meta: Option<PathBuf>,
    pub factor_meta: Option<PathBuf>,
    pub units: Units,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub min_coverage: f64,
    pub s_max: usize,
    pub grid_size: usize,
    pub grid_floor: f64,
    pub lasso_tol: f64,
    pub lasso_max_iter: usize,
    pub corr_cap: f64,
    pub pca_threshold: f64,
    pub sig_level: f64,
    pub min_obs: usize,
    pub window: usize,
    pub out_of_sample: usize,
    pub quantile: f64,
    pub freeze_universe: bool,
    pub threads: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub world: World,
    pub n_securities: usize,
    pub n_weeks: usize,
    pub n_categories: usize,
    pub blocks_per_category: usize,
    pub etfs_per_block: usize,
    pub market_like: usize,
    pub mean_support: usize,
    pub noise_sd: f64,
    pub alpha_sd: f64,
    pub missing_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        let b = BacktestConfig::default();
        let s = SimConfig::default();
        RunConfig {
            securities: None,
            factors: None,
            ff5: None,
            risk_free: None,
            security_meta: None,
            factor_meta: None,
            units: Units::Decimal,
            start: None,
            end: None,
            min_coverage: 2.0 / 3.0,
            s_max: p.support.s_max,
            grid_size: p.support.grid_size,
            grid_floor: p.support.grid_floor,
            lasso_tol: p.lasso.tol,
            lasso_max_iter: p.lasso.max_iter,
            corr_cap: p.corr_cap,
            pca_threshold: p.pca_threshold,
            sig_level: p.sig_level,
            min_obs: p.min_obs,
            window: b.window,
            out_of_sample: b.out_of_sample,
            quantile: b.quantile,
            freeze_universe: b.freeze_universe,
            threads: 0,
            output_dir: PathBuf::from("out"),
            seed: s.seed,
            world: s.world,
            n_securities: s.n_securities,
            n_weeks: s.n_weeks,
            n_categories: s.n_categories,
            blocks_per_category: s.blocks_per_category,
            etfs_per_block: s.etfs_per_block,
            market_like: s.market_like,
            mean_support: s.mean_support,
            noise_sd: s.noise_sd,
            alpha_sd: s.alpha_sd,
            missing_rate: s.missing_rate,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError(format!("invalid value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError(format!("invalid value `{value}` for `{key}`: expected true or false"))),
    }
}

fn parse_date(key: &str, value: &str) -> Result<NaiveDate, ConfigError> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|e| ConfigError(format!("invalid date `{value}` for `{key}`: {e}")))
}

impl RunConfig {
    /// Applies one `key = value` setting. Relative paths are resolved
    /// against `base` when given.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        let path = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match key {
            "securities" => self.securities = Some(path(value)),
            "factors" => self.factors = Some(path(value)),
            "ff5" => self.ff5 = Some(path(value)),
            "risk_free" => self.risk_free = Some(path(value)),
            "security_meta" => self.security_meta = Some(path(value)),
            "factor_meta" => self.factor_meta = Some(path(value)),
            "units" => self.units = parse(key, value)?,
            "start" => self.start = Some(parse_date(key, value)?),
            "end" => self.end = Some(parse_date(key, value)?),
            "min_coverage" => self.min_coverage = parse(key, value)?,
            "s_max" => self.s_max = parse(key, value)?,
            "grid_size" => self.grid_size = parse(key, value)?,
            "grid_floor" => self.grid_floor = parse(key, value)?,
            "lasso_tol" => self.lasso_tol = parse(key, value)?,
            "lasso_max_iter" => self.lasso_max_iter = parse(key, value)?,
            "corr_cap" => self.corr_cap = parse(key, value)?,
            "pca_threshold" => self.pca_threshold = parse(key, value)?,
            "sig_level" => self.sig_level = parse(key, value)?,
            "min_obs" => self.min_obs = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "out_of_sample" => self.out_of_sample = parse(key, value)?,
            "quantile" => self.quantile = parse(key, value)?,
            "freeze_universe" => self.freeze_universe = parse_bool(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "output_dir" => self.output_dir = path(value),
            "seed" => self.seed = parse(key, value)?,
            "world" => self.world = parse(key, value)?,
            "n_securities" => self.n_securities = parse(key, value)?,
            "n_weeks" => self.n_weeks = parse(key, value)?,
            "n_categories" => self.n_categories = parse(key, value)?,
            "blocks_per_category" => self.blocks_per_category = parse(key, value)?,
            "etfs_per_block" => self.etfs_per_block = parse(key, value)?,
            "market_like" => self.market_like = parse(key, value)?,
            "mean_support" => self.mean_support = parse(key, value)?,
            "noise_sd" => self.noise_sd = parse(key, value)?,
            "alpha_sd" => self.alpha_sd = parse(key, value)?,
            "missing_rate" => self.missing_rate = parse(key, value)?,
            _ => return Err(ConfigError(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a config file. Blank lines and `#` comments are ignored;
    /// relative paths are taken relative to the file's directory.
    pub fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            self.set(k.trim(), v.trim(), base)
                .map_err(|e| ConfigError(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if s >= e {
                return Err(ConfigError(format!("start {s} must precede end {e}")));
            }
        }
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return Err(ConfigError(format!("min_coverage must lie in (0, 1], got {}", self.min_coverage)));
        }
        self.pipeline().validate().map_err(|e| ConfigError(e.to_string()))?;
        self.backtest().validate().map_err(|e| ConfigError(e.to_string()))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            support: SupportRule {
                s_max: self.s_max,
                grid_size: self.grid_size,
                grid_floor: self.grid_floor,
            },
            lasso: LassoOptions {
                tol: self.lasso_tol,
                max_iter: self.lasso_max_iter,
            },
            corr_cap: self.corr_cap,
            pca_threshold: self.pca_threshold,
            sig_level: self.sig_level,
            min_obs: self.min_obs,
        }
    }

    pub fn backtest(&self) -> BacktestConfig {
        BacktestConfig {
            window: self.window,
            out_of_sample: self.out_of_sample,
            quantile: self.quantile,
            freeze_universe: self.freeze_universe,
        }
    }

    pub fn simulation(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            world: self.world,
            n_securities: self.n_securities,
            n_weeks: self.n_weeks,
            n_categories: self.n_categories,
            blocks_per_category: self.blocks_per_category,
            etfs_per_block: self.etfs_per_block,
            market_like: self.market_like,
            mean_support: self.mean_support,
            noise_sd: self.noise_sd,
            alpha_sd: self.alpha_sd,
            missing_rate: self.missing_rate,
            ..SimConfig::default()
        }
    }

    pub fn window_dates(&self) -> Option<(NaiveDate, NaiveDate)> {
        match (self.start, self.end) {
            (None, None) => None,
            (s, e) => Some((s.unwrap_or(NaiveDate::MIN), e.unwrap_or(NaiveDate::MAX))),
        }
    }
}

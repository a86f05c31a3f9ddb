//! Synthetic worlds with known ground truth.
//!
//! ETF returns are `gamma * market + block + noise`, with blocks nested in
//! taxonomy categories; a few extra ETFs track the market almost exactly.
//! Securities load on FF5 and, in a signal world, on a sparse set of ETFs
//! drawn from distinct blocks.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{
    write_factor_meta, write_ff5_csv, write_security_meta, FactorMeta, ReturnsPanel, RiskFreeSeries, SecurityMeta,
    FF5_IDS,
};
use crate::pipeline::RawInputs;
use crate::taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum World {
    /// Securities load on planted ETFs beyond FF5.
    Signal,
    /// FF5 is the true model and every alpha is zero.
    Null,
}

impl std::str::FromStr for World {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signal" => Ok(World::Signal),
            "null" => Ok(World::Null),
            other => Err(Error::InvalidConfig(format!("world must be `signal` or `null`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub world: World,
    pub n_securities: usize,
    pub n_weeks: usize,
    pub n_categories: usize,
    pub blocks_per_category: usize,
    pub etfs_per_block: usize,
    /// ETFs that are the market plus small noise, filed under
    /// "Large Cap Blend Equities".
    pub market_like: usize,
    /// Mean number of planted ETF loadings per security (signal world).
    pub mean_support: usize,
    pub noise_sd: f64,
    pub block_sd: f64,
    pub etf_noise_sd: f64,
    /// Planted ETF loadings have magnitude uniform on this range.
    pub beta_min: f64,
    pub beta_max: f64,
    /// Standard deviation of planted alphas in a signal world.
    pub alpha_sd: f64,
    /// Probability that a security's weekly return is missing.
    pub missing_rate: f64,
    pub start: NaiveDate,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            world: World::Signal,
            n_securities: 200,
            n_weeks: 156,
            n_categories: 16,
            blocks_per_category: 2,
            etfs_per_block: 4,
            market_like: 8,
            mean_support: 4,
            noise_sd: 0.02,
            block_sd: 0.02,
            etf_noise_sd: 0.005,
            beta_min: 0.3,
            beta_max: 0.8,
            alpha_sd: 0.0,
            missing_rate: 0.0,
            start: NaiveDate::from_ymd_opt(2014, 1, 3).expect("valid date"),
        }
    }
}

/// Categories used for block ETFs, before falling back to the rest of the
/// taxonomy.
const PREFERRED_CATEGORIES: [&str; 20] = [
    "Technology Equities",
    "Energy Equities",
    "Corporate Bonds",
    "Precious Metals",
    "Financial Equities",
    "Government Bonds",
    "Health & Biotech Equities",
    "Oil & Gas",
    "Real Estate",
    "Emerging Markets Equities",
    "High Yield Bonds",
    "Utilities Equities",
    "Agricultural Commodities",
    "Japan Equities",
    "Currency",
    "Small Cap Value Equities",
    "Europe Equities",
    "Materials",
    "Volatility",
    "Hedge Fund",
];

const MARKET_CATEGORY: &str = "Large Cap Blend Equities";

/// SIC major groups assigned to securities.
const SIC_GROUPS: [u16; 12] = [13, 20, 28, 35, 36, 38, 48, 49, 60, 63, 73, 80];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBlock {
    pub category: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedLoading {
    pub factor: String,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSecurity {
    pub ticker: String,
    pub sic_code: u16,
    pub alpha: f64,
    /// Loadings on FF5 in [`FF5_IDS`] order.
    pub ff5_betas: [f64; 5],
    pub etf_betas: Vec<PlantedLoading>,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SimConfig,
    pub blocks: Vec<PlantedBlock>,
    pub market_like: Vec<String>,
    /// Mean number of planted ETF loadings per security.
    pub mean_support: f64,
    pub securities: Vec<PlantedSecurity>,
}

#[derive(Debug, Clone)]
pub struct SimulatedWorld {
    /// Simple (not excess) security returns.
    pub securities: ReturnsPanel,
    /// Simple ETF returns.
    pub factors: ReturnsPanel,
    pub ff5: ReturnsPanel,
    pub risk_free: RiskFreeSeries,
    pub security_meta: Vec<SecurityMeta>,
    pub factor_meta: Vec<FactorMeta>,
    pub truth: GroundTruth,
}

impl SimulatedWorld {
    pub fn raw_inputs(&self) -> RawInputs {
        RawInputs {
            securities: self.securities.clone(),
            factors: self.factors.clone(),
            ff5: self.ff5.clone(),
            risk_free: self.risk_free.clone(),
            security_meta: self.security_meta.clone(),
            factor_meta: self.factor_meta.clone(),
        }
    }
}

fn categories(n: usize) -> Result<Vec<&'static str>> {
    let mut out: Vec<&'static str> = Vec::new();
    let all = taxonomy::etf_categories();
    for name in PREFERRED_CATEGORIES {
        let c = all.iter().find(|c| c.category == name).expect("preferred category is in the taxonomy");
        out.push(c.category.as_str());
    }
    for c in all {
        if c.category != MARKET_CATEGORY && !out.contains(&c.category.as_str()) {
            out.push(c.category.as_str());
        }
    }
    if n > out.len() {
        return Err(Error::InvalidConfig(format!("at most {} categories are available", out.len())));
    }
    out.truncate(n);
    Ok(out)
}

fn validate(c: &SimConfig) -> Result<()> {
    if c.n_securities == 0 || c.n_weeks < 3 {
        return Err(Error::InvalidConfig("need at least one security and three weeks".into()));
    }
    if c.n_categories * c.blocks_per_category * c.etfs_per_block + c.market_like == 0 {
        return Err(Error::InvalidConfig("the ETF universe is empty".into()));
    }
    let blocks = c.n_categories * c.blocks_per_category;
    if c.world == World::Signal && c.mean_support + 1 > blocks {
        return Err(Error::InvalidConfig(format!(
            "mean_support {} needs at least {} blocks, have {blocks}",
            c.mean_support,
            c.mean_support + 1
        )));
    }
    if !(0.0..1.0).contains(&c.missing_rate) {
        return Err(Error::InvalidConfig("missing_rate must lie in [0, 1)".into()));
    }
    for (name, v) in [
        ("noise_sd", c.noise_sd),
        ("block_sd", c.block_sd),
        ("etf_noise_sd", c.etf_noise_sd),
        ("alpha_sd", c.alpha_sd),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
        }
    }
    if !(0.0 <= c.beta_min && c.beta_min <= c.beta_max) {
        return Err(Error::InvalidConfig("need 0 <= beta_min <= beta_max".into()));
    }
    Ok(())
}

/// Per-security support sizes: `mean_support + offset` with offsets cycling
/// `0, -1, +1`, adjusted so the mean is exactly `mean_support`.
fn support_sizes(n: usize, mean: usize) -> Vec<usize> {
    let cycle: [isize; 3] = if mean == 0 { [0, 0, 0] } else { [0, -1, 1] };
    let mut offsets: Vec<isize> = (0..n).map(|i| cycle[i % 3]).collect();
    if n % 3 == 2 {
        offsets[n - 1] = 0;
    }
    offsets.iter().map(|o| (mean as isize + o) as usize).collect()
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("finite, non-negative sd")
}

/// Generates a world. Identical configs give identical worlds.
pub fn simulate(c: &SimConfig) -> Result<SimulatedWorld> {
    validate(c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let t = c.n_weeks;
    let dates: Vec<NaiveDate> = (0..t).map(|i| c.start + chrono::Duration::weeks(i as i64)).collect();

    // FF5 and the risk-free rate.
    let mut ff5 = Array2::zeros((t, 5));
    for row in 0..t {
        ff5[[row, 0]] = normal(0.0015, 0.022).sample(&mut rng);
        for col in 1..5 {
            ff5[[row, col]] = normal(0.0, 0.01).sample(&mut rng);
        }
    }
    let rf: Vec<f64> = (0..t).map(|_| 0.0003 + rng.random_range(-0.00005..0.00005)).collect();

    // ETFs, stored as excess returns until the end.
    let cats = categories(c.n_categories)?;
    let mut etf_names = Vec::new();
    let mut factor_meta = Vec::new();
    let mut etf_cols: Vec<Vec<f64>> = Vec::new();
    let mut blocks = Vec::new();
    for cat in &cats {
        let class = taxonomy::class_of_category(cat).expect("category from the taxonomy");
        for _ in 0..c.blocks_per_category {
            let latent: Vec<f64> = (0..t).map(|_| normal(0.0, c.block_sd).sample(&mut rng)).collect();
            let mut members = Vec::new();
            for _ in 0..c.etfs_per_block {
                let name = format!("ETF{:03}", etf_names.len() + 1);
                let gamma = rng.random_range(0.2..0.8);
                let col = (0..t)
                    .map(|r| gamma * ff5[[r, 0]] + latent[r] + normal(0.0, c.etf_noise_sd).sample(&mut rng))
                    .collect();
                etf_cols.push(col);
                factor_meta.push(FactorMeta::new(&name, *cat, class)?);
                members.push(name.clone());
                etf_names.push(name);
            }
            blocks.push(PlantedBlock {
                category: cat.to_string(),
                members,
            });
        }
    }
    let market_class = taxonomy::class_of_category(MARKET_CATEGORY).expect("market category exists");
    let mut market_like = Vec::new();
    for i in 0..c.market_like {
        let name = format!("MKT{:02}", i + 1);
        let gamma = rng.random_range(0.9..1.1);
        let col = (0..t)
            .map(|r| gamma * ff5[[r, 0]] + normal(0.0, c.etf_noise_sd).sample(&mut rng))
            .collect();
        etf_cols.push(col);
        factor_meta.push(FactorMeta::new(&name, MARKET_CATEGORY, market_class)?);
        market_like.push(name.clone());
        etf_names.push(name);
    }

    // Securities.
    let sizes = support_sizes(c.n_securities, c.mean_support);
    let mut sec_values = Array2::zeros((t, c.n_securities));
    let mut sec_mask = Array2::from_elem((t, c.n_securities), true);
    let mut planted = Vec::with_capacity(c.n_securities);
    let mut security_meta = Vec::with_capacity(c.n_securities);
    let block_ids: Vec<usize> = (0..blocks.len()).collect();
    for i in 0..c.n_securities {
        let ticker = format!("S{:04}", i + 1);
        let group = SIC_GROUPS[rng.random_range(0..SIC_GROUPS.len())];
        let sic_code = group * 100 + rng.random_range(0..100u16);
        let mut ff5_betas = [0.0; 5];
        ff5_betas[0] = rng.random_range(0.6..1.4);
        for b in ff5_betas.iter_mut().skip(1) {
            if rng.random_bool(0.5) {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let mut loadings = Vec::new();
        let mut alpha = 0.0;
        if c.world == World::Signal {
            alpha = if c.alpha_sd > 0.0 { normal(0.0, c.alpha_sd).sample(&mut rng) } else { 0.0 };
            let mut chosen: Vec<usize> = block_ids.choose_multiple(&mut rng, sizes[i]).copied().collect();
            chosen.sort_unstable();
            for b in chosen {
                let member = rng.random_range(0..blocks[b].members.len());
                let name = blocks[b].members[member].clone();
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let beta = sign * rng.random_range(c.beta_min..=c.beta_max);
                loadings.push((etf_names.iter().position(|n| *n == name).expect("planted ETF exists"), name, beta));
            }
        }
        for r in 0..t {
            let mut v = alpha + normal(0.0, c.noise_sd).sample(&mut rng);
            for (k, b) in ff5_betas.iter().enumerate() {
                v += b * ff5[[r, k]];
            }
            for (j, _, b) in &loadings {
                v += b * etf_cols[*j][r];
            }
            sec_values[[r, i]] = v + rf[r];
            if c.missing_rate > 0.0 && rng.random_bool(c.missing_rate) {
                sec_mask[[r, i]] = false;
            }
        }
        security_meta.push(SecurityMeta::new(&ticker, sic_code)?);
        planted.push(PlantedSecurity {
            ticker,
            sic_code,
            alpha,
            ff5_betas,
            etf_betas: loadings
                .into_iter()
                .map(|(_, factor, beta)| PlantedLoading { factor, beta })
                .collect(),
            noise_sd: c.noise_sd,
        });
    }

    let mut etf_values = Array2::zeros((t, etf_cols.len()));
    for (j, col) in etf_cols.iter().enumerate() {
        for r in 0..t {
            etf_values[[r, j]] = col[r] + rf[r];
        }
    }
    let tickers = planted.iter().map(|p| p.ticker.clone()).collect();
    let mean_support = planted.iter().map(|p| p.etf_betas.len()).sum::<usize>() as f64 / c.n_securities as f64;
    Ok(SimulatedWorld {
        securities: ReturnsPanel::new(dates.clone(), tickers, sec_values, sec_mask)?,
        factors: ReturnsPanel::from_values(dates.clone(), etf_names, etf_values)?,
        ff5: ReturnsPanel::from_values(dates.clone(), FF5_IDS.iter().map(|s| s.to_string()).collect(), ff5)?,
        risk_free: RiskFreeSeries::new(dates, rf)?,
        security_meta,
        factor_meta,
        truth: GroundTruth {
            config: *c,
            blocks,
            market_like,
            mean_support,
            securities: planted,
        },
    })
}

/// File locations of a written dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub securities: PathBuf,
    pub factors: PathBuf,
    pub ff5: PathBuf,
    pub security_meta: PathBuf,
    pub factor_meta: PathBuf,
    pub ground_truth: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            securities: dir.join("securities.csv"),
            factors: dir.join("etfs.csv"),
            ff5: dir.join("ff5.csv"),
            security_meta: dir.join("security_meta.csv"),
            factor_meta: dir.join("factor_meta.csv"),
            ground_truth: dir.join("ground_truth.json"),
        }
    }
}

/// Writes the world's CSVs (FF5 file carries the `rf` column) and ground
/// truth into `dir`, which must exist.
pub fn write_dataset(world: &SimulatedWorld, dir: &Path) -> Result<DatasetPaths> {
    let paths = DatasetPaths::in_dir(dir);
    world.securities.write_csv(&paths.securities)?;
    world.factors.write_csv(&paths.factors)?;
    write_ff5_csv(&world.ff5, &world.risk_free, &paths.ff5)?;
    write_security_meta(&world.security_meta, &paths.security_meta)?;
    write_factor_meta(&world.factor_meta, &paths.factor_meta)?;
    let json = serde_json::to_string_pretty(&world.truth)?;
    std::fs::write(&paths.ground_truth, json + "\n").map_err(|e| Error::io(&paths.ground_truth, e))?;
    Ok(paths)
}

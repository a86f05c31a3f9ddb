//! Subcommand bodies and artifact writers.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use sparsefactor::backtest::run_backtest;
use sparsefactor::cluster::Dendrogram;
use sparsefactor::inference::{gof_study, intercept_study};
use sparsefactor::panel::{
    load_factor_meta, load_ff5, load_panel, load_risk_free, load_security_meta, PanelSchema,
};
use sparsefactor::pipeline::{reduce_study, run_with_universe, RawInputs, ReducedUniverse, StudyData};
use sparsefactor::simulate::{simulate, write_dataset};
use sparsefactor::Error;

use crate::config::{ConfigError, RunConfig};

/// A failed command, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or missing input files (exit code 2).
    Usage(String),
    /// Anything that goes wrong while running (exit code 1).
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn input<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Failure> {
    let p = path
        .as_deref()
        .ok_or_else(|| Failure::Usage(format!("missing required setting `{key}`")))?;
    if !p.is_file() {
        return Err(Failure::Usage(format!("input file not found: {}", p.display())));
    }
    Ok(p)
}

fn load_study(cfg: &RunConfig) -> Result<StudyData, Failure> {
    let schema = PanelSchema {
        units: cfg.units,
        ..PanelSchema::default()
    };
    let securities = input(&cfg.securities, "securities")?;
    let factors = input(&cfg.factors, "factors")?;
    let ff5 = input(&cfg.ff5, "ff5")?;
    let security_meta = input(&cfg.security_meta, "security_meta")?;
    let factor_meta = input(&cfg.factor_meta, "factor_meta")?;
    let risk_free = match &cfg.risk_free {
        Some(_) => Some(input(&cfg.risk_free, "risk_free")?),
        None => None,
    };
    let (ff5, rf) = load_ff5(ff5, cfg.units)?;
    let raw = RawInputs {
        securities: load_panel(securities, &schema)?,
        factors: load_panel(factors, &schema)?,
        ff5,
        risk_free: match risk_free {
            Some(p) => load_risk_free(p, cfg.units)?,
            None => rf,
        },
        security_meta: load_security_meta(security_meta)?,
        factor_meta: load_factor_meta(factor_meta)?,
    };
    Ok(StudyData::prepare(raw, cfg.window_dates(), cfg.min_coverage)?)
}

/// Writes artifacts into the output directory and remembers their paths.
struct Writer<'a> {
    cfg: &'a RunConfig,
    written: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self, Failure> {
        fs::create_dir_all(&cfg.output_dir).map_err(|e| io_failure(&cfg.output_dir, e))?;
        Ok(Writer { cfg, written: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn text(&mut self, name: &str, text: &str) -> Result<(), Failure> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// JSON document with the run configuration under `config`.
    fn json(&mut self, name: &str, body: Value) -> Result<(), Failure> {
        let mut doc = json!({ "config": self.cfg });
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Runtime(e.to_string()))?;
        self.text(name, &(text + "\n"))
    }

    /// CSV plus a `<name>.meta.json` sidecar holding the configuration.
    fn csv(&mut self, name: &str, text: &str, description: &str) -> Result<(), Failure> {
        self.text(name, text)?;
        self.json(&format!("{name}.meta.json"), json!({ "artifact": name, "description": description }))
    }

    /// Sidecar only, for CSVs written by the library.
    fn sidecar(&mut self, path: &Path, description: &str) -> Result<(), Failure> {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        self.written.push(path.to_path_buf());
        self.json(&format!("{name}.meta.json"), json!({ "artifact": name, "description": description }))
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(|e| Failure::Runtime(e.to_string()))
}

fn names(reduced: &ReducedUniverse, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&j| reduced.factors[j].clone()).collect()
}

fn dendrogram_doc(reduced: &ReducedUniverse, leaves: &[usize], d: &Option<Dendrogram>) -> Value {
    json!({ "leaves": names(reduced, leaves), "dendrogram": d })
}

fn write_reduction(w: &mut Writer, reduced: &ReducedUniverse) -> Result<(), Failure> {
    let categories: Vec<Value> = reduced
        .categories
        .iter()
        .map(|c| {
            json!({
                "category": c.category,
                "class": c.class,
                "members": names(reduced, &c.members),
                "degenerate": names(reduced, &c.degenerate),
                "k": c.k,
                "representatives": names(reduced, &c.representatives),
            })
        })
        .collect();
    w.json(
        "reduced_universe.json",
        json!({
            "p2": reduced.p2(),
            "k_u": reduced.k_u,
            "universe": reduced.final_names(),
            "pooled": names(reduced, &reduced.pooled),
            "categories": categories,
        }),
    )?;
    let per_category: Vec<Value> = reduced
        .categories
        .iter()
        .map(|c| {
            let mut v = dendrogram_doc(reduced, &c.clustered, &c.dendrogram);
            v["category"] = json!(c.category);
            v
        })
        .collect();
    w.json(
        "dendrograms.json",
        json!({
            "categories": per_category,
            "pooled": dendrogram_doc(reduced, &reduced.pooled, &reduced.pooled_dendrogram),
        }),
    )
}

pub fn reduce(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let data = load_study(cfg)?;
    let reduced = reduce_study(&data, &cfg.pipeline())?;
    let mut w = Writer::new(cfg)?;
    write_reduction(&mut w, &reduced)?;
    Ok(w.written)
}

pub fn fit(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let data = load_study(cfg)?;
    let pipeline = cfg.pipeline();
    let reduced = reduce_study(&data, &pipeline)?;
    let mut w = Writer::new(cfg)?;
    write_reduction(&mut w, &reduced)?;
    let report = run_with_universe(&data, reduced, &pipeline)?;
    w.json(
        "models.json",
        json!({
            "models": to_value(&report.models)?,
            "skipped": to_value(&report.skipped)?,
            "factor_counts": to_value(&report.factor_counts)?,
        }),
    )?;
    w.csv(
        "g_matrix.csv",
        &report.by_class.to_csv()?,
        "percent of significant factor occurrences per factor class (rows) and SIC 2-digit group (columns)",
    )?;
    w.csv(
        "g_matrix_category.csv",
        &report.by_category.to_csv()?,
        "percent of significant factor occurrences per ETF category (rows) and SIC 2-digit group (columns)",
    )?;
    w.json(
        "significance.json",
        json!({ "by_class": to_value(&report.by_class)?, "by_category": to_value(&report.by_category)? }),
    )?;
    Ok(w.written)
}

pub fn test(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let data = load_study(cfg)?;
    let pipeline = cfg.pipeline();
    let report = run_with_universe(&data, reduce_study(&data, &pipeline)?, &pipeline)?;
    let intercepts = intercept_study(&report.models)?;
    let f = gof_study(&report.models)?;
    let mut w = Writer::new(cfg)?;
    w.csv(
        "intercept_study.csv",
        &intercepts.to_csv()?,
        "percent of intercept p-values and q-values per bin, FF5-only and multi-factor fits",
    )?;
    w.json("intercept_study.json", json!({ "intercept_study": to_value(&intercepts)? }))?;
    w.csv(
        "f_study.csv",
        &f.to_csv()?,
        "percent of F-test p-values and q-values per bin, multi-factor against FF5-only",
    )?;
    w.json("f_study.json", json!({ "f_study": to_value(&f)? }))?;
    Ok(w.written)
}

pub fn backtest(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let data = load_study(cfg)?;
    let ledger = run_backtest(&data, &cfg.backtest(), &cfg.pipeline())?;
    let mut w = Writer::new(cfg)?;
    w.csv(
        "ledger.csv",
        &ledger.to_csv()?,
        "weekly long/short returns of the zero-investment portfolio and their running sum",
    )?;
    w.json(
        "ledger.json",
        json!({
            "summary": {
                "weeks": ledger.weeks.len(),
                "gaps": ledger.gaps.len(),
                "mean_t_stat": ledger.mean_t_stat(),
                "cumulative": ledger.cumulative.last().copied().unwrap_or(0.0),
            },
            "ledger": to_value(&ledger)?,
        }),
    )?;
    Ok(w.written)
}

pub fn simulate_dataset(cfg: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    let world = simulate(&cfg.simulation())?;
    let mut w = Writer::new(cfg)?;
    let paths = write_dataset(&world, &cfg.output_dir)?;
    for (p, what) in [
        (&paths.securities, "simulated security returns"),
        (&paths.factors, "simulated ETF returns"),
        (&paths.ff5, "simulated FF5 factors and risk-free rate"),
        (&paths.security_meta, "simulated security metadata"),
        (&paths.factor_meta, "simulated ETF metadata"),
    ] {
        w.sidecar(p, what)?;
    }
    w.written.push(paths.ground_truth.clone());
    let file = |p: &Path| p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let mut conf = String::from("# inputs written by `sparsefactor simulate`; paths are relative to this file\n");
    for (key, p) in [
        ("securities", &paths.securities),
        ("factors", &paths.factors),
        ("ff5", &paths.ff5),
        ("security_meta", &paths.security_meta),
        ("factor_meta", &paths.factor_meta),
    ] {
        conf += &format!("{key} = {}\n", file(p));
    }
    let world = match cfg.world {
        sparsefactor::simulate::World::Signal => "signal",
        sparsefactor::simulate::World::Null => "null",
    };
    conf += "# generator settings\n";
    for (key, value) in [
        ("seed", cfg.seed.to_string()),
        ("world", world.to_string()),
        ("n_securities", cfg.n_securities.to_string()),
        ("n_weeks", cfg.n_weeks.to_string()),
        ("n_categories", cfg.n_categories.to_string()),
        ("blocks_per_category", cfg.blocks_per_category.to_string()),
        ("etfs_per_block", cfg.etfs_per_block.to_string()),
        ("market_like", cfg.market_like.to_string()),
        ("mean_support", cfg.mean_support.to_string()),
        ("noise_sd", cfg.noise_sd.to_string()),
        ("alpha_sd", cfg.alpha_sd.to_string()),
        ("missing_rate", cfg.missing_rate.to_string()),
    ] {
        conf += &format!("{key} = {value}\n");
    }
    w.text("run.conf", &conf)?;
    Ok(w.written)
}

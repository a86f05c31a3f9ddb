//! `sparsefactor`: reduce, fit, test, backtest and simulate from the shell.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use commands::Failure;
use config::{RunConfig, KEYS};

fn cli() -> Command {
    let mut cmd = Command::new("sparsefactor")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Sparse multi-factor models with clustered ETF factors, LASSO selection and FDR-controlled tests")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .global(true)
                .value_name("FILE")
                .help("flat key = value configuration file"),
        );
    for (key, help) in KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(*key)
                .global(true)
                .value_name("VALUE")
                .overrides_with(*key)
                .help(*help),
        );
    }
    cmd.subcommand(Command::new("reduce").about("cluster the ETF universe and write the representatives"))
        .subcommand(Command::new("fit").about("fit every security and write models and significance matrices"))
        .subcommand(Command::new("test").about("intercept and goodness-of-fit studies with FDR adjustment"))
        .subcommand(Command::new("backtest").about("rolling zero-investment alpha portfolio"))
        .subcommand(Command::new("simulate").about("write a synthetic dataset with known ground truth"))
}

fn resolve(m: &ArgMatches) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(file) = m.get_one::<String>("config") {
        let path = PathBuf::from(file);
        if !path.is_file() {
            return Err(Failure::Usage(format!("config file not found: {}", path.display())));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text, Some(path.parent().unwrap_or(Path::new("."))))
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v, None)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(name: &str, m: &ArgMatches) -> Result<Vec<PathBuf>, Failure> {
    let cfg = resolve(m)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    match name {
        "reduce" => commands::reduce(&cfg),
        "fit" => commands::fit(&cfg),
        "test" => commands::test(&cfg),
        "backtest" => commands::backtest(&cfg),
        "simulate" => commands::simulate_dataset(&cfg),
        other => Err(Failure::Usage(format!("unknown command `{other}`"))),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    match run(name, sub) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

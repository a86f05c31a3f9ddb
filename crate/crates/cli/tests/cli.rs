use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sparsefactor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsefactor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Simulates a small dataset into `dir/data` and returns its run.conf path.
fn dataset(dir: &Path, extra: &[&str]) -> String {
    let data = dir.join("data");
    let mut args = vec![
        "simulate",
        "--output_dir",
        data.to_str().unwrap(),
        "--seed",
        "5",
        "--n_securities",
        "12",
        "--n_weeks",
        "160",
        "--n_categories",
        "4",
        "--etfs_per_block",
        "3",
        "--market_like",
        "2",
        "--mean_support",
        "3",
    ];
    args.extend_from_slice(extra);
    let o = sparsefactor(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    data.join("run.conf").to_str().unwrap().to_string()
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = sparsefactor(&["simulate", "--seed", "1", "--n_securities", "10", "--output_dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["securities.csv", "etfs.csv", "ff5.csv", "security_meta.csv", "factor_meta.csv", "ground_truth.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(json(&a.join("ground_truth.json"))["mean_support"], 4.0);
}

#[test]
fn missing_metadata_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dataset(dir.path(), &[]);
    let missing = dir.path().join("nowhere/factor_meta.csv");
    let o = sparsefactor(&["reduce", "-c", &conf, "--factor_meta", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "s_max = 20\nno_such_key = 1\n").unwrap();
    let o = sparsefactor(&["fit", "-c", conf.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"));
    assert_eq!(sparsefactor(&["fit", "--sig_level", "2"]).status.code(), Some(2));
    assert_eq!(sparsefactor(&["fit", "--start", "2020-02-01", "--end", "2020-01-01"]).status.code(), Some(2));
    assert_eq!(sparsefactor(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn malformed_input_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dataset(dir.path(), &[]);
    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "date,AAA\nnot-a-date,0.1\n").unwrap();
    let o = sparsefactor(&["reduce", "-c", &conf, "--securities", broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn reduce_writes_parseable_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dataset(dir.path(), &[]);
    let out = dir.path().join("out");
    let args = ["reduce", "-c", &conf, "--output_dir", out.to_str().unwrap()];
    assert!(sparsefactor(&args).status.success());
    let first = std::fs::read(out.join("reduced_universe.json")).unwrap();
    let dendro = std::fs::read(out.join("dendrograms.json")).unwrap();
    assert!(sparsefactor(&args).status.success());
    assert_eq!(first, std::fs::read(out.join("reduced_universe.json")).unwrap());
    assert_eq!(dendro, std::fs::read(out.join("dendrograms.json")).unwrap());
    let u = json(&out.join("reduced_universe.json"));
    assert!(!u["universe"].as_array().unwrap().is_empty());
    assert_eq!(u["p2"].as_u64().unwrap() as usize, u["universe"].as_array().unwrap().len());
    assert_eq!(u["config"]["s_max"], 20);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dataset(dir.path(), &[]);
    let out = dir.path().join("out");
    let o = sparsefactor(&["reduce", "-c", &conf, "--output_dir", out.to_str().unwrap(), "--pca_threshold", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&out.join("reduced_universe.json"))["config"]["pca_threshold"], 0.5);
}

#[test]
fn fit_models_and_g_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dataset(dir.path(), &["--n_securities", "5"]);
    let out = dir.path().join("fit");
    let o = sparsefactor(&["fit", "-c", &conf, "--output_dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&out.join("models.json"));
    let models = doc["models"].as_array().unwrap();
    assert_eq!(models.len(), 5);
    for m in models {
        let fin: BTreeSet<&str> = m["selected_final"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        assert!(m["significant"].as_array().unwrap().iter().all(|s| fin.contains(s.as_str().unwrap())));
    }
    let csv = std::fs::read_to_string(out.join("g_matrix.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for col in 1..rows[0].len() {
        let sum: f64 = rows.iter().map(|r| r[col].parse::<f64>().unwrap()).sum();
        assert!(sum == 0.0 || (sum - 100.0).abs() <= 0.1, "column {col} sums to {sum}");
    }
    let meta = json(&out.join("g_matrix.csv.meta.json"));
    assert_eq!(meta["artifact"], "g_matrix.csv");
    assert!(meta["config"].is_object());
}

#[test]
fn planted_factors_are_found() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dataset(dir.path(), &["--n_securities", "30", "--noise_sd", "0.01"]);
    let out = dir.path().join("fit");
    assert!(sparsefactor(&["fit", "-c", &conf, "--output_dir", out.to_str().unwrap()]).status.success());
    let truth = json(&dir.path().join("data/ground_truth.json"));
    let mut block_of = BTreeMap::new();
    for (b, blk) in truth["blocks"].as_array().unwrap().iter().enumerate() {
        for m in blk["members"].as_array().unwrap() {
            block_of.insert(m.as_str().unwrap().to_string(), b);
        }
    }
    let u = json(&out.join("reduced_universe.json"));
    let kept: BTreeSet<usize> = u["universe"].as_array().unwrap().iter().filter_map(|s| block_of.get(s.as_str().unwrap()).copied()).collect();
    let models = json(&out.join("models.json"));
    let (mut planted, mut found) = (0, 0);
    for m in models["models"].as_array().unwrap() {
        let sec = truth["securities"].as_array().unwrap().iter().find(|s| s["ticker"] == m["ticker"]).unwrap();
        let hit: BTreeSet<usize> = m["significant"].as_array().unwrap().iter().filter_map(|s| block_of.get(s.as_str().unwrap()).copied()).collect();
        for l in sec["etf_betas"].as_array().unwrap() {
            let b = block_of[l["factor"].as_str().unwrap()];
            if kept.contains(&b) {
                planted += 1;
                found += usize::from(hit.contains(&b));
            }
        }
    }
    assert!(planted > 0 && found as f64 >= 0.8 * planted as f64, "{found} of {planted}");
}

#[test]
fn thread_count_does_not_change_models() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dataset(dir.path(), &[]);
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}"));
        assert!(sparsefactor(&["fit", "-c", &conf, "--threads", threads, "--output_dir", out.to_str().unwrap()]).status.success());
        json(&out.join("models.json"))["models"].clone()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn test_and_backtest_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dataset(dir.path(), &["--n_securities", "20", "--alpha_sd", "0.002"]);
    let out = dir.path().join("out");
    let o = sparsefactor(&["test", "-c", &conf, "--output_dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["intercept_study.csv", "f_study.csv"] {
        let csv = std::fs::read_to_string(out.join(name)).unwrap();
        let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
        for col in 1..rows[0].len() {
            let sum: f64 = rows.iter().map(|r| r[col].parse::<f64>().unwrap()).sum();
            assert!((sum - 100.0).abs() <= 0.1, "{name} column {col}: {sum}");
        }
        assert!(out.join(format!("{name}.meta.json")).is_file());
    }
    assert!(json(&out.join("intercept_study.json"))["intercept_study"]["mfm"]["bhy_q"].is_array());

    let o = sparsefactor(&["backtest", "-c", &conf, "--output_dir", out.to_str().unwrap(), "--window", "130", "--out_of_sample", "30"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("ledger.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "week,long_count,short_count,long_return,short_return,net_change,cumulative");
    for line in lines {
        let f: Vec<f64> = line.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
        assert_eq!(f[2], f[0] - f[1]);
    }
    assert!(json(&out.join("ledger.json"))["summary"]["mean_t_stat"].is_number());
}

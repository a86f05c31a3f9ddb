use chrono::NaiveDate;
use ndarray::Array2;
use proptest::prelude::*;

use sparsefactor::panel::{align, excess_returns, filter_coverage, load_panel, PanelSchema, ReturnsPanel, RiskFreeSeries};

fn weeks(n: usize, offset: i64) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2020, 1, 3).unwrap();
    (0..n).map(|i| start + chrono::Duration::weeks(i as i64 + offset)).collect()
}

fn panel(n: usize, k: usize) -> impl Strategy<Value = ReturnsPanel> {
    proptest::collection::vec(prop_oneof![3 => -0.1..0.1f64, 1 => Just(f64::NAN)], n * k).prop_map(move |v| {
        let names = (0..k).map(|j| format!("A{j}")).collect();
        ReturnsPanel::from_values(weeks(n, 0), names, Array2::from_shape_vec((n, k), v).unwrap()).unwrap()
    })
}

proptest! {
    #[test]
    fn coverage_filter_is_idempotent(p in panel(9, 6), frac in 0.1..1.0f64) {
        let once = filter_coverage(&p, frac).unwrap();
        let twice = filter_coverage(&once, frac).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn excess_round_trip(p in panel(8, 4), rf in proptest::collection::vec(-0.01..0.01f64, 8)) {
        let fwd = RiskFreeSeries::new(weeks(8, 0), rf.clone()).unwrap();
        let back = RiskFreeSeries::new(weeks(8, 0), rf.iter().map(|v| -v).collect()).unwrap();
        let round = excess_returns(&excess_returns(&p, &fwd).unwrap(), &back).unwrap();
        prop_assert_eq!(round.mask(), p.mask());
        for ((a, b), m) in round.values().iter().zip(p.values().iter()).zip(p.mask().iter()) {
            if *m {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn align_ignores_panel_order(a in 3usize..12, b in 3usize..12, shift in 0i64..6) {
        let p = ReturnsPanel::from_values(weeks(a, 0), vec!["x".into()], Array2::zeros((a, 1))).unwrap();
        let q = ReturnsPanel::from_values(weeks(b, shift), vec!["y".into()], Array2::zeros((b, 1))).unwrap();
        match (align(&[p.clone(), q.clone()]), align(&[q, p])) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x[0].dates(), y[0].dates()),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "alignment disagrees on emptiness"),
        }
    }
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let v = Array2::from_shape_vec((3, 2), vec![0.01, f64::NAN, -0.02, 0.5, 0.125, -0.0625]).unwrap();
    let p = ReturnsPanel::from_values(weeks(3, 0), vec!["AAA".into(), "BBB".into()], v).unwrap();
    p.write_csv(&path).unwrap();
    let back = load_panel(&path, &PanelSchema::default()).unwrap();
    assert_eq!(back, p);
}

#[test]
fn missing_file_names_the_path() {
    let err = load_panel(std::path::Path::new("/nonexistent/returns.csv"), &PanelSchema::default()).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/returns.csv"));
}

use proptest::prelude::*;
use svo_harness::export::{line_plot, read_metrics, write_metrics, write_plot, Series, METRICS_COLUMNS};
use svo_harness::{metrics_table, parse_metrics_table, Estimate, Metrics, MetricsRow};

#[test]
fn empty_metrics_list_is_header_only() {
    let text = metrics_table(&[]);
    assert_eq!(text, format!("{}\n", METRICS_COLUMNS.join(",")));
    assert!(parse_metrics_table(&text).unwrap().is_empty());
}

fn estimate() -> impl Strategy<Value = Estimate> {
    (any::<f64>(), 0.0..1e6f64).prop_map(|(mean, se)| Estimate {
        mean: if mean.is_nan() { 0.0 } else { mean },
        se,
    })
}

fn row() -> impl Strategy<Value = MetricsRow> {
    (
        "[a-z=,\" 0-9.]{0,12}",
        prop::option::of(0.0..=1.0f64),
        0usize..10_000,
        prop::collection::vec(estimate(), 8),
        prop::option::of(estimate()),
    )
        .prop_map(|(label, svo, episodes, e, mde)| MetricsRow {
            label,
            svo,
            metrics: Metrics {
                episodes,
                success_rate: e[0],
                crash_rate: e[1],
                timeout_rate: e[2],
                collision_rate: e[3],
                off_zone_rate: e[4],
                off_path_rate: e[5],
                speed_score: e[6],
                mean_deviation_error: mde,
                mean_return: e[7],
            },
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_tables_round_trip_exactly(rows in prop::collection::vec(row(), 0..6)) {
        let text = metrics_table(&rows);
        let back = parse_metrics_table(&text).unwrap();
        prop_assert_eq!(back, rows);
    }
}

#[test]
fn metrics_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/metrics.csv");
    let rows = vec![MetricsRow {
        label: "svo=0.25".into(),
        svo: Some(0.25),
        metrics: Metrics {
            episodes: 200,
            success_rate: Estimate {
                mean: 81.3,
                se: 0.1 + 0.2,
            },
            mean_deviation_error: Some(Estimate {
                mean: 1.0 / 3.0,
                se: 1e-17,
            }),
            ..Metrics::default()
        },
    }];
    write_metrics(&path, &rows).unwrap();
    assert_eq!(read_metrics(&path).unwrap(), rows);
}

#[test]
fn malformed_tables_are_rejected() {
    let header = METRICS_COLUMNS.join(",");
    assert!(parse_metrics_table("a,b\n").is_err());
    assert!(parse_metrics_table(&format!("{header}\nx,,1\n")).is_err());
    let mut fields = vec!["x".to_string(), String::new(), "3".into()];
    fields.extend((0..18).map(|_| "nope".to_string()));
    assert!(parse_metrics_table(&format!("{header}\n{}\n", fields.join(","))).is_err());
}

#[test]
fn missing_metrics_file_reports_path() {
    let err = read_metrics(std::path::Path::new("/nonexistent/m.csv")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/m.csv"));
}

#[test]
fn tick_curve_plot_writes_one_file_per_scenario() {
    let dir = tempfile::tempdir().unwrap();
    for scenario in ["merge", "bottleneck"] {
        let curve: Vec<(f64, f64)> = (1..=130).map(|t| (t as f64, 0.3 / (1.0 + 0.05 * t as f64))).collect();
        let path = dir.path().join(format!("{scenario}_tick_error.svg"));
        write_plot(&path, scenario, "tick", "mde", &[Series::new(scenario, curve)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.trim_end().ends_with("</svg>"));
        assert_eq!(text.matches("<polyline").count(), 1);
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn plots_survive_degenerate_series() {
    let svg = line_plot(
        "a <b>",
        "x",
        "y",
        &[
            Series::new("empty", vec![]),
            Series::new("flat", vec![(0.0, 1.0), (1.0, 1.0)]),
            Series::new("nan", vec![(f64::NAN, 1.0)]),
        ],
    );
    assert!(svg.contains("a &lt;b&gt;"));
    assert!(!svg.contains("NaN"));
}

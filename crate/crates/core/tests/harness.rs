use std::collections::BTreeMap;

use conelab::harness::*;
use proptest::prelude::*;

fn cfg(json: &str) -> Result<Resolved, HarnessError> {
    ExperimentConfig::from_json(json)?.resolve()
}

fn row(eps: f64, t: f64, name: &str, label: &str, value: f64) -> MetricRow {
    MetricRow::new(eps, t, name, label, value)
}

fn rule<'a>(out: &'a [RuleOutcome], name: &str) -> &'a RuleOutcome {
    out.iter().find(|r| r.rule == name).unwrap_or_else(|| panic!("no rule {name}"))
}

#[test]
fn defaults_are_filled_in() {
    let r = cfg(r#"{"experiment": "rebound"}"#).unwrap();
    assert_eq!(r.eps, vec![1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0]);
    assert_eq!(r.grid, GridConfig { half_width: 8.0, n: 8192 });
    assert_eq!(r.dt_over_eps, DEFAULT_DT_OVER_EPS);
    assert_eq!(r.horizon, 1.0);
    assert_eq!(r.delta, 0.1);
    assert_eq!(r.thresholds["weight_tol"], 0.05);
    assert_eq!(r.thresholds["weight_tol_even"], 0.03);

    let c = cfg(r#"{"experiment": "crossing"}"#).unwrap();
    assert_eq!((c.eta, c.beta), (-0.5, 0.05));
    assert_eq!(c.grid.half_width, 4.0);
    let s = cfg(r#"{"experiment": "smooth_transport"}"#).unwrap();
    assert_eq!((s.eps.clone(), s.horizon), (vec![1.0 / 256.0], 2.0));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        r#"{"experiment": "rebound", "eps": [0.0]}"#,
        r#"{"experiment": "rebound", "eps": [1.5]}"#,
        r#"{"experiment": "rebound", "dt_over_eps": 2.0}"#,
        r#"{"experiment": "rebound", "horizon": -1}"#,
        r#"{"experiment": "rebound", "grid": {"half_width": 4, "n": 1000}}"#,
        r#"{"experiment": "rebound", "scheme": {"delta": 1.0}}"#,
        r#"{"experiment": "crossing", "scheme": {"beta": 0.2}}"#,
        r#"{"experiment": "crossing", "scheme": {"eta": 0.0}}"#,
        r#"{"experiment": "static_cone", "thresholds": {"weight_tol": 0.1}}"#,
        r#"{"experiment": "rebound", "potential": {"V_S": "0", "F": "1", "g": ["x1", "x2"], "d": 2}}"#,
        r#"{"experiment": "rebound", "potential": {"V_S": "0", "F": "1", "g": ["x1 +"], "d": 1}}"#,
    ];
    for text in bad {
        assert!(matches!(cfg(text), Err(HarnessError::Config(_))), "{text}");
    }
    assert!(ExperimentConfig::from_json(r#"{"experiment": "rebound", "colour": 1}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"experiment": "bounce"}"#).is_err());
    // Classification accepts any dimension.
    cfg(r#"{"experiment": "classify_suite", "potential": {"V_S": "0", "F": "1", "g": ["x1", "x2"], "d": 2}}"#).unwrap();
}

#[test]
fn thresholds_can_be_overridden() {
    let r = cfg(r#"{"experiment": "static_cone", "thresholds": {"nu_tol": 1e-3}}"#).unwrap();
    assert_eq!(r.thresholds["nu_tol"], 1e-3);
    assert_eq!(r.thresholds["parity_tol"], 1e-8);
}

#[test]
fn hash_is_stable_and_sensitive() {
    let a = cfg(r#"{"experiment": "crossing"}"#).unwrap();
    let b = cfg(r#"{"experiment": "crossing", "scheme": {"eta": -0.5, "beta": 0.05}}"#).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
    let c = cfg(r#"{"experiment": "crossing", "scheme": {"eta": -0.25}}"#).unwrap();
    assert_ne!(a.hash(), c.hash());
    // Output location does not change what is computed.
    let d = cfg(r#"{"experiment": "crossing", "output_dir": "/tmp/elsewhere"}"#).unwrap();
    assert_eq!(a.hash(), d.hash());
}

#[test]
fn relative_paths_follow_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("pots")).unwrap();
    std::fs::write(dir.path().join("pots/cone.json"), r#"{"V_S": "0", "F": "-1", "g": ["x1"], "d": 1}"#).unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"experiment": "static_cone", "potential": "pots/cone.json", "output_dir": "out"}"#).unwrap();
    let c = ExperimentConfig::load(&path).unwrap();
    assert_eq!(c.output_dir.as_deref(), Some(dir.path().join("out").as_path()));
    let r = c.resolve().unwrap();
    assert_eq!(r.potential.unwrap().f, "-1");

    std::fs::write(&path, r#"{"experiment": "static_cone", "potential": "missing.json"}"#).unwrap();
    assert!(matches!(ExperimentConfig::load(&path).unwrap().resolve(), Err(HarnessError::Io(_))));
}

#[test]
fn metrics_csv_round_trip() {
    let rows = vec![
        row(1.0 / 256.0, 0.1, "packet_error", "quartic", 1.234e-5),
        row(0.0, 0.0, "golden_error", "example_1", 0.0),
        row(0.5, -0.75, "track_dev", "fixed", f64::INFINITY),
    ];
    let text = metrics_to_csv(&rows);
    assert!(text.starts_with("eps,t,name,label,value\n"));
    assert_eq!(metrics_from_csv(&text).unwrap(), rows);
    assert!(metrics_from_csv("eps,t,name,label,value\nx,0,a,b,1\n").is_err());
}

#[test]
fn slope_of_a_power_law() {
    let s: Vec<(f64, f64)> = [1.0_f64 / 64.0, 1.0 / 128.0, 1.0 / 256.0].iter().map(|&e| (e, 3.0 * e.powf(0.5))).collect();
    assert!((loglog_slope(&s) - 0.5).abs() < 1e-12);
}

fn thresholds(id: ExperimentId) -> BTreeMap<String, f64> {
    id.default_thresholds()
}

#[test]
fn convergence_rules_from_synthetic_rows() {
    let id = ExperimentId::PacketConvergence;
    let mut rows = Vec::new();
    for (k, e) in [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0].into_iter().enumerate() {
        for t in [0.5, 1.0] {
            rows.push(row(e, t, "packet_error", "quartic", t * e.powf(0.7)));
            rows.push(row(e, t, "packet_error", "quadratic", 2e-6));
            rows.push(row(e, t, "self_convergence", "quadratic", 1e-6));
            rows.push(row(e, t, "packet_error", "right_parabola", 0.5 - 0.1 * k as f64));
        }
    }
    let out = evaluate(id, &rows, &thresholds(id));
    let slope = rule(&out, "slope[quartic]");
    assert!((slope.value - 0.7).abs() < 1e-12);
    assert!(!slope.passed);
    assert!(rule(&out, "floor[quadratic]").passed);
    assert!(rule(&out, "decreasing[right_parabola]").passed);

    let flat: Vec<MetricRow> = rows
        .iter()
        .map(|r| if r.label == "right_parabola" { row(r.eps, r.t, &r.name, &r.label, 0.3) } else { r.clone() })
        .collect();
    assert!(!rule(&evaluate(id, &flat, &thresholds(id)), "decreasing[right_parabola]").passed);
}

#[test]
fn missing_metrics_fail() {
    for id in ExperimentId::ALL {
        let out = evaluate(id, &[], &thresholds(id));
        assert!(out.iter().any(|r| !r.passed), "{id}");
    }
}

#[test]
fn rebound_rules_from_synthetic_rows() {
    let id = ExperimentId::Rebound;
    let eps = 1.0 / 256.0;
    let only_dx = [row(eps, 0.0, "dx", "", 1e-3)];
    assert!(evaluate(id, &only_dx, &thresholds(id)).iter().any(|r| !r.passed));
    let mut rows = vec![row(eps, 0.0, "dx", "", 1e-3), row(1.0 / 64.0, 0.0, "dx", "", 1e-3)];
    for (e, err) in [(1.0 / 64.0, 0.2), (eps, 0.1)] {
        rows.push(row(e, 0.5, "piece_error_plus", "even", err));
        rows.push(row(e, 0.5, "piece_error_minus", "even", err / 2.0));
    }
    rows.extend([
        row(eps, 0.0, "expected_plus", "even", 0.5),
        row(eps, 0.0, "expected_minus", "even", 0.5),
        row(eps, 1.0, "p_plus", "even", 0.52),
        row(eps, 1.0, "p_minus", "even", 0.48),
        row(eps, 1.0, "p_plus_wigner", "even", 0.51),
        row(eps, 0.5, "track_dev_plus", "even", 0.1),
        row(eps, 0.5, "track_dev_minus", "even", 0.4),
    ]);
    let out = evaluate(id, &rows, &thresholds(id));
    assert!(rule(&out, "weights[even]").passed);
    assert!((rule(&out, "weights[even]").value - 0.02).abs() < 1e-12);
    assert!(rule(&out, "wigner_weight[even]").passed);
    // 5 sqrt(1/256) + dx = 0.3135
    let tracks = rule(&out, "tracks[even]");
    assert!(!tracks.passed && (tracks.threshold - 0.3135).abs() < 1e-12);
    assert!(rule(&out, "error_decreases[even]").passed);
}

#[test]
fn static_cone_rules_from_synthetic_rows() {
    let id = ExperimentId::StaticCone;
    let mut rows = Vec::new();
    for (e, keep) in [(1.0 / 64.0, 0.90), (1.0 / 128.0, 0.92), (1.0 / 256.0, 0.95)] {
        rows.extend([
            row(e, 1.0, "mean_x", "", 1e-12),
            row(e, 1.0, "mean_xi", "", -1e-12),
            row(e, 1.0, "nu_plus", "", 0.3),
            row(e, 1.0, "nu_minus", "", 0.3),
            row(e, 0.0, "retention", "", 0.5),
            row(e, 1.0, "retention", "", keep),
        ]);
    }
    let out = evaluate(id, &rows, &thresholds(id));
    assert!(out.iter().all(|r| r.passed), "{out:?}");
    rows.push(row(1.0 / 512.0, 1.0, "retention", "", 0.94));
    assert!(!rule(&evaluate(id, &rows, &thresholds(id)), "retention").passed);
}

#[test]
fn classification_run_persists_and_reports() {
    let rec = run(&ExperimentConfig::new(ExperimentId::ClassifySuite)).unwrap();
    assert!(rec.passed, "{:?}", rec.rules);
    assert!(rec.events.iter().any(|e| e.kind == "adjudication"));
    let dir = tempfile::tempdir().unwrap();
    rec.write(dir.path()).unwrap();
    for f in [METRICS_FILE, EVENTS_FILE, RECORD_FILE] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let back = ResultRecord::read(dir.path()).unwrap();
    assert_eq!(back.metrics, rec.metrics);
    assert_eq!(back.rules, rec.rules);
    let rep = report(dir.path()).unwrap();
    assert!(rep.consistent && rep.passed);
    assert_eq!(rep.config_hash, rec.config_hash);

    // A tampered metric is caught on re-evaluation.
    let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let tampered = text.replacen("golden_error,example_1,0.0", "golden_error,example_1,0.5", 1);
    assert_ne!(text, tampered);
    std::fs::write(dir.path().join(METRICS_FILE), tampered).unwrap();
    let rep = report(dir.path()).unwrap();
    assert!(!rep.consistent && !rep.passed);
}

#[test]
fn metric_tables_are_deterministic() {
    let mut c = ExperimentConfig::new(ExperimentId::StaticCone);
    c.eps = vec![1.0 / 64.0];
    c.grid = Some(GridConfig { half_width: 4.0, n: 1024 });
    let a = run(&c).unwrap();
    let b = run(&c).unwrap();
    assert_eq!(metrics_to_csv(&a.metrics), metrics_to_csv(&b.metrics));
    assert_eq!(a.config_hash, b.config_hash);
    assert!(rule(&a.rules, "parity").passed && rule(&a.rules, "nu_split").passed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_any_row(eps in 0.0f64..1.0, t in -5.0f64..5.0, value in proptest::num::f64::NORMAL | proptest::num::f64::ZERO,
                              name in "[a-z_]{1,12}", label in "[a-z0-9_\\[\\], ]{0,12}") {
        let rows = vec![row(eps, t, &name, &label, value)];
        prop_assert_eq!(metrics_from_csv(&metrics_to_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn slope_recovers_exponents(p in 0.05f64..2.0, c in 1e-3f64..1e3) {
        let s: Vec<(f64, f64)> = [1.0_f64 / 64.0, 1.0 / 128.0, 1.0 / 256.0, 1.0 / 512.0].iter().map(|&e| (e, c * e.powf(p))).collect();
        prop_assert!((loglog_slope(&s) - p).abs() < 1e-9);
    }

    #[test]
    fn rules_depend_only_on_rows(scale in 0.1f64..10.0) {
        // Any positive rescaling of every error leaves the slope unchanged.
        let id = ExperimentId::PacketConvergence;
        let rows: Vec<MetricRow> = [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0]
            .iter()
            .map(|&e| row(e, 1.0, "packet_error", "quartic", scale * e.sqrt()))
            .collect();
        let out = evaluate(id, &rows, &thresholds(id));
        prop_assert!((rule(&out, "slope[quartic]").value - 0.5).abs() < 1e-9);
        prop_assert!(rule(&out, "slope[quartic]").passed);
    }
}

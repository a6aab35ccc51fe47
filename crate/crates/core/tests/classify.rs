use conelab::catalog::{abs_cone, singular_examples};
use conelab::classify::*;
use conelab::linalg::Mat;
use conelab::potential::SingularGeometry;
use conelab::ConicalPotential;
use num_rational::Ratio;
use proptest::prelude::*;

type Q = Ratio<i64>;

fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

fn report(i: usize) -> ClassificationReport<f64> {
    let ex = &singular_examples()[i];
    classify_point(&ex.potential, &ex.sigma).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn assert_residuals(r: &ClassificationReport<f64>) {
    for root in r.roots.nonzero_roots.iter().chain(r.roots.root_manifold_samples.iter().flatten()) {
        let res = r.geometry.branch_residual(root);
        assert!(res <= 1e-10, "residual {res} at {root:?}");
    }
    for w in &r.roots.zero_root_directions {
        assert!(r.geometry.zero_root_residual(w) <= 1e-10);
    }
}

fn weights(r: &ClassificationReport<f64>) -> (f64, f64) {
    let nu = solve_nu_p1(&r.geometry, 1.0).unwrap();
    (nu.weight(&[1.0]), nu.weight(&[-1.0]))
}

// Exact oracles for the 1-D examples: r = -a - f sign(r) with a = V_S', f = F(0).
#[test]
fn exact_scalar_roots() {
    let cases: [(Q, Q, Vec<Q>, Vec<i8>); 5] = [
        (q(1, 2), q(1, 1), vec![], vec![]),
        (q(1, 2), q(-1, 1), vec![q(1, 2), q(-3, 2)], vec![]),
        (q(1, 1), q(1, 1), vec![], vec![-1]),
        (q(1, 1), q(-1, 1), vec![q(-2, 1)], vec![1]),
        (q(2, 1), q(1, 1), vec![q(-1, 1)], vec![]),
    ];
    for (i, (a, f, roots, zeros)) in cases.into_iter().enumerate() {
        let exact = branch_roots_scalar(a, f);
        assert_eq!(exact.nonzero, roots, "example {}", i + 1);
        assert_eq!(exact.zero_directions, zeros, "example {}", i + 1);
        let r = report(i);
        let float: Vec<f64> = r.roots.nonzero_roots.iter().map(|v| v[0]).collect();
        let want: Vec<f64> = roots.iter().map(|v| *v.numer() as f64 / *v.denom() as f64).collect();
        assert!(close(&float, &want, 1e-12), "{float:?} vs {want:?}");
    }
}

#[test]
fn example_1() {
    let r = report(0);
    assert_eq!(r.regime, Regime::Supercritical);
    assert_eq!(r.label, Label::NoContact);
    assert!(r.roots.is_empty());
    assert!(r.nu_feasible);
    let d = r.mean_direction.as_ref().unwrap();
    assert!(d.is_feasible() && close(d.vector(), &[-0.5], 1e-12));
    let (plus, minus) = weights(&r);
    assert!((plus - 0.25).abs() < 1e-12 && (minus - 0.75).abs() < 1e-12);
    // D is the mean of the atoms.
    assert!((plus - minus - d.vector()[0]).abs() < 1e-12);
}

#[test]
fn example_2() {
    let r = report(1);
    assert_eq!(r.label, Label::BranchesExist);
    assert!(close(&r.roots.nonzero_roots.concat(), &[0.5, -1.5], 1e-12));
    assert_residuals(&r);
    let (plus, minus) = weights(&r);
    assert!((plus - 0.75).abs() < 1e-12 && (minus - 0.25).abs() < 1e-12);
    assert!(close(r.mean_direction.unwrap().vector(), &[0.5], 1e-12));
}

#[test]
fn example_3() {
    let r = report(2);
    assert_eq!(r.regime, Regime::Critical);
    assert_eq!(r.label, Label::ZeroRootsOnly);
    assert!(r.roots.nonzero_roots.is_empty());
    assert_eq!(r.roots.zero_root_directions, vec![vec![-1.0]]);
    assert_residuals(&r);
}

#[test]
fn example_4() {
    let r = report(3);
    assert_eq!(r.regime, Regime::Critical);
    assert_eq!(r.label, Label::MixedRoots);
    assert!(close(&r.roots.nonzero_roots.concat(), &[-2.0], 1e-12));
    assert_eq!(r.roots.zero_root_directions, vec![vec![1.0]]);
    assert_residuals(&r);
}

#[test]
fn example_5() {
    let r = report(4);
    assert_eq!(r.regime, Regime::Subcritical);
    assert_eq!(r.label, Label::BranchesExist);
    assert!(!r.nu_feasible);
    assert!(close(&r.roots.nonzero_roots.concat(), &[-1.0], 1e-12));
    assert_residuals(&r);
    let d = r.mean_direction.as_ref().unwrap();
    assert!(!d.is_feasible() && close(d.vector(), &[-2.0], 1e-12));
    assert_eq!(solve_nu_p1(&r.geometry, 1.0).unwrap().total_mass, 0.0);
    assert!(r.notes.iter().any(|n| n.contains("exactly one trajectory")));
}

#[test]
fn example_6() {
    let r = report(5);
    assert_eq!(r.regime, Regime::Subcritical);
    assert!(close(&r.roots.nonzero_roots.concat(), &[2.5, 0.0, 0.0], 1e-12));
    assert!(r.roots.root_manifold_samples.is_none());
    assert_residuals(&r);
}

#[test]
fn example_7() {
    let r = report(6);
    assert_eq!(r.regime, Regime::Subcritical);
    assert!(close(&r.roots.nonzero_roots.concat(), &[7.0 / 3.0, 0.0, 0.0], 1e-12));
    let m = r.roots.root_manifold_samples.as_ref().expect("root circle");
    assert!(m.len() >= 8);
    for s in m {
        assert!((s[0] - 2.25).abs() < 1e-12);
        assert!((s[1] * s[1] + s[2] * s[2] - 7.0 / 16.0).abs() < 1e-12);
    }
    assert_residuals(&r);
}

#[test]
fn abs_cone_is_symmetric() {
    let r = classify_point(&abs_cone(), &[0.0]).unwrap();
    assert_eq!(r.regime, Regime::Supercritical);
    assert_eq!(r.label, Label::NoContact);
    assert!(close(r.mean_direction.unwrap().vector(), &[0.0], 0.0));
    let (plus, minus) = weights(&classify_point(&abs_cone(), &[0.0]).unwrap());
    assert_eq!((plus, minus), (0.5, 0.5));
}

#[test]
fn zero_shape_reports_no_mean_direction() {
    let pot = ConicalPotential::parse("x1", "0", &["x1"], 1).unwrap();
    let geom = pot.geometry(&[0.0]).unwrap();
    assert_eq!(mean_direction(&geom), Err(ClassifyError::ZeroShapeOperator));
    assert_eq!(solve_nu_p1(&geom, 1.0).unwrap().total_mass, 0.0);
    assert!(!classify_geometry(geom).nu_feasible);
    let p3 = &singular_examples()[5];
    assert_eq!(
        solve_nu_p1(&p3.potential.geometry(&p3.sigma).unwrap(), 1.0),
        Err(ClassifyError::DimensionMismatch(3))
    );
}

#[test]
fn sampled_route_agrees_on_examples() {
    // The fixed-point route finds attracting roots only; each must be a secular root.
    for (i, ex) in singular_examples().iter().enumerate() {
        let r = classify_point(&ex.potential, &ex.sigma).unwrap();
        let all: Vec<Vec<f64>> =
            r.roots.nonzero_roots.iter().chain(r.roots.root_manifold_samples.iter().flatten()).cloned().collect();
        for s in branch_roots_sampled(&r.geometry, SPHERE_SAMPLES) {
            let on_circle = i == 6 && (s[0] - 2.25).abs() < 1e-9 && (s[1] * s[1] + s[2] * s[2] - 7.0 / 16.0).abs() < 1e-9;
            assert!(on_circle || all.iter().any(|a| close(a, &s, 1e-8)), "{}: stray {s:?}", ex.name);
        }
    }
}

#[test]
fn sweep_covers_the_singular_set() {
    let pot = ConicalPotential::parse("x1/2 + x2", "1", &["x1"], 2).unwrap();
    let reports = classify_sweep(&pot, 1.0, 5);
    assert_eq!(reports.len(), 5);
    for r in reports {
        let r = r.unwrap();
        assert_eq!(r.geometry.sigma[0], 0.0);
        assert_eq!(r.label, Label::NoContact);
    }
}

fn linear_geometry(a: &[f64], f: f64, rows: &[Vec<f64>]) -> SingularGeometry<f64> {
    let d = a.len();
    SingularGeometry::build(vec![0.0; d], Mat::from_rows(rows), a.to_vec(), f).unwrap()
}

fn scaled_1d(a: f64, f: f64, lambda: f64) -> (ClassificationReport<f64>, ClassificationReport<f64>) {
    let base = classify_geometry(linear_geometry(&[a], f, &[vec![1.0]]));
    let scaled = classify_geometry(linear_geometry(&[lambda * a], lambda * f, &[vec![1.0]]));
    (base, scaled)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn subcritical_forbids_mass(a in -3.0f64..3.0, f in -3.0f64..3.0) {
        prop_assume!(f.abs() > 1e-3);
        let r = classify_geometry(linear_geometry(&[a], f, &[vec![1.0]]));
        if r.regime == Regime::Subcritical {
            prop_assert_eq!(solve_nu_p1(&r.geometry, 1.0).unwrap().total_mass, 0.0);
            prop_assert!(!r.mean_direction.as_ref().unwrap().is_feasible());
        }
    }

    #[test]
    fn scaling_covariance(a in -3.0f64..3.0, f in -3.0f64..3.0, lambda in 0.1f64..10.0) {
        prop_assume!(f.abs() > 1e-3);
        let (base, scaled) = scaled_1d(a, f, lambda);
        prop_assert_eq!(base.roots.nonzero_roots.len(), scaled.roots.nonzero_roots.len());
        for (r, s) in base.roots.nonzero_roots.iter().zip(&scaled.roots.nonzero_roots) {
            prop_assert!((lambda * r[0] - s[0]).abs() <= 1e-9 * lambda.max(1.0) * (1.0 + r[0].abs()));
        }
        prop_assert_eq!(&base.roots.zero_root_directions, &scaled.roots.zero_root_directions);
        if base.regime != Regime::Subcritical && scaled.regime != Regime::Subcritical {
            let (bp, bm) = weights(&base);
            let (sp, sm) = weights(&scaled);
            prop_assert!((bp - sp).abs() < 1e-9 && (bm - sm).abs() < 1e-9);
        }
    }

    #[test]
    fn float_path_matches_rationals(an in -20i64..20, fnum in -20i64..20, den in 1i64..8) {
        prop_assume!(fnum != 0);
        let (a, f) = (q(an, den), q(fnum, den));
        let exact = branch_roots_scalar(a, f);
        let r = classify_geometry(linear_geometry(&[an as f64 / den as f64], fnum as f64 / den as f64, &[vec![1.0]]));
        let mut float: Vec<f64> = r.roots.nonzero_roots.iter().map(|v| v[0]).collect();
        let mut want: Vec<f64> = exact.nonzero.iter().map(|v| *v.numer() as f64 / *v.denom() as f64).collect();
        float.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        prop_assert!(close(&float, &want, 1e-12), "{:?} vs {:?}", float, want);
        let dirs: Vec<f64> = r.roots.zero_root_directions.iter().map(|v| v[0]).collect();
        let want_dirs: Vec<f64> = exact.zero_directions.iter().map(|&s| s as f64).collect();
        prop_assert_eq!(dirs, want_dirs);
    }

    #[test]
    fn secular_roots_satisfy_branch_equation(
        a in prop::collection::vec(-3.0f64..3.0, 3),
        f in -3.0f64..3.0,
        m in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        prop_assume!(f.abs() > 0.1);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| m[3 * i + j] + if i == j { 1.5 } else { 0.0 }).collect())
            .collect();
        let geom = linear_geometry(&a, f, &rows);
        let roots = solve_branch_equation(&geom);
        for r in roots.nonzero_roots.iter().chain(roots.root_manifold_samples.iter().flatten()) {
            prop_assert!(geom.branch_residual(r) <= 1e-10, "residual {}", geom.branch_residual(r));
        }
        // Every attracting root the fixed-point route finds is among the secular ones.
        for s in branch_roots_sampled(&geom, 64) {
            prop_assert!(roots.nonzero_roots.iter().any(|r| close(r, &s, 1e-6)), "stray {:?}", s);
        }
    }
}

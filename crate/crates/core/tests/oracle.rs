use conelab::catalog::singular_examples;
use conelab::oracle::{adjudicate, RECOVERY_TOL};

#[test]
fn every_example_is_consistent_with_its_flow() {
    for ex in singular_examples() {
        let a = adjudicate(ex.name, &ex.potential, &ex.sigma).unwrap();
        assert!(a.consistent, "{}: {:?}", ex.name, a.branches);
        assert!(a.max_residual <= 1e-10);
        for arr in &a.arrivals {
            assert!(arr.nearest_rel <= RECOVERY_TOL);
        }
    }
}

#[test]
fn disputed_roots_are_realised() {
    let ex = singular_examples();
    let five = adjudicate(ex[4].name, &ex[4].potential, &ex[4].sigma).unwrap();
    assert_eq!(five.roots(), &[vec![-1.0]]);
    assert!(!five.arrivals.is_empty());
    let six = adjudicate(ex[5].name, &ex[5].potential, &ex[5].sigma).unwrap();
    assert_eq!(six.roots().len(), 1);
    assert!((six.roots()[0][0] - 2.5).abs() < 1e-12);
    assert_eq!(six.shots, 65);
    assert!(six.branches[0].rel_error < 1e-6);
}

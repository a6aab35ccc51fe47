//! Reference potentials used by the classification suite and the experiments.

use crate::potential::ConicalPotential;

#[derive(Clone, Debug)]
pub struct NamedPotential {
    pub name: &'static str,
    pub potential: ConicalPotential,
    pub sigma: Vec<f64>,
}

fn named(name: &'static str, v_s: &str, f: &str, g: &[&str]) -> NamedPotential {
    let d = g.len().max(if g.len() == 1 { 1 } else { 3 });
    let potential = ConicalPotential::parse(v_s, f, g, d).expect("catalog potential parses");
    NamedPotential { name, potential, sigma: vec![0.0; d] }
}

/// The seven singular-point examples, in order.
pub fn singular_examples() -> Vec<NamedPotential> {
    vec![
        named("example_1", "x1/2", "1", &["x1"]),
        named("example_2", "x1/2", "-1", &["x1"]),
        named("example_3", "x1", "1", &["x1"]),
        named("example_4", "x1", "-(1 + x1)", &["x1"]),
        named("example_5", "2*x1", "1", &["x1"]),
        named("example_6", "-2*x1", "-1", &["x1/2", "x2", "x3"]),
        named("example_7", "-2*x1", "-1", &["x1/3", "x2", "x3"]),
    ]
}

pub fn abs_cone() -> ConicalPotential {
    ConicalPotential::cone_1d(1.0)
}

pub fn inverted_cone() -> ConicalPotential {
    ConicalPotential::cone_1d(-1.0)
}

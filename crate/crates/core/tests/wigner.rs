use conelab::catalog::abs_cone;
use conelab::quantum::{init_concentrated_state, observables, propagate, GridSpec, Profile, WaveFunction};
use conelab::wavepacket::{assemble_packet, PacketState};
use conelab::wigner::*;
use conelab::ConicalPotential;
use num_complex::Complex;
use proptest::prelude::*;
use std::f64::consts::PI;

type Psi = WaveFunction<f64>;

fn gaussian_state(grid: GridSpec, eps: f64, x0: f64, xi0: f64) -> Psi {
    init_concentrated_state(grid, eps, &Profile::Gaussian { center: 0.0, width: 1.0 }, &[x0], &[xi0]).unwrap()
}

#[test]
fn gaussian_matches_closed_form() {
    let eps = 1.0 / 64.0;
    let psi = gaussian_state(GridSpec::line(4.0, 1024).unwrap(), eps, 0.3, 0.5);
    let w = wigner_transform(&psi, 1).unwrap();
    // exp(-y^2/2) profile: W = (pi eps)^{-1} exp(-(x-x0)^2/eps - (xi-xi0)^2/eps).
    let top = 1.0 / (PI * eps);
    let mut worst = 0.0_f64;
    for (i, x) in w.x.iter().enumerate() {
        for (k, xi) in w.xi.iter().enumerate() {
            let exact = top * (-((x - 0.3).powi(2) + (xi - 0.5).powi(2)) / eps).exp();
            worst = worst.max((w.at(i, k) - exact).abs());
        }
    }
    assert!(worst / top <= 1e-6, "{}", worst / top);
}

#[test]
fn marginals_on_a_subsampled_grid() {
    let eps = 1.0 / 256.0;
    let grid = GridSpec::line(4.0, 8192).unwrap();
    let psi: Psi = init_concentrated_state(grid, eps, &Profile::split(0.5, 3.0, 0.7), &[0.2], &[-0.4]).unwrap();
    let w = wigner_transform(&psi, DEFAULT_SUBSAMPLE).unwrap();
    // The coarse Riemann sum of a narrow bump is not 1e-6 accurate; the smooth Gaussian is.
    let smooth = wigner_transform(&gaussian_state(grid, eps, 0.2, -0.4), DEFAULT_SUBSAMPLE).unwrap();
    assert_eq!(w.x.len(), 512);
    let rho = psi.density();
    for (i, m) in w.x_marginal().iter().enumerate() {
        let exact = rho[i * DEFAULT_SUBSAMPLE];
        assert!((m - exact).abs() <= 1e-6 * exact.max(1e-3), "{m} {exact}");
    }
    assert!((smooth.total() - 1.0).abs() <= 1e-6, "{}", smooth.total());
}

#[test]
fn momentum_marginal_is_the_fourier_density() {
    let eps = 1.0 / 32.0;
    let grid = GridSpec::line(4.0, 256).unwrap();
    let psi = gaussian_state(grid, eps, -0.5, 0.8);
    let w = wigner_transform(&psi, 1).unwrap();
    let marg = w.xi_marginal();
    let axis = grid.axis();
    let n = grid.n;
    // |Psi^(xi)|^2 = (2 pi eps)^{-1} |int Psi e^{-i x xi/eps} dx|^2 at xi on the even sub-grid.
    for k in (0..n).step_by(2) {
        let xi = w.xi[k];
        let amp: Complex<f64> = axis
            .iter()
            .zip(&psi.values)
            .map(|(x, c)| c * Complex::from_polar(1.0, -x * xi / eps))
            .sum::<Complex<f64>>()
            * grid.dx();
        let exact = amp.norm_sqr() / (2.0 * PI * eps);
        assert!((marg[k] - exact).abs() <= 1e-6 * (1.0 / (2.0 * PI * eps)).max(exact), "{k}: {} {exact}", marg[k]);
    }
}

#[test]
fn even_state_has_symmetric_wigner_function() {
    let eps = 1.0 / 64.0;
    let grid = GridSpec::line(4.0, 512).unwrap();
    let psi: Psi = init_concentrated_state(grid, eps, &Profile::Bump { lo: -3.0, hi: 3.0 }, &[0.0], &[0.0]).unwrap();
    let w = wigner_transform(&psi, 1).unwrap();
    let n = grid.n;
    for j in (1..n).step_by(7) {
        for k in (1..n).step_by(5) {
            assert!((w.at(j, k) - w.at(n - j, n - k)).abs() <= 1e-9);
        }
    }
}

#[test]
fn pairing_with_simple_symbols() {
    let eps = 1.0 / 128.0;
    let grid = GridSpec::line(4.0, 4096).unwrap();
    let psi = gaussian_state(grid, eps, 0.7, -0.3);
    assert!((pair_observable(&psi, |_, _| 1.0).unwrap() - 1.0).abs() <= 1e-6);
    let mean = pair_observable(&psi, |x, _| x).unwrap();
    assert!((mean - observables(&psi).position[0]).abs() <= 1e-6);
}

#[test]
fn assembled_packet_peaks_at_its_centre() {
    let eps = 1.0 / 256.0;
    let grid = GridSpec::line(4.0, 8192).unwrap();
    let state = PacketState { t: 0.4, x: vec![-0.6], xi: vec![1.1], s: 0.37 };
    let psi: Psi = assemble_packet(&Profile::Bump { lo: -3.0, hi: 3.0 }, &state, eps, grid).unwrap();
    let rec = peak_track(&[psi]).unwrap().remove(0);
    let w = wigner_transform(&gaussian_state(grid, eps, 0.0, 0.0), DEFAULT_SUBSAMPLE).unwrap();
    assert!((rec.peak.x_grid + 0.6).abs() <= w.dx() && (rec.peak.xi_grid - 1.1).abs() <= w.dxi());
    assert!((rec.peak.x + 0.6).abs() <= 1e-3 && (rec.peak.xi - 1.1).abs() <= 1e-3);
    assert!(!rec.multi_peak && rec.peak.mass > 0.99);
}

#[test]
fn coherent_state_peak_follows_the_orbit() {
    let eps = 1.0 / 256.0;
    let grid = GridSpec::line(4.0, 4096).unwrap();
    let pot = ConicalPotential::parse("x1^2/2", "0", &["x1"], 1).unwrap();
    let mut psi = gaussian_state(grid, eps, 1.0, 0.0);
    let times = [0.5, 1.0, 2.0, 3.0];
    let snaps = propagate(&mut psi, &pot, 3.0, eps / 10.0, &times).unwrap();
    let tol = 5.0 * eps.sqrt() + grid.dx();
    for r in peak_track(&snaps).unwrap() {
        assert!((r.peak.x - r.t.cos()).abs() <= tol && (r.peak.xi + r.t.sin()).abs() <= tol, "{r:?}");
        assert!((r.peak.x_grid - r.t.cos()).abs() <= tol);
    }
}

#[test]
fn two_packets_are_flagged_and_fringes_ignored() {
    let eps = 1.0 / 256.0;
    let grid = GridSpec::line(4.0, 8192).unwrap();
    let a = gaussian_state(grid, eps, 0.5, 1.0);
    let b = gaussian_state(grid, eps, -0.5, -1.0);
    let mut cat = a.clone();
    for (c, (u, v)) in cat.values.iter_mut().zip(a.values.iter().zip(&b.values)) {
        *c = (u * 0.6_f64.sqrt()) + (v * 0.4_f64.sqrt());
    }
    cat.normalize();
    let r = peak_track(&[cat.clone()]).unwrap().remove(0);
    assert!(r.multi_peak);
    assert!((r.peak.x - 0.5).abs() < 0.05 && (r.peak.xi - 1.0).abs() < 0.05, "{r:?}");
    let s = r.second.unwrap();
    assert!((s.x + 0.5).abs() < 0.05 && (s.xi + 1.0).abs() < 0.05, "{s:?}");
    assert!((r.peak.mass - 0.6).abs() < 0.01 && (s.mass - 0.4).abs() < 0.01, "{r:?}");
    assert_eq!(peak_track(&[cat, gaussian_state(GridSpec::line(4.0, 4096).unwrap(), eps, 0.0, 0.0)]).unwrap_err(), WignerError::Mismatch);
}

fn cone() -> ConicalPotential {
    abs_cone()
}

#[test]
fn zone_masses_far_state_is_outer() {
    let eps = 1.0 / 256.0;
    let grid = GridSpec::line(4.0, 4096).unwrap();
    let psi: Psi = init_concentrated_state(grid, eps, &Profile::Bump { lo: -2.0, hi: 2.0 }, &[1.0], &[0.0]).unwrap();
    let z = zone_masses(&psi, &cone(), 4.0, 0.2).unwrap();
    assert!(z.inner.abs() <= 1e-9 && z.middle.abs() <= 1e-9 && (z.outer - 1.0).abs() <= 1e-9);
    assert_eq!(
        zone_masses(&psi, &cone(), 100.0, 0.2).unwrap_err(),
        WignerError::ScaleOrderViolation { eps_r: 100.0 / 256.0, delta: 0.2 }
    );
}

#[test]
fn zone_masses_of_half_supported_data() {
    let eps = 1.0 / 256.0;
    let grid = GridSpec::line(4.0, 4096).unwrap();
    let psi: Psi = init_concentrated_state(grid, eps, &Profile::Bump { lo: 0.0, hi: 4.0 }, &[0.0], &[0.0]).unwrap();
    let z = zone_masses(&psi, &cone(), 1.0, 0.6).unwrap();
    assert!((z.inner + z.middle - 1.0).abs() <= 1e-6 && z.outer <= 1e-6);
}

/// Simpson quadrature of `chi(x/(eps R)) |Psi|^2` for the Gaussian of width `sqrt(eps)`.
fn gaussian_inner(eps: f64, r: f64) -> f64 {
    let n = 200_000;
    let lim = eps * r;
    let h = 2.0 * lim / n as f64;
    let f = |x: f64| cut(x / lim) * (-x * x / eps).exp() / (PI * eps).sqrt();
    (0..n).map(|k| {
        let a = -lim + k as f64 * h;
        h / 6.0 * (f(a) + 4.0 * f(a + h / 2.0) + f(a + h))
    }).sum()
}

#[test]
fn inner_zone_trend_follows_the_gaussian_oracle() {
    let grid = GridSpec::line(4.0, 8192).unwrap();
    let mut inner = Vec::new();
    for eps in [1.0 / 64.0, 1.0 / 256.0] {
        let psi = gaussian_state(grid, eps, 0.0, 0.0);
        for p in [0.25, 0.75] {
            let r = eps.powf(-p);
            let z = zone_masses(&psi, &cone(), r, 0.5).unwrap();
            let oracle = gaussian_inner(eps, r);
            assert!((z.inner - oracle).abs() <= 1e-6, "eps {eps} R {r}: {} {oracle}", z.inner);
            inner.push(z.inner);
        }
    }
    // R = eps^{-1/4}: eps R << sqrt(eps) and the inner mass shrinks with eps;
    // R = eps^{-3/4}: eps R >> sqrt(eps) and it tends to 1.
    assert!(inner[2] < inner[0]);
    assert!(inner[3] > inner[1] && inner[3] > 0.99);
}

#[test]
fn empirical_nu_of_split_data() {
    let eps = 1.0 / 256.0;
    let grid = GridSpec::line(4.0, 8192).unwrap();
    let a = Profile::split(0.0, 3.0, 0.7);
    let psi: Psi = init_concentrated_state(grid, eps, &a, &[0.0], &[0.0]).unwrap();
    // A window wider than the packet sees the whole half masses.
    let nu = empirical_nu(&psi, &cone(), 4.0 * eps.sqrt()).unwrap();
    assert!((nu.plus - 0.7).abs() <= 0.05 && (nu.minus - 0.3).abs() <= 0.05, "{nu:?}");
    // eps^0.4 sits inside the packet at t = 0 and only sees part of it.
    let nu = empirical_nu(&psi, &cone(), nu_window(eps)).unwrap();
    assert!(nu.plus < 0.7 && nu.minus < 0.3);
    assert!(nu.plus >= 0.0 && nu.minus >= 0.0 && nu.plus + nu.minus <= 1.0 + 1e-12);

    let w = nu_window(eps);
    let far: Psi = init_concentrated_state(grid, eps, &Profile::Bump { lo: -1.0, hi: 1.0 }, &[3.0 * w], &[0.0]).unwrap();
    let nu = empirical_nu(&far, &cone(), w).unwrap();
    assert_eq!(nu.plus, 0.0);
    let p2 = ConicalPotential::parse("0", "1", &["x1", "x2"], 2).unwrap();
    assert_eq!(empirical_nu(&psi, &p2, w).unwrap_err(), WignerError::Codim(2));
}

#[test]
fn static_cone_weights_are_symmetric() {
    let eps = 1.0 / 128.0;
    let grid = GridSpec::line(4.0, 4096).unwrap();
    let mut psi: Psi = init_concentrated_state(grid, eps, &Profile::Bump { lo: -3.0, hi: 3.0 }, &[0.0], &[0.0]).unwrap();
    let snaps = propagate(&mut psi, &cone(), 0.5, eps / 10.0, &[0.25, 0.5]).unwrap();
    for s in &snaps {
        let nu = empirical_nu(s, &cone(), nu_window(eps)).unwrap();
        assert!((nu.plus - nu.minus).abs() <= 1e-8, "{nu:?}");
    }
}

/// RK4 for `x' = xi, xi' = -V'(x)` with `V = x^2/2 + x^4/10`.
fn quartic_flow(x: f64, xi: f64, t: f64) -> (f64, f64) {
    let f = |x: f64, xi: f64| (xi, -(x + 0.4 * x.powi(3)));
    let n = (t.abs() / 0.005).ceil() as usize;
    let h = t / n as f64;
    let (mut x, mut xi) = (x, xi);
    for _ in 0..n {
        let k1 = f(x, xi);
        let k2 = f(x + h / 2.0 * k1.0, xi + h / 2.0 * k1.1);
        let k3 = f(x + h / 2.0 * k2.0, xi + h / 2.0 * k2.1);
        let k4 = f(x + h * k3.0, xi + h * k3.1);
        x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        xi += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (x, xi)
}

#[test]
fn liouville_pairing_is_invariant() {
    let eps = 1.0 / 256.0;
    let grid = GridSpec::line(4.0, 4096).unwrap();
    let pot = ConicalPotential::parse("x1^2/2 + x1^4/10", "0", &["x1"], 1).unwrap();
    let a = |x: f64, xi: f64| (-((x - 0.6).powi(2) + (xi - 0.1).powi(2)) / 0.2).exp();
    let mut psi = gaussian_state(grid, eps, 0.5, 0.0);
    let w0 = wigner_transform(&psi, 8).unwrap();
    let before = w0.pair(a);
    let snaps = propagate(&mut psi, &pot, 1.0, eps / 10.0, &[1.0]).unwrap();
    let w1 = wigner_transform(&snaps[0], 8).unwrap();
    let floor = 1e-8 * w1.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let after = w1.pair(|x, xi| {
        if w1_small(&w1, x, xi, floor) {
            return 0.0;
        }
        let (x0, xi0) = quartic_flow(x, xi, -1.0);
        a(x0, xi0)
    });
    assert!((after - before).abs() <= 0.05, "{before} {after}");
    assert!(before > 0.1);
}

/// Skips flow evaluations where the pairing weight is negligible.
fn w1_small(w: &WignerField, x: f64, xi: f64, floor: f64) -> bool {
    let i = ((x - w.x[0]) / w.dx()).round() as usize;
    let k = ((xi - w.xi[0]) / w.dxi()).round() as usize;
    w.at(i.min(w.x.len() - 1), k.min(w.xi.len() - 1)).abs() < floor
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn marginal_identities(x0 in -1.0f64..1.0, xi0 in -2.0f64..2.0, w in 0.7f64..1.5) {
        let eps = 1.0 / 128.0;
        let grid = GridSpec::line(4.0, 2048).unwrap();
        let psi: Psi = init_concentrated_state(grid, eps, &Profile::Gaussian { center: 0.0, width: w }, &[x0], &[xi0]).unwrap();
        let f = wigner_transform(&psi, 4).unwrap();
        let rho = psi.density();
        let peak = rho.iter().fold(0.0_f64, |m, v| m.max(*v));
        for (i, m) in f.x_marginal().iter().enumerate() {
            prop_assert!((m - rho[4 * i]).abs() <= 1e-6 * peak);
        }
        prop_assert!((f.total() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn zone_masses_partition_unity(x0 in -0.5f64..0.5, r in 1.0f64..12.0, delta in 0.2f64..1.0) {
        let eps = 1.0 / 64.0;
        let psi = gaussian_state(GridSpec::line(4.0, 1024).unwrap(), eps, x0, 0.0);
        let z = zone_masses(&psi, &cone(), r, delta).unwrap();
        prop_assert!((z.inner + z.middle + z.outer - 1.0).abs() <= 1e-9);
        prop_assert!(z.inner >= -1e-12 && z.middle >= -1e-12 && z.outer >= -1e-12);
    }
}

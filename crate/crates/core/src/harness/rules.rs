use std::collections::BTreeMap;

use super::{ExperimentId, MetricRow, RuleOutcome};

struct Table<'a>(&'a [MetricRow]);

impl<'a> Table<'a> {
    fn rows(&self, name: &'a str, label: &'a str) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.0.iter().filter(move |r| r.name == name && r.label == label)
    }

    fn at(&self, name: &'a str, label: &'a str, eps: f64) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows(name, label).filter(move |r| r.eps == eps)
    }

    fn value(&self, name: &str, label: &str, eps: f64) -> Option<f64> {
        self.0.iter().find(|r| r.name == name && r.label == label && r.eps == eps).map(|r| r.value)
    }

    fn max(&self, name: &'a str, label: &'a str, eps: f64) -> Option<f64> {
        self.at(name, label, eps).map(|r| r.value).reduce(f64::max)
    }

    /// Distinct eps values of a metric, largest first.
    fn eps_of(&self, name: &str, label: &str) -> Vec<f64> {
        let mut v: Vec<f64> = self.0.iter().filter(|r| r.name == name && r.label == label).map(|r| r.eps).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v.dedup();
        v
    }

    /// Labels of a metric in order of first appearance.
    fn labels(&self, name: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in self.0.iter().filter(|r| r.name == name) {
            if !out.contains(&r.label) {
                out.push(r.label.clone());
            }
        }
        out
    }
}

fn outcome(rule: String, passed: bool, value: f64, threshold: f64, detail: String) -> RuleOutcome {
    RuleOutcome { rule, passed, value, threshold, detail }
}

fn missing(rule: String, what: &str) -> RuleOutcome {
    outcome(rule, false, f64::NAN, f64::NAN, format!("missing metric {what}"))
}

/// `value <= threshold`, failing on missing data.
fn at_most(rule: String, value: Option<f64>, threshold: f64, detail: &str) -> RuleOutcome {
    match value {
        Some(v) => outcome(rule, v <= threshold, v, threshold, detail.to_string()),
        None => missing(rule, detail),
    }
}

/// Per-eps maxima, largest eps first.
fn series(t: &Table, name: &str, label: &str) -> Vec<(f64, f64)> {
    t.eps_of(name, label)
        .into_iter()
        .map(|e| (e, t.0.iter().filter(|r| r.name == name && r.label == label && r.eps == e).map(|r| r.value).fold(f64::NEG_INFINITY, f64::max)))
        .collect()
}

/// Strictly decreasing (or increasing) as eps decreases.
fn monotone(rule: String, s: &[(f64, f64)], decreasing: bool, what: &str) -> RuleOutcome {
    if s.len() < 2 {
        return missing(rule, what);
    }
    let ok = s.windows(2).all(|w| if decreasing { w[1].1 < w[0].1 } else { w[1].1 > w[0].1 });
    let detail = s.iter().map(|(e, v)| format!("eps={e}: {v:.6e}")).collect::<Vec<_>>().join(", ");
    outcome(rule, ok, s[s.len() - 1].1, s[0].1, format!("{what} {}; {detail}", if decreasing { "decreasing" } else { "increasing" }))
}

/// Least-squares slope of `log y` against `log eps`.
pub fn loglog_slope(s: &[(f64, f64)]) -> f64 {
    let n = s.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = s.iter().map(|(e, v)| (e.ln(), v.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn smallest_eps(t: &Table) -> Option<f64> {
    t.eps_of("dx", "").last().copied()
}

/// Evaluates the acceptance rules of `experiment` from its metric rows.
pub fn evaluate(experiment: ExperimentId, metrics: &[MetricRow], thresholds: &BTreeMap<String, f64>) -> Vec<RuleOutcome> {
    let t = Table(metrics);
    let th = |k: &str| thresholds.get(k).copied().unwrap_or(f64::NAN);
    match experiment {
        ExperimentId::Rebound => rebound(&t, &th),
        ExperimentId::Crossing => crossing(&t, &th),
        ExperimentId::SmoothTransport => smooth_transport(&t, &th),
        ExperimentId::StaticCone => static_cone(&t, &th),
        ExperimentId::ClassifySuite => classify_suite(&t, &th),
        ExperimentId::PacketConvergence => packet_convergence(&t, &th),
    }
}

fn track_tol(t: &Table, th: &dyn Fn(&str) -> f64, eps: f64) -> Option<f64> {
    Some(th("track_sqrt_eps") * eps.sqrt() + t.value("dx", "", eps)?)
}

fn rebound(t: &Table, th: &dyn Fn(&str) -> f64) -> Vec<RuleOutcome> {
    let mut out = Vec::new();
    let Some(eps) = smallest_eps(t) else {
        return vec![missing("rebound".into(), "dx")];
    };
    let tol = track_tol(t, th, eps).unwrap_or(f64::NAN);
    if t.labels("expected_plus").is_empty() {
        out.push(missing("weights".into(), "expected_plus"));
    }
    for label in t.labels("expected_plus") {
        let l = label.as_str();
        let (ep, em) = (t.value("expected_plus", l, eps), t.value("expected_minus", l, eps));
        let (pp, pm) = (t.value("p_plus", l, eps), t.value("p_minus", l, eps));
        let wtol = if l == "even" { th("weight_tol_even") } else { th("weight_tol") };
        let err = match (ep, em, pp, pm) {
            (Some(ep), Some(em), Some(pp), Some(pm)) => Some((pp - ep).abs().max((pm - em).abs())),
            _ => None,
        };
        out.push(at_most(format!("weights[{l}]"), err, wtol, &format!("|p_hat - p| at eps={eps}")));
        let werr = ep.zip(t.value("p_plus_wigner", l, eps)).map(|(e, w)| (w - e).abs());
        out.push(at_most(format!("wigner_weight[{l}]"), werr, th("wigner_weight_tol"), "|<W, right half-plane> - p+|"));
        let mut dev: Option<f64> = None;
        for (name, w) in [("track_dev_plus", ep), ("track_dev_minus", em)] {
            if w.is_some_and(|w| w >= th("track_min_weight")) {
                let m = t.max(name, l, eps);
                dev = match (dev, m) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                };
            }
        }
        out.push(at_most(format!("tracks[{l}]"), dev, tol, "peak distance to (+/-t^2/2, +/-t), 5 sqrt(eps) + dx"));
        let plus = series(t, "piece_error_plus", l);
        let minus = series(t, "piece_error_minus", l);
        let combined: Vec<(f64, f64)> = plus
            .iter()
            .map(|&(e, v)| (e, minus.iter().find(|m| m.0 == e).map_or(v, |m| v.max(m.1))))
            .collect();
        let ends: Vec<(f64, f64)> = match (combined.first(), combined.last()) {
            (Some(a), Some(b)) if combined.len() >= 2 => vec![*a, *b],
            _ => vec![],
        };
        out.push(monotone(format!("error_decreases[{l}]"), &ends, true, "max_t max_+/- ||Psi_+/- - phi_+/-||"));
    }
    out
}

fn crossing(t: &Table, th: &dyn Fn(&str) -> f64) -> Vec<RuleOutcome> {
    let mut out = Vec::new();
    let Some(eps) = smallest_eps(t) else {
        return vec![missing("crossing".into(), "dx")];
    };
    let tol = track_tol(t, th, eps).unwrap_or(f64::NAN);
    let window = th("track_window");
    for label in ["fixed", "mirror"] {
        let dev = t.at("track_dev", label, eps).filter(|r| r.t.abs() <= window + 1e-12).map(|r| r.value).reduce(f64::max);
        out.push(at_most(format!("track[{label}]"), dev, tol, "peak distance to (eta t +/- t^2/2, eta +/- t)"));
        let side = t.value("side_mass", label, eps);
        out.push(match side {
            Some(v) => outcome(format!("side_mass[{label}]"), v >= th("side_mass"), v, th("side_mass"), "mass on the far side at t = 0.5".into()),
            None => missing(format!("side_mass[{label}]"), "side_mass"),
        });
        let tc = t.value("crossing_time", label, eps).zip(t.value("eta", label, eps)).map(|(tc, eta)| tc.abs() * eta.abs());
        out.push(at_most(format!("crossing_time[{label}]"), tc, tol, "|t_cross| |eta| (position miss at the apex)"));
    }
    out.push(monotone("trend[beta]".into(), &series(t, "limit_distance", "trend"), true, "t=0.5 peak distance to the eta=0 parabola"));
    out
}

fn smooth_transport(t: &Table, th: &dyn Fn(&str) -> f64) -> Vec<RuleOutcome> {
    let mut out = Vec::new();
    let Some(eps) = smallest_eps(t) else {
        return vec![missing("smooth_transport".into(), "dx")];
    };
    let tol = track_tol(t, th, eps).unwrap_or(f64::NAN);
    out.push(at_most("track[kinked]".into(), t.max("track_dev", "kinked", eps), tol, "peak distance to the kinked trajectory"));
    if t.rows("flow_error", "kinked").next().is_some() {
        out.push(at_most("flow[kinked]".into(), t.max("flow_error", "kinked", eps), th("flow_error"), "flow vs closed-form parabolas"));
    }
    out.push(at_most("coherent[harmonic]".into(), t.max("coherent_error", "harmonic", eps), th("coherent_error"), "||Psi - coherent state||"));
    out.push(at_most("track[pre_arrival]".into(), t.max("track_dev", "pre_arrival", eps), tol, "peak distance to ((t-1)^2/2, t-1)"));
    out
}

fn static_cone(t: &Table, th: &dyn Fn(&str) -> f64) -> Vec<RuleOutcome> {
    let parity = t.0.iter().filter(|r| r.name == "mean_x" || r.name == "mean_xi").map(|r| r.value.abs()).reduce(f64::max);
    let mut split: Option<f64> = None;
    for p in t.0.iter().filter(|r| r.name == "nu_plus") {
        let m = t.0.iter().find(|r| r.name == "nu_minus" && r.eps == p.eps && r.t == p.t).map(|r| r.value);
        if let Some(m) = m {
            let d = if p.value + m > 0.0 { (p.value / (p.value + m) - 0.5).abs() } else { f64::INFINITY };
            split = Some(split.map_or(d, |s| s.max(d)));
        }
    }
    let last = t.0.iter().filter(|r| r.name == "retention").map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
    let mut ret: Vec<(f64, f64)> = t.0.iter().filter(|r| r.name == "retention" && r.t == last).map(|r| (r.eps, r.value)).collect();
    ret.sort_by(|a, b| b.0.total_cmp(&a.0));
    vec![
        at_most("parity".into(), parity, th("parity_tol"), "max |<x>|, |<xi>|"),
        at_most("nu_split".into(), split, th("nu_tol"), "max |nu+/(nu+ + nu-) - 1/2|"),
        monotone("retention".into(), &ret, false, "mass in |x| <= eps^0.4 at the horizon"),
    ]
}

fn classify_suite(t: &Table, th: &dyn Fn(&str) -> f64) -> Vec<RuleOutcome> {
    let mut out = Vec::new();
    if t.labels("golden_error").is_empty() {
        out.push(missing("golden".into(), "golden_error"));
    }
    if t.labels("root_count").is_empty() {
        out.push(missing("adjudicated".into(), "root_count"));
    }
    for label in t.labels("golden_error") {
        let l = label.as_str();
        let g = t.value("golden_error", l, 0.0);
        let r = t.value("max_residual", l, 0.0);
        let rational = t.value("rational_agrees", l, 0.0).unwrap_or(1.0) == 1.0;
        let passed = rational && g.is_some_and(|g| g <= th("golden_tol")) && r.is_some_and(|r| r <= th("residual_tol"));
        let detail = format!("golden error {g:?}, residual {r:?}, rational cross-check {rational}");
        out.push(outcome(format!("golden[{l}]"), passed, g.unwrap_or(f64::NAN), th("golden_tol"), detail));
    }
    for label in t.labels("root_count") {
        let l = label.as_str();
        let get = |n: &str| t.value(n, l, 0.0).unwrap_or(f64::NAN);
        let (count, res, branch, sweep) = (get("root_count"), get("max_residual"), get("branch_recovery"), get("sweep_recovery"));
        let rec = th("recovery_tol");
        let passed = count >= 1.0 && res <= th("residual_tol") && branch <= rec && sweep <= rec;
        let agrees = get("agrees_with_stated") == 1.0;
        let detail = format!(
            "{count} roots, residual {res:e}, branch recovery {branch:.2e}, sweep recovery {sweep:.2e}; {} the stated value",
            if agrees { "agrees with" } else { "disagrees with" }
        );
        out.push(outcome(format!("adjudicated[{l}]"), passed, res, th("residual_tol"), detail));
    }
    out
}

fn packet_convergence(t: &Table, th: &dyn Fn(&str) -> f64) -> Vec<RuleOutcome> {
    let mut out = Vec::new();
    let quartic = series(t, "packet_error", "quartic");
    if quartic.len() >= 2 {
        let slope = loglog_slope(&quartic);
        let detail = quartic.iter().map(|(e, v)| format!("eps={e}: {v:.4e}")).collect::<Vec<_>>().join(", ");
        out.push(outcome(
            "slope[quartic]".into(),
            (slope - th("slope")).abs() <= th("slope_tol"),
            slope,
            th("slope"),
            format!("log-log slope of max_t error; {detail}"),
        ));
    } else {
        out.push(missing("slope[quartic]".into(), "packet_error[quartic]"));
    }
    let quad = series(t, "packet_error", "quadratic");
    let selfc = series(t, "self_convergence", "quadratic");
    let ratio = quad
        .iter()
        .filter_map(|(e, v)| selfc.iter().find(|s| s.0 == *e).map(|s| v / s.1))
        .reduce(f64::max);
    out.push(at_most("floor[quadratic]".into(), ratio, th("floor_factor"), "max_t error / self-convergence error"));
    out.push(monotone("decreasing[right_parabola]".into(), &series(t, "packet_error", "right_parabola"), true, "max_t error on t in [0.3, 1]"));
    out
}

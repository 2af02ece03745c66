//! Invariant checks on solved profiles and the two-solution variation ledger.

use crate::error::{usage, Result};
use crate::geometry::{
    ambient_ricci_direction, curvature_samples, gberger_monotone_hypothesis, k0_bounds_check, radial_trace, reconstruct_metric,
    weyl_mixed_n3, MetricProfile, SliceModel, WEYL_BOUND,
};
use crate::solver::SolutionProfile;
use crate::systems::{upsilon_log, Family, StateVector, SystemKind};

/// Slack for sign conditions on derivatives.
pub const SIGN_EPS: f64 = 1e-9;
pub const ORIGIN_REL_TOL: f64 = 1e-6;
pub const RADIAL_TRACE_TOL: f64 = 1e-8;
pub const RICCI_TOL: f64 = 1e-6;
pub const WEYL_SLACK: f64 = 1e-8;
/// Dead-band for monotone-interval decomposition.
pub const DEAD_BAND: f64 = 1e-9;
/// Recorded as metadata only.
pub const ETA0: f64 = 1.0 - 3e-8;
pub const C4: f64 = 3e7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
    /// Reported value without a pass threshold.
    Info,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::NotApplicable => "not-applicable",
            Status::Info => "info",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRecord {
    pub name: String,
    pub anchor: &'static str,
    pub measured: f64,
    /// `threshold - measured` for upper-bound checks; positive passes.
    pub margin: f64,
    pub threshold: f64,
    pub status: Status,
}

impl CheckRecord {
    fn upper(name: impl Into<String>, anchor: &'static str, measured: f64, threshold: f64) -> CheckRecord {
        let margin = threshold - measured;
        let status = if margin >= 0.0 { Status::Pass } else { Status::Fail };
        CheckRecord { name: name.into(), anchor, measured, margin, threshold, status }
    }

    fn not_applicable(name: impl Into<String>, anchor: &'static str) -> CheckRecord {
        CheckRecord { name: name.into(), anchor, measured: 0.0, margin: 0.0, threshold: 0.0, status: Status::NotApplicable }
    }

    fn info(name: impl Into<String>, anchor: &'static str, measured: f64) -> CheckRecord {
        CheckRecord { name: name.into(), anchor, measured, margin: 0.0, threshold: 0.0, status: Status::Info }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerificationReport {
    pub records: Vec<CheckRecord>,
}

impl VerificationReport {
    pub fn passes(&self) -> bool {
        self.records.iter().all(CheckRecord::passed)
    }

    pub fn failed(&self) -> Vec<&CheckRecord> {
        self.records.iter().filter(|r| !r.passed()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

fn drift_threshold(profile: &SolutionProfile) -> f64 {
    let tol = if profile.tol.is_finite() && profile.tol > 0.0 { profile.tol } else { 1e-10 };
    10.0 * tol
}

/// Sign conditions on first derivatives at every node.
pub fn check_monotonicity(profile: &SolutionProfile) -> Vec<CheckRecord> {
    let anchor = "monotonicity";
    let min_of = |f: &dyn Fn(&[f64]) -> f64| profile.yp.iter().map(|yp| f(yp)).fold(f64::INFINITY, f64::min);
    let max_of = |f: &dyn Fn(&[f64]) -> f64| profile.yp.iter().map(|yp| f(yp)).fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![CheckRecord::upper("monotone-y1", anchor, -min_of(&|v| v[0]), SIGN_EPS)];
    match profile.bd.kind {
        SystemKind::SuInvariant => {
            let s = (1.0 - profile.bd.phi0[0]).signum() * if profile.bd.phi0[0] == 1.0 { 0.0 } else { 1.0 };
            out.push(CheckRecord::upper("monotone-y2-sign", anchor, -min_of(&|v| s * v[1]), SIGN_EPS));
        }
        SystemKind::GeneralizedBerger => {
            let (p1, p2) = (profile.bd.phi0[0], profile.bd.phi0[1]);
            let fs: [(&str, &dyn Fn(&[f64]) -> f64); 3] =
                [("monotone-y2", &|v| v[1]), ("monotone-y3", &|v| v[2]), ("monotone-y2-plus-y3", &|v| v[1] + v[2])];
            for (name, f) in fs {
                if gberger_monotone_hypothesis(p1, p2) {
                    // single-signed: the smaller of the two one-sided violations
                    let v = (-min_of(f)).max(0.0).min(max_of(f).max(0.0));
                    out.push(CheckRecord::upper(name, anchor, v, SIGN_EPS));
                } else {
                    out.push(CheckRecord::not_applicable(name, anchor));
                }
            }
        }
        SystemKind::SpInvariant => {}
    }
    out
}

/// Sup of `|Φ|` over the nodes against `10·tol`.
pub fn check_constraint_drift(profile: &SolutionProfile) -> CheckRecord {
    let measured = profile.constraint_drift().unwrap_or(f64::INFINITY);
    let measured = if measured.is_finite() { measured } else { f64::MAX };
    CheckRecord::upper("constraint-drift", "first-integral", measured, drift_threshold(profile))
}

/// Closed forms for `y_i''(0)` in terms of the data at `x = 0`.
pub fn origin_closed_forms(kind: SystemKind, n: usize, y0: &[f64]) -> Option<Vec<f64>> {
    match kind {
        SystemKind::GeneralizedBerger => {
            let (k, p1, p2) = (y0[0].exp(), y0[1].exp(), y0[2].exp());
            let km = k.powf(-1.0 / 3.0);
            let pw = |a: f64, b: f64| p1.powf(a) * p2.powf(b);
            let t = 1.0 / 3.0;
            Some(vec![
                4.0 * (3.0 - upsilon_log(y0)),
                32.0 * km * (pw(2.0 * t, t) - pw(-t, t) - pw(2.0 * t, -2.0 * t) + pw(-4.0 * t, -2.0 * t)),
                32.0 * km * (pw(-t, t) - pw(-t, -2.0 * t) - pw(2.0 * t, 4.0 * t) + pw(2.0 * t, -2.0 * t)),
            ])
        }
        SystemKind::SuInvariant => {
            let nf = n as f64;
            let (k, phi) = (y0[0].exp(), y0[1].exp());
            let b = nf - (nf + 1.0) * (phi * k).powf(-1.0 / nf) + k.powf(-1.0 / nf) * phi.powf(-(nf + 1.0) / nf);
            let fam = Family::new(kind, n).ok()?;
            let mut out = vec![4.0 * b];
            out.push(fam.origin_second_derivatives(y0)[1]);
            Some(out)
        }
        SystemKind::SpInvariant => None,
    }
}

/// Second series coefficients at the origin against the closed forms.
pub fn check_origin_identities(profile: &SolutionProfile) -> Vec<CheckRecord> {
    let anchor = "origin-identity";
    let m = profile.m();
    let mut y0 = vec![profile.log_k0];
    y0.extend(profile.bd.log_ratios());
    let Some(want) = origin_closed_forms(profile.bd.kind, profile.bd.n, &y0) else {
        return vec![CheckRecord::not_applicable("origin-identity", anchor)];
    };
    (0..m.min(want.len()))
        .map(|i| {
            let got = profile.origin_second_derivative(i);
            let rel = (got - want[i]).abs() / want[i].abs().max(1.0);
            CheckRecord::upper(format!("origin-identity-y{}", i + 1), anchor, rel, ORIGIN_REL_TOL)
        })
        .collect()
}

/// `y_1' < 4n x/(1-x²)` and containment of the ratio variables between their
/// boundary values.
pub fn check_apriori_bounds(profile: &SolutionProfile) -> Vec<CheckRecord> {
    let nf = profile.bd.n as f64;
    let mut worst = f64::NEG_INFINITY;
    for (j, &x) in profile.mesh.nodes.iter().enumerate() {
        let bound = 4.0 * nf * x / (1.0 - x * x);
        worst = worst.max(profile.yp[j][0] - bound);
    }
    // strict inequality: report the excess over the bound, which must stay negative
    let mut out = vec![CheckRecord::upper("apriori-y1prime", "a-priori-y1prime", worst, 0.0)];
    if worst == 0.0 {
        out[0].status = Status::Fail;
    }
    let applicable = match profile.bd.kind {
        SystemKind::SuInvariant => true,
        SystemKind::GeneralizedBerger => gberger_monotone_hypothesis(profile.bd.phi0[0], profile.bd.phi0[1]),
        SystemKind::SpInvariant => false,
    };
    for (r, &p0) in profile.bd.phi0.iter().enumerate() {
        let name = format!("ratio-containment-{}", r + 1);
        if !applicable {
            out.push(CheckRecord::not_applicable(name, "ratio-containment"));
            continue;
        }
        let (lo, hi) = (p0.min(1.0), p0.max(1.0));
        let mut excess = f64::NEG_INFINITY;
        for y in &profile.y {
            let phi = y[r + 1].exp();
            excess = excess.max((lo - phi).max(phi - hi));
        }
        out.push(CheckRecord::upper(name, "ratio-containment", excess, SIGN_EPS));
    }
    out
}

/// `K(0)` strictly inside `(lower bound, 1)`; the round case is exact equality.
pub fn check_k0_window(profile: &SolutionProfile) -> Vec<CheckRecord> {
    let k0 = profile.log_k0.exp();
    let rep = k0_bounds_check(&profile.bd, k0);
    let mut upper = CheckRecord::upper("k0-upper", "k0-volume-bound", k0, 1.0);
    let mut lower = match rep.lower {
        Some(l) => CheckRecord { name: "k0-lower".into(), anchor: "k0-lower-bound", measured: k0, margin: k0 - l, threshold: l, status: Status::Pass },
        None => CheckRecord::not_applicable("k0-lower", "k0-lower-bound"),
    };
    if rep.round_equality {
        upper.status = Status::Pass;
        if lower.status != Status::NotApplicable {
            lower.status = Status::Pass;
        }
    } else {
        if !rep.below_upper {
            upper.status = Status::Fail;
        }
        if lower.status != Status::NotApplicable && !rep.above_lower {
            lower.status = Status::Fail;
        }
    }
    vec![upper, lower]
}

/// Curvature checks: radial trace, full ambient Ricci, Weyl bound (n = 3) and pinching.
pub fn check_curvature(profile: &SolutionProfile) -> Result<Vec<CheckRecord>> {
    let mp = reconstruct_metric(profile)?;
    let nf = profile.bd.n as f64;
    let model = SliceModel::for_family(profile.bd.kind, profile.bd.n)?;
    let mut trace = 0.0f64;
    let mut ricci = 0.0f64;
    let mut pinch = 0.0f64;
    let mut max_k = f64::NEG_INFINITY;
    for j in 0..mp.len() {
        trace = trace.max((radial_trace(&mp, j) + nf).abs());
        for s in curvature_samples(&mp, model.as_ref(), j)? {
            pinch = pinch.max((s.value + 1.0).abs());
            max_k = max_k.max(s.value);
        }
        if let Some(model) = &model {
            let mut done = Vec::new();
            for a in 0..model.component.len() {
                if done.contains(&model.component[a]) {
                    continue;
                }
                done.push(model.component[a]);
                ricci = ricci.max((ambient_ricci_direction(&mp, model, j, a)? + nf).abs());
            }
        }
    }
    let mut out = vec![CheckRecord::upper("radial-trace", "einstein-radial-trace", trace, RADIAL_TRACE_TOL)];
    out.push(match model {
        Some(_) => CheckRecord::upper("ambient-ricci", "einstein-ricci", ricci, RICCI_TOL),
        None => CheckRecord::not_applicable("ambient-ricci", "einstein-ricci"),
    });
    out.push(check_weyl(profile, &mp, max_k)?);
    out.push(CheckRecord::info("pinching", "pinching", pinch));
    Ok(out)
}

/// `weyl_mixed_n3` on three-dimensional slices of nonpositively curved profiles.
fn check_weyl(profile: &SolutionProfile, mp: &MetricProfile, max_k: f64) -> Result<CheckRecord> {
    let name = "weyl-bound";
    if profile.bd.n != 3 || max_k > 0.0 {
        return Ok(CheckRecord::not_applicable(name, "weyl-bound"));
    }
    let w3 = expand_to_coordinates(mp)?;
    let mut worst = 0.0f64;
    for j in 0..w3.len() {
        for (i, p, q) in [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)] {
            worst = worst.max(weyl_mixed_n3(&w3, i, p, q, j)?);
        }
    }
    Ok(CheckRecord::upper(name, "weyl-bound", worst, WEYL_BOUND + WEYL_SLACK))
}

/// One direction per slice coordinate (repeats components with multiplicity).
pub fn expand_to_coordinates(mp: &MetricProfile) -> Result<MetricProfile> {
    let rep = |v: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        v.iter().map(|row| row.iter().zip(&mp.multiplicity).flat_map(|(&a, &m)| std::iter::repeat(a).take(m)).collect()).collect()
    };
    let total: usize = mp.multiplicity.iter().sum();
    MetricProfile::from_log_components(mp.kind, mp.n, vec![1; total], mp.x.clone(), rep(&mp.log_i), rep(&mp.log_i_x), rep(&mp.log_i_xx))
}

/// Every check, in a fixed order.
pub fn verify_profile(profile: &SolutionProfile) -> Result<VerificationReport> {
    let mut records = vec![check_constraint_drift(profile)];
    records.extend(check_monotonicity(profile));
    records.extend(check_origin_identities(profile));
    records.extend(check_apriori_bounds(profile));
    records.extend(check_k0_window(profile));
    records.extend(check_curvature(profile)?);
    Ok(VerificationReport { records })
}

/// Monotone pieces and total variation of each difference `z_i = y_i(p1) - y_i(p2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationLedger {
    pub x: Vec<f64>,
    /// `[component]` list of `(start, end)` monotone intervals covering `[0, 1]`.
    pub intervals: Vec<Vec<(f64, f64)>>,
    pub variation: Vec<f64>,
    /// `lhs - rhs` of each contraction inequality (≤ 0 holds); empty when not available.
    pub inequality_residuals: Vec<f64>,
    /// Inequalities hold within slack, which forces every variation to vanish.
    pub forces_zero: bool,
}

/// Sampling grid for variations: `0`, the nodes of `p1`, and `1`.
fn ledger_grid(p: &SolutionProfile) -> Vec<f64> {
    let mut x = vec![0.0];
    x.extend(&p.mesh.nodes);
    x.push(1.0);
    x
}

pub fn uniqueness_diagnostic(p1: &SolutionProfile, p2: &SolutionProfile) -> Result<VariationLedger> {
    if p1.bd != p2.bd {
        return usage("uniqueness diagnostic needs identical boundary data");
    }
    let x = ledger_grid(p1);
    let m = p1.m();
    let mut z = vec![Vec::with_capacity(x.len()); m];
    let mut dz = vec![Vec::with_capacity(x.len()); m];
    for &xv in &x {
        let a = p1.state_at(xv)?;
        let b: StateVector = p2.state_at(xv)?;
        for i in 0..m {
            z[i].push(a.y[i] - b.y[i]);
            dz[i].push(a.yp[i] - b.yp[i]);
        }
    }
    let mut intervals = Vec::with_capacity(m);
    let mut variation = Vec::with_capacity(m);
    for i in 0..m {
        intervals.push(monotone_intervals(&x, &dz[i]));
        variation.push(z[i].windows(2).map(|w| (w[1] - w[0]).abs()).sum());
    }
    let inequality_residuals = match p1.bd.kind {
        SystemKind::GeneralizedBerger => {
            let v = &variation;
            vec![v[1] - 0.5 * v[0] - 0.25 * v[2], v[2] - 0.5 * v[0] - 0.25 * v[1], v[0] - (v[1] + v[2]) / 3.0]
        }
        _ => Vec::new(),
    };
    let slack = 1e-7;
    let forces_zero = if inequality_residuals.is_empty() {
        variation.iter().all(|&v| v <= slack)
    } else {
        inequality_residuals.iter().all(|&r| r <= slack)
    };
    Ok(VariationLedger { x, intervals, variation, inequality_residuals, forces_zero })
}

/// Split `[x_0, x_end]` where the derivative changes sign outside the dead-band.
pub fn monotone_intervals(x: &[f64], d: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = x[0];
    let mut sign = 0i8;
    for (k, &v) in d.iter().enumerate() {
        let s = if v > DEAD_BAND {
            1
        } else if v < -DEAD_BAND {
            -1
        } else {
            0
        };
        if s != 0 {
            if sign != 0 && s != sign {
                out.push((start, x[k]));
                start = x[k];
            }
            sign = s;
        }
    }
    out.push((start, x[x.len() - 1]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve_bvp, SolverOptions};
    use crate::systems::BoundaryData;

    fn round(kind: SystemKind, n: usize) -> SolutionProfile {
        solve_bvp(&BoundaryData::round(kind, n).unwrap(), &SolverOptions::default()).unwrap().0
    }

    #[test]
    fn zero_profile_passes_everything() {
        for (kind, n) in [(SystemKind::GeneralizedBerger, 3), (SystemKind::SuInvariant, 3), (SystemKind::SuInvariant, 5)] {
            let p = round(kind, n);
            let rep = verify_profile(&p).unwrap();
            assert!(rep.passes(), "{:?}", rep.failed());
            assert_eq!(rep.get("constraint-drift").unwrap().measured, 0.0);
            assert!(rep.get("pinching").unwrap().measured < 1e-10);
            assert!(rep.records.iter().all(|r| r.margin.is_finite()));
        }
    }

    #[test]
    fn gberger_hypothesis_gate() {
        let bd = BoundaryData::new(SystemKind::GeneralizedBerger, 3, vec![0.3, 1.2]).unwrap();
        let p = round(SystemKind::GeneralizedBerger, 3);
        let mut q = p.clone();
        q.bd = bd;
        let recs = check_monotonicity(&q);
        assert!(recs.iter().filter(|r| r.name != "monotone-y1").all(|r| r.status == Status::NotApplicable));
    }

    #[test]
    fn drift_sensitivity() {
        let bd = BoundaryData::new(SystemKind::SuInvariant, 5, vec![0.8]).unwrap();
        let (mut p, _) = solve_bvp(&bd, &SolverOptions::default()).unwrap();
        assert!(check_constraint_drift(&p).passed());
        let j = p.mesh.len() / 2;
        p.y[j][0] += 1e-4;
        assert!(!check_constraint_drift(&p).passed());
    }

    #[test]
    fn apriori_sensitivity() {
        let bd = BoundaryData::new(SystemKind::SuInvariant, 5, vec![0.8]).unwrap();
        let (mut p, _) = solve_bvp(&bd, &SolverOptions::default()).unwrap();
        assert!(check_apriori_bounds(&p).iter().all(|r| r.passed()));
        let j = p.mesh.len() / 2;
        let x = p.mesh.nodes[j];
        p.yp[j][0] = 20.0 * x / (1.0 - x * x) + 1e-3;
        assert!(!check_apriori_bounds(&p)[0].passed());
    }

    #[test]
    fn su_origin_closed_form_matches_recursion() {
        let fam = Family::new(SystemKind::SuInvariant, 7).unwrap();
        let y0 = [-0.07, 0.3];
        let want = origin_closed_forms(SystemKind::SuInvariant, 7, &y0).unwrap();
        let rec = fam.origin_second_derivatives(&y0);
        assert!((want[0] - rec[0]).abs() < 1e-12 * want[0].abs().max(1.0));
    }

    #[test]
    fn self_variation_is_zero() {
        let bd = BoundaryData::new(SystemKind::GeneralizedBerger, 3, vec![0.95, 1.02]).unwrap();
        let (p, _) = solve_bvp(&bd, &SolverOptions::default()).unwrap();
        let led = uniqueness_diagnostic(&p, &p).unwrap();
        assert!(led.variation.iter().all(|&v| v == 0.0));
        assert!(led.forces_zero);
        for iv in &led.intervals {
            assert_eq!(iv.first().unwrap().0, 0.0);
            assert_eq!(iv.last().unwrap().1, 1.0);
        }
        let other = round(SystemKind::GeneralizedBerger, 3);
        assert!(uniqueness_diagnostic(&p, &other).is_err());
    }

    #[test]
    fn interval_decomposition() {
        let x = [0.0, 0.25, 0.5, 0.75, 1.0];
        assert_eq!(monotone_intervals(&x, &[0.0, 1.0, 1e-12, -1.0, -2.0]), vec![(0.0, 0.75), (0.75, 1.0)]);
        assert_eq!(monotone_intervals(&x, &[0.0; 5]), vec![(0.0, 1.0)]);
    }
}

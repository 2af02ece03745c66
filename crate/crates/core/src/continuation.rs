//! Continuation in the boundary ratio from round data, with detection of the
//! first point where some monitored sectional curvature reaches zero.

use crate::error::{usage, CceError, Result};
use crate::geometry::{curvature_samples, CurvatureSample, MetricProfile, SliceModel};
use crate::solver::{solve_bvp, solve_from, transfer, SolutionProfile, SolverOptions};
use crate::systems::{BoundaryData, SystemKind};
use crate::verification::verify_profile;

pub const DEFAULT_EVENT_TOL: f64 = 1e-6;
/// Extra monitor points inside the series regions, used when they fall outside the mesh.
pub const SERIES_MONITOR: [f64; 12] = [0.001, 0.005, 0.01, 0.02, 0.03, 0.04, 0.96, 0.97, 0.98, 0.99, 0.995, 0.999];
const GROW: f64 = 1.5;
const GROW_AFTER: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPlan {
    pub kind: SystemKind,
    pub n: usize,
    /// Final value of λ; the path starts at 1.
    pub end: f64,
    /// Exponent of λ in each boundary ratio: `φ_r(λ) = λ^direction[r]`.
    pub direction: Vec<f64>,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub event_tol: f64,
    /// Concurrent solves per bisection round.
    pub threads: usize,
}

impl SweepPlan {
    pub fn new(kind: SystemKind, n: usize, end: f64) -> SweepPlan {
        let direction = match kind {
            SystemKind::GeneralizedBerger => vec![1.0, 0.0],
            _ => vec![1.0],
        };
        SweepPlan {
            kind,
            n,
            end,
            direction,
            initial_step: 0.05,
            min_step: 1e-4,
            max_step: 0.2,
            event_tol: DEFAULT_EVENT_TOL,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.check_dimension(self.n)?;
        if !(self.end.is_finite() && self.end > 0.0) {
            return usage("sweep end must be a positive number");
        }
        if self.direction.len() != self.kind.unknowns() - 1 || self.direction.iter().any(|d| !d.is_finite()) {
            return usage(format!("sweep direction needs {} finite entries", self.kind.unknowns() - 1));
        }
        let steps = [self.initial_step, self.min_step, self.max_step, self.event_tol];
        if steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return usage("sweep steps and event tolerance must be positive");
        }
        if self.min_step > self.max_step {
            return usage("min step exceeds max step");
        }
        if self.threads == 0 {
            return usage("threads must be at least 1");
        }
        Ok(())
    }

    pub fn data_at(&self, lambda: f64) -> Result<BoundaryData> {
        BoundaryData::new(self.kind, self.n, self.direction.iter().map(|d| lambda.powf(*d)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    PathEnd,
    Event,
    MinStep,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::PathEnd => "path-end",
            StopReason::Event => "event",
            StopReason::MinStep => "min-step",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub lambda: f64,
    pub k0: f64,
    pub free: Vec<f64>,
    pub infinity_free: Vec<f64>,
    /// Largest monitored sectional curvature over the nodes.
    pub max_curvature: f64,
    pub iterations: usize,
    pub nodes: usize,
    pub constraint_drift: f64,
    pub verified: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    /// Last λ without an event.
    pub lambda_lo: f64,
    /// First λ with an event.
    pub lambda_hi: f64,
    pub lambda_event: f64,
    pub witness: CurvatureSample,
    pub bracket_width: f64,
    /// Set when a solve inside the bracket failed before reaching the tolerance.
    pub annotation: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ContinuationTrace {
    pub plan: SweepPlan,
    pub records: Vec<TraceRecord>,
    pub stop: StopReason,
    pub event: Option<EventRecord>,
    /// Profile at the last record.
    pub last: SolutionProfile,
}

/// First node (in `x`) where the largest monitored curvature is `>= 0`.
pub fn first_event(mp: &MetricProfile, model: Option<&SliceModel>) -> Result<Option<CurvatureSample>> {
    for j in 0..mp.len() {
        let best = max_sample(&curvature_samples(mp, model, j)?);
        if let Some(s) = best {
            if s.value >= 0.0 {
                return Ok(Some(s));
            }
        }
    }
    Ok(None)
}

fn max_sample(samples: &[CurvatureSample]) -> Option<CurvatureSample> {
    samples.iter().copied().fold(None, |acc: Option<CurvatureSample>, s| match acc {
        Some(a) if a.value >= s.value => Some(a),
        _ => Some(s),
    })
}

fn max_curvature(mp: &MetricProfile, model: Option<&SliceModel>) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for j in 0..mp.len() {
        for s in curvature_samples(mp, model, j)? {
            worst = worst.max(s.value);
        }
    }
    Ok(worst)
}

/// Metric at the mesh nodes and at the series-region monitor points.
pub fn monitored_metric(profile: &SolutionProfile) -> Result<MetricProfile> {
    let (l, r) = (profile.mesh.left(), profile.mesh.right());
    let mut xs: Vec<f64> = SERIES_MONITOR.iter().copied().filter(|&x| x < l || x > r).collect();
    xs.extend(&profile.mesh.nodes);
    xs.sort_by(f64::total_cmp);
    let states = xs.iter().map(|&x| profile.state_at(x)).collect::<Result<Vec<_>>>()?;
    MetricProfile::from_states(profile.bd.kind, profile.bd.n, &states)
}

pub fn detect_curvature_event(profile: &SolutionProfile) -> Result<Option<CurvatureSample>> {
    let mp = monitored_metric(profile)?;
    let model = SliceModel::for_family(profile.bd.kind, profile.bd.n)?;
    first_event(&mp, model.as_ref())
}

fn summarize(lambda: f64, p: &SolutionProfile, iterations: usize, drift: f64) -> Result<TraceRecord> {
    let mp = monitored_metric(p)?;
    let model = SliceModel::for_family(p.bd.kind, p.bd.n)?;
    Ok(TraceRecord {
        lambda,
        k0: p.log_k0.exp(),
        free: p.free.coeffs.clone(),
        infinity_free: p.infinity_free.coeffs.clone(),
        max_curvature: max_curvature(&mp, model.as_ref())?,
        iterations,
        nodes: p.mesh.len(),
        constraint_drift: drift,
        verified: verify_profile(p)?.passes(),
    })
}

/// Solve at `λ` from a warm start; `None` when the solve does not converge or
/// fails verification.
fn solve_at(plan: &SweepPlan, lambda: f64, warm: &SolutionProfile, opts: &SolverOptions) -> Result<Option<(SolutionProfile, usize, f64)>> {
    let bd = plan.data_at(lambda)?;
    let guess = transfer(warm, &opts.mesh()?)?;
    let (p, rep) = match solve_from(&bd, &guess, opts) {
        Ok(v) => v,
        Err(CceError::Solver(_)) | Err(CceError::Infeasible(_)) | Err(CceError::Domain(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if !p.converged || !verify_profile(&p)?.passes() {
        return Ok(None);
    }
    Ok(Some((p, rep.iterations, rep.constraint_drift)))
}

/// Continuation from `λ = 1` toward `plan.end`.
pub fn sweep(plan: &SweepPlan, opts: &SolverOptions) -> Result<ContinuationTrace> {
    plan.validate()?;
    let (p0, r0) = solve_bvp(&plan.data_at(1.0)?, opts)?;
    if !p0.converged {
        return Err(CceError::Internal("round data failed to solve".into()));
    }
    let mut records = vec![summarize(1.0, &p0, r0.iterations, r0.constraint_drift)?];
    if let Some(w) = detect_curvature_event(&p0)? {
        let event = EventRecord { lambda_lo: 1.0, lambda_hi: 1.0, lambda_event: 1.0, witness: w, bracket_width: 0.0, annotation: None };
        return Ok(ContinuationTrace { plan: plan.clone(), records, stop: StopReason::Event, event: Some(event), last: p0 });
    }
    let sign = if plan.end < 1.0 { -1.0 } else { 1.0 };
    let mut lambda = 1.0;
    let mut last = p0;
    let mut step = plan.initial_step.min(plan.max_step);
    let mut streak = 0;
    loop {
        if (plan.end - lambda) * sign <= 0.0 {
            return Ok(ContinuationTrace { plan: plan.clone(), records, stop: StopReason::PathEnd, event: None, last });
        }
        let next = if (plan.end - lambda).abs() <= step { plan.end } else { lambda + sign * step };
        match solve_at(plan, next, &last, opts)? {
            Some((p, it, drift)) => {
                if let Some(w) = detect_curvature_event(&p)? {
                    let event = bisect_event(plan, lambda, &last, next, w, opts)?;
                    return Ok(ContinuationTrace { plan: plan.clone(), records, stop: StopReason::Event, event: Some(event), last });
                }
                records.push(summarize(next, &p, it, drift)?);
                lambda = next;
                last = p;
                streak += 1;
                if streak >= GROW_AFTER {
                    step = (step * GROW).min(plan.max_step);
                    streak = 0;
                }
            }
            None => {
                streak = 0;
                step /= 2.0;
                if step < plan.min_step {
                    return Ok(ContinuationTrace { plan: plan.clone(), records, stop: StopReason::MinStep, event: None, last });
                }
            }
        }
    }
}

/// Bracket refinement between `lo` (no event, profile `warm`) and `hi`
/// (event with witness `w`). Every probe restarts from `warm`.
pub fn bisect_event(
    plan: &SweepPlan,
    lo: f64,
    warm: &SolutionProfile,
    hi: f64,
    w: CurvatureSample,
    opts: &SolverOptions,
) -> Result<EventRecord> {
    let probe = |lambda: f64| -> Result<Option<Option<CurvatureSample>>> {
        match solve_at(plan, lambda, warm, opts)? {
            Some((p, _, _)) => Ok(Some(detect_curvature_event(&p)?)),
            None => Ok(None),
        }
    };
    bisect_bracket(&probe, lo, hi, w, plan.event_tol, plan.threads)
}

/// Shrink `[lo, hi]` (either orientation) around the first event. `probe`
/// returns `None` on solver failure, `Some(None)` without event, and
/// `Some(Some(witness))` with one. With `threads > 1` each round evaluates
/// `threads` interior points concurrently.
pub fn bisect_bracket<F>(probe: &F, mut lo: f64, mut hi: f64, mut w: CurvatureSample, tol: f64, threads: usize) -> Result<EventRecord>
where
    F: Fn(f64) -> Result<Option<Option<CurvatureSample>>> + Sync,
{
    let k = threads.max(1);
    let mut annotation = None;
    while (hi - lo).abs() > tol {
        let pts: Vec<f64> = (1..=k).map(|i| lo + (hi - lo) * i as f64 / (k + 1) as f64).collect();
        let results: Vec<Result<Option<Option<CurvatureSample>>>> = if k == 1 {
            vec![probe(pts[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = pts.iter().map(|&l| s.spawn(move || probe(l))).collect();
                handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(CceError::Internal("probe panicked".into())))).collect()
            })
        };
        // walk from lo toward hi: the bracket ends at the first event
        let (mut new_lo, mut new_hi, mut new_w) = (lo, hi, w);
        let mut failed = None;
        for (&l, r) in pts.iter().zip(results) {
            match r? {
                Some(None) => new_lo = l,
                Some(Some(s)) => {
                    new_hi = l;
                    new_w = s;
                    break;
                }
                None => {
                    failed = Some(l);
                    break;
                }
            }
        }
        if new_lo == lo && new_hi == hi {
            annotation = Some(format!("solver failed at lambda = {:e} inside the bracket", failed.unwrap_or(f64::NAN)));
            break;
        }
        lo = new_lo;
        hi = new_hi;
        w = new_w;
    }
    Ok(EventRecord { lambda_lo: lo, lambda_hi: hi, lambda_event: 0.5 * (lo + hi), witness: w, bracket_width: (hi - lo).abs(), annotation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Plane;

    fn sample(x: f64, value: f64) -> CurvatureSample {
        CurvatureSample { x, plane: Plane::Radial(0), value }
    }

    #[test]
    fn degenerate_plan() {
        let plan = SweepPlan::new(SystemKind::SuInvariant, 3, 1.0);
        let tr = sweep(&plan, &SolverOptions::default()).unwrap();
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.stop, StopReason::PathEnd);
        assert!(tr.event.is_none());
        // the monitor point at x = 0.999 loses digits to the 1 - x² factors
        assert!((tr.records[0].max_curvature + 1.0).abs() < 1e-8);
    }

    #[test]
    fn hyperbolic_has_no_event() {
        let (p, _) = solve_bvp(&BoundaryData::round(SystemKind::GeneralizedBerger, 3).unwrap(), &SolverOptions::default()).unwrap();
        assert!(detect_curvature_event(&p).unwrap().is_none());
    }

    fn manufactured(values: &[f64]) -> MetricProfile {
        let nn = values.len();
        let x: Vec<f64> = (0..nn).map(|j| 0.1 + 0.8 * j as f64 / (nn - 1) as f64).collect();
        let z = vec![vec![0.0]; nn];
        MetricProfile {
            kind: SystemKind::SuInvariant,
            n: 1,
            x,
            multiplicity: vec![1],
            i: vec![vec![1.0]; nn],
            log_i: z.clone(),
            log_i_x: z.clone(),
            log_i_xx: z.clone(),
            a: vec![vec![1.0]; nn],
            a_r: z,
            a_rr: values.iter().map(|v| vec![-v]).collect(),
        }
    }

    #[test]
    fn manufactured_events() {
        let mp = manufactured(&[-1.0, -0.5, -0.2, -0.3]);
        assert!(first_event(&mp, None).unwrap().is_none());
        let mp = manufactured(&[-1.0, -0.5, 0.1, -0.3, 0.2]);
        let s = first_event(&mp, None).unwrap().unwrap();
        assert_eq!(s.x, mp.x[2]);
        assert!((s.value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bracket_family_crossing_at_half() {
        // sweep downward from 1; the proxy crosses zero at 0.5
        let probe = |l: f64| -> Result<Option<Option<CurvatureSample>>> {
            let v = 0.5 - l;
            Ok(Some(if v >= 0.0 { Some(sample(0.3, v)) } else { None }))
        };
        for threads in [1, 3] {
            let ev = bisect_bracket(&probe, 0.9, 0.3, sample(0.3, 0.2), 1e-6, threads).unwrap();
            assert!(ev.bracket_width <= 1e-6);
            assert!((ev.lambda_event - 0.5).abs() <= 1e-6);
            assert!(ev.lambda_hi <= 0.5 && ev.lambda_lo > 0.5);
            assert!(ev.annotation.is_none());
        }
    }

    #[test]
    fn narrow_bracket_unchanged() {
        let probe = |_: f64| -> Result<Option<Option<CurvatureSample>>> { panic!("no probe expected") };
        let ev = bisect_bracket(&probe, 0.5, 0.5 - 5e-7, sample(0.3, 0.1), 1e-6, 1).unwrap();
        assert_eq!((ev.lambda_lo, ev.lambda_hi), (0.5, 0.5 - 5e-7));
    }

    #[test]
    fn failure_returns_certified_bracket() {
        let probe = |l: f64| -> Result<Option<Option<CurvatureSample>>> {
            if l < 0.6 {
                Ok(None)
            } else {
                Ok(Some(None))
            }
        };
        let ev = bisect_bracket(&probe, 0.9, 0.3, sample(0.3, 0.2), 1e-6, 1).unwrap();
        assert!(ev.annotation.is_some());
        assert!(ev.lambda_lo >= 0.6 && ev.lambda_hi == 0.3);
    }

    #[test]
    fn plan_validation() {
        let mut plan = SweepPlan::new(SystemKind::SuInvariant, 3, 0.5);
        assert!(plan.validate().is_ok());
        plan.min_step = 0.0;
        assert!(plan.validate().is_err());
        assert!(SweepPlan::new(SystemKind::SuInvariant, 4, 0.5).validate().is_err());
    }
}

//! Reduced Einstein ODE systems in log variables.
//!
//! Every family has the same shape. For unknowns `y_1..y_m` on `x ∈ (0,1)`,
//! with `W = 1 - x²`,
//!
//! ```text
//! evo_i = y_i'' - (α_i + β_i x²)/(x W) y_i' + Σ q_i[j,k] y_j' y_k' + W⁻² S_i(y)
//! Φ     = Σ P[j,k] y_j' y_k' - γ (1 + x²)/(x W) y_1' + W⁻² S_Φ(y)
//! ```
//!
//! where every source `S` is a finite sum of terms `c·exp(w·y)`. The first
//! evolution equation is the source-carrying `y_1` equation; the source-free
//! `y_1` equation equals `evo_1 - (n-1)/(2n) Φ`.

use crate::error::{domain, usage, CceError, Result};

/// Distance from each endpoint inside which the endpoint forms are used.
pub const SWITCH_RADIUS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SystemKind {
    /// SU(2)-invariant metrics on S³ with three distinct coefficients.
    GeneralizedBerger,
    /// SU(k+1)-invariant metrics on S^(2k+1).
    SuInvariant,
    /// Sp(k+1)-invariant metrics on S^(4k+3).
    SpInvariant,
}

impl SystemKind {
    pub fn unknowns(self) -> usize {
        match self {
            SystemKind::GeneralizedBerger => 3,
            SystemKind::SuInvariant => 2,
            SystemKind::SpInvariant => 4,
        }
    }

    /// Number of free coefficients at order `x^n` (one per ratio variable).
    pub fn free_count(self) -> usize {
        self.unknowns() - 1
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::GeneralizedBerger => "gberger",
            SystemKind::SuInvariant => "su",
            SystemKind::SpInvariant => "sp",
        }
    }

    pub fn parse(s: &str) -> Option<SystemKind> {
        match s.trim() {
            "gberger" => Some(SystemKind::GeneralizedBerger),
            "su" => Some(SystemKind::SuInvariant),
            "sp" => Some(SystemKind::SpInvariant),
            _ => None,
        }
    }

    /// Names of the ratio variables `exp(y_2..y_m)`.
    pub fn ratio_names(self) -> &'static [&'static str] {
        match self {
            SystemKind::GeneralizedBerger => &["phi1", "phi2"],
            SystemKind::SuInvariant => &["phi"],
            SystemKind::SpInvariant => &["t1", "t2", "t3"],
        }
    }

    pub fn check_dimension(self, n: usize) -> Result<()> {
        let ok = match self {
            SystemKind::GeneralizedBerger => n == 3,
            SystemKind::SuInvariant => n >= 3 && n % 2 == 1,
            SystemKind::SpInvariant => n >= 3 && n % 4 == 3,
        };
        if ok {
            return Ok(());
        }
        let msg = match self {
            SystemKind::GeneralizedBerger => format!("gberger requires n = 3, got {n}"),
            SystemKind::SuInvariant if n % 2 == 0 => "n must be odd".to_string(),
            SystemKind::SuInvariant => format!("su requires n = 2k+1 with k >= 1, got {n}"),
            SystemKind::SpInvariant => format!("sp requires n = 4k+3, got {n}"),
        };
        usage(msg)
    }
}

/// Point value of a profile: position plus `y`, `y'`, `y''`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub x: f64,
    pub y: Vec<f64>,
    pub yp: Vec<f64>,
    pub ypp: Vec<f64>,
}

impl StateVector {
    pub fn zero(m: usize, x: f64) -> StateVector {
        StateVector { x, y: vec![0.0; m], yp: vec![0.0; m], ypp: vec![0.0; m] }
    }
}

/// Problem instance: family, dimension and boundary ratios at `x = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub kind: SystemKind,
    pub n: usize,
    pub phi0: Vec<f64>,
}

impl BoundaryData {
    pub fn new(kind: SystemKind, n: usize, phi0: Vec<f64>) -> Result<BoundaryData> {
        kind.check_dimension(n)?;
        if phi0.len() != kind.free_count() {
            return usage(format!(
                "{} expects {} boundary ratios, got {}",
                kind.name(),
                kind.free_count(),
                phi0.len()
            ));
        }
        if phi0.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return domain("phi0 must be strictly positive and finite");
        }
        Ok(BoundaryData { kind, n, phi0 })
    }

    pub fn round(kind: SystemKind, n: usize) -> Result<BoundaryData> {
        BoundaryData::new(kind, n, vec![1.0; kind.free_count()])
    }

    pub fn is_round(&self) -> bool {
        self.phi0.iter().all(|&p| p == 1.0)
    }

    /// Log boundary values `y_2(0)..y_m(0)`.
    pub fn log_ratios(&self) -> Vec<f64> {
        self.phi0.iter().map(|p| p.ln()).collect()
    }

    /// For the SU family: whether `φ(0)` lies in the window `(1/(n+1), n+1)`
    /// covered by the existence theory. Other families return `true`.
    pub fn in_admissible_window(&self) -> bool {
        match self.kind {
            SystemKind::SuInvariant => {
                let w = (self.n + 1) as f64;
                self.phi0[0] > 1.0 / w && self.phi0[0] < w
            }
            _ => true,
        }
    }
}

/// How the returned residuals are scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualForm {
    /// Raw equations.
    Interior,
    /// Raw equations with `y'/x` replaced by its limit `y''` at `x = 0`.
    OriginLimit,
    /// Equations multiplied through by `x (1 - x²)²`.
    Regularized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualVector {
    pub evo: Vec<f64>,
    pub constraint: f64,
    pub form: ResidualForm,
    /// Factor the raw equations were multiplied by (1 unless regularized).
    pub scale: f64,
}

/// Partials of `(evo_1..evo_m, Φ)` with respect to `(y, y', y'')`.
/// Row `m` is the constraint. Storage is row-major `(m+1) × m`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateJacobian {
    pub m: usize,
    pub dy: Vec<f64>,
    pub dyp: Vec<f64>,
    pub dypp: Vec<f64>,
}

impl StateJacobian {
    pub fn new(m: usize) -> StateJacobian {
        let len = (m + 1) * m;
        StateJacobian { m, dy: vec![0.0; len], dyp: vec![0.0; len], dypp: vec![0.0; len] }
    }
    pub fn d_y(&self, row: usize, j: usize) -> f64 {
        self.dy[row * self.m + j]
    }
    pub fn d_yp(&self, row: usize, j: usize) -> f64 {
        self.dyp[row * self.m + j]
    }
    pub fn d_ypp(&self, row: usize, j: usize) -> f64 {
        self.dypp[row * self.m + j]
    }
}

/// `coef · exp(w · y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpTerm {
    pub coef: f64,
    pub w: Vec<f64>,
}

impl ExpTerm {
    fn new(coef: f64, w: &[f64]) -> ExpTerm {
        ExpTerm { coef, w: w.to_vec() }
    }
}

/// `scale · Σ terms`. Term coefficients are kept integral where possible so
/// that the sum cancels exactly at `y = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Source {
    pub scale: f64,
    pub terms: Vec<ExpTerm>,
}

impl Source {
    fn new(scale: f64, terms: Vec<ExpTerm>) -> Source {
        Source { scale, terms }
    }
}

pub fn eval_terms(src: &Source, y: &[f64]) -> f64 {
    src.scale * src.terms.iter().map(|t| t.coef * dot(&t.w, y).exp()).sum::<f64>()
}

/// Value of the source; its gradient times `scale` is added into `grad`.
fn eval_terms_grad(src: &Source, y: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
    let mut v = 0.0;
    let sc = scale * src.scale;
    for t in &src.terms {
        let e = t.coef * dot(&t.w, y).exp();
        v += e;
        for (g, w) in grad.iter_mut().zip(&t.w) {
            *g += sc * e * w;
        }
    }
    src.scale * v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Coefficient tables of one reduced system.
#[derive(Clone, Debug)]
pub struct Family {
    pub kind: SystemKind,
    pub n: usize,
    pub m: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Quadratic first-derivative terms `(j, k, c)` of each evolution equation.
    pub quad: Vec<Vec<(usize, usize, f64)>>,
    pub src: Vec<Source>,
    pub gamma: f64,
    /// Quadratic form of the constraint, including `y_1'²`.
    pub phi_quad: Vec<(usize, usize, f64)>,
    pub phi_src: Source,
}

/// Exponent vectors of the six Υ monomials (y = log K, log φ₁, log φ₂).
const T3: f64 = 1.0 / 3.0;
const UPS_W: [[f64; 3]; 6] = [
    [-T3, 2.0 * T3, T3],
    [-T3, -T3, T3],
    [-T3, -T3, -2.0 * T3],
    [-T3, -4.0 * T3, -2.0 * T3],
    [-T3, 2.0 * T3, -2.0 * T3],
    [-T3, 2.0 * T3, 4.0 * T3],
];
const UPS_C: [f64; 6] = [2.0, 2.0, 2.0, -1.0, -1.0, -1.0];

impl Family {
    pub fn new(kind: SystemKind, n: usize) -> Result<Family> {
        kind.check_dimension(n)?;
        Ok(match kind {
            SystemKind::GeneralizedBerger => Family::gberger(),
            SystemKind::SuInvariant => Family::su(n),
            SystemKind::SpInvariant => Family::sp(n),
        })
    }

    pub fn for_data(bd: &BoundaryData) -> Result<Family> {
        Family::new(bd.kind, bd.n)
    }

    fn gberger() -> Family {
        let ups: Vec<ExpTerm> = UPS_C.iter().zip(UPS_W.iter()).map(|(&c, w)| ExpTerm::new(c, w)).collect();
        let bracket = |scale: f64| {
            let mut t = vec![ExpTerm::new(3.0, &[0.0; 3])];
            t.extend(ups.iter().map(|u| ExpTerm::new(-u.coef, &u.w)));
            Source::new(scale, t)
        };
        let e = |c: f64, i: usize| ExpTerm::new(c, &UPS_W[i]);
        Family {
            kind: SystemKind::GeneralizedBerger,
            n: 3,
            m: 3,
            alpha: vec![5.0, 2.0, 2.0],
            beta: vec![7.0, 4.0, 4.0],
            quad: vec![vec![(0, 0, 0.5)], vec![(0, 1, 0.5)], vec![(0, 2, 0.5)]],
            src: vec![
                bracket(16.0),
                Source::new(32.0, vec![e(1.0, 0), e(-1.0, 1), e(-1.0, 4), e(1.0, 3)]),
                Source::new(32.0, vec![e(1.0, 1), e(-1.0, 2), e(-1.0, 5), e(1.0, 4)]),
            ],
            gamma: 12.0,
            phi_quad: vec![(0, 0, 1.0), (1, 1, -1.0), (1, 2, -1.0), (2, 2, -1.0)],
            phi_src: bracket(48.0),
        }
    }

    fn su(n: usize) -> Family {
        let nf = n as f64;
        let e1 = [-1.0 / nf, -1.0 / nf];
        let e2 = [-1.0 / nf, -(nf + 1.0) / nf];
        let bracket = |s: f64| {
            Source::new(
                s,
                vec![ExpTerm::new(nf, &[0.0, 0.0]), ExpTerm::new(-(nf + 1.0), &e1), ExpTerm::new(1.0, &e2)],
            )
        };
        Family {
            kind: SystemKind::SuInvariant,
            n,
            m: 2,
            alpha: vec![2.0 * nf - 1.0, nf - 1.0],
            beta: vec![2.0 * nf + 1.0, nf + 1.0],
            quad: vec![vec![(0, 0, 0.5)], vec![(0, 1, 0.5)]],
            src: vec![
                bracket(8.0 * (nf - 1.0)),
                Source::new(8.0 * (nf + 1.0), vec![ExpTerm::new(1.0, &e2), ExpTerm::new(-1.0, &e1)]),
            ],
            gamma: 4.0 * nf,
            phi_quad: vec![(0, 0, 1.0), (1, 1, -1.0)],
            phi_src: bracket(16.0 * nf),
        }
    }

    fn sp(n: usize) -> Family {
        let nf = n as f64;
        let inv = 1.0 / nf;
        // E = (K⁻¹ t₁t₂t₃)^(1/n); t_i = exp(y_{i+1}).
        let base = [-inv, inv, inv, inv];
        let ew = |d: [f64; 3]| [base[0], base[1] + d[0], base[2] + d[1], base[3] + d[2]];
        // n(n-1) - E[(n-3)(n+5) - (n-3)Σt + 2(2Σt_it_j - Σt_i²)/(t₁t₂t₃)]
        let big = |s: f64| {
            let mut t = vec![
                ExpTerm::new(nf * (nf - 1.0), &[0.0; 4]),
                ExpTerm::new(-(nf - 3.0) * (nf + 5.0), &ew([0.0, 0.0, 0.0])),
            ];
            for i in 0..3 {
                let mut d = [0.0; 3];
                d[i] = 1.0;
                t.push(ExpTerm::new(nf - 3.0, &ew(d)));
                // -4 t_j t_k/(t₁t₂t₃) = -4/t_i
                let mut d = [0.0; 3];
                d[i] = -1.0;
                t.push(ExpTerm::new(-4.0, &ew(d)));
                // +2 t_i²/(t₁t₂t₃) = 2 t_i/(t_j t_k)
                let mut d = [-1.0; 3];
                d[i] = 1.0;
                t.push(ExpTerm::new(2.0, &ew(d)));
            }
            Source::new(s, t)
        };
        // -8E[(n-1)t_i + 2t_j + 2t_k - n - 5 + 2(t_i² - (t_j - t_k)²)/(t₁t₂t₃)]
        let side = |i: usize| {
            let s = 1.0;
            let mut t = Vec::new();
            for j in 0..3 {
                let mut d = [0.0; 3];
                d[j] = 1.0;
                let c = if j == i { nf - 1.0 } else { 2.0 };
                t.push(ExpTerm::new(s * c, &ew(d)));
            }
            t.push(ExpTerm::new(-s * (nf + 5.0), &ew([0.0; 3])));
            // 2t_i/(t_j t_k)
            let mut d = [-1.0; 3];
            d[i] = 1.0;
            t.push(ExpTerm::new(2.0 * s, &ew(d)));
            // -2(t_j² + t_k²)/(t₁t₂t₃) + 4/t_i
            for j in 0..3 {
                if j == i {
                    continue;
                }
                let mut d = [-1.0; 3];
                d[j] = 1.0;
                t.push(ExpTerm::new(-2.0 * s, &ew(d)));
            }
            let mut d = [0.0; 3];
            d[i] = -1.0;
            t.push(ExpTerm::new(4.0 * s, &ew(d)));
            Source::new(-8.0, t)
        };
        let mut phi_quad = vec![(0, 0, 1.0)];
        let c = 1.0 / (nf - 1.0);
        for j in 1..4 {
            phi_quad.push((j, j, -1.0));
            for k in (j + 1)..4 {
                phi_quad.push((j, k, 2.0 * c));
            }
        }
        Family {
            kind: SystemKind::SpInvariant,
            n,
            m: 4,
            alpha: vec![2.0 * nf - 1.0, nf - 1.0, nf - 1.0, nf - 1.0],
            beta: vec![2.0 * nf + 1.0, nf + 1.0, nf + 1.0, nf + 1.0],
            quad: vec![vec![(0, 0, 0.5)], vec![(0, 1, 0.5)], vec![(0, 2, 0.5)], vec![(0, 3, 0.5)]],
            src: vec![big(8.0), side(0), side(1), side(2)],
            gamma: 4.0 * nf,
            phi_quad,
            phi_src: big(16.0 * nf / (nf - 1.0)),
        }
    }

    /// Ratio between the constraint and the difference of the two `y_1` equations.
    pub fn aux_ratio(&self) -> f64 {
        (self.n as f64 - 1.0) / (2.0 * self.n as f64)
    }

    fn check_state(&self, s: &StateVector) -> Result<()> {
        let m = self.m;
        if s.y.len() != m || s.yp.len() != m || s.ypp.len() != m {
            return usage(format!("{} state must have {m} components", self.kind.name()));
        }
        if !(0.0..=1.0).contains(&s.x) {
            return domain(format!("x = {} outside [0, 1]", s.x));
        }
        Ok(())
    }

    /// Residuals, in the form appropriate for `s.x`, with optional Jacobian.
    pub fn evaluate(&self, s: &StateVector, mut jac: Option<&mut StateJacobian>) -> Result<ResidualVector> {
        self.check_state(s)?;
        let m = self.m;
        let x = s.x;
        let w = 1.0 - x * x;
        // Coefficients of each term in the selected form. `damp` multiplies
        // (α + βx²) and acts on y' (or on y'' in the origin limit).
        let (form, scale, c_pp, damp, damp_on_ypp, c_quad, c_src) = if x > 1.0 - SWITCH_RADIUS {
            let sc = x * w * w;
            (ResidualForm::Regularized, sc, sc, w, false, sc, x)
        } else if x == 0.0 {
            (ResidualForm::OriginLimit, 1.0, 1.0, 1.0, true, 1.0, 1.0)
        } else if x < SWITCH_RADIUS {
            (ResidualForm::OriginLimit, 1.0, 1.0, 1.0 / (x * w), false, 1.0, 1.0 / (w * w))
        } else {
            (ResidualForm::Interior, 1.0, 1.0, 1.0 / (x * w), false, 1.0, 1.0 / (w * w))
        };
        let x2 = x * x;
        if let Some(j) = jac.as_deref_mut() {
            *j = StateJacobian::new(m);
        }
        let mut evo = vec![0.0; m];
        for i in 0..m {
            let dcoef = (self.alpha[i] + self.beta[i] * x2) * damp;
            let dv = if damp_on_ypp { s.ypp[i] } else { s.yp[i] };
            let mut r = c_pp * s.ypp[i] - dcoef * dv;
            for &(a, b, c) in &self.quad[i] {
                r += c_quad * c * s.yp[a] * s.yp[b];
            }
            let src = match jac.as_deref_mut() {
                Some(jm) => {
                    let row = &mut jm.dy[i * m..(i + 1) * m];
                    eval_terms_grad(&self.src[i], &s.y, c_src, row)
                }
                None => eval_terms(&self.src[i], &s.y),
            };
            r += c_src * src;
            evo[i] = r;
            if let Some(jm) = jac.as_deref_mut() {
                jm.dypp[i * m + i] += c_pp;
                if damp_on_ypp {
                    jm.dypp[i * m + i] -= dcoef;
                } else {
                    jm.dyp[i * m + i] -= dcoef;
                }
                for &(a, b, c) in &self.quad[i] {
                    jm.dyp[i * m + a] += c_quad * c * s.yp[b];
                    jm.dyp[i * m + b] += c_quad * c * s.yp[a];
                }
            }
        }
        let gcoef = self.gamma * (1.0 + x2) * damp;
        let gv = if damp_on_ypp { s.ypp[0] } else { s.yp[0] };
        let mut phi = -gcoef * gv;
        for &(a, b, c) in &self.phi_quad {
            phi += c_quad * c * s.yp[a] * s.yp[b];
        }
        let src = match jac.as_deref_mut() {
            Some(jm) => eval_terms_grad(&self.phi_src, &s.y, c_src, &mut jm.dy[m * m..]),
            None => eval_terms(&self.phi_src, &s.y),
        };
        phi += c_src * src;
        if let Some(jm) = jac.as_deref_mut() {
            if damp_on_ypp {
                jm.dypp[m * m] -= gcoef;
            } else {
                jm.dyp[m * m] -= gcoef;
            }
            for &(a, b, c) in &self.phi_quad {
                jm.dyp[m * m + a] += c_quad * c * s.yp[b];
                jm.dyp[m * m + b] += c_quad * c * s.yp[a];
            }
        }
        Ok(ResidualVector { evo, constraint: phi, form, scale })
    }

    /// Interior right-hand side `y'' = F(x, y, y')` with partials, row-major `m × m`.
    /// Only valid for `x` strictly inside `(0, 1)`.
    pub fn rhs(&self, x: f64, y: &[f64], yp: &[f64], f: &mut [f64], dfy: &mut [f64], dfyp: &mut [f64]) {
        let m = self.m;
        let w = 1.0 - x * x;
        let x2 = x * x;
        let inv = 1.0 / (x * w);
        let isrc = 1.0 / (w * w);
        dfy.iter_mut().for_each(|v| *v = 0.0);
        dfyp.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let d = (self.alpha[i] + self.beta[i] * x2) * inv;
            let mut r = d * yp[i];
            dfyp[i * m + i] += d;
            for &(a, b, c) in &self.quad[i] {
                r -= c * yp[a] * yp[b];
                dfyp[i * m + a] -= c * yp[b];
                dfyp[i * m + b] -= c * yp[a];
            }
            let src = eval_terms_grad(&self.src[i], y, -isrc, &mut dfy[i * m..(i + 1) * m]);
            r -= isrc * src;
            f[i] = r;
        }
    }

    /// Raw interior constraint with gradients in `y` and `y'`.
    pub fn constraint_interior(&self, x: f64, y: &[f64], yp: &[f64], gy: &mut [f64], gyp: &mut [f64]) -> f64 {
        let w = 1.0 - x * x;
        let isrc = 1.0 / (w * w);
        gy.iter_mut().for_each(|v| *v = 0.0);
        gyp.iter_mut().for_each(|v| *v = 0.0);
        let g = self.gamma * (1.0 + x * x) / (x * w);
        let mut phi = -g * yp[0];
        gyp[0] -= g;
        for &(a, b, c) in &self.phi_quad {
            phi += c * yp[a] * yp[b];
            gyp[a] += c * yp[b];
            gyp[b] += c * yp[a];
        }
        phi + isrc * eval_terms_grad(&self.phi_src, y, isrc, gy)
    }

    /// Source-free `y_1` equation, `evo_1 - (n-1)/(2n) Φ`, raw interior form.
    pub fn aux_residual(&self, s: &StateVector) -> Result<f64> {
        let r = self.evaluate(s, None)?;
        Ok(r.evo[0] - self.aux_ratio() * r.constraint)
    }

    /// Second derivatives at the origin forced by the equations when
    /// `y'(0) = 0`: `y_i''(0) = S_i(y(0)) / (α_i - 1)`.
    pub fn origin_second_derivatives(&self, y0: &[f64]) -> Vec<f64> {
        (0..self.m).map(|i| eval_terms(&self.src[i], y0) / (self.alpha[i] - 1.0)).collect()
    }

    /// Distinct slice directions: `(multiplicity, row of L)` with `log I_d = L·y`.
    pub fn slice_directions(&self) -> Vec<(usize, Vec<f64>)> {
        let nf = self.n as f64;
        match self.kind {
            SystemKind::GeneralizedBerger => vec![
                (1, vec![T3, -2.0 * T3, -T3]),
                (1, vec![T3, T3, -T3]),
                (1, vec![T3, T3, 2.0 * T3]),
            ],
            SystemKind::SuInvariant => {
                vec![(1, vec![1.0 / nf, (1.0 - nf) / nf]), (self.n - 1, vec![1.0 / nf, 1.0 / nf])]
            }
            SystemKind::SpInvariant => {
                let l4 = [1.0 / nf, -1.0 / nf, -1.0 / nf, -1.0 / nf];
                let mut out = Vec::new();
                for i in 0..3 {
                    let mut r = l4.to_vec();
                    r[i + 1] += 1.0;
                    out.push((1, r));
                }
                out.push((self.n - 3, l4.to_vec()));
                out
            }
        }
    }
}

/// Υ = K^(−1/3)[2(φ₁²φ₂)^(1/3) + 2(φ₁⁻¹φ₂)^(1/3) + 2(φ₁φ₂²)^(−1/3)
///              − φ₁^(−4/3)φ₂^(−2/3) − φ₁^(2/3)φ₂^(−2/3) − φ₁^(2/3)φ₂^(4/3)].
pub fn upsilon(k: f64, phi1: f64, phi2: f64) -> Result<f64> {
    if !(k > 0.0 && phi1 > 0.0 && phi2 > 0.0) {
        return domain("upsilon requires positive K, phi1, phi2");
    }
    Ok(upsilon_log(&[k.ln(), phi1.ln(), phi2.ln()]))
}

/// Υ in log variables.
pub fn upsilon_log(y: &[f64]) -> f64 {
    UPS_C.iter().zip(UPS_W.iter()).map(|(c, w)| c * dot(w, y).exp()).sum()
}

fn eval_kind(kind: SystemKind, n: usize, s: &StateVector) -> Result<ResidualVector> {
    Family::new(kind, n)?.evaluate(s, None)
}

pub fn residual_gberger(s: &StateVector) -> Result<ResidualVector> {
    eval_kind(SystemKind::GeneralizedBerger, 3, s)
}

pub fn constraint_gberger(s: &StateVector) -> Result<f64> {
    Ok(residual_gberger(s)?.constraint)
}

pub fn residual_su(n: usize, s: &StateVector) -> Result<ResidualVector> {
    eval_kind(SystemKind::SuInvariant, n, s)
}

pub fn constraint_su(n: usize, s: &StateVector) -> Result<f64> {
    Ok(residual_su(n, s)?.constraint)
}

pub fn residual_sp(n: usize, s: &StateVector) -> Result<ResidualVector> {
    eval_kind(SystemKind::SpInvariant, n, s)
}

pub fn constraint_sp(n: usize, s: &StateVector) -> Result<f64> {
    Ok(residual_sp(n, s)?.constraint)
}

pub fn jacobian_state(kind: SystemKind, n: usize, s: &StateVector) -> Result<StateJacobian> {
    let fam = Family::new(kind, n)?;
    let mut j = StateJacobian::new(fam.m);
    fam.evaluate(s, Some(&mut j))?;
    Ok(j)
}

/// The root of the n = 3 constraint, viewed as a quadratic in `y_1'`, that
/// stays finite as `x → 0`:
///
/// `y_1' = 6/(x(1-x²)) · [1 + x² - sqrt((1+x²)² + x²(1-x²)²/36 · Q - 4x²(3-Υ)/3)]`
///
/// with `Q = y_2'² + y_2'y_3' + y_3'²`.
pub fn y1prime_closed_form_gb(x: f64, yp2: f64, yp3: f64, ups: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return domain(format!("x = {x} outside (0, 1)"));
    }
    let w = 1.0 - x * x;
    let q = yp2 * yp2 + yp2 * yp3 + yp3 * yp3;
    let p = 1.0 + x * x;
    let rad = p * p + x * x * w * w * q / 36.0 - 4.0 * x * x * (3.0 - ups) / 3.0;
    if rad < 0.0 {
        return Err(CceError::Infeasible(format!("negative radicand {rad} in the y1' closed form")));
    }
    // Rationalized to avoid cancellation for small x.
    let num = -(x * x * w * w * q / 36.0 - 4.0 * x * x * (3.0 - ups) / 3.0);
    Ok(6.0 / (x * w) * num / (p + rad.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(x: f64, y: &[f64], yp: &[f64], ypp: &[f64]) -> StateVector {
        StateVector { x, y: y.to_vec(), yp: yp.to_vec(), ypp: ypp.to_vec() }
    }

    #[test]
    fn upsilon_examples() {
        assert_eq!(upsilon(1.0, 1.0, 1.0).unwrap(), 3.0);
        assert!((upsilon(1.0, 1.0, 8.0).unwrap() + 8.0).abs() < 1e-12);
        assert!((upsilon(8.0, 1.0, 1.0).unwrap() - 1.5).abs() < 1e-14);
        assert!(upsilon(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn constraint_gberger_plugin() {
        let s = st(0.5, &[0.0; 3], &[1.0, 0.0, 0.0], &[0.0; 3]);
        assert!((constraint_gberger(&s).unwrap() + 39.0).abs() < 1e-12);
    }

    #[test]
    fn su_sources_at_origin() {
        let s = st(0.0, &[0.0, 2f64.ln()], &[0.0; 2], &[0.0; 2]);
        let r = residual_su(3, &s).unwrap();
        let evo2 = 32.0 * 2f64.powf(-1.0 / 3.0) * (0.5 - 1.0);
        let evo1 = 16.0 * (3.0 - 4.0 * 2f64.powf(-1.0 / 3.0) + 2f64.powf(-4.0 / 3.0));
        assert!((r.evo[1] - evo2).abs() < 1e-12);
        assert!((r.evo[0] - evo1).abs() < 1e-12);
        assert_eq!(r.form, ResidualForm::OriginLimit);
    }

    #[test]
    fn sp_side_source() {
        let s = st(0.0, &[0.0, 2f64.ln(), 0.0, 0.0], &[0.0; 4], &[0.0; 4]);
        let r = residual_sp(7, &s).unwrap();
        let expect = -8.0 * 2f64.powf(1.0 / 7.0) * 8.0;
        assert!((r.evo[1] - expect).abs() < 1e-12, "{}", r.evo[1]);
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(y1prime_closed_form_gb(0.5, 0.0, 0.0, 3.0).unwrap(), 0.0);
        let v = y1prime_closed_form_gb(0.5, 1.0, 0.0, 3.0).unwrap();
        let oracle = 16.0 * (1.25 - (1.5625f64 + 0.25 * 0.5625 / 36.0).sqrt());
        assert!((v - oracle).abs() < 1e-14);
        assert!(y1prime_closed_form_gb(1e-9, 0.3, 0.2, 2.0).unwrap().abs() < 1e-8);
        assert!(y1prime_closed_form_gb(0.5, 0.0, 0.0, -20.0).is_err());
    }

    #[test]
    fn closed_form_is_root_of_constraint() {
        let y = [0.1, -0.2, 0.15];
        let ups = upsilon_log(&y);
        let (x, yp2, yp3) = (0.4, 0.3, -0.7);
        let y1p = y1prime_closed_form_gb(x, yp2, yp3, ups).unwrap();
        let s = st(x, &y, &[y1p, yp2, yp3], &[0.0; 3]);
        assert!(constraint_gberger(&s).unwrap().abs() < 1e-11);
    }

    #[test]
    fn dimension_guards() {
        assert!(Family::new(SystemKind::SuInvariant, 4).is_err());
        assert!(Family::new(SystemKind::SpInvariant, 5).is_err());
        assert!(Family::new(SystemKind::GeneralizedBerger, 5).is_err());
        let s = st(0.5, &[0.0; 2], &[0.0; 2], &[0.0; 2]);
        assert!(matches!(residual_gberger(&s), Err(CceError::Usage(_))));
        let s = st(1.5, &[0.0; 3], &[0.0; 3], &[0.0; 3]);
        assert!(matches!(residual_gberger(&s), Err(CceError::Domain(_))));
    }

    #[test]
    fn endpoints_are_finite() {
        for kind in [SystemKind::GeneralizedBerger, SystemKind::SuInvariant, SystemKind::SpInvariant] {
            let n = if kind == SystemKind::SuInvariant { 5 } else { if kind == SystemKind::SpInvariant { 7 } else { 3 } };
            let f = Family::new(kind, n).unwrap();
            for x in [0.0, 1.0] {
                let mut s = StateVector::zero(f.m, x);
                s.y[0] = 0.3;
                let r = f.evaluate(&s, None).unwrap();
                assert!(r.evo.iter().all(|v| v.is_finite()) && r.constraint.is_finite());
            }
        }
    }

    #[test]
    fn polynomial_probe_near_origin() {
        // y₁ = c x², y₂ = y₃ = 0: evo₁ = 2c - (5+7x²)/(x W)·2cx + 2c²x² + 0
        //                              = 2c - 2c(5 + 7x²)/W + 2c²x².
        // Expanded: -8c + x²(2c² - 24c) + O(x⁴).
        let c = 0.7;
        for x in [1e-2, 5e-3] {
            let s = st(x, &[c * x * x, 0.0, 0.0], &[2.0 * c * x, 0.0, 0.0], &[2.0 * c, 0.0, 0.0]);
            let mut r = residual_gberger(&s).unwrap();
            // remove the source contribution, which is exactly the source at y
            let f = Family::new(SystemKind::GeneralizedBerger, 3).unwrap();
            r.evo[0] -= eval_terms(&f.src[0], &s.y) / (1.0 - x * x).powi(2);
            let series = -8.0 * c + x * x * (2.0 * c * c - 24.0 * c);
            assert!((r.evo[0] - series).abs() < 50.0 * x.powi(4), "{} {}", r.evo[0], series);
        }
    }
}

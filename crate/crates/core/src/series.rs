//! Truncated power-series solutions at the two singular endpoints.
//!
//! Both recursions work on the equations multiplied through by `x(1-x²)²`.
//! The `y_1` column is driven by the constraint and the remaining columns
//! by their evolution equations.
//!
//! At `x = 0` the order-`k` coefficient enters the order-`k-1` coefficient of
//! its own row only, with factor `-γk` (constraint) or `k(k-1-α_i)`
//! (evolution). The evolution factor vanishes at `k = n`, where the free
//! nonlocal coefficients sit.
//!
//! At `x = 1`, in `s = 1 - x`, the order-`k` coefficients enter the order-`k`
//! row through `4k(k-1) + 2k(α_i+β_i)` (or `4γk`) plus the source gradient at
//! `y = 0`. The ratio rows are degenerate at `k = 2`, which leaves the `s²`
//! coefficients of `y_2..y_m` free.

use crate::error::{domain, usage, CceError, Result};
use crate::scalar::{solve_dense, Scalar};
use crate::systems::{eval_terms, BoundaryData, Family, Source, StateVector, SystemKind};

/// Largest distance from its endpoint at which a series may be evaluated.
pub const TRUST_RADIUS: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Origin,
    InfinityPoint,
}

/// Free coefficients: the `x^n` coefficients of `y_2..y_m` at the origin, or
/// the `(1-x)²` coefficients of `y_2..y_m` at `x = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlocalParams {
    pub coeffs: Vec<f64>,
}

impl NonlocalParams {
    pub fn zero(kind: SystemKind) -> NonlocalParams {
        NonlocalParams { coeffs: vec![0.0; kind.free_count()] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesCoefficients {
    pub kind: SystemKind,
    pub n: usize,
    pub endpoint: Endpoint,
    pub order: usize,
    /// `table[i][k]`: coefficient of `t^k` in `y_{i+1}`, with `t = x` or `t = 1-x`.
    pub table: Vec<Vec<f64>>,
    pub free: NonlocalParams,
}

fn mul_rr(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for j in 0..(n - i) {
            out[i + j] += ai * b[j];
        }
    }
    out
}

fn mul_rt<T: Scalar>(a: &[f64], b: &[T]) -> Vec<T> {
    let n = a.len();
    let mut out = vec![T::from_f64(0.0); n];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for j in 0..(n - i) {
            out[i + j] += b[j].scale(ai);
        }
    }
    out
}

fn mul_tt<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let n = a.len();
    let mut out = vec![T::from_f64(0.0); n];
    for i in 0..n {
        for j in 0..(n - i) {
            out[i + j] += a[i] * b[j];
        }
    }
    out
}

fn der<T: Scalar>(a: &[T], sgn: f64) -> Vec<T> {
    let n = a.len();
    let mut out = vec![T::from_f64(0.0); n];
    for k in 1..n {
        out[k - 1] = a[k].scale(sgn * k as f64);
    }
    out
}

fn texp<T: Scalar>(a: &[T]) -> Vec<T> {
    let n = a.len();
    let mut e = vec![T::from_f64(0.0); n];
    e[0] = a[0].exp();
    for k in 1..n {
        let mut s = T::from_f64(0.0);
        for j in 1..=k {
            s += (a[j] * e[k - j]).scale(j as f64);
        }
        e[k] = s.scale(1.0 / k as f64);
    }
    e
}

fn source<T: Scalar>(src: &Source, y: &[Vec<T>]) -> Vec<T> {
    let len = y[0].len();
    let mut out = vec![T::from_f64(0.0); len];
    for t in &src.terms {
        let mut lin = vec![T::from_f64(0.0); len];
        for (j, &w) in t.w.iter().enumerate() {
            if w != 0.0 {
                for k in 0..len {
                    lin[k] += y[j][k].scale(w);
                }
            }
        }
        let e = texp(&lin);
        for k in 0..len {
            out[k] += e[k].scale(t.coef);
        }
    }
    out.iter().map(|v| v.scale(src.scale)).collect()
}

/// Series of the multiplied residuals. Row 0 is the constraint, row `i ≥ 1`
/// the evolution equation of `y_{i+1}`.
fn residual_rows<T: Scalar>(fam: &Family, y: &[Vec<T>], at_one: bool) -> Vec<Vec<T>> {
    let len = y[0].len();
    let mut xs = vec![0.0; len];
    let sgn = if at_one {
        xs[0] = 1.0;
        if len > 1 {
            xs[1] = -1.0;
        }
        -1.0
    } else {
        if len > 1 {
            xs[1] = 1.0;
        }
        1.0
    };
    let x2 = mul_rr(&xs, &xs);
    let w: Vec<f64> = (0..len).map(|k| if k == 0 { 1.0 } else { 0.0 } - x2[k]).collect();
    let xw2 = mul_rr(&xs, &mul_rr(&w, &w));
    let yp: Vec<Vec<T>> = y.iter().map(|c| der(c, sgn)).collect();
    let mut rows = Vec::with_capacity(fam.m);

    let mut q = vec![T::from_f64(0.0); len];
    for &(a, b, c) in &fam.phi_quad {
        let p = mul_tt(&yp[a], &yp[b]);
        for k in 0..len {
            q[k] += p[k].scale(c);
        }
    }
    let damp: Vec<f64> = {
        let p: Vec<f64> = (0..len).map(|k| if k == 0 { 1.0 } else { 0.0 } + x2[k]).collect();
        mul_rr(&p, &w)
    };
    let mut r = mul_rt(&xw2, &q);
    let d = mul_rt(&damp, &yp[0]);
    let s = mul_rt(&xs, &source(&fam.phi_src, y));
    for k in 0..len {
        r[k] += s[k] - d[k].scale(fam.gamma);
    }
    rows.push(r);

    for i in 1..fam.m {
        let mut e = der(&yp[i], sgn);
        for &(a, b, c) in &fam.quad[i] {
            let p = mul_tt(&yp[a], &yp[b]);
            for k in 0..len {
                e[k] += p[k].scale(c);
            }
        }
        let ab: Vec<f64> = (0..len).map(|k| if k == 0 { fam.alpha[i] } else { 0.0 } + fam.beta[i] * x2[k]).collect();
        let dmp = mul_rt(&mul_rr(&ab, &w), &yp[i]);
        let s = mul_rt(&xs, &source(&fam.src[i], y));
        let mut r = mul_rt(&xw2, &e);
        for k in 0..len {
            r[k] += s[k] - dmp[k];
        }
        rows.push(r);
    }
    rows
}

/// Origin coefficient table. `y0[0]` is `log K(0)`, `y0[1..]` the log ratios;
/// `free` holds the `x^n` coefficients of `y_2..y_m`.
pub(crate) fn origin_table<T: Scalar>(fam: &Family, y0: &[T], free: &[T], order: usize) -> Result<Vec<Vec<T>>> {
    let m = fam.m;
    let n = fam.n;
    let mut y = vec![vec![T::from_f64(0.0); order + 1]; m];
    for i in 0..m {
        y[i][0] = y0[i];
    }
    for k in 1..=order {
        if k == n {
            for i in 1..m {
                y[i][k] = free[i - 1];
            }
        }
        let rows = residual_rows(fam, &y, false);
        let kf = k as f64;
        y[0][k] = -rows[0][k - 1].scale(1.0 / (-fam.gamma * kf));
        if k != n {
            for i in 1..m {
                let diag = kf * (kf - 1.0 - fam.alpha[i]);
                if diag == 0.0 {
                    return Err(CceError::Internal(format!("vanishing indicial factor at order {k}")));
                }
                y[i][k] = -rows[i][k - 1].scale(1.0 / diag);
            }
        }
    }
    Ok(y)
}

/// Source gradients at `y = 0`, rows ordered as in `residual_rows`.
fn source_jacobian_at_zero(fam: &Family) -> Vec<Vec<f64>> {
    let m = fam.m;
    let grad = |src: &Source| {
        let mut g = vec![0.0; m];
        for t in &src.terms {
            for j in 0..m {
                g[j] += src.scale * t.coef * t.w[j];
            }
        }
        g
    };
    let mut out = vec![grad(&fam.phi_src)];
    for i in 1..m {
        out.push(grad(&fam.src[i]));
    }
    out
}

/// Coefficient table at `x = 1` in powers of `s = 1 - x`; `free` holds the
/// `s²` coefficients of `y_2..y_m`.
pub(crate) fn infinity_table<T: Scalar>(fam: &Family, free: &[T], order: usize) -> Result<Vec<Vec<T>>> {
    let m = fam.m;
    let mut y = vec![vec![T::from_f64(0.0); order + 1]; m];
    let jac = source_jacobian_at_zero(fam);
    for k in 2..=order {
        let kf = k as f64;
        if k == 2 {
            for i in 1..m {
                y[i][2] = free[i - 1];
            }
        }
        let rows = residual_rows(fam, &y, true);
        let diag0 = 4.0 * fam.gamma * kf;
        if k == 2 {
            let d = diag0 + jac[0][0];
            y[0][2] = -rows[0][2].scale(1.0 / d);
            continue;
        }
        let mut a = vec![T::from_f64(0.0); m * m];
        let mut b = vec![T::from_f64(0.0); m];
        for r in 0..m {
            for c in 0..m {
                a[r * m + c] = T::from_f64(jac[r][c]);
            }
            let d = if r == 0 { diag0 } else { 4.0 * kf * (kf - 1.0) + 2.0 * kf * (fam.alpha[r] + fam.beta[r]) };
            a[r * m + r] += T::from_f64(d);
            b[r] = -rows[r][k];
        }
        if !solve_dense(&mut a, &mut b, m) {
            return Err(CceError::Internal(format!("singular order-{k} system at x = 1")));
        }
        for i in 0..m {
            y[i][k] = b[i];
        }
    }
    Ok(y)
}

/// Value, first and second derivative in `t` of `Σ c_k t^k` (Horner).
pub(crate) fn eval_poly<T: Scalar>(c: &[T], t: f64) -> (T, T, T) {
    let zero = T::from_f64(0.0);
    let (mut v, mut d, mut dd) = (zero, zero, zero);
    for k in (0..c.len()).rev() {
        dd = dd.scale(t) + d.scale(2.0);
        d = d.scale(t) + v;
        v = v.scale(t) + c[k];
    }
    (v, d, dd)
}

fn check_order(kind: SystemKind, n: usize, order: usize, min: usize) -> Result<Family> {
    let fam = Family::new(kind, n)?;
    if order < min {
        return usage(format!("series order {order} below minimum {min}"));
    }
    Ok(fam)
}

/// Origin expansion for boundary data `bd`, `log K(0) = log_k0` and free
/// nonlocal coefficients.
pub fn fg_series_origin(bd: &BoundaryData, log_k0: f64, free: &NonlocalParams, order: usize) -> Result<SeriesCoefficients> {
    let fam = check_order(bd.kind, bd.n, order, bd.n + 2)?;
    if free.coeffs.len() != bd.kind.free_count() {
        return usage("nonlocal parameter count does not match the family");
    }
    let mut y0 = vec![log_k0];
    y0.extend(bd.log_ratios());
    let table = origin_table(&fam, &y0, &free.coeffs, order)?;
    Ok(SeriesCoefficients { kind: bd.kind, n: bd.n, endpoint: Endpoint::Origin, order, table, free: free.clone() })
}

/// Expansion at `x = 1` with `y_i(1) = y_i'(1) = 0` and free `(1-x)²`
/// coefficients of the ratio variables.
pub fn series_infinity(kind: SystemKind, n: usize, free: &NonlocalParams, order: usize) -> Result<SeriesCoefficients> {
    let fam = check_order(kind, n, order, 3)?;
    if free.coeffs.len() != kind.free_count() {
        return usage("free coefficient count does not match the family");
    }
    let table = infinity_table(&fam, &free.coeffs, order)?;
    Ok(SeriesCoefficients { kind, n, endpoint: Endpoint::InfinityPoint, order, table, free: free.clone() })
}

pub fn evaluate_series(sc: &SeriesCoefficients, x: f64) -> Result<StateVector> {
    let (t, sgn) = match sc.endpoint {
        Endpoint::Origin => (x, 1.0),
        Endpoint::InfinityPoint => (1.0 - x, -1.0),
    };
    if !(0.0..=TRUST_RADIUS).contains(&t) || !(0.0..=1.0).contains(&x) {
        return domain(format!("x = {x} outside the series trust radius"));
    }
    let m = sc.table.len();
    let mut s = StateVector::zero(m, x);
    for i in 0..m {
        let (v, d, dd) = eval_poly(&sc.table[i], t);
        s.y[i] = v;
        s.yp[i] = sgn * d;
        s.ypp[i] = dd;
    }
    Ok(s)
}

/// Multiplied residual series of a coefficient table (diagnostic).
pub fn series_residual_table(sc: &SeriesCoefficients) -> Result<Vec<Vec<f64>>> {
    let fam = Family::new(sc.kind, sc.n)?;
    Ok(residual_rows(&fam, &sc.table, sc.endpoint == Endpoint::InfinityPoint))
}

/// Closed-form `y_i''(0)` forced by the equations at the origin.
pub fn origin_second_derivatives(bd: &BoundaryData, log_k0: f64) -> Result<Vec<f64>> {
    let fam = Family::for_data(bd)?;
    let mut y0 = vec![log_k0];
    y0.extend(bd.log_ratios());
    Ok(fam.origin_second_derivatives(&y0))
}

/// Source value helper for tests and checks.
pub fn source_at(fam: &Family, i: usize, y: &[f64]) -> f64 {
    eval_terms(&fam.src[i], y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{upsilon_log, ResidualForm};

    fn gb(p1: f64, p2: f64) -> BoundaryData {
        BoundaryData::new(SystemKind::GeneralizedBerger, 3, vec![p1, p2]).unwrap()
    }

    #[test]
    fn round_origin_series_is_zero() {
        for (kind, n) in [(SystemKind::GeneralizedBerger, 3), (SystemKind::SuInvariant, 5), (SystemKind::SpInvariant, 7)] {
            let bd = BoundaryData::round(kind, n).unwrap();
            let sc = fg_series_origin(&bd, 0.0, &NonlocalParams::zero(kind), n + 4).unwrap();
            assert!(sc.table.iter().flatten().all(|&c| c == 0.0), "{kind:?} {:?}", sc.table);
        }
    }

    #[test]
    fn zero_free_infinity_series_is_zero() {
        let sc = series_infinity(SystemKind::SuInvariant, 5, &NonlocalParams { coeffs: vec![0.0] }, 6).unwrap();
        assert!(sc.table.iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn gberger_origin_identities() {
        let bd = gb(0.9, 1.05);
        let b = -0.01;
        let sc = fg_series_origin(&bd, b, &NonlocalParams { coeffs: vec![0.3, -0.2] }, 9).unwrap();
        let y0 = [b, 0.9f64.ln(), 1.05f64.ln()];
        let ups = upsilon_log(&y0);
        assert!((2.0 * sc.table[0][2] - 4.0 * (3.0 - ups)).abs() < 1e-13);
        let (k, p1, p2) = (b.exp(), 0.9f64, 1.05f64);
        let c = 32.0 * k.powf(-1.0 / 3.0);
        let y2pp = c
            * (p1.powf(2.0 / 3.0) * p2.powf(1.0 / 3.0) - p1.powf(-1.0 / 3.0) * p2.powf(1.0 / 3.0)
                - p1.powf(2.0 / 3.0) * p2.powf(-2.0 / 3.0)
                + p1.powf(-4.0 / 3.0) * p2.powf(-2.0 / 3.0));
        let y3pp = c
            * (p1.powf(-1.0 / 3.0) * p2.powf(1.0 / 3.0) - p1.powf(-1.0 / 3.0) * p2.powf(-2.0 / 3.0)
                - p1.powf(2.0 / 3.0) * p2.powf(4.0 / 3.0)
                + p1.powf(2.0 / 3.0) * p2.powf(-2.0 / 3.0));
        assert!((2.0 * sc.table[1][2] - y2pp).abs() < 1e-12);
        assert!((2.0 * sc.table[2][2] - y3pp).abs() < 1e-12);
    }

    #[test]
    fn origin_parity_below_n() {
        let bd = BoundaryData::new(SystemKind::SuInvariant, 7, vec![0.8]).unwrap();
        let sc = fg_series_origin(&bd, -0.02, &NonlocalParams { coeffs: vec![1.3] }, 11).unwrap();
        for col in &sc.table {
            for k in (1..7).step_by(2) {
                assert_eq!(col[k], 0.0, "odd coefficient {k}");
            }
        }
        assert_eq!(sc.table[1][7], 1.3);
    }

    #[test]
    fn infinity_series_satisfies_all_equations() {
        // including the source-carrying y_1 equation, which the recursion never uses
        let fam = Family::new(SystemKind::GeneralizedBerger, 3).unwrap();
        let sc = series_infinity(SystemKind::GeneralizedBerger, 3, &NonlocalParams { coeffs: vec![0.2, -0.1] }, 10).unwrap();
        let mut prev = f64::INFINITY;
        for h in [0.1, 0.05, 0.025] {
            let x: f64 = 1.0 - h;
            let s = evaluate_series(&sc, x).unwrap();
            let r = fam.evaluate(&s, None).unwrap();
            let sc2 = x * (1.0 - x * x).powi(2);
            let worst = r.evo.iter().chain([&r.constraint]).fold(0.0f64, |a, v| a.max(sc2 * v.abs()));
            assert!(worst < prev, "{h} {worst} {prev}");
            prev = worst;
        }
        assert!(prev < 1e-12, "{prev}");
    }

    #[test]
    fn origin_series_satisfies_all_equations() {
        let fam = Family::new(SystemKind::SuInvariant, 5).unwrap();
        let bd = BoundaryData::new(SystemKind::SuInvariant, 5, vec![0.8]).unwrap();
        let sc = fg_series_origin(&bd, -0.0036, &NonlocalParams { coeffs: vec![20.0] }, 16).unwrap();
        let s = evaluate_series(&sc, 0.01).unwrap();
        let r = fam.evaluate(&s, None).unwrap();
        assert_eq!(r.form, ResidualForm::Interior);
        for v in r.evo.iter().chain([&r.constraint]) {
            assert!(v.abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn monomial_evaluation() {
        let mut table = vec![vec![0.0; 5]; 2];
        table[0][2] = 3.0;
        let sc = SeriesCoefficients {
            kind: SystemKind::SuInvariant,
            n: 3,
            endpoint: Endpoint::Origin,
            order: 4,
            table,
            free: NonlocalParams { coeffs: vec![0.0] },
        };
        let s = evaluate_series(&sc, 0.1).unwrap();
        assert!((s.y[0] - 0.03).abs() < 1e-16);
        assert!((s.yp[0] - 0.6).abs() < 1e-15);
        assert!((s.ypp[0] - 6.0).abs() < 1e-15);
        assert!(evaluate_series(&sc, 0.2).is_err());
    }
}

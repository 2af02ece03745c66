//! Metric reconstruction and curvature.
//!
//! Along the radial geodesic the metric is `dr² + Σ a_i² (θ^i)²` with
//! `a_i = ((1-x²)/(2x))·sqrt(I_i)`. Radial planes have curvature `-a_i''/a_i`
//! (derivatives in `r`). Tangential planes use the Gauss equation on the
//! geodesic spheres, whose intrinsic curvature is assembled from the jets of
//! the `SU(k+1)` Killing fields at the base point.

use crate::error::{usage, CceError, Result};
use crate::scalar::solve_dense;
use crate::solver::SolutionProfile;
use crate::systems::{upsilon_log, BoundaryData, Family, StateVector, SystemKind};

/// Slice metric along the geodesic, sampled at a set of `x` values.
#[derive(Clone, Debug)]
pub struct MetricProfile {
    pub kind: SystemKind,
    pub n: usize,
    pub x: Vec<f64>,
    /// Number of coordinate directions sharing each distinct component.
    pub multiplicity: Vec<usize>,
    /// `[node][direction]`
    pub i: Vec<Vec<f64>>,
    pub log_i: Vec<Vec<f64>>,
    pub log_i_x: Vec<Vec<f64>>,
    pub log_i_xx: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    /// `da/dr`
    pub a_r: Vec<Vec<f64>>,
    /// `d²a/dr²`
    pub a_rr: Vec<Vec<f64>>,
}

impl MetricProfile {
    /// Build from `log I_i` and its first two `x` derivatives.
    pub fn from_log_components(
        kind: SystemKind,
        n: usize,
        multiplicity: Vec<usize>,
        x: Vec<f64>,
        log_i: Vec<Vec<f64>>,
        log_i_x: Vec<Vec<f64>>,
        log_i_xx: Vec<Vec<f64>>,
    ) -> Result<MetricProfile> {
        let d = multiplicity.len();
        if log_i.len() != x.len() || log_i_x.len() != x.len() || log_i_xx.len() != x.len() {
            return usage("metric samples do not match the x grid");
        }
        if log_i.iter().chain(&log_i_x).chain(&log_i_xx).any(|r| r.len() != d) {
            return usage("metric samples do not match the direction count");
        }
        let mut mp = MetricProfile {
            kind,
            n,
            multiplicity,
            i: Vec::with_capacity(x.len()),
            a: Vec::with_capacity(x.len()),
            a_r: Vec::with_capacity(x.len()),
            a_rr: Vec::with_capacity(x.len()),
            x,
            log_i,
            log_i_x,
            log_i_xx,
        };
        for (j, &x) in mp.x.iter().enumerate() {
            if !(x > 0.0 && x < 1.0) {
                return Err(CceError::Domain(format!("metric sample at x = {x} outside (0, 1)")));
            }
            let w = 1.0 - x * x;
            let mut iv = vec![0.0; d];
            let mut av = vec![0.0; d];
            let mut arv = vec![0.0; d];
            let mut arrv = vec![0.0; d];
            for k in 0..d {
                let l = mp.log_i[j][k];
                iv[k] = l.exp();
                if !(iv[k].is_finite() && iv[k] > 0.0) || !mp.log_i_x[j][k].is_finite() || !mp.log_i_xx[j][k].is_finite() {
                    return Err(CceError::Infeasible(format!("non-finite slice metric at x = {x}")));
                }
                let (lp, lpp) = log_a_derivatives(x, mp.log_i_x[j][k], mp.log_i_xx[j][k]);
                av[k] = w / (2.0 * x) * (0.5 * l).exp();
                arv[k] = -x * lp * av[k];
                arrv[k] = (x * x * (lpp + lp * lp) + x * lp) * av[k];
            }
            mp.i.push(iv);
            mp.a.push(av);
            mp.a_r.push(arv);
            mp.a_rr.push(arrv);
        }
        Ok(mp)
    }

    /// Build from ODE states of a family.
    pub fn from_states(kind: SystemKind, n: usize, states: &[StateVector]) -> Result<MetricProfile> {
        let fam = Family::new(kind, n)?;
        let dirs = fam.slice_directions();
        let lin = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let mut log_i = Vec::new();
        let mut log_i_x = Vec::new();
        let mut log_i_xx = Vec::new();
        for s in states {
            if s.y.len() != fam.m {
                return usage("state has the wrong number of unknowns");
            }
            log_i.push(dirs.iter().map(|(_, w)| lin(w, &s.y)).collect());
            log_i_x.push(dirs.iter().map(|(_, w)| lin(w, &s.yp)).collect());
            log_i_xx.push(dirs.iter().map(|(_, w)| lin(w, &s.ypp)).collect());
        }
        MetricProfile::from_log_components(
            kind,
            n,
            dirs.iter().map(|(m, _)| *m).collect(),
            states.iter().map(|s| s.x).collect(),
            log_i,
            log_i_x,
            log_i_xx,
        )
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn directions(&self) -> usize {
        self.multiplicity.len()
    }

    /// Second fundamental form eigenvalue `a_i'/a_i` (in `r`).
    pub fn second_fundamental(&self, j: usize, k: usize) -> f64 {
        self.a_r[j][k] / self.a[j][k]
    }

    /// Coordinate direction index on the slice → distinct component index.
    pub fn component_of(&self, coord: usize) -> usize {
        let mut acc = 0;
        for (k, &m) in self.multiplicity.iter().enumerate() {
            acc += m;
            if coord < acc {
                return k;
            }
        }
        self.multiplicity.len() - 1
    }
}

/// `d/dx log a` and `d²/dx² log a` for `a = (1-x²)/(2x)·exp(L/2)`.
fn log_a_derivatives(x: f64, lx: f64, lxx: f64) -> (f64, f64) {
    let w = 1.0 - x * x;
    let lp = -2.0 * x / w - 1.0 / x + 0.5 * lx;
    let lpp = -2.0 * (1.0 + x * x) / (w * w) + 1.0 / (x * x) + 0.5 * lxx;
    (lp, lpp)
}

/// Metric along the mesh nodes of a solved profile.
pub fn reconstruct_metric(profile: &SolutionProfile) -> Result<MetricProfile> {
    let states: Vec<StateVector> = (0..profile.mesh.len()).map(|j| profile.state(j)).collect();
    MetricProfile::from_states(profile.bd.kind, profile.bd.n, &states)
}

/// `I_1 = (Kφ^(1-n))^(1/n)`, `I_2 = (Kφ)^(1/n)` (SU); `I_1 = (Kφ_1^-2 φ_2^-1)^(1/3)`,
/// `I_2 = I_1φ_1`, `I_3 = I_2φ_2` (generalized Berger).
pub fn slice_components(kind: SystemKind, n: usize, k: f64, phi: &[f64]) -> Result<Vec<f64>> {
    if !(k > 0.0) || phi.iter().any(|&p| !(p > 0.0)) || phi.len() != kind.free_count() {
        return usage("slice components need positive K and one positive ratio per free direction");
    }
    let fam = Family::new(kind, n)?;
    let mut y = vec![k.ln()];
    y.extend(phi.iter().map(|p| p.ln()));
    Ok(fam
        .slice_directions()
        .iter()
        .map(|(_, w)| w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect())
}

/// Sectional curvature of the plane `(∂r, e_k)` at node `j`.
pub fn radial_sectional(mp: &MetricProfile, k: usize, j: usize) -> f64 {
    -mp.a_rr[j][k] / mp.a[j][k]
}

/// Multiplicity-weighted sum of radial curvatures; `-n` for Einstein metrics.
pub fn radial_trace(mp: &MetricProfile, j: usize) -> f64 {
    (0..mp.directions()).map(|k| mp.multiplicity[k] as f64 * radial_sectional(mp, k, j)).sum()
}

/// `diag((n-1)I_1²I_2⁻², (n+1) - 2I_1I_2⁻¹, ...)`.
pub fn ricci_su(i1: f64, i2: f64, n: usize) -> Result<Vec<f64>> {
    SystemKind::SuInvariant.check_dimension(n)?;
    if !(i1 > 0.0 && i2 > 0.0) {
        return usage("ricci_su needs positive components");
    }
    let t = i1 / i2;
    let mut out = vec![(n as f64 - 1.0) * t * t];
    out.extend(std::iter::repeat((n as f64 + 1.0) - 2.0 * t).take(n - 1));
    Ok(out)
}

/// Ricci diagonal of the `Sp(k+1)`-invariant slice in the ratios `t_i = I_i/I_4`.
pub fn ricci_sp(t1: f64, t2: f64, t3: f64, n: usize) -> Result<Vec<f64>> {
    SystemKind::SpInvariant.check_dimension(n)?;
    if !(t1 > 0.0 && t2 > 0.0 && t3 > 0.0) {
        return usage("ricci_sp needs positive ratios");
    }
    let nf = n as f64;
    let e = |a: f64, b: f64, c: f64| 4.0 * nf * a * a + 2.0 * (a * a - (b - c) * (b - c)) / (b * c);
    let mut out = vec![e(t1, t2, t3), e(t2, t1, t3), e(t3, t1, t2)];
    out.extend(std::iter::repeat(4.0 * nf + 8.0 - 2.0 * (t1 + t2 + t3)).take(n - 3));
    Ok(out)
}

/// Value, first and second derivatives at the base point of a set of vector
/// fields written in the slice coordinates.
#[derive(Clone, Debug)]
pub struct KillingJet {
    pub n: usize,
    /// `X_q^m`, index `q*n + m`
    pub value: Vec<f64>,
    /// `∂_k X_q^m`, index `(q*n + m)*n + k`
    pub d1: Vec<f64>,
    /// `∂_k ∂_l X_q^m`, index `((q*n + m)*n + k)*n + l`
    pub d2: Vec<f64>,
}

impl KillingJet {
    /// Fields of `su(k+1)` complementary to `su(k)` on `S^(2k+1) ⊂ C^(k+1)` at
    /// `(1, 0, ..., 0)`, in the coordinates `(y_1, x_2, y_2, ..., x_(k+1), y_(k+1))`.
    pub fn su(k: usize) -> Result<KillingJet> {
        if k == 0 {
            return usage("su jets need k >= 1");
        }
        let n = 2 * k + 1;
        let c = k + 1;
        // complex matrices as (re, im) pairs, row-major c×c
        let mut mats: Vec<Vec<(f64, f64)>> = Vec::new();
        let mut diag = vec![(0.0, 0.0); c * c];
        diag[0] = (0.0, k as f64);
        for a in 1..c {
            diag[a * c + a] = (0.0, -1.0);
        }
        mats.push(diag);
        for a in 1..c {
            let mut v = vec![(0.0, 0.0); c * c];
            v[a] = (1.0, 0.0);
            v[a * c] = (-1.0, 0.0);
            mats.push(v);
            let mut w = vec![(0.0, 0.0); c * c];
            w[a] = (0.0, 1.0);
            w[a * c] = (0.0, 1.0);
            mats.push(w);
        }
        // real coordinate r ∈ {x_1, θ^1..θ^n}: unit z, then read the θ components of v z
        let unit = |r: usize| -> Vec<(f64, f64)> {
            let mut z = vec![(0.0, 0.0); c];
            if r == 0 {
                z[0] = (1.0, 0.0);
            } else if r == 1 {
                z[0] = (0.0, 1.0);
            } else {
                let a = r / 2;
                z[a] = if r % 2 == 0 { (1.0, 0.0) } else { (0.0, 1.0) };
            }
            z
        };
        let components = |v: &[(f64, f64)], z: &[(f64, f64)]| -> Vec<f64> {
            let mut w = vec![(0.0, 0.0); c];
            for a in 0..c {
                for b in 0..c {
                    let (vr, vi) = v[a * c + b];
                    let (zr, zi) = z[b];
                    w[a].0 += vr * zr - vi * zi;
                    w[a].1 += vr * zi + vi * zr;
                }
            }
            let mut out = vec![w[0].1];
            for wa in w.iter().skip(1) {
                out.push(wa.0);
                out.push(wa.1);
            }
            out
        };
        let mut jet = KillingJet { n, value: vec![0.0; n * n], d1: vec![0.0; n * n * n], d2: vec![0.0; n * n * n * n] };
        for (q, v) in mats.iter().enumerate() {
            // x_1 = sqrt(1 - |θ|²): value 1, gradient 0, Hessian -δ
            let s = components(v, &unit(0));
            for m in 0..n {
                jet.value[q * n + m] = s[m];
                for kk in 0..n {
                    jet.d2[((q * n + m) * n + kk) * n + kk] = -s[m];
                }
            }
            for kk in 0..n {
                let l = components(v, &unit(kk + 1));
                for m in 0..n {
                    jet.d1[(q * n + m) * n + kk] = l[m];
                }
            }
        }
        Ok(jet)
    }
}

/// `C_ij^p = Z_i^q ∂_j X_q^p` at the base point, its antisymmetrization `T`,
/// and their first derivatives.
#[derive(Clone, Debug)]
pub struct StructureConstants {
    pub n: usize,
    /// index `(i*n + j)*n + p`
    pub c: Vec<f64>,
    pub t: Vec<f64>,
    /// `∂_m C_ij^p`, index `((m*n + i)*n + j)*n + p`
    pub dc: Vec<f64>,
    pub dt: Vec<f64>,
}

fn invert(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        let mut m = a.to_vec();
        let mut b = vec![0.0; n];
        b[col] = 1.0;
        if !solve_dense(&mut m, &mut b, n) {
            return usage("Killing fields are not a frame at the base point");
        }
        for r in 0..n {
            inv[r * n + col] = b[r];
        }
    }
    Ok(inv)
}

impl StructureConstants {
    pub fn from_jet(jet: &KillingJet) -> Result<StructureConstants> {
        let n = jet.n;
        let z = invert(&jet.value, n)?;
        let idx3 = |i: usize, j: usize, p: usize| (i * n + j) * n + p;
        let idx4 = |m: usize, i: usize, j: usize, p: usize| ((m * n + i) * n + j) * n + p;
        let dx = |q: usize, p: usize, k: usize| jet.d1[(q * n + p) * n + k];
        let ddx = |q: usize, p: usize, k: usize, l: usize| jet.d2[((q * n + p) * n + k) * n + l];
        // ∂_m Z = -Z (∂_m X) Z
        let mut dz = vec![0.0; n * n * n];
        for m in 0..n {
            for i in 0..n {
                for s in 0..n {
                    let mut acc = 0.0;
                    for q in 0..n {
                        for r in 0..n {
                            acc -= z[i * n + q] * dx(q, r, m) * z[r * n + s];
                        }
                    }
                    dz[(m * n + i) * n + s] = acc;
                }
            }
        }
        let mut c = vec![0.0; n * n * n];
        let mut dc = vec![0.0; n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                for p in 0..n {
                    c[idx3(i, j, p)] = (0..n).map(|q| z[i * n + q] * dx(q, p, j)).sum();
                    for m in 0..n {
                        dc[idx4(m, i, j, p)] =
                            (0..n).map(|q| dz[(m * n + i) * n + q] * dx(q, p, j) + z[i * n + q] * ddx(q, p, j, m)).sum();
                    }
                }
            }
        }
        let mut sc = StructureConstants { n, t: vec![0.0; c.len()], dt: vec![0.0; dc.len()], c, dc };
        for i in 0..n {
            for j in 0..n {
                for p in 0..n {
                    sc.t[idx3(i, j, p)] = sc.c[idx3(i, j, p)] - sc.c[idx3(j, i, p)];
                    for m in 0..n {
                        sc.dt[idx4(m, i, j, p)] = sc.dc[idx4(m, i, j, p)] - sc.dc[idx4(m, j, i, p)];
                    }
                }
            }
        }
        Ok(sc)
    }

    /// Structure constants of the `SU((n+1)/2)`-invariant frame on `S^n`.
    pub fn su(n: usize) -> Result<StructureConstants> {
        if n < 3 || n % 2 == 0 {
            return usage("su structure constants need odd n >= 3");
        }
        StructureConstants::from_jet(&KillingJet::su((n - 1) / 2)?)
    }

    pub fn c(&self, i: usize, j: usize, p: usize) -> f64 {
        self.c[(i * self.n + j) * self.n + p]
    }

    pub fn t(&self, i: usize, j: usize, p: usize) -> f64 {
        self.t[(i * self.n + j) * self.n + p]
    }

    pub fn dt(&self, m: usize, i: usize, j: usize, p: usize) -> f64 {
        self.dt[((m * self.n + i) * self.n + j) * self.n + p]
    }

    pub fn dc(&self, m: usize, i: usize, j: usize, p: usize) -> f64 {
        self.dc[((m * self.n + i) * self.n + j) * self.n + p]
    }

    /// `T` antisymmetric and equal to the antisymmetrized `C` (also for derivatives).
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if self.c.len() != n * n * n || self.t.len() != n * n * n || self.dc.len() != n.pow(4) || self.dt.len() != n.pow(4) {
            return usage("structure constant arrays have the wrong size");
        }
        let tol = 1e-12;
        for i in 0..n {
            for j in 0..n {
                for p in 0..n {
                    if (self.t(i, j, p) + self.t(j, i, p)).abs() > tol
                        || (self.t(i, j, p) - self.c(i, j, p) + self.c(j, i, p)).abs() > tol
                    {
                        return usage(format!("T is not the antisymmetric part of C at ({i},{j},{p})"));
                    }
                    for m in 0..n {
                        if (self.dt(m, i, j, p) + self.dt(m, j, i, p)).abs() > tol {
                            return usage(format!("dT is not antisymmetric at ({m},{i},{j},{p})"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Curvature of a homogeneous slice at the base point.
#[derive(Clone, Debug)]
pub struct SliceCurvature {
    pub n: usize,
    pub h: Vec<f64>,
    /// `R_abcd = g(R(∂_c, ∂_d)∂_b, ∂_a)`, index `((a*n + b)*n + c)*n + d`
    pub riemann: Vec<f64>,
    /// Contraction of `riemann`, row-major `n×n`.
    pub ricci: Vec<f64>,
    /// Ricci from the displayed `(C, T)` formula, row-major `n×n`.
    pub ricci_display: Vec<f64>,
}

impl SliceCurvature {
    pub fn riemann_at(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let n = self.n;
        self.riemann[((a * n + b) * n + c) * n + d]
    }

    /// Sectional curvature of the coordinate plane `(∂_i, ∂_j)`.
    pub fn sectional(&self, i: usize, j: usize) -> f64 {
        self.riemann_at(i, j, i, j) / (self.h[i] * self.h[j])
    }

    pub fn ricci_at(&self, i: usize, j: usize) -> f64 {
        self.ricci[i * self.n + j]
    }
}

/// Full curvature of the invariant metric with diagonal `h` at the base point.
pub fn riemann_from_structure(sc: &StructureConstants, h: &[f64]) -> Result<SliceCurvature> {
    sc.validate()?;
    let n = sc.n;
    if h.len() != n || h.iter().any(|&v| !(v > 0.0)) {
        return usage("slice metric must be positive diagonal of matching size");
    }
    let i3 = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
    let i4 = |a: usize, b: usize, c: usize, d: usize| ((a * n + b) * n + c) * n + d;
    // ∂_q g_ij = -C_qi^m g_mj - C_qj^m g_mi
    let mut dg = vec![0.0; n * n * n];
    for q in 0..n {
        for i in 0..n {
            for j in 0..n {
                dg[i3(q, i, j)] = -sc.c(q, i, j) * h[j] - sc.c(q, j, i) * h[i];
            }
        }
    }
    // differentiate the same identity once more
    let mut ddg = vec![0.0; n.pow(4)];
    for k in 0..n {
        for q in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = -sc.dc(k, q, i, j) * h[j] - sc.dc(k, q, j, i) * h[i];
                    for m in 0..n {
                        acc -= sc.c(q, i, m) * dg[i3(k, m, j)] + sc.c(q, j, m) * dg[i3(k, m, i)];
                    }
                    ddg[i4(k, q, i, j)] = acc;
                }
            }
        }
    }
    // Christoffel symbols Γ^a_bc and their derivatives ∂_d Γ^a_bc
    let mut gam = vec![0.0; n * n * n];
    let mut dgam = vec![0.0; n.pow(4)];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let first = 0.5 * (dg[i3(b, c, a)] + dg[i3(c, b, a)] - dg[i3(a, b, c)]);
                gam[i3(a, b, c)] = first / h[a];
            }
        }
    }
    for d in 0..n {
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let dfirst = 0.5 * (ddg[i4(d, b, c, a)] + ddg[i4(d, c, b, a)] - ddg[i4(d, a, b, c)]);
                    // ∂(g^ae Γ_ebc) with ∂g^ae = -g^aa ∂g_ae g^ee
                    let mut acc = dfirst / h[a];
                    for e in 0..n {
                        let first_e = 0.5 * (dg[i3(b, c, e)] + dg[i3(c, b, e)] - dg[i3(e, b, c)]);
                        acc -= dg[i3(d, a, e)] / (h[a] * h[e]) * first_e;
                    }
                    dgam[i4(d, a, b, c)] = acc;
                }
            }
        }
    }
    // R^a_bcd = ∂_c Γ^a_db - ∂_d Γ^a_cb + Γ^a_ce Γ^e_db - Γ^a_de Γ^e_cb, lowered with h_a
    let mut riemann = vec![0.0; n.pow(4)];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut r = dgam[i4(c, a, d, b)] - dgam[i4(d, a, c, b)];
                    for e in 0..n {
                        r += gam[i3(a, c, e)] * gam[i3(e, d, b)] - gam[i3(a, d, e)] * gam[i3(e, c, b)];
                    }
                    riemann[i4(a, b, c, d)] = h[a] * r;
                }
            }
        }
    }
    let mut ricci = vec![0.0; n * n];
    for b in 0..n {
        for d in 0..n {
            ricci[b * n + d] = (0..n).map(|a| riemann[i4(a, b, a, d)] / h[a]).sum();
        }
    }
    let ricci_display = ricci_from_display(sc, h);
    Ok(SliceCurvature { n, h: h.to_vec(), riemann, ricci, ricci_display })
}

/// The displayed Ricci formula in `(C, T, ∂T)` for a diagonal metric, term by term.
fn ricci_from_display(sc: &StructureConstants, h: &[f64]) -> Vec<f64> {
    let n = sc.n;
    let c = |i, j, p| sc.c(i, j, p);
    let t = |i, j, p| sc.t(i, j, p);
    let dt = |m, i, j, p| sc.dt(m, i, j, p);
    let g = |i: usize, j: usize| if i == j { h[i] } else { 0.0 };
    let gi = |i: usize, j: usize| if i == j { 1.0 / h[i] } else { 0.0 };
    let r = 0..n;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            for p in r.clone() {
                v += 0.5 * dt(p, i, j, p);
                for q in r.clone() {
                    v += 0.5 * (c(i, p, q) * t(q, j, p) + c(q, j, p) * t(i, p, q) + c(q, p, p) * t(j, i, q));
                }
            }
            // the two g^{pq}(...)g_m· blocks
            let block = |a: usize, b: usize| -> f64 {
                let mut acc = 0.0;
                for p in r.clone() {
                    let q = p;
                    let gpq = gi(p, q);
                    for m in r.clone() {
                        let gmb = g(m, b);
                        if gmb == 0.0 {
                            continue;
                        }
                        let mut inner = dt(p, a, q, m);
                        for s in r.clone() {
                            inner += c(a, p, s) * t(s, q, m) + c(p, q, s) * t(a, s, m) - c(p, s, m) * t(a, q, s);
                        }
                        acc += gpq * inner * gmb;
                    }
                }
                acc
            };
            v -= 0.5 * block(i, j);
            v -= 0.5 * block(j, i);
            for p in r.clone() {
                for s in r.clone() {
                    v += 0.25 * t(p, i, s) * t(s, j, p);
                }
            }
            for p in r.clone() {
                let gpp = gi(p, p);
                for s in r.clone() {
                    v -= 0.25 * gpp * t(p, i, s) * t(s, p, j) * g(j, j);
                    v -= 0.25 * gpp * t(p, j, s) * t(s, p, i) * g(i, i);
                }
            }
            let trace_t: Vec<f64> = r.clone().map(|s| r.clone().map(|p| t(p, s, p)).sum()).collect();
            for s in r.clone() {
                let gss = gi(s, s);
                v -= 0.5 * gss * trace_t[s] * t(i, s, j) * g(j, j);
                v -= 0.5 * gss * trace_t[s] * t(j, s, i) * g(i, i);
            }
            for p in r.clone() {
                let gpp = gi(p, p);
                for s in r.clone() {
                    for m in r.clone() {
                        let gsm = g(s, m);
                        if gsm == 0.0 {
                            continue;
                        }
                        v += 0.25 * gpp * t(p, j, s) * t(i, p, m) * gsm;
                        v += 0.25 * gpp * t(p, i, s) * t(j, p, m) * gsm;
                    }
                }
            }
            for p in r.clone() {
                let l = p;
                let gpl = gi(p, l);
                for s in r.clone() {
                    let q = s;
                    let gsq = gi(s, q);
                    let left = t(j, l, s) * g(s, s) + t(s, l, j) * g(j, j);
                    let right = t(p, q, i) * g(i, i) + t(i, q, p) * g(p, p);
                    v -= 0.25 * gpl * left * gsq * right;
                }
            }
            out[i * n + j] = v;
        }
    }
    out
}

/// Slice frame and structure constants for a family whose tangential curvature is available.
#[derive(Clone, Debug)]
pub struct SliceModel {
    pub sc: StructureConstants,
    /// Coordinate direction → distinct component index.
    pub component: Vec<usize>,
}

impl SliceModel {
    /// `None` for families without a full slice model (Sp).
    pub fn for_family(kind: SystemKind, n: usize) -> Result<Option<SliceModel>> {
        match kind {
            SystemKind::GeneralizedBerger => Ok(Some(SliceModel { sc: StructureConstants::su(3)?, component: vec![0, 1, 2] })),
            SystemKind::SuInvariant => {
                let mut component = vec![0];
                component.extend(std::iter::repeat(1).take(n - 1));
                Ok(Some(SliceModel { sc: StructureConstants::su(n)?, component }))
            }
            SystemKind::SpInvariant => Ok(None),
        }
    }

    pub fn curvature(&self, comps: &[f64]) -> Result<SliceCurvature> {
        let h: Vec<f64> = self.component.iter().map(|&k| comps[k]).collect();
        riemann_from_structure(&self.sc, &h)
    }
}

/// Ambient curvature of a tangential plane from the intrinsic slice value:
/// `K_slice(g_r) - II_i II_j` with `g_r = (1-x²)²/(4x²) h̄`.
pub fn gauss_tangential(mp: &MetricProfile, slice_sectional_hbar: f64, i: usize, k: usize, j: usize) -> f64 {
    let x = mp.x[j];
    let w = 1.0 - x * x;
    slice_sectional_hbar * 4.0 * x * x / (w * w) - mp.second_fundamental(j, i) * mp.second_fundamental(j, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    /// `(∂r, e_i)` for distinct component `i`.
    Radial(usize),
    /// Coordinate plane `(∂θ_i, ∂θ_j)` of the slice.
    Tangential(usize, usize),
}

impl std::fmt::Display for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Plane::Radial(i) => write!(f, "radial-{}", i + 1),
            Plane::Tangential(i, j) => write!(f, "tangential-{}-{}", i + 1, j + 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureSample {
    pub x: f64,
    pub plane: Plane,
    pub value: f64,
}

/// All monitored plane curvatures at node `j`: radial planes for each
/// distinct component, and tangential coordinate planes (one representative
/// per distinct pair of components) when a slice model exists.
pub fn curvature_samples(mp: &MetricProfile, model: Option<&SliceModel>, j: usize) -> Result<Vec<CurvatureSample>> {
    let x = mp.x[j];
    let mut out: Vec<CurvatureSample> =
        (0..mp.directions()).map(|k| CurvatureSample { x, plane: Plane::Radial(k), value: radial_sectional(mp, k, j) }).collect();
    if let Some(model) = model {
        let sl = model.curvature(&mp.i[j])?;
        let n = model.component.len();
        let mut seen: Vec<(usize, usize, u64)> = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                let (ca, cb) = (model.component[a], model.component[b]);
                let ks = sl.sectional(a, b);
                // planes related by the isotropy action give identical values
                let key = (ca, cb, ks.to_bits());
                if seen.contains(&key) {
                    continue;
                }
                seen.push(key);
                out.push(CurvatureSample { x, plane: Plane::Tangential(a, b), value: gauss_tangential(mp, ks, ca, cb, j) });
            }
        }
    }
    Ok(out)
}

/// Ricci of the ambient metric along `e_a` (coordinate direction `a`): radial
/// plus all tangential planes through it. `-n` for Einstein metrics.
pub fn ambient_ricci_direction(mp: &MetricProfile, model: &SliceModel, j: usize, a: usize) -> Result<f64> {
    let sl = model.curvature(&mp.i[j])?;
    let ca = model.component[a];
    let mut acc = radial_sectional(mp, ca, j);
    for b in 0..model.component.len() {
        if b != a {
            acc += gauss_tangential(mp, sl.sectional(a, b), ca, model.component[b], j);
        }
    }
    Ok(acc)
}

/// Mixed Weyl component bound quantity for three-dimensional slices:
/// `2x²/(1-x²)·I_q^(-1/2)·|d/dx[I_i^(1/2)I_p^(-1/2) + I_i^(-1/2)I_p^(1/2) - I_i^(-1/2)I_p^(-1/2)I_q]|`.
pub fn weyl_mixed_n3(mp: &MetricProfile, i: usize, p: usize, q: usize, j: usize) -> Result<f64> {
    if mp.n != 3 || mp.directions() != 3 {
        return usage("weyl_mixed_n3 needs a three-component n = 3 profile");
    }
    let mut s = [i, p, q];
    s.sort_unstable();
    if s != [0, 1, 2] {
        return usage("(i, p, q) must be a permutation of the three directions");
    }
    let x = mp.x[j];
    let l = &mp.log_i[j];
    let d = &mp.log_i_x[j];
    // each term is exp(linear in log I); derivative = term · (linear in d log I)
    let term = |ci: f64, cp: f64, cq: f64| {
        let v = (ci * l[i] + cp * l[p] + cq * l[q]).exp();
        v * (ci * d[i] + cp * d[p] + cq * d[q])
    };
    let deriv = term(0.5, -0.5, 0.0) + term(-0.5, 0.5, 0.0) - term(-0.5, -0.5, 1.0);
    Ok(2.0 * x * x / (1.0 - x * x) * (-0.5 * l[q]).exp() * deriv.abs())
}

/// Bound used for `weyl_mixed_n3` on nonpositively curved profiles.
pub const WEYL_BOUND: f64 = 4.898_979_485_566_356; // 2√6

#[derive(Clone, Debug, PartialEq)]
pub struct K0Report {
    pub k0: f64,
    /// `None` when the family's lower bound is not available for this data.
    pub lower: Option<f64>,
    pub upper: f64,
    pub above_lower: bool,
    pub below_upper: bool,
    /// Round data: `K(0) = 1` is attained exactly.
    pub round_equality: bool,
}

impl K0Report {
    pub fn passes(&self) -> bool {
        if self.round_equality {
            return true;
        }
        self.below_upper && self.above_lower
    }
}

/// Lower bound on `K(0)` implied by the data, if the family provides one.
pub fn k0_lower_bound(bd: &BoundaryData) -> Option<f64> {
    match bd.kind {
        SystemKind::GeneralizedBerger => {
            let (p1, p2) = (bd.phi0[0], bd.phi0[1]);
            if !gberger_monotone_hypothesis(p1, p2) && !bd.is_round() {
                return None;
            }
            // Υ·K^(1/3) is K-independent
            let bracket = upsilon_log(&[0.0, p1.ln(), p2.ln()]);
            Some((bracket / 3.0).powi(3))
        }
        SystemKind::SuInvariant => {
            let (n, phi) = (bd.n as f64, bd.phi0[0]);
            if (n + 1.0) * phi <= 1.0 {
                return Some(0.0);
            }
            Some((((n + 1.0) * phi - 1.0) / (n * phi.powf((n + 1.0) / n))).powf(n))
        }
        SystemKind::SpInvariant => None,
    }
}

/// `φ_1(0) < 1`, `φ_1(0)φ_2(0) < 1` and `φ_1(0) + φ_1(0)φ_2(0) > 1`.
pub fn gberger_monotone_hypothesis(p1: f64, p2: f64) -> bool {
    p1 < 1.0 && p1 * p2 < 1.0 && p1 + p1 * p2 > 1.0
}

pub fn k0_bounds_check(bd: &BoundaryData, k0: f64) -> K0Report {
    let lower = k0_lower_bound(bd);
    let round_equality = bd.is_round() && (k0 - 1.0).abs() <= 1e-12;
    K0Report {
        k0,
        lower,
        upper: 1.0,
        above_lower: lower.map_or(true, |l| k0 > l),
        below_upper: k0 < 1.0,
        round_equality,
    }
}

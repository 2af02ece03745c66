//! Hermite–Simpson collocation on an interior mesh, closed by the endpoint
//! series, solved with damped Newton and sparse LU.
//!
//! Unknowns: `y` and `y'` at every node, `log K(0)`, the scaled origin
//! coefficients `a_i x_L^n` and the scaled `x = 1` coefficients `c_i (1-x_R)²`.
//! Residuals: Hermite–Simpson defects on every interval, value matching of
//! all components and derivative matching of `y_2..y_m` at both mesh ends,
//! and the constraint `Φ = 0` at the last node. The constraint then holds
//! on the whole mesh up to discretization error because it propagates.

use std::time::Instant;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use num_complex::Complex64;

use crate::error::{usage, CceError, Result};
use crate::series::{eval_poly, infinity_table, origin_table, Endpoint, NonlocalParams, SeriesCoefficients, TRUST_RADIUS};
use crate::systems::{BoundaryData, Family, StateVector};

const COMPLEX_STEP: f64 = 1e-30;
/// Extra full steps after the tolerance is met; kept only while they reduce the residual.
const POLISH_STEPS: usize = 2;
/// Refinement aims below the acceptance level `10·tol` to leave some margin.
const REFINE_GOAL: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Grading {
    Uniform,
    /// Smooth clustering at both mesh ends; end spacing is `1/stretch` of the mean.
    EndpointClustered { stretch: f64 },
    /// Produced by refinement.
    Adapted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<f64>,
    pub grading: Grading,
}

impl Mesh {
    pub fn new(count: usize, x_left: f64, x_right: f64, grading: Grading) -> Result<Mesh> {
        if count < 3 {
            return usage("mesh needs at least 3 nodes");
        }
        if !(x_left > 0.0 && x_left < x_right && x_right < 1.0) {
            return usage(format!("mesh span [{x_left}, {x_right}] must lie inside (0, 1)"));
        }
        if x_left > TRUST_RADIUS || 1.0 - x_right > TRUST_RADIUS {
            return usage("mesh ends must lie inside the series trust radii");
        }
        let len = x_right - x_left;
        let nodes = (0..count)
            .map(|j| {
                let xi = j as f64 / (count - 1) as f64;
                let t = match grading {
                    Grading::EndpointClustered { stretch } if stretch > 1.0 => {
                        let c = (stretch - 1.0) / stretch;
                        xi - c * (2.0 * std::f64::consts::PI * xi).sin() / (2.0 * std::f64::consts::PI)
                    }
                    _ => xi,
                };
                if j == 0 {
                    x_left
                } else if j == count - 1 {
                    x_right
                } else {
                    x_left + len * t
                }
            })
            .collect();
        Ok(Mesh { nodes, grading })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Mesh> {
        if nodes.len() < 3 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return usage("mesh nodes must be strictly increasing (at least 3)");
        }
        if !(nodes[0] > 0.0) || nodes[0] > TRUST_RADIUS || 1.0 - nodes[nodes.len() - 1] > TRUST_RADIUS || nodes[nodes.len() - 1] >= 1.0 {
            return usage("mesh ends must lie inside the series trust radii");
        }
        Ok(Mesh { nodes, grading: Grading::Adapted })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn left(&self) -> f64 {
        self.nodes[0]
    }

    pub fn right(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedMode {
    /// Smoothstep blend of the log boundary offsets.
    Blend,
    /// Identically zero interior guess.
    Zero,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub x_left: f64,
    pub x_right: f64,
    pub grading: Grading,
    pub origin_order: Option<usize>,
    pub infinity_order: usize,
    /// Refine until the constraint drift is at most `10·tol`.
    pub refine: bool,
    pub max_refinements: usize,
    pub max_nodes: usize,
    pub seed: SeedMode,
    pub homotopy_retry: bool,
    /// Allow the Sp family, which is not on the default solve path.
    pub experimental_sp: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            nodes: 128,
            tol: 1e-10,
            max_iter: 50,
            x_left: 0.05,
            x_right: 0.95,
            grading: Grading::EndpointClustered { stretch: 3.0 },
            origin_order: None,
            infinity_order: 12,
            refine: true,
            max_refinements: 16,
            max_nodes: 8192,
            seed: SeedMode::Blend,
            homotopy_retry: true,
            experimental_sp: false,
        }
    }
}

impl SolverOptions {
    pub fn origin_order_for(&self, n: usize) -> usize {
        self.origin_order.unwrap_or(n + 12)
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::new(self.nodes, self.x_left, self.x_right, self.grading)
    }
}

#[derive(Clone, Debug)]
pub struct SolutionProfile {
    pub bd: BoundaryData,
    pub mesh: Mesh,
    /// Per node, per unknown.
    pub y: Vec<Vec<f64>>,
    pub yp: Vec<Vec<f64>>,
    pub ypp: Vec<Vec<f64>>,
    pub log_k0: f64,
    pub free: NonlocalParams,
    pub infinity_free: NonlocalParams,
    pub origin: SeriesCoefficients,
    pub infinity: SeriesCoefficients,
    pub converged: bool,
    pub residual_norm: f64,
    pub tol: f64,
}

impl SolutionProfile {
    pub fn m(&self) -> usize {
        self.bd.kind.unknowns()
    }

    pub fn state(&self, j: usize) -> StateVector {
        StateVector { x: self.mesh.nodes[j], y: self.y[j].clone(), yp: self.yp[j].clone(), ypp: self.ypp[j].clone() }
    }

    /// Solution at any `x ∈ [0, 1]`: series outside the mesh, quintic Hermite
    /// interpolation of `(y, y', y'')` inside.
    pub fn state_at(&self, x: f64) -> Result<StateVector> {
        if !(0.0..=1.0).contains(&x) {
            return Err(CceError::Domain(format!("x = {x} outside [0, 1]")));
        }
        if x <= self.mesh.left() {
            return crate::series::evaluate_series(&self.origin, x);
        }
        if x >= self.mesh.right() {
            return crate::series::evaluate_series(&self.infinity, x);
        }
        let nodes = &self.mesh.nodes;
        let j = match nodes.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(j) => return Ok(self.state(j)),
            Err(j) => j - 1,
        };
        Ok(hermite5(nodes[j], nodes[j + 1], &self.state(j), &self.state(j + 1), x))
    }

    /// Sup-norm of `Φ` over the nodes.
    pub fn constraint_drift(&self) -> Result<f64> {
        let fam = Family::for_data(&self.bd)?;
        let mut worst = 0.0f64;
        for j in 0..self.mesh.len() {
            let r = fam.evaluate(&self.state(j), None)?;
            worst = worst.max(r.constraint.abs());
        }
        Ok(worst)
    }

    /// `y_i''(0)` from the attached origin series.
    pub fn origin_second_derivative(&self, i: usize) -> f64 {
        2.0 * self.origin.table[i].get(2).copied().unwrap_or(0.0)
    }
}

/// Quintic Hermite interpolation on `[xa, xb]`.
pub fn hermite5(xa: f64, xb: f64, a: &StateVector, b: &StateVector, x: f64) -> StateVector {
    let h = xb - xa;
    let t = (x - xa) / h;
    // basis polynomials in t: coefficients of t^0..t^5
    const B: [[f64; 6]; 6] = [
        [1.0, 0.0, 0.0, -10.0, 15.0, -6.0],
        [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],
        [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],
        [0.0, 0.0, 0.0, 0.5, -1.0, 0.5],
        [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],
        [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
    ];
    let mut v = [0.0; 6];
    let mut d = [0.0; 6];
    let mut dd = [0.0; 6];
    for (q, c) in B.iter().enumerate() {
        let (p0, p1, p2) = eval_poly(c, t);
        v[q] = p0;
        d[q] = p1 / h;
        dd[q] = p2 / (h * h);
    }
    let m = a.y.len();
    let mut s = StateVector::zero(m, x);
    for i in 0..m {
        let coef = [a.y[i], h * a.yp[i], h * h * a.ypp[i], h * h * b.ypp[i], h * b.yp[i], b.y[i]];
        for q in 0..6 {
            s.y[i] += coef[q] * v[q];
            s.yp[i] += coef[q] * d[q];
            s.ypp[i] += coef[q] * dd[q];
        }
    }
    s
}

#[derive(Clone, Debug, Default)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_norm: f64,
    /// Sup-norm residual after each accepted step (first entry: initial guess).
    pub residual_history: Vec<f64>,
    pub damping_history: Vec<f64>,
    pub refinements: usize,
    pub nodes: usize,
    pub constraint_drift: f64,
    pub wall_time: f64,
    pub converged: bool,
    pub message: Option<String>,
}

/// Discretized problem on a fixed mesh.
pub struct Collocation {
    pub fam: Family,
    pub bd: BoundaryData,
    pub mesh: Mesh,
    origin_order: usize,
    infinity_order: usize,
    a_scale: f64,
    c_scale: f64,
    logs: Vec<f64>,
}

struct EndpointEval {
    y: Vec<f64>,
    yp: Vec<f64>,
    /// `[param][component]`
    dy: Vec<Vec<f64>>,
    dyp: Vec<Vec<f64>>,
}

impl Collocation {
    pub fn new(bd: &BoundaryData, mesh: &Mesh, opts: &SolverOptions) -> Result<Collocation> {
        let fam = Family::for_data(bd)?;
        let xl = mesh.left();
        let sr = 1.0 - mesh.right();
        Ok(Collocation {
            a_scale: xl.powi(bd.n as i32),
            c_scale: sr * sr,
            logs: bd.log_ratios(),
            origin_order: opts.origin_order_for(bd.n),
            infinity_order: opts.infinity_order,
            fam,
            bd: bd.clone(),
            mesh: mesh.clone(),
        })
    }

    pub fn m(&self) -> usize {
        self.fam.m
    }

    /// Number of unknowns (equal to the number of residuals).
    pub fn len(&self) -> usize {
        let m = self.m();
        2 * m * self.mesh.len() + 2 * m - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn residual_count(&self) -> usize {
        let m = self.m();
        (2 * m - 1) + 2 * m * (self.mesh.len() - 1) + 2 * m
    }

    fn node_off(&self, j: usize) -> usize {
        self.m() + 2 * self.m() * j
    }

    fn c_off(&self) -> usize {
        self.m() + 2 * self.m() * self.mesh.len()
    }

    pub fn pack(&self, p: &SolutionProfile) -> Result<Vec<f64>> {
        if p.mesh.len() != self.mesh.len() || p.m() != self.m() {
            return usage("guess dimensions do not match the mesh");
        }
        let m = self.m();
        let mut u = vec![0.0; self.len()];
        u[0] = p.log_k0;
        for i in 1..m {
            u[i] = p.free.coeffs[i - 1] * self.a_scale;
        }
        for j in 0..self.mesh.len() {
            let o = self.node_off(j);
            for i in 0..m {
                u[o + i] = p.y[j][i];
                u[o + m + i] = p.yp[j][i];
            }
        }
        let c = self.c_off();
        for i in 1..m {
            u[c + i - 1] = p.infinity_free.coeffs[i - 1] * self.c_scale;
        }
        Ok(u)
    }

    fn origin_params(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.m();
        let mut y0 = vec![u[0]];
        y0.extend(&self.logs);
        let free = (1..m).map(|i| u[i] / self.a_scale).collect();
        (y0, free)
    }

    fn infinity_params(&self, u: &[f64]) -> Vec<f64> {
        let c = self.c_off();
        (0..self.m() - 1).map(|i| u[c + i] / self.c_scale).collect()
    }

    fn eval_origin(&self, u: &[f64], with_jac: bool) -> Result<EndpointEval> {
        let m = self.m();
        let (y0, free) = self.origin_params(u);
        let xl = self.mesh.left();
        let table = origin_table(&self.fam, &y0, &free, self.origin_order)?;
        let mut ev = EndpointEval { y: vec![0.0; m], yp: vec![0.0; m], dy: Vec::new(), dyp: Vec::new() };
        for i in 0..m {
            let (v, d, _) = eval_poly(&table[i], xl);
            ev.y[i] = v;
            ev.yp[i] = d;
        }
        if with_jac {
            for q in 0..m {
                let mut cy0: Vec<Complex64> = y0.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                let mut cfree: Vec<Complex64> = free.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                let unit = if q == 0 { 1.0 } else { 1.0 / self.a_scale };
                if q == 0 {
                    cy0[0].im = COMPLEX_STEP;
                } else {
                    cfree[q - 1].im = COMPLEX_STEP * unit;
                }
                let t = origin_table(&self.fam, &cy0, &cfree, self.origin_order)?;
                let mut dy = vec![0.0; m];
                let mut dyp = vec![0.0; m];
                for i in 0..m {
                    let (v, d, _) = eval_poly(&t[i], xl);
                    dy[i] = v.im / COMPLEX_STEP;
                    dyp[i] = d.im / COMPLEX_STEP;
                }
                ev.dy.push(dy);
                ev.dyp.push(dyp);
            }
        }
        Ok(ev)
    }

    fn eval_infinity(&self, u: &[f64], with_jac: bool) -> Result<EndpointEval> {
        let m = self.m();
        let c = self.infinity_params(u);
        let sr = 1.0 - self.mesh.right();
        let table = infinity_table(&self.fam, &c, self.infinity_order)?;
        let mut ev = EndpointEval { y: vec![0.0; m], yp: vec![0.0; m], dy: Vec::new(), dyp: Vec::new() };
        for i in 0..m {
            let (v, d, _) = eval_poly(&table[i], sr);
            ev.y[i] = v;
            ev.yp[i] = -d;
        }
        if with_jac {
            for q in 0..(m - 1) {
                let mut cc: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                cc[q].im = COMPLEX_STEP / self.c_scale;
                let t = infinity_table(&self.fam, &cc, self.infinity_order)?;
                let mut dy = vec![0.0; m];
                let mut dyp = vec![0.0; m];
                for i in 0..m {
                    let (v, d, _) = eval_poly(&t[i], sr);
                    dy[i] = v.im / COMPLEX_STEP;
                    dyp[i] = -d.im / COMPLEX_STEP;
                }
                ev.dy.push(dy);
                ev.dyp.push(dyp);
            }
        }
        Ok(ev)
    }

    /// Residual vector and, if requested, Jacobian triplets `(row, col, value)`.
    pub fn assemble(&self, u: &[f64], with_jac: bool) -> Result<(Vec<f64>, Vec<(usize, usize, f64)>)> {
        if u.len() != self.len() {
            return usage("unknown vector has the wrong length");
        }
        let m = self.m();
        let nn = self.mesh.len();
        let mut r = Vec::with_capacity(self.residual_count());
        let mut trip = Vec::new();

        // left matching
        let ev = self.eval_origin(u, with_jac)?;
        let o0 = self.node_off(0);
        for i in 0..m {
            let row = r.len();
            r.push(u[o0 + i] - ev.y[i]);
            if with_jac {
                trip.push((row, o0 + i, 1.0));
                for q in 0..m {
                    trip.push((row, q, -ev.dy[q][i]));
                }
            }
        }
        for i in 1..m {
            let row = r.len();
            r.push(u[o0 + m + i] - ev.yp[i]);
            if with_jac {
                trip.push((row, o0 + m + i, 1.0));
                for q in 0..m {
                    trip.push((row, q, -ev.dyp[q][i]));
                }
            }
        }

        // node right-hand sides
        let d = 2 * m;
        let mut f = vec![vec![0.0; d]; nn];
        let mut jf = vec![vec![0.0; d * d]; nn];
        let mut fy = vec![0.0; m];
        let mut dfy = vec![0.0; m * m];
        let mut dfyp = vec![0.0; m * m];
        for j in 0..nn {
            let o = self.node_off(j);
            let (y, yp) = (&u[o..o + m], &u[o + m..o + 2 * m]);
            self.fam.rhs(self.mesh.nodes[j], y, yp, &mut fy, &mut dfy, &mut dfyp);
            f[j][..m].copy_from_slice(yp);
            f[j][m..].copy_from_slice(&fy);
            fill_block(&mut jf[j], m, &dfy, &dfyp);
        }

        // Hermite–Simpson defects
        let mut zm = vec![0.0; d];
        let mut fm = vec![0.0; d];
        let mut jm = vec![0.0; d * d];
        for j in 0..nn - 1 {
            let (xa, xb) = (self.mesh.nodes[j], self.mesh.nodes[j + 1]);
            let h = xb - xa;
            let (oa, ob) = (self.node_off(j), self.node_off(j + 1));
            for k in 0..d {
                zm[k] = 0.5 * (u[oa + k] + u[ob + k]) + h / 8.0 * (f[j][k] - f[j + 1][k]);
            }
            self.fam.rhs(0.5 * (xa + xb), &zm[..m], &zm[m..], &mut fy, &mut dfy, &mut dfyp);
            fm[..m].copy_from_slice(&zm[m..]);
            fm[m..].copy_from_slice(&fy);
            let row0 = r.len();
            for k in 0..d {
                r.push(u[ob + k] - u[oa + k] - h / 6.0 * (f[j][k] + 4.0 * fm[k] + f[j + 1][k]));
            }
            if with_jac {
                fill_block(&mut jm, m, &dfy, &dfyp);
                // dz_m/dz_a = I/2 + h/8 J_a, dz_m/dz_b = I/2 - h/8 J_b
                for k in 0..d {
                    for c in 0..d {
                        let id = if k == c { 1.0 } else { 0.0 };
                        let mut ga = 0.0;
                        let mut gb = 0.0;
                        for l in 0..d {
                            let jml = jm[k * d + l];
                            if jml == 0.0 {
                                continue;
                            }
                            let la = if l == c { 0.5 } else { 0.0 } + h / 8.0 * jf[j][l * d + c];
                            let lb = if l == c { 0.5 } else { 0.0 } - h / 8.0 * jf[j + 1][l * d + c];
                            ga += jml * la;
                            gb += jml * lb;
                        }
                        let va = -id - h / 6.0 * (jf[j][k * d + c] + 4.0 * ga);
                        let vb = id - h / 6.0 * (jf[j + 1][k * d + c] + 4.0 * gb);
                        if va != 0.0 {
                            trip.push((row0 + k, oa + c, va));
                        }
                        if vb != 0.0 {
                            trip.push((row0 + k, ob + c, vb));
                        }
                    }
                }
            }
        }

        // right matching
        let ev = self.eval_infinity(u, with_jac)?;
        let on = self.node_off(nn - 1);
        let co = self.c_off();
        for i in 0..m {
            let row = r.len();
            r.push(u[on + i] - ev.y[i]);
            if with_jac {
                trip.push((row, on + i, 1.0));
                for q in 0..m - 1 {
                    trip.push((row, co + q, -ev.dy[q][i]));
                }
            }
        }
        for i in 1..m {
            let row = r.len();
            r.push(u[on + m + i] - ev.yp[i]);
            if with_jac {
                trip.push((row, on + m + i, 1.0));
                for q in 0..m - 1 {
                    trip.push((row, co + q, -ev.dyp[q][i]));
                }
            }
        }

        // constraint anchor at the last node, scaled by (1-x²)²
        let xr = self.mesh.right();
        let w2 = (1.0 - xr * xr).powi(2);
        let mut gy = vec![0.0; m];
        let mut gyp = vec![0.0; m];
        let phi = self.fam.constraint_interior(xr, &u[on..on + m], &u[on + m..on + 2 * m], &mut gy, &mut gyp);
        let row = r.len();
        r.push(w2 * phi);
        if with_jac {
            for i in 0..m {
                trip.push((row, on + i, w2 * gy[i]));
                trip.push((row, on + m + i, w2 * gyp[i]));
            }
        }
        debug_assert_eq!(r.len(), self.residual_count());
        Ok((r, trip))
    }

    pub fn unpack(&self, u: &[f64]) -> Result<SolutionProfile> {
        let m = self.m();
        let nn = self.mesh.len();
        let mut y = Vec::with_capacity(nn);
        let mut yp = Vec::with_capacity(nn);
        let mut ypp = Vec::with_capacity(nn);
        let mut fy = vec![0.0; m];
        let mut d1 = vec![0.0; m * m];
        let mut d2 = vec![0.0; m * m];
        for j in 0..nn {
            let o = self.node_off(j);
            let yj = u[o..o + m].to_vec();
            let ypj = u[o + m..o + 2 * m].to_vec();
            self.fam.rhs(self.mesh.nodes[j], &yj, &ypj, &mut fy, &mut d1, &mut d2);
            y.push(yj);
            yp.push(ypj);
            ypp.push(fy.clone());
        }
        let (y0, free) = self.origin_params(u);
        let c = self.infinity_params(u);
        let free = NonlocalParams { coeffs: free };
        let infinity_free = NonlocalParams { coeffs: c.clone() };
        let origin = SeriesCoefficients {
            kind: self.bd.kind,
            n: self.bd.n,
            endpoint: Endpoint::Origin,
            order: self.origin_order,
            table: origin_table(&self.fam, &y0, &free.coeffs, self.origin_order)?,
            free: free.clone(),
        };
        let infinity = SeriesCoefficients {
            kind: self.bd.kind,
            n: self.bd.n,
            endpoint: Endpoint::InfinityPoint,
            order: self.infinity_order,
            table: infinity_table(&self.fam, &c, self.infinity_order)?,
            free: infinity_free.clone(),
        };
        Ok(SolutionProfile {
            bd: self.bd.clone(),
            mesh: self.mesh.clone(),
            y,
            yp,
            ypp,
            log_k0: u[0],
            free,
            infinity_free,
            origin,
            infinity,
            converged: false,
            residual_norm: f64::NAN,
            tol: f64::NAN,
        })
    }
}

/// Jacobian of `f(z) = (y', F(y, y'))` as a dense `2m × 2m` row-major block.
fn fill_block(out: &mut [f64], m: usize, dfy: &[f64], dfyp: &[f64]) {
    let d = 2 * m;
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        out[i * d + m + i] = 1.0;
        for k in 0..m {
            out[(m + i) * d + k] = dfy[i * m + k];
            out[(m + i) * d + m + k] = dfyp[i * m + k];
        }
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| if x.is_nan() { f64::NAN } else { a.max(x.abs()) })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Residual vector and sparse Jacobian of the discretized problem at `guess`.
pub fn assemble_collocation(
    bd: &BoundaryData,
    mesh: &Mesh,
    guess: &SolutionProfile,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SparseColMat<usize, f64>)> {
    let col = Collocation::new(bd, mesh, opts)?;
    let u = col.pack(guess)?;
    let (r, trip) = col.assemble(&u, true)?;
    Ok((r, to_sparse(col.len(), &trip)?))
}

fn to_sparse(n: usize, trip: &[(usize, usize, f64)]) -> Result<SparseColMat<usize, f64>> {
    let t: Vec<Triplet<usize, usize, f64>> = trip.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
    SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t).map_err(|e| CceError::Internal(format!("sparse assembly: {e:?}")))
}

fn linear_solve(n: usize, trip: &[(usize, usize, f64)], rhs: &[f64]) -> Option<Vec<f64>> {
    let a = to_sparse(n, trip).ok()?;
    let lu = a.sp_lu().ok()?;
    let b = Col::<f64>::from_fn(n, |i| rhs[i]);
    let x = lu.solve(&b);
    let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
    if out.iter().all(|v| v.is_finite()) {
        Some(out)
    } else {
        None
    }
}

/// Damped Newton on a fixed mesh.
pub fn newton_solve(
    bd: &BoundaryData,
    mesh: &Mesh,
    guess: &SolutionProfile,
    tol: f64,
    max_iter: usize,
    opts: &SolverOptions,
) -> Result<(SolutionProfile, SolveReport)> {
    if !(tol > 0.0) {
        return usage("tolerance must be positive");
    }
    let start = Instant::now();
    let col = Collocation::new(bd, mesh, opts)?;
    let mut u = col.pack(guess)?;
    let mut report = SolveReport { nodes: mesh.len(), ..Default::default() };
    let (mut r, _) = col.assemble(&u, false)?;
    let mut norm = sup_norm(&r);
    report.residual_history.push(norm);
    let mut converged = norm <= tol;
    let mut polish = 0;
    while (!converged || polish < POLISH_STEPS) && report.iterations < max_iter {
        if converged {
            polish += 1;
        }
        let (_, trip) = col.assemble(&u, true)?;
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let Some(du) = linear_solve(col.len(), &trip, &neg) else {
            if !converged {
                report.message = Some("singular linearization".into());
            }
            break;
        };
        let base = l2(&r);
        let mut lambda = 1.0;
        let mut accepted = None;
        while lambda >= 2f64.powi(-20) {
            let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + lambda * b).collect();
            if let Ok((rt, _)) = col.assemble(&trial, false) {
                let n2 = l2(&rt);
                if n2.is_finite() && n2 <= (1.0 - 1e-4 * lambda) * base {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        report.iterations += 1;
        let Some((trial, rt)) = accepted else {
            if !converged {
                report.message = Some("line search failed at minimum damping".into());
            }
            break;
        };
        if converged && sup_norm(&rt) >= norm {
            break;
        }
        u = trial;
        r = rt;
        norm = sup_norm(&r);
        report.damping_history.push(lambda);
        report.residual_history.push(norm);
        converged = converged || norm <= tol;
    }
    if !converged && report.message.is_none() {
        report.message = Some(format!("no convergence in {max_iter} iterations"));
    }
    let mut profile = col.unpack(&u)?;
    profile.residual_norm = norm;
    profile.tol = tol;
    profile.converged = converged;
    report.residual_norm = norm;
    report.converged = converged;
    report.constraint_drift = profile.constraint_drift()?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((profile, report))
}

/// Initial guess on `mesh`: `y_1 = 0` and smoothstep blends of the log
/// boundary offsets, so that `y(0)`, `y(1)`, `y'(0)` and `y'(1)` are exact.
pub fn seed_profile(bd: &BoundaryData, mesh: &Mesh) -> Result<SolutionProfile> {
    seed_with(bd, mesh, SeedMode::Blend, &SolverOptions::default())
}

pub fn seed_with(bd: &BoundaryData, mesh: &Mesh, mode: SeedMode, opts: &SolverOptions) -> Result<SolutionProfile> {
    let col = Collocation::new(bd, mesh, opts)?;
    let m = col.m();
    let logs = bd.log_ratios();
    let mut u = vec![0.0; col.len()];
    if mode == SeedMode::Blend {
        for (j, &x) in mesh.nodes.iter().enumerate() {
            let o = col.node_off(j);
            let s = 1.0 - 3.0 * x * x + 2.0 * x * x * x;
            let ds = -6.0 * x + 6.0 * x * x;
            for i in 1..m {
                u[o + i] = logs[i - 1] * s;
                u[o + m + i] = logs[i - 1] * ds;
            }
        }
    }
    col.unpack(&u)
}

/// Transfer a profile onto another mesh (same data).
pub fn transfer(profile: &SolutionProfile, mesh: &Mesh) -> Result<SolutionProfile> {
    let m = profile.m();
    let mut out = profile.clone();
    out.mesh = mesh.clone();
    out.y = Vec::with_capacity(mesh.len());
    out.yp = Vec::with_capacity(mesh.len());
    out.ypp = Vec::with_capacity(mesh.len());
    for &x in &mesh.nodes {
        let s = profile.state_at(x)?;
        debug_assert_eq!(s.y.len(), m);
        out.y.push(s.y);
        out.yp.push(s.yp);
        out.ypp.push(s.ypp);
    }
    Ok(out)
}

/// Largest equation residual of the quintic interpolant between nodes, per interval.
pub fn interval_indicators(profile: &SolutionProfile) -> Result<Vec<f64>> {
    let fam = Family::for_data(&profile.bd)?;
    let nodes = &profile.mesh.nodes;
    let mut out = Vec::with_capacity(nodes.len() - 1);
    for j in 0..nodes.len() - 1 {
        let (a, b) = (profile.state(j), profile.state(j + 1));
        let mut worst = 0.0f64;
        for t in [0.25, 0.5, 0.75] {
            let x = nodes[j] + t * (nodes[j + 1] - nodes[j]);
            let s = hermite5(nodes[j], nodes[j + 1], &a, &b, x);
            let r = fam.evaluate(&s, None)?;
            for v in &r.evo {
                worst = worst.max(v.abs());
            }
        }
        out.push(worst);
    }
    Ok(out)
}

/// Insert interval midpoints wherever the between-node residual exceeds `target`.
pub fn refine_mesh(profile: &SolutionProfile, target: f64) -> Result<Mesh> {
    let ind = interval_indicators(profile)?;
    let nodes = &profile.mesh.nodes;
    if ind.iter().all(|&v| v <= target) {
        return Ok(profile.mesh.clone());
    }
    let mut out = Vec::with_capacity(2 * nodes.len());
    for j in 0..nodes.len() - 1 {
        out.push(nodes[j]);
        if ind[j] > target {
            out.push(0.5 * (nodes[j] + nodes[j + 1]));
        }
    }
    out.push(nodes[nodes.len() - 1]);
    Mesh::from_nodes(out)
}

/// Bisect every interval.
pub fn bisect_all(mesh: &Mesh) -> Result<Mesh> {
    let mut out = Vec::with_capacity(2 * mesh.len());
    for w in mesh.nodes.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(mesh.right());
    Mesh::from_nodes(out)
}

fn blend_halfway(bd: &BoundaryData) -> BoundaryData {
    BoundaryData { phi0: bd.phi0.iter().map(|p| p.sqrt()).collect(), ..bd.clone() }
}

/// Seed, Newton, and refinement until the constraint drift meets `10·tol`.
pub fn solve_bvp(bd: &BoundaryData, opts: &SolverOptions) -> Result<(SolutionProfile, SolveReport)> {
    let mesh = opts.mesh()?;
    let guess = seed_with(bd, &mesh, opts.seed, opts)?;
    solve_from(bd, &guess, opts)
}

/// As `solve_bvp`, starting from a given guess (warm start).
pub fn solve_from(bd: &BoundaryData, guess: &SolutionProfile, opts: &SolverOptions) -> Result<(SolutionProfile, SolveReport)> {
    if bd.kind == crate::systems::SystemKind::SpInvariant && !opts.experimental_sp {
        return usage("the sp family is only solved with the experimental option enabled");
    }
    let start = Instant::now();
    let mesh = guess.mesh.clone();
    let mut guess = guess.clone();
    guess.bd = bd.clone();
    let (mut profile, mut report) = newton_solve(bd, &mesh, &guess, opts.tol, opts.max_iter, opts)?;
    if !profile.converged && opts.homotopy_retry && !bd.is_round() {
        let mid = blend_halfway(bd);
        let g = seed_with(&mid, &mesh, opts.seed, opts)?;
        let (pm, rm) = newton_solve(&mid, &mesh, &g, opts.tol, opts.max_iter, opts)?;
        if pm.converged {
            let mut g2 = pm.clone();
            g2.bd = bd.clone();
            let (p2, r2) = newton_solve(bd, &mesh, &g2, opts.tol, opts.max_iter, opts)?;
            report.iterations += rm.iterations + r2.iterations;
            report.residual_history.extend(r2.residual_history);
            report.damping_history.extend(r2.damping_history);
            report.message = r2.message;
            profile = p2;
        }
    }
    let mut drift = profile.constraint_drift()?;
    if profile.converged && opts.refine {
        let mut stalled = false;
        while drift > REFINE_GOAL * opts.tol && report.refinements < opts.max_refinements {
            let new_mesh = if stalled {
                bisect_all(&profile.mesh)?
            } else {
                let ind = interval_indicators(&profile)?;
                let worst = ind.iter().cloned().fold(0.0f64, f64::max);
                // aim every interval at the level that would bring the drift under the goal
                let target = worst * (REFINE_GOAL * opts.tol / drift).min(0.5);
                refine_mesh(&profile, target)?
            };
            if new_mesh.len() == profile.mesh.len() || new_mesh.len() > opts.max_nodes {
                break;
            }
            let g = transfer(&profile, &new_mesh)?;
            let (p, r) = newton_solve(bd, &new_mesh, &g, opts.tol, opts.max_iter, opts)?;
            report.iterations += r.iterations;
            report.residual_history.extend(r.residual_history);
            report.damping_history.extend(r.damping_history);
            report.refinements += 1;
            if !p.converged {
                report.message = r.message;
                profile = p;
                break;
            }
            profile = p;
            let next = profile.constraint_drift()?;
            // the drift integrates local errors over the whole mesh; when targeted
            // insertion stops paying off fall back to uniform bisection
            stalled = next > drift / 4.0;
            drift = next;
        }
    }
    let converged = profile.converged && drift <= 10.0 * opts.tol;
    if profile.converged && !converged {
        report.message = Some(format!("constraint drift {drift:e} above 10*tol after refinement"));
    }
    profile.converged = converged;
    report.converged = converged;
    report.residual_norm = profile.residual_norm;
    report.constraint_drift = drift;
    report.nodes = profile.mesh.len();
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((profile, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::SystemKind;

    fn su5(phi: f64) -> BoundaryData {
        BoundaryData::new(SystemKind::SuInvariant, 5, vec![phi]).unwrap()
    }

    #[test]
    fn square_system() {
        for (kind, n) in [(SystemKind::GeneralizedBerger, 3), (SystemKind::SuInvariant, 7), (SystemKind::SpInvariant, 7)] {
            let bd = BoundaryData::round(kind, n).unwrap();
            for nodes in [5, 17, 64] {
                let opts = SolverOptions { nodes, ..Default::default() };
                let col = Collocation::new(&bd, &opts.mesh().unwrap(), &opts).unwrap();
                assert_eq!(col.len(), col.residual_count());
                let u = vec![0.0; col.len()];
                assert_eq!(col.assemble(&u, false).unwrap().0.len(), col.len());
            }
        }
    }

    #[test]
    fn round_zero_residual() {
        let bd = su5(1.0);
        let opts = SolverOptions::default();
        let mesh = opts.mesh().unwrap();
        let g = seed_profile(&bd, &mesh).unwrap();
        let (r, _) = assemble_collocation(&bd, &mesh, &g, &opts).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let bd = BoundaryData::new(SystemKind::GeneralizedBerger, 3, vec![0.9, 1.1]).unwrap();
        let opts = SolverOptions { nodes: 9, ..Default::default() };
        let col = Collocation::new(&bd, &opts.mesh().unwrap(), &opts).unwrap();
        let mut u: Vec<f64> = (0..col.len()).map(|k| 0.05 * ((k as f64) * 0.7).sin()).collect();
        u[1] = 1e-5;
        let (r0, trip) = col.assemble(&u, true).unwrap();
        let n = col.len();
        let mut dense = vec![0.0; n * n];
        for (r, c, v) in trip {
            dense[r * n + c] += v;
        }
        let mut worst = 0.0f64;
        for c in 0..n {
            let h = 1e-6 * (1.0 + u[c].abs());
            let mut up = u.clone();
            up[c] += h;
            let mut um = u.clone();
            um[c] -= h;
            let rp = col.assemble(&up, false).unwrap().0;
            let rm = col.assemble(&um, false).unwrap().0;
            for r in 0..n {
                let fd = (rp[r] - rm[r]) / (2.0 * h);
                let an = dense[r * n + c];
                let err = (fd - an).abs() / (1.0 + an.abs());
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-6, "max relative error {worst}");
        assert_eq!(r0.len(), n);
    }

    #[test]
    fn round_converges_immediately() {
        let bd = BoundaryData::round(SystemKind::GeneralizedBerger, 3).unwrap();
        let (p, rep) = solve_bvp(&bd, &SolverOptions::default()).unwrap();
        assert!(p.converged);
        assert!(rep.iterations <= 1);
        assert!(p.y.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn hermite5_reproduces_quintics() {
        let f = |x: f64| (x.powi(5) - 2.0 * x.powi(3) + x, 5.0 * x.powi(4) - 6.0 * x * x + 1.0, 20.0 * x.powi(3) - 12.0 * x);
        let st = |x: f64| {
            let (a, b, c) = f(x);
            StateVector { x, y: vec![a], yp: vec![b], ypp: vec![c] }
        };
        let s = hermite5(0.2, 0.5, &st(0.2), &st(0.5), 0.33);
        let (a, b, c) = f(0.33);
        assert!((s.y[0] - a).abs() < 1e-14 && (s.yp[0] - b).abs() < 1e-13 && (s.ypp[0] - c).abs() < 1e-12);
    }

    #[test]
    fn refine_keeps_resolved_mesh() {
        let bd = su5(1.0);
        let (p, _) = solve_bvp(&bd, &SolverOptions::default()).unwrap();
        assert_eq!(refine_mesh(&p, 1e-12).unwrap(), p.mesh);
    }
}

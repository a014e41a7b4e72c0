//! Boundary-layer hierarchy on the periodic strip (θ, Y), Y ∈ [Y_min, 0].
//!
//! θ plays the role of time: each layer order is marched with BDF2 on a refined
//! θ grid, and the periodic solution is the fixed point of the one-period map
//! (Newton-GMRES for the nonlinear leading order, GMRES for the affine orders).
//! The nonlocal normal velocity ∫_Y^0 ∂_θu is carried as an auxiliary unknown so
//! every step is a single banded solve.

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::euler::{CouetteParams, EulerCorrector};
use crate::fd::{cumtrapz, simpson_uniform, DiffOp};
use crate::gmres::gmres;
use crate::grid::LayerGrid;
use crate::spectral::{d_theta, irfft, rfft, CoordKind, Field};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub y_min: f64,
    pub dy: f64,
    /// θ marching steps per coarse θ interval
    pub substeps: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LayerConfig {
    fn default() -> Self {
        LayerConfig { y_min: -45.0, dy: 0.025, substeps: 16, tol: 1e-11, max_iter: 40 }
    }
}

/// One order of the layer hierarchy: u_p^{(i)}, v_p^{(i+1)}, p_p^{(i+1)}.
#[derive(Clone, Debug)]
pub struct PrandtlLayer {
    pub order: usize,
    pub u: Field,
    pub v: Field,
    pub p: Field,
    pub a_infty: f64,
    pub a_infty_spread: f64,
    /// far-field value removed from the leading order (truncation level)
    pub far_offset: f64,
    /// same data on the marching grid
    pub fine_u: Field,
    pub fine_v: Field,
    pub fine_p: Field,
    pub period_residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct LayerForcing {
    pub f_field: Field,
    pub g_field: Option<Field>,
}

// ---------------------------------------------------------------------------
// layout helpers

/// radial-major (Y, θ) -> θ-major columns
fn to_columns(f: &Field) -> Vec<f64> {
    let (ny, nt) = (f.n_radial(), f.n_theta);
    let mut out = vec![0.0; ny * nt];
    for j in 0..ny {
        for i in 0..nt {
            out[i * ny + j] = f.data[j * nt + i];
        }
    }
    out
}

fn from_columns(cols: &[f64], y: &Arc<Vec<f64>>, nt: usize) -> Field {
    let ny = y.len();
    let mut data = vec![0.0; ny * nt];
    for i in 0..nt {
        for j in 0..ny {
            data[j * nt + i] = cols[i * ny + j];
        }
    }
    Field { kind: CoordKind::Layer, n_theta: nt, radial: y.clone(), data }
}

/// Spectral resampling of every row to `n` angles (truncating or zero-padding);
/// the Nyquist mode of the smaller grid is dropped.
pub fn resample(f: &Field, n: usize) -> Field {
    let m_out = n / 2 + 1;
    let keep = (f.n_theta / 2).min(n / 2);
    let mut data = Vec::with_capacity(f.n_radial() * n);
    for j in 0..f.n_radial() {
        let c = rfft(f.row(j));
        let mut d = vec![Complex64::new(0.0, 0.0); m_out];
        d[..keep].copy_from_slice(&c[..keep]);
        data.extend(irfft(&d, n));
    }
    Field { kind: f.kind, n_theta: n, radial: f.radial.clone(), data }
}

/// Real field from half-amplitude modes, evaluated at n uniform angles (Nyquist dropped).
pub fn synth_modes(modes: &[Complex64], n: usize) -> Vec<f64> {
    let mut d = vec![Complex64::new(0.0, 0.0); n / 2 + 1];
    let keep = modes.len().min(n / 2);
    d[..keep].copy_from_slice(&modes[..keep]);
    irfft(&d, n)
}

fn y_ops(y: &[f64]) -> (DiffOp, DiffOp) {
    (DiffOp::new(y, 1), DiffOp::new(y, 2))
}

fn apply_y(op: &DiffOp, f: &Field) -> Field {
    Field { data: op.apply_strided(&f.data, f.n_theta), ..f.clone() }
}

fn theta_deriv(f: &Field) -> Field {
    Field { data: d_theta(&f.data, f.n_theta, 1), ..f.clone() }
}

// ---------------------------------------------------------------------------
// single BDF2 step

/// Assemble the step matrix for
///   a κ P + b P_Y + c P + d I − P_YY,   I_j − I_{j+1} − (dy/2) κ (P_j + P_{j+1})
/// with unknowns interleaved as (P_j, I_j); ∂_Y P = 0 at the far end.
fn step_matrix(dy: f64, kappa: f64, a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> BandMatrix<f64> {
    let ny = a.len();
    let n = 2 * ny;
    let mut m = BandMatrix::zeros(n, 2, 4);
    let idy2 = 1.0 / (dy * dy);
    let i2dy = 0.5 / dy;
    for j in 1..ny - 1 {
        let r = 2 * j;
        m.set(r, r - 2, -b[j] * i2dy - idy2);
        m.set(r, r, a[j] * kappa + c[j] + 2.0 * idy2);
        m.set(r, r + 2, b[j] * i2dy - idy2);
        m.set(r, r + 1, d[j]);
    }
    m.set(0, 0, -3.0 * i2dy);
    m.set(0, 2, 4.0 * i2dy);
    m.set(0, 4, -i2dy);
    m.set(2 * (ny - 1), 2 * (ny - 1), 1.0);
    let w = 0.5 * dy * kappa;
    for j in 0..ny - 1 {
        let r = 2 * j + 1;
        m.set(r, r, 1.0);
        m.set(r, r + 2, -1.0);
        m.set(r, r - 1, -w);
        m.set(r, r + 1, -w);
    }
    m.set(n - 1, n - 1, 1.0);
    m
}

/// Right-hand side for a linear step with history h = 4P^n − P^{n−1}.
fn step_rhs(dy: f64, kappa: f64, a: &[f64], f: &[f64], hist: &[f64], wall: f64) -> Vec<f64> {
    let ny = a.len();
    let mut rhs = vec![0.0; 2 * ny];
    let k3 = kappa / 3.0;
    for j in 1..ny - 1 {
        rhs[2 * j] = f[j] + a[j] * k3 * hist[j];
    }
    rhs[0] = 0.0;
    rhs[2 * (ny - 1)] = wall;
    let w = 0.5 * dy * k3;
    for j in 0..ny - 1 {
        rhs[2 * j + 1] = -w * (hist[j] + hist[j + 1]);
    }
    rhs
}

fn unpack(x: &[f64]) -> Vec<f64> {
    x.iter().step_by(2).copied().collect()
}

// ---------------------------------------------------------------------------
// affine period map

/// Coefficients of the linear layer operator on the marching grid (θ-major).
struct LinearCoeffs {
    ny: usize,
    nt: usize,
    dy: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    f: Vec<f64>,
    wall: Vec<f64>,
}

impl LinearCoeffs {
    fn col<'a>(&self, v: &'a [f64], i: usize) -> &'a [f64] {
        &v[i * self.ny..(i + 1) * self.ny]
    }

    /// March one period from (P^0, P^{-1}); returns (P^N, P^{N-1}) and optionally all levels.
    fn march(&self, x: &[f64], homogeneous: bool, keep: bool) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let ny = self.ny;
        let nt = self.nt;
        let kappa = 1.5 * nt as f64 / (2.0 * std::f64::consts::PI);
        let mut prev = x[ny..].to_vec();
        let mut cur = x[..ny].to_vec();
        let mut all = if keep { Some(vec![0.0; ny * nt]) } else { None };
        let zero = vec![0.0; ny];
        for step in 0..nt {
            let i = (step + 1) % nt;
            let (a, b, c, d) = (self.col(&self.a, i), self.col(&self.b, i), self.col(&self.c, i), self.col(&self.d, i));
            let hist: Vec<f64> = cur.iter().zip(&prev).map(|(p, q)| 4.0 * p - q).collect();
            let (f, wall) = if homogeneous { (&zero[..], 0.0) } else { (self.col(&self.f, i), self.wall[i]) };
            let rhs = step_rhs(self.dy, kappa, a, f, &hist, wall);
            let lu = step_matrix(self.dy, kappa, a, b, c, d)
                .factor()
                .ok_or(Error::Numerical(format!("singular layer step at θ index {i}")))?;
            let next = unpack(&lu.solve(&rhs));
            if let Some(all) = all.as_mut() {
                all[i * ny..(i + 1) * ny].copy_from_slice(&next);
            }
            prev = cur;
            cur = next;
        }
        let mut out = cur;
        out.extend(prev);
        Ok((out, all))
    }

    /// Periodic solution, θ-major.
    fn solve_periodic(&self, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize)> {
        let n = 2 * self.ny;
        let (c0, _) = self.march(&vec![0.0; n], false, false)?;
        let scale = c0.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let apply = |v: &[f64]| -> Vec<f64> {
            let (mv, _) = self.march(v, true, false).expect("factorization succeeded on the first march");
            v.iter().zip(&mv).map(|(a, b)| a - b).collect()
        };
        let out = gmres(apply, |v: &[f64]| v.to_vec(), &c0, None, tol, 60, max_iter * 60);
        let (end, all) = self.march(&out.x, false, true)?;
        let res = end.iter().zip(&out.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        if !out.converged && res > 100.0 * tol {
            return Err(Error::ConvergenceFailure {
                message: "period map of the linearized layer did not converge".into(),
                trace: vec![out.rel_residual, res],
            });
        }
        Ok((all.unwrap(), res, out.iterations))
    }
}

// ---------------------------------------------------------------------------
// leading order

struct LeadingMarch {
    ny: usize,
    nt: usize,
    dy: f64,
    u0: f64,
    wall: Vec<f64>,
}

struct LeadingTrajectory {
    end: Vec<f64>,
    cols: Vec<f64>,
    coeffs: LinearCoeffs,
}

impl LeadingMarch {
    fn march(&self, x: &[f64]) -> Result<LeadingTrajectory> {
        let (ny, nt, dy) = (self.ny, self.nt, self.dy);
        let kappa = 1.5 * nt as f64 / (2.0 * std::f64::consts::PI);
        let mut prev = x[ny..].to_vec();
        let mut cur = x[..ny].to_vec();
        let mut cols = vec![0.0; ny * nt];
        let mut co = LinearCoeffs {
            ny,
            nt,
            dy,
            a: vec![0.0; ny * nt],
            b: vec![0.0; ny * nt],
            c: vec![0.0; ny * nt],
            d: vec![0.0; ny * nt],
            f: vec![0.0; ny * nt],
            wall: vec![0.0; nt],
        };
        for step in 0..nt {
            let i = (step + 1) % nt;
            let hist: Vec<f64> = cur.iter().zip(&prev).map(|(p, q)| 4.0 * p - q).collect();
            let mut u: Vec<f64> = cur.iter().zip(&prev).map(|(p, q)| 2.0 * p - q).collect();
            u[ny - 1] = self.wall[i];
            let mut history = Vec::new();
            let mut ok = false;
            let (mut a, mut b, mut c, mut d) = (vec![0.0; ny], vec![0.0; ny], vec![0.0; ny], vec![0.0; ny]);
            for _ in 0..30 {
                let dd: Vec<f64> = u.iter().zip(&hist).map(|(u, h)| kappa * (u - h / 3.0)).collect();
                let mut w = vec![0.0; ny];
                for j in (0..ny - 1).rev() {
                    w[j] = w[j + 1] + 0.5 * dy * (dd[j] + dd[j + 1]);
                }
                let mut g = vec![0.0; 2 * ny];
                g[0] = (3.0 * u[0] - 4.0 * u[1] + u[2]) / (2.0 * dy);
                for j in 1..ny - 1 {
                    let uy = (u[j + 1] - u[j - 1]) / (2.0 * dy);
                    let uyy = (u[j + 1] - 2.0 * u[j] + u[j - 1]) / (dy * dy);
                    g[2 * j] = -((self.u0 + u[j]) * dd[j] + w[j] * uy - uyy);
                    a[j] = self.u0 + u[j];
                    b[j] = w[j];
                    c[j] = dd[j];
                    d[j] = uy;
                    if self.u0 + u[j] <= 0.0 {
                        return Err(Error::NonConvergence {
                            message: format!("total tangential velocity changed sign at θ index {i}"),
                            trace: history,
                        });
                    }
                }
                let gn = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                history.push(gn);
                let lu = step_matrix(dy, kappa, &a, &b, &c, &d)
                    .factor()
                    .ok_or(Error::Numerical("singular leading-order step".into()))?;
                let delta = unpack(&lu.solve(&g));
                let dn = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for (uj, dj) in u.iter_mut().zip(&delta) {
                    *uj += dj;
                }
                if dn <= 1e-14 * (1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::NonConvergence { message: "Newton failed inside a layer step".into(), trace: history });
            }
            // freeze the converged linearization for tangent marches
            let dd: Vec<f64> = u.iter().zip(&hist).map(|(u, h)| kappa * (u - h / 3.0)).collect();
            let mut w = vec![0.0; ny];
            for j in (0..ny - 1).rev() {
                w[j] = w[j + 1] + 0.5 * dy * (dd[j] + dd[j + 1]);
            }
            for j in 1..ny - 1 {
                let k = i * ny + j;
                co.a[k] = self.u0 + u[j];
                co.b[k] = w[j];
                co.c[k] = dd[j];
                co.d[k] = (u[j + 1] - u[j - 1]) / (2.0 * dy);
            }
            cols[i * ny..(i + 1) * ny].copy_from_slice(&u);
            prev = cur;
            cur = u;
        }
        let mut end = cur;
        end.extend(prev);
        Ok(LeadingTrajectory { end, cols, coeffs: co })
    }
}

fn solve_leading_periodic(m: &LeadingMarch, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize)> {
    let n = 2 * m.ny;
    let mut x = vec![0.0; n];
    let scale = m.wall.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return Ok((vec![0.0; m.ny * m.nt], 0.0, 0));
    }
    let mut trace = Vec::new();
    for it in 0..max_iter {
        let traj = m.march(&x)?;
        let f: Vec<f64> = x.iter().zip(&traj.end).map(|(a, b)| a - b).collect();
        let fnorm = f.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale;
        trace.push(fnorm);
        if fnorm <= tol {
            return Ok((traj.cols, fnorm, it));
        }
        let co = &traj.coeffs;
        let apply = |v: &[f64]| -> Vec<f64> {
            let (tv, _) = co.march(v, true, false).expect("tangent march");
            v.iter().zip(&tv).map(|(a, b)| a - b).collect()
        };
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let out = gmres(apply, |v: &[f64]| v.to_vec(), &rhs, None, 1e-3 * tol.max(1e-14) / fnorm.max(1e-300), 60, 1200);
        for (xi, di) in x.iter_mut().zip(&out.x) {
            *xi += di;
        }
        if it >= 2 && trace[it] > trace[it - 1] && trace[it - 1] > trace[it - 2] {
            return Err(Error::NonConvergence { message: "leading layer Newton diverging".into(), trace });
        }
    }
    Err(Error::ConvergenceFailure { message: "leading layer period map stagnated".into(), trace })
}

/// Solve the nonlinear leading-order layer with wall data α + ηϖ − (a+b).
pub fn solve_prandtl_leading(params: &CouetteParams, grid: &LayerGrid, cfg: &LayerConfig) -> Result<PrandtlLayer> {
    let nt = grid.n_theta * cfg.substeps;
    let y = grid.y_values.clone();
    let ny = y.len();
    let dy = grid.dy();
    let u0 = params.wall_speed();
    if u0 <= 0.0 {
        return Err(Error::Infeasible("wall speed a+b must be positive".into()));
    }
    let th = crate::spectral::thetas(nt);
    let mut wall: Vec<f64> = th.iter().map(|t| params.wall_data(*t) - u0).collect();
    band_limit(&mut wall, grid.n_theta);
    let m = LeadingMarch { ny, nt, dy, u0, wall };
    let (mut cols, res, iters) = solve_leading_periodic(&m, cfg.tol, cfg.max_iter)?;
    // The discrete layer settles on a far-field value that is zero only up to
    // truncation error; it is measured and removed so every derived field decays.
    let raw = from_columns(&cols, &y, nt);
    let (offset, spread) = estimate_a_infty(&raw);
    let amp = raw.sup();
    if amp > 0.0 && (offset.abs() > 1e-4 * amp || spread > 1e-6 * amp) {
        return Err(Error::Truncation(format!(
            "leading layer far field {offset:.3e} (spread {spread:.3e}) not negligible against amplitude {amp:.3e}"
        )));
    }
    for x in &mut cols {
        *x -= offset;
    }
    let u_fine = from_columns(&cols, &y, nt);
    let u_th = theta_deriv(&u_fine);
    let v_fine = integrate_from_bottom(&y, &u_th, -1.0);
    let integrand = u_fine.map2(&u_fine, |q, _| q * q + 2.0 * u0 * q);
    let p_fine = integrate_layer_pressure(&integrand)?;
    let mut layer = finish(0, u_fine, v_fine, p_fine, 0.0, 0.0, grid.n_theta, res, iters);
    layer.far_offset = offset;
    Ok(layer)
}

/// Zero all Fourier modes at or above n_coarse/2.
pub fn band_limit(row: &mut [f64], n_coarse: usize) {
    let n = row.len();
    let mut c = rfft(row);
    for ck in c.iter_mut().skip(n_coarse / 2) {
        *ck = Complex64::new(0.0, 0.0);
    }
    row.copy_from_slice(&irfft(&c, n));
}

#[allow(clippy::too_many_arguments)]
fn finish(order: usize, fu: Field, fv: Field, fp: Field, a_inf: f64, spread: f64, n_coarse: usize, res: f64, iters: usize) -> PrandtlLayer {
    PrandtlLayer {
        order,
        u: resample(&fu, n_coarse),
        v: resample(&fv, n_coarse),
        p: resample(&fp, n_coarse),
        a_infty: a_inf,
        a_infty_spread: spread,
        far_offset: 0.0,
        fine_u: fu,
        fine_v: fv,
        fine_p: fp,
        period_residual: res,
        iterations: iters,
    }
}

/// sign · ∫_{Y_min}^Y f dY' (trapezoid), row by row in θ.
fn integrate_from_bottom(y: &Arc<Vec<f64>>, f: &Field, sign: f64) -> Field {
    let cols = to_columns(f);
    let ny = y.len();
    let mut out = vec![0.0; cols.len()];
    for i in 0..f.n_theta {
        let c = cumtrapz(y, &cols[i * ny..(i + 1) * ny]);
        for j in 0..ny {
            out[i * ny + j] = sign * c[j];
        }
    }
    from_columns(&out, y, f.n_theta)
}

/// p(θ,Y) = ∫_{Y_min}^Y integrand, p(θ,Y_min) = 0.
pub fn integrate_layer_pressure(integrand: &Field) -> Result<Field> {
    let amp = integrand.sup();
    let tail = integrand.row(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if tail > 1e-6 * amp.min(1.0) && tail > 1e-14 {
        return Err(Error::Truncation(format!("pressure integrand tail {tail:.3e} at Y_min")));
    }
    Ok(integrate_from_bottom(&integrand.radial, integrand, 1.0))
}

// ---------------------------------------------------------------------------
// linearized orders

/// Wall values of a harmonic outer corrector, on the marching grid.
#[derive(Clone, Debug)]
pub struct WallTrace {
    pub u: Vec<f64>,
    pub u_th: Vec<f64>,
    pub v: Vec<f64>,
    pub v_th: Vec<f64>,
    pub v_r: Vec<f64>,
}

pub fn wall_trace(e: &EulerCorrector, n: usize) -> WallTrace {
    let mut m = e.clone();
    m.modifier = None;
    let md = m.modes(1.0);
    let ik: Vec<Complex64> = (0..md.u.len()).map(|k| Complex64::new(0.0, k as f64)).collect();
    let dth = |x: &[Complex64]| -> Vec<Complex64> { x.iter().zip(&ik).map(|(a, b)| a * b).collect() };
    WallTrace {
        u: synth_modes(&md.u, n),
        u_th: synth_modes(&dth(&md.u), n),
        v: synth_modes(&md.v, n),
        v_th: synth_modes(&dth(&md.v), n),
        v_r: synth_modes(&md.v_r, n),
    }
}

/// Leading-order data the linearized orders need, on the marching grid.
pub struct LayerBase {
    pub n_coarse: usize,
    pub u0: f64,
    pub u1: f64,
    pub q: Field,
    pub q_th: Field,
    pub q_y: Field,
    pub q_yy: Field,
    pub v1: Field,
    pub w0: Field,
}

impl LayerBase {
    pub fn new(params: &CouetteParams, lead: &PrandtlLayer, e1: &WallTrace) -> Self {
        let q = lead.fine_u.clone();
        let (d1, d2) = y_ops(&q.radial);
        let q_th = theta_deriv(&q);
        let q_y = apply_y(&d1, &q);
        let q_yy = apply_y(&d2, &q);
        let v1 = lead.fine_v.clone();
        let nt = q.n_theta;
        let mut w0 = v1.clone();
        for j in 0..v1.n_radial() {
            for i in 0..nt {
                w0.data[j * nt + i] += e1.v[i];
            }
        }
        LayerBase {
            n_coarse: lead.u.n_theta,
            u0: params.wall_speed(),
            u1: params.a - params.b,
            q,
            q_th,
            q_y,
            q_yy,
            v1,
            w0,
        }
    }

    pub fn y(&self) -> &Arc<Vec<f64>> {
        &self.q.radial
    }
}

/// f_1 of the order-one momentum equation (displayed form), on the marching grid.
pub fn forcing_order1(base: &LayerBase, p1: &Field, e1: &WallTrace) -> Field {
    let nt = base.q.n_theta;
    let y = base.y().clone();
    let p1_th = theta_deriv(p1);
    let mut f = Field::zeros(CoordKind::Layer, nt, y.clone());
    for j in 0..y.len() {
        let yy = y[j];
        for i in 0..nt {
            let k = j * nt + i;
            let q = base.q.data[k];
            let qy = base.q_y.data[k];
            let v1 = base.v1.data[k];
            f.data[k] = -p1_th.data[k] + yy * base.q_yy.data[k] + qy
                - q * (e1.u_th[i] + e1.v[i] + v1)
                - base.u1 * yy * base.q_th.data[k]
                - (e1.v_r[i] + e1.v[i]) * yy * qy
                - (base.u1 + yy * qy + base.u0) * v1;
        }
    }
    f
}

/// Integrand g_1 of the order-two pressure. The displayed formula carries a minus
/// sign in front of the last bracket; re-deriving the radial momentum balance at
/// order ε gives a plus sign, which is what is used here.
pub fn pressure_integrand_order1(base: &LayerBase, p1: &Field, u_p1: &Field, a1: f64, e1: &WallTrace) -> Field {
    let nt = base.q.n_theta;
    let y = base.y().clone();
    let (d1, d2) = y_ops(&y);
    let p1_y = apply_y(&d1, p1);
    let v1_y = apply_y(&d1, &base.v1);
    let v1_yy = apply_y(&d2, &base.v1);
    let v1_th = theta_deriv(&base.v1);
    let mut g = Field::zeros(CoordKind::Layer, nt, y.clone());
    for j in 0..y.len() {
        let yy = y[j];
        for i in 0..nt {
            let k = j * nt + i;
            let q = base.q.data[k];
            let ut = u_p1.data[k] - a1;
            g.data[k] = -yy * p1_y.data[k] + v1_yy.data[k]
                - base.u0 * v1_th.data[k]
                - q * (e1.v_th[i] + v1_th.data[k])
                - v1_y.data[k] * (e1.v[i] + base.v1.data[k])
                + 2.0 * (yy * base.u1 * q + base.u0 * ut + (e1.u[i] + a1) * q + q * ut);
        }
    }
    g
}


/// Radial jet of an outer field at the wall: entry k is ∂_r^k at r = 1 (no 1/k!).
#[derive(Clone, Debug)]
pub struct OuterJet {
    pub u: [Vec<f64>; 3],
    pub u_th: [Vec<f64>; 3],
    pub v: [Vec<f64>; 3],
    pub v_th: [Vec<f64>; 3],
    /// ∂_r^k (r ∂_r u), k = 0, 1
    pub ru: [Vec<f64>; 2],
}

impl OuterJet {
    /// Couette swirl a r + b/r.
    pub fn couette(params: &CouetteParams, n: usize) -> Self {
        let (a, b) = (params.a, params.b);
        let c = |x: f64| vec![x; n];
        let z = || vec![0.0; n];
        OuterJet {
            u: [c(a + b), c(a - b), c(2.0 * b)],
            u_th: [z(), z(), z()],
            v: [z(), z(), z()],
            v_th: [z(), z(), z()],
            // r u' = a r − b/r
            ru: [c(a - b), c(a + b)],
        }
    }

    /// Corrector plus a rigid rotation A r (the modifier near the wall).
    pub fn corrector(e: &EulerCorrector, a_rot: f64, n: usize) -> Self {
        let mut m = e.clone();
        m.modifier = None;
        let md = m.modes(1.0);
        let ik: Vec<Complex64> = (0..md.u.len()).map(|k| Complex64::new(0.0, k as f64)).collect();
        let dth = |x: &[Complex64]| -> Vec<Complex64> { x.iter().zip(&ik).map(|(a, b)| a * b).collect() };
        let s = |x: &[Complex64]| synth_modes(x, n);
        let mut u = [s(&md.u), s(&md.u_r), s(&md.u_rr)];
        let ru = [s(&md.u_r), u[1].iter().zip(&u[2]).map(|(a, b)| a + b).collect::<Vec<_>>()];
        let mut ru = ru;
        for x in &mut u[0] {
            *x += a_rot;
        }
        for x in &mut u[1] {
            *x += a_rot;
        }
        for x in &mut ru[0] {
            *x += a_rot;
        }
        for x in &mut ru[1] {
            *x += a_rot;
        }
        OuterJet {
            u,
            u_th: [s(&dth(&md.u)), s(&dth(&md.u_r)), s(&dth(&md.u_rr))],
            v: [s(&md.v), s(&md.v_r), s(&md.v_rr)],
            v_th: [s(&dth(&md.v)), s(&dth(&md.v_r)), s(&dth(&md.v_rr))],
            ru,
        }
    }
}

/// A layer field with the derivatives the order-two sums use.
struct LayerJet {
    f: Field,
    th: Field,
    y: Field,
    yy: Field,
}

impl LayerJet {
    fn new(f: &Field, shift: f64) -> Self {
        let f = Field { data: f.data.iter().map(|x| x - shift).collect(), ..f.clone() };
        let (d1, d2) = y_ops(&f.radial);
        LayerJet { th: theta_deriv(&f), y: apply_y(&d1, &f), yy: apply_y(&d2, &f), f }
    }
    fn zero(like: &Field) -> Self {
        let z = Field::zeros(CoordKind::Layer, like.n_theta, like.radial.clone());
        LayerJet { f: z.clone(), th: z.clone(), y: z.clone(), yy: z }
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).product::<usize>() as f64
}

/// Inputs shared by f_2 and g_2: outer jets ũ_e^{(0..2)}, tangential layers ũ_p^{(0..2)},
/// radial layers v_p^{(0..2)} (v_p^{(0)} = 0) and pressures p_p^{(1..2)}.
pub struct OrderTwoData {
    ue: Vec<OuterJet>,
    up: Vec<LayerJet>,
    vp: Vec<LayerJet>,
    pp: Vec<LayerJet>,
    /// E_2 = u_e^{(2)}(θ,1), unmodified
    e2: Vec<f64>,
}

impl OrderTwoData {
    /// `layers` holds orders 0 and 1 (with p_p^{(2)} attached to order 1); `u_p2` is
    /// the order-two tangential layer when known. `a2` is A_{2∞} (0 for f_2).
    pub fn new(
        params: &CouetteParams,
        layers: &[PrandtlLayer],
        eulers: &[EulerCorrector],
        u_p2: Option<&PrandtlLayer>,
        a2: f64,
    ) -> Self {
        let q = &layers[0].fine_u;
        let n = q.n_theta;
        let a1 = layers[1].a_infty;
        let ue = vec![
            OuterJet::couette(params, n),
            OuterJet::corrector(&eulers[0], a1, n),
            OuterJet::corrector(&eulers[1], a2, n),
        ];
        let up = vec![
            LayerJet::new(q, 0.0),
            LayerJet::new(&layers[1].fine_u, a1),
            match u_p2 {
                Some(l) => LayerJet::new(&l.fine_u, a2),
                None => LayerJet::zero(q),
            },
        ];
        let vp = vec![LayerJet::zero(q), LayerJet::new(&layers[0].fine_v, 0.0), LayerJet::new(&layers[1].fine_v, 0.0)];
        let pp = vec![LayerJet::zero(q), LayerJet::new(&layers[0].fine_p, 0.0), LayerJet::new(&layers[1].fine_p, 0.0)];
        let e2 = OuterJet::corrector(&eulers[1], 0.0, n).u[0].clone();
        OrderTwoData { ue, up, vp, pp, e2 }
    }
}

/// f_2 of the order-two momentum equation, sums taken term by term from the display.
pub fn forcing_order2(d: &OrderTwoData) -> Field {
    let q = &d.up[0];
    let nt = q.f.n_theta;
    let y = q.f.radial.clone();
    let mut f = Field::zeros(CoordKind::Layer, nt, y.clone());
    let (up, vp, ue) = (&d.up, &d.vp, &d.ue);
    for j in 0..y.len() {
        let yy = y[j];
        for i in 0..nt {
            let k = j * nt + i;
            // ∂_θθ u_p^{(0)} − u_p^{(0)} is added after the loop
            let mut s = -d.pp[2].th.data[k] + yy * up[1].yy.data[k] + up[1].y.data[k];
            s -= up[1].f.data[k] * up[1].th.data[k];
            s -= vp[2].f.data[k] * up[1].y.data[k];
            for (iv, ju) in [(1, 1), (2, 0)] {
                s -= vp[iv].f.data[k] * yy * up[ju].y.data[k];
            }
            for kk in 0..=2usize {
                let w = yy.powi(kk as i32) / factorial(kk);
                for ie in 0..=(2 - kk) {
                    let jp = 2 - kk - ie;
                    if kk == 0 && jp == 2 {
                        continue;
                    }
                    s -= w * (ue[ie].u[kk][i] * up[jp].th.data[k] + up[jp].f.data[k] * ue[ie].u_th[kk][i]);
                }
            }
            s += d.e2[i] * q.th.data[k];
            for kk in 0..=1usize {
                let w = yy.powi(kk as i32) / factorial(kk);
                for ie in 0..=(2 - kk) {
                    let jp = 2 - kk - ie;
                    s -= w * (ue[ie].v[kk][i] * yy * up[jp].y.data[k] + vp[ie].f.data[k] * ue[jp].ru[kk][i]);
                }
            }
            for kk in 0..=2usize {
                let w = yy.powi(kk as i32) / factorial(kk);
                for ie in 0..=(3 - kk) {
                    let jp = 3 - kk - ie;
                    if jp > 2 || ie > 2 || (kk == 0 && (jp == 2 || jp == 0)) {
                        continue;
                    }
                    s -= w * ue[ie].v[kk][i] * up[jp].y.data[k];
                }
            }
            // The display has no counterpart of the uv products that f_1 carries; the
            // ε² balance needs them: Σ (∂_r^k ũ_e^{(i)} Y^k/k!) v_p^{(j)} + ũ_p^{(i)} (∂_r^k ṽ_e^{(j)} Y^k/k!)
            // over i+j = 2−k, and Σ_{i+j=2} ũ_p^{(i)} v_p^{(j)}.
            for kk in 0..=2usize {
                let w = yy.powi(kk as i32) / factorial(kk);
                for ie in 0..=(2 - kk) {
                    let jp = 2 - kk - ie;
                    s -= w * (ue[ie].u[kk][i] * vp[jp].f.data[k] + up[ie].f.data[k] * ue[jp].v[kk][i]);
                }
            }
            for ia in 0..=2usize {
                s -= up[ia].f.data[k] * vp[2 - ia].f.data[k];
            }
            f.data[k] = s;
        }
    }
    let q_tt = theta_deriv(&q.th);
    for k in 0..f.data.len() {
        f.data[k] += q_tt.data[k] - q.f.data[k];
    }
    f
}

/// Integrand g_2 of the order-three pressure. As for g_1 the last displayed bracket
/// enters with a plus sign.
pub fn pressure_integrand_order2(d: &OrderTwoData) -> Field {
    let q = &d.up[0];
    let nt = q.f.n_theta;
    let y = q.f.radial.clone();
    let (up, vp, ue) = (&d.up, &d.vp, &d.ue);
    let mut g = Field::zeros(CoordKind::Layer, nt, y.clone());
    for j in 0..y.len() {
        let yy = y[j];
        for i in 0..nt {
            let k = j * nt + i;
            let mut s = vp[2].yy.data[k] + yy * vp[1].yy.data[k] + vp[1].y.data[k] - 2.0 * q.th.data[k]
                - yy * d.pp[2].y.data[k];
            for (a, b) in [(1, 2), (2, 1)] {
                s -= vp[a].f.data[k] * vp[b].y.data[k];
            }
            // missing from the display next to the line above: the outer radial velocity
            // continued into the layer, Σ_{i+j=3−k} (∂_r^k ṽ_e^{(i)} Y^k/k!) ∂_Y v_p^{(j)}
            for kk in 0..=1usize {
                let w = yy.powi(kk as i32) / factorial(kk);
                for ia in 1..=2usize {
                    let jb = 3 - kk - ia;
                    if jb <= 2 {
                        s -= w * ue[ia].v[kk][i] * vp[jb].y.data[k];
                    }
                }
            }
            for ia in 0..=2usize {
                let jb = 2 - ia;
                s -= up[ia].f.data[k] * vp[jb].th.data[k] + vp[ia].f.data[k] * yy * vp[jb].y.data[k]
                    - up[ia].f.data[k] * up[jb].f.data[k]
                    + ue[ia].v[0][i] * yy * vp[jb].y.data[k]
                    + vp[ia].f.data[k] * ue[jb].v[1][i];
            }
            // the display pairs ∂_θṽ_e^{(j)} with ∂_θũ_p^{(i)}; the product that arises
            // from u∂_θv is with ũ_p^{(i)} itself
            for kk in 0..=1usize {
                let w = yy.powi(kk as i32) / factorial(kk);
                for ia in 0..=(2 - kk) {
                    let jb = 2 - kk - ia;
                    s -= w * (ue[ia].u[kk][i] * vp[jb].th.data[k] + ue[jb].v_th[kk][i] * up[ia].f.data[k]);
                }
            }
            for kk in 0..=2usize {
                let w = yy.powi(kk as i32) / factorial(kk);
                for ia in 0..=(2 - kk) {
                    let jb = 2 - kk - ia;
                    s += w * (ue[ia].u[kk][i] * up[jb].f.data[k] + ue[jb].u[kk][i] * up[ia].f.data[k]);
                }
            }
            g.data[k] = s;
        }
    }
    g
}

/// Largest |∂_Y u| over the tail decile.
pub fn tail_slope(u: &Field) -> f64 {
    let (d1, _) = y_ops(&u.radial);
    let m = (u.n_radial() / 10).max(2);
    let du = apply_y(&d1, u);
    du.data[..m * u.n_theta].iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// A∞ as the mean of the θ-averaged profile over the tail decile: (mean, standard deviation).
pub fn estimate_a_infty(u: &Field) -> (f64, f64) {
    let ny = u.n_radial();
    let m = (ny / 10).max(2);
    let means: Vec<f64> = (0..m).map(|j| u.row(j).iter().sum::<f64>() / u.n_theta as f64).collect();
    let mean = means.iter().sum::<f64>() / m as f64;
    let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
    (mean, var.sqrt())
}

/// Solve the linearized layer of order i ≥ 1:
///   (U0+q)∂_θP + W0 ∂_YP + q_θ P + q_Y ∫_Y^0 ∂_θP − ∂_YY P = F,
///   P(θ,0) = wall, ∂_Y P(θ,Y_min) = 0,
/// then v_p^{(i+1)} from continuity and A∞ from the tail.
pub fn solve_prandtl_linearized(
    order: usize,
    base: &LayerBase,
    forcing: &Field,
    wall_bc: &[f64],
    v_prev: &Field,
    cfg: &LayerConfig,
) -> Result<PrandtlLayer> {
    let nt = base.q.n_theta;
    let y = base.y().clone();
    let ny = y.len();
    let amp = forcing.sup().max(wall_bc.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    if amp == 0.0 {
        let z = Field::zeros(CoordKind::Layer, nt, y.clone());
        return Ok(finish(order, z.clone(), z.clone(), z, 0.0, 0.0, base.n_coarse, 0.0, 0));
    }
    // (P + E_i)q_θ and (v_e^{(i+1)}(θ,1) + v_p^{(i+1)})q_Y on the left: the known parts
    // move over, E_i = −wall and the v-sum is q_Y∫_Y^0 P_θ − Y v_p^{(i)} q_Y
    let mut forcing = forcing.clone();
    for j in 0..ny {
        for i in 0..nt {
            let k = j * nt + i;
            forcing.data[k] += wall_bc[i] * base.q_th.data[k] + y[j] * v_prev.data[k] * base.q_y.data[k];
        }
    }
    let forcing = &forcing;
    let ftail = forcing.row(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if ftail > 1e-6 * amp.min(1.0) {
        return Err(Error::Truncation(format!("order-{order} forcing tail {ftail:.3e} at Y_min")));
    }
    let co = LinearCoeffs {
        ny,
        nt,
        dy: y[1] - y[0],
        a: to_columns(&Field { data: base.q.data.iter().map(|q| base.u0 + q).collect(), ..base.q.clone() }),
        b: to_columns(&base.w0),
        c: to_columns(&base.q_th),
        d: to_columns(&base.q_y),
        f: to_columns(forcing),
        wall: wall_bc.to_vec(),
    };
    let (cols, res, iters) = co.solve_periodic(cfg.tol, cfg.max_iter)?;
    let u = from_columns(&cols, &y, nt);
    let (a_inf, spread) = estimate_a_infty(&u);
    let slope = tail_slope(&u);
    if slope > 1e-8 {
        return Err(Error::Truncation(format!("order-{order} layer ∂_Y tail {slope:.3e} (amplitude {:.3e}) at Y_min; decrease y_min", u.sup())));
    }
    let scale = u.sup();
    if spread > 1e-6 * scale {
        return Err(Error::Truncation(format!(
            "order-{order} far-field constant not settled (spread {spread:.3e}); decrease y_min"
        )));
    }
    // ∂_Y v^{(i+1)} = −∂_θP − ∂_Y(Y v^{(i)}), v^{(i+1)}(Y_min) = 0
    let u_th = theta_deriv(&u);
    let mut v = integrate_from_bottom(&y, &u_th, -1.0);
    let y0 = y[0];
    for j in 0..ny {
        for i in 0..nt {
            let k = j * nt + i;
            v.data[k] -= y[j] * v_prev.data[k] - y0 * v_prev.data[i];
        }
    }
    let z = Field::zeros(CoordKind::Layer, nt, y.clone());
    Ok(finish(order, u, v, z, a_inf, spread, base.n_coarse, res, iters))
}

/// Attach a pressure to a solved layer (fine and coarse copies).
pub fn with_pressure(mut layer: PrandtlLayer, p_fine: Field) -> PrandtlLayer {
    layer.p = resample(&p_fine, layer.u.n_theta);
    layer.fine_p = p_fine;
    layer
}

// ---------------------------------------------------------------------------
// decay report

#[derive(Clone, Debug, Serialize)]
pub struct DecayRow {
    pub m: usize,
    pub l: usize,
    pub norm: f64,
    pub ratio_eta2: f64,
}

/// Σ_{j+k≤m} ∬ |∂_θ^j ∂_Y^k (u − A∞, v)|² ⟨Y⟩^{2l}.
pub fn layer_decay_report(layer: &PrandtlLayer, l_max: usize, m_max: usize, eta: f64) -> Vec<DecayRow> {
    let u = &layer.fine_u;
    let v = &layer.fine_v;
    let nt = u.n_theta;
    let y = u.radial.clone();
    let dy = y[1] - y[0];
    let (d1, _) = y_ops(&y);
    let shifted = Field { data: u.data.iter().map(|x| x - layer.a_infty).collect(), ..u.clone() };
    // derivative table indexed [j][k]
    let mut tables: Vec<Vec<(Field, Field)>> = Vec::new();
    let mut row0 = vec![(shifted.clone(), v.clone())];
    for k in 1..=m_max {
        let (pu, pv) = &row0[k - 1];
        row0.push((apply_y(&d1, pu), apply_y(&d1, pv)));
    }
    tables.push(row0);
    for j in 1..=m_max {
        let row: Vec<(Field, Field)> = tables[j - 1].iter().map(|(a, b)| (theta_deriv(a), theta_deriv(b))).collect();
        tables.push(row);
    }
    let dth = 2.0 * std::f64::consts::PI / nt as f64;
    let mut out = Vec::new();
    for m in 0..=m_max {
        for l in 0..=l_max {
            let mut total = 0.0;
            for j in 0..=m {
                for k in 0..=(m - j) {
                    let (fu, fv) = &tables[j][k];
                    let prof: Vec<f64> = (0..y.len())
                        .map(|r| {
                            let w = (1.0 + y[r] * y[r]).powi(l as i32);
                            let s: f64 = fu.row(r).iter().chain(fv.row(r)).map(|x| x * x).sum();
                            s * dth * w
                        })
                        .collect();
                    total += if (y.len() - 1) % 2 == 0 { simpson_uniform(dy, &prof) } else { crate::fd::trapz(&y, &prof) };
                }
            }
            out.push(DecayRow { m, l, norm: total, ratio_eta2: if eta > 0.0 { total / (eta * eta) } else { f64::NAN } });
        }
    }
    out
}

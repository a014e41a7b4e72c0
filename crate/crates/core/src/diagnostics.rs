//! Frequency decomposition, vorticity, transport identities, the very weak form,
//! inequality suites, the frequency-split sup-norm bound and convergence fits.

use crate::assemble::ApproxSolution;
use crate::error::{Error, Result};
use crate::error_solver::{log_radial_ops, regular_vorticity, ErrorField, NSSolution};
use crate::euler::CouetteParams;
use crate::fd::{interp_quadrature, trapz};
use crate::spectral::{d_theta, drop_nyquist, row_means, thetas, CoordKind, Field};
use gauss_quad::legendre::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

fn check_pair(u: &Field, v: &Field, kind: CoordKind) -> Result<()> {
    if !u.same_grid(v) {
        return Err(Error::Shape("u and v live on different grids".into()));
    }
    if u.kind != kind {
        return Err(Error::Shape(format!("expected a {} field, got {}", kind.as_str(), u.kind.as_str())));
    }
    Ok(())
}

/// (Σ_j w_j Σ_i f² Δθ)^{1/2} with trapezoid weights in the radial variable.
fn l2_2d(radial: &[f64], nt: usize, f: &[f64]) -> f64 {
    let dth = 2.0 * PI / nt as f64;
    let prof: Vec<f64> = f.chunks(nt).map(|r| r.iter().map(|x| x * x).sum::<f64>() * dth).collect();
    trapz(radial, &prof).sqrt()
}

fn l2_1d(s: &[f64], f: &[f64]) -> f64 {
    trapz(s, &f.iter().map(|x| x * x).collect::<Vec<_>>()).sqrt()
}

// ---------------------------------------------------------------------------
// frequency decomposition

#[derive(Clone, Copy, Debug, Default, Serialize, PartialEq)]
pub struct TailEstimate {
    pub value: f64,
    /// standard deviation over the tail decile
    pub spread: f64,
}

/// Mean and spread of a profile over the last tenth of the s range.
pub fn tail_estimate(s: &[f64], f: &[f64]) -> TailEstimate {
    let (s0, s1) = (s[0], s[s.len() - 1]);
    let cut = s1 - 0.1 * (s1 - s0);
    let tail: Vec<f64> = s.iter().zip(f).filter(|(s, _)| **s >= cut).map(|(_, f)| *f).collect();
    let n = tail.len() as f64;
    let value = tail.iter().sum::<f64>() / n;
    let spread = (tail.iter().map(|x| (x - value).powi(2)).sum::<f64>() / n).sqrt();
    TailEstimate { value, spread }
}

/// u = u0 + c sin θ + d cos θ + ũ,  v = v0 + e sin θ + f cos θ + ṽ.
#[derive(Clone, Debug)]
pub struct FrequencyDecomposition {
    pub s: Arc<Vec<f64>>,
    pub n_theta: usize,
    pub u0: Vec<f64>,
    /// zero for divergence-free fields vanishing at the wall
    pub v0: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub u_tilde: Field,
    pub v_tilde: Field,
    pub c_inf: TailEstimate,
    pub d_inf: TailEstimate,
    pub e_inf: TailEstimate,
    pub f_inf: TailEstimate,
}

pub fn frequency_decompose(u: &Field, v: &Field) -> Result<FrequencyDecomposition> {
    check_pair(u, v, CoordKind::Log)?;
    let nt = u.n_theta;
    if nt < 4 {
        return Err(Error::Shape(format!("need at least 4 angles for the first harmonic, got {nt}")));
    }
    let th = thetas(nt);
    let (sn, cs): (Vec<f64>, Vec<f64>) = th.iter().map(|t| t.sin_cos()).unzip();
    let n = u.n_radial();
    let project = |f: &Field| {
        let mut m0 = vec![0.0; n];
        let mut ms = vec![0.0; n];
        let mut mc = vec![0.0; n];
        let mut rest = f.clone();
        for j in 0..n {
            let row = f.row(j);
            m0[j] = row.iter().sum::<f64>() / nt as f64;
            ms[j] = 2.0 * row.iter().zip(&sn).map(|(x, s)| x * s).sum::<f64>() / nt as f64;
            mc[j] = 2.0 * row.iter().zip(&cs).map(|(x, c)| x * c).sum::<f64>() / nt as f64;
            for i in 0..nt {
                rest.data[j * nt + i] = row[i] - m0[j] - ms[j] * sn[i] - mc[j] * cs[i];
            }
        }
        (m0, ms, mc, rest)
    };
    let (u0, c, d, u_tilde) = project(u);
    let (v0, e, f, v_tilde) = project(v);
    let s = u.radial.clone();
    Ok(FrequencyDecomposition {
        c_inf: tail_estimate(&s, &c),
        d_inf: tail_estimate(&s, &d),
        e_inf: tail_estimate(&s, &e),
        f_inf: tail_estimate(&s, &f),
        s,
        n_theta: nt,
        u0,
        v0,
        c,
        d,
        e,
        f,
        u_tilde,
        v_tilde,
    })
}

impl FrequencyDecomposition {
    pub fn reconstruct(&self) -> (Field, Field) {
        let nt = self.n_theta;
        let th = thetas(nt);
        let mut u = self.u_tilde.clone();
        let mut v = self.v_tilde.clone();
        for j in 0..self.s.len() {
            for (i, t) in th.iter().enumerate() {
                let (sn, cs) = t.sin_cos();
                u.data[j * nt + i] += self.u0[j] + self.c[j] * sn + self.d[j] * cs;
                v.data[j * nt + i] += self.v0[j] + self.e[j] * sn + self.f[j] * cs;
            }
        }
        (u, v)
    }

    /// Pointwise defects of c = f' − f and d = e − e' (continuity in s = −ln r).
    pub fn continuity_defects(&self) -> (Vec<f64>, Vec<f64>) {
        let (d1, _) = log_radial_ops(&self.s);
        let fp = d1.apply(&self.f);
        let ep = d1.apply(&self.e);
        let dc = (0..self.s.len()).map(|j| self.c[j] - (fp[j] - self.f[j])).collect();
        let dd = (0..self.s.len()).map(|j| self.d[j] - (self.e[j] - ep[j])).collect();
        (dc, dd)
    }

    /// (c∞ + f∞, d∞ − e∞); both vanish when the far field is a rigid translation.
    pub fn limit_relations(&self) -> (f64, f64) {
        (self.c_inf.value + self.f_inf.value, self.d_inf.value - self.e_inf.value)
    }

    /// Largest projection of ũ, ṽ onto the modes 0 and ±1.
    pub fn remainder_leakage(&self) -> f64 {
        let nt = self.n_theta;
        let th = thetas(nt);
        let mut worst = 0.0f64;
        for f in [&self.u_tilde, &self.v_tilde] {
            for j in 0..self.s.len() {
                let row = f.row(j);
                let m0 = row.iter().sum::<f64>() / nt as f64;
                let ms = row.iter().zip(&th).map(|(x, t)| x * t.sin()).sum::<f64>() / nt as f64;
                let mc = row.iter().zip(&th).map(|(x, t)| x * t.cos()).sum::<f64>() / nt as f64;
                worst = worst.max(m0.abs()).max(ms.abs()).max(mc.abs());
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// vorticity

#[derive(Clone, Debug)]
pub struct VorticityField {
    /// regular part on the grid
    pub omega: Field,
    pub omega0: Vec<f64>,
    pub omega_neq: Field,
    /// b in 2πb·δ; the point vortex is never sampled
    pub point_vortex: f64,
}

/// Regular vorticity of a velocity pair: (1/r)∂_r(ru) − (1/r)∂_θv on a polar grid,
/// e^s(−u_s + u − v_θ) on a log grid.
pub fn vorticity(u: &Field, v: &Field, point_vortex: f64) -> Result<VorticityField> {
    check_pair(u, v, u.kind)?;
    let omega = match u.kind {
        CoordKind::Polar => regular_vorticity(u, v),
        CoordKind::Log => log_vorticity(u, v),
        CoordKind::Layer => return Err(Error::Shape("vorticity is defined on polar or log grids".into())),
    };
    Ok(split_vorticity(omega, point_vortex))
}

fn log_vorticity(u: &Field, v: &Field) -> Field {
    let nt = u.n_theta;
    let (d1, _) = log_radial_ops(&u.radial);
    let us = d1.apply_strided(&u.data, nt);
    let vt = d_theta(&v.data, nt, 1);
    let data = (0..u.data.len()).map(|x| u.radial[x / nt].exp() * (-us[x] + u.data[x] - vt[x])).collect();
    Field { data, ..u.clone() }
}

fn split_vorticity(omega: Field, point_vortex: f64) -> VorticityField {
    let nt = omega.n_theta;
    let omega0 = row_means(&omega.data, nt);
    let omega_neq = Field { data: omega.data.iter().enumerate().map(|(x, w)| w - omega0[x / nt]).collect(), ..omega.clone() };
    VorticityField { omega, omega0, omega_neq, point_vortex }
}

pub fn solution_vorticity(ns: &NSSolution) -> VorticityField {
    split_vorticity(ns.omega_regular.clone(), ns.swirl_singular)
}

/// sup over r ≤ rho of |ω − 2a|, from the vorticity of the departure from Couette.
pub fn couette_vorticity_deviation(ns: &NSSolution, rho: f64) -> f64 {
    let w = &ns.omega_departure;
    let nt = w.n_theta;
    (0..w.n_radial()).filter(|&j| ns.grid.radii[j] <= rho).flat_map(|j| w.data[j * nt..(j + 1) * nt].iter()).fold(0.0f64, |m, x| m.max(x.abs()))
}

impl VorticityField {
    pub fn radius(&self, j: usize) -> f64 {
        match self.omega.kind {
            CoordKind::Log => (-self.omega.radial[j]).exp(),
            _ => self.omega.radial[j],
        }
    }

    /// sup over r ≤ rho of |ω − level|.
    pub fn interior_deviation(&self, level: f64, rho: f64) -> f64 {
        let nt = self.omega.n_theta;
        (0..self.omega.n_radial())
            .filter(|&j| self.radius(j) <= rho)
            .flat_map(|j| self.omega.data[j * nt..(j + 1) * nt].iter())
            .fold(0.0f64, |m, w| m.max((w - level).abs()))
    }

    /// Area-weighted mean of ω over the sampled part of r ≤ rho.
    pub fn interior_mean(&self, rho: f64) -> f64 {
        let mut pts: Vec<(f64, f64)> =
            (0..self.omega.n_radial()).filter(|&j| self.radius(j) <= rho).map(|j| (self.radius(j), self.omega0[j])).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let r: Vec<f64> = pts.iter().map(|p| p.0).collect();
        if r.len() < 6 {
            return f64::NAN;
        }
        let w = interp_quadrature(&r, 6);
        let num: f64 = pts.iter().zip(&w).map(|((r, m), w)| w * r * m).sum();
        let den: f64 = pts.iter().zip(&w).map(|((r, _), w)| w * r).sum();
        num / den
    }
}

// ---------------------------------------------------------------------------
// vorticity transport

const EDGE_ROWS: usize = 3;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TransportReport {
    /// ‖ε²(ω₀)_s + (S_u)₀ + (R_u)₀‖ over s, (ω₀)_s expanded as e^s(u₀ − u₀'')
    pub zero_mode_residual: f64,
    /// same with (ω₀)_s differentiated from sampled ω₀
    pub zero_mode_direct: f64,
    /// ‖ε²(ω₀)_s‖, for scale
    pub zero_mode_scale: f64,
    /// ‖ε²(ω_ss + ω_θθ) − Λ‖ over (θ, s), the left side in its expanded form
    pub vorticity_residual: f64,
    /// same with ω_ss, ω_θθ differentiated from sampled ω
    pub vorticity_direct: f64,
    pub lambda_norm: f64,
}

/// Convective part of the r-weighted error momentum for a departure (w, v) from
/// Couette, log ordering: returns (S_u, S_v).
fn convective(p: &CouetteParams, s: &[f64], nt: usize, w: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (d1, _) = log_radial_ops(s);
    let ws = d1.apply_strided(w, nt);
    let vs = d1.apply_strided(v, nt);
    let wt = d_theta(w, nt, 1);
    let vt = d_theta(v, nt, 1);
    let mut su = vec![0.0; w.len()];
    let mut sv = vec![0.0; w.len()];
    for x in 0..w.len() {
        let r = (-s[x / nt]).exp();
        let big_u = p.swirl(r);
        // r∂_r = −∂_s
        su[x] = big_u * wt[x] + 2.0 * p.a * r * v[x] + w[x] * wt[x] - v[x] * ws[x] + w[x] * v[x];
        sv[x] = big_u * vt[x] - 2.0 * big_u * w[x] + w[x] * vt[x] - v[x] * vs[x] - w[x] * w[x];
    }
    (su, sv)
}

fn log_rows(f: &Field) -> Vec<f64> {
    (0..f.n_radial()).rev().flat_map(|j| f.row(j).to_vec()).collect()
}

/// Zero-mode transport ε²(ω₀)_s = −(S_u)₀ − (R_u)₀ and the vorticity equation
/// ε²(ω_ss + ω_θθ) = Λ := −(S_u + R_u)_s − (S_v + R_v)_θ for the error field,
/// S the r-weighted convective terms (assembled here from the velocities, not taken
/// from the solver) and R the residual of the approximation.
///
/// With V_u, V_v the log-form viscous terms, ε²(ω_ss + ω_θθ) = (e^s V_u)_s + (e^s V_v)_θ
/// identically; the residuals use that expanded form with ∂_s(e^s f) written as
/// e^s(f_s + f), which is how the discrete system is posed, so they measure how well
/// the solved field satisfies the identities. The direct variants differentiate
/// sampled ω and add the truncation error of the extra differentiation.
pub fn vorticity_transport_checks(approx: &ApproxSolution, error: &ErrorField) -> Result<TransportReport> {
    let nt = error.grid.n_theta;
    let s = error.grid.s_values.clone();
    let n = s.len();
    if approx.grid.n_theta != nt || approx.grid.radii.len() != n {
        return Err(Error::GridMismatch("error field and approximation grids differ".into()));
    }
    let p = &approx.components.params;
    let e2 = approx.eps * approx.eps;
    let (d1, d2) = log_radial_ops(&s);
    let es: Vec<f64> = s.iter().map(|s| s.exp()).collect();
    let (eu, ev) = (&error.u.data, &error.v.data);
    let du = log_rows(&approx.du);
    let dv = log_rows(&approx.dv);
    let ru = log_rows(&approx.r_u);
    let rv = log_rows(&approx.r_v);
    let tu: Vec<f64> = du.iter().zip(eu).map(|(a, b)| a + b).collect();
    let tv: Vec<f64> = dv.iter().zip(ev).map(|(a, b)| a + b).collect();
    let (s1u, s1v) = convective(p, &s, nt, &tu, &tv);
    let (s0u, s0v) = convective(p, &s, nt, &du, &dv);
    let fu: Vec<f64> = (0..n * nt).map(|x| s1u[x] - s0u[x] + ru[x]).collect();
    let fv: Vec<f64> = (0..n * nt).map(|x| s1v[x] - s0v[x] + rv[x]).collect();
    // ∂_s f = e^s(∂_s(e^{−s} f) + e^{−s} f)
    let ds_weighted = |f: &[f64]| {
        let g: Vec<f64> = (0..n * nt).map(|x| f[x] / es[x / nt]).collect();
        let gs = d1.apply_strided(&g, nt);
        (0..n * nt).map(|x| es[x / nt] * (gs[x] + g[x])).collect::<Vec<_>>()
    };

    // zero mode
    let u0 = row_means(eu, nt);
    let u0ss = d2.apply(&u0);
    let lhs0: Vec<f64> = (0..n).map(|j| e2 * es[j] * (u0[j] - u0ss[j])).collect();
    let omega = log_vorticity(&error.u, &error.v);
    let om0 = row_means(&omega.data, nt);
    let direct0: Vec<f64> = d1.apply(&om0).iter().map(|x| e2 * x).collect();
    let fu0 = row_means(&fu, nt);
    let mut res0: Vec<f64> = (0..n).map(|j| lhs0[j] + fu0[j]).collect();
    let mut dres0: Vec<f64> = (0..n).map(|j| direct0[j] + fu0[j]).collect();

    // full equation
    let fus = ds_weighted(&fu);
    let fvt = d_theta(&fv, nt, 1);
    let lambda: Vec<f64> = (0..n * nt).map(|x| -fus[x] - fvt[x]).collect();
    let uss = d2.apply_strided(eu, nt);
    let vss = d2.apply_strided(ev, nt);
    let ut = d_theta(eu, nt, 1);
    let utt = d_theta(eu, nt, 2);
    let vt = d_theta(ev, nt, 1);
    let vtt = d_theta(ev, nt, 2);
    let mut evu = vec![0.0; n * nt];
    let mut evv = vec![0.0; n * nt];
    for x in 0..n * nt {
        evu[x] = -e2 * es[x / nt] * (uss[x] + utt[x] + 2.0 * vt[x] - eu[x]);
        evv[x] = -e2 * es[x / nt] * (vss[x] + vtt[x] - 2.0 * ut[x] - ev[x]);
    }
    let lap_a = ds_weighted(&evu);
    let lap_b = d_theta(&evv, nt, 1);
    let oss = d2.apply_strided(&omega.data, nt);
    let ott = d_theta(&omega.data, nt, 2);
    // the Nyquist mode is not part of the discrete system
    let mut res: Vec<f64> = (0..n * nt).map(|x| lap_a[x] + lap_b[x] - lambda[x]).collect();
    let mut dres: Vec<f64> = (0..n * nt).map(|x| e2 * (oss[x] + ott[x]) - lambda[x]).collect();
    let mut lam = lambda;
    for f in [&mut res, &mut dres, &mut lam] {
        drop_nyquist(f, nt);
    }
    // boundary conditions replace the equation in the outer rows, and the
    // five-point stencils of the next rows reach them
    for f in [&mut res, &mut dres] {
        for j in (0..EDGE_ROWS).chain(n - EDGE_ROWS..n) {
            f[j * nt..(j + 1) * nt].fill(0.0);
        }
    }
    for j in (0..EDGE_ROWS).chain(n - EDGE_ROWS..n) {
        res0[j] = 0.0;
        dres0[j] = 0.0;
    }

    Ok(TransportReport {
        zero_mode_residual: l2_1d(&s, &res0),
        zero_mode_direct: l2_1d(&s, &dres0),
        zero_mode_scale: l2_1d(&s, &lhs0),
        vorticity_residual: l2_2d(&s, nt, &res),
        vorticity_direct: l2_2d(&s, nt, &dres),
        lambda_norm: l2_2d(&s, nt, &lam),
    })
}

// ---------------------------------------------------------------------------
// very weak form

/// Polynomial in r, ascending coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn eval(&self, r: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * r + c)
    }

    pub fn deriv(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect())
    }

    fn shift(&self, k: usize) -> Poly {
        let mut c = vec![0.0; k];
        c.extend_from_slice(&self.0);
        Poly(c)
    }

    fn scale(&self, a: f64) -> Poly {
        Poly(self.0.iter().map(|c| a * c).collect())
    }

    fn plus(&self, o: &Poly) -> Poly {
        let n = self.0.len().max(o.0.len());
        Poly((0..n).map(|k| self.0.get(k).unwrap_or(&0.0) + o.0.get(k).unwrap_or(&0.0)).collect())
    }

    /// Exact division by r^k; None if a low coefficient is not zero.
    fn div_rk(&self, k: usize) -> Option<Poly> {
        let scale = self.0.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1.0);
        if self.0.iter().take(k).any(|c| c.abs() > 1e-12 * scale) {
            return None;
        }
        Some(Poly(self.0.iter().skip(k).copied().collect()))
    }

    /// Product (1 − r)^a (1 + r)^b r^c, expanded.
    pub fn factored(c: usize, a: usize, b: usize) -> Poly {
        let mut p = Poly(vec![1.0]).shift(c);
        for _ in 0..a {
            p = p.shift(1).scale(-1.0).plus(&p);
        }
        for _ in 0..b {
            p = p.shift(1).plus(&p);
        }
        p
    }
}

/// φ = φ₁ t + φ₂ n with φ₁ = P(r) cos mθ, φ₂ = Q(r) sin mθ.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub name: String,
    pub m: usize,
    pub tangential: Poly,
    pub normal: Poly,
}

/// Radial profiles of the pieces entering the pairing, all polynomial.
struct TestProfiles {
    p_r: Poly,
    q_r: Poly,
    /// (Δφ)_t / cos mθ
    lap_t: Poly,
    /// (Δφ)_n / sin mθ
    lap_n: Poly,
    /// (∂_θφ₁ + φ₂) / (r sin mθ)
    rot_t: Poly,
    /// (∂_θφ₂ − φ₁) / (r cos mθ)
    rot_n: Poly,
}

impl TestFunction {
    pub fn radial(name: &str, p: Poly) -> Self {
        TestFunction { name: name.into(), m: 0, tangential: p, normal: Poly(vec![]) }
    }

    /// From a streamfunction ψ = g(r) cos mθ: φ₁ = −∂_rψ, φ₂ = ∂_θψ / r.
    pub fn from_streamfunction(name: &str, m: usize, g: &Poly) -> Result<Self> {
        let q = g.div_rk(1).ok_or_else(|| Error::InvalidTestFunction(format!("{name}: g(0) ≠ 0")))?.scale(-(m as f64));
        Ok(TestFunction { name: name.into(), m, tangential: g.deriv().scale(-1.0), normal: q })
    }

    /// r(1−r)², r³(1−r)² and the mode-one field of ψ = r³(1−r²)² cos θ.
    pub fn standard_set() -> Vec<TestFunction> {
        vec![
            TestFunction::radial("r(1-r)^2", Poly::factored(1, 2, 0)),
            TestFunction::radial("r^3(1-r)^2", Poly::factored(3, 2, 0)),
            TestFunction::from_streamfunction("curl r^3(1-r^2)^2 cos", 1, &Poly::factored(3, 2, 2)).expect("polynomial streamfunction"),
        ]
    }

    /// ∂_r φ̄₁ at the origin.
    pub fn origin_slope(&self) -> f64 {
        if self.m == 0 {
            self.tangential.deriv().eval(0.0)
        } else {
            0.0
        }
    }

    fn profiles(&self) -> Result<TestProfiles> {
        let bad = |what: &str| Error::InvalidTestFunction(format!("{}: {what}", self.name));
        let m = self.m as f64;
        let (p, q) = (&self.tangential, &self.normal);
        if self.m == 0 && q.0.iter().any(|c| *c != 0.0) {
            return Err(bad("a θ-independent normal part cannot satisfy the constraint and vanish at r = 1"));
        }
        // ∂_θφ₁ + ∂_r(rφ₂) = (−mP + (rQ)') sin mθ
        let div = p.scale(-m).plus(&q.shift(1).deriv());
        let scale = p.0.iter().chain(&q.0).fold(0.0f64, |a, c| a.max(c.abs())).max(1.0);
        for k in 0..=20 {
            let r = k as f64 / 20.0;
            if div.eval(r).abs() > 1e-10 * scale {
                return Err(bad("violates ∂_θφ₁ + ∂_r(rφ₂) = 0"));
            }
        }
        if p.eval(1.0).abs() > 1e-12 * scale || q.eval(1.0).abs() > 1e-12 * scale {
            return Err(bad("does not vanish on r = 1"));
        }
        let (p1, p2, q1, q2) = (p.deriv(), p.deriv().deriv(), q.deriv(), q.deriv().deriv());
        let k2 = m * m + 1.0;
        let lap_t = p2.shift(2).plus(&p1.shift(1)).plus(&p.scale(-k2)).plus(&q.scale(2.0 * m));
        let lap_n = q2.shift(2).plus(&q1.shift(1)).plus(&q.scale(-k2)).plus(&p.scale(2.0 * m));
        let singular = || bad("not smooth at the origin");
        Ok(TestProfiles {
            lap_t: lap_t.div_rk(2).ok_or_else(singular)?,
            lap_n: lap_n.div_rk(2).ok_or_else(singular)?,
            rot_t: q.plus(&p.scale(-m)).div_rk(1).ok_or_else(singular)?,
            rot_n: q.scale(m).plus(&p.scale(-1.0)).div_rk(1).ok_or_else(singular)?,
            p_r: p1,
            q_r: q1,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakFormReport {
    pub test_function: String,
    /// −ε²∬u·Δφ, regular part on the grid plus the b/r part in closed form
    pub viscous: f64,
    /// ∬u⊗u:∇φ
    pub convective: f64,
    /// ε²⟨F, φ⟩ for the point-vortex forcing
    pub forcing: f64,
    /// ε²∫_{∂B₁} g·∂φ/∂n
    pub boundary: f64,
    /// |−ε²∬u·Δφ − ∬u⊗u:∇φ − ε²⟨F,φ⟩ + ε²∫g·∂φ/∂n|
    pub residual: f64,
    /// the pairing written as −2πb ∂_rφ̄₁(0) with +u⊗u:∇φ
    pub displayed_forcing: f64,
    pub displayed_residual: f64,
}

fn gauss_panels(n_panels: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let gl = GaussLegendre::new(16.try_into().unwrap());
    let h = (b - a) / n_panels as f64;
    (0..n_panels).map(|k| gl.integrate(a + k as f64 * h, a + (k + 1) as f64 * h, &f)).sum()
}

/// Very weak form of the steady problem for u = (b/r + W) t + V n against φ.
///
/// Green's identity on B₁ \ B_δ with −ε²Δu + u·∇u + ∇p = 0 gives
///   −ε²∬u·Δφ − ∬u⊗u:∇φ = 4πbε² ∂_rφ̄₁(0) − ε²∫_{∂B₁} g·∂_rφ dθ,
/// the origin term coming from the b/r swirl on ∂B_δ (both φ∂_n u and u∂_nφ
/// contribute 2πb ∂_rφ̄₁(0)); pressure and convective fluxes through ∂B_δ vanish.
pub fn weak_form_check(ns: &NSSolution, params: &CouetteParams, eps: f64, phi: &TestFunction) -> Result<WeakFormReport> {
    let pr = phi.profiles()?;
    let nt = ns.grid.n_theta;
    let radii = &ns.grid.radii;
    let nr = radii.len();
    if !ns.grid.includes_boundary || (radii[nr - 1] - 1.0).abs() > 1e-14 {
        return Err(Error::Shape("weak form needs the polar grid to end at r = 1".into()));
    }
    let b = ns.swirl_singular;
    let e2 = eps * eps;
    let m = phi.m as f64;
    let th = thetas(nt);
    let dth = 2.0 * PI / nt as f64;
    let (cm, sm): (Vec<f64>, Vec<f64>) = th.iter().map(|t| ((m * t).cos(), (m * t).sin())).unzip();

    // θ-integrated regular integrands times r, per radius
    let rows: Vec<(f64, f64)> = (0..nr)
        .into_par_iter()
        .map(|j| {
            let r = radii[j];
            let (lt, ln) = (pr.lap_t.eval(r), pr.lap_n.eval(r));
            let (pp, qq) = (pr.p_r.eval(r), pr.q_r.eval(r));
            let (at, an) = (pr.rot_t.eval(r), pr.rot_n.eval(r));
            let mut visc = 0.0;
            let mut conv = 0.0;
            for i in 0..nt {
                let w = ns.u_regular.at(j, i);
                let v = ns.v_full.at(j, i);
                visc += -e2 * r * (w * lt * cm[i] + v * ln * sm[i]);
                // r·U = b + rW; the b²/r² part of U² is carried separately
                conv += (b + r * w) * v * (pp + an) * cm[i] + r * v * v * qq * sm[i] + (2.0 * b * w + r * w * w) * at * sm[i];
            }
            (visc * dth, conv * dth)
        })
        .collect();
    // radial quadrature in s = −ln r: ∫ f r dr = ∫ f r² ds
    let s: Vec<f64> = radii.iter().rev().map(|r| -r.ln()).collect();
    let ws = interp_quadrature(&s, 6);
    let mut visc = 0.0;
    let mut conv = 0.0;
    for (k, w) in ws.iter().enumerate() {
        let j = nr - 1 - k;
        visc += w * radii[j] * rows[j].0;
        conv += w * radii[j] * rows[j].1;
    }
    // disk inside the first node: integrands are bounded, take them constant
    visc += radii[0] * rows[0].0;
    conv += radii[0] * rows[0].1;

    // b/r part of −ε²∬u·Δφ: −ε² b ∫ cos mθ dθ ∫₀¹ (Δφ)_t dr
    let visc_sing = if phi.m == 0 { -e2 * b * 2.0 * PI * gauss_panels(8, 0.0, 1.0, |r| pr.lap_t.eval(r)) } else { 0.0 };
    // b²∬ r⁻² (∂_θφ₁ + φ₂)/r dA carries sin mθ (or vanishes for m = 0): zero
    let viscous = visc + visc_sing;
    let convective = conv;

    let slope = phi.origin_slope();
    let forcing = 4.0 * PI * b * e2 * slope;
    let p1 = phi.tangential.deriv().eval(1.0);
    let boundary = e2 * p1 * th.iter().zip(&cm).map(|(t, c)| params.wall_data(*t) * c).sum::<f64>() * dth;
    let residual = (viscous - convective - forcing + boundary).abs();
    let displayed_forcing = -2.0 * PI * b * e2 * slope;
    let displayed_residual = (viscous + convective - displayed_forcing + boundary).abs();
    Ok(WeakFormReport {
        test_function: phi.name.clone(),
        viscous,
        convective,
        forcing,
        boundary,
        residual,
        displayed_forcing,
        displayed_residual,
    })
}

// ---------------------------------------------------------------------------
// inequalities

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct InequalityStats {
    pub samples: usize,
    pub violations: usize,
    /// max over samples of lhs / (C·rhs)
    pub worst_ratio: f64,
    pub constant: f64,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct InequalityReport {
    pub wirtinger: InequalityStats,
    /// ∫_{1/2}^1 f²/(1−r)² ≤ 4∫f'² for f(1/2) = f(1) = 0
    pub hardy_interval: InequalityStats,
    /// ∫_0^∞ t⁻² f² ≤ 4∫f'² for f(0) = 0
    pub hardy_half_line: InequalityStats,
    /// lhs/(C·rhs) for cos(4πt/T), equal to 1
    pub wirtinger_k2_ratio: f64,
}

impl InequalityReport {
    pub fn violations(&self) -> usize {
        self.wirtinger.violations + self.hardy_interval.violations + self.hardy_half_line.violations
    }
}

const VIOLATION_TOL: f64 = 1e-12;

fn sample_rng(seed: u64, family: u64, idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((family << 32) | idx as u64);
    rng
}

/// (∫u², ∫u'²) for u = Σ_k a_k cos(2πkt/T) + b_k sin(2πkt/T), by the trapezoid rule
/// (exact for trigonometric polynomials on enough points).
pub fn wirtinger_integrals(period: f64, modes: &[(usize, f64, f64)]) -> (f64, f64) {
    let kmax = modes.iter().map(|m| m.0).max().unwrap_or(0);
    let n = 4 * kmax + 8;
    let h = period / n as f64;
    let w = 2.0 * PI / period;
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..n {
        let t = i as f64 * h;
        let (mut u, mut du) = (0.0, 0.0);
        for &(k, ak, bk) in modes {
            let x = w * k as f64 * t;
            u += ak * x.cos() + bk * x.sin();
            du += w * k as f64 * (-ak * x.sin() + bk * x.cos());
        }
        a += u * u * h;
        b += du * du * h;
    }
    (a, b)
}

pub fn wirtinger_ratio(period: f64, modes: &[(usize, f64, f64)]) -> f64 {
    let (a, b) = wirtinger_integrals(period, modes);
    a / (period * period / (16.0 * PI * PI) * b)
}

/// (∫_{1/2}^1 f²/(1−r)², ∫_{1/2}^1 f'²) for f(r) = Σ b_k sin(2πk(r − 1/2)) + (r − 1/2)(1 − r)p(r).
pub fn hardy_interval_integrals(sines: &[(usize, f64)], poly: &Poly) -> (f64, f64) {
    let p1 = poly.deriv();
    let f_over = |r: f64| {
        // f/(1−r), the polynomial part divided analytically
        let mut v = (r - 0.5) * poly.eval(r);
        for &(k, bk) in sines {
            let x = 2.0 * PI * k as f64 * (r - 0.5);
            v += bk * x.sin() / (1.0 - r);
        }
        v
    };
    let fp = |r: f64| {
        let mut v = (1.5 - 2.0 * r) * poly.eval(r) + (r - 0.5) * (1.0 - r) * p1.eval(r);
        for &(k, bk) in sines {
            let w = 2.0 * PI * k as f64;
            v += bk * w * (w * (r - 0.5)).cos();
        }
        v
    };
    (gauss_panels(32, 0.5, 1.0, |r| f_over(r).powi(2)), gauss_panels(32, 0.5, 1.0, |r| fp(r).powi(2)))
}

/// (∫_0^∞ t⁻²f², ∫_0^∞ f'²) for f = Σ a t^m e^{−λt}, m ≥ 1.
pub fn hardy_half_line_integrals(terms: &[(f64, i32, f64)]) -> (f64, f64) {
    let lmin = terms.iter().map(|t| t.2).fold(f64::INFINITY, f64::min);
    let len = 80.0 / lmin;
    let f_over_t = |t: f64| terms.iter().map(|&(a, m, l)| a * t.powi(m - 1) * (-l * t).exp()).sum::<f64>();
    let fp = |t: f64| {
        terms.iter().map(|&(a, m, l)| a * (m as f64 * t.powi(m - 1) - l * t.powi(m)) * (-l * t).exp()).sum::<f64>()
    };
    (gauss_panels(400, 0.0, len, |t| f_over_t(t).powi(2)), gauss_panels(400, 0.0, len, |t| fp(t).powi(2)))
}

fn stats(ratios: &[f64], constant: f64) -> InequalityStats {
    InequalityStats {
        samples: ratios.len(),
        violations: ratios.iter().filter(|r| !(**r <= 1.0 + VIOLATION_TOL)).count(),
        worst_ratio: ratios.iter().copied().fold(0.0, f64::max),
        constant,
    }
}

/// Random admissible samples for the Wirtinger bound and both Hardy bounds; each
/// sample draws from its own stream so the report does not depend on threading.
pub fn inequality_suite(samples: usize, seed: u64) -> InequalityReport {
    let wirt: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, 1, i);
            let period = rng.gen_range(0.5..10.0);
            let kmax = rng.gen_range(2..=12);
            let decay = rng.gen_range(0.0..2.0);
            let modes: Vec<(usize, f64, f64)> = (2..=kmax)
                .map(|k| {
                    let s = (k as f64).powf(-decay);
                    (k, s * rng.gen_range(-1.0..1.0), s * rng.gen_range(-1.0..1.0))
                })
                .collect();
            wirtinger_ratio(period, &modes)
        })
        .collect();
    let interval: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, 2, i);
            let ns = rng.gen_range(0..=6);
            let sines: Vec<(usize, f64)> = (1..=ns).map(|k| (k, rng.gen_range(-1.0..1.0))).collect();
            let np = if ns == 0 { rng.gen_range(1..=6) } else { rng.gen_range(0..=6) };
            let poly = Poly((0..np).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let (a, b) = hardy_interval_integrals(&sines, &poly);
            a / (4.0 * b)
        })
        .collect();
    let half: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, 3, i);
            let nterms = rng.gen_range(1..=4);
            let terms: Vec<(f64, i32, f64)> =
                (0..nterms).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(1..=4), rng.gen_range(0.3..3.0))).collect();
            let (a, b) = hardy_half_line_integrals(&terms);
            a / (4.0 * b)
        })
        .collect();
    InequalityReport {
        wirtinger: stats(&wirt, 1.0),
        hardy_interval: stats(&interval, 4.0),
        hardy_half_line: stats(&half, 4.0),
        wirtinger_k2_ratio: wirtinger_ratio(2.0 * PI, &[(2, 1.0, 0.0)]),
    }
}

// ---------------------------------------------------------------------------
// sup-norm bound

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct SupNormReport {
    pub measured_u: f64,
    pub bound_u: f64,
    pub measured_v: f64,
    pub bound_v: f64,
    /// measured ≤ constant·bound is the asserted direction
    pub constant: f64,
}

impl SupNormReport {
    pub fn holds(&self) -> bool {
        self.measured_u <= self.constant * self.bound_u * (1.0 + 1e-12) && self.measured_v <= self.constant * self.bound_v * (1.0 + 1e-12)
    }
}

/// Frequency-split bound of ‖u‖_∞ and ‖v‖_∞: zero mode by ‖w‖ + ‖w_s‖, mode one by
/// the distance to its limit plus the limit, higher modes by ‖w_θ‖ + ‖w_sθ‖. One
/// dimensional norms in s, two dimensional in (θ, s). On a half line the
/// Agmon inequality |w|² ≤ 2‖w‖‖w'‖ plus Σ_{|k|≥2} k⁻² < 1.3 give the constant 1
/// for decaying data; 2 absorbs the end values of a truncated interval.
pub fn sup_norm_diagnostic(d: &FrequencyDecomposition) -> SupNormReport {
    let s = &d.s;
    let nt = d.n_theta;
    let (d1, _) = log_radial_ops(s);
    let n1 = |f: &[f64]| l2_1d(s, f);
    let dn = |f: &[f64]| n1(&d1.apply(f));
    let shifted = |f: &[f64], l: f64| f.iter().map(|x| x - l).collect::<Vec<_>>();
    let high = |f: &Field| {
        let ft = d_theta(&f.data, nt, 1);
        let fst = d1.apply_strided(&ft, nt);
        l2_2d(s, nt, &ft) + l2_2d(s, nt, &fst)
    };
    let bound_u = n1(&d.u0)
        + dn(&d.u0)
        + high(&d.u_tilde)
        + n1(&shifted(&d.c, d.c_inf.value))
        + n1(&shifted(&d.d, d.d_inf.value))
        + dn(&d.c)
        + dn(&d.d)
        + d.c_inf.value.abs()
        + d.d_inf.value.abs();
    let bound_v = n1(&d.v0)
        + dn(&d.v0)
        + high(&d.v_tilde)
        + n1(&shifted(&d.e, d.e_inf.value))
        + n1(&shifted(&d.f, d.f_inf.value))
        + dn(&d.e)
        + dn(&d.f)
        + d.e_inf.value.abs()
        + d.f_inf.value.abs();
    let (u, v) = d.reconstruct();
    SupNormReport { measured_u: u.sup(), bound_u, measured_v: v.sup(), bound_v, constant: 2.0 }
}

// ---------------------------------------------------------------------------
// convergence

pub const METRIC_SUP_U: &str = "sup_u_deviation";
pub const METRIC_SUP_V: &str = "sup_v";
pub const METRIC_VORTICITY: &str = "interior_vorticity_deviation";
pub const METRIC_RESIDUAL: &str = "residual_l2";

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SlopeFit {
    pub metric: String,
    pub points: usize,
    /// None when every value is exactly zero
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub exact_zero: bool,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub fits: Vec<SlopeFit>,
}

/// Least-squares line through (ln ε, ln value).
pub fn loglog_fit(eps: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    if eps.len() != values.len() || eps.len() < 3 {
        return Err(Error::Validation(format!("slope fit needs at least 3 points, got {}", eps.len())));
    }
    if eps.iter().chain(values).any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain("log-log fit needs positive finite data".into()));
    }
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("slope fit needs distinct epsilon values".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

impl ConvergenceTable {
    /// Fits every metric in order of first appearance.
    pub fn new(rows: Vec<ConvergenceRow>) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        for r in &rows {
            if !names.contains(&r.metric) {
                names.push(r.metric.clone());
            }
        }
        let mut fits = Vec::new();
        for name in names {
            let pts: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.metric == name).collect();
            let eps: Vec<f64> = pts.iter().map(|r| r.epsilon).collect();
            let vals: Vec<f64> = pts.iter().map(|r| r.value).collect();
            if pts.len() < 3 {
                return Err(Error::Validation(format!("metric {name} has {} points, need 3", pts.len())));
            }
            let fit = if vals.iter().all(|v| *v == 0.0) {
                SlopeFit { metric: name, points: pts.len(), slope: None, intercept: None, exact_zero: true }
            } else {
                let (slope, icpt) = loglog_fit(&eps, &vals)?;
                SlopeFit { metric: name, points: pts.len(), slope: Some(slope), intercept: Some(icpt), exact_zero: false }
            };
            fits.push(fit);
        }
        Ok(ConvergenceTable { rows, fits })
    }

    pub fn fit(&self, metric: &str) -> Option<&SlopeFit> {
        self.fits.iter().find(|f| f.metric == metric)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_factored_expands() {
        // r(1−r)² = r − 2r² + r³
        assert_eq!(Poly::factored(1, 2, 0).0, vec![0.0, 1.0, -2.0, 1.0]);
        assert_eq!(Poly::factored(0, 1, 1).0, vec![1.0, 0.0, -1.0]);
    }

    #[test]
    fn standard_test_functions_are_admissible() {
        for phi in TestFunction::standard_set() {
            phi.profiles().unwrap();
        }
        assert_eq!(TestFunction::standard_set()[0].origin_slope(), 1.0);
    }

    #[test]
    fn non_smooth_or_nonsolenoidal_test_functions_are_rejected() {
        // 1 − r²: tangential field jumps at the origin
        let jump = TestFunction::radial("1-r^2", Poly(vec![1.0, 0.0, -1.0]));
        assert!(matches!(jump.profiles(), Err(Error::InvalidTestFunction(_))));
        let bad = TestFunction { name: "bad".into(), m: 1, tangential: Poly::factored(1, 2, 0), normal: Poly::factored(1, 2, 0) };
        assert!(matches!(bad.profiles(), Err(Error::InvalidTestFunction(_))));
    }
}

//! Steady error system in s = −ln r. The unknowns are the θ-mean swirl u₀(s) and
//! the radial modes v_k(s), k = 1..=K; u_k = (D v_k − v_k)/(ik) makes the discrete
//! continuity equation exact. With r = e^{−s} and the momentum equations multiplied
//! by r,
//!   A := −ε²(u_ss + u_θθ + 2v_θ − u) + r·(convective terms) + r·R_u = −r p_θ
//!   B := −ε²(v_ss + v_θθ − 2u_θ − v) + r·(convective terms) + r·R_v =  r p_s
//! so p drops out of A_s + A + B_θ = 0 (per mode: A_k' + A_k + ik B_k = 0), and the
//! mean of A vanishes. Newton steps are solved by GMRES on the exact pseudo-spectral
//! Jacobian, preconditioned by banded per-mode solves with θ-averaged coefficients.

use crate::assemble::{radial_ops, ApproxSolution, Components};
use crate::banded::{BandLu, BandMatrix};
use crate::error::{Error, Result};
use crate::fd::{cumtrapz, DiffOp};
use crate::gmres::gmres;
use crate::grid::{LogGrid, PolarGrid};
use crate::spectral::{d_theta, irfft, rfft, CoordKind, Field};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

type C = Complex64;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ErrorSystemConfig {
    pub epsilon: f64,
    pub s_max: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub damping: f64,
    /// largest |k| solved; 0 means every mode below Nyquist
    pub mode_cap: usize,
}

impl Default for ErrorSystemConfig {
    fn default() -> Self {
        ErrorSystemConfig { epsilon: 0.1, s_max: 7.5, newton_tol: 1e-10, max_newton: 40, damping: 0.5, mode_cap: 0 }
    }
}

impl ErrorSystemConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.epsilon > 0.0) {
            bad.push("epsilon");
        }
        if !((-self.s_max).exp() < 1e-3) {
            bad.push("s_max (need e^{-s_max} < 1e-3)");
        }
        if !(self.newton_tol >= 1e-12) {
            bad.push("newton_tol (>= 1e-12)");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            bad.push("damping (in (0,1])");
        }
        if self.max_newton == 0 {
            bad.push("max_newton");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("error-solver config: {}", bad.join(", "))))
        }
    }

    fn cap(&self, n_theta: usize) -> usize {
        let top = n_theta / 2 - 1;
        if self.mode_cap == 0 {
            top
        } else {
            self.mode_cap.min(top)
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NewtonReport {
    pub residuals: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub gmres_iterations: Vec<usize>,
    pub damping_engaged: bool,
}

#[derive(Clone, Debug)]
pub struct ErrorField {
    pub grid: LogGrid,
    pub u: Field,
    pub v: Field,
    /// gauge: zero θ-mean at the wall
    pub p: Field,
    pub u0: Vec<f64>,
    pub v_modes: Vec<Vec<C>>,
    pub newton_report: NewtonReport,
}

impl ErrorField {
    /// Rebuild from sampled fields (e.g. loaded dumps); modal profiles are recovered
    /// by FFT, the Newton history is empty.
    pub fn from_fields(grid: LogGrid, u: Field, v: Field, p: Field) -> Result<Self> {
        let nt = grid.n_theta;
        for f in [&u, &v, &p] {
            if f.kind != CoordKind::Log || f.n_theta != nt || *f.radial != *grid.s_values {
                return Err(Error::GridMismatch("field does not live on the log grid".into()));
            }
        }
        let n = grid.s_values.len();
        let mut u0 = Vec::with_capacity(n);
        let mut v_modes = vec![Vec::with_capacity(n); nt / 2 - 1];
        for j in 0..n {
            u0.push(rfft(u.row(j))[0].re);
            let hv = rfft(v.row(j));
            for (k, m) in v_modes.iter_mut().enumerate() {
                m.push(hv[k + 1]);
            }
        }
        Ok(ErrorField { grid, u, v, p, u0, v_modes, newton_report: NewtonReport::default() })
    }
}

/// Derivative operators in s shared by the residual, the Jacobian and the mode solves.
pub fn log_radial_ops(s: &[f64]) -> (DiffOp, DiffOp) {
    (DiffOp::wide(s, 1, 5), DiffOp::wide(s, 2, 5))
}

fn apply_c(op: &DiffOp, f: &[C]) -> Vec<C> {
    op.rows.iter().map(|st| st.w.iter().enumerate().map(|(i, w)| f[st.start + i] * *w).sum()).collect()
}

fn ik(k: usize) -> C {
    C::new(0.0, k as f64)
}

/// u_k from v_k through continuity; the wall value is the boundary datum 0.
fn swirl_of(d1: &DiffOp, v: &[C], k: usize) -> Vec<C> {
    let dv = apply_c(d1, v);
    let mut u: Vec<C> = dv.iter().zip(v).map(|(a, b)| (a - b) / ik(k)).collect();
    u[0] = C::new(0.0, 0.0);
    u
}

// ---------------------------------------------------------------------------
// sparse row operators, composed symbolically and then stored banded

#[derive(Clone, Debug)]
struct RowOp {
    rows: Vec<(usize, Vec<C>)>,
}

impl RowOp {
    fn identity(n: usize) -> Self {
        RowOp { rows: (0..n).map(|j| (j, vec![C::new(1.0, 0.0)])).collect() }
    }

    fn from_diff(op: &DiffOp) -> Self {
        RowOp { rows: op.rows.iter().map(|s| (s.start, s.w.iter().map(|&w| C::new(w, 0.0)).collect())).collect() }
    }

    fn diag(c: &[C]) -> Self {
        RowOp { rows: c.iter().enumerate().map(|(j, &z)| (j, vec![z])).collect() }
    }

    fn then_rows(&self, c: &[C]) -> Self {
        RowOp {
            rows: self.rows.iter().zip(c).map(|((s, w), z)| (*s, w.iter().map(|x| x * z).collect())).collect(),
        }
    }

    fn scale(&self, z: C) -> Self {
        RowOp { rows: self.rows.iter().map(|(s, w)| (*s, w.iter().map(|x| x * z).collect())).collect() }
    }

    fn compose(&self, inner: &RowOp) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|(s, w)| {
                let lo = (0..w.len()).map(|i| inner.rows[s + i].0).min().unwrap();
                let hi = (0..w.len()).map(|i| inner.rows[s + i].0 + inner.rows[s + i].1.len()).max().unwrap();
                let mut acc = vec![C::new(0.0, 0.0); hi - lo];
                for (i, wi) in w.iter().enumerate() {
                    let (is, iw) = &inner.rows[s + i];
                    for (m, x) in iw.iter().enumerate() {
                        acc[is + m - lo] += wi * x;
                    }
                }
                (lo, acc)
            })
            .collect();
        RowOp { rows }
    }

    fn plus(&self, other: &RowOp) -> Self {
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|((s1, w1), (s2, w2))| {
                let lo = (*s1).min(*s2);
                let hi = (s1 + w1.len()).max(s2 + w2.len());
                let mut acc = vec![C::new(0.0, 0.0); hi - lo];
                for (i, x) in w1.iter().enumerate() {
                    acc[s1 + i - lo] += x;
                }
                for (i, x) in w2.iter().enumerate() {
                    acc[s2 + i - lo] += x;
                }
                (lo, acc)
            })
            .collect();
        RowOp { rows }
    }

    /// Banded copy with every row scaled to unit max-modulus, plus the scales.
    fn to_band(&self) -> (BandMatrix<C>, Vec<f64>) {
        let n = self.rows.len();
        let mut kl = 0;
        let mut ku = 0;
        for (j, (s, w)) in self.rows.iter().enumerate() {
            kl = kl.max(j.saturating_sub(*s));
            ku = ku.max((s + w.len()).saturating_sub(j + 1));
        }
        let mut m = BandMatrix::zeros(n, kl, ku);
        let mut scales = vec![1.0; n];
        for (j, (s, w)) in self.rows.iter().enumerate() {
            let big = w.iter().fold(0.0f64, |a, x| a.max(x.norm()));
            if big > 0.0 {
                scales[j] = 1.0 / big;
            }
            for (i, x) in w.iter().enumerate() {
                if x.norm() != 0.0 {
                    m.set(j, s + i, *x * scales[j]);
                }
            }
        }
        (m, scales)
    }
}

// ---------------------------------------------------------------------------
// per-mode linear problems

/// θ-independent transport coefficients of a mode solve, all weighted by r:
/// rotation = rŪ, inflow = rV̄, shear = r(Ū − ∂_sŪ), inflow_s = r∂_sV̄, where (Ū, V̄) is
/// the full base velocity (Couette included).
#[derive(Clone, Debug)]
pub struct ModeCoefficients {
    pub rotation: Vec<f64>,
    pub inflow: Vec<f64>,
    pub shear: Vec<f64>,
    pub inflow_s: Vec<f64>,
}

impl ModeCoefficients {
    pub fn zero(n: usize) -> Self {
        ModeCoefficients { rotation: vec![0.0; n], inflow: vec![0.0; n], shear: vec![0.0; n], inflow_s: vec![0.0; n] }
    }

    pub fn couette(a: f64, b: f64, s: &[f64]) -> Self {
        let r2: Vec<f64> = s.iter().map(|s| (-2.0 * s).exp()).collect();
        ModeCoefficients {
            rotation: r2.iter().map(|r2| a * r2 + b).collect(),
            inflow: vec![0.0; s.len()],
            shear: r2.iter().map(|r2| 2.0 * a * r2).collect(),
            inflow_s: vec![0.0; s.len()],
        }
    }
}

/// Discrete log-radial setting of the mode problems.
#[derive(Clone, Debug)]
pub struct ModeSystem {
    pub s: Arc<Vec<f64>>,
    pub r: Vec<f64>,
    pub eps2: f64,
    pub d1: DiffOp,
    pub d2: DiffOp,
}

#[derive(Clone, Debug)]
pub struct ModeSolution {
    pub k: usize,
    pub u: Vec<C>,
    pub v: Vec<C>,
    pub p: Vec<C>,
    /// ‖M x − b‖/‖b‖ of the banded system
    pub rel_residual: f64,
}

impl ModeSystem {
    pub fn new(s: Arc<Vec<f64>>, eps: f64) -> Self {
        let (d1, d2) = log_radial_ops(&s);
        let r = s.iter().map(|s| (-s).exp()).collect();
        ModeSystem { s, r, eps2: eps * eps, d1, d2 }
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    fn cvec(x: &[f64]) -> Vec<C> {
        x.iter().map(|&v| C::new(v, 0.0)).collect()
    }

    /// Banded matrix of mode k acting on u₀ (k = 0) or v_k (k ≥ 1). Interior rows carry
    /// A₀ or A_k' + A_k + ik B_k; boundary rows are u = v = 0 at the wall and, at
    /// s_max, ∂_s = 0 for k = 1 or zero values otherwise. Rows come equilibrated; the
    /// second value holds the row scales (apply them to the right side too).
    pub fn operator(&self, k: usize, c: &ModeCoefficients) -> (BandMatrix<C>, Vec<f64>) {
        let n = self.n();
        let e2 = C::new(self.eps2, 0.0);
        let id = RowOp::identity(n);
        let d1 = RowOp::from_diff(&self.d1);
        let d2 = RowOp::from_diff(&self.d2);
        let q = Self::cvec(&c.inflow);
        let mut rows = if k == 0 {
            // −ε²(u'' − u) + Q(u − u')
            let stokes = d2.plus(&id.scale(C::new(-1.0, 0.0))).scale(-e2);
            stokes.plus(&id.plus(&d1.scale(C::new(-1.0, 0.0))).then_rows(&q))
        } else {
            let kk = ik(k);
            let k2 = C::new((k * k + 1) as f64, 0.0);
            let mut m = d1.plus(&id.scale(C::new(-1.0, 0.0))).scale(C::new(1.0, 0.0) / kk);
            m.rows[0] = (0, vec![C::new(0.0, 0.0)]);
            let ikp: Vec<C> = c.rotation.iter().map(|p| kk * p).collect();
            let two_p: Vec<C> = c.rotation.iter().map(|p| C::new(2.0 * p, 0.0)).collect();
            let a_op = d2
                .compose(&m)
                .plus(&m.scale(-k2))
                .plus(&id.scale(kk * 2.0))
                .scale(-e2)
                .plus(&m.then_rows(&ikp))
                .plus(&m.plus(&d1.compose(&m).scale(C::new(-1.0, 0.0))).then_rows(&q))
                .plus(&RowOp::diag(&Self::cvec(&c.shear)));
            let b_op = d2
                .plus(&id.scale(-k2))
                .plus(&m.scale(-kk * 2.0))
                .scale(-e2)
                .plus(&RowOp::diag(&ikp))
                .plus(&m.then_rows(&two_p).scale(C::new(-1.0, 0.0)))
                .plus(&d1.then_rows(&q).scale(C::new(-1.0, 0.0)))
                .plus(&RowOp::diag(&Self::cvec(&c.inflow_s)).scale(C::new(-1.0, 0.0)));
            d1.plus(&id).compose(&a_op).plus(&b_op.scale(kk))
        };
        for (j, row) in self.boundary_rows(k) {
            rows.rows[j] = row;
        }
        rows.to_band()
    }

    fn boundary_rows(&self, k: usize) -> Vec<(usize, (usize, Vec<C>))> {
        let n = self.n();
        let one = (0usize, vec![C::new(1.0, 0.0)]);
        let d1row = |j: usize| {
            let st = &self.d1.rows[j];
            (st.start, st.w.iter().map(|&w| C::new(w, 0.0)).collect::<Vec<_>>())
        };
        if k == 0 {
            return vec![(0, one), (n - 1, (n - 1, vec![C::new(1.0, 0.0)]))];
        }
        let kk = ik(k);
        // u_k(N) = ((D v)(N) − v(N))/(ik)
        let u_row = |j: usize| {
            let (s, mut w) = d1row(j);
            w[j - s] -= C::new(1.0, 0.0);
            (s, w.into_iter().map(|x| x / kk).collect::<Vec<_>>())
        };
        let far = if k == 1 {
            // (D v)(N) and (D u)(N)
            let m = RowOp { rows: (0..n).map(|j| if j == 0 { (0, vec![C::new(0.0, 0.0)]) } else { u_row(j) }).collect() };
            let du = RowOp { rows: vec![d1row(n - 1)] }.compose(&m).rows.remove(0);
            vec![(n - 2, d1row(n - 1)), (n - 1, du)]
        } else {
            vec![(n - 2, (n - 1, vec![C::new(1.0, 0.0)])), (n - 1, u_row(n - 1))]
        };
        let mut out = vec![(0, one), (1, d1row(0))];
        out.extend(far);
        out
    }

    fn factor(&self, k: usize, c: &ModeCoefficients) -> Result<(BandLu<C>, Vec<f64>)> {
        let (m, sc) = self.operator(k, c);
        Ok((m.factor().ok_or(Error::SingularMode { mode: k as i64 })?, sc))
    }

    /// Rows of mode k that are boundary conditions with zero data on the unknown itself.
    fn dirichlet_nodes(&self, k: usize) -> Vec<usize> {
        let n = self.n();
        match k {
            0 => vec![0, n - 1],
            1 => vec![0],
            _ => vec![0, n - 1],
        }
    }
}

/// One Fourier mode of the linearized system with θ-independent coefficients,
/// forced by modal momentum sources (f_u, f_v) in the r-weighted log form:
/// A_k + ik r p_k = f_u, B_k − r p_k' = f_v.
pub fn linearized_mode_solve(
    k: usize,
    coeffs: &ModeCoefficients,
    rhs_u: &[C],
    rhs_v: &[C],
    sys: &ModeSystem,
) -> Result<ModeSolution> {
    let n = sys.n();
    if rhs_u.len() != n || rhs_v.len() != n || coeffs.rotation.len() != n {
        return Err(Error::Shape(format!("mode solve expects {n} radial values")));
    }
    let (mat, scales) = sys.operator(k, coeffs);
    let mut b: Vec<C> = if k == 0 {
        rhs_u.to_vec()
    } else {
        let df = apply_c(&sys.d1, rhs_u);
        (0..n).map(|j| df[j] + rhs_u[j] + ik(k) * rhs_v[j]).collect()
    };
    for (j, _) in sys.boundary_rows(k) {
        b[j] = C::new(0.0, 0.0);
    }
    for (bj, sj) in b.iter_mut().zip(&scales) {
        *bj *= *sj;
    }
    let lu = mat.clone().factor().ok_or(Error::SingularMode { mode: k as i64 })?;
    let mut x = lu.solve(&b);
    for j in sys.dirichlet_nodes(k) {
        x[j] = C::new(0.0, 0.0);
    }
    let mx = mat.matvec(&x);
    let bn = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let rn = mx.iter().zip(&b).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let rel_residual = if bn > 0.0 { rn / bn } else { rn };

    let zero = vec![C::new(0.0, 0.0); n];
    let (u, v) = if k == 0 { (x, zero.clone()) } else { (swirl_of(&sys.d1, &x, k), x) };
    let (a_k, b_k) = mode_momentum(sys, k, coeffs, &u, &v);
    let p = if k == 0 {
        let g: Vec<f64> = (0..n).map(|j| ((b_k[j] - rhs_v[j]) / sys.r[j]).re).collect();
        cumtrapz(&sys.s, &g).into_iter().map(|x| C::new(x, 0.0)).collect()
    } else {
        (0..n).map(|j| (rhs_u[j] - a_k[j]) / (ik(k) * sys.r[j])).collect()
    };
    Ok(ModeSolution { k, u, v, p, rel_residual })
}

/// (A_k, B_k) of the linear operator for given modal velocities.
fn mode_momentum(sys: &ModeSystem, k: usize, c: &ModeCoefficients, u: &[C], v: &[C]) -> (Vec<C>, Vec<C>) {
    let n = sys.n();
    let e2 = sys.eps2;
    let kk = ik(k);
    let k2 = (k * k + 1) as f64;
    let us = apply_c(&sys.d1, u);
    let uss = apply_c(&sys.d2, u);
    let vs = apply_c(&sys.d1, v);
    let vss = apply_c(&sys.d2, v);
    let mut a = vec![C::new(0.0, 0.0); n];
    let mut b = vec![C::new(0.0, 0.0); n];
    for j in 0..n {
        let p = c.rotation[j];
        let q = c.inflow[j];
        a[j] = -e2 * (uss[j] - k2 * u[j] + 2.0 * kk * v[j]) + kk * p * u[j] + q * (u[j] - us[j]) + c.shear[j] * v[j];
        b[j] = -e2 * (vss[j] - k2 * v[j] - 2.0 * kk * u[j]) + kk * p * v[j] - 2.0 * p * u[j] - q * vs[j]
            - c.inflow_s[j] * v[j];
    }
    (a, b)
}

// ---------------------------------------------------------------------------
// the nonlinear problem

/// Values and derivatives of a velocity pair on the log grid (s-major, θ-minor).
#[derive(Clone, Debug, Default)]
struct Phys {
    u: Vec<f64>,
    v: Vec<f64>,
    us: Vec<f64>,
    vs: Vec<f64>,
    uss: Vec<f64>,
    vss: Vec<f64>,
    ut: Vec<f64>,
    vt: Vec<f64>,
    utt: Vec<f64>,
    vtt: Vec<f64>,
}

impl Phys {
    fn plus(&self, o: &Phys) -> Phys {
        let add = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
        Phys {
            u: add(&self.u, &o.u),
            v: add(&self.v, &o.v),
            us: add(&self.us, &o.us),
            vs: add(&self.vs, &o.vs),
            uss: Vec::new(),
            vss: Vec::new(),
            ut: add(&self.ut, &o.ut),
            vt: add(&self.vt, &o.vt),
            utt: Vec::new(),
            vtt: Vec::new(),
        }
    }
}

/// Unknowns: u₀ and v_k, k = 1..=K.
#[derive(Clone, Debug)]
struct Modes {
    u0: Vec<f64>,
    v: Vec<Vec<C>>,
}

struct Problem {
    sys: ModeSystem,
    nt: usize,
    kmax: usize,
    a: f64,
    b: f64,
    /// departure of the approximation from Couette, log ordering
    base: Phys,
    src_u: Vec<f64>,
    src_v: Vec<f64>,
    weights: Vec<f64>,
}

fn reverse_rows(f: &Field) -> Vec<f64> {
    (0..f.n_radial()).rev().flat_map(|j| f.row(j).to_vec()).collect()
}

impl Problem {
    fn new(approx: &ApproxSolution, grid: &LogGrid, eps: f64, kmax: usize, extra: Option<(&Field, &Field)>) -> Self {
        let sys = ModeSystem::new(grid.s_values.clone(), eps);
        let nt = grid.n_theta;
        let n = sys.n();
        let du = reverse_rows(&approx.du);
        let dv = reverse_rows(&approx.dv);
        let base = Phys {
            us: sys.d1.apply_strided(&du, nt),
            vs: sys.d1.apply_strided(&dv, nt),
            ut: d_theta(&du, nt, 1),
            vt: d_theta(&dv, nt, 1),
            u: du,
            v: dv,
            ..Phys::default()
        };
        let mut ru = reverse_rows(&approx.r_u);
        let mut rv = reverse_rows(&approx.r_v);
        if let Some((eu, ev)) = extra {
            for (x, y) in ru.iter_mut().zip(reverse_rows(eu)) {
                *x -= y;
            }
            for (x, y) in rv.iter_mut().zip(reverse_rows(ev)) {
                *x -= y;
            }
        }
        for j in 0..n {
            for i in 0..nt {
                ru[j * nt + i] *= sys.r[j];
                rv[j * nt + i] *= sys.r[j];
            }
        }
        let s = &sys.s;
        let mut weights = vec![0.0; n];
        for j in 1..n {
            let h = 0.5 * (s[j] - s[j - 1]);
            weights[j - 1] += h;
            weights[j] += h;
        }
        let p = &approx.components.params;
        Problem { nt, kmax, a: p.a, b: p.b, base, src_u: ru, src_v: rv, weights, sys }
    }

    /// Zero the Dirichlet values so the boundary rows hold exactly.
    fn clamp(&self, m: &mut Modes) {
        for j in self.sys.dirichlet_nodes(0) {
            m.u0[j] = 0.0;
        }
        for (i, v) in m.v.iter_mut().enumerate() {
            for j in self.sys.dirichlet_nodes(i + 1) {
                v[j] = C::new(0.0, 0.0);
            }
        }
    }

    fn n(&self) -> usize {
        self.sys.n()
    }

    fn zero_modes(&self) -> Modes {
        Modes { u0: vec![0.0; self.n()], v: vec![vec![C::new(0.0, 0.0); self.n()]; self.kmax] }
    }

    fn unpack(&self, x: &[f64]) -> Modes {
        let n = self.n();
        let u0 = x[..n].to_vec();
        let v = (0..self.kmax)
            .map(|k| {
                let off = n + 2 * n * k;
                (0..n).map(|j| C::new(x[off + 2 * j], x[off + 2 * j + 1])).collect()
            })
            .collect();
        Modes { u0, v }
    }

    /// Modal profiles (u_k, v_k) for k = 0..=K.
    fn profiles(&self, m: &Modes) -> (Vec<Vec<C>>, Vec<Vec<C>>) {
        let n = self.n();
        let mut us = vec![m.u0.iter().map(|&x| C::new(x, 0.0)).collect::<Vec<_>>()];
        let mut vs = vec![vec![C::new(0.0, 0.0); n]];
        let rest: Vec<Vec<C>> = m.v.par_iter().enumerate().map(|(i, v)| swirl_of(&self.sys.d1, v, i + 1)).collect();
        us.extend(rest);
        vs.extend(m.v.iter().cloned());
        (us, vs)
    }

    fn physical(&self, m: &Modes) -> Phys {
        let nt = self.nt;
        let n = self.n();
        let nm = nt / 2 + 1;
        let (uk, vk) = self.profiles(m);
        let d = |p: &Vec<Vec<C>>, op: &DiffOp| p.iter().map(|f| apply_c(op, f)).collect::<Vec<_>>();
        let (u_s, u_ss, v_s, v_ss) = (d(&uk, &self.sys.d1), d(&uk, &self.sys.d2), d(&vk, &self.sys.d1), d(&vk, &self.sys.d2));
        let synth = |prof: &Vec<Vec<C>>, order: u32| -> Vec<f64> {
            let mut out = vec![0.0; n * nt];
            out.par_chunks_mut(nt).enumerate().for_each(|(j, row)| {
                let mut half = vec![C::new(0.0, 0.0); nm];
                for (k, p) in prof.iter().enumerate() {
                    half[k] = p[j] * ik(k).powu(order);
                }
                row.copy_from_slice(&irfft(&half, nt));
            });
            out
        };
        Phys {
            u: synth(&uk, 0),
            v: synth(&vk, 0),
            us: synth(&u_s, 0),
            vs: synth(&v_s, 0),
            uss: synth(&u_ss, 0),
            vss: synth(&v_ss, 0),
            ut: synth(&uk, 1),
            vt: synth(&vk, 1),
            utt: synth(&uk, 2),
            vtt: synth(&vk, 2),
        }
    }

    /// Pointwise (A, B) for the increment d advected by `adv` plus d's transport of `tgt`.
    fn momentum(&self, d: &Phys, adv: &Phys, tgt: &Phys, with_source: bool) -> (Vec<f64>, Vec<f64>) {
        let nt = self.nt;
        let n = self.n();
        let e2 = self.sys.eps2;
        let mut a = vec![0.0; n * nt];
        let mut b = vec![0.0; n * nt];
        a.par_chunks_mut(nt).zip(b.par_chunks_mut(nt)).enumerate().for_each(|(j, (ar, br))| {
            let r = self.sys.r[j];
            let rot = self.a * r * r + self.b;
            let shear = 2.0 * self.a * r * r;
            for i in 0..nt {
                let x = j * nt + i;
                let (ru, rv) = (r * d.u[x], r * d.v[x]);
                let (au, av) = (r * adv.u[x], r * adv.v[x]);
                let mut va = -e2 * (d.uss[x] + d.utt[x] + 2.0 * d.vt[x] - d.u[x]) + rot * d.ut[x] + shear * d.v[x]
                    + au * d.ut[x]
                    - av * d.us[x]
                    + av * d.u[x]
                    + ru * tgt.ut[x]
                    - rv * tgt.us[x]
                    + rv * tgt.u[x];
                let mut vb = -e2 * (d.vss[x] + d.vtt[x] - 2.0 * d.ut[x] - d.v[x]) + rot * d.vt[x]
                    - 2.0 * rot * d.u[x]
                    + au * d.vt[x]
                    - av * d.vs[x]
                    - au * d.u[x]
                    + ru * tgt.vt[x]
                    - rv * tgt.vs[x]
                    - ru * tgt.u[x];
                if with_source {
                    va += self.src_u[x];
                    vb += self.src_v[x];
                }
                ar[i] = va;
                br[i] = vb;
            }
        });
        (a, b)
    }

    /// Assemble the modal rows from physical (A, B) and the boundary rows of `m`.
    fn rows(&self, a: &[f64], b: &[f64], m: &Modes) -> Vec<f64> {
        let nt = self.nt;
        let n = self.n();
        let km = self.kmax;
        let mut am = vec![vec![C::new(0.0, 0.0); n]; km + 1];
        let mut bm = vec![vec![C::new(0.0, 0.0); n]; km + 1];
        let spec: Vec<(Vec<C>, Vec<C>)> =
            (0..n).into_par_iter().map(|j| (rfft(&a[j * nt..(j + 1) * nt]), rfft(&b[j * nt..(j + 1) * nt]))).collect();
        for (j, (sa, sb)) in spec.iter().enumerate() {
            for k in 0..=km {
                am[k][j] = sa[k];
                bm[k][j] = sb[k];
            }
        }
        let (uk, vk) = self.profiles(m);
        let modal: Vec<Vec<C>> = (0..=km)
            .into_par_iter()
            .map(|k| {
                let mut g: Vec<C> = if k == 0 {
                    am[0].clone()
                } else {
                    let da = apply_c(&self.sys.d1, &am[k]);
                    (0..n).map(|j| da[j] + am[k][j] + ik(k) * bm[k][j]).collect()
                };
                for (j, (start, w)) in self.sys.boundary_rows(k) {
                    let x = if k == 0 { &uk[0] } else { &vk[k] };
                    g[j] = w.iter().enumerate().map(|(i, c)| c * x[start + i]).sum();
                }
                g
            })
            .collect();
        let mut out: Vec<f64> = modal[0].iter().map(|z| z.re).collect();
        for g in &modal[1..] {
            for z in g {
                out.push(z.re);
                out.push(z.im);
            }
        }
        out
    }

    fn total(&self, x: &Phys) -> Phys {
        self.base.plus(x)
    }

    fn residual(&self, m: &Modes) -> (Vec<f64>, Phys) {
        let x = self.physical(m);
        let w = self.total(&x);
        let (a, b) = self.momentum(&x, &w, &self.base, true);
        (self.rows(&a, &b, m), w)
    }

    fn jacobian_apply(&self, w: &Phys, dx: &[f64]) -> Vec<f64> {
        let dm = self.unpack(dx);
        let d = self.physical(&dm);
        let (a, b) = self.momentum(&d, w, w, false);
        self.rows(&a, &b, &dm)
    }

    /// θ-averaged coefficients of the Jacobian about base + iterate.
    fn mean_coefficients(&self, w: &Phys) -> ModeCoefficients {
        let nt = self.nt;
        let n = self.n();
        let mean = |f: &Vec<f64>| (0..n).map(|j| f[j * nt..(j + 1) * nt].iter().sum::<f64>() / nt as f64).collect::<Vec<_>>();
        let (mu, mv, mus, mvs) = (mean(&w.u), mean(&w.v), mean(&w.us), mean(&w.vs));
        let mut c = ModeCoefficients::couette(self.a, self.b, &self.sys.s);
        for j in 0..n {
            let r = self.sys.r[j];
            c.rotation[j] += r * mu[j];
            c.inflow[j] = r * mv[j];
            c.shear[j] += r * (mu[j] - mus[j]);
            c.inflow_s[j] = r * mvs[j];
        }
        c
    }

    /// Discrete L² over (θ, s) of the momentum residual: A₀ for the mean and, with the
    /// pressure mode chosen to satisfy the θ-equation, G_k/(ik) for mode k (Parseval,
    /// trapezoid in s). Boundary rows enter unweighted.
    fn norm(&self, g: &[f64]) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for j in 0..n {
            acc += self.weights[j] * g[j] * g[j];
        }
        for k in 0..self.kmax {
            let off = n + 2 * n * k;
            let kk = ((k + 1) * (k + 1)) as f64;
            for j in 0..n {
                acc += 2.0 * self.weights[j] * (g[off + 2 * j].powi(2) + g[off + 2 * j + 1].powi(2)) / kk;
            }
        }
        (2.0 * std::f64::consts::PI * acc).sqrt()
    }

    fn fields(&self, m: &Modes, grid: &LogGrid) -> (Field, Field, Field) {
        let nt = self.nt;
        let n = self.n();
        let x = self.physical(m);
        let w = self.total(&x);
        let (a, b) = self.momentum(&x, &w, &self.base, true);
        // pressure: modes k ≠ 0 from A, the mean from ∂_s p₀ = e^s B₀
        let mut half = vec![vec![C::new(0.0, 0.0); nt / 2 + 1]; n];
        let mut g0 = vec![0.0; n];
        for j in 0..n {
            let sa = rfft(&a[j * nt..(j + 1) * nt]);
            let sb = rfft(&b[j * nt..(j + 1) * nt]);
            g0[j] = sb[0].re / self.sys.r[j];
            for k in 1..=self.kmax {
                half[j][k] = -sa[k] / (ik(k) * self.sys.r[j]);
            }
        }
        let p0 = cumtrapz(&self.sys.s, &g0);
        let mut p = Vec::with_capacity(n * nt);
        for j in 0..n {
            half[j][0] = C::new(p0[j], 0.0);
            p.extend(irfft(&half[j], nt));
        }
        let mk = |data: Vec<f64>| Field { kind: CoordKind::Log, n_theta: nt, radial: grid.s_values.clone(), data };
        (mk(x.u), mk(x.v), mk(p))
    }
}

fn check_grids(approx: &ApproxSolution, grid: &LogGrid) -> Result<()> {
    let pg = &approx.grid;
    let n = grid.s_values.len();
    let same = pg.n_theta == grid.n_theta
        && pg.radii.len() == n
        && (0..n).all(|j| (pg.radii[n - 1 - j] - (-grid.s_values[j]).exp()).abs() <= 1e-14 * pg.radii[n - 1 - j].max(1e-300) + 1e-16);
    if same {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "approximation grid ({} radii x {} angles) is not the log grid ({} x {}) mapped to r",
            pg.radii.len(),
            pg.n_theta,
            n,
            grid.n_theta
        )))
    }
}

pub fn solve_error(approx: &ApproxSolution, grid: &LogGrid, config: &ErrorSystemConfig) -> Result<ErrorField> {
    solve_error_with_source(approx, grid, config, None)
}

/// As [`solve_error`] with an extra momentum source: L(u) + N(u) + ∇p = −R^a + extra
/// (polar form, on the approximation grid).
pub fn solve_error_with_source(
    approx: &ApproxSolution,
    grid: &LogGrid,
    config: &ErrorSystemConfig,
    extra: Option<(&Field, &Field)>,
) -> Result<ErrorField> {
    config.validate()?;
    check_grids(approx, grid)?;
    if (approx.eps - config.epsilon).abs() > 1e-14 * config.epsilon {
        return Err(Error::Validation(format!("approximation built at eps = {}, config says {}", approx.eps, config.epsilon)));
    }
    if (grid.s_max - config.s_max).abs() > 1e-12 {
        return Err(Error::Validation(format!("grid s_max {} differs from config s_max {}", grid.s_max, config.s_max)));
    }
    let kmax = config.cap(grid.n_theta);
    let prob = Problem::new(approx, grid, config.epsilon, kmax, extra);
    let mut modes = prob.zero_modes();
    let (mut g, mut w) = prob.residual(&modes);
    let mut res = prob.norm(&g);
    let mut report = NewtonReport { residuals: vec![res], ..NewtonReport::default() };
    let mut growth = 0;
    let mut it = 0;
    while res > config.newton_tol {
        if it == config.max_newton {
            return Err(Error::NonConvergence {
                message: format!("Newton did not reach {} in {} iterations", config.newton_tol, config.max_newton),
                trace: report.residuals,
            });
        }
        it += 1;
        let coeffs = prob.mean_coefficients(&w);
        let lus: Vec<(BandLu<C>, Vec<f64>)> =
            (0..=kmax).into_par_iter().map(|k| prob.sys.factor(k, &coeffs)).collect::<Result<_>>()?;
        let n = prob.n();
        let precond = |z: &[f64]| -> Vec<f64> {
            let zm = prob.unpack_rows(z);
            let sol: Vec<Vec<C>> = zm
                .into_par_iter()
                .enumerate()
                .map(|(k, mut b)| {
                    for (bj, sj) in b.iter_mut().zip(&lus[k].1) {
                        *bj *= *sj;
                    }
                    lus[k].0.solve(&b)
                })
                .collect();
            let mut out: Vec<f64> = sol[0].iter().map(|z| z.re).collect();
            for s in &sol[1..] {
                for z in s {
                    out.push(z.re);
                    out.push(z.im);
                }
            }
            debug_assert_eq!(out.len(), n * (1 + 2 * kmax));
            out
        };
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let rtol = (1e-2 * res).clamp(1e-13, 1e-4);
        let out = gmres(|x| prob.jacobian_apply(&w, x), precond, &rhs, None, rtol, 80, 800);
        if !out.converged && out.rel_residual > 1e-2 {
            return Err(Error::NonConvergence {
                message: format!("linear solve stalled at relative residual {:.3e}", out.rel_residual),
                trace: report.residuals,
            });
        }
        let lambda = if res >= 1e-2 { config.damping } else { 1.0 };
        if lambda < 1.0 {
            report.damping_engaged = true;
        }
        let step = prob.unpack(&out.x);
        for (a, b) in modes.u0.iter_mut().zip(&step.u0) {
            *a += lambda * b;
        }
        for (vk, sk) in modes.v.iter_mut().zip(&step.v) {
            for (a, b) in vk.iter_mut().zip(sk) {
                *a += lambda * b;
            }
        }
        prob.clamp(&mut modes);
        let (g1, w1) = prob.residual(&modes);
        let res1 = prob.norm(&g1);
        report.residuals.push(res1);
        report.step_sizes.push(lambda);
        report.gmres_iterations.push(out.iterations);
        if lambda < 1.0 && res1 > res {
            growth += 1;
            if growth >= 3 {
                return Err(Error::NonConvergence {
                    message: "residual grew over 3 consecutive damped steps".into(),
                    trace: report.residuals,
                });
            }
        } else {
            growth = 0;
        }
        if !res1.is_finite() {
            return Err(Error::NonConvergence { message: "residual is not finite".into(), trace: report.residuals });
        }
        g = g1;
        w = w1;
        res = res1;
    }
    let (u, v, p) = prob.fields(&modes, grid);
    Ok(ErrorField { grid: grid.clone(), u, v, p, u0: modes.u0, v_modes: modes.v, newton_report: report })
}

impl Problem {
    fn unpack_rows(&self, z: &[f64]) -> Vec<Vec<C>> {
        let n = self.n();
        let mut out = vec![z[..n].iter().map(|&x| C::new(x, 0.0)).collect::<Vec<_>>()];
        for k in 0..self.kmax {
            let off = n + 2 * n * k;
            out.push((0..n).map(|j| C::new(z[off + 2 * j], z[off + 2 * j + 1])).collect());
        }
        out
    }
}

/// Divergence-free velocity on the log grid from u₀ and the modes v_k (k = 1..).
pub fn velocity_from_modes(grid: &LogGrid, u0: &[f64], v_modes: &[Vec<C>]) -> Result<(Field, Field)> {
    let n = grid.s_values.len();
    let nt = grid.n_theta;
    if u0.len() != n || v_modes.iter().any(|v| v.len() != n) || v_modes.len() > nt / 2 - 1 {
        return Err(Error::Shape("mode profiles do not match the log grid".into()));
    }
    let (d1, _) = log_radial_ops(&grid.s_values);
    let uk: Vec<Vec<C>> = v_modes.iter().enumerate().map(|(i, v)| swirl_of(&d1, v, i + 1)).collect();
    let mut u = Vec::with_capacity(n * nt);
    let mut v = Vec::with_capacity(n * nt);
    for j in 0..n {
        let mut hu = vec![C::new(0.0, 0.0); nt / 2 + 1];
        let mut hv = hu.clone();
        hu[0] = C::new(u0[j], 0.0);
        for k in 0..v_modes.len() {
            hu[k + 1] = uk[k][j];
            hv[k + 1] = v_modes[k][j];
        }
        u.extend(irfft(&hu, nt));
        v.extend(irfft(&hv, nt));
    }
    let mk = |data| Field { kind: CoordKind::Log, n_theta: nt, radial: grid.s_values.clone(), data };
    Ok((mk(u), mk(v)))
}

/// The error operator without pressure, L(u) + N(u), in polar form on the
/// approximation grid, for a velocity given on the log grid.
pub fn error_operator(approx: &ApproxSolution, grid: &LogGrid, u: &Field, v: &Field) -> Result<(Field, Field)> {
    check_grids(approx, grid)?;
    let nt = grid.n_theta;
    let prob = Problem::new(approx, grid, approx.eps, nt / 2 - 1, None);
    let n = prob.n();
    let (d1, d2) = (&prob.sys.d1, &prob.sys.d2);
    let x = Phys {
        us: d1.apply_strided(&u.data, nt),
        vs: d1.apply_strided(&v.data, nt),
        uss: d2.apply_strided(&u.data, nt),
        vss: d2.apply_strided(&v.data, nt),
        ut: d_theta(&u.data, nt, 1),
        vt: d_theta(&v.data, nt, 1),
        utt: d_theta(&u.data, nt, 2),
        vtt: d_theta(&v.data, nt, 2),
        u: u.data.clone(),
        v: v.data.clone(),
    };
    let w = prob.total(&x);
    let (a, b) = prob.momentum(&x, &w, &prob.base, false);
    let back = |f: Vec<f64>| {
        let mut data = Vec::with_capacity(n * nt);
        for j in (0..n).rev() {
            data.extend(f[j * nt..(j + 1) * nt].iter().map(|x| x / prob.sys.r[j]));
        }
        Field { kind: CoordKind::Polar, n_theta: nt, radial: approx.grid.radii.clone(), data }
    };
    Ok((back(a), back(b)))
}

// ---------------------------------------------------------------------------
// full solution

#[derive(Clone, Debug)]
pub struct NSSolution {
    pub grid: PolarGrid,
    /// u^ε − b/r
    pub u_regular: Field,
    pub v_full: Field,
    /// coefficient of the analytic b/r swirl
    pub swirl_singular: f64,
    /// vorticity of the regular part (the point vortex 2πbδ is not sampled)
    pub omega_regular: Field,
    /// ω − 2a, from the departure from Couette (exactly zero for Couette)
    pub omega_departure: Field,
    /// ‖u^ε − u_e − u_p^{(0)}‖_∞ over the grid
    pub sup_u_deviation: f64,
    /// ‖v^ε‖_∞
    pub sup_v: f64,
}

impl NSSolution {
    pub fn u_full(&self, j: usize, i: usize) -> f64 {
        self.u_regular.at(j, i) + self.swirl_singular / self.grid.radii[j]
    }
}

/// Vorticity (1/r)∂_r(r u) − (1/r)∂_θ v of a regular polar velocity.
pub fn regular_vorticity(u: &Field, v: &Field) -> Field {
    let nt = u.n_theta;
    let (d1, _) = radial_ops(&u.radial);
    let ur = d1.apply_strided(&u.data, nt);
    let vt = d_theta(&v.data, nt, 1);
    let data = (0..u.data.len())
        .map(|x| {
            let r = u.radial[x / nt];
            ur[x] + (u.data[x] - vt[x]) / r
        })
        .collect();
    Field { data, ..u.clone() }
}

/// χ(r)·u_p^{(0)}(θ, (r−1)/ε) on the polar grid.
pub fn leading_layer_on(c: &Components, grid: &PolarGrid) -> Result<Field> {
    let rows = grid
        .radii
        .iter()
        .map(|&r| crate::assemble::layer_row(c, 0, r).map(|o| o.map(|(u, _)| u).unwrap_or_else(|| vec![0.0; grid.n_theta])))
        .collect::<Result<Vec<_>>>()?;
    Ok(Field { kind: CoordKind::Polar, n_theta: grid.n_theta, radial: grid.radii.clone(), data: rows.concat() })
}

pub fn reconstruct_full(approx: &ApproxSolution, error: &ErrorField) -> Result<NSSolution> {
    check_grids(approx, &error.grid)?;
    let nt = approx.grid.n_theta;
    let radii = approx.grid.radii.clone();
    let p = &approx.components.params;
    let eu = reverse_rows(&error.u);
    let ev = reverse_rows(&error.v);
    let mut u_reg = approx.du.clone();
    let mut dev = approx.du.clone();
    for (x, e) in dev.data.iter_mut().zip(&eu) {
        *x += e;
    }
    for j in 0..radii.len() {
        for i in 0..nt {
            u_reg.data[j * nt + i] = dev.data[j * nt + i] + p.a * radii[j];
        }
    }
    let v_full = Field { data: approx.dv.data.iter().zip(&ev).map(|(a, b)| a + b).collect(), ..approx.dv.clone() };
    let layer = leading_layer_on(&approx.components, &approx.grid)?;
    let sup_u_deviation = dev.data.iter().zip(&layer.data).fold(0.0f64, |m, (d, l)| m.max((d - l).abs()));
    let sup_v = v_full.sup();
    let omega_regular = regular_vorticity(&u_reg, &v_full);
    let omega_departure = regular_vorticity(&dev, &v_full);
    Ok(NSSolution {
        grid: approx.grid.clone(),
        u_regular: u_reg,
        v_full,
        swirl_singular: p.b,
        omega_regular,
        omega_departure,
        sup_u_deviation,
        sup_v,
    })
}

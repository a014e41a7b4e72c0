//! Couette base flow, Batchelor-Wood constant, harmonic outer correctors and
//! their radial modifier.

use crate::cutoff::CutoffProfile;
use crate::error::{Error, Result};
use crate::fd::simpson_uniform;
use crate::spectral::rfft;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Zero-mean wall modulation as a finite cosine/sine series (entry n-1 multiplies nθ).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Varpi {
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl Varpi {
    pub fn cos1() -> Self {
        Varpi { cos: vec![1.0], sin: vec![] }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let c: f64 = self.cos.iter().enumerate().map(|(i, a)| a * ((i + 1) as f64 * theta).cos()).sum();
        let s: f64 = self.sin.iter().enumerate().map(|(i, a)| a * ((i + 1) as f64 * theta).sin()).sum();
        c + s
    }

    pub fn max_mode(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    fn quad_points(&self) -> usize {
        4 * self.max_mode() + 64
    }

    /// Trapezoid quadrature of ϖ² over one period (exact for trigonometric polynomials).
    pub fn square_integral(&self) -> f64 {
        let m = self.quad_points();
        let h = 2.0 * PI / m as f64;
        (0..m).map(|j| self.eval(j as f64 * h).powi(2)).sum::<f64>() * h
    }

    pub fn mean_integral(&self) -> f64 {
        let m = self.quad_points();
        let h = 2.0 * PI / m as f64;
        (0..m).map(|j| self.eval(j as f64 * h)).sum::<f64>() * h
    }
}

pub fn solve_batchelor_wood(alpha: f64, eta: f64, varpi: &Varpi, b: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Validation(format!("alpha must be positive, got {alpha}")));
    }
    if !(b > 0.0) {
        return Err(Error::Validation(format!("b must be positive, got {b}")));
    }
    if !(eta >= 0.0) {
        return Err(Error::Validation(format!("eta must be nonnegative, got {eta}")));
    }
    let mean = varpi.mean_integral();
    if mean.abs() > 1e-12 * (1.0 + varpi.square_integral().sqrt()) {
        return Err(Error::Validation(format!("varpi has nonzero mean {mean}")));
    }
    let total = (alpha * alpha + eta * eta / (2.0 * PI) * varpi.square_integral()).sqrt();
    let a = total - b;
    if a + b <= 0.0 {
        return Err(Error::Infeasible(format!("a + b = {} is not positive", a + b)));
    }
    Ok(a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouetteParams {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub eta: f64,
    pub varpi: Varpi,
}

impl CouetteParams {
    pub fn new(alpha: f64, eta: f64, b: f64, varpi: Varpi) -> Result<Self> {
        let a = solve_batchelor_wood(alpha, eta, &varpi, b)?;
        Ok(CouetteParams { a, b, alpha, eta, varpi })
    }

    /// |(a+b)² − α² − (η²/2π)∫ϖ²|
    pub fn batchelor_wood_residual(&self) -> f64 {
        ((self.a + self.b).powi(2)
            - self.alpha.powi(2)
            - self.eta.powi(2) / (2.0 * PI) * self.varpi.square_integral())
        .abs()
    }

    pub fn wall_speed(&self) -> f64 {
        self.a + self.b
    }

    /// Regular swirl a·r (the b/r part is kept analytic everywhere).
    pub fn swirl(&self, r: f64) -> f64 {
        self.a * r + self.b / r
    }

    pub fn wall_data(&self, theta: f64) -> f64 {
        self.alpha + self.eta * self.varpi.eval(theta)
    }
}

/// (swirl, p_e(r) − p_e(1))
pub fn couette_eval(p: &CouetteParams, r: f64) -> Result<(f64, f64)> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Domain(format!("radius {r} outside (0,1]")));
    }
    let (a, b) = (p.a, p.b);
    let pres = 0.5 * a * a * (r * r - 1.0) + 2.0 * a * b * r.ln() + 0.5 * b * b * (1.0 - 1.0 / (r * r));
    Ok((a * r + b / r, pres))
}

/// The far-field rigid-rotation modifier χA∞ + A_i.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Modifier {
    pub a_infty: f64,
    pub a_i: f64,
    /// (I1(1), I2(1)); A_i is evaluated as r(I2(1) − (I1(1) − I1(r))) − I2(r)/r so A_i(1) = 0 exactly
    wall: (f64, f64),
    #[serde(skip)]
    table: Option<PressureTable>,
    #[serde(skip, default = "crate::cutoff::build_cutoff")]
    chi: CutoffProfile,
}

const SIMPSON_PANELS: usize = 2000;

impl Modifier {
    fn phi(&self, s: f64) -> f64 {
        let [c, c1, c2] = self.chi.eval(s);
        -self.a_infty * (s * c2 + c1 - c / s)
    }

    /// (∫_{lo}^r φ/(2s), ∫_{lo}^r sφ/2) by composite Simpson.
    fn integrals(&self, r: f64) -> (f64, f64) {
        let lo = self.chi.lo;
        let hi = r.min(1.0);
        if hi <= lo || self.a_infty == 0.0 {
            return (0.0, 0.0);
        }
        let n = 2 * ((SIMPSON_PANELS as f64 * (hi - lo) / (1.0 - lo)).ceil() as usize).max(1);
        let h = (hi - lo) / n as f64;
        let xs: Vec<f64> = (0..=n).map(|j| lo + j as f64 * h).collect();
        let f1: Vec<f64> = xs.iter().map(|&s| self.phi(s) / (2.0 * s)).collect();
        let f2: Vec<f64> = xs.iter().map(|&s| s * self.phi(s) / 2.0).collect();
        (simpson_uniform(h, &f1), simpson_uniform(h, &f2))
    }

    pub fn new(a_infty: f64, chi: CutoffProfile) -> Self {
        let mut m = Modifier { a_infty, a_i: 0.0, wall: (0.0, 0.0), table: None, chi };
        let (i1, i2) = m.integrals(1.0);
        // A_i(1) = a_i + I1(1) − I2(1) = 0
        m.a_i = i2 - i1;
        m.wall = (i1, i2);
        m.table = Some(PressureTable::build(&m));
        m
    }

    /// A_i(r)
    pub fn profile(&self, r: f64) -> f64 {
        self.profile_derivs(r)[0]
    }

    /// (A_i, A_i', A_i'') from the integral representation.
    pub fn profile_derivs(&self, r: f64) -> [f64; 3] {
        let (i1, i2) = self.integrals(r);
        let phi = if r > self.chi.lo { self.phi(r) } else { 0.0 };
        let slope = self.wall.1 - (self.wall.0 - i1);
        [
            r * slope - i2 / r,
            slope + i2 / (r * r),
            phi / r - 2.0 * i2 / (r * r * r),
        ]
    }

    /// χA∞ + A_i and its first two derivatives.
    pub fn total(&self, r: f64) -> [f64; 3] {
        let [c, c1, c2] = self.chi.eval(r);
        let [a0, a1, a2] = self.profile_derivs(r);
        [c * self.a_infty + a0, c1 * self.a_infty + a1, c2 * self.a_infty + a2]
    }

    /// ∫_1^r (2U(s)/s)(χA∞ + A_i)(s) ds with U the full Couette swirl; wall gauge.
    pub fn pressure_shift(&self, p: &CouetteParams, r: f64) -> f64 {
        match &self.table {
            Some(t) => t.eval(self, p, r),
            None => 0.0,
        }
    }
}

/// Cumulative table of ∫_{1/2}^r (W/s)·2·(as + b/s) split into its a- and b-parts
/// so the Couette constants can vary after construction.
#[derive(Clone, Debug)]
struct PressureTable {
    lo: f64,
    h: f64,
    ia: Vec<f64>,
    ib: Vec<f64>,
}

impl PressureTable {
    fn build(m: &Modifier) -> Self {
        let n = 2000;
        let lo = m.chi.lo;
        let h = (1.0 - lo) / n as f64;
        let ws: Vec<f64> = (0..=n).map(|j| {
            let r = lo + j as f64 * h;
            m.total(r)[0] / r
        }).collect();
        let fa: Vec<f64> = ws.iter().enumerate().map(|(j, w)| 2.0 * w * (lo + j as f64 * h)).collect();
        let fb: Vec<f64> = ws.iter().enumerate().map(|(j, w)| 2.0 * w / (lo + j as f64 * h)).collect();
        let cum = |f: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; f.len()];
            for j in 1..f.len() {
                // fourth-order single-interval rule using a neighbour
                let inc = if j + 1 < f.len() {
                    h / 12.0 * (5.0 * f[j - 1] + 8.0 * f[j] - f[j + 1])
                } else {
                    h / 12.0 * (-f[j - 2] + 8.0 * f[j - 1] + 5.0 * f[j])
                };
                out[j] = out[j - 1] + inc;
            }
            out
        };
        PressureTable { lo, h, ia: cum(&fa), ib: cum(&fb) }
    }

    fn interp(&self, tab: &[f64], r: f64) -> f64 {
        let x = (r - self.lo) / self.h;
        let n = tab.len() - 1;
        let j = (x.floor() as isize).clamp(1, n as isize - 2) as usize;
        let t = x - j as f64;
        // cubic Lagrange through j-1..j+2
        let (p0, p1, p2, p3) = (tab[j - 1], tab[j], tab[j + 1], tab[j + 2]);
        let l0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let l1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let l2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let l3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        p0 * l0 + p1 * l1 + p2 * l2 + p3 * l3
    }

    fn eval(&self, m: &Modifier, p: &CouetteParams, r: f64) -> f64 {
        let n = self.ia.len() - 1;
        let full = p.a * self.ia[n] + p.b * self.ib[n];
        if r <= self.lo {
            // W = a_i·r below the transition
            let below = m.a_i * (p.a * (self.lo * self.lo - r * r) + 2.0 * p.b * (self.lo / r).ln());
            return -(full + below);
        }
        let part = p.a * self.interp(&self.ia, r) + p.b * self.interp(&self.ib, r);
        part - full
    }
}

/// One order of the outer expansion: harmonic modes plus an optional modifier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EulerCorrector {
    pub order: usize,
    pub n_theta: usize,
    /// a_n, b_n for n = 0..=n_theta/2 (entry 0 unused, Nyquist dropped)
    pub a_n: Vec<f64>,
    pub b_n: Vec<f64>,
    pub modifier: Option<Modifier>,
}

impl EulerCorrector {
    pub fn zero(order: usize, n_theta: usize) -> Self {
        let m = n_theta / 2 + 1;
        EulerCorrector { order, n_theta, a_n: vec![0.0; m], b_n: vec![0.0; m], modifier: None }
    }

    pub fn a_infty(&self) -> f64 {
        self.modifier.as_ref().map_or(0.0, |m| m.a_infty)
    }

    pub fn a_i(&self) -> f64 {
        self.modifier.as_ref().map_or(0.0, |m| m.a_i)
    }

    /// C_n = a_n − i b_n
    fn c(&self, n: usize) -> Complex64 {
        Complex64::new(self.a_n[n], -self.b_n[n])
    }

    /// Half-amplitude Fourier coefficients (k = 0..=N/2) of (u, v) and their r, rr
    /// derivatives at radius r, including the modifier in the k = 0 slot of u.
    pub fn modes(&self, r: f64) -> EulerModes {
        let m = self.n_theta / 2 + 1;
        let mut out = EulerModes::zeros(m);
        for n in 1..m - 1 {
            let c = self.c(n) * 0.5;
            if c.norm() == 0.0 {
                continue;
            }
            let nf = n as f64;
            let p0 = r.powi(n as i32 - 1);
            let p1 = if n >= 2 { (nf - 1.0) * r.powi(n as i32 - 2) } else { 0.0 };
            let p2 = if n >= 3 { (nf - 1.0) * (nf - 2.0) * r.powi(n as i32 - 3) } else { 0.0 };
            let iu = Complex64::new(0.0, -1.0) * c;
            out.u[n] = iu * p0;
            out.u_r[n] = iu * p1;
            out.u_rr[n] = iu * p2;
            out.v[n] = -c * p0;
            out.v_r[n] = -c * p1;
            out.v_rr[n] = -c * p2;
        }
        if let Some(md) = &self.modifier {
            let [w0, w1, w2] = md.total(r);
            out.u[0] = Complex64::new(w0, 0.0);
            out.u_r[0] = Complex64::new(w1, 0.0);
            out.u_rr[0] = Complex64::new(w2, 0.0);
        }
        out
    }

    /// Pressure modes of the harmonic part split as (regular, coefficient of 1/r);
    /// the modifier pressure is returned separately by [`Modifier::pressure_shift`].
    pub fn pressure_modes(&self, p: &CouetteParams, r: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let m = self.n_theta / 2 + 1;
        let mut reg = vec![Complex64::new(0.0, 0.0); m];
        let mut sing = vec![Complex64::new(0.0, 0.0); m];
        for n in 1..m - 1 {
            let c = self.c(n) * 0.5;
            let nf = n as f64;
            let div = Complex64::new(0.0, nf);
            let ar = (2.0 - nf) * p.a * r.powi(n as i32);
            if n == 1 {
                reg[n] = c * ar / div;
                sing[n] = c * (-p.b) / div;
            } else {
                reg[n] = c * (ar - nf * p.b * r.powi(n as i32 - 2)) / div;
            }
        }
        (reg, sing)
    }
}

#[derive(Clone, Debug)]
pub struct EulerModes {
    pub u: Vec<Complex64>,
    pub u_r: Vec<Complex64>,
    pub u_rr: Vec<Complex64>,
    pub v: Vec<Complex64>,
    pub v_r: Vec<Complex64>,
    pub v_rr: Vec<Complex64>,
}

impl EulerModes {
    fn zeros(m: usize) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); m];
        EulerModes { u: z.clone(), u_r: z.clone(), u_rr: z.clone(), v: z.clone(), v_r: z.clone(), v_rr: z }
    }
}

/// Harmonic extension of a layer trace: v_e(θ,1) = −trace(θ).
pub fn solve_linearized_euler(order: usize, trace: &[f64]) -> Result<EulerCorrector> {
    let n_theta = trace.len();
    if n_theta < 8 || n_theta % 2 != 0 {
        return Err(Error::Shape(format!("trace length {n_theta} must be even and >= 8")));
    }
    let c = rfft(trace);
    let scale = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if c[0].re.abs() > 1e-10 * scale + 1e-14 {
        return Err(Error::Validation(format!(
            "boundary trace has nonzero mean {:.3e}",
            c[0].re
        )));
    }
    let mut out = EulerCorrector::zero(order, n_theta);
    for n in 1..n_theta / 2 {
        out.a_n[n] = 2.0 * c[n].re;
        out.b_n[n] = -2.0 * c[n].im;
    }
    Ok(out)
}

/// Attach the far-field constant of the matching layer through the modifier.
pub fn modify_corrector(mut corr: EulerCorrector, a_infty: f64, chi: CutoffProfile) -> Result<EulerCorrector> {
    if !a_infty.is_finite() {
        return Err(Error::Numerical("far-field constant is not finite".into()));
    }
    corr.modifier = if a_infty == 0.0 { None } else { Some(Modifier::new(a_infty, chi)) };
    Ok(corr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoff::build_cutoff;

    #[test]
    fn batchelor_wood_examples() {
        let v = Varpi::cos1();
        assert!((solve_batchelor_wood(1.0, 0.0, &v, 0.4).unwrap() - 0.6).abs() < 1e-15);
        assert!(solve_batchelor_wood(2.0, 0.0, &v, 2.0).unwrap().abs() < 1e-15);
        let a = solve_batchelor_wood(1.0, 0.2, &v, 0.4).unwrap();
        assert!((a - (1.02f64.sqrt() - 0.4)).abs() < 1e-15);
        let p = CouetteParams::new(1.0, 0.2, 0.4, v).unwrap();
        assert!(p.batchelor_wood_residual() < 1e-12);
    }

    #[test]
    fn nonzero_mean_varpi_rejected() {
        // cos θ + 1 is not expressible, but a bad caller could pass NaN eta
        assert!(solve_batchelor_wood(1.0, f64::NAN, &Varpi::cos1(), 0.4).is_err());
        assert!(solve_batchelor_wood(-1.0, 0.0, &Varpi::cos1(), 0.4).is_err());
    }

    #[test]
    fn couette_examples() {
        let p = CouetteParams::new(1.0, 0.0, 0.4, Varpi::default()).unwrap();
        assert!((couette_eval(&p, 1.0).unwrap().0 - 1.0).abs() < 1e-15);
        let (u, pr) = couette_eval(&p, 0.5).unwrap();
        assert!((u - 1.1).abs() < 1e-15);
        assert!((pr + 0.70771).abs() < 1e-4, "{pr}");
        assert!(couette_eval(&p, 0.0).is_err());
    }

    #[test]
    fn modifier_equals_rigid_rotation_minus_cutoff() {
        let m = Modifier::new(0.7, build_cutoff());
        assert!((m.a_i - 0.7).abs() < 1e-12, "{}", m.a_i);
        for i in 0..=40 {
            let r = 0.3 + 0.7 * i as f64 / 40.0;
            let chi = build_cutoff().chi(r);
            let d = (m.profile(r) - 0.7 * (r - chi)).abs();
            assert!(d < 1e-11, "r={r} diff={d:e}");
        }
        assert!(m.profile(1.0).abs() < 1e-14);
    }

    #[test]
    fn cos2_trace() {
        let n = 16;
        let trace: Vec<f64> = crate::spectral::thetas(n).iter().map(|t| (2.0 * t).cos()).collect();
        let e = solve_linearized_euler(1, &trace).unwrap();
        assert!((e.a_n[2] - 1.0).abs() < 1e-14 && e.b_n[2].abs() < 1e-14);
        let bad: Vec<f64> = trace.iter().map(|v| v + 0.1).collect();
        assert!(matches!(solve_linearized_euler(1, &bad), Err(Error::Validation(_))));
    }
}

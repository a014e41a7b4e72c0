//! Fourier-in-θ representation. Real fields are stored radial-major, θ-minor;
//! spectra keep k = 0..=n_theta/2 with c_k = (1/N) Σ_j f_j e^{-ikθ_j}.

use crate::error::{Error, Result};
use crate::fd::DiffOp;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        if let Some(f) = p.1.get(&(n, forward)) {
            return f.clone();
        }
        let f = if forward { p.0.plan_fft_forward(n) } else { p.0.plan_fft_inverse(n) };
        p.1.insert((n, forward), f.clone());
        f
    })
}

/// Half spectrum of one real periodic row.
pub fn rfft(row: &[f64]) -> Vec<Complex64> {
    let n = row.len();
    let mut buf: Vec<Complex64> = row.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    plan(n, true).process(&mut buf);
    let inv = 1.0 / n as f64;
    buf.truncate(n / 2 + 1);
    for c in buf.iter_mut() {
        *c *= inv;
    }
    buf
}

/// Inverse of [`rfft`]; the imaginary part of k=0 and of the Nyquist mode is ignored.
pub fn irfft(half: &[Complex64], n: usize) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let m = n / 2;
    buf[0] = Complex64::new(half[0].re, 0.0);
    for k in 1..m {
        buf[k] = half[k];
        buf[n - k] = half[k].conj();
    }
    if n % 2 == 0 {
        buf[m] = Complex64::new(half[m].re, 0.0);
    } else if m >= 1 {
        buf[m] = half[m];
        buf[n - m] = half[m].conj();
    }
    plan(n, false).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// Uniform angles 2πi/n.
pub fn thetas(n: usize) -> Vec<f64> {
    (0..n).map(|i| 2.0 * std::f64::consts::PI * i as f64 / n as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordKind {
    Polar,
    Log,
    Layer,
}

impl CoordKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CoordKind::Polar => "polar",
            CoordKind::Log => "log",
            CoordKind::Layer => "layer",
        }
    }
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "polar" => Some(CoordKind::Polar),
            "log" => Some(CoordKind::Log),
            "layer" => Some(CoordKind::Layer),
            _ => None,
        }
    }
}

/// Real samples on a tensor grid: `radial` coordinate values (r, s or Y) × uniform θ.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub kind: CoordKind,
    pub n_theta: usize,
    pub radial: Arc<Vec<f64>>,
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(kind: CoordKind, n_theta: usize, radial: Arc<Vec<f64>>) -> Self {
        let n = radial.len() * n_theta;
        Field { kind, n_theta, radial, data: vec![0.0; n] }
    }

    pub fn from_fn(
        kind: CoordKind,
        n_theta: usize,
        radial: Arc<Vec<f64>>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let th = thetas(n_theta);
        let mut data = Vec::with_capacity(radial.len() * n_theta);
        for &x in radial.iter() {
            for &t in &th {
                data.push(f(t, x));
            }
        }
        Field { kind, n_theta, radial, data }
    }

    pub fn n_radial(&self) -> usize {
        self.radial.len()
    }

    #[inline]
    pub fn at(&self, j: usize, i: usize) -> f64 {
        self.data[j * self.n_theta + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.n_theta..(j + 1) * self.n_theta]
    }

    pub fn sup(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        self.kind == other.kind && self.n_theta == other.n_theta && self.radial == other.radial
    }

    pub fn map2(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert!(self.same_grid(other));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        Field { data, ..self.clone() }
    }
}

/// Spectral coefficients, radial-major with n_theta/2+1 modes per radius.
#[derive(Clone, Debug)]
pub struct SpectralField {
    pub kind: CoordKind,
    pub n_theta: usize,
    pub radial: Arc<Vec<f64>>,
    pub modes: Vec<Complex64>,
    pub reality: bool,
}

impl SpectralField {
    pub fn n_modes(&self) -> usize {
        self.n_theta / 2 + 1
    }

    pub fn mode(&self, j: usize, k: usize) -> Complex64 {
        self.modes[j * self.n_modes() + k]
    }

    /// Radial profile of mode k.
    pub fn profile(&self, k: usize) -> Vec<Complex64> {
        let m = self.n_modes();
        (0..self.radial.len()).map(|j| self.modes[j * m + k]).collect()
    }
}

pub fn fourier_analyze(f: &Field) -> Result<SpectralField> {
    if f.data.len() != f.n_theta * f.radial.len() {
        return Err(Error::Shape(format!(
            "{} samples for {} radii x {} angles",
            f.data.len(),
            f.radial.len(),
            f.n_theta
        )));
    }
    let mut modes = Vec::with_capacity(f.radial.len() * (f.n_theta / 2 + 1));
    for j in 0..f.radial.len() {
        modes.extend(rfft(f.row(j)));
    }
    Ok(SpectralField { kind: f.kind, n_theta: f.n_theta, radial: f.radial.clone(), modes, reality: true })
}

pub fn synthesize(s: &SpectralField) -> Field {
    let m = s.n_modes();
    let mut data = Vec::with_capacity(s.radial.len() * s.n_theta);
    for j in 0..s.radial.len() {
        data.extend(irfft(&s.modes[j * m..(j + 1) * m], s.n_theta));
    }
    Field { kind: s.kind, n_theta: s.n_theta, radial: s.radial.clone(), data }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Theta,
    S,
    R,
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta" => Ok(Direction::Theta),
            "s" => Ok(Direction::S),
            "r" => Ok(Direction::R),
            other => Err(Error::Usage(format!("unknown direction '{other}' (theta|s|r)"))),
        }
    }
}

pub fn differentiate_field(f: &SpectralField, dir: Direction) -> Result<SpectralField> {
    let m = f.n_modes();
    let nyq = f.n_theta / 2;
    match dir {
        Direction::Theta => {
            let mut out = f.clone();
            for j in 0..f.radial.len() {
                for k in 0..m {
                    let c = &mut out.modes[j * m + k];
                    *c = if k == nyq && f.n_theta % 2 == 0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        *c * Complex64::new(0.0, k as f64)
                    };
                }
            }
            Ok(out)
        }
        Direction::S | Direction::R => {
            let ok = matches!(
                (dir, f.kind),
                (Direction::S, CoordKind::Log) | (Direction::R, CoordKind::Polar)
            );
            if !ok {
                return Err(Error::Usage(format!(
                    "direction {dir:?} does not match a {} grid",
                    f.kind.as_str()
                )));
            }
            if f.radial.len() < 4 {
                return Err(Error::Shape("radial differentiation needs >= 4 points".into()));
            }
            let op = DiffOp::new(&f.radial, 1);
            let re: Vec<f64> = f.modes.iter().map(|c| c.re).collect();
            let im: Vec<f64> = f.modes.iter().map(|c| c.im).collect();
            let dre = op.apply_strided(&re, m);
            let dim = op.apply_strided(&im, m);
            let modes = dre.into_iter().zip(dim).map(|(a, b)| Complex64::new(a, b)).collect();
            Ok(SpectralField { modes, ..f.clone() })
        }
    }
}

/// θ-derivative of a real field row by row (spectral, Nyquist dropped).
pub fn d_theta(f: &[f64], n_theta: usize, order: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let nyq = n_theta / 2;
    for row in f.chunks(n_theta) {
        let mut c = rfft(row);
        for (k, ck) in c.iter_mut().enumerate() {
            if k == nyq && n_theta % 2 == 0 {
                *ck = Complex64::new(0.0, 0.0);
            } else {
                *ck *= Complex64::new(0.0, k as f64).powu(order);
            }
        }
        out.extend(irfft(&c, n_theta));
    }
    out
}

/// Remove the Nyquist mode from each row (leaves band-limited data unchanged otherwise).
pub fn drop_nyquist(f: &mut [f64], n_theta: usize) {
    if n_theta % 2 != 0 {
        return;
    }
    for row in f.chunks_mut(n_theta) {
        let c: f64 = row.iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -*v }).sum::<f64>()
            / n_theta as f64;
        for (i, v) in row.iter_mut().enumerate() {
            *v -= if i % 2 == 0 { c } else { -c };
        }
    }
}

/// θ-mean of every row.
pub fn row_means(f: &[f64], n_theta: usize) -> Vec<f64> {
    f.chunks(n_theta).map(|r| r.iter().sum::<f64>() / n_theta as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;


    fn polar(n: usize) -> Arc<Vec<f64>> {
        Arc::new((1..=n).map(|j| j as f64 / n as f64).collect())
    }

    #[test]
    fn cosine_gives_half() {
        let f = Field::from_fn(CoordKind::Polar, 16, polar(4), |t, _| t.cos());
        let s = fourier_analyze(&f).unwrap();
        for j in 0..4 {
            assert!((s.mode(j, 1) - Complex64::new(0.5, 0.0)).norm() < 1e-15);
            assert!(s.mode(j, 0).norm() < 1e-15);
            assert!(s.mode(j, 2).norm() < 1e-15);
        }
    }

    #[test]
    fn derivative_of_sine() {
        let f = Field::from_fn(CoordKind::Polar, 12, polar(4), |t, r| r * t.sin());
        let d = synthesize(&differentiate_field(&fourier_analyze(&f).unwrap(), Direction::Theta).unwrap());
        let th = thetas(12);
        for j in 0..4 {
            for i in 0..12 {
                assert!((d.at(j, i) - f.radial[j] * th[i].cos()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mismatched_shape() {
        let mut f = Field::zeros(CoordKind::Log, 8, polar(4));
        f.data.pop();
        assert!(matches!(fourier_analyze(&f), Err(Error::Shape(_))));
    }

    #[test]
    fn nyquist_dropped() {
        let mut row: Vec<f64> = thetas(8).iter().map(|t| (4.0 * t).cos() + t.sin()).collect();
        drop_nyquist(&mut row, 8);
        for (v, t) in row.iter().zip(thetas(8)) {
            assert!((v - t.sin()).abs() < 1e-14);
        }
    }
}

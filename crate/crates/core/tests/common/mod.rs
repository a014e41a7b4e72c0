#![allow(dead_code)]

use pb_disk::assemble::*;
use pb_disk::error_solver::*;
use pb_disk::euler::*;
use pb_disk::grid::*;
use pb_disk::prandtl::LayerConfig;
use pb_disk::spectral::{CoordKind, Field};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub struct Solved {
    pub params: CouetteParams,
    pub grid: LogGrid,
    pub approx: ApproxSolution,
    pub error: ErrorField,
    pub ns: NSSolution,
}

/// Order-one construction and error solve for ϖ = cos θ, α = 1, b = 0.4.
pub fn solve_case(eta: f64, eps: f64, n_theta: usize) -> Solved {
    let params = CouetteParams::new(1.0, eta, 0.4, Varpi::cos1()).unwrap();
    let c = build_components(&params, eps, 1, n_theta, &LayerConfig::default()).unwrap();
    let s = graded_s_grid(eps, 7.5, &RadialSpec::default()).unwrap();
    let grid = LogGrid::new(n_theta, s).unwrap();
    let approx = assemble(Arc::new(c), &grid.to_polar()).unwrap();
    let cfg = ErrorSystemConfig { epsilon: eps, ..Default::default() };
    let error = solve_error(&approx, &grid, &cfg).unwrap();
    let ns = reconstruct_full(&approx, &error).unwrap();
    Solved { params, grid, approx, error, ns }
}

/// A coarse graded s-grid, so finite-difference errors are visible.
pub fn coarse_s() -> Vec<f64> {
    graded_s_grid(0.2, 7.5, &RadialSpec { h_wall: 0.25, band: 6.0, growth: 1.1, h_max: 0.25 }).unwrap()
}

/// The grid with every midpoint inserted; coarse node j sits at index 2j.
pub fn refined(s: &[f64]) -> Vec<f64> {
    let mut out = vec![s[0]];
    for w in s.windows(2) {
        out.push(0.5 * (w[0] + w[1]));
        out.push(w[1]);
    }
    out
}

/// Streamfunction terms A e^{−λs} sin(ωs + φ) cos(mθ + χ); the first term has m = 1.
#[derive(Clone, Debug)]
pub struct Stream(pub Vec<(f64, f64, f64, f64, usize, f64)>);

impl Stream {
    pub fn random(seed: u64, idx: u64) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx);
        let n = rng.gen_range(2..=6);
        Stream(
            (0..n)
                .map(|k| {
                    (
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(0.3..2.0),
                        rng.gen_range(0.0..2.5),
                        rng.gen_range(0.0..6.3),
                        if k == 0 { 1 } else { rng.gen_range(0..=4) },
                        rng.gen_range(0.0..6.3),
                    )
                })
                .collect(),
        )
    }

    /// (ψ, ψ_s, ψ_θ)
    pub fn eval(&self, t: f64, s: f64) -> (f64, f64, f64) {
        let mut out = (0.0, 0.0, 0.0);
        for &(a, l, w, ph, m, chi) in &self.0 {
            let g = a * (-l * s).exp();
            let (sn, cs) = (w * s + ph).sin_cos();
            let x = m as f64 * t + chi;
            out.0 += g * sn * x.cos();
            out.1 += g * (w * cs - l * sn) * x.cos();
            out.2 += -g * sn * m as f64 * x.sin();
        }
        out
    }

    /// u = ψ_s − ψ, v = ψ_θ: satisfies u_θ − v_s + v = 0 exactly.
    pub fn velocity(&self, n_theta: usize, s: &[f64]) -> (Field, Field) {
        let s = Arc::new(s.to_vec());
        let u = Field::from_fn(CoordKind::Log, n_theta, s.clone(), |t, s| {
            let (p, ps, _) = self.eval(t, s);
            ps - p
        });
        let v = Field::from_fn(CoordKind::Log, n_theta, s, |t, s| self.eval(t, s).2);
        (u, v)
    }
}

pub struct ContinuityCheck {
    /// sup of the defects of c = f' − f and d = e − e'
    pub defect: f64,
    /// sup of D_h − D_{h/2} applied to e and f at the coarse nodes
    pub truncation: f64,
    pub roundtrip: f64,
    pub leakage: f64,
}

pub fn continuity_check(stream: &Stream, n_theta: usize, s: &[f64]) -> ContinuityCheck {
    use pb_disk::diagnostics::frequency_decompose;
    let (u, v) = stream.velocity(n_theta, s);
    let d = frequency_decompose(&u, &v).unwrap();
    let (dc, dd) = d.continuity_defects();
    let defect = dc.iter().chain(&dd).fold(0.0f64, |m, x| m.max(x.abs()));

    let fine = refined(s);
    let (uf, vf) = stream.velocity(n_theta, &fine);
    let df = frequency_decompose(&uf, &vf).unwrap();
    let (c1, _) = log_radial_ops(s);
    let (f1, _) = log_radial_ops(&fine);
    let mut truncation = 0.0f64;
    for (coarse, finer) in [(&d.e, &df.e), (&d.f, &df.f)] {
        let a = c1.apply(coarse);
        let b = f1.apply(finer);
        for j in 0..s.len() {
            truncation = truncation.max((a[j] - b[2 * j]).abs());
        }
    }

    let (ur, vr) = d.reconstruct();
    let roundtrip = ur.data.iter().zip(&u.data).chain(vr.data.iter().zip(&v.data)).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ContinuityCheck { defect, truncation, roundtrip, leakage: d.remainder_leakage() }
}

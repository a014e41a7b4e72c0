//! Finite-difference stencils on nonuniform one-dimensional grids.

/// Fornberg weights: derivative of order `m` at `x0` from values at `xs`.
pub fn fornberg(x0: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    assert!(n > m, "need more nodes than derivative order");
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// A row stencil: first node index plus weights.
#[derive(Clone, Debug)]
pub struct Stencil {
    pub start: usize,
    pub w: Vec<f64>,
}

impl Stencil {
    #[inline]
    pub fn apply(&self, f: &[f64]) -> f64 {
        self.w.iter().enumerate().map(|(i, w)| w * f[self.start + i]).sum()
    }
}

/// Derivative operator of order 1 or 2 on a nonuniform grid: centered three-point
/// stencils in the interior, one-sided closures at the ends (three points for the
/// first derivative, four for the second).
#[derive(Clone, Debug)]
pub struct DiffOp {
    pub rows: Vec<Stencil>,
}

impl DiffOp {
    pub fn new(x: &[f64], order: usize) -> Self {
        let n = x.len();
        assert!(n >= 4, "radial differentiation needs at least 4 nodes");
        assert!(order == 1 || order == 2);
        let end = if order == 1 { 3 } else { 4 };
        let rows = (0..n)
            .map(|j| {
                let start = if j == 0 {
                    0
                } else if j == n - 1 {
                    n - end
                } else {
                    j - 1
                };
                let len = if j == 0 || j == n - 1 { end } else { 3 };
                Stencil {
                    start,
                    w: fornberg(x[j], &x[start..start + len], order),
                }
            })
            .collect();
        DiffOp { rows }
    }

    /// Centered `width`-point stencils (odd width), shifted inward near the ends and
    /// widened by one there for the second derivative.
    pub fn wide(x: &[f64], order: usize, width: usize) -> Self {
        let n = x.len();
        assert!(width % 2 == 1 && n > width + 1);
        let half = width / 2;
        let rows = (0..n)
            .map(|j| {
                let interior = j >= half && j + half < n;
                let len = if interior { width } else { width + order - 1 };
                let start = j.saturating_sub(half).min(n - len);
                Stencil { start, w: fornberg(x[j], &x[start..start + len], order) }
            })
            .collect();
        DiffOp { rows }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|s| s.apply(f)).collect()
    }

    /// Apply along the radial index of a radial-major array with `stride` columns.
    pub fn apply_strided(&self, f: &[f64], stride: usize) -> Vec<f64> {
        let n = self.rows.len();
        let mut out = vec![0.0; n * stride];
        for (j, s) in self.rows.iter().enumerate() {
            for (i, w) in s.w.iter().enumerate() {
                let src = &f[(s.start + i) * stride..(s.start + i + 1) * stride];
                let dst = &mut out[j * stride..(j + 1) * stride];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += w * v;
                }
            }
        }
        out
    }
}

/// Cumulative trapezoid integral from the first node, starting at zero.
pub fn cumtrapz(x: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for j in 1..x.len() {
        out[j] = out[j - 1] + 0.5 * (x[j] - x[j - 1]) * (f[j] + f[j - 1]);
    }
    out
}

/// Composite Simpson rule on a uniform grid with an even number of intervals.
pub fn simpson_uniform(h: f64, f: &[f64]) -> f64 {
    let n = f.len() - 1;
    assert!(n % 2 == 0 && n >= 2, "Simpson needs an even number of intervals");
    let mut s = f[0] + f[n];
    for (i, v) in f.iter().enumerate().take(n).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

/// Trapezoid rule on a nonuniform grid.
pub fn trapz(x: &[f64], f: &[f64]) -> f64 {
    (1..x.len())
        .map(|j| 0.5 * (x[j] - x[j - 1]) * (f[j] + f[j - 1]))
        .sum()
}

/// Quadrature weights on a nonuniform grid: each interval integrates the Lagrange
/// interpolant through the `width` nearest nodes (Gauss points, exact to degree 5).
pub fn interp_quadrature(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    assert!(width >= 2 && n >= width, "quadrature stencil wider than the grid");
    const G: [(f64, f64); 3] = [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let start = (k + 1).saturating_sub(width / 2).min(n - width);
        let nodes = &x[start..start + width];
        let (mid, half) = (0.5 * (x[k] + x[k + 1]), 0.5 * (x[k + 1] - x[k]));
        for (t, gw) in G {
            let l = fornberg(mid + half * t, nodes, 0);
            for (i, li) in l.iter().enumerate() {
                w[start + i] += gw * half * li;
            }
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interp_quadrature_exact_on_quintics() {
        let x: Vec<f64> = (0..30).map(|j| (j as f64 * 0.1).powf(1.3)).collect();
        let w = interp_quadrature(&x, 6);
        let b = *x.last().unwrap();
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * (x.powi(5) - 2.0 * x)).sum();
        assert!((q - (b.powi(6) / 6.0 - b * b)).abs() < 1e-12 * b.powi(6));
    }

    #[test]
    fn fornberg_central_weights() {
        let w = fornberg(0.0, &[-1.0, 0.0, 1.0], 1);
        assert!((w[0] + 0.5).abs() < 1e-15 && w[1].abs() < 1e-15 && (w[2] - 0.5).abs() < 1e-15);
        let w = fornberg(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[0] - 1.0).abs() < 1e-15 && (w[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn exact_on_quadratics_nonuniform() {
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).powf(1.3)).collect();
        let f: Vec<f64> = x.iter().map(|x| 2.0 - x + 3.0 * x * x).collect();
        let d1 = DiffOp::new(&x, 1).apply(&f);
        let d2 = DiffOp::new(&x, 2).apply(&f);
        for (j, xv) in x.iter().enumerate() {
            assert!((d1[j] - (-1.0 + 6.0 * xv)).abs() < 1e-10);
            assert!((d2[j] - 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn simpson_cubic_exact() {
        let n = 10;
        let h = 1.0 / n as f64;
        let f: Vec<f64> = (0..=n).map(|i| (i as f64 * h).powi(3)).collect();
        assert!((simpson_uniform(h, &f) - 0.25).abs() < 1e-15);
    }
}

//! Smooth cutoff: 0 on [0, 1/2], 1 on [3/4, 1], built from e^{-1/t}.

#[derive(Clone, Copy, Debug)]
pub struct CutoffProfile {
    pub lo: f64,
    pub hi: f64,
}

fn psi(t: f64) -> [f64; 3] {
    if t <= 0.0 {
        return [0.0; 3];
    }
    let e = (-1.0 / t).exp();
    let t2 = t * t;
    [e, e / t2, e * (1.0 / (t2 * t2) - 2.0 / (t2 * t))]
}

pub fn build_cutoff() -> CutoffProfile {
    CutoffProfile { lo: 0.5, hi: 0.75 }
}

impl CutoffProfile {
    /// (χ, χ', χ'') at r.
    pub fn eval(&self, r: f64) -> [f64; 3] {
        let w = self.hi - self.lo;
        let x = (r - self.lo) / w;
        if x <= 0.0 {
            return [0.0, 0.0, 0.0];
        }
        if x >= 1.0 {
            return [1.0, 0.0, 0.0];
        }
        let [f, f1, f2] = psi(x);
        let [g, g1, g2] = psi(1.0 - x);
        // G(x) = psi(1-x): G' = -psi'(1-x), G'' = psi''(1-x)
        let (g1, g2) = (-g1, g2);
        let s = f + g;
        let num1 = f1 * g - f * g1;
        let c = f / s;
        let c1 = num1 / (s * s);
        let c2 = ((f2 * g - f * g2) * s - 2.0 * num1 * (f1 + g1)) / (s * s * s);
        [c, c1 / w, c2 / (w * w)]
    }

    pub fn chi(&self, r: f64) -> f64 {
        self.eval(r)[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateaus_and_monotone() {
        let c = build_cutoff();
        assert_eq!(c.chi(0.4), 0.0);
        assert_eq!(c.chi(0.9), 1.0);
        let m = c.chi(0.625);
        assert!(m > 0.0 && m < 1.0);
        assert!((m - 0.5).abs() < 1e-15);
        assert_eq!(c.eval(0.5)[1], 0.0);
        assert_eq!(c.eval(0.75)[1], 0.0);
        let mut prev = 0.0;
        for i in 0..=1000 {
            let [v, d, _] = c.eval(i as f64 / 1000.0);
            assert!(v >= prev && d >= 0.0);
            prev = v;
        }
    }

    #[test]
    fn derivatives_match_differences() {
        let c = build_cutoff();
        let h = 1e-5;
        for i in 1..50 {
            let r = 0.5 + 0.25 * i as f64 / 50.0;
            let [_, d1, d2] = c.eval(r);
            let fd1 = (c.chi(r + h) - c.chi(r - h)) / (2.0 * h);
            let fd2 = (c.eval(r + h)[1] - c.eval(r - h)[1]) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-6 * (1.0 + d1.abs()));
            assert!((d2 - fd2).abs() < 1e-5 * (1.0 + d2.abs()));
        }
    }
}

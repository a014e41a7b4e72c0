//! Polar, log-radial and boundary-layer grids.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub struct PolarGrid {
    pub n_theta: usize,
    pub radii: Arc<Vec<f64>>,
    pub includes_boundary: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogGrid {
    pub n_theta: usize,
    pub s_values: Arc<Vec<f64>>,
    pub s_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrid {
    pub n_theta: usize,
    pub y_values: Arc<Vec<f64>>,
    pub y_min: f64,
}

fn check_theta(n: usize) -> Result<()> {
    if n < 8 || n % 2 != 0 {
        return Err(Error::Validation(format!("n_theta must be even and >= 8, got {n}")));
    }
    Ok(())
}

fn strictly_increasing(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[1] > w[0])
}

impl PolarGrid {
    pub fn new(n_theta: usize, radii: Vec<f64>) -> Result<Self> {
        check_theta(n_theta)?;
        if radii.len() < 4 || !strictly_increasing(&radii) || radii[0] <= 0.0 || *radii.last().unwrap() > 1.0 {
            return Err(Error::Validation("radii must be strictly increasing in (0,1], at least 4".into()));
        }
        let includes_boundary = *radii.last().unwrap() == 1.0;
        Ok(PolarGrid { n_theta, radii: Arc::new(radii), includes_boundary })
    }
}

impl LogGrid {
    pub fn new(n_theta: usize, s_values: Vec<f64>) -> Result<Self> {
        check_theta(n_theta)?;
        if s_values.len() < 4 || s_values[0] != 0.0 || !strictly_increasing(&s_values) {
            return Err(Error::Validation("s grid must start at 0 and increase strictly".into()));
        }
        let s_max = *s_values.last().unwrap();
        Ok(LogGrid { n_theta, s_values: Arc::new(s_values), s_max })
    }

    /// The same points as a polar grid (radii ascending, last = 1).
    pub fn to_polar(&self) -> PolarGrid {
        let radii: Vec<f64> = self.s_values.iter().rev().map(|s| (-s).exp()).collect();
        PolarGrid { n_theta: self.n_theta, radii: Arc::new(radii), includes_boundary: true }
    }
}

impl LayerGrid {
    pub fn uniform(n_theta: usize, y_min: f64, dy: f64) -> Result<Self> {
        check_theta(n_theta)?;
        if !(y_min < 0.0) || !(dy > 0.0) {
            return Err(Error::Validation("layer grid needs y_min < 0 and dy > 0".into()));
        }
        let n = (-y_min / dy).round() as usize;
        if n < 4 {
            return Err(Error::Validation("layer grid too coarse".into()));
        }
        let h = -y_min / n as f64;
        let y: Vec<f64> = (0..=n).map(|j| if j == n { 0.0 } else { y_min + j as f64 * h }).collect();
        Ok(LayerGrid { n_theta, y_values: Arc::new(y), y_min })
    }

    pub fn dy(&self) -> f64 {
        self.y_values[1] - self.y_values[0]
    }
}

/// (θ, r) → (θ, s = −ln r).
pub fn transform_coordinates(theta: f64, r: f64) -> Result<(f64, f64)> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Domain(format!("radius {r} outside (0,1]")));
    }
    Ok((theta, -r.ln()))
}

pub fn inverse_transform(theta: f64, s: f64) -> (f64, f64) {
    (theta, (-s).exp())
}

/// Wall-refined radial spacing in s.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RadialSpec {
    /// spacing in the wall band, in units of ε
    pub h_wall: f64,
    /// band width, in units of ε
    pub band: f64,
    pub growth: f64,
    pub h_max: f64,
}

impl Default for RadialSpec {
    fn default() -> Self {
        RadialSpec { h_wall: 0.05, band: 12.0, growth: 1.04, h_max: 0.04 }
    }
}

/// s-grid on [0, s_max] with an odd number of points: uniform spacing h_wall·ε on
/// [0, band·ε], then geometric growth up to h_max.
pub fn graded_s_grid(eps: f64, s_max: f64, spec: &RadialSpec) -> Result<Vec<f64>> {
    if !(eps > 0.0) || !(s_max > 0.0) || !(spec.growth >= 1.0) || !(spec.h_wall > 0.0) || !(spec.h_max > 0.0) {
        return Err(Error::Validation("bad radial grid spec".into()));
    }
    let h0 = (spec.h_wall * eps).min(spec.h_max);
    let band = spec.band * eps;
    let mut steps = Vec::new();
    let mut s = 0.0;
    let mut h = h0;
    while s < s_max {
        if s >= band {
            h = (h * spec.growth).min(spec.h_max);
        }
        steps.push(h);
        s += h;
        if steps.len() > 2_000_000 {
            return Err(Error::Validation("radial grid too fine".into()));
        }
    }
    if steps.len() % 2 == 1 {
        steps.push(h);
    }
    let total: f64 = steps.iter().sum();
    let scale = s_max / total;
    let mut out = Vec::with_capacity(steps.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for (i, st) in steps.iter().enumerate() {
        acc += st * scale;
        out.push(if i + 1 == steps.len() { s_max } else { acc });
    }
    Ok(out)
}

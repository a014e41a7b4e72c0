//! Composite approximation: Couette + outer correctors + cut-off layers, the wall
//! closures, and the divergence corrector h; residual of the momentum equations.

use crate::cutoff::{build_cutoff, CutoffProfile};
use crate::error::{Error, Result};
use crate::euler::{modify_corrector, solve_linearized_euler, CouetteParams, EulerCorrector};
use crate::fd::DiffOp;
use crate::grid::{LayerGrid, PolarGrid};
use crate::prandtl::{
    forcing_order1, forcing_order2, integrate_layer_pressure, pressure_integrand_order1, pressure_integrand_order2, OrderTwoData,
    solve_prandtl_leading, solve_prandtl_linearized, synth_modes, wall_trace, with_pressure, LayerBase, LayerConfig,
    PrandtlLayer,
};
use crate::spectral::{d_theta, irfft, rfft, CoordKind, Field};
use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::Arc;

/// Everything the composite is built from.
#[derive(Clone, Debug)]
pub struct Components {
    pub params: CouetteParams,
    pub eps: f64,
    pub order: usize,
    pub n_theta: usize,
    /// layers[i] holds u_p^{(i)}, v_p^{(i+1)}, p_p^{(i+1)}
    pub layers: Vec<PrandtlLayer>,
    /// eulers[i-1] is the order-i outer corrector, i = 1..=N+1
    pub eulers: Vec<EulerCorrector>,
    pub chi: CutoffProfile,
    pub layer_cfg: LayerConfig,
}

fn wall_row(f: &Field) -> Vec<f64> {
    f.row(f.n_radial() - 1).to_vec()
}

/// Solve the layer hierarchy and the outer correctors up to order N.
pub fn build_components(params: &CouetteParams, eps: f64, order: usize, n_theta: usize, cfg: &LayerConfig) -> Result<Components> {
    if order > 2 {
        return Err(Error::Validation(format!("expansion order {order} not supported (max 2)")));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Validation(format!("epsilon {eps} outside (0, 0.5)")));
    }
    if params.varpi.max_mode() >= n_theta / 2 {
        return Err(Error::Validation("wall data not resolved by n_theta".into()));
    }
    let chi = build_cutoff();
    let grid = LayerGrid::uniform(n_theta, cfg.y_min, cfg.dy)?;
    let lead = solve_prandtl_leading(params, &grid, cfg)?;
    let e1 = solve_linearized_euler(1, &wall_row(&lead.v))?;
    let mut comp = Components {
        params: params.clone(),
        eps,
        order,
        n_theta,
        layers: vec![lead],
        eulers: vec![e1],
        chi,
        layer_cfg: cfg.clone(),
    };
    if order == 0 {
        return Ok(comp);
    }
    let nf = comp.layers[0].fine_u.n_theta;
    let wt1 = wall_trace(&comp.eulers[0], nf);
    let base = LayerBase::new(params, &comp.layers[0], &wt1);
    let f1 = forcing_order1(&base, &comp.layers[0].fine_p, &wt1);
    let wall1: Vec<f64> = wt1.u.iter().map(|v| -v).collect();
    let l1 = solve_prandtl_linearized(1, &base, &f1, &wall1, &comp.layers[0].fine_v, cfg)?;
    let a1 = l1.a_infty;
    let g1 = pressure_integrand_order1(&base, &comp.layers[0].fine_p, &l1.fine_u, a1, &wt1);
    let l1 = with_pressure(l1, integrate_layer_pressure(&g1)?);
    comp.eulers[0] = modify_corrector(comp.eulers[0].clone(), a1, chi)?;
    comp.eulers.push(solve_linearized_euler(2, &wall_row(&l1.v))?);
    comp.layers.push(l1);
    if order == 1 {
        return Ok(comp);
    }
    let wt2 = wall_trace(&comp.eulers[1], nf);
    let f2 = forcing_order2(&OrderTwoData::new(params, &comp.layers, &comp.eulers, None, 0.0));
    let wall2: Vec<f64> = wt2.u.iter().map(|v| -v).collect();
    let l2 = solve_prandtl_linearized(2, &base, &f2, &wall2, &comp.layers[1].fine_v, cfg)?;
    let a2 = l2.a_infty;
    let g2 = pressure_integrand_order2(&OrderTwoData::new(params, &comp.layers, &comp.eulers, Some(&l2), a2));
    let l2 = with_pressure(l2, integrate_layer_pressure(&g2)?);
    comp.eulers[1] = modify_corrector(comp.eulers[1].clone(), a2, chi)?;
    comp.eulers.push(solve_linearized_euler(3, &wall_row(&l2.v))?);
    comp.layers.push(l2);
    Ok(comp)
}

impl Components {
    /// The layers and correctors do not depend on ε; reuse them at another ε.
    pub fn with_eps(&self, eps: f64) -> Result<Components> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::Validation(format!("epsilon {eps} outside (0, 0.5)")));
        }
        Ok(Components { eps, ..self.clone() })
    }
}

/// Modal divergence corrector: h_n = K_n/(in).
#[derive(Clone, Debug)]
pub struct Corrector {
    pub k: Field,
    pub h: Field,
}

pub fn build_corrector(k: &Field) -> Result<Corrector> {
    let nt = k.n_theta;
    let scale = k.sup().max(1e-300);
    let mut bad = Vec::new();
    let mut data = Vec::with_capacity(k.data.len());
    for j in 0..k.n_radial() {
        let mut c = rfft(k.row(j));
        if c[0].re.abs() > 1e-12 * scale && c[0].re.abs() > 1e-15 {
            bad.push(k.radial[j]);
        }
        c[0] = Complex64::new(0.0, 0.0);
        for (n, cn) in c.iter_mut().enumerate().skip(1) {
            *cn = if n == nt / 2 { Complex64::new(0.0, 0.0) } else { *cn / Complex64::new(0.0, n as f64) };
        }
        data.extend(irfft(&c, nt));
    }
    if !bad.is_empty() {
        let shown: Vec<String> = bad.iter().take(8).map(|r| format!("{r:.6}")).collect();
        return Err(Error::Validation(format!("K has nonzero θ-mean at {} radii: {}", bad.len(), shown.join(", "))));
    }
    Ok(Corrector { k: k.clone(), h: Field { data, ..k.clone() } })
}

#[derive(Clone, Debug)]
pub struct ApproxSolution {
    pub eps: f64,
    pub order: usize,
    pub grid: PolarGrid,
    pub u_a: Field,
    pub v_a: Field,
    pub p_a: Field,
    /// departures from Couette: u_a − U(r), v_a, p_a − p_e(r)
    pub du: Field,
    pub dv: Field,
    pub dp: Field,
    /// outer-corrector pressure and its exact r∂_r
    pub outer_p: Field,
    pub outer_rpr: Field,
    pub r_u: Field,
    pub r_v: Field,
    pub corrector: Corrector,
    /// h enters as ε^power · h
    pub corrector_power: usize,
    pub components: Arc<Components>,
}

/// Quintic Lagrange interpolation of every θ-row of a uniform-in-Y field.
fn interp_rows(f: &Field, y: f64) -> Vec<f64> {
    let ys = &f.radial;
    let n = ys.len();
    let dy = ys[1] - ys[0];
    let x = (y - ys[0]) / dy;
    if (x - x.round()).abs() < 1e-9 {
        let j = (x.round() as usize).min(n - 1);
        return f.row(j).to_vec();
    }
    let start = ((x.floor() as isize) - 2).clamp(0, n as isize - 6) as usize;
    let mut w = [0.0; 6];
    for (a, wa) in w.iter_mut().enumerate() {
        let mut l = 1.0;
        for b in 0..6 {
            if b != a {
                l *= (x - (start + b) as f64) / (a as f64 - b as f64);
            }
        }
        *wa = l;
    }
    let mut out = vec![0.0; f.n_theta];
    for (a, wa) in w.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(f.row(start + a)) {
            *o += wa * v;
        }
    }
    out
}

/// ε Y e^{Y} χ(r): vanishes at the wall with unit slope there.
fn wall_profile(chi: &CutoffProfile, eps: f64, r: f64) -> f64 {
    let y = (r - 1.0) / eps;
    eps * y * y.exp() * chi.chi(r)
}

struct Row {
    u: Vec<f64>,
    v: Vec<f64>,
    p: Vec<f64>,
    po: Vec<f64>,
    rpo: Vec<f64>,
}

fn layer_coordinate(c: &Components, r: f64, chi: f64) -> Result<f64> {
    let y_min = c.layers[0].u.radial[0];
    let y = (r - 1.0) / c.eps;
    if y < y_min {
        if chi >= 1.0 {
            return Err(Error::GridMismatch(format!(
                "node r = {r:.6} maps to Y = {y:.3} below Y_min = {y_min}; use a larger |y_min|"
            )));
        }
        return Ok(y_min);
    }
    Ok(y)
}

/// χ·(u_p − A∞) and χ·v_p of layer `idx` at radius r; None where χ = 0.
pub fn layer_row(c: &Components, idx: usize, r: f64) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let chi = c.chi.chi(r);
    if chi <= 0.0 {
        return Ok(None);
    }
    let y = layer_coordinate(c, r, chi)?;
    let layer = &c.layers[idx];
    let lu = interp_rows(&layer.u, y).into_iter().map(|x| chi * (x - layer.a_infty)).collect();
    let lv = interp_rows(&layer.v, y).into_iter().map(|x| chi * x).collect();
    Ok(Some((lu, lv)))
}

fn assemble_row(c: &Components, r: f64) -> Result<Row> {
    let nt = c.n_theta;
    let eps = c.eps;
    let chi = c.chi.chi(r);
    let mut u = vec![0.0; nt];
    let mut v = vec![0.0; nt];
    let mut p = vec![0.0; nt];
    if chi > 0.0 {
        let y = layer_coordinate(c, r, chi)?;
        let mut e = 1.0;
        for layer in &c.layers {
            let lu = interp_rows(&layer.u, y);
            let lv = interp_rows(&layer.v, y);
            let lp = interp_rows(&layer.p, y);
            for i in 0..nt {
                u[i] += chi * e * (lu[i] - layer.a_infty);
                v[i] += chi * e * eps * lv[i];
                p[i] += chi * chi * e * eps * lp[i];
            }
            e *= eps;
        }
    }
    let mut po = vec![0.0; nt];
    let mut rpo = vec![0.0; nt];
    let big_u = c.params.swirl(r);
    let mut e = eps;
    for corr in &c.eulers {
        let m = corr.modes(r);
        let eu = synth_modes(&m.u, nt);
        let ev = synth_modes(&m.v, nt);
        let (reg, sing) = corr.pressure_modes(&c.params, r);
        let pm: Vec<Complex64> = reg.iter().zip(&sing).map(|(a, b)| a + b / r).collect();
        let ep = synth_modes(&pm, nt);
        let shift = corr.modifier.as_ref().map(|md| md.pressure_shift(&c.params, r)).unwrap_or(0.0);
        let evt = d_theta(&ev, nt, 1);
        for i in 0..nt {
            u[i] += e * eu[i];
            v[i] += e * ev[i];
            po[i] += e * (ep[i] + shift);
            // r ∂_r p from the linearized radial balance the outer pressure is defined by
            rpo[i] += e * (2.0 * big_u * eu[i] - big_u * evt[i]);
        }
        e *= eps;
    }
    for i in 0..nt {
        p[i] += po[i];
    }
    Ok(Row { u, v, p, po, rpo })
}

fn stack(rows: &[Vec<f64>], grid: &PolarGrid) -> Field {
    Field { kind: CoordKind::Polar, n_theta: grid.n_theta, radial: grid.radii.clone(), data: rows.concat() }
}

/// D_r(r v) + ∂_θ u with the residual's radial operator.
pub fn divergence(u: &Field, v: &Field, dr: &DiffOp) -> Field {
    let nt = u.n_theta;
    let rv: Vec<f64> = v.data.iter().enumerate().map(|(k, x)| x * v.radial[k / nt]).collect();
    let d = dr.apply_strided(&rv, nt);
    let ut = d_theta(&u.data, nt, 1);
    Field { data: d.iter().zip(&ut).map(|(a, b)| a + b).collect(), ..u.clone() }
}

/// Divergence of the assembled field. The Couette swirl (mode zero, no radial
/// component) is divergence-free identically and is left out so the check is not
/// swamped by the rounding of b/r near the origin.
pub fn assembled_divergence(a: &ApproxSolution) -> Field {
    let (d1, _) = radial_ops(&a.grid.radii);
    divergence(&a.du, &a.dv, &d1)
}

/// Radial operators used by assembly and residual (five-point, fourth order).
pub fn radial_ops(radii: &[f64]) -> (DiffOp, DiffOp) {
    (DiffOp::wide(radii, 1, 5), DiffOp::wide(radii, 2, 5))
}

pub fn assemble(c: Arc<Components>, grid: &PolarGrid) -> Result<ApproxSolution> {
    if grid.n_theta != c.n_theta {
        return Err(Error::Shape(format!("grid has {} angles, components {}", grid.n_theta, c.n_theta)));
    }
    if !grid.includes_boundary {
        return Err(Error::Validation("assembly grid must end at r = 1".into()));
    }
    let nt = grid.n_theta;
    let radii = grid.radii.clone();
    let nr = radii.len();
    let eps = c.eps;
    let rows: Vec<Row> = radii.par_iter().map(|&r| assemble_row(&c, r)).collect::<Result<_>>()?;
    let mut du = stack(&rows.iter().map(|r| r.u.clone()).collect::<Vec<_>>(), grid);
    let mut dv = stack(&rows.iter().map(|r| r.v.clone()).collect::<Vec<_>>(), grid);
    let dp = stack(&rows.iter().map(|r| r.p.clone()).collect::<Vec<_>>(), grid);
    let outer_p = stack(&rows.iter().map(|r| r.po.clone()).collect::<Vec<_>>(), grid);
    let outer_rpr = stack(&rows.iter().map(|r| r.rpo.clone()).collect::<Vec<_>>(), grid);
    let (d1, _) = radial_ops(&radii);
    let p = &c.params;
    let th = crate::spectral::thetas(nt);

    // tangential wall mismatch, removed by a divergence-free streamfunction closure
    let psi: Vec<f64> = radii.iter().map(|&r| wall_profile(&c.chi, eps, r)).collect();
    let dpsi = d1.apply(&psi);
    let wall_dpsi = dpsi[nr - 1];
    let cvals: Vec<f64> =
        (0..nt).map(|i| -(du.at(nr - 1, i) + p.wall_speed() - p.wall_data(th[i])) / wall_dpsi).collect();
    let cprime = d_theta(&cvals, nt, 1);
    for j in 0..nr {
        for i in 0..nt {
            du.data[j * nt + i] += cvals[i] * dpsi[j];
            dv.data[j * nt + i] -= cprime[i] * psi[j] / radii[j];
        }
    }

    // divergence at the wall, removed by a normal-velocity closure
    let div = divergence(&du, &dv, &d1);
    let rxi: Vec<f64> = radii.iter().zip(&psi).map(|(r, s)| r * s).collect();
    let drxi = d1.apply(&rxi)[nr - 1];
    let n_wall: Vec<f64> = (0..nt).map(|i| -div.at(nr - 1, i) / drxi).collect();
    for j in 0..nr {
        for i in 0..nt {
            dv.data[j * nt + i] += n_wall[i] * psi[j];
        }
    }

    // remaining mismatch → h
    let power = c.order + 1;
    let scale = eps.powi(power as i32);
    let div = divergence(&du, &dv, &d1);
    let mut k = Field { data: div.data.iter().map(|d| -d / scale).collect(), ..div.clone() };
    for j in 0..nr {
        let mean = k.row(j).iter().sum::<f64>() / nt as f64;
        for x in &mut k.data[j * nt..(j + 1) * nt] {
            *x -= mean;
        }
    }
    for x in &mut k.data[(nr - 1) * nt..] {
        *x = 0.0;
    }
    let corrector = build_corrector(&k)?;
    for (a, b) in du.data.iter_mut().zip(&corrector.h.data) {
        *a += scale * b;
    }

    let mut u_a = du.clone();
    let mut p_a = dp.clone();
    for j in 0..nr {
        let (sw, pe) = crate::euler::couette_eval(p, radii[j])?;
        for i in 0..nt {
            u_a.data[j * nt + i] += sw;
            p_a.data[j * nt + i] += pe;
        }
    }
    let mut approx = ApproxSolution {
        eps,
        order: c.order,
        grid: grid.clone(),
        u_a,
        v_a: dv.clone(),
        p_a,
        du,
        dv,
        dp,
        outer_p,
        outer_rpr,
        r_u: Field::zeros(CoordKind::Polar, nt, radii.clone()),
        r_v: Field::zeros(CoordKind::Polar, nt, radii.clone()),
        corrector,
        corrector_power: power,
        components: c.clone(),
    };
    let (ru, rv) = residual_fields(&approx);
    approx.r_u = ru;
    approx.r_v = rv;
    Ok(approx)
}

/// Momentum residuals written around the Couette state so the swirl cancels exactly.
pub fn residual_fields(a: &ApproxSolution) -> (Field, Field) {
    let nt = a.grid.n_theta;
    let radii = a.grid.radii.clone();
    let (d1, d2) = radial_ops(&radii);
    let p = &a.components.params;
    let e2 = a.eps * a.eps;
    let u = &a.du.data;
    let v = &a.dv.data;
    let ur = d1.apply_strided(u, nt);
    let urr = d2.apply_strided(u, nt);
    let vr = d1.apply_strided(v, nt);
    let vrr = d2.apply_strided(v, nt);
    let inner_p: Vec<f64> = a.dp.data.iter().zip(&a.outer_p.data).map(|(x, y)| x - y).collect();
    let pr = d1.apply_strided(&inner_p, nt);
    let ut = d_theta(u, nt, 1);
    let utt = d_theta(u, nt, 2);
    let vt = d_theta(v, nt, 1);
    let vtt = d_theta(v, nt, 2);
    let pt = d_theta(&a.dp.data, nt, 1);
    let mut ru = vec![0.0; u.len()];
    let mut rv = vec![0.0; u.len()];
    ru.par_chunks_mut(nt).zip(rv.par_chunks_mut(nt)).enumerate().for_each(|(j, (ru, rv))| {
        let r = radii[j];
        let big_u = p.swirl(r);
        for i in 0..nt {
            let k = j * nt + i;
            let (uu, vv) = (u[k], v[k]);
            ru[i] = big_u * ut[k] + 2.0 * p.a * r * vv + pt[k] + uu * ut[k] + r * vv * ur[k] + uu * vv
                - e2 * (r * urr[k] + ur[k] + utt[k] / r + 2.0 * vt[k] / r - uu / r);
            rv[i] = big_u * vt[k] - 2.0 * big_u * uu + r * pr[k] + a.outer_rpr.data[k] + uu * vt[k] + r * vv * vr[k] - uu * uu
                - e2 * (r * vrr[k] + vtt[k] / r - 2.0 * ut[k] / r + vr[k] - vv / r);
        }
    });
    (Field { data: ru, ..a.du.clone() }, Field { data: rv, ..a.du.clone() })
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ResidualNorms {
    pub l2_ru: f64,
    pub l2_rv: f64,
    pub near_origin_ratio: f64,
}

/// (∫∫ f² dθ dr)^{1/2} by the trapezoid rule in r.
pub fn l2_theta_r(f: &Field) -> f64 {
    let nt = f.n_theta;
    let dth = 2.0 * std::f64::consts::PI / nt as f64;
    let prof: Vec<f64> = (0..f.n_radial()).map(|j| f.row(j).iter().map(|x| x * x).sum::<f64>() * dth).collect();
    crate::fd::trapz(&f.radial, &prof).sqrt()
}

pub fn compute_residuals(a: &ApproxSolution) -> ResidualNorms {
    let mut ratio = 0.0f64;
    for j in 0..a.grid.radii.len() {
        let r = a.grid.radii[j];
        if r < 0.25 {
            for i in 0..a.grid.n_theta {
                let s = a.r_u.at(j, i).abs() + a.r_v.at(j, i).abs();
                ratio = ratio.max(s / r);
            }
        }
    }
    ResidualNorms { l2_ru: l2_theta_r(&a.r_u), l2_rv: l2_theta_r(&a.r_v), near_origin_ratio: ratio }
}

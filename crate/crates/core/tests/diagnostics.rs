mod common;

use common::*;
use pb_disk::diagnostics::*;
use pb_disk::error_solver::log_radial_ops;
use pb_disk::spectral::{thetas, CoordKind, Field};
use pb_disk::Error;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

fn log_field(nt: usize, s: &[f64], f: impl Fn(f64, f64) -> f64) -> Field {
    Field::from_fn(CoordKind::Log, nt, Arc::new(s.to_vec()), f)
}

fn sup_diff(a: &[f64], b: impl Fn(usize) -> f64) -> f64 {
    a.iter().enumerate().fold(0.0f64, |m, (j, x)| m.max((x - b(j)).abs()))
}

// frequency decomposition

#[test]
fn decomposition_of_explicit_modes() {
    let s = coarse_s();
    let u = log_field(16, &s, |t, s| 3.0 + 2.0 * (-s).exp() * t.sin() + (3.0 * t).cos());
    let v = log_field(16, &s, |_, _| 0.0);
    let d = frequency_decompose(&u, &v).unwrap();
    assert!(sup_diff(&d.u0, |_| 3.0) < 1e-14);
    assert!(sup_diff(&d.c, |j| 2.0 * (-s[j]).exp()) < 1e-14);
    assert!(sup_diff(&d.d, |_| 0.0) < 1e-14);
    let th = thetas(16);
    assert!(sup_diff(&d.u_tilde.data, |x| (3.0 * th[x % 16]).cos()) < 1e-14);
}

#[test]
fn divergence_pair_satisfies_mode_one_relation() {
    // (u, v) = (2e^{−s} cos θ, e^{−s} sin θ): d = 2e^{−s} = e − e'
    let s = coarse_s();
    let u = log_field(16, &s, |t, s| 2.0 * (-s).exp() * t.cos());
    let v = log_field(16, &s, |t, s| (-s).exp() * t.sin());
    let d = frequency_decompose(&u, &v).unwrap();
    assert!(sup_diff(&d.d, |j| 2.0 * (-s[j]).exp()) < 1e-14);
    assert!(sup_diff(&d.e, |j| (-s[j]).exp()) < 1e-14);
    let exact: Vec<f64> = (0..s.len()).map(|j| d.d[j] - 2.0 * (-s[j]).exp()).collect();
    assert!(exact.iter().all(|x| x.abs() < 1e-14));
    let (dc, dd) = d.continuity_defects();
    assert!(dc.iter().all(|x| x.abs() < 1e-14));
    // only the finite-difference e' is inexact
    assert!(dd.iter().all(|x| x.abs() < 1e-4), "{:.3e}", dd.iter().fold(0.0f64, |m, x| m.max(x.abs())));
}

#[test]
fn random_divergence_free_fields() {
    let s = coarse_s();
    for idx in 0..12 {
        let chk = continuity_check(&Stream::random(7, idx), 16, &s);
        assert!(chk.truncation > 0.0);
        assert!(chk.defect <= 10.0 * chk.truncation, "field {idx}: defect {:.3e} vs {:.3e}", chk.defect, chk.truncation);
        assert!(chk.roundtrip <= 1e-13 && chk.leakage <= 1e-13, "field {idx}");
    }
}

#[test]
fn limits_of_a_translation() {
    // rigid translation (u, v) = (cos θ, sin θ)·1 for large s: c∞ = −f∞ = 0, d∞ = e∞ = 1
    let s = coarse_s();
    let u = log_field(16, &s, |t, _| t.cos());
    let v = log_field(16, &s, |t, _| t.sin());
    let d = frequency_decompose(&u, &v).unwrap();
    let (a, b) = d.limit_relations();
    assert!(a.abs() < 1e-14 && b.abs() < 1e-14);
    assert!((d.d_inf.value - 1.0).abs() < 1e-14 && d.d_inf.spread < 1e-14);
}

#[test]
fn decomposition_rejects_polar_fields() {
    let f = Field::from_fn(CoordKind::Polar, 16, Arc::new(vec![0.1, 0.4, 0.7, 1.0]), |_, r| r);
    assert!(frequency_decompose(&f, &f).is_err());
}

// vorticity

#[test]
fn couette_vorticity_is_constant() {
    let (a, b) = (0.6, 0.4);
    let r: Vec<f64> = (1..=200).map(|k| k as f64 / 200.0).collect();
    let u = Field::from_fn(CoordKind::Polar, 16, Arc::new(r.clone()), |_, r| a * r);
    let v = Field::from_fn(CoordKind::Polar, 16, Arc::new(r), |_, _| 0.0);
    let w = vorticity(&u, &v, b).unwrap();
    assert!(w.interior_deviation(2.0 * a, 1.0) < 1e-10);
    assert!((w.interior_mean(0.5) - 2.0 * a).abs() < 1e-12);
    assert_eq!(w.point_vortex, b);

    // the same flow with the b/r swirl sampled on a log grid: only truncation
    // error, which grows like e^{2s} and converges at fourth order
    let dev = |s: &[f64]| {
        let u = log_field(8, s, |_, s| a * (-s).exp() + b * s.exp());
        let v = log_field(8, s, |_, _| 0.0);
        vorticity(&u, &v, 0.0).unwrap().interior_deviation(2.0 * a, 1.0)
    };
    let s: Vec<f64> = (0..=100).map(|k| k as f64 * 0.05).collect();
    let (coarse, fine) = (dev(&s), dev(&refined(&s)));
    assert!(coarse < 2e-2 && coarse / fine > 12.0, "{coarse:.3e} {fine:.3e}");
}

#[test]
fn swirl_r_squared_has_vorticity_3r() {
    let r: Vec<f64> = (1..=100).map(|k| k as f64 / 100.0).collect();
    let u = Field::from_fn(CoordKind::Polar, 8, Arc::new(r.clone()), |_, r| r * r);
    let v = Field::from_fn(CoordKind::Polar, 8, Arc::new(r.clone()), |_, _| 0.0);
    let w = vorticity(&u, &v, 0.0).unwrap();
    for (j, r) in r.iter().enumerate() {
        assert!((w.omega0[j] - 3.0 * r).abs() < 1e-11);
    }
    assert!(w.omega_neq.sup() < 1e-12);
}

#[test]
fn vorticity_split_reconstructs() {
    let s = coarse_s();
    let st = Stream::random(3, 0);
    let (u, v) = st.velocity(16, &s);
    let w = vorticity(&u, &v, 0.0).unwrap();
    for x in 0..w.omega.data.len() {
        assert!((w.omega0[x / 16] + w.omega_neq.data[x] - w.omega.data[x]).abs() <= 1e-15 * (1.0 + w.omega.data[x].abs()));
    }
}

// transport identities and the weak form on solved fields

fn couette() -> &'static Solved {
    static CELL: OnceLock<Solved> = OnceLock::new();
    CELL.get_or_init(|| solve_case(0.0, 0.1, 16))
}

fn perturbed() -> &'static Solved {
    static CELL: OnceLock<Solved> = OnceLock::new();
    CELL.get_or_init(|| solve_case(0.1, 0.2, 16))
}

#[test]
fn transport_residuals_vanish_for_zero_error() {
    let c = couette();
    let t = vorticity_transport_checks(&c.approx, &c.error).unwrap();
    assert_eq!(t.zero_mode_residual, 0.0);
    assert_eq!(t.vorticity_residual, 0.0);
    assert_eq!(t.lambda_norm, 0.0);
}

#[test]
fn transport_identities_hold_for_a_converged_solve() {
    let c = perturbed();
    let t = vorticity_transport_checks(&c.approx, &c.error).unwrap();
    assert!(t.zero_mode_scale > 1e-6 && t.lambda_norm > 1e-3, "{t:?}");
    assert!(t.zero_mode_residual <= 1e-8, "{t:?}");
    // Λ from the momentum terms against the expanded ε²Δω: double assembly
    assert!(t.vorticity_residual <= 1e-9, "{t:?}");
    // differentiating the sampled ω adds truncation error only
    assert!(t.zero_mode_direct <= 1e-2 * t.zero_mode_scale, "{t:?}");
    assert!(t.vorticity_direct <= 1e-2 * t.lambda_norm, "{t:?}");
}

#[test]
fn weak_form_forcing_terms() {
    let phi = &TestFunction::standard_set()[0];
    assert_eq!(phi.origin_slope(), 1.0);
    let c = couette();
    let eps = 0.1;
    let w = weak_form_check(&c.ns, &c.params, eps, phi).unwrap();
    let b = c.params.b;
    assert!((w.displayed_forcing + 2.0 * PI * b * eps * eps).abs() < 1e-15);
    assert!((w.forcing - 4.0 * PI * b * eps * eps).abs() < 1e-15);

    // 1 − r²: ∂_rφ̄₁(0) = 0, but the field does not vanish at the origin
    let flat = TestFunction::radial("1-r^2", Poly(vec![1.0, 0.0, -1.0]));
    assert_eq!(flat.origin_slope(), 0.0);
    assert!(matches!(weak_form_check(&c.ns, &c.params, eps, &flat), Err(Error::InvalidTestFunction(_))));
}

#[test]
fn weak_form_couette() {
    let c = couette();
    for phi in TestFunction::standard_set() {
        let w = weak_form_check(&c.ns, &c.params, 0.1, &phi).unwrap();
        assert!(w.residual <= 1e-8, "{w:?}");
    }
}

#[test]
fn weak_form_perturbed() {
    let c = perturbed();
    for phi in TestFunction::standard_set() {
        let w = weak_form_check(&c.ns, &c.params, 0.2, &phi).unwrap();
        assert!(w.residual <= 1e-5, "{w:?}");
    }
}

#[test]
fn weak_form_rejects_nonsolenoidal_fields() {
    let c = couette();
    let phi = TestFunction { name: "x".into(), m: 2, tangential: Poly::factored(2, 2, 0), normal: Poly::factored(2, 2, 0) };
    assert!(matches!(weak_form_check(&c.ns, &c.params, 0.1, &phi), Err(Error::InvalidTestFunction(_))));
}

#[test]
fn curl_test_function_is_solenoidal() {
    let phi = TestFunction::from_streamfunction("psi", 3, &Poly::factored(3, 2, 1)).unwrap();
    // −mP + (rQ)' = 0
    let (p, q) = (&phi.tangential, &phi.normal);
    for k in 0..=10 {
        let r = k as f64 / 10.0;
        let rq_prime = q.eval(r) + r * q.deriv().eval(r);
        assert!((rq_prime - 3.0 * p.eval(r)).abs() < 1e-12);
    }
}

// inequalities

#[test]
fn wirtinger_extremal_and_strict_modes() {
    let t = 2.0 * PI;
    let (a, b) = wirtinger_integrals(t, &[(2, 1.0, 0.0)]);
    assert!((a - PI).abs() < 1e-13 && (b - 4.0 * PI).abs() < 1e-13);
    assert!((wirtinger_ratio(t, &[(2, 1.0, 0.0)]) - 1.0).abs() < 1e-14);
    assert!((wirtinger_ratio(t, &[(3, 1.0, 0.0)]) - 4.0 / 9.0).abs() < 1e-14);
    // period-independent
    assert!((wirtinger_ratio(3.7, &[(2, 0.3, -0.8)]) - 1.0).abs() < 1e-14);
}

#[test]
fn hardy_half_line_closed_form() {
    // f = t e^{−t}: ∫t⁻²f² = 1/2, ∫f'² = ∫(1 − t)²e^{−2t} = 1/4
    let (a, b) = hardy_half_line_integrals(&[(1.0, 1, 1.0)]);
    assert!((a - 0.5).abs() < 1e-13 && (b - 0.25).abs() < 1e-13, "{a} {b}");
    assert!((a / (4.0 * b) - 0.5).abs() < 1e-12);
}

#[test]
fn hardy_interval_closed_form() {
    // f = (r − 1/2)(1 − r): ∫f²/(1−r)² = ∫(r−1/2)² = 1/24, ∫f'² = ∫(3/2 − 2r)² = 1/24
    let (a, b) = hardy_interval_integrals(&[], &Poly(vec![1.0]));
    assert!((a - 1.0 / 24.0).abs() < 1e-14 && (b - 1.0 / 24.0).abs() < 1e-14);
    // f = sin(2π(r − 1/2)): ∫f'² = 2π²·(1/2)
    let (_, b) = hardy_interval_integrals(&[(1, 1.0)], &Poly(vec![]));
    assert!((b - PI * PI).abs() < 1e-12);
}

#[test]
fn inequality_suite_passes_and_is_thread_independent() {
    let r1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| inequality_suite(60, 11));
    let r3 = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| inequality_suite(60, 11));
    assert_eq!(r1, r3);
    assert_eq!(r1.violations(), 0, "{r1:?}");
    assert!(r1.wirtinger.worst_ratio <= 1.0 + 1e-12 && r1.hardy_interval.worst_ratio <= 1.0 && r1.hardy_half_line.worst_ratio <= 1.0);
    assert!((r1.wirtinger_k2_ratio - 1.0).abs() < 1e-14);
    assert_ne!(inequality_suite(10, 12), inequality_suite(10, 11));
}

// sup-norm bound

#[test]
fn sup_norm_of_zero_field() {
    let s = coarse_s();
    let z = log_field(16, &s, |_, _| 0.0);
    let r = sup_norm_diagnostic(&frequency_decompose(&z, &z).unwrap());
    assert_eq!((r.measured_u, r.bound_u, r.measured_v, r.bound_v), (0.0, 0.0, 0.0, 0.0));
    assert!(r.holds());
}

#[test]
fn sup_norm_of_decaying_mode_one() {
    // u = e^{−s} sin θ on [0, S]: ‖c − c∞‖² = (1 − e^{−2S})/2 − 2c∞(1 − e^{−S}) + c∞²S, ‖c'‖² = (1 − e^{−2S})/2
    let s: Vec<f64> = (0..=3000).map(|k| k as f64 * 7.5 / 3000.0).collect();
    let u = log_field(16, &s, |t, s| (-s).exp() * t.sin());
    let z = log_field(16, &s, |_, _| 0.0);
    let d = frequency_decompose(&u, &z).unwrap();
    let r = sup_norm_diagnostic(&d);
    assert!((r.measured_u - 1.0).abs() < 1e-15);
    let big = 7.5f64;
    let ci = d.c_inf.value;
    let q = (1.0 - (-2.0 * big).exp()) / 2.0;
    let expect = (q - 2.0 * ci * (1.0 - (-big).exp()) + ci * ci * big).sqrt() + q.sqrt() + ci.abs();
    assert!((r.bound_u - expect).abs() < 1e-5 * expect, "{} vs {expect}", r.bound_u);
    assert!(r.holds());
}

#[test]
fn sup_norm_bound_holds_for_solved_error() {
    let c = perturbed();
    let r = sup_norm_diagnostic(&frequency_decompose(&c.error.u, &c.error.v).unwrap());
    assert!(r.measured_u > 0.0 && r.holds(), "{r:?}");
}

// convergence tables

fn rows(metric: &str, eps: &[f64], f: impl Fn(f64) -> f64) -> Vec<ConvergenceRow> {
    eps.iter().map(|&e| ConvergenceRow { epsilon: e, metric: metric.into(), value: f(e) }).collect()
}

#[test]
fn convergence_fits() {
    let eps = [0.2, 0.1, 0.05];
    let mut all = rows(METRIC_SUP_U, &eps, |e| 3.0 * e.powf(1.5));
    all.extend(rows(METRIC_SUP_V, &eps, |_| 0.0));
    let t = ConvergenceTable::new(all).unwrap();
    let f = t.fit(METRIC_SUP_U).unwrap();
    assert!((f.slope.unwrap() - 1.5).abs() < 1e-12 && (f.intercept.unwrap() - 3f64.ln()).abs() < 1e-12);
    let z = t.fit(METRIC_SUP_V).unwrap();
    assert!(z.exact_zero && z.slope.is_none());
    assert!(ConvergenceTable::new(rows(METRIC_RESIDUAL, &eps[..2], |e| e)).is_err());
    assert!(loglog_fit(&eps, &[1.0, -1.0, 1.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_roundtrip(vals in prop::collection::vec(-10.0f64..10.0, 12 * 8)) {
        let s: Vec<f64> = (0..12).map(|k| k as f64 * 0.5).collect();
        let u = Field { kind: CoordKind::Log, n_theta: 8, radial: Arc::new(s.clone()), data: vals.clone() };
        let v = Field { data: vals.iter().rev().copied().collect(), ..u.clone() };
        let d = frequency_decompose(&u, &v).unwrap();
        let (ur, vr) = d.reconstruct();
        for (a, b) in ur.data.iter().zip(&u.data).chain(vr.data.iter().zip(&v.data)) {
            prop_assert!((a - b).abs() <= 1e-13);
        }
        prop_assert!(d.remainder_leakage() <= 1e-13);
    }

    #[test]
    fn loglog_fit_recovers_power_laws(p in -3.0f64..3.0, c in 0.01f64..100.0, e0 in 0.01f64..0.5) {
        let eps = [e0, e0 / 2.0, e0 / 3.0, e0 / 5.0];
        let vals: Vec<f64> = eps.iter().map(|e| c * e.powf(p)).collect();
        let (slope, icpt) = loglog_fit(&eps, &vals).unwrap();
        prop_assert!((slope - p).abs() < 1e-10);
        prop_assert!((icpt - c.ln()).abs() < 1e-8);
    }

    #[test]
    fn wirtinger_holds_without_low_modes(
        period in 0.1f64..20.0,
        coeffs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..10),
    ) {
        let modes: Vec<(usize, f64, f64)> = coeffs.iter().enumerate().map(|(k, (a, b))| (k + 2, *a, *b)).collect();
        prop_assert!(wirtinger_ratio(period, &modes) <= 1.0 + 1e-12);
    }

    #[test]
    fn hardy_half_line_holds(a in -1.0f64..1.0, m in 1i32..5, l in 0.3f64..3.0, a2 in -1.0f64..1.0, l2 in 0.3f64..3.0) {
        let (x, y) = hardy_half_line_integrals(&[(a, m, l), (a2, 1, l2)]);
        prop_assert!(x <= 4.0 * y * (1.0 + 1e-12));
    }

    #[test]
    fn factored_poly_matches_product(c in 0usize..4, a in 0usize..4, b in 0usize..4, r in -2.0f64..2.0) {
        let p = Poly::factored(c, a, b);
        let want = r.powi(c as i32) * (1.0 - r).powi(a as i32) * (1.0 + r).powi(b as i32);
        prop_assert!((p.eval(r) - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }
}

#[test]
fn log_ops_are_fourth_order() {
    // guards the truncation estimate used by the continuity check
    let s = coarse_s();
    let err = |s: &[f64]| {
        let (d1, _) = log_radial_ops(s);
        let f: Vec<f64> = s.iter().map(|x| (0.8 * x).sin()).collect();
        d1.apply(&f).iter().zip(s).fold(0.0f64, |m, (d, x)| m.max((d - 0.8 * (0.8 * x).cos()).abs()))
    };
    let ratio = err(&s) / err(&refined(&s));
    assert!(ratio > 12.0, "{ratio}");
}

#[test]
fn departure_vorticity_matches_direct_deviation() {
    assert_eq!(couette_vorticity_deviation(&couette().ns, 0.9), 0.0);
    let c = perturbed();
    let two_a = 2.0 * c.params.a;
    let direct = solution_vorticity(&c.ns).interior_deviation(two_a, 0.5);
    let dep = couette_vorticity_deviation(&c.ns, 0.5);
    assert!(dep > 0.0 && (direct - dep).abs() < 1e-12, "{direct} {dep}");
}

// One test per acceptance criterion; each prints a single PASS/FAIL line
// (visible with --nocapture) and asserts at the end.

mod common;

use common::*;
use num_complex::Complex64;
use pb_disk::assemble::*;
use pb_disk::diagnostics::*;
use pb_disk::euler::*;
use pb_disk::grid::*;
use pb_disk::io::ExperimentConfig;
use pb_disk::pipeline::{run_experiment, Stage};
use pb_disk::prandtl::{solve_prandtl_leading, LayerConfig};
use pb_disk::spectral::{d_theta, drop_nyquist, rfft, CoordKind, Field};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

const SWEEP: [f64; 3] = [0.2, 0.1, 0.05];

fn report(id: usize, name: &str, pass: bool, detail: String) {
    println!("criterion {id:>2} {name:<28} {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

struct Sweep {
    runs: Vec<Solved>,
    elapsed: Duration,
}

/// η = 0.1 solves over the default ε sweep, shared by several criteria.
fn sweep() -> &'static Sweep {
    static S: OnceLock<Sweep> = OnceLock::new();
    S.get_or_init(|| {
        let t = Instant::now();
        let runs = SWEEP.iter().map(|&e| solve_case(0.1, e, 16)).collect();
        Sweep { runs, elapsed: t.elapsed() }
    })
}

fn at_eps(eps: f64) -> &'static Solved {
    sweep().runs.iter().find(|s| s.approx.eps == eps).unwrap()
}

fn sup_abs(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[test]
fn criterion_01_couette_exactness() {
    let t = Instant::now();
    let s = solve_case(0.0, 0.1, 16);
    let elapsed = t.elapsed();
    let p = &s.params;
    let form = Field::from_fn(CoordKind::Polar, 16, s.approx.grid.radii.clone(), |_, r| p.a * r + p.b / r);
    let shape = sup_abs(s.approx.u_a.data.iter().zip(&form.data).map(|(x, y)| (x - y) / y.abs().max(1.0)))
        .max(s.approx.v_a.sup());
    let res = compute_residuals(&s.approx);
    let r_norm = res.l2_ru.hypot(res.l2_rv);
    let err = s.error.u.sup().max(s.error.v.sup());
    let w = solution_vorticity(&s.ns).interior_deviation(2.0 * p.a, 0.9);
    let a_ok = (p.a - (p.alpha - p.b)).abs() < 1e-15;
    let pass = a_ok && shape <= 1e-12 && r_norm <= 1e-11 && err <= 1e-9 && w <= 1e-9 && elapsed < Duration::from_secs(10);
    report(
        1,
        "couette exactness",
        pass,
        format!("|u_a-(ar+b/r)|={shape:.1e} |R|={r_norm:.1e} err={err:.1e} |w-2a|={w:.1e} t={elapsed:.2?}"),
    );
}

#[test]
fn criterion_02_batchelor_wood() {
    let t = Instant::now();
    let runs: Vec<Solved> = [0.1, 0.05].iter().map(|&e| solve_case(0.2, e, 16)).collect();
    let elapsed = t.elapsed();
    let a = solve_batchelor_wood(1.0, 0.2, &Varpi::cos1(), 0.4).unwrap();
    let a_ok = (a - (1.02f64.sqrt() - 0.4)).abs() < 1e-12 && (runs[0].params.a - a).abs() < 1e-14;
    let dev: Vec<f64> = runs.iter().map(|s| (solution_vorticity(&s.ns).interior_mean(0.5) - 2.0 * a).abs()).collect();
    let rel = dev[1] / (2.0 * a);
    let pass = a_ok && dev[1] < dev[0] && rel <= 0.05 && elapsed < Duration::from_secs(300);
    report(
        2,
        "batchelor-wood emergence",
        pass,
        format!("a={a:.6} |w-2a| eps0.1={:.3e} eps0.05={:.3e} rel={rel:.2e} t={elapsed:.2?}", dev[0], dev[1]),
    );
}

#[test]
fn criterion_03_error_rate() {
    let sw = sweep();
    let u: Vec<f64> = sw.runs.iter().map(|s| s.ns.sup_u_deviation).collect();
    let v: Vec<f64> = sw.runs.iter().map(|s| s.ns.sup_v).collect();
    let (su, _) = loglog_fit(&SWEEP, &u).unwrap();
    let (sv, _) = loglog_fit(&SWEEP, &v).unwrap();
    let inside = |x: f64| (0.8..=1.5).contains(&x);
    let pass = inside(su) && inside(sv) && sw.elapsed < Duration::from_secs(600);
    report(3, "error rate", pass, format!("slope_u={su:.3} slope_v={sv:.3} sup_u={u:?} sup_v={v:?} t={:.2?}", sw.elapsed));
}

#[test]
fn criterion_04_residual_scaling() {
    let t = Instant::now();
    let p = CouetteParams::new(1.0, 0.1, 0.4, Varpi::cos1()).unwrap();
    let base = build_components(&p, SWEEP[0], 1, 16, &LayerConfig::default()).unwrap();
    let mut norms = Vec::new();
    for &e in &SWEEP {
        let grid = LogGrid::new(16, graded_s_grid(e, 7.5, &RadialSpec::default()).unwrap()).unwrap();
        let a = assemble(Arc::new(base.with_eps(e).unwrap()), &grid.to_polar()).unwrap();
        let r = compute_residuals(&a);
        norms.push(r.l2_ru.hypot(r.l2_rv));
    }
    let elapsed = t.elapsed();
    let (slope, _) = loglog_fit(&SWEEP, &norms).unwrap();
    let pass = slope >= 1.7 && elapsed < Duration::from_secs(60);
    report(4, "residual scaling", pass, format!("slope={slope:.3} |R|={norms:?} t={elapsed:.2?}"));
}

/// Residual of r²Δũ − ũ + 2∂_θṽ mode by mode, with mode 0 from the modifier.
fn corrector_identity(e: &EulerCorrector, r: f64) -> f64 {
    let m = e.modes(r);
    let mut worst = 0.0f64;
    for n in 0..m.u.len() {
        let nf = n as f64;
        let lap = m.u_rr[n] + m.u_r[n] / r - m.u[n] * (nf * nf / (r * r));
        let res = lap * (r * r) - m.u[n] + Complex64::new(0.0, 2.0 * nf) * m.v[n];
        worst = worst.max(res.norm());
    }
    worst
}

/// (ODE residual rA'' + A' − A/r − φ, distance to the regular solution A∞(r − χ)).
/// The operator is d/dr[(rA)'/r]·r, so the only solution regular at the origin with
/// A(1) = 0 is A∞(r − χ), which also fixes a_i = A∞.
fn modifier_ode(md: &Modifier, chi: &pb_disk::cutoff::CutoffProfile, r: f64) -> (f64, f64) {
    let [a0, a1, a2] = md.profile_derivs(r);
    let [c, c1, c2] = chi.eval(r);
    let phi = -md.a_infty * (r * c2 + c1 - c / r);
    let ode = r * a2 + a1 - a0 / r - phi;
    let exact = [md.a_infty * (r - c), md.a_infty * (1.0 - c1), -md.a_infty * c2];
    let dist = (a0 - exact[0]).abs().max((a1 - exact[1]).abs()).max((a2 - exact[2]).abs());
    (ode.abs(), dist)
}

#[test]
fn criterion_05_structural_identities() {
    let s = at_eps(0.1);
    let div = assembled_divergence(&s.approx).sup();

    let comps = &s.approx.components;
    let radii: Vec<f64> = (1..=40).map(|k| k as f64 / 40.0).collect();
    let mut euler = 0.0f64;
    let mut ode = 0.0f64;
    let mut closed = 0.0f64;
    let mut wall = 0.0f64;
    let mut modifiers = 0;
    for e in &comps.eulers {
        for &r in &radii {
            euler = euler.max(corrector_identity(e, r));
        }
        if let Some(md) = &e.modifier {
            modifiers += 1;
            wall = wall.max(md.profile(1.0).abs());
            closed = closed.max((md.a_i - md.a_infty).abs());
            for k in 1..=200 {
                let (o, d) = modifier_ode(md, &comps.chi, k as f64 / 200.0);
                ode = ode.max(o);
                closed = closed.max(d);
            }
        }
    }

    let c = &s.approx.corrector;
    let nt = c.k.n_theta;
    let mut k = c.k.data.clone();
    drop_nyquist(&mut k, nt);
    let dh = d_theta(&c.h.data, nt, 1);
    let roundtrip = sup_abs(dh.iter().zip(&k).map(|(a, b)| a - b));

    let pass = div <= 1e-13 && euler <= 1e-8 && ode <= 1e-8 && closed <= 1e-8 && wall == 0.0 && modifiers > 0 && roundtrip <= 1e-13;
    report(
        5,
        "structural identities",
        pass,
        format!("div={div:.1e} euler={euler:.1e} modifier_ode={ode:.1e} closed_form={closed:.1e} A_i(1)={wall:.1e} ({modifiers} modifiers) roundtrip={roundtrip:.1e}"),
    );
}

/// max over layer rows of the first θ-harmonic amplitude of u − (wall shift).
fn first_harmonic(u: &Field) -> f64 {
    (0..u.n_radial()).map(|j| rfft(u.row(j))[1].norm()).fold(0.0, f64::max)
}

#[test]
fn criterion_06_prandtl_oracle() {
    let t = Instant::now();
    let g = LayerGrid::uniform(16, -25.0, 0.025).unwrap();
    let cfg = LayerConfig::default();
    let mut amps = Vec::new();
    let mut err = 0.0;
    for eta in [1e-3, 2e-3] {
        let p = CouetteParams::new(1.0, eta, 0.4, Varpi::cos1()).unwrap();
        let l = solve_prandtl_leading(&p, &g, &cfg).unwrap();
        amps.push(first_harmonic(&l.u));
        if eta == 1e-3 {
            let k = (p.wall_speed() / 2.0).sqrt();
            let shift = p.alpha - p.wall_speed();
            let exact = Field::from_fn(CoordKind::Layer, 16, g.y_values.clone(), |th, y| {
                eta * (k * y).exp() * (th + k * y).cos() + if y == 0.0 { shift } else { 0.0 }
            });
            err = l.u.map2(&exact, |a, b| (a - b).abs()).sup();
        }
    }
    let elapsed = t.elapsed();
    let ratio = amps[1] / amps[0];
    let pass = err <= 1e-5 && (1.95..=2.05).contains(&ratio) && elapsed < Duration::from_secs(30);
    report(6, "prandtl oracle", pass, format!("sup_err={err:.2e} ratio={ratio:.5} t={elapsed:.2?}"));
}

#[test]
fn criterion_07_frequency_relations() {
    let s = coarse_s();
    let mut worst_ratio = 0.0f64;
    let mut roundtrip = 0.0f64;
    let mut leakage = 0.0f64;
    for idx in 0..50 {
        let c = continuity_check(&Stream::random(7, idx), 16, &s);
        worst_ratio = worst_ratio.max(c.defect / c.truncation);
        roundtrip = roundtrip.max(c.roundtrip);
        leakage = leakage.max(c.leakage);
    }
    let pass = worst_ratio <= 10.0 && roundtrip <= 1e-13 && leakage <= 1e-13;
    report(7, "frequency relations", pass, format!("defect/truncation<={worst_ratio:.2} roundtrip={roundtrip:.1e} leakage={leakage:.1e}"));
}

#[test]
fn criterion_08_vorticity_transport() {
    let s = at_eps(0.1);
    let tr = vorticity_transport_checks(&s.approx, &s.error).unwrap();
    let pass = tr.zero_mode_residual <= 1e-7 && tr.vorticity_residual <= 1e-7;
    report(
        8,
        "vorticity transport",
        pass,
        format!("zero_mode={:.1e} vorticity={:.1e} (direct {:.1e}, {:.1e})", tr.zero_mode_residual, tr.vorticity_residual, tr.zero_mode_direct, tr.vorticity_direct),
    );
}

#[test]
fn criterion_09_weak_form() {
    let couette = solve_case(0.0, 0.1, 16);
    let s = at_eps(0.1);
    let set = TestFunction::standard_set();
    let mut lines = Vec::new();
    let mut pass = set.len() == 3;
    for phi in &set {
        let c = weak_form_check(&couette.ns, &couette.params, 0.1, phi).unwrap();
        let w = weak_form_check(&s.ns, &s.params, 0.1, phi).unwrap();
        pass &= c.residual <= 1e-6 && w.residual <= 1e-4;
        lines.push(format!("{}: couette={:.1e} perturbed={:.1e}", phi.name, c.residual, w.residual));
    }
    // φ₁ = r(1−r)² pairs the point vortex to −2πbε²
    let f = weak_form_check(&couette.ns, &couette.params, 0.1, &set[0]).unwrap();
    let expected = -2.0 * std::f64::consts::PI * couette.params.b * 0.01;
    pass &= (f.displayed_forcing - expected).abs() <= 1e-14;
    report(9, "very weak form", pass, lines.join("; "));
}

#[test]
fn criterion_10_inequalities() {
    let r = inequality_suite(200, 1);
    let k2 = (r.wirtinger_k2_ratio - 1.0).abs();
    let samples = r.wirtinger.samples.min(r.hardy_interval.samples).min(r.hardy_half_line.samples);
    let pass = r.violations() == 0 && samples >= 200 && k2 <= 1e-12;
    report(
        10,
        "inequality suite",
        pass,
        format!(
            "violations={} worst wirtinger={:.6} hardy={:.6}/{:.6} |k2-1|={k2:.1e}",
            r.violations(),
            r.wirtinger.worst_ratio,
            r.hardy_interval.worst_ratio,
            r.hardy_half_line.worst_ratio
        ),
    );
}

fn pipeline_csvs(threads: usize) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { inequality_samples: 50, ..ExperimentConfig::default() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        run_experiment(&cfg, Stage::Converge, dir.path(), false).unwrap();
        run_experiment(&cfg, Stage::Verify, dir.path(), true).unwrap();
        run_experiment(&cfg, Stage::CheckInequalities, dir.path(), true).unwrap();
    });
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn criterion_11_determinism() {
    let t = Instant::now();
    let runs = [pipeline_csvs(1), pipeline_csvs(4), pipeline_csvs(4)];
    let elapsed = t.elapsed();
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    let same = runs[1..].iter().all(|r| *r == runs[0]);
    let populated = names.len() >= 6 && runs[0].iter().all(|(_, b)| has_rows(b));
    let pass = same && populated;
    report(11, "determinism", pass, format!("threads 1/4/4 identical={same} files={names:?} t={elapsed:.2?}"));
}

fn has_rows(b: &[u8]) -> bool {
    b.iter().filter(|c| **c == b'\n').count() >= 2
}

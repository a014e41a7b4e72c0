//! Stage orchestration: expand → solve → verify / converge, plus the standalone
//! inequality suite. Every stage writes CSVs (and optionally field dumps) into the
//! output directory and refreshes `manifest.json`.

use crate::assemble::{assemble, assembled_divergence, build_components, compute_residuals, ApproxSolution, Components};
use crate::diagnostics::*;
use crate::error::{Error, Result};
use crate::error_solver::{reconstruct_full, solve_error, ErrorField, NSSolution};
use crate::io::*;
use crate::spectral::CoordKind;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Expand,
    Solve,
    Verify,
    Converge,
    CheckInequalities,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Expand => "expand",
            Stage::Solve => "solve",
            Stage::Verify => "verify",
            Stage::Converge => "converge",
            Stage::CheckInequalities => "check-inequalities",
        }
    }

    fn upstream(&self) -> &'static [Stage] {
        match self {
            Stage::Expand | Stage::CheckInequalities => &[],
            Stage::Solve => &[Stage::Expand],
            Stage::Verify | Stage::Converge => &[Stage::Expand, Stage::Solve],
        }
    }
}

pub const EXPAND_CSV: &str = "expand.csv";
pub const SOLVE_CSV: &str = "solve.csv";
pub const VERIFY_CSV: &str = "verify.csv";
pub const VERIFY_JSON: &str = "verify.json";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const FITS_CSV: &str = "fits.csv";
pub const INEQUALITIES_CSV: &str = "inequalities.csv";
pub const MANIFEST: &str = "manifest.json";

const EXPAND_HEADER: [&str; 9] = [
    "epsilon",
    "order",
    "n_radial",
    "residual_l2",
    "residual_u_l2",
    "residual_v_l2",
    "divergence_sup",
    "near_origin_ratio",
    "interior_constant",
];
const SOLVE_HEADER: [&str; 8] =
    ["epsilon", "newton_steps", "newton_residual", "sup_u_deviation", "sup_v", "vorticity_deviation", "vorticity_mean", "two_a"];

/// Tag used in dump names, exact in ε.
pub fn eps_tag(eps: f64) -> String {
    format!("eps{:016x}", eps.to_bits())
}

pub fn dump_name(prefix: &str, eps: f64, field: &str) -> String {
    format!("{prefix}_{}_{field}.bin", eps_tag(eps))
}

#[derive(Debug)]
pub struct RunSummary {
    pub stages: Vec<Stage>,
    pub manifest: Manifest,
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    manifest: Manifest,
    components: Option<Arc<Components>>,
    approx: Vec<ApproxSolution>,
    errors: Vec<ErrorField>,
}

/// Run `stage` after its upstream stages, or alone with `stage_only` (upstream
/// outputs must then be present in `out`).
pub fn run_experiment(cfg: &ExperimentConfig, stage: Stage, out: &Path, stage_only: bool) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let manifest_path = out.join(MANIFEST);
    let manifest = match Manifest::read(&manifest_path) {
        Ok(m) if m.config_hash == cfg.hash() => m,
        _ => Manifest::new(cfg),
    };
    let mut r = Runner { cfg, out: out.to_path_buf(), manifest, components: None, approx: Vec::new(), errors: Vec::new() };
    let mut stages: Vec<Stage> = if stage_only { vec![] } else { stage.upstream().to_vec() };
    stages.push(stage);
    if stage_only {
        for up in stage.upstream() {
            r.require(*up)?;
        }
    }
    let result = stages.iter().try_for_each(|s| {
        let t = Instant::now();
        let res = r.run(*s);
        let seconds = t.elapsed().as_secs_f64();
        r.manifest.stages.retain(|x| x.stage != s.name());
        r.manifest.stages.push(StageTiming { stage: s.name().into(), seconds });
        res
    });
    r.manifest.write(&manifest_path)?;
    result?;
    Ok(RunSummary { stages, manifest: r.manifest })
}

impl Runner<'_> {
    fn require(&self, stage: Stage) -> Result<()> {
        let need: Vec<String> = match stage {
            Stage::Expand => vec![EXPAND_CSV.into()],
            Stage::Solve => {
                let mut v = vec![SOLVE_CSV.to_string()];
                for &e in &self.cfg.epsilons {
                    for f in ["u", "v", "p"] {
                        v.push(dump_name("error", e, f));
                    }
                }
                v
            }
            _ => vec![],
        };
        for n in need {
            if !self.out.join(&n).exists() {
                return Err(Error::Dependency(format!("{n} not found in {}; run the {} stage first", self.out.display(), stage.name())));
            }
        }
        Ok(())
    }

    fn run(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Expand => self.expand(),
            Stage::Solve => self.solve(),
            Stage::Verify => self.verify(),
            Stage::Converge => self.converge(),
            Stage::CheckInequalities => self.inequalities(),
        }
    }

    fn components(&mut self) -> Result<Arc<Components>> {
        if let Some(c) = &self.components {
            return Ok(c.clone());
        }
        let p = self.cfg.params()?;
        let c = Arc::new(build_components(&p, self.cfg.epsilons[0], self.cfg.order, self.cfg.n_theta, &self.cfg.layer_config())?);
        self.components = Some(c.clone());
        Ok(c)
    }

    /// Approximations for every ε, built once per run.
    fn approximations(&mut self) -> Result<()> {
        if self.approx.len() == self.cfg.epsilons.len() {
            return Ok(());
        }
        let base = self.components()?;
        self.approx.clear();
        for &e in &self.cfg.epsilons {
            let c = Arc::new(base.with_eps(e)?);
            let grid = self.cfg.log_grid(e)?;
            self.approx.push(assemble(c, &grid.to_polar())?);
        }
        Ok(())
    }

    fn write_table(&mut self, t: &Table, name: &str) -> Result<()> {
        t.write(&self.out.join(name))?;
        self.manifest.record(&self.out, name)
    }

    fn dump(&mut self, name: String, f: &crate::spectral::Field) -> Result<()> {
        dump_field(&self.out.join(&name), f)?;
        self.manifest.record(&self.out, &name)
    }

    fn expand_table(&self) -> Table {
        let mut t = Table::new(&EXPAND_HEADER);
        for a in &self.approx {
            let res = compute_residuals(a);
            t.push(vec![
                fmt_f64(a.eps),
                a.order.to_string(),
                a.grid.radii.len().to_string(),
                fmt_f64(res.l2_ru.hypot(res.l2_rv)),
                fmt_f64(res.l2_ru),
                fmt_f64(res.l2_rv),
                fmt_f64(assembled_divergence(a).sup()),
                fmt_f64(res.near_origin_ratio),
                fmt_f64(a.components.params.a),
            ]);
        }
        t
    }

    fn expand(&mut self) -> Result<()> {
        self.approximations()?;
        let t = self.expand_table();
        self.write_table(&t, EXPAND_CSV)?;
        if self.cfg.write_dumps {
            for k in 0..self.approx.len() {
                let a = self.approx[k].clone();
                for (name, f) in [("u", &a.u_a), ("v", &a.v_a), ("p", &a.p_a), ("ru", &a.r_u), ("rv", &a.r_v)] {
                    self.dump(dump_name("approx", a.eps, name), f)?;
                }
            }
        }
        Ok(())
    }

    /// With `--stage-only` the approximations are rebuilt; they must reproduce the
    /// recorded expand table.
    fn check_expand_table(&mut self) -> Result<()> {
        let recorded = Table::read(&self.out.join(EXPAND_CSV))?;
        if recorded != self.expand_table() {
            return Err(Error::Dependency(format!("{EXPAND_CSV} does not match this config; rerun the expand stage")));
        }
        Ok(())
    }

    fn solve(&mut self) -> Result<()> {
        let fresh = self.approx.is_empty();
        self.approximations()?;
        if fresh {
            self.check_expand_table()?;
        }
        self.errors.clear();
        let mut t = Table::new(&SOLVE_HEADER);
        let rho = self.cfg.vorticity_radius;
        for k in 0..self.approx.len() {
            let a = &self.approx[k];
            let grid = self.cfg.log_grid(a.eps)?;
            let e = match solve_error(a, &grid, &self.cfg.solver_config(a.eps)) {
                Ok(e) => e,
                Err(err) => {
                    self.write_table(&t, SOLVE_CSV)?;
                    return Err(err);
                }
            };
            let ns = reconstruct_full(a, &e)?;
            let w = solution_vorticity(&ns);
            let two_a = 2.0 * a.components.params.a;
            let rep = &e.newton_report;
            t.push(vec![
                fmt_f64(a.eps),
                rep.residuals.len().saturating_sub(1).to_string(),
                fmt_f64(*rep.residuals.last().unwrap_or(&0.0)),
                fmt_f64(ns.sup_u_deviation),
                fmt_f64(ns.sup_v),
                fmt_f64(couette_vorticity_deviation(&ns, rho)),
                fmt_f64(w.interior_mean(rho)),
                fmt_f64(two_a),
            ]);
            if self.cfg.write_dumps {
                let eps = a.eps;
                for (name, f) in [("u", &e.u), ("v", &e.v), ("p", &e.p)] {
                    self.dump(dump_name("error", eps, name), f)?;
                }
            }
            self.errors.push(e);
        }
        self.write_table(&t, SOLVE_CSV)
    }

    fn load_errors(&mut self) -> Result<()> {
        if self.errors.len() == self.cfg.epsilons.len() {
            return Ok(());
        }
        self.errors.clear();
        for &eps in &self.cfg.epsilons {
            let grid = self.cfg.log_grid(eps)?;
            let load = |f: &str| {
                let path = self.out.join(dump_name("error", eps, f));
                if !path.exists() {
                    return Err(Error::Dependency(format!("{} not found; run the solve stage with write_dumps", path.display())));
                }
                load_field_on(&path, CoordKind::Log, grid.n_theta, &grid.s_values)
            };
            let (u, v, p) = (load("u")?, load("v")?, load("p")?);
            self.errors.push(ErrorField::from_fields(grid, u, v, p)?);
        }
        Ok(())
    }

    fn verify(&mut self) -> Result<()> {
        let fresh = self.approx.is_empty();
        self.approximations()?;
        if fresh {
            self.check_expand_table()?;
        }
        self.load_errors()?;
        let mut t = Table::new(&["epsilon", "check", "value", "threshold", "pass"]);
        let mut reports = Vec::new();
        for k in 0..self.approx.len() {
            let a = &self.approx[k];
            let e = &self.errors[k];
            let ns = reconstruct_full(a, e)?;
            let rep = verify_solution(a, e, &ns, self.cfg.vorticity_radius)?;
            for c in &rep.checks {
                t.push(vec![fmt_f64(a.eps), c.name.clone(), fmt_f64(c.value), fmt_f64(c.threshold), c.pass.to_string()]);
            }
            reports.push(rep);
        }
        self.write_table(&t, VERIFY_CSV)?;
        std::fs::write(self.out.join(VERIFY_JSON), serde_json::to_string_pretty(&reports)?)?;
        self.manifest.record(&self.out, VERIFY_JSON)?;
        let failed: Vec<String> =
            reports.iter().flat_map(|r| r.checks.iter().filter(|c| !c.pass).map(move |c| format!("{} at eps {}", c.name, r.epsilon))).collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("verification failed: {}", failed.join(", "))))
        }
    }

    fn converge(&mut self) -> Result<()> {
        let expand = Table::read(&self.out.join(EXPAND_CSV))?;
        let solve = Table::read(&self.out.join(SOLVE_CSV))?;
        let rows = convergence_rows(&expand, &solve)?;
        let mut t = Table::new(&["epsilon", "metric", "value"]);
        for r in &rows {
            t.push(vec![fmt_f64(r.epsilon), r.metric.clone(), fmt_f64(r.value)]);
        }
        self.write_table(&t, CONVERGENCE_CSV)?;
        if solve.rows.len() < self.cfg.epsilons.len() {
            return Err(Error::Dependency(format!(
                "only {} of {} solves converged; convergence table is partial",
                solve.rows.len(),
                self.cfg.epsilons.len()
            )));
        }
        let table = ConvergenceTable::new(rows)?;
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        let mut f = Table::new(&["metric", "points", "slope", "intercept", "exact_zero"]);
        for fit in &table.fits {
            f.push(vec![fit.metric.clone(), fit.points.to_string(), opt(fit.slope), opt(fit.intercept), fit.exact_zero.to_string()]);
        }
        self.write_table(&f, FITS_CSV)
    }

    fn inequalities(&mut self) -> Result<()> {
        let rep = inequality_suite(self.cfg.inequality_samples, self.cfg.seed);
        let mut t = Table::new(&["family", "samples", "violations", "worst_ratio", "constant"]);
        for (name, s) in [("wirtinger", rep.wirtinger), ("hardy_interval", rep.hardy_interval), ("hardy_half_line", rep.hardy_half_line)] {
            t.push(vec![name.into(), s.samples.to_string(), s.violations.to_string(), fmt_f64(s.worst_ratio), fmt_f64(s.constant)]);
        }
        t.push(vec!["wirtinger_k2".into(), "1".into(), "0".into(), fmt_f64(rep.wirtinger_k2_ratio), fmt_f64(1.0)]);
        self.write_table(&t, INEQUALITIES_CSV)?;
        if rep.violations() > 0 {
            return Err(Error::Validation(format!("{} inequality violations", rep.violations())));
        }
        Ok(())
    }
}

/// Convergence metrics per ε from the expand and solve tables.
pub fn convergence_rows(expand: &Table, solve: &Table) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::new();
    let metrics = [
        (METRIC_SUP_U, "sup_u_deviation"),
        (METRIC_SUP_V, "sup_v"),
        (METRIC_VORTICITY, "vorticity_deviation"),
    ];
    for (metric, col) in metrics {
        for j in 0..solve.rows.len() {
            rows.push(ConvergenceRow { epsilon: solve.f64_at(j, "epsilon")?, metric: metric.into(), value: solve.f64_at(j, col)? });
        }
    }
    for j in 0..expand.rows.len() {
        rows.push(ConvergenceRow {
            epsilon: expand.f64_at(j, "epsilon")?,
            metric: METRIC_RESIDUAL.into(),
            value: expand.f64_at(j, "residual_l2")?,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.into(), value, threshold, pass: value <= threshold }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub epsilon: f64,
    pub transport: TransportReport,
    pub weak_form: Vec<WeakFormReport>,
    pub sup_norm: SupNormReport,
    pub decomposition_roundtrip: f64,
    pub limit_relations: (f64, f64),
    /// sup and mean of ω over r ≤ rho, and the Couette level 2a
    pub vorticity_deviation: f64,
    pub vorticity_mean: f64,
    pub two_a: f64,
    pub checks: Vec<Check>,
}

/// Invariant suite for one solved ε.
pub fn verify_solution(approx: &ApproxSolution, error: &ErrorField, ns: &NSSolution, rho: f64) -> Result<VerifyReport> {
    let eps = approx.eps;
    let p = &approx.components.params;
    let transport = vorticity_transport_checks(approx, error)?;
    let weak_form =
        TestFunction::standard_set().iter().map(|phi| weak_form_check(ns, p, eps, phi)).collect::<Result<Vec<_>>>()?;
    let d = frequency_decompose(&error.u, &error.v)?;
    let (ur, vr) = d.reconstruct();
    let roundtrip = ur
        .data
        .iter()
        .zip(&error.u.data)
        .chain(vr.data.iter().zip(&error.v.data))
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let sup_norm = sup_norm_diagnostic(&d);
    let w = solution_vorticity(ns);
    let mut checks = vec![
        Check::at_most("zero_mode_transport", transport.zero_mode_residual, 1e-7),
        Check::at_most("vorticity_equation", transport.vorticity_residual, 1e-7),
        Check::at_most("decomposition_roundtrip", roundtrip, 1e-13),
        Check::at_most("remainder_leakage", d.remainder_leakage(), 1e-13),
        Check { name: "sup_norm_bound".into(), value: sup_norm.measured_u, threshold: sup_norm.constant * sup_norm.bound_u, pass: sup_norm.holds() },
    ];
    for wf in &weak_form {
        checks.push(Check::at_most(&format!("weak_form {}", wf.test_function), wf.residual, 1e-4));
    }
    let two_a = 2.0 * p.a;
    Ok(VerifyReport {
        epsilon: eps,
        transport,
        weak_form,
        sup_norm,
        decomposition_roundtrip: roundtrip,
        limit_relations: d.limit_relations(),
        vorticity_deviation: couette_vorticity_deviation(ns, rho),
        vorticity_mean: w.interior_mean(rho),
        two_a,
        checks,
    })
}

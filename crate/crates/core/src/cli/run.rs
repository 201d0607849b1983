//! Subcommand dispatch. Every run writes `report.json` (schema 1) plus CSV
//! tables and SVG plots; the exit status is 0 iff every asserted invariant
//! held, 1 on an invariant failure or runtime error, 2 on a rejected config.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{GateRecord, RunConfig};
use super::plot::{loglog_svg, Series};
use crate::bernstein::bochner::{refinement, weighted_bochner_residual};
use crate::bernstein::continuity::{continuity_tools, phi, y_star};
use crate::bernstein::inequalities::equality_cases;
use crate::bernstein::maxreg::q_threshold;
use crate::bernstein::{
    bochner_residual, boundary_sign_check, h_checks, level_sets, maxreg_params, pointwise_inequality_suite,
    BernsteinState, HFunction,
};
use crate::error::{Error, Result};
use crate::estimates::{cz_ratios, random_band_limited, sobolev_constant_estimate, thm1_sweep, thm2_sweep, ScalingReport};
use crate::fields::{gradient, lq_norm, lq_of_values, ScalarField};
use crate::geometry::{build_grid, second_fundamental_form, DomainKind, DomainSpec, Grid, MetricSpec};
use crate::hjb::{self, mms, NormExponents, ProblemSpec, SolverConfig};
use crate::mfg;
use crate::sources::{Mode, ScalarSource};

pub const SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Ergodic,
    BochnerCheck,
    BernsteinAudit,
    Thm1Sweep,
    Thm2Sweep,
    Constants,
    Mfg,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Solve,
        Command::Ergodic,
        Command::BochnerCheck,
        Command::BernsteinAudit,
        Command::Thm1Sweep,
        Command::Thm2Sweep,
        Command::Constants,
        Command::Mfg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Ergodic => "ergodic",
            Command::BochnerCheck => "bochner-check",
            Command::BernsteinAudit => "bernstein-audit",
            Command::Thm1Sweep => "thm1-sweep",
            Command::Thm2Sweep => "thm2-sweep",
            Command::Constants => "constants",
            Command::Mfg => "mfg",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown subcommand `{s}`")))
    }
}

/// Constants an asserted inequality may depend on. `None` where the run
/// does not involve the quantity.
#[derive(Clone, Debug, Default, Serialize)]
pub struct GateConstants {
    pub kappa: f64,
    pub rho: f64,
    pub sigma_hat: Option<f64>,
    pub theta: Option<f64>,
    pub s: Option<f64>,
    pub k: Option<f64>,
    pub c_v: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Invariant {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub relation: &'static str,
    pub bound: f64,
}

impl Invariant {
    fn le(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Invariant {
            name: name.into(),
            passed: value <= bound,
            value,
            relation: "<=",
            bound,
        }
    }

    fn ge(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Invariant {
            name: name.into(),
            passed: value >= bound,
            value,
            relation: ">=",
            bound,
        }
    }

    fn holds(name: impl Into<String>, ok: bool) -> Self {
        Invariant {
            name: name.into(),
            passed: ok,
            value: if ok { 1.0 } else { 0.0 },
            relation: "==",
            bound: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
    Error,
    Rejected,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: u32,
    pub command: Command,
    pub seed: u64,
    pub status: Status,
    pub failures: Vec<String>,
    pub gates: Vec<GateRecord>,
    pub constants: GateConstants,
    pub invariants: Vec<Invariant>,
    pub results: Value,
    pub artifacts: Vec<String>,
    pub config: RunConfig,
}

pub struct Outcome {
    pub exit_code: i32,
    pub report: Report,
}

struct Output {
    results: Value,
    invariants: Vec<Invariant>,
    constants: GateConstants,
    artifacts: Vec<(String, String)>,
}

impl Output {
    fn new(constants: GateConstants) -> Self {
        Output {
            results: Value::Null,
            invariants: vec![],
            constants,
            artifacts: vec![],
        }
    }
}

/// Runs `cmd`, writes all artifacts and `report.json` into `out_dir`.
pub fn execute(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(out_dir)?;
    let mut report = Report {
        schema: SCHEMA,
        command: cmd,
        seed: cfg.seed,
        status: Status::Ok,
        failures: vec![],
        gates: vec![],
        constants: GateConstants::default(),
        invariants: vec![],
        results: Value::Null,
        artifacts: vec![],
        config: cfg.clone(),
    };
    let outcome = cfg.validate().and_then(|gates| {
        report.gates = gates;
        dispatch(cmd, cfg)
    });
    let exit_code = match outcome {
        Ok(out) => {
            for (name, body) in &out.artifacts {
                std::fs::write(out_dir.join(name), body)?;
                report.artifacts.push(name.clone());
            }
            report.results = out.results;
            report.constants = out.constants;
            report.failures = out.invariants.iter().filter(|i| !i.passed).map(|i| i.name.clone()).collect();
            report.invariants = out.invariants;
            if report.failures.is_empty() {
                0
            } else {
                report.status = Status::Failed;
                1
            }
        }
        Err(e) => {
            report.failures.push(e.to_string());
            if matches!(e, Error::Gate { .. } | Error::Syntax { .. }) {
                report.status = Status::Rejected;
                2
            } else {
                report.status = Status::Error;
                1
            }
        }
    };
    write_report(&report, out_dir)?;
    Ok(Outcome { exit_code, report })
}

pub fn report_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn write_report(report: &Report, out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join("report.json");
    std::fs::write(&path, report_json(report))?;
    Ok(path)
}

fn dispatch(cmd: Command, cfg: &RunConfig) -> Result<Output> {
    match cmd {
        Command::Solve if cfg.problem.manufactured => manufactured(cfg),
        Command::Solve => solve(cfg, false),
        Command::Ergodic => solve(cfg, true),
        Command::BochnerCheck => bochner_check(cfg),
        Command::BernsteinAudit => bernstein_audit(cfg),
        Command::Thm1Sweep => sweep(cfg, true),
        Command::Thm2Sweep => sweep(cfg, false),
        Command::Constants => constants(cfg),
        Command::Mfg => run_mfg(cfg),
    }
}

fn sigma_hat(cfg: &RunConfig) -> Option<f64> {
    if cfg.domain.dim < 3 || cfg.domain.kind == DomainKind::Disc {
        return None;
    }
    let grid = build_grid(&cfg.domain_at(cfg.experiment.sobolev_resolution), &cfg.metric_spec()).ok()?;
    sobolev_constant_estimate(&grid, cfg.seed).ok().map(|e| e.sigma_hat)
}

fn base_constants(cfg: &RunConfig, grid: &Arc<Grid>) -> Result<GateConstants> {
    let (theta, s) = match cfg.drift_field(grid) {
        Some(b) => {
            let s = cfg.problem.drift_exponent;
            let norm = lq_of_values(grid, b.magnitude().values(), s)?;
            (Some(cfg.problem.theta.unwrap_or(norm)), Some(s))
        }
        None => (None, None),
    };
    Ok(GateConstants {
        kappa: grid.ricci_lower_bound(),
        rho: grid.volume(),
        sigma_hat: sigma_hat(cfg),
        theta,
        s,
        k: None,
        c_v: cfg.mfg.as_ref().map(|m| m.c_v),
    })
}

fn csv<T>(header: &str, rows: &[T], line: impl Fn(&T) -> String) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&line(r));
        s.push('\n');
    }
    s
}

fn field_csv(u: &ScalarField, name: &str) -> Result<String> {
    let mut buf = vec![];
    u.write_csv(&mut buf, name)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

fn manufactured(cfg: &RunConfig) -> Result<Output> {
    if cfg.domain.kind != DomainKind::Box {
        return Err(Error::InvalidParameter(
            "the manufactured study runs on the unit box".into(),
        ));
    }
    let res = cfg.experiment.resolutions.clone().unwrap_or_else(|| vec![17, 33, 65]);
    let grid = cfg.grid()?;
    let mut out = Output::new(base_constants(cfg, &grid)?);
    let study = mms::manufactured_study(cfg.domain.dim, &res, &SolverConfig::default())?;
    let min_order = cfg.experiment.min_order.unwrap_or(1.9);
    out.invariants.push(Invariant::holds(
        "all levels converged",
        study.levels.iter().all(|l| l.converged),
    ));
    out.invariants.push(Invariant::ge("observed L-infinity order", study.order, min_order));
    let levels: Vec<Value> = study
        .levels
        .iter()
        .map(|l| json!({"n": l.n, "h": l.h, "error_inf": l.error_inf, "iterations": l.iterations, "residual": l.residual, "converged": l.converged}))
        .collect();
    out.results = json!({
        "exact": "cos(pi x1) cos(pi x2) cos(pi x3)",
        "gamma": 2.0,
        "levels": levels,
        "pairwise_orders": study.pairwise_orders,
        "order": study.order,
    });
    out.artifacts.push((
        "convergence.csv".into(),
        csv("n,h,error_inf,iterations,residual,converged", &study.levels, |l| {
            format!("{},{:e},{:e},{},{:e},{}", l.n, l.h, l.error_inf, l.iterations, l.residual, l.converged)
        }),
    ));
    if cfg.output.svg {
        let pts = study.levels.iter().map(|l| (l.h, l.error_inf)).collect();
        out.artifacts.push((
            "convergence.svg".into(),
            loglog_svg("manufactured solution", "h", "max error", &[Series { label: "error", points: pts }]),
        ));
    }
    Ok(out)
}

fn solve(cfg: &RunConfig, ergodic: bool) -> Result<Output> {
    let grid = cfg.grid()?;
    let mut out = Output::new(base_constants(cfg, &grid)?);
    let f = ScalarField::from_source(&grid, &cfg.problem.f);
    let mut prob = ProblemSpec::new(&grid, cfg.problem.gamma)
        .with_f(f.clone())
        .with_b(ScalarField::from_source(&grid, &cfg.problem.b));
    if let Some(b) = cfg.drift_field(&grid) {
        prob = prob.with_drift(b);
    }
    let scfg = SolverConfig {
        norms: NormExponents {
            gradient: vec![1.0, 2.0, f64::INFINITY],
            second_order: vec![2.0],
        },
        ..SolverConfig::default()
    };
    let rep = if ergodic {
        hjb::solve_ergodic(&prob.ergodic(), &scfg)?
    } else {
        hjb::solve(&prob, &scfg)?
    };
    let abs_f: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    let f_l1 = lq_of_values(&grid, &abs_f, 1.0)?;
    let grad_l1 = lq_norm(&gradient(&rep.u), 1.0)?.value;
    out.constants.k = Some(f_l1 + grad_l1);
    out.invariants.push(Invariant::holds("Newton converged", rep.converged));
    if let Some(l) = rep.lambda {
        out.invariants.push(Invariant::holds("ergodic constant finite", l.is_finite()));
    }
    out.results = json!({
        "converged": rep.converged,
        "iterations": rep.iterations,
        "residual": rep.residual,
        "residual_history": rep.residual_history,
        "lambda": rep.lambda,
        "multiplier": rep.multiplier,
        "eps_reg": rep.eps_reg,
        "picard_used": rep.picard_used,
        "norms": rep.norms,
        "mean_u": rep.u.mean(),
    });
    out.artifacts.push((
        "norms.csv".into(),
        csv("quantity,q,value", &rep.norms, |e| format!("{},{},{:e}", e.quantity, e.q, e.value)),
    ));
    if cfg.output.fields {
        out.artifacts.push(("u.csv".into(), field_csv(&rep.u, "u")?));
    }
    if cfg.output.svg {
        let pts = rep
            .residual_history
            .iter()
            .enumerate()
            .map(|(i, r)| ((i + 1) as f64, *r))
            .collect();
        out.artifacts.push((
            "residual.svg".into(),
            loglog_svg("Newton residual", "iteration", "residual", &[Series { label: "max residual", points: pts }]),
        ));
    }
    Ok(out)
}

/// Maximum over nodes at least two cells away from every boundary face.
fn interior_max_abs(f: &ScalarField) -> f64 {
    let g = f.grid();
    (0..g.len())
        .filter(|&n| {
            let ijk = g.multi_index(n);
            (0..g.dim).all(|a| g.periodic[a] || (ijk[a] >= 2 && ijk[a] + 2 < g.shape[a]))
        })
        .map(|n| f.values()[n].abs())
        .fold(0.0, f64::max)
}

fn default_test_function(kind: DomainKind, dim: usize) -> ScalarSource {
    match kind {
        DomainKind::Box => ScalarSource::cosine_product(dim),
        _ => ScalarSource::Modes {
            terms: vec![Mode::cos(1.0, [1.0, 1.0, 0.0]), Mode::sin(0.5, [0.0, 1.0, 1.0])],
        },
    }
}

fn bochner_check(cfg: &RunConfig) -> Result<Output> {
    let grid = cfg.grid()?;
    let mut out = Output::new(base_constants(cfg, &grid)?);
    let delta = cfg.experiment.delta;
    if grid.kind == DomainKind::Disc {
        let u = ScalarField::from_fn(&grid, |x| (3.0 * x[0] * x[0] - 2.0 * x[0].powi(3)) * x[1].cos());
        let rep = boundary_sign_check(&u, 1e-2)?;
        let dev = rep
            .nodes
            .iter()
            .zip(&rep.dnu_w)
            .map(|(&n, v)| (v + grid.coord(n)[1].sin().powi(2)).abs())
            .fold(0.0, f64::max);
        out.invariants.push(Invariant::le("max |d_nu w + sin^2(theta)| on the circle", dev, 5e-2));
        out.invariants.push(Invariant::le("max d_nu w + II(grad u, grad u) discrepancy", rep.max_discrepancy, 5e-2));
        out.results = json!({
            "test_function": "(3r^2 - 2r^3) cos(theta)",
            "n_r": grid.shape[0],
            "n_theta": grid.shape[1],
            "max_dev_from_closed_form": dev,
            "max_discrepancy": rep.max_discrepancy,
            "max_dnu_w": rep.max_dnu_w,
            "flagged": rep.flagged.len(),
        });
        out.artifacts.push((
            "boundary.csv".into(),
            csv("node,theta,dnu_w,minus_ii", &(0..rep.nodes.len()).collect::<Vec<_>>(), |&k| {
                let n = rep.nodes[k];
                format!("{},{:e},{:e},{:e}", n, grid.coord(n)[1], rep.dnu_w[k], rep.minus_ii[k])
            }),
        ));
        return Ok(out);
    }

    let src = cfg
        .experiment
        .test_function
        .clone()
        .unwrap_or_else(|| default_test_function(grid.kind, grid.dim));
    let res = cfg.experiment.resolutions.clone().unwrap_or_else(|| match grid.kind {
        DomainKind::Box => vec![17, 33, 65],
        _ => vec![32, 64, 128],
    });
    let metric = cfg.metric_spec();
    let field = |n: usize| -> Result<ScalarField> {
        let g = Arc::new(build_grid(&cfg.domain_at(n), &metric)?);
        Ok(ScalarField::from_source(&g, &src))
    };
    let plain = refinement(&res, |n| Ok(interior_max_abs(&bochner_residual(&field(n)?))))?;
    let weighted = refinement(&res, |n| Ok(interior_max_abs(&weighted_bochner_residual(&field(n)?, delta)?)))?;
    let min_order = cfg
        .experiment
        .min_order
        .unwrap_or(if metric.is_conformal() { 0.9 } else { 1.5 });
    out.invariants.push(Invariant::ge("bw1 refinement order", plain.order, min_order));
    out.invariants.push(Invariant::ge("bw2 refinement order", weighted.order, min_order));

    // exactness on quadratics (flat charts only)
    let exact = if !metric.is_conformal() {
        let g = Arc::new(build_grid(&DomainSpec::unit_box(grid.dim, 16), &MetricSpec::Euclidean)?);
        let quad = ScalarField::from_fn(&g, |x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        let lin = ScalarField::from_fn(&g, |x| 1.0 + x[0] - 2.0 * x[1] + 0.5 * x[2]);
        let worst = [
            interior_max_abs(&bochner_residual(&lin)),
            interior_max_abs(&bochner_residual(&quad)),
            interior_max_abs(&weighted_bochner_residual(&lin, delta)?),
            interior_max_abs(&weighted_bochner_residual(&quad, delta)?),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        out.invariants.push(Invariant::le("bw1/bw2 residual on linear and quadratic u", worst, 1e-12));
        Some(worst)
    } else {
        None
    };

    let boundary = if grid.has_boundary() {
        let n = *res.last().expect("nonempty ladder");
        let u = field(n)?;
        let rep = boundary_sign_check(&u, 1e-2)?;
        let h = u.grid().spacing[0];
        out.invariants.push(Invariant::le("max d_nu w on box faces", rep.max_dnu_w, 5.0 * h * h));
        Some(json!({"n": n, "h": h, "max_dnu_w": rep.max_dnu_w, "bound": 5.0 * h * h}))
    } else {
        None
    };

    out.results = json!({
        "test_function": src,
        "delta": delta,
        "bw1": plain,
        "bw2": weighted,
        "exact_polynomial_residual": exact,
        "boundary": boundary,
    });
    out.artifacts.push((
        "bochner_refinement.csv".into(),
        csv("n,h,bw1_error,bw2_error", &(0..res.len()).collect::<Vec<_>>(), |&i| {
            format!("{},{:e},{:e},{:e}", res[i], plain.spacings[i], plain.errors[i], weighted.errors[i])
        }),
    ));
    if cfg.output.svg {
        let s = |e: &[f64]| plain.spacings.iter().copied().zip(e.iter().copied()).collect();
        out.artifacts.push((
            "bochner_refinement.svg".into(),
            loglog_svg(
                "Bochner residual refinement",
                "h",
                "max residual",
                &[
                    Series { label: "bw1", points: s(&plain.errors) },
                    Series { label: "bw2", points: s(&weighted.errors) },
                ],
            ),
        ));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
struct AuditEntry {
    name: String,
    samples: usize,
    violations: usize,
    max_violation: f64,
}

impl AuditEntry {
    fn new(name: impl Into<String>) -> Self {
        AuditEntry {
            name: name.into(),
            samples: 0,
            violations: 0,
            max_violation: 0.0,
        }
    }

    /// Records a nonnegative violation magnitude.
    fn record(&mut self, v: f64) {
        self.samples += 1;
        self.max_violation = self.max_violation.max(v);
        if !(v <= AUDIT_TOL) {
            self.violations += 1;
        }
    }
}

const AUDIT_TOL: f64 = 1e-12;

fn bernstein_audit(cfg: &RunConfig) -> Result<Output> {
    let grid = cfg.grid()?;
    let mut out = Output::new(base_constants(cfg, &grid)?);
    let gamma = cfg.problem.gamma;
    let delta = cfg.experiment.delta;
    let mut entries = vec![];

    let suite = pointwise_inequality_suite(cfg.seed, cfg.experiment.samples);
    for r in &suite.results {
        entries.push(AuditEntry {
            name: r.name.to_string(),
            samples: r.samples,
            violations: r.violations,
            max_violation: r.max_violation,
        });
    }
    let mut eq = AuditEntry::new("equality cases are tight");
    for (_, lhs, rhs) in equality_cases() {
        eq.record((lhs - rhs).abs());
    }
    entries.push(eq);
    for c in h_checks(&HFunction::new(delta)?, 1000) {
        entries.push(AuditEntry {
            name: format!("profile, delta = {delta}: {}", c.name),
            samples: c.samples,
            violations: c.violations,
            max_violation: c.max_violation.max(0.0),
        });
    }

    // continuity-argument functions
    let mut closed = AuditEntry::new("y*, phi* closed forms, d = 3..10");
    let mut roots = AuditEntry::new("phi(y-) = phi(y+) = zeta_bar at bisection roots");
    let mut t_stars = vec![];
    for d in 3..=10usize {
        let df = d as f64;
        let ys = y_star(d);
        // φ′(y*) = 0 and φ* = (2/d)((d−2)/d)^{(d−2)/2}
        closed.record(((df - 2.0) / df * ys.powf(-2.0 / df) - 1.0).abs());
        closed.record((phi(d, ys) - 2.0 / df * ((df - 2.0) / df).powf((df - 2.0) / 2.0)).abs());
        let tools = continuity_tools(d, q_threshold(d, gamma) + 1.0, gamma, 1e-3, cfg.experiment.c)?;
        for frac in [0.1, 0.5, 0.9] {
            let z = frac * tools.phi_star;
            let (lo, hi) = tools.roots(z)?;
            roots.record((tools.phi(lo) - z).abs().max((tools.phi(hi) - z).abs()));
        }
        t_stars.push(json!({"d": d, "y_star": ys, "phi_star": tools.phi_star, "t_star": tools.t_star}));
    }
    entries.push(closed);
    entries.push(roots);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bo1 = AuditEntry::new("bo1 exponent identity, 100 random admissible sets");
    let mut bo2 = AuditEntry::new("bo2 exponent identity (strict after substitution)");
    for _ in 0..100 {
        let d = rng.gen_range(3..=10usize);
        let g = rng.gen_range(1.1..6.0);
        let q = q_threshold(d, g) + rng.gen_range(0.01..5.0);
        let dl = rng.gen_range(0.01..0.99);
        let p = maxreg_params(d, g, q, dl)?;
        bo1.record(p.bo1_defect.abs() / p.eta.abs().max(1.0));
        bo2.record(if p.p_substituted {
            if p.bo2_defect > 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            p.bo2_defect.abs() / (p.gamma * p.q).max(1.0)
        });
    }
    entries.push(bo1);
    entries.push(bo2);

    // Chebyshev bound and monotone y_k on a fixed small 3-torus
    let cheb_grid = Arc::new(build_grid(&DomainSpec::unit_torus(3, 12), &MetricSpec::Euclidean)?);
    let params = maxreg_params(3, gamma, q_threshold(3, gamma) + 0.5, delta)?;
    let mut cheb = AuditEntry::new("Chebyshev bound |{z > k}| on 20 thresholds x 10 fields");
    let mut mono = AuditEntry::new("y_k nonincreasing in k");
    for _ in 0..10 {
        let u = random_band_limited(&cheb_grid, &mut rng, 3);
        let z = BernsteinState::new(&u, delta)?.z;
        let zmax = z.max();
        let mut prev = f64::INFINITY;
        for j in 0..20 {
            let ls = level_sets(&z, zmax * j as f64 / 20.0, &params)?;
            cheb.record(((ls.volume - ls.chebyshev_bound) / ls.chebyshev_bound.max(1.0)).max(0.0));
            mono.record(((ls.y_k - prev) / prev.max(1.0)).max(0.0));
            prev = ls.y_k;
        }
    }
    entries.push(cheb);
    entries.push(mono);

    for e in &entries {
        let mut inv = Invariant::le(e.name.clone(), e.max_violation, AUDIT_TOL);
        inv.passed &= e.violations == 0;
        out.invariants.push(inv);
    }
    out.results = json!({
        "seed": cfg.seed,
        "samples_per_check": cfg.experiment.samples,
        "slack": AUDIT_TOL,
        "checks": entries,
        "continuity": t_stars,
    });
    out.artifacts.push((
        "audit.csv".into(),
        csv("name,samples,violations,max_violation", &entries, |e| {
            format!("\"{}\",{},{},{:e}", e.name.replace('"', "'"), e.samples, e.violations, e.max_violation)
        }),
    ));
    Ok(out)
}

fn sweep(cfg: &RunConfig, first: bool) -> Result<Output> {
    let mut spec = cfg.sweep_spec(if first { 2.0 } else { 2.5 });
    if spec.base == ScalarSource::Zero {
        spec.base = ScalarSource::cos_mode(1.0, [1.0, 0.0, 0.0]);
    }
    let rep: ScalingReport = if first { thm1_sweep(&spec)? } else { thm2_sweep(&spec)? };
    let g = &rep.gates;
    let mut out = Output::new(GateConstants {
        kappa: g.kappa,
        rho: g.rho,
        sigma_hat: Some(g.sigma_hat),
        theta: Some(g.theta),
        s: Some(g.s),
        k: Some(g.k),
        c_v: None,
    });
    out.invariants.push(Invariant::holds("every amplitude converged", rep.aborted_at.is_none()));
    out.invariants.push(Invariant::le(
        "log-log slope over the top decade",
        rep.top_decade_slope,
        rep.slope_threshold,
    ));
    let name = rep.experiment;
    let mut table = vec![];
    rep.write_csv(&mut table)?;
    out.artifacts.push((format!("{name}_sweep.csv"), String::from_utf8(table).map_err(|e| Error::Io(e.to_string()))?));
    if cfg.output.svg {
        let pts = rep.rows.iter().map(|r| (r.t, r.ratio)).collect();
        let label = if first { "||grad u||_r / (1 + ||f||_q)" } else { "M_t" };
        out.artifacts.push((
            format!("{name}_sweep.svg"),
            loglog_svg(&format!("{name} scaling"), "t", "ratio", &[Series { label, points: pts }]),
        ));
    }
    out.results = serde_json::to_value(&rep).map_err(|e| Error::Io(e.to_string()))?;
    Ok(out)
}

fn constants(cfg: &RunConfig) -> Result<Output> {
    let grid = cfg.grid()?;
    let mut out = Output::new(base_constants(cfg, &grid)?);
    let kappa_raw = grid.ricci_lower_bound_unnormalized();
    let mut results = serde_json::Map::new();
    results.insert("kappa".into(), json!(out.constants.kappa));
    results.insert("kappa_unnormalized".into(), json!(kappa_raw));
    results.insert("volume".into(), json!(out.constants.rho));
    out.invariants.push(Invariant::holds("kappa finite", out.constants.kappa.is_finite()));

    if let Some(s) = out.constants.sigma_hat {
        out.invariants.push(Invariant::holds("sigma_hat finite and positive", s.is_finite() && s > 0.0));
        let coarse = build_grid(&cfg.domain_at(cfg.experiment.sobolev_resolution), &cfg.metric_spec())?;
        let est = sobolev_constant_estimate(&coarse, cfg.seed)?;
        results.insert("sobolev".into(), json!(est));
    }

    if grid.has_boundary() {
        let sff = second_fundamental_form(&grid)?;
        let min_eig = sff
            .values
            .iter()
            .map(|m| {
                let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
                let mean = 0.5 * (a + c);
                mean - (0.25 * (a - c).powi(2) + b * b).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        out.invariants.push(Invariant::holds("second fundamental form nonnegative", sff.nonnegative));
        results.insert("second_fundamental_form".into(), json!({"nodes": sff.nodes.len(), "min_eigenvalue": min_eig, "nonnegative": sff.nonnegative}));
    }

    if matches!(grid.kind, DomainKind::Torus | DomainKind::ConformalTorus) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let samples: Vec<ScalarField> = (0..cfg.experiment.cz_samples)
            .map(|_| random_band_limited(&grid, &mut rng, cfg.experiment.cz_kmax))
            .collect();
        let mut cz = vec![];
        let mut rows = vec![];
        for &p in &cfg.experiment.cz_exponents {
            let ratios = cz_ratios(&samples, p)?;
            let vals: Vec<f64> = ratios.iter().flatten().copied().collect();
            let max = vals.iter().copied().fold(f64::NAN, f64::max);
            let min = vals.iter().copied().fold(f64::NAN, f64::min);
            if p == 2.0 && grid.kind == DomainKind::Torus {
                out.invariants.push(Invariant::le("|CZ ratio - 1| at p = 2 (flat torus)", (max - 1.0).abs().max((min - 1.0).abs()), 1e-6));
            } else {
                out.invariants.push(Invariant::holds(format!("CZ ratio finite at p = {p}"), max.is_finite()));
            }
            for (i, r) in ratios.iter().enumerate() {
                rows.push((p, i, *r));
            }
            cz.push(json!({"p": p, "max": max, "min": min, "harmonic_samples": ratios.iter().filter(|r| r.is_none()).count()}));
        }
        results.insert("cz".into(), json!({"samples": samples.len(), "kmax": cfg.experiment.cz_kmax, "ratios": cz}));
        out.artifacts.push((
            "cz.csv".into(),
            csv("p,sample,ratio", &rows, |(p, i, r)| match r {
                Some(r) => format!("{p},{i},{r:e}"),
                None => format!("{p},{i},"),
            }),
        ));
    }
    out.results = Value::Object(results);
    Ok(out)
}

fn run_mfg(cfg: &RunConfig) -> Result<Output> {
    let spec = cfg
        .mfg_spec()
        .ok_or_else(|| Error::InvalidParameter("the mfg subcommand needs an [mfg] section".into()))?;
    let grid = cfg.grid()?;
    let mut out = Output::new(base_constants(cfg, &grid)?);
    let (state, rep) = mfg::run(&spec)?;
    out.invariants.push(Invariant::holds("fixed point converged", rep.converged));
    out.invariants.push(Invariant::le("outer residual", rep.outer_residual, 1e-8));
    out.invariants.push(Invariant::le("|mass - 1|", (rep.mass - 1.0).abs(), 1e-10));
    out.invariants.push(Invariant::ge("min m", rep.min_m, f64::MIN_POSITIVE));
    if let Some(d) = &rep.duality {
        out.invariants.push(Invariant::ge("duality margin ||D2 b||_inf - int V'(m)|grad m|^2", d.margin, -1e-6));
    }
    if let Some(lp) = &rep.lp_bound {
        out.invariants.push(Invariant::holds("energy bound C_V ||D2 b||_inf", lp.holds));
        out.constants.sigma_hat = Some(lp.sigma_hat);
    }
    if cfg.output.fields {
        out.artifacts.push(("m.csv".into(), field_csv(&state.m, "m")?));
        out.artifacts.push(("u.csv".into(), field_csv(&state.u, "u")?));
    }
    out.artifacts.push((
        "mfg_history.csv".into(),
        csv("iteration,epsilon,tau,change,lambda,mass,min_m,newton_iterations", &rep.history, |h| {
            format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                h.iteration, h.epsilon, h.tau, h.change, h.lambda, h.mass, h.min_m, h.newton_iterations
            )
        }),
    ));
    if cfg.output.svg {
        let pts = rep.history.iter().map(|h| (h.iteration as f64, h.change)).collect();
        out.artifacts.push((
            "mfg_history.svg".into(),
            loglog_svg("fixed-point change", "iteration", "change", &[Series { label: "max |m_new - m|", points: pts }]),
        ));
    }
    out.results = serde_json::to_value(&rep).map_err(|e| Error::Io(e.to_string()))?;
    Ok(out)
}

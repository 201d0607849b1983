//! Stationary Mean Field Games system with local coupling `V(m) = m^α`:
//!
//! ```text
//! −Δu + |∇u|^γ/γ − b + λ = V_ε(m)        V_ε = V(m ⋆ χ_ε) ⋆ χ_ε
//! −Δm − div(∂_pH(∇u) m) = 0,            ∫m = 1, m > 0
//! ```
//!
//! with Neumann/no-flux conditions on boxes or periodic ones on tori. The
//! Fokker–Planck operator is the algebraic adjoint of the linearized HJB
//! transport under the quadrature inner product, so the discrete system
//! keeps the duality structure the a priori estimates rest on.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimates::sobolev_constant_estimate;
use crate::fields::{gradient, hessian, laplace_beltrami, lq_of_values, metric_dot, tensor_norm_sq, ScalarField};
use crate::geometry::{build_grid, DomainKind, DomainSpec, Grid, MetricSpec};
use crate::hjb::{self, ProblemSpec, SolverConfig};
use crate::linalg::{Bordered, Csr};
use crate::sources::ScalarSource;

/// Whether a failed standing assumption aborts the run or is only recorded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatePolicy {
    #[default]
    Enforce,
    Record,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfgSpec {
    pub domain: DomainSpec,
    pub gamma: f64,
    pub alpha: f64,
    #[serde(default = "default_cv")]
    pub c_v: f64,
    #[serde(default)]
    pub b: ScalarSource,
    pub epsilon: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Start from `ε = 0.1` and halve toward the target.
    #[serde(default = "yes")]
    pub continuation: bool,
    #[serde(default)]
    pub gate_policy: GatePolicy,
}

fn default_cv() -> f64 {
    2.0
}
fn default_tau() -> f64 {
    0.5
}
fn default_max_outer() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-10
}
fn yes() -> bool {
    true
}

impl MfgSpec {
    pub fn new(domain: DomainSpec, gamma: f64, alpha: f64, epsilon: f64) -> Self {
        MfgSpec {
            domain,
            gamma,
            alpha,
            c_v: default_cv(),
            b: ScalarSource::Zero,
            epsilon,
            tau: default_tau(),
            max_outer: default_max_outer(),
            tol: default_tol(),
            continuation: true,
            gate_policy: GatePolicy::Enforce,
        }
    }

    pub fn with_b(mut self, b: ScalarSource) -> Self {
        self.b = b;
        self
    }

    pub fn coupling(&self, m: f64) -> f64 {
        m.max(0.0).powf(self.alpha)
    }

    pub fn coupling_derivative(&self, m: f64) -> f64 {
        self.alpha * m.max(0.0).powf(self.alpha - 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentGate {
    pub d: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub gamma_conj: f64,
    /// `d/(d−2)`; `γ` must exceed it strictly.
    pub gamma_threshold: f64,
    pub gamma_ok: bool,
    /// `γ′/(d−2−γ′)`, or `+∞` for `d = 3` and whenever `d−2−γ′ ≤ 0`.
    #[serde(serialize_with = "ser_inf")]
    pub alpha_threshold: f64,
    pub alpha_ok: bool,
    pub pass: bool,
}

fn ser_inf<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

pub fn exponent_gate(d: usize, gamma: f64, alpha: f64) -> Result<ExponentGate> {
    if !(gamma > 1.0) {
        return Err(Error::Gate {
            assumption: "(In1)".into(),
            message: format!("gamma > 1 required, got {gamma}"),
        });
    }
    if d < 3 {
        return Err(Error::InvalidParameter(format!("dimension must be at least 3, got {d}")));
    }
    let df = d as f64;
    let gc = gamma / (gamma - 1.0);
    let gamma_threshold = df / (df - 2.0);
    let denom = df - 2.0 - gc;
    let alpha_threshold = if d == 3 || denom <= 0.0 { f64::INFINITY } else { gc / denom };
    let gamma_ok = gamma > gamma_threshold;
    let alpha_ok = alpha < alpha_threshold;
    Ok(ExponentGate {
        d,
        gamma,
        alpha,
        gamma_conj: gc,
        gamma_threshold,
        gamma_ok,
        alpha_threshold,
        alpha_ok,
        pass: gamma_ok && alpha_ok,
    })
}

/// `(1 − r²/ε²)²` on `r < ε`.
fn kernel(r2: f64, eps: f64) -> f64 {
    let t = 1.0 - r2 / (eps * eps);
    if t > 0.0 {
        t * t
    } else {
        0.0
    }
}

/// Discrete convolution with the normalized polynomial bump of radius `ε`.
/// On boxes the kernel is clipped to the domain and renormalized per node.
pub fn mollify(m: &ScalarField, eps: f64) -> Result<ScalarField> {
    let grid = m.grid();
    check_euclidean(grid)?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("mollifier width must be nonnegative, got {eps}")));
    }
    let half = (0..grid.dim).map(|a| grid.extents[a]).fold(f64::INFINITY, f64::min) / 2.0;
    if eps > half {
        return Err(Error::InvalidParameter(format!(
            "mollifier width {eps} exceeds half the domain width {half}"
        )));
    }
    if eps == 0.0 {
        return Ok(m.clone());
    }
    let d = grid.dim;
    let reach: Vec<i64> = (0..3)
        .map(|a| if a < d { (eps / grid.spacing[a]).floor() as i64 } else { 0 })
        .collect();
    let mut offsets = vec![];
    for k in -reach[2]..=reach[2] {
        for j in -reach[1]..=reach[1] {
            for i in -reach[0]..=reach[0] {
                let o = [i, j, k];
                let r2: f64 = (0..d).map(|a| (o[a] as f64 * grid.spacing[a]).powi(2)).sum();
                let kv = kernel(r2, eps);
                if kv > 0.0 {
                    offsets.push((o, kv));
                }
            }
        }
    }
    let w = grid.weights();
    let vals = m.values();
    let out = (0..grid.len())
        .map(|n| {
            let ijk = grid.multi_index(n);
            let (mut num, mut den) = (0.0, 0.0);
            for (o, kv) in &offsets {
                let mut idx = [0usize; 3];
                let mut inside = true;
                for a in 0..3 {
                    let s = grid.shape[a] as i64;
                    let c = ijk[a] as i64 + o[a];
                    if grid.periodic[a] {
                        idx[a] = c.rem_euclid(s) as usize;
                    } else if c < 0 || c >= s {
                        inside = false;
                        break;
                    } else {
                        idx[a] = c as usize;
                    }
                }
                if inside {
                    let q = grid.index(idx);
                    num += kv * w[q] * vals[q];
                    den += kv * w[q];
                }
            }
            num / den
        })
        .collect();
    ScalarField::new(grid.clone(), out)
}

/// `V_ε = V(m ⋆ χ_ε) ⋆ χ_ε` for `V(m) = m^α`.
pub fn mollify_coupling(m: &ScalarField, eps: f64, alpha: f64) -> Result<ScalarField> {
    let inner = mollify(m, eps)?;
    mollify(&inner.map(|v| v.max(0.0).powf(alpha)), eps)
}

fn check_euclidean(grid: &Grid) -> Result<()> {
    if grid.metric.is_conformal() || !matches!(grid.kind, DomainKind::Box | DomainKind::Torus) {
        return Err(Error::Unsupported(
            "the MFG system is posed on flat boxes and tori only".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct FpInfo {
    /// Largest off-diagonal entry of the operator (must be ≤ 0).
    pub max_offdiag: f64,
    pub m_matrix: bool,
    /// `max_i |Σ_j L_ij|`: zero row sums of the HJB linearization are what
    /// make the adjoint conserve mass.
    pub row_sum_defect: f64,
    pub multiplier: f64,
    pub linear_iterations: usize,
    pub linear_residual: f64,
}

fn hjb_problem(grid: &Arc<Grid>, gamma: f64) -> ProblemSpec {
    ProblemSpec::new(grid, gamma).ergodic()
}

/// Solves the Fokker–Planck equation for the drift `∂_pH(∇u)`.
pub fn fp_solve(u: &ScalarField, gamma: f64) -> Result<(ScalarField, FpInfo)> {
    fp_solve_from(u, gamma, None)
}

fn fp_solve_from(u: &ScalarField, gamma: f64, guess: Option<&ScalarField>) -> Result<(ScalarField, FpInfo)> {
    let grid = u.grid().clone();
    check_euclidean(&grid)?;
    let l = hjb::linearization(u, &hjb_problem(&grid, gamma), &SolverConfig::default())?;
    let (max_offdiag, row_sum_defect) = m_matrix_stats(&l);
    let scale = l.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let m_matrix = max_offdiag <= 1e-13 * scale;
    if !m_matrix {
        return Err(Error::Singular(format!(
            "Fokker-Planck operator is not an M-matrix (largest off-diagonal {max_offdiag:e}); drift too strong for the resolution"
        )));
    }
    // L* = W⁻¹LᵀW: solve Lᵀρ = 0, Σρ = 1 for ρ = W m.
    let lt = l.transpose();
    let w = grid.weights();
    let ones = vec![1.0; grid.len()];
    let zero = vec![0.0; grid.len()];
    let rho0: Vec<f64> = match guess {
        Some(g) => g.values().iter().zip(w).map(|(m, w)| m * w).collect(),
        None => w.iter().map(|w| w / grid.volume()).collect(),
    };
    let (rho, mu, info) = Bordered {
        a: &lt,
        c: &ones,
        d: &ones,
    }
    .solve(&zero, 1.0, Some(&rho0), 1e-13, 1e-16)?;
    // Krylov stagnation near round-off is not a failure.
    if !info.converged && !(info.residual < 1e-10) {
        return Err(Error::Singular(format!(
            "Fokker-Planck solve stalled at residual {:e}",
            info.residual
        )));
    }
    let m: Vec<f64> = rho.iter().zip(w).map(|(r, w)| r / w).collect();
    let mass: f64 = rho.iter().sum();
    let m: Vec<f64> = m.iter().map(|v| v / mass).collect();
    Ok((
        ScalarField::new(grid, m)?,
        FpInfo {
            max_offdiag,
            m_matrix,
            row_sum_defect,
            multiplier: mu,
            linear_iterations: info.iterations,
            linear_residual: info.residual,
        },
    ))
}

fn m_matrix_stats(l: &Csr) -> (f64, f64) {
    let mut max_off = f64::NEG_INFINITY;
    let mut defect = 0.0f64;
    for i in 0..l.n {
        let mut s = 0.0;
        for (j, v) in l.row(i) {
            s += v;
            if j != i {
                max_off = max_off.max(v);
            }
        }
        defect = defect.max(s.abs());
    }
    (max_off, defect)
}

/// `‖W⁻¹Lᵀ W m‖_∞`: the Fokker–Planck residual of `m` for the drift of `u`.
pub fn fp_residual(u: &ScalarField, m: &ScalarField, gamma: f64) -> Result<f64> {
    let grid = u.grid();
    let l = hjb::linearization(u, &hjb_problem(grid, gamma), &SolverConfig::default())?;
    let w = grid.weights();
    let rho: Vec<f64> = m.values().iter().zip(w).map(|(m, w)| m * w).collect();
    let mut out = vec![0.0; grid.len()];
    l.transpose().matvec(&rho, &mut out);
    Ok(out.iter().zip(w).map(|(r, w)| (r / w).abs()).fold(0.0, f64::max))
}

#[derive(Clone, Debug)]
pub struct MfgState {
    pub u: ScalarField,
    pub lambda: f64,
    pub m: ScalarField,
}

#[derive(Clone, Debug, Serialize)]
pub struct OuterStep {
    pub iteration: usize,
    pub epsilon: f64,
    pub tau: f64,
    /// `max(‖Δu‖_∞, |Δλ|, ‖Δm‖_∞)` between successive iterates.
    pub change: f64,
    pub lambda: f64,
    pub mass: f64,
    pub min_m: f64,
    pub newton_iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    /// `−∫Tr(∂²_ppH (D²u)²) m + (1/γ)∫_∂Ω m ∂_ν|∇u|^γ`.
    pub lhs: f64,
    /// `∫∇V_ε·∇m + ∫∇b·∇m`.
    pub rhs: f64,
    pub residual: f64,
    /// `∫V′(m_ε)|∇m_ε|²`.
    pub chain_value: f64,
    pub d2b_inf: f64,
    /// `‖D²b‖_∞ − chain_value`; must not be negative.
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LpBoundReport {
    /// `d(α+1)/(d−2)`.
    pub exponent: f64,
    pub norm: f64,
    /// `∫|∇(m_ε^{(α+1)/2})|²`.
    pub energy: f64,
    pub d2b_inf: f64,
    pub c_v: f64,
    pub bound: f64,
    pub holds: bool,
    pub sigma_hat: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MfgReport {
    pub converged: bool,
    pub outer_iterations: usize,
    pub lambda: f64,
    /// `max(‖HJB residual‖_∞, ‖FP residual‖_∞)` at the returned state.
    pub outer_residual: f64,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub mass: f64,
    pub min_m: f64,
    pub gate: ExponentGate,
    pub gate_policy: GatePolicy,
    pub c_v: f64,
    pub mfg2_min_dnu_b: Option<f64>,
    pub fp: Option<FpInfo>,
    pub history: Vec<OuterStep>,
    pub duality: Option<DualityReport>,
    pub lp_bound: Option<LpBoundReport>,
}

/// (MFG1) and (MFG3), which depend only on the exponents and `d`.
pub fn standing_gates(spec: &MfgSpec, d: usize) -> Result<ExponentGate> {
    if !(spec.alpha > 0.0) {
        return Err(Error::Gate {
            assumption: "(MFG1)".into(),
            message: format!("alpha > 0 required, got {}", spec.alpha),
        });
    }
    let need = spec.alpha.max(1.0 / spec.alpha);
    if !(spec.c_v > 1.0 && spec.c_v >= need) {
        return Err(Error::Gate {
            assumption: "(MFG1)".into(),
            message: format!("C_V = {} must exceed 1 and be at least max(alpha, 1/alpha) = {need}", spec.c_v),
        });
    }
    if !(spec.tau > 0.0 && spec.tau <= 1.0) {
        return Err(Error::InvalidParameter(format!("damping must lie in (0,1], got {}", spec.tau)));
    }
    let gate = exponent_gate(d, spec.gamma, spec.alpha)?;
    if !gate.pass && spec.gate_policy == GatePolicy::Enforce {
        return Err(Error::Gate {
            assumption: "(MFG3)".into(),
            message: format!(
                "need gamma > {} and alpha < {} (gamma = {}, alpha = {})",
                gate.gamma_threshold, gate.alpha_threshold, spec.gamma, spec.alpha
            ),
        });
    }
    Ok(gate)
}

fn validate(spec: &MfgSpec, grid: &Arc<Grid>) -> Result<(ExponentGate, Option<f64>)> {
    check_euclidean(grid)?;
    let gate = standing_gates(spec, grid.dim)?;
    let mfg2 = if grid.has_boundary() {
        let b = ScalarField::from_source(grid, &spec.b);
        let db: Vec<Vec<f64>> = (0..grid.dim).map(|a| grid.diff(b.values(), a)).collect();
        let mut min_dnu = f64::INFINITY;
        for n in 0..grid.len() {
            if let Some((axis, sign)) = grid.normal_axis(n) {
                min_dnu = min_dnu.min(sign * db[axis][n]);
            }
        }
        // the one-sided boundary derivative is only O(h²) accurate
        let curv = (0..grid.dim)
            .map(|a| grid.spacing[a] * grid.diff(&db[a], a).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .fold(0.0, f64::max);
        if min_dnu < -(0.5 * curv + 1e-8 * b.max_abs().max(1.0)) {
            return Err(Error::Gate {
                assumption: "(MFG2)".into(),
                message: format!("normal derivative of b is negative on the boundary ({min_dnu:e})"),
            });
        }
        Some(min_dnu)
    } else {
        None
    };
    Ok((gate, mfg2))
}

/// Evaluates (MFG1)–(MFG3) on the configured domain without solving.
/// Returns the exponent table and, on boxes, `min ∂_ν b`.
pub fn check_gates(spec: &MfgSpec) -> Result<(ExponentGate, Option<f64>)> {
    let grid = Arc::new(build_grid(&spec.domain, &MetricSpec::Euclidean)?);
    validate(spec, &grid)
}

fn continuation_schedule(spec: &MfgSpec) -> Vec<f64> {
    let mut eps = vec![];
    if spec.continuation && spec.epsilon < 0.1 {
        let mut e = 0.1;
        while e > spec.epsilon * (1.0 + 1e-12) {
            eps.push(e);
            e *= 0.5;
        }
    }
    eps.push(spec.epsilon);
    eps
}

/// Damped fixed point `m → V_ε(m) → (u, λ) → m_new`, `m ← (1−τ)m + τ m_new`,
/// with `τ` halved whenever the change grows.
pub fn mfg_fixed_point(spec: &MfgSpec) -> Result<(MfgState, MfgReport)> {
    let grid = Arc::new(build_grid(&spec.domain, &MetricSpec::Euclidean)?);
    let (gate, mfg2) = validate(spec, &grid)?;
    let b = ScalarField::from_source(&grid, &spec.b);
    let vol = grid.volume();
    let mut m = ScalarField::constant(&grid, 1.0 / vol);
    let mut u = ScalarField::zeros(&grid);
    let mut lambda = f64::NAN;
    let mut history = vec![];
    let mut tau = spec.tau;
    let mut converged = false;
    let mut fp_info = None;
    let mut iteration = 0;
    let schedule = continuation_schedule(spec);
    let cfg = SolverConfig {
        tol: 1e-12,
        ..SolverConfig::default()
    };

    for (stage, &eps) in schedule.iter().enumerate() {
        let last = stage + 1 == schedule.len();
        let tol = if last { spec.tol } else { spec.tol.max(1e-6) };
        let mut prev_change = f64::INFINITY;
        converged = false;
        while iteration < spec.max_outer {
            iteration += 1;
            let v = mollify_coupling(&m, eps, spec.alpha)?;
            let prob = hjb_problem(&grid, spec.gamma).with_f(v).with_b(b.clone());
            let rep = hjb::solve_ergodic(
                &prob,
                &SolverConfig {
                    initial_guess: Some(u.clone()),
                    ..cfg.clone()
                },
            )?;
            if !rep.converged {
                return Err(Error::Singular(format!(
                    "ergodic solve failed at outer iteration {iteration} (residual {:e})",
                    rep.residual
                )));
            }
            let new_lambda = rep.lambda.expect("ergodic mode");
            let (m_new, info) = fp_solve_from(&rep.u, spec.gamma, Some(&m))?;
            let du = rep.u.dist_inf(&u);
            let dl = if lambda.is_nan() { 0.0 } else { (new_lambda - lambda).abs() };
            let dm = m_new.dist_inf(&m);
            let change = du.max(dl).max(dm);
            if change > prev_change {
                tau = (tau * 0.5).max(1.0 / 64.0);
            }
            prev_change = change;
            u = rep.u;
            lambda = new_lambda;
            m = m.zip_map(&m_new, |a, b| (1.0 - tau) * a + tau * b);
            history.push(OuterStep {
                iteration,
                epsilon: eps,
                tau,
                change,
                lambda,
                mass: m.integral(),
                min_m: m.min(),
                newton_iterations: rep.iterations,
            });
            fp_info = Some(info);
            if change < tol {
                converged = true;
                break;
            }
        }
    }

    // residuals of the returned state against the target ε
    let v = mollify_coupling(&m, spec.epsilon, spec.alpha)?;
    let prob = hjb_problem(&grid, spec.gamma).with_f(v).with_b(b);
    let mut res = hjb::residual(&u, &prob)?;
    for r in res.values_mut() {
        *r += lambda;
    }
    let hjb_residual = res.max_abs();
    let fp_res = fp_residual(&u, &m, spec.gamma)?;
    let state = MfgState { u, lambda, m };
    let report = MfgReport {
        converged,
        outer_iterations: iteration,
        lambda,
        outer_residual: hjb_residual.max(fp_res),
        hjb_residual,
        fp_residual: fp_res,
        mass: state.m.integral(),
        min_m: state.m.min(),
        gate,
        gate_policy: spec.gate_policy,
        c_v: spec.c_v,
        mfg2_min_dnu_b: mfg2,
        fp: fp_info,
        history,
        duality: None,
        lp_bound: None,
    };
    Ok((state, report))
}

/// `(1/γ)∫_∂Ω m ∂_ν f` with trapezoidal face weights; zero on tori.
fn boundary_integral(grid: &Grid, m: &[f64], f: &[f64]) -> f64 {
    if !grid.has_boundary() {
        return 0.0;
    }
    let w = grid.weights();
    let mut total = 0.0;
    for a in 0..grid.dim {
        let df = grid.diff(f, a);
        let h = grid.spacing[a];
        for n in 0..grid.len() {
            let i = grid.multi_index(n)[a];
            let sign = if i == 0 {
                -1.0
            } else if i + 1 == grid.shape[a] {
                1.0
            } else {
                continue;
            };
            // node weight over the half cell in the normal direction
            total += w[n] / (0.5 * h) * m[n] * sign * df[n];
        }
    }
    total
}

fn d2_inf(b: &ScalarField) -> f64 {
    hessian(b).magnitude().max()
}

/// Both sides of the duality identity obtained by testing the HJB equation
/// with `Δm` and the Fokker–Planck equation with `Δu`, and the resulting
/// chain bound `∫V′(m_ε)|∇m_ε|² ≤ ‖D²b‖_∞`.
pub fn duality_identity_residual(state: &MfgState, spec: &MfgSpec) -> Result<DualityReport> {
    let grid = state.u.grid().clone();
    check_euclidean(&grid)?;
    let gamma = spec.gamma;
    let b = ScalarField::from_source(&grid, &spec.b);
    let grad = gradient(&state.u);
    let hess = hessian(&state.u);
    let hp = hess.apply(&grad);
    let w = grid.weights();
    let mut lhs = 0.0;
    for n in 0..grid.len() {
        let p = &grad.values()[n];
        let s = metric_dot(&grid, n, p, p);
        if s == 0.0 && gamma < 2.0 {
            continue;
        }
        let hh = tensor_norm_sq(&grid, n, &hess.values()[n]);
        let tr = if s == 0.0 {
            if gamma == 2.0 {
                hh
            } else {
                0.0
            }
        } else {
            let hv2 = metric_dot(&grid, n, &hp.values()[n], &hp.values()[n]);
            s.powf((gamma - 2.0) / 2.0) * (hh + (gamma - 2.0) * hv2 / s)
        };
        lhs -= w[n] * tr * state.m.values()[n];
    }
    let pow: Vec<f64> = grad.magnitude().values().iter().map(|v| v.powf(gamma)).collect();
    lhs += boundary_integral(&grid, state.m.values(), &pow) / gamma;

    let gm = gradient(&state.m);
    let v_eps = mollify_coupling(&state.m, spec.epsilon, spec.alpha)?;
    let rhs = gradient(&v_eps).dot(&gm).integral() + gradient(&b).dot(&gm).integral();

    let m_eps = mollify(&state.m, spec.epsilon)?;
    let gme = gradient(&m_eps);
    let chain_value = gme
        .dot(&gme)
        .zip_map(&m_eps, |g2, me| spec.coupling_derivative(me) * g2)
        .integral();
    let d2b = d2_inf(&b);
    Ok(DualityReport {
        lhs,
        rhs,
        residual: lhs - rhs,
        chain_value,
        d2b_inf: d2b,
        margin: d2b - chain_value,
    })
}

/// Integrability of `m_ε` in `L^{d(α+1)/(d−2)}` and the energy
/// `∫|∇(m_ε^{(α+1)/2})|²` against `C_V‖D²b‖_∞`.
pub fn lp_bound_check(state: &MfgState, spec: &MfgSpec) -> Result<LpBoundReport> {
    let grid = state.m.grid().clone();
    if grid.dim < 3 {
        return Err(Error::InvalidParameter("the L^p bound needs d >= 3".into()));
    }
    let df = grid.dim as f64;
    let exponent = df * (spec.alpha + 1.0) / (df - 2.0);
    let m_eps = mollify(&state.m, spec.epsilon)?;
    let abs: Vec<f64> = m_eps.values().iter().map(|v| v.abs()).collect();
    let norm = lq_of_values(&grid, &abs, exponent)?;
    let power = m_eps.map(|v| v.max(0.0).powf((spec.alpha + 1.0) / 2.0));
    let gp = gradient(&power);
    let energy = gp.dot(&gp).integral();
    let d2b = d2_inf(&ScalarField::from_source(&grid, &spec.b));
    let bound = spec.c_v * d2b;
    let mut coarse: DomainSpec = spec.domain.clone();
    for n in coarse.resolution.iter_mut() {
        *n = 10;
    }
    let coarse = build_grid(&coarse, &MetricSpec::Euclidean)?;
    Ok(LpBoundReport {
        exponent,
        norm,
        energy,
        d2b_inf: d2b,
        c_v: spec.c_v,
        bound,
        holds: energy <= bound + 1e-10,
        sigma_hat: sobolev_constant_estimate(&coarse, 0)?.sigma_hat,
    })
}

/// Runs the fixed point and attaches the duality and `L^p` diagnostics.
pub fn run(spec: &MfgSpec) -> Result<(MfgState, MfgReport)> {
    let (state, mut report) = mfg_fixed_point(spec)?;
    report.duality = Some(duality_identity_residual(&state, spec)?);
    if state.m.grid().dim >= 3 {
        report.lp_bound = Some(lp_bound_check(&state, spec)?);
    }
    Ok((state, report))
}

/// `laplace_beltrami` of the coupling, exposed for diagnostics.
pub fn coupling_laplacian(m: &ScalarField, spec: &MfgSpec) -> Result<ScalarField> {
    Ok(laplace_beltrami(&mollify_coupling(m, spec.epsilon, spec.alpha)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn torus(d: usize, n: usize) -> Arc<Grid> {
        Arc::new(build_grid(&DomainSpec::unit_torus(d, n), &MetricSpec::Euclidean).unwrap())
    }

    #[test]
    fn gate_closed_forms() {
        let g = exponent_gate(5, 2.0, 1.9).unwrap();
        assert!((g.gamma_conj - 2.0).abs() < 1e-15 && (g.alpha_threshold - 2.0).abs() < 1e-15);
        assert!(g.alpha_ok && g.gamma_ok && g.pass);
        assert!(!exponent_gate(5, 2.0, 2.1).unwrap().pass);
        let g3 = exponent_gate(3, 4.0, 1e6).unwrap();
        assert!(g3.alpha_threshold.is_infinite() && g3.pass);
        let edge = exponent_gate(4, 2.0, 0.5).unwrap();
        assert!(!edge.gamma_ok && !edge.pass);
        // d−2−γ′ ≤ 0 with d ≥ 4
        assert!(exponent_gate(4, 1.5, 10.0).unwrap().alpha_threshold.is_infinite());
        assert!(exponent_gate(3, 1.0, 1.0).is_err());
    }

    #[test]
    fn mollifier_basics() {
        let g = torus(2, 32);
        let one = ScalarField::constant(&g, 1.0);
        assert!(mollify_coupling(&one, 0.1, 2.0).unwrap().dist_inf(&one) < 1e-14);
        let m = ScalarField::from_fn(&g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos());
        let id = mollify_coupling(&m, 0.0, 2.0).unwrap();
        assert!(id.dist_inf(&m.map(|v| v * v)) == 0.0);
        assert!(mollify(&m, 0.6).is_err());
        let b = Arc::new(build_grid(&DomainSpec::unit_box(2, 17), &MetricSpec::Euclidean).unwrap());
        let oneb = ScalarField::constant(&b, 1.0);
        assert!(mollify(&oneb, 0.2).unwrap().dist_inf(&oneb) < 1e-14);
        // mass of the torus convolution is preserved
        let mm = mollify(&m, 0.1).unwrap();
        assert!((mm.integral() - m.integral()).abs() < 1e-13);
    }

    #[test]
    fn fp_without_drift_is_uniform() {
        let g = torus(2, 16);
        let (m, info) = fp_solve(&ScalarField::zeros(&g), 2.0).unwrap();
        assert!(m.dist_inf(&ScalarField::constant(&g, 1.0)) < 1e-12);
        assert!(info.m_matrix && info.row_sum_defect < 1e-9);
    }

    #[test]
    fn fp_is_stationary_for_its_drift() {
        let g = torus(2, 24);
        let u = ScalarField::from_fn(&g, |x| 0.05 * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).sin());
        let (m, _) = fp_solve(&u, 2.0).unwrap();
        assert!((m.integral() - 1.0).abs() < 1e-12);
        assert!(m.min() > 0.0);
        assert!(fp_residual(&u, &m, 2.0).unwrap() < 1e-9);
    }

    #[test]
    fn constant_state_and_lambda_shift() {
        let spec = MfgSpec::new(DomainSpec::unit_torus(3, 8), 4.0, 1.0, 0.1);
        let (st, rep) = run(&spec).unwrap();
        assert!(rep.converged && rep.outer_iterations <= 2);
        assert!((st.lambda - 1.0).abs() < 1e-12);
        assert!(st.u.max_abs() < 1e-12);
        assert!(st.m.dist_inf(&ScalarField::constant(st.m.grid(), 1.0)) < 1e-12);
        let dual = rep.duality.unwrap();
        assert!(dual.residual.abs() < 1e-12 && dual.chain_value.abs() < 1e-12);
        let lp = rep.lp_bound.unwrap();
        assert!((lp.exponent - 6.0).abs() < 1e-15 && lp.energy.abs() < 1e-20 && lp.holds);
        // H = |p|^γ/γ − b: raising b by c raises λ by c
        let shifted = spec.clone().with_b(ScalarSource::Constant { value: 0.25 });
        let (st2, _) = mfg_fixed_point(&shifted).unwrap();
        assert!((st2.lambda - 1.25).abs() < 1e-12);
    }

    #[test]
    fn gates_are_enforced_or_recorded() {
        let mut spec = MfgSpec::new(DomainSpec::unit_torus(3, 8), 2.0, 1.0, 0.1);
        assert!(matches!(mfg_fixed_point(&spec), Err(Error::Gate { .. })));
        spec.gate_policy = GatePolicy::Record;
        let (_, rep) = mfg_fixed_point(&spec).unwrap();
        assert!(!rep.gate.pass && rep.converged);
        spec.c_v = 1.0;
        assert!(matches!(mfg_fixed_point(&spec), Err(Error::Gate { .. })));
        let mut bx = MfgSpec::new(DomainSpec::unit_box(3, 9), 4.0, 1.0, 0.1);
        bx.b = ScalarSource::cos_mode(1.0, [0.5, 0.0, 0.0]);
        // ∂_ν cos(πx₁) = 0 on the faces: admissible; sin(πx₁) has ∂_ν = −π
        assert!(validate(&bx, &Arc::new(build_grid(&bx.domain, &MetricSpec::Euclidean).unwrap())).is_ok());
        bx.b = ScalarSource::Modes {
            terms: vec![crate::sources::Mode::sin(1.0, [0.5, 0.0, 0.0])],
        };
        let gb = Arc::new(build_grid(&bx.domain, &MetricSpec::Euclidean).unwrap());
        assert!(matches!(validate(&bx, &gb), Err(Error::Gate { .. })));
    }
}

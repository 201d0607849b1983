//! Damped Newton solver for
//!
//! ```text
//! −Δ_g u + (c₁/γ)|∇u|^γ + g(B, ∇u) − b + λ = f
//! ```
//!
//! with homogeneous Neumann (box) or periodic (torus) conditions, `H = (1/γ)|p|^γ − b`.
//!
//! Without a zeroth-order term the problem fixes `u` only up to constants and
//! is solvable only for one value of the additive constant. Both modes
//! therefore solve the bordered system `R(u) + μ = 0`, `∫u = 0`. In the
//! ergodic mode `λ = λ₀ + μ` is the output; in the plain mode `μ` is reported
//! as the compatibility multiplier (zero exactly when the data are compatible).

pub mod mms;
pub mod stencil;

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{self, lq_of_values, ScalarField, VectorField};
use crate::geometry::{Grid, Vec3};
use crate::linalg::{Bordered, Csr};
pub use stencil::Stencil;

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub gamma: f64,
    pub c1: f64,
    /// Only recorded: the bound `|H − c₁|p|^γ| ≤ c₂` for the Hamiltonian.
    pub c2: f64,
    pub drift: Option<VectorField>,
    pub b: ScalarField,
    pub f: ScalarField,
    pub ergodic: bool,
    pub lambda: f64,
}

impl ProblemSpec {
    pub fn new(grid: &Arc<Grid>, gamma: f64) -> Self {
        ProblemSpec {
            gamma,
            c1: 1.0,
            c2: 0.0,
            drift: None,
            b: ScalarField::zeros(grid),
            f: ScalarField::zeros(grid),
            ergodic: false,
            lambda: 0.0,
        }
    }

    pub fn with_f(mut self, f: ScalarField) -> Self {
        self.f = f;
        self
    }

    pub fn with_b(mut self, b: ScalarField) -> Self {
        self.b = b;
        self
    }

    pub fn with_drift(mut self, drift: VectorField) -> Self {
        self.drift = if drift.is_zero() { None } else { Some(drift) };
        self
    }

    pub fn ergodic(mut self) -> Self {
        self.ergodic = true;
        self
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.f.grid()
    }

    /// Conjugate exponent γ′ = γ/(γ−1).
    pub fn gamma_conj(&self) -> f64 {
        self.gamma / (self.gamma - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(Error::Gate {
                assumption: "(In1)".into(),
                message: format!("gamma > 1 required, got {}", self.gamma),
            });
        }
        if !(self.c1 > 0.0) {
            return Err(Error::InvalidParameter(format!("c1 must be positive, got {}", self.c1)));
        }
        let n = self.grid().len();
        let same = |g: &Arc<Grid>| Arc::ptr_eq(g, self.grid()) || g.len() == n;
        if !same(self.b.grid()) {
            return Err(Error::GridMismatch {
                expected: n,
                found: self.b.grid().len(),
            });
        }
        if let Some(drift) = &self.drift {
            if !same(drift.grid()) {
                return Err(Error::GridMismatch {
                    expected: n,
                    found: drift.grid().len(),
                });
            }
        }
        Ok(())
    }
}

/// Exponents of the norm table attached to every solve.
#[derive(Clone, Debug, Serialize)]
pub struct NormExponents {
    /// Exponents for `‖∇u‖`.
    pub gradient: Vec<f64>,
    /// Exponents for `‖Δu‖`, `‖|∇u|^γ‖` and `‖D²u‖`.
    pub second_order: Vec<f64>,
}

impl Default for NormExponents {
    fn default() -> Self {
        NormExponents {
            gradient: vec![2.0, f64::INFINITY],
            second_order: vec![2.0],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub min_step: f64,
    pub eps_reg: f64,
    pub picard_iters: usize,
    pub picard_damping: f64,
    pub initial_guess: Option<ScalarField>,
    pub norms: NormExponents,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iter: 60,
            min_step: 2f64.powi(-20),
            eps_reg: 1e-8,
            picard_iters: 20,
            picard_damping: 0.5,
            initial_guess: None,
            norms: NormExponents::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.min_step > 0.0 && self.eps_reg >= 0.0) {
            return Err(Error::InvalidParameter("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NormEntry {
    pub quantity: String,
    #[serde(serialize_with = "ser_q")]
    pub q: f64,
    pub value: f64,
}

fn ser_q<S: serde::Serializer>(q: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if q.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*q)
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub u: ScalarField,
    /// Ergodic constant (ergodic mode only).
    pub lambda: Option<f64>,
    /// Constant absorbed by the bordered system (see module docs).
    pub multiplier: f64,
    pub eps_reg: f64,
    pub picard_used: bool,
    pub norms: Vec<NormEntry>,
}

impl SolveReport {
    pub fn norm(&self, quantity: &str, q: f64) -> Option<f64> {
        self.norms
            .iter()
            .find(|e| e.quantity == quantity && (e.q == q || (e.q.is_infinite() && q.is_infinite())))
            .map(|e| e.value)
    }
}

/// `(H(s), dH/ds)` for `H(s) = (c₁/γ)(s+ε²)^{(γ−2)/2} s`, `s = |p|²`.
pub fn hamiltonian_terms(s: f64, gamma: f64, c1: f64, eps: f64) -> (f64, f64) {
    let e2 = eps * eps;
    let base = s + e2;
    if base == 0.0 {
        // only reachable for γ ≥ 2 with ε = 0
        let slope = if gamma == 2.0 { c1 / 2.0 } else { 0.0 };
        return (0.0, slope);
    }
    let k = base.powf((gamma - 2.0) / 2.0);
    let h = c1 / gamma * k * s;
    let dh = c1 / gamma * (k + (gamma - 2.0) / 2.0 * k / base * s);
    (h, dh)
}

fn effective_eps(spec: &ProblemSpec, cfg: &SolverConfig) -> f64 {
    if spec.gamma < 2.0 {
        cfg.eps_reg
    } else {
        0.0
    }
}

struct Problem<'a> {
    st: Stencil,
    spec: &'a ProblemSpec,
    eps: f64,
    /// `f + b − λ₀` (λ₀ only in ergodic mode).
    rhs: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(spec: &'a ProblemSpec, eps: f64) -> Result<Self> {
        spec.validate()?;
        let st = Stencil::new(spec.grid())?;
        let lam = if spec.ergodic { spec.lambda } else { 0.0 };
        let rhs = spec
            .f
            .values()
            .iter()
            .zip(spec.b.values())
            .map(|(f, b)| f + b - lam)
            .collect();
        Ok(Problem { st, spec, eps, rhs })
    }

    fn drift(&self, n: usize) -> Vec3 {
        self.spec.drift.as_ref().map_or([0.0; 3], |d| d.values()[n])
    }

    /// `R(u) + μ` node-wise.
    fn residual(&self, u: &[f64], mu: f64) -> Vec<f64> {
        (0..u.len())
            .map(|n| {
                let p = self.st.grad_at(u, n);
                let s = self.st.norm_sq(n, &p);
                let (h, _) = hamiltonian_terms(s, self.spec.gamma, self.spec.c1, self.eps);
                let bdrift = self.drift(n);
                let adv: f64 = (0..self.st.dim()).map(|a| bdrift[a] * p[a]).sum();
                -self.st.laplacian_at(u, n) + h + adv + mu - self.rhs[n]
            })
            .collect()
    }

    /// Newton Jacobian (`linearize = true`) or the frozen-coefficient Picard
    /// operator.
    fn operator(&self, u: &[f64], linearize: bool) -> Csr {
        let transport: Vec<Vec3> = (0..u.len())
            .map(|n| {
                let p = self.st.grad_at(u, n);
                let s = self.st.norm_sq(n, &p);
                let ginv = self.st.ginv(n);
                let coeff = if linearize {
                    let (_, dh) = hamiltonian_terms(s, self.spec.gamma, self.spec.c1, self.eps);
                    2.0 * dh
                } else {
                    let base = s + self.eps * self.eps;
                    if base == 0.0 {
                        0.0
                    } else {
                        self.spec.c1 / self.spec.gamma * base.powf((self.spec.gamma - 2.0) / 2.0)
                    }
                };
                let bd = self.drift(n);
                let mut c = [0.0; 3];
                for a in 0..self.st.dim() {
                    c[a] = coeff * ginv * p[a] + bd[a];
                }
                c
            })
            .collect();
        self.st.assemble(&transport, &[])
    }
}

fn weighted_l2(grid: &Grid, v: &[f64]) -> f64 {
    grid.weights()
        .iter()
        .zip(v)
        .map(|(w, x)| w * x * x)
        .sum::<f64>()
        .sqrt()
}

fn weighted_mean_defect(grid: &Grid, u: &[f64]) -> f64 {
    grid.weights().iter().zip(u).map(|(w, x)| w * x).sum()
}

/// Node-wise residual of the equation at `u` (no multiplier).
pub fn residual(u: &ScalarField, spec: &ProblemSpec) -> Result<ScalarField> {
    if u.grid().len() != spec.grid().len() {
        return Err(Error::GridMismatch {
            expected: spec.grid().len(),
            found: u.grid().len(),
        });
    }
    let prob = Problem::new(spec, if spec.gamma < 2.0 { SolverConfig::default().eps_reg } else { 0.0 })?;
    ScalarField::new(u.grid().clone(), prob.residual(u.values(), 0.0))
}

/// Residual with an explicit regularization (matches a given solver config).
pub fn residual_with(u: &ScalarField, spec: &ProblemSpec, cfg: &SolverConfig) -> Result<ScalarField> {
    let prob = Problem::new(spec, effective_eps(spec, cfg))?;
    ScalarField::new(u.grid().clone(), prob.residual(u.values(), 0.0))
}

/// Linearized transport operator `−Δ + Σ ∂_pH^a D₀_a` at `u` with `H` the
/// problem's Hamiltonian (drift included), as assembled by Newton.
pub fn linearization(u: &ScalarField, spec: &ProblemSpec, cfg: &SolverConfig) -> Result<Csr> {
    let prob = Problem::new(spec, effective_eps(spec, cfg))?;
    Ok(prob.operator(u.values(), true))
}

/// Contravariant `∂_pH(∇u)` with the solver's gradient stencil.
pub fn hamiltonian_drift(u: &ScalarField, spec: &ProblemSpec, cfg: &SolverConfig) -> Result<VectorField> {
    let prob = Problem::new(spec, effective_eps(spec, cfg))?;
    let vals = (0..u.grid().len())
        .map(|n| {
            let p = prob.st.grad_at(u.values(), n);
            let s = prob.st.norm_sq(n, &p);
            let (_, dh) = hamiltonian_terms(s, spec.gamma, spec.c1, prob.eps);
            let g = prob.st.ginv(n);
            [2.0 * dh * g * p[0], 2.0 * dh * g * p[1], 2.0 * dh * g * p[2]]
        })
        .collect();
    VectorField::new(u.grid().clone(), vals)
}

pub fn solve(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<SolveReport> {
    if spec.ergodic {
        return solve_ergodic(spec, cfg);
    }
    newton(spec, cfg)
}

pub fn solve_ergodic(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<SolveReport> {
    if !spec.ergodic {
        return Err(Error::InvalidParameter("solve_ergodic needs an ergodic problem".into()));
    }
    newton(spec, cfg)
}

fn newton(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let eps = effective_eps(spec, cfg);
    let prob = Problem::new(spec, eps)?;
    let grid = spec.grid().clone();
    let nn = grid.len();
    let w = grid.weights().to_vec();
    let ones = vec![1.0; nn];
    let mut u = match &cfg.initial_guess {
        Some(g) => {
            if g.values().len() != nn {
                return Err(Error::GridMismatch {
                    expected: nn,
                    found: g.values().len(),
                });
            }
            g.values().to_vec()
        }
        None => vec![0.0; nn],
    };
    // the multiplier starts at the mean balance of the initial guess
    let r0 = prob.residual(&u, 0.0);
    let mut mu = -weighted_mean_defect(&grid, &r0) / grid.volume();

    let merit = |u: &[f64], mu: f64| -> (Vec<f64>, f64) {
        let r = prob.residual(u, mu);
        let m = weighted_l2(&grid, &r) + weighted_mean_defect(&grid, u).abs();
        (r, m)
    };

    let (mut r, mut res) = merit(&u, mu);
    let mut history = vec![res];
    let mut iterations = 0;
    let mut picard_used = false;
    let mut converged = res <= cfg.tol;
    let sqrt_n = (nn as f64).sqrt();

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let jac = prob.operator(&u, true);
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let eta = res.clamp(1e-12, 1e-2);
        let (du, dmu, _) = Bordered {
            a: &jac,
            c: &ones,
            d: &w,
        }
        .solve(&neg_r, -weighted_mean_defect(&grid, &u), None, eta, 1e-3 * cfg.tol * sqrt_n / grid.volume().sqrt())?;

        let mut step = 1.0;
        let mut accepted = false;
        while step >= cfg.min_step {
            let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + step * b).collect();
            let tmu = mu + step * dmu;
            let (tr, tres) = merit(&trial, tmu);
            if tres.is_finite() && tres <= (1.0 - 1e-4 * step) * res {
                u = trial;
                mu = tmu;
                r = tr;
                res = tres;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if picard_used {
                break;
            }
            picard_used = true;
            for _ in 0..cfg.picard_iters {
                let op = prob.operator(&u, false);
                let (v, vmu, _) = Bordered {
                    a: &op,
                    c: &ones,
                    d: &w,
                }
                .solve(&prob.rhs, 0.0, None, 1e-10, 0.0)?;
                let t = cfg.picard_damping;
                for (ui, vi) in u.iter_mut().zip(&v) {
                    *ui = (1.0 - t) * *ui + t * vi;
                }
                mu = (1.0 - t) * mu + t * vmu;
            }
            let (nr, nres) = merit(&u, mu);
            r = nr;
            res = nres;
        }
        history.push(res);
        converged = res <= cfg.tol;
    }

    let u = ScalarField::new(grid.clone(), u)?;
    let norms = norm_table(&u, spec.gamma, &cfg.norms)?;
    Ok(SolveReport {
        converged,
        iterations,
        residual: res,
        residual_history: history,
        lambda: spec.ergodic.then_some(spec.lambda + mu),
        multiplier: mu,
        eps_reg: eps,
        picard_used,
        norms,
        u,
    })
}

/// `‖∇u‖_r`, `‖Δu‖_q`, `‖|∇u|^γ‖_q`, `‖D²u‖_q` with the calculus operators.
pub fn norm_table(u: &ScalarField, gamma: f64, ex: &NormExponents) -> Result<Vec<NormEntry>> {
    let grid = u.grid();
    let grad_mag = fields::gradient(u).magnitude();
    let lap = fields::laplace_beltrami(u);
    let lap_abs: Vec<f64> = lap.values().iter().map(|v| v.abs()).collect();
    let pow: Vec<f64> = grad_mag.values().iter().map(|v| v.powf(gamma)).collect();
    let hess = fields::hessian(u).magnitude();
    let mut out = vec![];
    for &r in &ex.gradient {
        out.push(NormEntry {
            quantity: "grad_u".into(),
            q: r,
            value: lq_of_values(grid, grad_mag.values(), r)?,
        });
    }
    for &q in &ex.second_order {
        out.push(NormEntry {
            quantity: "lap_u".into(),
            q,
            value: lq_of_values(grid, &lap_abs, q)?,
        });
        out.push(NormEntry {
            quantity: "grad_u_pow_gamma".into(),
            q,
            value: lq_of_values(grid, &pow, q)?,
        });
        out.push(NormEntry {
            quantity: "hess_u".into(),
            q,
            value: lq_of_values(grid, hess.values(), q)?,
        });
    }
    Ok(out)
}

//! Scaling-law experiments for the gradient-integrability and maximal
//! regularity estimates, plus empirical Sobolev and Calderón–Zygmund constants.
//!
//! The constants in the estimates are existence-only, so "bounded" is
//! operationalized as a log-log slope of the measured ratio against the
//! amplitude of the data over the top decade of amplitudes.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bernstein::maxreg::q_threshold;
use crate::error::{Error, Result};
use crate::fields::{hessian, laplace_beltrami, lq_of_values, ScalarField, VectorField};
use crate::geometry::{build_grid, DomainKind, DomainSpec, Grid, MetricSpec};
use crate::hjb::{self, NormExponents, ProblemSpec, SolverConfig};
use crate::sources::{Mode, ScalarSource};
use crate::stats::log_log_slope;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThmOneExponents {
    pub d: usize,
    pub p: f64,
    /// `2(p+1)d/(d−2)`.
    pub r: f64,
    /// `(p+1)d/(d+2p)`.
    pub beta_p: f64,
    /// `2β_p`.
    pub q: f64,
}

pub fn thm1_exponents(d: usize, p: f64) -> Result<ThmOneExponents> {
    if d < 3 {
        return Err(Error::InvalidParameter(format!("dimension must be at least 3, got {d}")));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidExponent(format!("p must be >= 1, got {p}")));
    }
    let df = d as f64;
    let beta_p = (p + 1.0) * df / (df + 2.0 * p);
    Ok(ThmOneExponents {
        d,
        p,
        r: 2.0 * (p + 1.0) * df / (df - 2.0),
        beta_p,
        q: 2.0 * beta_p,
    })
}

/// A family of problems `f = t·f₀` swept over amplitudes `t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub domain: DomainSpec,
    #[serde(default = "euclidean")]
    pub metric: MetricSpec,
    pub gamma: f64,
    pub base: ScalarSource,
    /// Contravariant drift components; empty means `B = 0`.
    #[serde(default)]
    pub drift: Vec<ScalarSource>,
    /// Integrability exponent of the drift; must exceed the dimension.
    #[serde(default = "default_s")]
    pub drift_exponent: f64,
    /// Optional prescribed bound `θ ≥ ‖B‖_{L^s}`.
    #[serde(default)]
    pub theta: Option<f64>,
    pub amplitudes: Vec<f64>,
    /// `p` for the gradient-integrability sweep, `q` for the maximal
    /// regularity sweep.
    pub exponent: f64,
    #[serde(default = "default_threshold")]
    pub slope_threshold: f64,
    /// Resolution of the coarse copy of the domain used for `σ̂`.
    #[serde(default = "default_sobolev_n")]
    pub sobolev_resolution: usize,
    #[serde(default)]
    pub seed: u64,
}

fn euclidean() -> MetricSpec {
    MetricSpec::Euclidean
}
fn default_s() -> f64 {
    4.0
}
fn default_threshold() -> f64 {
    0.05
}
fn default_sobolev_n() -> usize {
    10
}

impl SweepSpec {
    /// Flat 3-torus sweep with `f₀ = cos(2πx₁)`.
    pub fn torus_cosine(n: usize, gamma: f64, exponent: f64, amplitudes: Vec<f64>) -> Self {
        SweepSpec {
            domain: DomainSpec::unit_torus(3, n),
            metric: MetricSpec::Euclidean,
            gamma,
            base: ScalarSource::cos_mode(1.0, [1.0, 0.0, 0.0]),
            drift: vec![],
            drift_exponent: default_s(),
            theta: None,
            amplitudes,
            exponent,
            slope_threshold: default_threshold(),
            sobolev_resolution: default_sobolev_n(),
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.amplitudes.is_empty() {
            return Err(Error::InvalidParameter("no amplitudes".into()));
        }
        if self.amplitudes[0] <= 0.0 || self.amplitudes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("amplitudes must be positive and increasing".into()));
        }
        if !matches!(self.domain.kind, DomainKind::Box | DomainKind::Torus | DomainKind::ConformalTorus) {
            return Err(Error::Gate {
                assumption: "(D1)".into(),
                message: "scaling sweeps run on boxes and tori only".into(),
            });
        }
        Ok(())
    }

    fn has_drift(&self) -> bool {
        self.drift.iter().any(|s| *s != ScalarSource::Zero)
    }

    fn drift_field(&self, grid: &Arc<Grid>) -> Option<VectorField> {
        if !self.has_drift() {
            return None;
        }
        let mut comps = self.drift.clone();
        comps.resize(grid.dim, ScalarSource::Zero);
        Some(VectorField::from_sources(grid, &comps))
    }
}

/// Constants the estimates may depend on, as measured for a run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct GateValues {
    pub kappa: f64,
    /// Volume of the domain.
    pub rho: f64,
    pub sigma_hat: f64,
    /// `‖B‖_{L^s}` (or the prescribed bound when one is given).
    pub theta: f64,
    pub s: f64,
    /// `max_t ‖f_t‖_{L^q} + ‖∇u_t‖_{L¹}`.
    pub k: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingRow {
    pub t: f64,
    /// Norm of the prescribed datum `t·f₀`.
    pub f_norm: f64,
    /// Norm of the datum actually solved for, `t·f₀ − μ`.
    pub f_eff_norm: f64,
    pub numerator: f64,
    pub ratio: f64,
    pub grad_l1: f64,
    pub multiplier: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub experiment: &'static str,
    pub domain: DomainKind,
    pub gamma: f64,
    /// `(name, value)` pairs of the Lebesgue exponents used.
    pub exponents: Vec<(String, f64)>,
    pub gates: GateValues,
    pub rows: Vec<ScalingRow>,
    pub max_ratio: f64,
    pub ratio_at_one: Option<f64>,
    pub slope: f64,
    /// Slope over amplitudes in `[t_max/10, t_max]`.
    pub top_decade_slope: f64,
    pub slope_threshold: f64,
    pub slope_ok: bool,
    /// First amplitude whose solve failed; the rows stop before it.
    pub aborted_at: Option<f64>,
}

impl ScalingReport {
    pub fn ensure_complete(&self) -> Result<()> {
        match self.aborted_at {
            Some(amplitude) => Err(Error::SweepAborted { amplitude }),
            None => Ok(()),
        }
    }

    /// Writes `t,f_norm,f_eff_norm,numerator,ratio,grad_l1,multiplier,iterations,residual`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,f_norm,f_eff_norm,numerator,ratio,grad_l1,multiplier,iterations,residual")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e}",
                r.t, r.f_norm, r.f_eff_norm, r.numerator, r.ratio, r.grad_l1, r.multiplier, r.iterations, r.residual
            )?;
        }
        Ok(())
    }
}

fn drift_gate(spec: &SweepSpec, grid: &Arc<Grid>) -> Result<f64> {
    let Some(b) = spec.drift_field(grid) else {
        return Ok(0.0);
    };
    let s = spec.drift_exponent;
    if !(s > grid.dim as f64) {
        return Err(Error::Gate {
            assumption: "(In2)".into(),
            message: format!("drift exponent s = {s} must exceed d = {}", grid.dim),
        });
    }
    let norm = lq_of_values(grid, b.magnitude().values(), s)?;
    match spec.theta {
        Some(theta) if norm > theta => Err(Error::Gate {
            assumption: "(In2)".into(),
            message: format!("||B||_L^{s} = {norm} exceeds theta = {theta}"),
        }),
        Some(theta) => Ok(theta),
        None => Ok(norm),
    }
}

fn base_gates(spec: &SweepSpec, grid: &Arc<Grid>) -> Result<GateValues> {
    let mut coarse = spec.domain.clone();
    for n in coarse.resolution.iter_mut() {
        *n = spec.sobolev_resolution;
    }
    let coarse = Arc::new(build_grid(&coarse, &spec.metric)?);
    Ok(GateValues {
        kappa: grid.ricci_lower_bound(),
        rho: grid.volume(),
        sigma_hat: sobolev_constant_estimate(&coarse, spec.seed)?.sigma_hat,
        theta: drift_gate(spec, grid)?,
        s: spec.drift_exponent,
        k: 0.0,
    })
}

/// Runs the family and returns one row per converged amplitude. Solves are
/// sequential, each warm-started from the previous solution.
fn sweep<F>(
    spec: &SweepSpec,
    grid: &Arc<Grid>,
    norms: NormExponents,
    q: f64,
    numerator: F,
) -> Result<(Vec<ScalingRow>, Option<f64>)>
where
    F: Fn(&hjb::SolveReport) -> f64,
{
    let f0 = ScalarField::from_source(grid, &spec.base);
    let drift = spec.drift_field(grid);
    let mut cfg = SolverConfig {
        norms,
        ..SolverConfig::default()
    };
    let mut rows = vec![];
    for &t in &spec.amplitudes {
        let f = f0.scaled(t);
        let mut prob = ProblemSpec::new(grid, spec.gamma).with_f(f.clone());
        if let Some(b) = &drift {
            prob = prob.with_drift(b.clone());
        }
        let rep = hjb::solve(&prob, &cfg)?;
        if !rep.converged {
            return Ok((rows, Some(t)));
        }
        let mu = rep.multiplier;
        let abs_f: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
        let abs_eff: Vec<f64> = f.values().iter().map(|v| (v - mu).abs()).collect();
        let f_eff_norm = lq_of_values(grid, &abs_eff, q)?;
        let num = numerator(&rep);
        rows.push(ScalingRow {
            t,
            f_norm: lq_of_values(grid, &abs_f, q)?,
            f_eff_norm,
            numerator: num,
            ratio: num / (1.0 + f_eff_norm),
            grad_l1: rep.norm("grad_u", 1.0).unwrap_or(f64::NAN),
            multiplier: mu,
            iterations: rep.iterations,
            residual: rep.residual,
            converged: rep.converged,
        });
        cfg.initial_guess = Some(rep.u);
    }
    Ok((rows, None))
}

fn assemble(
    experiment: &'static str,
    spec: &SweepSpec,
    exponents: Vec<(String, f64)>,
    mut gates: GateValues,
    rows: Vec<ScalingRow>,
    aborted_at: Option<f64>,
) -> ScalingReport {
    gates.k = rows.iter().map(|r| r.f_eff_norm + r.grad_l1).fold(0.0, f64::max);
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let t_max = ts.last().copied().unwrap_or(f64::NAN);
    let (top_t, top_r): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.t >= t_max / 10.0 * (1.0 - 1e-12))
        .map(|r| (r.t, r.ratio))
        .unzip();
    let top_decade_slope = log_log_slope(&top_t, &top_r);
    ScalingReport {
        experiment,
        domain: spec.domain.kind,
        gamma: spec.gamma,
        exponents,
        gates,
        max_ratio: ratios.iter().copied().fold(f64::NAN, f64::max),
        ratio_at_one: rows.iter().find(|r| r.t == 1.0).map(|r| r.ratio),
        slope: log_log_slope(&ts, &ratios),
        slope_ok: top_decade_slope <= spec.slope_threshold,
        top_decade_slope,
        slope_threshold: spec.slope_threshold,
        rows,
        aborted_at,
    }
}

/// Ratio `‖∇u_t‖_{L^r} / (1 + ‖f_t‖_{L^q})` with `(r, q)` from
/// [`thm1_exponents`] at `p = spec.exponent`.
pub fn thm1_sweep(spec: &SweepSpec) -> Result<ScalingReport> {
    spec.validate()?;
    let grid = Arc::new(build_grid(&spec.domain, &spec.metric)?);
    let ex = thm1_exponents(grid.dim, spec.exponent)?;
    ProblemSpec::new(&grid, spec.gamma).validate()?;
    let gates = base_gates(spec, &grid)?;
    let norms = NormExponents {
        gradient: vec![ex.r, 1.0],
        second_order: vec![],
    };
    let r = ex.r;
    let (rows, aborted) = sweep(spec, &grid, norms, ex.q, |rep| rep.norm("grad_u", r).unwrap_or(f64::NAN))?;
    let exponents = vec![("p".into(), ex.p), ("r".into(), ex.r), ("q".into(), ex.q)];
    Ok(assemble("thm1", spec, exponents, gates, rows, aborted))
}

/// `M_t = (‖Δu_t‖_{L^q} + ‖|∇u_t|^γ‖_{L^q}) / (1 + ‖f_t‖_{L^q})` with
/// `q = spec.exponent`. Requires `B = 0` and `q > max{d(γ−1)/γ, 2}`.
pub fn thm2_sweep(spec: &SweepSpec) -> Result<ScalingReport> {
    spec.validate()?;
    let grid = Arc::new(build_grid(&spec.domain, &spec.metric)?);
    ProblemSpec::new(&grid, spec.gamma).validate()?;
    if spec.has_drift() {
        return Err(Error::Gate {
            assumption: "(Ĩn2)".into(),
            message: "maximal regularity sweep requires B = 0".into(),
        });
    }
    let q = spec.exponent;
    let thr = q_threshold(grid.dim, spec.gamma);
    if !(q > thr) {
        return Err(Error::Gate {
            assumption: "q > max{d(gamma-1)/gamma, 2}".into(),
            message: format!("q = {q} does not exceed {thr}"),
        });
    }
    let gates = base_gates(spec, &grid)?;
    let norms = NormExponents {
        gradient: vec![1.0],
        second_order: vec![q],
    };
    let (rows, aborted) = sweep(spec, &grid, norms, q, |rep| {
        rep.norm("lap_u", q).unwrap_or(f64::NAN) + rep.norm("grad_u_pow_gamma", q).unwrap_or(f64::NAN)
    })?;
    let exponents = vec![("q".into(), q), ("threshold".into(), thr)];
    Ok(assemble("thm2", spec, exponents, gates, rows, aborted))
}

#[derive(Clone, Debug, Serialize)]
pub struct SobolevEstimate {
    /// Best Rayleigh quotient found; a lower bound for the Sobolev constant.
    pub sigma_hat: f64,
    /// Critical exponent `2d/(d−2)`.
    pub exponent: f64,
    /// `(initial, final)` quotient per start.
    pub starts: Vec<(f64, f64)>,
}

struct Rayleigh<'a> {
    grid: &'a Grid,
    p: f64,
    /// `g^{aa}` per node and axis.
    ginv: Vec<[f64; 3]>,
}

impl<'a> Rayleigh<'a> {
    fn new(grid: &'a Grid) -> Self {
        let d = grid.dim as f64;
        let ginv = (0..grid.len())
            .map(|n| {
                let g = grid.metric_diag(n);
                [1.0 / g[0], 1.0 / g[1], 1.0 / g[2]]
            })
            .collect();
        Rayleigh {
            grid,
            p: 2.0 * d / (d - 2.0),
            ginv,
        }
    }

    /// `(R(u), ∂R/∂u)`.
    fn eval(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let g = self.grid;
        let w = g.weights();
        let du: Vec<Vec<f64>> = (0..g.dim).map(|a| g.diff(u, a)).collect();
        let mut grad_sq = 0.0;
        let mut dgrad = vec![0.0; u.len()];
        for a in 0..g.dim {
            let flux: Vec<f64> = (0..u.len()).map(|n| w[n] * self.ginv[n][a] * du[a][n]).collect();
            grad_sq += flux.iter().zip(&du[a]).map(|(f, d)| f * d).sum::<f64>();
            for (o, v) in dgrad.iter_mut().zip(g.diff_transpose(&flux, a)) {
                *o += v;
            }
        }
        let gn = grad_sq.sqrt();
        let l2 = w.iter().zip(u).map(|(w, v)| w * v * v).sum::<f64>().sqrt();
        let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sp: f64 = w.iter().zip(u).map(|(w, v)| w * (v.abs() / scale).powf(self.p)).sum();
        let np = scale * sp.powf(1.0 / self.p);
        let den = gn + l2;
        let r = np / den;
        let grad = (0..u.len())
            .map(|n| {
                let dnp = w[n] * (u[n].abs() / np).powf(self.p - 1.0) * u[n].signum();
                let dgn = if gn > 0.0 { dgrad[n] / gn } else { 0.0 };
                let dl2 = w[n] * u[n] / l2;
                dnp / den - np * (dgn + dl2) / (den * den)
            })
            .collect();
        (r, grad)
    }
}

fn random_start(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let offset = rng.gen_range(-1.0..1.0);
    let center = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    let center = [center[0] * grid.extents[0], center[1] * grid.extents[1], center[2] * grid.extents[2]];
    let width: f64 = rng.gen_range(0.1..0.5);
    let height = rng.gen_range(0.5..3.0);
    let modes: Vec<Mode> = (0..3)
        .map(|_| {
            let k = [0, 1, 2].map(|a| if a < grid.dim { rng.gen_range(-2i32..=2) as f64 } else { 0.0 });
            Mode::cos(rng.gen_range(-0.5..0.5), k)
        })
        .collect();
    grid.coords()
        .iter()
        .map(|x| {
            let bump = height * (-grid.distance_sq(x, &center) / (width * width)).exp();
            offset + bump + modes.iter().map(|m| m.eval(x, &grid.extents)).sum::<f64>()
        })
        .collect()
}

/// Maximizes `‖u‖_{2d/(d−2)} / (‖∇u‖₂ + ‖u‖₂)` by normalized gradient ascent
/// with a monotone step control from 20 starts (the first is `u ≡ 1`).
pub fn sobolev_constant_estimate(grid: &Grid, seed: u64) -> Result<SobolevEstimate> {
    if grid.dim < 3 {
        return Err(Error::InvalidParameter(format!(
            "Sobolev exponent needs d >= 3, got d = {}",
            grid.dim
        )));
    }
    let ray = Rayleigh::new(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![];
    for k in 0..20 {
        let mut u = if k == 0 { vec![1.0; grid.len()] } else { random_start(grid, &mut rng) };
        let (r0, mut grad) = ray.eval(&u);
        let mut r = r0;
        let mut step = 0.1;
        for _ in 0..400 {
            let unorm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm == 0.0 || step < 1e-10 {
                break;
            }
            let trial: Vec<f64> = u.iter().zip(&grad).map(|(a, g)| a + step * unorm * g / gnorm).collect();
            let (rt, gt) = ray.eval(&trial);
            if rt > r {
                u = trial;
                r = rt;
                grad = gt;
                step *= 1.5;
            } else {
                step *= 0.5;
            }
        }
        starts.push((r0, r));
    }
    Ok(SobolevEstimate {
        sigma_hat: starts.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max),
        exponent: ray.p,
        starts,
    })
}

/// `R(u)` alone; exposed for scaling checks.
pub fn sobolev_quotient(u: &ScalarField) -> f64 {
    Rayleigh::new(u.grid()).eval(u.values()).0
}

/// `‖D²u‖_{L^p} / ‖Δu‖_{L^p}` per sample; `None` where `Δu` vanishes.
pub fn cz_ratios(samples: &[ScalarField], p: f64) -> Result<Vec<Option<f64>>> {
    if !(p > 1.0) {
        return Err(Error::InvalidExponent(format!("p must exceed 1, got {p}")));
    }
    samples
        .iter()
        .map(|u| {
            let grid = u.grid();
            let lap: Vec<f64> = laplace_beltrami(u).values().iter().map(|v| v.abs()).collect();
            let den = lq_of_values(grid, &lap, p)?;
            let scale = u.max_abs().max(1.0);
            if den <= 1e-12 * scale {
                return Ok(None);
            }
            Ok(Some(lq_of_values(grid, hessian(u).magnitude().values(), p)? / den))
        })
        .collect()
}

/// Largest [`cz_ratios`] entry: an empirical lower bound for the
/// Calderón–Zygmund constant.
pub fn cz_ratio(samples: &[ScalarField], p: f64) -> Result<f64> {
    cz_ratios(samples, p)?
        .into_iter()
        .flatten()
        .reduce(f64::max)
        .ok_or(Error::AllHarmonic)
}

/// Random trigonometric polynomial with integer wavevectors `|k_a| ≤ kmax`.
pub fn random_band_limited(grid: &Arc<Grid>, rng: &mut ChaCha8Rng, kmax: i32) -> ScalarField {
    let nmodes = rng.gen_range(1..=6);
    let terms: Vec<Mode> = (0..nmodes)
        .map(|_| {
            let k = [0, 1, 2].map(|a| if a < grid.dim { rng.gen_range(-kmax..=kmax) as f64 } else { 0.0 });
            Mode {
                amplitude: rng.gen_range(-1.0..1.0),
                wavevector: k,
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();
    ScalarField::from_source(grid, &ScalarSource::Modes { terms })
}

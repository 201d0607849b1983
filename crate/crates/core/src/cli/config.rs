//! Run configuration: TOML text with `[domain]`, `[metric]`, `[problem]`,
//! `[experiment]`, `[mfg]` and `[output]` sections. Unknown keys are
//! rejected; standing assumptions are checked before anything is solved.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimates::SweepSpec;
use crate::fields::{lq_of_values, VectorField};
use crate::geometry::{build_grid, ConformalFactor, DomainKind, DomainSpec, Grid, MetricSpec};
use crate::mfg::{self, ExponentGate, GatePolicy, MfgSpec};
use crate::sources::{Mode, ScalarSource};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub domain: DomainBlock,
    pub metric: MetricBlock,
    pub problem: ProblemBlock,
    pub experiment: ExperimentBlock,
    pub mfg: Option<MfgBlock>,
    pub output: OutputBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainBlock {
    pub kind: DomainKind,
    pub dim: usize,
    /// Nodes per axis (radial nodes on the disc).
    pub n: usize,
    /// Per-axis override of `n`.
    pub resolution: Option<Vec<usize>>,
    pub extents: Option<Vec<f64>>,
    pub radius: f64,
    /// Angular nodes on the disc; defaults to `4n`.
    pub n_theta: Option<usize>,
}

impl Default for DomainBlock {
    fn default() -> Self {
        DomainBlock {
            kind: DomainKind::Torus,
            dim: 3,
            n: 16,
            resolution: None,
            extents: None,
            radius: 1.0,
            n_theta: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Euclidean,
    Conformal,
}

/// `g = e^{2φ}δ` with `φ = constant + Σ modes`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricBlock {
    pub kind: MetricKind,
    pub constant: f64,
    pub modes: Vec<Mode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemBlock {
    pub gamma: f64,
    pub f: ScalarSource,
    pub b: ScalarSource,
    /// Contravariant drift components; empty means `B = 0`.
    pub drift: Vec<ScalarSource>,
    /// `s` in `‖B‖_{L^s} ≤ θ`.
    pub drift_exponent: f64,
    pub theta: Option<f64>,
    /// `solve` runs the manufactured-solution study instead of `f`.
    pub manufactured: bool,
}

impl Default for ProblemBlock {
    fn default() -> Self {
        ProblemBlock {
            gamma: 2.0,
            f: ScalarSource::Zero,
            b: ScalarSource::Zero,
            drift: vec![],
            drift_exponent: 4.0,
            theta: None,
            manufactured: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentBlock {
    pub amplitudes: Vec<f64>,
    /// `p` for `thm1-sweep` (default 2), `q` for `thm2-sweep` (default 2.5).
    pub exponent: Option<f64>,
    pub slope_threshold: f64,
    pub delta: f64,
    /// Constant `C` of the shape function `ζ`.
    pub c: f64,
    /// Random draws per check in `bernstein-audit`.
    pub samples: usize,
    /// Refinement ladder (nodes per axis) for `solve` with a manufactured
    /// solution and `bochner-check`; each has its own default.
    pub resolutions: Option<Vec<usize>>,
    /// Minimum observed order asserted by the refinement studies.
    pub min_order: Option<f64>,
    pub test_function: Option<ScalarSource>,
    pub sobolev_resolution: usize,
    pub cz_samples: usize,
    pub cz_kmax: i32,
    pub cz_exponents: Vec<f64>,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        ExperimentBlock {
            amplitudes: vec![1.0, 3.0, 10.0, 30.0, 100.0],
            exponent: None,
            slope_threshold: 0.05,
            delta: 0.3,
            c: 1e-3,
            samples: 100_000,
            resolutions: None,
            min_order: None,
            test_function: None,
            sobolev_resolution: 10,
            cz_samples: 50,
            cz_kmax: 4,
            cz_exponents: vec![2.0, 4.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfgBlock {
    pub alpha: f64,
    pub c_v: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub max_outer: usize,
    pub tol: f64,
    pub continuation: bool,
    pub gate_policy: GatePolicy,
}

impl Default for MfgBlock {
    fn default() -> Self {
        let s = MfgSpec::new(DomainSpec::unit_torus(3, 16), 2.0, 1.0, 0.05);
        MfgBlock {
            alpha: s.alpha,
            c_v: s.c_v,
            epsilon: s.epsilon,
            tau: s.tau,
            max_outer: s.max_outer,
            tol: s.tol,
            continuation: s.continuation,
            gate_policy: s.gate_policy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
    pub svg: bool,
    /// Dump solution fields as CSV.
    pub fields: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: None,
            svg: true,
            fields: false,
        }
    }
}

/// Outcome of one standing-assumption check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateRecord {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

impl GateRecord {
    fn pass(label: &str, detail: impl Into<String>) -> Self {
        GateRecord {
            label: label.into(),
            passed: true,
            detail: detail.into(),
        }
    }
}

fn gate_err(label: &str, message: impl Into<String>) -> Error {
    Error::Gate {
        assumption: label.into(),
        message: message.into(),
    }
}

/// Parses and validates a config. Syntax errors and unknown keys carry the
/// 1-based line number; gate failures carry the assumption label.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0);
        Error::Syntax {
            line,
            message: e.message().trim().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn domain_spec(&self) -> DomainSpec {
        let d = &self.domain;
        let mut spec = match d.kind {
            DomainKind::Disc => DomainSpec::disc(d.radius, d.n, d.n_theta.unwrap_or(4 * d.n)),
            kind => DomainSpec {
                kind,
                dim: d.dim,
                extents: d.extents.clone().unwrap_or_else(|| vec![1.0; d.dim]),
                resolution: vec![d.n; d.dim],
                radius: 0.0,
            },
        };
        if let Some(r) = &d.resolution {
            spec.resolution = r.clone();
        }
        if spec.kind == DomainKind::Torus && self.metric.kind == MetricKind::Conformal {
            spec.kind = DomainKind::ConformalTorus;
        }
        spec
    }

    pub fn metric_spec(&self) -> MetricSpec {
        match self.metric.kind {
            MetricKind::Euclidean => MetricSpec::Euclidean,
            MetricKind::Conformal => MetricSpec::conformal(ConformalFactor {
                constant: self.metric.constant,
                modes: self.metric.modes.clone(),
            }),
        }
    }

    /// The domain with `n` nodes on every axis.
    pub fn domain_at(&self, n: usize) -> DomainSpec {
        let mut spec = self.domain_spec();
        match spec.kind {
            DomainKind::Disc => spec.resolution = vec![n, 4 * n],
            _ => spec.resolution = vec![n; spec.dim],
        }
        spec
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        build_grid(&self.domain_spec(), &self.metric_spec())
            .map(Arc::new)
            .map_err(|e| match e {
                Error::InvalidDomain(m) | Error::Unsupported(m) => gate_err("(D1)", m),
                e => e,
            })
    }

    pub fn mfg_spec(&self) -> Option<MfgSpec> {
        self.mfg.as_ref().map(|m| MfgSpec {
            domain: self.domain_spec(),
            gamma: self.problem.gamma,
            alpha: m.alpha,
            c_v: m.c_v,
            b: self.problem.b.clone(),
            epsilon: m.epsilon,
            tau: m.tau,
            max_outer: m.max_outer,
            tol: m.tol,
            continuation: m.continuation,
            gate_policy: m.gate_policy,
        })
    }

    /// Sweep family `f = t·f₀` with `f₀ = problem.f`; `default_exponent`
    /// applies when the experiment block leaves it unset.
    pub fn sweep_spec(&self, default_exponent: f64) -> SweepSpec {
        SweepSpec {
            domain: self.domain_spec(),
            metric: self.metric_spec(),
            gamma: self.problem.gamma,
            base: self.problem.f.clone(),
            drift: self.problem.drift.clone(),
            drift_exponent: self.problem.drift_exponent,
            theta: self.problem.theta,
            amplitudes: self.experiment.amplitudes.clone(),
            exponent: self.experiment.exponent.unwrap_or(default_exponent),
            slope_threshold: self.experiment.slope_threshold,
            sobolev_resolution: self.experiment.sobolev_resolution,
            seed: self.seed,
        }
    }

    pub fn has_drift(&self) -> bool {
        self.problem.drift.iter().any(|s| *s != ScalarSource::Zero)
    }

    pub fn drift_field(&self, grid: &Arc<Grid>) -> Option<VectorField> {
        if !self.has_drift() {
            return None;
        }
        let mut comps = self.problem.drift.clone();
        comps.resize(grid.dim, ScalarSource::Zero);
        Some(VectorField::from_sources(grid, &comps))
    }

    /// Checks (In1), (MFG1), (MFG3), (D1), (D2), (In2) and (MFG2), in that
    /// order, and returns one record per check.
    pub fn validate(&self) -> Result<Vec<GateRecord>> {
        let mut out = vec![];
        let gamma = self.problem.gamma;
        if !(gamma > 1.0) {
            return Err(gate_err("(In1)", format!("gamma > 1 required, got {gamma}")));
        }
        out.push(GateRecord::pass("(In1)", format!("gamma = {gamma} > 1")));

        if let Some(spec) = self.mfg_spec() {
            let gate = mfg::standing_gates(&spec, self.domain.dim)?;
            out.push(GateRecord::pass(
                "(MFG1)",
                format!("C_V = {} >= max(alpha, 1/alpha)", spec.c_v),
            ));
            out.push(mfg3_record(&gate));
        }

        let grid = self.grid()?;
        out.push(GateRecord::pass(
            "(D1)",
            format!("{:?} domain, d = {}", grid.kind, grid.dim),
        ));
        let kappa = grid.ricci_lower_bound();
        if !kappa.is_finite() {
            return Err(gate_err("(D2)", "Ricci lower bound is not finite"));
        }
        out.push(GateRecord::pass("(D2)", format!("kappa = {kappa}")));

        if let Some(b) = self.drift_field(&grid) {
            let s = self.problem.drift_exponent;
            let d = grid.dim as f64;
            if !(s > d) {
                return Err(gate_err("(In2)", format!("drift exponent s = {s} must exceed d = {d}")));
            }
            let norm = lq_of_values(&grid, b.magnitude().values(), s)?;
            if let Some(theta) = self.problem.theta {
                if norm > theta {
                    return Err(gate_err("(In2)", format!("||B||_L^{s} = {norm} exceeds theta = {theta}")));
                }
            }
            out.push(GateRecord::pass("(In2)", format!("s = {s} > d, ||B||_L^s = {norm}")));
        }

        if let Some(spec) = self.mfg_spec() {
            let (_, min_dnu) = mfg::check_gates(&spec)?;
            if let Some(v) = min_dnu {
                out.push(GateRecord::pass("(MFG2)", format!("min d_nu b = {v:e}")));
            }
        }
        Ok(out)
    }
}

fn mfg3_record(gate: &ExponentGate) -> GateRecord {
    GateRecord {
        label: "(MFG3)".into(),
        passed: gate.pass,
        detail: format!(
            "gamma = {} vs d/(d-2) = {}, alpha = {} vs {}",
            gate.gamma, gate.gamma_threshold, gate.alpha, gate.alpha_threshold
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(e: Error) -> String {
        match e {
            Error::Gate { assumption, .. } => assumption,
            other => panic!("expected a gate error, got {other}"),
        }
    }

    #[test]
    fn minimal_torus_config_parses() {
        let cfg = parse_config("[domain]\nkind = \"torus\"\nn = 8\n[problem]\ngamma = 2.0\n").unwrap();
        assert_eq!(cfg.domain_spec(), DomainSpec::unit_torus(3, 8));
        let gates = cfg.validate().unwrap();
        assert!(gates.iter().all(|g| g.passed));
        assert!(gates.iter().any(|g| g.label == "(In1)"));
    }

    #[test]
    fn empty_config_is_valid() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
    }

    #[test]
    fn gamma_below_one_cites_in1() {
        let e = parse_config("[problem]\ngamma = 0.9\n").unwrap_err();
        assert_eq!(label(e.clone()), "(In1)");
        assert!(e.to_string().contains("gamma > 1"));
    }

    #[test]
    fn mfg3_rejects_five_dimensional_example() {
        // d = 5, γ = 2: γ′ = 2, threshold 2/(5−2−2) = 2 < 2.1
        let e = parse_config("[domain]\ndim = 5\n[problem]\ngamma = 2.0\n[mfg]\nalpha = 2.1\nc_v = 3.0\n").unwrap_err();
        assert_eq!(label(e), "(MFG3)");
    }

    #[test]
    fn mfg3_can_be_recorded() {
        let cfg = parse_config(
            "[domain]\nn = 8\n[problem]\ngamma = 2.0\n[mfg]\nalpha = 1.0\ngate_policy = \"record\"\n",
        )
        .unwrap();
        let gates = cfg.validate().unwrap();
        let g = gates.iter().find(|g| g.label == "(MFG3)").unwrap();
        assert!(!g.passed);
    }

    #[test]
    fn unknown_key_reports_line() {
        match parse_config("seed = 1\n[domain]\nn = 8\nbogus = 3\n") {
            Err(Error::Syntax { line, message }) => {
                assert_eq!(line, 4, "{message}");
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        match parse_config("[domain]\nn = 8\nkind = \n") {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn drift_exponent_gate() {
        let text = "[domain]\nn = 8\n[problem]\ngamma = 3.0\ndrift_exponent = 3.0\n\
                    drift = [{ family = \"modes\", terms = [{ amplitude = 1.0, wavevector = [0, 1, 0], phase = -1.5707963267948966 }] }]\n";
        assert_eq!(label(parse_config(text).unwrap_err()), "(In2)");
        let ok = text.replace("drift_exponent = 3.0", "drift_exponent = 4.0");
        let gates = parse_config(&ok).unwrap().validate().unwrap();
        assert!(gates.iter().any(|g| g.label == "(In2)" && g.passed));
    }

    #[test]
    fn conformal_metric_turns_torus_conformal() {
        let text = "[domain]\nn = 8\n[metric]\nkind = \"conformal\"\n\
                    modes = [{ amplitude = 0.1, wavevector = [1, 0, 0] }]\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.domain_spec().kind, DomainKind::ConformalTorus);
        assert!(cfg.metric_spec().is_conformal());
    }

    #[test]
    fn conformal_box_cites_d1() {
        let text = "[domain]\nkind = \"box\"\nn = 8\n[metric]\nkind = \"conformal\"\n";
        assert_eq!(label(parse_config(text).unwrap_err()), "(D1)");
    }

    #[test]
    fn mfg2_rejects_inward_b() {
        // b = sin(πx₁): ∂_ν b = −π on both x₁ faces
        let text = "[domain]\nkind = \"box\"\nn = 9\n[problem]\ngamma = 4.0\n\
                    b = { family = \"modes\", terms = [{ amplitude = 1.0, wavevector = [0.5, 0, 0], phase = -1.5707963267948966 }] }\n\
                    [mfg]\nalpha = 1.0\n";
        assert_eq!(label(parse_config(text).unwrap_err()), "(MFG2)");
    }
}

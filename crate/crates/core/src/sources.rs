//! Parametric families for scalar data (sources, shifts, conformal factors,
//! drift components). They are plain data so run configs can name them.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::geometry::Grid;

/// `amplitude * cos(2π Σ k_i x_i / L_i + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub amplitude: f64,
    pub wavevector: [f64; 3],
    #[serde(default)]
    pub phase: f64,
}

impl Mode {
    pub fn cos(amplitude: f64, wavevector: [f64; 3]) -> Self {
        Mode {
            amplitude,
            wavevector,
            phase: 0.0,
        }
    }

    pub fn sin(amplitude: f64, wavevector: [f64; 3]) -> Self {
        Mode {
            amplitude,
            wavevector,
            phase: -PI / 2.0,
        }
    }

    pub fn eval(&self, x: &[f64; 3], extents: &[f64; 3]) -> f64 {
        let arg: f64 = (0..3)
            .map(|i| 2.0 * PI * self.wavevector[i] * x[i] / extents[i])
            .sum::<f64>()
            + self.phase;
        self.amplitude * arg.cos()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarSource {
    Zero,
    Constant {
        value: f64,
    },
    Modes {
        terms: Vec<Mode>,
    },
    /// `amplitude * exp(-|x - center|² / width²)`, periodic distance on tori.
    Bump {
        center: [f64; 3],
        width: f64,
        amplitude: f64,
    },
    /// `amplitude * min(cap, |x - center|^(-d/exponent))`: unbounded-looking
    /// data that is only just in L^exponent, capped at `cap`.
    PowerProfile {
        center: [f64; 3],
        exponent: f64,
        cap: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for ScalarSource {
    fn default() -> Self {
        ScalarSource::Zero
    }
}

impl ScalarSource {
    pub fn cos_mode(amplitude: f64, wavevector: [f64; 3]) -> Self {
        ScalarSource::Modes {
            terms: vec![Mode::cos(amplitude, wavevector)],
        }
    }

    pub fn sin_mode(amplitude: f64, wavevector: [f64; 3]) -> Self {
        ScalarSource::Modes {
            terms: vec![Mode::sin(amplitude, wavevector)],
        }
    }

    /// `cos(πx₁)cos(πx₂)cos(πx₃)` on the unit cube (restricted to the first
    /// `dim` factors), written as a sum of modes.
    pub fn cosine_product(dim: usize) -> Self {
        let half = 0.5;
        let terms = match dim {
            2 => vec![
                Mode::cos(0.5, [half, half, 0.0]),
                Mode::cos(0.5, [half, -half, 0.0]),
            ],
            _ => vec![
                Mode::cos(0.25, [half, half, half]),
                Mode::cos(0.25, [half, half, -half]),
                Mode::cos(0.25, [half, -half, half]),
                Mode::cos(0.25, [-half, half, half]),
            ],
        };
        ScalarSource::Modes { terms }
    }

    pub fn eval(&self, x: &[f64; 3], grid: &Grid) -> f64 {
        match self {
            ScalarSource::Zero => 0.0,
            ScalarSource::Constant { value } => *value,
            ScalarSource::Modes { terms } => terms.iter().map(|m| m.eval(x, &grid.extents)).sum(),
            ScalarSource::Bump {
                center,
                width,
                amplitude,
            } => {
                let r2 = grid.distance_sq(x, center);
                amplitude * (-r2 / (width * width)).exp()
            }
            ScalarSource::PowerProfile {
                center,
                exponent,
                cap,
                amplitude,
            } => {
                let r = grid.distance_sq(x, center).sqrt();
                let v = if r > 0.0 {
                    r.powf(-(grid.dim as f64) / exponent)
                } else {
                    f64::INFINITY
                };
                amplitude * v.min(*cap)
            }
        }
    }
}

//! The concave profile `h(t) = 2/(1+δ) (1+t)^{(1+δ)/2}` applied to
//! `w = ½|∇u|²`, and the identity profile `1 + t` (its formal δ = 1 limit).

use serde::Serialize;

use crate::error::{Error, Result};

pub trait Profile {
    fn h(&self, t: f64) -> f64;
    fn dh(&self, t: f64) -> f64;
    fn ddh(&self, t: f64) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HFunction {
    delta: f64,
}

impl HFunction {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0,1), got {delta}")));
        }
        Ok(HFunction { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Inverse of `h` on `[h(0), ∞)`: `((1+δ)z/2)^{2/(1+δ)} − 1`.
    pub fn inverse(&self, z: f64) -> f64 {
        let d = self.delta;
        ((1.0 + d) * z / 2.0).powf(2.0 / (1.0 + d)) - 1.0
    }
}

impl Profile for HFunction {
    fn h(&self, t: f64) -> f64 {
        let d = self.delta;
        2.0 / (1.0 + d) * (1.0 + t).powf((1.0 + d) / 2.0)
    }

    fn dh(&self, t: f64) -> f64 {
        (1.0 + t).powf((self.delta - 1.0) / 2.0)
    }

    fn ddh(&self, t: f64) -> f64 {
        let d = self.delta;
        (d - 1.0) / 2.0 * (1.0 + t).powf((d - 3.0) / 2.0)
    }
}

/// `h(t) = 1 + t`: with it the weighted Bochner residual reduces to the plain one.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearProfile;

impl Profile for LinearProfile {
    fn h(&self, t: f64) -> f64 {
        1.0 + t
    }
    fn dh(&self, _t: f64) -> f64 {
        1.0
    }
    fn ddh(&self, _t: f64) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HCheck {
    pub name: &'static str,
    pub samples: usize,
    pub violations: usize,
    pub max_violation: f64,
}

/// Relative violation of `lhs ≥ rhs` (zero or negative when satisfied).
pub fn violation(lhs: f64, rhs: f64) -> f64 {
    (rhs - lhs) / 1f64.max(lhs.abs()).max(rhs.abs())
}

pub const SLACK: f64 = 1e-12;

/// Samples the three identities/inequalities of the profile and `h'' < 0`
/// on `t = 0` plus `n − 1` log-spaced points in `[1e-8, 1e6]`.
pub fn h_checks(hf: &HFunction, n: usize) -> Vec<HCheck> {
    let d = hf.delta;
    let ts: Vec<f64> = std::iter::once(0.0)
        .chain((0..n.saturating_sub(1)).map(|i| 10f64.powf(-8.0 + 14.0 * i as f64 / (n.max(3) - 2) as f64)))
        .collect();
    let mut out = vec![];
    let mut run = |name: &'static str, f: &dyn Fn(f64) -> f64| {
        let mut viol = 0;
        let mut max_v = f64::NEG_INFINITY;
        for &t in &ts {
            let v = f(t);
            max_v = max_v.max(v);
            if v > SLACK {
                viol += 1;
            }
        }
        out.push(HCheck {
            name,
            samples: ts.len(),
            violations: viol,
            max_violation: max_v.max(0.0),
        });
    };
    run("h1", &|t| violation((1.0 + t).powf(d / 2.0), hf.dh(t) * t.sqrt()));
    run("h2", &|t| violation(hf.dh(t) + 2.0 * t * hf.ddh(t), d * hf.dh(t)));
    run("h3", &|t| {
        let z = hf.h(t);
        let a = hf.dh(t);
        let b = ((d + 1.0) / 2.0 * z).powf((d - 1.0) / (1.0 + d));
        // identity: both one-sided violations
        ((a - b) / a.abs().max(b.abs()).max(1.0)).abs()
    });
    run("h''<0", &|t| {
        // strictly negative second derivative: report ddh relative to dh
        let v = hf.ddh(t);
        if v < 0.0 {
            0.0
        } else {
            1.0
        }
    });
    out
}

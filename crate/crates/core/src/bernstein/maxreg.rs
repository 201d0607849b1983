//! Exponents of the maximal-regularity argument.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct MaxRegParams {
    pub d: usize,
    pub gamma: f64,
    pub q: f64,
    pub delta: f64,
    /// `(2/d)·d(γ−1)/γ + ((d−2)/d)·q`.
    pub p_formula: f64,
    /// Exponent actually used: `p_formula` when it exceeds 2, otherwise the
    /// midpoint of `(2, q)`.
    pub p: f64,
    pub p_substituted: bool,
    pub beta: f64,
    pub eta: f64,
    pub phi: f64,
    pub c_gamma: f64,
    /// `η − [((δ−1)/(1+δ))·p/(p−2) + β·2/(p−2)]`.
    pub bo1_defect: f64,
    /// `(β+1)·d/(d−2) − γq/(1+δ)`; zero unless `p` was substituted, then positive.
    pub bo2_defect: f64,
}

/// `c(γ) = max{1, 2^{γ−2}/γ²}`.
pub fn c_gamma(gamma: f64) -> f64 {
    1f64.max(2f64.powf(gamma - 2.0) / (gamma * gamma))
}

/// Lower bound the integrability exponent must exceed: `max{d(γ−1)/γ, 2}`.
pub fn q_threshold(d: usize, gamma: f64) -> f64 {
    (d as f64 * (gamma - 1.0) / gamma).max(2.0)
}

pub fn maxreg_params(d: usize, gamma: f64, q: f64, delta: f64) -> Result<MaxRegParams> {
    if d < 3 {
        return Err(Error::InvalidParameter(format!("dimension must be at least 3, got {d}")));
    }
    if !(gamma > 1.0) {
        return Err(Error::Gate {
            assumption: "(In1)".into(),
            message: format!("gamma > 1 required, got {gamma}"),
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0,1), got {delta}")));
    }
    let thr = q_threshold(d, gamma);
    if !(q > thr) {
        return Err(Error::Gate {
            assumption: "q > max{d(gamma-1)/gamma, 2}".into(),
            message: format!("q = {q} does not exceed {thr}"),
        });
    }
    let df = d as f64;
    let p_formula = 2.0 / df * (df * (gamma - 1.0) / gamma) + (df - 2.0) / df * q;
    let (p, p_substituted) = if p_formula > 2.0 {
        (p_formula, false)
    } else {
        ((2.0 + q) / 2.0, true)
    };
    let beta = (gamma * (p - 2.0) + 1.0 - delta) / (1.0 + delta);
    let eta = (2.0 * gamma + delta - 1.0) / (1.0 + delta);
    let phi = delta / (2.0 * gamma * gamma * df) * ((delta + 1.0) / 2.0).powf((2.0 * gamma + delta - 1.0) / (delta + 1.0));
    let bo1 = (delta - 1.0) / (1.0 + delta) * p / (p - 2.0) + beta * 2.0 / (p - 2.0);
    Ok(MaxRegParams {
        d,
        gamma,
        q,
        delta,
        p_formula,
        p,
        p_substituted,
        beta,
        eta,
        phi,
        c_gamma: c_gamma(gamma),
        bo1_defect: eta - bo1,
        bo2_defect: (beta + 1.0) * df / (df - 2.0) - gamma * q / (1.0 + delta),
    })
}

impl MaxRegParams {
    /// Exponent `qγ/(1+δ)` of the level-set functional.
    pub fn level_exponent(&self) -> f64 {
        self.q * self.gamma / (1.0 + self.delta)
    }

    /// Both structural identities hold (the second as a strict inequality
    /// after substitution).
    pub fn identities_hold(&self, tol: f64) -> bool {
        let scale = |v: f64| tol * v.abs().max(1.0);
        let bo1 = self.bo1_defect.abs() <= scale(self.eta);
        let bo2 = if self.p_substituted {
            self.bo2_defect > 0.0
        } else {
            self.bo2_defect.abs() <= scale(self.gamma * self.q)
        };
        bo1 && bo2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let m = maxreg_params(4, 2.0, 3.0, 0.1).unwrap();
        assert!((m.p - 2.5).abs() < 1e-15);
        assert!(!m.p_substituted);
        assert!((m.beta - 1.9 / 1.1).abs() < 1e-12);
        assert!((m.eta - 3.1 / 1.1).abs() < 1e-12);
        assert!(m.identities_hold(1e-12));
    }

    #[test]
    fn c_gamma_values() {
        assert_eq!(c_gamma(2.0), 1.0);
        assert!((c_gamma(10.0) - 2.56).abs() < 1e-12);
    }

    #[test]
    fn substitution_when_p_small() {
        // d = 3, γ = 1.5: d(γ−1)/γ = 1, q = 2.2 gives p = 2/3 + 2.2/3 < 2.
        let m = maxreg_params(3, 1.5, 2.2, 0.2).unwrap();
        assert!(m.p_substituted && m.p > 2.0 && m.p < 2.2);
        assert!(m.bo2_defect > 0.0);
        assert!(m.identities_hold(1e-12));
    }

    #[test]
    fn hypothesis_gate() {
        assert!(matches!(maxreg_params(3, 3.0, 1.5, 0.1), Err(Error::Gate { .. })));
        assert!(matches!(maxreg_params(3, 3.0, 2.0, 0.1), Err(Error::Gate { .. })));
        assert!(maxreg_params(2, 3.0, 2.5, 0.1).is_err());
    }
}

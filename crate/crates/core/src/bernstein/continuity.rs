//! Functions of the level-set continuity argument:
//! `φ(y) = y^{(d−2)/d} − y`, its two-root structure, the shape function `ζ`
//! and the thresholds `t*`, `k*`.

use serde::Serialize;

use super::maxreg::{maxreg_params, MaxRegParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct ContinuityTools {
    pub d: usize,
    pub y_star: f64,
    pub phi_star: f64,
    pub c: f64,
    pub params: MaxRegParams,
    /// `(q−p)/q`.
    pub a: f64,
    /// Largest admissible `t*`, if any (none when `ζ(t) ≥ t` throughout).
    pub t_star: Option<f64>,
}

pub fn phi(d: usize, y: f64) -> f64 {
    y.powf((d as f64 - 2.0) / d as f64) - y
}

pub fn y_star(d: usize) -> f64 {
    ((d as f64 - 2.0) / d as f64).powf(d as f64 / 2.0)
}

/// Bisects a sign change of `g` on `[lo, hi]` down to adjacent floats.
fn bisect<G: Fn(f64) -> f64>(g: G, mut lo: f64, mut hi: f64) -> f64 {
    let glo = g(lo);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (g(mid) > 0.0) == (glo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if g(lo).abs() <= g(hi).abs() {
        lo
    } else {
        hi
    }
}

pub fn continuity_tools(d: usize, q: f64, gamma: f64, delta: f64, c: f64) -> Result<ContinuityTools> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("zeta constant must be positive, got {c}")));
    }
    let params = maxreg_params(d, gamma, q, delta)?;
    let a = (q - params.p) / q;
    if a - params.p * delta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "zeta does not vanish at 0: (q-p)/q - p*delta = {} <= 0 (decrease delta)",
            a - params.p * delta
        )));
    }
    let ys = y_star(d);
    let mut tools = ContinuityTools {
        d,
        y_star: ys,
        phi_star: phi(d, ys),
        c,
        params,
        a,
        t_star: None,
    };
    tools.t_star = tools.find_t_star();
    Ok(tools)
}

impl ContinuityTools {
    pub fn phi(&self, y: f64) -> f64 {
        phi(self.d, y)
    }

    pub fn zeta(&self, t: f64) -> f64 {
        let pd = self.params.p * self.params.delta;
        self.c * (t + t.powf(self.a) + t.powf(self.a - pd))
    }

    /// Roots `y⁻ ≤ y* ≤ y⁺` of `φ(y) = ζ̄`.
    pub fn roots(&self, zeta_bar: f64) -> Result<(f64, f64)> {
        if !(zeta_bar >= 0.0) || zeta_bar >= self.phi_star {
            return Err(Error::NoRoots {
                level: zeta_bar,
                max: self.phi_star,
            });
        }
        let g = |y: f64| self.phi(y) - zeta_bar;
        let lo = if zeta_bar == 0.0 { 0.0 } else { bisect(g, 0.0, self.y_star) };
        let hi = if zeta_bar == 0.0 { 1.0 } else { bisect(g, self.y_star, 1.0) };
        Ok((lo, hi))
    }

    /// Largest `t < φ*` with `ζ(t) < min(t, φ*(1 − 1e−6))`; by monotonicity
    /// of `ζ` every `s ≤ t` then satisfies `ζ(s) < t`.
    fn find_t_star(&self) -> Option<f64> {
        let cap = self.phi_star * (1.0 - 1e-6);
        let ok = |t: f64| self.zeta(t) < t.min(cap);
        let n = 10_000;
        let (lo_exp, hi_exp) = ((cap * 1e-12).log10(), cap.log10());
        let pts: Vec<f64> = (0..n)
            .map(|i| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / (n - 1) as f64))
            .collect();
        let last = (0..n).rev().find(|&i| ok(pts[i]))?;
        if last == n - 1 {
            return Some(pts[last]);
        }
        let t = bisect(|t| if ok(t) { 1.0 } else { -1.0 }, pts[last], pts[last + 1]);
        Some(if ok(t) { t } else { pts[last] })
    }

    /// `k* = 2/(1+δ)(1 + ½(‖∇u‖_{L¹}/t*)²)^{(1+δ)/2}`.
    pub fn k_star(&self, grad_l1: f64) -> Option<f64> {
        let t = self.t_star?;
        let d = self.params.delta;
        Some(2.0 / (1.0 + d) * (1.0 + 0.5 * (grad_l1 / t).powi(2)).powf((1.0 + d) / 2.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let t = continuity_tools(4, 3.0, 2.0, 0.01, 1e-3).unwrap();
        assert!((t.y_star - 0.25).abs() < 1e-15);
        assert!((t.phi_star - 0.25).abs() < 1e-15);
        assert!((y_star(3) - 0.192_450_089_729_875_25).abs() < 1e-12);
        assert!((phi(3, y_star(3)) - 0.384_900_179_459_750_5).abs() < 1e-12);
    }

    #[test]
    fn roots_of_zero_and_positive_levels() {
        let t = continuity_tools(3, 2.5, 3.0, 0.01, 1e-3).unwrap();
        assert_eq!(t.roots(0.0).unwrap(), (0.0, 1.0));
        for z in [1e-6, 0.1, 0.3, 0.38] {
            let (lo, hi) = t.roots(z).unwrap();
            assert!(lo < t.y_star && t.y_star < hi && hi <= 1.0);
            assert!((t.phi(lo) - z).abs() <= 1e-12);
            assert!((t.phi(hi) - z).abs() <= 1e-12);
        }
        assert!(matches!(t.roots(0.39), Err(Error::NoRoots { .. })));
    }

    #[test]
    fn t_star_exists_for_small_constant_and_not_for_unit_constant() {
        let t = continuity_tools(3, 2.5, 3.0, 0.01, 1e-3).unwrap();
        let ts = t.t_star.expect("window exists");
        assert!(ts > 0.0 && ts < t.phi_star);
        assert!(t.zeta(ts) < ts);
        for i in 0..100 {
            let s = ts * i as f64 / 100.0;
            assert!(t.zeta(s) < ts);
        }
        let ks = t.k_star(0.5).unwrap();
        assert!(ks > 2.0 / 1.01);
        let none = continuity_tools(3, 2.5, 3.0, 0.01, 1.0).unwrap();
        assert!(none.t_star.is_none() && none.k_star(1.0).is_none());
    }

    #[test]
    fn zeta_must_vanish_at_origin() {
        assert!(continuity_tools(3, 2.5, 3.0, 0.9, 1e-3).is_err());
    }
}

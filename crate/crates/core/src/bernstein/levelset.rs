//! Super-level sets `Ω_k = {z > k}` of `z = h(w)` and the functional
//! `y_k = ∫_{Ω_k} (z − k)₊^{qγ/(1+δ)}`.

use serde::Serialize;

use super::hfun::HFunction;
use super::maxreg::MaxRegParams;
use crate::error::{Error, Result};
use crate::fields::ScalarField;

#[derive(Clone, Debug, Serialize)]
pub struct LevelSetData {
    pub k: f64,
    #[serde(skip)]
    pub mask: Vec<bool>,
    #[serde(skip)]
    pub z_k: Vec<f64>,
    pub volume: f64,
    pub y_k: f64,
    pub exponent: f64,
    /// `‖w^{1/2}‖_{L¹} / ((((1+δ)k/2)^{2/(1+δ)} − 1)^{1/2})`, `+∞` when the
    /// denominator is not positive.
    pub chebyshev_bound: f64,
    pub chebyshev_holds: bool,
}

pub fn level_sets(z: &ScalarField, k: f64, params: &MaxRegParams) -> Result<LevelSetData> {
    if !(k >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be nonnegative, got {k}")));
    }
    let hf = HFunction::new(params.delta)?;
    let grid = z.grid();
    let exponent = params.level_exponent();
    let mut mask = vec![false; grid.len()];
    let mut z_k = vec![0.0; grid.len()];
    let mut volume = 0.0;
    let mut y_k = 0.0;
    let mut root_w_l1 = 0.0;
    for (n, &zn) in z.values().iter().enumerate() {
        let wt = grid.weights()[n];
        root_w_l1 += wt * hf.inverse(zn).max(0.0).sqrt();
        if zn > k {
            mask[n] = true;
            z_k[n] = zn - k;
            volume += wt;
            y_k += wt * z_k[n].powf(exponent);
        }
    }
    let denom = hf.inverse(k);
    let chebyshev_bound = if denom > 0.0 {
        root_w_l1 / denom.sqrt()
    } else {
        f64::INFINITY
    };
    Ok(LevelSetData {
        k,
        mask,
        z_k,
        volume,
        y_k,
        exponent,
        chebyshev_holds: volume <= chebyshev_bound * (1.0 + 1e-12),
        chebyshev_bound,
    })
}

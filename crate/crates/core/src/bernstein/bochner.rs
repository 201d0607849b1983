//! Discrete Bochner identities and the boundary sign lemma.

use serde::Serialize;

use super::hfun::{HFunction, Profile};
use crate::error::{Error, Result};
use crate::fields::{gradient, hessian, laplace_beltrami, metric_dot, tensor_norm_sq, ScalarField, VectorField};
use crate::geometry::{second_fundamental_form, Grid};
use crate::stats::observed_order;

/// `w`, `z = h(w)`, `z⁽¹⁾ = h′(w)`, `z⁽²⁾ = h″(w)` for a given `u`.
#[derive(Clone, Debug)]
pub struct BernsteinState {
    pub delta: f64,
    pub w: ScalarField,
    pub z: ScalarField,
    pub z1: ScalarField,
    pub z2: ScalarField,
}

impl BernsteinState {
    pub fn new(u: &ScalarField, delta: f64) -> Result<Self> {
        let hf = HFunction::new(delta)?;
        let w = energy(&gradient(u));
        Ok(BernsteinState {
            delta,
            z: w.map(|t| hf.h(t)),
            z1: w.map(|t| hf.dh(t)),
            z2: w.map(|t| hf.ddh(t)),
            w,
        })
    }

    /// Largest deviation from `z⁽¹⁾ = ((δ+1)z/2)^{(δ−1)/(1+δ)}`.
    pub fn identity_defect(&self) -> f64 {
        let d = self.delta;
        self.z
            .values()
            .iter()
            .zip(self.z1.values())
            .map(|(z, z1)| (z1 - ((d + 1.0) / 2.0 * z).powf((d - 1.0) / (1.0 + d))).abs())
            .fold(0.0, f64::max)
    }
}

/// `½|X|²`.
pub fn energy(x: &VectorField) -> ScalarField {
    x.dot(x).scaled(0.5)
}

/// `Σ Ric_ij X^i X^j` node-wise.
fn ricci_term(grid: &Grid, x: &VectorField) -> Vec<f64> {
    (0..grid.len())
        .map(|n| {
            let ric = grid.ricci(n);
            let v = x.values()[n];
            let mut s = 0.0;
            for i in 0..grid.dim {
                for j in 0..grid.dim {
                    s += ric[i][j] * v[i] * v[j];
                }
            }
            s
        })
        .collect()
}

/// `Δw − g(∇Δu, ∇u) − |D²u|² − Ric(∇u, ∇u)` with `w = ½|∇u|²`.
pub fn bochner_residual(u: &ScalarField) -> ScalarField {
    weighted_residual(u, &super::hfun::LinearProfile)
}

/// `Δz − z⁽¹⁾(g(∇Δu,∇u) + |D²u|² + Ric(∇u,∇u)) − z⁽²⁾|D²u(∇u)|²`.
pub fn weighted_bochner_residual(u: &ScalarField, delta: f64) -> Result<ScalarField> {
    Ok(weighted_residual(u, &HFunction::new(delta)?))
}

/// Weighted residual for an arbitrary profile `h`. `Δz` is taken through the
/// chain rule `h′(w)Δw + h″(w)|∇w|²`, which keeps the discrete residual exact
/// whenever `w` is quadratic.
pub fn weighted_residual<P: Profile>(u: &ScalarField, profile: &P) -> ScalarField {
    let grid = u.grid().clone();
    let grad = gradient(u);
    let w = energy(&grad);
    let lap_w = laplace_beltrami(&w);
    let grad_w = gradient(&w);
    let cross = gradient(&laplace_beltrami(u)).dot(&grad);
    let ric = ricci_term(&grid, &grad);
    let hess = hessian(u);
    let hv = hess.apply(&grad);
    let values = (0..grid.len())
        .map(|n| {
            let t = w.values()[n];
            let hh = tensor_norm_sq(&grid, n, &hess.values()[n]);
            let hv2 = metric_dot(&grid, n, &hv.values()[n], &hv.values()[n]);
            let gw2 = metric_dot(&grid, n, &grad_w.values()[n], &grad_w.values()[n]);
            let lap_z = profile.dh(t) * lap_w.values()[n] + profile.ddh(t) * gw2;
            lap_z - profile.dh(t) * (cross.values()[n] + hh + ric[n]) - profile.ddh(t) * hv2
        })
        .collect();
    ScalarField::new(grid, values).expect("lengths agree")
}

#[derive(Clone, Debug, Serialize)]
pub struct RefinementStudy {
    pub resolutions: Vec<usize>,
    pub spacings: Vec<f64>,
    pub errors: Vec<f64>,
    pub order: f64,
}

/// Runs `err(n)` for each resolution (spacing `1/n`) and fits the order.
pub fn refinement<F>(resolutions: &[usize], err: F) -> Result<RefinementStudy>
where
    F: Fn(usize) -> Result<f64>,
{
    let errors = resolutions.iter().map(|&n| err(n)).collect::<Result<Vec<_>>>()?;
    let spacings: Vec<f64> = resolutions.iter().map(|&n| 1.0 / n as f64).collect();
    Ok(RefinementStudy {
        order: observed_order(&spacings, &errors),
        resolutions: resolutions.to_vec(),
        spacings,
        errors,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundarySignReport {
    pub nodes: Vec<usize>,
    /// `∂_ν w` per evaluated node.
    pub dnu_w: Vec<f64>,
    /// `−II(∇u, ∇u)` per evaluated node.
    pub minus_ii: Vec<f64>,
    pub max_discrepancy: f64,
    pub max_dnu_w: f64,
    /// Nodes where `∂_ν w` exceeds the tolerance.
    pub flagged: Vec<usize>,
}

/// Fourth-order one-sided derivative along `axis` at an end node of a
/// non-periodic line. The generic second-order end stencil would leave an
/// `O(h³)·∂⁴w` error that dominates `∂_ν w` near flat faces.
fn one_sided_derivative(grid: &Grid, v: &[f64], n: usize, axis: usize) -> f64 {
    const C: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
    let ijk = grid.multi_index(n);
    let (dir, start) = if ijk[axis] == 0 { (1isize, 0isize) } else { (-1, ijk[axis] as isize) };
    let mut acc = 0.0;
    for (k, c) in C.iter().enumerate() {
        let mut at = ijk;
        at[axis] = (start + dir * k as isize) as usize;
        acc += c * v[grid.index(at)];
    }
    dir as f64 * acc / (12.0 * grid.spacing[axis])
}

/// Both sides of `∂_ν w = −II(∇u, ∇u)` at face-interior boundary nodes.
pub fn boundary_sign_check(u: &ScalarField, tol: f64) -> Result<BoundarySignReport> {
    let grid = u.grid().clone();
    if !grid.has_boundary() {
        return Err(Error::NoBoundary);
    }
    let sff = second_fundamental_form(&grid)?;
    let grad = gradient(u);
    let w = energy(&grad);
    let mut rep = BoundarySignReport {
        nodes: vec![],
        dnu_w: vec![],
        minus_ii: vec![],
        max_discrepancy: 0.0,
        max_dnu_w: f64::NEG_INFINITY,
        flagged: vec![],
    };
    for (k, &n) in sff.nodes.iter().enumerate() {
        let (axis, sign) = grid.normal_axis(n).expect("face-interior node");
        let g = grid.metric_diag(n);
        let dnu = sign * one_sided_derivative(&grid, w.values(), n, axis) / g[axis].sqrt();
        let x = grad.values()[n];
        let tangents = &sff.tangent_axes[k];
        let ii = &sff.values[k];
        let mut form = 0.0;
        for (p, &a) in tangents.iter().enumerate() {
            for (q, &b) in tangents.iter().enumerate() {
                form += ii[p][q] * x[a] * g[a].sqrt() * x[b] * g[b].sqrt();
            }
        }
        rep.max_discrepancy = rep.max_discrepancy.max((dnu + form).abs());
        rep.max_dnu_w = rep.max_dnu_w.max(dnu);
        if dnu > tol {
            rep.flagged.push(n);
        }
        rep.nodes.push(n);
        rep.dnu_w.push(dnu);
        rep.minus_ii.push(-form);
    }
    Ok(rep)
}

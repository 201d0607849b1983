//! Manufactured-solution convergence study on the unit box:
//! `u* = Π cos(πx_i)` satisfies the Neumann condition, and with γ = 2,
//! `B = 0` the source is `f = dπ² u* + ½|∇u*|²`.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::{solve, ProblemSpec, SolverConfig};
use crate::error::Result;
use crate::fields::ScalarField;
use crate::geometry::{build_grid, DomainSpec, MetricSpec, Vec3};
use crate::stats::{observed_order, pairwise_orders};

pub fn exact(x: &Vec3, dim: usize) -> f64 {
    (0..dim).map(|a| (PI * x[a]).cos()).product()
}

pub fn exact_gradient(x: &Vec3, dim: usize) -> Vec3 {
    let mut g = [0.0; 3];
    for a in 0..dim {
        g[a] = -PI * (PI * x[a]).sin();
        for b in (0..dim).filter(|&b| b != a) {
            g[a] *= (PI * x[b]).cos();
        }
    }
    g
}

pub fn source(x: &Vec3, dim: usize) -> f64 {
    let p = exact_gradient(x, dim);
    dim as f64 * PI * PI * exact(x, dim) + 0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Clone, Debug, Serialize)]
pub struct MmsLevel {
    pub n: usize,
    pub h: f64,
    pub error_inf: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MmsStudy {
    pub dim: usize,
    pub levels: Vec<MmsLevel>,
    pub pairwise_orders: Vec<f64>,
    pub order: f64,
}

/// Solves on `n` nodes per axis for each entry of `resolutions`.
pub fn manufactured_study(dim: usize, resolutions: &[usize], cfg: &SolverConfig) -> Result<MmsStudy> {
    let mut levels = vec![];
    for &n in resolutions {
        let t0 = Instant::now();
        let grid = Arc::new(build_grid(&DomainSpec::unit_box(dim, n), &MetricSpec::Euclidean)?);
        let f = ScalarField::from_fn(&grid, |x| source(x, dim));
        let spec = ProblemSpec::new(&grid, 2.0).with_f(f);
        let rep = solve(&spec, cfg)?;
        let ustar = ScalarField::from_fn(&grid, |x| exact(x, dim));
        levels.push(MmsLevel {
            n,
            h: 1.0 / (n - 1) as f64,
            error_inf: rep.u.dist_inf(&ustar),
            iterations: rep.iterations,
            residual: rep.residual,
            converged: rep.converged,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    let h: Vec<f64> = levels.iter().map(|l| l.h).collect();
    let e: Vec<f64> = levels.iter().map(|l| l.error_inf).collect();
    Ok(MmsStudy {
        dim,
        pairwise_orders: pairwise_orders(&h, &e),
        order: observed_order(&h, &e),
        levels,
    })
}

//! Discrete domains: convex box, flat torus, conformally flat torus and a
//! polar disc, with their metrics, quadrature, boundary normals, curvature.
//!
//! All metrics offered here are diagonal in the chart coordinates, so the
//! metric is stored as per-node scale factors `g_ii`. Vector components are
//! contravariant, tensors covariant.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sources::Mode;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Box,
    Torus,
    ConformalTorus,
    Disc,
}

impl DomainKind {
    pub fn has_boundary(self) -> bool {
        matches!(self, DomainKind::Box | DomainKind::Disc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub dim: usize,
    /// Side lengths per axis (ignored for the disc).
    pub extents: Vec<f64>,
    /// Node count per axis; for the disc `[n_r, n_theta]`.
    pub resolution: Vec<usize>,
    /// Disc radius.
    pub radius: f64,
}

impl DomainSpec {
    pub fn unit_box(dim: usize, n: usize) -> Self {
        DomainSpec {
            kind: DomainKind::Box,
            dim,
            extents: vec![1.0; dim],
            resolution: vec![n; dim],
            radius: 0.0,
        }
    }

    pub fn unit_torus(dim: usize, n: usize) -> Self {
        DomainSpec {
            kind: DomainKind::Torus,
            dim,
            extents: vec![1.0; dim],
            resolution: vec![n; dim],
            radius: 0.0,
        }
    }

    pub fn conformal_torus(dim: usize, n: usize) -> Self {
        DomainSpec {
            kind: DomainKind::ConformalTorus,
            ..DomainSpec::unit_torus(dim, n)
        }
    }

    pub fn disc(radius: f64, n_r: usize, n_theta: usize) -> Self {
        DomainSpec {
            kind: DomainKind::Disc,
            dim: 2,
            extents: vec![radius, 2.0 * PI],
            resolution: vec![n_r, n_theta],
            radius,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDomain(m));
        match self.kind {
            DomainKind::Disc => {
                if self.dim != 2 {
                    return bad("the polar disc is two-dimensional".into());
                }
                if !(self.radius > 0.0) {
                    return bad(format!("disc radius must be positive, got {}", self.radius));
                }
            }
            _ => {
                if !(2..=3).contains(&self.dim) {
                    return bad(format!("dimension must be 2 or 3, got {}", self.dim));
                }
                if self.extents.len() != self.dim || self.extents.iter().any(|&l| !(l > 0.0)) {
                    return bad("one positive extent per axis required".into());
                }
            }
        }
        if self.resolution.len() != self.dim {
            return bad("one resolution per axis required".into());
        }
        if let Some(&n) = self.resolution.iter().find(|&&n| n < 8) {
            return bad(format!("resolution {n} too small (minimum 8 nodes per axis)"));
        }
        Ok(())
    }
}

/// Smooth periodic conformal factor: `constant + Σ modes`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformalFactor {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<Mode>,
}

impl ConformalFactor {
    pub fn constant(c: f64) -> Self {
        ConformalFactor {
            constant: c,
            modes: vec![],
        }
    }

    /// `amplitude * cos(2π x₁)`.
    pub fn cosine_x1(amplitude: f64) -> Self {
        ConformalFactor {
            constant: 0.0,
            modes: vec![Mode::cos(amplitude, [1.0, 0.0, 0.0])],
        }
    }

    pub fn eval(&self, x: &Vec3, extents: &Vec3) -> f64 {
        self.constant + self.modes.iter().map(|m| m.eval(x, extents)).sum::<f64>()
    }
}

/// `g = e^{2φ}·identity` in the chart coordinates, or the flat metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    #[default]
    Euclidean,
    Conformal {
        #[serde(flatten)]
        factor: ConformalFactor,
    },
}

impl MetricSpec {
    pub fn conformal(factor: ConformalFactor) -> Self {
        MetricSpec::Conformal { factor }
    }

    pub fn is_conformal(&self) -> bool {
        matches!(self, MetricSpec::Conformal { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            MetricSpec::Euclidean => "euclidean",
            MetricSpec::Conformal { .. } => "conformal",
        }
    }
}

/// Constants the a priori estimates may depend on. Recorded in reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryBounds {
    pub kappa: f64,
    pub rho: f64,
    pub sigma: f64,
    pub theta: f64,
    pub s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Chart {
    Cartesian,
    Conformal,
    Polar,
}

/// Node-centred structured grid. Axis 0 varies fastest in the linear index.
#[derive(Clone, Debug)]
pub struct Grid {
    pub kind: DomainKind,
    pub dim: usize,
    /// Node counts; unused axes are 1.
    pub shape: [usize; 3],
    pub spacing: Vec3,
    pub extents: Vec3,
    pub periodic: [bool; 3],
    pub metric: MetricSpec,
    chart: Chart,
    coords: Vec<Vec3>,
    weights: Vec<f64>,
    boundary: Vec<bool>,
    face_interior: Vec<bool>,
    normals: Vec<Vec3>,
    phi: Vec<f64>,
    dphi: Vec<Vec3>,
    hess_phi: Vec<Mat3>,
}

/// Builds the node set, masks, normals and quadrature weights.
pub fn build_grid(spec: &DomainSpec, metric: &MetricSpec) -> Result<Grid> {
    spec.validate()?;
    match (spec.kind, metric) {
        (DomainKind::ConformalTorus, MetricSpec::Conformal { .. }) => {}
        (DomainKind::ConformalTorus, MetricSpec::Euclidean) => {
            return Err(Error::InvalidDomain(
                "conformal_torus requires a conformal metric".into(),
            ))
        }
        (_, MetricSpec::Conformal { .. }) => {
            return Err(Error::Unsupported(format!(
                "conformal metric on {:?} domain",
                spec.kind
            )))
        }
        _ => {}
    }

    let dim = spec.dim;
    let mut shape = [1usize; 3];
    let mut spacing = [1.0; 3];
    let mut extents = [1.0; 3];
    let mut periodic = [false; 3];
    let mut origin = [0.0; 3];
    for a in 0..dim {
        shape[a] = spec.resolution[a];
        match spec.kind {
            DomainKind::Box => {
                extents[a] = spec.extents[a];
                spacing[a] = extents[a] / (shape[a] - 1) as f64;
            }
            DomainKind::Torus | DomainKind::ConformalTorus => {
                extents[a] = spec.extents[a];
                spacing[a] = extents[a] / shape[a] as f64;
                periodic[a] = true;
            }
            DomainKind::Disc => {
                if a == 0 {
                    // r in [dr, R]; the origin is excluded.
                    spacing[0] = spec.radius / shape[0] as f64;
                    origin[0] = spacing[0];
                    extents[0] = spec.radius;
                } else {
                    extents[1] = 2.0 * PI;
                    spacing[1] = 2.0 * PI / shape[1] as f64;
                    periodic[1] = true;
                }
            }
        }
    }
    let chart = match spec.kind {
        DomainKind::ConformalTorus => Chart::Conformal,
        DomainKind::Disc => Chart::Polar,
        _ => Chart::Cartesian,
    };

    let len = shape[0] * shape[1] * shape[2];
    let mut grid = Grid {
        kind: spec.kind,
        dim,
        shape,
        spacing,
        extents,
        periodic,
        metric: metric.clone(),
        chart,
        coords: Vec::with_capacity(len),
        weights: vec![0.0; len],
        boundary: vec![false; len],
        face_interior: vec![false; len],
        normals: vec![[0.0; 3]; len],
        phi: vec![],
        dphi: vec![],
        hess_phi: vec![],
    };
    for n in 0..len {
        let ijk = grid.multi_index(n);
        let mut x = [0.0; 3];
        for a in 0..dim {
            x[a] = origin[a] + ijk[a] as f64 * spacing[a];
        }
        grid.coords.push(x);
    }

    if let MetricSpec::Conformal { factor } = metric {
        grid.phi = grid.coords.iter().map(|x| factor.eval(x, &extents)).collect();
        let d: Vec<Vec<f64>> = (0..dim).map(|a| grid.diff(&grid.phi, a)).collect();
        grid.dphi = (0..len)
            .map(|n| {
                let mut v = [0.0; 3];
                for a in 0..dim {
                    v[a] = d[a][n];
                }
                v
            })
            .collect();
        // Pure second derivatives by the compact three-point stencil, mixed by
        // composing centred differences.
        let mut hess = vec![[[0.0; 3]; 3]; len];
        for a in 0..dim {
            let pure = grid.second_diff_compact(&grid.phi, a);
            for n in 0..len {
                hess[n][a][a] = pure[n];
            }
            for b in (a + 1)..dim {
                let mixed = grid.diff(&d[a], b);
                for n in 0..len {
                    hess[n][a][b] = mixed[n];
                    hess[n][b][a] = mixed[n];
                }
            }
        }
        grid.hess_phi = hess;
    }

    for n in 0..len {
        let ijk = grid.multi_index(n);
        let mut w = 1.0;
        for a in 0..dim {
            let end = ijk[a] == 0 || ijk[a] == shape[a] - 1;
            let half = !periodic[a] && end;
            w *= if half { 0.5 * spacing[a] } else { spacing[a] };
        }
        grid.weights[n] = w * grid.sqrt_det(n);
    }

    match spec.kind {
        DomainKind::Box => {
            for n in 0..len {
                let ijk = grid.multi_index(n);
                let mut faces = 0;
                let mut nu = [0.0; 3];
                for a in 0..dim {
                    if ijk[a] == 0 {
                        faces += 1;
                        nu[a] = -1.0;
                    } else if ijk[a] == shape[a] - 1 {
                        faces += 1;
                        nu[a] = 1.0;
                    }
                }
                if faces > 0 {
                    let norm = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
                    grid.boundary[n] = true;
                    grid.face_interior[n] = faces == 1;
                    grid.normals[n] = [nu[0] / norm, nu[1] / norm, nu[2] / norm];
                }
            }
        }
        DomainKind::Disc => {
            // Only the outer circle is boundary; the inner ring r = dr is a
            // coordinate cut around the excluded origin.
            for n in 0..len {
                if grid.multi_index(n)[0] == shape[0] - 1 {
                    grid.boundary[n] = true;
                    grid.face_interior[n] = true;
                    grid.normals[n] = [1.0, 0.0, 0.0];
                }
            }
        }
        _ => {}
    }
    Ok(grid)
}

impl Grid {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn has_boundary(&self) -> bool {
        self.kind.has_boundary()
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.shape[0] * (ijk[1] + self.shape[1] * ijk[2])
    }

    pub fn multi_index(&self, n: usize) -> [usize; 3] {
        let i = n % self.shape[0];
        let r = n / self.shape[0];
        [i, r % self.shape[1], r / self.shape[1]]
    }

    pub fn coord(&self, n: usize) -> &Vec3 {
        &self.coords[n]
    }

    pub fn coords(&self) -> &[Vec3] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    /// Boundary nodes lying on exactly one face (box edges and corners are
    /// excluded from boundary-geometry evaluation).
    pub fn face_interior_mask(&self) -> &[bool] {
        &self.face_interior
    }

    /// Outward unit normal (contravariant components); zero off the boundary.
    pub fn normal(&self, n: usize) -> Vec3 {
        self.normals[n]
    }

    /// Axis along which the outward normal of a face-interior node points,
    /// with its sign.
    pub fn normal_axis(&self, n: usize) -> Option<(usize, f64)> {
        if !self.face_interior[n] {
            return None;
        }
        let nu = self.normals[n];
        (0..self.dim)
            .find(|&a| nu[a] != 0.0)
            .map(|a| (a, nu[a].signum()))
    }

    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn phi(&self, n: usize) -> f64 {
        if self.phi.is_empty() {
            0.0
        } else {
            self.phi[n]
        }
    }

    /// Squared distance, using the minimal image along periodic axes.
    pub fn distance_sq(&self, x: &Vec3, y: &Vec3) -> f64 {
        (0..self.dim)
            .map(|a| {
                let mut dx = (x[a] - y[a]).abs();
                if self.periodic[a] {
                    dx = dx.min(self.extents[a] - dx);
                }
                dx * dx
            })
            .sum()
    }

    /// Diagonal metric coefficients `g_ii` at a node.
    pub fn metric_diag(&self, n: usize) -> Vec3 {
        match self.chart {
            Chart::Cartesian => [1.0; 3],
            Chart::Conformal => {
                let e = (2.0 * self.phi[n]).exp();
                [e, e, e]
            }
            Chart::Polar => {
                let r = self.coords[n][0];
                [1.0, r * r, 1.0]
            }
        }
    }

    /// Riemannian volume density `sqrt(det g)` in the chart.
    pub fn sqrt_det(&self, n: usize) -> f64 {
        match self.chart {
            Chart::Cartesian => 1.0,
            Chart::Conformal => (self.dim as f64 * self.phi[n]).exp(),
            Chart::Polar => self.coords[n][0],
        }
    }

    /// `Γ^k_ij c_k` for a covector `c` at node `n`.
    pub fn christoffel_contract(&self, n: usize, c: &Vec3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        match self.chart {
            Chart::Cartesian => {}
            Chart::Conformal => {
                // Γ^k_ij = δ^k_i ∂_jφ + δ^k_j ∂_iφ − δ_ij ∂_kφ
                let dp = &self.dphi[n];
                let dot: f64 = (0..self.dim).map(|k| dp[k] * c[k]).sum();
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        out[i][j] = c[i] * dp[j] + c[j] * dp[i];
                    }
                    out[i][i] -= dot;
                }
            }
            Chart::Polar => {
                // Γ^r_θθ = −r, Γ^θ_rθ = Γ^θ_θr = 1/r
                let r = self.coords[n][0];
                out[0][1] = c[1] / r;
                out[1][0] = c[1] / r;
                out[1][1] = -r * c[0];
            }
        }
        out
    }

    /// Ricci tensor (covariant chart components) at node `n`.
    pub fn ricci(&self, n: usize) -> Mat3 {
        let mut ric = [[0.0; 3]; 3];
        if self.chart != Chart::Conformal {
            return ric;
        }
        let d = self.dim as f64;
        let dp = &self.dphi[n];
        let hp = &self.hess_phi[n];
        let grad2: f64 = dp.iter().map(|v| v * v).sum();
        let lap: f64 = (0..self.dim).map(|a| hp[a][a]).sum();
        for i in 0..self.dim {
            for j in 0..self.dim {
                ric[i][j] = -(d - 2.0) * (hp[i][j] - dp[i] * dp[j]);
            }
            ric[i][i] -= lap + (d - 2.0) * grad2;
        }
        ric
    }

    /// Centred first difference along `axis`; second-order one-sided at the
    /// ends of non-periodic axes.
    pub fn diff(&self, v: &[f64], axis: usize) -> Vec<f64> {
        let h = self.spacing[axis];
        let periodic = self.periodic[axis];
        self.line_map(v, axis, |line, out| diff_line(line, out, h, periodic))
    }

    /// Transpose of [`Grid::diff`] (as a matrix acting on node values).
    pub fn diff_transpose(&self, v: &[f64], axis: usize) -> Vec<f64> {
        let h = self.spacing[axis];
        let periodic = self.periodic[axis];
        self.line_map(v, axis, |line, out| diff_line_transpose(line, out, h, periodic))
    }

    /// Compact three-point second difference; one-sided four-point at the
    /// ends of non-periodic axes.
    pub fn second_diff_compact(&self, v: &[f64], axis: usize) -> Vec<f64> {
        let h = self.spacing[axis];
        let periodic = self.periodic[axis];
        self.line_map(v, axis, |line, out| {
            let m = line.len();
            let h2 = h * h;
            for i in 0..m {
                out[i] = if periodic {
                    (line[(i + 1) % m] - 2.0 * line[i] + line[(i + m - 1) % m]) / h2
                } else if i == 0 {
                    (2.0 * line[0] - 5.0 * line[1] + 4.0 * line[2] - line[3]) / h2
                } else if i == m - 1 {
                    (2.0 * line[m - 1] - 5.0 * line[m - 2] + 4.0 * line[m - 3] - line[m - 4]) / h2
                } else {
                    (line[i + 1] - 2.0 * line[i] + line[i - 1]) / h2
                };
            }
        })
    }

    fn line_map<F>(&self, v: &[f64], axis: usize, f: F) -> Vec<f64>
    where
        F: Fn(&[f64], &mut [f64]),
    {
        assert_eq!(v.len(), self.len());
        let m = self.shape[axis];
        let stride: usize = self.shape[..axis].iter().product();
        let mut out = vec![0.0; v.len()];
        let mut line = vec![0.0; m];
        let mut res = vec![0.0; m];
        for start in 0..self.len() {
            if self.multi_index(start)[axis] != 0 {
                continue;
            }
            for (i, l) in line.iter_mut().enumerate() {
                *l = v[start + i * stride];
            }
            f(&line, &mut res);
            for (i, r) in res.iter().enumerate() {
                out[start + i * stride] = *r;
            }
        }
        out
    }

    /// κ = max(0, −min smallest eigenvalue of Ric relative to g).
    ///
    /// The conformal factor is normalized to zero node mean before the
    /// eigenvalues are taken, so κ does not change when a constant is added
    /// to φ.
    pub fn ricci_lower_bound(&self) -> f64 {
        if self.chart != Chart::Conformal {
            return 0.0;
        }
        let mean = self.phi.iter().sum::<f64>() / self.len() as f64;
        self.min_relative_ricci(|n| self.phi[n] - mean).min(0.0).abs()
    }

    /// Same as [`Grid::ricci_lower_bound`] without the mean normalization.
    pub fn ricci_lower_bound_unnormalized(&self) -> f64 {
        if self.chart != Chart::Conformal {
            return 0.0;
        }
        self.min_relative_ricci(|n| self.phi[n]).min(0.0).abs()
    }

    fn min_relative_ricci<F: Fn(usize) -> f64>(&self, phi: F) -> f64 {
        let d = self.dim;
        (0..self.len())
            .map(|n| {
                let ric = self.ricci(n);
                let scale = (-2.0 * phi(n)).exp();
                let mut m = Matrix3::<f64>::zeros();
                for i in 0..d {
                    for j in 0..d {
                        m[(i, j)] = ric[i][j] * scale;
                    }
                }
                if d == 2 {
                    let sub = m.fixed_view::<2, 2>(0, 0).into_owned();
                    sub.symmetric_eigenvalues().min()
                } else {
                    m.symmetric_eigenvalues().min()
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Writes `node,x0,x1,x2,weight,boundary`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "node,x0,x1,x2,weight,boundary")?;
        for n in 0..self.len() {
            let x = self.coords[n];
            writeln!(
                out,
                "{},{},{},{},{},{}",
                n, x[0], x[1], x[2], self.weights[n], self.boundary[n] as u8
            )?;
        }
        Ok(())
    }
}

fn diff_line(v: &[f64], out: &mut [f64], h: f64, periodic: bool) {
    let m = v.len();
    let inv = 1.0 / (2.0 * h);
    for i in 0..m {
        out[i] = if periodic {
            (v[(i + 1) % m] - v[(i + m - 1) % m]) * inv
        } else if i == 0 {
            (-3.0 * v[0] + 4.0 * v[1] - v[2]) * inv
        } else if i == m - 1 {
            (3.0 * v[m - 1] - 4.0 * v[m - 2] + v[m - 3]) * inv
        } else {
            (v[i + 1] - v[i - 1]) * inv
        };
    }
}

fn diff_line_transpose(v: &[f64], out: &mut [f64], h: f64, periodic: bool) {
    let m = v.len();
    let inv = 1.0 / (2.0 * h);
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..m {
        let s = v[i] * inv;
        if periodic {
            out[(i + 1) % m] += s;
            out[(i + m - 1) % m] -= s;
        } else if i == 0 {
            out[0] -= 3.0 * s;
            out[1] += 4.0 * s;
            out[2] -= s;
        } else if i == m - 1 {
            out[m - 1] += 3.0 * s;
            out[m - 2] -= 4.0 * s;
            out[m - 3] += s;
        } else {
            out[i + 1] += s;
            out[i - 1] -= s;
        }
    }
}

/// κ of the metric on the grid (see [`Grid::ricci_lower_bound`]).
pub fn ricci_lower_bound(grid: &Grid) -> f64 {
    grid.ricci_lower_bound()
}

/// Second fundamental form at face-interior boundary nodes, expressed in the
/// orthonormal tangent frame of the chart coordinate axes.
#[derive(Clone, Debug)]
pub struct SecondFundamentalForm {
    pub nodes: Vec<usize>,
    /// Tangent coordinate axes per node (length `dim - 1`).
    pub tangent_axes: Vec<Vec<usize>>,
    pub values: Vec<[[f64; 2]; 2]>,
    /// II ⪰ 0 at every evaluated node (convexity, class O⁺).
    pub nonnegative: bool,
}

pub fn second_fundamental_form(grid: &Grid) -> Result<SecondFundamentalForm> {
    if !grid.has_boundary() {
        return Err(Error::NoBoundary);
    }
    let mut sff = SecondFundamentalForm {
        nodes: vec![],
        tangent_axes: vec![],
        values: vec![],
        nonnegative: true,
    };
    for n in 0..grid.len() {
        let Some((axis, sign)) = grid.normal_axis(n) else {
            continue;
        };
        let g = grid.metric_diag(n);
        // ν♭ = g(ν, ·) with ν = sign·e_axis/√g_aa
        let mut nu_flat = [0.0; 3];
        nu_flat[axis] = sign * g[axis].sqrt();
        let gamma = grid.christoffel_contract(n, &nu_flat);
        let tangents: Vec<usize> = (0..grid.dim).filter(|&a| a != axis).collect();
        let mut ii = [[0.0; 2]; 2];
        for (p, &a) in tangents.iter().enumerate() {
            for (q, &b) in tangents.iter().enumerate() {
                ii[p][q] = -gamma[a][b] / (g[a] * g[b]).sqrt();
            }
        }
        let k = tangents.len();
        let min_eig = if k == 1 {
            ii[0][0]
        } else {
            let tr = ii[0][0] + ii[1][1];
            let det = ii[0][0] * ii[1][1] - ii[0][1] * ii[1][0];
            0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt())
        };
        if min_eig < -1e-12 {
            sff.nonnegative = false;
        }
        sff.nodes.push(n);
        sff.tangent_axes.push(tangents);
        sff.values.push(ii);
    }
    Ok(sff)
}

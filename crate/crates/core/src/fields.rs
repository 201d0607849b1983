//! Node-indexed fields and metric-aware calculus.
//!
//! Every derivative is built from the single first-difference operator
//! [`Grid::diff`]. Pure second derivatives are therefore the wide stencil
//! `D₀∘D₀`, which is what makes `divergence ∘ gradient` coincide with the
//! Laplace–Beltrami operator and makes the discrete Fourier symbols of the
//! Hessian and Laplacian consistent on tori.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{Grid, Mat3, Vec3};
use crate::sources::ScalarSource;

#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct VectorField {
    grid: Arc<Grid>,
    values: Vec<Vec3>,
}

#[derive(Clone, Debug)]
pub struct SymTensorField {
    grid: Arc<Grid>,
    values: Vec<Mat3>,
}

fn check_len(grid: &Grid, found: usize) -> Result<()> {
    if grid.len() != found {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            found,
        });
    }
    Ok(())
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len())?;
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        ScalarField {
            values: vec![c; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn from_fn<F: Fn(&Vec3) -> f64>(grid: &Arc<Grid>, f: F) -> Self {
        ScalarField {
            values: grid.coords().iter().map(f).collect(),
            grid: grid.clone(),
        }
    }

    pub fn from_source(grid: &Arc<Grid>, src: &ScalarSource) -> Self {
        Self::from_fn(grid, |x| src.eval(x, grid))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &ScalarField, f: F) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `∫ u ω_vol` by the grid quadrature.
    pub fn integral(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.integral() / self.grid.volume()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max absolute difference to another field.
    pub fn dist_inf(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl VectorField {
    pub fn new(grid: Arc<Grid>, values: Vec<Vec3>) -> Result<Self> {
        check_len(&grid, values.len())?;
        Ok(VectorField { grid, values })
    }

    pub fn from_fn<F: Fn(&Vec3) -> Vec3>(grid: &Arc<Grid>, f: F) -> Self {
        VectorField {
            values: grid.coords().iter().map(f).collect(),
            grid: grid.clone(),
        }
    }

    /// Vector field whose contravariant components are the given sources.
    pub fn from_sources(grid: &Arc<Grid>, comps: &[ScalarSource]) -> Self {
        Self::from_fn(grid, |x| {
            let mut v = [0.0; 3];
            for (a, s) in comps.iter().enumerate().take(grid.dim) {
                v[a] = s.eval(x, grid);
            }
            v
        })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        VectorField {
            values: vec![[0.0; 3]; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|c| *c == 0.0))
    }

    /// `g(X, Y)` node-wise.
    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let g = &self.grid;
        let values = (0..g.len())
            .map(|n| metric_dot(g, n, &self.values[n], &other.values[n]))
            .collect();
        ScalarField {
            grid: g.clone(),
            values,
        }
    }

    /// Pointwise `|X|_g`.
    pub fn magnitude(&self) -> ScalarField {
        let g = &self.grid;
        let values = (0..g.len())
            .map(|n| metric_dot(g, n, &self.values[n], &self.values[n]).sqrt())
            .collect();
        ScalarField {
            grid: g.clone(),
            values,
        }
    }
}

impl SymTensorField {
    pub fn new(grid: Arc<Grid>, mut values: Vec<Mat3>) -> Result<Self> {
        check_len(&grid, values.len())?;
        for m in &mut values {
            symmetrize(m);
        }
        Ok(SymTensorField { grid, values })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[Mat3] {
        &self.values
    }

    /// `Σ g^{ii} A_ii`.
    pub fn trace(&self) -> ScalarField {
        let g = &self.grid;
        let values = (0..g.len())
            .map(|n| {
                let gd = g.metric_diag(n);
                (0..g.dim).map(|i| self.values[n][i][i] / gd[i]).sum()
            })
            .collect();
        ScalarField {
            grid: g.clone(),
            values,
        }
    }

    /// Pointwise `|A|_g = (Σ g^{ii} g^{jj} A_ij²)^{1/2}`.
    pub fn magnitude(&self) -> ScalarField {
        let g = &self.grid;
        let values = (0..g.len())
            .map(|n| tensor_norm_sq(g, n, &self.values[n]).sqrt())
            .collect();
        ScalarField {
            grid: g.clone(),
            values,
        }
    }

    /// The vector `A(X)`: contravariant components `g^{ii} A_ij X^j`.
    pub fn apply(&self, x: &VectorField) -> VectorField {
        let g = &self.grid;
        let values = (0..g.len())
            .map(|n| {
                let gd = g.metric_diag(n);
                let mut v = [0.0; 3];
                for i in 0..g.dim {
                    let s: f64 = (0..g.dim).map(|j| self.values[n][i][j] * x.values[n][j]).sum();
                    v[i] = s / gd[i];
                }
                v
            })
            .collect();
        VectorField {
            grid: g.clone(),
            values,
        }
    }
}

fn symmetrize(m: &mut Mat3) {
    for i in 0..3 {
        for j in (i + 1)..3 {
            let s = 0.5 * (m[i][j] + m[j][i]);
            m[i][j] = s;
            m[j][i] = s;
        }
    }
}

/// `g(X, Y)` at node `n` for contravariant components.
pub fn metric_dot(grid: &Grid, n: usize, x: &Vec3, y: &Vec3) -> f64 {
    let gd = grid.metric_diag(n);
    (0..grid.dim).map(|i| gd[i] * x[i] * y[i]).sum()
}

/// `Σ g^{ii} g^{jj} A_ij²` at node `n` for covariant components.
pub fn tensor_norm_sq(grid: &Grid, n: usize, a: &Mat3) -> f64 {
    let gd = grid.metric_diag(n);
    let mut s = 0.0;
    for i in 0..grid.dim {
        for j in 0..grid.dim {
            s += a[i][j] * a[i][j] / (gd[i] * gd[j]);
        }
    }
    s
}

/// Covariant first differences `D_i u`, one vector per axis.
pub fn covariant_diffs(grid: &Grid, u: &[f64]) -> Vec<Vec<f64>> {
    (0..grid.dim).map(|a| grid.diff(u, a)).collect()
}

pub fn gradient(u: &ScalarField) -> VectorField {
    let g = &u.grid;
    let du = covariant_diffs(g, &u.values);
    let values = (0..g.len())
        .map(|n| {
            let gd = g.metric_diag(n);
            let mut v = [0.0; 3];
            for a in 0..g.dim {
                v[a] = du[a][n] / gd[a];
            }
            v
        })
        .collect();
    VectorField {
        grid: g.clone(),
        values,
    }
}

/// Covariant Hessian `D_iD_j u − Γ^k_ij D_k u`.
pub fn hessian(u: &ScalarField) -> SymTensorField {
    let g = &u.grid;
    let d = g.dim;
    let du = covariant_diffs(g, &u.values);
    let mut values = vec![[[0.0; 3]; 3]; g.len()];
    for i in 0..d {
        for j in i..d {
            let dd = g.diff(&du[j], i);
            if i == j {
                for n in 0..g.len() {
                    values[n][i][i] = dd[n];
                }
            } else {
                // average the two composition orders
                let dd2 = g.diff(&du[i], j);
                for n in 0..g.len() {
                    let s = 0.5 * (dd[n] + dd2[n]);
                    values[n][i][j] = s;
                    values[n][j][i] = s;
                }
            }
        }
    }
    for (n, h) in values.iter_mut().enumerate() {
        let mut c = [0.0; 3];
        for a in 0..d {
            c[a] = du[a][n];
        }
        let gamma = g.christoffel_contract(n, &c);
        for i in 0..d {
            for j in 0..d {
                h[i][j] -= gamma[i][j];
            }
        }
    }
    SymTensorField {
        grid: g.clone(),
        values,
    }
}

/// Trace of the covariant Hessian, computed without storing the tensor.
pub fn laplace_beltrami(u: &ScalarField) -> ScalarField {
    let g = &u.grid;
    let d = g.dim;
    let du = covariant_diffs(g, &u.values);
    let mut out = vec![0.0; g.len()];
    for a in 0..d {
        let dd = g.diff(&du[a], a);
        for n in 0..g.len() {
            out[n] += dd[n] / g.metric_diag(n)[a];
        }
    }
    if g.metric.is_conformal() || g.kind == crate::geometry::DomainKind::Disc {
        for (n, o) in out.iter_mut().enumerate() {
            let mut c = [0.0; 3];
            for a in 0..d {
                c[a] = du[a][n];
            }
            let gamma = g.christoffel_contract(n, &c);
            let gd = g.metric_diag(n);
            for a in 0..d {
                *o -= gamma[a][a] / gd[a];
            }
        }
    }
    ScalarField {
        grid: g.clone(),
        values: out,
    }
}

/// `(1/√g) Σ D_i(√g X^i)`: on tori the negative adjoint of [`gradient`]
/// under the quadrature inner product.
pub fn divergence(x: &VectorField) -> ScalarField {
    let g = &x.grid;
    let mut out = vec![0.0; g.len()];
    let mut comp = vec![0.0; g.len()];
    for a in 0..g.dim {
        for n in 0..g.len() {
            comp[n] = g.sqrt_det(n) * x.values[n][a];
        }
        let d = g.diff(&comp, a);
        for n in 0..g.len() {
            out[n] += d[n];
        }
    }
    for (n, o) in out.iter_mut().enumerate() {
        *o /= g.sqrt_det(n);
    }
    ScalarField {
        grid: g.clone(),
        values: out,
    }
}

/// Discrete boundary flux `∮ g(X, ν) dσ` on a box, by the trapezoid rule on
/// each face. Zero on domains without boundary.
pub fn boundary_flux(x: &VectorField, u: &ScalarField) -> f64 {
    let g = &x.grid;
    if g.kind != crate::geometry::DomainKind::Box {
        return 0.0;
    }
    let mut total = 0.0;
    for n in 0..g.len() {
        if !g.boundary_mask()[n] {
            continue;
        }
        let ijk = g.multi_index(n);
        for a in 0..g.dim {
            let sign = if ijk[a] == 0 {
                -1.0
            } else if ijk[a] == g.shape[a] - 1 {
                1.0
            } else {
                continue;
            };
            // face quadrature weight: product of trapezoid weights along the
            // remaining axes
            let mut w = 1.0;
            for b in (0..g.dim).filter(|&b| b != a) {
                let end = ijk[b] == 0 || ijk[b] == g.shape[b] - 1;
                w *= if end { 0.5 * g.spacing[b] } else { g.spacing[b] };
            }
            total += w * sign * x.values[n][a] * u.values[n];
        }
    }
    total
}

/// Anything with a pointwise metric magnitude `|T|`.
pub trait PointwiseNorm {
    fn grid(&self) -> &Grid;
    fn pointwise(&self) -> Vec<f64>;
}

impl PointwiseNorm for ScalarField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn pointwise(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.abs()).collect()
    }
}

impl PointwiseNorm for VectorField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn pointwise(&self) -> Vec<f64> {
        self.magnitude().values
    }
}

impl PointwiseNorm for SymTensorField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn pointwise(&self) -> Vec<f64> {
        self.magnitude().values
    }
}

fn ser_exponent<S: Serializer>(q: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if q.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*q)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    #[serde(serialize_with = "ser_exponent")]
    pub q: f64,
    pub value: f64,
    pub resolution: [usize; 3],
    pub metric: &'static str,
}

/// `(∫ |T|^q ω_vol)^{1/q}`; `q = ∞` gives the node maximum.
pub fn lq_norm<T: PointwiseNorm + ?Sized>(t: &T, q: f64) -> Result<NormReport> {
    let value = lq_of_values(t.grid(), &t.pointwise(), q)?;
    Ok(NormReport {
        q,
        value,
        resolution: t.grid().shape,
        metric: t.grid().metric.label(),
    })
}

/// L^q norm of nonnegative pointwise magnitudes.
pub fn lq_of_values(grid: &Grid, mags: &[f64], q: f64) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::InvalidExponent(format!("norm exponent must be >= 1, got {q}")));
    }
    if q.is_infinite() {
        return Ok(mags.iter().fold(0.0, |m, v| m.max(*v)));
    }
    // Scale by the maximum to keep large exponents finite.
    let scale = mags.iter().fold(0.0f64, |m, v| m.max(*v));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = grid
        .weights()
        .iter()
        .zip(mags)
        .map(|(w, v)| w * (v / scale).powf(q))
        .sum();
    Ok(scale * s.powf(1.0 / q))
}

/// Writes `node,x0..,<columns>` rows.
fn write_csv_rows<W: Write>(
    grid: &Grid,
    mut out: W,
    names: &[String],
    row: impl Fn(usize) -> Vec<f64>,
) -> Result<()> {
    let mut header = vec!["node".to_string()];
    header.extend((0..grid.dim).map(|a| format!("x{a}")));
    header.extend(names.iter().cloned());
    writeln!(out, "{}", header.join(","))?;
    for n in 0..grid.len() {
        let x = grid.coord(n);
        let mut cells = vec![n.to_string()];
        cells.extend((0..grid.dim).map(|a| x[a].to_string()));
        cells.extend(row(n).iter().map(|v| v.to_string()));
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

impl ScalarField {
    pub fn write_csv<W: Write>(&self, out: W, name: &str) -> Result<()> {
        write_csv_rows(&self.grid, out, &[name.to_string()], |n| vec![self.values[n]])
    }

    /// Binary dump: `HJF1`, three little-endian `u32` extents, then the
    /// values as little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        for s in self.grid.shape {
            out.write_all(&(s as u32).to_le_bytes())?;
        }
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(grid: &Arc<Grid>, mut input: R) -> Result<Self> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(Error::Io("bad field dump magic".into()));
        }
        for a in 0..3 {
            let s = u32::from_le_bytes(header[4 + 4 * a..8 + 4 * a].try_into().unwrap());
            if s as usize != grid.shape[a] {
                return Err(Error::GridMismatch {
                    expected: grid.shape[a],
                    found: s as usize,
                });
            }
        }
        let mut values = Vec::with_capacity(grid.len());
        let mut buf = [0u8; 8];
        for _ in 0..grid.len() {
            input.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        ScalarField::new(grid.clone(), values)
    }
}

const MAGIC: &[u8; 4] = b"HJF1";

impl VectorField {
    pub fn write_csv<W: Write>(&self, out: W, name: &str) -> Result<()> {
        let d = self.grid.dim;
        let names: Vec<String> = (0..d).map(|a| format!("{name}{a}")).collect();
        write_csv_rows(&self.grid, out, &names, |n| self.values[n][..d].to_vec())
    }
}

impl SymTensorField {
    pub fn write_csv<W: Write>(&self, out: W, name: &str) -> Result<()> {
        let d = self.grid.dim;
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
        let names: Vec<String> = pairs.iter().map(|(i, j)| format!("{name}{i}{j}")).collect();
        write_csv_rows(&self.grid, out, &names, |n| {
            pairs.iter().map(|&(i, j)| self.values[n][i][j]).collect()
        })
    }
}

//! Solver discretization: compact seven-point Laplace–Beltrami operator and
//! centred gradient, with homogeneous Neumann conditions imposed by mirror
//! ghost nodes and periodic wrap on tori.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{DomainKind, Grid, Vec3};
use crate::linalg::{Csr, CsrBuilder};

pub struct Stencil {
    grid: Arc<Grid>,
    /// `nbr[n][axis] = [minus, plus]`, ghosts already reflected.
    nbr: Vec<[[usize; 2]; 3]>,
    inv_h2: Vec3,
    inv_2h: Vec3,
    /// Conformal face coefficients `e^{(d−2)φ_face − dφ_n}`; empty when flat.
    face: Vec<[[f64; 2]; 3]>,
    /// `e^{−2φ}`; empty when flat.
    ginv: Vec<f64>,
}

impl Stencil {
    pub fn new(grid: &Arc<Grid>) -> Result<Self> {
        if grid.kind == DomainKind::Disc {
            return Err(Error::Unsupported(
                "the Neumann solver runs on boxes and tori; the disc is a boundary-geometry test domain".into(),
            ));
        }
        let d = grid.dim;
        let mut nbr = vec![[[0usize; 2]; 3]; grid.len()];
        for (n, slot) in nbr.iter_mut().enumerate() {
            let ijk = grid.multi_index(n);
            for a in 0..d {
                let m = grid.shape[a];
                let (lo, hi) = if grid.periodic[a] {
                    ((ijk[a] + m - 1) % m, (ijk[a] + 1) % m)
                } else {
                    let lo = if ijk[a] == 0 { 1 } else { ijk[a] - 1 };
                    let hi = if ijk[a] == m - 1 { m - 2 } else { ijk[a] + 1 };
                    (lo, hi)
                };
                let mut p = ijk;
                p[a] = lo;
                slot[a][0] = grid.index(p);
                p[a] = hi;
                slot[a][1] = grid.index(p);
            }
        }
        let mut inv_h2 = [0.0; 3];
        let mut inv_2h = [0.0; 3];
        for a in 0..d {
            inv_h2[a] = 1.0 / (grid.spacing[a] * grid.spacing[a]);
            inv_2h[a] = 0.5 / grid.spacing[a];
        }
        let (face, ginv) = if grid.metric.is_conformal() {
            let df = d as f64;
            let face = (0..grid.len())
                .map(|n| {
                    let mut c = [[0.0; 2]; 3];
                    for a in 0..d {
                        for s in 0..2 {
                            let mid = 0.5 * (grid.phi(n) + grid.phi(nbr[n][a][s]));
                            c[a][s] = ((df - 2.0) * mid - df * grid.phi(n)).exp();
                        }
                    }
                    c
                })
                .collect();
            let ginv = (0..grid.len()).map(|n| (-2.0 * grid.phi(n)).exp()).collect();
            (face, ginv)
        } else {
            (vec![], vec![])
        };
        Ok(Stencil {
            grid: grid.clone(),
            nbr,
            inv_h2,
            inv_2h,
            face,
            ginv,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// `g^{aa}` at node `n` (isotropic for the metrics the solver supports).
    pub fn ginv(&self, n: usize) -> f64 {
        if self.ginv.is_empty() {
            1.0
        } else {
            self.ginv[n]
        }
    }

    fn face_coeff(&self, n: usize, a: usize, s: usize) -> f64 {
        if self.face.is_empty() {
            1.0
        } else {
            self.face[n][a][s]
        }
    }

    /// Compact Laplace–Beltrami at node `n`.
    pub fn laplacian_at(&self, u: &[f64], n: usize) -> f64 {
        let mut s = 0.0;
        for a in 0..self.dim() {
            let [lo, hi] = self.nbr[n][a];
            s += (self.face_coeff(n, a, 1) * (u[hi] - u[n]) - self.face_coeff(n, a, 0) * (u[n] - u[lo]))
                * self.inv_h2[a];
        }
        s
    }

    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        (0..u.len()).map(|n| self.laplacian_at(u, n)).collect()
    }

    /// Centred covariant gradient `D₀u`; vanishes across Neumann faces.
    pub fn grad_at(&self, u: &[f64], n: usize) -> Vec3 {
        let mut p = [0.0; 3];
        for a in 0..self.dim() {
            let [lo, hi] = self.nbr[n][a];
            p[a] = (u[hi] - u[lo]) * self.inv_2h[a];
        }
        p
    }

    /// `|p|²_g` for a covariant `p`.
    pub fn norm_sq(&self, n: usize, p: &Vec3) -> f64 {
        self.ginv(n) * p.iter().map(|v| v * v).sum::<f64>()
    }

    /// Assembles `diag·I − Δ + Σ_a c_a D₀_a` with per-node transport
    /// coefficients `c` (contravariant components).
    pub fn assemble(&self, transport: &[Vec3], diag: &[f64]) -> Csr {
        let n_nodes = self.grid.len();
        let d = self.dim();
        let mut b = CsrBuilder::new(n_nodes, n_nodes * (2 * d + 1));
        for n in 0..n_nodes {
            let mut centre = diag.get(n).copied().unwrap_or(0.0);
            for a in 0..d {
                let [lo, hi] = self.nbr[n][a];
                let (cl, ch) = (self.face_coeff(n, a, 0), self.face_coeff(n, a, 1));
                b.add(hi, -ch * self.inv_h2[a] + transport[n][a] * self.inv_2h[a]);
                b.add(lo, -cl * self.inv_h2[a] - transport[n][a] * self.inv_2h[a]);
                centre += (ch + cl) * self.inv_h2[a];
            }
            b.add(n, centre);
            b.finish_row();
        }
        b.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, ConformalFactor, DomainSpec, MetricSpec};

    #[test]
    fn assembled_operator_matches_pointwise_laplacian() {
        let grid = Arc::new(
            build_grid(
                &DomainSpec::conformal_torus(3, 8),
                &MetricSpec::conformal(ConformalFactor::cosine_x1(0.3)),
            )
            .unwrap(),
        );
        let st = Stencil::new(&grid).unwrap();
        let u: Vec<f64> = (0..grid.len()).map(|n| (0.1 * n as f64).sin()).collect();
        let a = st.assemble(&vec![[0.0; 3]; grid.len()], &[]);
        let mut au = vec![0.0; grid.len()];
        a.matvec(&u, &mut au);
        for n in 0..grid.len() {
            assert!((au[n] + st.laplacian_at(&u, n)).abs() < 1e-10);
        }
    }

    #[test]
    fn weighted_laplacian_is_symmetric_on_boxes() {
        let grid = Arc::new(build_grid(&DomainSpec::unit_box(2, 9), &MetricSpec::Euclidean).unwrap());
        let st = Stencil::new(&grid).unwrap();
        let a = st.assemble(&vec![[0.0; 3]; grid.len()], &[]).to_dense();
        let w = grid.weights();
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                assert!((w[i] * a[i][j] - w[j] * a[j][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn disc_is_rejected() {
        let grid = Arc::new(build_grid(&DomainSpec::disc(1.0, 8, 16), &MetricSpec::Euclidean).unwrap());
        assert!(matches!(Stencil::new(&grid), Err(Error::Unsupported(_))));
    }
}

//! Independent oracles for derived quantities: each check recomputes the
//! value by a different route than the library.

use std::f64::consts::PI;
use std::sync::Arc;

use hjlab::fields::ScalarField;
use hjlab::geometry::{build_grid, ConformalFactor, DomainSpec, Grid, MetricSpec};
use hjlab::hjb::{self, ProblemSpec, SolverConfig};
use hjlab::mfg;
use hjlab::sources::{Mode, ScalarSource};
use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M3 = [[f64; 3]; 3];

fn grid(spec: DomainSpec, metric: MetricSpec) -> Arc<Grid> {
    Arc::new(build_grid(&spec, &metric).unwrap())
}

// ---------------------------------------------------------------------------
// Ricci curvature from generic Christoffel symbols

/// Fourth-order centred derivative of `f` along `axis`.
fn d4<T, F>(f: F, x: [f64; 3], axis: usize, s: f64) -> T
where
    F: Fn([f64; 3]) -> T,
    T: std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let at = |k: f64| {
        let mut y = x;
        y[axis] += k * s;
        f(y)
    };
    (at(-2.0) - at(2.0) + (at(1.0) - at(-1.0)) * 8.0) * (1.0 / (12.0 * s))
}

#[derive(Clone, Copy)]
struct T3([[[f64; 3]; 3]; 3]);

impl std::ops::Add for T3 {
    type Output = T3;
    fn add(mut self, o: T3) -> T3 {
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    self.0[k][i][j] += o.0[k][i][j];
                }
            }
        }
        self
    }
}

impl std::ops::Sub for T3 {
    type Output = T3;
    fn sub(self, o: T3) -> T3 {
        self + o * -1.0
    }
}

impl std::ops::Mul<f64> for T3 {
    type Output = T3;
    fn mul(mut self, s: f64) -> T3 {
        self.0.iter_mut().flatten().flatten().for_each(|v| *v *= s);
        self
    }
}

#[derive(Clone, Copy)]
struct G(M3);

impl std::ops::Add for G {
    type Output = G;
    fn add(mut self, o: G) -> G {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += o.0[i][j];
            }
        }
        self
    }
}

impl std::ops::Sub for G {
    type Output = G;
    fn sub(self, o: G) -> G {
        self + o * -1.0
    }
}

impl std::ops::Mul<f64> for G {
    type Output = G;
    fn mul(mut self, s: f64) -> G {
        self.0.iter_mut().flatten().for_each(|v| *v *= s);
        self
    }
}

/// Ricci tensor of `g = e^{2φ}δ` from finite differences of the metric and
/// the Christoffel symbols, with no use of the conformal structure.
fn ricci_fd<P: Fn([f64; 3]) -> f64 + Copy>(phi: P, x: [f64; 3], d: usize, s: f64) -> M3 {
    let metric = move |y: [f64; 3]| {
        let mut g = [[0.0; 3]; 3];
        let e = (2.0 * phi(y)).exp();
        for i in 0..d {
            g[i][i] = e;
        }
        G(g)
    };
    let christoffel = move |y: [f64; 3]| {
        let g = metric(y).0;
        let dg: Vec<M3> = (0..d).map(|a| d4(metric, y, a, s).0).collect();
        let mut gam = [[[0.0; 3]; 3]; 3];
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for l in 0..d {
                        let ginv = if k == l { 1.0 / g[k][l] } else { 0.0 };
                        acc += 0.5 * ginv * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
                    }
                    gam[k][i][j] = acc;
                }
            }
        }
        T3(gam)
    };
    let gam = christoffel(x).0;
    let dgam: Vec<[[[f64; 3]; 3]; 3]> = (0..d).map(|a| d4(christoffel, x, a, s).0).collect();
    let mut ric = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += dgam[k][k][i][j] - dgam[j][k][i][k];
                for l in 0..d {
                    acc += gam[k][k][l] * gam[l][i][j] - gam[k][j][l] * gam[l][i][k];
                }
            }
            ric[i][j] = acc;
        }
    }
    ric
}

fn check_ricci(spec: DomainSpec, factor: ConformalFactor) {
    let g = grid(spec, MetricSpec::conformal(factor.clone()));
    let d = g.dim;
    let ext = g.extents;
    let phi = |x: [f64; 3]| factor.eval(&x, &ext);
    let mean = (0..g.len()).map(|n| g.phi(n)).sum::<f64>() / g.len() as f64;
    let mut worst = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for n in 0..g.len() {
        let x = *g.coord(n);
        let oracle = ricci_fd(phi, x, d, 1e-3);
        let lib = g.ricci(n);
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((oracle[i][j] - lib[i][j]).abs());
            }
        }
        let scale = (-2.0 * (phi(x) - mean)).exp();
        let m = Matrix3::from_fn(|i, j| if i < d && j < d { oracle[i][j] * scale } else { 0.0 });
        let e = if d == 2 {
            m.fixed_view::<2, 2>(0, 0).into_owned().symmetric_eigenvalues().min()
        } else {
            m.symmetric_eigenvalues().min()
        };
        min_eig = min_eig.min(e);
    }
    let kappa = (-min_eig).max(0.0);
    assert!(worst <= 1e-3, "Ricci components deviate by {worst:e}");
    let lib = g.ricci_lower_bound();
    assert!(kappa > 0.1, "oracle curvature bound unexpectedly small: {kappa}");
    assert!((lib - kappa).abs() <= 1e-3, "kappa {lib} vs oracle {kappa}");
}

#[test]
fn ricci_and_kappa_match_christoffel_oracle_3d() {
    check_ricci(
        DomainSpec {
            resolution: vec![256, 8, 8],
            ..DomainSpec::conformal_torus(3, 8)
        },
        ConformalFactor::cosine_x1(0.1),
    );
}

#[test]
fn ricci_and_kappa_match_christoffel_oracle_2d_mixed() {
    check_ricci(
        DomainSpec::conformal_torus(2, 256),
        ConformalFactor {
            constant: 0.3,
            modes: vec![Mode::cos(0.1, [1.0, 0.0, 0.0]), Mode::sin(0.05, [1.0, 1.0, 0.0])],
        },
    );
}

// ---------------------------------------------------------------------------
// Ergodic constant from time marching the same one-dimensional stencil

/// Marches `u_t = D²u − H(D₀u) + b` on a periodic 1D grid until `u_t` is
/// spatially constant; that constant is the ergodic value.
fn ergodic_by_time_marching(n: usize, gamma: f64, b: impl Fn(f64) -> f64) -> f64 {
    let h = 1.0 / n as f64;
    let bv: Vec<f64> = (0..n).map(|i| b(i as f64 * h)).collect();
    let mut u = vec![0.0; n];
    let dt = 0.2 * h * h;
    let mut ut = vec![0.0; n];
    for _ in 0..5_000_000 {
        for i in 0..n {
            let (l, r) = ((i + n - 1) % n, (i + 1) % n);
            let p = (u[r] - u[l]) / (2.0 * h);
            let ham = p.abs().powf(gamma) / gamma;
            ut[i] = (u[r] - 2.0 * u[i] + u[l]) / (h * h) - ham + bv[i];
        }
        let (lo, hi) = ut.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if hi - lo < 1e-12 {
            return ut.iter().sum::<f64>() / n as f64;
        }
        for i in 0..n {
            u[i] += dt * ut[i];
        }
    }
    panic!("time marching did not reach a steady profile");
}

fn ergodic_case(gamma: f64, amp: f64) {
    let n = 32;
    let g = grid(
        DomainSpec {
            resolution: vec![n, 8],
            ..DomainSpec::unit_torus(2, 8)
        },
        MetricSpec::Euclidean,
    );
    let b = ScalarField::from_source(&g, &ScalarSource::cos_mode(amp, [1.0, 0.0, 0.0]));
    let spec = ProblemSpec::new(&g, gamma).with_b(b).ergodic();
    let rep = hjb::solve_ergodic(&spec, &SolverConfig::default()).unwrap();
    assert!(rep.converged);
    let lambda = rep.lambda.unwrap();
    let oracle = ergodic_by_time_marching(n, gamma, |x| amp * (2.0 * PI * x).cos());
    assert!((lambda - oracle).abs() <= 1e-6, "lambda {lambda} vs oracle {oracle}");
}

#[test]
fn ergodic_constant_matches_time_marching_quadratic() {
    ergodic_case(2.0, 0.5);
}

#[test]
fn ergodic_constant_matches_time_marching_cubic() {
    ergodic_case(3.0, 2.0);
}

// ---------------------------------------------------------------------------
// Mollifier by brute-force summation over all node pairs

fn brute_mollify(g: &Grid, m: &[f64], eps: f64) -> Vec<f64> {
    let w = g.weights();
    (0..g.len())
        .map(|i| {
            let x = g.coord(i);
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..g.len() {
                let y = g.coord(j);
                let mut r2 = 0.0;
                for a in 0..g.dim {
                    let mut dx = (x[a] - y[a]).abs();
                    if g.periodic[a] {
                        dx = dx.min(g.extents[a] - dx);
                    }
                    r2 += dx * dx;
                }
                let t = 1.0 - r2 / (eps * eps);
                if t > 0.0 {
                    num += t * t * w[j] * m[j];
                    den += t * t * w[j];
                }
            }
            num / den
        })
        .collect()
}

fn mollifier_case(spec: DomainSpec, eps: f64, alpha: f64) {
    let g = grid(spec, MetricSpec::Euclidean);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.2..2.0)).collect();
    let field = ScalarField::new(g.clone(), m.clone()).unwrap();
    let once = mfg::mollify(&field, eps).unwrap();
    let oracle_once = brute_mollify(&g, &m, eps);
    let inner: Vec<f64> = oracle_once.iter().map(|v| v.powf(alpha)).collect();
    let oracle = brute_mollify(&g, &inner, eps);
    let lib = mfg::mollify_coupling(&field, eps, alpha).unwrap();
    for i in 0..g.len() {
        assert!((once.values()[i] - oracle_once[i]).abs() <= 1e-10);
        assert!((lib.values()[i] - oracle[i]).abs() <= 1e-10, "node {i}");
    }
}

#[test]
fn mollifier_matches_brute_force_on_torus() {
    mollifier_case(DomainSpec::unit_torus(2, 16), 0.2, 1.5);
}

#[test]
fn mollifier_matches_brute_force_on_box() {
    mollifier_case(DomainSpec::unit_box(2, 13), 0.25, 2.0);
}

#[test]
fn mollifier_matches_brute_force_in_3d() {
    mollifier_case(DomainSpec::unit_torus(3, 8), 0.3, 1.0);
}

// ---------------------------------------------------------------------------
// Fokker–Planck density from a dense direct solve

/// For quadratic `H` the residual is a quadratic polynomial in `u`, so
/// central differences of any step give the exact Jacobian.
fn dense_jacobian(u: &ScalarField) -> DMatrix<f64> {
    let g = u.grid().clone();
    let n = g.len();
    let spec = ProblemSpec::new(&g, 2.0).ergodic();
    let mut jac = DMatrix::zeros(n, n);
    let step = 0.5;
    for j in 0..n {
        let mut up = u.clone();
        up.values_mut()[j] += step;
        let mut dn = u.clone();
        dn.values_mut()[j] -= step;
        let rp = hjb::residual(&up, &spec).unwrap();
        let rm = hjb::residual(&dn, &spec).unwrap();
        for i in 0..n {
            jac[(i, j)] = (rp.values()[i] - rm.values()[i]) / (2.0 * step);
        }
    }
    jac
}

fn fp_case(spec: DomainSpec) {
    let g = grid(spec, MetricSpec::Euclidean);
    let u = ScalarField::from_fn(&g, |x| {
        0.3 * (2.0 * PI * x[0]).cos() + 0.2 * (2.0 * PI * (x[0] + x[1])).sin()
    });
    let (m, _) = mfg::fp_solve(&u, 2.0).unwrap();
    let n = g.len();
    let mut a = dense_jacobian(&u).transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let rho = a.lu().solve(&rhs).expect("dense system is nonsingular");
    let mass: f64 = rho.iter().sum();
    let w = g.weights();
    let mut worst = 0.0f64;
    for i in 0..n {
        let oracle = rho[i] / w[i] / mass;
        worst = worst.max((m.values()[i] - oracle).abs());
    }
    assert!(worst <= 1e-10, "density deviates by {worst:e}");
    assert!((m.integral() - 1.0).abs() <= 1e-12);
}

#[test]
fn fp_density_matches_dense_solve_on_torus() {
    fp_case(DomainSpec::unit_torus(2, 10));
}

#[test]
fn fp_density_matches_dense_solve_on_box() {
    fp_case(DomainSpec::unit_box(2, 10));
}

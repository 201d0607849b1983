//! Sparse linear algebra for the Newton and Fokker–Planck solves: a CSR
//! matrix, ILU(0), and BiCGSTAB on bordered systems
//!
//! ```text
//! [ A   c ] [x]   [r]
//! [ dᵀ  0 ] [y] = [s]
//! ```
//!
//! which is how the mean-zero normalization and the ergodic constant enter.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

/// Row-by-row assembly. Entries within a row may be pushed in any order and
/// repeated; they are sorted and summed when the row is closed.
pub struct CsrBuilder {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
    row: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n: usize, nnz_hint: usize) -> Self {
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        CsrBuilder {
            n,
            indptr,
            indices: Vec::with_capacity(nnz_hint),
            data: Vec::with_capacity(nnz_hint),
            row: Vec::with_capacity(16),
        }
    }

    pub fn add(&mut self, col: usize, v: f64) {
        self.row.push((col, v));
    }

    pub fn finish_row(&mut self) {
        self.row.sort_by_key(|e| e.0);
        let mut last = usize::MAX;
        for &(c, v) in &self.row {
            if c == last {
                *self.data.last_mut().unwrap() += v;
            } else {
                self.indices.push(c);
                self.data.push(v);
                last = c;
            }
        }
        self.row.clear();
        self.indptr.push(self.indices.len());
    }

    pub fn build(self) -> Csr {
        assert_eq!(self.indptr.len(), self.n + 1, "every row must be closed");
        Csr {
            n: self.n,
            indptr: self.indptr,
            indices: self.indices,
            data: self.data,
        }
    }
}

impl Csr {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.n + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut indices = vec![0; self.indices.len()];
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let k = next[j];
                indices[k] = i;
                data[k] = v;
                next[j] += 1;
            }
        }
        Csr {
            n: self.n,
            indptr: counts,
            indices,
            data,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|e| e.0 == i).map_or(0.0, |e| e.1))
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        m
    }
}

/// Incomplete LU factorization with the sparsity pattern of the matrix.
pub struct Ilu0 {
    lu: Csr,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    /// Factorizes `A + shift·I`.
    pub fn new(a: &Csr, shift: f64) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.n;
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.indptr[i]..lu.indptr[i + 1] {
                if lu.indices[k] == i {
                    diag_pos[i] = k;
                    lu.data[k] += shift;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(Error::Singular(format!("row {i} has no diagonal entry")));
            }
        }
        let mut col_pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.indptr[i], lu.indptr[i + 1]);
            for k in start..end {
                col_pos[lu.indices[k]] = k;
            }
            for k in start..end {
                let j = lu.indices[k];
                if j >= i {
                    break;
                }
                let pivot = lu.data[diag_pos[j]];
                let factor = lu.data[k] / pivot;
                lu.data[k] = factor;
                for kk in (diag_pos[j] + 1)..lu.indptr[j + 1] {
                    let p = col_pos[lu.indices[kk]];
                    if p != usize::MAX {
                        lu.data[p] -= factor * lu.data[kk];
                    }
                }
            }
            if lu.data[diag_pos[i]] == 0.0 || !lu.data[diag_pos[i]].is_finite() {
                return Err(Error::Singular(format!("zero pivot in row {i}")));
            }
            for k in start..end {
                col_pos[lu.indices[k]] = usize::MAX;
            }
        }
        Ok(Ilu0 { lu, diag_pos })
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let lu = &self.lu;
        let n = lu.n;
        for i in 0..n {
            let mut s = b[i];
            for k in lu.indptr[i]..self.diag_pos[i] {
                s -= lu.data[k] * x[lu.indices[k]];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (self.diag_pos[i] + 1)..lu.indptr[i + 1] {
                s -= lu.data[k] * x[lu.indices[k]];
            }
            x[i] = s / lu.data[self.diag_pos[i]];
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearSolveInfo {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB. Stops when `‖b − Ax‖ ≤ rtol·‖b‖ + atol`.
pub fn bicgstab<A, P>(
    apply: A,
    precond: P,
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    atol: f64,
    max_iter: usize,
) -> LinearSolveInfo
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let target = rtol * norm(b) + atol;
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut res = norm(&r);
    if res <= target {
        return LinearSolveInfo {
            iterations: 0,
            residual: res,
            converged: true,
        };
    }
    let mut r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 || omega == 0.0 {
            // breakdown: restart from the current residual
            r0.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond(&p, &mut phat);
        apply(&phat, &mut v);
        let den = dot(&r0, &v);
        if den == 0.0 {
            r0.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            continue;
        }
        alpha = rho / den;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= target {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            apply(x, &mut t);
            let true_res = (0..n).map(|i| (b[i] - t[i]).powi(2)).sum::<f64>().sqrt();
            return LinearSolveInfo {
                iterations: it,
                residual: true_res,
                converged: true_res <= 10.0 * target,
            };
        }
        precond(&s, &mut shat);
        apply(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r);
        if res <= target {
            return LinearSolveInfo {
                iterations: it,
                residual: res,
                converged: true,
            };
        }
    }
    LinearSolveInfo {
        iterations: max_iter,
        residual: res,
        converged: false,
    }
}

/// Bordered system `[A c; dᵀ 0]`, solved by BiCGSTAB with the exact
/// bordered extension of an ILU(0) preconditioner for `A`.
pub struct Bordered<'a> {
    pub a: &'a Csr,
    pub c: &'a [f64],
    pub d: &'a [f64],
}

impl Bordered<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.a.n;
        self.a.matvec(&x[..n], &mut out[..n]);
        let y = x[n];
        for i in 0..n {
            out[i] += self.c[i] * y;
        }
        out[n] = dot(self.d, &x[..n]);
    }

    /// Solves for `(x, y)`; `guess` (length n, or n+1 including `y`) is the
    /// initial iterate.
    pub fn solve(&self, r: &[f64], s: f64, guess: Option<&[f64]>, rtol: f64, atol: f64) -> Result<(Vec<f64>, f64, LinearSolveInfo)> {
        let n = self.a.n;
        let max_diag = self.a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ilu = Ilu0::new(self.a, 1e-4 * max_diag.max(1e-300))?;
        let mut z = vec![0.0; n];
        ilu.solve(self.c, &mut z);
        let dz = dot(self.d, &z);
        if dz == 0.0 || !dz.is_finite() {
            return Err(Error::Singular("bordered preconditioner is singular".into()));
        }
        let precond = |e: &[f64], out: &mut [f64]| {
            ilu.solve(&e[..n], &mut out[..n]);
            let y = (dot(self.d, &out[..n]) - e[n]) / dz;
            for i in 0..n {
                out[i] -= y * z[i];
            }
            out[n] = y;
        };
        let mut rhs = r.to_vec();
        rhs.push(s);
        let mut x = match guess {
            Some(g) if g.len() == n || g.len() == n + 1 => g.to_vec(),
            Some(g) => {
                return Err(Error::GridMismatch {
                    expected: n + 1,
                    found: g.len(),
                })
            }
            None => vec![0.0; n + 1],
        };
        x.resize(n + 1, 0.0);
        let mut info = bicgstab(|v, o| self.apply(v, o), precond, &rhs, &mut x, rtol, atol, 4000);
        if !info.converged {
            // one restart from the best iterate usually recovers stagnation
            let more = bicgstab(|v, o| self.apply(v, o), precond, &rhs, &mut x, rtol, atol, 4000);
            info.iterations += more.iterations;
            info.residual = more.residual;
            info.converged = more.converged;
        }
        let y = x.pop().unwrap();
        Ok((x, y, info))
    }
}

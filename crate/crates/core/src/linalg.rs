//! Small dense and tridiagonal linear algebra used across the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C = Complex64;
pub type CVec = DVector<C>;
pub type CMat = DMatrix<C>;

pub const I: C = C::new(0.0, 1.0);

pub fn c(re: f64) -> C {
    C::new(re, 0.0)
}

/// Square root on the branch with positive imaginary part (cut along [0, ∞)).
pub fn sqrt_im_pos(z: C) -> C {
    let s = z.sqrt();
    if s.im < 0.0 || (s.im == 0.0 && z.re > 0.0 && s.re < 0.0) {
        -s
    } else {
        s
    }
}

/// Spectral norm of a small dense matrix.
pub fn norm2(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |a: f64, &b| a.max(b))
}

pub fn is_real(m: &CMat) -> bool {
    m.iter().all(|v| v.im == 0.0)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (vec![], CMat::zeros(0, 0));
    }
    let h = (m + m.adjoint()) * c(0.5);
    let (vals, vecs) = if is_real(&h) {
        let re = h.map(|v| v.re);
        let e = SymmetricEigen::new(re);
        (e.eigenvalues.iter().copied().collect::<Vec<_>>(), e.eigenvectors.map(c))
    } else {
        let e = SymmetricEigen::new(h);
        (e.eigenvalues.iter().copied().collect::<Vec<_>>(), e.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let sorted_vals = order.iter().map(|&i| vals[i]).collect();
    let sorted_vecs = CMat::from_fn(n, n, |r, k| vecs[(r, order[k])]);
    (sorted_vals, sorted_vecs)
}

/// Solves `A x = λ M x` for Hermitian `A` and Hermitian positive definite `M`.
/// Eigenvectors are M-orthonormal, eigenvalues ascending.
pub fn generalized_hermitian_eigen(a: &CMat, m: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((vec![], CMat::zeros(0, 0)));
    }
    if is_real(a) && is_real(m) {
        let ar = a.map(|v| v.re);
        let mr = m.map(|v| v.re);
        let chol = nalgebra::Cholesky::new(mr)
            .ok_or_else(|| Error::Solver("mass matrix is not positive definite".into()))?;
        let l = chol.l();
        let y = l
            .solve_lower_triangular(&ar)
            .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
        let b = l
            .solve_lower_triangular(&y.transpose())
            .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
        let b = (&b + b.transpose()) * 0.5;
        let e = SymmetricEigen::new(b);
        let vals: Vec<f64> = e.eigenvalues.iter().copied().collect();
        let x = l
            .transpose()
            .solve_upper_triangular(&e.eigenvectors)
            .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&p, &q| vals[p].total_cmp(&vals[q]));
        let sorted_vals = order.iter().map(|&i| vals[i]).collect();
        let sorted_vecs = CMat::from_fn(n, n, |r, k| c(x[(r, order[k])]));
        return Ok((sorted_vals, sorted_vecs));
    }
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| Error::Solver("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    let b = l
        .solve_lower_triangular(&y.adjoint())
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    let (vals, v) = hermitian_eigen(&b);
    let x = l
        .adjoint()
        .solve_upper_triangular(&v)
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    Ok((vals, x))
}

/// LU factorization of a complex tridiagonal matrix with partial pivoting
/// (the row-interchange scheme of LAPACK `gttrf`).
#[derive(Clone, Debug)]
pub struct TridiagLu {
    dl: Vec<C>,
    d: Vec<C>,
    du: Vec<C>,
    du2: Vec<C>,
    ipiv: Vec<bool>,
}

impl TridiagLu {
    /// `lower[i] = A[i+1][i]`, `diag[i] = A[i][i]`, `upper[i] = A[i][i+1]`.
    pub fn new(lower: &[C], diag: &[C], upper: &[C]) -> Result<Self> {
        let n = diag.len();
        let mut dl = lower.to_vec();
        let mut d = diag.to_vec();
        let mut du = upper.to_vec();
        let mut du2 = vec![C::new(0.0, 0.0); n.saturating_sub(2)];
        let mut ipiv = vec![false; n];
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() == 0.0 {
                    return Err(Error::Solver("singular tridiagonal system".into()));
                }
                let f = dl[i] / d[i];
                dl[i] = f;
                d[i + 1] -= f * du[i];
            } else {
                let f = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = f;
                let tmp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = tmp - f * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -f * du[i + 1];
                }
                ipiv[i] = true;
            }
        }
        if n > 0 && d[n - 1].norm() == 0.0 {
            return Err(Error::Solver("singular tridiagonal system".into()));
        }
        Ok(Self { dl, d, du, du2, ipiv })
    }

    pub fn solve_in_place(&self, b: &mut [C]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.ipiv[i] {
                let tmp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tmp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        if n == 0 {
            return;
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, t);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, t);
        x[i] = t;
        w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

fn legendre(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}

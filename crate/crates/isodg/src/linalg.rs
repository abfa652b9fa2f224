//! Dense and banded linear-algebra helpers built on nalgebra.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

/// Solves the symmetric-definite generalized eigenproblem `A x = λ B x`.
///
/// `B` is factored as `L Lᵀ` and the reduced standard problem
/// `L⁻¹ A L⁻ᵀ y = λ y` is solved by a symmetric eigensolver. Eigenvalues are
/// returned in ascending order together with `B`-orthonormal eigenvectors
/// (columns).
pub fn sym_gen_eig(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::InvalidArgument("eigenproblem shape mismatch".into()));
    }
    let chol = Cholesky::new(b.clone())
        .ok_or_else(|| Error::Numerical("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    // C = L⁻¹ A L⁻ᵀ via two triangular solves.
    let y = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let c_t = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let c = (&c_t + c_t.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    let lt = l.transpose();
    for (k, &i) in order.iter().enumerate() {
        let yk = eig.eigenvectors.column(i).into_owned();
        let xk = lt
            .solve_upper_triangular(&yk)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        vecs.set_column(k, &xk);
    }
    Ok((vals, vecs))
}

/// Largest generalized eigenvalue of the symmetric-definite pencil `(A, B)`.
pub fn max_gen_eig(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let (vals, _) = sym_gen_eig(a, b)?;
    vals.last()
        .copied()
        .ok_or_else(|| Error::InvalidArgument("empty eigenproblem".into()))
}

/// Eigenvalues of a general real square matrix via the real Schur form.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidArgument("matrix must be square".into()));
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    let ev = schur.complex_eigenvalues();
    Ok(ev
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect())
}

/// Eigenvalues of a general complex square matrix via the complex Schur form.
pub fn eigenvalues_complex(a: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidArgument("matrix must be square".into()));
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    let (_, t) = schur.unpack();
    let n = t.nrows();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].norm() > 0.0 {
            // Unreduced 2×2 block: solve its characteristic polynomial.
            let (a11, a12, a21, a22) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let tr = a11 + a22;
            let det = a11 * a22 - a12 * a21;
            let disc = (tr * tr - det * 4.0).sqrt();
            out.push((tr + disc) * 0.5);
            out.push((tr - disc) * 0.5);
            i += 2;
        } else {
            out.push(t[(i, i)]);
            i += 1;
        }
    }
    Ok(out)
}

/// Eigenvector of a complex matrix for an (approximate) eigenvalue `lambda`
/// computed by inverse iteration.
pub fn eigenvector_complex(a: &DMatrix<Complex64>, lambda: Complex64) -> Result<DVector<Complex64>> {
    let n = a.nrows();
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let shift = lambda + Complex64::new(1e-10 * scale, 1e-10 * scale);
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] -= shift;
    }
    let lu = m.lu();
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.3));
    for _ in 0..3 {
        let w = lu
            .solve(&v)
            .ok_or_else(|| Error::Numerical("singular inverse-iteration system".into()))?;
        let nrm = w.norm();
        if !nrm.is_finite() || nrm == 0.0 {
            return Err(Error::Numerical("inverse iteration broke down".into()));
        }
        v = w / Complex64::new(nrm, 0.0);
    }
    Ok(v)
}

/// Spectral radius of a real symmetric matrix.
pub fn sym_spectral_radius(a: &DMatrix<f64>) -> f64 {
    let s = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Cholesky factorization of a symmetric positive definite band matrix.
///
/// Storage is row-oriented: `l[i][k]` holds `L[i, i - bw + k]` for
/// `k = 0..=bw` (lower band including the diagonal).
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the dense symmetric matrix `a`, treating entries outside the
    /// half-bandwidth `bw` as zero.
    pub fn new(a: &DMatrix<f64>, bw: usize) -> Result<Self> {
        let n = a.nrows();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        let idx = |i: usize, j: usize| i * w + (j + bw - i);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = a[(i, j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[idx(i, k)] * l[idx(j, k)];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::Numerical(format!(
                            "band matrix not positive definite at pivot {i}"
                        )));
                    }
                    l[idx(i, i)] = s.sqrt();
                } else {
                    l[idx(i, j)] = s / l[idx(j, j)];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let idx = |i: usize, j: usize| i * w + (j + bw - i);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[idx(i, k)] * b[k];
            }
            b[i] = s / self.l[idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n.min(i + bw + 1) {
                s -= self.l[idx(k, i)] * b[k];
            }
            b[i] = s / self.l[idx(i, i)];
        }
    }
}

/// Symmetric positive definite solver: dense Cholesky or banded Cholesky.
#[derive(Clone, Debug)]
pub enum SpdSolver {
    /// Dense Cholesky factorization.
    Dense(Cholesky<f64, Dyn>),
    /// Banded Cholesky factorization.
    Banded(BandedCholesky),
}

impl SpdSolver {
    /// Dimension above which the banded path is selected automatically.
    pub const BANDED_THRESHOLD: usize = 64;

    /// Factors `a` with bandwidth `bw`, choosing dense or banded storage by
    /// the dimension threshold.
    pub fn new(a: &DMatrix<f64>, bw: usize) -> Result<Self> {
        if a.nrows() > Self::BANDED_THRESHOLD {
            Self::banded(a, bw)
        } else {
            Self::dense(a)
        }
    }

    /// Forces the dense path.
    pub fn dense(a: &DMatrix<f64>) -> Result<Self> {
        Cholesky::new(a.clone())
            .map(SpdSolver::Dense)
            .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
    }

    /// Forces the banded path.
    pub fn banded(a: &DMatrix<f64>, bw: usize) -> Result<Self> {
        BandedCholesky::new(a, bw).map(SpdSolver::Banded)
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        match self {
            SpdSolver::Dense(c) => {
                let mut v = DVector::from_column_slice(b);
                c.solve_mut(&mut v);
                b.copy_from_slice(v.as_slice());
            }
            SpdSolver::Banded(c) => c.solve_in_place(b),
        }
    }
}

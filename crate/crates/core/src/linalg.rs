//! Dense numerical primitives shared by the synthesis, learning and
//! simulation layers.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>`; vectorization is column-major throughout, so
//! `vec(M X N) = (Nᵀ ⊗ M) vec(X)` holds with [`kron`] and [`vec`].

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative factor applied on top of `σ_max · max(rows, cols) · ε` when
/// deciding numerical rank.
pub const RANK_TOLERANCE_FACTOR: f64 = 1e3;

/// QR sweeps allowed per row before the real Schur decomposition gives up.
const SCHUR_MAX_ITERATIONS: usize = 200;

pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn ensure_shape(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() == (rows, cols) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Kronecker product `a ⊗ b`, shape `(r₁r₂) × (c₁c₂)`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `a ⊗ b` for column vectors, as a flat vector of length `len(a)·len(b)`.
pub fn kron_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() * b.len());
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// Entrywise (Hadamard) product.
pub fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "hadamard operands {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.component_mul(b))
}

/// Column-major vectorization.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Packed upper triangle of a symmetric matrix, ordered column by column
/// (`(0,0), (0,1), (1,1), (0,2), ...`).
#[derive(Debug, Clone, PartialEq)]
pub struct SymVec {
    dim: usize,
    data: Vec<f64>,
}

impl SymVec {
    pub fn packed_len(dim: usize) -> usize {
        dim * (dim + 1) / 2
    }

    pub fn pack(m: &DMatrix<f64>) -> Result<Self> {
        ensure_square(m, "symmetric matrix")?;
        let dim = m.nrows();
        let mut data = Vec::with_capacity(Self::packed_len(dim));
        for j in 0..dim {
            for i in 0..=j {
                data.push(m[(i, j)]);
            }
        }
        Ok(Self { dim, data })
    }

    pub fn from_packed(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != Self::packed_len(dim) {
            return Err(Error::ShapeMismatch(format!(
                "packed symmetric vector for n = {dim} needs {} entries, got {}",
                Self::packed_len(dim),
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn unpack(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let mut it = self.data.iter();
        for j in 0..self.dim {
            for i in 0..=j {
                let v = *it.next().expect("packed length checked at construction");
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// Duplication matrix `D` with `vec(P) = D · pack(P)` for symmetric `P`.
pub fn duplication_matrix(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n * n, SymVec::packed_len(n));
    let mut col = 0;
    for j in 0..n {
        for i in 0..=j {
            d[(j * n + i, col)] = 1.0;
            d[(i * n + j, col)] = 1.0;
            col += 1;
        }
    }
    d
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    ensure_square(m, "eigenvalue argument")?;
    ensure_finite(m, "eigenvalue argument")?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if let Some(ev) = schur_eigenvalues(m) {
        return Ok(ev);
    }
    // The unshifted QR sweep can stall on matrices that are a multiple of
    // the identity up to roundoff. Removing the mean diagonal and rescaling
    // leaves a generic perturbation that converges normally.
    let n = m.nrows();
    let c = m.trace() / n as f64;
    let e = m - DMatrix::identity(n, n) * c;
    let scale = e.norm();
    if scale == 0.0 {
        return Ok(vec![Complex::new(c, 0.0); n]);
    }
    let ev = schur_eigenvalues(&(e / scale)).ok_or(Error::EigenvalueFailure(n))?;
    Ok(ev.into_iter().map(|z| z * scale + c).collect())
}

fn schur_eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITERATIONS * m.nrows())?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

/// Eigenvalues sorted by decreasing real part, then decreasing imaginary part.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let mut ev = eigenvalues(m)?;
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(ev)
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> Result<bool> {
    Ok(spectral_abscissa(m)? < 0.0)
}

/// Solves `Mᵀ P + P M + S = 0` for symmetric `P` by Kronecker
/// vectorization and dense LU.
pub fn solve_lyapunov(m: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(m, "Lyapunov operator")?;
    let n = m.nrows();
    ensure_shape(s, n, n, "Lyapunov right-hand side")?;
    ensure_finite(m, "Lyapunov operator")?;
    ensure_finite(s, "Lyapunov right-hand side")?;
    let abscissa = spectral_abscissa(m)?;
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz { abscissa });
    }
    let mt = m.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(Mᵀ P) = (I ⊗ Mᵀ) vec P, vec(P M) = (Mᵀ ⊗ I) vec P
    let op = kron(&eye, &mt) + kron(&mt, &eye);
    let rhs = -vec(s);
    let sol = op.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let p = unvec(&sol, n, n);
    Ok(symmetrize(&p))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

/// Induced 2-norm (largest singular value).
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().copied().fold(0.0, f64::max)
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m)
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn rank_threshold(m: &DMatrix<f64>, sigma_max: f64) -> f64 {
    sigma_max * m.nrows().max(m.ncols()) as f64 * f64::EPSILON * RANK_TOLERANCE_FACTOR
}

/// Numerical rank with threshold `σ_max · max(rows, cols) · ε · 10³`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = rank_threshold(m, smax);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Minimum-norm least-squares solution of `a x ≈ b` via the SVD, using
/// the same rank threshold as [`numerical_rank`].
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: DVector<f64>,
    pub rank: usize,
    pub residual: f64,
}

pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LeastSquares> {
    if a.nrows() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "least squares: {} rows vs rhs of length {}",
            a.nrows(),
            b.len()
        )));
    }
    ensure_finite(a, "regression matrix")?;
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression target".into()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = rank_threshold(a, smax).max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let solution = svd
        .solve(b, tol)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let residual = (a * &solution - b).norm();
    Ok(LeastSquares {
        solution,
        rank,
        residual,
    })
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_extremes(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    ensure_square(m, "symmetric matrix")?;
    ensure_finite(m, "symmetric matrix")?;
    let eig = SymmetricEigen::new(symmetrize(m));
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(m, "symmetric matrix")?;
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * (1.0 + m.norm())) {
        return Err(Error::NotPositiveDefinite("square-root argument".into()));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

/// Matrix exponential by scaling and squaring with a degree-6 diagonal
/// Padé approximant.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(m, "matrix exponential argument")?;
    ensure_finite(m, "matrix exponential argument")?;
    let n = m.nrows();
    let norm = m.iter().map(|v| v.abs()).sum::<f64>().max(m.norm());
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let a = m / 2f64.powi(squarings);
    const C: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let eye = DMatrix::<f64>::identity(n, n);
    let mut num = eye.clone() * C[0];
    let mut den = eye.clone() * C[0];
    let mut power = eye.clone();
    for (k, c) in C.iter().enumerate().skip(1) {
        power = &power * &a;
        num += &power * *c;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        den += &power * (sign * c);
    }
    let mut e = den.lu().solve(&num).ok_or(Error::SingularSystem)?;
    for _ in 0..squarings {
        e = &e * &e;
    }
    Ok(e)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    ensure_square(m, what)?;
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

//! Dense matrix primitives shared by the simulator, learner and oracle.
//!
//! Everything here is a pure function over owned or borrowed `nalgebra`
//! matrices. Vectorization is column-stacking throughout, so
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use nalgebra::{Complex, DMatrix, DVector, SVD};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Build a matrix from row-major nested rows, rejecting ragged or non-finite input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    let m = Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(&m, "matrix literal")?;
    Ok(m)
}

/// Row-major nested rows, the inverse of [`matrix_from_rows`].
pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn ensure_square(m: &Matrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Kronecker product of two column vectors.
pub fn kron_vec(a: &Vector, b: &Vector) -> Vector {
    let mut out = Vector::zeros(a.len() * b.len());
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// Column-stacking vectorization.
pub fn vec(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn devec(v: &Vector, rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(Matrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Symmetric matrix stored as its upper triangle, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymParam {
    dim: usize,
    values: Vec<f64>,
}

impl SymParam {
    /// Number of free parameters of an `r x r` symmetric matrix.
    pub const fn count(r: usize) -> usize {
        r * (r + 1) / 2
    }

    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != Self::count(dim) {
            return Err(Error::Dimension(format!(
                "symmetric parameterization of dim {dim} needs {} values, got {}",
                Self::count(dim),
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    /// Compress the upper triangle. The lower triangle is ignored.
    pub fn compress(m: &Matrix) -> Result<Self> {
        ensure_square(m, "symmetric matrix")?;
        let dim = m.nrows();
        let mut values = Vec::with_capacity(Self::count(dim));
        for i in 0..dim {
            for j in i..dim {
                values.push(m[(i, j)]);
            }
        }
        Ok(Self { dim, values })
    }

    pub fn expand(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dim, self.dim);
        let mut idx = 0;
        for i in 0..self.dim {
            for j in i..self.dim {
                m[(i, j)] = self.values[idx];
                m[(j, i)] = self.values[idx];
                idx += 1;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Minimum-norm least-squares solution with rank diagnostics.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: Matrix,
    pub residual_norm: f64,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

impl LeastSquares {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.solution.nrows()
    }
}

/// Solve `min ‖theta x − phi‖` for the minimum-norm `x` via SVD.
///
/// Singular values below `rcond · σ_max` are treated as zero; `rcond`
/// defaults to `ε_mach · max(rows, cols)`. Rank deficiency is reported in
/// the result, never as an error.
pub fn solve_least_squares(theta: &Matrix, phi: &Matrix, rcond: Option<f64>) -> Result<LeastSquares> {
    if theta.nrows() != phi.nrows() {
        return Err(Error::Dimension(format!(
            "least squares: theta has {} rows, phi has {}",
            theta.nrows(),
            phi.nrows()
        )));
    }
    ensure_finite(theta, "least-squares matrix")?;
    ensure_finite(phi, "least-squares right-hand side")?;
    let cols = theta.ncols();
    if theta.is_empty() {
        return Ok(LeastSquares {
            solution: Matrix::zeros(cols, phi.ncols()),
            residual_norm: phi.norm(),
            rank: 0,
            singular_values: Vec::new(),
        });
    }
    let svd = SVD::try_new(theta.clone(), true, true, f64::EPSILON, 0).ok_or(Error::EigenNoConvergence)?;
    let sigma = svd.singular_values.clone();
    let smax = sigma.iter().copied().fold(0.0_f64, f64::max);
    let rcond = rcond.unwrap_or(f64::EPSILON * theta.nrows().max(cols) as f64);
    let cutoff = rcond * smax;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");

    let mut solution = Matrix::zeros(cols, phi.ncols());
    let mut rank = 0;
    for (i, &s) in sigma.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            // x += v_i (u_iᵀ phi) / s
            let coeff = u.column(i).transpose() * phi / s;
            solution += v_t.row(i).transpose() * coeff;
        }
    }
    let residual_norm = (theta * &solution - phi).norm();
    Ok(LeastSquares {
        solution,
        residual_norm,
        rank,
        singular_values: sigma.iter().copied().collect(),
    })
}

/// Numerical rank from singular values `σ_i ≥ tol · σ_max`.
pub fn numerical_rank(m: &Matrix, tol: f64) -> Result<usize> {
    if m.is_empty() {
        return Ok(0);
    }
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, 0).ok_or(Error::EigenNoConvergence)?;
    let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(svd.singular_values.iter().filter(|&&s| s >= tol * smax).count())
}

/// Moore-Penrose pseudo-inverse.
pub fn pseudo_inverse(m: &Matrix) -> Result<Matrix> {
    let eye = Matrix::identity(m.nrows(), m.nrows());
    Ok(solve_least_squares(m, &eye, None)?.solution)
}

/// LU inverse with a reciprocal-condition guard.
pub fn checked_inverse(m: &Matrix, what: &str) -> Result<Matrix> {
    ensure_square(m, what)?;
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    let rcond = 1.0 / (norm1(m) * norm1(&inv));
    if !rcond.is_finite() || rcond < 1e-12 {
        return Err(Error::Singular(format!("{what} (rcond {rcond:.2e})")));
    }
    Ok(inv)
}

/// Induced 1-norm (max column sum).
pub fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// All eigenvalues of a real square matrix.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex<f64>>> {
    ensure_square(a, "eigenvalue input")?;
    ensure_finite(a, "eigenvalue input")?;
    if a.is_empty() {
        return Ok(Vec::new());
    }
    // nalgebra's Schur stalls on the clustered spectra of network models; faer's QR is robust there
    let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let vals = m.eigenvalues().map_err(|_| Error::EigenNoConvergence)?;
    Ok(vals.iter().map(|z| Complex::new(z.re, z.im)).collect())
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_sym_eigenvalue(m: &Matrix) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solve `aᵀ P + P a + q = 0` for symmetric `P`.
///
/// Uses the Kronecker form `(I ⊗ aᵀ + aᵀ ⊗ I) vec(P) = −vec(q)`, which is
/// fine for the state dimensions used here (a few dozen at most).
pub fn lyapunov_solve(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    ensure_square(a, "Lyapunov matrix")?;
    if q.shape() != a.shape() {
        return Err(Error::Dimension("Lyapunov weight must match a".into()));
    }
    let abscissa = spectral_abscissa(a)?;
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz { abscissa });
    }
    let n = a.nrows();
    let eye = Matrix::identity(n, n);
    let at = a.transpose();
    let op = kron(&eye, &at) + kron(&at, &eye);
    let rhs = -vec(q);
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator".into()))?;
    Ok(symmetrize(&devec(&sol, n, n)?))
}

/// Block-diagonal matrix from square or rectangular blocks.
pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows = blocks.iter().map(Matrix::nrows).sum();
    let cols = blocks.iter().map(Matrix::ncols).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        matrix_from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn kron_identity_and_columns() {
        let i2 = Matrix::identity(2, 2);
        assert_eq!(kron(&i2, &i2), Matrix::identity(4, 4));
        let a = m(&[&[1.0], &[2.0]]);
        let b = m(&[&[3.0], &[4.0]]);
        assert_eq!(kron(&a, &b), m(&[&[3.0], &[4.0], &[6.0], &[8.0]]));
        let av = Vector::from_vec(vec![1.0, 2.0]);
        let bv = Vector::from_vec(vec![3.0, 4.0]);
        assert_eq!(kron_vec(&av, &bv), Vector::from_vec(vec![3.0, 4.0, 6.0, 8.0]));
    }

    #[test]
    fn vec_stacks_columns() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(vec(&a).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&Matrix::zeros(2, 2)), Vector::zeros(4));
        assert_eq!(devec(&vec(&a), 2, 2).unwrap(), a);
        assert!(devec(&vec(&a), 3, 2).is_err());
    }

    #[test]
    fn ragged_and_nonfinite_rejected() {
        assert!(matrix_from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(matrix_from_rows(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn sym_param_counts_and_expands() {
        assert_eq!(SymParam::count(2), 3);
        assert_eq!(SymParam::count(5), 15);
        let p = SymParam::new(2, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.expand(), m(&[&[1.0, 2.0], &[2.0, 3.0]]));
        assert_eq!(SymParam::compress(&p.expand()).unwrap(), p);
        assert!(SymParam::new(3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn least_squares_identity_and_duplicates() {
        let eye = Matrix::identity(3, 3);
        let phi = m(&[&[1.0], &[2.0], &[3.0]]);
        let ls = solve_least_squares(&eye, &phi, None).unwrap();
        assert_abs_diff_eq!(ls.solution, phi, epsilon = 1e-14);
        assert_eq!(ls.rank, 3);

        // stacked duplicate rows: consistent, zero residual
        let theta = m(&[&[1.0, 1.0], &[1.0, -1.0], &[1.0, 1.0], &[1.0, -1.0]]);
        let phi = m(&[&[3.0], &[1.0], &[3.0], &[1.0]]);
        let ls = solve_least_squares(&theta, &phi, None).unwrap();
        assert_abs_diff_eq!(ls.solution, m(&[&[2.0], &[1.0]]), epsilon = 1e-12);
        assert!(ls.residual_norm < 1e-12);
    }

    #[test]
    fn least_squares_flags_rank_deficiency_with_min_norm() {
        // two identical columns: min-norm solution splits the weight evenly
        let theta = m(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]);
        let phi = m(&[&[2.0], &[4.0], &[6.0]]);
        let ls = solve_least_squares(&theta, &phi, None).unwrap();
        assert_eq!(ls.rank, 1);
        assert!(ls.rank_deficient());
        assert_abs_diff_eq!(ls.solution, m(&[&[1.0], &[1.0]]), epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_examples() {
        let a = -Matrix::identity(2, 2);
        let q = Matrix::identity(2, 2) * 2.0;
        assert_abs_diff_eq!(lyapunov_solve(&a, &q).unwrap(), Matrix::identity(2, 2), epsilon = 1e-12);

        let a = m(&[&[-1.0, 0.0], &[0.0, -2.0]]);
        let q = m(&[&[2.0, 0.0], &[0.0, 4.0]]);
        assert_abs_diff_eq!(lyapunov_solve(&a, &q).unwrap(), Matrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let err = lyapunov_solve(&a, &Matrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::NotHurwitz { .. }));
    }

    #[test]
    fn spectral_abscissa_examples() {
        assert_abs_diff_eq!(
            spectral_abscissa(&-Matrix::identity(3, 3)).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            spectral_abscissa(&m(&[&[0.0, 1.0], &[0.0, 0.0]])).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let a22 = m(&[&[-0.465, 0.262], &[0.0, -1.0]]);
        assert_abs_diff_eq!(spectral_abscissa(&a22).unwrap(), -0.465, epsilon = 1e-10);
    }

    #[test]
    fn complex_pair_and_badly_scaled() {
        // rotation generator: ±i
        let eig = eigenvalues(&m(&[&[0.0, -1.0], &[1.0, 0.0]])).unwrap();
        assert!(eig
            .iter()
            .all(|z| z.re.abs() < 1e-12 && (z.im.abs() - 1.0).abs() < 1e-12));
        // balancing matters here: upper triangular with huge off-diagonal
        let a = m(&[&[-1.0, 1e8], &[0.0, -2.0]]);
        assert_abs_diff_eq!(spectral_abscissa(&a).unwrap(), -1.0, epsilon = 1e-8);
    }

    #[test]
    fn inverse_guards_singularity() {
        assert!(checked_inverse(&m(&[&[1.0, 2.0], &[2.0, 4.0]]), "x").is_err());
        let inv = checked_inverse(&m(&[&[2.0, 0.0], &[0.0, 4.0]]), "x").unwrap();
        assert_abs_diff_eq!(inv, m(&[&[0.5, 0.0], &[0.0, 0.25]]), epsilon = 1e-15);
    }

    #[test]
    fn block_diag_layout() {
        let b = block_diag(&[Matrix::identity(1, 1), m(&[&[2.0, 3.0]])]);
        assert_eq!(b, m(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 3.0]]));
    }
}

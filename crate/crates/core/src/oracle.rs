//! Model-based ground truth: Kleinman iteration for the CARE, closed-loop
//! costs and pole reports.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, eigenvalues, lyapunov_solve, spectral_abscissa, symmetrize, Matrix, Vector};

const KLEINMAN_TOL: f64 = 1e-10;
const KLEINMAN_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct AreSolution {
    pub p: Matrix,
    pub k: Matrix,
    pub residual: f64,
    pub iterations: usize,
}

/// `aᵀP + Pa + q − P b r⁻¹ bᵀ P` in Frobenius norm.
pub fn are_residual(a: &Matrix, b: &Matrix, q: &Matrix, r_w: &Matrix, p: &Matrix) -> Result<f64> {
    let r_inv = checked_inverse(r_w, "R")?;
    Ok((a.transpose() * p + p * a + q - p * b * r_inv * b.transpose() * p).norm())
}

/// Stabilizing gain by Bass' shifted-Lyapunov construction.
///
/// With `β` beyond the spectrum's leftmost real part, `(A+βI)Z + Z(A+βI)ᵀ = 2BBᵀ`
/// has a positive definite `Z` for controllable `(A, B)`, and `K = BᵀZ⁻¹` moves
/// every closed-loop pole left of `−β`.
pub fn stabilizing_gain(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if spectral_abscissa(a)? < 0.0 {
        return Ok(Matrix::zeros(b.ncols(), n));
    }
    let leftmost = eigenvalues(a)?.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let beta = (-leftmost).max(0.0) + 1.0;
    let shifted = -(a + Matrix::identity(n, n) * beta).transpose();
    let z = lyapunov_solve(&shifted, &(b * b.transpose() * 2.0)).map_err(|_| Error::NoStabilizingGain)?;
    let z_inv = checked_inverse(&z, "Bass Gramian").map_err(|_| Error::NoStabilizingGain)?;
    let k = b.transpose() * z_inv;
    if spectral_abscissa(&(a - b * &k))? >= 0.0 {
        return Err(Error::NoStabilizingGain);
    }
    Ok(k)
}

/// One model-based policy-iteration step: Lyapunov solve for `P_k`, then `K_{k+1} = R⁻¹BᵀP_k`.
pub fn kleinman_step(a: &Matrix, b: &Matrix, q: &Matrix, r_w: &Matrix, k: &Matrix) -> Result<(Matrix, Matrix)> {
    let closed = a - b * k;
    let weight = q + k.transpose() * r_w * k;
    let p = lyapunov_solve(&closed, &weight)?;
    let k_next = checked_inverse(r_w, "R")? * b.transpose() * &p;
    Ok((p, k_next))
}

/// The first `count` Kleinman pairs `(P_k, K_{k+1})` from `k0`.
pub fn kleinman_iterates(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r_w: &Matrix,
    k0: &Matrix,
    count: usize,
) -> Result<Vec<(Matrix, Matrix)>> {
    let mut k = k0.clone();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (p, k_next) = kleinman_step(a, b, q, r_w, &k)?;
        out.push((p, k_next.clone()));
        k = k_next;
    }
    Ok(out)
}

/// Solve the continuous-time ARE by Kleinman iteration.
pub fn care_solve(a: &Matrix, b: &Matrix, q: &Matrix, r_w: &Matrix, k0: Option<&Matrix>) -> Result<AreSolution> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r_w.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Dimension("care_solve: inconsistent a, b, q, r".into()));
    }
    let mut k = match k0 {
        Some(k) => k.clone(),
        None => stabilizing_gain(a, b)?,
    };
    if spectral_abscissa(&(a - b * &k))? >= 0.0 {
        return Err(Error::NoStabilizingGain);
    }
    let mut p_prev: Option<Matrix> = None;
    for it in 1..=KLEINMAN_MAX_ITERS {
        let (p, k_next) = kleinman_step(a, b, q, r_w, &k)?;
        let pn = p.norm();
        if !pn.is_finite() || pn > 1e12 {
            return Err(Error::Diverged {
                iteration: it,
                norm: pn,
            });
        }
        k = k_next;
        if let Some(prev) = &p_prev {
            if (&p - prev).norm() < KLEINMAN_TOL * (1.0 + pn) {
                // final gain comes from the returned P
                let k = checked_inverse(r_w, "R")? * b.transpose() * &p;
                let residual = are_residual(a, b, q, r_w, &p)?;
                return Ok(AreSolution {
                    p,
                    k,
                    residual,
                    iterations: it,
                });
            }
        }
        p_prev = Some(p);
    }
    Err(Error::Diverged {
        iteration: KLEINMAN_MAX_ITERS,
        norm: p_prev.map_or(f64::NAN, |p| p.norm()),
    })
}

/// Lyapunov matrix of the closed loop `a − bk` under weight `q + kᵀ r k`.
pub fn closed_loop_value(a: &Matrix, b: &Matrix, k: &Matrix, q: &Matrix, r_w: &Matrix) -> Result<Matrix> {
    let closed = a - b * k;
    let weight = q + k.transpose() * r_w * k;
    Ok(symmetrize(&lyapunov_solve(&closed, &weight)?))
}

/// Exact infinite-horizon cost `x0ᵀ P_c x0`.
pub fn closed_loop_cost(a: &Matrix, b: &Matrix, k: &Matrix, q: &Matrix, r_w: &Matrix, x0: &Vector) -> Result<f64> {
    let p = closed_loop_value(a, b, k, q, r_w)?;
    Ok(x0.dot(&(p * x0)))
}

/// How closed-loop eigenvalues are split into slow and fast groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoleSplit {
    /// The `count` eigenvalues of smallest magnitude are slow.
    Count(usize),
    /// Eigenvalues with magnitude at most the threshold are slow.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleReport {
    pub slow: Vec<[f64; 2]>,
    pub fast: Vec<[f64; 2]>,
    pub spectral_abscissa: f64,
}

impl PoleReport {
    pub fn slow_real_parts(&self) -> Vec<f64> {
        self.slow.iter().map(|z| z[0]).collect()
    }
}

/// Eigenvalues of `a − b k`, each group sorted by magnitude.
pub fn slow_pole_report(a: &Matrix, b: &Matrix, k: &Matrix, split: PoleSplit) -> Result<PoleReport> {
    let closed = a - b * k;
    let mut eig: Vec<Complex<f64>> = eigenvalues(&closed)?;
    eig.sort_by(|x, y| x.norm().total_cmp(&y.norm()).then(x.im.total_cmp(&y.im)));
    let abscissa = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let cut = match split {
        PoleSplit::Count(c) => c.min(eig.len()),
        PoleSplit::Threshold(th) => eig.iter().take_while(|z| z.norm() <= th).count(),
    };
    let pair = |z: &Complex<f64>| [z.re, z.im];
    Ok(PoleReport {
        slow: eig[..cut].iter().map(pair).collect(),
        fast: eig[cut..].iter().map(pair).collect(),
        spectral_abscissa: abscissa,
    })
}

//! Two-time-scale models: block storage, full-order assembly and the slow reduction.

use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, ensure_finite, spectral_abscissa, Matrix, Vector};
use crate::sim::LtiSystem;

/// `ẏ = A₁₁y + A₁₂z + B₁u`, `εż = A₂₁y + A₂₂z + B₂u`, with `[y; z] = [T; G]x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpSystem {
    pub a11: Matrix,
    pub a12: Matrix,
    pub a21: Matrix,
    pub a22: Matrix,
    pub b1: Matrix,
    pub b2: Matrix,
    pub epsilon: f64,
    pub t_slow: Matrix,
    pub g_fast: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlowSubsystem {
    pub a_s: Matrix,
    pub b_s: Matrix,
}

impl SlowSubsystem {
    pub fn to_lti(&self) -> Result<LtiSystem> {
        LtiSystem::full_state(self.a_s.clone(), self.b_s.clone())
    }
}

impl SpSystem {
    /// Blocks already in slow/fast coordinates (`T = [I 0]`, `G = [0 I]`).
    pub fn new(
        a11: Matrix,
        a12: Matrix,
        a21: Matrix,
        a22: Matrix,
        b1: Matrix,
        b2: Matrix,
        epsilon: f64,
    ) -> Result<Self> {
        let r = a11.nrows();
        let f = a22.nrows();
        let n = r + f;
        let t_slow = Matrix::identity(r, n);
        let mut g_fast = Matrix::zeros(f, n);
        g_fast.view_mut((0, r), (f, f)).fill_with_identity();
        let sp = Self {
            a11,
            a12,
            a21,
            a22,
            b1,
            b2,
            epsilon,
            t_slow,
            g_fast,
        };
        sp.validate()?;
        Ok(sp)
    }

    /// Ingest `ẋ = Ax + Bu` in original coordinates together with `(T, G)`.
    pub fn from_original(a: &Matrix, b: &Matrix, t_slow: Matrix, g_fast: Matrix, epsilon: f64) -> Result<Self> {
        let r = t_slow.nrows();
        let n = a.nrows();
        if t_slow.ncols() != n || g_fast.ncols() != n || r + g_fast.nrows() != n || b.nrows() != n {
            return Err(Error::Dimension("T and G must stack to an n x n transform".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        let tg = stack_rows(&t_slow, &g_fast);
        let tg_inv = checked_inverse(&tg, "[T; G]")?;
        let a_bar = &tg * a * &tg_inv;
        let b_bar = &tg * b;
        let f = n - r;
        let sp = Self {
            a11: a_bar.view((0, 0), (r, r)).into_owned(),
            a12: a_bar.view((0, r), (r, f)).into_owned(),
            a21: a_bar.view((r, 0), (f, r)).into_owned() * epsilon,
            a22: a_bar.view((r, r), (f, f)).into_owned() * epsilon,
            b1: b_bar.rows(0, r).into_owned(),
            b2: b_bar.rows(r, f).into_owned() * epsilon,
            epsilon,
            t_slow,
            g_fast,
        };
        sp.validate()?;
        Ok(sp)
    }

    fn validate(&self) -> Result<()> {
        let (r, f, m) = (self.r(), self.a22.nrows(), self.m());
        let shapes = [
            ("a11", &self.a11, (r, r)),
            ("a12", &self.a12, (r, f)),
            ("a21", &self.a21, (f, r)),
            ("a22", &self.a22, (f, f)),
            ("b1", &self.b1, (r, m)),
            ("b2", &self.b2, (f, m)),
        ];
        for (name, mat, shape) in shapes {
            if mat.shape() != shape {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {}x{}",
                    mat.nrows(),
                    mat.ncols(),
                    shape.0,
                    shape.1
                )));
            }
            ensure_finite(mat, name)?;
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        checked_inverse(&self.transform(), "[T; G]")?;
        Ok(())
    }

    /// Replace the coordinate maps `(T, G)` used by the extractors.
    pub fn with_coordinates(self, t_slow: Matrix, g_fast: Matrix) -> Result<Self> {
        let n = self.n();
        if t_slow.shape() != (self.r(), n) || g_fast.shape() != (n - self.r(), n) {
            return Err(Error::Dimension("T must be r x n and G (n-r) x n".into()));
        }
        let sp = Self { t_slow, g_fast, ..self };
        sp.validate()?;
        Ok(sp)
    }

    pub fn r(&self) -> usize {
        self.a11.nrows()
    }

    pub fn n(&self) -> usize {
        self.a11.nrows() + self.a22.nrows()
    }

    pub fn m(&self) -> usize {
        self.b1.ncols()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let sp = Self {
            epsilon,
            ..self.clone()
        };
        sp.validate()?;
        Ok(sp)
    }

    /// Stacked `[T; G]`.
    pub fn transform(&self) -> Matrix {
        stack_rows(&self.t_slow, &self.g_fast)
    }

    /// 1-norm condition number of `[T; G]`.
    pub fn transform_condition(&self) -> Result<f64> {
        let tg = self.transform();
        let inv = checked_inverse(&tg, "[T; G]")?;
        Ok(crate::linalg::norm1(&tg) * crate::linalg::norm1(&inv))
    }

    /// Spectral abscissa of A₂₂; the fast subsystem must be Hurwitz.
    pub fn check_fast_stable(&self) -> Result<f64> {
        let abscissa = spectral_abscissa(&self.a22)?;
        if abscissa >= 0.0 {
            return Err(Error::NotHurwitz { abscissa });
        }
        Ok(abscissa)
    }

    /// Full-order model in `(y, z)` coordinates, fast rows scaled by 1/ε, `c = I`.
    pub fn assemble_full(&self) -> LtiSystem {
        let (r, f) = (self.r(), self.a22.nrows());
        let n = r + f;
        let inv = 1.0 / self.epsilon;
        let mut a = Matrix::zeros(n, n);
        a.view_mut((0, 0), (r, r)).copy_from(&self.a11);
        a.view_mut((0, r), (r, f)).copy_from(&self.a12);
        a.view_mut((r, 0), (f, r)).copy_from(&(&self.a21 * inv));
        a.view_mut((r, r), (f, f)).copy_from(&(&self.a22 * inv));
        let b = stack_rows(&self.b1, &(&self.b2 * inv));
        LtiSystem::full_state(a, b).expect("blocks validated on construction")
    }

    /// Full-order model mapped back to the original coordinates `x = [T; G]⁻¹[y; z]`.
    pub fn assemble_original(&self) -> Result<LtiSystem> {
        let full = self.assemble_full();
        let tg = self.transform();
        let inv = checked_inverse(&tg, "[T; G]")?;
        LtiSystem::full_state(&inv * &full.a * &tg, &inv * &full.b)
    }

    /// Quasi-steady-state reduction (ε → 0).
    pub fn reduce_slow(&self) -> Result<SlowSubsystem> {
        let a22_inv = checked_inverse(&self.a22, "A22")?;
        let coupling = &self.a12 * &a22_inv;
        Ok(SlowSubsystem {
            a_s: &self.a11 - &coupling * &self.a21,
            b_s: &self.b1 - &coupling * &self.b2,
        })
    }

    pub fn slow_of(&self, x: &Vector) -> Vector {
        &self.t_slow * x
    }

    pub fn fast_of(&self, x: &Vector) -> Vector {
        &self.g_fast * x
    }
}

pub(crate) fn stack_rows(top: &Matrix, bottom: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// Single-input reference plant with two slow and two fast states.
pub fn reference_plant(epsilon: f64) -> Result<SpSystem> {
    let m = |rows: &[[f64; 2]; 2]| Matrix::from_fn(2, 2, |i, j| rows[i][j]);
    SpSystem::new(
        m(&[[0.0, 0.4], [0.0, 0.0]]),
        m(&[[0.0, 0.0], [0.345, 0.0]]),
        m(&[[0.0, -0.524], [0.0, 0.0]]),
        m(&[[-0.465, 0.262], [0.0, -1.0]]),
        Matrix::from_element(2, 1, 1.0),
        Matrix::from_element(2, 1, 1.0),
        epsilon,
    )
}

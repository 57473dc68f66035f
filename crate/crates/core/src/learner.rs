//! Data-driven policy iteration on the slow variables.
//!
//! Each iteration solves the least-squares system `Θ_k x = Φ_k` with
//! `x = [vec(P_k); vec(K_{k+1})]`. With exact integrals this is the
//! Kleinman step of the reduced model, but nothing here touches a model.

use serde::ser::{Serialize, SerializeStruct, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{
    devec, ensure_finite, kron, matrix_to_rows, min_sym_eigenvalue, numerical_rank, solve_least_squares, symmetrize,
    vec, Matrix, SymParam,
};
use crate::par::{map_indexed, Execution};
use crate::sim::AdpDataset;

pub const DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdpConfig {
    pub q_weight: Matrix,
    pub r_weight: Matrix,
    pub k0: Matrix,
    pub gamma: f64,
    pub max_iters: usize,
    pub rank_tolerance: f64,
}

impl AdpConfig {
    /// Defaults: `K₀ = 0`, `γ = 1e-6`, 30 iterations.
    pub fn new(q_weight: Matrix, r_weight: Matrix) -> Self {
        let (r, m) = (q_weight.nrows(), r_weight.nrows());
        Self {
            q_weight,
            r_weight,
            k0: Matrix::zeros(m, r),
            gamma: 1e-6,
            max_iters: 30,
            rank_tolerance: 1e-9,
        }
    }

    pub fn with_k0(mut self, k0: Matrix) -> Self {
        self.k0 = k0;
        self
    }

    pub fn r(&self) -> usize {
        self.q_weight.nrows()
    }

    pub fn m(&self) -> usize {
        self.r_weight.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (r, m) = (self.r(), self.m());
        if !self.q_weight.is_square() || !self.r_weight.is_square() || self.k0.shape() != (m, r) {
            return Err(Error::Dimension(format!(
                "Q {}x{}, R {}x{}, K0 {}x{} are inconsistent",
                self.q_weight.nrows(),
                self.q_weight.ncols(),
                self.r_weight.nrows(),
                self.r_weight.ncols(),
                self.k0.nrows(),
                self.k0.ncols()
            )));
        }
        ensure_finite(&self.q_weight, "Q")?;
        ensure_finite(&self.r_weight, "R")?;
        ensure_finite(&self.k0, "K0")?;
        let sym_tol = 1e-12 * (1.0 + self.q_weight.amax());
        if (&self.q_weight - self.q_weight.transpose()).amax() > sym_tol
            || min_sym_eigenvalue(&self.q_weight) < -sym_tol
        {
            return Err(Error::Config("Q must be symmetric positive semidefinite".into()));
        }
        if (&self.r_weight - self.r_weight.transpose()).amax() > 1e-12 * (1.0 + self.r_weight.amax())
            || self.r_weight.clone().cholesky().is_none()
        {
            return Err(Error::Config("R must be symmetric positive definite".into()));
        }
        if !(self.gamma > 0.0) || self.max_iters == 0 || !(self.rank_tolerance > 0.0) {
            return Err(Error::Config(
                "gamma, max_iters and rank_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of the persistent-excitation check on `[I_yy I_yu0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RankCheck {
    pub ok: bool,
    pub achieved: usize,
    pub required: usize,
}

pub fn required_rank(r: usize, m: usize) -> usize {
    SymParam::count(r) + r * m
}

pub fn check_rank(data: &AdpDataset, tol: f64) -> Result<RankCheck> {
    let stacked = hstack(&data.i_yy, &data.i_yu0);
    let achieved = numerical_rank(&stacked, tol)?;
    let required = required_rank(data.r, data.m);
    Ok(RankCheck {
        ok: achieved >= required,
        achieved,
        required,
    })
}

fn hstack(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `Θ_k = [δ_yy, −2I_yy(I_r⊗K_kᵀR) − 2I_yu₀(I_r⊗R)]`, `Φ_k = −I_yy vec(Q + K_kᵀRK_k)`.
pub fn build_regression(data: &AdpDataset, k: &Matrix, cfg: &AdpConfig) -> Result<(Matrix, Matrix)> {
    let (r, m) = (data.r, data.m);
    if cfg.r() != r || cfg.m() != m || k.shape() != (m, r) {
        return Err(Error::Dimension(format!(
            "dataset is r = {r}, m = {m}; config/gain do not match"
        )));
    }
    let ir = Matrix::identity(r, r);
    let kt_r = k.transpose() * &cfg.r_weight;
    let middle = &data.i_yy * kron(&ir, &kt_r) * -2.0 - &data.i_yu0 * kron(&ir, &cfg.r_weight) * 2.0;
    let theta = hstack(&data.delta_yy, &middle);
    let qk = &cfg.q_weight + k.transpose() * &cfg.r_weight * k;
    let phi = -(&data.i_yy * vec(&qk));
    Ok((theta, Matrix::from_column_slice(phi.len(), 1, phi.as_slice())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub k: usize,
    /// `None` for the initial entry, which carries only `K₀`.
    pub p: Option<Matrix>,
    pub gain: Matrix,
    pub residual: Option<f64>,
    pub dp_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnResult {
    pub p_final: Matrix,
    pub k_final: Matrix,
    pub history: Vec<HistoryEntry>,
    pub iterations: usize,
    pub converged: bool,
    pub rank: RankCheck,
    /// Empirical estimation-error bound when learning from observer estimates.
    pub observer_bound: Option<f64>,
}

impl LearnResult {
    pub fn dp_norms(&self) -> Vec<f64> {
        self.history.iter().filter_map(|h| h.dp_norm).collect()
    }
}

struct Rows<'a>(&'a Matrix);

impl Serialize for Rows<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(self.0).serialize(s)
    }
}

impl Serialize for HistoryEntry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("HistoryEntry", 4)?;
        st.serialize_field("k", &self.k)?;
        st.serialize_field("P", &self.p.as_ref().map(Rows))?;
        st.serialize_field("K", &Rows(&self.gain))?;
        st.serialize_field("dP_norm", &self.dp_norm)?;
        st.end()
    }
}

impl Serialize for LearnResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(serde::Serialize)]
        struct RankView {
            achieved: usize,
            required: usize,
        }
        let mut st = s.serialize_struct("LearnResult", 7)?;
        st.serialize_field("P", &Rows(&self.p_final))?;
        st.serialize_field("K", &Rows(&self.k_final))?;
        st.serialize_field("iterations", &self.iterations)?;
        st.serialize_field("converged", &self.converged)?;
        st.serialize_field("history", &self.history)?;
        st.serialize_field(
            "rank",
            &RankView {
                achieved: self.rank.achieved,
                required: self.rank.required,
            },
        )?;
        if let Some(b) = self.observer_bound {
            st.serialize_field("observer_bound", &b)?;
        } else {
            st.skip_field("observer_bound")?;
        }
        st.end()
    }
}

/// Iterate the data-driven update from `cfg.k0` until `‖P_k − P_{k−1}‖_F < γ`.
pub fn learn(data: &AdpDataset, cfg: &AdpConfig) -> Result<LearnResult> {
    cfg.validate()?;
    let rank = check_rank(data, cfg.rank_tolerance)?;
    if !rank.ok {
        return Err(Error::RankDeficient {
            achieved: rank.achieved,
            required: rank.required,
        });
    }
    let (r, m) = (data.r, data.m);
    let mut k = cfg.k0.clone();
    let mut history = vec![HistoryEntry {
        k: 0,
        p: None,
        gain: k.clone(),
        residual: None,
        dp_norm: None,
    }];
    let mut p_prev: Option<Matrix> = None;
    let mut converged = false;
    for it in 1..=cfg.max_iters {
        let (theta, phi) = build_regression(data, &k, cfg)?;
        let ls = solve_least_squares(&theta, &phi, None)?;
        let x = ls.solution.column(0).into_owned();
        let p = symmetrize(&devec(&x.rows(0, r * r).into_owned(), r, r)?);
        let k_next = devec(&x.rows(r * r, r * m).into_owned(), m, r)?;
        let pn = p.norm();
        if !pn.is_finite() || pn > DIVERGENCE_BOUND || !k_next.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                norm: pn,
            });
        }
        let dp = p_prev.as_ref().map(|prev| (&p - prev).norm());
        history.push(HistoryEntry {
            k: it,
            p: Some(p.clone()),
            gain: k_next.clone(),
            residual: Some(ls.residual_norm),
            dp_norm: dp,
        });
        k = k_next;
        p_prev = Some(p);
        if dp.is_some_and(|d| d < cfg.gamma) {
            converged = true;
            break;
        }
    }
    let iterations = history.len() - 1;
    Ok(LearnResult {
        p_final: p_prev.expect("at least one iteration"),
        k_final: k,
        history,
        iterations,
        converged,
        rank,
        observer_bound: None,
    })
}

/// Learning on estimated slow states; identical iteration, with the observer bound attached.
pub fn learn_output_feedback(
    data_hat: &AdpDataset,
    cfg: &AdpConfig,
    observer_bound: Option<f64>,
) -> Result<LearnResult> {
    let mut res = learn(data_hat, cfg)?;
    res.observer_bound = observer_bound;
    Ok(res)
}

/// Independent per-cluster learning; each entry fails or succeeds on its own.
pub fn learn_decentralized(
    data: &[AdpDataset],
    cfgs: &[AdpConfig],
    exec: Execution,
) -> Result<Vec<Result<LearnResult>>> {
    if data.len() != cfgs.len() {
        return Err(Error::Dimension(format!(
            "{} datasets for {} configs",
            data.len(),
            cfgs.len()
        )));
    }
    Ok(map_indexed(data.len(), exec, |i| {
        learn(&data[i], &cfgs[i]).map_err(|e| e.context(format!("cluster {}", i + 1)))
    }))
}

/// `blkdiag(K¹, …, K^r)` if every cluster succeeded.
pub fn composite_gain(results: &[Result<LearnResult>]) -> Result<Matrix> {
    let mut gains = Vec::with_capacity(results.len());
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(res) => gains.push(res.k_final.clone()),
            Err(e) => return Err(Error::Config(format!("cluster {} has no usable gain: {e}", i + 1))),
        }
    }
    Ok(crate::linalg::block_diag(&gains))
}

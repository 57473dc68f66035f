//! Neuro-adaptive state observer.
//!
//! The estimate follows a Hurwitz design matrix `Â` plus a one-hidden-layer
//! tanh network that absorbs the unknown part of the dynamics; the weights
//! adapt from the output error only, so the plant model is never used.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, ensure_finite, spectral_abscissa, Matrix, Vector};
use crate::oracle::care_solve;
use crate::sim::{rk4_step, write_row, LtiSystem, SimOptions, Trajectory};

pub const DEFAULT_WEIGHT_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverConfig {
    pub a_hat: Matrix,
    pub g_obs: Matrix,
    pub neurons: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub weight_bound: f64,
}

impl ObserverConfig {
    /// Defaults for everything but the two design matrices.
    pub fn new(a_hat: Matrix, g_obs: Matrix) -> Self {
        Self {
            a_hat,
            g_obs,
            neurons: 20,
            eta1: 10.0,
            eta2: 10.0,
            rho1: 1e-3,
            rho2: 1e-3,
            init_scale: 1.0,
            seed: 0,
            weight_bound: DEFAULT_WEIGHT_BOUND,
        }
    }

    /// Check the design and precompute `𝒞A_c⁻¹` with `A_c = Â − G𝒞`.
    pub fn validate(&self, c: &Matrix) -> Result<Matrix> {
        let n = self.a_hat.nrows();
        if !self.a_hat.is_square() || c.ncols() != n || self.g_obs.shape() != (n, c.nrows()) {
            return Err(Error::Dimension("observer: Â must be n x n and G n x p".into()));
        }
        ensure_finite(&self.a_hat, "Â")?;
        ensure_finite(&self.g_obs, "G")?;
        let abscissa = spectral_abscissa(&self.a_hat)?;
        if abscissa >= 0.0 {
            return Err(Error::NotHurwitz { abscissa }.context("observer design matrix Â"));
        }
        let a_c = &self.a_hat - &self.g_obs * c;
        let abscissa = spectral_abscissa(&a_c)?;
        if abscissa >= 0.0 {
            return Err(Error::NotHurwitz { abscissa }.context("observer error dynamics Â − G𝒞"));
        }
        if self.neurons == 0 {
            return Err(Error::Config("observer needs at least one neuron".into()));
        }
        for (name, v) in [
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("rho1", self.rho1),
            ("rho2", self.rho2),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("observer {name} must be positive")));
            }
        }
        Ok(c * checked_inverse(&a_c, "A_c")?)
    }
}

/// Output-injection gain `G = PCᵀ` from the dual Riccati equation `ÂP + PÂᵀ − PCᵀCP + qI = 0`.
pub fn dual_gain(a_hat: &Matrix, c: &Matrix, q_obs: f64) -> Result<Matrix> {
    let n = a_hat.nrows();
    let p = c.nrows();
    let sol = care_solve(
        &a_hat.transpose(),
        &c.transpose(),
        &(Matrix::identity(n, n) * q_obs),
        &Matrix::identity(p, p),
        None,
    )?;
    Ok(sol.k.transpose())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub x_hat: Vector,
    pub w_hat: Matrix,
    pub v_hat: Matrix,
}

impl ObserverState {
    /// Weights uniform in `[−0.1, 0.1]·scale` from the config seed.
    pub fn init(cfg: &ObserverConfig, x_hat0: Vector, m: usize) -> Self {
        let n = x_hat0.len();
        let k = cfg.neurons;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut draw = |rows, cols| Matrix::from_fn(rows, cols, |_, _| rng.random_range(-0.1..=0.1) * cfg.init_scale);
        let w_hat = draw(n, k);
        let v_hat = draw(k, n + m);
        Self {
            x_hat: x_hat0,
            w_hat,
            v_hat,
        }
    }

    fn pack(&self, x: &Vector) -> Vector {
        let mut out = Vec::with_capacity(x.len() * 2 + self.w_hat.len() + self.v_hat.len());
        out.extend_from_slice(x.as_slice());
        out.extend_from_slice(self.x_hat.as_slice());
        out.extend_from_slice(self.w_hat.as_slice());
        out.extend_from_slice(self.v_hat.as_slice());
        Vector::from_vec(out)
    }

    fn unpack(v: &Vector, n: usize, k: usize, m: usize) -> (Vector, Self) {
        let s = v.as_slice();
        let x = Vector::from_column_slice(&s[..n]);
        let x_hat = Vector::from_column_slice(&s[n..2 * n]);
        let w0 = 2 * n;
        let v0 = w0 + n * k;
        let w_hat = Matrix::from_column_slice(n, k, &s[w0..v0]);
        let v_hat = Matrix::from_column_slice(k, n + m, &s[v0..v0 + k * (n + m)]);
        (x, Self { x_hat, w_hat, v_hat })
    }

    pub fn weight_norm(&self) -> f64 {
        self.w_hat.norm().max(self.v_hat.norm())
    }
}

fn augmented(x_hat: &Vector, u: &Vector) -> Vector {
    let mut xb = Vector::zeros(x_hat.len() + u.len());
    xb.rows_mut(0, x_hat.len()).copy_from(x_hat);
    xb.rows_mut(x_hat.len(), u.len()).copy_from(u);
    xb
}

/// `Ŵ tanh(V̂ [x̂; u])`.
pub fn nn_forward(st: &ObserverState, x_hat: &Vector, u: &Vector) -> Vector {
    let hidden = (&st.v_hat * augmented(x_hat, u)).map(f64::tanh);
    &st.w_hat * hidden
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverDerivatives {
    pub dx_hat: Vector,
    pub dw_hat: Matrix,
    pub dv_hat: Matrix,
}

/// Right-hand side of the estimate and of both weight update laws.
///
/// `c_ac_inv` is `𝒞A_c⁻¹` as returned by [`ObserverConfig::validate`].
pub fn observer_derivatives(
    st: &ObserverState,
    u: &Vector,
    q: &Vector,
    cfg: &ObserverConfig,
    c: &Matrix,
    c_ac_inv: &Matrix,
) -> ObserverDerivatives {
    let xb = augmented(&st.x_hat, u);
    let sigma = (&st.v_hat * &xb).map(f64::tanh);
    let q_err = q - c * &st.x_hat;
    let qn = q_err.norm();
    let dx_hat = &cfg.a_hat * &st.x_hat + &st.w_hat * &sigma + &cfg.g_obs * &q_err;

    // row vector q̃ᵀ𝒞A_c⁻¹
    let g = q_err.transpose() * c_ac_inv;
    let dw_hat = -(g.transpose() * sigma.transpose()) * cfg.eta1 - &st.w_hat * (cfg.rho1 * qn);

    let slope = sigma.map(|s| 1.0 - s * s);
    let back = (g * &st.w_hat).component_mul(&slope.transpose());
    let sgn = xb.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    let dv_hat = -(back.transpose() * sgn.transpose()) * cfg.eta2 - &st.v_hat * (cfg.rho2 * qn);

    ObserverDerivatives { dx_hat, dw_hat, dv_hat }
}

/// Result of a joint plant/observer run on a common grid.
#[derive(Debug, Clone)]
pub struct CoSimulation {
    pub plant: Trajectory,
    pub estimate: Trajectory,
    pub error_norms: Vec<f64>,
    pub final_observer: ObserverState,
}

impl CoSimulation {
    pub fn errors(&self) -> impl Iterator<Item = Vector> + '_ {
        self.plant
            .states
            .iter()
            .zip(&self.estimate.states)
            .map(|(x, xh)| x - xh)
    }

    /// `t,e1..en,e_norm`.
    pub fn write_error_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        let n = self.plant.states.first().map_or(0, Vector::len);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=n).map(|i| format!("e{i}")))
            .chain(std::iter::once("e_norm".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (i, e) in self.errors().enumerate() {
            let norm = [self.error_norms[i]];
            write_row(out, self.plant.times[i], e.iter().chain(norm.iter()))?;
        }
        Ok(())
    }

    pub fn uub(&self, t2: f64) -> UubReport {
        uub_report(&self.plant.times, &self.error_norms, t2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UubReport {
    pub t2: f64,
    /// `sup_{t ≥ t2} ‖e(t)‖`.
    pub bound: f64,
    pub initial: f64,
    pub peak: f64,
}

pub fn uub_report(times: &[f64], norms: &[f64], t2: f64) -> UubReport {
    let tail = times
        .iter()
        .zip(norms)
        .filter(|(t, _)| **t >= t2 - 1e-12)
        .map(|(_, e)| *e)
        .fold(0.0, f64::max);
    UubReport {
        t2,
        bound: tail,
        initial: norms.first().copied().unwrap_or(0.0),
        peak: norms.iter().copied().fold(0.0, f64::max),
    }
}

/// Integrate plant, estimate and weights together with RK4.
///
/// The policy only sees the estimate, which is what an output-feedback
/// controller has access to.
#[allow(clippy::too_many_arguments)]
pub fn cosimulate(
    plant: &LtiSystem,
    policy: impl Fn(f64, &Vector) -> Vector,
    cfg: &ObserverConfig,
    x0: &Vector,
    x_hat0: &Vector,
    dt: f64,
    t_end: f64,
    opts: SimOptions,
) -> Result<CoSimulation> {
    let c_ac_inv = cfg.validate(&plant.c)?;
    let (n, m, k) = (plant.n(), plant.m(), cfg.neurons);
    if x0.len() != n || x_hat0.len() != n {
        return Err(Error::Dimension("initial state and estimate must have length n".into()));
    }
    if !(dt > 0.0) || t_end < dt {
        return Err(Error::Config("need dt > 0 and t_end >= dt".into()));
    }
    let steps = (t_end / dt).round() as usize;
    let rhs = |t: f64, v: &Vector| {
        let (x, st) = ObserverState::unpack(v, n, k, m);
        let u = policy(t, &st.x_hat);
        let q = &plant.c * &x;
        let d = observer_derivatives(&st, &u, &q, cfg, &plant.c, &c_ac_inv);
        let dx = plant.derivative(&x, &u);
        let mut out = Vec::with_capacity(v.len());
        out.extend_from_slice(dx.as_slice());
        out.extend_from_slice(d.dx_hat.as_slice());
        out.extend_from_slice(d.dw_hat.as_slice());
        out.extend_from_slice(d.dv_hat.as_slice());
        Vector::from_vec(out)
    };

    let mut state = ObserverState::init(cfg, x_hat0.clone(), m).pack(x0);
    let mut plant_traj = Trajectory {
        dt,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
    };
    let mut est_traj = plant_traj.clone();
    let mut error_norms = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = i as f64 * dt;
        let (x, st) = ObserverState::unpack(&state, n, k, m);
        let u = policy(t, &st.x_hat);
        if u.len() != m {
            return Err(Error::Dimension(format!(
                "policy returned {} inputs, expected {m}",
                u.len()
            )));
        }
        error_norms.push((&x - &st.x_hat).norm());
        plant_traj.times.push(t);
        plant_traj.states.push(x);
        plant_traj.inputs.push(u.clone());
        est_traj.times.push(t);
        est_traj.states.push(st.x_hat);
        est_traj.inputs.push(u);
        if i == steps {
            break;
        }
        state = rk4_step(rhs, t, &state, dt);
        let (x, st) = ObserverState::unpack(&state, n, k, m);
        let norm = x.norm().max(st.x_hat.norm());
        if !norm.is_finite() || norm > opts.blowup {
            return Err(Error::BlowUp { time: t + dt, norm });
        }
        let wn = st.weight_norm();
        if !wn.is_finite() || wn > cfg.weight_bound {
            return Err(Error::WeightBlowUp { time: t + dt, norm: wn });
        }
    }
    let (_, final_observer) = ObserverState::unpack(&state, n, k, m);
    Ok(CoSimulation {
        plant: plant_traj,
        estimate: est_traj,
        error_norms,
        final_observer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn state(n: usize, k: usize, m: usize) -> ObserverState {
        ObserverState {
            x_hat: Vector::zeros(n),
            w_hat: Matrix::zeros(n, k),
            v_hat: Matrix::zeros(k, n + m),
        }
    }

    fn stable_cfg() -> (ObserverConfig, Matrix) {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -2.0]);
        let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let g = dual_gain(&a, &c, 10.0).unwrap();
        (ObserverConfig::new(a, g), c)
    }

    #[test]
    fn forward_zero_weights() {
        let mut st = state(2, 3, 1);
        let x = Vector::from_vec(vec![1.0, -2.0]);
        let u = Vector::from_element(1, 0.5);
        assert_eq!(nn_forward(&st, &x, &u), Vector::zeros(2));
        st.w_hat.fill(1.0);
        assert_eq!(nn_forward(&st, &x, &u), Vector::zeros(2));
    }

    #[test]
    fn forward_saturates() {
        let mut st = state(1, 1, 1);
        st.w_hat.fill(1.0);
        st.v_hat[(0, 0)] = 1.0;
        let out = nn_forward(&st, &Vector::from_element(1, 50.0), &Vector::zeros(1));
        assert_abs_diff_eq!(out[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn no_output_error_no_adaptation() {
        let (cfg, c) = stable_cfg();
        let c_ac = cfg.validate(&c).unwrap();
        let mut st = ObserverState::init(&cfg, Vector::from_vec(vec![0.3, -0.7]), 1);
        st.x_hat = Vector::from_vec(vec![0.3, -0.7]);
        let q = &c * &st.x_hat;
        let d = observer_derivatives(&st, &Vector::from_element(1, 1.0), &q, &cfg, &c, &c_ac);
        assert_eq!(d.dw_hat, Matrix::zeros(2, 20));
        assert_eq!(d.dv_hat, Matrix::zeros(20, 3));
    }

    #[test]
    fn zero_weights_stall_adaptation() {
        let (cfg, c) = stable_cfg();
        let c_ac = cfg.validate(&c).unwrap();
        let st = state(2, cfg.neurons, 1);
        let d = observer_derivatives(
            &st,
            &Vector::from_element(1, 1.0),
            &Vector::from_element(1, 2.0),
            &cfg,
            &c,
            &c_ac,
        );
        assert_eq!(d.dw_hat, Matrix::zeros(2, cfg.neurons));
        assert_eq!(d.dv_hat, Matrix::zeros(cfg.neurons, 3));
    }

    #[test]
    fn rejects_unstable_design() {
        let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let cfg = ObserverConfig::new(Matrix::identity(2, 2), Matrix::zeros(2, 1));
        assert!(cfg.validate(&c).is_err());
        let (mut cfg, _) = stable_cfg();
        cfg.eta1 = 0.0;
        assert!(cfg.validate(&c).is_err());
    }

    #[test]
    fn matched_plant_has_zero_error() {
        // plant = Â and the network output is zero: W = 0 is a fixed point
        let (mut cfg, c) = stable_cfg();
        cfg.init_scale = 0.0;
        let plant = LtiSystem::new(cfg.a_hat.clone(), Matrix::zeros(2, 1), c).unwrap();
        let x0 = Vector::from_vec(vec![1.0, -1.0]);
        let run = cosimulate(
            &plant,
            |_, _| Vector::zeros(1),
            &cfg,
            &x0,
            &x0,
            1e-2,
            2.0,
            SimOptions::default(),
        )
        .unwrap();
        assert!(run.error_norms.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn mismatched_init_decays() {
        let (cfg, c) = stable_cfg();
        let plant = LtiSystem::new(cfg.a_hat.clone(), Matrix::zeros(2, 1), c.clone()).unwrap();
        let a_c = &cfg.a_hat - &cfg.g_obs * &c;
        let tau = 1.0 / -spectral_abscissa(&a_c).unwrap();
        let x0 = Vector::from_vec(vec![1.0, -1.0]);
        let run = cosimulate(
            &plant,
            |_, _| Vector::zeros(1),
            &cfg,
            &x0,
            &Vector::zeros(2),
            1e-3,
            5.0 * tau,
            SimOptions::default(),
        )
        .unwrap();
        assert!(run.error_norms.last().unwrap() < &run.error_norms[0]);
        let rep = run.uub(tau);
        assert!(rep.bound <= rep.peak);
    }

    #[test]
    fn error_csv_layout() {
        let (cfg, c) = stable_cfg();
        let plant = LtiSystem::new(cfg.a_hat.clone(), Matrix::zeros(2, 1), c).unwrap();
        let x0 = Vector::from_vec(vec![1.0, 0.0]);
        let run = cosimulate(
            &plant,
            |_, _| Vector::zeros(1),
            &cfg,
            &x0,
            &Vector::zeros(2),
            0.1,
            0.2,
            SimOptions::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        run.write_error_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,e1,e2,e_norm");
        assert_eq!(text.lines().count(), 4);
    }
}

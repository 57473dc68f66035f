//! Plant preparation and the learning pipelines shared by every command.

use crate::cluster::ClusteredNetwork;
use crate::error::{Error, Result, ResultExt};
use crate::learner::{
    composite_gain, learn_decentralized, learn_output_feedback, required_rank, AdpConfig, LearnResult,
};
use crate::linalg::{eigenvalues, matrix_from_rows, spectral_abscissa, Matrix, Vector};
use crate::observer::{cosimulate, dual_gain, CoSimulation, ObserverConfig};
use crate::oracle::{care_solve, closed_loop_cost, slow_pole_report, AreSolution, PoleReport, PoleSplit};
use crate::par::{map_indexed, Execution};
use crate::sim::{
    collect_adp_data, collect_adp_data_with_inputs, evaluate_cost, simulate, steps_in, uniform_sample_times,
    AdpDataset, CostEstimate, ExplorationSignal, LtiSystem, SimOptions, Trajectory,
};
use crate::sp_model::{SlowSubsystem, SpSystem};

use super::config::{ExperimentConfig, ObserverMode, ObserverSpec, PlantSpec, ScenarioKind};

/// A configured plant ready for simulation.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// `(A, B_eff, C)`; for networks `B_eff = B·M`, so its input is the reduced control ũ.
    pub plant: LtiSystem,
    pub t_slow: Matrix,
    /// Reduced model the learner should recover (used only for reference values).
    pub ideal: SlowSubsystem,
    pub h: f64,
    pub x0: Vector,
    pub sp: Option<SpSystem>,
    pub network: Option<ClusteredNetwork>,
}

impl Prepared {
    pub fn r(&self) -> usize {
        self.t_slow.nrows()
    }

    pub fn m(&self) -> usize {
        self.plant.m()
    }

    pub fn slow(&self, x: &Vector) -> Vector {
        &self.t_slow * x
    }

    /// Spectral abscissa of `A − B K T` for a reduced gain K.
    pub fn closed_loop_abscissa(&self, k: &Matrix) -> Result<f64> {
        spectral_abscissa(&(&self.plant.a - &self.plant.b * k * &self.t_slow))
    }

    /// Integrator steps per learning step.
    pub fn stride(&self, dt: f64) -> usize {
        (dt / self.h).round().max(1.0) as usize
    }
}

fn fit_substep(dt: f64, h_max: f64) -> f64 {
    let ratio = (dt / h_max - 1e-9).ceil().max(1.0);
    dt / ratio
}

fn spectral_radius(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let dt = cfg.sampling.dt;
    let eps = cfg.epsilon();
    let x0 = Vector::from_column_slice(&cfg.x0);
    let c_override = cfg.output_matrix().map(|c| matrix_from_rows(c)).transpose()?;
    let with_output = |a: Matrix, b: Matrix| -> Result<LtiSystem> {
        match &c_override {
            Some(c) => LtiSystem::new(a, b, c.clone()),
            None => LtiSystem::full_state(a, b),
        }
    };
    let (plant, t_slow, ideal, h_max, sp, network) = match &cfg.plant {
        PlantSpec::Network(_) => {
            let net = cfg.network()?;
            let sys = net.system();
            let tr = net.transforms();
            let rho = spectral_radius(&sys.a)?;
            let h_max = if rho > 0.0 { 0.2 / rho } else { dt };
            let plant = with_output(sys.a.clone(), &sys.b * &tr.m_proj)?;
            (plant, tr.t.clone(), net.aggregate_slow(), h_max, None, Some(net))
        }
        _ if eps == 0.0 => {
            let ideal = cfg.sp_system(1.0)?.reduce_slow()?;
            let r = ideal.a_s.nrows();
            let plant = with_output(ideal.a_s.clone(), ideal.b_s.clone())?;
            (plant, Matrix::identity(r, r), ideal, dt, None, None)
        }
        _ => {
            let sp = cfg.sp_system(eps)?;
            sp.check_fast_stable().context(|| "fast subsystem A22".into())?;
            let full = match cfg.plant {
                PlantSpec::SpOriginal { .. } => sp.assemble_original()?,
                _ => sp.assemble_full(),
            };
            let plant = with_output(full.a, full.b)?;
            let ideal = sp.reduce_slow()?;
            (plant, sp.t_slow.clone(), ideal, eps / 5.0, Some(sp), None)
        }
    };
    let h = match cfg.sampling.substep {
        Some(h) => {
            steps_in(dt, h, "substep")?;
            h
        }
        None => fit_substep(dt, h_max.min(dt)),
    };
    Ok(Prepared {
        plant,
        t_slow,
        ideal,
        h,
        x0,
        sp,
        network,
    })
}

/// Reference LQR solution of the reduced model.
pub fn oracle_solution(prep: &Prepared, q: &Matrix, r_w: &Matrix) -> Result<AreSolution> {
    care_solve(&prep.ideal.a_s, &prep.ideal.b_s, q, r_w, None).context(|| "reference Riccati solution".into())
}

pub fn exploration(cfg: &ExperimentConfig, m: usize) -> Result<ExplorationSignal> {
    ExplorationSignal::generated(m, &cfg.exploration, cfg.seed)
}

pub fn window(cfg: &ExperimentConfig) -> f64 {
    cfg.sampling.dt * cfg.sampling.window_steps as f64
}

pub fn window_count(cfg: &ExperimentConfig, r: usize, m: usize) -> usize {
    cfg.sampling.windows.unwrap_or(2 * required_rank(r, m))
}

pub fn adp_config(cfg: &ExperimentConfig, q: &Matrix, r_w: &Matrix, q_scale: f64) -> Result<AdpConfig> {
    let (r, m) = (q.nrows(), r_w.nrows());
    let k0 = match &cfg.learning.k0 {
        Some(k) => matrix_from_rows(k)?,
        None => Matrix::zeros(m, r),
    };
    if k0.shape() != (m, r) {
        return Err(Error::Config(format!("k0 must be {m}x{r}")));
    }
    Ok(AdpConfig {
        q_weight: q * q_scale,
        r_weight: r_w.clone(),
        k0,
        gamma: cfg.learning.gamma,
        max_iters: cfg.learning.max_iters,
        rank_tolerance: cfg.learning.rank_tolerance,
    })
}

/// Exploration data for the centralized learner.
pub struct Collected {
    pub data: AdpDataset,
    pub exploration: Trajectory,
    pub observer: Option<CoSimulation>,
    pub warmup: f64,
}

pub fn collect_state_feedback(cfg: &ExperimentConfig, prep: &Prepared, exec: Execution) -> Result<Collected> {
    let (r, m) = (prep.r(), prep.m());
    let sig = exploration(cfg, m)?;
    let win = window(cfg);
    let times = uniform_sample_times(cfg.sampling.start, win, window_count(cfg, r, m));
    let t_end = times.last().copied().unwrap_or(0.0) + win;
    let traj = simulate(
        &prep.plant,
        |t, _| sig.eval(t),
        &prep.x0,
        prep.h,
        t_end,
        SimOptions::default(),
    )
    .context(|| "exploration run".into())?;
    let t_slow = &prep.t_slow;
    let data = collect_adp_data(&traj, |x: &Vector| t_slow * x, win, &times, exec)?;
    Ok(Collected {
        data,
        exploration: traj,
        observer: None,
        warmup: 0.0,
    })
}

/// Observer design for a prepared plant.
pub fn observer_config(cfg: &ExperimentConfig, spec: &ObserverSpec, prep: &Prepared) -> Result<ObserverConfig> {
    let c = &prep.plant.c;
    let a_hat = match &spec.a_hat {
        Some(a) => matrix_from_rows(a)?,
        None => default_a_hat(spec, prep)?,
    };
    let g_obs = match &spec.g_obs {
        Some(g) => matrix_from_rows(g)?,
        None => dual_gain(&a_hat, c, spec.q_obs).context(|| "observer gain design".into())?,
    };
    Ok(ObserverConfig {
        a_hat,
        g_obs,
        neurons: spec.neurons,
        eta1: spec.eta1,
        eta2: spec.eta2,
        rho1: spec.rho1,
        rho2: spec.rho2,
        init_scale: spec.init_scale,
        seed: cfg.seed.wrapping_add(0x5eed),
        weight_bound: spec.weight_bound,
    })
}

/// A perturbed model with the plant's structure: scaled couplings, shifted diagonal.
fn default_a_hat(spec: &ObserverSpec, prep: &Prepared) -> Result<Matrix> {
    let n = prep.plant.n();
    let shift = Matrix::identity(n, n) * spec.shift;
    if let Some(sp) = &prep.sp {
        let r = sp.r();
        let perturbed = SpSystem::new(
            &sp.a11 - Matrix::identity(r, r) * spec.shift,
            &sp.a12 * spec.coupling_scale,
            &sp.a21 * spec.coupling_scale,
            &sp.a22 * spec.fast_scale,
            sp.b1.clone(),
            sp.b2.clone(),
            sp.epsilon,
        )?;
        let tg = sp.transform();
        let inv = crate::linalg::checked_inverse(&tg, "[T; G]")?;
        return Ok(&inv * perturbed.assemble_full().a * &tg);
    }
    if let Some(net) = &prep.network {
        let s = net.s();
        let agents = net.n();
        let lap = &net.l_internal * spec.intra_scale + &net.l_external * (spec.inter_scale * net.epsilon);
        let a = crate::linalg::kron(&Matrix::identity(agents, agents), &net.f_self)
            - crate::linalg::kron(&lap, &Matrix::identity(s, s));
        return Ok(a - shift);
    }
    Ok(&prep.plant.a - shift)
}

pub fn collect_output_feedback(cfg: &ExperimentConfig, prep: &Prepared, exec: Execution) -> Result<Collected> {
    let spec = cfg
        .observer
        .as_ref()
        .ok_or_else(|| Error::Config("missing observer section".into()))?;
    if spec.mode == ObserverMode::Perfect {
        // the estimate is the state itself: exactly the state-feedback data
        return collect_state_feedback(cfg, prep, exec);
    }
    let obs = observer_config(cfg, spec, prep)?;
    let (r, m) = (prep.r(), prep.m());
    let sig = exploration(cfg, m)?;
    let win = window(cfg);
    let start = cfg.sampling.start + spec.warmup;
    steps_in(start, prep.h, "observer warm-up")?;
    let times = uniform_sample_times(start, win, window_count(cfg, r, m));
    let t_end = (times.last().copied().unwrap_or(0.0) + win).max(spec.tube_horizon);
    let x_hat0 = match &spec.x_hat0 {
        Some(v) => Vector::from_column_slice(v),
        None => Vector::zeros(prep.plant.n()),
    };
    let run = cosimulate(
        &prep.plant,
        |t, _| sig.eval(t),
        &obs,
        &prep.x0,
        &x_hat0,
        prep.h,
        t_end,
        SimOptions::default(),
    )
    .context(|| "observer exploration run".into())?;
    let t_slow = &prep.t_slow;
    let data = collect_adp_data(&run.estimate, |x: &Vector| t_slow * x, win, &times, exec)?;
    Ok(Collected {
        data,
        exploration: run.plant.clone(),
        observer: Some(run),
        warmup: spec.warmup,
    })
}

/// Learned gain together with the Q scaling that produced it.
pub struct Learned {
    pub result: LearnResult,
    pub q_scale: f64,
    pub abscissa: f64,
}

/// Learn, and if the gain fails the stability certificate scale Q up and relearn.
pub fn learn_with_retry(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    data: &AdpDataset,
    q: &Matrix,
    r_w: &Matrix,
    observer_bound: Option<f64>,
) -> Result<Learned> {
    let mut last: Option<Result<Learned>> = None;
    for attempt in 0..=cfg.learning.q_retry_attempts {
        let q_scale = cfg.learning.q_retry_factor.powi(attempt as i32);
        let adp = adp_config(cfg, q, r_w, q_scale)?;
        let outcome = learn_output_feedback(data, &adp, observer_bound).and_then(|result| {
            let abscissa = prep.closed_loop_abscissa(&result.k_final)?;
            Ok(Learned {
                result,
                q_scale,
                abscissa,
            })
        });
        match outcome {
            Ok(l) if l.abscissa < 0.0 => return Ok(l),
            Err(Error::RankDeficient { achieved, required }) => {
                return Err(Error::RankDeficient { achieved, required });
            }
            other => last = Some(other),
        }
    }
    last.expect("at least one attempt")
}

pub struct DecentralizedLearned {
    pub results: Vec<LearnResult>,
    pub composite: Matrix,
    pub q_scale: f64,
    pub abscissa: f64,
    pub exploration: Trajectory,
}

pub fn learn_clusters(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    q: &Matrix,
    r_w: &Matrix,
    exec: Execution,
) -> Result<DecentralizedLearned> {
    let net = prep
        .network
        .as_ref()
        .ok_or_else(|| Error::Config("decentralized learning needs a network plant".into()))?;
    let (clusters, s, p) = (net.r(), net.s(), net.p());
    let sig = exploration(cfg, clusters * p)?;
    let win = window(cfg);
    let times = uniform_sample_times(cfg.sampling.start, win, window_count(cfg, s, p));
    let t_end = times.last().copied().unwrap_or(0.0) + win;
    let traj = simulate(
        &prep.plant,
        |t, _| sig.eval(t),
        &prep.x0,
        prep.h,
        t_end,
        SimOptions::default(),
    )
    .context(|| "exploration run".into())?;

    let t_slow = &prep.t_slow;
    let datasets = map_indexed(clusters, exec, |a| {
        let rows = t_slow.rows(a * s, s).into_owned();
        collect_adp_data_with_inputs(
            &traj,
            |x: &Vector| &rows * x,
            |u: &Vector| u.rows(a * p, p).into_owned(),
            win,
            &times,
            Execution::Sequential,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut last_err = None;
    for attempt in 0..=cfg.learning.q_retry_attempts {
        let q_scale = cfg.learning.q_retry_factor.powi(attempt as i32);
        let adp = adp_config(cfg, q, r_w, q_scale)?;
        let cfgs = vec![adp; clusters];
        let results = learn_decentralized(&datasets, &cfgs, exec)?;
        let composite = match composite_gain(&results) {
            Ok(k) => k,
            Err(e) => {
                // a rank failure will not improve with a larger Q
                if let Some(Err(err)) = results.iter().find(|r| r.is_err()) {
                    if matches!(err.root(), Error::RankDeficient { .. }) {
                        return Err(results.into_iter().find_map(|r| r.err()).expect("checked"));
                    }
                }
                last_err = Some(e);
                continue;
            }
        };
        let abscissa = prep.closed_loop_abscissa(&composite)?;
        let results: Vec<LearnResult> = results.into_iter().map(|r| r.expect("all ok")).collect();
        if abscissa < 0.0 || attempt == cfg.learning.q_retry_attempts {
            return Ok(DecentralizedLearned {
                results,
                composite,
                q_scale,
                abscissa,
                exploration: traj,
            });
        }
    }
    Err(last_err.unwrap_or(Error::NoStabilizingGain))
}

/// Closed-loop behaviour under `u = −K T x`.
pub struct Evaluation {
    pub trajectory: Option<Trajectory>,
    pub simulated: Option<CostEstimate>,
    pub lyapunov: Option<f64>,
    pub poles: PoleReport,
}

pub fn evaluate(cfg: &ExperimentConfig, prep: &Prepared, k: &Matrix, q: &Matrix, r_w: &Matrix) -> Result<Evaluation> {
    let kt = k * &prep.t_slow;
    let split = cfg.evaluation.pole_split.unwrap_or(PoleSplit::Count(prep.r()));
    let poles = slow_pole_report(&prep.plant.a, &prep.plant.b, &kt, split)?;
    if poles.spectral_abscissa >= 0.0 {
        return Ok(Evaluation {
            trajectory: None,
            simulated: None,
            lyapunov: None,
            poles,
        });
    }
    let traj = simulate(
        &prep.plant,
        |_, x| -(&kt * x),
        &prep.x0,
        prep.h,
        cfg.evaluation.horizon,
        SimOptions::default(),
    )
    .context(|| "closed-loop run".into())?;
    let t_slow = &prep.t_slow;
    let simulated = evaluate_cost(&traj, |x| t_slow * x, q, r_w);
    let q_full = prep.t_slow.transpose() * q * &prep.t_slow;
    let lyapunov = closed_loop_cost(&prep.plant.a, &prep.plant.b, &kt, &q_full, r_w, &prep.x0).ok();
    Ok(Evaluation {
        trajectory: Some(traj),
        simulated: Some(simulated),
        lyapunov,
        poles,
    })
}

/// Closed loop with the observer in the loop: `u = −K T x̂`.
pub fn evaluate_with_observer(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    k: &Matrix,
    q: &Matrix,
    r_w: &Matrix,
) -> Result<(CoSimulation, CostEstimate)> {
    let spec = cfg
        .observer
        .as_ref()
        .ok_or_else(|| Error::Config("missing observer section".into()))?;
    let obs = observer_config(cfg, spec, prep)?;
    let kt = k * &prep.t_slow;
    let x_hat0 = match &spec.x_hat0 {
        Some(v) => Vector::from_column_slice(v),
        None => Vector::zeros(prep.plant.n()),
    };
    let run = cosimulate(
        &prep.plant,
        |_, x_hat| -(&kt * x_hat),
        &obs,
        &prep.x0,
        &x_hat0,
        prep.h,
        cfg.evaluation.horizon,
        SimOptions::default(),
    )?;
    let t_slow = &prep.t_slow;
    let cost = evaluate_cost(&run.plant, |x| t_slow * x, q, r_w);
    Ok((run, cost))
}

/// Largest slow-state gap between the full plant and its reduction under the exploration input.
pub fn slow_gap(cfg: &ExperimentConfig, prep: &Prepared) -> Result<f64> {
    let sig = exploration(cfg, prep.m())?;
    let t1 = cfg.evaluation.gap_horizon;
    let full = simulate(
        &prep.plant,
        |t, _| sig.eval(t),
        &prep.x0,
        prep.h,
        t1,
        SimOptions::default(),
    )?;
    let reduced_sys = prep.ideal.to_lti()?;
    let y0 = prep.slow(&prep.x0);
    let reduced = simulate(&reduced_sys, |t, _| sig.eval(t), &y0, prep.h, t1, SimOptions::default())?;
    Ok(full
        .states
        .iter()
        .zip(&reduced.states)
        .map(|(x, ys)| (prep.slow(x) - ys).norm())
        .fold(0.0, f64::max))
}

pub fn is_decentralized(cfg: &ExperimentConfig) -> bool {
    cfg.kind == ScenarioKind::ClusterDecentralized
}

//! Experiment driver: `run`, `sweep` and `compare`, plus the report files.

pub mod config;
pub mod scenario;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::learner::{required_rank, LearnResult};
use crate::linalg::{eigenvalues, matrix_from_rows, matrix_to_rows, Matrix, Vector};
use crate::observer::{CoSimulation, UubReport};
use crate::oracle::{care_solve, PoleReport};
use crate::par::{map_indexed, Execution};
use crate::sim::{CostEstimate, Trajectory};

use config::PlantSpec;
pub use config::{ExperimentConfig, ObserverMode, ScenarioKind};
use scenario::{DecentralizedLearned, Prepared};

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub k_bar: Vec<Vec<f64>>,
    pub p_bar: Vec<Vec<f64>>,
    /// `y₀ᵀP̄y₀` of the reduced model.
    pub j_bar: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub simulated: Option<CostEstimate>,
    /// Exact infinite-horizon cost of the full closed loop.
    pub lyapunov: Option<f64>,
}

/// Data budget of the run, next to the textbook counts.
#[derive(Debug, Clone, Serialize)]
pub struct SampleReport {
    pub windows: usize,
    pub window: f64,
    pub data_horizon: f64,
    pub rank_bound: usize,
    pub samples: usize,
    pub min_horizon: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterReport {
    pub cluster: usize,
    pub learning: LearnResult,
    pub k_bar: f64,
    pub j_simulated: Option<f64>,
    pub j_bar: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObserverReport {
    pub mode: ObserverMode,
    pub uub: Option<UubReport>,
    pub closed_loop_cost: Option<CostEstimate>,
    pub closed_loop_error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub kind: ScenarioKind,
    pub config_hash: String,
    pub epsilon: f64,
    pub dt: f64,
    pub substep: f64,
    /// Final reduced gain (block-diagonal composite for the decentralized kind).
    pub gain: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning: Option<LearnResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<ClusterReport>>,
    pub oracle: OracleReport,
    pub cost: CostReport,
    pub poles: PoleReport,
    pub closed_loop_abscissa: f64,
    pub stable: bool,
    /// Learning converged and the learned gain stabilizes the plant.
    pub converged: bool,
    pub q_scale: f64,
    pub samples: SampleReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observer: Option<ObserverReport>,
    pub files: Vec<String>,
}

/// A report plus the trajectories that back it.
pub struct RunOutcome {
    pub report: RunReport,
    pub exploration: Trajectory,
    pub closed_loop: Option<Trajectory>,
    pub observer_run: Option<CoSimulation>,
    pub stride: usize,
    pub learn_seconds: f64,
}

/// Options that do not change results, only how they are computed.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub exec: Execution,
}

fn weights(cfg: &ExperimentConfig) -> Result<(Matrix, Matrix)> {
    Ok((matrix_from_rows(&cfg.weights.q)?, matrix_from_rows(&cfg.weights.r)?))
}

fn sample_report(cfg: &ExperimentConfig, r: usize, m: usize) -> SampleReport {
    let windows = scenario::window_count(cfg, r, m);
    let window = scenario::window(cfg);
    let samples = r * r + 2 * r * m;
    SampleReport {
        windows,
        window,
        data_horizon: windows as f64 * window,
        rank_bound: required_rank(r, m),
        samples,
        min_horizon: samples as f64 * cfg.sampling.dt,
    }
}

/// Run one scenario end to end without touching the filesystem.
pub fn run(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut prep = scenario::prepare(cfg)?;
    if cfg.kind.is_output_feedback() {
        tighten_for_observer(cfg, &mut prep)?;
    }
    let (q, r_w) = weights(cfg)?;
    if cfg.kind == ScenarioKind::ClusterDecentralized {
        return run_decentralized(cfg, &prep, &q, &r_w, opts);
    }

    let oracle = scenario::oracle_solution(&prep, &q, &r_w)?;
    let y0 = prep.slow(&prep.x0);
    let started = Instant::now();
    let collected = if cfg.kind.is_output_feedback() {
        scenario::collect_output_feedback(cfg, &prep, opts.exec)?
    } else {
        scenario::collect_state_feedback(cfg, &prep, opts.exec)?
    };
    let uub = collected.observer.as_ref().map(|run| run.uub(collected.warmup));
    let bound = if cfg.kind.is_output_feedback() {
        Some(uub.map_or(0.0, |u| u.bound))
    } else {
        None
    };
    let learned = scenario::learn_with_retry(cfg, &prep, &collected.data, &q, &r_w, bound)?;
    let learn_seconds = started.elapsed().as_secs_f64();
    let k = learned.result.k_final.clone();
    let eval = scenario::evaluate(cfg, &prep, &k, &q, &r_w)?;

    let observer = if cfg.kind.is_output_feedback() {
        let spec = cfg.observer.as_ref().expect("validated");
        let (cost, err) = if spec.mode == ObserverMode::Adaptive && learned.abscissa < 0.0 {
            match scenario::evaluate_with_observer(cfg, &prep, &k, &q, &r_w) {
                Ok((_, c)) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            }
        } else {
            (None, None)
        };
        Some(ObserverReport {
            mode: spec.mode,
            uub,
            closed_loop_cost: cost,
            closed_loop_error: err,
        })
    } else {
        None
    };

    let stable = learned.abscissa < 0.0;
    let report = RunReport {
        name: cfg.name.clone(),
        kind: cfg.kind,
        config_hash: cfg.hash(),
        epsilon: cfg.epsilon(),
        dt: cfg.sampling.dt,
        substep: prep.h,
        gain: matrix_to_rows(&k),
        converged: learned.result.converged && stable,
        learning: Some(learned.result),
        clusters: None,
        oracle: OracleReport {
            k_bar: matrix_to_rows(&oracle.k),
            p_bar: matrix_to_rows(&oracle.p),
            j_bar: y0.dot(&(&oracle.p * &y0)),
        },
        cost: CostReport {
            simulated: eval.simulated,
            lyapunov: eval.lyapunov,
        },
        closed_loop_abscissa: learned.abscissa,
        poles: eval.poles,
        stable,
        q_scale: learned.q_scale,
        samples: sample_report(cfg, prep.r(), prep.m()),
        observer,
        files: Vec::new(),
    };
    Ok(RunOutcome {
        report,
        exploration: collected.exploration,
        closed_loop: eval.trajectory,
        observer_run: collected.observer,
        stride: prep.stride(cfg.sampling.dt),
        learn_seconds,
    })
}

/// The joint plant/observer integration must also resolve the observer's fastest pole.
fn tighten_for_observer(cfg: &ExperimentConfig, prep: &mut Prepared) -> Result<()> {
    let spec = cfg.observer.as_ref().expect("validated");
    if spec.mode == ObserverMode::Perfect || cfg.sampling.substep.is_some() {
        return Ok(());
    }
    let obs = scenario::observer_config(cfg, spec, prep)?;
    let a_c = &obs.a_hat - &obs.g_obs * &prep.plant.c;
    let rho = eigenvalues(&a_c)?.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if rho * prep.h > 1.0 {
        let dt = cfg.sampling.dt;
        let ratio = (dt * rho - 1e-9).ceil().max(1.0);
        prep.h = dt / ratio;
    }
    Ok(())
}

fn run_decentralized(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    q: &Matrix,
    r_w: &Matrix,
    opts: RunOptions,
) -> Result<RunOutcome> {
    let net = prep.network.as_ref().expect("network plant");
    let (s, p) = (net.s(), net.p());
    let started = Instant::now();
    let DecentralizedLearned {
        results,
        composite,
        q_scale,
        abscissa,
        exploration,
    } = scenario::learn_clusters(cfg, prep, q, r_w, opts.exec)?;
    let learn_seconds = started.elapsed().as_secs_f64();

    let aggregate_q = crate::linalg::kron(&Matrix::identity(net.r(), net.r()), q);
    let aggregate_r = crate::linalg::kron(&Matrix::identity(net.r(), net.r()), r_w);
    let eval = scenario::evaluate(cfg, prep, &composite, &aggregate_q, &aggregate_r)?;
    let y0 = prep.slow(&prep.x0);
    let parts = net.decoupled_slow();

    let mut clusters = Vec::with_capacity(results.len());
    for (a, learning) in results.into_iter().enumerate() {
        let sol = care_solve(&parts[a].a_s, &parts[a].b_s, q, r_w, None)?;
        let ya = y0.rows(a * s, s).into_owned();
        let j_simulated = eval.trajectory.as_ref().map(|traj| {
            let rows = prep.t_slow.rows(a * s, s).into_owned();
            let per = Trajectory {
                dt: traj.dt,
                times: traj.times.clone(),
                states: traj.states.clone(),
                inputs: traj.inputs.iter().map(|u| u.rows(a * p, p).into_owned()).collect(),
            };
            crate::sim::evaluate_cost(&per, |x| &rows * x, q, r_w).value
        });
        clusters.push(ClusterReport {
            cluster: a + 1,
            k_bar: sol.k[(0, 0)],
            j_bar: ya.dot(&(&sol.p * &ya)),
            j_simulated,
            learning,
        });
    }
    let oracle = care_solve(&prep.ideal.a_s, &prep.ideal.b_s, &aggregate_q, &aggregate_r, None)?;
    let stable = abscissa < 0.0;
    let converged = clusters.iter().all(|c| c.learning.converged) && stable;
    let report = RunReport {
        name: cfg.name.clone(),
        kind: cfg.kind,
        config_hash: cfg.hash(),
        epsilon: cfg.epsilon(),
        dt: cfg.sampling.dt,
        substep: prep.h,
        gain: matrix_to_rows(&composite),
        learning: None,
        clusters: Some(clusters),
        oracle: OracleReport {
            k_bar: matrix_to_rows(&oracle.k),
            p_bar: matrix_to_rows(&oracle.p),
            j_bar: y0.dot(&(&oracle.p * &y0)),
        },
        cost: CostReport {
            simulated: eval.simulated,
            lyapunov: eval.lyapunov,
        },
        poles: eval.poles,
        closed_loop_abscissa: abscissa,
        stable,
        converged,
        q_scale,
        samples: sample_report(cfg, s, p),
        observer: None,
        files: Vec::new(),
    };
    Ok(RunOutcome {
        report,
        exploration,
        closed_loop: eval.trajectory,
        observer_run: None,
        stride: prep.stride(cfg.sampling.dt),
        learn_seconds,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub gain: Vec<Vec<f64>>,
    /// `‖K(ε) − K̄‖_F`.
    pub gain_error: f64,
    /// `max_{[0,t₁]} ‖y − y_s‖` under the exploration input.
    pub slow_gap: f64,
    pub converged: bool,
    pub stable: bool,
    pub simulated_cost: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRatio {
    pub from: f64,
    pub to: f64,
    pub gain_error_ratio: f64,
    pub slow_gap_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub k_bar: Vec<Vec<f64>>,
    pub gap_horizon: f64,
    pub entries: Vec<SweepEntry>,
    pub ratios: Vec<SweepRatio>,
}

pub struct SweepOutcome {
    pub report: SweepReport,
    pub runs: Vec<RunOutcome>,
}

/// One run per ε, fanned out over the ε list.
pub fn sweep_epsilon(cfg: &ExperimentConfig, eps_list: &[f64], opts: RunOptions) -> Result<SweepOutcome> {
    if cfg.kind.is_cluster() {
        return Err(Error::Config(
            "epsilon sweeps are defined for two-time-scale plants".into(),
        ));
    }
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Config(
            "sweep needs a non-empty list of positive epsilons".into(),
        ));
    }
    let configs: Vec<ExperimentConfig> = eps_list
        .iter()
        .map(|&e| {
            let mut c = cfg.clone();
            c.set_epsilon(e);
            c
        })
        .collect();
    let outcomes = map_indexed(configs.len(), opts.exec, |i| -> Result<(RunOutcome, f64)> {
        let c = &configs[i];
        let outcome = run(c, opts).map_err(|e| e.context(format!("epsilon = {}", eps_list[i])))?;
        let gap = scenario::slow_gap(c, &scenario::prepare(c)?)?;
        Ok((outcome, gap))
    });
    let (q, r_w) = weights(cfg)?;
    let prep = scenario::prepare(&configs[0])?;
    let oracle = scenario::oracle_solution(&prep, &q, &r_w)?;

    let mut entries = Vec::new();
    let mut runs = Vec::new();
    for (i, res) in outcomes.into_iter().enumerate() {
        let (outcome, gap) = res?;
        let k = matrix_from_rows(&outcome.report.gain)?;
        entries.push(SweepEntry {
            epsilon: eps_list[i],
            gain: outcome.report.gain.clone(),
            gain_error: (&k - &oracle.k).norm(),
            slow_gap: gap,
            converged: outcome.report.converged,
            stable: outcome.report.stable,
            simulated_cost: outcome.report.cost.simulated.map(|c| c.value),
        });
        runs.push(outcome);
    }
    let ratios = entries
        .windows(2)
        .map(|w| SweepRatio {
            from: w[0].epsilon,
            to: w[1].epsilon,
            gain_error_ratio: w[0].gain_error / w[1].gain_error,
            slow_gap_ratio: w[0].slow_gap / w[1].slow_gap,
        })
        .collect();
    Ok(SweepOutcome {
        report: SweepReport {
            config_hash: cfg.hash(),
            k_bar: matrix_to_rows(&oracle.k),
            gap_horizon: cfg.evaluation.gap_horizon,
            entries,
            ratios,
        },
        runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimensionCount {
    pub states: usize,
    pub inputs: usize,
    /// `n² + 2nm`: unknowns of `P` (as a full matrix) plus two copies of the gain count.
    pub samples: usize,
    pub min_horizon: f64,
    /// `n(n+1)/2 + nm` from the rank condition.
    pub rank_bound: usize,
}

impl DimensionCount {
    pub fn new(states: usize, inputs: usize, dt: f64) -> Self {
        let samples = states * states + 2 * states * inputs;
        Self {
            states,
            inputs,
            samples,
            min_horizon: samples as f64 * dt,
            rank_bound: required_rank(states, inputs),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub config_hash: String,
    pub dt: f64,
    pub reduced: DimensionCount,
    pub full: DimensionCount,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareTiming {
    pub reduced_learning_seconds: Option<f64>,
    pub full_learning_seconds: Option<f64>,
}

/// Pure sample-count accounting for reduced vs full-dimensional learning.
pub fn compare_dims(cfg: &ExperimentConfig) -> Result<CompareReport> {
    let (reduced, full) = match &cfg.plant {
        PlantSpec::Network(_) => {
            let net = cfg.network()?;
            (
                (net.r() * net.s(), net.r() * net.p()),
                (net.n() * net.s(), net.n() * net.p()),
            )
        }
        _ => {
            let eps = if cfg.epsilon() == 0.0 { 1.0 } else { cfg.epsilon() };
            let sp = cfg.sp_system(eps)?;
            ((sp.r(), sp.m()), (sp.n(), sp.m()))
        }
    };
    let dt = cfg.sampling.dt;
    Ok(CompareReport {
        config_hash: cfg.hash(),
        dt,
        reduced: DimensionCount::new(reduced.0, reduced.1, dt),
        full: DimensionCount::new(full.0, full.1, dt),
    })
}

/// Wall-clock of a full-dimensional learning run on the network (informational).
fn time_full_learning(cfg: &ExperimentConfig, opts: RunOptions) -> Result<f64> {
    let net = cfg.network()?;
    let sys = net.system();
    let n = sys.n();
    let (q, r_w) = weights(cfg)?;
    let q_full = Matrix::identity(n, n) * (q.trace() / q.nrows() as f64);
    let r_full = Matrix::identity(sys.m(), sys.m()) * (r_w.trace() / r_w.nrows() as f64);
    let mut full_cfg = cfg.clone();
    full_cfg.sampling.windows = None;
    full_cfg.learning.k0 = None;
    let sig = scenario::exploration(&full_cfg, sys.m())?;
    let win = scenario::window(&full_cfg);
    let l = scenario::window_count(&full_cfg, n, sys.m());
    let times = crate::sim::uniform_sample_times(full_cfg.sampling.start, win, l);
    let t_end = times.last().copied().unwrap_or(0.0) + win;
    let started = Instant::now();
    let traj = crate::sim::simulate(
        &sys,
        |t, _| sig.eval(t),
        &Vector::from_column_slice(&cfg.x0),
        full_cfg.sampling.dt,
        t_end,
        Default::default(),
    )?;
    let data = crate::sim::collect_adp_data(&traj, |x: &Vector| x.clone(), win, &times, opts.exec)?;
    let adp = scenario::adp_config(&full_cfg, &q_full, &r_full, 1.0)?;
    // divergence or non-convergence is irrelevant for timing
    let _ = crate::learner::learn(&data, &adp);
    Ok(started.elapsed().as_secs_f64())
}

/// Outcome classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    NotConverged,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::NotConverged => 2,
        }
    }
}

/// 2 for learning failures (rank, divergence, non-convergence), 1 for everything else.
pub fn error_exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::RankDeficient { .. } | Error::Diverged { .. } | Error::NoStabilizingGain => 2,
        _ => 1,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn every<T: Clone>(v: &[T], stride: usize) -> Vec<T> {
    v.iter().step_by(stride.max(1)).cloned().collect()
}

fn decimate(traj: &Trajectory, stride: usize) -> Trajectory {
    Trajectory {
        dt: traj.dt * stride as f64,
        times: every(&traj.times, stride),
        states: every(&traj.states, stride),
        inputs: every(&traj.inputs, stride),
    }
}

fn write_csv_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_convergence(path: &Path, report: &RunReport) -> Result<()> {
    write_csv_file(path, |w| {
        let rows: Vec<(Option<usize>, &LearnResult)> = match (&report.learning, &report.clusters) {
            (Some(l), _) => vec![(None, l)],
            (None, Some(cs)) => cs.iter().map(|c| (Some(c.cluster), &c.learning)).collect(),
            _ => vec![],
        };
        let decentralized = report.clusters.is_some();
        let width = rows.first().map_or(0, |(_, l)| l.k_final.len());
        let mut header = Vec::new();
        if decentralized {
            header.push("cluster".to_string());
        }
        header.push("k".into());
        header.push("dP_norm".into());
        let shape = rows.first().map_or((0, 0), |(_, l)| l.k_final.shape());
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                header.push(format!("K{}_{}", i + 1, j + 1));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for (cluster, l) in rows {
            for h in &l.history {
                let mut cells = Vec::with_capacity(width + 3);
                if let Some(c) = cluster {
                    cells.push(c.to_string());
                }
                cells.push(h.k.to_string());
                cells.push(h.dp_norm.map_or(String::new(), |d| format!("{d:.16e}")));
                for i in 0..h.gain.nrows() {
                    for j in 0..h.gain.ncols() {
                        cells.push(format!("{:.16e}", h.gain[(i, j)]));
                    }
                }
                writeln!(w, "{}", cells.join(","))?;
            }
        }
        Ok(())
    })
}

/// Write `report.json`, `convergence.csv` and `trajectories/*.csv` under `outdir`.
pub fn write_run(outdir: &Path, outcome: &mut RunOutcome) -> Result<()> {
    let traj_dir = outdir.join("trajectories");
    fs::create_dir_all(&traj_dir)?;
    let mut files = Vec::new();
    let stride = outcome.stride;

    let exploration = decimate(&outcome.exploration, stride);
    write_csv_file(&traj_dir.join("exploration.csv"), |w| exploration.write_csv(w))?;
    files.push("trajectories/exploration.csv".to_string());
    if let Some(cl) = &outcome.closed_loop {
        let cl = decimate(cl, stride);
        write_csv_file(&traj_dir.join("closed_loop.csv"), |w| cl.write_csv(w))?;
        files.push("trajectories/closed_loop.csv".into());
    }
    if let Some(run) = &outcome.observer_run {
        let keep: Vec<usize> = (0..run.plant.len()).step_by(stride.max(1)).collect();
        let thinned = CoSimulation {
            plant: decimate(&run.plant, stride),
            estimate: decimate(&run.estimate, stride),
            error_norms: keep.iter().map(|&i| run.error_norms[i]).collect(),
            final_observer: run.final_observer.clone(),
        };
        write_csv_file(&traj_dir.join("observer_error.csv"), |w| thinned.write_error_csv(w))?;
        files.push("trajectories/observer_error.csv".into());
    }
    write_convergence(&outdir.join("convergence.csv"), &outcome.report)?;
    files.push("convergence.csv".into());
    files.push("report.json".into());
    files.push("timing.json".into());
    outcome.report.files = files;
    write_json(&outdir.join("report.json"), &outcome.report)?;
    write_json(
        &outdir.join("timing.json"),
        &serde_json::json!({ "learning_seconds": outcome.learn_seconds }),
    )?;
    Ok(())
}

/// CLI-level commands.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Run,
    Sweep(Vec<f64>),
    Compare,
}

/// Execute a command and write its artifacts; on error a `FAILED` marker is left behind.
pub fn execute(command: &Command, cfg: &ExperimentConfig, outdir: &Path, opts: RunOptions) -> Result<Status> {
    fs::create_dir_all(outdir)?;
    let marker = outdir.join("FAILED");
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let result = execute_inner(command, cfg, outdir, opts);
    if let Err(e) = &result {
        fs::write(&marker, format!("{e}\n"))?;
    }
    result
}

fn execute_inner(command: &Command, cfg: &ExperimentConfig, outdir: &Path, opts: RunOptions) -> Result<Status> {
    match command {
        Command::Run => {
            let mut outcome = run(cfg, opts)?;
            write_run(outdir, &mut outcome)?;
            Ok(if outcome.report.converged {
                Status::Success
            } else {
                Status::NotConverged
            })
        }
        Command::Sweep(eps) => {
            let mut sweep = sweep_epsilon(cfg, eps, opts)?;
            let mut all_converged = true;
            for (entry, outcome) in sweep.report.entries.iter().zip(sweep.runs.iter_mut()) {
                let sub: PathBuf = outdir.join(format!("eps_{}", entry.epsilon));
                write_run(&sub, outcome)?;
                all_converged &= outcome.report.converged;
            }
            write_json(&outdir.join("report.json"), &sweep.report)?;
            Ok(if all_converged {
                Status::Success
            } else {
                Status::NotConverged
            })
        }
        Command::Compare => {
            let report = compare_dims(cfg)?;
            let reduced = run(cfg, opts).ok().map(|o| o.learn_seconds);
            let full = if cfg.evaluation.compare_full && cfg.kind.is_cluster() {
                Some(time_full_learning(cfg, opts)?)
            } else {
                None
            };
            write_json(&outdir.join("report.json"), &report)?;
            write_json(
                &outdir.join("timing.json"),
                &CompareTiming {
                    reduced_learning_seconds: reduced,
                    full_learning_seconds: full,
                },
            )?;
            Ok(Status::Success)
        }
    }
}

//! JSON experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{build_network, ring_inter_edges, ClusteredNetwork, Edge, NetworkSpec};
use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, Matrix};
use crate::oracle::PoleSplit;
use crate::sim::ExplorationSpec;
use crate::sp_model::SpSystem;

/// Row-major nested matrix literal.
pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SpStateFeedback,
    SpOutputFeedback,
    ClusterCentralized,
    ClusterDecentralized,
    ClusterOutputFeedback,
}

impl ScenarioKind {
    pub fn is_cluster(self) -> bool {
        matches!(
            self,
            Self::ClusterCentralized | Self::ClusterDecentralized | Self::ClusterOutputFeedback
        )
    }

    pub fn is_output_feedback(self) -> bool {
        matches!(self, Self::SpOutputFeedback | Self::ClusterOutputFeedback)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub kind: ScenarioKind,
    pub plant: PlantSpec,
    pub weights: Weights,
    #[serde(default)]
    pub learning: LearningSpec,
    #[serde(default)]
    pub exploration: ExplorationSpec,
    #[serde(default)]
    pub sampling: SamplingSpec,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer: Option<ObserverSpec>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    /// Blocks in slow/fast coordinates. `epsilon = 0` runs the reduced model itself.
    Sp {
        a11: Rows,
        a12: Rows,
        a21: Rows,
        a22: Rows,
        b1: Rows,
        b2: Rows,
        epsilon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<Rows>,
    },
    /// `ẋ = Ax + Bu` in original coordinates with the slow/fast maps `(T, G)`.
    SpOriginal {
        a: Rows,
        b: Rows,
        t_slow: Rows,
        g_fast: Rows,
        epsilon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<Rows>,
    },
    Network(NetworkPlant),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkPlant {
    pub cluster_sizes: Vec<usize>,
    #[serde(default = "one")]
    pub intra_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intra_edges: Option<Vec<Edge>>,
    /// Ring of inter-cluster edges with `inter_weight` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inter_edges: Option<Vec<Edge>>,
    #[serde(default = "one")]
    pub inter_weight: f64,
    #[serde(default = "scalar_zero")]
    pub f_self: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_agents: Option<Vec<Rows>>,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
}

fn one() -> f64 {
    1.0
}

fn scalar_zero() -> Rows {
    vec![vec![0.0]]
}

/// Cost weights; per cluster for the decentralized kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub q: Rows,
    pub r: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningSpec {
    /// Initial gain (per cluster for the decentralized kind); zero when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<Rows>,
    pub gamma: f64,
    pub max_iters: usize,
    pub rank_tolerance: f64,
    /// Q is multiplied by this factor when a learned gain fails the stability check.
    pub q_retry_factor: f64,
    pub q_retry_attempts: usize,
}

impl Default for LearningSpec {
    fn default() -> Self {
        Self {
            k0: None,
            gamma: 1e-6,
            max_iters: 30,
            rank_tolerance: 1e-9,
            q_retry_factor: 10.0,
            q_retry_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    /// Learning time step; the integrator may subdivide it.
    pub dt: f64,
    /// Window length T in units of dt.
    pub window_steps: usize,
    /// Number of windows l; twice the unknown count when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<usize>,
    /// Time of the first window start.
    pub start: f64,
    /// Forces the integrator step when present (must divide dt).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub substep: Option<f64>,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            dt: 0.01,
            window_steps: 10,
            windows: None,
            start: 0.0,
            substep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSpec {
    /// Closed-loop simulation horizon for the cost.
    pub horizon: f64,
    /// Horizon t₁ of the slow-state gap in ε sweeps.
    pub gap_horizon: f64,
    /// Slow/fast pole split; the reduced dimension by count when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pole_split: Option<PoleSplit>,
    /// Also time a full-dimensional learning run in `compare`.
    pub compare_full: bool,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            horizon: 20.0,
            gap_horizon: 1.0,
            pole_split: None,
            compare_full: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverMode {
    #[default]
    Adaptive,
    /// Estimate equals the true state; learning then uses exactly the state-feedback data.
    Perfect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverSpec {
    pub mode: ObserverMode,
    pub neurons: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub init_scale: f64,
    /// State weight of the dual Riccati design for G.
    pub q_obs: f64,
    /// Explicit Â; otherwise a perturbed copy of the plant structure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_hat: Option<Rows>,
    /// Explicit G; otherwise from the dual Riccati design.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_obs: Option<Rows>,
    /// Diagonal shift subtracted from the default Â.
    pub shift: f64,
    /// Multipliers on the slow→fast / fast→slow couplings and A₂₂ for the default SP Â.
    pub coupling_scale: f64,
    pub fast_scale: f64,
    /// Multipliers on the intra / inter Laplacians for the default network Â.
    pub intra_scale: f64,
    pub inter_scale: f64,
    /// Observer warm-up t₂ before the first learning window.
    pub warmup: f64,
    /// The exploration co-simulation runs at least this long so the error tube is visible.
    pub tube_horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_hat0: Option<Vec<f64>>,
    pub weight_bound: f64,
}

impl Default for ObserverSpec {
    fn default() -> Self {
        Self {
            mode: ObserverMode::Adaptive,
            neurons: 20,
            eta1: 10.0,
            eta2: 10.0,
            rho1: 1e-3,
            rho2: 1e-3,
            init_scale: 1.0,
            q_obs: 100.0,
            a_hat: None,
            g_obs: None,
            shift: 1.0,
            coupling_scale: 0.8,
            fast_scale: 1.2,
            intra_scale: 0.8,
            inter_scale: 0.5,
            warmup: 1.0,
            tube_horizon: 40.0,
            x_hat0: None,
            weight_bound: crate::observer::DEFAULT_WEIGHT_BOUND,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        Self::from_json(&text).map_err(|e| e.context(format!("parsing {}", path.display())))
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn epsilon(&self) -> f64 {
        match &self.plant {
            PlantSpec::Sp { epsilon, .. } | PlantSpec::SpOriginal { epsilon, .. } => *epsilon,
            PlantSpec::Network(n) => n.epsilon,
        }
    }

    pub fn set_epsilon(&mut self, eps: f64) {
        match &mut self.plant {
            PlantSpec::Sp { epsilon, .. } | PlantSpec::SpOriginal { epsilon, .. } => *epsilon = eps,
            PlantSpec::Network(n) => n.epsilon = eps,
        }
    }

    pub fn output_matrix(&self) -> Option<&Rows> {
        match &self.plant {
            PlantSpec::Sp { c, .. } | PlantSpec::SpOriginal { c, .. } => c.as_ref(),
            PlantSpec::Network(n) => n.c.as_ref(),
        }
    }

    /// Structural checks that need no simulation.
    pub fn validate(&self) -> Result<()> {
        let network = matches!(self.plant, PlantSpec::Network(_));
        if self.kind.is_cluster() != network {
            return Err(Error::Config(format!(
                "scenario {:?} does not match the plant section",
                self.kind
            )));
        }
        if self.kind.is_output_feedback() {
            if self.output_matrix().is_none() {
                return Err(Error::Config(
                    "output-feedback scenarios need an output matrix `c`".into(),
                ));
            }
            match &self.observer {
                None => {
                    return Err(Error::Config(
                        "output-feedback scenarios need an `observer` section".into(),
                    ))
                }
                Some(o) if o.warmup < 0.0 || o.tube_horizon < 0.0 || o.neurons == 0 => {
                    return Err(Error::Config(
                        "observer needs warmup >= 0, tube_horizon >= 0, neurons > 0".into(),
                    ))
                }
                Some(_) => {}
            }
        }
        let s = &self.sampling;
        if !(s.dt > 0.0) || s.window_steps == 0 || s.start < 0.0 {
            return Err(Error::Config(
                "sampling needs dt > 0, window_steps > 0, start >= 0".into(),
            ));
        }
        if !(self.evaluation.horizon > 0.0) || !(self.evaluation.gap_horizon > 0.0) {
            return Err(Error::Config("evaluation horizons must be positive".into()));
        }
        if self.epsilon() < 0.0 || (network && self.epsilon() == 0.0) {
            return Err(Error::Config(
                "epsilon must be positive (or zero for an ideal SP run)".into(),
            ));
        }
        let eps = self.epsilon();
        let (n, r) = match &self.plant {
            PlantSpec::Network(_) => {
                let net = self.network()?;
                (net.n() * net.s(), net.r() * net.s())
            }
            _ => {
                let sp = self.sp_system(if eps == 0.0 { 1.0 } else { eps })?;
                (if eps == 0.0 { sp.r() } else { sp.n() }, sp.r())
            }
        };
        if self.x0.len() != n {
            return Err(Error::Config(format!(
                "x0 has length {}, plant state has {n}",
                self.x0.len()
            )));
        }
        let q = matrix_from_rows(&self.weights.q)?;
        let expect_q = if self.kind == ScenarioKind::ClusterDecentralized {
            self.network()?.s()
        } else {
            r
        };
        if q.shape() != (expect_q, expect_q) {
            return Err(Error::Config(format!("Q must be {expect_q}x{expect_q}")));
        }
        matrix_from_rows(&self.weights.r)?;
        Ok(())
    }

    /// Two-time-scale plant with the given ε (the config's own ε is ignored).
    pub fn sp_system(&self, eps: f64) -> Result<SpSystem> {
        match &self.plant {
            PlantSpec::Sp {
                a11,
                a12,
                a21,
                a22,
                b1,
                b2,
                ..
            } => SpSystem::new(
                matrix_from_rows(a11)?,
                matrix_from_rows(a12)?,
                matrix_from_rows(a21)?,
                matrix_from_rows(a22)?,
                matrix_from_rows(b1)?,
                matrix_from_rows(b2)?,
                eps,
            ),
            PlantSpec::SpOriginal {
                a,
                b,
                t_slow,
                g_fast,
                epsilon,
                ..
            } => {
                // blocks are defined by the stored plant; rescale the fast rows for a new ε
                let base = SpSystem::from_original(
                    &matrix_from_rows(a)?,
                    &matrix_from_rows(b)?,
                    matrix_from_rows(t_slow)?,
                    matrix_from_rows(g_fast)?,
                    *epsilon,
                )?;
                base.with_epsilon(eps)
            }
            PlantSpec::Network(_) => Err(Error::Config("not a two-time-scale plant section".into())),
        }
    }

    pub fn network(&self) -> Result<ClusteredNetwork> {
        let PlantSpec::Network(p) = &self.plant else {
            return Err(Error::Config("not a network plant section".into()));
        };
        let inter_edges = match &p.inter_edges {
            Some(e) => e.clone(),
            None => ring_inter_edges(&p.cluster_sizes, p.inter_weight),
        };
        let b_agents = match &p.b_agents {
            Some(list) => Some(
                list.iter()
                    .map(|b| matrix_from_rows(b))
                    .collect::<Result<Vec<Matrix>>>()?,
            ),
            None => None,
        };
        build_network(&NetworkSpec {
            cluster_sizes: p.cluster_sizes.clone(),
            intra_weight: p.intra_weight,
            intra_edges: p.intra_edges.clone(),
            inter_edges,
            f_self: matrix_from_rows(&p.f_self)?,
            b_agents,
            epsilon: p.epsilon,
        })
    }
}

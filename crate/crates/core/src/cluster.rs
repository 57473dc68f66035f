//! Clustered consensus networks and their two-time-scale structure.
//!
//! Laplacians are stored with the usual sign (positive diagonal, non-positive
//! off-diagonal), so the consensus dynamics read `ẋ = (I⊗F − L⊗I_s)x + Bu`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, ensure_finite, kron, pseudo_inverse, Matrix};
use crate::sim::LtiSystem;
use crate::sp_model::{SlowSubsystem, SpSystem};

/// Undirected weighted edge between two agents (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge(pub usize, pub usize, pub f64);

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredNetwork {
    pub clusters: Vec<Vec<usize>>,
    pub f_self: Matrix,
    pub l_internal: Matrix,
    pub l_external: Matrix,
    pub epsilon: f64,
    pub b_agents: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTransforms {
    pub t1: Matrix,
    pub g1: Matrix,
    pub u1: Matrix,
    pub n_a: Vec<usize>,
    pub m_proj: Matrix,
    pub t: Matrix,
    pub g: Matrix,
    pub u: Matrix,
    /// Lifted pseudo-inverse G†.
    pub g_pinv: Matrix,
}

/// Inputs to [`build_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub cluster_sizes: Vec<usize>,
    pub intra_weight: f64,
    /// Replaces the complete intra-cluster graphs when present.
    pub intra_edges: Option<Vec<Edge>>,
    pub inter_edges: Vec<Edge>,
    pub f_self: Matrix,
    /// One `s x p` map per agent; identity when absent.
    pub b_agents: Option<Vec<Matrix>>,
    pub epsilon: f64,
}

fn laplacian(n: usize, edges: &[Edge]) -> Matrix {
    let mut l = Matrix::zeros(n, n);
    for &Edge(i, j, w) in edges {
        l[(i, j)] -= w;
        l[(j, i)] -= w;
        l[(i, i)] += w;
        l[(j, j)] += w;
    }
    l
}

fn connected(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        parent[a] = b;
    }
    let root = find(&mut parent, 0);
    (0..n).all(|i| find(&mut parent, i) == root)
}

pub fn build_network(spec: &NetworkSpec) -> Result<ClusteredNetwork> {
    if spec.cluster_sizes.is_empty() || spec.cluster_sizes.contains(&0) {
        return Err(Error::Config("clusters must be non-empty".into()));
    }
    let n: usize = spec.cluster_sizes.iter().sum();
    let mut clusters = Vec::with_capacity(spec.cluster_sizes.len());
    let mut owner = vec![0; n];
    let mut next = 0;
    for (a, &size) in spec.cluster_sizes.iter().enumerate() {
        clusters.push((next..next + size).collect::<Vec<_>>());
        owner[next..next + size].fill(a);
        next += size;
    }
    let intra = match &spec.intra_edges {
        Some(edges) => edges.clone(),
        None => {
            if !(spec.intra_weight > 0.0) {
                return Err(Error::Config("intra weight must be positive".into()));
            }
            clusters
                .iter()
                .flat_map(|c| {
                    c.iter().flat_map(move |&i| {
                        c.iter()
                            .filter(move |&&j| j > i)
                            .map(move |&j| Edge(i, j, spec.intra_weight))
                    })
                })
                .collect()
        }
    };
    for &Edge(i, j, w) in intra.iter().chain(&spec.inter_edges) {
        if i >= n || j >= n || i == j {
            return Err(Error::Config(format!("edge ({i}, {j}) is out of range or a self-loop")));
        }
        if !(w > 0.0) {
            return Err(Error::Config(format!("edge ({i}, {j}) has non-positive weight {w}")));
        }
    }
    if let Some(&Edge(i, j, _)) = intra.iter().find(|e| owner[e.0] != owner[e.1]) {
        return Err(Error::Config(format!("intra edge ({i}, {j}) crosses clusters")));
    }
    if let Some(&Edge(i, j, _)) = spec.inter_edges.iter().find(|e| owner[e.0] == owner[e.1]) {
        return Err(Error::Config(format!("inter edge ({i}, {j}) stays inside a cluster")));
    }
    if !connected(n, intra.iter().chain(&spec.inter_edges).map(|e| (e.0, e.1))) {
        return Err(Error::Config("network graph is disconnected".into()));
    }
    let s = spec.f_self.nrows();
    let b_agents = match &spec.b_agents {
        Some(b) => b.clone(),
        None => vec![Matrix::identity(s, s); n],
    };
    ClusteredNetwork::new(
        clusters,
        spec.f_self.clone(),
        laplacian(n, &intra),
        laplacian(n, &spec.inter_edges),
        spec.epsilon,
        b_agents,
    )
}

impl ClusteredNetwork {
    pub fn new(
        clusters: Vec<Vec<usize>>,
        f_self: Matrix,
        l_internal: Matrix,
        l_external: Matrix,
        epsilon: f64,
        b_agents: Vec<Matrix>,
    ) -> Result<Self> {
        let n = l_internal.nrows();
        let mut seen = vec![false; n];
        for &i in clusters.iter().flatten() {
            if i >= n || seen[i] {
                return Err(Error::Config("clusters must partition the agents".into()));
            }
            seen[i] = true;
        }
        if clusters.iter().any(Vec::is_empty) || seen.contains(&false) {
            return Err(Error::Config("clusters must be non-empty and cover every agent".into()));
        }
        if !f_self.is_square() || l_external.shape() != (n, n) || !l_internal.is_square() {
            return Err(Error::Dimension("F and both Laplacians must be square".into()));
        }
        if b_agents.len() != n {
            return Err(Error::Dimension(format!(
                "{} input maps for {n} agents",
                b_agents.len()
            )));
        }
        let s = f_self.nrows();
        let p = b_agents.first().map_or(0, Matrix::ncols);
        if b_agents.iter().any(|b| b.shape() != (s, p)) {
            return Err(Error::Dimension("every agent input map must be s x p".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        ensure_finite(&f_self, "F")?;
        let net = Self {
            clusters,
            f_self,
            l_internal,
            l_external,
            epsilon,
            b_agents,
        };
        net.check_laplacians()?;
        Ok(net)
    }

    fn check_laplacians(&self) -> Result<()> {
        let owner = self.owner();
        for (name, l) in [("internal", &self.l_internal), ("external", &self.l_external)] {
            ensure_finite(l, name)?;
            if (l - l.transpose()).amax() > 0.0 {
                return Err(Error::Config(format!("{name} Laplacian is not symmetric")));
            }
            for i in 0..l.nrows() {
                if l[(i, i)] < 0.0 || l.row(i).iter().enumerate().any(|(j, &v)| j != i && v > 0.0) {
                    return Err(Error::Config(format!("{name} Laplacian has wrong sign pattern")));
                }
                let scale = l.row(i).amax().max(1.0);
                if l.row(i).sum().abs() > 1e-12 * scale {
                    return Err(Error::Config(format!("{name} Laplacian row {i} does not sum to zero")));
                }
            }
        }
        for i in 0..self.n() {
            for j in 0..self.n() {
                if owner[i] != owner[j] && self.l_internal[(i, j)] != 0.0 {
                    return Err(Error::Config("internal Laplacian couples different clusters".into()));
                }
            }
        }
        Ok(())
    }

    fn owner(&self) -> Vec<usize> {
        let mut owner = vec![0; self.n()];
        for (a, c) in self.clusters.iter().enumerate() {
            for &i in c {
                owner[i] = a;
            }
        }
        owner
    }

    /// Number of agents.
    pub fn n(&self) -> usize {
        self.l_internal.nrows()
    }

    /// Number of clusters.
    pub fn r(&self) -> usize {
        self.clusters.len()
    }

    /// Per-agent state dimension.
    pub fn s(&self) -> usize {
        self.f_self.nrows()
    }

    /// Per-agent input dimension.
    pub fn p(&self) -> usize {
        self.b_agents[0].ncols()
    }

    /// `L = L^I + εL^E`.
    pub fn laplacian(&self) -> Matrix {
        &self.l_internal + &self.l_external * self.epsilon
    }

    /// Ratio of the strongest effective inter-cluster weight to the weakest intra weight.
    pub fn empirical_epsilon(&self) -> f64 {
        let off = |l: &Matrix| -> Vec<f64> {
            let mut v = Vec::new();
            for i in 0..l.nrows() {
                for j in i + 1..l.ncols() {
                    if l[(i, j)] != 0.0 {
                        v.push(-l[(i, j)]);
                    }
                }
            }
            v
        };
        let min_intra = off(&self.l_internal).into_iter().fold(f64::INFINITY, f64::min);
        let max_inter = off(&self.l_external).into_iter().fold(0.0, f64::max) * self.epsilon;
        max_inter / min_intra
    }

    /// `ẋ = (I_n⊗F − L⊗I_s)x + blkdiag(bᵢ)u`, full-state output.
    pub fn system(&self) -> LtiSystem {
        let n = self.n();
        let s = self.s();
        let a = kron(&Matrix::identity(n, n), &self.f_self) - kron(&self.laplacian(), &Matrix::identity(s, s));
        LtiSystem::full_state(a, block_diag(&self.b_agents)).expect("validated dimensions")
    }

    pub fn transforms(&self) -> ClusterTransforms {
        let (n, r, s, p) = (self.n(), self.r(), self.s(), self.p());
        let mut u1 = Matrix::zeros(n, r);
        let mut g1 = Matrix::zeros(n - r, n);
        let mut row = 0;
        for (a, c) in self.clusters.iter().enumerate() {
            for &i in c {
                u1[(i, a)] = 1.0;
            }
            for &i in &c[1..] {
                g1[(row, i)] = 1.0;
                g1[(row, c[0])] = -1.0;
                row += 1;
            }
        }
        let n_a: Vec<usize> = self.clusters.iter().map(Vec::len).collect();
        let mut t1 = u1.transpose();
        for (a, &size) in n_a.iter().enumerate() {
            t1.row_mut(a).scale_mut(1.0 / size as f64);
        }
        let is = Matrix::identity(s, s);
        let g = kron(&g1, &is);
        let g_pinv = pseudo_inverse(&g).expect("difference matrix has full row rank");
        ClusterTransforms {
            t: kron(&t1, &is),
            u: kron(&u1, &is),
            m_proj: kron(&u1, &Matrix::identity(p, p)),
            g,
            g_pinv,
            t1,
            g1,
            u1,
            n_a,
        }
    }

    /// Two-time-scale form in the stretched time `t_s = εt`.
    ///
    /// Derived from `y = Tx`, `z = Gx`, `x = Uy + G†z`; note that the
    /// fast-to-slow coupling A₂₁ carries a factor ε.
    pub fn sp_form(&self) -> Result<SpSystem> {
        let tr = self.transforms();
        let (n, r, s) = (self.n(), self.r(), self.s());
        let is = Matrix::identity(s, s);
        let le = kron(&self.l_external, &is);
        let li = kron(&self.l_internal, &is);
        let eps = self.epsilon;
        let f_r = kron(&Matrix::identity(r, r), &self.f_self);
        let f_fast = kron(&Matrix::identity(n - r, n - r), &self.f_self);
        let b = block_diag(&self.b_agents);
        let sp = SpSystem::new(
            -(&tr.t * &le * &tr.u) + f_r / eps,
            -(&tr.t * &le * &tr.g_pinv),
            -(&tr.g * &le * &tr.u) * eps,
            f_fast - &tr.g * &li * &tr.g_pinv - (&tr.g * &le * &tr.g_pinv) * eps,
            &tr.t * &b / eps,
            &tr.g * &b,
            eps,
        )?;
        sp.with_coordinates(tr.t, tr.g)
    }

    /// Per-cluster models with inter-cluster coupling removed: `ẏ^α = F y^α + (TBM)^{αα} ũ^α`.
    pub fn decoupled_slow(&self) -> Vec<SlowSubsystem> {
        let tr = self.transforms();
        let tbm = &tr.t * block_diag(&self.b_agents) * &tr.m_proj;
        let (s, p) = (self.s(), self.p());
        (0..self.r())
            .map(|a| SlowSubsystem {
                a_s: self.f_self.clone(),
                b_s: tbm.view((a * s, a * p), (s, p)).into_owned(),
            })
            .collect()
    }

    /// Block-diagonal composite of [`Self::decoupled_slow`].
    pub fn aggregate_slow(&self) -> SlowSubsystem {
        let parts = self.decoupled_slow();
        SlowSubsystem {
            a_s: block_diag(&parts.iter().map(|p| p.a_s.clone()).collect::<Vec<_>>()),
            b_s: block_diag(&parts.iter().map(|p| p.b_s.clone()).collect::<Vec<_>>()),
        }
    }
}

impl ClusterTransforms {
    /// Row indices of cluster `a` in the lifted slow vector.
    pub fn slow_rows(&self, a: usize, s: usize) -> Vec<usize> {
        (a * s..(a + 1) * s).collect()
    }
}

/// Complete clusters joined in a ring: last agent of cluster `a` to the first of `a + 1`.
pub fn ring_inter_edges(cluster_sizes: &[usize], weight: f64) -> Vec<Edge> {
    let r = cluster_sizes.len();
    if r < 2 {
        return Vec::new();
    }
    let offsets: Vec<usize> = cluster_sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let count = if r == 2 { 1 } else { r };
    (0..count)
        .map(|a| {
            let b = (a + 1) % r;
            Edge(offsets[a] + cluster_sizes[a] - 1, offsets[b], weight)
        })
        .collect()
}

/// Five complete clusters of five scalar integrator agents, ring-coupled.
pub fn reference_network(epsilon: f64) -> Result<ClusteredNetwork> {
    let sizes = vec![5; 5];
    build_network(&NetworkSpec {
        inter_edges: ring_inter_edges(&sizes, 1.0),
        cluster_sizes: sizes,
        intra_weight: 1.0,
        intra_edges: None,
        f_self: Matrix::zeros(1, 1),
        b_agents: None,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigenvalues;
    use approx::assert_abs_diff_eq;

    fn two_clusters() -> ClusteredNetwork {
        build_network(&NetworkSpec {
            cluster_sizes: vec![2, 1],
            intra_weight: 1.0,
            intra_edges: None,
            inter_edges: vec![Edge(1, 2, 1.0)],
            f_self: Matrix::zeros(1, 1),
            b_agents: None,
            epsilon: 0.1,
        })
        .unwrap()
    }

    #[test]
    fn two_node_laplacian() {
        let net = build_network(&NetworkSpec {
            cluster_sizes: vec![2],
            intra_weight: 1.0,
            intra_edges: None,
            inter_edges: vec![],
            f_self: Matrix::zeros(1, 1),
            b_agents: None,
            epsilon: 0.1,
        })
        .unwrap();
        assert_eq!(net.laplacian(), Matrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn small_transforms_by_hand() {
        let tr = two_clusters().transforms();
        assert_eq!(tr.t1, Matrix::from_row_slice(2, 3, &[0.5, 0.5, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(tr.g1, Matrix::from_row_slice(1, 3, &[-1.0, 1.0, 0.0]));
        assert_eq!(tr.u1, Matrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]));
        assert_eq!(&tr.t1 * &tr.u1, Matrix::identity(2, 2));
    }

    #[test]
    fn reference_identities() {
        let net = reference_network(0.02).unwrap();
        let tr = net.transforms();
        assert_abs_diff_eq!(&tr.t1 * &tr.u1, Matrix::identity(5, 5), epsilon = 1e-12);
        assert!((&tr.g1 * &tr.u1).amax() < 1e-12);
        assert!((&tr.t1 * pseudo_inverse(&tr.g1).unwrap()).amax() < 1e-12);
        assert_abs_diff_eq!(&tr.t * &tr.m_proj, Matrix::identity(5, 5), epsilon = 1e-12);
        let l = net.laplacian();
        for i in 0..25 {
            assert!(l.row(i).sum().abs() < 1e-15);
        }
    }

    #[test]
    fn reference_open_loop_spectrum() {
        let net = reference_network(0.02).unwrap();
        let mut re: Vec<f64> = eigenvalues(&net.system().a).unwrap().iter().map(|z| z.re).collect();
        re.sort_by(|a, b| b.total_cmp(a));
        assert!(re[0].abs() < 1e-10);
        assert!(re[1..5].iter().all(|&v| v < -1e-4 && v > -0.1), "{re:?}");
        assert!(re[5..].iter().all(|&v| v < -4.0), "{re:?}");
    }

    #[test]
    fn sp_form_matches_scaled_spectrum() {
        let net = reference_network(0.02).unwrap();
        let sp = net.sp_form().unwrap();
        let assembled = sp.assemble_full();
        let mut lhs: Vec<f64> = eigenvalues(&assembled.a)
            .unwrap()
            .iter()
            .map(|z| z.re * net.epsilon)
            .collect();
        let mut rhs: Vec<f64> = eigenvalues(&net.system().a).unwrap().iter().map(|z| z.re).collect();
        lhs.sort_by(f64::total_cmp);
        rhs.sort_by(f64::total_cmp);
        for (a, b) in lhs.iter().zip(&rhs) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        assert!(sp.check_fast_stable().unwrap() < 0.0);
    }

    #[test]
    fn no_external_edges_decouples() {
        let net = ClusteredNetwork::new(
            vec![vec![0, 1], vec![2, 3]],
            Matrix::zeros(1, 1),
            laplacian(4, &[Edge(0, 1, 1.0), Edge(2, 3, 2.0)]),
            Matrix::zeros(4, 4),
            0.1,
            vec![Matrix::identity(1, 1); 4],
        )
        .unwrap();
        let sp = net.sp_form().unwrap();
        assert!(sp.a11.amax() < 1e-15);
        assert!(sp.a21.amax() < 1e-15);
    }

    #[test]
    fn decoupled_integrators() {
        let net = reference_network(0.02).unwrap();
        let parts = net.decoupled_slow();
        assert_eq!(parts.len(), 5);
        for p in parts {
            assert_eq!(p.a_s, Matrix::zeros(1, 1));
            assert_abs_diff_eq!(p.b_s[(0, 0)], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn rejects_bad_graphs() {
        let base = NetworkSpec {
            cluster_sizes: vec![2, 2],
            intra_weight: 1.0,
            intra_edges: None,
            inter_edges: vec![],
            f_self: Matrix::zeros(1, 1),
            b_agents: None,
            epsilon: 0.1,
        };
        assert!(build_network(&base).is_err(), "disconnected");
        let inside = NetworkSpec {
            inter_edges: vec![Edge(0, 1, 1.0)],
            ..base.clone()
        };
        assert!(build_network(&inside).is_err());
        let negative = NetworkSpec {
            inter_edges: vec![Edge(1, 2, -1.0)],
            ..base.clone()
        };
        assert!(build_network(&negative).is_err());
        let ok = NetworkSpec {
            inter_edges: vec![Edge(1, 2, 1.0)],
            ..base
        };
        let net = build_network(&ok).unwrap();
        assert_abs_diff_eq!(net.empirical_epsilon(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn ring_edges() {
        assert_eq!(ring_inter_edges(&[2, 3], 0.5), vec![Edge(1, 2, 0.5)]);
        assert_eq!(ring_inter_edges(&[1, 1, 1], 1.0).len(), 3);
    }
}

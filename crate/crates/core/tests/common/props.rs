//! Property checks shared by the invariant tests and the acceptance run.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use sp_adp::cluster::{build_network, ring_inter_edges, Edge, NetworkSpec};
use sp_adp::harness::{run, RunOptions};
use sp_adp::linalg::{
    devec, kron, lyapunov_solve, min_sym_eigenvalue, pseudo_inverse, solve_least_squares, spectral_abscissa, vec,
    Matrix, Vector,
};
use sp_adp::oracle::{closed_loop_cost, kleinman_iterates, stabilizing_gain};
use sp_adp::par::Execution;
use sp_adp::sim::{evaluate_cost, simulate, ExplorationSignal, ExplorationSpec, LtiSystem, SimOptions};

pub type Outcome = Result<(), String>;
pub type Property = (&'static str, fn() -> Outcome);

fn check<S: Strategy>(cases: u32, strategy: &S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(strategy, test).map_err(|e| e.to_string())
}

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

fn sized_mat(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| mat(r, c))
}

/// Random Hurwitz matrix with abscissa at most `-margin`.
fn hurwitz(n: usize, margin: f64) -> impl Strategy<Value = Matrix> {
    mat(n, n).prop_map(move |a| {
        let shift = spectral_abscissa(&a).unwrap() + margin;
        a - Matrix::identity(n, n) * shift
    })
}

fn psd(n: usize) -> impl Strategy<Value = Matrix> {
    mat(n, n).prop_map(move |f| &f * f.transpose() + Matrix::identity(n, n) * 0.1)
}

pub fn vec_of_product() -> Outcome {
    check(64, &(mat(2, 3), mat(3, 4), mat(4, 2)), |(a, x, b)| {
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        prop_assert!((lhs - rhs).amax() < 1e-12);
        Ok(())
    })
}

pub fn kron_mixed_product() -> Outcome {
    check(64, &(mat(2, 3), mat(2, 2), mat(3, 2), mat(2, 3)), |(a, b, c, d)| {
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        prop_assert!((lhs - rhs).amax() < 1e-12);
        Ok(())
    })
}

pub fn devec_inverts_vec() -> Outcome {
    check(64, &(sized_mat(5),), |(x,)| {
        prop_assert_eq!(devec(&vec(&x), x.nrows(), x.ncols()).unwrap(), x);
        Ok(())
    })
}

pub fn lyapunov_residual_and_sign() -> Outcome {
    check(
        64,
        &((1usize..6).prop_flat_map(|n| (hurwitz(n, 0.1), psd(n))),),
        |(a,)| {
            let (a, q) = a;
            let p = lyapunov_solve(&a, &q).unwrap();
            let res = (a.transpose() * &p + &p * &a + &q).amax();
            prop_assert!(res <= 1e-9 * (1.0 + p.amax()), "residual {res:e}");
            prop_assert!(min_sym_eigenvalue(&p) > 0.0);
            prop_assert!((&p - p.transpose()).amax() <= 1e-9 * (1.0 + p.amax()));
            Ok(())
        },
    )
}

pub fn least_squares_matches_direct_solve() -> Outcome {
    check(64, &(1usize..6, any::<u64>()), |(n, seed)| {
        let a = Matrix::from_fn(n, n, |i, j| (((seed >> ((i * n + j) % 60)) & 7) as f64 - 3.5) * 0.1)
            + Matrix::identity(n, n) * 3.0;
        let b = Matrix::from_fn(n, 1, |i, _| i as f64 - 1.0);
        let ls = solve_least_squares(&a, &b, None).unwrap();
        let direct = a.clone().lu().solve(&b).unwrap();
        prop_assert!((ls.solution - direct).amax() < 1e-10);
        prop_assert_eq!(ls.rank, n);
        Ok(())
    })
}

pub fn overdetermined_least_squares_is_normal_equations() -> Outcome {
    check(64, &(mat(8, 3), mat(8, 1)), |(a, b)| {
        let a = a + Matrix::from_fn(8, 3, |i, j| if i == j { 2.0 } else { 0.0 });
        let ls = solve_least_squares(&a, &b, None).unwrap();
        // residual orthogonal to the column space
        let grad = a.transpose() * (&a * &ls.solution - &b);
        prop_assert!(grad.amax() < 1e-10);
        Ok(())
    })
}

pub fn cluster_transform_identities() -> Outcome {
    check(64, &(prop::collection::vec(1usize..5, 1..5),), |(sizes,)| {
        let net = build_network(&NetworkSpec {
            cluster_sizes: sizes.clone(),
            intra_weight: 1.0,
            intra_edges: None,
            inter_edges: ring_inter_edges(&sizes, 0.5),
            f_self: Matrix::zeros(1, 1),
            b_agents: None,
            epsilon: 0.1,
        })
        .unwrap();
        let tr = net.transforms();
        let r = sizes.len();
        prop_assert!((&tr.t1 * &tr.u1 - Matrix::identity(r, r)).amax() < 1e-12);
        prop_assert!((&tr.g1 * &tr.u1).amax() < 1e-12);
        prop_assert!((&tr.t1 * pseudo_inverse(&tr.g1).unwrap()).amax() < 1e-12);
        // slow and fast coordinates together are invertible
        let n = net.n();
        let stacked = Matrix::from_fn(n, n, |i, j| if i < r { tr.t1[(i, j)] } else { tr.g1[(i - r, j)] });
        prop_assert!(stacked.determinant().abs() > 1e-9);
        Ok(())
    })
}

pub fn laplacian_rows_sum_to_zero() -> Outcome {
    check(
        64,
        &(
            prop::collection::vec(1usize..5, 1..5),
            0.1..3.0f64,
            prop::collection::vec((0usize..16, 0usize..16, 0.1..2.0f64), 0..6),
        ),
        |(sizes, w, extra)| {
            let n: usize = sizes.iter().sum();
            let mut inter = ring_inter_edges(&sizes, w);
            let owner: Vec<usize> = sizes
                .iter()
                .enumerate()
                .flat_map(|(a, &s)| std::iter::repeat_n(a, s))
                .collect();
            for (i, j, wt) in extra {
                let (i, j) = (i % n, j % n);
                if owner[i] != owner[j] {
                    inter.push(Edge(i, j, wt));
                }
            }
            let net = build_network(&NetworkSpec {
                cluster_sizes: sizes,
                intra_weight: w,
                intra_edges: None,
                inter_edges: inter,
                f_self: Matrix::zeros(1, 1),
                b_agents: None,
                epsilon: 0.1,
            })
            .unwrap();
            for l in [&net.l_internal, &net.l_external, &net.laplacian()] {
                for row in l.row_iter() {
                    prop_assert!(row.sum().abs() < 1e-12);
                }
                prop_assert!(min_sym_eigenvalue(l) > -1e-10);
            }
            Ok(())
        },
    )
}

pub fn kleinman_values_decrease() -> Outcome {
    check(
        64,
        &(1usize..5, 1usize..3, mat(4, 4), mat(4, 2)),
        |(n, m, seed, bseed)| {
            let a = seed.view((0, 0), (n, n)).into_owned() * 2.0;
            let b =
                bseed.view((0, 0), (n, m)).into_owned() + Matrix::from_fn(n, m, |i, j| if i == j { 1.0 } else { 0.0 });
            let k0 = match stabilizing_gain(&a, &b) {
                Ok(k) => k,
                Err(_) => return Ok(()),
            };
            let q = Matrix::identity(n, n) * 10.0;
            let r = Matrix::identity(m, m);
            let iters = kleinman_iterates(&a, &b, &q, &r, &k0, 6).unwrap();
            for w in iters.windows(2) {
                let drop = &w[0].0 - &w[1].0;
                prop_assert!(
                    min_sym_eigenvalue(&drop) > -1e-7 * (1.0 + w[0].0.amax()),
                    "P not monotone"
                );
                prop_assert!(min_sym_eigenvalue(&w[1].0) > 0.0);
                prop_assert!(spectral_abscissa(&(&a - &b * &w[1].1)).unwrap() < 0.0);
            }
            Ok(())
        },
    )
}

pub fn cost_matches_lyapunov() -> Outcome {
    check(
        64,
        &(hurwitz(3, 0.5), mat(3, 1), mat(1, 3), mat(3, 1)),
        |(a, b, k, x0)| {
            let closed = &a - &b * &k;
            prop_assume!(spectral_abscissa(&closed).unwrap() < -0.3);
            let q = Matrix::identity(3, 3);
            let r = Matrix::identity(1, 1);
            let x0 = x0.column(0).into_owned() + Vector::from_element(3, 0.5);
            let exact = closed_loop_cost(&a, &b, &k, &q, &r, &x0).unwrap();
            let sys = LtiSystem::full_state(a.clone(), b.clone()).unwrap();
            let traj = simulate(&sys, |_, x| -(&k * x), &x0, 0.01, 60.0, SimOptions::default()).unwrap();
            let est = evaluate_cost(&traj, |x| x.clone(), &q, &r).value;
            prop_assert!((est - exact).abs() <= 0.01 * exact, "{est} vs {exact}");
            Ok(())
        },
    )
}

pub fn exploration_is_deterministic() -> Outcome {
    check(64, &(any::<u64>(), 0.0..100.0f64), |(seed, t)| {
        let spec = ExplorationSpec {
            noise: 0.2,
            ..ExplorationSpec::default()
        };
        let a = ExplorationSignal::generated(2, &spec, seed).unwrap();
        let b = ExplorationSignal::generated(2, &spec, seed).unwrap();
        prop_assert_eq!(a.eval(t), b.eval(t));
        prop_assert!(a.eval(t).amax() <= a.bound() + 1e-12);
        Ok(())
    })
}

pub fn runs_are_reproducible() -> Outcome {
    check(4, &(1u64..1000,), |(seed,)| {
        let mut cfg = super::example("sp_7_1.json");
        cfg.seed = seed;
        let par = run(
            &cfg,
            RunOptions {
                exec: Execution::Parallel,
            },
        );
        let again = run(
            &cfg,
            RunOptions {
                exec: Execution::Parallel,
            },
        );
        let seq = run(
            &cfg,
            RunOptions {
                exec: Execution::Sequential,
            },
        );
        match (par, again, seq) {
            (Ok(a), Ok(b), Ok(c)) => {
                prop_assert_eq!(&a.report.gain, &b.report.gain);
                prop_assert_eq!(&a.report.gain, &c.report.gain);
                prop_assert_eq!(&a.exploration.states, &c.exploration.states);
            }
            (Err(a), Err(b), Err(c)) => {
                prop_assert_eq!(a.to_string(), b.to_string());
                prop_assert_eq!(a.to_string(), c.to_string());
            }
            _ => prop_assert!(false, "outcome depends on execution"),
        }
        Ok(())
    })
}

/// Every property, by name.
pub const SUITE: &[Property] = &[
    ("vec_of_product", vec_of_product),
    ("kron_mixed_product", kron_mixed_product),
    ("devec_inverts_vec", devec_inverts_vec),
    ("lyapunov_residual_and_sign", lyapunov_residual_and_sign),
    ("least_squares_matches_direct_solve", least_squares_matches_direct_solve),
    (
        "overdetermined_least_squares_is_normal_equations",
        overdetermined_least_squares_is_normal_equations,
    ),
    ("cluster_transform_identities", cluster_transform_identities),
    ("laplacian_rows_sum_to_zero", laplacian_rows_sum_to_zero),
    ("kleinman_values_decrease", kleinman_values_decrease),
    ("cost_matches_lyapunov", cost_matches_lyapunov),
    ("exploration_is_deterministic", exploration_is_deterministic),
    ("runs_are_reproducible", runs_are_reproducible),
];

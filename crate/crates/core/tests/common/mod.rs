#![allow(dead_code)]

pub mod props;

use std::path::PathBuf;

use sp_adp::harness::ExperimentConfig;
use sp_adp::linalg::{Matrix, Vector};
use sp_adp::sim::{AdpDataset, ExplorationSignal};

pub fn examples_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../cli/examples")
}

pub fn example(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&examples_dir().join(name)).expect("bundled config loads")
}

pub fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

pub fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

/// Regression data computed without quadrature: the integrals ride along as extra
/// states of the ODE and are integrated by a fine RK4 together with `y`.
pub fn exact_dataset(
    a: &Matrix,
    b: &Matrix,
    sig: &ExplorationSignal,
    y0: &Vector,
    window: f64,
    windows: usize,
    h: f64,
) -> AdpDataset {
    let (r, mm) = (a.nrows(), b.ncols());
    let dim = r + r * r + r * mm;
    let rhs = |t: f64, z: &Vector| -> Vector {
        let y = z.rows(0, r).into_owned();
        let u = sig.eval(t);
        let mut d = Vector::zeros(dim);
        d.rows_mut(0, r).copy_from(&(a * &y + b * &u));
        d.rows_mut(r, r * r).copy_from(&y.kronecker(&y));
        d.rows_mut(r + r * r, r * mm).copy_from(&y.kronecker(&u));
        d
    };
    let per_window = (window / h).round() as usize;
    let mut z = Vector::zeros(dim);
    z.rows_mut(0, r).copy_from(y0);
    let mut t = 0.0;
    let mut delta = Matrix::zeros(windows, r * r);
    let mut iyy = Matrix::zeros(windows, r * r);
    let mut iyu = Matrix::zeros(windows, r * mm);
    for w in 0..windows {
        let y_start = z.rows(0, r).into_owned();
        z.rows_mut(r, r * r + r * mm).fill(0.0);
        for _ in 0..per_window {
            let k1 = rhs(t, &z);
            let k2 = rhs(t + h / 2.0, &(&z + &k1 * (h / 2.0)));
            let k3 = rhs(t + h / 2.0, &(&z + &k2 * (h / 2.0)));
            let k4 = rhs(t + h, &(&z + &k3 * h));
            z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            t += h;
        }
        let y_end = z.rows(0, r).into_owned();
        delta
            .row_mut(w)
            .copy_from(&(y_end.kronecker(&y_end) - y_start.kronecker(&y_start)).transpose());
        iyy.row_mut(w).copy_from(&z.rows(r, r * r).transpose());
        iyu.row_mut(w).copy_from(&z.rows(r + r * r, r * mm).transpose());
    }
    AdpDataset {
        delta_yy: delta,
        i_yy: iyy,
        i_yu0: iyu,
        window,
        sample_times: (0..windows).map(|i| i as f64 * window).collect(),
        r,
        m: mm,
    }
}

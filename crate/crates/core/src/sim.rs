//! Fixed-step simulation, exploration signals and ADP data assembly.

use std::f64::consts::TAU;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, kron_vec, Matrix, Vector};
use crate::par::{map_indexed, Execution};

pub const DEFAULT_BLOWUP: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "inconsistent state space: a {}x{}, b {}x{}, c {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        ensure_finite(&a, "a")?;
        ensure_finite(&b, "b")?;
        ensure_finite(&c, "c")?;
        Ok(Self { a, b, c })
    }

    /// Full-state output (`c = I`).
    pub fn full_state(a: Matrix, b: Matrix) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, Matrix::identity(n, n))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn derivative(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }
}

/// One classical Runge–Kutta step of `ẋ = f(t, x)`.
pub fn rk4_step(f: impl Fn(f64, &Vector) -> Vector, t: f64, x: &Vector, h: f64) -> Vector {
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Number of whole steps of size `dt` in `span`, rejecting non-multiples.
pub fn steps_in(span: f64, dt: f64, what: &str) -> Result<usize> {
    if !(dt > 0.0) || !span.is_finite() || span < 0.0 {
        return Err(Error::Alignment(format!("{what}: invalid span {span} or step {dt}")));
    }
    let ratio = span / dt;
    let k = ratio.round();
    if (ratio - k).abs() > 1e-6 {
        return Err(Error::Alignment(format!(
            "{what}: {span} s is not a multiple of the step {dt} s"
        )));
    }
    Ok(k as usize)
}

/// Sum of sinusoids on one input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidChannel {
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
}

impl SinusoidChannel {
    fn validate(&self) -> Result<()> {
        let k = self.amplitudes.len();
        if k == 0 || self.frequencies.len() != k || self.phases.len() != k {
            return Err(Error::Config(
                "exploration channel needs equal, non-empty amplitude/frequency/phase lists".into(),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.offset
            + self
                .amplitudes
                .iter()
                .zip(&self.frequencies)
                .zip(&self.phases)
                .map(|((a, f), p)| a * (f * t + p).sin())
                .sum::<f64>()
    }

    pub fn bound(&self) -> f64 {
        self.offset.abs() + self.amplitudes.iter().map(|a| a.abs()).sum::<f64>()
    }
}

/// Parameters for the seeded default exploration generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationSpec {
    pub terms: usize,
    pub freq_min: f64,
    pub freq_max: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// Half-width of optional additive uniform noise, held constant over `noise_hold` seconds.
    pub noise: f64,
    pub noise_hold: f64,
}

impl Default for ExplorationSpec {
    fn default() -> Self {
        Self {
            terms: 10,
            freq_min: 0.1,
            freq_max: 50.0,
            amplitude: 1.0,
            offset: 0.0,
            noise: 0.0,
            noise_hold: 0.01,
        }
    }
}

/// Open-loop exploration input u₀(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSignal {
    pub channels: Vec<SinusoidChannel>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_hold")]
    pub noise_hold: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_hold() -> f64 {
    0.01
}

impl ExplorationSignal {
    pub fn new(channels: Vec<SinusoidChannel>) -> Result<Self> {
        for c in &channels {
            c.validate()?;
        }
        Ok(Self {
            channels,
            noise: 0.0,
            noise_hold: default_hold(),
            seed: 0,
        })
    }

    /// Log-spaced frequencies shared by all channels, phases uniform on [0, 2π) from `seed`.
    pub fn generated(m: usize, spec: &ExplorationSpec, seed: u64) -> Result<Self> {
        if spec.terms == 0 || !(spec.freq_min > 0.0) || spec.freq_max < spec.freq_min {
            return Err(Error::Config(
                "exploration needs terms > 0 and 0 < freq_min <= freq_max".into(),
            ));
        }
        if spec.noise < 0.0 || !(spec.noise_hold > 0.0) {
            return Err(Error::Config(
                "exploration noise must be >= 0 with a positive hold".into(),
            ));
        }
        let freqs: Vec<f64> = if spec.terms == 1 {
            vec![spec.freq_min]
        } else {
            let (lo, hi) = (spec.freq_min.ln(), spec.freq_max.ln());
            (0..spec.terms)
                .map(|i| (lo + (hi - lo) * i as f64 / (spec.terms - 1) as f64).exp())
                .collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = (0..m)
            .map(|_| SinusoidChannel {
                amplitudes: vec![spec.amplitude; spec.terms],
                frequencies: freqs.clone(),
                phases: (0..spec.terms).map(|_| rng.random_range(0.0..TAU)).collect(),
                offset: spec.offset,
            })
            .collect();
        Ok(Self {
            channels,
            noise: spec.noise,
            noise_hold: spec.noise_hold,
            seed,
        })
    }

    pub fn m(&self) -> usize {
        self.channels.len()
    }

    pub fn eval(&self, t: f64) -> Vector {
        let mut u = Vector::from_iterator(self.channels.len(), self.channels.iter().map(|c| c.eval(t)));
        if self.noise > 0.0 {
            // random access into the keystream keeps noise a pure function of t
            let slot = (t / self.noise_hold).floor().max(0.0) as u128;
            for (ch, ui) in u.iter_mut().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
                rng.set_stream(ch as u64);
                rng.set_word_pos(slot * 2);
                *ui += rng.random_range(-self.noise..=self.noise);
            }
        }
        u
    }

    /// Bound on ‖u₀(t)‖∞ over all t.
    pub fn bound(&self) -> f64 {
        self.channels.iter().map(|c| c.bound() + self.noise).fold(0.0, f64::max)
    }

    /// Restrict to a subset of channels (cluster-wise exploration).
    pub fn select(&self, channels: &[usize]) -> Self {
        Self {
            channels: channels.iter().map(|&i| self.channels[i].clone()).collect(),
            ..self.clone()
        }
    }
}

/// States and inputs sampled on a uniform grid `tᵢ = i·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory is never empty")
    }

    /// Apply `f` to every state, e.g. the slow extractor.
    pub fn map_states(&self, f: impl Fn(&Vector) -> Vector) -> Vec<Vector> {
        self.states.iter().map(f).collect()
    }

    /// CSV with header `t,x1..xn,u1..um` and 17 significant digits.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, Vector::len);
        let m = self.inputs.first().map_or(0, Vector::len);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .chain((1..=m).map(|i| format!("u{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for ((t, x), u) in self.times.iter().zip(&self.states).zip(&self.inputs) {
            write_row(out, *t, x.iter().chain(u.iter()))?;
        }
        Ok(())
    }
}

pub(crate) fn write_row<'a>(
    out: &mut impl Write,
    t: f64,
    values: impl Iterator<Item = &'a f64>,
) -> std::io::Result<()> {
    write!(out, "{t:.16e}")?;
    for v in values {
        write!(out, ",{v:.16e}")?;
    }
    writeln!(out)
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub blowup: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { blowup: DEFAULT_BLOWUP }
    }
}

/// RK4 over `[0, t_end]` with step `dt`; the input is re-evaluated at every stage.
pub fn simulate(
    sys: &LtiSystem,
    policy: impl Fn(f64, &Vector) -> Vector,
    x0: &Vector,
    dt: f64,
    t_end: f64,
    opts: SimOptions,
) -> Result<Trajectory> {
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, system has n = {}",
            x0.len(),
            sys.n()
        )));
    }
    if !(dt > 0.0) || t_end < dt {
        return Err(Error::Config(format!(
            "need dt > 0 and t_end >= dt (dt = {dt}, t_end = {t_end})"
        )));
    }
    let steps = (t_end / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    let f = |t: f64, x: &Vector| {
        let u = policy(t, x);
        sys.derivative(x, &u)
    };
    for i in 0..=steps {
        let t = i as f64 * dt;
        let u = policy(t, &x);
        if u.len() != sys.m() {
            return Err(Error::Dimension(format!(
                "policy returned {} inputs, expected {}",
                u.len(),
                sys.m()
            )));
        }
        times.push(t);
        states.push(x.clone());
        inputs.push(u);
        if i == steps {
            break;
        }
        x = rk4_step(f, t, &x, dt);
        let norm = x.norm();
        if !norm.is_finite() || norm > opts.blowup {
            return Err(Error::BlowUp { time: t + dt, norm });
        }
    }
    Ok(Trajectory {
        dt,
        times,
        states,
        inputs,
    })
}

/// Regression data for one learning problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AdpDataset {
    pub delta_yy: Matrix,
    pub i_yy: Matrix,
    pub i_yu0: Matrix,
    pub window: f64,
    pub sample_times: Vec<f64>,
    pub r: usize,
    pub m: usize,
}

impl AdpDataset {
    pub fn windows(&self) -> usize {
        self.sample_times.len()
    }

    /// Keep the rows whose index is listed.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            delta_yy: self.delta_yy.select_rows(rows),
            i_yy: self.i_yy.select_rows(rows),
            i_yu0: self.i_yu0.select_rows(rows),
            sample_times: rows.iter().map(|&i| self.sample_times[i]).collect(),
            ..self.clone()
        }
    }
}

/// Uniform sample times `start + i·window`, i = 0..count.
pub fn uniform_sample_times(start: f64, window: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start + i as f64 * window).collect()
}

/// Composite Simpson weights over `steps` equal intervals; an odd count closes
/// with a 3/8 panel, and a single interval falls back to the trapezoid.
pub(crate) fn quadrature_weights(steps: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; steps + 1];
    if steps == 1 {
        w[0] = 0.5 * h;
        w[1] = 0.5 * h;
        return w;
    }
    let simpson = if steps.is_multiple_of(2) { steps } else { steps - 3 };
    for k in (0..simpson).step_by(2) {
        w[k] += h / 3.0;
        w[k + 1] += 4.0 * h / 3.0;
        w[k + 2] += h / 3.0;
    }
    if simpson < steps {
        let s = simpson;
        for (j, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
            w[s + j] += 3.0 * h / 8.0 * c;
        }
    }
    w
}

/// Build δ_yy, I_yy, I_yu₀ from a trajectory with the recorded inputs.
pub fn collect_adp_data(
    traj: &Trajectory,
    slow: impl Fn(&Vector) -> Vector + Sync,
    window: f64,
    sample_times: &[f64],
    exec: Execution,
) -> Result<AdpDataset> {
    collect_adp_data_with_inputs(traj, slow, |u: &Vector| u.clone(), window, sample_times, exec)
}

/// As [`collect_adp_data`], with an extractor applied to the recorded inputs.
pub fn collect_adp_data_with_inputs(
    traj: &Trajectory,
    slow: impl Fn(&Vector) -> Vector + Sync,
    input: impl Fn(&Vector) -> Vector + Sync,
    window: f64,
    sample_times: &[f64],
    exec: Execution,
) -> Result<AdpDataset> {
    if traj.is_empty() {
        return Err(Error::Alignment("empty trajectory".into()));
    }
    if sample_times.is_empty() {
        return Err(Error::Alignment("no sample times".into()));
    }
    let dt = traj.dt;
    let wsteps = steps_in(window, dt, "window")?;
    if wsteps == 0 {
        return Err(Error::Alignment("window shorter than one step".into()));
    }
    let last = traj.len() - 1;
    let starts = sample_times
        .iter()
        .map(|&t| {
            let i = steps_in(t, dt, "sample time")?;
            if i + wsteps > last {
                return Err(Error::Alignment(format!(
                    "window [{t}, {}] exceeds trajectory end {}",
                    t + window,
                    traj.t_end()
                )));
            }
            Ok(i)
        })
        .collect::<Result<Vec<_>>>()?;

    let ys = traj.map_states(&slow);
    let us: Vec<Vector> = traj.inputs.iter().map(&input).collect();
    let r = ys[0].len();
    let m = us[0].len();

    let rows = map_indexed(starts.len(), exec, |w| {
        let a = starts[w];
        let b = a + wsteps;
        let delta = kron_vec(&ys[b], &ys[b]) - kron_vec(&ys[a], &ys[a]);
        let mut iyy = Vector::zeros(r * r);
        let mut iyu = Vector::zeros(r * m);
        for (off, wgt) in quadrature_weights(wsteps, dt).into_iter().enumerate() {
            let i = a + off;
            iyy.axpy(wgt, &kron_vec(&ys[i], &ys[i]), 1.0);
            iyu.axpy(wgt, &kron_vec(&ys[i], &us[i]), 1.0);
        }
        (delta, iyy, iyu)
    });

    let l = rows.len();
    let mut delta_yy = Matrix::zeros(l, r * r);
    let mut i_yy = Matrix::zeros(l, r * r);
    let mut i_yu0 = Matrix::zeros(l, r * m);
    for (w, (d, iyy, iyu)) in rows.into_iter().enumerate() {
        delta_yy.row_mut(w).copy_from(&d.transpose());
        i_yy.row_mut(w).copy_from(&iyy.transpose());
        i_yu0.row_mut(w).copy_from(&iyu.transpose());
    }
    Ok(AdpDataset {
        delta_yy,
        i_yy,
        i_yu0,
        window,
        sample_times: sample_times.to_vec(),
        r,
        m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub value: f64,
    /// Integration horizon in seconds; the tail beyond it is not included.
    pub horizon: f64,
}

/// Trapezoidal ∫(yᵀQy + uᵀRu) over the trajectory, using its recorded inputs.
pub fn evaluate_cost(traj: &Trajectory, slow: impl Fn(&Vector) -> Vector, q: &Matrix, r_w: &Matrix) -> CostEstimate {
    let integrand = |i: usize| {
        let y = slow(&traj.states[i]);
        let u = &traj.inputs[i];
        y.dot(&(q * &y)) + u.dot(&(r_w * u))
    };
    let last = traj.len() - 1;
    let mut value = 0.0;
    for i in 0..last {
        value += 0.5 * traj.dt * (integrand(i) + integrand(i + 1));
    }
    CostEstimate {
        value,
        horizon: traj.t_end(),
    }
}

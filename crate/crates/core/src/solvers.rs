//! Truncated Euler-Maruyama recursion on a delay-aligned grid.
//!
//! The step is `delta = tau / M`, so the delayed argument of step `k` is
//! always grid value `k - M`; values at negative indices are samples of the
//! initial path. Besides the discrete iterates this module provides the
//! two continuous-time readings of them: the piecewise-constant step
//! process and the Itô interpolation evaluated on a finer Brownian lattice.

use crate::brownian::{delay_intervals, BrownianLattice};
use crate::error::{Error, Result};
use crate::linalg::{add_mat_vec, norm};
use crate::model::SddeModel;
use crate::truncation::{Truncation, TruncationPolicy};

/// Classical EM paths are declared divergent beyond this norm.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    tau: f64,
    steps_per_delay: usize,
    delta: f64,
    horizon: f64,
    total_steps: usize,
}

impl GridSpec {
    pub fn new(tau: f64, steps_per_delay: usize, horizon: f64) -> Result<Self> {
        if steps_per_delay == 0 {
            return Err(Error::out_of_range("steps_per_delay", 0.0, "[1, inf)"));
        }
        let intervals = delay_intervals(tau, horizon)?;
        Ok(GridSpec {
            tau,
            steps_per_delay,
            delta: tau / steps_per_delay as f64,
            horizon,
            total_steps: intervals * steps_per_delay,
        })
    }

    pub fn for_model(model: &SddeModel, steps_per_delay: usize, horizon: f64) -> Result<Self> {
        GridSpec::new(model.delay(), steps_per_delay, horizon)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `M`, the number of steps per delay interval.
    pub fn steps_per_delay(&self) -> usize {
        self.steps_per_delay
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `K`, the number of steps on `[0, horizon]`.
    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// `t_k = k delta` for `k` in `-M..=K`.
    pub fn time(&self, k: i64) -> f64 {
        k as f64 * self.delta
    }
}

/// First step at which a classical EM path left the finite region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    /// Index `k` of the first offending value `X(t_k)`.
    pub step: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: GridSpec,
    state_dim: usize,
    /// `X(t_k)` for `k = -M..=K`, row-major.
    values: Vec<f64>,
    truncation_events: usize,
    divergence: Option<Divergence>,
}

impl Trajectory {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Number of steps at which the projection moved `X(t_k)` or `X(t_{k-M})`.
    pub fn truncation_events(&self) -> usize {
        self.truncation_events
    }

    pub fn divergence(&self) -> Option<Divergence> {
        self.divergence
    }

    /// `X(t_k)`; panics outside `-M..=K`.
    pub fn value(&self, k: i64) -> &[f64] {
        let row = (k + self.grid.steps_per_delay as i64) as usize;
        &self.values[row * self.state_dim..(row + 1) * self.state_dim]
    }

    pub fn get(&self, k: i64) -> Result<&[f64]> {
        let lo = -(self.grid.steps_per_delay as i64);
        let hi = self.grid.total_steps as i64;
        if k < lo || k > hi {
            return Err(Error::IndexOutOfRange { index: k, lo, hi });
        }
        Ok(self.value(k))
    }

    pub fn terminal(&self) -> &[f64] {
        self.value(self.grid.total_steps as i64)
    }

    /// All grid values, row-major, starting at `k = -M`.
    pub fn grid_values(&self) -> &[f64] {
        &self.values
    }

    /// Largest `|X(t_k)|` over `k = -M..=K`.
    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks(self.state_dim)
            .map(norm)
            .fold(0.0, f64::max)
    }

    /// CSV with header `k,t_k,X_1..X_n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,t_k");
        for i in 1..=self.state_dim {
            out.push_str(&format!(",X_{i}"));
        }
        out.push('\n');
        let m = self.grid.steps_per_delay as i64;
        for k in -m..=self.grid.total_steps as i64 {
            out.push_str(&format!("{k},{}", self.grid.time(k)));
            for v in self.value(k) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Scratch space for one step.
struct StepBuffers {
    px: Vec<f64>,
    py: Vec<f64>,
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl StepBuffers {
    fn new(model: &SddeModel) -> Self {
        let n = model.state_dim();
        StepBuffers {
            px: vec![0.0; n],
            py: vec![0.0; n],
            drift: vec![0.0; n],
            diffusion: vec![0.0; n * model.noise_dim()],
        }
    }

    /// Truncated coefficients at `(x, y)`; returns whether the projection acted.
    fn eval(&mut self, model: &SddeModel, trunc: &Truncation, x: &[f64], y: &[f64]) -> bool {
        trunc.eval_into(
            model,
            x,
            y,
            &mut self.px,
            &mut self.py,
            &mut self.drift,
            &mut self.diffusion,
        )
    }

    /// `out = x + drift * dt + diffusion * db` with the last evaluated coefficients.
    fn advance(&self, x: &[f64], dt: f64, db: &[f64], out: &mut [f64]) {
        for ((o, xi), fi) in out.iter_mut().zip(x).zip(&self.drift) {
            *o = xi + fi * dt;
        }
        add_mat_vec(&self.diffusion, db.len(), db, out);
    }
}

/// One truncated EM step
/// `x_k + f_delta(x_k, x_delayed) delta + g_delta(x_k, x_delayed) dB`.
pub fn tem_step(
    model: &SddeModel,
    policy: &TruncationPolicy,
    delta: f64,
    x_k: &[f64],
    x_delayed: &[f64],
    db: &[f64],
) -> Result<Vec<f64>> {
    let trunc = policy.at_step(delta)?;
    step_with(model, &trunc, x_k, x_delayed, db)
}

/// One EM step with a precomputed truncation (use [`Truncation::inactive`]
/// for the classical scheme).
pub fn step_with(
    model: &SddeModel,
    trunc: &Truncation,
    x_k: &[f64],
    x_delayed: &[f64],
    db: &[f64],
) -> Result<Vec<f64>> {
    let n = model.state_dim();
    check_len("state", n, x_k.len())?;
    check_len("delayed state", n, x_delayed.len())?;
    check_len("Brownian increment", model.noise_dim(), db.len())?;
    let mut bufs = StepBuffers::new(model);
    bufs.eval(model, trunc, x_k, x_delayed);
    let mut out = vec![0.0; n];
    bufs.advance(x_k, trunc.delta, db, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "EM step",
            x: x_k.to_vec(),
            y: x_delayed.to_vec(),
        });
    }
    Ok(out)
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            actual,
        })
    }
}

/// Runs the truncated EM scheme on `grid` driven by `coarse_increments`
/// (row-major `K x m`, one increment per step).
pub fn simulate(
    model: &SddeModel,
    policy: &TruncationPolicy,
    grid: &GridSpec,
    coarse_increments: &[f64],
) -> Result<Trajectory> {
    let trunc = policy.at_step(grid.delta)?;
    run_scheme(model, &trunc, grid, coarse_increments, false)
}

/// The same recursion with the raw coefficients. A path whose norm exceeds
/// [`DIVERGENCE_THRESHOLD`] or becomes non-finite is frozen at that value and
/// the event is reported through [`Trajectory::divergence`].
pub fn simulate_classical_em(
    model: &SddeModel,
    grid: &GridSpec,
    coarse_increments: &[f64],
) -> Result<Trajectory> {
    run_scheme(
        model,
        &Truncation::inactive(grid.delta),
        grid,
        coarse_increments,
        true,
    )
}

/// Simulates on `grid` after coarsening the lattice's increments to it.
pub fn simulate_on_lattice(
    model: &SddeModel,
    policy: &TruncationPolicy,
    grid: &GridSpec,
    lattice: &BrownianLattice,
) -> Result<Trajectory> {
    let factor = lattice_factor(grid, lattice)?;
    simulate(model, policy, grid, &lattice.coarsen(factor)?)
}

fn run_scheme(
    model: &SddeModel,
    trunc: &Truncation,
    grid: &GridSpec,
    increments: &[f64],
    classical: bool,
) -> Result<Trajectory> {
    if (grid.tau - model.delay()).abs() > 1e-12 * model.delay() {
        return Err(Error::InvalidPlan(format!(
            "grid delay {} differs from model delay {}",
            grid.tau,
            model.delay()
        )));
    }
    let n = model.state_dim();
    let m = model.noise_dim();
    let big_m = grid.steps_per_delay;
    let k_total = grid.total_steps;
    check_len("coarse increments", k_total * m, increments.len())?;

    let mut values = vec![0.0; (k_total + big_m + 1) * n];
    for row in 0..=big_m {
        let t = grid.time(row as i64 - big_m as i64);
        model.initial_into(t, &mut values[row * n..(row + 1) * n]);
    }

    let mut bufs = StepBuffers::new(model);
    let mut truncation_events = 0;
    let mut divergence = None;
    for k in 0..k_total {
        // Row of X(t_k) is k + M; X(t_{k-M}) sits at row k.
        let (head, tail) = values.split_at_mut((k + big_m + 1) * n);
        let x = &head[(k + big_m) * n..];
        let y = &head[k * n..(k + 1) * n];
        let next = &mut tail[..n];
        if divergence.is_some() {
            next.copy_from_slice(x);
            continue;
        }
        if bufs.eval(model, trunc, x, y) {
            truncation_events += 1;
        }
        bufs.advance(x, grid.delta, &increments[k * m..(k + 1) * m], next);

        let finite = next.iter().all(|v| v.is_finite());
        if classical {
            let nrm = norm(next);
            if !finite || nrm > DIVERGENCE_THRESHOLD {
                divergence = Some(Divergence {
                    step: k + 1,
                    norm: nrm,
                });
            }
        } else if !finite {
            return Err(Error::NonFinite {
                what: "truncated EM step",
                x: x.to_vec(),
                y: y.to_vec(),
            });
        }
    }

    Ok(Trajectory {
        grid: *grid,
        state_dim: n,
        values,
        truncation_events,
        divergence,
    })
}

/// Step process value `X(t_k)` for the `k` with `t_k <= t < t_{k+1}`; the
/// right endpoint `t = T` maps to `X(T)`.
pub fn step_process_value(traj: &Trajectory, t: f64) -> Result<Vec<f64>> {
    let grid = traj.grid;
    let lo = -(grid.steps_per_delay as i64);
    let hi = grid.total_steps as i64;
    let (t_lo, t_hi) = (grid.time(lo), grid.time(hi));
    if !(t >= t_lo && t <= t_hi) {
        return Err(Error::TimeOutOfRange { t, lo: t_lo, hi: t_hi });
    }
    let mut k = ((t / grid.delta).floor() as i64).clamp(lo, hi);
    while k < hi && grid.time(k + 1) <= t {
        k += 1;
    }
    while k > lo && grid.time(k) > t {
        k -= 1;
    }
    Ok(traj.value(k).to_vec())
}

/// The Itô interpolation sampled on a finer lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSamples {
    state_dim: usize,
    /// Fine steps per coarse step.
    factor: usize,
    fine_delta: f64,
    /// `x(u_j)` for `u_j = j fine_delta`, `j = 0..=K factor`, row-major.
    values: Vec<f64>,
}

impl ContinuousSamples {
    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn fine_delta(&self) -> f64 {
        self.fine_delta
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.fine_delta
    }

    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j * self.state_dim..(j + 1) * self.state_dim]
    }

    /// Index of the coarse step whose interval `[t_k, t_{k+1})` holds `u_j`
    /// (the final sample belongs to `K`).
    pub fn coarse_index(&self, j: usize) -> usize {
        j / self.factor
    }
}

/// Evaluates
/// `x(u) = X(t_k) + f_delta(X(t_k), X(t_{k-M})) (u - t_k) + g_delta(..) (B(u) - B(t_k))`
/// at every fine time `u` of `lattice`.
///
/// `traj` must have been simulated on increments coarsened from `lattice`.
pub fn continuous_process_values(
    model: &SddeModel,
    policy: &TruncationPolicy,
    traj: &Trajectory,
    lattice: &BrownianLattice,
) -> Result<ContinuousSamples> {
    let trunc = policy.at_step(traj.grid.delta)?;
    continuous_with(model, &trunc, traj, lattice)
}

pub(crate) fn continuous_with(
    model: &SddeModel,
    trunc: &Truncation,
    traj: &Trajectory,
    lattice: &BrownianLattice,
) -> Result<ContinuousSamples> {
    let grid = traj.grid;
    let factor = lattice_factor(&grid, lattice)?;
    let n = model.state_dim();
    let m = model.noise_dim();
    check_len("trajectory state", n, traj.state_dim)?;
    check_len("lattice noise", m, lattice.noise_dim())?;

    let big_k = grid.total_steps;
    let fine_delta = lattice.fine_delta();
    let mut values = vec![0.0; (big_k * factor + 1) * n];
    let mut bufs = StepBuffers::new(model);
    let mut db = vec![0.0; m];
    for k in 0..big_k {
        let x = traj.value(k as i64);
        let y = traj.value(k as i64 - grid.steps_per_delay as i64);
        bufs.eval(model, trunc, x, y);
        db.fill(0.0);
        for i in 0..factor {
            let j = k * factor + i;
            let out = &mut values[j * n..(j + 1) * n];
            if i == 0 {
                out.copy_from_slice(x);
            } else {
                bufs.advance(x, i as f64 * fine_delta, &db, out);
            }
            for (acc, v) in db.iter_mut().zip(lattice.increment(j)) {
                *acc += v;
            }
        }
    }
    let last = big_k * factor;
    values[last * n..].copy_from_slice(traj.terminal());

    Ok(ContinuousSamples {
        state_dim: n,
        factor,
        fine_delta,
        values,
    })
}

/// Ratio of lattice to grid resolution, checking the two cover the same horizon.
pub fn lattice_factor(grid: &GridSpec, lattice: &BrownianLattice) -> Result<usize> {
    let fine = lattice.fine_steps_per_delay();
    if !fine.is_multiple_of(grid.steps_per_delay) {
        return Err(Error::NotDivisible {
            factor: grid.steps_per_delay,
            len: fine,
        });
    }
    let factor = fine / grid.steps_per_delay;
    if lattice.n_fine_steps() != grid.total_steps * factor {
        return Err(Error::LengthMismatch {
            what: "lattice steps for this horizon",
            expected: grid.total_steps * factor,
            actual: lattice.n_fine_steps(),
        });
    }
    Ok(factor)
}

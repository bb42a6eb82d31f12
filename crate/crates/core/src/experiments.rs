//! Monte Carlo experiments on the truncated EM scheme.
//!
//! Every path is an independent work unit identified by its index: its
//! Brownian lattice is regenerated from `(master_seed, path_index)` and all
//! simulations for that path run back to back. Paths are processed in
//! fixed-size chunks; per-chunk partial sums are merged in chunk order, so
//! results are bitwise identical for any thread count.
//!
//! The exact solution is not available for the nonlinear models, so strong
//! errors are measured against a fine-grid run of the same scheme on the
//! same Brownian path.

use rayon::prelude::*;

use crate::brownian::BrownianLattice;
use crate::error::{Error, Result};
use crate::linalg::{diff_norm_sq, norm_sq};
use crate::model::SddeModel;
use crate::solvers::{
    continuous_with, lattice_factor, simulate, simulate_classical_em, GridSpec, Trajectory,
};
use crate::truncation::TruncationPolicy;

/// Paths per reduction chunk. Part of the numerical contract: changing it
/// changes the floating-point summation order of every estimate.
pub const PATH_CHUNK: usize = 64;

/// 97.5% standard normal quantile.
const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Truncated,
    Classical,
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub model: SddeModel,
    pub policy: TruncationPolicy,
    pub horizon: f64,
    /// Steps per delay for each tested grid.
    pub m_list: Vec<usize>,
    /// Reference resolution; every entry of `m_list` must divide it.
    pub m_ref: usize,
    pub q_list: Vec<f64>,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Scheme for the tested grids; the reference is always truncated EM.
    pub scheme: Scheme,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let plan_err = |msg: String| Err(Error::InvalidPlan(msg));
        if self.m_list.is_empty() {
            return plan_err("m_list is empty".into());
        }
        if self.q_list.is_empty() {
            return plan_err("q_list is empty".into());
        }
        if let Some(q) = self.q_list.iter().find(|q| !(**q >= 1.0 && q.is_finite())) {
            return plan_err(format!("moment order q = {q} must be >= 1"));
        }
        if self.n_paths < 2 {
            return plan_err(format!("n_paths = {} must be >= 2", self.n_paths));
        }
        if self.m_ref == 0 {
            return plan_err("m_ref must be >= 1".into());
        }
        for &m in &self.m_list {
            if m == 0 || !self.m_ref.is_multiple_of(m) {
                return plan_err(format!(
                    "m_ref = {} is not a multiple of M = {m}",
                    self.m_ref
                ));
            }
        }
        for &m in self.m_list.iter().chain(std::iter::once(&self.m_ref)) {
            let grid = GridSpec::for_model(&self.model, m, self.horizon)?;
            if self.scheme == Scheme::Truncated || m == self.m_ref {
                self.policy.check_step(grid.delta())?;
            }
        }
        Ok(())
    }

    /// Grid sizes in descending step-size order, duplicates removed.
    fn sorted_m(&self) -> Vec<usize> {
        let mut m = self.m_list.clone();
        m.sort_unstable();
        m.dedup();
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub m: usize,
    pub delta: f64,
    pub q: f64,
    /// Sample mean of `|X_delta(T) - X_ref(T)|^q`.
    pub err_q: f64,
    pub std_err: f64,
    pub n_paths: usize,
    /// Classical-scheme paths that diverged (always 0 for truncated EM).
    pub divergent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    /// Sorted by descending `delta`, then ascending `q`.
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    pub const CSV_HEADER: &'static str = "M,delta,q,err_q,std_err,n_paths";

    pub fn rows_for(&self, q: f64) -> impl Iterator<Item = &ErrorRow> {
        self.rows.iter().filter(move |r| r.q == q)
    }

    /// CSV body followed by one `#` comment line per rate report.
    pub fn to_csv(&self, reports: &[RateReport]) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.m, r.delta, r.q, r.err_q, r.std_err, r.n_paths
            ));
        }
        for rep in reports {
            out.push_str(&format!("# {}\n", rep.summary()));
        }
        for r in self.rows.iter().filter(|r| r.divergent > 0) {
            out.push_str(&format!("# divergent M={} q={} paths={}\n", r.m, r.q, r.divergent));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateFit {
    Slope {
        slope: f64,
        intercept: f64,
        r_squared: f64,
        /// 95% half-width of the slope from the per-row standard errors.
        ci_halfwidth: f64,
    },
    /// Every error was exactly zero.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReport {
    pub q: f64,
    pub fit: RateFit,
}

impl RateReport {
    pub fn slope(&self) -> Option<f64> {
        match self.fit {
            RateFit::Slope { slope, .. } => Some(slope),
            RateFit::Exact => None,
        }
    }

    pub fn r_squared(&self) -> Option<f64> {
        match self.fit {
            RateFit::Slope { r_squared, .. } => Some(r_squared),
            RateFit::Exact => None,
        }
    }

    /// `q=2 quantity=E|e|^q slope=... ci=... r2=... intercept=...`.
    pub fn summary(&self) -> String {
        match self.fit {
            RateFit::Slope {
                slope,
                intercept,
                r_squared,
                ci_halfwidth,
            } => format!(
                "q={} quantity=E|e|^q slope={slope} ci={ci_halfwidth} r2={r_squared} intercept={intercept}",
                self.q
            ),
            RateFit::Exact => format!("q={} quantity=E|e|^q exact", self.q),
        }
    }
}

/// Per-cell running sums for one chunk of paths.
#[derive(Debug, Clone)]
struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: Vec<usize>,
}

impl Moments {
    fn new(cells: usize) -> Self {
        Moments {
            sum: vec![0.0; cells],
            sum_sq: vec![0.0; cells],
            count: vec![0; cells],
        }
    }

    #[inline]
    fn push(&mut self, cell: usize, v: f64) {
        self.sum[cell] += v;
        self.sum_sq[cell] += v * v;
        self.count[cell] += 1;
    }

    fn merge(mut self, other: Moments) -> Moments {
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
            self.count[i] += other.count[i];
        }
        self
    }

    /// Sample mean and standard error of the mean.
    fn mean_se(&self, cell: usize) -> (f64, f64) {
        let n = self.count[cell] as f64;
        let mean = self.sum[cell] / n;
        let var = ((self.sum_sq[cell] - self.sum[cell] * mean) / (n - 1.0)).max(0.0);
        (mean, (var / n).sqrt())
    }
}

/// Runs `per_path` over all paths in fixed chunks and merges chunk results
/// in index order.
fn reduce_paths<A, I, P, M>(n_paths: usize, init: I, per_path: P, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    P: Fn(u64, &mut A) -> Result<()> + Sync,
    M: Fn(A, A) -> A,
{
    let chunks = n_paths.div_ceil(PATH_CHUNK);
    let partials = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let end = ((c + 1) * PATH_CHUNK).min(n_paths);
            for path in c * PATH_CHUNK..end {
                per_path(path as u64, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<A>>>()?;
    Ok(partials.into_iter().fold(init(), merge))
}

#[inline]
fn error_power(d2: f64, q: f64) -> f64 {
    if q == 2.0 {
        d2
    } else {
        d2.sqrt().powf(q)
    }
}

/// Monte Carlo estimate of `E|X_delta(T) - X_ref(T)|^q` for every grid in
/// the plan, all grids of one path sharing the same Brownian lattice.
pub fn estimate_strong_errors(plan: &ExperimentPlan) -> Result<ErrorTable> {
    plan.validate()?;
    let model = &plan.model;
    let ms = plan.sorted_m();
    let nq = plan.q_list.len();
    let ref_grid = GridSpec::for_model(model, plan.m_ref, plan.horizon)?;
    let grids = ms
        .iter()
        .map(|&m| GridSpec::for_model(model, m, plan.horizon))
        .collect::<Result<Vec<_>>>()?;

    // Cells: (grid, q) error moments, then one divergence counter per grid.
    let (moments, divergent) = reduce_paths(
        plan.n_paths,
        || (Moments::new(ms.len() * nq), vec![0usize; ms.len()]),
        |path, (acc, div)| {
            let lattice = BrownianLattice::generate(
                model.delay(),
                model.noise_dim(),
                plan.horizon,
                plan.m_ref,
                plan.master_seed,
                path,
            )?;
            let reference = simulate(model, &plan.policy, &ref_grid, lattice.increments())?;
            for (i, grid) in grids.iter().enumerate() {
                let incs = lattice.coarsen(plan.m_ref / grid.steps_per_delay())?;
                let traj = match plan.scheme {
                    Scheme::Truncated => simulate(model, &plan.policy, grid, &incs)?,
                    Scheme::Classical => simulate_classical_em(model, grid, &incs)?,
                };
                if traj.divergence().is_some() {
                    div[i] += 1;
                }
                let d2 = diff_norm_sq(traj.terminal(), reference.terminal());
                for (j, &q) in plan.q_list.iter().enumerate() {
                    acc.push(i * nq + j, error_power(d2, q));
                }
            }
            Ok(())
        },
        |(a, da), (b, db)| (a.merge(b), da.iter().zip(&db).map(|(x, y)| x + y).collect()),
    )?;

    let mut rows = Vec::with_capacity(ms.len() * nq);
    for (i, grid) in grids.iter().enumerate() {
        let mut qs: Vec<(usize, f64)> = plan.q_list.iter().copied().enumerate().collect();
        qs.sort_by(|a, b| a.1.total_cmp(&b.1));
        for (j, q) in qs {
            let (err_q, std_err) = moments.mean_se(i * nq + j);
            rows.push(ErrorRow {
                m: grid.steps_per_delay(),
                delta: grid.delta(),
                q,
                err_q,
                std_err,
                n_paths: plan.n_paths,
                divergent: divergent[i],
            });
        }
    }
    Ok(ErrorTable { rows })
}

/// Least-squares slope of `log(err_q)` against `log(delta)` for order `q`.
pub fn fit_rate(table: &ErrorTable, q: f64) -> Result<RateReport> {
    let rows: Vec<&ErrorRow> = table.rows_for(q).collect();
    let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let values: Vec<f64> = rows.iter().map(|r| r.err_q).collect();
    let ses: Vec<f64> = rows.iter().map(|r| r.std_err).collect();
    Ok(RateReport {
        q,
        fit: fit_log_log(&deltas, &values, &ses)?,
    })
}

/// Unweighted log-log fit of `values` against `deltas`; the confidence
/// half-width propagates each `std_err / value` through the slope weights.
///
/// Rows with a zero value are dropped; if all are zero the fit is
/// [`RateFit::Exact`].
pub fn fit_log_log(deltas: &[f64], values: &[f64], std_errs: &[f64]) -> Result<RateFit> {
    if !values.is_empty() && values.iter().all(|v| *v == 0.0) {
        return Ok(RateFit::Exact);
    }
    let pts: Vec<(f64, f64, f64)> = deltas
        .iter()
        .zip(values)
        .zip(std_errs)
        .filter(|((_, v), _)| **v > 0.0)
        .map(|((d, v), s)| (d.ln(), v.ln(), s / v))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientRows(pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidPlan("rate fit needs distinct step sizes".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let var_slope: f64 = pts
        .iter()
        .map(|p| ((p.0 - mx) / sxx).powi(2) * p.2 * p.2)
        .sum();
    Ok(RateFit::Slope {
        slope,
        intercept,
        r_squared,
        ci_halfwidth: Z_975 * var_slope.sqrt(),
    })
}

/// Largest Monte Carlo mean of `|X(t_k)|^p` over the grid times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupMoment {
    pub value: f64,
    pub std_err: f64,
    pub argmax_time: f64,
    pub argmax_index: usize,
}

/// Estimates `max_k E|X(t_k)|^p` over `t_k in [0, T]`.
///
/// Each path draws its own lattice at the grid resolution.
pub fn estimate_sup_moment(
    model: &SddeModel,
    policy: &TruncationPolicy,
    grid: &GridSpec,
    p: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<SupMoment> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::out_of_range("p", p, "[1, inf)"));
    }
    if n_paths < 2 {
        return Err(Error::InvalidPlan(format!("n_paths = {n_paths} must be >= 2")));
    }
    policy.check_step(grid.delta())?;
    let k_total = grid.total_steps();
    let moments = reduce_paths(
        n_paths,
        || Moments::new(k_total + 1),
        |path, acc| {
            let lattice = BrownianLattice::generate(
                model.delay(),
                model.noise_dim(),
                grid.horizon(),
                grid.steps_per_delay(),
                master_seed,
                path,
            )?;
            let traj = simulate(model, policy, grid, lattice.increments())?;
            for k in 0..=k_total {
                acc.push(k, error_power(norm_sq(traj.value(k as i64)), p));
            }
            Ok(())
        },
        Moments::merge,
    )?;

    let mut best = SupMoment {
        value: f64::NEG_INFINITY,
        std_err: 0.0,
        argmax_time: 0.0,
        argmax_index: 0,
    };
    for k in 0..=k_total {
        let (mean, se) = moments.mean_se(k);
        if mean > best.value {
            best = SupMoment {
                value: mean,
                std_err: se,
                argmax_time: grid.time(k as i64),
                argmax_index: k,
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRow {
    pub t: f64,
    pub gap_p: f64,
    pub std_err: f64,
}

/// `E|x(t) - xbar(t)|^p` at every lattice time of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapTable {
    pub m: usize,
    pub delta: f64,
    pub p: f64,
    pub rows: Vec<GapRow>,
}

impl GapTable {
    pub const CSV_HEADER: &'static str = "t,gap_p,std_err";

    /// Row with the largest gap moment; first wins ties.
    pub fn max_row(&self) -> GapRow {
        let mut best = self.rows[0];
        for r in &self.rows[1..] {
            if r.gap_p > best.gap_p {
                best = *r;
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.t, r.gap_p, r.std_err));
        }
        out
    }
}

/// Moments of the distance between the Itô interpolation and the step
/// process, sampled on a lattice with `lattice_resolution` steps per delay.
pub fn gap_study(
    model: &SddeModel,
    policy: &TruncationPolicy,
    grid: &GridSpec,
    lattice_resolution: usize,
    p: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<GapTable> {
    if !(p >= 2.0 && p.is_finite()) {
        return Err(Error::out_of_range("p", p, "[2, inf)"));
    }
    if n_paths < 2 {
        return Err(Error::InvalidPlan(format!("n_paths = {n_paths} must be >= 2")));
    }
    if lattice_resolution == 0 || !lattice_resolution.is_multiple_of(grid.steps_per_delay()) {
        return Err(Error::NotDivisible {
            factor: grid.steps_per_delay(),
            len: lattice_resolution,
        });
    }
    let trunc = policy.at_step(grid.delta())?;
    let factor = lattice_resolution / grid.steps_per_delay();
    let n_fine = grid.total_steps() * factor + 1;
    let fine_delta = model.delay() / lattice_resolution as f64;

    let moments = reduce_paths(
        n_paths,
        || Moments::new(n_fine),
        |path, acc| {
            let lattice = BrownianLattice::generate(
                model.delay(),
                model.noise_dim(),
                grid.horizon(),
                lattice_resolution,
                master_seed,
                path,
            )?;
            lattice_factor(grid, &lattice)?;
            let traj: Trajectory = simulate(model, policy, grid, &lattice.coarsen(factor)?)?;
            let cont = continuous_with(model, &trunc, &traj, &lattice)?;
            for j in 0..n_fine {
                let k = cont.coarse_index(j) as i64;
                let d2 = diff_norm_sq(cont.value(j), traj.value(k));
                acc.push(j, error_power(d2, p));
            }
            Ok(())
        },
        Moments::merge,
    )?;

    let rows = (0..n_fine)
        .map(|j| {
            let (gap_p, std_err) = moments.mean_se(j);
            GapRow {
                t: j as f64 * fine_delta,
                gap_p,
                std_err,
            }
        })
        .collect();
    Ok(GapTable {
        m: grid.steps_per_delay(),
        delta: grid.delta(),
        p,
        rows,
    })
}

/// How often simulated paths leave the positive orthant on `[0, T]`.
/// Diagnostic only: positivity is a property of the exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityReport {
    pub n_paths: usize,
    /// Paths with at least one grid value having a component `<= 0`.
    pub paths_violating: usize,
    /// Fraction of all grid values `t_1..t_K` with a component `<= 0`.
    pub step_fraction: f64,
}

pub fn positivity_diagnostic(
    model: &SddeModel,
    policy: &TruncationPolicy,
    grid: &GridSpec,
    n_paths: usize,
    master_seed: u64,
) -> Result<PositivityReport> {
    if n_paths == 0 {
        return Err(Error::InvalidPlan("n_paths must be >= 1".into()));
    }
    let k_total = grid.total_steps();
    let (paths, steps) = reduce_paths(
        n_paths,
        || (0usize, 0usize),
        |path, (paths, steps)| {
            let lattice = BrownianLattice::generate(
                model.delay(),
                model.noise_dim(),
                grid.horizon(),
                grid.steps_per_delay(),
                master_seed,
                path,
            )?;
            let traj = simulate(model, policy, grid, lattice.increments())?;
            let bad = (1..=k_total as i64)
                .filter(|&k| traj.value(k).iter().any(|v| *v <= 0.0))
                .count();
            *steps += bad;
            *paths += usize::from(bad > 0);
            Ok(())
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )?;
    Ok(PositivityReport {
        n_paths,
        paths_violating: paths,
        step_fraction: steps as f64 / (n_paths * k_total) as f64,
    })
}

/// Kendall's tau-b between `values` and their index; 0 when either side
/// is constant.
pub fn kendall_tau(values: &[f64]) -> f64 {
    let n = values.len();
    let (mut concordant, mut discordant, mut ties) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            match values[j].partial_cmp(&values[i]) {
                Some(std::cmp::Ordering::Greater) => concordant += 1,
                Some(std::cmp::Ordering::Less) => discordant += 1,
                _ => ties += 1,
            }
        }
    }
    let pairs = (n * n.saturating_sub(1) / 2) as f64;
    let denom = (pairs * (pairs - ties as f64)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (concordant - discordant) as f64 / denom
    }
}

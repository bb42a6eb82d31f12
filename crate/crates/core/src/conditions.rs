//! Sampled falsification of the structural assumptions on `f`, `g` and `xi`.
//!
//! Every check evaluates a margin `rhs - lhs` on a deterministic point set
//! and reports the most negative one. A pass only means no counterexample
//! was found on the box.
//!
//! Point sets are built on the unit cube and then scaled by the box radius,
//! so the samples for radius `b` are exactly the samples for radius `b'`
//! scaled by `b / b'`. The origin, the signed axis points and (in low
//! dimension) the corners are always included ahead of the random draws.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{diff_norm_sq, dot, norm, norm_sq};
use crate::model::SddeModel;

/// Relative slack granted to a margin before it counts as a violation.
pub const PASS_TOLERANCE: f64 = 1e-9;

/// Corners are enumerated only up to this many sampled coordinates.
const MAX_CORNER_DIM: usize = 12;

/// Point at which a check attained its worst margin. Two-point checks
/// leave `x_bar`/`y_bar` empty; the initial-path check stores the time
/// pair `(u, v)` as `x = [u]`, `y = [v]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Witness {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub y_bar: Vec<f64>,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| {
            v.iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        write!(f, "x=[{}] y=[{}]", join(&self.x), join(&self.y))?;
        if !self.x_bar.is_empty() {
            write!(f, " x_bar=[{}] y_bar=[{}]", join(&self.x_bar), join(&self.y_bar))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub passed: bool,
    pub worst_margin: f64,
    /// Right-hand side of the inequality at the witness.
    pub bound_at_witness: f64,
    pub witness: Witness,
    pub n_samples: usize,
    pub box_radius: f64,
}

impl CheckReport {
    /// CSV header matching [`CheckReport::csv_row`].
    pub const CSV_HEADER: &'static str = "assumption,passed,worst_margin,n_samples,box_radius,witness";

    pub fn csv_row(&self, assumption: &str) -> String {
        format!(
            "{assumption},{},{},{},{},{}",
            self.passed, self.worst_margin, self.n_samples, self.box_radius, self.witness
        )
    }
}

/// Where and how densely a check samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub box_radius: f64,
    /// Random points drawn in addition to the deterministic ones.
    pub n_samples: usize,
    pub seed: u64,
}

impl Sampling {
    pub fn new(box_radius: f64, n_samples: usize, seed: u64) -> Result<Self> {
        if !(box_radius > 0.0 && box_radius.is_finite()) {
            return Err(Error::out_of_range("box_radius", box_radius, "(0, inf)"));
        }
        if n_samples == 0 {
            return Err(Error::out_of_range("n_samples", 0.0, "[1, inf)"));
        }
        Ok(Sampling {
            box_radius,
            n_samples,
            seed,
        })
    }
}

/// `x^T f(x,y) + 1/2 |g(x,y)|^2 <= K1 (1 + |x|^2 + |y|^2) - K2 |x|^beta + K2 |y|^beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KhasminskiiConstants {
    pub k1: f64,
    pub k2: f64,
    pub beta: f64,
}

impl KhasminskiiConstants {
    pub fn new(k1: f64, k2: f64, beta: f64) -> Result<Self> {
        if !(k1 > 0.0) {
            return Err(Error::out_of_range("K1", k1, "(0, inf)"));
        }
        if !(k2 >= 0.0) {
            return Err(Error::out_of_range("K2", k2, "[0, inf)"));
        }
        if !(beta > 2.0) {
            return Err(Error::out_of_range("beta", beta, "(2, inf)"));
        }
        Ok(KhasminskiiConstants { k1, k2, beta })
    }
}

/// `x^T f(x,y) + (p_bar - 1)/2 |g(x,y)|^2 <= K1 (1 + |x|^2 + |y|^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongKhasminskiiConstants {
    pub p_bar: f64,
    pub k1: f64,
}

impl StrongKhasminskiiConstants {
    pub fn new(p_bar: f64, k1: f64) -> Result<Self> {
        if !(p_bar > 2.0) {
            return Err(Error::out_of_range("p_bar", p_bar, "(2, inf)"));
        }
        if !(k1 > 0.0) {
            return Err(Error::out_of_range("K1", k1, "(0, inf)"));
        }
        Ok(StrongKhasminskiiConstants { p_bar, k1 })
    }
}

pub type PairFunction = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// One-sided monotonicity
/// `(x - x')^T (f - f') + (1 + alpha)/2 |g - g'|^2 <= H (|x - x'|^2 + |y - y'|^2) - U(x, x') + U(y, y')`.
///
/// `alpha = 0` is the plain condition with factor 1/2; `alpha > 0` the
/// strengthened one.
#[derive(Clone)]
pub struct MonotonicityConstants {
    pub h: f64,
    pub alpha: f64,
    pub u: PairFunction,
    /// `b -> kappa_b` with `U(x, x') <= kappa_b |x - x'|^2` on `|x| v |x'| <= b`.
    pub kappa_of_b: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for MonotonicityConstants {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonotonicityConstants")
            .field("h", &self.h)
            .field("alpha", &self.alpha)
            .finish_non_exhaustive()
    }
}

impl MonotonicityConstants {
    pub fn new(
        h: f64,
        alpha: f64,
        u: PairFunction,
        kappa_of_b: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    ) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::out_of_range("H", h, "(0, inf)"));
        }
        if !(alpha >= 0.0) {
            return Err(Error::out_of_range("alpha", alpha, "[0, inf)"));
        }
        Ok(MonotonicityConstants {
            h,
            alpha,
            u,
            kappa_of_b,
        })
    }

    /// `U = 0`, `kappa_b = 0`.
    pub fn without_u(h: f64, alpha: f64) -> Result<Self> {
        MonotonicityConstants::new(h, alpha, Arc::new(|_, _| 0.0), Arc::new(|_| 0.0))
    }

    /// Samples the U-class requirements `U >= 0`, `U(x, x) = 0` and
    /// `U(x, x') <= kappa_b |x - x'|^2` on the box of radius `b`.
    pub fn check_u_class(&self, state_dim: usize, sampling: Sampling) -> Result<CheckReport> {
        let b = sampling.box_radius;
        let kappa = (self.kappa_of_b)(b);
        run_check(2 * state_dim, state_dim, sampling, false, |p| {
            let (x, xb) = (p[0], p[1]);
            let u = (self.u)(x, xb);
            let diag = (self.u)(x, x);
            let bound = kappa * diff_norm_sq(x, xb);
            let margin = (bound - u).min(u).min(-diag.abs());
            Ok((margin, bound))
        })
    }
}

/// `|f - f'|^2 v |g - g'|^2 <= H3 (|x - x'|^2 + |y - y'|^2)(1 + |x|^r + |x'|^r + |y|^r + |y'|^r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyLipschitzConstants {
    pub h3: f64,
    pub r: f64,
}

impl PolyLipschitzConstants {
    pub fn new(h3: f64, r: f64) -> Result<Self> {
        if !(h3 > 0.0) {
            return Err(Error::out_of_range("H3", h3, "(0, inf)"));
        }
        if !(r > 0.0) {
            return Err(Error::out_of_range("r", r, "(0, inf)"));
        }
        Ok(PolyLipschitzConstants { h3, r })
    }
}

/// Coefficient values at one point.
struct Coeffs {
    f: Vec<f64>,
    g: Vec<f64>,
}

fn eval(model: &SddeModel, x: &[f64], y: &[f64]) -> Result<Coeffs> {
    let f = model.drift(x, y);
    let g = model.diffusion(x, y);
    if f.iter().chain(&g).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "coefficient",
            x: x.to_vec(),
            y: y.to_vec(),
        });
    }
    Ok(Coeffs { f, g })
}

/// Margin of the Khasminskii-type inequality at `(x, y)`, with its right-hand side.
pub fn khasminskii_margin(
    model: &SddeModel,
    c: &KhasminskiiConstants,
    x: &[f64],
    y: &[f64],
) -> Result<(f64, f64)> {
    let co = eval(model, x, y)?;
    let lhs = dot(x, &co.f) + 0.5 * norm_sq(&co.g);
    let rhs = c.k1 * (1.0 + norm_sq(x) + norm_sq(y)) - c.k2 * norm(x).powf(c.beta)
        + c.k2 * norm(y).powf(c.beta);
    Ok((rhs - lhs, rhs))
}

pub fn strong_khasminskii_margin(
    model: &SddeModel,
    c: &StrongKhasminskiiConstants,
    x: &[f64],
    y: &[f64],
) -> Result<(f64, f64)> {
    let co = eval(model, x, y)?;
    let lhs = dot(x, &co.f) + 0.5 * (c.p_bar - 1.0) * norm_sq(&co.g);
    let rhs = c.k1 * (1.0 + norm_sq(x) + norm_sq(y));
    Ok((rhs - lhs, rhs))
}

pub fn local_lipschitz_margin(
    model: &SddeModel,
    k_r: f64,
    x: &[f64],
    y: &[f64],
    x_bar: &[f64],
    y_bar: &[f64],
) -> Result<(f64, f64)> {
    let a = eval(model, x, y)?;
    let b = eval(model, x_bar, y_bar)?;
    let lhs = diff_norm_sq(&a.f, &b.f).max(diff_norm_sq(&a.g, &b.g));
    let rhs = k_r * (diff_norm_sq(x, x_bar) + diff_norm_sq(y, y_bar));
    Ok((rhs - lhs, rhs))
}

pub fn monotonicity_margin(
    model: &SddeModel,
    c: &MonotonicityConstants,
    x: &[f64],
    y: &[f64],
    x_bar: &[f64],
    y_bar: &[f64],
) -> Result<(f64, f64)> {
    let a = eval(model, x, y)?;
    let b = eval(model, x_bar, y_bar)?;
    let dx: Vec<f64> = x.iter().zip(x_bar).map(|(p, q)| p - q).collect();
    let df: Vec<f64> = a.f.iter().zip(&b.f).map(|(p, q)| p - q).collect();
    let lhs = dot(&dx, &df) + 0.5 * (1.0 + c.alpha) * diff_norm_sq(&a.g, &b.g);
    let rhs = c.h * (diff_norm_sq(x, x_bar) + diff_norm_sq(y, y_bar)) - (c.u)(x, x_bar)
        + (c.u)(y, y_bar);
    Ok((rhs - lhs, rhs))
}

pub fn poly_lipschitz_margin(
    model: &SddeModel,
    c: &PolyLipschitzConstants,
    x: &[f64],
    y: &[f64],
    x_bar: &[f64],
    y_bar: &[f64],
) -> Result<(f64, f64)> {
    let a = eval(model, x, y)?;
    let b = eval(model, x_bar, y_bar)?;
    let lhs = diff_norm_sq(&a.f, &b.f).max(diff_norm_sq(&a.g, &b.g));
    let growth = 1.0
        + norm(x).powf(c.r)
        + norm(x_bar).powf(c.r)
        + norm(y).powf(c.r)
        + norm(y_bar).powf(c.r);
    let rhs = c.h3 * (diff_norm_sq(x, x_bar) + diff_norm_sq(y, y_bar)) * growth;
    Ok((rhs - lhs, rhs))
}

pub fn check_khasminskii(
    model: &SddeModel,
    c: &KhasminskiiConstants,
    sampling: Sampling,
) -> Result<CheckReport> {
    let n = model.state_dim();
    run_check(2 * n, n, sampling, false, |p| khasminskii_margin(model, c, p[0], p[1]))
}

pub fn check_strong_khasminskii(
    model: &SddeModel,
    c: &StrongKhasminskiiConstants,
    sampling: Sampling,
) -> Result<CheckReport> {
    let n = model.state_dim();
    run_check(2 * n, n, sampling, false, |p| {
        strong_khasminskii_margin(model, c, p[0], p[1])
    })
}

/// Samples `(x, y, x', y')` with every vector in the ball of radius `R`
/// (`sampling.box_radius`).
pub fn check_local_lipschitz(model: &SddeModel, k_r: f64, sampling: Sampling) -> Result<CheckReport> {
    if !(k_r > 0.0) {
        return Err(Error::out_of_range("K_R", k_r, "(0, inf)"));
    }
    let n = model.state_dim();
    run_check(4 * n, n, sampling, true, |p| {
        local_lipschitz_margin(model, k_r, p[0], p[1], p[2], p[3])
    })
}

pub fn check_monotonicity(
    model: &SddeModel,
    c: &MonotonicityConstants,
    sampling: Sampling,
) -> Result<CheckReport> {
    let n = model.state_dim();
    run_check(4 * n, n, sampling, false, |p| {
        monotonicity_margin(model, c, p[0], p[1], p[2], p[3])
    })
}

pub fn check_poly_lipschitz(
    model: &SddeModel,
    c: &PolyLipschitzConstants,
    sampling: Sampling,
) -> Result<CheckReport> {
    let n = model.state_dim();
    run_check(4 * n, n, sampling, false, |p| {
        poly_lipschitz_margin(model, c, p[0], p[1], p[2], p[3])
    })
}

/// Pair budget for the initial-path check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderSampling {
    pub n_pairs: usize,
    pub seed: u64,
}

impl Default for HolderSampling {
    fn default() -> Self {
        HolderSampling {
            n_pairs: 2000,
            seed: 0x5eed,
        }
    }
}

/// Samples `|xi(u) - xi(v)| <= K3 |u - v|^gamma` on `[-tau, 0]`.
///
/// The endpoint pair `(0, -tau)` is always included; half of the random
/// pairs are at a log-uniform distance in `[1e-6, 1] tau` to probe small
/// separations.
pub fn check_holder_initial(
    xi: &(dyn Fn(f64, &mut [f64]) + Send + Sync),
    state_dim: usize,
    tau: f64,
    k3: f64,
    gamma: f64,
    sampling: HolderSampling,
) -> Result<CheckReport> {
    if !(k3 >= 0.0) {
        return Err(Error::out_of_range("K3", k3, "[0, inf)"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::out_of_range("gamma", gamma, "(0, 1]"));
    }
    if !(tau > 0.0) {
        return Err(Error::out_of_range("tau", tau, "(0, inf)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut pairs = vec![(0.0, -tau)];
    for i in 0..sampling.n_pairs {
        let u = -tau * rng.random::<f64>();
        let v = if i % 2 == 0 {
            -tau * rng.random::<f64>()
        } else {
            let d = tau * 10f64.powf(-6.0 * rng.random::<f64>());
            if u - d >= -tau {
                u - d
            } else {
                (u + d).min(0.0)
            }
        };
        pairs.push((u, v));
    }

    let margins = pairs
        .par_iter()
        .map(|&(u, v)| {
            let mut a = vec![0.0; state_dim];
            let mut b = vec![0.0; state_dim];
            xi(u, &mut a);
            xi(v, &mut b);
            if a.iter().chain(&b).any(|z| !z.is_finite()) {
                return Err(Error::NonFinite {
                    what: "initial path",
                    x: vec![u],
                    y: vec![v],
                });
            }
            let rhs = k3 * (u - v).abs().powf(gamma);
            Ok((rhs - diff_norm_sq(&a, &b).sqrt(), rhs))
        })
        .collect::<Result<Vec<_>>>()?;

    let (i, margin, rhs) = worst(&margins);
    Ok(CheckReport {
        passed: within_tolerance(margin, rhs),
        worst_margin: margin,
        bound_at_witness: rhs,
        witness: Witness {
            x: vec![pairs[i].0],
            y: vec![pairs[i].1],
            ..Witness::default()
        },
        n_samples: pairs.len(),
        box_radius: tau,
    })
}

/// Convenience wrapper over a model's own initial path.
pub fn check_model_holder(
    model: &SddeModel,
    k3: f64,
    gamma: f64,
    sampling: HolderSampling,
) -> Result<CheckReport> {
    check_holder_initial(model.initial_fn(), model.state_dim(), model.delay(), k3, gamma, sampling)
}

fn within_tolerance(margin: f64, rhs: f64) -> bool {
    margin >= -PASS_TOLERANCE * (1.0 + rhs.abs())
}

/// Index, margin and bound of the smallest margin; first index wins ties.
fn worst(margins: &[(f64, f64)]) -> (usize, f64, f64) {
    let mut best = (0, f64::INFINITY, 0.0);
    for (i, &(m, rhs)) in margins.iter().enumerate() {
        if m < best.1 {
            best = (i, m, rhs);
        }
    }
    best
}

/// Deterministic points of the unit cube `[-1, 1]^dim` followed by
/// `n_random` uniform draws.
pub fn unit_points(dim: usize, n_random: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]];
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut p = vec![0.0; dim];
            p[i] = s;
            pts.push(p);
        }
    }
    if dim <= MAX_CORNER_DIM {
        for bits in 0..(1u32 << dim) {
            pts.push(
                (0..dim)
                    .map(|i| if bits >> i & 1 == 0 { 1.0 } else { -1.0 })
                    .collect(),
            );
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_random {
        pts.push((0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect());
    }
    pts
}

/// Evaluates `margin` on the scaled point set; each point is split into
/// `dim / n` vectors of length `n`. With `ball`, every vector is radially
/// pulled into the ball of the box radius.
fn run_check<F>(dim: usize, n: usize, sampling: Sampling, ball: bool, margin: F) -> Result<CheckReport>
where
    F: Fn(&[&[f64]]) -> Result<(f64, f64)> + Sync,
{
    let b = sampling.box_radius;
    let mut pts = unit_points(dim, sampling.n_samples, sampling.seed);
    for p in &mut pts {
        for v in p.chunks_mut(n) {
            let scale = if ball { norm(v).max(1.0) } else { 1.0 };
            for a in v.iter_mut() {
                *a *= b / scale;
            }
        }
    }
    let margins = pts
        .par_iter()
        .map(|p| {
            let parts: Vec<&[f64]> = p.chunks(n).collect();
            margin(&parts)
        })
        .collect::<Result<Vec<_>>>()?;

    let (i, m, rhs) = worst(&margins);
    let parts: Vec<&[f64]> = pts[i].chunks(n).collect();
    let get = |j: usize| parts.get(j).map(|v| v.to_vec()).unwrap_or_default();
    Ok(CheckReport {
        passed: within_tolerance(m, rhs),
        worst_margin: m,
        bound_at_witness: rhs,
        witness: Witness {
            x: get(0),
            y: get(1),
            x_bar: get(2),
            y_bar: get(3),
        },
        n_samples: pts.len(),
        box_radius: b,
    })
}

/// `sup_{0 <= u <= u_max} phi(u)` for a function that is unimodal on the
/// interval: a 1024-cell scan locates the bracket, golden-section search
/// refines it to `1e-10`.
pub fn sup_on_interval(phi: impl Fn(f64) -> f64, u_max: f64) -> f64 {
    const CELLS: usize = 1024;
    let step = u_max / CELLS as f64;
    let mut best = 0;
    let mut best_val = phi(0.0);
    for i in 1..=CELLS {
        let v = phi(i as f64 * step);
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    let mut lo = (best.saturating_sub(1)) as f64 * step;
    let mut hi = ((best + 1).min(CELLS)) as f64 * step;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (phi(c), phi(d));
    while hi - lo > 1e-10 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = phi(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = phi(d);
        }
    }
    best_val.max(fc).max(fd).max(phi(0.5 * (lo + hi)))
}

/// Hand-derived constants for the delay population system.
pub mod example36 {
    use super::*;
    use crate::model::Example36Params;

    /// `delta = a3 - a4^2 - a5^2`, `K1 = a1 v a2^2/(4 delta)`, `K2 = a5^2/2`, `beta = 4`.
    pub fn khasminskii(p: &Example36Params) -> KhasminskiiConstants {
        let [a1, a2, a3, a4, a5] = p.a;
        let delta = a3 - a4 * a4 - a5 * a5;
        KhasminskiiConstants {
            k1: a1.max(a2 * a2 / (4.0 * delta)),
            k2: 0.5 * a5 * a5,
            beta: 4.0,
        }
    }

    /// Squared gradient bound of `f` and `g` on `|x| v |y| <= R`.
    pub fn local_lipschitz_constant(p: &Example36Params, radius: f64) -> f64 {
        let [a1, a2, a3, a4, a5] = p.a;
        let r = radius;
        let fx = a1 + a2 * r + 3.0 * a3 * r * r;
        let fy = a2 * r;
        let gx = (2.0 * a4 + a5) * r;
        let gy = a5 * r;
        (fx * fx + fy * fy).max(gx * gx + gy * gy)
    }
}

/// Hand-derived constants for the cubic-drift model.
pub mod example55 {
    use super::*;
    use crate::model::Example55Params;

    /// `K = sup_{u >= 0} [|a1| u + (|a2| + |a4|(p_bar - 1)) u^3 - a3 u^4]`.
    pub fn k_sup(p: &Example55Params, p_bar: f64) -> f64 {
        let [a1, a2, a3, a4, _] = p.a;
        let c1 = a1.abs();
        let c3 = a2.abs() + a4.abs() * (p_bar - 1.0);
        let u_max = ((c1 + c3) / a3).max(1.0) + 1.0;
        sup_on_interval(|u| c1 * u + c3 * u * u * u - a3 * u.powi(4), u_max)
    }

    /// `K1 = (|a2| + |a5|(p_bar - 1)) v K`.
    pub fn strong_khasminskii(p: &Example55Params, p_bar: f64) -> Result<StrongKhasminskiiConstants> {
        let [_, a2, _, _, a5] = p.a;
        let k1 = (a2.abs() + a5.abs() * (p_bar - 1.0)).max(k_sup(p, p_bar));
        StrongKhasminskiiConstants::new(p_bar, k1)
    }

    /// `a6 = sup_{u >= 0} (8 u^{2/3} - a3 u^2 / 2)`.
    pub fn a6(p: &Example55Params) -> f64 {
        let a3 = p.a[2];
        sup_on_interval(|u| 8.0 * u.powf(2.0 / 3.0) - 0.5 * a3 * u * u, (16.0 / a3).powf(0.75) + 1.0)
    }

    /// `a7 = sup_{u >= 0} (9 a4^2 u - a3 u^2 / 2)`.
    pub fn a7(p: &Example55Params) -> f64 {
        let (a3, a4) = (p.a[2], p.a[3]);
        sup_on_interval(|u| 9.0 * a4 * a4 * u - 0.5 * a3 * u * u, 18.0 * a4 * a4 / a3 + 1.0)
    }

    /// `a8 = sup_{u >= 0} (9 a4^2 u - a3 u^2 / 4)`.
    pub fn a8(p: &Example55Params) -> f64 {
        let (a3, a4) = (p.a[2], p.a[3]);
        sup_on_interval(|u| 9.0 * a4 * a4 * u - 0.25 * a3 * u * u, 36.0 * a4 * a4 / a3 + 1.0)
    }

    fn u_function(p: &Example55Params) -> (PairFunction, Arc<dyn Fn(f64) -> f64 + Send + Sync>) {
        let a3 = p.a[2];
        (
            Arc::new(move |x: &[f64], xb: &[f64]| {
                0.25 * a3 * diff_norm_sq(x, xb) * (norm_sq(x) + norm_sq(xb))
            }),
            Arc::new(move |b: f64| 0.5 * a3 * b * b),
        )
    }

    /// Plain monotonicity (`alpha = 0`) with
    /// `H1 = (a6 v a2^2) + (a7 v a5^2)`, `U(x, x') = a3/4 |x - x'|^2 (x^2 + x'^2)`.
    pub fn monotonicity(p: &Example55Params) -> MonotonicityConstants {
        let (a2, a5) = (p.a[1], p.a[4]);
        let h1 = a6(p).max(a2 * a2) + a7(p).max(a5 * a5);
        let (u, kappa) = u_function(p);
        MonotonicityConstants {
            h: h1,
            alpha: 0.0,
            u,
            kappa_of_b: kappa,
        }
    }

    /// Strengthened monotonicity (`alpha = 1`) with
    /// `H2 = (a6 v a2^2) + 2 (a8 v a5^2)` and the same `U`.
    pub fn strong_monotonicity(p: &Example55Params) -> MonotonicityConstants {
        let (a2, a5) = (p.a[1], p.a[4]);
        let h2 = a6(p).max(a2 * a2) + 2.0 * a8(p).max(a5 * a5);
        let (u, kappa) = u_function(p);
        MonotonicityConstants {
            h: h2,
            alpha: 1.0,
            u,
            kappa_of_b: kappa,
        }
    }

    /// `r = 4`; `H3` covers both the drift bound `8 a2^2 v 16 a3^2` and the
    /// diffusion bound `2 (a8 v a5^2) + a3 / 4` (using `x^2 <= 1 + x^4`).
    pub fn poly_lipschitz(p: &Example55Params) -> PolyLipschitzConstants {
        let (a2, a3, a5) = (p.a[1], p.a[2], p.a[4]);
        let drift = (8.0 * a2 * a2).max(16.0 * a3 * a3);
        let diffusion = 2.0 * a8(p).max(a5 * a5) + 0.25 * a3;
        PolyLipschitzConstants {
            h3: drift.max(diffusion),
            r: 4.0,
        }
    }

    /// Squared gradient bound of `f` and `g` on `|x| v |y| <= R`.
    pub fn local_lipschitz_constant(p: &Example55Params, radius: f64) -> f64 {
        let [_, a2, a3, a4, a5] = p.a;
        let r = radius;
        let fx = 3.0 * a3 * r * r;
        let fy = 4.0 / 3.0 * a2.abs() * r.powf(1.0 / 3.0);
        let gx = 1.5 * a4.abs() * r.sqrt();
        let gy = a5.abs();
        (fx * fx + fy * fy).max(gx * gx + gy * gy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_example_36, make_example_55, Example36Params, Example55Params};

    fn scalar(
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> SddeModel {
        SddeModel::scalar("test", 1.0, f, g).unwrap()
    }

    fn s(b: f64, n: usize) -> Sampling {
        Sampling::new(b, n, 17).unwrap()
    }

    #[test]
    fn example36_stated_constants() {
        let p = Example36Params::new([1.0, 1.0, 1.0, 0.5, 0.5]).unwrap();
        let c = example36::khasminskii(&p);
        assert_eq!((c.k1, c.k2, c.beta), (1.0, 0.125, 4.0));
        let m = make_example_36(&p).unwrap();
        for b in [1.0, 10.0, 50.0] {
            let r = check_khasminskii(&m, &c, s(b, 20_000)).unwrap();
            assert!(r.passed, "box {b}: {r:?}");
        }
    }

    #[test]
    fn zero_model_khasminskii_margin_at_least_k1() {
        let m = scalar(|_, _| 0.0, |_, _| 0.0);
        let c = KhasminskiiConstants::new(2.0, 0.0, 3.0).unwrap();
        let r = check_khasminskii(&m, &c, s(5.0, 1000)).unwrap();
        assert!(r.passed);
        assert!(r.worst_margin >= 2.0);
        assert_eq!(r.witness.x, vec![0.0]);
    }

    #[test]
    fn khasminskii_counterexample() {
        let m = scalar(|x, _| x * x * x, |_, _| 0.0);
        let c = KhasminskiiConstants::new(1.0, 0.0, 4.0).unwrap();
        assert_eq!(khasminskii_margin(&m, &c, &[2.0], &[0.0]).unwrap(), (-11.0, 5.0));
        let r = check_khasminskii(&m, &c, s(2.0, 5000)).unwrap();
        assert!(!r.passed);
        assert_eq!((r.witness.x.clone(), r.witness.y.clone()), (vec![2.0], vec![0.0]));
        assert_eq!(r.worst_margin, -11.0);
    }

    #[test]
    fn example55_strong_khasminskii() {
        let p = Example55Params::new([1.0, 1.0, 1.0, 0.5, 0.5]).unwrap();
        let c = example55::strong_khasminskii(&p, 4.0).unwrap();
        // Oracle: dense scan of u + 2.5 u^3 - u^4.
        let scan = (0..=400_000)
            .map(|i| {
                let u = i as f64 * 1e-5;
                u + 2.5 * u * u * u - u.powi(4)
            })
            .fold(f64::MIN, f64::max);
        assert!((example55::k_sup(&p, 4.0) - scan).abs() < 1e-8);
        assert!((c.k1 - scan.max(2.5)).abs() < 1e-8);
        let m = make_example_55(&p).unwrap();
        for b in [1.0, 10.0, 50.0] {
            let r = check_strong_khasminskii(&m, &c, s(b, 20_000)).unwrap();
            assert!(r.passed, "box {b}: {r:?}");
        }
    }

    #[test]
    fn strong_khasminskii_cases() {
        let m = scalar(|x, _| -x, |_, _| 0.0);
        for p_bar in [2.5, 4.0, 10.0] {
            let c = StrongKhasminskiiConstants::new(p_bar, 1.0).unwrap();
            assert!(check_strong_khasminskii(&m, &c, s(20.0, 1000)).unwrap().passed);
        }
        let m = scalar(|_, _| 0.0, |x, _| x * x);
        let c = StrongKhasminskiiConstants::new(4.0, 1.0).unwrap();
        assert_eq!(strong_khasminskii_margin(&m, &c, &[3.0], &[0.0]).unwrap().0, 10.0 - 1.5 * 81.0);
        let r = check_strong_khasminskii(&m, &c, s(3.0, 5000)).unwrap();
        assert!(!r.passed);
        assert_eq!((r.witness.x.clone(), r.witness.y.clone()), (vec![3.0], vec![0.0]));
    }

    #[test]
    fn local_lipschitz_cases() {
        let m = scalar(|_, _| 4.0, |_, _| -1.0);
        assert!(check_local_lipschitz(&m, 1e-6, s(10.0, 1000)).unwrap().passed);

        // Oracle: max |d/dx x^2| on [-2, 2] is 4, squared 16.
        let m = scalar(|x, _| x * x, |_, _| 0.0);
        assert!(check_local_lipschitz(&m, 16.0, s(2.0, 20_000)).unwrap().passed);
        let r = check_local_lipschitz(&m, 1.0, s(2.0, 20_000)).unwrap();
        assert!(!r.passed);
        let w = &r.witness;
        assert!(w.x[0].abs().max(w.x_bar[0].abs()) > 1.5, "{w}");
    }

    #[test]
    fn holder_cases() {
        let lin = |u: f64, out: &mut [f64]| out[0] = u;
        let h = HolderSampling::default();
        assert!(check_holder_initial(&lin, 1, 1.0, 1.0, 1.0, h).unwrap().passed);
        let r = check_holder_initial(&lin, 1, 1.0, 0.5, 1.0, h).unwrap();
        assert!(!r.passed);
        assert_eq!((r.witness.x[0], r.witness.y[0]), (0.0, -1.0));
        assert_eq!(r.worst_margin, -0.5);

        let c = |_: f64, out: &mut [f64]| out[0] = 3.0;
        for (k3, g) in [(0.0, 1.0), (0.1, 0.3), (5.0, 1.0)] {
            let r = check_holder_initial(&c, 1, 2.0, k3, g, h).unwrap();
            assert!(r.passed && r.worst_margin >= 0.0);
        }

        // sqrt is 1/2-Hölder but not Lipschitz near 0.
        let sq = |u: f64, out: &mut [f64]| out[0] = (-u).sqrt();
        assert!(check_holder_initial(&sq, 1, 1.0, 1.0, 0.5, h).unwrap().passed);
        assert!(!check_holder_initial(&sq, 1, 1.0, 10.0, 1.0, h).unwrap().passed);
    }

    #[test]
    fn example55_monotonicity() {
        let p = Example55Params::new([1.0, 1.0, 1.0, 0.5, 0.5]).unwrap();
        let m = make_example_55(&p).unwrap();
        // Closed forms: a7 = 81 a4^4 / (2 a3), a8 = 81 a4^4 / a3.
        let a4 = 0.5f64;
        assert!((example55::a7(&p) - 81.0 * a4.powi(4) / 2.0).abs() < 1e-9);
        assert!((example55::a8(&p) - 81.0 * a4.powi(4)).abs() < 1e-9);
        // a6 = sup 8 u^{2/3} - u^2/2: stationary at u^{4/3} = 16/3.
        let u = (16.0f64 / 3.0).powf(0.75);
        assert!((example55::a6(&p) - (8.0 * u.powf(2.0 / 3.0) - 0.5 * u * u)).abs() < 1e-9);

        for c in [example55::monotonicity(&p), example55::strong_monotonicity(&p)] {
            for b in [1.0, 5.0, 20.0] {
                let r = check_monotonicity(&m, &c, s(b, 20_000)).unwrap();
                assert!(r.passed, "alpha {} box {b}: {r:?}", c.alpha);
                assert!(c.check_u_class(1, s(b, 5000)).unwrap().passed);
            }
        }
    }

    #[test]
    fn monotonicity_cases() {
        let m = scalar(|_, _| 0.0, |_, _| 0.0);
        let c = MonotonicityConstants::without_u(1.0, 0.0).unwrap();
        assert!(check_monotonicity(&m, &c, s(10.0, 1000)).unwrap().passed);

        let m = scalar(|x, _| x * x, |_, _| 0.0);
        let (margin, _) = monotonicity_margin(&m, &c, &[3.0], &[0.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(margin, 9.0 - 27.0);
        let r = check_monotonicity(&m, &c, s(3.0, 5000)).unwrap();
        assert!(!r.passed);
        assert!(r.worst_margin <= -18.0);
    }

    #[test]
    fn example55_poly_lipschitz() {
        let p = Example55Params::new([1.0, 1.0, 1.0, 0.5, 0.5]).unwrap();
        let m = make_example_55(&p).unwrap();
        let c = example55::poly_lipschitz(&p);
        assert_eq!(c.r, 4.0);
        for b in [0.5, 1.0, 5.0, 20.0] {
            let r = check_poly_lipschitz(&m, &c, s(b, 20_000)).unwrap();
            assert!(r.passed, "box {b}: {r:?}");
        }
    }

    #[test]
    fn poly_lipschitz_cases() {
        let m = scalar(|_, _| 1.0, |_, _| 2.0);
        let c = PolyLipschitzConstants::new(1e-3, 1.0).unwrap();
        assert!(check_poly_lipschitz(&m, &c, s(10.0, 1000)).unwrap().passed);

        let m = scalar(|x, _| x.exp(), |_, _| 0.0);
        let c = PolyLipschitzConstants::new(1.0, 1.0).unwrap();
        // Oracle at (x, x') = (b, b - 1): e^{2b}(1 - 1/e)^2 against 1 + b + (b - 1).
        let b = 10.0f64;
        let lhs = (b.exp() - (b - 1.0).exp()).powi(2);
        let rhs = 1.0 + b + (b - 1.0);
        assert!(lhs > rhs);
        let (margin, _) = poly_lipschitz_margin(&m, &c, &[b], &[0.0], &[b - 1.0], &[0.0]).unwrap();
        assert!((margin - (rhs - lhs)).abs() < 1e-9 * lhs);
        let r = check_poly_lipschitz(&m, &c, s(b, 5000)).unwrap();
        assert!(!r.passed);
        assert!(r.witness.x[0].max(r.witness.x_bar[0]) > 0.8 * b);
    }

    #[test]
    fn example_local_lipschitz_constants_pass() {
        let p36 = Example36Params::new([1.0, 1.0, 1.0, 0.5, 0.5]).unwrap();
        let p55 = Example55Params::new([1.0, 1.0, 1.0, 0.5, 0.5]).unwrap();
        for radius in [1.0, 4.0] {
            let m = make_example_36(&p36).unwrap();
            let k = example36::local_lipschitz_constant(&p36, radius);
            assert!(check_local_lipschitz(&m, k, s(radius, 10_000)).unwrap().passed);
            let m = make_example_55(&p55).unwrap();
            let k = example55::local_lipschitz_constant(&p55, radius);
            assert!(check_local_lipschitz(&m, k, s(radius, 10_000)).unwrap().passed);
        }
    }

    #[test]
    fn reports_are_deterministic_and_nested() {
        let m = scalar(|x, _| x * x * x, |_, _| 0.0);
        let c = KhasminskiiConstants::new(1.0, 0.0, 4.0).unwrap();
        let a = check_khasminskii(&m, &c, s(3.0, 2000)).unwrap();
        let b = check_khasminskii(&m, &c, s(3.0, 2000)).unwrap();
        assert_eq!(a, b);
        let mut failed = false;
        for radius in [0.5, 1.0, 1.5, 2.0, 4.0, 8.0] {
            let r = check_khasminskii(&m, &c, s(radius, 2000)).unwrap();
            assert!(!(failed && r.passed), "failure must persist at {radius}");
            failed |= !r.passed;
        }
        assert!(failed);

        let small = unit_points(2, 10, 5);
        let big = unit_points(2, 10, 5);
        assert_eq!(small, big);
        assert_eq!(small.len(), 1 + 4 + 4 + 10);
    }

    #[test]
    fn non_finite_coefficients_error() {
        let m = scalar(|x, _| 1.0 / x, |_, _| 0.0);
        let c = KhasminskiiConstants::new(1.0, 0.0, 4.0).unwrap();
        assert!(matches!(
            check_khasminskii(&m, &c, s(1.0, 10)),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn sup_search() {
        let v = sup_on_interval(|u| -(u - 0.3).powi(2) + 2.0, 5.0);
        assert!((v - 2.0).abs() < 1e-15);
        assert_eq!(sup_on_interval(|u| -u, 3.0), 0.0);
    }

    #[test]
    fn csv_row_format() {
        let r = CheckReport {
            passed: false,
            worst_margin: -11.0,
            bound_at_witness: 5.0,
            witness: Witness {
                x: vec![2.0],
                y: vec![0.0],
                ..Witness::default()
            },
            n_samples: 10,
            box_radius: 2.0,
        };
        assert_eq!(r.csv_row("khasminskii"), "khasminskii,false,-11,10,2,x=[2] y=[0]");
    }
}

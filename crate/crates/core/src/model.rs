//! SDDE instances.
//!
//! A model bundles the drift `f(x, y)`, the diffusion `g(x, y)` (an `n x m`
//! matrix stored row-major), the constant delay `tau` and the initial
//! segment `xi` on `[-tau, 0]`. Coefficients are plain closures and are
//! never mutated, so one model can be shared by any number of concurrently
//! simulated paths.

use std::fmt;
use std::sync::Arc;

use crate::conditions::{check_holder_initial, HolderSampling};
use crate::error::{Error, Result};

/// `(x, y, out)` with `x = x(t)`, `y = x(t - tau)`.
pub type VectorField = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// `(u, out)` for `u` in `[-tau, 0]`.
pub type InitialPath = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Declared Hölder regularity `|xi(u) - xi(v)| <= k3 |u - v|^gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Holder {
    pub k3: f64,
    pub gamma: f64,
}

#[derive(Clone)]
pub struct SddeModel {
    id: String,
    state_dim: usize,
    noise_dim: usize,
    delay: f64,
    drift: VectorField,
    diffusion: VectorField,
    initial: InitialPath,
    holder: Option<Holder>,
}

impl fmt::Debug for SddeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SddeModel")
            .field("id", &self.id)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("delay", &self.delay)
            .field("holder", &self.holder)
            .finish_non_exhaustive()
    }
}

/// Number of points at which a new initial path is probed for finiteness.
const INITIAL_PROBES: usize = 1025;

impl SddeModel {
    pub fn new(
        id: impl Into<String>,
        state_dim: usize,
        noise_dim: usize,
        delay: f64,
        drift: VectorField,
        diffusion: VectorField,
        initial: InitialPath,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidParams("state_dim must be >= 1".into()));
        }
        if noise_dim == 0 {
            return Err(Error::InvalidParams("noise_dim must be >= 1".into()));
        }
        let model = SddeModel {
            id: id.into(),
            state_dim,
            noise_dim,
            delay: validate_delay(delay)?,
            drift,
            diffusion,
            initial,
            holder: None,
        };
        model.validate_initial()?;
        Ok(model)
    }

    /// Scalar model (`n = m = 1`) with constant initial path `xi = 1`.
    pub fn scalar<F, G>(id: impl Into<String>, delay: f64, f: F, g: G) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        SddeModel::new(
            id,
            1,
            1,
            delay,
            Arc::new(move |x, y, out| out[0] = f(x[0], y[0])),
            Arc::new(move |x, y, out| out[0] = g(x[0], y[0])),
            Arc::new(|_, out| out[0] = 1.0),
        )
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn holder(&self) -> Option<Holder> {
        self.holder
    }

    pub fn with_delay(mut self, delay: f64) -> Result<Self> {
        self.delay = validate_delay(delay)?;
        self.validate_initial()?;
        if let Some(h) = self.holder.take() {
            self = self.with_holder(h.k3, h.gamma)?;
        }
        Ok(self)
    }

    /// Replaces `xi` and drops any Hölder declaration made for the old path.
    pub fn with_initial(mut self, initial: InitialPath) -> Result<Self> {
        self.initial = initial;
        self.holder = None;
        self.validate_initial()?;
        Ok(self)
    }

    /// Constant initial path `xi = value` (every coordinate), which is
    /// Hölder with `k3 = 0` for any exponent.
    pub fn with_constant_initial(self, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::out_of_range("initial value", value, "finite reals"));
        }
        self.with_initial(Arc::new(move |_, out: &mut [f64]| out.fill(value)))?
            .with_holder(0.0, 1.0)
    }

    /// Declares `xi` Hölder continuous; the declaration is checked by sampling.
    pub fn with_holder(mut self, k3: f64, gamma: f64) -> Result<Self> {
        if !(k3 >= 0.0 && k3.is_finite()) {
            return Err(Error::out_of_range("K3", k3, "[0, inf)"));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::out_of_range("gamma", gamma, "(0, 1]"));
        }
        let report = check_holder_initial(
            &*self.initial,
            self.state_dim,
            self.delay,
            k3,
            gamma,
            HolderSampling::default(),
        )?;
        if !report.passed {
            return Err(Error::InvalidParams(format!(
                "initial path violates the declared Hölder bound (K3 = {k3}, gamma = {gamma}); worst margin {}",
                report.worst_margin
            )));
        }
        self.holder = Some(Holder { k3, gamma });
        Ok(self)
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.drift)(x, y, out)
    }

    #[inline]
    pub fn diffusion_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, y, out)
    }

    #[inline]
    pub fn initial_into(&self, u: f64, out: &mut [f64]) {
        (self.initial)(u, out)
    }

    pub fn drift(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim];
        self.drift_into(x, y, &mut out);
        out
    }

    /// Row-major `n x m` diffusion matrix.
    pub fn diffusion(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim * self.noise_dim];
        self.diffusion_into(x, y, &mut out);
        out
    }

    pub fn initial(&self, u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim];
        self.initial_into(u, &mut out);
        out
    }

    pub(crate) fn initial_fn(&self) -> &(dyn Fn(f64, &mut [f64]) + Send + Sync) {
        &*self.initial
    }

    fn validate_initial(&self) -> Result<()> {
        let mut buf = vec![0.0; self.state_dim];
        for i in 0..INITIAL_PROBES {
            let u = -self.delay + self.delay * i as f64 / (INITIAL_PROBES - 1) as f64;
            self.initial_into(u, &mut buf);
            if buf.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "initial path is not finite at u = {u}"
                )));
            }
        }
        Ok(())
    }
}

fn validate_delay(delay: f64) -> Result<f64> {
    if delay > 0.0 && delay.is_finite() {
        Ok(delay)
    } else {
        Err(Error::out_of_range("delay", delay, "(0, inf)"))
    }
}

/// Coefficients of the delay population system
/// `dx = x(a1 + a2 y - a3 x^2) dt + x(a4 x + a5 y) dB`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example36Params {
    pub a: [f64; 5],
}

impl Example36Params {
    pub fn new(a: [f64; 5]) -> Result<Self> {
        if let Some(i) = a.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParams(format!(
                "example36 requires positive a{}, got {}",
                i + 1,
                a[i]
            )));
        }
        let [_, _, a3, a4, a5] = a;
        if a3 <= a4 * a4 + a5 * a5 {
            return Err(Error::InvalidParams(format!(
                "example36 requires a3 > a4^2 + a5^2, got {a3} <= {}",
                a4 * a4 + a5 * a5
            )));
        }
        Ok(Example36Params { a })
    }

    /// `a` in `mu(r) = a r^3`: `(a1 + a2 + a3) v (a4 + a5)`.
    pub fn mu_constant(&self) -> f64 {
        let [a1, a2, a3, a4, a5] = self.a;
        (a1 + a2 + a3).max(a4 + a5)
    }
}

/// Coefficients of the cubic-drift model
/// `f = a1 + a2 |y|^{4/3} - a3 x^3`, `g = a4 |x|^{3/2} + a5 y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example55Params {
    pub a: [f64; 5],
}

impl Example55Params {
    pub fn new(a: [f64; 5]) -> Result<Self> {
        if let Some(i) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "example55 requires finite a{}, got {}",
                i + 1,
                a[i]
            )));
        }
        if a[2] <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "example55 requires a3 > 0, got {}",
                a[2]
            )));
        }
        Ok(Example55Params { a })
    }

    /// `a_hat` in `mu(u) = a_hat u^3`: `(|a1| + |a2| + a3) v (|a4| + |a5|)`.
    pub fn mu_constant(&self) -> f64 {
        let [a1, a2, a3, a4, a5] = self.a;
        (a1.abs() + a2.abs() + a3).max(a4.abs() + a5.abs())
    }
}

/// Delay population system; `tau = 1`, `xi = 1`.
pub fn make_example_36(params: &Example36Params) -> Result<SddeModel> {
    let params = Example36Params::new(params.a)?;
    let [a1, a2, a3, a4, a5] = params.a;
    SddeModel::scalar(
        "example36",
        1.0,
        move |x, y| x * (a1 + a2 * y - a3 * x * x),
        move |x, y| x * (a4 * x + a5 * y),
    )?
    .with_holder(0.0, 1.0)
}

/// Cubic-drift model; `tau = 1`, `xi = 1`.
pub fn make_example_55(params: &Example55Params) -> Result<SddeModel> {
    let params = Example55Params::new(params.a)?;
    let [a1, a2, a3, a4, a5] = params.a;
    SddeModel::scalar(
        "example55",
        1.0,
        move |x, y| a1 + a2 * y.abs().powf(4.0 / 3.0) - a3 * x * x * x,
        move |x, y| a4 * x.abs().powf(1.5) + a5 * y,
    )?
    .with_holder(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex36() -> SddeModel {
        make_example_36(&Example36Params::new([1.0, 1.0, 1.0, 0.5, 0.5]).unwrap()).unwrap()
    }

    #[test]
    fn example36_drift_substitution() {
        let m = ex36();
        assert_eq!(m.drift(&[2.0], &[1.0]), vec![-4.0]);
        assert_eq!((m.state_dim(), m.noise_dim(), m.delay()), (1, 1, 1.0));
        assert_eq!(m.initial(-0.3), vec![1.0]);
        assert_eq!(m.holder(), Some(Holder { k3: 0.0, gamma: 1.0 }));
    }

    #[test]
    fn example36_vanishes_at_origin() {
        let m = ex36();
        for y in [-50.0, -1.0, 0.0, 0.3, 7.0, 1e6] {
            assert_eq!(m.drift(&[0.0], &[y])[0], 0.0);
            assert_eq!(m.diffusion(&[0.0], &[y])[0], 0.0);
        }
    }

    #[test]
    fn example36_rejects_weak_damping() {
        assert!(Example36Params::new([1.0; 5]).is_err());
        assert!(Example36Params::new([1.0, -1.0, 3.0, 0.1, 0.1]).is_err());
    }

    #[test]
    fn example55_substitution() {
        let m = make_example_55(&Example55Params::new([0.0, 0.0, 1.0, 0.0, 0.5]).unwrap()).unwrap();
        assert_eq!(m.drift(&[2.0], &[0.0]), vec![-8.0]);
        assert_eq!(m.diffusion(&[0.0], &[2.0]), vec![1.0]);

        let m = make_example_55(&Example55Params::new([3.0, 1.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(m.drift(&[0.0], &[0.0]), vec![3.0]);
        assert_eq!(m.diffusion(&[0.0], &[0.0]), vec![0.0]);
    }

    #[test]
    fn example55_rejects_nonpositive_a3() {
        assert!(Example55Params::new([0.0, 0.0, 0.0, 1.0, 1.0]).is_err());
        assert!(Example55Params::new([0.0, 0.0, -2.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn example55_drift_points_inward_far_out() {
        for a in [[0.0, 0.0, 1.0, 0.0, 0.5], [3.0, 1.0, 1.0, 1.0, 1.0], [-4.0, 2.0, 0.5, 1.0, -1.0]] {
            let p = Example55Params::new(a).unwrap();
            let m = make_example_55(&p).unwrap();
            let x = 10.0 * (1.0 + a[0].abs()) / a[2] + 10.0;
            assert!(m.drift(&[x], &[0.0])[0] < 0.0);
            assert!(m.drift(&[-x], &[0.0])[0] > 0.0);
        }
    }

    #[test]
    fn mu_constants() {
        let p = Example36Params::new([1.0, 1.0, 1.0, 0.5, 0.5]).unwrap();
        assert_eq!(p.mu_constant(), 3.0);
        let p = Example55Params::new([0.0, 0.0, 1.0, 0.0, 0.5]).unwrap();
        assert_eq!(p.mu_constant(), 1.0);
        let p = Example55Params::new([-1.0, 0.0, 1.0, 2.0, 1.5]).unwrap();
        assert_eq!(p.mu_constant(), 3.5);
    }

    #[test]
    fn invalid_construction() {
        assert!(SddeModel::scalar("z", 0.0, |_, _| 0.0, |_, _| 0.0).is_err());
        assert!(SddeModel::scalar("z", f64::NAN, |_, _| 0.0, |_, _| 0.0).is_err());
        let m = SddeModel::scalar("z", 1.0, |_, _| 0.0, |_, _| 0.0).unwrap();
        assert!(m
            .clone()
            .with_initial(Arc::new(|u, out: &mut [f64]| out[0] = 1.0 / (u + 1.0)))
            .is_err());
        let lin = m
            .with_initial(Arc::new(|u, out: &mut [f64]| out[0] = u))
            .unwrap();
        assert!(lin.clone().with_holder(1.0, 1.0).is_ok());
        assert!(lin.with_holder(0.5, 1.0).is_err());
    }
}

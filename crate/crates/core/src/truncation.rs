//! Truncation of superlinear coefficients.
//!
//! A policy fixes a strictly increasing dominator `mu(r) = a r^p` of the
//! coefficients' growth and the step-size budget `h(delta) = delta^-rho`.
//! For a step `delta` both coefficient arguments are projected onto the
//! closed ball of radius `mu^-1(h(delta))`, so the truncated coefficients
//! are bounded by `h(delta)` while agreeing with the raw ones inside the
//! ball.

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::model::SddeModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPolicy {
    mu_a: f64,
    mu_power: f64,
    rho: f64,
    delta_star: f64,
    delta_star_overridden: bool,
}

/// Creates the power-law policy `mu(r) = a r^power`, `h(delta) = delta^-rho`.
///
/// `delta_star = min(1, (1 v 2^power a)^(-1/rho))`, which puts
/// `h(delta_star) >= mu(2) >= mu(1)`.
pub fn make_power_law_policy(a: f64, power: f64, rho: f64) -> Result<TruncationPolicy> {
    TruncationPolicy::power_law(a, power, rho)
}

impl TruncationPolicy {
    pub fn power_law(a: f64, power: f64, rho: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::out_of_range("mu_a", a, "(0, inf)"));
        }
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::out_of_range("mu_power", power, "(0, inf)"));
        }
        if !(rho > 0.0 && rho <= 0.25) {
            return Err(Error::out_of_range("rho", rho, "(0, 1/4]"));
        }
        let base = (2f64.powf(power) * a).max(1.0);
        let delta_star = base.powf(-1.0 / rho).min(1.0);
        Ok(TruncationPolicy {
            mu_a: a,
            mu_power: power,
            rho,
            delta_star,
            delta_star_overridden: false,
        })
    }

    /// Replaces the theory-derived `delta_star` by `delta_star` in `(0, 1]`.
    ///
    /// Every step size up to the override is then admitted, including ones
    /// for which the truncation radius drops below 1.
    pub fn with_delta_star_override(mut self, delta_star: f64) -> Result<Self> {
        if !(delta_star > 0.0 && delta_star <= 1.0) {
            return Err(Error::out_of_range("delta_star_override", delta_star, "(0, 1]"));
        }
        self.delta_star = delta_star;
        self.delta_star_overridden = true;
        Ok(self)
    }

    pub fn mu_a(&self) -> f64 {
        self.mu_a
    }

    pub fn mu_power(&self) -> f64 {
        self.mu_power
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn delta_star(&self) -> f64 {
        self.delta_star
    }

    pub fn delta_star_overridden(&self) -> bool {
        self.delta_star_overridden
    }

    #[inline]
    pub fn mu(&self, r: f64) -> f64 {
        self.mu_a * r.powf(self.mu_power)
    }

    #[inline]
    pub fn mu_inv(&self, v: f64) -> f64 {
        (v / self.mu_a).powf(1.0 / self.mu_power)
    }

    #[inline]
    pub fn h(&self, delta: f64) -> f64 {
        delta.powf(-self.rho)
    }

    pub fn check_step(&self, delta: f64) -> Result<()> {
        if delta > 0.0 && delta <= self.delta_star {
            Ok(())
        } else {
            Err(Error::StepTooLarge {
                delta,
                delta_star: self.delta_star,
            })
        }
    }

    /// Radius `mu^-1(h(delta))` of the ball arguments are projected onto.
    pub fn truncation_radius(&self, delta: f64) -> Result<f64> {
        self.check_step(delta)?;
        Ok(self.mu_inv(self.h(delta)))
    }

    /// Precomputes radius and bound for one step size.
    pub fn at_step(&self, delta: f64) -> Result<Truncation> {
        let radius = self.truncation_radius(delta)?;
        Ok(Truncation {
            delta,
            radius,
            bound: self.h(delta),
        })
    }
}

pub fn truncation_radius(policy: &TruncationPolicy, delta: f64) -> Result<f64> {
    policy.truncation_radius(delta)
}

/// Truncation data for a fixed step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    pub delta: f64,
    pub radius: f64,
    /// `h(delta)`, the bound on the truncated coefficients.
    pub bound: f64,
}

impl Truncation {
    /// A truncation that never alters an argument.
    pub fn inactive(delta: f64) -> Self {
        Truncation {
            delta,
            radius: f64::INFINITY,
            bound: f64::INFINITY,
        }
    }

    /// Evaluates `f(pi(x), pi(y))` and `g(pi(x), pi(y))` into the output
    /// buffers, using `px`/`py` as scratch for the projected arguments.
    /// Returns whether the projection moved either argument.
    #[allow(clippy::too_many_arguments)]
    #[inline]
    pub(crate) fn eval_into(
        &self,
        model: &SddeModel,
        x: &[f64],
        y: &[f64],
        px: &mut [f64],
        py: &mut [f64],
        drift: &mut [f64],
        diffusion: &mut [f64],
    ) -> bool {
        let moved_x = project_into(x, self.radius, px);
        let moved_y = project_into(y, self.radius, py);
        model.drift_into(px, py, drift);
        model.diffusion_into(px, py, diffusion);
        moved_x || moved_y
    }
}

/// `(|x| ^ radius) x / |x|` with `x / |x| = 0` at the origin.
pub fn pi_delta(x: &[f64], radius: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    project_into(x, radius, &mut out);
    out
}

#[inline]
pub(crate) fn project_into(x: &[f64], radius: f64, out: &mut [f64]) -> bool {
    let n = norm(x);
    if n <= radius {
        out.copy_from_slice(x);
        false
    } else {
        // Rounding may leave the rescaled norm an ulp above the radius; shrink
        // until it is inside so a second projection is the identity.
        let mut scale = radius / n;
        loop {
            for (o, v) in out.iter_mut().zip(x) {
                *o = v * scale;
            }
            if norm(out) <= radius {
                return true;
            }
            scale = scale.next_down();
        }
    }
}

/// Truncated drift and diffusion at `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedCoeffs {
    pub drift: Vec<f64>,
    /// Row-major `n x m`.
    pub diffusion: Vec<f64>,
}

pub fn truncated_coeffs(
    model: &SddeModel,
    policy: &TruncationPolicy,
    delta: f64,
    x: &[f64],
    y: &[f64],
) -> Result<TruncatedCoeffs> {
    let trunc = policy.at_step(delta)?;
    truncated_coeffs_at(model, &trunc, x, y)
}

pub fn truncated_coeffs_at(
    model: &SddeModel,
    trunc: &Truncation,
    x: &[f64],
    y: &[f64],
) -> Result<TruncatedCoeffs> {
    let n = model.state_dim();
    let m = model.noise_dim();
    if x.len() != n || y.len() != n {
        return Err(Error::LengthMismatch {
            what: "coefficient argument",
            expected: n,
            actual: if x.len() != n { x.len() } else { y.len() },
        });
    }
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut drift = vec![0.0; n];
    let mut diffusion = vec![0.0; n * m];
    trunc.eval_into(model, x, y, &mut px, &mut py, &mut drift, &mut diffusion);
    if drift.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "truncated drift",
            x: x.to_vec(),
            y: y.to_vec(),
        });
    }
    if diffusion.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "truncated diffusion",
            x: x.to_vec(),
            y: y.to_vec(),
        });
    }
    Ok(TruncatedCoeffs { drift, diffusion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_example_55, Example55Params};
    use proptest::prelude::*;

    #[test]
    fn cubic_policy_delta_star() {
        let p = make_power_law_policy(3.0, 3.0, 0.25).unwrap();
        let expected = 1.0 / 331_776.0;
        assert!((p.delta_star() - expected).abs() <= 1e-15 * expected);
        assert!((p.delta_star() - 3.0140e-6).abs() < 1e-9);
        assert!(!p.delta_star_overridden());
        assert!((p.mu(2.0) - 24.0).abs() < 1e-12);
        assert!((p.mu_inv(24.0) - 2.0).abs() < 1e-12);
        assert!(p.h(p.delta_star()) >= p.mu(2.0) * (1.0 - 1e-12));
    }

    #[test]
    fn rejects_rho_out_of_range() {
        for rho in [0.5, 0.0, -0.1, 0.2500001, f64::NAN] {
            let err = make_power_law_policy(3.0, 3.0, rho).unwrap_err();
            assert!(err.to_string().contains("(0, 1/4]"), "{err}");
        }
        assert!(make_power_law_policy(0.0, 3.0, 0.1).is_err());
        assert!(make_power_law_policy(1.0, -1.0, 0.1).is_err());
    }

    #[test]
    fn radius_examples() {
        let p = make_power_law_policy(3.0, 3.0, 0.25)
            .unwrap()
            .with_delta_star_override(1.0)
            .unwrap();
        let r = truncation_radius(&p, 1e-4).unwrap();
        assert!((p.h(1e-4) - 10.0).abs() < 1e-12);
        assert!((r - (10.0f64 / 3.0).cbrt()).abs() < 1e-12);
        assert!((r - 1.49380).abs() < 1e-5);

        let p = make_power_law_policy(1.0, 1.0, 0.25)
            .unwrap()
            .with_delta_star_override(1.0)
            .unwrap();
        assert!((truncation_radius(&p, 1e-4).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn radius_rejects_large_step_without_override() {
        let p = make_power_law_policy(3.0, 3.0, 0.25).unwrap();
        match truncation_radius(&p, 0.5) {
            Err(Error::StepTooLarge { delta, delta_star }) => {
                assert_eq!(delta, 0.5);
                assert_eq!(delta_star, p.delta_star());
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(truncation_radius(&p, p.delta_star()).unwrap() >= 1.0);
    }

    #[test]
    fn override_range() {
        let p = make_power_law_policy(3.0, 3.0, 0.25).unwrap();
        assert!(p.with_delta_star_override(0.0).is_err());
        assert!(p.with_delta_star_override(1.5).is_err());
        let o = p.with_delta_star_override(0.125).unwrap();
        assert!(o.delta_star_overridden());
        assert!(o.truncation_radius(0.125).is_ok());
        assert!(o.truncation_radius(0.25).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(pi_delta(&[3.0, 4.0], 2.5), vec![1.5, 2.0]);
        assert_eq!(pi_delta(&[0.0, 0.0], 7.0), vec![0.0, 0.0]);
        assert_eq!(pi_delta(&[1.0, 0.0], 5.0), vec![1.0, 0.0]);
    }

    #[test]
    fn truncated_cubic_drift_outside_ball() {
        let model = make_example_55(&Example55Params::new([0.0, 0.0, 1.0, 0.0, 0.0]).unwrap()).unwrap();
        let p = make_power_law_policy(3.0, 3.0, 0.25)
            .unwrap()
            .with_delta_star_override(1.0)
            .unwrap();
        let c = truncated_coeffs(&model, &p, 1e-4, &[5.0], &[0.0]).unwrap();
        // Oracle: radius^3 = mu_inv(h)^3 = h / a = 10 / 3.
        let radius = (10.0f64 / 3.0).cbrt();
        assert!((c.drift[0] + radius * radius * radius).abs() < 1e-12);
        assert!((c.drift[0] + 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.diffusion, vec![0.0]);
    }

    #[test]
    fn inside_ball_matches_raw() {
        let model = make_example_55(&Example55Params::new([1.0, 2.0, 1.0, 0.5, 0.5]).unwrap()).unwrap();
        let p = make_power_law_policy(1.0, 3.0, 0.25)
            .unwrap()
            .with_delta_star_override(1.0)
            .unwrap();
        let r = p.truncation_radius(1e-3).unwrap();
        for &(x, y) in &[(0.0, 0.0), (0.5 * r, -0.9 * r), (-r, r)] {
            let c = truncated_coeffs(&model, &p, 1e-3, &[x], &[y]).unwrap();
            assert_eq!(c.drift, model.drift(&[x], &[y]));
            assert_eq!(c.diffusion, model.diffusion(&[x], &[y]));
        }
    }

    #[test]
    fn zero_model_is_zero() {
        let model = SddeModel::scalar("zero", 1.0, |_, _| 0.0, |_, _| 0.0).unwrap();
        let p = make_power_law_policy(1.0, 1.0, 0.25)
            .unwrap()
            .with_delta_star_override(1.0)
            .unwrap();
        for &(x, y) in &[(0.0, 0.0), (1e9, -3.0), (-7.0, 2e5)] {
            let c = truncated_coeffs(&model, &p, 0.01, &[x], &[y]).unwrap();
            assert_eq!((c.drift[0], c.diffusion[0]), (0.0, 0.0));
        }
    }

    #[test]
    fn non_finite_coefficient_reported() {
        let model = SddeModel::scalar("log", 1.0, |x, _| x.ln(), |_, _| 0.0).unwrap();
        let p = make_power_law_policy(1.0, 1.0, 0.25)
            .unwrap()
            .with_delta_star_override(1.0)
            .unwrap();
        match truncated_coeffs(&model, &p, 0.01, &[-1.0], &[0.0]) {
            Err(Error::NonFinite { x, .. }) => assert_eq!(x, vec![-1.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn radius_strictly_decreasing_in_step() {
        let p = make_power_law_policy(3.0, 3.0, 0.25)
            .unwrap()
            .with_delta_star_override(1.0)
            .unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let delta = 10f64.powf(-8.0 + 8.0 * i as f64 / 199.0);
            let r = p.truncation_radius(delta).unwrap();
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn mu_inverse_roundtrip() {
        for &(a, power) in &[(3.0, 3.0), (1.0, 1.0), (0.2, 2.5), (17.0, 4.0)] {
            let p = make_power_law_policy(a, power, 0.1).unwrap();
            let mut prev = -1.0;
            for i in 0..500 {
                let r = i as f64 * 0.05;
                let mu = p.mu(r);
                assert!(mu > prev);
                prev = mu;
                let v = 1e-6 + i as f64 * 3.7;
                assert!((p.mu(p.mu_inv(v)) - v).abs() <= 1e-9 * v);
            }
        }
    }

    proptest! {
        #[test]
        fn projection_idempotent(x in prop::collection::vec(-1e6f64..1e6, 1..5), r in 1e-3f64..1e3) {
            let once = pi_delta(&x, r);
            let twice = pi_delta(&once, r);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn projection_norm_is_min(x in prop::collection::vec(-1e6f64..1e6, 1..5), r in 1e-3f64..1e3) {
            let p = pi_delta(&x, r);
            let expected = norm(&x).min(r);
            prop_assert!((norm(&p) - expected).abs() <= 4.0 * f64::EPSILON * expected.max(1e-300));
            // Direction is preserved.
            for (a, b) in p.iter().zip(&x) {
                prop_assert!(a * b >= 0.0);
            }
        }
    }
}

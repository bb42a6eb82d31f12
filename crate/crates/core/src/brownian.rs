//! Brownian increments on a fine lattice.
//!
//! Increments are drawn once at the finest resolution from a ChaCha stream
//! keyed by `(master_seed, path_index)` and every coarser grid is obtained
//! by summing blocks of fine increments. All step sizes in an experiment
//! therefore see the same Brownian path, and a path can be regenerated on
//! any thread in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::SddeModel;

/// Number of whole delay intervals in `[0, horizon]`.
pub fn delay_intervals(tau: f64, horizon: f64) -> Result<usize> {
    let ratio = horizon / tau;
    let rounded = ratio.round();
    if !(tau > 0.0 && horizon > 0.0)
        || !ratio.is_finite()
        || rounded < 1.0
        || (ratio - rounded).abs() > 1e-9 * rounded
    {
        return Err(Error::HorizonNotMultiple { horizon, tau });
    }
    Ok(rounded as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianLattice {
    fine_steps_per_delay: usize,
    n_fine_steps: usize,
    noise_dim: usize,
    fine_delta: f64,
    /// Row-major `n_fine_steps x noise_dim`.
    increments: Vec<f64>,
    master_seed: u64,
    path_index: u64,
}

/// Draws `(horizon / tau) * m_ref` i.i.d. `N(0, tau / m_ref)` increments per
/// noise coordinate.
pub fn generate_lattice(
    model: &SddeModel,
    horizon: f64,
    m_ref: usize,
    master_seed: u64,
    path_index: u64,
) -> Result<BrownianLattice> {
    BrownianLattice::generate(
        model.delay(),
        model.noise_dim(),
        horizon,
        m_ref,
        master_seed,
        path_index,
    )
}

impl BrownianLattice {
    pub fn generate(
        tau: f64,
        noise_dim: usize,
        horizon: f64,
        m_ref: usize,
        master_seed: u64,
        path_index: u64,
    ) -> Result<Self> {
        if m_ref == 0 {
            return Err(Error::out_of_range("m_ref", 0.0, "[1, inf)"));
        }
        if noise_dim == 0 {
            return Err(Error::out_of_range("noise_dim", 0.0, "[1, inf)"));
        }
        let intervals = delay_intervals(tau, horizon)?;
        let n_fine_steps = intervals * m_ref;
        let fine_delta = tau / m_ref as f64;
        let sd = fine_delta.sqrt();

        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(path_index);
        let increments = (0..n_fine_steps * noise_dim)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();

        Ok(BrownianLattice {
            fine_steps_per_delay: m_ref,
            n_fine_steps,
            noise_dim,
            fine_delta,
            increments,
            master_seed,
            path_index,
        })
    }

    /// Builds a lattice from explicit increments (row-major `steps x noise_dim`).
    pub fn from_increments(
        tau: f64,
        fine_steps_per_delay: usize,
        noise_dim: usize,
        increments: Vec<f64>,
    ) -> Result<Self> {
        if fine_steps_per_delay == 0 || noise_dim == 0 {
            return Err(Error::InvalidPlan(
                "lattice needs at least one step per delay and one noise coordinate".into(),
            ));
        }
        if !(tau > 0.0) {
            return Err(Error::out_of_range("tau", tau, "(0, inf)"));
        }
        let block = fine_steps_per_delay * noise_dim;
        if increments.is_empty() || !increments.len().is_multiple_of(block) {
            return Err(Error::LengthMismatch {
                what: "increments (whole delay intervals)",
                expected: block * (increments.len() / block).max(1),
                actual: increments.len(),
            });
        }
        Ok(BrownianLattice {
            fine_steps_per_delay,
            n_fine_steps: increments.len() / noise_dim,
            noise_dim,
            fine_delta: tau / fine_steps_per_delay as f64,
            increments,
            master_seed: 0,
            path_index: 0,
        })
    }

    pub fn fine_steps_per_delay(&self) -> usize {
        self.fine_steps_per_delay
    }

    pub fn n_fine_steps(&self) -> usize {
        self.n_fine_steps
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn fine_delta(&self) -> f64 {
        self.fine_delta
    }

    pub fn seed_path(&self) -> (u64, u64) {
        (self.master_seed, self.path_index)
    }

    /// Row-major `n_fine_steps x noise_dim`.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.noise_dim..(step + 1) * self.noise_dim]
    }

    /// Sums blocks of `factor` fine increments.
    ///
    /// Each block is reduced by recursive halving while its length is even
    /// and left to right otherwise, so coarsening twice by 2 is bitwise
    /// identical to coarsening once by 4.
    pub fn coarsen(&self, factor: usize) -> Result<Vec<f64>> {
        coarsen_increments(&self.increments, self.noise_dim, factor)
    }

    /// `B` at fine index `fine_index` (prefix sum of increments, `B(0) = 0`).
    pub fn brownian_value(&self, fine_index: usize) -> Result<Vec<f64>> {
        if fine_index > self.n_fine_steps {
            return Err(Error::IndexOutOfRange {
                index: fine_index as i64,
                lo: 0,
                hi: self.n_fine_steps as i64,
            });
        }
        let mut b = vec![0.0; self.noise_dim];
        for step in 0..fine_index {
            for (acc, v) in b.iter_mut().zip(self.increment(step)) {
                *acc += v;
            }
        }
        Ok(b)
    }

    /// `true` when some coordinate's sample mean exceeds
    /// `5 sqrt(fine_delta / n_fine_steps)`; diagnostic only.
    pub fn mean_flagged(&self) -> bool {
        let limit = 5.0 * (self.fine_delta / self.n_fine_steps as f64).sqrt();
        (0..self.noise_dim).any(|j| {
            let mean = (0..self.n_fine_steps)
                .map(|s| self.increments[s * self.noise_dim + j])
                .sum::<f64>()
                / self.n_fine_steps as f64;
            mean.abs() > limit
        })
    }

    /// CSV with header `step,t,dB_1..dB_m`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,t");
        for j in 1..=self.noise_dim {
            out.push_str(&format!(",dB_{j}"));
        }
        out.push('\n');
        for s in 0..self.n_fine_steps {
            out.push_str(&format!("{s},{}", s as f64 * self.fine_delta));
            for v in self.increment(s) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn coarsen(lattice: &BrownianLattice, factor: usize) -> Result<Vec<f64>> {
    lattice.coarsen(factor)
}

pub fn brownian_value(lattice: &BrownianLattice, fine_index: usize) -> Result<Vec<f64>> {
    lattice.brownian_value(fine_index)
}

/// Coarsens row-major `steps x noise_dim` increments by `factor`.
pub fn coarsen_increments(increments: &[f64], noise_dim: usize, factor: usize) -> Result<Vec<f64>> {
    let steps = increments.len() / noise_dim.max(1);
    if factor == 0 || noise_dim == 0 || !steps.is_multiple_of(factor) {
        return Err(Error::NotDivisible { factor, len: steps });
    }
    let coarse_steps = steps / factor;
    let mut out = vec![0.0; coarse_steps * noise_dim];
    let mut column = vec![0.0; factor];
    for j in 0..coarse_steps {
        for d in 0..noise_dim {
            for (i, c) in column.iter_mut().enumerate() {
                *c = increments[(j * factor + i) * noise_dim + d];
            }
            out[j * noise_dim + d] = block_sum(&column);
        }
    }
    Ok(out)
}

fn block_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n % 2 == 0 => block_sum(&v[..n / 2]) + block_sum(&v[n / 2..]),
        _ => v.iter().fold(0.0, |acc, x| acc + x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_increments() {
        let l = BrownianLattice::generate(1.0, 1, 2.0, 4, 7, 0).unwrap();
        assert_eq!(l.n_fine_steps(), 8);
        assert_eq!(l.increments().len(), 8);
        assert_eq!(l.fine_delta(), 0.25);
        let l = BrownianLattice::generate(0.5, 3, 2.0, 4, 7, 0).unwrap();
        assert_eq!(l.n_fine_steps(), 16);
        assert_eq!(l.increments().len(), 48);
    }

    #[test]
    fn regenerates_bitwise() {
        let a = BrownianLattice::generate(1.0, 2, 3.0, 64, 1234, 17).unwrap();
        let b = BrownianLattice::generate(1.0, 2, 3.0, 64, 1234, 17).unwrap();
        assert_eq!(a, b);
        let c = BrownianLattice::generate(1.0, 2, 3.0, 64, 1234, 18).unwrap();
        assert_ne!(a.increments(), c.increments());
        let d = BrownianLattice::generate(1.0, 2, 3.0, 64, 1235, 17).unwrap();
        assert_ne!(a.increments(), d.increments());
        assert_eq!(a.seed_path(), (1234, 17));
    }

    #[test]
    fn rejects_fractional_horizon() {
        assert!(matches!(
            BrownianLattice::generate(1.0, 1, 1.5, 4, 0, 0),
            Err(Error::HorizonNotMultiple { .. })
        ));
        assert!(BrownianLattice::generate(1.0, 1, 0.0, 4, 0, 0).is_err());
        assert!(BrownianLattice::generate(1.0, 1, 1.0, 0, 0, 0).is_err());
        assert_eq!(delay_intervals(0.1, 0.3).unwrap(), 3);
    }

    fn fixed(incs: Vec<f64>) -> BrownianLattice {
        let n = incs.len();
        BrownianLattice::from_increments(1.0, n, 1, incs).unwrap()
    }

    #[test]
    fn coarsen_examples() {
        let l = fixed(vec![0.1, -0.2, 0.3, 0.05]);
        let c = l.coarsen(2).unwrap();
        assert!((c[0] + 0.1).abs() < 1e-15 && (c[1] - 0.35).abs() < 1e-15);
        assert_eq!(l.coarsen(1).unwrap(), l.increments());
        assert!(matches!(l.coarsen(3), Err(Error::NotDivisible { factor: 3, len: 4 })));
        assert!(l.coarsen(0).is_err());
    }

    #[test]
    fn brownian_value_examples() {
        let l = fixed(vec![0.1, -0.2]);
        assert_eq!(l.brownian_value(0).unwrap(), vec![0.0]);
        assert!((l.brownian_value(2).unwrap()[0] + 0.1).abs() < 1e-15);
        assert!(l.brownian_value(3).is_err());
    }

    #[test]
    fn coarsening_telescopes_bitwise() {
        let l = BrownianLattice::generate(1.0, 2, 2.0, 1024, 99, 3).unwrap();
        let by4 = l.coarsen(4).unwrap();
        let twice = coarsen_increments(&l.coarsen(2).unwrap(), 2, 2).unwrap();
        assert_eq!(by4, twice);
        let by64 = l.coarsen(64).unwrap();
        let chain = [2, 2, 2, 2, 2, 2]
            .iter()
            .try_fold(l.increments().to_vec(), |acc, f| coarsen_increments(&acc, 2, *f))
            .unwrap();
        assert_eq!(by64, chain);
        let mixed = coarsen_increments(&l.coarsen(8).unwrap(), 2, 8).unwrap();
        assert_eq!(by64, mixed);
    }

    #[test]
    fn coarse_sum_matches_endpoint() {
        let l = BrownianLattice::generate(1.0, 1, 4.0, 256, 5, 0).unwrap();
        let end = l.brownian_value(l.n_fine_steps()).unwrap()[0];
        for factor in [1, 2, 4, 8, 16, 32, 64, 256] {
            let total: f64 = l.coarsen(factor).unwrap().iter().sum();
            assert!((total - end).abs() < 1e-12, "factor {factor}");
        }
    }

    #[test]
    fn coarse_variance_scales_with_factor() {
        // 10^4 paths, factor 8 at fine delta 1/64: Var = 1/8.
        let factor = 8;
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|p| BrownianLattice::generate(1.0, 1, 1.0, 64, 2024, p).unwrap().coarsen(factor).unwrap()[3])
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = factor as f64 / 64.0;
        // Standard error of the sample variance of a Gaussian: sigma^2 sqrt(2/(n-1)).
        let se = target * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "var {var} target {target}");
    }

    #[test]
    fn mean_diagnostic() {
        let l = BrownianLattice::generate(1.0, 1, 1.0, 4096, 11, 0).unwrap();
        assert!(!l.mean_flagged());
        let biased = fixed(vec![1.0; 16]);
        assert!(biased.mean_flagged());
    }

    #[test]
    fn csv_dump() {
        let l = fixed(vec![0.5, -0.25]);
        assert_eq!(l.to_csv(), "step,t,dB_1\n0,0,0.5\n1,0.5,-0.25\n");
    }

    proptest! {
        #[test]
        fn telescoping_power_of_two(incs in prop::collection::vec(-1.0f64..1.0, 64), a in 0u32..4, b in 0u32..3) {
            let f1 = 1usize << a;
            let f2 = 1usize << b;
            let once = coarsen_increments(&incs, 1, f1 * f2).unwrap();
            let chained = coarsen_increments(&coarsen_increments(&incs, 1, f1).unwrap(), 1, f2).unwrap();
            prop_assert_eq!(once, chained);
        }
    }
}

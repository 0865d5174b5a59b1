//! Discretized Gaussian construction and closed-form distance bounds.
//!
//! Each `*_bound` evaluator is a bare formula; the test suites pair every
//! one of them with the convolution oracle and assert domination.

use crate::pmf_core::PMFTable;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, sigma2: f64) -> Self {
        assert!(sigma2 > 0.0, "sigma2 must be positive");
        GaussianParams { mu, sigma2 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Moment data for the Gaussian-approximation bound: `beta` is the summed
/// third central absolute moments and `shift_delta` the largest
/// leave-one-out shift distance of the sum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mu: f64,
    pub sigma2: f64,
    pub beta: f64,
    pub shift_delta: f64,
}

fn phi(t: f64) -> f64 {
    0.5 * (1.0 + libm::erf(t / std::f64::consts::SQRT_2))
}

/// Integer pmf of the discretized Gaussian: CDF differences at half-integer
/// cut points, over a window wide enough for the requested tail.
pub fn disc_gauss_pmf(g: &GaussianParams, tail_target: f64) -> PMFTable {
    assert!(tail_target > 0.0 && tail_target < 0.5);
    let sigma = g.sigma();
    let radius = (sigma * (2.0 * (2.0 / tail_target).ln()).sqrt()).ceil() as i64 + 2;
    let center = g.mu.round() as i64;
    let lo = center - radius;
    let hi = center + radius;
    let mut probs = Vec::with_capacity((hi - lo + 1) as usize);
    let mut mass = 0.0;
    for x in lo..=hi {
        let p = (phi((x as f64 + 0.5 - g.mu) / sigma) - phi((x as f64 - 0.5 - g.mu) / sigma))
            .max(0.0);
        probs.push(p);
        mass += p;
    }
    let tail = (1.0 - mass).max(0.0) + 1e-13;
    PMFTable { lo, probs, tail_bound: tail.min(0.499) }
}

/// Geometric (failure-count) pmf table from the success probability:
/// `pmf(x) = p (1-p)^x` on the nonnegative integers, with the exact
/// remaining geometric mass as the tail bound. `p = 1` is the point mass
/// at zero.
pub fn geometric_table_from_p(p: f64, tail_target: f64) -> PMFTable {
    assert!(p > 0.0 && p <= 1.0);
    assert!(tail_target > 0.0 && tail_target < 0.5);
    if p == 1.0 {
        return PMFTable::point_mass(0);
    }
    let q = 1.0 - p;
    let mut probs = Vec::new();
    let mut w = p;
    let mut remaining = 1.0;
    loop {
        probs.push(w);
        remaining -= w;
        if remaining <= tail_target {
            break;
        }
        w *= q;
    }
    PMFTable { lo: 0, probs, tail_bound: remaining.max(0.0) }
}

/// Poisson pmf table with exact remaining-mass tail bound.
pub fn poisson_table(lambda: f64, tail_target: f64) -> PMFTable {
    assert!(lambda > 0.0 && lambda < 700.0);
    assert!(tail_target > 0.0 && tail_target < 0.5);
    let mut probs = Vec::new();
    let mut p = (-lambda).exp();
    let mut cum = 0.0;
    let mut x = 0u64;
    loop {
        probs.push(p);
        cum += p;
        if 1.0 - cum <= tail_target && x as f64 > lambda {
            break;
        }
        x += 1;
        p *= lambda / x as f64;
        if x > 100_000 {
            break;
        }
    }
    PMFTable { lo: 0, probs, tail_bound: (1.0 - cum).max(0.0) }
}

/// TV bound between two discretized Gaussians:
/// `(|mu1 - mu2|/sigma_min + (sigma_max^2 - sigma_min^2)/sigma_min^2) / 2`.
pub fn tv_gauss_bound(g1: &GaussianParams, g2: &GaussianParams) -> f64 {
    let (a, b) = if g1.sigma2 <= g2.sigma2 { (g1, g2) } else { (g2, g1) };
    0.5 * ((a.mu - b.mu).abs() / a.sigma() + (b.sigma2 - a.sigma2) / a.sigma2)
}

/// TV bound between two Poissons: `sinh(|l1 - l2|)`.
pub fn tv_poisson_bound(l1: f64, l2: f64) -> f64 {
    let d = (l1 - l2).abs();
    (d.exp() - (-d).exp()) / 2.0
}

/// Shift-distance bound for a sum from its per-term shift distances:
/// `sqrt(2/pi) / sqrt(1/4 + sum_i (1 - d_i))`, clamped to [0, 1].
pub fn shift_distance_bound(per_term_shift: &[f64]) -> f64 {
    let s: f64 = per_term_shift.iter().map(|d| 1.0 - d).sum();
    let raw = (2.0 / std::f64::consts::PI).sqrt() / (0.25 + s).sqrt();
    raw.min(1.0)
}

/// Gaussian-approximation bound for a sum with the given moment summary:
/// `delta (1 + 3 beta / (2 sigma^2))
///  + (1/sigma) (1/(2 sqrt(2 pi)) + (5 + 3 sqrt(pi/8)) beta / sigma^2)`.
pub fn berry_esseen_bound(m: &MomentSummary) -> f64 {
    let sigma = m.sigma2.sqrt();
    let ratio = m.beta / m.sigma2;
    m.shift_delta * (1.0 + 1.5 * ratio)
        + (1.0 / sigma)
            * (1.0 / (2.0 * (2.0 * std::f64::consts::PI).sqrt())
                + (5.0 + 3.0 * (std::f64::consts::PI / 8.0).sqrt()) * ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmf_core::{self, modes_of, tv_distance};

    #[test]
    fn disc_gauss_standard_center_value() {
        let t = disc_gauss_pmf(&GaussianParams::new(0.0, 1.0), 1e-9);
        // Phi(1/2) - Phi(-1/2)
        assert!((t.at(0) - 0.3829249225480263).abs() < 1e-6, "{}", t.at(0));
        let m = pmf_core::moments(&t);
        assert!(m.mean.abs() < 1e-9);
        assert!((t.window_mass() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn disc_gauss_is_unimodal_and_integer_mean_symmetric() {
        for (mu, s2) in [(3.0, 4.0), (-7.0, 0.8), (12.0, 25.0)] {
            let t = disc_gauss_pmf(&GaussianParams::new(mu, s2), 1e-10);
            let (_, uni) = modes_of(&t);
            assert!(uni);
            if mu.fract() == 0.0 {
                assert!((pmf_core::moments(&t).mean - mu).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gauss_bound_plugin_value() {
        let b = tv_gauss_bound(
            &GaussianParams::new(0.0, 100.0),
            &GaussianParams::new(1.0, 100.0),
        );
        assert!((b - 0.05).abs() < 1e-15);
        let same = tv_gauss_bound(
            &GaussianParams::new(2.0, 3.0),
            &GaussianParams::new(2.0, 3.0),
        );
        assert_eq!(same, 0.0);
    }

    #[test]
    fn gauss_bound_dominates_oracle() {
        let g1 = GaussianParams::new(4.0, 9.0);
        let g2 = GaussianParams::new(4.7, 11.0);
        let d = tv_distance(&disc_gauss_pmf(&g1, 1e-10), &disc_gauss_pmf(&g2, 1e-10));
        assert!(tv_gauss_bound(&g1, &g2) >= d.lower());
    }

    #[test]
    fn poisson_bound_values_and_domination() {
        assert_eq!(tv_poisson_bound(1.0, 1.0), 0.0);
        assert!((tv_poisson_bound(1.0, 1.1) - 0.1f64.sinh()).abs() < 1e-15);
        let d = tv_distance(&poisson_table(2.0, 1e-10), &poisson_table(2.3, 1e-10));
        assert!(tv_poisson_bound(2.0, 2.3) >= d.lower());
    }

    #[test]
    fn shift_bound_values() {
        let empty = shift_distance_bound(&[]);
        assert_eq!(empty, 1.0); // raw 1.5958 clamps to 1
        let b = shift_distance_bound(&vec![0.5; 100]);
        assert!((b - (2.0 / std::f64::consts::PI).sqrt() / 50.25f64.sqrt()).abs() < 1e-12);
        assert!((b - 0.11256).abs() < 1e-4);
    }

    #[test]
    fn berry_esseen_plugin_value() {
        let m = MomentSummary { mu: 0.0, sigma2: 1.0, beta: 0.0, shift_delta: 0.0 };
        let b = berry_esseen_bound(&m);
        assert!((b - 1.0 / (2.0 * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-12);
        assert!((b - 0.19947).abs() < 1e-4);
        let wide = MomentSummary { mu: 0.0, sigma2: 1e12, beta: 0.0, shift_delta: 0.0 };
        assert!(berry_esseen_bound(&wide) < 1e-5);
    }

    #[test]
    fn poisson_table_moments() {
        let t = poisson_table(3.5, 1e-12);
        let m = pmf_core::moments(&t);
        assert!((m.mean - 3.5).abs() < 1e-6);
        assert!((m.variance - 3.5).abs() < 1e-6);
    }
}

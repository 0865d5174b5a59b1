//! Ready-made families used by tests, validators and the CLI.
//!
//! Constructors compute the structural constants (B, gamma, Lambda) from
//! direct numeric sums over generous windows and pad them with safety
//! margins, so the resulting specs survive the numeric assumption verifier.

use crate::config::Constants;
use crate::expfam::{CatalogStat, ExpFamilySpec, StatCoord, SufficientStats, Support};
use crate::geometry::{BaseRegion, ConeDescription};

struct RawStats {
    variance: f64,
    fourth_central: f64,
}

/// Moments of the normalized weights `exp(-g(x))` over `[lo, hi]`.
fn raw_stats(g: impl Fn(i64) -> f64, lo: i64, hi: i64) -> RawStats {
    let mut z = 0.0;
    let mut mean = 0.0;
    let gmin = (lo..=hi).map(&g).fold(f64::INFINITY, f64::min);
    for x in lo..=hi {
        let w = (-(g(x) - gmin)).exp();
        z += w;
        mean += x as f64 * w;
    }
    mean /= z;
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in lo..=hi {
        let w = (-(g(x) - gmin)).exp() / z;
        let d = x as f64 - mean;
        m2 += d * d * w;
        m4 += d * d * d * d * w;
    }
    RawStats { variance: m2, fourth_central: m4 }
}

/// Window wide enough that the geometric-decay remainder is negligible.
fn decay_window(g: &impl Fn(i64) -> f64, start: i64) -> i64 {
    let mut hi = start + 64;
    let g0 = g(start);
    while (-(g(hi) - g0)).exp() * ((hi - start) as f64).powi(5) > 1e-13 && hi < 4_000_000 {
        hi *= 2;
    }
    hi
}

/// Geometric family: `T(x) = x` on the nonnegative integers, pmf
/// `(1 - e^{-a}) e^{-a x}`, natural parameters in `[a_lo, a_hi]`.
pub fn geometric_family(a_lo: f64, a_hi: f64) -> ExpFamilySpec {
    geometric_family_with(a_lo, a_hi, Constants::default())
}

pub fn geometric_family_with(a_lo: f64, a_hi: f64, constants: Constants) -> ExpFamilySpec {
    assert!(a_lo > 0.0 && a_hi > a_lo);
    let t = SufficientStats::new(vec![StatCoord::Named(CatalogStat::Identity)], Support::NaturalsWithZero)
        .unwrap();
    let cone = ConeDescription::new(vec![vec![1.0]], vec![vec![1.0]]).unwrap();
    let rho = a_lo;

    // B over the whole rho-cone [rho, inf): the fourth moment is largest at
    // the smallest parameter. Scan down to rho and out past a_hi.
    let stats_at = |a: f64| {
        let g = move |x: i64| a * x as f64;
        let hi = decay_window(&g, 0);
        raw_stats(g, 0, hi)
    };
    let mut b = 0.0f64;
    let mut lambda = 0.0f64;
    for i in 0..=200 {
        let a = rho + (a_hi.max(rho + 30.0) - rho) * i as f64 / 200.0;
        let s = stats_at(a);
        b = b.max(s.fourth_central);
        lambda = lambda.max(s.variance); // Cov(T) = Var(W) for T(x) = x
    }
    let gamma = stats_at(a_hi).variance * 0.95;
    ExpFamilySpec::new(
        t,
        cone,
        BaseRegion::Box { lo: vec![a_lo], hi: vec![a_hi] },
        rho,
        0.5,
        b * 1.1,
        gamma,
        lambda * 1.1,
        None,
        constants,
    )
    .unwrap()
}

/// Zeta family: `T(x) = ln x` on the positive integers, pmf `x^{-a}/zeta(a)`.
/// Requires `a_lo > 5` so the fourth moment stays finite on the cone.
pub fn zeta_family(a_lo: f64, a_hi: f64) -> ExpFamilySpec {
    assert!(a_lo > 5.0 && a_hi > a_lo);
    let t = SufficientStats::new(vec![StatCoord::Named(CatalogStat::Log)], Support::Naturals).unwrap();
    let cone = ConeDescription::new(vec![vec![1.0]], vec![vec![1.0]]).unwrap();
    let rho = a_lo;

    let n_win = 2_000_000i64;
    let stats_at = |a: f64| raw_stats(move |x: i64| a * (x as f64).ln(), 1, n_win);
    // Integral remainder of the fourth-moment sum beyond the window.
    let m4_tail = |a: f64| (n_win as f64).powf(5.0 - a) / (a - 5.0);

    let worst = stats_at(a_lo);
    let b = (worst.fourth_central + m4_tail(a_lo)) * 1.1;
    let gamma = stats_at(a_hi).variance * 0.9;

    // Cov(T) = Var(ln W), largest at the smallest parameter.
    let lambda = {
        let a = a_lo;
        let g = |x: i64| a * (x as f64).ln();
        let mut z = 0.0;
        let mut m = 0.0;
        for x in 1..=n_win {
            let w = (-g(x)).exp();
            z += w;
            m += (x as f64).ln() * w;
        }
        m /= z;
        let mut v = 0.0;
        for x in 1..=n_win {
            let w = (-g(x)).exp() / z;
            let d = (x as f64).ln() - m;
            v += d * d * w;
        }
        v * 1.2
    };
    ExpFamilySpec::new(
        t,
        cone,
        BaseRegion::Box { lo: vec![a_lo], hi: vec![a_hi] },
        rho,
        1.0,
        b,
        gamma,
        lambda,
        None,
        Constants::default(),
    )
    .unwrap()
}

/// Discrete-Gaussian-like family: `T(x) = (x, x^2)` on the integers with
/// base box `[-half_width, half_width] x [a2_lo, a2_hi]`. Requires
/// `half_width <= a2_lo`, which keeps every mode in `{-1, 0, 1}`.
pub fn disc_gaussian_family(half_width: f64, a2_lo: f64, a2_hi: f64) -> ExpFamilySpec {
    assert!(half_width > 0.0 && half_width <= a2_lo && a2_hi > a2_lo);
    let t = SufficientStats::new(
        vec![StatCoord::Named(CatalogStat::Identity), StatCoord::Named(CatalogStat::Square)],
        Support::Integers,
    )
    .unwrap();
    let (c, lo) = (half_width, a2_lo);
    let n = (lo * lo + c * c).sqrt();
    let cone = ConeDescription::new(
        vec![vec![-lo / n, c / n], vec![lo / n, c / n]],
        vec![vec![-c / n, lo / n], vec![c / n, lo / n]],
    )
    .unwrap();
    // Every cone point of norm >= rho has a2 >= a2_lo.
    let rho = n;

    let stats_at = |a1: f64, a2: f64| {
        let g = move |x: i64| a1 * x as f64 + a2 * (x as f64) * (x as f64);
        raw_stats(g, -200, 200)
    };
    let mut b = 0.0f64;
    let mut gamma = f64::INFINITY;
    let mut lambda = 0.0f64;
    for i in 0..=40 {
        let a1 = -c + 2.0 * c * i as f64 / 40.0;
        for j in 0..=20 {
            let a2 = a2_lo + (a2_hi - a2_lo) * j as f64 / 20.0;
            let s = stats_at(a1, a2);
            b = b.max(s.fourth_central);
            if s.variance < gamma {
                gamma = s.variance;
            }
        }
        // Spectral bound along the low-a2 boundary of the hull, where the
        // covariance of (W, W^2) is largest.
        let s = stats_at(a1, a2_lo);
        let g = move |x: i64| a1 * x as f64 + a2_lo * (x as f64) * (x as f64);
        let mut z = 0.0;
        let (mut ex, mut ex2) = (0.0, 0.0);
        for x in -200..=200i64 {
            let w = (-(g(x) - g(0))).exp();
            z += w;
            ex += x as f64 * w;
            ex2 += (x as f64) * (x as f64) * w;
        }
        ex /= z;
        ex2 /= z;
        let (mut v11, mut v12, mut v22) = (0.0, 0.0, 0.0);
        for x in -200..=200i64 {
            let w = (-(g(x) - g(0))).exp() / z;
            let d1 = x as f64 - ex;
            let d2 = (x as f64) * (x as f64) - ex2;
            v11 += d1 * d1 * w;
            v12 += d1 * d2 * w;
            v22 += d2 * d2 * w;
        }
        // Largest eigenvalue of the symmetric 2x2 covariance.
        let tr = v11 + v22;
        let det = v11 * v22 - v12 * v12;
        let eig = 0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt());
        lambda = lambda.max(eig);
        let _ = s;
    }
    ExpFamilySpec::new(
        t,
        cone,
        BaseRegion::Box { lo: vec![-c, a2_lo], hi: vec![c, a2_hi] },
        rho,
        1.0,
        b * 1.1,
        gamma * 0.95,
        lambda * 1.2,
        None,
        Constants::default(),
    )
    .unwrap()
}

//! Exact finite-support pmf arithmetic.
//!
//! [`PMFTable`] is the currency every other module is validated against: a
//! truncated integer pmf carrying a certified bound on the mass outside its
//! window. All comparisons downstream report `(value, slack)` pairs so tests
//! can assert interval containment instead of exact equality.

use crate::expfam::{self, ExpFamilySpec, ParamVector};
use crate::rng::SplitRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PmfError {
    #[error("convolution window of {needed} entries exceeds cap {cap}")]
    WindowOverflow { needed: usize, cap: usize },
    #[error("invalid pmf table: {0}")]
    InvalidTable(String),
    #[error("parametric term requires a family spec")]
    MissingFamily,
    #[error(transparent)]
    ExpFam(#[from] expfam::ExpFamError),
}

/// Truncated integer pmf with a certified tail-mass bound.
///
/// Window entries index `x = lo .. lo + probs.len() - 1`; `tail_bound` is an
/// upper bound on the true mass outside the window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PMFTable {
    pub lo: i64,
    pub probs: Vec<f64>,
    pub tail_bound: f64,
}

impl PMFTable {
    pub fn new(lo: i64, probs: Vec<f64>, tail_bound: f64) -> Result<Self, PmfError> {
        if probs.is_empty() {
            return Err(PmfError::InvalidTable("empty window".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(PmfError::InvalidTable("negative or non-finite entry".into()));
        }
        if !(0.0..0.5).contains(&tail_bound) {
            return Err(PmfError::InvalidTable(format!(
                "tail bound {tail_bound} outside [0, 0.5)"
            )));
        }
        let total: f64 = probs.iter().sum();
        if total < 1.0 - tail_bound - 1e-12 || total > 1.0 + 1e-12 {
            return Err(PmfError::InvalidTable(format!(
                "window mass {total} inconsistent with tail bound {tail_bound}"
            )));
        }
        Ok(PMFTable { lo, probs, tail_bound })
    }

    pub fn point_mass(x: i64) -> Self {
        PMFTable { lo: x, probs: vec![1.0], tail_bound: 0.0 }
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.probs.len() as i64 - 1
    }

    /// Window entry at `x`; points outside the window read zero.
    pub fn at(&self, x: i64) -> f64 {
        if x < self.lo || x > self.hi() {
            0.0
        } else {
            self.probs[(x - self.lo) as usize]
        }
    }

    pub fn window_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// A `(value, slack)` pair; the true quantity lies in
/// `[max(0, value - slack), value + slack]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TvEstimate {
    pub value: f64,
    pub slack: f64,
}

impl TvEstimate {
    pub fn lower(&self) -> f64 {
        (self.value - self.slack).max(0.0)
    }

    pub fn upper(&self) -> f64 {
        self.value + self.slack
    }
}

/// One term of a sum: either a family member by parameter or a raw table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Term {
    Param(ParamVector),
    Table(PMFTable),
}

/// An order-`n` sum of independent integer random variables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SIIRVSpec {
    pub terms: Vec<Term>,
    pub n: usize,
}

impl SIIRVSpec {
    pub fn new(terms: Vec<Term>, n: usize) -> Result<Self, PmfError> {
        if terms.is_empty() || terms.len() > n {
            return Err(PmfError::InvalidTable(format!(
                "term count {} outside 1..={n}",
                terms.len()
            )));
        }
        Ok(SIIRVSpec { terms, n })
    }

    pub fn from_params(params: Vec<ParamVector>, n: usize) -> Result<Self, PmfError> {
        SIIRVSpec::new(params.into_iter().map(Term::Param).collect(), n)
    }
}

/// Total variation over the union window, with the tail slack alongside.
///
/// True d_TV lies within `slack = (p.tail_bound + q.tail_bound) / 2` of the
/// returned value.
pub fn tv_distance(p: &PMFTable, q: &PMFTable) -> TvEstimate {
    let lo = p.lo.min(q.lo);
    let hi = p.hi().max(q.hi());
    let mut acc = 0.0;
    for x in lo..=hi {
        acc += (p.at(x) - q.at(x)).abs();
    }
    TvEstimate {
        value: 0.5 * acc,
        slack: 0.5 * (p.tail_bound + q.tail_bound),
    }
}

/// Distribution of `X + Y` for independent `X ~ p`, `Y ~ q`.
///
/// The result window is trimmed at both ends until the trimmed mass reaches
/// the configured threshold; trimmed mass is folded into the tail bound.
pub fn convolve(p: &PMFTable, q: &PMFTable, cap: usize, trim_mass: f64) -> Result<PMFTable, PmfError> {
    let needed = p.probs.len() + q.probs.len() - 1;
    if needed > cap {
        return Err(PmfError::WindowOverflow { needed, cap });
    }
    let mut out = vec![0.0; needed];
    for (i, &pi) in p.probs.iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        for (j, &qj) in q.probs.iter().enumerate() {
            out[i + j] += pi * qj;
        }
    }
    let mut lo = p.lo + q.lo;
    let mut tail = p.tail_bound + q.tail_bound;

    // Trim each end while the cumulative trimmed mass stays below budget.
    let mut start = 0usize;
    let mut end = out.len();
    let mut trimmed = 0.0;
    while end - start > 1 && trimmed + out[start] <= trim_mass {
        trimmed += out[start];
        start += 1;
    }
    while end - start > 1 && trimmed + out[end - 1] <= trim_mass {
        trimmed += out[end - 1];
        end -= 1;
    }
    lo += start as i64;
    tail += trimmed;
    Ok(PMFTable {
        lo,
        probs: out[start..end].to_vec(),
        tail_bound: tail,
    })
}

/// Iterated convolution of all terms: the oracle for any SIIRV.
///
/// Parametric terms are first materialized through the family engine at the
/// given tail target per term.
pub fn sum_pmf(
    spec: &SIIRVSpec,
    family: Option<&ExpFamilySpec>,
    term_tail: f64,
    cap: usize,
    trim_mass: f64,
) -> Result<PMFTable, PmfError> {
    let mut acc: Option<PMFTable> = None;
    for term in &spec.terms {
        let table = match term {
            Term::Table(t) => t.clone(),
            Term::Param(a) => {
                let fam = family.ok_or(PmfError::MissingFamily)?;
                expfam::pmf_member(fam, a, term_tail)?
            }
        };
        acc = Some(match acc {
            None => table,
            Some(prev) => convolve(&prev, &table, cap, trim_mass)?,
        });
    }
    Ok(acc.expect("non-empty by invariant"))
}

/// Distribution of `X + t`.
pub fn shift(p: &PMFTable, t: i64) -> PMFTable {
    PMFTable {
        lo: p.lo + t,
        probs: p.probs.clone(),
        tail_bound: p.tail_bound,
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub third_central_abs: f64,
    pub fourth_central: f64,
}

/// Window sums; no tail correction. The omission is bounded by
/// `tail_bound * (window radius)^order` per moment.
pub fn moments(p: &PMFTable) -> Moments {
    let total = p.window_mass();
    let mut mean = 0.0;
    for (i, &pi) in p.probs.iter().enumerate() {
        mean += (p.lo + i as i64) as f64 * pi;
    }
    mean /= total;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for (i, &pi) in p.probs.iter().enumerate() {
        let d = (p.lo + i as i64) as f64 - mean;
        m2 += d * d * pi;
        m3 += d * d * d.abs() * pi;
        m4 += d * d * d * d * pi;
    }
    Moments {
        mean,
        variance: m2 / total,
        third_central_abs: m3 / total,
        fourth_central: m4 / total,
    }
}

/// All argmax points plus the monotone-both-sides unimodality flag.
///
/// Comparisons carry an absolute tolerance of 1e-12 so that flat stretches
/// produced by floating-point arithmetic still count as level.
pub fn modes_of(p: &PMFTable) -> (Vec<i64>, bool) {
    const TOL: f64 = 1e-12;
    let max = p.probs.iter().cloned().fold(f64::MIN, f64::max);
    let modes: Vec<i64> = p
        .probs
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= max - TOL)
        .map(|(i, _)| p.lo + i as i64)
        .collect();
    // Non-decreasing up to the first mode, non-increasing after the last.
    let first = (modes[0] - p.lo) as usize;
    let last = (modes[modes.len() - 1] - p.lo) as usize;
    let mut unimodal = true;
    for i in 0..first {
        if p.probs[i] > p.probs[i + 1] + TOL {
            unimodal = false;
        }
    }
    for i in last..p.probs.len() - 1 {
        if p.probs[i] + TOL < p.probs[i + 1] {
            unimodal = false;
        }
    }
    // Interior points between consecutive modes must stay level with them.
    for i in first..last {
        if (p.probs[i] - max).abs() > TOL {
            unimodal = false;
        }
    }
    (modes, unimodal)
}

/// Precomputed inverse-CDF sampler over the window.
///
/// Tail mass is folded away by renormalization, so each draw carries a bias
/// of at most `tail_bound`.
#[derive(Debug, Clone)]
pub struct TableSampler {
    lo: i64,
    cdf: Vec<f64>,
}

impl TableSampler {
    pub fn new(p: &PMFTable) -> Self {
        let total = p.window_mass();
        let mut cdf = Vec::with_capacity(p.probs.len());
        let mut acc = 0.0;
        for &v in &p.probs {
            acc += v / total;
            cdf.push(acc);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        TableSampler { lo: p.lo, cdf }
    }

    pub fn draw(&self, rng: &mut SplitRng) -> i64 {
        let u = rng.uniform();
        let idx = self.cdf.partition_point(|&c| c < u);
        self.lo + idx.min(self.cdf.len() - 1) as i64
    }
}

/// Inverse-CDF draws over the window.
pub fn sample(p: &PMFTable, rng: &mut SplitRng, count: usize) -> Vec<i64> {
    let sampler = TableSampler::new(p);
    (0..count).map(|_| sampler.draw(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn geometric_table(a: f64, tail: f64) -> PMFTable {
        // pmf(x) = (1 - e^-a) e^{-a x} on N0, truncated once the remaining
        // geometric tail drops below `tail`.
        let q = (-a).exp();
        let mut probs = Vec::new();
        let mut mass = 0.0;
        let mut x = 0usize;
        loop {
            let p = (1.0 - q) * q.powi(x as i32);
            probs.push(p);
            mass += p;
            if 1.0 - mass <= tail {
                break;
            }
            x += 1;
        }
        PMFTable { lo: 0, probs, tail_bound: tail }
    }

    const CAP: usize = 1 << 22;
    const TRIM: f64 = 1e-15;

    #[test]
    fn tv_identical_tables_is_zero() {
        let p = geometric_table(0.7, 1e-9);
        let d = tv_distance(&p, &p);
        assert_eq!(d.value, 0.0);
        assert!((d.slack - 1e-9).abs() < 1e-18);
    }

    #[test]
    fn tv_disjoint_point_masses_is_one() {
        let p = PMFTable::point_mass(0);
        let q = PMFTable::point_mass(1);
        let d = tv_distance(&p, &q);
        assert_eq!(d.value, 1.0);
        assert_eq!(d.slack, 0.0);
    }

    #[test]
    fn tv_geometric_pair_matches_closed_form() {
        // d_TV(Geo(ln 2), Geo(ln 3)) by direct summation of the closed forms.
        let p = geometric_table(2.0_f64.ln(), 1e-12);
        let q = geometric_table(3.0_f64.ln(), 1e-12);
        let mut expected = 0.0;
        for x in 0..200 {
            let px = 0.5 * 0.5_f64.powi(x);
            let qx = (2.0 / 3.0) * (1.0 / 3.0_f64).powi(x);
            expected += (px - qx).abs();
        }
        expected *= 0.5;
        let d = tv_distance(&p, &q);
        assert!((d.value - expected).abs() < 1e-9, "{} vs {expected}", d.value);
    }

    #[test]
    fn convolve_point_masses() {
        let p = PMFTable::point_mass(2);
        let q = PMFTable::point_mass(3);
        let r = convolve(&p, &q, CAP, TRIM).unwrap();
        assert_eq!(r.lo, 5);
        assert_eq!(r.probs, vec![1.0]);
    }

    #[test]
    fn convolve_bernoulli_halves() {
        let b = PMFTable::new(0, vec![0.5, 0.5], 0.0).unwrap();
        let r = convolve(&b, &b, CAP, TRIM).unwrap();
        assert_eq!(r.lo, 0);
        for (got, want) in r.probs.iter().zip([0.25, 0.5, 0.25]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn fifty_fold_geometric_matches_negative_binomial_moments() {
        let g = geometric_table(2.0_f64.ln(), 1e-13);
        let mut acc = g.clone();
        for _ in 1..50 {
            acc = convolve(&acc, &g, CAP, TRIM).unwrap();
        }
        let m = moments(&acc);
        // NB(r = 50, p = 1/2): mean r q / p = 50, variance r q / p^2 = 100.
        assert!((m.mean - 50.0).abs() < 1e-6, "mean {}", m.mean);
        assert!((m.variance - 100.0).abs() < 1e-6, "var {}", m.variance);
    }

    #[test]
    fn convolve_overflow_reported() {
        let wide = PMFTable::new(0, vec![1.0 / 3.0; 3], 0.0).unwrap();
        let err = convolve(&wide, &wide, 4, TRIM).unwrap_err();
        assert!(matches!(err, PmfError::WindowOverflow { needed: 5, cap: 4 }));
    }

    #[test]
    fn sum_pmf_single_term_unchanged() {
        let t = geometric_table(1.0, 1e-10);
        let spec = SIIRVSpec::new(vec![Term::Table(t.clone())], 3).unwrap();
        let s = sum_pmf(&spec, None, 1e-12, CAP, TRIM).unwrap();
        assert_eq!(s.lo, t.lo);
        assert_eq!(s.probs, t.probs);
    }

    #[test]
    fn sum_pmf_two_point_masses() {
        let spec = SIIRVSpec::new(
            vec![Term::Table(PMFTable::point_mass(1)), Term::Table(PMFTable::point_mass(1))],
            2,
        )
        .unwrap();
        let s = sum_pmf(&spec, None, 1e-12, CAP, TRIM).unwrap();
        assert_eq!(s.lo, 2);
        assert_eq!(s.probs, vec![1.0]);
    }

    #[test]
    fn sum_pmf_mean_is_additive() {
        let terms: Vec<Term> = [0.4, 0.9, 1.3, 2.0, 0.6]
            .iter()
            .map(|&a| Term::Table(geometric_table(a, 1e-13)))
            .collect();
        let expect: f64 = terms
            .iter()
            .map(|t| match t {
                Term::Table(t) => moments(t).mean,
                _ => unreachable!(),
            })
            .sum();
        let spec = SIIRVSpec::new(terms, 5).unwrap();
        let s = sum_pmf(&spec, None, 1e-12, CAP, TRIM).unwrap();
        assert!((moments(&s).mean - expect).abs() < 1e-9);
    }

    #[test]
    fn shift_roundtrip_and_identity() {
        let p = geometric_table(0.8, 1e-10);
        let same = shift(&p, 0);
        assert_eq!(same.lo, p.lo);
        let back = shift(&shift(&p, 1), -1);
        assert_eq!(back.lo, p.lo);
        assert_eq!(back.probs, p.probs);
    }

    #[test]
    fn shift_distance_of_unimodal_equals_mode_mass() {
        let p = geometric_table(0.9, 1e-12);
        let d = tv_distance(&p, &shift(&p, 1));
        let max = p.probs.iter().cloned().fold(f64::MIN, f64::max);
        assert!((d.value - max).abs() <= d.slack + 1e-12);
    }

    #[test]
    fn moments_point_mass() {
        let m = moments(&PMFTable::point_mass(7));
        assert_eq!(m.mean, 7.0);
        assert_eq!(m.variance, 0.0);
        assert_eq!(m.third_central_abs, 0.0);
        assert_eq!(m.fourth_central, 0.0);
    }

    #[test]
    fn moments_bernoulli_half() {
        let b = PMFTable::new(0, vec![0.5, 0.5], 0.0).unwrap();
        let m = moments(&b);
        assert!((m.mean - 0.5).abs() < 1e-15);
        assert!((m.variance - 0.25).abs() < 1e-15);
        assert!((m.third_central_abs - 0.125).abs() < 1e-15);
        assert!((m.fourth_central - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn moments_geometric_half() {
        let g = geometric_table(2.0_f64.ln(), 1e-13);
        let m = moments(&g);
        assert!((m.mean - 1.0).abs() < 1e-6);
        assert!((m.variance - 2.0).abs() < 1e-6);
    }

    #[test]
    fn modes_point_and_uniform() {
        let (m, u) = modes_of(&PMFTable::point_mass(3));
        assert_eq!(m, vec![3]);
        assert!(u);
        let (m, u) = modes_of(&PMFTable::new(0, vec![1.0 / 3.0; 3], 0.0).unwrap());
        assert_eq!(m, vec![0, 1, 2]);
        assert!(u);
    }

    #[test]
    fn modes_bimodal_detected() {
        let p = PMFTable::new(0, vec![0.4, 0.1, 0.5], 0.0).unwrap();
        let (m, u) = modes_of(&p);
        assert_eq!(m, vec![2]);
        assert!(!u);
    }

    #[test]
    fn sample_point_mass_and_determinism() {
        let p = PMFTable::point_mass(-4);
        let mut rng = SplitRng::seed_from_u64(1);
        assert!(sample(&p, &mut rng, 50).iter().all(|&x| x == -4));

        let g = geometric_table(0.5, 1e-10);
        let a = sample(&g, &mut SplitRng::seed_from_u64(9), 100);
        let b = sample(&g, &mut SplitRng::seed_from_u64(9), 100);
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_near_truth() {
        // Geometric(p = 1/2): mean 1, variance 2. CLT band at 3 sigma.
        let g = geometric_table(2.0_f64.ln(), 1e-12);
        let mut rng = SplitRng::seed_from_u64(123);
        let n = 100_000usize;
        let draws = sample(&g, &mut rng, n);
        let mean = draws.iter().sum::<i64>() as f64 / n as f64;
        let band = 3.0 * (2.0f64).sqrt() / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < band, "mean {mean} band {band}");
    }
}

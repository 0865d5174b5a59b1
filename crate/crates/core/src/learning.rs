//! Estimators and learners.
//!
//! The learners never see the target's structure, only samples. Both run
//! two branches — a tournament over sparse-cover candidates and a
//! moment-estimated discretized Gaussian — and referee the branch winners
//! with one last pairwise competition. The dense branch of the parametric
//! learner consumes target samples only while estimating the mean and
//! variance; its candidate tournament runs entirely against draws from the
//! estimated Gaussian.

use crate::approx::{self, GaussianParams};
use crate::config::Constants;
use crate::covers::{self, CoverError};
use crate::expfam::{self, ExpFamError, ExpFamilySpec, ParamVector};
use crate::pmf_core::{self, PMFTable, PmfError, TableSampler};
use crate::rng::SplitRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("sample budget exhausted: {used} used of {cap}")]
    BudgetExceeded { used: u64, cap: u64 },
    #[error("invalid learner configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Cover(#[from] CoverError),
    #[error(transparent)]
    ExpFam(#[from] ExpFamError),
    #[error(transparent)]
    Pmf(#[from] PmfError),
}

/// Accuracy/confidence configuration shared by all learners.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnConfig {
    pub eps: f64,
    pub delta: f64,
    /// Evaluation-oracle tolerance; tables are exact up to tail mass, so 0
    /// is the operative value, but the field models approximate oracles and
    /// must satisfy `(1 + beta)^2 <= 1 + eps/8`.
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_budget")]
    pub sample_budget_cap: u64,
    pub seed: u64,
    /// Reuse one target-sample batch across tournament pairs instead of
    /// drawing fresh per pair. No correctness claim; off by default.
    #[serde(default)]
    pub reuse_samples: bool,
}

fn default_budget() -> u64 {
    2_000_000_000
}

impl LearnConfig {
    pub fn new(eps: f64, delta: f64, seed: u64) -> Result<Self, LearnError> {
        let cfg = LearnConfig {
            eps,
            delta,
            beta: 0.0,
            sample_budget_cap: default_budget(),
            seed,
            reuse_samples: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(LearnError::Invalid(format!("eps {} outside (0,1)", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(LearnError::Invalid(format!("delta {} outside (0,1)", self.delta)));
        }
        if self.beta < 0.0 || (1.0 + self.beta).powi(2) > 1.0 + self.eps / 8.0 {
            return Err(LearnError::Invalid(format!(
                "beta {} violates (1+beta)^2 <= 1 + eps/8",
                self.beta
            )));
        }
        if self.sample_budget_cap == 0 {
            return Err(LearnError::Invalid("sample budget cap must be positive".into()));
        }
        Ok(())
    }
}

/// Source of independent draws from a distribution over the integers.
pub trait Sampler {
    fn draw(&mut self, rng: &mut SplitRng) -> i64;
}

impl Sampler for TableSampler {
    fn draw(&mut self, rng: &mut SplitRng) -> i64 {
        TableSampler::draw(self, rng)
    }
}

impl<F: FnMut(&mut SplitRng) -> i64> Sampler for F {
    fn draw(&mut self, rng: &mut SplitRng) -> i64 {
        self(rng)
    }
}

/// Tracks draws against the configured cap.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleCounter {
    pub used: u64,
}

impl SampleCounter {
    fn take(&mut self, n: u64, cap: u64) -> Result<(), LearnError> {
        if self.used.saturating_add(n) > cap {
            return Err(LearnError::BudgetExceeded { used: self.used + n, cap });
        }
        self.used += n;
        Ok(())
    }
}

/// Median-boosted mean/variance estimation.
///
/// Each weak round takes `ceil(3/eps^2)` draws and reports the sample mean
/// and Bessel-corrected variance; `ceil(18 ln(2/delta))` rounds are run and
/// the coordinatewise medians returned.
pub fn estimate_mean_var<S: Sampler>(
    sampler: &mut S,
    eps: f64,
    delta: f64,
    rng: &mut SplitRng,
    counter: &mut SampleCounter,
    cap: u64,
) -> Result<(f64, f64), LearnError> {
    if !(eps > 0.0 && eps < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(LearnError::Invalid("estimate_mean_var needs eps, delta in (0,1)".into()));
    }
    let per_round = (3.0 / (eps * eps)).ceil() as u64;
    let rounds = (18.0 * (2.0 / delta).ln()).ceil() as u64;
    counter.take(per_round * rounds, cap)?;
    let mut means = Vec::with_capacity(rounds as usize);
    let mut vars = Vec::with_capacity(rounds as usize);
    for _ in 0..rounds {
        let mut draws = Vec::with_capacity(per_round as usize);
        for _ in 0..per_round {
            draws.push(sampler.draw(rng) as f64);
        }
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = if draws.len() > 1 {
            draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        means.push(mean);
        vars.push(var);
    }
    Ok((median(&mut means), median(&mut vars)))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    H1,
    H2,
    Draw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub p1: f64,
    pub p2: f64,
    pub tau: f64,
    pub decision: Decision,
    pub samples: u64,
}

/// Threshold decision from an already-drawn sample batch.
fn decide_pair(h1: &PMFTable, h2: &PMFTable, eps: f64, samples: &[i64]) -> (usize, PairRecord) {
    let lo = h1.lo.min(h2.lo);
    let hi = h1.hi().max(h2.hi());
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    // Membership of the union window in W1 = {x : h1(x) > h2(x)}.
    let mut w1 = vec![false; (hi - lo + 1) as usize];
    for x in lo..=hi {
        let (a, b) = (h1.at(x), h2.at(x));
        if a > b {
            w1[(x - lo) as usize] = true;
            p1 += a;
            p2 += b;
        }
    }
    let inside = samples
        .iter()
        .filter(|&&x| x >= lo && x <= hi && w1[(x - lo) as usize])
        .count();
    let tau = inside as f64 / samples.len() as f64;
    let (winner, decision) = if tau > p1 - eps {
        (0, Decision::H1)
    } else if tau < p2 + eps {
        (1, Decision::H2)
    } else {
        (0, Decision::Draw)
    };
    (winner, PairRecord { p1, p2, tau, decision, samples: samples.len() as u64 })
}

fn pair_sample_count(eps: f64, delta: f64, constants: &Constants) -> u64 {
    (constants.c_h * (1.0 / delta).ln() / (eps * eps)).ceil() as u64
}

/// Pairwise competition: compute the set where `h1` outweighs `h2`, compare
/// the empirical fraction of target samples landing there against the two
/// hypothesis masses, and decide by the threshold rule. Draws resolve to
/// the first hypothesis.
#[allow(clippy::too_many_arguments)]
pub fn select_hypothesis<S: Sampler>(
    sampler: &mut S,
    h1: &PMFTable,
    h2: &PMFTable,
    eps: f64,
    delta: f64,
    constants: &Constants,
    rng: &mut SplitRng,
    counter: &mut SampleCounter,
    cap: u64,
) -> Result<(usize, PairRecord), LearnError> {
    let m = pair_sample_count(eps, delta, constants);
    counter.take(m, cap)?;
    let samples: Vec<i64> = (0..m).map(|_| sampler.draw(rng)).collect();
    Ok(decide_pair(h1, h2, eps, &samples))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub winner: usize,
    /// (i, j, record) for every competition run.
    pub pairs: Vec<(usize, usize, PairRecord)>,
    pub samples_used: u64,
    /// False when no hypothesis survived undefeated and the fewest-losses
    /// fallback picked the winner.
    pub undefeated: bool,
}

/// All-pairs competition at per-pair confidence `delta / M^2`; the winner
/// is a hypothesis that never lost (first by index), or the one with the
/// fewest losses, flagged. Fresh target samples per pair.
#[allow(clippy::too_many_arguments)]
pub fn tournament<S: Sampler>(
    sampler: &mut S,
    hypotheses: &[PMFTable],
    eps: f64,
    delta: f64,
    constants: &Constants,
    rng: &mut SplitRng,
    counter: &mut SampleCounter,
    cap: u64,
) -> Result<HypothesisReport, LearnError> {
    run_tournament(sampler, hypotheses, eps, delta, constants, rng, counter, cap, false)
}

/// Tournament variant that draws one sample batch and reuses it across all
/// pairs. Matches the sample-complexity shape of the stated bounds; no
/// independent correctness claim is made for the reuse.
#[allow(clippy::too_many_arguments)]
pub fn tournament_reusing<S: Sampler>(
    sampler: &mut S,
    hypotheses: &[PMFTable],
    eps: f64,
    delta: f64,
    constants: &Constants,
    rng: &mut SplitRng,
    counter: &mut SampleCounter,
    cap: u64,
) -> Result<HypothesisReport, LearnError> {
    run_tournament(sampler, hypotheses, eps, delta, constants, rng, counter, cap, true)
}

#[allow(clippy::too_many_arguments)]
fn run_tournament<S: Sampler>(
    sampler: &mut S,
    hypotheses: &[PMFTable],
    eps: f64,
    delta: f64,
    constants: &Constants,
    rng: &mut SplitRng,
    counter: &mut SampleCounter,
    cap: u64,
    reuse: bool,
) -> Result<HypothesisReport, LearnError> {
    let m = hypotheses.len();
    if m == 0 {
        return Err(LearnError::Invalid("tournament needs at least one hypothesis".into()));
    }
    if m == 1 {
        return Ok(HypothesisReport {
            winner: 0,
            pairs: vec![],
            samples_used: 0,
            undefeated: true,
        });
    }
    let pair_delta = delta / (m * m) as f64;
    let mut losses = vec![0u32; m];
    let mut pairs = Vec::new();
    let before = counter.used;
    let shared: Option<Vec<i64>> = if reuse {
        let count = pair_sample_count(eps, pair_delta, constants);
        counter.take(count, cap)?;
        Some((0..count).map(|_| sampler.draw(rng)).collect())
    } else {
        None
    };
    for i in 0..m {
        for j in i + 1..m {
            let (w, rec) = match &shared {
                Some(batch) => decide_pair(&hypotheses[i], &hypotheses[j], eps, batch),
                None => select_hypothesis(
                    sampler,
                    &hypotheses[i],
                    &hypotheses[j],
                    eps,
                    pair_delta,
                    constants,
                    rng,
                    counter,
                    cap,
                )?,
            };
            let loser = if w == 0 { j } else { i };
            if rec.decision != Decision::Draw {
                losses[loser] += 1;
            }
            pairs.push((i, j, rec));
        }
    }
    let undefeated = losses.contains(&0);
    let winner = if undefeated {
        losses.iter().position(|&l| l == 0).unwrap()
    } else {
        let min = *losses.iter().min().unwrap();
        losses.iter().position(|&l| l == min).unwrap()
    };
    Ok(HypothesisReport {
        winner,
        pairs,
        samples_used: counter.used - before,
        undefeated,
    })
}

#[allow(clippy::too_many_arguments)]
fn dispatch_tournament<S: Sampler>(
    reuse: bool,
    sampler: &mut S,
    hypotheses: &[PMFTable],
    eps: f64,
    delta: f64,
    constants: &Constants,
    rng: &mut SplitRng,
    counter: &mut SampleCounter,
    cap: u64,
) -> Result<HypothesisReport, LearnError> {
    run_tournament(sampler, hypotheses, eps, delta, constants, rng, counter, cap, reuse)
}

// ---------------------------------------------------------------------------
// Nonparametric learner
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiiurvLearnReport {
    pub sparse_candidates: usize,
    pub sparse_skipped: bool,
    pub winner_is_gaussian: bool,
    pub x_samples: u64,
    pub estimated: (f64, f64),
}

/// Learn a nonparametric unimodal sum from samples alone.
///
/// The sparse branch materializes the quantized-interval cover and runs a
/// tournament over it; when the candidate count exceeds the budget the
/// branch is skipped (non-desk-scale, the Gaussian branch carries those
/// targets). The dense branch fits a discretized Gaussian from
/// median-boosted moment estimates; a final pairwise competition referees.
pub fn learn_siiurv<S: Sampler>(
    sampler: &mut S,
    n: usize,
    l_mode: f64,
    b_moment: f64,
    gamma_mode_gap: f64,
    cfg: &LearnConfig,
    constants: &Constants,
) -> Result<(PMFTable, SiiurvLearnReport), LearnError> {
    cfg.validate()?;
    if !(gamma_mode_gap > 0.0 && gamma_mode_gap < 1.0) {
        return Err(LearnError::Invalid("mode-mass gap must lie in (0,1)".into()));
    }
    let mut rng = SplitRng::seed_from_u64(cfg.seed);
    let mut rng_sparse = rng.split();
    let mut rng_dense = rng.split();
    let mut rng_final = rng.split();
    let mut counter = SampleCounter::default();
    let cap = cfg.sample_budget_cap;

    let sparse = covers::siiurv_sparse_generator(n, l_mode, b_moment, cfg.eps);
    let mut sparse_candidates = Vec::new();
    let mut sparse_skipped = false;
    if sparse.total_count() <= constants.sparse_budget as f64 {
        sparse_candidates = sparse.materialize(constants.sparse_budget)?;
    } else {
        sparse_skipped = true;
    }
    let n_candidates = sparse_candidates.len();

    let h_s = if sparse_candidates.is_empty() {
        None
    } else {
        let report = dispatch_tournament(
            cfg.reuse_samples,
            sampler,
            &sparse_candidates,
            cfg.eps,
            cfg.delta / 3.0,
            constants,
            &mut rng_sparse,
            &mut counter,
            cap,
        )?;
        Some(sparse_candidates.swap_remove(report.winner))
    };

    let (mu_hat, var_hat) = estimate_mean_var(
        sampler,
        cfg.eps / 4.0,
        cfg.delta / 3.0,
        &mut rng_dense,
        &mut counter,
        cap,
    )?;
    let h_d = approx::disc_gauss_pmf(
        &GaussianParams::new(mu_hat, var_hat.max(0.05)),
        (cfg.eps * 1e-3).min(1e-4),
    );

    let (table, winner_is_gaussian) = match h_s {
        None => (h_d, true),
        Some(h_s) => {
            let (w, _) = select_hypothesis(
                sampler,
                &h_s,
                &h_d,
                cfg.eps,
                cfg.delta / 3.0,
                constants,
                &mut rng_final,
                &mut counter,
                cap,
            )?;
            if w == 0 {
                (h_s, false)
            } else {
                (h_d, true)
            }
        }
    };
    Ok((
        table,
        SiiurvLearnReport {
            sparse_candidates: n_candidates,
            sparse_skipped,
            winner_is_gaussian,
            x_samples: counter.used,
            estimated: (mu_hat, var_hat),
        },
    ))
}

// ---------------------------------------------------------------------------
// Parametric (weakly proper) learner
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiiervLearnReport {
    pub x_samples_sparse: u64,
    pub x_samples_estimate: u64,
    pub x_samples_final: u64,
    pub gaussian_samples: u64,
    pub winner_is_dense: bool,
    pub estimated: (f64, f64),
    pub order: u64,
}

fn convolve_params(
    spec: &ExpFamilySpec,
    params: &[ParamVector],
    tail: f64,
) -> Result<PMFTable, LearnError> {
    let cap = spec.constants.convolve_cap;
    let trim = spec.constants.trim_mass;
    let mut acc: Option<PMFTable> = None;
    for p in params {
        let t = expfam::pmf_member(spec, p, tail)?;
        acc = Some(match acc {
            None => t,
            Some(prev) => pmf_core::convolve(&prev, &t, cap, trim).map_err(CoverError::from)?,
        });
    }
    acc.ok_or_else(|| LearnError::Invalid("empty parameter list".into()))
}

fn multiset_candidates(
    spec: &ExpFamilySpec,
    net: &[ParamVector],
    max_size: u64,
    budget: usize,
    tail: f64,
) -> Result<(Vec<PMFTable>, Vec<Vec<ParamVector>>), LearnError> {
    let cap = spec.constants.convolve_cap;
    let trim = spec.constants.trim_mass;
    let tables: Vec<PMFTable> = net
        .iter()
        .map(|p| expfam::pmf_member(spec, p, tail))
        .collect::<Result<_, _>>()?;
    let mut out_tables = Vec::new();
    let mut out_params = Vec::new();
    let mut stack: Vec<(usize, u64, PMFTable, Vec<usize>)> = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        stack.push((i, 1, t.clone(), vec![i]));
    }
    while let Some((start, size, table, ids)) = stack.pop() {
        out_tables.push(table.clone());
        out_params.push(ids.iter().map(|&i| net[i].clone()).collect());
        if out_tables.len() > budget {
            return Err(LearnError::Invalid(format!(
                "sparse candidate budget {budget} exceeded"
            )));
        }
        if size < max_size {
            for (j, tj) in tables.iter().enumerate().skip(start) {
                let next =
                    pmf_core::convolve(&table, tj, cap, trim).map_err(CoverError::from)?;
                let mut nids = ids.clone();
                nids.push(j);
                stack.push((j, size + 1, next, nids));
            }
        }
    }
    Ok((out_tables, out_params))
}

/// Evenly thinned subsequence of a net, at most `max` points.
fn thin_net(points: &[ParamVector], max: usize) -> Vec<ParamVector> {
    if points.len() <= max {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(max);
    points.iter().step_by(stride.max(1)).cloned().collect()
}

/// Weakly proper learner: the output is itself a sum of family members
/// with parameters in the rho-cone and order at most
/// `ceil(n sqrt(B) / gamma)`.
///
/// Sparse branch: two-stage tournament (coarse multiset net, then local
/// refinement) over multisets of at most `min(n, 3)` terms, budget-capped.
/// Dense branch: moment estimation at `eps/4`, then a tournament of
/// `(b, m)` i.i.d.-sum candidates judged entirely on draws from the
/// estimated Gaussian — no further target samples. A final pairwise
/// competition on target samples referees the two branch winners.
pub fn learn_siierv<S: Sampler>(
    sampler: &mut S,
    spec: &ExpFamilySpec,
    n: u64,
    cfg: &LearnConfig,
) -> Result<(pmf_core::SIIRVSpec, SiiervLearnReport), LearnError> {
    cfg.validate()?;
    if n == 0 {
        return Err(LearnError::Invalid("order n must be positive".into()));
    }
    let constants = &spec.constants;
    let mut rng = SplitRng::seed_from_u64(cfg.seed);
    let mut rng_sparse = rng.split();
    let mut rng_est = rng.split();
    let mut rng_dense = rng.split();
    let mut rng_final = rng.split();
    let mut counter = SampleCounter::default();
    let cap = cfg.sample_budget_cap;
    const TAIL: f64 = 1e-9;
    let ccap = constants.convolve_cap;
    let trim = constants.trim_mass;

    // --- Sparse branch: two-stage tournament over small multisets. ---
    let s_cap = n.min(3);
    let coarse = covers::sparsify_family(spec, (cfg.eps / (2 * s_cap) as f64).min(0.5))?;
    let coarse_net = thin_net(&coarse.points, 12);
    let (cand_tables, cand_params) =
        multiset_candidates(spec, &coarse_net, s_cap, constants.sparse_budget, TAIL)?;
    let before_sparse = counter.used;
    let sparse_report = dispatch_tournament(
        cfg.reuse_samples,
        sampler,
        &cand_tables,
        cfg.eps,
        cfg.delta / 6.0,
        constants,
        &mut rng_sparse,
        &mut counter,
        cap,
    )?;
    let mut sparse_params = cand_params[sparse_report.winner].clone();
    // Stage two: per-term neighbor steps at half the coarse pitch.
    {
        let pitch = coarse.radius_euclid * 0.5;
        let mut refined: Vec<Vec<ParamVector>> = vec![sparse_params.clone()];
        for ti in 0..sparse_params.len() {
            let mut next = Vec::new();
            for combo in &refined {
                for step in [-1.0, 0.0, 1.0] {
                    let mut c = combo.clone();
                    let mut moved = c[ti].clone();
                    moved.0[0] += step * pitch;
                    if spec.rho_cone_contains(&moved) {
                        c[ti] = moved;
                        next.push(c);
                    }
                }
            }
            if !next.is_empty() {
                refined = next;
            }
        }
        if refined.len() > 1 {
            let tables: Vec<PMFTable> = refined
                .iter()
                .map(|combo| convolve_params(spec, combo, TAIL))
                .collect::<Result<_, _>>()?;
            let rep = dispatch_tournament(
                cfg.reuse_samples,
                sampler,
                &tables,
                cfg.eps,
                cfg.delta / 6.0,
                constants,
                &mut rng_sparse,
                &mut counter,
                cap,
            )?;
            sparse_params = refined[rep.winner].clone();
        }
    }
    let x_samples_sparse = counter.used - before_sparse;
    let h_s = convolve_params(spec, &sparse_params, TAIL)?;

    // --- Dense branch: estimate, then tournament against the Gaussian. ---
    let before_est = counter.used;
    let (mu_hat, var_hat) = estimate_mean_var(
        sampler,
        cfg.eps / 4.0,
        cfg.delta / 6.0,
        &mut rng_est,
        &mut counter,
        cap,
    )?;
    let x_samples_estimate = counter.used - before_est;
    let gauss = GaussianParams::new(mu_hat, var_hat.max(spec.gamma.min(1.0) * 0.5));
    let z_table = approx::disc_gauss_pmf(&gauss, (cfg.eps * 1e-3).min(1e-4));
    let mut z_sampler = TableSampler::new(&z_table);
    let mut z_counter = SampleCounter::default();
    let m_max = ((n as f64) * spec.b_moment.sqrt() / spec.gamma).ceil() as u64;

    let dense_net = thin_net(&coarse.points, 16);
    let mut dense_cands: Vec<(ParamVector, u64)> = Vec::new();
    for b in &dense_net {
        let t = expfam::pmf_member(spec, b, TAIL)?;
        let tm = pmf_core::moments(&t);
        if tm.variance <= 0.0 {
            continue;
        }
        let m_var = (var_hat / tm.variance).round() as i64;
        let m_mean = if tm.mean.abs() > 1e-9 {
            (mu_hat / tm.mean).round() as i64
        } else {
            m_var
        };
        for m in [m_var - 1, m_var, m_var + 1, m_mean] {
            let m = m.max(1) as u64;
            if m <= m_max && !dense_cands.iter().any(|(bb, mm)| *mm == m && bb == b) {
                dense_cands.push((b.clone(), m));
            }
        }
    }
    if dense_cands.is_empty() {
        dense_cands.push((dense_net[0].clone(), 1));
    }
    let dense_tables: Vec<PMFTable> = dense_cands
        .iter()
        .map(|(b, m)| {
            let t = expfam::pmf_member(spec, b, TAIL)?;
            covers::iid_sum_table(&t, *m, ccap, trim).map_err(LearnError::from)
        })
        .collect::<Result<_, _>>()?;
    let dense_report = dispatch_tournament(
        cfg.reuse_samples,
        &mut z_sampler,
        &dense_tables,
        2.0 * cfg.eps,
        cfg.delta / 6.0,
        constants,
        &mut rng_dense,
        &mut z_counter,
        u64::MAX,
    )?;
    let mut dense_choice = dense_cands[dense_report.winner].clone();
    // Stage two on the dense side: half-pitch steps and nearby counts.
    {
        let pitch =
            0.5 * (cfg.eps / dense_choice.1.max(1) as f64) * (2.0 / spec.lambda).sqrt();
        let mut refined = Vec::new();
        for db in [-1.0, 0.0, 1.0] {
            let mut b = dense_choice.0.clone();
            b.0[0] += db * pitch;
            if !spec.rho_cone_contains(&b) {
                continue;
            }
            for dm in -2..=2i64 {
                let m = (dense_choice.1 as i64 + dm).max(1) as u64;
                if m <= m_max && !refined.contains(&(b.clone(), m)) {
                    refined.push((b.clone(), m));
                }
            }
        }
        if refined.len() > 1 {
            let tables: Vec<PMFTable> = refined
                .iter()
                .map(|(b, m)| {
                    let t = expfam::pmf_member(spec, b, TAIL)?;
                    covers::iid_sum_table(&t, *m, ccap, trim).map_err(LearnError::from)
                })
                .collect::<Result<_, _>>()?;
            let rep = dispatch_tournament(
                cfg.reuse_samples,
                &mut z_sampler,
                &tables,
                2.0 * cfg.eps,
                cfg.delta / 6.0,
                constants,
                &mut rng_dense,
                &mut z_counter,
                u64::MAX,
            )?;
            dense_choice = refined[rep.winner].clone();
        }
    }
    let dense_term = expfam::pmf_member(spec, &dense_choice.0, TAIL)?;
    let h_d = covers::iid_sum_table(&dense_term, dense_choice.1, ccap, trim)?;

    // --- Final referee on target samples. ---
    let before_final = counter.used;
    let (w, _) = select_hypothesis(
        sampler,
        &h_s,
        &h_d,
        cfg.eps,
        cfg.delta / 3.0,
        constants,
        &mut rng_final,
        &mut counter,
        cap,
    )?;
    let x_samples_final = counter.used - before_final;

    let (spec_out, winner_is_dense) = if w == 0 {
        let order = sparse_params.len();
        (
            pmf_core::SIIRVSpec::from_params(sparse_params, order)?,
            false,
        )
    } else {
        let params = vec![dense_choice.0.clone(); dense_choice.1 as usize];
        (
            pmf_core::SIIRVSpec::from_params(params, dense_choice.1 as usize)?,
            true,
        )
    };
    let order = spec_out.terms.len() as u64;
    Ok((
        spec_out,
        SiiervLearnReport {
            x_samples_sparse,
            x_samples_estimate,
            x_samples_final,
            gaussian_samples: z_counter.used,
            winner_is_dense,
            estimated: (mu_hat, var_hat),
            order,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    const CAP: usize = 1 << 22;
    const TRIM: f64 = 1e-15;

    #[test]
    fn config_validation() {
        assert!(LearnConfig::new(0.1, 0.1, 7).is_ok());
        assert!(LearnConfig::new(0.0, 0.1, 7).is_err());
        let mut cfg = LearnConfig::new(0.1, 0.1, 7).unwrap();
        cfg.beta = 0.5; // (1.5)^2 = 2.25 > 1.0125
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn estimate_constant_sampler() {
        let mut rng = SplitRng::seed_from_u64(1);
        let mut counter = SampleCounter::default();
        let mut sampler = |_: &mut SplitRng| 4i64;
        let (mu, var) =
            estimate_mean_var(&mut sampler, 0.2, 0.1, &mut rng, &mut counter, u64::MAX).unwrap();
        assert_eq!(mu, 4.0);
        assert_eq!(var, 0.0);
        assert!(counter.used > 0);
    }

    #[test]
    fn estimate_determinism_and_accuracy() {
        let fam = catalog::geometric_family(0.5, 3.0);
        let term =
            expfam::pmf_member(&fam, &ParamVector(vec![2.0f64.ln()]), 1e-10).unwrap();
        let sum = covers::iid_sum_table(&term, 100, CAP, TRIM).unwrap();
        // Truth: mean 100, variance 200.
        let run = |seed: u64| {
            let mut sampler = TableSampler::new(&sum);
            let mut rng = SplitRng::seed_from_u64(seed);
            let mut counter = SampleCounter::default();
            estimate_mean_var(&mut sampler, 0.1, 0.1, &mut rng, &mut counter, u64::MAX).unwrap()
        };
        let (m1, v1) = run(5);
        let (m2, v2) = run(5);
        assert_eq!((m1, v1), (m2, v2));

        let mut hits = 0;
        for seed in 0..100u64 {
            let (m, _) = run(seed);
            if (m - 100.0).abs() <= 0.1 * 200.0f64.sqrt() * 3.0 {
                hits += 1;
            }
        }
        assert!(hits >= 90, "only {hits}/100 within the band");
    }

    #[test]
    fn budget_cap_reported() {
        let mut rng = SplitRng::seed_from_u64(1);
        let mut counter = SampleCounter::default();
        let mut sampler = |_: &mut SplitRng| 0i64;
        let err =
            estimate_mean_var(&mut sampler, 0.1, 0.1, &mut rng, &mut counter, 10).unwrap_err();
        assert!(matches!(err, LearnError::BudgetExceeded { cap: 10, .. }));
    }

    #[test]
    fn select_identical_hypotheses_draws_to_first() {
        let t = approx::geometric_table_from_p(0.5, 1e-10);
        let mut sampler = TableSampler::new(&t);
        let mut rng = SplitRng::seed_from_u64(2);
        let mut counter = SampleCounter::default();
        let (w, rec) = select_hypothesis(
            &mut sampler,
            &t,
            &t,
            0.1,
            0.1,
            &Constants::default(),
            &mut rng,
            &mut counter,
            u64::MAX,
        )
        .unwrap();
        // W1 is empty, p1 = p2 = tau = 0; tau > p1 - eps selects H1.
        assert_eq!(w, 0);
        assert_eq!(rec.decision, Decision::H1);
    }

    #[test]
    fn select_point_masses() {
        let h1 = PMFTable::point_mass(0);
        let h2 = PMFTable::point_mass(1);
        let mut sampler = TableSampler::new(&h1);
        let mut rng = SplitRng::seed_from_u64(3);
        let mut counter = SampleCounter::default();
        let (w, rec) = select_hypothesis(
            &mut sampler,
            &h1,
            &h2,
            0.1,
            0.1,
            &Constants::default(),
            &mut rng,
            &mut counter,
            u64::MAX,
        )
        .unwrap();
        assert_eq!(w, 0);
        assert_eq!(rec.tau, 1.0);
        assert_eq!(rec.p1, 1.0);
    }

    #[test]
    fn tournament_single_and_pair() {
        let t = approx::geometric_table_from_p(0.6, 1e-10);
        let mut sampler = TableSampler::new(&t);
        let mut rng = SplitRng::seed_from_u64(4);
        let mut counter = SampleCounter::default();
        let rep = tournament(
            &mut sampler,
            std::slice::from_ref(&t),
            0.1,
            0.1,
            &Constants::default(),
            &mut rng,
            &mut counter,
            u64::MAX,
        )
        .unwrap();
        assert_eq!(rep.winner, 0);

        // M = 2 reduces to a single pairwise competition.
        let decoy = approx::geometric_table_from_p(0.2, 1e-10);
        let rep = tournament(
            &mut sampler,
            &[decoy, t.clone()],
            0.1,
            0.1,
            &Constants::default(),
            &mut rng,
            &mut counter,
            u64::MAX,
        )
        .unwrap();
        assert_eq!(rep.pairs.len(), 1);
        assert_eq!(rep.winner, 1);
    }

    #[test]
    fn tournament_finds_planted_hypothesis() {
        // True table among decoys at TV >= 10 eps: winner within 6 eps.
        let eps = 0.1;
        let truth = approx::geometric_table_from_p(0.5, 1e-10);
        let mut hyps = vec![truth.clone()];
        for i in 0..10 {
            hyps.push(approx::geometric_table_from_p(0.93 + 0.005 * i as f64, 1e-10));
        }
        let mut wins = 0;
        for seed in 0..20u64 {
            let mut sampler = TableSampler::new(&truth);
            let mut rng = SplitRng::seed_from_u64(seed);
            let mut counter = SampleCounter::default();
            let rep = tournament(
                &mut sampler,
                &hyps,
                eps,
                0.1,
                &Constants::default(),
                &mut rng,
                &mut counter,
                u64::MAX,
            )
            .unwrap();
            let tv = pmf_core::tv_distance(&truth, &hyps[rep.winner]);
            if tv.value <= 6.0 * eps {
                wins += 1;
            }
        }
        assert!(wins >= 19, "{wins}/20");
    }

    #[test]
    fn tournament_reuse_variant_still_selects_well() {
        let truth = approx::geometric_table_from_p(0.5, 1e-10);
        let mut hyps = vec![truth.clone()];
        for i in 0..6 {
            hyps.push(pmf_core::shift(&truth, 30 + 5 * i));
        }
        let mut sampler = TableSampler::new(&truth);
        let mut rng = SplitRng::seed_from_u64(12);
        let mut counter = SampleCounter::default();
        let rep = tournament_reusing(
            &mut sampler,
            &hyps,
            0.1,
            0.1,
            &Constants::default(),
            &mut rng,
            &mut counter,
            u64::MAX,
        )
        .unwrap();
        assert_eq!(rep.winner, 0);
        // One shared batch: used samples equal a single pair budget.
        assert_eq!(rep.samples_used, rep.pairs[0].2.samples);
    }

    #[test]
    fn learn_siiurv_single_bernoulli() {
        let bern = PMFTable::new(0, vec![0.5, 0.5], 0.0).unwrap();
        let cfg = LearnConfig::new(0.3, 0.1, 42).unwrap();
        let mut sampler = TableSampler::new(&bern);
        let (out, report) =
            learn_siiurv(&mut sampler, 1, 1.0, 0.25, 0.4, &cfg, &Constants::default()).unwrap();
        assert!(!report.sparse_skipped);
        let tv = pmf_core::tv_distance(&bern, &out);
        assert!(tv.value <= 0.3 + tv.slack, "tv {}", tv.value);
    }

    #[test]
    fn learn_siiurv_dense_sum_uses_gaussian() {
        let fam = catalog::geometric_family(0.5, 3.0);
        let term =
            expfam::pmf_member(&fam, &ParamVector(vec![2.0f64.ln()]), 1e-10).unwrap();
        let truth = covers::iid_sum_table(&term, 150, CAP, TRIM).unwrap();
        let cfg = LearnConfig::new(0.2, 0.1, 7).unwrap();
        let mut sampler = TableSampler::new(&truth);
        let (out, report) =
            learn_siiurv(&mut sampler, 150, 0.5, 40.0, 0.5, &cfg, &Constants::default()).unwrap();
        assert!(report.sparse_skipped);
        assert!(report.winner_is_gaussian);
        let tv = pmf_core::tv_distance(&truth, &out);
        assert!(tv.value <= 0.2 + tv.slack, "tv {}", tv.value);
    }

    #[test]
    fn learn_siierv_two_term_sparse_target() {
        let fam = catalog::geometric_family(0.8, 1.2);
        let a = vec![ParamVector(vec![0.9]), ParamVector(vec![1.1])];
        let spec = pmf_core::SIIRVSpec::from_params(a, 2).unwrap();
        let truth = pmf_core::sum_pmf(&spec, Some(&fam), 1e-10, CAP, TRIM).unwrap();
        let cfg = LearnConfig::new(0.2, 0.1, 11).unwrap();
        let mut sampler = TableSampler::new(&truth);
        let (out, report) = learn_siierv(&mut sampler, &fam, 2, &cfg).unwrap();
        assert!(!report.winner_is_dense, "sparse target should go to the sparse branch");
        for t in &out.terms {
            match t {
                pmf_core::Term::Param(p) => assert!(fam.rho_cone_contains(p)),
                _ => panic!("parametric output expected"),
            }
        }
        let table = pmf_core::sum_pmf(&out, Some(&fam), 1e-10, CAP, TRIM).unwrap();
        let tv = pmf_core::tv_distance(&truth, &table);
        assert!(tv.value <= 0.2 + tv.slack, "tv {}", tv.value);
    }

    #[test]
    fn learners_deterministic_under_fixed_seed() {
        let fam = catalog::geometric_family(0.8, 1.2);
        let a = vec![ParamVector(vec![0.85]), ParamVector(vec![1.15])];
        let spec = pmf_core::SIIRVSpec::from_params(a, 2).unwrap();
        let truth = pmf_core::sum_pmf(&spec, Some(&fam), 1e-10, CAP, TRIM).unwrap();
        let cfg = LearnConfig::new(0.25, 0.15, 77).unwrap();
        let run = || {
            let mut sampler = TableSampler::new(&truth);
            learn_siierv(&mut sampler, &fam, 2, &cfg).unwrap()
        };
        let (out1, rep1) = run();
        let (out2, rep2) = run();
        assert_eq!(
            serde_json::to_string(&out1).unwrap(),
            serde_json::to_string(&out2).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&rep1).unwrap(),
            serde_json::to_string(&rep2).unwrap()
        );

        let bern = PMFTable::new(0, vec![0.5, 0.5], 0.0).unwrap();
        let run = || {
            let mut sampler = TableSampler::new(&bern);
            let cfg = LearnConfig::new(0.3, 0.1, 5).unwrap();
            learn_siiurv(&mut sampler, 1, 1.0, 0.25, 0.4, &cfg, &Constants::default()).unwrap()
        };
        let (t1, _) = run();
        let (t2, _) = run();
        assert_eq!(t1.probs, t2.probs);
        assert_eq!(t1.lo, t2.lo);
    }

    #[test]
    fn learn_siierv_sample_accounting() {
        let fam = catalog::geometric_family(0.8, 1.2);
        let truth = {
            let a: Vec<ParamVector> = (0..20)
                .map(|i| ParamVector(vec![0.8 + 0.4 * (i as f64 / 19.0)]))
                .collect();
            let spec = pmf_core::SIIRVSpec::from_params(a, 20).unwrap();
            pmf_core::sum_pmf(&spec, Some(&fam), 1e-10, CAP, TRIM).unwrap()
        };
        let cfg = LearnConfig::new(0.25, 0.2, 3).unwrap();
        let mut sampler = TableSampler::new(&truth);
        let (_, report) = learn_siierv(&mut sampler, &fam, 20, &cfg).unwrap();
        // Dense branch consumed target samples only inside the estimator.
        let eps_est = cfg.eps / 4.0;
        let per_round = (3.0 / (eps_est * eps_est)).ceil() as u64;
        let rounds = (18.0 * (2.0 / (cfg.delta / 6.0)).ln()).ceil() as u64;
        assert_eq!(report.x_samples_estimate, per_round * rounds);
        assert!(report.gaussian_samples > 0);
    }
}

//! Cover construction.
//!
//! Single-term covers discretize a bounded slice of the parameter space at
//! a pitch tied to the covariance bound; sum covers combine a sparse side
//! (multisets of net points, enumerated lazily) with a dense side of
//! i.i.d.-sum candidates found through moment matching. Candidate counts
//! explode combinatorially, so enumeration always runs behind budgets and
//! falls back to moment-guided search flagged as heuristic.

use crate::config::Constants;
use crate::expfam::{self, ExpFamError, ExpFamilySpec, ParamVector};
use crate::geometry::{self, GeometryError};
use crate::pmf_core::{self, PMFTable, PmfError, TvEstimate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoverError {
    #[error("grid of {candidates} candidates exceeds cap {cap}")]
    GridOverflow { candidates: usize, cap: usize },
    #[error("path does not bracket the target: endpoint values {left} and {right}")]
    BracketFailure { left: f64, right: f64 },
    #[error("invalid cover request: {0}")]
    Invalid(String),
    #[error(transparent)]
    ExpFam(#[from] ExpFamError),
    #[error(transparent)]
    Pmf(#[from] PmfError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

// ---------------------------------------------------------------------------
// Euclidean nets
// ---------------------------------------------------------------------------

/// Greedy eps-net of a region contained in the origin ball of radius `r`.
///
/// Candidates are the points of an axis grid of pitch `eps / (2 sqrt k)`
/// that fall inside the region, preceded by the caller's seed points; a
/// candidate joins the net when no chosen point is within `eps` of it.
/// Every candidate ends within `eps` of the net, and the packing argument
/// caps the net at `(1 + 2r/eps)^k` points. Seeds keep regions thinner
/// than the pitch from slipping between grid lines.
#[allow(clippy::needless_range_loop)]
pub fn euclid_cover(
    dim: usize,
    contains: impl Fn(&[f64]) -> bool,
    r: f64,
    eps: f64,
    cap: usize,
    seeds: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, CoverError> {
    if !(eps > 0.0) || !(r > 0.0) {
        return Err(CoverError::Invalid(format!("need positive r and eps, got r={r} eps={eps}")));
    }
    let pitch = eps / (2.0 * (dim as f64).sqrt());
    let steps = (2.0 * r / pitch).ceil() as i64 + 1;
    let raw_cells = (steps as f64).powi(dim as i32);
    if raw_cells > 64.0 * cap as f64 {
        return Err(CoverError::GridOverflow {
            candidates: raw_cells.min(usize::MAX as f64) as usize,
            cap,
        });
    }

    let cell = eps; // spatial hash cell for the within-eps test
    let key = |p: &[f64]| -> Vec<i64> { p.iter().map(|&x| (x / cell).floor() as i64).collect() };
    let mut net: Vec<Vec<f64>> = Vec::new();
    let mut hash: std::collections::HashMap<Vec<i64>, Vec<usize>> =
        std::collections::HashMap::new();
    let mut candidates = 0usize;

    let mut admit = |point: Vec<f64>,
                     net: &mut Vec<Vec<f64>>,
                     hash: &mut std::collections::HashMap<Vec<i64>, Vec<usize>>|
     -> Result<(), CoverError> {
        candidates += 1;
        if candidates > cap {
            return Err(CoverError::GridOverflow { candidates, cap });
        }
        let k = key(&point);
        for neighbor in neighbor_keys(&k) {
            if let Some(members) = hash.get(&neighbor) {
                for &m in members {
                    let d: Vec<f64> = point.iter().zip(&net[m]).map(|(a, b)| a - b).collect();
                    if geometry::norm(&d) <= eps {
                        return Ok(());
                    }
                }
            }
        }
        hash.entry(k).or_default().push(net.len());
        net.push(point);
        Ok(())
    };

    for s in seeds {
        if s.len() == dim && geometry::norm(s) <= r + 1e-12 && contains(s) {
            admit(s.clone(), &mut net, &mut hash)?;
        }
    }

    let mut idx = vec![0i64; dim];
    'outer: loop {
        let point: Vec<f64> = idx.iter().map(|&i| -r + i as f64 * pitch).collect();
        if geometry::norm(&point) <= r + 1e-12 && contains(&point) {
            admit(point, &mut net, &mut hash)?;
        }
        // odometer
        for d in 0..dim {
            idx[d] += 1;
            if idx[d] < steps {
                continue 'outer;
            }
            idx[d] = 0;
        }
        break;
    }
    Ok(net)
}

/// Deterministic in-region seed points for the greedy net.
fn region_seeds(region: &crate::geometry::BaseRegion, count: usize) -> Vec<Vec<f64>> {
    let mut rng = crate::rng::SplitRng::seed_from_u64(0x5EED);
    (0..count).map(|_| region.sample(&mut rng)).collect()
}

fn neighbor_keys(k: &[i64]) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for &c in k {
        let mut next = Vec::with_capacity(out.len() * 3);
        for prefix in &out {
            for d in -1..=1i64 {
                let mut p = prefix.clone();
                p.push(c + d);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

// ---------------------------------------------------------------------------
// Single-term sparsification
// ---------------------------------------------------------------------------

/// An eps-cover of the single-term family: explicit parameter points plus
/// the certified radii.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamCover {
    pub points: Vec<ParamVector>,
    pub radius_tv: f64,
    pub radius_euclid: f64,
    pub r_crit: f64,
}

impl ParamCover {
    /// Packing cap from the covering bound.
    pub fn size_bound(&self, dim: usize) -> f64 {
        (1.0 + 2.0 * self.r_crit / self.radius_euclid).powi(dim as i32)
    }
}

/// Sparse cover of the single-term family at TV radius `eps`.
///
/// The net lives on the rho-cone intersected with the origin ball at the
/// critical radius; when the base set is itself bounded inside that ball
/// the ball shrinks to the base bound (identical coverage, far fewer grid
/// cells). The Euclidean pitch `eps sqrt(2/Lambda)` converts to TV radius
/// `eps` through the covariance bound; the greedy radius is tightened by
/// the grid-hole factor so off-grid parameters stay covered.
pub fn sparsify_family(spec: &ExpFamilySpec, eps: f64) -> Result<ParamCover, CoverError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(CoverError::Invalid(format!("eps {eps} outside (0,1]")));
    }
    let theta = spec.resolved_theta().max(1e-12);
    let r_crit = geometry::critical_radius(
        spec.rho,
        theta,
        spec.b_moment,
        eps.min(0.999),
        spec.constants.c_rcrit,
    );
    let r_eff = match spec.base_region.norm_bound() {
        Some(b) => (b * (1.0 + 1e-9) + 1e-12).min(r_crit),
        None => r_crit,
    };
    let radius_euclid = eps * (2.0 / spec.lambda).sqrt();
    // Greedy at 3/4 of the certified radius: an off-grid point is within
    // pitch*sqrt(k)/2 = radius/4 of a candidate, hence within radius of
    // the net.
    let greedy_radius = 0.75 * radius_euclid;
    let points = euclid_cover(
        spec.dim(),
        |p| spec.rho_cone_contains(&ParamVector(p.to_vec())),
        r_eff,
        greedy_radius,
        spec.constants.grid_cap,
        &region_seeds(&spec.base_region, 48),
    )?;
    if points.is_empty() {
        return Err(CoverError::Invalid("net is empty; region/grid mismatch".into()));
    }
    Ok(ParamCover {
        points: points.into_iter().map(ParamVector).collect(),
        radius_tv: eps,
        radius_euclid,
        r_crit,
    })
}

/// Upper bound on the min-TV from `a` to the cover: oracle TV against the
/// few Euclidean-nearest points. Sound for `<= eps` assertions.
pub fn nearest_tv_in_param_cover(
    spec: &ExpFamilySpec,
    cover: &ParamCover,
    a: &ParamVector,
    tail: f64,
) -> Result<(usize, TvEstimate), CoverError> {
    let mut order: Vec<(usize, f64)> = cover
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d: Vec<f64> = p.0.iter().zip(&a.0).map(|(x, y)| x - y).collect();
            (i, geometry::norm(&d))
        })
        .collect();
    order.sort_by(|x, y| x.1.total_cmp(&y.1));
    let target = expfam::pmf_member(spec, a, tail)?;
    let mut best: Option<(usize, TvEstimate)> = None;
    for &(i, _) in order.iter().take(5) {
        let cand = expfam::pmf_member(spec, &cover.points[i], tail)?;
        let tv = pmf_core::tv_distance(&target, &cand);
        if best.as_ref().is_none_or(|(_, b)| tv.value < b.value) {
            best = Some((i, tv));
        }
    }
    Ok(best.expect("cover non-empty"))
}

// ---------------------------------------------------------------------------
// Moment matching
// ---------------------------------------------------------------------------

/// Piecewise-linear path through the parameter space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Polyline(pub Vec<Vec<f64>>);

impl Polyline {
    fn at(&self, t: f64) -> Vec<f64> {
        let pts = &self.0;
        if pts.len() == 1 {
            return pts[0].clone();
        }
        let lens: Vec<f64> = pts
            .windows(2)
            .map(|w| {
                let d: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
                geometry::norm(&d)
            })
            .collect();
        let total: f64 = lens.iter().sum();
        let mut s = t.clamp(0.0, 1.0) * total;
        for (i, &len) in lens.iter().enumerate() {
            if s <= len || i == lens.len() - 1 {
                let f = if len == 0.0 { 0.0 } else { (s / len).clamp(0.0, 1.0) };
                return pts[i]
                    .iter()
                    .zip(&pts[i + 1])
                    .map(|(a, b)| a + f * (b - a))
                    .collect();
            }
            s -= len;
        }
        pts.last().unwrap().clone()
    }
}

/// A single parameter `b` and count `m` whose i.i.d. `m`-fold sum matches
/// the target mean and variance within the one-term sandwich.
///
/// Bisection runs on `h(t) = var(t) - (target_var/target_mean) * mean(t)`
/// (on the mean itself when the target mean vanishes), which is continuous
/// across mean sign changes; the endpoints must bracket.
pub fn moment_match(
    spec: &ExpFamilySpec,
    target_mean: f64,
    target_var: f64,
    path: &Polyline,
) -> Result<(ParamVector, u64), CoverError> {
    if !(target_var > 0.0) {
        return Err(CoverError::Invalid(format!(
            "target variance {target_var} must be positive"
        )));
    }
    const TAIL: f64 = 1e-12;
    let eval = |t: f64| -> Result<(f64, f64), CoverError> {
        let a = ParamVector(path.at(t));
        let table = expfam::pmf_member(spec, &a, TAIL)?;
        let m = pmf_core::moments(&table);
        Ok((m.mean, m.variance))
    };
    let objective = |mean: f64, var: f64| -> f64 {
        if target_mean.abs() <= 1e-12 {
            mean
        } else {
            var - (target_var / target_mean) * mean
        }
    };
    let (m0, v0) = eval(0.0)?;
    let (m1, v1) = eval(1.0)?;
    let f0 = objective(m0, v0);
    let f1 = objective(m1, v1);
    if f0 != 0.0 && f1 != 0.0 && (f0 < 0.0) == (f1 < 0.0) {
        return Err(CoverError::BracketFailure { left: f0, right: f1 });
    }
    let (mut lo, mut hi) = if f0 <= 0.0 { (0.0, 1.0) } else { (1.0, 0.0) };
    for _ in 0..90 {
        let mid = 0.5 * (lo + hi);
        let (mm, vm) = eval(mid)?;
        if objective(mm, vm) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t_star = 0.5 * (lo + hi);
    let b = ParamVector(path.at(t_star));
    let (_, vb) = eval(t_star)?;
    // Relative guard keeps exact-multiple targets off the ceiling knife edge.
    let mut m = ((target_var / vb) * (1.0 - 1e-9)).ceil() as u64;
    while (m as f64) * vb < target_var * (1.0 - 1e-9) {
        m += 1;
    }
    Ok((b, m.max(1)))
}

// ---------------------------------------------------------------------------
// SIIERV covers
// ---------------------------------------------------------------------------

/// Term-count thresholds whose max splits the sparse and dense regimes.
pub fn n_crit_threshold(spec: &ExpFamilySpec, eps: f64) -> f64 {
    let b = spec.b_moment;
    let g = spec.gamma;
    let l = spec.l_mode;
    let c = &spec.constants;
    let e2 = eps * eps;
    let n1 = c.c_n1 * b * b / (e2 * g.powi(3));
    let n2 = c.c_n2 * b.powi(7) / (e2 * g.powi(7));
    let n3 = c.c_n3 * b.powf(7.5) / (e2 * g.powi(8));
    let n4 = c.c_n4 * (l * l + b.sqrt()) / (e2 * g * g);
    n1.max(n2).max(n3).max(n4).ceil().max(1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseCover {
    pub param_cover: ParamCover,
    /// Regime threshold (saturating; the float value drives the pitch).
    pub n_crit: u64,
    /// Largest multiset size the enumeration considers: min(n, n_crit).
    pub max_terms: u64,
}

/// Dense-side generator: the parameter net crossed with a contiguous count
/// range. Candidates are enumerated, never materialized wholesale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseCover {
    pub net: Vec<ParamVector>,
    pub m_lo: u64,
    pub m_hi: u64,
}

impl DenseCover {
    pub fn is_empty(&self) -> bool {
        self.net.is_empty() || self.m_lo > self.m_hi
    }

    pub fn count(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.net.len() as f64 * (self.m_hi - self.m_lo + 1) as f64
        }
    }

    /// Explicit (b, m) list for external consumers; errors past the cap.
    pub fn to_list(&self, cap: usize) -> Result<Vec<(ParamVector, u64)>, CoverError> {
        if self.count() > cap as f64 {
            return Err(CoverError::GridOverflow { candidates: self.count() as usize, cap });
        }
        let mut out = Vec::new();
        for b in &self.net {
            for m in self.m_lo..=self.m_hi {
                out.push((b.clone(), m));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverSet {
    pub sparse: SparseCover,
    pub dense: DenseCover,
    pub eps: f64,
    pub order: u64,
}

impl CoverSet {
    /// Wire format: sparse part as `{param_points, n_crit, max_terms}`,
    /// dense part as an explicit `(b, m)` list. Errors when the dense
    /// product exceeds the cap.
    pub fn to_external_json(&self, dense_cap: usize) -> Result<serde_json::Value, CoverError> {
        let dense: Vec<serde_json::Value> = self
            .dense
            .to_list(dense_cap)?
            .into_iter()
            .map(|(b, m)| serde_json::json!({"b": b.0, "m": m}))
            .collect();
        Ok(serde_json::json!({
            "sparse": {
                "param_points": self.sparse.param_cover.points.iter().map(|p| p.0.clone()).collect::<Vec<_>>(),
                "n_crit": self.sparse.n_crit,
                "max_terms": self.sparse.max_terms,
                "radius_tv": self.sparse.param_cover.radius_tv,
                "radius_euclid": self.sparse.param_cover.radius_euclid,
                "r_crit": self.sparse.param_cover.r_crit,
            },
            "dense": dense,
            "eps": self.eps,
            "order": self.order,
        }))
    }

    /// Rebuild from the wire format; the dense enumeration handle is
    /// regenerated from the explicit list (net = unique points, count
    /// range = observed min..max).
    pub fn from_external_json(v: &serde_json::Value) -> Result<Self, CoverError> {
        let bad = |m: &str| CoverError::Invalid(format!("external cover json: {m}"));
        let sparse = v.get("sparse").ok_or_else(|| bad("missing sparse"))?;
        let points: Vec<ParamVector> =
            serde_json::from_value(sparse.get("param_points").cloned().ok_or_else(|| bad("missing param_points"))?)
                .map_err(|e| bad(&e.to_string()))?;
        let param_cover = ParamCover {
            points,
            radius_tv: sparse["radius_tv"].as_f64().unwrap_or(0.0),
            radius_euclid: sparse["radius_euclid"].as_f64().unwrap_or(0.0),
            r_crit: sparse["r_crit"].as_f64().unwrap_or(0.0),
        };
        let n_crit = sparse["n_crit"].as_u64().ok_or_else(|| bad("missing n_crit"))?;
        let max_terms = sparse["max_terms"].as_u64().ok_or_else(|| bad("missing max_terms"))?;
        let dense_list = v["dense"].as_array().ok_or_else(|| bad("missing dense"))?;
        let mut net: Vec<ParamVector> = Vec::new();
        let mut m_lo = u64::MAX;
        let mut m_hi = 0u64;
        for entry in dense_list {
            let b: Vec<f64> = serde_json::from_value(entry["b"].clone())
                .map_err(|e| bad(&e.to_string()))?;
            let m = entry["m"].as_u64().ok_or_else(|| bad("missing m"))?;
            let pv = ParamVector(b);
            if !net.contains(&pv) {
                net.push(pv);
            }
            m_lo = m_lo.min(m);
            m_hi = m_hi.max(m);
        }
        let dense = if dense_list.is_empty() {
            DenseCover { net: vec![], m_lo: 1, m_hi: 0 }
        } else {
            DenseCover { net, m_lo, m_hi }
        };
        Ok(CoverSet {
            sparse: SparseCover { param_cover, n_crit, max_terms },
            dense,
            eps: v["eps"].as_f64().ok_or_else(|| bad("missing eps"))?,
            order: v["order"].as_u64().unwrap_or(1),
        })
    }
}

/// Weakly-proper eps-cover for order-`n` sums of family members.
///
/// Sparse side: the single-term net at per-term accuracy `eps / n_crit`,
/// with candidates all multisets of at most `min(n, n_crit)` net points.
/// Dense side: i.i.d. sums `(b, m)` with `b` on a net of the base set at
/// pitch `(eps / m_hi) sqrt(2/Lambda)` and `m` spanning
/// `[ceil(n_crit gamma / sqrt B), ceil(n sqrt B / gamma)]` (empty when the
/// lower end exceeds the upper).
pub fn cover_siierv(spec: &ExpFamilySpec, n: u64, eps: f64) -> Result<CoverSet, CoverError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CoverError::Invalid(format!("eps {eps} outside (0,1)")));
    }
    if n == 0 {
        return Err(CoverError::Invalid("order n must be positive".into()));
    }
    let n_crit_f = n_crit_threshold(spec, eps);
    let n_crit = if n_crit_f >= u64::MAX as f64 { u64::MAX } else { n_crit_f as u64 };
    let per_term_eps = eps / n_crit_f;
    let param_cover = sparsify_family(spec, per_term_eps)?;
    let sparse = SparseCover {
        param_cover,
        n_crit,
        max_terms: n.min(n_crit),
    };

    let m_lo_f = (n_crit_f * spec.gamma / spec.b_moment.sqrt()).ceil();
    let m_hi_f = (n as f64 * spec.b_moment.sqrt() / spec.gamma).ceil();
    let dense = if m_lo_f > m_hi_f {
        DenseCover { net: vec![], m_lo: 1, m_hi: 0 }
    } else {
        let m_hi = m_hi_f as u64;
        let pitch_eps = (eps / m_hi_f).min(1.0);
        let radius_euclid = pitch_eps * (2.0 / spec.lambda).sqrt();
        let r = spec
            .base_region
            .norm_bound()
            .ok_or_else(|| CoverError::Invalid("dense net needs a bounded base set".into()))?
            * (1.0 + 1e-9)
            + 1e-12;
        let net = euclid_cover(
            spec.dim(),
            |p| spec.base_region.contains(p),
            r,
            0.75 * radius_euclid,
            spec.constants.grid_cap,
            &region_seeds(&spec.base_region, 48),
        )?;
        DenseCover {
            net: net.into_iter().map(ParamVector).collect(),
            m_lo: m_lo_f as u64,
            m_hi,
        }
    };

    Ok(CoverSet { sparse, dense, eps, order: n })
}

/// `m`-fold i.i.d. sum of a term table, by binary exponentiation.
pub fn iid_sum_table(
    term: &PMFTable,
    m: u64,
    cap: usize,
    trim: f64,
) -> Result<PMFTable, CoverError> {
    if m == 0 {
        return Err(CoverError::Invalid("m must be positive".into()));
    }
    let mut result: Option<PMFTable> = None;
    let mut power = term.clone();
    let mut left = m;
    loop {
        if left & 1 == 1 {
            result = Some(match result {
                None => power.clone(),
                Some(r) => pmf_core::convolve(&r, &power, cap, trim)?,
            });
        }
        left >>= 1;
        if left == 0 {
            break;
        }
        power = pmf_core::convolve(&power, &power, cap, trim)?;
    }
    Ok(result.expect("m >= 1"))
}

fn binom_f64(n: f64, k: u64) -> f64 {
    let mut acc = 1.0f64;
    for i in 0..k {
        acc *= (n - i as f64) / (k - i) as f64;
        if acc.is_infinite() {
            return f64::INFINITY;
        }
    }
    acc
}

/// Number of multisets of size 1..=max from `npts` points.
pub fn multiset_count(npts: usize, max: u64) -> f64 {
    let mut total = 0.0f64;
    for s in 1..=max.min(10_000) {
        total += binom_f64((npts as u64 + s - 1) as f64, s);
        if total.is_infinite() || total > 1e18 {
            return f64::INFINITY;
        }
    }
    if max > 10_000 {
        f64::INFINITY
    } else {
        total
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CandidateId {
    /// Net-point indices of the multiset (non-decreasing).
    Sparse(Vec<usize>),
    Dense { net_idx: usize, m: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NearestReport {
    pub candidate: CandidateId,
    pub tv: TvEstimate,
    /// Budget forced the moment-guided search instead of full enumeration.
    pub heuristic: bool,
    /// The sparse side alone achieved the reported distance.
    pub from_sparse: bool,
}

/// Closest cover candidate to a target pmf, by oracle TV.
///
/// Sparse multisets are enumerated exhaustively while the count fits the
/// budget; beyond it a moment-guided beam (i.i.d. assemblies refined by
/// neighbor swaps) stands in, flagged as heuristic. The reported TV is an
/// upper bound on the true minimum either way.
pub fn nearest_in_cover(
    x_pmf: &PMFTable,
    cover: &CoverSet,
    spec: &ExpFamilySpec,
) -> Result<NearestReport, CoverError> {
    const TAIL: f64 = 1e-10;
    let cap = spec.constants.convolve_cap;
    let trim = spec.constants.trim_mass;
    let budget = spec.constants.sparse_budget;
    let points = &cover.sparse.param_cover.points;

    let mut best: Option<(CandidateId, TvEstimate, bool)> = None;
    let consider = |id: CandidateId,
                        table: &PMFTable,
                        sparse_side: bool,
                        best: &mut Option<(CandidateId, TvEstimate, bool)>| {
        let tv = pmf_core::tv_distance(x_pmf, table);
        if best.as_ref().is_none_or(|(_, b, _)| tv.value < b.value) {
            *best = Some((id, tv, sparse_side));
        }
    };

    let count = multiset_count(points.len(), cover.sparse.max_terms);
    let mut heuristic = false;
    if count <= budget as f64 {
        // Exhaustive depth-first enumeration with incremental convolutions.
        let tables: Vec<PMFTable> = points
            .iter()
            .map(|p| expfam::pmf_member(spec, p, TAIL))
            .collect::<Result<_, _>>()?;
        let mut stack: Vec<(usize, u64, PMFTable, Vec<usize>)> = Vec::new();
        for (i, t) in tables.iter().enumerate() {
            stack.push((i, 1, t.clone(), vec![i]));
        }
        while let Some((start, size, table, ids)) = stack.pop() {
            consider(CandidateId::Sparse(ids.clone()), &table, true, &mut best);
            if size < cover.sparse.max_terms {
                for (j, tj) in tables.iter().enumerate().skip(start) {
                    let next = pmf_core::convolve(&table, tj, cap, trim)?;
                    let mut nids = ids.clone();
                    nids.push(j);
                    stack.push((j, size + 1, next, nids));
                }
            }
        }
    } else {
        heuristic = true;
        let xm = pmf_core::moments(x_pmf);
        // Probe a subsample of the net for moments.
        let stride = (points.len() / 512).max(1);
        let mut probes: Vec<(usize, f64, f64)> = Vec::new();
        for i in (0..points.len()).step_by(stride) {
            let t = expfam::pmf_member(spec, &points[i], TAIL)?;
            let m = pmf_core::moments(&t);
            probes.push((i, m.mean, m.variance));
        }
        // Beam of (m', net index) scored by relative moment mismatch.
        let mut scored: Vec<(f64, u64, usize)> = Vec::new();
        let max_terms = cover.sparse.max_terms.min(4 * cover.order);
        for mp in 1..=max_terms {
            for &(i, mean, var) in &probes {
                let dm = (xm.mean - mp as f64 * mean).abs() / (1.0 + xm.variance.sqrt());
                let dv = (xm.variance - mp as f64 * var).abs() / (1.0 + xm.variance);
                scored.push((dm + dv, mp, i));
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(_, mp, i) in scored.iter().take(8) {
            let term = expfam::pmf_member(spec, &points[i], TAIL)?;
            let table = iid_sum_table(&term, mp, cap, trim)?;
            consider(CandidateId::Sparse(vec![i; mp as usize]), &table, true, &mut best);
            // Neighbor swap refinement: replace copies of i by an adjacent
            // net point to fine-tune the mean.
            for j in [i.saturating_sub(1), (i + 1).min(points.len() - 1)] {
                if j == i || mp < 2 {
                    continue;
                }
                let other = expfam::pmf_member(spec, &points[j], TAIL)?;
                for swaps in [1u64, mp / 2, mp - 1] {
                    if swaps == 0 || swaps >= mp {
                        continue;
                    }
                    let part1 = iid_sum_table(&term, mp - swaps, cap, trim)?;
                    let part2 = iid_sum_table(&other, swaps, cap, trim)?;
                    let table = pmf_core::convolve(&part1, &part2, cap, trim)?;
                    let mut ids = vec![i; (mp - swaps) as usize];
                    ids.extend(vec![j; swaps as usize]);
                    ids.sort_unstable();
                    consider(CandidateId::Sparse(ids), &table, true, &mut best);
                }
            }
        }
    }

    // Dense side.
    if !cover.dense.is_empty() {
        let xm = pmf_core::moments(x_pmf);
        if cover.dense.count() <= budget as f64 {
            for (bi, b) in cover.dense.net.iter().enumerate() {
                let term = expfam::pmf_member(spec, b, TAIL)?;
                for m in cover.dense.m_lo..=cover.dense.m_hi {
                    let table = iid_sum_table(&term, m, cap, trim)?;
                    consider(CandidateId::Dense { net_idx: bi, m }, &table, false, &mut best);
                }
            }
        } else {
            heuristic = true;
            // Moment-guided: try nets near the variance-matched count.
            let mut tried = 0usize;
            let stride = (cover.dense.net.len() / 64).max(1);
            for (bi, b) in cover.dense.net.iter().enumerate().step_by(stride) {
                let term = expfam::pmf_member(spec, b, TAIL)?;
                let tm = pmf_core::moments(&term);
                if tm.variance <= 0.0 {
                    continue;
                }
                let m_star = (xm.variance / tm.variance).round() as i64;
                for dm in -2..=2i64 {
                    let m = (m_star + dm).max(cover.dense.m_lo as i64) as u64;
                    if m < cover.dense.m_lo || m > cover.dense.m_hi {
                        continue;
                    }
                    let table = iid_sum_table(&term, m, cap, trim)?;
                    consider(CandidateId::Dense { net_idx: bi, m }, &table, false, &mut best);
                    tried += 1;
                }
                if tried > 512 {
                    break;
                }
            }
        }
    }

    let (candidate, tv, from_sparse) =
        best.ok_or_else(|| CoverError::Invalid("cover has no candidates".into()))?;
    Ok(NearestReport { candidate, tv, heuristic, from_sparse })
}

// ---------------------------------------------------------------------------
// SIIURV covers (nonparametric)
// ---------------------------------------------------------------------------

/// Sparse-side generator for nonparametric sums: intervals indexed by the
/// candidate mode-sum, each carrying all level-`q` quantized pmfs on its
/// window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizedSparse {
    pub center_lo: i64,
    pub center_hi: i64,
    pub half_width: i64,
    pub levels: u64,
}

impl QuantizedSparse {
    pub fn window_len(&self) -> u64 {
        2 * self.half_width as u64 + 1
    }

    pub fn per_interval_count(&self) -> f64 {
        binom_f64(
            (self.levels + self.window_len() - 1) as f64,
            self.window_len() - 1,
        )
    }

    pub fn total_count(&self) -> f64 {
        (self.center_hi - self.center_lo + 1) as f64 * self.per_interval_count()
    }

    /// The in-cover element closest to `t` by construction: mass rounded to
    /// the level grid on the best-centered interval (largest-remainder
    /// rounding keeps the total at exactly one).
    pub fn quantize(&self, t: &PMFTable) -> PMFTable {
        let m = pmf_core::moments(t);
        let center = (m.mean.round() as i64).clamp(self.center_lo, self.center_hi);
        let lo = center - self.half_width;
        let hi = center + self.half_width;
        let q = self.levels;
        let mut units: Vec<(u64, f64, usize)> = Vec::new();
        let mut assigned = 0u64;
        for (idx, x) in (lo..=hi).enumerate() {
            let exact = t.at(x) * q as f64;
            let base = exact.floor() as u64;
            assigned += base;
            units.push((base, exact - exact.floor(), idx));
        }
        let mut leftover = q.saturating_sub(assigned);
        units.sort_by(|a, b| b.1.total_cmp(&a.1));
        for u in units.iter_mut() {
            if leftover == 0 {
                break;
            }
            u.0 += 1;
            leftover -= 1;
        }
        units.sort_by_key(|u| u.2);
        let probs: Vec<f64> = units.iter().map(|u| u.0 as f64 / q as f64).collect();
        PMFTable { lo, probs, tail_bound: 0.0 }
    }

    /// Materialize every candidate of every interval; desk scale only.
    pub fn materialize(&self, cap: usize) -> Result<Vec<PMFTable>, CoverError> {
        if self.total_count() > cap as f64 {
            return Err(CoverError::GridOverflow {
                candidates: self.total_count().min(usize::MAX as f64) as usize,
                cap,
            });
        }
        let len = self.window_len() as usize;
        let q = self.levels;
        let mut out = Vec::new();
        for center in self.center_lo..=self.center_hi {
            let lo = center - self.half_width;
            let mut comp = vec![0u64; len];
            comp[0] = q;
            loop {
                let probs: Vec<f64> = comp.iter().map(|&c| c as f64 / q as f64).collect();
                out.push(PMFTable { lo, probs, tail_bound: 0.0 });
                // next composition of q into len parts
                if comp[len - 1] == q {
                    break;
                }
                let mut i = len - 2;
                while comp[i] == 0 {
                    i -= 1;
                }
                comp[i] -= 1;
                let shift = comp[len - 1] + 1;
                comp[len - 1] = 0;
                comp[i + 1] = shift;
            }
        }
        Ok(out)
    }
}

/// Class-level sparse generator for sums of up to `n_terms` unimodal terms
/// with modes in `[-L, L]` and fourth central moments at most `B`.
pub fn siiurv_sparse_generator(
    n_terms: usize,
    l_mode: f64,
    b_moment: f64,
    eps: f64,
) -> QuantizedSparse {
    let np = n_terms as f64;
    let half_width = (np.powi(3) * b_moment * b_moment / (eps * eps)).ceil() as i64;
    let center_bound = (np * l_mode).ceil() as i64;
    let window_len = 2 * half_width as u64 + 1;
    let levels = (window_len as f64 / eps).ceil() as u64;
    QuantizedSparse {
        center_lo: -center_bound,
        center_hi: center_bound,
        half_width,
        levels,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SIIURVCover {
    pub n_prime: usize,
    pub n_crit: u64,
    pub sparse: QuantizedSparse,
    /// Moment descriptor of the given sum, for the dense regime.
    pub dense: crate::approx::GaussianParams,
}

/// Cover description for a nonparametric sum of unimodal terms.
///
/// `gamma` here is the mode-mass gap (every term's mode carries at most
/// `1 - gamma`), distinct from the variance floor of the parametric path.
pub fn cover_siiurv(
    terms: &[PMFTable],
    l_mode: f64,
    b_moment: f64,
    gamma: f64,
    eps: f64,
    constants: &Constants,
) -> Result<SIIURVCover, CoverError> {
    if terms.is_empty() {
        return Err(CoverError::Invalid("need at least one term".into()));
    }
    if !(eps > 0.0 && eps < 1.0) || !(gamma > 0.0 && gamma < 1.0) {
        return Err(CoverError::Invalid("eps and gamma must lie in (0,1)".into()));
    }
    for (i, t) in terms.iter().enumerate() {
        let (modes, unimodal) = pmf_core::modes_of(t);
        if !unimodal {
            return Err(CoverError::Invalid(format!("term {i} is not unimodal")));
        }
        if modes.iter().any(|&m| (m as f64).abs() > l_mode) {
            return Err(CoverError::Invalid(format!("term {i} has a mode outside [-L, L]")));
        }
    }
    let n_prime = terms.len();
    let n_crit = (b_moment * b_moment / (gamma.powi(3) * eps * eps)).ceil();
    let sparse = siiurv_sparse_generator(n_prime, l_mode, b_moment, eps);

    let sum = pmf_core::sum_pmf(
        &pmf_core::SIIRVSpec::new(
            terms.iter().cloned().map(pmf_core::Term::Table).collect(),
            n_prime,
        )?,
        None,
        1e-12,
        constants.convolve_cap,
        constants.trim_mass,
    )?;
    let m = pmf_core::moments(&sum);
    Ok(SIIURVCover {
        n_prime,
        n_crit: if n_crit >= u64::MAX as f64 { u64::MAX } else { n_crit as u64 },
        sparse,
        dense: crate::approx::GaussianParams::new(m.mean, m.variance.max(1e-12)),
    })
}

// ---------------------------------------------------------------------------
// Poisson Negative Binomials
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PNBDSpec {
    pub probs: Vec<f64>,
    pub p_low: f64,
    pub kappa: f64,
}

impl PNBDSpec {
    pub fn new(probs: Vec<f64>, p_low: f64, kappa: f64) -> Result<Self, CoverError> {
        if !(kappa > 1.0) {
            return Err(CoverError::Invalid(format!("kappa {kappa} must exceed 1")));
        }
        if !(p_low > 0.0 && p_low <= 1.0) {
            return Err(CoverError::Invalid(format!("p_low {p_low} outside (0,1]")));
        }
        if probs.iter().any(|&p| p < p_low - 1e-12 || p > 1.0) {
            return Err(CoverError::Invalid(
                "success probabilities must lie in [p_low, 1]".into(),
            ));
        }
        Ok(PNBDSpec { probs, p_low, kappa })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassageResult {
    /// Post-massage success probabilities (dropped terms removed).
    pub surviving: Vec<f64>,
    pub replaced: usize,
    pub dropped: usize,
    pub tv_overhead: f64,
    /// |sum of replaced-block means before vs after|.
    pub expectation_gap: f64,
}

/// Replace the high-success (low-variance) geometric terms by a rounded
/// block at success `1 - 1/kappa`, with certified TV overhead `3/(kappa-1)`.
pub fn pnbd_massage(pnbd: &PNBDSpec) -> MassageResult {
    let kappa = pnbd.kappa;
    let p_cut = 1.0 - 1.0 / kappa;
    let mean = |p: f64| (1.0 - p) / p;
    let replaced_mean = mean(p_cut); // 1/(kappa - 1)

    let block: Vec<f64> = pnbd.probs.iter().copied().filter(|&p| p > p_cut).collect();
    let keep: Vec<f64> = pnbd.probs.iter().copied().filter(|&p| p <= p_cut).collect();
    let block_mean: f64 = block.iter().map(|&p| mean(p)).sum();

    // Minimal prefix of identical replaced terms covering the block mean.
    let k_star = if block.is_empty() {
        0
    } else {
        ((block_mean / replaced_mean).ceil() as usize).min(block.len())
    };
    let expectation_gap = (block_mean - k_star as f64 * replaced_mean).abs();

    let mut surviving = keep;
    surviving.extend(std::iter::repeat_n(p_cut, k_star));
    MassageResult {
        surviving,
        replaced: k_star,
        dropped: block.len() - k_star,
        tv_overhead: 3.0 / (kappa - 1.0),
        expectation_gap,
    }
}

/// Poisson-approximation bound for a sum of geometrics:
/// `min(1, 1/lambda) * sum ((1-p_i)/p_i)^2` with `lambda = sum (1-p_i)/p_i`.
pub fn poisson_approx_bound(probs: &[f64]) -> f64 {
    let lambda: f64 = probs.iter().map(|&p| (1.0 - p) / p).sum();
    let sq: f64 = probs.iter().map(|&p| ((1.0 - p) / p).powi(2)).sum();
    if lambda <= 0.0 {
        return 0.0;
    }
    (1.0f64).min(1.0 / lambda) * sq
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PNBDCover {
    pub kappa: f64,
    pub massage_overhead: f64,
    pub eps_inner: f64,
    pub family: ExpFamilySpec,
    pub sparse: SparseCover,
    /// Dense side: Negative Binomial candidates (m, b) with m in
    /// [1, m_max] and b on a per-m net at pitch (eps_inner/m) sqrt(2/Lambda).
    pub dense_m_max: u64,
}

impl PNBDCover {
    /// The per-m parameter net of the dense side.
    pub fn dense_net_for_m(&self, m: u64) -> Result<Vec<ParamVector>, CoverError> {
        let pitch = (self.eps_inner / m as f64) * (2.0 / self.family.lambda).sqrt();
        let r = self.family.base_region.norm_bound().unwrap() * (1.0 + 1e-9) + 1e-12;
        let net = euclid_cover(
            1,
            |p| self.family.base_region.contains(p),
            r,
            0.75 * pitch,
            self.family.constants.grid_cap,
            &region_seeds(&self.family.base_region, 16),
        )?;
        Ok(net.into_iter().map(ParamVector).collect())
    }

    /// Moment-guided nearest dense Negative Binomial to a target pmf.
    pub fn nearest_dense(
        &self,
        x_pmf: &PMFTable,
    ) -> Result<((u64, ParamVector), TvEstimate), CoverError> {
        let xm = pmf_core::moments(x_pmf);
        if xm.variance <= 0.0 || xm.mean <= 0.0 {
            return Err(CoverError::Invalid("target needs positive mean and variance".into()));
        }
        // Geometric: var/mean = 1/p, mean = (1-p)/p.
        let p_star = (xm.mean / xm.variance).clamp(1e-9, 1.0 - 1e-9);
        let m_star = (xm.mean / ((1.0 - p_star) / p_star)).round().max(1.0) as u64;
        let cap = self.family.constants.convolve_cap;
        let trim = self.family.constants.trim_mass;
        let mut best: Option<((u64, ParamVector), TvEstimate)> = None;
        for dm in -3..=3i64 {
            let m = (m_star as i64 + dm).max(1) as u64;
            if m > self.dense_m_max {
                continue;
            }
            let net = self.dense_net_for_m(m)?;
            // Walk the few net points nearest the ratio-matched parameter.
            let a_star = -(1.0 - p_star).ln();
            let mut order: Vec<(usize, f64)> = net
                .iter()
                .enumerate()
                .map(|(i, b)| (i, (b.0[0] - a_star).abs()))
                .collect();
            order.sort_by(|a, b| a.1.total_cmp(&b.1));
            for &(i, _) in order.iter().take(4) {
                let term = expfam::pmf_member(&self.family, &net[i], 1e-10)?;
                let table = iid_sum_table(&term, m, cap, trim)?;
                let tv = pmf_core::tv_distance(x_pmf, &table);
                if best.as_ref().is_none_or(|(_, b)| tv.value < b.value) {
                    best = Some(((m, net[i].clone()), tv));
                }
            }
        }
        best.ok_or_else(|| CoverError::Invalid("no dense candidate in range".into()))
    }
}

/// Proper cover for sums of geometrics with success at least `p_low`:
/// massage at `kappa = ceil(1 + c_kappa/eps)`, then the parametric pipeline
/// on the geometric family over `[-ln(1-p_low), ln(kappa)]`.
pub fn pnbd_cover(
    p_low: f64,
    n: u64,
    eps: f64,
    constants: &Constants,
) -> Result<PNBDCover, CoverError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CoverError::Invalid(format!("eps {eps} outside (0,1)")));
    }
    let kappa = (1.0 + constants.c_kappa / eps).ceil();
    let overhead = 3.0 / (kappa - 1.0);
    if overhead >= eps {
        return Err(CoverError::Invalid(format!(
            "massage overhead {overhead} eats the whole budget {eps}; raise c_kappa"
        )));
    }
    let eps_inner = eps - overhead;
    let a_lo = -(1.0 - p_low).ln();
    let a_hi = kappa.ln();
    if a_hi <= a_lo {
        return Err(CoverError::Invalid("p_low already above the massage cut".into()));
    }
    let family = crate::catalog::geometric_family_with(a_lo, a_hi, constants.clone());

    let n_crit_f = n_crit_threshold(&family, eps_inner);
    let n_crit = if n_crit_f >= u64::MAX as f64 { u64::MAX } else { n_crit_f as u64 };
    let max_terms = n.min(n_crit);
    let per_term_eps = eps_inner / max_terms as f64;
    let param_cover = sparsify_family(&family, per_term_eps)?;
    let sparse = SparseCover { param_cover, n_crit, max_terms };
    let dense_m_max = (n as f64 * family.b_moment.sqrt() / family.gamma).ceil() as u64;
    Ok(PNBDCover {
        kappa,
        massage_overhead: overhead,
        eps_inner,
        family,
        sparse,
        dense_m_max,
    })
}

//! The exponential-family engine.
//!
//! Members have pmf proportional to `exp(-a . T(x))` over an integer
//! support. Everything here works from the mode-normalized weights
//! `w(x) = exp(-a . (T(x) - T(M)))`: windows are grown around the modes
//! until an analytic envelope certifies the mass left outside, so the
//! resulting [`PMFTable`]s carry honest tail bounds even for heavy-tailed
//! members like the Zeta family.

use crate::config::Constants;
use crate::geometry::{self, BaseRegion, ConeDescription, ConeGeometry};
use crate::pmf_core::{self, PMFTable};
use crate::rng::SplitRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpFamError {
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("window of {needed} entries exceeds cap {cap}")]
    WindowOverflow { needed: usize, cap: usize },
    #[error("explicit statistic table does not cover x = {x}")]
    TableWindow { x: i64 },
    #[error("invalid family spec: {0}")]
    InvalidSpec(String),
    #[error("parameter outside rho-cone of the family")]
    OutsideDomain,
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
}

/// Integer supports the engine understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    #[serde(rename = "Z")]
    Integers,
    #[serde(rename = "N0")]
    NaturalsWithZero,
    #[serde(rename = "N")]
    Naturals,
}

impl Support {
    pub fn min(&self) -> Option<i64> {
        match self {
            Support::Integers => None,
            Support::NaturalsWithZero => Some(0),
            Support::Naturals => Some(1),
        }
    }

    pub fn contains(&self, x: i64) -> bool {
        match self.min() {
            None => true,
            Some(m) => x >= m,
        }
    }
}

/// One coordinate of the sufficient statistic: a catalog form or an
/// explicit table over a declared window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StatCoord {
    Named(CatalogStat),
    Table { lo: i64, values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CatalogStat {
    #[serde(rename = "x")]
    Identity,
    #[serde(rename = "x2")]
    Square,
    #[serde(rename = "abs")]
    Abs,
    #[serde(rename = "log")]
    Log,
}

impl StatCoord {
    fn eval(&self, x: i64) -> Result<f64, ExpFamError> {
        match self {
            StatCoord::Named(CatalogStat::Identity) => Ok(x as f64),
            StatCoord::Named(CatalogStat::Square) => Ok((x as f64) * (x as f64)),
            StatCoord::Named(CatalogStat::Abs) => Ok((x as f64).abs()),
            StatCoord::Named(CatalogStat::Log) => {
                if x >= 1 {
                    Ok((x as f64).ln())
                } else {
                    Err(ExpFamError::InvalidSpec(format!("log statistic at x = {x}")))
                }
            }
            StatCoord::Table { lo, values } => {
                let idx = x - lo;
                if idx < 0 || idx as usize >= values.len() {
                    Err(ExpFamError::TableWindow { x })
                } else {
                    Ok(values[idx as usize])
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SufficientStats {
    pub coords: Vec<StatCoord>,
    pub support: Support,
}

impl SufficientStats {
    pub fn new(coords: Vec<StatCoord>, support: Support) -> Result<Self, ExpFamError> {
        if coords.is_empty() {
            return Err(ExpFamError::InvalidSpec("empty statistic vector".into()));
        }
        if coords
            .iter()
            .any(|c| matches!(c, StatCoord::Named(CatalogStat::Log)))
            && support != Support::Naturals
        {
            return Err(ExpFamError::InvalidSpec(
                "log statistic requires support N".into(),
            ));
        }
        Ok(SufficientStats { coords, support })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn eval(&self, x: i64) -> Result<Vec<f64>, ExpFamError> {
        self.coords.iter().map(|c| c.eval(x)).collect()
    }

    /// `a . T(x)`.
    pub fn score(&self, a: &[f64], x: i64) -> Result<f64, ExpFamError> {
        let mut acc = 0.0;
        for (c, &ai) in self.coords.iter().zip(a) {
            acc += ai * c.eval(x)?;
        }
        Ok(acc)
    }
}

/// Parameter vector of a family member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn norm(&self) -> f64 {
        geometry::norm(&self.0)
    }
}

/// Inputs to the deviation-tail radius formula.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailRadiusParams {
    pub kappa: f64,
    pub eta: f64,
    pub s: u8,
    pub c_tail: f64,
}

impl TailRadiusParams {
    pub fn new(kappa: f64, eta: f64, s: u8, c_tail: f64) -> Result<Self, ExpFamError> {
        if kappa <= 0.0 || eta <= 0.0 || c_tail <= 0.0 || s > 2 {
            return Err(ExpFamError::InvalidSpec("tail-radius parameters out of range".into()));
        }
        if eta + s as f64 >= 3.0 {
            return Err(ExpFamError::InvalidSpec(format!(
                "eta + s = {} must stay below 3",
                eta + s as f64
            )));
        }
        Ok(TailRadiusParams { kappa, eta, s, c_tail })
    }
}

/// Radius beyond which the pointwise envelope of the deviation lemma holds:
/// `ell = ceil(c_tail * exp(kappa/(3-eta-s)) * B^{5/(4(3-eta-s))})`.
pub fn tail_radius(params: &TailRadiusParams, b_moment: f64) -> i64 {
    let denom = 3.0 - params.eta - params.s as f64;
    let ell = params.c_tail * (params.kappa / denom).exp() * b_moment.powf(5.0 / (4.0 * denom));
    ell.ceil() as i64
}

/// An exponential family together with its structural constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ExpFamilySpecRaw", into = "ExpFamilySpecRaw")]
pub struct ExpFamilySpec {
    pub t: SufficientStats,
    pub cone: ConeDescription,
    pub base_region: BaseRegion,
    pub rho: f64,
    /// Mode range: every mode of every member lies in `[-L, L]`.
    pub l_mode: f64,
    /// Fourth-central-moment bound.
    pub b_moment: f64,
    /// Variance floor on the base set.
    pub gamma: f64,
    /// Covariance spectral bound on the convex hull.
    pub lambda: f64,
    pub theta: Option<f64>,
    pub constants: Constants,
    #[serde(skip)]
    geom: ConeGeometry,
}

#[derive(Serialize, Deserialize)]
struct ExpFamilySpecRaw {
    #[serde(rename = "T")]
    t: SufficientStats,
    cone: ConeDescription,
    base_region: BaseRegion,
    rho: f64,
    #[serde(rename = "L")]
    l_mode: f64,
    #[serde(rename = "B")]
    b_moment: f64,
    gamma: f64,
    #[serde(rename = "Lambda")]
    lambda: f64,
    #[serde(default)]
    theta: Option<f64>,
    #[serde(default)]
    constants: Constants,
}

impl TryFrom<ExpFamilySpecRaw> for ExpFamilySpec {
    type Error = ExpFamError;
    fn try_from(raw: ExpFamilySpecRaw) -> Result<Self, ExpFamError> {
        ExpFamilySpec::new(
            raw.t,
            raw.cone,
            raw.base_region,
            raw.rho,
            raw.l_mode,
            raw.b_moment,
            raw.gamma,
            raw.lambda,
            raw.theta,
            raw.constants,
        )
    }
}

impl From<ExpFamilySpec> for ExpFamilySpecRaw {
    fn from(s: ExpFamilySpec) -> Self {
        ExpFamilySpecRaw {
            t: s.t,
            cone: s.cone,
            base_region: s.base_region,
            rho: s.rho,
            l_mode: s.l_mode,
            b_moment: s.b_moment,
            gamma: s.gamma,
            lambda: s.lambda,
            theta: s.theta,
            constants: s.constants,
        }
    }
}

impl ExpFamilySpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        t: SufficientStats,
        cone: ConeDescription,
        base_region: BaseRegion,
        rho: f64,
        l_mode: f64,
        b_moment: f64,
        gamma: f64,
        lambda: f64,
        theta: Option<f64>,
        constants: Constants,
    ) -> Result<Self, ExpFamError> {
        for (name, v) in [
            ("rho", rho),
            ("L", l_mode),
            ("B", b_moment),
            ("gamma", gamma),
            ("Lambda", lambda),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ExpFamError::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(th) = theta {
            if !(th > 0.0) {
                return Err(ExpFamError::InvalidSpec(format!("theta must be positive, got {th}")));
            }
        }
        if t.dim() != cone.dim || base_region.dim() != cone.dim {
            return Err(ExpFamError::InvalidSpec("dimension mismatch".into()));
        }
        let mut geom = geometry::theta_for_cone(&cone)?;
        if let Some(th) = theta {
            geom.theta = th;
        }
        // Spot-check: the base set must sit inside its declared cone.
        let mut probe = SplitRng::seed_from_u64(0xB45E);
        for _ in 0..64 {
            let p = base_region.sample(&mut probe);
            if !cone.contains(&p) {
                return Err(ExpFamError::InvalidSpec(format!(
                    "base region point {p:?} escapes the cone"
                )));
            }
        }
        Ok(ExpFamilySpec {
            t,
            cone,
            base_region,
            rho,
            l_mode,
            b_moment,
            gamma,
            lambda,
            theta,
            constants,
            geom,
        })
    }

    pub fn dim(&self) -> usize {
        self.t.dim()
    }

    pub fn cone_geometry(&self) -> &ConeGeometry {
        &self.geom
    }

    pub fn resolved_theta(&self) -> f64 {
        self.geom.theta
    }

    pub fn rho_cone_contains(&self, a: &ParamVector) -> bool {
        geometry::rho_cone_contains(&self.cone, &self.base_region, self.rho, &a.0)
    }

    fn require_in_domain(&self, a: &ParamVector) -> Result<(), ExpFamError> {
        if a.0.len() != self.dim() {
            return Err(ExpFamError::InvalidSpec("parameter dimension mismatch".into()));
        }
        if self.rho_cone_contains(a) {
            Ok(())
        } else {
            Err(ExpFamError::OutsideDomain)
        }
    }
}

// Default ConeGeometry placeholder for serde(skip); immediately replaced by
// the TryFrom construction path.
impl Default for ConeGeometry {
    fn default() -> Self {
        ConeGeometry { theta: 0.0, pivot: vec![], pivot_coeffs: vec![], degenerate: true }
    }
}

/// Scan window for mode hunting: `[-ceil(L) - delta, ceil(L) + delta]` with
/// `delta = 8 ceil(L) + 64`, clipped to the support.
fn mode_scan_window(spec: &ExpFamilySpec) -> (i64, i64) {
    let l = spec.l_mode.ceil() as i64;
    let delta = 8 * l + 64;
    let lo = match spec.t.support.min() {
        Some(m) => m.max(-l - delta),
        None => -l - delta,
    };
    (lo, l + delta)
}

/// Minimizers of `a . T(x)` over the scan window, unchecked against `L`.
fn mode_scan(spec: &ExpFamilySpec, a: &ParamVector) -> Result<Vec<i64>, ExpFamError> {
    let (lo, hi) = mode_scan_window(spec);
    let mut best = f64::INFINITY;
    let mut scores = Vec::with_capacity((hi - lo + 1) as usize);
    for x in lo..=hi {
        let s = spec.t.score(&a.0, x)?;
        scores.push((x, s));
        if s < best {
            best = s;
        }
    }
    let tol = 1e-12 * (1.0 + best.abs());
    Ok(scores
        .into_iter()
        .filter(|(_, s)| *s <= best + tol)
        .map(|(x, _)| x)
        .collect())
}

/// All modes of the member at `a`, sorted ascending. Errors with
/// `AssumptionViolation` when a minimizer escapes `[-L, L]`.
pub fn mode(spec: &ExpFamilySpec, a: &ParamVector) -> Result<Vec<i64>, ExpFamError> {
    spec.require_in_domain(a)?;
    let modes = mode_scan(spec, a)?;
    let l = spec.l_mode;
    if let Some(&bad) = modes.iter().find(|&&m| (m as f64) < -l || (m as f64) > l) {
        return Err(ExpFamError::AssumptionViolation(format!(
            "mode {bad} outside [-{l}, {l}]"
        )));
    }
    Ok(modes)
}

// ---------------------------------------------------------------------------
// Certified windows
// ---------------------------------------------------------------------------

/// Lower bound on the one-step score increment beyond `edge`, walking away
/// from the modes. `None` means no bound is available yet at this edge.
fn step_rate(
    t: &SufficientStats,
    a: &[f64],
    edge: i64,
    rightward: bool,
) -> Option<(f64, f64)> {
    // Returns (rate excluding log coords, total log coefficient).
    let mut rate = 0.0;
    let mut log_coeff = 0.0;
    for (coord, &c) in t.coords.iter().zip(a) {
        match coord {
            StatCoord::Named(CatalogStat::Identity) => {
                rate += if rightward { c } else { -c };
            }
            StatCoord::Named(CatalogStat::Square) => {
                if c < 0.0 {
                    return None;
                }
                let step = if rightward {
                    c * (2.0 * edge as f64 + 1.0)
                } else {
                    c * (1.0 - 2.0 * edge as f64)
                };
                rate += step;
            }
            StatCoord::Named(CatalogStat::Abs) => {
                if c < 0.0 {
                    return None;
                }
                if rightward {
                    if edge < 0 {
                        return None;
                    }
                    rate += c;
                } else {
                    if edge > 0 {
                        return None;
                    }
                    rate += c;
                }
            }
            StatCoord::Named(CatalogStat::Log) => {
                if rightward {
                    if c >= 0.0 {
                        log_coeff += c;
                    } else {
                        // Most negative step is the first one.
                        rate += c * (1.0 + 1.0 / edge.max(1) as f64).ln();
                    }
                } else {
                    // Support is N for log coords; the left side terminates
                    // at the support boundary before this is consulted.
                    return None;
                }
            }
            StatCoord::Table { lo, values } => {
                // Exact minimum step over the remaining table range.
                let mut m = f64::INFINITY;
                if rightward {
                    let start = (edge - lo).max(0) as usize;
                    if start + 1 >= values.len() {
                        return None;
                    }
                    for i in start..values.len() - 1 {
                        m = m.min(c * (values[i + 1] - values[i]));
                    }
                } else {
                    let end = edge - lo;
                    if end < 1 || end as usize >= values.len() {
                        return None;
                    }
                    for i in 1..=end as usize {
                        m = m.min(c * (values[i - 1] - values[i]));
                    }
                }
                rate += m;
            }
        }
    }
    Some((rate, log_coeff))
}

/// Certified upper bound on the mode-normalized weight mass strictly beyond
/// `edge` (exclusive), or `None` when the envelope cannot certify yet.
fn tail_weight_bound(
    t: &SufficientStats,
    a: &[f64],
    g_min: f64,
    edge: i64,
    rightward: bool,
) -> Option<f64> {
    let (rate, log_coeff) = step_rate(t, a, edge, rightward)?;
    let next = if rightward { edge + 1 } else { edge - 1 };
    if !t.support.contains(next) {
        return Some(0.0);
    }
    let w_next = match t.score(a, next) {
        Ok(s) => (-(s - g_min)).exp(),
        Err(_) => return None,
    };
    let total_rate = rate; // log coords contribute only nonnegative steps
    if total_rate > 1e-12 {
        return Some(w_next / (1.0 - (-total_rate).exp()));
    }
    if rate >= -1e-15 && log_coeff > 1.0 && rightward {
        let r = (next.max(1)) as f64;
        return Some(w_next * (1.0 + r / (log_coeff - 1.0)));
    }
    None
}

/// Quick analytic divergence check on the non-table coordinates.
fn divergence_check(t: &SufficientStats, a: &[f64]) -> Result<(), ExpFamError> {
    let mut sq = 0.0;
    let mut id = 0.0;
    let mut ab = 0.0;
    let mut lg = 0.0;
    let mut has_table = false;
    for (coord, &c) in t.coords.iter().zip(a) {
        match coord {
            StatCoord::Named(CatalogStat::Square) => sq += c,
            StatCoord::Named(CatalogStat::Identity) => id += c,
            StatCoord::Named(CatalogStat::Abs) => ab += c,
            StatCoord::Named(CatalogStat::Log) => lg += c,
            StatCoord::Table { .. } => has_table = true,
        }
    }
    if has_table {
        return Ok(()); // asymptotics unknown; the window cap arbitrates
    }
    if sq < 0.0 {
        return Err(ExpFamError::AssumptionViolation("negative square coefficient".into()));
    }
    let sides: &[(f64, bool)] = match t.support.min() {
        None => &[(1.0, true), (-1.0, false)],
        Some(_) => &[(1.0, true)],
    };
    for &(sign, _right) in sides {
        if sq > 0.0 {
            continue;
        }
        let linear = sign * id + ab;
        if linear < 0.0 || (linear == 0.0 && lg <= 1.0) {
            return Err(ExpFamError::AssumptionViolation(format!(
                "weights do not decay (linear rate {linear}, log coefficient {lg})"
            )));
        }
    }
    Ok(())
}

/// Materialize the member at `a` as a [`PMFTable`] with certified tail at
/// most `tail_target`.
pub fn pmf_member(
    spec: &ExpFamilySpec,
    a: &ParamVector,
    tail_target: f64,
) -> Result<PMFTable, ExpFamError> {
    spec.require_in_domain(a)?;
    if !(tail_target > 0.0 && tail_target <= 0.1) {
        return Err(ExpFamError::InvalidSpec(format!(
            "tail target {tail_target} outside (0, 0.1]"
        )));
    }
    divergence_check(&spec.t, &a.0)?;
    let modes = mode_scan(spec, a)?;
    let g_min = spec.t.score(&a.0, modes[0])?;
    let (m_lo, m_hi) = (modes[0], modes[modes.len() - 1]);
    let support_min = spec.t.support.min();
    let cap = spec.constants.convolve_cap;

    let clip_lo = |x: i64| match support_min {
        Some(m) => x.max(m),
        None => x,
    };
    let mut left = clip_lo(m_lo - 2);
    let mut right = m_hi + 2;

    loop {
        let needed = (right - left + 1) as usize;
        if needed > cap {
            return Err(ExpFamError::WindowOverflow { needed, cap });
        }
        let mut weights = Vec::with_capacity(needed);
        let mut sum = 0.0;
        for x in left..=right {
            let w = (-(spec.t.score(&a.0, x)? - g_min)).exp();
            weights.push(w);
            sum += w;
        }
        let left_tail = if Some(left) == support_min {
            Some(0.0)
        } else {
            tail_weight_bound(&spec.t, &a.0, g_min, left, false)
        };
        let right_tail = tail_weight_bound(&spec.t, &a.0, g_min, right, true);
        if let (Some(lt), Some(rt)) = (left_tail, right_tail) {
            let outside = (lt + rt) / sum;
            if outside <= tail_target {
                let probs: Vec<f64> = weights.iter().map(|w| w / sum).collect();
                return Ok(PMFTable {
                    lo: left,
                    probs,
                    tail_bound: outside.max(0.0),
                });
            }
        }
        // Double each side's radius around the mode block.
        let lrad = (m_lo - left).max(1);
        let rrad = (right - m_hi).max(1);
        let new_left = clip_lo(m_lo - 2 * lrad);
        let new_right = m_hi + 2 * rrad;
        if new_left == left && new_right == right {
            return Err(ExpFamError::AssumptionViolation(
                "tail envelope never certifies on this window".into(),
            ));
        }
        left = new_left;
        right = new_right;
    }
}

/// Windowed partition-sum invariant: mode-normalized weights (window plus
/// certified tail) must stay below `c_part * B^{1/4}`.
pub fn partition_bound_check(spec: &ExpFamilySpec, a: &ParamVector) -> Result<bool, ExpFamError> {
    spec.require_in_domain(a)?;
    divergence_check(&spec.t, &a.0)?;
    let modes = mode_scan(spec, a)?;
    let g_min = spec.t.score(&a.0, modes[0])?;
    let support_min = spec.t.support.min();
    let clip_lo = |x: i64| match support_min {
        Some(m) => x.max(m),
        None => x,
    };
    let (m_lo, m_hi) = (modes[0], modes[modes.len() - 1]);
    let mut left = clip_lo(m_lo - 4);
    let mut right = m_hi + 4;
    let cap = spec.constants.convolve_cap;
    loop {
        if (right - left + 1) as usize > cap {
            return Err(ExpFamError::WindowOverflow {
                needed: (right - left + 1) as usize,
                cap,
            });
        }
        let mut sum = 0.0;
        for x in left..=right {
            sum += (-(spec.t.score(&a.0, x)? - g_min)).exp();
        }
        let lt = if Some(left) == support_min {
            Some(0.0)
        } else {
            tail_weight_bound(&spec.t, &a.0, g_min, left, false)
        };
        let rt = tail_weight_bound(&spec.t, &a.0, g_min, right, true);
        if let (Some(lt), Some(rt)) = (lt, rt) {
            let total = sum + lt + rt;
            return Ok(total <= spec.constants.c_part * spec.b_moment.powf(0.25));
        }
        let lrad = (m_lo - left).max(1);
        let rrad = (right - m_hi).max(1);
        left = clip_lo(m_lo - 2 * lrad);
        right = m_hi + 2 * rrad;
    }
}

/// Minimum relative threshold at which the two members agree on every point
/// above it. Distinct mode sets give the maximum distance 1.
pub fn structural_distance(
    spec: &ExpFamilySpec,
    a: &ParamVector,
    b: &ParamVector,
    window: (i64, i64),
) -> Result<f64, ExpFamError> {
    spec.require_in_domain(a)?;
    spec.require_in_domain(b)?;
    let modes_a = mode_scan(spec, a)?;
    let modes_b = mode_scan(spec, b)?;
    if modes_a != modes_b {
        return Ok(1.0);
    }
    let ga = spec.t.score(&a.0, modes_a[0])?;
    let gb = spec.t.score(&b.0, modes_b[0])?;

    const REL: f64 = 1e-9;
    let mut pairs = Vec::new();
    let (lo, hi) = window;
    for x in lo..=hi {
        if !spec.t.support.contains(x) {
            continue;
        }
        let ra = (-(spec.t.score(&a.0, x)? - ga)).exp();
        let rb = (-(spec.t.score(&b.0, x)? - gb)).exp();
        pairs.push((ra, rb));
    }
    let equal = |ra: f64, rb: f64| (ra - rb).abs() <= REL * ra.max(rb);

    // Candidate thresholds are the observed ratio values (plus 0); take the
    // smallest one under which every point is either equal or insignificant.
    let mut candidates: Vec<f64> = vec![0.0];
    for &(ra, rb) in &pairs {
        candidates.push(ra);
        candidates.push(rb);
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for eps in candidates {
        if pairs
            .iter()
            .all(|&(ra, rb)| equal(ra, rb) || (ra <= eps + 1e-15 && rb <= eps + 1e-15))
        {
            return Ok(eps.clamp(0.0, 1.0));
        }
    }
    Ok(1.0)
}

// ---------------------------------------------------------------------------
// Numeric assumption verifier
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    Unimodality,
    ModesInRange,
    FourthMoment,
    CovarianceEigenvalue,
    VarianceFloor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: Condition,
    pub passed: bool,
    /// Worst observed value against `threshold`.
    pub worst: f64,
    pub threshold: f64,
    pub witness: Option<String>,
    /// Within 10% of the threshold: likely a constants-tuning issue rather
    /// than a structural failure.
    pub marginal: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<ConditionCheck>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, cond: Condition) -> &ConditionCheck {
        self.checks.iter().find(|c| c.condition == cond).expect("all conditions present")
    }
}

/// Numeric check of the structural conditions on the provided parameter
/// samples. Failures are report entries with witnesses, never errors.
pub fn verify_assumptions(
    spec: &ExpFamilySpec,
    param_samples: &[ParamVector],
    window: (i64, i64),
) -> Result<AssumptionReport, ExpFamError> {
    let mut unimodal = (true, f64::NEG_INFINITY, None::<String>);
    let mut modes_ok = (true, f64::NEG_INFINITY, None::<String>);
    let mut fourth = (true, f64::NEG_INFINITY, None::<String>);
    let mut var_floor = (true, f64::INFINITY, None::<String>);
    let mut cov_eig = (true, f64::NEG_INFINITY, None::<String>);

    let mut hull_points: Vec<ParamVector> = param_samples.to_vec();
    for i in 0..param_samples.len() {
        for j in i + 1..param_samples.len() {
            if hull_points.len() >= 4 * param_samples.len().max(8) {
                break;
            }
            let mid: Vec<f64> = param_samples[i]
                .0
                .iter()
                .zip(&param_samples[j].0)
                .map(|(x, y)| 0.5 * (x + y))
                .collect();
            hull_points.push(ParamVector(mid));
        }
    }

    for a in param_samples {
        let table = pmf_member(spec, a, 1e-9)?;
        let clipped = clip_table(&table, window);
        let (_, is_unimodal) = pmf_core::modes_of(&clipped);
        if !is_unimodal && unimodal.2.is_none() {
            unimodal = (false, 0.0, Some(format!("multimodal pmf at a = {:?}", a.0)));
        }

        let minimizers = mode_scan(spec, a)?;
        let worst_mode = minimizers
            .iter()
            .map(|&m| (m as f64).abs())
            .fold(f64::NEG_INFINITY, f64::max);
        if worst_mode > modes_ok.1 {
            modes_ok.1 = worst_mode;
            if worst_mode > spec.l_mode {
                modes_ok.0 = false;
                modes_ok.2 = Some(format!(
                    "mode {} of a = {:?} outside [-{}, {}]",
                    minimizers
                        .iter()
                        .max_by_key(|m| m.unsigned_abs())
                        .unwrap(),
                    a.0,
                    spec.l_mode,
                    spec.l_mode
                ));
            }
        }

        let m = pmf_core::moments(&clipped);
        if m.fourth_central > fourth.1 {
            fourth.1 = m.fourth_central;
            if m.fourth_central > spec.b_moment {
                fourth.0 = false;
                fourth.2 = Some(format!(
                    "fourth central moment {} at a = {:?}",
                    m.fourth_central, a.0
                ));
            }
        }

        if spec.base_region.contains(&a.0) && m.variance < var_floor.1 {
            var_floor.1 = m.variance;
            if m.variance < spec.gamma {
                var_floor.0 = false;
                var_floor.2 = Some(format!("variance {} at a = {:?}", m.variance, a.0));
            }
        }
    }

    for a in &hull_points {
        if !spec.rho_cone_contains(a) && !spec.cone.contains(&a.0) {
            continue;
        }
        let table = match pmf_member(spec, a, 1e-9) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let clipped = clip_table(&table, window);
        let eig = covariance_max_eigenvalue(spec, &clipped)?;
        if eig > cov_eig.1 {
            cov_eig.1 = eig;
            if eig > spec.lambda {
                cov_eig.0 = false;
                cov_eig.2 = Some(format!("covariance eigenvalue {eig} at a = {:?}", a.0));
            }
        }
    }

    let entry = |condition, (passed, worst, witness): (bool, f64, Option<String>), threshold: f64, lower_is_bad: bool| {
        let margin = if lower_is_bad {
            (worst - threshold) / threshold.abs().max(1e-300)
        } else {
            (threshold - worst) / threshold.abs().max(1e-300)
        };
        ConditionCheck {
            condition,
            passed,
            worst,
            threshold,
            witness,
            marginal: margin.abs() < 0.1,
        }
    };

    Ok(AssumptionReport {
        checks: vec![
            entry(Condition::Unimodality, (unimodal.0, if unimodal.0 { 1.0 } else { 0.0 }, unimodal.2), 1.0, true),
            entry(Condition::ModesInRange, modes_ok, spec.l_mode, false),
            entry(Condition::FourthMoment, fourth, spec.b_moment, false),
            entry(Condition::CovarianceEigenvalue, cov_eig, spec.lambda, false),
            entry(Condition::VarianceFloor, var_floor, spec.gamma, true),
        ],
    })
}

fn clip_table(t: &PMFTable, window: (i64, i64)) -> PMFTable {
    let lo = t.lo.max(window.0);
    let hi = t.hi().min(window.1);
    if lo > hi {
        return t.clone();
    }
    let probs: Vec<f64> = (lo..=hi).map(|x| t.at(x)).collect();
    let dropped = t.window_mass() - probs.iter().sum::<f64>();
    PMFTable {
        lo,
        probs,
        tail_bound: (t.tail_bound + dropped).min(0.499),
    }
}

/// Largest eigenvalue of `Cov(T(W))` via power iteration to 1e-9.
pub fn covariance_max_eigenvalue(
    spec: &ExpFamilySpec,
    table: &PMFTable,
) -> Result<f64, ExpFamError> {
    let k = spec.dim();
    let total = table.window_mass();
    let mut mean = vec![0.0; k];
    let mut stats = Vec::with_capacity(table.probs.len());
    for (i, &p) in table.probs.iter().enumerate() {
        let tx = spec.t.eval(table.lo + i as i64)?;
        for (m, &v) in mean.iter_mut().zip(&tx) {
            *m += p * v / total;
        }
        stats.push(tx);
    }
    let mut cov = vec![vec![0.0; k]; k];
    for (i, &p) in table.probs.iter().enumerate() {
        for r in 0..k {
            let dr = stats[i][r] - mean[r];
            for c in 0..k {
                cov[r][c] += p / total * dr * (stats[i][c] - mean[c]);
            }
        }
    }
    // Power iteration on the PSD matrix.
    let mut v = vec![1.0 / (k as f64).sqrt(); k];
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let mut next = vec![0.0; k];
        for r in 0..k {
            for c in 0..k {
                next[r] += cov[r][c] * v[c];
            }
        }
        let n = geometry::norm(&next);
        if n < 1e-300 {
            return Ok(0.0);
        }
        for x in next.iter_mut() {
            *x /= n;
        }
        let new_lambda = n;
        let done = (new_lambda - lambda).abs() <= 1e-9 * (1.0 + new_lambda);
        lambda = new_lambda;
        v = next;
        if done {
            break;
        }
    }
    Ok(lambda)
}

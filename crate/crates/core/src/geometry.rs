//! Polyhedral-cone machinery.
//!
//! A cone arrives in both of its dual descriptions (halfspace normals `H`,
//! unit generators `Z`); conversion between the two is an input contract,
//! not something this module performs. From the pair we extract the pivot
//! constant `theta` and run the norm-reducing sphere projection that keeps
//! every halfspace product either large or exactly preserved.

use crate::expfam::{ExpFamilySpec, ParamVector};
use crate::rng::SplitRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("cone has no generators (cone = {{0}})")]
    DegenerateCone,
    #[error("no c in [0,1] solves the sphere equation at theta {theta}")]
    InfeasibleProjection { theta: f64 },
    #[error("generator decomposition residual {residual} exceeds {bound}")]
    DecompositionFailed { residual: f64, bound: f64 },
    #[error("inconsistent cone description: {0}")]
    BadCone(String),
    #[error("projection input outside the cone or below radius: {0}")]
    BadInput(String),
}

// ---------------------------------------------------------------------------
// Small dense linear algebra. Dimensions here are tiny (k <= ~8, s,t <= ~16),
// so plain Vec arithmetic beats pulling in a matrix crate.
// ---------------------------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Solve `M x = b` by Gaussian elimination with partial pivoting.
/// Returns None when the pivot collapses (singular system).
#[allow(clippy::needless_range_loop)]
fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-14 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[row][c] -= f * m[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= m[row][c] * x[c];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Unconstrained least squares on a column subset, via normal equations.
fn ls_on_subset(cols: &[Vec<f64>], subset: &[usize], b: &[f64]) -> Option<Vec<f64>> {
    let p = subset.len();
    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for (i, &ci) in subset.iter().enumerate() {
        for (j, &cj) in subset.iter().enumerate() {
            gram[i][j] = dot(&cols[ci], &cols[cj]);
        }
        rhs[i] = dot(&cols[ci], b);
        // Tiny ridge keeps duplicated generators from making the Gram
        // matrix exactly singular.
        gram[i][i] += 1e-13;
    }
    solve_dense(gram, rhs)
}

/// Lawson-Hanson nonnegative least squares: min ||Z x - b||, x >= 0.
pub(crate) fn nnls(cols: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let s = cols.len();
    let mut x = vec![0.0; s];
    if s == 0 {
        return x;
    }
    let mut passive = vec![false; s];
    let scale = norm(b).max(1.0);
    let tol = 1e-12 * scale;

    for _outer in 0..(3 * s + 30) {
        // Gradient of the residual.
        let mut resid = b.to_vec();
        for (j, cj) in cols.iter().enumerate() {
            if x[j] != 0.0 {
                axpy(&mut resid, -x[j], cj);
            }
        }
        let mut best = None;
        for (j, cj) in cols.iter().enumerate() {
            if passive[j] {
                continue;
            }
            let w = dot(cj, &resid);
            if w > tol && best.is_none_or(|(_, bw)| w > bw) {
                best = Some((j, w));
            }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;

        loop {
            let subset: Vec<usize> = (0..s).filter(|&j| passive[j]).collect();
            let Some(z) = ls_on_subset(cols, &subset, b) else {
                passive[enter] = false;
                break;
            };
            if z.iter().all(|&v| v > 0.0) {
                for (i, &j) in subset.iter().enumerate() {
                    x[j] = z[i];
                }
                break;
            }
            // Step back to the boundary and drop the blocking column.
            let mut alpha = f64::INFINITY;
            for (i, &j) in subset.iter().enumerate() {
                if z[i] <= 0.0 {
                    let denom = x[j] - z[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                passive[enter] = false;
                break;
            }
            for (i, &j) in subset.iter().enumerate() {
                x[j] += alpha * (z[i] - x[j]);
                if x[j] <= tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    x
}

// ---------------------------------------------------------------------------
// Cone description and base regions
// ---------------------------------------------------------------------------

/// Dual description of a polyhedral cone: `{u : H^T u >= 0} = {Z x : x >= 0}`.
///
/// `h` and `z` hold the columns (normals, generators). Generators must be
/// unit vectors, and every generator must satisfy every halfspace up to
/// 1e-10 for the pair to be accepted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ConeDescriptionRaw", into = "ConeDescriptionRaw")]
pub struct ConeDescription {
    pub dim: usize,
    pub h: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

/// Row-major wire format: {"H": [[...]], "Z": [[...]]}, columns as rows.
#[derive(Serialize, Deserialize)]
struct ConeDescriptionRaw {
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    #[serde(rename = "Z")]
    z: Vec<Vec<f64>>,
}

impl TryFrom<ConeDescriptionRaw> for ConeDescription {
    type Error = GeometryError;
    fn try_from(raw: ConeDescriptionRaw) -> Result<Self, GeometryError> {
        ConeDescription::new(raw.h, raw.z)
    }
}

impl From<ConeDescription> for ConeDescriptionRaw {
    fn from(c: ConeDescription) -> Self {
        ConeDescriptionRaw { h: c.h, z: c.z }
    }
}

impl ConeDescription {
    pub fn new(h: Vec<Vec<f64>>, z: Vec<Vec<f64>>, ) -> Result<Self, GeometryError> {
        let dim = z
            .first()
            .or_else(|| h.first())
            .ok_or_else(|| GeometryError::BadCone("empty description".into()))?
            .len();
        if h.iter().chain(z.iter()).any(|c| c.len() != dim) {
            return Err(GeometryError::BadCone("mixed column dimensions".into()));
        }
        for (j, zj) in z.iter().enumerate() {
            if (norm(zj) - 1.0).abs() > 1e-12 {
                return Err(GeometryError::BadCone(format!(
                    "generator {j} has norm {}",
                    norm(zj)
                )));
            }
            for (i, hi) in h.iter().enumerate() {
                if dot(hi, zj) < -1e-10 {
                    return Err(GeometryError::BadCone(format!(
                        "generator {j} violates halfspace {i}: {}",
                        dot(hi, zj)
                    )));
                }
            }
        }
        Ok(ConeDescription { dim, h, z })
    }

    /// Halfspace membership up to the 1e-10 consistency tolerance.
    pub fn contains(&self, u: &[f64]) -> bool {
        self.h.iter().all(|hi| dot(hi, u) >= -1e-10)
    }

    /// Membership with a tolerance that scales with the point, for inputs
    /// of large norm where accumulated rounding exceeds the absolute one.
    pub fn contains_scaled(&self, u: &[f64]) -> bool {
        let nu = norm(u);
        self.h
            .iter()
            .all(|hi| dot(hi, u) >= -1e-9 * (1.0 + norm(hi) * nu))
    }
}

/// Descriptor of the base parameter set itself. Box and polytope variants
/// are convex (straight-line paths); a segment chain is path-connected along
/// its vertices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseRegion {
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `{a : normals[i] . a <= offsets[i]}` with a sampling bounding box.
    Polytope {
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        bbox_lo: Vec<f64>,
        bbox_hi: Vec<f64>,
    },
    /// Union of the segments joining consecutive vertices.
    Segments { points: Vec<Vec<f64>> },
}

impl BaseRegion {
    pub fn dim(&self) -> usize {
        match self {
            BaseRegion::Box { lo, .. } => lo.len(),
            BaseRegion::Polytope { bbox_lo, .. } => bbox_lo.len(),
            BaseRegion::Segments { points } => points[0].len(),
        }
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        const TOL: f64 = 1e-9;
        match self {
            BaseRegion::Box { lo, hi } => a
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&x, (&l, &h))| x >= l - TOL && x <= h + TOL),
            BaseRegion::Polytope { normals, offsets, .. } => normals
                .iter()
                .zip(offsets)
                .all(|(n, &c)| dot(n, a) <= c + TOL),
            BaseRegion::Segments { points } => points.windows(2).any(|seg| {
                let (p, q) = (&seg[0], &seg[1]);
                let d: Vec<f64> = q.iter().zip(p.iter()).map(|(x, y)| x - y).collect();
                let len2 = dot(&d, &d);
                let ap: Vec<f64> = a.iter().zip(p.iter()).map(|(x, y)| x - y).collect();
                let t = if len2 == 0.0 { 0.0 } else { (dot(&ap, &d) / len2).clamp(0.0, 1.0) };
                let mut closest = p.clone();
                axpy(&mut closest, t, &d);
                let diff: Vec<f64> = a.iter().zip(&closest).map(|(x, y)| x - y).collect();
                norm(&diff) <= TOL
            }),
        }
    }

    pub fn sample(&self, rng: &mut SplitRng) -> Vec<f64> {
        match self {
            BaseRegion::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| rng.uniform_in(l, h))
                .collect(),
            BaseRegion::Polytope { normals, offsets, bbox_lo, bbox_hi } => {
                for _ in 0..10_000 {
                    let cand: Vec<f64> = bbox_lo
                        .iter()
                        .zip(bbox_hi)
                        .map(|(&l, &h)| rng.uniform_in(l, h))
                        .collect();
                    if normals.iter().zip(offsets).all(|(n, &c)| dot(n, &cand) <= c) {
                        return cand;
                    }
                }
                bbox_lo.clone()
            }
            BaseRegion::Segments { points } => {
                let lens: Vec<f64> = points
                    .windows(2)
                    .map(|seg| {
                        let d: Vec<f64> =
                            seg[1].iter().zip(&seg[0]).map(|(x, y)| x - y).collect();
                        norm(&d)
                    })
                    .collect();
                let total: f64 = lens.iter().sum();
                let mut pick = rng.uniform() * total;
                for (i, &len) in lens.iter().enumerate() {
                    if pick <= len || i == lens.len() - 1 {
                        let t = if len == 0.0 { 0.0 } else { pick / len };
                        let mut out = points[i].clone();
                        let d: Vec<f64> = points[i + 1]
                            .iter()
                            .zip(&points[i])
                            .map(|(x, y)| x - y)
                            .collect();
                        axpy(&mut out, t, &d);
                        return out;
                    }
                    pick -= len;
                }
                points[0].clone()
            }
        }
    }

    /// Supremum of the Euclidean norm over the region, when finite.
    pub fn norm_bound(&self) -> Option<f64> {
        match self {
            BaseRegion::Box { lo, hi } => {
                let m: f64 = lo
                    .iter()
                    .zip(hi)
                    .map(|(&l, &h)| l.abs().max(h.abs()).powi(2))
                    .sum();
                Some(m.sqrt())
            }
            BaseRegion::Polytope { bbox_lo, bbox_hi, .. } => {
                let m: f64 = bbox_lo
                    .iter()
                    .zip(bbox_hi)
                    .map(|(&l, &h)| l.abs().max(h.abs()).powi(2))
                    .sum();
                Some(m.sqrt())
            }
            BaseRegion::Segments { points } => points
                .iter()
                .map(|p| norm(p))
                .max_by(f64::total_cmp),
        }
    }

    /// A polyline within the region from `a` to `b`. Convex variants take
    /// the straight segment; a segment chain routes along its vertices.
    pub fn polyline_between(&self, a: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
        match self {
            BaseRegion::Box { .. } | BaseRegion::Polytope { .. } => {
                vec![a.to_vec(), b.to_vec()]
            }
            BaseRegion::Segments { points } => {
                let locate = |x: &[f64]| -> usize {
                    let mut best = (0usize, f64::INFINITY);
                    for (i, seg) in points.windows(2).enumerate() {
                        let d: Vec<f64> =
                            seg[1].iter().zip(&seg[0]).map(|(u, v)| u - v).collect();
                        let len2 = dot(&d, &d).max(1e-300);
                        let ax: Vec<f64> = x.iter().zip(&seg[0]).map(|(u, v)| u - v).collect();
                        let t = (dot(&ax, &d) / len2).clamp(0.0, 1.0);
                        let mut c = seg[0].clone();
                        axpy(&mut c, t, &d);
                        let diff: Vec<f64> = x.iter().zip(&c).map(|(u, v)| u - v).collect();
                        let dist = norm(&diff);
                        if dist < best.1 {
                            best = (i, dist);
                        }
                    }
                    best.0
                };
                let (ia, ib) = (locate(a), locate(b));
                let mut path = vec![a.to_vec()];
                if ia <= ib {
                    for p in &points[ia + 1..=ib] {
                        path.push(p.clone());
                    }
                } else {
                    for p in points[ib + 1..=ia].iter().rev() {
                        path.push(p.clone());
                    }
                }
                path.push(b.to_vec());
                path
            }
        }
    }
}

// ---------------------------------------------------------------------------
// theta and the sphere projection
// ---------------------------------------------------------------------------

/// Output of [`theta_for_cone`]: the certified constant, the pivot vector,
/// and the pivot's generator coefficients (needed to form its sub-sums).
#[derive(Debug, Clone)]
pub struct ConeGeometry {
    pub theta: f64,
    pub pivot: Vec<f64>,
    pub pivot_coeffs: Vec<f64>,
    /// Every halfspace is orthogonal to every generator; projections reduce
    /// to pure rescaling.
    pub degenerate: bool,
}

fn orth_tol(h: &[f64]) -> f64 {
    1e-9 * (1.0 + norm(h))
}

/// Extract the pivot constant and pivot vector from the cone pair.
///
/// `theta_1` is the smallest positive halfspace-generator product; the pivot
/// `w = Zx / N` uses `x >= 1` componentwise and the sub-sum normalizer `N`
/// (exact over subsets for s <= 16, safe upper bound beyond). The returned
/// `theta = min(theta_1 / N, theta_1 / 2s)` is checked against the pivot
/// properties before returning.
pub fn theta_for_cone(cone: &ConeDescription) -> Result<ConeGeometry, GeometryError> {
    let s = cone.z.len();
    if s == 0 {
        return Err(GeometryError::DegenerateCone);
    }

    let mut theta_1 = f64::INFINITY;
    for hi in &cone.h {
        let tol = orth_tol(hi);
        for zj in &cone.z {
            let prod = dot(hi, zj);
            if prod > tol {
                theta_1 = theta_1.min(prod);
            }
        }
    }
    if !theta_1.is_finite() {
        // All products vanish: every halfspace is orthogonal to the cone.
        let mut pivot = vec![0.0; cone.dim];
        for zj in &cone.z {
            axpy(&mut pivot, 1.0, zj);
        }
        let n = 2.0 * subset_norm_bound(&cone.z, &vec![1.0; s], s);
        let coeffs = vec![1.0 / n; s];
        for v in pivot.iter_mut() {
            *v /= n;
        }
        return Ok(ConeGeometry { theta: 0.0, pivot, pivot_coeffs: coeffs, degenerate: true });
    }

    // x = all-ones, with one entry doubled if the generators cancel.
    let mut x = vec![1.0; s];
    let zx = |x: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; cone.dim];
        for (j, zj) in cone.z.iter().enumerate() {
            axpy(&mut v, x[j], zj);
        }
        v
    };
    let mut w_raw = zx(&x);
    if norm(&w_raw) < 1e-12 {
        for j in 0..s {
            x[j] = 2.0;
            w_raw = zx(&x);
            if norm(&w_raw) >= 1e-12 {
                break;
            }
            x[j] = 1.0;
        }
        if norm(&w_raw) < 1e-12 {
            return Err(GeometryError::DegenerateCone);
        }
    }

    let n = 2.0 * subset_norm_bound(&cone.z, &x, s);
    let pivot = scaled(&w_raw, 1.0 / n);
    let pivot_coeffs = scaled(&x, 1.0 / n);
    let theta = (theta_1 / n).min(theta_1 / (2.0 * s as f64));

    // Post-check the pivot properties the proof relies on.
    if norm(&pivot) > 0.5 + 1e-9 {
        return Err(GeometryError::BadCone(format!(
            "pivot norm {} exceeds 1/2",
            norm(&pivot)
        )));
    }
    for hi in &cone.h {
        let interesting = cone.z.iter().any(|zj| dot(hi, zj) > orth_tol(hi));
        if interesting && dot(hi, &pivot) < theta - 1e-12 {
            return Err(GeometryError::BadCone(format!(
                "pivot product {} below theta {theta}",
                dot(hi, &pivot)
            )));
        }
    }
    Ok(ConeGeometry { theta, pivot, pivot_coeffs, degenerate: false })
}

/// `max over subsets J of || sum_{j in J} x_j z_j ||`, exact for s <= 16.
/// The fallback `sum x_j` only overestimates (generators are unit norm),
/// which shrinks theta but never breaks it.
fn subset_norm_bound(z: &[Vec<f64>], x: &[f64], s: usize) -> f64 {
    if s <= 16 {
        let dim = z[0].len();
        let mut best = 0.0f64;
        for mask in 0u32..(1u32 << s) {
            let mut v = vec![0.0; dim];
            for (j, zj) in z.iter().enumerate() {
                if mask & (1 << j) != 0 {
                    axpy(&mut v, x[j], zj);
                }
            }
            best = best.max(norm(&v));
        }
        best
    } else {
        x.iter().sum()
    }
}

/// Witness that the projection satisfied the halfspace clauses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionCertificate {
    pub theta_used: f64,
    pub active_set: Vec<usize>,
    pub c: f64,
    pub u_prime: Vec<f64>,
    pub retries: u32,
}

/// Project `u` (with `||u|| >= r`) onto the radius-`r` sphere inside the
/// cone, preserving every small halfspace product exactly and keeping every
/// large one above `theta * r`.
pub fn project_to_sphere(
    cone: &ConeDescription,
    geom: &ConeGeometry,
    u: &[f64],
    r: f64,
) -> Result<ProjectionCertificate, GeometryError> {
    if r <= 0.0 {
        return Err(GeometryError::BadInput(format!("radius {r} must be positive")));
    }
    if !cone.contains_scaled(u) {
        return Err(GeometryError::BadInput("u outside the cone".into()));
    }
    let nu = norm(u);
    if nu < r * (1.0 - 1e-9) {
        return Err(GeometryError::BadInput(format!("||u|| = {nu} below radius {r}")));
    }
    // Already on the sphere: identity with c = 0.
    if nu <= r * (1.0 + 1e-12) {
        return Ok(ProjectionCertificate {
            theta_used: geom.theta,
            active_set: vec![],
            c: 0.0,
            u_prime: scaled(u, r / nu),
            retries: 0,
        });
    }
    if geom.degenerate {
        return Ok(ProjectionCertificate {
            theta_used: 0.0,
            active_set: (0..cone.h.len()).collect(),
            c: 0.0,
            u_prime: scaled(u, r / nu),
            retries: 0,
        });
    }

    let theta = geom.theta;
    let active: Vec<usize> = (0..cone.h.len())
        .filter(|&i| dot(&cone.h[i], u) < theta * r)
        .collect();
    // Generators orthogonal to every active halfspace.
    let free: Vec<usize> = (0..cone.z.len())
        .filter(|&j| {
            active
                .iter()
                .all(|&i| dot(&cone.h[i], &cone.z[j]).abs() <= orth_tol(&cone.h[i]))
        })
        .collect();

    let coeffs = nnls(&cone.z, u);
    let mut recon = vec![0.0; cone.dim];
    for (j, zj) in cone.z.iter().enumerate() {
        axpy(&mut recon, coeffs[j], zj);
    }
    let resid: Vec<f64> = u.iter().zip(&recon).map(|(a, b)| a - b).collect();
    let bound = 1e-9 * nu;
    if norm(&resid) > bound {
        return Err(GeometryError::DecompositionFailed { residual: norm(&resid), bound });
    }

    let mut u_i = vec![0.0; cone.dim];
    let mut w_i = vec![0.0; cone.dim];
    for &j in &free {
        axpy(&mut u_i, coeffs[j], &cone.z[j]);
        axpy(&mut w_i, geom.pivot_coeffs[j], &cone.z[j]);
    }
    // Direction u' = u - c * (u_I - r w_I); find the smallest c in [0,1]
    // with ||u'|| = r.
    let mut d = u_i.clone();
    axpy(&mut d, -r, &w_i);
    let a2 = dot(&d, &d);
    let a1 = -2.0 * dot(u, &d);
    let a0 = nu * nu - r * r;
    let mut c = smallest_root_in_unit(a2, a1, a0)
        .ok_or(GeometryError::InfeasibleProjection { theta })?;
    // Newton polish on ||u - c d||^2 = r^2; the quadratic coefficients for
    // large-norm inputs lose enough precision to matter at the 1e-9 norm
    // tolerance.
    for _ in 0..3 {
        let mut v = u.to_vec();
        axpy(&mut v, -c, &d);
        let g = dot(&v, &v) - r * r;
        let dg = 2.0 * (c * a2 + 0.5 * a1);
        if dg.abs() < 1e-300 {
            break;
        }
        c = (c - g / dg).clamp(0.0, 1.0);
    }

    let mut u_prime = u.to_vec();
    axpy(&mut u_prime, -c, &d);
    Ok(ProjectionCertificate {
        theta_used: theta,
        active_set: active,
        c,
        u_prime,
        retries: 0,
    })
}

fn smallest_root_in_unit(a2: f64, a1: f64, a0: f64) -> Option<f64> {
    const TOL: f64 = 1e-9;
    let in_range = |c: f64| -> Option<f64> {
        if (-TOL..=1.0 + TOL).contains(&c) {
            Some(c.clamp(0.0, 1.0))
        } else {
            None
        }
    };
    if a2.abs() < 1e-300 {
        if a1.abs() < 1e-300 {
            return if a0.abs() < 1e-12 { Some(0.0) } else { None };
        }
        return in_range(-a0 / a1);
    }
    let disc = a1 * a1 - 4.0 * a2 * a0;
    if disc < 0.0 {
        return None;
    }
    // Numerically stable root pair.
    let q = -0.5 * (a1 + a1.signum() * disc.sqrt());
    let (r1, r2) = if q == 0.0 {
        (0.0, 0.0)
    } else {
        (q / a2, a0 / q)
    };
    let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    in_range(lo).or_else(|| in_range(hi))
}

/// Projection with the theta-halving safety valve (max 10 retries).
pub fn project_with_retries(
    cone: &ConeDescription,
    geom: &ConeGeometry,
    u: &[f64],
    r: f64,
) -> Result<ProjectionCertificate, GeometryError> {
    let mut g = geom.clone();
    let mut last = None;
    for attempt in 0..=10u32 {
        match project_to_sphere(cone, &g, u, r) {
            Ok(mut cert) => {
                cert.retries = attempt;
                return Ok(cert);
            }
            Err(GeometryError::InfeasibleProjection { .. }) => {
                last = Some(GeometryError::InfeasibleProjection { theta: g.theta });
                g.theta /= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("retry loop ran"))
}

/// Membership in the rho-conical hull: the base set itself, plus every
/// conical-hull point of norm at least rho.
pub fn rho_cone_contains(
    cone: &ConeDescription,
    base_region: &BaseRegion,
    rho: f64,
    a: &[f64],
) -> bool {
    base_region.contains(a) || (cone.contains(a) && norm(a) >= rho - 1e-12)
}

/// The critical radius below which parameters are kept as-is.
pub fn critical_radius(rho: f64, theta: f64, b_moment: f64, eps: f64, c_rcrit: f64) -> f64 {
    (rho + 1.0 / theta) * (1.0 / eps).ln() + b_moment.ln() / (2.0 * theta)
        + c_rcrit * (rho + 1.0 / theta)
}

/// Replace a parameter of large norm by its sphere projection at the
/// critical radius; parameters already inside the ball pass through.
pub fn bound_parameter(
    spec: &ExpFamilySpec,
    a: &ParamVector,
    eps: f64,
) -> Result<ParamVector, GeometryError> {
    if !(0.0..1.0).contains(&eps) || eps == 0.0 {
        return Err(GeometryError::BadInput(format!("eps {eps} outside (0,1)")));
    }
    let geom = spec.cone_geometry();
    let r_crit = critical_radius(
        spec.rho,
        geom.theta.max(1e-12),
        spec.b_moment,
        eps,
        spec.constants.c_rcrit,
    );
    if norm(&a.0) <= r_crit {
        return Ok(a.clone());
    }
    let cert = project_with_retries(&spec.cone, geom, &a.0, r_crit)?;
    Ok(ParamVector(cert.u_prime))
}

/// Test support: randomized cones with exact dual descriptions, cone-point
/// sampling, and the projection-certificate contract. Shared by the
/// property and acceptance suites.
pub mod testing {
    use super::*;

    /// Random orthonormal matrix (rows), via Gram-Schmidt on random vectors.
    fn random_rotation(k: usize, rng: &mut SplitRng) -> Vec<Vec<f64>> {
        loop {
            let mut rows: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..k).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
                .collect();
            let mut ok = true;
            for i in 0..k {
                for j in 0..i {
                    let proj = dot(&rows[i], &rows[j]);
                    let prev = rows[j].clone();
                    axpy(&mut rows[i], -proj, &prev);
                }
                let n = norm(&rows[i]);
                if n < 1e-3 {
                    ok = false;
                    break;
                }
                for v in rows[i].iter_mut() {
                    *v /= n;
                }
            }
            if ok {
                return rows;
            }
        }
    }

    fn rotate(rot: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        rot.iter().map(|row| dot(row, v)).collect()
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = norm(v);
        v.iter().map(|x| x / n).collect()
    }

    fn e(k: usize, i: usize, sign: f64) -> Vec<f64> {
        let mut v = vec![0.0; k];
        v[i] = sign;
        v
    }

    /// Random polyhedral cone in dimension 2..=4 with consistent dual
    /// descriptions (s, t <= 6), drawn from four structured families and
    /// then randomly rotated, with occasional redundant columns.
    pub fn random_cone(rng: &mut SplitRng) -> ConeDescription {
        let k = rng.int_in(2, 4) as usize;
        let (mut h, mut z): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match rng.int_in(0, 3) {
            // Orthant-like: some coordinates constrained, the rest free.
            0 => {
                let min_s = if k == 4 { 2 } else { 1 };
                let constrained = rng.int_in(min_s, k as i64) as usize;
                let mut h = Vec::new();
                let mut z = Vec::new();
                for i in 0..k {
                    if i < constrained {
                        h.push(e(k, i, 1.0));
                        z.push(e(k, i, 1.0));
                    } else {
                        z.push(e(k, i, 1.0));
                        z.push(e(k, i, -1.0));
                    }
                }
                (h, z)
            }
            // Simplicial: unit generator columns with H the inverse
            // transpose, retried until well conditioned.
            1 => loop {
                let z: Vec<Vec<f64>> = (0..k)
                    .map(|_| unit(&(0..k).map(|_| rng.uniform_in(-1.0, 1.0)).collect::<Vec<_>>()))
                    .collect();
                // Solve Z^T h_i = e_i for each i.
                let mut h = Vec::new();
                let mut ok = true;
                for i in 0..k {
                    let m: Vec<Vec<f64>> = (0..k)
                        .map(|r| (0..k).map(|c| z[r][c]).collect())
                        .collect();
                    match super::solve_dense(m, e(k, i, 1.0)) {
                        Some(hi) if norm(&hi) < 40.0 => h.push(hi),
                        _ => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                // Off-diagonal products must be firmly inside the
                // orthogonality tolerance.
                let clean = h.iter().enumerate().all(|(i, hi)| {
                    z.iter().enumerate().all(|(j, zj)| {
                        let p = dot(hi, zj);
                        if i == j {
                            p > 1e-3
                        } else {
                            p.abs() < 1e-12 * (1.0 + norm(hi))
                        }
                    })
                });
                if clean {
                    break (h, z);
                }
            },
            // Planar sector crossed with constrained or free coordinates.
            2 => {
                let alpha = rng.uniform_in(0.0, std::f64::consts::TAU);
                let phi = rng.uniform_in(0.1, std::f64::consts::PI - 0.1);
                let z1 = vec![alpha.cos(), alpha.sin()];
                let z2 = vec![(alpha + phi).cos(), (alpha + phi).sin()];
                let h1 = vec![-alpha.sin(), alpha.cos()];
                let h2 = vec![(alpha + phi).sin(), -(alpha + phi).cos()];
                let lift = |v: &[f64]| {
                    let mut out = vec![0.0; k];
                    out[0] = v[0];
                    out[1] = v[1];
                    out
                };
                let mut h = vec![lift(&h1), lift(&h2)];
                let mut z = vec![lift(&z1), lift(&z2)];
                for i in 2..k {
                    if rng.uniform() < 0.5 {
                        h.push(e(k, i, 1.0));
                        z.push(e(k, i, 1.0));
                    } else if z.len() + 2 <= 6 {
                        z.push(e(k, i, 1.0));
                        z.push(e(k, i, -1.0));
                    } else {
                        h.push(e(k, i, 1.0));
                        z.push(e(k, i, 1.0));
                    }
                }
                (h, z)
            }
            // Halfspace slab: one constraint, a full line inside the
            // boundary, plus constrained extras.
            _ => {
                let mut h = vec![e(k, 0, 1.0)];
                let mut z = vec![e(k, 0, 1.0), e(k, 1, 1.0), e(k, 1, -1.0)];
                for i in 2..k {
                    h.push(e(k, i, 1.0));
                    z.push(e(k, i, 1.0));
                }
                (h, z)
            }
        };

        // Redundancy: duplicate a generator, add a summed halfspace.
        if rng.uniform() < 0.4 && z.len() < 6 {
            let j = rng.int_in(0, z.len() as i64 - 1) as usize;
            z.push(z[j].clone());
        }
        if rng.uniform() < 0.4 && h.len() < 6 && h.len() >= 2 {
            let i = rng.int_in(0, h.len() as i64 - 1) as usize;
            let j = rng.int_in(0, h.len() as i64 - 1) as usize;
            let mut extra = h[i].clone();
            axpy(&mut extra, 1.0, &h[j].clone());
            h.push(extra);
        }

        let rot = random_rotation(k, rng);
        let h: Vec<Vec<f64>> = h.iter().map(|v| rotate(&rot, v)).collect();
        let z: Vec<Vec<f64>> = z.iter().map(|v| unit(&rotate(&rot, v))).collect();
        ConeDescription::new(h, z).expect("generated pair is consistent")
    }

    /// Random cone point `Zx` (some coordinates zeroed to hit faces) with
    /// log-uniform norm in `[min_norm, max_norm]`.
    pub fn random_cone_point(
        cone: &ConeDescription,
        rng: &mut SplitRng,
        min_norm: f64,
        max_norm: f64,
    ) -> Vec<f64> {
        loop {
            let mut v = vec![0.0; cone.dim];
            for zj in &cone.z {
                if rng.uniform() < 0.3 {
                    continue; // face
                }
                axpy(&mut v, rng.uniform(), zj);
            }
            let n = norm(&v);
            if n < 1e-9 {
                continue;
            }
            let target = (rng.uniform_in(min_norm.ln(), max_norm.ln())).exp();
            return scaled(&v, target / n);
        }
    }

    /// Assert the projection contract: norm on the sphere, `c` in range,
    /// and for every halfspace either both products clear `theta r` or the
    /// product is preserved within `1e-9 (1 + ||u||)`.
    pub fn assert_certificate(
        cone: &ConeDescription,
        geom: &ConeGeometry,
        u: &[f64],
        r: f64,
        cert: &ProjectionCertificate,
    ) {
        let tol = 1e-9 * (1.0 + norm(u));
        assert!(
            (norm(&cert.u_prime) - r).abs() <= 1e-9 * r.max(1.0),
            "||u'|| = {} off the sphere of radius {r}",
            norm(&cert.u_prime)
        );
        assert!((0.0..=1.0).contains(&cert.c), "c = {}", cert.c);
        let theta = cert.theta_used;
        for (i, hcol) in cone.h.iter().enumerate() {
            let hu = dot(hcol, u);
            let hup = dot(hcol, &cert.u_prime);
            let clause_i = hu >= theta * r - tol && hup >= theta * r - tol;
            let clause_ii = (hu - hup).abs() <= tol;
            assert!(
                clause_i || clause_ii,
                "halfspace {i}: h.u = {hu}, h.u' = {hup}, theta r = {} (tol {tol})",
                theta * r
            );
        }
        let _ = geom;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthant2() -> ConeDescription {
        ConeDescription::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn theta_orthant_matches_hand_evaluation() {
        let g = theta_for_cone(&orthant2()).unwrap();
        // theta_1 = 1, N = 2 ||(1,1)|| = 2 sqrt 2, theta = min(1/(2 sqrt 2), 1/4).
        assert!((g.theta - 0.25).abs() < 1e-12);
        assert!((norm(&g.pivot) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn theta_single_ray() {
        let z = vec![vec![3.0 / 5.0, 4.0 / 5.0]];
        let cone = ConeDescription::new(z.clone(), z).unwrap();
        let g = theta_for_cone(&cone).unwrap();
        assert!((g.theta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_generator_set_is_degenerate() {
        let cone = ConeDescription::new(vec![vec![1.0, 0.0]], vec![]).unwrap();
        assert!(matches!(theta_for_cone(&cone), Err(GeometryError::DegenerateCone)));
    }

    #[test]
    fn orthogonal_halfspace_takes_degenerate_branch() {
        // Halfspace normal orthogonal to the cone's only generator.
        let cone = ConeDescription::new(vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]).unwrap();
        let g = theta_for_cone(&cone).unwrap();
        assert!(g.degenerate);
        let cert = project_to_sphere(&cone, &g, &[5.0, 0.0], 1.0).unwrap();
        assert!((norm(&cert.u_prime) - 1.0).abs() < 1e-12);
        assert_eq!(dot(&cone.h[0], &cert.u_prime), 0.0);
    }

    #[test]
    fn projection_identity_on_sphere() {
        let cone = orthant2();
        let g = theta_for_cone(&cone).unwrap();
        let u = [0.6, 0.8];
        let cert = project_to_sphere(&cone, &g, &u, 1.0).unwrap();
        assert_eq!(cert.c, 0.0);
        assert!((norm(&cert.u_prime) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_orthant_preserves_small_product() {
        let cone = orthant2();
        let g = theta_for_cone(&cone).unwrap();
        let u = [10.0, 1e-6];
        let cert = project_to_sphere(&cone, &g, &u, 1.0).unwrap();
        assert_eq!(cert.active_set, vec![1]);
        assert!((dot(&cone.h[1], &cert.u_prime) - 1e-6).abs() < 1e-15);
        assert!(dot(&cone.h[0], &cert.u_prime) >= g.theta);
        assert!((norm(&cert.u_prime) - 1.0).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&cert.c));
    }

    #[test]
    fn projection_on_ray_rescales() {
        let z = vec![vec![0.0, 1.0]];
        let cone = ConeDescription::new(z.clone(), z).unwrap();
        let g = theta_for_cone(&cone).unwrap();
        for r in [1.0, 2.5] {
            let cert = project_to_sphere(&cone, &g, &[0.0, 40.0], r).unwrap();
            assert!((cert.u_prime[0]).abs() < 1e-12);
            assert!((cert.u_prime[1] - r).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_idempotent_at_sphere() {
        let cone = orthant2();
        let g = theta_for_cone(&cone).unwrap();
        let first = project_to_sphere(&cone, &g, &[7.0, 0.3], 1.0).unwrap();
        let second = project_to_sphere(&cone, &g, &first.u_prime, 1.0).unwrap();
        assert_eq!(second.c, 0.0);
    }

    #[test]
    fn rho_cone_membership() {
        let cone = ConeDescription::new(vec![vec![1.0]], vec![vec![1.0]]).unwrap();
        let region = BaseRegion::Box { lo: vec![0.5], hi: vec![1.5] };
        let rho = 4.0;
        assert!(rho_cone_contains(&cone, &region, rho, &[1.0])); // in the base set
        assert!(!rho_cone_contains(&cone, &region, rho, &[2.0])); // rho/2, outside base
        assert!(rho_cone_contains(&cone, &region, rho, &[8.0])); // 2 rho
    }

    #[test]
    fn bound_parameter_leaves_small_norms_and_projects_large_ones() {
        let fam = crate::catalog::geometric_family(0.5, 3.0);
        let small = crate::expfam::ParamVector(vec![2.0]);
        let out = bound_parameter(&fam, &small, 0.1).unwrap();
        assert_eq!(out.0, small.0);

        // Large parameter lands exactly on the critical radius of the ray,
        // and the projected member is within eps of the original by the
        // convolution oracle (both are near point masses at zero).
        let big = crate::expfam::ParamVector(vec![50.0]);
        let out = bound_parameter(&fam, &big, 0.1).unwrap();
        let r_crit =
            critical_radius(fam.rho, fam.resolved_theta(), fam.b_moment, 0.1, fam.constants.c_rcrit);
        assert!((out.0[0] - r_crit).abs() < 1e-9);
        assert!(fam.rho_cone_contains(&out));
        let ta = crate::expfam::pmf_member(&fam, &big, 1e-10).unwrap();
        let tb = crate::expfam::pmf_member(&fam, &out, 1e-10).unwrap();
        let tv = crate::pmf_core::tv_distance(&ta, &tb);
        assert!(tv.value <= 0.1 + tv.slack, "tv {}", tv.value);
    }

    #[test]
    fn nnls_recovers_nonnegative_combination() {
        let cols = vec![vec![1.0, 0.0, 0.5], vec![0.0, 1.0, 0.5], vec![1.0, 1.0, 0.0]];
        let mut b = vec![0.0; 3];
        axpy(&mut b, 2.0, &cols[0]);
        axpy(&mut b, 0.7, &cols[2]);
        let x = nnls(&cols, &b);
        let mut recon = vec![0.0; 3];
        for (j, c) in cols.iter().enumerate() {
            axpy(&mut recon, x[j], c);
        }
        let resid: Vec<f64> = b.iter().zip(&recon).map(|(u, v)| u - v).collect();
        assert!(norm(&resid) < 1e-9);
        assert!(x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn segments_region_paths_and_membership() {
        let region = BaseRegion::Segments {
            points: vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0, 2.0]],
        };
        assert!(region.contains(&[0.5, 1.0]));
        assert!(region.contains(&[1.0, 1.5]));
        assert!(!region.contains(&[0.5, 1.5]));
        let path = region.polyline_between(&[0.2, 1.0], &[1.0, 1.8]);
        assert_eq!(path.len(), 3);
        assert_eq!(path[1], vec![1.0, 1.0]);
    }
}

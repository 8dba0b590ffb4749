//! Exact q-Wasserstein and bottleneck distances between persistence diagrams.
//!
//! Matching uses the standard diagonal augmentation: every point of one
//! diagram may match a point of the other or its own diagonal projection, and
//! diagonal-to-diagonal slots cost nothing. The ground metric between points
//! is the L-infinity norm; a point's distance to the diagonal is half its
//! persistence. Wasserstein solves a dense min-cost perfect matching with a
//! shortest-augmenting-path solver; bottleneck binary-searches candidate
//! costs with bipartite feasibility checks.

use thiserror::Error;

use crate::homology::PersistenceDiagram;

pub mod exhaustive;

#[derive(Debug, Error)]
pub enum DistanceError {
    #[error("homology dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("wasserstein order q must satisfy q >= 1, got {0}")]
    InvalidOrder(f64),
}

/// How classes alive at the threshold enter the matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EssentialPolicy {
    /// Ignore essential classes (default; infinite coordinates have no
    /// finite transport cost).
    Drop,
    /// Treat an essential class as dying at its diagram's threshold.
    CapAtThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WassersteinParams {
    /// Order q >= 1; `f64::INFINITY` selects the bottleneck distance.
    pub q: f64,
    pub essential: EssentialPolicy,
}

impl Default for WassersteinParams {
    fn default() -> Self {
        Self {
            q: 2.0,
            essential: EssentialPolicy::Drop,
        }
    }
}

/// Finite (birth, death) points that participate in a matching.
pub(crate) fn effective_points(dgm: &PersistenceDiagram, policy: EssentialPolicy) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = dgm.pairs.iter().map(|p| (p.birth, p.death)).collect();
    if policy == EssentialPolicy::CapAtThreshold {
        for &b in &dgm.essential_births {
            if dgm.threshold > b {
                pts.push((b, dgm.threshold));
            }
        }
    }
    pts
}

#[inline]
fn linf(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

/// L-infinity distance from a point to the diagonal.
#[inline]
fn diagonal_gap(p: (f64, f64)) -> f64 {
    (p.1 - p.0) / 2.0
}

/// q-Wasserstein distance between diagrams of equal homology dimension.
pub fn wasserstein_distance(
    x: &PersistenceDiagram,
    y: &PersistenceDiagram,
    params: &WassersteinParams,
) -> Result<f64, DistanceError> {
    if x.dimension != y.dimension {
        return Err(DistanceError::DimensionMismatch(x.dimension, y.dimension));
    }
    if params.q.is_infinite() {
        return bottleneck_distance(x, y, params.essential);
    }
    if !(params.q >= 1.0) {
        return Err(DistanceError::InvalidOrder(params.q));
    }
    let xs = effective_points(x, params.essential);
    let ys = effective_points(y, params.essential);
    Ok(wasserstein_points(&xs, &ys, params.q))
}

pub(crate) fn wasserstein_points(xs: &[(f64, f64)], ys: &[(f64, f64)], q: f64) -> f64 {
    let (n, m) = (xs.len(), ys.len());
    if n == 0 && m == 0 {
        return 0.0;
    }
    // One-sided matchings are forced: everything goes to the diagonal.
    if n == 0 {
        let total: f64 = ys.iter().map(|&p| diagonal_gap(p).powf(q)).sum();
        return total.powf(1.0 / q);
    }
    if m == 0 {
        let total: f64 = xs.iter().map(|&p| diagonal_gap(p).powf(q)).sum();
        return total.powf(1.0 / q);
    }

    // Square augmented cost matrix: rows are X points then one diagonal slot
    // per Y point; columns are Y points then one diagonal slot per X point.
    // A real point matched to any diagonal slot pays its own projection.
    let size = n + m;
    let mut cost = vec![0.0f64; size * size];
    for i in 0..n {
        let gap = diagonal_gap(xs[i]).powf(q);
        for j in 0..m {
            cost[i * size + j] = linf(xs[i], ys[j]).powf(q);
        }
        for j in m..size {
            cost[i * size + j] = gap;
        }
    }
    for i in n..size {
        for (j, &yp) in ys.iter().enumerate() {
            cost[i * size + j] = diagonal_gap(yp).powf(q);
        }
    }
    let total = assignment_cost(&cost, size);
    total.max(0.0).powf(1.0 / q)
}

/// Bottleneck distance: minimize the largest per-pair cost.
pub fn bottleneck_distance(
    x: &PersistenceDiagram,
    y: &PersistenceDiagram,
    essential: EssentialPolicy,
) -> Result<f64, DistanceError> {
    if x.dimension != y.dimension {
        return Err(DistanceError::DimensionMismatch(x.dimension, y.dimension));
    }
    let xs = effective_points(x, essential);
    let ys = effective_points(y, essential);
    Ok(bottleneck_points(&xs, &ys))
}

pub(crate) fn bottleneck_points(xs: &[(f64, f64)], ys: &[(f64, f64)]) -> f64 {
    let (n, m) = (xs.len(), ys.len());
    if n == 0 && m == 0 {
        return 0.0;
    }

    // Candidate values: every pairwise cost and every diagonal projection.
    let mut candidates: Vec<f64> = Vec::with_capacity(n * m + n + m + 1);
    candidates.push(0.0);
    for &xp in xs {
        candidates.push(diagonal_gap(xp));
        for &yp in ys {
            candidates.push(linf(xp, yp));
        }
    }
    for &yp in ys {
        candidates.push(diagonal_gap(yp));
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // Smallest candidate t admitting a perfect matching with all costs <= t.
    let mut lo = 0usize;
    let mut hi = candidates.len() - 1;
    debug_assert!(bottleneck_feasible(xs, ys, candidates[hi]));
    while lo < hi {
        let mid = (lo + hi) / 2;
        if bottleneck_feasible(xs, ys, candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    candidates[lo]
}

/// Can every point be matched (to a cross point or its diagonal) with all
/// costs at most `t`?
///
/// Only points whose diagonal projection exceeds `t` are forced to match
/// across diagrams; the rest can always fall back to the diagonal. By the
/// Mendelsohn-Dulmage theorem a matching saturating the forced points of
/// both sides exists exactly when each side's forced set can be saturated on
/// its own, so two one-sided Kuhn matchings decide feasibility.
fn bottleneck_feasible(xs: &[(f64, f64)], ys: &[(f64, f64)], t: f64) -> bool {
    saturates_forced(xs, ys, t) && saturates_forced(ys, xs, t)
}

fn saturates_forced(left: &[(f64, f64)], right: &[(f64, f64)], t: f64) -> bool {
    let forced: Vec<usize> = (0..left.len())
        .filter(|&i| diagonal_gap(left[i]) > t)
        .collect();
    if forced.len() > right.len() {
        return false;
    }
    let mut match_of_right: Vec<Option<usize>> = vec![None; right.len()];
    for &i in &forced {
        let mut seen = vec![false; right.len()];
        if !kuhn_augment(i, left, right, t, &mut seen, &mut match_of_right) {
            return false;
        }
    }
    true
}

fn kuhn_augment(
    i: usize,
    left: &[(f64, f64)],
    right: &[(f64, f64)],
    t: f64,
    seen: &mut [bool],
    match_of_right: &mut [Option<usize>],
) -> bool {
    for j in 0..right.len() {
        if seen[j] || linf(left[i], right[j]) > t {
            continue;
        }
        seen[j] = true;
        let free = match match_of_right[j] {
            None => true,
            Some(owner) => kuhn_augment(owner, left, right, t, seen, match_of_right),
        };
        if free {
            match_of_right[j] = Some(i);
            return true;
        }
    }
    false
}

/// Exact min-cost perfect matching on a dense square matrix, by shortest
/// augmenting paths with dual potentials.
pub(crate) fn assignment_cost(cost: &[f64], n: usize) -> f64 {
    debug_assert_eq!(cost.len(), n * n);
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // column -> row (1-based, 0 = free)
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut total = 0.0;
    for j in 1..=n {
        let i = matched_row[j];
        total += cost[(i - 1) * n + (j - 1)];
    }
    total
}

//! Vietoris-Rips persistence in dimensions 0-2.
//!
//! The fast path computes dimension 0 by union-find over edges sorted by
//! length, and dimensions 1-2 by column reduction of the coboundary matrix
//! with the clearing optimization, enumerating cofacets implicitly so no
//! simplex list above dimension `max_dim` is ever materialized. The
//! [`oracle_persistence`] path materializes every simplex and runs the
//! textbook left-to-right boundary-matrix reduction over the two-element
//! field; it exists so the fast path can be checked pair-for-pair.
//!
//! Simplices are ordered by (diameter, dimension, lexicographic sorted vertex
//! tuple) in both paths, so diagrams are comparable bit-for-bit.

mod oracle;
mod reduction;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::embed::PointCloud;
use crate::ingest::format_f64;

pub use oracle::oracle_persistence;

#[derive(Debug, Error)]
pub enum HomologyError {
    #[error("point cloud has {0} points; at least 2 are required")]
    TooFewPoints(usize),
    #[error("point cloud contains a non-finite coordinate")]
    NonFiniteCoordinate,
    #[error("max_dim {0} unsupported; homology is computed for dimensions 0..=2")]
    InvalidMaxDim(usize),
    #[error("filtration threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("simplex budget exceeded: filtration needs more than {budget} simplices")]
    SimplexBudget { budget: usize },
    #[error("oracle path requires at most {max} points, got {got}")]
    OracleTooLarge { got: usize, max: usize },
    #[error("diagram file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Filtration cutoff: either the enclosing radius of the cloud (the default;
/// past it the complex is a cone and contributes nothing new) or a fixed
/// user value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    EnclosingRadius,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiltrationParams {
    /// Maximum homology dimension, 0..=2.
    pub max_dim: usize,
    pub threshold: Threshold,
    /// Hard cap on the number of filtration simplices (all dimensions up to
    /// `max_dim + 1`); exceeding it is an explicit error, never a silent
    /// truncation.
    pub max_simplices: usize,
}

impl Default for FiltrationParams {
    fn default() -> Self {
        Self {
            max_dim: 2,
            threshold: Threshold::EnclosingRadius,
            max_simplices: 50_000_000,
        }
    }
}

impl FiltrationParams {
    pub fn with_max_dim(max_dim: usize) -> Self {
        Self {
            max_dim,
            ..Self::default()
        }
    }
}

/// Finite birth/death pair; persistence is strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistencePair {
    pub birth: f64,
    pub death: f64,
}

impl PersistencePair {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }
}

/// Multiset of finite pairs plus births of classes still alive at the
/// threshold (the essential classes).
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    pub dimension: usize,
    pub pairs: Vec<PersistencePair>,
    pub essential_births: Vec<f64>,
    pub threshold: f64,
}

impl PersistenceDiagram {
    pub fn empty(dimension: usize, threshold: f64) -> Self {
        Self {
            dimension,
            pairs: Vec::new(),
            essential_births: Vec::new(),
            threshold,
        }
    }

    pub fn essential_count(&self) -> usize {
        self.essential_births.len()
    }

    fn canonicalize(&mut self) {
        self.pairs.sort_by(|a, b| {
            a.birth
                .total_cmp(&b.birth)
                .then(a.death.total_cmp(&b.death))
        });
        self.essential_births.sort_by(f64::total_cmp);
    }
}

/// Condensed pairwise Euclidean distance matrix (upper triangle).
#[derive(Debug, Clone)]
pub struct CondensedDistances {
    n: usize,
    d: Vec<f64>,
}

impl CondensedDistances {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Distance between points `i` and `j` (0 on the diagonal).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.d[self.offset(i, j)],
            std::cmp::Ordering::Greater => self.d[self.offset(j, i)],
            std::cmp::Ordering::Equal => 0.0,
        }
    }
}

/// Pairwise Euclidean distances of a cloud with at least 2 points.
pub fn pairwise_distances(cloud: &PointCloud) -> Result<CondensedDistances, HomologyError> {
    let n = cloud.len();
    if n < 2 {
        return Err(HomologyError::TooFewPoints(n));
    }
    if cloud.iter_points().flatten().any(|v| !v.is_finite()) {
        return Err(HomologyError::NonFiniteCoordinate);
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let pi = cloud.point(i);
        for j in (i + 1)..n {
            let pj = cloud.point(j);
            let dist2: f64 = pi
                .iter()
                .zip(pj)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(dist2.sqrt());
        }
    }
    Ok(CondensedDistances { n, d })
}

/// Minimum over points of the maximal distance to any other point.
pub fn enclosing_radius(dist: &CondensedDistances) -> f64 {
    let n = dist.n();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| dist.get(i, j))
                .fold(0.0f64, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

fn resolve_threshold(
    params: &FiltrationParams,
    dist: &CondensedDistances,
) -> Result<f64, HomologyError> {
    let t = match params.threshold {
        Threshold::EnclosingRadius => enclosing_radius(dist),
        Threshold::Fixed(t) => t,
    };
    if !(t.is_finite() && t >= 0.0) {
        return Err(HomologyError::InvalidThreshold(t));
    }
    Ok(t)
}

/// Exact count of simplices up to dimension `max_dim + 1` within the
/// threshold, aborting as soon as the budget is exceeded.
fn check_simplex_budget(
    dist: &CondensedDistances,
    threshold: f64,
    max_dim: usize,
    budget: usize,
) -> Result<(), HomologyError> {
    let n = dist.n();
    let budget = budget as u64;
    let mut total = n as u64;
    let over = |total: u64| total > budget;
    for i in 0..n {
        for j in (i + 1)..n {
            if dist.get(i, j) > threshold {
                continue;
            }
            total += 1;
            if max_dim == 0 {
                continue;
            }
            let dij = dist.get(i, j);
            for k in (j + 1)..n {
                let diam3 = dij.max(dist.get(i, k)).max(dist.get(j, k));
                if diam3 > threshold {
                    continue;
                }
                total += 1;
                if max_dim >= 2 {
                    for l in (k + 1)..n {
                        let diam4 = diam3
                            .max(dist.get(i, l))
                            .max(dist.get(j, l))
                            .max(dist.get(k, l));
                        if diam4 <= threshold {
                            total += 1;
                        }
                    }
                    if over(total) {
                        return Err(HomologyError::SimplexBudget {
                            budget: budget as usize,
                        });
                    }
                }
            }
            if over(total) {
                return Err(HomologyError::SimplexBudget {
                    budget: budget as usize,
                });
            }
        }
    }
    if over(total) {
        return Err(HomologyError::SimplexBudget {
            budget: budget as usize,
        });
    }
    Ok(())
}

struct Dim0Result {
    pairs: Vec<PersistencePair>,
    essential: usize,
    /// Edge indices (into the sorted edge list) that merged two components.
    tree_edges: Vec<bool>,
}

/// Kruskal pass over edges sorted by (length, vertex pair): every merge is an
/// H0 death at the edge length.
fn dim0_union_find(edges: &[reduction::Simplex<2>], n: usize) -> Dim0Result {
    let mut parent: Vec<u32> = (0..n as u32).collect();
    let mut rank = vec![0u8; n];
    let mut tree_edges = vec![false; edges.len()];
    let mut pairs = Vec::new();
    let mut components = n;

    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        let mut root = x;
        while parent[root as usize] != root {
            root = parent[root as usize];
        }
        while parent[x as usize] != x {
            let next = parent[x as usize];
            parent[x as usize] = root;
            x = next;
        }
        root
    }

    for (idx, e) in edges.iter().enumerate() {
        let a = find(&mut parent, e.verts[0]);
        let b = find(&mut parent, e.verts[1]);
        if a == b {
            continue;
        }
        tree_edges[idx] = true;
        components -= 1;
        if e.diam > 0.0 {
            pairs.push(PersistencePair {
                birth: 0.0,
                death: e.diam,
            });
        }
        let (a, b) = if rank[a as usize] < rank[b as usize] {
            (b, a)
        } else {
            (a, b)
        };
        parent[b as usize] = a;
        if rank[a as usize] == rank[b as usize] {
            rank[a as usize] += 1;
        }
    }

    Dim0Result {
        pairs,
        essential: components,
        tree_edges,
    }
}

/// Rips persistence diagrams for dimensions `0..=max_dim`.
pub fn compute_persistence(
    cloud: &PointCloud,
    params: &FiltrationParams,
) -> Result<Vec<PersistenceDiagram>, HomologyError> {
    if params.max_dim > 2 {
        return Err(HomologyError::InvalidMaxDim(params.max_dim));
    }
    let dist = pairwise_distances(cloud)?;
    let threshold = resolve_threshold(params, &dist)?;
    check_simplex_budget(&dist, threshold, params.max_dim, params.max_simplices)?;

    let n = dist.n();
    let edges = reduction::collect_edges(&dist, threshold);
    let dim0 = dim0_union_find(&edges, n);

    let mut diagrams = Vec::with_capacity(params.max_dim + 1);
    let mut d0 = PersistenceDiagram {
        dimension: 0,
        pairs: dim0.pairs,
        essential_births: vec![0.0; dim0.essential],
        threshold,
    };
    d0.canonicalize();
    diagrams.push(d0);

    if params.max_dim >= 1 {
        let binom = reduction::Binomial::new(n);
        // Clearing: edges that killed a component reduce to zero in the
        // dimension-1 pass and are skipped.
        let mut columns: Vec<reduction::Simplex<2>> = edges
            .iter()
            .zip(&dim0.tree_edges)
            .filter(|(_, tree)| !**tree)
            .map(|(e, _)| *e)
            .collect();
        columns.reverse(); // edges were sorted ascending; the pass wants descending
        let pass1 = reduction::reduce_pass::<2, 3>(&columns, &dist, threshold, &binom);

        let mut d1 = PersistenceDiagram {
            dimension: 1,
            pairs: pass1
                .pairs
                .iter()
                .map(|&(b, d)| PersistencePair { birth: b, death: d })
                .collect(),
            essential_births: pass1.essential.clone(),
            threshold,
        };
        d1.canonicalize();
        diagrams.push(d1);

        if params.max_dim >= 2 {
            let mut triangles = reduction::collect_triangles(&dist, threshold);
            // Clearing: triangles claimed as pivots in the dimension-1 pass.
            triangles.retain(|t| !pass1.pivot_ranks.contains(&binom.rank(&t.verts)));
            triangles.sort_unstable_by(|a, b| b.cmp(a));
            let pass2 = reduction::reduce_pass::<3, 4>(&triangles, &dist, threshold, &binom);

            let mut d2 = PersistenceDiagram {
                dimension: 2,
                pairs: pass2
                    .pairs
                    .iter()
                    .map(|&(b, d)| PersistencePair { birth: b, death: d })
                    .collect(),
                essential_births: pass2.essential.clone(),
                threshold,
            };
            d2.canonicalize();
            diagrams.push(d2);
        }
    }

    Ok(diagrams)
}

// ---------------------------------------------------------------------------
// Diagram file format: CSV rows (dimension, birth, death), death = "inf" for
// essential classes.
// ---------------------------------------------------------------------------

pub fn save_diagrams(diagrams: &[PersistenceDiagram], path: &Path) -> Result<(), HomologyError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| HomologyError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let mut out = String::from("dimension,birth,death\n");
    for dgm in diagrams {
        for pair in &dgm.pairs {
            out.push_str(&format!(
                "{},{},{}\n",
                dgm.dimension,
                format_f64(pair.birth),
                format_f64(pair.death)
            ));
        }
        for b in &dgm.essential_births {
            out.push_str(&format!("{},{},inf\n", dgm.dimension, format_f64(*b)));
        }
    }
    fs::write(path, out).map_err(|source| HomologyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read diagrams back from CSV. `threshold` restores the filtration cutoff
/// recorded elsewhere; when absent, the largest finite value in the file is
/// used. Dimensions with no rows up to the maximum seen come back empty.
pub fn load_diagrams(
    path: &Path,
    threshold: Option<f64>,
) -> Result<Vec<PersistenceDiagram>, HomologyError> {
    let raw = fs::read_to_string(path).map_err(|source| HomologyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |message: String| HomologyError::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let mut rows: Vec<(usize, f64, Option<f64>)> = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(malformed(format!("line {}: expected 3 fields", lineno + 1)));
        }
        let dim: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("line {}: bad dimension", lineno + 1)))?;
        let birth: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("line {}: bad birth", lineno + 1)))?;
        let death_field = fields[2].trim();
        let death = if death_field == "inf" {
            None
        } else {
            Some(
                death_field
                    .parse()
                    .map_err(|_| malformed(format!("line {}: bad death", lineno + 1)))?,
            )
        };
        rows.push((dim, birth, death));
    }

    let max_dim = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let fallback = rows
        .iter()
        .flat_map(|r| [Some(r.1), r.2])
        .flatten()
        .fold(0.0f64, f64::max);
    let threshold = threshold.unwrap_or(fallback);
    let mut diagrams: Vec<PersistenceDiagram> = (0..=max_dim)
        .map(|d| PersistenceDiagram::empty(d, threshold))
        .collect();
    for (dim, birth, death) in rows {
        match death {
            Some(d) => diagrams[dim].pairs.push(PersistencePair { birth, death: d }),
            None => diagrams[dim].essential_births.push(birth),
        }
    }
    for dgm in &mut diagrams {
        dgm.canonicalize();
    }
    Ok(diagrams)
}

#[cfg(test)]
mod tests;

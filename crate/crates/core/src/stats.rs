//! Two-sided Wilcoxon rank-sum tests over PR-matrix entries, producing a
//! significance map per (network, homology dimension).
//!
//! Small tie-free samples get an exact p-value by enumerating every rank
//! assignment; larger or tied samples use the normal approximation with
//! midranks, tie correction, and continuity correction. No multiple
//! comparison correction is applied by default; a Bonferroni switch exists.

use std::path::{Path, PathBuf};

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::ingest::format_f64;
use crate::matrices::DistanceMatrix;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty sample: both groups need at least one observation")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("group {group} needs at least 2 matrices, got {got}")]
    GroupTooSmall { group: &'static str, got: usize },
    #[error("matrix {id}: labels or ordering differ from the first matrix")]
    LabelMismatch { id: String },
    #[error("matrix {id}: homology dimension {got} differs from {expected}")]
    DimensionMismatch {
        id: String,
        got: usize,
        expected: usize,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Rank-sum test outcome. `u` is the Mann-Whitney U statistic of sample `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub u: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Exact enumeration is used when the pooled sample is at most this large
/// and tie-free.
const EXACT_LIMIT: usize = 10;

/// Two-sided Wilcoxon rank-sum (Mann-Whitney) test.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (n_a, n_b) = (a.len(), b.len());
    let n = n_a + n_b;

    // Midranks over the pooled sample.
    let mut pooled: Vec<(f64, usize)> = a
        .iter()
        .copied()
        .map(|v| (v, 0usize))
        .chain(b.iter().copied().map(|v| (v, 1usize)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranks = vec![0.0f64; n];
    let mut tie_sizes: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = midrank;
        }
        if j > i {
            tie_sizes.push(j - i + 1);
        }
        i = j + 1;
    }
    let rank_sum_a: f64 = pooled
        .iter()
        .zip(&ranks)
        .filter(|((_, group), _)| *group == 0)
        .map(|(_, r)| *r)
        .sum();
    let u = rank_sum_a - (n_a * (n_a + 1)) as f64 / 2.0;

    let tie_free = tie_sizes.is_empty();
    let p_value = if tie_free && n <= EXACT_LIMIT {
        exact_two_sided_p(&pooled, n_a, u)
    } else {
        normal_two_sided_p(u, n_a, n_b, &tie_sizes)
    };

    Ok(TestResult {
        u,
        p_value,
        n_a,
        n_b,
    })
}

/// Enumerate every assignment of n_a ranks out of n (tie-free) and double the
/// smaller tail of the exact U distribution.
fn exact_two_sided_p(pooled: &[(f64, usize)], n_a: usize, u_obs: f64) -> f64 {
    let n = pooled.len();
    let mut le = 0u64; // arrangements with U <= u_obs
    let mut ge = 0u64;
    let mut total = 0u64;
    // Iterate bitmasks of n bits with exactly n_a set; n <= 10 keeps this at
    // most 1024 masks.
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != n_a {
            continue;
        }
        total += 1;
        let mut rank_sum = 0u64;
        for pos in 0..n {
            if mask & (1 << pos) != 0 {
                rank_sum += pos as u64 + 1;
            }
        }
        let u = rank_sum as f64 - (n_a * (n_a + 1)) as f64 / 2.0;
        if u <= u_obs + 1e-12 {
            le += 1;
        }
        if u >= u_obs - 1e-12 {
            ge += 1;
        }
    }
    let tail = le.min(ge) as f64 / total as f64;
    (2.0 * tail).min(1.0)
}

/// Normal approximation with tie correction and continuity correction.
fn normal_two_sided_p(u: f64, n_a: usize, n_b: usize, tie_sizes: &[usize]) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    let n = na + nb;
    let mean = na * nb / 2.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Significance maps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceEntry {
    pub roi_i: String,
    pub roi_j: String,
    pub u: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// One entry per unordered ROI pair; `significant` means `p < alpha`
/// (after Bonferroni adjustment when enabled).
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMap {
    pub network: String,
    pub dimension: usize,
    pub alpha: f64,
    pub entries: Vec<SignificanceEntry>,
}

impl SignificanceMap {
    pub fn significant_pairs(&self) -> impl Iterator<Item = &SignificanceEntry> {
        self.entries.iter().filter(|e| e.significant)
    }
}

/// Per-ROI-pair rank-sum comparison of PR entries between two groups of
/// subjects. Raw per-pair threshold by default, matching the P-plot
/// convention.
pub fn significance_map(
    group_a: &[DistanceMatrix],
    group_b: &[DistanceMatrix],
    alpha: f64,
) -> Result<SignificanceMap, StatsError> {
    significance_map_with_options(group_a, group_b, alpha, false)
}

pub fn significance_map_with_options(
    group_a: &[DistanceMatrix],
    group_b: &[DistanceMatrix],
    alpha: f64,
    bonferroni: bool,
) -> Result<SignificanceMap, StatsError> {
    if group_a.len() < 2 {
        return Err(StatsError::GroupTooSmall {
            group: "a",
            got: group_a.len(),
        });
    }
    if group_b.len() < 2 {
        return Err(StatsError::GroupTooSmall {
            group: "b",
            got: group_b.len(),
        });
    }
    let reference = &group_a[0];
    for m in group_a.iter().chain(group_b) {
        if m.labels != reference.labels {
            return Err(StatsError::LabelMismatch {
                id: m.meta.id.clone(),
            });
        }
        if m.meta.dimension != reference.meta.dimension {
            return Err(StatsError::DimensionMismatch {
                id: m.meta.id.clone(),
                got: m.meta.dimension,
                expected: reference.meta.dimension,
            });
        }
    }

    let n = reference.n();
    let pair_count = n * (n - 1) / 2;
    let threshold = if bonferroni {
        alpha / pair_count.max(1) as f64
    } else {
        alpha
    };

    use rayon::prelude::*;
    let indices: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let entries: Vec<SignificanceEntry> = indices
        .par_iter()
        .map(|&(i, j)| {
            let a: Vec<f64> = group_a.iter().map(|m| m.get(i, j)).collect();
            let b: Vec<f64> = group_b.iter().map(|m| m.get(i, j)).collect();
            let result = wilcoxon_rank_sum(&a, &b)?;
            Ok(SignificanceEntry {
                roi_i: reference.labels[i].clone(),
                roi_j: reference.labels[j].clone(),
                u: result.u,
                p_value: result.p_value,
                significant: result.p_value < threshold,
            })
        })
        .collect::<Result<_, StatsError>>()?;

    Ok(SignificanceMap {
        network: reference.meta.network.clone(),
        dimension: reference.meta.dimension,
        alpha,
        entries,
    })
}

/// CSV rows (roi_i, roi_j, U, p_value, significant).
pub fn save_significance_map(map: &SignificanceMap, path: &Path) -> Result<(), StatsError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| StatsError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let mut out = String::from("roi_i,roi_j,u,p_value,significant\n");
    for e in &map.entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.roi_i,
            e.roi_j,
            format_f64(e.u),
            format_f64(e.p_value),
            e.significant
        ));
    }
    std::fs::write(path, out).map_err(|source| StatsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

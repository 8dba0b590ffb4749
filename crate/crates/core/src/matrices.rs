//! Pairwise Wasserstein distance matrices: PR (across ROIs of one subject)
//! and PS (across subjects for one ROI).
//!
//! Every matrix entry is a pure function of two diagrams, so the upper
//! triangle is filled in parallel and written back by index; sequential and
//! parallel fills are identical. Diagrams are produced through a
//! [`DiagramCache`] that computes each (series, params) key exactly once and
//! counts compute calls, which is how the one-diagram-per-label guarantee is
//! observable.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::distance::{wasserstein_distance, DistanceError, EssentialPolicy, WassersteinParams};
use crate::embed::{sliding_window_embed, EmbedError, EmbeddingParams};
use crate::homology::{compute_persistence, FiltrationParams, HomologyError, PersistenceDiagram};
use crate::ingest::{format_f64, CohortDataset, NetworkDescriptor, SubjectRecord};

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("subject {subject}: roi {roi} not found")]
    MissingRoi { subject: String, roi: String },
    #[error("roi {0}: not present in every subject")]
    UnknownRoi(String),
    #[error("{context}: {source}")]
    Embed {
        context: String,
        source: EmbedError,
    },
    #[error("{context}: {source}")]
    Homology {
        context: String,
        source: HomologyError,
    },
    #[error("{context}: {source}")]
    Distance {
        context: String,
        source: DistanceError,
    },
    #[error("requested dimension {dim} but diagrams only go up to {max}")]
    DimensionUnavailable { dim: usize, max: usize },
    #[error("matrix file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("matrix file {path}: checksum mismatch (expected {expected}, got {got})")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        got: String,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixMode {
    #[serde(rename = "PR")]
    PairwiseRoi,
    #[serde(rename = "PS")]
    PairwiseSubject,
}

impl std::fmt::Display for MatrixMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MatrixMode::PairwiseRoi => write!(f, "PR"),
            MatrixMode::PairwiseSubject => write!(f, "PS"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub mode: MatrixMode,
    pub network: String,
    /// Homology dimension of the compared diagrams.
    pub dimension: usize,
    pub q: f64,
    pub essential_policy: EssentialPolicy,
    /// Subject id for PR matrices, ROI label for PS matrices.
    pub id: String,
}

/// Symmetric nonnegative matrix with zero diagonal and row/column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    /// Row-major `labels.len() x labels.len()` values.
    pub values: Vec<f64>,
    pub meta: MatrixMeta,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.n();
        if self.values.len() != n * n {
            return Err(format!(
                "value count {} does not match {n}x{n}",
                self.values.len()
            ));
        }
        for i in 0..n {
            if self.get(i, i) != 0.0 {
                return Err(format!("nonzero diagonal at {i}"));
            }
            for j in (i + 1)..n {
                let (a, b) = (self.get(i, j), self.get(j, i));
                if a != b {
                    return Err(format!("asymmetry at ({i},{j}): {a} vs {b}"));
                }
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(format!("invalid entry at ({i},{j}): {a}"));
                }
            }
        }
        Ok(())
    }

    /// Frobenius norm of the elementwise difference.
    pub fn frobenius_distance(&self, other: &DistanceMatrix) -> Option<f64> {
        if self.n() != other.n() {
            return None;
        }
        Some(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        )
    }
}

// ---------------------------------------------------------------------------
// Diagram cache
// ---------------------------------------------------------------------------

/// In-memory diagram store keyed by (owner id, series label); each key is
/// computed exactly once. `computed_calls` counts actual persistence
/// computations, not lookups.
pub struct DiagramCache {
    map: Mutex<HashMap<(String, String), Arc<Vec<PersistenceDiagram>>>>,
    computed: AtomicUsize,
}

impl Default for DiagramCache {
    fn default() -> Self {
        Self::new()
    }
}

impl DiagramCache {
    pub fn new() -> Self {
        DiagramCache {
            map: Mutex::new(HashMap::new()),
            computed: AtomicUsize::new(0),
        }
    }

    pub fn computed_calls(&self) -> usize {
        self.computed.load(Ordering::SeqCst)
    }

    pub fn insert(&self, owner: &str, label: &str, diagrams: Arc<Vec<PersistenceDiagram>>) {
        self.map
            .lock()
            .unwrap()
            .insert((owner.to_string(), label.to_string()), diagrams);
    }

    pub fn get_or_compute(
        &self,
        owner: &str,
        label: &str,
        series: &crate::ingest::TimeSeries,
        embed_params: &EmbeddingParams,
        filtration: &FiltrationParams,
    ) -> Result<Arc<Vec<PersistenceDiagram>>, MatrixError> {
        let key = (owner.to_string(), label.to_string());
        if let Some(found) = self.map.lock().unwrap().get(&key) {
            return Ok(Arc::clone(found));
        }
        let context = format!("{owner}/{label}");
        let cloud = sliding_window_embed(series, embed_params).map_err(|source| {
            MatrixError::Embed {
                context: context.clone(),
                source,
            }
        })?;
        let diagrams =
            compute_persistence(&cloud, filtration).map_err(|source| MatrixError::Homology {
                context: context.clone(),
                source,
            })?;
        self.computed.fetch_add(1, Ordering::SeqCst);
        let arc = Arc::new(diagrams);
        self.map.lock().unwrap().insert(key, Arc::clone(&arc));
        Ok(arc)
    }
}

// ---------------------------------------------------------------------------
// Matrix builders
// ---------------------------------------------------------------------------

/// Pairwise Wasserstein fill over labeled diagrams (upper triangle in
/// parallel, deterministic write-back).
pub fn matrix_from_diagrams(
    labeled: &[(String, &PersistenceDiagram)],
    meta: MatrixMeta,
    params: &WassersteinParams,
) -> Result<DistanceMatrix, MatrixError> {
    let n = labeled.len();
    let indices: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let entries: Vec<((usize, usize), f64)> = indices
        .par_iter()
        .map(|&(i, j)| {
            let d = wasserstein_distance(labeled[i].1, labeled[j].1, params).map_err(
                |source| MatrixError::Distance {
                    context: format!("{} vs {}", labeled[i].0, labeled[j].0),
                    source,
                },
            )?;
            Ok(((i, j), d))
        })
        .collect::<Result<_, MatrixError>>()?;

    let mut values = vec![0.0; n * n];
    for ((i, j), d) in entries {
        values[i * n + j] = d;
        values[j * n + i] = d;
    }
    Ok(DistanceMatrix {
        labels: labeled.iter().map(|(l, _)| l.clone()).collect(),
        values,
        meta,
    })
}

fn diagram_for_dim(
    diagrams: &[PersistenceDiagram],
    dim: usize,
) -> Result<&PersistenceDiagram, MatrixError> {
    diagrams
        .get(dim)
        .ok_or(MatrixError::DimensionUnavailable {
            dim,
            max: diagrams.len().saturating_sub(1),
        })
}

/// PR matrix: one subject, Wasserstein distances between the dimension-`dim`
/// diagrams of every ROI pair of the network. ROI order follows the network
/// descriptor so the arrangement is identical across subjects.
pub fn pairwise_roi_matrix(
    subject: &SubjectRecord,
    network: &NetworkDescriptor,
    dim: usize,
    params: &WassersteinParams,
    embed_params: &EmbeddingParams,
    filtration: &FiltrationParams,
    cache: &DiagramCache,
) -> Result<DistanceMatrix, MatrixError> {
    let mut per_roi: Vec<(String, Arc<Vec<PersistenceDiagram>>)> =
        Vec::with_capacity(network.roi_labels.len());
    for roi in &network.roi_labels {
        let series = subject
            .series
            .get(roi)
            .ok_or_else(|| MatrixError::MissingRoi {
                subject: subject.subject_id.clone(),
                roi: roi.clone(),
            })?;
        let diagrams =
            cache.get_or_compute(&subject.subject_id, roi, series, embed_params, filtration)?;
        per_roi.push((roi.clone(), diagrams));
    }
    let labeled: Vec<(String, &PersistenceDiagram)> = per_roi
        .iter()
        .map(|(roi, d)| Ok((roi.clone(), diagram_for_dim(d, dim)?)))
        .collect::<Result<_, MatrixError>>()?;
    matrix_from_diagrams(
        &labeled,
        MatrixMeta {
            mode: MatrixMode::PairwiseRoi,
            network: network.name.clone(),
            dimension: dim,
            q: params.q,
            essential_policy: params.essential,
            id: subject.subject_id.clone(),
        },
        params,
    )
}

/// PS matrix: one ROI, Wasserstein distances between the dimension-`dim`
/// diagrams of every subject pair, in cohort order.
pub fn pairwise_subject_matrix(
    cohort: &CohortDataset,
    roi_label: &str,
    dim: usize,
    params: &WassersteinParams,
    embed_params: &EmbeddingParams,
    filtration: &FiltrationParams,
    cache: &DiagramCache,
) -> Result<DistanceMatrix, MatrixError> {
    let mut per_subject: Vec<(String, Arc<Vec<PersistenceDiagram>>)> =
        Vec::with_capacity(cohort.subjects.len());
    for subject in &cohort.subjects {
        let series = subject
            .series
            .get(roi_label)
            .ok_or_else(|| MatrixError::UnknownRoi(roi_label.to_string()))?;
        let diagrams = cache.get_or_compute(
            &subject.subject_id,
            roi_label,
            series,
            embed_params,
            filtration,
        )?;
        per_subject.push((subject.subject_id.clone(), diagrams));
    }
    let network = cohort
        .networks
        .iter()
        .find(|n| n.roi_labels.iter().any(|r| r == roi_label))
        .map(|n| n.name.clone())
        .unwrap_or_default();
    let labeled: Vec<(String, &PersistenceDiagram)> = per_subject
        .iter()
        .map(|(id, d)| Ok((id.clone(), diagram_for_dim(d, dim)?)))
        .collect::<Result<_, MatrixError>>()?;
    matrix_from_diagrams(
        &labeled,
        MatrixMeta {
            mode: MatrixMode::PairwiseSubject,
            network,
            dimension: dim,
            q: params.q,
            essential_policy: params.essential,
            id: roi_label.to_string(),
        },
        params,
    )
}

// ---------------------------------------------------------------------------
// File format: CSV with a label header plus a JSON sidecar carrying metadata
// and a checksum of the CSV bytes.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Sidecar {
    meta: MatrixMeta,
    checksum: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".meta.json");
    PathBuf::from(os)
}

fn matrix_csv_bytes(m: &DistanceMatrix) -> String {
    let mut out = String::new();
    out.push_str(&m.labels.join(","));
    out.push('\n');
    let n = m.n();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format_f64(m.get(i, j))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn checksum(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn save_matrix(m: &DistanceMatrix, path: &Path) -> Result<(), MatrixError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| MatrixError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let csv = matrix_csv_bytes(m);
    std::fs::write(path, &csv).map_err(|source| MatrixError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let sidecar = Sidecar {
        meta: m.meta.clone(),
        checksum: checksum(csv.as_bytes()),
    };
    let sc_path = sidecar_path(path);
    std::fs::write(
        &sc_path,
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )
    .map_err(|source| MatrixError::Io {
        path: sc_path,
        source,
    })
}

pub fn load_matrix(path: &Path) -> Result<DistanceMatrix, MatrixError> {
    let csv = std::fs::read_to_string(path).map_err(|source| MatrixError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let sc_path = sidecar_path(path);
    let sidecar_raw = std::fs::read_to_string(&sc_path).map_err(|source| MatrixError::Io {
        path: sc_path.clone(),
        source,
    })?;
    let sidecar: Sidecar =
        serde_json::from_str(&sidecar_raw).map_err(|e| MatrixError::Malformed {
            path: sc_path.clone(),
            message: e.to_string(),
        })?;
    let got = checksum(csv.as_bytes());
    if got != sidecar.checksum {
        return Err(MatrixError::ChecksumMismatch {
            path: path.to_path_buf(),
            expected: sidecar.checksum,
            got,
        });
    }

    let malformed = |message: String| MatrixError::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = csv.lines();
    let labels: Vec<String> = lines
        .next()
        .ok_or_else(|| malformed("empty file".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let n = labels.len();
    let mut values = Vec::with_capacity(n * n);
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse()).collect();
        let row = row.map_err(|_| malformed(format!("unparseable row {}", idx + 1)))?;
        if row.len() != n {
            return Err(malformed(format!(
                "row {} has {} fields, expected {n}",
                idx + 1,
                row.len()
            )));
        }
        values.extend(row);
    }
    if values.len() != n * n {
        return Err(malformed(format!(
            "expected {n}x{n} values, found {}",
            values.len()
        )));
    }

    let matrix = DistanceMatrix {
        labels,
        values,
        meta: sidecar.meta,
    };
    matrix
        .validate()
        .map_err(|message| MatrixError::Malformed {
            path: path.to_path_buf(),
            message,
        })?;
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homology::Threshold;
    use crate::ingest::{generate_synthetic_cohort, ClassRecipe, SyntheticSpec};

    fn tiny_cohort(rois: usize, subjects: usize) -> crate::ingest::CohortDataset {
        let spec = SyntheticSpec {
            classes: vec![ClassRecipe {
                label: "a".into(),
                period: 10,
                amplitude: 1.0,
                noise_sigma: 0.2,
            }],
            subjects_per_class: subjects,
            timepoints: 40,
            rois,
        };
        generate_synthetic_cohort(&spec, 19).unwrap()
    }

    fn h0_params() -> (WassersteinParams, EmbeddingParams, FiltrationParams) {
        (
            WassersteinParams::default(),
            EmbeddingParams::default(),
            FiltrationParams {
                max_dim: 0,
                threshold: Threshold::EnclosingRadius,
                max_simplices: 10_000_000,
            },
        )
    }

    #[test]
    fn roi_matrix_shape_and_metric_properties() {
        let cohort = tiny_cohort(6, 1);
        let (wp, ep, fp) = h0_params();
        let cache = DiagramCache::new();
        let m = pairwise_roi_matrix(
            &cohort.subjects[0],
            &cohort.networks[0],
            0,
            &wp,
            &ep,
            &fp,
            &cache,
        )
        .unwrap();
        assert_eq!(m.n(), 6);
        m.validate().unwrap();
        assert_eq!(m.meta.mode, MatrixMode::PairwiseRoi);
        assert_eq!(cache.computed_calls(), 6, "one diagram per ROI");
    }

    #[test]
    fn identical_series_give_zero_entry() {
        let mut cohort = tiny_cohort(3, 1);
        // Force roi_001 to equal roi_000.
        let first = cohort.subjects[0].series[0].values.clone();
        let s = &mut cohort.subjects[0];
        s.series[1].values = first;
        let (wp, ep, fp) = h0_params();
        let cache = DiagramCache::new();
        let m = pairwise_roi_matrix(&s.clone(), &cohort.networks[0], 0, &wp, &ep, &fp, &cache)
            .unwrap();
        assert!(m.get(0, 1).abs() <= 1e-12);
        assert!(m.get(0, 2) > 0.0);
    }

    #[test]
    fn subject_matrix_shape_and_duplicate_subject() {
        let mut cohort = tiny_cohort(2, 3);
        // Duplicate subject 0's data into subject 2.
        let clone_series = cohort.subjects[0].series.clone();
        cohort.subjects[2].series = clone_series;
        let (wp, ep, fp) = h0_params();
        let cache = DiagramCache::new();
        let roi = cohort.networks[0].roi_labels[0].clone();
        let m = pairwise_subject_matrix(&cohort, &roi, 0, &wp, &ep, &fp, &cache).unwrap();
        assert_eq!(m.n(), 3);
        m.validate().unwrap();
        assert!(m.get(0, 2).abs() <= 1e-12, "duplicate subjects at distance 0");
        assert_eq!(m.meta.mode, MatrixMode::PairwiseSubject);
        assert_eq!(cache.computed_calls(), 3, "one diagram per subject");
    }

    #[test]
    fn single_subject_matrix_is_zero() {
        let cohort = tiny_cohort(2, 1);
        let (wp, ep, fp) = h0_params();
        let cache = DiagramCache::new();
        let roi = cohort.networks[0].roi_labels[0].clone();
        let m = pairwise_subject_matrix(&cohort, &roi, 0, &wp, &ep, &fp, &cache).unwrap();
        assert_eq!(m.n(), 1);
        assert_eq!(m.values, vec![0.0]);
    }

    #[test]
    fn unknown_roi_rejected() {
        let cohort = tiny_cohort(2, 2);
        let (wp, ep, fp) = h0_params();
        let cache = DiagramCache::new();
        let err = pairwise_subject_matrix(&cohort, "missing", 0, &wp, &ep, &fp, &cache);
        assert!(matches!(err, Err(MatrixError::UnknownRoi(_))));
    }

    #[test]
    fn parallel_fill_matches_sequential() {
        let cohort = tiny_cohort(8, 1);
        let (wp, ep, fp) = h0_params();
        let cache = DiagramCache::new();
        let m = pairwise_roi_matrix(
            &cohort.subjects[0],
            &cohort.networks[0],
            0,
            &wp,
            &ep,
            &fp,
            &cache,
        )
        .unwrap();
        // Sequential reference fill from the same diagrams.
        let n = m.n();
        for i in 0..n {
            for j in (i + 1)..n {
                let di = cache
                    .get_or_compute(
                        &cohort.subjects[0].subject_id,
                        &m.labels[i],
                        &cohort.subjects[0].series[&m.labels[i]],
                        &ep,
                        &fp,
                    )
                    .unwrap();
                let dj = cache
                    .get_or_compute(
                        &cohort.subjects[0].subject_id,
                        &m.labels[j],
                        &cohort.subjects[0].series[&m.labels[j]],
                        &ep,
                        &fp,
                    )
                    .unwrap();
                let d = wasserstein_distance(&di[0], &dj[0], &wp).unwrap();
                assert!((d - m.get(i, j)).abs() <= 1e-12);
            }
        }
        assert_eq!(cache.computed_calls(), 8, "lookups hit the cache");
    }

    #[test]
    fn permutation_equivariance() {
        let cohort = tiny_cohort(5, 1);
        let (wp, ep, fp) = h0_params();
        let cache = DiagramCache::new();
        let network = &cohort.networks[0];
        let m = pairwise_roi_matrix(&cohort.subjects[0], network, 0, &wp, &ep, &fp, &cache)
            .unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let permuted_network = NetworkDescriptor {
            name: network.name.clone(),
            roi_labels: perm.iter().map(|&i| network.roi_labels[i].clone()).collect(),
        };
        let mp = pairwise_roi_matrix(
            &cohort.subjects[0],
            &permuted_network,
            0,
            &wp,
            &ep,
            &fp,
            &cache,
        )
        .unwrap();
        for (a, &pa) in perm.iter().enumerate() {
            for (b, &pb) in perm.iter().enumerate() {
                assert_eq!(mp.get(a, b), m.get(pa, pb));
            }
        }
    }

    #[test]
    fn matrix_roundtrip_and_corruption() {
        let cohort = tiny_cohort(4, 1);
        let (wp, ep, fp) = h0_params();
        let cache = DiagramCache::new();
        let m = pairwise_roi_matrix(
            &cohort.subjects[0],
            &cohort.networks[0],
            0,
            &wp,
            &ep,
            &fp,
            &cache,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        save_matrix(&m, &path).unwrap();
        let back = load_matrix(&path).unwrap();
        assert_eq!(back.labels, m.labels);
        assert_eq!(back.meta, m.meta);
        for (a, b) in back.values.iter().zip(&m.values) {
            assert_eq!(a, b, "lossless round-trip");
        }

        // Truncated file: checksum mismatch.
        let csv = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &csv[..csv.len() / 2]).unwrap();
        assert!(matches!(
            load_matrix(&path),
            Err(MatrixError::ChecksumMismatch { .. })
        ));

        // Hand-injected asymmetry (with a recomputed checksum so validation,
        // not the checksum, catches it).
        let mut rows: Vec<Vec<String>> = csv
            .lines()
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect();
        rows[1][2] = "99.0".into();
        let tampered: String = rows
            .iter()
            .map(|r| r.join(","))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n";
        std::fs::write(&path, &tampered).unwrap();
        let sc = sidecar_path(&path);
        let mut sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&sc).unwrap()).unwrap();
        sidecar["checksum"] = serde_json::Value::String(checksum(tampered.as_bytes()));
        std::fs::write(&sc, serde_json::to_string(&sidecar).unwrap()).unwrap();
        match load_matrix(&path) {
            Err(MatrixError::Malformed { message, .. }) => {
                assert!(message.contains("asymmetry"), "{message}")
            }
            other => panic!("expected asymmetry error, got {other:?}"),
        }
    }
}

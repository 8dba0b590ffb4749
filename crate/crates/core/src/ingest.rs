//! Cohort ingestion: manifest + per-subject CSV loading, atlas metadata, and
//! synthetic cohort generation for desk-scale validation.
//!
//! A cohort on disk is a JSON manifest naming one CSV per subject. The CSV
//! header row carries ROI labels; every following row is one timepoint. ROI
//! labels (never column positions) are the join key between networks and
//! subject series.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("subject {subject}: csv parse error in {path}: {source}")]
    Csv {
        subject: String,
        path: PathBuf,
        source: csv::Error,
    },
    #[error("subject {subject}: ragged series lengths (roi {roi} has {got} timepoints, expected {expected})")]
    RaggedSeries {
        subject: String,
        roi: String,
        got: usize,
        expected: usize,
    },
    #[error("subject {subject}: roi {roi} required by network {network} is absent")]
    MissingRoi {
        subject: String,
        roi: String,
        network: String,
    },
    #[error("subject {subject}, roi {roi}: non-finite value at timepoint {row}")]
    NonFinite {
        subject: String,
        roi: String,
        row: usize,
    },
    #[error("subject {subject}, roi {roi}: series length {len} is below the minimum of 4")]
    SeriesTooShort {
        subject: String,
        roi: String,
        len: usize,
    },
    #[error("subject {subject}: duplicate roi label {roi}")]
    DuplicateRoi { subject: String, roi: String },
    #[error("duplicate subject id {0}")]
    DuplicateSubject(String),
    #[error("unknown network name: {0}")]
    UnknownNetwork(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// One ROI's scalar signal over time; uniform sampling assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub roi_label: String,
    pub values: Vec<f64>,
}

/// Named group of ROIs; `size()` is the ROI count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDescriptor {
    pub name: String,
    pub roi_labels: Vec<String>,
}

impl NetworkDescriptor {
    pub fn size(&self) -> usize {
        self.roi_labels.len()
    }
}

#[derive(Debug, Clone)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: String,
    /// Ordered by first appearance (CSV column order / generation order).
    pub series: IndexMap<String, TimeSeries>,
}

impl SubjectRecord {
    pub fn series_len(&self) -> usize {
        self.series.values().next().map_or(0, |s| s.values.len())
    }
}

#[derive(Debug, Clone)]
pub struct CohortDataset {
    pub subjects: Vec<SubjectRecord>,
    pub networks: Vec<NetworkDescriptor>,
}

impl CohortDataset {
    pub fn network(&self, name: &str) -> Option<&NetworkDescriptor> {
        self.networks.iter().find(|n| n.name == name)
    }

    /// Distinct class labels in subject order of first appearance.
    pub fn class_labels(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for s in &self.subjects {
            if !seen.contains(&s.label) {
                seen.push(s.label.clone());
            }
        }
        seen
    }
}

/// The six-network atlas: (name, ROI count). Counts sum to 160.
pub const ATLAS_NETWORKS: [(&str, usize); 6] = [
    ("cerebellum", 18),
    ("cingulo_opercular", 32),
    ("default_mode", 34),
    ("fronto_parietal", 21),
    ("occipital", 22),
    ("sensorimotor", 33),
];

/// Descriptor for one of the six builtin networks.
///
/// Only ROI counts are published for the atlas; labels are generated as
/// `<network>_roi_NN` so they are stable join keys.
pub fn atlas_network(name: &str) -> Result<NetworkDescriptor, IngestError> {
    let (name, size) = ATLAS_NETWORKS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| IngestError::UnknownNetwork(name.to_string()))?;
    let roi_labels = (1..=*size)
        .map(|i| format!("{name}_roi_{i:02}"))
        .collect();
    Ok(NetworkDescriptor {
        name: name.to_string(),
        roi_labels,
    })
}

/// All six builtin networks in atlas order.
pub fn builtin_networks() -> Vec<NetworkDescriptor> {
    ATLAS_NETWORKS
        .iter()
        .map(|(n, _)| atlas_network(n).expect("builtin"))
        .collect()
}

// ---------------------------------------------------------------------------
// Manifest format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    subjects: Vec<ManifestSubject>,
    networks: ManifestNetworks,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSubject {
    id: String,
    label: String,
    csv_path: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ManifestNetworks {
    Builtin(String),
    Custom(Vec<NetworkDescriptor>),
}

/// Load and fully validate a cohort from a JSON manifest.
///
/// Subject CSVs are read in parallel; results are merged back in manifest
/// order so the dataset layout is independent of scheduling.
pub fn load_cohort(manifest_path: &Path) -> Result<CohortDataset, IngestError> {
    let raw = fs::read_to_string(manifest_path).map_err(|source| IngestError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let manifest: ManifestFile =
        serde_json::from_str(&raw).map_err(|source| IngestError::Manifest {
            path: manifest_path.to_path_buf(),
            source,
        })?;

    let networks = match manifest.networks {
        ManifestNetworks::Builtin(ref tag) if tag == "builtin" => builtin_networks(),
        ManifestNetworks::Builtin(ref tag) => return Err(IngestError::UnknownNetwork(tag.clone())),
        ManifestNetworks::Custom(list) => list,
    };

    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    for s in &manifest.subjects {
        if !seen.insert(s.id.clone()) {
            return Err(IngestError::DuplicateSubject(s.id.clone()));
        }
    }

    use rayon::prelude::*;
    let subjects: Vec<SubjectRecord> = manifest
        .subjects
        .par_iter()
        .map(|s| read_subject_csv(&s.id, &s.label, &base.join(&s.csv_path)))
        .collect::<Result<_, _>>()?;

    let dataset = CohortDataset { subjects, networks };
    validate_cohort(&dataset)?;
    Ok(dataset)
}

fn read_subject_csv(id: &str, label: &str, path: &Path) -> Result<SubjectRecord, IngestError> {
    let file = fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers: Vec<String> = reader
        .headers()
        .map_err(|source| IngestError::Csv {
            subject: id.to_string(),
            path: path.to_path_buf(),
            source,
        })?
        .iter()
        .map(str::to_string)
        .collect();

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|source| IngestError::Csv {
            subject: id.to_string(),
            path: path.to_path_buf(),
            source,
        })?;
        if record.len() != headers.len() {
            return Err(IngestError::RaggedSeries {
                subject: id.to_string(),
                roi: format!("row {}", row_idx + 1),
                got: record.len(),
                expected: headers.len(),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| IngestError::NonFinite {
                subject: id.to_string(),
                roi: headers[col].clone(),
                row: row_idx,
            })?;
            if !value.is_finite() {
                return Err(IngestError::NonFinite {
                    subject: id.to_string(),
                    roi: headers[col].clone(),
                    row: row_idx,
                });
            }
            columns[col].push(value);
        }
    }

    let mut series = IndexMap::new();
    for (roi, values) in headers.into_iter().zip(columns) {
        let prev = series.insert(
            roi.clone(),
            TimeSeries {
                roi_label: roi.clone(),
                values,
            },
        );
        if prev.is_some() {
            return Err(IngestError::DuplicateRoi {
                subject: id.to_string(),
                roi,
            });
        }
    }

    Ok(SubjectRecord {
        subject_id: id.to_string(),
        label: label.to_string(),
        series,
    })
}

/// Cross-checks every invariant the rest of the pipeline assumes.
pub fn validate_cohort(dataset: &CohortDataset) -> Result<(), IngestError> {
    for subject in &dataset.subjects {
        let expected = subject.series_len();
        for (roi, ts) in &subject.series {
            if ts.values.len() != expected {
                return Err(IngestError::RaggedSeries {
                    subject: subject.subject_id.clone(),
                    roi: roi.clone(),
                    got: ts.values.len(),
                    expected,
                });
            }
            if ts.values.len() < 4 {
                return Err(IngestError::SeriesTooShort {
                    subject: subject.subject_id.clone(),
                    roi: roi.clone(),
                    len: ts.values.len(),
                });
            }
            if let Some(row) = ts.values.iter().position(|v| !v.is_finite()) {
                return Err(IngestError::NonFinite {
                    subject: subject.subject_id.clone(),
                    roi: roi.clone(),
                    row,
                });
            }
        }
        for network in &dataset.networks {
            for roi in &network.roi_labels {
                if !subject.series.contains_key(roi) {
                    return Err(IngestError::MissingRoi {
                        subject: subject.subject_id.clone(),
                        roi: roi.clone(),
                        network: network.name.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Write a cohort as per-subject CSVs plus a manifest, returning the manifest
/// path. Values are written in shortest round-trip decimal form, so a reload
/// reproduces every f64 bit-for-bit.
pub fn write_cohort(dataset: &CohortDataset, dir: &Path) -> Result<PathBuf, IngestError> {
    fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut subjects = Vec::new();
    for subject in &dataset.subjects {
        let csv_name = format!("{}.csv", sanitize_for_path(&subject.subject_id));
        let path = dir.join(&csv_name);
        let mut writer = csv::Writer::from_path(&path).map_err(|source| IngestError::Csv {
            subject: subject.subject_id.clone(),
            path: path.clone(),
            source,
        })?;
        let labels: Vec<&str> = subject.series.keys().map(String::as_str).collect();
        writer
            .write_record(&labels)
            .and_then(|_| {
                let len = subject.series_len();
                for t in 0..len {
                    let row: Vec<String> = subject
                        .series
                        .values()
                        .map(|ts| format_f64(ts.values[t]))
                        .collect();
                    writer.write_record(&row)?;
                }
                writer.flush().map_err(csv::Error::from)
            })
            .map_err(|source| IngestError::Csv {
                subject: subject.subject_id.clone(),
                path: path.clone(),
                source,
            })?;
        subjects.push(ManifestSubject {
            id: subject.subject_id.clone(),
            label: subject.label.clone(),
            csv_path: csv_name,
        });
    }
    let manifest = ManifestFile {
        subjects,
        networks: ManifestNetworks::Custom(dataset.networks.clone()),
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(|source| IngestError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    Ok(manifest_path)
}

/// Shortest decimal form that parses back to the identical f64.
pub fn format_f64(v: f64) -> String {
    let mut buf = ryu_format(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // std's Display for f64 is shortest round-trip since Rust 1.0 guarantees
    // parse(format(v)) == v.
    format!("{v}")
}

/// Filesystem-safe slug for subject/ROI names.
pub fn sanitize_for_path(name: &str) -> String {
    let slug: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if slug.is_empty() {
        "_".to_string()
    } else {
        slug
    }
}

// ---------------------------------------------------------------------------
// Synthetic cohorts
// ---------------------------------------------------------------------------

/// Signal recipe for one synthetic class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassRecipe {
    pub label: String,
    /// Base period in samples.
    pub period: usize,
    pub amplitude: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassRecipe>,
    pub subjects_per_class: usize,
    pub timepoints: usize,
    pub rois: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.classes.is_empty() {
            return Err(IngestError::InvalidSpec("no classes defined".into()));
        }
        if self.subjects_per_class == 0 {
            return Err(IngestError::InvalidSpec("subjects_per_class is 0".into()));
        }
        if self.rois == 0 {
            return Err(IngestError::InvalidSpec("rois is 0".into()));
        }
        for c in &self.classes {
            if c.period < 4 {
                return Err(IngestError::InvalidSpec(format!(
                    "class {}: period {} < 4 samples",
                    c.label, c.period
                )));
            }
            if c.noise_sigma < 0.0 || !c.noise_sigma.is_finite() {
                return Err(IngestError::InvalidSpec(format!(
                    "class {}: invalid noise sigma {}",
                    c.label, c.noise_sigma
                )));
            }
            if !c.amplitude.is_finite() {
                return Err(IngestError::InvalidSpec(format!(
                    "class {}: non-finite amplitude",
                    c.label
                )));
            }
            if self.timepoints < 3 * c.period {
                return Err(IngestError::InvalidSpec(format!(
                    "class {}: {} timepoints < 3 periods ({} samples)",
                    c.label,
                    self.timepoints,
                    3 * c.period
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic labeled cohort: per-ROI phase-randomized sinusoids at the
/// class period plus Gaussian noise. Pure function of `(spec, seed)`.
///
/// The sinusoid argument is built from `t mod period`, so a noiseless series
/// is bitwise periodic.
pub fn generate_synthetic_cohort(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<CohortDataset, IngestError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roi_labels: Vec<String> = (0..spec.rois).map(|i| format!("roi_{i:03}")).collect();

    let mut subjects = Vec::new();
    for class in &spec.classes {
        for k in 0..spec.subjects_per_class {
            let subject_id = format!("syn_{}_{k:03}", sanitize_for_path(&class.label));
            let mut series = IndexMap::new();
            for roi in &roi_labels {
                let phase: f64 = rng.gen_range(0.0..TAU);
                let values: Vec<f64> = (0..spec.timepoints)
                    .map(|t| {
                        let cycle = (t % class.period) as f64 / class.period as f64;
                        let clean = class.amplitude * (TAU * cycle + phase).sin();
                        if class.noise_sigma > 0.0 {
                            clean + class.noise_sigma * standard_normal(&mut rng)
                        } else {
                            clean
                        }
                    })
                    .collect();
                series.insert(
                    roi.clone(),
                    TimeSeries {
                        roi_label: roi.clone(),
                        values,
                    },
                );
            }
            subjects.push(SubjectRecord {
                subject_id,
                label: class.label.clone(),
                series,
            });
        }
    }

    let networks = vec![NetworkDescriptor {
        name: "synthetic".to_string(),
        roi_labels,
    }];
    Ok(CohortDataset { subjects, networks })
}

/// Box-Muller standard normal draw.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: vec![
                ClassRecipe {
                    label: "a".into(),
                    period: 20,
                    amplitude: 1.0,
                    noise_sigma: 0.1,
                },
                ClassRecipe {
                    label: "b".into(),
                    period: 35,
                    amplitude: 1.0,
                    noise_sigma: 0.1,
                },
            ],
            subjects_per_class: 10,
            timepoints: 140,
            rois: 4,
        }
    }

    #[test]
    fn atlas_counts_match() {
        assert_eq!(atlas_network("default_mode").unwrap().size(), 34);
        assert_eq!(atlas_network("cerebellum").unwrap().size(), 18);
        assert_eq!(atlas_network("cingulo_opercular").unwrap().size(), 32);
        assert_eq!(atlas_network("fronto_parietal").unwrap().size(), 21);
        assert_eq!(atlas_network("occipital").unwrap().size(), 22);
        assert_eq!(atlas_network("sensorimotor").unwrap().size(), 33);
        let total: usize = builtin_networks().iter().map(|n| n.size()).sum();
        assert_eq!(total, 160);
    }

    #[test]
    fn atlas_unknown_name() {
        assert!(matches!(
            atlas_network("limbic"),
            Err(IngestError::UnknownNetwork(_))
        ));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = small_spec();
        let a = generate_synthetic_cohort(&spec, 7).unwrap();
        let b = generate_synthetic_cohort(&spec, 7).unwrap();
        assert_eq!(a.subjects.len(), b.subjects.len());
        for (sa, sb) in a.subjects.iter().zip(&b.subjects) {
            assert_eq!(sa.subject_id, sb.subject_id);
            assert_eq!(sa.label, sb.label);
            for (ta, tb) in sa.series.values().zip(sb.series.values()) {
                assert_eq!(ta.values, tb.values, "bitwise identical series");
            }
        }
        let c = generate_synthetic_cohort(&spec, 8).unwrap();
        assert_ne!(
            a.subjects[0].series[0].values, c.subjects[0].series[0].values,
            "different seed changes data"
        );
    }

    #[test]
    fn synthetic_counts_and_balance() {
        let cohort = generate_synthetic_cohort(&small_spec(), 1).unwrap();
        assert_eq!(cohort.subjects.len(), 20);
        let a = cohort.subjects.iter().filter(|s| s.label == "a").count();
        assert_eq!(a, 10);
    }

    #[test]
    fn noiseless_series_exactly_periodic() {
        let spec = SyntheticSpec {
            classes: vec![ClassRecipe {
                label: "p".into(),
                period: 20,
                amplitude: 1.0,
                noise_sigma: 0.0,
            }],
            subjects_per_class: 1,
            timepoints: 140,
            rois: 2,
        };
        let cohort = generate_synthetic_cohort(&spec, 3).unwrap();
        for ts in cohort.subjects[0].series.values() {
            let v = &ts.values;
            // Lag-20 autocorrelation of an exactly periodic signal is 1.
            let n = v.len() - 20;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let mut num = 0.0;
            let mut den = 0.0;
            for t in 0..n {
                num += (v[t] - mean) * (v[t + 20] - mean);
            }
            for t in 0..v.len() {
                den += (v[t] - mean) * (v[t] - mean);
            }
            let scale = n as f64 / v.len() as f64;
            assert!(
                (num / (den * scale) - 1.0).abs() < 1e-12,
                "autocorrelation at the period should be 1"
            );
            for t in 0..n {
                assert_eq!(v[t], v[t + 20], "bitwise periodic");
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = small_spec();
        spec.classes[0].period = 3;
        assert!(generate_synthetic_cohort(&spec, 0).is_err());
        let mut spec = small_spec();
        spec.timepoints = 50; // < 3 * 35
        assert!(generate_synthetic_cohort(&spec, 0).is_err());
        let mut spec = small_spec();
        spec.classes[0].noise_sigma = -1.0;
        assert!(generate_synthetic_cohort(&spec, 0).is_err());
    }

    #[test]
    fn cohort_roundtrip_is_bitwise() {
        let cohort = generate_synthetic_cohort(&small_spec(), 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_cohort(&cohort, dir.path()).unwrap();
        let reloaded = load_cohort(&manifest).unwrap();
        assert_eq!(reloaded.subjects.len(), cohort.subjects.len());
        assert_eq!(reloaded.networks, cohort.networks);
        for (orig, back) in cohort.subjects.iter().zip(&reloaded.subjects) {
            assert_eq!(orig.subject_id, back.subject_id);
            assert_eq!(orig.label, back.label);
            for ((la, ta), (lb, tb)) in orig.series.iter().zip(back.series.iter()) {
                assert_eq!(la, lb);
                assert_eq!(ta.values, tb.values, "bitwise equal after round-trip");
            }
        }
    }

    #[test]
    fn load_errors_carry_identity() {
        let dir = tempfile::tempdir().unwrap();
        // Manifest pointing at a missing CSV.
        let manifest = dir.path().join("manifest.json");
        std::fs::write(
            &manifest,
            r#"{"subjects":[{"id":"s1","label":"x","csv_path":"absent.csv"}],
                "networks":[{"name":"net","roi_labels":["r1"]}]}"#,
        )
        .unwrap();
        let err = load_cohort(&manifest).unwrap_err();
        assert!(err.to_string().contains("absent.csv"), "{err}");

        // Subject missing a required ROI.
        std::fs::write(dir.path().join("s1.csv"), "r1\n1\n2\n3\n4\n").unwrap();
        std::fs::write(
            &manifest,
            r#"{"subjects":[{"id":"s1","label":"x","csv_path":"s1.csv"}],
                "networks":[{"name":"default_mode","roi_labels":["Post cingulate 108"]}]}"#,
        )
        .unwrap();
        let err = load_cohort(&manifest).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("s1") && msg.contains("Post cingulate 108"), "{msg}");

        // Non-finite value.
        std::fs::write(dir.path().join("s1.csv"), "r1\n1\nNaN\n3\n4\n").unwrap();
        std::fs::write(
            &manifest,
            r#"{"subjects":[{"id":"s1","label":"x","csv_path":"s1.csv"}],
                "networks":[{"name":"net","roi_labels":["r1"]}]}"#,
        )
        .unwrap();
        let err = load_cohort(&manifest).unwrap_err();
        assert!(matches!(err, IngestError::NonFinite { .. }), "{err}");
    }

    #[test]
    fn load_preserves_dimensions() {
        let spec = SyntheticSpec {
            classes: vec![ClassRecipe {
                label: "only".into(),
                period: 20,
                amplitude: 1.0,
                noise_sigma: 0.0,
            }],
            subjects_per_class: 2,
            timepoints: 140,
            rois: 6,
        };
        let cohort = generate_synthetic_cohort(&spec, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_cohort(&cohort, dir.path()).unwrap();
        let loaded = load_cohort(&manifest).unwrap();
        assert_eq!(loaded.subjects.len(), 2);
        for s in &loaded.subjects {
            assert_eq!(s.series.len(), 6);
            assert_eq!(s.series_len(), 140);
        }
    }
}

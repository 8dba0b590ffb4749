//! Sliding-window delay embedding of a 1-D series into (M+1)-dimensional
//! space.
//!
//! Point `i` of the embedding is the window `(f(i), f(i+tau), ..., f(i+M*tau))`,
//! so a series of length N yields exactly `N - M*tau` points. A periodic
//! signal traces a closed loop, which is what the downstream persistence
//! stage quantifies.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ingest::{format_f64, TimeSeries};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("series {roi}: length {len} too short for M={m}, tau={tau} (needs at least {min})")]
    SeriesTooShort {
        roi: String,
        len: usize,
        m: usize,
        tau: usize,
        min: usize,
    },
    #[error("invalid embedding params: tau must be >= 1")]
    InvalidTau,
    #[error("cloud file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Embedding dimension M and time lag tau (defaults 2 and 1: 3-sample
/// windows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingParams {
    pub m: usize,
    pub tau: usize,
    /// Optional z-score normalization of the series before embedding.
    /// Off by default; distances downstream are scale-sensitive.
    pub zscore: bool,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self {
            m: 2,
            tau: 1,
            zscore: false,
        }
    }
}

impl EmbeddingParams {
    pub fn new(m: usize, tau: usize) -> Self {
        Self {
            m,
            tau,
            zscore: false,
        }
    }

    /// Window length in samples.
    pub fn window(&self) -> usize {
        self.m + 1
    }
}

/// Ordered point cloud in (M+1)-dimensional space.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    /// Length of the source series.
    pub source_len: usize,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vec<f64>>) -> Self {
        let dim = points.first().map_or(0, Vec::len);
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            assert_eq!(p.len(), dim, "all points must share a dimension");
            coords.extend_from_slice(p);
        }
        PointCloud {
            dim,
            coords,
            source_len: 0,
        }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim.max(1))
    }
}

/// Embed a series with the given window parameters.
pub fn sliding_window_embed(
    series: &TimeSeries,
    params: &EmbeddingParams,
) -> Result<PointCloud, EmbedError> {
    if params.tau == 0 {
        return Err(EmbedError::InvalidTau);
    }
    let n = series.values.len();
    let span = params.m * params.tau;
    if n < span + 2 {
        return Err(EmbedError::SeriesTooShort {
            roi: series.roi_label.clone(),
            len: n,
            m: params.m,
            tau: params.tau,
            min: span + 2,
        });
    }

    let values: Vec<f64> = if params.zscore {
        zscore(&series.values)
    } else {
        series.values.clone()
    };

    let count = n - span;
    let dim = params.m + 1;
    let mut coords = Vec::with_capacity(count * dim);
    for i in 0..count {
        for j in 0..dim {
            coords.push(values[i + j * params.tau]);
        }
    }
    Ok(PointCloud {
        dim,
        coords,
        source_len: n,
    })
}

fn zscore(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        values.iter().map(|v| v - mean).collect()
    } else {
        values.iter().map(|v| (v - mean) / sd).collect()
    }
}

/// Write a cloud as CSV, one point per row.
pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<(), EmbedError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| EmbedError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let mut out = String::new();
    for p in cloud.iter_points() {
        let row: Vec<String> = p.iter().map(|v| format_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_cloud(path: &Path) -> Result<PointCloud, EmbedError> {
    let raw = fs::read_to_string(path).map_err(|source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut points = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let point: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse()).collect();
        let point = point.map_err(|_| EmbedError::Malformed {
            path: path.to_path_buf(),
            message: format!("unparseable point on line {}", lineno + 1),
        })?;
        if let Some(first) = points.first() {
            let first: &Vec<f64> = first;
            if point.len() != first.len() {
                return Err(EmbedError::Malformed {
                    path: path.to_path_buf(),
                    message: format!("inconsistent dimension on line {}", lineno + 1),
                });
            }
        }
        points.push(point);
    }
    Ok(PointCloud::from_points(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ts(values: &[f64]) -> TimeSeries {
        TimeSeries {
            roi_label: "t".into(),
            values: values.to_vec(),
        }
    }

    #[test]
    fn direct_window_example() {
        let cloud = sliding_window_embed(
            &ts(&[1.0, 2.0, 3.0, 4.0, 5.0]),
            &EmbeddingParams::default(),
        )
        .unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.point(0), &[1.0, 2.0, 3.0]);
        assert_eq!(cloud.point(1), &[2.0, 3.0, 4.0]);
        assert_eq!(cloud.point(2), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn constant_series_gives_identical_points() {
        let cloud =
            sliding_window_embed(&ts(&[5.0, 5.0, 5.0, 5.0]), &EmbeddingParams::default()).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.point(0), &[5.0, 5.0, 5.0]);
        assert_eq!(cloud.point(1), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn point_count_is_n_minus_m_tau() {
        let values: Vec<f64> = (0..140).map(|t| (t as f64 * 0.3).sin()).collect();
        let cloud = sliding_window_embed(&ts(&values), &EmbeddingParams::default()).unwrap();
        assert_eq!(cloud.len(), 138);
        let cloud = sliding_window_embed(&ts(&values), &EmbeddingParams::new(4, 3)).unwrap();
        assert_eq!(cloud.len(), 140 - 12);
    }

    #[test]
    fn too_short_rejected() {
        let err = sliding_window_embed(&ts(&[1.0, 2.0, 3.0]), &EmbeddingParams::default());
        assert!(matches!(err, Err(EmbedError::SeriesTooShort { .. })));
    }

    #[test]
    fn window_identity_on_random_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(10..60);
            let m = rng.gen_range(1..4usize);
            let tau = rng.gen_range(1..3usize);
            if n < m * tau + 2 {
                continue;
            }
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cloud = sliding_window_embed(&ts(&values), &EmbeddingParams::new(m, tau)).unwrap();
            assert_eq!(cloud.len(), n - m * tau);
            for i in 0..cloud.len() {
                for j in 0..=m {
                    assert_eq!(cloud.point(i)[j], values[i + j * tau]);
                }
            }
        }
    }

    #[test]
    fn shift_covariance() {
        let values: Vec<f64> = (0..50).map(|t| (t as f64 * 0.7).sin() + t as f64 * 0.01).collect();
        let shifted = &values[1..];
        let params = EmbeddingParams::default();
        let full = sliding_window_embed(&ts(&values), &params).unwrap();
        let shift = sliding_window_embed(&ts(shifted), &params).unwrap();
        assert_eq!(shift.len(), full.len() - 1);
        for i in 0..shift.len() {
            assert_eq!(shift.point(i), full.point(i + 1));
        }
    }

    #[test]
    fn sinusoid_embedding_is_planar() {
        // Points (sin t, sin(t+a), sin(t+2a)) satisfy x0 - 2cos(a) x1 + x2 = 0;
        // the residual from that plane bounds the best-fit plane residual.
        for period in [4usize, 5, 12, 20] {
            let n = 3 * period + 20;
            let values: Vec<f64> = (0..n)
                .map(|t| (std::f64::consts::TAU * t as f64 / period as f64).sin())
                .collect();
            let cloud =
                sliding_window_embed(&ts(&values), &EmbeddingParams::default()).unwrap();
            let alpha = std::f64::consts::TAU / period as f64;
            let normal = [1.0, -2.0 * alpha.cos(), 1.0];
            let norm = (normal.iter().map(|v| v * v).sum::<f64>()).sqrt();
            let mut max_residual: f64 = 0.0;
            for p in cloud.iter_points() {
                let r = (normal[0] * p[0] + normal[1] * p[1] + normal[2] * p[2]).abs() / norm;
                max_residual = max_residual.max(r);
            }
            assert!(
                max_residual <= 1e-9,
                "period {period}: residual {max_residual}"
            );
        }
    }

    #[test]
    fn cloud_roundtrip() {
        let values: Vec<f64> = (0..30).map(|t| (t as f64 * 1.3).sin() * 2.5).collect();
        let cloud = sliding_window_embed(&ts(&values), &EmbeddingParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.csv");
        save_cloud(&cloud, &path).unwrap();
        let back = load_cloud(&path).unwrap();
        assert_eq!(back.dim(), cloud.dim());
        assert_eq!(back.len(), cloud.len());
        for i in 0..cloud.len() {
            assert_eq!(back.point(i), cloud.point(i));
        }
    }
}

//! Topological fingerprints for cohorts of 1-D time series.
//!
//! The pipeline turns each series into a sliding-window point cloud, computes
//! Vietoris-Rips persistence diagrams in dimensions 0-2, compares diagrams
//! with exact Wasserstein / bottleneck distances, assembles pairwise distance
//! matrices across subjects (PS) or across ROIs (PR), and feeds the latter
//! into group-level rank-sum significance maps and a hybrid 1D+2D
//! convolutional classifier trained from scratch.
//!
//! Modules follow the stage order:
//!
//! * [`ingest`] - cohort loading, synthetic cohort generation, atlas metadata
//! * [`embed`] - sliding-window delay embedding
//! * [`homology`] - Rips persistence (fast path + brute-force oracle)
//! * [`distance`] - Wasserstein and bottleneck distances between diagrams
//! * [`matrices`] - PR / PS distance matrices with diagram caching
//! * [`stats`] - Wilcoxon rank-sum significance maps over PR entries
//! * [`learn`] - hybrid convolutional classifier and kNN baseline

pub mod distance;
pub mod embed;
pub mod homology;
pub mod ingest;
pub mod learn;
pub mod matrices;
pub mod stats;

pub use distance::{bottleneck_distance, wasserstein_distance, EssentialPolicy, WassersteinParams};
pub use embed::{sliding_window_embed, EmbeddingParams, PointCloud};
pub use homology::{
    compute_persistence, enclosing_radius, oracle_persistence, pairwise_distances,
    FiltrationParams, PersistenceDiagram, PersistencePair, Threshold,
};
pub use ingest::{
    atlas_network, generate_synthetic_cohort, load_cohort, write_cohort, ClassRecipe,
    CohortDataset, NetworkDescriptor, SubjectRecord, SyntheticSpec, TimeSeries,
};
pub use learn::{
    evaluate, gradient_check, init_model, knn_baseline, train, HybridModel, TrainConfig,
};
pub use matrices::{
    load_matrix, pairwise_roi_matrix, pairwise_subject_matrix, save_matrix, DiagramCache,
    DistanceMatrix, MatrixMeta, MatrixMode,
};
pub use stats::{significance_map, wilcoxon_rank_sum, SignificanceMap, TestResult};

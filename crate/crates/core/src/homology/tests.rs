use super::*;
use crate::embed::PointCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(points: &[[f64; 3]]) -> PointCloud {
    PointCloud::from_points(points.iter().map(|p| p.to_vec()).collect())
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::from_points(
        (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect(),
    )
}

fn assert_diagrams_match(fast: &[PersistenceDiagram], oracle: &[PersistenceDiagram], ctx: &str) {
    assert_eq!(fast.len(), oracle.len(), "{ctx}: dimension count");
    for (f, o) in fast.iter().zip(oracle) {
        assert_eq!(f.dimension, o.dimension);
        assert_eq!(
            f.pairs.len(),
            o.pairs.len(),
            "{ctx}: dim {} pair count {:?} vs {:?}",
            f.dimension,
            f.pairs,
            o.pairs
        );
        for (pf, po) in f.pairs.iter().zip(&o.pairs) {
            assert!(
                (pf.birth - po.birth).abs() <= 1e-9 && (pf.death - po.death).abs() <= 1e-9,
                "{ctx}: dim {} pair {pf:?} vs {po:?}",
                f.dimension
            );
        }
        assert_eq!(
            f.essential_count(),
            o.essential_count(),
            "{ctx}: dim {} essential count",
            f.dimension
        );
        for (bf, bo) in f.essential_births.iter().zip(&o.essential_births) {
            assert!((bf - bo).abs() <= 1e-9, "{ctx}: essential births");
        }
    }
}

#[test]
fn pairwise_distance_examples() {
    let c = cloud(&[[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]]);
    let d = pairwise_distances(&c).unwrap();
    assert_eq!(d.get(0, 1), 5.0);
    assert_eq!(d.get(1, 0), 5.0);
    assert_eq!(d.get(0, 0), 0.0);

    let c = cloud(&[[0.1, 0.2, 0.3], [0.1, 0.2, 0.3], [1.0, 0.0, 0.0]]);
    let d = pairwise_distances(&c).unwrap();
    assert_eq!(d.get(0, 1), 0.0, "coincident points");
    assert!(d.get(0, 2) > 0.0);
}

#[test]
fn single_point_rejected() {
    let c = cloud(&[[0.0, 0.0, 0.0]]);
    assert!(matches!(
        pairwise_distances(&c),
        Err(HomologyError::TooFewPoints(1))
    ));
    assert!(compute_persistence(&c, &FiltrationParams::default()).is_err());
    assert!(oracle_persistence(&c, &FiltrationParams::default()).is_err());
}

#[test]
fn enclosing_radius_examples() {
    let two = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    assert_eq!(enclosing_radius(&pairwise_distances(&two).unwrap()), 1.0);

    let h = 3.0f64.sqrt() / 2.0;
    let tri = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0]]);
    let r = enclosing_radius(&pairwise_distances(&tri).unwrap());
    assert!((r - 1.0).abs() <= 1e-12);

    let square = cloud(&[
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
    ]);
    let r = enclosing_radius(&pairwise_distances(&square).unwrap());
    assert!((r - 2.0f64.sqrt()).abs() <= 1e-12);
}

#[test]
fn two_point_fixture() {
    let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    let params = FiltrationParams::with_max_dim(1);
    let dgms = compute_persistence(&c, &params).unwrap();
    assert_eq!(dgms[0].pairs.len(), 1);
    assert_eq!(dgms[0].pairs[0].birth, 0.0);
    assert_eq!(dgms[0].pairs[0].death, 1.0);
    assert_eq!(dgms[0].essential_count(), 1);
    assert!(dgms[1].pairs.is_empty());
    assert_eq!(dgms[1].essential_count(), 0);
    assert_diagrams_match(&dgms, &oracle_persistence(&c, &params).unwrap(), "two points");
}

#[test]
fn unit_square_fixture() {
    let c = cloud(&[
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
    ]);
    let params = FiltrationParams::default();
    let dgms = compute_persistence(&c, &params).unwrap();
    assert_eq!(dgms[1].pairs.len(), 1, "exactly one loop");
    let pair = dgms[1].pairs[0];
    assert!((pair.birth - 1.0).abs() <= 1e-9);
    assert!((pair.death - 2.0f64.sqrt()).abs() <= 1e-9);
    assert_eq!(dgms[1].essential_count(), 0);
    // H0: 3 merges at distance 1, one surviving component.
    assert_eq!(dgms[0].pairs.len(), 3);
    for p in &dgms[0].pairs {
        assert!((p.death - 1.0).abs() <= 1e-9);
    }
    assert_eq!(dgms[0].essential_count(), 1);
    assert!(dgms[2].pairs.is_empty());
    assert_diagrams_match(&dgms, &oracle_persistence(&c, &params).unwrap(), "square");
}

#[test]
fn equilateral_triangle_fixture() {
    let h = 3.0f64.sqrt() / 2.0;
    let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0]]);
    let params = FiltrationParams::default();
    let dgms = compute_persistence(&c, &params).unwrap();
    assert_eq!(dgms[0].pairs.len(), 2);
    for p in &dgms[0].pairs {
        assert!((p.death - 1.0).abs() <= 1e-9);
    }
    assert_eq!(dgms[0].essential_count(), 1);
    assert!(
        dgms[1].pairs.is_empty(),
        "loop and filling triangle appear together: {:?}",
        dgms[1].pairs
    );
    assert_eq!(dgms[1].essential_count(), 0);
    assert_diagrams_match(&dgms, &oracle_persistence(&c, &params).unwrap(), "triangle");
}

#[test]
fn oracle_equivalence_random_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let params = FiltrationParams::default();
    for trial in 0..120 {
        let n = rng.gen_range(4..=8);
        let c = random_cloud(&mut rng, n);
        let fast = compute_persistence(&c, &params).unwrap();
        let oracle = oracle_persistence(&c, &params).unwrap();
        assert_diagrams_match(&fast, &oracle, &format!("trial {trial} n={n}"));
    }
}

#[test]
fn oracle_equivalence_with_fixed_thresholds() {
    // Low thresholds exercise essential classes in all dimensions.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..60 {
        let n = rng.gen_range(5..=9);
        let c = random_cloud(&mut rng, n);
        let t = rng.gen_range(0.2..1.2);
        let params = FiltrationParams {
            max_dim: 2,
            threshold: Threshold::Fixed(t),
            max_simplices: 1_000_000,
        };
        let fast = compute_persistence(&c, &params).unwrap();
        let oracle = oracle_persistence(&c, &params).unwrap();
        assert_diagrams_match(&fast, &oracle, &format!("threshold trial {trial}"));
    }
}

#[test]
fn oracle_equivalence_with_duplicate_points() {
    // Coincident points create zero-length edges and heavy diameter ties.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..40 {
        let n = rng.gen_range(3..=6);
        let mut pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let dup = pts[rng.gen_range(0..n)].clone();
        pts.push(dup);
        let c = PointCloud::from_points(pts);
        let params = FiltrationParams::default();
        let fast = compute_persistence(&c, &params).unwrap();
        let oracle = oracle_persistence(&c, &params).unwrap();
        assert_diagrams_match(&fast, &oracle, &format!("duplicate trial {trial}"));
    }
}

#[test]
fn oracle_rejects_large_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = random_cloud(&mut rng, 13);
    assert!(matches!(
        oracle_persistence(&c, &FiltrationParams::default()),
        Err(HomologyError::OracleTooLarge { got: 13, .. })
    ));
}

#[test]
fn h0_count_matches_point_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.gen_range(4..30);
        let c = random_cloud(&mut rng, n);
        let dgms = compute_persistence(&c, &FiltrationParams::with_max_dim(0)).unwrap();
        assert_eq!(dgms[0].pairs.len() + dgms[0].essential_count(), n);
        assert_eq!(dgms[0].essential_count(), 1);
    }
}

#[test]
fn scale_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let base = random_cloud(&mut rng, 14);
    let params = FiltrationParams::default();
    let dgms = compute_persistence(&base, &params).unwrap();
    for &scale in &[2.0f64, 0.5, 3.0] {
        let scaled = PointCloud::from_points(
            base.iter_points()
                .map(|p| p.iter().map(|v| v * scale).collect())
                .collect(),
        );
        let sdgms = compute_persistence(&scaled, &params).unwrap();
        for (a, b) in dgms.iter().zip(&sdgms) {
            assert_eq!(a.pairs.len(), b.pairs.len());
            for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
                let tol = 1e-12 * scale.max(1.0);
                assert!((pa.birth * scale - pb.birth).abs() <= tol);
                assert!((pa.death * scale - pb.death).abs() <= tol);
            }
        }
    }
}

#[test]
fn monotone_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let c = random_cloud(&mut rng, 10);
        let d = pairwise_distances(&c).unwrap();
        let r = enclosing_radius(&d);
        let (t1, t2) = (0.6 * r, r);
        let lo = compute_persistence(
            &c,
            &FiltrationParams {
                max_dim: 2,
                threshold: Threshold::Fixed(t1),
                max_simplices: 1_000_000,
            },
        )
        .unwrap();
        let hi = compute_persistence(
            &c,
            &FiltrationParams {
                max_dim: 2,
                threshold: Threshold::Fixed(t2),
                max_simplices: 1_000_000,
            },
        )
        .unwrap();
        for dim in 0..=2 {
            let below = |dgm: &PersistenceDiagram| -> Vec<(f64, f64)> {
                dgm.pairs
                    .iter()
                    .filter(|p| p.death < t1)
                    .map(|p| (p.birth, p.death))
                    .collect()
            };
            assert_eq!(
                below(&lo[dim]),
                below(&hi[dim]),
                "sub-threshold pairs must be stable, dim {dim}"
            );
        }
    }
}

#[test]
fn disconnected_cloud_has_many_essentials() {
    let c = cloud(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [20.0, 0.0, 0.0]]);
    let params = FiltrationParams {
        max_dim: 1,
        threshold: Threshold::Fixed(1.0),
        max_simplices: 1000,
    };
    let dgms = compute_persistence(&c, &params).unwrap();
    assert!(dgms[0].pairs.is_empty());
    assert_eq!(dgms[0].essential_count(), 3);
}

#[test]
fn simplex_budget_is_enforced() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = random_cloud(&mut rng, 12);
    let params = FiltrationParams {
        max_dim: 2,
        threshold: Threshold::EnclosingRadius,
        max_simplices: 50,
    };
    assert!(matches!(
        compute_persistence(&c, &params),
        Err(HomologyError::SimplexBudget { .. })
    ));
}

#[test]
fn max_dim_validation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = random_cloud(&mut rng, 4);
    let params = FiltrationParams {
        max_dim: 3,
        ..FiltrationParams::default()
    };
    assert!(matches!(
        compute_persistence(&c, &params),
        Err(HomologyError::InvalidMaxDim(3))
    ));
}

#[test]
fn diagram_csv_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let c = random_cloud(&mut rng, 10);
    let dgms = compute_persistence(&c, &FiltrationParams::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dgm.csv");
    save_diagrams(&dgms, &path).unwrap();
    let back = load_diagrams(&path, Some(dgms[0].threshold)).unwrap();
    // Dimensions with content must round-trip exactly; trailing empty
    // dimensions may be dropped by the format.
    for dgm in &dgms {
        if dgm.pairs.is_empty() && dgm.essential_births.is_empty() {
            continue;
        }
        let loaded = &back[dgm.dimension];
        assert_eq!(loaded.pairs, dgm.pairs);
        assert_eq!(loaded.essential_births, dgm.essential_births);
        assert_eq!(loaded.threshold, dgm.threshold);
    }
}

#[test]
fn diagram_csv_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "dimension,birth,death\n0,0.0\n").unwrap();
    assert!(matches!(
        load_diagrams(&path, None),
        Err(HomologyError::Malformed { .. })
    ));
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tstopo::embed::{sliding_window_embed, EmbeddingParams};
use tstopo::homology::{compute_persistence, FiltrationParams};
use tstopo::ingest::{generate_synthetic_cohort, ClassRecipe, SyntheticSpec, TimeSeries};
use tstopo::learn::{heldout_indices, knn_baseline, train, TrainConfig};
use tstopo::matrices::{pairwise_roi_matrix, DiagramCache, DistanceMatrix};
use tstopo::WassersteinParams;

#[test]
#[ignore]
fn probe_periodicity_ratios() {
    for period in [5usize, 6, 8, 10, 12, 14, 16, 20, 24, 28, 35, 40, 46] {
        let n = 140;
        if n < 3 * period { continue; }
        let values: Vec<f64> = (0..n)
            .map(|t| (std::f64::consts::TAU * (t % period) as f64 / period as f64).sin())
            .collect();
        let series = TimeSeries { roi_label: "s".into(), values };
        let cloud = sliding_window_embed(&series, &EmbeddingParams::default()).unwrap();
        let dgms = compute_persistence(&cloud, &FiltrationParams::with_max_dim(1)).unwrap();
        let mut p: Vec<f64> = dgms[1].pairs.iter().map(|x| x.persistence()).collect();
        p.sort_by(|a, b| b.total_cmp(a));
        let top = p.first().copied().unwrap_or(0.0);
        let second = p.get(1).copied().unwrap_or(0.0);
        println!("period {period:>2}: classes {} top {top:.4} second {second:.4} ratio {:.2}",
            p.len(), if second > 0.0 { top / second } else { f64::INFINITY });
    }
}

#[test]
#[ignore]
fn probe_e2e_learning() {
    let spec = SyntheticSpec {
        classes: vec![
            ClassRecipe { label: "a".into(), period: 20, amplitude: 1.0, noise_sigma: 0.3 },
            ClassRecipe { label: "b".into(), period: 35, amplitude: 1.0, noise_sigma: 0.3 },
        ],
        subjects_per_class: 25,
        timepoints: 140,
        rois: 18,
    };
    let cohort = generate_synthetic_cohort(&spec, 2024).unwrap();
    let wparams = WassersteinParams::default();
    let eparams = EmbeddingParams::default();
    let fparams = FiltrationParams::with_max_dim(0);
    let network = cohort.networks[0].clone();
    use rayon::prelude::*;
    let t0 = std::time::Instant::now();
    let dataset: Vec<(DistanceMatrix, String)> = cohort.subjects.par_iter().map(|s| {
        let cache = DiagramCache::new();
        (pairwise_roi_matrix(s, &network, 0, &wparams, &eparams, &fparams, &cache).unwrap(), s.label.clone())
    }).collect();
    println!("PR build: {:?}", t0.elapsed());

    // Entry scale per class
    for label in ["a", "b"] {
        let vals: Vec<f64> = dataset.iter().filter(|(_, l)| l == label)
            .flat_map(|(m, _)| m.values.iter().copied().filter(|v| *v > 0.0))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt();
        println!("class {label}: mean PR entry {mean:.4} sd {sd:.4}");
    }

    for epochs in [30usize, 60, 100] {
        let config = TrainConfig { epochs, seed: 12, ..TrainConfig::default() };
        let t0 = std::time::Instant::now();
        let (_, m) = train(&dataset, &config).unwrap();
        println!("epochs {epochs}: train acc {:.2} test acc {:.2} loss0 {:.3} lossN {:.3} ({:?})",
            m.train_accuracy, m.test_accuracy, m.initial_loss, m.epoch_loss.last().unwrap(), t0.elapsed());
    }
    let config = TrainConfig { epochs: 30, seed: 12, ..TrainConfig::default() };
    let heldout = heldout_indices(&dataset, &config);
    let train_items: Vec<(DistanceMatrix, String)> = dataset.iter().enumerate()
        .filter(|(i, _)| !heldout.contains(i)).map(|(_, x)| x.clone()).collect();
    let correct = heldout.iter().filter(|&&i| knn_baseline(&train_items, &dataset[i].0, 3).unwrap() == dataset[i].1).count();
    println!("kNN heldout: {}/{}", correct, heldout.len());
}

#[test]
#[ignore]
fn probe_e2e_q1() {
    let spec = SyntheticSpec {
        classes: vec![
            ClassRecipe { label: "a".into(), period: 20, amplitude: 1.0, noise_sigma: 0.3 },
            ClassRecipe { label: "b".into(), period: 35, amplitude: 1.0, noise_sigma: 0.3 },
        ],
        subjects_per_class: 25,
        timepoints: 140,
        rois: 18,
    };
    let cohort = generate_synthetic_cohort(&spec, 2024).unwrap();
    let wparams = WassersteinParams { q: 1.0, ..WassersteinParams::default() };
    let eparams = EmbeddingParams::default();
    let fparams = FiltrationParams::with_max_dim(0);
    let network = cohort.networks[0].clone();
    use rayon::prelude::*;
    let dataset: Vec<(DistanceMatrix, String)> = cohort.subjects.par_iter().map(|s| {
        let cache = DiagramCache::new();
        (pairwise_roi_matrix(s, &network, 0, &wparams, &eparams, &fparams, &cache).unwrap(), s.label.clone())
    }).collect();
    for label in ["a", "b"] {
        let vals: Vec<f64> = dataset.iter().filter(|(_, l)| l == label)
            .flat_map(|(m, _)| m.values.iter().copied().filter(|v| *v > 0.0))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt();
        println!("q=1 class {label}: mean PR entry {mean:.4} sd {sd:.4}");
    }
    let config = TrainConfig { epochs: 30, seed: 12, ..TrainConfig::default() };
    let heldout = heldout_indices(&dataset, &config);
    let train_items: Vec<(DistanceMatrix, String)> = dataset.iter().enumerate()
        .filter(|(i, _)| !heldout.contains(i)).map(|(_, x)| x.clone()).collect();
    let correct = heldout.iter().filter(|&&i| knn_baseline(&train_items, &dataset[i].0, 3).unwrap() == dataset[i].1).count();
    println!("q=1 kNN heldout: {}/{}", correct, heldout.len());
    for epochs in [30usize, 60] {
        let config = TrainConfig { epochs, seed: 12, ..TrainConfig::default() };
        let (_, m) = train(&dataset, &config).unwrap();
        println!("q=1 epochs {epochs}: train acc {:.2} test acc {:.2}", m.train_accuracy, m.test_accuracy);
    }
}

fn knn_acc_for(sigma: f64, dim: usize, seed: u64) -> (f64, f64) {
    let spec = SyntheticSpec {
        classes: vec![
            ClassRecipe { label: "a".into(), period: 20, amplitude: 1.0, noise_sigma: sigma },
            ClassRecipe { label: "b".into(), period: 35, amplitude: 1.0, noise_sigma: sigma },
        ],
        subjects_per_class: 12,
        timepoints: 140,
        rois: 18,
    };
    let cohort = generate_synthetic_cohort(&spec, seed).unwrap();
    let wparams = WassersteinParams::default();
    let eparams = EmbeddingParams::default();
    let fparams = FiltrationParams::with_max_dim(dim);
    let network = cohort.networks[0].clone();
    use rayon::prelude::*;
    let dataset: Vec<(DistanceMatrix, String)> = cohort.subjects.par_iter().map(|s| {
        let cache = DiagramCache::new();
        (pairwise_roi_matrix(s, &network, dim, &wparams, &eparams, &fparams, &cache).unwrap(), s.label.clone())
    }).collect();
    let config = TrainConfig { epochs: 1, seed: 12, ..TrainConfig::default() };
    let heldout = heldout_indices(&dataset, &config);
    let train_items: Vec<(DistanceMatrix, String)> = dataset.iter().enumerate()
        .filter(|(i, _)| !heldout.contains(i)).map(|(_, x)| x.clone()).collect();
    let correct = heldout.iter().filter(|&&i| knn_baseline(&train_items, &dataset[i].0, 3).unwrap() == dataset[i].1).count();
    // full-dataset leave-subject-in knn as a separability proxy
    let all_correct = (0..dataset.len()).filter(|&i| {
        let others: Vec<(DistanceMatrix, String)> = dataset.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| x.clone()).collect();
        knn_baseline(&others, &dataset[i].0, 3).unwrap() == dataset[i].1
    }).count();
    (correct as f64 / heldout.len() as f64, all_correct as f64 / dataset.len() as f64)
}

#[test]
#[ignore]
fn probe_sigma_sweep() {
    for sigma in [0.05, 0.1, 0.15, 0.2, 0.3] {
        let (h, loo) = knn_acc_for(sigma, 0, 2024);
        println!("sigma {sigma}: H0 kNN heldout {h:.2} loo {loo:.2}");
    }
    for sigma in [0.1, 0.3] {
        let (h, loo) = knn_acc_for(sigma, 1, 2024);
        println!("sigma {sigma}: H1 kNN heldout {h:.2} loo {loo:.2}");
    }
}

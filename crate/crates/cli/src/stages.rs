//! Pipeline stage implementations. Each stage reads the previous stage's
//! artifacts, writes its own under one directory, and is wrapped in the
//! provenance/caching machinery so a rerun with unchanged inputs is a no-op.
//!
//! Stage order: cohort -> embed -> persist -> distmat -> stats/train -> eval.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use tstopo::embed::{load_cloud, save_cloud, sliding_window_embed, EmbeddingParams};
use tstopo::homology::{
    compute_persistence, load_diagrams, save_diagrams, FiltrationParams, PersistenceDiagram,
    Threshold,
};
use tstopo::ingest::{generate_synthetic_cohort, load_cohort, write_cohort, CohortDataset};
use tstopo::learn::{
    evaluate, heldout_indices, knn_baseline, load_model, save_model, train, TrainConfig,
};
use tstopo::matrices::{
    load_matrix, matrix_from_diagrams, save_matrix, sidecar_path, DistanceMatrix, MatrixMeta,
    MatrixMode,
};
use tstopo::stats::{significance_map_with_options, save_significance_map};
use tstopo::WassersteinParams;

use crate::config::PipelineConfig;
use crate::index::{unique_slugs, RoiFile, StageIndex, SubjectFiles};
use crate::provenance::{self, file_sha, run_stage, Provenance, StageOutcome};

#[derive(Debug, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub cached: bool,
    pub fingerprint: String,
    pub artifact_count: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub out_dir: String,
    pub root_seed: u64,
    pub stages: Vec<StageReport>,
}

fn threshold_json(t: Threshold) -> serde_json::Value {
    match t {
        Threshold::EnclosingRadius => json!("auto"),
        Threshold::Fixed(v) => json!(v),
    }
}

fn push_report(reports: &mut Vec<StageReport>, name: &str, outcome: &StageOutcome) {
    println!(
        "stage {name}: {}",
        if outcome.cached { "cached" } else { "built" }
    );
    reports.push(StageReport {
        stage: name.to_string(),
        cached: outcome.cached,
        fingerprint: outcome.provenance.fingerprint.clone(),
        artifact_count: outcome.provenance.artifacts.len(),
    });
}

fn require_upstream(dir: &Path, stage: &str) -> Result<Provenance> {
    let raw = std::fs::read_to_string(dir.join("provenance.json")).map_err(|_| {
        anyhow!("stage `{stage}` has not been built under {} (enable it or run it first)", dir.display())
    })?;
    Ok(serde_json::from_str(&raw)?)
}

/// Run the configured stages in dependency order.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out)?;
    let enabled = |s: &str| config.stages.iter().any(|x| x == s);
    let mut reports = Vec::new();

    // --- cohort ------------------------------------------------------------
    let cohort_dir = out.join("cohort");
    let cohort = if enabled("cohort") {
        let outcome = stage_cohort(config, &cohort_dir)?;
        push_report(&mut reports, "cohort", &outcome);
        outcome.provenance
    } else {
        require_upstream(&cohort_dir, "cohort")?
    };
    let manifest_path = match &config.ingest_manifest {
        Some(path) => path.clone(),
        None => cohort_dir.join("manifest.json"),
    };

    // --- embed ---------------------------------------------------------------
    let clouds_dir = out.join("clouds");
    let embed_prov = if enabled("embed") {
        let params = json!({
            "m": config.embed.m,
            "tau": config.embed.tau,
            "zscore": config.embed.zscore,
            "network": config.network,
        })
        .to_string();
        let outcome = run_stage(
            &clouds_dir,
            "embed",
            &params,
            &cohort.content_hash,
            config.seed,
            || stage_embed(&manifest_path, &clouds_dir, &config.embed, &config.network),
        )?;
        push_report(&mut reports, "embed", &outcome);
        outcome.provenance
    } else {
        require_upstream(&clouds_dir, "embed")?
    };

    // --- persist -------------------------------------------------------------
    let diagrams_dir = out.join("diagrams");
    let persist_prov = if enabled("persist") {
        let params = json!({
            "max_dim": config.filtration.max_dim,
            "threshold": threshold_json(config.filtration.threshold),
            "max_simplices": config.filtration.max_simplices,
        })
        .to_string();
        let outcome = run_stage(
            &diagrams_dir,
            "persist",
            &params,
            &embed_prov.content_hash,
            config.seed,
            || stage_persist(&clouds_dir, &diagrams_dir, &config.filtration),
        )?;
        push_report(&mut reports, "persist", &outcome);
        outcome.provenance
    } else {
        require_upstream(&diagrams_dir, "persist")?
    };

    // --- distmat -------------------------------------------------------------
    let matrices_dir = out.join("matrices");
    let distmat_prov = if enabled("distmat") {
        let params = json!({
            "mode": config.distmat_mode.to_string(),
            "dims": config.distmat_dims,
            "q": config.wasserstein.q,
            "essential": config.wasserstein.essential,
            "network": config.network,
        })
        .to_string();
        let outcome = run_stage(
            &matrices_dir,
            "distmat",
            &params,
            &persist_prov.content_hash,
            config.seed,
            || {
                stage_distmat(
                    &diagrams_dir,
                    &matrices_dir,
                    &config.network,
                    &config.distmat_dims,
                    config.distmat_mode,
                    &config.wasserstein,
                )
            },
        )?;
        push_report(&mut reports, "distmat", &outcome);
        outcome.provenance
    } else {
        require_upstream(&matrices_dir, "distmat")?
    };

    // --- stats ---------------------------------------------------------------
    if enabled("stats") {
        let pmap_dir = out.join("pmap");
        let params = json!({
            "alpha": config.stats_alpha,
            "bonferroni": config.stats_bonferroni,
            "groups": config.stats_groups,
            "dims": config.distmat_dims,
        })
        .to_string();
        let outcome = run_stage(
            &pmap_dir,
            "stats",
            &params,
            &distmat_prov.content_hash,
            config.seed,
            || {
                stage_stats(
                    &diagrams_dir,
                    &matrices_dir,
                    &pmap_dir,
                    config,
                )
            },
        )?;
        push_report(&mut reports, "stats", &outcome);
    }

    // --- train ---------------------------------------------------------------
    let model_dir = out.join("model");
    let mut train_prov: Option<Provenance> = None;
    if enabled("train") {
        let params = json!({
            "dim": config.train_dim,
            "epochs": config.train.epochs,
            "lr": config.train.learning_rate,
            "batch": config.train.batch_size,
            "split": config.train.train_fraction,
            "seed": config.seed,
        })
        .to_string();
        let outcome = run_stage(
            &model_dir,
            "train",
            &params,
            &distmat_prov.content_hash,
            config.seed,
            || stage_train(&diagrams_dir, &matrices_dir, &model_dir, config),
        )?;
        push_report(&mut reports, "train", &outcome);
        train_prov = Some(outcome.provenance);
    }

    // --- eval ----------------------------------------------------------------
    if enabled("eval") {
        let eval_dir = out.join("eval");
        let train_hash = match &train_prov {
            Some(p) => p.content_hash.clone(),
            None => require_upstream(&model_dir, "train")?.content_hash,
        };
        let input_hash = provenance::sha_hex(&[
            train_hash.as_bytes(),
            b"|",
            distmat_prov.content_hash.as_bytes(),
        ]);
        let params = json!({ "knn_k": config.knn_k, "dim": config.train_dim }).to_string();
        let outcome = run_stage(&eval_dir, "eval", &params, &input_hash, config.seed, || {
            stage_eval(&diagrams_dir, &matrices_dir, &model_dir, &eval_dir, config)
        })?;
        push_report(&mut reports, "eval", &outcome);
    }

    let manifest = RunManifest {
        out_dir: out.display().to_string(),
        root_seed: config.seed,
        stages: reports,
    };
    std::fs::write(
        out.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Individual stages (also used by the standalone subcommands)
// ---------------------------------------------------------------------------

fn stage_cohort(config: &PipelineConfig, dir: &Path) -> Result<StageOutcome> {
    match (&config.synth, &config.ingest_manifest) {
        (Some(spec), None) => {
            let params = serde_json::to_string(&json!({
                "synth": spec,
                "seed": config.seed,
            }))?;
            let spec = spec.clone();
            let seed = config.seed;
            let dir_owned = dir.to_path_buf();
            run_stage(dir, "cohort", &params, "", seed, move || {
                let cohort = generate_synthetic_cohort(&spec, seed)?;
                write_cohort(&cohort, &dir_owned)?;
                let mut artifacts: Vec<String> = std::fs::read_dir(&dir_owned)?
                    .filter_map(|e| e.ok())
                    .map(|e| e.file_name().to_string_lossy().to_string())
                    .filter(|name| name.ends_with(".csv") || name == "manifest.json")
                    .collect();
                artifacts.sort();
                Ok(artifacts)
            })
        }
        (None, Some(manifest)) => {
            // External data: validate and fingerprint it without copying.
            let cohort = load_cohort(manifest)?;
            let mut input_hash = file_sha(manifest)?;
            let base = manifest.parent().unwrap_or_else(|| Path::new("."));
            let raw: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(manifest)?)?;
            if let Some(subjects) = raw.get("subjects").and_then(|s| s.as_array()) {
                for s in subjects {
                    if let Some(csv) = s.get("csv_path").and_then(|p| p.as_str()) {
                        input_hash = provenance::sha_hex(&[
                            input_hash.as_bytes(),
                            file_sha(&base.join(csv))?.as_bytes(),
                        ]);
                    }
                }
            }
            let params = json!({ "manifest": manifest.display().to_string() }).to_string();
            let summary = json!({
                "subjects": cohort.subjects.len(),
                "networks": cohort.networks.len(),
                "source": manifest.display().to_string(),
                "source_hash": input_hash,
            });
            let dir_owned = dir.to_path_buf();
            run_stage(dir, "cohort", &params, &input_hash, config.seed, move || {
                std::fs::create_dir_all(&dir_owned)?;
                std::fs::write(
                    dir_owned.join("external.json"),
                    serde_json::to_string_pretty(&summary)?,
                )?;
                Ok(vec!["external.json".to_string()])
            })
        }
        (Some(_), Some(_)) => bail!("config sets both synth.* and ingest.manifest; pick one"),
        (None, None) => bail!("cohort stage needs synth.* keys or ingest.manifest"),
    }
}

/// Embed every (subject, network ROI) series and write one cloud CSV each.
pub fn stage_embed(
    manifest: &Path,
    out: &Path,
    params: &EmbeddingParams,
    network: &str,
) -> Result<Vec<String>> {
    let cohort = load_cohort(manifest)?;
    let net = cohort
        .network(network)
        .with_context(|| format!("network `{network}` not in cohort"))?
        .clone();
    let subject_ids: Vec<String> = cohort.subjects.iter().map(|s| s.subject_id.clone()).collect();
    let subject_slugs = unique_slugs(&subject_ids);
    let roi_slugs = unique_slugs(&net.roi_labels);

    // Per subject, per ROI: the embedded points.
    let clouds: Vec<Vec<Vec<Vec<f64>>>> = cohort
        .subjects
        .par_iter()
        .map(|subject| {
            net.roi_labels
                .iter()
                .map(|roi| {
                    let series = subject
                        .series
                        .get(roi)
                        .ok_or_else(|| anyhow!("subject {} lacks roi {roi}", subject.subject_id))?;
                    let cloud = sliding_window_embed(series, params)
                        .with_context(|| format!("{}/{roi}", subject.subject_id))?;
                    Ok(cloud
                        .iter_points()
                        .map(|p| p.to_vec())
                        .collect::<Vec<Vec<f64>>>())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut artifacts = Vec::new();
    let mut subjects = Vec::new();
    for ((subject, slug), cloud_rows) in cohort.subjects.iter().zip(&subject_slugs).zip(&clouds) {
        let sub_dir = out.join(slug);
        std::fs::create_dir_all(&sub_dir)?;
        let mut rois = Vec::new();
        for ((roi, roi_slug), points) in
            net.roi_labels.iter().zip(&roi_slugs).zip(cloud_rows)
        {
            let file = format!("{roi_slug}.csv");
            let cloud = tstopo::embed::PointCloud::from_points(points.clone());
            save_cloud(&cloud, &sub_dir.join(&file))?;
            artifacts.push(format!("{slug}/{file}"));
            rois.push(RoiFile {
                roi: roi.clone(),
                file,
                threshold: None,
            });
        }
        subjects.push(SubjectFiles {
            id: subject.subject_id.clone(),
            label: subject.label.clone(),
            dir: slug.clone(),
            rois,
        });
    }
    let index = StageIndex {
        networks: vec![net],
        subjects,
        params: json!({ "m": params.m, "tau": params.tau, "zscore": params.zscore }),
    };
    index.save(out)?;
    artifacts.push("index.json".to_string());
    artifacts.sort();
    Ok(artifacts)
}

/// Compute persistence diagrams for every cloud in the directory.
pub fn stage_persist(
    clouds_dir: &Path,
    out: &Path,
    filtration: &FiltrationParams,
) -> Result<Vec<String>> {
    let clouds_index = StageIndex::load(clouds_dir)?;
    let tasks: Vec<(usize, usize)> = clouds_index
        .subjects
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.rois.len()).map(move |ri| (si, ri)))
        .collect();

    let results: Vec<((usize, usize), (Vec<PersistenceDiagram>, f64))> = tasks
        .par_iter()
        .map(|&(si, ri)| {
            let subject = &clouds_index.subjects[si];
            let roi = &subject.rois[ri];
            let cloud = load_cloud(&clouds_dir.join(&subject.dir).join(&roi.file))?;
            let diagrams = compute_persistence(&cloud, filtration)
                .with_context(|| format!("{}/{}", subject.id, roi.roi))?;
            let threshold = diagrams[0].threshold;
            Ok(((si, ri), (diagrams, threshold)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_task: std::collections::HashMap<(usize, usize), (Vec<PersistenceDiagram>, f64)> =
        results.into_iter().collect();

    let mut artifacts = Vec::new();
    let mut subjects = Vec::new();
    for (si, subject) in clouds_index.subjects.iter().enumerate() {
        let sub_dir = out.join(&subject.dir);
        std::fs::create_dir_all(&sub_dir)?;
        let mut rois = Vec::new();
        for (ri, roi) in subject.rois.iter().enumerate() {
            let (diagrams, threshold) = per_task
                .remove(&(si, ri))
                .expect("every task computed");
            let file = roi.file.clone();
            save_diagrams(&diagrams, &sub_dir.join(&file))?;
            artifacts.push(format!("{}/{}", subject.dir, file));
            rois.push(RoiFile {
                roi: roi.roi.clone(),
                file,
                threshold: Some(threshold),
            });
        }
        subjects.push(SubjectFiles {
            id: subject.id.clone(),
            label: subject.label.clone(),
            dir: subject.dir.clone(),
            rois,
        });
    }
    let index = StageIndex {
        networks: clouds_index.networks.clone(),
        subjects,
        params: json!({
            "max_dim": filtration.max_dim,
            "threshold": threshold_json(filtration.threshold),
            "max_simplices": filtration.max_simplices,
        }),
    };
    index.save(out)?;
    artifacts.push("index.json".to_string());
    artifacts.sort();
    Ok(artifacts)
}

/// Load one diagram file and return the dimension-`dim` diagram, padding with
/// an empty diagram when the file has no classes at that dimension.
fn diagram_at(path: &Path, dim: usize, threshold: Option<f64>) -> Result<PersistenceDiagram> {
    let mut diagrams = load_diagrams(path, threshold)?;
    if dim < diagrams.len() {
        Ok(diagrams.swap_remove(dim))
    } else {
        Ok(PersistenceDiagram::empty(dim, threshold.unwrap_or(0.0)))
    }
}

/// Build PR (per subject) or PS (per ROI) matrices for the given dimensions.
pub fn stage_distmat(
    diagrams_dir: &Path,
    out: &Path,
    network: &str,
    dims: &[usize],
    mode: MatrixMode,
    wparams: &WassersteinParams,
) -> Result<Vec<String>> {
    let index = StageIndex::load(diagrams_dir)?;
    let net = index.network(network)?.clone();
    let mut artifacts = Vec::new();

    for &dim in dims {
        let dim_dir = out.join(mode.to_string()).join(&net.name).join(format!("dim{dim}"));
        std::fs::create_dir_all(&dim_dir)?;
        match mode {
            MatrixMode::PairwiseRoi => {
                for subject in &index.subjects {
                    let mut owned: Vec<(String, PersistenceDiagram)> = Vec::new();
                    for roi in &net.roi_labels {
                        let entry = subject.roi(roi).ok_or_else(|| {
                            anyhow!("subject {} lacks diagrams for roi {roi}", subject.id)
                        })?;
                        let dgm = diagram_at(
                            &diagrams_dir.join(&subject.dir).join(&entry.file),
                            dim,
                            entry.threshold,
                        )?;
                        owned.push((roi.clone(), dgm));
                    }
                    let labeled: Vec<(String, &PersistenceDiagram)> =
                        owned.iter().map(|(l, d)| (l.clone(), d)).collect();
                    let matrix = matrix_from_diagrams(
                        &labeled,
                        MatrixMeta {
                            mode,
                            network: net.name.clone(),
                            dimension: dim,
                            q: wparams.q,
                            essential_policy: wparams.essential,
                            id: subject.id.clone(),
                        },
                        wparams,
                    )?;
                    let file = format!("{}.csv", subject.dir);
                    save_matrix(&matrix, &dim_dir.join(&file))?;
                    let rel = pathdiff(out, &dim_dir.join(&file));
                    artifacts.push(rel.clone());
                    artifacts.push(format!("{rel}.meta.json"));
                }
            }
            MatrixMode::PairwiseSubject => {
                let roi_slugs = unique_slugs(&net.roi_labels);
                for (roi, roi_slug) in net.roi_labels.iter().zip(&roi_slugs) {
                    let mut owned: Vec<(String, PersistenceDiagram)> = Vec::new();
                    for subject in &index.subjects {
                        let entry = subject.roi(roi).ok_or_else(|| {
                            anyhow!("subject {} lacks diagrams for roi {roi}", subject.id)
                        })?;
                        let dgm = diagram_at(
                            &diagrams_dir.join(&subject.dir).join(&entry.file),
                            dim,
                            entry.threshold,
                        )?;
                        owned.push((subject.id.clone(), dgm));
                    }
                    let labeled: Vec<(String, &PersistenceDiagram)> =
                        owned.iter().map(|(l, d)| (l.clone(), d)).collect();
                    let matrix = matrix_from_diagrams(
                        &labeled,
                        MatrixMeta {
                            mode,
                            network: net.name.clone(),
                            dimension: dim,
                            q: wparams.q,
                            essential_policy: wparams.essential,
                            id: roi.clone(),
                        },
                        wparams,
                    )?;
                    let file = format!("{roi_slug}.csv");
                    save_matrix(&matrix, &dim_dir.join(&file))?;
                    let rel = pathdiff(out, &dim_dir.join(&file));
                    artifacts.push(rel.clone());
                    artifacts.push(format!("{rel}.meta.json"));
                }
            }
        }
    }
    artifacts.sort();
    Ok(artifacts)
}

fn pathdiff(base: &Path, path: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn pr_matrix_path(
    matrices_dir: &Path,
    network: &str,
    dim: usize,
    subject_dir: &str,
) -> PathBuf {
    matrices_dir
        .join("PR")
        .join(network)
        .join(format!("dim{dim}"))
        .join(format!("{subject_dir}.csv"))
}

fn stage_stats(
    diagrams_dir: &Path,
    matrices_dir: &Path,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<String>> {
    let index = StageIndex::load(diagrams_dir)?;
    let labels = index.class_labels();
    let (group_a, group_b) = match &config.stats_groups {
        Some((a, b)) => (a.clone(), b.clone()),
        None => {
            if labels.len() < 2 {
                bail!("stats needs two class labels, cohort has {:?}", labels);
            }
            (labels[0].clone(), labels[1].clone())
        }
    };
    let net = index.network(&config.network)?.clone();

    let mut artifacts = Vec::new();
    for &dim in &config.distmat_dims {
        let load_group = |label: &str| -> Result<Vec<DistanceMatrix>> {
            let members: Vec<&SubjectFiles> = index
                .subjects
                .iter()
                .filter(|s| s.label == label)
                .collect();
            if members.is_empty() {
                bail!("no subjects with label `{label}`");
            }
            members
                .iter()
                .map(|s| {
                    load_matrix(&pr_matrix_path(matrices_dir, &net.name, dim, &s.dir))
                        .map_err(|e| anyhow!("{e}"))
                })
                .collect()
        };
        let a = load_group(&group_a)?;
        let b = load_group(&group_b)?;
        let map = significance_map_with_options(&a, &b, config.stats_alpha, config.stats_bonferroni)?;
        let comparison = format!(
            "{}_vs_{}",
            unique_slugs(&[group_a.clone()])[0],
            unique_slugs(&[group_b.clone()])[0]
        );
        let file = format!("{comparison}/{}_dim{dim}.csv", net.name);
        save_significance_map(&map, &out.join(&file))?;
        println!(
            "stats dim {dim}: {} / {} pairs significant at alpha {}",
            map.significant_pairs().count(),
            map.entries.len(),
            config.stats_alpha
        );
        artifacts.push(file);
    }
    artifacts.sort();
    Ok(artifacts)
}

/// Labeled PR dataset for one dimension, in diagrams-index subject order.
pub fn load_labeled_matrices(
    diagrams_dir: &Path,
    matrices_dir: &Path,
    network: &str,
    dim: usize,
) -> Result<Vec<(DistanceMatrix, String)>> {
    let index = StageIndex::load(diagrams_dir)?;
    let net = index.network(network)?;
    index
        .subjects
        .iter()
        .map(|s| {
            let m = load_matrix(&pr_matrix_path(matrices_dir, &net.name, dim, &s.dir))
                .map_err(|e| anyhow!("{e}"))?;
            Ok((m, s.label.clone()))
        })
        .collect()
}

fn train_config_with_seed(config: &PipelineConfig) -> TrainConfig {
    TrainConfig {
        seed: config.seed,
        ..config.train.clone()
    }
}

#[derive(Serialize)]
struct TrainReport {
    initial_loss: f64,
    epoch_loss: Vec<f64>,
    train_accuracy: f64,
    test_accuracy: f64,
    train_size: usize,
    test_size: usize,
}

fn stage_train(
    diagrams_dir: &Path,
    matrices_dir: &Path,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<String>> {
    let dataset =
        load_labeled_matrices(diagrams_dir, matrices_dir, &config.network, config.train_dim)?;
    let tc = train_config_with_seed(config);
    let (model, metrics) = train(&dataset, &tc)?;
    save_model(&model, &out.join("model.json"))?;
    let report = TrainReport {
        initial_loss: metrics.initial_loss,
        epoch_loss: metrics.epoch_loss,
        train_accuracy: metrics.train_accuracy,
        test_accuracy: metrics.test_accuracy,
        train_size: metrics.train_size,
        test_size: metrics.test_size,
    };
    std::fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "train: {} train / {} test, train acc {:.3}, test acc {:.3}",
        report.train_size, report.test_size, report.train_accuracy, report.test_accuracy
    );
    Ok(vec!["model.json".to_string(), "metrics.json".to_string()])
}

#[derive(Serialize)]
struct EvalReport {
    accuracy: f64,
    confusion: Vec<Vec<usize>>,
    per_class: Vec<(String, f64, f64)>,
    knn_heldout_accuracy: Option<f64>,
    knn_k: usize,
}

fn stage_eval(
    diagrams_dir: &Path,
    matrices_dir: &Path,
    model_dir: &Path,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<String>> {
    let dataset =
        load_labeled_matrices(diagrams_dir, matrices_dir, &config.network, config.train_dim)?;
    let model = load_model(&model_dir.join("model.json"))?;
    let metrics = evaluate(&model, &dataset)?;

    // kNN baseline on the same held-out split the training stage used.
    let tc = train_config_with_seed(config);
    let heldout = heldout_indices(&dataset, &tc);
    let knn_acc = if heldout.is_empty() || config.knn_k == 0 {
        None
    } else {
        let train_items: Vec<(DistanceMatrix, String)> = dataset
            .iter()
            .enumerate()
            .filter(|(i, _)| !heldout.contains(i))
            .map(|(_, item)| item.clone())
            .collect();
        let correct = heldout
            .iter()
            .filter(|&&i| {
                knn_baseline(&train_items, &dataset[i].0, config.knn_k)
                    .map(|label| label == dataset[i].1)
                    .unwrap_or(false)
            })
            .count();
        Some(correct as f64 / heldout.len() as f64)
    };

    let report = EvalReport {
        accuracy: metrics.accuracy,
        confusion: metrics.confusion,
        per_class: metrics
            .per_class
            .iter()
            .map(|c| (c.label.clone(), c.precision, c.recall))
            .collect(),
        knn_heldout_accuracy: knn_acc,
        knn_k: config.knn_k,
    };
    std::fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "eval: accuracy {:.3} over {} samples{}",
        report.accuracy,
        report.confusion.iter().flatten().sum::<usize>(),
        match report.knn_heldout_accuracy {
            Some(a) => format!(", kNN held-out accuracy {a:.3}"),
            None => String::new(),
        }
    );
    Ok(vec!["metrics.json".to_string()])
}

// ---------------------------------------------------------------------------
// Standalone helpers used by subcommands
// ---------------------------------------------------------------------------

/// Validate an external manifest and print a summary.
pub fn ingest_summary(manifest: &Path) -> Result<CohortDataset> {
    let cohort = load_cohort(manifest)?;
    println!(
        "ok: {} subjects, {} networks, {} timepoints",
        cohort.subjects.len(),
        cohort.networks.len(),
        cohort.subjects.first().map_or(0, |s| s.series_len()),
    );
    for n in &cohort.networks {
        println!("  network {} ({} rois)", n.name, n.size());
    }
    Ok(cohort)
}

/// Standalone stats over two directories of saved PR matrices.
pub fn stats_from_dirs(
    group_a: &Path,
    group_b: &Path,
    alpha: f64,
    bonferroni: bool,
    out: &Path,
) -> Result<PathBuf> {
    let load_dir = |dir: &Path| -> Result<Vec<DistanceMatrix>> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("cannot read {}", dir.display()))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension().is_some_and(|e| e == "csv")
                    && sidecar_path(p).exists()
            })
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no matrix CSVs (with sidecars) in {}", dir.display());
        }
        files
            .iter()
            .map(|p| load_matrix(p).map_err(|e| anyhow!("{e}")))
            .collect()
    };
    let a = load_dir(group_a)?;
    let b = load_dir(group_b)?;
    let map = significance_map_with_options(&a, &b, alpha, bonferroni)?;
    let file = out.join(format!("{}_dim{}.csv", map.network, map.dimension));
    save_significance_map(&map, &file)?;
    println!(
        "{} / {} pairs significant at alpha {alpha}",
        map.significant_pairs().count(),
        map.entries.len()
    );
    Ok(file)
}

/// Standalone train from a matrices directory plus a subject_id,label CSV.
/// `network` and `dim` cross-check the loaded matrices' metadata.
pub fn train_from_dir(
    matrices_dir: &Path,
    labels_csv: &Path,
    network: &str,
    dim: usize,
    config: &TrainConfig,
    out: &Path,
) -> Result<()> {
    let dataset = load_dataset_with_labels(matrices_dir, labels_csv)?;
    for (m, _) in &dataset {
        if m.meta.network != network || m.meta.dimension != dim {
            bail!(
                "matrix {} is {}/dim{}, expected {network}/dim{dim}",
                m.meta.id,
                m.meta.network,
                m.meta.dimension
            );
        }
    }
    let (model, metrics) = train(&dataset, config)?;
    save_model(&model, &out.join("model.json"))?;
    let report = TrainReport {
        initial_loss: metrics.initial_loss,
        epoch_loss: metrics.epoch_loss,
        train_accuracy: metrics.train_accuracy,
        test_accuracy: metrics.test_accuracy,
        train_size: metrics.train_size,
        test_size: metrics.test_size,
    };
    std::fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "train: {} train / {} test, train acc {:.3}, test acc {:.3}",
        report.train_size, report.test_size, report.train_accuracy, report.test_accuracy
    );
    Ok(())
}

pub fn eval_from_dir(
    model_path: &Path,
    matrices_dir: &Path,
    labels_csv: &Path,
) -> Result<()> {
    let dataset = load_dataset_with_labels(matrices_dir, labels_csv)?;
    let model_file = if model_path.is_dir() {
        model_path.join("model.json")
    } else {
        model_path.to_path_buf()
    };
    let model = load_model(&model_file)?;
    let metrics = evaluate(&model, &dataset)?;
    println!("accuracy: {:.4}", metrics.accuracy);
    for c in &metrics.per_class {
        println!(
            "  {}: precision {:.4}, recall {:.4}",
            c.label, c.precision, c.recall
        );
    }
    Ok(())
}

fn load_dataset_with_labels(
    matrices_dir: &Path,
    labels_csv: &Path,
) -> Result<Vec<(DistanceMatrix, String)>> {
    let raw = std::fs::read_to_string(labels_csv)
        .with_context(|| format!("cannot read {}", labels_csv.display()))?;
    let mut labels: Vec<(String, String)> = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue; // header
        }
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| anyhow!("labels line {}: expected id,label", lineno + 1))?;
        labels.push((id.trim().to_string(), label.trim().to_string()));
    }

    let mut files: Vec<PathBuf> = std::fs::read_dir(matrices_dir)
        .with_context(|| format!("cannot read {}", matrices_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv") && sidecar_path(p).exists())
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no matrix CSVs (with sidecars) in {}", matrices_dir.display());
    }
    files
        .iter()
        .map(|p| {
            let m = load_matrix(p).map_err(|e| anyhow!("{e}"))?;
            let label = labels
                .iter()
                .find(|(id, _)| *id == m.meta.id)
                .map(|(_, l)| l.clone())
                .ok_or_else(|| anyhow!("no label for subject {}", m.meta.id))?;
            Ok((m, label))
        })
        .collect()
}

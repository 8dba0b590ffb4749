//! `tstopo` - turn cohorts of 1-D time series into topological fingerprints
//! (sliding-window clouds, Rips persistence diagrams, Wasserstein distance
//! matrices), compare groups with rank-sum significance maps, and classify
//! subjects with a hybrid 1D+2D convolutional model.

mod config;
mod index;
mod provenance;
mod stages;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::PipelineConfig;
use tstopo::distance::EssentialPolicy;
use tstopo::embed::EmbeddingParams;
use tstopo::homology::{FiltrationParams, Threshold};
use tstopo::ingest::{generate_synthetic_cohort, write_cohort, ClassRecipe, SyntheticSpec};
use tstopo::learn::TrainConfig;
use tstopo::matrices::MatrixMode;
use tstopo::WassersteinParams;

#[derive(Parser)]
#[command(name = "tstopo", version, about, long_about = None)]
struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Root seed; every stage's randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline config file (flat key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic cohort of phase-randomized sinusoids.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated class recipes label:period:amplitude:sigma.
        #[arg(long, default_value = "a:20:1.0:0.3,b:35:1.0:0.3")]
        classes: String,
        #[arg(long, default_value_t = 10)]
        subjects_per_class: usize,
        #[arg(long, default_value_t = 140)]
        timepoints: usize,
        #[arg(long, default_value_t = 18)]
        rois: usize,
    },
    /// Validate a cohort manifest and print a summary.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Sliding-window embed every series of one network into point clouds.
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        tau: usize,
        #[arg(long, default_value = "synthetic")]
        network: String,
    },
    /// Compute Rips persistence diagrams for every cloud.
    Persist {
        /// Clouds directory produced by `embed`.
        #[arg(long, value_name = "DIR")]
        clouds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        max_dim: usize,
        /// Filtration cutoff: "auto" (enclosing radius) or a number.
        #[arg(long, default_value = "auto")]
        threshold: String,
        #[arg(long, default_value_t = 50_000_000)]
        max_simplices: usize,
    },
    /// Build pairwise Wasserstein distance matrices from saved diagrams.
    Distmat {
        /// roi (PR: across ROIs per subject) or subject (PS: across subjects
        /// per ROI).
        #[arg(long)]
        mode: String,
        #[arg(long)]
        network: String,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        q: f64,
        /// Essential-class policy: drop or cap.
        #[arg(long, default_value = "drop")]
        essential: String,
        /// Diagrams directory produced by `persist`.
        #[arg(long, value_name = "DIR")]
        r#in: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank-sum significance map between two groups of PR matrices.
    Stats {
        #[arg(long, value_name = "DIR")]
        group_a: PathBuf,
        #[arg(long, value_name = "DIR")]
        group_b: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, default_value_t = false)]
        bonferroni: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the hybrid classifier on PR matrices.
    Train {
        #[arg(long)]
        network: String,
        #[arg(long)]
        dim: usize,
        /// Directory of matrix CSVs for that network/dimension.
        #[arg(long)]
        matrices: PathBuf,
        /// CSV with header and rows subject_id,label.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 0.8)]
        split: f64,
    },
    /// Evaluate a trained model on labeled PR matrices.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        matrices: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Run the full pipeline from a config file.
    Run {
        /// Override the output directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .ok();
    }

    match cli.command {
        Command::Synth {
            out,
            classes,
            subjects_per_class,
            timepoints,
            rois,
        } => {
            let spec = SyntheticSpec {
                classes: classes
                    .split(',')
                    .map(parse_recipe)
                    .collect::<Result<Vec<_>>>()?,
                subjects_per_class,
                timepoints,
                rois,
            };
            let seed = cli.seed.unwrap_or(0);
            let cohort = generate_synthetic_cohort(&spec, seed)?;
            let manifest = write_cohort(&cohort, &out)?;
            println!(
                "wrote {} subjects to {}",
                cohort.subjects.len(),
                manifest.display()
            );
        }
        Command::Ingest { manifest } => {
            stages::ingest_summary(&manifest)?;
        }
        Command::Embed {
            manifest,
            out,
            m,
            tau,
            network,
        } => {
            let params = EmbeddingParams::new(m, tau);
            let artifacts = stages::stage_embed(&manifest, &out, &params, &network)?;
            println!("wrote {} cloud files under {}", artifacts.len() - 1, out.display());
        }
        Command::Persist {
            clouds,
            out,
            max_dim,
            threshold,
            max_simplices,
        } => {
            let params = FiltrationParams {
                max_dim,
                threshold: parse_threshold(&threshold)?,
                max_simplices,
            };
            if max_dim > 2 {
                bail!("--max-dim must be 0, 1, or 2");
            }
            let artifacts = stages::stage_persist(&clouds, &out, &params)?;
            println!(
                "wrote {} diagram files under {}",
                artifacts.len() - 1,
                out.display()
            );
        }
        Command::Distmat {
            mode,
            network,
            dim,
            q,
            essential,
            r#in,
            out,
        } => {
            let mode = match mode.as_str() {
                "roi" => MatrixMode::PairwiseRoi,
                "subject" => MatrixMode::PairwiseSubject,
                other => bail!("--mode must be roi or subject, got {other}"),
            };
            if dim > 2 {
                bail!("--dim must be 0, 1, or 2");
            }
            let wparams = WassersteinParams {
                q,
                essential: parse_essential(&essential)?,
            };
            let artifacts =
                stages::stage_distmat(&r#in, &out, &network, &[dim], mode, &wparams)?;
            println!(
                "wrote {} matrices under {}",
                artifacts.len() / 2,
                out.display()
            );
        }
        Command::Stats {
            group_a,
            group_b,
            alpha,
            bonferroni,
            out,
        } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                bail!("--alpha must be in (0, 1)");
            }
            let file = stages::stats_from_dirs(&group_a, &group_b, alpha, bonferroni, &out)?;
            println!("wrote {}", file.display());
        }
        Command::Train {
            network,
            dim,
            matrices,
            labels,
            out,
            epochs,
            lr,
            batch,
            split,
        } => {
            let config = TrainConfig {
                epochs,
                learning_rate: lr,
                batch_size: batch,
                train_fraction: split,
                seed: cli.seed.unwrap_or(0),
            };
            stages::train_from_dir(&matrices, &labels, &network, dim, &config, &out)?;
        }
        Command::Eval {
            model,
            matrices,
            labels,
        } => {
            stages::eval_from_dir(&model, &matrices, &labels)?;
        }
        Command::Run { out } => {
            let config_path = cli
                .config
                .clone()
                .context("run requires --config <file>")?;
            let mut config = PipelineConfig::from_file(&config_path)?;
            if let Some(out) = out {
                config.out_dir = out;
            }
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            if let Some(jobs) = cli.jobs {
                config.jobs = Some(jobs);
            }
            let manifest = stages::run_pipeline(&config)?;
            println!(
                "pipeline complete: {} stages ({} cached) under {}",
                manifest.stages.len(),
                manifest.stages.iter().filter(|s| s.cached).count(),
                manifest.out_dir
            );
        }
    }
    Ok(())
}

fn parse_recipe(text: &str) -> Result<ClassRecipe> {
    let parts: Vec<&str> = text.trim().split(':').collect();
    if parts.len() != 4 {
        bail!("class recipe must be label:period:amplitude:sigma, got `{text}`");
    }
    Ok(ClassRecipe {
        label: parts[0].to_string(),
        period: parts[1].parse().context("period")?,
        amplitude: parts[2].parse().context("amplitude")?,
        noise_sigma: parts[3].parse().context("sigma")?,
    })
}

fn parse_threshold(text: &str) -> Result<Threshold> {
    if text == "auto" {
        Ok(Threshold::EnclosingRadius)
    } else {
        Ok(Threshold::Fixed(text.parse().context("threshold")?))
    }
}

fn parse_essential(text: &str) -> Result<EssentialPolicy> {
    match text {
        "drop" => Ok(EssentialPolicy::Drop),
        "cap" | "cap_at_threshold" => Ok(EssentialPolicy::CapAtThreshold),
        other => bail!("--essential must be drop or cap, got {other}"),
    }
}

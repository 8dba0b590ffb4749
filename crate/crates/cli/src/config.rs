//! Pipeline configuration: a flat key = value text file, overridable by CLI
//! flags. Every parameter is validated up front so a bad combination fails
//! before any compute starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use tstopo::distance::EssentialPolicy;
use tstopo::embed::EmbeddingParams;
use tstopo::homology::{FiltrationParams, Threshold};
use tstopo::ingest::{ClassRecipe, SyntheticSpec};
use tstopo::learn::TrainConfig;
use tstopo::matrices::MatrixMode;
use tstopo::WassersteinParams;

pub const ALL_STAGES: [&str; 7] = [
    "cohort", "embed", "persist", "distmat", "stats", "train", "eval",
];

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out_dir: PathBuf,
    pub stages: Vec<String>,
    /// Synthetic cohort recipe; mutually exclusive with `ingest_manifest`.
    pub synth: Option<SyntheticSpec>,
    pub ingest_manifest: Option<PathBuf>,
    pub network: String,
    pub embed: EmbeddingParams,
    pub filtration: FiltrationParams,
    pub wasserstein: WassersteinParams,
    pub distmat_mode: MatrixMode,
    /// Homology dimensions for which distance matrices are built.
    pub distmat_dims: Vec<usize>,
    pub stats_alpha: f64,
    pub stats_bonferroni: bool,
    /// Class labels compared by the stats stage; defaults to the first two
    /// labels of the cohort.
    pub stats_groups: Option<(String, String)>,
    pub train: TrainConfig,
    pub train_dim: usize,
    pub knn_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: None,
            out_dir: PathBuf::from("runs/out"),
            stages: ALL_STAGES.iter().map(|s| s.to_string()).collect(),
            synth: None,
            ingest_manifest: None,
            network: "synthetic".to_string(),
            embed: EmbeddingParams::default(),
            filtration: FiltrationParams::default(),
            wasserstein: WassersteinParams::default(),
            distmat_mode: MatrixMode::PairwiseRoi,
            distmat_dims: vec![0],
            stats_alpha: 0.01,
            stats_bonferroni: false,
            stats_groups: None,
            train: TrainConfig::default(),
            train_dim: 0,
            knn_k: 3,
        }
    }
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", lineno + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let kv = parse_kv(&text)?;
        let mut config = PipelineConfig::default();
        config.apply(&kv)?;
        // Paths in the config are relative to the config file.
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if config.out_dir.is_relative() {
            config.out_dir = base.join(&config.out_dir);
        }
        if let Some(m) = &config.ingest_manifest {
            if m.is_relative() {
                config.ingest_manifest = Some(base.join(m));
            }
        }
        Ok(config)
    }

    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in kv {
            self.apply_one(key, value)
                .with_context(|| format!("config key `{key}`"))?;
        }
        Ok(())
    }

    fn apply_one(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = value.parse()?,
            "jobs" => self.jobs = Some(value.parse()?),
            "out" => self.out_dir = PathBuf::from(value),
            "stages" => {
                self.stages = if value == "all" {
                    ALL_STAGES.iter().map(|s| s.to_string()).collect()
                } else {
                    value.split(',').map(|s| s.trim().to_string()).collect()
                }
            }
            "network" => self.network = value.to_string(),
            "synth.classes" => {
                let classes = value
                    .split(',')
                    .map(parse_class_recipe)
                    .collect::<Result<Vec<_>>>()?;
                self.synth_mut().classes = classes;
            }
            "synth.subjects_per_class" => self.synth_mut().subjects_per_class = value.parse()?,
            "synth.timepoints" => self.synth_mut().timepoints = value.parse()?,
            "synth.rois" => self.synth_mut().rois = value.parse()?,
            "ingest.manifest" => self.ingest_manifest = Some(PathBuf::from(value)),
            "embed.m" => self.embed.m = value.parse()?,
            "embed.tau" => self.embed.tau = value.parse()?,
            "embed.zscore" => self.embed.zscore = value.parse()?,
            "persist.max_dim" => self.filtration.max_dim = value.parse()?,
            "persist.threshold" => {
                self.filtration.threshold = if value == "auto" {
                    Threshold::EnclosingRadius
                } else {
                    Threshold::Fixed(value.parse()?)
                }
            }
            "persist.max_simplices" => self.filtration.max_simplices = value.parse()?,
            "dist.q" => {
                self.wasserstein.q = if value == "inf" {
                    f64::INFINITY
                } else {
                    value.parse()?
                }
            }
            "dist.essential" => {
                self.wasserstein.essential = match value {
                    "drop" => EssentialPolicy::Drop,
                    "cap" | "cap_at_threshold" => EssentialPolicy::CapAtThreshold,
                    other => bail!("unknown essential policy `{other}` (drop|cap)"),
                }
            }
            "distmat.mode" => {
                self.distmat_mode = match value {
                    "roi" => MatrixMode::PairwiseRoi,
                    "subject" => MatrixMode::PairwiseSubject,
                    other => bail!("unknown distmat mode `{other}` (roi|subject)"),
                }
            }
            "distmat.dims" => {
                self.distmat_dims = value
                    .split(',')
                    .map(|d| d.trim().parse::<usize>().map_err(anyhow::Error::from))
                    .collect::<Result<Vec<_>>>()?;
            }
            "stats.alpha" => self.stats_alpha = value.parse()?,
            "stats.bonferroni" => self.stats_bonferroni = value.parse()?,
            "stats.group_a" => {
                let b = self.stats_groups.take().map(|(_, b)| b).unwrap_or_default();
                self.stats_groups = Some((value.to_string(), b));
            }
            "stats.group_b" => {
                let a = self.stats_groups.take().map(|(a, _)| a).unwrap_or_default();
                self.stats_groups = Some((a, value.to_string()));
            }
            "train.dim" => self.train_dim = value.parse()?,
            "train.epochs" => self.train.epochs = value.parse()?,
            "train.lr" => self.train.learning_rate = value.parse()?,
            "train.batch" => self.train.batch_size = value.parse()?,
            "train.split" => self.train.train_fraction = value.parse()?,
            "eval.knn_k" => self.knn_k = value.parse()?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    fn synth_mut(&mut self) -> &mut SyntheticSpec {
        self.synth.get_or_insert_with(|| SyntheticSpec {
            classes: Vec::new(),
            subjects_per_class: 10,
            timepoints: 140,
            rois: 18,
        })
    }

    /// Fail fast on any invalid parameter combination before compute starts.
    pub fn validate(&self) -> Result<()> {
        for stage in &self.stages {
            if !ALL_STAGES.contains(&stage.as_str()) {
                bail!(
                    "unknown stage `{stage}` (expected one of {})",
                    ALL_STAGES.join(", ")
                );
            }
        }
        if self.filtration.max_dim > 2 {
            bail!(
                "persist.max_dim {} unsupported; homology dimensions are 0..=2",
                self.filtration.max_dim
            );
        }
        for &d in &self.distmat_dims {
            if d > self.filtration.max_dim {
                bail!(
                    "distmat dim {d} exceeds persist.max_dim {}",
                    self.filtration.max_dim
                );
            }
        }
        if self.train_dim > self.filtration.max_dim {
            bail!(
                "train.dim {} exceeds persist.max_dim {}",
                self.train_dim,
                self.filtration.max_dim
            );
        }
        if !(self.wasserstein.q >= 1.0) {
            bail!("dist.q must be >= 1, got {}", self.wasserstein.q);
        }
        if !(self.stats_alpha > 0.0 && self.stats_alpha < 1.0) {
            bail!("stats.alpha must be in (0,1), got {}", self.stats_alpha);
        }
        if self.embed.tau == 0 {
            bail!("embed.tau must be >= 1");
        }
        if self.train.epochs == 0 {
            bail!("train.epochs must be >= 1");
        }
        if !(self.train.train_fraction > 0.0 && self.train.train_fraction <= 1.0) {
            bail!("train.split must be in (0,1]");
        }
        if self.stages.contains(&"cohort".to_string())
            && self.synth.is_none()
            && self.ingest_manifest.is_none()
        {
            bail!("cohort stage needs synth.* keys or ingest.manifest");
        }
        if let Some(spec) = &self.synth {
            spec.validate().map_err(|e| anyhow!("{e}"))?;
        }
        Ok(())
    }
}

fn parse_class_recipe(text: &str) -> Result<ClassRecipe> {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "
            seed = 42            # root seed
            out = runs/demo
            stages = cohort,embed,persist
            synth.classes = a:20:1.0:0.3, b:35:1.0:0.3
            synth.subjects_per_class = 25
            synth.timepoints = 140
            synth.rois = 18
            embed.m = 2
            embed.tau = 1
            persist.max_dim = 1
            persist.threshold = auto
            dist.q = 2
            dist.essential = drop
            distmat.dims = 0,1
            stats.alpha = 0.01
            train.dim = 0
            train.epochs = 30
        ";
        let kv = parse_kv(text).unwrap();
        let mut config = PipelineConfig::default();
        config.apply(&kv).unwrap();
        config.validate().unwrap();
        assert_eq!(config.seed, 42);
        let synth = config.synth.as_ref().unwrap();
        assert_eq!(synth.classes.len(), 2);
        assert_eq!(synth.classes[1].period, 35);
        assert_eq!(config.distmat_dims, vec![0, 1]);
        assert_eq!(config.train.epochs, 30);
    }

    #[test]
    fn rejects_dim_three_before_compute() {
        let mut config = PipelineConfig::default();
        let kv = parse_kv("persist.max_dim = 3").unwrap();
        config.apply(&kv).unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("0..=2"), "{err}");
    }

    #[test]
    fn rejects_unknown_key_and_stage() {
        let mut config = PipelineConfig::default();
        let kv = parse_kv("no.such.key = 1").unwrap();
        assert!(config.apply(&kv).is_err());
        let mut config = PipelineConfig::default();
        config.stages = vec!["embed".into(), "teleport".into()];
        assert!(config.validate().is_err());
    }

    #[test]
    fn distmat_dims_must_fit_max_dim() {
        let mut config = PipelineConfig::default();
        config.filtration.max_dim = 0;
        config.distmat_dims = vec![0, 1];
        assert!(config.validate().is_err());
    }
}

//! Index files that make the clouds/ and diagrams/ directories
//! self-describing: subject labels, ROI-label-to-file mapping, and (for
//! diagrams) the per-cloud filtration threshold needed to restore diagrams
//! losslessly.

use std::collections::HashSet;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tstopo::ingest::{sanitize_for_path, NetworkDescriptor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoiFile {
    pub roi: String,
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectFiles {
    pub id: String,
    pub label: String,
    pub dir: String,
    pub rois: Vec<RoiFile>,
}

impl SubjectFiles {
    pub fn roi(&self, label: &str) -> Option<&RoiFile> {
        self.rois.iter().find(|r| r.roi == label)
    }
}

/// Index of a clouds/ or diagrams/ directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageIndex {
    pub networks: Vec<NetworkDescriptor>,
    pub subjects: Vec<SubjectFiles>,
    /// Stage parameters echoed for humans and downstream validation.
    pub params: serde_json::Value,
}

impl StageIndex {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("index.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let raw = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&raw).with_context(|| format!("malformed {}", path.display()))
    }

    pub fn network(&self, name: &str) -> Result<&NetworkDescriptor> {
        self.networks
            .iter()
            .find(|n| n.name == name)
            .with_context(|| {
                format!(
                    "network `{name}` not in index (have: {})",
                    self.networks
                        .iter()
                        .map(|n| n.name.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                )
            })
    }

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

/// Unique filesystem slugs for a list of names, in order; collisions get a
/// numeric suffix.
pub fn unique_slugs(names: &[String]) -> Vec<String> {
    let mut used = HashSet::new();
    names
        .iter()
        .map(|name| {
            let base = sanitize_for_path(name);
            let mut slug = base.clone();
            let mut k = 2;
            while !used.insert(slug.clone()) {
                slug = format!("{base}__{k}");
                k += 1;
            }
            slug
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_unique_and_stable() {
        let names = vec![
            "Post cingulate 108".to_string(),
            "Post-cingulate 108".to_string(),
            "Post cingulate_108".to_string(),
        ];
        let slugs = unique_slugs(&names);
        assert_eq!(slugs[0], "Post_cingulate_108");
        assert_eq!(slugs[1], "Post-cingulate_108");
        assert_eq!(slugs[2], "Post_cingulate_108__2");
    }
}

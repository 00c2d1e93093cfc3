use std::path::Path;

use plantsplat::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ARTIFACTS_FILE: &str = "artifacts.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub command: String,
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub files: Vec<Artifact>,
}

impl ArtifactManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(ARTIFACTS_FILE);
        let mut json = serde_json::to_string_pretty(self).expect("artifact list serializes");
        json.push('\n');
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(ARTIFACTS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))
    }
}

/// Every file under `dir` except a previous artifact list, sorted by path.
pub fn collect_artifacts(dir: &Path) -> Result<Vec<Artifact>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<Artifact>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            let meta = entry.metadata().map_err(|e| Error::io(&path, e))?;
            if meta.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walked below the root");
                let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                out.push(Artifact {
                    path: rel.join("/"),
                    bytes: meta.len(),
                });
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.retain(|a| a.path != ARTIFACTS_FILE);
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

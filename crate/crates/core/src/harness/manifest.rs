use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::privacy::BudgetLedger;

/// A produced or consumed file, relative to the run's output directory.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub derived: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
    pub ledger: Option<BudgetLedger>,
}

impl RunManifest {
    pub fn path(out: &Path, command: &str) -> std::path::PathBuf {
        out.join(format!("{command}.manifest.json"))
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        io::write_json(&Self::path(out, &self.command), self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<Artifact>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).unwrap_or(&p);
            out.push(Artifact {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: io::sha256_file(&p)?,
            });
        }
    }
    Ok(())
}

/// Hashes `target` (a file or every file below a directory), naming each
/// file relative to `root`.
pub fn artifacts(root: &Path, target: &Path) -> Result<Vec<Artifact>> {
    let mut out = Vec::new();
    if target.is_dir() {
        collect(root, target, &mut out)?;
    } else if target.exists() {
        let rel = target.strip_prefix(root).unwrap_or(target);
        out.push(Artifact {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: io::sha256_file(target)?,
        });
    }
    Ok(out)
}

//! Report files: every JSON report carries a header, every CSV starts with a
//! `#` provenance line, and each output directory gets a hashed manifest.
//! Nothing time-dependent is written, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use valleyscope::{RbmParams, Result};

use crate::config::ExperimentConfig;

pub const TOOL: &str = "valleyscope";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub model_fingerprint: Option<String>,
}

impl ReportHeader {
    pub fn new(command: &str, cfg: &ExperimentConfig, model: Option<&RbmParams>) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config_fingerprint: cfg.fingerprint(),
            model_fingerprint: model.map(RbmParams::fingerprint),
        }
    }

    pub fn csv_line(&self) -> String {
        let mut line = format!(
            "# {} {} {} config={}",
            self.tool, self.version, self.command, self.config_fingerprint
        );
        if let Some(m) = &self.model_fingerprint {
            line.push_str(&format!(" model={m}"));
        }
        line
    }
}

/// Creates the parent directories of `path`.
fn prepare(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    prepare(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `rows` under a provenance line and `header`.
pub fn write_csv(
    path: &Path,
    provenance: &ReportHeader,
    header: &str,
    rows: &[String],
) -> Result<()> {
    prepare(path)?;
    let mut text = provenance.csv_line();
    text.push('\n');
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// CSV text without the `#` lines.
pub fn strip_comments(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_fingerprint: String,
    /// Sorted by path, `/`-separated and relative to the output directory.
    pub files: Vec<ManifestEntry>,
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else if path != root.join(MANIFEST) {
            out.push(path);
        }
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Rewrites `<out_dir>/manifest.json` over every other file in the tree.
pub fn write_manifest(out_dir: &Path, cfg: &ExperimentConfig) -> Result<Manifest> {
    fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    collect(out_dir, out_dir, &mut paths)?;
    let mut files = paths
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(out_dir).unwrap_or(p);
            let rel: Vec<String> = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            Ok(ManifestEntry {
                path: rel.join("/"),
                bytes: fs::metadata(p)?.len(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        config_fingerprint: cfg.fingerprint(),
        files,
    };
    write_json(&out_dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Shortest round-trip decimal form; `NaN` and infinities spelled out.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

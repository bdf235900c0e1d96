//! Stage artifacts: line-delimited records, per-stage manifests and the
//! checks that let a later stage resume from earlier output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Stage {
    Ingest,
    Preprocess,
    Rate,
    Embed,
    Fuse,
    Panel,
    Analyze,
    Validate,
    Plot,
}

impl Stage {
    /// Order used by `run-all`.
    pub const PIPELINE: [Stage; 9] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::Rate,
        Stage::Embed,
        Stage::Fuse,
        Stage::Panel,
        Stage::Analyze,
        Stage::Validate,
        Stage::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Rate => "rate",
            Stage::Embed => "embed",
            Stage::Fuse => "fuse",
            Stage::Panel => "panel",
            Stage::Analyze => "analyze",
            Stage::Validate => "validate",
            Stage::Plot => "plot",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Preprocess => &[Stage::Ingest],
            Stage::Rate => &[Stage::Preprocess],
            Stage::Embed => &[Stage::Rate],
            Stage::Fuse => &[Stage::Rate, Stage::Embed],
            Stage::Panel => &[Stage::Fuse],
            Stage::Analyze => &[Stage::Panel],
            Stage::Validate => &[Stage::Fuse],
            Stage::Plot => &[Stage::Panel],
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h).with_context(|| format!("reading {}", path.display()))?;
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<usize> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(n)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}: malformed record", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config_hash: String,
    /// Input file name (or artifact path relative to the output directory) to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory to content hash.
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
}

/// Output directory of one run.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: PathBuf) -> Self {
        Workspace { root }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    pub fn path(&self, stage: Stage, file: &str) -> PathBuf {
        self.stage_dir(stage).join(file)
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.path(stage, "manifest.json")
    }

    /// Creates a fresh stage directory, removing an old manifest first so an
    /// interrupted rerun never looks complete.
    pub fn begin(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let m = self.manifest_path(stage);
        if m.exists() {
            std::fs::remove_file(&m).with_context(|| format!("removing {}", m.display()))?;
        }
        Ok(dir)
    }

    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    pub fn finish(
        &self,
        stage: Stage,
        config_hash: String,
        inputs: BTreeMap<String, String>,
        outputs: &[PathBuf],
        counts: BTreeMap<String, usize>,
    ) -> Result<Manifest> {
        let outputs = outputs.iter().map(|p| Ok((self.relative(p), sha256_file(p)?))).collect::<Result<BTreeMap<_, _>>>()?;
        let m = Manifest {
            stage: stage.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            inputs,
            outputs,
            counts,
        };
        write_json(&self.manifest_path(stage), &m)?;
        Ok(m)
    }

    pub fn manifest(&self, stage: Stage) -> Result<Option<Manifest>> {
        let p = self.manifest_path(stage);
        if !p.exists() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }

    /// Verifies that `upstream` finished, ran under the expected settings and
    /// that its outputs are unchanged. Returns the hashes of those outputs,
    /// which become the inputs of the consuming stage.
    pub fn require(&self, upstream: Stage, expected_hash: &str, force: bool) -> Result<BTreeMap<String, String>> {
        let Some(m) = self.manifest(upstream)? else {
            bail!("no `{}` output in {}: run `{}` first", upstream.name(), self.root.display(), upstream.name());
        };
        if m.config_hash != expected_hash && !force {
            bail!("configuration changed since `{}` ran; rerun `{}` or pass --force", upstream.name(), upstream.name());
        }
        for (rel, hash) in &m.outputs {
            let p = self.root.join(rel);
            if !p.exists() {
                bail!("`{}` output {rel} is missing: run `{}` first", upstream.name(), upstream.name());
            }
            if !force && &sha256_file(&p)? != hash {
                bail!(
                    "`{}` output {rel} changed after the stage ran; rerun `{}` or pass --force",
                    upstream.name(),
                    upstream.name()
                );
            }
        }
        Ok(m.outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let rows = vec![(1, "a".to_string()), (2, "b".to_string())];
        assert_eq!(write_jsonl(&p, &rows).unwrap(), 2);
        let back: Vec<(i32, String)> = read_jsonl(&p).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn missing_upstream_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path().to_path_buf());
        let err = ws.require(Stage::Panel, "h", false).unwrap_err().to_string();
        assert!(err.contains("run `panel` first"), "{err}");
    }

    #[test]
    fn changed_config_or_output_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path().to_path_buf());
        let d = ws.begin(Stage::Fuse).unwrap();
        let out = d.join("scores.jsonl");
        std::fs::write(&out, "{}\n").unwrap();
        ws.finish(Stage::Fuse, "h1".into(), BTreeMap::new(), &[out.clone()], BTreeMap::new()).unwrap();
        assert!(ws.require(Stage::Fuse, "h1", false).is_ok());
        assert!(ws.require(Stage::Fuse, "h2", false).unwrap_err().to_string().contains("--force"));
        assert!(ws.require(Stage::Fuse, "h2", true).is_ok());
        std::fs::write(&out, "{\"x\":1}\n").unwrap();
        assert!(ws.require(Stage::Fuse, "h1", false).is_err());
    }
}

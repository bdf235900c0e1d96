//! Run configuration: one TOML file naming inputs, thresholds, endpoints and
//! seeds. Relative paths resolve against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use emi_core::corpus::{DedupScope, FieldMapping};
use emi_core::econ::{RegressionSpec, ResampleMode};
use emi_core::embedder::AnchorEmbedMode;
use emi_core::fusion::ZScope;
use emi_core::panel::IndicatorMapping;
use emi_core::preprocess::{ChunkParams, LexicalThresholds};
use emi_remote::EndpointConfig;
use serde::{Deserialize, Serialize};

use crate::artifact::{sha256_file, sha256_hex};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output: PathBuf,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    pub inputs: Inputs,
    pub seeds: Seeds,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub rate: RateSection,
    #[serde(default)]
    pub embed: EmbedSection,
    #[serde(default)]
    pub fuse: FuseSection,
    #[serde(default)]
    pub panel: PanelSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    pub endpoints: Endpoints,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub corpus: Vec<PathBuf>,
    pub corpus_mapping: PathBuf,
    /// Directory of `<language>.txt` common-word lists.
    pub common_words: PathBuf,
    /// Directory of `<language>.csv` anchor files.
    pub anchors: PathBuf,
    pub indicators: PathBuf,
    pub gdp: PathBuf,
    #[serde(default)]
    pub indicator_mapping: Option<PathBuf>,
    pub models: PathBuf,
    #[serde(default)]
    pub annotations: Option<PathBuf>,
}

/// Seeds have no defaults; a run must name them.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub panel: u64,
    pub bootstrap: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub dedup_scope: DedupScope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub ratio_threshold: f64,
    pub min_tokens: usize,
    pub chunk_target: usize,
    pub chunk_min: usize,
    /// Per-country replacement for `ratio_threshold`.
    pub ratio_overrides: BTreeMap<String, f64>,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let t = LexicalThresholds::default();
        let c = ChunkParams::default();
        PreprocessSection {
            ratio_threshold: t.ratio_threshold,
            min_tokens: t.min_tokens,
            chunk_target: c.target,
            chunk_min: c.min_chunk,
            ratio_overrides: BTreeMap::new(),
        }
    }
}

impl PreprocessSection {
    pub fn thresholds(&self, country: &str) -> LexicalThresholds {
        LexicalThresholds {
            ratio_threshold: self.ratio_overrides.get(country).copied().unwrap_or(self.ratio_threshold),
            min_tokens: self.min_tokens,
        }
    }

    pub fn chunk_params(&self) -> ChunkParams {
        ChunkParams { target: self.chunk_target, min_chunk: self.chunk_min }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProceduralLevel {
    #[default]
    Speech,
    Segment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    pub procedural_threshold: u8,
    pub procedural_level: ProceduralLevel,
}

impl Default for RateSection {
    fn default() -> Self {
        RateSection { procedural_threshold: 2, procedural_level: ProceduralLevel::Speech }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedSection {
    pub anchor_embed_mode: AnchorEmbedMode,
    pub normalize_before_mean: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuseSection {
    pub z_scope: ZScope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PanelSection {
    pub bootstrap_iters: usize,
    pub level: f64,
}

impl Default for PanelSection {
    fn default() -> Self {
        PanelSection { bootstrap_iters: 10_000, level: 0.95 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    pub level: f64,
    pub bootstrap_iters: usize,
    pub bootstrap_mode: ResampleMode,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection { level: 0.95, bootstrap_iters: 10_000, bootstrap_mode: ResampleMode::Rows }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub procedural: Vec<EndpointConfig>,
    pub epistemic: Vec<EndpointConfig>,
    pub embedding: EndpointConfig,
}

impl Endpoints {
    pub fn all_mut(&mut self) -> impl Iterator<Item = &mut EndpointConfig> {
        self.procedural.iter_mut().chain(self.epistemic.iter_mut()).chain(std::iter::once(&mut self.embedding))
    }
}

/// The model file read by `analyze`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(rename = "model")]
    pub models: Vec<RegressionSpec>,
    #[serde(default, rename = "comparison")]
    pub comparisons: Vec<Comparison>,
    #[serde(default, rename = "bootstrap")]
    pub bootstraps: Vec<BootstrapTarget>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub restricted: String,
    pub full: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapTarget {
    pub model: String,
    pub predictor: String,
    #[serde(default)]
    pub iters: Option<usize>,
    #[serde(default)]
    pub mode: Option<ResampleMode>,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: ModelFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        file.validate().with_context(|| format!("in {}", path.display()))?;
        Ok(file)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.models {
            m.validate()?;
            if !seen.insert(m.id.as_str()) {
                bail!("model id '{}' appears twice", m.id);
            }
        }
        for c in &self.comparisons {
            for id in [&c.restricted, &c.full] {
                if !seen.contains(id.as_str()) {
                    bail!("comparison names unknown model '{id}'");
                }
            }
        }
        for b in &self.bootstraps {
            let m = self.model(&b.model).with_context(|| format!("bootstrap names unknown model '{}'", b.model))?;
            if !m.predictors.contains(&b.predictor) {
                bail!("bootstrap: model '{}' has no predictor '{}'", b.model, b.predictor);
            }
        }
        Ok(())
    }

    pub fn model(&self, id: &str) -> Option<&RegressionSpec> {
        self.models.iter().find(|m| m.id == id)
    }
}

impl RunConfig {
    /// Loads the config after applying `key.path=value` overrides. Values are
    /// parsed as TOML and fall back to plain strings.
    pub fn load_with(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut doc: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = RunConfig::deserialize(doc).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths();
        Ok(cfg)
    }

    fn resolve_paths(&mut self) {
        let base = self.base_dir.clone();
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        if let Some(c) = self.cache.as_mut() {
            fix(c);
        }
        let i = &mut self.inputs;
        i.corpus.iter_mut().for_each(fix);
        for p in [&mut i.corpus_mapping, &mut i.common_words, &mut i.anchors, &mut i.indicators, &mut i.gdp, &mut i.models] {
            fix(p);
        }
        for p in [i.indicator_mapping.as_mut(), i.annotations.as_mut()].into_iter().flatten() {
            fix(p);
        }
    }

    /// Checks that every referenced input exists and every section is sane.
    pub fn validate(&self) -> Result<()> {
        let i = &self.inputs;
        if i.corpus.is_empty() {
            bail!("inputs.corpus lists no files");
        }
        let mut files: Vec<(&str, &Path)> = i.corpus.iter().map(|p| ("inputs.corpus", p.as_path())).collect();
        files.extend([
            ("inputs.corpus_mapping", i.corpus_mapping.as_path()),
            ("inputs.indicators", i.indicators.as_path()),
            ("inputs.gdp", i.gdp.as_path()),
            ("inputs.models", i.models.as_path()),
        ]);
        files.extend(i.indicator_mapping.as_deref().map(|p| ("inputs.indicator_mapping", p)));
        files.extend(i.annotations.as_deref().map(|p| ("inputs.annotations", p)));
        for (key, p) in files {
            if !p.is_file() {
                bail!("{key}: file {} does not exist", p.display());
            }
        }
        for (key, p) in [("inputs.common_words", &i.common_words), ("inputs.anchors", &i.anchors)] {
            if !p.is_dir() {
                bail!("{key}: directory {} does not exist", p.display());
            }
        }
        let p = &self.preprocess;
        if p.chunk_target == 0 || p.chunk_min > p.chunk_target {
            bail!("preprocess: need 0 < chunk_min <= chunk_target");
        }
        for (c, r) in
            std::iter::once(("default", &p.ratio_threshold)).chain(p.ratio_overrides.iter().map(|(k, v)| (k.as_str(), v)))
        {
            if !(0.0..=1.0).contains(r) {
                bail!("preprocess: ratio threshold for {c} must lie in [0, 1]");
            }
        }
        if self.rate.procedural_threshold > 4 {
            bail!("rate.procedural_threshold must lie in 0..=4");
        }
        for (name, level) in [("panel.level", self.panel.level), ("analyze.level", self.analyze.level)] {
            if !(level > 0.0 && level < 1.0) {
                bail!("{name} must lie strictly between 0 and 1");
            }
        }
        if self.panel.bootstrap_iters == 0 || self.analyze.bootstrap_iters == 0 {
            bail!("bootstrap iteration counts must be positive");
        }
        if self.endpoints.procedural.is_empty() || self.endpoints.epistemic.is_empty() {
            bail!("endpoints.procedural and endpoints.epistemic each need at least one endpoint");
        }
        let eps =
            self.endpoints.procedural.iter().chain(&self.endpoints.epistemic).chain(std::iter::once(&self.endpoints.embedding));
        for ep in eps {
            ep.validate().with_context(|| format!("endpoint '{}'", ep.model_name))?;
        }
        Ok(())
    }

    pub fn cache_dir(&self, out: &Path) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| out.join("cache"))
    }

    pub fn corpus_mapping(&self) -> Result<FieldMapping> {
        load_toml(&self.inputs.corpus_mapping)
    }

    pub fn indicator_mapping(&self) -> Result<IndicatorMapping> {
        match &self.inputs.indicator_mapping {
            Some(p) => load_toml(p),
            None => Ok(IndicatorMapping::default()),
        }
    }

    pub fn common_words_path(&self, language: &str) -> PathBuf {
        self.inputs.common_words.join(format!("{language}.txt"))
    }

    pub fn anchors_path(&self, language: &str) -> PathBuf {
        self.inputs.anchors.join(format!("{language}.csv"))
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override `{spec}` is not of the form key=value");
    };
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is malformed");
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().with_context(|| format!("override `{key}`: `{part}` is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Endpoint fields that can change a response. Addresses, timeouts and
/// parallelism are left out so the same run against another host hashes
/// the same.
fn endpoint_identity(ep: &EndpointConfig) -> serde_json::Value {
    serde_json::json!({ "model": ep.model_name, "temperature": ep.temperature, "max_tokens": ep.max_tokens })
}

/// Hash of every directory entry's content, keyed by file name.
fn dir_digest(dir: &Path, ext: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            out.insert(name, sha256_file(&path)?);
        }
    }
    Ok(out)
}

/// Settings each stage depends on directly, as canonical JSON.
pub fn stage_settings(cfg: &RunConfig, stage: crate::artifact::Stage, limit: Option<usize>) -> Result<serde_json::Value> {
    use crate::artifact::Stage::*;
    use serde_json::json;
    Ok(match stage {
        Ingest => json!({
            "dedup_scope": cfg.ingest.dedup_scope,
            "mapping": sha256_file(&cfg.inputs.corpus_mapping)?,
        }),
        Preprocess => json!({
            "settings": cfg.preprocess,
            "common_words": dir_digest(&cfg.inputs.common_words, "txt")?,
            "limit": limit,
        }),
        Rate => json!({
            "settings": cfg.rate,
            "procedural": cfg.endpoints.procedural.iter().map(endpoint_identity).collect::<Vec<_>>(),
            "epistemic": cfg.endpoints.epistemic.iter().map(endpoint_identity).collect::<Vec<_>>(),
        }),
        Embed => json!({
            "settings": cfg.embed,
            "endpoint": endpoint_identity(&cfg.endpoints.embedding),
            "anchors": dir_digest(&cfg.inputs.anchors, "csv")?,
        }),
        Fuse => json!({ "settings": cfg.fuse }),
        Panel => json!({
            "settings": cfg.panel,
            "seed": cfg.seeds.panel,
            "mapping": cfg.inputs.indicator_mapping.as_deref().map(sha256_file).transpose()?,
        }),
        Analyze => json!({
            "settings": cfg.analyze,
            "seed": cfg.seeds.bootstrap,
            "models": sha256_file(&cfg.inputs.models)?,
        }),
        Validate | Plot => json!({}),
    })
}

/// Chained hash: a stage's hash covers its own settings and the hashes of
/// every stage it reads from.
pub fn stage_hash(cfg: &RunConfig, stage: crate::artifact::Stage, limit: Option<usize>) -> Result<String> {
    let upstream = stage.upstream().iter().map(|u| stage_hash(cfg, *u, limit)).collect::<Result<Vec<_>>>()?;
    let doc = serde_json::json!({ "stage": stage.name(), "settings": stage_settings(cfg, stage, limit)?, "upstream": upstream });
    Ok(sha256_hex(doc.to_string().as_bytes()))
}

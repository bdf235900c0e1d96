//! One function per pipeline stage. Each reads its upstream artifacts from the
//! run's output directory, writes its own, and records a manifest.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use emi_core::corpus::{self, SpeechRecord};
use emi_core::econ::{load_annotations, validate_emi, ValidationReport};
use emi_core::embedder::{load_anchors, score_segment_embedding, AnchorVectors, SegmentEmbeddingScore};
use emi_core::fusion::{fuse, ComponentScore, SegmentScore};
use emi_core::panel::{self, AggregateOptions, PanelRow};
use emi_core::preprocess::{apply_lexical_filters, chunk, CommonWordList, DropReason, Segment};
use emi_core::rater::{ensemble_all, filter_procedural, EnsembleEpistemicScore, Task};
use emi_remote::{build_anchor_vectors, embed_texts, rate_segments, Client, DiskCache, RateJob, RateOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{read_jsonl, sha256_file, write_json, write_jsonl, Manifest, Stage, Workspace};
use crate::config::{stage_hash, ModelFile, ProceduralLevel, RunConfig};
use crate::{plot, report};

pub struct Ctx {
    pub cfg: RunConfig,
    pub ws: Workspace,
    pub jobs: usize,
    pub limit: Option<usize>,
    pub force: bool,
    pub client: Client,
    pub annotations: Option<PathBuf>,
}

impl Ctx {
    pub fn hash(&self, stage: Stage) -> Result<String> {
        stage_hash(&self.cfg, stage, self.limit)
    }

    /// Checks every upstream stage and collects the hashes of what it produced.
    fn require_upstream(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        for &u in stage.upstream() {
            inputs.extend(self.ws.require(u, &self.hash(u)?, self.force)?);
        }
        Ok(inputs)
    }

    fn cache(&self) -> Result<DiskCache> {
        Ok(DiskCache::open(self.cfg.cache_dir(&self.ws.root))?)
    }

    fn input_hash(&self, inputs: &mut BTreeMap<String, String>, path: &std::path::Path) -> Result<()> {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        inputs.insert(format!("input:{name}"), sha256_file(path)?);
        Ok(())
    }

    pub fn annotations_path(&self) -> Option<&std::path::Path> {
        self.annotations.as_deref().or(self.cfg.inputs.annotations.as_deref())
    }
}

fn counts<const N: usize>(pairs: [(&str, usize); N]) -> BTreeMap<String, usize> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub async fn run_stage(ctx: &Ctx, stage: Stage) -> Result<Manifest> {
    let m = match stage {
        Stage::Ingest => ingest(ctx),
        Stage::Preprocess => preprocess(ctx),
        Stage::Rate => rate(ctx).await,
        Stage::Embed => embed(ctx).await,
        Stage::Fuse => fuse_stage(ctx),
        Stage::Panel => panel_stage(ctx),
        Stage::Analyze => analyze(ctx),
        Stage::Validate => validate(ctx),
        Stage::Plot => plot_stage(ctx),
    }
    .with_context(|| format!("stage `{}` failed", stage.name()))?;
    let summary: Vec<String> = m.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    tracing::info!(stage = stage.name(), "{}", summary.join(" "));
    Ok(m)
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    report: &'a corpus::IngestReport,
    corpora: &'a [corpus::CorpusManifest],
}

fn ingest(ctx: &Ctx) -> Result<Manifest> {
    let mapping = ctx.cfg.corpus_mapping()?;
    let out = corpus::ingest(&ctx.cfg.inputs.corpus, &mapping, ctx.cfg.ingest.dedup_scope)?;
    if !out.report.is_conserved() {
        bail!("record counts do not add up: {:?}", out.report);
    }
    let dir = ctx.ws.begin(Stage::Ingest)?;
    let speeches = dir.join("speeches.jsonl");
    let rejects = dir.join("rejects.jsonl");
    let summary = dir.join("report.json");
    write_jsonl(&speeches, &out.records)?;
    write_jsonl(&rejects, &out.rejects)?;
    write_json(&summary, &IngestSummary { report: &out.report, corpora: &out.manifests })?;
    let mut inputs = BTreeMap::new();
    for p in &ctx.cfg.inputs.corpus {
        ctx.input_hash(&mut inputs, p)?;
    }
    let r = &out.report;
    ctx.ws.finish(
        Stage::Ingest,
        ctx.hash(Stage::Ingest)?,
        inputs,
        &[speeches, rejects, summary],
        counts([
            ("rows_read", r.rows_read),
            ("rejected", r.rejected),
            ("chair_removed", r.chair_removed),
            ("dedup_removed", r.dedup_removed),
            ("emitted", r.emitted),
        ]),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct DroppedSpeech {
    speech_id: String,
    country: String,
    year: i32,
    reason: DropReason,
    token_count: usize,
    ratio: Option<f64>,
}

fn preprocess(ctx: &Ctx) -> Result<Manifest> {
    let inputs = ctx.require_upstream(Stage::Preprocess)?;
    let speeches: Vec<SpeechRecord> = read_jsonl(&ctx.ws.path(Stage::Ingest, "speeches.jsonl"))?;
    let languages: BTreeSet<&str> = speeches.iter().map(|s| s.language.as_str()).collect();
    let lists: HashMap<&str, CommonWordList> = languages
        .into_iter()
        .map(|l| {
            let path = ctx.cfg.common_words_path(l);
            CommonWordList::load(&path, l)
                .with_context(|| format!("common-word list for '{l}' ({})", path.display()))
                .map(|c| (l, c))
        })
        .collect::<Result<_>>()?;

    let p = &ctx.cfg.preprocess;
    let params = p.chunk_params();
    let decided: Vec<(&SpeechRecord, Option<DroppedSpeech>, Vec<Segment>)> = speeches
        .par_iter()
        .map(|s| {
            let d = apply_lexical_filters(s, &lists[s.language.as_str()], p.thresholds(&s.country));
            match d.drop {
                Some(reason) => (
                    s,
                    Some(DroppedSpeech {
                        speech_id: s.speech_id.clone(),
                        country: s.country.clone(),
                        year: s.year,
                        reason,
                        token_count: d.token_count,
                        ratio: d.ratio,
                    }),
                    Vec::new(),
                ),
                None => (s, None, chunk(s, params)),
            }
        })
        .collect();

    let dropped: Vec<&DroppedSpeech> = decided.iter().filter_map(|d| d.1.as_ref()).collect();
    let mut segments: Vec<&Segment> = decided.iter().flat_map(|d| &d.2).collect();
    if let Some(n) = ctx.limit {
        segments.truncate(n);
    }
    let with_segments: BTreeSet<&str> = segments.iter().map(|s| s.speech_id.as_str()).collect();
    let kept: Vec<&SpeechRecord> =
        decided.iter().filter(|d| d.1.is_none() && with_segments.contains(d.0.speech_id.as_str())).map(|d| d.0).collect();

    let dir = ctx.ws.begin(Stage::Preprocess)?;
    let outs = [dir.join("speeches.jsonl"), dir.join("segments.jsonl"), dir.join("dropped.jsonl")];
    write_jsonl(&outs[0], kept.iter().copied())?;
    write_jsonl(&outs[1], segments.iter().copied())?;
    write_jsonl(&outs[2], dropped.iter().copied())?;
    let by = |r: DropReason| dropped.iter().filter(|d| d.reason == r).count();
    ctx.ws.finish(
        Stage::Preprocess,
        ctx.hash(Stage::Preprocess)?,
        inputs,
        &outs,
        counts([
            ("speeches_in", speeches.len()),
            ("dropped_min_tokens", by(DropReason::MinTokens)),
            ("dropped_lexical_ratio", by(DropReason::LexicalRatio)),
            ("speeches_kept", kept.len()),
            ("segments", segments.len()),
        ]),
    )
}

async fn rate(ctx: &Ctx) -> Result<Manifest> {
    let inputs = ctx.require_upstream(Stage::Rate)?;
    let speeches: Vec<SpeechRecord> = read_jsonl(&ctx.ws.path(Stage::Preprocess, "speeches.jsonl"))?;
    let segments: Vec<Segment> = read_jsonl(&ctx.ws.path(Stage::Preprocess, "segments.jsonl"))?;
    let cache = ctx.cache()?;
    let opts = RateOptions { max_in_flight: ctx.jobs, probe: true };
    let level = ctx.cfg.rate.procedural_level;

    let proc_jobs: Vec<RateJob> = match level {
        ProceduralLevel::Speech => speeches
            .iter()
            .map(|s| RateJob { id: s.speech_id.clone(), language: s.language.clone(), text: s.text.clone() })
            .collect(),
        ProceduralLevel::Segment => segments.iter().map(job).collect(),
    };
    let proc =
        rate_segments(&ctx.client, &proc_jobs, &ctx.cfg.endpoints.procedural, Task::Procedural, Some(&cache), opts).await?;
    let proc_ratings = proc.procedural();
    let decisions = filter_procedural(proc_jobs.iter().map(|j| j.id.as_str()), &proc_ratings, ctx.cfg.rate.procedural_threshold);
    let keep: BTreeSet<&str> = decisions.iter().filter(|d| d.keep).map(|d| d.id.as_str()).collect();
    let kept: Vec<&Segment> = segments
        .iter()
        .filter(|s| {
            keep.contains(match level {
                ProceduralLevel::Speech => s.speech_id.as_str(),
                ProceduralLevel::Segment => s.segment_id.as_str(),
            })
        })
        .collect();

    let epi_jobs: Vec<RateJob> = kept.iter().map(|s| job(s)).collect();
    let epi = rate_segments(&ctx.client, &epi_jobs, &ctx.cfg.endpoints.epistemic, Task::Epistemic, Some(&cache), opts).await?;
    let epi_ratings = epi.epistemic();
    let ensemble: Vec<EnsembleEpistemicScore> = ensemble_all(&epi_ratings);

    let dir = ctx.ws.begin(Stage::Rate)?;
    let outs = [
        dir.join("procedural.jsonl"),
        dir.join("procedural_decisions.jsonl"),
        dir.join("segments.jsonl"),
        dir.join("epistemic.jsonl"),
        dir.join("llm_scores.jsonl"),
        dir.join("missing.jsonl"),
    ];
    write_jsonl(&outs[0], &proc_ratings)?;
    write_jsonl(&outs[1], &decisions)?;
    write_jsonl(&outs[2], kept.iter().copied())?;
    write_jsonl(&outs[3], &epi_ratings)?;
    write_jsonl(&outs[4], &ensemble)?;
    write_jsonl(&outs[5], proc.missing.iter().chain(&epi.missing))?;
    let excluded = |reason: &str| decisions.iter().filter(|d| d.reason.as_deref() == Some(reason)).count();
    ctx.ws.finish(
        Stage::Rate,
        ctx.hash(Stage::Rate)?,
        inputs,
        &outs,
        counts([
            ("procedural_units", proc_jobs.len()),
            ("procedural_excluded", excluded("procedural")),
            ("unrated_excluded", excluded("unrated")),
            ("segments_kept", kept.len()),
            ("epistemic_ratings", epi_ratings.len()),
            ("segments_scored", ensemble.len()),
            ("missing_ratings", proc.missing.len() + epi.missing.len()),
            ("requests", proc.stats.requests + epi.stats.requests),
            ("retries", proc.stats.retries + epi.stats.retries),
            ("cache_hits", proc.stats.cache_hits + epi.stats.cache_hits),
        ]),
    )
}

fn job(s: &Segment) -> RateJob {
    RateJob { id: s.segment_id.clone(), language: s.language.clone(), text: s.text.clone() }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

async fn embed(ctx: &Ctx) -> Result<Manifest> {
    let inputs = ctx.require_upstream(Stage::Embed)?;
    let segments: Vec<Segment> = read_jsonl(&ctx.ws.path(Stage::Rate, "segments.jsonl"))?;
    let cache = ctx.cache()?;
    let ep = &ctx.cfg.endpoints.embedding;
    let e = &ctx.cfg.embed;

    let mut anchors: BTreeMap<String, AnchorVectors<f64>> = BTreeMap::new();
    for lang in segments.iter().map(|s| s.language.as_str()).collect::<BTreeSet<_>>() {
        let path = ctx.cfg.anchors_path(lang);
        let set = load_anchors(&path, lang).with_context(|| format!("anchors for '{lang}' ({})", path.display()))?;
        let v = build_anchor_vectors(&ctx.client, &set, ep, Some(&cache), e.anchor_embed_mode, e.normalize_before_mean).await?;
        anchors.insert(lang.to_string(), v);
    }

    let texts: Vec<String> = segments.iter().map(|s| s.text.clone()).collect();
    let vectors =
        if texts.is_empty() { Vec::new() } else { embed_texts(&ctx.client, &texts, ep, Some(&cache), ctx.jobs).await? };
    let scores: Vec<SegmentEmbeddingScore<f64>> = segments
        .par_iter()
        .zip(&vectors)
        .map(|(s, v)| Ok(score_segment_embedding(&s.segment_id, &widen(v), &anchors[s.language.as_str()])?))
        .collect::<Result<_>>()?;

    let dir = ctx.ws.begin(Stage::Embed)?;
    let outs = [dir.join("anchors.json"), dir.join("scores.jsonl")];
    write_json(&outs[0], &anchors)?;
    write_jsonl(&outs[1], &scores)?;
    ctx.ws.finish(
        Stage::Embed,
        ctx.hash(Stage::Embed)?,
        inputs,
        &outs,
        counts([("languages", anchors.len()), ("segments", scores.len())]),
    )
}

fn fuse_stage(ctx: &Ctx) -> Result<Manifest> {
    let inputs = ctx.require_upstream(Stage::Fuse)?;
    let segments: Vec<Segment> = read_jsonl(&ctx.ws.path(Stage::Rate, "segments.jsonl"))?;
    let llm: Vec<EnsembleEpistemicScore> = read_jsonl(&ctx.ws.path(Stage::Rate, "llm_scores.jsonl"))?;
    let emb: Vec<SegmentEmbeddingScore<f64>> = read_jsonl(&ctx.ws.path(Stage::Embed, "scores.jsonl"))?;
    let keys: HashMap<&str, (&str, i32)> =
        segments.iter().map(|s| (s.segment_id.as_str(), (s.country.as_str(), s.year))).collect();
    let component = |id: &str, value: f64| -> Result<ComponentScore> {
        let &(country, year) = keys.get(id).with_context(|| format!("score for unknown segment '{id}'"))?;
        Ok(ComponentScore { segment_id: id.to_string(), country: country.to_string(), year, value })
    };
    let llm_c = llm.iter().map(|s| component(&s.segment_id, s.emi_llm_raw)).collect::<Result<Vec<_>>>()?;
    let emb_c = emb.iter().map(|s| component(&s.segment_id, s.emi_emb_raw)).collect::<Result<Vec<_>>>()?;
    let out = fuse(&llm_c, &emb_c, ctx.cfg.fuse.z_scope)?;

    let dir = ctx.ws.begin(Stage::Fuse)?;
    let outs = [dir.join("scores.jsonl"), dir.join("groups.json"), dir.join("dropped.jsonl")];
    write_jsonl(&outs[0], &out.scores)?;
    write_json(&outs[1], &out.groups)?;
    write_jsonl(&outs[2], &out.dropped)?;
    ctx.ws.finish(
        Stage::Fuse,
        ctx.hash(Stage::Fuse)?,
        inputs,
        &outs,
        counts([("scored", out.scores.len()), ("dropped", out.dropped.len()), ("groups", out.groups.len())]),
    )
}

fn panel_stage(ctx: &Ctx) -> Result<Manifest> {
    let mut inputs = ctx.require_upstream(Stage::Panel)?;
    let scores: Vec<SegmentScore> = read_jsonl(&ctx.ws.path(Stage::Fuse, "scores.jsonl"))?;
    let opts = AggregateOptions { iters: ctx.cfg.panel.bootstrap_iters, level: ctx.cfg.panel.level, seed: ctx.cfg.seeds.panel };
    let yearly = panel::aggregate(&scores, &opts)?;
    let mapping = ctx.cfg.indicator_mapping()?;
    let indicators = panel::load_indicators(&ctx.cfg.inputs.indicators, &mapping)?;
    let gdp = panel::load_gdp(&ctx.cfg.inputs.gdp, &mapping)?;
    let joined = panel::join_indicators(&yearly, &indicators, &gdp)?;
    if joined.rows.is_empty() {
        bail!("no country-year of the EMI series matches the indicator table; check inputs.indicator_mapping");
    }
    ctx.input_hash(&mut inputs, &ctx.cfg.inputs.indicators)?;
    ctx.input_hash(&mut inputs, &ctx.cfg.inputs.gdp)?;

    let dir = ctx.ws.begin(Stage::Panel)?;
    let outs = [dir.join("panel.csv"), dir.join("yearly_emi.jsonl"), dir.join("coverage.json")];
    panel::write_panel_csv(&outs[0], &joined.rows)?;
    write_jsonl(&outs[1], &yearly)?;
    write_json(&outs[2], &joined.coverage)?;
    let c = &joined.coverage;
    ctx.ws.finish(
        Stage::Panel,
        ctx.hash(Stage::Panel)?,
        inputs,
        &outs,
        counts([
            ("country_years", yearly.len()),
            ("joined", c.joined_rows),
            ("dropped", c.dropped.len()),
            ("with_missing", c.missing.len()),
            ("invalid_gdp", c.invalid_gdp.len()),
        ]),
    )
}

fn read_panel(ctx: &Ctx) -> Result<Vec<PanelRow>> {
    Ok(panel::read_panel_csv(&ctx.ws.path(Stage::Panel, "panel.csv"))?)
}

fn analyze(ctx: &Ctx) -> Result<Manifest> {
    let mut inputs = ctx.require_upstream(Stage::Analyze)?;
    let rows = read_panel(ctx)?;
    let models = ModelFile::load(&ctx.cfg.inputs.models)?;
    ctx.input_hash(&mut inputs, &ctx.cfg.inputs.models)?;
    let rep = report::analyze(&rows, &models, &ctx.cfg, ctx.hash(Stage::Analyze)?)?;

    let dir = ctx.ws.begin(Stage::Analyze)?;
    let outs = [dir.join("report.json"), dir.join("report.txt")];
    write_json(&outs[0], &rep)?;
    std::fs::write(&outs[1], report::render(&rep)).with_context(|| format!("writing {}", outs[1].display()))?;
    let failed = rep.models.iter().filter(|m| m.error.is_some()).count()
        + rep.comparisons.iter().filter(|c| c.error.is_some()).count()
        + rep.bootstraps.iter().filter(|b| b.error.is_some()).count();
    if failed > 0 {
        tracing::warn!(failed, "some estimates could not be computed; see analyze/report.txt");
    }
    ctx.ws.finish(
        Stage::Analyze,
        ctx.hash(Stage::Analyze)?,
        inputs,
        &outs,
        counts([
            ("models", rep.models.len()),
            ("comparisons", rep.comparisons.len()),
            ("bootstraps", rep.bootstraps.len()),
            ("not_estimable", failed),
        ]),
    )
}

fn validate(ctx: &Ctx) -> Result<Manifest> {
    let mut inputs = ctx.require_upstream(Stage::Validate)?;
    let path = ctx
        .annotations_path()
        .context("no annotation file: set inputs.annotations in the config or pass --annotations")?
        .to_path_buf();
    let annotations = load_annotations(&path)?;
    ctx.input_hash(&mut inputs, &path)?;
    let scores: Vec<SegmentScore> = read_jsonl(&ctx.ws.path(Stage::Fuse, "scores.jsonl"))?;
    let column = |f: fn(&SegmentScore) -> f64| scores.iter().map(|s| (s.segment_id.clone(), f(s))).collect::<BTreeMap<_, _>>();
    let methods = vec![
        ("hybrid".to_string(), column(|s| s.emi)),
        ("embedding".to_string(), column(|s| s.z_emb)),
        ("llm".to_string(), column(|s| s.z_llm)),
    ];
    let rep: ValidationReport<f64> = validate_emi(&annotations, &methods)?;

    let dir = ctx.ws.begin(Stage::Validate)?;
    let outs = [dir.join("report.json"), dir.join("report.txt")];
    write_json(&outs[0], &rep)?;
    std::fs::write(&outs[1], report::render_validation(&rep)).with_context(|| format!("writing {}", outs[1].display()))?;
    ctx.ws.finish(
        Stage::Validate,
        ctx.hash(Stage::Validate)?,
        inputs,
        &outs,
        counts([
            ("annotations", rep.n_annotations),
            ("tied_dropped", rep.n_tied_dropped),
            ("unmatched", rep.n_unmatched),
            ("used", rep.n_used),
        ]),
    )
}

fn plot_stage(ctx: &Ctx) -> Result<Manifest> {
    let inputs = ctx.require_upstream(Stage::Plot)?;
    let rows = read_panel(ctx)?;
    let hash = ctx.hash(Stage::Plot)?;
    let dir = ctx.ws.begin(Stage::Plot)?;
    let mut outs = Vec::new();
    let mut countries: Vec<&str> = rows.iter().map(|r| r.country.as_str()).collect();
    countries.dedup();
    for c in &countries {
        let series: Vec<&PanelRow> = rows.iter().filter(|r| r.country == *c).collect();
        let p = dir.join(format!("trend_{c}.svg"));
        std::fs::write(&p, plot::trend_svg(c, &series, &hash)).with_context(|| format!("writing {}", p.display()))?;
        outs.push(p);
    }
    let p = dir.join("scatter_emi_ddi.svg");
    std::fs::write(&p, plot::scatter_svg(&rows, &hash)?).with_context(|| format!("writing {}", p.display()))?;
    outs.push(p);
    ctx.ws.finish(Stage::Plot, hash, inputs, &outs, counts([("trend_plots", countries.len()), ("scatter_plots", 1)]))
}

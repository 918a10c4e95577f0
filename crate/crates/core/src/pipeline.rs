//! End-to-end orchestration: ingest, parse, mask, infer, score, analyze and
//! write the run artifacts. Each stage is also callable on its own so the
//! CLI can rerun stages from intermediate files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{SecondsFormat, Utc};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ast::{self, NodeTypeSet};
use crate::backend::{reconstruct, BackendSpec, FillMaskBackend, FillRequest, HttpConfig};
use crate::causal::{run_causal_analysis, CausalConfig, CausalResult, EvaluationRecord};
use crate::corpus::{self, Corpus, IngestStats, Snippet};
use crate::error::{Error, Result};
use crate::masking::{self, Arm, MaskedSample, SkipReason, TreatmentOutcome};
use crate::metrics::{score_sample, Metric, SimilarityScores};
use crate::report::report_summary;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MASKED_FILE: &str = "masked_samples.jsonl";
pub const SCORES_FILE: &str = "scores_by_node_type.csv";
pub const RESULTS_CSV: &str = "causal_results.csv";
pub const RESULTS_JSON: &str = "causal_results.json";
pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CACHE_FILE: &str = "cache/responses.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corpus_path: PathBuf,
    pub node_types: NodeTypeSet,
    pub backend: BackendSpec,
    pub backend_url: Option<String>,
    pub mask_sentinel: String,
    /// `None` evaluates the whole (deduplicated) corpus.
    pub sample_size: Option<usize>,
    pub seed: u64,
    pub control_variants: usize,
    pub bootstrap_resamples: usize,
    pub max_mask_fraction: f64,
    pub max_bytes: usize,
    pub min_group_size: usize,
    pub top_k: usize,
    pub jobs: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus_path: PathBuf::from("corpus.jsonl"),
            node_types: NodeTypeSet::default(),
            backend: BackendSpec::Http,
            backend_url: None,
            mask_sentinel: masking::DEFAULT_SENTINEL.into(),
            sample_size: None,
            seed: 0,
            control_variants: masking::DEFAULT_VARIANTS,
            bootstrap_resamples: 500,
            max_mask_fraction: masking::DEFAULT_MAX_MASK_FRACTION,
            max_bytes: corpus::DEFAULT_MAX_BYTES,
            min_group_size: 30,
            top_k: 1,
            jobs: 4,
            retries: 3,
            backoff_ms: 250,
            timeout_secs: 30,
            output_dir: PathBuf::from("syntaxeval-out"),
        }
    }
}

/// Partial configuration as read from a TOML file. Unset keys fall back to
/// the defaults; CLI flags override both.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub corpus_path: Option<PathBuf>,
    pub node_types: Option<Vec<String>>,
    pub backend: Option<String>,
    pub backend_url: Option<String>,
    pub mask_sentinel: Option<String>,
    pub sample_size: Option<usize>,
    pub seed: Option<u64>,
    pub control_variants: Option<usize>,
    pub bootstrap_resamples: Option<usize>,
    pub max_mask_fraction: Option<f64>,
    pub max_bytes: Option<usize>,
    pub min_group_size: Option<usize>,
    pub top_k: Option<usize>,
    pub jobs: Option<usize>,
    pub retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub timeout_secs: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    /// Layers `top` over `self`: any key set in `top` wins.
    pub fn overlay(self, top: ConfigFile) -> ConfigFile {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigFile { $($f: top.$f.or(self.$f)),* } };
        }
        pick!(
            corpus_path,
            node_types,
            backend,
            backend_url,
            mask_sentinel,
            sample_size,
            seed,
            control_variants,
            bootstrap_resamples,
            max_mask_fraction,
            max_bytes,
            min_group_size,
            top_k,
            jobs,
            retries,
            backoff_ms,
            timeout_secs,
            output_dir
        )
    }

    pub fn resolve(self) -> Result<PipelineConfig> {
        let d = PipelineConfig::default();
        let config = PipelineConfig {
            corpus_path: self.corpus_path.unwrap_or(d.corpus_path),
            node_types: match self.node_types {
                Some(v) => NodeTypeSet::new(v)?,
                None => d.node_types,
            },
            backend: match self.backend {
                Some(s) => s.parse()?,
                None => d.backend,
            },
            backend_url: self.backend_url.or(d.backend_url),
            mask_sentinel: self.mask_sentinel.unwrap_or(d.mask_sentinel),
            sample_size: self.sample_size.or(d.sample_size),
            seed: self.seed.unwrap_or(d.seed),
            control_variants: self.control_variants.unwrap_or(d.control_variants),
            bootstrap_resamples: self.bootstrap_resamples.unwrap_or(d.bootstrap_resamples),
            max_mask_fraction: self.max_mask_fraction.unwrap_or(d.max_mask_fraction),
            max_bytes: self.max_bytes.unwrap_or(d.max_bytes),
            min_group_size: self.min_group_size.unwrap_or(d.min_group_size),
            top_k: self.top_k.unwrap_or(d.top_k),
            jobs: self.jobs.unwrap_or(d.jobs),
            retries: self.retries.unwrap_or(d.retries),
            backoff_ms: self.backoff_ms.unwrap_or(d.backoff_ms),
            timeout_secs: self.timeout_secs.unwrap_or(d.timeout_secs),
            output_dir: self.output_dir.unwrap_or(d.output_dir),
        };
        config.validate()?;
        Ok(config)
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("control_variants", self.control_variants),
            ("bootstrap_resamples", self.bootstrap_resamples),
            ("max_bytes", self.max_bytes),
            ("top_k", self.top_k),
            ("jobs", self.jobs),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if self.sample_size == Some(0) {
            return Err(Error::InvalidArgument("sample_size must be >= 1".into()));
        }
        if !(self.max_mask_fraction > 0.0 && self.max_mask_fraction <= 1.0) {
            return Err(Error::InvalidArgument(
                "max_mask_fraction must be in (0, 1]".into(),
            ));
        }
        if self.mask_sentinel.is_empty() {
            return Err(Error::InvalidArgument("mask sentinel is empty".into()));
        }
        Ok(())
    }

    pub fn http_config(&self) -> Option<HttpConfig> {
        let url = self
            .backend_url
            .clone()
            .or_else(|| std::env::var(crate::backend::BACKEND_URL_ENV).ok())?;
        Some(HttpConfig {
            retries: self.retries,
            backoff_base: Duration::from_millis(self.backoff_ms),
            timeout: Duration::from_secs(self.timeout_secs),
            max_in_flight: self.jobs,
            ..HttpConfig::new(url)
        })
    }

    pub fn causal_config(&self) -> CausalConfig {
        CausalConfig {
            bootstrap_resamples: self.bootstrap_resamples,
            seed: self.seed,
            min_group_size: self.min_group_size,
            refit_in_bootstrap: true,
        }
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
    }
}

/// Reads, deduplicates and optionally subsamples the corpus.
pub fn prepare_corpus(config: &PipelineConfig) -> Result<(Corpus, CorpusCounts)> {
    let (raw, ingest) = corpus::ingest_jsonl_with_limit(&config.corpus_path, config.max_bytes)?;
    let deduped = corpus::dedup(&raw);
    let sampled = match config.sample_size {
        Some(n) => corpus::sample_subset(&deduped, n, config.seed),
        None => deduped.clone(),
    };
    let counts = CorpusCounts {
        ingest,
        ingested: raw.len(),
        after_dedup: deduped.len(),
        evaluated: sampled.len(),
    };
    Ok((sampled, counts))
}

/// Attaches confounder features to every snippet.
pub fn attach_features(corpus: &Corpus) -> Result<Corpus> {
    let snippets: Vec<Snippet> = corpus
        .snippets()
        .par_iter()
        .map(|s| Snippet {
            features: Some(ast::confounders_of(&s.source)),
            ..s.clone()
        })
        .collect();
    corpus.with_snippets(snippets)
}

/// A treatment sample with its matched controls.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGroup {
    pub treatment: MaskedSample,
    pub controls: Vec<MaskedSample>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTypeCounts {
    pub treated: usize,
    pub skipped_absent: usize,
    pub skipped_too_dense: usize,
    pub skipped_sentinel_conflict: usize,
    pub records: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub ingest: IngestStats,
    pub ingested: usize,
    pub after_dedup: usize,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskingOutput {
    pub groups: Vec<MaskedGroup>,
    pub counts: BTreeMap<String, NodeTypeCounts>,
}

enum GroupOutcome {
    Masked(MaskedGroup),
    Skipped(SkipReason),
    SentinelConflict,
}

fn mask_snippet(snippet: &Snippet, config: &PipelineConfig) -> Result<Vec<(String, GroupOutcome)>> {
    let tree = ast::parse(&snippet.source);
    config
        .node_types
        .iter()
        .map(|nt| {
            let outcome = match masking::mask_treatment(
                snippet,
                &tree,
                nt,
                &config.mask_sentinel,
                config.max_mask_fraction,
            ) {
                Ok(TreatmentOutcome::Masked(treatment)) => {
                    let controls = masking::mask_control(
                        snippet,
                        &tree,
                        nt,
                        treatment.mask_count,
                        config.seed,
                        config.control_variants,
                        &config.mask_sentinel,
                    )?;
                    GroupOutcome::Masked(MaskedGroup {
                        treatment,
                        controls,
                    })
                }
                Ok(TreatmentOutcome::Skipped(reason)) => GroupOutcome::Skipped(reason),
                Err(Error::SentinelInSource { .. }) => GroupOutcome::SentinelConflict,
                Err(e) => return Err(e),
            };
            Ok((nt.to_owned(), outcome))
        })
        .collect()
}

/// Builds treatment and matched control samples for every snippet and node
/// type. Output order follows corpus order, then node-type order.
pub fn mask_corpus(corpus: &Corpus, config: &PipelineConfig) -> Result<MaskingOutput> {
    let per_snippet: Vec<Vec<(String, GroupOutcome)>> = config.thread_pool()?.install(|| {
        corpus
            .snippets()
            .par_iter()
            .map(|s| mask_snippet(s, config))
            .collect::<Result<_>>()
    })?;

    let mut counts: BTreeMap<String, NodeTypeCounts> = config
        .node_types
        .iter()
        .map(|nt| (nt.to_owned(), NodeTypeCounts::default()))
        .collect();
    let mut groups = Vec::new();
    for (nt, outcome) in per_snippet.into_iter().flatten() {
        let c = counts.entry(nt).or_default();
        match outcome {
            GroupOutcome::Masked(g) => {
                c.treated += 1;
                groups.push(g);
            }
            GroupOutcome::Skipped(SkipReason::Absent) => c.skipped_absent += 1,
            GroupOutcome::Skipped(SkipReason::TooDense { .. }) => c.skipped_too_dense += 1,
            GroupOutcome::SentinelConflict => c.skipped_sentinel_conflict += 1,
        }
    }
    Ok(MaskingOutput { groups, counts })
}

/// Per-snippet scores for one node type: the treatment score and the mean
/// score of its controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGroup {
    pub snippet_id: String,
    pub node_type: String,
    pub treated: SimilarityScores,
    pub control: SimilarityScores,
}

fn score_one(
    backend: &dyn FillMaskBackend,
    sample: &MaskedSample,
    source: &str,
    config: &PipelineConfig,
) -> Result<SimilarityScores> {
    let request = FillRequest::for_sample(sample, &config.mask_sentinel, config.top_k);
    let response = backend.fill_sample(sample, &request)?;
    let predicted = reconstruct(sample, &response, &config.mask_sentinel)
        .map_err(|e| Error::Backend(crate::backend::BackendError::Protocol(e.to_string())))?;
    Ok(score_sample(source, &predicted))
}

/// Queries the backend for every sample and scores the reconstructions.
pub fn evaluate_groups(
    groups: &[MaskedGroup],
    corpus: &Corpus,
    backend: &dyn FillMaskBackend,
    config: &PipelineConfig,
) -> Result<(Vec<EvaluationRecord>, Vec<ScoredGroup>)> {
    let by_id: BTreeMap<&str, &Snippet> = corpus.iter().map(|s| (s.id.as_str(), s)).collect();
    let scored: Vec<(EvaluationRecord, EvaluationRecord, ScoredGroup)> =
        config.thread_pool()?.install(|| {
            groups
                .par_iter()
                .map(|g| {
                    let snippet = by_id.get(g.treatment.snippet_id.as_str()).ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "masked sample refers to unknown snippet {}",
                            g.treatment.snippet_id
                        ))
                    })?;
                    let confounders = snippet
                        .features
                        .unwrap_or_else(|| ast::confounders_of(&snippet.source));
                    let treated = score_one(backend, &g.treatment, &snippet.source, config)?;
                    let controls = g
                        .controls
                        .iter()
                        .map(|c| score_one(backend, c, &snippet.source, config))
                        .collect::<Result<Vec<_>>>()?;
                    let control = SimilarityScores::mean(&controls).ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "no control samples for {}",
                            g.treatment.snippet_id
                        ))
                    })?;
                    let record = |treatment: u8, outcomes| EvaluationRecord {
                        snippet_id: g.treatment.snippet_id.clone(),
                        node_type: g.treatment.node_type.clone(),
                        treatment,
                        outcomes,
                        confounders,
                    };
                    Ok((
                        record(1, treated),
                        record(0, control),
                        ScoredGroup {
                            snippet_id: g.treatment.snippet_id.clone(),
                            node_type: g.treatment.node_type.clone(),
                            treated,
                            control,
                        },
                    ))
                })
                .collect::<Result<_>>()
        })?;

    let mut records = Vec::with_capacity(scored.len() * 2);
    let mut groups_out = Vec::with_capacity(scored.len());
    for (t1, t0, g) in scored {
        records.push(t1);
        records.push(t0);
        groups_out.push(g);
    }
    Ok((records, groups_out))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::InvalidJson {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_masked_samples(path: &Path, groups: &[MaskedGroup]) -> Result<()> {
    let flat: Vec<&MaskedSample> = groups
        .iter()
        .flat_map(|g| std::iter::once(&g.treatment).chain(&g.controls))
        .collect();
    write_jsonl(path, &flat)
}

/// Regroups a masked-sample stream: each treatment sample followed by the
/// controls for the same (snippet, node type).
pub fn read_masked_samples(path: &Path) -> Result<Vec<MaskedGroup>> {
    let samples: Vec<MaskedSample> = read_jsonl(path)?;
    let mut groups: Vec<MaskedGroup> = Vec::new();
    let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut orphans: Vec<MaskedSample> = Vec::new();
    for s in samples {
        let key = (s.snippet_id.clone(), s.node_type.clone());
        match s.arm {
            Arm::Treatment => {
                if index.insert(key, groups.len()).is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "two treatment samples for snippet {} / {}",
                        s.snippet_id, s.node_type
                    )));
                }
                groups.push(MaskedGroup {
                    treatment: s,
                    controls: Vec::new(),
                });
            }
            Arm::Control => match index.get(&key) {
                Some(&i) => groups[i].controls.push(s),
                None => orphans.push(s),
            },
        }
    }
    for s in orphans {
        let key = (s.snippet_id.clone(), s.node_type.clone());
        match index.get(&key) {
            Some(&i) => groups[i].controls.push(s),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "control sample for {} / {} has no treatment sample",
                    s.snippet_id, s.node_type
                )))
            }
        }
    }
    for g in &mut groups {
        g.controls.sort_by_key(|c| c.variant_index);
    }
    Ok(groups)
}

pub fn write_scores_csv(path: &Path, scored: &[ScoredGroup]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "node_type",
        "snippet_id",
        "arm",
        "jaccard",
        "levenshtein",
        "sorensen_dice",
    ])?;
    let mut rows: Vec<&ScoredGroup> = scored.iter().collect();
    rows.sort_by(|a, b| a.node_type.cmp(&b.node_type));
    for g in rows {
        for (arm, s) in [("T1", &g.treated), ("T0", &g.control)] {
            w.write_record([
                g.node_type.as_str(),
                g.snippet_id.as_str(),
                arm,
                &s.jaccard.to_string(),
                &s.levenshtein.to_string(),
                &s.sorensen_dice.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const RESULT_COLUMNS: [&str; 14] = [
    "node_type",
    "metric",
    "tau",
    "tau_naive",
    "ci_low",
    "ci_high",
    "placebo_tau",
    "n_treated",
    "n_control",
    "mean_t1",
    "std_t1",
    "mean_t0",
    "std_t0",
    "flags",
];

pub fn write_results_csv(path: &Path, results: &[CausalResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(RESULT_COLUMNS)?;
    for r in results {
        let flags: Vec<&str> = r.flags.iter().map(|f| f.as_str()).collect();
        w.write_record([
            r.node_type.clone(),
            r.outcome_metric.as_str().to_owned(),
            r.tau.to_string(),
            r.tau_naive.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.placebo_tau.to_string(),
            r.n_treated.to_string(),
            r.n_control.to_string(),
            r.treated.mean.to_string(),
            r.treated.std.to_string(),
            r.control.mean.to_string(),
            r.control.std.to_string(),
            flags.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_results_json(path: &Path, results: &[CausalResult]) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, results)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_json(path: &Path) -> Result<Vec<CausalResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes causal_results.{csv,json} and summary.txt into `dir`.
pub fn write_analysis(dir: &Path, results: &[CausalResult]) -> Result<()> {
    write_results_csv(&dir.join(RESULTS_CSV), results)?;
    write_results_json(&dir.join(RESULTS_JSON), results)?;
    let summary = dir.join(SUMMARY_FILE);
    std::fs::write(&summary, report_summary(results)).map_err(|e| Error::io(&summary, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    /// Drives corpus subsampling, control masking (per snippet and variant),
    /// and, hashed with each node type, the bootstrap and placebo draws.
    pub master: u64,
    pub derivation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub started_at: String,
    pub finished_at: String,
    pub versions: BTreeMap<String, String>,
    pub config: PipelineConfig,
    pub backend_id: String,
    pub seeds: Seeds,
    pub corpus: CorpusCounts,
    pub node_types: BTreeMap<String, NodeTypeCounts>,
    pub masked_samples: usize,
    pub records: usize,
    pub results: usize,
    pub omitted_node_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub results: Vec<CausalResult>,
    pub report: String,
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        (
            "syntaxeval".to_owned(),
            env!("CARGO_PKG_VERSION").to_owned(),
        ),
        (
            "tree-sitter-python-abi".to_owned(),
            ast::language().abi_version().to_string(),
        ),
    ])
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Runs every stage with the backend named in the configuration.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    config.validate()?;
    let cache = config.output_dir.join(CACHE_FILE);
    let backend = config.backend.build(config.http_config(), Some(&cache))?;
    run_pipeline_with(config, backend.as_ref())
}

/// Runs every stage against an explicit backend.
pub fn run_pipeline_with(
    config: &PipelineConfig,
    backend: &dyn FillMaskBackend,
) -> Result<RunSummary> {
    config.validate()?;
    let started_at = now();
    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;

    let (corpus, corpus_counts) = prepare_corpus(config)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    info!("evaluating {} snippet(s)", corpus.len());
    let corpus = attach_features(&corpus)?;

    let masked = mask_corpus(&corpus, config)?;
    write_masked_samples(&config.output_dir.join(MASKED_FILE), &masked.groups)?;
    let masked_samples = masked.groups.iter().map(|g| 1 + g.controls.len()).sum();

    let (records, scored) = evaluate_groups(&masked.groups, &corpus, backend, config)?;
    write_jsonl(&config.output_dir.join(RECORDS_FILE), &records)?;
    write_scores_csv(&config.output_dir.join(SCORES_FILE), &scored)?;

    let mut node_types = masked.counts;
    for r in &records {
        if let Some(c) = node_types.get_mut(&r.node_type) {
            c.records += 1;
        }
    }
    let omitted: Vec<String> = node_types
        .iter()
        .filter(|(_, c)| c.treated == 0)
        .map(|(nt, _)| nt.clone())
        .collect();
    for nt in &omitted {
        info!("{nt}: absent from every evaluated snippet, omitted from the report");
    }

    let results = if records.is_empty() {
        warn!("no evaluation records; every node type was skipped");
        Vec::new()
    } else {
        run_causal_analysis(&records, &config.causal_config())?
    };
    write_analysis(&config.output_dir, &results)?;

    let manifest = RunManifest {
        started_at,
        finished_at: now(),
        versions: versions(),
        config: config.clone(),
        backend_id: backend.id(),
        seeds: Seeds {
            master: config.seed,
            derivation: "sampling: ChaCha8(seed); control masks: ChaCha8(sha256(seed, snippet_id, variant)); \
                         bootstrap/placebo: ChaCha8(sha256(seed, node_type)[..8])"
                .into(),
        },
        corpus: corpus_counts,
        node_types,
        masked_samples,
        records: records.len(),
        results: results.len(),
        omitted_node_types: omitted,
    };
    let manifest_path = config.output_dir.join(MANIFEST_FILE);
    let mut w = create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")
        .map_err(|e| Error::io(&manifest_path, e))?;
    w.flush().map_err(|e| Error::io(&manifest_path, e))?;

    Ok(RunSummary {
        manifest,
        report: report_summary(&results),
        results,
    })
}

/// Mean similarity per (node type, arm, metric); a quick look at a records
/// file without running the estimator.
pub fn arm_means(records: &[EvaluationRecord]) -> BTreeMap<(String, u8, Metric), f64> {
    let mut acc: BTreeMap<(String, u8, Metric), (f64, usize)> = BTreeMap::new();
    for r in records {
        for m in Metric::ALL {
            let e = acc
                .entry((r.node_type.clone(), r.treatment, m))
                .or_default();
            e.0 += r.outcomes.get(m);
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

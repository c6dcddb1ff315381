//! Stage orchestration behind the CLI: datagen, ingest, kg, m1, train,
//! evaluate, and ablate, each writing deterministic artifacts plus a
//! digest-bearing run manifest. The same stages run in-process for the
//! end-to-end leakage audit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit::{AuditReport, CohortStore, Phase};
use crate::cohort::{
    make_synthetic_cohort, make_synthetic_triples, split_patient_disjoint, synthetic_vocabulary,
    validate_dataset, CohortSpec, DatasetSplit, Task, VisitKey,
};
use crate::context::{read_m1_outputs, run_m1, write_m1_outputs, LLMOutput, M1Config};
use crate::embed::WordEmbedParams;
use crate::eval::{
    default_ablation_specs, evaluate_scores, export_probability_distribution,
    permutation_importance, report_csv_row, run_ablation, youden_threshold, AblationRow,
    BlockImportance, MetricReport, REPORT_CSV_HEADER,
};
use crate::features::{
    AblationToggles, FeatureFitConfig, FittedFeatures, FusedVector,
};
use crate::features::pca::PcaSelection;
use crate::ingest::{
    load_config, parse_triples, parse_visits, render_config, write_triples, write_visits,
    IngestError, ParseMode, RunConfig, TripleRecord,
};
use crate::kg::{
    build_graph, leiden_partition, summarize_communities, CommunitySummary, ConceptLexicon,
    extract_concepts,
};
use crate::llm::{
    CompletionClient, HttpConfig, HttpLlm, MockLlm, MockScript, RetryPolicy, RetryingClient,
    LLM_API_KEY_ENV, LLM_ENDPOINT_ENV,
};
use crate::models::{
    smote, train_balanced_forest, train_logreg, train_mlp, ForestConfig, MlpConfig, Model,
    SmoteConfig,
};
use crate::retrieve::{build_index, HashEmbedder, VisitIndex};

/// Stage failures, grouped by how the CLI should exit: config/input
/// problems (2), external-service outage (3), training/runtime (4).
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config/input error: {0}")]
    Config(String),
    #[error("external service outage: {0}")]
    Outage(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Outage(_) => 3,
            PipelineError::Runtime(_) => 4,
        }
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<crate::context::ContextError> for PipelineError {
    fn from(e: crate::context::ContextError) -> Self {
        match e {
            crate::context::ContextError::SystemicOutage { .. } => {
                PipelineError::Outage(e.to_string())
            }
            other => PipelineError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for PipelineError {
            fn from(e: $ty) -> Self {
                PipelineError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(
    crate::cohort::CohortError,
    crate::kg::KgError,
    crate::embed::EmbedError,
    crate::retrieve::RetrieveError,
    crate::features::FeatureError,
    crate::models::ModelError,
    crate::eval::EvalError
);

/// Reproducibility record for one stage run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, u128>,
    pub effective_config: String,
}

fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let data = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&data)))
}

impl RunManifest {
    fn new(command: &str, config: &RunConfig) -> RunManifest {
        let echo = render_config(config);
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: hex::encode(Sha256::digest(echo.as_bytes())),
            seeds: BTreeMap::from([("seed".to_string(), config.seed)]),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
            effective_config: echo,
        }
    }

    fn record_input(&mut self, path: &Path) -> Result<(), PipelineError> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn record_artifact(&mut self, path: &Path) -> Result<(), PipelineError> {
        self.artifacts.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn write(&self, out_dir: &Path) -> Result<PathBuf, PipelineError> {
        let path = out_dir.join(format!("manifest_{}.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(self).expect("manifest serializes"))?;
        Ok(path)
    }
}

/// Paths of the artifacts a full run produces under one output directory.
pub struct ArtifactPaths;

impl ArtifactPaths {
    pub fn visits(out: &Path) -> PathBuf {
        out.join("visits.jsonl")
    }
    pub fn triples(out: &Path) -> PathBuf {
        out.join("triples.tsv")
    }
    pub fn kg_edges(out: &Path) -> PathBuf {
        out.join("kg_edges.tsv")
    }
    pub fn kg_communities(out: &Path) -> PathBuf {
        out.join("kg_communities.json")
    }
    pub fn kg_summaries(out: &Path) -> PathBuf {
        out.join("kg_summaries.jsonl")
    }
    pub fn m1_outputs(out: &Path) -> PathBuf {
        out.join("m1_outputs.jsonl")
    }
    pub fn m1_failures(out: &Path) -> PathBuf {
        out.join("m1_failures.json")
    }
    pub fn retrieval_log(out: &Path) -> PathBuf {
        out.join("m1_retrieval_log.json")
    }
    pub fn features(out: &Path) -> PathBuf {
        out.join("features.json")
    }
    pub fn model(out: &Path) -> PathBuf {
        out.join("model.json")
    }
    pub fn train_report(out: &Path) -> PathBuf {
        out.join("train_report.json")
    }
    pub fn metrics_json(out: &Path) -> PathBuf {
        out.join("metrics.json")
    }
    pub fn metrics_csv(out: &Path) -> PathBuf {
        out.join("metrics.csv")
    }
    pub fn distribution(out: &Path) -> PathBuf {
        out.join("probability_distribution.csv")
    }
    pub fn importance(out: &Path) -> PathBuf {
        out.join("permutation_importance.json")
    }
    pub fn audit(out: &Path) -> PathBuf {
        out.join("audit_report.json")
    }
    pub fn ablation_json(out: &Path) -> PathBuf {
        out.join("ablation.json")
    }
    pub fn ablation_csv(out: &Path) -> PathBuf {
        out.join("ablation.csv")
    }
}

/// Resolve the completion backend from config, flags, and environment.
pub fn build_llm(config: &RunConfig) -> Result<Box<dyn CompletionClient>, PipelineError> {
    if config.llm.mock {
        return Ok(Box::new(MockLlm::new(MockScript::risk_narrative(config.seed))));
    }
    let endpoint = config
        .llm
        .endpoint
        .clone()
        .or_else(|| std::env::var(LLM_ENDPOINT_ENV).ok())
        .ok_or_else(|| {
            PipelineError::Config(format!(
                "llm.mock is false but no endpoint was given (flag, config, or {LLM_ENDPOINT_ENV})"
            ))
        })?;
    let auth_header = std::env::var(LLM_API_KEY_ENV)
        .ok()
        .map(|key| ("authorization".to_string(), format!("Bearer {key}")));
    let http = HttpLlm::new(HttpConfig {
        endpoint,
        model: config.llm.model.clone().unwrap_or_else(|| "default".to_string()),
        timeout: std::time::Duration::from_secs(config.llm.timeout_secs),
        auth_header,
    })
    .map_err(|e| PipelineError::Outage(e.to_string()))?;
    Ok(Box::new(RetryingClient::new(
        http,
        RetryPolicy { max_attempts: config.llm.retries.max(1), ..Default::default() },
    )))
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig, PipelineError> {
    match path {
        Some(p) => Ok(load_config(p, ParseMode::Strict)?),
        None => Ok(RunConfig::default()),
    }
}

/// Load a config file and apply CLI-level overrides.
pub fn effective_config(
    path: Option<&Path>,
    overrides: &ConfigOverrides,
) -> Result<RunConfig, PipelineError> {
    let mut config = load_run_config(path)?;
    if let Some(task) = overrides.task {
        config.task = task;
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(model) = &overrides.model {
        if !matches!(model.as_str(), "logreg" | "brf" | "mlp") {
            return Err(PipelineError::Config(format!(
                "model must be logreg|brf|mlp, got '{model}'"
            )));
        }
        config.model.kind = model.clone();
    }
    if overrides.mock_llm {
        config.llm.mock = true;
    }
    if let Some(endpoint) = &overrides.llm_endpoint {
        config.llm.mock = false;
        config.llm.endpoint = Some(endpoint.clone());
    }
    Ok(config)
}

#[derive(Debug, Default, Clone)]
pub struct ConfigOverrides {
    pub task: Option<Task>,
    pub seed: Option<u64>,
    pub model: Option<String>,
    pub mock_llm: bool,
    pub llm_endpoint: Option<String>,
}

fn ensure_out(out: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

// --- Stage: datagen -----------------------------------------------------

pub fn cmd_datagen(config: &RunConfig, out: &Path) -> Result<RunManifest, PipelineError> {
    ensure_out(out)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new("datagen", config);

    let spec = CohortSpec {
        n_patients: config.data.n_patients,
        positive_rate: config.data.positive_rate,
        seed: config.seed,
        planted_signal_strength: config.data.signal_strength,
        task: config.task,
    };
    let visits = make_synthetic_cohort(&spec).map_err(|e| PipelineError::Config(e.to_string()))?;
    let report = validate_dataset(&visits);
    if !report.is_valid() {
        return Err(PipelineError::Runtime(format!(
            "generated cohort failed validation: {:?}",
            report.violations
        )));
    }
    let visits_path = ArtifactPaths::visits(out);
    write_visits(&visits_path, &visits)?;
    manifest.record_artifact(&visits_path)?;

    let triples = make_synthetic_triples(config.seed);
    let triples_path = ArtifactPaths::triples(out);
    write_triples(&triples_path, &triples)?;
    manifest.record_artifact(&triples_path)?;

    manifest.timings_ms.insert("total".to_string(), started.elapsed().as_millis());
    manifest.write(out)?;
    Ok(manifest)
}

// --- Stage: ingest ------------------------------------------------------

#[derive(Debug, Serialize)]
struct IngestSummary {
    visits: usize,
    visit_parse_errors: usize,
    triples: usize,
    triple_parse_errors: usize,
    validation_violations: usize,
}

pub fn cmd_ingest(config: &RunConfig, out: &Path) -> Result<RunManifest, PipelineError> {
    ensure_out(out)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new("ingest", config);

    let visits_path = config
        .data
        .visits_path
        .clone()
        .unwrap_or_else(|| ArtifactPaths::visits(out));
    let triples_path = config
        .data
        .triples_path
        .clone()
        .unwrap_or_else(|| ArtifactPaths::triples(out));
    for path in [&visits_path, &triples_path] {
        if !path.exists() {
            return Err(PipelineError::Config(format!("input not found: {}", path.display())));
        }
        manifest.record_input(path)?;
    }

    let (visits, visit_errors) = parse_visits(&visits_path, ParseMode::Lenient)?;
    let validation = validate_dataset(&visits);
    let (triples, triple_errors) = parse_triples(&triples_path, ParseMode::Lenient)?;

    let canonical_visits = out.join("visits_canonical.jsonl");
    write_visits(&canonical_visits, &visits)?;
    manifest.record_artifact(&canonical_visits)?;

    // Canonical triples keep multiplicity by line repetition.
    let mut canonical_rows = Vec::new();
    for t in &triples {
        for _ in 0..t.multiplicity {
            canonical_rows.push((
                t.subject.clone(),
                t.relation.clone(),
                t.object.clone(),
                t.source_id.clone(),
            ));
        }
    }
    let canonical_triples = out.join("triples_canonical.tsv");
    write_triples(&canonical_triples, &canonical_rows)?;
    manifest.record_artifact(&canonical_triples)?;

    let report_path = out.join("validation_report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "summary": IngestSummary {
                visits: visits.len(),
                visit_parse_errors: visit_errors.len(),
                triples: triples.len(),
                triple_parse_errors: triple_errors.len(),
                validation_violations: validation.violations.len(),
            },
            "visit_parse_errors": visit_errors,
            "triple_parse_errors": triple_errors,
            "violations": validation.violations,
        }))
        .expect("report serializes"),
    )?;
    manifest.record_artifact(&report_path)?;

    manifest.timings_ms.insert("total".to_string(), started.elapsed().as_millis());
    manifest.write(out)?;
    Ok(manifest)
}

// --- Shared loading -----------------------------------------------------

pub struct LoadedCohort {
    pub store: CohortStore,
    pub split: DatasetSplit,
    pub labeled_keys: Vec<VisitKey>,
    pub train_keys: Vec<VisitKey>,
    pub test_keys: Vec<VisitKey>,
}

pub fn load_cohort(config: &RunConfig, out: &Path) -> Result<LoadedCohort, PipelineError> {
    let visits_path = config
        .data
        .visits_path
        .clone()
        .unwrap_or_else(|| ArtifactPaths::visits(out));
    if !visits_path.exists() {
        return Err(PipelineError::Config(format!(
            "cohort file not found: {} (run datagen or set data.visits_path)",
            visits_path.display()
        )));
    }
    let (visits, errors) = parse_visits(&visits_path, ParseMode::Lenient)?;
    if !errors.is_empty() {
        log::warn!("{} unparseable visit lines skipped", errors.len());
    }
    if visits.is_empty() {
        return Err(PipelineError::Config("cohort file contains no visits".to_string()));
    }
    let labeled: Vec<_> =
        visits.iter().filter(|v| v.label(config.task).is_some()).cloned().collect();
    if labeled.is_empty() {
        return Err(PipelineError::Config(format!(
            "no visits carry a {} label",
            config.task
        )));
    }
    let split = split_patient_disjoint(&labeled, config.data.train_fraction, config.seed)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let labeled_keys: Vec<VisitKey> = labeled.iter().map(|v| v.key()).collect();
    let train_keys: Vec<VisitKey> = split.train_ids.iter().cloned().collect();
    let test_keys: Vec<VisitKey> = split.test_ids.iter().cloned().collect();
    Ok(LoadedCohort {
        store: CohortStore::new(visits),
        split,
        labeled_keys,
        train_keys,
        test_keys,
    })
}

fn load_triples(config: &RunConfig, out: &Path) -> Result<Vec<TripleRecord>, PipelineError> {
    let triples_path = config
        .data
        .triples_path
        .clone()
        .unwrap_or_else(|| ArtifactPaths::triples(out));
    if !triples_path.exists() {
        return Err(PipelineError::Config(format!(
            "triples file not found: {} (run datagen or set data.triples_path)",
            triples_path.display()
        )));
    }
    let (triples, errors) = parse_triples(&triples_path, ParseMode::Lenient)?;
    if !errors.is_empty() {
        log::warn!("{} unparseable triple lines skipped", errors.len());
    }
    Ok(triples)
}

/// Build the concept graph from train-side concepts and summarize its
/// Leiden communities.
pub fn build_kg_summaries(
    cohort: &LoadedCohort,
    triples: &[TripleRecord],
    config: &RunConfig,
    llm: &dyn CompletionClient,
) -> Result<Vec<CommunitySummary>, PipelineError> {
    // Lexicon: structured-field concepts seen on the train side plus the
    // generator vocabulary.
    let mut phrases: Vec<String> = synthetic_vocabulary();
    for key in &cohort.train_keys {
        if let Some(visit) = cohort.store.visit(key, Phase::Fit) {
            phrases.extend(visit.procedures.iter().cloned());
            phrases.extend(visit.medications.iter().cloned());
        }
    }
    let lexicon = ConceptLexicon::new(phrases);

    let mut concepts = std::collections::BTreeSet::new();
    for key in &cohort.train_keys {
        if let Some(visit) = cohort.store.visit(key, Phase::Fit) {
            for item in visit.procedures.iter().chain(visit.medications.iter()) {
                concepts.insert(item.to_lowercase());
            }
            for note in &visit.notes {
                concepts.extend(extract_concepts(&note.text, &lexicon));
            }
        }
    }

    let graph = build_graph(triples, &concepts);
    if graph.is_empty() {
        log::warn!("knowledge graph is empty after concept filtering");
        return Ok(Vec::new());
    }
    let partition =
        leiden_partition(&graph, config.kg.resolution, config.seed, config.kg.restarts)?;
    let outcome =
        summarize_communities(&partition, &graph, llm, config.retrieval.embed_dim)?;
    for (community, error) in &outcome.failures {
        log::warn!("community {community} summary failed: {error}");
    }
    Ok(outcome.summaries)
}

// --- Stage: kg ----------------------------------------------------------

pub fn cmd_kg(config: &RunConfig, out: &Path) -> Result<RunManifest, PipelineError> {
    ensure_out(out)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new("kg", config);
    let cohort = load_cohort(config, out)?;
    let triples = load_triples(config, out)?;
    let llm = build_llm(config)?;

    // Rebuild the graph here for the export artifacts.
    let mut phrases: Vec<String> = synthetic_vocabulary();
    for key in &cohort.train_keys {
        if let Some(visit) = cohort.store.visit(key, Phase::Fit) {
            phrases.extend(visit.procedures.iter().cloned());
            phrases.extend(visit.medications.iter().cloned());
        }
    }
    let lexicon = ConceptLexicon::new(phrases);
    let mut concepts = std::collections::BTreeSet::new();
    for key in &cohort.train_keys {
        if let Some(visit) = cohort.store.visit(key, Phase::Fit) {
            for item in visit.procedures.iter().chain(visit.medications.iter()) {
                concepts.insert(item.to_lowercase());
            }
            for note in &visit.notes {
                concepts.extend(extract_concepts(&note.text, &lexicon));
            }
        }
    }
    let graph = build_graph(&triples, &concepts);
    if graph.is_empty() {
        return Err(PipelineError::Runtime(
            "knowledge graph is empty after concept filtering".to_string(),
        ));
    }
    let partition =
        leiden_partition(&graph, config.kg.resolution, config.seed, config.kg.restarts)?;

    let edges_path = ArtifactPaths::kg_edges(out);
    std::fs::write(&edges_path, graph.render_edge_list())?;
    manifest.record_artifact(&edges_path)?;

    let communities_path = ArtifactPaths::kg_communities(out);
    std::fs::write(
        &communities_path,
        serde_json::to_string_pretty(&partition).expect("partition serializes"),
    )?;
    manifest.record_artifact(&communities_path)?;

    let outcome = summarize_communities(&partition, &graph, llm.as_ref(), config.retrieval.embed_dim)?;
    let summaries_path = ArtifactPaths::kg_summaries(out);
    let mut text = String::new();
    for summary in &outcome.summaries {
        text.push_str(&serde_json::to_string(summary).expect("summary serializes"));
        text.push('\n');
    }
    std::fs::write(&summaries_path, text)?;
    manifest.record_artifact(&summaries_path)?;

    manifest.timings_ms.insert("total".to_string(), started.elapsed().as_millis());
    manifest.write(out)?;
    Ok(manifest)
}

fn read_kg_summaries(path: &Path) -> Result<Vec<CommunitySummary>, PipelineError> {
    let data = std::fs::read_to_string(path)?;
    data.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| PipelineError::Runtime(format!("bad summary row: {e}")))
        })
        .collect()
}

// --- Stage: m1 ----------------------------------------------------------

fn m1_config(config: &RunConfig) -> M1Config {
    M1Config {
        k: config.retrieval.k,
        pool: config.retrieval.pool,
        k_communities: config.kg.k_communities,
        char_budget: config.context.char_budget,
        summary_chunk_chars: config.context.summary_chunk_chars,
        max_tokens: config.llm.max_tokens,
        temperature: config.llm.temperature,
        fallback_label: None,
        outage_threshold: config.llm.outage_threshold,
        snapshot_chars: 600,
    }
}

pub fn cmd_m1(config: &RunConfig, out: &Path) -> Result<RunManifest, PipelineError> {
    ensure_out(out)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new("m1", config);
    let cohort = load_cohort(config, out)?;
    let triples = load_triples(config, out)?;
    let llm = build_llm(config)?;

    let summaries = if ArtifactPaths::kg_summaries(out).exists() {
        read_kg_summaries(&ArtifactPaths::kg_summaries(out))?
    } else {
        build_kg_summaries(&cohort, &triples, config, llm.as_ref())?
    };

    let embedder = HashEmbedder::new(config.retrieval.embed_dim);
    let index = build_index(&cohort.store, &cohort.train_keys, config.task, &embedder)?;
    let outcome = run_m1(
        &cohort.store,
        &cohort.labeled_keys,
        config.task,
        &index,
        &summaries,
        llm.as_ref(),
        &embedder,
        &m1_config(config),
    )?;

    let outputs_path = ArtifactPaths::m1_outputs(out);
    write_m1_outputs(&outputs_path, &outcome.outputs)?;
    manifest.record_artifact(&outputs_path)?;

    let failures_path = ArtifactPaths::m1_failures(out);
    std::fs::write(
        &failures_path,
        serde_json::to_string_pretty(
            &outcome
                .failures
                .iter()
                .map(|(k, e)| (k.to_string(), e.clone()))
                .collect::<Vec<_>>(),
        )
        .expect("failures serialize"),
    )?;
    manifest.record_artifact(&failures_path)?;

    let log_path = ArtifactPaths::retrieval_log(out);
    std::fs::write(
        &log_path,
        serde_json::to_string_pretty(
            &outcome
                .retrieval_log
                .iter()
                .map(|(k, ns)| (k.to_string(), ns.iter().map(|n| n.to_string()).collect::<Vec<_>>()))
                .collect::<BTreeMap<_, _>>(),
        )
        .expect("log serializes"),
    )?;
    manifest.record_artifact(&log_path)?;

    if !outcome.failures.is_empty() {
        eprintln!(
            "m1: {} of {} visits fell back ({} see {})",
            outcome.failures.len(),
            outcome.outputs.len(),
            outcome.failures[0].1,
            failures_path.display()
        );
    }

    manifest.timings_ms.insert("total".to_string(), started.elapsed().as_millis());
    manifest.write(out)?;
    Ok(manifest)
}

// --- Stage: train -------------------------------------------------------

fn feature_fit_config(config: &RunConfig, toggles: AblationToggles) -> FeatureFitConfig {
    FeatureFitConfig {
        w2v: WordEmbedParams {
            dim: config.features.w2v_dim,
            window: config.features.w2v_window,
            negatives: config.features.w2v_negatives,
            epochs: config.features.w2v_epochs,
            seed: config.seed,
            learning_rate: config.features.w2v_lr,
        },
        pca: match config.features.pca.as_str() {
            "none" => None,
            "fixed" => Some(PcaSelection::Fixed(config.features.pca_max_components)),
            _ => Some(PcaSelection::VarianceTarget {
                target: config.features.pca_variance,
                max_components: config.features.pca_max_components,
            }),
        },
        toggles,
    }
}

/// Train the configured model on model-space rows, applying SMOTE when
/// enabled (defaults: on for the MLP, off elsewhere).
pub fn train_model(
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
    config: &RunConfig,
    seed: u64,
) -> Result<Model, PipelineError> {
    let use_smote = config.model.smote.unwrap_or(config.model.kind == "mlp");
    let (rows, labels) = if use_smote {
        smote(
            &rows,
            &labels,
            &SmoteConfig {
                k_neighbors: config.model.smote_k,
                target_ratio: config.model.smote_ratio,
                seed,
            },
        )?
    } else {
        (rows, labels)
    };
    Ok(match config.model.kind.as_str() {
        "logreg" => Model::LogReg(train_logreg(&rows, &labels, config.model.logreg_c, seed)?),
        "mlp" => Model::Mlp(train_mlp(
            &rows,
            &labels,
            &MlpConfig {
                hidden: config.model.mlp_hidden.clone(),
                learning_rate: config.model.mlp_lr,
                epochs: config.model.mlp_epochs,
                seed,
                ..Default::default()
            },
        )?),
        _ => Model::Forest(train_balanced_forest(
            &rows,
            &labels,
            &ForestConfig {
                n_trees: config.model.n_trees,
                max_depth: config.model.max_depth,
                min_leaf: config.model.min_leaf,
                seed,
                ..Default::default()
            },
        )?),
    })
}

fn load_m1_outputs(
    config: &RunConfig,
    out: &Path,
) -> Result<BTreeMap<VisitKey, LLMOutput>, PipelineError> {
    let path = ArtifactPaths::m1_outputs(out);
    if !path.exists() {
        return Err(PipelineError::Config(format!(
            "M1 handoff not found: {} (run the m1 stage first, or disable the M1 blocks \
             via the ablation toggles)",
            path.display()
        )));
    }
    let _ = config;
    Ok(read_m1_outputs(&path)?)
}

fn train_labels(
    cohort: &LoadedCohort,
    task: Task,
) -> (Vec<VisitKey>, Vec<u8>) {
    let mut keys = Vec::new();
    let mut labels = Vec::new();
    for key in &cohort.train_keys {
        if let Some(label) = cohort.store.label(key, task, Phase::Fit) {
            keys.push(key.clone());
            labels.push(label);
        }
    }
    (keys, labels)
}

pub fn cmd_train(config: &RunConfig, out: &Path) -> Result<RunManifest, PipelineError> {
    ensure_out(out)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new("train", config);
    let cohort = load_cohort(config, out)?;
    let m1_outputs = load_m1_outputs(config, out)?;

    let fit_config = feature_fit_config(config, AblationToggles::default());
    let fitted = FittedFeatures::fit(&cohort.store, &cohort.train_keys, &m1_outputs, &fit_config)?;

    let (train_keys, labels) = train_labels(&cohort, config.task);
    let (_, rows) = fitted.transform(&cohort.store, &train_keys, &m1_outputs, Phase::Fit)?;
    let model = train_model(rows.clone(), labels.clone(), config, config.seed)?;

    let scores = model.predict_many(&rows)?;
    let (threshold, _) = youden_threshold(&labels, &scores)
        .map_err(|e| PipelineError::Runtime(e.to_string()))?;
    let report = evaluate_scores(&labels, &scores, threshold)?;

    let features_path = ArtifactPaths::features(out);
    std::fs::write(&features_path, serde_json::to_string(&fitted).expect("features serialize"))?;
    manifest.record_artifact(&features_path)?;

    let model_path = ArtifactPaths::model(out);
    model.save(&model_path)?;
    manifest.record_artifact(&model_path)?;

    let report_path = ArtifactPaths::train_report(out);
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    manifest.record_artifact(&report_path)?;

    manifest.timings_ms.insert("total".to_string(), started.elapsed().as_millis());
    manifest.write(out)?;
    Ok(manifest)
}

// --- Stage: evaluate ----------------------------------------------------

pub fn cmd_evaluate(config: &RunConfig, out: &Path) -> Result<RunManifest, PipelineError> {
    ensure_out(out)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new("evaluate", config);
    let cohort = load_cohort(config, out)?;
    let m1_outputs = load_m1_outputs(config, out)?;

    let features_path = ArtifactPaths::features(out);
    let model_path = ArtifactPaths::model(out);
    for path in [&features_path, &model_path] {
        if !path.exists() {
            return Err(PipelineError::Config(format!(
                "trained artifact not found: {} (run the train stage first)",
                path.display()
            )));
        }
        manifest.record_input(path)?;
    }
    let fitted: FittedFeatures = serde_json::from_str(&std::fs::read_to_string(&features_path)?)
        .map_err(|e| PipelineError::Runtime(format!("features artifact malformed: {e}")))?;
    let model = Model::load(&model_path)?;

    let (fused, rows) =
        fitted.transform(&cohort.store, &cohort.test_keys, &m1_outputs, Phase::Transform)?;
    let scores = model.predict_many(&rows)?;
    let labels: Vec<u8> = cohort
        .test_keys
        .iter()
        .map(|k| cohort.store.label(k, config.task, Phase::Evaluate).unwrap_or(0))
        .collect();

    let (threshold, report) = match youden_threshold(&labels, &scores) {
        Ok((threshold, _)) => (threshold, evaluate_scores(&labels, &scores, threshold)?),
        Err(crate::eval::EvalError::SingleClass) => {
            log::warn!("test slice is single-class; thresholding at 0.5, AUROC null");
            (0.5, evaluate_scores(&labels, &scores, 0.5)?)
        }
        Err(e) => return Err(e.into()),
    };

    let metrics_path = ArtifactPaths::metrics_json(out);
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    manifest.record_artifact(&metrics_path)?;

    let csv_path = ArtifactPaths::metrics_csv(out);
    std::fs::write(&csv_path, format!("{REPORT_CSV_HEADER}\n{}\n", report_csv_row(&report)))?;
    manifest.record_artifact(&csv_path)?;

    let dist_path = ArtifactPaths::distribution(out);
    export_probability_distribution(&labels, &scores, threshold, &dist_path)?;
    manifest.record_artifact(&dist_path)?;

    // Block-level permutation importance on the test fused rows.
    if fitted.shape.offsets().blocks.len() > 1 {
        let fused_values: Vec<Vec<f64>> = fused.iter().map(|f| f.values.clone()).collect();
        let offsets = fitted.shape.offsets();
        let score_fn = |rows: &[Vec<f64>]| -> Vec<f64> {
            rows.iter()
                .map(|r| {
                    let projected = fitted.project(r).expect("projection succeeds");
                    model.predict_proba(&projected).expect("dims match")
                })
                .collect()
        };
        match permutation_importance(&score_fn, &fused_values, &labels, &offsets, 5, config.seed) {
            Ok(importances) => {
                let path = ArtifactPaths::importance(out);
                std::fs::write(
                    &path,
                    serde_json::to_string_pretty(&importances).expect("importances serialize"),
                )?;
                manifest.record_artifact(&path)?;
            }
            Err(e) => log::warn!("permutation importance skipped: {e}"),
        }
    }

    let audit = cohort.store.audit(&cohort.split);
    let audit_path = ArtifactPaths::audit(out);
    std::fs::write(&audit_path, serde_json::to_string_pretty(&audit).expect("audit serializes"))?;
    manifest.record_artifact(&audit_path)?;
    if !audit.is_clean() {
        return Err(PipelineError::Runtime(format!(
            "leakage audit failed: {audit:?}"
        )));
    }

    manifest.timings_ms.insert("total".to_string(), started.elapsed().as_millis());
    manifest.write(out)?;
    Ok(manifest)
}

// --- Stage: ablate ------------------------------------------------------

/// Refit features and model for one toggle set and evaluate on the fixed
/// test split.
pub fn fit_eval_toggles(
    cohort: &LoadedCohort,
    m1_outputs: &BTreeMap<VisitKey, LLMOutput>,
    config: &RunConfig,
    toggles: AblationToggles,
    seed: u64,
) -> Result<MetricReport, PipelineError> {
    let fit_config = feature_fit_config(config, toggles);
    let fitted = FittedFeatures::fit(&cohort.store, &cohort.train_keys, m1_outputs, &fit_config)?;
    let (train_keys, labels) = train_labels(cohort, config.task);
    let (_, rows) = fitted.transform(&cohort.store, &train_keys, m1_outputs, Phase::Fit)?;
    let model = train_model(rows, labels, config, seed)?;

    let (_, test_rows) =
        fitted.transform(&cohort.store, &cohort.test_keys, m1_outputs, Phase::Transform)?;
    let scores = model.predict_many(&test_rows)?;
    let test_labels: Vec<u8> = cohort
        .test_keys
        .iter()
        .map(|k| cohort.store.label(k, config.task, Phase::Evaluate).unwrap_or(0))
        .collect();
    let (threshold, _) = youden_threshold(&test_labels, &scores)
        .map_err(|e| PipelineError::Runtime(e.to_string()))?;
    Ok(evaluate_scores(&test_labels, &scores, threshold)?)
}

pub fn cmd_ablate(config: &RunConfig, out: &Path) -> Result<RunManifest, PipelineError> {
    ensure_out(out)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new("ablate", config);
    let cohort = load_cohort(config, out)?;
    let m1_outputs = load_m1_outputs(config, out)?;

    let specs = default_ablation_specs();
    let rows: Vec<AblationRow> = run_ablation(&specs, |toggles| {
        fit_eval_toggles(&cohort, &m1_outputs, config, *toggles, config.seed)
            .map_err(|e| e.to_string())
    });

    let json_path = ArtifactPaths::ablation_json(out);
    std::fs::write(&json_path, serde_json::to_string_pretty(&rows).expect("rows serialize"))?;
    manifest.record_artifact(&json_path)?;

    let mut csv = format!("variant,{REPORT_CSV_HEADER}\n");
    for row in &rows {
        match &row.outcome {
            Ok(report) => csv.push_str(&format!("{},{}\n", row.label, report_csv_row(report))),
            Err(e) => csv.push_str(&format!("{},error: {e}\n", row.label)),
        }
    }
    let csv_path = ArtifactPaths::ablation_csv(out);
    std::fs::write(&csv_path, csv)?;
    manifest.record_artifact(&csv_path)?;

    manifest.timings_ms.insert("total".to_string(), started.elapsed().as_millis());
    manifest.write(out)?;
    Ok(manifest)
}

/// Artifacts of an in-process end-to-end run, including the leakage
/// audit over the shared store.
pub struct EndToEndRun {
    pub report: MetricReport,
    pub audit: AuditReport,
    pub retrieval_log: BTreeMap<VisitKey, Vec<VisitKey>>,
    pub m1_outputs: BTreeMap<VisitKey, LLMOutput>,
    pub importances: Vec<BlockImportance>,
    pub test_scores: Vec<f64>,
    pub test_labels: Vec<u8>,
    pub fused_test: Vec<FusedVector>,
}

/// Full pipeline in one process over one shared access-logged store:
/// datagen (in memory), kg, m1, feature fit, train, evaluate, audit.
pub fn run_end_to_end(config: &RunConfig, out: &Path) -> Result<EndToEndRun, PipelineError> {
    ensure_out(out)?;
    cmd_datagen(config, out)?;
    let cohort = load_cohort(config, out)?;
    let triples = load_triples(config, out)?;
    let llm = build_llm(config)?;

    let summaries = build_kg_summaries(&cohort, &triples, config, llm.as_ref())?;
    let embedder = HashEmbedder::new(config.retrieval.embed_dim);
    let index = build_index(&cohort.store, &cohort.train_keys, config.task, &embedder)?;
    let m1 = run_m1(
        &cohort.store,
        &cohort.labeled_keys,
        config.task,
        &index,
        &summaries,
        llm.as_ref(),
        &embedder,
        &m1_config(config),
    )?;

    let fit_config = feature_fit_config(config, AblationToggles::default());
    let fitted = FittedFeatures::fit(&cohort.store, &cohort.train_keys, &m1.outputs, &fit_config)?;
    let (train_keys, labels) = train_labels(&cohort, config.task);
    let (_, rows) = fitted.transform(&cohort.store, &train_keys, &m1.outputs, Phase::Fit)?;
    let model = train_model(rows, labels, config, config.seed)?;

    let (fused_test, test_rows) =
        fitted.transform(&cohort.store, &cohort.test_keys, &m1.outputs, Phase::Transform)?;
    let test_scores = model.predict_many(&test_rows)?;
    let test_labels: Vec<u8> = cohort
        .test_keys
        .iter()
        .map(|k| cohort.store.label(k, config.task, Phase::Evaluate).unwrap_or(0))
        .collect();
    let (threshold, _) = youden_threshold(&test_labels, &test_scores)
        .map_err(|e| PipelineError::Runtime(e.to_string()))?;
    let report = evaluate_scores(&test_labels, &test_scores, threshold)?;

    let fused_values: Vec<Vec<f64>> = fused_test.iter().map(|f| f.values.clone()).collect();
    let offsets = fitted.shape.offsets();
    let score_fn = |rows: &[Vec<f64>]| -> Vec<f64> {
        rows.iter()
            .map(|r| {
                let projected = fitted.project(r).expect("projection succeeds");
                model.predict_proba(&projected).expect("dims match")
            })
            .collect()
    };
    let importances =
        permutation_importance(&score_fn, &fused_values, &test_labels, &offsets, 5, config.seed)
            .unwrap_or_default();

    let audit = cohort.store.audit(&cohort.split);
    Ok(EndToEndRun {
        report,
        audit,
        retrieval_log: m1.retrieval_log,
        m1_outputs: m1.outputs,
        importances,
        test_scores,
        test_labels,
        fused_test,
    })
}

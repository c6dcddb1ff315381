//! File-format boundary: JSON-lines visits, TSV knowledge triples,
//! per-channel CSV time-series, and the TOML run configuration.
//!
//! Parsing is total: every input line yields either a record or a
//! line-numbered error, and lenient mode collects errors instead of
//! aborting the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{PatientVisit, Task};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("config error: {0}")]
    Config(String),
}

/// One located parse failure in lenient mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

/// Strict aborts on the first bad line; lenient collects errors and keeps
/// the good records. Bulk corpora default to lenient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

fn read_to_string(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|e| IngestError::Io { path: path.to_path_buf(), source: e })
}

/// Parse a JSON-lines visit file. Field names match the data model
/// exactly; timestamps are RFC-3339.
pub fn parse_visits(
    path: &Path,
    mode: ParseMode,
) -> Result<(Vec<PatientVisit>, Vec<LineError>), IngestError> {
    let data = read_to_string(path)?;
    let mut visits = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PatientVisit>(line) {
            Ok(v) => visits.push(v),
            Err(e) => {
                let err = LineError { line: i + 1, reason: e.to_string() };
                if mode == ParseMode::Strict {
                    return Err(IngestError::Parse {
                        path: path.to_path_buf(),
                        line: err.line,
                        reason: err.reason,
                    });
                }
                errors.push(err);
            }
        }
    }
    Ok((visits, errors))
}

/// Serialize visits as JSON-lines, one visit per line, in input order.
pub fn write_visits(path: &Path, visits: &[PatientVisit]) -> Result<(), IngestError> {
    let mut out = String::new();
    for v in visits {
        out.push_str(&serde_json::to_string(v).expect("visit serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| IngestError::Io { path: path.to_path_buf(), source: e })
}

/// One canonicalized knowledge triple with its retained multiplicity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripleRecord {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub source_id: String,
    pub multiplicity: u32,
}

/// Parse a TSV triples file (`subject<TAB>relation<TAB>object<TAB>source_id`,
/// no header). Text is trimmed, whitespace-normalized, and lowercased;
/// duplicate `(s, r, o)` collapse with multiplicity retained.
pub fn parse_triples(
    path: &Path,
    mode: ParseMode,
) -> Result<(Vec<TripleRecord>, Vec<LineError>), IngestError> {
    let data = read_to_string(path)?;
    let mut merged: BTreeMap<(String, String, String), TripleRecord> = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let fail = |reason: String| LineError { line: i + 1, reason };
        if fields.len() != 4 {
            let err = fail(format!("expected 4 tab-separated columns, got {}", fields.len()));
            if mode == ParseMode::Strict {
                return Err(IngestError::Parse {
                    path: path.to_path_buf(),
                    line: err.line,
                    reason: err.reason,
                });
            }
            errors.push(err);
            continue;
        }
        let canon = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let (s, r, o) = (canon(fields[0]), canon(fields[1]), canon(fields[2]));
        if s.is_empty() || r.is_empty() || o.is_empty() {
            let err = fail("empty subject, relation, or object after trimming".to_string());
            if mode == ParseMode::Strict {
                return Err(IngestError::Parse {
                    path: path.to_path_buf(),
                    line: err.line,
                    reason: err.reason,
                });
            }
            errors.push(err);
            continue;
        }
        merged
            .entry((s.clone(), r.clone(), o.clone()))
            .and_modify(|t| t.multiplicity += 1)
            .or_insert(TripleRecord {
                subject: s,
                relation: r,
                object: o,
                source_id: fields[3].trim().to_string(),
                multiplicity: 1,
            });
    }
    Ok((merged.into_values().collect(), errors))
}

pub fn write_triples(
    path: &Path,
    triples: &[(String, String, String, String)],
) -> Result<(), IngestError> {
    let mut out = String::new();
    for (s, r, o, src) in triples {
        out.push_str(&format!("{s}\t{r}\t{o}\t{src}\n"));
    }
    std::fs::write(path, out).map_err(|e| IngestError::Io { path: path.to_path_buf(), source: e })
}

/// Parse one per-channel CSV (`timestamp,value` header row required).
pub fn parse_channel_csv(path: &Path) -> Result<Vec<(DateTime<Utc>, f64)>, IngestError> {
    let data = read_to_string(path)?;
    let mut lines = data.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "timestamp,value" => {}
        Some((_, header)) => {
            return Err(IngestError::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("expected header 'timestamp,value', got '{header}'"),
            })
        }
        None => {
            return Err(IngestError::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: "empty file, header row required".to_string(),
            })
        }
    }
    let mut series = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parse = || -> Result<(DateTime<Utc>, f64), String> {
            let (ts, val) = line.split_once(',').ok_or("expected 'timestamp,value'")?;
            let t = DateTime::parse_from_rfc3339(ts.trim())
                .map_err(|e| format!("bad timestamp: {e}"))?
                .with_timezone(&Utc);
            let x: f64 = val.trim().parse().map_err(|e| format!("bad value: {e}"))?;
            Ok((t, x))
        };
        match parse() {
            Ok(pair) => series.push(pair),
            Err(reason) => {
                return Err(IngestError::Parse { path: path.to_path_buf(), line: i + 1, reason })
            }
        }
    }
    Ok(series)
}

/// Attach a parsed channel series to a visit, replacing any existing
/// series under that name.
pub fn attach_channel(visit: &mut PatientVisit, channel: &str, series: Vec<(DateTime<Utc>, f64)>) {
    visit.timeseries.channels.insert(channel.to_string(), series);
}

// --- Run configuration -------------------------------------------------

fn default_seed() -> u64 {
    42
}
fn default_k() -> usize {
    2
}
fn default_pool() -> usize {
    50
}
fn default_embed_dim() -> usize {
    256
}
fn default_resolution() -> f64 {
    1.0
}
fn default_restarts() -> usize {
    4
}
fn default_k_communities() -> usize {
    3
}
fn default_char_budget() -> usize {
    32_768 // 8192-token window at the 4-chars-per-token proxy
}
fn default_chunk_chars() -> usize {
    4000
}
fn default_max_tokens() -> u32 {
    768
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_true() -> bool {
    true
}
fn default_pca_variance() -> f64 {
    0.95
}
fn default_pca_max_components() -> usize {
    128
}
fn default_n_patients() -> usize {
    1000
}
fn default_positive_rate() -> f64 {
    0.04
}
fn default_signal_strength() -> f64 {
    2.0
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_model_kind() -> String {
    "brf".to_string()
}
fn default_n_trees() -> usize {
    100
}
fn default_max_depth() -> usize {
    12
}
fn default_min_leaf() -> usize {
    5
}
fn default_logreg_c() -> f64 {
    1.0
}
fn default_mlp_hidden() -> Vec<usize> {
    vec![32]
}
fn default_mlp_epochs() -> usize {
    30
}
fn default_mlp_lr() -> f64 {
    0.05
}
fn default_smote_k() -> usize {
    5
}
fn default_smote_ratio() -> f64 {
    1.0
}
fn default_w2v_dim() -> usize {
    100
}
fn default_w2v_window() -> usize {
    5
}
fn default_w2v_negatives() -> usize {
    5
}
fn default_w2v_epochs() -> usize {
    3
}
fn default_w2v_lr() -> f64 {
    0.025
}
fn default_outage_threshold() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DataConfig {
    #[serde(default = "default_n_patients")]
    pub n_patients: usize,
    #[serde(default = "default_positive_rate")]
    pub positive_rate: f64,
    #[serde(default = "default_signal_strength")]
    pub signal_strength: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Existing cohort file; when set, datagen is not required.
    #[serde(default)]
    pub visits_path: Option<PathBuf>,
    #[serde(default)]
    pub triples_path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        toml_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RetrievalConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_pool")]
    pub pool: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        toml_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KgConfig {
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_k_communities")]
    pub k_communities: usize,
}

impl Default for KgConfig {
    fn default() -> Self {
        toml_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LlmConfig {
    #[serde(default = "default_true")]
    pub mock: bool,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_outage_threshold")]
    pub outage_threshold: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        toml_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContextConfig {
    #[serde(default = "default_char_budget")]
    pub char_budget: usize,
    #[serde(default = "default_chunk_chars")]
    pub summary_chunk_chars: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        toml_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeatureConfig {
    /// "none" | "variance" | "fixed"
    #[serde(default = "default_pca_mode")]
    pub pca: String,
    #[serde(default = "default_pca_variance")]
    pub pca_variance: f64,
    #[serde(default = "default_pca_max_components")]
    pub pca_max_components: usize,
    #[serde(default = "default_w2v_dim")]
    pub w2v_dim: usize,
    #[serde(default = "default_w2v_window")]
    pub w2v_window: usize,
    #[serde(default = "default_w2v_negatives")]
    pub w2v_negatives: usize,
    #[serde(default = "default_w2v_epochs")]
    pub w2v_epochs: usize,
    #[serde(default = "default_w2v_lr")]
    pub w2v_lr: f64,
}

fn default_pca_mode() -> String {
    "variance".to_string()
}

impl Default for FeatureConfig {
    fn default() -> Self {
        toml_default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// "logreg" | "brf" | "mlp"
    #[serde(default = "default_model_kind")]
    pub kind: String,
    #[serde(default)]
    pub smote: Option<bool>,
    #[serde(default = "default_smote_k")]
    pub smote_k: usize,
    #[serde(default = "default_smote_ratio")]
    pub smote_ratio: f64,
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default = "default_logreg_c")]
    pub logreg_c: f64,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: Vec<usize>,
    #[serde(default = "default_mlp_epochs")]
    pub mlp_epochs: usize,
    #[serde(default = "default_mlp_lr")]
    pub mlp_lr: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        toml_default()
    }
}

/// Fully-resolved run configuration; one file drives every stage.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub kg: KgConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub context: ContextConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

fn default_task() -> Task {
    Task::Readmission
}

impl Default for RunConfig {
    fn default() -> Self {
        toml_default()
    }
}

fn toml_default<T: for<'de> Deserialize<'de>>() -> T {
    toml::from_str("").expect("empty table deserializes to defaults")
}

const KNOWN_SECTIONS: [&str; 9] =
    ["task", "seed", "data", "retrieval", "kg", "llm", "context", "features", "model"];

/// Load and validate a TOML run configuration with defaults applied.
/// Strict mode rejects unknown keys by name.
pub fn load_config(path: &Path, mode: ParseMode) -> Result<RunConfig, IngestError> {
    let data = read_to_string(path)?;
    load_config_str(&data, mode, path.parent())
}

pub fn load_config_str(
    data: &str,
    mode: ParseMode,
    base_dir: Option<&Path>,
) -> Result<RunConfig, IngestError> {
    let value: toml::Value =
        toml::from_str(data).map_err(|e| IngestError::Config(format!("invalid TOML: {e}")))?;
    if mode == ParseMode::Strict {
        if let Some(table) = value.as_table() {
            check_unknown_keys(table, &KNOWN_SECTIONS, "")?;
            for section in KNOWN_SECTIONS.iter().filter(|s| !matches!(**s, "task" | "seed")) {
                if let Some(sub) = table.get(*section).and_then(|v| v.as_table()) {
                    let known = known_keys_for(section);
                    check_unknown_keys(sub, &known, &format!("{section}."))?;
                }
            }
        }
    }
    let mut config: RunConfig =
        value.try_into().map_err(|e: toml::de::Error| IngestError::Config(e.to_string()))?;
    validate_config(&mut config, base_dir)?;
    Ok(config)
}

fn known_keys_for(section: &str) -> Vec<&'static str> {
    match section {
        "data" => vec![
            "n_patients",
            "positive_rate",
            "signal_strength",
            "train_fraction",
            "visits_path",
            "triples_path",
        ],
        "retrieval" => vec!["k", "pool", "embed_dim"],
        "kg" => vec!["resolution", "restarts", "k_communities"],
        "llm" => vec![
            "mock",
            "endpoint",
            "model",
            "max_tokens",
            "temperature",
            "timeout_secs",
            "retries",
            "outage_threshold",
        ],
        "context" => vec!["char_budget", "summary_chunk_chars"],
        "features" => vec![
            "pca",
            "pca_variance",
            "pca_max_components",
            "w2v_dim",
            "w2v_window",
            "w2v_negatives",
            "w2v_epochs",
            "w2v_lr",
        ],
        "model" => vec![
            "kind",
            "smote",
            "smote_k",
            "smote_ratio",
            "n_trees",
            "max_depth",
            "min_leaf",
            "logreg_c",
            "mlp_hidden",
            "mlp_epochs",
            "mlp_lr",
        ],
        _ => vec![],
    }
}

fn check_unknown_keys(
    table: &toml::value::Table,
    known: &[&str],
    prefix: &str,
) -> Result<(), IngestError> {
    for key in table.keys() {
        if !known.contains(&key.as_str()) {
            return Err(IngestError::Config(format!("unknown key '{prefix}{key}'")));
        }
    }
    Ok(())
}

fn validate_config(config: &mut RunConfig, base_dir: Option<&Path>) -> Result<(), IngestError> {
    if !(config.retrieval.k == 1 || config.retrieval.k == 2) {
        return Err(IngestError::Config(format!(
            "retrieval.k must be 1 or 2, got {}",
            config.retrieval.k
        )));
    }
    if config.retrieval.pool < 1 {
        return Err(IngestError::Config("retrieval.pool must be >= 1".to_string()));
    }
    if !(config.data.positive_rate > 0.0 && config.data.positive_rate < 1.0) {
        return Err(IngestError::Config(format!(
            "data.positive_rate must be in (0,1), got {}",
            config.data.positive_rate
        )));
    }
    if !(config.data.train_fraction > 0.0 && config.data.train_fraction < 1.0) {
        return Err(IngestError::Config(format!(
            "data.train_fraction must be in (0,1), got {}",
            config.data.train_fraction
        )));
    }
    if !matches!(config.features.pca.as_str(), "none" | "variance" | "fixed") {
        return Err(IngestError::Config(format!(
            "features.pca must be none|variance|fixed, got '{}'",
            config.features.pca
        )));
    }
    if !matches!(config.model.kind.as_str(), "logreg" | "brf" | "mlp") {
        return Err(IngestError::Config(format!(
            "model.kind must be logreg|brf|mlp, got '{}'",
            config.model.kind
        )));
    }
    for path in [&mut config.data.visits_path, &mut config.data.triples_path] {
        if let Some(p) = path {
            if p.is_relative() {
                if let Some(base) = base_dir {
                    *p = base.join(&*p);
                }
            }
            if !p.exists() {
                return Err(IngestError::Config(format!("path does not exist: {}", p.display())));
            }
        }
    }
    Ok(())
}

/// Effective-config echo for reproducibility: canonical TOML text.
pub fn render_config(config: &RunConfig) -> String {
    toml::to_string_pretty(config).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{make_synthetic_cohort, CohortSpec};

    #[test]
    fn visits_roundtrip_and_parse() {
        let visits = make_synthetic_cohort(&CohortSpec::new(3, 0.3, 8, 1.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("visits.jsonl");
        write_visits(&path, &visits).unwrap();
        let (parsed, errors) = parse_visits(&path, ParseMode::Lenient).unwrap();
        assert!(errors.is_empty());
        assert_eq!(parsed, visits);
        // Round-trip: serialize(parse(x)) == canonical(x).
        let reserialized = dir.path().join("again.jsonl");
        write_visits(&reserialized, &parsed).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&reserialized).unwrap());
    }

    #[test]
    fn bad_visit_line_is_located_and_lenient() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("visits.jsonl");
        let visits = make_synthetic_cohort(&CohortSpec::new(2, 0.3, 1, 1.0)).unwrap();
        let good = serde_json::to_string(&visits[0]).unwrap();
        std::fs::write(&path, format!("{good}\n{{\"visit_seq\": 0}}\n{good}\n")).unwrap();
        let (parsed, errors) = parse_visits(&path, ParseMode::Lenient).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].line, 2);
        assert!(errors[0].reason.contains("patient_id"));
        assert!(matches!(
            parse_visits(&path, ParseMode::Strict),
            Err(IngestError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_visit_file_parses_to_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("visits.jsonl");
        std::fs::write(&path, "").unwrap();
        let (parsed, errors) = parse_visits(&path, ParseMode::Lenient).unwrap();
        assert!(parsed.is_empty());
        assert!(errors.is_empty());
    }

    #[test]
    fn triple_line_parses_canonically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("triples.tsv");
        std::fs::write(
            &path,
            "Unstable  Angina Pectoris\ttreated WITH\tbeta blocking agents\tpm1\n",
        )
        .unwrap();
        let (triples, errors) = parse_triples(&path, ParseMode::Lenient).unwrap();
        assert!(errors.is_empty());
        assert_eq!(triples.len(), 1);
        assert_eq!(triples[0].subject, "unstable angina pectoris");
        assert_eq!(triples[0].relation, "treated with");
        assert_eq!(triples[0].object, "beta blocking agents");
        assert_eq!(triples[0].multiplicity, 1);
    }

    #[test]
    fn duplicate_triples_collapse_with_multiplicity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("triples.tsv");
        std::fs::write(&path, "a\trel\tb\tpm1\nA \trel\t b\tpm2\n").unwrap();
        let (triples, _) = parse_triples(&path, ParseMode::Lenient).unwrap();
        assert_eq!(triples.len(), 1);
        assert_eq!(triples[0].multiplicity, 2);
    }

    #[test]
    fn wrong_column_count_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("triples.tsv");
        std::fs::write(&path, "only\ttwo\n").unwrap();
        let (_, errors) = parse_triples(&path, ParseMode::Lenient).unwrap();
        assert_eq!(errors.len(), 1);
        assert!(errors[0].reason.contains("2"));
        assert!(matches!(
            parse_triples(&path, ParseMode::Strict),
            Err(IngestError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let config = load_config_str("task = \"mortality\"", ParseMode::Strict, None).unwrap();
        assert_eq!(config.task, Task::Mortality);
        assert_eq!(config.retrieval.k, 2);
        assert_eq!(config.seed, 42);
        assert_eq!(config.retrieval.pool, 50);
    }

    #[test]
    fn unknown_key_rejected_in_strict_mode() {
        let toml = "task = \"mortality\"\nbananas = 3\n";
        let err = load_config_str(toml, ParseMode::Strict, None).unwrap_err();
        assert!(err.to_string().contains("bananas"), "{err}");
        assert!(load_config_str(toml, ParseMode::Lenient, None).is_ok());
    }

    #[test]
    fn k_outside_paper_range_rejected() {
        let toml = "[retrieval]\nk = 3\n";
        let err = load_config_str(toml, ParseMode::Strict, None).unwrap_err();
        assert!(err.to_string().contains("k must be 1 or 2"), "{err}");
    }

    #[test]
    fn missing_path_rejected_at_load() {
        let toml = "[data]\nvisits_path = \"/definitely/not/here.jsonl\"\n";
        let err = load_config_str(toml, ParseMode::Strict, None).unwrap_err();
        assert!(err.to_string().contains("does not exist"));
    }

    #[test]
    fn channel_csv_roundtrip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hr.csv");
        std::fs::write(
            &path,
            "timestamp,value\n2024-01-01T00:00:00Z,80.5\n2024-01-01T01:00:00Z,82\n",
        )
        .unwrap();
        let series = parse_channel_csv(&path).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[1].1, 82.0);

        std::fs::write(&path, "time,val\n").unwrap();
        assert!(matches!(parse_channel_csv(&path), Err(IngestError::Parse { line: 1, .. })));
    }

    #[test]
    fn config_echo_roundtrips() {
        let config = RunConfig::default();
        let echoed = render_config(&config);
        let back = load_config_str(&echoed, ParseMode::Strict, None).unwrap();
        assert_eq!(config, back);
    }
}

//! M1 orchestration: note summarization, patient context assembly,
//! prompt construction with similar patients and community summaries, and
//! parsing of completion output into `(label, reasoning)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{CohortStore, Phase};
use crate::cohort::{ClinicalNote, PatientVisit, Task, VisitKey};
use crate::features::comorbidity::category_display;
use crate::kg::{retrieve_top_communities, CommunitySummary};
use crate::llm::{CompletionClient, LlmError, Prompt};
use crate::retrieve::{split_cohorts, SimilarCohort, TextEmbedder, VisitIndex};

/// Leading marker of a note-summarization prompt; the mock echoes the
/// payload after the `---` line.
pub const SUMMARIZE_NOTES_MARKER: &str = "Summarize the following clinical notes";
/// Section headers, in the fixed prompt order.
pub const TASK_HEADER: &str = "## Task";
pub const EHR_CONTEXT_HEADER: &str = "## Patient EHR Context";
pub const KNOWLEDGE_HEADER: &str = "## Retrieved Medical Knowledge";
pub const SIMILAR_HEADER: &str = "## Similar Patient Cases";
pub const INSTRUCTION_HEADER: &str = "## Instructions";

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("mandatory prompt sections need {needed} chars, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("multiple conflicting prediction markers")]
    AmbiguousPrediction,
    #[error("no prediction marker found")]
    MissingPrediction,
    #[error("llm call failed for visit {key}: {source}")]
    VisitLlm { key: VisitKey, source: LlmError },
    #[error("systemic completion outage: {consecutive} consecutive transport failures")]
    SystemicOutage { consecutive: usize },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retrieve(#[from] crate::retrieve::RetrieveError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
}

/// Aggregated, deduplicated view of a visit plus all prior visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientContext {
    pub visit_key: VisitKey,
    pub conditions: Vec<String>,
    pub procedures: Vec<String>,
    pub medications: Vec<String>,
    pub note_summary: String,
    pub prior_visit_digest: String,
}

fn display_condition(code: &str) -> String {
    match category_display(code) {
        Some(name) => format!("{name} ({code})"),
        None => code.to_string(),
    }
}

fn push_unique(list: &mut Vec<String>, item: String) {
    if !list.contains(&item) {
        list.push(item);
    }
}

/// Union of conditions, procedures, and medications over the visit and
/// its history, order-stable with the newest additions last.
pub fn build_patient_context(visit: &PatientVisit, history: &[&PatientVisit]) -> PatientContext {
    let mut conditions = Vec::new();
    let mut procedures = Vec::new();
    let mut medications = Vec::new();
    for v in history.iter().copied().chain(std::iter::once(visit)) {
        for code in &v.icd_codes {
            push_unique(&mut conditions, display_condition(code));
        }
        for p in &v.procedures {
            push_unique(&mut procedures, p.clone());
        }
        for m in &v.medications {
            push_unique(&mut medications, m.clone());
        }
    }
    let prior_visit_digest = if history.is_empty() {
        "no prior visits".to_string()
    } else {
        let last = history.last().unwrap();
        format!(
            "{} prior visit(s); most recent discharged {}",
            history.len(),
            last.discharge_time.to_rfc3339()
        )
    };
    PatientContext {
        visit_key: visit.key(),
        conditions,
        procedures,
        medications,
        note_summary: String::new(),
        prior_visit_digest,
    }
}

impl PatientContext {
    pub fn with_note_summary(mut self, summary: String) -> Self {
        self.note_summary = summary;
        self
    }

    /// Deterministic rendering used in the prompt's EHR section.
    pub fn render(&self) -> String {
        let join = |items: &[String]| {
            if items.is_empty() {
                "none recorded".to_string()
            } else {
                items.join("; ")
            }
        };
        format!(
            "Patient ID: {}\nPrior history: {}\nConditions: {}\nProcedures: {}\nMedications: {}\nPhysician note summary:\n{}",
            self.visit_key,
            self.prior_visit_digest,
            join(&self.conditions),
            join(&self.procedures),
            join(&self.medications),
            if self.note_summary.is_empty() { "(no notes available)" } else { &self.note_summary },
        )
    }
}

/// LLM-free text view of a visit used for embedding: codes, procedures,
/// medications, and raw note text.
pub fn retrieval_text(visit: &PatientVisit, history: &[&PatientVisit]) -> String {
    let ctx = build_patient_context(visit, history);
    let mut out = format!(
        "Conditions: {}\nProcedures: {}\nMedications: {}\n",
        ctx.conditions.join("; "),
        ctx.procedures.join("; "),
        ctx.medications.join("; "),
    );
    for note in &visit.notes {
        out.push_str(&note.text);
        out.push('\n');
    }
    out
}

/// Summarize notes through the completion client: empty notes cost zero
/// calls; oversized concatenations are chunked to the character budget
/// and the chunk summaries are merged with one final call.
pub fn summarize_notes(
    notes: &[ClinicalNote],
    llm: &dyn CompletionClient,
    chunk_chars: usize,
) -> Result<String, LlmError> {
    if notes.is_empty() {
        return Ok(String::new());
    }
    let mut ordered: Vec<&ClinicalNote> = notes.iter().collect();
    ordered.sort_by_key(|n| n.note_time);
    let concatenated = ordered.iter().map(|n| n.text.as_str()).collect::<Vec<_>>().join("\n\n");

    let summarize_one = |payload: &str| -> Result<String, LlmError> {
        let prompt = Prompt::new(
            format!("{SUMMARIZE_NOTES_MARKER} in one concise clinical paragraph.\n---\n{payload}"),
            512,
            0.0,
        );
        Ok(llm.complete(&prompt)?.text)
    };

    let chars: Vec<char> = concatenated.chars().collect();
    if chars.len() <= chunk_chars {
        return summarize_one(&concatenated);
    }
    let n_chunks = chars.len().div_ceil(chunk_chars);
    let mut partials = Vec::with_capacity(n_chunks);
    for chunk in chars.chunks(chunk_chars) {
        partials.push(summarize_one(&chunk.iter().collect::<String>())?);
    }
    summarize_one(&partials.join("\n"))
}

fn task_description(task: Task) -> String {
    match task {
        Task::Readmission => format!(
            "{TASK_HEADER}\nYou are a clinical risk assessor. Using the EHR context, retrieved \
             medical knowledge, and similar patient cases below, decide whether this patient \
             will be readmitted to the hospital within 30 days of discharge."
        ),
        Task::Mortality => format!(
            "{TASK_HEADER}\nYou are a clinical risk assessor. Using the EHR context, retrieved \
             medical knowledge, and similar patient cases below, decide the patient's \
             in-hospital mortality status for this visit."
        ),
    }
}

fn instruction_tail() -> String {
    format!(
        "{INSTRUCTION_HEADER}\nReason step by step over the conditions, procedures, medications, \
         and the similar cases. After your reasoning, output a line containing exactly \
         `# Prediction #` followed on the next line by 0 or 1."
    )
}

fn truncate_chars(text: &str, budget: usize) -> String {
    if text.chars().count() <= budget {
        return text.to_string();
    }
    text.chars().take(budget).collect()
}

fn render_similar(cohort: &SimilarCohort) -> String {
    let mut out = format!("{SIMILAR_HEADER}\n");
    let mut render_entry = |entry: &crate::retrieve::CohortEntry| {
        out.push_str(&format!(
            "### Similar case {} (label {}, similarity {:.3})\n{}\n",
            entry.key, entry.label, entry.score, entry.context,
        ));
    };
    for entry in &cohort.positives {
        render_entry(entry);
    }
    for entry in &cohort.negatives {
        render_entry(entry);
    }
    if cohort.positives.is_empty() && cohort.negatives.is_empty() {
        out.push_str("(no labeled similar cases retrieved)\n");
    }
    out
}

/// Assemble the prediction prompt in fixed section order (task, EHR
/// context, knowledge, similar cases, instructions) under a character
/// budget: knowledge is truncated first, then similar-case text.
pub fn assemble_prompt(
    ctx: &PatientContext,
    cohort: &SimilarCohort,
    kg_summaries: &[&CommunitySummary],
    task: Task,
    char_budget: usize,
    max_tokens: u32,
    temperature: f64,
) -> Result<Prompt, ContextError> {
    let head = format!("{}\n{EHR_CONTEXT_HEADER}\n{}\n", task_description(task), ctx.render());
    let tail = instruction_tail();
    let mandatory = head.chars().count() + tail.chars().count() + 2;
    if mandatory > char_budget {
        return Err(ContextError::BudgetExceeded { needed: mandatory, budget: char_budget });
    }

    let mut knowledge = format!("{KNOWLEDGE_HEADER}\n");
    if kg_summaries.is_empty() {
        knowledge.push_str("(no knowledge retrieved)\n");
    }
    for summary in kg_summaries {
        knowledge.push_str(&format!("[community {}] {}\n", summary.community_id, summary.summary_text));
    }
    let similar = render_similar(cohort);

    let mut remaining = char_budget - mandatory;
    // Knowledge gives way first, then similar-case text.
    let similar_len = similar.chars().count();
    let knowledge_budget = remaining.saturating_sub(similar_len);
    let knowledge = truncate_chars(&knowledge, knowledge_budget);
    remaining -= knowledge.chars().count();
    let similar = truncate_chars(&similar, remaining);

    let text = format!("{head}{knowledge}{similar}\n{tail}");
    Ok(Prompt::new(text, max_tokens, temperature))
}

/// Parsed M1 output for one visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LLMOutput {
    pub label: u8,
    pub reasoning: String,
    pub raw: String,
    /// Non-empty when the output came from the fallback policy.
    pub flags: Vec<String>,
}

impl LLMOutput {
    pub fn is_fallback(&self) -> bool {
        !self.flags.is_empty()
    }
}

/// Scan for prediction markers in priority order: the `# Prediction #`
/// block, then `**Prediction**: d`, then plain `Prediction: d`. Within
/// the winning marker kind, conflicting digits are ambiguous.
pub fn parse_llm_output(raw: &str) -> Result<LLMOutput, ContextError> {
    let mut hash_matches: Vec<(usize, u8)> = Vec::new();
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let trimmed = line.trim().trim_matches('*').trim();
        if trimmed == "# Prediction #" || trimmed == "\\# Prediction \\#" {
            let rest = &raw[offset + line.len()..];
            if let Some(first) = rest.lines().find(|l| !l.trim().is_empty()) {
                let token = first.trim().trim_matches('*').trim();
                if let Some(label) = parse_binary(token) {
                    hash_matches.push((offset, label));
                }
            }
        }
        offset += line.len();
    }

    let bold_re = regex::Regex::new(r"\*\*Prediction\*\*\s*:\s*([01])").unwrap();
    let bold_matches: Vec<(usize, u8)> = bold_re
        .captures_iter(raw)
        .map(|c| (c.get(0).unwrap().start(), c[1].parse::<u8>().unwrap()))
        .collect();

    let plain_re = regex::Regex::new(r"Prediction\s*:\s*([01])").unwrap();
    let plain_matches: Vec<(usize, u8)> = plain_re
        .captures_iter(raw)
        .filter(|c| {
            let start = c.get(0).unwrap().start();
            // Skip occurrences that are the inside of the bold form.
            !raw[..start].ends_with("**")
        })
        .map(|c| (c.get(0).unwrap().start(), c[1].parse::<u8>().unwrap()))
        .collect();

    let winning = [hash_matches, bold_matches, plain_matches]
        .into_iter()
        .find(|m| !m.is_empty())
        .ok_or(ContextError::MissingPrediction)?;

    let labels: std::collections::BTreeSet<u8> = winning.iter().map(|&(_, l)| l).collect();
    if labels.len() > 1 {
        return Err(ContextError::AmbiguousPrediction);
    }
    let label = *labels.iter().next().unwrap();
    let cut = winning.iter().map(|&(at, _)| at).min().unwrap();
    Ok(LLMOutput {
        label,
        reasoning: raw[..cut].trim().to_string(),
        raw: raw.to_string(),
        flags: vec![],
    })
}

fn parse_binary(token: &str) -> Option<u8> {
    match token.chars().next() {
        Some('0') => Some(0),
        Some('1') => Some(1),
        _ => None,
    }
}

/// Knobs for one M1 inference pass.
#[derive(Debug, Clone)]
pub struct M1Config {
    pub k: usize,
    pub pool: usize,
    pub k_communities: usize,
    pub char_budget: usize,
    pub summary_chunk_chars: usize,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Fallback label on per-visit failure; `None` uses the train-side
    /// majority class.
    pub fallback_label: Option<u8>,
    /// Consecutive transport failures that count as a systemic outage.
    pub outage_threshold: usize,
    /// Cap on each similar-case context snapshot, in characters.
    pub snapshot_chars: usize,
}

impl Default for M1Config {
    fn default() -> Self {
        M1Config {
            k: 2,
            pool: 50,
            k_communities: 3,
            char_budget: 32_768,
            summary_chunk_chars: 4000,
            max_tokens: 768,
            temperature: 0.0,
            fallback_label: None,
            outage_threshold: 5,
            snapshot_chars: 600,
        }
    }
}

/// Everything one M1 pass produces: outputs per visit, the failure
/// ledger, and the retrieval log for the leakage audit.
#[derive(Debug, Default)]
pub struct M1Outcome {
    pub outputs: BTreeMap<VisitKey, LLMOutput>,
    pub failures: Vec<(VisitKey, String)>,
    pub retrieval_log: BTreeMap<VisitKey, Vec<VisitKey>>,
}

/// Run the full M1 path for every listed visit: summarize notes, build
/// context, retrieve labeled similar cases from the train-only index and
/// relevant community summaries, prompt the backend, and parse. Per-visit
/// failures fall back to the configured prior label, flagged; only a
/// systemic transport outage aborts the pass.
#[allow(clippy::too_many_arguments)]
pub fn run_m1(
    store: &CohortStore,
    keys: &[VisitKey],
    task: Task,
    index: &VisitIndex,
    summaries: &[CommunitySummary],
    llm: &dyn CompletionClient,
    embedder: &dyn TextEmbedder,
    config: &M1Config,
) -> Result<M1Outcome, ContextError> {
    let mut sorted: Vec<VisitKey> = keys.to_vec();
    sorted.sort();

    let fallback_label = config.fallback_label.unwrap_or_else(|| {
        // Majority class over the index labels (train side).
        let pos: usize =
            index.keys.iter().filter_map(|k| index.label_of(k)).map(usize::from).sum();
        u8::from(pos * 2 > index.len())
    });

    let mut outcome = M1Outcome::default();
    let mut consecutive_transport_failures = 0usize;

    for key in sorted {
        let Some(visit) = store.visit(&key, Phase::Transform) else {
            outcome.failures.push((key.clone(), "visit not found".to_string()));
            continue;
        };
        let history = store.history(&key, Phase::Transform);

        let mut flags: Vec<String> = Vec::new();
        let note_summary = match summarize_notes(&visit.notes, llm, config.summary_chunk_chars) {
            Ok(summary) => {
                consecutive_transport_failures = 0;
                summary
            }
            Err(e) => {
                if e.is_transient() {
                    consecutive_transport_failures += 1;
                    if consecutive_transport_failures >= config.outage_threshold {
                        return Err(ContextError::SystemicOutage {
                            consecutive: consecutive_transport_failures,
                        });
                    }
                }
                outcome.failures.push((key.clone(), format!("note summarization: {e}")));
                flags.push("fallback:summarization_failed".to_string());
                String::new()
            }
        };

        let ctx = build_patient_context(visit, &history).with_note_summary(note_summary);

        let query_embedding = embedder.embed(&retrieval_text(visit, &history))?;
        let mut cohort = SimilarCohort::default();
        let mut picked_summaries: Vec<&CommunitySummary> = Vec::new();
        if query_embedding.normalized {
            let pool = index.query_embedding(&key.patient_id, &query_embedding, config.pool)?;
            cohort = split_cohorts(&pool, |k| index.label_of(k), config.k);
            for entry in cohort.positives.iter_mut().chain(cohort.negatives.iter_mut()) {
                if let Some(neighbor) = store.visit(&entry.key, Phase::Transform) {
                    let neighbor_history = store.history(&entry.key, Phase::Transform);
                    entry.context = truncate_chars(
                        &retrieval_text(neighbor, &neighbor_history),
                        config.snapshot_chars,
                    );
                }
            }
            let top = retrieve_top_communities(&query_embedding, summaries, config.k_communities);
            picked_summaries = top
                .iter()
                .filter_map(|(id, _)| summaries.iter().find(|s| s.community_id == *id))
                .collect();
        } else {
            flags.push("empty_context_embedding".to_string());
        }
        outcome.retrieval_log.insert(
            key.clone(),
            cohort
                .positives
                .iter()
                .chain(cohort.negatives.iter())
                .map(|e| e.key.clone())
                .collect(),
        );

        let prompt = assemble_prompt(
            &ctx,
            &cohort,
            &picked_summaries,
            task,
            config.char_budget,
            config.max_tokens,
            config.temperature,
        )?;

        let output = match llm.complete(&prompt) {
            Ok(completion) => {
                consecutive_transport_failures = 0;
                match parse_llm_output(&completion.text) {
                    Ok(mut parsed) => {
                        parsed.flags = flags.clone();
                        parsed
                    }
                    Err(e) => {
                        outcome.failures.push((key.clone(), e.to_string()));
                        let mut fb_flags = flags.clone();
                        fb_flags.push(match e {
                            ContextError::AmbiguousPrediction => {
                                "fallback:ambiguous_prediction".to_string()
                            }
                            _ => "fallback:missing_prediction".to_string(),
                        });
                        LLMOutput {
                            label: fallback_label,
                            reasoning: String::new(),
                            raw: completion.text,
                            flags: fb_flags,
                        }
                    }
                }
            }
            Err(e) => {
                if e.is_transient() {
                    consecutive_transport_failures += 1;
                    if consecutive_transport_failures >= config.outage_threshold {
                        return Err(ContextError::SystemicOutage {
                            consecutive: consecutive_transport_failures,
                        });
                    }
                }
                outcome.failures.push((key.clone(), e.to_string()));
                let mut fb_flags = flags.clone();
                fb_flags.push("fallback:completion_failed".to_string());
                LLMOutput {
                    label: fallback_label,
                    reasoning: String::new(),
                    raw: String::new(),
                    flags: fb_flags,
                }
            }
        };
        outcome.outputs.insert(key, output);
    }
    Ok(outcome)
}

/// Handoff row schema for the M1 -> M2 JSON-lines artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct HandoffRow {
    patient_id: String,
    visit_seq: u32,
    label: u8,
    reasoning: String,
    flags: Vec<String>,
}

/// Write M1 outputs as JSON-lines, sorted by visit key.
pub fn write_m1_outputs(
    path: &std::path::Path,
    outputs: &BTreeMap<VisitKey, LLMOutput>,
) -> std::io::Result<()> {
    let mut text = String::new();
    for (key, output) in outputs {
        let row = HandoffRow {
            patient_id: key.patient_id.clone(),
            visit_seq: key.visit_seq,
            label: output.label,
            reasoning: output.reasoning.clone(),
            flags: output.flags.clone(),
        };
        text.push_str(&serde_json::to_string(&row).expect("row serializes"));
        text.push('\n');
    }
    std::fs::write(path, text)
}

/// Read an M1 handoff file back into keyed outputs.
pub fn read_m1_outputs(
    path: &std::path::Path,
) -> std::io::Result<BTreeMap<VisitKey, LLMOutput>> {
    let data = std::fs::read_to_string(path)?;
    let mut outputs = BTreeMap::new();
    for line in data.lines().filter(|l| !l.trim().is_empty()) {
        let row: HandoffRow = serde_json::from_str(line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        outputs.insert(
            VisitKey::new(row.patient_id, row.visit_seq),
            LLMOutput {
                label: row.label,
                reasoning: row.reasoning.clone(),
                raw: row.reasoning,
                flags: row.flags,
            },
        );
    }
    Ok(outputs)
}

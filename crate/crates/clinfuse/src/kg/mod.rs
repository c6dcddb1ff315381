//! Biomedical concept graph: construction from triples filtered to
//! patient-relevant concepts, Leiden community detection, LLM community
//! summaries, and per-patient summary retrieval.

mod leiden;

pub use leiden::{leiden_partition, modularity, Partition};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{hash_embed, EmbeddingVector};
use crate::ingest::TripleRecord;
use crate::llm::{CompletionClient, Prompt};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("graph is empty")]
    EmptyGraph,
    #[error("partition does not cover graph: {0}")]
    InvalidPartition(String),
    #[error("embedding failed: {0}")]
    Embed(#[from] crate::embed::EmbedError),
}

/// Undirected weighted concept graph. Edge weight is the total retained
/// multiplicity of the triples joining its endpoints; self-loops are
/// dropped at build time.
#[derive(Debug, Clone, Default)]
pub struct ConceptGraph {
    nodes: Vec<String>,
    node_ids: BTreeMap<String, usize>,
    adjacency: Vec<BTreeMap<usize, f64>>,
    triple_index: BTreeMap<(usize, usize), Vec<TripleRecord>>,
}

impl ConceptGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_name(&self, id: usize) -> &str {
        &self.nodes[id]
    }

    pub fn node_id(&self, name: &str) -> Option<usize> {
        self.node_ids.get(name).copied()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn neighbors(&self, id: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adjacency[id].iter().map(|(&n, &w)| (n, w))
    }

    pub fn degree(&self, id: usize) -> f64 {
        self.adjacency[id].values().sum()
    }

    pub fn total_edge_weight(&self) -> f64 {
        self.adjacency.iter().map(|a| a.values().sum::<f64>()).sum::<f64>() / 2.0
    }

    pub fn edge_weight(&self, a: usize, b: usize) -> f64 {
        self.adjacency[a].get(&b).copied().unwrap_or(0.0)
    }

    /// Canonical `(min, max)` edge list with weights.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (a, neighbors) in self.adjacency.iter().enumerate() {
            for (&b, &w) in neighbors {
                if a < b {
                    out.push((a, b, w));
                }
            }
        }
        out
    }

    /// Triples behind one edge.
    pub fn edge_triples(&self, a: usize, b: usize) -> &[TripleRecord] {
        let key = (a.min(b), a.max(b));
        self.triple_index.get(&key).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Edge list export: `subject<TAB>object<TAB>weight`.
    pub fn render_edge_list(&self) -> String {
        let mut out = String::new();
        for (a, b, w) in self.edges() {
            out.push_str(&format!("{}\t{}\t{}\n", self.nodes[a], self.nodes[b], w));
        }
        out
    }

    /// Test-support constructor for plain weighted graphs.
    pub fn from_weighted_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let nodes: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
        let node_ids = nodes.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let mut adjacency = vec![BTreeMap::new(); n];
        for &(a, b, w) in edges {
            if a == b {
                continue;
            }
            *adjacency[a].entry(b).or_insert(0.0) += w;
            *adjacency[b].entry(a).or_insert(0.0) += w;
        }
        ConceptGraph { nodes, node_ids, adjacency, triple_index: BTreeMap::new() }
    }
}

/// Keep triples whose subject or object is a patient-relevant concept and
/// assemble the weighted graph. Self-loop triples are dropped.
pub fn build_graph(triples: &[TripleRecord], patient_concepts: &BTreeSet<String>) -> ConceptGraph {
    let mut retained: Vec<&TripleRecord> = triples
        .iter()
        .filter(|t| patient_concepts.contains(&t.subject) || patient_concepts.contains(&t.object))
        .filter(|t| t.subject != t.object)
        .collect();
    retained.sort();

    let mut node_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut nodes = Vec::new();
    let mut names: BTreeSet<&str> = BTreeSet::new();
    for t in &retained {
        names.insert(&t.subject);
        names.insert(&t.object);
    }
    for name in names {
        node_ids.insert(name.to_string(), nodes.len());
        nodes.push(name.to_string());
    }

    let mut adjacency = vec![BTreeMap::new(); nodes.len()];
    let mut triple_index: BTreeMap<(usize, usize), Vec<TripleRecord>> = BTreeMap::new();
    for t in retained {
        let a = node_ids[&t.subject];
        let b = node_ids[&t.object];
        let w = t.multiplicity as f64;
        *adjacency[a].entry(b).or_insert(0.0) += w;
        *adjacency[b].entry(a).or_insert(0.0) += w;
        triple_index.entry((a.min(b), a.max(b))).or_default().push(t.clone());
    }
    ConceptGraph { nodes, node_ids, adjacency, triple_index }
}

/// Stopwords for the noun-phrase fallback in concept extraction.
const STOPWORDS: [&str; 44] = [
    "a", "an", "and", "are", "as", "at", "be", "been", "but", "by", "for", "from", "had", "has",
    "have", "he", "her", "his", "in", "is", "it", "its", "no", "not", "of", "on", "or", "our",
    "she", "that", "the", "their", "them", "they", "this", "to", "was", "we", "were", "which",
    "will", "with", "would", "you",
];

/// Registered concept phrases matched by string equality against note
/// text. Stands in for an external biomedical NER model.
#[derive(Debug, Clone, Default)]
pub struct ConceptLexicon {
    phrases: BTreeSet<String>,
}

impl ConceptLexicon {
    pub fn new(phrases: impl IntoIterator<Item = String>) -> Self {
        ConceptLexicon {
            phrases: phrases
                .into_iter()
                .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
                .filter(|p| !p.is_empty())
                .collect(),
        }
    }

    pub fn phrases(&self) -> impl Iterator<Item = &String> {
        self.phrases.iter()
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

fn is_word_boundary(text: &[u8], idx: usize) -> bool {
    idx == 0 || idx >= text.len() || !(text[idx] as char).is_alphanumeric()
}

/// Extract concepts from note text: dictionary hits against the lexicon,
/// plus heuristic noun-phrase candidates longer than three characters.
pub fn extract_concepts(note_text: &str, lexicon: &ConceptLexicon) -> BTreeSet<String> {
    let lower = note_text.to_lowercase();
    let bytes = lower.as_bytes();
    let mut found = BTreeSet::new();

    for phrase in &lexicon.phrases {
        let mut start = 0;
        while let Some(pos) = lower[start..].find(phrase.as_str()) {
            let begin = start + pos;
            let end = begin + phrase.len();
            if is_word_boundary(bytes, begin.wrapping_sub(1)) && is_word_boundary(bytes, end) {
                found.insert(phrase.clone());
                break;
            }
            start = begin + 1;
        }
    }

    // Fallback noun-phrase candidates: maximal stopword-free token runs.
    for clause in lower.split(|c: char| !(c.is_alphanumeric() || c.is_whitespace() || c == '-')) {
        let mut run: Vec<&str> = Vec::new();
        let mut flush = |run: &mut Vec<&str>, found: &mut BTreeSet<String>| {
            if !run.is_empty() {
                let phrase = run.join(" ");
                if phrase.len() > 3 {
                    found.insert(phrase);
                }
                run.clear();
            }
        };
        for token in clause.split_whitespace() {
            if STOPWORDS.contains(&token) || token.chars().all(|c| c.is_numeric()) {
                flush(&mut run, &mut found);
            } else {
                run.push(token);
            }
        }
        flush(&mut run, &mut found);
    }
    found
}

/// LLM-written abstraction of one community with its retrieval embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommunitySummary {
    pub community_id: usize,
    pub member_concepts: Vec<String>,
    pub summary_text: String,
    pub embedding: EmbeddingVector,
}

/// Per-community summarization outcome; failures are kept in an error
/// ledger so one bad completion cannot sink the batch.
#[derive(Debug, Default)]
pub struct SummarizeOutcome {
    pub summaries: Vec<CommunitySummary>,
    pub failures: Vec<(usize, String)>,
}

/// Marker the mock backend keys on to answer community-summary prompts.
pub const COMMUNITY_SUMMARY_MARKER: &str = "Summarize the biomedical relationships";

/// Render the summarization prompt for one community: member concepts and
/// every internal triple as a `(s, r, o)` line.
pub fn community_prompt(graph: &ConceptGraph, members: &[usize]) -> String {
    let member_set: BTreeSet<usize> = members.iter().copied().collect();
    let mut lines = Vec::new();
    for &a in members {
        for (b, _) in graph.neighbors(a) {
            if a < b && member_set.contains(&b) {
                for t in graph.edge_triples(a, b) {
                    lines.push(format!("({}, {}, {})", t.subject, t.relation, t.object));
                }
                if graph.edge_triples(a, b).is_empty() {
                    lines.push(format!("({}, related to, {})", graph.node_name(a), graph.node_name(b)));
                }
            }
        }
    }
    let concepts: Vec<&str> = members.iter().map(|&m| graph.node_name(m)).collect();
    format!(
        "{COMMUNITY_SUMMARY_MARKER} among these medical concepts in a short paragraph.\nConcepts: {}\nRelations:\n{}\n",
        concepts.join(", "),
        lines.join("\n")
    )
}

/// Generate one summary per community, in ascending community id order.
/// The embedding is the normalized hashed embedding of the summary text.
pub fn summarize_communities(
    partition: &Partition,
    graph: &ConceptGraph,
    llm: &dyn CompletionClient,
    embed_dim: usize,
) -> Result<SummarizeOutcome, KgError> {
    partition.validate(graph).map_err(KgError::InvalidPartition)?;
    let mut by_community: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (name, &c) in &partition.community_of {
        let id = graph.node_id(name).expect("partition validated against graph");
        by_community.entry(c).or_default().push(id);
    }

    let mut outcome = SummarizeOutcome::default();
    for (community_id, members) in by_community {
        let prompt_text = community_prompt(graph, &members);
        let prompt = Prompt::new(prompt_text, 512, 0.0);
        match llm.complete(&prompt) {
            Ok(completion) => {
                let summary_text = if completion.text.trim().is_empty() {
                    members.iter().map(|&m| graph.node_name(m)).collect::<Vec<_>>().join(", ")
                } else {
                    completion.text
                };
                let embedding = hash_embed(&summary_text, embed_dim)?;
                outcome.summaries.push(CommunitySummary {
                    community_id,
                    member_concepts: members.iter().map(|&m| graph.node_name(m).to_string()).collect(),
                    summary_text,
                    embedding,
                });
            }
            Err(e) => outcome.failures.push((community_id, e.to_string())),
        }
    }
    Ok(outcome)
}

/// Top-k community summaries by inner product (cosine on normalized
/// vectors), descending, ties broken by smaller community id.
pub fn retrieve_top_communities(
    patient_embedding: &EmbeddingVector,
    summaries: &[CommunitySummary],
    k: usize,
) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = summaries
        .iter()
        .map(|s| (s.community_id, patient_embedding.dot(&s.embedding)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

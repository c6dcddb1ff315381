//! Two-stage clinical outcome prediction over multimodal EHR data.
//!
//! Stage one (`M1`) turns unstructured visit data into a label guess plus
//! free-text reasoning: clinical notes are summarized, enriched with
//! community summaries retrieved from a biomedical knowledge graph and with
//! labeled similar-patient exemplars, and sent to a completion backend
//! (a deterministic mock by default, HTTP for real models).
//! Stage two (`M2`) fuses those outputs with structured features
//! (hourly vitals, demographics, ICD-9 comorbidity flags) and trains
//! imbalance-aware classifiers for in-hospital mortality and 30-day
//! readmission.
//!
//! Everything is seeded and deterministic: identical config and seed
//! reproduce byte-identical artifacts.
//!
//! ## Where to start
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run -p clinfuse --example synthetic_cohort
//! cargo run -p clinfuse --example knowledge_graph
//! cargo run -p clinfuse --example similar_patients
//! cargo run -p clinfuse --example word_embeddings
//! cargo run -p clinfuse --example mock_llm
//! cargo run -p clinfuse --example feature_pipeline
//! cargo run -p clinfuse --example train_models
//! cargo run -p clinfuse --example end_to_end
//! cargo run -p clinfuse --example ablation
//! ```
//!
//! A thin CLI (`clinfuse`) wires the same stages end to end; see the
//! README for subcommands and the run config format.

pub mod audit;
pub mod cohort;
pub mod context;
pub mod embed;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod kg;
pub mod llm;
pub mod models;
pub mod pipeline;
pub mod retrieve;

pub use cohort::{ClinicalNote, DatasetSplit, PatientVisit, StaticRecord, Task, VisitKey};

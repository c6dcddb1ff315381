//! M2 feature pipeline: vitals summarization, static one-hot encoding,
//! ICD-9 comorbidity flags, fusion with M1 outputs, and PCA. Everything
//! train-derived (channel statistics, vocabularies, the reasoning
//! embedder, PCA) is fitted on the train split only.

pub mod comorbidity;
pub mod pca;
pub mod series;
pub mod static_enc;

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{CohortStore, Phase};
use crate::cohort::{PatientVisit, VisitKey, CHANNELS};
use crate::context::LLMOutput;
use crate::embed::{paragraph_embedding, train_word_embeddings, WordEmbedParams, WordEmbeddingModel};
use comorbidity::ComorbidityFlags;
use pca::{PCAModel, PcaSelection};
use series::{ChannelStats, SUMMARY_STATS};
use static_enc::StaticVocab;

pub const BLOCK_VITALS: &str = "vitals_labs";
pub const BLOCK_DEMOGRAPHICS: &str = "demographics";
pub const BLOCK_M1_LABEL: &str = "m1_label";
pub const BLOCK_M1_FLAG: &str = "m1_flag";
pub const BLOCK_REASONING: &str = "reasoning";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("block {block} has width {got}, expected {expected}")]
    DimensionMismatch { block: &'static str, got: usize, expected: usize },
    #[error("no M1 output for visit {0}")]
    MissingM1(VisitKey),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("every feature block is disabled")]
    NothingEnabled,
    #[error("reasoning corpus is empty; cannot train the reasoning embedder")]
    EmptyReasoningCorpus,
    #[error(transparent)]
    Series(#[from] series::SeriesError),
    #[error(transparent)]
    Pca(#[from] pca::PcaError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
}

/// Which feature blocks participate; the ablation harness narrows these.
/// At least one block must stay enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationToggles {
    pub use_struct_block: bool,
    pub use_demographics: bool,
    pub use_m1_label: bool,
    pub use_reasoning_block: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        AblationToggles {
            use_struct_block: true,
            use_demographics: true,
            use_m1_label: true,
            use_reasoning_block: true,
        }
    }
}

impl AblationToggles {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.use_struct_block
            || self.use_demographics
            || self.use_m1_label
            || self.use_reasoning_block)
        {
            return Err(FeatureError::NothingEnabled);
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mut dropped = Vec::new();
        if !self.use_reasoning_block {
            dropped.push("reasoning");
        }
        if !self.use_m1_label {
            dropped.push("prediction");
        }
        if !self.use_demographics {
            dropped.push("demographics");
        }
        if !self.use_struct_block {
            dropped.push("vitals");
        }
        if dropped.is_empty() {
            "full".to_string()
        } else {
            format!("without {}", dropped.join("+"))
        }
    }
}

/// Named, contiguous, exactly-partitioning block layout of a fused row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockOffsets {
    pub blocks: Vec<(String, Range<usize>)>,
}

impl BlockOffsets {
    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, r)| r.clone())
    }

    pub fn total_width(&self) -> usize {
        self.blocks.last().map(|(_, r)| r.end).unwrap_or(0)
    }

    /// Blocks eligible for permutation importance, in layout order.
    pub fn importance_blocks(&self) -> Vec<String> {
        self.blocks
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| n != BLOCK_M1_FLAG)
            .collect()
    }
}

/// Widths of the enabled blocks, fixed at fit time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusedShape {
    pub struct_width: usize,
    pub demo_width: usize,
    pub m1_width: usize,
    pub flag_width: usize,
    pub reasoning_width: usize,
}

impl FusedShape {
    pub fn offsets(&self) -> BlockOffsets {
        let mut blocks = Vec::new();
        let mut at = 0usize;
        let mut push = |name: &str, width: usize, blocks: &mut Vec<(String, Range<usize>)>| {
            if width > 0 {
                blocks.push((name.to_string(), at..at + width));
                at += width;
            }
        };
        push(BLOCK_VITALS, self.struct_width, &mut blocks);
        push(BLOCK_DEMOGRAPHICS, self.demo_width, &mut blocks);
        push(BLOCK_M1_LABEL, self.m1_width, &mut blocks);
        push(BLOCK_M1_FLAG, self.flag_width, &mut blocks);
        push(BLOCK_REASONING, self.reasoning_width, &mut blocks);
        BlockOffsets { blocks }
    }
}

/// One fused feature row with its block layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedVector {
    pub values: Vec<f64>,
    pub offsets: BlockOffsets,
}

impl FusedVector {
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.offsets.range(name).map(|r| &self.values[r])
    }
}

/// Concatenate blocks in fixed order, checking widths against the fitted
/// shape. A flagged or all-OOV M1 output contributes its fallback label,
/// a zero reasoning block, and a raised indicator.
pub fn fuse(
    struct_block: &[f64],
    demo_block: &[f64],
    m1_output: &LLMOutput,
    reasoning_embedder: Option<&WordEmbeddingModel>,
    shape: &FusedShape,
) -> Result<FusedVector, FeatureError> {
    if struct_block.len() != shape.struct_width {
        return Err(FeatureError::DimensionMismatch {
            block: BLOCK_VITALS,
            got: struct_block.len(),
            expected: shape.struct_width,
        });
    }
    if demo_block.len() != shape.demo_width {
        return Err(FeatureError::DimensionMismatch {
            block: BLOCK_DEMOGRAPHICS,
            got: demo_block.len(),
            expected: shape.demo_width,
        });
    }
    let mut values =
        Vec::with_capacity(shape.struct_width + shape.demo_width + shape.m1_width + shape.flag_width + shape.reasoning_width);
    values.extend_from_slice(struct_block);
    values.extend_from_slice(demo_block);

    let mut flagged = m1_output.is_fallback();
    let mut reasoning = vec![0.0; shape.reasoning_width];
    if shape.reasoning_width > 0 {
        let embedder = reasoning_embedder.expect("embedder present when reasoning enabled");
        if embedder.dim() != shape.reasoning_width {
            return Err(FeatureError::DimensionMismatch {
                block: BLOCK_REASONING,
                got: embedder.dim(),
                expected: shape.reasoning_width,
            });
        }
        if !flagged {
            let para = paragraph_embedding(&m1_output.reasoning, embedder);
            if para.all_oov {
                flagged = true;
            } else {
                reasoning = para.vector.values;
            }
        }
    }

    if shape.m1_width > 0 {
        values.push(m1_output.label as f64);
    }
    if shape.flag_width > 0 {
        values.push(if flagged { 1.0 } else { 0.0 });
    }
    values.extend_from_slice(&reasoning);
    Ok(FusedVector { values, offsets: shape.offsets() })
}

/// Configuration for feature fitting.
#[derive(Debug, Clone)]
pub struct FeatureFitConfig {
    pub w2v: WordEmbedParams,
    pub pca: Option<PcaSelection>,
    pub toggles: AblationToggles,
}

impl Default for FeatureFitConfig {
    fn default() -> Self {
        FeatureFitConfig {
            w2v: WordEmbedParams::default(),
            pca: Some(PcaSelection::VarianceTarget { target: 0.95, max_components: 128 }),
            toggles: AblationToggles::default(),
        }
    }
}

/// Everything fitted on the train split needed to turn a visit plus its
/// M1 output into a model-space row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedFeatures {
    pub stats: ChannelStats,
    pub vocab: StaticVocab,
    pub reasoning_embedder: Option<WordEmbeddingModel>,
    pub shape: FusedShape,
    pub pca: Option<PCAModel>,
    pub toggles: AblationToggles,
}

impl FittedFeatures {
    /// Fit all train-side state: channel statistics, static vocabularies,
    /// the reasoning embedder (train reasonings only), and PCA over the
    /// fused train matrix.
    pub fn fit(
        store: &CohortStore,
        train_keys: &[VisitKey],
        m1_outputs: &BTreeMap<VisitKey, LLMOutput>,
        config: &FeatureFitConfig,
    ) -> Result<FittedFeatures, FeatureError> {
        config.toggles.validate()?;
        if train_keys.is_empty() {
            return Err(FeatureError::EmptyTrainingSet);
        }
        let mut keys: Vec<VisitKey> = train_keys.to_vec();
        keys.sort();

        let visits: Vec<&PatientVisit> =
            keys.iter().filter_map(|k| store.visit(k, Phase::Fit)).collect();
        let stats = if config.toggles.use_struct_block {
            ChannelStats::fit(&visits)
        } else {
            ChannelStats::default()
        };
        let vocab = if config.toggles.use_demographics {
            let records: Vec<_> = visits.iter().map(|v| &v.static_record).collect();
            StaticVocab::fit(&records)
        } else {
            StaticVocab::default()
        };

        let reasoning_embedder = if config.toggles.use_reasoning_block {
            let corpus: Vec<String> = keys
                .iter()
                .filter_map(|k| m1_outputs.get(k))
                .filter(|o| !o.is_fallback() && !o.reasoning.is_empty())
                .map(|o| o.reasoning.clone())
                .collect();
            if corpus.is_empty() {
                return Err(FeatureError::EmptyReasoningCorpus);
            }
            Some(train_word_embeddings(&corpus, &config.w2v)?)
        } else {
            None
        };

        let shape = FusedShape {
            struct_width: if config.toggles.use_struct_block {
                CHANNELS.len() * SUMMARY_STATS + ComorbidityFlags::WIDTH
            } else {
                0
            },
            demo_width: if config.toggles.use_demographics { vocab.width() } else { 0 },
            m1_width: usize::from(config.toggles.use_m1_label),
            flag_width: usize::from(config.toggles.use_m1_label || config.toggles.use_reasoning_block),
            reasoning_width: if config.toggles.use_reasoning_block {
                config.w2v.dim
            } else {
                0
            },
        };

        let mut fitted = FittedFeatures {
            stats,
            vocab,
            reasoning_embedder,
            shape,
            pca: None,
            toggles: config.toggles,
        };

        if let Some(selection) = config.pca {
            let mut matrix = Vec::with_capacity(keys.len());
            for key in &keys {
                let fused = fitted.fused_row(store, key, m1_outputs, Phase::Fit)?;
                matrix.push(fused.values);
            }
            fitted.pca = Some(pca::fit_pca(&matrix, selection)?);
        }
        Ok(fitted)
    }

    /// Fused (pre-PCA) row for one visit.
    pub fn fused_row(
        &self,
        store: &CohortStore,
        key: &VisitKey,
        m1_outputs: &BTreeMap<VisitKey, LLMOutput>,
        phase: Phase,
    ) -> Result<FusedVector, FeatureError> {
        let visit = store.visit(key, phase).ok_or_else(|| FeatureError::MissingM1(key.clone()))?;
        let m1 = m1_outputs.get(key).ok_or_else(|| FeatureError::MissingM1(key.clone()))?;

        let struct_block = if self.toggles.use_struct_block {
            let mut block = series::vitals_block(visit, &self.stats)?;
            block.extend(comorbidity::comorbidity_flags(&visit.icd_codes).to_feature_block());
            block
        } else {
            Vec::new()
        };
        let demo_block = if self.toggles.use_demographics {
            static_enc::encode_static(&visit.static_record, &self.vocab)
        } else {
            Vec::new()
        };
        fuse(&struct_block, &demo_block, m1, self.reasoning_embedder.as_ref(), &self.shape)
    }

    /// Model-space row: the fused row, PCA-projected when configured.
    pub fn model_row(&self, fused: &FusedVector) -> Result<Vec<f64>, FeatureError> {
        match &self.pca {
            Some(model) => Ok(model.apply(&fused.values)?),
            None => Ok(fused.values.clone()),
        }
    }

    /// Fused and model-space matrices for a key list, in the given order.
    pub fn transform(
        &self,
        store: &CohortStore,
        keys: &[VisitKey],
        m1_outputs: &BTreeMap<VisitKey, LLMOutput>,
        phase: Phase,
    ) -> Result<(Vec<FusedVector>, Vec<Vec<f64>>), FeatureError> {
        let mut fused_rows = Vec::with_capacity(keys.len());
        let mut model_rows = Vec::with_capacity(keys.len());
        for key in keys {
            let fused = self.fused_row(store, key, m1_outputs, phase)?;
            model_rows.push(self.model_row(&fused)?);
            fused_rows.push(fused);
        }
        Ok((fused_rows, model_rows))
    }

    /// PCA projection of an externally assembled fused row (used by the
    /// permutation-importance harness after block shuffling).
    pub fn project(&self, fused_values: &[f64]) -> Result<Vec<f64>, FeatureError> {
        match &self.pca {
            Some(model) => Ok(model.apply(fused_values)?),
            None => Ok(fused_values.to_vec()),
        }
    }
}

/// Export a fused matrix as CSV plus a JSON block-offset sidecar.
pub fn export_fused_matrix(
    path: &std::path::Path,
    keys: &[VisitKey],
    rows: &[FusedVector],
) -> std::io::Result<()> {
    let mut csv = String::from("visit_key");
    if let Some(first) = rows.first() {
        for i in 0..first.values.len() {
            csv.push_str(&format!(",f{i}"));
        }
    }
    csv.push('\n');
    for (key, row) in keys.iter().zip(rows) {
        csv.push_str(&key.to_string());
        for v in &row.values {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    std::fs::write(path, csv)?;
    if let Some(first) = rows.first() {
        let sidecar = path.with_extension("offsets.json");
        std::fs::write(
            sidecar,
            serde_json::to_string_pretty(&first.offsets).expect("offsets serialize"),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{make_synthetic_cohort, CohortSpec};

    fn m1_fixture(keys: &[VisitKey], text: &str) -> BTreeMap<VisitKey, LLMOutput> {
        keys.iter()
            .map(|k| {
                (
                    k.clone(),
                    LLMOutput {
                        label: 1,
                        reasoning: text.to_string(),
                        raw: format!("{text}\n# Prediction #\n1"),
                        flags: vec![],
                    },
                )
            })
            .collect()
    }

    fn tiny_setup() -> (CohortStore, Vec<VisitKey>, BTreeMap<VisitKey, LLMOutput>) {
        let visits = make_synthetic_cohort(&CohortSpec::new(12, 0.3, 21, 1.5)).unwrap();
        let keys: Vec<VisitKey> = visits.iter().map(|v| v.key()).collect();
        let m1 = m1_fixture(&keys, "patient remains stable and improving through the stay");
        (CohortStore::new(visits), keys, m1)
    }

    fn tiny_config() -> FeatureFitConfig {
        FeatureFitConfig {
            w2v: WordEmbedParams { dim: 16, epochs: 1, seed: 3, ..Default::default() },
            pca: None,
            toggles: AblationToggles::default(),
        }
    }

    #[test]
    fn offsets_partition_the_vector_exactly() {
        let (store, keys, m1) = tiny_setup();
        let fitted = FittedFeatures::fit(&store, &keys, &m1, &tiny_config()).unwrap();
        let fused = fitted.fused_row(&store, &keys[0], &m1, Phase::Fit).unwrap();
        let mut covered = 0;
        let mut expected_start = 0;
        for (_, range) in &fused.offsets.blocks {
            assert_eq!(range.start, expected_start, "blocks must be contiguous");
            covered += range.len();
            expected_start = range.end;
        }
        assert_eq!(covered, fused.values.len());
    }

    #[test]
    fn all_zero_blocks_fuse_to_zero_vector() {
        let shape = FusedShape {
            struct_width: 3,
            demo_width: 2,
            m1_width: 1,
            flag_width: 1,
            reasoning_width: 0,
        };
        let m1 = LLMOutput {
            label: 0,
            reasoning: String::new(),
            raw: String::new(),
            flags: vec![],
        };
        let fused = fuse(&[0.0; 3], &[0.0; 2], &m1, None, &shape).unwrap();
        assert!(fused.values.iter().all(|&v| v == 0.0));
        assert_eq!(fused.values.len(), 7);
    }

    #[test]
    fn flagged_m1_zeroes_reasoning_and_raises_indicator() {
        let (store, keys, mut m1) = tiny_setup();
        let key = keys[0].clone();
        let entry = m1.get_mut(&key).unwrap();
        entry.flags.push("fallback:missing_prediction".to_string());
        entry.reasoning = String::new();
        entry.label = 0;
        let fitted = FittedFeatures::fit(&store, &keys, &m1, &tiny_config()).unwrap();
        let fused = fitted.fused_row(&store, &key, &m1, Phase::Fit).unwrap();
        let reasoning = fused.block(BLOCK_REASONING).unwrap();
        assert!(reasoning.iter().all(|&v| v == 0.0));
        assert_eq!(fused.block(BLOCK_M1_FLAG).unwrap(), &[1.0]);
        assert_eq!(fused.block(BLOCK_M1_LABEL).unwrap(), &[0.0]);

        let clean = fitted.fused_row(&store, &keys[1], &m1, Phase::Fit).unwrap();
        assert_eq!(clean.block(BLOCK_M1_FLAG).unwrap(), &[0.0]);
        assert!(clean.block(BLOCK_REASONING).unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn block_width_mismatch_is_an_error() {
        let shape = FusedShape {
            struct_width: 3,
            demo_width: 2,
            m1_width: 1,
            flag_width: 1,
            reasoning_width: 0,
        };
        let m1 =
            LLMOutput { label: 0, reasoning: String::new(), raw: String::new(), flags: vec![] };
        let err = fuse(&[0.0; 4], &[0.0; 2], &m1, None, &shape).unwrap_err();
        assert!(matches!(err, FeatureError::DimensionMismatch { block: BLOCK_VITALS, .. }));
    }

    #[test]
    fn disabled_blocks_are_zero_width_not_zeroed() {
        let (store, keys, m1) = tiny_setup();
        let mut config = tiny_config();
        config.toggles.use_reasoning_block = false;
        config.toggles.use_m1_label = false;
        let fitted = FittedFeatures::fit(&store, &keys, &m1, &config).unwrap();
        let fused = fitted.fused_row(&store, &keys[0], &m1, Phase::Fit).unwrap();
        assert!(fused.offsets.range(BLOCK_REASONING).is_none());
        assert!(fused.offsets.range(BLOCK_M1_LABEL).is_none());
        assert_eq!(
            fused.values.len(),
            CHANNELS.len() * SUMMARY_STATS + ComorbidityFlags::WIDTH + fitted.vocab.width()
        );
    }

    #[test]
    fn all_blocks_disabled_is_rejected() {
        let toggles = AblationToggles {
            use_struct_block: false,
            use_demographics: false,
            use_m1_label: false,
            use_reasoning_block: false,
        };
        assert!(matches!(toggles.validate(), Err(FeatureError::NothingEnabled)));
    }

    #[test]
    fn pca_projection_reduces_model_rows() {
        let (store, keys, m1) = tiny_setup();
        let mut config = tiny_config();
        config.pca = Some(PcaSelection::Fixed(5));
        let fitted = FittedFeatures::fit(&store, &keys, &m1, &config).unwrap();
        let (_, model_rows) = fitted.transform(&store, &keys, &m1, Phase::Fit).unwrap();
        assert!(model_rows.iter().all(|r| r.len() == 5));
    }

    #[test]
    fn export_writes_matrix_and_sidecar() {
        let (store, keys, m1) = tiny_setup();
        let fitted = FittedFeatures::fit(&store, &keys, &m1, &tiny_config()).unwrap();
        let (fused, _) = fitted.transform(&store, &keys[..3], &m1, Phase::Fit).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fused.csv");
        export_fused_matrix(&path, &keys[..3], &fused).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(dir.path().join("fused.offsets.json").exists());
    }
}

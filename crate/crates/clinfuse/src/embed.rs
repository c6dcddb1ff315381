//! Vector-text machinery: deterministic hashed text embeddings, a
//! skip-gram word embedding trainer with negative sampling, mean-pooled
//! paragraph vectors, and normalization / similarity helpers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("corpus is empty after tokenization")]
    EmptyCorpus,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding dim must be >= 8, got {0}")]
    DimTooSmall(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file malformed: {0}")]
    Malformed(String),
}

/// Fixed-size real vector with an explicit normalization flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector { values: vec![0.0; dim], normalized: false }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Single-point tokenization used everywhere text meets vectors:
/// lowercase, split on non-alphanumerics, drop tokens shorter than 2.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.len() >= 2)
        .map(|t| t.to_string())
        .collect()
}

// FNV-1a, inlined so hashed features never depend on std hasher internals.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Signed hashed bag-of-words embedding with `log(1+tf)` weights,
/// L2-normalized. Identical text yields an identical vector; token order
/// never matters. Empty text yields a zero vector with `normalized=false`.
pub fn hash_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbedError> {
    if dim < 8 {
        return Err(EmbedError::DimTooSmall(dim));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Ok(EmbeddingVector::zeros(dim));
    }
    let mut tf: BTreeMap<String, usize> = BTreeMap::new();
    for t in tokens {
        *tf.entry(t).or_insert(0) += 1;
    }
    let mut values = vec![0.0; dim];
    for (token, count) in tf {
        let h = fnv1a(token.as_bytes());
        let idx = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        values[idx] += sign * (1.0 + count as f64).ln();
    }
    let v = EmbeddingVector { values, normalized: false };
    if v.norm() == 0.0 {
        // All hashed weights cancelled; treat like empty text.
        return Ok(EmbeddingVector::zeros(dim));
    }
    l2_normalize(&v)
}

/// Scale to unit L2 norm. Errors on a zero vector.
pub fn l2_normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, EmbedError> {
    let n = v.norm();
    if n == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok(EmbeddingVector { values: v.values.iter().map(|x| x / n).collect(), normalized: true })
}

/// Cosine similarity in [-1, 1]. Errors if either vector is zero.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Skip-gram training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordEmbedParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
}

impl Default for WordEmbedParams {
    fn default() -> Self {
        WordEmbedParams { dim: 100, window: 5, negatives: 5, epochs: 5, seed: 42, learning_rate: 0.025 }
    }
}

/// Trained skip-gram model: vocabulary plus input/output vector tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordEmbeddingModel {
    pub vocabulary: BTreeMap<String, usize>,
    pub vectors: Vec<Vec<f64>>,
    output_vectors: Vec<Vec<f64>>,
    pub params: WordEmbedParams,
    format_version: u32,
}

const MODEL_FORMAT_VERSION: u32 = 1;

impl WordEmbeddingModel {
    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.vocabulary.get(token).map(|&i| self.vectors[i].as_slice())
    }

    /// Serialize to a versioned JSON file; vector round-trips are bit-exact.
    pub fn save(&self, path: &std::path::Path) -> Result<(), EmbedError> {
        let data = serde_json::to_string(self).map_err(|e| EmbedError::Malformed(e.to_string()))?;
        std::fs::write(path, data)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, EmbedError> {
        let data = std::fs::read_to_string(path)?;
        let model: WordEmbeddingModel =
            serde_json::from_str(&data).map_err(|e| EmbedError::Malformed(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(EmbedError::Malformed(format!(
                "unsupported format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Loss of one (center, context) pair with fixed negative samples:
/// `-ln s(u_ctx . v_c) - sum_k ln s(-u_k . v_c)`.
pub fn sgns_pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut loss = -sigmoid(dot(context, center)).max(1e-300).ln();
    for neg in negatives {
        loss -= sigmoid(-dot(neg, center)).max(1e-300).ln();
    }
    loss
}

/// Analytic gradients of [`sgns_pair_loss`] with respect to the center
/// vector, the context vector, and each negative vector.
pub fn sgns_pair_grads(
    center: &[f64],
    context: &[f64],
    negatives: &[&[f64]],
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let dim = center.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let g_pos = sigmoid(dot(context, center)) - 1.0;
    let mut g_center = vec![0.0; dim];
    let g_context: Vec<f64> = center.iter().map(|&c| g_pos * c).collect();
    for (gc, &u) in g_center.iter_mut().zip(context) {
        *gc += g_pos * u;
    }
    let mut g_negatives = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let g_neg = sigmoid(dot(neg, center));
        g_negatives.push(center.iter().map(|&c| g_neg * c).collect());
        for (gc, &u) in g_center.iter_mut().zip(*neg) {
            *gc += g_neg * u;
        }
    }
    (g_center, g_context, g_negatives)
}

/// Train skip-gram embeddings with negative sampling over a tokenized
/// corpus. Negatives are drawn from the unigram distribution raised to
/// 0.75; initialization and sampling are fully seeded.
pub fn train_word_embeddings(
    corpus: &[String],
    params: &WordEmbedParams,
) -> Result<WordEmbeddingModel, EmbedError> {
    let docs: Vec<Vec<String>> = corpus.iter().map(|d| tokenize(d)).collect();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for doc in &docs {
        for t in doc {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let vocabulary: BTreeMap<String, usize> =
        counts.keys().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    let n_vocab = vocabulary.len();

    // Cumulative unigram^0.75 table for negative sampling.
    let weights: Vec<f64> = counts.values().map(|&c| (c as f64).powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(n_vocab);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let scale = 0.5 / params.dim as f64;
    let mut init = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n_vocab)
            .map(|_| (0..params.dim).map(|_| (rng.gen::<f64>() - 0.5) * 2.0 * scale).collect())
            .collect()
    };
    let mut vectors = init(&mut rng);
    let mut output_vectors = init(&mut rng);

    let doc_ids: Vec<Vec<usize>> =
        docs.iter().map(|doc| doc.iter().map(|t| vocabulary[t]).collect()).collect();

    let sample_negative = |rng: &mut ChaCha8Rng| -> usize {
        let x: f64 = rng.gen();
        cumulative.partition_point(|&c| c < x).min(n_vocab - 1)
    };

    for epoch in 0..params.epochs {
        let mut epoch_loss = 0.0;
        let mut n_pairs = 0u64;
        for ids in &doc_ids {
            for (pos, &center_id) in ids.iter().enumerate() {
                let lo = pos.saturating_sub(params.window);
                let hi = (pos + params.window + 1).min(ids.len());
                for ctx_pos in lo..hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context_id = ids[ctx_pos];
                    let neg_ids: Vec<usize> = (0..params.negatives)
                        .map(|_| sample_negative(&mut rng))
                        .filter(|&n| n != context_id)
                        .collect();

                    let center = vectors[center_id].clone();
                    let context = output_vectors[context_id].clone();
                    let negs: Vec<Vec<f64>> =
                        neg_ids.iter().map(|&n| output_vectors[n].clone()).collect();
                    let neg_refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();

                    epoch_loss += sgns_pair_loss(&center, &context, &neg_refs);
                    n_pairs += 1;
                    let (g_center, g_context, g_negs) =
                        sgns_pair_grads(&center, &context, &neg_refs);

                    let lr = params.learning_rate;
                    for (v, g) in vectors[center_id].iter_mut().zip(&g_center) {
                        *v -= lr * g;
                    }
                    for (v, g) in output_vectors[context_id].iter_mut().zip(&g_context) {
                        *v -= lr * g;
                    }
                    for (&n, g_neg) in neg_ids.iter().zip(&g_negs) {
                        for (v, g) in output_vectors[n].iter_mut().zip(g_neg) {
                            *v -= lr * g;
                        }
                    }
                }
            }
        }
        log::debug!(
            "skip-gram epoch {}/{}: mean pair loss {:.6}",
            epoch + 1,
            params.epochs,
            if n_pairs > 0 { epoch_loss / n_pairs as f64 } else { f64::NAN }
        );
    }

    Ok(WordEmbeddingModel {
        vocabulary,
        vectors,
        output_vectors,
        params: params.clone(),
        format_version: MODEL_FORMAT_VERSION,
    })
}

/// Mean of in-vocabulary token vectors; `all_oov` is set when no token
/// was known (the vector is then zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ParagraphEmbedding {
    pub vector: EmbeddingVector,
    pub all_oov: bool,
}

pub fn paragraph_embedding(text: &str, model: &WordEmbeddingModel) -> ParagraphEmbedding {
    let tokens = tokenize(text);
    let mut sum = vec![0.0; model.dim()];
    let mut n = 0usize;
    for t in &tokens {
        if let Some(v) = model.vector(t) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            n += 1;
        }
    }
    if n == 0 {
        return ParagraphEmbedding { vector: EmbeddingVector::zeros(model.dim()), all_oov: true };
    }
    for s in sum.iter_mut() {
        *s /= n as f64;
    }
    ParagraphEmbedding { vector: EmbeddingVector { values: sum, normalized: false }, all_oov: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embed_is_deterministic() {
        let a = hash_embed("congestive heart failure noted", 64).unwrap();
        let b = hash_embed("congestive heart failure noted", 64).unwrap();
        assert_eq!(a, b);
        assert!(a.normalized);
        assert!((a.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hash_embed_is_order_free() {
        let a = hash_embed("alpha beta", 64).unwrap();
        let b = hash_embed("beta alpha", 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hash_embed_empty_text_gives_flagged_zero() {
        let v = hash_embed("", 32).unwrap();
        assert!(!v.normalized);
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn disjoint_vocabulary_strings_are_orthogonal() {
        // Verify the fixture tokens occupy disjoint hash buckets first,
        // so zero cosine follows from construction rather than luck.
        let dim = 256;
        let (s1, s2) = ("cardiology nephrology", "pulmonary oncology");
        let buckets = |s: &str| -> std::collections::BTreeSet<usize> {
            tokenize(s).iter().map(|t| (fnv1a(t.as_bytes()) % dim as u64) as usize).collect()
        };
        assert!(buckets(s1).is_disjoint(&buckets(s2)), "fixture tokens collide; pick new ones");
        let a = hash_embed(s1, dim).unwrap();
        let b = hash_embed(s2, dim).unwrap();
        assert!(cosine(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cosine_equals_normalized_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = EmbeddingVector {
                values: (0..16).map(|_| rng.gen::<f64>() - 0.5).collect(),
                normalized: false,
            };
            let b = EmbeddingVector {
                values: (0..16).map(|_| rng.gen::<f64>() - 0.5).collect(),
                normalized: false,
            };
            let direct = cosine(&a, &b).unwrap();
            let via_norm = l2_normalize(&a).unwrap().dot(&l2_normalize(&b).unwrap());
            assert!((direct - via_norm).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_basics() {
        let v = EmbeddingVector { values: vec![0.3, -0.2, 0.9], normalized: false };
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let e1 = EmbeddingVector { values: vec![1.0, 0.0], normalized: true };
        let e2 = EmbeddingVector { values: vec![0.0, 1.0], normalized: true };
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
    }

    #[test]
    fn normalize_is_idempotent_and_rejects_zero() {
        let v = EmbeddingVector { values: vec![3.0, 4.0], normalized: false };
        let n1 = l2_normalize(&v).unwrap();
        let n2 = l2_normalize(&n1).unwrap();
        for (a, b) in n1.values.iter().zip(&n2.values) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(l2_normalize(&EmbeddingVector::zeros(4)), Err(EmbedError::ZeroVector)));
    }

    fn toy_corpus() -> Vec<String> {
        // xx and yy always share contexts; zz lives in another world.
        let mut docs = Vec::new();
        for _ in 0..30 {
            docs.push("xx aa bb yy aa bb xx yy".to_string());
            docs.push("zz cc dd zz cc dd".to_string());
        }
        docs
    }

    #[test]
    fn shared_context_tokens_end_up_closer() {
        // Training-run oracle over 20 seeds: majority must order
        // cos(xx,yy) above cos(xx,zz).
        let mut wins = 0;
        for seed in 0..20 {
            let params = WordEmbedParams { dim: 16, epochs: 8, seed, ..Default::default() };
            let model = train_word_embeddings(&toy_corpus(), &params).unwrap();
            let emb = |t: &str| EmbeddingVector {
                values: model.vector(t).unwrap().to_vec(),
                normalized: false,
            };
            let close = cosine(&emb("xx"), &emb("yy")).unwrap();
            let far = cosine(&emb("xx"), &emb("zz")).unwrap();
            if close > far {
                wins += 1;
            }
        }
        assert!(wins > 10, "only {wins}/20 seeds ordered correctly");
    }

    #[test]
    fn zero_epochs_returns_seeded_init() {
        let p0 = WordEmbedParams { dim: 12, epochs: 0, seed: 7, ..Default::default() };
        let a = train_word_embeddings(&toy_corpus(), &p0).unwrap();
        let b = train_word_embeddings(&toy_corpus(), &p0).unwrap();
        assert_eq!(a.vectors, b.vectors);
        // Init is random but bounded.
        assert!(a.vectors.iter().flatten().all(|x| x.abs() <= 0.5 / 12.0 + 1e-12));
    }

    #[test]
    fn training_is_deterministic() {
        let params = WordEmbedParams { dim: 16, epochs: 3, seed: 13, ..Default::default() };
        let a = train_word_embeddings(&toy_corpus(), &params).unwrap();
        let b = train_word_embeddings(&toy_corpus(), &params).unwrap();
        assert_eq!(a.vectors, b.vectors);
        assert_eq!(a.output_vectors, b.output_vectors);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            train_word_embeddings(&["., !".to_string()], &WordEmbedParams::default()),
            Err(EmbedError::EmptyCorpus)
        ));
    }

    #[test]
    fn paragraph_embedding_single_and_mean() {
        let params = WordEmbedParams { dim: 8, epochs: 1, seed: 1, ..Default::default() };
        let model = train_word_embeddings(&toy_corpus(), &params).unwrap();
        let single = paragraph_embedding("xx", &model);
        assert!(!single.all_oov);
        assert_eq!(single.vector.values, model.vector("xx").unwrap());

        let two = paragraph_embedding("xx yy", &model);
        for ((m, a), b) in
            two.vector.values.iter().zip(model.vector("xx").unwrap()).zip(model.vector("yy").unwrap())
        {
            assert!((m - (a + b) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn paragraph_embedding_flags_all_oov() {
        let params = WordEmbedParams { dim: 8, epochs: 0, seed: 1, ..Default::default() };
        let model = train_word_embeddings(&toy_corpus(), &params).unwrap();
        let out = paragraph_embedding("completely unknown words", &model);
        assert!(out.all_oov);
        assert_eq!(out.vector.norm(), 0.0);
    }

    #[test]
    fn paragraph_embedding_is_permutation_invariant() {
        let params = WordEmbedParams { dim: 8, epochs: 1, seed: 2, ..Default::default() };
        let model = train_word_embeddings(&toy_corpus(), &params).unwrap();
        let a = paragraph_embedding("xx yy aa bb", &model);
        let b = paragraph_embedding("bb aa yy xx", &model);
        for (x, y) in a.vector.values.iter().zip(&b.vector.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sgns_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let dim = 6;
            let gen = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect()
            };
            let center = gen(&mut rng);
            let context = gen(&mut rng);
            let negs: Vec<Vec<f64>> = (0..3).map(|_| gen(&mut rng)).collect();
            let neg_refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
            let (g_center, g_context, g_negs) = sgns_pair_grads(&center, &context, &neg_refs);

            let h = 1e-6;
            let check = |analytic: f64, plus: f64, minus: f64| {
                let numeric = (plus - minus) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((analytic - numeric) / denom).abs() <= 1e-4,
                    "analytic {analytic} vs numeric {numeric}"
                );
            };
            for i in 0..dim {
                let mut cp = center.clone();
                cp[i] += h;
                let mut cm = center.clone();
                cm[i] -= h;
                check(
                    g_center[i],
                    sgns_pair_loss(&cp, &context, &neg_refs),
                    sgns_pair_loss(&cm, &context, &neg_refs),
                );

                let mut xp = context.clone();
                xp[i] += h;
                let mut xm = context.clone();
                xm[i] -= h;
                check(
                    g_context[i],
                    sgns_pair_loss(&center, &xp, &neg_refs),
                    sgns_pair_loss(&center, &xm, &neg_refs),
                );
            }
            for (k, neg) in negs.iter().enumerate() {
                for i in 0..dim {
                    let mut np = neg.clone();
                    np[i] += h;
                    let mut nm = neg.clone();
                    nm[i] -= h;
                    let refs_p: Vec<&[f64]> = negs
                        .iter()
                        .enumerate()
                        .map(|(j, v)| if j == k { np.as_slice() } else { v.as_slice() })
                        .collect();
                    let refs_m: Vec<&[f64]> = negs
                        .iter()
                        .enumerate()
                        .map(|(j, v)| if j == k { nm.as_slice() } else { v.as_slice() })
                        .collect();
                    check(
                        g_negs[k][i],
                        sgns_pair_loss(&center, &context, &refs_p),
                        sgns_pair_loss(&center, &context, &refs_m),
                    );
                }
            }
        }
    }

    #[test]
    fn model_save_load_roundtrip_is_bit_exact() {
        let params = WordEmbedParams { dim: 8, epochs: 2, seed: 5, ..Default::default() };
        let model = train_word_embeddings(&toy_corpus(), &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w2v.json");
        model.save(&path).unwrap();
        let loaded = WordEmbeddingModel::load(&path).unwrap();
        assert_eq!(model, loaded);
    }
}

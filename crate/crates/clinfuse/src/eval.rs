//! Metrics, threshold selection, probability-distribution export,
//! block-level permutation importance, and the ablation harness.
//!
//! Undefined rates (zero denominators) are reported as explicit nulls,
//! never zero: a model that predicts no positives has no precision, not a
//! precision of 0.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{AblationToggles, BlockOffsets};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("labels and scores disagree: {labels} labels vs {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("both classes must be present")]
    SingleClass,
    #[error("no positive labels present")]
    NoPositives,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed distribution file: {0}")]
    Malformed(String),
}

/// Binary confusion counts at one threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Classify positive iff `score >= threshold` and count outcomes.
pub fn confusion(labels: &[u8], scores: &[f64], threshold: f64) -> Result<ConfusionCounts, EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch { labels: labels.len(), scores: scores.len() });
    }
    let mut counts = ConfusionCounts::default();
    for (&y, &s) in labels.iter().zip(scores) {
        match (y == 1, s >= threshold) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fn_ += 1,
            (false, true) => counts.fp += 1,
            (false, false) => counts.tn += 1,
        }
    }
    Ok(counts)
}

/// Threshold-dependent rates plus ranking metrics. `None` marks an
/// undefined rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: Option<f64>,
    pub npv: Option<f64>,
    pub ppv: Option<f64>,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub macro_f1: Option<f64>,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub threshold_used: f64,
    pub n: usize,
    pub positives: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// Rates from confusion counts; macro F1 is the mean of the per-class F1
/// scores and is null when either class F1 is undefined.
pub fn metrics(counts: &ConfusionCounts, threshold: f64) -> MetricReport {
    let n = counts.total();
    let ppv = ratio(counts.tp, counts.tp + counts.fp);
    let npv = ratio(counts.tn, counts.tn + counts.fn_);
    let sensitivity = ratio(counts.tp, counts.tp + counts.fn_);
    let specificity = ratio(counts.tn, counts.tn + counts.fp);

    let f1 = |precision: Option<f64>, recall: Option<f64>| -> Option<f64> {
        let (p, r) = (precision?, recall?);
        if p + r == 0.0 {
            None
        } else {
            Some(2.0 * p * r / (p + r))
        }
    };
    let f1_pos = f1(ppv, sensitivity);
    let f1_neg = f1(npv, specificity);
    let macro_f1 = match (f1_pos, f1_neg) {
        (Some(a), Some(b)) => Some(0.5 * (a + b)),
        _ => None,
    };

    MetricReport {
        accuracy: ratio(counts.tp + counts.tn, n),
        npv,
        ppv,
        specificity,
        sensitivity,
        macro_f1,
        auroc: None,
        auprc: None,
        threshold_used: threshold,
        n,
        positives: counts.tp + counts.fn_,
    }
}

/// AUROC by the Mann-Whitney rank formulation with average ranks over
/// ties: `P(score_pos > score_neg) + P(equal)/2`.
pub fn auroc(labels: &[u8], scores: &[f64]) -> Result<f64, EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch { labels: labels.len(), scores: scores.len() });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie group [i, j].
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// AUPRC in average-precision step form over the descending-score sweep,
/// tie groups collapsed: `sum (R_k - R_{k-1}) * P_k`.
pub fn auprc(labels: &[u8], scores: &[f64]) -> Result<f64, EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch { labels: labels.len(), scores: scores.len() });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// Scan every distinct score as a candidate threshold and maximize
/// Youden's J = sensitivity + specificity - 1; ties resolve to the lowest
/// threshold.
pub fn youden_threshold(labels: &[u8], scores: &[f64]) -> Result<(f64, f64), EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch { labels: labels.len(), scores: scores.len() });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Walking thresholds upward: at candidate t, positives below t are
    // misses and negatives below t are correct rejections.
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    let mut pos_below = 0usize;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let sensitivity = (n_pos - pos_below) as f64 / n_pos as f64;
        let specificity = neg_below as f64 / n_neg as f64;
        let j_stat = sensitivity + specificity - 1.0;
        if j_stat > best.1 + 1e-15 {
            best = (t, j_stat);
        }
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    Ok(best)
}

/// Full report at a threshold: confusion rates plus AUROC and AUPRC
/// (null with a logged warning when undefined).
pub fn evaluate_scores(labels: &[u8], scores: &[f64], threshold: f64) -> Result<MetricReport, EvalError> {
    let counts = confusion(labels, scores, threshold)?;
    let mut report = metrics(&counts, threshold);
    match auroc(labels, scores) {
        Ok(value) => report.auroc = Some(value),
        Err(EvalError::SingleClass) => {
            log::warn!("single-class evaluation slice; AUROC undefined");
        }
        Err(e) => return Err(e),
    }
    match auprc(labels, scores) {
        Ok(value) => report.auprc = Some(value),
        Err(EvalError::NoPositives) => {
            log::warn!("no positives in evaluation slice; AUPRC undefined");
        }
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Table-style CSV in fixed column order.
pub const REPORT_CSV_HEADER: &str = "Acc,NPV,PPV,Specificity,Sensitivity,MacroF1,AUROC,AUPRC";

fn cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.6}"),
        None => "null".to_string(),
    }
}

pub fn report_csv_row(report: &MetricReport) -> String {
    [
        cell(report.accuracy),
        cell(report.npv),
        cell(report.ppv),
        cell(report.specificity),
        cell(report.sensitivity),
        cell(report.macro_f1),
        cell(report.auroc),
        cell(report.auprc),
    ]
    .join(",")
}

/// Importance of one feature block: mean AUROC drop under seeded joint
/// row permutations of the block's columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockImportance {
    pub block: String,
    pub mean_drop: f64,
    pub per_repeat: Vec<f64>,
}

/// Permutation importance at block granularity. `score_rows` maps fused
/// rows through the fitted transform (PCA and all) to scores.
pub fn permutation_importance(
    score_rows: &dyn Fn(&[Vec<f64>]) -> Vec<f64>,
    fused: &[Vec<f64>],
    labels: &[u8],
    offsets: &BlockOffsets,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BlockImportance>, EvalError> {
    let base = auroc(labels, &score_rows(fused))?;
    let mut out = Vec::new();
    for (b, block) in offsets.importance_blocks().into_iter().enumerate() {
        let range = offsets.range(&block).expect("block exists");
        let mut per_repeat = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ ((b as u64) << 32) ^ (r as u64));
            let mut perm: Vec<usize> = (0..fused.len()).collect();
            perm.shuffle(&mut rng);
            let mut shuffled = fused.to_vec();
            for (row, &src) in shuffled.iter_mut().zip(&perm) {
                row[range.clone()].copy_from_slice(&fused[src][range.clone()]);
            }
            let permuted_auroc = auroc(labels, &score_rows(&shuffled))?;
            per_repeat.push(base - permuted_auroc);
        }
        let mean_drop = per_repeat.iter().sum::<f64>() / repeats.max(1) as f64;
        out.push(BlockImportance { block, mean_drop, per_repeat });
    }
    out.sort_by(|a, b| b.mean_drop.partial_cmp(&a.mean_drop).unwrap());
    Ok(out)
}

/// One ablation row: the toggle set and its evaluation outcome. Failed
/// rows carry the error and leave other rows unaffected.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub toggles: AblationToggles,
    pub outcome: Result<MetricReport, String>,
}

/// The component-drop row set mirroring the reported ablation: full,
/// without reasoning, without reasoning+prediction, and without
/// demographics+reasoning+prediction.
pub fn default_ablation_specs() -> Vec<AblationToggles> {
    let full = AblationToggles::default();
    vec![
        full,
        AblationToggles { use_reasoning_block: false, ..full },
        AblationToggles { use_reasoning_block: false, use_m1_label: false, ..full },
        AblationToggles {
            use_reasoning_block: false,
            use_m1_label: false,
            use_demographics: false,
            ..full
        },
    ]
}

/// Refit and evaluate each toggle set through the supplied closure.
pub fn run_ablation<F>(specs: &[AblationToggles], refit_eval: F) -> Vec<AblationRow>
where
    F: Fn(&AblationToggles) -> Result<MetricReport, String>,
{
    specs
        .iter()
        .map(|toggles| {
            let outcome = match toggles.validate() {
                Ok(()) => refit_eval(toggles),
                Err(e) => Err(e.to_string()),
            };
            AblationRow { label: toggles.label(), toggles: *toggles, outcome }
        })
        .collect()
}

/// Write `(score, label)` rows as CSV with the chosen threshold in the
/// header comment, for external histogram plotting.
pub fn export_probability_distribution(
    labels: &[u8],
    scores: &[f64],
    threshold: f64,
    path: &std::path::Path,
) -> Result<(), EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch { labels: labels.len(), scores: scores.len() });
    }
    let mut text = format!("# threshold={threshold}\nscore,label\n");
    for (&score, &label) in scores.iter().zip(labels) {
        text.push_str(&format!("{score},{label}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Parse a distribution export back into `(threshold, scores, labels)`.
pub fn read_probability_distribution(
    path: &std::path::Path,
) -> Result<(f64, Vec<f64>, Vec<u8>), EvalError> {
    let data = std::fs::read_to_string(path)?;
    let mut lines = data.lines();
    let threshold = lines
        .next()
        .and_then(|l| l.strip_prefix("# threshold="))
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| EvalError::Malformed("missing threshold header".to_string()))?;
    match lines.next() {
        Some("score,label") => {}
        other => return Err(EvalError::Malformed(format!("bad column header: {other:?}"))),
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (s, l) = line
            .split_once(',')
            .ok_or_else(|| EvalError::Malformed(format!("bad row: {line}")))?;
        scores.push(s.parse::<f64>().map_err(|e| EvalError::Malformed(e.to_string()))?);
        labels.push(l.parse::<u8>().map_err(|e| EvalError::Malformed(e.to_string()))?);
    }
    Ok((threshold, scores, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// O(n^2) pair-count oracle: P(pos > neg) + P(equal)/2.
    fn auroc_pair_oracle(labels: &[u8], scores: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            if yi != 1 {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    /// Exhaustive sweep oracle for average precision, recomputing the
    /// confusion from scratch at every distinct threshold.
    fn auprc_sweep_oracle(labels: &[u8], scores: &[f64]) -> f64 {
        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for &t in &thresholds {
            let tp =
                labels.iter().zip(scores).filter(|(&y, &s)| y == 1 && s >= t).count();
            let fp =
                labels.iter().zip(scores).filter(|(&y, &s)| y == 0 && s >= t).count();
            let recall = tp as f64 / n_pos as f64;
            let precision = tp as f64 / (tp + fp) as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    #[test]
    fn confusion_hand_count_fixture() {
        // Preds [1,0,0,0] against labels [1,1,0,0] via score/threshold.
        let labels = [1u8, 1, 0, 0];
        let scores = [0.9, 0.3, 0.2, 0.1];
        let counts = confusion(&labels, &scores, 0.5).unwrap();
        assert_eq!(counts, ConfusionCounts { tp: 1, fp: 0, tn: 2, fn_: 1 });
        let report = metrics(&counts, 0.5);
        assert_eq!(report.sensitivity, Some(0.5));
        assert_eq!(report.specificity, Some(1.0));
        assert_eq!(report.ppv, Some(1.0));
        assert!((report.npv.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.accuracy, Some(0.75));
    }

    #[test]
    fn all_correct_rates_are_one() {
        let labels = [1u8, 0, 1, 0];
        let scores = [0.9, 0.1, 0.8, 0.2];
        let report = metrics(&confusion(&labels, &scores, 0.5).unwrap(), 0.5);
        for rate in [
            report.accuracy,
            report.npv,
            report.ppv,
            report.specificity,
            report.sensitivity,
            report.macro_f1,
        ] {
            assert_eq!(rate, Some(1.0));
        }
    }

    #[test]
    fn no_predicted_positives_gives_null_ppv() {
        let labels = [1u8, 0, 0];
        let scores = [0.1, 0.1, 0.1];
        let report = metrics(&confusion(&labels, &scores, 0.9).unwrap(), 0.9);
        assert_eq!(report.ppv, None);
        assert!(report.ppv.is_none(), "null, never zero");
    }

    #[test]
    fn auroc_four_point_fixture() {
        let labels = [0u8, 0, 1, 1];
        let scores = [0.1, 0.4, 0.35, 0.8];
        let got = auroc(&labels, &scores).unwrap();
        assert!((got - 0.75).abs() < 1e-15, "{got}");
        assert!((got - auroc_pair_oracle(&labels, &scores)).abs() < 1e-15);
    }

    #[test]
    fn auroc_perfect_separation() {
        let labels = [0u8, 0, 1, 1];
        let scores = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(auroc(&labels, &scores).unwrap(), 1.0);
    }

    #[test]
    fn auroc_matches_pair_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let n = rng.gen_range(5..80);
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.4)).collect();
            if labels.iter().all(|&y| y == 0) || labels.iter().all(|&y| y == 1) {
                continue;
            }
            // Coarse grid forces plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..6) as f64) / 5.0).collect();
            let got = auroc(&labels, &scores).unwrap();
            let oracle = auroc_pair_oracle(&labels, &scores);
            assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        }
    }

    #[test]
    fn auroc_random_scores_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 20_000;
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.3)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let got = auroc(&labels, &scores).unwrap();
        assert!((got - 0.5).abs() < 0.03, "{got}");
    }

    #[test]
    fn auroc_single_class_is_error() {
        assert!(matches!(auroc(&[1, 1], &[0.5, 0.6]), Err(EvalError::SingleClass)));
    }

    #[test]
    fn auprc_perfect_ranking_is_one() {
        let labels = [0u8, 0, 1, 1];
        let scores = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(auprc(&labels, &scores).unwrap(), 1.0);
    }

    #[test]
    fn auprc_random_scores_near_base_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let n = 10_000;
        let base_rate = 0.2;
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < base_rate)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let got = auprc(&labels, &scores).unwrap();
        assert!((got - base_rate).abs() < 0.05, "{got}");
    }

    #[test]
    fn auprc_matches_sweep_oracle() {
        let labels = [1u8, 0, 1, 0];
        let scores = [0.9, 0.8, 0.3, 0.2];
        let got = auprc(&labels, &scores).unwrap();
        assert!((got - auprc_sweep_oracle(&labels, &scores)).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..30 {
            let n = rng.gen_range(4..60);
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.35)).collect();
            if !labels.contains(&1) {
                continue;
            }
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..7) as f64) / 6.0).collect();
            let got = auprc(&labels, &scores).unwrap();
            let oracle = auprc_sweep_oracle(&labels, &scores);
            assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        }
    }

    #[test]
    fn auprc_without_positives_is_error() {
        assert!(matches!(auprc(&[0, 0], &[0.5, 0.6]), Err(EvalError::NoPositives)));
    }

    #[test]
    fn youden_perfect_separation_picks_lowest_gap_candidate() {
        let labels = [0u8, 0, 1, 1];
        let scores = [0.1, 0.2, 0.7, 0.9];
        let (threshold, j) = youden_threshold(&labels, &scores).unwrap();
        assert_eq!(threshold, 0.7);
        assert_eq!(j, 1.0);
    }

    #[test]
    fn youden_matches_exhaustive_candidate_oracle() {
        // Constructed so the best J sits at 0.3 with sens 0.79, spec 0.80.
        let mut labels = Vec::new();
        let mut scores = Vec::new();
        for _ in 0..79 {
            labels.push(1u8);
            scores.push(0.3);
        }
        for _ in 0..21 {
            labels.push(1u8);
            scores.push(0.1);
        }
        for _ in 0..80 {
            labels.push(0u8);
            scores.push(0.05);
        }
        for _ in 0..20 {
            labels.push(0u8);
            scores.push(0.95);
        }
        let (threshold, j) = youden_threshold(&labels, &scores).unwrap();
        assert_eq!(threshold, 0.3);
        assert!((j - 0.59).abs() < 1e-12, "{j}");

        // Exhaustive oracle over every distinct candidate.
        let mut best = f64::NEG_INFINITY;
        let mut candidates: Vec<f64> = scores.clone();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        for &t in &candidates {
            let counts = confusion(&labels, &scores, t).unwrap();
            let report = metrics(&counts, t);
            let jt = report.sensitivity.unwrap() + report.specificity.unwrap() - 1.0;
            best = best.max(jt);
        }
        assert!((j - best).abs() < 1e-12);
    }

    #[test]
    fn permutation_importance_ignored_block_is_zero() {
        // Scores depend only on column 0; permuting the second block must
        // not change AUROC at all.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let fused: Vec<Vec<f64>> =
            (0..200).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let labels: Vec<u8> = fused.iter().map(|r| u8::from(r[0] > 0.5)).collect();
        let offsets = BlockOffsets {
            blocks: vec![("signal".to_string(), 0..1), ("noise".to_string(), 1..3)],
        };
        let score = |rows: &[Vec<f64>]| rows.iter().map(|r| r[0]).collect::<Vec<f64>>();
        let importances =
            permutation_importance(&score, &fused, &labels, &offsets, 5, 9).unwrap();
        let noise = importances.iter().find(|i| i.block == "noise").unwrap();
        assert!(noise.mean_drop.abs() < 1e-12);
        let signal = importances.iter().find(|i| i.block == "signal").unwrap();
        assert!(signal.mean_drop > 0.3);
        assert_eq!(importances[0].block, "signal", "ranked most important first");
    }

    #[test]
    fn permutation_importance_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let fused: Vec<Vec<f64>> =
            (0..100).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let labels: Vec<u8> = fused.iter().map(|r| u8::from(r[0] + r[1] > 1.0)).collect();
        let offsets = BlockOffsets {
            blocks: vec![("a".to_string(), 0..1), ("b".to_string(), 1..2)],
        };
        let score = |rows: &[Vec<f64>]| rows.iter().map(|r| r[0] + 0.5 * r[1]).collect::<Vec<f64>>();
        let x = permutation_importance(&score, &fused, &labels, &offsets, 5, 4).unwrap();
        let y = permutation_importance(&score, &fused, &labels, &offsets, 5, 4).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert_eq!(a.block, b.block);
            assert_eq!(a.per_repeat, b.per_repeat);
        }
    }

    #[test]
    fn ablation_rejects_all_disabled_and_is_deterministic() {
        let bad = AblationToggles {
            use_struct_block: false,
            use_demographics: false,
            use_m1_label: false,
            use_reasoning_block: false,
        };
        let specs = vec![AblationToggles::default(), bad];
        let fake_report = |toggles: &AblationToggles| {
            Ok(MetricReport {
                accuracy: Some(if toggles.use_reasoning_block { 0.9 } else { 0.7 }),
                npv: None,
                ppv: None,
                specificity: None,
                sensitivity: None,
                macro_f1: None,
                auroc: None,
                auprc: None,
                threshold_used: 0.5,
                n: 10,
                positives: 3,
            })
        };
        let rows_a = run_ablation(&specs, fake_report);
        let rows_b = run_ablation(&specs, fake_report);
        assert!(rows_a[0].outcome.is_ok());
        assert!(rows_a[1].outcome.is_err());
        assert_eq!(rows_a[0].label, "full");
        assert_eq!(
            format!("{:?}", rows_a.iter().map(|r| &r.outcome).collect::<Vec<_>>()),
            format!("{:?}", rows_b.iter().map(|r| &r.outcome).collect::<Vec<_>>()),
        );
    }

    #[test]
    fn default_ablation_specs_match_reported_rows() {
        let specs = default_ablation_specs();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[0].label(), "full");
        assert_eq!(specs[1].label(), "without reasoning");
        assert_eq!(specs[2].label(), "without reasoning+prediction");
        assert_eq!(specs[3].label(), "without reasoning+prediction+demographics");
    }

    #[test]
    fn distribution_export_roundtrips() {
        let labels = vec![1u8, 0, 1];
        let scores = vec![0.9, 0.12, 0.276];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dist.csv");
        export_probability_distribution(&labels, &scores, 0.276, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# threshold=0.276\nscore,label\n"));
        assert_eq!(text.lines().count(), 2 + labels.len());
        let (threshold, back_scores, back_labels) = read_probability_distribution(&path).unwrap();
        assert_eq!(threshold, 0.276);
        assert_eq!(back_scores, scores);
        assert_eq!(back_labels, labels);
    }

    #[test]
    fn csv_row_uses_null_for_undefined() {
        let report = metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 3, fn_: 1 }, 0.9);
        let row = report_csv_row(&report);
        assert!(row.contains("null"));
        assert_eq!(REPORT_CSV_HEADER.split(',').count(), row.split(',').count());
    }
}

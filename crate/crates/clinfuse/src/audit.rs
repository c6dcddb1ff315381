//! Access-logged visit and label store.
//!
//! Every read of a visit row or a label goes through [`CohortStore`] and is
//! recorded with the phase it happened in. The leakage audit then proves,
//! from the log alone, that no test-split visit influenced anything that
//! was fitted: statistics, vocabularies, the retrieval index, PCA, the
//! reasoning embedder, or model training.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::cohort::{DatasetSplit, PatientVisit, Task, VisitKey};

/// What a read was for. `Fit` covers everything that shapes train-side
/// state; `Transform` is per-visit inference; `Evaluate` is test scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Fit,
    Transform,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Visit,
    Label,
}

/// Cohort data behind an access log.
pub struct CohortStore {
    visits: BTreeMap<VisitKey, PatientVisit>,
    log: Mutex<BTreeMap<(VisitKey, Phase, Kind), u64>>,
}

impl CohortStore {
    pub fn new(visits: Vec<PatientVisit>) -> Self {
        let visits = visits.into_iter().map(|v| (v.key(), v)).collect();
        CohortStore { visits, log: Mutex::new(BTreeMap::new()) }
    }

    pub fn keys(&self) -> impl Iterator<Item = &VisitKey> {
        self.visits.keys()
    }

    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    /// Fetch a visit row, recording the access.
    pub fn visit(&self, key: &VisitKey, phase: Phase) -> Option<&PatientVisit> {
        let v = self.visits.get(key);
        if v.is_some() {
            self.record(key, phase, Kind::Visit);
        }
        v
    }

    /// Fetch a label, recording the access.
    pub fn label(&self, key: &VisitKey, task: Task, phase: Phase) -> Option<u8> {
        let l = self.visits.get(key).and_then(|v| v.label(task));
        if l.is_some() {
            self.record(key, phase, Kind::Label);
        }
        l
    }

    /// All prior visits of the same patient, time-ordered, logged under
    /// the same phase as the visit they contextualize.
    pub fn history(&self, key: &VisitKey, phase: Phase) -> Vec<&PatientVisit> {
        let mut prior: Vec<&PatientVisit> = self
            .visits
            .values()
            .filter(|v| v.patient_id == key.patient_id && v.visit_seq < key.visit_seq)
            .collect();
        prior.sort_by_key(|v| v.visit_seq);
        for v in &prior {
            self.record(&v.key(), phase, Kind::Visit);
        }
        prior
    }

    fn record(&self, key: &VisitKey, phase: Phase, kind: Kind) {
        let mut log = self.log.lock().unwrap();
        *log.entry((key.clone(), phase, kind)).or_insert(0) += 1;
    }

    /// Check the access log against a split. Violations:
    /// any test-key read during `Fit`, and any test-key *label* read
    /// outside `Evaluate`.
    pub fn audit(&self, split: &DatasetSplit) -> AuditReport {
        let log = self.log.lock().unwrap();
        let mut report = AuditReport::default();
        for ((key, phase, kind), &count) in log.iter() {
            let test = split.is_test(key);
            match (test, phase, kind) {
                (true, Phase::Fit, _) => {
                    report.test_reads_during_fit.push((key.clone(), count));
                }
                (true, Phase::Transform, Kind::Label) => {
                    report.test_label_reads_outside_eval.push((key.clone(), count));
                }
                _ => {}
            }
            match kind {
                Kind::Visit => report.visit_reads += count,
                Kind::Label => report.label_reads += count,
            }
        }
        report
    }
}

/// Outcome of the leakage audit; clean when both violation lists are empty.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub test_reads_during_fit: Vec<(VisitKey, u64)>,
    pub test_label_reads_outside_eval: Vec<(VisitKey, u64)>,
    pub visit_reads: u64,
    pub label_reads: u64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.test_reads_during_fit.is_empty() && self.test_label_reads_outside_eval.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{make_synthetic_cohort, split_patient_disjoint, CohortSpec};

    #[test]
    fn audit_flags_test_reads_during_fit() {
        let visits = make_synthetic_cohort(&CohortSpec::new(10, 0.3, 5, 1.0)).unwrap();
        let split = split_patient_disjoint(&visits, 0.7, 5).unwrap();
        let store = CohortStore::new(visits);
        let test_key = split.test_ids.iter().next().unwrap().clone();
        let train_key = split.train_ids.iter().next().unwrap().clone();

        store.visit(&train_key, Phase::Fit);
        assert!(store.audit(&split).is_clean());

        store.visit(&test_key, Phase::Fit);
        let report = store.audit(&split);
        assert_eq!(report.test_reads_during_fit.len(), 1);
        assert!(!report.is_clean());
    }

    #[test]
    fn audit_flags_test_label_reads_outside_eval() {
        let visits = make_synthetic_cohort(&CohortSpec::new(10, 0.3, 6, 1.0)).unwrap();
        let split = split_patient_disjoint(&visits, 0.7, 6).unwrap();
        let store = CohortStore::new(visits);
        let test_key = split.test_ids.iter().next().unwrap().clone();

        store.label(&test_key, Task::Readmission, Phase::Evaluate);
        assert!(store.audit(&split).is_clean());

        store.label(&test_key, Task::Readmission, Phase::Transform);
        assert!(!store.audit(&split).is_clean());
    }
}

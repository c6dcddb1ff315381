//! One-hot encoding of static demographics with train-built vocabularies
//! and explicit MISSING / UNSEEN slots; age enters as a z-score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::StaticRecord;

/// Categorical fields in fixed encoding order.
pub const STATIC_FIELDS: [&str; 7] = [
    "gender",
    "ethnicity",
    "admission_type",
    "admission_location",
    "insurance",
    "language",
    "religion",
];

fn field_value<'a>(record: &'a StaticRecord, field: &str) -> &'a Option<String> {
    match field {
        "gender" => &record.gender,
        "ethnicity" => &record.ethnicity,
        "admission_type" => &record.admission_type,
        "admission_location" => &record.admission_location,
        "insurance" => &record.insurance,
        "language" => &record.language,
        "religion" => &record.religion,
        other => panic!("unknown static field {other}"),
    }
}

/// Train-built categorical vocabulary plus age statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StaticVocab {
    /// Per field: category -> slot index (0-based, before MISSING/UNSEEN).
    pub categories: BTreeMap<String, BTreeMap<String, usize>>,
    pub age_mean: f64,
    pub age_std: f64,
}

impl StaticVocab {
    pub fn fit(records: &[&StaticRecord]) -> StaticVocab {
        let mut categories: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for field in STATIC_FIELDS {
            let mut values: Vec<String> = records
                .iter()
                .filter_map(|r| field_value(r, field).clone())
                .collect();
            values.sort();
            values.dedup();
            categories.insert(
                field.to_string(),
                values.into_iter().enumerate().map(|(i, v)| (v, i)).collect(),
            );
        }
        let n = records.len().max(1) as f64;
        let age_mean = records.iter().map(|r| r.age).sum::<f64>() / n;
        let age_var = records.iter().map(|r| (r.age - age_mean).powi(2)).sum::<f64>() / n;
        StaticVocab { categories, age_mean, age_std: age_var.sqrt() }
    }

    /// Width of the encoded block: z-scored age plus one-hot groups with
    /// their MISSING and UNSEEN slots.
    pub fn width(&self) -> usize {
        1 + STATIC_FIELDS
            .iter()
            .map(|f| self.categories[*f].len() + 2)
            .sum::<usize>()
    }
}

/// Encode one record against the train vocabulary. Unknown categories go
/// to the UNSEEN slot, absent values to MISSING.
pub fn encode_static(record: &StaticRecord, vocab: &StaticVocab) -> Vec<f64> {
    let mut out = Vec::with_capacity(vocab.width());
    let age_z = if vocab.age_std < 1e-9 { 0.0 } else { (record.age - vocab.age_mean) / vocab.age_std };
    out.push(age_z);
    for field in STATIC_FIELDS {
        let known = &vocab.categories[field];
        let mut slots = vec![0.0; known.len() + 2]; // + MISSING + UNSEEN
        match field_value(record, field) {
            None => slots[known.len()] = 1.0,
            Some(value) => match known.get(value) {
                Some(&i) => slots[i] = 1.0,
                None => slots[known.len() + 1] = 1.0,
            },
        }
        out.extend(slots);
    }
    out
}

//! Canonical visit-level data model plus a seeded synthetic cohort
//! generator with a planted, recoverable signal.
//!
//! The generator is what makes the rest of the pipeline testable without
//! restricted clinical data: labels are drawn from a logistic model over
//! two latent factors, one expressed in the structured channels (vitals,
//! age, diagnosis codes) and one expressed only in the note text, so
//! note-derived features carry signal the structured block cannot supply.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prediction task a label belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mortality,
    Readmission,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Mortality => write!(f, "mortality"),
            Task::Readmission => write!(f, "readmission"),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mortality" => Ok(Task::Mortality),
            "readmission" => Ok(Task::Readmission),
            other => Err(format!("unknown task '{other}' (expected mortality|readmission)")),
        }
    }
}

/// Identity of one hospital visit: `(patient_id, visit_seq)`.
///
/// Rendered as `patient_seq`, e.g. `25070_0`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VisitKey {
    pub patient_id: String,
    pub visit_seq: u32,
}

impl VisitKey {
    pub fn new(patient_id: impl Into<String>, visit_seq: u32) -> Self {
        VisitKey { patient_id: patient_id.into(), visit_seq }
    }
}

impl std::fmt::Display for VisitKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}_{}", self.patient_id, self.visit_seq)
    }
}

/// Demographic and admission attributes. `None` means missing and is
/// encoded downstream as a distinct sentinel category.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StaticRecord {
    pub age: f64,
    pub gender: Option<String>,
    pub ethnicity: Option<String>,
    pub admission_type: Option<String>,
    pub admission_location: Option<String>,
    pub insurance: Option<String>,
    pub language: Option<String>,
    pub religion: Option<String>,
}

/// Named observation series, each a list of `(timestamp, value)` pairs
/// with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesTable {
    pub channels: BTreeMap<String, Vec<(DateTime<Utc>, f64)>>,
}

/// One free-text clinical note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub note_time: DateTime<Utc>,
    pub author_role: String,
    pub text: String,
}

/// One hospital visit with all structured and unstructured data attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientVisit {
    pub patient_id: String,
    pub visit_seq: u32,
    pub admission_time: DateTime<Utc>,
    pub discharge_time: DateTime<Utc>,
    pub static_record: StaticRecord,
    pub timeseries: TimeSeriesTable,
    pub icd_codes: Vec<String>,
    pub procedures: Vec<String>,
    pub medications: Vec<String>,
    pub notes: Vec<ClinicalNote>,
    pub labels: BTreeMap<Task, u8>,
}

impl PatientVisit {
    pub fn key(&self) -> VisitKey {
        VisitKey::new(self.patient_id.clone(), self.visit_seq)
    }

    pub fn label(&self, task: Task) -> Option<u8> {
        self.labels.get(&task).copied()
    }
}

/// Patient-disjoint train/test partition over visit keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: BTreeSet<VisitKey>,
    pub test_ids: BTreeSet<VisitKey>,
}

impl DatasetSplit {
    pub fn is_train(&self, key: &VisitKey) -> bool {
        self.train_ids.contains(key)
    }

    pub fn is_test(&self, key: &VisitKey) -> bool {
        self.test_ids.contains(key)
    }
}

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("need at least 2 distinct patients to split, got {0}")]
    TooFewPatients(usize),
    #[error("train_fraction must be in (0,1), got {0}")]
    BadFraction(f64),
    #[error("positive_rate must be in (0,1), got {0}")]
    BadPositiveRate(f64),
}

/// One invariant violation found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub key: VisitKey,
    pub kind: String,
    pub detail: String,
}

/// Outcome of dataset validation; violations are data, not faults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub n_visits: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every dataset invariant and report all violations with the
/// offending visit's identity.
pub fn validate_dataset(visits: &[PatientVisit]) -> ValidationReport {
    let mut report = ValidationReport { violations: Vec::new(), n_visits: visits.len() };
    let mut seen: HashSet<VisitKey> = HashSet::new();
    for v in visits {
        let key = v.key();
        if !seen.insert(key.clone()) {
            report.push(&key, "duplicate visit key", "another visit shares (patient_id, visit_seq)");
        }
        if v.discharge_time < v.admission_time {
            report.push(&key, "negative stay", "discharge_time precedes admission_time");
        }
        if v.static_record.age < 0.0 {
            report.push(&key, "negative age", &format!("age = {}", v.static_record.age));
        }
        for (&task, &label) in &v.labels {
            if label > 1 {
                report.push(&key, "label out of range", &format!("{task} label = {label}"));
            }
        }
        for (channel, series) in &v.timeseries.channels {
            for pair in series.windows(2) {
                if pair[1].0 <= pair[0].0 {
                    report.push(
                        &key,
                        "non-increasing timestamps",
                        &format!("channel {channel} at {}", pair[1].0.to_rfc3339()),
                    );
                    break;
                }
            }
            if series.iter().any(|(_, x)| !x.is_finite()) {
                report.push(&key, "non-finite value", &format!("channel {channel}"));
            }
        }
        for (i, note) in v.notes.iter().enumerate() {
            if note.text.trim().is_empty() {
                report.push(&key, "empty note", &format!("note index {i}"));
            }
        }
    }
    report
}

impl ValidationReport {
    fn push(&mut self, key: &VisitKey, kind: &str, detail: &str) {
        self.violations.push(Violation {
            key: key.clone(),
            kind: kind.to_string(),
            detail: detail.to_string(),
        });
    }
}

/// Shuffle patients with a seeded PRNG and cut at `ceil(fraction * P)`;
/// all visits of a patient land on one side.
pub fn split_patient_disjoint(
    visits: &[PatientVisit],
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, CohortError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CohortError::BadFraction(train_fraction));
    }
    let mut patients: Vec<String> = visits
        .iter()
        .map(|v| v.patient_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if patients.len() < 2 {
        return Err(CohortError::TooFewPatients(patients.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let n_train = (train_fraction * patients.len() as f64).ceil() as usize;
    let n_train = n_train.min(patients.len() - 1).max(1);
    let train_patients: HashSet<&String> = patients.iter().take(n_train).collect();

    let mut split = DatasetSplit { train_ids: BTreeSet::new(), test_ids: BTreeSet::new() };
    for v in visits {
        if train_patients.contains(&v.patient_id) {
            split.train_ids.insert(v.key());
        } else {
            split.test_ids.insert(v.key());
        }
    }
    Ok(split)
}

/// Parameters for [`make_synthetic_cohort`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub positive_rate: f64,
    pub seed: u64,
    /// Scale of the planted logistic signal; 0 gives pure label noise.
    pub planted_signal_strength: f64,
    pub task: Task,
}

impl CohortSpec {
    pub fn new(n_patients: usize, positive_rate: f64, seed: u64, strength: f64) -> Self {
        CohortSpec {
            n_patients,
            positive_rate,
            seed,
            planted_signal_strength: strength,
            task: Task::Readmission,
        }
    }

    pub fn with_task(mut self, task: Task) -> Self {
        self.task = task;
        self
    }
}

/// Planted ground truth for one synthetic visit, exposed for oracle tests.
#[derive(Debug, Clone)]
pub struct PlantedSignal {
    pub z_struct: f64,
    pub z_note: f64,
    pub logit: f64,
}

/// Registry of the time-series channels the generator and the feature
/// pipeline agree on, in fixed order.
pub const CHANNELS: [&str; 14] = [
    "heart_rate",
    "sbp",
    "dbp",
    "mbp",
    "spo2",
    "gcs_eye",
    "gcs_motor",
    "gcs_verbal",
    "gcs_total",
    "glucose",
    "resp_rate",
    "temperature",
    "weight",
    "ph",
];

/// Concepts that mark an elevated-risk narrative in synthetic notes.
pub const RISK_CONCEPTS: [&str; 12] = [
    "septicemia",
    "respiratory failure",
    "congestive heart failure",
    "shock",
    "multi-organ failure",
    "mechanical ventilation",
    "acute kidney injury",
    "pneumonia",
    "unstable angina pectoris",
    "secondary malignancy",
    "severe anemia",
    "altered mental status",
];

/// Concepts that mark a reassuring narrative in synthetic notes.
pub const BENIGN_CONCEPTS: [&str; 12] = [
    "stable vitals",
    "routine follow up",
    "ambulating independently",
    "tolerating oral intake",
    "pain well controlled",
    "normal sinus rhythm",
    "clear lung fields",
    "afebrile overnight",
    "improving renal function",
    "discharge planning",
    "physical therapy",
    "unremarkable labs",
];

/// Union of every concept the generator can plant in note text.
pub fn synthetic_vocabulary() -> Vec<String> {
    RISK_CONCEPTS.iter().chain(BENIGN_CONCEPTS.iter()).map(|s| s.to_string()).collect()
}

const RISK_ICD: [&str; 12] = [
    "99591", "0389", "5845", "25000", "4280", "41401", "1629", "49121", "29410", "5856", "5712",
    "27900",
];
const BENIGN_ICD: [&str; 8] = ["V700", "78099", "7295", "4659", "3051", "36901", "7242", "5300"];

const RISK_PROCEDURES: [&str; 6] = [
    "mechanical ventilation",
    "tracheostomy",
    "blood transfusion",
    "vascular catheterization",
    "hemodialysis",
    "cardiac rhythm conversion",
];
const BENIGN_PROCEDURES: [&str; 5] = [
    "routine imaging",
    "physical therapy evaluation",
    "diagnostic ultrasound",
    "wound dressing change",
    "nutrition consult",
];

const RISK_MEDICATIONS: [&str; 6] = [
    "corticosteroids",
    "opioid analgesics",
    "cardiac stimulants",
    "broad spectrum antibiotics",
    "vasopressors",
    "beta blocking agents",
];
const BENIGN_MEDICATIONS: [&str; 5] = [
    "multivitamins",
    "stool softeners",
    "topical emollients",
    "antacids",
    "saline flush",
];

const GENDERS: [&str; 2] = ["F", "M"];
const ETHNICITIES: [&str; 4] = ["WHITE", "BLACK", "HISPANIC", "ASIAN"];
const ADMISSION_TYPES: [&str; 3] = ["EMERGENCY", "ELECTIVE", "URGENT"];
const ADMISSION_LOCATIONS: [&str; 3] =
    ["EMERGENCY ROOM ADMIT", "PHYS REFERRAL", "TRANSFER FROM HOSPITAL"];
const INSURANCES: [&str; 4] = ["Medicare", "Private", "Medicaid", "Self Pay"];
const LANGUAGES: [&str; 3] = ["ENGL", "SPAN", "RUSS"];
const RELIGIONS: [&str; 4] = ["CATHOLIC", "PROTESTANT", "JEWISH", "BUDDHIST"];

/// Channel baselines: (mean, per-reading noise sd, loading on `z_struct`).
const CHANNEL_MODEL: [(&str, f64, f64, f64); 14] = [
    ("heart_rate", 82.0, 6.0, 9.0),
    ("sbp", 122.0, 8.0, -7.0),
    ("dbp", 71.0, 6.0, -4.0),
    ("mbp", 88.0, 6.0, -5.0),
    ("spo2", 97.0, 1.0, -1.6),
    ("gcs_eye", 3.8, 0.3, -0.5),
    ("gcs_motor", 5.7, 0.3, -0.6),
    ("gcs_verbal", 4.6, 0.4, -0.7),
    ("gcs_total", 14.1, 0.6, -1.8),
    ("glucose", 112.0, 18.0, 14.0),
    ("resp_rate", 18.0, 2.5, 2.2),
    ("temperature", 37.0, 0.35, 0.3),
    ("weight", 80.0, 1.0, 0.0),
    ("ph", 7.40, 0.03, -0.035),
];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

struct VisitDraft {
    visit: PatientVisit,
    planted: PlantedSignal,
}

/// Generate a schema-complete cohort whose labels follow a logistic model
/// over planted latent factors. The empirical positive rate is calibrated
/// to `spec.positive_rate` by solving for the intercept on the realized
/// latent sample before labels are drawn.
pub fn make_synthetic_cohort(spec: &CohortSpec) -> Result<Vec<PatientVisit>, CohortError> {
    make_synthetic_cohort_detailed(spec).map(|(visits, _)| visits)
}

/// Like [`make_synthetic_cohort`] but also returns the planted per-visit
/// ground truth, keyed in visit order.
pub fn make_synthetic_cohort_detailed(
    spec: &CohortSpec,
) -> Result<(Vec<PatientVisit>, BTreeMap<VisitKey, PlantedSignal>), CohortError> {
    if !(spec.positive_rate > 0.0 && spec.positive_rate < 1.0) {
        return Err(CohortError::BadPositiveRate(spec.positive_rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();

    let mut drafts: Vec<VisitDraft> = Vec::new();
    for p in 0..spec.n_patients {
        let patient_id = format!("{}", 10_000 + p);
        let n_visits = match rng.gen::<f64>() {
            x if x < 0.60 => 1,
            x if x < 0.90 => 2,
            _ => 3,
        };
        let gender = GENDERS[rng.gen_range(0..GENDERS.len())].to_string();
        let ethnicity = ETHNICITIES[rng.gen_range(0..ETHNICITIES.len())].to_string();
        let language = LANGUAGES[rng.gen_range(0..LANGUAGES.len())].to_string();
        let insurance = INSURANCES[rng.gen_range(0..INSURANCES.len())].to_string();
        let religion = if rng.gen::<f64>() < 0.2 {
            None
        } else {
            Some(RELIGIONS[rng.gen_range(0..RELIGIONS.len())].to_string())
        };
        let base_age = 18.0 + 60.0 * rng.gen::<f64>();

        let mut admission =
            base + Duration::hours(rng.gen_range(0..24 * 365) as i64) + Duration::minutes(p as i64 % 60);
        for seq in 0..n_visits {
            let z_struct = standard_normal(&mut rng);
            let z_note = standard_normal(&mut rng);
            let stay_hours = rng.gen_range(6..72);
            let discharge = admission + Duration::hours(stay_hours as i64);

            let age = (base_age + 1.5 * z_struct.max(0.0) + seq as f64 * 0.4).clamp(18.0, 95.0);
            let static_record = StaticRecord {
                age,
                gender: Some(gender.clone()),
                ethnicity: Some(ethnicity.clone()),
                admission_type: Some(
                    ADMISSION_TYPES[if z_struct > 0.8 {
                        0
                    } else {
                        rng.gen_range(0..ADMISSION_TYPES.len())
                    }]
                    .to_string(),
                ),
                admission_location: Some(
                    ADMISSION_LOCATIONS[rng.gen_range(0..ADMISSION_LOCATIONS.len())].to_string(),
                ),
                insurance: Some(insurance.clone()),
                language: Some(language.clone()),
                religion: religion.clone(),
            };

            let timeseries = gen_timeseries(&mut rng, admission, stay_hours, z_struct);
            let (icd_codes, procedures, medications) = gen_coded(&mut rng, z_struct);
            let notes = gen_notes(&mut rng, admission, z_note);

            let visit = PatientVisit {
                patient_id: patient_id.clone(),
                visit_seq: seq,
                admission_time: admission,
                discharge_time: discharge,
                static_record,
                timeseries,
                icd_codes,
                procedures,
                medications,
                notes,
                labels: BTreeMap::new(),
            };
            drafts.push(VisitDraft { visit, planted: PlantedSignal { z_struct, z_note, logit: 0.0 } });
            admission = discharge + Duration::hours(rng.gen_range(24..24 * 40) as i64);
        }
    }

    // Combined latent score; the note factor is weighted heavier so the
    // reasoning path carries signal the structured block cannot replace.
    const W_STRUCT: f64 = 0.55;
    const W_NOTE: f64 = 0.85;
    let norm = (W_STRUCT * W_STRUCT + W_NOTE * W_NOTE).sqrt();
    let scores: Vec<f64> = drafts
        .iter()
        .map(|d| {
            spec.planted_signal_strength * (W_STRUCT * d.planted.z_struct + W_NOTE * d.planted.z_note)
                / norm
        })
        .collect();
    let intercept = calibrate_intercept(&scores, spec.positive_rate);

    let mut planted = BTreeMap::new();
    let mut visits = Vec::with_capacity(drafts.len());
    for (mut draft, s) in drafts.into_iter().zip(scores) {
        let logit = s + intercept;
        let label = u8::from(rng.gen::<f64>() < sigmoid(logit));
        draft.visit.labels.insert(spec.task, label);
        draft.planted.logit = logit;
        planted.insert(draft.visit.key(), draft.planted);
        visits.push(draft.visit);
    }
    Ok((visits, planted))
}

/// Solve `mean(sigmoid(s_i + b)) = target` for `b` by bisection on the
/// realized score sample.
fn calibrate_intercept(scores: &[f64], target: f64) -> f64 {
    let mean_p = |b: f64| scores.iter().map(|&s| sigmoid(s + b)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn gen_timeseries(
    rng: &mut ChaCha8Rng,
    admission: DateTime<Utc>,
    stay_hours: u32,
    z_struct: f64,
) -> TimeSeriesTable {
    let mut channels = BTreeMap::new();
    for (name, mean, sd, loading) in CHANNEL_MODEL {
        if rng.gen::<f64>() > 0.88 {
            continue; // channel never charted this stay
        }
        let center = mean + loading * z_struct;
        let mut series = Vec::new();
        for h in 0..stay_hours {
            if rng.gen::<f64>() > 0.7 {
                continue; // reading missing this hour
            }
            let jitter = Duration::minutes(rng.gen_range(0..30) as i64);
            let t = admission + Duration::hours(h as i64) + jitter;
            let mut x = center + sd * standard_normal(rng);
            if name == "spo2" {
                x = x.min(100.0);
            }
            if name.starts_with("gcs") {
                x = x.round().max(1.0);
            }
            series.push((t, x));
        }
        if !series.is_empty() {
            channels.insert(name.to_string(), series);
        }
    }
    TimeSeriesTable { channels }
}

fn gen_coded(rng: &mut ChaCha8Rng, z_struct: f64) -> (Vec<String>, Vec<String>, Vec<String>) {
    let p_risk = sigmoid(1.1 * z_struct - 0.8);
    let mut icd = Vec::new();
    for code in RISK_ICD {
        if rng.gen::<f64>() < p_risk * 0.45 {
            icd.push(code.to_string());
        }
    }
    for code in BENIGN_ICD {
        if rng.gen::<f64>() < 0.25 {
            icd.push(code.to_string());
        }
    }
    if icd.is_empty() {
        icd.push(BENIGN_ICD[rng.gen_range(0..BENIGN_ICD.len())].to_string());
    }

    let mut procedures = Vec::new();
    for p in RISK_PROCEDURES {
        if rng.gen::<f64>() < p_risk * 0.3 {
            procedures.push(p.to_string());
        }
    }
    for p in BENIGN_PROCEDURES {
        if rng.gen::<f64>() < 0.2 {
            procedures.push(p.to_string());
        }
    }

    let mut medications = Vec::new();
    for m in RISK_MEDICATIONS {
        if rng.gen::<f64>() < p_risk * 0.4 {
            medications.push(m.to_string());
        }
    }
    for m in BENIGN_MEDICATIONS {
        if rng.gen::<f64>() < 0.3 {
            medications.push(m.to_string());
        }
    }
    (icd, procedures, medications)
}

fn gen_notes(rng: &mut ChaCha8Rng, admission: DateTime<Utc>, z_note: f64) -> Vec<ClinicalNote> {
    if rng.gen::<f64>() < 0.08 {
        return Vec::new(); // some visits carry no physician note
    }
    let n_notes = 1 + usize::from(rng.gen::<f64>() < 0.35);
    let risk_mentions = ((2.5 + 2.2 * z_note).round().max(0.0) as usize).min(8);
    let benign_mentions = ((2.5 - 2.2 * z_note).round().max(0.0) as usize).min(8);
    let mut notes = Vec::new();
    for i in 0..n_notes {
        let mut sentences = vec![format!(
            "Progress note day {}: patient examined at bedside.",
            i + 1
        )];
        for _ in 0..risk_mentions.div_ceil(n_notes) {
            let c = RISK_CONCEPTS[rng.gen_range(0..RISK_CONCEPTS.len())];
            sentences.push(format!("Assessment notes {c} requiring close monitoring."));
        }
        for _ in 0..benign_mentions.div_ceil(n_notes) {
            let c = BENIGN_CONCEPTS[rng.gen_range(0..BENIGN_CONCEPTS.len())];
            sentences.push(format!("Exam shows {c} today."));
        }
        sentences.push("Plan discussed with the care team.".to_string());
        notes.push(ClinicalNote {
            note_time: admission + Duration::hours(6 * (i as i64 + 1)),
            author_role: "physician".to_string(),
            text: sentences.join(" "),
        });
    }
    notes
}

/// Synthetic knowledge triples over the generator vocabulary, suitable
/// for the TSV triples format: `(subject, relation, object, source_id)`.
pub fn make_synthetic_triples(seed: u64) -> Vec<(String, String, String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relations = ["treated with", "is a type of", "associated with", "can lead to", "impacts"];
    let mut triples = Vec::new();
    let vocab = synthetic_vocabulary();
    // A dense core relating risk concepts to interventions and outcomes.
    for (i, s) in RISK_CONCEPTS.iter().enumerate() {
        for o in RISK_CONCEPTS.iter().skip(i + 1).take(3) {
            triples.push((
                s.to_string(),
                "can lead to".to_string(),
                o.to_string(),
                format!("pm{}", rng.gen_range(1000..9999)),
            ));
        }
        let med = RISK_MEDICATIONS[i % RISK_MEDICATIONS.len()];
        triples.push((
            s.to_string(),
            "treated with".to_string(),
            med.to_string(),
            format!("pm{}", rng.gen_range(1000..9999)),
        ));
    }
    // A sparse periphery over benign concepts.
    for (i, s) in BENIGN_CONCEPTS.iter().enumerate() {
        let o = &vocab[(i * 7 + 3) % vocab.len()];
        if *s != o.as_str() {
            triples.push((
                s.to_string(),
                relations[i % relations.len()].to_string(),
                o.clone(),
                format!("pm{}", rng.gen_range(1000..9999)),
            ));
        }
    }
    triples
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_visit(pid: &str, seq: u32) -> PatientVisit {
        let t0 = Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap();
        PatientVisit {
            patient_id: pid.to_string(),
            visit_seq: seq,
            admission_time: t0,
            discharge_time: t0 + Duration::hours(24),
            static_record: StaticRecord { age: 60.0, ..Default::default() },
            timeseries: TimeSeriesTable::default(),
            icd_codes: vec!["25000".into()],
            procedures: vec![],
            medications: vec![],
            notes: vec![],
            labels: BTreeMap::from([(Task::Readmission, 0)]),
        }
    }

    #[test]
    fn duplicate_visit_key_is_reported() {
        let visits = vec![tiny_visit("a", 0), tiny_visit("a", 0)];
        let report = validate_dataset(&visits);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, "duplicate visit key");
    }

    #[test]
    fn negative_stay_is_reported() {
        let mut v = tiny_visit("a", 0);
        v.discharge_time = v.admission_time - Duration::hours(1);
        let report = validate_dataset(&[v]);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, "negative stay");
    }

    #[test]
    fn well_formed_fixture_is_clean() {
        let visits = vec![tiny_visit("a", 0), tiny_visit("a", 1), tiny_visit("b", 0)];
        assert!(validate_dataset(&visits).is_valid());
    }

    #[test]
    fn split_respects_fraction_and_patient_disjointness() {
        let mut visits = Vec::new();
        for p in 0..10 {
            for s in 0..2 {
                visits.push(tiny_visit(&format!("p{p}"), s));
            }
        }
        let split = split_patient_disjoint(&visits, 0.8, 7).unwrap();
        let train_patients: BTreeSet<_> =
            split.train_ids.iter().map(|k| k.patient_id.clone()).collect();
        let test_patients: BTreeSet<_> =
            split.test_ids.iter().map(|k| k.patient_id.clone()).collect();
        assert_eq!(train_patients.len(), 8);
        assert_eq!(test_patients.len(), 2);
        assert!(train_patients.is_disjoint(&test_patients));
        assert_eq!(split.train_ids.len() + split.test_ids.len(), visits.len());
    }

    #[test]
    fn split_is_deterministic() {
        let visits: Vec<_> = (0..12).map(|p| tiny_visit(&format!("p{p}"), 0)).collect();
        let a = split_patient_disjoint(&visits, 0.75, 3).unwrap();
        let b = split_patient_disjoint(&visits, 0.75, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_requires_two_patients() {
        let visits = vec![tiny_visit("only", 0), tiny_visit("only", 1)];
        assert!(matches!(
            split_patient_disjoint(&visits, 0.8, 1),
            Err(CohortError::TooFewPatients(1))
        ));
    }

    #[test]
    fn synthetic_rate_matches_readmission_imbalance() {
        let spec = CohortSpec::new(5000, 0.04, 1, 2.0);
        let visits = make_synthetic_cohort(&spec).unwrap();
        let labeled = visits.iter().filter(|v| v.label(Task::Readmission).is_some()).count();
        let pos: usize =
            visits.iter().filter_map(|v| v.label(Task::Readmission)).map(usize::from).sum();
        let rate = pos as f64 / labeled as f64;
        assert!((rate - 0.04).abs() < 0.015, "rate {rate}");
    }

    #[test]
    fn synthetic_rate_matches_mortality_imbalance() {
        let spec = CohortSpec::new(5000, 0.135, 2, 2.0).with_task(Task::Mortality);
        let visits = make_synthetic_cohort(&spec).unwrap();
        let pos: usize =
            visits.iter().filter_map(|v| v.label(Task::Mortality)).map(usize::from).sum();
        let rate = pos as f64 / visits.len() as f64;
        assert!((rate - 0.135).abs() < 0.015, "rate {rate}");
    }

    #[test]
    fn synthetic_cohort_is_byte_identical_across_runs() {
        let spec = CohortSpec::new(50, 0.1, 9, 1.5);
        let a = make_synthetic_cohort(&spec).unwrap();
        let b = make_synthetic_cohort(&spec).unwrap();
        let ser = |vs: &[PatientVisit]| {
            vs.iter().map(|v| serde_json::to_string(v).unwrap()).collect::<Vec<_>>().join("\n")
        };
        assert_eq!(ser(&a), ser(&b));
    }

    #[test]
    fn synthetic_cohort_passes_validation() {
        let spec = CohortSpec::new(200, 0.1, 4, 2.0);
        let visits = make_synthetic_cohort(&spec).unwrap();
        let report = validate_dataset(&visits);
        assert!(report.is_valid(), "violations: {:?}", report.violations);
    }

    #[test]
    fn bad_positive_rate_is_rejected() {
        let spec = CohortSpec::new(10, 1.5, 0, 1.0);
        assert!(matches!(make_synthetic_cohort(&spec), Err(CohortError::BadPositiveRate(_))));
    }

    #[test]
    fn planted_note_factor_moves_risk_mentions() {
        // Strong positive z_note should put far more risk than benign
        // concepts into the note text; reverse for negative.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let count = |notes: &[ClinicalNote], vocab: &[&str]| -> usize {
            notes
                .iter()
                .map(|n| vocab.iter().filter(|c| n.text.contains(*c)).count())
                .sum()
        };
        let hi = gen_notes(&mut rng, t0, 2.0);
        let lo = gen_notes(&mut rng, t0, -2.0);
        assert!(count(&hi, &RISK_CONCEPTS) > count(&hi, &BENIGN_CONCEPTS));
        assert!(count(&lo, &BENIGN_CONCEPTS) > count(&lo, &RISK_CONCEPTS));
    }
}

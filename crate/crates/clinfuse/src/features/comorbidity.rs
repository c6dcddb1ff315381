//! ICD-9 comorbidity flags via prefix matching.

use serde::{Deserialize, Serialize};

/// Comorbidity categories in fixed feature order.
pub const CATEGORIES: [&str; 11] = [
    "explicit_sepsis",
    "infection",
    "organ_dysfunction",
    "diabetes",
    "cardiovascular",
    "cancer",
    "lung_disease",
    "dementia",
    "kidney_dialysis",
    "liver_disease",
    "immune_disorder",
];

const DISPLAY_NAMES: [&str; 11] = [
    "explicit sepsis",
    "infection",
    "organ dysfunction",
    "diabetes",
    "cardiovascular disease",
    "cancer",
    "lung disease",
    "dementia",
    "kidney dialysis",
    "liver disease",
    "immune disorder",
];

enum Rule {
    Prefixes(&'static [&'static str]),
    /// Numeric range over the leading three digits, inclusive.
    Range(u32, u32),
}

const RULES: [Rule; 11] = [
    Rule::Prefixes(&["99591", "99592", "78552", "038"]),
    Rule::Range(1, 139),
    Rule::Prefixes(&["584", "7855", "570", "572", "51881", "7991", "293"]),
    Rule::Prefixes(&["250"]),
    Rule::Range(390, 429),
    Rule::Range(140, 189),
    Rule::Range(490, 505),
    Rule::Prefixes(&["290", "294"]),
    Rule::Prefixes(&["585"]),
    Rule::Prefixes(&["570", "571", "572"]),
    Rule::Prefixes(&["279"]),
];

fn leading_three_digits(code: &str) -> Option<u32> {
    let head: String = code.chars().take(3).collect();
    if head.len() == 3 && head.chars().all(|c| c.is_ascii_digit()) {
        head.parse().ok()
    } else {
        None
    }
}

fn matches_rule(code: &str, rule: &Rule) -> bool {
    match rule {
        Rule::Prefixes(prefixes) => prefixes.iter().any(|p| code.starts_with(p)),
        Rule::Range(lo, hi) => {
            leading_three_digits(code).map(|d| d >= *lo && d <= *hi).unwrap_or(false)
        }
    }
}

/// Per-category code counts; the flag for a category is `count > 0`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComorbidityFlags {
    pub counts: [u32; 11],
}

impl ComorbidityFlags {
    pub fn flag(&self, category_index: usize) -> bool {
        self.counts[category_index] > 0
    }

    pub fn by_name(&self, name: &str) -> Option<(bool, u32)> {
        CATEGORIES
            .iter()
            .position(|c| *c == name)
            .map(|i| (self.flag(i), self.counts[i]))
    }

    /// Fixed-width numeric block: 11 flags then 11 counts.
    pub fn to_feature_block(&self) -> Vec<f64> {
        let mut out: Vec<f64> =
            (0..CATEGORIES.len()).map(|i| if self.flag(i) { 1.0 } else { 0.0 }).collect();
        out.extend(self.counts.iter().map(|&c| c as f64));
        out
    }

    pub const WIDTH: usize = 22;
}

/// Count matching codes per category; a code may hit several categories.
pub fn comorbidity_flags(icd_codes: &[String]) -> ComorbidityFlags {
    let mut flags = ComorbidityFlags::default();
    for code in icd_codes {
        let code = code.trim();
        for (i, rule) in RULES.iter().enumerate() {
            if matches_rule(code, rule) {
                flags.counts[i] += 1;
            }
        }
    }
    flags
}

/// Pretty name of the first category a code falls in, for rendering
/// patient context.
pub fn category_display(code: &str) -> Option<&'static str> {
    RULES
        .iter()
        .position(|rule| matches_rule(code.trim(), rule))
        .map(|i| DISPLAY_NAMES[i])
}

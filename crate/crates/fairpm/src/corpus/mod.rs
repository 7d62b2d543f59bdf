//! Patients, trials, eligibility criteria, and the synthetic corpus built
//! from them.
//!
//! Ground truth comes from a rule oracle attached to every criterion, so any
//! label in a generated corpus can be recomputed exactly. Group bias is
//! planted in code prevalence, never in labels directly: it reaches the
//! labels only through the oracle.

mod generate;
mod io;
mod split;

pub use generate::{
    generate, CriteriaRange, GeneratorConfig, GroupProportions, Proportions, SplitRatios,
    VocabularySizes,
};
pub use io::{load_corpus, load_splits, save_corpus, save_splits, write_atomic};
pub use split::split;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path} line {line}: {message}")]
    Invalid {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    InvalidRatios([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeCategory {
    Diagnosis,
    Medication,
    Procedure,
}

impl CodeCategory {
    pub const ALL: [CodeCategory; 3] = [
        CodeCategory::Diagnosis,
        CodeCategory::Medication,
        CodeCategory::Procedure,
    ];

    pub fn word(&self) -> &'static str {
        match self {
            CodeCategory::Diagnosis => "diagnosis",
            CodeCategory::Medication => "medication",
            CodeCategory::Procedure => "procedure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MedicalCode {
    pub category: CodeCategory,
    pub code: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Race {
    White,
    Others,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

/// A longitudinal record: ordered visits of medical codes plus the sensitive
/// attributes carried alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PatientRecord {
    pub patient_id: String,
    pub visits: Vec<Vec<MedicalCode>>,
    pub race: Race,
    pub gender: Gender,
    pub age: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    Inclusion,
    Exclusion,
}

/// Structured rule behind a criterion. Total over any patient record: age
/// rules always decide; code rules are indeterminate when the record has no
/// codes of the referenced category at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OraclePredicate {
    CodeAny {
        category: CodeCategory,
        codes: Vec<String>,
    },
    AgeAtLeast {
        years: u32,
    },
    AgeAtMost {
        years: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Criterion {
    pub criterion_id: String,
    pub kind: CriterionKind,
    pub text: Vec<String>,
    pub oracle_predicate: OraclePredicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Trial {
    pub trial_id: String,
    pub inclusion_criteria: Vec<Criterion>,
    pub exclusion_criteria: Vec<Criterion>,
}

impl Trial {
    pub fn criteria(&self) -> impl Iterator<Item = &Criterion> {
        self.inclusion_criteria
            .iter()
            .chain(self.exclusion_criteria.iter())
    }

    /// Ground-truth trial eligibility: every inclusion criterion holds and no
    /// exclusion criterion holds, judged by the rule oracle.
    pub fn true_eligible(&self, patient: &PatientRecord) -> bool {
        self.inclusion_criteria
            .iter()
            .all(|c| oracle_label(patient, c) == Label::Inclusion)
            && !self
                .exclusion_criteria
                .iter()
                .any(|c| oracle_label(patient, c) == Label::Exclusion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Inclusion,
    Exclusion,
    Unknown,
}

impl Label {
    /// Class index in prediction order (inclusion, exclusion, unknown).
    pub fn index(&self) -> usize {
        match self {
            Label::Inclusion => 0,
            Label::Exclusion => 1,
            Label::Unknown => 2,
        }
    }

    pub fn from_index(i: usize) -> Label {
        match i {
            0 => Label::Inclusion,
            1 => Label::Exclusion,
            _ => Label::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LabeledPair {
    pub patient_id: String,
    pub criterion_id: String,
    pub label: Label,
}

/// Labels a (patient, criterion) pair. A holding predicate yields the
/// criterion's own kind; a failing or indeterminate predicate yields
/// `Unknown`.
pub fn oracle_label(patient: &PatientRecord, criterion: &Criterion) -> Label {
    let holds = match &criterion.oracle_predicate {
        OraclePredicate::AgeAtLeast { years } => Some(patient.age >= *years),
        OraclePredicate::AgeAtMost { years } => Some(patient.age <= *years),
        OraclePredicate::CodeAny { category, codes } => {
            let mut saw_category = false;
            let mut hit = false;
            for visit in &patient.visits {
                for mc in visit {
                    if mc.category == *category {
                        saw_category = true;
                        if codes.contains(&mc.code) {
                            hit = true;
                        }
                    }
                }
            }
            if saw_category {
                Some(hit)
            } else {
                None // category absent: indeterminate
            }
        }
    };
    match holds {
        Some(true) => match criterion.kind {
            CriterionKind::Inclusion => Label::Inclusion,
            CriterionKind::Exclusion => Label::Exclusion,
        },
        _ => Label::Unknown,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub patients: Vec<PatientRecord>,
    pub trials: Vec<Trial>,
    pub pairs: Vec<LabeledPair>,
}

impl Corpus {
    pub fn criteria(&self) -> impl Iterator<Item = &Criterion> {
        self.trials.iter().flat_map(|t| t.criteria())
    }

    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.patient_id == id)
    }

    pub fn criterion(&self, id: &str) -> Option<&Criterion> {
        self.criteria().find(|c| c.criterion_id == id)
    }
}

/// Patient-id lists per split; a patient's pairs always travel with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// The two audited sensitive attributes. Each is binary in this corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitiveAttribute {
    Race,
    Gender,
}

impl SensitiveAttribute {
    /// Group index of a patient under this attribute, in the order of
    /// [`SensitiveAttribute::group_names`].
    pub fn group_of(&self, patient: &PatientRecord) -> usize {
        match self {
            SensitiveAttribute::Race => match patient.race {
                Race::White => 0,
                Race::Others => 1,
            },
            SensitiveAttribute::Gender => match patient.gender {
                Gender::Male => 0,
                Gender::Female => 1,
            },
        }
    }

    pub fn group_names(&self) -> [&'static str; 2] {
        match self {
            SensitiveAttribute::Race => ["white", "others"],
            SensitiveAttribute::Gender => ["male", "female"],
        }
    }
}

impl std::fmt::Display for SensitiveAttribute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SensitiveAttribute::Race => write!(f, "race"),
            SensitiveAttribute::Gender => write!(f, "gender"),
        }
    }
}

impl std::str::FromStr for SensitiveAttribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "race" => Ok(SensitiveAttribute::Race),
            "gender" => Ok(SensitiveAttribute::Gender),
            other => Err(format!("unknown sensitive attribute `{other}`")),
        }
    }
}

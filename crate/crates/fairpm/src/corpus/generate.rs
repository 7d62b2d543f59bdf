//! Seeded synthetic-corpus generator with controllable group bias.
//!
//! Each category vocabulary is split into four equal blocks along two axes:
//! group-marked vs neutral, and senior vs junior. A patient's code draws pick
//! the group-marked half with probability `0.5 * (1 + b)` for the advantaged
//! group and `0.5 * (1 - b)` for the other, where `b` is `bias_strength`.
//! The senior half is picked with a probability that rises with patient age,
//! which gives age criteria a learnable (and biased-code-correlated) signal.
//!
//! Inclusion criteria reference group-marked codes or ages only; exclusion
//! criteria reference neutral codes or ages. Together with per-patient RNG
//! streams that consume draws in an order independent of `b`, this makes the
//! per-group inclusion-label rate gap pointwise monotone in `b` for a fixed
//! seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    oracle_label, CodeCategory, Corpus, CorpusError, Criterion, CriterionKind, Gender,
    LabeledPair, MedicalCode, OraclePredicate, PatientRecord, Race, SensitiveAttribute, Trial,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriteriaRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabularySizes {
    pub diagnosis: usize,
    pub medication: usize,
    pub procedure: usize,
}

impl VocabularySizes {
    fn size(&self, category: CodeCategory) -> usize {
        match category {
            CodeCategory::Diagnosis => self.diagnosis,
            CodeCategory::Medication => self.medication,
            CodeCategory::Procedure => self.procedure,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub first: f64,
    pub second: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GroupProportions {
    /// (white, others)
    pub race: Proportions,
    /// (male, female)
    pub gender: Proportions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.valid, self.test]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub patient_count: usize,
    pub trial_count: usize,
    pub criteria_per_trial: CriteriaRange,
    pub vocabulary_sizes: VocabularySizes,
    pub group_proportions: GroupProportions,
    /// Correlation knob in [0, 1] between the biased attribute and code
    /// prevalence (and hence, through the oracle, label rates).
    pub bias_strength: f64,
    /// Which sensitive attribute the planted bias tracks.
    pub bias_attribute: SensitiveAttribute,
    pub split_ratios: SplitRatios,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            patient_count: 825,
            trial_count: 6,
            criteria_per_trial: CriteriaRange { min: 4, max: 6 },
            vocabulary_sizes: VocabularySizes {
                diagnosis: 40,
                medication: 28,
                procedure: 20,
            },
            // Whole-dataset proportions from the stroke-trial demographics
            // this corpus is sized after.
            group_proportions: GroupProportions {
                race: Proportions {
                    first: 0.347,
                    second: 0.653,
                },
                gender: Proportions {
                    first: 0.571,
                    second: 0.429,
                },
            },
            bias_strength: 0.75,
            bias_attribute: SensitiveAttribute::Race,
            split_ratios: SplitRatios {
                train: 0.624,
                valid: 0.072,
                test: 0.304,
            },
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::InvalidConfig(msg));
        if self.patient_count == 0 {
            return bad("patient-count must be positive".into());
        }
        if self.trial_count == 0 {
            return bad("trial-count must be positive".into());
        }
        let r = &self.criteria_per_trial;
        if r.min < 2 || r.min > r.max {
            return bad(format!(
                "criteria-per-trial range {}..{} must satisfy 2 <= min <= max",
                r.min, r.max
            ));
        }
        for (name, size) in [
            ("diagnosis", self.vocabulary_sizes.diagnosis),
            ("medication", self.vocabulary_sizes.medication),
            ("procedure", self.vocabulary_sizes.procedure),
        ] {
            if size < 8 || size % 4 != 0 {
                return bad(format!(
                    "{name} vocabulary size {size} must be >= 8 and divisible by 4"
                ));
            }
        }
        for (name, p) in [
            ("race", self.group_proportions.race),
            ("gender", self.group_proportions.gender),
        ] {
            if p.first < 0.0 || p.second < 0.0 || (p.first + p.second - 1.0).abs() > 1e-9 {
                return bad(format!(
                    "{name} proportions ({}, {}) must be non-negative and sum to 1",
                    p.first, p.second
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.bias_strength) {
            return bad(format!(
                "bias-strength {} must lie in [0, 1]",
                self.bias_strength
            ));
        }
        let s = self.split_ratios.as_array();
        if s.iter().any(|&v| v < 0.0) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidRatios(s));
        }
        Ok(())
    }
}

/// Mixes (seed, salt, index) into an independent deterministic RNG stream.
fn stream_rng(seed: u64, salt: u64, index: u64) -> ChaCha8Rng {
    let mut x = seed ^ salt.wrapping_mul(0x9E3779B97F4A7C15) ^ index.wrapping_mul(0xBF58476D1CE4E5B9);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^= x >> 31;
    ChaCha8Rng::seed_from_u64(x)
}

const SALT_PATIENT: u64 = 1;
const SALT_TRIAL: u64 = 2;

const VISITS_MIN: usize = 2;
const VISITS_MAX: usize = 4;
const CODES_PER_VISIT_MIN: usize = 3;
const CODES_PER_VISIT_MAX: usize = 5;
const AGE_MIN: u32 = 18;
const AGE_MAX: u32 = 89;
/// Half-width of the group prevalence spread at full bias strength. Keeps
/// planted label gaps in a regime where parity can be restored without
/// destroying accuracy.
const BIAS_PREVALENCE_SPREAD: f64 = 0.5;
/// Probability that an inclusion criterion is an age rule.
const AGE_INCLUSION_PROB: f64 = 0.30;
/// Probability that an exclusion criterion is an age rule.
const AGE_EXCLUSION_PROB: f64 = 0.25;

fn code_token(category: CodeCategory, index: usize) -> String {
    let prefix = match category {
        CodeCategory::Diagnosis => "d",
        CodeCategory::Medication => "m",
        CodeCategory::Procedure => "r",
    };
    format!("{prefix}{index:03}")
}

/// True when the patient belongs to the group whose code prevalence the bias
/// knob favors: `others` for race, `male` for gender.
fn advantaged(config: &GeneratorConfig, race: Race, gender: Gender) -> bool {
    match config.bias_attribute {
        SensitiveAttribute::Race => race == Race::Others,
        SensitiveAttribute::Gender => gender == Gender::Male,
    }
}

/// Quadrant layout of a category vocabulary of size n (n divisible by 4):
/// `[0, n/4)` marked-junior, `[n/4, n/2)` marked-senior,
/// `[n/2, 3n/4)` neutral-junior, `[3n/4, n)` neutral-senior.
fn quadrant_code(n: usize, marked: bool, senior: bool, u: f64) -> usize {
    let quarter = n / 4;
    let offset = match (marked, senior) {
        (true, false) => 0,
        (true, true) => quarter,
        (false, false) => 2 * quarter,
        (false, true) => 3 * quarter,
    };
    offset + ((u * quarter as f64) as usize).min(quarter - 1)
}

fn gen_patient(config: &GeneratorConfig, index: usize) -> PatientRecord {
    let mut rng = stream_rng(config.seed, SALT_PATIENT, index as u64);
    // Fixed draw order, independent of bias_strength, so the same seed yields
    // pointwise-comparable patients across bias levels.
    let race = if rng.gen::<f64>() < config.group_proportions.race.first {
        Race::White
    } else {
        Race::Others
    };
    let gender = if rng.gen::<f64>() < config.group_proportions.gender.first {
        Gender::Male
    } else {
        Gender::Female
    };
    let age = rng.gen_range(AGE_MIN..=AGE_MAX);
    let senior_prob = 0.15 + 0.70 * f64::from(age - AGE_MIN) / f64::from(AGE_MAX - AGE_MIN);

    let spread = BIAS_PREVALENCE_SPREAD * config.bias_strength;
    let marked_prob = if advantaged(config, race, gender) {
        0.5 * (1.0 + spread)
    } else {
        0.5 * (1.0 - spread)
    };

    let visit_count = rng.gen_range(VISITS_MIN..=VISITS_MAX);
    let sizes: Vec<usize> = (0..visit_count)
        .map(|_| rng.gen_range(CODES_PER_VISIT_MIN..=CODES_PER_VISIT_MAX))
        .collect();

    let total_vocab = (config.vocabulary_sizes.diagnosis
        + config.vocabulary_sizes.medication
        + config.vocabulary_sizes.procedure) as f64;
    let diag_cut = config.vocabulary_sizes.diagnosis as f64 / total_vocab;
    let med_cut = diag_cut + config.vocabulary_sizes.medication as f64 / total_vocab;

    let visits: Vec<Vec<MedicalCode>> = sizes
        .iter()
        .map(|&size| {
            (0..size)
                .map(|_| {
                    let u_cat = rng.gen::<f64>();
                    let u_marked = rng.gen::<f64>();
                    let u_senior = rng.gen::<f64>();
                    let u_code = rng.gen::<f64>();
                    let category = if u_cat < diag_cut {
                        CodeCategory::Diagnosis
                    } else if u_cat < med_cut {
                        CodeCategory::Medication
                    } else {
                        CodeCategory::Procedure
                    };
                    let n = config.vocabulary_sizes.size(category);
                    let idx = quadrant_code(
                        n,
                        u_marked < marked_prob,
                        u_senior < senior_prob,
                        u_code,
                    );
                    MedicalCode {
                        category,
                        code: code_token(category, idx),
                    }
                })
                .collect()
        })
        .collect();

    PatientRecord {
        patient_id: format!("p{index:04}"),
        visits,
        race,
        gender,
        age,
    }
}

fn pick_category(rng: &mut ChaCha8Rng) -> CodeCategory {
    CodeCategory::ALL[rng.gen_range(0..CodeCategory::ALL.len())]
}

/// Draws `count` distinct code indices from one vocabulary half
/// (`marked`: group-marked half `[0, n/2)`, else neutral half `[n/2, n)`).
fn pick_codes(
    rng: &mut ChaCha8Rng,
    category: CodeCategory,
    n: usize,
    marked: bool,
    count: usize,
) -> Vec<String> {
    let half = n / 2;
    let base = if marked { 0 } else { half };
    let mut picked: Vec<usize> = Vec::with_capacity(count);
    while picked.len() < count {
        let idx = base + rng.gen_range(0..half);
        if !picked.contains(&idx) {
            picked.push(idx);
        }
    }
    picked
        .into_iter()
        .map(|i| code_token(category, i))
        .collect()
}

fn tokenize_template(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| (*s).to_string()).collect()
}

fn gen_criterion(
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
    trial_id: &str,
    index: usize,
    kind: CriterionKind,
) -> Criterion {
    let criterion_id = format!("{trial_id}-c{index:02}");
    let (text, predicate) = match kind {
        CriterionKind::Inclusion => {
            if rng.gen::<f64>() < AGE_INCLUSION_PROB {
                let years = *[18u32, 21, 35, 45, 50]
                    .get(rng.gen_range(0..5))
                    .expect("fixed table");
                let years_tok = years.to_string();
                (
                    tokenize_template(&["age", "\u{2265}", &years_tok, "years"]),
                    OraclePredicate::AgeAtLeast { years },
                )
            } else {
                let category = pick_category(rng);
                let n = config.vocabulary_sizes.size(category);
                let count = rng.gen_range(2..=3);
                let codes = pick_codes(rng, category, n, true, count);
                let mut text = vec!["patients".into(), "with".into(), category.word().into()];
                for (i, c) in codes.iter().enumerate() {
                    if i > 0 {
                        text.push("or".into());
                    }
                    text.push(c.clone());
                }
                (text, OraclePredicate::CodeAny { category, codes })
            }
        }
        CriterionKind::Exclusion => {
            if rng.gen::<f64>() < AGE_EXCLUSION_PROB {
                if rng.gen::<bool>() {
                    let years = *[75u32, 80, 85].get(rng.gen_range(0..3)).expect("fixed");
                    let years_tok = years.to_string();
                    (
                        tokenize_template(&["age", "\u{2265}", &years_tok, "years"]),
                        OraclePredicate::AgeAtLeast { years },
                    )
                } else {
                    let years = *[21u32, 25, 30].get(rng.gen_range(0..3)).expect("fixed");
                    let years_tok = years.to_string();
                    (
                        tokenize_template(&["age", "\u{2264}", &years_tok, "years"]),
                        OraclePredicate::AgeAtMost { years },
                    )
                }
            } else {
                let category = pick_category(rng);
                let n = config.vocabulary_sizes.size(category);
                let count = rng.gen_range(1..=2);
                let codes = pick_codes(rng, category, n, false, count);
                let mut text = vec!["history".into(), "of".into(), category.word().into()];
                for (i, c) in codes.iter().enumerate() {
                    if i > 0 {
                        text.push("or".into());
                    }
                    text.push(c.clone());
                }
                (text, OraclePredicate::CodeAny { category, codes })
            }
        }
    };
    Criterion {
        criterion_id,
        kind,
        text,
        oracle_predicate: predicate,
    }
}

fn gen_trial(config: &GeneratorConfig, index: usize) -> Trial {
    let mut rng = stream_rng(config.seed, SALT_TRIAL, index as u64);
    let trial_id = format!("t{index:02}");
    let total = rng.gen_range(config.criteria_per_trial.min..=config.criteria_per_trial.max);
    let inclusion_count = rng.gen_range(1..total.max(2));
    let exclusion_count = total - inclusion_count;
    let inclusion_criteria = (0..inclusion_count)
        .map(|i| gen_criterion(config, &mut rng, &trial_id, i, CriterionKind::Inclusion))
        .collect();
    let exclusion_criteria = (0..exclusion_count)
        .map(|i| {
            gen_criterion(
                config,
                &mut rng,
                &trial_id,
                inclusion_count + i,
                CriterionKind::Exclusion,
            )
        })
        .collect();
    Trial {
        trial_id,
        inclusion_criteria,
        exclusion_criteria,
    }
}

/// Generates the full corpus: patients, trials, and every (patient,
/// criterion) pair labeled by the rule oracle. Deterministic given the
/// config.
pub fn generate(config: &GeneratorConfig) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let patients: Vec<PatientRecord> = (0..config.patient_count)
        .map(|i| gen_patient(config, i))
        .collect();
    let trials: Vec<Trial> = (0..config.trial_count)
        .map(|i| gen_trial(config, i))
        .collect();
    let mut pairs = Vec::new();
    for patient in &patients {
        for trial in &trials {
            for criterion in trial.criteria() {
                pairs.push(LabeledPair {
                    patient_id: patient.patient_id.clone(),
                    criterion_id: criterion.criterion_id.clone(),
                    label: oracle_label(patient, criterion),
                });
            }
        }
    }
    Ok(Corpus {
        patients,
        trials,
        pairs,
    })
}

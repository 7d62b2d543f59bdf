//! Line-delimited corpus serialization.
//!
//! One JSON record per line, `kind` field distinguishing patients, trials,
//! and labeled pairs. Round trips are lossless and byte-stable for a given
//! corpus, which the determinism guarantees elsewhere rely on.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, CriterionKind, LabeledPair, PatientRecord, Splits, Trial};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Record {
    Patient(PatientRecord),
    Trial(Trial),
    LabeledPair(LabeledPair),
}

/// Writes bytes to `path` atomically: temp file in the same directory, then
/// rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp.push(".tmp");
    let tmp_path = dir.join(tmp);
    {
        let mut f = fs::File::create(&tmp_path).map_err(io_err)?;
        f.write_all(bytes).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp_path, path).map_err(io_err)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    let ser_err = |source| CorpusError::Parse {
        path: path.to_path_buf(),
        line: 0,
        source,
    };
    for p in &corpus.patients {
        serde_json::to_writer(&mut out, &Record::Patient(p.clone())).map_err(ser_err)?;
        out.push(b'\n');
    }
    for t in &corpus.trials {
        serde_json::to_writer(&mut out, &Record::Trial(t.clone())).map_err(ser_err)?;
        out.push(b'\n');
    }
    for pair in &corpus.pairs {
        serde_json::to_writer(&mut out, &Record::LabeledPair(pair.clone())).map_err(ser_err)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

/// Loads a corpus file. An empty file is an empty corpus; malformed lines
/// report their line number; structural problems (criterion in the wrong
/// list, pair referencing an unknown id) report line and field.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut corpus = Corpus::default();
    let mut pair_lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                source,
            })?;
        match record {
            Record::Patient(p) => {
                if p.visits.is_empty() || p.visits.iter().any(|v| v.is_empty()) {
                    return Err(CorpusError::Invalid {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: format!(
                            "patient {}: field `visits` must be non-empty with non-empty visits",
                            p.patient_id
                        ),
                    });
                }
                corpus.patients.push(p);
            }
            Record::Trial(t) => {
                for c in &t.inclusion_criteria {
                    if c.kind != CriterionKind::Inclusion {
                        return Err(CorpusError::Invalid {
                            path: path.to_path_buf(),
                            line: line_no,
                            message: format!(
                                "trial {}: criterion {} in field `inclusion-criteria` has kind exclusion",
                                t.trial_id, c.criterion_id
                            ),
                        });
                    }
                }
                for c in &t.exclusion_criteria {
                    if c.kind != CriterionKind::Exclusion {
                        return Err(CorpusError::Invalid {
                            path: path.to_path_buf(),
                            line: line_no,
                            message: format!(
                                "trial {}: criterion {} in field `exclusion-criteria` has kind inclusion",
                                t.trial_id, c.criterion_id
                            ),
                        });
                    }
                }
                if t.inclusion_criteria.is_empty() {
                    return Err(CorpusError::Invalid {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: format!(
                            "trial {}: field `inclusion-criteria` must not be empty",
                            t.trial_id
                        ),
                    });
                }
                corpus.trials.push(t);
            }
            Record::LabeledPair(pair) => {
                pair_lines.push(line_no);
                corpus.pairs.push(pair);
            }
        }
    }
    // Reference checks after the whole file is read, since record order is
    // not prescribed.
    use std::collections::HashSet;
    let patient_ids: HashSet<&str> = corpus
        .patients
        .iter()
        .map(|p| p.patient_id.as_str())
        .collect();
    let criterion_ids: HashSet<&str> =
        corpus.criteria().map(|c| c.criterion_id.as_str()).collect();
    for (pair, &line_no) in corpus.pairs.iter().zip(&pair_lines) {
        if !patient_ids.contains(pair.patient_id.as_str()) {
            return Err(CorpusError::Invalid {
                path: path.to_path_buf(),
                line: line_no,
                message: format!(
                    "labeled pair field `patient-id` references unknown patient {}",
                    pair.patient_id
                ),
            });
        }
        if !criterion_ids.contains(pair.criterion_id.as_str()) {
            return Err(CorpusError::Invalid {
                path: path.to_path_buf(),
                line: line_no,
                message: format!(
                    "labeled pair field `criterion-id` references unknown criterion {}",
                    pair.criterion_id
                ),
            });
        }
    }
    Ok(corpus)
}

pub fn save_splits(splits: &Splits, path: &Path) -> Result<(), CorpusError> {
    let body = serde_json::to_vec_pretty(splits).map_err(|source| CorpusError::Parse {
        path: path.to_path_buf(),
        line: 0,
        source,
    })?;
    write_atomic(path, &body)
}

pub fn load_splits(path: &Path) -> Result<Splits, CorpusError> {
    let body = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&body).map_err(|source| CorpusError::Parse {
        path: path.to_path_buf(),
        line: 1,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, GeneratorConfig};

    #[test]
    fn round_trip_is_lossless() {
        let config = GeneratorConfig {
            patient_count: 25,
            ..GeneratorConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(corpus, loaded);
    }

    #[test]
    fn save_is_byte_stable() {
        let config = GeneratorConfig {
            patient_count: 10,
            ..GeneratorConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        save_corpus(&corpus, &a).unwrap();
        save_corpus(&corpus, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert!(corpus.patients.is_empty() && corpus.trials.is_empty() && corpus.pairs.is_empty());
    }

    #[test]
    fn truncated_line_names_its_number() {
        let config = GeneratorConfig {
            patient_count: 3,
            ..GeneratorConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_corpus(&corpus, &path).unwrap();
        let mut body = fs::read_to_string(&path).unwrap();
        let cut = body.lines().next().unwrap().len() * 2;
        body.truncate(cut);
        fs::write(&path, body).unwrap();
        let err = load_corpus(&path).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn pair_with_unknown_patient_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        fs::write(
            &path,
            r#"{"kind":"labeled-pair","patient-id":"ghost","criterion-id":"c0","label":"unknown"}"#,
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn criterion_in_wrong_list_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"kind":"trial","trial-id":"t0","inclusion-criteria":"#,
                r#"[{"criterion-id":"c0","kind":"exclusion","text":["x"],"#,
                r#""oracle-predicate":{"age-at-least":{"years":18}}}],"exclusion-criteria":[]}"#,
            ),
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err();
        assert!(err.to_string().contains("inclusion-criteria"), "{err}");
    }
}

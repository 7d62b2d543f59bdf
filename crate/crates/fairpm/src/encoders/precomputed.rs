//! Optional import of frozen, externally computed embeddings.
//!
//! The file is line-delimited JSON mapping an entity id to a float vector:
//! per-visit entries are keyed `"<patient-id>#<visit-index>"`, criterion
//! entries by criterion id. All vectors must share one length.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::EncoderError;
use crate::autodiff::Tensor;

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct Row {
    entity_id: String,
    vector: Vec<f64>,
}

/// Frozen entity-id to vector store.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    map: HashMap<String, Vec<f64>>,
}

impl PrecomputedEmbeddings {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn vector(&self, entity: &str) -> Result<Tensor, EncoderError> {
        let v = self
            .map
            .get(entity)
            .ok_or_else(|| EncoderError::MissingEntity {
                entity: entity.to_string(),
            })?;
        Ok(Tensor::vector(v.clone()).expect("validated at load"))
    }
}

/// Where the base vectors for visits and criterion tokens come from.
#[derive(Debug, Clone, Default)]
pub enum EmbeddingSource {
    /// The model's own trainable embedding table.
    #[default]
    Trainable,
    /// Frozen vectors imported from file.
    Precomputed(PrecomputedEmbeddings),
}

pub fn load_precomputed(path: &Path) -> Result<PrecomputedEmbeddings, EncoderError> {
    let err = |line: usize, message: String| EncoderError::Precomputed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = fs::File::open(path).map_err(|e| err(0, e.to_string()))?;
    let reader = BufReader::new(file);
    let mut map = HashMap::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| err(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| err(line_no, e.to_string()))?;
        if row.vector.is_empty() {
            return Err(err(line_no, format!("entity {}: empty vector", row.entity_id)));
        }
        match dim {
            None => dim = Some(row.vector.len()),
            Some(d) if d != row.vector.len() => {
                return Err(err(
                    line_no,
                    format!(
                        "entity {}: vector length {} differs from first length {}",
                        row.entity_id,
                        row.vector.len(),
                        d
                    ),
                ));
            }
            _ => {}
        }
        if map.insert(row.entity_id.clone(), row.vector).is_some() {
            return Err(err(
                line_no,
                format!("duplicate entity id {}", row.entity_id),
            ));
        }
    }
    Ok(PrecomputedEmbeddings {
        dim: dim.unwrap_or(0),
        map,
    })
}

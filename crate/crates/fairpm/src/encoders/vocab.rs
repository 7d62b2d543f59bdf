use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

use crate::corpus::{Corpus, PatientRecord};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token-to-id map with dense ids, pad fixed at 0 and unk at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds the vocabulary from the training-split patients plus all
    /// criterion texts. Tokens are added in first-seen order, which is
    /// deterministic for a fixed corpus.
    pub fn build(corpus: &Corpus, train_patients: &[&PatientRecord]) -> Self {
        let mut vocab = Self {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        vocab.index.insert(PAD_TOKEN.to_string(), 0);
        vocab.index.insert(UNK_TOKEN.to_string(), 1);
        for patient in train_patients {
            for visit in &patient.visits {
                for code in visit {
                    vocab.intern(&code.code);
                }
            }
        }
        for criterion in corpus.criteria() {
            for token in &criterion.text {
                vocab.intern(token);
            }
        }
        vocab
    }

    fn intern(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(1)
    }

    /// Maps a token sequence to ids; unknown tokens become unk and an empty
    /// input yields a single unk.
    pub fn tokenize<'a, I: IntoIterator<Item = &'a str>>(&self, tokens: I) -> Vec<usize> {
        let ids: Vec<usize> = tokens.into_iter().map(|t| self.id(t)).collect();
        if ids.is_empty() {
            vec![1]
        } else {
            ids
        }
    }

    /// Content hash used to detect checkpoint/corpus vocabulary mismatches.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0]);
        }
        format!("{:x}", hasher.finalize())
    }
}

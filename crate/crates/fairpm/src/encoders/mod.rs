//! Patient and criterion encoders sharing one embedding space.
//!
//! Patients: per-visit mean of code embeddings, aggregated by a one-hop
//! attention memory network with a learned global query. Criteria: token
//! embeddings through 1-D convolutions (window widths 1..3) with max-over-
//! time pooling, a highway layer, and a linear projection. A small head maps
//! the pair `[z_p, z_c, z_p * z_c, |z_p - z_c|]` to three logits ordered
//! (inclusion, exclusion, unknown).

mod precomputed;
mod vocab;

pub use precomputed::{load_precomputed, EmbeddingSource, PrecomputedEmbeddings};
pub use vocab::{Vocabulary, PAD_TOKEN, UNK_TOKEN};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Parameter, Tape, Tensor, TensorError, Var};
use crate::corpus::{Criterion, PatientRecord};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path} line {line}: {message}")]
    Precomputed {
        path: std::path::PathBuf,
        line: usize,
        message: String,
    },
    #[error("no precomputed embedding for entity `{entity}`")]
    MissingEntity { entity: String },
    #[error("precomputed dimension {found} does not match embedding dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Convolution window widths over criterion tokens.
pub const CONV_WIDTHS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EncoderDims {
    /// Token embedding width d.
    pub embedding: usize,
    /// Shared latent width d_z of patient and criterion embeddings.
    pub latent: usize,
    /// Channels per convolution width.
    pub conv_channels: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            embedding: 32,
            latent: 32,
            conv_channels: 8,
        }
    }
}

impl EncoderDims {
    /// Width of the pooled convolution feature feeding the highway layer.
    pub fn highway_width(&self) -> usize {
        self.conv_channels * CONV_WIDTHS.len()
    }
}

/// Every learned tensor of the model, in fixed registration order. The
/// adversary head is always present (and always initialized, so checkpoints
/// and RNG streams do not depend on the training mode) but only the
/// adversarial baseline updates it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub params: Vec<Parameter>,
}

const NAMES: [&str; 14] = [
    "embedding",
    "memory.query",
    "memory.key",
    "memory.value",
    "conv.w1",
    "conv.w2",
    "conv.w3",
    "highway.transform.weight",
    "highway.transform.bias",
    "highway.candidate.weight",
    "highway.candidate.bias",
    "criterion.projection",
    "predictor.weight",
    "predictor.bias",
];
const ADVERSARY_NAMES: [&str; 2] = ["adversary.weight", "adversary.bias"];

impl EncoderParams {
    /// Seeded initialization: weights uniform on the Glorot interval, biases
    /// small uniform. The highway transform bias starts negative so gates
    /// open slowly, and the candidate bias keeps early criterion embeddings
    /// away from the zero vector.
    pub fn init(dims: EncoderDims, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1D10_7E55_C0DE_CAFE);
        let d = dims.embedding;
        let dz = dims.latent;
        let h = dims.highway_width();
        let ch = dims.conv_channels;

        let mut params = Vec::new();
        let mut weight = |name: &str, shape: Vec<usize>, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
            Parameter::new(name, Tensor::new(shape, data).expect("static shape"))
        };

        params.push(weight("embedding", vec![vocab_size, d], 1, d));
        params.push(weight("memory.query", vec![dz], dz, 1));
        params.push(weight("memory.key", vec![d, dz], d, dz));
        params.push(weight("memory.value", vec![d, dz], d, dz));
        for (i, w) in CONV_WIDTHS.iter().enumerate() {
            params.push(weight(NAMES[4 + i], vec![ch, *w, d], w * d, ch));
        }
        params.push(weight("highway.transform.weight", vec![h, h], h, h));
        let mut tb = weight("highway.transform.bias", vec![h], h, 1);
        tb.value.data_mut().iter_mut().for_each(|v| *v -= 1.0);
        params.push(tb);
        params.push(weight("highway.candidate.weight", vec![h, h], h, h));
        params.push(weight("highway.candidate.bias", vec![h], h, 1));
        params.push(weight("criterion.projection", vec![h, dz], h, dz));
        params.push(weight("predictor.weight", vec![4 * dz, 3], 4 * dz, 3));
        params.push(weight("predictor.bias", vec![3], 3, 1));
        params.push(weight("adversary.weight", vec![dz, 2], dz, 2));
        params.push(weight("adversary.bias", vec![2], 2, 1));

        Self { dims, params }
    }

    pub fn get(&self, name: &str) -> &Parameter {
        self.params
            .iter()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn adversary_names() -> &'static [&'static str] {
        &ADVERSARY_NAMES
    }

    pub fn is_adversary(name: &str) -> bool {
        ADVERSARY_NAMES.contains(&name)
    }

    /// Binds every parameter onto a tape as a leaf, preserving order.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self
                .params
                .iter()
                .map(|p| (p.name.clone(), tape.leaf(p.value.clone())))
                .collect(),
        }
    }
}

/// Tape-bound view of [`EncoderParams`] for one forward/backward pass.
pub struct BoundParams<'t> {
    pub vars: Vec<(String, Var<'t>)>,
}

impl<'t> BoundParams<'t> {
    pub fn var(&self, name: &str) -> Var<'t> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    /// Builds a bound view from an explicit var list (used by the gradient
    /// checker, which owns the leaf binding itself).
    pub fn from_slice(params: &[Parameter], vars: &[Var<'t>]) -> Self {
        Self {
            vars: params
                .iter()
                .zip(vars)
                .map(|(p, v)| (p.name.clone(), *v))
                .collect(),
        }
    }
}

/// Mean of the embedding vectors of a visit's code tokens.
pub fn embed_visit<'t>(
    tape: &'t Tape,
    visit: &[crate::corpus::MedicalCode],
    vocab: &Vocabulary,
    bound: &BoundParams<'t>,
) -> Result<Var<'t>, EncoderError> {
    if visit.is_empty() {
        return Err(TensorError::EmptyInput { op: "embed_visit" }.into());
    }
    let ids: Vec<usize> = visit.iter().map(|c| vocab.id(&c.code)).collect();
    mean_of_rows(tape, bound.var("embedding").gather_rows(&ids)?)
}

/// Mean over the rows of a `[k, d]` tensor via a constant 1/k row vector.
fn mean_of_rows<'t>(tape: &'t Tape, rows: Var<'t>) -> Result<Var<'t>, EncoderError> {
    let k = rows.value().rows();
    let weights = tape.vector(vec![1.0 / k as f64; k])?;
    Ok(weights.matmul(rows)?)
}

/// One-hop attention memory network over the visit embeddings.
///
/// Keys and values are linear projections of the visit embeddings; attention
/// weights are the softmax of query-key scores; the output is the attention-
/// weighted sum of values. Order-invariant across visits by construction.
pub fn encode_patient<'t>(
    tape: &'t Tape,
    patient: &PatientRecord,
    vocab: &Vocabulary,
    bound: &BoundParams<'t>,
    source: &EmbeddingSource,
) -> Result<Var<'t>, EncoderError> {
    let visit_embeddings: Vec<Var<'t>> = match source {
        EmbeddingSource::Trainable => patient
            .visits
            .iter()
            .map(|v| embed_visit(tape, v, vocab, bound))
            .collect::<Result<_, _>>()?,
        EmbeddingSource::Precomputed(store) => (0..patient.visits.len())
            .map(|i| {
                let key = format!("{}#{}", patient.patient_id, i);
                Ok(tape.leaf(store.vector(&key)?))
            })
            .collect::<Result<_, EncoderError>>()?,
    };
    let stacked = tape.stack_rows(&visit_embeddings)?;
    let keys = stacked.matmul(bound.var("memory.key"))?;
    let scores = keys.matmul(bound.var("memory.query"))?;
    let attention = scores.softmax()?;
    let values = stacked.matmul(bound.var("memory.value"))?;
    Ok(attention.matmul(values)?)
}

/// Convolution + highway criterion encoder.
pub fn encode_criterion<'t>(
    tape: &'t Tape,
    criterion: &Criterion,
    vocab: &Vocabulary,
    bound: &BoundParams<'t>,
    source: &EmbeddingSource,
) -> Result<Var<'t>, EncoderError> {
    let token_matrix = match source {
        EmbeddingSource::Trainable => {
            let ids = vocab.tokenize(criterion.text.iter().map(String::as_str));
            bound.var("embedding").gather_rows(&ids)?
        }
        EmbeddingSource::Precomputed(store) => {
            // The stored vector stands in for the whole token sequence.
            let v = store.vector(&criterion.criterion_id)?;
            let d = v.numel();
            tape.leaf(Tensor::new(vec![1, d], v.data().to_vec())?)
        }
    };
    let mut pooled = Vec::with_capacity(CONV_WIDTHS.len());
    for (i, _) in CONV_WIDTHS.iter().enumerate() {
        let conv = token_matrix.conv1d(bound.var(NAMES[4 + i]))?;
        pooled.push(conv.relu().max_rows()?);
    }
    let features = tape.concat(&pooled)?;
    let transform = features
        .matmul(bound.var("highway.transform.weight"))?
        .add(bound.var("highway.transform.bias"))?
        .sigmoid();
    let candidate = features
        .matmul(bound.var("highway.candidate.weight"))?
        .add(bound.var("highway.candidate.bias"))?
        .tanh();
    let carry = transform.scale(-1.0).add_scalar(1.0);
    let highway = transform.mul(candidate)?.add(carry.mul(features)?)?;
    Ok(highway.matmul(bound.var("criterion.projection"))?)
}

/// Three unnormalized logits for (inclusion, exclusion, unknown) from the
/// combined feature `[z_p, z_c, z_p * z_c, |z_p - z_c|]`.
pub fn predict_logits<'t>(
    tape: &'t Tape,
    z_patient: Var<'t>,
    z_criterion: Var<'t>,
    bound: &BoundParams<'t>,
) -> Result<Var<'t>, EncoderError> {
    let product = z_patient.mul(z_criterion)?;
    let gap = z_patient.sub(z_criterion)?.abs();
    let feature = tape.concat(&[z_patient, z_criterion, product, gap])?;
    Ok(feature
        .matmul(bound.var("predictor.weight"))?
        .add(bound.var("predictor.bias"))?)
}

/// Adversary head: two group logits from a patient embedding, with the
/// encoder-side gradient reversed and scaled by `reversal_weight`.
pub fn adversary_logits<'t>(
    z_patient: Var<'t>,
    reversal_weight: f64,
    bound: &BoundParams<'t>,
) -> Result<Var<'t>, EncoderError> {
    Ok(z_patient
        .grad_reverse(reversal_weight)
        .matmul(bound.var("adversary.weight"))?
        .add(bound.var("adversary.bias"))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, CodeCategory, GeneratorConfig, MedicalCode};

    fn tiny_setup() -> (crate::corpus::Corpus, Vocabulary, EncoderParams) {
        let config = GeneratorConfig {
            patient_count: 12,
            ..GeneratorConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let patients: Vec<&PatientRecord> = corpus.patients.iter().collect();
        let vocab = Vocabulary::build(&corpus, &patients);
        let dims = EncoderDims {
            embedding: 6,
            latent: 5,
            conv_channels: 3,
        };
        let params = EncoderParams::init(dims, vocab.len(), 11);
        (corpus, vocab, params)
    }

    fn close_slices(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    // Plain-loop re-implementation of the patient encoder, sharing no code
    // with the tape path.
    fn scalar_encode_patient(
        patient: &PatientRecord,
        vocab: &Vocabulary,
        params: &EncoderParams,
    ) -> Vec<f64> {
        let d = params.dims.embedding;
        let dz = params.dims.latent;
        let emb = params.get("embedding").value.data();
        let wk = params.get("memory.key").value.data();
        let wv = params.get("memory.value").value.data();
        let q = params.get("memory.query").value.data();

        let visit_vecs: Vec<Vec<f64>> = patient
            .visits
            .iter()
            .map(|visit| {
                let mut mean = vec![0.0; d];
                for code in visit {
                    let id = vocab.id(&code.code);
                    for j in 0..d {
                        mean[j] += emb[id * d + j];
                    }
                }
                mean.iter_mut().for_each(|v| *v /= visit.len() as f64);
                mean
            })
            .collect();

        let project = |v: &[f64], w: &[f64]| -> Vec<f64> {
            (0..dz)
                .map(|j| (0..d).map(|i| v[i] * w[i * dz + j]).sum())
                .collect()
        };
        let keys: Vec<Vec<f64>> = visit_vecs.iter().map(|v| project(v, wk)).collect();
        let values: Vec<Vec<f64>> = visit_vecs.iter().map(|v| project(v, wv)).collect();
        let scores: Vec<f64> = keys
            .iter()
            .map(|k| k.iter().zip(q).map(|(a, b)| a * b).sum())
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut out = vec![0.0; dz];
        for (t, v) in values.iter().enumerate() {
            let a = exps[t] / total;
            for j in 0..dz {
                out[j] += a * v[j];
            }
        }
        out
    }

    fn scalar_encode_criterion(
        criterion: &Criterion,
        vocab: &Vocabulary,
        params: &EncoderParams,
    ) -> Vec<f64> {
        let d = params.dims.embedding;
        let ch = params.dims.conv_channels;
        let h = params.dims.highway_width();
        let dz = params.dims.latent;
        let emb = params.get("embedding").value.data();
        let ids = vocab.tokenize(criterion.text.iter().map(String::as_str));
        let l = ids.len();

        let mut pooled = Vec::new();
        for (wi, &w) in CONV_WIDTHS.iter().enumerate() {
            let filt = params.get(NAMES[4 + wi]).value.data();
            let positions = l.saturating_sub(w).wrapping_add(1).max(1);
            for o in 0..ch {
                let mut best = f64::NEG_INFINITY;
                for p in 0..positions {
                    let mut s = 0.0;
                    for j in 0..w {
                        if p + j >= l {
                            continue;
                        }
                        let row = ids[p + j];
                        for i in 0..d {
                            s += emb[row * d + i] * filt[(o * w + j) * d + i];
                        }
                    }
                    best = best.max(s.max(0.0));
                }
                pooled.push(best);
            }
        }
        assert_eq!(pooled.len(), h);

        let affine = |x: &[f64], w: &[f64], b: &[f64]| -> Vec<f64> {
            (0..h)
                .map(|j| b[j] + (0..h).map(|i| x[i] * w[i * h + j]).sum::<f64>())
                .collect()
        };
        let tw = params.get("highway.transform.weight").value.data();
        let tb = params.get("highway.transform.bias").value.data();
        let cw = params.get("highway.candidate.weight").value.data();
        let cb = params.get("highway.candidate.bias").value.data();
        let t: Vec<f64> = affine(&pooled, tw, tb)
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let c: Vec<f64> = affine(&pooled, cw, cb).iter().map(|&x| x.tanh()).collect();
        let hw: Vec<f64> = (0..h)
            .map(|i| t[i] * c[i] + (1.0 - t[i]) * pooled[i])
            .collect();
        let proj = params.get("criterion.projection").value.data();
        (0..dz)
            .map(|j| (0..h).map(|i| hw[i] * proj[i * dz + j]).sum())
            .collect()
    }

    #[test]
    fn single_visit_patient_reduces_to_value_projection() {
        let (_corpus, vocab, params) = tiny_setup();
        let patient = PatientRecord {
            patient_id: "p".into(),
            visits: vec![vec![MedicalCode {
                category: CodeCategory::Diagnosis,
                code: "d001".into(),
            }]],
            race: crate::corpus::Race::White,
            gender: crate::corpus::Gender::Male,
            age: 40,
        };
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let z = encode_patient(&tape, &patient, &vocab, &bound, &EmbeddingSource::Trainable)
            .unwrap();
        // With one visit the attention weight is exactly 1, so z_p is the
        // value projection of the visit embedding.
        let visit = embed_visit(&tape, &patient.visits[0], &vocab, &bound).unwrap();
        let direct = visit.matmul(bound.var("memory.value")).unwrap();
        close_slices(z.value().data(), direct.value().data(), 1e-15);
    }

    #[test]
    fn identical_visits_match_single_visit() {
        let (_corpus, vocab, params) = tiny_setup();
        let code = MedicalCode {
            category: CodeCategory::Diagnosis,
            code: "d001".into(),
        };
        let mk = |n: usize| PatientRecord {
            patient_id: "p".into(),
            visits: vec![vec![code.clone()]; n],
            race: crate::corpus::Race::White,
            gender: crate::corpus::Gender::Male,
            age: 40,
        };
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let one = encode_patient(&tape, &mk(1), &vocab, &bound, &EmbeddingSource::Trainable)
            .unwrap();
        let two = encode_patient(&tape, &mk(2), &vocab, &bound, &EmbeddingSource::Trainable)
            .unwrap();
        close_slices(one.value().data(), two.value().data(), 1e-12);
    }

    #[test]
    fn patient_encoder_matches_scalar_oracle() {
        let (corpus, vocab, params) = tiny_setup();
        for patient in corpus.patients.iter().take(6) {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let z =
                encode_patient(&tape, patient, &vocab, &bound, &EmbeddingSource::Trainable)
                    .unwrap();
            let oracle = scalar_encode_patient(patient, &vocab, &params);
            close_slices(z.value().data(), &oracle, 1e-12);
        }
    }

    #[test]
    fn visit_order_does_not_change_patient_embedding() {
        let (corpus, vocab, params) = tiny_setup();
        let patient = corpus
            .patients
            .iter()
            .find(|p| p.visits.len() >= 3)
            .expect("generator produces multi-visit patients");
        let mut reversed = patient.clone();
        reversed.visits.reverse();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let a = encode_patient(&tape, patient, &vocab, &bound, &EmbeddingSource::Trainable)
            .unwrap();
        let b = encode_patient(&tape, &reversed, &vocab, &bound, &EmbeddingSource::Trainable)
            .unwrap();
        close_slices(a.value().data(), b.value().data(), 1e-12);
    }

    #[test]
    fn criterion_encoder_matches_scalar_oracle() {
        let (corpus, vocab, params) = tiny_setup();
        for criterion in corpus.criteria().take(8) {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let z = encode_criterion(
                &tape,
                criterion,
                &vocab,
                &bound,
                &EmbeddingSource::Trainable,
            )
            .unwrap();
            let oracle = scalar_encode_criterion(criterion, &vocab, &params);
            close_slices(z.value().data(), &oracle, 1e-12);
        }
    }

    #[test]
    fn saturated_closed_gate_makes_highway_identity() {
        let (corpus, vocab, mut params) = tiny_setup();
        // Drive the transform gate to zero: highway output equals its input,
        // so z_c becomes projection(pooled features).
        params
            .params
            .iter_mut()
            .find(|p| p.name == "highway.transform.bias")
            .unwrap()
            .value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = -60.0);
        params
            .params
            .iter_mut()
            .find(|p| p.name == "highway.transform.weight")
            .unwrap()
            .value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let criterion = corpus.criteria().next().unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let z = encode_criterion(&tape, criterion, &vocab, &bound, &EmbeddingSource::Trainable)
            .unwrap();

        let ids = vocab.tokenize(criterion.text.iter().map(String::as_str));
        let toks = bound.var("embedding").gather_rows(&ids).unwrap();
        let mut pooled = Vec::new();
        for (i, _) in CONV_WIDTHS.iter().enumerate() {
            pooled.push(
                toks.conv1d(bound.var(NAMES[4 + i]))
                    .unwrap()
                    .relu()
                    .max_rows()
                    .unwrap(),
            );
        }
        let feats = tape.concat(&pooled).unwrap();
        let direct = feats.matmul(bound.var("criterion.projection")).unwrap();
        close_slices(z.value().data(), direct.value().data(), 1e-12);
    }

    #[test]
    fn zero_predictor_gives_zero_logits() {
        let (corpus, vocab, mut params) = tiny_setup();
        for name in ["predictor.weight", "predictor.bias"] {
            params
                .params
                .iter_mut()
                .find(|p| p.name == name)
                .unwrap()
                .value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let patient = &corpus.patients[0];
        let criterion = corpus.criteria().next().unwrap();
        let zp = encode_patient(&tape, patient, &vocab, &bound, &EmbeddingSource::Trainable)
            .unwrap();
        let zc = encode_criterion(&tape, criterion, &vocab, &bound, &EmbeddingSource::Trainable)
            .unwrap();
        let logits = predict_logits(&tape, zp, zc, &bound).unwrap();
        assert_eq!(logits.value().data(), &[0.0, 0.0, 0.0]);
        let probs = logits.softmax().unwrap();
        close_slices(probs.value().data(), &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn swapping_embeddings_keeps_interaction_blocks() {
        let (_corpus, _vocab, params) = tiny_setup();
        let tape = Tape::new();
        let dz = params.dims.latent;
        let a = tape
            .vector((0..dz).map(|i| 0.1 * i as f64 - 0.2).collect())
            .unwrap();
        let b = tape
            .vector((0..dz).map(|i| 0.3 - 0.05 * i as f64).collect())
            .unwrap();
        let bound = params.bind(&tape);
        let fwd = {
            let prod = a.mul(b).unwrap();
            let gap = a.sub(b).unwrap().abs();
            tape.concat(&[a, b, prod, gap]).unwrap().value()
        };
        let swapped = {
            let prod = b.mul(a).unwrap();
            let gap = b.sub(a).unwrap().abs();
            tape.concat(&[b, a, prod, gap]).unwrap().value()
        };
        // Product and absolute-difference blocks are symmetric.
        close_slices(
            &fwd.data()[2 * dz..],
            &swapped.data()[2 * dz..],
            1e-15,
        );
        let _ = bound;
    }

    #[test]
    fn precomputed_source_drives_both_encoders() {
        let (corpus, vocab, params) = tiny_setup();
        let d = params.dims.embedding;
        let mut lines = String::new();
        let patient = &corpus.patients[0];
        for i in 0..patient.visits.len() {
            lines.push_str(&format!(
                "{{\"entity-id\":\"{}#{}\",\"vector\":{:?}}}\n",
                patient.patient_id,
                i,
                (0..d).map(|j| 0.1 * (i + j) as f64).collect::<Vec<f64>>()
            ));
        }
        let criterion = corpus.criteria().next().unwrap();
        lines.push_str(&format!(
            "{{\"entity-id\":\"{}\",\"vector\":{:?}}}\n",
            criterion.criterion_id,
            (0..d).map(|j| 0.05 * j as f64).collect::<Vec<f64>>()
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        std::fs::write(&path, lines).unwrap();
        let source = EmbeddingSource::Precomputed(load_precomputed(&path).unwrap());

        let tape = Tape::new();
        let bound = params.bind(&tape);
        let zp = encode_patient(&tape, patient, &vocab, &bound, &source).unwrap();
        let zc = encode_criterion(&tape, criterion, &vocab, &bound, &source).unwrap();
        assert_eq!(zp.value().numel(), params.dims.latent);
        assert_eq!(zc.value().numel(), params.dims.latent);
        assert!(zp.value().is_finite() && zc.value().is_finite());

        // Unknown patient id fails loudly.
        let mut ghost = patient.clone();
        ghost.patient_id = "ghost".into();
        assert!(matches!(
            encode_patient(&tape, &ghost, &vocab, &bound, &source),
            Err(EncoderError::MissingEntity { .. })
        ));
    }

    #[test]
    fn visit_embedding_gradient_passes_finite_differences() {
        use crate::autodiff::{finite_difference_check, scalar_fn};
        let (corpus, vocab, params) = tiny_setup();
        let patient = corpus.patients[0].clone();
        let visit = patient.visits[0].clone();
        let ids: Vec<usize> = visit.iter().map(|c| vocab.id(&c.code)).collect();
        let f = scalar_fn(move |tape: &Tape, vars: &[Var<'_>]| {
            let rows = vars[0].gather_rows(&ids)?;
            let k = rows.value().rows();
            let weights = tape.vector(vec![1.0 / k as f64; k])?;
            let mean = weights.matmul(rows)?;
            Ok(mean.sigmoid().sum())
        });
        let mut p = vec![params.get("embedding").clone()];
        let err = finite_difference_check(&f, &mut p, 1e-5).unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }
}

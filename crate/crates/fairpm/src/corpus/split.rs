use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, CorpusError, Splits};

/// Patient-level split by largest-remainder apportionment of the ratios,
/// after a seeded shuffle. All of a patient's pairs stay in one split.
pub fn split(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<Splits, CorpusError> {
    if ratios.iter().any(|&r| r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidRatios(ratios));
    }
    let mut ids: Vec<String> = corpus
        .patients
        .iter()
        .map(|p| p.patient_id.clone())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    ids.shuffle(&mut rng);

    let counts = apportion(ids.len(), ratios);
    let valid_start = counts[0];
    let test_start = counts[0] + counts[1];
    Ok(Splits {
        train: ids[..valid_start].to_vec(),
        valid: ids[valid_start..test_start].to_vec(),
        test: ids[test_start..].to_vec(),
    })
}

/// Largest-remainder apportionment: floors first, then the leftover units go
/// to the largest fractional parts (ties broken by position).
fn apportion(total: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(total - assigned) {
        counts[order[i % 3]] += 1;
    }
    [counts[0], counts[1], counts[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, GeneratorConfig};
    use std::collections::HashSet;

    #[test]
    fn paper_sized_corpus_splits_exactly() {
        assert_eq!(apportion(825, [0.624, 0.072, 0.304]), [515, 59, 251]);
    }

    #[test]
    fn default_corpus_split_sizes() {
        let config = GeneratorConfig::default();
        let corpus = generate(&config).unwrap();
        let splits = split(&corpus, config.split_ratios.as_array(), config.seed).unwrap();
        assert_eq!(splits.train.len(), 515);
        assert_eq!(splits.valid.len(), 59);
        assert_eq!(splits.test.len(), 251);
    }

    #[test]
    fn all_in_train_when_ratio_is_one() {
        let config = GeneratorConfig {
            patient_count: 20,
            ..GeneratorConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let splits = split(&corpus, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(splits.train.len(), 20);
        assert!(splits.valid.is_empty() && splits.test.is_empty());
    }

    #[test]
    fn partitions_are_disjoint_and_cover() {
        let config = GeneratorConfig {
            patient_count: 101,
            ..GeneratorConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let splits = split(&corpus, [0.6, 0.2, 0.2], 3).unwrap();
        let mut seen = HashSet::new();
        for id in splits
            .train
            .iter()
            .chain(&splits.valid)
            .chain(&splits.test)
        {
            assert!(seen.insert(id.clone()), "duplicate {id}");
        }
        assert_eq!(seen.len(), 101);
    }

    #[test]
    fn different_seeds_same_sizes_different_assignment() {
        let config = GeneratorConfig {
            patient_count: 60,
            ..GeneratorConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let a = split(&corpus, [0.5, 0.25, 0.25], 1).unwrap();
        let b = split(&corpus, [0.5, 0.25, 0.25], 2).unwrap();
        assert_eq!(a.train.len(), b.train.len());
        assert_eq!(a.valid.len(), b.valid.len());
        assert_ne!(a, b);
    }

    #[test]
    fn negative_ratio_rejected() {
        let corpus = Corpus::default();
        assert!(matches!(
            split(&corpus, [1.2, -0.1, -0.1], 0),
            Err(CorpusError::InvalidRatios(_))
        ));
    }
}

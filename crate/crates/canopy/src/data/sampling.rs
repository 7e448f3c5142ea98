//! Negative sampling of training instances from impressions.

use std::sync::Arc;

use rand::Rng;

use crate::data::interest::{build_interest_index, InterestIndex};
use crate::data::mind::{Catalog, Impression};

/// One positive click with its sampled negatives, sharing the user's
/// interest index with the impression's other samples.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub interest_index: Arc<InterestIndex>,
    pub positive: String,
    pub negatives: Vec<String>,
}

/// Build one training sample per clicked candidate, drawing `k` negatives
/// uniformly from the impression's non-clicked candidates. Negatives are
/// drawn without replacement when at least `k` are available, with
/// replacement otherwise. Candidates missing from the catalog are ignored.
/// An impression whose usable negatives are empty yields no samples.
pub fn sample_training_instances(
    impression: &Impression,
    catalog: &Catalog,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<TrainingSample> {
    assert!(k >= 1, "need at least one negative per sample");

    let positives: Vec<&str> = impression
        .positives()
        .filter(|id| catalog.contains_key(*id))
        .collect();
    let negatives: Vec<&str> = impression
        .negatives()
        .filter(|id| catalog.contains_key(*id))
        .collect();
    if positives.is_empty() || negatives.is_empty() {
        return Vec::new();
    }

    let index = Arc::new(build_interest_index(&impression.history, catalog));

    positives
        .iter()
        .map(|pos| TrainingSample {
            interest_index: Arc::clone(&index),
            positive: pos.to_string(),
            negatives: draw(&negatives, k, rng),
        })
        .collect()
}

fn draw(pool: &[&str], k: usize, rng: &mut impl Rng) -> Vec<String> {
    if pool.len() >= k {
        // partial Fisher-Yates over indices
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        for i in 0..k {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        idx[..k].iter().map(|&i| pool[i].to_string()).collect()
    } else {
        (0..k)
            .map(|_| pool[rng.random_range(0..pool.len())].to_string())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mind::{NewsArticle, ENTITY_LEN, TITLE_LEN};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn catalog(ids: &[&str]) -> Catalog {
        ids.iter()
            .map(|id| {
                (
                    id.to_string(),
                    NewsArticle {
                        news_id: id.to_string(),
                        topic_id: 0,
                        subtopic_id: 0,
                        word_ids: vec![0; TITLE_LEN],
                        entity_ids: vec![0; ENTITY_LEN],
                        word_count: 0,
                        entity_count: 0,
                    },
                )
            })
            .collect()
    }

    fn impression(cands: &[(&str, u8)]) -> Impression {
        Impression {
            impression_id: "1".to_string(),
            user_id: "U1".to_string(),
            history: vec![],
            candidates: cands
                .iter()
                .map(|&(id, l)| (id.to_string(), l))
                .collect(),
        }
    }

    #[test]
    fn exactly_k_negatives_exhausts_the_pool() {
        let cat = catalog(&["P", "A", "B", "C", "D"]);
        let imp = impression(&[("P", 1), ("A", 0), ("B", 0), ("C", 0), ("D", 0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = sample_training_instances(&imp, &cat, 4, &mut rng);
        assert_eq!(samples.len(), 1);
        let negs: HashSet<&str> = samples[0].negatives.iter().map(|s| s.as_str()).collect();
        assert_eq!(negs, HashSet::from(["A", "B", "C", "D"]));
    }

    #[test]
    fn scarce_pool_draws_with_replacement() {
        let cat = catalog(&["P", "A", "B"]);
        let imp = impression(&[("P", 1), ("A", 0), ("B", 0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = sample_training_instances(&imp, &cat, 4, &mut rng);
        assert_eq!(samples[0].negatives.len(), 4);
        for n in &samples[0].negatives {
            assert!(n == "A" || n == "B");
        }
    }

    #[test]
    fn one_sample_per_positive_sharing_the_index() {
        let cat = catalog(&["P1", "P2", "A"]);
        let imp = impression(&[("P1", 1), ("P2", 1), ("A", 0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = sample_training_instances(&imp, &cat, 2, &mut rng);
        assert_eq!(samples.len(), 2);
        assert!(Arc::ptr_eq(
            &samples[0].interest_index,
            &samples[1].interest_index
        ));
    }

    #[test]
    fn no_negatives_yields_no_samples() {
        let cat = catalog(&["P"]);
        let imp = impression(&[("P", 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_training_instances(&imp, &cat, 4, &mut rng).is_empty());
    }

    #[test]
    fn fixed_seed_reproduces_draws() {
        let cat = catalog(&["P", "A", "B", "C", "D", "E", "F"]);
        let imp = impression(&[
            ("P", 1),
            ("A", 0),
            ("B", 0),
            ("C", 0),
            ("D", 0),
            ("E", 0),
            ("F", 0),
        ]);
        let a = sample_training_instances(&imp, &cat, 3, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_training_instances(&imp, &cat, 3, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a[0].negatives, b[0].negatives);
    }

    #[test]
    fn uniformity_over_many_draws() {
        // each of 6 negatives should appear in roughly 1/2 of 3-draws
        let cat = catalog(&["P", "A", "B", "C", "D", "E", "F"]);
        let imp = impression(&[
            ("P", 1),
            ("A", 0),
            ("B", 0),
            ("C", 0),
            ("D", 0),
            ("E", 0),
            ("F", 0),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut counts: std::collections::HashMap<String, usize> = Default::default();
        let trials = 4000;
        for _ in 0..trials {
            let s = sample_training_instances(&imp, &cat, 3, &mut rng);
            for n in &s[0].negatives {
                *counts.entry(n.clone()).or_default() += 1;
            }
        }
        for (_, &c) in &counts {
            let freq = c as f64 / trials as f64;
            assert!((freq - 0.5).abs() < 0.05, "frequency {freq}");
        }
    }
}

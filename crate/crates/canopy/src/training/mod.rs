//! Listwise training: per-sample loss graphs, Adam updates, verification.

pub mod adam;
pub mod gradcheck;
pub mod nce;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{gradcheck_fixture, gradient_check, GradCheckReport, DEFAULT_CHECK_SEED};
pub use nce::{nce_loss, nce_loss_node};

use std::path::Path;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::data::{sample_training_instances, Catalog, Impression, TrainingSample};
use crate::encoder::Dropout;
use crate::error::{Error, Result};
use crate::eval::evaluate_ranking;
use crate::hierarchy::{build_tree_nodes, EncodeProvider};
use crate::matching::{score_candidate_node, MatchConfig};
use crate::model::ModelParams;
use crate::params::GradStore;

/// Loss graph for one training sample: encode history and candidates through
/// a shared provider (so an article clicked twice, or appearing both in
/// history and as a candidate, is one node), build the interest tree, score
/// every candidate, and take the listwise loss.
pub fn sample_loss_node(
    g: &mut Graph,
    sample: &TrainingSample,
    provider: &mut EncodeProvider,
    config: &MatchConfig,
) -> NodeId {
    let p = provider.params;
    let catalog = provider.catalog;
    let tree = build_tree_nodes(g, &sample.interest_index, p, &mut |g, id| {
        provider.node(g, id)
    });

    let score = |g: &mut Graph, provider: &mut EncodeProvider, id: &str| {
        let article = &catalog[id];
        let node = provider.node(g, id);
        score_candidate_node(
            g,
            node,
            article.topic_id,
            article.subtopic_id,
            &tree,
            &sample.interest_index,
            config,
        )
    };
    let o_pos = score(g, provider, &sample.positive);
    let o_negs: Vec<NodeId> = sample
        .negatives
        .iter()
        .map(|id| score(g, provider, id))
        .collect();
    nce_loss_node(g, o_pos, &o_negs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub negatives_per_positive: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Keep pretrained word vectors fixed.
    pub freeze_word_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            negatives_per_positive: 4,
            learning_rate: 1e-4,
            epochs: 5,
            batch_size: 32,
            dropout: 0.2,
            clip_norm: 5.0,
            seed: 42,
            freeze_word_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("need at least one negative per positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub n_samples: usize,
    /// Validation AUC on the 0-100 scale; 0 without validation impressions.
    pub val_auc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

/// Train in place. Negatives are redrawn and the sample order reshuffled
/// every epoch from one seeded stream, so a run is a pure function of its
/// inputs. When `checkpoint_path` is given, the best-validation epoch is
/// saved there and restored into `p` before returning; otherwise `p` is left
/// at the final epoch.
pub fn train(
    p: &mut ModelParams,
    catalog: &Catalog,
    train_impressions: &[Impression],
    val_impressions: &[Impression],
    match_config: &MatchConfig,
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    match_config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            clip_norm: Some(cfg.clip_norm),
            ..AdamConfig::default()
        },
        &p.set,
    );
    if cfg.freeze_word_embeddings {
        opt.freeze(p.word_emb);
    }

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0;
    let mut best_val_auc = f64::NEG_INFINITY;
    let mut grads = GradStore::zeros_like(&p.set);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut samples: Vec<TrainingSample> = train_impressions
            .iter()
            .flat_map(|imp| {
                sample_training_instances(imp, catalog, cfg.negatives_per_positive, &mut rng)
            })
            .collect();
        if samples.is_empty() {
            return Err(Error::Invalid(
                "no trainable samples: every impression lacks a usable positive or negative"
                    .into(),
            ));
        }
        samples.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in samples.chunks(cfg.batch_size) {
            grads.reset();
            for sample in batch {
                let dropout = if cfg.dropout > 0.0 {
                    Dropout::active(cfg.dropout, ChaCha8Rng::seed_from_u64(rng.random()))
                } else {
                    Dropout::off()
                };
                let mut g = Graph::new(&p.set);
                let mut provider = EncodeProvider::new(catalog, p, dropout);
                let node = sample_loss_node(&mut g, sample, &mut provider, match_config);
                let loss = g.value(node)[[0, 0]];
                if !loss.is_finite() {
                    return Err(Error::Invalid(format!(
                        "non-finite loss {loss} in epoch {epoch}; aborting training"
                    )));
                }
                loss_sum += loss;
                // mean over the batch
                g.backward(node, 1.0 / batch.len() as f64, &mut grads);
            }
            opt.step(&mut p.set, &grads);
        }

        let val_auc = if val_impressions.is_empty() {
            0.0
        } else {
            evaluate_ranking(p, catalog, val_impressions, match_config).auc
        };
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / samples.len() as f64,
            n_samples: samples.len(),
            val_auc,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {}: loss {:.5} over {} samples, val AUC {:.2} ({:.1}s)",
            stats.epoch, stats.mean_loss, stats.n_samples, stats.val_auc, stats.seconds
        );
        let improved = val_impressions.is_empty() || val_auc > best_val_auc;
        if improved {
            best_epoch = epoch;
            best_val_auc = val_auc;
            if let Some(path) = checkpoint_path {
                crate::checkpoint::save(&p.set, path)?;
            }
        }
        epochs.push(stats);
    }

    if let Some(path) = checkpoint_path {
        if best_epoch != cfg.epochs {
            crate::checkpoint::restore(&mut p.set, path)?;
        }
    }
    Ok(TrainOutcome {
        epochs,
        best_epoch,
        best_val_auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::score_candidate;
    use crate::model::{ModelDims, ModelParams};

    /// Two-topic world: users with topic-0 history click topic-0 candidates.
    fn topical_world() -> (Catalog, Vec<Impression>) {
        let (_, catalog, _) = gradcheck_fixture(1);
        let imp = |id: &str, history: &[&str], cands: &[(&str, u8)]| Impression {
            impression_id: id.to_string(),
            user_id: format!("u-{id}"),
            history: history.iter().map(|s| s.to_string()).collect(),
            candidates: cands.iter().map(|&(c, l)| (c.to_string(), l)).collect(),
        };
        let impressions = vec![
            imp("1", &["n1", "n2", "n3"], &[("n2", 1), ("n6", 0)]),
            imp("2", &["n1", "n3", "n1"], &[("n1", 1), ("n4", 0)]),
            imp("3", &["n2", "n1"], &[("n3", 1), ("n5", 0)]),
            imp("4", &["n4", "n5"], &[("n5", 1), ("n2", 0)]),
            imp("5", &["n5", "n4", "n5"], &[("n4", 1), ("n1", 0)]),
            imp("6", &["n3", "n2", "n2"], &[("n1", 1), ("n6", 0)]),
        ];
        (catalog, impressions)
    }

    fn quick_config(seed: u64) -> TrainConfig {
        TrainConfig {
            negatives_per_positive: 1,
            learning_rate: 0.02,
            epochs: 6,
            batch_size: 4,
            dropout: 0.0,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_falls_and_validation_holds_up() {
        let (catalog, impressions) = topical_world();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = ModelParams::init(ModelDims::tiny(16, 8, 3, 6), &mut rng).unwrap();
        let outcome = train(
            &mut p,
            &catalog,
            &impressions,
            &impressions,
            &MatchConfig::default(),
            &quick_config(8),
            None,
        )
        .unwrap();
        assert_eq!(outcome.epochs.len(), 6);
        let first = &outcome.epochs[0];
        let last = &outcome.epochs[5];
        assert!(
            last.mean_loss < first.mean_loss,
            "loss went {} -> {}",
            first.mean_loss,
            last.mean_loss
        );
        assert!(outcome.best_val_auc >= first.val_auc);
        assert!(outcome.best_epoch >= 1 && outcome.best_epoch <= 6);
    }

    #[test]
    fn same_seed_reproduces_the_run_exactly() {
        let (catalog, impressions) = topical_world();
        let cfg = TrainConfig {
            epochs: 2,
            dropout: 0.2,
            ..quick_config(77)
        };

        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut p = ModelParams::init(ModelDims::tiny(16, 8, 3, 6), &mut rng).unwrap();
            let outcome = train(
                &mut p,
                &catalog,
                &impressions,
                &impressions,
                &MatchConfig::default(),
                &cfg,
                None,
            )
            .unwrap();
            (p, outcome)
        };
        let (p1, o1) = run();
        let (p2, o2) = run();
        for id in p1.set.ids() {
            assert_eq!(p1.set.get(id), p2.set.get(id), "{}", p1.set.name(id));
        }
        for (a, b) in o1.epochs.iter().zip(&o2.epochs) {
            assert_eq!(a.mean_loss.to_bits(), b.mean_loss.to_bits());
            assert_eq!(a.val_auc.to_bits(), b.val_auc.to_bits());
        }
    }

    #[test]
    fn frozen_word_embeddings_stay_put() {
        let (catalog, impressions) = topical_world();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut p = ModelParams::init(ModelDims::tiny(16, 8, 3, 6), &mut rng).unwrap();
        let before = p.set.get(p.word_emb).clone();
        let fusion_before = p.set.get(p.fusion_wt).clone();
        let cfg = TrainConfig {
            freeze_word_embeddings: true,
            epochs: 2,
            ..quick_config(11)
        };
        train(
            &mut p,
            &catalog,
            &impressions,
            &[],
            &MatchConfig::default(),
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(p.set.get(p.word_emb), &before);
        assert_ne!(p.set.get(p.fusion_wt), &fusion_before);
    }

    #[test]
    fn one_small_step_reduces_the_sample_loss() {
        let (mut p, catalog, sample) = gradcheck_fixture(21);
        let config = MatchConfig::default();
        let mut grads = GradStore::zeros_like(&p.set);
        let before = {
            let mut g = Graph::new(&p.set);
            let mut provider = EncodeProvider::new(&catalog, &p, Dropout::off());
            let node = sample_loss_node(&mut g, &sample, &mut provider, &config);
            g.backward(node, 1.0, &mut grads);
            g.value(node)[[0, 0]]
        };
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 1e-5,
                ..AdamConfig::default()
            },
            &p.set,
        );
        opt.step(&mut p.set, &grads);
        let after = {
            let mut g = Graph::new(&p.set);
            let mut provider = EncodeProvider::new(&catalog, &p, Dropout::off());
            let node = sample_loss_node(&mut g, &sample, &mut provider, &config);
            g.value(node)[[0, 0]]
        };
        assert!(after < before, "loss went {before} -> {after}");
    }

    #[test]
    fn masked_levels_receive_no_gradient() {
        let (p, catalog, sample) = gradcheck_fixture(22);
        // subtopic level only: the topic and user aggregation stages never run
        let config = MatchConfig::default().with_mask(true, false, false);
        let mut grads = GradStore::zeros_like(&p.set);
        let mut g = Graph::new(&p.set);
        let mut provider = EncodeProvider::new(&catalog, &p, Dropout::off());
        let node = sample_loss_node(&mut g, &sample, &mut provider, &config);
        g.backward(node, 1.0, &mut grads);

        for (name, id) in [
            ("topic_emb", p.topic_emb),
            ("topic_count_emb", p.topic_count_emb),
            ("subtopic_count_emb", p.subtopic_count_emb),
            ("phi_t.w", p.phi_t_w),
            ("phi_g.w", p.phi_g_w),
        ] {
            assert!(
                grads.get(id).iter().all(|&v| v == 0.0),
                "{name} got gradient despite the mask"
            );
        }
        for (name, id) in [
            ("subtopic_emb", p.subtopic_emb),
            ("phi_s.w", p.phi_s_w),
            ("word_emb", p.word_emb),
        ] {
            let norm: f64 = grads.get(id).iter().map(|v| v * v).sum();
            assert!(norm > 0.0, "{name} got no gradient");
        }
    }

    #[test]
    fn best_epoch_checkpoint_is_restored() {
        let (catalog, impressions) = topical_world();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut p = ModelParams::init(ModelDims::tiny(16, 8, 3, 6), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.bin");
        let outcome = train(
            &mut p,
            &catalog,
            &impressions,
            &impressions,
            &MatchConfig::default(),
            &quick_config(13),
            Some(&path),
        )
        .unwrap();
        assert!(path.exists());
        // in-memory params match the persisted best epoch
        let saved = crate::checkpoint::load(&path).unwrap();
        for (name, tensor) in saved {
            let id = p.set.lookup(&name).unwrap();
            assert_eq!(p.set.get(id), &tensor, "{name}");
        }
        assert!(outcome.best_epoch <= outcome.epochs.len());
    }

    #[test]
    fn exploding_run_aborts_with_an_error() {
        let (catalog, impressions) = topical_world();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut p = ModelParams::init(ModelDims::tiny(16, 8, 3, 6), &mut rng).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e160,
            epochs: 3,
            ..quick_config(15)
        };
        let err = train(
            &mut p,
            &catalog,
            &impressions,
            &[],
            &MatchConfig::default(),
            &cfg,
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn training_improves_candidate_separation() {
        // after fitting the six-impression world, a topic-0 reader should
        // score the topic-0 candidate above the unrelated one
        let (catalog, impressions) = topical_world();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut p = ModelParams::init(ModelDims::tiny(16, 8, 3, 6), &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 12,
            ..quick_config(17)
        };
        train(
            &mut p,
            &catalog,
            &impressions,
            &[],
            &MatchConfig::default(),
            &cfg,
            None,
        )
        .unwrap();
        let history: Vec<String> = ["n1", "n2", "n3"].iter().map(|s| s.to_string()).collect();
        let index = crate::data::build_interest_index(&history, &catalog);
        let tree = crate::hierarchy::build_interest_tree(&index, &p, &|id| {
            crate::encoder::news_vector(&catalog[id], &p)
        });
        let config = MatchConfig::default();
        let same_topic = score_candidate(&catalog["n2"], &tree, &index, &p, &config);
        let off_topic = score_candidate(&catalog["n6"], &tree, &index, &p, &config);
        assert!(
            same_topic.o > off_topic.o,
            "in-topic {} vs off-topic {}",
            same_topic.o,
            off_topic.o
        );
    }
}

//! Synthetic corpus generation: a topic/subtopic taxonomy, articles whose
//! titles carry a recoverable subtopic signal, and users whose clicks follow
//! a concentration-controlled interest profile. Output uses the MIND TSV
//! formats, so the rest of the pipeline runs unchanged on generated data.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::mind::Impression;
use crate::error::{Error, Result};

/// Chance a title word is drawn from the shared vocabulary instead of the
/// subtopic's signature block.
const WORD_BACKGROUND_MASS: f64 = 0.1;
/// Chance an entity is drawn from outside the subtopic's entity block.
const ENTITY_BACKGROUND_MASS: f64 = 0.15;
const ENTITIES_PER_SUBTOPIC: usize = 3;
const TITLE_WORDS: std::ops::RangeInclusive<usize> = 6..=10;
const ENTITY_COUNT: std::ops::RangeInclusive<usize> = 1..=3;
/// Fixed timestamp column; the behaviors parser ignores it.
const TIME_STAMP: &str = "11/11/2019 12:00:00 PM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_topics: usize,
    pub subtopics_per_topic: usize,
    /// Title-word universe size; each subtopic's signature block is an equal
    /// slice of it.
    pub vocab_size: usize,
    pub news_per_subtopic: usize,
    pub n_users: usize,
    /// Interest concentration. Profile weights are proportional to u^c for
    /// uniform u, so higher values focus a user on fewer subtopics and
    /// values near zero approach a uniform profile.
    pub concentration: f64,
    /// Clicks per user. Each click becomes one impression whose history is
    /// everything the user clicked before it.
    pub clicks_per_user: usize,
    /// Candidates shown per impression: one clicked plus uniform negatives.
    pub candidates_per_impression: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_topics: 6,
            subtopics_per_topic: 3,
            vocab_size: 600,
            news_per_subtopic: 20,
            n_users: 200,
            concentration: 8.0,
            clicks_per_user: 20,
            candidates_per_impression: 5,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn n_subtopics(&self) -> usize {
        self.n_topics * self.subtopics_per_topic
    }

    pub fn n_news(&self) -> usize {
        self.n_subtopics() * self.news_per_subtopic
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_topics", self.n_topics),
            ("subtopics_per_topic", self.subtopics_per_topic),
            ("vocab_size", self.vocab_size),
            ("news_per_subtopic", self.news_per_subtopic),
            ("n_users", self.n_users),
            ("clicks_per_user", self.clicks_per_user),
            ("candidates_per_impression", self.candidates_per_impression),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Invalid(format!(
                    "synthetic spec: {name} must be at least 1"
                )));
            }
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::Invalid(
                "synthetic spec: concentration must be a positive finite number".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticNews {
    pub news_id: String,
    pub topic: String,
    pub subtopic: String,
    pub topic_index: usize,
    /// Global subtopic index in `0..spec.n_subtopics()`.
    pub subtopic_index: usize,
    pub title: String,
    pub entities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserProfile {
    pub user_id: String,
    /// Subtopic click probabilities, indexed by global subtopic; sums to 1.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub news: Vec<SyntheticNews>,
    /// User-major, oldest impression first, exactly one click each.
    pub impressions: Vec<Impression>,
    pub profiles: Vec<UserProfile>,
}

/// Generate a full corpus: catalog, per-user click logs, and the ground
/// truth profiles the clicks were drawn from. Deterministic given `spec`;
/// negative slots are independent draws, so an impression can repeat a
/// non-clicked article.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let news = generate_news(spec);

    let mut by_subtopic: Vec<Vec<usize>> = vec![Vec::new(); spec.n_subtopics()];
    for (i, article) in news.iter().enumerate() {
        by_subtopic[article.subtopic_index].push(i);
    }

    let mut profiles = Vec::with_capacity(spec.n_users);
    let mut impressions = Vec::with_capacity(spec.n_users * spec.clicks_per_user);
    for user_idx in 0..spec.n_users {
        let (profile, user_impressions) = generate_user(spec, user_idx, &news, &by_subtopic);
        profiles.push(profile);
        impressions.extend(user_impressions);
    }

    Ok(SyntheticCorpus {
        spec: spec.clone(),
        news,
        impressions,
        profiles,
    })
}

fn generate_news(spec: &SyntheticSpec) -> Vec<SyntheticNews> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0));
    let mut news = Vec::with_capacity(spec.n_news());
    for subtopic in 0..spec.n_subtopics() {
        let topic = subtopic / spec.subtopics_per_topic;
        for _ in 0..spec.news_per_subtopic {
            let title: Vec<String> = (0..rng.random_range(TITLE_WORDS))
                .map(|_| format!("w{}", sample_word(&mut rng, spec, subtopic)))
                .collect();
            let entities: Vec<String> = (0..rng.random_range(ENTITY_COUNT))
                .map(|_| format!("Q{}", sample_entity(&mut rng, spec, subtopic) + 1))
                .collect();
            news.push(SyntheticNews {
                news_id: format!("N{:06}", news.len() + 1),
                topic: format!("topic{topic}"),
                subtopic: format!("sub{subtopic}"),
                topic_index: topic,
                subtopic_index: subtopic,
                title: title.join(" "),
                entities,
            });
        }
    }
    news
}

/// Mixture draw: most picks land in the subtopic's slice of the universe,
/// the rest anywhere in it.
fn block_sample(
    rng: &mut ChaCha8Rng,
    universe: usize,
    block_start: usize,
    block_len: usize,
    background: f64,
) -> usize {
    if rng.random::<f64>() < background {
        rng.random_range(0..universe)
    } else {
        (block_start + rng.random_range(0..block_len)) % universe
    }
}

fn sample_word(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, subtopic: usize) -> usize {
    let block = (spec.vocab_size / spec.n_subtopics()).max(1);
    let start = (subtopic * block) % spec.vocab_size;
    block_sample(rng, spec.vocab_size, start, block, WORD_BACKGROUND_MASS)
}

fn sample_entity(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, subtopic: usize) -> usize {
    let universe = spec.n_subtopics() * ENTITIES_PER_SUBTOPIC;
    let start = subtopic * ENTITIES_PER_SUBTOPIC;
    block_sample(rng, universe, start, ENTITIES_PER_SUBTOPIC, ENTITY_BACKGROUND_MASS)
}

fn generate_user(
    spec: &SyntheticSpec,
    user_idx: usize,
    news: &[SyntheticNews],
    by_subtopic: &[Vec<usize>],
) -> (UserProfile, Vec<Impression>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1 + user_idx as u64));
    let weights = draw_profile(&mut rng, spec.n_subtopics(), spec.concentration);
    let user_id = format!("U{:05}", user_idx + 1);

    let mut clicks: Vec<String> = Vec::new();
    let mut impressions = Vec::with_capacity(spec.clicks_per_user);
    for c in 0..spec.clicks_per_user {
        let subtopic = sample_categorical(&mut rng, &weights);
        let pool = &by_subtopic[subtopic];
        let positive = news[pool[rng.random_range(0..pool.len())]].news_id.clone();

        let mut candidates = vec![(positive.clone(), 1u8)];
        for _ in 1..spec.candidates_per_impression {
            if let Some(id) = draw_negative(&mut rng, news, &positive) {
                candidates.push((id, 0));
            }
        }
        candidates.shuffle(&mut rng);

        impressions.push(Impression {
            impression_id: (user_idx * spec.clicks_per_user + c + 1).to_string(),
            user_id: user_id.clone(),
            history: clicks.clone(),
            candidates,
        });
        clicks.push(positive);
    }

    (UserProfile { user_id, weights }, impressions)
}

/// Profile weights proportional to u^c for u ~ U(0,1], evaluated in log
/// space so extreme concentrations collapse onto the best-scoring subtopic
/// instead of underflowing.
fn draw_profile(rng: &mut ChaCha8Rng, n: usize, concentration: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..n)
        .map(|_| concentration * (1.0 - rng.random::<f64>()).ln())
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

fn sample_categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let mut x = rng.random::<f64>();
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Uniform catalog draw avoiding the clicked article; None when the catalog
/// holds nothing else.
fn draw_negative(rng: &mut ChaCha8Rng, news: &[SyntheticNews], positive: &str) -> Option<String> {
    if news.len() < 2 {
        return None;
    }
    loop {
        let pick = &news[rng.random_range(0..news.len())];
        if pick.news_id != positive {
            return Some(pick.news_id.clone());
        }
    }
}

/// splitmix64 finalizer over (seed, stream). Every user draws from its own
/// stream, so per-user generation is order-free.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplits {
    pub train: Vec<Impression>,
    pub validation: Vec<Impression>,
    pub test: Vec<Impression>,
}

/// Temporal split per user: the newest impression goes to test, the next
/// newest to validation, everything earlier to train. A user with two
/// impressions skips validation; a user with one keeps it in train.
pub fn split_impressions(impressions: &[Impression]) -> CorpusSplits {
    let mut splits = CorpusSplits {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    let mut start = 0;
    while start < impressions.len() {
        let user = &impressions[start].user_id;
        let mut end = start + 1;
        while end < impressions.len() && impressions[end].user_id == *user {
            end += 1;
        }
        let run = &impressions[start..end];
        match run.len() {
            1 => splits.train.extend_from_slice(run),
            2 => {
                splits.train.push(run[0].clone());
                splits.test.push(run[1].clone());
            }
            n => {
                splits.train.extend_from_slice(&run[..n - 2]);
                splits.validation.push(run[n - 2].clone());
                splits.test.push(run[n - 1].clone());
            }
        }
        start = end;
    }
    splits
}

pub fn write_news_tsv(path: &Path, news: &[SyntheticNews]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for article in news {
        let entities: Vec<serde_json::Value> = article
            .entities
            .iter()
            .map(|e| serde_json::json!({ "WikidataId": e }))
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t\t\t{}\t[]",
            article.news_id,
            article.topic,
            article.subtopic,
            article.title,
            serde_json::Value::Array(entities),
        )
        .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_behaviors_tsv(path: &Path, impressions: &[Impression]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for imp in impressions {
        let candidates: Vec<String> = imp
            .candidates
            .iter()
            .map(|(id, label)| format!("{id}-{label}"))
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            imp.impression_id,
            imp.user_id,
            TIME_STAMP,
            imp.history.join(" "),
            candidates.join(" "),
        )
        .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_profiles_json(path: &Path, profiles: &[UserProfile]) -> Result<()> {
    let mut json = serde_json::to_string_pretty(profiles).expect("profiles serialize");
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

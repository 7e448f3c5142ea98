//! Parsers for MIND-format `news.tsv` and `behaviors.tsv`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::vocab::{tokenize, Vocabulary};
use crate::error::{Error, Result};

/// Title word positions per article; shorter titles are zero-padded.
pub const TITLE_LEN: usize = 30;
/// Title entity positions per article.
pub const ENTITY_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub news_id: String,
    pub topic_id: usize,
    pub subtopic_id: usize,
    /// Exactly [`TITLE_LEN`] ids: `word_count` nonzero entries then zeros.
    pub word_ids: Vec<usize>,
    /// Exactly [`ENTITY_LEN`] ids: `entity_count` nonzero entries then zeros.
    pub entity_ids: Vec<usize>,
    pub word_count: usize,
    pub entity_count: usize,
}

pub type Catalog = BTreeMap<String, NewsArticle>;

/// How unseen strings are handled while parsing a news catalog.
pub enum VocabMode<'a> {
    /// Assign fresh ids, starting from an empty vocabulary.
    Build,
    /// Map unseen words/entities to padding (dropping them from the
    /// sequence); skip articles whose topic or subtopic is unknown.
    Frozen(&'a Vocabulary),
}

#[derive(Debug)]
pub struct CatalogParse {
    pub articles: Catalog,
    pub vocab: Vocabulary,
    /// Rows dropped: too few columns, duplicate news_id, or (frozen mode)
    /// unknown topic/subtopic.
    pub skipped_rows: usize,
}

/// Parse one or more `news.tsv` files into a catalog.
///
/// Columns: news_id, category, subcategory, title, abstract, url,
/// title_entities (JSON), abstract_entities. Only the title text and title
/// entities are encoded; the first [`TITLE_LEN`] tokens and [`ENTITY_LEN`]
/// entity ids are kept.
pub fn parse_news_files(paths: &[&Path], mode: VocabMode) -> Result<CatalogParse> {
    let (mut vocab, frozen) = match mode {
        VocabMode::Build => (Vocabulary::new(), None),
        VocabMode::Frozen(v) => (v.clone(), Some(())),
    };
    let frozen = frozen.is_some();

    let mut articles = Catalog::new();
    let mut skipped = 0usize;

    for path in paths {
        let file = File::open(path).map_err(|e| Error::io(*path, e))?;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(*path, e))?;
            if line.is_empty() {
                continue;
            }
            match parse_news_row(&line, &mut vocab, frozen) {
                Some(article) => {
                    if articles.contains_key(&article.news_id) {
                        // Multi-file parses repeat ids across splits; the
                        // first occurrence wins and identical re-parses are
                        // not counted as skips.
                        continue;
                    }
                    articles.insert(article.news_id.clone(), article);
                }
                None => {
                    warn!("{}:{}: skipping malformed news row", path.display(), lineno + 1);
                    skipped += 1;
                }
            }
        }
    }

    Ok(CatalogParse {
        articles,
        vocab,
        skipped_rows: skipped,
    })
}

pub fn parse_news_catalog(path: &Path, mode: VocabMode) -> Result<CatalogParse> {
    parse_news_files(&[path], mode)
}

fn parse_news_row(line: &str, vocab: &mut Vocabulary, frozen: bool) -> Option<NewsArticle> {
    let mut cols = line.split('\t');
    let news_id = cols.next()?.trim();
    let topic = cols.next()?.trim();
    let subtopic = cols.next()?.trim();
    let title = cols.next()?;
    let _abstract = cols.next();
    let _url = cols.next();
    let title_entities = cols.next().unwrap_or("");

    if news_id.is_empty() || topic.is_empty() || subtopic.is_empty() {
        return None;
    }

    let (topic_id, subtopic_id) = if frozen {
        let t = vocab.topic_id(topic)?;
        let s = vocab.subtopic_id(subtopic)?;
        if vocab.topic_of(s) != t {
            return None;
        }
        (t, s)
    } else {
        vocab.intern_categories(topic, subtopic)
    };

    let mut word_ids = Vec::with_capacity(TITLE_LEN);
    for token in tokenize(title) {
        if word_ids.len() == TITLE_LEN {
            break;
        }
        let id = if frozen {
            match vocab.word_id(&token) {
                Some(id) => id,
                None => continue,
            }
        } else {
            vocab.intern_word(&token)
        };
        word_ids.push(id);
    }
    let word_count = word_ids.len();
    word_ids.resize(TITLE_LEN, 0);

    let mut entity_ids = Vec::with_capacity(ENTITY_LEN);
    for key in extract_wikidata_ids(title_entities) {
        if entity_ids.len() == ENTITY_LEN {
            break;
        }
        let id = if frozen {
            match vocab.entity_id(&key) {
                Some(id) => id,
                None => continue,
            }
        } else {
            vocab.intern_entity(&key)
        };
        entity_ids.push(id);
    }
    let entity_count = entity_ids.len();
    entity_ids.resize(ENTITY_LEN, 0);

    Some(NewsArticle {
        news_id: news_id.to_string(),
        topic_id,
        subtopic_id,
        word_ids,
        entity_ids,
        word_count,
        entity_count,
    })
}

/// Pull WikidataId values out of a MIND entity-annotation JSON array.
/// Malformed or missing JSON yields no entities rather than an error.
fn extract_wikidata_ids(json: &str) -> Vec<String> {
    let json = json.trim();
    if json.is_empty() {
        return Vec::new();
    }
    let parsed: serde_json::Value = match serde_json::from_str(json) {
        Ok(v) => v,
        Err(_) => return Vec::new(),
    };
    let Some(items) = parsed.as_array() else {
        return Vec::new();
    };
    items
        .iter()
        .filter_map(|item| item.get("WikidataId")?.as_str().map(str::to_string))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Impression {
    pub impression_id: String,
    pub user_id: String,
    /// Clicked news ids, most recent last.
    pub history: Vec<String>,
    /// (news_id, label) pairs in display order; label is 0 or 1.
    pub candidates: Vec<(String, u8)>,
}

impl Impression {
    pub fn positives(&self) -> impl Iterator<Item = &str> {
        self.candidates
            .iter()
            .filter(|(_, l)| *l == 1)
            .map(|(id, _)| id.as_str())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &str> {
        self.candidates
            .iter()
            .filter(|(_, l)| *l == 0)
            .map(|(id, _)| id.as_str())
    }
}

#[derive(Debug)]
pub struct BehaviorsParse {
    pub impressions: Vec<Impression>,
    /// Rows dropped for a missing column, an unlabeled candidate token, or
    /// an empty candidate list.
    pub rejected_rows: usize,
}

/// Parse a MIND `behaviors.tsv` file.
///
/// Columns: impression_id, user_id, time, history (space-separated news
/// ids), impressions (space-separated `newsid-label` tokens).
pub fn parse_behaviors(path: &Path) -> Result<BehaviorsParse> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut impressions = Vec::new();
    let mut rejected = 0usize;

    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        match parse_behavior_row(&line) {
            Some(imp) => impressions.push(imp),
            None => {
                warn!(
                    "{}:{}: rejecting malformed behaviors row",
                    path.display(),
                    lineno + 1
                );
                rejected += 1;
            }
        }
    }

    Ok(BehaviorsParse {
        impressions,
        rejected_rows: rejected,
    })
}

fn parse_behavior_row(line: &str) -> Option<Impression> {
    let mut cols = line.split('\t');
    let impression_id = cols.next()?.trim().to_string();
    let user_id = cols.next()?.trim().to_string();
    let _time = cols.next()?;
    let history_col = cols.next()?;
    let impressions_col = cols.next()?;

    let history: Vec<String> = history_col
        .split_whitespace()
        .map(str::to_string)
        .collect();

    let mut candidates = Vec::new();
    for token in impressions_col.split_whitespace() {
        let (news_id, label) = token.rsplit_once('-')?;
        let label = match label {
            "0" => 0,
            "1" => 1,
            _ => return None,
        };
        if news_id.is_empty() {
            return None;
        }
        candidates.push((news_id.to_string(), label));
    }
    if candidates.is_empty() {
        return None;
    }

    Some(Impression {
        impression_id,
        user_id,
        history,
        candidates,
    })
}

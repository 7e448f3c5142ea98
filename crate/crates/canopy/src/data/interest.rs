//! Grouping a user's click history into the topic→subtopic interest index.

use std::collections::BTreeMap;

use log::warn;

use crate::data::mind::Catalog;

/// Clicks beyond the most recent 50 are ignored.
pub const HISTORY_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct SubtopicGroup {
    pub subtopic_id: usize,
    pub click_count: usize,
    /// w_s: click_count / M.
    pub ratio: f64,
    /// Clicked news in this group, history order preserved.
    pub news_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicGroup {
    pub topic_id: usize,
    pub click_count: usize,
    /// w_t: click_count / M.
    pub ratio: f64,
    /// Ordered by descending click_count, ties by ascending subtopic id.
    pub subtopics: Vec<SubtopicGroup>,
}

/// A user's recent clicks grouped by topic and subtopic, with the per-group
/// ratio weights used by hierarchical matching.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterestIndex {
    /// Number of grouped clicks (history length after truncation).
    pub m: usize,
    /// Ordered by descending click_count, ties by ascending topic id.
    pub topics: Vec<TopicGroup>,
}

impl InterestIndex {
    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn topic(&self, topic_id: usize) -> Option<&TopicGroup> {
        self.topics.iter().find(|t| t.topic_id == topic_id)
    }

    pub fn subtopic(&self, subtopic_id: usize) -> Option<&SubtopicGroup> {
        self.subtopics().find(|s| s.subtopic_id == subtopic_id)
    }

    /// All subtopic groups in index order (topic-major).
    pub fn subtopics(&self) -> impl Iterator<Item = &SubtopicGroup> {
        self.topics.iter().flat_map(|t| t.subtopics.iter())
    }
}

/// Group the most recent [`HISTORY_CAP`] resolvable clicks by topic and
/// subtopic. Clicks whose news id is missing from the catalog are dropped
/// with a warning before truncation.
pub fn build_interest_index(history: &[String], catalog: &Catalog) -> InterestIndex {
    let resolvable: Vec<&str> = history
        .iter()
        .filter(|id| {
            let known = catalog.contains_key(id.as_str());
            if !known {
                warn!("history news id {id} not in catalog; dropping click");
            }
            known
        })
        .map(|s| s.as_str())
        .collect();
    let start = resolvable.len().saturating_sub(HISTORY_CAP);
    let recent = &resolvable[start..];
    let m = recent.len();
    if m == 0 {
        return InterestIndex::default();
    }

    // topic id → subtopic id → clicked news, in history order
    let mut grouped: BTreeMap<usize, BTreeMap<usize, Vec<String>>> = BTreeMap::new();
    for id in recent {
        let article = &catalog[*id];
        grouped
            .entry(article.topic_id)
            .or_default()
            .entry(article.subtopic_id)
            .or_default()
            .push((*id).to_string());
    }

    let mut topics: Vec<TopicGroup> = grouped
        .into_iter()
        .map(|(topic_id, subs)| {
            let mut subtopics: Vec<SubtopicGroup> = subs
                .into_iter()
                .map(|(subtopic_id, news_ids)| SubtopicGroup {
                    subtopic_id,
                    click_count: news_ids.len(),
                    ratio: news_ids.len() as f64 / m as f64,
                    news_ids,
                })
                .collect();
            subtopics.sort_by(|a, b| {
                b.click_count
                    .cmp(&a.click_count)
                    .then(a.subtopic_id.cmp(&b.subtopic_id))
            });
            let click_count: usize = subtopics.iter().map(|s| s.click_count).sum();
            TopicGroup {
                topic_id,
                click_count,
                ratio: click_count as f64 / m as f64,
                subtopics,
            }
        })
        .collect();
    topics.sort_by(|a, b| {
        b.click_count
            .cmp(&a.click_count)
            .then(a.topic_id.cmp(&b.topic_id))
    });

    InterestIndex { m, topics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mind::{NewsArticle, ENTITY_LEN, TITLE_LEN};

    fn article(id: &str, topic: usize, subtopic: usize) -> NewsArticle {
        NewsArticle {
            news_id: id.to_string(),
            topic_id: topic,
            subtopic_id: subtopic,
            word_ids: vec![0; TITLE_LEN],
            entity_ids: vec![0; ENTITY_LEN],
            word_count: 0,
            entity_count: 0,
        }
    }

    fn catalog(entries: &[(&str, usize, usize)]) -> Catalog {
        entries
            .iter()
            .map(|&(id, t, s)| (id.to_string(), article(id, t, s)))
            .collect()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn groups_and_ratios_follow_history() {
        // (sports,football) ×2 + (finance,stock) ×1
        let cat = catalog(&[("A", 0, 0), ("B", 0, 0), ("C", 1, 5)]);
        let idx = build_interest_index(&ids(&["A", "B", "C"]), &cat);

        assert_eq!(idx.m, 3);
        assert_eq!(idx.topics.len(), 2);
        let sports = &idx.topics[0];
        assert_eq!(sports.topic_id, 0);
        assert_eq!(sports.click_count, 2);
        assert!((sports.ratio - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(sports.subtopics.len(), 1);
        assert_eq!(sports.subtopics[0].news_ids, ids(&["A", "B"]));
        assert!((sports.subtopics[0].ratio - 2.0 / 3.0).abs() < 1e-15);

        let finance = &idx.topics[1];
        assert_eq!(finance.click_count, 1);
        assert_eq!(finance.subtopics[0].subtopic_id, 5);
    }

    #[test]
    fn empty_history_gives_empty_index() {
        let cat = catalog(&[("A", 0, 0)]);
        let idx = build_interest_index(&[], &cat);
        assert!(idx.is_empty());
        assert!(idx.topics.is_empty());
    }

    #[test]
    fn truncates_to_most_recent_fifty() {
        let cat = catalog(&[("old", 0, 0), ("new", 1, 1)]);
        let mut history = vec!["old".to_string(); 10];
        history.extend(vec!["new".to_string(); 50]);
        let idx = build_interest_index(&history, &cat);
        assert_eq!(idx.m, 50);
        assert_eq!(idx.topics.len(), 1);
        assert_eq!(idx.topics[0].topic_id, 1);
        assert_eq!(idx.topics[0].click_count, 50);
    }

    #[test]
    fn unresolvable_clicks_are_dropped_before_truncation() {
        let cat = catalog(&[("A", 0, 0)]);
        let idx = build_interest_index(&ids(&["missing", "A", "A"]), &cat);
        assert_eq!(idx.m, 2);
        assert_eq!(idx.topics[0].subtopics[0].news_ids, ids(&["A", "A"]));
    }

    #[test]
    fn ordering_is_count_desc_then_id_asc() {
        let cat = catalog(&[
            ("A", 2, 20),
            ("B", 2, 21),
            ("C", 1, 10),
            ("D", 1, 10),
            ("E", 3, 30),
        ]);
        // topic 1: 2 clicks; topic 2: 2 clicks; topic 3: 1 click
        let idx = build_interest_index(&ids(&["A", "B", "C", "D", "E"]), &cat);
        let order: Vec<usize> = idx.topics.iter().map(|t| t.topic_id).collect();
        assert_eq!(order, vec![1, 2, 3]);
        let sub_order: Vec<usize> = idx.topics[1].subtopics.iter().map(|s| s.subtopic_id).collect();
        assert_eq!(sub_order, vec![20, 21]);
    }

    #[test]
    fn ratio_sums_are_exact() {
        let cat = catalog(&[("A", 0, 0), ("B", 0, 1), ("C", 1, 5), ("D", 2, 9)]);
        let idx = build_interest_index(&ids(&["A", "B", "C", "D", "A", "B", "C"]), &cat);
        let total: f64 = idx.topics.iter().map(|t| t.ratio).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for t in &idx.topics {
            let sub: f64 = t.subtopics.iter().map(|s| s.ratio).sum();
            assert!((sub - t.ratio).abs() < 1e-12);
        }
    }
}

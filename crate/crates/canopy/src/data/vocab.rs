//! Token, entity, and category vocabularies.
//!
//! Word and entity ids reserve 0 for padding; topic and subtopic ids are
//! plain dense indices starting at 0. Ids are assigned in first-seen order,
//! so parsing the same files again reproduces the same assignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Lowercase a string and split it into maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    word_to_id: BTreeMap<String, usize>,
    entity_to_id: BTreeMap<String, usize>,
    topic_to_id: BTreeMap<String, usize>,
    subtopic_to_id: BTreeMap<String, usize>,
    /// Parent topic id per subtopic id.
    subtopic_parent: Vec<usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Word table row count, padding row included.
    pub fn n_words(&self) -> usize {
        self.word_to_id.len() + 1
    }

    pub fn n_entities(&self) -> usize {
        self.entity_to_id.len() + 1
    }

    pub fn n_topics(&self) -> usize {
        self.topic_to_id.len()
    }

    pub fn n_subtopics(&self) -> usize {
        self.subtopic_to_id.len()
    }

    pub fn word_id(&self, token: &str) -> Option<usize> {
        self.word_to_id.get(token).copied()
    }

    pub fn entity_id(&self, key: &str) -> Option<usize> {
        self.entity_to_id.get(key).copied()
    }

    pub fn topic_id(&self, name: &str) -> Option<usize> {
        self.topic_to_id.get(name).copied()
    }

    pub fn subtopic_id(&self, name: &str) -> Option<usize> {
        self.subtopic_to_id.get(name).copied()
    }

    pub fn topic_of(&self, subtopic_id: usize) -> usize {
        self.subtopic_parent[subtopic_id]
    }

    pub(crate) fn intern_word(&mut self, token: &str) -> usize {
        let next = self.word_to_id.len() + 1;
        *self
            .word_to_id
            .entry(token.to_string())
            .or_insert(next)
    }

    pub(crate) fn intern_entity(&mut self, key: &str) -> usize {
        let next = self.entity_to_id.len() + 1;
        *self.entity_to_id.entry(key.to_string()).or_insert(next)
    }

    /// Interns a (topic, subtopic) pair, recording the parent edge on first
    /// sight of the subtopic. A subtopic reappearing under a different topic
    /// keeps its original parent; MIND data never does this.
    pub(crate) fn intern_categories(&mut self, topic: &str, subtopic: &str) -> (usize, usize) {
        let next_t = self.topic_to_id.len();
        let t = *self.topic_to_id.entry(topic.to_string()).or_insert(next_t);
        let next_s = self.subtopic_to_id.len();
        let s = *self
            .subtopic_to_id
            .entry(subtopic.to_string())
            .or_insert(next_s);
        if s == self.subtopic_parent.len() {
            self.subtopic_parent.push(t);
        }
        (t, s)
    }

    /// Iterate (token, id) pairs in id order, padding excluded.
    pub fn words(&self) -> Vec<(&str, usize)> {
        let mut v: Vec<_> = self
            .word_to_id
            .iter()
            .map(|(w, &i)| (w.as_str(), i))
            .collect();
        v.sort_by_key(|&(_, i)| i);
        v
    }

    pub fn entities(&self) -> Vec<(&str, usize)> {
        let mut v: Vec<_> = self
            .entity_to_id
            .iter()
            .map(|(e, &i)| (e.as_str(), i))
            .collect();
        v.sort_by_key(|&(_, i)| i);
        v
    }
}

//! Corpus parsing, vocabularies, pretrained vectors, and training-instance
//! construction.

pub mod embeddings;
pub mod interest;
pub mod mind;
pub mod sampling;
pub mod vocab;

pub use embeddings::{load_pretrained_embeddings, PretrainedEmbeddings};
pub use interest::{build_interest_index, InterestIndex, SubtopicGroup, TopicGroup, HISTORY_CAP};
pub use mind::{
    parse_behaviors, parse_news_catalog, parse_news_files, BehaviorsParse, Catalog, CatalogParse,
    Impression, NewsArticle, VocabMode, ENTITY_LEN, TITLE_LEN,
};
pub use sampling::{sample_training_instances, TrainingSample};
pub use vocab::{tokenize, Vocabulary};

//! Experiment configuration: one TOML file drives every command.
//!
//! Unknown keys are rejected so a typo cannot silently fall back to a
//! default. Relative paths resolve against the config file's directory,
//! which keeps configs portable together with the data they point at.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::matching::MatchConfig;
use crate::model::ModelDims;
use crate::synthetic::SyntheticSpec;
use crate::training::{TrainConfig, DEFAULT_CHECK_SEED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Reports, caches, and checkpoints land here.
    pub out_dir: PathBuf,
    /// One model per seed; aggregate reports carry mean and deviation.
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub matching: MatchConfig,
    pub evaluate: EvaluateConfig,
    pub recall: RecallConfig,
    pub ablate: AblateConfig,
    pub sweep: SweepConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seeds: vec![42],
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            matching: MatchConfig::default(),
            evaluate: EvaluateConfig::default(),
            recall: RecallConfig::default(),
            ablate: AblateConfig::default(),
            sweep: SweepConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Where the corpus comes from: either MIND-format files on disk or a
/// generated corpus described by `[data.synthetic]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// News catalogs; articles merge across files, first occurrence wins.
    pub news: Vec<PathBuf>,
    pub train_behaviors: Option<PathBuf>,
    pub validation_behaviors: Option<PathBuf>,
    pub test_behaviors: Option<PathBuf>,
    /// Pretrained word vectors, one `token v1 .. vD` line per word.
    pub word_embeddings: Option<PathBuf>,
    pub entity_embeddings: Option<PathBuf>,
    /// When present, `prepare` generates the corpus instead of reading
    /// `news`/`*_behaviors`, which must then be left unset.
    pub synthetic: Option<SyntheticSpec>,
}

/// Architecture sizes. Vocabulary sizes come from the prepared corpus, so
/// only the embedding and attention dimensions live in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub entity_dim: usize,
    pub text_heads: usize,
    pub entity_heads: usize,
    pub head_dim: usize,
    pub pool_dim: usize,
    pub count_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = ModelDims::full(1, 1, 1, 1);
        Self {
            word_dim: d.word_dim,
            entity_dim: d.entity_dim,
            text_heads: d.text_heads,
            entity_heads: d.entity_heads,
            head_dim: d.head_dim,
            pool_dim: d.pool_dim,
            count_dim: d.count_dim,
        }
    }
}

impl ModelConfig {
    /// Complete dimensions for a parsed vocabulary.
    pub fn dims(&self, vocab: &Vocabulary) -> ModelDims {
        ModelDims {
            n_words: vocab.n_words(),
            n_entities: vocab.n_entities(),
            n_topics: vocab.n_topics(),
            n_subtopics: vocab.n_subtopics(),
            word_dim: self.word_dim,
            entity_dim: self.entity_dim,
            text_heads: self.text_heads,
            entity_heads: self.entity_heads,
            head_dim: self.head_dim,
            pool_dim: self.pool_dim,
            count_dim: self.count_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("model.word_dim", self.word_dim),
            ("model.entity_dim", self.entity_dim),
            ("model.text_heads", self.text_heads),
            ("model.entity_heads", self.entity_heads),
            ("model.head_dim", self.head_dim),
            ("model.pool_dim", self.pool_dim),
            ("model.count_dim", self.count_dim),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Count score ties between a positive and a negative as half a
    /// concordant pair instead of a discordant one.
    pub ties_half: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecallConfig {
    /// Cutoffs for the recall/diversity curve.
    pub ks: Vec<usize>,
}

impl Default for RecallConfig {
    fn default() -> Self {
        Self {
            ks: (1..=10).map(|i| i * 100).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    /// Retrain one model per component mask instead of rescoring the
    /// recorded per-level scores of the full model.
    pub retrain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambda_s: Vec<f64>,
    pub lambda_t: Vec<f64>,
    /// Retrain one model per grid cell instead of rescoring the recorded
    /// per-level scores of the configured model.
    pub retrain: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        // Literal grid values so the configured point, once inserted, can
        // reproduce `evaluate` bit for bit.
        Self {
            lambda_s: vec![0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8],
            lambda_t: vec![0.06, 0.09, 0.12, 0.15, 0.18],
            retrain: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub epsilon: f64,
    /// Largest accepted relative error between analytic and numeric
    /// gradients.
    pub tolerance: f64,
    /// Seed for the built-in fixture.
    pub fixture_seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-3,
            fixture_seed: DEFAULT_CHECK_SEED,
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML file, resolve its relative paths against the file's
    /// directory, and validate the result.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        fn resolve(base: &Path, p: &mut PathBuf) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        resolve(base, &mut self.out_dir);
        for p in &mut self.data.news {
            resolve(base, p);
        }
        let optional = [
            &mut self.data.train_behaviors,
            &mut self.data.validation_behaviors,
            &mut self.data.test_behaviors,
            &mut self.data.word_embeddings,
            &mut self.data.entity_embeddings,
        ];
        for slot in optional {
            if let Some(p) = slot {
                resolve(base, p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            // Checkpoint and report paths are keyed by seed.
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if let Some(spec) = &self.data.synthetic {
            spec.validate()?;
            if !self.data.news.is_empty()
                || self.data.train_behaviors.is_some()
                || self.data.validation_behaviors.is_some()
                || self.data.test_behaviors.is_some()
            {
                return Err(Error::Config(
                    "data: synthetic corpus and on-disk files are mutually exclusive".into(),
                ));
            }
        } else if self.data.news.is_empty() {
            return Err(Error::Config(
                "data: set news files or a [data.synthetic] block".into(),
            ));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.matching.validate()?;
        if self.recall.ks.is_empty() {
            return Err(Error::Config("recall.ks must not be empty".into()));
        }
        if self.recall.ks.contains(&0) {
            return Err(Error::Config("recall.ks entries must be at least 1".into()));
        }
        if self.sweep.lambda_s.is_empty() || self.sweep.lambda_t.is_empty() {
            return Err(Error::Config("sweep grid axes must not be empty".into()));
        }
        for (&ls, &lt) in self
            .sweep
            .lambda_s
            .iter()
            .flat_map(|ls| self.sweep.lambda_t.iter().map(move |lt| (ls, lt)))
        {
            let cell = MatchConfig {
                lambda_s: ls,
                lambda_t: lt,
                ..self.matching
            };
            cell.validate()
                .map_err(|e| Error::Config(format!("sweep cell ({ls}, {lt}): {e}")))?;
        }
        if !(self.gradcheck.epsilon > 0.0 && self.gradcheck.epsilon.is_finite()) {
            return Err(Error::Config("gradcheck.epsilon must be positive".into()));
        }
        if !(self.gradcheck.tolerance > 0.0 && self.gradcheck.tolerance.is_finite()) {
            return Err(Error::Config("gradcheck.tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Sweep grid for the subtopic coefficient: the configured axis plus
    /// the configured operating point, sorted and deduplicated.
    pub fn sweep_axis_s(&self) -> Vec<f64> {
        grid_axis(&self.sweep.lambda_s, self.matching.lambda_s)
    }

    pub fn sweep_axis_t(&self) -> Vec<f64> {
        grid_axis(&self.sweep.lambda_t, self.matching.lambda_t)
    }
}

fn grid_axis(values: &[f64], include: f64) -> Vec<f64> {
    let mut axis = values.to_vec();
    axis.push(include);
    axis.sort_by(f64::total_cmp);
    axis.dedup();
    axis
}

//! Command implementations behind the binary.
//!
//! Every command reads one [`ExperimentConfig`], writes JSON (and for the
//! grid commands CSV) reports under the output directory, and returns the
//! summary it would print. `prepare` caches the parsed corpus; the other
//! commands load that cache instead of reparsing.
//!
//! Reports are a pure function of config and seed. The only fields that
//! vary between identical runs are wall-clock timings, all named `seconds`.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{
    load_pretrained_embeddings, parse_behaviors, parse_news_files, BehaviorsParse, Catalog,
    Impression, VocabMode, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_recall, paired_t_test, report_from_scored_with, score_impressions, MetricsReport,
    PairedTTest, RecallReport, ScoredImpression,
};
use crate::matching::{combine_scores, MatchConfig};
use crate::model::ModelParams;
use crate::synthetic;
use crate::training::{gradcheck_fixture, gradient_check, train, TrainOutcome};

/// Component masks scored by `ablate`: (name, subtopic, topic, user).
pub const ABLATION_MASKS: [(&str, bool, bool, bool); 4] = [
    ("full", true, true, true),
    ("user_subtopic", true, false, true),
    ("user_topic", false, true, true),
    ("user_only", false, false, true),
];

/// Pointers to the prepared corpus, written by `prepare` and read by every
/// later command. Files under the output directory are stored relative to
/// it, so a prepared directory can be moved as a unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub news: Vec<PathBuf>,
    pub train_behaviors: Option<PathBuf>,
    pub validation_behaviors: Option<PathBuf>,
    pub test_behaviors: Option<PathBuf>,
}

impl Manifest {
    fn map_paths(&mut self, f: impl Fn(&mut PathBuf)) {
        self.news.iter_mut().for_each(&f);
        for slot in [
            &mut self.train_behaviors,
            &mut self.validation_behaviors,
            &mut self.test_behaviors,
        ]
        .into_iter()
        .flatten()
        {
            f(slot);
        }
    }

    fn relative_to(mut self, out: &Path) -> Self {
        self.map_paths(|p| {
            if let Ok(rel) = p.strip_prefix(out) {
                *p = rel.to_path_buf();
            }
        });
        self
    }

    fn resolved_under(mut self, out: &Path) -> Self {
        self.map_paths(|p| {
            if p.is_relative() {
                *p = out.join(&*p);
            }
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub n_impressions: usize,
    pub rejected_rows: usize,
    pub n_candidates: usize,
    pub n_clicks: usize,
    pub mean_history_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_news: usize,
    pub n_topics: usize,
    pub n_subtopics: usize,
    /// Distinct title words, padding excluded.
    pub n_words: usize,
    pub n_entities: usize,
    pub skipped_news_rows: usize,
    pub splits: Vec<SplitStats>,
}

#[derive(Debug, Clone)]
pub struct PrepareOutcome {
    pub stats: DatasetStats,
    /// True when cached artifacts were reused without reparsing.
    pub reused: bool,
}

/// Mean and sample deviation over the configured seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    fn over(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RankBlock {
    pub auc: MetricSummary,
    pub mrr: MetricSummary,
    pub ndcg5: MetricSummary,
    pub ndcg10: MetricSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSeedSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub seeds: Vec<u64>,
    pub best_val_auc: MetricSummary,
    pub per_seed: Vec<TrainSeedSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateSummary {
    pub seeds: Vec<u64>,
    #[serde(flatten)]
    pub metrics: RankBlock,
    pub n_impressions: usize,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecallCurvePoint {
    pub k: usize,
    pub multi_recall: MetricSummary,
    pub multi_ilad: MetricSummary,
    pub single_recall: MetricSummary,
    pub single_ilad: MetricSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecallSummary {
    pub seeds: Vec<u64>,
    pub pool_size: usize,
    /// Interest channels per impression under multi-channel recall.
    pub mean_channels: f64,
    pub points: Vec<RecallCurvePoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblateRow {
    pub name: String,
    pub use_subtopic: bool,
    pub use_topic: bool,
    pub use_user: bool,
    #[serde(flatten)]
    pub metrics: RankBlock,
    pub auc_delta_vs_full: f64,
    /// Paired test on per-impression AUC, pooled across seeds.
    pub t_vs_full: Option<PairedTTest>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblateSummary {
    pub seeds: Vec<u64>,
    pub retrained: bool,
    pub rows: Vec<AblateRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub lambda_s: f64,
    pub lambda_t: f64,
    #[serde(flatten)]
    pub metrics: RankBlock,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub seeds: Vec<u64>,
    pub retrained: bool,
    pub best_lambda_s: f64,
    pub best_lambda_t: f64,
    pub cells: Vec<SweepCell>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckSummary {
    pub fixture_seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub worst: String,
    pub checked_entries: usize,
    pub loss: f64,
    pub pass: bool,
}

fn cache_dir(out: &Path) -> PathBuf {
    out.join("cache")
}

fn manifest_path(out: &Path) -> PathBuf {
    cache_dir(out).join("manifest.json")
}

fn catalog_path(out: &Path) -> PathBuf {
    cache_dir(out).join("catalog.json")
}

fn vocab_path(out: &Path) -> PathBuf {
    cache_dir(out).join("vocab.json")
}

fn stats_path(out: &Path) -> PathBuf {
    out.join("stats.json")
}

pub fn checkpoint_file(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("checkpoint_seed{seed}.cnp"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json_compact<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value)
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn rank_block(reports: &[MetricsReport]) -> RankBlock {
    let col = |f: fn(&MetricsReport) -> f64| {
        let values: Vec<f64> = reports.iter().map(f).collect();
        MetricSummary::over(&values)
    };
    RankBlock {
        auc: col(|r| r.auc),
        mrr: col(|r| r.mrr),
        ndcg5: col(|r| r.ndcg5),
        ndcg10: col(|r| r.ndcg10),
    }
}

fn pooled_impression_auc(reports: &[MetricsReport]) -> Vec<f64> {
    reports
        .iter()
        .flat_map(|r| r.per_impression.iter().map(|m| m.auc))
        .collect()
}

struct PreparedData {
    manifest: Manifest,
    catalog: Catalog,
    vocab: Vocabulary,
}

fn load_prepared(out: &Path) -> Result<PreparedData> {
    for path in [manifest_path(out), catalog_path(out), vocab_path(out)] {
        if !path.exists() {
            return Err(Error::Config(format!(
                "{} is missing; run prepare first",
                path.display()
            )));
        }
    }
    let manifest: Manifest = read_json(&manifest_path(out))?;
    Ok(PreparedData {
        manifest: manifest.resolved_under(out),
        catalog: read_json(&catalog_path(out))?,
        vocab: read_json(&vocab_path(out))?,
    })
}

fn required_split(path: &Option<PathBuf>, name: &str) -> Result<Vec<Impression>> {
    let path = path
        .as_ref()
        .ok_or_else(|| Error::Config(format!("no {name} behaviors configured")))?;
    let parsed = parse_behaviors(path)?;
    if parsed.impressions.is_empty() {
        return Err(Error::Invalid(format!(
            "{name} split has no impressions ({})",
            path.display()
        )));
    }
    Ok(parsed.impressions)
}

fn optional_split(path: &Option<PathBuf>) -> Result<Vec<Impression>> {
    match path {
        Some(p) => Ok(parse_behaviors(p)?.impressions),
        None => Ok(Vec::new()),
    }
}

/// Fresh parameters for one seed, with pretrained tables applied when the
/// config points at vector files.
fn init_params(config: &ExperimentConfig, vocab: &Vocabulary, seed: u64) -> Result<ModelParams> {
    let dims = config.model.dims(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(dims, &mut rng)?;
    if config.data.word_embeddings.is_some() || config.data.entity_embeddings.is_some() {
        let pre = load_pretrained_embeddings(
            vocab,
            params.dims.word_dim,
            params.dims.entity_dim,
            config.data.word_embeddings.as_deref(),
            config.data.entity_embeddings.as_deref(),
            &mut rng,
        )?;
        params.apply_pretrained(&pre)?;
        info!(
            "pretrained coverage: {:.1}% words, {:.1}% entities",
            100.0 * pre.word_coverage,
            100.0 * pre.entity_coverage
        );
    }
    Ok(params)
}

/// Parameters restored from the checkpoint trained for `seed`.
fn restored_params(
    config: &ExperimentConfig,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<ModelParams> {
    let path = checkpoint_file(&config.out_dir, seed);
    if !path.exists() {
        return Err(Error::Checkpoint(format!(
            "{} not found; run train first",
            path.display()
        )));
    }
    let dims = config.model.dims(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(dims, &mut rng)?;
    checkpoint::restore(&mut params.set, &path)?;
    Ok(params)
}

fn split_entry(name: &str, parsed: &BehaviorsParse) -> SplitStats {
    let n = parsed.impressions.len();
    let n_candidates: usize = parsed.impressions.iter().map(|i| i.candidates.len()).sum();
    let n_clicks: usize = parsed
        .impressions
        .iter()
        .map(|i| i.candidates.iter().filter(|(_, l)| *l == 1).count())
        .sum();
    let history: usize = parsed.impressions.iter().map(|i| i.history.len()).sum();
    SplitStats {
        split: name.to_string(),
        n_impressions: n,
        rejected_rows: parsed.rejected_rows,
        n_candidates,
        n_clicks,
        mean_history_len: if n == 0 { 0.0 } else { history as f64 / n as f64 },
    }
}

/// Parse or generate the corpus, then cache catalog, vocabulary, manifest,
/// and stats under the output directory. A complete cache is reused as is.
pub fn cmd_prepare(config: &ExperimentConfig) -> Result<PrepareOutcome> {
    let out = &config.out_dir;
    fs::create_dir_all(cache_dir(out)).map_err(|e| Error::io(&cache_dir(out), e))?;

    let cached = [
        manifest_path(out),
        catalog_path(out),
        vocab_path(out),
        stats_path(out),
    ]
    .iter()
    .all(|p| p.exists());
    if cached {
        info!("complete cache under {}; skipping reparse", out.display());
        let stats = read_json(&stats_path(out))?;
        return Ok(PrepareOutcome {
            stats,
            reused: true,
        });
    }

    let manifest = if let Some(spec) = &config.data.synthetic {
        let corpus = synthetic::generate(spec)?;
        let data_dir = out.join("data");
        fs::create_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
        let news = data_dir.join("news.tsv");
        synthetic::write_news_tsv(&news, &corpus.news)?;
        let splits = synthetic::split_impressions(&corpus.impressions);
        let train_p = data_dir.join("behaviors_train.tsv");
        let val_p = data_dir.join("behaviors_validation.tsv");
        let test_p = data_dir.join("behaviors_test.tsv");
        synthetic::write_behaviors_tsv(&train_p, &splits.train)?;
        synthetic::write_behaviors_tsv(&val_p, &splits.validation)?;
        synthetic::write_behaviors_tsv(&test_p, &splits.test)?;
        synthetic::write_profiles_json(&data_dir.join("profiles.json"), &corpus.profiles)?;
        info!(
            "generated {} articles and {} impressions",
            corpus.news.len(),
            corpus.impressions.len()
        );
        Manifest {
            news: vec![news],
            train_behaviors: Some(train_p),
            validation_behaviors: Some(val_p),
            test_behaviors: Some(test_p),
        }
    } else {
        Manifest {
            news: config.data.news.clone(),
            train_behaviors: config.data.train_behaviors.clone(),
            validation_behaviors: config.data.validation_behaviors.clone(),
            test_behaviors: config.data.test_behaviors.clone(),
        }
    };

    let news_refs: Vec<&Path> = manifest.news.iter().map(PathBuf::as_path).collect();
    let parsed = parse_news_files(&news_refs, VocabMode::Build)?;
    let mut splits = Vec::new();
    let behavior_files = [
        ("train", &manifest.train_behaviors),
        ("validation", &manifest.validation_behaviors),
        ("test", &manifest.test_behaviors),
    ];
    for (name, path) in behavior_files {
        if let Some(path) = path {
            splits.push(split_entry(name, &parse_behaviors(path)?));
        }
    }
    let stats = DatasetStats {
        n_news: parsed.articles.len(),
        n_topics: parsed.vocab.n_topics(),
        n_subtopics: parsed.vocab.n_subtopics(),
        n_words: parsed.vocab.n_words() - 1,
        n_entities: parsed.vocab.n_entities() - 1,
        skipped_news_rows: parsed.skipped_rows,
        splits,
    };
    write_json_compact(&catalog_path(out), &parsed.articles)?;
    write_json_compact(&vocab_path(out), &parsed.vocab)?;
    write_json(&manifest_path(out), &manifest.clone().relative_to(out))?;
    write_json(&stats_path(out), &stats)?;
    Ok(PrepareOutcome {
        stats,
        reused: false,
    })
}

#[derive(Debug, Clone, Serialize)]
struct SeedTrainReport<'a> {
    seed: u64,
    outcome: &'a TrainOutcome,
}

/// Train one model per seed, checkpointing the best validation epoch.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainSummary> {
    let prepared = load_prepared(&config.out_dir)?;
    let train_imps = required_split(&prepared.manifest.train_behaviors, "train")?;
    let val_imps = optional_split(&prepared.manifest.validation_behaviors)?;

    let mut per_seed = Vec::new();
    for &seed in &config.seeds {
        info!("training seed {seed}");
        let mut params = init_params(config, &prepared.vocab, seed)?;
        let mut tc = config.train;
        tc.seed = seed;
        let ckpt = checkpoint_file(&config.out_dir, seed);
        let outcome = train(
            &mut params,
            &prepared.catalog,
            &train_imps,
            &val_imps,
            &config.matching,
            &tc,
            Some(&ckpt),
        )?;
        write_json(
            &config.out_dir.join(format!("train_seed{seed}.json")),
            &SeedTrainReport {
                seed,
                outcome: &outcome,
            },
        )?;
        info!(
            "seed {seed}: best epoch {} with validation AUC {:.2}",
            outcome.best_epoch, outcome.best_val_auc
        );
        per_seed.push(TrainSeedSummary {
            seed,
            best_epoch: outcome.best_epoch,
            best_val_auc: outcome.best_val_auc,
            epochs: outcome.epochs.len(),
        });
    }
    let bests: Vec<f64> = per_seed.iter().map(|s| s.best_val_auc).collect();
    let summary = TrainSummary {
        seeds: config.seeds.clone(),
        best_val_auc: MetricSummary::over(&bests),
        per_seed,
    };
    write_json(&config.out_dir.join("train.json"), &summary)?;
    Ok(summary)
}

/// Rank the test split with each seed's checkpoint.
pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<EvaluateSummary> {
    let prepared = load_prepared(&config.out_dir)?;
    let test = required_split(&prepared.manifest.test_behaviors, "test")?;

    let mut reports = Vec::new();
    for &seed in &config.seeds {
        let params = restored_params(config, &prepared.vocab, seed)?;
        let scored = score_impressions(&params, &prepared.catalog, &test, &config.matching);
        let report = report_from_scored_with(&scored, config.evaluate.ties_half, |b| b.o);
        write_json(
            &config.out_dir.join(format!("evaluate_seed{seed}.json")),
            &report,
        )?;
        info!("seed {seed}: test AUC {:.2}", report.auc);
        reports.push(report);
    }
    let summary = EvaluateSummary {
        seeds: config.seeds.clone(),
        metrics: rank_block(&reports),
        n_impressions: reports[0].n_impressions,
        n_skipped: reports[0].n_skipped,
    };
    write_json(&config.out_dir.join("evaluate.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
struct SeedRecallReport<'a> {
    seed: u64,
    multi_channel: &'a RecallReport,
    single_vector: &'a RecallReport,
}

/// Recall and diversity curves for multi-channel and single-vector
/// candidate generation over the whole catalog.
pub fn cmd_recall(config: &ExperimentConfig) -> Result<RecallSummary> {
    let prepared = load_prepared(&config.out_dir)?;
    let test = required_split(&prepared.manifest.test_behaviors, "test")?;

    let mut multi_reports = Vec::new();
    let mut single_reports = Vec::new();
    for &seed in &config.seeds {
        let params = restored_params(config, &prepared.vocab, seed)?;
        let multi = evaluate_recall(&params, &prepared.catalog, &test, &config.recall.ks, true);
        let single = evaluate_recall(&params, &prepared.catalog, &test, &config.recall.ks, false);
        write_json(
            &config.out_dir.join(format!("recall_seed{seed}.json")),
            &SeedRecallReport {
                seed,
                multi_channel: &multi,
                single_vector: &single,
            },
        )?;
        multi_reports.push(multi);
        single_reports.push(single);
    }

    let n_points = multi_reports[0].points.len();
    let column = |reports: &[RecallReport], i: usize, f: fn(&crate::eval::RecallPoint) -> f64| {
        let values: Vec<f64> = reports.iter().map(|r| f(&r.points[i])).collect();
        MetricSummary::over(&values)
    };
    let mut points = Vec::with_capacity(n_points);
    for i in 0..n_points {
        points.push(RecallCurvePoint {
            k: multi_reports[0].points[i].k,
            multi_recall: column(&multi_reports, i, |p| p.recall),
            multi_ilad: column(&multi_reports, i, |p| p.ilad),
            single_recall: column(&single_reports, i, |p| p.recall),
            single_ilad: column(&single_reports, i, |p| p.ilad),
        });
    }
    let channels: Vec<f64> = multi_reports.iter().map(|r| r.mean_channels).collect();
    let summary = RecallSummary {
        seeds: config.seeds.clone(),
        pool_size: multi_reports[0].pool_size,
        mean_channels: mean_std(&channels).0,
        points,
    };
    write_json(&config.out_dir.join("recall.json"), &summary)?;

    let mut csv = String::from(
        "k,multi_recall,multi_recall_std,multi_ilad,multi_ilad_std,\
         single_recall,single_recall_std,single_ilad,single_ilad_std\n",
    );
    for p in &summary.points {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.k,
            p.multi_recall.mean,
            p.multi_recall.std,
            p.multi_ilad.mean,
            p.multi_ilad.std,
            p.single_recall.mean,
            p.single_recall.std,
            p.single_ilad.mean,
            p.single_ilad.std,
        ));
    }
    write_text(&config.out_dir.join("recall.csv"), &csv)?;
    Ok(summary)
}

/// Score the test split with interest levels disabled one at a time.
///
/// By default the full model's recorded per-level scores are recombined
/// under each mask, so one training run serves all four rows. With
/// `ablate.retrain` every mask trains its own model.
pub fn cmd_ablate(config: &ExperimentConfig) -> Result<AblateSummary> {
    let prepared = load_prepared(&config.out_dir)?;
    let test = required_split(&prepared.manifest.test_behaviors, "test")?;

    let mut reports: Vec<Vec<MetricsReport>> = vec![Vec::new(); ABLATION_MASKS.len()];
    if config.ablate.retrain {
        let train_imps = required_split(&prepared.manifest.train_behaviors, "train")?;
        let val_imps = optional_split(&prepared.manifest.validation_behaviors)?;
        for (mi, &(name, s, t, u)) in ABLATION_MASKS.iter().enumerate() {
            let masked = config.matching.with_mask(s, t, u);
            for &seed in &config.seeds {
                info!("retraining mask {name} with seed {seed}");
                let mut params = init_params(config, &prepared.vocab, seed)?;
                let mut tc = config.train;
                tc.seed = seed;
                let ckpt = config
                    .out_dir
                    .join(format!("checkpoint_ablate_{name}_seed{seed}.cnp"));
                train(
                    &mut params,
                    &prepared.catalog,
                    &train_imps,
                    &val_imps,
                    &masked,
                    &tc,
                    Some(&ckpt),
                )?;
                let scored = score_impressions(&params, &prepared.catalog, &test, &masked);
                reports[mi].push(report_from_scored_with(
                    &scored,
                    config.evaluate.ties_half,
                    |b| b.o,
                ));
            }
        }
    } else {
        // Record raw per-level scores once, then recombine under each mask.
        let record = config.matching.with_mask(true, true, true);
        for &seed in &config.seeds {
            let params = restored_params(config, &prepared.vocab, seed)?;
            let scored = score_impressions(&params, &prepared.catalog, &test, &record);
            for (mi, &(_, s, t, u)) in ABLATION_MASKS.iter().enumerate() {
                let masked = config.matching.with_mask(s, t, u);
                reports[mi].push(report_from_scored_with(
                    &scored,
                    config.evaluate.ties_half,
                    move |b| combine_scores(b.o_s, b.o_t, b.o_g, &masked),
                ));
            }
        }
    }

    let full_block = rank_block(&reports[0]);
    let full_auc = pooled_impression_auc(&reports[0]);
    let mut rows = Vec::new();
    for (mi, &(name, s, t, u)) in ABLATION_MASKS.iter().enumerate() {
        let metrics = rank_block(&reports[mi]);
        let auc_delta_vs_full = metrics.auc.mean - full_block.auc.mean;
        let t_vs_full = if mi == 0 {
            None
        } else {
            paired_t_test(&pooled_impression_auc(&reports[mi]), &full_auc)
        };
        rows.push(AblateRow {
            name: name.to_string(),
            use_subtopic: s,
            use_topic: t,
            use_user: u,
            metrics,
            auc_delta_vs_full,
            t_vs_full,
        });
    }
    let summary = AblateSummary {
        seeds: config.seeds.clone(),
        retrained: config.ablate.retrain,
        rows,
    };
    write_json(&config.out_dir.join("ablate.json"), &summary)?;

    let mut csv = String::from(
        "name,use_subtopic,use_topic,use_user,auc,auc_std,mrr,mrr_std,\
         ndcg5,ndcg5_std,ndcg10,ndcg10_std,auc_delta_vs_full,p_value_vs_full\n",
    );
    for r in &summary.rows {
        let p = r
            .t_vs_full
            .as_ref()
            .map(|t| t.p_value.to_string())
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.name,
            r.use_subtopic,
            r.use_topic,
            r.use_user,
            r.metrics.auc.mean,
            r.metrics.auc.std,
            r.metrics.mrr.mean,
            r.metrics.mrr.std,
            r.metrics.ndcg5.mean,
            r.metrics.ndcg5.std,
            r.metrics.ndcg10.mean,
            r.metrics.ndcg10.std,
            r.auc_delta_vs_full,
            p,
        ));
    }
    write_text(&config.out_dir.join("ablate.csv"), &csv)?;
    Ok(summary)
}

/// Grid over the subtopic and topic mixing coefficients.
///
/// By default each seed is scored once with the configured model and every
/// cell recombines the recorded per-level scores, so the configured cell
/// reproduces `evaluate` exactly. With `sweep.retrain` every cell trains
/// its own models.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<SweepSummary> {
    let prepared = load_prepared(&config.out_dir)?;
    let test = required_split(&prepared.manifest.test_behaviors, "test")?;
    let axis_s = config.sweep_axis_s();
    let axis_t = config.sweep_axis_t();

    let mut cells = Vec::new();
    if config.sweep.retrain {
        let train_imps = required_split(&prepared.manifest.train_behaviors, "train")?;
        let val_imps = optional_split(&prepared.manifest.validation_behaviors)?;
        for &ls in &axis_s {
            for &lt in &axis_t {
                let cell = MatchConfig {
                    lambda_s: ls,
                    lambda_t: lt,
                    ..config.matching
                };
                let mut reports = Vec::new();
                for &seed in &config.seeds {
                    info!("retraining cell ({ls}, {lt}) with seed {seed}");
                    let mut params = init_params(config, &prepared.vocab, seed)?;
                    let mut tc = config.train;
                    tc.seed = seed;
                    let ckpt = config
                        .out_dir
                        .join(format!("checkpoint_sweep_s{ls}_t{lt}_seed{seed}.cnp"));
                    train(
                        &mut params,
                        &prepared.catalog,
                        &train_imps,
                        &val_imps,
                        &cell,
                        &tc,
                        Some(&ckpt),
                    )?;
                    let scored = score_impressions(&params, &prepared.catalog, &test, &cell);
                    reports.push(report_from_scored_with(
                        &scored,
                        config.evaluate.ties_half,
                        |b| b.o,
                    ));
                }
                cells.push(SweepCell {
                    lambda_s: ls,
                    lambda_t: lt,
                    metrics: rank_block(&reports),
                });
            }
        }
    } else {
        let per_seed_scored: Vec<Vec<ScoredImpression>> = config
            .seeds
            .iter()
            .map(|&seed| {
                let params = restored_params(config, &prepared.vocab, seed)?;
                Ok(score_impressions(
                    &params,
                    &prepared.catalog,
                    &test,
                    &config.matching,
                ))
            })
            .collect::<Result<_>>()?;
        for &ls in &axis_s {
            for &lt in &axis_t {
                let cell = MatchConfig {
                    lambda_s: ls,
                    lambda_t: lt,
                    ..config.matching
                };
                let reports: Vec<MetricsReport> = per_seed_scored
                    .iter()
                    .map(|scored| {
                        report_from_scored_with(scored, config.evaluate.ties_half, |b| {
                            combine_scores(b.o_s, b.o_t, b.o_g, &cell)
                        })
                    })
                    .collect();
                cells.push(SweepCell {
                    lambda_s: ls,
                    lambda_t: lt,
                    metrics: rank_block(&reports),
                });
            }
        }
    }

    let best = cells
        .iter()
        .max_by(|a, b| a.metrics.auc.mean.total_cmp(&b.metrics.auc.mean))
        .expect("grid axes are validated non-empty");
    let summary = SweepSummary {
        seeds: config.seeds.clone(),
        retrained: config.sweep.retrain,
        best_lambda_s: best.lambda_s,
        best_lambda_t: best.lambda_t,
        cells,
    };
    write_json(&config.out_dir.join("sweep.json"), &summary)?;

    let mut csv = String::from(
        "lambda_s,lambda_t,auc,auc_std,mrr,mrr_std,ndcg5,ndcg5_std,ndcg10,ndcg10_std\n",
    );
    for c in &summary.cells {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.lambda_s,
            c.lambda_t,
            c.metrics.auc.mean,
            c.metrics.auc.std,
            c.metrics.mrr.mean,
            c.metrics.mrr.std,
            c.metrics.ndcg5.mean,
            c.metrics.ndcg5.std,
            c.metrics.ndcg10.mean,
            c.metrics.ndcg10.std,
        ));
    }
    write_text(&config.out_dir.join("sweep.csv"), &csv)?;
    Ok(summary)
}

/// Compare the analytic training gradient against central differences on
/// the built-in fixture.
pub fn cmd_gradcheck(config: &ExperimentConfig) -> Result<GradCheckSummary> {
    let g = config.gradcheck;
    let (mut params, catalog, sample) = gradcheck_fixture(g.fixture_seed);
    // Always the full default matching config: a masked level would leave
    // whole parameter blocks with no gradient to compare.
    let report = gradient_check(
        &mut params,
        &catalog,
        &sample,
        &MatchConfig::default(),
        g.epsilon,
    );
    let summary = GradCheckSummary {
        fixture_seed: g.fixture_seed,
        epsilon: g.epsilon,
        tolerance: g.tolerance,
        max_rel_error: report.max_rel_error,
        worst: report.worst,
        checked_entries: report.checked_entries,
        loss: report.loss,
        pass: report.max_rel_error < g.tolerance,
    };
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    write_json(&config.out_dir.join("gradcheck.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticSpec;

    fn smoke_config(out_dir: PathBuf) -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.out_dir = out_dir;
        config.seeds = vec![3];
        config.data.synthetic = Some(SyntheticSpec {
            n_topics: 2,
            subtopics_per_topic: 2,
            vocab_size: 60,
            news_per_subtopic: 4,
            n_users: 6,
            concentration: 6.0,
            clicks_per_user: 5,
            candidates_per_impression: 4,
            seed: 9,
        });
        config.model.word_dim = 4;
        config.model.entity_dim = 3;
        config.model.text_heads = 2;
        config.model.entity_heads = 1;
        config.model.head_dim = 3;
        config.model.pool_dim = 4;
        config.model.count_dim = 2;
        config.train.epochs = 1;
        config.train.batch_size = 8;
        config.train.negatives_per_positive = 2;
        config.train.learning_rate = 1e-3;
        config.recall.ks = vec![4, 8];
        config.validate().unwrap();
        config
    }

    #[test]
    fn pipeline_runs_end_to_end_on_a_generated_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let config = smoke_config(dir.path().join("out"));

        let prepared = cmd_prepare(&config).unwrap();
        assert!(!prepared.reused);
        assert_eq!(prepared.stats.n_news, 16);
        assert_eq!(prepared.stats.n_topics, 2);
        assert_eq!(prepared.stats.n_subtopics, 4);
        let names: Vec<&str> = prepared
            .stats
            .splits
            .iter()
            .map(|s| s.split.as_str())
            .collect();
        assert_eq!(names, ["train", "validation", "test"]);
        assert_eq!(prepared.stats.splits[0].n_impressions, 18);
        assert_eq!(prepared.stats.splits[1].n_impressions, 6);
        assert_eq!(prepared.stats.splits[2].n_impressions, 6);

        let again = cmd_prepare(&config).unwrap();
        assert!(again.reused);
        assert_eq!(again.stats, prepared.stats);

        let trained = cmd_train(&config).unwrap();
        assert_eq!(trained.per_seed.len(), 1);
        assert!(checkpoint_file(&config.out_dir, 3).exists());

        let evaluated = cmd_evaluate(&config).unwrap();
        assert_eq!(evaluated.n_impressions + evaluated.n_skipped, 6);
        assert!(evaluated.metrics.auc.mean.is_finite());

        let sweep = cmd_sweep(&config).unwrap();
        assert_eq!(sweep.cells.len(), 35);
        let configured = sweep
            .cells
            .iter()
            .find(|c| c.lambda_s == 0.7 && c.lambda_t == 0.15)
            .unwrap();
        // The configured cell recombines the exact recorded scores.
        assert_eq!(configured.metrics.auc.mean, evaluated.metrics.auc.mean);
        assert_eq!(configured.metrics.mrr.mean, evaluated.metrics.mrr.mean);

        let ablate = cmd_ablate(&config).unwrap();
        assert_eq!(ablate.rows.len(), 4);
        assert!(ablate.rows[0].t_vs_full.is_none());
        assert_eq!(ablate.rows[0].metrics.auc.mean, evaluated.metrics.auc.mean);

        let recall = cmd_recall(&config).unwrap();
        assert_eq!(recall.points.len(), 2);
        assert_eq!(recall.pool_size, 16);
        assert!(config.out_dir.join("recall.csv").exists());
        assert!(config.out_dir.join("sweep.csv").exists());
        assert!(config.out_dir.join("ablate.csv").exists());

        let check = cmd_gradcheck(&config).unwrap();
        assert!(check.pass, "max rel error {}", check.max_rel_error);
    }

    #[test]
    fn evaluate_without_a_checkpoint_names_the_missing_step() {
        let dir = tempfile::tempdir().unwrap();
        let config = smoke_config(dir.path().join("out"));
        cmd_prepare(&config).unwrap();
        let err = cmd_evaluate(&config).unwrap_err();
        assert!(err.to_string().contains("train first"), "{err}");
    }

    #[test]
    fn commands_before_prepare_name_the_missing_step() {
        let dir = tempfile::tempdir().unwrap();
        let config = smoke_config(dir.path().join("out"));
        let err = cmd_train(&config).unwrap_err();
        assert!(err.to_string().contains("prepare first"), "{err}");
    }
}

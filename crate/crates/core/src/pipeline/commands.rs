use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::config::RunConfig;
use super::rundir::RunDir;
use crate::classifier::{
    classifier_registry, classify_batch, ensemble_decide, evaluate_predictions, load_labeled, load_sentiment,
    metrics_table_csv, metrics_table_markdown, stratified_split, train_backend, ClassificationResult, ClassifierSet,
    LabeledText, PrivacyClassifier, Regime, Slot, TrainInput, TrainRecipe, TrainingLog,
};
use crate::corpus::{
    align_reviews, build_release_instances, load_features, load_reviews, split_groups, write_discard_log, CorpusSplit,
    Review,
};
use crate::embedding::{embedder_registry, EmbeddingBackend, EmbeddingCache, HashedEmbedder};
use crate::error::{Error, Result};
use crate::eval::{agreement_table, build_matcher, emit_tables, load_judgments, MatchMode, OverlapSeries};
use crate::issues::{finetune_issue_model, issue_model_registry, load_annotations, IssueHandle, IssueModel, KeywordFactory};
use crate::mapper::{build_training_pairs, check_no_leakage, read_pairs, write_pairs, FeatureMapper, FeatureReviewPair};
use crate::registry::{BackendKind, Named, Registry};
use crate::runner::{read_ledgers, run_baseline, run_prepi, write_ledgers, BaselineStats, MethodIssueLedger};
use crate::simulator::{finetune_simulator, generator_registry, SimulatorHandle, TemplateFactory};

pub const SPLIT: &str = "corpus/split.json";
pub const DISCARDED: &str = "corpus/discarded.txt";
pub const SUMMARY: &str = "corpus/summary.json";
pub const MODELS: &str = "classifier/models.json";
pub const EXISTING: &str = "classifier/existing.jsonl";
pub const METRICS_MD: &str = "classifier/metrics.md";
pub const METRICS_CSV: &str = "classifier/metrics.csv";
pub const PAIRS: &str = "mapping/pairs.jsonl";
pub const MAPPINGS: &str = "mapping/mappings.json";
pub const EMBEDDINGS: &str = "mapping/embeddings.bin";
pub const SIMULATOR: &str = "models/simulator.json";
pub const ISSUE_MODEL: &str = "models/issue_model.json";
pub const PREPI_LEDGER: &str = "ledgers/pre-pi.json";
pub const PREPI_META: &str = "ledgers/pre-pi_meta.json";
pub const SIMULATED: &str = "ledgers/simulated_reviews.jsonl";
pub const BASELINE_LEDGER: &str = "ledgers/baseline.json";
pub const BASELINE_META: &str = "ledgers/baseline_meta.json";
pub const REPORT_DIR: &str = "report";
pub const SUMMARY_MD: &str = "report/summary.md";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Classify,
    Map,
    TrainSimulator,
    TrainIssueModel,
    RunPrePi,
    RunBaseline,
    Evaluate,
    Report,
}

impl Stage {
    pub fn key(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Classify => "classify",
            Stage::Map => "map",
            Stage::TrainSimulator => "train-simulator",
            Stage::TrainIssueModel => "train-issue-model",
            Stage::RunPrePi => "run-pre-pi",
            Stage::RunBaseline => "run-baseline",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// The CLI invocation that produces this stage's artifacts.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Classify => "classify",
            Stage::Map => "map",
            Stage::TrainSimulator => "train simulator",
            Stage::TrainIssueModel => "train issue-model",
            Stage::RunPrePi => "run pre-pi",
            Stage::RunBaseline => "run baseline",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    fn dependents(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Ingest => &[Classify, Map, TrainSimulator, RunPrePi, RunBaseline, Evaluate, Report],
            Classify => &[Map, TrainSimulator, RunPrePi, RunBaseline, Evaluate, Report],
            Map => &[TrainSimulator, RunPrePi, Evaluate, Report],
            TrainSimulator => &[RunPrePi, Evaluate, Report],
            TrainIssueModel => &[RunPrePi, RunBaseline, Evaluate, Report],
            RunPrePi | RunBaseline => &[Evaluate, Report],
            Evaluate => &[Report],
            Report => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Reused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub app: String,
    pub features: usize,
    pub reviews: usize,
    pub existing_instances: Vec<String>,
    pub candidate_instances: Vec<String>,
    pub existing_reviews: usize,
    pub candidate_reviews: Vec<usize>,
    pub discarded_reviews: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotModel {
    pub slot: Slot,
    pub backend: String,
    pub recipe: TrainRecipe,
    pub log: TrainingLog,
    pub artifact: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PrePiMeta {
    simulator_backend: String,
    simulator_hash: String,
    issue_model_hash: String,
    seed: u64,
    cutoff: String,
    simulated_reviews: usize,
    degenerate_features: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BaselineMeta {
    classifier_backends: Vec<String>,
    regime: Regime,
    corpus_review_count: usize,
    issue_model_hash: String,
    cutoff: String,
    stats: BaselineStats,
}

/// Picks a backend by name; in stub mode a real backend gives way to `stub`.
fn pick<T: ?Sized + Named>(reg: &Registry<T>, name: &str, stub_mode: bool, stub: &str) -> Result<Arc<T>> {
    let b = reg.get(name)?;
    if stub_mode && b.kind() == BackendKind::Real {
        info!(requested = name, using = stub, "stub mode substitutes backend");
        return reg.get(stub);
    }
    Ok(b)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn write_json<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &std::path::Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<Vec<T>> {
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

/// A configured run over one locked run directory.
pub struct Pipeline {
    pub config: RunConfig,
    run: RunDir,
}

impl Pipeline {
    pub fn open(config: RunConfig, run_dir: Option<PathBuf>) -> Result<Self> {
        config.check_inputs()?;
        let hash = config.hash()?;
        let root = match run_dir {
            Some(p) => p,
            None => config.default_run_dir()?,
        };
        let run = RunDir::open(&root, &hash, config.stub)?;
        info!(run_dir = %root.display(), config_hash = %hash, "run directory ready");
        Ok(Self { config, run })
    }

    pub fn run_dir(&self) -> &RunDir {
        &self.run
    }

    fn require(&self, stage: Stage, rel: &str) -> Result<PathBuf> {
        self.run.require(stage.key(), rel, stage.command())
    }

    /// Runs `body` unless the stage is fresh, then records its outputs and
    /// invalidates downstream stages.
    fn stage(&mut self, stage: Stage, body: impl FnOnce(&mut Self) -> Result<Vec<String>>) -> Result<Outcome> {
        if self.run.is_fresh(stage.key()) {
            info!(stage = stage.key(), "up to date; reusing artifacts");
            return Ok(Outcome::Reused);
        }
        let outputs = body(self)?;
        let stale: Vec<&str> = stage.dependents().iter().map(|s| s.key()).collect();
        self.run.invalidate(&stale)?;
        self.run.record(stage.key(), &outputs)?;
        info!(stage = stage.key(), "done");
        Ok(Outcome::Ran)
    }

    fn split(&self) -> Result<CorpusSplit> {
        read_json(&self.require(Stage::Ingest, SPLIT)?)
    }

    fn summary(&self) -> Result<IngestSummary> {
        read_json(&self.require(Stage::Ingest, SUMMARY)?)
    }

    pub fn ingest(&mut self) -> Result<Outcome> {
        self.stage(Stage::Ingest, |p| {
            let c = &p.config;
            let features = load_features(&c.resolve(&c.features), &c.app)?;
            let reviews = load_reviews(&c.resolve(&c.reviews), &c.app)?;
            let instances = build_release_instances(&features, c.granularity);
            let split = align_reviews(split_groups(instances, c.cutoff, c.granularity)?, &reviews);
            if split.candidate_instances.is_empty() {
                return Err(Error::Range(format!("no candidate instances after cutoff {}", c.cutoff)));
            }
            let summary = IngestSummary {
                app: c.app.clone(),
                features: features.len(),
                reviews: reviews.len(),
                existing_instances: split.existing_instances.iter().map(|i| i.period.to_string()).collect(),
                candidate_instances: split.candidate_instances.iter().map(|i| i.period.to_string()).collect(),
                existing_reviews: split.alignment.existing.len(),
                candidate_reviews: split.alignment.candidates.iter().map(Vec::len).collect(),
                discarded_reviews: split.alignment.discarded.len(),
            };
            write_json(&p.run.output(SPLIT)?, &split)?;
            write_discard_log(&p.run.output(DISCARDED)?, &split.alignment.discarded)?;
            write_json(&p.run.output(SUMMARY)?, &summary)?;
            Ok(vec![SPLIT.into(), DISCARDED.into(), SUMMARY.into()])
        })
    }

    fn load_classifiers(&self) -> Result<ClassifierSet> {
        let models: Vec<SlotModel> = read_json(&self.require(Stage::Classify, MODELS)?)?;
        let reg = classifier_registry();
        let mut loaded: Vec<Arc<dyn PrivacyClassifier>> = Vec::new();
        for m in &models {
            loaded.push(Arc::from(reg.get(&m.backend)?.load(&m.artifact)?));
        }
        if loaded.len() != 3 {
            return Err(Error::Invalid(format!("{MODELS} must hold three slots")));
        }
        Ok(ClassifierSet::new(loaded[0].clone(), loaded[1].clone(), loaded[2].clone()))
    }

    pub fn classify(&mut self) -> Result<Outcome> {
        let split = self.split()?;
        let summary = self.summary()?;
        self.stage(Stage::Classify, |p| {
            let c = &p.config;
            let labeled = load_labeled(&c.resolve(&c.labeled))?;
            let sentiment = c.sentiment.as_ref().map(|s| load_sentiment(&c.resolve(s))).transpose()?;
            let labels: Vec<_> = labeled.iter().map(|l| l.label).collect();
            let (train_idx, hold_idx) = stratified_split(&labels, c.classifier.holdout_fraction, c.seed);
            let train: Vec<LabeledText> = train_idx.iter().map(|&i| labeled[i].clone()).collect();
            let hold: Vec<&LabeledText> = hold_idx.iter().map(|&i| &labeled[i]).collect();
            let truth: Vec<bool> = hold.iter().map(|l| l.label.is_privacy()).collect();
            let input = TrainInput {
                labeled: &train,
                sentiment: sentiment.as_deref(),
            };
            let reg = classifier_registry();
            let mut models = Vec::new();
            let mut columns = Vec::new();
            let mut trained: Vec<Arc<dyn PrivacyClassifier>> = Vec::new();
            for slot in Slot::ALL {
                let factory = pick(&reg, &c.slot_backend(slot), c.stub, crate::classifier::default_backend(slot))?;
                let recipe = c.recipe(slot);
                let t = train_backend(factory.as_ref(), &input, &recipe)?;
                let verdicts: Vec<_> = hold.iter().map(|l| t.model.predict(&l.text)).collect();
                let scores: Vec<f64> = verdicts.iter().map(|v| v.score).collect();
                let preds: Vec<bool> = verdicts.iter().map(|v| v.privacy).collect();
                columns.push((format!("{} ({slot})", factory.name()), evaluate_predictions(&scores, &preds, &truth)));
                models.push(SlotModel {
                    slot,
                    backend: factory.name().to_string(),
                    recipe,
                    log: t.log,
                    artifact: t.model.artifact(),
                });
                trained.push(Arc::from(t.model));
            }
            let set = ClassifierSet::new(trained[0].clone(), trained[1].clone(), trained[2].clone());
            let rule = c.classifier.rule();
            let (results, _) = classify_batch(&set, &split.alignment.existing);
            let results: Vec<ClassificationResult> =
                results.into_iter().map(|r| ensemble_decide(r, summary.reviews, &rule)).collect();
            info!(
                regime = ?rule.regime(summary.reviews),
                privacy = results.iter().filter(|r| r.ensemble_label.is_some_and(|l| l.is_privacy())).count(),
                of = results.len(),
                "classified existing-period reviews"
            );
            write_json(&p.run.output(MODELS)?, &models)?;
            write_jsonl(&p.run.output(EXISTING)?, &results)?;
            fs::write(p.run.output(METRICS_MD)?, metrics_table_markdown(&columns))?;
            fs::write(p.run.output(METRICS_CSV)?, metrics_table_csv(&columns))?;
            Ok(vec![MODELS.into(), EXISTING.into(), METRICS_MD.into(), METRICS_CSV.into()])
        })
    }

    fn embedder(&self) -> Result<Arc<dyn EmbeddingBackend>> {
        let c = &self.config;
        let f = pick(&embedder_registry(), &c.mapper.embedder, c.stub, HashedEmbedder::NAME)?;
        f.build(c.mapper.dimension, c.seed)
    }

    pub fn map(&mut self) -> Result<Outcome> {
        let split = self.split()?;
        let results: Vec<ClassificationResult> = read_jsonl(&self.require(Stage::Classify, EXISTING)?)?;
        self.stage(Stage::Map, |p| {
            let privacy: std::collections::HashSet<&str> = results
                .iter()
                .filter(|r| r.ensemble_label.is_some_and(|l| l.is_privacy()))
                .map(|r| r.review_id.as_str())
                .collect();
            let pool: Vec<Review> =
                split.alignment.existing.iter().filter(|r| privacy.contains(r.id.as_str())).cloned().collect();
            let backend = p.embedder()?;
            let cache = EmbeddingCache::new();
            let mapper = FeatureMapper::new(backend.as_ref(), &cache, &pool);
            let mut ordered: Vec<(String, Vec<FeatureReviewPair>)> = Vec::new();
            for f in split.existing_features() {
                ordered.push((f.id.clone(), mapper.map_feature(f, p.config.mapper.k)));
            }
            let mappings: HashMap<String, Vec<FeatureReviewPair>> = ordered.iter().cloned().collect();
            let by_id: HashMap<String, &Review> = pool.iter().map(|r| (r.id.clone(), r)).collect();
            let pairs = build_training_pairs(&split, &mappings, &by_id)?;
            let dates: HashMap<String, NaiveDate> = pool.iter().map(|r| (r.id.clone(), r.timestamp)).collect();
            check_no_leakage(&pairs, &dates, split.cutoff_end())?;
            info!(pool = mapper.pool_size(), pairs = pairs.len(), "mapped existing features");
            write_pairs(&p.run.output(PAIRS)?, &pairs)?;
            write_json(&p.run.output(MAPPINGS)?, &ordered)?;
            cache.save(&p.run.output(EMBEDDINGS)?)?;
            Ok(vec![PAIRS.into(), MAPPINGS.into(), EMBEDDINGS.into()])
        })
    }

    pub fn train_simulator(&mut self) -> Result<Outcome> {
        let split = self.split()?;
        let pairs = read_pairs(&self.require(Stage::Map, PAIRS)?)?;
        self.stage(Stage::TrainSimulator, |p| {
            let c = &p.config;
            let dates: HashMap<&str, NaiveDate> =
                split.alignment.existing.iter().map(|r| (r.id.as_str(), r.timestamp)).collect();
            let trained_through = pairs.iter().filter_map(|pr| dates.get(pr.review_id.as_str()).copied()).max();
            let factory = pick(&generator_registry(), &c.simulator.backend, c.stub, TemplateFactory::NAME)?;
            let handle = finetune_simulator(factory.as_ref(), &pairs, &c.simulator.config, trained_through)?;
            info!(best_epoch = handle.log.best_epoch, stopped_early = handle.log.stopped_early, "simulator trained");
            write_json(&p.run.output(SIMULATOR)?, &handle)?;
            Ok(vec![SIMULATOR.into()])
        })
    }

    pub fn train_issue_model(&mut self) -> Result<Outcome> {
        self.stage(Stage::TrainIssueModel, |p| {
            let c = &p.config;
            let annotations = load_annotations(&c.resolve(&c.annotations))?;
            let factory = pick(&issue_model_registry(), &c.issues.backend, c.stub, KeywordFactory::NAME)?;
            let handle = finetune_issue_model(factory.as_ref(), &annotations, &c.issues.config)?;
            write_json(&p.run.output(ISSUE_MODEL)?, &handle)?;
            Ok(vec![ISSUE_MODEL.into()])
        })
    }

    fn issue_model(&self) -> Result<(IssueHandle, Box<dyn IssueModel>)> {
        let handle: IssueHandle = read_json(&self.require(Stage::TrainIssueModel, ISSUE_MODEL)?)?;
        let model = issue_model_registry().get(&handle.backend)?.load(&handle.artifact)?;
        Ok((handle, model))
    }

    pub fn run_prepi(&mut self) -> Result<Outcome> {
        let split = self.split()?;
        let sim: SimulatorHandle = read_json(&self.require(Stage::TrainSimulator, SIMULATOR)?)?;
        let (issue_handle, issue_model) = self.issue_model()?;
        self.stage(Stage::RunPrePi, |p| {
            let c = &p.config;
            let generator = generator_registry().get(&sim.backend)?.load(&sim.artifact)?;
            let (ledger, out) = run_prepi(
                &split,
                generator.as_ref(),
                &sim.model_hash,
                sim.trained_through,
                &c.simulator.config,
                issue_model.as_ref(),
                &c.issues.config.issue_delimiter,
            )?;
            let meta = PrePiMeta {
                simulator_backend: sim.backend.clone(),
                simulator_hash: sim.model_hash.clone(),
                issue_model_hash: issue_handle.model_hash.clone(),
                seed: c.simulator.config.seed,
                cutoff: split.cutoff.to_string(),
                simulated_reviews: out.simulated.len(),
                degenerate_features: out.degenerate,
            };
            write_ledgers(&p.run.output(PREPI_LEDGER)?, &[&ledger])?;
            write_jsonl(&p.run.output(SIMULATED)?, &out.simulated)?;
            write_json(&p.run.output(PREPI_META)?, &meta)?;
            Ok(vec![PREPI_LEDGER.into(), SIMULATED.into(), PREPI_META.into()])
        })
    }

    pub fn run_baseline(&mut self) -> Result<Outcome> {
        let split = self.split()?;
        let summary = self.summary()?;
        let set = self.load_classifiers()?;
        let (issue_handle, issue_model) = self.issue_model()?;
        self.stage(Stage::RunBaseline, |p| {
            let c = &p.config;
            let rule = c.classifier.rule();
            let (ledger, stats) = run_baseline(
                &split,
                &set,
                &rule,
                summary.reviews,
                issue_model.as_ref(),
                &c.issues.config.issue_delimiter,
            )?;
            let meta = BaselineMeta {
                classifier_backends: Slot::ALL.iter().map(|s| set.get(*s).backend().to_string()).collect(),
                regime: rule.regime(summary.reviews),
                corpus_review_count: summary.reviews,
                issue_model_hash: issue_handle.model_hash.clone(),
                cutoff: split.cutoff.to_string(),
                stats,
            };
            write_ledgers(&p.run.output(BASELINE_LEDGER)?, &[&ledger])?;
            write_json(&p.run.output(BASELINE_META)?, &meta)?;
            Ok(vec![BASELINE_LEDGER.into(), BASELINE_META.into()])
        })
    }

    fn ledger(&self, stage: Stage, rel: &str) -> Result<MethodIssueLedger> {
        read_ledgers(&self.require(stage, rel)?)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Invalid(format!("{rel} holds no ledger")))
    }

    pub fn evaluate(&mut self) -> Result<Outcome> {
        let prepi = self.ledger(Stage::RunPrePi, PREPI_LEDGER)?;
        let baseline = self.ledger(Stage::RunBaseline, BASELINE_LEDGER)?;
        self.stage(Stage::Evaluate, |p| {
            let c = &p.config;
            let backend = match c.matcher.mode {
                MatchMode::Semantic => Some(p.embedder()?),
                MatchMode::ExactCanonical => None,
            };
            let matcher = build_matcher(&c.matcher, backend)?;
            let series = OverlapSeries::compute(
                &c.app,
                &baseline.canonical_sets(),
                &prepi.canonical_sets(),
                matcher.as_ref(),
            )?;
            let agreement = match &c.judgments {
                Some(j) => Some(agreement_table(&load_judgments(&c.resolve(j))?)?),
                None => None,
            };
            let dir = p.run.output(&format!("{REPORT_DIR}/x"))?;
            let dir = dir.parent().expect("report dir");
            let files = emit_tables(&series, agreement.as_deref(), dir)?;
            Ok(files
                .iter()
                .map(|f| format!("{REPORT_DIR}/{}", f.file_name().expect("file").to_string_lossy()))
                .collect())
        })
    }

    pub fn report(&mut self) -> Result<Outcome> {
        let overlap = fs::read_to_string(self.require(Stage::Evaluate, &format!("{REPORT_DIR}/overlap.md"))?)?;
        let series: OverlapSeries = read_json(&self.require(Stage::Evaluate, &format!("{REPORT_DIR}/series.json"))?)?;
        let metrics = fs::read_to_string(self.require(Stage::Classify, METRICS_MD)?)?;
        let summary = self.summary()?;
        let prepi = self.ledger(Stage::RunPrePi, PREPI_LEDGER)?;
        let baseline = self.ledger(Stage::RunBaseline, BASELINE_LEDGER)?;
        let sim: SimulatorHandle = read_json(&self.require(Stage::TrainSimulator, SIMULATOR)?)?;
        let issue: IssueHandle = read_json(&self.require(Stage::TrainIssueModel, ISSUE_MODEL)?)?;
        let agreement = self.run.path(&format!("{REPORT_DIR}/agreement.md"));
        let agreement = if agreement.is_file() { Some(fs::read_to_string(agreement)?) } else { None };
        let hash = self.run.manifest().config_hash.clone();
        self.stage(Stage::Report, |p| {
            let mut s = String::new();
            let _ = writeln!(s, "# Privacy issue report: {}\n", summary.app);
            let _ = writeln!(s, "Config hash `{hash}`; backends in {} mode.\n", if p.config.stub { "stub" } else { "configured" });
            let _ = writeln!(
                s,
                "{} features and {} reviews. Existing instances: {}. Candidate instances: {}.\n",
                summary.features,
                summary.reviews,
                summary.existing_instances.join(", "),
                summary.candidate_instances.join(", ")
            );
            s.push_str("## Privacy classifiers (held-out split)\n\n");
            s.push_str(&metrics);
            s.push_str("\n## Overlap with the post-release baseline\n\n");
            s.push_str(&overlap);
            s.push_str("\n### Temporal overlap\n\n| Instance # | Pre-PI temporal ratio | Hark temporal ratio |\n|---|---|---|\n");
            for r in &series.rows {
                let _ = writeln!(
                    s,
                    "| {} | {:.2} | {:.2} |",
                    r.instance + 1,
                    r.prepi_temporal_ratio,
                    r.hark_temporal_ratio
                );
            }
            if let Some(a) = &agreement {
                s.push('\n');
                s.push_str(a);
            }
            s.push_str("\n## Models\n\n");
            let _ = writeln!(
                s,
                "- Review simulator `{}` ({}): best epoch {} of {}{}.",
                sim.backend,
                sim.model_hash,
                sim.log.best_epoch,
                sim.log.epochs.len(),
                if sim.log.stopped_early { ", stopped early" } else { "" }
            );
            let _ = writeln!(
                s,
                "- Issue model `{}` ({}): held-out exact match {:.2}, token overlap {:.2}, {:.0}% of issues 2-4 words.",
                issue.backend,
                issue.model_hash,
                issue.held_out.exact_match,
                issue.held_out.token_overlap,
                issue.held_out.length_2_4 * 100.0
            );
            s.push_str("\n## Issues per candidate instance\n\n");
            for (i, period) in summary.candidate_instances.iter().enumerate() {
                let list = |l: &MethodIssueLedger| {
                    let v: Vec<&str> = l.per_instance[i].iter().map(|e| e.canonical.as_str()).collect();
                    if v.is_empty() { "(none)".to_string() } else { v.join("; ") }
                };
                let _ = writeln!(s, "### Instance {} ({period})\n", i + 1);
                let _ = writeln!(s, "- Pre-PI: {}", list(&prepi));
                let _ = writeln!(s, "- Hark: {}\n", list(&baseline));
            }
            s.push_str("## Files\n\n");
            let mut files: BTreeMap<&str, &str> = BTreeMap::new();
            files.insert("overlap.csv", "overlap table");
            files.insert("overlap.md", "overlap table (Markdown)");
            files.insert("series.json", "per-instance counts and raw ratios");
            files.insert("temporal_plot.csv", "temporal ratio plot data");
            if agreement.is_some() {
                files.insert("agreement.md", "rater agreement");
            }
            for (f, what) in files {
                let _ = writeln!(s, "- [{f}]({f}): {what}");
            }
            fs::write(p.run.output(SUMMARY_MD)?, s)?;
            Ok(vec![SUMMARY_MD.into()])
        })
    }
}

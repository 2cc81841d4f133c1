//! Privacy review classification: three pluggable backends combined by a
//! review-volume dependent voting rule.

mod ffn;
mod logreg;
mod metrics;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::corpus::Review;
use crate::error::{Error, Result};
use crate::registry::{unavailable, BackendKind, Named, Registry};
use crate::text::sha256_hex;

pub use ffn::EncoderFfnFactory;
pub use logreg::{LogRegFactory, SentimentLogRegFactory};
pub use metrics::{evaluate_predictions, metrics_table_csv, metrics_table_markdown, ClassifierMetrics};

/// One of the three ensemble positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    A,
    B,
    C,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::A, Slot::B, Slot::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn default_epochs(self) -> usize {
        match self {
            Slot::A | Slot::B => 3,
            Slot::C => 20,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Slot {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Slot::A),
            "B" => Ok(Slot::B),
            "C" => Ok(Slot::C),
            other => Err(Error::Config(format!("unknown classifier slot `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyLabel {
    Privacy,
    NotPrivacy,
}

impl PrivacyLabel {
    pub fn from_bool(privacy: bool) -> Self {
        if privacy {
            PrivacyLabel::Privacy
        } else {
            PrivacyLabel::NotPrivacy
        }
    }

    pub fn is_privacy(self) -> bool {
        self == PrivacyLabel::Privacy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: PrivacyLabel,
}

/// Reads `{text, label}` JSON lines with label `privacy` or `not_privacy`.
pub fn load_labeled(path: &Path) -> Result<Vec<LabeledText>> {
    let body = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabeledText =
            serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads `{text, label}` JSON lines with label `negative` or `positive`.
/// Negative sentiment is mapped onto the positive (privacy) class.
pub fn load_sentiment(path: &Path) -> Result<Vec<LabeledText>> {
    #[derive(Deserialize)]
    struct Rec {
        text: String,
        label: String,
    }
    let body = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Rec =
            serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        let label = match rec.label.as_str() {
            "negative" => PrivacyLabel::Privacy,
            "positive" => PrivacyLabel::NotPrivacy,
            other => {
                return Err(Error::parse(path, i + 1, format!("unknown sentiment `{other}`")))
            }
        };
        out.push(LabeledText {
            text: rec.text,
            label,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub score: f64,
    pub privacy: bool,
}

pub trait PrivacyClassifier: Send + Sync {
    fn backend(&self) -> &str;
    /// Privacy score in [0, 1].
    fn score(&self, text: &str) -> f64;
    fn threshold(&self) -> f64;
    fn artifact(&self) -> serde_json::Value;

    fn predict(&self, text: &str) -> Verdict {
        let score = self.score(text);
        Verdict {
            score,
            privacy: score >= self.threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecipe {
    pub epochs: usize,
    pub learning_rate: f64,
    pub threshold: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Hidden width of each feed-forward layer (encoder backend).
    pub hidden_units: usize,
    /// Sentence embedding width (encoder backend).
    pub embedding_dim: usize,
}

impl TrainRecipe {
    pub fn for_slot(slot: Slot) -> Self {
        let (learning_rate, hidden_units) = match slot {
            Slot::A | Slot::B => (0.5, 0),
            Slot::C => (0.05, 512),
        };
        Self {
            epochs: slot.default_epochs(),
            learning_rate,
            threshold: 0.5,
            validation_fraction: 0.1,
            seed: 0,
            hidden_units,
            embedding_dim: 512,
        }
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("recipe serializes");
        sha256_hex(&json)[..12].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub backend: String,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

impl TrainingLog {
    /// Index of the lowest validation loss; earliest wins ties.
    pub fn select_best(&mut self) -> usize {
        let best = self
            .epochs
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss).then(a.epoch.cmp(&b.epoch)))
            .map(|e| e.epoch)
            .unwrap_or(0);
        self.best_epoch = best;
        best
    }
}

pub struct TrainedClassifier {
    pub model: Box<dyn PrivacyClassifier>,
    pub log: TrainingLog,
}

pub struct TrainInput<'a> {
    pub labeled: &'a [LabeledText],
    /// Sentiment pre-training corpus, if one is configured.
    pub sentiment: Option<&'a [LabeledText]>,
}

pub trait ClassifierFactory: Named + Send + Sync {
    fn train(&self, input: &TrainInput<'_>, recipe: &TrainRecipe) -> Result<TrainedClassifier>;
    fn load(&self, artifact: &serde_json::Value) -> Result<Box<dyn PrivacyClassifier>>;
}

/// Placeholder for a transformer backend this build cannot run.
struct Unavailable {
    name: &'static str,
    stub: &'static str,
}

impl Named for Unavailable {
    fn name(&self) -> &str {
        self.name
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Real
    }
}

impl ClassifierFactory for Unavailable {
    fn train(&self, _: &TrainInput<'_>, _: &TrainRecipe) -> Result<TrainedClassifier> {
        Err(unavailable(self.name, self.stub))
    }
    fn load(&self, _: &serde_json::Value) -> Result<Box<dyn PrivacyClassifier>> {
        Err(unavailable(self.name, self.stub))
    }
}

pub fn classifier_registry() -> Registry<dyn ClassifierFactory> {
    let mut reg: Registry<dyn ClassifierFactory> = Registry::new("classifier");
    reg.register(Arc::new(LogRegFactory));
    reg.register(Arc::new(SentimentLogRegFactory));
    reg.register(Arc::new(EncoderFfnFactory));
    reg.register(Arc::new(Unavailable { name: "bert", stub: LogRegFactory::NAME }));
    reg.register(Arc::new(Unavailable { name: "bert-sst", stub: SentimentLogRegFactory::NAME }));
    reg.register(Arc::new(Unavailable { name: "use", stub: EncoderFfnFactory::NAME }));
    reg
}

/// Default stub backend name for each slot.
pub fn default_backend(slot: Slot) -> &'static str {
    match slot {
        Slot::A => LogRegFactory::NAME,
        Slot::B => SentimentLogRegFactory::NAME,
        Slot::C => EncoderFfnFactory::NAME,
    }
}

/// Trains one backend after checking that both classes are present.
pub fn train_backend(
    factory: &dyn ClassifierFactory,
    input: &TrainInput<'_>,
    recipe: &TrainRecipe,
) -> Result<TrainedClassifier> {
    let positives = input.labeled.iter().filter(|l| l.label.is_privacy()).count();
    if positives == 0 || positives == input.labeled.len() {
        return Err(Error::Training(format!(
            "{} needs both privacy and non-privacy examples ({} of {} are privacy)",
            factory.name(),
            positives,
            input.labeled.len()
        )));
    }
    if recipe.epochs == 0 {
        return Err(Error::Training("recipe needs at least one epoch".into()));
    }
    factory.train(input, recipe)
}

/// Seeded stratified holdout: returns `(train, holdout)` index lists.
///
/// Each class contributes `round(fraction * class_size)` items to the
/// holdout, but at least one when the class has two or more members.
pub fn stratified_split(labels: &[PrivacyLabel], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut hold = Vec::new();
    for class in [PrivacyLabel::Privacy, PrivacyLabel::NotPrivacy] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let mut n = (fraction * idx.len() as f64).round() as usize;
        if n == 0 && idx.len() >= 2 && fraction > 0.0 {
            n = 1;
        }
        hold.extend_from_slice(&idx[..n]);
        train.extend_from_slice(&idx[n..]);
    }
    train.sort_unstable();
    hold.sort_unstable();
    (train, hold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Ensemble,
    SingleBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub review_id: String,
    /// Indexed by `Slot::index()`.
    pub per_backend: [Verdict; 3],
    pub ensemble_label: Option<PrivacyLabel>,
    pub regime: Option<Regime>,
}

/// Review-volume rule: at or above `min_reviews` all three slots must agree
/// on privacy; below it the designated slot decides alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleRule {
    pub min_reviews: usize,
    pub designated: Slot,
}

impl Default for EnsembleRule {
    fn default() -> Self {
        Self {
            min_reviews: 15_000,
            designated: Slot::C,
        }
    }
}

impl EnsembleRule {
    pub fn regime(&self, corpus_review_count: usize) -> Regime {
        if corpus_review_count >= self.min_reviews {
            Regime::Ensemble
        } else {
            Regime::SingleBackend
        }
    }
}

pub fn ensemble_decide(
    mut result: ClassificationResult,
    corpus_review_count: usize,
    rule: &EnsembleRule,
) -> ClassificationResult {
    let regime = rule.regime(corpus_review_count);
    let privacy = match regime {
        Regime::Ensemble => result.per_backend.iter().all(|v| v.privacy),
        Regime::SingleBackend => result.per_backend[rule.designated.index()].privacy,
    };
    result.regime = Some(regime);
    result.ensemble_label = Some(PrivacyLabel::from_bool(privacy));
    result
}

/// The three slot backends, loaded or freshly trained.
#[derive(Clone)]
pub struct ClassifierSet {
    backends: [Arc<dyn PrivacyClassifier>; 3],
}

impl ClassifierSet {
    pub fn new(a: Arc<dyn PrivacyClassifier>, b: Arc<dyn PrivacyClassifier>, c: Arc<dyn PrivacyClassifier>) -> Self {
        Self { backends: [a, b, c] }
    }

    pub fn get(&self, slot: Slot) -> &Arc<dyn PrivacyClassifier> {
        &self.backends[slot.index()]
    }

    pub fn verdicts(&self, text: &str) -> [Verdict; 3] {
        [
            self.backends[0].predict(text),
            self.backends[1].predict(text),
            self.backends[2].predict(text),
        ]
    }

    /// Score consistent with the regime: the minimum slot score under the
    /// conjunctive vote, the designated slot's score otherwise.
    pub fn regime_score(verdicts: &[Verdict; 3], regime: Regime, designated: Slot) -> f64 {
        match regime {
            Regime::Ensemble => verdicts.iter().map(|v| v.score).fold(f64::INFINITY, f64::min),
            Regime::SingleBackend => verdicts[designated.index()].score,
        }
    }
}

/// Scores every review with all three backends; reviews with blank text are
/// skipped and their ids returned separately.
pub fn classify_batch(set: &ClassifierSet, reviews: &[Review]) -> (Vec<ClassificationResult>, Vec<String>) {
    let skipped: Vec<String> = reviews
        .iter()
        .filter(|r| r.text.trim().is_empty())
        .map(|r| r.id.clone())
        .collect();
    for id in &skipped {
        warn!(review = %id, "skipping review with empty text");
    }
    let results = reviews
        .par_iter()
        .filter(|r| !r.text.trim().is_empty())
        .map(|r| ClassificationResult {
            review_id: r.id.clone(),
            per_backend: set.verdicts(&r.text),
            ensemble_label: None,
            regime: None,
        })
        .collect();
    (results, skipped)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(labels: [bool; 3]) -> ClassificationResult {
        ClassificationResult {
            review_id: "r".into(),
            per_backend: labels.map(|privacy| Verdict {
                score: if privacy { 0.9 } else { 0.1 },
                privacy,
            }),
            ensemble_label: None,
            regime: None,
        }
    }

    #[test]
    fn conjunctive_vote_at_high_volume() {
        let rule = EnsembleRule::default();
        let r = ensemble_decide(result([true, true, true]), 20_000, &rule);
        assert_eq!(r.ensemble_label, Some(PrivacyLabel::Privacy));
        assert_eq!(r.regime, Some(Regime::Ensemble));
        let r = ensemble_decide(result([true, true, false]), 20_000, &rule);
        assert_eq!(r.ensemble_label, Some(PrivacyLabel::NotPrivacy));
    }

    #[test]
    fn designated_slot_at_low_volume() {
        let rule = EnsembleRule::default();
        let r = ensemble_decide(result([false, false, true]), 9_000, &rule);
        assert_eq!(r.ensemble_label, Some(PrivacyLabel::Privacy));
        assert_eq!(r.regime, Some(Regime::SingleBackend));
        let r = ensemble_decide(result([true, true, false]), 9_000, &rule);
        assert_eq!(r.ensemble_label, Some(PrivacyLabel::NotPrivacy));
    }

    #[test]
    fn boundary_is_inclusive_on_ensemble_side() {
        let rule = EnsembleRule::default();
        assert_eq!(rule.regime(15_000), Regime::Ensemble);
        assert_eq!(rule.regime(14_999), Regime::SingleBackend);
    }

    #[test]
    fn stratified_split_keeps_both_classes() {
        let labels: Vec<_> = (0..40)
            .map(|i| PrivacyLabel::from_bool(i % 4 == 0))
            .collect();
        let (train, hold) = stratified_split(&labels, 0.1, 3);
        assert_eq!(train.len() + hold.len(), 40);
        assert_eq!(hold.iter().filter(|&&i| labels[i].is_privacy()).count(), 1);
        assert_eq!(hold.len(), 4);
        assert_eq!(stratified_split(&labels, 0.1, 3), (train, hold));
    }

    #[test]
    fn single_class_training_is_rejected() {
        let data = vec![
            LabeledText { text: "a".into(), label: PrivacyLabel::Privacy },
            LabeledText { text: "b".into(), label: PrivacyLabel::Privacy },
        ];
        let input = TrainInput { labeled: &data, sentiment: None };
        let err = train_backend(&LogRegFactory, &input, &TrainRecipe::for_slot(Slot::A));
        assert!(matches!(err, Err(Error::Training(_))));
    }

    #[test]
    fn real_backends_report_capability_errors() {
        let reg = classifier_registry();
        for name in ["bert", "bert-sst", "use"] {
            let f = reg.get(name).unwrap();
            assert_eq!(f.kind(), BackendKind::Real);
            let err = f.load(&serde_json::Value::Null).err().unwrap();
            assert_eq!(err.exit_code(), 3);
        }
        for slot in Slot::ALL {
            assert_eq!(reg.get(default_backend(slot)).unwrap().kind(), BackendKind::Stub);
        }
    }

    #[test]
    fn slot_parsing() {
        assert_eq!("c".parse::<Slot>().unwrap(), Slot::C);
        assert!("D".parse::<Slot>().is_err());
        assert_eq!(TrainRecipe::for_slot(Slot::C).epochs, 20);
        assert_eq!(TrainRecipe::for_slot(Slot::B).epochs, 3);
    }
}

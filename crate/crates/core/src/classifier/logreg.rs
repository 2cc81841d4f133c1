//! Hashed bag-of-ngrams logistic regression, with an optional
//! sentiment pre-training stage.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{
    log_loss, sigmoid, stratified_split, ClassifierFactory, EpochRecord, LabeledText,
    PrivacyClassifier, TrainInput, TrainRecipe, TrainedClassifier, TrainingLog,
};
use crate::error::{Error, Result};
use crate::registry::{BackendKind, Named};
use crate::text::{hash64, tokenize};

const BUCKETS: usize = 1 << 18;

type SparseVec = Vec<(u32, f64)>;

/// Unigrams plus bigrams, hashed and L2-normalised.
fn featurize(text: &str) -> SparseVec {
    let toks = tokenize(text);
    let mut idx: Vec<u32> = toks
        .iter()
        .map(|t| (hash64(0, t) % BUCKETS as u64) as u32)
        .chain(toks.windows(2).map(|w| {
            (hash64(1, &format!("{} {}", w[0], w[1])) % BUCKETS as u64) as u32
        }))
        .collect();
    idx.sort_unstable();
    idx.dedup();
    let v = if idx.is_empty() { 0.0 } else { 1.0 / (idx.len() as f64).sqrt() };
    idx.into_iter().map(|i| (i, v)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Artifact {
    backend: String,
    threshold: f64,
    bias: f64,
    /// Non-zero weights as `(bucket, weight)`, ascending by bucket.
    weights: Vec<(u32, f64)>,
}

pub struct LogRegModel {
    backend: String,
    threshold: f64,
    bias: f64,
    weights: Vec<f64>,
}

impl LogRegModel {
    fn logit(&self, x: &SparseVec) -> f64 {
        self.bias + x.iter().map(|&(i, v)| self.weights[i as usize] * v).sum::<f64>()
    }

    fn from_artifact(a: Artifact) -> Result<Self> {
        let mut weights = vec![0.0; BUCKETS];
        for (i, w) in a.weights {
            *weights
                .get_mut(i as usize)
                .ok_or_else(|| Error::Invalid(format!("weight bucket {i} out of range")))? = w;
        }
        Ok(Self {
            backend: a.backend,
            threshold: a.threshold,
            bias: a.bias,
            weights,
        })
    }
}

impl PrivacyClassifier for LogRegModel {
    fn backend(&self) -> &str {
        &self.backend
    }

    fn score(&self, text: &str) -> f64 {
        sigmoid(self.logit(&featurize(text)))
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn artifact(&self) -> serde_json::Value {
        let weights = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (i as u32, *w))
            .collect();
        serde_json::to_value(Artifact {
            backend: self.backend.clone(),
            threshold: self.threshold,
            bias: self.bias,
            weights,
        })
        .expect("artifact serializes")
    }
}

struct Example {
    x: SparseVec,
    y: f64,
}

fn examples(data: &[LabeledText]) -> Vec<Example> {
    data.iter()
        .map(|l| Example {
            x: featurize(&l.text),
            y: if l.label.is_privacy() { 1.0 } else { 0.0 },
        })
        .collect()
}

fn sgd_epoch(model: &mut LogRegModel, data: &[Example], order: &[usize], lr: f64) -> f64 {
    let mut loss = 0.0;
    for &i in order {
        let ex = &data[i];
        let p = sigmoid(model.logit(&ex.x));
        loss += log_loss(p, ex.y);
        let g = p - ex.y;
        model.bias -= lr * g;
        for &(j, v) in &ex.x {
            model.weights[j as usize] -= lr * g * v;
        }
    }
    loss / order.len().max(1) as f64
}

fn evaluate(model: &LogRegModel, data: &[Example], idx: &[usize]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for &i in idx {
        let p = sigmoid(model.logit(&data[i].x));
        loss += log_loss(p, data[i].y);
        if (p >= model.threshold) == (data[i].y == 1.0) {
            correct += 1;
        }
    }
    let n = idx.len().max(1) as f64;
    (loss / n, correct as f64 / n)
}

/// Fine-tunes `model` on `labeled`, keeping the weights of the epoch with
/// the lowest validation loss.
fn fit(mut model: LogRegModel, labeled: &[LabeledText], recipe: &TrainRecipe, log: &mut TrainingLog) -> LogRegModel {
    let data = examples(labeled);
    let labels: Vec<_> = labeled.iter().map(|l| l.label).collect();
    let (train, mut val) = stratified_split(&labels, recipe.validation_fraction, recipe.seed);
    if val.is_empty() {
        val = train.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mut order = train.clone();
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for epoch in 1..=recipe.epochs {
        order.shuffle(&mut rng);
        let train_loss = sgd_epoch(&mut model, &data, &order, recipe.learning_rate);
        let (val_loss, val_accuracy) = evaluate(&model, &data, &val);
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, model.bias, model.weights.clone()));
        }
    }
    log.select_best();
    if let Some((_, bias, weights)) = best {
        model.bias = bias;
        model.weights = weights;
    }
    model
}

fn fresh(name: &str, recipe: &TrainRecipe) -> LogRegModel {
    LogRegModel {
        backend: name.to_string(),
        threshold: recipe.threshold,
        bias: 0.0,
        weights: vec![0.0; BUCKETS],
    }
}

fn load_artifact(value: &serde_json::Value) -> Result<Box<dyn PrivacyClassifier>> {
    let a: Artifact = serde_json::from_value(value.clone())?;
    Ok(Box::new(LogRegModel::from_artifact(a)?))
}

/// Slot A stub: logistic regression fine-tuned directly on the privacy data.
pub struct LogRegFactory;

impl LogRegFactory {
    pub const NAME: &'static str = "logreg";
}

impl Named for LogRegFactory {
    fn name(&self) -> &str {
        Self::NAME
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Stub
    }
}

impl ClassifierFactory for LogRegFactory {
    fn train(&self, input: &TrainInput<'_>, recipe: &TrainRecipe) -> Result<TrainedClassifier> {
        let mut log = TrainingLog {
            backend: Self::NAME.into(),
            ..Default::default()
        };
        let model = fit(fresh(Self::NAME, recipe), input.labeled, recipe, &mut log);
        Ok(TrainedClassifier {
            model: Box::new(model),
            log,
        })
    }

    fn load(&self, artifact: &serde_json::Value) -> Result<Box<dyn PrivacyClassifier>> {
        load_artifact(artifact)
    }
}

/// Slot B stub: the same model, first trained on negative-vs-positive
/// sentiment, then fine-tuned on privacy data.
pub struct SentimentLogRegFactory;

impl SentimentLogRegFactory {
    pub const NAME: &'static str = "sentiment-logreg";
}

impl Named for SentimentLogRegFactory {
    fn name(&self) -> &str {
        Self::NAME
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Stub
    }
}

impl ClassifierFactory for SentimentLogRegFactory {
    fn train(&self, input: &TrainInput<'_>, recipe: &TrainRecipe) -> Result<TrainedClassifier> {
        let mut log = TrainingLog {
            backend: Self::NAME.into(),
            ..Default::default()
        };
        let mut model = fresh(Self::NAME, recipe);
        match input.sentiment.filter(|s| !s.is_empty()) {
            Some(sentiment) => {
                let data = examples(sentiment);
                let mut order: Vec<usize> = (0..data.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed ^ 0x5e17);
                for _ in 0..recipe.epochs {
                    order.shuffle(&mut rng);
                    sgd_epoch(&mut model, &data, &order, recipe.learning_rate);
                }
            }
            None => {
                let msg = "no sentiment corpus configured; training with the plain recipe";
                warn!(backend = Self::NAME, "{msg}");
                log.warnings.push(msg.to_string());
            }
        }
        let model = fit(model, input.labeled, recipe, &mut log);
        Ok(TrainedClassifier {
            model: Box::new(model),
            log,
        })
    }

    fn load(&self, artifact: &serde_json::Value) -> Result<Box<dyn PrivacyClassifier>> {
        load_artifact(artifact)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{train_backend, PrivacyLabel, Slot};
    use super::*;

    fn corpus() -> Vec<LabeledText> {
        let privacy = [
            "app tracks my location without consent",
            "why does it need access to my contacts",
            "they sell my personal data to advertisers",
            "too many permissions for a meeting app",
            "camera permission is required for no reason",
            "my data is shared with third parties",
        ];
        let other = [
            "audio keeps dropping during calls",
            "great app for meetings with my team",
            "screen sharing is laggy on my tablet",
            "the new layout looks clean",
            "crashes when I join a webinar",
            "love the background blur feature",
        ];
        let mut out = Vec::new();
        for round in 0..4 {
            for t in privacy {
                out.push(LabeledText { text: format!("{t} {round}"), label: PrivacyLabel::Privacy });
            }
            for t in other {
                out.push(LabeledText { text: format!("{t} {round}"), label: PrivacyLabel::NotPrivacy });
            }
        }
        out
    }

    #[test]
    fn learns_separable_vocabulary() {
        let data = corpus();
        let mut recipe = TrainRecipe::for_slot(Slot::A);
        recipe.epochs = 10;
        let trained = train_backend(&LogRegFactory, &TrainInput { labeled: &data, sentiment: None }, &recipe).unwrap();
        assert!(trained.model.predict("it wants my contacts and location").privacy);
        assert!(!trained.model.predict("audio dropping during my calls").privacy);
        assert_eq!(trained.log.epochs.len(), 10);
        assert!((1..=10).contains(&trained.log.best_epoch));
    }

    #[test]
    fn artifact_round_trip_preserves_scores() {
        let data = corpus();
        let trained = LogRegFactory
            .train(&TrainInput { labeled: &data, sentiment: None }, &TrainRecipe::for_slot(Slot::A))
            .unwrap();
        let loaded = LogRegFactory.load(&trained.model.artifact()).unwrap();
        for t in ["sell my data", "laggy screen share"] {
            assert_eq!(trained.model.score(t).to_bits(), loaded.score(t).to_bits());
        }
    }

    #[test]
    fn sentiment_variant_degrades_without_corpus() {
        let data = corpus();
        let recipe = TrainRecipe::for_slot(Slot::B);
        let plain = SentimentLogRegFactory
            .train(&TrainInput { labeled: &data, sentiment: None }, &recipe)
            .unwrap();
        assert_eq!(plain.log.warnings.len(), 1);
        let a = LogRegFactory
            .train(&TrainInput { labeled: &data, sentiment: None }, &recipe)
            .unwrap();
        assert_eq!(a.model.score("sell my data"), plain.model.score("sell my data"));

        let sentiment = vec![
            LabeledText { text: "awful creepy app".into(), label: PrivacyLabel::Privacy },
            LabeledText { text: "wonderful app".into(), label: PrivacyLabel::NotPrivacy },
        ];
        let pre = SentimentLogRegFactory
            .train(&TrainInput { labeled: &data, sentiment: Some(&sentiment) }, &recipe)
            .unwrap();
        assert!(pre.log.warnings.is_empty());
        assert!(pre.model.score("creepy") > plain.model.score("creepy"));
    }
}

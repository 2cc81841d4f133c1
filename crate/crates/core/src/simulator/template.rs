//! Retrieval-and-template generator: conditions on feature keywords, samples a
//! training review by feature similarity and frames it around the feature.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    nucleus_sample, DecodeConfig, FinetuneLog, GeneratorFactory, LossRecord, ReviewGenerator,
    SimulatorConfig, TrainedGenerator,
};
use crate::error::{Error, Result};
use crate::mapper::PairRecord;
use crate::registry::{BackendKind, Named};
use crate::text::{content_tokens, tokenize};

const SHARPNESS: f64 = 20.0;

const TEMPLATES: &[&str] = &[
    "Not sure about {kw}.",
    "{kw} worries me.",
    "Tried {kw} today.",
    "About {kw}:",
    "Since {kw} came out,",
    "Heads up on {kw}.",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Example {
    feature_tokens: BTreeSet<String>,
    review: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateModel {
    examples: Vec<Example>,
    /// Smoothing of the selected epoch.
    alpha: f64,
}

impl TemplateModel {
    fn weights(&self, conditioning: &str, temperature: f64) -> Vec<f64> {
        let f: BTreeSet<String> = content_tokens(conditioning).into_iter().collect();
        let scores: Vec<f64> = self
            .examples
            .iter()
            .map(|e| {
                if f.is_empty() || e.feature_tokens.is_empty() {
                    return 0.0;
                }
                let shared = f.intersection(&e.feature_tokens).count() as f64;
                shared / ((f.len() * e.feature_tokens.len()) as f64).sqrt()
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        scores
            .iter()
            .map(|s| ((s - max) * SHARPNESS / temperature).exp())
            .collect()
    }
}

impl ReviewGenerator for TemplateModel {
    fn backend(&self) -> &str {
        TemplateFactory::NAME
    }

    fn generate(&self, conditioning: &str, decode: &DecodeConfig, seed: u64) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = self.weights(conditioning, decode.temperature);
        let Some(i) = nucleus_sample(&weights, decode.top_p, &mut rng) else {
            return Ok(String::new());
        };
        let mut keywords = content_tokens(conditioning);
        keywords.dedup();
        let kw = match keywords.choose(&mut rng) {
            Some(k) => format!("the {k} feature"),
            None => "this feature".to_string(),
        };
        let frame = TEMPLATES.choose(&mut rng).expect("templates").replace("{kw}", &kw);
        let text = format!("{frame} {}", self.examples[i].review);
        Ok(text
            .split_whitespace()
            .take(decode.max_tokens)
            .collect::<Vec<_>>()
            .join(" "))
    }

    fn artifact(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("model serializes")
    }
}

/// Additively smoothed unigram model used to score the fine-tuning epochs.
struct Unigram {
    counts: HashMap<String, f64>,
    total: f64,
}

impl Unigram {
    fn fit(texts: &[&str]) -> Self {
        let mut counts = HashMap::new();
        let mut total = 0.0;
        for t in texts {
            for tok in tokenize(t) {
                *counts.entry(tok).or_insert(0.0) += 1.0;
                total += 1.0;
            }
        }
        Self { counts, total }
    }

    /// Mean per-token negative log-likelihood; vocabulary includes one unknown slot.
    fn nll(&self, texts: &[&str], alpha: f64) -> f64 {
        let v = self.counts.len() as f64 + 1.0;
        let denom = self.total + alpha * v;
        let (mut sum, mut n) = (0.0, 0usize);
        for t in texts {
            for tok in tokenize(t) {
                let c = self.counts.get(&tok).copied().unwrap_or(0.0);
                sum -= ((c + alpha) / denom).ln();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

pub struct TemplateFactory;

impl TemplateFactory {
    pub const NAME: &'static str = "template";
}

impl Named for TemplateFactory {
    fn name(&self) -> &str {
        Self::NAME
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Stub
    }
}

impl GeneratorFactory for TemplateFactory {
    fn finetune(&self, pairs: &[PairRecord], config: &SimulatorConfig) -> Result<TrainedGenerator> {
        if pairs.len() < 2 {
            return Err(Error::Training("need at least two pairs to hold out validation".into()));
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
        let n_train = ((pairs.len() as f64 * config.train_fraction).round() as usize)
            .clamp(1, pairs.len() - 1);
        let (train_idx, val_idx) = order.split_at(n_train);
        let train: Vec<&str> = train_idx.iter().map(|&i| pairs[i].review_text.as_str()).collect();
        let val: Vec<&str> = val_idx.iter().map(|&i| pairs[i].review_text.as_str()).collect();
        let lm = Unigram::fit(&train);

        let mut log = FinetuneLog {
            train_size: train.len(),
            val_size: val.len(),
            ..Default::default()
        };
        let mut best: Option<(usize, f64)> = None;
        let mut since_best = 0;
        for epoch in 1..=config.epochs {
            let alpha = 1.0 / epoch as f64;
            let rec = LossRecord {
                epoch,
                train_loss: lm.nll(&train, alpha),
                val_loss: lm.nll(&val, alpha),
            };
            if best.is_none_or(|(_, v)| rec.val_loss < v) {
                best = Some((epoch, rec.val_loss));
                since_best = 0;
            } else {
                since_best += 1;
            }
            log.epochs.push(rec);
            if config.early_stopping && since_best >= config.patience.max(1) {
                log.stopped_early = epoch < config.epochs;
                break;
            }
        }
        let (best_epoch, _) = best.expect("at least one epoch");
        log.best_epoch = best_epoch;

        let examples = train_idx
            .iter()
            .map(|&i| Example {
                feature_tokens: content_tokens(&pairs[i].feature_text).into_iter().collect(),
                review: pairs[i].review_text.clone(),
            })
            .collect();
        Ok(TrainedGenerator {
            model: Box::new(TemplateModel {
                examples,
                alpha: 1.0 / best_epoch as f64,
            }),
            log,
        })
    }

    fn load(&self, artifact: &serde_json::Value) -> Result<Box<dyn ReviewGenerator>> {
        Ok(Box::new(serde_json::from_value::<TemplateModel>(artifact.clone())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Feature;
    use crate::simulator::{finetune_simulator, simulate_reviews};

    fn pair(i: usize, feature: &str, review: &str) -> PairRecord {
        PairRecord {
            feature_id: format!("f{i}"),
            review_id: format!("r{i}"),
            feature_text: feature.into(),
            review_text: review.into(),
            similarity: 0.5,
            rank: 1,
        }
    }

    fn pairs() -> Vec<PairRecord> {
        let topics = [
            ("camera sharing in meetings", "the camera turns on without asking"),
            ("contact sync with address book", "uploads my contacts to their servers"),
            ("location based reminders", "tracks my location all the time"),
            ("chat history backup", "my chat history is stored forever"),
        ];
        (0..20)
            .map(|i| {
                let (f, r) = topics[i % topics.len()];
                pair(i, f, &format!("{r} review {i}"))
            })
            .collect()
    }

    #[test]
    fn duplicate_pairs_have_equal_train_and_val_loss() {
        let dup: Vec<_> = (0..10).map(|i| pair(i, "camera", "same review text")).collect();
        let t = TemplateFactory.finetune(&dup, &SimulatorConfig::default()).unwrap();
        for e in &t.log.epochs {
            assert!((e.train_loss - e.val_loss).abs() < 1e-12);
        }
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let t = TemplateFactory.finetune(&pairs(), &SimulatorConfig::default()).unwrap();
        let log = &t.log;
        let best = log
            .epochs
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .unwrap();
        assert_eq!(log.best_epoch, best.epoch);
        // train loss falls as smoothing shrinks
        assert!(log.epochs.windows(2).all(|w| w[1].train_loss <= w[0].train_loss));
        // unseen validation tokens eventually hurt, so training stops
        assert!(log.stopped_early);
    }

    #[test]
    fn generation_is_seed_deterministic_and_conditioned() {
        let config = SimulatorConfig {
            reviews_per_feature: 5,
            seed: 7,
            ..Default::default()
        };
        let h = finetune_simulator(&TemplateFactory, &pairs(), &config, None).unwrap();
        let model = TemplateFactory.load(&h.artifact).unwrap();
        let f = Feature {
            id: "cf".into(),
            app: "Zoom".into(),
            description: "Camera sharing for webinars".into(),
            release_month: "2025-01".parse().unwrap(),
        };
        let a = simulate_reviews(model.as_ref(), &h.model_hash, &f, &config).unwrap();
        let b = simulate_reviews(model.as_ref(), &h.model_hash, &f, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|r| r.text.contains("camera")));
        assert!(a.iter().all(|r| r.model_hash == h.model_hash));
    }

    #[test]
    fn max_tokens_truncates() {
        let t = TemplateFactory.finetune(&pairs(), &SimulatorConfig::default()).unwrap();
        let decode = DecodeConfig {
            max_tokens: 4,
            ..Default::default()
        };
        let s = t.model.generate("camera", &decode, 1).unwrap();
        assert_eq!(s.split_whitespace().count(), 4);
    }
}

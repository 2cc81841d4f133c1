//! Slot C stub: a frozen sentence encoder feeding a two-hidden-layer
//! feed-forward network.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    log_loss, sigmoid, stratified_split, ClassifierFactory, EpochRecord, PrivacyClassifier,
    TrainInput, TrainRecipe, TrainedClassifier, TrainingLog,
};
use crate::embedding::{EmbeddingBackend, HashedEmbedder};
use crate::error::{Error, Result};
use crate::registry::{BackendKind, Named};

/// The encoder is not trained, so its seed is fixed independent of the recipe.
const ENCODER_SEED: u64 = 0;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Mlp {
    input: usize,
    hidden: usize,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
    w3: Vec<f32>,
    b3: f32,
}

struct Activations {
    a1: Vec<f32>,
    a2: Vec<f32>,
    p: f64,
}

impl Mlp {
    fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut glorot = |fan_in: usize, fan_out: usize, n: usize| -> Vec<f32> {
            let a = (6.0 / (fan_in + fan_out) as f32).sqrt();
            (0..n).map(|_| rng.gen_range(-a..a)).collect()
        };
        Self {
            input,
            hidden,
            w1: glorot(input, hidden, hidden * input),
            b1: vec![0.0; hidden],
            w2: glorot(hidden, hidden, hidden * hidden),
            b2: vec![0.0; hidden],
            w3: glorot(hidden, 1, hidden),
            b3: 0.0,
        }
    }

    fn forward(&self, x: &[f32]) -> Activations {
        let h = self.hidden;
        let a1: Vec<f32> = (0..h)
            .map(|r| {
                let row = &self.w1[r * self.input..(r + 1) * self.input];
                (dot(row, x) + self.b1[r]).max(0.0)
            })
            .collect();
        let a2: Vec<f32> = (0..h)
            .map(|r| (dot(&self.w2[r * h..(r + 1) * h], &a1) + self.b2[r]).max(0.0))
            .collect();
        let z = dot(&self.w3, &a2) + self.b3;
        Activations {
            a1,
            a2,
            p: sigmoid(z as f64),
        }
    }

    fn step(&mut self, x: &[f32], y: f64, lr: f32) -> f64 {
        let act = self.forward(x);
        let h = self.hidden;
        let g = (act.p - y) as f32;
        let dz2: Vec<f32> = (0..h)
            .map(|r| if act.a2[r] > 0.0 { g * self.w3[r] } else { 0.0 })
            .collect();
        let mut dz1 = vec![0.0f32; h];
        for (r, &d) in dz2.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &self.w2[r * h..(r + 1) * h];
            for (c, w) in row.iter().enumerate() {
                dz1[c] += d * w;
            }
        }
        for (c, v) in dz1.iter_mut().enumerate() {
            if act.a1[c] <= 0.0 {
                *v = 0.0;
            }
        }
        for r in 0..h {
            self.w3[r] -= lr * g * act.a2[r];
        }
        self.b3 -= lr * g;
        for (r, &d) in dz2.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            self.b2[r] -= lr * d;
            for (w, a) in self.w2[r * h..(r + 1) * h].iter_mut().zip(&act.a1) {
                *w -= lr * d * a;
            }
        }
        for (r, &d) in dz1.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            self.b1[r] -= lr * d;
            for (w, xi) in self.w1[r * self.input..(r + 1) * self.input].iter_mut().zip(x) {
                *w -= lr * d * xi;
            }
        }
        log_loss(act.p, y)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Serialize, Deserialize)]
struct Artifact {
    backend: String,
    threshold: f64,
    embedding_dim: usize,
    mlp: Mlp,
}

pub struct EncoderFfnModel {
    threshold: f64,
    encoder: HashedEmbedder,
    mlp: Mlp,
}

impl PrivacyClassifier for EncoderFfnModel {
    fn backend(&self) -> &str {
        EncoderFfnFactory::NAME
    }

    fn score(&self, text: &str) -> f64 {
        let x = self.encoder.embed(text).expect("hashed encoder is infallible");
        self.mlp.forward(&x).p
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn artifact(&self) -> serde_json::Value {
        serde_json::to_value(Artifact {
            backend: EncoderFfnFactory::NAME.into(),
            threshold: self.threshold,
            embedding_dim: self.encoder.dimension(),
            mlp: self.mlp.clone(),
        })
        .expect("artifact serializes")
    }
}

pub struct EncoderFfnFactory;

impl EncoderFfnFactory {
    pub const NAME: &'static str = "encoder-ffn";
}

impl Named for EncoderFfnFactory {
    fn name(&self) -> &str {
        Self::NAME
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Stub
    }
}

impl ClassifierFactory for EncoderFfnFactory {
    fn train(&self, input: &TrainInput<'_>, recipe: &TrainRecipe) -> Result<TrainedClassifier> {
        if recipe.hidden_units == 0 || recipe.embedding_dim == 0 {
            return Err(Error::Training(
                "encoder-ffn needs positive hidden_units and embedding_dim".into(),
            ));
        }
        let encoder = HashedEmbedder::new(recipe.embedding_dim, ENCODER_SEED);
        let xs: Vec<Vec<f32>> = input
            .labeled
            .par_iter()
            .map(|l| encoder.embed(&l.text).expect("hashed encoder is infallible"))
            .collect();
        let ys: Vec<f64> = input
            .labeled
            .iter()
            .map(|l| if l.label.is_privacy() { 1.0 } else { 0.0 })
            .collect();
        let labels: Vec<_> = input.labeled.iter().map(|l| l.label).collect();
        let (train, mut val) = stratified_split(&labels, recipe.validation_fraction, recipe.seed);
        if val.is_empty() {
            val = train.clone();
        }

        let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
        let mut mlp = Mlp::init(recipe.embedding_dim, recipe.hidden_units, &mut rng);
        let mut log = TrainingLog {
            backend: Self::NAME.into(),
            ..Default::default()
        };
        let mut best: Option<(f64, Mlp)> = None;
        let mut order = train.clone();
        for epoch in 1..=recipe.epochs {
            order.shuffle(&mut rng);
            let mut train_loss = 0.0;
            for &i in &order {
                train_loss += mlp.step(&xs[i], ys[i], recipe.learning_rate as f32);
            }
            train_loss /= order.len().max(1) as f64;
            let (mut val_loss, mut correct) = (0.0, 0usize);
            for &i in &val {
                let p = mlp.forward(&xs[i]).p;
                val_loss += log_loss(p, ys[i]);
                if (p >= recipe.threshold) == (ys[i] == 1.0) {
                    correct += 1;
                }
            }
            val_loss /= val.len() as f64;
            log.epochs.push(EpochRecord {
                epoch,
                train_loss,
                val_loss,
                val_accuracy: correct as f64 / val.len() as f64,
            });
            if best.as_ref().is_none_or(|(l, _)| val_loss < *l) {
                best = Some((val_loss, mlp.clone()));
            }
        }
        log.select_best();
        let mlp = best.map(|(_, m)| m).unwrap_or(mlp);
        Ok(TrainedClassifier {
            model: Box::new(EncoderFfnModel {
                threshold: recipe.threshold,
                encoder,
                mlp,
            }),
            log,
        })
    }

    fn load(&self, artifact: &serde_json::Value) -> Result<Box<dyn PrivacyClassifier>> {
        let a: Artifact = serde_json::from_value(artifact.clone())?;
        if a.mlp.input != a.embedding_dim || a.mlp.w1.len() != a.mlp.hidden * a.mlp.input {
            return Err(Error::Invalid("encoder-ffn artifact has inconsistent shapes".into()));
        }
        Ok(Box::new(EncoderFfnModel {
            threshold: a.threshold,
            encoder: HashedEmbedder::new(a.embedding_dim, ENCODER_SEED),
            mlp: a.mlp,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{LabeledText, PrivacyLabel, Slot};
    use super::*;

    fn small_recipe() -> TrainRecipe {
        TrainRecipe {
            hidden_units: 16,
            embedding_dim: 64,
            learning_rate: 0.1,
            ..TrainRecipe::for_slot(Slot::C)
        }
    }

    fn corpus() -> Vec<LabeledText> {
        let mut out = Vec::new();
        for i in 0..30 {
            out.push(LabeledText {
                text: format!("shares my location and contacts with advertisers {i}"),
                label: PrivacyLabel::Privacy,
            });
            out.push(LabeledText {
                text: format!("video freezes and audio echoes in meetings {i}"),
                label: PrivacyLabel::NotPrivacy,
            });
        }
        out
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::init(4, 3, &mut rng);
        let x = [0.3f32, -0.2, 0.8, 0.1];
        let loss = |m: &Mlp| log_loss(m.forward(&x).p, 1.0);
        // one SGD step with lr = eps moves each parameter by -eps * gradient
        let eps = 1e-4f32;
        let mut stepped = mlp.clone();
        stepped.step(&x, 1.0, eps);
        type Get = fn(&mut Mlp) -> &mut f32;
        let params: [(&str, Get); 5] = [
            ("b3", |m| &mut m.b3),
            ("w3[1]", |m| &mut m.w3[1]),
            ("w2[4]", |m| &mut m.w2[4]),
            ("w1[2]", |m| &mut m.w1[2]),
            ("b1[0]", |m| &mut m.b1[0]),
        ];
        for (name, get) in params {
            let analytic = (*get(&mut mlp.clone()) - *get(&mut stepped.clone())) as f64 / eps as f64;
            let mut plus = mlp.clone();
            *get(&mut plus) += 1e-3;
            let mut minus = mlp.clone();
            *get(&mut minus) -= 1e-3;
            let numeric = (loss(&plus) - loss(&minus)) / 2e-3;
            assert!((analytic - numeric).abs() < 2e-3, "{name}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn trains_and_round_trips() {
        let data = corpus();
        let trained = EncoderFfnFactory
            .train(&TrainInput { labeled: &data, sentiment: None }, &small_recipe())
            .unwrap();
        assert_eq!(trained.log.epochs.len(), 20);
        assert!(trained.model.predict("sells my contacts to advertisers").privacy);
        assert!(!trained.model.predict("audio echoes in my meetings").privacy);
        let loaded = EncoderFfnFactory.load(&trained.model.artifact()).unwrap();
        let t = "location shared";
        assert_eq!(trained.model.score(t).to_bits(), loaded.score(t).to_bits());
    }

    #[test]
    fn training_is_deterministic() {
        let data = corpus();
        let input = TrainInput { labeled: &data, sentiment: None };
        let a = EncoderFfnFactory.train(&input, &small_recipe()).unwrap();
        let b = EncoderFfnFactory.train(&input, &small_recipe()).unwrap();
        assert_eq!(a.model.artifact(), b.model.artifact());
    }
}

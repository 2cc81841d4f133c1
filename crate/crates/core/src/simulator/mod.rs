//! Simulated privacy reviews for features that have not shipped yet.

mod sampling;
mod template;

use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::corpus::Feature;
use crate::error::{Error, Result};
use crate::mapper::PairRecord;
use crate::registry::{unavailable, BackendKind, Named, Registry};
use crate::text::{hash64, sha256_hex};

pub use sampling::nucleus_sample;
pub use template::TemplateFactory;

/// Retries allowed for empty generations and for exact duplicates.
pub const MAX_REGENERATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub temperature: f64,
    /// Nucleus probability mass.
    pub top_p: f64,
    pub max_tokens: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.95,
            max_tokens: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    pub train_fraction: f64,
    pub epochs: usize,
    pub early_stopping: bool,
    pub patience: usize,
    pub reviews_per_feature: usize,
    pub decode: DecodeConfig,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            epochs: 5,
            early_stopping: true,
            patience: 1,
            reviews_per_feature: 10,
            decode: DecodeConfig::default(),
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "simulator train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.epochs == 0 || self.reviews_per_feature == 0 {
            return Err(Error::Config(
                "simulator epochs and reviews_per_feature must be at least 1".into(),
            ));
        }
        if !(self.decode.top_p > 0.0 && self.decode.top_p <= 1.0) || self.decode.temperature <= 0.0 {
            return Err(Error::Config("decode needs 0 < top_p <= 1 and temperature > 0".into()));
        }
        if self.decode.max_tokens == 0 {
            return Err(Error::Config("decode max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLog {
    pub epochs: Vec<LossRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_size: usize,
    pub val_size: usize,
}

pub trait ReviewGenerator: Send + Sync {
    fn backend(&self) -> &str;
    /// Deterministic for fixed weights, decode config and seed.
    fn generate(&self, conditioning: &str, decode: &DecodeConfig, seed: u64) -> Result<String>;
    fn artifact(&self) -> serde_json::Value;
}

pub struct TrainedGenerator {
    pub model: Box<dyn ReviewGenerator>,
    pub log: FinetuneLog,
}

pub trait GeneratorFactory: Named + Send + Sync {
    fn finetune(&self, pairs: &[PairRecord], config: &SimulatorConfig) -> Result<TrainedGenerator>;
    fn load(&self, artifact: &serde_json::Value) -> Result<Box<dyn ReviewGenerator>>;
}

struct BartFactory;

impl Named for BartFactory {
    fn name(&self) -> &str {
        "bart"
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Real
    }
}

impl GeneratorFactory for BartFactory {
    fn finetune(&self, _: &[PairRecord], _: &SimulatorConfig) -> Result<TrainedGenerator> {
        Err(unavailable("bart", TemplateFactory::NAME))
    }
    fn load(&self, _: &serde_json::Value) -> Result<Box<dyn ReviewGenerator>> {
        Err(unavailable("bart", TemplateFactory::NAME))
    }
}

pub fn generator_registry() -> Registry<dyn GeneratorFactory> {
    let mut reg: Registry<dyn GeneratorFactory> = Registry::new("review generator");
    reg.register(Arc::new(TemplateFactory));
    reg.register(Arc::new(BartFactory));
    reg
}

/// Persisted output of simulator fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorHandle {
    pub backend: String,
    pub model_hash: String,
    pub config_hash: String,
    /// Latest review date in the training pairs.
    pub trained_through: Option<NaiveDate>,
    pub log: FinetuneLog,
    pub artifact: serde_json::Value,
}

pub fn config_hash(config: &SimulatorConfig) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))[..12].to_string()
}

pub fn finetune_simulator(
    factory: &dyn GeneratorFactory,
    pairs: &[PairRecord],
    config: &SimulatorConfig,
    trained_through: Option<NaiveDate>,
) -> Result<SimulatorHandle> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Training("simulator pair set is empty".into()));
    }
    if pairs.len() < 10 {
        return Err(Error::Training(format!(
            "simulator needs at least 10 pairs, got {}",
            pairs.len()
        )));
    }
    let trained = factory.finetune(pairs, config)?;
    let artifact = trained.model.artifact();
    let model_hash = sha256_hex(&serde_json::to_vec(&artifact)?)[..16].to_string();
    Ok(SimulatorHandle {
        backend: factory.name().to_string(),
        model_hash,
        config_hash: config_hash(config),
        trained_through,
        log: trained.log,
        artifact,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatedReview {
    pub candidate_feature_id: String,
    pub generation_index: usize,
    pub text: String,
    pub seed: u64,
    pub model_hash: String,
}

impl SimulatedReview {
    /// Id used as issue provenance.
    pub fn id(&self) -> String {
        format!("sim:{}:{}", self.candidate_feature_id, self.generation_index)
    }
}

/// Seed of generation `index` for `feature_id`, and of its `retry`-th regeneration.
pub fn derive_seed(base: u64, feature_id: &str, index: usize, retry: usize) -> u64 {
    hash64(base, &format!("{feature_id}\u{0}{index}\u{0}{retry}"))
}

/// Exactly `reviews_per_feature` reviews for one candidate feature.
///
/// Empty outputs are regenerated with a bumped seed; after
/// [`MAX_REGENERATIONS`] failed retries the feature is degenerate. Exact
/// duplicates of an earlier review are regenerated up to the same limit and
/// then kept.
pub fn simulate_reviews(
    model: &dyn ReviewGenerator,
    model_hash: &str,
    feature: &Feature,
    config: &SimulatorConfig,
) -> Result<Vec<SimulatedReview>> {
    if feature.description.trim().is_empty() {
        return Err(Error::Invalid(format!("feature `{}` has no description", feature.id)));
    }
    let mut out: Vec<SimulatedReview> = Vec::with_capacity(config.reviews_per_feature);
    for index in 0..config.reviews_per_feature {
        let mut retry = 0;
        let mut empty_retries = 0;
        let mut dup_retries = 0;
        let (text, seed) = loop {
            let seed = derive_seed(config.seed, &feature.id, index, retry);
            retry += 1;
            let text = model.generate(&feature.description, &config.decode, seed)?;
            let text = text.trim().to_string();
            if text.is_empty() {
                empty_retries += 1;
                if empty_retries > MAX_REGENERATIONS {
                    warn!(feature = %feature.id, "repeated empty generations");
                    return Err(Error::DegenerateGeneration(feature.id.clone()));
                }
                continue;
            }
            if out.iter().any(|r| r.text == text) && dup_retries < MAX_REGENERATIONS {
                dup_retries += 1;
                continue;
            }
            break (text, seed);
        };
        out.push(SimulatedReview {
            candidate_feature_id: feature.id.clone(),
            generation_index: index,
            text,
            seed,
            model_hash: model_hash.to_string(),
        });
    }
    Ok(out)
}

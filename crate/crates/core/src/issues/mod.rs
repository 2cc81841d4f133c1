//! Short privacy issues summarised from reviews.

mod keyword;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::error::{Error, Result};
use crate::registry::{unavailable, BackendKind, Named, Registry};
use crate::text::{sha256_hex, tokenize};

pub use keyword::KeywordFactory;

pub const MIN_ANNOTATIONS: usize = 50;
pub const MAX_PHRASE_TOKENS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueAnnotation {
    pub review_text: String,
    pub issues: Vec<String>,
}

/// Loads line-delimited annotations. A record with no issues, an empty
/// phrase or a phrase longer than six tokens is rejected with its line.
pub fn load_annotations(path: &Path) -> Result<Vec<IssueAnnotation>> {
    let body = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in body.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let a: IssueAnnotation =
            serde_json::from_str(raw).map_err(|e| Error::parse(path, line, e.to_string()))?;
        if a.review_text.trim().is_empty() {
            return Err(Error::parse(path, line, "empty review_text"));
        }
        if a.issues.is_empty() {
            return Err(Error::parse(path, line, "annotation has no issues"));
        }
        for p in &a.issues {
            let n = tokenize(p).len();
            if n == 0 || n > MAX_PHRASE_TOKENS {
                return Err(Error::parse(
                    path,
                    line,
                    format!("issue `{p}` has {n} tokens, expected 1..={MAX_PHRASE_TOKENS}"),
                ));
            }
        }
        out.push(a);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IssueGenConfig {
    pub train_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub label_smoothing: f64,
    pub base_size: String,
    pub issue_delimiter: String,
    pub seed: u64,
}

impl Default for IssueGenConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            epochs: 5,
            learning_rate: 0.005,
            label_smoothing: 0.1,
            base_size: "base".into(),
            issue_delimiter: "; ".into(),
            seed: 0,
        }
    }
}

impl IssueGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("issue train_fraction must be in (0, 1)".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("issue learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must be in [0, 1)".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("issue epochs must be at least 1".into()));
        }
        if self.issue_delimiter.is_empty() {
            return Err(Error::Config("issue_delimiter must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PrePi,
    Baseline,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::PrePi => "pre-pi",
            Method::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub canonical: String,
    pub raw: String,
    pub method: Method,
    pub instance_index: usize,
    pub source_review_id: String,
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, punctuation stripped, whitespace collapsed, leading articles
/// removed. `None` when nothing is left.
pub fn canonicalize_issue(raw: &str) -> Option<String> {
    let cleaned: String = raw
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else if c == '\'' || c == '\u{2019}' { '\0' } else { ' ' })
        .filter(|c| *c != '\0')
        .collect::<String>()
        .to_lowercase();
    let mut words: Vec<&str> = cleaned.split_whitespace().collect();
    let lead = words.iter().take_while(|w| ARTICLES.contains(w)).count();
    words.drain(..lead);
    if words.is_empty() {
        warn!(raw, "issue is empty after canonicalization; dropped");
        return None;
    }
    Some(words.join(" "))
}

/// Splits a decoded target on the delimiter; empty pieces are dropped, and a
/// non-empty decode that yields nothing survives whole.
pub fn split_issues(decoded: &str, delimiter: &str) -> Vec<String> {
    let parts: Vec<String> = decoded
        .split(delimiter)
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect();
    if parts.is_empty() && !decoded.trim().is_empty() {
        return vec![decoded.trim().to_string()];
    }
    parts
}

pub trait IssueModel: Send + Sync {
    fn backend(&self) -> &str;
    /// Greedy decode of the serialized issue target for one review.
    fn decode(&self, review_text: &str, delimiter: &str) -> Result<String>;
    fn artifact(&self) -> serde_json::Value;
}

pub trait IssueModelFactory: Named + Send + Sync {
    fn train(&self, annotations: &[IssueAnnotation], config: &IssueGenConfig) -> Result<Box<dyn IssueModel>>;
    fn load(&self, artifact: &serde_json::Value) -> Result<Box<dyn IssueModel>>;
}

struct T5Factory;

impl Named for T5Factory {
    fn name(&self) -> &str {
        "t5"
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Real
    }
}

impl IssueModelFactory for T5Factory {
    fn train(&self, _: &[IssueAnnotation], _: &IssueGenConfig) -> Result<Box<dyn IssueModel>> {
        Err(unavailable("t5", KeywordFactory::NAME))
    }
    fn load(&self, _: &serde_json::Value) -> Result<Box<dyn IssueModel>> {
        Err(unavailable("t5", KeywordFactory::NAME))
    }
}

pub fn issue_model_registry() -> Registry<dyn IssueModelFactory> {
    let mut reg: Registry<dyn IssueModelFactory> = Registry::new("issue model");
    reg.register(Arc::new(KeywordFactory));
    reg.register(Arc::new(T5Factory));
    reg
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeldOutScores {
    pub test_size: usize,
    /// Fraction of reviews whose canonical issue set equals the gold set.
    pub exact_match: f64,
    /// Mean token-level F1 between predicted and gold issue tokens.
    pub token_overlap: f64,
    /// Fraction of generated canonical issues with 2 to 4 tokens.
    pub length_2_4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueHandle {
    pub backend: String,
    pub model_hash: String,
    pub config: IssueGenConfig,
    pub held_out: HeldOutScores,
    pub artifact: serde_json::Value,
}

fn canonical_set(phrases: &[String]) -> BTreeSet<String> {
    phrases.iter().filter_map(|p| canonicalize_issue(p)).collect()
}

fn token_f1(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    let p: BTreeSet<&str> = pred.iter().flat_map(|s| s.split(' ')).collect();
    let g: BTreeSet<&str> = gold.iter().flat_map(|s| s.split(' ')).collect();
    let shared = p.intersection(&g).count() as f64;
    if shared == 0.0 {
        return 0.0;
    }
    let (prec, rec) = (shared / p.len() as f64, shared / g.len() as f64);
    2.0 * prec * rec / (prec + rec)
}

pub fn finetune_issue_model(
    factory: &dyn IssueModelFactory,
    annotations: &[IssueAnnotation],
    config: &IssueGenConfig,
) -> Result<IssueHandle> {
    config.validate()?;
    if annotations.len() < MIN_ANNOTATIONS {
        return Err(Error::Training(format!(
            "issue model needs at least {MIN_ANNOTATIONS} annotations, got {}",
            annotations.len()
        )));
    }
    let mut order: Vec<usize> = (0..annotations.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_train = ((annotations.len() as f64 * config.train_fraction).round() as usize)
        .clamp(1, annotations.len() - 1);
    let train: Vec<IssueAnnotation> = order[..n_train].iter().map(|&i| annotations[i].clone()).collect();
    let test: Vec<&IssueAnnotation> = order[n_train..].iter().map(|&i| &annotations[i]).collect();

    let model = factory.train(&train, config)?;
    let mut scores = HeldOutScores {
        test_size: test.len(),
        ..Default::default()
    };
    let (mut generated, mut short) = (0usize, 0usize);
    for a in &test {
        let pred = canonical_set(&generate_issues(model.as_ref(), &a.review_text, &config.issue_delimiter)?);
        let gold = canonical_set(&a.issues);
        if pred == gold {
            scores.exact_match += 1.0;
        }
        scores.token_overlap += token_f1(&pred, &gold);
        for p in &pred {
            generated += 1;
            if (2..=4).contains(&p.split(' ').count()) {
                short += 1;
            }
        }
    }
    let n = test.len().max(1) as f64;
    scores.exact_match /= n;
    scores.token_overlap /= n;
    scores.length_2_4 = if generated == 0 { 0.0 } else { short as f64 / generated as f64 };
    info!(
        exact_match = scores.exact_match,
        token_overlap = scores.token_overlap,
        length_2_4 = scores.length_2_4,
        "issue model held-out scores"
    );
    if scores.length_2_4 < 0.9 {
        warn!(fraction = scores.length_2_4, "fewer than 90% of held-out issues are 2-4 words");
    }
    let artifact = model.artifact();
    Ok(IssueHandle {
        backend: factory.name().to_string(),
        model_hash: sha256_hex(&serde_json::to_vec(&artifact)?)[..16].to_string(),
        config: config.clone(),
        held_out: scores,
        artifact,
    })
}

/// Raw issue phrases for one review. An empty decode is retried once and
/// then yields no issues.
pub fn generate_issues(model: &dyn IssueModel, review_text: &str, delimiter: &str) -> Result<Vec<String>> {
    if review_text.trim().is_empty() {
        return Err(Error::Invalid("cannot generate issues for empty text".into()));
    }
    let mut decoded = model.decode(review_text, delimiter)?;
    if decoded.trim().is_empty() {
        decoded = model.decode(review_text, delimiter)?;
        if decoded.trim().is_empty() {
            info!("empty issue decode; review yields no issues");
            return Ok(Vec::new());
        }
    }
    Ok(split_issues(&decoded, delimiter))
}

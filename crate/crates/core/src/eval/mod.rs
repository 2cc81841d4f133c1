//! Overlap metrics between the baseline (Hark) and Pre-PI issue ledgers.

mod agreement;
mod report;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, embed_batch, EmbeddingBackend, EmbeddingCache};
use crate::error::{Error, Result};
use crate::registry::unavailable;

pub use agreement::{
    agreement_table, cohen_kappa, load_judgments, percent_agreement, AgreementRow, AgreementStats, Judgment, Kappa,
};
pub use report::{emit_tables, overlap_table_csv, overlap_table_markdown, plot_data_csv};

pub type IssueSet = BTreeSet<String>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    #[default]
    ExactCanonical,
    Semantic,
}

impl std::fmt::Display for MatchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MatchMode::ExactCanonical => "exact-canonical",
            MatchMode::Semantic => "semantic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub mode: MatchMode,
    pub tau: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            mode: MatchMode::ExactCanonical,
            tau: 0.85,
        }
    }
}

pub trait IssueMatcher: Send + Sync {
    fn mode(&self) -> MatchMode;
    fn tau(&self) -> Option<f64>;
    /// Issues of `a` that match some issue of `b`, as `a`-side representatives.
    fn common(&self, a: &IssueSet, b: &IssueSet) -> IssueSet;
}

pub struct ExactMatcher;

impl IssueMatcher for ExactMatcher {
    fn mode(&self) -> MatchMode {
        MatchMode::ExactCanonical
    }
    fn tau(&self) -> Option<f64> {
        None
    }
    fn common(&self, a: &IssueSet, b: &IssueSet) -> IssueSet {
        a.intersection(b).cloned().collect()
    }
}

/// Cosine similarity of issue embeddings at or above `tau`.
pub struct SemanticMatcher {
    backend: Arc<dyn EmbeddingBackend>,
    cache: EmbeddingCache,
    tau: f64,
}

impl SemanticMatcher {
    pub fn new(backend: Arc<dyn EmbeddingBackend>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("semantic threshold must be in (0, 1], got {tau}")));
        }
        Ok(Self {
            backend,
            cache: EmbeddingCache::new(),
            tau,
        })
    }

    fn similar(&self, x: &str, y: &str) -> bool {
        if x == y {
            return true;
        }
        let v = embed_batch(self.backend.as_ref(), &[x, y], &self.cache);
        match (&v[0], &v[1]) {
            (Some(u), Some(w)) => cosine(u, w).is_ok_and(|s| s >= self.tau),
            _ => false,
        }
    }
}

impl IssueMatcher for SemanticMatcher {
    fn mode(&self) -> MatchMode {
        MatchMode::Semantic
    }
    fn tau(&self) -> Option<f64> {
        Some(self.tau)
    }
    fn common(&self, a: &IssueSet, b: &IssueSet) -> IssueSet {
        a.iter().filter(|x| b.iter().any(|y| self.similar(x, y))).cloned().collect()
    }
}

/// Semantic mode needs an embedding backend; without one it is a capability error.
pub fn build_matcher(config: &MatcherConfig, backend: Option<Arc<dyn EmbeddingBackend>>) -> Result<Box<dyn IssueMatcher>> {
    match config.mode {
        MatchMode::ExactCanonical => Ok(Box::new(ExactMatcher)),
        MatchMode::Semantic => match backend {
            Some(b) => Ok(Box::new(SemanticMatcher::new(b, config.tau)?)),
            None => Err(unavailable("semantic matcher", "exact-canonical")),
        },
    }
}

pub fn match_common(a: &IssueSet, b: &IssueSet, matcher: &dyn IssueMatcher) -> IssueSet {
    matcher.common(a, b)
}

/// 0/0 is defined as 0.
pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn cumulative(sets: &[IssueSet]) -> Vec<IssueSet> {
    let mut acc = IssueSet::new();
    sets.iter()
        .map(|s| {
            acc.extend(s.iter().cloned());
            acc.clone()
        })
        .collect()
}

/// Cumulative sets through every instance, the raw material of all ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeSets {
    pub hark_cum: Vec<IssueSet>,
    pub prepi_cum: Vec<IssueSet>,
    /// Pre-PI-side representatives matched in the Hark union.
    pub common_cum: Vec<IssueSet>,
    /// `common_cum(i)` plus Pre-PI issues through `i` matched by Hark in `i+1..=n`.
    pub temporal_common_cum: Vec<IssueSet>,
    /// Hark issues through `i` with no Pre-PI match through `i`.
    pub unique_hark: Vec<usize>,
}

impl CumulativeSets {
    pub fn build(hark: &[IssueSet], prepi: &[IssueSet], matcher: &dyn IssueMatcher) -> Result<Self> {
        if hark.len() != prepi.len() {
            return Err(Error::Invalid(format!(
                "ledgers cover different instance counts ({} vs {})",
                hark.len(),
                prepi.len()
            )));
        }
        let n = hark.len();
        let hark_cum = cumulative(hark);
        let prepi_cum = cumulative(prepi);
        // future[i] = union of hark_j for j in i+1..n
        let mut future = vec![IssueSet::new(); n];
        for i in (0..n.saturating_sub(1)).rev() {
            let mut f = future[i + 1].clone();
            f.extend(hark[i + 1].iter().cloned());
            future[i] = f;
        }
        let mut common_cum = Vec::with_capacity(n);
        let mut temporal = Vec::with_capacity(n);
        let mut unique_hark = Vec::with_capacity(n);
        for i in 0..n {
            let common = matcher.common(&prepi_cum[i], &hark_cum[i]);
            let mut t = common.clone();
            t.extend(matcher.common(&prepi_cum[i], &future[i]));
            unique_hark.push(hark_cum[i].len() - matcher.common(&hark_cum[i], &prepi_cum[i]).len());
            common_cum.push(common);
            temporal.push(t);
        }
        Ok(Self {
            hark_cum,
            prepi_cum,
            common_cum,
            temporal_common_cum: temporal,
            unique_hark,
        })
    }

    pub fn len(&self) -> usize {
        self.hark_cum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hark_cum.is_empty()
    }
}

/// `(hark_ratio, prepi_ratio)` at instance `i`.
pub fn overlap_ratios(hark: &[IssueSet], prepi: &[IssueSet], i: usize, matcher: &dyn IssueMatcher) -> Result<(f64, f64)> {
    check_index(hark, prepi, i)?;
    let sets = CumulativeSets::build(&hark[..=i], &prepi[..=i], matcher)?;
    let c = sets.common_cum[i].len();
    Ok((
        ratio(c, sets.hark_cum[i].len()).min(1.0),
        ratio(c, sets.prepi_cum[i].len()),
    ))
}

/// `(hark_temporal_ratio, prepi_temporal_ratio)` at instance `i` with window end `n`.
/// The Hark side is clamped to 1 since the shared numerator can outgrow the Hark union.
pub fn temporal_overlap_ratios(
    hark: &[IssueSet],
    prepi: &[IssueSet],
    i: usize,
    n: usize,
    matcher: &dyn IssueMatcher,
) -> Result<(f64, f64)> {
    if n < i {
        return Err(Error::Range(format!("window end {n} precedes instance {i}")));
    }
    check_index(hark, prepi, n)?;
    let sets = CumulativeSets::build(&hark[..=n], &prepi[..=n], matcher)?;
    let t = sets.temporal_common_cum[i].len();
    Ok((
        ratio(t, sets.hark_cum[i].len()).min(1.0),
        ratio(t, sets.prepi_cum[i].len()),
    ))
}

fn check_index(hark: &[IssueSet], prepi: &[IssueSet], i: usize) -> Result<()> {
    if i >= hark.len() || i >= prepi.len() {
        return Err(Error::Range(format!(
            "instance {i} outside ledgers of length {} and {}",
            hark.len(),
            prepi.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub instance: usize,
    pub hark_issues: usize,
    pub prepi_issues: usize,
    pub common: usize,
    pub unique_hark: usize,
    pub unique_prepi: usize,
    pub hark_ratio: f64,
    pub prepi_ratio: f64,
    pub temporal_common: usize,
    pub hark_temporal_ratio: f64,
    pub prepi_temporal_ratio: f64,
    /// The unclamped Hark temporal ratio exceeded 1.
    pub hark_temporal_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSeries {
    pub app: String,
    pub matcher: MatchMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Last instance index of the evaluation window.
    pub window: usize,
    pub rows: Vec<OverlapRow>,
}

impl OverlapSeries {
    pub fn compute(app: &str, hark: &[IssueSet], prepi: &[IssueSet], matcher: &dyn IssueMatcher) -> Result<Self> {
        let sets = CumulativeSets::build(hark, prepi, matcher)?;
        if sets.is_empty() {
            return Err(Error::Invalid("no candidate instances to evaluate".into()));
        }
        let rows = (0..sets.len())
            .map(|i| {
                let (h, p) = (sets.hark_cum[i].len(), sets.prepi_cum[i].len());
                let (c, t) = (sets.common_cum[i].len(), sets.temporal_common_cum[i].len());
                let hark_temporal = ratio(t, h);
                OverlapRow {
                    instance: i,
                    hark_issues: h,
                    prepi_issues: p,
                    common: c,
                    unique_hark: sets.unique_hark[i],
                    unique_prepi: p - c,
                    hark_ratio: ratio(c, h).min(1.0),
                    prepi_ratio: ratio(c, p),
                    temporal_common: t,
                    hark_temporal_ratio: hark_temporal.min(1.0),
                    prepi_temporal_ratio: ratio(t, p),
                    hark_temporal_clamped: hark_temporal > 1.0,
                }
            })
            .collect();
        Ok(Self {
            app: app.to_string(),
            matcher: matcher.mode(),
            tau: matcher.tau(),
            window: sets.len() - 1,
            rows,
        })
    }
}

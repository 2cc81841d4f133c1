//! Links each existing feature to its most similar privacy reviews.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::corpus::{CorpusSplit, Feature, Review};
use crate::embedding::{cosine, embed_batch, EmbeddingBackend, EmbeddingCache};
use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReviewPair {
    pub feature_id: String,
    pub review_id: String,
    pub similarity: f64,
    /// 1-based.
    pub rank: usize,
}

/// One line of the simulator training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub feature_id: String,
    pub review_id: String,
    pub feature_text: String,
    pub review_text: String,
    pub similarity: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Scored<'a> {
    similarity: f64,
    id: &'a str,
}

impl Eq for Scored<'_> {}

impl Ord for Scored<'_> {
    /// Greater means ranked earlier: higher similarity, then smaller id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.similarity
            .total_cmp(&other.similarity)
            .then_with(|| other.id.cmp(self.id))
    }
}

impl PartialOrd for Scored<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Privacy-review pool embedded once and ranked against many features.
pub struct FeatureMapper<'b> {
    backend: &'b dyn EmbeddingBackend,
    cache: &'b EmbeddingCache,
    pool: Vec<(String, Arc<[f32]>)>,
}

impl<'b> FeatureMapper<'b> {
    pub fn new(backend: &'b dyn EmbeddingBackend, cache: &'b EmbeddingCache, pool: &[Review]) -> Self {
        let texts: Vec<&str> = pool.iter().map(|r| r.text.as_str()).collect();
        let vectors = embed_batch(backend, &texts, cache);
        let pool = pool
            .iter()
            .zip(vectors)
            .filter_map(|(r, v)| match v {
                Some(v) if v.iter().any(|x| *x != 0.0) => Some((r.id.clone(), v)),
                Some(_) => {
                    warn!(review = %r.id, "zero embedding; review excluded from ranking");
                    None
                }
                None => None,
            })
            .collect();
        Self { backend, cache, pool }
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    /// Top `k` reviews by cosine similarity, ties broken by ascending review id.
    pub fn map_feature(&self, feature: &Feature, k: usize) -> Vec<FeatureReviewPair> {
        if self.pool.is_empty() {
            warn!(feature = %feature.id, "no privacy reviews to map against");
            return Vec::new();
        }
        let fv = match embed_batch(self.backend, &[feature.description.as_str()], self.cache)
            .pop()
            .flatten()
        {
            Some(v) => v,
            None => {
                warn!(feature = %feature.id, "feature could not be embedded");
                return Vec::new();
            }
        };
        let mut heap: BinaryHeap<Reverse<Scored<'_>>> = BinaryHeap::with_capacity(k + 1);
        for (id, v) in &self.pool {
            let similarity = match cosine(&fv, v) {
                Ok(s) => s,
                Err(e) => {
                    warn!(feature = %feature.id, error = %e, "feature excluded from mapping");
                    return Vec::new();
                }
            };
            heap.push(Reverse(Scored { similarity, id }));
            if heap.len() > k {
                heap.pop();
            }
        }
        // ascending Reverse order == best first
        heap.into_sorted_vec()
            .into_iter()
            .enumerate()
            .map(|(i, Reverse(s))| FeatureReviewPair {
                feature_id: feature.id.clone(),
                review_id: s.id.to_string(),
                similarity: s.similarity,
                rank: i + 1,
            })
            .collect()
    }
}

/// One-shot convenience over [`FeatureMapper`].
pub fn map_feature(
    feature: &Feature,
    privacy_reviews: &[Review],
    backend: &dyn EmbeddingBackend,
    cache: &EmbeddingCache,
    k: usize,
) -> Vec<FeatureReviewPair> {
    FeatureMapper::new(backend, cache, privacy_reviews).map_feature(feature, k)
}

/// Flattens per-feature mappings into training records, in existing-feature order.
///
/// Every existing feature must have a mapping entry (possibly empty); a
/// review may appear under many features.
pub fn build_training_pairs(
    split: &CorpusSplit,
    mappings: &HashMap<String, Vec<FeatureReviewPair>>,
    reviews: &HashMap<String, &Review>,
) -> Result<Vec<PairRecord>> {
    let mut out = Vec::new();
    for feature in split.existing_features() {
        let pairs = mappings.get(&feature.id).ok_or_else(|| {
            Error::Invalid(format!("feature `{}` has not been mapped", feature.id))
        })?;
        for p in pairs {
            let review = reviews.get(&p.review_id).ok_or_else(|| {
                Error::Invalid(format!("mapped review `{}` not in corpus", p.review_id))
            })?;
            out.push(PairRecord {
                feature_id: feature.id.clone(),
                review_id: p.review_id.clone(),
                feature_text: feature.description.clone(),
                review_text: review.text.clone(),
                similarity: p.similarity,
                rank: p.rank,
            });
        }
    }
    Ok(out)
}

/// Fails if any paired review is dated after `cutoff_end`.
pub fn check_no_leakage(
    pairs: &[PairRecord],
    review_dates: &HashMap<String, NaiveDate>,
    cutoff_end: NaiveDate,
) -> Result<()> {
    for p in pairs {
        match review_dates.get(&p.review_id) {
            Some(d) if *d > cutoff_end => {
                return Err(Error::Leakage(format!(
                    "training review `{}` dated {d} is after the cutoff {cutoff_end}",
                    p.review_id
                )))
            }
            Some(_) => {}
            None => {
                return Err(Error::Leakage(format!(
                    "training review `{}` has no provenance",
                    p.review_id
                )))
            }
        }
    }
    Ok(())
}

pub fn write_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for p in pairs {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let body = fs::read_to_string(path)?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashedEmbedder;

    fn review(id: &str, text: &str) -> Review {
        Review {
            id: id.into(),
            app: "Webex".into(),
            text: text.into(),
            timestamp: NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(),
            rating: None,
        }
    }

    fn feature(text: &str) -> Feature {
        Feature {
            id: "f".into(),
            app: "Webex".into(),
            description: text.into(),
            release_month: "2023-01".parse().unwrap(),
        }
    }

    #[test]
    fn pool_smaller_than_k() {
        let e = HashedEmbedder::new(32, 0);
        let cache = EmbeddingCache::new();
        let pool = vec![
            review("r1", "camera access"),
            review("r2", "contacts upload"),
            review("r3", "location tracking"),
        ];
        let pairs = map_feature(&feature("share your camera"), &pool, &e, &cache, 10);
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs.iter().map(|p| p.rank).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(pairs[0].review_id, "r1");
        assert!(pairs.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn empty_pool_gives_empty_result() {
        let e = HashedEmbedder::new(32, 0);
        let cache = EmbeddingCache::new();
        assert!(map_feature(&feature("anything"), &[], &e, &cache, 10).is_empty());
    }

    #[test]
    fn ties_break_by_review_id() {
        let e = HashedEmbedder::new(32, 0);
        let cache = EmbeddingCache::new();
        let pool = vec![
            review("z", "camera access"),
            review("b", "camera access"),
            review("m", "camera access"),
        ];
        let pairs = map_feature(&feature("camera"), &pool, &e, &cache, 2);
        let ids: Vec<_> = pairs.iter().map(|p| p.review_id.as_str()).collect();
        assert_eq!(ids, ["b", "m"]);
    }

    #[test]
    fn zero_vector_reviews_are_excluded() {
        let e = HashedEmbedder::new(32, 0);
        let cache = EmbeddingCache::new();
        let pool = vec![review("a", "?!"), review("b", "camera")];
        let mapper = FeatureMapper::new(&e, &cache, &pool);
        assert_eq!(mapper.pool_size(), 1);
        assert!(mapper.map_feature(&feature("!!!"), 5).is_empty());
    }

    #[test]
    fn leakage_guard() {
        let cutoff = NaiveDate::from_ymd_opt(2023, 5, 31).unwrap();
        let pair = PairRecord {
            feature_id: "f".into(),
            review_id: "r".into(),
            feature_text: "x".into(),
            review_text: "y".into(),
            similarity: 0.5,
            rank: 1,
        };
        let mut dates = HashMap::new();
        dates.insert("r".to_string(), NaiveDate::from_ymd_opt(2023, 5, 31).unwrap());
        assert!(check_no_leakage(std::slice::from_ref(&pair), &dates, cutoff).is_ok());
        dates.insert("r".to_string(), NaiveDate::from_ymd_opt(2023, 6, 1).unwrap());
        assert!(matches!(
            check_no_leakage(&[pair], &dates, cutoff),
            Err(Error::Leakage(_))
        ));
    }
}

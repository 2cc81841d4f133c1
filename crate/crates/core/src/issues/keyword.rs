//! Keyword-association issue model.
//!
//! Each training annotation credits its issues to the content tokens of its
//! review. Decoding scores phrase `p` for review tokens `R` as
//! `sum over t in R of count(t, p) / df(t)` and emits the best phrase plus any
//! within [`RELATIVE_CUTOFF`] of it, at most [`MAX_PHRASES`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{canonicalize_issue, IssueAnnotation, IssueGenConfig, IssueModel, IssueModelFactory};
use crate::error::{Error, Result};
use crate::registry::{BackendKind, Named};
use crate::text::content_tokens;

pub const MAX_PHRASES: usize = 3;
pub const RELATIVE_CUTOFF: f64 = 0.75;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KeywordModel {
    /// canonical phrase -> surface form first seen in training.
    phrases: BTreeMap<String, String>,
    /// token -> canonical phrase -> co-occurrence count.
    assoc: BTreeMap<String, BTreeMap<String, u32>>,
    /// token -> number of training reviews containing it.
    df: BTreeMap<String, u32>,
}

impl KeywordModel {
    pub fn fit(annotations: &[IssueAnnotation]) -> Self {
        let mut m = KeywordModel::default();
        for a in annotations {
            let tokens: BTreeSet<String> = content_tokens(&a.review_text).into_iter().collect();
            let mut canon = BTreeSet::new();
            for raw in &a.issues {
                if let Some(c) = canonicalize_issue(raw) {
                    m.phrases.entry(c.clone()).or_insert_with(|| raw.trim().to_string());
                    canon.insert(c);
                }
            }
            for t in tokens {
                *m.df.entry(t.clone()).or_default() += 1;
                let row = m.assoc.entry(t).or_default();
                for c in &canon {
                    *row.entry(c.clone()).or_default() += 1;
                }
            }
        }
        m
    }

    /// Phrase scores for a review, best first, ties by phrase.
    pub fn scores(&self, review_text: &str) -> Vec<(String, f64)> {
        let tokens: BTreeSet<String> = content_tokens(review_text).into_iter().collect();
        let mut acc: BTreeMap<&str, f64> = BTreeMap::new();
        for t in &tokens {
            let (Some(row), Some(&df)) = (self.assoc.get(t), self.df.get(t)) else {
                continue;
            };
            for (p, &c) in row {
                *acc.entry(p).or_default() += c as f64 / df as f64;
            }
        }
        let mut out: Vec<(String, f64)> = acc
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(p, s)| (p.to_string(), s))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

impl IssueModel for KeywordModel {
    fn backend(&self) -> &str {
        KeywordFactory::NAME
    }

    fn decode(&self, review_text: &str, delimiter: &str) -> Result<String> {
        let scores = self.scores(review_text);
        let Some(best) = scores.first().map(|s| s.1) else {
            return Ok(String::new());
        };
        let picked: Vec<&str> = scores
            .iter()
            .take_while(|(_, s)| *s >= RELATIVE_CUTOFF * best)
            .take(MAX_PHRASES)
            .map(|(p, _)| self.phrases.get(p).map(String::as_str).unwrap_or(p))
            .collect();
        Ok(picked.join(delimiter))
    }

    fn artifact(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("model serializes")
    }
}

pub struct KeywordFactory;

impl KeywordFactory {
    pub const NAME: &'static str = "keyword";
}

impl Named for KeywordFactory {
    fn name(&self) -> &str {
        Self::NAME
    }
    fn kind(&self) -> BackendKind {
        BackendKind::Stub
    }
}

impl IssueModelFactory for KeywordFactory {
    fn train(&self, annotations: &[IssueAnnotation], _config: &IssueGenConfig) -> Result<Box<dyn IssueModel>> {
        let m = KeywordModel::fit(annotations);
        if m.phrases.is_empty() {
            return Err(Error::Training("no usable issue phrases in annotations".into()));
        }
        Ok(Box::new(m))
    }

    fn load(&self, artifact: &serde_json::Value) -> Result<Box<dyn IssueModel>> {
        Ok(Box::new(serde_json::from_value::<KeywordModel>(artifact.clone())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::issues::{finetune_issue_model, generate_issues};

    fn ann(text: &str, issues: &[&str]) -> IssueAnnotation {
        IssueAnnotation {
            review_text: text.into(),
            issues: issues.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn lookup_oracle() {
        let m = KeywordModel::fit(&[
            ann("camera turns on by itself", &["Unnecessary camera access"]),
            ann("camera and microphone always on", &["Unnecessary camera access", "microphone snooping"]),
            ann("sells my location data", &["data selling"]),
        ]);
        // camera: df 2 -> camera access 2/2, snooping 1/2
        // microphone: df 1 -> both phrases 1/1
        // totals: camera access 2.0, snooping 1.5
        let s = m.scores("the camera and the microphone");
        assert_eq!(
            s,
            vec![
                ("unnecessary camera access".to_string(), 2.0),
                ("microphone snooping".to_string(), 1.5)
            ]
        );
        // 1.5 >= 0.75 * 2.0 keeps both, in surface form
        assert_eq!(
            m.decode("the camera and the microphone", "; ").unwrap(),
            "Unnecessary camera access; microphone snooping"
        );
        // camera alone: 1.0 vs 0.5, below the cutoff
        assert_eq!(m.decode("camera", "; ").unwrap(), "Unnecessary camera access");
        assert_eq!(
            m.decode("microphone", "; ").unwrap(),
            "microphone snooping; Unnecessary camera access"
        );
        assert_eq!(m.decode("nothing relevant here", "; ").unwrap(), "");
    }

    #[test]
    fn handle_round_trip_is_deterministic() {
        let topics = [
            ("asks for camera permission to chat", "unnecessary camera access"),
            ("shares my contacts with advertisers", "contact data sharing"),
            ("tracks my location constantly", "location tracking"),
            ("password leaked to other users", "unwanted password sharing"),
            ("too many permissions requested", "excessive permissions"),
        ];
        let annotations: Vec<_> = (0..60)
            .map(|i| {
                let (t, p) = topics[i % topics.len()];
                ann(&format!("{t} again {i}"), &[p])
            })
            .collect();
        let h = finetune_issue_model(&KeywordFactory, &annotations, &IssueGenConfig::default()).unwrap();
        assert_eq!(h.held_out.test_size, 6);
        assert!(h.held_out.exact_match > 0.99, "{:?}", h.held_out);
        let m = KeywordFactory.load(&h.artifact).unwrap();
        let a = generate_issues(m.as_ref(), "why the camera permission", "; ").unwrap();
        let b = generate_issues(m.as_ref(), "why the camera permission", "; ").unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], "unnecessary camera access");
    }
}

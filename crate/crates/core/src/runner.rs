//! Per-instance issue ledgers for the pre-release pipeline and the
//! post-release baseline.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::classifier::{classify_batch, ensemble_decide, ClassifierSet, EnsembleRule};
use crate::corpus::CorpusSplit;
use crate::error::{Error, Result};
use crate::issues::{canonicalize_issue, generate_issues, Issue, IssueModel, Method};
use crate::simulator::{simulate_reviews, ReviewGenerator, SimulatedReview, SimulatorConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueEntry {
    pub raw: String,
    pub canonical: String,
    pub source_review_id: String,
}

/// Deduplicated canonical issues per candidate instance, indices contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodIssueLedger {
    pub method: Method,
    pub per_instance: Vec<Vec<IssueEntry>>,
}

impl MethodIssueLedger {
    pub fn canonical_sets(&self) -> Vec<BTreeSet<String>> {
        self.per_instance
            .iter()
            .map(|v| v.iter().map(|e| e.canonical.clone()).collect())
            .collect()
    }

    pub fn issues(&self) -> impl Iterator<Item = Issue> + '_ {
        self.per_instance.iter().enumerate().flat_map(move |(i, v)| {
            v.iter().map(move |e| Issue {
                canonical: e.canonical.clone(),
                raw: e.raw.clone(),
                method: self.method,
                instance_index: i,
                source_review_id: e.source_review_id.clone(),
            })
        })
    }
}

type LedgerFile = BTreeMap<Method, BTreeMap<usize, Vec<IssueEntry>>>;

pub fn write_ledgers(path: &Path, ledgers: &[&MethodIssueLedger]) -> Result<()> {
    let file: LedgerFile = ledgers
        .iter()
        .map(|l| (l.method, l.per_instance.iter().cloned().enumerate().collect()))
        .collect();
    fs::write(path, serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

pub fn read_ledgers(path: &Path) -> Result<Vec<MethodIssueLedger>> {
    let file: LedgerFile = serde_json::from_slice(&fs::read(path)?)?;
    file.into_iter()
        .map(|(method, per)| {
            if per.keys().copied().ne(0..per.len()) {
                return Err(Error::Invalid(format!(
                    "{method} ledger in {} has non-contiguous instance indices",
                    path.display()
                )));
            }
            Ok(MethodIssueLedger {
                method,
                per_instance: per.into_values().collect(),
            })
        })
        .collect()
}

/// The one generation, canonicalization and dedup path both methods share.
/// First occurrence (in source order) wins.
pub fn collect_issues(
    sources: &[(String, String)],
    model: &dyn IssueModel,
    delimiter: &str,
) -> Result<Vec<IssueEntry>> {
    let raw: Vec<Vec<String>> = sources
        .par_iter()
        .map(|(_, text)| generate_issues(model, text, delimiter))
        .collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for ((id, _), phrases) in sources.iter().zip(raw) {
        for raw in phrases {
            let Some(canonical) = canonicalize_issue(&raw) else {
                continue;
            };
            if seen.insert(canonical.clone()) {
                out.push(IssueEntry {
                    raw,
                    canonical,
                    source_review_id: id.clone(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub reviews_per_instance: Vec<usize>,
    pub privacy_per_instance: Vec<usize>,
}

/// Post-release baseline: privacy-classify each candidate instance's real
/// reviews under the regime rule and summarise the privacy ones.
pub fn run_baseline(
    split: &CorpusSplit,
    classifiers: &ClassifierSet,
    rule: &EnsembleRule,
    corpus_review_count: usize,
    model: &dyn IssueModel,
    delimiter: &str,
) -> Result<(MethodIssueLedger, BaselineStats)> {
    let mut stats = BaselineStats::default();
    let mut per_instance = Vec::with_capacity(split.candidate_instances.len());
    for (i, reviews) in split.alignment.candidates.iter().enumerate() {
        let (results, _) = classify_batch(classifiers, reviews);
        let privacy: HashSet<String> = results
            .into_iter()
            .map(|r| ensemble_decide(r, corpus_review_count, rule))
            .filter(|r| r.ensemble_label.is_some_and(|l| l.is_privacy()))
            .map(|r| r.review_id)
            .collect();
        let sources: Vec<(String, String)> = reviews
            .iter()
            .filter(|r| privacy.contains(&r.id))
            .map(|r| (r.id.clone(), r.text.clone()))
            .collect();
        stats.reviews_per_instance.push(reviews.len());
        stats.privacy_per_instance.push(sources.len());
        let issues = collect_issues(&sources, model, delimiter)?;
        info!(instance = i, privacy_reviews = sources.len(), issues = issues.len(), "baseline instance");
        per_instance.push(issues);
    }
    if per_instance.len() != split.candidate_instances.len() {
        return Err(Error::Invalid("review alignment does not cover every candidate instance".into()));
    }
    Ok((
        MethodIssueLedger {
            method: Method::Baseline,
            per_instance,
        },
        stats,
    ))
}

#[derive(Debug, Clone, Default)]
pub struct PrePiOutput {
    pub simulated: Vec<SimulatedReview>,
    /// Candidate features skipped after degenerate generation.
    pub degenerate: Vec<String>,
}

/// Pre-release pipeline: simulate reviews for every candidate feature and
/// summarise them directly, without a privacy-classification pass.
pub fn run_prepi(
    split: &CorpusSplit,
    simulator: &dyn ReviewGenerator,
    simulator_hash: &str,
    simulator_trained_through: Option<NaiveDate>,
    config: &SimulatorConfig,
    model: &dyn IssueModel,
    delimiter: &str,
) -> Result<(MethodIssueLedger, PrePiOutput)> {
    let cutoff_end = split.cutoff_end();
    if let Some(d) = simulator_trained_through {
        if d > cutoff_end {
            return Err(Error::Leakage(format!(
                "simulator saw reviews through {d}, after the cutoff {cutoff_end}"
            )));
        }
    }
    let mut out = PrePiOutput::default();
    let mut per_instance = Vec::with_capacity(split.candidate_instances.len());
    for inst in &split.candidate_instances {
        let generated: Vec<(String, Result<Vec<SimulatedReview>>)> = inst
            .features
            .par_iter()
            .map(|f| (f.id.clone(), simulate_reviews(simulator, simulator_hash, f, config)))
            .collect();
        let mut sources = Vec::new();
        for (fid, res) in generated {
            match res {
                Ok(reviews) => {
                    for r in reviews {
                        sources.push((r.id(), r.text.clone()));
                        out.simulated.push(r);
                    }
                }
                Err(Error::DegenerateGeneration(_)) => {
                    warn!(feature = %fid, "degenerate generation; feature skipped");
                    out.degenerate.push(fid);
                }
                Err(e) => return Err(e),
            }
        }
        let issues = collect_issues(&sources, model, delimiter)?;
        info!(instance = inst.index, simulated = sources.len(), issues = issues.len(), "pre-pi instance");
        per_instance.push(issues);
    }
    Ok((
        MethodIssueLedger {
            method: Method::PrePi,
            per_instance,
        },
        out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{PrivacyClassifier, Slot};
    use crate::corpus::{align_reviews, build_release_instances, split_groups, Feature, Granularity, Review};
    use std::sync::Arc;

    const TABLE: [(&str, &str); 4] = [
        ("camera", "Unnecessary camera access"),
        ("contacts", "contact harvesting"),
        ("location", "Location Tracking"),
        ("password", "the unwanted password sharing"),
    ];

    /// Privacy iff the text names a table keyword or "privacy".
    struct KeywordClassifier;

    impl PrivacyClassifier for KeywordClassifier {
        fn backend(&self) -> &str {
            "table"
        }
        fn score(&self, text: &str) -> f64 {
            let hit = text.contains("privacy") || TABLE.iter().any(|(k, _)| text.contains(k));
            if hit { 1.0 } else { 0.0 }
        }
        fn threshold(&self) -> f64 {
            0.5
        }
        fn artifact(&self) -> serde_json::Value {
            serde_json::Value::Null
        }
    }

    /// Emits the issue of every table keyword present, in table order.
    struct TableModel;

    impl IssueModel for TableModel {
        fn backend(&self) -> &str {
            "table"
        }
        fn decode(&self, text: &str, delimiter: &str) -> Result<String> {
            Ok(TABLE
                .iter()
                .filter(|(k, _)| text.contains(k))
                .map(|(_, v)| *v)
                .collect::<Vec<_>>()
                .join(delimiter))
        }
        fn artifact(&self) -> serde_json::Value {
            serde_json::Value::Null
        }
    }

    fn date(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2025, m, d).unwrap()
    }

    fn fixture() -> CorpusSplit {
        let features: Vec<Feature> = [(1, "old"), (2, "a"), (3, "b"), (4, "c")]
            .iter()
            .map(|(m, id)| Feature {
                id: id.to_string(),
                app: "Zoom".into(),
                description: format!("feature {id}"),
                release_month: format!("2025-{m:02}").parse().unwrap(),
            })
            .collect();
        let g = Granularity::default();
        let split = split_groups(build_release_instances(&features, g), "2025-01".parse().unwrap(), g).unwrap();
        // 30 reviews: 10 per candidate month, cycling through texts
        let texts = [
            "the camera is always on",
            "great app",
            "uploads my contacts and camera roll",
            "tracks location",
            "love it",
            "privacy is bad here",
            "password got shared",
            "nice update",
            "camera again",
            "contacts again",
        ];
        let reviews: Vec<Review> = (0..30)
            .map(|i| Review {
                id: format!("r{i:02}"),
                app: "Zoom".into(),
                text: texts[(i * 7) % 10].to_string(),
                timestamp: date(2 + (i / 10) as u32, 1 + (i % 10) as u32),
                rating: None,
            })
            .collect();
        align_reviews(split, &reviews)
    }

    fn oracle(reviews: &[Review]) -> Vec<(String, String)> {
        // hand rule: privacy filter, table lookup, canonicalize, first wins
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in reviews {
            for (k, v) in TABLE {
                if r.text.contains(k) {
                    let c = v.to_lowercase().trim_start_matches("the ").to_string();
                    if seen.insert(c.clone()) {
                        out.push((c, r.id.clone()));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn baseline_matches_table_oracle() {
        let split = fixture();
        let set = ClassifierSet::new(Arc::new(KeywordClassifier), Arc::new(KeywordClassifier), Arc::new(KeywordClassifier));
        let rule = EnsembleRule {
            min_reviews: 15_000,
            designated: Slot::C,
        };
        let (ledger, stats) = run_baseline(&split, &set, &rule, 30, &TableModel, "; ").unwrap();
        assert_eq!(ledger.per_instance.len(), 3);
        assert_eq!(stats.reviews_per_instance, [10, 10, 10]);
        for (i, reviews) in split.alignment.candidates.iter().enumerate() {
            let got: Vec<_> = ledger.per_instance[i]
                .iter()
                .map(|e| (e.canonical.clone(), e.source_review_id.clone()))
                .collect();
            assert_eq!(got, oracle(reviews), "instance {i}");
        }
        assert!(ledger.per_instance[0].iter().any(|e| e.raw == "Unnecessary camera access"));
    }

    #[test]
    fn empty_instance_gives_empty_set() {
        let mut split = fixture();
        split.alignment.candidates[1].clear();
        let set = ClassifierSet::new(Arc::new(KeywordClassifier), Arc::new(KeywordClassifier), Arc::new(KeywordClassifier));
        let (ledger, _) = run_baseline(&split, &set, &EnsembleRule::default(), 20, &TableModel, "; ").unwrap();
        assert!(ledger.per_instance[1].is_empty());
        assert_eq!(ledger.per_instance.len(), 3);
    }

    #[test]
    fn ledger_file_round_trip() {
        let l = MethodIssueLedger {
            method: Method::PrePi,
            per_instance: vec![
                vec![IssueEntry {
                    raw: "A".into(),
                    canonical: "a".into(),
                    source_review_id: "s".into(),
                }],
                vec![],
            ],
        };
        let b = MethodIssueLedger {
            method: Method::Baseline,
            per_instance: vec![vec![], vec![]],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ledgers.json");
        write_ledgers(&p, &[&l, &b]).unwrap();
        let back = read_ledgers(&p).unwrap();
        assert_eq!(back, vec![l, b]);
    }

    #[test]
    fn prepi_rejects_simulator_trained_past_cutoff() {
        let split = fixture();
        struct Never;
        impl ReviewGenerator for Never {
            fn backend(&self) -> &str {
                "never"
            }
            fn generate(&self, _: &str, _: &crate::simulator::DecodeConfig, _: u64) -> Result<String> {
                unreachable!()
            }
            fn artifact(&self) -> serde_json::Value {
                serde_json::Value::Null
            }
        }
        let err = run_prepi(&split, &Never, "h", Some(date(2, 1)), &SimulatorConfig::default(), &TableModel, "; ")
            .unwrap_err();
        assert!(matches!(err, Error::Leakage(_)));
    }
}

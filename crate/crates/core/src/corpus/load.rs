use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;
use tracing::{debug, warn};

use super::{parse_date, Feature, Review, YearMonth};
use crate::error::{Error, Result};
use crate::text::short_id;

#[derive(Deserialize)]
struct FeatureRecord {
    #[serde(default)]
    id: Option<String>,
    app: String,
    description: String,
    release_month: String,
}

#[derive(Deserialize)]
struct ReviewRecord {
    #[serde(default)]
    id: Option<String>,
    app: String,
    text: String,
    timestamp: String,
    #[serde(default)]
    rating: Option<u8>,
}

/// Iterates `(line_number, line)` over non-blank lines of a JSON-lines file.
fn records(path: &Path) -> Result<Vec<(usize, String)>> {
    let body = fs::read_to_string(path)?;
    Ok(body
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn same_app(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

/// Loads release-note features for `app`. Records for other apps are skipped.
pub fn load_features(path: &Path, app: &str) -> Result<Vec<Feature>> {
    let mut out = Vec::new();
    for (line, raw) in records(path)? {
        let rec: FeatureRecord =
            serde_json::from_str(&raw).map_err(|e| Error::parse(path, line, e.to_string()))?;
        if !same_app(&rec.app, app) {
            debug!(line, app = %rec.app, "skipping feature for another app");
            continue;
        }
        let description = rec.description.trim().to_string();
        if description.is_empty() {
            return Err(Error::parse(path, line, "empty feature description"));
        }
        let release_month: YearMonth = rec
            .release_month
            .parse()
            .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        let app = rec.app.trim();
        let id = rec
            .id
            .unwrap_or_else(|| short_id(&[app, &description, &release_month.to_string()]));
        out.push(Feature {
            id,
            app: app.to_string(),
            description,
            release_month,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no features for `{app}` in {}",
            path.display()
        )));
    }
    Ok(out)
}

/// Loads reviews for `app`. Reviews with blank text are skipped with a warning.
pub fn load_reviews(path: &Path, app: &str) -> Result<Vec<Review>> {
    let mut out = Vec::new();
    for (line, raw) in records(path)? {
        let rec: ReviewRecord =
            serde_json::from_str(&raw).map_err(|e| Error::parse(path, line, e.to_string()))?;
        if !same_app(&rec.app, app) {
            continue;
        }
        let text = rec.text.trim().to_string();
        if text.is_empty() {
            warn!(line, "skipping review with empty text");
            continue;
        }
        let timestamp =
            parse_date(&rec.timestamp).map_err(|e| Error::parse(path, line, e.to_string()))?;
        if let Some(r) = rec.rating {
            if !(1..=5).contains(&r) {
                return Err(Error::parse(path, line, format!("rating {r} outside 1..=5")));
            }
        }
        let app = rec.app.trim();
        let id = rec
            .id
            .unwrap_or_else(|| short_id(&[app, &text, &timestamp.to_string()]));
        out.push(Review {
            id,
            app: app.to_string(),
            text,
            timestamp,
            rating: rec.rating,
        });
    }
    Ok(out)
}

/// Plain text, one review id per line.
pub fn write_discard_log(path: &Path, ids: &[String]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for id in ids {
        writeln!(f, "{id}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn explicit_ids_preserved() {
        let f = file(&[
            r#"{"id":"f1","app":"Zoom","description":"one","release_month":"2025-01"}"#,
            r#"{"id":"f2","app":"Zoom","description":"two","release_month":"2025-01"}"#,
            "",
            r#"{"id":"f3","app":"Zoom","description":"three","release_month":"2025-02-10"}"#,
        ]);
        let feats = load_features(f.path(), "Zoom").unwrap();
        let ids: Vec<_> = feats.iter().map(|f| f.id.as_str()).collect();
        assert_eq!(ids, ["f1", "f2", "f3"]);
        assert_eq!(feats[2].release_month.to_string(), "2025-02");
    }

    #[test]
    fn missing_ids_are_content_hashes() {
        let line = r#"{"app":"Zoom","description":"same","release_month":"2025-01"}"#;
        let a = load_features(file(&[line]).path(), "Zoom").unwrap();
        let b = load_features(file(&[line]).path(), "zoom").unwrap();
        assert_eq!(a[0].id, b[0].id);
        assert_eq!(a[0].id.len(), 16);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = file(&[]);
        assert!(matches!(
            load_features(f.path(), "Zoom"),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn malformed_record_names_line() {
        let f = file(&[
            r#"{"app":"Zoom","description":"ok","release_month":"2025-01"}"#,
            r#"{"app":"Zoom","description":"bad month","release_month":"2025-13"}"#,
        ]);
        let err = load_features(f.path(), "Zoom").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = file(&["{not json"]);
        assert!(matches!(
            load_features(f.path(), "Zoom"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn reviews_get_stable_ids_and_validate_rating() {
        let f = file(&[
            r#"{"app":"Webex","text":"asks for contacts","timestamp":"2023-01-04T09:00:00Z","rating":1}"#,
            r#"{"app":"Webex","text":"   ","timestamp":"2023-01-04"}"#,
            r#"{"app":"Other","text":"x","timestamp":"2023-01-04"}"#,
        ]);
        let a = load_reviews(f.path(), "Webex").unwrap();
        let b = load_reviews(f.path(), "Webex").unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, b);
        let bad = file(&[r#"{"app":"Webex","text":"x","timestamp":"2023-01-04","rating":9}"#]);
        assert!(load_reviews(bad.path(), "Webex").is_err());
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::issues::Method;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    /// Chance agreement was 1 (both raters constant and equal); value defined as 1.
    pub degenerate: bool,
}

fn check_lengths(a: &[bool], b: &[bool]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("rater vectors differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Invalid("rater vectors are empty".into()));
    }
    Ok(())
}

pub fn percent_agreement(a: &[bool], b: &[bool]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64)
}

pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<Kappa> {
    let p_o = percent_agreement(a, b)?;
    let n = a.len() as f64;
    let pa = a.iter().filter(|x| **x).count() as f64 / n;
    let pb = b.iter().filter(|x| **x).count() as f64 / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(Kappa {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(Kappa {
        value: ((p_o - p_e) / (1.0 - p_e)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub kappa: Kappa,
    pub percent_agreement: f64,
}

/// Two raters' validity judgment of one issue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub method: Method,
    pub issue: String,
    pub rater_a: bool,
    pub rater_b: bool,
}

pub fn load_judgments(path: &Path) -> Result<Vec<Judgment>> {
    let body = fs::read_to_string(path)?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub method: Method,
    pub issues: usize,
    pub stats: AgreementStats,
}

/// Kappa and percentage agreement per method.
pub fn agreement_table(judgments: &[Judgment]) -> Result<Vec<AgreementRow>> {
    let mut by: BTreeMap<Method, (Vec<bool>, Vec<bool>)> = BTreeMap::new();
    for j in judgments {
        let e = by.entry(j.method).or_default();
        e.0.push(j.rater_a);
        e.1.push(j.rater_b);
    }
    by.into_iter()
        .map(|(method, (a, b))| {
            Ok(AgreementRow {
                method,
                issues: a.len(),
                stats: AgreementStats {
                    kappa: cohen_kappa(&a, &b)?,
                    percent_agreement: percent_agreement(&a, &b)?,
                },
            })
        })
        .collect()
}

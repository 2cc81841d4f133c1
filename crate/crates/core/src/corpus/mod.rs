//! Features, reviews and the monthly release instances they are grouped into.

mod load;
mod split;

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use load::{load_features, load_reviews, write_discard_log};
pub use split::{align_reviews, build_release_instances, split_groups, Granularity};

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Invalid(format!("month {month} out of 1..=12")));
        }
        Ok(Self { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    /// Months since year 0, used for arithmetic.
    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(n: i64) -> Self {
        Self {
            year: n.div_euclid(12) as i32,
            month: n.rem_euclid(12) as u32 + 1,
        }
    }

    pub fn add_months(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }

    pub fn months_until(self, later: YearMonth) -> i64 {
        later.ordinal() - self.ordinal()
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid year-month")
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    /// Accepts `YYYY-MM` or a full ISO date / datetime (the day is ignored).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() >= 10 {
            return parse_date(s).map(YearMonth::of);
        }
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| Error::Invalid(format!("expected YYYY-MM, got `{s}`")))?;
        let year = y
            .parse()
            .map_err(|_| Error::Invalid(format!("bad year in `{s}`")))?;
        let month = m
            .parse()
            .map_err(|_| Error::Invalid(format!("bad month in `{s}`")))?;
        YearMonth::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses `YYYY-MM-DD`, optionally followed by a time part (`T...` or ` ...`).
pub fn parse_date(s: &str) -> Result<NaiveDate> {
    let s = s.trim();
    let head = s.get(..10).unwrap_or(s);
    NaiveDate::parse_from_str(head, "%Y-%m-%d")
        .map_err(|e| Error::Invalid(format!("bad date `{s}`: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub id: String,
    pub app: String,
    pub description: String,
    pub release_month: YearMonth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub id: String,
    pub app: String,
    pub text: String,
    pub timestamp: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Existing,
    Candidate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseInstance {
    pub app: String,
    pub period: YearMonth,
    pub index: usize,
    pub role: Role,
    pub features: Vec<Feature>,
}

/// Reviews attached to the existing pool and to each candidate instance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewAlignment {
    pub existing: Vec<Review>,
    /// Index-aligned with `CorpusSplit::candidate_instances`.
    pub candidates: Vec<Vec<Review>>,
    /// Ids of reviews that fell outside every window.
    pub discarded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub app: String,
    pub cutoff: YearMonth,
    pub granularity: Granularity,
    pub existing_instances: Vec<ReleaseInstance>,
    pub candidate_instances: Vec<ReleaseInstance>,
    pub alignment: ReviewAlignment,
}

impl CorpusSplit {
    /// Last day of the cutoff month; nothing after it may reach training.
    pub fn cutoff_end(&self) -> NaiveDate {
        self.cutoff.add_months(1).first_day().pred_opt().expect("date underflow")
    }

    pub fn existing_features(&self) -> impl Iterator<Item = &Feature> {
        self.existing_instances.iter().flat_map(|i| i.features.iter())
    }

    pub fn candidate_features(&self) -> impl Iterator<Item = &Feature> {
        self.candidate_instances.iter().flat_map(|i| i.features.iter())
    }

    /// `[first, last]` inclusive date window of the existing group.
    pub fn existing_window(&self) -> Option<(NaiveDate, NaiveDate)> {
        let first = self.existing_instances.first()?;
        Some((first.period.first_day(), self.cutoff_end()))
    }

    /// `[first, last]` inclusive date window of candidate instance `index`.
    pub fn candidate_window(&self, index: usize) -> Option<(NaiveDate, NaiveDate)> {
        let inst = self.candidate_instances.get(index)?;
        Some(self.granularity.window(inst.period))
    }
}

/// Checks that every feature's release month lies in `[start, end]`.
pub fn check_feature_range(features: &[Feature], start: YearMonth, end: YearMonth) -> Result<()> {
    match features
        .iter()
        .find(|f| f.release_month < start || f.release_month > end)
    {
        Some(f) => Err(Error::Range(format!(
            "feature `{}` released {} outside configured range {start}..{end}",
            f.id, f.release_month
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn year_month_parse_and_display() {
        let ym: YearMonth = "2024-03".parse().unwrap();
        assert_eq!(ym.to_string(), "2024-03");
        let from_date: YearMonth = "2024-03-17T10:00:00Z".parse().unwrap();
        assert_eq!(ym, from_date);
        assert!("2024-13".parse::<YearMonth>().is_err());
        assert!("March".parse::<YearMonth>().is_err());
    }

    #[test]
    fn year_month_arithmetic_wraps_years() {
        let dec: YearMonth = "2023-12".parse().unwrap();
        assert_eq!(dec.add_months(1).to_string(), "2024-01");
        assert_eq!(dec.add_months(-12).to_string(), "2022-12");
        assert_eq!(dec.months_until("2024-06".parse().unwrap()), 6);
    }

    #[test]
    fn parse_date_accepts_datetimes() {
        assert_eq!(
            parse_date("2023-05-31 23:59:59").unwrap(),
            NaiveDate::from_ymd_opt(2023, 5, 31).unwrap()
        );
        assert!(parse_date("31/05/2023").is_err());
    }

    #[test]
    fn feature_range_check() {
        let f = Feature {
            id: "x".into(),
            app: "A".into(),
            description: "d".into(),
            release_month: "2021-12".parse().unwrap(),
        };
        let start = "2022-01".parse().unwrap();
        let end = "2022-12".parse().unwrap();
        assert!(matches!(
            check_feature_range(&[f], start, end),
            Err(Error::Range(_))
        ));
    }
}

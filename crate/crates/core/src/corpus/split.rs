use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{CorpusSplit, Feature, ReleaseInstance, Review, ReviewAlignment, Role, YearMonth};
use crate::error::{Error, Result};

/// Width of a release instance in calendar months, anchored at year 0 (so 3 = quarters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Granularity {
    months: u32,
}

impl Default for Granularity {
    fn default() -> Self {
        Self { months: 1 }
    }
}

impl Granularity {
    pub fn months(months: u32) -> Result<Self> {
        if months == 0 || 12 % months != 0 {
            return Err(Error::Config(format!(
                "granularity must divide 12 months, got {months}"
            )));
        }
        Ok(Self { months })
    }

    pub fn width(self) -> u32 {
        self.months
    }

    /// First month of the bucket containing `ym`.
    pub fn bucket(self, ym: YearMonth) -> YearMonth {
        let offset = (ym.month() - 1) % self.months;
        ym.add_months(-(offset as i64))
    }

    /// Inclusive date window of the bucket that starts at `period`.
    pub fn window(self, period: YearMonth) -> (NaiveDate, NaiveDate) {
        let end = period
            .add_months(self.months as i64)
            .first_day()
            .pred_opt()
            .expect("date underflow");
        (period.first_day(), end)
    }
}

/// Groups features into one instance per non-empty period, indexed chronologically from 0.
///
/// Features keep their input order inside an instance. Instances carry
/// `Role::Existing` until [`split_groups`] assigns roles.
pub fn build_release_instances(features: &[Feature], granularity: Granularity) -> Vec<ReleaseInstance> {
    let mut by_period: BTreeMap<YearMonth, Vec<Feature>> = BTreeMap::new();
    for f in features {
        by_period
            .entry(granularity.bucket(f.release_month))
            .or_default()
            .push(f.clone());
    }
    by_period
        .into_iter()
        .enumerate()
        .map(|(index, (period, features))| ReleaseInstance {
            app: features[0].app.clone(),
            period,
            index,
            role: Role::Existing,
            features,
        })
        .collect()
}

/// Instances at or before `cutoff` become existing, the rest candidates (re-indexed from 0).
pub fn split_groups(
    instances: Vec<ReleaseInstance>,
    cutoff: YearMonth,
    granularity: Granularity,
) -> Result<CorpusSplit> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Range("no release instances to split".into()))?;
    if cutoff < first.period {
        return Err(Error::Range(format!(
            "cutoff {cutoff} precedes the first release instance {}",
            first.period
        )));
    }
    if granularity.bucket(cutoff.add_months(1)) != cutoff.add_months(1) {
        return Err(Error::Range(format!(
            "cutoff {cutoff} does not end a {}-month release period",
            granularity.width()
        )));
    }
    let app = first.app.clone();
    let (mut existing, mut candidate): (Vec<_>, Vec<_>) =
        instances.into_iter().partition(|i| i.period <= cutoff);
    for (index, inst) in existing.iter_mut().enumerate() {
        inst.index = index;
        inst.role = Role::Existing;
    }
    for (index, inst) in candidate.iter_mut().enumerate() {
        inst.index = index;
        inst.role = Role::Candidate;
    }
    let alignment = ReviewAlignment {
        existing: Vec::new(),
        candidates: vec![Vec::new(); candidate.len()],
        discarded: Vec::new(),
    };
    Ok(CorpusSplit {
        app,
        cutoff,
        granularity,
        existing_instances: existing,
        candidate_instances: candidate,
        alignment,
    })
}

/// Routes reviews into the existing pool or their candidate instance bucket.
///
/// Reviews outside every window land in `alignment.discarded`; prior
/// alignment content is replaced.
pub fn align_reviews(mut split: CorpusSplit, reviews: &[Review]) -> CorpusSplit {
    let candidate_index: HashMap<YearMonth, usize> = split
        .candidate_instances
        .iter()
        .map(|i| (i.period, i.index))
        .collect();
    let existing_window = split.existing_window();
    let mut alignment = ReviewAlignment {
        existing: Vec::new(),
        candidates: vec![Vec::new(); split.candidate_instances.len()],
        discarded: Vec::new(),
    };
    for r in reviews {
        if let Some((lo, hi)) = existing_window {
            if r.timestamp >= lo && r.timestamp <= hi {
                alignment.existing.push(r.clone());
                continue;
            }
        }
        let period = split.granularity.bucket(YearMonth::of(r.timestamp));
        match candidate_index.get(&period) {
            Some(&i) => alignment.candidates[i].push(r.clone()),
            None => {
                debug!(review = %r.id, date = %r.timestamp, "review outside all windows");
                alignment.discarded.push(r.id.clone());
            }
        }
    }
    split.alignment = alignment;
    split
}

//! Term-of-penalty bucketing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw sentence as recorded in a case file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawPenalty {
    /// Fixed-term imprisonment in months.
    Months(u32),
    Life,
    Death,
    /// No imprisonment.
    None,
}

/// One piece of a bucket: a special sentence or a half-open month range
/// `(lo, hi]`. `hi = None` means unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interval {
    Death,
    Life,
    None,
    /// Exactly zero months.
    ZeroMonths,
    Months { lo: u32, hi: Option<u32> },
}

impl Interval {
    pub fn contains(&self, p: RawPenalty) -> bool {
        match (self, p) {
            (Interval::Death, RawPenalty::Death)
            | (Interval::Life, RawPenalty::Life)
            | (Interval::None, RawPenalty::None) => true,
            (Interval::ZeroMonths, RawPenalty::Months(0)) => true,
            (Interval::Months { lo, hi }, RawPenalty::Months(m)) => {
                m > *lo && hi.map_or(true, |h| m <= h)
            }
            _ => false,
        }
    }
}

/// Ordered map from raw penalties to class ids `0..11`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBucketTable {
    classes: Vec<Vec<Interval>>,
}

pub const NUM_PENALTY_CLASSES: usize = 11;

impl Default for PenaltyBucketTable {
    /// Severity-ordered: death and life share class 0, no imprisonment is
    /// class 10.
    fn default() -> Self {
        let m = |lo, hi| Interval::Months { lo, hi };
        PenaltyBucketTable {
            classes: vec![
                vec![Interval::Death, Interval::Life],
                vec![m(120, None)],
                vec![m(84, Some(120))],
                vec![m(60, Some(84))],
                vec![m(36, Some(60))],
                vec![m(24, Some(36))],
                vec![m(12, Some(24))],
                vec![m(9, Some(12))],
                vec![m(6, Some(9))],
                vec![m(0, Some(6))],
                vec![Interval::None, Interval::ZeroMonths],
            ],
        }
    }
}

impl PenaltyBucketTable {
    /// Validates that the classes partition every possible raw penalty.
    pub fn new(classes: Vec<Vec<Interval>>) -> Result<Self> {
        if classes.len() != NUM_PENALTY_CLASSES {
            return Err(Error::Config(format!(
                "penalty table needs {NUM_PENALTY_CLASSES} classes, got {}",
                classes.len()
            )));
        }
        let table = PenaltyBucketTable { classes };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        let all: Vec<&Interval> = self.classes.iter().flatten().collect();
        for special in [
            RawPenalty::Death,
            RawPenalty::Life,
            RawPenalty::None,
            RawPenalty::Months(0),
        ] {
            let n = all.iter().filter(|i| i.contains(special)).count();
            if n != 1 {
                return Err(Error::Config(format!(
                    "{special:?} is covered by {n} penalty intervals"
                )));
            }
        }
        // Month ranges must tile (0, ∞) exactly.
        let mut ranges: Vec<(u32, Option<u32>)> = all
            .iter()
            .filter_map(|i| match i {
                Interval::Months { lo, hi } => Some((*lo, *hi)),
                _ => None,
            })
            .collect();
        ranges.sort_by_key(|r| r.0);
        let mut cursor = 0u32;
        for (k, (lo, hi)) in ranges.iter().enumerate() {
            if *lo != cursor {
                return Err(Error::Config(format!(
                    "penalty month ranges leave a gap or overlap at {cursor}"
                )));
            }
            match hi {
                Some(h) if h > lo => cursor = *h,
                Some(_) => return Err(Error::Config("empty month range".into())),
                None if k + 1 == ranges.len() => return Ok(()),
                None => return Err(Error::Config("unbounded range must be last".into())),
            }
        }
        Err(Error::Config("month ranges do not reach infinity".into()))
    }

    pub fn classes(&self) -> &[Vec<Interval>] {
        &self.classes
    }

    pub fn bucket(&self, p: RawPenalty) -> usize {
        self.classes
            .iter()
            .position(|c| c.iter().any(|i| i.contains(p)))
            .expect("validated table covers every penalty")
    }

    /// A raw penalty falling inside class `class`, used by the synthetic
    /// generator.
    pub fn representative(&self, class: usize) -> RawPenalty {
        let first = self.classes[class][0];
        match first {
            Interval::Death => RawPenalty::Death,
            Interval::Life => RawPenalty::Life,
            Interval::None => RawPenalty::None,
            Interval::ZeroMonths => RawPenalty::Months(0),
            Interval::Months { lo, hi } => RawPenalty::Months(hi.unwrap_or(lo + 60)),
        }
    }
}

pub fn bucket_penalty(p: RawPenalty, table: &PenaltyBucketTable) -> usize {
    table.bucket(p)
}

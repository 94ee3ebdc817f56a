use chrono::{DateTime, Datelike, NaiveDate, Timelike, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::statemach::StationStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeriodKind {
    All,
    YearMonth,
    Date,
    HourOfDay,
    IsoWeek,
}

impl PeriodKind {
    pub const ALL: [PeriodKind; 5] = [
        PeriodKind::All,
        PeriodKind::YearMonth,
        PeriodKind::Date,
        PeriodKind::HourOfDay,
        PeriodKind::IsoWeek,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PeriodKind::All => "all",
            PeriodKind::YearMonth => "year-month",
            PeriodKind::Date => "date",
            PeriodKind::HourOfDay => "hour-of-day",
            PeriodKind::IsoWeek => "iso-week",
        }
    }

    /// Local wall-clock period containing `ts`.
    pub fn key(self, ts: &DateTime<Utc>, tz: Tz) -> PeriodKey {
        self.key_local(&ts.with_timezone(&tz))
    }

    pub fn key_local(self, local: &DateTime<Tz>) -> PeriodKey {
        match self {
            PeriodKind::All => PeriodKey::All,
            PeriodKind::YearMonth => PeriodKey::YearMonth(local.year(), local.month()),
            PeriodKind::Date => PeriodKey::Date(local.date_naive()),
            PeriodKind::HourOfDay => PeriodKey::HourOfDay(local.hour()),
            PeriodKind::IsoWeek => {
                let w = local.iso_week();
                PeriodKey::IsoWeek(w.year(), w.week())
            }
        }
    }
}

impl fmt::Display for PeriodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Period label; ordering matches chronological order within one kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PeriodKey {
    All,
    YearMonth(i32, u32),
    Date(NaiveDate),
    HourOfDay(u32),
    IsoWeek(i32, u32),
}

impl PeriodKey {
    pub fn kind(&self) -> PeriodKind {
        match self {
            PeriodKey::All => PeriodKind::All,
            PeriodKey::YearMonth(..) => PeriodKind::YearMonth,
            PeriodKey::Date(_) => PeriodKind::Date,
            PeriodKey::HourOfDay(_) => PeriodKind::HourOfDay,
            PeriodKey::IsoWeek(..) => PeriodKind::IsoWeek,
        }
    }
}

impl fmt::Display for PeriodKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeriodKey::All => f.write_str("all"),
            PeriodKey::YearMonth(y, m) => write!(f, "{y:04}-{m:02}"),
            PeriodKey::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            PeriodKey::HourOfDay(h) => write!(f, "{h:02}"),
            PeriodKey::IsoWeek(y, w) => write!(f, "{y:04}-W{w:02}"),
        }
    }
}

/// Frame counts per state within one period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateTally {
    pub period: PeriodKey,
    /// Indexed by [`StationStatus::index`].
    pub counts: [u64; 5],
}

impl StateTally {
    pub fn new(period: PeriodKey) -> Self {
        StateTally { period, counts: [0; 5] }
    }

    pub fn period_kind(&self) -> PeriodKind {
        self.period.kind()
    }

    pub fn count(&self, s: StationStatus) -> u64 {
        self.counts[s.index()]
    }

    pub fn total_frames(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total_in_shift(&self) -> u64 {
        self.total_frames() - self.count(StationStatus::Excluded)
    }

    /// In-shift fractions in [`StationStatus::IN_SHIFT`] order; `None` without in-shift frames.
    pub fn shares(&self) -> Option<[f64; 4]> {
        let n = self.total_in_shift();
        if n == 0 {
            return None;
        }
        Some(StationStatus::IN_SHIFT.map(|s| self.count(s) as f64 / n as f64))
    }

    pub fn add(&mut self, s: StationStatus) {
        self.counts[s.index()] += 1;
    }

    pub fn merge(&mut self, other: &StateTally) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }
}

/// Groups a timeline by one period kind. Periods come back in chronological order.
pub fn tally(timeline: &[(DateTime<Utc>, StationStatus)], grouping: PeriodKind, tz: Tz) -> Vec<StateTally> {
    let mut acc = TallyAccumulator::with_kinds(tz, &[grouping]);
    for (ts, s) in timeline {
        acc.push(ts, *s);
    }
    acc.into_tallies()
}

/// Single-pass tallies for several period kinds at once.
#[derive(Debug, Clone)]
pub struct TallyAccumulator {
    tz: Tz,
    kinds: Vec<PeriodKind>,
    periods: BTreeMap<PeriodKey, [u64; 5]>,
}

impl TallyAccumulator {
    pub fn new(tz: Tz) -> Self {
        Self::with_kinds(tz, &PeriodKind::ALL)
    }

    pub fn with_kinds(tz: Tz, kinds: &[PeriodKind]) -> Self {
        TallyAccumulator {
            tz,
            kinds: kinds.to_vec(),
            periods: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, ts: &DateTime<Utc>, status: StationStatus) {
        let local = ts.with_timezone(&self.tz);
        for &k in &self.kinds {
            self.periods.entry(k.key_local(&local)).or_insert([0; 5])[status.index()] += 1;
        }
    }

    pub fn merge(&mut self, other: &TallyAccumulator) {
        for (k, counts) in &other.periods {
            let mine = self.periods.entry(*k).or_insert([0; 5]);
            for (a, b) in mine.iter_mut().zip(counts) {
                *a += b;
            }
        }
    }

    pub fn into_tallies(self) -> Vec<StateTally> {
        self.periods
            .into_iter()
            .map(|(period, counts)| StateTally { period, counts })
            .collect()
    }

    pub fn tallies(&self) -> Vec<StateTally> {
        self.clone().into_tallies()
    }
}

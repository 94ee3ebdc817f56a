use chrono::Datelike;
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::cycles::CycleRecord;

/// Five-number summary in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n: usize,
}

/// Linear-interpolation quantile (`(n-1)p` rank) of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn five_number_summary(values: &[f64]) -> Option<BoxStats> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(BoxStats {
        min: *v.first()?,
        q1: quantile(&v, 0.25)?,
        median: quantile(&v, 0.5)?,
        q3: quantile(&v, 0.75)?,
        max: *v.last()?,
        n: v.len(),
    })
}

/// Cycle-time box statistics keyed by the local ISO week `(year, week)` of each cycle's start.
/// Weeks without cycles are absent.
pub fn weekly_box_stats(cycles: &[CycleRecord], tz: Tz) -> BTreeMap<(i32, u32), BoxStats> {
    let mut weeks: BTreeMap<(i32, u32), Vec<f64>> = BTreeMap::new();
    for c in cycles {
        let w = c.start.with_timezone(&tz).iso_week();
        weeks.entry((w.year(), w.week())).or_default().push(c.duration_minutes());
    }
    weeks
        .into_iter()
        .filter_map(|(k, v)| five_number_summary(&v).map(|s| (k, s)))
        .collect()
}

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, Utc};
use chrono_tz::Tz;

use super::{Interval, NoiseModel, ScenarioScript};
use crate::ingest::ShiftCalendar;

/// Frame-level recipe for the bundled station scenario.
///
/// Every workday has the same in-shift frame budget per state. The first block
/// opens with a worker waiting for material (downtime), the last block closes
/// with an empty station (idle), and each block has one worker absence in its
/// middle while chairs keep flowing (unproductive). Chairs tile all remaining
/// chair time; their length depends on the parity of the ISO week.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureLayout {
    pub station_id: String,
    pub timezone: String,
    /// A Monday.
    pub start_date: NaiveDate,
    pub weeks: u32,
    pub frame_rate: f64,
    /// Frames at the start of the first block with a worker and no chair.
    pub downtime_frames: usize,
    /// Frames at the end of the last block with nothing present.
    pub idle_frames: usize,
    /// Worker absence per block, centered in the block.
    pub absence_frames: Vec<usize>,
    /// A chair too short to count as a cycle, at the start of the second block.
    pub short_chair_frames: usize,
    pub odd_week_chair_frames: usize,
    pub even_week_chair_frames: usize,
    /// Tiling leftovers shorter than this are merged into the previous chair.
    pub min_remainder_frames: usize,
}

impl Default for FixtureLayout {
    fn default() -> Self {
        FixtureLayout {
            station_id: "C".into(),
            timezone: "America/Toronto".into(),
            start_date: NaiveDate::from_ymd_opt(2023, 7, 3).expect("valid date"),
            weeks: 26,
            frame_rate: 0.3,
            downtime_frames: 78,
            idle_frames: 39,
            absence_frames: vec![546, 546, 546, 547],
            short_chair_frames: 28,
            // 90 and 135 frame spacings at 0.3 fps: 300 s and 450 s.
            odd_week_chair_frames: 91,
            even_week_chair_frames: 136,
            min_remainder_frames: 37,
        }
    }
}

/// Per-frame content of one block: `(worker, chair number within the block)`.
type BlockPlan = Vec<(bool, Option<usize>)>;

impl FixtureLayout {
    pub fn calendar(&self) -> ShiftCalendar {
        ShiftCalendar::single_morning_shift(&self.timezone)
    }

    fn chair_frames(&self, day: NaiveDate) -> usize {
        if day.iso_week().week() % 2 == 1 {
            self.odd_week_chair_frames
        } else {
            self.even_week_chair_frames
        }
    }

    /// Chair lengths tiling `len` frames.
    fn tile(&self, len: usize, n: usize) -> Vec<usize> {
        let (q, r) = (len / n, len % n);
        let mut out = vec![n; q];
        if r >= self.min_remainder_frames || q == 0 {
            if r > 0 {
                out.push(r);
            }
        } else if let Some(last) = out.last_mut() {
            *last += r;
        }
        out
    }

    fn plan_block(&self, block: usize, blocks: usize, len: usize, n: usize) -> BlockPlan {
        let mut plan: BlockPlan = vec![(true, None); len];
        let lead = if block == 0 { self.downtime_frames } else { 0 };
        let tail = if block + 1 == blocks { self.idle_frames } else { 0 };
        for slot in &mut plan[len - tail..] {
            slot.0 = false;
        }
        let mut chairs = Vec::new();
        if block == 1 {
            chairs.push(self.short_chair_frames);
        }
        let short: usize = chairs.iter().sum();
        chairs.extend(self.tile(len - lead - tail - short, n));
        let mut at = lead;
        for (i, c) in chairs.into_iter().enumerate() {
            for slot in &mut plan[at..at + c] {
                slot.1 = Some(i);
            }
            at += c;
        }
        let absence = self.absence_frames[block % self.absence_frames.len()];
        let from = (len - absence) / 2;
        for slot in &mut plan[from..from + absence] {
            slot.0 = false;
        }
        plan
    }

    pub fn script(&self) -> ScenarioScript {
        let calendar = self.calendar();
        let tz: Tz = self.timezone.parse().expect("fixture timezone is valid");
        let end_date = self.start_date + Duration::days(7 * self.weeks as i64);

        let mut bounds = vec![calendar.shift_start];
        for &(a, b) in &calendar.breaks {
            bounds.push(a);
            bounds.push(b);
        }
        bounds.push(calendar.shift_end);
        let blocks: Vec<(NaiveTime, NaiveTime)> = bounds.chunks(2).map(|w| (w[0], w[1])).collect();

        let period_ms = 1000.0 / self.frame_rate;
        let mut intervals = Vec::new();
        let mut chair_serial = 0usize;
        let mut day = self.start_date;
        while day < end_date {
            let local = |t: NaiveTime| -> DateTime<Utc> {
                day.and_time(t)
                    .and_local_timezone(tz)
                    .earliest()
                    .expect("shift times exist on every fixture day")
                    .with_timezone(&Utc)
            };
            let day_start = local(calendar.shift_start);
            let ts = |k: i64| day_start + Duration::milliseconds((k as f64 * period_ms).round() as i64);
            let n = self.chair_frames(day);
            for (bi, &(a, b)) in blocks.iter().enumerate() {
                let (a, b) = (local(a), local(b));
                let mut k0 = 0i64;
                while ts(k0) < a {
                    k0 += 1;
                }
                let mut k1 = k0;
                while ts(k1) < b {
                    k1 += 1;
                }
                let plan = self.plan_block(bi, blocks.len(), (k1 - k0) as usize, n);
                let mut i = 0;
                while i < plan.len() {
                    let mut j = i + 1;
                    while j < plan.len() && plan[j] == plan[i] {
                        j += 1;
                    }
                    let (worker, chair) = plan[i];
                    if worker || chair.is_some() {
                        intervals.push(Interval {
                            start: ts(k0 + i as i64),
                            end: ts(k0 + j as i64).min(b),
                            worker,
                            chair: chair.map(|c| format!("ch{:06}", chair_serial + c)),
                        });
                    }
                    i = j;
                }
                chair_serial += plan.iter().filter_map(|p| p.1).max().map_or(0, |m| m + 1);
            }
            day = day.succ_opt().expect("date in range");
        }

        ScenarioScript {
            station_id: self.station_id.clone(),
            frame_rate: self.frame_rate,
            start_date: self.start_date,
            end_date,
            include_breaks: true,
            calendar,
            noise: NoiseModel::default(),
            intervals,
        }
    }
}

/// The bundled 26-week single-station scenario.
///
/// Per workday: 5528 productive, 2185 unproductive, 78 downtime and 39 idle
/// in-shift frames (70.6 / 27.9 / 1.0 / 0.5 percent). Chair cycles last 5
/// minutes in odd ISO weeks and 7.5 minutes in even ones, and every day has one
/// 90-second chair visit.
pub fn reference_fixture() -> ScenarioScript {
    FixtureLayout::default().script()
}

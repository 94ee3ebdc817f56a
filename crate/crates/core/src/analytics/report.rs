use chrono_tz::Tz;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::cycles::{filter_cycles, CycleRecord};
use super::stats::{weekly_box_stats, BoxStats};
use super::tally::{PeriodKind, StateTally};
use super::AnalyticsError;
use crate::ingest::format_ts;
use crate::statemach::StationStatus;

/// Rounds in-shift counts to one-decimal percentages that sum to exactly 100.0.
///
/// Largest-remainder apportionment over tenths of a percent; ties go to the
/// earlier state. Returned values are tenths, so `706` means 70.6%.
pub fn share_percentages(counts: [u64; 4]) -> Option<[u64; 4]> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let total = total as u128;
    let mut tenths = [0u64; 4];
    let mut rem = [0u128; 4];
    for i in 0..4 {
        let scaled = counts[i] as u128 * 1000;
        tenths[i] = (scaled / total) as u64;
        rem[i] = scaled % total;
    }
    let short = 1000 - tenths.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(a.cmp(&b)));
    for &i in order.iter().take(short as usize) {
        tenths[i] += 1;
    }
    Some(tenths)
}

fn tenths_str(t: u64) -> String {
    format!("{}.{}", t / 10, t % 10)
}

/// Everything reported for one station.
#[derive(Debug, Clone, PartialEq)]
pub struct StationReport {
    pub station_id: String,
    /// Ordered by period kind, then period.
    pub tallies: Vec<StateTally>,
    /// Cycles that survived the minimum-duration filter.
    pub cycles: Vec<CycleRecord>,
    pub weekly: BTreeMap<(i32, u32), BoxStats>,
}

impl StationReport {
    pub fn new(
        station_id: impl Into<String>,
        mut tallies: Vec<StateTally>,
        cycles: &[CycleRecord],
        min_cycle_seconds: f64,
        tz: Tz,
    ) -> Self {
        tallies.sort_by_key(|t| (t.period_kind(), t.period));
        let cycles = filter_cycles(cycles, min_cycle_seconds);
        let weekly = weekly_box_stats(&cycles, tz);
        StationReport {
            station_id: station_id.into(),
            tallies,
            cycles,
            weekly,
        }
    }

    pub fn tally(&self, kind: PeriodKind) -> impl Iterator<Item = &StateTally> {
        self.tallies.iter().filter(move |t| t.period_kind() == kind)
    }

    /// The whole-run tally, if any frame was seen.
    pub fn overall(&self) -> Option<&StateTally> {
        self.tally(PeriodKind::All).next()
    }
}

/// Paths written by [`ReportBundle::write_to`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub shares: PathBuf,
    pub cycles: PathBuf,
    pub weekly_box: PathBuf,
    pub report_json: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportBundle {
    /// Sorted by station id.
    pub stations: Vec<StationReport>,
}

#[derive(Serialize)]
struct JsonShare<'a> {
    period_kind: PeriodKind,
    period: String,
    frames: u64,
    in_shift_frames: u64,
    counts: BTreeMap<&'a str, u64>,
    /// Percent of in-shift frames, unrounded.
    pct: Option<BTreeMap<&'a str, f64>>,
}

#[derive(Serialize)]
struct JsonWeek {
    iso_week: String,
    #[serde(flatten)]
    stats: BoxStats,
}

#[derive(Serialize)]
struct JsonStation<'a> {
    station: &'a str,
    shares: Vec<JsonShare<'a>>,
    cycles: &'a [CycleRecord],
    weekly_box: Vec<JsonWeek>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    stations: Vec<JsonStation<'a>>,
}

fn iso_week_label((y, w): (i32, u32)) -> String {
    format!("{y:04}-W{w:02}")
}

impl ReportBundle {
    pub fn new(mut stations: Vec<StationReport>) -> Self {
        stations.sort_by(|a, b| a.station_id.cmp(&b.station_id));
        ReportBundle { stations }
    }

    pub fn shares_csv(&self) -> Result<Vec<u8>, AnalyticsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "station",
            "period_kind",
            "period",
            "productive_pct",
            "unproductive_pct",
            "downtime_pct",
            "idle_pct",
            "frames",
        ])?;
        for s in &self.stations {
            for t in &s.tallies {
                let counts = StationStatus::IN_SHIFT.map(|st| t.count(st));
                let pct = match share_percentages(counts) {
                    Some(p) => p.map(tenths_str),
                    None => Default::default(),
                };
                let mut row = vec![s.station_id.clone(), t.period_kind().to_string(), t.period.to_string()];
                row.extend(pct);
                row.push(t.total_frames().to_string());
                w.write_record(&row)?;
            }
        }
        w.into_inner().map_err(|e| AnalyticsError::IoFailure(e.into_error()))
    }

    pub fn cycles_csv(&self) -> Result<Vec<u8>, AnalyticsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["station", "track_id", "start_ts", "end_ts", "duration_s"])?;
        for s in &self.stations {
            for c in &s.cycles {
                w.write_record([
                    c.station_id.clone(),
                    c.track_id.to_string(),
                    format_ts(&c.start),
                    format_ts(&c.end),
                    c.duration_seconds.to_string(),
                ])?;
            }
        }
        w.into_inner().map_err(|e| AnalyticsError::IoFailure(e.into_error()))
    }

    pub fn weekly_box_csv(&self) -> Result<Vec<u8>, AnalyticsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "station", "iso_week", "count", "min_min", "q1_min", "median_min", "q3_min", "max_min",
        ])?;
        for s in &self.stations {
            for (&week, b) in &s.weekly {
                w.write_record([
                    s.station_id.clone(),
                    iso_week_label(week),
                    b.n.to_string(),
                    b.min.to_string(),
                    b.q1.to_string(),
                    b.median.to_string(),
                    b.q3.to_string(),
                    b.max.to_string(),
                ])?;
            }
        }
        w.into_inner().map_err(|e| AnalyticsError::IoFailure(e.into_error()))
    }

    pub fn report_json(&self) -> Result<Vec<u8>, AnalyticsError> {
        let stations = self
            .stations
            .iter()
            .map(|s| JsonStation {
                station: &s.station_id,
                shares: s
                    .tallies
                    .iter()
                    .map(|t| {
                        let n = t.total_in_shift();
                        JsonShare {
                            period_kind: t.period_kind(),
                            period: t.period.to_string(),
                            frames: t.total_frames(),
                            in_shift_frames: n,
                            counts: StationStatus::ALL.iter().map(|&st| (st.as_str(), t.count(st))).collect(),
                            pct: (n > 0).then(|| {
                                StationStatus::IN_SHIFT
                                    .iter()
                                    .map(|&st| (st.as_str(), 100.0 * t.count(st) as f64 / n as f64))
                                    .collect()
                            }),
                        }
                    })
                    .collect(),
                cycles: &s.cycles,
                weekly_box: s
                    .weekly
                    .iter()
                    .map(|(&w, &stats)| JsonWeek { iso_week: iso_week_label(w), stats })
                    .collect(),
            })
            .collect();
        let mut out = serde_json::to_vec_pretty(&JsonReport { stations })?;
        out.push(b'\n');
        Ok(out)
    }

    /// Writes `shares.csv`, `cycles.csv`, `weekly_box.csv` and `report.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<ReportFiles, AnalyticsError> {
        fs::create_dir_all(dir)?;
        let files = ReportFiles {
            shares: dir.join("shares.csv"),
            cycles: dir.join("cycles.csv"),
            weekly_box: dir.join("weekly_box.csv"),
            report_json: dir.join("report.json"),
        };
        fs::write(&files.shares, self.shares_csv()?)?;
        fs::write(&files.cycles, self.cycles_csv()?)?;
        fs::write(&files.weekly_box, self.weekly_box_csv()?)?;
        fs::write(&files.report_json, self.report_json()?)?;
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::tally::{tally, PeriodKey};
    use chrono::{DateTime, TimeZone, Utc};
    use proptest::prelude::*;

    #[test]
    fn fixture_shape_sums_to_hundred() {
        // 5528 / 2185 / 78 / 39 of 7830 frames.
        let p = share_percentages([5528, 2185, 78, 39]).unwrap();
        assert_eq!(p, [706, 279, 10, 5]);
        assert_eq!(p.iter().sum::<u64>(), 1000);
    }

    #[test]
    fn thirds_round_to_hundred() {
        let p = share_percentages([1, 1, 1, 0]).unwrap();
        assert_eq!(p, [334, 333, 333, 0]);
        assert!(share_percentages([0; 4]).is_none());
    }

    fn station(tl: &[(DateTime<Utc>, StationStatus)], cycles: &[CycleRecord]) -> StationReport {
        let mut tallies = Vec::new();
        for k in PeriodKind::ALL {
            tallies.extend(tally(tl, k, Tz::UTC));
        }
        StationReport::new("C", tallies, cycles, 120.0, Tz::UTC)
    }

    #[test]
    fn daily_rows_ascending_and_empty_weeks_omitted() {
        let d1 = Utc.with_ymd_and_hms(2023, 7, 4, 9, 0, 0).unwrap();
        let d2 = Utc.with_ymd_and_hms(2023, 7, 3, 9, 0, 0).unwrap();
        let mut tl = vec![(d2, StationStatus::Idle), (d1, StationStatus::Productive)];
        tl.sort_by_key(|x| x.0);
        let r = station(&tl, &[]);
        let days: Vec<_> = r.tally(PeriodKind::Date).map(|t| t.period).collect();
        assert_eq!(days.len(), 2);
        assert!(days[0] < days[1]);
        assert!(matches!(days[0], PeriodKey::Date(_)));
        let bundle = ReportBundle::new(vec![r]);
        let weekly = String::from_utf8(bundle.weekly_box_csv().unwrap()).unwrap();
        assert_eq!(weekly.lines().count(), 1);
    }

    #[test]
    fn csv_layout() {
        let t0 = Utc.with_ymd_and_hms(2023, 10, 16, 13, 0, 0).unwrap();
        let tl: Vec<_> = (0..4)
            .map(|i| (t0 + chrono::Duration::seconds(i), if i == 0 { StationStatus::Excluded } else { StationStatus::Productive }))
            .collect();
        let cycles = [
            CycleRecord::new("C", 3, t0, t0 + chrono::Duration::seconds(300)),
            CycleRecord::new("C", 4, t0, t0 + chrono::Duration::seconds(90)),
        ];
        let bundle = ReportBundle::new(vec![station(&tl, &cycles)]);
        let shares = String::from_utf8(bundle.shares_csv().unwrap()).unwrap();
        assert_eq!(
            shares.lines().nth(1).unwrap(),
            "C,all,all,100.0,0.0,0.0,0.0,4"
        );
        let cyc = String::from_utf8(bundle.cycles_csv().unwrap()).unwrap();
        assert_eq!(
            cyc.lines().collect::<Vec<_>>(),
            vec![
                "station,track_id,start_ts,end_ts,duration_s",
                "C,3,2023-10-16T13:00:00.000Z,2023-10-16T13:05:00.000Z,300"
            ]
        );
        let weekly = String::from_utf8(bundle.weekly_box_csv().unwrap()).unwrap();
        assert_eq!(weekly.lines().nth(1).unwrap(), "C,2023-W42,1,5,5,5,5,5");
        let json: serde_json::Value = serde_json::from_slice(&bundle.report_json().unwrap()).unwrap();
        assert_eq!(json["stations"][0]["shares"][0]["pct"]["productive"], 100.0);
        assert_eq!(json["stations"][0]["weekly_box"][0]["median"], 5.0);
    }

    #[test]
    fn all_excluded_period_has_empty_cells() {
        let t0 = Utc.with_ymd_and_hms(2023, 7, 3, 2, 0, 0).unwrap();
        let bundle = ReportBundle::new(vec![station(&[(t0, StationStatus::Excluded)], &[])]);
        let shares = String::from_utf8(bundle.shares_csv().unwrap()).unwrap();
        assert_eq!(shares.lines().nth(1).unwrap(), "C,all,all,,,,,1");
    }

    proptest! {
        #[test]
        fn rounded_shares_close_and_exact_sum(counts in prop::array::uniform4(0u64..1_000_000)) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let p = share_percentages(counts).unwrap();
            prop_assert_eq!(p.iter().sum::<u64>(), 1000);
            let total: u64 = counts.iter().sum();
            for i in 0..4 {
                let exact = counts[i] as f64 * 1000.0 / total as f64;
                prop_assert!((p[i] as f64 - exact).abs() < 1.0);
            }
        }
    }
}

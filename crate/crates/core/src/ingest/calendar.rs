use chrono::{DateTime, Datelike, NaiveTime, Timelike, Utc, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::IngestError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalendarError {
    #[error("shift_start {start} must precede shift_end {end}")]
    EmptyShift { start: NaiveTime, end: NaiveTime },
    #[error("break {start}-{end} is empty or outside the shift")]
    BadBreak { start: NaiveTime, end: NaiveTime },
    #[error("breaks {0} and {1} overlap")]
    OverlappingBreaks(usize, usize),
    #[error("calendar times must be whole seconds: {0}")]
    SubSecond(NaiveTime),
}

/// Where an instant falls relative to the working calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    InShift,
    Break,
    OffShift,
}

/// Daily shift window with breaks, evaluated in local wall-clock time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftCalendar {
    pub shift_start: NaiveTime,
    pub shift_end: NaiveTime,
    #[serde(default)]
    pub breaks: Vec<(NaiveTime, NaiveTime)>,
    #[serde(default = "all_weekdays")]
    pub workdays: Vec<Weekday>,
    pub timezone: String,
}

fn all_weekdays() -> Vec<Weekday> {
    use Weekday::*;
    vec![Mon, Tue, Wed, Thu, Fri, Sat, Sun]
}

fn hms(h: u32, m: u32) -> NaiveTime {
    NaiveTime::from_hms_opt(h, m, 0).expect("valid time")
}

impl ShiftCalendar {
    /// One 8.5 h morning shift with three 25-minute breaks, every day.
    pub fn single_morning_shift(timezone: &str) -> Self {
        ShiftCalendar {
            shift_start: hms(7, 0),
            shift_end: hms(15, 30),
            breaks: vec![
                (hms(9, 0), hms(9, 25)),
                (hms(11, 30), hms(11, 55)),
                (hms(13, 30), hms(13, 55)),
            ],
            workdays: all_weekdays(),
            timezone: timezone.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), CalendarError> {
        let mut times = vec![self.shift_start, self.shift_end];
        times.extend(self.breaks.iter().flat_map(|&(a, b)| [a, b]));
        if let Some(t) = times.into_iter().find(|t| t.nanosecond() != 0) {
            return Err(CalendarError::SubSecond(t));
        }
        if self.shift_start >= self.shift_end {
            return Err(CalendarError::EmptyShift {
                start: self.shift_start,
                end: self.shift_end,
            });
        }
        for &(start, end) in &self.breaks {
            if start >= end || start < self.shift_start || end > self.shift_end {
                return Err(CalendarError::BadBreak { start, end });
            }
        }
        for i in 0..self.breaks.len() {
            for j in i + 1..self.breaks.len() {
                let (a0, a1) = self.breaks[i];
                let (b0, b1) = self.breaks[j];
                if a0 < b1 && b0 < a1 {
                    return Err(CalendarError::OverlappingBreaks(i, j));
                }
            }
        }
        Ok(())
    }

    /// Validates the calendar and looks up its timezone.
    pub fn resolve(&self) -> Result<ResolvedCalendar, IngestError> {
        self.validate()?;
        let tz: Tz = self
            .timezone
            .parse()
            .map_err(|_| IngestError::UnknownTimezone(self.timezone.clone()))?;
        let mut workdays = [false; 7];
        for d in &self.workdays {
            workdays[d.num_days_from_monday() as usize] = true;
        }
        let secs = |t: NaiveTime| t.num_seconds_from_midnight();
        Ok(ResolvedCalendar {
            tz,
            shift: (secs(self.shift_start), secs(self.shift_end)),
            breaks: self.breaks.iter().map(|&(a, b)| (secs(a), secs(b))).collect(),
            workdays,
        })
    }

    pub fn shift_seconds(&self) -> i64 {
        (self.shift_end - self.shift_start).num_seconds()
    }

    pub fn break_seconds(&self) -> i64 {
        self.breaks.iter().map(|&(a, b)| (b - a).num_seconds()).sum()
    }

    /// In-shift seconds on one workday.
    pub fn working_seconds(&self) -> i64 {
        self.shift_seconds() - self.break_seconds()
    }
}

/// Calendar with a parsed timezone, ready for per-frame lookups.
#[derive(Debug, Clone)]
pub struct ResolvedCalendar {
    tz: Tz,
    shift: (u32, u32),
    breaks: Vec<(u32, u32)>,
    workdays: [bool; 7],
}

impl ResolvedCalendar {
    pub fn tz(&self) -> Tz {
        self.tz
    }

    pub fn is_workday(&self, day: Weekday) -> bool {
        self.workdays[day.num_days_from_monday() as usize]
    }

    /// Classifies an instant; all intervals are half-open `[start, end)`.
    pub fn scope_of(&self, ts: &DateTime<Utc>) -> Scope {
        let local = ts.with_timezone(&self.tz);
        if !self.is_workday(local.weekday()) {
            return Scope::OffShift;
        }
        let t = local.num_seconds_from_midnight();
        if t < self.shift.0 || t >= self.shift.1 {
            Scope::OffShift
        } else if self.breaks.iter().any(|&(a, b)| t >= a && t < b) {
            Scope::Break
        } else {
            Scope::InShift
        }
    }
}

/// One-shot classification; resolve the calendar once instead when classifying many instants.
pub fn scope_of(ts: &DateTime<Utc>, cal: &ShiftCalendar) -> Result<Scope, IngestError> {
    Ok(cal.resolve()?.scope_of(ts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDate, TimeZone};

    fn local(cal: &ResolvedCalendar, y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> DateTime<Utc> {
        cal.tz()
            .from_local_datetime(&NaiveDate::from_ymd_opt(y, mo, d).unwrap().and_hms_opt(h, mi, s).unwrap())
            .single()
            .unwrap()
            .with_timezone(&Utc)
    }

    fn toronto() -> ShiftCalendar {
        ShiftCalendar::single_morning_shift("America/Toronto")
    }

    #[test]
    fn break_offshift_and_shift_start() {
        let mut cal = toronto();
        cal.breaks[1] = (hms(12, 0), hms(12, 25));
        let r = cal.resolve().unwrap();
        assert_eq!(r.scope_of(&local(&r, 2023, 7, 5, 12, 10, 0)), Scope::Break);
        assert_eq!(r.scope_of(&local(&r, 2023, 7, 5, 3, 0, 0)), Scope::OffShift);
        assert_eq!(r.scope_of(&local(&r, 2023, 7, 5, 7, 0, 0)), Scope::InShift);
        assert_eq!(r.scope_of(&local(&r, 2023, 7, 5, 15, 30, 0)), Scope::OffShift);
        assert_eq!(r.scope_of(&local(&r, 2023, 7, 5, 12, 25, 0)), Scope::InShift);
    }

    #[test]
    fn one_shot_scope_of_matches_resolved() {
        let cal = toronto();
        let ts = Utc.with_ymd_and_hms(2023, 7, 5, 16, 10, 0).unwrap();
        assert_eq!(scope_of(&ts, &cal).unwrap(), cal.resolve().unwrap().scope_of(&ts));
    }

    #[test]
    fn non_workday_is_off_shift() {
        let mut cal = toronto();
        cal.workdays = vec![Weekday::Mon];
        let r = cal.resolve().unwrap();
        // 2023-07-05 is a Wednesday.
        assert_eq!(r.scope_of(&local(&r, 2023, 7, 5, 10, 0, 0)), Scope::OffShift);
        assert_eq!(r.scope_of(&local(&r, 2023, 7, 3, 10, 0, 0)), Scope::InShift);
    }

    #[test]
    fn unknown_timezone() {
        let cal = ShiftCalendar::single_morning_shift("Mars/Olympus_Mons");
        assert!(matches!(cal.resolve(), Err(IngestError::UnknownTimezone(_))));
    }

    #[test]
    fn validation_rules() {
        let mut cal = toronto();
        cal.breaks.push((hms(9, 10), hms(9, 40)));
        assert_eq!(cal.validate(), Err(CalendarError::OverlappingBreaks(0, 3)));
        let mut cal = toronto();
        cal.breaks.push((hms(16, 0), hms(16, 10)));
        assert!(matches!(cal.validate(), Err(CalendarError::BadBreak { .. })));
        let mut cal = toronto();
        cal.shift_end = cal.shift_start;
        assert!(matches!(cal.validate(), Err(CalendarError::EmptyShift { .. })));
        let mut cal = toronto();
        cal.shift_start = NaiveTime::from_hms_milli_opt(7, 0, 0, 500).unwrap();
        assert!(matches!(cal.validate(), Err(CalendarError::SubSecond(_))));
    }

    #[test]
    fn in_shift_seconds_per_workday() {
        let cal = toronto();
        assert_eq!(cal.working_seconds(), 8 * 3600 + 1800 - 75 * 60);
        // Sweep one local day second by second; includes the DST change day in November.
        for (y, m, d) in [(2023, 7, 5), (2023, 11, 5), (2023, 3, 12)] {
            let r = cal.resolve().unwrap();
            let start = local(&r, y, m, d, 4, 0, 0);
            let in_shift = (0..14 * 3600)
                .filter(|s| r.scope_of(&(start + chrono::Duration::seconds(*s))) == Scope::InShift)
                .count() as i64;
            assert_eq!(in_shift, cal.working_seconds(), "{y}-{m}-{d}");
        }
    }

    #[test]
    fn calendar_toml_round_trip() {
        let text = r#"
            shift_start = "07:00:00"
            shift_end = "15:30:00"
            breaks = [["09:00:00", "09:25:00"]]
            workdays = ["Mon", "Tue"]
            timezone = "UTC"
        "#;
        let cal: ShiftCalendar = toml::from_str(text).unwrap();
        assert_eq!(cal.workdays, vec![Weekday::Mon, Weekday::Tue]);
        let back: ShiftCalendar = toml::from_str(&toml::to_string(&cal).unwrap()).unwrap();
        assert_eq!(back, cal);
    }
}

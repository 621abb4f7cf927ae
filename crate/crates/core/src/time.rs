//! Calendar helpers shared across stages.
//!
//! All timestamps are wall-clock building time with no DST arithmetic. An
//! hour index `h` denotes the bin `[h:00, h+1:00)`.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

/// Canonical timestamp format used by every CSV the crate reads or writes.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Five-minute slots in one day.
pub const SLOTS_PER_DAY: usize = 288;

/// Five-minute slots in one hour.
pub const SLOTS_PER_HOUR: usize = 12;

/// Five-minute slot of the day (0..288) the timestamp falls into.
pub fn slot_of_day(ts: &NaiveDateTime) -> usize {
    (ts.hour() as usize * 60 + ts.minute() as usize) / 5
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// Timestamp of hour `hour` on `date`.
pub fn hour_start(date: NaiveDate, hour: usize) -> NaiveDateTime {
    date.and_hms_opt(hour as u32, 0, 0).expect("hour index within a day")
}

/// Index of the weekday starting at Monday = 0.
pub fn weekday_index(date: NaiveDate) -> usize {
    date.weekday().num_days_from_monday() as usize
}

/// The two analysis periods separated by the semester split date.
///
/// Dates strictly before the split belong to [`Semester::Summer`]; the split
/// date itself opens [`Semester::Fall`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semester {
    Summer,
    Fall,
}

impl Semester {
    pub const ALL: [Semester; 2] = [Semester::Summer, Semester::Fall];

    pub fn of(date: NaiveDate, split: NaiveDate) -> Self {
        if date < split {
            Semester::Summer
        } else {
            Semester::Fall
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Semester::Summer => "summer",
            Semester::Fall => "fall",
        }
    }

    /// Single-letter code used in profile labels.
    pub fn code(self) -> char {
        match self {
            Semester::Summer => 'S',
            Semester::Fall => 'F',
        }
    }
}

impl fmt::Display for Semester {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Semester {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "summer" => Ok(Semester::Summer),
            "fall" => Ok(Semester::Fall),
            other => Err(format!("unknown semester `{other}`")),
        }
    }
}

/// Weekday groups used for per-building schedule tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DayGroup {
    #[serde(rename = "mon-thu")]
    MonThu,
    #[serde(rename = "fri")]
    Fri,
    #[serde(rename = "sat-sun")]
    SatSun,
}

impl DayGroup {
    pub const ALL: [DayGroup; 3] = [DayGroup::MonThu, DayGroup::Fri, DayGroup::SatSun];

    pub fn of(date: NaiveDate) -> Self {
        match date.weekday() {
            Weekday::Fri => DayGroup::Fri,
            Weekday::Sat | Weekday::Sun => DayGroup::SatSun,
            _ => DayGroup::MonThu,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DayGroup::MonThu => "mon-thu",
            DayGroup::Fri => "fri",
            DayGroup::SatSun => "sat-sun",
        }
    }
}

impl fmt::Display for DayGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DayGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mon-thu" => Ok(DayGroup::MonThu),
            "fri" => Ok(DayGroup::Fri),
            "sat-sun" => Ok(DayGroup::SatSun),
            other => Err(format!("unknown day group `{other}`")),
        }
    }
}

/// Formats an hour bin as `HH:00`; `None` renders as `-`.
pub fn format_hour(hour: Option<u8>) -> String {
    match hour {
        Some(h) => format!("{h:02}:00"),
        None => "-".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn split_date_opens_the_later_semester() {
        let split = date("2019-08-23");
        assert_eq!(Semester::of(date("2019-08-22"), split), Semester::Summer);
        assert_eq!(Semester::of(split, split), Semester::Fall);
    }

    #[test]
    fn day_groups() {
        // 2019-07-08 is a Monday
        let groups: Vec<_> = (0..7).map(|d| DayGroup::of(date("2019-07-08") + chrono::Days::new(d))).collect();
        use DayGroup::*;
        assert_eq!(groups, vec![MonThu, MonThu, MonThu, MonThu, Fri, SatSun, SatSun]);
    }

    #[test]
    fn slots() {
        let ts = NaiveDateTime::parse_from_str("2019-07-09 08:07:00", TIMESTAMP_FORMAT).unwrap();
        assert_eq!(slot_of_day(&ts), 97);
        assert_eq!(format_hour(Some(8)), "08:00");
        assert_eq!(format_hour(None), "-");
    }
}

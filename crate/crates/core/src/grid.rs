//! Discrete time: minute-resolution timestamps and the equal-slice period grid
//! every market instance is laid out on.

use std::fmt;
use std::ops::{Add, Sub};

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const MINUTES_PER_HOUR: i64 = 60;

/// UTC instant with one-minute granularity, stored as minutes since the Unix epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_minutes(minutes: i64) -> Self {
        Timestamp(minutes)
    }

    pub const fn from_hours(hours: i64) -> Self {
        Timestamp(hours * MINUTES_PER_HOUR)
    }

    pub const fn minutes(self) -> i64 {
        self.0
    }

    pub fn hours(self) -> f64 {
        self.0 as f64 / MINUTES_PER_HOUR as f64
    }

    pub fn is_aligned(self, resolution_min: i64) -> bool {
        self.0.rem_euclid(resolution_min) == 0
    }

    pub fn floor_to(self, step_min: i64) -> Self {
        Timestamp(self.0.div_euclid(step_min) * step_min)
    }

    /// Minute of the day in UTC, 0..1440.
    pub fn minute_of_day(self) -> i64 {
        self.0.rem_euclid(24 * MINUTES_PER_HOUR)
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_opt(self.0 * 60, 0)
            .single()
            .expect("minute timestamps are always representable")
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Result<Self> {
        let secs = dt.timestamp();
        if secs.rem_euclid(60) != 0 || dt.timestamp_subsec_nanos() != 0 {
            return Err(Error::invalid(
                "timestamp",
                format!("{dt} has sub-minute precision"),
            ));
        }
        Ok(Timestamp(secs.div_euclid(60)))
    }

    /// Parses RFC 3339 (`2021-12-17T00:00:00Z`) or a naive `YYYY-MM-DD HH:MM[:SS]`,
    /// which is taken to be UTC.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
            return Self::from_datetime(dt.with_timezone(&Utc));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
            if let Ok(naive) = NaiveDateTime::parse_from_str(text, fmt) {
                return Self::from_datetime(naive.and_utc());
            }
        }
        if let Ok(date) = chrono::NaiveDate::parse_from_str(text, "%Y-%m-%d") {
            return Self::from_datetime(date.and_hms_opt(0, 0, 0).unwrap().and_utc());
        }
        Err(Error::invalid("timestamp", format!("cannot parse {text:?}")))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_datetime().format("%Y-%m-%dT%H:%M:%SZ"))
    }
}

impl Add<i64> for Timestamp {
    type Output = Timestamp;

    fn add(self, minutes: i64) -> Timestamp {
        Timestamp(self.0 + minutes)
    }
}

impl Sub<i64> for Timestamp {
    type Output = Timestamp;

    fn sub(self, minutes: i64) -> Timestamp {
        Timestamp(self.0 - minutes)
    }
}

impl Sub for Timestamp {
    type Output = i64;

    fn sub(self, other: Timestamp) -> i64 {
        self.0 - other.0
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Timestamp::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// An ordered set of equal periods `[start, end)` of `resolution_min` minutes each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: Timestamp,
    end: Timestamp,
    resolution_min: i64,
}

impl TimeGrid {
    pub fn new(start: Timestamp, end: Timestamp, resolution_min: i64) -> Result<Self> {
        if resolution_min <= 0 {
            return Err(Error::invalid("grid", "resolution must be positive"));
        }
        if end <= start {
            return Err(Error::invalid("grid", format!("end {end} is not after start {start}")));
        }
        if (end - start) % resolution_min != 0 {
            return Err(Error::invalid(
                "grid",
                format!("span of {} min is not a multiple of {resolution_min}", end - start),
            ));
        }
        if !start.is_aligned(resolution_min) {
            return Err(Error::Misaligned {
                timestamp: start,
                resolution_min,
            });
        }
        Ok(TimeGrid {
            start,
            end,
            resolution_min,
        })
    }

    pub fn with_periods(start: Timestamp, periods: usize, resolution_min: i64) -> Result<Self> {
        Self::new(start, start + periods as i64 * resolution_min, resolution_min)
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn end(&self) -> Timestamp {
        self.end
    }

    pub fn resolution_min(&self) -> i64 {
        self.resolution_min
    }

    /// Length of one period in hours; multiplies kW into kWh.
    pub fn period_hours(&self) -> f64 {
        self.resolution_min as f64 / MINUTES_PER_HOUR as f64
    }

    pub fn len(&self) -> usize {
        ((self.end - self.start) / self.resolution_min) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn period_start(&self, index: usize) -> Timestamp {
        self.start + index as i64 * self.resolution_min
    }

    pub fn timestamps(&self) -> impl Iterator<Item = Timestamp> + '_ {
        (0..self.len()).map(|i| self.period_start(i))
    }

    /// Index of the period starting exactly at `ts`.
    pub fn index_of(&self, ts: Timestamp) -> Option<usize> {
        if ts < self.start || ts >= self.end || !ts.is_aligned(self.resolution_min) {
            return None;
        }
        Some(((ts - self.start) / self.resolution_min) as usize)
    }

    /// Signed period offset of `ts` from the grid start, rounding towards -inf.
    pub fn offset_floor(&self, ts: Timestamp) -> i64 {
        (ts - self.start).div_euclid(self.resolution_min)
    }

    /// Signed period offset of `ts` from the grid start, rounding towards +inf.
    pub fn offset_ceil(&self, ts: Timestamp) -> i64 {
        -(self.start - ts).div_euclid(self.resolution_min)
    }

    /// Periods wholly inside `[from, to)`, clamped to the grid.
    pub fn covered_range(&self, from: Timestamp, to: Timestamp) -> std::ops::Range<usize> {
        let n = self.len() as i64;
        let lo = self.offset_ceil(from).clamp(0, n);
        let hi = self.offset_floor(to).clamp(0, n);
        lo as usize..hi.max(lo) as usize
    }

    /// Copy of this grid ending no later than `limit`; `None` if nothing remains.
    pub fn clip_end(&self, limit: Timestamp) -> Option<TimeGrid> {
        let end = self.end.min(limit.floor_to(self.resolution_min).max(self.start));
        TimeGrid::new(self.start, end, self.resolution_min).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts_periods() {
        let g = TimeGrid::new(Timestamp::from_hours(0), Timestamp::from_hours(24), 5).unwrap();
        assert_eq!(g.len(), 288);
        assert_eq!(g.period_start(12), Timestamp::from_hours(1));
        assert_eq!(g.index_of(Timestamp::from_minutes(65)), Some(13));
        assert_eq!(g.index_of(Timestamp::from_minutes(66)), None);
        assert_eq!(g.index_of(Timestamp::from_hours(24)), None);
    }

    #[test]
    fn grid_rejects_bad_spans() {
        assert!(TimeGrid::new(Timestamp::from_hours(1), Timestamp::from_hours(1), 5).is_err());
        assert!(TimeGrid::new(Timestamp::from_minutes(0), Timestamp::from_minutes(7), 5).is_err());
        assert!(TimeGrid::new(Timestamp::from_minutes(3), Timestamp::from_minutes(13), 5).is_err());
    }

    #[test]
    fn covered_range_clamps() {
        let g = TimeGrid::new(Timestamp::from_hours(0), Timestamp::from_hours(2), 30).unwrap();
        assert_eq!(g.covered_range(Timestamp::from_hours(-5), Timestamp::from_hours(1)), 0..2);
        assert_eq!(g.covered_range(Timestamp::from_minutes(10), Timestamp::from_hours(9)), 1..4);
        assert_eq!(g.covered_range(Timestamp::from_hours(5), Timestamp::from_hours(9)), 4..4);
    }

    #[test]
    fn timestamp_round_trips_text() {
        let ts = Timestamp::parse("2021-12-17T07:30:00Z").unwrap();
        assert_eq!(ts.to_string(), "2021-12-17T07:30:00Z");
        assert_eq!(Timestamp::parse("2021-12-17 07:30:00").unwrap(), ts);
        assert_eq!(ts.minute_of_day(), 450);
        assert!(Timestamp::parse("2021-12-17T07:30:15Z").is_err());
    }
}

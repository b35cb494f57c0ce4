//! Shared domain types: UNIX time keys, five-digit surrogate keys, gender,
//! geography attributes, and the text normalization used for dimension dedup.

use crate::error::{Error, Result};
use chrono::{DateTime, Datelike, FixedOffset, NaiveDate, TimeZone, Utc};
use std::fmt;

/// First epoch second outside the supported domain (2100-01-01T00:00:00Z).
pub const MAX_EPOCH_EXCLUSIVE: i64 = 4_102_444_800;

/// Seconds east of UTC for the default ingestion zone (+06:00).
pub const DEFAULT_ZONE_OFFSET_MINUTES: i32 = 360;

/// A point in time stored as UNIX epoch seconds (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeKey(i64);

impl TimeKey {
    /// Wraps raw epoch seconds, enforcing the supported domain
    /// `[1970-01-01, 2100-01-01)`.
    pub fn from_epoch(epoch_seconds: i64) -> Result<Self> {
        if !(0..MAX_EPOCH_EXCLUSIVE).contains(&epoch_seconds) {
            return Err(Error::Range(format!(
                "epoch {epoch_seconds} outside [0, {MAX_EPOCH_EXCLUSIVE})"
            )));
        }
        Ok(TimeKey(epoch_seconds))
    }

    /// Builds a key from a local calendar instant and its zone offset.
    pub fn from_calendar(
        year: i32,
        month: u32,
        day: u32,
        hour: u32,
        minute: u32,
        second: u32,
        offset_minutes: i32,
    ) -> Result<Self> {
        let date = NaiveDate::from_ymd_opt(year, month, day)
            .ok_or_else(|| Error::Range(format!("invalid date {year:04}-{month:02}-{day:02}")))?;
        let naive = date.and_hms_opt(hour, minute, second).ok_or_else(|| {
            Error::Range(format!("invalid time {hour:02}:{minute:02}:{second:02}"))
        })?;
        let offset = FixedOffset::east_opt(offset_minutes * 60)
            .ok_or_else(|| Error::Range(format!("invalid zone offset {offset_minutes} min")))?;
        let local = offset
            .from_local_datetime(&naive)
            .single()
            .ok_or_else(|| Error::Range("ambiguous local instant".into()))?;
        Self::from_epoch(local.timestamp())
    }

    /// Builds a day-granularity key: UTC midnight of the given calendar date.
    /// Used for ambient facts, which carry dates rather than instants.
    pub fn from_date_utc(year: i32, month: u32, day: u32) -> Result<Self> {
        Self::from_calendar(year, month, day, 0, 0, 0, 0)
    }

    pub fn epoch(&self) -> i64 {
        self.0
    }

    fn utc(&self) -> DateTime<Utc> {
        DateTime::from_timestamp(self.0, 0).expect("epoch validated at construction")
    }

    /// Calendar form in the given zone: (year, month, day, hour, minute, second).
    pub fn to_calendar(&self, offset_minutes: i32) -> Result<(i32, u32, u32, u32, u32, u32)> {
        use chrono::Timelike;
        let offset = FixedOffset::east_opt(offset_minutes * 60)
            .ok_or_else(|| Error::Range(format!("invalid zone offset {offset_minutes} min")))?;
        let t = self.utc().with_timezone(&offset);
        Ok((t.year(), t.month(), t.day(), t.hour(), t.minute(), t.second()))
    }

    /// UTC calendar date of this instant.
    pub fn date_utc(&self) -> NaiveDate {
        self.utc().date_naive()
    }

    /// Key of the UTC day containing this instant (epoch of UTC midnight).
    pub fn day_key(&self) -> i64 {
        self.0 - self.0.rem_euclid(86_400)
    }

    /// `YYYY-MM-DD` in UTC.
    pub fn date_label(&self) -> String {
        self.date_utc().format("%Y-%m-%d").to_string()
    }

    /// `YYYY-MM` in UTC.
    pub fn month_label(&self) -> String {
        self.date_utc().format("%Y-%m").to_string()
    }

    /// (year, month) in UTC.
    pub fn year_month(&self) -> (i32, u32) {
        let d = self.date_utc();
        (d.year(), d.month())
    }

    pub fn year(&self) -> i32 {
        self.date_utc().year()
    }

    /// Weekday index with Sunday = 0 .. Saturday = 6 (UTC).
    pub fn weekday_index(&self) -> usize {
        self.date_utc().weekday().num_days_from_sunday() as usize
    }
}

impl fmt::Display for TimeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// English weekday names in Sunday-first order, matching [`TimeKey::weekday_index`].
pub const WEEKDAY_NAMES: [&str; 7] = ["Sun", "Mon", "Tue", "Wed", "Thu", "Fri", "Sat"];

/// Five-digit dimension surrogate key in `[10000, 99999]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SurrogateKey(u32);

pub const SURROGATE_MIN: u32 = 10_000;
pub const SURROGATE_MAX: u32 = 99_999;

impl SurrogateKey {
    pub fn from_value(value: u32) -> Result<Self> {
        if !(SURROGATE_MIN..=SURROGATE_MAX).contains(&value) {
            return Err(Error::Range(format!(
                "surrogate key {value} outside [{SURROGATE_MIN}, {SURROGATE_MAX}]"
            )));
        }
        Ok(SurrogateKey(value))
    }

    pub fn value(&self) -> u32 {
        self.0
    }
}

impl fmt::Display for SurrogateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:05}", self.0)
    }
}

/// Sequential surrogate allocator for one dimension table. Allocation starts
/// at 10000 so the five-digit property holds by construction.
#[derive(Debug, Clone)]
pub struct KeyAllocator {
    next: u32,
}

impl Default for KeyAllocator {
    fn default() -> Self {
        Self::new()
    }
}

impl KeyAllocator {
    pub fn new() -> Self {
        KeyAllocator { next: SURROGATE_MIN }
    }

    /// Resumes allocation after the given already-issued maximum key.
    pub fn resume_after(max_issued: Option<SurrogateKey>) -> Self {
        match max_issued {
            Some(k) => KeyAllocator { next: k.value() + 1 },
            None => Self::new(),
        }
    }

    /// Issues the next key, strictly increasing, failing on exhaustion.
    pub fn next_surrogate(&mut self) -> Result<SurrogateKey> {
        if self.next > SURROGATE_MAX {
            return Err(Error::Capacity(
                "surrogate key space exhausted (more than 90000 rows in one dimension)".into(),
            ));
        }
        let key = SurrogateKey(self.next);
        self.next += 1;
        Ok(key)
    }

    pub fn issued(&self) -> u32 {
        self.next - SURROGATE_MIN
    }
}

/// Patient gender as recorded at the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gender {
    Male,
    Female,
    Other,
    Unknown,
}

impl Gender {
    /// Lenient source-value parser; unrecognized spellings become `Unknown`.
    pub fn parse(raw: &str) -> Gender {
        match raw.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Gender::Male,
            "f" | "female" => Gender::Female,
            "o" | "other" | "third" => Gender::Other,
            _ => Gender::Unknown,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Other => "other",
            Gender::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decade age band, clamped to `[0, 12]` (0-9, 10-19, ... 120+).
pub fn age_band(age_years: u32) -> u8 {
    (age_years / 10).min(12) as u8
}

/// Label for an age band index, e.g. `20-29`.
pub fn age_band_label(band: u8) -> String {
    if band >= 12 {
        "120+".to_string()
    } else {
        format!("{}-{}", band as u32 * 10, band as u32 * 10 + 9)
    }
}

/// Raw geography tuple carried by staged records before key resolution.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GeoAttrs {
    pub city: String,
    pub upazila: String,
    pub district: String,
    pub division: String,
}

impl GeoAttrs {
    pub fn new(city: &str, upazila: &str, district: &str, division: &str) -> Self {
        GeoAttrs {
            city: normalize_text(city),
            upazila: normalize_text(upazila),
            district: normalize_text(district),
            division: normalize_text(division),
        }
    }

    /// Case-folded natural-key form used for dimension dedup.
    pub fn natural_key(&self) -> String {
        [&self.city, &self.upazila, &self.district, &self.division]
            .map(|s| normalize_key(s))
            .join("\u{1f}")
    }
}

/// Trims and collapses internal whitespace, preserving case.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalized, case-folded form used for natural-key comparison.
pub fn normalize_key(s: &str) -> String {
    normalize_text(s).to_lowercase()
}

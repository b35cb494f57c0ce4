//! Wrapper-based acquisition: per-source adapters parse delimited files,
//! clean and standardize values (timestamps to UTC epoch keys, temperature to
//! Celsius, rainfall to millimeters), map test names to canonical codes, and
//! replace patient identity with a pseudonymous key before anything is
//! persisted. Rejected rows are kept, never silently dropped.

pub mod staging;

pub use staging::{BatchMeta, StagingStore};

use crate::error::{Error, Result};
use crate::linkage::{encode_full_name, make_pik, LinkKey, LinkSecret, Pik};
use crate::model::{age_band, normalize_key, normalize_text, GeoAttrs, Gender, TimeKey};
use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

/// The five source families the wrapper layer accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Hospital,
    DiagnosticCenter,
    Meteorology,
    EnvironmentAgency,
    StatisticsBureau,
}

impl SourceKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "hospital" => Ok(SourceKind::Hospital),
            "diagnostic_center" => Ok(SourceKind::DiagnosticCenter),
            "meteorology" => Ok(SourceKind::Meteorology),
            "environment_agency" => Ok(SourceKind::EnvironmentAgency),
            "statistics_bureau" => Ok(SourceKind::StatisticsBureau),
            other => Err(Error::Validation(format!("unknown source kind {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SourceKind::Hospital => "hospital",
            SourceKind::DiagnosticCenter => "diagnostic_center",
            SourceKind::Meteorology => "meteorology",
            SourceKind::EnvironmentAgency => "environment_agency",
            SourceKind::StatisticsBureau => "statistics_bureau",
        }
    }

    /// Whether records from this source become test-result facts (true) or
    /// ambient facts (false).
    pub fn is_clinical(&self) -> bool {
        matches!(self, SourceKind::Hospital | SourceKind::DiagnosticCenter)
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Canonical field names for clinical sources.
pub const CLINICAL_FIELDS: [&str; 13] = [
    "patient_name",
    "age",
    "gender",
    "test_name",
    "result_value",
    "result_status",
    "timestamp",
    "city",
    "upazila",
    "district",
    "division",
    "provider",
    "lab",
];

/// Canonical geography plus timestamp fields required of every source.
const GEO_FIELDS: [&str; 4] = ["city", "upazila", "district", "division"];

/// Canonical measure fields for ambient sources; at least one must be mapped.
pub const AMBIENT_MEASURES: [&str; 5] = [
    "rainfall_mm",
    "humidity_pct",
    "temperature",
    "air_quality_index",
    "population_density",
];

/// One configured source adapter: where records come from, their zone, how
/// source columns map to canonical fields, and the test-code vocabulary.
#[derive(Debug, Clone)]
pub struct SourceDescriptor {
    pub source_id: String,
    pub kind: SourceKind,
    pub zone_offset_minutes: i32,
    /// Source column name to canonical field name.
    pub field_map: BTreeMap<String, String>,
    /// Normalized source test term to canonical test code.
    pub code_map: BTreeMap<String, String>,
}

impl SourceDescriptor {
    /// Checks that every canonical field required by the source kind is
    /// covered by the field map and that no mapped name is unknown.
    pub fn validate(&self) -> Result<()> {
        let known: Vec<&str> = CLINICAL_FIELDS
            .iter()
            .chain(AMBIENT_MEASURES.iter())
            .copied()
            .collect();
        for canonical in self.field_map.values() {
            if !known.contains(&canonical.as_str()) {
                return Err(Error::Validation(format!(
                    "source {}: unknown canonical field {canonical:?}",
                    self.source_id
                )));
            }
        }
        let mapped: Vec<&str> = self.field_map.values().map(String::as_str).collect();
        let require = |fields: &[&str]| -> Result<()> {
            for f in fields {
                if !mapped.contains(f) {
                    return Err(Error::Validation(format!(
                        "source {}: required canonical field {f:?} is not mapped",
                        self.source_id
                    )));
                }
            }
            Ok(())
        };
        if self.kind.is_clinical() {
            require(&CLINICAL_FIELDS)?;
        } else {
            require(&["timestamp"])?;
            require(&GEO_FIELDS)?;
            if !AMBIENT_MEASURES.iter().any(|m| mapped.contains(m)) {
                return Err(Error::Validation(format!(
                    "source {}: ambient source maps no measure field",
                    self.source_id
                )));
            }
        }
        Ok(())
    }
}

/// Loads a two-column code-map file (source term, canonical code), tab- or
/// comma-delimited, one mapping per line, `#` comments allowed.
pub fn load_code_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    parse_code_map(&text)
}

pub fn parse_code_map(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (term, code) = line
            .split_once('\t')
            .or_else(|| line.split_once(','))
            .ok_or_else(|| Error::Parse(format!("code map line {}: expected 2 columns", i + 1)))?;
        map.insert(normalize_key(term), normalize_text(code).to_uppercase());
    }
    Ok(map)
}

/// A parsed row keyed by canonical field names, values still raw.
#[derive(Debug, Clone)]
pub struct RawRecord {
    /// 1-based data row number (header excluded).
    pub row: u64,
    pub fields: BTreeMap<String, String>,
}

/// Why a row was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// Value has the wrong shape for its field (non-numeric number, ...).
    Type,
    MissingValue,
    BadTimestamp,
    UnmappedCode,
    Range,
    InvalidName,
    /// Row structure broken (wrong cell count).
    Malformed,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::Type => "type",
            RejectReason::MissingValue => "missing-value",
            RejectReason::BadTimestamp => "bad-timestamp",
            RejectReason::UnmappedCode => "unmapped-code",
            RejectReason::Range => "range",
            RejectReason::InvalidName => "invalid-name",
            RejectReason::Malformed => "malformed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "type" => RejectReason::Type,
            "missing-value" => RejectReason::MissingValue,
            "bad-timestamp" => RejectReason::BadTimestamp,
            "unmapped-code" => RejectReason::UnmappedCode,
            "range" => RejectReason::Range,
            "invalid-name" => RejectReason::InvalidName,
            "malformed" => RejectReason::Malformed,
            other => return Err(Error::Validation(format!("unknown reject reason {other:?}"))),
        })
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rejected row: where, why, and a short detail for the sidecar file.
#[derive(Debug, Clone)]
pub struct Reject {
    pub row: u64,
    pub reason: RejectReason,
    pub detail: String,
}

/// Parses a delimited UTF-8 file against the descriptor's field map.
///
/// The header must contain every mapped source column (missing ones are a
/// fatal parse error); unmapped columns are ignored. Structurally broken rows
/// become rejects rather than failing the batch.
pub fn parse_batch<R: Read>(
    descriptor: &SourceDescriptor,
    reader: R,
) -> Result<(Vec<RawRecord>, Vec<Reject>)> {
    descriptor.validate()?;
    let mut csv_reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv_reader
        .headers()
        .map_err(|e| Error::Parse(format!("source {}: {e}", descriptor.source_id)))?
        .clone();
    let mut column_for_canonical: Vec<(usize, String)> = Vec::new();
    for (source_col, canonical) in &descriptor.field_map {
        match headers.iter().position(|h| h == source_col) {
            Some(idx) => column_for_canonical.push((idx, canonical.clone())),
            None => {
                return Err(Error::Parse(format!(
                    "source {}: mapped column {source_col:?} missing from header",
                    descriptor.source_id
                )))
            }
        }
    }

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for (i, result) in csv_reader.records().enumerate() {
        let row = (i + 1) as u64;
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Reject {
                    row,
                    reason: RejectReason::Malformed,
                    detail: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        if record.len() != headers.len() {
            rejects.push(Reject {
                row,
                reason: RejectReason::Malformed,
                detail: format!("expected {} cells, got {}", headers.len(), record.len()),
            });
            continue;
        }
        let mut fields = BTreeMap::new();
        for (idx, canonical) in &column_for_canonical {
            fields.insert(canonical.clone(), record[*idx].to_string());
        }
        records.push(RawRecord { row, fields });
    }
    Ok((records, rejects))
}

/// A cleaned, standardized clinical record ready for staging. Patient
/// identity has already been replaced by the pseudonymous key.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedTest {
    pub pik: Pik,
    pub time: TimeKey,
    pub geo: GeoAttrs,
    pub age_band: u8,
    pub gender: Gender,
    pub code: String,
    pub result_value: f64,
    pub result_positive: bool,
    pub provider: String,
    pub lab: String,
    pub source_id: String,
    pub source_kind: SourceKind,
}

/// A cleaned ambient observation at day granularity. Absent measures stay
/// `None`; units are canonical (mm, %, Celsius).
#[derive(Debug, Clone, PartialEq)]
pub struct StagedAmbient {
    pub time: TimeKey,
    pub geo: GeoAttrs,
    pub rainfall_mm: Option<f64>,
    pub humidity_pct: Option<f64>,
    pub temperature_c: Option<f64>,
    pub air_quality_index: Option<f64>,
    pub population_density: Option<f64>,
    pub source_id: String,
    pub source_kind: SourceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StagedRecord {
    Test(StagedTest),
    Ambient(StagedAmbient),
}

impl StagedRecord {
    pub fn time(&self) -> TimeKey {
        match self {
            StagedRecord::Test(t) => t.time,
            StagedRecord::Ambient(a) => a.time,
        }
    }

    pub fn geo(&self) -> &GeoAttrs {
        match self {
            StagedRecord::Test(t) => &t.geo,
            StagedRecord::Ambient(a) => &a.geo,
        }
    }

    /// Key under which duplicates within one batch collapse (last wins):
    /// clinical rows by (pik, instant, test code); ambient rows by
    /// (day, place, source).
    pub fn dedup_key(&self) -> String {
        match self {
            StagedRecord::Test(t) => format!("t|{}|{}|{}", t.pik, t.time.epoch(), t.code),
            StagedRecord::Ambient(a) => format!(
                "a|{}|{}|{}",
                a.time.day_key(),
                a.geo.natural_key(),
                a.source_id
            ),
        }
    }
}

fn require<'a>(raw: &'a RawRecord, field: &str) -> std::result::Result<&'a str, Reject> {
    match raw.fields.get(field).map(String::as_str) {
        Some(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(Reject {
            row: raw.row,
            reason: RejectReason::MissingValue,
            detail: format!("{field} is empty"),
        }),
    }
}

fn reject(raw: &RawRecord, reason: RejectReason, detail: impl Into<String>) -> Reject {
    Reject { row: raw.row, reason, detail: detail.into() }
}

/// Parses the timestamp shapes sources actually produce: ISO dates with or
/// without seconds, `T` or space separated, or a bare date (midnight local).
pub fn parse_timestamp(value: &str, offset_minutes: i32) -> Result<TimeKey> {
    use chrono::{NaiveDate, NaiveDateTime};
    let v = value.trim();
    const DT_FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    for fmt in DT_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(v, fmt) {
            use chrono::{Datelike, Timelike};
            return TimeKey::from_calendar(
                dt.year(),
                dt.month(),
                dt.day(),
                dt.hour(),
                dt.minute(),
                dt.second(),
                offset_minutes,
            );
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(v, "%Y-%m-%d") {
        use chrono::Datelike;
        return TimeKey::from_calendar(d.year(), d.month(), d.day(), 0, 0, 0, offset_minutes);
    }
    Err(Error::Parse(format!("unparseable timestamp {value:?}")))
}

/// Parses the date portion of an ambient timestamp. Day-granularity facts are
/// keyed by calendar date (UTC midnight), independent of the source zone.
pub fn parse_observation_date(value: &str) -> Result<TimeKey> {
    use chrono::{Datelike, NaiveDate};
    let v = value.trim();
    let date_part = if v.len() >= 10 { &v[..10] } else { v };
    let d = NaiveDate::parse_from_str(date_part, "%Y-%m-%d")
        .map_err(|_| Error::Parse(format!("unparseable date {value:?}")))?;
    TimeKey::from_date_utc(d.year(), d.month(), d.day())
}

/// Parses a temperature with optional unit suffix (`C` default, `F`
/// converted), enforcing a plausible Celsius range.
pub fn parse_temperature(value: &str) -> Result<f64> {
    let v = value.trim().trim_end_matches("°C").trim_end_matches("°F");
    let (number, fahrenheit) = match v.to_ascii_uppercase() {
        ref s if s.ends_with('F') => (s[..s.len() - 1].trim().to_string(), true),
        ref s if s.ends_with('C') => (s[..s.len() - 1].trim().to_string(), false),
        ref s => (s.clone(), false),
    };
    let raw: f64 = number
        .parse()
        .map_err(|_| Error::Parse(format!("non-numeric temperature {value:?}")))?;
    let celsius = if fahrenheit { (raw - 32.0) * 5.0 / 9.0 } else { raw };
    if !(-60.0..=60.0).contains(&celsius) {
        return Err(Error::Range(format!("temperature {celsius} C implausible")));
    }
    Ok(celsius)
}

/// Parses rainfall with optional unit suffix (`mm` default, `cm` and `in`
/// converted); must be non-negative.
pub fn parse_rainfall(value: &str) -> Result<f64> {
    let v = value.trim().to_ascii_lowercase();
    let (number, factor) = if let Some(n) = v.strip_suffix("mm") {
        (n.trim(), 1.0)
    } else if let Some(n) = v.strip_suffix("cm") {
        (n.trim(), 10.0)
    } else if let Some(n) = v.strip_suffix("in") {
        (n.trim(), 25.4)
    } else {
        (v.as_str(), 1.0)
    };
    let raw: f64 = number
        .parse()
        .map_err(|_| Error::Parse(format!("non-numeric rainfall {value:?}")))?;
    let mm = raw * factor;
    if !(0.0..=10_000.0).contains(&mm) {
        return Err(Error::Range(format!("rainfall {mm} mm out of range")));
    }
    Ok(mm)
}

/// Parses relative humidity in percent; must land in [0, 100].
pub fn parse_humidity(value: &str) -> Result<f64> {
    let v = value.trim().trim_end_matches('%').trim();
    let pct: f64 = v
        .parse()
        .map_err(|_| Error::Parse(format!("non-numeric humidity {value:?}")))?;
    if !(0.0..=100.0).contains(&pct) {
        return Err(Error::Range(format!("humidity {pct}% outside [0, 100]")));
    }
    Ok(pct)
}

fn parse_nonnegative(value: &str, what: &str, max: f64) -> Result<f64> {
    let x: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("non-numeric {what} {value:?}")))?;
    if !(0.0..=max).contains(&x) {
        return Err(Error::Range(format!("{what} {x} out of range")));
    }
    Ok(x)
}

fn parse_result_status(value: &str) -> Option<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "positive" | "pos" | "+" | "1" | "true" | "detected" | "reactive" => Some(true),
        "negative" | "neg" | "-" | "0" | "false" | "not detected" | "nonreactive" => Some(false),
        _ => None,
    }
}

/// Standardizes one parsed row into a staged record, or explains its
/// rejection. Clinical rows lose their identifiers here: name, age, and
/// gender are folded into the pseudonymous key and coarse attributes.
pub fn standardize(
    raw: &RawRecord,
    descriptor: &SourceDescriptor,
    secret: &LinkSecret,
) -> std::result::Result<StagedRecord, Reject> {
    let geo = GeoAttrs::new(
        require(raw, "city")?,
        require(raw, "upazila")?,
        require(raw, "district")?,
        require(raw, "division")?,
    );
    if descriptor.kind.is_clinical() {
        let name = require(raw, "patient_name")?;
        let age_text = require(raw, "age")?;
        let age: u32 = age_text.trim().parse().map_err(|_| {
            reject(raw, RejectReason::Type, format!("non-numeric age {age_text:?}"))
        })?;
        if age > 130 {
            return Err(reject(raw, RejectReason::Range, format!("age {age} implausible")));
        }
        let gender = Gender::parse(require(raw, "gender")?);
        let codes = encode_full_name(name)
            .map_err(|e| reject(raw, RejectReason::InvalidName, e.to_string()))?;
        let band = age_band(age);
        let link = LinkKey::new(codes, band, gender);
        let pik = make_pik(&link, age_text.trim(), secret);

        let test_term = require(raw, "test_name")?;
        let code = descriptor
            .code_map
            .get(&normalize_key(test_term))
            .cloned()
            .ok_or_else(|| {
                reject(raw, RejectReason::UnmappedCode, format!("no code for {test_term:?}"))
            })?;
        let value_text = require(raw, "result_value")?;
        let result_value: f64 = value_text.trim().parse().map_err(|_| {
            reject(raw, RejectReason::Type, format!("non-numeric result value {value_text:?}"))
        })?;
        let status_text = require(raw, "result_status")?;
        let result_positive = parse_result_status(status_text).ok_or_else(|| {
            reject(raw, RejectReason::Type, format!("unrecognized result {status_text:?}"))
        })?;
        let ts = require(raw, "timestamp")?;
        let time = parse_timestamp(ts, descriptor.zone_offset_minutes)
            .map_err(|e| reject(raw, RejectReason::BadTimestamp, e.to_string()))?;
        Ok(StagedRecord::Test(StagedTest {
            pik,
            time,
            geo,
            age_band: band,
            gender,
            code,
            result_value,
            result_positive,
            provider: normalize_text(require(raw, "provider")?),
            lab: normalize_text(require(raw, "lab")?),
            source_id: descriptor.source_id.clone(),
            source_kind: descriptor.kind,
        }))
    } else {
        let ts = require(raw, "timestamp")?;
        let time = parse_observation_date(ts)
            .map_err(|e| reject(raw, RejectReason::BadTimestamp, e.to_string()))?;
        let map_err = |raw: &RawRecord, e: Error| match e {
            Error::Range(msg) => reject(raw, RejectReason::Range, msg),
            other => reject(raw, RejectReason::Type, other.to_string()),
        };
        let mut staged = StagedAmbient {
            time,
            geo,
            rainfall_mm: None,
            humidity_pct: None,
            temperature_c: None,
            air_quality_index: None,
            population_density: None,
            source_id: descriptor.source_id.clone(),
            source_kind: descriptor.kind,
        };
        let mut present = 0;
        if let Some(v) = raw.fields.get("rainfall_mm").filter(|v| !v.trim().is_empty()) {
            staged.rainfall_mm = Some(parse_rainfall(v).map_err(|e| map_err(raw, e))?);
            present += 1;
        }
        if let Some(v) = raw.fields.get("humidity_pct").filter(|v| !v.trim().is_empty()) {
            staged.humidity_pct = Some(parse_humidity(v).map_err(|e| map_err(raw, e))?);
            present += 1;
        }
        if let Some(v) = raw.fields.get("temperature").filter(|v| !v.trim().is_empty()) {
            staged.temperature_c = Some(parse_temperature(v).map_err(|e| map_err(raw, e))?);
            present += 1;
        }
        if let Some(v) = raw.fields.get("air_quality_index").filter(|v| !v.trim().is_empty()) {
            staged.air_quality_index =
                Some(parse_nonnegative(v, "air quality index", 1_000.0).map_err(|e| map_err(raw, e))?);
            present += 1;
        }
        if let Some(v) = raw.fields.get("population_density").filter(|v| !v.trim().is_empty()) {
            staged.population_density =
                Some(parse_nonnegative(v, "population density", 1.0e6).map_err(|e| map_err(raw, e))?);
            present += 1;
        }
        if present == 0 {
            return Err(reject(raw, RejectReason::MissingValue, "no measure present"));
        }
        Ok(StagedRecord::Ambient(staged))
    }
}

/// Outcome of one file ingestion: the staged batch and its accounting.
/// `rows_in = staged + rejected + deduped` always holds.
#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub batch_id: u64,
    pub source_id: String,
    pub rows_in: u64,
    pub staged: u64,
    pub rejected: u64,
    pub deduped: u64,
}

/// Parses, standardizes, and stages one source file as a new batch.
pub fn ingest_file(
    descriptor: &SourceDescriptor,
    path: &Path,
    secret: &LinkSecret,
    staging: &StagingStore,
) -> Result<IngestOutcome> {
    let file = std::fs::File::open(path)?;
    ingest_reader(descriptor, file, secret, staging)
}

pub fn ingest_reader<R: Read>(
    descriptor: &SourceDescriptor,
    reader: R,
    secret: &LinkSecret,
    staging: &StagingStore,
) -> Result<IngestOutcome> {
    let (raw_records, mut rejects) = parse_batch(descriptor, reader)?;
    let rows_in = (raw_records.len() + rejects.len()) as u64;
    let mut staged = Vec::new();
    for raw in &raw_records {
        match standardize(raw, descriptor, secret) {
            Ok(record) => staged.push(record),
            Err(r) => rejects.push(r),
        }
    }
    rejects.sort_by_key(|r| r.row);
    let (batch_id, kept, deduped) =
        staging.stage_batch(&descriptor.source_id, rows_in, &staged, &rejects)?;
    Ok(IngestOutcome {
        batch_id,
        source_id: descriptor.source_id.clone(),
        rows_in,
        staged: kept,
        rejected: rejects.len() as u64,
        deduped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linkage::LinkSecret;

    pub(crate) fn clinical_descriptor() -> SourceDescriptor {
        let mut field_map = BTreeMap::new();
        for (src, canon) in [
            ("Patient Name", "patient_name"),
            ("Age", "age"),
            ("Gender", "gender"),
            ("Test", "test_name"),
            ("Result Value", "result_value"),
            ("Result", "result_status"),
            ("Test Time", "timestamp"),
            ("City", "city"),
            ("Upazila", "upazila"),
            ("District", "district"),
            ("Division", "division"),
            ("Provider", "provider"),
            ("Lab", "lab"),
        ] {
            field_map.insert(src.to_string(), canon.to_string());
        }
        let code_map =
            parse_code_map("NS1 Antigen\tDENGUE_NS1\nDengue IgM\tDENGUE_IGM\nCBC\tCBC").unwrap();
        SourceDescriptor {
            source_id: "hospital_a".into(),
            kind: SourceKind::Hospital,
            zone_offset_minutes: 360,
            field_map,
            code_map,
        }
    }

    fn met_descriptor() -> SourceDescriptor {
        let mut field_map = BTreeMap::new();
        for (src, canon) in [
            ("Date", "timestamp"),
            ("City", "city"),
            ("Upazila", "upazila"),
            ("District", "district"),
            ("Division", "division"),
            ("Rainfall", "rainfall_mm"),
            ("Humidity", "humidity_pct"),
            ("Temperature", "temperature"),
        ] {
            field_map.insert(src.to_string(), canon.to_string());
        }
        SourceDescriptor {
            source_id: "bmd".into(),
            kind: SourceKind::Meteorology,
            zone_offset_minutes: 360,
            field_map,
            code_map: BTreeMap::new(),
        }
    }

    fn secret() -> LinkSecret {
        LinkSecret::from_bytes(&[7u8; 16]).unwrap()
    }

    const CLINICAL_HEADER: &str =
        "Patient Name,Age,Gender,Test,Result Value,Result,Test Time,City,Upazila,District,Division,Provider,Lab";

    fn clinical_row(name: &str, test: &str, time: &str) -> String {
        format!("{name},23,male,{test},2.4,positive,{time},Dhaka,Dhanmondi,Dhaka,Dhaka,DMC,Lab One")
    }

    #[test]
    fn parse_valid_rows() {
        let csv = format!(
            "{CLINICAL_HEADER}\n{}\n{}\n{}\n",
            clinical_row("Sobuj Chowdhury", "NS1 Antigen", "2022-08-01 10:00"),
            clinical_row("Rina Akter", "Dengue IgM", "2022-08-02 11:30"),
            clinical_row("Karim Uddin", "CBC", "2022-08-03 09:15"),
        );
        let (records, rejects) = parse_batch(&clinical_descriptor(), csv.as_bytes()).unwrap();
        assert_eq!(records.len(), 3);
        assert!(rejects.is_empty());
        assert_eq!(records[0].fields["patient_name"], "Sobuj Chowdhury");
        assert_eq!(records[0].fields["timestamp"], "2022-08-01 10:00");
    }

    #[test]
    fn short_row_is_malformed_reject() {
        let csv = format!(
            "{CLINICAL_HEADER}\n{}\nonly,three,cells\n",
            clinical_row("Sobuj Chowdhury", "NS1 Antigen", "2022-08-01 10:00"),
        );
        let (records, rejects) = parse_batch(&clinical_descriptor(), csv.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(rejects.len(), 1);
        assert_eq!(rejects[0].reason, RejectReason::Malformed);
        assert_eq!(rejects[0].row, 2);
    }

    #[test]
    fn missing_mapped_header_is_fatal() {
        let csv = "Patient Name,Age\nSobuj,23\n";
        assert!(matches!(
            parse_batch(&clinical_descriptor(), csv.as_bytes()),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn descriptor_requires_all_clinical_fields() {
        let mut d = clinical_descriptor();
        d.field_map.retain(|_, canon| canon != "lab");
        assert!(matches!(d.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn standardize_clinical_row() {
        let d = clinical_descriptor();
        let csv = format!(
            "{CLINICAL_HEADER}\n{}\n",
            clinical_row("Sobuj Chowdhury", "NS1 Antigen", "2022-08-01 10:00"),
        );
        let (records, _) = parse_batch(&d, csv.as_bytes()).unwrap();
        let staged = standardize(&records[0], &d, &secret()).unwrap();
        let StagedRecord::Test(t) = staged else { panic!("expected test record") };
        assert_eq!(t.time.epoch(), 1_659_326_400);
        assert_eq!(t.code, "DENGUE_NS1");
        assert_eq!(t.age_band, 2);
        assert_eq!(t.gender, Gender::Male);
        assert!(t.result_positive);
        assert_eq!(t.provider, "DMC");

        // Spelling variant with identical codes gets the same pik.
        let csv2 = format!(
            "{CLINICAL_HEADER}\n{}\n",
            clinical_row("Sabuj Chaudhury", "NS1 Antigen", "2022-08-01 10:00"),
        );
        let (records2, _) = parse_batch(&d, csv2.as_bytes()).unwrap();
        let StagedRecord::Test(t2) = standardize(&records2[0], &d, &secret()).unwrap() else {
            panic!()
        };
        assert_eq!(t.pik, t2.pik);
    }

    #[test]
    fn standardize_reject_reasons() {
        let d = clinical_descriptor();
        let rows = [
            (clinical_row("Sobuj", "X-Ray Chest", "2022-08-01 10:00"), RejectReason::UnmappedCode),
            (clinical_row("Sobuj", "NS1 Antigen", "not-a-date"), RejectReason::BadTimestamp),
            (clinical_row("12345", "NS1 Antigen", "2022-08-01 10:00"), RejectReason::InvalidName),
            (
                "Sobuj,unknown,male,NS1 Antigen,2.4,positive,2022-08-01 10:00,Dhaka,D,D,D,DMC,L"
                    .to_string(),
                RejectReason::Type,
            ),
            (
                "Sobuj,23,male,NS1 Antigen,2.4,maybe,2022-08-01 10:00,Dhaka,D,D,D,DMC,L".to_string(),
                RejectReason::Type,
            ),
            (
                "Sobuj,23,male,NS1 Antigen,2.4,positive,2022-08-01 10:00,,D,D,D,DMC,L".to_string(),
                RejectReason::MissingValue,
            ),
            (
                "Sobuj,200,male,NS1 Antigen,2.4,positive,2022-08-01 10:00,Dhaka,D,D,D,DMC,L"
                    .to_string(),
                RejectReason::Range,
            ),
        ];
        for (row, want) in rows {
            let csv = format!("{CLINICAL_HEADER}\n{row}\n");
            let (records, _) = parse_batch(&d, csv.as_bytes()).unwrap();
            let got = standardize(&records[0], &d, &secret()).unwrap_err();
            assert_eq!(got.reason, want, "row {row:?}");
        }
    }

    #[test]
    fn standardize_ambient_row_with_unit_conversions() {
        let d = met_descriptor();
        let csv = "Date,City,Upazila,District,Division,Rainfall,Humidity,Temperature\n\
                   2021-06-10,Dhaka,Dhanmondi,Dhaka,Dhaka,1.5 cm,78,86 F\n";
        let (records, rejects) = parse_batch(&d, csv.as_bytes()).unwrap();
        assert!(rejects.is_empty());
        let StagedRecord::Ambient(a) = standardize(&records[0], &d, &secret()).unwrap() else {
            panic!()
        };
        assert_eq!(a.rainfall_mm, Some(15.0));
        assert_eq!(a.humidity_pct, Some(78.0));
        assert_eq!(a.temperature_c, Some(30.0));
        assert_eq!(a.time.epoch() % 86_400, 0);
        assert_eq!(a.time.date_label(), "2021-06-10");
    }

    #[test]
    fn ambient_range_and_type_rejects() {
        let d = met_descriptor();
        let bad = [
            ("2021-06-10,D,D,D,D,12,140,30", RejectReason::Range),
            ("2021-06-10,D,D,D,D,heavy,70,30", RejectReason::Type),
            ("2021-06-10,D,D,D,D,-4,70,30", RejectReason::Range),
            ("2021-06-10,D,D,D,D,,,", RejectReason::MissingValue),
            ("June 10,D,D,D,D,12,70,30", RejectReason::BadTimestamp),
        ];
        let header = "Date,City,Upazila,District,Division,Rainfall,Humidity,Temperature";
        for (row, want) in bad {
            let csv = format!("{header}\n{row}\n");
            let (records, _) = parse_batch(&d, csv.as_bytes()).unwrap();
            let got = standardize(&records[0], &d, &secret()).unwrap_err();
            assert_eq!(got.reason, want, "row {row:?}");
        }
    }

    #[test]
    fn temperature_parser() {
        assert_eq!(parse_temperature("86 F").unwrap(), 30.0);
        assert_eq!(parse_temperature("30").unwrap(), 30.0);
        assert_eq!(parse_temperature("30 C").unwrap(), 30.0);
        assert_eq!(parse_temperature("29.5c").unwrap(), 29.5);
        assert!(parse_temperature("900").is_err());
        assert!(parse_temperature("warm").is_err());
    }

    #[test]
    fn timestamp_parser_formats() {
        for (s, want) in [
            ("2022-08-01 10:00", 1_659_326_400),
            ("2022-08-01T10:00:00", 1_659_326_400),
            ("2022-08-01", 1_659_290_400),
        ] {
            assert_eq!(parse_timestamp(s, 360).unwrap().epoch(), want, "{s}");
        }
        assert!(parse_timestamp("08/01/2022", 360).is_err());
    }

    #[test]
    fn staged_records_carry_no_direct_identifiers() {
        // The staged clinical type exposes only pseudonymous and coarse
        // fields; this guards against accidentally widening it.
        let d = clinical_descriptor();
        let csv = format!(
            "{CLINICAL_HEADER}\n{}\n",
            clinical_row("Sobuj Chowdhury", "NS1 Antigen", "2022-08-01 10:00"),
        );
        let (records, _) = parse_batch(&d, csv.as_bytes()).unwrap();
        let StagedRecord::Test(t) = standardize(&records[0], &d, &secret()).unwrap() else {
            panic!()
        };
        let serialized = format!("{t:?}");
        assert!(!serialized.contains("Sobuj"));
        assert!(!serialized.contains("Chowdhury"));
        assert!(!serialized.contains("\"23\""));
    }
}

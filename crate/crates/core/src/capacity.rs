//! National ingest-load and storage estimator. Scales one facility's average
//! daily record count to the national level through bed-capacity weights,
//! then projects warehouse size over planning horizons.
//!
//! Per-category loads round UP to whole records (a bed category never gets
//! budgeted below its expected load), with a tolerance guard so quotients
//! that are mathematically integral are not bumped by float noise.

use crate::error::{Error, Result};
use std::path::Path;

/// One bed-capacity category of government hospitals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeatCategory {
    pub seats: u64,
    pub hospitals: u64,
}

/// Inputs to the estimator. `avg_daily_records`, when set, overrides the
/// weekday-derived mean; planning documents usually quote a rounded official
/// figure and expect downstream numbers to be reproducible from it.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityInputs {
    pub weekday_avgs: [f64; 7],
    pub avg_daily_records: Option<f64>,
    pub categories: Vec<SeatCategory>,
    pub diagnostic_centers: u64,
    pub diagnostic_weight: f64,
    pub record_size_kb: f64,
    pub horizons_days: Vec<u64>,
}

impl CapacityInputs {
    /// The bundled national planning profile: 552 government hospitals in
    /// eleven bed categories, 8000 private diagnostic centers, and the
    /// official per-facility average of 9456 records/day.
    pub fn reference() -> Self {
        CapacityInputs {
            weekday_avgs: [10072.0, 9976.0, 10132.0, 9931.0, 8973.0, 5294.0, 11799.0],
            avg_daily_records: Some(9456.0),
            categories: vec![
                SeatCategory { seats: 10, hospitals: 17 },
                SeatCategory { seats: 20, hospitals: 32 },
                SeatCategory { seats: 31, hospitals: 266 },
                SeatCategory { seats: 50, hospitals: 158 },
                SeatCategory { seats: 100, hospitals: 31 },
                SeatCategory { seats: 150, hospitals: 1 },
                SeatCategory { seats: 200, hospitals: 1 },
                SeatCategory { seats: 250, hospitals: 26 },
                SeatCategory { seats: 500, hospitals: 2 },
                SeatCategory { seats: 500, hospitals: 11 },
                SeatCategory { seats: 1500, hospitals: 7 },
            ],
            diagnostic_centers: 8000,
            diagnostic_weight: 0.25,
            record_size_kb: 1.0,
            horizons_days: vec![1, 365, 1825],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weekday_avgs.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Capacity("weekday averages must be non-negative".into()));
        }
        if let Some(r) = self.avg_daily_records {
            if r < 0.0 || !r.is_finite() {
                return Err(Error::Capacity("average daily records must be non-negative".into()));
            }
        }
        if !(self.diagnostic_weight > 0.0 && self.diagnostic_weight <= 1.0) {
            return Err(Error::Capacity(format!(
                "diagnostic weight {} outside (0, 1]",
                self.diagnostic_weight
            )));
        }
        if !(self.record_size_kb > 0.0) {
            return Err(Error::Capacity("record size must be positive".into()));
        }
        Ok(())
    }

    /// The effective per-facility average: the configured official figure
    /// when present, otherwise the weekday mean.
    pub fn r_bar(&self) -> f64 {
        self.avg_daily_records.unwrap_or_else(|| average_daily_records(&self.weekday_avgs))
    }

    /// Sum of the listed seat values, one term per category row; the
    /// denominator of every weight. Rows sharing a seat value each count.
    pub fn seat_sum(&self) -> u64 {
        self.categories.iter().map(|c| c.seats).sum()
    }
}

/// Arithmetic mean of the seven weekday averages.
pub fn average_daily_records(weekday_avgs: &[f64; 7]) -> f64 {
    weekday_avgs.iter().sum::<f64>() / 7.0
}

/// Rounds an expected load to whole records: up, except that quotients within
/// 1e-9 of an integer snap to it.
fn round_load(q: f64) -> u64 {
    let nearest = q.round();
    if (q - nearest).abs() < 1e-9 {
        nearest as u64
    } else {
        q.ceil() as u64
    }
}

/// Unrounded expected daily records for one category:
/// (s / ΣS) · n · r̄, with the weight taken as the exact quotient.
pub fn raw_category_load(seats: u64, hospitals: u64, r_bar: f64, seat_sum: u64) -> Result<f64> {
    if seat_sum == 0 {
        return Err(Error::Capacity("seat sum is zero; weights are undefined".into()));
    }
    Ok(seats as f64 * hospitals as f64 * r_bar / seat_sum as f64)
}

/// Expected daily records for one category, rounded up to whole records.
pub fn category_load(seats: u64, hospitals: u64, r_bar: f64, seat_sum: u64) -> Result<u64> {
    Ok(round_load(raw_category_load(seats, hospitals, r_bar, seat_sum)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryLoad {
    pub seats: u64,
    pub hospitals: u64,
    pub weight: f64,
    pub load: u64,
}

/// Storage projection for one horizon. The quoted planning figures mix
/// conventions (decimal kilobytes-to-gigabytes, then a division by 1024 into
/// terabytes), so the pure-decimal and pure-binary readings are carried too.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeRow {
    pub days: u64,
    pub size_kb: f64,
    pub gb_decimal: f64,
    pub tb_mixed: f64,
    pub tb_decimal: f64,
    pub tb_binary: f64,
}

/// Size projection from a daily record count, horizon, and per-record size.
pub fn storage_size(daily_records: u64, days: u64, record_size_kb: f64) -> SizeRow {
    let size_kb = daily_records as f64 * days as f64 * record_size_kb;
    let gb_decimal = size_kb / 1e6;
    SizeRow {
        days,
        size_kb,
        gb_decimal,
        tb_mixed: gb_decimal / 1024.0,
        tb_decimal: size_kb / 1e9,
        tb_binary: size_kb / (1024.0 * 1024.0 * 1024.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityReport {
    pub r_bar: f64,
    pub r_bar_computed: f64,
    pub seat_sum: u64,
    pub per_category: Vec<CategoryLoad>,
    pub govt_hospitals: u64,
    pub govt_total: u64,
    pub diagnostic_centers: u64,
    pub diagnostic_total: u64,
    pub daily_total: u64,
    pub record_size_kb: f64,
    pub sizes: Vec<SizeRow>,
}

/// Full estimate: per-category loads, the three totals, and a size projection
/// per requested horizon.
pub fn national_load(inputs: &CapacityInputs) -> Result<CapacityReport> {
    inputs.validate()?;
    let r_bar = inputs.r_bar();
    let seat_sum = inputs.seat_sum();
    let mut per_category = Vec::with_capacity(inputs.categories.len());
    let mut govt_total = 0u64;
    let mut govt_hospitals = 0u64;
    for c in &inputs.categories {
        let load = category_load(c.seats, c.hospitals, r_bar, seat_sum)?;
        per_category.push(CategoryLoad {
            seats: c.seats,
            hospitals: c.hospitals,
            weight: c.seats as f64 / seat_sum as f64,
            load,
        });
        govt_total += load;
        govt_hospitals += c.hospitals;
    }
    let diagnostic_total =
        round_load(inputs.diagnostic_centers as f64 * inputs.diagnostic_weight * r_bar);
    let daily_total = govt_total + diagnostic_total;
    let sizes = inputs
        .horizons_days
        .iter()
        .map(|&d| storage_size(daily_total, d, inputs.record_size_kb))
        .collect();
    Ok(CapacityReport {
        r_bar,
        r_bar_computed: average_daily_records(&inputs.weekday_avgs),
        seat_sum,
        per_category,
        govt_hospitals,
        govt_total,
        diagnostic_centers: inputs.diagnostic_centers,
        diagnostic_total,
        daily_total,
        record_size_kb: inputs.record_size_kb,
        sizes,
    })
}

/// Writes the report as one CSV: category rows, totals, then size rows.
pub fn write_report_csv(report: &CapacityReport, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("kind,seats,hospitals,weight,days,value,unit\n");
    for c in &report.per_category {
        out.push_str(&format!(
            "category,{},{},{:.6},,{},records/day\n",
            c.seats, c.hospitals, c.weight, c.load
        ));
    }
    out.push_str(&format!(
        "govt_total,,{},,,{},records/day\n",
        report.govt_hospitals, report.govt_total
    ));
    out.push_str(&format!(
        "diagnostic_total,,{},,,{},records/day\n",
        report.diagnostic_centers, report.diagnostic_total
    ));
    out.push_str(&format!("daily_total,,,,,{},records/day\n", report.daily_total));
    out.push_str(&format!("r_bar,,,,,{},records/day\n", report.r_bar));
    out.push_str(&format!("r_bar_computed,,,,,{},records/day\n", report.r_bar_computed));
    out.push_str(&format!("record_size,,,,,{},KB\n", report.record_size_kb));
    for s in &report.sizes {
        out.push_str(&format!("size_gb,,,,{},{:.6},GB\n", s.days, s.gb_decimal));
        out.push_str(&format!("size_tb,,,,{},{:.6},TB\n", s.days, s.tb_mixed));
        out.push_str(&format!("size_tb_decimal,,,,{},{:.6},TB\n", s.days, s.tb_decimal));
        out.push_str(&format!("size_tb_binary,,,,{},{:.6},TiB\n", s.days, s.tb_binary));
    }
    out.push_str(
        "note,,,,,record size defaults to 1.0 KB; a 0.1 KB per-record estimate is also in \
         circulation and can be configured,\n",
    );
    crate::warehouse::persist::write_atomic(path, out.as_bytes())
}

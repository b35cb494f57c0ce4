//! Disease-specific marts and the analytics that run on them: monthly case
//! series, environmental correlations, demographic distributions, weekday
//! load profile, and threshold-based outbreak detection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{age_band_label, Gender, TimeKey, WEEKDAY_NAMES};
use crate::report::{html_page, html_table, BarChart, Chart, ChartKind, Section};
use crate::warehouse::{persist, Warehouse};

pub const DEFAULT_OUTBREAK_K: f64 = 1.5;
pub const DEFAULT_OUTBREAK_WINDOW: usize = 12;

/// Which test codes a mart keeps, e.g. every code diagnosed as DENGUE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MartSpec {
    pub name: String,
    pub disease_codes: BTreeSet<String>,
}

impl MartSpec {
    pub fn new(name: &str, codes: impl IntoIterator<Item = String>) -> Result<Self> {
        let disease_codes: BTreeSet<String> = codes
            .into_iter()
            .map(|c| c.trim().to_ascii_uppercase())
            .filter(|c| !c.is_empty())
            .collect();
        if disease_codes.is_empty() {
            return Err(Error::Validation(format!("mart {name}: empty code set")));
        }
        if name.trim().is_empty() {
            return Err(Error::Validation("mart name must be non-empty".into()));
        }
        Ok(MartSpec { name: name.trim().to_string(), disease_codes })
    }

    /// Collects every code the store has filed under `diagnosis`.
    pub fn for_diagnosis(store: &Warehouse, diagnosis: &str) -> Result<Self> {
        let want = diagnosis.trim().to_ascii_uppercase();
        let dim = store
            .dim("test_attribute")
            .ok_or_else(|| Error::Validation("store lacks a test_attribute dimension".into()))?;
        let mut codes = Vec::new();
        for (key, attrs) in dim.iter() {
            let _ = key;
            if attrs.get(1).map(String::as_str) == Some(want.as_str()) {
                codes.push(attrs[0].clone());
            }
        }
        MartSpec::new(&want.to_ascii_lowercase(), codes)
    }
}

/// Copies the facts matching `spec` (and the ambient rows for their day and
/// place) into an independent store under `root`. An empty selection yields
/// an empty mart; deriving again overwrites with identical content.
pub fn derive_mart(spec: &MartSpec, store: &Warehouse, root: &Path) -> Result<Warehouse> {
    let attr_dim = store
        .dim("test_attribute")
        .ok_or_else(|| Error::Validation("store lacks a test_attribute dimension".into()))?;
    store.derive_filtered(root, |fact| {
        attr_dim
            .attr(fact.attribute, "code")
            .map(|code| spec.disease_codes.contains(code))
            .unwrap_or(false)
    })
}

/// Month-aligned counts and environmental means over a mart. The month list
/// is contiguous from the first to the last month holding a test fact;
/// environmental entries are None for months without ambient coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlySeries {
    pub months: Vec<(i32, u32)>,
    pub positives: Vec<u64>,
    pub tests: Vec<u64>,
    pub rainfall: Vec<Option<f64>>,
    pub humidity: Vec<Option<f64>>,
    pub temperature: Vec<Option<f64>>,
}

impl MonthlySeries {
    pub fn new(
        months: Vec<(i32, u32)>,
        positives: Vec<u64>,
        tests: Vec<u64>,
        rainfall: Vec<Option<f64>>,
        humidity: Vec<Option<f64>>,
        temperature: Vec<Option<f64>>,
    ) -> Result<Self> {
        let n = months.len();
        for (name, len) in [
            ("positives", positives.len()),
            ("tests", tests.len()),
            ("rainfall", rainfall.len()),
            ("humidity", humidity.len()),
            ("temperature", temperature.len()),
        ] {
            if len != n {
                return Err(Error::Validation(format!(
                    "series {name} has {len} entries for {n} months"
                )));
            }
        }
        if let Some(i) = (0..n).find(|&i| positives[i] > tests[i]) {
            return Err(Error::Validation(format!(
                "month {}: {} positives exceed {} tests",
                month_name(months[i]),
                positives[i],
                tests[i]
            )));
        }
        Ok(MonthlySeries { months, positives, tests, rainfall, humidity, temperature })
    }

    /// Counts only; environmental columns absent.
    pub fn from_counts(months: Vec<(i32, u32)>, positives: Vec<u64>, tests: Vec<u64>) -> Result<Self> {
        let n = months.len();
        MonthlySeries::new(months, positives, tests, vec![None; n], vec![None; n], vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    pub fn month_label(&self, index: usize) -> String {
        month_name(self.months[index])
    }

    /// Index of the highest positive count (first on ties).
    pub fn argmax_positives(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for i in 0..self.positives.len() {
            if best.map(|b| self.positives[i] > self.positives[b]).unwrap_or(true) {
                best = Some(i);
            }
        }
        best
    }
}

pub fn month_name((year, month): (i32, u32)) -> String {
    format!("{year:04}-{month:02}")
}

fn next_month((year, month): (i32, u32)) -> (i32, u32) {
    if month == 12 {
        (year + 1, 1)
    } else {
        (year, month + 1)
    }
}

/// Builds the monthly series for a mart: test and positive counts per month,
/// plus the mean of each ambient measure over that month's rows.
pub fn monthly_series(mart: &Warehouse) -> Result<MonthlySeries> {
    if mart.tests().is_empty() {
        return Err(Error::Validation("store has no test facts".into()));
    }
    let mut counts: BTreeMap<(i32, u32), (u64, u64)> = BTreeMap::new();
    for fact in mart.tests() {
        let slot = counts.entry(fact.time.year_month()).or_insert((0, 0));
        slot.0 += 1;
        slot.1 += u64::from(fact.result_positive);
    }
    let mut env: BTreeMap<(i32, u32), [(f64, u64); 3]> = BTreeMap::new();
    for fact in mart.ambients() {
        let slot = env.entry(fact.time.year_month()).or_insert([(0.0, 0); 3]);
        for (i, value) in
            [fact.avg_rainfall_mm, fact.humidity_pct, fact.temperature_c].into_iter().enumerate()
        {
            if let Some(v) = value {
                slot[i].0 += v;
                slot[i].1 += 1;
            }
        }
    }

    let first = *counts.keys().next().unwrap();
    let last = *counts.keys().next_back().unwrap();
    let mut months = Vec::new();
    let mut ym = first;
    loop {
        months.push(ym);
        if ym == last {
            break;
        }
        ym = next_month(ym);
    }
    let mut positives = Vec::with_capacity(months.len());
    let mut tests = Vec::with_capacity(months.len());
    let mut rainfall = Vec::with_capacity(months.len());
    let mut humidity = Vec::with_capacity(months.len());
    let mut temperature = Vec::with_capacity(months.len());
    for ym in &months {
        let (t, p) = counts.get(ym).copied().unwrap_or((0, 0));
        tests.push(t);
        positives.push(p);
        let means = env.get(ym).map(|slots| {
            slots.map(|(sum, n)| if n == 0 { None } else { Some(sum / n as f64) })
        });
        rainfall.push(means.and_then(|m| m[0]));
        humidity.push(means.and_then(|m| m[1]));
        temperature.push(means.and_then(|m| m[2]));
    }
    MonthlySeries::new(months, positives, tests, rainfall, humidity, temperature)
}

/// Pearson correlation coefficient, centered two-pass form, clamped to
/// [-1, 1] against float drift.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson_named(x, y, "first", "second")
}

pub fn pearson_named(x: &[f64], y: &[f64], x_name: &str, y_name: &str) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Validation(format!(
            "correlation inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientHistory("correlation needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation(x_name.into()));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation(y_name.into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvSeries {
    Rainfall,
    Humidity,
    Temperature,
}

impl EnvSeries {
    pub const ALL: [EnvSeries; 3] = [EnvSeries::Rainfall, EnvSeries::Humidity, EnvSeries::Temperature];

    pub fn name(self) -> &'static str {
        match self {
            EnvSeries::Rainfall => "rainfall",
            EnvSeries::Humidity => "humidity",
            EnvSeries::Temperature => "temperature",
        }
    }

    fn values(self, series: &MonthlySeries) -> &[Option<f64>] {
        match self {
            EnvSeries::Rainfall => &series.rainfall,
            EnvSeries::Humidity => &series.humidity,
            EnvSeries::Temperature => &series.temperature,
        }
    }
}

/// Correlates monthly positives against one environmental measure over the
/// months where that measure is present. Needs six such months.
pub fn correlate_one(series: &MonthlySeries, env: EnvSeries) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, value) in env.values(series).iter().enumerate() {
        if let Some(v) = value {
            xs.push(series.positives[i] as f64);
            ys.push(*v);
        }
    }
    if xs.len() < 6 {
        return Err(Error::InsufficientHistory(format!(
            "{} months with {} data; need at least 6",
            xs.len(),
            env.name()
        )));
    }
    pearson_named(&xs, &ys, "positives", env.name())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvCorrelations {
    pub r_rainfall: f64,
    pub r_humidity: f64,
    pub r_temperature: f64,
}

pub fn correlate_environment(series: &MonthlySeries) -> Result<EnvCorrelations> {
    Ok(EnvCorrelations {
        r_rainfall: correlate_one(series, EnvSeries::Rainfall)?,
        r_humidity: correlate_one(series, EnvSeries::Humidity)?,
        r_temperature: correlate_one(series, EnvSeries::Temperature)?,
    })
}

/// Percent share with a zero-safe denominator.
pub fn share_pct(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandShare {
    pub label: String,
    pub count: u64,
    pub share_pct: f64,
}

/// Facts per age band, as shares of the whole store. `band_width_years`
/// must be a multiple of ten; wider bands merge adjacent decades.
pub fn age_distribution(mart: &Warehouse, band_width_years: u32) -> Result<Vec<BandShare>> {
    if band_width_years == 0 || band_width_years % 10 != 0 {
        return Err(Error::Query(format!(
            "band width {band_width_years} is not a multiple of 10 years"
        )));
    }
    if mart.tests().is_empty() {
        return Err(Error::Validation("store has no test facts".into()));
    }
    let per_group = band_width_years / 10;
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for fact in mart.tests() {
        let band = mart.resolve_test(fact).age_band as u32;
        *counts.entry(band / per_group).or_insert(0) += 1;
    }
    let total: u64 = counts.values().sum();
    let mut out = Vec::new();
    for (group, count) in counts {
        let first_band = (group * per_group) as u8;
        let last_band = (group * per_group + per_group - 1).min(12) as u8;
        let label = if last_band >= 12 {
            format!("{}+", first_band as u32 * 10)
        } else if per_group == 1 {
            age_band_label(first_band)
        } else {
            format!("{}-{}", first_band as u32 * 10, last_band as u32 * 10 + 9)
        };
        out.push(BandShare { label, count, share_pct: share_pct(count, total) });
    }
    Ok(out)
}

/// Facts per gender, always reporting all three categories.
pub fn gender_distribution(mart: &Warehouse) -> Result<Vec<BandShare>> {
    if mart.tests().is_empty() {
        return Err(Error::Validation("store has no test facts".into()));
    }
    let mut counts: BTreeMap<&'static str, u64> = BTreeMap::new();
    for fact in mart.tests() {
        *counts.entry(mart.resolve_test(fact).gender.as_str()).or_insert(0) += 1;
    }
    let total: u64 = counts.values().sum();
    Ok([Gender::Male, Gender::Female, Gender::Other]
        .into_iter()
        .map(|g| {
            let count = counts.get(g.as_str()).copied().unwrap_or(0);
            BandShare { label: g.as_str().to_string(), count, share_pct: share_pct(count, total) }
        })
        .collect())
}

/// Average records per weekday: total facts on that weekday divided by the
/// number of distinct dates of that weekday seen.
#[derive(Debug, Clone, PartialEq)]
pub struct WeekdayProfile {
    pub totals: [u64; 7],
    pub days: [u64; 7],
    pub avg: [f64; 7],
}

impl WeekdayProfile {
    /// Overall mean records per distinct date.
    pub fn mean_daily(&self) -> f64 {
        let records: u64 = self.totals.iter().sum();
        let days: u64 = self.days.iter().sum();
        if days == 0 {
            0.0
        } else {
            records as f64 / days as f64
        }
    }
}

pub fn weekday_profile(times: impl IntoIterator<Item = TimeKey>) -> WeekdayProfile {
    let mut totals = [0u64; 7];
    let mut dates: [BTreeSet<i64>; 7] = Default::default();
    for t in times {
        let w = t.weekday_index();
        totals[w] += 1;
        dates[w].insert(t.day_key());
    }
    let days = std::array::from_fn(|w| dates[w].len() as u64);
    let avg = std::array::from_fn(|w| {
        if days[w] == 0 {
            0.0
        } else {
            totals[w] as f64 / days[w] as f64
        }
    });
    WeekdayProfile { totals, days, avg }
}

/// One maximal consecutive run of flagged months.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutbreakRun {
    pub start: usize,
    pub peak: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutbreakReport {
    pub k: f64,
    pub window: usize,
    pub flagged: Vec<usize>,
    pub runs: Vec<OutbreakRun>,
}

impl OutbreakReport {
    /// First flagged month of the first run.
    pub fn onset(&self) -> Option<usize> {
        self.runs.first().map(|r| r.start)
    }

    /// Peak month of the first run.
    pub fn peak(&self) -> Option<usize> {
        self.runs.first().map(|r| r.peak)
    }
}

/// Flags every month whose positives exceed mean + k * stddev of the
/// trailing `window` months (population stddev). Runs of consecutive flags
/// carry onset and peak annotations.
pub fn detect_outbreak(series: &MonthlySeries, k: f64, window: usize) -> Result<OutbreakReport> {
    if !(k.is_finite() && k >= 0.0) {
        return Err(Error::Query(format!("threshold multiplier {k} must be non-negative")));
    }
    if window < 2 {
        return Err(Error::Query(format!("baseline window {window} is too small")));
    }
    let n = series.len();
    if n <= window {
        return Err(Error::InsufficientHistory(format!(
            "{n} months of history; outbreak detection needs more than {window}"
        )));
    }
    let mut flagged = Vec::new();
    for i in window..n {
        let base: Vec<f64> = series.positives[i - window..i].iter().map(|&p| p as f64).collect();
        let mean = base.iter().sum::<f64>() / window as f64;
        let var = base.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / window as f64;
        if (series.positives[i] as f64) > mean + k * var.sqrt() {
            flagged.push(i);
        }
    }
    let mut runs: Vec<OutbreakRun> = Vec::new();
    for &i in &flagged {
        match runs.last_mut() {
            Some(run) if run.end + 1 == i => {
                run.end = i;
                if series.positives[i] > series.positives[run.peak] {
                    run.peak = i;
                }
            }
            _ => runs.push(OutbreakRun { start: i, peak: i, end: i }),
        }
    }
    Ok(OutbreakReport { k, window, flagged, runs })
}

fn csv_line(fields: &[String]) -> String {
    let mut escaped = Vec::with_capacity(fields.len());
    for f in fields {
        if f.contains(',') || f.contains('"') || f.contains('\n') {
            escaped.push(format!("\"{}\"", f.replace('"', "\"\"")));
        } else {
            escaped.push(f.clone());
        }
    }
    escaped.join(",") + "\n"
}

fn opt3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

/// Writes the analytics bundle for a mart: one CSV per table plus a single
/// self-contained HTML page with embedded charts. Returns the file names.
pub fn write_mart_report(
    mart: &Warehouse,
    out_dir: &Path,
    k: f64,
    window: usize,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir)?;
    let series = monthly_series(mart)?;
    let ages = age_distribution(mart, 10)?;
    let genders = gender_distribution(mart)?;
    let weekdays = weekday_profile(mart.tests().iter().map(|t| t.time));
    let outbreak = detect_outbreak(&series, k, window);
    let mut written = Vec::new();

    let mut csv = String::from("month,positives,tests,rainfall_mm,humidity_pct,temperature_c\n");
    for i in 0..series.len() {
        csv.push_str(&csv_line(&[
            series.month_label(i),
            series.positives[i].to_string(),
            series.tests[i].to_string(),
            opt3(series.rainfall[i]),
            opt3(series.humidity[i]),
            opt3(series.temperature[i]),
        ]));
    }
    persist::write_atomic(&out_dir.join("monthly_series.csv"), csv.as_bytes())?;
    written.push("monthly_series.csv".to_string());

    let mut csv = String::from("age_band,count,share_pct\n");
    for b in &ages {
        csv.push_str(&csv_line(&[b.label.clone(), b.count.to_string(), format!("{:.2}", b.share_pct)]));
    }
    persist::write_atomic(&out_dir.join("age_distribution.csv"), csv.as_bytes())?;
    written.push("age_distribution.csv".to_string());

    let mut csv = String::from("gender,count,share_pct\n");
    for b in &genders {
        csv.push_str(&csv_line(&[b.label.clone(), b.count.to_string(), format!("{:.2}", b.share_pct)]));
    }
    persist::write_atomic(&out_dir.join("gender_distribution.csv"), csv.as_bytes())?;
    written.push("gender_distribution.csv".to_string());

    let mut csv = String::from("weekday,records,days,avg_per_day\n");
    for w in 0..7 {
        csv.push_str(&csv_line(&[
            WEEKDAY_NAMES[w].to_string(),
            weekdays.totals[w].to_string(),
            weekdays.days[w].to_string(),
            format!("{:.2}", weekdays.avg[w]),
        ]));
    }
    persist::write_atomic(&out_dir.join("weekday_profile.csv"), csv.as_bytes())?;
    written.push("weekday_profile.csv".to_string());

    let mut csv = String::from("series,r,months_used\n");
    for env in EnvSeries::ALL {
        let used = env.values(&series).iter().flatten().count();
        match correlate_one(&series, env) {
            Ok(r) => csv.push_str(&csv_line(&[env.name().into(), format!("{r:.6}"), used.to_string()])),
            Err(e) => csv.push_str(&csv_line(&[env.name().into(), format!("unavailable: {e}"), used.to_string()])),
        }
    }
    persist::write_atomic(&out_dir.join("correlations.csv"), csv.as_bytes())?;
    written.push("correlations.csv".to_string());

    let mut csv = String::from("month,positives,flagged,onset,peak\n");
    if let Ok(ob) = &outbreak {
        for i in 0..series.len() {
            let flagged = ob.flagged.contains(&i);
            let onset = ob.runs.iter().any(|r| r.start == i);
            let peak = ob.runs.iter().any(|r| r.peak == i);
            csv.push_str(&csv_line(&[
                series.month_label(i),
                series.positives[i].to_string(),
                u8::from(flagged).to_string(),
                u8::from(onset).to_string(),
                u8::from(peak).to_string(),
            ]));
        }
    }
    persist::write_atomic(&out_dir.join("outbreak.csv"), csv.as_bytes())?;
    written.push("outbreak.csv".to_string());

    let html = mart_report_html(mart, &series, &ages, &genders, &weekdays, &outbreak);
    persist::write_atomic(&out_dir.join("report.html"), html.as_bytes())?;
    written.push("report.html".to_string());
    Ok(written)
}

fn mart_report_html(
    mart: &Warehouse,
    series: &MonthlySeries,
    ages: &[BandShare],
    genders: &[BandShare],
    weekdays: &WeekdayProfile,
    outbreak: &Result<OutbreakReport>,
) -> String {
    let total_tests: u64 = series.tests.iter().sum();
    let total_pos: u64 = series.positives.iter().sum();
    let mut sections = Vec::new();

    let overview = html_table(
        &["metric", "value"],
        &[
            vec!["test facts".into(), total_tests.to_string()],
            vec!["positive results".into(), total_pos.to_string()],
            vec!["positivity".into(), format!("{:.2}%", share_pct(total_pos, total_tests))],
            vec![
                "period".into(),
                format!("{} to {}", series.month_label(0), series.month_label(series.len() - 1)),
            ],
            vec!["ambient rows".into(), mart.ambients().len().to_string()],
        ],
    );
    sections.push(Section::new("Overview", overview));

    let mut monthly = Chart::new(ChartKind::Line, "Monthly test volume", "month", "records");
    monthly.add_series(
        "positives",
        series.positives.iter().enumerate().map(|(i, &p)| (i as f64, p as f64)).collect(),
    );
    monthly.add_series(
        "tests",
        series.tests.iter().enumerate().map(|(i, &t)| (i as f64, t as f64)).collect(),
    );
    monthly.set_x_ticks(
        (0..series.len()).map(|i| (i as f64, series.month_label(i))).collect(),
    );
    if let Ok(ob) = outbreak {
        monthly.add_markers(
            ob.flagged.iter().map(|&i| (i as f64, series.positives[i] as f64)).collect(),
        );
    }
    sections.push(Section::new("Monthly series", monthly.to_svg()));

    let mut corr_rows = Vec::new();
    let mut corr_charts = String::new();
    for env in EnvSeries::ALL {
        let used = env.values(series).iter().flatten().count();
        let r_text = match correlate_one(series, env) {
            Ok(r) => format!("{r:.4}"),
            Err(e) => format!("unavailable ({e})"),
        };
        corr_rows.push(vec![env.name().to_string(), r_text, used.to_string()]);
        let pts: Vec<(f64, f64)> = env
            .values(series)
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|x| (x, series.positives[i] as f64)))
            .collect();
        if !pts.is_empty() {
            let mut scatter = Chart::new(
                ChartKind::Scatter,
                &format!("Positives vs {}", env.name()),
                env.name(),
                "monthly positives",
            );
            scatter.add_series(env.name(), pts);
            corr_charts.push_str(&scatter.to_svg());
        }
    }
    sections.push(Section::new(
        "Environmental correlation",
        format!("{}\n{}", html_table(&["series", "pearson r", "months"], &corr_rows), corr_charts),
    ));

    let mut age_chart = BarChart::new("Cases by age band", "records");
    for b in ages {
        age_chart.push(&b.label, b.count as f64);
    }
    let age_rows: Vec<Vec<String>> = ages
        .iter()
        .map(|b| vec![b.label.clone(), b.count.to_string(), format!("{:.2}", b.share_pct)])
        .collect();
    sections.push(Section::new(
        "Age distribution",
        format!("{}\n{}", html_table(&["band", "count", "share %"], &age_rows), age_chart.to_svg()),
    ));

    let mut gender_chart = BarChart::new("Cases by gender", "records");
    for b in genders {
        gender_chart.push(&b.label, b.count as f64);
    }
    let gender_rows: Vec<Vec<String>> = genders
        .iter()
        .map(|b| vec![b.label.clone(), b.count.to_string(), format!("{:.2}", b.share_pct)])
        .collect();
    sections.push(Section::new(
        "Gender distribution",
        format!("{}\n{}", html_table(&["gender", "count", "share %"], &gender_rows), gender_chart.to_svg()),
    ));

    let mut weekday_chart = BarChart::new("Average records per weekday", "records/day");
    for w in 0..7 {
        weekday_chart.push(WEEKDAY_NAMES[w], weekdays.avg[w]);
    }
    let weekday_rows: Vec<Vec<String>> = (0..7)
        .map(|w| {
            vec![
                WEEKDAY_NAMES[w].to_string(),
                weekdays.totals[w].to_string(),
                weekdays.days[w].to_string(),
                format!("{:.2}", weekdays.avg[w]),
            ]
        })
        .collect();
    sections.push(Section::new(
        "Weekday profile",
        format!(
            "{}\n{}<p>mean per day: {:.2}</p>",
            html_table(&["weekday", "records", "days", "avg/day"], &weekday_rows),
            weekday_chart.to_svg(),
            weekdays.mean_daily()
        ),
    ));

    let outbreak_body = match outbreak {
        Ok(ob) if ob.runs.is_empty() => "<p>No months exceeded the outbreak threshold.</p>".to_string(),
        Ok(ob) => {
            let rows: Vec<Vec<String>> = ob
                .runs
                .iter()
                .map(|r| {
                    vec![
                        series.month_label(r.start),
                        series.month_label(r.peak),
                        series.month_label(r.end),
                        series.positives[r.peak].to_string(),
                    ]
                })
                .collect();
            format!(
                "<p>threshold: trailing {}-month mean + {:.1} standard deviations</p>\n{}",
                ob.window,
                ob.k,
                html_table(&["onset", "peak", "through", "peak positives"], &rows)
            )
        }
        Err(e) => format!("<p>outbreak detection unavailable: {}</p>", crate::report::xml_escape(&e.to_string())),
    };
    sections.push(Section::new("Outbreak detection", outbreak_body));

    html_page("Disease mart report", &sections)
}

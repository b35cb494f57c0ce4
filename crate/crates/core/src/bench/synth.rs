//! Deterministic synthetic source corpus: clinical CSVs from two providers,
//! three environmental feeds, and a code map, with known ground truth planted
//! throughout (seasonal surge, age and gender mix, weekday load shape,
//! rainfall-driven positives) so analytics output can be checked exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::ingest::{parse_code_map, SourceDescriptor, SourceKind};
use crate::linkage::encode_full_name;
use crate::model::{Gender, TimeKey};
use crate::warehouse::persist;

/// Monthly positive dengue results planted over 2021-2022: a mild 2021
/// season and a sharp 2022 surge peaking in August.
pub const PLANTED_POSITIVES: [u64; 24] = [
    305, 288, 322, 339, 373, 475, 576, 644, 542, 441, 356, 322, 339, 322, 356, 390, 441, 1424,
    3220, 5594, 3729, 1763, 610, 407,
];

/// Average records per weekday (Sun..Sat) the generator reproduces.
pub const WEEKDAY_WEIGHTS: [u64; 7] = [10_072, 9_976, 10_132, 9_931, 8_973, 5_294, 11_799];

/// Gender mix of clinical rows (male : female : other).
pub const GENDER_WEIGHTS: [u64; 3] = [39_801, 30_246, 2];

/// Ten-year age band weights, bands 0-9 through 80+. The first four bands
/// hold 77.4% of the mass.
pub const AGE_BAND_WEIGHTS: [u64; 9] = [240, 200, 180, 154, 96, 60, 40, 20, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Dengue test rows to generate across all clinical files.
    pub rows: u64,
    pub seed: u64,
    pub start: (i32, u32),
    pub months: usize,
    /// How many of the 30 bundled places to use.
    pub geos: usize,
    /// Extra non-dengue rows, as a fraction of `rows`.
    pub cbc_share: f64,
    pub malformed_clinical: usize,
    pub malformed_ambient: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            rows: 100_000,
            seed: 42,
            start: (2021, 1),
            months: 24,
            geos: 30,
            cbc_share: 0.02,
            malformed_clinical: 25,
            malformed_ambient: 5,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(Error::Validation("scenario needs at least one row".into()));
        }
        if self.months == 0 || self.months > 120 {
            return Err(Error::Validation(format!("{} months outside 1..=120", self.months)));
        }
        if self.geos == 0 || self.geos > GEO_POOL.len() {
            return Err(Error::Validation(format!(
                "{} places outside 1..={}",
                self.geos,
                GEO_POOL.len()
            )));
        }
        if !(0.0..=0.5).contains(&self.cbc_share) {
            return Err(Error::Validation(format!("cbc share {} outside [0, 0.5]", self.cbc_share)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedFile {
    pub name: String,
    /// Data rows written, excluding the header.
    pub rows: u64,
    /// Rows deliberately broken; ingestion must reject exactly these.
    pub expected_rejects: u64,
}

/// Ground truth the generator planted, for checking analytics against.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSummary {
    pub seed: u64,
    pub months: Vec<(i32, u32)>,
    pub positives: Vec<u64>,
    pub tests: Vec<u64>,
    /// male, female, other over the dengue rows.
    pub gender_counts: [u64; 3],
    /// Ten-year bands over the dengue rows.
    pub age_band_counts: Vec<u64>,
    pub cbc_rows: u64,
    pub files: Vec<GeneratedFile>,
}

impl PlantSummary {
    pub fn peak_month(&self) -> (i32, u32) {
        let mut best = 0;
        for i in 0..self.positives.len() {
            if self.positives[i] > self.positives[best] {
                best = i;
            }
        }
        self.months[best]
    }

    /// Share of dengue rows in the 0-40 age range, in percent.
    pub fn age_0_40_share(&self) -> f64 {
        let young: u64 = self.age_band_counts.iter().take(4).sum();
        let total: u64 = self.age_band_counts.iter().sum();
        crate::datamart::share_pct(young, total)
    }
}

/// Largest-remainder apportionment: integer totals proportional to weights,
/// summing exactly to `total`. Ties go to the lower index.
pub fn allocate_exact(total: u64, weights: &[u64]) -> Vec<u64> {
    let sum: u128 = weights.iter().map(|&w| w as u128).sum();
    if sum == 0 {
        let mut out = vec![0u64; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = total;
        }
        return out;
    }
    let mut floors = Vec::with_capacity(weights.len());
    let mut rems: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let product = total as u128 * w as u128;
        floors.push((product / sum) as u64);
        rems.push((product % sum, i));
    }
    let assigned: u64 = floors.iter().sum();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take((total - assigned) as usize) {
        floors[i] += 1;
    }
    floors
}

/// Monthly (tests, positives) for a scenario size, positives <= tests.
pub fn monthly_plan(cfg: &ScenarioConfig) -> (Vec<u64>, Vec<u64>) {
    let weights: Vec<u64> =
        (0..cfg.months).map(|i| PLANTED_POSITIVES[i % PLANTED_POSITIVES.len()]).collect();
    let tests = allocate_exact(cfg.rows, &weights);
    let weight_sum: u128 = weights.iter().map(|&w| w as u128).sum();
    let pos_total =
        ((cfg.rows as u128 * weight_sum * 23_578 / 100_000 + weight_sum / 2) / weight_sum) as u64;
    let mut positives = allocate_exact(pos_total.min(cfg.rows), &weights);
    // Tiny scenarios can round a month's positives past its tests; push the
    // surplus into months with slack.
    let mut surplus = 0u64;
    for i in 0..positives.len() {
        if positives[i] > tests[i] {
            surplus += positives[i] - tests[i];
            positives[i] = tests[i];
        }
    }
    for i in 0..positives.len() {
        if surplus == 0 {
            break;
        }
        let slack = tests[i] - positives[i];
        let add = slack.min(surplus);
        positives[i] += add;
        surplus -= add;
    }
    (tests, positives)
}

const GEO_POOL: [(&str, &str, &str, &str); 30] = [
    ("Dhaka", "Dhanmondi", "Dhaka", "Dhaka"),
    ("Dhaka", "Mirpur", "Dhaka", "Dhaka"),
    ("Dhaka", "Uttara", "Dhaka", "Dhaka"),
    ("Savar", "Savar Sadar", "Dhaka", "Dhaka"),
    ("Narayanganj", "Fatullah", "Narayanganj", "Dhaka"),
    ("Gazipur", "Tongi", "Gazipur", "Dhaka"),
    ("Chattogram", "Kotwali", "Chattogram", "Chattogram"),
    ("Chattogram", "Pahartali", "Chattogram", "Chattogram"),
    ("Cox's Bazar", "Cox's Bazar Sadar", "Cox's Bazar", "Chattogram"),
    ("Cumilla", "Adarsha Sadar", "Cumilla", "Chattogram"),
    ("Feni", "Feni Sadar", "Feni", "Chattogram"),
    ("Khulna", "Khalishpur", "Khulna", "Khulna"),
    ("Jashore", "Jashore Sadar", "Jashore", "Khulna"),
    ("Kushtia", "Kushtia Sadar", "Kushtia", "Khulna"),
    ("Satkhira", "Satkhira Sadar", "Satkhira", "Khulna"),
    ("Rajshahi", "Boalia", "Rajshahi", "Rajshahi"),
    ("Bogura", "Bogura Sadar", "Bogura", "Rajshahi"),
    ("Pabna", "Pabna Sadar", "Pabna", "Rajshahi"),
    ("Sirajganj", "Sirajganj Sadar", "Sirajganj", "Rajshahi"),
    ("Barishal", "Band Road", "Barishal", "Barishal"),
    ("Bhola", "Bhola Sadar", "Bhola", "Barishal"),
    ("Patuakhali", "Patuakhali Sadar", "Patuakhali", "Barishal"),
    ("Sylhet", "Sylhet Sadar", "Sylhet", "Sylhet"),
    ("Moulvibazar", "Moulvibazar Sadar", "Moulvibazar", "Sylhet"),
    ("Habiganj", "Habiganj Sadar", "Habiganj", "Sylhet"),
    ("Rangpur", "Rangpur Sadar", "Rangpur", "Rangpur"),
    ("Dinajpur", "Dinajpur Sadar", "Dinajpur", "Rangpur"),
    ("Saidpur", "Saidpur Sadar", "Nilphamari", "Rangpur"),
    ("Mymensingh", "Mymensingh Sadar", "Mymensingh", "Mymensingh"),
    ("Jamalpur", "Jamalpur Sadar", "Jamalpur", "Mymensingh"),
];

const MALE_NAMES: [&str; 24] = [
    "Abdul", "Rahim", "Karim", "Sobuj", "Rafiq", "Jamal", "Kamal", "Hasan", "Imran", "Farid",
    "Mahmud", "Nasir", "Omar", "Rashid", "Salman", "Tariq", "Yusuf", "Zahir", "Habib", "Iqbal",
    "Javed", "Khalid", "Liton", "Monir",
];

const FEMALE_NAMES: [&str; 20] = [
    "Rina", "Salma", "Nasrin", "Fatema", "Ayesha", "Taslima", "Sharmin", "Farzana", "Rokeya",
    "Sultana", "Jesmin", "Khadija", "Laila", "Mariam", "Nazma", "Parvin", "Rabeya", "Shirin",
    "Tahmina", "Amina",
];

const SURNAMES: [&str; 20] = [
    "Chowdhury", "Akter", "Rahman", "Hossain", "Islam", "Khan", "Ahmed", "Begum", "Uddin", "Miah",
    "Sarker", "Mollah", "Sheikh", "Bhuiyan", "Talukder", "Karim", "Das", "Roy", "Siddique", "Ali",
];

const PROVIDERS_A: [&str; 3] =
    ["Dhaka Medical College Hospital", "Salimullah Medical College", "Mugda General Hospital"];
const LABS_A: [&str; 2] = ["DMCH Central Lab", "Pathology Unit 2"];
const PROVIDERS_B: [&str; 3] =
    ["Popular Diagnostic Centre", "Ibn Sina Diagnostic", "Labaid Diagnostic"];
const LABS_B: [&str; 2] = ["Molecular Lab", "Serology Lab"];

const CODES_TSV: &str = "# test name\tcanonical code\n\
NS1 Antigen\tDENGUE_NS1\n\
Dengue IgM\tDENGUE_IGM\n\
Complete Blood Count\tCBC\n";

#[derive(Debug, Clone)]
struct Patient {
    name: String,
    band: u8,
    gender: Gender,
    age_text: String,
}

impl Patient {
    /// Everything the pseudonymous key derives from; rows with equal
    /// canon and equal time and code would collapse in staging.
    fn canon(&self) -> String {
        let mut codes: Vec<&str> = Vec::new();
        let encoded = encode_full_name(&self.name).expect("generated names encode");
        for code in &encoded {
            codes.push(code.as_str());
        }
        codes.sort_unstable();
        format!("{}|{}|{}|{}", codes.join(","), self.band, self.gender.as_str(), self.age_text)
    }
}

fn gauss(rng: &mut ChaCha12Rng, sigma: f64) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn days_in_month(year: i32, month: u32) -> u32 {
    let (ny, nm) = if month == 12 { (year + 1, 1) } else { (year, month + 1) };
    let first = chrono::NaiveDate::from_ymd_opt(year, month, 1).unwrap();
    let next = chrono::NaiveDate::from_ymd_opt(ny, nm, 1).unwrap();
    (next - first).num_days() as u32
}

fn weekday_of(year: i32, month: u32, day: u32) -> usize {
    use chrono::Datelike;
    chrono::NaiveDate::from_ymd_opt(year, month, day).unwrap().weekday().num_days_from_sunday()
        as usize
}

/// Draws a day of the month with probability proportional to the planted
/// weekday weights.
fn weighted_day(rng: &mut ChaCha12Rng, year: i32, month: u32) -> u32 {
    let days = days_in_month(year, month);
    let weights: Vec<u64> = (1..=days).map(|d| WEEKDAY_WEIGHTS[weekday_of(year, month, d)]).collect();
    let total: u64 = weights.iter().sum();
    let mut draw = rng.gen_range(0..total);
    for (i, w) in weights.iter().enumerate() {
        if draw < *w {
            return i as u32 + 1;
        }
        draw -= w;
    }
    days
}

/// Rewrites a name without changing its phonetic codes: case changes, or
/// doubling the final consonant of the last word.
fn spelling_variant(rng: &mut ChaCha12Rng, name: &str) -> String {
    match rng.gen_range(0..3u8) {
        0 => name.to_ascii_uppercase(),
        1 => name.to_ascii_lowercase(),
        _ => {
            let mut chars: Vec<char> = name.chars().collect();
            for i in (0..chars.len()).rev() {
                let c = chars[i].to_ascii_lowercase();
                if c.is_ascii_alphabetic() && !"aeiouhwy".contains(c) {
                    chars.insert(i, chars[i]);
                    break;
                }
            }
            chars.into_iter().collect()
        }
    }
}

fn fresh_patient(rng: &mut ChaCha12Rng, band: u8, gender: Gender) -> Patient {
    let first = match gender {
        Gender::Female => FEMALE_NAMES[rng.gen_range(0..FEMALE_NAMES.len())],
        Gender::Male => MALE_NAMES[rng.gen_range(0..MALE_NAMES.len())],
        _ => {
            if rng.gen_bool(0.5) {
                MALE_NAMES[rng.gen_range(0..MALE_NAMES.len())]
            } else {
                FEMALE_NAMES[rng.gen_range(0..FEMALE_NAMES.len())]
            }
        }
    };
    let last = SURNAMES[rng.gen_range(0..SURNAMES.len())];
    let lo = band as u32 * 10;
    let hi = (lo + 9).min(89);
    let age = rng.gen_range(lo..=hi.max(lo));
    Patient {
        name: format!("{first} {last}"),
        band,
        gender,
        age_text: age.to_string(),
    }
}

struct ClinicalRow {
    patient: Patient,
    written_name: String,
    time: (i32, u32, u32, u32, u32, u32),
    geo: usize,
    term_index: usize,
    positive: bool,
    value: f64,
    to_b: bool,
}

/// The three test terms as they appear in source files; index 2 is the
/// non-dengue control.
const TERMS_A: [&str; 3] = ["NS1 Antigen", "Dengue IgM", "Complete Blood Count"];
const TERMS_B: [&str; 3] = ["ns1 antigen", "DENGUE IGM", "complete blood count"];

fn clinical_descriptor_a() -> SourceDescriptor {
    let pairs = [
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
    ];
    SourceDescriptor {
        source_id: "hospital_a".into(),
        kind: SourceKind::Hospital,
        zone_offset_minutes: 360,
        field_map: pairs.iter().map(|(s, c)| (s.to_string(), c.to_string())).collect(),
        code_map: parse_code_map(CODES_TSV).expect("bundled code map parses"),
    }
}

fn clinical_descriptor_b() -> SourceDescriptor {
    let pairs = [
        ("Name", "patient_name"),
        ("Age", "age"),
        ("Sex", "gender"),
        ("Test Name", "test_name"),
        ("Value", "result_value"),
        ("Status", "result_status"),
        ("Collected At", "timestamp"),
        ("City", "city"),
        ("Upazila", "upazila"),
        ("District", "district"),
        ("Division", "division"),
        ("Facility", "provider"),
        ("Laboratory", "lab"),
    ];
    SourceDescriptor {
        source_id: "hospital_b".into(),
        kind: SourceKind::DiagnosticCenter,
        zone_offset_minutes: 360,
        field_map: pairs.iter().map(|(s, c)| (s.to_string(), c.to_string())).collect(),
        code_map: parse_code_map(CODES_TSV).expect("bundled code map parses"),
    }
}

fn ambient_descriptor(source_id: &str, kind: SourceKind, measures: &[(&str, &str)]) -> SourceDescriptor {
    let mut pairs = vec![
        ("Date", "timestamp"),
        ("City", "city"),
        ("Upazila", "upazila"),
        ("District", "district"),
        ("Division", "division"),
    ];
    pairs.extend_from_slice(measures);
    SourceDescriptor {
        source_id: source_id.into(),
        kind,
        zone_offset_minutes: 360,
        field_map: pairs.iter().map(|(s, c)| (s.to_string(), c.to_string())).collect(),
        code_map: BTreeMap::new(),
    }
}

/// The descriptors matching the generated files, keyed like the file names.
pub fn scenario_descriptors() -> Vec<SourceDescriptor> {
    vec![
        clinical_descriptor_a(),
        clinical_descriptor_b(),
        ambient_descriptor(
            "bmd",
            SourceKind::Meteorology,
            &[("Rainfall", "rainfall_mm"), ("Humidity", "humidity_pct"), ("Temperature", "temperature")],
        ),
        ambient_descriptor("doe", SourceKind::EnvironmentAgency, &[("AQI", "air_quality_index")]),
        ambient_descriptor("bbs", SourceKind::StatisticsBureau, &[("Population Density", "population_density")]),
    ]
}

fn month_at(start: (i32, u32), offset: usize) -> (i32, u32) {
    let zero = start.0 * 12 + start.1 as i32 - 1 + offset as i32;
    (zero.div_euclid(12), (zero.rem_euclid(12) + 1) as u32)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Parse(e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    persist::write_atomic(path, &bytes)
}

fn insert_spread(rows: &mut Vec<Vec<String>>, extras: Vec<Vec<String>>) {
    let k = extras.len();
    for (i, extra) in extras.into_iter().enumerate() {
        let pos = ((i + 1) * rows.len() / (k + 1)).min(rows.len());
        rows.insert(pos, extra);
    }
}

fn malformed_clinical_rows(count: usize, geo: (&str, &str, &str, &str)) -> Vec<Vec<String>> {
    let (city, upazila, district, division) = geo;
    let good = |name: &str, age: &str, test: &str, status: &str, ts: &str, value: &str| {
        vec![
            name.to_string(),
            age.to_string(),
            "Male".to_string(),
            test.to_string(),
            value.to_string(),
            status.to_string(),
            ts.to_string(),
            city.to_string(),
            upazila.to_string(),
            district.to_string(),
            division.to_string(),
            "Dhaka Medical College Hospital".to_string(),
            "DMCH Central Lab".to_string(),
        ]
    };
    (0..count)
        .map(|i| match i % 6 {
            0 => vec!["short".to_string(), "row".to_string(), "only".to_string()],
            1 => good("Karim Uddin", "34", "NS1 Antigen", "Positive", "2022-13-40 27:77:00", "2.1"),
            2 => good("Salma Begum", "28", "Widal Test", "Negative", "2022-07-11 09:30:00", "0.4"),
            3 => good("Rafiq Mollah", "907", "NS1 Antigen", "Negative", "2022-07-12 10:00:00", "0.2"),
            4 => good("1234 5678", "41", "Dengue IgM", "Positive", "2022-07-13 11:00:00", "3.3"),
            _ => good("Monir Sheikh", "52", "NS1 Antigen", "Inconclusive", "2022-07-14 12:00:00", "1.0"),
        })
        .collect()
}

fn malformed_ambient_rows(count: usize, geo: (&str, &str, &str, &str)) -> Vec<Vec<String>> {
    let (city, upazila, district, division) = geo;
    let good = |date: &str, rain: &str, hum: &str, temp: &str| {
        vec![
            date.to_string(),
            city.to_string(),
            upazila.to_string(),
            district.to_string(),
            division.to_string(),
            rain.to_string(),
            hum.to_string(),
            temp.to_string(),
        ]
    };
    (0..count)
        .map(|i| match i % 5 {
            0 => good("2022-06-31", "12.0", "80", "29.0"),
            1 => good("2022-06-14", "18.5", "250", "28.5"),
            2 => vec!["2022-06-15".to_string(), city.to_string()],
            3 => good("2022-06-16", "-12", "76", "28.0"),
            _ => good("2022-06-17", "22.0", "81", "abc"),
        })
        .collect()
}

/// Generates the full source corpus under `out_dir` and returns the matching
/// descriptors plus the planted ground truth. Output is a pure function of
/// the configuration; a rerun writes byte-identical files.
pub fn generate_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<(Vec<SourceDescriptor>, PlantSummary)> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let months: Vec<(i32, u32)> = (0..cfg.months).map(|i| month_at(cfg.start, i)).collect();
    let (tests, positives) = monthly_plan(cfg);

    // Exact global attribute vectors over the dengue rows, shuffled so any
    // slice of rows is unbiased.
    let gender_alloc = allocate_exact(cfg.rows, &GENDER_WEIGHTS);
    let mut genders = Vec::with_capacity(cfg.rows as usize);
    for (g, &n) in [Gender::Male, Gender::Female, Gender::Other].iter().zip(&gender_alloc) {
        genders.extend(std::iter::repeat(*g).take(n as usize));
    }
    genders.shuffle(&mut rng);
    let age_alloc = allocate_exact(cfg.rows, &AGE_BAND_WEIGHTS);
    let mut bands = Vec::with_capacity(cfg.rows as usize);
    for (band, &n) in age_alloc.iter().enumerate() {
        bands.extend(std::iter::repeat(band as u8).take(n as usize));
    }
    bands.shuffle(&mut rng);

    // Patients are pooled per (band, gender) so row attributes stay exact
    // while about 30% of rows revisit a known patient.
    let mut pools: BTreeMap<(u8, u8), Vec<Patient>> = BTreeMap::new();
    let gender_rank = |g: Gender| match g {
        Gender::Male => 0u8,
        Gender::Female => 1,
        _ => 2,
    };
    let mut used_keys: BTreeSet<(String, i64, usize)> = BTreeSet::new();
    let mut rows_out: Vec<ClinicalRow> = Vec::with_capacity(cfg.rows as usize);
    let mut attr_idx = 0usize;

    for (mi, &(year, month)) in months.iter().enumerate() {
        let mut flags = vec![true; positives[mi] as usize];
        flags.resize(tests[mi] as usize, false);
        flags.shuffle(&mut rng);
        for positive in flags {
            let gender = genders[attr_idx];
            let band = bands[attr_idx];
            attr_idx += 1;
            let pool = pools.entry((band, gender_rank(gender))).or_default();
            let (patient, reused) = if !pool.is_empty() && rng.gen_bool(0.30) {
                (pool[rng.gen_range(0..pool.len())].clone(), true)
            } else {
                let p = fresh_patient(&mut rng, band, gender);
                pool.push(p.clone());
                (p, false)
            };
            let written_name = if reused && rng.gen_bool(0.15) {
                spelling_variant(&mut rng, &patient.name)
            } else {
                patient.name.clone()
            };
            let to_b = rng.gen_bool(0.40);
            let term_index = usize::from(!rng.gen_bool(0.70));
            let canon = patient.canon();
            // Draw times until the (identity, instant, code) key is new.
            let mut time = (year, month, 1, 0, 0, 0);
            for attempt in 0..64 {
                let day = weighted_day(&mut rng, year, month);
                let hour = rng.gen_range(8..20u32);
                let minute = rng.gen_range(0..60u32);
                let second = if to_b { 0 } else { rng.gen_range(0..60u32) };
                let _ = attempt;
                let epoch =
                    TimeKey::from_calendar(year, month, day, hour, minute, second, 360)?.epoch();
                if used_keys.insert((canon.clone(), epoch, term_index)) {
                    time = (year, month, day, hour, minute, second);
                    break;
                }
            }
            let value = if positive {
                1.0 + rng.gen::<f64>() * 7.0
            } else {
                rng.gen::<f64>() * 0.9
            };
            rows_out.push(ClinicalRow {
                patient,
                written_name,
                time,
                geo: rng.gen_range(0..cfg.geos),
                term_index,
                positive,
                value: (value * 100.0).round() / 100.0,
                to_b,
            });
        }
    }

    let gender_counts = [gender_alloc[0], gender_alloc[1], gender_alloc[2]];
    let age_band_counts = age_alloc.clone();

    // Non-dengue control rows.
    let cbc_rows = (cfg.rows as f64 * cfg.cbc_share).round() as u64;
    for _ in 0..cbc_rows {
        let mi = rng.gen_range(0..months.len());
        let (year, month) = months[mi];
        let gender = if rng.gen_bool(0.55) { Gender::Male } else { Gender::Female };
        let band = rng.gen_range(0..9u8);
        let pool = pools.entry((band, gender_rank(gender))).or_default();
        let patient = if !pool.is_empty() && rng.gen_bool(0.5) {
            pool[rng.gen_range(0..pool.len())].clone()
        } else {
            let p = fresh_patient(&mut rng, band, gender);
            pool.push(p.clone());
            p
        };
        let to_b = rng.gen_bool(0.40);
        let canon = patient.canon();
        let mut time = (year, month, 1, 0, 0, 0);
        for _ in 0..64 {
            let day = weighted_day(&mut rng, year, month);
            let hour = rng.gen_range(8..20u32);
            let minute = rng.gen_range(0..60u32);
            let second = if to_b { 0 } else { rng.gen_range(0..60u32) };
            let epoch =
                TimeKey::from_calendar(year, month, day, hour, minute, second, 360)?.epoch();
            if used_keys.insert((canon.clone(), epoch, 2)) {
                time = (year, month, day, hour, minute, second);
                break;
            }
        }
        rows_out.push(ClinicalRow {
            written_name: patient.name.clone(),
            patient,
            time,
            geo: rng.gen_range(0..cfg.geos),
            term_index: 2,
            positive: false,
            value: (rng.gen::<f64>() * 0.5 * 100.0).round() / 100.0,
            to_b,
        });
    }

    // Render the two clinical files.
    let mut rows_a: Vec<Vec<String>> = Vec::new();
    let mut rows_b: Vec<Vec<String>> = Vec::new();
    for r in &rows_out {
        let (year, month, day, hour, minute, second) = r.time;
        let geo = GEO_POOL[r.geo];
        if r.to_b {
            rows_b.push(vec![
                r.written_name.clone(),
                r.patient.age_text.clone(),
                match r.patient.gender {
                    Gender::Male => "M",
                    Gender::Female => "F",
                    _ => "O",
                }
                .to_string(),
                TERMS_B[r.term_index].to_string(),
                format!("{:.2}", r.value),
                if r.positive { "Detected" } else { "Not Detected" }.to_string(),
                format!("{year:04}-{month:02}-{day:02}T{hour:02}:{minute:02}"),
                geo.0.to_string(),
                geo.1.to_string(),
                geo.2.to_string(),
                geo.3.to_string(),
                PROVIDERS_B[r.geo % PROVIDERS_B.len()].to_string(),
                LABS_B[r.geo % LABS_B.len()].to_string(),
            ]);
        } else {
            rows_a.push(vec![
                r.written_name.clone(),
                r.patient.age_text.clone(),
                match r.patient.gender {
                    Gender::Male => "Male",
                    Gender::Female => "Female",
                    _ => "Other",
                }
                .to_string(),
                TERMS_A[r.term_index].to_string(),
                format!("{:.2}", r.value),
                if r.positive { "Positive" } else { "Negative" }.to_string(),
                format!("{year:04}-{month:02}-{day:02} {hour:02}:{minute:02}:{second:02}"),
                geo.0.to_string(),
                geo.1.to_string(),
                geo.2.to_string(),
                geo.3.to_string(),
                PROVIDERS_A[r.geo % PROVIDERS_A.len()].to_string(),
                LABS_A[r.geo % LABS_A.len()].to_string(),
            ]);
        }
    }
    insert_spread(&mut rows_a, malformed_clinical_rows(cfg.malformed_clinical, GEO_POOL[0]));

    // Environmental feeds: rainfall and humidity follow the planted surge,
    // temperature is a seasonal wave scrubbed of any surge component.
    let max_p = *positives.iter().max().unwrap().max(&1) as f64;
    let p_f: Vec<f64> = positives.iter().map(|&p| p as f64).collect();
    let temp_raw: Vec<f64> = (0..cfg.months)
        .map(|i| 26.0 + 4.0 * (std::f64::consts::TAU * (i as f64 - 3.0) / 12.0).sin())
        .collect();
    let mean_p = p_f.iter().sum::<f64>() / p_f.len() as f64;
    let mean_t = temp_raw.iter().sum::<f64>() / temp_raw.len() as f64;
    let var_p: f64 = p_f.iter().map(|p| (p - mean_p) * (p - mean_p)).sum();
    let cov: f64 =
        p_f.iter().zip(&temp_raw).map(|(p, t)| (p - mean_p) * (t - mean_t)).sum();
    let beta = if var_p == 0.0 { 0.0 } else { cov / var_p };
    let temp_month: Vec<f64> =
        (0..cfg.months).map(|i| temp_raw[i] - beta * (p_f[i] - mean_p)).collect();

    let mut rows_bmd: Vec<Vec<String>> = Vec::new();
    let mut rows_doe: Vec<Vec<String>> = Vec::new();
    let mut rows_bbs: Vec<Vec<String>> = Vec::new();
    let densities: Vec<f64> =
        (0..cfg.geos).map(|_| 400.0 + rng.gen::<f64>() * 7600.0).collect();
    for (mi, &(year, month)) in months.iter().enumerate() {
        let rain_base = 20.0 + 0.05 * p_f[mi];
        let hum_base = 55.0 + 35.0 * p_f[mi] / max_p;
        let aqi_base = 90.0 + 60.0 * p_f[mi] / max_p;
        for day in 1..=days_in_month(year, month) {
            let date = format!("{year:04}-{month:02}-{day:02}");
            for g in 0..cfg.geos {
                let geo = GEO_POOL[g];
                let rain = (rain_base + gauss(&mut rng, 3.0)).max(0.0);
                let hum = (hum_base + gauss(&mut rng, 1.5)).clamp(5.0, 99.5);
                let temp = temp_month[mi] + gauss(&mut rng, 0.15);
                rows_bmd.push(vec![
                    date.clone(),
                    geo.0.to_string(),
                    geo.1.to_string(),
                    geo.2.to_string(),
                    geo.3.to_string(),
                    format!("{rain:.1}"),
                    format!("{hum:.1}"),
                    format!("{temp:.1}"),
                ]);
                let aqi = (aqi_base + gauss(&mut rng, 5.0)).clamp(10.0, 490.0);
                rows_doe.push(vec![
                    date.clone(),
                    geo.0.to_string(),
                    geo.1.to_string(),
                    geo.2.to_string(),
                    geo.3.to_string(),
                    format!("{aqi:.0}"),
                ]);
                if day == 1 {
                    rows_bbs.push(vec![
                        date.clone(),
                        geo.0.to_string(),
                        geo.1.to_string(),
                        geo.2.to_string(),
                        geo.3.to_string(),
                        format!("{:.0}", densities[g]),
                    ]);
                }
            }
        }
    }
    insert_spread(&mut rows_bmd, malformed_ambient_rows(cfg.malformed_ambient, GEO_POOL[1]));

    let header_a = [
        "Patient Name", "Age", "Gender", "Test", "Result Value", "Result", "Test Time", "City",
        "Upazila", "District", "Division", "Provider", "Lab",
    ];
    let header_b = [
        "Name", "Age", "Sex", "Test Name", "Value", "Status", "Collected At", "City", "Upazila",
        "District", "Division", "Facility", "Laboratory",
    ];
    let header_bmd =
        ["Date", "City", "Upazila", "District", "Division", "Rainfall", "Humidity", "Temperature"];
    let header_doe = ["Date", "City", "Upazila", "District", "Division", "AQI"];
    let header_bbs = ["Date", "City", "Upazila", "District", "Division", "Population Density"];

    write_csv(&out_dir.join("hospital_a.csv"), &header_a, &rows_a)?;
    write_csv(&out_dir.join("hospital_b.csv"), &header_b, &rows_b)?;
    write_csv(&out_dir.join("bmd.csv"), &header_bmd, &rows_bmd)?;
    write_csv(&out_dir.join("doe.csv"), &header_doe, &rows_doe)?;
    write_csv(&out_dir.join("bbs.csv"), &header_bbs, &rows_bbs)?;
    persist::write_atomic(&out_dir.join("codes.tsv"), CODES_TSV.as_bytes())?;

    let files = vec![
        GeneratedFile {
            name: "hospital_a.csv".into(),
            rows: rows_a.len() as u64,
            expected_rejects: cfg.malformed_clinical as u64,
        },
        GeneratedFile { name: "hospital_b.csv".into(), rows: rows_b.len() as u64, expected_rejects: 0 },
        GeneratedFile {
            name: "bmd.csv".into(),
            rows: rows_bmd.len() as u64,
            expected_rejects: cfg.malformed_ambient as u64,
        },
        GeneratedFile { name: "doe.csv".into(), rows: rows_doe.len() as u64, expected_rejects: 0 },
        GeneratedFile { name: "bbs.csv".into(), rows: rows_bbs.len() as u64, expected_rejects: 0 },
    ];
    let summary = PlantSummary {
        seed: cfg.seed,
        months,
        positives,
        tests,
        gender_counts,
        age_band_counts,
        cbc_rows,
        files,
    };
    Ok((scenario_descriptors(), summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ingest_file;
    use crate::linkage::LinkSecret;

    #[test]
    fn default_plan_reproduces_frozen_allocations() {
        let cfg = ScenarioConfig::default();
        let (tests, positives) = monthly_plan(&cfg);
        assert_eq!(positives, PLANTED_POSITIVES.to_vec());
        assert_eq!(
            tests,
            vec![
                1294, 1221, 1366, 1438, 1582, 2015, 2443, 2731, 2299, 1870, 1510, 1366, 1438,
                1366, 1510, 1654, 1870, 6039, 13657, 23725, 15816, 7477, 2587, 1726
            ]
        );
        assert_eq!(tests.iter().sum::<u64>(), 100_000);
        assert!(positives.iter().zip(&tests).all(|(p, t)| p <= t));

        assert_eq!(allocate_exact(100_000, &GENDER_WEIGHTS), vec![56_819, 43_178, 3]);
        assert_eq!(
            allocate_exact(100_000, &AGE_BAND_WEIGHTS),
            vec![24_000, 20_000, 18_000, 15_400, 9_600, 6_000, 4_000, 2_000, 1_000]
        );
    }

    #[test]
    fn plan_scales_with_conserved_sums() {
        let cfg = ScenarioConfig { rows: 3_000, ..ScenarioConfig::default() };
        let (tests, positives) = monthly_plan(&cfg);
        assert_eq!(tests.iter().sum::<u64>(), 3_000);
        assert!(positives.iter().zip(&tests).all(|(p, t)| p <= t));
        let ratio = positives.iter().sum::<u64>() as f64 / 3_000.0;
        assert!((ratio - 0.23578).abs() < 0.01, "positive ratio {ratio}");
    }

    #[test]
    fn allocate_exact_is_exact_and_stable() {
        assert_eq!(allocate_exact(10, &[1, 1, 1]), vec![4, 3, 3]);
        assert_eq!(allocate_exact(0, &[5, 2]), vec![0, 0]);
        assert_eq!(allocate_exact(7, &[0, 0]), vec![7, 0]);
        let alloc = allocate_exact(12_345, &PLANTED_POSITIVES);
        assert_eq!(alloc.iter().sum::<u64>(), 12_345);
    }

    #[test]
    fn peak_month_is_planted_august() {
        let cfg = ScenarioConfig::default();
        let (_, positives) = monthly_plan(&cfg);
        let summary = PlantSummary {
            seed: 0,
            months: (0..24).map(|i| month_at((2021, 1), i)).collect(),
            positives,
            tests: vec![0; 24],
            gender_counts: [0; 3],
            age_band_counts: allocate_exact(100_000, &AGE_BAND_WEIGHTS),
            cbc_rows: 0,
            files: Vec::new(),
        };
        assert_eq!(summary.peak_month(), (2022, 8));
        assert!((summary.age_0_40_share() - 77.4).abs() < 1e-9);
    }

    #[test]
    fn spelling_variants_preserve_phonetic_codes() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for first in MALE_NAMES.iter().chain(FEMALE_NAMES.iter()) {
            for last in SURNAMES {
                let name = format!("{first} {last}");
                let original = encode_full_name(&name).unwrap();
                for _ in 0..3 {
                    let variant = spelling_variant(&mut rng, &name);
                    assert_eq!(
                        encode_full_name(&variant).unwrap(),
                        original,
                        "{name} vs {variant}"
                    );
                }
            }
        }
    }

    #[test]
    fn same_seed_writes_identical_files() {
        let cfg = ScenarioConfig {
            rows: 600,
            months: 24,
            geos: 4,
            malformed_clinical: 5,
            malformed_ambient: 2,
            ..ScenarioConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let (_, s1) = generate_scenario(&cfg, &dir.path().join("one")).unwrap();
        let (_, s2) = generate_scenario(&cfg, &dir.path().join("two")).unwrap();
        assert_eq!(s1, s2);
        for f in &s1.files {
            let a = std::fs::read(dir.path().join("one").join(&f.name)).unwrap();
            let b = std::fs::read(dir.path().join("two").join(&f.name)).unwrap();
            assert_eq!(a, b, "{} differs between runs", f.name);
        }
        let other = ScenarioConfig { seed: 43, ..cfg };
        generate_scenario(&other, &dir.path().join("three")).unwrap();
        let a = std::fs::read(dir.path().join("one/hospital_a.csv")).unwrap();
        let b = std::fs::read(dir.path().join("three/hospital_a.csv")).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn generated_files_survive_ingestion_with_planned_rejects() {
        let cfg = ScenarioConfig {
            rows: 800,
            months: 24,
            geos: 3,
            cbc_share: 0.02,
            malformed_clinical: 6,
            malformed_ambient: 5,
            ..ScenarioConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let (descriptors, summary) = generate_scenario(&cfg, dir.path()).unwrap();
        let secret = LinkSecret::from_bytes(&[3u8; 16]).unwrap();
        let staging =
            crate::ingest::staging::StagingStore::open(&dir.path().join("staging")).unwrap();

        let mut staged_clinical = 0u64;
        for (d, f) in descriptors.iter().zip(&summary.files) {
            let outcome = ingest_file(d, &dir.path().join(&f.name), &secret, &staging).unwrap();
            assert_eq!(outcome.rows_in, f.rows, "{}", f.name);
            assert_eq!(outcome.rejected, f.expected_rejects, "{}", f.name);
            assert_eq!(outcome.deduped, 0, "{}", f.name);
            assert_eq!(outcome.staged + outcome.rejected, outcome.rows_in, "{}", f.name);
            if d.kind.is_clinical() {
                staged_clinical += outcome.staged;
            }
        }
        let planned = summary.tests.iter().sum::<u64>() + summary.cbc_rows;
        assert_eq!(staged_clinical, planned);
    }
}

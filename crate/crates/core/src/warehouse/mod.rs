//! Star-schema store: two fact tables (test results at instant granularity,
//! ambient observations at day granularity) surrounded by eight dimensions.
//! Batches move from staging into the warehouse as a whole; readers open a
//! snapshot and never observe a half-loaded batch.

pub mod persist;

use crate::error::{Error, Result};
use crate::ingest::{StagedRecord, StagingStore};
use crate::linkage::Pik;
use crate::model::{
    Gender, GeoAttrs, KeyAllocator, SurrogateKey, TimeKey, WEEKDAY_NAMES,
};
use persist::{read_table, write_manifest, write_tsv, LoadEntry, Manifest, TableEntry};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

pub const DIMENSIONS: [&str; 8] = [
    "patient",
    "healthcare",
    "lab",
    "test_attribute",
    "diagnosis",
    "geography",
    "time",
    "source",
];

fn dim_schema(name: &str) -> (&'static [&'static str], &'static [usize]) {
    match name {
        "patient" => (&["pik", "age_band", "gender"], &[0]),
        "healthcare" => (&["name", "kind", "source_id"], &[0]),
        "lab" => (&["name"], &[0]),
        "test_attribute" => (&["code", "diagnosis"], &[0]),
        "diagnosis" => (&["code", "name"], &[0]),
        "geography" => (&["city", "upazila", "district", "division"], &[0, 1, 2, 3]),
        "time" => (&["date", "month", "year", "weekday"], &[0]),
        "source" => (&["source_id", "kind"], &[0]),
        other => panic!("no such dimension {other:?}"),
    }
}

/// One dimension table held in memory: attribute rows plus natural-key and
/// surrogate-key indexes.
#[derive(Debug, Clone)]
pub struct DimStore {
    name: &'static str,
    columns: &'static [&'static str],
    natural: &'static [usize],
    rows: Vec<(SurrogateKey, Vec<String>)>,
    by_natural: BTreeMap<String, SurrogateKey>,
    by_key: BTreeMap<u32, usize>,
}

impl DimStore {
    fn new(name: &'static str) -> Self {
        let (columns, natural) = dim_schema(name);
        DimStore {
            name,
            columns,
            natural,
            rows: Vec::new(),
            by_natural: BTreeMap::new(),
            by_key: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn natural_key_of(&self, attrs: &[String]) -> String {
        let parts: Vec<String> =
            self.natural.iter().map(|&i| crate::model::normalize_key(&attrs[i])).collect();
        parts.join("\u{1f}")
    }

    fn upsert(&mut self, attrs: Vec<String>, alloc: &mut KeyAllocator) -> Result<(SurrogateKey, bool)> {
        debug_assert_eq!(attrs.len(), self.columns.len());
        let nk = self.natural_key_of(&attrs);
        if let Some(&key) = self.by_natural.get(&nk) {
            return Ok((key, false));
        }
        let key = alloc.next_surrogate()?;
        self.by_natural.insert(nk, key);
        self.by_key.insert(key.value(), self.rows.len());
        self.rows.push((key, attrs));
        Ok((key, true))
    }

    fn insert_existing(&mut self, key: SurrogateKey, attrs: Vec<String>) -> Result<()> {
        let nk = self.natural_key_of(&attrs);
        if self.by_natural.contains_key(&nk) || self.by_key.contains_key(&key.value()) {
            return Err(Error::Validation(format!(
                "dimension {}: duplicate row for key {key}",
                self.name
            )));
        }
        self.by_natural.insert(nk, key);
        self.by_key.insert(key.value(), self.rows.len());
        self.rows.push((key, attrs));
        Ok(())
    }

    pub fn contains_key(&self, key: SurrogateKey) -> bool {
        self.by_key.contains_key(&key.value())
    }

    pub fn attrs(&self, key: SurrogateKey) -> Option<&[String]> {
        self.by_key.get(&key.value()).map(|&i| self.rows[i].1.as_slice())
    }

    pub fn attr(&self, key: SurrogateKey, column: &str) -> Option<&str> {
        let idx = self.columns.iter().position(|c| *c == column)?;
        self.attrs(key).map(|a| a[idx].as_str())
    }

    pub fn lookup_natural(&self, attrs: &[String]) -> Option<SurrogateKey> {
        self.by_natural.get(&self.natural_key_of(attrs)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SurrogateKey, &[String])> {
        self.rows.iter().map(|(k, a)| (*k, a.as_slice()))
    }

    fn to_rows(&self) -> Vec<Vec<String>> {
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(k, attrs)| {
                let mut row = vec![k.to_string()];
                row.extend(attrs.iter().cloned());
                row
            })
            .collect();
        rows.sort_by(|a, b| a[0].cmp(&b[0]));
        rows
    }

    fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["key"];
        h.extend_from_slice(self.columns);
        h
    }
}

/// Test-result fact row. Patient identity is the pseudonymous key; all other
/// context lives behind dimension keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResultFact {
    pub pik: Pik,
    pub time: TimeKey,
    pub geo: SurrogateKey,
    pub healthcare: SurrogateKey,
    pub lab: SurrogateKey,
    pub attribute: SurrogateKey,
    pub result_value: f64,
    pub result_positive: bool,
}

/// Ambient fact row, one per (day, place). Missing measures are nulls, never
/// zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientFact {
    pub time: TimeKey,
    pub geo: SurrogateKey,
    pub density: Option<f64>,
    pub avg_rainfall_mm: Option<f64>,
    pub humidity_pct: Option<f64>,
    pub air_pollutants: Option<f64>,
    pub temperature_c: Option<f64>,
    pub pct_positive_dengue: Option<f64>,
}

/// What one batch load did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadReport {
    pub batch_id: u64,
    pub facts_loaded: u64,
    pub dims_created: u64,
    pub rejects: u64,
    pub already_loaded: bool,
}

const TEST_FACT_COLUMNS: [&str; 8] = [
    "pik",
    "epoch",
    "geo",
    "healthcare",
    "lab",
    "attribute",
    "result_value",
    "result_positive",
];

const AMBIENT_FACT_COLUMNS: [&str; 8] = [
    "epoch",
    "geo",
    "density",
    "rainfall_mm",
    "humidity_pct",
    "air_pollutants",
    "temperature_c",
    "pct_positive_dengue",
];

/// The warehouse: in-memory snapshot of dimensions and facts backed by the
/// directory layout `dim_<name>.tsv`, `fact_<name>/seg_<n>.tsv`, `MANIFEST`.
#[derive(Debug)]
pub struct Warehouse {
    root: PathBuf,
    dims: BTreeMap<&'static str, DimStore>,
    tests: Vec<TestResultFact>,
    ambients: Vec<AmbientFact>,
    loaded: Vec<LoadEntry>,
    test_segments: Vec<u64>,
    allocator: KeyAllocator,
}

impl Warehouse {
    /// Opens the warehouse at `root`, creating an empty one if no manifest
    /// exists yet. All committed tables are verified against their manifest
    /// checksums and loaded into memory.
    pub fn open(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let mut dims = BTreeMap::new();
        for name in DIMENSIONS {
            dims.insert(name, DimStore::new(name));
        }
        let mut wh = Warehouse {
            root: root.to_path_buf(),
            dims,
            tests: Vec::new(),
            ambients: Vec::new(),
            loaded: Vec::new(),
            test_segments: Vec::new(),
            allocator: KeyAllocator::new(),
        };
        let Some(manifest) = persist::read_manifest(root)? else {
            return Ok(wh);
        };
        let mut max_key = 0u32;
        for entry in &manifest.tables {
            let (_, rows) = read_table(root, entry)?;
            if let Some(dim) = entry.table.strip_prefix("dim_") {
                let store = wh
                    .dims
                    .get_mut(dim)
                    .ok_or_else(|| Error::Validation(format!("unknown dimension table {dim:?}")))?;
                for row in &rows {
                    let key = parse_key(&row[0])?;
                    max_key = max_key.max(key.value());
                    store.insert_existing(key, row[1..].to_vec())?;
                }
            } else if entry.table.starts_with("fact_testresult/") {
                let seg: u64 = entry
                    .table
                    .rsplit('_')
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad segment name {:?}", entry.table)))?;
                wh.test_segments.push(seg);
                for row in &rows {
                    wh.tests.push(parse_test_fact(row)?);
                }
            } else if entry.table.starts_with("fact_ambient/") {
                for row in &rows {
                    wh.ambients.push(parse_ambient_fact(row)?);
                }
            } else {
                return Err(Error::Validation(format!("unknown table {:?}", entry.table)));
            }
        }
        wh.loaded = manifest.loaded;
        wh.test_segments.sort_unstable();
        if max_key > 0 {
            wh.allocator = KeyAllocator::resume_after(Some(SurrogateKey::from_value(max_key)?));
        }
        Ok(wh)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dim(&self, name: &str) -> Option<&DimStore> {
        self.dims.get(name)
    }

    pub fn tests(&self) -> &[TestResultFact] {
        &self.tests
    }

    pub fn ambients(&self) -> &[AmbientFact] {
        &self.ambients
    }

    pub fn loaded_batches(&self) -> Vec<u64> {
        self.loaded.iter().map(|l| l.batch).collect()
    }

    pub fn load_entries(&self) -> &[LoadEntry] {
        &self.loaded
    }

    /// Looks up or creates a dimension row, returning its surrogate key.
    pub fn upsert_dimension(&mut self, dim: &str, attrs: &[&str]) -> Result<SurrogateKey> {
        let store = self
            .dims
            .get_mut(dim)
            .ok_or_else(|| Error::Query(format!("unknown dimension {dim:?}")))?;
        if attrs.len() != store.columns.len() {
            return Err(Error::Validation(format!(
                "dimension {dim}: expected {} attributes, got {}",
                store.columns.len(),
                attrs.len()
            )));
        }
        let owned: Vec<String> = attrs.iter().map(|s| s.to_string()).collect();
        let (key, _) = store.upsert(owned, &mut self.allocator)?;
        Ok(key)
    }

    fn upsert_time(&mut self, time: TimeKey, created: &mut u64) -> Result<()> {
        let attrs = vec![
            time.date_label(),
            time.month_label(),
            time.year().to_string(),
            WEEKDAY_NAMES[time.weekday_index()].to_string(),
        ];
        let store = self.dims.get_mut("time").unwrap();
        let (_, new) = store.upsert(attrs, &mut self.allocator)?;
        *created += u64::from(new);
        Ok(())
    }

    /// Loads one staged batch. Atomic per batch: either every staged record
    /// lands as a fact with resolved dimension keys and the manifest commits,
    /// or the in-memory and on-disk state stay at the previous snapshot.
    /// Re-loading an already loaded batch is a no-op.
    pub fn load_batch(&mut self, staging: &StagingStore, batch_id: u64) -> Result<LoadReport> {
        if self.loaded.iter().any(|l| l.batch == batch_id) {
            return Ok(LoadReport {
                batch_id,
                facts_loaded: 0,
                dims_created: 0,
                rejects: 0,
                already_loaded: true,
            });
        }
        let (meta, records) = staging.read_batch(batch_id)?;

        let dims_backup = self.dims.clone();
        let allocator_backup = self.allocator.clone();
        let result = self.apply_batch(batch_id, &records);
        match result {
            Ok((new_tests, new_ambients, dims_created)) => {
                let entry = LoadEntry {
                    batch: batch_id,
                    staged: meta.staged,
                    loaded: records.len() as u64,
                    rejected: 0,
                    deduped: meta.deduped,
                };
                if let Err(e) = self.persist_load(batch_id, &new_tests, &new_ambients, &entry) {
                    self.dims = dims_backup;
                    self.allocator = allocator_backup;
                    return Err(e);
                }
                if !new_tests.is_empty() {
                    self.test_segments.push(batch_id);
                    self.test_segments.sort_unstable();
                }
                self.tests.extend(new_tests);
                self.ambients = new_ambients;
                self.loaded.push(entry);
                Ok(LoadReport {
                    batch_id,
                    facts_loaded: records.len() as u64,
                    dims_created,
                    rejects: 0,
                    already_loaded: false,
                })
            }
            Err(e) => {
                self.dims = dims_backup;
                self.allocator = allocator_backup;
                Err(e)
            }
        }
    }

    /// Resolves all dimension keys for the batch and computes the next fact
    /// state (test appends plus the merged ambient snapshot).
    fn apply_batch(
        &mut self,
        _batch_id: u64,
        records: &[StagedRecord],
    ) -> Result<(Vec<TestResultFact>, Vec<AmbientFact>, u64)> {
        let mut created = 0u64;
        let mut new_tests = Vec::new();
        let mut ambient_by_key: BTreeMap<(i64, u32), AmbientFact> = BTreeMap::new();
        for a in &self.ambients {
            ambient_by_key.insert((a.time.epoch(), a.geo.value()), a.clone());
        }

        for record in records {
            self.upsert_time(record.time(), &mut created)?;
            let g = record.geo();
            let geo_attrs =
                vec![g.city.clone(), g.upazila.clone(), g.district.clone(), g.division.clone()];
            let geo_store = self.dims.get_mut("geography").unwrap();
            let (geo_key, new) = geo_store.upsert(geo_attrs, &mut self.allocator)?;
            created += u64::from(new);

            match record {
                StagedRecord::Test(t) => {
                    let (source_key, new) = self
                        .dims
                        .get_mut("source")
                        .unwrap()
                        .upsert(vec![t.source_id.clone(), t.source_kind.as_str().into()], &mut self.allocator)?;
                    created += u64::from(new);
                    let _ = source_key;

                    let (patient_key, new) = self.dims.get_mut("patient").unwrap().upsert(
                        vec![t.pik.to_string(), t.age_band.to_string(), t.gender.as_str().into()],
                        &mut self.allocator,
                    )?;
                    created += u64::from(new);
                    let _ = patient_key;

                    let (hc_key, new) = self.dims.get_mut("healthcare").unwrap().upsert(
                        vec![t.provider.clone(), t.source_kind.as_str().into(), t.source_id.clone()],
                        &mut self.allocator,
                    )?;
                    created += u64::from(new);

                    let (lab_key, new) = self
                        .dims
                        .get_mut("lab")
                        .unwrap()
                        .upsert(vec![t.lab.clone()], &mut self.allocator)?;
                    created += u64::from(new);

                    let diagnosis = diagnosis_of(&t.code);
                    let (_, new) = self.dims.get_mut("diagnosis").unwrap().upsert(
                        vec![diagnosis.clone(), display_name(&diagnosis)],
                        &mut self.allocator,
                    )?;
                    created += u64::from(new);

                    let (attr_key, new) = self
                        .dims
                        .get_mut("test_attribute")
                        .unwrap()
                        .upsert(vec![t.code.clone(), diagnosis], &mut self.allocator)?;
                    created += u64::from(new);

                    new_tests.push(TestResultFact {
                        pik: t.pik.clone(),
                        time: t.time,
                        geo: geo_key,
                        healthcare: hc_key,
                        lab: lab_key,
                        attribute: attr_key,
                        result_value: t.result_value,
                        result_positive: t.result_positive,
                    });
                }
                StagedRecord::Ambient(a) => {
                    let (_, new) = self
                        .dims
                        .get_mut("source")
                        .unwrap()
                        .upsert(vec![a.source_id.clone(), a.source_kind.as_str().into()], &mut self.allocator)?;
                    created += u64::from(new);

                    let day_epoch = a.time.day_key();
                    let slot = ambient_by_key.entry((day_epoch, geo_key.value())).or_insert(
                        AmbientFact {
                            time: TimeKey::from_epoch(day_epoch)?,
                            geo: geo_key,
                            density: None,
                            avg_rainfall_mm: None,
                            humidity_pct: None,
                            air_pollutants: None,
                            temperature_c: None,
                            pct_positive_dengue: None,
                        },
                    );
                    if a.rainfall_mm.is_some() {
                        slot.avg_rainfall_mm = a.rainfall_mm;
                    }
                    if a.humidity_pct.is_some() {
                        slot.humidity_pct = a.humidity_pct;
                    }
                    if a.temperature_c.is_some() {
                        slot.temperature_c = a.temperature_c;
                    }
                    if a.air_quality_index.is_some() {
                        slot.air_pollutants = a.air_quality_index;
                    }
                    if a.population_density.is_some() {
                        slot.density = a.population_density;
                    }
                }
            }
        }

        let mut new_ambients: Vec<AmbientFact> = ambient_by_key.into_values().collect();
        self.recompute_pct_positive(&mut new_ambients, &new_tests);
        Ok((new_tests, new_ambients, created))
    }

    /// Refreshes the derived percentage-of-positive-dengue measure on every
    /// ambient row from the test facts sharing its (day, place).
    fn recompute_pct_positive(&self, ambients: &mut [AmbientFact], extra_tests: &[TestResultFact]) {
        let mut totals: BTreeMap<(i64, u32), (u64, u64)> = BTreeMap::new();
        let attr_dim = &self.dims["test_attribute"];
        for fact in self.tests.iter().chain(extra_tests) {
            let diagnosis = attr_dim.attr(fact.attribute, "diagnosis").unwrap_or_default();
            if diagnosis != "DENGUE" {
                continue;
            }
            let key = (fact.time.day_key(), fact.geo.value());
            let entry = totals.entry(key).or_insert((0, 0));
            entry.0 += 1;
            entry.1 += u64::from(fact.result_positive);
        }
        for a in ambients.iter_mut() {
            a.pct_positive_dengue = totals
                .get(&(a.time.epoch(), a.geo.value()))
                .map(|&(n, pos)| 100.0 * pos as f64 / n as f64);
        }
    }

    /// National whole-period roll-up of the positivity ratio across all
    /// dengue test facts, in percent.
    pub fn pct_positive_dengue_overall(&self) -> Option<f64> {
        let attr_dim = &self.dims["test_attribute"];
        let mut n = 0u64;
        let mut pos = 0u64;
        for fact in &self.tests {
            if attr_dim.attr(fact.attribute, "diagnosis") == Some("DENGUE") {
                n += 1;
                pos += u64::from(fact.result_positive);
            }
        }
        (n > 0).then(|| 100.0 * pos as f64 / n as f64)
    }

    fn persist_load(
        &self,
        batch_id: u64,
        new_tests: &[TestResultFact],
        new_ambients: &[AmbientFact],
        entry: &LoadEntry,
    ) -> Result<()> {
        let mut manifest = Manifest { tables: Vec::new(), loaded: self.loaded.clone() };
        manifest.loaded.push(entry.clone());

        for (name, store) in &self.dims {
            let file = format!("dim_{name}.tsv");
            let path = self.root.join(&file);
            let rows = store.to_rows();
            write_tsv(&path, &store.header(), &rows)?;
            manifest.tables.push(TableEntry {
                table: format!("dim_{name}"),
                path: file.clone(),
                rows: rows.len() as u64,
                sha256: persist::sha256_file(&path)?,
            });
        }

        let mut segments = self.test_segments.clone();
        if !new_tests.is_empty() {
            std::fs::create_dir_all(self.root.join("fact_testresult"))?;
            let file = format!("fact_testresult/seg_{batch_id}.tsv");
            let rows: Vec<Vec<String>> = new_tests.iter().map(test_fact_row).collect();
            write_tsv(&self.root.join(&file), &TEST_FACT_COLUMNS, &rows)?;
            segments.push(batch_id);
            segments.sort_unstable();
        }
        let mut offset = 0usize;
        for seg in &segments {
            let file = format!("fact_testresult/seg_{seg}.tsv");
            let path = self.root.join(&file);
            let count = if *seg == batch_id {
                new_tests.len()
            } else {
                persist::read_tsv(&path)?.1.len()
            };
            offset += count;
            manifest.tables.push(TableEntry {
                table: format!("fact_testresult/seg_{seg}"),
                path: file.clone(),
                rows: count as u64,
                sha256: persist::sha256_file(&path)?,
            });
        }
        debug_assert_eq!(offset, self.tests.len() + new_tests.len());

        if !new_ambients.is_empty() {
            std::fs::create_dir_all(self.root.join("fact_ambient"))?;
            let file = "fact_ambient/seg_1.tsv".to_string();
            let rows: Vec<Vec<String>> = new_ambients.iter().map(ambient_fact_row).collect();
            write_tsv(&self.root.join(&file), &AMBIENT_FACT_COLUMNS, &rows)?;
            manifest.tables.push(TableEntry {
                table: "fact_ambient/seg_1".into(),
                path: file.clone(),
                rows: rows.len() as u64,
                sha256: persist::sha256_file(&self.root.join(&file))?,
            });
        }

        write_manifest(&self.root, &manifest)
    }

    /// Full referential-integrity and shape check over the open snapshot.
    /// Returns violations; an empty list means the store is consistent.
    pub fn check_integrity(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (i, fact) in self.tests.iter().enumerate() {
            for (dim, key) in [
                ("geography", fact.geo),
                ("healthcare", fact.healthcare),
                ("lab", fact.lab),
                ("test_attribute", fact.attribute),
            ] {
                if !self.dims[dim].contains_key(key) {
                    problems.push(format!("test fact {i}: dangling {dim} key {key}"));
                }
            }
            if self.dims["patient"].lookup_natural(&[fact.pik.to_string(), String::new(), String::new()]).is_none() {
                problems.push(format!("test fact {i}: pik {} missing from patient dimension", fact.pik));
            }
            if self.dims["time"]
                .lookup_natural(&[
                    fact.time.date_label(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])
                .is_none()
            {
                problems.push(format!("test fact {i}: date {} missing from time dimension", fact.time.date_label()));
            }
        }
        let mut seen_days: BTreeSet<(i64, u32)> = BTreeSet::new();
        for (i, fact) in self.ambients.iter().enumerate() {
            if !self.dims["geography"].contains_key(fact.geo) {
                problems.push(format!("ambient fact {i}: dangling geography key {}", fact.geo));
            }
            if fact.time.epoch() % 86_400 != 0 {
                problems.push(format!("ambient fact {i}: time not at day granularity"));
            }
            if !seen_days.insert((fact.time.epoch(), fact.geo.value())) {
                problems.push(format!(
                    "ambient fact {i}: duplicate (day, geography) {} / {}",
                    fact.time.date_label(),
                    fact.geo
                ));
            }
        }
        let mut all_keys: BTreeSet<u32> = BTreeSet::new();
        for store in self.dims.values() {
            for (key, _) in store.iter() {
                if !all_keys.insert(key.value()) {
                    problems.push(format!("surrogate key {key} issued to more than one row"));
                }
            }
        }
        for entry in &self.loaded {
            if entry.staged != entry.loaded + entry.rejected {
                problems.push(format!(
                    "batch {}: conservation violated (staged {} != loaded {} + rejected {})",
                    entry.batch, entry.staged, entry.loaded, entry.rejected
                ));
            }
        }
        problems
    }

    /// Writes a filtered copy of this store to `root`: the test facts passing
    /// `keep`, the ambient rows for their (day, place) pairs, and every
    /// dimension carried over unchanged. The copy is an independent store in
    /// the same format; deriving twice overwrites with identical content.
    pub fn derive_filtered<F>(&self, root: &Path, keep: F) -> Result<Warehouse>
    where
        F: Fn(&TestResultFact) -> bool,
    {
        if root == self.root {
            return Err(Error::Validation("derived store must use a different root".into()));
        }
        std::fs::create_dir_all(root)?;
        let tests: Vec<TestResultFact> = self.tests.iter().filter(|t| keep(t)).cloned().collect();
        let pairs: BTreeSet<(i64, u32)> =
            tests.iter().map(|t| (t.time.day_key(), t.geo.value())).collect();
        let mut ambients: Vec<AmbientFact> = self
            .ambients
            .iter()
            .filter(|a| pairs.contains(&(a.time.epoch(), a.geo.value())))
            .cloned()
            .collect();

        let mut mart = Warehouse {
            root: root.to_path_buf(),
            dims: self.dims.clone(),
            tests: Vec::new(),
            ambients: Vec::new(),
            loaded: Vec::new(),
            test_segments: Vec::new(),
            allocator: self.allocator.clone(),
        };
        mart.recompute_pct_positive(&mut ambients, &tests);
        let total = (tests.len() + ambients.len()) as u64;
        let entry = LoadEntry { batch: 1, staged: total, loaded: total, rejected: 0, deduped: 0 };
        mart.persist_load(1, &tests, &ambients, &entry)?;
        if !tests.is_empty() {
            mart.test_segments.push(1);
        }
        mart.tests = tests;
        mart.ambients = ambients;
        mart.loaded.push(entry);
        Ok(mart)
    }

    /// Resolves a test fact against the dimensions for scans and cube input.
    pub fn resolve_test(&self, fact: &TestResultFact) -> ResolvedTest {
        let geo = self.dims["geography"].attrs(fact.geo).unwrap_or_default();
        let patient = self.dims["patient"]
            .lookup_natural(&[fact.pik.to_string(), String::new(), String::new()])
            .and_then(|k| self.dims["patient"].attrs(k))
            .unwrap_or_default();
        let code = self.dims["test_attribute"].attr(fact.attribute, "code").unwrap_or_default();
        let diagnosis =
            self.dims["test_attribute"].attr(fact.attribute, "diagnosis").unwrap_or_default();
        ResolvedTest {
            pik: fact.pik.to_string(),
            time: fact.time,
            geo: GeoAttrs::new(
                geo.first().map(String::as_str).unwrap_or(""),
                geo.get(1).map(String::as_str).unwrap_or(""),
                geo.get(2).map(String::as_str).unwrap_or(""),
                geo.get(3).map(String::as_str).unwrap_or(""),
            ),
            provider: self.dims["healthcare"].attr(fact.healthcare, "name").unwrap_or_default().into(),
            lab: self.dims["lab"].attr(fact.lab, "name").unwrap_or_default().into(),
            code: code.into(),
            diagnosis: diagnosis.into(),
            source_id: self.dims["healthcare"].attr(fact.healthcare, "source_id").unwrap_or_default().into(),
            age_band: patient.get(1).and_then(|s| s.parse().ok()).unwrap_or(0),
            gender: Gender::parse(patient.get(2).map(String::as_str).unwrap_or("")),
            result_value: fact.result_value,
            result_positive: fact.result_positive,
        }
    }

    pub fn resolve_ambient(&self, fact: &AmbientFact) -> ResolvedAmbient {
        let geo = self.dims["geography"].attrs(fact.geo).unwrap_or_default();
        ResolvedAmbient {
            time: fact.time,
            geo: GeoAttrs::new(
                geo.first().map(String::as_str).unwrap_or(""),
                geo.get(1).map(String::as_str).unwrap_or(""),
                geo.get(2).map(String::as_str).unwrap_or(""),
                geo.get(3).map(String::as_str).unwrap_or(""),
            ),
            density: fact.density,
            rainfall_mm: fact.avg_rainfall_mm,
            humidity_pct: fact.humidity_pct,
            air_pollutants: fact.air_pollutants,
            temperature_c: fact.temperature_c,
            pct_positive_dengue: fact.pct_positive_dengue,
        }
    }

    /// Scans the test-result fact table under a conjunctive predicate.
    pub fn scan_tests(&self, predicate: &Predicate) -> Result<Vec<ResolvedTest>> {
        predicate.check_columns(&TEST_SCAN_COLUMNS)?;
        let mut out = Vec::new();
        for fact in &self.tests {
            let resolved = self.resolve_test(fact);
            if predicate.matches(|col| resolved.column(col)) {
                out.push(resolved);
            }
        }
        Ok(out)
    }

    /// Scans the ambient fact table under a conjunctive predicate.
    pub fn scan_ambient(&self, predicate: &Predicate) -> Result<Vec<ResolvedAmbient>> {
        predicate.check_columns(&AMBIENT_SCAN_COLUMNS)?;
        let mut out = Vec::new();
        for fact in &self.ambients {
            let resolved = self.resolve_ambient(fact);
            if predicate.matches(|col| resolved.column(col)) {
                out.push(resolved);
            }
        }
        Ok(out)
    }
}

fn parse_key(s: &str) -> Result<SurrogateKey> {
    let v: u32 = s.parse().map_err(|_| Error::Parse(format!("bad surrogate key {s:?}")))?;
    SurrogateKey::from_value(v)
}

fn diagnosis_of(code: &str) -> String {
    code.split('_').next().unwrap_or(code).to_string()
}

fn display_name(code: &str) -> String {
    let mut chars = code.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars.as_str().to_lowercase().chars()).collect(),
        None => String::new(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt_cell(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| Error::Parse(format!("bad {what} cell {s:?}")))
    }
}

fn test_fact_row(f: &TestResultFact) -> Vec<String> {
    vec![
        f.pik.to_string(),
        f.time.epoch().to_string(),
        f.geo.to_string(),
        f.healthcare.to_string(),
        f.lab.to_string(),
        f.attribute.to_string(),
        f.result_value.to_string(),
        if f.result_positive { "1" } else { "0" }.into(),
    ]
}

fn parse_test_fact(row: &[String]) -> Result<TestResultFact> {
    Ok(TestResultFact {
        pik: Pik::parse(&row[0])?,
        time: TimeKey::from_epoch(
            row[1].parse().map_err(|_| Error::Parse(format!("bad epoch {:?}", row[1])))?,
        )?,
        geo: parse_key(&row[2])?,
        healthcare: parse_key(&row[3])?,
        lab: parse_key(&row[4])?,
        attribute: parse_key(&row[5])?,
        result_value: row[6]
            .parse()
            .map_err(|_| Error::Parse(format!("bad result value {:?}", row[6])))?,
        result_positive: row[7] == "1",
    })
}

fn ambient_fact_row(f: &AmbientFact) -> Vec<String> {
    vec![
        f.time.epoch().to_string(),
        f.geo.to_string(),
        fmt_opt(f.density),
        fmt_opt(f.avg_rainfall_mm),
        fmt_opt(f.humidity_pct),
        fmt_opt(f.air_pollutants),
        fmt_opt(f.temperature_c),
        fmt_opt(f.pct_positive_dengue),
    ]
}

fn parse_ambient_fact(row: &[String]) -> Result<AmbientFact> {
    Ok(AmbientFact {
        time: TimeKey::from_epoch(
            row[0].parse().map_err(|_| Error::Parse(format!("bad epoch {:?}", row[0])))?,
        )?,
        geo: parse_key(&row[1])?,
        density: parse_opt_cell(&row[2], "density")?,
        avg_rainfall_mm: parse_opt_cell(&row[3], "rainfall")?,
        humidity_pct: parse_opt_cell(&row[4], "humidity")?,
        air_pollutants: parse_opt_cell(&row[5], "air pollutants")?,
        temperature_c: parse_opt_cell(&row[6], "temperature")?,
        pct_positive_dengue: parse_opt_cell(&row[7], "pct positive")?,
    })
}

/// Fully resolved test-result row: dimension attributes inlined.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTest {
    pub pik: String,
    pub time: TimeKey,
    pub geo: GeoAttrs,
    pub provider: String,
    pub lab: String,
    pub code: String,
    pub diagnosis: String,
    pub source_id: String,
    pub age_band: u8,
    pub gender: Gender,
    pub result_value: f64,
    pub result_positive: bool,
}

pub const TEST_SCAN_COLUMNS: [&str; 17] = [
    "pik",
    "date",
    "month",
    "year",
    "weekday",
    "city",
    "upazila",
    "district",
    "division",
    "provider",
    "lab",
    "code",
    "diagnosis",
    "source",
    "gender",
    "age_band",
    "result_positive",
];

impl ResolvedTest {
    pub fn column(&self, name: &str) -> String {
        match name {
            "pik" => self.pik.clone(),
            "date" => self.time.date_label(),
            "month" => self.time.month_label(),
            "year" => self.time.year().to_string(),
            "weekday" => WEEKDAY_NAMES[self.time.weekday_index()].to_string(),
            "city" => self.geo.city.clone(),
            "upazila" => self.geo.upazila.clone(),
            "district" => self.geo.district.clone(),
            "division" => self.geo.division.clone(),
            "provider" => self.provider.clone(),
            "lab" => self.lab.clone(),
            "code" => self.code.clone(),
            "diagnosis" => self.diagnosis.clone(),
            "source" => self.source_id.clone(),
            "gender" => self.gender.as_str().to_string(),
            "age_band" => self.age_band.to_string(),
            "result_positive" => if self.result_positive { "true" } else { "false" }.into(),
            _ => String::new(),
        }
    }
}

/// Fully resolved ambient row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedAmbient {
    pub time: TimeKey,
    pub geo: GeoAttrs,
    pub density: Option<f64>,
    pub rainfall_mm: Option<f64>,
    pub humidity_pct: Option<f64>,
    pub air_pollutants: Option<f64>,
    pub temperature_c: Option<f64>,
    pub pct_positive_dengue: Option<f64>,
}

pub const AMBIENT_SCAN_COLUMNS: [&str; 8] =
    ["date", "month", "year", "weekday", "city", "upazila", "district", "division"];

impl ResolvedAmbient {
    pub fn column(&self, name: &str) -> String {
        match name {
            "date" => self.time.date_label(),
            "month" => self.time.month_label(),
            "year" => self.time.year().to_string(),
            "weekday" => WEEKDAY_NAMES[self.time.weekday_index()].to_string(),
            "city" => self.geo.city.clone(),
            "upazila" => self.geo.upazila.clone(),
            "district" => self.geo.district.clone(),
            "division" => self.geo.division.clone(),
            _ => String::new(),
        }
    }
}

/// Conjunction of equality constraints, parsed from `col=value,col=value`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Predicate {
    pub clauses: Vec<(String, String)>,
}

impl Predicate {
    pub fn all() -> Self {
        Predicate::default()
    }

    pub fn parse(expr: &str) -> Result<Self> {
        let mut clauses = Vec::new();
        for part in expr.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (col, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Query(format!("bad predicate clause {part:?}")))?;
            clauses.push((col.trim().to_string(), value.trim().to_string()));
        }
        Ok(Predicate { clauses })
    }

    pub fn with(mut self, col: &str, value: &str) -> Self {
        self.clauses.push((col.into(), value.into()));
        self
    }

    fn check_columns(&self, known: &[&str]) -> Result<()> {
        for (col, _) in &self.clauses {
            if !known.contains(&col.as_str()) {
                return Err(Error::Query(format!("unknown column {col:?}")));
            }
        }
        Ok(())
    }

    fn matches(&self, mut get: impl FnMut(&str) -> String) -> bool {
        self.clauses.iter().all(|(col, want)| {
            let have = get(col);
            have.trim().eq_ignore_ascii_case(want.trim())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{SourceKind, StagedAmbient, StagedTest};
    use crate::linkage::{encode_full_name, make_pik, LinkKey, LinkSecret};

    fn secret() -> LinkSecret {
        LinkSecret::from_bytes(&[9u8; 16]).unwrap()
    }

    fn pik_for(name: &str, band: u8, gender: Gender, aux: &str) -> Pik {
        let link = LinkKey::new(encode_full_name(name).unwrap(), band, gender);
        make_pik(&link, aux, &secret())
    }

    fn test_record(name: &str, code: &str, day: u32, positive: bool) -> StagedRecord {
        StagedRecord::Test(StagedTest {
            pik: pik_for(name, 2, Gender::Male, "25"),
            time: TimeKey::from_calendar(2022, 8, day, 10, 0, 0, 360).unwrap(),
            geo: GeoAttrs::new("Dhaka", "Dhanmondi", "Dhaka", "Dhaka"),
            age_band: 2,
            gender: Gender::Male,
            code: code.into(),
            result_value: 1.5,
            result_positive: positive,
            provider: "DMC".into(),
            lab: "Lab One".into(),
            source_id: "hospital_a".into(),
            source_kind: SourceKind::Hospital,
        })
    }

    fn ambient_record(day: u32, rain: Option<f64>, density: Option<f64>) -> StagedRecord {
        StagedRecord::Ambient(StagedAmbient {
            time: TimeKey::from_date_utc(2022, 8, day).unwrap(),
            geo: GeoAttrs::new("Dhaka", "Dhanmondi", "Dhaka", "Dhaka"),
            rainfall_mm: rain,
            humidity_pct: rain.map(|_| 80.0),
            temperature_c: None,
            air_quality_index: None,
            population_density: density,
            source_id: if density.is_some() { "bbs" } else { "bmd" }.into(),
            source_kind: if density.is_some() {
                SourceKind::StatisticsBureau
            } else {
                SourceKind::Meteorology
            },
        })
    }

    fn staged(dir: &Path, records: &[StagedRecord]) -> (StagingStore, u64) {
        let store = StagingStore::open(&dir.join("staging")).unwrap();
        let (id, _, _) =
            store.stage_batch("test_source", records.len() as u64, records, &[]).unwrap();
        (store, id)
    }

    #[test]
    fn upsert_dimension_idempotent_and_sequential() {
        let dir = tempfile::tempdir().unwrap();
        let mut wh = Warehouse::open(&dir.path().join("wh")).unwrap();
        let k1 = wh
            .upsert_dimension("geography", &["Dhaka", "Dhanmondi", "Dhaka", "Dhaka"])
            .unwrap();
        assert_eq!(k1.value(), 10_000);
        let k2 = wh
            .upsert_dimension("geography", &["dhaka", "DHANMONDI", "Dhaka", "Dhaka"])
            .unwrap();
        assert_eq!(k1, k2);
        let k3 = wh.upsert_dimension("geography", &["Dhaka", "Savar", "Dhaka", "Dhaka"]).unwrap();
        assert_ne!(k1, k3);
        assert_eq!(k3.value(), 10_001);
    }

    #[test]
    fn load_batch_resolves_dims_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            test_record("Sobuj Chowdhury", "DENGUE_NS1", 1, true),
            test_record("Rina Akter", "DENGUE_IGM", 2, false),
            ambient_record(1, Some(12.0), None),
        ];
        let (staging, id) = staged(dir.path(), &records);
        let mut wh = Warehouse::open(&dir.path().join("wh")).unwrap();
        let report = wh.load_batch(&staging, id).unwrap();
        assert_eq!(report.facts_loaded, 3);
        assert!(!report.already_loaded);
        assert_eq!(wh.tests().len(), 2);
        assert_eq!(wh.ambients().len(), 1);
        assert!(wh.check_integrity().is_empty());

        let again = wh.load_batch(&staging, id).unwrap();
        assert!(again.already_loaded);
        assert_eq!(again.facts_loaded, 0);
        assert_eq!(wh.tests().len(), 2);

        assert!(matches!(wh.load_batch(&staging, 99), Err(Error::UnknownBatch(99))));
    }

    #[test]
    fn pct_positive_recomputed_per_day_geo() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            test_record("Patient One", "DENGUE_NS1", 1, true),
            test_record("Patient Two", "DENGUE_NS1", 1, false),
            test_record("Patient Three", "DENGUE_IGM", 1, false),
            test_record("Patient Four", "DENGUE_IGM", 1, false),
            test_record("Patient Five", "CBC", 1, true),
            ambient_record(1, Some(3.0), None),
        ];
        let (staging, id) = staged(dir.path(), &records);
        let mut wh = Warehouse::open(&dir.path().join("wh")).unwrap();
        wh.load_batch(&staging, id).unwrap();
        // 1 positive of 4 dengue tests; the CBC row does not count.
        assert_eq!(wh.ambients()[0].pct_positive_dengue, Some(25.0));
        assert_eq!(wh.pct_positive_dengue_overall(), Some(25.0));
    }

    #[test]
    fn ambient_rows_merge_measures_across_batches() {
        let dir = tempfile::tempdir().unwrap();
        let staging = StagingStore::open(&dir.path().join("staging")).unwrap();
        let met = vec![ambient_record(1, Some(12.0), None)];
        let bbs = vec![ambient_record(1, None, Some(23_234.0))];
        let (b1, _, _) = staging.stage_batch("bmd", 1, &met, &[]).unwrap();
        let (b2, _, _) = staging.stage_batch("bbs", 1, &bbs, &[]).unwrap();

        let mut wh = Warehouse::open(&dir.path().join("wh")).unwrap();
        wh.load_batch(&staging, b1).unwrap();
        wh.load_batch(&staging, b2).unwrap();
        assert_eq!(wh.ambients().len(), 1);
        let a = &wh.ambients()[0];
        assert_eq!(a.avg_rainfall_mm, Some(12.0));
        assert_eq!(a.humidity_pct, Some(80.0));
        assert_eq!(a.density, Some(23_234.0));
        assert!(wh.check_integrity().is_empty());
    }

    #[test]
    fn reopen_yields_identical_state() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            test_record("Sobuj Chowdhury", "DENGUE_NS1", 1, true),
            test_record("Rina Akter", "DENGUE_IGM", 2, false),
            test_record("Karim Uddin", "CBC", 3, false),
            ambient_record(1, Some(12.0), None),
            ambient_record(2, Some(0.0), None),
        ];
        let (staging, id) = staged(dir.path(), &records);
        let wh_root = dir.path().join("wh");
        let mut wh = Warehouse::open(&wh_root).unwrap();
        wh.load_batch(&staging, id).unwrap();
        let before_tests = wh.tests().to_vec();
        let before_ambient = wh.ambients().to_vec();
        drop(wh);

        let wh2 = Warehouse::open(&wh_root).unwrap();
        assert_eq!(wh2.tests(), before_tests.as_slice());
        assert_eq!(wh2.ambients(), before_ambient.as_slice());
        assert_eq!(wh2.loaded_batches(), vec![id]);
        assert!(wh2.check_integrity().is_empty());

        // New keys issued after reopen continue the sequence.
        let mut wh2 = wh2;
        let k = wh2.upsert_dimension("lab", &["Lab Zed"]).unwrap();
        let max_before = before_tests
            .iter()
            .flat_map(|f| [f.geo.value(), f.healthcare.value(), f.lab.value(), f.attribute.value()])
            .max()
            .unwrap();
        assert!(k.value() > max_before);
    }

    #[test]
    fn scan_predicates_filter_and_reject_unknown_columns() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            test_record("Sobuj Chowdhury", "DENGUE_NS1", 1, true),
            test_record("Rina Akter", "DENGUE_IGM", 2, false),
            test_record("Karim Uddin", "CBC", 2, false),
        ];
        let (staging, id) = staged(dir.path(), &records);
        let mut wh = Warehouse::open(&dir.path().join("wh")).unwrap();
        wh.load_batch(&staging, id).unwrap();

        assert_eq!(wh.scan_tests(&Predicate::all()).unwrap().len(), 3);
        let dengue = wh.scan_tests(&Predicate::parse("diagnosis=DENGUE").unwrap()).unwrap();
        assert_eq!(dengue.len(), 2);
        let august_2 =
            wh.scan_tests(&Predicate::parse("date=2022-08-02,diagnosis=dengue").unwrap()).unwrap();
        assert_eq!(august_2.len(), 1);
        assert_eq!(august_2[0].code, "DENGUE_IGM");
        assert!(wh.scan_tests(&Predicate::parse("city=Narnia").unwrap()).unwrap().is_empty());
        assert!(matches!(
            wh.scan_tests(&Predicate::parse("flavour=salty").unwrap()),
            Err(Error::Query(_))
        ));
    }

    #[test]
    fn manifest_commit_is_the_visibility_point() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![test_record("Sobuj Chowdhury", "DENGUE_NS1", 1, true)];
        let (staging, id) = staged(dir.path(), &records);
        let wh_root = dir.path().join("wh");
        let mut wh = Warehouse::open(&wh_root).unwrap();
        wh.load_batch(&staging, id).unwrap();

        // Remove the manifest: the directory still has table files, but a
        // fresh open sees an empty warehouse rather than trusting strays.
        std::fs::remove_file(wh_root.join(persist::MANIFEST_NAME)).unwrap();
        let wh2 = Warehouse::open(&wh_root).unwrap();
        assert!(wh2.tests().is_empty());
        assert!(wh2.loaded_batches().is_empty());
    }

    #[test]
    fn corrupted_table_detected_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![test_record("Sobuj Chowdhury", "DENGUE_NS1", 1, true)];
        let (staging, id) = staged(dir.path(), &records);
        let wh_root = dir.path().join("wh");
        let mut wh = Warehouse::open(&wh_root).unwrap();
        wh.load_batch(&staging, id).unwrap();
        drop(wh);

        let seg = wh_root.join("fact_testresult/seg_1.tsv");
        let mut text = std::fs::read_to_string(&seg).unwrap();
        text.push_str("tampered\trow\n");
        std::fs::write(&seg, text).unwrap();
        assert!(matches!(Warehouse::open(&wh_root), Err(Error::Validation(_))));
    }

    #[test]
    fn diagnosis_derivation() {
        assert_eq!(diagnosis_of("DENGUE_NS1"), "DENGUE");
        assert_eq!(diagnosis_of("DENGUE_IGM"), "DENGUE");
        assert_eq!(diagnosis_of("CBC"), "CBC");
        assert_eq!(display_name("DENGUE"), "Dengue");
    }
}

//! Durable staging area between acquisition and the warehouse load step.
//! Each ingested file becomes one numbered batch directory holding the
//! standardized records, the reject sidecar, and an accounting file. Batches
//! are written to a temp directory and renamed in, so a crash mid-stage
//! leaves no half-visible batch.

use super::{Reject, RejectReason, StagedAmbient, StagedRecord, StagedTest};
use crate::error::{Error, Result};
use crate::linkage::Pik;
use crate::model::{Gender, GeoAttrs, TimeKey};
use crate::warehouse::persist::{read_tsv, write_tsv};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const RECORD_COLUMNS: [&str; 20] = [
    "rtype",
    "pik",
    "epoch",
    "city",
    "upazila",
    "district",
    "division",
    "age_band",
    "gender",
    "code",
    "result_value",
    "result_positive",
    "provider",
    "lab",
    "rainfall_mm",
    "humidity_pct",
    "temperature_c",
    "air_quality_index",
    "population_density",
    "source_kind",
];

/// Accounting for one staged batch. `rows_in = staged + rejected + deduped`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchMeta {
    pub batch_id: u64,
    pub source_id: String,
    pub rows_in: u64,
    pub staged: u64,
    pub rejected: u64,
    pub deduped: u64,
}

/// Filesystem staging area rooted at `<warehouse root>/staging`.
#[derive(Debug, Clone)]
pub struct StagingStore {
    root: PathBuf,
}

impl StagingStore {
    pub fn open(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(StagingStore { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn batch_dir(&self, batch_id: u64) -> PathBuf {
        self.root.join(format!("batch_{batch_id}"))
    }

    /// Batch ids currently staged, ascending.
    pub fn list_batches(&self) -> Result<Vec<u64>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(id) = name.strip_prefix("batch_") {
                if let Ok(id) = id.parse::<u64>() {
                    ids.push(id);
                }
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    fn next_batch_id(&self) -> Result<u64> {
        Ok(self.list_batches()?.last().copied().unwrap_or(0) + 1)
    }

    /// Deduplicates (last occurrence wins) and writes a new batch atomically.
    /// Returns (batch id, records kept, duplicates collapsed).
    pub fn stage_batch(
        &self,
        source_id: &str,
        rows_in: u64,
        records: &[StagedRecord],
        rejects: &[Reject],
    ) -> Result<(u64, u64, u64)> {
        let mut last_index: BTreeMap<String, usize> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            last_index.insert(r.dedup_key(), i);
        }
        let mut keep: Vec<usize> = last_index.into_values().collect();
        keep.sort_unstable();
        let kept = keep.len() as u64;
        let deduped = records.len() as u64 - kept;

        let batch_id = self.next_batch_id()?;
        let tmp = self.root.join(format!(".tmp_batch_{batch_id}"));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir_all(&tmp)?;

        let rows: Vec<Vec<String>> = keep.iter().map(|&i| record_to_row(&records[i])).collect();
        write_tsv(&tmp.join("records.tsv"), &RECORD_COLUMNS, &rows)?;

        let reject_rows: Vec<Vec<String>> = rejects
            .iter()
            .map(|r| vec![r.row.to_string(), r.reason.to_string(), r.detail.clone()])
            .collect();
        write_tsv(&tmp.join("rejects.tsv"), &["row", "reason", "detail"], &reject_rows)?;

        let meta = BatchMeta {
            batch_id,
            source_id: source_id.to_string(),
            rows_in,
            staged: kept,
            rejected: rejects.len() as u64,
            deduped,
        };
        std::fs::write(tmp.join("META"), render_meta(&meta))?;

        std::fs::rename(&tmp, self.batch_dir(batch_id))?;
        Ok((batch_id, kept, deduped))
    }

    pub fn read_meta(&self, batch_id: u64) -> Result<BatchMeta> {
        let dir = self.batch_dir(batch_id);
        if !dir.is_dir() {
            return Err(Error::UnknownBatch(batch_id));
        }
        let text = std::fs::read_to_string(dir.join("META"))?;
        parse_meta(batch_id, &text)
    }

    pub fn read_batch(&self, batch_id: u64) -> Result<(BatchMeta, Vec<StagedRecord>)> {
        let meta = self.read_meta(batch_id)?;
        let (_, rows) = read_tsv(&self.batch_dir(batch_id).join("records.tsv"))?;
        let mut records = Vec::with_capacity(rows.len());
        for row in &rows {
            records.push(record_from_row(row, &meta.source_id)?);
        }
        if records.len() as u64 != meta.staged {
            return Err(Error::Validation(format!(
                "batch {batch_id}: META says {} records, file has {}",
                meta.staged,
                records.len()
            )));
        }
        Ok((meta, records))
    }

    pub fn read_rejects(&self, batch_id: u64) -> Result<Vec<Reject>> {
        let dir = self.batch_dir(batch_id);
        if !dir.is_dir() {
            return Err(Error::UnknownBatch(batch_id));
        }
        let (_, rows) = read_tsv(&dir.join("rejects.tsv"))?;
        rows.iter()
            .map(|r| {
                Ok(Reject {
                    row: r[0].parse().map_err(|_| {
                        Error::Parse(format!("bad reject row number {:?}", r[0]))
                    })?,
                    reason: RejectReason::parse(&r[1])?,
                    detail: r[2].clone(),
                })
            })
            .collect()
    }
}

fn render_meta(m: &BatchMeta) -> String {
    format!(
        "source_id={}\nrows_in={}\nstaged={}\nrejected={}\ndeduped={}\n",
        m.source_id, m.rows_in, m.staged, m.rejected, m.deduped
    )
}

fn parse_meta(batch_id: u64, text: &str) -> Result<BatchMeta> {
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<String> {
        kv.get(k)
            .cloned()
            .ok_or_else(|| Error::Parse(format!("batch {batch_id} META missing {k}")))
    };
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Parse(format!("batch {batch_id} META field {k} not numeric")))
    };
    Ok(BatchMeta {
        batch_id,
        source_id: get("source_id")?,
        rows_in: num("rows_in")?,
        staged: num("staged")?,
        rejected: num("rejected")?,
        deduped: num("deduped")?,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record_to_row(r: &StagedRecord) -> Vec<String> {
    match r {
        StagedRecord::Test(t) => vec![
            "test".into(),
            t.pik.to_string(),
            t.time.epoch().to_string(),
            t.geo.city.clone(),
            t.geo.upazila.clone(),
            t.geo.district.clone(),
            t.geo.division.clone(),
            t.age_band.to_string(),
            t.gender.as_str().into(),
            t.code.clone(),
            t.result_value.to_string(),
            if t.result_positive { "1" } else { "0" }.into(),
            t.provider.clone(),
            t.lab.clone(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            t.source_kind.as_str().into(),
        ],
        StagedRecord::Ambient(a) => vec![
            "ambient".into(),
            String::new(),
            a.time.epoch().to_string(),
            a.geo.city.clone(),
            a.geo.upazila.clone(),
            a.geo.district.clone(),
            a.geo.division.clone(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            fmt_opt(a.rainfall_mm),
            fmt_opt(a.humidity_pct),
            fmt_opt(a.temperature_c),
            fmt_opt(a.air_quality_index),
            fmt_opt(a.population_density),
            a.source_kind.as_str().into(),
        ],
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("bad {what} value {s:?}")))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, what).map(Some)
    }
}

fn record_from_row(row: &[String], source_id: &str) -> Result<StagedRecord> {
    let epoch: i64 = row[2]
        .parse()
        .map_err(|_| Error::Parse(format!("bad epoch {:?}", row[2])))?;
    let geo = GeoAttrs::new(&row[3], &row[4], &row[5], &row[6]);
    let kind = super::SourceKind::parse(&row[19])?;
    match row[0].as_str() {
        "test" => Ok(StagedRecord::Test(StagedTest {
            pik: Pik::parse(&row[1])?,
            time: TimeKey::from_epoch(epoch)?,
            geo,
            age_band: row[7]
                .parse()
                .map_err(|_| Error::Parse(format!("bad age band {:?}", row[7])))?,
            gender: Gender::parse(&row[8]),
            code: row[9].clone(),
            result_value: parse_f64(&row[10], "result")?,
            result_positive: row[11] == "1",
            provider: row[12].clone(),
            lab: row[13].clone(),
            source_id: source_id.to_string(),
            source_kind: kind,
        })),
        "ambient" => Ok(StagedRecord::Ambient(StagedAmbient {
            time: TimeKey::from_epoch(epoch)?,
            geo,
            rainfall_mm: parse_opt(&row[14], "rainfall")?,
            humidity_pct: parse_opt(&row[15], "humidity")?,
            temperature_c: parse_opt(&row[16], "temperature")?,
            air_quality_index: parse_opt(&row[17], "aqi")?,
            population_density: parse_opt(&row[18], "density")?,
            source_id: source_id.to_string(),
            source_kind: kind,
        })),
        other => Err(Error::Parse(format!("unknown staged record type {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::clinical_descriptor;
    use super::super::{ingest_reader, SourceKind, StagedAmbient, StagedRecord};
    use super::*;
    use crate::linkage::LinkSecret;

    fn secret() -> LinkSecret {
        LinkSecret::from_bytes(&[7u8; 16]).unwrap()
    }

    fn ambient(day: &str, city: &str, rain: f64) -> StagedRecord {
        StagedRecord::Ambient(StagedAmbient {
            time: crate::ingest::parse_observation_date(day).unwrap(),
            geo: GeoAttrs::new(city, "U", "D", "V"),
            rainfall_mm: Some(rain),
            humidity_pct: None,
            temperature_c: None,
            air_quality_index: None,
            population_density: None,
            source_id: "bmd".into(),
            source_kind: SourceKind::Meteorology,
        })
    }

    #[test]
    fn stage_and_read_back_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = StagingStore::open(dir.path()).unwrap();
        let records =
            vec![ambient("2021-06-01", "Dhaka", 4.0), ambient("2021-06-02", "Dhaka", 9.5)];
        let (id, kept, deduped) = store.stage_batch("bmd", 2, &records, &[]).unwrap();
        assert_eq!((id, kept, deduped), (1, 2, 0));

        let (meta, back) = store.read_batch(1).unwrap();
        assert_eq!(meta.source_id, "bmd");
        assert_eq!(meta.rows_in, 2);
        assert_eq!(back, records);
    }

    #[test]
    fn duplicate_keys_collapse_keeping_last() {
        let dir = tempfile::tempdir().unwrap();
        let store = StagingStore::open(dir.path()).unwrap();
        let records = vec![
            ambient("2021-06-01", "Dhaka", 4.0),
            ambient("2021-06-01", "Khulna", 7.0),
            ambient("2021-06-01", "Dhaka", 11.0),
        ];
        let (_, kept, deduped) = store.stage_batch("bmd", 3, &records, &[]).unwrap();
        assert_eq!((kept, deduped), (2, 1));
        let (_, back) = store.read_batch(1).unwrap();
        let dhaka: Vec<f64> = back
            .iter()
            .filter_map(|r| match r {
                StagedRecord::Ambient(a) if a.geo.city == "Dhaka" => a.rainfall_mm,
                _ => None,
            })
            .collect();
        assert_eq!(dhaka, vec![11.0]);
    }

    #[test]
    fn batch_ids_increment_and_list() {
        let dir = tempfile::tempdir().unwrap();
        let store = StagingStore::open(dir.path()).unwrap();
        for i in 0..3 {
            let recs = vec![ambient("2021-06-01", &format!("C{i}"), 1.0)];
            store.stage_batch("bmd", 1, &recs, &[]).unwrap();
        }
        assert_eq!(store.list_batches().unwrap(), vec![1, 2, 3]);
        assert!(matches!(store.read_meta(9), Err(Error::UnknownBatch(9))));
    }

    #[test]
    fn no_temp_dirs_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        let store = StagingStore::open(dir.path()).unwrap();
        store.stage_batch("bmd", 1, &[ambient("2021-06-01", "Dhaka", 1.0)], &[]).unwrap();
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref().unwrap().file_name().to_string_lossy().starts_with(".tmp_")
            })
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn ingest_reader_accounts_for_every_row() {
        let dir = tempfile::tempdir().unwrap();
        let store = StagingStore::open(dir.path()).unwrap();
        let d = clinical_descriptor();
        let csv = "Patient Name,Age,Gender,Test,Result Value,Result,Test Time,City,Upazila,District,Division,Provider,Lab\n\
            Sobuj Chowdhury,23,male,NS1 Antigen,2.4,positive,2022-08-01 10:00,Dhaka,Dhanmondi,Dhaka,Dhaka,DMC,Lab One\n\
            Sobuj Chowdhury,23,male,NS1 Antigen,3.1,positive,2022-08-01 10:00,Dhaka,Dhanmondi,Dhaka,Dhaka,DMC,Lab One\n\
            Rina Akter,31,female,Dengue IgM,1.2,negative,2022-08-02 11:30,Khulna,Sadar,Khulna,Khulna,KMC,Lab Two\n\
            broken,row\n\
            Karim Uddin,44,male,X-Ray,0,negative,2022-08-03 09:15,Dhaka,Savar,Dhaka,Dhaka,DMC,Lab One\n";
        let out = ingest_reader(&d, csv.as_bytes(), &secret(), &store).unwrap();
        assert_eq!(out.rows_in, 5);
        assert_eq!(out.staged, 2);
        assert_eq!(out.rejected, 2);
        assert_eq!(out.deduped, 1);
        assert_eq!(out.rows_in, out.staged + out.rejected + out.deduped);

        let rejects = store.read_rejects(out.batch_id).unwrap();
        assert_eq!(rejects.len(), 2);
        assert_eq!(rejects[0].reason, RejectReason::Malformed);
        assert_eq!(rejects[1].reason, RejectReason::UnmappedCode);

        // Duplicate collapse kept the later value.
        let (_, records) = store.read_batch(out.batch_id).unwrap();
        let sobuj: Vec<f64> = records
            .iter()
            .filter_map(|r| match r {
                StagedRecord::Test(t) if t.code == "DENGUE_NS1" => Some(t.result_value),
                _ => None,
            })
            .collect();
        assert_eq!(sobuj, vec![3.1]);
    }

    #[test]
    fn meta_round_trip() {
        let m = BatchMeta {
            batch_id: 7,
            source_id: "hospital_a".into(),
            rows_in: 10,
            staged: 8,
            rejected: 1,
            deduped: 1,
        };
        assert_eq!(parse_meta(7, &render_meta(&m)).unwrap(), m);
    }
}

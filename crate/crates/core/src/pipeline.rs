//! End-to-end demo pipeline: generate a source corpus, ingest and load it,
//! precompute standard cubes, derive the dengue mart with its report, write
//! the capacity estimate, and checksum the whole output tree.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bench::synth::{generate_scenario, ScenarioConfig};
use crate::capacity::{national_load, write_report_csv, CapacityInputs};
use crate::datamart::{
    derive_mart, detect_outbreak, monthly_series, write_mart_report, MartSpec,
    DEFAULT_OUTBREAK_K, DEFAULT_OUTBREAK_WINDOW,
};
use crate::error::{Error, Result};
use crate::ingest::{ingest_file, StagingStore};
use crate::linkage::LinkSecret;
use crate::olap::precompute_standard;
use crate::warehouse::{persist, Warehouse};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoSummary {
    pub seed: u64,
    pub rows_requested: u64,
    pub clinical_staged: u64,
    pub ambient_staged: u64,
    pub ingest_rejected: u64,
    pub load_rejected: u64,
    pub tests_loaded: u64,
    pub ambients_loaded: u64,
    pub mart_facts: u64,
    pub onset: Option<String>,
    pub peak: Option<String>,
    pub estimated_daily_records: u64,
    /// Hash over every file under the output root, by relative path.
    pub checksum: String,
}

/// Derives a per-seed demo secret so runs are reproducible without any
/// key material; real deployments supply their own key.
fn demo_secret(seed: u64) -> LinkSecret {
    let mut h = Sha256::new();
    h.update(b"ncdw-demo-key");
    h.update(seed.to_le_bytes());
    LinkSecret::from_bytes(&h.finalize()).expect("32-byte digest is a valid secret")
}

/// Hash of every regular file under `root`: relative path, length, and
/// contents, in sorted path order. Two equal trees hash equally no matter
/// where they live.
pub fn dir_checksum(root: &Path) -> Result<String> {
    fn collect(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
        let mut entries: Vec<_> =
            std::fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            if path.is_dir() {
                collect(&path, out)?;
            } else {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    collect(root, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in &files {
        let rel = f.strip_prefix(root).expect("walked under root");
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0u8]);
        let bytes = std::fs::read(f)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Runs the full pipeline for `cfg` under `root`. Every artifact lands
/// beneath `root`; the returned summary includes the tree checksum.
pub fn run_demo_with(cfg: &ScenarioConfig, root: &Path) -> Result<DemoSummary> {
    std::fs::create_dir_all(root)?;
    let (descriptors, plant) = generate_scenario(cfg, &root.join("sources"))?;
    let secret = demo_secret(cfg.seed);

    let staging = StagingStore::open(&root.join("staging"))?;
    let mut clinical_staged = 0u64;
    let mut ambient_staged = 0u64;
    let mut ingest_rejected = 0u64;
    for (descriptor, file) in descriptors.iter().zip(&plant.files) {
        let outcome =
            ingest_file(descriptor, &root.join("sources").join(&file.name), &secret, &staging)?;
        ingest_rejected += outcome.rejected;
        if descriptor.kind.is_clinical() {
            clinical_staged += outcome.staged;
        } else {
            ambient_staged += outcome.staged;
        }
    }

    let mut wh = Warehouse::open(&root.join("warehouse"))?;
    let mut load_rejected = 0u64;
    for batch in staging.list_batches()? {
        let report = wh.load_batch(&staging, batch)?;
        load_rejected += report.rejects;
    }
    let issues = wh.check_integrity();
    if !issues.is_empty() {
        return Err(Error::Validation(format!("integrity check failed: {}", issues.join("; "))));
    }

    precompute_standard(&wh, &root.join("cubes"))?;

    let spec = MartSpec::for_diagnosis(&wh, "DENGUE")?;
    let mart = derive_mart(&spec, &wh, &root.join("mart"))?;
    write_mart_report(&mart, &root.join("report"), DEFAULT_OUTBREAK_K, DEFAULT_OUTBREAK_WINDOW)?;

    let series = monthly_series(&mart)?;
    let (onset, peak) = match detect_outbreak(&series, DEFAULT_OUTBREAK_K, DEFAULT_OUTBREAK_WINDOW)
    {
        Ok(rep) => (
            rep.onset().map(|i| series.month_label(i)),
            rep.peak().map(|i| series.month_label(i)),
        ),
        Err(_) => (None, None),
    };

    let capacity = national_load(&CapacityInputs::reference())?;
    write_report_csv(&capacity, &root.join("report").join("capacity.csv"))?;

    let year_size = capacity.sizes.iter().find(|s| s.days == 365);
    let mut summary_text = String::new();
    summary_text.push_str("ncdw demo\n");
    summary_text.push_str(&format!("seed: {}\n", cfg.seed));
    summary_text.push_str(&format!("requested dengue rows: {}\n", cfg.rows));
    summary_text.push_str(&format!("clinical rows staged: {clinical_staged}\n"));
    summary_text.push_str(&format!("ambient rows staged: {ambient_staged}\n"));
    summary_text.push_str(&format!("rows rejected at ingest: {ingest_rejected}\n"));
    summary_text.push_str(&format!("rows rejected at load: {load_rejected}\n"));
    summary_text.push_str(&format!("test facts loaded: {}\n", wh.tests().len()));
    summary_text.push_str(&format!("ambient facts loaded: {}\n", wh.ambients().len()));
    summary_text.push_str(&format!("dengue mart facts: {}\n", mart.tests().len()));
    summary_text.push_str(&format!(
        "outbreak onset: {}\n",
        onset.as_deref().unwrap_or("not detected")
    ));
    summary_text.push_str(&format!(
        "outbreak peak: {}\n",
        peak.as_deref().unwrap_or("not detected")
    ));
    summary_text.push_str(&format!(
        "estimated daily records nationwide: {}\n",
        capacity.daily_total
    ));
    if let Some(row) = year_size {
        summary_text.push_str(&format!("estimated storage for one year: {:.6} TB\n", row.tb_mixed));
    }
    persist::write_atomic(&root.join("summary.txt"), summary_text.as_bytes())?;

    let checksum = dir_checksum(root)?;
    Ok(DemoSummary {
        seed: cfg.seed,
        rows_requested: cfg.rows,
        clinical_staged,
        ambient_staged,
        ingest_rejected,
        load_rejected,
        tests_loaded: wh.tests().len() as u64,
        ambients_loaded: wh.ambients().len() as u64,
        mart_facts: mart.tests().len() as u64,
        onset,
        peak,
        estimated_daily_records: capacity.daily_total,
        checksum,
    })
}

pub fn run_demo(root: &Path, seed: u64, rows: u64) -> Result<DemoSummary> {
    let cfg = ScenarioConfig { rows, seed, ..ScenarioConfig::default() };
    run_demo_with(&cfg, root)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            rows: 400,
            seed,
            geos: 2,
            malformed_clinical: 6,
            malformed_ambient: 5,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn demo_is_deterministic_across_roots() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_demo_with(&small_cfg(7), &dir.path().join("a")).unwrap();
        let b = run_demo_with(&small_cfg(7), &dir.path().join("b")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum.len(), 64);

        let c = run_demo_with(&small_cfg(8), &dir.path().join("c")).unwrap();
        assert_ne!(a.checksum, c.checksum);
    }

    #[test]
    fn demo_plants_the_expected_epidemiology() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_demo_with(&small_cfg(7), dir.path()).unwrap();
        assert_eq!(summary.peak.as_deref(), Some("2022-08"));
        assert!(summary.onset.is_some());
        assert_eq!(summary.estimated_daily_records, 19_037_398);
        assert_eq!(summary.ingest_rejected, 11);
        assert_eq!(summary.load_rejected, 0);
        assert_eq!(summary.tests_loaded, summary.clinical_staged);
        assert!(summary.mart_facts > 0);
        assert!(summary.mart_facts <= summary.tests_loaded);

        let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(text.contains("outbreak peak: 2022-08"));
        assert!(text.contains("estimated daily records nationwide: 19037398"));
        for artifact in [
            "report/report.html",
            "report/capacity.csv",
            "report/monthly_series.csv",
            "warehouse/MANIFEST",
            "mart/MANIFEST",
        ] {
            assert!(dir.path().join(artifact).exists(), "{artifact} missing");
        }
    }

    #[test]
    fn checksum_tracks_content_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("t");
        std::fs::create_dir_all(root.join("sub")).unwrap();
        std::fs::write(root.join("a.txt"), b"alpha").unwrap();
        std::fs::write(root.join("sub/b.txt"), b"beta").unwrap();
        let base = dir_checksum(&root).unwrap();

        let other = dir.path().join("u");
        std::fs::create_dir_all(other.join("sub")).unwrap();
        std::fs::write(other.join("a.txt"), b"alpha").unwrap();
        std::fs::write(other.join("sub/b.txt"), b"beta").unwrap();
        assert_eq!(base, dir_checksum(&other).unwrap());

        std::fs::write(other.join("sub/b.txt"), b"BETA").unwrap();
        assert_ne!(base, dir_checksum(&other).unwrap());

        std::fs::rename(other.join("sub/b.txt"), other.join("sub/c.txt")).unwrap();
        std::fs::write(other.join("sub/c.txt"), b"beta").unwrap();
        assert_ne!(base, dir_checksum(&other).unwrap());
    }
}

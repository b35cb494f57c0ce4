//! End-to-end pipeline checks: deterministic demo output, batch-level row
//! conservation, referential integrity, and a large persist/reopen round trip.

mod common;

use std::collections::BTreeMap;

use ncdw_core::bench::synth::{generate_scenario, ScenarioConfig};
use ncdw_core::ingest::{ingest_file, StagingStore};
use ncdw_core::linkage::LinkSecret;
use ncdw_core::pipeline::run_demo_with;
use ncdw_core::warehouse::Warehouse;
use tempfile::TempDir;

fn small_cfg(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        rows: 1_500,
        seed,
        geos: 4,
        malformed_clinical: 9,
        malformed_ambient: 4,
        ..ScenarioConfig::default()
    }
}

#[test]
fn demo_runs_are_bit_identical_for_one_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let sa = run_demo_with(&small_cfg(21), a.path()).unwrap();
    let sb = run_demo_with(&small_cfg(21), b.path()).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(sa.checksum.len(), 64);

    let other = TempDir::new().unwrap();
    let so = run_demo_with(&small_cfg(22), other.path()).unwrap();
    assert_ne!(sa.checksum, so.checksum);
}

#[test]
fn every_batch_conserves_rows_from_staging_to_facts() {
    let dir = TempDir::new().unwrap();
    let cfg = ScenarioConfig {
        rows: 3_000,
        seed: 11,
        geos: 5,
        ..ScenarioConfig::default()
    };
    let (descriptors, _) = generate_scenario(&cfg, &dir.path().join("sources")).unwrap();
    let staging = StagingStore::open(&dir.path().join("staging")).unwrap();
    let secret = LinkSecret::from_bytes(b"conservation-check-secret-01").unwrap();

    let mut staged_by_batch = BTreeMap::new();
    for d in &descriptors {
        let path = dir.path().join("sources").join(format!("{}.csv", d.source_id));
        let outcome = ingest_file(d, &path, &secret, &staging).unwrap();
        assert_eq!(
            outcome.rows_in,
            outcome.staged + outcome.rejected + outcome.deduped,
            "{}: ingest must account for every input row",
            d.source_id
        );
        staged_by_batch.insert(outcome.batch_id, outcome.staged);
    }

    let mut wh = Warehouse::open(&dir.path().join("wh")).unwrap();
    for (&batch_id, &staged) in &staged_by_batch {
        let report = wh.load_batch(&staging, batch_id).unwrap();
        assert!(!report.already_loaded);
        assert_eq!(
            staged,
            report.facts_loaded + report.rejects,
            "batch {batch_id}: staged rows must land as facts or rejects"
        );
    }
    for entry in wh.load_entries() {
        assert_eq!(entry.staged, entry.loaded + entry.rejected, "ledger drift");
        assert_eq!(staged_by_batch.get(&entry.batch), Some(&entry.staged));
    }
    assert_eq!(wh.load_entries().len(), staged_by_batch.len());
}

#[test]
fn loaded_store_passes_referential_integrity() {
    let dir = TempDir::new().unwrap();
    let (_, wh, _) = common::build_big_store(dir.path(), 4_000);
    assert_eq!(wh.check_integrity(), Vec::<String>::new());
    assert_eq!(wh.tests().len(), 4_000);
    assert!(!wh.ambients().is_empty());
}

#[test]
fn hundred_thousand_row_store_survives_reopen() {
    let dir = TempDir::new().unwrap();
    let rows = 100_000usize;
    let (_, wh, batch_id) = common::build_big_store(dir.path(), rows);
    assert_eq!(wh.tests().len(), rows);
    let before = common::store_snapshot(&wh);
    drop(wh);

    let reopened = Warehouse::open(&dir.path().join("wh")).unwrap();
    assert_eq!(reopened.tests().len(), rows);
    assert_eq!(reopened.loaded_batches(), vec![batch_id]);
    let after = common::store_snapshot(&reopened);
    assert_eq!(before.len(), after.len());
    assert_eq!(before, after, "reopened store must hold the same rows");
    assert_eq!(reopened.check_integrity(), Vec::<String>::new());
}

//! Shared helpers for the integration suites: an independent brute-force
//! group-by oracle, a randomized cube-input generator, and a large synthetic
//! warehouse builder.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use ncdw_core::ingest::{SourceKind, StagedAmbient, StagedRecord, StagedTest, StagingStore};
use ncdw_core::linkage::{encode_full_name, make_pik, LinkKey, LinkSecret};
use ncdw_core::model::{Gender, GeoAttrs, TimeKey};
use ncdw_core::olap::{
    materialize_cube, rollup_additivity_violation, CubeInput, CubeLattice, MeasureKind,
    MeasureSpec, Strategy,
};
use ncdw_core::warehouse::Warehouse;

const REL_TOL: f64 = 1e-9;

/// Group-by computed the slow, obvious way: walk every row once per cuboid
/// and accumulate (n, sum) pairs per masked key tuple. Shares no code with
/// the lattice builder on purpose.
pub fn brute_force_cuboid(
    input: &CubeInput,
    mask: u32,
) -> BTreeMap<Vec<u32>, Vec<(u64, f64)>> {
    let d = input.dims();
    let grouped: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
    let mut cells: BTreeMap<Vec<u32>, Vec<(u64, f64)>> = BTreeMap::new();
    for row in 0..input.rows {
        let key: Vec<u32> = grouped.iter().map(|&dim| input.keys[dim][row]).collect();
        let accs = cells
            .entry(key)
            .or_insert_with(|| vec![(0, 0.0); input.measures.len()]);
        for (m, col) in input.cols.iter().enumerate() {
            if let Some(v) = col[row] {
                accs[m].0 += 1;
                accs[m].1 += v;
            }
        }
    }
    cells
}

fn sums_close(a: f64, b: f64) -> bool {
    let diff = (a - b).abs();
    diff <= REL_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Checks one materialized lattice cell-for-cell against the brute-force
/// oracle: 2^d cuboids in mask order, exact counts, sums within relative
/// tolerance, and intact rollup additivity.
pub fn check_against_oracle(input: &CubeInput, lattice: &CubeLattice) -> Result<(), String> {
    let d = input.dims();
    if lattice.cuboids.len() != 1usize << d {
        return Err(format!(
            "expected {} cuboids, got {}",
            1usize << d,
            lattice.cuboids.len()
        ));
    }
    for (i, cuboid) in lattice.cuboids.iter().enumerate() {
        if cuboid.mask as usize != i {
            return Err(format!("cuboid {i} carries mask {}", cuboid.mask));
        }
        let expected = brute_force_cuboid(input, cuboid.mask);
        if cuboid.cells.len() != expected.len() {
            return Err(format!(
                "mask {:#b}: {} cells, oracle has {}",
                cuboid.mask,
                cuboid.cells.len(),
                expected.len()
            ));
        }
        for ((key, accs), (okey, oaccs)) in cuboid.cells.iter().zip(expected.iter()) {
            if key != okey {
                return Err(format!("mask {:#b}: key {key:?} vs oracle {okey:?}", cuboid.mask));
            }
            for (m, (acc, &(on, osum))) in accs.iter().zip(oaccs.iter()).enumerate() {
                if acc.n != on {
                    return Err(format!(
                        "mask {:#b} key {key:?} measure {m}: n {} vs oracle {on}",
                        cuboid.mask, acc.n
                    ));
                }
                if !sums_close(acc.sum, osum) {
                    return Err(format!(
                        "mask {:#b} key {key:?} measure {m}: sum {} vs oracle {osum}",
                        cuboid.mask, acc.sum
                    ));
                }
            }
        }
    }
    if let Some(v) = rollup_additivity_violation(lattice) {
        return Err(format!("rollup additivity broken: {v}"));
    }
    Ok(())
}

/// Materializes with both strategies, cross-checks them, and verifies each
/// against the oracle. Returns a description of the first mismatch.
pub fn verify_both_strategies(input: &CubeInput) -> Result<(), String> {
    let independent =
        materialize_cube(input, Strategy::Independent).map_err(|e| format!("independent: {e}"))?;
    let shared =
        materialize_cube(input, Strategy::SharedScan).map_err(|e| format!("shared_scan: {e}"))?;
    if let Some(diff) = ncdw_core::olap::lattice_difference(&independent, &shared) {
        return Err(format!("strategies disagree: {diff}"));
    }
    check_against_oracle(input, &independent).map_err(|e| format!("independent: {e}"))?;
    check_against_oracle(input, &shared).map_err(|e| format!("shared_scan: {e}"))?;
    Ok(())
}

/// Random cube input covering the shapes the engine has to survive: 2 to 4
/// dimensions, skewed cardinalities (including constants), 1 to 10k rows,
/// and measure columns with gaps and negative values.
pub fn random_cube_input(rng: &mut ChaCha12Rng) -> CubeInput {
    let d = rng.gen_range(2..=4usize);
    let rows = match rng.gen_range(0..5u32) {
        0 => rng.gen_range(1..=3usize),
        1 => rng.gen_range(4..=60),
        2 => rng.gen_range(61..=800),
        _ => rng.gen_range(801..=10_000),
    };
    let dim_labels: Vec<String> = (0..d).map(|i| format!("d{i}")).collect();
    let mut dim_values = Vec::with_capacity(d);
    for _ in 0..d {
        let card = rng.gen_range(1..=40u32);
        let col: Vec<String> = (0..rows)
            .map(|_| format!("v{:02}", rng.gen_range(0..card)))
            .collect();
        dim_values.push(col);
    }
    let m = rng.gen_range(1..=3usize);
    let mut measures = Vec::with_capacity(m);
    let mut cols = Vec::with_capacity(m);
    for mi in 0..m {
        let kind = match rng.gen_range(0..4u32) {
            0 => MeasureKind::Count,
            1 => MeasureKind::Sum,
            2 => MeasureKind::Avg,
            _ => MeasureKind::PctTrue,
        };
        let field = match kind {
            MeasureKind::Count => None,
            _ => Some(format!("f{mi}")),
        };
        let gap = rng.gen_range(0.0..0.4f64);
        let col: Vec<Option<f64>> = (0..rows)
            .map(|_| {
                if rng.gen_bool(gap) {
                    None
                } else {
                    Some(match kind {
                        MeasureKind::PctTrue => {
                            if rng.gen_bool(0.3) {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        MeasureKind::Count => 1.0,
                        _ => (rng.gen_range(-5_000.0..5_000.0f64) * 100.0).round() / 100.0,
                    })
                }
            })
            .collect();
        measures.push(MeasureSpec { kind, field });
        cols.push(col);
    }
    CubeInput::from_rows(dim_labels, dim_values, measures, cols)
        .expect("generated columns are rectangular")
}

const STORE_NAMES: [&str; 12] = [
    "Rahim Uddin",
    "Karim Hossain",
    "Fatema Begum",
    "Nasrin Akter",
    "Jamal Mia",
    "Shahid Islam",
    "Rina Das",
    "Habib Rahman",
    "Salma Khatun",
    "Tanvir Ahmed",
    "Moina Barua",
    "Liton Roy",
];

const STORE_GEOS: [(&str, &str, &str, &str); 6] = [
    ("Dhaka", "Dhanmondi", "Dhaka", "Dhaka"),
    ("Chattogram", "Kotwali", "Chattogram", "Chattogram"),
    ("Khulna", "Sonadanga", "Khulna", "Khulna"),
    ("Rajshahi", "Boalia", "Rajshahi", "Rajshahi"),
    ("Sylhet", "Zindabazar", "Sylhet", "Sylhet"),
    ("Barishal", "Band Road", "Barishal", "Barishal"),
];

/// Builds a loaded warehouse of `rows` synthetic test facts (plus a small
/// ambient table) under `root/staging` and `root/wh`, staged as one batch.
/// Every record gets a distinct timestamp so none collapse in staging.
pub fn build_big_store(root: &Path, rows: usize) -> (StagingStore, Warehouse, u64) {
    let secret = LinkSecret::from_bytes(b"integration-suite-secret-000001").unwrap();
    let codes = ["DENGUE_NS1", "DENGUE_IGM", "CBC"];
    let mut records = Vec::with_capacity(rows + 64);
    for i in 0..rows {
        let name = STORE_NAMES[i % STORE_NAMES.len()];
        let band = (i % 9) as u8;
        let gender = match i % 5 {
            0 | 1 => Gender::Male,
            2 | 3 => Gender::Female,
            _ => Gender::Other,
        };
        let link = LinkKey::new(encode_full_name(name).unwrap(), band, gender);
        let age_text = format!("{}", band as u32 * 10 + 3);
        let pik = make_pik(&link, &age_text, &secret);
        let g = STORE_GEOS[i % STORE_GEOS.len()];
        let code = codes[i % codes.len()];
        let epoch = 1_609_459_200 + i as i64 * 37;
        records.push(StagedRecord::Test(StagedTest {
            pik,
            time: TimeKey::from_epoch(epoch).unwrap(),
            geo: GeoAttrs::new(g.0, g.1, g.2, g.3),
            age_band: band,
            gender,
            code: code.to_string(),
            result_value: ((i % 97) as f64) / 9.0,
            result_positive: i % 4 == 0,
            provider: format!("Hospital {}", i % 7),
            lab: format!("Lab {}", i % 3),
            source_id: "bulk".into(),
            source_kind: SourceKind::Hospital,
        }));
    }
    for day in 1..=28u32 {
        for g in STORE_GEOS.iter().take(3) {
            records.push(StagedRecord::Ambient(StagedAmbient {
                time: TimeKey::from_date_utc(2021, 6, day).unwrap(),
                geo: GeoAttrs::new(g.0, g.1, g.2, g.3),
                rainfall_mm: Some(day as f64 * 1.5),
                humidity_pct: Some(70.0 + (day % 10) as f64),
                temperature_c: Some(29.0 - (day % 4) as f64 * 0.5),
                air_quality_index: (day % 3 != 0).then_some(120.0 + day as f64),
                population_density: None,
                source_id: "bulk".into(),
                source_kind: SourceKind::Meteorology,
            }));
        }
    }
    let rows_in = records.len() as u64;
    let staging = StagingStore::open(&root.join("staging")).unwrap();
    let (batch_id, staged, deduped) = staging.stage_batch("bulk", rows_in, &records, &[]).unwrap();
    assert_eq!(staged, rows_in, "synthetic records must have distinct dedup keys");
    assert_eq!(deduped, 0);
    let mut wh = Warehouse::open(&root.join("wh")).unwrap();
    wh.load_batch(&staging, batch_id).unwrap();
    (staging, wh, batch_id)
}

/// Order-independent snapshot of everything a warehouse holds, for
/// persist/reopen comparisons.
pub fn store_snapshot(wh: &Warehouse) -> Vec<String> {
    let mut lines = Vec::new();
    for fact in wh.tests() {
        lines.push(format!("test {fact:?}"));
    }
    for fact in wh.ambients() {
        lines.push(format!("ambient {fact:?}"));
    }
    for name in ncdw_core::warehouse::DIMENSIONS {
        let dim = wh.dim(name).unwrap();
        for (key, attrs) in dim.iter() {
            lines.push(format!("dim {name} {key:?} {attrs:?}"));
        }
    }
    for entry in wh.load_entries() {
        lines.push(format!("ledger {entry:?}"));
    }
    lines.sort_unstable();
    lines
}

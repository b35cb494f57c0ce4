//! One function per subcommand. Diagnostics go to standard error; data goes
//! to files under the requested output directory or to standard output.

use std::io::Write;
use std::path::{Path, PathBuf};

use ncdw_core::bench::{self, synth, BenchPlan};
use ncdw_core::capacity::{national_load, write_report_csv, CapacityInputs};
use ncdw_core::datamart::{write_mart_report, MartSpec};
use ncdw_core::error::{Error, Result};
use ncdw_core::ingest::{ingest_file, StagingStore};
use ncdw_core::linkage::LinkSecret;
use ncdw_core::olap::{
    export_lattice, materialize_from_warehouse, CubeSpec, FactName, Strategy,
};
use ncdw_core::pipeline::{run_demo_with, DemoSummary};
use ncdw_core::report::{html_page, html_table, Section};
use ncdw_core::warehouse::{
    persist, Predicate, Warehouse, AMBIENT_SCAN_COLUMNS, TEST_SCAN_COLUMNS,
};

use crate::config::Config;

fn resolve_secret(cfg: &Config) -> Result<LinkSecret> {
    match &cfg.link_key_file {
        Some(path) => LinkSecret::from_file(path),
        None => LinkSecret::from_env(),
    }
}

pub fn ingest(cfg: &Config, source_id: &str, file_override: Option<&Path>) -> Result<()> {
    let entry = cfg.source(source_id)?;
    let file = file_override.unwrap_or(&entry.file);
    let secret = resolve_secret(cfg)?;
    let staging = StagingStore::open(&cfg.warehouse_root.join("staging"))?;
    let outcome = ingest_file(&entry.descriptor, file, &secret, &staging)?;
    eprintln!(
        "source {}: batch {}, {} rows in, {} staged, {} rejected, {} duplicates dropped",
        outcome.source_id,
        outcome.batch_id,
        outcome.rows_in,
        outcome.staged,
        outcome.rejected,
        outcome.deduped
    );
    if outcome.rejected > 0 {
        let rejects = staging.read_rejects(outcome.batch_id)?;
        let mut by_reason: std::collections::BTreeMap<String, u64> = Default::default();
        for r in &rejects {
            *by_reason.entry(r.reason.to_string()).or_default() += 1;
        }
        for (reason, n) in &by_reason {
            eprintln!("  rejected {n} x {reason}");
        }
    }
    if outcome.staged == 0 && outcome.rows_in > 0 {
        return Err(Error::Validation(format!(
            "no rows staged; all {} rows of {} were rejected",
            outcome.rows_in, outcome.source_id
        )));
    }
    Ok(())
}

pub fn load(cfg: &Config, batch: Option<u64>) -> Result<()> {
    let staging = StagingStore::open(&cfg.warehouse_root.join("staging"))?;
    let mut wh = Warehouse::open(&cfg.warehouse_root)?;
    let batches = match batch {
        Some(id) => vec![id],
        None => staging.list_batches()?,
    };
    if batches.is_empty() {
        eprintln!("nothing staged");
        return Ok(());
    }
    for id in batches {
        let report = wh.load_batch(&staging, id)?;
        if report.already_loaded {
            eprintln!("batch {id}: already loaded, skipped");
        } else {
            eprintln!(
                "batch {id}: {} facts loaded, {} dimension rows created, {} rejected",
                report.facts_loaded, report.dims_created, report.rejects
            );
        }
    }
    Ok(())
}

pub fn scan(cfg: &Config, fact: &str, filter: Option<&str>, limit: Option<usize>) -> Result<()> {
    let wh = Warehouse::open(&cfg.warehouse_root)?;
    let predicate = match filter {
        Some(expr) => Predicate::parse(expr)?,
        None => Predicate::all(),
    };
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let cap = limit.unwrap_or(usize::MAX);
    match FactName::parse(fact)? {
        FactName::TestResult => {
            let rows = wh.scan_tests(&predicate)?;
            writeln!(out, "{}\tresult_value", TEST_SCAN_COLUMNS.join("\t"))?;
            for r in rows.iter().take(cap) {
                let mut cells: Vec<String> =
                    TEST_SCAN_COLUMNS.iter().map(|c| r.column(c)).collect();
                cells.push(r.result_value.to_string());
                writeln!(out, "{}", cells.join("\t"))?;
            }
        }
        FactName::Ambient => {
            let rows = wh.scan_ambient(&predicate)?;
            let measures = [
                "population_density",
                "rainfall_mm",
                "humidity_pct",
                "air_quality_index",
                "temperature_c",
                "pct_positive_dengue",
            ];
            writeln!(out, "{}\t{}", AMBIENT_SCAN_COLUMNS.join("\t"), measures.join("\t"))?;
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for r in rows.iter().take(cap) {
                let mut cells: Vec<String> =
                    AMBIENT_SCAN_COLUMNS.iter().map(|c| r.column(c)).collect();
                cells.extend([
                    fmt(r.density),
                    fmt(r.rainfall_mm),
                    fmt(r.humidity_pct),
                    fmt(r.air_pollutants),
                    fmt(r.temperature_c),
                    fmt(r.pct_positive_dengue),
                ]);
                writeln!(out, "{}", cells.join("\t"))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn cube(
    cfg: &Config,
    fact: &str,
    dims: &str,
    measures: &str,
    strategy: &str,
    out: &Path,
) -> Result<()> {
    let wh = Warehouse::open(&cfg.warehouse_root)?;
    let spec = CubeSpec::parse(fact, dims, measures)?;
    let strategy = Strategy::parse(strategy)?;
    let lattice = materialize_from_warehouse(&wh, &spec, strategy)?;
    let files = export_lattice(&lattice, out)?;
    eprintln!("wrote {} cuboids under {}", files.len(), out.display());
    Ok(())
}

fn mart_root(cfg: &Config, name: &str) -> PathBuf {
    cfg.warehouse_root.join("marts").join(name)
}

pub fn mart_derive(
    cfg: &Config,
    name: &str,
    codes: Option<&Path>,
    diagnosis: Option<&str>,
) -> Result<()> {
    let wh = Warehouse::open(&cfg.warehouse_root)?;
    let spec = match (codes, diagnosis) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)?;
            let listed = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from);
            MartSpec::new(name, listed)?
        }
        (None, Some(d)) => {
            let mut spec = MartSpec::for_diagnosis(&wh, d)?;
            spec.name = name.to_string();
            spec
        }
        (None, None) => {
            return Err(Error::Query("mart derive needs --codes <file> or --diagnosis <name>".into()))
        }
        (Some(_), Some(_)) => {
            return Err(Error::Query("--codes and --diagnosis are mutually exclusive".into()))
        }
    };
    let mart = ncdw_core::datamart::derive_mart(&spec, &wh, &mart_root(cfg, name))?;
    eprintln!(
        "mart {}: {} test facts, {} ambient rows, codes {}",
        name,
        mart.tests().len(),
        mart.ambients().len(),
        spec.disease_codes.iter().cloned().collect::<Vec<_>>().join(",")
    );
    Ok(())
}

pub fn mart_report(cfg: &Config, name: &str, out: &Path, k: f64, window: usize) -> Result<()> {
    let root = mart_root(cfg, name);
    if !root.join("MANIFEST").exists() {
        return Err(Error::Validation(format!(
            "mart {name:?} has not been derived; run `ncdw mart derive --name {name}` first"
        )));
    }
    let mart = Warehouse::open(&root)?;
    let files = write_mart_report(&mart, out, k, window)?;
    for f in &files {
        eprintln!("wrote {}", out.join(f).display());
    }
    Ok(())
}

pub fn warehouse_report(cfg: &Config, out: &Path) -> Result<()> {
    let wh = Warehouse::open(&cfg.warehouse_root)?;
    std::fs::create_dir_all(out)?;

    let mut loads = String::from("batch,staged,loaded,rejected,deduped\n");
    for e in wh.load_entries() {
        loads.push_str(&format!(
            "{},{},{},{},{}\n",
            e.batch, e.staged, e.loaded, e.rejected, e.deduped
        ));
    }
    persist::write_atomic(&out.join("loads.csv"), loads.as_bytes())?;

    let mut sections = Vec::new();
    let dim_rows: Vec<Vec<String>> = ncdw_core::warehouse::DIMENSIONS
        .iter()
        .map(|name| {
            let size = wh.dim(name).map_or(0, |d| d.len());
            vec![name.to_string(), size.to_string()]
        })
        .collect();
    let overview = format!(
        "<p>{} test facts, {} ambient facts, {} load batches.</p>{}",
        wh.tests().len(),
        wh.ambients().len(),
        wh.load_entries().len(),
        html_table(&["Dimension", "Rows"], &dim_rows)
    );
    sections.push(Section::new("Warehouse", overview));

    let load_rows: Vec<Vec<String>> = wh
        .load_entries()
        .iter()
        .map(|e| {
            vec![
                e.batch.to_string(),
                e.staged.to_string(),
                e.loaded.to_string(),
                e.rejected.to_string(),
                e.deduped.to_string(),
            ]
        })
        .collect();
    sections.push(Section::new(
        "Load ledger",
        html_table(&["Batch", "Staged", "Loaded", "Rejected", "Deduped"], &load_rows),
    ));

    let positivity = match wh.pct_positive_dengue_overall() {
        Some(pct) => format!("<p>Overall dengue positivity: {pct:.2}%.</p>"),
        None => "<p>No dengue test facts loaded.</p>".to_string(),
    };
    sections.push(Section::new("Positivity", positivity));

    let issues = wh.check_integrity();
    let integrity = if issues.is_empty() {
        "<p>No integrity issues found.</p>".to_string()
    } else {
        let items: String =
            issues.iter().map(|i| format!("<li>{}</li>", i.replace('<', "&lt;"))).collect();
        format!("<ul>{items}</ul>")
    };
    sections.push(Section::new("Integrity", integrity));

    persist::write_atomic(
        &out.join("warehouse.html"),
        html_page("Warehouse status", &sections).as_bytes(),
    )?;
    eprintln!("wrote {}", out.join("loads.csv").display());
    eprintln!("wrote {}", out.join("warehouse.html").display());
    if !issues.is_empty() {
        eprintln!("integrity issues found: {}", issues.len());
    }
    Ok(())
}

pub fn estimate(inputs: &CapacityInputs, out: &Path) -> Result<()> {
    let report = national_load(inputs)?;
    write_report_csv(&report, out)?;
    let stdout = std::io::stdout();
    let mut w = std::io::BufWriter::new(stdout.lock());
    writeln!(w, "average daily records per hospital: {}", report.r_bar)?;
    writeln!(
        w,
        "government hospitals: {} across {} categories, {} records/day",
        report.govt_hospitals,
        report.per_category.len(),
        report.govt_total
    )?;
    writeln!(
        w,
        "diagnostic centers: {} at weight {}, {} records/day",
        report.diagnostic_centers, inputs.diagnostic_weight, report.diagnostic_total
    )?;
    writeln!(w, "national daily records: {}", report.daily_total)?;
    for row in &report.sizes {
        writeln!(
            w,
            "storage for {} day(s): {:.6} GB ({:.6} TB)",
            row.days, row.gb_decimal, row.tb_mixed
        )?;
    }
    w.flush()?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

pub fn bench_run(rows: &[u64], dims: &[usize], reps: usize, seed: u64, out: &Path) -> Result<()> {
    let plan = BenchPlan {
        row_counts: rows.to_vec(),
        cube_sizes: dims.to_vec(),
        reps,
        seed,
    };
    let report = bench::run(&plan)?;
    let files = bench::emit_report(&report, out)?;
    let stdout = std::io::stdout();
    let mut w = std::io::BufWriter::new(stdout.lock());
    for c in &report.cells {
        writeln!(
            w,
            "rows={} dims={} independent={:.4}s shared_scan={:.4}s speedup={:.2}x cells={}",
            c.rows, c.dims, c.independent_median, c.shared_median, c.speedup, c.base_cells
        )?;
    }
    w.flush()?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    for f in &files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

pub fn generate(rows: u64, seed: u64, months: usize, geos: usize, out: &Path) -> Result<()> {
    let cfg = synth::ScenarioConfig { rows, seed, months, geos, ..Default::default() };
    let (descriptors, summary) = synth::generate_scenario(&cfg, out)?;
    let config_text = crate::config::render_generated_config(&descriptors);
    persist::write_atomic(&out.join("ncdw.toml"), config_text.as_bytes())?;
    for f in &summary.files {
        eprintln!("wrote {} ({} rows, {} malformed)", out.join(&f.name).display(), f.rows, f.expected_rejects);
    }
    eprintln!("wrote {}", out.join("codes.tsv").display());
    eprintln!("wrote {}", out.join("ncdw.toml").display());
    let (py, pm) = summary.peak_month();
    eprintln!(
        "planted: {} dengue tests, {} positives peaking {py:04}-{pm:02}, 0-40 age share {:.1}%",
        summary.tests.iter().sum::<u64>(),
        summary.positives.iter().sum::<u64>(),
        summary.age_0_40_share()
    );
    Ok(())
}

pub fn demo(seed: u64, rows: u64, geos: usize, out: &Path) -> Result<()> {
    let cfg = synth::ScenarioConfig { rows, seed, geos, ..Default::default() };
    let summary: DemoSummary = run_demo_with(&cfg, out)?;
    let stdout = std::io::stdout();
    let mut w = std::io::BufWriter::new(stdout.lock());
    writeln!(w, "seed: {}", summary.seed)?;
    writeln!(w, "clinical rows staged: {}", summary.clinical_staged)?;
    writeln!(w, "ambient rows staged: {}", summary.ambient_staged)?;
    writeln!(w, "rejected at ingest: {}", summary.ingest_rejected)?;
    writeln!(w, "test facts: {}", summary.tests_loaded)?;
    writeln!(w, "ambient facts: {}", summary.ambients_loaded)?;
    writeln!(w, "dengue mart facts: {}", summary.mart_facts)?;
    writeln!(w, "outbreak onset: {}", summary.onset.as_deref().unwrap_or("not detected"))?;
    writeln!(w, "outbreak peak: {}", summary.peak.as_deref().unwrap_or("not detected"))?;
    writeln!(w, "estimated daily records: {}", summary.estimated_daily_records)?;
    writeln!(w, "checksum: {}", summary.checksum)?;
    w.flush()?;
    Ok(())
}

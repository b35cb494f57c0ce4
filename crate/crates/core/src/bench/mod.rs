//! Cube materialization benchmark: times the one-scan-per-group-by strategy
//! against the shared-scan strategy over synthetic tables of growing size,
//! checking first that both produce identical lattices.

pub mod synth;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::olap::{
    lattice_difference, materialize_cube, CubeInput, MeasureKind, MeasureSpec, Strategy,
};
use crate::report::{html_page, html_table, Chart, ChartKind, Section};
use crate::warehouse::persist;

pub const DEFAULT_ROW_COUNTS: [u64; 4] = [100_000, 200_000, 500_000, 1_000_000];
pub const DEFAULT_CUBE_SIZES: [usize; 2] = [3, 4];

/// Distinct values per synthetic dimension.
const CARDINALITIES: [usize; 5] = [12, 32, 20, 8, 24];
const DIM_NAMES: [&str; 5] = ["geography", "test", "age_band", "provider", "month"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchPlan {
    /// Input table sizes, strictly ascending.
    pub row_counts: Vec<u64>,
    /// Cube dimensionalities to exercise (a d-cube has 2^d group-bys).
    pub cube_sizes: Vec<usize>,
    /// Timed repetitions per cell, after one discarded warm-up run.
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchPlan {
    fn default() -> Self {
        BenchPlan {
            row_counts: DEFAULT_ROW_COUNTS.to_vec(),
            cube_sizes: DEFAULT_CUBE_SIZES.to_vec(),
            reps: 3,
            seed: 42,
        }
    }
}

impl BenchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.row_counts.is_empty() {
            return Err(Error::Validation("benchmark needs at least one row count".into()));
        }
        for pair in self.row_counts.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Validation(format!(
                    "row counts must be strictly ascending, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if self.row_counts[0] == 0 {
            return Err(Error::Validation("row counts must be positive".into()));
        }
        if *self.row_counts.last().unwrap() > 20_000_000 {
            return Err(Error::Validation("row counts above 20M are not supported".into()));
        }
        if self.cube_sizes.is_empty() {
            return Err(Error::Validation("benchmark needs at least one cube size".into()));
        }
        for pair in self.cube_sizes.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Validation("cube sizes must be strictly ascending".into()));
            }
        }
        for &d in &self.cube_sizes {
            if d == 0 || d > CARDINALITIES.len() {
                return Err(Error::Validation(format!(
                    "cube size {d} outside 1..={}",
                    CARDINALITIES.len()
                )));
            }
        }
        if self.reps == 0 || self.reps > 25 {
            return Err(Error::Validation(format!("{} reps outside 1..=25", self.reps)));
        }
        Ok(())
    }
}

fn mix_seed(seed: u64, rows: u64, dims: usize) -> u64 {
    let mut x = seed ^ rows.rotate_left(17) ^ ((dims as u64) << 56);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x.wrapping_mul(0x94d0_49bb_1331_11eb) ^ (x >> 31)
}

/// Builds a columnar input resembling a clinical fact table: `dims`
/// uniformly keyed dimensions plus count, sum, and positivity measures.
pub fn synth_cube_input(rows: u64, dims: usize, seed: u64) -> Result<CubeInput> {
    if dims == 0 || dims > CARDINALITIES.len() {
        return Err(Error::Validation(format!("cube size {dims} outside 1..={}", CARDINALITIES.len())));
    }
    if rows == 0 {
        return Err(Error::Validation("synthetic input needs rows".into()));
    }
    let rows = rows as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, rows as u64, dims));
    let mut pools = Vec::with_capacity(dims);
    let mut keys = Vec::with_capacity(dims);
    for d in 0..dims {
        let card = CARDINALITIES[d];
        pools.push((0..card).map(|v| format!("v{v:02}")).collect::<Vec<_>>());
        keys.push((0..rows).map(|_| rng.gen_range(0..card as u32)).collect::<Vec<u32>>());
    }
    let count_col = vec![Some(1.0); rows];
    let sum_col: Vec<Option<f64>> = (0..rows)
        .map(|_| if rng.gen_bool(0.98) { Some((rng.gen::<f64>() * 10_000.0).round() / 100.0) } else { None })
        .collect();
    let pct_col: Vec<Option<f64>> =
        (0..rows).map(|_| Some(if rng.gen_bool(0.2357) { 1.0 } else { 0.0 })).collect();
    Ok(CubeInput {
        dim_labels: DIM_NAMES.iter().take(dims).map(|s| s.to_string()).collect(),
        pools,
        keys,
        measures: vec![
            MeasureSpec { kind: MeasureKind::Count, field: None },
            MeasureSpec { kind: MeasureKind::Sum, field: Some("result_value".into()) },
            MeasureSpec { kind: MeasureKind::PctTrue, field: Some("positive".into()) },
        ],
        cols: vec![count_col, sum_col, pct_col],
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub rows: u64,
    pub dims: usize,
    /// Seconds per timed repetition, warm-up excluded.
    pub independent_secs: Vec<f64>,
    pub shared_secs: Vec<f64>,
    pub independent_median: f64,
    pub shared_median: f64,
    /// independent median over shared median.
    pub speedup: f64,
    /// Cells in the finest group-by.
    pub base_cells: usize,
    /// Both strategies produced identical lattices before timing started.
    pub lattices_equal: bool,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub plan: BenchPlan,
    pub cells: Vec<BenchCell>,
    pub warnings: Vec<String>,
}

impl BenchReport {
    pub fn cell(&self, rows: u64, dims: usize) -> Option<&BenchCell> {
        self.cells.iter().find(|c| c.rows == rows && c.dims == dims)
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("durations are finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn time_materialize(input: &CubeInput, strategy: Strategy) -> Result<f64> {
    let started = Instant::now();
    let lattice = materialize_cube(input, strategy)?;
    let secs = started.elapsed().as_secs_f64();
    drop(lattice);
    Ok(secs)
}

/// Flags cells whose median cost shrinks as rows grow; timing noise can
/// cause this, so it is reported rather than treated as failure.
pub fn monotonicity_warnings(cells: &[BenchCell]) -> Vec<String> {
    let mut warnings = Vec::new();
    let mut dims: Vec<usize> = cells.iter().map(|c| c.dims).collect();
    dims.sort_unstable();
    dims.dedup();
    for d in dims {
        let mut in_dim: Vec<&BenchCell> = cells.iter().filter(|c| c.dims == d).collect();
        in_dim.sort_by_key(|c| c.rows);
        for pair in in_dim.windows(2) {
            for (label, lo, hi) in [
                ("independent", pair[0].independent_median, pair[1].independent_median),
                ("shared_scan", pair[0].shared_median, pair[1].shared_median),
            ] {
                if hi < lo {
                    warnings.push(format!(
                        "{label} at {} dims: median fell from {:.6}s ({} rows) to {:.6}s ({} rows)",
                        d, lo, pair[0].rows, hi, pair[1].rows
                    ));
                }
            }
        }
    }
    warnings
}

/// Runs the full plan. For every (rows, cube size) cell the two strategies
/// are first materialized once each and compared cell-for-cell; any
/// difference aborts the run. Timed repetitions follow on the same table.
pub fn run(plan: &BenchPlan) -> Result<BenchReport> {
    plan.validate()?;
    let mut cells = Vec::new();
    for &dims in &plan.cube_sizes {
        for &rows in &plan.row_counts {
            let input = synth_cube_input(rows, dims, plan.seed)?;
            let independent = materialize_cube(&input, Strategy::Independent)?;
            let shared = materialize_cube(&input, Strategy::SharedScan)?;
            if let Some(diff) = lattice_difference(&independent, &shared) {
                return Err(Error::Validation(format!(
                    "strategies disagree at {rows} rows, {dims} dims: {diff}"
                )));
            }
            let base_cells = independent.base().cells.len();
            drop(independent);
            drop(shared);
            let mut independent_secs = Vec::with_capacity(plan.reps);
            let mut shared_secs = Vec::with_capacity(plan.reps);
            for _ in 0..plan.reps {
                independent_secs.push(time_materialize(&input, Strategy::Independent)?);
                shared_secs.push(time_materialize(&input, Strategy::SharedScan)?);
            }
            let independent_median = median(&independent_secs);
            let shared_median = median(&shared_secs);
            cells.push(BenchCell {
                rows,
                dims,
                independent_median,
                shared_median,
                speedup: independent_median / shared_median.max(1e-12),
                independent_secs,
                shared_secs,
                base_cells,
                lattices_equal: true,
            });
        }
    }
    let warnings = monotonicity_warnings(&cells);
    Ok(BenchReport { plan: plan.clone(), cells, warnings })
}

fn fmt_rows(rows: u64) -> String {
    if rows % 1_000_000 == 0 {
        format!("{}M", rows / 1_000_000)
    } else if rows % 1_000 == 0 {
        format!("{}k", rows / 1_000)
    } else {
        rows.to_string()
    }
}

fn matrix_rows(report: &BenchReport) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for &rows in &report.plan.row_counts {
        for strategy in [Strategy::Independent, Strategy::SharedScan] {
            let mut line = vec![rows.to_string(), strategy.as_str().to_string()];
            for &dims in &report.plan.cube_sizes {
                let cell = report.cell(rows, dims).expect("every plan cell ran");
                let v = match strategy {
                    Strategy::Independent => cell.independent_median,
                    Strategy::SharedScan => cell.shared_median,
                };
                line.push(v.to_string());
            }
            out.push(line);
        }
    }
    out
}

/// Writes results.csv, details.csv, one chart per cube size, and bench.html.
/// The matrix CSV is read back and re-parsed to verify it reproduces the
/// in-memory medians exactly.
pub fn emit_report(report: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut header = vec!["aggregation_size".to_string(), "strategy".to_string()];
    for &d in &report.plan.cube_sizes {
        header.push(format!("cube_size_{d}"));
    }
    let matrix = matrix_rows(report);
    let mut csv_text = header.join(",") + "\n";
    for row in &matrix {
        csv_text.push_str(&row.join(","));
        csv_text.push('\n');
    }
    let results_path = dir.join("results.csv");
    persist::write_atomic(&results_path, csv_text.as_bytes())?;
    verify_matrix_roundtrip(report, &results_path)?;
    written.push(results_path);

    let mut details = String::from(
        "aggregation_size,cube_size,independent_median_s,shared_median_s,independent_min_s,\
         independent_max_s,shared_min_s,shared_max_s,speedup,base_cells,lattices_equal\n",
    );
    for c in &report.cells {
        let min_max = |xs: &[f64]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &x in xs {
                lo = lo.min(x);
                hi = hi.max(x);
            }
            (lo, hi)
        };
        let (ilo, ihi) = min_max(&c.independent_secs);
        let (slo, shi) = min_max(&c.shared_secs);
        details.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.4},{},{}\n",
            c.rows,
            c.dims,
            c.independent_median,
            c.shared_median,
            ilo,
            ihi,
            slo,
            shi,
            c.speedup,
            c.base_cells,
            c.lattices_equal
        ));
    }
    let details_path = dir.join("details.csv");
    persist::write_atomic(&details_path, details.as_bytes())?;
    written.push(details_path);

    let mut chart_sections = Vec::new();
    for &dims in &report.plan.cube_sizes {
        let mut chart = Chart::new(
            ChartKind::Line,
            &format!("Materialization time, {dims}-dimension cube ({} group-bys)", 1u64 << dims),
            "input rows",
            "median seconds",
        );
        let series_of = |pick: fn(&BenchCell) -> f64| -> Vec<(f64, f64)> {
            report
                .plan
                .row_counts
                .iter()
                .map(|&rows| {
                    let c = report.cell(rows, dims).expect("every plan cell ran");
                    (rows as f64, pick(c))
                })
                .collect()
        };
        chart.add_series("independent", series_of(|c| c.independent_median));
        chart.add_series("shared_scan", series_of(|c| c.shared_median));
        chart.set_x_ticks(
            report.plan.row_counts.iter().map(|&r| (r as f64, fmt_rows(r))).collect(),
        );
        let svg = chart.to_svg();
        let chart_path = dir.join(format!("chart_cube_{dims}.svg"));
        persist::write_atomic(&chart_path, svg.as_bytes())?;
        written.push(chart_path);
        chart_sections.push((dims, svg));
    }

    let mut sections = Vec::new();
    let overview = format!(
        "<p>Cube materialization cost, one-scan-per-group-by versus shared-scan, \
         medians over {} repetition(s) after a discarded warm-up. Row counts: {}. \
         Cube sizes: {}. Seed {}. Both strategies produced identical lattices for \
         every cell before timing began.</p>",
        report.plan.reps,
        report.plan.row_counts.iter().map(|r| fmt_rows(*r)).collect::<Vec<_>>().join(", "),
        report.plan.cube_sizes.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
        report.plan.seed
    );
    sections.push(Section::new("Overview", overview));

    let mut matrix_hdr: Vec<String> = vec!["Aggregation Size".into(), "Strategy".into()];
    for &d in &report.plan.cube_sizes {
        matrix_hdr.push(format!("Cube Size {d} (s)"));
    }
    let matrix_display: Vec<Vec<String>> = matrix
        .iter()
        .map(|row| {
            let mut out = vec![fmt_rows(row[0].parse().unwrap()), row[1].clone()];
            for v in &row[2..] {
                out.push(format!("{:.4}", v.parse::<f64>().unwrap()));
            }
            out
        })
        .collect();
    let hdr_refs: Vec<&str> = matrix_hdr.iter().map(String::as_str).collect();
    sections.push(Section::new("Median seconds", html_table(&hdr_refs, &matrix_display)));

    let speedup_rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                fmt_rows(c.rows),
                c.dims.to_string(),
                format!("{:.3}", c.speedup),
                c.base_cells.to_string(),
            ]
        })
        .collect();
    sections.push(Section::new(
        "Shared-scan speedup",
        html_table(&["Aggregation Size", "Cube Size", "Speedup", "Base Cells"], &speedup_rows),
    ));

    for (dims, svg) in chart_sections {
        sections.push(Section::new(&format!("{dims}-dimension cube"), svg));
    }
    if !report.warnings.is_empty() {
        let list = report
            .warnings
            .iter()
            .map(|w| format!("<li>{}</li>", w.replace('<', "&lt;")))
            .collect::<String>();
        sections.push(Section::new("Warnings", format!("<ul>{list}</ul>")));
    }
    let html_path = dir.join("bench.html");
    persist::write_atomic(&html_path, html_page("Cube materialization benchmark", &sections).as_bytes())?;
    written.push(html_path);
    Ok(written)
}

fn verify_matrix_roundtrip(report: &BenchReport, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    lines.next().ok_or_else(|| Error::Validation("results.csv has no header".into()))?;
    let mut seen = 0usize;
    for line in lines {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 + report.plan.cube_sizes.len() {
            return Err(Error::Validation(format!("results.csv row malformed: {line}")));
        }
        let rows: u64 =
            parts[0].parse().map_err(|_| Error::Validation(format!("bad row count {:?}", parts[0])))?;
        let strategy = Strategy::parse(parts[1])?;
        for (i, &dims) in report.plan.cube_sizes.iter().enumerate() {
            let parsed: f64 = parts[2 + i]
                .parse()
                .map_err(|_| Error::Validation(format!("bad median {:?}", parts[2 + i])))?;
            let cell = report
                .cell(rows, dims)
                .ok_or_else(|| Error::Validation(format!("unexpected row count {rows}")))?;
            let expected = match strategy {
                Strategy::Independent => cell.independent_median,
                Strategy::SharedScan => cell.shared_median,
            };
            if parsed.to_bits() != expected.to_bits() {
                return Err(Error::Validation(format!(
                    "results.csv does not round-trip: {parsed} vs {expected}"
                )));
            }
        }
        seen += 1;
    }
    let expected_rows = report.plan.row_counts.len() * 2;
    if seen != expected_rows {
        return Err(Error::Validation(format!(
            "results.csv has {seen} data rows, expected {expected_rows}"
        )));
    }
    Ok(())
}

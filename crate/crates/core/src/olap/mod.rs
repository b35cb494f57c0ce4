//! Cube materialization over either fact table: all 2^d group-bys from the
//! 0-D apex down to the d-D base, with two strategies. `independent` rescans
//! the input once per cuboid; `shared_scan` scans once for the base cuboid
//! and derives every other cuboid from its smallest already-computed parent.
//! Cells carry additive (count, sum) accumulators so averages and rates are
//! exact under rollup, never an average of averages.

use crate::error::{Error, Result};
use crate::warehouse::{Predicate, ResolvedAmbient, ResolvedTest, Warehouse};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MAX_CUBE_DIMS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactName {
    TestResult,
    Ambient,
}

impl FactName {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "testresult" | "test" | "tests" => Ok(FactName::TestResult),
            "ambient" => Ok(FactName::Ambient),
            other => Err(Error::Query(format!("unknown fact table {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FactName::TestResult => "testresult",
            FactName::Ambient => "ambient",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    Count,
    Sum,
    Avg,
    PctTrue,
}

/// One requested measure, e.g. `count` or `avg:result_value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    pub field: Option<String>,
}

impl MeasureSpec {
    pub fn label(&self) -> String {
        match (&self.kind, &self.field) {
            (MeasureKind::Count, _) => "count".into(),
            (MeasureKind::Sum, Some(f)) => format!("sum_{f}"),
            (MeasureKind::Avg, Some(f)) => format!("avg_{f}"),
            (MeasureKind::PctTrue, Some(f)) => format!("pct_true_{f}"),
            _ => "invalid".into(),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("count") {
            return Ok(MeasureSpec { kind: MeasureKind::Count, field: None });
        }
        let (kind_str, field) = s
            .split_once(':')
            .ok_or_else(|| Error::Query(format!("bad measure {s:?} (want kind:field)")))?;
        let kind = match kind_str.trim().to_ascii_lowercase().as_str() {
            "sum" => MeasureKind::Sum,
            "avg" => MeasureKind::Avg,
            "pct_true" => MeasureKind::PctTrue,
            other => return Err(Error::Query(format!("unknown measure kind {other:?}"))),
        };
        Ok(MeasureSpec { kind, field: Some(field.trim().to_ascii_lowercase()) })
    }
}

/// A cube request: fact table, 1–5 distinct dimensions (each at a level of
/// its hierarchy), and at least one measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubeSpec {
    pub fact: FactName,
    /// (dimension, level), both lowercase.
    pub dims: Vec<(String, String)>,
    pub measures: Vec<MeasureSpec>,
}

/// Dimension hierarchies per fact table: (levels, default level).
fn dim_levels(fact: FactName, dim: &str) -> Option<(&'static [&'static str], &'static str)> {
    let time: (&[&str], &str) = (&["date", "month", "year", "weekday"], "month");
    let geo: (&[&str], &str) = (&["city", "upazila", "district", "division"], "district");
    match (fact, dim) {
        (_, "time") => Some(time),
        (_, "geography") => Some(geo),
        (FactName::TestResult, "patient") => Some((&["pik", "gender", "age_band"], "pik")),
        (FactName::TestResult, "healthcare") => Some((&["provider"], "provider")),
        (FactName::TestResult, "lab") => Some((&["name"], "name")),
        (FactName::TestResult, "test_attribute") => Some((&["code"], "code")),
        (FactName::TestResult, "diagnosis") => Some((&["diagnosis"], "diagnosis")),
        (FactName::TestResult, "source") => Some((&["source_id"], "source_id")),
        _ => None,
    }
}

/// Scan column feeding each (dimension, level).
fn dim_column(dim: &str, level: &str) -> String {
    match (dim, level) {
        ("lab", "name") => "lab".into(),
        ("source", "source_id") => "source".into(),
        ("healthcare", "provider") => "provider".into(),
        ("test_attribute", "code") => "code".into(),
        _ => level.to_string(),
    }
}

const TEST_NUMERIC_FIELDS: [&str; 2] = ["result_value", "age_band"];
const TEST_BOOL_FIELDS: [&str; 1] = ["result_positive"];
const AMBIENT_NUMERIC_FIELDS: [&str; 6] = [
    "rainfall_mm",
    "humidity_pct",
    "temperature_c",
    "air_pollutants",
    "density",
    "pct_positive_dengue",
];

impl CubeSpec {
    /// Parses the CLI shape: fact name, `DIM[@level],...`, `measure,...`.
    pub fn parse(fact: &str, dims: &str, measures: &str) -> Result<Self> {
        let fact = FactName::parse(fact)?;
        let mut dim_list = Vec::new();
        for part in dims.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (name, level) = match part.split_once('@') {
                Some((n, l)) => (n.trim().to_ascii_lowercase(), Some(l.trim().to_ascii_lowercase())),
                None => (part.to_ascii_lowercase(), None),
            };
            let (levels, default) = dim_levels(fact, &name)
                .ok_or_else(|| Error::Query(format!("unknown dimension {name:?} for {}", fact.as_str())))?;
            let level = level.unwrap_or_else(|| default.to_string());
            if !levels.contains(&level.as_str()) {
                return Err(Error::Query(format!(
                    "dimension {name} has no level {level:?} (levels: {})",
                    levels.join(", ")
                )));
            }
            dim_list.push((name, level));
        }
        let mut measure_list = Vec::new();
        for part in measures.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            measure_list.push(MeasureSpec::parse(part)?);
        }
        let spec = CubeSpec { fact, dims: dim_list, measures: measure_list };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() > MAX_CUBE_DIMS {
            return Err(Error::Query(format!(
                "cube needs 1 to {MAX_CUBE_DIMS} dimensions, got {}",
                self.dims.len()
            )));
        }
        for i in 1..self.dims.len() {
            if self.dims[..i].iter().any(|(d, _)| *d == self.dims[i].0) {
                return Err(Error::Query(format!("dimension {:?} listed twice", self.dims[i].0)));
            }
        }
        if self.measures.is_empty() {
            return Err(Error::Query("cube needs at least one measure".into()));
        }
        let (numeric, boolean): (&[&str], &[&str]) = match self.fact {
            FactName::TestResult => (&TEST_NUMERIC_FIELDS, &TEST_BOOL_FIELDS),
            FactName::Ambient => (&AMBIENT_NUMERIC_FIELDS, &[]),
        };
        for m in &self.measures {
            match (&m.kind, &m.field) {
                (MeasureKind::Count, None) => {}
                (MeasureKind::Sum | MeasureKind::Avg, Some(f)) if numeric.contains(&f.as_str()) => {}
                (MeasureKind::PctTrue, Some(f)) if boolean.contains(&f.as_str()) => {}
                _ => {
                    return Err(Error::Query(format!(
                        "measure {} not available on fact {}",
                        m.label(),
                        self.fact.as_str()
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn dim_labels(&self) -> Vec<String> {
        self.dims.iter().map(|(d, l)| format!("{d}@{l}")).collect()
    }
}

/// Additive cell accumulator: contribution count and value sum. Rollups merge
/// these, so derived averages and rates stay exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acc {
    pub n: u64,
    pub sum: f64,
}

impl Acc {
    pub const ZERO: Acc = Acc { n: 0, sum: 0.0 };

    fn add(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
    }

    fn merge(&mut self, other: &Acc) {
        self.n += other.n;
        self.sum += other.sum;
    }
}

impl MeasureKind {
    /// Final measure value for a cell; `None` when no contribution reached it.
    pub fn evaluate(&self, acc: &Acc) -> Option<f64> {
        match self {
            MeasureKind::Count => Some(acc.n as f64),
            MeasureKind::Sum => (acc.n > 0).then_some(acc.sum),
            MeasureKind::Avg => (acc.n > 0).then(|| acc.sum / acc.n as f64),
            MeasureKind::PctTrue => (acc.n > 0).then(|| 100.0 * acc.sum / acc.n as f64),
        }
    }
}

/// Columnar cube input: per-dimension interned value ids plus per-measure
/// contribution columns (`None` = no contribution from that row).
#[derive(Debug, Clone)]
pub struct CubeInput {
    pub dim_labels: Vec<String>,
    /// Sorted distinct values per dimension; a value's id is its index.
    pub pools: Vec<Vec<String>>,
    /// keys[dim][row] = value id.
    pub keys: Vec<Vec<u32>>,
    pub measures: Vec<MeasureSpec>,
    /// cols[measure][row].
    pub cols: Vec<Vec<Option<f64>>>,
    pub rows: usize,
}

impl CubeInput {
    /// Builds the columnar form from row-oriented string dimensions and
    /// measure contributions.
    pub fn from_rows(
        dim_labels: Vec<String>,
        dim_values: Vec<Vec<String>>,
        measures: Vec<MeasureSpec>,
        cols: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let rows = dim_values.first().map_or(0, Vec::len);
        if dim_labels.len() != dim_values.len() {
            return Err(Error::Validation("dimension label/value count mismatch".into()));
        }
        if measures.len() != cols.len() {
            return Err(Error::Validation("measure label/column count mismatch".into()));
        }
        for dv in &dim_values {
            if dv.len() != rows {
                return Err(Error::Validation("ragged dimension columns".into()));
            }
        }
        for c in &cols {
            if c.len() != rows {
                return Err(Error::Validation("ragged measure columns".into()));
            }
        }
        let mut pools = Vec::with_capacity(dim_values.len());
        let mut keys = Vec::with_capacity(dim_values.len());
        for dv in &dim_values {
            let mut pool: Vec<String> = dv.iter().cloned().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            pool.shrink_to_fit();
            let index: BTreeMap<&str, u32> =
                pool.iter().enumerate().map(|(i, v)| (v.as_str(), i as u32)).collect();
            keys.push(dv.iter().map(|v| index[v.as_str()]).collect());
            pools.push(pool);
        }
        Ok(CubeInput { dim_labels, pools, keys, measures, cols, rows })
    }

    pub fn dims(&self) -> usize {
        self.dim_labels.len()
    }
}

/// One group-by: cells keyed by the grouped dimensions' value-id tuple
/// (lexicographic order falls out of the sorted pools).
#[derive(Debug, Clone, PartialEq)]
pub struct Cuboid {
    pub mask: u32,
    pub cells: BTreeMap<Vec<u32>, Vec<Acc>>,
}

/// All 2^d cuboids of one cube, indexed by dimension bitmask.
#[derive(Debug, Clone)]
pub struct CubeLattice {
    pub dim_labels: Vec<String>,
    pub pools: Vec<Vec<String>>,
    pub measures: Vec<MeasureSpec>,
    pub cuboids: Vec<Cuboid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Independent,
    SharedScan,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "independent" => Ok(Strategy::Independent),
            "shared_scan" | "shared-scan" | "shared" => Ok(Strategy::SharedScan),
            other => Err(Error::Query(format!("unknown strategy {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Independent => "independent",
            Strategy::SharedScan => "shared_scan",
        }
    }
}

fn scan_cuboid(input: &CubeInput, mask: u32) -> Cuboid {
    let grouped: Vec<usize> =
        (0..input.dims()).filter(|i| mask & (1 << i) != 0).collect();
    let mut cells: BTreeMap<Vec<u32>, Vec<Acc>> = BTreeMap::new();
    let m = input.measures.len();
    for row in 0..input.rows {
        let key: Vec<u32> = grouped.iter().map(|&i| input.keys[i][row]).collect();
        let accs = cells.entry(key).or_insert_with(|| vec![Acc::ZERO; m]);
        for (mi, col) in input.cols.iter().enumerate() {
            if let Some(v) = col[row] {
                accs[mi].add(v);
            }
        }
    }
    Cuboid { mask, cells }
}

fn derive_from_parent(parent: &Cuboid, parent_mask: u32, dropped_dim: usize, child_mask: u32) -> Cuboid {
    // Position of the dropped dimension inside the parent's key tuple.
    let drop_at = (parent_mask & ((1u32 << dropped_dim) - 1)).count_ones() as usize;
    let mut cells: BTreeMap<Vec<u32>, Vec<Acc>> = BTreeMap::new();
    for (key, accs) in &parent.cells {
        let mut child_key = key.clone();
        child_key.remove(drop_at);
        match cells.entry(child_key) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(accs.clone());
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                for (a, b) in e.get_mut().iter_mut().zip(accs) {
                    a.merge(b);
                }
            }
        }
    }
    Cuboid { mask: child_mask, cells }
}

/// Materializes the full lattice. Both strategies produce the same cuboids;
/// they differ only in how many passes over the input they make.
pub fn materialize_cube(input: &CubeInput, strategy: Strategy) -> Result<CubeLattice> {
    let d = input.dims();
    if d == 0 || d > MAX_CUBE_DIMS {
        return Err(Error::Query(format!("cube needs 1 to {MAX_CUBE_DIMS} dimensions, got {d}")));
    }
    let total = 1usize << d;
    let mut cuboids: Vec<Option<Cuboid>> = vec![None; total];
    match strategy {
        Strategy::Independent => {
            for mask in 0..total as u32 {
                cuboids[mask as usize] = Some(scan_cuboid(input, mask));
            }
        }
        Strategy::SharedScan => {
            let full = (total - 1) as u32;
            cuboids[full as usize] = Some(scan_cuboid(input, full));
            let mut order: Vec<u32> = (0..total as u32).filter(|m| *m != full).collect();
            order.sort_by_key(|m| (std::cmp::Reverse(m.count_ones()), *m));
            for mask in order {
                let mut best: Option<(usize, u32, usize)> = None;
                for j in 0..d {
                    let bit = 1u32 << j;
                    if mask & bit != 0 {
                        continue;
                    }
                    let pmask = mask | bit;
                    let cell_count = cuboids[pmask as usize]
                        .as_ref()
                        .expect("parents computed first")
                        .cells
                        .len();
                    if best.map_or(true, |(c, p, _)| (cell_count, pmask) < (c, p)) {
                        best = Some((cell_count, pmask, j));
                    }
                }
                let (_, pmask, dropped) = best.expect("non-base cuboid has a parent");
                let parent = cuboids[pmask as usize].as_ref().unwrap();
                let derived = derive_from_parent(parent, pmask, dropped, mask);
                cuboids[mask as usize] = Some(derived);
            }
        }
    }
    Ok(CubeLattice {
        dim_labels: input.dim_labels.clone(),
        pools: input.pools.clone(),
        measures: input.measures.clone(),
        cuboids: cuboids.into_iter().map(|c| c.expect("all masks filled")).collect(),
    })
}

impl CubeLattice {
    pub fn dims(&self) -> usize {
        self.dim_labels.len()
    }

    /// Resolves a dimension reference (label, `dim@level`, or bare dimension
    /// name) to its bit position.
    pub fn dim_index(&self, name: &str) -> Result<usize> {
        let want = name.trim().to_ascii_lowercase();
        self.dim_labels
            .iter()
            .position(|l| *l == want || l.split('@').next() == Some(want.as_str()))
            .ok_or_else(|| Error::Query(format!("no dimension {name:?} in this cube")))
    }

    pub fn mask_of(&self, dims: &[&str]) -> Result<u32> {
        let mut mask = 0u32;
        for d in dims {
            mask |= 1 << self.dim_index(d)?;
        }
        Ok(mask)
    }

    pub fn cuboid(&self, mask: u32) -> Result<&Cuboid> {
        self.cuboids
            .get(mask as usize)
            .ok_or_else(|| Error::Query(format!("no cuboid for mask {mask:#b}")))
    }

    pub fn apex(&self) -> &Cuboid {
        &self.cuboids[0]
    }

    pub fn base(&self) -> &Cuboid {
        &self.cuboids[self.cuboids.len() - 1]
    }
}

/// Rollup = drop one grouped dimension: the lattice already holds the result.
pub fn rollup<'a>(lattice: &'a CubeLattice, from_dims: &[&str], drop_dim: &str) -> Result<&'a Cuboid> {
    let from = lattice.mask_of(from_dims)?;
    let bit = 1u32 << lattice.dim_index(drop_dim)?;
    if from & bit == 0 {
        return Err(Error::Query(format!("dimension {drop_dim:?} not in the source cuboid")));
    }
    lattice.cuboid(from & !bit)
}

/// Restricts a cuboid to cells whose `dim` value is in `values`. Measures are
/// untouched. Unknown values simply select nothing.
pub fn dice(lattice: &CubeLattice, group_dims: &[&str], dim: &str, values: &[&str]) -> Result<Cuboid> {
    let mask = lattice.mask_of(group_dims)?;
    let cuboid = lattice.cuboid(mask)?;
    let di = lattice.dim_index(dim)?;
    if mask & (1 << di) == 0 {
        return Err(Error::Query(format!("dimension {dim:?} not grouped in this cuboid")));
    }
    let pos = (mask & ((1u32 << di) - 1)).count_ones() as usize;
    let pool = &lattice.pools[di];
    let wanted: std::collections::BTreeSet<u32> = values
        .iter()
        .filter_map(|v| pool.binary_search_by(|p| p.as_str().cmp(v)).ok())
        .map(|i| i as u32)
        .collect();
    let cells = cuboid
        .cells
        .iter()
        .filter(|(key, _)| wanted.contains(&key[pos]))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(Cuboid { mask, cells })
}

/// Slice is a one-value dice.
pub fn slice(lattice: &CubeLattice, group_dims: &[&str], dim: &str, value: &str) -> Result<Cuboid> {
    dice(lattice, group_dims, dim, &[value])
}

/// Compares two lattices cell-for-cell: counts exact, sums within relative
/// tolerance (summation order differs between strategies). Returns the first
/// difference found.
pub fn lattice_difference(a: &CubeLattice, b: &CubeLattice) -> Option<String> {
    if a.cuboids.len() != b.cuboids.len() {
        return Some(format!("lattice sizes differ: {} vs {}", a.cuboids.len(), b.cuboids.len()));
    }
    const REL_TOL: f64 = 1e-9;
    for (ca, cb) in a.cuboids.iter().zip(&b.cuboids) {
        if ca.cells.len() != cb.cells.len() {
            return Some(format!(
                "cuboid {:#b}: cell counts differ ({} vs {})",
                ca.mask,
                ca.cells.len(),
                cb.cells.len()
            ));
        }
        for ((ka, va), (kb, vb)) in ca.cells.iter().zip(&cb.cells) {
            if ka != kb {
                return Some(format!("cuboid {:#b}: cell keys diverge", ca.mask));
            }
            for (i, (x, y)) in va.iter().zip(vb).enumerate() {
                if x.n != y.n {
                    return Some(format!(
                        "cuboid {:#b} cell {ka:?} measure {i}: count {} vs {}",
                        ca.mask, x.n, y.n
                    ));
                }
                let scale = x.sum.abs().max(y.sum.abs()).max(1.0);
                if (x.sum - y.sum).abs() > REL_TOL * scale {
                    return Some(format!(
                        "cuboid {:#b} cell {ka:?} measure {i}: sum {} vs {}",
                        ca.mask, x.sum, y.sum
                    ));
                }
            }
        }
    }
    None
}

/// Verifies parent/child additivity along every lattice edge: aggregating any
/// cuboid by dropping one dimension must reproduce the stored child.
pub fn rollup_additivity_violation(lattice: &CubeLattice) -> Option<String> {
    let d = lattice.dims();
    for mask in 0..(1u32 << d) {
        for j in 0..d {
            let bit = 1u32 << j;
            if mask & bit == 0 {
                continue;
            }
            let parent = &lattice.cuboids[mask as usize];
            let child = &lattice.cuboids[(mask & !bit) as usize];
            let derived = derive_from_parent(parent, mask, j, mask & !bit);
            if derived.cells.len() != child.cells.len() {
                return Some(format!(
                    "edge {:#b} -> {:#b}: {} derived cells vs {} stored",
                    mask,
                    mask & !bit,
                    derived.cells.len(),
                    child.cells.len()
                ));
            }
            for ((dk, dv), (ck, cv)) in derived.cells.iter().zip(&child.cells) {
                if dk != ck {
                    return Some(format!("edge {:#b} -> {:#b}: key mismatch", mask, mask & !bit));
                }
                for (x, y) in dv.iter().zip(cv) {
                    if x.n != y.n {
                        return Some(format!(
                            "edge {:#b} -> {:#b}: count {} vs {}",
                            mask,
                            mask & !bit,
                            x.n,
                            y.n
                        ));
                    }
                    let scale = x.sum.abs().max(y.sum.abs()).max(1.0);
                    if (x.sum - y.sum).abs() > 1e-9 * scale {
                        return Some(format!(
                            "edge {:#b} -> {:#b}: sum {} vs {}",
                            mask,
                            mask & !bit,
                            x.sum,
                            y.sum
                        ));
                    }
                }
            }
        }
    }
    None
}

/// A cuboid rendered to strings: header then one row per cell, dimension
/// values first, then evaluated measures (blank = no contribution).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn format_measure(kind: MeasureKind, acc: &Acc) -> String {
    if kind == MeasureKind::Count {
        return acc.n.to_string();
    }
    match kind.evaluate(acc) {
        None => String::new(),
        Some(v) => {
            let rounded = (v * 1e6).round() / 1e6;
            rounded.to_string()
        }
    }
}

pub fn cuboid_name(lattice: &CubeLattice, mask: u32) -> String {
    if mask == 0 {
        return "apex".into();
    }
    let parts: Vec<String> = (0..lattice.dims())
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| lattice.dim_labels[i].replace('@', "-"))
        .collect();
    parts.join("_")
}

pub fn cuboid_table(lattice: &CubeLattice, mask: u32) -> Result<ExportTable> {
    let cuboid = lattice.cuboid(mask)?;
    let mut header: Vec<String> = (0..lattice.dims())
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| lattice.dim_labels[i].clone())
        .collect();
    header.extend(lattice.measures.iter().map(MeasureSpec::label));
    let grouped: Vec<usize> = (0..lattice.dims()).filter(|i| mask & (1 << i) != 0).collect();
    let mut rows = Vec::with_capacity(cuboid.cells.len());
    for (key, accs) in &cuboid.cells {
        let mut row: Vec<String> = key
            .iter()
            .zip(&grouped)
            .map(|(id, &di)| lattice.pools[di][*id as usize].clone())
            .collect();
        for (m, acc) in lattice.measures.iter().zip(accs) {
            row.push(format_measure(m.kind, acc));
        }
        rows.push(row);
    }
    Ok(ExportTable { name: cuboid_name(lattice, mask), header, rows })
}

/// Writes every cuboid of the lattice as `cuboid_<dims>.tsv` under `dir`.
pub fn export_lattice(lattice: &CubeLattice, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for mask in 0..(1u32 << lattice.dims()) {
        let table = cuboid_table(lattice, mask)?;
        let path = dir.join(format!("cuboid_{}.tsv", table.name));
        let header: Vec<&str> = table.header.iter().map(String::as_str).collect();
        crate::warehouse::persist::write_tsv(&path, &header, &table.rows)?;
        written.push(path);
    }
    Ok(written)
}

fn test_measure_col(rows: &[ResolvedTest], m: &MeasureSpec) -> Result<Vec<Option<f64>>> {
    let field = m.field.as_deref().unwrap_or("");
    Ok(match (&m.kind, field) {
        (MeasureKind::Count, _) => rows.iter().map(|_| Some(1.0)).collect(),
        (MeasureKind::Sum | MeasureKind::Avg, "result_value") => {
            rows.iter().map(|r| Some(r.result_value)).collect()
        }
        (MeasureKind::Sum | MeasureKind::Avg, "age_band") => {
            rows.iter().map(|r| Some(f64::from(r.age_band))).collect()
        }
        (MeasureKind::PctTrue, "result_positive") => {
            rows.iter().map(|r| Some(if r.result_positive { 1.0 } else { 0.0 })).collect()
        }
        _ => return Err(Error::Query(format!("measure {} not available", m.label()))),
    })
}

fn ambient_measure_col(rows: &[ResolvedAmbient], m: &MeasureSpec) -> Result<Vec<Option<f64>>> {
    let field = m.field.as_deref().unwrap_or("");
    Ok(match (&m.kind, field) {
        (MeasureKind::Count, _) => rows.iter().map(|_| Some(1.0)).collect(),
        (MeasureKind::Sum | MeasureKind::Avg, "rainfall_mm") => {
            rows.iter().map(|r| r.rainfall_mm).collect()
        }
        (MeasureKind::Sum | MeasureKind::Avg, "humidity_pct") => {
            rows.iter().map(|r| r.humidity_pct).collect()
        }
        (MeasureKind::Sum | MeasureKind::Avg, "temperature_c") => {
            rows.iter().map(|r| r.temperature_c).collect()
        }
        (MeasureKind::Sum | MeasureKind::Avg, "air_pollutants") => {
            rows.iter().map(|r| r.air_pollutants).collect()
        }
        (MeasureKind::Sum | MeasureKind::Avg, "density") => {
            rows.iter().map(|r| r.density).collect()
        }
        (MeasureKind::Sum | MeasureKind::Avg, "pct_positive_dengue") => {
            rows.iter().map(|r| r.pct_positive_dengue).collect()
        }
        _ => return Err(Error::Query(format!("measure {} not available", m.label()))),
    })
}

/// Builds the columnar cube input by scanning the warehouse fact table the
/// request names.
pub fn cube_input_from_warehouse(wh: &Warehouse, spec: &CubeSpec) -> Result<CubeInput> {
    spec.validate()?;
    let labels = spec.dim_labels();
    match spec.fact {
        FactName::TestResult => {
            let rows = wh.scan_tests(&Predicate::all())?;
            let dim_values: Vec<Vec<String>> = spec
                .dims
                .iter()
                .map(|(d, l)| {
                    let col = dim_column(d, l);
                    rows.iter().map(|r| r.column(&col)).collect()
                })
                .collect();
            let cols: Result<Vec<_>> =
                spec.measures.iter().map(|m| test_measure_col(&rows, m)).collect();
            CubeInput::from_rows(labels, dim_values, spec.measures.clone(), cols?)
        }
        FactName::Ambient => {
            let rows = wh.scan_ambient(&Predicate::all())?;
            let dim_values: Vec<Vec<String>> = spec
                .dims
                .iter()
                .map(|(d, l)| {
                    let col = dim_column(d, l);
                    rows.iter().map(|r| r.column(&col)).collect()
                })
                .collect();
            let cols: Result<Vec<_>> =
                spec.measures.iter().map(|m| ambient_measure_col(&rows, m)).collect();
            CubeInput::from_rows(labels, dim_values, spec.measures.clone(), cols?)
        }
    }
}

pub fn materialize_from_warehouse(
    wh: &Warehouse,
    spec: &CubeSpec,
    strategy: Strategy,
) -> Result<CubeLattice> {
    let input = cube_input_from_warehouse(wh, spec)?;
    materialize_cube(&input, strategy)
}

/// Materializes and persists the three standing aggregates: patient counts by
/// diagnosis, retest counts per (patient, test attribute), and monthly counts
/// by district. Returns the rendered tables in that order.
pub fn precompute_standard(wh: &Warehouse, dir: &Path) -> Result<Vec<ExportTable>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();

    let by_diag = CubeSpec::parse("testresult", "diagnosis", "count")?;
    let lattice = materialize_from_warehouse(wh, &by_diag, Strategy::SharedScan)?;
    let mut table = cuboid_table(&lattice, 0b1)?;
    table.name = "count_by_diagnosis".into();
    out.push(table);

    let retest_spec = CubeSpec::parse("testresult", "patient@pik,test_attribute", "count")?;
    let lattice = materialize_from_warehouse(wh, &retest_spec, Strategy::SharedScan)?;
    let base = cuboid_table(&lattice, 0b11)?;
    let mut rows = Vec::with_capacity(base.rows.len());
    for (key, accs) in &lattice.base().cells {
        let n = accs[0].n;
        let mut row: Vec<String> = key
            .iter()
            .enumerate()
            .map(|(pos, id)| lattice.pools[pos][*id as usize].clone())
            .collect();
        row.push(n.to_string());
        row.push(n.saturating_sub(1).to_string());
        rows.push(row);
    }
    let mut header = base.header;
    header.push("retests".into());
    out.push(ExportTable { name: "retests".into(), header, rows });

    let monthly = CubeSpec::parse("testresult", "time@month,geography@district", "count")?;
    let lattice = materialize_from_warehouse(wh, &monthly, Strategy::SharedScan)?;
    let mut table = cuboid_table(&lattice, 0b11)?;
    table.name = "monthly_district".into();
    out.push(table);

    for table in &out {
        let path = dir.join(format!("{}.tsv", table.name));
        let header: Vec<&str> = table.header.iter().map(String::as_str).collect();
        crate::warehouse::persist::write_tsv(&path, &header, &table.rows)?;
    }
    Ok(out)
}

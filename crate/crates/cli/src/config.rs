//! TOML configuration: warehouse location, source descriptors, link-key
//! file, and capacity inputs. Command-line flags override file values, and
//! relative paths resolve against the config file's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ncdw_core::capacity::{CapacityInputs, SeatCategory};
use ncdw_core::error::{Error, Result};
use ncdw_core::ingest::{parse_code_map, SourceDescriptor, SourceKind};
use serde::Deserialize;

#[derive(Debug, Clone)]
pub struct SourceEntry {
    pub descriptor: SourceDescriptor,
    pub file: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub warehouse_root: PathBuf,
    pub sources: Vec<SourceEntry>,
    pub capacity: CapacityInputs,
    pub link_key_file: Option<PathBuf>,
}

impl Config {
    /// Built-in defaults used when no config file is present.
    pub fn built_in() -> Self {
        Config {
            warehouse_root: PathBuf::from("warehouse"),
            sources: Vec::new(),
            capacity: CapacityInputs::reference(),
            link_key_file: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: RawConfig = toml::from_str(&text)
            .map_err(|e| Error::Parse(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));

        let mut seen = BTreeSet::new();
        let mut sources = Vec::with_capacity(raw.sources.len());
        for s in raw.sources {
            if !seen.insert(s.id.clone()) {
                return Err(Error::Validation(format!("duplicate source id {:?}", s.id)));
            }
            let kind = SourceKind::parse(&s.kind)?;
            let code_map = match &s.codes {
                Some(p) => parse_code_map(&std::fs::read_to_string(resolve(base, p))?)?,
                None => BTreeMap::new(),
            };
            let descriptor = SourceDescriptor {
                source_id: s.id,
                kind,
                zone_offset_minutes: s.zone_offset_minutes,
                field_map: s.fields,
                code_map,
            };
            descriptor.validate()?;
            sources.push(SourceEntry { file: resolve(base, &s.file), descriptor });
        }

        let capacity = match raw.capacity {
            Some(c) => c.into_inputs()?,
            None => CapacityInputs::reference(),
        };
        Ok(Config {
            warehouse_root: resolve(base, &raw.warehouse_root.unwrap_or_else(|| "warehouse".into())),
            sources,
            capacity,
            link_key_file: raw.link_key_file.map(|p| resolve(base, &p)),
        })
    }

    pub fn source(&self, id: &str) -> Result<&SourceEntry> {
        self.sources
            .iter()
            .find(|s| s.descriptor.source_id == id)
            .ok_or_else(|| Error::Validation(format!("no source {id:?} in configuration")))
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    warehouse_root: Option<PathBuf>,
    link_key_file: Option<PathBuf>,
    #[serde(default, rename = "source")]
    sources: Vec<RawSource>,
    capacity: Option<RawCapacity>,
}

fn default_zone() -> i32 {
    360
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    id: String,
    kind: String,
    file: PathBuf,
    #[serde(default = "default_zone")]
    zone_offset_minutes: i32,
    codes: Option<PathBuf>,
    #[serde(default)]
    fields: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCapacity {
    weekday_averages: Option<Vec<f64>>,
    average_daily_records: Option<f64>,
    #[serde(default, rename = "category")]
    categories: Vec<RawCategory>,
    diagnostic_centers: Option<u64>,
    diagnostic_weight: Option<f64>,
    record_size_kb: Option<f64>,
    horizons_days: Option<Vec<u64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCategory {
    seats: u64,
    hospitals: u64,
}

impl RawCapacity {
    fn into_inputs(self) -> Result<CapacityInputs> {
        let mut inputs = CapacityInputs::reference();
        if let Some(w) = self.weekday_averages {
            if w.len() != 7 {
                return Err(Error::Validation(format!(
                    "weekday_averages needs 7 values, got {}",
                    w.len()
                )));
            }
            inputs.weekday_avgs.copy_from_slice(&w);
            // Custom observations: derive the mean unless the file pins one.
            inputs.avg_daily_records = self.average_daily_records;
        } else if let Some(r) = self.average_daily_records {
            inputs.avg_daily_records = Some(r);
        }
        if !self.categories.is_empty() {
            inputs.categories = self
                .categories
                .into_iter()
                .map(|c| SeatCategory { seats: c.seats, hospitals: c.hospitals })
                .collect();
        }
        if let Some(n) = self.diagnostic_centers {
            inputs.diagnostic_centers = n;
        }
        if let Some(w) = self.diagnostic_weight {
            inputs.diagnostic_weight = w;
        }
        if let Some(kb) = self.record_size_kb {
            inputs.record_size_kb = kb;
        }
        if let Some(h) = self.horizons_days {
            inputs.horizons_days = h;
        }
        inputs.validate()?;
        Ok(inputs)
    }
}

/// Reads capacity inputs from either a file whose top level is the capacity
/// table itself, or a full config carrying a `[capacity]` table (reference
/// defaults when the table is absent).
pub fn load_capacity_file(path: &Path) -> Result<CapacityInputs> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(raw) = toml::from_str::<RawCapacity>(&text) {
        return raw.into_inputs();
    }
    #[derive(Deserialize)]
    struct Nested {
        capacity: Option<RawCapacity>,
    }
    let nested: Nested = toml::from_str(&text)
        .map_err(|e| Error::Parse(format!("capacity config {}: {e}", path.display())))?;
    match nested.capacity {
        Some(raw) => raw.into_inputs(),
        None => Ok(CapacityInputs::reference()),
    }
}

fn toml_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Renders a config for a generated corpus: every descriptor becomes a
/// `[[source]]` block whose file is `<id>.csv` next to the config.
pub fn render_generated_config(descriptors: &[SourceDescriptor]) -> String {
    let mut out = String::new();
    out.push_str("# ncdw configuration for the generated corpus.\n");
    out.push_str("# Relative paths resolve against this file's directory.\n");
    out.push_str("warehouse_root = \"warehouse\"\n");
    for d in descriptors {
        out.push('\n');
        out.push_str("[[source]]\n");
        out.push_str(&format!("id = \"{}\"\n", toml_escape(&d.source_id)));
        out.push_str(&format!("kind = \"{}\"\n", d.kind.as_str()));
        out.push_str(&format!("file = \"{}.csv\"\n", toml_escape(&d.source_id)));
        out.push_str(&format!("zone_offset_minutes = {}\n", d.zone_offset_minutes));
        if !d.code_map.is_empty() {
            out.push_str("codes = \"codes.tsv\"\n");
        }
        out.push_str("\n[source.fields]\n");
        for (from, to) in &d.field_map {
            out.push_str(&format!("\"{}\" = \"{}\"\n", toml_escape(from), toml_escape(to)));
        }
    }
    out
}

//! Storage plumbing shared by staging and the warehouse: atomic file writes,
//! tab-separated tables with a header row, checksums, and the MANIFEST that
//! acts as the commit point for a warehouse directory.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::borrow::Cow;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Writes a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let parent = path
        .parent()
        .ok_or_else(|| Error::Validation(format!("path {path:?} has no parent")))?;
    fs::create_dir_all(parent)?;
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Validation(format!("path {path:?} has no file name")))?;
    let tmp = parent.join(format!(".tmp.{file_name}"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Tab-separated cells cannot carry tabs or line breaks; they are replaced
/// with single spaces on write, consistent with the whitespace-collapsing
/// text normalization applied to dimension attributes.
pub fn tsv_escape(field: &str) -> Cow<'_, str> {
    if field.contains(['\t', '\n', '\r']) {
        Cow::Owned(field.replace(['\t', '\n', '\r'], " "))
    } else {
        Cow::Borrowed(field)
    }
}

/// Renders a header row plus data rows as TSV bytes.
pub fn render_tsv(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&header.join("\t"));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let mut first = true;
        for cell in row {
            if !first {
                out.push('\t');
            }
            out.push_str(&tsv_escape(cell));
            first = false;
        }
        out.push('\n');
    }
    out.into_bytes()
}

pub fn write_tsv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &render_tsv(header, rows))
}

/// Reads a TSV file into (header, rows). Every row must match the header
/// width; short or long rows are a validation error naming the line.
pub fn read_tsv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = match lines.next() {
        Some(h) => h.split('\t').map(str::to_string).collect(),
        None => return Err(Error::Parse(format!("{path:?} is empty"))),
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<String> = line.split('\t').map(str::to_string).collect();
        if cells.len() != header.len() {
            return Err(Error::Validation(format!(
                "{path:?} line {}: expected {} cells, got {}",
                i + 2,
                header.len(),
                cells.len()
            )));
        }
        rows.push(cells);
    }
    Ok((header, rows))
}

pub const MANIFEST_NAME: &str = "MANIFEST";
const MANIFEST_MAGIC: &str = "ncdw-manifest v1";

/// One persisted table file (a dimension file or one fact segment).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableEntry {
    /// Logical table name, e.g. `dim_patient` or `fact_testresult`.
    pub table: String,
    /// Path relative to the warehouse root.
    pub path: String,
    pub rows: u64,
    pub sha256: String,
}

/// Bookkeeping for one committed batch load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadEntry {
    pub batch: u64,
    pub staged: u64,
    pub loaded: u64,
    pub rejected: u64,
    pub deduped: u64,
}

/// The warehouse commit record. A reader only sees files listed here, so a
/// crash between data writes and the manifest rename leaves the previous
/// state visible and intact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub tables: Vec<TableEntry>,
    pub loaded: Vec<LoadEntry>,
}

impl Manifest {
    fn render(&self) -> String {
        let mut out = String::from(MANIFEST_MAGIC);
        out.push('\n');
        for t in &self.tables {
            out.push_str(&format!(
                "table\t{}\t{}\t{}\t{}\n",
                t.table, t.path, t.rows, t.sha256
            ));
        }
        for l in &self.loaded {
            out.push_str(&format!(
                "loaded\t{}\t{}\t{}\t{}\t{}\n",
                l.batch, l.staged, l.loaded, l.rejected, l.deduped
            ));
        }
        out
    }

    fn parse(text: &str) -> Result<Manifest> {
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_MAGIC) {
            return Err(Error::Validation("unrecognized manifest header".into()));
        }
        let mut m = Manifest::default();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split('\t').collect();
            match cells.as_slice() {
                ["table", table, path, rows, sha] => m.tables.push(TableEntry {
                    table: table.to_string(),
                    path: path.to_string(),
                    rows: parse_u64(rows, i)?,
                    sha256: sha.to_string(),
                }),
                ["loaded", batch, staged, loaded, rejected, deduped] => {
                    m.loaded.push(LoadEntry {
                        batch: parse_u64(batch, i)?,
                        staged: parse_u64(staged, i)?,
                        loaded: parse_u64(loaded, i)?,
                        rejected: parse_u64(rejected, i)?,
                        deduped: parse_u64(deduped, i)?,
                    })
                }
                _ => {
                    return Err(Error::Validation(format!(
                        "manifest line {}: unrecognized record",
                        i + 2
                    )))
                }
            }
        }
        Ok(m)
    }
}

fn parse_u64(s: &str, line: usize) -> Result<u64> {
    s.parse()
        .map_err(|_| Error::Validation(format!("manifest line {}: bad number {s:?}", line + 2)))
}

/// Commits the manifest (atomic rename makes it the new warehouse state).
pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    write_atomic(&root.join(MANIFEST_NAME), manifest.render().as_bytes())
}

/// Reads the committed manifest; `None` for a fresh (never-committed) root.
pub fn read_manifest(root: &Path) -> Result<Option<Manifest>> {
    let path = root.join(MANIFEST_NAME);
    if !path.exists() {
        return Ok(None);
    }
    Manifest::parse(&fs::read_to_string(path)?).map(Some)
}

/// Verifies a table file against its manifest entry and loads it.
pub fn read_table(root: &Path, entry: &TableEntry) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let path: PathBuf = root.join(&entry.path);
    let actual = sha256_file(&path)?;
    if actual != entry.sha256 {
        return Err(Error::Validation(format!(
            "checksum mismatch for {}: manifest {}, file {}",
            entry.path, entry.sha256, actual
        )));
    }
    let (header, rows) = read_tsv(&path)?;
    if rows.len() as u64 != entry.rows {
        return Err(Error::Validation(format!(
            "row count mismatch for {}: manifest {}, file {}",
            entry.path,
            entry.rows,
            rows.len()
        )));
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn tsv_round_trip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.tsv");
        let rows = vec![
            vec!["a".to_string(), "1".to_string()],
            vec!["with\ttab".to_string(), String::new()],
        ];
        write_tsv(&path, &["name", "value"], &rows).unwrap();
        let (header, got) = read_tsv(&path).unwrap();
        assert_eq!(header, ["name", "value"]);
        assert_eq!(got[0], ["a", "1"]);
        assert_eq!(got[1], ["with tab", ""]);
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"hello").unwrap();
        let names: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names, ["out.txt"]);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = TempDir::new().unwrap();
        let m = Manifest {
            tables: vec![TableEntry {
                table: "dim_lab".into(),
                path: "dim_lab.tsv".into(),
                rows: 3,
                sha256: "00".into(),
            }],
            loaded: vec![LoadEntry { batch: 1, staged: 10, loaded: 10, rejected: 2, deduped: 1 }],
        };
        write_manifest(dir.path(), &m).unwrap();
        let back = read_manifest(dir.path()).unwrap().unwrap();
        assert_eq!(back, m);
        assert_eq!(read_manifest(&dir.path().join("empty")).unwrap(), None);
    }

    #[test]
    fn read_table_detects_corruption() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("dim_lab.tsv");
        write_tsv(&path, &["key", "name"], &[vec!["10000".into(), "LabCorp".into()]]).unwrap();
        let entry = TableEntry {
            table: "dim_lab".into(),
            path: "dim_lab.tsv".into(),
            rows: 1,
            sha256: sha256_file(&path).unwrap(),
        };
        assert!(read_table(dir.path(), &entry).is_ok());
        std::fs::write(&path, "key\tname\n10000\tTampered\n").unwrap();
        assert!(matches!(read_table(dir.path(), &entry), Err(Error::Validation(_))));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}

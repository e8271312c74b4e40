use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{load_image, Dataset, ImageFormat, Label, WindowParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    /// As written in the CSV; relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub patient_id: Option<String>,
}

/// Labelled image list read from `path,label[,patient_id]` CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, root)?;
        for (i, row) in m.rows.iter().enumerate() {
            let p = m.resolve(row);
            if !p.is_file() {
                return Err(Error::Manifest(format!(
                    "row {}: image {} does not exist",
                    i + 1,
                    p.display()
                )));
            }
        }
        Ok(m)
    }

    /// Parses manifest text without touching the filesystem.
    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Manifest(format!("unreadable header: {e}")))?
            .clone();
        let cols: Vec<&str> = headers.iter().collect();
        let has_patient = match cols.as_slice() {
            ["path", "label"] => false,
            ["path", "label", "patient_id"] => true,
            _ => {
                return Err(Error::Manifest(format!(
                    "header must be path,label[,patient_id], found {}",
                    cols.join(",")
                )))
            }
        };
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let row_no = i + 1;
            let rec = rec.map_err(|e| Error::Manifest(format!("row {row_no}: {e}")))?;
            if rec.len() < 2 || rec.len() > cols.len() {
                return Err(Error::Manifest(format!(
                    "row {row_no}: expected {} fields, found {}",
                    cols.len(),
                    rec.len()
                )));
            }
            if rec[0].is_empty() {
                return Err(Error::Manifest(format!("row {row_no}: empty path")));
            }
            let label: Label = rec[1]
                .parse()
                .map_err(|_| Error::Manifest(format!("row {row_no}: unknown label {:?}", &rec[1])))?;
            let patient_id = if has_patient {
                rec.get(2).filter(|s| !s.is_empty()).map(str::to_string)
            } else {
                None
            };
            rows.push(ManifestRow {
                path: PathBuf::from(&rec[0]),
                label,
                patient_id,
            });
        }
        if rows.is_empty() {
            return Err(Error::Manifest("manifest has no rows".into()));
        }
        Ok(Self { root, rows })
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        if row.path.is_absolute() {
            row.path.clone()
        } else {
            self.root.join(&row.path)
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// `(cancerous, non_cancerous)` row counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.rows.iter().filter(|r| r.label.is_positive()).count();
        (pos, self.rows.len() - pos)
    }

    pub fn to_csv(&self) -> String {
        let with_patient = self.rows.iter().any(|r| r.patient_id.is_some());
        let mut s = String::from(if with_patient { "path,label,patient_id\n" } else { "path,label\n" });
        for r in &self.rows {
            s.push_str(&r.path.to_string_lossy());
            s.push(',');
            s.push_str(r.label.as_str());
            if with_patient {
                s.push(',');
                s.push_str(r.patient_id.as_deref().unwrap_or(""));
            }
            s.push('\n');
        }
        s
    }

    /// Loads every image (format from the file extension) into a dataset.
    pub fn load_dataset(&self, window: Option<WindowParams>) -> Result<Dataset> {
        let records = self
            .rows
            .par_iter()
            .map(|row| {
                let p = self.resolve(row);
                load_image(&p, ImageFormat::from_path(&p)?, window)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(records, self.labels())
    }
}

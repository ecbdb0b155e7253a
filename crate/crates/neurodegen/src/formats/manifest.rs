//! Cohort manifest CSV: `subject_id,visit_index,age_years,diagnosis,path`,
//! with paths relative to the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::atomic::{read, write_atomic};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: u32,
    pub visit_index: u32,
    pub age_years: f64,
    pub diagnosis: u8,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory the relative paths resolve against.
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn encode(rows: &[ManifestRow]) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| Error::Usage(format!("manifest row: {e}")))?;
        }
        w.into_inner().map_err(|e| Error::Usage(format!("manifest: {e}")))
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<ManifestRow>> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?;
        let expected = ["subject_id", "visit_index", "age_years", "diagnosis", "path"];
        if header.iter().ne(expected) {
            return Err(Error::format(
                path,
                format!("manifest header must be `{}`", expected.join(",")),
            ));
        }
        r.deserialize()
            .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let rows = Self::decode(&read(path)?, path)?;
        Ok(Self {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            rows,
        })
    }

    pub fn write(path: &Path, rows: &[ManifestRow]) -> Result<()> {
        write_atomic(path, &Self::encode(rows)?)
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.path)
    }
}

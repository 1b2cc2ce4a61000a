use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub video_id: String,
    /// Raw video directory and/or sidecar directory for this video.
    pub path: PathBuf,
    pub mos: f64,
    pub scene_id: String,
}

/// CSV manifest with header `video_id,path,mos,scene_id`. Relative paths are
/// resolved against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
}

pub const MANIFEST_HEADER: [&str; 4] = ["video_id", "path", "mos", "scene_id"];

impl DatasetManifest {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let m = Self { records };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.video_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate video_id {:?}", r.video_id)));
            }
            if !r.mos.is_finite() {
                return Err(Error::NonFinite(format!("MOS of {}", r.video_id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, video_id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    /// Records whose ids appear in `ids`, in manifest order.
    pub fn subset(&self, ids: &[String]) -> DatasetManifest {
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        DatasetManifest {
            records: self
                .records
                .iter()
                .filter(|r| keep.contains(r.video_id.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Csv(format!(
                "manifest header must be {}, found {}",
                MANIFEST_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for (line, row) in reader.records().enumerate() {
            let row = row?;
            let mos: f64 = row[2]
                .parse()
                .map_err(|_| Error::Csv(format!("row {}: bad mos {:?}", line + 1, &row[2])))?;
            let p = PathBuf::from(&row[1]);
            records.push(Record {
                video_id: row[0].to_string(),
                path: if p.is_absolute() { p } else { base.join(p) },
                mos,
                scene_id: row[3].to_string(),
            });
        }
        Self::new(records)
    }

    /// Writes the manifest; paths under `base` are stored relative to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER)?;
        for r in &self.records {
            let p = r.path.strip_prefix(base).unwrap_or(&r.path);
            w.write_record([
                r.video_id.as_str(),
                &p.to_string_lossy(),
                &format!("{}", r.mos),
                r.scene_id.as_str(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

//! On-disk feature cache: `features.jsonl` with a versioned header line.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::backends::BackendInfo;
use super::features::{FeatureBundle, FeatureTensor};
use super::ModelError;

pub const CACHE_FORMAT: &str = "evaltalker-features";
pub const CACHE_VERSION: u32 = 1;
pub const CACHE_FILE: &str = "features.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub format: String,
    pub version: u32,
    pub backend_set: String,
    pub backends: BTreeMap<String, BackendInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub stimulus_id: String,
    pub source_id: String,
    pub backends: BTreeMap<String, BackendInfo>,
    pub f_g: FeatureTensor,
    pub f_h: FeatureTensor,
    pub f_i: f64,
    pub f_s: FeatureTensor,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FeatureRecord {
    pub fn bundle(&self) -> FeatureBundle {
        FeatureBundle {
            stimulus_id: self.stimulus_id.clone(),
            f_g: Some(self.f_g.clone()),
            f_h: Some(self.f_h.clone()),
            f_i: Some(self.f_i),
            f_s: Some(self.f_s.clone()),
            warnings: self.warnings.clone(),
        }
    }

    pub fn fused(&self) -> Result<Vec<f64>, ModelError> {
        self.bundle().fuse()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub header: CacheHeader,
    pub records: BTreeMap<String, FeatureRecord>,
}

impl FeatureCache {
    pub fn new(backend_set: &str, backends: BTreeMap<String, BackendInfo>) -> Self {
        Self {
            header: CacheHeader {
                format: CACHE_FORMAT.into(),
                version: CACHE_VERSION,
                backend_set: backend_set.into(),
                backends,
            },
            records: BTreeMap::new(),
        }
    }

    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join(CACHE_FILE)
    }

    /// True when every record was produced by exactly `backends`.
    pub fn matches(&self, backends: &BTreeMap<String, BackendInfo>) -> bool {
        self.header.version == CACHE_VERSION
            && &self.header.backends == backends
            && self.records.values().all(|r| &r.backends == backends)
    }

    /// stimulus_id -> fused vector.
    pub fn fused(&self) -> Result<BTreeMap<String, Vec<f64>>, ModelError> {
        self.records
            .iter()
            .map(|(id, r)| Ok((id.clone(), r.fused()?)))
            .collect()
    }

    /// stimulus_id -> source_id.
    pub fn sources(&self) -> BTreeMap<String, String> {
        self.records
            .iter()
            .map(|(id, r)| (id.clone(), r.source_id.clone()))
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir).map_err(|e| ModelError::Io(dir.display().to_string(), e))?;
        let path = Self::path_in(dir);
        let io = |e| ModelError::Io(path.display().to_string(), e);
        let mut w = BufWriter::new(fs::File::create(&path).map_err(io)?);
        let header = serde_json::json!({ "_header": self.header });
        writeln!(w, "{header}").map_err(io)?;
        for r in self.records.values() {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let path = if dir.is_dir() { Self::path_in(dir) } else { dir.to_path_buf() };
        let io = |e| ModelError::Io(path.display().to_string(), e);
        let reader = BufReader::new(fs::File::open(&path).map_err(io)?);
        let mut lines = reader.lines().enumerate();
        let header_line = match lines.next() {
            Some((_, line)) => line.map_err(io)?,
            None => return Err(ModelError::Format(format!("{}: empty feature cache", path.display()))),
        };
        let value: serde_json::Value = serde_json::from_str(&header_line)
            .map_err(|e| ModelError::Format(format!("{} line 1: {e}", path.display())))?;
        let header: CacheHeader = value
            .get("_header")
            .cloned()
            .ok_or_else(|| ModelError::Format(format!("{}: missing header line", path.display())))
            .and_then(|h| {
                serde_json::from_value(h)
                    .map_err(|e| ModelError::Format(format!("{} header: {e}", path.display())))
            })?;
        if header.format != CACHE_FORMAT {
            return Err(ModelError::Format(format!("unknown cache format `{}`", header.format)));
        }
        if header.version != CACHE_VERSION {
            return Err(ModelError::StaleCache(format!(
                "cache version {} but this build writes {CACHE_VERSION}",
                header.version
            )));
        }
        let mut records = BTreeMap::new();
        for (i, line) in lines {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let r: FeatureRecord = serde_json::from_str(&line)
                .map_err(|e| ModelError::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
            records.insert(r.stimulus_id.clone(), r);
        }
        Ok(Self { header, records })
    }
}

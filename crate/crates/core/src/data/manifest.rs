use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image_io::image_dims;
use crate::error::{Error, Result};

/// One `(image, mask, affordance, phrases)` sample. Paths are relative to
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub affordance: String,
    pub phrases: Vec<String>,
}

impl ManifestRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.affordance.is_empty() {
            return Err("empty affordance".into());
        }
        if self.phrases.is_empty() {
            return Err("phrase list is empty".into());
        }
        if self.phrases.iter().any(|p| p.trim().is_empty()) {
            return Err("blank phrase".into());
        }
        Ok(())
    }
}

/// Read a JSONL manifest, validating each record and checking that image
/// and mask sizes agree. Stops at the first bad line.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let rec: ManifestRecord =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        rec.validate().map_err(parse_err)?;
        let img = image_dims(&root.join(&rec.image))?;
        let mask = image_dims(&root.join(&rec.mask))?;
        if img != mask {
            return Err(parse_err(format!(
                "image is {}x{} but mask is {}x{}",
                img.0, img.1, mask.0, mask.1
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

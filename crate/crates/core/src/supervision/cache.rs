use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SupervisionError, SupervisionSet};

/// One cached supervision set, keyed by example id and option index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub example_id: String,
    pub option: usize,
    pub set: SupervisionSet,
}

/// Writes one JSON record per line.
pub fn save_cache(path: &Path, records: &[CacheRecord]) -> Result<(), SupervisionError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_cache(path: &Path) -> Result<Vec<CacheRecord>, SupervisionError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| SupervisionError::Parse {
            path: path.display().to_string(),
            line: n + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

//! Dataset manifest: one `wav_path<TAB>rttm_path` line per example.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub wav: PathBuf,
    pub rttm: PathBuf,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&format!("{}\t{}\n", entry.wav.display(), entry.rttm.display()));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(wav), Some(rttm), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(
                format!("{} line {}", path.display(), line_no + 1),
                "expected `wav_path<TAB>rttm_path`",
            ));
        };
        entries.push(ManifestEntry { wav: PathBuf::from(wav), rttm: PathBuf::from(rttm) });
    }
    Ok(entries)
}

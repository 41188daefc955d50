//! RTTM segment interchange: `SPEAKER <file> 1 <onset> <dur> <NA> <NA> <spk>
//! <NA> <NA>`, one line per segment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Segment, SegmentList};
use crate::error::{Error, Result};

/// Canonical line rendering with millisecond precision. Writing then reading
/// then writing again is byte-identical.
pub fn format_rttm_line(file_id: &str, segment: &Segment) -> String {
    format!(
        "SPEAKER {file_id} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>\n",
        segment.onset_s, segment.duration_s, segment.speaker
    )
}

pub fn write_rttm(path: &Path, file_id: &str, segments: &SegmentList) -> Result<()> {
    let mut out = String::new();
    for segment in segments.entries() {
        out.push_str(&format_rttm_line(file_id, segment));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse every SPEAKER line, grouped by file id.
pub fn read_rttm(path: &Path) -> Result<BTreeMap<String, SegmentList>> {
    let text = fs::read_to_string(path)?;
    let mut grouped: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let loc = || format!("{} line {}", path.display(), line_no + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(Error::parse(
                loc(),
                format!("expected 10 fields, got {}", fields.len()),
            ));
        }
        if fields[0] != "SPEAKER" {
            return Err(Error::parse(loc(), format!("expected SPEAKER record, got {}", fields[0])));
        }
        let onset_s: f64 = fields[3]
            .parse()
            .map_err(|e| Error::parse(loc(), format!("bad onset `{}`: {e}", fields[3])))?;
        let duration_s: f64 = fields[4]
            .parse()
            .map_err(|e| Error::parse(loc(), format!("bad duration `{}`: {e}", fields[4])))?;
        grouped.entry(fields[1].to_string()).or_default().push(Segment {
            speaker: fields[7].to_string(),
            onset_s,
            duration_s,
        });
    }
    grouped
        .into_iter()
        .map(|(file, segs)| SegmentList::new(segs).map(|l| (file, l)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("dive-rttm-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn seg(speaker: &str, onset: f64, dur: f64) -> Segment {
        Segment { speaker: speaker.into(), onset_s: onset, duration_s: dur }
    }

    #[test]
    fn grammar_fixture() {
        let path = tmp("grammar.rttm");
        std::fs::write(&path, "SPEAKER f 1 0.50 1.25 <NA> <NA> A <NA> <NA>\n").unwrap();
        let map = read_rttm(&path).unwrap();
        let list = &map["f"];
        assert_eq!(list.entries().len(), 1);
        assert_eq!(list.entries()[0], seg("A", 0.50, 1.25));
    }

    #[test]
    fn write_read_round_trip_is_identical() {
        let list = SegmentList::new(vec![
            seg("spk1", 0.0, 1.5),
            seg("spk2", 1.25, 2.0),
            seg("spk1", 3.5, 0.75),
        ])
        .unwrap();
        let path = tmp("roundtrip.rttm");
        write_rttm(&path, "conv0", &list).unwrap();
        let map = read_rttm(&path).unwrap();
        assert_eq!(map["conv0"], list);
    }

    #[test]
    fn write_read_write_is_byte_exact() {
        let list = SegmentList::new(vec![seg("spk2", 0.123, 4.5), seg("spk1", 2.0, 0.031)]).unwrap();
        let first = tmp("byte1.rttm");
        let second = tmp("byte2.rttm");
        write_rttm(&first, "c", &list).unwrap();
        let reread = read_rttm(&first).unwrap();
        write_rttm(&second, "c", &reread["c"]).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let path = tmp("bad.rttm");
        std::fs::write(&path, "SPEAKER ok 1 0.0 1.0 <NA> <NA> a <NA> <NA>\nSPEAKER broken\n")
            .unwrap();
        let err = read_rttm(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn non_numeric_onset_is_an_error() {
        let path = tmp("badonset.rttm");
        std::fs::write(&path, "SPEAKER f 1 zero 1.0 <NA> <NA> a <NA> <NA>\n").unwrap();
        assert!(read_rttm(&path).is_err());
    }
}

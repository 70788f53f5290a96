use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speaker attributes attached to an utterance. Every field may be absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Attributes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nationality: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub rec_id: String,
    pub speaker_id: String,
    /// Absent in a listing that has not been through feature extraction yet.
    #[serde(default)]
    pub feature_path: PathBuf,
    #[serde(default)]
    pub num_frames: usize,
    pub start_time: f64,
    pub end_time: f64,
    #[serde(default)]
    pub attributes: Attributes,
}

impl UtteranceRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.utt_id.is_empty() {
            return Err("empty utt_id".into());
        }
        if self.speaker_id.is_empty() {
            return Err(format!("utterance {:?} has an empty speaker_id", self.utt_id));
        }
        if !(self.end_time > self.start_time) {
            return Err(format!(
                "utterance {:?}: end_time {} must exceed start_time {}",
                self.utt_id, self.end_time, self.start_time
            ));
        }
        if let Some(age) = self.attributes.age {
            if !age.is_finite() {
                return Err(format!("utterance {:?}: non-finite age", self.utt_id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<UtteranceRecord>,
    pub provenance: String,
}

impl Manifest {
    /// Builds a manifest, rejecting duplicate utterance ids and invalid records.
    pub fn new(records: Vec<UtteranceRecord>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            r.validate().map_err(Error::Data)?;
            if !seen.insert(r.utt_id.as_str()) {
                return Err(Error::data(format!("duplicate utt_id {:?}", r.utt_id)));
            }
        }
        Ok(Self {
            records,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.speaker_id.as_str()).collect()
    }

    pub fn recordings(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.rec_id.as_str()).collect()
    }

    pub fn get(&self, utt_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utt_id == utt_id)
    }

    /// Resolves relative feature paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for r in &mut self.records {
            if r.feature_path.is_relative() {
                r.feature_path = base.join(&r.feature_path);
            }
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let record: UtteranceRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        record.validate().map_err(parse_err)?;
        if !seen.insert(record.utt_id.clone()) {
            return Err(Error::DuplicateUtterance {
                path: path.to_path_buf(),
                line: line_no,
                utt_id: record.utt_id,
            });
        }
        records.push(record);
    }
    Ok(Manifest {
        records,
        provenance: path.display().to_string(),
    })
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in &manifest.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn record(utt: &str, rec: &str, spk: &str) -> UtteranceRecord {
        UtteranceRecord {
            utt_id: utt.into(),
            rec_id: rec.into(),
            speaker_id: spk.into(),
            feature_path: format!("{utt}.feat").into(),
            num_frames: 100,
            start_time: 0.0,
            end_time: 1.0,
            attributes: Attributes::default(),
        }
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn line(utt: &str) -> String {
        serde_json::to_string(&record(utt, "r1", "s1")).unwrap()
    }

    #[test]
    fn empty_file_gives_empty_manifest() {
        let f = write_lines(&[]);
        assert!(load_manifest(f.path()).unwrap().is_empty());
    }

    #[test]
    fn preserves_order() {
        let f = write_lines(&[line("c"), line("a"), line("b")]);
        let m = load_manifest(f.path()).unwrap();
        let ids: Vec<_> = m.records.iter().map(|r| r.utt_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn duplicate_reports_line() {
        let f = write_lines(&[line("a"), line("b"), line("c"), line("d"), line("b")]);
        match load_manifest(f.path()) {
            Err(Error::DuplicateUtterance { line, utt_id, .. }) => {
                assert_eq!(line, 5);
                assert_eq!(utt_id, "b");
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let f = write_lines(&[line("a"), "{not json".into()]);
        match load_manifest(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn attributes_round_trip_through_jsonl() {
        let mut r = record("u", "r", "s");
        r.attributes.age = Some(56.5);
        r.attributes.nationality = Some("US".into());
        let m = Manifest::new(vec![r.clone()], "test").unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_manifest(f.path(), &m).unwrap();
        assert_eq!(load_manifest(f.path()).unwrap().records, vec![r]);
    }

    #[test]
    fn rejects_reversed_times() {
        let mut r = record("u", "r", "s");
        r.end_time = 0.0;
        assert!(Manifest::new(vec![r], "").is_err());
    }
}

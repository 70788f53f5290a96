//! Attribute CSV import (`speaker_id,age,nationality,gender`).

use std::collections::BTreeMap;
use std::path::Path;

use super::manifest::{Attributes, Manifest};
use crate::error::{Error, Result};

pub const ATTRIBUTE_COLUMNS: [&str; 4] = ["speaker_id", "age", "nationality", "gender"];

pub type AttributeTable = BTreeMap<String, Attributes>;

pub fn read_attribute_csv(path: impl AsRef<Path>) -> Result<AttributeTable> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut col = [0usize; 4];
    let mut missing = Vec::new();
    for (slot, name) in col.iter_mut().zip(ATTRIBUTE_COLUMNS) {
        match headers.iter().position(|h| h.trim() == name) {
            Some(i) => *slot = i,
            None => missing.push(name),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing required column(s): {}", missing.join(", ")),
        });
    }

    let mut table = AttributeTable::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let cell = |c: usize| row.get(c).map(str::trim).filter(|s| !s.is_empty());
        let speaker = cell(col[0]).ok_or_else(|| parse_err("empty speaker_id".into()))?;
        let age = match cell(col[1]) {
            Some(a) => {
                let v: f64 = a.parse().map_err(|_| parse_err(format!("bad age {a:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(format!("non-finite age {a:?}")));
                }
                Some(v)
            }
            None => None,
        };
        table.insert(
            speaker.to_string(),
            Attributes {
                age,
                nationality: cell(col[2]).map(String::from),
                gender: cell(col[3]).map(String::from),
            },
        );
    }
    Ok(table)
}

/// Fills attributes missing on each utterance from its speaker's row.
/// Values already present on an utterance (e.g. a per-utterance age) win.
pub fn apply_attributes(manifest: &mut Manifest, table: &AttributeTable) {
    for r in &mut manifest.records {
        if let Some(a) = table.get(&r.speaker_id) {
            let dst = &mut r.attributes;
            if dst.age.is_none() {
                dst.age = a.age;
            }
            if dst.nationality.is_none() {
                dst.nationality = a.nationality.clone();
            }
            if dst.gender.is_none() {
                dst.gender = a.gender.clone();
            }
        }
    }
}

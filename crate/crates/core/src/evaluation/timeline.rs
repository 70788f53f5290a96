use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub speaker: String,
}

impl Segment {
    pub fn new(start: f64, end: f64, speaker: impl Into<String>) -> Self {
        Self { start, end, speaker: speaker.into() }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Speaker segments of one recording, sorted by start time. Segments of the
/// same speaker never overlap; different speakers may.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub rec_id: String,
    segments: Vec<Segment>,
}

impl Timeline {
    pub fn new(rec_id: impl Into<String>, mut segments: Vec<Segment>) -> Result<Self> {
        let rec_id = rec_id.into();
        for s in &segments {
            if !(s.start.is_finite() && s.end.is_finite() && s.end > s.start && s.start >= 0.0) {
                return Err(Error::data(format!(
                    "{rec_id}: invalid segment [{}, {}] for {}",
                    s.start, s.end, s.speaker
                )));
            }
        }
        segments.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)).then(a.speaker.cmp(&b.speaker)));
        let mut last_end: BTreeMap<&str, f64> = BTreeMap::new();
        for s in &segments {
            if let Some(&e) = last_end.get(s.speaker.as_str()) {
                if s.start < e {
                    return Err(Error::data(format!(
                        "{rec_id}: segments of speaker {} overlap at {}",
                        s.speaker, s.start
                    )));
                }
            }
            last_end.insert(&s.speaker, s.end);
        }
        Ok(Self { rec_id, segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.segments.iter().map(|s| s.speaker.as_str()).collect()
    }

    pub fn end_time(&self) -> f64 {
        self.segments.iter().map(|s| s.end).fold(0.0, f64::max)
    }

    /// Union of all segments, ignoring speakers.
    pub fn speech_regions(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for s in &self.segments {
            match out.last_mut() {
                Some(last) if s.start <= last.1 => last.1 = last.1.max(s.end),
                _ => out.push((s.start, s.end)),
            }
        }
        out
    }

    pub fn speech_duration(&self) -> f64 {
        self.speech_regions().iter().map(|r| r.1 - r.0).sum()
    }
}

/// Parses `SPEAKER <rec> <chan> <start> <dur> <NA> <NA> <speaker> ...`
/// lines, grouping by recording.
pub fn parse_rttm(text: &str, path: &Path) -> Result<BTreeMap<String, Timeline>> {
    let mut segs: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols[0] != "SPEAKER" {
            continue;
        }
        if cols.len() < 8 {
            return Err(bad(format!("expected at least 8 columns, found {}", cols.len())));
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(format!("bad {what} {s:?}")));
        let start = num(cols[3], "start")?;
        let dur = num(cols[4], "duration")?;
        if !(dur > 0.0) {
            return Err(bad(format!("non-positive duration {dur}")));
        }
        segs.entry(cols[1].to_string())
            .or_default()
            .push(Segment::new(start, start + dur, cols[7]));
    }
    segs.into_iter()
        .map(|(rec, s)| Ok((rec.clone(), Timeline::new(rec, s)?)))
        .collect()
}

pub fn read_rttm(path: impl AsRef<Path>) -> Result<BTreeMap<String, Timeline>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rttm(&text, path)
}

pub fn format_rttm<'a>(timelines: impl IntoIterator<Item = &'a Timeline>) -> String {
    let mut out = String::new();
    for t in timelines {
        for s in t.segments() {
            let _ = writeln!(
                out,
                "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
                t.rec_id,
                s.start,
                s.duration(),
                s.speaker
            );
        }
    }
    out
}

pub fn write_rttm<'a>(path: impl AsRef<Path>, timelines: impl IntoIterator<Item = &'a Timeline>) -> Result<()> {
    super::write_text(path.as_ref(), &format_rttm(timelines))
}

/// Tolerance for window arithmetic on second-valued offsets.
const WINDOW_EPS: f64 = 1e-9;

/// Windows of `win` seconds every `hop` seconds inside each speech region,
/// plus a tail window flush with the region end. Regions shorter than `win`
/// become a single window.
pub fn window_timeline(sad: &Timeline, win: f64, hop: f64) -> Result<Vec<(f64, f64)>> {
    if !(win > 0.0 && hop > 0.0) {
        return Err(Error::invalid("window and hop must be positive"));
    }
    let mut out = Vec::new();
    for (start, end) in sad.speech_regions() {
        out.extend(region_windows(start, end, win, hop));
    }
    Ok(out)
}

pub(crate) fn region_windows(start: f64, end: f64, win: f64, hop: f64) -> Vec<(f64, f64)> {
    let len = end - start;
    if len < win - WINDOW_EPS {
        return vec![(start, end)];
    }
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let off = k as f64 * hop;
        if off + win > len + WINDOW_EPS {
            break;
        }
        out.push((start + off, start + off + win));
        k += 1;
    }
    let last_end = out.last().map_or(start, |w| w.1);
    if last_end < end - WINDOW_EPS {
        out.push((end - win, end));
    } else if let Some(w) = out.last_mut() {
        w.1 = end;
    }
    out
}

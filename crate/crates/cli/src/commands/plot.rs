use std::collections::BTreeMap;
use std::path::PathBuf;

use mtlspk::dataio::{load_manifest, make_age_binner, Manifest};

use super::require_file;
use crate::error::{CliError, CliResult};
use crate::plot::bar_chart_svg;
use crate::Globals;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Kind {
    Age,
    Nationality,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// Age histogram bins.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Nationalities with more speakers than this get their own bar.
    #[arg(long, default_value_t = 50)]
    pub min_speakers: usize,
}

/// `(label, count)` rows: utterances per age bin.
pub fn age_rows(m: &Manifest, bins: usize) -> CliResult<Vec<(String, usize)>> {
    let ages: Vec<f64> = m.records.iter().filter_map(|r| r.attributes.age).collect();
    if ages.is_empty() {
        return Err(CliError::data("no record carries an age"));
    }
    if ages.len() < m.len() {
        log::warn!("{} of {} records have no age and are not counted", m.len() - ages.len(), m.len());
    }
    let binner = make_age_binner(&ages, bins)?;
    let e = binner.edges();
    Ok(binner
        .histogram(ages.iter().copied())
        .into_iter()
        .enumerate()
        .map(|(i, c)| (format!("{:.1}-{:.1}", e[i], e[i + 1]), c))
        .collect())
}

/// `(label, count)` rows: speakers per nationality, classes at or below
/// `min_speakers` pooled into a final "Other" row.
pub fn nationality_rows(m: &Manifest, min_speakers: usize) -> CliResult<Vec<(String, usize)>> {
    let mut of_speaker: BTreeMap<&str, &str> = BTreeMap::new();
    for r in &m.records {
        if let Some(n) = &r.attributes.nationality {
            of_speaker.entry(&r.speaker_id).or_insert(n);
        }
    }
    if of_speaker.is_empty() {
        return Err(CliError::data("no record carries a nationality"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for n in of_speaker.values() {
        *counts.entry(n).or_default() += 1;
    }
    let mut shown: Vec<(String, usize)> = Vec::new();
    let mut other = 0;
    for (n, c) in counts {
        if c > min_speakers {
            shown.push((n.to_string(), c));
        } else {
            other += c;
        }
    }
    shown.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if other > 0 {
        shown.push(("Other".into(), other));
    }
    Ok(shown)
}

pub fn run(g: &Globals, a: &Args) -> CliResult<()> {
    require_file(&a.manifest, "manifest")?;
    let m = load_manifest(&a.manifest)?;
    let (name, rows, title, y, col) = match a.kind {
        Kind::Age => {
            if a.bins == 0 {
                return Err(CliError::config("--bins must be at least 1"));
            }
            ("age", age_rows(&m, a.bins)?, "Age distribution", "utterances", "age_bin")
        }
        Kind::Nationality => (
            "nationality",
            nationality_rows(&m, a.min_speakers)?,
            "Nationality distribution",
            "speakers",
            "nationality",
        ),
    };
    let out = g.prepare_out(&format!("{name}.csv"))?;
    let csv_path = out.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", csv_path.display())))?;
    let werr = |e: csv::Error| CliError::data(format!("cannot write {}: {e}", csv_path.display()));
    w.write_record([col, "count"]).map_err(werr)?;
    for (label, c) in &rows {
        w.write_record([label.as_str(), &c.to_string()]).map_err(werr)?;
    }
    w.flush()?;
    std::fs::write(out.join(format!("{name}.svg")), bar_chart_svg(title, y, &rows))?;
    Ok(())
}

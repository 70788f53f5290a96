use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mtlspk::dataio::{load_manifest, read_features, save_manifest, write_features, FeatureMatrix, Manifest};
use mtlspk::frontend::{compute_mfcc, read_wav, MfccConfig, Waveform};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::require_file;
use crate::config::load_section;
use crate::error::{CliError, CliResult};
use crate::{Globals, CACHE_ENV};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// `rec_id path/to.wav` per line; relative paths resolve against this file.
    #[arg(long)]
    pub wav_scp: PathBuf,
    /// Utterance manifest whose start/end times cut each recording.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Also write whole-recording features under `recordings/`.
    #[arg(long)]
    pub recordings: bool,
    /// Feature cache directory.
    #[arg(long, env = CACHE_ENV)]
    pub cache: Option<PathBuf>,
}

pub fn read_wav_scp(path: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (rec, wav) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| CliError::data(format!("{}:{}: expected `rec_id path`", path.display(), i + 1)))?;
        let wav = PathBuf::from(wav.trim());
        let wav = if wav.is_absolute() { wav } else { base.join(wav) };
        if out.insert(rec.to_string(), wav).is_some() {
            return Err(CliError::data(format!("{}:{}: duplicate recording {rec:?}", path.display(), i + 1)));
        }
    }
    Ok(out)
}

/// File-name-safe form of an id.
pub(crate) fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

struct Cache {
    dir: Option<PathBuf>,
}

impl Cache {
    fn key(wav_digest: &[u8], cfg: &MfccConfig, span: Option<(usize, usize)>) -> String {
        let mut h = Sha256::new();
        h.update(wav_digest);
        h.update(serde_json::to_vec(cfg).expect("config serializes"));
        if let Some((a, b)) = span {
            h.update(a.to_le_bytes());
            h.update(b.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn get_or<F: FnOnce() -> CliResult<FeatureMatrix>>(&self, key: &str, compute: F) -> CliResult<FeatureMatrix> {
        let Some(dir) = &self.dir else { return compute() };
        let path = dir.join(format!("{key}.feat"));
        if path.is_file() {
            match read_features(&path) {
                Ok(f) => return Ok(f),
                Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", path.display()),
            }
        }
        let f = compute()?;
        // write then rename so a concurrent reader never sees half a file
        let tmp = dir.join(format!("{key}.tmp{}", std::process::id()));
        write_features(&tmp, &f)?;
        std::fs::rename(&tmp, &path)?;
        Ok(f)
    }
}

fn mfcc(w: &Waveform, cfg: &MfccConfig, what: &str) -> CliResult<FeatureMatrix> {
    compute_mfcc(w, cfg).map_err(|e| CliError::data(format!("{what}: {e}")))
}

pub fn run(g: &Globals, a: &Args) -> CliResult<()> {
    require_file(&a.wav_scp, "wav list")?;
    require_file(&a.manifest, "manifest")?;
    let cfg: MfccConfig = load_section(g.config.as_deref(), "frontend")?;
    let out = g.prepare_out("manifest.jsonl")?;
    let cache = Cache { dir: a.cache.clone() };
    if let Some(d) = &cache.dir {
        std::fs::create_dir_all(d)
            .map_err(|e| CliError::data(format!("cannot create cache {}: {e}", d.display())))?;
    }
    let wavs = read_wav_scp(&a.wav_scp)?;
    let mut manifest = load_manifest(&a.manifest)?;
    for r in &manifest.records {
        if !wavs.contains_key(&r.rec_id) {
            return Err(CliError::data(format!("utterance {:?}: recording {:?} is not in the wav list", r.utt_id, r.rec_id)));
        }
    }
    let utt_dir = out.join("utterances");
    std::fs::create_dir_all(&utt_dir)?;
    let rec_dir = out.join("recordings");
    if a.recordings {
        std::fs::create_dir_all(&rec_dir)?;
    }

    let mut by_rec: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_rec.entry(r.rec_id.as_str()).or_default().push(i);
    }
    let recs: Vec<(&str, Vec<usize>)> = if a.recordings {
        wavs.keys().map(|k| (k.as_str(), by_rec.get(k.as_str()).cloned().unwrap_or_default())).collect()
    } else {
        by_rec.into_iter().collect()
    };

    let results: Vec<Vec<(usize, PathBuf, usize)>> = recs
        .par_iter()
        .map(|(rec, idx)| -> CliResult<Vec<(usize, PathBuf, usize)>> {
            let path = &wavs[*rec];
            let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
            let digest = Sha256::digest(&bytes);
            let wav = read_wav(path)?;
            if a.recordings {
                let key = Cache::key(&digest, &cfg, None);
                let f = cache.get_or(&key, || mfcc(&wav, &cfg, rec))?;
                write_features(rec_dir.join(format!("{}.feat", file_stem(rec))), &f)?;
            }
            let sr = wav.sample_rate() as f64;
            let mut done = Vec::with_capacity(idx.len());
            for &i in idx {
                let r = &manifest.records[i];
                let s0 = ((r.start_time * sr).round() as usize).min(wav.len());
                let s1 = ((r.end_time * sr).round() as usize).min(wav.len());
                if s1 <= s0 {
                    return Err(CliError::data(format!(
                        "utterance {:?} [{}, {}] lies outside recording {rec:?}",
                        r.utt_id, r.start_time, r.end_time
                    )));
                }
                let key = Cache::key(&digest, &cfg, Some((s0, s1)));
                let f = cache.get_or(&key, || {
                    let w = Waveform::new(wav.samples()[s0..s1].to_vec(), wav.sample_rate())?;
                    mfcc(&w, &cfg, &r.utt_id)
                })?;
                let rel = PathBuf::from("utterances").join(format!("{}.feat", file_stem(&r.utt_id)));
                write_features(out.join(&rel), &f)?;
                done.push((i, rel, f.num_frames()));
            }
            Ok(done)
        })
        .collect::<CliResult<_>>()?;

    for (i, rel, n) in results.into_iter().flatten() {
        manifest.records[i].feature_path = rel;
        manifest.records[i].num_frames = n;
    }
    let manifest = Manifest::new(manifest.records, out.join("manifest.jsonl").display().to_string())?;
    save_manifest(out.join("manifest.jsonl"), &manifest)?;
    let mut info = std::fs::File::create(out.join("frontend.json"))?;
    writeln!(info, "{}", serde_json::to_string_pretty(&cfg)?)?;
    log::info!("wrote features for {} utterances", manifest.len());
    Ok(())
}

/// Manifest with feature paths resolved against the manifest's directory.
pub fn load_resolved(path: &Path) -> CliResult<Manifest> {
    require_file(path, "manifest")?;
    let mut m = load_manifest(path)?;
    m.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(m)
}

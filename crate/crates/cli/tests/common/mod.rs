#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mtlspk::dataio::{save_manifest, write_features, Attributes, FeatureMatrix, Manifest, UtteranceRecord};
use mtlspk::model::ExtractorConfig;
use mtlspk::synthetic::GaussianSpeakers;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn mtlspk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtlspk"))
        .args(args)
        .env_remove("MTL_EMBED_CACHE")
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
pub fn ok(o: &Output) {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(o));
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub const DIM: usize = 8;

pub fn tiny_model() -> Value {
    serde_json::to_value(ExtractorConfig::tiny(DIM, 16, 8)).unwrap()
}

/// Utterances of well separated Gaussian speakers written as FEAT1 files
/// plus a manifest. Speaker `s` is `spk{s:02}`, aged `30 + 3s`, one
/// recording per two utterances.
pub fn write_corpus(dir: &Path, speakers: std::ops::Range<usize>, per_speaker: usize, frames: usize, seed: u64) -> PathBuf {
    let model = GaussianSpeakers::new(40, DIM, 1.0, 6.0, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(dir.join("feats")).unwrap();
    let mut records = Vec::new();
    for s in speakers {
        for u in 0..per_speaker {
            let utt = format!("spk{s:02}-u{u:02}");
            let x = model.frames(s, frames, &mut rng);
            let rel = PathBuf::from("feats").join(format!("{utt}.feat"));
            write_features(dir.join(&rel), &FeatureMatrix::new(x).unwrap()).unwrap();
            records.push(UtteranceRecord {
                utt_id: utt,
                rec_id: format!("spk{s:02}-r{}", u / 2),
                speaker_id: format!("spk{s:02}"),
                feature_path: rel,
                num_frames: frames,
                start_time: 0.0,
                end_time: frames as f64 / 100.0,
                attributes: Attributes {
                    age: Some(30.0 + 3.0 * s as f64),
                    nationality: Some(if s % 2 == 0 { "US" } else { "UK" }.into()),
                    gender: Some(if s % 3 == 0 { "f" } else { "m" }.into()),
                },
            });
        }
    }
    let path = dir.join("manifest.jsonl");
    save_manifest(&path, &Manifest::new(records, "synthetic").unwrap()).unwrap();
    path
}

pub fn train_config(manifest: &Path, iterations: usize, tasks: Value) -> Value {
    json!({
        "mode": "train",
        "model": tiny_model(),
        "mtl": { "primary": { "kind": "mlp_ce", "hidden_dim": 16 }, "tasks": tasks },
        "train": {
            "iterations": iterations,
            "batch_size": 16,
            "chunk_frames": 40,
            "lr": 0.05,
            "momentum": 0.5,
            "validation_every": 50
        },
        "data": { "train_manifest": p(manifest) }
    })
}

pub fn write_json(path: &Path, v: &Value) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_path_buf()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

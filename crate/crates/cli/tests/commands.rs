mod common;

use std::collections::BTreeSet;
use std::path::Path;

use common::*;
use mtlspk::dataio::{load_manifest, read_features, FeatureMatrix};
use mtlspk::evaluation::{read_trials, write_rttm, Segment, Timeline};
use mtlspk::model::{Checkpoint, ModelConfig, SpeakerNet, TaskHeadSpec};
use serde_json::json;
use tempfile::tempdir;

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            mtlspk_cli::config::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 16);
}

#[test]
fn schema_errors_are_listed_together() {
    let t = tempdir().unwrap();
    let mut cfg = train_config(&t.path().join("m.jsonl"), 10, json!([
        { "task_name": "age", "label_source": "age", "lambda": -0.5 }
    ]));
    cfg["train"]["lr"] = json!("fast");
    cfg["train"]["bogus"] = json!(1);
    let path = write_json(&t.path().join("c.json"), &cfg);
    let o = mtlspk(&["train", "--config", p(&path), "--out", p(&t.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for needle in ["mtl.tasks[0].lambda", "train.lr", "train.bogus"] {
        assert!(err.contains(needle), "{needle} missing from: {err}");
    }
}

#[test]
fn mode_mismatch_and_missing_config() {
    let t = tempdir().unwrap();
    let cfg = train_config(&t.path().join("m.jsonl"), 10, json!([]));
    let path = write_json(&t.path().join("c.json"), &cfg);
    let o = mtlspk(&["finetune", "--config", p(&path), "--out", p(t.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = mtlspk(&["train", "--out", p(t.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = mtlspk(&["train", "--config", p(&t.path().join("absent.json")), "--out", p(t.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_writes_run_directory_and_is_reproducible() {
    let t = tempdir().unwrap();
    let m = write_corpus(&t.path().join("data"), 0..4, 6, 60, 1);
    let cfg = train_config(&m, 60, json!([{ "task_name": "age", "label_source": "age", "lambda": 0.5 }]));
    let cfg_path = write_json(&t.path().join("c.json"), &cfg);
    let run = t.path().join("run");
    ok(&mtlspk(&["train", "--config", p(&cfg_path), "--out", p(&run), "--workers", "1"]));
    for f in ["config.json", "log.jsonl", "summary.json", "checkpoints/final.ckpt", "checkpoints/best.ckpt"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let log = std::fs::read_to_string(run.join("log.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert!(last["tasks"]["age"].is_object(), "{last}");
    assert!(last["tasks"]["speaker"].is_object());
    let summary = read_json(&run.join("summary.json"));
    assert_eq!(summary["status"]["status"], "completed");
    assert_eq!(summary["iterations"], 60);

    let again = mtlspk(&["train", "--config", p(&cfg_path), "--out", p(&run)]);
    assert_eq!(again.status.code(), Some(2), "overwrite without --force must be refused");

    let before = std::fs::read(run.join("summary.json")).unwrap();
    let before_log = std::fs::read(run.join("log.jsonl")).unwrap();
    ok(&mtlspk(&["train", "--config", p(&cfg_path), "--out", p(&run), "--force"]));
    assert_eq!(before, std::fs::read(run.join("summary.json")).unwrap());
    assert_eq!(before_log, std::fs::read(run.join("log.jsonl")).unwrap());

    // fine-tune from the run just produced
    let mut ft = cfg.clone();
    ft["mode"] = json!("finetune");
    ft["finetune"] = json!({ "mode": "last_linear", "total_iterations": 30, "freeze_iterations": 10, "label_set": "speaker+age" });
    ft["data"]["checkpoint"] = json!(p(&run.join("checkpoints/final.ckpt")));
    let ft_path = write_json(&t.path().join("ft.json"), &ft);
    let ft_run = t.path().join("ft");
    ok(&mtlspk(&["finetune", "--config", p(&ft_path), "--out", p(&ft_run)]));
    assert!(ft_run.join("checkpoints/after_freeze.ckpt").is_file());
    let src = Checkpoint::load(run.join("checkpoints/final.ckpt")).unwrap();
    let frozen = Checkpoint::load(ft_run.join("checkpoints/after_freeze.ckpt")).unwrap();
    let ext = |c: &Checkpoint| -> Vec<Vec<u32>> {
        c.params.iter().filter(|p| p.is_extractor()).map(|p| p.value.iter().map(|v| v.to_bits()).collect()).collect()
    };
    assert_eq!(ext(&src), ext(&frozen));
}

#[test]
fn divergence_exits_with_numerical_code() {
    let t = tempdir().unwrap();
    let m = write_corpus(&t.path().join("data"), 0..3, 4, 50, 2);
    let mut cfg = train_config(&m, 40, json!([]));
    cfg["train"]["lr"] = json!(1e12);
    let cfg_path = write_json(&t.path().join("c.json"), &cfg);
    let run = t.path().join("run");
    let o = mtlspk(&["train", "--config", p(&cfg_path), "--out", p(&run)]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(run.join("checkpoints/final.ckpt").is_file());
    assert_eq!(read_json(&run.join("summary.json"))["status"]["status"], "diverged");
}

fn toy_listing(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let csv = dir.join("attrs.csv");
    std::fs::write(&csv, "speaker_id,age,nationality,gender\na,30,US,m\nb,45,UK,f\nc,52,US,m\nd,61,FR,f\n").unwrap();
    let mut lines = String::new();
    for (si, s) in ["a", "b", "c", "d"].iter().enumerate() {
        for r in 0..2 {
            for u in 0..(2 + si) {
                lines.push_str(&format!(
                    "{{\"utt_id\":\"{s}-r{r}-u{u}\",\"rec_id\":\"{s}-r{r}\",\"speaker_id\":\"{s}\",\"start_time\":{}.0,\"end_time\":{}.5}}\n",
                    u,
                    u
                ));
            }
        }
    }
    let listing = dir.join("listing.jsonl");
    std::fs::write(&listing, lines).unwrap();
    (csv, listing)
}

#[test]
fn prepare_partitions_recordings() {
    let t = tempdir().unwrap();
    let (csv, listing) = toy_listing(t.path());
    let out = t.path().join("prep");
    ok(&mtlspk(&["prepare", "--attributes", p(&csv), "--listing", p(&listing), "--out", p(&out)]));
    let train = load_manifest(out.join("train.jsonl")).unwrap();
    let test = load_manifest(out.join("test.jsonl")).unwrap();
    let tr: BTreeSet<&str> = train.recordings();
    let te: BTreeSet<&str> = test.recordings();
    assert!(tr.is_disjoint(&te));
    assert_eq!(tr.len() + te.len(), 8);
    assert_eq!(train.len() + test.len(), 28);
    assert!(train.records.iter().all(|r| r.attributes.age.is_some()));
    let report = read_json(&out.join("split_report.json"));
    assert_eq!(report["train_age_histogram"].as_array().unwrap().len(), 10);
    assert!(out.join("vocab.json").is_file());
    assert!(out.join("unseen_speakers.txt").is_file());
}

#[test]
fn prepare_names_missing_column() {
    let t = tempdir().unwrap();
    let (_, listing) = toy_listing(t.path());
    let csv = t.path().join("bad.csv");
    std::fs::write(&csv, "speaker,age,nationality,gender\na,30,US,m\n").unwrap();
    let o = mtlspk(&["prepare", "--attributes", p(&csv), "--listing", p(&listing), "--out", p(&t.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("speaker_id"), "{}", stderr(&o));
}

fn write_wav(path: &Path, samples: &[i16], rate: u32) {
    let data_len = (samples.len() * 2) as u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&rate.to_le_bytes());
    b.extend_from_slice(&(rate * 2).to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    std::fs::write(path, b).unwrap();
}

#[test]
fn compute_features_uses_cache() {
    let t = tempdir().unwrap();
    let rate = 8000;
    let samples: Vec<i16> = (0..rate * 2)
        .map(|i| ((i as f64 * 0.07).sin() * 8000.0 + (i as f64 * 0.31).cos() * 2000.0) as i16)
        .collect();
    write_wav(&t.path().join("r1.wav"), &samples, rate as u32);
    std::fs::write(t.path().join("wav.scp"), "r1 r1.wav\n").unwrap();
    std::fs::write(
        t.path().join("m.jsonl"),
        "{\"utt_id\":\"u1\",\"rec_id\":\"r1\",\"speaker_id\":\"s\",\"start_time\":0.0,\"end_time\":1.0}\n\
         {\"utt_id\":\"u2\",\"rec_id\":\"r1\",\"speaker_id\":\"s\",\"start_time\":1.0,\"end_time\":2.0}\n",
    )
    .unwrap();
    let cache = t.path().join("cache");
    let run = |out: &Path| {
        std::process::Command::new(env!("CARGO_BIN_EXE_mtlspk"))
            .args(["compute-features", "--wav-scp", p(&t.path().join("wav.scp")), "--manifest"])
            .arg(t.path().join("m.jsonl"))
            .args(["--recordings", "--out"])
            .arg(out)
            .env("MTL_EMBED_CACHE", &cache)
            .output()
            .unwrap()
    };
    let a = t.path().join("a");
    ok(&run(&a));
    let entries = std::fs::read_dir(&cache).unwrap().count();
    assert_eq!(entries, 3);
    let b = t.path().join("b");
    ok(&run(&b));
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), entries);

    let m = load_manifest(b.join("manifest.jsonl")).unwrap();
    assert_eq!(m.records[0].num_frames, 98);
    let f = read_features(b.join(&m.records[1].feature_path)).unwrap();
    assert_eq!(f.dim(), 30);
    assert_eq!(
        std::fs::read(a.join(&m.records[1].feature_path)).unwrap(),
        std::fs::read(b.join(&m.records[1].feature_path)).unwrap()
    );
    assert_eq!(read_features(b.join("recordings/r1.feat")).unwrap().num_frames(), 198);
}

#[test]
fn verification_pipeline_on_separated_speakers() {
    let t = tempdir().unwrap();
    let train_m = write_corpus(&t.path().join("train"), 0..12, 8, 60, 3);
    let test_m = write_corpus(&t.path().join("test"), 20..30, 8, 80, 4);
    let cfg = train_config(&train_m, 400, json!([]));
    let cfg_path = write_json(&t.path().join("c.json"), &cfg);
    let run = t.path().join("run");
    ok(&mtlspk(&["train", "--config", p(&cfg_path), "--out", p(&run)]));

    let trials_dir = t.path().join("trials");
    ok(&mtlspk(&["make-trials", "--manifest", p(&test_m), "--train-manifest", p(&train_m), "--out", p(&trials_dir)]));
    let trials = read_trials(trials_dir.join("trials.txt")).unwrap();
    assert_eq!(trials.len(), 10 * 30);

    let ev = t.path().join("eval");
    ok(&mtlspk(&[
        "eval-verify",
        "--checkpoint",
        p(&run.join("checkpoints/best.ckpt")),
        "--trials",
        p(&trials_dir.join("trials.txt")),
        "--manifest",
        p(&test_m),
        "--out",
        p(&ev),
    ]));
    let eer = read_json(&ev.join("eer.json"));
    assert!(eer["eer"].as_f64().unwrap() <= 0.05, "{eer}");
    assert!(eer["threshold"].is_number());
    assert_eq!(std::fs::read_to_string(ev.join("scores.txt")).unwrap().lines().count(), trials.len());

    // a trial naming an utterance the manifest lacks is a data error
    std::fs::write(t.path().join("bad.txt"), "tgt spk20-u00 nobody\n").unwrap();
    let o = mtlspk(&[
        "eval-verify",
        "--checkpoint",
        p(&run.join("checkpoints/best.ckpt")),
        "--trials",
        p(&t.path().join("bad.txt")),
        "--manifest",
        p(&test_m),
        "--out",
        p(&t.path().join("bad")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nobody"));
}

fn random_checkpoint(path: &Path) {
    let model = ModelConfig {
        extractor: mtlspk::model::ExtractorConfig::tiny(DIM, 16, 8),
        heads: vec![TaskHeadSpec::mlp("speaker", 2, 16)],
    };
    let net = SpeakerNet::<f32>::new(model, 5).unwrap();
    Checkpoint::from_net(&net, 0, json!({})).save(path).unwrap();
}

#[test]
fn diarization_single_cluster_and_vacuous_unseen() {
    let t = tempdir().unwrap();
    let dir = t.path();
    let ck = dir.join("m.ckpt");
    random_checkpoint(&ck);
    let feats = dir.join("feats");
    std::fs::create_dir_all(&feats).unwrap();
    let g = mtlspk::synthetic::GaussianSpeakers::new(4, DIM, 1.0, 6.0, 1).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let mut timelines = Vec::new();
    let mut ktab = String::new();
    for r in 0..2 {
        let rec = format!("rec{r}");
        // one speaker at 0-4 s and 5-9 s; the SAD below also covers the gap
        let a = g.frames(r, 500, &mut rng);
        let b = g.frames(r, 500, &mut rng);
        let x = ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).unwrap();
        mtlspk::dataio::write_features(feats.join(format!("{rec}.feat")), &FeatureMatrix::new(x).unwrap()).unwrap();
        timelines.push(
            Timeline::new(
                rec.clone(),
                vec![Segment::new(0.0, 4.0, format!("A{r}")), Segment::new(5.0, 9.0, format!("A{r}"))],
            )
            .unwrap(),
        );
        ktab.push_str(&format!("{rec} 1\n"));
    }
    write_rttm(dir.join("ref.rttm"), &timelines).unwrap();
    let sad: Vec<Timeline> =
        timelines.iter().map(|t| Timeline::new(t.rec_id.clone(), vec![Segment::new(0.0, 9.0, "speech")]).unwrap()).collect();
    write_rttm(dir.join("sad.rttm"), &sad).unwrap();
    std::fs::write(dir.join("k.txt"), ktab).unwrap();
    std::fs::write(dir.join("unseen.txt"), "A0\nA1\n").unwrap();
    let run = |out: &Path, sad: Option<&Path>| {
        let mut args = vec![
            "eval-diarize".to_string(),
            "--checkpoint".into(),
            p(&ck).into(),
            "--reference".into(),
            p(&dir.join("ref.rttm")).into(),
            "--features".into(),
            p(&feats).into(),
            "--k-table".into(),
            p(&dir.join("k.txt")).into(),
            "--unseen".into(),
            p(&dir.join("unseen.txt")).into(),
            "--out".into(),
            p(out).into(),
        ];
        if let Some(s) = sad {
            args.extend(["--sad".to_string(), p(s).into()]);
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&mtlspk(&args));
        read_json(&out.join("der.json"))
    };

    // k = 1 on single-speaker recordings: only miss and false alarm remain
    let out = dir.join("out");
    let rep = run(&out, Some(&dir.join("sad.rttm")));
    for rec in ["rec0", "rec1"] {
        let all = &rep["recordings"][rec]["all"];
        assert_eq!(all["confusion"].as_f64().unwrap(), 0.0, "{all}");
        let expect = (all["miss"].as_f64().unwrap() + all["false_alarm"].as_f64().unwrap()) / all["total_scored_time"].as_f64().unwrap();
        assert!((all["der"].as_f64().unwrap() - expect).abs() < 1e-12);
        assert!((all["false_alarm"].as_f64().unwrap() - 1.0).abs() < 1e-9, "{all}");
    }
    assert!(out.join("hyp.rttm").is_file());

    // with the reference as SAD, an unseen list naming everyone changes nothing
    let rep = run(&dir.join("oracle"), None);
    let mut a = rep["aggregate"]["all"].clone();
    let mut u = rep["aggregate"]["unseen"].clone();
    a["mode"] = json!(null);
    u["mode"] = json!(null);
    assert_eq!(a, u);
}

#[test]
fn plots_are_backed_by_csv() {
    let t = tempdir().unwrap();
    let m = write_corpus(&t.path().join("data"), 0..7, 3, 20, 5);
    let out = t.path().join("plots");
    ok(&mtlspk(&["plot", "--manifest", p(&m), "--kind", "age", "--out", p(&out)]));
    let csv = std::fs::read_to_string(out.join("age.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    let total: usize = rows.iter().map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 21);
    assert!(std::fs::read_to_string(out.join("age.svg")).unwrap().starts_with("<svg"));

    // nationality: one utterance per speaker is enough
    let mut lines = String::new();
    let mut k = 0;
    for (nat, n) in [("US", 60), ("UK", 55), ("FR", 10), ("DE", 5)] {
        for _ in 0..n {
            lines.push_str(&format!(
                "{{\"utt_id\":\"u{k}\",\"rec_id\":\"r{k}\",\"speaker_id\":\"s{k}\",\"start_time\":0,\"end_time\":1,\"attributes\":{{\"nationality\":\"{nat}\"}}}}\n"
            ));
            k += 1;
        }
    }
    std::fs::write(t.path().join("nat.jsonl"), lines).unwrap();
    ok(&mtlspk(&["plot", "--manifest", p(&t.path().join("nat.jsonl")), "--kind", "nationality", "--out", p(&out)]));
    let csv = std::fs::read_to_string(out.join("nationality.csv")).unwrap();
    assert_eq!(csv, "nationality,count\nUS,60\nUK,55\nOther,15\n");

    let o = mtlspk(&["plot", "--manifest", p(&t.path().join("nat.jsonl")), "--kind", "age", "--out", p(&t.path().join("x"))]);
    assert_eq!(o.status.code(), Some(3));
}

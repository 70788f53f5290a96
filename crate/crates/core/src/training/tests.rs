use super::*;
use crate::dataio::{AgeBinner, Attributes, LabelVocab, Manifest, UtteranceRecord};
use crate::losses::{LabelSource, MultiTaskConfig, TaskConfig};
use crate::model::{ExtractorConfig, HeadKind, Checkpoint, ModelParams, ParamKind, EXTRACTOR, LAST_LINEAR};
use crate::synthetic::{utterances, GaussianSpeakers};
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar_params(v: f32) -> ModelParams<f32> {
    let mut p = ModelParams::<f32>::new();
    p.push_affine("probe", "probe/theta", 1, 1, false, 0);
    p.value_mut(0).fill(v);
    p
}

#[test]
fn sgd_zero_gradient_is_fixed_point() {
    let mut p = scalar_params(0.7);
    let mut v = p.zeros_like();
    let g = p.zeros_like();
    let mask = TrainableMask::all(&p);
    sgd_step(&mut p, &mut v, &g, 0.2, 0.5, &mask).unwrap();
    assert_eq!(p.value(0)[(0, 0)], 0.7);
}

#[test]
fn sgd_plain_step() {
    let mut p = scalar_params(1.0);
    let mut v = p.zeros_like();
    let mut g = p.zeros_like();
    g.value_mut(0).fill(0.5);
    let mask = TrainableMask::all(&p);
    sgd_step(&mut p, &mut v, &g, 0.2, 0.0, &mask).unwrap();
    assert!((p.value(0)[(0, 0)] - 0.9).abs() < 1e-7);
}

#[test]
fn sgd_momentum_recurrence() {
    let theta0 = 2.0f64;
    let mut p = scalar_params(theta0 as f32).cast::<f64>();
    let mut v = p.zeros_like();
    let mut g = p.zeros_like();
    g.value_mut(0).fill(1.0);
    let mask = TrainableMask::all(&p);
    sgd_step(&mut p, &mut v, &g, 0.1, 0.5, &mask).unwrap();
    assert!((v.value(0)[(0, 0)] + 0.1).abs() < 1e-12);
    assert!((p.value(0)[(0, 0)] - (theta0 - 0.1)).abs() < 1e-12);
    sgd_step(&mut p, &mut v, &g, 0.1, 0.5, &mask).unwrap();
    assert!((v.value(0)[(0, 0)] + 0.15).abs() < 1e-12);
    assert!((p.value(0)[(0, 0)] - (theta0 - 0.25)).abs() < 1e-12);
}

#[test]
fn sgd_without_momentum_is_gradient_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = ModelParams::<f32>::new();
    p.push_affine("a", "a/x", 3, 4, true, 1);
    let mut g = p.zeros_like();
    for x in g.value_mut(0).iter_mut() {
        *x = rand::Rng::random_range(&mut rng, -1.0..1.0);
    }
    let expected = p.value(0) - &(g.value(0) * 0.3f32);
    let mut v = p.zeros_like();
    let mask = TrainableMask::all(&p);
    sgd_step(&mut p, &mut v, &g, 0.3, 0.0, &mask).unwrap();
    assert_eq!(p.value(0), &expected);
}

#[test]
fn sgd_masked_parameters_untouched() {
    let mut p = ModelParams::<f32>::new();
    p.push_affine(EXTRACTOR, "extractor/frame0", 2, 2, true, 1);
    p.push_affine(EXTRACTOR, LAST_LINEAR, 2, 2, true, 1);
    p.push_affine("speaker", "speaker/cosface", 2, 3, false, 1);
    let mut v = p.zeros_like();
    v.value_mut(0).fill(0.25);
    let mut g = p.zeros_like();
    for i in 0..g.len() {
        g.value_mut(i).fill(1.0);
    }
    let before = (p.clone(), v.clone());
    let mask = TrainableMask::heads_and_last_linear(&p);
    sgd_step(&mut p, &mut v, &g, 0.1, 0.5, &mask).unwrap();
    for i in 0..2 {
        assert_eq!(p.value(i), before.0.value(i));
        assert_eq!(v.value(i), before.1.value(i));
    }
    for i in 2..p.len() {
        assert_ne!(p.value(i), before.0.value(i));
    }
}

#[test]
fn sgd_rejects_non_finite_gradient_without_side_effects() {
    let mut p = scalar_params(1.0);
    let mut v = p.zeros_like();
    let mut g = p.zeros_like();
    g.value_mut(0).fill(f32::NAN);
    let mask = TrainableMask::all(&p);
    let err = sgd_step(&mut p, &mut v, &g, 0.1, 0.5, &mask).unwrap_err();
    assert!(matches!(err, crate::Error::Numerical(_)));
    assert_eq!(p.value(0)[(0, 0)], 1.0);
}

#[test]
fn gradient_descent_on_separable_logistic_probe() {
    // one affine layer, two classes, full batch
    let xs: Array2<f32> = array![[1.0, 2.0], [2.0, 1.5], [1.5, 3.0], [-1.0, -2.0], [-2.0, -0.5], [-1.5, -1.0]];
    let ys = [0usize, 0, 0, 1, 1, 1];
    let mut p = ModelParams::<f32>::new();
    p.push_affine("probe", "probe/affine", 2, 2, true, 4);
    let mut v = p.zeros_like();
    let mask = TrainableMask::all(&p);
    let mut losses = Vec::new();
    for _ in 0..200 {
        let logits = xs.dot(p.value(0)) + p.value(1);
        let mut d = Array2::<f32>::zeros(logits.raw_dim());
        let mut loss = 0.0;
        for (i, &y) in ys.iter().enumerate() {
            loss += crate::losses::cross_entropy(logits.row(i), y).unwrap() / ys.len() as f32;
            let m = logits.row(i).fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let z: f32 = logits.row(i).iter().map(|l| (l - m).exp()).sum();
            for j in 0..2 {
                let pj = (logits[(i, j)] - m).exp() / z;
                d[(i, j)] = (pj - if j == y { 1.0 } else { 0.0 }) / ys.len() as f32;
            }
        }
        losses.push(loss);
        let mut g = p.zeros_like();
        *g.value_mut(0) = xs.t().dot(&d);
        g.value_mut(1).row_mut(0).assign(&d.sum_axis(ndarray::Axis(0)));
        sgd_step(&mut p, &mut v, &g, 0.2, 0.5, &mask).unwrap();
    }
    let ma: Vec<f32> = losses.windows(20).map(|w| w.iter().sum::<f32>() / 20.0).collect();
    assert!(ma.windows(2).all(|w| w[1] < w[0]), "moving average not strictly decreasing");
}

struct Synth {
    corpus: LabeledCorpus,
    vocab: Vocabularies,
}

fn synth(n_speakers: usize, per: usize, with_age: bool, seed: u64) -> Synth {
    let model = GaussianSpeakers::new(n_speakers, 8, 1.0, 6.0, seed).unwrap();
    let speakers: Vec<usize> = (0..n_speakers).collect();
    let utts = utterances(&model, &speakers, per, 30..=60, seed + 1);
    let mut labels = vec![utts.iter().map(|u| Some(u.speaker)).collect::<Vec<_>>()];
    if with_age {
        labels.push(utts.iter().map(|u| Some(u.speaker % 4)).collect());
    }
    let corpus = LabeledCorpus::new(
        utts.iter().map(|u| u.utt_id.clone()).collect(),
        utts.into_iter().map(|u| u.features).collect(),
        labels,
    )
    .unwrap();
    let vocab = Vocabularies {
        speaker: LabelVocab::from_labels("speaker", (0..n_speakers).map(|s| format!("spk{s:03}"))),
        age: with_age.then(|| AgeBinner::new(20.0, 80.0, 4).unwrap()),
        nationality: None,
        gender: None,
    };
    Synth { corpus, vocab }
}

fn tiny_extractor() -> ExtractorConfig {
    ExtractorConfig::tiny(8, 16, 8)
}

fn quick_config(mtl: MultiTaskConfig, iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 16,
        chunk_frames: 20,
        lr: 0.05,
        momentum: 0.5,
        seed: 17,
        validation_every: 100,
        grad_clip: None,
        mtl,
    }
}

fn speaker_lines(log: &[LogEntry]) -> Vec<(u64, f64, f64, f64)> {
    log.iter()
        .map(|e| {
            let t = &e.report().tasks[0];
            (e.iter(), e.report().total, t.raw, t.accuracy)
        })
        .collect()
}

#[test]
fn sample_batch_full_and_wrapped_chunks() {
    let x = Array2::from_shape_fn((350, 2), |(t, d)| (t * 2 + d) as f32);
    let c = LabeledCorpus::new(vec!["a".into()], vec![x.clone()], vec![vec![Some(0)]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let b = sample_batch(&c, 4, 350, &mut rng).unwrap();
    assert!(b.features.iter().all(|f| f == &x));
    let short = Array2::from_shape_fn((340, 2), |(t, d)| (t * 2 + d) as f32);
    let c = LabeledCorpus::new(vec!["a".into()], vec![short.clone()], vec![vec![Some(0)]]).unwrap();
    let b = sample_batch(&c, 1, 350, &mut rng).unwrap();
    let f = &b.features[0];
    assert_eq!(f.nrows(), 350);
    assert_eq!(f.slice(ndarray::s![..340, ..]), short);
    assert_eq!(f.slice(ndarray::s![340.., ..]), short.slice(ndarray::s![..10, ..]));
}

#[test]
fn sample_batch_deterministic_and_rejects_empty() {
    let s = synth(3, 4, true, 1);
    let draw = || sample_batch(&s.corpus, 8, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(draw(), draw());
    let b = draw();
    assert!(b.features.iter().all(|f| f.nrows() == 20));
    assert_eq!(b.labels.len(), 2);
    let empty = LabeledCorpus::new(vec![], vec![], vec![vec![]]).unwrap();
    assert!(sample_batch(&empty, 1, 20, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

fn manifest(n: usize) -> Manifest {
    let records = (0..n)
        .map(|i| UtteranceRecord {
            utt_id: format!("u{i}"),
            rec_id: format!("r{}", i % 5),
            speaker_id: format!("s{}", i % 3),
            feature_path: format!("f{i}.feat").into(),
            num_frames: 100,
            start_time: 0.0,
            end_time: 1.0,
            attributes: Attributes::default(),
        })
        .collect();
    Manifest::new(records, "test").unwrap()
}

#[test]
fn holdout_is_a_partition() {
    let m = manifest(200);
    let (tr, va) = holdout_validation(&m, 0.02, 3).unwrap();
    assert_eq!(va.len(), 4);
    assert_eq!(tr.len(), 196);
    let (_, va) = holdout_validation(&manifest(10), 0.02, 3).unwrap();
    assert_eq!(va.len(), 1);
}

#[test]
fn vocabularies_require_configured_attributes() {
    let m = manifest(6);
    let mtl = MultiTaskConfig::speaker_only(HeadKind::CosFace)
        .with_task(TaskConfig::new("age", LabelSource::Age, HeadKind::MlpCe).with_lambda(0.1));
    assert!(matches!(Vocabularies::build(&m, &mtl), Err(crate::Error::Data(_))));
    let v = Vocabularies::build(&m, &MultiTaskConfig::speaker_only(HeadKind::CosFace)).unwrap();
    assert_eq!(v.num_classes(LabelSource::Speaker).unwrap(), 3);
}

#[test]
fn synthetic_training_overfits_eight_speakers() {
    let s = synth(8, 6, false, 2);
    let cfg = quick_config(MultiTaskConfig::speaker_only(HeadKind::CosFace), 2000);
    let out = train_corpus(&cfg, &tiny_extractor(), &s.vocab, &s.corpus, None, &mut |_| {}).unwrap();
    assert_eq!(out.status, TrainStatus::Completed);
    let net = out.final_checkpoint.to_net().unwrap();
    let r = evaluate_corpus(&net, &s.corpus, &cfg.mtl, 20, 64).unwrap();
    assert!(r.tasks[0].accuracy >= 0.95, "accuracy {}", r.tasks[0].accuracy);
}

#[test]
fn training_is_seed_deterministic() {
    let s = synth(4, 4, false, 3);
    let cfg = quick_config(MultiTaskConfig::speaker_only(HeadKind::CosFace), 10);
    let a = train_corpus(&cfg, &tiny_extractor(), &s.vocab, &s.corpus, None, &mut |_| {}).unwrap();
    let b = train_corpus(&cfg, &tiny_extractor(), &s.vocab, &s.corpus, None, &mut |_| {}).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.final_checkpoint.to_bytes().unwrap(), b.final_checkpoint.to_bytes().unwrap());
}

#[test]
fn zero_weight_age_reproduces_speaker_only_log() {
    let s = synth(4, 4, true, 4);
    let solo = Synth {
        corpus: LabeledCorpus { labels: s.corpus.labels[..1].to_vec(), ..s.corpus.clone() },
        vocab: Vocabularies { age: None, ..s.vocab.clone() },
    };
    let mtl = MultiTaskConfig::speaker_only(HeadKind::CosFace)
        .with_task(TaskConfig::new("age", LabelSource::Age, HeadKind::MlpCe).with_lambda(0.0).with_hidden(8));
    let a = train_corpus(&quick_config(mtl, 30), &tiny_extractor(), &s.vocab, &s.corpus, Some(&s.corpus), &mut |_| {}).unwrap();
    let cfg = quick_config(MultiTaskConfig::speaker_only(HeadKind::CosFace), 30);
    let b = train_corpus(&cfg, &tiny_extractor(), &solo.vocab, &solo.corpus, Some(&solo.corpus), &mut |_| {}).unwrap();
    assert_eq!(speaker_lines(&a.log), speaker_lines(&b.log));
    let pb = &b.final_checkpoint.params;
    for p in pb.iter() {
        assert_eq!(a.final_checkpoint.params.find(&p.tag()).unwrap().value, p.value);
    }
}

#[test]
fn divergence_keeps_last_good_state() {
    let s = synth(4, 4, false, 5);
    let mtl = MultiTaskConfig::speaker_only(HeadKind::MlpCe);
    let mtl = MultiTaskConfig { primary: TaskConfig { hidden_dim: 8, ..mtl.primary }, ..mtl };
    let mut cfg = quick_config(mtl, 200);
    cfg.lr = 1e12;
    let out = train_corpus(&cfg, &tiny_extractor(), &s.vocab, &s.corpus, None, &mut |_| {}).unwrap();
    let TrainStatus::Diverged { iteration } = out.status else {
        panic!("expected divergence");
    };
    assert!(out.final_checkpoint.params.all_finite());
    assert_eq!(out.final_checkpoint.iteration + 1, iteration);
}

#[test]
fn validation_lines_and_best_checkpoint() {
    let s = synth(4, 4, false, 6);
    let cfg = TrainConfig { validation_every: 10, ..quick_config(MultiTaskConfig::speaker_only(HeadKind::CosFace), 25) };
    let mut streamed = 0;
    let out = train_corpus(&cfg, &tiny_extractor(), &s.vocab, &s.corpus, Some(&s.corpus), &mut |_| streamed += 1).unwrap();
    let valid_iters: Vec<u64> = out.log.iter().filter(|e| matches!(e, LogEntry::Validation { .. })).map(LogEntry::iter).collect();
    assert_eq!(valid_iters, [10, 20, 25]);
    assert_eq!(streamed, out.log.len());
    assert!(out.best_checkpoint.is_some());
    let j = out.log[0].to_json();
    assert_eq!(j["iter"], 1);
    assert!(j["tasks"]["speaker"]["acc"].is_number());
}

#[test]
fn config_validation_reports_every_problem() {
    let mut cfg = quick_config(MultiTaskConfig::speaker_only(HeadKind::CosFace), 0);
    cfg.chunk_frames = 10;
    cfg.momentum = 1.5;
    let errs = cfg.validate(&tiny_extractor());
    assert_eq!(errs.len(), 3, "{errs:?}");
}

fn pretrained(s: &Synth) -> Checkpoint {
    let cfg = quick_config(MultiTaskConfig::speaker_only(HeadKind::CosFace), 50);
    train_corpus(&cfg, &tiny_extractor(), &s.vocab, &s.corpus, None, &mut |_| {}).unwrap().final_checkpoint
}

fn extractor_params_equal(a: &Checkpoint, b: &Checkpoint, skip_last: bool) -> bool {
    a.params.iter().filter(|p| p.is_extractor() && !(skip_last && p.group == LAST_LINEAR)).all(|p| {
        b.params.find(&p.tag()).is_some_and(|q| q.value == p.value)
    })
}

#[test]
fn finetune_freeze_and_last_linear_contracts() {
    let src = synth(4, 4, false, 7);
    let ckpt = pretrained(&src);
    let target = synth(3, 4, true, 8);
    let ft = FineTuneConfig {
        total_iterations: 60,
        freeze_iterations: 20,
        label_set: LabelSet::SpeakerAge,
        ..FineTuneConfig::default()
    };
    let base = quick_config(MultiTaskConfig::speaker_only(HeadKind::CosFace), 1);
    let out = finetune_corpus(&ckpt, &ft, &base, &target.vocab, &target.corpus, None, &mut |_| {}).unwrap();
    assert_eq!(out.after_freeze.iteration, 20);
    assert!(extractor_params_equal(&ckpt, &out.after_freeze, false));
    let fin = &out.outcome.final_checkpoint;
    assert_eq!(fin.iteration, 60);
    assert!(extractor_params_equal(&ckpt, fin, true));
    assert!(!extractor_params_equal(&ckpt, fin, false));
    assert_eq!(fin.config.heads.len(), 2);
    assert_eq!(fin.config.heads[0].n_classes, 3);
    let age = fin.params.iter().find(|p| p.owner == "age" && p.kind == ParamKind::Weight).unwrap();
    assert!(age.value.iter().all(|v| v.is_finite()));
}

#[test]
fn finetune_full_mode_moves_every_extractor_layer() {
    let src = synth(4, 4, false, 9);
    let ckpt = pretrained(&src);
    let target = synth(3, 4, false, 10);
    let ft = FineTuneConfig {
        mode: FineTuneMode::Full,
        total_iterations: 30,
        freeze_iterations: 10,
        ..FineTuneConfig::default()
    };
    let base = quick_config(MultiTaskConfig::speaker_only(HeadKind::CosFace), 1);
    let out = finetune_corpus(&ckpt, &ft, &base, &target.vocab, &target.corpus, None, &mut |_| {}).unwrap();
    let fin = &out.outcome.final_checkpoint;
    for group in ckpt.params.groups().into_iter().filter(|g| g.starts_with("extractor/")) {
        let w = format!("{group}/weight");
        assert_ne!(ckpt.params.find(&w).unwrap().value, fin.params.find(&w).unwrap().value, "{group}");
    }
}

#[test]
fn finetune_rejects_bad_settings() {
    assert!("partial".parse::<FineTuneMode>().is_err());
    assert!("speaker+gender".parse::<LabelSet>().is_err());
    let ft = FineTuneConfig { freeze_iterations: 5000, ..FineTuneConfig::default() };
    assert_eq!(ft.validate().len(), 1);
    let src = synth(3, 3, false, 11);
    let ckpt = pretrained(&src);
    let ft = FineTuneConfig { label_set: LabelSet::SpeakerAge, ..FineTuneConfig::default() };
    let base = quick_config(MultiTaskConfig::speaker_only(HeadKind::CosFace), 1);
    let err = finetune(&ckpt, &ft, &base, &manifest(6), None, &mut |_| {}).unwrap_err();
    assert!(matches!(err, crate::Error::Data(_)), "{err:?}");
}

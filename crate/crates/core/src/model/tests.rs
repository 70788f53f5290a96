use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_features(t: usize, d: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((t, d), || rng.random_range(-1.0f32..1.0))
}

fn tiny_config(contexts_zero: bool) -> ModelConfig {
    let mut extractor = ExtractorConfig::tiny(4, 8, 6);
    if contexts_zero {
        for l in &mut extractor.frame_layers {
            l.context = vec![0];
        }
    }
    ModelConfig {
        extractor,
        heads: vec![
            TaskHeadSpec::cosface("speaker", 5, 0.2, 30.0),
            TaskHeadSpec::mlp("age", 3, 8),
        ],
    }
}

#[test]
fn xvector_embedding_shape_and_determinism() {
    let config = ModelConfig {
        extractor: ExtractorConfig::xvector(),
        heads: vec![TaskHeadSpec::cosface("speaker", 10, 0.2, 30.0)],
    };
    let net = SpeakerNet::<f32>::new(config, 1).unwrap();
    let x = random_features(350, 30, 2);
    let a = net.extract_embedding(x.view()).unwrap();
    assert_eq!(a.dim(), 256);
    assert!(a.0.iter().all(|v| v.is_finite()));
    let b = net.extract_embedding(x.view()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rejects_short_and_mismatched_input() {
    let net = SpeakerNet::<f32>::new(tiny_config(false), 0).unwrap();
    assert_eq!(net.min_frames(), 15);
    assert!(net.extract_embedding(random_features(14, 4, 0).view()).is_err());
    assert!(net.extract_embedding(random_features(15, 4, 0).view()).is_ok());
    assert!(net.extract_embedding(random_features(20, 5, 0).view()).is_err());
}

#[test]
fn frame_permutation_invariance_with_pointwise_contexts() {
    let net = SpeakerNet::<f32>::new(tiny_config(true), 3).unwrap();
    let x = random_features(40, 4, 4);
    let mut order: Vec<usize> = (0..40).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let xp = x.select(Axis(0), &order);
    let a = net.extract_embedding(x.view()).unwrap();
    let b = net.extract_embedding(xp.view()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn embedding_is_affine_of_pooled_stats() {
    let net = SpeakerNet::<f64>::new(tiny_config(false), 9).unwrap();
    let x = random_features(30, 4, 10).mapv(f64::from);
    let pooled = net.pooled_statistics(x.view()).unwrap();
    let [w, b] = net.last_linear_indices();
    let expected = pooled.dot(net.params().value(w)) + &net.params().value(b).row(0);
    let emb = net.extract_embedding(x.view()).unwrap();
    for (p, q) in emb.0.iter().zip(expected.iter()) {
        assert!((p - q).abs() < 1e-12);
    }
    // pre-nonlinearity: negative components survive unclipped
    assert!(emb.0.iter().any(|&v| v < 0.0) || emb.0.iter().all(|&v| v >= 0.0));
}

#[test]
fn batch_equals_per_utterance() {
    let net = SpeakerNet::<f32>::new(tiny_config(false), 6).unwrap();
    let xs: Vec<Array2<f32>> = (0..5).map(|i| random_features(20 + 3 * i, 4, 20 + i as u64)).collect();
    let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
    let batch = net.embed_batch(&views).unwrap();
    for (i, x) in xs.iter().enumerate() {
        let single = net.extract_embedding(x.view()).unwrap();
        for (a, b) in batch.row(i).iter().zip(single.0.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
    for h in 0..net.num_heads() {
        let all = net.head_logits(h, batch.view(), None).unwrap();
        for i in 0..xs.len() {
            let one = net.head_logits(h, batch.slice(ndarray::s![i..i + 1, ..]), None).unwrap();
            for (a, b) in all.row(i).iter().zip(one.row(0).iter()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn parameter_tags_partition_values() {
    let net = SpeakerNet::<f32>::new(tiny_config(false), 0).unwrap();
    let tags = net.params().tags();
    let mut uniq = tags.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), tags.len());
    let owners: usize = ["extractor", "speaker", "age"]
        .iter()
        .map(|o| net.params().iter().filter(|p| p.owner == *o).map(|p| p.value.len()).sum::<usize>())
        .sum();
    assert_eq!(owners, net.params().num_values());
    let last: Vec<_> = net.params().iter().filter(|p| p.group == LAST_LINEAR).collect();
    assert_eq!(last.len(), 2);
    assert_eq!(last[0].value.dim(), (16, 6));
    assert!(tags.contains(&"extractor/last_linear/weight".to_string()));
    assert!(tags.contains(&"speaker/cosface/weight".to_string()));
    assert!(tags.contains(&"age/output/bias".to_string()));
}

#[test]
fn init_is_per_group_and_seeded() {
    let a = SpeakerNet::<f32>::new(tiny_config(false), 11).unwrap();
    let mut only_speaker = tiny_config(false);
    only_speaker.heads.truncate(1);
    let b = SpeakerNet::<f32>::new(only_speaker, 11).unwrap();
    for p in b.params().iter() {
        assert_eq!(Some(p), a.params().find(&p.tag()));
    }
    let c = SpeakerNet::<f32>::new(tiny_config(false), 12).unwrap();
    assert_ne!(a.params(), c.params());
    // biases start at zero, weights inside the fan-in bound
    for p in a.params().iter() {
        match p.kind {
            ParamKind::Bias => assert!(p.value.iter().all(|&v| v == 0.0)),
            ParamKind::Weight => {
                let bound = 3f32.sqrt() / (p.value.nrows() as f32).sqrt();
                assert!(p.value.iter().all(|v| v.abs() <= bound));
            }
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let net = SpeakerNet::<f32>::new(tiny_config(false), 4).unwrap();
    let ck = Checkpoint::from_net(&net, 17, serde_json::json!({"note": "x"}));
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(bytes, back.to_bytes().unwrap());
    let net2 = back.to_net().unwrap();
    let x = random_features(20, 4, 1);
    assert_eq!(net.extract_embedding(x.view()).unwrap(), net2.extract_embedding(x.view()).unwrap());
}

#[test]
fn new_heads_keep_extractor() {
    let net = SpeakerNet::<f32>::new(tiny_config(false), 4).unwrap();
    let ft = net.with_new_heads(vec![TaskHeadSpec::mlp("speaker", 7, 8)], 99).unwrap();
    for p in ft.params().iter().filter(|p| p.is_extractor()) {
        assert_eq!(net.params().find(&p.tag()).unwrap().value, p.value);
    }
    assert_eq!(ft.num_heads(), 1);
}

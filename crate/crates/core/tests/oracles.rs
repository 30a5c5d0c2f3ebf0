mod common;

use cca_core::autograd::softmax;
use cca_core::classify::attach_head;
use cca_core::corpus::{ingest, validate_stats};
use cca_core::encoder::{shape_table, Checkpoint, EncoderError, Mode, Preset, Visibility};
use cca_core::evaluate::{metrics, ConfusionMatrix};
use cca_core::{Dataset, Encoder, Family, LabelScheme, Task, Tensor, TokenSeq};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_diff(a: &Tensor, b: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (r, row) in b.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((a.get(r, c) - v).abs());
        }
    }
    worst
}

#[test]
fn transformer_forward_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..5 {
        let enc = Encoder::build(tiny_config(Family::Transformer, 30, 12), seed).unwrap();
        let len = rng.gen_range(2..=12);
        let mut ids = vec![2];
        ids.extend(random_ids(&mut rng, len - 1, 30));
        let seq = TokenSeq::from_ids(&ids, 12);
        let out = enc.forward(std::slice::from_ref(&seq), Mode::Eval, 0).unwrap();
        let oracle = naive_transformer(&enc, &ids, &|_, _| true);
        assert!(max_diff(&out.hidden[0], &oracle) < 1e-6);
        assert_eq!(out.pooled.row(0), out.hidden[0].row(0));
    }
}

#[test]
fn masked_attention_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let enc = Encoder::build(tiny_config(Family::Transformer, 30, 8), 4).unwrap();
    for _ in 0..5 {
        let ids = random_ids(&mut rng, 8, 30);
        let seq = TokenSeq::from_ids(&ids, 8);
        let pattern: Vec<bool> = (0..64).map(|k| k % 9 == 0 || rng.gen_bool(0.5)).collect();
        let vis = Visibility::new(8, pattern.clone()).unwrap();
        let out = enc.forward_with_attention_mask(&[seq], &[vis], Mode::Eval, 0).unwrap();
        let oracle = naive_transformer(&enc, &ids, &|i, j| pattern[i * 8 + j]);
        assert!(max_diff(&out.hidden[0], &oracle) < 1e-6);
    }
}

#[test]
fn lstm_forward_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for seed in 0..5 {
        let enc = Encoder::build(tiny_config(Family::Recurrent, 30, 10), seed).unwrap();
        let ids = random_ids(&mut rng, 7, 30);
        let seq = TokenSeq::from_ids(&ids, 10);
        let out = enc.forward(std::slice::from_ref(&seq), Mode::Eval, 0).unwrap();
        let oracle = naive_lstm(&enc, &ids);
        assert!(max_diff(&out.hidden[0], &oracle) < 1e-6);
        assert_eq!(out.pooled.row(0), out.hidden[0].row(6));
        assert_eq!(out.pooled.cols(), 6);
    }
}

#[test]
fn padding_does_not_change_real_positions() {
    for family in [Family::Transformer, Family::Recurrent] {
        let enc = Encoder::build(tiny_config(family, 30, 16), 2).unwrap();
        let ids = [2, 9, 14, 22, 3];
        let short = TokenSeq::from_ids(&ids, 5);
        let long = TokenSeq::from_ids(&ids, 16);
        let a = enc.forward(&[short], Mode::Eval, 0).unwrap();
        let b = enc.forward(&[long], Mode::Eval, 0).unwrap();
        for r in 0..5 {
            for (x, y) in a.hidden[0].row(r).iter().zip(b.hidden[0].row(r)) {
                assert!((x - y).abs() < 1e-12, "{family:?} row {r}");
            }
        }
        assert_eq!(a.pooled, b.pooled);
    }
}

#[test]
fn bert_base_layer_stack_has_known_size() {
    // 12 × [4·(768² + 768) + 768·3072 + 3072 + 3072·768 + 768 + 4·768]
    let config = Preset::BertBasePaper.config(30_000);
    let body: usize = shape_table(&config)
        .iter()
        .filter(|(n, _)| n.starts_with("layers."))
        .map(|(_, (r, c))| r * c)
        .sum();
    assert_eq!(body, 85_054_464);
    let embeddings: usize = shape_table(&config)
        .iter()
        .filter(|(n, _)| n.starts_with("embeddings."))
        .map(|(_, (r, c))| r * c)
        .sum();
    assert_eq!(embeddings, 30_000 * 768 + 128 * 768 + 2 * 768);
}

#[test]
fn ulmfit_paper_preset_shapes() {
    let config = Preset::UlmfitPaper.config(1000);
    let table = shape_table(&config);
    let find = |n: &str| table.iter().find(|(m, _)| m == n).unwrap().1;
    assert_eq!(find("embeddings.token"), (1000, 400));
    assert_eq!(find("layers.0.lstm.hidden.weight"), (1150, 4600));
    assert_eq!(find("layers.2.lstm.input.weight"), (1150, 1600));
    assert_eq!(find("layers.2.lstm.hidden.weight"), (400, 1600));
}

#[test]
fn hand_computed_softmax() {
    let p = softmax(&[2.0, 1.0, 0.0]);
    let z = 1.0 + (-1.0f64).exp() + (-2.0f64).exp();
    let expected = [1.0 / z, (-1.0f64).exp() / z, (-2.0f64).exp() / z];
    for (a, b) in p.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn rigged_head_reproduces_known_logits() {
    let enc = Encoder::build(tiny_config(Family::Transformer, 20, 8), 0).unwrap();
    let scheme = LabelScheme::published(Dataset::Dfki, Task::Sentiment).unwrap();
    let mut clf = attach_head(enc, &scheme, 0).unwrap();
    clf.set_head(Tensor::zeros(8, 3), Tensor::from_vec(1, 3, vec![2.0, 1.0, 0.0])).unwrap();
    let preds = clf.predict_seqs(&[TokenSeq::from_ids(&[2, 7, 3], 8)]).unwrap();
    let z: f64 = [2.0f64, 1.0, 0.0].iter().map(|x| x.exp()).sum();
    for (p, l) in preds[0].probs.iter().zip([2.0f64, 1.0, 0.0]) {
        assert!((p - l.exp() / z).abs() < 1e-6);
    }
    assert_eq!(preds[0].label, "Positive");
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let counts: Vec<Vec<u64>> = (0..n)
            .map(|_| (0..n).map(|_| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(0..8) }).collect())
            .collect();
        let labels = (0..n).map(|i| format!("c{i}")).collect();
        let m = metrics(&ConfusionMatrix { labels, counts: counts.clone() });
        let o = brute_metrics(&counts);
        for c in 0..n {
            assert!((m.per_class[c].precision - o.precision[c]).abs() < 1e-12);
            assert!((m.per_class[c].recall - o.recall[c]).abs() < 1e-12);
            assert!((m.per_class[c].f1 - o.f1[c]).abs() < 1e-12);
        }
        assert!((m.macro_f1 - o.macro_f1).abs() < 1e-12);
        assert!((m.micro_f1 - o.micro_f1).abs() < 1e-12);
        assert!((m.accuracy - o.accuracy).abs() < 1e-12);
        assert_eq!(m.micro_f1, m.accuracy);
    }
}

#[test]
fn fixtures_ingest_and_match_their_fractions() {
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures_dir().join("expected.json")).unwrap()).unwrap();
    for dataset in Dataset::ALL {
        let corpus = ingest(dataset, &fixtures_dir()).unwrap();
        assert_eq!(corpus.len() as u64, expected["counts"][dataset.name()].as_u64().unwrap());
        for &task in dataset.tasks() {
            let fr: std::collections::BTreeMap<String, f64> =
                serde_json::from_value(expected["fractions"][dataset.name()][task.name()].clone()).unwrap();
            let scheme = LabelScheme::published(dataset, task).unwrap().with_expected(&fr).unwrap();
            let report = validate_stats(&corpus, &scheme, 0.005).unwrap();
            assert!(report.pass, "{report}");
            let published = LabelScheme::published(dataset, task).unwrap();
            assert!(!validate_stats(&corpus, &published, 0.005).unwrap().pass);
        }
    }
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    for family in [Family::Transformer, Family::Recurrent] {
        let enc = Encoder::build(tiny_config(family, 25, 10), 8).unwrap();
        let bytes = enc.to_checkpoint().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap().into_encoder().unwrap();
        assert_eq!(back, enc);
        let ids = TokenSeq::from_ids(&[2, 6, 7, 3], 10);
        let a = enc.forward(std::slice::from_ref(&ids), Mode::Eval, 0).unwrap();
        let b = back.forward(&[ids], Mode::Eval, 0).unwrap();
        assert_eq!(a.hidden, b.hidden);
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let enc = Encoder::build(tiny_config(Family::Transformer, 25, 10), 8).unwrap();
    let bytes = enc.to_checkpoint().to_bytes().unwrap();
    let truncated = &bytes[..bytes.len() - 7];
    assert!(matches!(Checkpoint::from_bytes(truncated), Err(EncoderError::CorruptBlob(_))));
    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&999u32.to_le_bytes());
    assert!(matches!(
        Checkpoint::from_bytes(&future),
        Err(EncoderError::VersionMismatch { found: 999, expected: 1 })
    ));
    let mut ckpt = Checkpoint::from_bytes(&bytes).unwrap();
    ckpt.blobs.pop();
    assert!(matches!(ckpt.into_encoder(), Err(EncoderError::CorruptBlob(_))));
}

mod common;

use std::collections::BTreeMap;

use cca_core::classify::{attach_head, finetune, predict, predict_baseline, train_ngram_baseline, BaselineConfig};
use cca_core::corpus::synthetic::separable_corpus;
use cca_core::corpus::{ingest, split_train_valid, stratified_kfold};
use cca_core::encoder::{Mode, Preset};
use cca_core::evaluate::{aggregate, cross_validate, CvOptions, CvReport, ModelSpec, NeuralSpec};
use cca_core::pretrain::{further_pretrain, masked_lm_loss, MaskingPlan, Objective, PretrainConfig, PretrainError};
use cca_core::tokenizer::{CLS, SEP};
use cca_core::{CitationContext, Corpus, Dataset, Encoder, Family, Task, TokenSeq, TrainConfig, Vocab};
use common::*;

fn texts(corpus: &Corpus, ids: &[String]) -> Vec<String> {
    ids.iter().map(|id| corpus.get(id).unwrap().text.clone()).collect()
}

fn ids(corpus: &Corpus) -> Vec<String> {
    corpus.records().iter().map(|r| r.id.clone()).collect()
}

#[test]
fn bert_mini_memorizes_32_fixtures() {
    let corpus = ingest(Dataset::Dfki, &fixtures_dir()).unwrap();
    let train: Vec<String> = ids(&corpus).into_iter().take(32).collect();
    let vocab = Vocab::train(texts(&corpus, &train), 300, 0, true).unwrap();
    let enc = Encoder::build(Preset::BertMini.config(vocab.len()), 1).unwrap();
    let scheme = corpus.scheme(Task::Function).unwrap();
    let clf = attach_head(enc, scheme, 1).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 200,
        max_steps: Some(200),
        selection_metric: cca_core::classify::SelectionMetric::Accuracy,
        ..TrainConfig::default()
    };
    let fit = finetune(&clf, &train, &[], &corpus, &vocab, &config).unwrap();
    assert!(fit.selected_on_train);
    assert!(fit.steps <= 200);
    assert_eq!(fit.best_metric, 1.0, "best train accuracy {}", fit.best_metric);
}

#[test]
fn frozen_encoder_is_bitwise_unchanged_and_head_still_learns() {
    let corpus = separable_corpus(120, 3).unwrap();
    let plan = stratified_kfold(&corpus, Task::Sentiment, 10, 0).unwrap();
    let split = split_train_valid(&corpus, &plan, 0, 1.0 / 9.0, 0).unwrap();
    let vocab = Vocab::train(texts(&corpus, &split.train), 200, 0, true).unwrap();
    let enc = Encoder::build(Preset::BertMini.config(vocab.len()), 2).unwrap();
    let clf = attach_head(enc.clone(), corpus.scheme(Task::Sentiment).unwrap(), 2).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 20,
        freeze_encoder: true,
        selection_metric: cca_core::classify::SelectionMetric::Accuracy,
        ..TrainConfig::default()
    };
    let fit = finetune(&clf, &split.train, &split.valid, &corpus, &vocab, &config).unwrap();
    assert_eq!(fit.best.encoder(), &enc);
    assert!(fit.best_metric > 0.34, "valid accuracy {}", fit.best_metric);
    let series: Vec<f64> = fit.epochs.iter().map(|e| e.valid_metric).collect();
    assert_eq!(Some(fit.best_epoch), cca_core::classify::select_best_epoch(&series));
}

#[test]
fn finetune_is_deterministic() {
    let corpus = separable_corpus(60, 4).unwrap();
    let all = ids(&corpus);
    let (train, valid) = all.split_at(50);
    let vocab = Vocab::train(texts(&corpus, train), 120, 0, true).unwrap();
    let mut cfg = common::tiny_config(Family::Transformer, vocab.len(), 32);
    cfg.hidden_size = 16;
    cfg.embed_size = 16;
    let clf = attach_head(Encoder::build(cfg, 5).unwrap(), corpus.scheme(Task::Function).unwrap(), 5).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let a = finetune(&clf, train, valid, &corpus, &vocab, &config).unwrap();
    let b = finetune(&clf, train, valid, &corpus, &vocab, &config).unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.epochs, b.epochs);
    let preds = predict(&a.best, &texts(&corpus, valid), &vocab).unwrap();
    for p in &preds {
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.probs.iter().all(|&x| x >= 0.0));
    }
    assert!(matches!(
        predict::<&str>(&a.best, &[], &vocab),
        Err(cca_core::classify::ClassifyError::EmptyInput)
    ));
}

#[test]
fn finetune_rejects_bad_inputs() {
    let corpus = separable_corpus(30, 1).unwrap();
    let vocab = Vocab::train(texts(&corpus, &ids(&corpus)), 80, 0, true).unwrap();
    let enc = Encoder::build(common::tiny_config(Family::Transformer, vocab.len(), 32), 0).unwrap();
    let clf = attach_head(enc, corpus.scheme(Task::Sentiment).unwrap(), 0).unwrap();
    let err = finetune(&clf, &[], &[], &corpus, &vocab, &TrainConfig::default()).unwrap_err();
    assert_eq!(err.kind(), "EmptyTrainSet");
    let fn_clf = attach_head(
        clf.encoder().clone(),
        &cca_core::LabelScheme::published(Dataset::Dfki, Task::Sentiment).unwrap(),
        0,
    )
    .unwrap();
    let err = finetune(&fn_clf, &ids(&corpus), &[], &separable_corpus(30, 1).unwrap(), &vocab, &TrainConfig::default());
    assert!(err.is_ok(), "same label list on another dataset is accepted");
}

fn good_bad_corpus() -> Corpus {
    let records = (0..40)
        .map(|i| {
            let (label, word) = if i % 2 == 0 { ("Positive", "good") } else { ("Negative", "bad") };
            CitationContext {
                id: format!("gb{i}"),
                text: format!("the method of [{i}] is {word} for item{}", i % 7),
                dataset: Dataset::Umich,
                function_label: None,
                sentiment_label: Some(label.into()),
                meta: BTreeMap::new(),
            }
        })
        .collect();
    Corpus::new(Dataset::Umich, records).unwrap()
}

#[test]
fn baseline_separates_good_from_bad() {
    let corpus = good_bad_corpus();
    let train = ids(&corpus);
    let model = train_ngram_baseline(&train, &corpus, Task::Sentiment, &BaselineConfig::default()).unwrap();
    let preds = predict_baseline(&model, &texts(&corpus, &train));
    let correct = preds
        .iter()
        .zip(corpus.records())
        .filter(|(p, r)| Some(p.as_str()) == r.sentiment_label.as_deref())
        .count();
    assert!(correct as f64 / 40.0 >= 0.99);
    let again = train_ngram_baseline(&train, &corpus, Task::Sentiment, &BaselineConfig::default()).unwrap();
    assert_eq!(model, again);
}

#[test]
fn single_class_baseline_predicts_that_class() {
    let corpus = good_bad_corpus();
    let positives: Vec<String> = ids(&corpus).into_iter().step_by(2).collect();
    let model = train_ngram_baseline(&positives, &corpus, Task::Sentiment, &BaselineConfig::default()).unwrap();
    let preds = predict_baseline(&model, &["this is bad", "unseen words only", "good"]);
    assert!(preds.iter().all(|p| p == "Positive"));
    assert!(train_ngram_baseline(&[], &corpus, Task::Sentiment, &BaselineConfig::default()).is_err());
}

#[test]
fn masked_lm_loss_limits() {
    let mut enc = Encoder::build(common::tiny_config(Family::Transformer, 12, 8), 0).unwrap();
    for t in ["embeddings.token", "lm.bias"] {
        enc.params_mut().get_mut(t).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let seq = TokenSeq::from_ids(&[CLS, 4, 4, 4, SEP], 8);
    let plan = MaskingPlan {
        positions: vec![1, 2, 3],
        replacement: vec![cca_core::pretrain::Replacement::Mask; 3],
        targets: vec![7, 7, 7],
    };
    let uniform = masked_lm_loss(&enc, std::slice::from_ref(&seq), std::slice::from_ref(&plan), Mode::Eval, 0).unwrap();
    assert!((uniform.loss - 12f64.ln()).abs() < 1e-9);
    enc.params_mut().get_mut("lm.bias").unwrap().data_mut()[7] = 100.0;
    let rigged = masked_lm_loss(&enc, &[seq], &[plan], Mode::Eval, 0).unwrap();
    assert!(rigged.loss < 1e-9);
}

#[test]
fn masked_targets_receive_embedding_gradient() {
    let enc = Encoder::build(common::tiny_config(Family::Transformer, 12, 8), 1).unwrap();
    let seq = TokenSeq::from_ids(&[CLS, 4, 6, 8, SEP], 8);
    let plan = MaskingPlan {
        positions: vec![2],
        replacement: vec![cca_core::pretrain::Replacement::Mask],
        targets: vec![9],
    };
    let out = masked_lm_loss(&enc, &[seq], &[plan], Mode::Eval, 0).unwrap();
    let tok = enc.params().index("embeddings.token").unwrap();
    let row = &out.grads[tok].data()[9 * 8..10 * 8];
    assert!(row.iter().any(|&g| g != 0.0));
}

fn pretrain_corpus() -> Vec<String> {
    let corpus = separable_corpus(60, 9).unwrap();
    corpus.records().iter().map(|r| r.text.clone()).collect()
}

#[test]
fn further_pretraining_reduces_loss_for_each_objective() {
    let texts = pretrain_corpus();
    let vocab = Vocab::train(&texts, 150, 0, true).unwrap();
    for (preset, objective) in [
        (Preset::UlmfitMini, Objective::Causal),
        (Preset::BertMini, Objective::Masked),
        (Preset::XlnetMini, Objective::Permutation),
    ] {
        let mut config = preset.config(vocab.len());
        config.max_len = 32;
        let enc = Encoder::build(config, 0).unwrap();
        let cfg = PretrainConfig {
            objective,
            steps: 40,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 1,
            ..PretrainConfig::default()
        };
        let run = further_pretrain(&enc, &texts, &vocab, &cfg).unwrap();
        assert_eq!(run.losses.len(), 40);
        let head: f64 = run.losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = run.losses[35..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "{objective}: {head} -> {tail}");
        let prov = run.encoder.provenance().unwrap();
        assert_eq!((prov.objective.as_str(), prov.steps), (objective.name(), 40));
        let again = further_pretrain(&enc, &texts, &vocab, &cfg).unwrap();
        assert_eq!(again.encoder, run.encoder);
        assert!(run.loss_csv().starts_with("step,loss\n1,"));
    }
}

#[test]
fn zero_steps_leave_the_encoder_unchanged() {
    let texts = pretrain_corpus();
    let vocab = Vocab::train(&texts, 150, 0, true).unwrap();
    let enc = Encoder::build(Preset::BertMini.config(vocab.len()), 0).unwrap();
    let cfg = PretrainConfig {
        steps: 0,
        ..PretrainConfig::default()
    };
    let run = further_pretrain(&enc, &texts, &vocab, &cfg).unwrap();
    assert_eq!(run.encoder, enc);
    assert!(run.losses.is_empty());
    let empty: Vec<String> = Vec::new();
    assert!(matches!(further_pretrain(&enc, &empty, &vocab, &cfg), Err(PretrainError::EmptyCorpus)));
}

#[test]
fn non_finite_loss_is_reported_with_its_step() {
    let texts = pretrain_corpus();
    let vocab = Vocab::train(&texts, 150, 0, true).unwrap();
    let mut enc = Encoder::build(Preset::BertMini.config(vocab.len()), 0).unwrap();
    enc.params_mut().get_mut("lm.bias").unwrap().data_mut()[0] = f64::NAN;
    let cfg = PretrainConfig {
        steps: 3,
        ..PretrainConfig::default()
    };
    assert!(matches!(
        further_pretrain(&enc, &texts, &vocab, &cfg),
        Err(PretrainError::DivergedLoss { step: 0 })
    ));
}

#[test]
fn baseline_cross_validation_on_separable_data() {
    let corpus = separable_corpus(300, 0).unwrap();
    let spec = ModelSpec::Baseline(BaselineConfig::default());
    let options = CvOptions {
        seed: 42,
        ..CvOptions::default()
    };
    let report = cross_validate(&corpus, Task::Sentiment, &spec, &options).unwrap();
    assert_eq!(report.folds.len(), 10);
    let mut tested: Vec<&String> = report.folds.iter().flat_map(|f| &f.test_ids).collect();
    tested.sort();
    tested.dedup();
    assert_eq!(tested.len(), 300);
    assert!(report.aggregate.get("macro_f1").unwrap().mean >= 0.95);
    for f in &report.folds {
        let m = f.metrics.as_ref().unwrap();
        assert_eq!(m.micro_f1, m.accuracy);
        assert_eq!(f.test_ids.len(), 30);
    }
    let json = report.to_json();
    let parsed: CvReport = serde_json::from_str(&json).unwrap();
    assert_eq!(aggregate(&parsed.folds), parsed.aggregate);
    let serial = cross_validate(&corpus, Task::Sentiment, &spec, &CvOptions { jobs: Some(1), ..options.clone() }).unwrap();
    assert_eq!(serial.to_json(), json);
}

#[test]
fn neural_cross_validation_is_reproducible() {
    let corpus = separable_corpus(40, 2).unwrap();
    let mut encoder = common::tiny_config(Family::Transformer, 80, 32);
    encoder.dropout = 0.1;
    let spec = ModelSpec::Neural(NeuralSpec {
        name: "tiny".into(),
        encoder,
        lowercase: true,
        init_checkpoint: None,
        pretrain: Some(PretrainConfig {
            steps: 2,
            batch_size: 8,
            ..PretrainConfig::default()
        }),
        train: TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        },
    });
    let options = CvOptions {
        k: 4,
        seed: 3,
        ..CvOptions::default()
    };
    let a = cross_validate(&corpus, Task::Sentiment, &spec, &options).unwrap();
    let b = cross_validate(&corpus, Task::Sentiment, &spec, &CvOptions { jobs: Some(2), ..options.clone() }).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.runtime.failed_folds, 0);
    assert_eq!(a.runtime.pretrain_steps, 8);
}

#[test]
fn failing_folds_are_marked_not_fatal() {
    let corpus = separable_corpus(40, 2).unwrap();
    let spec = ModelSpec::Neural(NeuralSpec {
        name: "broken".into(),
        encoder: common::tiny_config(Family::Recurrent, 80, 32),
        lowercase: true,
        init_checkpoint: None,
        pretrain: Some(PretrainConfig {
            objective: Objective::Masked,
            steps: 1,
            ..PretrainConfig::default()
        }),
        train: TrainConfig::default(),
    });
    let report = cross_validate(&corpus, Task::Sentiment, &spec, &CvOptions { k: 4, ..CvOptions::default() }).unwrap();
    assert_eq!(report.runtime.failed_folds, 4);
    assert_eq!(report.folds[0].error.as_ref().unwrap().kind, "Unsupported");
    assert_eq!(report.aggregate.folds_used, 0);
}

mod common;

use common::random_sequences;
use elbert::error::Error;
use elbert::model::{Model, ModelConfig, WeightFile};
use elbert::numerics::grad_check;
use elbert::training::{
    checkpoint_file, example_gradient, example_loss, optimizer_from_file, train, Example, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro_config() -> ModelConfig {
    ModelConfig {
        depth: 3,
        hidden: 8,
        heads: 2,
        ffn: 8,
        vocab: 10,
        max_seq_len: 6,
        classes: 3,
    }
}

fn keyword_task(n: usize, cfg: &ModelConfig, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_sequences(seed, n, cfg)
        .into_iter()
        .map(|x| {
            let label = rng.random_range(0..cfg.classes);
            let mut body: Vec<usize> = x.ids()[1..].iter().map(|&i| 3 + (i - 3) % 4 + cfg.classes).collect();
            body.truncate(cfg.max_seq_len - 2);
            let pos = rng.random_range(0..=body.len());
            body.insert(pos, 3 + label);
            Example {
                tokens: elbert::TokenSequence::with_cls(&body),
                label,
            }
        })
        .collect()
}

#[test]
fn full_gradient_matches_finite_differences() {
    let cfg = micro_config();
    let mut model = Model::init(cfg, 17).unwrap();
    // move exit logits off their shared start so each has its own gradient
    let t = &mut model.params_mut().exit_logits;
    t.data_mut().copy_from_slice(&[0.5, -1.0]);
    let ex = &keyword_task(1, &cfg, 3)[0];
    let theta = model.params().flatten();
    let value = |flat: &[f64]| {
        let mut m = model.clone();
        m.params_mut().assign_flat(flat);
        example_loss(&m, ex).unwrap()
    };
    let gradient = |flat: &[f64]| {
        let mut m = model.clone();
        m.params_mut().assign_flat(flat);
        example_gradient(&m, ex).unwrap().1.flatten()
    };
    let report = grad_check(value, gradient, &theta, None).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert_eq!(report.checked, theta.len());
}

#[test]
fn tape_and_plain_losses_agree_bitwise() {
    let cfg = micro_config();
    let model = Model::init(cfg, 5).unwrap();
    for ex in keyword_task(10, &cfg, 8) {
        assert_eq!(example_gradient(&model, &ex).unwrap().0, example_loss(&model, &ex).unwrap());
    }
}

#[test]
fn training_learns_and_is_reproducible() {
    let cfg = micro_config();
    let data = keyword_task(240, &cfg, 1);
    let (train_set, val_set) = data.split_at(180);
    let tc = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 16,
        epochs: 12,
        seed: 4,
        ..TrainConfig::default()
    };
    let a = train(Model::init(cfg, 0).unwrap(), train_set, val_set, &tc).unwrap();
    let b = train(Model::init(cfg, 0).unwrap(), train_set, val_set, &tc).unwrap();
    assert_eq!(a.model, b.model);
    let first = &a.history[0];
    let last = a.history.last().unwrap();
    assert!(last.train_loss < first.train_loss, "{first:?} -> {last:?}");
    assert!(last.val_accuracy > 0.9, "{last:?}");
    assert!((last.exit_weights.iter().sum::<f64>() - cfg.depth as f64).abs() < 1e-12);
}

#[test]
fn optimizer_state_survives_a_checkpoint() {
    let cfg = micro_config();
    let data = keyword_task(40, &cfg, 2);
    let tc = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        epochs: 1,
        ..TrainConfig::default()
    };
    let out = train(Model::init(cfg, 0).unwrap(), &data, &[], &tc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    checkpoint_file(&out.model, &out.optimizer).write(&path).unwrap();
    let file = WeightFile::read(&path).unwrap();
    let model = Model::from_weight_file(&file).unwrap();
    assert_eq!(model, out.model);
    assert_eq!(optimizer_from_file(&file, &model).unwrap(), Some(out.optimizer));
    assert_eq!(optimizer_from_file(&out.model.to_weight_file(), &model).unwrap(), None);
}

#[test]
fn non_finite_loss_is_reported() {
    let cfg = micro_config();
    let mut model = Model::init(cfg, 0).unwrap();
    model.params_mut().classifier.bias.data_mut()[0] = f64::NAN;
    let data = keyword_task(8, &cfg, 2);
    let err = train(model, &data, &[], &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1, step: 0, .. }), "{err}");
}

#[test]
fn rejects_bad_labels_and_config() {
    let cfg = micro_config();
    let mut data = keyword_task(4, &cfg, 2);
    data[1].label = 3;
    assert!(train(Model::init(cfg, 0).unwrap(), &data, &[], &TrainConfig::default()).is_err());
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(train(Model::init(cfg, 0).unwrap(), &data[..1], &[], &bad).is_err());
    assert!(train(Model::init(cfg, 0).unwrap(), &[], &[], &TrainConfig::default()).is_err());
}

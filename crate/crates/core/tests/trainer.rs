mod common;

use common::{full_split, split, tiny_config};
use s4mtl::trainer::{
    init_models, load_checkpoint, save_checkpoint, train, train_baseline, train_observed, Checkpoint, Method,
};
use s4mtl::Error;

#[test]
fn step_count_follows_longer_stream() {
    let data = split(60, 0.25, 1);
    let (l, u) = (data.labeled.len(), data.unlabeled.len());
    assert!(u > l);
    for method in [Method::S4mtl, Method::S2mtl] {
        let cfg = tiny_config(method);
        let (_, hist) = train_baseline(&data, &cfg).unwrap();
        let per_epoch = u.div_ceil(cfg.batch_size);
        assert_eq!(hist.steps.len(), per_epoch * cfg.epochs, "{method}");
        assert_eq!(hist.epochs.len(), cfg.epochs);
        assert!(hist.steps.iter().enumerate().all(|(i, s)| s.step == i));
    }
    let cfg = tiny_config(Method::Unet);
    let (_, hist) = train_baseline(&data, &cfg).unwrap();
    assert_eq!(hist.steps.len(), l.div_ceil(cfg.batch_size) * cfg.epochs);
}

#[test]
fn single_batch_epoch() {
    let data = split(40, 0.5, 2);
    let mut cfg = tiny_config(Method::S4mtl);
    cfg.batch_size = 64;
    cfg.epochs = 1;
    let (_, hist) = train_baseline(&data, &cfg).unwrap();
    assert_eq!(hist.steps.len(), 1);
    assert_eq!(hist.best_epoch, Some(0));
}

#[test]
fn same_seed_is_bit_identical() {
    let data = split(48, 0.25, 3);
    let cfg = tiny_config(Method::S4mtl);
    let a = train_baseline(&data, &cfg).unwrap();
    let b = train_baseline(&data, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    let strip = |h: &s4mtl::trainer::TrainHistory| -> Vec<_> { h.steps.iter().map(|s| s.losses).collect() };
    assert_eq!(strip(&a.1), strip(&b.1));

    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(train_baseline(&data, &other).unwrap().0, a.0);
}

#[test]
fn loss_components_match_method() {
    let data = split(48, 0.25, 4);
    let (_, s4) = train_baseline(&data, &tiny_config(Method::S4mtl)).unwrap();
    assert!(s4.steps.iter().all(|s| s.losses.kl_unsupervised > 0.0 && s.losses.d_selfsup > 0.0));
    assert!(s4.steps.iter().all(|s| s.eta > 1.0 / 3.0 && s.eta <= 1.0));

    let (_, s2) = train_baseline(&data, &tiny_config(Method::S2mtl)).unwrap();
    for s in &s2.steps {
        assert_eq!(s.losses.kl_unsupervised, 0.0);
        assert_eq!(s.losses.d_selfsup, 0.0);
        assert!(s.losses.g_adv_unlabeled > 0.0);
    }

    let (_, unet) = train_baseline(&data, &tiny_config(Method::Unet)).unwrap();
    for s in &unet.steps {
        let v = s.losses.values();
        assert!(v[0] > 0.0 && v[1..9].iter().all(|&x| x == 0.0));
        assert_eq!(s.losses.total_g, s.losses.dice_supervised);
    }
}

#[test]
fn alpha_zero_ignores_unlabeled_objectives() {
    // With α = 0 the unlabeled terms carry no gradient, so the generator
    // trajectory cannot depend on whether proxy transforms are used.
    let data = split(48, 0.25, 5);
    let mut a = tiny_config(Method::S4mtl);
    a.weights.alpha = 0.0;
    let mut b = tiny_config(Method::S2mtl);
    b.weights.alpha = 0.0;
    let (ma, _) = train_baseline(&data, &a).unwrap();
    let (mb, _) = train_baseline(&data, &b).unwrap();
    assert_eq!(ma.theta, mb.theta);
    assert_eq!(ma.psi, mb.psi);
}

#[test]
fn supervised_baselines_run_without_unlabeled_data() {
    let data = full_split(40, 6);
    assert!(data.unlabeled.is_empty());
    for method in [Method::Umtl, Method::Unet, Method::Convnet] {
        let (models, hist) = train_baseline(&data, &tiny_config(method)).unwrap();
        assert!(models.all_finite());
        assert_eq!(hist.steps.len(), data.labeled.len().div_ceil(8) * 2);
        let last = hist.epochs.last().unwrap();
        if method.classifies() {
            assert!(last.val_accuracy.is_some());
        } else {
            assert!(last.val_accuracy.is_none());
        }
    }
    let err = train_baseline(&data, &tiny_config(Method::S4mtl)).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn mismatched_models_rejected() {
    let data = split(40, 0.25, 7);
    let unet = init_models(&tiny_config(Method::Unet), 3).unwrap();
    assert!(train(&data, unet, &tiny_config(Method::S4mtl)).is_err());
}

#[test]
fn selection_keeps_best_epoch() {
    let data = split(48, 0.25, 8);
    let mut cfg = tiny_config(Method::Unet);
    cfg.epochs = 4;
    let mut snapshots = Vec::new();
    let (chosen, hist) = train_observed(&data, init_models(&cfg, 3).unwrap(), &cfg, &mut |ev| {
        snapshots.push(ev.models.clone());
        Ok(())
    })
    .unwrap();
    let best = hist.best_epoch.unwrap();
    let scores: Vec<f64> = hist.epochs.iter().map(|e| e.selection_score.unwrap()).collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, scores.iter().position(|&s| s == top).unwrap());
    assert_eq!(chosen, snapshots[best]);
}

#[test]
fn trained_model_checkpoint_round_trip() {
    let data = split(40, 0.25, 9);
    let cfg = tiny_config(Method::S4mtl);
    let (models, history) = train_baseline(&data, &cfg).unwrap();
    let ckpt = Checkpoint {
        class_count: 3,
        config: cfg,
        models,
        history,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
}

#[test]
fn unet_learns_synthetic_masks() {
    let data = split(80, 0.5, 10);
    let mut cfg = tiny_config(Method::Unet);
    cfg.epochs = 6;
    let (_, hist) = train_baseline(&data, &cfg).unwrap();
    let first = hist.epoch_mean(0, |s| s.losses.dice_supervised).unwrap();
    let last = hist.epoch_mean(cfg.epochs - 1, |s| s.losses.dice_supervised).unwrap();
    assert!(last < first, "dice loss {first} -> {last}");
}

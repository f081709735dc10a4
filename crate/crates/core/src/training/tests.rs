use std::path::Path;

use super::*;
use crate::nnet::tests::{random_obs, tiny_config};
use crate::nnet::CellKind;

fn data(n_train: usize, n_val: usize) -> (Vec<SequenceObservation>, Vec<SequenceObservation>) {
    let m = tiny_config(CellKind::GatedSimple);
    let train = random_obs(&m, 1, n_train);
    let mut val = random_obs(&m, 2, n_val);
    for o in &mut val {
        o.subject_id += 10_000;
    }
    (train, val)
}

fn tiny(mut cfg: TrainConfig) -> TrainConfig {
    cfg.model = ModelConfig { heads: cfg.model.heads.clone(), ..tiny_config(CellKind::GatedSimple) };
    cfg.epochs = 4;
    cfg.batch_size = 4;
    cfg.seed = 11;
    cfg.augment.max_shift = 1;
    cfg
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

#[test]
fn zero_epochs_returns_initialized_params() {
    let (tr, va) = data(12, 6);
    let cfg = TrainConfig { epochs: 0, ..tiny(TrainConfig::noisepu()) };
    let out = train_noisepu(&tr, &va, &cfg).unwrap();
    assert!(out.history.epochs.is_empty());
    assert_eq!(out.history.selected, None);
    let mut m = cfg.model.clone();
    m.init_seed = cfg.seed;
    let mut expect = init_params(&m).unwrap();
    expect.fit_standardization(&tr);
    assert_eq!(out.params, expect);
}

#[test]
fn alpha_zero_noisepu_matches_pu_only() {
    let (tr, va) = data(14, 6);
    let joint = TrainConfig { alpha: 0.0, ..tiny(TrainConfig::noisepu()) };
    let pu_only = TrainConfig { branches: Branches { pu: true, noise: false }, ..joint.clone() };
    let a = train_noisepu(&tr, &va, &joint).unwrap();
    let b = train_noisepu(&tr, &va, &pu_only).unwrap();
    assert_eq!(a.history.epochs.len(), 4);
    for (x, y) in a.history.epochs.iter().zip(&b.history.epochs) {
        assert!(close(x.train_loss, y.train_loss), "{} vs {}", x.train_loss, y.train_loss);
        assert!(close(x.val_loss, y.val_loss), "{} vs {}", x.val_loss, y.val_loss);
    }
}

#[test]
fn zero_weight_regcon_matches_plain() {
    let (tr, va) = data(14, 6);
    let rc = TrainConfig { alpha: 0.0, beta: 0.0, ..tiny(TrainConfig::regcon()) };
    let plain = TrainConfig { scheme: Scheme::Plain, ..rc.clone() };
    let a = train_regcon(&tr, &va, &rc).unwrap();
    let b = train_regcon(&tr, &va, &plain).unwrap();
    for (x, y) in a.history.epochs.iter().zip(&b.history.epochs) {
        assert!(close(x.train_loss, y.train_loss), "{} vs {}", x.train_loss, y.train_loss);
        assert!(close(x.val_loss, y.val_loss));
    }
    assert_eq!(a.params, b.params);
}

#[test]
fn weighted_regcon_differs_from_plain() {
    let (tr, va) = data(14, 6);
    let rc = tiny(TrainConfig::regcon());
    let plain = TrainConfig { scheme: Scheme::Plain, ..rc.clone() };
    let a = train_regcon(&tr, &va, &rc).unwrap();
    let b = train_regcon(&tr, &va, &plain).unwrap();
    assert_ne!(a.history.epochs[0].train_loss, b.history.epochs[0].train_loss);
}

#[test]
fn runs_are_deterministic() {
    let (tr, va) = data(12, 6);
    for cfg in [tiny(TrainConfig::noisepu()), tiny(TrainConfig::regcon())] {
        let a = run(&cfg, &tr, &va).unwrap();
        let b = run(&cfg, &tr, &va).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
    }
}

#[test]
fn selection_rule_holds() {
    let (tr, va) = data(16, 8);
    let cfg = TrainConfig { epochs: 8, ..tiny(TrainConfig::noisepu()) };
    let out = train_noisepu(&tr, &va, &cfg).unwrap();
    let h = &out.history;
    let sel = h.selected.expect("first epoch always improves on +inf");
    let rec = &h.epochs[sel];
    assert!(rec.retained);
    let mut running = f64::INFINITY;
    for r in &h.epochs {
        assert_eq!(r.retained, r.val_loss < running);
        if r.retained {
            running = r.val_loss;
            assert!(r.val_sensitivity + r.val_specificity <= rec.val_sensitivity + rec.val_specificity);
        }
    }
    assert!(h.epochs[0].retained);
}

#[test]
fn lr_follows_schedule() {
    let (tr, va) = data(8, 4);
    let cfg = TrainConfig { epochs: 6, ..tiny(TrainConfig::noisepu()) };
    let out = train_noisepu(&tr, &va, &cfg).unwrap();
    let lrs: Vec<f64> = out.history.epochs.iter().map(|r| r.lr).collect();
    assert_eq!(lrs[..5], [8.9e-4; 5]);
    assert_eq!(lrs[5], 8.9e-4 * 0.5);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (tr, va) = data(12, 6);
    for base in [TrainConfig::noisepu(), TrainConfig::regcon()] {
        let cfg = TrainConfig { epochs: 30, ..tiny(base) };
        let straight = {
            let mut t = Trainer::new(&cfg, &tr, &va).unwrap();
            t.run_until(30, |_| Ok(())).unwrap();
            t.into_state()
        };
        let mut t = Trainer::new(&cfg, &tr, &va).unwrap();
        t.run_until(10, |_| Ok(())).unwrap();
        let text = checkpoint_to_string(t.state());
        let loaded = checkpoint_from_str(&text, Path::new("mem")).unwrap();
        assert_eq!(&loaded, t.state());
        let mut t = Trainer::resume(loaded, &tr, &va).unwrap();
        t.run_until(30, |_| Ok(())).unwrap();
        assert!(t.is_done());
        assert_eq!(t.into_state(), straight);
    }
}

#[test]
fn checkpoint_rejects_corruption_and_versions() {
    let (tr, va) = data(8, 4);
    let t = Trainer::new(&tiny(TrainConfig::noisepu()), &tr, &va).unwrap();
    let text = checkpoint_to_string(t.state());
    let tampered = text.replacen("\"next_epoch\":0", "\"next_epoch\":1", 1);
    assert_ne!(tampered, text);
    assert!(matches!(checkpoint_from_str(&tampered, Path::new("x")), Err(Error::Checksum { .. })));
    let cut: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
    assert!(matches!(checkpoint_from_str(&cut, Path::new("x")), Err(Error::Checksum { .. })));
    let old = text.replacen("ckpt/1", "ckpt/0", 1);
    assert!(matches!(checkpoint_from_str(&old, Path::new("x")), Err(Error::Version { .. })));
}

#[test]
fn checkpoint_file_round_trip() {
    let (tr, va) = data(8, 4);
    let mut t = Trainer::new(&tiny(TrainConfig::regcon()), &tr, &va).unwrap();
    t.run_epoch().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run/ckpt.txt");
    checkpoint_save(t.state(), &path).unwrap();
    assert_eq!(&checkpoint_load(&path).unwrap(), t.state());
}

#[test]
fn resume_rejects_other_data() {
    let (tr, va) = data(8, 4);
    let t = Trainer::new(&tiny(TrainConfig::noisepu()), &tr, &va).unwrap();
    let state = t.into_state();
    let (tr2, _) = data(9, 4);
    assert!(matches!(Trainer::resume(state, &tr2, &va), Err(Error::Input(_))));
}

#[test]
fn bad_inputs_are_rejected() {
    let (tr, va) = data(8, 4);
    let cfg = tiny(TrainConfig::noisepu());
    assert!(matches!(train_noisepu(&[], &va, &cfg), Err(Error::Input(_))));
    assert!(matches!(train_noisepu(&tr, &tr[..2], &cfg), Err(Error::Input(_))));
    let mut unlabeled = tr.clone();
    unlabeled[0].external_label = None;
    assert!(matches!(train_regcon(&unlabeled, &va, &tiny(TrainConfig::regcon())), Err(Error::Input(_))));
    assert!(matches!(train_regcon(&tr, &va, &cfg), Err(Error::Config { .. })));
    let neg = TrainConfig { alpha: -1.0, ..cfg.clone() };
    assert!(matches!(train_noisepu(&tr, &va, &neg), Err(Error::Config { .. })));
    let mu = TrainConfig { smoothing: 1.0, ..tiny(TrainConfig::regcon()) };
    assert!(matches!(train_regcon(&tr, &va, &mu), Err(Error::Config { .. })));
    let none = TrainConfig { branches: Branches { pu: false, noise: false }, ..cfg };
    assert!(matches!(train_noisepu(&tr, &va, &none), Err(Error::Config { .. })));
}

#[test]
fn divergence_aborts_with_epoch() {
    let (tr, va) = data(8, 4);
    let mut cfg = tiny(TrainConfig::regcon());
    cfg.optimizer.lr = 1e300;
    cfg.optimizer.weight_decay = 0.0;
    match train_regcon(&tr, &va, &cfg) {
        Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn batch_indices_cycle_and_truncate() {
    let order: Vec<usize> = (0..5).collect();
    assert_eq!(batch_indices(&order, 3, 2, 2), vec![4]);
    assert_eq!(batch_indices(&order, 4, 3, 2), vec![1, 2]);
    assert_eq!(batch_indices(&order, 4, 2, 2), vec![4, 0]);
}

#[test]
fn noisepu_epoch_covers_longest_stream() {
    let (tr, va) = data(10, 4);
    let cfg = tiny(TrainConfig::noisepu());
    let t = Trainer::new(&cfg, &tr, &va).unwrap();
    let unlabeled = tr.iter().filter(|o| o.pu_label == 1).count();
    assert_eq!(t.steps_per_epoch(), (unlabeled * 3).div_ceil(4));
}

#[test]
fn symmetric_zero_params_score_one_half() {
    let (tr, _) = data(6, 1);
    let mut p = init_params(&tiny_config(CellKind::GatedSimple)).unwrap();
    p.values.iter_mut().for_each(|v| *v = 0.0);
    for s in predict(&p, &tr, Head::Main).unwrap() {
        assert_eq!(s, 0.5);
    }
    for o in &tr {
        assert!(saliency(&p, o, Head::Main).unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn scores_are_probabilities_and_saliency_is_normalized() {
    let (tr, _) = data(10, 1);
    let p = init_params(&tiny_config(CellKind::FullLstm)).unwrap();
    for head in Head::ALL {
        assert!(predict(&p, &tr, head).unwrap().iter().all(|s| (0.0..=1.0).contains(s)));
    }
    for o in &tr {
        let m = saliency(&p, o, Head::Noise).unwrap();
        assert_eq!(m.len(), o.tau * o.profile_len);
        assert!(m.iter().all(|&v| v >= 0.0));
        assert_eq!(m.iter().cloned().fold(0.0, f64::max), 1.0);
    }
}

#[test]
fn predict_rejects_missing_head_and_shapes() {
    let (tr, _) = data(3, 1);
    let m = ModelConfig { heads: vec![Head::Main], ..tiny_config(CellKind::GatedSimple) };
    let p = init_params(&m).unwrap();
    assert!(matches!(predict(&p, &tr, Head::Pu), Err(Error::Config { .. })));
    let mut bad = tr[0].clone();
    bad.tau = 3;
    assert!(matches!(predict(&p, &[bad], Head::Main), Err(Error::Shape { .. })));
}

#[test]
fn noisepu_scores_multiply_enabled_heads() {
    let (tr, _) = data(6, 1);
    let cfg = tiny(TrainConfig::noisepu());
    let p = init_params(&cfg.model).unwrap();
    let pu = predict(&p, &tr, Head::Pu).unwrap();
    let noise = predict(&p, &tr, Head::Noise).unwrap();
    let joint = scheme_scores(&p, &tr, &cfg).unwrap();
    for i in 0..tr.len() {
        assert_eq!(joint[i], pu[i] * noise[i]);
    }
    let only = TrainConfig { branches: Branches { pu: false, noise: true }, ..cfg };
    assert_eq!(scheme_scores(&p, &tr, &only).unwrap(), noise);
}

#[test]
fn history_csv_has_one_row_per_epoch() {
    let (tr, va) = data(8, 4);
    let out = train_noisepu(&tr, &va, &tiny(TrainConfig::noisepu())).unwrap();
    let csv = out.history.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv.lines().filter(|l| l.ends_with(",1")).count(), 1);
}

#[test]
fn default_configs_validate() {
    for s in [Scheme::Noisepu, Scheme::Regcon, Scheme::Plain] {
        let c = TrainConfig::for_scheme(s);
        c.validate().unwrap();
        assert_eq!(c.scheme, s);
        assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
    }
    let n = TrainConfig::noisepu();
    assert_eq!((n.optimizer.lr, n.optimizer.momentum, n.epochs, n.batch_size, n.alpha, n.k), (8.9e-4, 0.9, 30, 16, 1.0, 2));
    assert_eq!(n.scheduler, LrSchedule::Step { step_size: 5, gamma: 0.5 });
    let r = TrainConfig::regcon();
    assert_eq!((r.optimizer.lr, r.optimizer.weight_decay, r.epochs, r.batch_size, r.alpha, r.beta), (0.002, 0.1, 120, 48, 1.0, 1.0));
    assert_eq!(r.split, [0.7, 0.1, 0.2]);
}

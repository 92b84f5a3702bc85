use dcr_core::curriculum::{ScheduleKind, ScheduleSpec, VisibilityMask, ACTION_FRAMES};
use dcr_core::dataset::{Dataset, DatasetLayout, GrammarSpec, Split};
use dcr_core::engine::{
    epoch_order, evaluate, order_metrics, pretrain_model, run_ablation, run_training, tau_sweep, train_model,
    training_mask, Model, TrainConfig, Variant,
};
use dcr_core::reasoners::ReasonerConfig;
use dcr_core::DcrError;

fn data(segments: usize, seed: u64) -> (Dataset, Dataset) {
    let spec = GrammarSpec {
        train_segments: segments,
        val_segments: segments / 2,
        ..GrammarSpec::desk(seed)
    };
    let layout = DatasetLayout::desk();
    (
        Dataset::synthetic(&spec, &layout, Split::Train).unwrap(),
        Dataset::synthetic(&spec, &layout, Split::Val).unwrap(),
    )
}

fn tiny(dim: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        reasoner: ReasonerConfig::transformer(dim, 16, 1, 2),
        pretrain_epochs: 2,
        pretrain_batch_size: 16,
        train_epochs: epochs,
        batch_size: 16,
        warmup_epochs: 1,
        lr: 3e-3,
        ..TrainConfig::desk(dim)
    }
}

#[test]
fn easiness_starts_at_one_and_only_falls() {
    let (train, val) = data(48, 1);
    let out = run_training::<f32>(&tiny(64, 6), &train, Some(&val)).unwrap();
    let mut by_id = std::collections::BTreeMap::<String, Vec<(usize, f64)>>::new();
    for r in &out.trace {
        by_id.entry(r.instance_id.clone()).or_default().push((r.epoch, r.t));
    }
    assert_eq!(by_id.len(), train.len());
    for rows in by_id.values() {
        assert_eq!(rows.len(), 6);
        for &(epoch, t) in rows {
            if epoch <= 2 {
                assert_eq!(t, 1.0);
            }
        }
        for w in rows.windows(2) {
            assert!(w[1].1 <= w[0].1);
            assert!(w[1].1 >= w[0].1 * 0.95 - 1e-12);
        }
    }
}

#[test]
fn training_is_reproducible_from_the_seed() {
    let (train, val) = data(40, 2);
    let cfg = tiny(64, 3);
    let a = run_training::<f32>(&cfg, &train, Some(&val)).unwrap();
    let b = run_training::<f32>(&cfg, &train, Some(&val)).unwrap();
    assert_eq!(a.log.without_timing(), b.log.without_timing());
    assert_eq!(a.model.flat_values(), b.model.flat_values());
    assert_eq!(a.trace, b.trace);
    let c = run_training::<f32>(&TrainConfig { seed: 1, ..cfg }, &train, Some(&val)).unwrap();
    assert_ne!(a.model.flat_values(), c.model.flat_values());
}

#[test]
fn training_lowers_the_loss() {
    let (train, _) = data(64, 3);
    let cfg = TrainConfig {
        pretrain_epochs: 0,
        schedule: ScheduleSpec::with_kind(ScheduleKind::Constant(0.0)),
        ..tiny(64, 8)
    };
    let out = run_training::<f32>(&cfg, &train, None).unwrap();
    let rows = out.log.rows();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.total.is_finite()));
    assert!(rows[7].total < rows[0].total, "{} -> {}", rows[0].total, rows[7].total);
}

#[test]
fn constant_zero_schedule_trains_on_test_time_masks() {
    let cfg = TrainConfig {
        schedule: ScheduleSpec::with_kind(ScheduleKind::Constant(0.0)),
        ..tiny(8, 4)
    };
    let eval = VisibilityMask::eval(18).unwrap();
    for epoch in 1..=4 {
        for id in ["a", "b", "c"] {
            let m = training_mask(&cfg, 18, 0.0, epoch, id).unwrap();
            assert_eq!(m.beta(), eval.beta());
        }
    }
    let one = training_mask(&cfg, 18, 1.0, 1, "a").unwrap();
    assert_eq!(one.visible_count(), 18 - ACTION_FRAMES);
}

#[test]
fn epoch_order_is_a_keyed_permutation() {
    let a = epoch_order(100, 5, 1);
    let mut sorted = a.clone();
    sorted.sort();
    assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    assert_eq!(a, epoch_order(100, 5, 1));
    assert_ne!(a, epoch_order(100, 5, 2));
    assert_ne!(a, epoch_order(100, 6, 1));
}

#[test]
fn untrained_model_scores_near_chance() {
    let (train, val) = data(600, 4);
    let cfg = tiny(64, 1);
    let heads = dcr_core::engine::head_config_for(&cfg, &train);
    let model: Model<f64> = Model::new(cfg.reasoner.clone(), Some(heads), 0).unwrap();
    let report = evaluate(&model, &val, 0).unwrap();
    let top1 = report.action().unwrap().top1;
    let counts = val.action_counts();
    let majority = *counts.iter().max().unwrap() as f64 / val.len() as f64;
    assert!(top1 <= majority + 0.05, "untrained top-1 {top1}, majority {majority}");
    assert_eq!(report.action().unwrap().count, val.len());
}

#[test]
fn saved_models_evaluate_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val) = data(40, 5);
    let out = run_training::<f32>(&tiny(64, 2), &train, Some(&val)).unwrap();
    let path = dir.path().join("model.dcrc");
    out.model.save(&path).unwrap();
    let back: Model<f32> = Model::load(&path).unwrap();
    assert!(back.order_pretrained);
    assert_eq!(evaluate(&out.model, &val, 0).unwrap(), evaluate(&back, &val, 0).unwrap());
    assert_eq!(out.report.unwrap(), evaluate(&back, &val, 0).unwrap());

    let sweep = tau_sweep(&back, &val).unwrap();
    assert_eq!(sweep.len(), 5);
}

#[test]
fn pretraining_logs_and_improves_position_accuracy() {
    let (train, _) = data(80, 6);
    let cfg = TrainConfig {
        pretrain_epochs: 6,
        pretrain_lr: 3e-3,
        ..tiny(64, 2)
    };
    let fresh: Model<f32> = Model::new(cfg.reasoner.clone(), None, cfg.seed).unwrap();
    let (loss0, _) = order_metrics(&fresh, &train, &cfg).unwrap();
    let pre = pretrain_model::<f32>(&cfg, &train).unwrap();
    assert!(pre.model.order_pretrained);
    assert_eq!(pre.log.rows().len(), 6);
    let (loss1, acc1) = order_metrics(&pre.model, &train, &cfg).unwrap();
    assert!(loss1 < loss0, "order loss {loss0} -> {loss1}");
    assert!((0.0..=1.0).contains(&acc1));
}

#[test]
fn non_finite_inputs_name_the_instance() {
    let (mut train, _) = data(30, 7);
    let bad = train.sequences[7].instance_id.clone();
    let last = train.sequences[7].len() - 1;
    let d = train.sequences[7].dim();
    train.sequences[7].frames_mut()[last * d] = f32::NAN;
    let cfg = TrainConfig {
        pretrain_epochs: 0,
        batch_size: 8,
        ..tiny(64, 2)
    };
    match run_training::<f64>(&cfg, &train, None) {
        Err(DcrError::NonFiniteLoss { instance_id, .. }) => assert_eq!(instance_id, bad),
        other => panic!("expected a non-finite loss error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn lstm_reasoner_trains() {
    let (train, val) = data(40, 8);
    let cfg = TrainConfig {
        train_epochs: 3,
        warmup_epochs: 1,
        batch_size: 16,
        ..TrainConfig::desk(64).with_lstm()
    };
    let cfg = TrainConfig {
        reasoner: ReasonerConfig::lstm(64, 16),
        ..cfg
    };
    let out = run_training::<f32>(&cfg, &train, Some(&val)).unwrap();
    assert!(out.log.rows().iter().all(|r| r.total.is_finite()));
    assert!(!out.model.order_pretrained);
    assert!(out.report.is_some());
}

#[test]
fn ablation_reports_every_variant() {
    let (train, val) = data(32, 9);
    let suite = [Variant::Dcr, Variant::Te0, Variant::Classification, Variant::NoPretrain];
    let mut seen = Vec::new();
    let mut observe = |v: Variant, seed: u64, out: &dcr_core::engine::TrainOutcome<f32>| {
        seen.push((v, seed, out.model.order_pretrained));
    };
    let table = run_ablation(&suite, &train, &val, &tiny(64, 2), &[0, 1], Some(&mut observe)).unwrap();
    assert_eq!(table.runs.len(), 8);
    for v in suite {
        let row = table.row(v).unwrap();
        assert_eq!(row.seeds, 2);
        assert!((0.0..=1.0).contains(&row.top1));
    }
    assert!(seen.contains(&(Variant::Dcr, 1, true)));
    assert!(seen.contains(&(Variant::NoPretrain, 0, false)));
    assert!(seen.contains(&(Variant::Classification, 0, false)));
    let md = table.to_markdown();
    assert!(md.contains("DCR") && md.contains("T_e = 0"));

    let pre = pretrain_model::<f32>(&tiny(64, 2), &train).unwrap();
    let a = train_model(&Variant::Dcr.config(&tiny(64, 2)), Some(&pre), &train, Some(&val)).unwrap();
    assert_eq!(a.log.rows().len(), 4);
}

use dcr_core::curriculum::{VisibilityMask, FUTURE_FRAMES};
use dcr_core::engine::Model;
use dcr_core::objectives::{reconstruction_loss_graph, smoothed_ce_graph, HeadConfig, HeadInput, ReconstructionForm};
use dcr_core::reasoners::{
    impute_masked, load_checkpoint, lstm_forward, save_checkpoint, transformer_forward, FeatureSequence, Reasoner,
    ReasonerConfig,
};
use dcr_core::rng::keyed;
use dcr_tensor::{finite_diff_check_params, Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_sequence(seed: u64, k: usize, d: usize) -> FeatureSequence {
    let mut rng = keyed(seed, "test-frames", 0, "");
    let frames = (0..k * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    FeatureSequence::new(format!("seq-{seed}"), frames, d, 0, None, None).unwrap()
}

fn transformer(d: usize, latent: usize, layers: usize) -> (Reasoner, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let r = Reasoner::new(
        ReasonerConfig::transformer(d, latent, layers, 4),
        &mut store,
        &mut keyed(7, "init", 0, ""),
    )
    .unwrap();
    (r, store)
}

fn lstm(d: usize, latent: usize) -> (Reasoner, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let r = Reasoner::new(ReasonerConfig::lstm(d, latent), &mut store, &mut keyed(7, "init", 0, "")).unwrap();
    (r, store)
}

/// Overwrites every masked row with fresh random values.
fn scramble_masked(seq: &FeatureSequence, mask: &VisibilityMask, seed: u64) -> FeatureSequence {
    let mut rng = keyed(seed, "scramble", 0, "");
    let d = seq.dim();
    let mut frames = seq.frames().to_vec();
    for r in 0..seq.len() {
        if !mask.visible(r) {
            for v in &mut frames[r * d..(r + 1) * d] {
                *v = rng.random_range(-50.0f32..50.0);
            }
        }
    }
    FeatureSequence::new(seq.instance_id.clone(), frames, d, 0, None, None).unwrap()
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn transformer_output_shapes() {
    let (r, store) = transformer(8, 32, 2);
    let seq = random_sequence(1, 12, 8);
    let out = transformer_forward(&r, &store, &seq, &VisibilityMask::pretrain(12).unwrap(), false).unwrap();
    assert_eq!(out.z.shape(), &[12, 8]);
    assert_eq!(out.latent_tokens.shape(), &[12, 32]);
}

#[test]
fn sequence_longer_than_positional_table_is_rejected() {
    let mut cfg = ReasonerConfig::transformer(4, 16, 1, 2);
    cfg.max_len = 10;
    let mut store = ParamStore::<f64>::new();
    let r = Reasoner::new(cfg, &mut store, &mut keyed(0, "init", 0, "")).unwrap();
    let seq = random_sequence(0, 12, 4);
    assert!(transformer_forward(&r, &store, &seq, &VisibilityMask::eval(12).unwrap(), true).is_err());
}

#[test]
fn swapping_frames_without_positions_swaps_tokens() {
    let (r, store) = transformer(8, 32, 2);
    let seq = random_sequence(2, 12, 8);
    let (i, j) = (3, 9);
    let mut frames = seq.frames().to_vec();
    for c in 0..8 {
        frames.swap(i * 8 + c, j * 8 + c);
    }
    let swapped = FeatureSequence::new("swapped", frames, 8, 0, None, None).unwrap();
    let mask = VisibilityMask::pretrain(12).unwrap();
    let a = transformer_forward(&r, &store, &seq, &mask, false).unwrap();
    let b = transformer_forward(&r, &store, &swapped, &mask, false).unwrap();
    for row in 0..12 {
        let src = if row == i { j } else if row == j { i } else { row };
        for (x, y) in a.latent_tokens.row(src).iter().zip(b.latent_tokens.row(row)) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.z.row(src).iter().zip(b.z.row(row)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn masked_frame_five_does_not_leak() {
    let (r, store) = transformer(8, 32, 2);
    let seq = random_sequence(3, 12, 8);
    let mask = VisibilityMask::train_from_gap(12, [false, true, true, true]).unwrap();
    let scrambled = scramble_masked(&seq, &mask, 11);
    for positional in [false, true] {
        let a = transformer_forward(&r, &store, &seq, &mask, positional).unwrap();
        let b = transformer_forward(&r, &store, &scrambled, &mask, positional).unwrap();
        assert!(max_abs_diff(&a.z, &b.z) <= 1e-6);
        assert!(max_abs_diff(&a.latent_tokens, &b.latent_tokens) <= 1e-6);
    }
}

#[test]
fn lstm_copy_forward_chain_in_eval_layout() {
    let (r, _) = lstm(6, 16);
    let seq = random_sequence(4, 14, 6);
    let mask = VisibilityMask::eval(14).unwrap();
    let input: Tensor<f64> = r.prepare_input(&[&seq], &[&mask]).unwrap();
    let source = input.row(FUTURE_FRAMES).to_vec();
    for row in 0..FUTURE_FRAMES {
        assert_eq!(input.row(row), &source[..], "row {row} must copy frame 9");
    }
    for row in FUTURE_FRAMES..14 {
        let expect: Vec<f64> = seq.frame(row).iter().map(|&v| v as f64).collect();
        assert_eq!(input.row(row), &expect[..]);
    }
    let all = VisibilityMask::pretrain(14).unwrap();
    let same: Tensor<f64> = r.prepare_input(&[&seq], &[&all]).unwrap();
    let expect: Vec<f64> = seq.frames().iter().map(|&v| v as f64).collect();
    assert_eq!(same.data(), &expect[..]);
}

#[test]
fn lstm_ignores_masked_frame_three() {
    let (r, store) = lstm(6, 16);
    let seq = random_sequence(5, 14, 6);
    let mask = VisibilityMask::train_from_gap(14, [true, false, true, false]).unwrap();
    let scrambled = scramble_masked(&seq, &mask, 12);
    let a = lstm_forward(&r, &store, &seq, &mask).unwrap();
    let b = lstm_forward(&r, &store, &scrambled, &mask).unwrap();
    assert!(max_abs_diff(&a.z, &b.z) <= 1e-6);
    assert!(max_abs_diff(&a.latent_tokens, &b.latent_tokens) <= 1e-6);
}

#[test]
fn architecture_specific_entry_points_reject_the_other() {
    let (t, ts) = transformer(4, 16, 1);
    let (l, ls) = lstm(4, 16);
    let seq = random_sequence(6, 10, 4);
    let mask = VisibilityMask::eval(10).unwrap();
    assert!(lstm_forward(&t, &ts, &seq, &mask).is_err());
    assert!(transformer_forward(&l, &ls, &seq, &mask, true).is_err());
}

/// Full DCR loss for one instance through a 2-layer transformer.
#[test]
fn full_loss_gradients_match_finite_differences() {
    let (k, d, latent) = (12, 8, 32);
    let mut store = ParamStore::<f64>::new();
    let mut init = keyed(3, "init", 0, "");
    let reasoner = Reasoner::new(ReasonerConfig::transformer(d, latent, 2, 4), &mut store, &mut init).unwrap();
    let heads = dcr_core::objectives::HeadSet::new(
        HeadConfig {
            input: HeadInput::Reconstruction,
            input_dim: d,
            actions: 5,
            verb_noun: None,
        },
        &mut store,
        &mut init,
    )
    .unwrap();
    let seq = random_sequence(8, k, d);
    let mask = VisibilityMask::train_from_gap(k, [true, false, false, true]).unwrap();
    let err = finite_diff_check_params(
        |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.constant(reasoner.prepare_input(&[&seq], &[&mask]).unwrap());
            let out = reasoner.forward(g, s, x, k, true, None).unwrap();
            let rows = g.gather_rows(out.z, &[0, 1, 2, 3])?;
            let logits = heads.forward(g, s, rows).unwrap();
            let ce = smoothed_ce_graph(g, logits.action, &[2; 4], &[1.0, 0.5, 2.0, 1.0, 1.0], 0.2).unwrap();
            let target = g.constant(Tensor::new(vec![k, d], seq.frames().iter().map(|&v| v as f64).collect())?);
            let rec = reconstruction_loss_graph(g, out.z, target, &mask.hidden_weights(), ReconstructionForm::L2)
                .unwrap();
            let ce = g.scale(ce, 0.5);
            g.add(ce, rec)
        },
        &mut store,
        1e-5,
        6,
    )
    .unwrap();
    assert!(err < 1e-3, "relative gradient error {err:e}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dcrc");
    let heads = HeadConfig {
        input: HeadInput::Reconstruction,
        input_dim: 6,
        actions: 4,
        verb_noun: Some((2, 3)),
    };
    let model: Model<f32> = Model::new(ReasonerConfig::transformer(6, 16, 2, 4), Some(heads.clone()), 9).unwrap();
    model.save(&path).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.header.heads, Some(heads));
    assert!(!ck.header.order_pretrained);
    let back: Model<f32> = Model::load(&path).unwrap();
    let bits = |m: &Model<f32>| -> Vec<u32> {
        m.store.iter().flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&model), bits(&back));

    // The raw store round-trips too, with the pre-training flag.
    save_checkpoint(&path, &model.reasoner.config, None, true, &model.store).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert!(ck.header.order_pretrained);
    assert_eq!(ck.store.len(), model.store.len());
}

proptest! {
    #[test]
    fn imputation_copies_nearest_earlier_visible(
        beta in prop::collection::vec(any::<bool>(), 1..20).prop_filter("one visible", |b| b.iter().any(|&x| x)),
        seed in 0u64..1000,
    ) {
        let k = beta.len();
        let d = 3;
        let mut rng = keyed(seed, "impute", 0, "");
        let frames: Vec<f32> = (0..k * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let last_visible = beta.iter().rposition(|&b| b).unwrap();
        let result = impute_masked(&frames, d, &beta);
        if last_visible < k - 1 {
            // Rows after the earliest frame have nothing earlier to copy.
            prop_assert!(result.is_err());
            return Ok(());
        }
        let out = result.unwrap();
        for i in 0..k {
            let src = (i..k).find(|&j| beta[j]).unwrap();
            prop_assert_eq!(&out[i * d..(i + 1) * d], &frames[src * d..(src + 1) * d]);
        }
    }
}

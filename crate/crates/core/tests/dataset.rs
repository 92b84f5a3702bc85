use dcr_core::curriculum::{ACTION_FRAMES, FUTURE_FRAMES};
use dcr_core::dataset::{
    assemble_window, decode_stream, encode_stream, generate_synthetic, read_feature_file, write_feature_file,
    Dataset, DatasetLayout, FeatureStream, GrammarSpec, Split,
};
use dcr_core::rng::keyed;
use dcr_core::DcrError;
use proptest::prelude::*;
use rand::Rng;

fn small_spec(seed: u64, segments: usize) -> GrammarSpec {
    GrammarSpec {
        train_segments: segments,
        val_segments: segments / 4,
        ..GrammarSpec::desk(seed)
    }
}

fn cosine(a: &[f32], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, y)| x as f64 * y).sum();
    let na = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn generation_is_a_pure_function_of_spec_and_seed() {
    let spec = small_spec(4, 200);
    let layout = DatasetLayout::desk();
    let (a, ma) = generate_synthetic(&spec, &layout, Split::Train).unwrap();
    let (b, mb) = generate_synthetic(&spec, &layout, Split::Train).unwrap();
    assert_eq!(encode_stream(&a), encode_stream(&b));
    assert_eq!(ma, mb);
    let (v, _) = generate_synthetic(&spec, &layout, Split::Val).unwrap();
    assert_ne!(a.frames()[..64], v.frames()[..64], "splits draw from separate streams");
    let (c, _) = generate_synthetic(&small_spec(5, 200), &layout, Split::Train).unwrap();
    assert_ne!(encode_stream(&a), encode_stream(&c));
}

#[test]
fn labels_are_valid_pairs() {
    let spec = small_spec(1, 500);
    let (_, m) = generate_synthetic(&spec, &DatasetLayout::desk(), Split::Train).unwrap();
    assert_eq!(m.segments.len(), 500);
    for s in &m.segments {
        let pair = spec.actions[s.action];
        assert_eq!((s.verb, s.noun), (Some(pair.verb), Some(pair.noun)));
    }
}

#[test]
fn empirical_transitions_match_the_grammar() {
    let spec = small_spec(2, 60_000);
    let (_, m) = generate_synthetic(&spec, &DatasetLayout::desk(), Split::Train).unwrap();
    let n = spec.n_actions();
    let mut counts = vec![vec![0usize; n]; n];
    for w in m.segments.windows(2) {
        counts[w[0].action][w[1].action] += 1;
    }
    for (i, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        assert!(total > 0);
        for (j, &c) in row.iter().enumerate() {
            let freq = c as f64 / total as f64;
            assert!(
                (freq - spec.transition[i][j]).abs() <= 0.02,
                "P({j}|{i}) = {} vs empirical {freq}",
                spec.transition[i][j]
            );
        }
    }
}

#[test]
fn bayes_top1_from_transitions_matches_brute_force() {
    let spec = small_spec(3, 20_000);
    let (_, m) = generate_synthetic(&spec, &DatasetLayout::desk(), Split::Train).unwrap();
    let argmax = |row: &[f64]| {
        let mut best = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        best
    };
    let pairs: Vec<(usize, usize)> = m.segments.windows(2).map(|w| (w[0].action, w[1].action)).collect();
    let hits = pairs.iter().filter(|(a, b)| argmax(&spec.transition[*a]) == *b).count();
    let brute = hits as f64 / pairs.len() as f64;
    let n = spec.n_actions();
    let mut prior = vec![0.0; n];
    for (a, _) in &pairs {
        prior[*a] += 1.0 / pairs.len() as f64;
    }
    let analytic: f64 = (0..n)
        .map(|i| prior[i] * spec.transition[i].iter().cloned().fold(0.0, f64::max))
        .sum();
    assert!((brute - analytic).abs() < 0.015, "brute force {brute} vs {analytic}");
}

#[test]
fn noise_free_frames_follow_their_prototype() {
    let spec = GrammarSpec {
        noise: 0.0,
        ramp: 0,
        ..small_spec(6, 50)
    };
    let (stream, m) = generate_synthetic(&spec, &DatasetLayout::desk(), Split::Train).unwrap();
    for (i, seg) in m.segments.iter().enumerate() {
        let end = m.segments.get(i + 1).map_or(stream.frame_count(), |s| s.start_frame);
        for t in seg.start_frame..end {
            let c = cosine(stream.frame(t), &spec.prototypes[seg.action]);
            assert!((c - 1.0).abs() < 1e-6, "frame {t} cosine {c}");
        }
    }
}

#[test]
fn identity_grammar_is_solved_by_nearest_prototype() {
    let n = 12;
    let spec = GrammarSpec {
        transition: (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        ..small_spec(7, 300)
    };
    let layout = DatasetLayout::desk();
    let data = Dataset::synthetic(&spec, &layout, Split::Train).unwrap();
    let mut hits = 0;
    for seq in &data.sequences {
        let d = seq.dim();
        let mut mean = vec![0.0f32; d];
        for r in FUTURE_FRAMES..seq.len() {
            for (m, v) in mean.iter_mut().zip(seq.frame(r)) {
                *m += v;
            }
        }
        let best = (0..n)
            .max_by(|&a, &b| {
                cosine(&mean, &spec.prototypes[a])
                    .partial_cmp(&cosine(&mean, &spec.prototypes[b]))
                    .unwrap()
            })
            .unwrap();
        hits += usize::from(best == seq.action);
    }
    assert_eq!(hits, data.len());
}

#[test]
fn gap_frames_point_at_the_next_action_more_than_the_observation() {
    let spec = small_spec(8, 1000);
    let data = Dataset::synthetic(&spec, &DatasetLayout::desk(), Split::Train).unwrap();
    let (mut gap, mut obs) = (0.0, 0.0);
    let (mut ng, mut no) = (0usize, 0usize);
    for seq in &data.sequences {
        let proto = &spec.prototypes[seq.action];
        for r in ACTION_FRAMES..seq.len() {
            let c = cosine(seq.frame(r), proto);
            if r < FUTURE_FRAMES {
                gap += c;
                ng += 1;
            } else {
                obs += c;
                no += 1;
            }
        }
    }
    let (gap, obs) = (gap / ng as f64, obs / no as f64);
    assert!(gap > obs + 0.1, "gap {gap} vs observation {obs}");
}

#[test]
fn feature_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(9, 40);
    let (stream, manifest) = generate_synthetic(&spec, &DatasetLayout::desk(), Split::Val).unwrap();
    let path = dir.path().join("val.dcrf");
    write_feature_file(&stream, &manifest, &path).unwrap();
    let (s2, m2) = read_feature_file(&path).unwrap();
    assert_eq!(m2, manifest);
    assert_eq!(encode_stream(&s2), encode_stream(&stream));

    let empty = FeatureStream::new(16, 4, Vec::new()).unwrap();
    let bytes = encode_stream(&empty);
    assert_eq!(decode_stream(&bytes, &path).unwrap(), empty);

    let mut rng = keyed(0, "file", 0, "");
    let random = FeatureStream::new(16, 4, (0..100 * 16).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect()).unwrap();
    let back = decode_stream(&encode_stream(&random), &path).unwrap();
    let bits = |s: &FeatureStream| s.frames().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&random));
}

#[test]
fn corrupt_files_give_structured_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.dcrf");
    let stream = FeatureStream::new(2, 4, vec![1.0; 10]).unwrap();
    let mut bytes = encode_stream(&stream);
    bytes[0] = b'X';
    assert!(matches!(decode_stream(&bytes, &path), Err(DcrError::BadMagic { .. })));
    let mut bytes = encode_stream(&stream);
    bytes[4] = 9;
    assert!(matches!(
        decode_stream(&bytes, &path),
        Err(DcrError::UnsupportedVersion { version: 9, .. })
    ));
    let bytes = encode_stream(&stream);
    assert!(matches!(
        decode_stream(&bytes[..bytes.len() - 4], &path),
        Err(DcrError::Truncated { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn windows_unreverse_to_contiguous_slices(seed in 0u64..500, pick in 0usize..30) {
        let spec = small_spec(seed, 30);
        let layout = DatasetLayout::desk();
        let (stream, m) = generate_synthetic(&spec, &layout, Split::Train).unwrap();
        let seg = &m.segments[pick];
        let seq = assemble_window(&stream, seg, &layout).unwrap().unwrap();
        let k = layout.k();
        let first = seg.start_frame + ACTION_FRAMES - k;
        let d = stream.dim();
        let mut chrono = Vec::with_capacity(k * d);
        for r in (0..k).rev() {
            chrono.extend_from_slice(seq.frame(r));
        }
        prop_assert_eq!(&chrono[..], &stream.frames()[first * d..(seg.start_frame + ACTION_FRAMES) * d]);
        prop_assert_eq!(seq.frame(ACTION_FRAMES - 1), stream.frame(seg.start_frame));
    }
}

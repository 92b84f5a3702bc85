use dcr_core::order_pretrain::{gaussian_affinity, order_loss, order_loss_graph, position_accuracy};
use dcr_core::reasoners::sinusoidal_table;
use dcr_core::rng::keyed;
use dcr_tensor::{finite_diff_check, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_tensor(seed: u64, rows: usize, cols: usize) -> Tensor<f64> {
    let mut rng = keyed(seed, "order-test", 0, "");
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn table(k: usize, l: usize) -> Tensor<f64> {
    Tensor::new(vec![k, l], sinusoidal_table(k, l)).unwrap()
}

/// Direct evaluation: mean over tokens of `-sum_j y_ij log softmax_j(cos / t)`.
fn naive_loss(tokens: &Tensor<f64>, table: &Tensor<f64>, k: usize, sigma: f64, t: f64) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let rows = tokens.dims2().0;
    let mut total = 0.0;
    for r in 0..rows {
        let i = r % k;
        let logits: Vec<f64> = (0..k).map(|j| cos(tokens.row(r), table.row(j)) / t).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let y: Vec<f64> = (0..k).map(|j| (-((i as f64 - j as f64).powi(2)) / (sigma * sigma)).exp()).collect();
        let ys: f64 = y.iter().sum();
        total -= (0..k).map(|j| y[j] / ys * (logits[j] - lse)).sum::<f64>();
    }
    total / rows as f64
}

#[test]
fn loss_matches_a_direct_evaluation() {
    for (k, sigma, t) in [(8, 5.0, 0.05), (16, 2.0, 0.5), (5, 1.0, 1.0)] {
        let tokens = random_tensor(k as u64, 3 * k, 12);
        let pe = table(k + 4, 12);
        let labels = gaussian_affinity(k, sigma).unwrap();
        let got = order_loss(&tokens, &pe, &labels, t).unwrap();
        let want = naive_loss(&tokens, &pe, k, sigma, t);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let labels = gaussian_affinity(6, 5.0).unwrap();
    let pe = table(6, 8);
    for seed in 0..5 {
        let tokens = random_tensor(seed, 12, 8);
        let err = finite_diff_check(
            |g, x| {
                let p = g.constant(pe.clone());
                order_loss_graph(g, x, p, &labels, 0.2).map_err(|e| panic!("{e}"))
            },
            &tokens,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "tokens, seed {seed}: {err:e}");
        let err = finite_diff_check(
            |g, p| {
                let x = g.constant(tokens.clone());
                order_loss_graph(g, x, p, &labels, 0.2).map_err(|e| panic!("{e}"))
            },
            &pe,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "table, seed {seed}: {err:e}");
    }
}

#[test]
fn aligned_tokens_are_perfect_and_random_tokens_are_at_chance() {
    let k = 16;
    let pe = table(k, 32);
    let mut aligned = Vec::new();
    for _ in 0..3 {
        aligned.extend_from_slice(pe.data());
    }
    let aligned = Tensor::new(vec![3 * k, 32], aligned).unwrap();
    assert_eq!(position_accuracy(&aligned, &pe, k).unwrap(), 1.0);

    let random = random_tensor(99, 2000 * k, 32);
    let acc = position_accuracy(&random, &pe, k).unwrap();
    assert!((acc - 1.0 / k as f64).abs() < 0.01, "random accuracy {acc}");
}

#[test]
fn aligned_tokens_beat_shuffled_tokens() {
    let k = 12;
    let pe = table(k, 24);
    let labels = gaussian_affinity(k, 5.0).unwrap();
    let aligned = order_loss(&pe, &pe, &labels, 0.05).unwrap();
    let mut reversed = Vec::new();
    for i in (0..k).rev() {
        reversed.extend_from_slice(pe.row(i));
    }
    let reversed = Tensor::new(vec![k, 24], reversed).unwrap();
    assert!(aligned < order_loss(&reversed, &pe, &labels, 0.05).unwrap());
}

proptest! {
    #[test]
    fn loss_ignores_the_order_of_instances(seed in any::<u64>(), b in 2usize..5) {
        let k = 8;
        let tokens = random_tensor(seed, b * k, 6);
        let pe = table(k, 6);
        let labels = gaussian_affinity(k, 5.0).unwrap();
        let mut swapped = Vec::new();
        for inst in (0..b).rev() {
            swapped.extend_from_slice(&tokens.data()[inst * k * 6..(inst + 1) * k * 6]);
        }
        let swapped = Tensor::new(vec![b * k, 6], swapped).unwrap();
        let a = order_loss(&tokens, &pe, &labels, 0.1).unwrap();
        let c = order_loss(&swapped, &pe, &labels, 0.1).unwrap();
        prop_assert!((a - c).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn loss_is_scale_invariant_in_tokens(seed in any::<u64>(), s in 0.01f64..100.0) {
        let k = 6;
        let tokens = random_tensor(seed, 2 * k, 5);
        let scaled = Tensor::new(vec![2 * k, 5], tokens.data().iter().map(|v| v * s).collect()).unwrap();
        let pe = table(k, 5);
        let labels = gaussian_affinity(k, 5.0).unwrap();
        let a = order_loss(&tokens, &pe, &labels, 0.05).unwrap();
        let c = order_loss(&scaled, &pe, &labels, 0.05).unwrap();
        prop_assert!((a - c).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

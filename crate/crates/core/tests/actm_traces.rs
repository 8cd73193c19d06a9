use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stann::actm::{attend_with, halting_walk, DEFAULT_KAPPA};

#[test]
fn hand_traced_walks() {
    assert_eq!(halting_walk(|_| 0.995, 10, DEFAULT_KAPPA, 64), vec![1.0]);

    // 1 - 0.4 = 0.6, 0.6 - 0.4 = 0.2 ≤ 0.4 + κ so the residual 0.2 closes.
    let w = halting_walk(|_| 0.4, 10, DEFAULT_KAPPA, 64);
    assert_eq!(w.len(), 3);
    assert_eq!(w[..2], [0.4, 0.4]);
    assert!((w[2] - 0.2).abs() < 1e-15);

    assert_eq!(halting_walk(|_| 0.4, 2, DEFAULT_KAPPA, 64), vec![0.4, 0.6]);
}

#[test]
fn weights_form_a_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for call in 0..1000 {
        let available = rng.random_range(1..80);
        let max_lag = rng.random_range(1..70);
        let kappa = rng.random_range(1e-4..0.49);
        let probs: Vec<f64> = (0..available).map(|_| rng.random_range(0.0..1.0)).collect();
        let w = halting_walk(|k| probs[k], available, kappa, max_lag);
        assert!(
            !w.is_empty() && w.len() <= available.min(max_lag),
            "call {call}"
        );
        assert!(w.iter().all(|&v| v >= 0.0), "call {call}: {w:?}");
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12, "call {call}: sum {total}");
    }
}

#[test]
fn combined_state_is_the_weighted_history() {
    let history: [&[f64]; 3] = [&[1.0, -2.0], &[3.0, 0.5], &[10.0, 10.0]];
    let r = attend_with(&history, |_| 0.4, DEFAULT_KAPPA, 64);
    assert_eq!(r.order, 3);
    let want0 = 0.4 * 1.0 + 0.4 * 3.0 + r.weights[2] * 10.0;
    let want1 = 0.4 * -2.0 + 0.4 * 0.5 + r.weights[2] * 10.0;
    assert!((r.combined[0] - want0).abs() < 1e-12);
    assert!((r.combined[1] - want1).abs() < 1e-12);
}

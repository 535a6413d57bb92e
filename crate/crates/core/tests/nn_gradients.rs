mod common;

use common::{check_gradients, FD_REL_TOL};
use implicit_sampling::nn::{Adam, Matrix, Mode, NeuralNet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn backward_matches_central_differences_on_random_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let (mut compared, mut skipped, mut norm) = (0, 0, 0);
    for _ in 0..150 {
        let c = check_gradients(&mut rng);
        worst = worst.max(c.max_rel_err);
        compared += c.compared;
        skipped += c.skipped;
        norm += c.norm_params_compared;
    }
    assert!(worst <= FD_REL_TOL, "max relative error {worst:e}");
    assert!(norm > 500, "only {norm} normalization parameters compared");
    assert!(
        skipped * 20 < compared,
        "{skipped} kinks vs {compared} compared"
    );
}

#[test]
fn stale_cache_is_rejected_after_a_parameter_change() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = NeuralNet::mlp(2, &[3], 1, &mut rng).unwrap();
    let x = Matrix::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.5], vec![1.0, -1.0]]).unwrap();
    let (_, cache) = net.forward_batch_stats(&x).unwrap();
    let p = net.params();
    net.set_params(&p).unwrap();
    assert!(net.backward(&cache, &Matrix::zeros(3, 1)).is_err());
}

#[test]
fn adam_descends_a_quadratic() {
    // f(w) = sum (w_i - 1)^2 over all parameters of a tiny net.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = NeuralNet::mlp(1, &[2], 1, &mut rng).unwrap();
    let mut opt = Adam::new(net.param_count(), 0.05);
    let loss = |p: &[f64]| p.iter().map(|w| (w - 1.0) * (w - 1.0)).sum::<f64>();
    let start = loss(&net.params());
    for _ in 0..300 {
        let g: Vec<f64> = net.params().iter().map(|w| 2.0 * (w - 1.0)).collect();
        opt.step_net(&mut net, &g).unwrap();
    }
    let end = loss(&net.params());
    assert!(end < 1e-3 * start.max(1.0), "{start} -> {end}");
}

#[test]
fn training_forward_moves_running_statistics_toward_batch_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = NeuralNet::mlp(1, &[4], 1, &mut rng).unwrap();
    let x = Matrix::from_rows(&[vec![5.0], vec![6.0], vec![7.0], vec![8.0]]).unwrap();
    let before = net.infer(&x).unwrap();
    for _ in 0..2000 {
        net.forward(&x, Mode::Train).unwrap();
    }
    let (train_out, _) = net.forward_batch_stats(&x).unwrap();
    let after = net.infer(&x).unwrap();
    assert_ne!(before, after);
    // Inference uses the unbiased variance, so outputs agree only closely.
    for (a, b) in after.data.iter().zip(&train_out.data) {
        assert!((a - b).abs() < 0.2 * b.abs().max(1.0), "{a} vs {b}");
    }
}

mod common;

use marked_ratio::net::{
    from_binary, log_softmax_rows, param_count, to_binary, with_pinned_class, LabeledBatch, NetConfig, RatioNetwork,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_batch(rng: &mut ChaCha8Rng, n: usize, in_dim: usize, classes: usize) -> LabeledBatch {
    let features = Array2::from_shape_fn((n, in_dim), |_| StandardNormal.sample(rng));
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    LabeledBatch::new(features, labels).unwrap()
}

#[test]
fn joint_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = RatioNetwork::init(NetConfig::new(3, 7, 2, 6), 1).unwrap();
    let batch = random_batch(&mut rng, 32, 3, 8);
    let (_, grad) = net.loss_and_grad(&batch, true).unwrap();
    let mut probe = net.clone();
    let fd = common::central_gradient(
        |p| {
            probe.set_flat_params(p).unwrap();
            probe.loss(&batch, true).unwrap()
        },
        &net.flat_params(),
        1e-6,
    );
    assert!(common::relative_error(&grad.flat(), &fd) < 1e-4);
}

#[test]
fn unpinned_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = RatioNetwork::init(NetConfig::new(2, 3, 1, 5), 2).unwrap();
    let batch = random_batch(&mut rng, 16, 2, 3);
    let (_, grad) = net.loss_and_grad(&batch, false).unwrap();
    let mut probe = net.clone();
    let fd = common::central_gradient(
        |p| {
            probe.set_flat_params(p).unwrap();
            probe.loss(&batch, false).unwrap()
        },
        &net.flat_params(),
        1e-6,
    );
    assert!(common::relative_error(&grad.flat(), &fd) < 1e-4);
}

#[test]
fn default_shape_parameter_counts() {
    assert_eq!(param_count(&NetConfig::new(3, 7, 8, 64)), 33_991);
    assert_eq!(param_count(&NetConfig::new(2, 3, 8, 64)), 33_667);
    assert_eq!(param_count(&NetConfig::new(1, 1, 8, 64)), 33_473);
    assert_eq!(RatioNetwork::init(NetConfig::new(3, 7, 8, 64), 0).unwrap().num_parameters(), 33_991);
}

#[test]
fn checkpoint_preserves_predictions() {
    let net = RatioNetwork::init(NetConfig::new(3, 7, 3, 16), 9).unwrap();
    let back = from_binary(&to_binary(&net)).unwrap();
    let x = Array2::from_shape_fn((10, 3), |(r, c)| (r as f64 - 4.0) * 0.3 + c as f64);
    assert_eq!(net.forward_batch(x.view()).unwrap(), back.forward_batch(x.view()).unwrap());
    let mut corrupt = to_binary(&net);
    corrupt.truncate(corrupt.len() - 3);
    assert!(from_binary(&corrupt).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pinned_log_probs_normalize(logits in prop::collection::vec(-30.0f64..30.0, 7)) {
        let row = Array2::from_shape_vec((1, 7), logits).unwrap();
        let lp = log_softmax_rows(with_pinned_class(row, true).view());
        prop_assert_eq!(lp.ncols(), 8);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_forward_matches_single_rows(seed in 0u64..500, layers in 1usize..4, width in 1usize..10) {
        let net = RatioNetwork::init(NetConfig::new(3, 4, layers, width), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((5, 3), |_| StandardNormal.sample(&mut rng));
        let batch = net.forward_batch(x.view()).unwrap();
        for r in 0..5 {
            let single = net.forward(&x.row(r).to_vec()).unwrap();
            for c in 0..4 {
                prop_assert!((single[c] - batch[[r, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_is_nonnegative_and_finite(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = RatioNetwork::init(NetConfig::new(2, 3, 2, 8), seed).unwrap();
        let batch = random_batch(&mut rng, 20, 2, 4);
        let loss = net.loss(&batch, true).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
    }
}

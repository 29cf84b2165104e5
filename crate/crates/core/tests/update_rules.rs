mod common;

use std::time::Instant;

use common::oracles::{ema_error, fifo_error, memory_error, random, tiny_encoder};
use metadg::autodiff::Tensor;
use metadg::jury::JuryQueues;
use metadg::memory::MemoryBank;
use metadg::model::momentum_update;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-7;

#[test]
fn memory_update_matches_direct_arithmetic() {
    let start = Instant::now();
    for seed in 0..3 {
        for (m, renorm) in [(0.2, false), (0.2, true), (0.7, false), (1.0, false)] {
            let e = memory_error(m, renorm, seed);
            assert!(e <= TOL, "m={m} renorm={renorm} seed {seed}: {e:e}");
        }
    }
    assert!(start.elapsed().as_secs() < 10);
}

#[test]
fn memory_with_unit_momentum_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = random(&mut rng, 2, 3);
    let mut bank = MemoryBank::from_slots(vec![Tensor::from_rows(&init).unwrap()], 1.0, 0.1, false).unwrap();
    bank.update(&Tensor::from_rows(&random(&mut rng, 4, 3)).unwrap(), &[0, 1, 1, 0], 0).unwrap();
    for (c, row) in init.iter().enumerate() {
        assert_eq!(bank.slot(0, c), row.as_slice());
    }
}

#[test]
fn key_ema_matches_direct_arithmetic() {
    for lambda in [0.999, 0.5, 0.0, 1.0] {
        let e = ema_error(lambda);
        assert!(e <= TOL, "lambda {lambda}: {e:e}");
    }
}

#[test]
fn key_ema_with_unit_momentum_is_a_fixed_point() {
    let mut key = tiny_encoder(1);
    let before = key.clone();
    for s in 0..10 {
        momentum_update(&mut key, &tiny_encoder(50 + s), 1.0).unwrap();
    }
    assert_eq!(key, before);
}

#[test]
fn jury_queues_are_per_class_fifo() {
    for seed in 0..3 {
        assert!(fifo_error(seed) <= TOL);
    }
}

#[test]
fn rejected_enqueue_leaves_queues_untouched() {
    let mut q = JuryQueues::init(2, 3, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let before = q.clone();
    let feats = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert!(q.enqueue(&feats, &[0, 5]).is_err());
    assert_eq!(q, before);
}

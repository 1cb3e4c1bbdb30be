mod common;

use proptest::{prop_assert, proptest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssdiff::metrics;

use common::{oracles, random_image};

#[test]
fn identical_images_score_ideally() {
    common::check_metric_identity(6).unwrap();
}

#[test]
fn metrics_match_direct_loop_oracles() {
    common::check_metric_oracles(12).unwrap();
}

proptest! {
    #[test]
    fn sam_and_ergas_are_non_negative_and_symmetric_in_scale(seed in 0u64..10_000, k in 0.5f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_image(&mut rng, 4, 8, 8, 0.1, 1.0);
        let pred = random_image(&mut rng, 4, 8, 8, 0.1, 1.0);
        let s = metrics::sam(&pred, &gt).unwrap();
        prop_assert!(s >= 0.0 && s <= 90.0);
        // SAM ignores a global gain on the prediction.
        prop_assert!((metrics::sam(&pred.scale(k), &gt).unwrap() - s).abs() < 1e-9);
        prop_assert!(metrics::ergas(&pred, &gt, 4.0).unwrap() >= 0.0);
    }

    #[test]
    fn q2n_and_scc_stay_in_range_and_match_oracles(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_image(&mut rng, 8, 8, 8, 0.1, 1.0);
        let pred = random_image(&mut rng, 8, 8, 8, 0.1, 1.0);
        let q = metrics::q2n(&pred, &gt, 4).unwrap();
        let c = metrics::scc(&pred, &gt).unwrap();
        prop_assert!(q <= 1.0 + 1e-12 && c.abs() <= 1.0 + 1e-12);
        prop_assert!((q - oracles::q2n(&pred, &gt, 4)).abs() < 1e-9);
        prop_assert!((c - oracles::scc(&pred, &gt)).abs() < 1e-9);
    }
}

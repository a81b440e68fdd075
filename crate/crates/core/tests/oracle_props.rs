use proptest::prelude::*;

use sd_probe::metrics::{analyze_layer, channel_correlations, Precision};
use sd_probe::oracle::{brute_force_correlations, generate_synthetic_activations, PlantConfig, PlantCounts};
use sd_probe::{Execution, Factor, Seed};

fn plant(static_: usize, dynamic: usize, joint: usize, residual: usize) -> PlantCounts {
    PlantCounts { static_, dynamic, joint, residual }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn static_plus_dynamic_stays_within_budget(seed in any::<u64>(), sigma in 0.0f64..0.5) {
        let cfg = PlantConfig { plant: plant(3, 3, 3, 3), n_pairs: 4096, noise_sigma: sigma, seed: Seed(seed) };
        let layer = generate_synthetic_activations(&cfg, "l", Execution::default()).unwrap();
        let s = channel_correlations(layer.get(Factor::Static)).unwrap();
        let d = channel_correlations(layer.get(Factor::Dynamic)).unwrap();
        for (a, b) in s.s.iter().zip(&d.s) {
            prop_assert!(a + b <= 1.05, "{a} + {b}");
        }
    }

    #[test]
    fn static_dominated_layers_rank_static_first(seed in any::<u64>(), n_static in 20usize..40, n_dynamic in 0usize..10) {
        let cfg = PlantConfig { plant: plant(n_static, n_dynamic, 0, 5), n_pairs: 1024, noise_sigma: 0.2, seed: Seed(seed) };
        let layer = generate_synthetic_activations(&cfg, "l", Execution::default()).unwrap();
        let a = analyze_layer(&layer.refs(), Precision::Streaming, Execution::default()).unwrap();
        prop_assert!(a.bias.units.static_ > a.bias.units.dynamic);
    }

    #[test]
    fn streaming_matches_brute_force(seed in any::<u64>(), n_pairs in 2usize..1500) {
        let cfg = PlantConfig { plant: plant(2, 2, 2, 2), n_pairs, noise_sigma: 0.3, seed: Seed(seed) };
        let layer = generate_synthetic_activations(&cfg, "l", Execution::default()).unwrap();
        for f in Factor::ALL {
            let fast = channel_correlations(layer.get(f)).unwrap();
            let slow = brute_force_correlations(layer.get(f)).unwrap();
            prop_assert_eq!(&fast.degenerate, &slow.degenerate);
            for (x, y) in fast.s.iter().zip(&slow.s) {
                prop_assert!((x - y).abs() <= 1e-10, "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn generation_ignores_the_schedule(seed in any::<u64>()) {
        let cfg = PlantConfig { plant: plant(4, 4, 4, 4), n_pairs: 700, noise_sigma: 0.1, seed: Seed(seed) };
        let a = generate_synthetic_activations(&cfg, "l", Execution::Sequential).unwrap();
        let b = generate_synthetic_activations(&cfg, "l", Execution::Parallel).unwrap();
        prop_assert_eq!(a, b);
    }
}

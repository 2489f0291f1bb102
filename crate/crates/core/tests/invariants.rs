use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ctf_rpu::crossbar::{CrossbarArray, PulsePlan, UpdateCycle};
use ctf_rpu::device_model::{DeviceModel, Direction};
use ctf_rpu::rl_suite::{MountainCar, MountainCarState, TileCoder};
use ctf_rpu::trainer::{mlp, softmax, Backend, Network};

fn small_array(weights: &[f64], noise: f64) -> CrossbarArray {
    let device = Arc::new(DeviceModel::published_bounded(noise));
    CrossbarArray::from_weights(2, 3, 6.0, device, weights).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pulses_never_leave_the_window(
        seed in any::<u64>(),
        noise in 0.0..5.0f64,
        start in -0.315..-0.115f64,
        ups in prop::collection::vec(any::<bool>(), 1..400),
    ) {
        let device = DeviceModel::published_bounded(noise);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = start;
        for up in ups {
            let dir = if up { Direction::Potentiate } else { Direction::Depress };
            g = device.apply_pulse(g, dir, &mut rng).unwrap();
            prop_assert!(device.contains(g));
        }
    }

    #[test]
    fn noiseless_pulses_move_the_right_way(start in -0.3..-0.12f64) {
        let device = DeviceModel::published_bounded(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let up = device.apply_pulse(start, Direction::Potentiate, &mut rng).unwrap();
        let down = device.apply_pulse(start, Direction::Depress, &mut rng).unwrap();
        prop_assert!(up > start && down < start);
    }

    #[test]
    fn update_cells_stay_in_window_and_respect_signs(
        seed in any::<u64>(),
        x in prop::collection::vec(0.0..1.0f64, 3),
        delta in prop::collection::vec(-1.0..1.0f64, 2),
        noise in 0.0..3.0f64,
    ) {
        let mut arr = small_array(&[0.0; 6], noise);
        let before = arr.cells().to_vec();
        let plan = PulsePlan::new(10, 1.5, UpdateCycle::Positive).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        arr.stochastic_update(&x, &delta, &plan, &mut rng).unwrap();
        for (idx, (a, b)) in before.iter().zip(arr.cells()).enumerate() {
            prop_assert!(arr.device().contains(b.g1) && arr.device().contains(b.g2));
            // only the device selected by the gradient sign may change
            if delta[idx / 3] < 0.0 {
                prop_assert_eq!(a.g2, b.g2);
            } else {
                prop_assert_eq!(a.g1, b.g1);
            }
        }
    }

    #[test]
    fn same_seed_same_update(seed in any::<u64>(), d in -1.0..1.0f64) {
        let plan = PulsePlan::new(10, 1.0, UpdateCycle::Positive).unwrap();
        let run = || {
            let mut arr = small_array(&[0.1, -0.2, 0.0, 0.3, 0.0, -0.1], 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            arr.stochastic_update(&[0.5, 0.2, 0.9], &[d, -d], &plan, &mut rng).unwrap();
            arr.read_weights()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn from_weights_round_trips(w in prop::collection::vec(-0.5..0.5f64, 6)) {
        let arr = small_array(&w, 0.0);
        for (a, b) in arr.read_weights().iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_linear_in_input(
        w in prop::collection::vec(-0.5..0.5f64, 6),
        x in prop::collection::vec(-1.0..1.0f64, 3),
        s in -3.0..3.0f64,
    ) {
        let arr = small_array(&w, 0.0);
        let y = arr.forward(&x).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
        let ys = arr.forward(&xs).unwrap();
        for (a, b) in y.iter().zip(&ys) {
            prop_assert!((a * s - b).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-50.0..50.0f64, 1..12)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn float_backend_is_deterministic_per_seed(seed in any::<u64>()) {
        let backend = Backend::Float { learning_rate: 0.05 };
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Network::new(mlp(&[4, 6, 3]), &backend, true, &mut rng).unwrap();
            net.train_sample(&[0.1, 0.5, 0.9, 0.0], 2, &mut rng).unwrap();
            (0..2).map(|l| net.read_weights(l)).collect::<Vec<_>>()
        };
        prop_assert_eq!(make(), make());
    }

    #[test]
    fn every_state_gets_sixteen_tiles(
        p in -1.2..=0.6f64,
        v in -0.07..=0.07f64,
    ) {
        let mut coder = TileCoder::mountain_car();
        let tiles = coder.encode_state(&MountainCarState { position: p, velocity: v }).unwrap();
        let mut uniq = tiles.clone();
        uniq.sort_unstable();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), 16);
        prop_assert_eq!(tiles.clone(), coder.encode_state(&MountainCarState { position: p, velocity: v }).unwrap());
    }

    #[test]
    fn mountain_car_stays_in_bounds(seed in any::<u64>(), actions in prop::collection::vec(0usize..3, 1..300)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = MountainCar::reset(&mut rng);
        for a in actions {
            if env.is_done() {
                break;
            }
            let t = env.step(ctf_rpu::rl_suite::Action::from_index(a).unwrap()).unwrap();
            prop_assert!(t.state.in_bounds());
            prop_assert_eq!(t.reward, -1.0);
        }
    }
}

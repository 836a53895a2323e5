use proptest::prelude::*;
use robust_boost::{build_incorrect_pairs, Dataset, Example, FiniteDistribution, Norm, PerturbationBall};

fn norm_strategy() -> impl Strategy<Value = Norm> {
    prop_oneof![Just(Norm::L2), Just(Norm::LInf)]
}

proptest! {
    #[test]
    fn pair_count_is_m_times_k_minus_one(m in 1usize..=20, k in 2usize..=10, seed in any::<u64>()) {
        let examples = (0..m).map(|i| Example::new(vec![i as f64], ((seed >> (i % 60)) as usize + i) % k)).collect();
        let ds = Dataset::new(examples, k).unwrap();
        let pairs = build_incorrect_pairs(&ds);
        prop_assert_eq!(pairs.len(), m * (k - 1));
        for p in pairs.pairs() {
            prop_assert_ne!(p.wrong, ds.example(p.example).y);
        }
    }

    #[test]
    fn projection_is_idempotent(norm in norm_strategy(), delta in 0.0f64..3.0, z in prop::collection::vec(-10.0f64..10.0, 1..6)) {
        let ball = PerturbationBall::new(norm, delta).unwrap();
        let once = ball.project(&z);
        prop_assert_eq!(ball.project(&once), once.clone());
        prop_assert!(norm.of(&once) <= delta + 1e-12);
    }

    #[test]
    fn projection_fixes_points_inside(norm in norm_strategy(), delta in 0.1f64..3.0, z in prop::collection::vec(-1.0f64..1.0, 1..6)) {
        let ball = PerturbationBall::new(norm, delta).unwrap();
        let scale = 0.99 * delta / norm.of(&z).max(1.0);
        let inside: Vec<f64> = z.iter().map(|v| v * scale).collect();
        prop_assert!(ball.contains(&inside));
        prop_assert_eq!(ball.project(&inside), inside);
    }

    #[test]
    fn distribution_serde_round_trip(raw in prop::collection::vec(0.0f64..1e6, 1..50)) {
        prop_assume!(raw.iter().any(|&w| w > 0.0));
        let dist = FiniteDistribution::normalize(&raw).unwrap();
        let text = serde_json::to_string(&dist).unwrap();
        let back: FiniteDistribution = serde_json::from_str(&text).unwrap();
        prop_assert!((back.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (a, b) in back.weights().iter().zip(dist.weights()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }
}

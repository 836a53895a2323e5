use proptest::prelude::*;
use rand::Rng;
use robust_boost::hypotheses::{Argmax, DecisionStump, LinearScorer, Mlp, UnilabelPredictor};
use robust_boost::losses::*;
use robust_boost::pgd::PgdConfig;
use robust_boost::{build_incorrect_pairs, Dataset, Example, FiniteDistribution, LabelSet, Norm, PerturbationBall, SeededRng};

/// A random hypothesis with an exact evaluator.
#[derive(Debug)]
enum Case {
    Stump(DecisionStump),
    Linear(LinearScorer),
}

impl Case {
    fn reach(&self, x: &[f64], ball: &PerturbationBall) -> LabelSet {
        match self {
            Case::Stump(s) => ExactStumpEvaluator.reach_set(s, x, ball).unwrap(),
            Case::Linear(f) => ExactLinearEvaluator.reach_set(f, x, ball).unwrap(),
        }
    }

    fn predict(&self, x: &[f64]) -> usize {
        match self {
            Case::Stump(s) => s.predict(x),
            Case::Linear(f) => Argmax(f.clone()).predict(x),
        }
    }

    fn pair_loss(&self, x: &[f64], y: usize, wrong: usize, ball: &PerturbationBall) -> i8 {
        match self {
            Case::Stump(s) => robust_pair_loss(s, &ExactStumpEvaluator, ball, x, y, wrong).unwrap(),
            Case::Linear(f) => robust_pair_loss(f, &ExactLinearEvaluator, ball, x, y, wrong).unwrap(),
        }
    }

    fn ova(&self, x: &[f64], y: usize, ball: &PerturbationBall) -> i8 {
        match self {
            Case::Stump(s) => ova_loss(s, &ExactStumpEvaluator, ball, x, y).unwrap(),
            Case::Linear(f) => ova_loss(f, &ExactLinearEvaluator, ball, x, y).unwrap(),
        }
    }
}

/// Hypothesis, input, label, wrong label and l-inf ball, all from one seed.
fn random_case(seed: u64) -> (Case, Vec<f64>, usize, usize, f64) {
    let mut g = SeededRng::new(seed, 11).generator();
    let d = g.random_range(1..=2);
    let (case, k) = if g.random_bool(0.5) {
        let k = g.random_range(2..=4);
        let s = DecisionStump::new(g.random_range(0..d), g.random_range(-1.0..1.0), g.random_range(0..k), g.random_range(0..k));
        (Case::Stump(s), k)
    } else {
        let k = g.random_range(2..=3);
        let w = (0..k).map(|_| (0..d).map(|_| g.random_range(-2.0..2.0)).collect()).collect();
        let b = (0..k).map(|_| g.random_range(-1.0..1.0)).collect();
        (Case::Linear(LinearScorer::new(w, b).unwrap()), k)
    };
    let x: Vec<f64> = (0..d).map(|_| g.random_range(-1.5..1.5)).collect();
    let y = g.random_range(0..k);
    let wrong = (y + g.random_range(1..k)) % k;
    (case, x, y, wrong, g.random_range(0.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pair_loss_is_dominated_by_ova(seed in any::<u64>()) {
        let (case, x, y, wrong, delta) = random_case(seed);
        let ball = PerturbationBall::linf(delta).unwrap();
        prop_assert!(case.pair_loss(&x, y, wrong, &ball) <= case.ova(&x, y, &ball));
    }

    #[test]
    fn zero_radius_gives_standard_losses(seed in any::<u64>()) {
        let (case, x, y, wrong, _) = random_case(seed);
        let ball = PerturbationBall::linf(0.0).unwrap();
        let clean = case.predict(&x);
        let standard = i8::from(clean == wrong) - i8::from(clean == y);
        prop_assert_eq!(case.pair_loss(&x, y, wrong, &ball), standard);
        prop_assert_eq!(case.ova(&x, y, &ball), if clean == y { -1 } else { 1 });
    }

    #[test]
    fn losses_grow_with_radius(seed in any::<u64>(), shrink in 0.0f64..1.0) {
        let (case, x, y, wrong, delta) = random_case(seed);
        let small = PerturbationBall::linf(delta * shrink).unwrap();
        let large = PerturbationBall::linf(delta).unwrap();
        prop_assert!(case.reach(&x, &small).is_subset_of(&case.reach(&x, &large)));
        prop_assert!(case.pair_loss(&x, y, wrong, &small) <= case.pair_loss(&x, y, wrong, &large));
        prop_assert!(case.ova(&x, y, &small) <= case.ova(&x, y, &large));
    }
}

fn random_dataset(g: &mut impl Rng, m: usize, k: usize, d: usize) -> Dataset {
    let examples = (0..m)
        .map(|_| Example::new((0..d).map(|_| g.random_range(-2.0..2.0)).collect(), g.random_range(0..k)))
        .collect();
    Dataset::new(examples, k).unwrap()
}

fn random_distribution(g: &mut impl Rng, n: usize) -> FiniteDistribution {
    let raw: Vec<f64> = (0..n).map(|_| g.random_range(0.0..1.0)).collect();
    FiniteDistribution::normalize(&raw).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weighted_errors_are_affine_and_bounded(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let mut g = SeededRng::new(seed, 12).generator();
        let k = g.random_range(2..=4);
        let m = g.random_range(1..=12);
        let ds = random_dataset(&mut g, m, k, 1);
        let pairs = build_incorrect_pairs(&ds);
        let ball = PerturbationBall::linf(g.random_range(0.0..0.8)).unwrap();
        let h = DecisionStump::new(0, g.random_range(-2.0..2.0), g.random_range(0..k), g.random_range(0..k));
        let (d1, d2) = (random_distribution(&mut g, pairs.len()), random_distribution(&mut g, pairs.len()));
        let mixed = d1.mix(&d2, lambda).unwrap();
        let err = |d: &FiniteDistribution| weighted_err_delta(&h, &ExactStumpEvaluator, &ball, &ds, &pairs, d).unwrap().value;
        let expected = lambda * err(&d1) + (1.0 - lambda) * err(&d2);
        prop_assert!((err(&mixed) - expected).abs() <= 1e-12);
        for v in [err(&d1), err(&d2), err(&mixed)] {
            prop_assert!((-1.0..=1.0).contains(&v));
        }

        let (e1, e2) = (random_distribution(&mut g, ds.len()), random_distribution(&mut g, ds.len()));
        let ova = |d: &FiniteDistribution| weighted_err_ova(&h, &ExactStumpEvaluator, &ball, &ds, d).unwrap().value;
        let mixed = e1.mix(&e2, lambda).unwrap();
        prop_assert!((ova(&mixed) - (lambda * ova(&e1) + (1.0 - lambda) * ova(&e2))).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ova(&mixed)));
    }

    #[test]
    fn tilde_hypothesis_reproduces_robust_loss(seed in any::<u64>()) {
        let mut g = SeededRng::new(seed, 13).generator();
        let k = g.random_range(2..=4);
        let m = g.random_range(1..=8);
        let ds = random_dataset(&mut g, m, k, 2);
        let ball = PerturbationBall::linf(g.random_range(0.0..1.0)).unwrap();
        let h = DecisionStump::new(g.random_range(0..2), g.random_range(-2.0..2.0), g.random_range(0..k), g.random_range(0..k));
        let tilde = TildeHypothesis::materialize(&h, &ExactStumpEvaluator, &ball, &ds).unwrap();
        for p in build_incorrect_pairs(&ds).pairs() {
            let ex = ds.example(p.example);
            prop_assert_eq!(
                base_loss(&tilde, &ex.x, ex.y, p.wrong).unwrap(),
                robust_pair_loss(&h, &ExactStumpEvaluator, &ball, &ex.x, ex.y, p.wrong).unwrap()
            );
        }
    }

    #[test]
    fn pgd_successes_lie_in_exact_binary_reach_set(seed in any::<u64>(), l2 in any::<bool>()) {
        let mut g = SeededRng::new(seed, 14).generator();
        let d = g.random_range(1..=6);
        let w = (0..2).map(|_| (0..d).map(|_| g.random_range(-1.0..1.0)).collect()).collect();
        let f = LinearScorer::new(w, vec![g.random_range(-0.5..0.5), 0.0]).unwrap();
        let x: Vec<f64> = (0..d).map(|_| g.random_range(-1.0..1.0)).collect();
        let norm = if l2 { Norm::L2 } else { Norm::LInf };
        let ball = PerturbationBall::new(norm, g.random_range(0.0..1.0)).unwrap();
        let h = Argmax(f);
        let found = PgdEvaluator { config: PgdConfig::evaluation(2, SeededRng::new(seed, 15)) }.reach_set(&h, &x, &ball).unwrap();
        let exact = ExactLinearEvaluator.reach_set(&h, &x, &ball).unwrap();
        prop_assert!(found.is_subset_of(&exact), "{:?} vs {:?}", found, exact);
    }
}

/// Largest cross-entropy over the grid points: a lower bound on the supremum
/// that sees every misclassification the grid sees.
fn grid_ce<F: robust_boost::hypotheses::ScorePredictor>(f: &F, grid: &[Vec<f64>], x: &[f64], y: usize) -> f64 {
    grid.iter()
        .map(|z| {
            let xz: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + b).collect();
            ce_loss(&f.scores(&xz), y)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn cross_entropy_surrogate_bounds_ova(seed in any::<u64>()) {
        let mut g = SeededRng::new(seed, 16).generator();
        let d = g.random_range(1..=2);
        let k = g.random_range(2..=3);
        let f = Mlp::glorot(&[d, 6, k], SeededRng::new(seed, 17)).unwrap();
        let x: Vec<f64> = (0..d).map(|_| g.random_range(-1.0..1.0)).collect();
        let y = g.random_range(0..k);
        let ball = PerturbationBall::new(if g.random_bool(0.5) { Norm::L2 } else { Norm::LInf }, g.random_range(0.0..0.7)).unwrap();
        let grid = GridEvaluator::new(40);
        let lhs = f64::from(ova_loss(&Argmax(f.clone()), &grid, &ball, &x, y).unwrap());
        let pgd = robust_ce_loss(&f, &PgdConfig::evaluation(1, SeededRng::new(seed, 18)), &ball, &x, y).unwrap();
        let ce = pgd.max(grid_ce(&f, &grid.points(d, &ball).unwrap(), &x, y));
        prop_assert!(lhs <= 2.0 / std::f64::consts::LN_2 * ce - 1.0 + 1e-9, "lhs {} ce {}", lhs, ce);
    }
}

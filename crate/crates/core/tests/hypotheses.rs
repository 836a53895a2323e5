use proptest::prelude::*;
use rand::Rng;
use robust_boost::hypotheses::*;
use robust_boost::losses::{ce_loss, weighted_err_delta, ExactStumpEvaluator};
use robust_boost::{build_incorrect_pairs, Dataset, Example, FiniteDistribution, LabelSet, PerturbationBall, SeededRng};

/// `||a - b|| / (||a|| + ||b||)`, zero when both vanish.
fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a) + norm(b);
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn random_net(seed: u64) -> (Mlp, Vec<f64>, usize) {
    let mut g = SeededRng::new(seed, 21).generator();
    let d = g.random_range(1..=4);
    let mut sizes = vec![d];
    for _ in 0..g.random_range(1..=2) {
        sizes.push(g.random_range(1..=8));
    }
    let k = g.random_range(2..=4);
    sizes.push(k);
    let mut net = Mlp::glorot(&sizes, SeededRng::new(seed, 22)).unwrap();
    for p in net.params_mut() {
        *p += g.random_range(-0.3..0.3);
    }
    let x = (0..d).map(|_| g.random_range(-2.0..2.0)).collect();
    (net, x, g.random_range(0..k))
}

fn central_difference(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut up = at.to_vec();
            let mut down = at.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn mlp_gradients_match_finite_differences() {
    for seed in 0..100 {
        let (net, x, y) = random_net(seed);
        let (d_params, d_input) = net.backward(&x, y);
        let numeric_input = central_difference(|v| ce_loss(&net.forward(v), y), &x, 1e-6);
        assert!(relative_error(&d_input, &numeric_input) <= 1e-5, "seed {seed}: input gradient");
        let sizes = net.sizes().to_vec();
        let numeric_params = central_difference(
            |p| ce_loss(&Mlp::from_params(&sizes, p.to_vec()).unwrap().forward(&x), y),
            net.params(),
            1e-6,
        );
        assert!(relative_error(&d_params, &numeric_params) <= 1e-5, "seed {seed}: parameter gradient");
    }
}

#[test]
fn loss_decreases_along_negative_gradient() {
    for seed in 100..110 {
        let (mut net, x, y) = random_net(seed);
        let before = ce_loss(&net.forward(&x), y);
        let (grad, _) = net.backward(&x, y);
        for (p, g) in net.params_mut().iter_mut().zip(&grad) {
            *p -= 1e-4 * g;
        }
        assert!(ce_loss(&net.forward(&x), y) <= before, "seed {seed}");
    }
}

/// Labels seen on 10^4 evenly spaced points of `[x_j - delta, x_j + delta]`.
fn brute_reach(s: &DecisionStump, x: &[f64], delta: f64) -> LabelSet {
    let n = 10_000;
    let mut out = LabelSet::empty();
    let mut probe = x.to_vec();
    for i in 0..n {
        probe[s.feature] = if i == n - 1 {
            x[s.feature] + delta
        } else {
            x[s.feature] - delta + 2.0 * delta * i as f64 / (n - 1) as f64
        };
        out.insert(s.predict(&probe));
    }
    out
}

#[test]
fn stump_reach_set_matches_brute_force() {
    let mut g = SeededRng::new(5, 23).generator();
    for case in 0..10_000 {
        let d = g.random_range(1..=3);
        let k = g.random_range(2..=5);
        let s = DecisionStump::new(g.random_range(0..d), g.random_range(-1.0..1.0), g.random_range(0..k), g.random_range(0..k));
        let x: Vec<f64> = (0..d).map(|_| g.random_range(-1.5..1.5)).collect();
        let delta = g.random_range(0.0..1.0);
        let ball = PerturbationBall::linf(delta).unwrap();
        assert_eq!(s.reach_set(&x, &ball).unwrap(), brute_reach(&s, &x, delta), "case {case}");
    }
}

proptest! {
    #[test]
    fn plurality_vote_ignores_weight_scale(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut g = SeededRng::new(seed, 24).generator();
        let k = g.random_range(2..=4);
        let n = g.random_range(1..=6);
        let stumps: Vec<DecisionStump> = (0..n)
            .map(|_| DecisionStump::new(0, g.random_range(-1.0..1.0), g.random_range(0..k), g.random_range(0..k)))
            .collect();
        let raw: Vec<f64> = (0..n).map(|_| g.random_range(0.01..1.0)).collect();
        let scaled: Vec<f64> = raw.iter().map(|w| w * scale).collect();
        let q = MixtureQ::new(stumps.clone(), FiniteDistribution::normalize(&raw).unwrap(), k).unwrap();
        let q_scaled = MixtureQ::new(stumps, FiniteDistribution::normalize(&scaled).unwrap(), k).unwrap();
        for _ in 0..20 {
            let x = [g.random_range(-1.5..1.5)];
            prop_assert_eq!(q.plurality_vote(&x), q_scaled.plurality_vote(&x));
        }
    }

    #[test]
    fn stump_learner_beats_its_candidate_grid(seed in any::<u64>()) {
        let mut g = SeededRng::new(seed, 25).generator();
        let k = g.random_range(2..=3);
        let d = g.random_range(1..=2);
        let m = g.random_range(1..=7);
        let examples = (0..m)
            .map(|_| Example::new((0..d).map(|_| g.random_range(-2.0..2.0)).collect(), g.random_range(0..k)))
            .collect();
        let ds = Dataset::new(examples, k).unwrap();
        let pairs = build_incorrect_pairs(&ds);
        let raw: Vec<f64> = (0..pairs.len()).map(|_| g.random_range(0.0..1.0)).collect();
        let dist = FiniteDistribution::normalize(&raw).unwrap();
        let ball = PerturbationBall::linf(g.random_range(0.0..0.6)).unwrap();

        let (best, claimed) = train_stump_weak_learner(&ds, &pairs, &dist, &ball).unwrap();
        let err = |s: &DecisionStump| weighted_err_delta(s, &ExactStumpEvaluator, &ball, &ds, &pairs, &dist).unwrap().value;
        prop_assert!((err(&best) - claimed).abs() <= 1e-12);
        for s in StumpSearch::new(&ds, &ball).unwrap().candidates() {
            prop_assert!(claimed <= err(&s) + 1e-12, "{:?} beats {:?}", s, best);
        }
        // Off-grid thresholds cannot do better either.
        for _ in 0..200 {
            let s = DecisionStump::new(g.random_range(0..d), g.random_range(-3.0..3.0), g.random_range(0..k), g.random_range(0..k));
            prop_assert!(claimed <= err(&s) + 1e-12);
        }
    }
}

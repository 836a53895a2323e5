use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use robust_boost::certify::*;
use robust_boost::hypotheses::{DecisionStump, LinearScorer, MixtureQ, UnilabelPredictor};
use robust_boost::losses::{weighted_err_ova, ExactStumpEvaluator};
use robust_boost::pgd::PgdConfig;
use robust_boost::{Dataset, Example, FiniteDistribution, PerturbationBall, SeededRng};
use statrs::distribution::{ContinuousCDF, Normal};

fn phi(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

#[test]
fn quantile_round_trips_through_an_independent_cdf() {
    let n = 10_000;
    for i in 1..=n {
        let p = i as f64 / (n + 1) as f64;
        let q = gaussian_quantile(p).unwrap();
        assert!((phi(q) - p).abs() <= 1e-8, "p = {p}");
    }
    for p in [1e-300, 1e-100, 1e-20, 1e-10, 1e-5, 1.0 - 1e-10] {
        let q = gaussian_quantile(p).unwrap();
        assert!(((phi(q) - p) / p.min(1.0 - p)).abs() <= 1e-8, "p = {p}");
    }
}

proptest! {
    #[test]
    fn radius_is_monotone_in_the_top_two(p_top in 0.5f64..0.999, p_runner in 0.0005f64..0.5, up in 0.0f64..1.0, down in 0.0f64..1.0) {
        prop_assume!(p_top + p_runner < 1.0 && p_top > p_runner);
        let base = certified_radius(&[p_top, p_runner, 1.0 - p_top - p_runner], 0.7).unwrap();
        // Mass taken from the runner-up and the rest goes to the top class;
        // the rest never overtakes the runner-up.
        let rest = 1.0 - p_top - p_runner;
        prop_assume!(rest < p_runner);
        let lower = p_runner * (1.0 - down) + 1e-6 * down;
        let rest_after = (rest * (1.0 - up)).min(lower);
        let higher = 1.0 - lower - rest_after;
        let moved = certified_radius(&[higher, lower, rest_after], 0.7).unwrap();
        prop_assert!(moved.radius >= base.radius);
    }
}

fn random_binary(g: &mut impl Rng, d: usize) -> LinearScorer {
    let w = (0..2).map(|_| (0..d).map(|_| g.random_range(-1.0..1.0)).collect()).collect();
    LinearScorer::new(w, vec![g.random_range(-0.5..0.5), g.random_range(-0.5..0.5)]).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn smoothed_probabilities_match_the_probit_value() {
    let mut g = SeededRng::new(2, 51).generator();
    let mut pass = 0;
    let trials = 40;
    for t in 0..trials {
        let d = g.random_range(1..=5);
        let f = random_binary(&mut g, d);
        let x: Vec<f64> = (0..d).map(|_| g.random_range(-1.0..1.0)).collect();
        let sigma = g.random_range(0.1..1.0);
        let n = 4000;
        let probs = smooth_class_probs(&f, &x, &SmoothingConfig::new(sigma, n, SeededRng::new(t, 52))).unwrap();
        let w = f.binary_direction();
        let p1 = phi(f.binary_margin(&x) / (sigma * norm(&w)));
        let se = (p1 * (1.0 - p1) / n as f64).sqrt().max(1.0 / n as f64);
        if (probs[1] - p1).abs() <= 3.0 * se {
            pass += 1;
        }
    }
    assert!(pass as f64 >= 0.95 * trials as f64, "{pass}/{trials}");
}

#[test]
fn exact_probabilities_give_the_boundary_distance() {
    let mut g = SeededRng::new(3, 53).generator();
    for _ in 0..100 {
        let d = g.random_range(1..=6);
        let f = random_binary(&mut g, d);
        let x: Vec<f64> = (0..d).map(|_| g.random_range(-1.0..1.0)).collect();
        let distance = f.binary_margin(&x).abs() / norm(&f.binary_direction());
        let sigma = (distance / 4.0).max(0.05);
        let p1 = phi(f.binary_margin(&x) / (sigma * norm(&f.binary_direction())));
        let cert = certified_radius(&[1.0 - p1, p1], sigma).unwrap();
        assert!((cert.radius - distance).abs() <= 1e-6, "{} vs {distance}", cert.radius);
    }
}

/// A point uniformly on the sphere of radius `r`.
fn on_sphere(g: &mut impl Rng, d: usize, r: f64) -> Vec<f64> {
    let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(g)).collect();
    let n = norm(&u);
    u.into_iter().map(|v| v * r / n).collect()
}

#[test]
fn aggregate_radius_is_sound_under_probing() {
    let mut g = SeededRng::new(4, 54).generator();
    for case in 0..60 {
        let d = g.random_range(1..=3);
        let n = g.random_range(1..=7);
        let members: Vec<LinearRadiusPredictor> = (0..n).map(|_| LinearRadiusPredictor::new(random_binary(&mut g, d)).unwrap()).collect();
        let raw: Vec<f64> = (0..n).map(|_| g.random_range(0.05..1.0)).collect();
        let q = MixtureQ::new(members, FiniteDistribution::normalize(&raw).unwrap(), 2).unwrap();
        let x: Vec<f64> = (0..d).map(|_| g.random_range(-1.0..1.0)).collect();
        let agg = aggregate_radius(&q, &x).unwrap();
        let vote = |p: &[f64]| {
            let mut mass = [0.0; 2];
            for (w, h) in q.iter() {
                mass[h.label(p)] += w;
            }
            if mass[1] > mass[0] { 1 } else { 0 }
        };
        assert_eq!(vote(&x), agg.label);
        let r = agg.radius * (1.0 - 1e-6);
        for _ in 0..1000 {
            let z = on_sphere(&mut g, d, r);
            let p: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + b).collect();
            assert_eq!(vote(&p), agg.label, "case {case}");
        }
    }
}

fn brute_attack(s: &DecisionStump, x: &[f64], y: usize, delta: f64) -> bool {
    let n = 10_000;
    let mut probe = x.to_vec();
    (0..n).any(|i| {
        probe[s.feature] = if i == n - 1 {
            x[s.feature] + delta
        } else {
            x[s.feature] - delta + 2.0 * delta * i as f64 / (n - 1) as f64
        };
        s.predict(&probe) != y
    })
}

#[test]
fn exact_stump_checker_agrees_with_brute_force() {
    let mut g = SeededRng::new(5, 55).generator();
    for case in 0..1000 {
        let d = g.random_range(1..=3);
        let k = g.random_range(2..=4);
        let s = DecisionStump::new(g.random_range(0..d), g.random_range(-1.0..1.0), g.random_range(0..k), g.random_range(0..k));
        let x: Vec<f64> = (0..d).map(|_| g.random_range(-1.5..1.5)).collect();
        let y = g.random_range(0..k);
        let delta = g.random_range(0.0..1.0);
        let spec = CheckerSpec::exact(PerturbationBall::linf(delta).unwrap());
        let out = check(&s, &x, y, &spec).unwrap();
        assert_eq!(out.is_found(), brute_attack(&s, &x, y, delta), "case {case}");
        if let CheckOutcome::Found(z) = out {
            assert!(spec.ball.contains(&z));
            assert_ne!(s.predict(&x.iter().zip(&z).map(|(a, b)| a + b).collect::<Vec<_>>()), y);
        }
    }
}

#[test]
fn pgd_checker_sits_between_the_two_radii() {
    let mut g = SeededRng::new(6, 56).generator();
    let c = 2.0;
    for case in 0..300 {
        let d = g.random_range(1..=4);
        let f = random_binary(&mut g, d);
        let x: Vec<f64> = (0..d).map(|_| g.random_range(-1.0..1.0)).collect();
        let y = g.random_range(0..2);
        let delta = g.random_range(0.01..1.0);
        let ball = PerturbationBall::l2(delta).unwrap();
        let spec = CheckerSpec::pgd(c, ball, PgdConfig::evaluation(1, SeededRng::new(case, 57)));
        // Binary linear attack sets are half-spaces: the l2 distance decides.
        let distance = f.binary_margin(&x).abs() / norm(&f.binary_direction());
        let clean_wrong = f.clone().classifier().predict(&x) != y;
        let exists = |r: f64| clean_wrong || distance <= r;
        let found = check(&f, &x, y, &spec).unwrap().is_found();
        assert!(exists(delta) >= found, "case {case}");
        assert!(found >= exists(delta / c), "case {case}");
    }
}

#[test]
fn checker_weak_learner_matches_direct_enumeration() {
    let mut g = SeededRng::new(7, 58).generator();
    for case in 0..40 {
        let k = g.random_range(2..=3);
        let m = g.random_range(3..=12);
        let examples = (0..m).map(|_| Example::new(vec![g.random_range(-2.0..2.0)], g.random_range(0..k))).collect();
        let ds = Dataset::new(examples, k).unwrap();
        let raw: Vec<f64> = (0..m).map(|_| g.random_range(0.0..1.0)).collect();
        let dist = FiniteDistribution::normalize(&raw).unwrap();
        let ball = PerturbationBall::linf(g.random_range(0.0..0.5)).unwrap();
        let pool: Vec<DecisionStump> = (0..g.random_range(1..=50))
            .map(|_| DecisionStump::new(0, g.random_range(-2.0..2.0), g.random_range(0..k), g.random_range(0..k)))
            .collect();
        let gamma = g.random_range(0.05..0.6);

        let direct: Vec<f64> = pool
            .iter()
            .map(|h| weighted_err_ova(h, &ExactStumpEvaluator, &ball, &ds, &dist).unwrap().value)
            .collect();
        let expected = match direct.iter().position(|&e| e <= -gamma) {
            Some(index) => CheckerDecision::Learned { index, estimate: direct[index] },
            None => CheckerDecision::Certificate { estimates: direct.clone() },
        };
        let got = weak_learn_via_checker(&pool, &CheckerSpec::exact(ball), &ds, &dist, gamma).unwrap();
        match (&got, &expected) {
            (CheckerDecision::Learned { index: a, estimate: ea }, CheckerDecision::Learned { index: b, estimate: eb }) => {
                assert_eq!(a, b, "case {case}");
                assert!((ea - eb).abs() <= 1e-12);
            }
            (CheckerDecision::Certificate { estimates: a }, CheckerDecision::Certificate { estimates: b }) => {
                assert!(a.iter().zip(b).all(|(u, v)| (u - v).abs() <= 1e-12), "case {case}");
            }
            _ => panic!("case {case}: {got:?} vs {expected:?}"),
        }
    }
}

use rand::Rng;
use robust_boost::hypotheses::{Mlp, Parametric, ScorePredictor};
use robust_boost::pgd::PgdConfig;
use robust_boost::stagewise::*;
use robust_boost::synth::{Generator, SyntheticSpec};
use robust_boost::{Dataset, PerturbationBall, SeededRng};

fn blobs(m: usize, seed: u64) -> Dataset {
    SyntheticSpec {
        generator: Generator::GaussianBlobs,
        k: 3,
        d: 2,
        m,
        separation: 4.0,
        seed,
    }
    .generate()
    .unwrap()
    .dataset
}

fn small_config(delta: f64, offsets: OffsetMode) -> StagewiseConfig {
    StagewiseConfig {
        stages: 3,
        base_epochs: 1,
        eta_max: 0.05,
        batch_size: 16,
        ball: PerturbationBall::linf(delta).unwrap(),
        pgd: PgdConfig::training(SeededRng::new(3, 1)),
        hidden: vec![8],
        offsets,
        eval_restarts: 1,
        rng: SeededRng::new(3, 0),
        ..Default::default()
    }
}

#[test]
fn learning_rates_follow_the_cosine_formula_bit_for_bit() {
    for m in [1usize, 2, 7, 19, 1000] {
        let rates = stage_learning_rates(m, 0.3);
        assert_eq!(rates.len(), m);
        for (j, r) in rates.iter().enumerate() {
            let alpha = j as f64 / m as f64;
            assert_eq!(r.to_bits(), (0.5 * 0.3 * (1.0 + (alpha * std::f64::consts::PI).cos())).to_bits());
        }
    }
}

#[test]
fn epochs_double_per_stage() {
    for n1 in 1..=12 {
        for t in 1..=8 {
            let total: usize = (1..=t).map(|s| epochs_for_stage(s, n1)).sum();
            assert_eq!(total, ((1 << t) - 1) * n1);
        }
    }
}

#[test]
fn training_run_matches_schedule_and_offsets() {
    let ds = blobs(60, 1);
    let cfg = small_config(0.3, OffsetMode::Approximate);
    let out = run_stagewise(&ds, &cfg).unwrap();
    assert_eq!(out.ensemble.len(), 3);
    assert_eq!(out.epochs.len(), 1 + 2 + 4);
    for (t, rec) in out.stages.iter().enumerate() {
        assert_eq!(rec.epochs, 1 << t);
        assert_eq!(rec.updates, rec.epochs * ds.len().div_ceil(16));
        assert_eq!(rec.learning_rates, stage_learning_rates(rec.updates, 0.05));
        // Offsets are the previous ensemble's clean scores.
        let prior = out.ensemble.prefix(t);
        for (ex, o) in ds.examples().iter().zip(&rec.offsets) {
            let expected = prior.scores(&ex.x);
            assert!(expected.iter().zip(o).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
        // The approximation never looks at earlier stages off the data.
        assert_eq!(rec.prior_perturbed_evals, 0);
        assert_eq!(rec.prior_clean_evals, ds.len());
    }
}

#[test]
fn exact_mode_evaluates_earlier_stages_at_perturbed_points() {
    let ds = blobs(30, 2);
    let out = run_stagewise(&ds, &small_config(0.3, OffsetMode::Exact)).unwrap();
    assert_eq!(out.stages[0].prior_perturbed_evals, 0);
    assert!(out.stages[1..].iter().all(|s| s.prior_perturbed_evals > 0));
}

#[test]
fn zero_radius_equals_clean_training() {
    let ds = blobs(45, 4);
    let adversarial = run_stagewise(&ds, &small_config(0.0, OffsetMode::Approximate)).unwrap();
    let clean = run_stagewise(
        &ds,
        &StagewiseConfig {
            adversarial: false,
            ..small_config(0.0, OffsetMode::Approximate)
        },
    )
    .unwrap();
    for ((b1, f1), (b2, f2)) in adversarial.ensemble.stages().iter().zip(clean.ensemble.stages()) {
        assert_eq!(b1, b2);
        assert_eq!(f1.params(), f2.params());
    }
    let losses = |o: &StagewiseOutcome| o.epochs.iter().map(|e| (e.stage, e.epoch, e.lr, e.loss)).collect::<Vec<_>>();
    assert_eq!(losses(&adversarial), losses(&clean));
}

#[test]
fn runs_are_deterministic() {
    let ds = blobs(40, 5);
    let cfg = small_config(0.2, OffsetMode::Approximate);
    let a = run_stagewise(&ds, &cfg).unwrap();
    let b = run_stagewise(&ds, &cfg).unwrap();
    assert_eq!(a.ensemble, b.ensemble);
    let strip = |o: &StagewiseOutcome| {
        o.stages
            .iter()
            .map(|s| (s.beta, s.clean_accuracy, s.robust_accuracy, s.robust_loss))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn beta_and_weight_gradients_match_finite_differences() {
    let mut g = SeededRng::new(8, 0).generator();
    for case in 0..20 {
        let net = Mlp::glorot(&[2, 5, 3], SeededRng::new(case, 9)).unwrap();
        let xs: Vec<Vec<f64>> = (0..6).map(|_| vec![g.random_range(-2.0..2.0), g.random_range(-2.0..2.0)]).collect();
        let offsets: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| g.random_range(-1.0..1.0)).collect()).collect();
        // Odd cases average over three fixed noise draws per example.
        let draws = if case % 2 == 1 { 3 } else { 0 };
        let noise: Vec<Vec<Vec<f64>>> = (0..6)
            .map(|_| (0..draws).map(|_| vec![g.random_range(-0.3..0.3), g.random_range(-0.3..0.3)]).collect())
            .collect();
        let items: Vec<BatchItem> = xs
            .iter()
            .zip(&offsets)
            .zip(&noise)
            .enumerate()
            .map(|(i, ((x, o), e))| BatchItem {
                x,
                y: i % 3,
                offset: Offset::Fixed(o),
                rng: SeededRng::new(case, i as u64),
                noise: e,
            })
            .collect();
        let ball = PerturbationBall::linf(0.25).unwrap();
        let beta = g.random_range(0.2..1.5);
        let grad = stage_objective_grad(&items, beta, &net, &ball, Some(&PgdConfig::training(SeededRng::new(case, 1)))).unwrap();
        let frozen = &grad.perturbations;
        assert!(frozen.iter().all(|z| ball.contains(z)));

        let h = 1e-6;
        let at = |b: f64, n: &Mlp| stage_objective_at(&items, b, n, frozen).loss;
        let numeric_beta = (at(beta + h, &net) - at(beta - h, &net)) / (2.0 * h);
        assert!((numeric_beta - grad.d_beta).abs() <= 1e-4 * numeric_beta.abs().max(1.0), "case {case}");

        for p in 0..net.num_params() {
            let mut up = net.clone();
            let mut down = net.clone();
            up.params_mut()[p] += h;
            down.params_mut()[p] -= h;
            let numeric = (at(beta, &up) - at(beta, &down)) / (2.0 * h);
            assert!((numeric - grad.d_w[p]).abs() <= 1e-4 * numeric.abs().max(1.0), "case {case} param {p}");
        }
    }
}

#[test]
fn noisy_training_is_deterministic_and_differs_from_plain() {
    let ds = blobs(30, 6);
    let plain = small_config(0.2, OffsetMode::Approximate);
    let noisy = StagewiseConfig {
        noise: Some(NoiseConfig { sigma: 0.25, n_samples: 2 }),
        pgd: PgdConfig::smoothing(SeededRng::new(6, 1)),
        ..plain.clone()
    };
    let a = run_stagewise(&ds, &noisy).unwrap();
    assert_eq!(a.ensemble, run_stagewise(&ds, &noisy).unwrap().ensemble);
    assert_ne!(a.ensemble, run_stagewise(&ds, &plain).unwrap().ensemble);
    let bad = StagewiseConfig {
        noise: Some(NoiseConfig { sigma: 0.0, n_samples: 2 }),
        ..plain
    };
    assert!(run_stagewise(&ds, &bad).is_err());
}

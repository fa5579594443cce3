use gbmds::smc::conjugate::{GaussianMeanTarget, ReferenceIsPosterior};
use gbmds::smc::{run_asmc, run_asmc_fixed, stream_rng, SmcConfig};
use rand::Rng;
use rand_distr::StandardNormal;

fn conjugate(n: usize, noise_var: f64) -> GaussianMeanTarget {
    let mut rng = stream_rng(41, 0, 0, 0);
    let obs = (0..n)
        .map(|_| 1.5 + noise_var.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    GaussianMeanTarget::new(obs, noise_var, 0.0, 4.0).unwrap()
}

#[test]
fn fixed_schedule_evidence_is_unbiased() {
    // The evidence estimate itself (not its log) is unbiased for any
    // schedule, even with few particles.
    let target = conjugate(15, 2.0);
    let exact = target.log_evidence();
    let schedule = [0.0, 0.01, 0.05, 0.2, 0.5, 1.0];
    let ratios: Vec<f64> = (0..200)
        .map(|rep| {
            let cfg = SmcConfig {
                particles: 25,
                seed: 1000 + rep,
                ..SmcConfig::default()
            };
            let out = run_asmc_fixed(&target, &cfg, &schedule).unwrap();
            assert_eq!(out.schedule(), &schedule);
            (out.log_evidence() - exact).exp()
        })
        .collect();
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sd / n.sqrt(), "mean ratio {mean}, sd {sd}");
}

#[test]
fn adaptive_evidence_converges_with_particles() {
    let target = conjugate(30, 1.0);
    let exact = target.log_evidence();
    let err = |particles| {
        let cfg = SmcConfig {
            particles,
            seed: 3,
            ..SmcConfig::default()
        };
        (run_asmc(&target, &cfg).unwrap().log_evidence() - exact).abs()
    };
    assert!(err(2000) < 0.05, "error {}", err(2000));
}

#[test]
fn adaptive_schedule_meets_the_rcess_target() {
    let target = conjugate(40, 0.5);
    let cfg = SmcConfig {
        particles: 300,
        rcess_threshold: 0.9,
        ..SmcConfig::default()
    };
    let out = run_asmc(&target, &cfg).unwrap();
    assert!(out.schedule().len() > 3);
    let (last, interior) = out.diagnostics.split_last().unwrap();
    for r in interior {
        assert!((r.rcess - 0.9).abs() <= 1e-10, "{r:?}");
    }
    assert!(last.rcess >= 0.9 - 1e-10);
    assert_eq!(last.tau, 1.0);
}

#[test]
fn identical_reference_and_posterior_take_one_step() {
    let target = ReferenceIsPosterior { mean: 2.0, sd: 0.5 };
    let out = run_asmc(&target, &SmcConfig::default()).unwrap();
    assert_eq!(out.schedule(), &[0.0, 1.0]);
    assert_eq!(out.log_evidence(), 0.0);
}

#[test]
fn iteration_cap_is_reported() {
    let target = conjugate(200, 0.1);
    let cfg = SmcConfig {
        max_iterations: 2,
        ..SmcConfig::default()
    };
    let err = run_asmc(&target, &cfg).unwrap_err();
    assert!(err.is_iteration_cap(), "{err}");
}

#[test]
fn runs_are_reproducible_and_seed_dependent() {
    let target = conjugate(20, 1.0);
    let run = |seed| {
        let cfg = SmcConfig {
            seed,
            ..SmcConfig::default()
        };
        run_asmc(&target, &cfg).unwrap()
    };
    let (a, b, c) = (run(5), run(5), run(6));
    assert_eq!(a.log_evidence().to_bits(), b.log_evidence().to_bits());
    assert_eq!(a.cloud.particles, b.cloud.particles);
    assert_ne!(a.log_evidence(), c.log_evidence());
}

//! Invariance checks for the propagation kernels.

use gbmds::dissimilarity::Metric;
use gbmds::harness::gen_known_dimension;
use gbmds::model::{Family, HyperParams, ModelSpec};
use gbmds::smc::gbmds::{GbmdsParticle, GbmdsTarget, LatentReference};
use gbmds::smc::{stream_rng, AnnealedTarget, KernelConfig, KernelScheme};

fn target(family: Family, scheme: KernelScheme) -> GbmdsTarget {
    let (_, d) = gen_known_dimension(10, 3).unwrap();
    let spec = ModelSpec::new(family, Metric::Euclidean, 2, f64::INFINITY).unwrap();
    let (hyper, cmds) = HyperParams::from_cmds(&d, &spec).unwrap();
    let reference = LatentReference::isotropic(cmds.config, 0.01).unwrap();
    let kernel = KernelConfig {
        scheme,
        ..KernelConfig::default()
    };
    GbmdsTarget::new(&d, spec, hyper, reference, kernel).unwrap()
}

fn stats(p: &GbmdsParticle) -> [f64; 4] {
    let s = p.state();
    [s.x.row(0)[0], s.x.row(5)[1], s.sigma2.ln(), s.lambda[0].ln()]
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Mann-Kendall trend statistic, normal approximation without tie correction.
fn mann_kendall_z(series: &[f64]) -> f64 {
    let n = series.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (series[j] - series[i]).signum();
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    if s > 0.0 {
        (s - 1.0) / var.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var.sqrt()
    } else {
        0.0
    }
}

// At τ = 0 the target is the reference itself, so exact reference draws
// must keep their law under repeated kernel applications.
fn check_reference_invariance(family: Family, scheme: KernelScheme, seed: u64) {
    let t = target(family, scheme);
    let k = 1500;
    let steps = 25;
    let mut particles: Vec<GbmdsParticle> = (0..k)
        .map(|i| t.sample_reference(&mut stream_rng(seed, 0, i as u64, 0)).unwrap())
        .collect();
    let initial: Vec<[f64; 4]> = particles.iter().map(stats).collect();
    // Step s is summarized by its own group of particles, so the trend
    // series has independent entries.
    let group = k / steps;
    let mut trend: Vec<Vec<f64>> = vec![Vec::new(); 4];
    for step in 0..steps {
        for (i, p) in particles.iter_mut().enumerate() {
            let mut rng = stream_rng(seed, 1, i as u64, step as u64);
            t.propagate(p, 0.0, &mut rng);
        }
        let members = &particles[step * group..(step + 1) * group];
        for (c, tr) in trend.iter_mut().enumerate() {
            tr.push(members.iter().map(|p| stats(p)[c]).sum::<f64>() / group as f64);
        }
    }
    let last: Vec<[f64; 4]> = particles.iter().map(stats).collect();
    for c in 0..4 {
        let a: Vec<f64> = initial.iter().map(|s| s[c]).collect();
        let b: Vec<f64> = last.iter().map(|s| s[c]).collect();
        let (ma, sa) = mean_sd(&a);
        let (mb, sb) = mean_sd(&b);
        let se = ((sa * sa + sb * sb) / k as f64).sqrt();
        assert!(
            (ma - mb).abs() < 4.5 * se,
            "{family:?}/{scheme:?} stat {c}: mean {ma} -> {mb} (se {se})"
        );
        assert!(
            (sa / sb - 1.0).abs() < 0.15,
            "{family:?}/{scheme:?} stat {c}: sd {sa} -> {sb}"
        );
        let z = mann_kendall_z(&trend[c]);
        assert!(z.abs() < 3.5, "{family:?}/{scheme:?} stat {c}: trend z = {z}");
    }
}

#[test]
fn newton_rows_keep_the_reference_law() {
    check_reference_invariance(Family::Tn, KernelScheme::Newton, 11);
}

#[test]
fn random_walk_rows_keep_the_reference_law() {
    check_reference_invariance(Family::Tn, KernelScheme::RowWise, 12);
}

#[test]
fn joint_moves_keep_the_reference_law() {
    check_reference_invariance(Family::Tsn, KernelScheme::Joint, 13);
}

#[test]
fn student_t_kernel_keeps_the_reference_law() {
    check_reference_invariance(Family::Tt, KernelScheme::Newton, 14);
}

#[test]
fn skew_kernel_keeps_the_reference_law() {
    check_reference_invariance(Family::Tsn, KernelScheme::Newton, 15);
}

/// Long-run averages of a chain at τ = 1, with batch-means standard errors.
fn posterior_averages(scheme: KernelScheme, per: usize, seed: u64) -> Vec<(f64, f64)> {
    let t = target(Family::Tn, scheme);
    let mut rng = stream_rng(seed, 2, 0, 0);
    let mut p = t.sample_reference(&mut rng).unwrap();
    for _ in 0..5 * per {
        t.propagate(&mut p, 1.0, &mut rng);
    }
    let batches = 50;
    let mut means = vec![Vec::new(); 3];
    for _ in 0..batches {
        let mut acc = [0.0; 3];
        for _ in 0..per {
            t.propagate(&mut p, 1.0, &mut rng);
            let s = p.state();
            let radius: f64 = s.x.as_slice().iter().map(|v| v * v).sum();
            acc[0] += s.sigma2;
            acc[1] += p.log_lik();
            acc[2] += radius;
        }
        for c in 0..3 {
            means[c].push(acc[c] / per as f64);
        }
    }
    means
        .iter()
        .map(|m| {
            let (mu, sd) = mean_sd(m);
            (mu, sd / (batches as f64).sqrt())
        })
        .collect()
}

#[test]
fn kernels_agree_on_the_posterior() {
    // The joint random walk mixes slowly and needs longer batches.
    let a = posterior_averages(KernelScheme::Newton, 800, 21);
    let b = posterior_averages(KernelScheme::RowWise, 800, 22);
    let c = posterior_averages(KernelScheme::Joint, 5000, 23);
    for k in 0..3 {
        for (x, y) in [(a[k], b[k]), (a[k], c[k])] {
            let se = (x.1 * x.1 + y.1 * y.1).sqrt();
            assert!((x.0 - y.0).abs() < 4.5 * se, "statistic {k}: {} vs {} (se {se})", x.0, y.0);
        }
    }
}

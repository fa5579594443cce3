use gbmds::cmds::{classical_mds, Configuration};
use gbmds::dissimilarity::{build_matrix, DataMatrix, Metric, Observations};
use gbmds::model::{log_lik_tsn_pairs, log_lik_tt_pairs};
use gbmds::postprocess::{procrustes, procrustes_with, Alignment};
use gbmds::smc::{multinomial_indices, next_tau, rcess, ress, stream_rng};
use gbmds::special::{log_sum_exp, norm_cdf, owens_t, skew_normal_cdf};
use proptest::prelude::*;

fn normalize(raw: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(raw);
    raw.iter().map(|w| w - z).collect()
}

fn points(n: usize, p: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, p), n)
}

fn rotate(x: &Configuration, angle: f64, scale: f64, shift: [f64; 2]) -> Configuration {
    let (s, c) = angle.sin_cos();
    let rows: Vec<Vec<f64>> = x
        .rows()
        .map(|r| {
            vec![
                scale * (c * r[0] - s * r[1]) + shift[0],
                scale * (s * r[0] + c * r[1]) + shift[1],
            ]
        })
        .collect();
    Configuration::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rcess_and_ress_are_fractions(
        raw in prop::collection::vec(-20.0..0.0f64, 2..60),
        gaps in prop::collection::vec(-50.0..50.0f64, 60),
        dtau in 0.0..1.0f64,
    ) {
        let lw = normalize(&raw);
        let k = lw.len() as f64;
        let r = ress(&lw);
        prop_assert!(r >= 1.0 / k - 1e-12 && r <= 1.0 + 1e-12);
        let incr: Vec<f64> = gaps[..lw.len()].iter().map(|g| g * dtau).collect();
        let c = rcess(&lw, &incr);
        prop_assert!(c > 0.0 && c <= 1.0);
    }

    #[test]
    fn next_tau_advances_and_hits_the_target(
        raw in prop::collection::vec(-5.0..0.0f64, 10..80),
        gaps in prop::collection::vec(-200.0..10.0f64, 80),
        tau_prev in 0.0..0.9f64,
        phi in 0.3..0.95f64,
    ) {
        let lw = normalize(&raw);
        let g = &gaps[..lw.len()];
        let (tau, value) = next_tau(&lw, g, tau_prev, phi, 1e-10);
        prop_assert!(tau > tau_prev && tau <= 1.0);
        if tau < 1.0 {
            // Either the root is found or bisection has reached machine
            // resolution with the value still above the target.
            prop_assert!((value - phi).abs() <= 1e-10 || value > phi);
        } else {
            prop_assert!(value >= phi);
        }
    }

    #[test]
    fn multinomial_indices_follow_support(
        raw in prop::collection::vec(0.0..1.0f64, 1..30),
        k in 1usize..200,
        seed in any::<u64>(),
    ) {
        let mut w = raw.clone();
        w[0] += 1e-3;
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let mut rng = stream_rng(seed, 0, 0, 0);
        let idx = multinomial_indices(&w, k, &mut rng);
        prop_assert_eq!(idx.len(), k);
        for i in idx {
            prop_assert!(w[i] > 0.0);
        }
    }

    #[test]
    fn euclidean_dissimilarities_form_a_metric(rows in points(6, 3)) {
        let data = DataMatrix::from_rows(&rows).unwrap();
        let d = build_matrix(Observations::Data(&data), Metric::Euclidean).unwrap();
        let n = d.n();
        for i in 0..n {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(d.get(i, j), d.get(j, i));
                prop_assert!(d.get(i, j) >= 0.0);
                for k in 0..n {
                    prop_assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn cosine_dissimilarities_lie_in_the_unit_interval(
        rows in prop::collection::vec(prop::collection::vec(0.01..5.0f64, 4), 5),
    ) {
        let data = DataMatrix::from_rows(&rows).unwrap();
        let d = build_matrix(Observations::Data(&data), Metric::Cosine).unwrap();
        for v in d.lower_triangle() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn cmds_recovers_planar_distances(rows in points(7, 2)) {
        let data = DataMatrix::from_rows(&rows).unwrap();
        let d = build_matrix(Observations::Data(&data), Metric::Euclidean).unwrap();
        let scale = d.lower_triangle().iter().cloned().fold(0.0, f64::max);
        prop_assume!(scale > 0.5);
        let fit = classical_mds(&d, 2).unwrap();
        let got = fit.config.pairwise_euclidean();
        for (a, b) in got.iter().zip(d.lower_triangle()) {
            prop_assert!((a - b).abs() < 1e-6 * scale.max(1.0));
        }
    }

    #[test]
    fn procrustes_undoes_similarity_maps(
        rows in points(6, 2),
        angle in -3.1..3.1f64,
        scale in 0.2..5.0f64,
        sx in -10.0..10.0f64,
        sy in -10.0..10.0f64,
    ) {
        let target = Configuration::from_rows(&rows).unwrap();
        let spread: f64 = target.pairwise_euclidean().iter().cloned().fold(0.0, f64::max);
        prop_assume!(spread > 0.5);
        let moved = rotate(&target, angle, scale, [sx, sy]);
        let back = procrustes(&moved, &target).unwrap();
        for (a, b) in back.as_slice().iter().zip(target.as_slice()) {
            prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
        }
        let again = procrustes(&back, &target).unwrap();
        for (a, b) in again.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn alignment_preserves_latent_distances(rows in points(6, 2), other in points(6, 2)) {
        let x = Configuration::from_rows(&rows).unwrap();
        let t = Configuration::from_rows(&other).unwrap();
        for mode in [Alignment::Rigid, Alignment::Orthogonal] {
            let y = procrustes_with(&x, &t, mode).unwrap();
            for (a, b) in y.pairwise_euclidean().iter().zip(x.pairwise_euclidean()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn owens_t_symmetries(h in -8.0..8.0f64, a in -30.0..30.0f64) {
        let t = owens_t(h, a);
        prop_assert!((owens_t(-h, a) - t).abs() <= 1e-15);
        prop_assert!((owens_t(h, -a) + t).abs() <= 1e-15);
        prop_assert!(t.abs() <= 0.25 + 1e-15);
    }

    #[test]
    fn skew_normal_cdf_is_monotone_and_reflects(z in -8.0..8.0f64, dz in 0.0..1.0f64, shape in -10.0..10.0f64) {
        let f = skew_normal_cdf(z, shape);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!(skew_normal_cdf(z + dz, shape) >= f - 1e-15);
        prop_assert!((skew_normal_cdf(-z, -shape) - (1.0 - f)).abs() <= 1e-12);
        prop_assert!((skew_normal_cdf(z, 0.0) - norm_cdf(z)).abs() <= 1e-15);
    }

    #[test]
    fn zero_skew_and_unit_mixing_agree(
        pairs in prop::collection::vec((0.01..5.0f64, 0.01..5.0f64), 1..20),
        sigma2 in 0.05..4.0f64,
        bounded in any::<bool>(),
    ) {
        let upper = if bounded { 6.0 } else { f64::INFINITY };
        let (d, delta): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = log_lik_tsn_pairs(&d, &delta, sigma2, 0.0, upper).unwrap();
        let b = log_lik_tt_pairs(&d, &delta, sigma2, &vec![1.0; d.len()], upper).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
    }
}

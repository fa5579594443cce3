use gbmds::cmds::Configuration;
use gbmds::harness::{
    gen_known_dimension, gen_outliers, gen_skewed_errors, known_dimension_with, toy_corpus,
};
use gbmds::postprocess::credible_ellipses;
use gbmds::smc::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;

/// Draws from N(center_i, L Lᵀ) for each of `n` objects in the plane.
fn gaussian_samples(n: usize, count: usize, seed: u64) -> (Vec<[f64; 2]>, [[f64; 2]; 2], Vec<Configuration>) {
    let centers: Vec<[f64; 2]> = (0..n).map(|i| [i as f64, -(i as f64) * 0.5]).collect();
    let l = [[0.8, 0.0], [0.5, 0.3]];
    let mut rng = stream_rng(seed, 0, 0, 0);
    let samples = (0..count)
        .map(|_| {
            let rows: Vec<Vec<f64>> = centers
                .iter()
                .map(|c| {
                    let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                    vec![c[0] + l[0][0] * z[0], c[1] + l[1][0] * z[0] + l[1][1] * z[1]]
                })
                .collect();
            Configuration::from_rows(&rows).unwrap()
        })
        .collect();
    (centers, l, samples)
}

#[test]
fn ellipses_reach_their_nominal_coverage() {
    let (centers, l, samples) = gaussian_samples(4, 4000, 8);
    let regions = credible_ellipses(&samples, 0.9).unwrap();
    let mut rng = stream_rng(9, 0, 0, 0);
    let fresh = 20_000;
    for (region, c) in regions.iter().zip(&centers) {
        let mut inside = 0;
        for _ in 0..fresh {
            let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let y = [c[0] + l[0][0] * z[0], c[1] + l[1][0] * z[0] + l[1][1] * z[1]];
            inside += usize::from(region.contains(&y));
        }
        let rate = inside as f64 / fresh as f64;
        assert!((rate - 0.9).abs() < 0.01, "object {}: coverage {rate}", region.object);
        let axes = region.axes.unwrap();
        assert!(axes[0] >= axes[1]);
    }
}

#[test]
fn higher_dimensions_get_interval_regions() {
    let mut rng = stream_rng(2, 0, 0, 0);
    let samples: Vec<Configuration> = (0..20000)
        .map(|_| {
            let coords = (0..9).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Configuration::new(3, 3, coords).unwrap()
        })
        .collect();
    let regions = credible_ellipses(&samples, 0.95).unwrap();
    for r in &regions {
        let iv = r.intervals.as_ref().unwrap();
        assert_eq!(iv.len(), 3);
        for [lo, hi] in iv {
            assert!((lo + 1.96).abs() < 0.15 && (hi - 1.96).abs() < 0.15, "{lo} {hi}");
        }
        assert!(r.axes.is_none());
    }
}

#[test]
fn known_dimension_noise_has_unit_spread() {
    let (x, d) = known_dimension_with(80, 5, 1.0, 4);
    let truth = x.pairwise_euclidean();
    let resid: Vec<f64> = d.lower_triangle().iter().zip(&truth).map(|(a, b)| a - b).collect();
    let m = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / m;
    let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    // True distances sit far above zero, so truncation barely matters.
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((sd - 1.0).abs() < 0.05, "sd {sd}");
    assert!(d.lower_triangle().iter().all(|v| *v >= 0.0));
    let (x2, _) = gen_known_dimension(80, 4).unwrap();
    assert_eq!(x2, x);
}

#[test]
fn outliers_double_the_requested_share_of_pairs() {
    let data = gen_outliers(40, 0.15, 3).unwrap();
    let m = 40 * 39 / 2;
    assert_eq!(data.doubled.len(), (0.15 * m as f64).round() as usize);
    for &(i, j) in &data.doubled {
        assert!(i > j);
        assert_eq!(data.d.get(i, j), 2.0 * data.base.get(i, j));
    }
    let changed = data
        .d
        .lower_triangle()
        .iter()
        .zip(data.base.lower_triangle())
        .filter(|(a, b)| *a != b)
        .count();
    assert!(changed <= data.doubled.len());
}

#[test]
fn skewed_errors_are_biased_and_heavy_tailed() {
    for seed in 1..4 {
        let data = gen_skewed_errors(60, seed).unwrap();
        let e = data.errors();
        let m = e.len() as f64;
        let mean = e.iter().sum::<f64>() / m;
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        let kurt = e.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / m / (var * var) - 3.0;
        assert!(mean > 1.0, "seed {seed}: mean {mean}");
        assert!(kurt > 1.0, "seed {seed}: excess kurtosis {kurt}");
        assert_eq!(data.moderate.len(), 12);
        assert_eq!(data.large.len(), 1);
    }
}

#[test]
fn corpus_documents_follow_their_topics() {
    let c = toy_corpus(30, 80, 6).unwrap();
    assert_eq!(c.documents.len(), 30);
    assert_eq!(c.counts.rows(), 30);
    for (i, row) in (0..30).map(|i| (i, c.counts.row(i))) {
        assert_eq!(row.iter().sum::<f64>(), 80.0);
        assert_eq!(c.topics[i], i % 3);
    }
}

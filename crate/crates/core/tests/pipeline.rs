use gbmds::adaptive::{run_adaptive, BatchPlan};
use gbmds::dissimilarity::Metric;
use gbmds::harness::known_dimension_with;
use gbmds::model::{Family, HyperOverrides, ModelSpec};
use gbmds::postprocess::{fit, sweep, FitOptions, SweepGrid};
use gbmds::smc::SmcConfig;

fn config(seed: u64) -> SmcConfig {
    SmcConfig {
        particles: 60,
        seed,
        ..SmcConfig::default()
    }
}

#[test]
fn fit_recovers_a_planar_configuration() {
    let (_, d) = known_dimension_with(14, 2, 0.1, 1);
    let spec = ModelSpec::new(Family::Tn, Metric::Euclidean, 2, f64::INFINITY).unwrap();
    let r = fit(&d, &spec, &HyperOverrides::default(), &config(2), &FitOptions::default()).unwrap();
    assert!(r.stress < 0.1 && r.stress <= 1.2 * r.cmds_stress, "stress {} vs {}", r.stress, r.cmds_stress);
    assert!(r.log_evidence.is_finite());
    assert_eq!(r.samples.len(), 60);
    assert_eq!(r.regions.len(), 14);
    assert_eq!(*r.schedule.last().unwrap(), 1.0);
    assert!(r.sigma2.mean < 0.1, "sigma2 {}", r.sigma2.mean);
}

#[test]
fn sweep_prefers_the_true_dimension_on_clean_data() {
    let (_, d) = known_dimension_with(14, 2, 0.05, 3);
    let grid = SweepGrid {
        families: vec![Family::Tn],
        metrics: vec![Metric::Euclidean],
        dims: vec![1, 2],
    };
    let table = sweep(&d, &grid, &HyperOverrides::default(), &config(4)).unwrap();
    assert_eq!(table.rows.len(), 2);
    let w = table.winner.unwrap();
    assert_eq!(table.rows[w].dim, 2);
}

#[test]
fn batches_grow_the_configuration() {
    let (_, d) = known_dimension_with(16, 2, 0.2, 5);
    let spec = ModelSpec::new(Family::Tt, Metric::Euclidean, 2, f64::INFINITY).unwrap();
    let plan = BatchPlan::new(vec![8, 12, 16]).unwrap();
    let results = run_adaptive(&d, &plan, &spec, &HyperOverrides::default(), &config(6), &FitOptions::default()).unwrap();
    let sizes: Vec<usize> = results.iter().map(|r| r.mode.n()).collect();
    assert_eq!(sizes, vec![8, 12, 16]);
    assert!(results.iter().all(|r| r.log_evidence.is_finite()));
}

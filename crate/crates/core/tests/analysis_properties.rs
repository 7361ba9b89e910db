use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rankp::analysis::{
    average_curves, efficiency_ratio, fit_power_law, log_grid, ConvergenceCurve, CurvePoint,
};
use rankp::protocols::Protocol;
use rankp::simulator::{run_campaign, RunConfig, Schedule, StateEnsemble};

/// Traces `alpha N^beta` with independent log-normal scatter per run and point.
fn noisy_traces(
    alpha: f64,
    beta: f64,
    sigma: f64,
    runs: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<(f64, f64)>> {
    let noise = Normal::new(0.0, sigma).unwrap();
    (0..runs)
        .map(|_| {
            log_grid(1e2, 1e6, 41)
                .into_iter()
                .map(|n| (n, alpha * n.powf(beta) * noise.sample(rng).exp()))
                .collect()
        })
        .collect()
}

#[test]
fn noisy_power_laws_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let alpha = 10f64.powf(rng.random_range(-1.0..1.0));
        let beta = rng.random_range(-1.2..-0.4);
        let curve = average_curves(
            "synthetic",
            &noisy_traces(alpha, beta, 0.5, 50, &mut rng),
            10,
        )
        .unwrap();
        let fit = fit_power_law(&curve, (1e2, 1e6)).unwrap();
        worst = worst.max((fit.beta - beta).abs());
        assert!(fit.beta_err > 0.0 && fit.alpha_err > 0.0);
    }
    assert!(worst < 0.05, "largest exponent error {worst}");
}

#[test]
fn averaging_ignores_trace_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut traces = noisy_traces(2.0, -1.0, 0.3, 20, &mut rng);
    let reference = average_curves("a", &traces, 10).unwrap();
    for _ in 0..10 {
        traces.shuffle(&mut rng);
        let shuffled = average_curves("a", &traces, 10).unwrap();
        for (p, q) in reference.points.iter().zip(&shuffled.points) {
            assert_eq!(p.n, q.n);
            assert!((p.mean - q.mean).abs() <= 1e-12 * p.mean);
            assert!((p.std_of_mean - q.std_of_mean).abs() <= 1e-9 * p.std_of_mean);
        }
    }
}

#[test]
fn eigen_campaign_curve_is_well_resolved() {
    let mut config = RunConfig::new(Protocol::Eigen);
    config.schedule = Schedule {
        n_max: 1e5,
        ..Schedule::default()
    };
    let traces: Vec<Vec<(f64, f64)>> = run_campaign(&config, &StateEnsemble::BuresMixed, 50, 43)
        .into_iter()
        .map(|r| r.unwrap().trace.points())
        .collect();
    let curve = average_curves("eigen", &traces, 10).unwrap();
    assert_eq!(curve.runs, 50);
    for p in &curve.points {
        assert!(
            p.std_of_mean < p.mean,
            "N = {}: {} vs {}",
            p.n,
            p.std_of_mean,
            p.mean
        );
    }
    let fit = fit_power_law(&curve, (1e3, 1e5)).unwrap();
    assert!((-1.2..-0.8).contains(&fit.beta), "beta {}", fit.beta);
}

fn exact_curve(alpha: f64, beta: f64) -> ConvergenceCurve {
    let points = log_grid(1e2, 1e6, 41)
        .into_iter()
        .map(|n| CurvePoint {
            n,
            mean: alpha * n.powf(beta),
            std_of_mean: 0.0,
        })
        .collect();
    ConvergenceCurve::new("exact", 1, points).unwrap()
}

proptest! {
    #[test]
    fn ratio_is_the_pointwise_ratio_at_the_geometric_mean(
        a1 in 0.1f64..10.0, b1 in -1.5f64..-0.3, a2 in 0.1f64..10.0, b2 in -1.5f64..-0.3,
    ) {
        let (f1, f2) = (
            fit_power_law(&exact_curve(a1, b1), (1e2, 1e6)).unwrap(),
            fit_power_law(&exact_curve(a2, b2), (1e2, 1e6)).unwrap(),
        );
        let mid = 1e4f64;
        let pointwise = (a2 * mid.powf(b2)) / (a1 * mid.powf(b1));
        let r = efficiency_ratio(&f1, &f2, 1e2, 1e6);
        prop_assert!((r / pointwise - 1.0).abs() < 1e-9, "{r} vs {pointwise}");
        prop_assert!((r * efficiency_ratio(&f2, &f1, 1e2, 1e6) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn averaging_two_traces_gives_their_midpoint(scale in 1.01f64..10.0, beta in -1.5f64..-0.3) {
        let grid = log_grid(1e2, 1e5, 31);
        let lower: Vec<(f64, f64)> = grid.iter().map(|&n| (n, n.powf(beta))).collect();
        let upper: Vec<(f64, f64)> = lower.iter().map(|&(n, d)| (n, scale * d)).collect();
        let curve = average_curves("pair", &[lower, upper], 10).unwrap();
        for p in &curve.points {
            let d = p.n.powf(beta);
            prop_assert!((p.mean / (0.5 * (1.0 + scale) * d) - 1.0).abs() < 1e-9);
            prop_assert!((p.std_of_mean / (0.5 * (scale - 1.0) * d) - 1.0).abs() < 1e-9);
        }
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rankp::quantum::{random_bures_mixed, random_pure_haar, random_unitary_haar, DensityMatrix};

const SAMPLES: usize = 4000;

/// Kolmogorov-Smirnov distance between `samples` and the continuous `cdf`.
fn ks_distance(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

// Critical value at significance 1e-3.
fn ks_threshold(n: usize) -> f64 {
    1.95 / (n as f64).sqrt()
}

fn bloch_norm(rho: &DensityMatrix) -> f64 {
    rho.bloch_vector().iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn bures_radius_cdf(r: f64) -> f64 {
    2.0 / std::f64::consts::PI * (r.asin() - r * (1.0 - r * r).sqrt())
}

#[test]
fn haar_pure_states_cover_the_sphere_uniformly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let blochs: Vec<[f64; 3]> = (0..SAMPLES)
        .map(|_| random_pure_haar(2, &mut rng).bloch_vector())
        .collect();
    for b in &blochs {
        let norm = b.iter().map(|c| c * c).sum::<f64>();
        assert!((norm - 1.0).abs() < 1e-12);
    }
    let n = SAMPLES as f64;
    for axis in 0..3 {
        let mean = blochs.iter().map(|b| b[axis]).sum::<f64>() / n;
        let second = blochs.iter().map(|b| b[axis] * b[axis]).sum::<f64>() / n;
        // Each coordinate is uniform on [-1, 1]: mean 0, variance 1/3.
        assert!(
            mean.abs() < 4.0 * (1.0 / (3.0 * n)).sqrt(),
            "axis {axis} mean {mean}"
        );
        assert!(
            (second - 1.0 / 3.0).abs() < 0.03,
            "axis {axis} second moment {second}"
        );
        let d = ks_distance(blochs.iter().map(|b| b[axis]).collect(), |x| {
            0.5 * (x + 1.0)
        });
        assert!(d < ks_threshold(SAMPLES), "axis {axis} KS distance {d}");
    }
}

#[test]
fn bures_radius_follows_its_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let radii: Vec<f64> = (0..SAMPLES)
        .map(|_| bloch_norm(&random_bures_mixed(2, &mut rng)))
        .collect();
    assert!(radii.iter().all(|&r| (0.0..1.0).contains(&r)));
    let d = ks_distance(radii.clone(), bures_radius_cdf);
    assert!(d < ks_threshold(SAMPLES), "KS distance {d}");

    // Mean radius of the density r^2 / sqrt(1 - r^2), normalized: 8 / (3 pi).
    let mean = radii.iter().sum::<f64>() / SAMPLES as f64;
    let expected = 8.0 / (3.0 * std::f64::consts::PI);
    assert!(
        (mean - expected).abs() < 0.01,
        "mean radius {mean} vs {expected}"
    );
}

#[test]
fn bures_directions_are_isotropic() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dirs: Vec<[f64; 3]> = (0..SAMPLES)
        .map(|_| {
            let rho = random_bures_mixed(2, &mut rng);
            let b = rho.bloch_vector();
            let r = bloch_norm(&rho);
            [b[0] / r, b[1] / r, b[2] / r]
        })
        .collect();
    for axis in 0..3 {
        let d = ks_distance(dirs.iter().map(|b| b[axis]).collect(), |x| 0.5 * (x + 1.0));
        assert!(d < ks_threshold(SAMPLES), "axis {axis} KS distance {d}");
    }
}

#[test]
fn ensembles_are_unitarily_invariant_in_distribution() {
    // The spectrum of U rho U^dagger does not depend on U, and a fixed
    // rotation of the sample leaves the radius distribution unchanged.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let u = random_unitary_haar(2, &mut rng);
    let (plain, rotated): (Vec<f64>, Vec<f64>) = (0..SAMPLES)
        .map(|_| {
            let rho = random_bures_mixed(2, &mut rng);
            let turned = DensityMatrix::new(u.sandwich(rho.matrix()).hermitian_part()).unwrap();
            let (a, b) = (rho.eigenvalues(), turned.eigenvalues());
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            (rho.bloch_vector()[2], turned.bloch_vector()[2])
        })
        .unzip();
    // Two-sample comparison of the z coordinate before and after rotation.
    let mut all: Vec<f64> = plain.iter().chain(&rotated).copied().collect();
    all.sort_by(|a, b| a.total_cmp(b));
    let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    let d = all
        .iter()
        .map(|&x| (ecdf(&plain, x) - ecdf(&rotated, x)).abs())
        .fold(0.0, f64::max);
    assert!(
        d < 1.95 * (2.0 / SAMPLES as f64).sqrt(),
        "two-sample KS distance {d}"
    );
}

#[test]
fn same_seed_same_states() {
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            random_pure_haar(2, &mut rng),
            random_bures_mixed(2, &mut rng),
        )
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5), draw(6));
}

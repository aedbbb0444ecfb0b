use epsimage::dp::{laplace_sample, obfuscate, Epsilon, PrivacyParams};
use epsimage::raster::ImageRgb;
use epsimage::seed::rng_from_seed;
use rand::Rng as _;

#[test]
fn laplace_moments() {
    const DRAWS: usize = 1_000_000;
    let mut rng = rng_from_seed(7);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..DRAWS {
        let x = laplace_sample(1.0, &mut rng).unwrap();
        sum += x;
        sum_sq += x * x;
    }
    let mean = sum / DRAWS as f64;
    let variance = sum_sq / DRAWS as f64 - mean * mean;
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((variance - 2.0).abs() < 0.02, "variance {variance}");
}

#[test]
fn laplace_median_absolute_value() {
    // P(|X| ≤ s ln 2) = ½ for Laplace(0, s)
    let mut rng = rng_from_seed(8);
    let scale = 3.5;
    let n = 200_000;
    let inside = (0..n)
        .filter(|_| laplace_sample(scale, &mut rng).unwrap().abs() <= scale * std::f64::consts::LN_2)
        .count();
    assert!((inside as f64 / n as f64 - 0.5).abs() < 0.005);
}

#[test]
fn tiny_epsilon_saturates() {
    let mut rng = rng_from_seed(11);
    let img = ImageRgb::new(64, 128, (0..64 * 128 * 3).map(|_| rng.gen()).collect()).unwrap();
    let params = PrivacyParams::new(Epsilon::Value(1e-3), 2, 32).unwrap();
    let out = obfuscate(&img, &params, &mut rng_from_seed(3)).unwrap();
    let saturated = out.data().iter().filter(|&&v| v == 0 || v == 255).count();
    assert!(saturated as f64 / out.data().len() as f64 > 0.99);
}

#[test]
fn obfuscation_is_reproducible_per_seed() {
    let img = ImageRgb::filled(16, 16, [120, 60, 200]).unwrap();
    let params = PrivacyParams::new(Epsilon::Value(1e4), 2, 16).unwrap();
    let a = obfuscate(&img, &params, &mut rng_from_seed(5)).unwrap();
    let b = obfuscate(&img, &params, &mut rng_from_seed(5)).unwrap();
    let c = obfuscate(&img, &params, &mut rng_from_seed(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

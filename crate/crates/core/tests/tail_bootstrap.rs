use burstkit::tailfit::{fit_tail, TailOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pareto(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / alpha)).collect()
}

#[test]
fn pareto_interval_coverage() {
    let opts = TailOptions::default();
    let reps = 60;
    let covered = (0..reps)
        .filter(|&r| {
            let (_, ci) = fit_tail(&pareto(2.0, 10_000, 1000 + r), &opts, r).unwrap();
            ci.lo <= 2.0 && 2.0 <= ci.hi
        })
        .count();
    let rate = covered as f64 / reps as f64;
    println!("coverage {covered}/{reps}");
    assert!(rate >= 0.9, "coverage {rate}");
}

#[test]
fn interval_width_scales_with_sample_size() {
    let opts = TailOptions::default();
    let mean_width = |n: usize| {
        let reps = 40;
        (0..reps)
            .map(|r| {
                let (_, ci) = fit_tail(&pareto(2.0, n, 77 + r), &opts, r).unwrap();
                ci.hi - ci.lo
            })
            .sum::<f64>()
            / reps as f64
    };
    let ratio = mean_width(1000) / mean_width(4000);
    println!("width ratio {ratio}");
    assert!((1.6..=2.6).contains(&ratio), "ratio {ratio}");
}

use gpclt::harness::ks_test;
use gpclt::simulate::{embedding_spectrum, sample_paths, GridSpec, PathBundle, SampleMethod};
use gpclt::IncrementVarianceSpec;

fn pow(r: f64) -> IncrementVarianceSpec {
    IncrementVarianceSpec::power(r).unwrap()
}

fn normalized(b: &PathBundle, r: f64) -> Vec<f64> {
    let sd = b.delta.powf(r / 2.0);
    b.increments.iter().map(|x| x / sd).collect()
}

#[test]
fn marginal_law() {
    for r in [0.4, 0.7, 1.0] {
        let grid = GridSpec::new(0.0, 1.0, 1.0 / 32.0, 4).unwrap();
        let b = sample_paths(&pow(r), &grid, 2000, 5).unwrap();
        let z = normalized(&b, r);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 / n.sqrt(), "r={r} mean={mean}");
        assert!(
            (var - 1.0).abs() < 6.0 / (b.n_paths as f64).sqrt(),
            "r={r} var={var}"
        );
        // first increments are independent across paths
        let first: Vec<f64> = b.paths().map(|p| p[0] / b.delta.powf(r / 2.0)).collect();
        assert!(ks_test(&first).unwrap().p_value > 1e-3, "r={r}");
    }
}

/// Per-path autocovariance at `lag` over positions `range`, then the mean
/// and standard error across paths.
fn autocov(b: &PathBundle, lag: usize, range: std::ops::Range<usize>) -> (f64, f64) {
    let est: Vec<f64> = b
        .paths()
        .map(|p| {
            let n = range.len() - lag;
            range
                .clone()
                .take(n)
                .map(|i| p[i] * p[i + lag])
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let m = est.iter().sum::<f64>() / est.len() as f64;
    let v = est.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64;
    (m, (v / est.len() as f64).sqrt())
}

#[test]
fn stationarity() {
    for r in [0.5, 1.5] {
        let grid = GridSpec::new(0.0, 1.0, 1.0 / 16.0, 4).unwrap();
        let b = sample_paths(&pow(r), &grid, 1000, 8).unwrap();
        let n = b.n_steps;
        for lag in [0, 1, 2, 5] {
            let (m1, s1) = autocov(&b, lag, 0..n / 2);
            let (m2, s2) = autocov(&b, lag, n / 2..n);
            let pooled = (s1 * s1 + s2 * s2).sqrt();
            assert!(
                (m1 - m2).abs() < 6.0 * pooled,
                "r={r} lag={lag}: {m1} vs {m2}"
            );
        }
    }
}

#[test]
fn embedding_is_valid_for_fractional_noise() {
    for i in 1..=9 {
        let r = 0.2 * i as f64;
        for (delta, n) in [(1.0 / 64.0, 72), (1.0 / 1024.0, 1032), (1e-3, 4000)] {
            let eig = embedding_spectrum(&pow(r), delta, n).unwrap();
            let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-8 * max, "r={r} n={n}: min/max = {}", min / max);
        }
    }
}

#[test]
fn samplers_cover_the_catalog() {
    let grid = GridSpec::new(0.0, 0.0625, 1.0 / 512.0, 8).unwrap();
    for name in ["explog:0.5", "logpow:1", "spow:3:0.6"] {
        let s: IncrementVarianceSpec = name.parse().unwrap();
        let b = sample_paths(&s, &grid, 4, 1).unwrap();
        assert!(b.increments.iter().all(|x| x.is_finite()), "{name}");
        assert!(
            !matches!(b.method, SampleMethod::DenseFactorization { .. }),
            "{name}"
        );
    }
}

#[test]
fn worker_count_does_not_change_paths() {
    let grid = GridSpec::new(0.0, 1.0, 1.0 / 64.0, 8).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_paths(&pow(1.3), &grid, 64, 77).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(7));
}

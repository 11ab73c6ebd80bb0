use itertools::Itertools;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trafo::tree::{linear_statistic_moments, test_linear_statistic, TestStatistic};

/// Mean and covariance of `vec(Σ g_i s_π(i)ᵀ)` over all `N!` permutations.
fn brute_force(g: &DMatrix<f64>, s: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = g.nrows();
    let (q, p) = (g.ncols(), s.ncols());
    let d = q * p;
    let mut sum = vec![0.0; d];
    let mut cross = DMatrix::<f64>::zeros(d, d);
    let mut count = 0.0;
    for perm in (0..n).permutations(n) {
        let permuted = DMatrix::from_fn(n, p, |i, k| s[(perm[i], k)]);
        let t = g.transpose() * permuted;
        let v = t.as_slice();
        for a in 0..d {
            sum[a] += v[a];
            for b in 0..d {
                cross[(a, b)] += v[a] * v[b];
            }
        }
        count += 1.0;
    }
    let mean: Vec<f64> = sum.iter().map(|v| v / count).collect();
    let cov = DMatrix::from_fn(d, d, |a, b| cross[(a, b)] / count - mean[a] * mean[b]);
    (mean, cov)
}

#[test]
fn moments_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = 0;
    for n in 2..=7 {
        for q in 1..=2 {
            for p in 1..=2 {
                for rep in 0..3 {
                    // integer-valued designs exercise ties, continuous ones the general case
                    let g = DMatrix::from_fn(n, q, |_, _| {
                        if rep == 0 { rng.random_range(0..3) as f64 } else { rng.random_range(-2.0..2.0) }
                    });
                    let s = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0));
                    let lin = linear_statistic_moments(&g, &s).unwrap();
                    let (mean, cov) = brute_force(&g, &s);
                    assert_eq!(lin.statistic, g.transpose() * &s);
                    for (a, b) in lin.expectation.as_slice().iter().zip(&mean) {
                        assert!((a - b).abs() < 1e-10, "E: N={n} Q={q} P={p}: {a} vs {b}");
                    }
                    for (a, b) in lin.covariance.iter().zip(cov.iter()) {
                        assert!((a - b).abs() < 1e-10, "Cov: N={n} Q={q} P={p}: {a} vs {b}");
                    }
                    cases += 1;
                }
            }
        }
    }
    assert_eq!(cases, 6 * 4 * 3);
}

#[test]
fn documented_example() {
    let g = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
    let s = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 1.0]);
    let lin = linear_statistic_moments(&g, &s).unwrap();
    assert!((lin.statistic[(0, 0)] - 2.0).abs() < 1e-14);
    assert!(lin.expectation[(0, 0)].abs() < 1e-14);
    assert!((lin.covariance[(0, 0)] - 2.0).abs() < 1e-14);
}

#[test]
fn constant_scores_are_degenerate() {
    let g = DMatrix::from_column_slice(4, 1, &[1.0, 5.0, 2.0, 0.5]);
    let s = DMatrix::from_column_slice(4, 1, &[0.7; 4]);
    let lin = linear_statistic_moments(&g, &s).unwrap();
    assert!((lin.expectation[(0, 0)] - lin.statistic[(0, 0)]).abs() < 1e-12);
    assert!(lin.is_degenerate());
    assert!(test_linear_statistic(&lin, TestStatistic::Quadratic).is_none());
    assert!(test_linear_statistic(&lin, TestStatistic::MaxAbs).is_none());
}

#[test]
fn quadratic_statistic_is_location_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(5..60);
        let g = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let s = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let shift = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
        let shifted = DMatrix::from_fn(n, 2, |i, k| s[(i, k)] + shift[k]);
        let a = test_linear_statistic(&linear_statistic_moments(&g, &s).unwrap(), TestStatistic::Quadratic).unwrap();
        let b = test_linear_statistic(&linear_statistic_moments(&g, &shifted).unwrap(), TestStatistic::Quadratic).unwrap();
        assert_eq!(a.df, b.df);
        assert!((a.statistic - b.statistic).abs() < 1e-8 * (1.0 + a.statistic), "{} vs {}", a.statistic, b.statistic);
    }
}

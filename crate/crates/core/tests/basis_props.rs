use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use trafo::{BaseDistribution, BernsteinBasis, SupportInterval};

fn basis(order: usize, lo: f64, hi: f64) -> BernsteinBasis<f64> {
    BernsteinBasis::new(order, SupportInterval::new(lo, hi).unwrap()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn increasing(start: f64, gaps: &[f64]) -> Vec<f64> {
    let mut theta = vec![start];
    for g in gaps {
        theta.push(theta.last().unwrap() + g);
    }
    theta
}

#[test]
fn examples() {
    let b = basis(1, 0.0, 1.0);
    assert_eq!(b.eval(0.0).unwrap(), vec![1.0, 0.0]);
    let v = b.eval(0.25).unwrap();
    assert_abs_diff_eq!(v[0], 0.75, epsilon = 1e-15);
    assert_abs_diff_eq!(v[1], 0.25, epsilon = 1e-15);
    for y in [0.0, 0.3, 1.0] {
        assert_abs_diff_eq!(dot(&b.deriv(y).unwrap(), &[0.0, 1.0]), 1.0, epsilon = 1e-14);
    }
    let wide = basis(1, -2.0, 2.0);
    assert_abs_diff_eq!(dot(&wide.deriv(0.7).unwrap(), &[0.0, 1.0]), 0.25, epsilon = 1e-14);
    assert!(b.eval(1.5).is_err());
    assert!(b.deriv(-0.1).is_err());
}

#[test]
fn base_distribution_examples() {
    let n = BaseDistribution::StandardNormal.eval(0.0_f64);
    assert_abs_diff_eq!(n.cdf, 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(n.pdf, 0.398_942_280_401_432_7, epsilon = 1e-15);
    assert_abs_diff_eq!(n.dlogpdf, 0.0, epsilon = 1e-15);
    let l = BaseDistribution::StandardLogistic.eval(0.0_f64);
    assert_abs_diff_eq!(l.cdf, 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(l.pdf, 0.25, epsilon = 1e-15);
    let e = BaseDistribution::StandardMinExtremeValue.eval(0.0_f64);
    assert_abs_diff_eq!(e.cdf, 1.0 - (-1.0_f64).exp(), epsilon = 1e-15);
    assert_abs_diff_eq!(e.pdf, (-1.0_f64).exp(), epsilon = 1e-15);
    assert_abs_diff_eq!(e.dlogpdf, 0.0, epsilon = 1e-15);

    assert_abs_diff_eq!(BaseDistribution::StandardLogistic.quantile(0.5_f64).unwrap(), 0.0, epsilon = 1e-14);
    assert_abs_diff_eq!(BaseDistribution::StandardNormal.quantile(0.95_f64).unwrap(), 1.644_853_626_951_472_2, epsilon = 1e-12);
    let p = 1.0 - (-1.0_f64).exp();
    assert_abs_diff_eq!(BaseDistribution::StandardMinExtremeValue.quantile(p).unwrap(), 0.0, epsilon = 1e-12);
    assert!(BaseDistribution::StandardNormal.quantile(1.0_f64).is_err());
    assert!(BaseDistribution::StandardNormal.quantile(0.0_f64).is_err());
}

#[test]
fn extreme_tails_stay_finite() {
    for d in BaseDistribution::ALL {
        for z in [-40.0_f64, -35.0, 35.0, 40.0] {
            assert!(d.log_pdf(z).is_finite() || d.log_pdf(z) == f64::NEG_INFINITY, "{d:?} {z}");
            let lc = d.log_cdf(z);
            let ls = d.log_sf(z);
            assert!(lc <= 0.0 && ls <= 0.0, "{d:?} {z}: {lc} {ls}");
        }
        assert!(d.log_cdf(-40.0_f64) < -10.0);
        assert!(d.log_sf(40.0_f64) < -10.0 || d.log_sf(40.0_f64) == f64::NEG_INFINITY);
    }
}

#[test]
fn endpoints_interpolate() {
    for m in 1..=12 {
        let b = basis(m, -1.5, 3.0);
        let first = b.eval(-1.5).unwrap();
        let last = b.eval(3.0).unwrap();
        for k in 0..=m {
            assert_eq!(first[k], if k == 0 { 1.0 } else { 0.0 });
            assert_eq!(last[k], if k == m { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn derivative_positive_on_grid() {
    let b = basis(6, 0.0, 10.0);
    let theta = increasing(-2.0, &[0.01, 3.0, 0.01, 0.5, 0.01, 2.0]);
    for k in 0..=100 {
        let y = 10.0 * k as f64 / 100.0;
        assert!(dot(&b.deriv(y).unwrap(), &theta) > 0.0, "y = {y}");
    }
}

proptest! {
    #[test]
    fn partition_of_unity(m in 1usize..30, lo in -50.0f64..50.0, width in 0.01f64..100.0, u in 0.0f64..=1.0) {
        let b = basis(m, lo, lo + width);
        let y = (lo + u * width).min(lo + width);
        let s: f64 = b.eval(y).unwrap().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_theta_gives_constant_h(m in 1usize..15, c in -10.0f64..10.0, u in 0.0f64..=1.0) {
        let b = basis(m, -1.0, 2.0);
        let h = dot(&b.eval(-1.0 + 3.0 * u).unwrap(), &vec![c; m + 1]);
        prop_assert!((h - c).abs() < 1e-12 * (1.0 + c.abs()));
    }

    #[test]
    fn derivative_matches_finite_differences(
        m in 1usize..=6,
        start in -3.0f64..3.0,
        gaps in prop::collection::vec(0.05f64..2.0, 6),
        u in 0.02f64..0.98,
    ) {
        let (lo, hi) = (-1.0, 4.0);
        let b = basis(m, lo, hi);
        let theta = increasing(start, &gaps[..m]);
        let y = lo + u * (hi - lo);
        let step = 1e-5;
        let h = |v: f64| dot(&b.eval(v).unwrap(), &theta);
        let fd = (h(y + step) - h(y - step)) / (2.0 * step);
        let analytic = dot(&b.deriv(y).unwrap(), &theta);
        prop_assert!(analytic > 0.0);
        prop_assert!((analytic - fd).abs() <= 1e-6 * analytic.abs(), "{} vs {}", analytic, fd);
    }

    #[test]
    fn quantile_cdf_round_trip(p in 1e-6f64..(1.0 - 1e-6), which in 0usize..3) {
        let d = BaseDistribution::ALL[which];
        let z = d.quantile(p).unwrap();
        prop_assert!((d.cdf(z) - p).abs() < 1e-10, "{:?}: {} -> {}", d, p, d.cdf(z));
    }

    #[test]
    fn cdf_quantile_round_trip(z in -8.0f64..8.0, which in 0usize..3) {
        let d = BaseDistribution::ALL[which];
        let p = d.cdf(z);
        // the upper tail is ill-conditioned in probability space: 1 − p keeps ~1e-16 absolute precision
        prop_assume!(p > 1e-12 && p < 1.0 - 1e-6);
        let back = d.quantile(p).unwrap();
        prop_assert!((back - z).abs() < 1e-8 * (1.0 + z.abs()), "{:?}: {} -> {}", d, z, back);
    }

    #[test]
    fn log_space_consistency(z in -20.0f64..20.0, which in 0usize..3) {
        let d = BaseDistribution::ALL[which];
        let e = d.eval(z);
        prop_assert!((e.cdf - d.log_cdf(z).exp()).abs() < 1e-12);
        prop_assert!((1.0 - e.cdf - d.log_sf(z).exp()).abs() < 1e-12);
        prop_assert!((e.pdf - d.log_pdf(z).exp()).abs() < 1e-12);
        let step = 1e-5;
        let fd = (d.log_pdf(z + step) - d.log_pdf(z - step)) / (2.0 * step);
        prop_assert!((fd - e.dlogpdf).abs() < 1e-5 * (1.0 + e.dlogpdf.abs()));
    }
}

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trafo::simbench::{
    check_loss, check_risk, friedman1, friedman1_star, generate, generate_n, median, nll_difference, run_benchmark,
    summarize, weighted_ecdf_quantile, BenchmarkConfig, BenchmarkRecord, DgpFamily, DgpSpec, Dim, Effect, Method,
    TruthOracle,
};
use trafo::{BaseDistribution, BernsteinBasis, ForestConfig, Model, SupportInterval};

/// The true normal conditional model as an order-one transformation model.
fn truth_model(truth: &TruthOracle, i: usize) -> Model {
    let (lo, hi) = (-50.0, 50.0);
    let basis = BernsteinBasis::new(1, SupportInterval::new(lo, hi).unwrap()).unwrap();
    let (mu, sd) = (truth.mean[i], truth.sd[i]);
    Model::new(basis, BaseDistribution::StandardNormal, vec![(lo - mu) / sd, (hi - mu) / sd]).unwrap()
}

#[test]
fn friedman_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..200_000 {
        let x: Vec<f64> = (0..5).map(|_| rng.random()).collect();
        let f = friedman1(&x);
        assert!((0.0..=30.0).contains(&f));
        assert!((friedman1_star(&x) - (f / 10.0 - 1.5)).abs() < 1e-12);
        lo = lo.min(f);
        hi = hi.max(f);
    }
    assert!(lo < 3.0 && hi > 25.0, "range [{lo}, {hi}]");
    assert!((friedman1(&[1.0, 0.5, 0.5, 0.5, 0.5]) - (10.0 + 0.0 + 5.0 + 2.5)).abs() < 1e-12);
}

#[test]
fn generated_designs_follow_the_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for family in [DgpFamily::TreeNormal, DgpFamily::TreeLogNormal, DgpFamily::FriedmanNormal, DgpFamily::FriedmanLogNormal] {
        for effect in [Effect::None, Effect::MeanOnly, Effect::VarianceOnly, Effect::MeanAndVariance] {
            for dim in [Dim::Low, Dim::High] {
                let spec = DgpSpec { n_learn: 80, ..DgpSpec::new(family, effect, dim) };
                let (data, truth) = generate(&spec, &mut rng);
                assert_eq!(data.n(), 80);
                assert_eq!(data.n_columns(), spec.n_columns());
                for i in 0..data.n() {
                    let x = data.row(i);
                    assert!(x.iter().all(|v| (0.0..1.0).contains(v)));
                    let (mu, sd) = spec.params(&x);
                    assert_eq!((truth.mean[i], truth.sd[i]), (mu, sd));
                    let y = data.responses()[i].exact_value().unwrap();
                    assert!(!family.is_log_normal() || y > 0.0);
                }
            }
        }
    }
    let tree = DgpSpec::new(DgpFamily::TreeNormal, Effect::MeanAndVariance, Dim::Low);
    assert_eq!(tree.n_columns(), 7);
    let mut x = vec![0.2; 7];
    assert_eq!(tree.params(&x), (0.0, 1.0));
    x[0] = 0.7;
    x[1] = 0.9;
    assert_eq!(tree.params(&x), (1.0, 2.0));
    assert_eq!(DgpSpec::new(DgpFamily::FriedmanNormal, Effect::None, Dim::High).n_columns(), 60);
}

#[test]
fn truth_against_itself_scores_zero() {
    for family in [DgpFamily::TreeNormal, DgpFamily::FriedmanNormal] {
        for effect in [Effect::None, Effect::MeanOnly, Effect::VarianceOnly, Effect::MeanAndVariance] {
            let spec = DgpSpec::new(family, effect, Dim::Low);
            let (data, truth) = generate_n(&spec, 100, &mut ChaCha8Rng::seed_from_u64(3));
            let y: Vec<f64> = data.responses().iter().map(|r| r.exact_value().unwrap()).collect();
            let models: Vec<Model> = (0..100).map(|i| truth_model(&truth, i)).collect();
            let d = nll_difference(&models, &truth, &y).unwrap();
            assert!(d.abs() < 1e-9, "{family} {effect}: {d}");

            // permuting the test rows changes nothing
            let perm: Vec<usize> = (0..100).rev().collect();
            let pt = TruthOracle {
                mean: perm.iter().map(|&i| truth.mean[i]).collect(),
                sd: perm.iter().map(|&i| truth.sd[i]).collect(),
                log_normal: truth.log_normal,
            };
            let pm: Vec<Model> = perm.iter().map(|&i| models[i].clone()).collect();
            let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let wrong: Vec<Model> = (0..100).map(|i| truth_model(&TruthOracle { mean: vec![0.3; 100], ..truth.clone() }, i)).collect();
            let pw: Vec<Model> = perm.iter().map(|&i| wrong[i].clone()).collect();
            let a = nll_difference(&wrong, &truth, &y).unwrap();
            let b = nll_difference(&pw, &pt, &py).unwrap();
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
            assert!(nll_difference(&pm, &pt, &py).unwrap().abs() < 1e-9);
        }
    }
}

#[test]
fn log_normal_density_has_the_jacobian() {
    let truth = TruthOracle { mean: vec![0.4], sd: vec![0.8], log_normal: true };
    // trapezoid rule on a log grid: ∫ f(y) dy = ∫ f(e^u) e^u du
    let (a, b, k) = (-8.0f64, 8.0f64, 20_000);
    let h = (b - a) / k as f64;
    let mut total = 0.0;
    for j in 0..=k {
        let u = a + h * j as f64;
        let w = if j == 0 || j == k { 0.5 } else { 1.0 };
        total += w * (truth.log_density(0, u.exp()) + u).exp() * h;
    }
    assert!((total - 1.0).abs() < 1e-8, "density integrates to {total}");
    let y = 2.5f64;
    let expected = BaseDistribution::StandardNormal.log_pdf((y.ln() - 0.4) / 0.8) - 0.8f64.ln() - y.ln();
    assert!((truth.log_density(0, y) - expected).abs() < 1e-14);
    let step = 1e-6;
    let fd = (truth.cdf(0, y + step) - truth.cdf(0, y - step)) / (2.0 * step);
    assert!((fd - truth.log_density(0, y).exp()).abs() < 1e-8);
    assert!((truth.cdf(0, truth.quantile(0, 0.9)) - 0.9).abs() < 1e-12);
    assert_eq!(truth.log_density(0, -1.0), f64::NEG_INFINITY);
}

#[test]
fn check_risk_is_minimised_by_the_true_quantile() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y: Vec<f64> = (0..20_000).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
    for tau in [0.1, 0.5, 0.9] {
        let q: f64 = BaseDistribution::StandardNormal.quantile(tau).unwrap();
        let truth = vec![q; y.len()];
        assert_eq!(check_risk(&truth, &truth, &y, tau).unwrap(), 0.0);
        for shift in [-0.3, -0.1, 0.1, 0.3] {
            let off = vec![q + shift; y.len()];
            assert!(check_risk(&off, &truth, &y, tau).unwrap() > 0.0, "tau {tau} shift {shift}");
        }
    }
    assert_eq!(check_loss(2.0, 0.1), 0.2);
    assert_eq!(check_loss(-2.0, 0.1), 1.8);
    assert!(check_risk(&[0.0], &[0.0], &[0.0], 1.0).is_err());
    assert!(check_risk(&[0.0], &[0.0, 1.0], &[0.0], 0.5).is_err());
}

#[test]
fn weighted_ecdf_quantiles() {
    let ys = [5.0, 1.0, 3.0, 2.0, 4.0];
    let w = [1.0; 5];
    assert_eq!(weighted_ecdf_quantile(&ys, &w, 0.5).unwrap(), 3.0);
    assert_eq!(weighted_ecdf_quantile(&ys, &w, 0.2).unwrap(), 1.0);
    assert_eq!(weighted_ecdf_quantile(&ys, &w, 0.21).unwrap(), 2.0);
    assert_eq!(weighted_ecdf_quantile(&ys, &w, 0.99).unwrap(), 5.0);
    assert_eq!(weighted_ecdf_quantile(&ys, &[0.0, 0.0, 0.0, 2.0, 1.0], 0.7).unwrap(), 4.0);
    assert!(weighted_ecdf_quantile(&ys, &[0.0; 5], 0.5).is_err());
    assert!(weighted_ecdf_quantile(&ys, &[1.0; 4], 0.5).is_err());
}

#[test]
fn names_round_trip() {
    for m in [Method::TTree(1), Method::TForest(5), Method::MseTree(3), Method::MseForest(1), Method::Qrf] {
        assert_eq!(Method::from_str(&m.to_string()).unwrap(), m);
    }
    assert!(Method::from_str("forest").is_err());
    for e in [Effect::None, Effect::MeanOnly, Effect::VarianceOnly, Effect::MeanAndVariance] {
        assert_eq!(Effect::from_str(&e.to_string()).unwrap(), e);
    }
    for f in [DgpFamily::TreeNormal, DgpFamily::TreeLogNormal, DgpFamily::FriedmanNormal, DgpFamily::FriedmanLogNormal] {
        assert_eq!(DgpFamily::from_str(&f.to_string()).unwrap(), f);
    }
    assert_eq!(Dim::from_str("high").unwrap(), Dim::High);
}

fn without_timing(records: &[BenchmarkRecord]) -> Vec<Vec<String>> {
    records.iter().map(|r| r.fields()[..9].to_vec()).collect()
}

#[test]
fn benchmark_is_deterministic_and_summarised() {
    let specs = [
        DgpSpec { n_learn: 120, n_test: 60, ..DgpSpec::new(DgpFamily::TreeNormal, Effect::VarianceOnly, Dim::Low) },
        DgpSpec { n_learn: 120, n_test: 60, ..DgpSpec::new(DgpFamily::FriedmanLogNormal, Effect::MeanOnly, Dim::Low) },
    ];
    let methods = [Method::TTree(1), Method::TForest(1), Method::MseTree(1), Method::MseForest(1), Method::Qrf];
    let config = BenchmarkConfig {
        reps: 2,
        seed: 11,
        forest: ForestConfig { n_trees: 15, ..ForestConfig::default() },
        ..BenchmarkConfig::default()
    };
    let a = run_benchmark(&specs, &methods, &config);
    let b = run_benchmark(&specs, &methods, &config);
    assert_eq!(a.len(), 2 * 2 * 5);
    assert_eq!(without_timing(&a), without_timing(&b));
    let c = run_benchmark(&specs, &methods, &BenchmarkConfig { seed: 12, ..config });
    assert_ne!(without_timing(&a), without_timing(&c));
    for r in &a {
        assert!(r.error.is_none(), "{:?}", r.error);
        assert!(r.q10_risk.is_finite() && r.abs_err.is_finite() && r.q90_risk.is_finite());
        assert_eq!(r.nll_diff.is_nan(), r.method == Method::Qrf);
        assert!(r.fit_ms >= 0.0 && r.predict_ms >= 0.0);
    }
    let summary = summarize(&a);
    assert_eq!(summary.len(), 2 * 5);
    let first = &summary[0];
    let expected = median(a.iter().filter(|r| r.dgp == first.0 && r.method == first.3).map(|r| r.q90_risk));
    assert_eq!(first.4[3], expected);
    assert!(median(std::iter::empty()).is_nan());
    assert_eq!(median([3.0, f64::NAN, 1.0, 2.0]), 2.0);
}

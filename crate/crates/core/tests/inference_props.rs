use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trafo::inference::{
    bootstrap_p_value, independence_lr_test, model_based_bootstrap, prediction_interval, replication_seed,
    sample_responses, variable_importance, ImportanceRows, InferenceError, Permutation,
};
use trafo::simbench::{generate_n, DgpFamily, DgpSpec, Dim, Effect};
use trafo::{fit_forest, BaseDistribution, Column, Dataset, Family, ForestConfig, SampleMode, TreeConfig, WeightMode};

fn sim(effect: Effect, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_n(&DgpSpec::new(DgpFamily::TreeNormal, effect, Dim::Low), n, &mut rng).0
}

fn family(order: usize, data: &Dataset) -> Family {
    Family::for_responses(order, data.responses(), BaseDistribution::StandardNormal).unwrap()
}

fn config(n_trees: usize, seed: u64) -> ForestConfig {
    ForestConfig { n_trees, seed, ..ForestConfig::default() }
}

#[test]
fn interval_mass_for_fitted_models() {
    for (k, dist) in BaseDistribution::ALL.into_iter().enumerate() {
        let data = sim(Effect::MeanAndVariance, 150, k as u64);
        let fam = Family::for_responses(3, data.responses(), dist).unwrap();
        let forest = fit_forest(&data, &fam, &config(20, 1)).unwrap();
        for i in (0..150).step_by(15) {
            let m = forest.predict_params(&data.row(i), WeightMode::InBag).unwrap();
            for alpha in [0.1, 0.2, 0.5] {
                let pi = prediction_interval(&m, alpha).unwrap();
                assert!(pi.lower < pi.upper);
                if !pi.clamped {
                    let mass = m.cdf(pi.upper) - m.cdf(pi.lower);
                    assert!((mass - (1.0 - alpha)).abs() < 1e-6, "{dist:?}: {mass}");
                }
            }
        }
    }
    let data = sim(Effect::None, 50, 3);
    let m = fit_forest(&data, &family(1, &data), &config(2, 1)).unwrap().predict_params(&data.row(0), WeightMode::InBag).unwrap();
    assert!(matches!(prediction_interval(&m, 0.0), Err(InferenceError::InvalidAlpha(_))));
    assert!(matches!(prediction_interval(&m, 1.0), Err(InferenceError::InvalidAlpha(_))));
}

#[test]
fn importance_hooks_and_constant_columns() {
    let base = sim(Effect::VarianceOnly, 200, 4);
    let mut columns = base.columns().to_vec();
    columns.push(Column::continuous("const", vec![0.5; base.n()]));
    let data = Dataset::new(base.responses().to_vec(), columns).unwrap();
    let forest = fit_forest(&data, &family(1, &data), &config(30, 4)).unwrap();
    let identity = variable_importance(&forest, 1, ImportanceRows::OutOfBag, Permutation::Identity);
    assert!(identity.importance.iter().all(|&v| v == 0.0));
    let all = variable_importance(&forest, 1, ImportanceRows::All, Permutation::Identity);
    assert!(all.importance.iter().all(|&v| v == 0.0));
    let random = variable_importance(&forest, 5, ImportanceRows::OutOfBag, Permutation::Random);
    assert_eq!(random.importance.len(), data.n_columns());
    assert_eq!(random.importance[data.n_columns() - 1], 0.0);
    assert_eq!(random, variable_importance(&forest, 5, ImportanceRows::OutOfBag, Permutation::Random));
    // columns that no tree splits on contribute nothing
    for j in 0..data.n_columns() {
        if !forest.trees().iter().any(|t| t.root().uses_variable(j)) {
            assert_eq!(random.importance[j], 0.0);
        }
    }
}

#[test]
fn importance_ranks_the_variance_variable_first() {
    let mut wins = 0;
    for rep in 0..20 {
        let data = sim(Effect::VarianceOnly, 250, 200 + rep);
        let forest = fit_forest(&data, &family(1, &data), &config(100, rep)).unwrap();
        let vi = variable_importance(&forest, rep, ImportanceRows::OutOfBag, Permutation::Random).importance;
        let noise = vi[2..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        wins += (vi[1] > noise) as usize;
    }
    assert!(wins >= 16, "x2 most important in {wins}/20");
}

#[test]
fn bootstrap_smoke_and_support() {
    let data = sim(Effect::MeanOnly, 100, 5);
    let fam = family(2, &data);
    let forest = fit_forest(&data, &fam, &config(10, 5)).unwrap();
    let refits = model_based_bootstrap(&forest, 1, 3).unwrap();
    assert_eq!(refits.len(), 1);
    assert_eq!(refits[0].trees().len(), 10);
    let s = fam.basis.support();
    for r in refits[0].data().responses() {
        let y = r.exact_value().unwrap();
        assert!(s.contains(y));
    }
    assert_eq!(refits, model_based_bootstrap(&forest, 1, 3).unwrap());
    assert!(matches!(model_based_bootstrap(&forest, 0, 3), Err(InferenceError::TooFewReplications { .. })));
}

#[test]
fn bootstrap_sampling_matches_the_model() {
    // a root-only forest on a standard normal sample: every conditional model is ≈ Φ
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y: Vec<f64> = (0..2000).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
    let x: Vec<f64> = (0..2000).map(|i| i as f64).collect();
    let data = Dataset::new(y.into_iter().map(trafo::Response::exact).collect(), vec![Column::continuous("x", x)]).unwrap();
    let tree = TreeConfig { max_depth: Some(0), ..ForestConfig::default().tree };
    let forest = fit_forest(&data, &family(1, &data), &ForestConfig { n_trees: 1, subsample_fraction: 1.0, tree, ..config(1, 1) }).unwrap();
    let models: Vec<trafo::Model> = forest.predict_training(SampleMode::InBag).unwrap().into_iter().take(500).collect();
    let mut draws = sample_responses(&models, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let ks = draws
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let f = BaseDistribution::StandardNormal.cdf(v);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.1, "KS distance {ks}");
}

#[test]
fn lr_test_counting_and_sign() {
    assert_eq!(bootstrap_p_value(-1.0, &[0.0, 1.0, 2.0]), 1.0);
    assert_eq!(bootstrap_p_value(5.0, &[0.0, 1.0, 2.0]), 0.0);
    assert_eq!(bootstrap_p_value(1.0, &[0.0, 1.0, 2.0, 3.0]), 0.5);
    assert_ne!(replication_seed(1, 0), replication_seed(1, 1));
    assert_ne!(replication_seed(1, 0), replication_seed(2, 0));

    let data = sim(Effect::VarianceOnly, 120, 8);
    let fam = family(1, &data);
    let cfg = config(20, 8);
    assert!(matches!(independence_lr_test(&data, &fam, &cfg, 18, 1), Err(InferenceError::TooFewReplications { .. })));
    let test = independence_lr_test(&data, &fam, &cfg, 19, 1).unwrap();
    assert!(test.log_lr >= 0.0);
    assert_eq!(test.replicates.len(), 19);
    assert!(test.replicates.iter().all(|&r| r >= -1e-6));
    assert_eq!(test.p_value, bootstrap_p_value(test.log_lr, &test.replicates));
    assert_eq!(test, independence_lr_test(&data, &fam, &cfg, 19, 1).unwrap());
}

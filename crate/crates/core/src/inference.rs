//! Likelihood-based inference for fitted forests: prediction intervals,
//! permutation variable importance, model-based bootstrap and the
//! bootstrap likelihood-ratio test of independence.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::forest::{fit_forest, Forest, ForestConfig, ForestError, SampleMode};
use crate::tram::{Response, TramError, TransformationFamily, TransformationModel};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum InferenceError {
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("at least {min} replications are required, got {got}")]
    TooFewReplications { min: usize, got: usize },

    #[error(transparent)]
    Tram(#[from] TramError),

    #[error(transparent)]
    Forest(#[from] ForestError),

    #[error("replication {index}: {source}")]
    Replication { index: usize, source: ForestError },

    #[error("replication {index}: {source}")]
    Data { index: usize, source: DataError },
}

/// Central `1 − α` prediction interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    /// Whether either bound was clamped to the support.
    pub clamped: bool,
}

impl PredictionInterval {
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// `[Q(α/2), Q(1 − α/2)]` of the conditional distribution.
pub fn prediction_interval(model: &TransformationModel<f64>, alpha: f64) -> Result<PredictionInterval, InferenceError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::InvalidAlpha(alpha));
    }
    let (lower, cl) = model.quantile_clamped(alpha / 2.0)?;
    let (upper, cu) = model.quantile_clamped(1.0 - alpha / 2.0)?;
    Ok(PredictionInterval { lower, upper, alpha, clamped: cl || cu })
}

/// Rows on which each tree's importance term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImportanceRows {
    /// Rows not in the tree's subsample.
    #[default]
    OutOfBag,
    /// All learning rows.
    All,
}

/// Permutation applied to a predictor column; `Identity` is a test hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Permutation {
    #[default]
    Random,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    /// Mean increase in negative log-likelihood per variable.
    pub importance: Vec<f64>,
    pub seed: u64,
}

/// Permutation variable importance: for every tree and variable, the increase
/// of the tree's negative log-likelihood when the variable is permuted, averaged
/// over trees. Leaf parameters are looked up without refitting.
pub fn variable_importance(
    forest: &Forest,
    seed: u64,
    rows: ImportanceRows,
    permutation: Permutation,
) -> ImportanceReport {
    let data = forest.data();
    let n_cols = data.n_columns();
    let prepared = forest.prepared();
    let per_tree: Vec<Vec<f64>> = forest
        .trees()
        .par_iter()
        .enumerate()
        .map(|(t, tree)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let eval: Vec<usize> = match rows {
                ImportanceRows::OutOfBag => (0..data.n()).filter(|&i| !tree.in_subsample(i)).collect(),
                ImportanceRows::All => (0..data.n()).collect(),
            };
            let xs: Vec<Vec<f64>> = eval.iter().map(|&i| data.row(i)).collect();
            let nll = |xs: &[Vec<f64>]| -> f64 {
                eval.iter().zip(xs).map(|(&i, x)| -prepared.log_likelihood(i, &tree.leaf_for(x).theta)).sum()
            };
            let base = nll(&xs);
            (0..n_cols)
                .map(|j| {
                    let mut perm: Vec<usize> = (0..eval.len()).collect();
                    if permutation == Permutation::Random {
                        perm.shuffle(&mut rng);
                    }
                    if !tree.root().uses_variable(j) {
                        return 0.0;
                    }
                    let mut permuted = xs.clone();
                    for (r, &p) in perm.iter().enumerate() {
                        permuted[r][j] = xs[p][j];
                    }
                    nll(&permuted) - base
                })
                .collect()
        })
        .collect();
    let t = per_tree.len() as f64;
    let importance = (0..n_cols).map(|j| per_tree.iter().map(|v| v[j]).sum::<f64>() / t).collect();
    ImportanceReport { importance, seed }
}

/// Seed of replication `index` derived from a master seed (SplitMix64 finaliser).
pub fn replication_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One draw `ỹ_i = Q_i(U_i)` from each model (clamped to the support).
pub fn sample_responses<R: Rng + ?Sized>(
    models: &[TransformationModel<f64>],
    rng: &mut R,
) -> Result<Vec<f64>, TramError> {
    models
        .iter()
        .map(|m| {
            // open unit interval
            let u = loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    break u;
                }
            };
            m.quantile(u)
        })
        .collect()
}

fn refit(
    data: &Dataset,
    family: &TransformationFamily<f64>,
    config: &ForestConfig,
    y: Vec<f64>,
    index: usize,
) -> Result<Forest, InferenceError> {
    let resampled = data
        .with_responses(y.into_iter().map(Response::exact).collect())
        .map_err(|source| InferenceError::Data { index, source })?;
    fit_forest(&resampled, family, config).map_err(|source| InferenceError::Replication { index, source })
}

/// Model-based bootstrap: draws new responses from the forest's conditional
/// models at the learning rows and refits `k` forests with fresh seeds.
pub fn model_based_bootstrap(forest: &Forest, k: usize, seed: u64) -> Result<Vec<Forest>, InferenceError> {
    if k == 0 {
        return Err(InferenceError::TooFewReplications { min: 1, got: 0 });
    }
    let models = forest.predict_training(SampleMode::InBag)?;
    (0..k)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, index as u64));
            let y = sample_responses(&models, &mut rng)?;
            let config = ForestConfig { seed: replication_seed(seed ^ 0x5eed, index as u64), ..*forest.config() };
            refit(forest.data(), forest.family(), &config, y, index)
        })
        .collect()
}

/// Bootstrap likelihood-ratio test of independence between response and predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct LrTest {
    /// `Σ ℓ_i(θ̂_forest(x_i)) − Σ ℓ_i(θ̂_ML)` on the observed data.
    pub log_lr: f64,
    pub replicates: Vec<f64>,
    pub p_value: f64,
}

/// `K⁻¹ Σ_k I(replicate_k > observed)`.
pub fn bootstrap_p_value(observed: f64, replicates: &[f64]) -> f64 {
    replicates.iter().filter(|&&r| r > observed).count() as f64 / replicates.len() as f64
}

/// Fits a forest to `data`, computes the in-bag log-likelihood ratio against the
/// unconditional model and calibrates it by refitting on `k` response samples
/// drawn from the unconditional model.
pub fn independence_lr_test(
    data: &Dataset,
    family: &TransformationFamily<f64>,
    config: &ForestConfig,
    k: usize,
    seed: u64,
) -> Result<LrTest, InferenceError> {
    if k < 19 {
        return Err(InferenceError::TooFewReplications { min: 19, got: k });
    }
    let forest = fit_forest(data, family, config)?;
    // each likelihood ratio is taken against the unconditional fit to the same responses
    let null_ll = |f: &Forest| -> Result<f64, InferenceError> {
        let m = family.model(f.unconditional_theta().to_vec())?;
        Ok(f.data().responses().iter().map(|r| m.log_likelihood(r)).sum::<Result<f64, TramError>>()?)
    };
    let ml = family.model(forest.unconditional_theta().to_vec())?;
    let log_lr = forest.log_likelihood(SampleMode::InBag)? - null_ll(&forest)?;
    let null_models = vec![ml.clone(); data.n()];
    let replicates = (0..k)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, index as u64));
            let y = sample_responses(&null_models, &mut rng)?;
            let cfg = ForestConfig { seed: replication_seed(seed ^ 0x5eed, index as u64), ..*config };
            let f = refit(data, family, &cfg, y, index)?;
            let ll = f.log_likelihood(SampleMode::InBag).map_err(|source| InferenceError::Replication { index, source })?;
            Ok(ll - null_ll(&f)?)
        })
        .collect::<Result<Vec<f64>, InferenceError>>()?;
    let p_value = bootstrap_p_value(log_lr, &replicates);
    Ok(LrTest { log_lr, replicates, p_value })
}

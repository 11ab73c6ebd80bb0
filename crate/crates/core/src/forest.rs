//! Transformation forests: subsampled tree ensembles whose leaf co-membership
//! counts define nearest-neighbour weights for a local maximum likelihood fit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::Dataset;
use crate::tram::{PreparedData, TramError, TransformationFamily, TransformationModel};
use crate::tree::{self, Tree, TreeConfig, TreeError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ForestError {
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(String),

    #[error("tree {index} failed twice: {source}")]
    Tree { index: usize, source: TreeError },

    #[error("no learning observation shares a leaf with the query point")]
    Unpredictable,

    #[error("local likelihood fit failed: {0}")]
    Fit(#[from] TramError),

    #[error("stored forest is inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Fraction of rows drawn without replacement for each tree.
    pub subsample_fraction: f64,
    /// Candidate variables per node; `None` uses `⌈J/3⌉`.
    pub mtry: Option<usize>,
    pub tree: TreeConfig,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample_fraction: 0.632,
            mtry: None,
            tree: TreeConfig { stop_on_alpha: false, ..TreeConfig::default() },
            seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig("at least one tree is needed".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(ForestError::InvalidConfig(format!(
                "subsample fraction must lie in (0, 1], got {}",
                self.subsample_fraction
            )));
        }
        if self.mtry == Some(0) {
            return Err(ForestError::InvalidConfig("mtry must be positive".into()));
        }
        Ok(())
    }

    /// `⌊fraction · n⌋`, at least one.
    pub fn subsample_size(&self, n: usize) -> usize {
        ((self.subsample_fraction * n as f64).floor() as usize).clamp(1, n)
    }

    pub fn effective_mtry(&self, n_columns: usize) -> usize {
        self.mtry.unwrap_or(n_columns.div_ceil(3)).clamp(1, n_columns)
    }
}

/// Random stream for tree `index`, independent of scheduling.
pub(crate) fn tree_rng(seed: u64, index: usize, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((index as u64) << 1) | attempt);
    rng
}

/// Which trees contribute to a weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    InBag,
    /// Query is learning row `i`: trees whose subsample contains `i` are skipped.
    OutOfBag(usize),
}

/// Whether forest log-likelihoods on the learning sample use in-bag or out-of-bag weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    InBag,
    OutOfBag,
}

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    data: Dataset,
    family: TransformationFamily<f64>,
    prepared: PreparedData<f64>,
    config: ForestConfig,
    /// Unconditional maximum likelihood estimate; warm start for local fits.
    unconditional: Vec<f64>,
}

impl PartialEq for Forest {
    fn eq(&self, other: &Self) -> bool {
        self.trees == other.trees
            && self.data == other.data
            && self.family == other.family
            && self.config == other.config
            && self.unconditional == other.unconditional
    }
}

/// Grows `config.n_trees` trees on independent subsamples of `data`.
pub fn fit_forest(
    data: &Dataset,
    family: &TransformationFamily<f64>,
    config: &ForestConfig,
) -> Result<Forest, ForestError> {
    config.validate()?;
    let prepared = family.prepare(data.responses());
    let all: Vec<(usize, f64)> = (0..data.n()).map(|i| (i, 1.0)).collect();
    let unconditional = prepared.fit(&all, None, &config.tree.fit)?.model.theta().to_vec();
    let tree_config = TreeConfig { mtry: Some(config.effective_mtry(data.n_columns())), ..config.tree };
    let n_sub = config.subsample_size(data.n());

    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|index| {
            let mut last = None;
            for attempt in 0..2 {
                let mut rng = tree_rng(config.seed, index, attempt);
                let mut sub = rand::seq::index::sample(&mut rng, data.n(), n_sub).into_vec();
                sub.sort_unstable();
                match tree::grow_prepared(data, &prepared, &sub, &tree_config, Some(&unconditional), &mut rng) {
                    Ok(t) => return Ok(t),
                    Err(e) => last = Some(e),
                }
            }
            Err(ForestError::Tree { index, source: last.expect("two attempts made") })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Forest { trees, data: data.clone(), family: family.clone(), prepared, config: *config, unconditional })
}

impl Forest {
    /// Reassembles a stored forest; the unconditional estimate is refitted.
    pub fn from_parts(
        trees: Vec<Tree>,
        data: Dataset,
        family: TransformationFamily<f64>,
        config: ForestConfig,
    ) -> Result<Self, ForestError> {
        config.validate()?;
        if trees.is_empty() {
            return Err(ForestError::Inconsistent("no trees".into()));
        }
        for (t, tree) in trees.iter().enumerate() {
            if tree.subsample().last().is_some_and(|&i| i >= data.n()) {
                return Err(ForestError::Inconsistent(format!("tree {t} references rows beyond the data")));
            }
        }
        let prepared = family.prepare(data.responses());
        let all: Vec<(usize, f64)> = (0..data.n()).map(|i| (i, 1.0)).collect();
        let unconditional = prepared.fit(&all, None, &config.tree.fit)?.model.theta().to_vec();
        Ok(Self { trees, data, family, prepared, config, unconditional })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn family(&self) -> &TransformationFamily<f64> {
        &self.family
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub(crate) fn prepared(&self) -> &PreparedData<f64> {
        &self.prepared
    }

    pub fn unconditional_theta(&self) -> &[f64] {
        &self.unconditional
    }

    /// `w_i(x) = Σ_t I(x and x_i share a leaf of tree t)` over the learning sample.
    pub fn weights(&self, x: &[f64], mode: WeightMode) -> Vec<f64> {
        let mut w = vec![0.0; self.data.n()];
        for tree in &self.trees {
            if let WeightMode::OutOfBag(i) = mode {
                if tree.in_subsample(i) {
                    continue;
                }
            }
            for &i in &tree.leaf_for(x).members {
                w[i] += 1.0;
            }
        }
        w
    }

    /// Local maximum likelihood estimate `θ̂(x)` under forest weights.
    pub fn predict_params(&self, x: &[f64], mode: WeightMode) -> Result<TransformationModel<f64>, ForestError> {
        let w = self.weights(x, mode);
        self.fit_weighted(&w)
    }

    pub(crate) fn fit_weighted(&self, w: &[f64]) -> Result<TransformationModel<f64>, ForestError> {
        let subset: Vec<(usize, f64)> = w.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, &v)| (i, v)).collect();
        if subset.is_empty() {
            return Err(ForestError::Unpredictable);
        }
        Ok(self.prepared.fit(&subset, Some(&self.unconditional), &self.config.tree.fit)?.model)
    }

    /// Conditional models for every row of `rows` (predictor rows), in order.
    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<TransformationModel<f64>>, ForestError> {
        rows.par_iter().map(|x| self.predict_params(x, WeightMode::InBag)).collect()
    }

    /// Conditional models at the learning rows.
    pub fn predict_training(&self, mode: SampleMode) -> Result<Vec<TransformationModel<f64>>, ForestError> {
        (0..self.data.n())
            .into_par_iter()
            .map(|i| {
                let m = match mode {
                    SampleMode::InBag => WeightMode::InBag,
                    SampleMode::OutOfBag => WeightMode::OutOfBag(i),
                };
                self.predict_params(&self.data.row(i), m)
            })
            .collect()
    }

    /// `Σ_i ℓ_i(θ̂(x_i))` on the learning sample.
    pub fn log_likelihood(&self, mode: SampleMode) -> Result<f64, ForestError> {
        let models = self.predict_training(mode)?;
        let mut total = 0.0;
        for (model, resp) in models.iter().zip(self.data.responses()) {
            total += model.log_likelihood(resp)?;
        }
        Ok(total)
    }
}

//! Simulation designs with known conditional distributions, proper scoring
//! measures against the truth, and a reproducible benchmark runner.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::basis::BaseDistribution;
use crate::data::{Column, Dataset};
use crate::forest::{fit_forest, ForestConfig, WeightMode};
use crate::inference::replication_seed;
use crate::tram::{Response, TransformationFamily, TransformationModel};
use crate::tree::{grow_tree, SplitMode, TreeConfig};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BenchError {
    #[error("weights must be non-negative with a positive sum")]
    ZeroWeights,

    #[error("tau must lie in (0, 1), got {0}")]
    InvalidTau(f64),

    #[error("unknown {what} `{name}`; expected one of: {expected}")]
    UnknownName { what: &'static str, name: String, expected: String },

    #[error("length mismatch: {0}")]
    Length(String),
}

pub fn friedman1(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

/// Friedman 1 mapped affinely from its range `[0, 30]` onto `[−1.5, 1.5]`.
pub fn friedman1_star(x: &[f64]) -> f64 {
    friedman1(x) / 10.0 - 1.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DgpFamily {
    TreeNormal,
    TreeLogNormal,
    FriedmanNormal,
    FriedmanLogNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Effect {
    None,
    MeanOnly,
    VarianceOnly,
    MeanAndVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Low,
    High,
}

macro_rules! named_enum {
    ($ty:ty, $what:literal, [$(($variant:expr, $name:literal)),* $(,)?]) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                $(if self == $variant { return $name; })*
                unreachable!()
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = BenchError;

            fn from_str(s: &str) -> Result<Self, BenchError> {
                $(if s.eq_ignore_ascii_case($name) { return Ok($variant); })*
                Err(BenchError::UnknownName {
                    what: $what,
                    name: s.to_string(),
                    expected: [$($name),*].join(", "),
                })
            }
        }
    };
}

named_enum!(DgpFamily, "dgp", [
    (DgpFamily::TreeNormal, "tree"),
    (DgpFamily::TreeLogNormal, "tree-lognormal"),
    (DgpFamily::FriedmanNormal, "friedman"),
    (DgpFamily::FriedmanLogNormal, "friedman-lognormal"),
]);
named_enum!(Effect, "effect", [
    (Effect::None, "h2a"),
    (Effect::MeanOnly, "h2b"),
    (Effect::VarianceOnly, "h2c"),
    (Effect::MeanAndVariance, "h2c+"),
]);
named_enum!(Dim, "dim", [(Dim::Low, "low"), (Dim::High, "high")]);

impl DgpFamily {
    pub fn is_log_normal(self) -> bool {
        matches!(self, DgpFamily::TreeLogNormal | DgpFamily::FriedmanLogNormal)
    }

    fn is_tree(self) -> bool {
        matches!(self, DgpFamily::TreeNormal | DgpFamily::TreeLogNormal)
    }

    /// Learning sample sizes used in the original simulation study.
    pub fn default_n_learn(self) -> usize {
        match self {
            DgpFamily::TreeNormal => 250,
            DgpFamily::TreeLogNormal => 2500,
            DgpFamily::FriedmanNormal | DgpFamily::FriedmanLogNormal => 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub family: DgpFamily,
    pub effect: Effect,
    pub dim: Dim,
    pub n_learn: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(family: DgpFamily, effect: Effect, dim: Dim) -> Self {
        Self { family, effect, dim, n_learn: family.default_n_learn(), n_test: 250, seed: 42 }
    }

    /// Number of predictors: informative ones plus 5 (low) or 50 (high) noise variables.
    pub fn n_columns(&self) -> usize {
        let informative = if self.family.is_tree() { 2 } else { 10 };
        informative + if self.dim == Dim::Low { 5 } else { 50 }
    }

    fn has_mean(&self) -> bool {
        matches!(self.effect, Effect::MeanOnly | Effect::MeanAndVariance)
    }

    fn has_variance(&self) -> bool {
        matches!(self.effect, Effect::VarianceOnly | Effect::MeanAndVariance)
    }

    /// True `(μ(x), σ(x))` of the (log-)normal response.
    pub fn params(&self, x: &[f64]) -> (f64, f64) {
        if self.family.is_tree() {
            let mu = if self.has_mean() && x[0] > 0.5 { 1.0 } else { 0.0 };
            let sigma = if self.has_variance() && x[1] > 0.5 { 2.0 } else { 1.0 };
            (mu, sigma)
        } else {
            let mu = if self.has_mean() { friedman1_star(&x[0..5]) } else { 0.0 };
            let sigma = if self.has_variance() { friedman1_star(&x[5..10]).exp() } else { 1.0 };
            (mu, sigma)
        }
    }
}

/// True conditional distributions of generated rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthOracle {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Responses are `exp` of the normal variable.
    pub log_normal: bool,
}

impl TruthOracle {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn log_density(&self, i: usize, y: f64) -> f64 {
        let n = BaseDistribution::StandardNormal;
        if self.log_normal {
            if !(y > 0.0) {
                return f64::NEG_INFINITY;
            }
            let ly = y.ln();
            n.log_pdf((ly - self.mean[i]) / self.sd[i]) - self.sd[i].ln() - ly
        } else {
            n.log_pdf((y - self.mean[i]) / self.sd[i]) - self.sd[i].ln()
        }
    }

    pub fn cdf(&self, i: usize, y: f64) -> f64 {
        let n = BaseDistribution::StandardNormal;
        if self.log_normal {
            if !(y > 0.0) {
                return 0.0;
            }
            n.cdf((y.ln() - self.mean[i]) / self.sd[i])
        } else {
            n.cdf((y - self.mean[i]) / self.sd[i])
        }
    }

    pub fn quantile(&self, i: usize, tau: f64) -> f64 {
        let z: f64 = BaseDistribution::StandardNormal.quantile(tau).expect("tau in (0, 1)");
        let q = self.mean[i] + self.sd[i] * z;
        if self.log_normal {
            q.exp()
        } else {
            q
        }
    }
}

/// Draws `n` rows with i.i.d. uniform predictors.
pub fn generate_n<R: Rng + ?Sized>(spec: &DgpSpec, n: usize, rng: &mut R) -> (Dataset, TruthOracle) {
    let j = spec.n_columns();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..j).map(|_| rng.random::<f64>()).collect()).collect();
    let mut mean = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for x in &rows {
        let (mu, sigma) = spec.params(x);
        let z: f64 = StandardNormal.sample(rng);
        let v = mu + sigma * z;
        mean.push(mu);
        sd.push(sigma);
        y.push(if spec.family.is_log_normal() { v.exp() } else { v });
    }
    let columns = (0..j)
        .map(|c| Column::continuous(format!("x{}", c + 1), rows.iter().map(|r| r[c]).collect()))
        .collect();
    let data = Dataset::new(y.into_iter().map(Response::exact).collect(), columns).expect("generated data is valid");
    (data, TruthOracle { mean, sd, log_normal: spec.family.is_log_normal() })
}

/// Draws a learning sample of `spec.n_learn` rows.
pub fn generate<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> (Dataset, TruthOracle) {
    generate_n(spec, spec.n_learn, rng)
}

/// `Σ −ℓ_i(competitor) − Σ −ℓ_i(truth)`.
pub fn nll_difference(
    models: &[TransformationModel<f64>],
    truth: &TruthOracle,
    y: &[f64],
) -> Result<f64, BenchError> {
    if models.len() != y.len() || truth.len() != y.len() {
        return Err(BenchError::Length(format!("{} models, {} truths, {} responses", models.len(), truth.len(), y.len())));
    }
    let mut diff = 0.0;
    for (i, (m, &yi)) in models.iter().zip(y).enumerate() {
        let ll = m.log_likelihood(&Response::exact(yi)).unwrap_or(f64::NEG_INFINITY);
        diff += truth.log_density(i, yi) - ll;
    }
    Ok(diff)
}

/// `ρ_τ(u) = u (τ − I(u < 0))`
pub fn check_loss(u: f64, tau: f64) -> f64 {
    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
}

/// Mean over rows of `ρ_τ(y − q̂) − ρ_τ(y − q_true)`.
pub fn check_risk(predicted: &[f64], truth: &[f64], y: &[f64], tau: f64) -> Result<f64, BenchError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(BenchError::InvalidTau(tau));
    }
    if predicted.len() != y.len() || truth.len() != y.len() || y.is_empty() {
        return Err(BenchError::Length(format!("{} predictions, {} truths, {} responses", predicted.len(), truth.len(), y.len())));
    }
    let total: f64 = (0..y.len())
        .map(|i| check_loss(y[i] - predicted[i], tau) - check_loss(y[i] - truth[i], tau))
        .sum();
    Ok(total / y.len() as f64)
}

/// Smallest `y` whose normalised cumulative weight reaches `tau`.
pub fn weighted_ecdf_quantile(ys: &[f64], weights: &[f64], tau: f64) -> Result<f64, BenchError> {
    if ys.len() != weights.len() {
        return Err(BenchError::Length(format!("{} values, {} weights", ys.len(), weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(BenchError::ZeroWeights);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(BenchError::ZeroWeights);
    }
    let mut order: Vec<usize> = (0..ys.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        // relative slack absorbs rounding in the running sum
        if cum / total >= tau - 1e-12 {
            return Ok(ys[i]);
        }
    }
    Ok(ys[*order.last().expect("positive weight exists")])
}

/// Competing methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Transformation tree of Bernstein order `M`.
    TTree(usize),
    /// Transformation forest of order `M`.
    TForest(usize),
    /// Variance-reduction tree with transformation-model leaves.
    MseTree(usize),
    /// Variance-reduction forest with forest-weighted transformation models.
    MseForest(usize),
    /// Weighted empirical quantiles from variance-reduction forest weights.
    Qrf,
}

impl Method {
    pub const NAMES: &'static str = "ttree1, ttree5, tforest1, tforest5, msetree1, msetree5, mseforest1, mseforest5, qrf";

    /// Whether the method predicts a full distribution (and hence a likelihood).
    pub fn has_density(self) -> bool {
        !matches!(self, Method::Qrf)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::TTree(m) => write!(f, "ttree{m}"),
            Method::TForest(m) => write!(f, "tforest{m}"),
            Method::MseTree(m) => write!(f, "msetree{m}"),
            Method::MseForest(m) => write!(f, "mseforest{m}"),
            Method::Qrf => f.write_str("qrf"),
        }
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        let s = s.trim().to_ascii_lowercase();
        if s == "qrf" {
            return Ok(Method::Qrf);
        }
        let unknown = || BenchError::UnknownName { what: "method", name: s.clone(), expected: Method::NAMES.into() };
        let split = s.find(|c: char| c.is_ascii_digit()).ok_or_else(unknown)?;
        let (stem, order) = s.split_at(split);
        let m: usize = order.parse().map_err(|_| unknown())?;
        if m == 0 {
            return Err(unknown());
        }
        match stem {
            "ttree" => Ok(Method::TTree(m)),
            "tforest" => Ok(Method::TForest(m)),
            "msetree" => Ok(Method::MseTree(m)),
            "mseforest" => Ok(Method::MseForest(m)),
            _ => Err(unknown()),
        }
    }
}

/// One method on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRecord {
    pub dgp: DgpFamily,
    pub effect: Effect,
    pub dim: Dim,
    pub method: Method,
    pub rep: usize,
    pub nll_diff: f64,
    pub q10_risk: f64,
    /// Difference in mean absolute error of the predicted median.
    pub abs_err: f64,
    pub q90_risk: f64,
    pub fit_ms: f64,
    pub predict_ms: f64,
    pub error: Option<String>,
}

impl BenchmarkRecord {
    pub const HEADER: [&'static str; 11] =
        ["dgp", "effect", "dim", "method", "rep", "nll_diff", "q10_risk", "abs_err", "q90_risk", "fit_ms", "predict_ms"];

    pub fn fields(&self) -> [String; 11] {
        [
            self.dgp.to_string(),
            self.effect.to_string(),
            self.dim.to_string(),
            self.method.to_string(),
            self.rep.to_string(),
            self.nll_diff.to_string(),
            self.q10_risk.to_string(),
            self.abs_err.to_string(),
            self.q90_risk.to_string(),
            self.fit_ms.to_string(),
            self.predict_ms.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkConfig {
    pub reps: usize,
    pub seed: u64,
    /// Forest template; `seed` is replaced per replication.
    pub forest: ForestConfig,
    /// Tree template for single-tree methods.
    pub tree: TreeConfig,
    pub dist: BaseDistribution,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            reps: 2,
            seed: 42,
            forest: ForestConfig::default(),
            tree: TreeConfig::default(),
            dist: BaseDistribution::StandardNormal,
        }
    }
}

/// Seed of cell `(spec, rep)` under master `seed`.
pub fn cell_seed(seed: u64, spec: usize, rep: usize) -> u64 {
    replication_seed(replication_seed(seed, spec as u64), rep as u64)
}

const TAUS: [f64; 3] = [0.1, 0.5, 0.9];

struct Evaluation {
    nll_diff: f64,
    risks: [f64; 3],
}

fn evaluate(
    models: Option<&[TransformationModel<f64>]>,
    quantiles: &[[f64; 3]],
    truth: &TruthOracle,
    y: &[f64],
) -> Result<Evaluation, String> {
    let nll_diff = match models {
        Some(m) => nll_difference(m, truth, y).map_err(|e| e.to_string())?,
        None => f64::NAN,
    };
    let mut risks = [0.0; 3];
    for (k, &tau) in TAUS.iter().enumerate() {
        let pred: Vec<f64> = quantiles.iter().map(|q| q[k]).collect();
        let tq: Vec<f64> = (0..y.len()).map(|i| truth.quantile(i, tau)).collect();
        risks[k] = check_risk(&pred, &tq, y, tau).map_err(|e| e.to_string())?;
    }
    // absolute error rather than the halved check loss at the median
    risks[1] *= 2.0;
    Ok(Evaluation { nll_diff, risks })
}

fn model_quantiles(models: &[TransformationModel<f64>]) -> Result<Vec<[f64; 3]>, String> {
    models
        .iter()
        .map(|m| {
            let mut q = [0.0; 3];
            for (k, &tau) in TAUS.iter().enumerate() {
                q[k] = m.quantile(tau).map_err(|e| e.to_string())?;
            }
            Ok(q)
        })
        .collect()
}

/// Fits `method` on `learn`, predicts the test rows; returns
/// `(models, quantiles, fit_ms, predict_ms)`.
#[allow(clippy::type_complexity)]
fn run_method(
    method: Method,
    learn: &Dataset,
    test_rows: &[Vec<f64>],
    config: &BenchmarkConfig,
    seed: u64,
) -> Result<(Option<Vec<TransformationModel<f64>>>, Vec<[f64; 3]>, f64, f64), String> {
    let order = match method {
        Method::TTree(m) | Method::TForest(m) | Method::MseTree(m) | Method::MseForest(m) => m,
        Method::Qrf => 1,
    };
    let family = TransformationFamily::for_responses(order, learn.responses(), config.dist).map_err(|e| e.to_string())?;
    let rows: Vec<usize> = (0..learn.n()).collect();
    let start = Instant::now();
    match method {
        Method::TTree(_) | Method::MseTree(_) => {
            let split_mode = if matches!(method, Method::MseTree(_)) { SplitMode::ExhaustiveMse } else { config.tree.split_mode };
            let tc = TreeConfig { split_mode, ..config.tree };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tree = grow_tree(learn, &family, &rows, &tc, &mut rng).map_err(|e| e.to_string())?;
            let fit_ms = start.elapsed().as_secs_f64() * 1e3;
            let start = Instant::now();
            let models: Vec<_> = test_rows.iter().map(|x| tree.predict_model(x)).collect();
            let q = model_quantiles(&models)?;
            Ok((Some(models), q, fit_ms, start.elapsed().as_secs_f64() * 1e3))
        }
        Method::TForest(_) | Method::MseForest(_) | Method::Qrf => {
            let mut fc = ForestConfig { seed, ..config.forest };
            if !matches!(method, Method::TForest(_)) {
                fc.tree.split_mode = SplitMode::ExhaustiveMse;
            }
            let forest = fit_forest(learn, &family, &fc).map_err(|e| e.to_string())?;
            let fit_ms = start.elapsed().as_secs_f64() * 1e3;
            let start = Instant::now();
            if method == Method::Qrf {
                let ys: Vec<f64> = learn.responses().iter().map(|r| r.exact_value().unwrap_or(f64::NAN)).collect();
                let q = test_rows
                    .par_iter()
                    .map(|x| {
                        let w = forest.weights(x, WeightMode::InBag);
                        let mut q = [0.0; 3];
                        for (k, &tau) in TAUS.iter().enumerate() {
                            q[k] = weighted_ecdf_quantile(&ys, &w, tau).map_err(|e| e.to_string())?;
                        }
                        Ok(q)
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                Ok((None, q, fit_ms, start.elapsed().as_secs_f64() * 1e3))
            } else {
                let models = forest.predict_many(test_rows).map_err(|e| e.to_string())?;
                let q = model_quantiles(&models)?;
                Ok((Some(models), q, fit_ms, start.elapsed().as_secs_f64() * 1e3))
            }
        }
    }
}

/// Runs every method on `config.reps` fresh learning/test pairs of every spec.
/// Failed cells are recorded with `NaN` metrics and an error message.
/// The likelihood column is `NaN` for `qrf`, which predicts no density.
pub fn run_benchmark(specs: &[DgpSpec], methods: &[Method], config: &BenchmarkConfig) -> Vec<BenchmarkRecord> {
    let cells: Vec<(usize, usize)> =
        (0..specs.len()).flat_map(|s| (0..config.reps).map(move |r| (s, r))).collect();
    cells
        .par_iter()
        .flat_map_iter(|&(s, rep)| {
            let spec = &specs[s];
            let seed = cell_seed(config.seed ^ spec.seed, s, rep);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (learn, _) = generate_n(spec, spec.n_learn, &mut rng);
            let (test, truth) = generate_n(spec, spec.n_test, &mut rng);
            let test_rows: Vec<Vec<f64>> = (0..test.n()).map(|i| test.row(i)).collect();
            let y: Vec<f64> = test.responses().iter().map(|r| r.exact_value().expect("generated responses are exact")).collect();
            methods
                .iter()
                .enumerate()
                .map(|(k, &method)| {
                    let method_seed = replication_seed(seed, k as u64);
                    let mut record = BenchmarkRecord {
                        dgp: spec.family,
                        effect: spec.effect,
                        dim: spec.dim,
                        method,
                        rep,
                        nll_diff: f64::NAN,
                        q10_risk: f64::NAN,
                        abs_err: f64::NAN,
                        q90_risk: f64::NAN,
                        fit_ms: f64::NAN,
                        predict_ms: f64::NAN,
                        error: None,
                    };
                    let outcome = run_method(method, &learn, &test_rows, config, method_seed).and_then(|(models, q, f, p)| {
                        record.fit_ms = f;
                        record.predict_ms = p;
                        evaluate(models.as_deref(), &q, &truth, &y)
                    });
                    match outcome {
                        Ok(ev) => {
                            record.nll_diff = ev.nll_diff;
                            record.q10_risk = ev.risks[0];
                            record.abs_err = ev.risks[1];
                            record.q90_risk = ev.risks[2];
                        }
                        Err(e) => record.error = Some(e),
                    }
                    record
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Median of the finite values, `NaN` when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per `(dgp, effect, dim, method)` medians of the metrics, in first-seen order.
pub fn summarize(records: &[BenchmarkRecord]) -> Vec<(DgpFamily, Effect, Dim, Method, [f64; 4])> {
    let mut keys: Vec<(DgpFamily, Effect, Dim, Method)> = Vec::new();
    for r in records {
        let k = (r.dgp, r.effect, r.dim, r.method);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|k| {
            let group: Vec<&BenchmarkRecord> =
                records.iter().filter(|r| (r.dgp, r.effect, r.dim, r.method) == k).collect();
            let m = [
                median(group.iter().map(|r| r.nll_diff)),
                median(group.iter().map(|r| r.q10_risk)),
                median(group.iter().map(|r| r.abs_err)),
                median(group.iter().map(|r| r.q90_risk)),
            ];
            (k.0, k.1, k.2, k.3, m)
        })
        .collect()
}

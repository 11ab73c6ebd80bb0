//! Transformation trees: recursive partitioning driven by permutation tests of
//! independence between model scores and predictors.

pub mod independence;
pub mod split;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::data::{ColumnKind, Dataset};
use crate::tram::{FitConfig, PreparedData, TramError, TransformationFamily, TransformationModel};

pub use independence::{
    linear_statistic_moments, selection_design, test_linear_statistic, variable_selection, CandidateTest,
    LinearStatistic, Selection, TestResult,
};
pub use split::{split_exhaustive_loglik, split_maxstat, split_mse, ExhaustiveSplit, ScoredSplit};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TreeError {
    #[error("invalid tree configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("variance-reduction splitting needs exact responses (row {row} is censored)")]
    UnsupportedResponse { row: usize },

    #[error("model fit failed in the root node: {0}")]
    Fit(#[from] TramError),
}

/// How a node is split once a variable has been selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Maximally selected standardised score statistic.
    #[default]
    ScoreMaxStat,
    /// Refit both children for every candidate and maximise the log-likelihood.
    ExhaustiveLikelihood,
    /// CART variance reduction on exact responses; no significance testing.
    ExhaustiveMse,
}

/// Shape of the standardised statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TestStatistic {
    /// `(T − E)ᵀ Cov⁺ (T − E)`, chi-squared reference.
    #[default]
    Quadratic,
    /// `max |T − E| / sd`, Bonferroni normal bound.
    MaxAbs,
}

/// Transformation `g` of the candidate variable in the selection statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionScores {
    /// Identity for continuous, ranks for ordinal, indicators for categorical.
    #[default]
    Linear,
    /// Maximally selected statistic over cutpoints (ordered variables only).
    MaxSelected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub alpha: f64,
    pub bonferroni: bool,
    /// Stop splitting when no adjusted p-value is below `alpha`.
    pub stop_on_alpha: bool,
    pub minsplit: usize,
    pub minbucket: usize,
    /// Candidate variables per node; `None` uses all.
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
    pub split_mode: SplitMode,
    pub test_stat: TestStatistic,
    pub selection: SelectionScores,
    pub fit: FitConfig<f64>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self::with_minsplit(25)
    }
}

impl TreeConfig {
    /// Defaults with `minbucket = ⌈minsplit / 3⌉`.
    pub fn with_minsplit(minsplit: usize) -> Self {
        Self {
            alpha: 0.05,
            bonferroni: true,
            stop_on_alpha: true,
            minsplit,
            minbucket: minsplit.div_ceil(3).max(1),
            mtry: None,
            max_depth: None,
            split_mode: SplitMode::ScoreMaxStat,
            test_stat: TestStatistic::Quadratic,
            selection: SelectionScores::Linear,
            fit: FitConfig::default(),
        }
    }

    /// Checks the configuration against a family with `params` coefficients.
    pub fn validate(&self, params: usize) -> Result<(), TreeError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(TreeError::InvalidConfig(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.minbucket == 0 {
            return Err(TreeError::InvalidConfig("minbucket must be positive".into()));
        }
        if self.minsplit < 2 * self.minbucket {
            return Err(TreeError::InvalidConfig(format!(
                "minsplit ({}) must be at least twice minbucket ({})",
                self.minsplit, self.minbucket
            )));
        }
        if self.split_mode != SplitMode::ExhaustiveMse && self.minbucket < params + 1 {
            return Err(TreeError::InvalidConfig(format!(
                "minbucket ({}) must be at least the number of parameters plus one ({})",
                self.minbucket,
                params + 1
            )));
        }
        if self.mtry == Some(0) {
            return Err(TreeError::InvalidConfig("mtry must be positive".into()));
        }
        Ok(())
    }
}

/// Left rule of a binary split.
#[derive(Debug, Clone, PartialEq)]
pub enum Cut {
    /// `x ≤ cutpoint` goes left.
    Threshold(f64),
    /// Level codes in `left` go left; levels not seen while fitting go left
    /// iff `unseen_left`.
    Levels { left: Vec<usize>, right: Vec<usize>, unseen_left: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub variable: usize,
    pub cut: Cut,
}

impl SplitRecord {
    /// Whether the predictor row `x` is sent to the left child.
    pub fn goes_left(&self, x: &[f64]) -> bool {
        self.goes_left_value(x[self.variable])
    }

    pub fn goes_left_value(&self, v: f64) -> bool {
        match &self.cut {
            Cut::Threshold(c) => v <= *c,
            Cut::Levels { left, right, unseen_left } => {
                let code = v as usize;
                if left.contains(&code) {
                    true
                } else if right.contains(&code) {
                    false
                } else {
                    *unseen_left
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub id: usize,
    pub theta: Vec<f64>,
    pub n: usize,
    /// Sorted learning-sample indices of the fitting observations in this leaf.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split { id: usize, split: SplitRecord, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf(Leaf),
}

impl TreeNode {
    pub fn id(&self) -> usize {
        match self {
            TreeNode::Split { id, .. } => *id,
            TreeNode::Leaf(l) => l.id,
        }
    }

    /// Leaf reached by predictor row `x`.
    pub fn leaf_for(&self, x: &[f64]) -> &Leaf {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf(l) => return l,
                TreeNode::Split { split, left, right, .. } => {
                    node = if split.goes_left(x) { left } else { right };
                }
            }
        }
    }

    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Leaf(l) => out.push(l),
                TreeNode::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Whether `variable` is used by any split.
    pub fn uses_variable(&self, variable: usize) -> bool {
        match self {
            TreeNode::Leaf(_) => false,
            TreeNode::Split { split, left, right, .. } => {
                split.variable == variable || left.uses_variable(variable) || right.uses_variable(variable)
            }
        }
    }
}

/// A fitted transformation tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    root: TreeNode,
    family: TransformationFamily<f64>,
    subsample: Vec<usize>,
}

impl Tree {
    /// Assembles a tree from stored parts; `subsample` is sorted on the way in.
    pub fn from_parts(root: TreeNode, family: TransformationFamily<f64>, mut subsample: Vec<usize>) -> Self {
        subsample.sort_unstable();
        Self { root, family, subsample }
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    pub fn family(&self) -> &TransformationFamily<f64> {
        &self.family
    }

    /// Sorted learning-sample indices used to grow the tree.
    pub fn subsample(&self) -> &[usize] {
        &self.subsample
    }

    pub fn in_subsample(&self, i: usize) -> bool {
        self.subsample.binary_search(&i).is_ok()
    }

    pub fn is_root_only(&self) -> bool {
        matches!(self.root, TreeNode::Leaf(_))
    }

    pub fn first_split(&self) -> Option<&SplitRecord> {
        match &self.root {
            TreeNode::Split { split, .. } => Some(split),
            TreeNode::Leaf(_) => None,
        }
    }

    pub fn leaf_for(&self, x: &[f64]) -> &Leaf {
        self.root.leaf_for(x)
    }

    pub fn predict_theta(&self, x: &[f64]) -> &[f64] {
        &self.leaf_for(x).theta
    }

    pub fn predict_model(&self, x: &[f64]) -> TransformationModel<f64> {
        self.family
            .model(self.predict_theta(x).to_vec())
            .expect("leaf coefficients are strictly increasing")
    }

    /// Leaf co-membership weights over a learning sample of size `n`.
    pub fn weights(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        for &i in &self.leaf_for(x).members {
            w[i] = 1.0;
        }
        w
    }
}

/// Grows a transformation tree (or, with [`SplitMode::ExhaustiveMse`], a
/// variance-reduction tree with transformation-model leaves) on `subsample`.
pub fn grow_tree<R: Rng + ?Sized>(
    data: &Dataset,
    family: &TransformationFamily<f64>,
    subsample: &[usize],
    config: &TreeConfig,
    rng: &mut R,
) -> Result<Tree, TreeError> {
    let prepared = family.prepare(data.responses());
    grow_prepared(data, &prepared, subsample, config, None, rng)
}

/// Grows a variance-reduction tree; responses must be exact.
pub fn grow_tree_mse<R: Rng + ?Sized>(
    data: &Dataset,
    family: &TransformationFamily<f64>,
    subsample: &[usize],
    config: &TreeConfig,
    rng: &mut R,
) -> Result<Tree, TreeError> {
    let config = TreeConfig { split_mode: SplitMode::ExhaustiveMse, ..*config };
    grow_tree(data, family, subsample, &config, rng)
}

/// Exact responses needed for variance-reduction splitting.
pub(crate) fn exact_targets(data: &Dataset) -> Result<Vec<f64>, TreeError> {
    data.responses()
        .iter()
        .enumerate()
        .map(|(row, r)| r.exact_value().ok_or(TreeError::UnsupportedResponse { row }))
        .collect()
}

pub(crate) fn grow_prepared<R: Rng + ?Sized>(
    data: &Dataset,
    prepared: &PreparedData<f64>,
    subsample: &[usize],
    config: &TreeConfig,
    root_init: Option<&[f64]>,
    rng: &mut R,
) -> Result<Tree, TreeError> {
    config.validate(prepared.family().dim())?;
    if prepared.len() != data.n() {
        return Err(TreeError::DimensionMismatch(format!(
            "{} prepared responses for {} rows",
            prepared.len(),
            data.n()
        )));
    }
    let mut rows = subsample.to_vec();
    rows.sort_unstable();
    rows.dedup();
    if rows.len() != subsample.len() || rows.last().is_some_and(|&i| i >= data.n()) || rows.is_empty() {
        return Err(TreeError::DimensionMismatch("subsample must hold distinct, valid row indices".into()));
    }
    let targets = match config.split_mode {
        SplitMode::ExhaustiveMse => Some(exact_targets(data)?),
        _ => None,
    };
    let root_fit = prepared.fit(&unit_weights(&rows), root_init, &config.fit)?;
    let grower = Grower { data, prepared, config, targets };
    let mut next_id = 0;
    let root = grower.grow(rows.clone(), 0, root_fit.model.theta().to_vec(), &mut next_id, rng);
    Ok(Tree { root, family: prepared.family().clone(), subsample: rows })
}

fn unit_weights(rows: &[usize]) -> Vec<(usize, f64)> {
    rows.iter().map(|&i| (i, 1.0)).collect()
}

struct Grower<'a> {
    data: &'a Dataset,
    prepared: &'a PreparedData<f64>,
    config: &'a TreeConfig,
    targets: Option<Vec<f64>>,
}

impl Grower<'_> {
    /// `theta` is the node's own fit (the root) or the parent's estimate, used
    /// as warm start and as fallback when the node fit fails.
    fn grow<R: Rng + ?Sized>(
        &self,
        rows: Vec<usize>,
        depth: usize,
        theta: Vec<f64>,
        next_id: &mut usize,
        rng: &mut R,
    ) -> TreeNode {
        let id = *next_id;
        *next_id += 1;
        let (theta, fitted) = if depth == 0 {
            (theta, true)
        } else {
            match self.prepared.fit(&unit_weights(&rows), Some(&theta), &self.config.fit) {
                Ok(f) => (f.model.theta().to_vec(), true),
                Err(_) => (theta, false),
            }
        };
        let can_split = fitted
            && rows.len() >= self.config.minsplit
            && self.config.max_depth.is_none_or(|d| depth < d);
        let split = if can_split { self.find_split(&rows, &theta, rng) } else { None };
        match split {
            Some(split) => {
                let (left, right): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| split.goes_left_value(self.data.value(i, split.variable)));
                let left = self.grow(left, depth + 1, theta.clone(), next_id, rng);
                let right = self.grow(right, depth + 1, theta, next_id, rng);
                TreeNode::Split { id, split, left: Box::new(left), right: Box::new(right) }
            }
            None => TreeNode::Leaf(Leaf { id, theta, n: rows.len(), members: rows }),
        }
    }

    fn candidates<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let j = self.data.n_columns();
        match self.config.mtry {
            Some(m) if m < j => {
                let mut c = rand::seq::index::sample(rng, j, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..j).collect(),
        }
    }

    fn find_split<R: Rng + ?Sized>(&self, rows: &[usize], theta: &[f64], rng: &mut R) -> Option<SplitRecord> {
        let candidates = self.candidates(rng);
        let minbucket = self.config.minbucket;
        if let Some(y) = &self.targets {
            let yn: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
            let mut best: Option<(SplitRecord, f64)> = None;
            for &j in &candidates {
                let column = self.data.column(j);
                let x = split::node_values(column, rows);
                if let Some((s, red)) = split_mse(&yn, &x, &column.kind, j, minbucket) {
                    if best.as_ref().is_none_or(|b| red > b.1) {
                        best = Some((s, red));
                    }
                }
            }
            return best.map(|b| b.0);
        }
        let scores = self.scores(rows, theta);
        let selection = variable_selection(self.data, rows, &scores, &candidates, self.config);
        let j = selection.best?;
        let column = self.data.column(j);
        let x = split::node_values(column, rows);
        match self.config.split_mode {
            SplitMode::ExhaustiveLikelihood => split_exhaustive_loglik(
                self.prepared,
                rows,
                &x,
                &column.kind,
                j,
                minbucket,
                Some(theta),
                &self.config.fit,
            )
            .map(|s| s.split),
            _ => split_maxstat(&scores, &x, &column.kind, j, minbucket, self.config.test_stat).map(|s| s.split),
        }
    }

    fn scores(&self, rows: &[usize], theta: &[f64]) -> DMatrix<f64> {
        node_scores(self.prepared, rows, theta)
    }
}

/// `n × P` matrix of score contributions at `theta`.
pub fn node_scores(prepared: &PreparedData<f64>, rows: &[usize], theta: &[f64]) -> DMatrix<f64> {
    let p = theta.len();
    let mut s = DMatrix::zeros(rows.len(), p);
    let mut buf = vec![0.0; p];
    for (r, &i) in rows.iter().enumerate() {
        prepared.score_into(i, theta, &mut buf);
        for k in 0..p {
            s[(r, k)] = buf[k];
        }
    }
    s
}

/// Whether a column kind is compatible with a stored cut.
pub fn cut_matches_kind(cut: &Cut, kind: &ColumnKind) -> bool {
    matches!((cut, kind), (Cut::Levels { .. }, ColumnKind::Categorical { .. }) | (Cut::Threshold(_), ColumnKind::Continuous | ColumnKind::Ordinal))
}

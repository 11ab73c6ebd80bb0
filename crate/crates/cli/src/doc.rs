//! Model documents: human-readable JSON holding a fitted tree or forest together
//! with the learning sample needed for local likelihood prediction.

use std::path::Path;

use serde::{Deserialize, Serialize};
use trafo::forest::{Forest, ForestConfig};
use trafo::tree::{Cut, Leaf, SelectionScores, SplitMode, SplitRecord, TestStatistic, Tree, TreeNode};
use trafo::{BaseDistribution, Column, ColumnKind, Dataset, Family, Response, SupportInterval, TreeConfig};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tree,
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSettings {
    pub n_trees: usize,
    pub subsample_fraction: f64,
    pub mtry: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSettings {
    pub alpha: f64,
    pub bonferroni: bool,
    pub stop_on_alpha: bool,
    pub minsplit: usize,
    pub minbucket: usize,
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
    pub split_mode: String,
    pub test_stat: String,
    pub selection: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    /// `continuous`, `ordinal` or `categorical`
    pub scale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// Observed region; `null` bounds are infinite, equal bounds are exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<[Option<f64>; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub responses: Vec<ResponseRecord>,
    /// Column-major predictor values (level codes for categorical columns).
    pub predictors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDoc {
    pub var_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutpoint: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_set: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_levels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unseen_left: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafDoc {
    pub theta: Vec<f64>,
    pub n: usize,
    pub member_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<Box<NodeDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<Box<NodeDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf: Option<LeafDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDoc {
    pub subsample: Vec<usize>,
    pub root: NodeDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub kind: ModelKind,
    pub dist: String,
    pub order: usize,
    pub support: [f64; 2],
    pub forest: ForestSettings,
    pub tree_config: TreeSettings,
    pub columns: Vec<ColumnSchema>,
    pub training: TrainingData,
    pub trees: Vec<TreeDoc>,
}

/// A model ready for prediction.
#[allow(clippy::large_enum_variant)] // one value per process; boxing buys nothing
pub enum LoadedModel {
    Tree(Tree),
    Forest(Forest),
}

fn split_mode_name(m: SplitMode) -> &'static str {
    match m {
        SplitMode::ScoreMaxStat => "score",
        SplitMode::ExhaustiveLikelihood => "likelihood",
        SplitMode::ExhaustiveMse => "mse",
    }
}

pub fn parse_split_mode(s: &str) -> Result<SplitMode, CliError> {
    match s {
        "score" => Ok(SplitMode::ScoreMaxStat),
        "likelihood" => Ok(SplitMode::ExhaustiveLikelihood),
        "mse" => Ok(SplitMode::ExhaustiveMse),
        _ => Err(CliError::Usage(format!("unknown split mode `{s}`; expected score, likelihood or mse"))),
    }
}

impl TreeSettings {
    pub fn from_config(c: &TreeConfig) -> Self {
        Self {
            alpha: c.alpha,
            bonferroni: c.bonferroni,
            stop_on_alpha: c.stop_on_alpha,
            minsplit: c.minsplit,
            minbucket: c.minbucket,
            mtry: c.mtry,
            max_depth: c.max_depth,
            split_mode: split_mode_name(c.split_mode).into(),
            test_stat: match c.test_stat {
                TestStatistic::Quadratic => "quadratic",
                TestStatistic::MaxAbs => "maxabs",
            }
            .into(),
            selection: match c.selection {
                SelectionScores::Linear => "linear",
                SelectionScores::MaxSelected => "maxselected",
            }
            .into(),
        }
    }

    pub fn to_config(&self) -> Result<TreeConfig, CliError> {
        Ok(TreeConfig {
            alpha: self.alpha,
            bonferroni: self.bonferroni,
            stop_on_alpha: self.stop_on_alpha,
            minsplit: self.minsplit,
            minbucket: self.minbucket,
            mtry: self.mtry,
            max_depth: self.max_depth,
            split_mode: parse_split_mode(&self.split_mode)?,
            test_stat: match self.test_stat.as_str() {
                "quadratic" => TestStatistic::Quadratic,
                "maxabs" => TestStatistic::MaxAbs,
                s => return Err(CliError::Usage(format!("unknown test statistic `{s}`"))),
            },
            selection: match self.selection.as_str() {
                "linear" => SelectionScores::Linear,
                "maxselected" => SelectionScores::MaxSelected,
                s => return Err(CliError::Usage(format!("unknown selection scores `{s}`"))),
            },
            fit: Default::default(),
        })
    }
}

fn opt(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn response_record(r: &Response<f64>) -> ResponseRecord {
    let (lo, hi) = r.bounds();
    ResponseRecord { lower: opt(lo), upper: opt(hi), truncation: r.truncation.map(|(a, b)| [opt(a), opt(b)]) }
}

fn response_from_record(r: &ResponseRecord) -> Result<Response<f64>, CliError> {
    let bad = |e: trafo::TramError| CliError::Usage(format!("stored response: {e}"));
    let resp = Response::from_bounds(r.lower.unwrap_or(f64::NEG_INFINITY), r.upper.unwrap_or(f64::INFINITY)).map_err(bad)?;
    match r.truncation {
        Some([a, b]) => resp.truncated(a.unwrap_or(f64::NEG_INFINITY), b.unwrap_or(f64::INFINITY)).map_err(bad),
        None => Ok(resp),
    }
}

pub fn column_schema(c: &Column) -> ColumnSchema {
    let (scale, levels) = match &c.kind {
        ColumnKind::Continuous => ("continuous", None),
        ColumnKind::Ordinal => ("ordinal", None),
        ColumnKind::Categorical { levels } => ("categorical", Some(levels.clone())),
    };
    ColumnSchema { name: c.name.clone(), scale: scale.into(), levels }
}

fn column_kind(s: &ColumnSchema) -> Result<ColumnKind, CliError> {
    match (s.scale.as_str(), &s.levels) {
        ("continuous", _) => Ok(ColumnKind::Continuous),
        ("ordinal", _) => Ok(ColumnKind::Ordinal),
        ("categorical", Some(levels)) => Ok(ColumnKind::Categorical { levels: levels.clone() }),
        (other, _) => Err(CliError::Usage(format!("column `{}`: unknown scale `{other}`", s.name))),
    }
}

fn level_names(levels: &[String], codes: &[usize]) -> Vec<String> {
    codes.iter().map(|&c| levels[c].clone()).collect()
}

fn node_doc(node: &TreeNode, data: &Dataset) -> NodeDoc {
    match node {
        TreeNode::Leaf(l) => NodeDoc {
            id: l.id,
            split: None,
            left: None,
            right: None,
            leaf: Some(LeafDoc { theta: l.theta.clone(), n: l.n, member_indices: l.members.clone() }),
        },
        TreeNode::Split { id, split, left, right } => {
            let column = data.column(split.variable);
            let var_name = column.name.clone();
            let doc = match (&split.cut, &column.kind) {
                (Cut::Threshold(c), _) => SplitDoc {
                    var_name,
                    cutpoint: Some(*c),
                    level_set: None,
                    right_levels: None,
                    unseen_left: None,
                },
                (Cut::Levels { left, right, unseen_left }, ColumnKind::Categorical { levels }) => SplitDoc {
                    var_name,
                    cutpoint: None,
                    level_set: Some(level_names(levels, left)),
                    right_levels: Some(level_names(levels, right)),
                    unseen_left: Some(*unseen_left),
                },
                (Cut::Levels { .. }, _) => unreachable!("level splits only occur on categorical columns"),
            };
            NodeDoc {
                id: *id,
                split: Some(doc),
                left: Some(Box::new(node_doc(left, data))),
                right: Some(Box::new(node_doc(right, data))),
                leaf: None,
            }
        }
    }
}

fn node_from_doc(doc: &NodeDoc, data: &Dataset) -> Result<TreeNode, CliError> {
    let bad = |m: String| CliError::Usage(format!("node {}: {m}", doc.id));
    match (&doc.split, &doc.left, &doc.right, &doc.leaf) {
        (None, None, None, Some(l)) => {
            if l.theta.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
                return Err(bad("leaf coefficients are not strictly increasing".into()));
            }
            if l.member_indices.iter().any(|&i| i >= data.n()) {
                return Err(bad("leaf member index beyond the learning sample".into()));
            }
            Ok(TreeNode::Leaf(Leaf { id: doc.id, theta: l.theta.clone(), n: l.n, members: l.member_indices.clone() }))
        }
        (Some(s), Some(left), Some(right), None) => {
            let variable = data
                .column_index(&s.var_name)
                .ok_or_else(|| bad(format!("unknown split variable `{}`", s.var_name)))?;
            let cut = match (&data.column(variable).kind, s.cutpoint, &s.level_set) {
                (ColumnKind::Categorical { levels }, None, Some(set)) => {
                    let code = |name: &String| {
                        levels.iter().position(|l| l == name).ok_or_else(|| bad(format!("unknown level `{name}`")))
                    };
                    Cut::Levels {
                        left: set.iter().map(code).collect::<Result<_, _>>()?,
                        right: s.right_levels.iter().flatten().map(code).collect::<Result<_, _>>()?,
                        unseen_left: s.unseen_left.unwrap_or(false),
                    }
                }
                (ColumnKind::Categorical { .. }, _, _) => return Err(bad("categorical split needs a level set".into())),
                (_, Some(c), None) => Cut::Threshold(c),
                _ => return Err(bad("ordered split needs a cutpoint".into())),
            };
            Ok(TreeNode::Split {
                id: doc.id,
                split: SplitRecord { variable, cut },
                left: Box::new(node_from_doc(left, data)?),
                right: Box::new(node_from_doc(right, data)?),
            })
        }
        _ => Err(bad("a node is either a split with two children or a leaf".into())),
    }
}

impl ModelDocument {
    fn base(kind: ModelKind, family: &Family, data: &Dataset, forest: ForestSettings, tree: &TreeConfig, trees: &[Tree]) -> Self {
        let support = family.basis.support();
        Self {
            format_version: FORMAT_VERSION,
            kind,
            dist: family.dist.name().into(),
            order: family.basis.order(),
            support: [support.lower(), support.upper()],
            forest,
            tree_config: TreeSettings::from_config(tree),
            columns: data.columns().iter().map(column_schema).collect(),
            training: TrainingData {
                responses: data.responses().iter().map(response_record).collect(),
                predictors: data.columns().iter().map(|c| c.values.clone()).collect(),
            },
            trees: trees
                .iter()
                .map(|t| TreeDoc { subsample: t.subsample().to_vec(), root: node_doc(t.root(), data) })
                .collect(),
        }
    }

    pub fn from_tree(tree: &Tree, data: &Dataset, config: &TreeConfig, seed: u64) -> Self {
        let forest = ForestSettings { n_trees: 1, subsample_fraction: 1.0, mtry: config.mtry, seed };
        Self::base(ModelKind::Tree, tree.family(), data, forest, config, std::slice::from_ref(tree))
    }

    pub fn from_forest(forest: &Forest) -> Self {
        let c = forest.config();
        let settings = ForestSettings {
            n_trees: c.n_trees,
            subsample_fraction: c.subsample_fraction,
            mtry: c.mtry,
            seed: c.seed,
        };
        Self::base(ModelKind::Forest, forest.family(), forest.data(), settings, &c.tree, forest.trees())
    }

    pub fn family(&self) -> Result<Family, CliError> {
        let dist = BaseDistribution::from_name(&self.dist)
            .ok_or_else(|| CliError::Usage(format!("unknown distribution `{}`", self.dist)))?;
        let support = SupportInterval::new(self.support[0], self.support[1]).map_err(|e| CliError::Usage(e.to_string()))?;
        Family::new(self.order, support, dist).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn dataset(&self) -> Result<Dataset, CliError> {
        if self.training.predictors.len() != self.columns.len() {
            return Err(CliError::Usage("stored predictors do not match the column schema".into()));
        }
        let responses = self.training.responses.iter().map(response_from_record).collect::<Result<Vec<_>, _>>()?;
        let columns = self
            .columns
            .iter()
            .zip(&self.training.predictors)
            .map(|(s, v)| Ok(Column { name: s.name.clone(), kind: column_kind(s)?, values: v.clone() }))
            .collect::<Result<Vec<_>, CliError>>()?;
        Dataset::new(responses, columns).map_err(|e| CliError::Usage(format!("stored learning sample: {e}")))
    }

    pub fn schema(&self) -> Result<Vec<(String, ColumnKind)>, CliError> {
        self.columns.iter().map(|c| Ok((c.name.clone(), column_kind(c)?))).collect()
    }

    pub fn forest_config(&self) -> Result<ForestConfig, CliError> {
        Ok(ForestConfig {
            n_trees: self.forest.n_trees,
            subsample_fraction: self.forest.subsample_fraction,
            mtry: self.forest.mtry,
            tree: self.tree_config.to_config()?,
            seed: self.forest.seed,
        })
    }

    pub fn load_model(&self) -> Result<LoadedModel, CliError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::Usage(format!("unsupported format version {}", self.format_version)));
        }
        let family = self.family()?;
        let data = self.dataset()?;
        let trees = self
            .trees
            .iter()
            .map(|t| Ok(Tree::from_parts(node_from_doc(&t.root, &data)?, family.clone(), t.subsample.clone())))
            .collect::<Result<Vec<_>, CliError>>()?;
        match self.kind {
            ModelKind::Tree => {
                let tree = trees.into_iter().next().ok_or_else(|| CliError::Usage("tree model without a tree".into()))?;
                Ok(LoadedModel::Tree(tree))
            }
            ModelKind::Forest => {
                let forest = Forest::from_parts(trees, data, family, self.forest_config()?).map_err(|e| CliError::Usage(e.to_string()))?;
                Ok(LoadedModel::Forest(forest))
            }
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(CliError::runtime)
    }

    pub fn from_json(s: &str) -> Result<Self, CliError> {
        serde_json::from_str(s).map_err(|e| CliError::Usage(format!("model document: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let s = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

//! Transformation models, trees and forests for estimating full conditional
//! distributions, including censored and truncated responses.
//!
//! The likelihood layer ([`basis`], [`tram`], [`optim`]) is generic over the
//! floating point type; partitioning, forests and inference work in `f64`.

// `!(a < b)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod data;
pub mod forest;
pub mod inference;
pub mod optim;
pub mod scalar;
pub mod simbench;
pub mod tram;
pub mod tree;

pub use basis::{BaseDistribution, BernsteinBasis, SupportInterval};
pub use data::{Column, ColumnKind, Dataset};
pub use forest::{fit_forest, Forest, ForestConfig, SampleMode, WeightMode};
pub use scalar::Scalar;
pub use tram::{fit_mle, FitConfig, Observation, Response, TramError};
pub use tree::{grow_tree, grow_tree_mse, Tree, TreeConfig};

pub type Model = tram::TransformationModel<f64>;
pub type Model32 = tram::TransformationModel<f32>;
pub type Family = tram::TransformationFamily<f64>;
pub type Family32 = tram::TransformationFamily<f32>;
pub type Basis = basis::BernsteinBasis<f64>;
pub type Support = basis::SupportInterval<f64>;

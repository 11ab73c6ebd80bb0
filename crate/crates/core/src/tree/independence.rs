//! Permutation tests of independence between node scores and predictors.
//!
//! The conditional expectation and covariance of linear statistics
//! `T = Σ g(x_i) s_iᵀ` under all permutations of the score rows follow
//! Strasser and Weber; the quadratic form in the pseudo-inverse of that
//! covariance is asymptotically chi-squared with `rank(Cov)` degrees of freedom.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::basis::BaseDistribution;
use crate::data::{Column, ColumnKind, Dataset};

use super::split::{max_selected_statistic, node_values};
use super::{SelectionScores, TestStatistic, TreeConfig, TreeError};

/// Linear statistic with its permutation moments.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStatistic {
    /// `Q × P`
    pub statistic: DMatrix<f64>,
    /// `Q × P`
    pub expectation: DMatrix<f64>,
    /// `QP × QP`, indexed like the column-major vectorisation of `statistic`.
    pub covariance: DMatrix<f64>,
}

impl LinearStatistic {
    /// `vec(T - E)`.
    pub fn centered(&self) -> Vec<f64> {
        (&self.statistic - &self.expectation).as_slice().to_vec()
    }

    pub fn is_degenerate(&self) -> bool {
        self.covariance.iter().all(|v| v.abs() <= f64::MIN_POSITIVE)
    }
}

/// Empirical score covariance with divisor `N`.
pub(crate) fn score_covariance(s: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = s.nrows();
    let p = s.ncols();
    let mean: Vec<f64> = (0..p).map(|k| s.column(k).sum() / n as f64).collect();
    let mut v = DMatrix::zeros(p, p);
    for i in 0..n {
        for a in 0..p {
            let da = s[(i, a)] - mean[a];
            for b in a..p {
                v[(a, b)] += da * (s[(i, b)] - mean[b]);
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let val = v[(a, b)] / n as f64;
            v[(a, b)] = val;
            v[(b, a)] = val;
        }
    }
    (mean, v)
}

/// `T`, `E(T)` and `Cov(T)` for transformation `g` (`N × Q`) and scores `s` (`N × P`).
pub fn linear_statistic_moments(g: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<LinearStatistic, TreeError> {
    let n = s.nrows();
    if g.nrows() != n {
        return Err(TreeError::DimensionMismatch(format!("g has {} rows, scores have {}", g.nrows(), n)));
    }
    if n < 2 {
        return Err(TreeError::DimensionMismatch("permutation moments need at least two rows".into()));
    }
    let nf = n as f64;
    let statistic = g.transpose() * s;
    let (mean, v) = score_covariance(s);
    let sum_g: DMatrix<f64> = DMatrix::from_fn(g.ncols(), 1, |q, _| g.column(q).sum());
    let mean_row = DMatrix::from_row_slice(1, mean.len(), &mean);
    let expectation = &sum_g * &mean_row;
    let gg = g.transpose() * g;
    let outer = &sum_g * sum_g.transpose();
    let a = gg * (nf / (nf - 1.0)) - outer * (1.0 / (nf - 1.0));
    let covariance = v.kronecker(&a);
    Ok(LinearStatistic { statistic, expectation, covariance })
}

/// Moore–Penrose inverse of a symmetric positive semi-definite matrix together
/// with its numerical rank. `None` when the matrix is (numerically) zero.
pub(crate) fn pseudo_inverse(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, usize)> {
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    if !(lmax > 1e-300) || !lmax.is_finite() {
        return None;
    }
    let cutoff = 1e-10 * lmax;
    let k = m.nrows();
    let mut out = DMatrix::zeros(k, k);
    let mut rank = 0;
    for (idx, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff {
            rank += 1;
            let v = eig.eigenvectors.column(idx);
            out += (v * v.transpose()) / l;
        }
    }
    if rank == 0 {
        None
    } else {
        Some((out, rank))
    }
}

/// `ln P(χ²_df > x)`.
pub fn chi2_log_sf(x: f64, df: usize) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    let a = df as f64 / 2.0;
    let h = x / 2.0;
    let q = gamma_ur(a, h);
    if q > 1e-280 {
        q.ln()
    } else {
        // asymptotic expansion of the upper incomplete gamma function
        let series = 1.0 + (a - 1.0) / h + (a - 1.0) * (a - 2.0) / (h * h);
        (a - 1.0) * h.ln() - h - ln_gamma(a) + series.max(f64::MIN_POSITIVE).ln()
    }
}

/// Standardised test statistic and log p-value for a linear statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub log_p: f64,
}

/// Tests `stat` with the configured statistic shape. `None` for zero variance.
pub fn test_linear_statistic(stat: &LinearStatistic, shape: TestStatistic) -> Option<TestResult> {
    let c = stat.centered();
    match shape {
        TestStatistic::Quadratic => {
            let (pinv, rank) = pseudo_inverse(&stat.covariance)?;
            let cv = nalgebra::DVector::from_column_slice(&c);
            let q = (cv.transpose() * pinv * &cv)[(0, 0)].max(0.0);
            Some(TestResult { statistic: q, df: rank, log_p: chi2_log_sf(q, rank) })
        }
        TestStatistic::MaxAbs => {
            let mut zmax = f64::NEG_INFINITY;
            let mut k = 0usize;
            for (i, &ci) in c.iter().enumerate() {
                let var = stat.covariance[(i, i)];
                if var > 1e-300 {
                    k += 1;
                    zmax = zmax.max(ci.abs() / var.sqrt());
                }
            }
            if k == 0 {
                return None;
            }
            Some(TestResult { statistic: zmax, df: k, log_p: max_abs_log_p(zmax, k) })
        }
    }
}

/// Bonferroni bound over `k` standard normal components: `min(1, 2k Φ(-z))`.
pub(crate) fn max_abs_log_p(z: f64, k: usize) -> f64 {
    let lp = (2.0 * k as f64).ln() + BaseDistribution::StandardNormal.log_cdf(-z);
    lp.min(0.0)
}

/// Midranks of `x`.
fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Transformation `g(x)` for the linear selection statistic of one column.
pub fn selection_design(column: &Column, rows: &[usize]) -> DMatrix<f64> {
    let x = node_values(column, rows);
    match &column.kind {
        ColumnKind::Continuous => DMatrix::from_column_slice(x.len(), 1, &x),
        ColumnKind::Ordinal => DMatrix::from_column_slice(x.len(), 1, &midranks(&x)),
        ColumnKind::Categorical { levels } => {
            let mut g = DMatrix::zeros(x.len(), levels.len());
            for (i, &v) in x.iter().enumerate() {
                g[(i, v as usize)] = 1.0;
            }
            g
        }
    }
}

/// Outcome of testing one candidate variable.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTest {
    pub variable: usize,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub log_p: f64,
    /// Multiplicity adjusted, capped at one.
    pub adjusted_p: f64,
    pub log_adjusted_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Variable to split on; `None` signals that the node should not be split.
    pub best: Option<usize>,
    pub tests: Vec<CandidateTest>,
}

/// Selects the candidate with the smallest adjusted p-value of the permutation
/// test of independence between `scores` (rows aligned with `rows`) and the
/// candidate column.
pub fn variable_selection(
    data: &Dataset,
    rows: &[usize],
    scores: &DMatrix<f64>,
    candidates: &[usize],
    config: &TreeConfig,
) -> Selection {
    let m = candidates.len().max(1) as f64;
    let mut tests = Vec::with_capacity(candidates.len());
    for &j in candidates {
        let column = data.column(j);
        let raw = match config.selection {
            SelectionScores::MaxSelected if !column.kind.is_categorical() => {
                let x = node_values(column, rows);
                max_selected_statistic(scores, &x, config.minbucket, config.test_stat).map(|(stat, df, cuts)| {
                    let log_p = match config.test_stat {
                        TestStatistic::Quadratic => chi2_log_sf(stat, df),
                        TestStatistic::MaxAbs => max_abs_log_p(stat, df),
                    };
                    TestResult { statistic: stat, df, log_p: ((cuts as f64).ln() + log_p).min(0.0) }
                })
            }
            _ => {
                let g = selection_design(column, rows);
                linear_statistic_moments(&g, scores)
                    .ok()
                    .and_then(|lin| test_linear_statistic(&lin, config.test_stat))
            }
        };
        let test = match raw {
            Some(r) => {
                let log_adj = if config.bonferroni { (r.log_p + m.ln()).min(0.0) } else { r.log_p };
                CandidateTest {
                    variable: j,
                    statistic: r.statistic,
                    df: r.df,
                    p_value: r.log_p.exp(),
                    log_p: r.log_p,
                    adjusted_p: log_adj.exp(),
                    log_adjusted_p: log_adj,
                }
            }
            None => CandidateTest {
                variable: j,
                statistic: 0.0,
                df: 0,
                p_value: 1.0,
                log_p: 0.0,
                adjusted_p: 1.0,
                log_adjusted_p: 0.0,
            },
        };
        tests.push(test);
    }
    // rank on unadjusted p-values: the adjustment is monotone but caps at one,
    // and ties at the cap would otherwise be broken in favour of large df
    let best = tests
        .iter()
        .filter(|t| t.df > 0)
        .min_by(|a, b| {
            a.log_p
                .total_cmp(&b.log_p)
                .then(b.statistic.total_cmp(&a.statistic))
                .then(a.variable.cmp(&b.variable))
        })
        .filter(|t| !config.stop_on_alpha || t.adjusted_p <= config.alpha)
        .map(|t| t.variable);
    Selection { best, tests }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn three_point_example() {
        let g = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let s = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 1.0]);
        let lin = linear_statistic_moments(&g, &s).unwrap();
        assert_abs_diff_eq!(lin.statistic[(0, 0)], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lin.expectation[(0, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lin.covariance[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_scores_have_no_variance() {
        let g = DMatrix::from_column_slice(4, 1, &[0.1, 0.5, 0.2, 0.9]);
        let s = DMatrix::from_column_slice(4, 1, &[3.0; 4]);
        let lin = linear_statistic_moments(&g, &s).unwrap();
        assert_abs_diff_eq!(lin.statistic[(0, 0)], lin.expectation[(0, 0)], epsilon = 1e-12);
        assert!(lin.is_degenerate());
        assert!(test_linear_statistic(&lin, TestStatistic::Quadratic).is_none());
    }

    #[test]
    fn chi2_tail() {
        // P(χ²_1 > 3.841459) = 0.05
        assert_abs_diff_eq!(chi2_log_sf(3.841_458_820_694_124, 1).exp(), 0.05, epsilon = 1e-9);
        assert_eq!(chi2_log_sf(0.0, 3), 0.0);
        // far tail stays finite and monotone
        let a = chi2_log_sf(2000.0, 2);
        let b = chi2_log_sf(2100.0, 2);
        assert!(a.is_finite() && b < a);
        assert_abs_diff_eq!(a, -1000.0, epsilon = 1e-6);
    }

    #[test]
    fn midranks_with_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn pseudo_inverse_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (p, rank) = pseudo_inverse(&m).unwrap();
        assert_eq!(rank, 1);
        assert_abs_diff_eq!(p[(0, 0)], 0.25, epsilon = 1e-12);
    }
}

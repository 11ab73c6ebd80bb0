//! Split search in a selected variable: maximally selected score statistics,
//! exhaustive log-likelihood search and the CART-style variance reduction baseline.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{Column, ColumnKind};
use crate::tram::{FitConfig, PreparedData};

use super::independence::{pseudo_inverse, score_covariance};
use super::{Cut, SplitRecord, TestStatistic};

/// Largest number of levels for which all binary level partitions are enumerated.
const MAX_ENUMERATED_LEVELS: usize = 10;

pub(crate) fn node_values(column: &Column, rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| column.values[i]).collect()
}

/// Positions `k` in `order` such that cutting after `order[k]` separates two
/// distinct values and leaves at least `minbucket` observations on each side.
fn threshold_positions<'a>(x: &'a [f64], order: &'a [usize], minbucket: usize) -> impl Iterator<Item = usize> + 'a {
    let n = order.len();
    (0..n.saturating_sub(1)).filter(move |&k| {
        k + 1 >= minbucket && n - k > minbucket && x[order[k]] < x[order[k + 1]]
    })
}

fn sort_order(x: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    order
}

fn midpoint(a: f64, b: f64) -> f64 {
    a + (b - a) / 2.0
}

/// Standardised two-sample statistic for the score sum `t` of a left child of size `nl`.
struct Standardiser {
    n: f64,
    mean: Vec<f64>,
    var_diag: Vec<f64>,
    pinv: DMatrix<f64>,
    rank: usize,
    shape: TestStatistic,
}

impl Standardiser {
    fn new(scores: &DMatrix<f64>, shape: TestStatistic) -> Option<Self> {
        let (mean, v) = score_covariance(scores);
        let (pinv, rank) = pseudo_inverse(&v)?;
        let var_diag = (0..v.nrows()).map(|k| v[(k, k)]).collect();
        Some(Self { n: scores.nrows() as f64, mean, var_diag, pinv, rank, shape })
    }

    fn df(&self) -> usize {
        match self.shape {
            TestStatistic::Quadratic => self.rank,
            TestStatistic::MaxAbs => self.var_diag.iter().filter(|&&v| v > 1e-300).count(),
        }
    }

    fn statistic(&self, t: &[f64], nl: f64) -> f64 {
        let c = nl * (self.n - nl) / (self.n - 1.0);
        if !(c > 0.0) {
            return 0.0;
        }
        let d = DVector::from_iterator(t.len(), t.iter().zip(&self.mean).map(|(&ti, &m)| ti - nl * m));
        match self.shape {
            TestStatistic::Quadratic => (d.transpose() * &self.pinv * &d)[(0, 0)].max(0.0) / c,
            TestStatistic::MaxAbs => d
                .iter()
                .zip(&self.var_diag)
                .filter(|(_, &v)| v > 1e-300)
                .map(|(&di, &v)| di.abs() / (v * c).sqrt())
                .fold(0.0, f64::max),
        }
    }
}

/// Split found by a score-statistic search.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSplit {
    pub split: SplitRecord,
    pub statistic: f64,
    /// Number of admissible candidate splits examined.
    pub n_cuts: usize,
}

/// Levels present in the node with their row counts.
fn level_counts(x: &[f64]) -> Vec<(usize, usize)> {
    let mut codes: Vec<usize> = x.iter().map(|&v| v as usize).collect();
    codes.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for c in codes {
        match out.last_mut() {
            Some((l, n)) if *l == c => *n += 1,
            _ => out.push((c, 1)),
        }
    }
    out
}

/// Binary partitions of the node's levels as `(left level positions)` masks.
/// Small level sets are enumerated exhaustively; larger ones are ordered by
/// `key` and cut like an ordered variable.
fn level_partitions(n_levels: usize, key: &[f64]) -> Vec<Vec<usize>> {
    if n_levels < 2 {
        return Vec::new();
    }
    if n_levels <= MAX_ENUMERATED_LEVELS {
        // the last level always goes right so each partition appears once
        (1u32..(1u32 << (n_levels - 1)))
            .map(|mask| (0..n_levels - 1).filter(|&l| mask & (1 << l) != 0).collect())
            .collect()
    } else {
        let mut order: Vec<usize> = (0..n_levels).collect();
        order.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
        (1..n_levels).map(|k| order[..k].to_vec()).collect()
    }
}

fn level_cut(levels: &[(usize, usize)], left_pos: &[usize], nl: usize, nr: usize) -> Cut {
    let left: Vec<usize> = left_pos.iter().map(|&p| levels[p].0).collect();
    let right: Vec<usize> = levels.iter().map(|l| l.0).filter(|c| !left.contains(c)).collect();
    Cut::Levels { left, right, unseen_left: nl >= nr }
}

/// Best split of `x` by the maximally selected standardised score statistic.
/// `scores` rows are aligned with `x`. `None` when there is no admissible cut
/// or the scores have no variance.
pub fn split_maxstat(
    scores: &DMatrix<f64>,
    x: &[f64],
    kind: &ColumnKind,
    variable: usize,
    minbucket: usize,
    shape: TestStatistic,
) -> Option<ScoredSplit> {
    let std = Standardiser::new(scores, shape)?;
    let p = scores.ncols();
    let mut best: Option<ScoredSplit> = None;
    let mut consider = |stat: f64, cut: Cut, n_cuts: &mut usize| {
        *n_cuts += 1;
        if best.as_ref().is_none_or(|b| stat > b.statistic) {
            best = Some(ScoredSplit { split: SplitRecord { variable, cut }, statistic: stat, n_cuts: 0 });
        }
    };
    let mut n_cuts = 0;
    if kind.is_categorical() {
        let levels = level_counts(x);
        let pos: Vec<usize> = x.iter().map(|&v| levels.binary_search_by_key(&(v as usize), |l| l.0).unwrap()).collect();
        let mut sums = vec![vec![0.0; p]; levels.len()];
        for (i, &l) in pos.iter().enumerate() {
            for k in 0..p {
                sums[l][k] += scores[(i, k)];
            }
        }
        let key: Vec<f64> = sums.iter().zip(&levels).map(|(s, l)| s[0] / l.1 as f64).collect();
        for left in level_partitions(levels.len(), &key) {
            let nl: usize = left.iter().map(|&l| levels[l].1).sum();
            let nr = x.len() - nl;
            if nl < minbucket || nr < minbucket {
                continue;
            }
            let mut t = vec![0.0; p];
            for &l in &left {
                for k in 0..p {
                    t[k] += sums[l][k];
                }
            }
            let stat = std.statistic(&t, nl as f64);
            consider(stat, level_cut(&levels, &left, nl, nr), &mut n_cuts);
        }
    } else {
        let order = sort_order(x);
        let mut t = vec![0.0; p];
        let mut next = 0usize;
        for k in threshold_positions(x, &order, minbucket) {
            while next <= k {
                for (c, tc) in t.iter_mut().enumerate() {
                    *tc += scores[(order[next], c)];
                }
                next += 1;
            }
            let stat = std.statistic(&t, (k + 1) as f64);
            let cut = Cut::Threshold(midpoint(x[order[k]], x[order[k + 1]]));
            consider(stat, cut, &mut n_cuts);
        }
    }
    best.map(|mut b| {
        b.n_cuts = n_cuts;
        b
    })
}

/// Maximum of the standardised statistic over all admissible cutpoints of an
/// ordered variable: `(statistic, df, number of cutpoints)`.
pub(crate) fn max_selected_statistic(
    scores: &DMatrix<f64>,
    x: &[f64],
    minbucket: usize,
    shape: TestStatistic,
) -> Option<(f64, usize, usize)> {
    let std = Standardiser::new(scores, shape)?;
    let df = std.df();
    split_maxstat(scores, x, &ColumnKind::Continuous, 0, minbucket, shape).map(|b| (b.statistic, df, b.n_cuts))
}

/// Split found by refitting the transformation model in both children.
#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveSplit {
    pub split: SplitRecord,
    /// `Σ_left ℓ_i(θ̂_left) + Σ_right ℓ_i(θ̂_right)`
    pub log_likelihood: f64,
    /// Number of admissible candidate splits evaluated.
    pub candidates: usize,
}

/// Best split of `x` by maximising the sum of the children's maximised
/// log-likelihoods. `rows` index into `prepared` and align with `x`.
#[allow(clippy::too_many_arguments)]
pub fn split_exhaustive_loglik(
    prepared: &PreparedData<f64>,
    rows: &[usize],
    x: &[f64],
    kind: &ColumnKind,
    variable: usize,
    minbucket: usize,
    init: Option<&[f64]>,
    fit: &FitConfig<f64>,
) -> Option<ExhaustiveSplit> {
    // candidate = (positions in the node going left, cut)
    let candidates: Vec<(Vec<usize>, Cut)> = if kind.is_categorical() {
        let levels = level_counts(x);
        let key: Vec<f64> = levels.iter().map(|l| l.0 as f64).collect();
        level_partitions(levels.len(), &key)
            .into_iter()
            .filter_map(|left| {
                let codes: Vec<usize> = left.iter().map(|&l| levels[l].0).collect();
                let members: Vec<usize> = (0..x.len()).filter(|&i| codes.contains(&(x[i] as usize))).collect();
                let (nl, nr) = (members.len(), x.len() - members.len());
                (nl >= minbucket && nr >= minbucket).then(|| (members, level_cut(&levels, &left, nl, nr)))
            })
            .collect()
    } else {
        let order = sort_order(x);
        threshold_positions(x, &order, minbucket)
            .map(|k| (order[..=k].to_vec(), Cut::Threshold(midpoint(x[order[k]], x[order[k + 1]]))))
            .collect()
    };
    let n_candidates = candidates.len();
    let evaluated: Vec<Option<f64>> = candidates
        .par_iter()
        .map(|(left, _)| {
            let mut in_left = vec![false; x.len()];
            for &i in left {
                in_left[i] = true;
            }
            let l: Vec<(usize, f64)> = left.iter().map(|&i| (rows[i], 1.0)).collect();
            let r: Vec<(usize, f64)> = (0..x.len()).filter(|&i| !in_left[i]).map(|i| (rows[i], 1.0)).collect();
            let fl = prepared.fit(&l, init, fit).ok()?;
            let fr = prepared.fit(&r, init, fit).ok()?;
            Some(fl.log_likelihood + fr.log_likelihood)
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (idx, ll) in evaluated.iter().enumerate() {
        if let Some(ll) = *ll {
            if ll.is_finite() && best.is_none_or(|(_, b)| ll > b) {
                best = Some((idx, ll));
            }
        }
    }
    let (idx, ll) = best?;
    let cut = candidates.into_iter().nth(idx).map(|c| c.1)?;
    Some(ExhaustiveSplit { split: SplitRecord { variable, cut }, log_likelihood: ll, candidates: n_candidates })
}

/// Best variance-reducing split of `x` for exact targets `y`:
/// `(split, reduction in residual sum of squares)`.
pub fn split_mse(y: &[f64], x: &[f64], kind: &ColumnKind, variable: usize, minbucket: usize) -> Option<(SplitRecord, f64)> {
    let n = y.len();
    let total: f64 = y.iter().sum();
    let total2: f64 = y.iter().map(|v| v * v).sum();
    let sse_total = (total2 - total * total / n as f64).max(0.0);
    if !(sse_total > 0.0) {
        return None;
    }
    let sse = |s: f64, s2: f64, m: usize| s2 - s * s / m as f64;
    let mut best: Option<(SplitRecord, f64)> = None;
    let mut consider = |red: f64, cut: Cut| {
        if red > 1e-12 * sse_total && best.as_ref().is_none_or(|b| red > b.1) {
            best = Some((SplitRecord { variable, cut }, red));
        }
    };
    if kind.is_categorical() {
        let levels = level_counts(x);
        let mut sums = vec![(0.0, 0.0); levels.len()];
        for (i, &v) in x.iter().enumerate() {
            let l = levels.binary_search_by_key(&(v as usize), |l| l.0).unwrap();
            sums[l].0 += y[i];
            sums[l].1 += y[i] * y[i];
        }
        let key: Vec<f64> = sums.iter().zip(&levels).map(|(s, l)| s.0 / l.1 as f64).collect();
        let mut order: Vec<usize> = (0..levels.len()).collect();
        order.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
        let (mut s, mut s2, mut nl) = (0.0, 0.0, 0usize);
        for k in 0..levels.len().saturating_sub(1) {
            let l = order[k];
            s += sums[l].0;
            s2 += sums[l].1;
            nl += levels[l].1;
            let nr = n - nl;
            if nl < minbucket || nr < minbucket {
                continue;
            }
            let red = sse_total - sse(s, s2, nl) - sse(total - s, total2 - s2, nr);
            consider(red, level_cut(&levels, &order[..=k], nl, nr));
        }
    } else {
        let order = sort_order(x);
        let (mut s, mut s2) = (0.0, 0.0);
        let mut next = 0usize;
        for k in threshold_positions(x, &order, minbucket) {
            while next <= k {
                let v = y[order[next]];
                s += v;
                s2 += v * v;
                next += 1;
            }
            let nl = k + 1;
            let red = sse_total - sse(s, s2, nl) - sse(total - s, total2 - s2, n - nl);
            consider(red, Cut::Threshold(midpoint(x[order[k]], x[order[k + 1]])));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn linear_scores_split_at_median() {
        let x: Vec<f64> = (1..=40).map(|v| v as f64).collect();
        let s = col(&x);
        let b = split_maxstat(&s, &x, &ColumnKind::Continuous, 3, 5, TestStatistic::Quadratic).unwrap();
        assert_eq!(b.split.variable, 3);
        assert_eq!(b.split.cut, Cut::Threshold(20.5));
        assert_eq!(b.n_cuts, 31);
    }

    #[test]
    fn two_values_single_cut() {
        let x = vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let s = col(&[0.3, -0.1, 0.2, -0.5, 0.1, 0.4]);
        let b = split_maxstat(&s, &x, &ColumnKind::Continuous, 0, 1, TestStatistic::Quadratic).unwrap();
        assert_eq!(b.n_cuts, 1);
        assert_eq!(b.split.cut, Cut::Threshold(0.5));
    }

    #[test]
    fn no_admissible_cut() {
        let x = vec![1.0; 10];
        let s = col(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        assert!(split_maxstat(&s, &x, &ColumnKind::Continuous, 0, 2, TestStatistic::Quadratic).is_none());
        let x: Vec<f64> = (0..10).map(|v| v as f64).collect();
        assert!(split_maxstat(&s, &x, &ColumnKind::Continuous, 0, 6, TestStatistic::Quadratic).is_none());
    }

    #[test]
    fn categorical_partition_separates_shifted_levels() {
        // levels 0 and 2 have high scores
        let x: Vec<f64> = (0..30).map(|i| (i % 3) as f64).collect();
        let s: Vec<f64> = x.iter().enumerate().map(|(i, &l)| if l != 1.0 { 1.0 } else { -2.0 } + 0.01 * i as f64).collect();
        let kind = ColumnKind::Categorical { levels: vec!["a".into(), "b".into(), "c".into()] };
        let b = split_maxstat(&col(&s), &x, &kind, 0, 3, TestStatistic::Quadratic).unwrap();
        match b.split.cut {
            Cut::Levels { left, right, .. } => {
                let mut l = left.clone();
                l.sort();
                assert!(l == vec![1] || right == vec![1], "left {left:?} right {right:?}");
            }
            _ => panic!("expected level split"),
        }
        assert_eq!(b.n_cuts, 3);
    }

    #[test]
    fn mse_split_on_mean_step() {
        let x: Vec<f64> = (0..20).map(|v| v as f64 / 20.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v > 0.5 { 3.0 } else { 0.0 }).collect();
        let (split, red) = split_mse(&y, &x, &ColumnKind::Continuous, 1, 3).unwrap();
        assert_eq!(split.cut, Cut::Threshold(0.525));
        assert!(red > 0.0);
        assert!(split_mse(&[2.0; 20], &x, &ColumnKind::Continuous, 1, 3).is_none());
    }

    #[test]
    fn mse_categorical() {
        let x = vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0];
        let y = vec![5.0, 0.0, 5.1, 4.9, 0.1, 5.0];
        let kind = ColumnKind::Categorical { levels: vec!["a".into(), "b".into(), "c".into()] };
        let (split, _) = split_mse(&y, &x, &kind, 0, 1).unwrap();
        assert!(matches!(split.cut, Cut::Levels { ref left, .. } if left == &vec![1]));
    }
}

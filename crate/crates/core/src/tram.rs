//! Transformation models `P(Y <= y) = F_Z(a(y)ᵀθ)`: likelihood and score
//! contributions for exact, censored and truncated observations, and weighted
//! maximum likelihood under the monotonicity constraint `θ_0 < θ_1 < … < θ_M`.

use std::collections::HashSet;

use thiserror::Error;

use crate::basis::{BaseDistribution, BasisError, BernsteinBasis, SupportInterval};
use crate::optim::{self, BfgsOptions};
use crate::scalar::Scalar;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TramError {
    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error("coefficient vector has length {got}, basis dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coefficients are not strictly increasing at position {0}")]
    NotMonotone(usize),

    #[error("invalid response: {0}")]
    InvalidResponse(String),

    #[error("observation has zero probability under the model (degenerate likelihood)")]
    DegenerateLikelihood,

    #[error("only {distinct} distinct positively weighted observations for {params} parameters")]
    RankDeficient { distinct: usize, params: usize },

    #[error("weights must be finite, non-negative and not all zero")]
    InvalidWeights,

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm})")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        best: Vec<f64>,
    },
}

/// What was observed about the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation<T> {
    Exact(T),
    /// `y ∈ (low, high]`
    IntervalCensored(T, T),
    /// `y ∈ (-∞, high]`
    LeftCensored(T),
    /// `y ∈ (low, ∞)`
    RightCensored(T),
}

/// One target observation with optional truncation to `(t_low, t_high]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response<T> {
    pub observation: Observation<T>,
    pub truncation: Option<(T, T)>,
}

impl<T: Scalar> Response<T> {
    pub fn exact(y: T) -> Self {
        Self { observation: Observation::Exact(y), truncation: None }
    }

    pub fn interval(low: T, high: T) -> Self {
        Self { observation: Observation::IntervalCensored(low, high), truncation: None }
    }

    pub fn left(high: T) -> Self {
        Self { observation: Observation::LeftCensored(high), truncation: None }
    }

    pub fn right(low: T) -> Self {
        Self { observation: Observation::RightCensored(low), truncation: None }
    }

    /// Builds a response from interval endpoints where an infinite end means
    /// one-sided censoring and equal finite ends mean an exact value.
    pub fn from_bounds(low: T, high: T) -> Result<Self, TramError> {
        let r = match (low.is_finite(), high.is_finite()) {
            (true, true) if low == high => Self::exact(low),
            (true, true) => Self::interval(low, high),
            (false, true) => Self::left(high),
            (true, false) => Self::right(low),
            (false, false) => {
                return Err(TramError::InvalidResponse("both censoring bounds are infinite".into()))
            }
        };
        r.validate()?;
        Ok(r)
    }

    pub fn truncated(mut self, low: T, high: T) -> Result<Self, TramError> {
        self.truncation = Some((low, high));
        self.validate()?;
        Ok(self)
    }

    /// `(low, high)` of the observed region; infinite where open.
    pub fn bounds(&self) -> (T, T) {
        match self.observation {
            Observation::Exact(y) => (y, y),
            Observation::IntervalCensored(lo, hi) => (lo, hi),
            Observation::LeftCensored(hi) => (T::neg_infinity(), hi),
            Observation::RightCensored(lo) => (lo, T::infinity()),
        }
    }

    pub fn exact_value(&self) -> Option<T> {
        match self.observation {
            Observation::Exact(y) => Some(y),
            _ => None,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.observation, Observation::Exact(_))
    }

    /// Finite endpoints of the observation, used to choose a default support.
    pub fn finite_values(&self) -> impl Iterator<Item = T> {
        let (lo, hi) = self.bounds();
        [lo, hi].into_iter().filter(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<(), TramError> {
        let bad = |m: &str| Err(TramError::InvalidResponse(m.to_string()));
        match self.observation {
            Observation::Exact(y) if !y.is_finite() => return bad("exact value must be finite"),
            Observation::IntervalCensored(lo, hi) if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                return bad("interval censoring requires finite low < high")
            }
            Observation::LeftCensored(hi) if !hi.is_finite() => return bad("left-censoring bound must be finite"),
            Observation::RightCensored(lo) if !lo.is_finite() => return bad("right-censoring bound must be finite"),
            _ => {}
        }
        if let Some((tl, th)) = self.truncation {
            if tl.is_nan() || th.is_nan() || !(tl < th) {
                return bad("truncation requires t_low < t_high");
            }
            let (lo, hi) = self.bounds();
            let inside = match self.observation {
                Observation::Exact(y) => tl < y && y <= th,
                _ => tl <= lo && hi <= th,
            };
            if !inside {
                return bad("observation lies outside its truncation interval");
            }
        }
        Ok(())
    }

    /// Key identifying observations that carry the same information.
    fn key(&self) -> (u64, u64) {
        let (lo, hi) = self.bounds();
        (lo.f64().to_bits(), hi.f64().to_bits())
    }
}

/// Basis coefficients of `h(y)` and `h'(y)` at one point. Outside the support the
/// transformation is continued linearly, which keeps both rows linear in `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint<T> {
    pub a: Vec<T>,
    pub da: Vec<T>,
}

impl<T: Scalar> EvalPoint<T> {
    pub fn new(basis: &BernsteinBasis<T>, y: T) -> Self {
        let s = basis.support();
        let anchor = y.max(s.lower()).min(s.upper());
        let mut a = basis.eval(anchor).expect("anchor inside support");
        let da = basis.deriv(anchor).expect("anchor inside support");
        let offset = y - anchor;
        if offset != T::zero() {
            for (ai, &di) in a.iter_mut().zip(&da) {
                *ai = *ai + offset * di;
            }
        }
        Self { a, da }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[derive(Debug, Clone, PartialEq)]
enum Contribution<T> {
    Exact(EvalPoint<T>),
    /// `None` marks an infinite end.
    Region(Option<Vec<T>>, Option<Vec<T>>),
}

/// Basis rows at the truncation bounds; `None` for an infinite bound.
type TruncationRows<T> = (Option<Vec<T>>, Option<Vec<T>>);

/// A response with its basis rows evaluated once, ready for repeated
/// likelihood evaluation at different `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedResponse<T> {
    contribution: Contribution<T>,
    truncation: Option<TruncationRows<T>>,
}

fn region_row<T: Scalar>(basis: &BernsteinBasis<T>, v: T) -> Option<Vec<T>> {
    if v.is_finite() {
        Some(EvalPoint::new(basis, v).a)
    } else {
        None
    }
}

impl<T: Scalar> PreparedResponse<T> {
    pub fn new(basis: &BernsteinBasis<T>, resp: &Response<T>) -> Self {
        let contribution = match resp.observation {
            Observation::Exact(y) => Contribution::Exact(EvalPoint::new(basis, y)),
            _ => {
                let (lo, hi) = resp.bounds();
                Contribution::Region(region_row(basis, lo), region_row(basis, hi))
            }
        };
        let truncation = resp
            .truncation
            .map(|(tl, th)| (region_row(basis, tl), region_row(basis, th)));
        Self { contribution, truncation }
    }

    /// Log-likelihood contribution at `theta`; adds `weight * score` into `grad`.
    pub fn accumulate(&self, dist: BaseDistribution, theta: &[T], weight: T, grad: &mut [T]) -> T {
        let mut ll = match &self.contribution {
            Contribution::Exact(p) => {
                let z = dot(&p.a, theta);
                let hp = dot(&p.da, theta);
                if !(hp > T::zero()) {
                    return T::neg_infinity();
                }
                let dl = dist.dlog_pdf(z);
                let inv = T::one() / hp;
                for ((g, &a), &da) in grad.iter_mut().zip(&p.a).zip(&p.da) {
                    *g = *g + weight * (a * dl + da * inv);
                }
                dist.log_pdf(z) + hp.ln()
            }
            Contribution::Region(lo, hi) => region(dist, lo.as_deref(), hi.as_deref(), theta, weight, grad),
        };
        if let Some((lo, hi)) = &self.truncation {
            ll = ll - region(dist, lo.as_deref(), hi.as_deref(), theta, -weight, grad);
        }
        ll
    }

    pub fn log_likelihood(&self, dist: BaseDistribution, theta: &[T]) -> T {
        let mut scratch = vec![T::zero(); theta.len()];
        self.accumulate(dist, theta, T::zero(), &mut scratch)
    }
}

/// `ln(F(h(hi)) - F(h(lo)))` and its gradient scaled by `weight` added to `grad`.
fn region<T: Scalar>(
    dist: BaseDistribution,
    lo: Option<&[T]>,
    hi: Option<&[T]>,
    theta: &[T],
    weight: T,
    grad: &mut [T],
) -> T {
    let zl = lo.map_or(T::neg_infinity(), |a| dot(a, theta));
    let zh = hi.map_or(T::infinity(), |a| dot(a, theta));
    let l = dist.log_prob_between(zl, zh);
    if !l.is_finite() {
        return l;
    }
    if weight != T::zero() {
        if let Some(a) = hi {
            let c = weight * (dist.log_pdf(zh) - l).exp();
            for (g, &ai) in grad.iter_mut().zip(a) {
                *g = *g + c * ai;
            }
        }
        if let Some(a) = lo {
            let c = weight * (dist.log_pdf(zl) - l).exp();
            for (g, &ai) in grad.iter_mut().zip(a) {
                *g = *g - c * ai;
            }
        }
    }
    l
}

/// Fixed parts of a transformation model: basis and base distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationFamily<T> {
    pub basis: BernsteinBasis<T>,
    pub dist: BaseDistribution,
}

impl<T: Scalar> TransformationFamily<T> {
    pub fn new(order: usize, support: SupportInterval<T>, dist: BaseDistribution) -> Result<Self, TramError> {
        Ok(Self { basis: BernsteinBasis::new(order, support)?, dist })
    }

    /// Family with the support padded by 5% of the observed range on both sides.
    pub fn for_responses(order: usize, responses: &[Response<T>], dist: BaseDistribution) -> Result<Self, TramError> {
        let support = SupportInterval::padded(responses.iter().flat_map(|r| r.finite_values()), T::c(0.05))?;
        Self::new(order, support, dist)
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Feasible starting point: coefficients equally spaced over the 10% to 90%
    /// quantile range of `F_Z`.
    pub fn initial_theta(&self) -> Vec<T> {
        let lo = self.dist.quantile(T::c(0.1)).expect("0.1 in (0,1)");
        let hi = self.dist.quantile(T::c(0.9)).expect("0.9 in (0,1)");
        let p = self.dim();
        (0..p)
            .map(|k| lo + (hi - lo) * T::c(k as f64) / T::c((p - 1) as f64))
            .collect()
    }

    pub fn model(&self, theta: Vec<T>) -> Result<TransformationModel<T>, TramError> {
        TransformationModel::new(self.basis.clone(), self.dist, theta)
    }

    pub fn prepare(&self, responses: &[Response<T>]) -> PreparedData<T> {
        PreparedData {
            family: self.clone(),
            rows: responses.iter().map(|r| PreparedResponse::new(&self.basis, r)).collect(),
            keys: responses.iter().map(|r| r.key()).collect(),
        }
    }
}

/// A fully specified transformation model `F_Z(a(y)ᵀθ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformationModel<T> {
    basis: BernsteinBasis<T>,
    dist: BaseDistribution,
    theta: Vec<T>,
}

impl<T: Scalar> TransformationModel<T> {
    pub fn new(basis: BernsteinBasis<T>, dist: BaseDistribution, theta: Vec<T>) -> Result<Self, TramError> {
        if theta.len() != basis.dim() {
            return Err(TramError::DimensionMismatch { expected: basis.dim(), got: theta.len() });
        }
        if let Some(k) = theta.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(TramError::NotMonotone(k));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(TramError::NotMonotone(0));
        }
        Ok(Self { basis, dist, theta })
    }

    pub fn basis(&self) -> &BernsteinBasis<T> {
        &self.basis
    }

    pub fn dist(&self) -> BaseDistribution {
        self.dist
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn family(&self) -> TransformationFamily<T> {
        TransformationFamily { basis: self.basis.clone(), dist: self.dist }
    }

    /// `h(y)`, continued linearly beyond the support.
    pub fn h(&self, y: T) -> T {
        if y == T::infinity() || y == T::neg_infinity() {
            return y;
        }
        dot(&EvalPoint::new(&self.basis, y).a, &self.theta)
    }

    pub fn h_prime(&self, y: T) -> T {
        dot(&EvalPoint::new(&self.basis, y).da, &self.theta)
    }

    pub fn log_likelihood(&self, resp: &Response<T>) -> Result<T, TramError> {
        resp.validate()?;
        let ll = PreparedResponse::new(&self.basis, resp).log_likelihood(self.dist, &self.theta);
        if ll.is_finite() {
            Ok(ll)
        } else {
            Err(TramError::DegenerateLikelihood)
        }
    }

    /// Gradient of [`Self::log_likelihood`] with respect to `θ`.
    pub fn score(&self, resp: &Response<T>) -> Result<Vec<T>, TramError> {
        resp.validate()?;
        let mut g = vec![T::zero(); self.theta.len()];
        let ll = PreparedResponse::new(&self.basis, resp).accumulate(self.dist, &self.theta, T::one(), &mut g);
        if ll.is_finite() {
            Ok(g)
        } else {
            Err(TramError::DegenerateLikelihood)
        }
    }

    pub fn cdf(&self, y: T) -> T {
        self.dist.cdf(self.h(y))
    }

    /// Log-density of an exact observation.
    pub fn log_density(&self, y: T) -> T {
        let p = EvalPoint::new(&self.basis, y);
        let hp = dot(&p.da, &self.theta);
        self.dist.log_pdf(dot(&p.a, &self.theta)) + hp.ln()
    }

    /// Quantile by bisection on the support, clamped to the support endpoints.
    /// The flag reports whether clamping happened.
    pub fn quantile_clamped(&self, p: T) -> Result<(T, bool), TramError> {
        if !(p > T::zero() && p < T::one()) {
            return Err(BasisError::ProbabilityDomain(p.f64()).into());
        }
        let s = *self.basis.support();
        let z = self.dist.quantile(p)?;
        let (mut lo, mut hi) = (s.lower(), s.upper());
        if z <= self.h(lo) {
            return Ok((lo, true));
        }
        if z >= self.h(hi) {
            return Ok((hi, true));
        }
        let tol = T::c(1e-9);
        while hi - lo > tol {
            let mid = lo + (hi - lo) * T::c(0.5);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.h(mid) < z {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((lo + (hi - lo) * T::c(0.5), false))
    }

    pub fn quantile(&self, p: T) -> Result<T, TramError> {
        self.quantile_clamped(p).map(|(q, _)| q)
    }
}

/// Optimizer settings for [`fit_mle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig<T> {
    /// Minimum gap between consecutive coefficients.
    pub gap_tol: T,
    pub grad_tol: T,
    pub rel_tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            gap_tol: T::c(1e-8),
            grad_tol: T::default_grad_tol(),
            rel_tol: T::c(1e-8).max(T::epsilon() * T::c(10.0)),
            max_iter: 500,
        }
    }
}

/// Result of a weighted maximum likelihood fit.
#[derive(Debug, Clone)]
pub struct Fit<T> {
    pub model: TransformationModel<T>,
    /// `Σ w_i ℓ_i(θ̂)`
    pub log_likelihood: T,
    pub iterations: usize,
}

/// Responses prepared against one family; fits on arbitrary weighted subsets.
#[derive(Debug, Clone)]
pub struct PreparedData<T> {
    family: TransformationFamily<T>,
    rows: Vec<PreparedResponse<T>>,
    keys: Vec<(u64, u64)>,
}

fn theta_from_gamma<T: Scalar>(gamma: &[T], gap_tol: T, theta: &mut [T]) {
    theta[0] = gamma[0];
    for k in 1..gamma.len() {
        theta[k] = theta[k - 1] + gap_tol + gamma[k].exp();
    }
}

fn gamma_from_theta<T: Scalar>(theta: &[T], gap_tol: T) -> Vec<T> {
    let floor = T::c(1e-300).max(T::min_positive_value());
    let mut g = Vec::with_capacity(theta.len());
    g.push(theta[0]);
    for k in 1..theta.len() {
        g.push((theta[k] - theta[k - 1] - gap_tol).max(floor).ln());
    }
    g
}

impl<T: Scalar> PreparedData<T> {
    pub fn family(&self) -> &TransformationFamily<T> {
        &self.family
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &PreparedResponse<T> {
        &self.rows[i]
    }

    pub fn log_likelihood(&self, i: usize, theta: &[T]) -> T {
        self.rows[i].log_likelihood(self.family.dist, theta)
    }

    /// Score of row `i` at `theta` written into `out`.
    pub fn score_into(&self, i: usize, theta: &[T], out: &mut [T]) -> T {
        out.iter_mut().for_each(|v| *v = T::zero());
        self.rows[i].accumulate(self.family.dist, theta, T::one(), out)
    }

    /// Weighted objective `Σ w_i ℓ_i(θ)` over `(row, weight)` pairs.
    pub fn objective(&self, subset: &[(usize, T)], theta: &[T]) -> T {
        subset
            .iter()
            .map(|&(i, w)| w * self.log_likelihood(i, theta))
            .fold(T::zero(), |a, b| a + b)
    }

    /// Maximises `Σ w_i ℓ_i(θ)` over `(row, weight)` pairs with positive weight.
    pub fn fit(&self, subset: &[(usize, T)], init: Option<&[T]>, config: &FitConfig<T>) -> Result<Fit<T>, TramError> {
        let p = self.family.dim();
        let active: Vec<(usize, T)> = subset.iter().copied().filter(|&(_, w)| w > T::zero()).collect();
        if subset.iter().any(|&(_, w)| !(w.is_finite() && w >= T::zero())) || active.is_empty() {
            return Err(TramError::InvalidWeights);
        }
        let distinct = active.iter().map(|&(i, _)| self.keys[i]).collect::<HashSet<_>>().len();
        if distinct < p {
            return Err(TramError::RankDeficient { distinct, params: p });
        }
        let total = active.iter().fold(T::zero(), |a, &(_, w)| a + w);
        let scale = T::one() / total;
        let gap = config.gap_tol;
        let dist = self.family.dist;

        let start = match init {
            Some(t) if t.len() == p => t.to_vec(),
            _ => self.family.initial_theta(),
        };
        let mut theta = vec![T::zero(); p];
        let mut gtheta = vec![T::zero(); p];
        let objective = |gamma: &[T], grad: &mut [T]| -> T {
            theta_from_gamma(gamma, gap, &mut theta);
            gtheta.iter_mut().for_each(|v| *v = T::zero());
            let mut value = T::zero();
            for &(i, w) in &active {
                let ll = self.rows[i].accumulate(dist, &theta, w * scale, &mut gtheta);
                if !ll.is_finite() {
                    return T::infinity();
                }
                value = value - w * scale * ll;
            }
            // chain rule through the cumulative exp reparameterisation
            let mut tail = T::zero();
            for k in (0..p).rev() {
                tail = tail - gtheta[k];
                grad[k] = if k == 0 { tail } else { tail * gamma[k].exp() };
            }
            value
        };

        let mut x0 = gamma_from_theta(&start, gap);
        let opts = BfgsOptions { grad_tol: config.grad_tol, rel_tol: config.rel_tol, max_iter: config.max_iter };
        let mut objective = objective;
        let result = match optim::minimize(&mut objective, &x0, &opts) {
            Some(r) => r,
            None => {
                // warm start infeasible for this subset, fall back to the default start
                x0 = gamma_from_theta(&self.family.initial_theta(), gap);
                optim::minimize(&mut objective, &x0, &opts).ok_or(TramError::DegenerateLikelihood)?
            }
        };
        let mut best = vec![T::zero(); p];
        theta_from_gamma(&result.x, gap, &mut best);
        // the cumulative sum can land a rounding error short of the minimum gap
        for k in 1..p {
            while best[k] - best[k - 1] < gap {
                best[k] = best[k] + best[k].abs().max(T::one()) * T::epsilon();
            }
        }
        if !result.converged && result.grad_norm > config.grad_tol.sqrt() {
            return Err(TramError::NotConverged {
                iterations: result.iterations,
                grad_norm: result.grad_norm.f64(),
                best: best.iter().map(|v| v.f64()).collect(),
            });
        }
        let model = self.family.model(best)?;
        Ok(Fit { log_likelihood: -result.value * total, model, iterations: result.iterations })
    }
}

/// Weighted maximum likelihood estimate for `responses` under `family`.
pub fn fit_mle<T: Scalar>(
    family: &TransformationFamily<T>,
    responses: &[Response<T>],
    weights: &[T],
    config: &FitConfig<T>,
) -> Result<TransformationModel<T>, TramError> {
    if weights.len() != responses.len() {
        return Err(TramError::InvalidWeights);
    }
    for r in responses {
        r.validate()?;
    }
    let data = family.prepare(responses);
    let subset: Vec<(usize, T)> = weights.iter().copied().enumerate().collect();
    data.fit(&subset, None, config).map(|f| f.model)
}

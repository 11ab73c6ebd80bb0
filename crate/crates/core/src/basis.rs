//! Bernstein polynomial bases and the parameter-free base distributions `F_Z`.

use serde::{Deserialize, Serialize};
use statrs::function::erf;
use thiserror::Error;

use crate::scalar::{log1mexp, softplus, Scalar};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BasisError {
    #[error("support interval is invalid: lower ({lower}) must be finite and below upper ({upper})")]
    InvalidSupport { lower: f64, upper: f64 },

    #[error("Bernstein order must be at least 1, got {0}")]
    InvalidOrder(usize),

    #[error("value {y} lies outside the support [{lower}, {upper}]")]
    OutOfSupport { y: f64, lower: f64, upper: f64 },

    #[error("probability {0} is outside the open unit interval")]
    ProbabilityDomain(f64),
}

/// Closed interval `[lower, upper]` on which the Bernstein basis lives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportInterval<T> {
    lower: T,
    upper: T,
}

impl<T: Scalar> SupportInterval<T> {
    pub fn new(lower: T, upper: T) -> Result<Self, BasisError> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(BasisError::InvalidSupport {
                lower: lower.f64(),
                upper: upper.f64(),
            });
        }
        Ok(Self { lower, upper })
    }

    /// Support covering `values` padded by `pad` times their range on each side.
    /// A zero range is widened to unit width around the single value.
    pub fn padded(values: impl IntoIterator<Item = T>, pad: T) -> Result<Self, BasisError> {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Err(BasisError::InvalidSupport {
                lower: lo.f64(),
                upper: hi.f64(),
            });
        }
        let range = hi - lo;
        if range <= T::zero() {
            let half = T::c(0.5);
            return Self::new(lo - half, hi + half);
        }
        Self::new(lo - pad * range, hi + pad * range)
    }

    pub fn lower(&self) -> T {
        self.lower
    }

    pub fn upper(&self) -> T {
        self.upper
    }

    pub fn width(&self) -> T {
        self.upper - self.lower
    }

    pub fn contains(&self, y: T) -> bool {
        y >= self.lower && y <= self.upper
    }

    /// Maps `y` onto the unit interval.
    pub fn unit(&self, y: T) -> T {
        (y - self.lower) / self.width()
    }
}

/// Bernstein basis of order `M` with `P = M + 1` basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinBasis<T> {
    order: usize,
    support: SupportInterval<T>,
    binom: Vec<T>,
    binom_lower: Vec<T>,
}

fn binomials<T: Scalar>(n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n + 1);
    let mut c = 1.0f64;
    for k in 0..=n {
        out.push(T::c(c.round()));
        c = c * (n - k) as f64 / (k + 1) as f64;
    }
    out
}

impl<T: Scalar> BernsteinBasis<T> {
    pub fn new(order: usize, support: SupportInterval<T>) -> Result<Self, BasisError> {
        if order == 0 {
            return Err(BasisError::InvalidOrder(order));
        }
        Ok(Self {
            order,
            support,
            binom: binomials(order),
            binom_lower: binomials(order - 1),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions, `M + 1`.
    pub fn dim(&self) -> usize {
        self.order + 1
    }

    pub fn support(&self) -> &SupportInterval<T> {
        &self.support
    }

    fn check(&self, y: T) -> Result<T, BasisError> {
        if !self.support.contains(y) {
            return Err(BasisError::OutOfSupport {
                y: y.f64(),
                lower: self.support.lower.f64(),
                upper: self.support.upper.f64(),
            });
        }
        Ok(self.support.unit(y).max(T::zero()).min(T::one()))
    }

    /// Basis vector `a(y)`; entries are non-negative and sum to one.
    pub fn eval(&self, y: T) -> Result<Vec<T>, BasisError> {
        let mut out = vec![T::zero(); self.dim()];
        self.eval_into(y, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, y: T, out: &mut [T]) -> Result<(), BasisError> {
        let u = self.check(y)?;
        bernstein_row(&self.binom, u, out);
        Ok(())
    }

    /// Derivative `a'(y)` with respect to `y`, so that `a'(y)ᵀθ = h'(y)`.
    pub fn deriv(&self, y: T) -> Result<Vec<T>, BasisError> {
        let mut out = vec![T::zero(); self.dim()];
        self.deriv_into(y, &mut out)?;
        Ok(out)
    }

    pub fn deriv_into(&self, y: T, out: &mut [T]) -> Result<(), BasisError> {
        let u = self.check(y)?;
        let m = self.order;
        let mut lower = vec![T::zero(); m];
        bernstein_row(&self.binom_lower, u, &mut lower);
        let scale = T::c(m as f64) / self.support.width();
        for k in 0..=m {
            let left = if k > 0 { lower[k - 1] } else { T::zero() };
            let right = if k < m { lower[k] } else { T::zero() };
            out[k] = scale * (left - right);
        }
        Ok(())
    }
}

fn bernstein_row<T: Scalar>(binom: &[T], u: T, out: &mut [T]) {
    let n = binom.len() - 1;
    let v = T::one() - u;
    for (k, slot) in out.iter_mut().enumerate().take(n + 1) {
        *slot = binom[k] * u.powi(k as i32) * v.powi((n - k) as i32);
    }
}

/// Parameter-free continuous base distribution of the latent variable `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseDistribution {
    StandardNormal,
    StandardLogistic,
    StandardMinExtremeValue,
}

/// `(F_Z(z), f_Z(z), f_Z'(z) / f_Z(z))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistEval<T> {
    pub cdf: T,
    pub pdf: T,
    pub dlogpdf: T,
}

const NORMAL_TAIL: f64 = -30.0;

fn normal_log_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z < NORMAL_TAIL {
        // Mills ratio expansion
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)
            + 105.0 / (z2 * z2 * z2 * z2);
        -0.5 * z2 - 0.5 * (2.0 * std::f64::consts::PI).ln() - (-z).ln() + series.ln()
    } else if z <= 0.0 {
        (0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        (-0.5 * libm::erfc(z / std::f64::consts::SQRT_2)).ln_1p()
    }
}

fn normal_quantile(p: f64) -> f64 {
    let x = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    // one Newton step tidies the last few ulps of erfc_inv
    let cdf = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let step = (cdf - p) / pdf;
    if step.is_finite() {
        x - step
    } else {
        x
    }
}

impl BaseDistribution {
    pub const ALL: [BaseDistribution; 3] = [
        BaseDistribution::StandardNormal,
        BaseDistribution::StandardLogistic,
        BaseDistribution::StandardMinExtremeValue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseDistribution::StandardNormal => "normal",
            BaseDistribution::StandardLogistic => "logistic",
            BaseDistribution::StandardMinExtremeValue => "minextreme",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == name)
    }

    /// Median of `Z`, used to pick the numerically favourable tail.
    pub fn median<T: Scalar>(self) -> T {
        match self {
            BaseDistribution::StandardMinExtremeValue => T::c(std::f64::consts::LN_2.ln()),
            _ => T::zero(),
        }
    }

    pub fn log_pdf<T: Scalar>(self, z: T) -> T {
        match self {
            BaseDistribution::StandardNormal => {
                -T::c(0.5) * z * z - T::c(0.5 * (2.0 * std::f64::consts::PI).ln())
            }
            BaseDistribution::StandardLogistic => -z.abs() - T::c(2.0) * (-z.abs()).exp().ln_1p(),
            BaseDistribution::StandardMinExtremeValue => z - z.exp(),
        }
    }

    pub fn pdf<T: Scalar>(self, z: T) -> T {
        self.log_pdf(z).exp()
    }

    /// `f_Z'(z) / f_Z(z)`.
    pub fn dlog_pdf<T: Scalar>(self, z: T) -> T {
        match self {
            BaseDistribution::StandardNormal => -z,
            BaseDistribution::StandardLogistic => -(z * T::c(0.5)).tanh(),
            BaseDistribution::StandardMinExtremeValue => T::one() - z.exp(),
        }
    }

    pub fn log_cdf<T: Scalar>(self, z: T) -> T {
        if z == T::neg_infinity() {
            return T::neg_infinity();
        }
        if z == T::infinity() {
            return T::zero();
        }
        match self {
            BaseDistribution::StandardNormal => T::c(normal_log_cdf(z.f64())),
            BaseDistribution::StandardLogistic => -softplus(-z),
            BaseDistribution::StandardMinExtremeValue => log1mexp(-z.exp()),
        }
    }

    /// `ln(1 - F_Z(z))`.
    pub fn log_sf<T: Scalar>(self, z: T) -> T {
        if z == T::neg_infinity() {
            return T::zero();
        }
        if z == T::infinity() {
            return T::neg_infinity();
        }
        match self {
            BaseDistribution::StandardNormal => T::c(normal_log_cdf(-z.f64())),
            BaseDistribution::StandardLogistic => -softplus(z),
            BaseDistribution::StandardMinExtremeValue => -z.exp(),
        }
    }

    pub fn cdf<T: Scalar>(self, z: T) -> T {
        if z <= self.median() {
            self.log_cdf(z).exp()
        } else {
            -self.log_sf(z).exp_m1()
        }
    }

    pub fn eval<T: Scalar>(self, z: T) -> DistEval<T> {
        DistEval {
            cdf: self.cdf(z),
            pdf: self.pdf(z),
            dlogpdf: self.dlog_pdf(z),
        }
    }

    /// `ln(F_Z(hi) - F_Z(lo))` for `lo < hi`; either end may be infinite.
    pub fn log_prob_between<T: Scalar>(self, lo: T, hi: T) -> T {
        if !(lo < hi) {
            return T::neg_infinity();
        }
        if lo == T::neg_infinity() {
            return self.log_cdf(hi);
        }
        if hi == T::infinity() {
            return self.log_sf(lo);
        }
        if lo >= self.median() {
            let a = self.log_sf(lo);
            let b = self.log_sf(hi);
            a + log1mexp(b - a)
        } else {
            let a = self.log_cdf(hi);
            let b = self.log_cdf(lo);
            a + log1mexp(b - a)
        }
    }

    /// Inverse of `F_Z`.
    pub fn quantile<T: Scalar>(self, p: T) -> Result<T, BasisError> {
        if !(p > T::zero() && p < T::one()) {
            return Err(BasisError::ProbabilityDomain(p.f64()));
        }
        Ok(match self {
            BaseDistribution::StandardNormal => T::c(normal_quantile(p.f64())),
            BaseDistribution::StandardLogistic => p.ln() - (-p).ln_1p(),
            BaseDistribution::StandardMinExtremeValue => (-(-p).ln_1p()).ln(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit(order: usize) -> BernsteinBasis<f64> {
        BernsteinBasis::new(order, SupportInterval::new(0.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn order_one_values() {
        let b = unit(1);
        assert_eq!(b.eval(0.0).unwrap(), vec![1.0, 0.0]);
        let v = b.eval(0.25).unwrap();
        assert_abs_diff_eq!(v[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn order_one_derivative() {
        let b = unit(1);
        for &y in &[0.0, 0.3, 1.0] {
            // θ = (0, 1)
            let d = b.deriv(y).unwrap();
            assert_abs_diff_eq!(d[1], 1.0, epsilon = 1e-15);
        }
        let wide = BernsteinBasis::new(1, SupportInterval::new(-2.0, 2.0).unwrap()).unwrap();
        let d = wide.deriv(0.7).unwrap();
        assert_abs_diff_eq!(d[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn endpoints_interpolate() {
        let b = unit(6);
        let lo = b.eval(0.0).unwrap();
        let hi = b.eval(1.0).unwrap();
        assert_eq!(lo[0], 1.0);
        assert!(lo[1..].iter().all(|&v| v == 0.0));
        assert_eq!(hi[6], 1.0);
        assert!(hi[..6].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_coefficients_give_constant_h() {
        let b = BernsteinBasis::new(7, SupportInterval::new(-3.0, 5.0).unwrap()).unwrap();
        for i in 0..=20 {
            let y = -3.0 + 8.0 * i as f64 / 20.0;
            let h: f64 = b.eval(y).unwrap().iter().map(|a| a * 2.5).sum();
            assert_abs_diff_eq!(h, 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn outside_support_is_rejected() {
        let b = unit(3);
        assert!(matches!(b.eval(1.5), Err(BasisError::OutOfSupport { .. })));
        assert!(matches!(b.deriv(-0.1), Err(BasisError::OutOfSupport { .. })));
    }

    #[test]
    fn invalid_construction() {
        assert!(SupportInterval::new(1.0, 1.0).is_err());
        assert!(SupportInterval::new(0.0, f64::INFINITY).is_err());
        assert!(BernsteinBasis::new(0, SupportInterval::new(0.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn distribution_values_at_zero() {
        let n = BaseDistribution::StandardNormal.eval(0.0f64);
        assert_abs_diff_eq!(n.cdf, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(n.pdf, 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert_eq!(n.dlogpdf, 0.0);

        let l = BaseDistribution::StandardLogistic.eval(0.0f64);
        assert_abs_diff_eq!(l.cdf, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(l.pdf, 0.25, epsilon = 1e-15);
        assert_eq!(l.dlogpdf, 0.0);

        let e = BaseDistribution::StandardMinExtremeValue.eval(0.0f64);
        assert_abs_diff_eq!(e.cdf, 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(e.pdf, (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(e.dlogpdf, 0.0);
    }

    #[test]
    fn quantiles() {
        let q: f64 = BaseDistribution::StandardLogistic.quantile(0.5).unwrap();
        assert_abs_diff_eq!(q, 0.0, epsilon = 1e-15);
        let q: f64 = BaseDistribution::StandardNormal.quantile(0.95).unwrap();
        assert_abs_diff_eq!(q, 1.644_853_626_951_472_2, epsilon = 1e-12);
        let p = 1.0 - (-1.0f64).exp();
        let q: f64 = BaseDistribution::StandardMinExtremeValue.quantile(p).unwrap();
        assert_abs_diff_eq!(q, 0.0, epsilon = 1e-12);
        assert!(BaseDistribution::StandardNormal.quantile(1.0f64).is_err());
        assert!(BaseDistribution::StandardNormal.quantile(0.0f64).is_err());
    }

    #[test]
    fn normal_tails_stay_finite_in_log_space() {
        let d = BaseDistribution::StandardNormal;
        let lc: f64 = d.log_cdf(-40.0);
        // ln Φ(-40) = -804.608442013754...
        assert_abs_diff_eq!(lc, -804.608_442_013_754, epsilon = 1e-6);
        let ls: f64 = d.log_sf(40.0);
        assert_eq!(lc, ls);
        // continuity across the switch to the asymptotic branch
        let a = normal_log_cdf(NORMAL_TAIL - 1e-9);
        let b = normal_log_cdf(NORMAL_TAIL + 1e-9);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn log_prob_between_matches_difference() {
        for d in BaseDistribution::ALL {
            for &(lo, hi) in &[(-1.0f64, 0.5f64), (0.2, 0.9), (-3.0, -2.9), (1.5, 4.0)] {
                let direct = (d.cdf(hi) - d.cdf(lo)).ln();
                let got: f64 = d.log_prob_between(lo, hi);
                assert_abs_diff_eq!(got, direct, epsilon = 1e-10);
            }
            assert_eq!(d.log_prob_between(1.0, 1.0f64), f64::NEG_INFINITY);
        }
    }

    #[test]
    fn f32_basis_partition_of_unity() {
        let b = BernsteinBasis::new(5, SupportInterval::new(0.0f32, 2.0).unwrap()).unwrap();
        let s: f32 = b.eval(0.77).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

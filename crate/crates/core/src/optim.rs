//! Unconstrained quasi-Newton minimisation (BFGS with Armijo backtracking).

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions<T> {
    pub grad_tol: T,
    pub rel_tol: T,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct BfgsResult<T> {
    pub x: Vec<T>,
    pub value: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn inf_norm<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Minimises `f`, which writes the gradient into its second argument and returns the value.
///
/// Returns `None` when the objective is not finite at `x0`.
pub fn minimize<T, F>(mut f: F, x0: &[T], opts: &BfgsOptions<T>) -> Option<BfgsResult<T>>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]) -> T,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![T::zero(); n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }

    // dense inverse Hessian approximation, row-major
    let mut h = identity::<T>(n);
    let mut scaled = false;
    let mut d = vec![T::zero(); n];
    let mut x_new = vec![T::zero(); n];
    let mut g_new = vec![T::zero(); n];
    let mut s = vec![T::zero(); n];
    let mut y = vec![T::zero(); n];
    let mut hy = vec![T::zero(); n];
    let mut small_steps = 0usize;
    let c1 = T::c(1e-4);

    for iter in 0..opts.max_iter {
        let gn = inf_norm(&g);
        if gn < opts.grad_tol {
            return Some(BfgsResult { x, value: fx, grad_norm: gn, iterations: iter, converged: true });
        }

        for i in 0..n {
            d[i] = -(0..n).fold(T::zero(), |acc, j| acc + h[i * n + j] * g[j]);
        }
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) {
            h = identity(n);
            scaled = false;
            for i in 0..n {
                d[i] = -g[i];
            }
            slope = dot(&g, &d);
        }

        let mut t = if scaled { T::one() } else { T::one().min(T::one() / gn) };
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + t * d[i];
            }
            f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + c1 * t * slope && g_new.iter().all(|v| v.is_finite()) {
                accepted = true;
                break;
            }
            // quadratic interpolation, safeguarded to [0.1, 0.5] of the current step
            let shrink = if f_new.is_finite() {
                let denom = T::c(2.0) * (f_new - fx - slope * t);
                if denom > T::zero() {
                    (-slope * t / denom).max(T::c(0.1)).min(T::c(0.5))
                } else {
                    T::c(0.5)
                }
            } else {
                T::c(0.25)
            };
            t = t * shrink;
        }

        if !accepted {
            if scaled {
                h = identity(n);
                scaled = false;
                continue;
            }
            // no descent possible from here: stationary up to rounding
            return Some(BfgsResult { x, value: fx, grad_norm: gn, iterations: iter, converged: false });
        }

        for i in 0..n {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
        }
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > T::c(1e-12) * (dot(&s, &s) * yy).sqrt() && sy > T::zero() {
            if !scaled {
                let gamma = sy / yy;
                h = identity(n);
                for i in 0..n {
                    h[i * n + i] = gamma;
                }
                scaled = true;
            }
            for i in 0..n {
                hy[i] = (0..n).fold(T::zero(), |acc, j| acc + h[i * n + j] * y[j]);
            }
            let yhy = dot(&y, &hy);
            let rho = T::one() / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = h[i * n + j] - rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }

        let rel = (fx - f_new).abs() / fx.abs().max(T::one());
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        if rel < opts.rel_tol {
            small_steps += 1;
            if small_steps >= 2 {
                let gn = inf_norm(&g);
                return Some(BfgsResult { x, value: fx, grad_norm: gn, iterations: iter + 1, converged: true });
            }
        } else {
            small_steps = 0;
        }
    }
    let gn = inf_norm(&g);
    Some(BfgsResult {
        x,
        value: fx,
        grad_norm: gn,
        iterations: opts.max_iter,
        converged: gn < opts.grad_tol,
    })
}

fn identity<T: Scalar>(n: usize) -> Vec<T> {
    let mut h = vec![T::zero(); n * n];
    for i in 0..n {
        h[i * n + i] = T::one();
    }
    h
}

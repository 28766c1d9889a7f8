//! Unconstrained quasi-Newton (BFGS) maximisation with central
//! finite-difference gradients.

use crate::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions<T> {
    pub max_iter: usize,
    /// Stop once the gradient max-norm falls below this.
    pub grad_tol: T,
    /// Stop once the relative objective gain falls below this.
    pub rel_tol: T,
}

impl<T: Scalar> Default for BfgsOptions<T> {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: T::of(1e-6), rel_tol: T::of(1e-13) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult<T> {
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
    /// The line search failed before the gradient criterion was met.
    pub line_search_failed: bool,
}

/// Central-difference gradient with step `h_i = fd_step (1 + |x_i|)`.
pub fn fd_gradient<T: Scalar, F: FnMut(&[T]) -> T>(f: &mut F, x: &[T]) -> Vec<T> {
    let mut probe = x.to_vec();
    let two = T::one() + T::one();
    (0..x.len())
        .map(|i| {
            let h = T::fd_step() * (T::one() + x[i].abs());
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            let g = (up - down) / (two * h);
            if g.is_finite() {
                g
            } else {
                T::zero()
            }
        })
        .collect()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Maximises `f` from `x0`. Non-finite objective values are treated as
/// infeasible by the line search. The returned point is never worse than `x0`.
pub fn bfgs_maximize<T: Scalar, F: FnMut(&[T]) -> T>(mut f: F, x0: &[T], opts: &BfgsOptions<T>) -> BfgsResult<T> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if n == 0 || !fx.is_finite() {
        return BfgsResult { x, value: fx, iterations: 0, converged: false, line_search_failed: true };
    }
    // gradients of -f so the usual minimisation update applies
    let mut neg = |v: &[T]| -f(v);
    let mut g: Vec<T> = fd_gradient(&mut neg, &x);
    let mut h_inv = identity::<T>(n);
    let mut first = true;
    let armijo = T::of(1e-4);

    for iter in 1..=opts.max_iter {
        if max_abs(&g) < opts.grad_tol {
            return BfgsResult { x, value: fx, iterations: iter - 1, converged: true, line_search_failed: false };
        }
        let mut dir = mat_vec(&h_inv, &g).into_iter().map(|v| -v).collect::<Vec<_>>();
        let mut slope = dot(&g, &dir);
        if !(slope < T::zero()) {
            h_inv = identity(n);
            dir = g.iter().map(|&v| -v).collect();
            slope = dot(&g, &dir);
        }

        let mut step = T::one();
        let mut next = None;
        for _ in 0..50 {
            let cand: Vec<T> = x.iter().zip(&dir).map(|(&xi, &di)| xi + step * di).collect();
            let fc = neg(&cand);
            if fc.is_finite() && fc <= -fx + armijo * step * slope {
                next = Some((cand, -fc));
                break;
            }
            step *= T::of(0.5);
        }
        let Some((x_new, f_new)) = next else {
            return BfgsResult { x, value: fx, iterations: iter, converged: false, line_search_failed: true };
        };
        let g_new = fd_gradient(&mut neg, &x_new);
        let s: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        let gain = f_new - fx;
        x = x_new;
        g = g_new;
        fx = f_new;
        if sy > T::epsilon() * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                let scale = sy / dot(&y, &y);
                h_inv = identity(n);
                for i in 0..n {
                    h_inv[i * n + i] = scale;
                }
                first = false;
            }
            bfgs_update(&mut h_inv, &s, &y, sy);
        }
        if gain <= opts.rel_tol * (T::one() + fx.abs()) {
            let converged = max_abs(&g) < opts.grad_tol.sqrt();
            return BfgsResult { x, value: fx, iterations: iter, converged, line_search_failed: false };
        }
    }
    let converged = max_abs(&g) < opts.grad_tol;
    BfgsResult { x, value: fx, iterations: opts.max_iter, converged, line_search_failed: false }
}

fn identity<T: Scalar>(n: usize) -> Vec<T> {
    let mut m = vec![T::zero(); n * n];
    for i in 0..n {
        m[i * n + i] = T::one();
    }
    m
}

fn mat_vec<T: Scalar>(m: &[T], v: &[T]) -> Vec<T> {
    let n = v.len();
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update<T: Scalar>(h: &mut [T], s: &[T], y: &[T], sy: T) {
    let n = s.len();
    let rho = T::one() / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += (T::one() + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

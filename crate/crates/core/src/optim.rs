//! Momentum descent with a shared adaptive scale and best-iterate tracking.
//!
//! The second-moment estimate tracks the largest squared gradient component
//! rather than one per parameter, so weakly driven parameters move less.
//! An optional preconditioner reshapes the gradient before the update;
//! trajectory problems use it to smooth the gradient along time.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Schedule {
    pub iterations: usize,
    pub step_size: f64,
    /// Ratio of the final to the initial step size (geometric decay).
    pub final_step_ratio: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Minimized {
    pub params: Vec<f64>,
    pub initial: f64,
    pub value: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-12;

/// Minimizes `f`, which returns the objective and writes the gradient into
/// its second argument. The returned parameters are the best iterate seen,
/// so `value <= initial` always holds.
#[cfg(test)]
pub(crate) fn minimize<F>(x0: Vec<f64>, schedule: Schedule, f: F) -> Minimized
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    minimize_preconditioned(x0, schedule, f, |_| {})
}

/// As [`minimize`], passing each gradient through `precondition` first. The
/// preconditioner must be linear and positive definite so the step stays a
/// descent direction.
pub(crate) fn minimize_preconditioned<F, P>(
    x0: Vec<f64>,
    schedule: Schedule,
    mut f: F,
    mut precondition: P,
) -> Minimized
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: FnMut(&mut [f64]),
{
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = 0.0;
    let initial = f(&x, &mut grad);
    let mut best = (initial, x.clone());
    let iters = schedule.iterations;
    let ratio = schedule.final_step_ratio.clamp(1e-6, 1.0);
    for k in 0..iters {
        if k > 0 {
            let value = f(&x, &mut grad);
            if value < best.0 {
                best = (value, x.clone());
            }
        }
        if grad.iter().all(|g| *g == 0.0) {
            break;
        }
        let frac = if iters > 1 {
            k as f64 / (iters - 1) as f64
        } else {
            0.0
        };
        let lr = schedule.step_size * ratio.powf(frac);
        let t = (k + 1) as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let mut dir = grad.clone();
        precondition(&mut dir);
        let g2 = dir.iter().map(|g| g * g).fold(0.0, f64::max);
        v = BETA2 * v + (1.0 - BETA2) * g2;
        let denom = (v / c2).sqrt() + EPS;
        for i in 0..n {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * dir[i];
            x[i] -= lr * (m[i] / c1) / denom;
        }
    }
    let last = f(&x, &mut grad);
    if last < best.0 {
        best = (last, x);
    }
    Minimized {
        params: best.1,
        initial,
        value: best.0,
    }
}

/// Solves `(I + beta L) y = v` in place for the series
/// `v[offset], v[offset + stride], ...` of length `count`, where `L` is the
/// path-graph Laplacian. This is the gradient of the Sobolev-type metric
/// `|y|^2 + beta |Dy|^2` and spreads a point force over about `sqrt(beta)`
/// neighbours.
pub(crate) fn smooth_series(v: &mut [f64], offset: usize, stride: usize, count: usize, beta: f64) {
    if count < 2 || beta <= 0.0 {
        return;
    }
    let at = |k: usize| offset + k * stride;
    // Thomas algorithm; sub/super diagonals are -beta.
    let mut c = vec![0.0; count];
    let mut d = vec![0.0; count];
    let diag = |k: usize| 1.0 + beta * if k == 0 || k == count - 1 { 1.0 } else { 2.0 };
    let mut denom = diag(0);
    c[0] = -beta / denom;
    d[0] = v[at(0)] / denom;
    for k in 1..count {
        denom = diag(k) + beta * c[k - 1];
        c[k] = -beta / denom;
        d[k] = (v[at(k)] + beta * d[k - 1]) / denom;
    }
    v[at(count - 1)] = d[count - 1];
    for k in (0..count - 1).rev() {
        v[at(k)] = d[k] - c[k] * v[at(k + 1)];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_a_quadratic_and_never_worsens() {
        let out = minimize(
            vec![3.0, -2.0],
            Schedule {
                iterations: 2000,
                step_size: 0.05,
                final_step_ratio: 0.01,
            },
            |x, g| {
                g[0] = 2.0 * (x[0] - 1.0);
                g[1] = 20.0 * (x[1] + 0.5);
                (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 0.5).powi(2)
            },
        );
        assert!(out.value <= out.initial);
        assert!((out.params[0] - 1.0).abs() < 1e-3);
        assert!((out.params[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn smoothing_solves_the_tridiagonal_system() {
        let beta = 3.0;
        let rhs = [1.0, -2.0, 0.5, 4.0, 0.0];
        // interleave with a second series that must stay untouched
        let mut v: Vec<f64> = rhs.iter().flat_map(|&r| [r, 9.0]).collect();
        smooth_series(&mut v, 0, 2, rhs.len(), beta);
        let y: Vec<f64> = v.iter().step_by(2).copied().collect();
        let n = y.len();
        for k in 0..n {
            let mut lhs = y[k];
            if k > 0 {
                lhs += beta * (y[k] - y[k - 1]);
            }
            if k + 1 < n {
                lhs += beta * (y[k] - y[k + 1]);
            }
            assert!((lhs - rhs[k]).abs() < 1e-12);
        }
        assert!(v.iter().skip(1).step_by(2).all(|&x| x == 9.0));
    }
}

//! Small numerical utilities: stable log-sum-exp, finite differences, and a
//! compact BFGS minimizer used by the marginal-likelihood fits.

/// log(sum(exp(xs))) without overflow.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Central-difference gradient with per-coordinate relative step.
pub fn central_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h_rel: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = h_rel * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let dn = f(&xp);
        xp[i] = x[i];
        grad[i] = (up - dn) / (2.0 * h);
    }
    grad
}

/// Central-difference Hessian (symmetrized), O(n^2) function evaluations.
pub fn central_hessian(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h_rel: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| h_rel * v.abs().max(1.0)).collect();
    let mut hess = vec![vec![0.0; n]; n];
    let f0 = f(x);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let up = f(&xp);
        xp[i] = x[i] - h[i];
        let dn = f(&xp);
        xp[i] = x[i];
        hess[i][i] = (up - 2.0 * f0 + dn) / (h[i] * h[i]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            xp[i] = x[i] + h[i];
            xp[j] = x[j] + h[j];
            let pp = f(&xp);
            xp[j] = x[j] - h[j];
            let pm = f(&xp);
            xp[i] = x[i] - h[i];
            let mm = f(&xp);
            xp[j] = x[j] + h[j];
            let mp = f(&xp);
            xp[i] = x[i];
            xp[j] = x[j];
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

/// Invert a small symmetric matrix; `None` if it is numerically singular.
pub fn invert_symmetric(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let inv = m.try_inverse()?;
    if inv.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((0..n).map(|i| (0..n).map(|j| inv[(i, j)]).collect()).collect())
}

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 300, grad_tol: 1e-6, step_tol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `f` with BFGS and Armijo backtracking. `f` returns the objective
/// and its gradient.
pub fn minimize_bfgs(
    mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    opts: &BfgsOptions,
) -> BfgsOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut grad) = f(&x);
    // Inverse Hessian approximation, started at the identity.
    let mut h_inv = vec![vec![0.0; n]; n];
    for (i, row) in h_inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut iterations = 0;
    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        if inf_norm(&grad) < opts.grad_tol {
            return BfgsOutcome { grad_norm: inf_norm(&grad), x, value: fx, iterations: iter, converged: true };
        }
        // Search direction d = -H_inv * grad.
        let mut dir = vec![0.0; n];
        for i in 0..n {
            dir[i] = -(0..n).map(|j| h_inv[i][j] * grad[j]).sum::<f64>();
        }
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            // Curvature information went bad; restart from steepest descent.
            for (i, d) in dir.iter_mut().enumerate() {
                *d = -grad[i];
            }
            for (i, row) in h_inv.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();

        // Backtracking line search.
        let mut step = 1.0;
        let mut x_new;
        let mut fx_new;
        let mut grad_new;
        loop {
            x_new = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect::<Vec<_>>();
            let (v, g) = f(&x_new);
            fx_new = v;
            grad_new = g;
            if fx_new.is_finite() && fx_new <= fx + 1e-4 * step * slope {
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                // No progress possible along this direction.
                return BfgsOutcome { grad_norm: inf_norm(&grad), x, value: fx, iterations: iter, converged: false };
            }
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            // H <- (I - s y^T / sy) H (I - y s^T / sy) + s s^T / sy
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; n];
            for i in 0..n {
                hy[i] = (0..n).map(|j| h_inv[i][j] * y[j]).sum();
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += rho * rho * (sy + yhy) * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }

        let step_size = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        x = x_new;
        fx = fx_new;
        grad = grad_new;
        if step_size < opts.step_tol {
            break;
        }
    }
    let gn = inf_norm(&grad);
    BfgsOutcome { converged: gn < opts.grad_tol, grad_norm: gn, x, value: fx, iterations }
}

//! Damped Newton ascent used by every likelihood fit in the crate.

use nalgebra::{DMatrix, DVector};

use crate::numeric::gen_inverse;

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Relative change in the objective.
    pub rel_tol: f64,
    /// Sup-norm of the gradient.
    pub grad_tol: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            rel_tol: 1e-10,
            grad_tol: 1e-8,
            max_halvings: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Objective evaluation: value, gradient and Hessian at a point, or `None`
/// when the point is outside the feasible region.
pub type Evaluation = Option<(f64, DVector<f64>, DMatrix<f64>)>;

/// Maximizes `f` from `x0` by Newton steps with step-halving.
///
/// When the Hessian is not negative definite the step falls back to a
/// Levenberg-style shift so that the direction is still an ascent direction.
pub fn newton_maximize<F>(f: F, x0: DVector<f64>, opts: NewtonOptions) -> Option<NewtonOutcome>
where
    F: Fn(&DVector<f64>) -> Evaluation,
{
    let (mut value, mut grad, mut hess) = f(&x0)?;
    let mut x = x0;
    let n = x.len();
    for it in 0..opts.max_iter {
        let gnorm = grad.amax();
        if gnorm < opts.grad_tol {
            return Some(NewtonOutcome {
                x,
                value,
                gradient: grad,
                hessian: hess,
                iterations: it,
                converged: true,
            });
        }
        let step = ascent_direction(&grad, &hess, n);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_halvings {
            let cand = &x + &step * t;
            if let Some((v, g, h)) = f(&cand) {
                if v.is_finite() && v >= value - 1e-12 * value.abs().max(1.0) {
                    accepted = Some((cand, v, g, h));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, v, g, h)) = accepted else {
            let converged = grad.amax() < opts.grad_tol;
            return Some(NewtonOutcome {
                x,
                value,
                gradient: grad,
                hessian: hess,
                iterations: it,
                converged,
            });
        };
        let rel = (v - value).abs() / value.abs().max(1.0);
        x = cand;
        value = v;
        grad = g;
        hess = h;
        if rel < opts.rel_tol && grad.amax() < opts.grad_tol {
            return Some(NewtonOutcome {
                x,
                value,
                gradient: grad,
                hessian: hess,
                iterations: it + 1,
                converged: true,
            });
        }
    }
    let converged = grad.amax() < opts.grad_tol;
    Some(NewtonOutcome {
        x,
        value,
        gradient: grad,
        hessian: hess,
        iterations: opts.max_iter,
        converged,
    })
}

fn ascent_direction(grad: &DVector<f64>, hess: &DMatrix<f64>, n: usize) -> DVector<f64> {
    let neg = -hess;
    if let Some(chol) = neg.clone().cholesky() {
        return chol.solve(grad);
    }
    let scale = neg.diagonal().iter().fold(1e-8_f64, |m, v| m.max(v.abs()));
    let mut lambda = 1e-6 * scale;
    for _ in 0..40 {
        let shifted = &neg + DMatrix::identity(n, n) * lambda;
        if let Some(chol) = shifted.cholesky() {
            return chol.solve(grad);
        }
        lambda *= 10.0;
    }
    match gen_inverse(&neg) {
        Ok((inv, _)) => inv * grad,
        Err(_) => grad.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizes_concave_quadratic() {
        let target = DVector::from_vec(vec![1.0, -2.0]);
        let f = |x: &DVector<f64>| {
            let d = x - &target;
            let v = -d.dot(&d);
            Some((v, -2.0 * d, DMatrix::identity(2, 2) * -2.0))
        };
        let out = newton_maximize(f, DVector::zeros(2), NewtonOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.x - target).amax() < 1e-12);
    }

    #[test]
    fn respects_infeasible_region() {
        // log(x) - x, maximized at x = 1, defined only for x > 0
        let f = |x: &DVector<f64>| {
            let v = x[0];
            if v <= 0.0 {
                return None;
            }
            Some((
                v.ln() - v,
                DVector::from_vec(vec![1.0 / v - 1.0]),
                DMatrix::from_element(1, 1, -1.0 / (v * v)),
            ))
        };
        let out = newton_maximize(f, DVector::from_vec(vec![10.0]), NewtonOptions::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-9);
    }
}

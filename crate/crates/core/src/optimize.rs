//! BFGS minimisation for small, smooth problems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative size of `g' H g` below which `f` cannot be improved in double
/// precision.
pub const DECREMENT_TOL: f64 = 1e-13;

/// Relative decrement accepted when the line search finds no decrease at
/// all; the remaining gradient is then evaluation noise.
pub const STALL_DECREMENT_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged when the max-abs gradient drops below this.
    pub grad_tol: f64,
    /// Starting inverse-Hessian guess; identity when `None`.
    pub inverse_hessian: Option<DMatrix<f64>>,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 100, grad_tol: 1e-8, inverse_hessian: None }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
}

/// Minimise `f` given as a value-and-gradient closure.
///
/// Points where `f` returns an error are treated as `+inf` by the line
/// search. Besides the gradient test, a point is accepted once the
/// quasi-Newton decrement `g' H g` is at rounding level relative to `|f|`,
/// or when no step decreases `f` and the decrement is below
/// [`STALL_DECREMENT_TOL`].
pub fn minimize<F>(f: F, x0: DVector<f64>, opts: &BfgsOptions) -> Result<Minimum>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let d = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::NonFiniteInit { gamma: x.iter().copied().collect() });
    }
    let mut h = opts.inverse_hessian.clone().unwrap_or_else(|| DMatrix::identity(d, d));
    let mut trace = vec![fx];

    for it in 0..opts.max_iter {
        if g.amax() < opts.grad_tol {
            return Ok(Minimum { x, value: fx, grad: g, iterations: it });
        }
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if slope < 0.0 && -slope <= DECREMENT_TOL * fx.abs().max(1.0) {
            return Ok(Minimum { x, value: fx, grad: g, iterations: it });
        }
        if !(slope < 0.0) {
            // Lost positive definiteness; restart from steepest descent.
            h = opts.inverse_hessian.clone().unwrap_or_else(|| DMatrix::identity(d, d));
            dir = -(&h * &g);
            slope = g.dot(&dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * step;
            if let Ok((ft, gt)) = f(&trial) {
                if ft.is_finite() && ft < fx && ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }

        let Some((xn, fnew, gn)) = accepted else {
            if -slope <= STALL_DECREMENT_TOL * fx.abs().max(1.0) {
                return Ok(Minimum { x, value: fx, grad: g, iterations: it });
            }
            return Err(Error::Optimization { iterations: it, grad_norm: g.amax(), trace });
        };

        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * (1.0 + rho * yhy)) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = xn;
        fx = fnew;
        g = gn;
        trace.push(fx);
    }
    if g.amax() < opts.grad_tol {
        return Ok(Minimum { x, value: fx, grad: g, iterations: opts.max_iter });
    }
    Err(Error::Optimization { iterations: opts.max_iter, grad_norm: g.amax(), trace })
}

/// Central-difference Jacobian of a gradient, symmetrised.
pub fn numerical_hessian<G>(grad: G, x: &DVector<f64>, steps: &DVector<f64>) -> Result<DMatrix<f64>>
where
    G: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut up = x.clone();
        let mut dn = x.clone();
        up[j] += steps[j];
        dn[j] -= steps[j];
        let col = (grad(&up)? - grad(&dn)?) / (2.0 * steps[j]);
        h.set_column(j, &col);
    }
    Ok(crate::linalg::symmetrize(&h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn minimises_rosenbrock() {
        let f = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            Ok((v, g))
        };
        let m = minimize(f, DVector::from_vec(vec![-1.2, 1.0]), &BfgsOptions::default()).unwrap();
        assert_relative_eq!(m.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(m.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn quadratic_with_good_preconditioner_converges_immediately() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let f = |x: &DVector<f64>| Ok((0.5 * x.dot(&(&a * x)) - b.dot(x), &a * x - &b));
        let opts = BfgsOptions { inverse_hessian: a.clone().try_inverse(), ..Default::default() };
        let m = minimize(f, DVector::zeros(2), &opts).unwrap();
        assert!(m.iterations <= 2);
        let exact = a.clone().try_inverse().unwrap() * &b;
        assert_relative_eq!(m.x, exact, epsilon = 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let f = |x: &DVector<f64>| Ok((-x[0], DVector::from_vec(vec![-1.0])));
        let opts = BfgsOptions { max_iter: 5, ..Default::default() };
        assert!(matches!(minimize(f, DVector::zeros(1), &opts), Err(Error::Optimization { .. })));
    }

    #[test]
    fn hessian_of_quadratic() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let h = numerical_hessian(|x| Ok(&a * x), &DVector::from_vec(vec![0.3, -0.2]), &DVector::from_element(2, 1e-3)).unwrap();
        assert_relative_eq!(h, a, epsilon = 1e-10);
    }
}

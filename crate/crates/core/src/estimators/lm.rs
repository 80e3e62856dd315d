//! Bounded Levenberg-Marquardt least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when a step reduces the cost by less than this fraction.
    pub cost_tol: f64,
    /// Stop when the step is smaller than this relative to the parameters.
    pub step_tol: f64,
    /// Forward-difference step for the Jacobian, relative to max(|x|, 1).
    pub diff_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            cost_tol: 1e-14,
            step_tol: 1e-12,
            diff_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub x: Vec<f64>,
    /// Half the sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], upper: &[f64], h_rel: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let mut h = h_rel * x[k].abs().max(1.0);
        // step inward when sitting on the upper bound
        if x[k] + h > upper[k] {
            h = -h;
        }
        xp[k] = x[k] + h;
        let rp = f(&xp)?;
        xp[k] = x[k];
        for (i, (a, b)) in rp.iter().zip(r0).enumerate() {
            jac[(i, k)] = (a - b) / h;
        }
    }
    Ok(jac)
}

/// Minimizes ½‖f(x)‖² over the box [lower, upper].
///
/// The cost never increases between accepted iterates. Bounds are enforced
/// by projecting each trial point onto the box. Returns
/// [`Error::NonConvergence`] when no stopping rule fires within the
/// iteration budget.
pub fn minimize<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &LmOptions) -> Result<LmReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::ShapeMismatch("bounds do not match the parameter count".into()));
    }
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut r = f(&x)?;
    let mut cost = cost_of(&r);
    let mut lambda = 1e-3;
    for it in 1..=opts.max_iterations {
        if cost == 0.0 {
            return Ok(LmReport { x, cost, iterations: it - 1 });
        }
        let jac = jacobian(&f, &x, &r, upper, opts.diff_step)?;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(c) => c.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, lower, upper);
            let rt = match f(&trial) {
                Ok(v) => v,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let ct = cost_of(&rt);
            if ct.is_finite() && ct <= cost {
                let moved = x
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| (a - b).abs() / (a.abs() + opts.step_tol))
                    .fold(0.0, f64::max);
                let gain = (cost - ct) / cost;
                x = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if gain < opts.cost_tol || moved < opts.step_tol {
                    return Ok(LmReport { x, cost, iterations: it });
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no descent direction left at machine precision
            return Ok(LmReport { x, cost, iterations: it });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let rep = minimize(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &LmOptions::default()).unwrap();
        assert!((rep.x[0] - 1.0).abs() < 1e-6 && (rep.x[1] - 1.0).abs() < 1e-6, "{rep:?}");
    }

    #[test]
    fn bounds_are_respected() {
        let f = |x: &[f64]| Ok(vec![x[0] - 3.0]);
        let rep = minimize(f, &[0.0], &[-1.0], &[1.0], &LmOptions::default()).unwrap();
        assert_eq!(rep.x[0], 1.0);
    }

    #[test]
    fn exponential_fit() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.0 * (-1.3 * t).exp()).collect();
        let f = |p: &[f64]| Ok(t.iter().zip(&y).map(|(t, y)| p[0] * (-p[1] * t).exp() - y).collect());
        let rep = minimize(f, &[1.0, 0.5], &[0.0, 0.0], &[10.0, 10.0], &LmOptions::default()).unwrap();
        assert!((rep.x[0] - 2.0).abs() < 1e-8 && (rep.x[1] - 1.3).abs() < 1e-8);
    }

    #[test]
    fn budget_exhaustion_reported() {
        let f = |x: &[f64]| Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let opts = LmOptions {
            max_iterations: 2,
            ..LmOptions::default()
        };
        assert!(matches!(
            minimize(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &opts),
            Err(Error::NonConvergence { iterations: 2 })
        ));
    }
}

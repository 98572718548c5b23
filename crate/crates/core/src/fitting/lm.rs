//! Bounded Levenberg–Marquardt least squares.
//!
//! Small and self-contained: damped normal equations with Marquardt
//! scaling, a numerically differentiated Jacobian (central differences,
//! 1e-6 relative step), and box bounds enforced by projecting each trial
//! step. Parameters are optimized in units of a per-parameter scale, and
//! the normal equations are solved with their columns equilibrated to unit
//! norm, so fits stay well conditioned when raw parameters differ by tens
//! of orders of magnitude (meters next to spins per cubic meter).

use nalgebra::{DMatrix, DVector};

use crate::error::FitError;

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative drop in the residual sum below which the fit is converged.
    pub ftol: f64,
    /// Scaled step size below which the fit is converged.
    pub xtol: f64,
    /// Central-difference step, relative to the parameter scale.
    pub rel_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 200, ftol: 1e-12, xtol: 1e-10, rel_step: 1e-6 }
    }
}

/// Optimizer output in raw (unscaled) parameter units.
#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub rss: f64,
    /// rss after every accepted iteration, starting with the initial value;
    /// non-increasing by construction.
    pub rss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Linearized covariance (JᵀJ)⁻¹ · rss/(n−m) at the optimum.
    pub covariance: DMatrix<f64>,
    pub at_lower: Vec<bool>,
    pub at_upper: Vec<bool>,
}

fn check_finite(r: &DVector<f64>) -> Result<(), FitError> {
    if r.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FitError::LinearSolve("residuals are not finite".into()))
    }
}

/// Rescales JᵀJ to unit diagonal: returns (C, d) with C = D⁻¹·JᵀJ·D⁻¹ and
/// d the Jacobian column norms (floored so zero columns stay finite).
/// C's conditioning reflects only parameter correlations, not units.
fn equilibrated(jtj: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let m = jtj.nrows();
    let max_diag = (0..m).map(|i| jtj[(i, i)]).fold(0.0f64, f64::max);
    let floor = (1e-12 * max_diag).sqrt();
    let d: Vec<f64> = (0..m).map(|j| jtj[(j, j)].sqrt().max(floor)).collect();
    let mut c = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            c[(i, j)] = jtj[(i, j)] / (d[i] * d[j]);
        }
    }
    (c, d)
}

/// Minimizes ‖f(p)‖² over `lo ≤ p ≤ hi` starting from `init`.
///
/// `scales` gives the typical magnitude of each parameter (used for the
/// internal change of variables and the differentiation step); every entry
/// must be positive and finite. `f` fills `out` (length `n_residuals`)
/// with residuals at `p`, must be deterministic, and is only ever called
/// with in-bounds parameters.
pub fn minimize<F>(
    f: F,
    n_residuals: usize,
    init: &[f64],
    lo: &[f64],
    hi: &[f64],
    scales: &[f64],
    opts: &LmOptions,
) -> Result<LmOutcome, FitError>
where
    F: Fn(&[f64], &mut [f64]),
{
    let m = init.len();
    assert!(m > 0 && lo.len() == m && hi.len() == m && scales.len() == m);
    assert!(scales.iter().all(|s| s.is_finite() && *s > 0.0), "scales must be positive");
    if n_residuals <= m {
        return Err(FitError::Underdetermined { points: n_residuals, params: m });
    }

    // Work in q = p / scale.
    let qlo: Vec<f64> = lo.iter().zip(scales).map(|(v, s)| v / s).collect();
    let qhi: Vec<f64> = hi.iter().zip(scales).map(|(v, s)| v / s).collect();
    let clamp = |q: &mut [f64]| {
        for i in 0..m {
            q[i] = q[i].max(qlo[i]).min(qhi[i]);
        }
    };
    let mut q: Vec<f64> = init.iter().zip(scales).map(|(v, s)| v / s).collect();
    clamp(&mut q);

    let mut buf = vec![0.0; n_residuals];
    let eval = |q: &[f64], out: &mut [f64]| {
        let p: Vec<f64> = q.iter().zip(scales).map(|(v, s)| v * s).collect();
        f(&p, out);
    };
    let rss_of = |r: &DVector<f64>| r.dot(r);

    eval(&q, &mut buf);
    let mut r = DVector::from_column_slice(&buf);
    check_finite(&r)?;
    let mut rss = rss_of(&r);
    let mut rss_trace = vec![rss];

    // Difference probes stay inside the box (one-sided at an active bound)
    // so the model is never evaluated at parameters it was told are
    // impossible.
    let jacobian = |q: &[f64], buf: &mut [f64]| -> Result<DMatrix<f64>, FitError> {
        let mut jac = DMatrix::zeros(n_residuals, m);
        let mut qp = q.to_vec();
        for j in 0..m {
            let h = opts.rel_step * q[j].abs().max(1.0);
            let up = h.min(qhi[j] - q[j]).max(0.0);
            let down = h.min(q[j] - qlo[j]).max(0.0);
            let span = up + down;
            if span <= 0.0 {
                return Err(FitError::LinearSolve(format!(
                    "parameter {j} has a zero-width bound box"
                )));
            }
            qp[j] = q[j] + up;
            eval(&qp, buf);
            let plus = DVector::from_column_slice(buf);
            qp[j] = q[j] - down;
            eval(&qp, buf);
            let minus = DVector::from_column_slice(buf);
            qp[j] = q[j];
            let col = (plus - minus) / span;
            check_finite(&col)?;
            jac.set_column(j, &col);
        }
        Ok(jac)
    };

    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let jac = jacobian(&q, &mut buf)?;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let max_diag = (0..m).map(|i| jtj[(i, i)]).fold(0.0f64, f64::max);
        if max_diag <= 0.0 {
            return Err(FitError::LinearSolve("all Jacobian columns vanish".into()));
        }

        let (c, d) = equilibrated(&jtj);
        let ghat = DVector::from_iterator(m, (0..m).map(|i| g[i] / d[i]));

        let mut stalled = false;
        loop {
            let mut damped = c.clone();
            for i in 0..m {
                damped[(i, i)] += lambda;
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 8.0;
                if lambda > 1e14 {
                    return Err(FitError::LinearSolve(
                        "damped normal equations stayed indefinite".into(),
                    ));
                }
                continue;
            };
            let z = chol.solve(&(-&ghat));
            let mut q_try: Vec<f64> = (0..m).map(|i| q[i] + z[i] / d[i]).collect();
            clamp(&mut q_try);
            eval(&q_try, &mut buf);
            let r_try = DVector::from_column_slice(&buf);
            let rss_try = if r_try.iter().all(|v| v.is_finite()) {
                rss_of(&r_try)
            } else {
                f64::INFINITY
            };
            if rss_try <= rss {
                let step: f64 =
                    (0..m).map(|i| (q_try[i] - q[i]).abs()).fold(0.0, f64::max);
                let drop = rss - rss_try;
                q = q_try;
                r = r_try;
                rss = rss_try;
                rss_trace.push(rss);
                lambda = (lambda * 0.25).max(1e-12);
                if step <= opts.xtol || drop <= opts.ftol * rss.max(f64::MIN_POSITIVE) {
                    converged = true;
                }
                break;
            }
            lambda *= 8.0;
            if lambda > 1e12 {
                stalled = true;
                break;
            }
        }
        if stalled {
            // No direction improves the fit: the previous accepted step was
            // the minimum within float resolution.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(FitError::DidNotConverge { iterations, rss });
    }

    let jac = jacobian(&q, &mut buf)?;
    let jtj = jac.transpose() * &jac;
    let dof = (n_residuals - m) as f64;
    let sigma2 = rss / dof;
    let (c, d) = equilibrated(&jtj);
    let cinv = c
        .cholesky()
        .map(|ch| ch.inverse())
        .ok_or_else(|| FitError::LinearSolve("covariance is singular at the optimum".into()))?;
    let mut covariance = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            covariance[(i, j)] = cinv[(i, j)] / (d[i] * d[j]) * sigma2 * scales[i] * scales[j];
        }
    }

    let tol_at = 1e-9;
    let at_lower = (0..m).map(|i| q[i] - qlo[i] <= tol_at * q[i].abs().max(1.0)).collect();
    let at_upper = (0..m).map(|i| qhi[i] - q[i] <= tol_at * q[i].abs().max(1.0)).collect();
    let params = q.iter().zip(scales).map(|(v, s)| v * s).collect();
    Ok(LmOutcome { params, rss, rss_trace, iterations, converged, covariance, at_lower, at_upper })
}

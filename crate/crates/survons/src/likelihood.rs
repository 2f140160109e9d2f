//! Interval negative log-likelihood of the exponential hazard model, with
//! exact gradient and Hessian, cumulative loss, and a batch minimization
//! oracle for regret baselines.
//!
//! Every integral over an exposure window is computed exactly per constant
//! covariate piece (`exp(theta^T x) * piece length`); no quadrature anywhere.

use nalgebra::{DMatrix, DVector};

use crate::cohort::{Cohort, CovariatePath};
use crate::error::{Result, SurvError};
use crate::optim::project_ball;

/// A feasible point of the optimization domain, the Euclidean ball of radius
/// `domain_radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    theta: DVector<f64>,
    domain_radius: f64,
}

impl Parameter {
    pub fn new(theta: DVector<f64>, domain_radius: f64) -> Result<Self> {
        if domain_radius <= 0.0 {
            return Err(SurvError::InvalidConfig(format!(
                "domain radius must be positive, got {domain_radius}"
            )));
        }
        // Tolerate projection round-off at the boundary.
        if theta.norm() > domain_radius * (1.0 + 1e-9) {
            return Err(SurvError::InvalidConfig(format!(
                "parameter norm {} exceeds domain radius {domain_radius}",
                theta.norm()
            )));
        }
        Ok(Parameter { theta, domain_radius })
    }

    pub fn origin(dim: usize, domain_radius: f64) -> Result<Self> {
        Parameter::new(DVector::zeros(dim), domain_radius)
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }
}

/// One at-risk individual restricted to the exposure window of round `t`.
#[derive(Debug, Clone)]
pub struct LossEntry {
    pub path: CovariatePath,
    pub y: bool,
    pub start: f64,
    pub end: f64,
}

/// Everything round `t`'s loss depends on: the at-risk entries with their
/// exposure windows inside `(t-1, t]`.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub t: usize,
    pub dim: usize,
    pub entries: Vec<LossEntry>,
}

/// Builds the loss context of round `t` from the cohort's risk set.
pub fn loss_context(cohort: &Cohort, t: usize) -> LossContext {
    let entries = cohort
        .risk_set(t)
        .into_iter()
        .map(|(i, e)| LossEntry {
            path: cohort.individuals[i].covariates.clone(),
            y: e.y,
            start: e.start,
            end: e.end,
        })
        .collect();
    LossContext { t, dim: cohort.dim, entries }
}

/// Loss contexts for rounds `1..=n`.
pub fn loss_contexts(cohort: &Cohort, n: usize) -> Vec<LossContext> {
    (1..=n).map(|t| loss_context(cohort, t)).collect()
}

fn checked_dot(theta: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    if theta.len() != x.len() {
        return Err(SurvError::DimensionMismatch {
            expected: theta.len(),
            got: x.len(),
        });
    }
    let lin = theta.dot(x);
    if lin.abs() > 700.0 {
        return Err(SurvError::LinearPredictorOverflow(lin.abs()));
    }
    Ok(lin)
}

/// Interval negative log-likelihood
/// `sum_i [ -y_i theta^T x_i(u_i) + integral exp(theta^T x_i(s)) ds ]`.
pub fn interval_loss(ctx: &LossContext, p: &Parameter) -> Result<f64> {
    let theta = p.theta();
    let mut total = 0.0;
    for entry in &ctx.entries {
        if entry.y {
            total -= checked_dot(theta, entry.path.value_at(entry.end))?;
        }
        for (x, len) in entry.path.segments(entry.start, entry.end) {
            total += checked_dot(theta, x)?.exp() * len;
        }
    }
    Ok(total)
}

/// Gradient `sum_i [ -y_i x_i(u_i) + integral exp(theta^T x_i(s)) x_i(s) ds ]`.
pub fn interval_gradient(ctx: &LossContext, p: &Parameter) -> Result<DVector<f64>> {
    let theta = p.theta();
    let mut grad = DVector::zeros(ctx.dim);
    for entry in &ctx.entries {
        if entry.y {
            let x = entry.path.value_at(entry.end);
            checked_dot(theta, x)?;
            grad -= x;
        }
        for (x, len) in entry.path.segments(entry.start, entry.end) {
            let w = checked_dot(theta, x)?.exp() * len;
            grad.axpy(w, x, 1.0);
        }
    }
    Ok(grad)
}

/// Hessian `sum_i integral exp(theta^T x_i(s)) x_i(s) x_i(s)^T ds`;
/// symmetric positive semi-definite by construction.
pub fn interval_hessian(ctx: &LossContext, p: &Parameter) -> Result<DMatrix<f64>> {
    let theta = p.theta();
    let mut hess = DMatrix::zeros(ctx.dim, ctx.dim);
    for entry in &ctx.entries {
        for (x, len) in entry.path.segments(entry.start, entry.end) {
            let w = checked_dot(theta, x)?.exp() * len;
            // Upper triangle mirrored into the lower one, so the result is
            // symmetric to the bit.
            for j in 0..ctx.dim {
                for i in 0..=j {
                    let v = w * (x[i] * x[j]);
                    hess[(i, j)] += v;
                    if i != j {
                        hess[(j, i)] += v;
                    }
                }
            }
        }
    }
    Ok(hess)
}

/// Cumulative loss `sum_{t=1..n} l_t(theta)`.
pub fn cumulative_loss(cohort: &Cohort, p: &Parameter, n: usize) -> Result<f64> {
    if n < 1 {
        return Err(SurvError::InvalidConfig("horizon must be at least 1".into()));
    }
    let mut total = 0.0;
    for t in 1..=n {
        total += interval_loss(&loss_context(cohort, t), p)?;
    }
    Ok(total)
}

fn cumulative_grad_hess(
    contexts: &[LossContext],
    p: &Parameter,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let dim = p.theta().len();
    let mut loss = 0.0;
    let mut grad = DVector::zeros(dim);
    let mut hess = DMatrix::zeros(dim, dim);
    for ctx in contexts {
        loss += interval_loss(ctx, p)?;
        grad += interval_gradient(ctx, p)?;
        hess += interval_hessian(ctx, p)?;
    }
    Ok((loss, grad, hess))
}

const MINIMIZER_MAX_ITERS: usize = 500;

/// Minimizes the cumulative loss over the `D`-ball by damped Newton with a
/// projected-gradient fallback near the boundary. Starts at the origin.
///
/// Stationarity criterion: `|| theta - proj_ball(theta - grad) || <= tol`.
pub fn batch_minimizer(cohort: &Cohort, n: usize, domain_radius: f64, tol: f64) -> Result<Parameter> {
    if tol <= 0.0 {
        return Err(SurvError::InvalidConfig("tolerance must be positive".into()));
    }
    let contexts = loss_contexts(cohort, n);
    batch_minimizer_contexts(&contexts, cohort.dim, domain_radius, tol)
}

/// [`batch_minimizer`] over precomputed loss contexts.
pub fn batch_minimizer_contexts(
    contexts: &[LossContext],
    dim: usize,
    domain_radius: f64,
    tol: f64,
) -> Result<Parameter> {
    let mut theta = DVector::zeros(dim);
    let p = Parameter::new(theta.clone(), domain_radius)?;
    let (mut loss, mut grad, mut hess) = cumulative_grad_hess(contexts, &p)?;

    for _ in 0..MINIMIZER_MAX_ITERS {
        let residual = (&theta - project_ball(&(&theta - &grad), domain_radius)).norm();
        if residual <= tol {
            return Parameter::new(theta, domain_radius);
        }

        // Damped Newton direction; grow the ridge until the factorization
        // succeeds (the Hessian is PSD but can be singular).
        let mut ridge = 0.0;
        let direction = loop {
            let mut h = hess.clone();
            if ridge > 0.0 {
                for i in 0..dim {
                    h[(i, i)] += ridge;
                }
            }
            match h.cholesky() {
                Some(chol) => break chol.solve(&grad),
                None => {
                    let scale = hess.trace().max(1.0) / dim as f64;
                    ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
                    if ridge > 1e6 * scale {
                        break grad.clone();
                    }
                }
            }
        };

        let mut improved = false;
        let newton = direction.clone();
        for dir in [direction, grad.clone()] {
            let mut alpha = 1.0;
            for _ in 0..60 {
                let candidate = project_ball(&(&theta - alpha * &dir), domain_radius);
                let cp = Parameter::new(candidate.clone(), domain_radius)?;
                match cumulative_grad_hess(contexts, &cp) {
                    Ok((l, g, h)) if l < loss => {
                        theta = candidate;
                        loss = l;
                        grad = g;
                        hess = h;
                        improved = true;
                        break;
                    }
                    _ => alpha *= 0.5,
                }
            }
            if improved {
                break;
            }
        }
        if !improved {
            // No strict descent at any step length: loss differences are at
            // floating-point resolution. Polish by the full Newton step as
            // long as it shrinks the stationarity residual.
            let residual = (&theta - project_ball(&(&theta - &grad), domain_radius)).norm();
            // Project the Newton target in the Hessian metric: this is the
            // constrained Newton step, which still converges when the
            // optimum sits on the boundary.
            let mut hr = hess.clone();
            let delta = 1e-10 * (hess.trace() / dim as f64).max(1.0);
            for i in 0..dim {
                hr[(i, i)] += delta;
            }
            let target = &theta - &newton;
            let candidate = crate::optim::project_mahalanobis(&target, &hr, domain_radius, 1e-12)
                .unwrap_or_else(|_| project_ball(&target, domain_radius));
            if let Ok(cp) = Parameter::new(candidate.clone(), domain_radius) {
                if let Ok((l, g2, h2)) = cumulative_grad_hess(contexts, &cp) {
                    let cand_residual =
                        (&candidate - project_ball(&(&candidate - &g2), domain_radius)).norm();
                    if cand_residual < residual {
                        theta = candidate;
                        loss = l;
                        grad = g2;
                        hess = h2;
                        continue;
                    }
                }
            }
            // Newton polishing no longer reduces the residual either: this is
            // numerical stationarity even if the tolerance has not fired.
            if residual <= 10.0 * tol {
                return Parameter::new(theta, domain_radius);
            }
            return Err(SurvError::NonConvergence {
                what: "batch_minimizer",
                iters: MINIMIZER_MAX_ITERS,
                detail: format!(
                    "line search stalled at residual {residual:.3e}, last iterate {:?}",
                    theta.as_slice()
                ),
            });
        }
    }

    let residual = (&theta - project_ball(&(&theta - &grad), domain_radius)).norm();
    Err(SurvError::NonConvergence {
        what: "batch_minimizer",
        iters: MINIMIZER_MAX_ITERS,
        detail: format!(
            "residual {residual:.3e}, last iterate {:?}",
            theta.as_slice()
        ),
    })
}

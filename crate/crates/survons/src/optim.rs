//! Learners: ball and Mahalanobis projections, projected OGD, ONS with the
//! rank-one inverse recursion, BOA weight updates, and the aggregated
//! adaptive round.

use nalgebra::{DMatrix, DVector};

use crate::concavity::{estimate_curvature, CurvatureEstimate};
use crate::error::{Result, SurvError};
use crate::likelihood::{interval_gradient, interval_hessian, LossContext, Parameter};

/// Euclidean projection onto the ball of radius `d`.
pub fn project_ball(theta: &DVector<f64>, d: f64) -> DVector<f64> {
    let norm = theta.norm();
    if norm <= d {
        theta.clone()
    } else {
        theta * (d / norm)
    }
}

/// Result of an active Mahalanobis projection.
#[derive(Debug, Clone)]
pub struct MahalanobisProjection {
    pub point: DVector<f64>,
    /// KKT multiplier of the norm constraint (zero when inactive).
    pub multiplier: f64,
    /// `|| A (theta - theta*) + nu theta ||`.
    pub kkt_residual: f64,
}

const PROJECTION_MAX_ITERS: usize = 200;

/// Projection of `theta_star` onto the `d`-ball in the metric of the SPD
/// matrix `a`: the minimizer of `(theta - theta*)^T A (theta - theta*)`.
///
/// When the constraint is active the KKT system gives
/// `theta(nu) = (A + nu I)^{-1} A theta*` with `nu >= 0` the root of
/// `||theta(nu)|| = d`, found by bracketed bisection to relative tolerance
/// `tol`.
pub fn project_mahalanobis_detailed(
    theta_star: &DVector<f64>,
    a: &DMatrix<f64>,
    d: f64,
    tol: f64,
) -> Result<MahalanobisProjection> {
    if theta_star.norm() <= d {
        return Ok(MahalanobisProjection {
            point: theta_star.clone(),
            multiplier: 0.0,
            kkt_residual: 0.0,
        });
    }
    let dim = theta_star.len();
    let a_theta = a * theta_star;
    let solve = |nu: f64| -> Result<DVector<f64>> {
        let mut m = a.clone();
        for i in 0..dim {
            m[(i, i)] += nu;
        }
        m.cholesky()
            .map(|c| c.solve(&a_theta))
            .ok_or_else(|| SurvError::Numerical(format!("A + {nu} I is not positive definite")))
    };

    // ||theta(nu)|| is decreasing in nu, above d at nu = 0; expand until the
    // root is bracketed.
    let mut lo = 0.0;
    let mut hi = a.trace().max(1.0) / dim as f64;
    let mut expansions = 0;
    while solve(hi)?.norm() > d {
        lo = hi;
        hi *= 4.0;
        expansions += 1;
        if expansions > PROJECTION_MAX_ITERS {
            return Err(SurvError::NonConvergence {
                what: "project_mahalanobis",
                iters: expansions,
                detail: format!("failed to bracket the root, interval [{lo}, {hi}]"),
            });
        }
    }

    let mut point = solve(hi)?;
    let mut nu = hi;
    for _ in 0..PROJECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let candidate = solve(mid)?;
        let norm = candidate.norm();
        let accept = (norm - d).abs() <= tol * d;
        if norm > d && !accept {
            lo = mid;
        } else {
            hi = mid;
            point = candidate;
            nu = mid;
        }
        if accept {
            break;
        }
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }

    let kkt_residual = (a * (&point - theta_star) + nu * &point).norm();
    Ok(MahalanobisProjection { point, multiplier: nu, kkt_residual })
}

pub fn project_mahalanobis(
    theta_star: &DVector<f64>,
    a: &DMatrix<f64>,
    d: f64,
    tol: f64,
) -> Result<DVector<f64>> {
    Ok(project_mahalanobis_detailed(theta_star, a, d, tol)?.point)
}

const DEFAULT_PROJECTION_TOL: f64 = 1e-10;

/// One ONS learner: parameter, curvature matrix with its maintained inverse,
/// and the learning rate.
#[derive(Debug, Clone)]
pub struct OnsState {
    theta: DVector<f64>,
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    learning_rate: f64,
    epsilon: f64,
    d_radius: f64,
}

impl OnsState {
    /// Initializes at the origin with `epsilon = 1 / (gamma D)^2`.
    pub fn new(dim: usize, learning_rate: f64, d_radius: f64) -> Result<Self> {
        let epsilon = 1.0 / (learning_rate * d_radius).powi(2);
        OnsState::with_epsilon(dim, learning_rate, d_radius, epsilon)
    }

    pub fn with_epsilon(
        dim: usize,
        learning_rate: f64,
        d_radius: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if learning_rate <= 0.0 || d_radius <= 0.0 || epsilon <= 0.0 {
            return Err(SurvError::InvalidConfig(
                "ONS learning rate, radius and epsilon must be positive".into(),
            ));
        }
        Ok(OnsState {
            theta: DVector::zeros(dim),
            a: DMatrix::identity(dim, dim) * epsilon,
            a_inv: DMatrix::identity(dim, dim) / epsilon,
            learning_rate,
            epsilon,
            d_radius,
        })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn curvature_inverse(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `A += g g^T`, rank-one update of the inverse, then the projected
    /// Newton step `theta <- Proj_A(theta - A^{-1} g / gamma)`.
    pub fn step(&mut self, g: &DVector<f64>) -> Result<()> {
        if g.len() != self.theta.len() {
            return Err(SurvError::DimensionMismatch {
                expected: self.theta.len(),
                got: g.len(),
            });
        }
        if g.iter().all(|v| *v == 0.0) {
            return Ok(());
        }
        self.a.ger(1.0, g, g, 1.0);
        let a_inv_g = &self.a_inv * g;
        let denom = 1.0 + g.dot(&a_inv_g);
        self.a_inv.ger(-1.0 / denom, &a_inv_g, &a_inv_g, 1.0);
        let candidate = &self.theta - (&self.a_inv * g) / self.learning_rate;
        self.theta =
            project_mahalanobis(&candidate, &self.a, self.d_radius, DEFAULT_PROJECTION_TOL)?;
        Ok(())
    }
}

/// Projected online gradient descent with step size `D / (G sqrt(t))`.
#[derive(Debug, Clone)]
pub struct OgdState {
    theta: DVector<f64>,
    g_bound: f64,
    d_radius: f64,
    t: usize,
}

impl OgdState {
    pub fn new(dim: usize, g_bound: f64, d_radius: f64) -> Result<Self> {
        if g_bound <= 0.0 || d_radius <= 0.0 {
            return Err(SurvError::InvalidConfig(
                "OGD gradient bound and radius must be positive".into(),
            ));
        }
        Ok(OgdState { theta: DVector::zeros(dim), g_bound, d_radius, t: 1 })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn step(&mut self, g: &DVector<f64>) -> Result<()> {
        if g.len() != self.theta.len() {
            return Err(SurvError::DimensionMismatch {
                expected: self.theta.len(),
                got: g.len(),
            });
        }
        let eta = self.d_radius / (self.g_bound * (self.t as f64).sqrt());
        self.theta = project_ball(&(&self.theta - eta * g), self.d_radius);
        self.t += 1;
        Ok(())
    }
}

/// BOA weight update in log space:
/// `pi'_k propto pi_k exp(-gamma_k z_k - gamma_k^2 z_k^2)` where `z_k` is the
/// linearized loss of expert `k` against the aggregate.
pub fn boa_update(pi: &[f64], grid: &[f64], lin_losses: &[f64]) -> Result<Vec<f64>> {
    if pi.len() != grid.len() || pi.len() != lin_losses.len() {
        return Err(SurvError::DimensionMismatch { expected: pi.len(), got: grid.len().max(lin_losses.len()) });
    }
    let log_w: Vec<f64> = pi
        .iter()
        .zip(grid)
        .zip(lin_losses)
        .map(|((p, gamma), z)| p.max(f64::MIN_POSITIVE).ln() - gamma * z - gamma * gamma * z * z)
        .collect();
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        eprintln!("warning: BOA weights underflowed; resetting to uniform");
        return Ok(vec![1.0 / pi.len() as f64; pi.len()]);
    }
    let w: Vec<f64> = log_w.iter().map(|lw| (lw - m).exp()).collect();
    let sum: f64 = w.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        eprintln!("warning: BOA weights underflowed; resetting to uniform");
        return Ok(vec![1.0 / pi.len() as f64; pi.len()]);
    }
    Ok(w.into_iter().map(|v| v / sum).collect())
}

/// Whether the aggregated learner adapts its surrogate constant from the
/// per-round curvature estimate or pins it at each expert's grid value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdaptMode {
    /// `gamma~_kt = max(gamma_t / 4, gamma_k)`.
    Adaptive,
    /// `gamma~_kt = gamma_k` (plain BOA aggregation of ONS experts).
    Fixed,
}

/// Aggregate of `K` ONS learners with BOA weights.
#[derive(Debug, Clone)]
pub struct SurvOnsState {
    learners: Vec<OnsState>,
    weights: Vec<f64>,
    grid: Vec<f64>,
    d_radius: f64,
    round: usize,
    adapt: AdaptMode,
}

/// Per-round output: the prediction emitted before the loss is consumed, and
/// the curvature estimate observed at it.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub prediction: DVector<f64>,
    pub curvature: CurvatureEstimate,
}

impl SurvOnsState {
    /// Learners start at the origin with `epsilon_k = 1/(gamma_k D)^2` and
    /// uniform weights.
    pub fn new(grid: &[f64], dim: usize, d_radius: f64, adapt: AdaptMode) -> Result<Self> {
        if grid.is_empty() {
            return Err(SurvError::InvalidConfig("learning-rate grid is empty".into()));
        }
        let learners = grid
            .iter()
            .map(|&gamma| OnsState::new(dim, gamma, d_radius))
            .collect::<Result<Vec<_>>>()?;
        Ok(SurvOnsState {
            learners,
            weights: vec![1.0 / grid.len() as f64; grid.len()],
            grid: grid.to_vec(),
            d_radius,
            round: 0,
            adapt,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn learners(&self) -> &[OnsState] {
        &self.learners
    }

    pub fn round_index(&self) -> usize {
        self.round
    }

    /// Aggregated prediction `sum_k pi_k theta_k`.
    pub fn aggregated(&self) -> DVector<f64> {
        let mut agg = DVector::zeros(self.learners[0].theta().len());
        for (w, learner) in self.weights.iter().zip(&self.learners) {
            agg.axpy(*w, learner.theta(), 1.0);
        }
        agg
    }

    /// One aggregation round: predict, observe curvature at the prediction,
    /// step every expert on its surrogate gradient, update the weights.
    pub fn round(&mut self, ctx: &LossContext) -> Result<RoundOutput> {
        let prediction = self.aggregated();
        let p = Parameter::new(prediction.clone(), self.d_radius)?;
        let grad = interval_gradient(ctx, &p)?;
        let hess = interval_hessian(ctx, &p)?;
        let curvature = estimate_curvature(&grad, &hess, self.d_radius)?;

        // Linearized losses against the aggregate, at the pre-step experts.
        let lin_losses: Vec<f64> = self
            .learners
            .iter()
            .map(|l| grad.dot(&(l.theta() - &prediction)))
            .collect();

        for (k, learner) in self.learners.iter_mut().enumerate() {
            let gamma_k = self.grid[k];
            let gamma_tilde = match self.adapt {
                AdaptMode::Adaptive if curvature.valid => {
                    (curvature.gamma / 4.0).max(gamma_k)
                }
                _ => gamma_k,
            };
            let surrogate = &grad * (1.0 + gamma_tilde * lin_losses[k]);
            learner.step(&surrogate)?;
        }

        self.weights = boa_update(&self.weights, &self.grid, &lin_losses)?;
        self.round += 1;
        Ok(RoundOutput { prediction, curvature })
    }
}

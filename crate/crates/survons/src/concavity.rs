//! Adaptive curvature constants: the exp-concavity constant `mu_t`, the
//! directional-derivative constant `gamma_t`, the clipped learning rate, and
//! the anchored surrogate loss with its gradient.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SurvError};

/// Gradient norms below `1e-12 * (1 + D)` make `mu_t` (which divides by
/// `||g||^4`) meaningless; the estimate is then flagged degenerate and the
/// caller falls back to its gamma floor.
pub fn degeneracy_floor(domain_radius: f64) -> f64 {
    1e-12 * (1.0 + domain_radius)
}

/// Per-round curvature estimate at the current prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureEstimate {
    pub mu: f64,
    pub gamma: f64,
    pub grad_norm: f64,
    /// False when the gradient norm fell below the degeneracy floor.
    pub valid: bool,
}

impl CurvatureEstimate {
    pub fn degenerate(grad_norm: f64) -> Self {
        CurvatureEstimate { mu: 0.0, gamma: 0.0, grad_norm, valid: false }
    }
}

/// Exp-concavity constant at a point: `mu = g^T H g / ||g||^4`, the exact
/// Rayleigh value of `H` along the gradient direction.
pub fn exp_concavity_mu(g: &DVector<f64>, h: &DMatrix<f64>) -> Result<f64> {
    if h.nrows() != g.len() || h.ncols() != g.len() {
        return Err(SurvError::DimensionMismatch { expected: g.len(), got: h.nrows() });
    }
    let norm_sq = g.norm_squared();
    if norm_sq * norm_sq == 0.0 {
        return Err(SurvError::DegenerateGradient(norm_sq.sqrt()));
    }
    Ok(g.dot(&(h * g)) / (norm_sq * norm_sq))
}

/// Directional-derivative constant
/// `gamma = 2 (z - log(1 + mu z)/mu) / z^2` with `z = ||g|| D`.
///
/// The closed form is a difference of nearly equal quantities for small
/// `mu z`; below `1e-8` the second-order series `mu (1 - 2 mu z / 3)` is used
/// and `log1p` everywhere else.
pub fn ddc_gamma(mu: f64, grad_norm: f64, domain_radius: f64) -> Result<f64> {
    if mu <= 0.0 {
        return Err(SurvError::DegenerateGradient(grad_norm));
    }
    let z = grad_norm * domain_radius;
    if z <= 0.0 {
        return Err(SurvError::DegenerateGradient(grad_norm));
    }
    let mz = mu * z;
    if mz < 1e-8 {
        Ok(mu * (1.0 - 2.0 * mz / 3.0))
    } else {
        Ok(2.0 * (z - (mz).ln_1p() / mu) / (z * z))
    }
}

/// Clipped learning rate `max(gamma_t / 4, gamma_floor)`.
pub fn clip_gamma(gamma_t: f64, gamma_floor: f64) -> f64 {
    (gamma_t / 4.0).max(gamma_floor)
}

/// Clip rule applied to a curvature estimate; a degenerate estimate falls
/// back to the floor.
pub fn clip_gamma_estimate(est: &CurvatureEstimate, gamma_floor: f64) -> f64 {
    if est.valid {
        clip_gamma(est.gamma, gamma_floor)
    } else {
        gamma_floor
    }
}

/// Computes `(mu_t, gamma_t)` at a prediction from its gradient and Hessian,
/// with the degeneracy fallback applied.
pub fn estimate_curvature(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    domain_radius: f64,
) -> Result<CurvatureEstimate> {
    let grad_norm = g.norm();
    if grad_norm < degeneracy_floor(domain_radius) {
        return Ok(CurvatureEstimate::degenerate(grad_norm));
    }
    let mu = exp_concavity_mu(g, h)?;
    if mu <= 0.0 {
        return Ok(CurvatureEstimate::degenerate(grad_norm));
    }
    let gamma = ddc_gamma(mu, grad_norm, domain_radius)?;
    Ok(CurvatureEstimate { mu, gamma, grad_norm, valid: true })
}

/// Ingredients of the anchored surrogate loss
/// `l(theta) = l(a) + g^T (theta - a) + (gamma/2) (g^T (theta - a))^2`.
#[derive(Debug, Clone)]
pub struct SurrogateAnchor {
    pub anchor: DVector<f64>,
    pub loss_at_anchor: f64,
    pub grad_at_anchor: DVector<f64>,
    pub gamma: f64,
}

impl SurrogateAnchor {
    fn linearized(&self, theta: &DVector<f64>) -> Result<f64> {
        if theta.len() != self.anchor.len() {
            return Err(SurvError::DimensionMismatch {
                expected: self.anchor.len(),
                got: theta.len(),
            });
        }
        Ok(self.grad_at_anchor.dot(&(theta - &self.anchor)))
    }
}

pub fn surrogate_value(a: &SurrogateAnchor, theta: &DVector<f64>) -> Result<f64> {
    let z = a.linearized(theta)?;
    Ok(a.loss_at_anchor + z + 0.5 * a.gamma * z * z)
}

/// `(1 + gamma g^T (theta - anchor)) g`.
pub fn surrogate_gradient(a: &SurrogateAnchor, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let z = a.linearized(theta)?;
    Ok(&a.grad_at_anchor * (1.0 + a.gamma * z))
}

/// Directional-derivative constant of the surrogate:
/// `gamma / (1 + gamma D ||g||)^2`, always at most `gamma`.
///
/// `domain_radius` here is the diameter of the domain (the largest possible
/// `|g^T (theta - anchor)| / ||g||`).
pub fn surrogate_ddc_constant(gamma: f64, grad_norm: f64, domain_radius: f64) -> f64 {
    let denom = 1.0 + gamma * domain_radius * grad_norm;
    gamma / (denom * denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::{Rng, RngExt};
    use rand_distr::{Distribution, Normal};

    fn random_vec(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        DVector::from_fn(dim, |_, _| normal.sample(rng))
    }

    fn random_ball_point(rng: &mut impl Rng, dim: usize, radius: f64) -> DVector<f64> {
        let v = random_vec(rng, dim);
        let scale = rng.random::<f64>().powf(1.0 / dim as f64) * radius / v.norm();
        v * scale
    }

    #[test]
    fn mu_rank_one_context() {
        // g = c x, H = b x x^T gives mu = b / c^2 when ||x|| = 1.
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let g = 2.0 * &x;
        let h = 3.0 * &x * x.transpose();
        let mu = exp_concavity_mu(&g, &h).unwrap();
        assert!((mu - 3.0 / 4.0).abs() < 1e-14);
        let mu1 = exp_concavity_mu(&x, &(&x * x.transpose())).unwrap();
        assert!((mu1 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mu_identity_hessian() {
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let h = DMatrix::identity(2, 2);
        assert!((exp_concavity_mu(&g, &h).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mu_is_exact_rayleigh_value_along_gradient() {
        let mut rng = substream(40, 0);
        for _ in 0..50 {
            let g = random_vec(&mut rng, 4);
            let b = DMatrix::from_fn(4, 4, |_, _| {
                Normal::new(0.0, 1.0).unwrap().sample(&mut rng)
            });
            let h = &b * b.transpose();
            let mu = exp_concavity_mu(&g, &h).unwrap();
            // g^T (H - mu g g^T) g = 0 to machine precision.
            let m = &h - mu * &g * g.transpose();
            let along = g.dot(&(&m * &g));
            assert!(along.abs() <= 1e-9 * h.norm() * g.norm_squared());
        }
    }

    #[test]
    fn ddc_gamma_reference_value() {
        // mu = 1, z = 1: 2 (1 - ln 2).
        let v = ddc_gamma(1.0, 1.0, 1.0).unwrap();
        assert!((v - 2.0 * (1.0 - std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn ddc_gamma_small_mu_limit() {
        let v = ddc_gamma(1e-8, 1.0, 1.0).unwrap();
        assert!((v - 1e-8).abs() < 0.01 * 1e-8);
    }

    #[test]
    fn ddc_gamma_large_mu_limit() {
        let v = ddc_gamma(1e8, 1.0, 1.0).unwrap();
        assert!((v - 2.0).abs() < 1e-6);
    }

    #[test]
    fn ddc_gamma_improves_on_hazan_constant() {
        // On the full grid: gamma(mu, z) >= min(1/z, mu) / 2.
        for i in 0..=32 {
            let mu = 10f64.powf(-4.0 + 8.0 * i as f64 / 32.0);
            for j in 0..=24 {
                let z = 10f64.powf(-3.0 + 6.0 * j as f64 / 24.0);
                let v = ddc_gamma(mu, z, 1.0).unwrap();
                let hazan = 0.5 * (1.0 / z).min(mu);
                assert!(v >= hazan * (1.0 - 1e-12), "mu={mu} z={z}: {v} < {hazan}");
            }
        }
    }

    #[test]
    fn ddc_gamma_monotone_in_mu() {
        for j in 0..=24 {
            let z = 10f64.powf(-3.0 + 6.0 * j as f64 / 24.0);
            let mut prev = 0.0;
            for i in 0..=64 {
                let mu = 10f64.powf(-4.0 + 8.0 * i as f64 / 64.0);
                let v = ddc_gamma(mu, z, 1.0).unwrap();
                assert!(v >= prev - 1e-12 * v.abs(), "z={z} mu={mu}");
                prev = v;
            }
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_gamma(8.0, 0.1), 2.0);
        assert_eq!(clip_gamma(0.2, 0.1), 0.1);
        let degenerate = CurvatureEstimate::degenerate(0.0);
        assert_eq!(clip_gamma_estimate(&degenerate, 0.1), 0.1);
    }

    fn random_anchor(rng: &mut impl Rng, dim: usize, gamma: f64) -> SurrogateAnchor {
        SurrogateAnchor {
            anchor: random_ball_point(rng, dim, 1.0),
            loss_at_anchor: rng.random::<f64>(),
            grad_at_anchor: random_vec(rng, dim),
            gamma,
        }
    }

    #[test]
    fn surrogate_value_at_anchor() {
        let mut rng = substream(41, 0);
        let a = random_anchor(&mut rng, 3, 0.5);
        let v = surrogate_value(&a, &a.anchor.clone()).unwrap();
        assert_eq!(v, a.loss_at_anchor);
    }

    #[test]
    fn surrogate_flat_when_gradient_zero() {
        let mut rng = substream(42, 0);
        let mut a = random_anchor(&mut rng, 3, 0.5);
        a.grad_at_anchor = DVector::zeros(3);
        let theta = random_vec(&mut rng, 3);
        assert_eq!(surrogate_value(&a, &theta).unwrap(), a.loss_at_anchor);
        assert_eq!(surrogate_gradient(&a, &theta).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn surrogate_value_matches_scalar_quadratic() {
        let mut rng = substream(43, 0);
        for _ in 0..30 {
            let a = random_anchor(&mut rng, 4, 0.3);
            let theta = random_vec(&mut rng, 4);
            let z = a.grad_at_anchor.dot(&(&theta - &a.anchor));
            let scalar = a.loss_at_anchor + z + 0.5 * a.gamma * z * z;
            assert!((surrogate_value(&a, &theta).unwrap() - scalar).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let mut rng = substream(44, 0);
        for _ in 0..30 {
            let a = random_anchor(&mut rng, 4, 0.3);
            let theta = random_ball_point(&mut rng, 4, 1.0);
            let g = surrogate_gradient(&a, &theta).unwrap();
            let h = 1e-6;
            for j in 0..4 {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd = (surrogate_value(&a, &tp).unwrap() - surrogate_value(&a, &tm).unwrap())
                    / (2.0 * h);
                assert!(((g[j] - fd) / (1.0 + g[j].abs())).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn surrogate_ddc_constant_examples() {
        assert_eq!(surrogate_ddc_constant(0.7, 0.0, 2.0), 0.7);
        assert!((surrogate_ddc_constant(1.0, 1.0, 1.0) - 0.25).abs() < 1e-15);
        let mut rng = substream(45, 0);
        for _ in 0..100 {
            let gamma = rng.random::<f64>() * 4.0 + 1e-6;
            let gn = rng.random::<f64>() * 10.0;
            let d = rng.random::<f64>() * 5.0;
            assert!(surrogate_ddc_constant(gamma, gn, d) <= gamma);
        }
    }

    #[test]
    fn surrogate_ddc_inequality_holds() {
        // Tuples drawn from a set of diameter D (the ball of radius D/2); the
        // surrogate DDC constant is exact for the worst pair at that diameter.
        let mut rng = substream(46, 0);
        let diameter = 2.0;
        for _ in 0..200 {
            let g = random_vec(&mut rng, 4);
            let gamma = rng.random::<f64>() / (4.0 * g.norm() * diameter);
            let anchor = random_ball_point(&mut rng, 4, diameter / 2.0);
            let t1 = random_ball_point(&mut rng, 4, diameter / 2.0);
            let t2 = random_ball_point(&mut rng, 4, diameter / 2.0);
            let a = SurrogateAnchor {
                anchor,
                loss_at_anchor: rng.random::<f64>(),
                grad_at_anchor: g.clone(),
                gamma,
            };
            let ghat = surrogate_ddc_constant(gamma, g.norm(), diameter);
            let lhs = surrogate_value(&a, &t2).unwrap();
            let g1 = surrogate_gradient(&a, &t1).unwrap();
            let lin = g1.dot(&(&t2 - &t1));
            let rhs = surrogate_value(&a, &t1).unwrap() + lin + 0.5 * ghat * lin * lin;
            assert!(lhs >= rhs - 1e-9, "violation: {lhs} < {rhs}");
        }
    }
}

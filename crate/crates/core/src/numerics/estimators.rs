//! The two norm-constrained estimators of the bidders' reward parameters.
//!
//! With `F` known, bidder `i` wins with probability `1 - F(m - 1 - <φ, θ>)`
//! when truthful, so `θ` is fit by nonlinear least squares on the win
//! indicators. With `F` unknown, simulated uniform-reserve outcomes `q̃`
//! satisfy `E[3N q̃] = 1 + <φ, θ>`, which gives a convex least-squares
//! problem solved exactly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{dot, norm};
use crate::env::NoiseModel;
use crate::error::{ClubError, Result};

/// One round as seen by bidder `i`: features, payment threshold `m_i`, and
/// whether he won.
#[derive(Clone, Copy, Debug)]
pub struct WinObservation<'a> {
    pub phi: &'a [f64],
    pub threshold: f64,
    pub won: bool,
}

/// One simulated uniform-reserve outcome for bidder `i`.
#[derive(Clone, Copy, Debug)]
pub struct SimObservation<'a> {
    pub phi: &'a [f64],
    pub q_sim: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnownFitOptions {
    pub starts: usize,
    pub max_iters: usize,
}

impl Default for KnownFitOptions {
    fn default() -> Self {
        KnownFitOptions {
            starts: 8,
            max_iters: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnownFit {
    pub theta: Vec<f64>,
    pub objective: f64,
}

fn project(theta: &mut [f64], radius: f64) {
    let n = norm(theta);
    if n > radius {
        let s = radius / n;
        theta.iter_mut().for_each(|v| *v *= s);
    }
}

/// `Σ (q - 1 + F(m - 1 - <φ, θ>))²`.
pub fn known_f_objective(data: &[WinObservation<'_>], noise: &NoiseModel, theta: &[f64]) -> f64 {
    data.iter()
        .map(|o| {
            let r = f64::from(u8::from(o.won)) - 1.0 + noise.cdf(o.threshold - 1.0 - dot(o.phi, theta));
            r * r
        })
        .sum()
}

fn objective_and_gradient(
    data: &[WinObservation<'_>],
    noise: &NoiseModel,
    theta: &[f64],
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;
    for o in data {
        let u = o.threshold - 1.0 - dot(o.phi, theta);
        let r = f64::from(u8::from(o.won)) - 1.0 + noise.cdf(u);
        total += r * r;
        let f = noise.pdf(u);
        if f != 0.0 && r != 0.0 {
            let c = -2.0 * r * f;
            for (g, p) in grad.iter_mut().zip(o.phi) {
                *g += c * p;
            }
        }
    }
    total
}

/// One regularized Gauss–Newton step from the origin.
fn gauss_newton_start(data: &[WinObservation<'_>], noise: &NoiseModel, d: usize, radius: f64) -> Vec<f64> {
    let mut jtj = DMatrix::<f64>::identity(d, d);
    let mut jtr = DVector::<f64>::zeros(d);
    for o in data {
        let u = o.threshold - 1.0;
        let r = f64::from(u8::from(o.won)) - 1.0 + noise.cdf(u);
        let f = noise.pdf(u);
        if f == 0.0 {
            continue;
        }
        let j = DVector::from_iterator(d, o.phi.iter().map(|p| -f * p));
        jtj.ger(1.0, &j, &j, 1.0);
        jtr.axpy(r, &j, 1.0);
    }
    let step = jtj
        .cholesky()
        .map(|c| c.solve(&(-jtr)))
        .unwrap_or_else(|| DVector::zeros(d));
    let mut theta: Vec<f64> = step.iter().copied().collect();
    project(&mut theta, radius);
    theta
}

fn random_in_ball<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = norm(&v).max(1e-300);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    v.iter_mut().for_each(|x| *x *= r / n);
    v
}

/// Projected gradient descent with Barzilai–Borwein trial steps and
/// backtracking on the projected-step sufficient-decrease condition.
fn projected_descent(
    data: &[WinObservation<'_>],
    noise: &NoiseModel,
    start: Vec<f64>,
    radius: f64,
    max_iters: usize,
) -> KnownFit {
    let d = start.len();
    let mut theta = start;
    project(&mut theta, radius);
    let mut grad = vec![0.0; d];
    let mut value = objective_and_gradient(data, noise, &theta, &mut grad);

    let (_, c1_upper) = noise.density_bounds();
    let curvature: f64 = 2.0 * c1_upper.min(1e6).powi(2) * data.iter().map(|o| dot(o.phi, o.phi)).sum::<f64>();
    let mut step = if curvature > 0.0 { 1.0 / curvature } else { 1.0 };

    let mut cand = vec![0.0; d];
    let mut cand_grad = vec![0.0; d];
    for _ in 0..max_iters {
        let mut accepted = false;
        let mut cand_value = value;
        for _ in 0..60 {
            for k in 0..d {
                cand[k] = theta[k] - step * grad[k];
            }
            project(&mut cand, radius);
            let diff_sq: f64 = cand.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum();
            if diff_sq == 0.0 {
                break;
            }
            cand_value = objective_and_gradient(data, noise, &cand, &mut cand_grad);
            let lin: f64 = grad.iter().zip(cand.iter().zip(&theta)).map(|(g, (a, b))| g * (a - b)).sum();
            if cand_value <= value + lin + diff_sq / (2.0 * step) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = cand_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let decrease = value - cand_value;
        theta.copy_from_slice(&cand);
        grad.copy_from_slice(&cand_grad);
        let previous = value;
        value = cand_value;
        if norm(&s) < 1e-10 || decrease <= 1e-15 * (1.0 + previous) {
            break;
        }
        let sy = dot(&s, &y);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { step * 2.0 };
        step = step.clamp(1e-12, 1e12);
    }
    KnownFit {
        theta,
        objective: value,
    }
}

/// Fits `θ` over the ball `‖θ‖ <= radius` for known noise. The problem is
/// nonconvex; the best of several projected-descent runs is returned, started
/// from the origin, a Gauss–Newton step, `warm_start` when given, and random
/// points in the ball.
pub fn fit_theta_known_f<R: Rng + ?Sized>(
    data: &[WinObservation<'_>],
    noise: &NoiseModel,
    radius: f64,
    opts: KnownFitOptions,
    warm_start: Option<&[f64]>,
    rng: &mut R,
) -> Result<KnownFit> {
    let first = data.first().ok_or(ClubError::EmptyData("known-noise fit needs observations"))?;
    let d = first.phi.len();
    let mut starts = vec![vec![0.0; d], gauss_newton_start(data, noise, d, radius)];
    if let Some(w) = warm_start {
        if w.len() != d {
            return Err(ClubError::InvalidDimensions("warm start has wrong length".into()));
        }
        starts.push(w.to_vec());
    }
    while starts.len() < opts.starts.max(1) {
        starts.push(random_in_ball(d, radius, rng));
    }
    starts.truncate(opts.starts.max(1));
    let mut best: Option<KnownFit> = None;
    for start in starts {
        let fit = projected_descent(data, noise, start, radius, opts.max_iters);
        if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnknownFit {
    pub theta: Vec<f64>,
    /// Lagrange multiplier of the norm constraint (zero when inactive).
    pub multiplier: f64,
}

/// Jitter added to the normal equations.
pub const NORMAL_EQUATION_JITTER: f64 = 1e-8;

/// Minimizes `θᵀAθ - 2bᵀθ` over `‖θ‖ <= radius` exactly: the unconstrained
/// solution when it is feasible, otherwise `(A + λI)θ = b` with `λ` found by
/// bisection so that `‖θ‖ = radius`.
pub fn ball_constrained_lsq(gram: &DMatrix<f64>, rhs: &DVector<f64>, radius: f64) -> UnknownFit {
    let d = rhs.len();
    let eig = SymmetricEigen::new(gram + DMatrix::identity(d, d) * NORMAL_EQUATION_JITTER);
    let coeffs = eig.eigenvectors.transpose() * rhs;
    let solve = |lambda: f64| -> DVector<f64> {
        let scaled = DVector::from_iterator(
            d,
            coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, e)| c / (e.max(0.0) + lambda)),
        );
        &eig.eigenvectors * scaled
    };
    let free = solve(0.0);
    if free.norm() <= radius {
        return UnknownFit {
            theta: free.iter().copied().collect(),
            multiplier: 0.0,
        };
    }
    let (mut lo, mut hi) = (0.0f64, rhs.norm() / radius + 1.0);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if solve(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    UnknownFit {
        theta: solve(lambda).iter().copied().collect(),
        multiplier: lambda,
    }
}

/// Fits `θ` from simulated outcomes: `argmin Σ (3N q̃ - 1 - <φ, θ>)²` over
/// `‖θ‖ <= radius`.
pub fn fit_theta_unknown_f(data: &[SimObservation<'_>], n_bidders: usize, radius: f64) -> Result<UnknownFit> {
    let first = data.first().ok_or(ClubError::EmptyData("simulated-outcome fit needs observations"))?;
    let d = first.phi.len();
    let scale = 3.0 * n_bidders as f64;
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for o in data {
        let target = scale * f64::from(u8::from(o.q_sim)) - 1.0;
        for a in 0..d {
            rhs[a] += o.phi[a] * target;
            for b in 0..d {
                gram[(a, b)] += o.phi[a] * o.phi[b];
            }
        }
    }
    Ok(ball_constrained_lsq(&gram, &rhs, radius))
}

//! Pieces of the seller that replace knowledge of the noise distribution:
//! simulated uniform-reserve outcomes, joint estimation of `θ` and `F̂`,
//! forced power-of-two updates and reserves read off `F̂`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{optimal_reserve_grid, MAX_VALUATION};
use crate::env::FeatureTable;
use crate::error::{ClubError, Result};
use crate::numerics::{dot, fit_theta_unknown_f, CovarianceState, EmpiricalDist, SimObservation};
use crate::seller::{lsvi_backward, LsviSolution, Transition};

/// A virtual single-bidder offer made on a logged round: bidder `bidder`
/// faces reserve `reserve ~ Unif[0, 3]`, and `q = 1(b_bidder >= reserve)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimDraw {
    pub bidder: usize,
    pub reserve: f64,
    pub q: bool,
}

impl SimDraw {
    /// `q̃_i`: zero for every bidder but the selected one.
    pub fn q_for(&self, i: usize) -> bool {
        self.bidder == i && self.q
    }
}

/// Simulates one round from its real bids.
pub fn simulate_round<R: Rng + ?Sized>(bids: &[f64], rng: &mut R) -> SimDraw {
    assert!(!bids.is_empty(), "round without bidders");
    let bidder = rng.random_range(0..bids.len());
    let reserve = MAX_VALUATION * rng.random::<f64>();
    SimDraw {
        bidder,
        reserve,
        q: bids[bidder] >= reserve,
    }
}

/// Simulates every round in `rounds` (each a slice of the real bids).
pub fn simulate_outcomes<R: Rng + ?Sized>(rounds: &[Vec<f64>], rng: &mut R) -> Vec<SimDraw> {
    rounds.iter().map(|b| simulate_round(b, rng)).collect()
}

/// `true` iff the covariance trigger fired or `k` is a power of two.
pub fn unknown_update_due(k: usize, cov_trigger: bool) -> bool {
    cov_trigger || k.is_power_of_two()
}

/// A logged round as the joint estimator sees it.
#[derive(Clone, Copy, Debug)]
pub struct JointRound<'a> {
    pub phi: &'a [f64],
    pub bids: &'a [f64],
    pub sim: SimDraw,
}

#[derive(Clone, Debug)]
pub struct JointEstimate {
    /// `theta_hats[i][h]`.
    pub theta_hats: Vec<Vec<Vec<f64>>>,
    pub fhat: EmpiricalDist,
    /// Samples behind `fhat`.
    pub residual_count: usize,
}

/// Fits `θ̂_ih` from the simulated outcomes of every round at step `h`, then
/// pools the residuals `b - 1 - <φ, θ̂_ih>`, clamped to [-1, 1], into `F̂`.
/// `rounds[h]` lists the rounds logged at step `h`.
pub fn joint_estimate(rounds: &[Vec<JointRound<'_>>], n_bidders: usize, radius: f64) -> Result<JointEstimate> {
    if rounds.iter().all(|r| r.is_empty()) {
        return Err(ClubError::EmptyData("joint estimation needs logged rounds"));
    }
    let mut theta_hats = vec![Vec::with_capacity(rounds.len()); n_bidders];
    let mut residuals = Vec::new();
    for step_rounds in rounds {
        for (i, per_bidder) in theta_hats.iter_mut().enumerate() {
            if step_rounds.is_empty() {
                let d = rounds.iter().flatten().next().map_or(0, |r| r.phi.len());
                per_bidder.push(vec![0.0; d]);
                continue;
            }
            let sims: Vec<SimObservation<'_>> = step_rounds
                .iter()
                .map(|r| SimObservation {
                    phi: r.phi,
                    q_sim: r.sim.q_for(i),
                })
                .collect();
            let theta = fit_theta_unknown_f(&sims, n_bidders, radius)?.theta;
            residuals.extend(
                step_rounds
                    .iter()
                    .map(|r| (r.bids[i] - 1.0 - dot(r.phi, &theta)).clamp(-1.0, 1.0)),
            );
            per_bidder.push(theta);
        }
    }
    let residual_count = residuals.len();
    Ok(JointEstimate {
        theta_hats,
        fhat: EmpiricalDist::build(&residuals)?,
        residual_count,
    })
}

/// `argmax_y y (1 - F̂(y - 1 - μ̂))` on the grid over [0, 3].
pub fn empirical_reserve(fhat: &EmpiricalDist, mu_hat: f64, grid_step: f64) -> f64 {
    optimal_reserve_grid(|z| fhat.cdf(z), mu_hat, grid_step)
}

/// The state-independent extra bonus `c / √e`.
pub fn extra_bonus(bonus2_coef: f64, buffer_end: usize) -> f64 {
    bonus2_coef / (buffer_end.max(1) as f64).sqrt()
}

/// [`lsvi_backward`] with the extra bonus `bonus2_coef / √buffer_end` inside
/// the clip.
#[allow(clippy::too_many_arguments)]
pub fn lsvi_backward_unknown(
    features: &FeatureTable,
    transitions: &[Vec<Transition>],
    revenue: &[Vec<Vec<f64>>],
    cov: &CovarianceState,
    bonus1_coef: f64,
    bonus2_coef: f64,
    buffer_end: usize,
    clip: f64,
) -> Result<LsviSolution> {
    lsvi_backward(
        features,
        transitions,
        revenue,
        cov,
        bonus1_coef,
        extra_bonus(bonus2_coef, buffer_end),
        clip,
    )
}

/// Writes `x,fhat` pairs on a uniform grid over [-1, 1].
pub fn write_fhat_csv(fhat: &EmpiricalDist, points: usize, path: &Path) -> Result<()> {
    let points = points.max(2);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "x,fhat")?;
    for j in 0..points {
        let x = -1.0 + 2.0 * j as f64 / (points - 1) as f64;
        writeln!(out, "{x},{}", fhat.cdf(x))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn ceiling_bid_always_wins() {
        let mut rng = substream(0, "t");
        for _ in 0..1000 {
            assert!(simulate_round(&[3.0], &mut rng).q);
        }
    }

    #[test]
    fn zero_bid_never_wins() {
        let mut rng = substream(1, "t");
        let draws = simulate_outcomes(&vec![vec![0.0, 0.0]; 10_000], &mut rng);
        assert!(draws.iter().all(|d| !d.q));
        assert!(draws.iter().any(|d| d.bidder == 1));
    }

    #[test]
    fn power_of_two_schedule() {
        assert!(unknown_update_due(64, false));
        assert!(!unknown_update_due(6, false));
        assert!(unknown_update_due(6, true));
        assert!(unknown_update_due(1, false));
    }

    #[test]
    fn degenerate_residuals_give_a_step_and_reserve_one_plus_mu() {
        let f = EmpiricalDist::build(&[0.0; 50]).unwrap();
        for mu in [0.0, 0.3, 1.0] {
            let r = empirical_reserve(&f, mu, 1e-3);
            assert!((r - (1.0 + mu)).abs() <= 1e-3 + 1e-12, "mu {mu}: {r}");
        }
    }

    #[test]
    fn extra_bonus_scaling() {
        assert!((extra_bonus(1.0, 100) / extra_bonus(1.0, 400) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_round_gives_step_cdf() {
        let phi = [1.0];
        let bids = [1.4];
        let sim = SimDraw { bidder: 0, reserve: 0.5, q: true };
        let est = joint_estimate(&[vec![JointRound { phi: &phi, bids: &bids, sim }]], 1, 2.0).unwrap();
        // one sample gives a step cdf
        let s = est.fhat.samples()[0];
        assert_eq!(est.fhat.cdf(s - 1e-9), 0.0);
        assert_eq!(est.fhat.cdf(s), 1.0);
    }
}

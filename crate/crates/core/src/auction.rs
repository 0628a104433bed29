//! One round of a second-price auction with personalized reserves, Myerson
//! reserve computation and Monte Carlo revenue evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::NoiseModel;
use crate::error::{ClubError, Result};

/// Stand-in for an infinite reserve. Valuations never exceed 3, so any
/// reserve above 3 excludes the bidder.
pub const RESERVE_INFINITY: f64 = 4.0;

/// Upper end of the valuation support.
pub const MAX_VALUATION: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub winner: Option<usize>,
    /// `m_i = max(ρ_i, max_{j≠i} b_j)`.
    pub thresholds: Vec<f64>,
    pub wins: Vec<bool>,
    pub revenue: f64,
}

/// Highest bidder (lowest index on ties) and the best competing bid.
#[inline]
fn top_two(bids: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &b) in bids.iter().enumerate().skip(1) {
        if b > bids[best] {
            best = i;
        }
    }
    let runner_up = bids
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &b)| b)
        .fold(0.0f64, f64::max);
    (best, runner_up)
}

/// Runs one auction. The highest bidder wins only if he clears his own
/// reserve, and then pays his threshold `m_i`.
// `!(x >= 0.0)` also rejects NaN
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn run_round(bids: &[f64], reserves: &[f64]) -> Result<AuctionOutcome> {
    if bids.is_empty() {
        return Err(ClubError::InvalidDimensions("auction needs at least one bidder".into()));
    }
    if bids.len() != reserves.len() {
        return Err(ClubError::InvalidDimensions(format!(
            "{} bids but {} reserves",
            bids.len(),
            reserves.len()
        )));
    }
    if let Some(&b) = bids.iter().find(|b| !(**b >= 0.0)) {
        return Err(ClubError::Negative { what: "bid", value: b });
    }
    if let Some(&r) = reserves.iter().find(|r| !(**r >= 0.0)) {
        return Err(ClubError::Negative { what: "reserve", value: r });
    }
    let n = bids.len();
    let thresholds: Vec<f64> = (0..n)
        .map(|i| {
            let others = bids
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &b)| b)
                .fold(0.0f64, f64::max);
            reserves[i].max(others)
        })
        .collect();
    let (top, _) = top_two(bids);
    let mut wins = vec![false; n];
    let (winner, revenue) = if bids[top] >= reserves[top] {
        wins[top] = true;
        (Some(top), thresholds[top])
    } else {
        (None, 0.0)
    };
    Ok(AuctionOutcome {
        winner,
        thresholds,
        wins,
        revenue,
    })
}

/// Revenue of [`run_round`] without validation or allocation.
#[inline]
pub fn round_revenue(bids: &[f64], reserves: &[f64]) -> f64 {
    let (top, runner_up) = top_two(bids);
    if bids[top] >= reserves[top] {
        reserves[top].max(runner_up)
    } else {
        0.0
    }
}

/// Virtual valuation `x - (1 - F(x)) / f(x)` of the noise.
pub fn virtual_value(noise: &NoiseModel, x: f64) -> Result<f64> {
    if !(x > -1.0 && x < 1.0) {
        return Err(ClubError::Domain {
            value: x,
            domain: "(-1, 1)",
        });
    }
    Ok(x - (1.0 - noise.cdf(x)) / noise.pdf(x))
}

/// Myerson reserve `α = 1 + μ + φ⁻¹(-1 - μ)`, inverting the (nondecreasing)
/// virtual valuation by bisection.
pub fn optimal_reserve_exact(noise: &NoiseModel, mu: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(ClubError::Domain {
            value: mu,
            domain: "[0, 1]",
        });
    }
    let target = -1.0 - mu;
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let phi = mid - (1.0 - noise.cdf(mid)) / noise.pdf(mid);
        if phi < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((1.0 + mu + 0.5 * (lo + hi)).clamp(0.0, MAX_VALUATION))
}

/// Grid argmax of `y (1 - cdf(y - 1 - μ))` over `{0, step, ..., 3}`, ties to
/// the smaller `y`.
pub fn optimal_reserve_grid<F: Fn(f64) -> f64>(cdf: F, mu: f64, grid_step: f64) -> f64 {
    assert!(grid_step > 0.0, "grid step must be positive");
    let n = (MAX_VALUATION / grid_step + 1e-9).floor() as usize;
    let mut best_y = 0.0;
    let mut best = f64::NEG_INFINITY;
    for k in 0..=n {
        let y = k as f64 * grid_step;
        let value = y * (1.0 - cdf(y - 1.0 - mu));
        if value > best {
            best = value;
            best_y = y;
        }
    }
    best_y
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        McEstimate {
            mean,
            stderr: (var / nf).sqrt(),
        }
    }
}

/// Fixed uniform draws, later pushed through a quantile function. Lets the
/// same random numbers serve a noise model that changes between uses.
#[derive(Clone, Debug)]
pub struct UniformBank {
    pub n_bidders: usize,
    pub samples: usize,
    u: Vec<f64>,
}

impl UniformBank {
    pub fn draw<R: Rng + ?Sized>(n_bidders: usize, samples: usize, rng: &mut R) -> Self {
        let u = (0..samples * n_bidders).map(|_| rng.random::<f64>()).collect();
        UniformBank {
            n_bidders,
            samples,
            u,
        }
    }

    pub fn to_noise<Q: Fn(f64) -> f64>(&self, quantile: Q) -> NoiseBank {
        NoiseBank {
            n_bidders: self.n_bidders,
            samples: self.samples,
            z: self.u.iter().map(|&u| quantile(u)).collect(),
            offer_u: Vec::new(),
        }
    }
}

/// Common random numbers for revenue evaluation: `samples` rows of noise
/// draws, one column per bidder, plus a column of uniforms used for the
/// random single-bidder offer of the exploration policy.
#[derive(Clone, Debug)]
pub struct NoiseBank {
    pub n_bidders: usize,
    pub samples: usize,
    z: Vec<f64>,
    offer_u: Vec<f64>,
}

impl NoiseBank {
    pub fn draw<R: Rng + ?Sized>(
        noise: &NoiseModel,
        n_bidders: usize,
        samples: usize,
        rng: &mut R,
    ) -> Self {
        let mut z = Vec::with_capacity(samples * n_bidders);
        let mut offer_u = Vec::with_capacity(samples);
        for _ in 0..samples {
            for _ in 0..n_bidders {
                z.push(noise.sample(rng));
            }
            offer_u.push(rng.random::<f64>());
        }
        NoiseBank {
            n_bidders,
            samples,
            z,
            offer_u,
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.z[s * self.n_bidders..(s + 1) * self.n_bidders]
    }

    /// Expected revenue under truthful bids `v_i = 1 + μ_i + z_i`.
    pub fn expected_revenue(&self, mu: &[f64], reserves: &[f64]) -> McEstimate {
        assert_eq!(mu.len(), self.n_bidders);
        assert_eq!(reserves.len(), self.n_bidders);
        if reserves.iter().all(|&r| r > MAX_VALUATION) {
            return McEstimate { mean: 0.0, stderr: 0.0 };
        }
        let mut values = vec![0.0; self.n_bidders];
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for s in 0..self.samples {
            for (v, (m, z)) in values.iter_mut().zip(mu.iter().zip(self.row(s))) {
                *v = 1.0 + m + z;
            }
            let r = round_revenue(&values, reserves);
            sum += r;
            sum_sq += r * r;
        }
        McEstimate::from_sums(sum, sum_sq, self.samples)
    }

    /// Expected revenue of offering the item to one uniformly chosen bidder
    /// at a reserve drawn from Unif[0, 3], everyone else excluded.
    pub fn random_offer_revenue(&self, mu: &[f64]) -> McEstimate {
        assert_eq!(mu.len(), self.n_bidders);
        assert_eq!(self.offer_u.len(), self.samples, "bank has no offer column");
        let n = self.n_bidders as f64;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for s in 0..self.samples {
            let rho = MAX_VALUATION * self.offer_u[s];
            let r: f64 = mu
                .iter()
                .zip(self.row(s))
                .map(|(m, z)| if 1.0 + m + z >= rho { rho } else { 0.0 })
                .sum::<f64>()
                / n;
            sum += r;
            sum_sq += r * r;
        }
        McEstimate::from_sums(sum, sum_sq, self.samples)
    }
}

/// Monte Carlo estimate of `E[Σ_i m_i 1(m_i <= b_i)]` under truthful bidding.
pub fn expected_revenue_mc<R: Rng + ?Sized>(
    mu: &[f64],
    reserves: &[f64],
    noise: &NoiseModel,
    samples: usize,
    rng: &mut R,
) -> McEstimate {
    assert!(samples >= 1, "need at least one sample");
    NoiseBank::draw(noise, mu.len(), samples, rng).expected_revenue(mu, reserves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn plain_second_price() {
        let out = run_round(&[2.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(out.winner, Some(0));
        assert_eq!(out.revenue, 1.0);
        assert_eq!(out.wins, vec![true, false]);
        assert_eq!(out.thresholds, vec![1.0, 2.0]);
    }

    #[test]
    fn reserve_blocks_sale() {
        let out = run_round(&[2.0, 1.0], &[2.5, 0.0]).unwrap();
        assert_eq!(out.winner, None);
        assert_eq!(out.revenue, 0.0);
        assert_eq!(out.wins, vec![false, false]);
    }

    #[test]
    fn reserve_binds_above_second_bid() {
        let out = run_round(&[2.0, 1.0], &[1.5, 0.0]).unwrap();
        assert_eq!(out.winner, Some(0));
        assert_eq!(out.revenue, 1.5);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let out = run_round(&[1.5, 1.5], &[0.0, 0.0]).unwrap();
        assert_eq!(out.winner, Some(0));
        assert_eq!(out.revenue, 1.5);
    }

    #[test]
    fn rejects_negative_inputs() {
        assert!(run_round(&[-1.0, 1.0], &[0.0, 0.0]).is_err());
        assert!(run_round(&[1.0, 1.0], &[0.0, -0.5]).is_err());
        assert!(run_round(&[], &[]).is_err());
        assert!(run_round(&[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn single_bidder_pays_reserve() {
        let out = run_round(&[2.0], &[1.2]).unwrap();
        assert_eq!(out.revenue, 1.2);
        assert_eq!(round_revenue(&[2.0], &[1.2]), 1.2);
    }

    #[test]
    fn uniform_virtual_value() {
        let v = virtual_value(&NoiseModel::Uniform, 0.5).unwrap();
        assert!(v.abs() < 1e-15);
        let near_top = virtual_value(&NoiseModel::Uniform, 1.0 - 1e-9).unwrap();
        assert!((near_top - 1.0).abs() < 1e-8);
        assert!(virtual_value(&NoiseModel::Uniform, 1.0).is_err());
    }

    #[test]
    fn truncated_gaussian_virtual_value_is_monotone() {
        let noise = NoiseModel::TruncatedGaussian { sigma: 0.5 };
        let values: Vec<f64> = (1..100)
            .map(|i| virtual_value(&noise, -1.0 + 2.0 * i as f64 / 100.0).unwrap())
            .collect();
        for w in values.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn uniform_myerson_reserve_closed_form() {
        for k in 0..=10 {
            let mu = k as f64 / 10.0;
            let alpha = optimal_reserve_exact(&NoiseModel::Uniform, mu).unwrap();
            assert!((alpha - (1.0 + mu / 2.0)).abs() < 1e-6);
        }
        assert!(optimal_reserve_exact(&NoiseModel::Uniform, 1.5).is_err());
    }

    #[test]
    fn grid_reserve_uniform() {
        let u = NoiseModel::Uniform;
        let y = optimal_reserve_grid(|x| u.cdf(x), 0.0, 1e-3);
        assert!((y - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn grid_reserve_degenerate_cdf_picks_zero() {
        assert_eq!(optimal_reserve_grid(|_| 1.0, 0.3, 0.01), 0.0);
    }

    #[test]
    fn grid_refinement_is_consistent() {
        let noise = NoiseModel::TruncatedGaussian { sigma: 0.5 };
        for k in 0..=10 {
            let mu = k as f64 / 10.0;
            let coarse = optimal_reserve_grid(|x| noise.cdf(x), mu, 1e-2);
            let fine = optimal_reserve_grid(|x| noise.cdf(x), mu, 1e-4);
            assert!((coarse - fine).abs() <= 1.01e-2);
        }
    }

    #[test]
    fn nothing_clears_infinite_reserves() {
        let mut rng = substream(1, "t");
        let est = expected_revenue_mc(&[0.5, 0.2], &[3.5, 4.0], &NoiseModel::Uniform, 1000, &mut rng);
        assert_eq!(est.mean, 0.0);
    }
}

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::auction::{optimal_reserve_grid, NoiseBank};
use crate::env::{EnvDims, FeatureTable};
use crate::error::{ClubError, Result};
use crate::numerics::{dot, weighted_norm, CovarianceState};

/// What the seller does at one `(h, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepAction {
    /// Offer `item` with personalized reserves.
    Fixed { item: usize, reserves: Vec<f64> },
    /// Uniformly random item; `reserves[item]` are used for it.
    UniformItem { reserves: Vec<Vec<f64>> },
    /// The exploration policy: random item, random bidder, random reserve.
    PiRand,
}

/// Estimated per-step revenue together with the reserves that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevenueTable {
    /// `mu[h][x][item][i]`, clamped to [0, 1].
    pub mu: Vec<Vec<Vec<Vec<f64>>>>,
    /// `reserves[h][x][item][i]`.
    pub reserves: Vec<Vec<Vec<Vec<f64>>>>,
    /// `revenue[h][x][item]`.
    pub revenue: Vec<Vec<Vec<f64>>>,
}

/// Plug-in revenue table: `μ̂ = <φ, θ̂>`, reserves by grid argmax against
/// `cdf`, revenue averaged over the draws in `bank` with simulated truthful
/// valuations `1 + μ̂ + z`.
pub fn estimate_revenue_table<C: Fn(f64) -> f64>(
    theta_hats: &[Vec<Vec<f64>>],
    features: &FeatureTable,
    dims: EnvDims,
    cdf: C,
    bank: &NoiseBank,
    grid_step: f64,
) -> Result<RevenueTable> {
    if theta_hats.len() != dims.n_bidders || theta_hats.iter().any(|t| t.len() != dims.horizon) {
        return Err(ClubError::InvalidDimensions("theta estimates must be N × H".into()));
    }
    if bank.n_bidders != dims.n_bidders {
        return Err(ClubError::InvalidDimensions("noise bank has wrong bidder count".into()));
    }
    let mut table = RevenueTable {
        mu: Vec::with_capacity(dims.horizon),
        reserves: Vec::with_capacity(dims.horizon),
        revenue: Vec::with_capacity(dims.horizon),
    };
    for h in 0..dims.horizon {
        let (mut mu_h, mut res_h, mut rev_h) = (Vec::new(), Vec::new(), Vec::new());
        for x in 0..dims.n_states {
            let (mut mu_x, mut res_x, mut rev_x) = (Vec::new(), Vec::new(), Vec::new());
            for item in 0..dims.n_items {
                let phi = features.row(x, item);
                let mu: Vec<f64> = theta_hats
                    .iter()
                    .map(|th| dot(phi, &th[h]).clamp(0.0, 1.0))
                    .collect();
                let reserves: Vec<f64> = mu.iter().map(|&m| optimal_reserve_grid(&cdf, m, grid_step)).collect();
                rev_x.push(bank.expected_revenue(&mu, &reserves).mean);
                mu_x.push(mu);
                res_x.push(reserves);
            }
            mu_h.push(mu_x);
            res_h.push(res_x);
            rev_h.push(rev_x);
        }
        table.mu.push(mu_h);
        table.reserves.push(res_h);
        table.revenue.push(rev_h);
    }
    Ok(table)
}

/// One logged transition used by the value regression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub item: usize,
    pub next_state: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsviSolution {
    /// `omega[h]`.
    pub omega: Vec<Vec<f64>>,
    /// `q[h][x][item]`, clipped to `[0, clip]`.
    pub q: Vec<Vec<Vec<f64>>>,
    /// Greedy item per `(h, x)`, ties to the lowest index.
    pub items: Vec<Vec<usize>>,
}

/// Optimistic least-squares value iteration. Works backwards from
/// `Q_{H+1} = 0`:
///
/// `ω_h = Λ_h⁻¹ Σ_τ φ_h^τ max_υ Q_{h+1}(x_{h+1}^τ, υ)`
/// `Q_h = min{ω_hᵀφ + R_h + β‖φ‖_{Λ_h⁻¹} + extra, clip}`.
///
/// `transitions[h]` holds the logged moves out of step `h`; the last step's
/// entry is ignored.
pub fn lsvi_backward(
    features: &FeatureTable,
    transitions: &[Vec<Transition>],
    revenue: &[Vec<Vec<f64>>],
    cov: &CovarianceState,
    bonus: f64,
    extra_bonus: f64,
    clip: f64,
) -> Result<LsviSolution> {
    let horizon = cov.horizon();
    let d = cov.dim();
    if features.d != d {
        return Err(ClubError::InvalidDimensions("feature and covariance dimensions differ".into()));
    }
    if transitions.len() != horizon || revenue.len() != horizon {
        return Err(ClubError::InvalidDimensions("need one log and one revenue layer per step".into()));
    }
    let (n_states, n_items) = (features.n_states, features.n_items);
    let mut omega = vec![vec![0.0; d]; horizon];
    let mut q = vec![vec![vec![0.0; n_items]; n_states]; horizon];
    let mut items = vec![vec![0; n_states]; horizon];
    let mut v_next = vec![0.0; n_states];
    for h in (0..horizon).rev() {
        let inverse = &cov.step(h).inverse;
        if h + 1 < horizon {
            let mut target = DVector::<f64>::zeros(d);
            for t in &transitions[h] {
                let phi = features.row(t.state, t.item);
                let v = v_next[t.next_state];
                for (acc, p) in target.iter_mut().zip(phi) {
                    *acc += p * v;
                }
            }
            let w = inverse * target;
            omega[h] = w.iter().copied().collect();
        }
        for x in 0..n_states {
            for item in 0..n_items {
                let phi = features.row(x, item);
                let raw = dot(&omega[h], phi)
                    + revenue[h][x][item]
                    + bonus * weighted_norm(phi, inverse)
                    + extra_bonus;
                q[h][x][item] = raw.clamp(0.0, clip);
            }
            items[h][x] = argmax_first(&q[h][x]);
        }
        v_next = (0..n_states).map(|x| q[h][x][items[h][x]]).collect();
    }
    Ok(LsviSolution { omega, q, items })
}

pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// A snapshot of the seller's greedy policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEstimate {
    /// Number of completed updates behind this estimate.
    pub id: usize,
    pub dims: EnvDims,
    /// Bonus coefficient `β` on `‖φ‖_{Λ⁻¹}`.
    pub bonus: f64,
    /// State-independent bonus term (unknown-noise seller only).
    pub extra_bonus: f64,
    /// `theta_hats[i][h]`; empty before the first update.
    pub theta_hats: Vec<Vec<Vec<f64>>>,
    /// Empty before the first update.
    pub omega: Vec<Vec<f64>>,
    pub q: Vec<Vec<Vec<f64>>>,
    pub items: Vec<Vec<usize>>,
    /// `reserves[h][x][item][i]`.
    pub reserves: Vec<Vec<Vec<Vec<f64>>>>,
    pub cold_start: bool,
}

impl PolicyEstimate {
    /// Before any data: uniformly random items, zero reserves, `ω = 0`.
    pub fn cold_start(dims: EnvDims) -> Self {
        PolicyEstimate {
            id: 0,
            dims,
            bonus: 0.0,
            extra_bonus: 0.0,
            theta_hats: Vec::new(),
            omega: vec![vec![0.0; dims.d]; dims.horizon],
            q: vec![vec![vec![0.0; dims.n_items]; dims.n_states]; dims.horizon],
            items: vec![vec![0; dims.n_states]; dims.horizon],
            reserves: vec![vec![vec![vec![0.0; dims.n_bidders]; dims.n_items]; dims.n_states]; dims.horizon],
            cold_start: true,
        }
    }

    pub fn action(&self, h: usize, x: usize) -> StepAction {
        if self.cold_start {
            StepAction::UniformItem {
                reserves: self.reserves[h][x].clone(),
            }
        } else {
            let item = self.items[h][x];
            StepAction::Fixed {
                item,
                reserves: self.reserves[h][x][item].clone(),
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

//! Ground-truth auction world: a tabular linear MDP with simplex features,
//! row-stochastic transition measures, per-bidder reward parameters and a
//! market-noise model.

mod noise;

pub use noise::NoiseModel;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::auction::AuctionOutcome;
use crate::error::{check_index, ClubError, Result};
use crate::rng::{streams, substream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvDims {
    pub d: usize,
    pub n_bidders: usize,
    pub horizon: usize,
    pub n_states: usize,
    pub n_items: usize,
}

impl EnvDims {
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_items
    }

    pub fn pair_index(&self, x: usize, item: usize) -> usize {
        x * self.n_items + item
    }
}

/// The feature map `φ(x, υ)`, the only part of the world the seller knows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub d: usize,
    pub n_states: usize,
    pub n_items: usize,
    /// Row `x * n_items + item` holds `φ(x, item)`.
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn row(&self, x: usize, item: usize) -> &[f64] {
        &self.rows[x * self.n_items + item]
    }

    pub fn dot(&self, x: usize, item: usize, w: &[f64]) -> f64 {
        self.row(x, item).iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub dims: EnvDims,
    pub features: FeatureTable,
    /// `transitions[h][j]` is row `j` of `M_h`, a distribution over next states.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `theta[i][h]`, entries in [0, 1].
    pub theta: Vec<Vec<Vec<f64>>>,
    pub noise: NoiseModel,
    pub gamma: f64,
    pub seed: u64,
    pub initial_state: usize,
    #[serde(skip)]
    next_state_probs: Vec<Vec<Vec<f64>>>,
}

impl EnvSpec {
    /// Assembles and validates an environment from explicit tables.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dims: EnvDims,
        phi: Vec<Vec<f64>>,
        transitions: Vec<Vec<Vec<f64>>>,
        theta: Vec<Vec<Vec<f64>>>,
        noise: NoiseModel,
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut env = EnvSpec {
            dims,
            features: FeatureTable {
                d: dims.d,
                n_states: dims.n_states,
                n_items: dims.n_items,
                rows: phi,
            },
            transitions,
            theta,
            noise,
            gamma,
            seed,
            initial_state: 0,
            next_state_probs: Vec::new(),
        };
        env.validate()?;
        env.finalize();
        Ok(env)
    }

    fn validate(&self) -> Result<()> {
        let dims = self.dims;
        let bad = |msg: String| Err(ClubError::InvalidDimensions(msg));
        if dims.d == 0
            || dims.n_bidders == 0
            || dims.horizon == 0
            || dims.n_states == 0
            || dims.n_items == 0
        {
            return bad(format!("all dimensions must be positive: {dims:?}"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ClubError::InvalidParameter(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        self.noise.validate()?;
        if self.features.rows.len() != dims.n_pairs() {
            return bad(format!("phi has {} rows, expected {}", self.features.rows.len(), dims.n_pairs()));
        }
        for row in &self.features.rows {
            if row.len() != dims.d {
                return bad("phi row length differs from d".into());
            }
            check_simplex(row, "phi row")?;
        }
        if self.transitions.len() != dims.horizon {
            return bad("need one transition measure per step".into());
        }
        for m in &self.transitions {
            if m.len() != dims.d {
                return bad("transition measure must have d rows".into());
            }
            for row in m {
                if row.len() != dims.n_states {
                    return bad("transition row length differs from state count".into());
                }
                check_simplex(row, "transition row")?;
            }
        }
        if self.theta.len() != dims.n_bidders {
            return bad("need theta for every bidder".into());
        }
        for per_bidder in &self.theta {
            if per_bidder.len() != dims.horizon {
                return bad("need theta for every step".into());
            }
            for th in per_bidder {
                if th.len() != dims.d || th.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return bad("theta entries must be d values in [0, 1]".into());
                }
            }
        }
        check_index("initial state", self.initial_state, dims.n_states)
    }

    fn finalize(&mut self) {
        let dims = self.dims;
        self.next_state_probs = (0..dims.horizon)
            .map(|h| {
                (0..dims.n_pairs())
                    .map(|p| {
                        let phi = &self.features.rows[p];
                        (0..dims.n_states)
                            .map(|xn| {
                                phi.iter()
                                    .zip(&self.transitions[h])
                                    .map(|(w, row)| w * row[xn])
                                    .sum()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut env: EnvSpec = serde_json::from_str(text)?;
        env.validate()?;
        env.finalize();
        Ok(env)
    }

    fn check(&self, h: usize, x: usize, item: usize) -> Result<()> {
        check_index("step", h, self.dims.horizon)?;
        check_index("state", x, self.dims.n_states)?;
        check_index("item", item, self.dims.n_items)
    }

    pub fn feature(&self, x: usize, item: usize) -> Result<&[f64]> {
        check_index("state", x, self.dims.n_states)?;
        check_index("item", item, self.dims.n_items)?;
        Ok(self.features.row(x, item))
    }

    /// `μ_ih(x, υ) = <φ(x, υ), θ_ih>`.
    pub fn mean_reward(&self, bidder: usize, h: usize, x: usize, item: usize) -> Result<f64> {
        check_index("bidder", bidder, self.dims.n_bidders)?;
        self.check(h, x, item)?;
        Ok(self.mean_reward_unchecked(bidder, h, x, item))
    }

    pub(crate) fn mean_reward_unchecked(&self, bidder: usize, h: usize, x: usize, item: usize) -> f64 {
        self.features.dot(x, item, &self.theta[bidder][h])
    }

    /// Mean rewards of all bidders at `(h, x, item)`.
    pub fn mean_rewards(&self, h: usize, x: usize, item: usize) -> Vec<f64> {
        (0..self.dims.n_bidders)
            .map(|i| self.mean_reward_unchecked(i, h, x, item))
            .collect()
    }

    /// `P_h(· | x, item)`.
    pub fn transition_probs(&self, h: usize, x: usize, item: usize) -> Result<&[f64]> {
        self.check(h, x, item)?;
        Ok(&self.next_state_probs[h][self.dims.pair_index(x, item)])
    }

    /// Draws `v_i = 1 + μ_ih(x, υ) + z_i` for every bidder.
    pub fn sample_valuations<R: Rng + ?Sized>(
        &self,
        h: usize,
        x: usize,
        item: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check(h, x, item)?;
        Ok((0..self.dims.n_bidders)
            .map(|i| 1.0 + self.mean_reward_unchecked(i, h, x, item) + self.noise.sample(rng))
            .collect())
    }

    /// Draws the next state by inverting the cumulative transition row.
    pub fn sample_transition<R: Rng + ?Sized>(
        &self,
        h: usize,
        x: usize,
        item: usize,
        rng: &mut R,
    ) -> Result<usize> {
        let probs = self.transition_probs(h, x, item)?;
        let u: f64 = rng.random();
        Ok(inverse_cdf_pick(probs, u))
    }
}

pub(crate) fn inverse_cdf_pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding gap above the last partial sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn check_simplex(row: &[f64], what: &str) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(ClubError::InvalidDimensions(format!(
            "{what} must be a probability vector (sum {sum})"
        )));
    }
    Ok(())
}

fn random_simplex<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|v| v / total).collect()
}

/// Builds a random tabular environment. `d == S·U` gives one-hot features;
/// smaller `d` draws each feature row from the simplex.
pub fn build_tabular_env(dims: EnvDims, noise: NoiseModel, gamma: f64, seed: u64) -> Result<EnvSpec> {
    if dims.d == 0 || dims.d > dims.n_pairs() {
        return Err(ClubError::InvalidDimensions(format!(
            "d = {} must lie in 1..={} (S·U)",
            dims.d,
            dims.n_pairs()
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(ClubError::InvalidParameter(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let mut rng = substream(seed, streams::ENV_BUILD);
    let phi: Vec<Vec<f64>> = if dims.d == dims.n_pairs() {
        (0..dims.n_pairs())
            .map(|p| {
                let mut row = vec![0.0; dims.d];
                row[p] = 1.0;
                row
            })
            .collect()
    } else {
        (0..dims.n_pairs()).map(|_| random_simplex(dims.d, &mut rng)).collect()
    };
    let transitions = (0..dims.horizon)
        .map(|_| (0..dims.d).map(|_| random_simplex(dims.n_states, &mut rng)).collect())
        .collect();
    let theta = (0..dims.n_bidders)
        .map(|_| {
            (0..dims.horizon)
                .map(|_| (0..dims.d).map(|_| rng.random::<f64>()).collect())
                .collect()
        })
        .collect();
    EnvSpec::new(dims, phi, transitions, theta, noise, gamma, seed)
}

/// One step of an episode as seen by the simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: usize,
    pub item: usize,
    pub reserves: Vec<f64>,
    pub bids: Vec<f64>,
    /// Hidden from the seller; kept for metrics.
    pub valuations: Vec<f64>,
    pub outcome: AuctionOutcome,
    pub used_pi_rand: bool,
    pub rand_bidder: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub episode: usize,
    pub steps: Vec<StepRecord>,
    /// State reached after the final step's transition, when one was drawn.
    pub terminal_state: Option<usize>,
}

impl EpisodeTranscript {
    pub fn used_pi_rand(&self) -> bool {
        self.steps.iter().any(|s| s.used_pi_rand)
    }

    pub fn revenue(&self) -> f64 {
        self.steps.iter().map(|s| s.outcome.revenue).sum()
    }
}

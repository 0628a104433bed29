//! The learning seller: mixture acting, buffer scheduling, end-of-buffer
//! estimation and the optimistic backward pass. Both the known-noise and the
//! unknown-noise variants run through [`SellerState`].

mod policy;
mod schedule;

pub use policy::{
    argmax_first, estimate_revenue_table, lsvi_backward, LsviSolution, PolicyEstimate, RevenueTable, StepAction, Transition,
};
pub use schedule::{buffer_length, BufferSchedule};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{UniformBank, NoiseBank, MAX_VALUATION, RESERVE_INFINITY};
use crate::env::{EnvDims, EpisodeTranscript, FeatureTable, NoiseModel};
use crate::error::{check_index, ClubError, Result};
use crate::numerics::{
    fit_theta_known_f, psd_direction_doubling, psd_double_dominance, CovarianceState, EmpiricalDist, KnownFitOptions,
    WinObservation,
};
use crate::rng::{streams, substream, StreamRng};
use crate::unknown::{joint_estimate, lsvi_backward_unknown, simulate_round, unknown_update_due, JointRound, SimDraw};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    KnownF,
    UnknownF,
}

/// How "the covariance doubled" is read when deciding to schedule a buffer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerRule {
    /// Some direction doubled: `λ_max(Λ_new - 2Λ_old) >= 0`.
    #[default]
    AnyDirection,
    /// Every direction doubled: `Λ_new ⪰ 2Λ_old`. With one-hot features this
    /// never fires while some pair is unvisited.
    AllDirections,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SellerConfig {
    pub variant: Variant,
    /// Planned number of episodes `K`.
    pub episodes: usize,
    pub bonus_cb: f64,
    pub bonus_cr: f64,
    /// Coefficient of the `1/√e` bonus; `None` means `0.02 H²`.
    pub bonus2: Option<f64>,
    /// Noise draws behind each learned revenue entry.
    pub mc_samples: usize,
    pub grid_step: f64,
    pub fit: KnownFitOptions,
    pub trigger: TriggerRule,
    /// Ridge `λ` of the covariance matrices.
    pub regularization: f64,
}

impl SellerConfig {
    pub fn new(variant: Variant, episodes: usize) -> Self {
        SellerConfig {
            variant,
            episodes,
            bonus_cb: 0.02,
            bonus_cr: 0.02,
            bonus2: None,
            mc_samples: 4096,
            grid_step: 1e-3,
            fit: KnownFitOptions::default(),
            trigger: TriggerRule::default(),
            regularization: 1.0,
        }
    }

    /// `c_b H^{3/2} ln(K+1) + c_r H ln²(K+1)`.
    pub fn bonus_coef(&self, horizon: usize) -> f64 {
        let h = horizon as f64;
        let l = (self.episodes as f64 + 1.0).ln();
        self.bonus_cb * h.powf(1.5) * l + self.bonus_cr * h * l * l
    }

    pub fn bonus2_coef(&self, horizon: usize) -> f64 {
        self.bonus2.unwrap_or(0.02 * (horizon * horizon) as f64)
    }

    /// `1/(HK)`.
    pub fn mixture_prob(&self, horizon: usize) -> f64 {
        1.0 / (horizon * self.episodes.max(1)) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bonus_cb", self.bonus_cb),
            ("bonus_cr", self.bonus_cr),
            ("grid_step", self.grid_step),
            ("regularization", self.regularization),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ClubError::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.bonus2.is_some_and(|b| !(b.is_finite() && b >= 0.0)) {
            return Err(ClubError::Config("bonus2 must be nonnegative".into()));
        }
        if self.grid_step <= 0.0 || self.regularization <= 0.0 {
            return Err(ClubError::Config("grid_step and regularization must be positive".into()));
        }
        if self.episodes == 0 || self.mc_samples == 0 || self.fit.starts == 0 {
            return Err(ClubError::Config("episodes, mc samples and fit starts must be positive".into()));
        }
        Ok(())
    }
}

/// The seller's decision at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub item: usize,
    pub reserves: Vec<f64>,
    pub used_pi_rand: bool,
    /// The bidder singled out by the exploration policy.
    pub rand_bidder: Option<usize>,
}

/// Random item, random bidder with reserve `~ Unif[0, 3]`, everybody else
/// excluded.
pub fn pi_rand<R: Rng + ?Sized>(n_bidders: usize, n_items: usize, rng: &mut R) -> Action {
    assert!(n_bidders >= 1 && n_items >= 1, "need bidders and items");
    let item = rng.random_range(0..n_items);
    let bidder = rng.random_range(0..n_bidders);
    let mut reserves = vec![RESERVE_INFINITY; n_bidders];
    reserves[bidder] = MAX_VALUATION * rng.random::<f64>();
    Action {
        item,
        reserves,
        used_pi_rand: true,
        rand_bidder: Some(bidder),
    }
}

/// What the seller retains from one round: never the valuations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub state: usize,
    pub item: usize,
    pub bids: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub wins: Vec<bool>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeEvents {
    pub updated: bool,
    pub scheduled: bool,
}

/// Mutable seller state for one run.
pub struct SellerState {
    config: SellerConfig,
    dims: EnvDims,
    features: FeatureTable,
    known_noise: Option<NoiseModel>,
    gamma: f64,
    covariance: CovarianceState,
    snapshot: Option<Vec<DMatrix<f64>>>,
    /// `log[h][τ]`.
    log: Vec<Vec<RoundLog>>,
    /// `transitions[h][τ]` for `h < H - 1`.
    transitions: Vec<Vec<Transition>>,
    /// `sims[h][τ]`, unknown-noise seller only.
    sims: Vec<Vec<SimDraw>>,
    schedule: BufferSchedule,
    policy: PolicyEstimate,
    fhat: Option<EmpiricalDist>,
    residual_count: usize,
    coin_rng: StreamRng,
    pi_rand_rng: StreamRng,
    cold_rng: StreamRng,
    sim_rng: StreamRng,
    fit_rng: StreamRng,
    noise_bank: Option<NoiseBank>,
    uniform_bank: Option<UniformBank>,
}

impl SellerState {
    /// `known_noise` must be given to the known-noise seller and withheld
    /// from the unknown-noise one.
    pub fn new(
        config: SellerConfig,
        dims: EnvDims,
        features: FeatureTable,
        known_noise: Option<NoiseModel>,
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if features.d != dims.d || features.n_states != dims.n_states || features.n_items != dims.n_items {
            return Err(ClubError::InvalidDimensions("feature table does not match dims".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(ClubError::InvalidParameter(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        let mut mc_rng = substream(seed, streams::MC_LEARNING);
        let (noise_bank, uniform_bank) = match (config.variant, &known_noise) {
            (Variant::KnownF, Some(noise)) => {
                noise.validate()?;
                (Some(NoiseBank::draw(noise, dims.n_bidders, config.mc_samples, &mut mc_rng)), None)
            }
            (Variant::UnknownF, None) => (None, Some(UniformBank::draw(dims.n_bidders, config.mc_samples, &mut mc_rng))),
            (Variant::KnownF, None) => {
                return Err(ClubError::InvalidParameter("known-noise seller needs the noise model".into()))
            }
            (Variant::UnknownF, Some(_)) => {
                return Err(ClubError::InvalidParameter("unknown-noise seller must not be given the noise".into()))
            }
        };
        Ok(SellerState {
            covariance: CovarianceState::with_regularization(dims.d, dims.horizon, config.regularization),
            snapshot: None,
            log: vec![Vec::new(); dims.horizon],
            transitions: vec![Vec::new(); dims.horizon],
            sims: vec![Vec::new(); dims.horizon],
            schedule: BufferSchedule::default(),
            policy: PolicyEstimate::cold_start(dims),
            fhat: None,
            residual_count: 0,
            coin_rng: substream(seed, streams::SELLER_COIN),
            pi_rand_rng: substream(seed, streams::PI_RAND),
            cold_rng: substream(seed, streams::COLD_START),
            sim_rng: substream(seed, streams::SIM_RESERVES),
            fit_rng: substream(seed, streams::FIT_STARTS),
            noise_bank,
            uniform_bank,
            config,
            dims,
            features,
            known_noise,
            gamma,
        })
    }

    pub fn config(&self) -> &SellerConfig {
        &self.config
    }

    pub fn policy(&self) -> &PolicyEstimate {
        &self.policy
    }

    pub fn schedule(&self) -> &BufferSchedule {
        &self.schedule
    }

    pub fn k_tilde(&self) -> usize {
        self.schedule.k_tilde
    }

    pub fn covariance(&self) -> &CovarianceState {
        &self.covariance
    }

    /// Latest `F̂` (unknown-noise seller, after its first update).
    pub fn fhat(&self) -> Option<&EmpiricalDist> {
        self.fhat.as_ref()
    }

    /// Number of residuals behind [`fhat`](Self::fhat).
    pub fn residual_count(&self) -> usize {
        self.residual_count
    }

    /// Simulated draw for round `τ` (0-based episode index) at step `h`.
    pub fn sim_draw(&self, h: usize, tau: usize) -> Option<SimDraw> {
        self.sims.get(h).and_then(|s| s.get(tau)).copied()
    }

    pub fn in_buffer(&self, k: usize) -> bool {
        self.schedule.in_buffer(k)
    }

    /// Mixture policy: with probability `1/(HK)` hand the step to
    /// [`pi_rand`], otherwise follow the current estimate.
    pub fn act(&mut self, h: usize, x: usize) -> Result<Action> {
        check_index("step", h, self.dims.horizon)?;
        check_index("state", x, self.dims.n_states)?;
        let coin: f64 = self.coin_rng.random();
        if coin < self.config.mixture_prob(self.dims.horizon) {
            return Ok(pi_rand(self.dims.n_bidders, self.dims.n_items, &mut self.pi_rand_rng));
        }
        Ok(self.greedy(h, x))
    }

    fn greedy(&mut self, h: usize, x: usize) -> Action {
        let item = if self.policy.cold_start {
            self.cold_rng.random_range(0..self.dims.n_items)
        } else {
            self.policy.items[h][x]
        };
        Action {
            item,
            reserves: self.policy.reserves[h][x][item].clone(),
            used_pi_rand: false,
            rand_bidder: None,
        }
    }

    /// Logs an episode, absorbs its features into `Λ_h`, and (unknown noise)
    /// draws the frozen simulated outcomes of its rounds.
    pub fn observe_episode(&mut self, transcript: &EpisodeTranscript) -> Result<()> {
        if transcript.steps.len() != self.dims.horizon {
            return Err(ClubError::InvalidDimensions("transcript must cover every step".into()));
        }
        for (h, step) in transcript.steps.iter().enumerate() {
            let phi = self.features.row(step.state, step.item).to_vec();
            self.covariance.update(h, &phi)?;
            if h + 1 < self.dims.horizon {
                self.transitions[h].push(Transition {
                    state: step.state,
                    item: step.item,
                    next_state: transcript.steps[h + 1].state,
                });
            }
            if self.config.variant == Variant::UnknownF {
                let draw = simulate_round(&step.bids, &mut self.sim_rng);
                self.sims[h].push(draw);
            }
            self.log[h].push(RoundLog {
                state: step.state,
                item: step.item,
                bids: step.bids.clone(),
                thresholds: step.outcome.thresholds.clone(),
                wins: step.outcome.wins.clone(),
            });
        }
        Ok(())
    }

    /// `true` if `Λ_h` doubled (in the configured sense) against the
    /// snapshot for some `h`.
    pub fn covariance_trigger(&self) -> Result<bool> {
        let Some(snapshot) = &self.snapshot else {
            return Ok(false);
        };
        for (h, old) in snapshot.iter().enumerate() {
            let new = &self.covariance.step(h).gram;
            let fired = match self.config.trigger {
                TriggerRule::AnyDirection => psd_direction_doubling(new, old)?,
                TriggerRule::AllDirections => psd_double_dominance(new, old)?,
            };
            if fired {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Bookkeeping at the end of episode `k`: run a due update, then, with no
    /// buffer pending, check the trigger and schedule a buffer.
    pub fn end_of_episode(&mut self, k: usize) -> Result<EpisodeEvents> {
        let mut events = EpisodeEvents::default();
        if self.snapshot.is_none() {
            // buffer.e(0) = 1
            self.snapshot = Some(self.covariance.grams());
        }
        if self.schedule.update_due(k) {
            self.end_of_buffer_update()?;
            events.updated = true;
        }
        if !self.schedule.pending {
            let cov = self.covariance_trigger()?;
            let due = match self.config.variant {
                Variant::KnownF => cov,
                Variant::UnknownF => unknown_update_due(k, cov),
            };
            if due {
                events.scheduled = true;
                if self.schedule.schedule(k, self.gamma) == 0 {
                    self.end_of_buffer_update()?;
                    events.updated = true;
                }
            }
        }
        Ok(events)
    }

    /// Re-estimates the model from every logged round and replaces the
    /// policy. Must run at the end of the pending buffer.
    pub fn end_of_buffer_update(&mut self) -> Result<()> {
        let end = self.schedule.end;
        self.schedule.complete();
        self.covariance.refresh_inverses()?;
        self.snapshot = Some(self.covariance.grams());
        let horizon = self.dims.horizon;
        let radius = 2.0 * (self.dims.d as f64).sqrt();
        let clip = 3.0 * horizon as f64;
        let bonus = self.config.bonus_coef(horizon);
        let (theta_hats, table, extra, solution) = match self.config.variant {
            Variant::KnownF => {
                let theta_hats = self.fit_known(radius)?;
                let noise = self.known_noise.as_ref().expect("checked at construction");
                let bank = self.noise_bank.as_ref().expect("checked at construction");
                let table = estimate_revenue_table(
                    &theta_hats,
                    &self.features,
                    self.dims,
                    |z| noise.cdf(z),
                    bank,
                    self.config.grid_step,
                )?;
                let solution = lsvi_backward(
                    &self.features,
                    &self.transitions,
                    &table.revenue,
                    &self.covariance,
                    bonus,
                    0.0,
                    clip,
                )?;
                (theta_hats, table, 0.0, solution)
            }
            Variant::UnknownF => {
                let rounds: Vec<Vec<JointRound<'_>>> = (0..horizon)
                    .map(|h| {
                        self.log[h]
                            .iter()
                            .zip(&self.sims[h])
                            .map(|(r, &sim)| JointRound {
                                phi: self.features.row(r.state, r.item),
                                bids: &r.bids,
                                sim,
                            })
                            .collect()
                    })
                    .collect();
                let joint = joint_estimate(&rounds, self.dims.n_bidders, radius)?;
                let fhat = joint.fhat;
                let bank = self
                    .uniform_bank
                    .as_ref()
                    .expect("checked at construction")
                    .to_noise(|u| fhat.quantile(u));
                let table = estimate_revenue_table(
                    &joint.theta_hats,
                    &self.features,
                    self.dims,
                    |z| fhat.cdf(z),
                    &bank,
                    self.config.grid_step,
                )?;
                let bonus2 = self.config.bonus2_coef(horizon);
                let solution = lsvi_backward_unknown(
                    &self.features,
                    &self.transitions,
                    &table.revenue,
                    &self.covariance,
                    bonus,
                    bonus2,
                    end,
                    clip,
                )?;
                self.residual_count = joint.residual_count;
                self.fhat = Some(fhat);
                (joint.theta_hats, table, crate::unknown::extra_bonus(bonus2, end), solution)
            }
        };
        self.policy = PolicyEstimate {
            id: self.schedule.k_tilde,
            dims: self.dims,
            bonus,
            extra_bonus: extra,
            theta_hats,
            omega: solution.omega,
            q: solution.q,
            items: solution.items,
            reserves: table.reserves,
            cold_start: false,
        };
        Ok(())
    }

    fn fit_known(&mut self, radius: f64) -> Result<Vec<Vec<Vec<f64>>>> {
        let noise = self.known_noise.as_ref().expect("checked at construction");
        let previous = std::mem::take(&mut self.policy.theta_hats);
        let mut theta_hats = vec![Vec::with_capacity(self.dims.horizon); self.dims.n_bidders];
        for (i, per_bidder) in theta_hats.iter_mut().enumerate() {
            for h in 0..self.dims.horizon {
                let data: Vec<WinObservation<'_>> = self.log[h]
                    .iter()
                    .map(|r| WinObservation {
                        phi: self.features.row(r.state, r.item),
                        threshold: r.thresholds[i],
                        won: r.wins[i],
                    })
                    .collect();
                let warm = previous.get(i).and_then(|p| p.get(h)).map(|v| v.as_slice());
                let fit = fit_theta_known_f(&data, noise, radius, self.config.fit, warm, &mut self.fit_rng)?;
                per_bidder.push(fit.theta);
            }
        }
        Ok(theta_hats)
    }
}

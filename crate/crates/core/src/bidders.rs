//! Bidder strategies and discounted-utility accounting.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::auction::AuctionOutcome;
use crate::error::{ClubError, Result};

/// What a bidder remembers about one of his own past rounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OwnRound {
    pub valuation: f64,
    pub bid: f64,
    pub threshold: f64,
    pub won: bool,
}

/// A bidder's own history. Bidders never observe each other's bids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BidderHistory {
    pub rounds: Vec<OwnRound>,
}

pub struct BidContext<'a> {
    pub episode: usize,
    pub step: usize,
    pub valuation: f64,
    pub history: &'a BidderHistory,
}

pub type CustomBidFn = Arc<dyn Fn(&BidContext<'_>) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum BidderStrategy {
    Truthful,
    /// Bid `v + delta` (delta may be negative).
    ConstantShift { delta: f64 },
    /// Shift by `delta` through `until_episode`, truthful afterwards.
    EarlyManipulator { delta: f64, until_episode: usize },
    Custom(CustomBidFn),
}

impl fmt::Debug for BidderStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BidderStrategy::Truthful => write!(f, "Truthful"),
            BidderStrategy::ConstantShift { delta } => write!(f, "ConstantShift({delta:+})"),
            BidderStrategy::EarlyManipulator {
                delta,
                until_episode,
            } => write!(f, "EarlyManipulator({delta:+}@{until_episode})"),
            BidderStrategy::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Quantities needed to size deviations that shrink with the horizon.
#[derive(Clone, Copy, Debug)]
pub struct StrategyScale {
    pub horizon: usize,
    pub n_bidders: usize,
    pub episodes: usize,
    pub gamma: f64,
}

impl StrategyScale {
    /// Largest deviation a rational bidder makes against the mechanism,
    /// `3H√(2N) / (K√(1-γ))`, capped at the valuation range.
    pub fn rational_deviation(&self) -> f64 {
        let h = self.horizon as f64;
        let n = self.n_bidders as f64;
        let k = self.episodes.max(1) as f64;
        (3.0 * h * (2.0 * n).sqrt() / (k * (1.0 - self.gamma).sqrt())).min(3.0)
    }
}

fn parse_signed(text: &str, spec: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ClubError::Config(format!("bad shift in strategy {spec:?}")))
}

impl BidderStrategy {
    /// Parses `truthful`, `shift:+0.3`, `early:+0.5@200`, or `rational:+` /
    /// `rational:-` (a shift of the rational-bidder magnitude for this run).
    pub fn parse(spec: &str, scale: StrategyScale) -> Result<Self> {
        let spec = spec.trim();
        if spec == "truthful" {
            return Ok(BidderStrategy::Truthful);
        }
        if let Some(rest) = spec.strip_prefix("shift:") {
            return Ok(BidderStrategy::ConstantShift {
                delta: parse_signed(rest, spec)?,
            });
        }
        if let Some(rest) = spec.strip_prefix("early:") {
            let (delta, until) = rest
                .split_once('@')
                .ok_or_else(|| ClubError::Config(format!("expected early:<delta>@<episode>, got {spec:?}")))?;
            let until_episode = until
                .trim()
                .parse()
                .map_err(|_| ClubError::Config(format!("bad episode in strategy {spec:?}")))?;
            return Ok(BidderStrategy::EarlyManipulator {
                delta: parse_signed(delta, spec)?,
                until_episode,
            });
        }
        if let Some(sign) = spec.strip_prefix("rational:") {
            let magnitude = scale.rational_deviation();
            let delta = match sign.trim() {
                "+" => magnitude,
                "-" => -magnitude,
                _ => return Err(ClubError::Config(format!("expected rational:+ or rational:-, got {spec:?}"))),
            };
            return Ok(BidderStrategy::ConstantShift { delta });
        }
        Err(ClubError::Config(format!("unknown bidder strategy {spec:?}")))
    }

    pub fn is_truthful(&self) -> bool {
        matches!(self, BidderStrategy::Truthful)
    }

    pub fn bid(&self, ctx: &BidContext<'_>) -> f64 {
        let raw = match self {
            BidderStrategy::Truthful => ctx.valuation,
            BidderStrategy::ConstantShift { delta } => ctx.valuation + delta,
            BidderStrategy::EarlyManipulator {
                delta,
                until_episode,
            } => {
                if ctx.episode <= *until_episode {
                    ctx.valuation + delta
                } else {
                    ctx.valuation
                }
            }
            BidderStrategy::Custom(f) => f(ctx),
        };
        if raw.is_nan() {
            0.0
        } else {
            raw.max(0.0)
        }
    }
}

pub fn make_bids(
    strategies: &[BidderStrategy],
    valuations: &[f64],
    episode: usize,
    step: usize,
    histories: &[BidderHistory],
) -> Vec<f64> {
    assert_eq!(strategies.len(), valuations.len());
    assert_eq!(strategies.len(), histories.len());
    strategies
        .iter()
        .zip(valuations)
        .zip(histories)
        .map(|((s, &valuation), history)| {
            s.bid(&BidContext {
                episode,
                step,
                valuation,
                history,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilityLedger {
    /// Per bidder `Σ_k γ^k Σ_h (v - m) q`.
    pub discounted: Vec<f64>,
    /// `per_episode[k][i]`: undiscounted utility of bidder `i` in episode `k`.
    pub per_episode: Vec<Vec<f64>>,
}

impl UtilityLedger {
    pub fn new(n_bidders: usize) -> Self {
        UtilityLedger {
            discounted: vec![0.0; n_bidders],
            per_episode: Vec::new(),
        }
    }

    pub fn accrue(&mut self, episode: usize, valuations: &[f64], outcome: &AuctionOutcome, gamma: f64) {
        let n = self.discounted.len();
        assert_eq!(valuations.len(), n);
        if self.per_episode.len() <= episode {
            self.per_episode.resize(episode + 1, vec![0.0; n]);
        }
        let weight = gamma.powi(episode as i32);
        for i in 0..n {
            if outcome.wins[i] {
                let u = valuations[i] - outcome.thresholds[i];
                self.discounted[i] += weight * u;
                self.per_episode[episode][i] += u;
            }
        }
    }
}

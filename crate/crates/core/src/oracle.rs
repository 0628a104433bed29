//! The informed benchmark: Myerson reserves plus dynamic programming over
//! the true model, policy evaluation under truthful bidding, and the
//! per-episode regret ledger.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::auction::{optimal_reserve_exact, round_revenue, McEstimate, NoiseBank};
use crate::env::{EnvSpec, StepRecord};
use crate::error::{ClubError, Result};
use crate::rng::{streams, substream};
use crate::seller::{PolicyEstimate, StepAction};
use crate::unknown::SimDraw;

/// Optimal revenue tables and the optimal policy of one environment.
#[derive(Clone, Debug)]
pub struct OracleTable {
    /// `v_star[h][x]`; `h` runs to `H` inclusive with a zero last layer.
    pub v_star: Vec<Vec<f64>>,
    /// `items[h][x]`, ties to the lowest index.
    pub items: Vec<Vec<usize>>,
    /// Myerson reserves `reserves[h][x][item][i]`.
    pub reserves: Vec<Vec<Vec<Vec<f64>>>>,
    /// `revenue[h][x][item]` under Myerson reserves.
    pub revenue: Vec<Vec<Vec<McEstimate>>>,
    /// The draws every value in this table was computed with.
    pub bank: Arc<NoiseBank>,
}

/// `V*_h(x) = max_υ [R*(h, x, υ) + Σ_x' P_h(x' | x, υ) V*_{h+1}(x')]` with
/// `R*` the Monte Carlo revenue of Myerson reserves.
pub fn optimal_dp<R: Rng + ?Sized>(env: &EnvSpec, revenue_samples: usize, rng: &mut R) -> Result<OracleTable> {
    if revenue_samples == 0 {
        return Err(ClubError::InvalidParameter("oracle needs at least one sample".into()));
    }
    let dims = env.dims;
    let bank = Arc::new(NoiseBank::draw(&env.noise, dims.n_bidders, revenue_samples, rng));
    let mut reserves = Vec::with_capacity(dims.horizon);
    let mut revenue = Vec::with_capacity(dims.horizon);
    for h in 0..dims.horizon {
        let (mut res_h, mut rev_h) = (Vec::new(), Vec::new());
        for x in 0..dims.n_states {
            let (mut res_x, mut rev_x) = (Vec::new(), Vec::new());
            for item in 0..dims.n_items {
                let mu = env.mean_rewards(h, x, item);
                let res = mu
                    .iter()
                    .map(|&m| optimal_reserve_exact(&env.noise, m))
                    .collect::<Result<Vec<f64>>>()?;
                rev_x.push(bank.expected_revenue(&mu, &res));
                res_x.push(res);
            }
            res_h.push(res_x);
            rev_h.push(rev_x);
        }
        reserves.push(res_h);
        revenue.push(rev_h);
    }
    let mut v_star = vec![vec![0.0; dims.n_states]; dims.horizon + 1];
    let mut items = vec![vec![0; dims.n_states]; dims.horizon];
    for h in (0..dims.horizon).rev() {
        for x in 0..dims.n_states {
            let q: Vec<f64> = (0..dims.n_items)
                .map(|item| {
                    let p = env.transition_probs(h, x, item).expect("indices in range");
                    revenue[h][x][item].mean + p.iter().zip(&v_star[h + 1]).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let best = crate::seller::argmax_first(&q);
            items[h][x] = best;
            v_star[h][x] = q[best];
        }
    }
    Ok(OracleTable {
        v_star,
        items,
        reserves,
        revenue,
        bank,
    })
}

/// Hex SHA-256 of the serialized environment.
pub fn env_fingerprint(env: &EnvSpec) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(env)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

type OracleCache = Mutex<HashMap<(String, usize), Arc<OracleTable>>>;

fn oracle_cache() -> &'static OracleCache {
    static CACHE: OnceLock<OracleCache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

impl OracleTable {
    /// [`optimal_dp`] on the environment's own oracle stream, memoized per
    /// environment fingerprint and sample count.
    pub fn cached(env: &EnvSpec, revenue_samples: usize) -> Result<Arc<OracleTable>> {
        let key = (env_fingerprint(env)?, revenue_samples);
        if let Some(t) = oracle_cache().lock().expect("oracle cache poisoned").get(&key) {
            return Ok(Arc::clone(t));
        }
        let mut rng = substream(env.seed, streams::ORACLE_MC);
        let table = Arc::new(optimal_dp(env, revenue_samples, &mut rng)?);
        let mut cache = oracle_cache().lock().expect("oracle cache poisoned");
        Ok(Arc::clone(cache.entry(key).or_insert(table)))
    }

    pub fn action(&self, h: usize, x: usize) -> StepAction {
        let item = self.items[h][x];
        StepAction::Fixed {
            item,
            reserves: self.reserves[h][x][item].clone(),
        }
    }
}

/// Forward policy evaluation: `V_1(x_1)` of the per-step decisions `policy`
/// under truthful bidding, with revenues from `bank`. Standard errors add
/// across cells, weighted by visit probability.
pub fn policy_value<P: Fn(usize, usize) -> StepAction>(env: &EnvSpec, bank: &NoiseBank, policy: P) -> McEstimate {
    let dims = env.dims;
    let mut dist = vec![0.0; dims.n_states];
    dist[env.initial_state] = 1.0;
    let (mut value, mut stderr) = (0.0, 0.0);
    for h in 0..dims.horizon {
        let mut next = vec![0.0; dims.n_states];
        for x in 0..dims.n_states {
            let px = dist[x];
            if px == 0.0 {
                continue;
            }
            let mut branch = |item: usize, weight: f64, est: McEstimate| {
                value += px * weight * est.mean;
                stderr += px * weight * est.stderr;
                let p = env.transition_probs(h, x, item).expect("indices in range");
                for (n, q) in next.iter_mut().zip(p) {
                    *n += px * weight * q;
                }
            };
            match policy(h, x) {
                StepAction::Fixed { item, reserves } => {
                    let mu = env.mean_rewards(h, x, item);
                    branch(item, 1.0, bank.expected_revenue(&mu, &reserves));
                }
                StepAction::UniformItem { reserves } => {
                    let w = 1.0 / dims.n_items as f64;
                    for (item, res) in reserves.iter().enumerate() {
                        let mu = env.mean_rewards(h, x, item);
                        branch(item, w, bank.expected_revenue(&mu, res));
                    }
                }
                StepAction::PiRand => {
                    let w = 1.0 / dims.n_items as f64;
                    for item in 0..dims.n_items {
                        let mu = env.mean_rewards(h, x, item);
                        branch(item, w, bank.random_offer_revenue(&mu));
                    }
                }
            }
        }
        dist = next;
    }
    McEstimate { mean: value, stderr }
}

/// Memoized values of the realized per-episode policies: the greedy
/// estimate with the steps that fell to the exploration policy replaced.
pub struct PolicyEvaluator {
    oracle: Arc<OracleTable>,
    optimal: McEstimate,
    cache: HashMap<(usize, u64), McEstimate>,
}

impl PolicyEvaluator {
    pub fn new(env: &EnvSpec, oracle: Arc<OracleTable>) -> Self {
        let optimal = policy_value(env, &oracle.bank, |h, x| oracle.action(h, x));
        PolicyEvaluator {
            oracle,
            optimal,
            cache: HashMap::new(),
        }
    }

    pub fn optimal(&self) -> McEstimate {
        self.optimal
    }

    pub fn oracle(&self) -> &OracleTable {
        &self.oracle
    }

    /// `pi_rand_mask` bit `h` marks steps that used the exploration policy.
    pub fn value(&mut self, env: &EnvSpec, policy: &PolicyEstimate, pi_rand_mask: u64) -> McEstimate {
        let key = (policy.id, pi_rand_mask);
        if let Some(v) = self.cache.get(&key) {
            return *v;
        }
        let v = policy_value(env, &self.oracle.bank, |h, x| {
            if pi_rand_mask >> h & 1 == 1 {
                StepAction::PiRand
            } else {
                policy.action(h, x)
            }
        });
        self.cache.insert(key, v);
        v
    }
}

/// Would truthful bidding have changed any allocation in this round?
/// Compares `1(b_i >= m_i)` with `1(v_i >= m_i)` against the realized
/// thresholds and, when a simulated offer was made, `1(· > max(b₋ᵢ⁺, ρ̃))`.
pub fn lie_in_round(step: &StepRecord, sim: Option<SimDraw>) -> bool {
    let flips = step
        .bids
        .iter()
        .zip(&step.valuations)
        .zip(&step.outcome.thresholds)
        .any(|((&b, &v), &m)| (b >= m) != (v >= m));
    if flips {
        return true;
    }
    match sim {
        Some(s) => {
            let i = s.bidder;
            let rival = step
                .bids
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &b)| b)
                .fold(0.0f64, f64::max);
            let bar = rival.max(s.reserve);
            (step.valuations[i] > bar) != (step.bids[i] > bar)
        }
        None => false,
    }
}

/// Revenue had everybody bid truthfully against the same reserves, minus
/// the realized revenue.
pub fn truthful_revenue_gap(step: &StepRecord) -> f64 {
    round_revenue(&step.valuations, &step.reserves) - step.outcome.revenue
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaBucket {
    Buffer,
    PiRand,
    Lie,
    Normal,
}

impl DeltaBucket {
    /// Precedence buffer > exploration > lie > normal.
    pub fn classify(in_buffer: bool, used_pi_rand: bool, lie: bool) -> Self {
        if in_buffer {
            DeltaBucket::Buffer
        } else if used_pi_rand {
            DeltaBucket::PiRand
        } else if lie {
            DeltaBucket::Lie
        } else {
            DeltaBucket::Normal
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeltaBucket::Buffer => "buffer",
            DeltaBucket::PiRand => "pi_rand",
            DeltaBucket::Lie => "lie",
            DeltaBucket::Normal => "normal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "buffer" => Some(DeltaBucket::Buffer),
            "pi_rand" => Some(DeltaBucket::PiRand),
            "lie" => Some(DeltaBucket::Lie),
            "normal" | "" => Some(DeltaBucket::Normal),
            _ => None,
        }
    }
}

impl fmt::Display for DeltaBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the regret ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub episode: usize,
    pub k_tilde: usize,
    pub in_buffer: bool,
    pub used_pi_rand: bool,
    pub lie_episode: bool,
    pub policy_value: f64,
    pub optimal_value: f64,
    pub suboptimality: f64,
    pub cum_regret: f64,
    pub delta_bucket: DeltaBucket,
}

/// Tags of one episode, computed from its transcript.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EpisodeTags {
    pub in_buffer: bool,
    pub used_pi_rand: bool,
    pub lie_episode: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaTotals {
    /// Δ₁: normal episodes.
    pub normal: f64,
    /// Δ₂: buffer episodes.
    pub buffer: f64,
    /// Δ₃: episodes with an exploration step.
    pub pi_rand: f64,
    /// Δ₄: lie episodes.
    pub lie: f64,
    /// Δ₅: truthful-replay minus realized revenue on non-lie episodes.
    pub truthful_gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub rows: Vec<LedgerRow>,
    pub deltas: DeltaTotals,
    /// Largest `3·stderr` seen on a suboptimality.
    pub eval_tolerance: f64,
}

impl RegretLedger {
    pub fn cum_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn count(&self, bucket: DeltaBucket) -> usize {
        self.rows.iter().filter(|r| r.delta_bucket == bucket).count()
    }

    /// Appends episode `k`; `truthful_gap` is that episode's truthful-replay
    /// revenue minus its realized revenue.
    pub fn record_episode(
        &mut self,
        k: usize,
        k_tilde: usize,
        tags: EpisodeTags,
        policy: McEstimate,
        optimal: McEstimate,
        truthful_gap: f64,
    ) -> &LedgerRow {
        let sub = optimal.mean - policy.mean;
        self.eval_tolerance = self.eval_tolerance.max(3.0 * (optimal.stderr + policy.stderr));
        let bucket = DeltaBucket::classify(tags.in_buffer, tags.used_pi_rand, tags.lie_episode);
        let d = &mut self.deltas;
        match bucket {
            DeltaBucket::Buffer => d.buffer += sub,
            DeltaBucket::PiRand => d.pi_rand += sub,
            DeltaBucket::Lie => d.lie += sub,
            DeltaBucket::Normal => d.normal += sub,
        }
        if !tags.lie_episode {
            d.truthful_gap += truthful_gap;
        }
        let cum = self.cum_regret() + sub;
        self.rows.push(LedgerRow {
            episode: k,
            k_tilde,
            in_buffer: tags.in_buffer,
            used_pi_rand: tags.used_pi_rand,
            lie_episode: tags.lie_episode,
            policy_value: policy.mean,
            optimal_value: optimal.mean,
            suboptimality: sub,
            cum_regret: cum,
            delta_bucket: bucket,
        });
        self.rows.last().expect("just pushed")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub alpha: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of `ln regret` on `ln K`.
pub fn slope_fit(ks: &[f64], regrets: &[f64]) -> Result<SlopeFit> {
    if ks.len() != regrets.len() {
        return Err(ClubError::InvalidDimensions("K grid and regret curve differ in length".into()));
    }
    if ks.len() < 3 {
        return Err(ClubError::InvalidParameter("slope fit needs at least 3 points".into()));
    }
    if let Some(&r) = regrets.iter().chain(ks).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(ClubError::Domain {
            value: r,
            domain: "(0, inf)",
        });
    }
    let xs: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    let ys: Vec<f64> = regrets.iter().map(|r| r.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(ClubError::InvalidParameter("K grid needs distinct values".into()));
    }
    let alpha = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        alpha,
        intercept: my - alpha * mx,
        r2,
    })
}

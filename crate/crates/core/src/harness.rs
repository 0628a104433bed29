//! Experiment configuration, the episode loop, multi-seed sweeps and result
//! files (CSV ledger, JSON summary, SVG regret plot).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auction::run_round;
use crate::bidders::{make_bids, BidderHistory, BidderStrategy, OwnRound, StrategyScale, UtilityLedger};
use crate::env::{build_tabular_env, EnvDims, EnvSpec, EpisodeTranscript, NoiseModel, StepRecord};
use crate::error::{ClubError, Result};
use crate::numerics::{EmpiricalDist, KnownFitOptions};
use crate::oracle::{
    env_fingerprint, lie_in_round, slope_fit, truthful_revenue_gap, DeltaTotals, EpisodeTags, LedgerRow,
    OracleTable, PolicyEvaluator, RegretLedger, SlopeFit,
};
use crate::rng::{streams, substream};
use crate::seller::{SellerConfig, SellerState, TriggerRule, Variant};
use crate::unknown::write_fhat_csv;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "CLUB_OUT_DIR";

/// Column order of the ledger CSV.
pub const CSV_HEADER: &str =
    "episode,k_tilde,in_buffer,used_pi_rand,lie_episode,policy_value,optimal_value,suboptimality,cum_regret,delta_bucket";

fn default_noise() -> String {
    "uniform".into()
}
fn default_gamma() -> f64 {
    0.9
}
fn default_bonus() -> f64 {
    0.02
}
fn default_mc_learning() -> usize {
    4096
}
fn default_mc_oracle() -> usize {
    1_000_000
}
fn default_grid_step() -> f64 {
    1e-3
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_fit_starts() -> usize {
    8
}
fn default_fit_iters() -> usize {
    500
}
fn default_variant() -> Variant {
    Variant::KnownF
}

/// Flat experiment description; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub n_bidders: usize,
    pub horizon: usize,
    pub n_states: usize,
    pub n_items: usize,
    /// `uniform` or `tgauss:<sigma>`.
    #[serde(default = "default_noise")]
    pub noise: String,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub env_seed: u64,
    pub episodes: usize,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_bonus")]
    pub bonus_cb: f64,
    #[serde(default = "default_bonus")]
    pub bonus_cr: f64,
    /// Defaults to `0.02 H²`.
    #[serde(default)]
    pub bonus2: Option<f64>,
    #[serde(default = "default_mc_learning")]
    pub mc_learning: usize,
    #[serde(default = "default_mc_oracle")]
    pub mc_oracle: usize,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    /// One strategy string per bidder; empty means everybody is truthful.
    #[serde(default)]
    pub bidders: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_fit_starts")]
    pub fit_starts: usize,
    #[serde(default = "default_fit_iters")]
    pub fit_iters: usize,
    #[serde(default)]
    pub trigger: TriggerRule,
    #[serde(default)]
    pub export_fhat: bool,
}

impl ExperimentConfig {
    /// The reference world: one-hot `d = 6`, 3 states, 2 items, 2 truthful
    /// bidders, horizon 3, uniform noise, `γ = 0.9`.
    pub fn reference(variant: Variant, episodes: usize) -> Self {
        ExperimentConfig {
            d: 6,
            n_bidders: 2,
            horizon: 3,
            n_states: 3,
            n_items: 2,
            noise: default_noise(),
            gamma: 0.9,
            env_seed: 7,
            episodes,
            variant,
            bonus_cb: default_bonus(),
            bonus_cr: default_bonus(),
            bonus2: None,
            mc_learning: default_mc_learning(),
            mc_oracle: default_mc_oracle(),
            grid_step: default_grid_step(),
            bidders: Vec::new(),
            seeds: default_seeds(),
            out_dir: default_out_dir(),
            fit_starts: default_fit_starts(),
            fit_iters: default_fit_iters(),
            trigger: TriggerRule::default(),
            export_fhat: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ClubError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ClubError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn dims(&self) -> EnvDims {
        EnvDims {
            d: self.d,
            n_bidders: self.n_bidders,
            horizon: self.horizon,
            n_states: self.n_states,
            n_items: self.n_items,
        }
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        NoiseModel::parse(&self.noise).map_err(|e| ClubError::Config(e.to_string()))
    }

    pub fn seller_config(&self) -> SellerConfig {
        SellerConfig {
            variant: self.variant,
            episodes: self.episodes,
            bonus_cb: self.bonus_cb,
            bonus_cr: self.bonus_cr,
            bonus2: self.bonus2,
            mc_samples: self.mc_learning,
            grid_step: self.grid_step,
            fit: KnownFitOptions {
                starts: self.fit_starts,
                max_iters: self.fit_iters,
            },
            trigger: self.trigger,
            regularization: 1.0,
        }
    }

    pub fn strategies(&self) -> Result<Vec<BidderStrategy>> {
        if self.bidders.is_empty() {
            return Ok(vec![BidderStrategy::Truthful; self.n_bidders]);
        }
        let scale = StrategyScale {
            horizon: self.horizon,
            n_bidders: self.n_bidders,
            episodes: self.episodes,
            gamma: self.gamma,
        };
        self.bidders.iter().map(|s| BidderStrategy::parse(s, scale)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(ClubError::Config(m));
        let dims = self.dims();
        if [dims.d, dims.n_bidders, dims.horizon, dims.n_states, dims.n_items].contains(&0) {
            return cfg("all dimensions must be positive".into());
        }
        if dims.d > dims.n_pairs() {
            return cfg(format!("d = {} exceeds n_states * n_items = {}", dims.d, dims.n_pairs()));
        }
        if dims.horizon > 64 {
            return cfg("horizon above 64 is not supported".into());
        }
        if self.episodes == 0 {
            return cfg("episodes must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return cfg(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.mc_learning == 0 || self.mc_oracle == 0 || self.fit_starts == 0 || self.fit_iters == 0 {
            return cfg("sample counts and fit knobs must be positive".into());
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 1.0) {
            return cfg(format!("grid_step must lie in (0, 1], got {}", self.grid_step));
        }
        for (name, v) in [("bonus_cb", self.bonus_cb), ("bonus_cr", self.bonus_cr)] {
            if !(v.is_finite() && v >= 0.0) {
                return cfg(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.bonus2.is_some_and(|b| !(b.is_finite() && b >= 0.0)) {
            return cfg("bonus2 must be nonnegative".into());
        }
        if !self.bidders.is_empty() && self.bidders.len() != self.n_bidders {
            return cfg(format!("{} strategies for {} bidders", self.bidders.len(), self.n_bidders));
        }
        self.noise_model()?;
        self.strategies()?;
        Ok(())
    }

    /// `CLUB_OUT_DIR` if set, else the configured directory.
    pub fn resolved_out_dir(&self) -> PathBuf {
        std::env::var_os(OUT_DIR_ENV).map_or_else(|| self.out_dir.clone(), PathBuf::from)
    }

    pub fn build_env(&self) -> Result<EnvSpec> {
        build_tabular_env(self.dims(), self.noise_model()?, self.gamma, self.env_seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub variant: Variant,
    pub episodes: usize,
    pub env_fingerprint: String,
    pub optimal_value: f64,
    pub final_regret: f64,
    pub buffer_count: usize,
    pub buffer_episodes: usize,
    pub update_count: usize,
    pub pi_rand_episodes: usize,
    pub lie_episodes: usize,
    pub deltas: DeltaTotals,
    /// Largest `3·stderr` of any suboptimality estimate.
    pub eval_tolerance: f64,
    /// `buffer.e` behind the final policy.
    pub last_update_end: usize,
    /// `sup |F̂ - F|` at the final update (unknown noise only).
    pub sup_fhat_error: Option<f64>,
    /// Residuals behind the final `F̂`.
    pub fhat_samples: Option<usize>,
    /// Non-buffer episodes with `k > 2·buffer.e(k̃)`.
    pub k_over_2e_violations: usize,
    /// Discounted utility per bidder.
    pub utilities: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub rows: Vec<LedgerRow>,
    pub summary: RunSummary,
    /// `(k̃, F̂)` at every update, kept when `export_fhat` is set.
    pub fhat_snapshots: Vec<(usize, EmpiricalDist)>,
}

/// Simulates `config.episodes` episodes with the given seed.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    config.validate()?;
    let env = config.build_env()?;
    let dims = env.dims;
    let oracle = OracleTable::cached(&env, config.mc_oracle)?;
    let mut evaluator = PolicyEvaluator::new(&env, oracle);
    let optimal = evaluator.optimal();
    let known = match config.variant {
        Variant::KnownF => Some(env.noise.clone()),
        Variant::UnknownF => None,
    };
    let mut seller = SellerState::new(config.seller_config(), dims, env.features.clone(), known, env.gamma, seed)?;
    let strategies = config.strategies()?;
    let mut histories = vec![BidderHistory::default(); dims.n_bidders];
    let mut utilities = UtilityLedger::new(dims.n_bidders);
    let mut valuation_rng = substream(seed, streams::VALUATIONS);
    let mut transition_rng = substream(seed, streams::TRANSITIONS);
    let mut ledger = RegretLedger::default();
    let mut fhat_snapshots = Vec::new();
    let mut k_over_2e_violations = 0;

    for k in 1..=config.episodes {
        let k_tilde = seller.k_tilde();
        let in_buffer = seller.in_buffer(k);
        if config.variant == Variant::UnknownF && !in_buffer && k > 2 * seller.schedule().last_update_end {
            k_over_2e_violations += 1;
        }
        let mut transcript = EpisodeTranscript {
            episode: k,
            steps: Vec::with_capacity(dims.horizon),
            terminal_state: None,
        };
        let mut x = env.initial_state;
        let mut mask = 0u64;
        for h in 0..dims.horizon {
            let action = seller.act(h, x)?;
            if action.used_pi_rand {
                mask |= 1 << h;
            }
            let valuations = env.sample_valuations(h, x, action.item, &mut valuation_rng)?;
            let bids = make_bids(&strategies, &valuations, k, h, &histories);
            let outcome = run_round(&bids, &action.reserves)?;
            utilities.accrue(k, &valuations, &outcome, env.gamma);
            for (i, hist) in histories.iter_mut().enumerate() {
                hist.rounds.push(OwnRound {
                    valuation: valuations[i],
                    bid: bids[i],
                    threshold: outcome.thresholds[i],
                    won: outcome.wins[i],
                });
            }
            let next = env.sample_transition(h, x, action.item, &mut transition_rng)?;
            transcript.steps.push(StepRecord {
                state: x,
                item: action.item,
                reserves: action.reserves,
                bids,
                valuations,
                outcome,
                used_pi_rand: action.used_pi_rand,
                rand_bidder: action.rand_bidder,
            });
            x = next;
        }
        transcript.terminal_state = Some(x);
        seller.observe_episode(&transcript)?;

        let lie = transcript
            .steps
            .iter()
            .enumerate()
            .any(|(h, step)| lie_in_round(step, seller.sim_draw(h, k - 1)));
        let gap: f64 = transcript.steps.iter().map(truthful_revenue_gap).sum();
        let value = evaluator.value(&env, seller.policy(), mask);
        let tags = EpisodeTags {
            in_buffer,
            used_pi_rand: mask != 0,
            lie_episode: lie,
        };
        ledger.record_episode(k, k_tilde, tags, value, optimal, gap);

        let events = seller.end_of_episode(k)?;
        if events.updated && config.export_fhat {
            if let Some(f) = seller.fhat() {
                fhat_snapshots.push((seller.k_tilde(), f.clone()));
            }
        }
    }

    let schedule = seller.schedule();
    let sup_fhat_error = seller.fhat().map(|f| f.sup_distance(|z| env.noise.cdf(z)));
    let summary = RunSummary {
        seed,
        variant: config.variant,
        episodes: config.episodes,
        env_fingerprint: env_fingerprint(&env)?,
        optimal_value: optimal.mean,
        final_regret: ledger.cum_regret(),
        buffer_count: schedule.history.len(),
        buffer_episodes: schedule.buffered_episodes(config.episodes),
        update_count: schedule.k_tilde,
        pi_rand_episodes: ledger.rows.iter().filter(|r| r.used_pi_rand).count(),
        lie_episodes: ledger.rows.iter().filter(|r| r.lie_episode).count(),
        deltas: ledger.deltas,
        eval_tolerance: ledger.eval_tolerance,
        last_update_end: schedule.last_update_end,
        sup_fhat_error,
        fhat_samples: seller.fhat().map(|_| seller.residual_count()),
        k_over_2e_violations,
        utilities: utilities.discounted,
    };
    Ok(RunResult {
        rows: ledger.rows,
        summary,
        fhat_snapshots,
    })
}

pub fn emit_csv(rows: &[LedgerRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a ledger CSV written by [`emit_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<LedgerRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(ClubError::InvalidParameter(format!("unexpected CSV header in {}", path.display())));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn emit_summary<T: Serialize>(summary: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(())
}

/// Writes the CSV, the JSON summary, a cumulative-regret plot and (if
/// collected) `F̂` snapshots of one run into `dir`.
pub fn emit_run(result: &RunResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let seed = result.summary.seed;
    emit_csv(&result.rows, &dir.join(format!("run_seed{seed}.csv")))?;
    emit_summary(&result.summary, &dir.join(format!("run_seed{seed}.json")))?;
    let curve = PlotSeries {
        label: format!("seed {seed}"),
        points: regret_curve(&result.rows),
    };
    emit_plot(
        "Cumulative regret",
        "episode",
        "cumulative regret",
        &[curve],
        None,
        &dir.join(format!("run_seed{seed}.svg")),
    )?;
    if !result.fhat_snapshots.is_empty() {
        let fdir = dir.join("fhat");
        fs::create_dir_all(&fdir)?;
        for (k_tilde, f) in &result.fhat_snapshots {
            write_fhat_csv(f, 401, &fdir.join(format!("seed{seed}_update{k_tilde}.csv")))?;
        }
    }
    Ok(())
}

fn regret_curve(rows: &[LedgerRow]) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.cum_regret > 0.0)
        .map(|r| (r.episode as f64, r.cum_regret))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub episodes: usize,
    pub seed: u64,
    pub summary: RunSummary,
    #[serde(skip)]
    pub rows: Vec<LedgerRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub episodes: usize,
    pub median_regret: f64,
    pub regrets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    pub points: Vec<SweepPoint>,
    /// `None` when fewer than three K values or a nonpositive median.
    pub fit: Option<SlopeFit>,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs every `(K, seed)` pair (in parallel) through `runner` and reduces
/// in sorted `(K, seed)` order: median final regret per `K` and the
/// log-log slope across `K`.
pub fn sweep<F>(config: &ExperimentConfig, ks: &[usize], seeds: &[u64], runner: F) -> Result<SweepResult>
where
    F: Fn(&ExperimentConfig, u64) -> Result<RunResult> + Sync,
{
    if ks.len() < 2 {
        return Err(ClubError::Config("a sweep needs at least two K values".into()));
    }
    if seeds.is_empty() {
        return Err(ClubError::Config("a sweep needs at least one seed".into()));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    let jobs: Vec<(usize, u64)> = ks.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect();
    let runs: Vec<SweepRun> = jobs
        .par_iter()
        .map(|&(k, seed)| {
            let mut cfg = config.clone();
            cfg.episodes = k;
            let r = runner(&cfg, seed)?;
            Ok(SweepRun {
                episodes: k,
                seed,
                summary: r.summary,
                rows: r.rows,
            })
        })
        .collect::<Result<_>>()?;
    let points: Vec<SweepPoint> = ks
        .iter()
        .map(|&k| {
            let regrets: Vec<f64> = runs
                .iter()
                .filter(|r| r.episodes == k)
                .map(|r| r.summary.final_regret)
                .collect();
            SweepPoint {
                episodes: k,
                median_regret: median(&regrets),
                regrets,
            }
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.episodes as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_regret).collect();
    let fit = slope_fit(&xs, &ys).ok();
    Ok(SweepResult { runs, points, fit })
}

/// Writes `runs/K{K}_seed{seed}.csv`, `sweep.json` and `regret.svg`.
pub fn emit_sweep(result: &SweepResult, dir: &Path) -> Result<()> {
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    for r in &result.runs {
        emit_csv(&r.rows, &runs_dir.join(format!("K{}_seed{}.csv", r.episodes, r.seed)))?;
    }
    emit_summary(result, &dir.join("sweep.json"))?;
    plot_sweep(result, &dir.join("regret.svg"))
}

pub fn plot_sweep(result: &SweepResult, path: &Path) -> Result<()> {
    let series = PlotSeries {
        label: "median cumulative regret".into(),
        points: result
            .points
            .iter()
            .filter(|p| p.median_regret > 0.0)
            .map(|p| (p.episodes as f64, p.median_regret))
            .collect(),
    };
    emit_plot("Regret versus K", "K", "median cumulative regret", &[series], result.fit, path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Log-log line plot as a standalone SVG document; `fit` adds the line
/// `exp(intercept) · x^alpha`.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[PlotSeries], fit: Option<SlopeFit>) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 480.0, 80.0, 20.0, 40.0, 60.0);
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| *x > 0.0 && *y > 0.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x.log10());
        x1 = x1.max(x.log10());
        y0 = y0.min(y.log10());
        y1 = y1.max(y.log10());
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let (x0, x1) = (x0.floor(), x1.ceil());
    let (y0, y1) = (y0.floor(), y1.ceil());
    let px = |x: f64| left + (x.log10() - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y.log10() - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    for e in (x0 as i32)..=(x1 as i32) {
        let x = px(10f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{}" stroke="#ddd"/><text x="{x:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">1e{e}</text>"##,
            h - bottom,
            h - bottom + 18.0
        );
    }
    for e in (y0 as i32)..=(y1 as i32) {
        let y = py(10f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="12">1e{e}</text>"##,
            w - right,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        (left + w - right) / 2.0,
        h - 16.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {})">{}</text>"#,
        (top + h - bottom) / 2.0,
        (top + h - bottom) / 2.0,
        xml_escape(y_label)
    );
    for (j, ser) in series.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        if ser.points.len() <= 32 {
            for &(x, y) in ser.points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0) {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            left + 10.0,
            top + 16.0 + 14.0 * j as f64,
            xml_escape(&ser.label)
        );
    }
    if let Some(f) = fit {
        let (a, b) = (10f64.powf(x0), 10f64.powf(x1));
        let line = |x: f64| f.intercept.exp() * x.powf(f.alpha);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
            px(a),
            py(line(a)),
            px(b),
            py(line(b))
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">fit: slope {:.3}, r² {:.3}</text>"#,
            left + 10.0,
            top + 16.0 + 14.0 * series.len() as f64,
            f.alpha,
            f.r2
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[PlotSeries],
    fit: Option<SlopeFit>,
    path: &Path,
) -> Result<()> {
    fs::write(path, render_svg(title, x_label, y_label, series, fit))?;
    Ok(())
}

/// Plots whatever `dir` holds: the K sweep if `sweep.json` exists, else
/// the cumulative regret of every ledger CSV in it.
pub fn plot_dir(dir: &Path, out: &Path) -> Result<()> {
    let sweep_file = dir.join("sweep.json");
    if sweep_file.exists() {
        let result: SweepResult = serde_json::from_str(&fs::read_to_string(sweep_file)?)?;
        return plot_sweep(&result, out);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(ClubError::EmptyData("no ledger CSV files to plot"));
    }
    let series = files
        .iter()
        .map(|p| {
            Ok(PlotSeries {
                label: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                points: regret_curve(&read_csv(p)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit_plot("Cumulative regret", "episode", "cumulative regret", &series, None, out)
}

use serde::{Deserialize, Serialize};

use crate::error::{ClubError, Result};

/// Empirical distribution of residuals with a piecewise-linear cdf through
/// the order statistics: `F̂(s_(j)) = (j - 1)/(t - 1)`, zero below the
/// smallest sample and one from the largest sample on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDist {
    sorted: Vec<f64>,
}

impl EmpiricalDist {
    pub fn build(residuals: &[f64]) -> Result<Self> {
        if residuals.is_empty() {
            return Err(ClubError::EmptyData("empirical distribution needs samples"));
        }
        if residuals.iter().any(|r| r.is_nan()) {
            return Err(ClubError::InvalidParameter("NaN residual".into()));
        }
        let mut sorted = residuals.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(EmpiricalDist { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let t = self.sorted.len();
        let below_or_at = self.sorted.partition_point(|&s| s <= x);
        if below_or_at == 0 {
            return 0.0;
        }
        if below_or_at == t {
            return 1.0;
        }
        let j = below_or_at - 1;
        let (lo, hi) = (self.sorted[j], self.sorted[j + 1]);
        let frac = (x - lo) / (hi - lo);
        (j as f64 + frac) / (t - 1) as f64
    }

    /// Inverse of [`cdf`](Self::cdf) on `[0, 1]`.
    pub fn quantile(&self, p: f64) -> f64 {
        let t = self.sorted.len();
        if t == 1 {
            return self.sorted[0];
        }
        let pos = p.clamp(0.0, 1.0) * (t - 1) as f64;
        let j = (pos.floor() as usize).min(t - 2);
        let frac = pos - j as f64;
        self.sorted[j] + frac * (self.sorted[j + 1] - self.sorted[j])
    }

    /// `sup_x |F̂(x) - F(x)|`, evaluated on both sides of every sample and
    /// on a uniform grid over [-1, 1].
    pub fn sup_distance<F: Fn(f64) -> f64>(&self, cdf: F) -> f64 {
        let mut worst = 0.0f64;
        let mut probe = |x: f64| worst = worst.max((self.cdf(x) - cdf(x)).abs());
        for &s in &self.sorted {
            probe(s);
            probe(s - 1e-12);
        }
        for k in 0..=2000 {
            probe(-1.0 + k as f64 / 1000.0);
        }
        worst
    }
}

/// Histogram density over [-1, 1] split into `2M` bins of width `1/M`:
/// `f̂(x) = M [F̂((i+1)/M) - F̂(i/M)]` for `x ∈ (i/M, (i+1)/M]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramPdf {
    pub bins_per_unit: usize,
    pub masses: Vec<f64>,
}

impl HistogramPdf {
    pub fn new(dist: &EmpiricalDist, bins_per_unit: usize) -> Result<Self> {
        if bins_per_unit == 0 {
            return Err(ClubError::InvalidParameter("histogram needs at least one bin".into()));
        }
        let m = bins_per_unit as i64;
        let masses = (-m..m)
            .map(|i| {
                let lo = i as f64 / m as f64;
                let hi = (i + 1) as f64 / m as f64;
                dist.cdf(hi) - dist.cdf(lo)
            })
            .collect();
        Ok(HistogramPdf {
            bins_per_unit,
            masses,
        })
    }

    pub fn density(&self, x: f64) -> f64 {
        if !(-1.0..=1.0).contains(&x) {
            return 0.0;
        }
        let m = self.bins_per_unit as f64;
        let idx = ((x * m).ceil() as i64 - 1 + self.bins_per_unit as i64)
            .clamp(0, self.masses.len() as i64 - 1) as usize;
        m * self.masses[idx]
    }

    /// `∫ f̂` over [-1, 1].
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Bin count `max(4, round(e^{1/4} / (√H ln K)))`.
pub fn default_bin_count(buffer_end: usize, horizon: usize, episodes: usize) -> usize {
    let log_k = (episodes.max(2) as f64).ln();
    let raw = (buffer_end as f64).powf(0.25) / ((horizon as f64).sqrt() * log_k);
    (raw.round() as usize).max(4)
}

/// DKW half-width `√(ln(2/δ)/2) · t^{-1/2}`.
pub fn dkw_band(t: usize, delta: f64) -> Result<f64> {
    if t == 0 {
        return Err(ClubError::InvalidParameter("sample count must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ClubError::Domain {
            value: delta,
            domain: "(0, 1)",
        });
    }
    Ok(((2.0 / delta).ln() / 2.0).sqrt() / (t as f64).sqrt())
}

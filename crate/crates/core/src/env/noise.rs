use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{ClubError, Result};
use crate::numerics::quadrature::integrate;

/// Market-noise distribution of the valuation shock `z`, supported on [-1, 1]
/// with mean zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Uniform,
    /// Centered Gaussian truncated to [-1, 1] and renormalized. Symmetric
    /// truncation keeps the mean at zero.
    TruncatedGaussian { sigma: f64 },
    /// Piecewise-linear cdf through `(x, F(x))` knots from `(-1, 0)` to `(1, 1)`.
    PiecewiseLinearCdf { knots: Vec<[f64; 2]> },
    /// Point mass at zero. Violates the density lower bound, so it only
    /// exists for tests.
    #[cfg(any(test, feature = "testing"))]
    Zero,
}

const QUANTILE_TOL: f64 = 1e-12;

impl NoiseModel {
    pub fn truncated_gaussian(sigma: f64) -> Result<Self> {
        let model = NoiseModel::TruncatedGaussian { sigma };
        model.validate()?;
        Ok(model)
    }

    pub fn piecewise_linear(knots: Vec<[f64; 2]>) -> Result<Self> {
        let model = NoiseModel::PiecewiseLinearCdf { knots };
        model.validate()?;
        Ok(model)
    }

    #[cfg(any(test, feature = "testing"))]
    pub fn zero_for_tests() -> Self {
        NoiseModel::Zero
    }

    /// The models shipped as named presets. All satisfy the density bounds and
    /// log-concavity of `F` and `1 - F`.
    pub fn presets() -> Vec<NoiseModel> {
        vec![
            NoiseModel::Uniform,
            NoiseModel::TruncatedGaussian { sigma: 0.5 },
            NoiseModel::TruncatedGaussian { sigma: 1.0 },
        ]
    }

    /// Parses `uniform` or `tgauss:<sigma>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec == "uniform" {
            return Ok(NoiseModel::Uniform);
        }
        if let Some(rest) = spec.strip_prefix("tgauss:") {
            let sigma: f64 = rest
                .parse()
                .map_err(|_| ClubError::Config(format!("bad sigma in noise spec {spec:?}")))?;
            return NoiseModel::truncated_gaussian(sigma)
                .map_err(|e| ClubError::Config(e.to_string()));
        }
        Err(ClubError::Config(format!("unknown noise model {spec:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::Uniform => Ok(()),
            NoiseModel::TruncatedGaussian { sigma } => {
                if sigma.is_finite() && *sigma > 0.0 {
                    Ok(())
                } else {
                    Err(ClubError::InvalidParameter(format!(
                        "truncated gaussian sigma must be positive, got {sigma}"
                    )))
                }
            }
            NoiseModel::PiecewiseLinearCdf { knots } => validate_knots(knots),
            #[cfg(any(test, feature = "testing"))]
            NoiseModel::Zero => Ok(()),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        #[cfg(any(test, feature = "testing"))]
        if let NoiseModel::Zero = self {
            return if x >= 0.0 { 1.0 } else { 0.0 };
        }
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        match self {
            NoiseModel::Uniform => 0.5 * (x + 1.0),
            NoiseModel::TruncatedGaussian { sigma } => {
                let lo = std_normal_cdf(-1.0 / sigma);
                ((std_normal_cdf(x / sigma) - lo) / tg_mass(*sigma)).clamp(0.0, 1.0)
            }
            NoiseModel::PiecewiseLinearCdf { knots } => {
                let j = segment_of(knots, x);
                let [x0, f0] = knots[j];
                let [x1, f1] = knots[j + 1];
                f0 + (f1 - f0) * (x - x0) / (x1 - x0)
            }
            #[cfg(any(test, feature = "testing"))]
            NoiseModel::Zero => unreachable!(),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(x > -1.0 && x < 1.0) {
            return 0.0;
        }
        match self {
            NoiseModel::Uniform => 0.5,
            NoiseModel::TruncatedGaussian { sigma } => {
                (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt() * tg_mass(*sigma))
            }
            NoiseModel::PiecewiseLinearCdf { knots } => {
                let j = segment_of(knots, x);
                let [x0, f0] = knots[j];
                let [x1, f1] = knots[j + 1];
                (f1 - f0) / (x1 - x0)
            }
            #[cfg(any(test, feature = "testing"))]
            NoiseModel::Zero => 0.0,
        }
    }

    /// Generalized inverse `inf { x : F(x) >= p }`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ClubError::Domain {
                value: p,
                domain: "[0, 1]",
            });
        }
        Ok(match self {
            NoiseModel::Uniform => 2.0 * p - 1.0,
            NoiseModel::TruncatedGaussian { .. } => {
                if p == 0.0 {
                    -1.0
                } else if p == 1.0 {
                    1.0
                } else {
                    self.bisect_quantile(p)
                }
            }
            NoiseModel::PiecewiseLinearCdf { knots } => {
                if p == 0.0 {
                    return Ok(-1.0);
                }
                let j = knots
                    .windows(2)
                    .position(|w| w[1][1] >= p)
                    .unwrap_or(knots.len() - 2);
                let [x0, f0] = knots[j];
                let [x1, f1] = knots[j + 1];
                x0 + (p - f0) * (x1 - x0) / (f1 - f0)
            }
            #[cfg(any(test, feature = "testing"))]
            NoiseModel::Zero => 0.0,
        })
    }

    fn bisect_quantile(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = (-1.0, 1.0);
        while hi - lo > QUANTILE_TOL {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseModel::Uniform => 2.0 * rng.random::<f64>() - 1.0,
            NoiseModel::TruncatedGaussian { sigma } => {
                let normal = Normal::new(0.0, *sigma).expect("validated sigma");
                loop {
                    let z: f64 = normal.sample(rng);
                    if (-1.0..=1.0).contains(&z) {
                        return z;
                    }
                }
            }
            NoiseModel::PiecewiseLinearCdf { .. } => {
                let u: f64 = rng.random();
                self.quantile(u).expect("u in [0, 1)")
            }
            #[cfg(any(test, feature = "testing"))]
            NoiseModel::Zero => 0.0,
        }
    }

    /// Lower and upper bounds `(c1, C1)` of the density on (-1, 1).
    pub fn density_bounds(&self) -> (f64, f64) {
        match self {
            NoiseModel::Uniform => (0.5, 0.5),
            NoiseModel::TruncatedGaussian { .. } => (self.pdf(1.0 - 1e-15), self.pdf(0.0)),
            NoiseModel::PiecewiseLinearCdf { knots } => {
                let slopes = knots
                    .windows(2)
                    .map(|w| (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]));
                slopes.fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(s), hi.max(s)))
            }
            #[cfg(any(test, feature = "testing"))]
            NoiseModel::Zero => (0.0, f64::INFINITY),
        }
    }

    /// Mean computed by Gauss–Legendre quadrature of `x f(x)`, split at the
    /// density's breakpoints.
    pub fn mean(&self) -> f64 {
        let breaks: Vec<f64> = match self {
            NoiseModel::PiecewiseLinearCdf { knots } => knots.iter().map(|k| k[0]).collect(),
            #[cfg(any(test, feature = "testing"))]
            NoiseModel::Zero => return 0.0,
            _ => vec![-1.0, 1.0],
        };
        breaks
            .windows(2)
            .map(|w| integrate(|x| x * self.pdf(x), w[0], w[1], 64))
            .sum()
    }

    pub fn label(&self) -> String {
        match self {
            NoiseModel::Uniform => "uniform".into(),
            NoiseModel::TruncatedGaussian { sigma } => format!("tgauss:{sigma}"),
            NoiseModel::PiecewiseLinearCdf { knots } => format!("pwl:{}", knots.len()),
            #[cfg(any(test, feature = "testing"))]
            NoiseModel::Zero => "zero".into(),
        }
    }
}

fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / SQRT_2)
}

fn tg_mass(sigma: f64) -> f64 {
    erf(1.0 / (sigma * SQRT_2))
}

/// Index `j` of the segment `[x_j, x_{j+1})` containing `x` in (-1, 1).
fn segment_of(knots: &[[f64; 2]], x: f64) -> usize {
    let upper = knots.partition_point(|k| k[0] <= x);
    upper.saturating_sub(1).min(knots.len() - 2)
}

fn validate_knots(knots: &[[f64; 2]]) -> Result<()> {
    let bad = |msg: &str| Err(ClubError::InvalidParameter(format!("piecewise cdf: {msg}")));
    if knots.len() < 2 {
        return bad("need at least two knots");
    }
    if knots[0] != [-1.0, 0.0] || knots[knots.len() - 1] != [1.0, 1.0] {
        return bad("must start at (-1, 0) and end at (1, 1)");
    }
    for w in knots.windows(2) {
        if w[1][0] <= w[0][0] {
            return bad("x must be strictly increasing");
        }
        if w[1][1] <= w[0][1] {
            return bad("F must be strictly increasing (density bounded below)");
        }
    }
    let mean: f64 = knots
        .windows(2)
        .map(|w| (w[1][1] - w[0][1]) * 0.5 * (w[0][0] + w[1][0]))
        .sum();
    if mean.abs() > 1e-9 {
        return bad(&format!("mean must be zero, got {mean:e}"));
    }
    Ok(())
}
